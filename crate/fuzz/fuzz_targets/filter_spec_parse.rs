#![no_main]

use distprobe::spectral::{parse_filter_spec, MaskShape};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        for shape in [MaskShape::Rectangular, MaskShape::Circular] {
            if let Ok(spec) = parse_filter_spec(s, shape) {
                // a spec that parses must produce a mask on a small grid
                let _ = distprobe::spectral::make_mask(&spec, 8, 8);
            }
        }
    }
});
