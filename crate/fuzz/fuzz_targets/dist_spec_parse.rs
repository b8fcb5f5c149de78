#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(spec) = distprobe::synth::parse_dist_spec("fuzz", s) {
            // anything that parses must also validate and report a shape
            spec.validate().expect("parsed spec must validate");
            let _ = spec.sample_shape();
        }
    }
});
