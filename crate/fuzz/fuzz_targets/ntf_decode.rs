#![no_main]

use libfuzzer_sys::fuzz_target;

// The decoder must reject arbitrary bytes gracefully: no panics, no
// unbounded allocations. A successful decode must round-trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(tensor) = distprobe::imaging::ntf::decode(data) {
        let encoded = distprobe::imaging::ntf::encode(&tensor);
        let again = distprobe::imaging::ntf::decode(&encoded).expect("re-decode of valid encode");
        assert_eq!(tensor.shape(), again.shape());
    }
});
