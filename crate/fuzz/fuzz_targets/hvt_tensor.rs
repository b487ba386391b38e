#![no_main]

use libfuzzer_sys::fuzz_target;

// The binary tensor reader must reject malformed input with an error, never
// a panic or oversized allocation, and anything it accepts must re-export
// with the same shape.
fuzz_target!(|data: &[u8]| {
    if let Ok(t) = hvt::tensor::Tensor::from_bytes(data) {
        let bytes = t.to_bytes();
        let back = hvt::tensor::Tensor::from_bytes(&bytes).expect("re-export parses");
        assert_eq!(back.dims(), t.dims());
        assert_eq!(back.data().len(), t.data().len());
    }
});
