#![no_main]

use libfuzzer_sys::fuzz_target;

// Accepted detection records carry only finite values, so writing them
// back out and re-reading must succeed and preserve the count.
fuzz_target!(|data: &[u8]| {
    if let Ok(records) = hvt::decoder::read_detections_jsonl(data) {
        let mut buf = Vec::new();
        hvt::decoder::write_detections_jsonl(&mut buf, &records).expect("finite records serialize");
        let back = hvt::decoder::read_detections_jsonl(buf.as_slice()).expect("round-trip");
        assert_eq!(back.len(), records.len());
    }
});
