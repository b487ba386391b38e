#![no_main]

use libfuzzer_sys::fuzz_target;

// Field documents are cross-checked against a rebuild on import, so an
// accepted document is internally consistent and must round-trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(field) = hvt::field::VoteField::from_json_str(text) {
        let again = hvt::field::VoteField::from_json_str(&field.to_json()).expect("round-trip");
        assert_eq!(again.region_count(), field.region_count());
        assert_eq!(again.field_size(), field.field_size());
    }
});
