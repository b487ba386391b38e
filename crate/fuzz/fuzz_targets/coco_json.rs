#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;

// Annotation files are untrusted: parsing either fails cleanly or yields a
// validated set whose derived views hold their invariants.
fuzz_target!(|data: &[u8]| {
    if let Ok(set) = hvt::dataset::CocoDataset::from_slice(data) {
        let ids: BTreeSet<i64> = set.images.iter().map(|im| im.id).collect();
        let sub = set.subset(&ids);
        assert_eq!(sub.images.len(), set.images.len());
        assert_eq!(sub.annotations.len(), set.annotations.len());
        let stats = hvt::dataset::compute_stats(&set, None);
        assert_eq!(stats.image_count, set.images.len());
    }
});
