#![no_main]

use edgekt::workload::idx::{dataset_from_bytes, parse_images, parse_labels};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_images(data);
    let _ = parse_labels(data);
    if data.len() > 2 {
        let split = data[0] as usize % data.len();
        let _ = dataset_from_bytes(&data[1..split.max(1)], &data[split.max(1)..]);
    }
});
