#![no_main]

use edgekt::collab::ByteLedger;
use edgekt::harness::read_metrics_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ledger) = ByteLedger::read_csv(data) {
        let mut out = Vec::new();
        ledger.write_csv(&mut out).unwrap();
        assert_eq!(ByteLedger::read_csv(&out[..]).unwrap(), ledger);
    }
    let _ = read_metrics_csv(data);
});
