#![no_main]

use edgekt::sensitivity::SignificantParamPayload;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = SignificantParamPayload::decode(data) {
        let again = p.encode().expect("decoded payload re-encodes");
        assert_eq!(again.len(), p.encoded_len());
        assert_eq!(SignificantParamPayload::decode(&again).unwrap(), p);
    }
});
