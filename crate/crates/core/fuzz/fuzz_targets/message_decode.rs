#![no_main]

use edgekt::collab::{
    FlGlobalModel, FlModelUpdate, HelpRefusal, HelpRequest, HelperList, MessageKind, NodeMetadata,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = NodeMetadata::decode(data);
    let _ = HelpRequest::decode(data, MessageKind::HelpQuery);
    if let Ok(r) = HelpRequest::decode(data, MessageKind::HelpRequest) {
        assert_eq!(HelpRequest::decode(&r.encode(MessageKind::HelpRequest), MessageKind::HelpRequest).unwrap(), r);
    }
    if let Ok(l) = HelperList::decode(data) {
        assert_eq!(HelperList::decode(&l.encode()).unwrap(), l);
    }
    let _ = HelpRefusal::decode(data);
    if let Ok(u) = FlModelUpdate::decode(data) {
        assert_eq!(u.encode(), data);
    }
    let _ = FlGlobalModel::decode(data);
});
