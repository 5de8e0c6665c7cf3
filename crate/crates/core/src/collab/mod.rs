//! Drift detection, the metadata service, and the message bus nodes use to
//! find and fetch help.

mod bus;
mod drift;
mod mds;
pub mod messages;

pub use bus::{Bus, BusMessage, ByteLedger, Endpoint, LedgerRecord, Traffic};
pub use drift::{detect_drift, DriftParams, DriftState};
pub use mds::{rank_helpers, MetadataService};
pub use messages::{
    FlGlobalModel, FlModelUpdate, HelpRefusal, HelpRequest, HelperList, MessageKind, NodeMetadata, RefusalReason,
};

use crate::error::Result;
use crate::nn::Model;
use crate::sensitivity::{build_payload, SensitivitySource, SignificantParamPayload};

/// Builds the payload a helper node returns for `request`. Reads `source`
/// and `model` only.
pub fn serve_help(model: &Model, source: &SensitivitySource, request: &HelpRequest) -> Result<SignificantParamPayload> {
    build_payload(source, model, &request.classes, request.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::{Batch, Tensor};
    use crate::sensitivity::{Reservoir, SensitivityMap, ZPercent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn continuous_and_on_demand_serve_identical_bytes() {
        let model = Model::init(&[4, 6, 3], &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let inputs = Tensor::matrix(2, 4, vec![0.1, -0.4, 0.9, 0.3, -0.7, 0.2, 0.5, 0.0]).unwrap();
        let batch = Batch::new(inputs, vec![2, 0]).unwrap();
        let mut cont = SensitivitySource::Continuous(SensitivityMap::for_model(&model));
        let mut lazy = SensitivitySource::OnDemand(Reservoir::new(1).unwrap());
        cont.observe(&model, &batch).unwrap();
        lazy.observe(&model, &batch).unwrap();
        let req = HelpRequest {
            target_node: 0,
            classes: vec![2, 1],
            z: ZPercent::from_percent(50.0).unwrap(),
        };
        let a = serve_help(&model, &cont, &req).unwrap().encode().unwrap();
        let b = serve_help(&model, &lazy, &req).unwrap().encode().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_reservoir_reports_no_data() {
        let model = Model::init(&[2, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let src = SensitivitySource::OnDemand(Reservoir::new(1).unwrap());
        let req = HelpRequest {
            target_node: 1,
            classes: vec![0],
            z: ZPercent::from_percent(50.0).unwrap(),
        };
        assert!(matches!(serve_help(&model, &src, &req), Err(Error::NoData)));
    }
}
