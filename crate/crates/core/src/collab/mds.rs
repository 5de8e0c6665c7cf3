use std::collections::BTreeMap;

use super::messages::{HelpRequest, NodeMetadata};

/// Latest metadata reported by each node.
#[derive(Debug, Clone, Default)]
pub struct MetadataService {
    registry: BTreeMap<u16, NodeMetadata>,
}

impl MetadataService {
    pub fn new() -> Self {
        MetadataService::default()
    }

    /// Keeps the newest report per node; stale batches are ignored.
    pub fn update(&mut self, meta: NodeMetadata) {
        match self.registry.get(&meta.node_id) {
            Some(old) if old.batch_id > meta.batch_id => {}
            _ => {
                self.registry.insert(meta.node_id, meta);
            }
        }
    }

    pub fn get(&self, node: u16) -> Option<&NodeMetadata> {
        self.registry.get(&node)
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    pub fn rank(&self, request: &HelpRequest) -> Vec<u16> {
        rank_helpers(self.registry.values(), request)
    }
}

/// Candidates that have seen every requested class, best first: lowest mean
/// error on those classes, then most prior mass on them, then lowest id.
pub fn rank_helpers<'a>(registry: impl IntoIterator<Item = &'a NodeMetadata>, request: &HelpRequest) -> Vec<u16> {
    let mut scored: Vec<(f64, f64, u16)> = registry
        .into_iter()
        .filter(|m| m.node_id != request.target_node)
        .filter(|m| {
            request
                .classes
                .iter()
                .all(|&c| m.class_priors.get(c).is_some_and(|&p| p > 0.0))
        })
        .map(|m| {
            let k = request.classes.len() as f64;
            let err = request.classes.iter().map(|&c| m.class_error[c]).sum::<f64>() / k;
            let mass = request.classes.iter().map(|&c| m.class_priors[c]).sum::<f64>();
            (err, mass, m.node_id)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    scored.into_iter().map(|(_, _, id)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::ZPercent;

    fn meta(node: u16, priors: &[f64], errors: &[f64]) -> NodeMetadata {
        NodeMetadata {
            node_id: node,
            batch_id: 0,
            class_priors: priors.to_vec(),
            class_error: errors.to_vec(),
            overall_error: 0.0,
        }
    }

    fn req(target: u16, classes: &[usize]) -> HelpRequest {
        HelpRequest {
            target_node: target,
            classes: classes.to_vec(),
            z: ZPercent::from_percent(50.0).unwrap(),
        }
    }

    #[test]
    fn lower_error_ranks_first() {
        let a = meta(4, &[0.5, 0.5], &[0.0, 0.1]);
        let b = meta(1, &[0.5, 0.5], &[0.0, 0.4]);
        assert_eq!(rank_helpers([&b, &a], &req(0, &[1])), vec![4, 1]);
    }

    #[test]
    fn prior_mass_breaks_ties_then_id() {
        let a = meta(3, &[0.7, 0.3], &[0.0, 0.2]);
        let b = meta(2, &[0.9, 0.1], &[0.0, 0.2]);
        let c = meta(5, &[0.9, 0.1], &[0.0, 0.2]);
        assert_eq!(rank_helpers([&c, &b, &a], &req(0, &[1])), vec![3, 2, 5]);
    }

    #[test]
    fn coverage_filter_and_target_exclusion() {
        let mut mds = MetadataService::new();
        let mut p = vec![0.125; 8];
        p[7] = 0.0;
        let mut q = p.clone();
        q[7] = 0.125;
        q[0] = 0.0;
        mds.update(meta(0, &q, &[0.0; 8]));
        mds.update(meta(1, &p, &[0.0; 8]));
        mds.update(meta(2, &q, &[0.9; 8]));
        mds.update(meta(3, &p, &[0.0; 8]));
        assert_eq!(mds.rank(&req(0, &[7])), vec![2]);
        assert!(mds.rank(&req(2, &[0, 7])).is_empty());
    }

    #[test]
    fn stale_reports_are_ignored() {
        let mut mds = MetadataService::new();
        let mut m = meta(1, &[1.0], &[0.5]);
        m.batch_id = 9;
        mds.update(m.clone());
        m.batch_id = 3;
        m.class_error = vec![0.0];
        mds.update(m);
        assert_eq!(mds.get(1).unwrap().class_error, vec![0.5]);
    }
}
