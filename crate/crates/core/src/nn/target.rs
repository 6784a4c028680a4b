use alloc::vec::Vec;

use super::DenseNetwork;
use crate::error::Result;

/// Frozen snapshot used for bootstrapped targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCopy {
    snapshot: DenseNetwork,
    staleness: u64,
}

impl TargetCopy {
    pub fn new(net: &DenseNetwork) -> Self {
        Self {
            snapshot: net.clone(),
            staleness: 0,
        }
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.snapshot
    }

    pub fn staleness(&self) -> u64 {
        self.staleness
    }

    /// Count one online gradient step since the last sync.
    pub fn tick(&mut self) {
        self.staleness += 1;
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.snapshot.forward(input)
    }

    /// Sync when `staleness` reached `period`; returns whether it synced.
    pub fn sync_if_due(&mut self, net: &DenseNetwork, period: u64) -> bool {
        if self.staleness >= period {
            sync_target(net, self);
            true
        } else {
            false
        }
    }
}

pub fn sync_target(net: &DenseNetwork, target: &mut TargetCopy) {
    target.snapshot.clone_from(net);
    target.staleness = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{apply_update, OptimizerState};

    #[test]
    fn synced_copy_matches_and_then_stays_frozen() {
        let mut net = DenseNetwork::new(&[2, 4, 1], 3).unwrap();
        let mut target = TargetCopy::new(&DenseNetwork::new(&[2, 4, 1], 99).unwrap());
        target.tick();
        sync_target(&net, &mut target);
        assert_eq!(target.staleness(), 0);
        let x = [0.3, -0.7];
        assert_eq!(net.forward(&x).unwrap(), target.forward(&x).unwrap());

        let frozen = target.forward(&x).unwrap();
        let mut opt = OptimizerState::sgd(0.5, net.n_params());
        let g = net.backward(&x, &[1.0]).unwrap();
        apply_update(&mut net, &mut opt, &g).unwrap();
        assert_ne!(net.forward(&x).unwrap(), frozen);
        assert_eq!(target.forward(&x).unwrap(), frozen);
    }

    #[test]
    fn sync_if_due_respects_period() {
        let net = DenseNetwork::new(&[1, 1], 0).unwrap();
        let mut target = TargetCopy::new(&net);
        for _ in 0..199 {
            target.tick();
        }
        assert!(!target.sync_if_due(&net, 200));
        target.tick();
        assert!(target.sync_if_due(&net, 200));
        assert_eq!(target.staleness(), 0);
    }
}
