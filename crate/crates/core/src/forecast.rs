use crate::state::{Instance, Trajectory};

/// Anything that produces a most-likely future for an instance.
pub trait Forecaster: Sync {
    fn name(&self) -> &str;

    fn predict_ml(&self, inst: &Instance) -> Trajectory;

    fn predict_ml_batch(&self, insts: &[&Instance]) -> Vec<Trajectory> {
        insts.iter().map(|i| self.predict_ml(i)).collect()
    }

    /// Draws `n` trajectories from the full predicted distribution, or `None`
    /// when the forecaster is deterministic. Implementations must be a pure
    /// function of `(inst, n, seed)`.
    fn sample(&self, _inst: &Instance, _n: usize, _seed: u64) -> Option<Vec<Trajectory>> {
        None
    }
}
