//! Fixed instances shared by the benchmarks.

use bmpursuit::model::{gibbs_sample_supports, sample_dataset, GibbsConfig};
use bmpursuit::synthetic::SyntheticSetup;
use bmpursuit::{SignalModel, SupportPattern};
use nalgebra::DVector;

/// A model from `setup` at noise level `sigma` and `count` noisy signals
/// drawn from it.
pub fn signals(setup: &SyntheticSetup, sigma: f64, count: usize, seed: u64) -> (SignalModel, Vec<DVector<f64>>) {
    let model = setup.model(sigma, seed).expect("valid setup");
    let data = sample_dataset(&model, count, &GibbsConfig::default(), seed + 1).expect("sampling");
    (model, data.into_iter().map(|s| s.signal).collect())
}

/// Supports Gibbs-sampled from a `m`-atom banded model.
pub fn supports(m: usize, band: usize, count: usize, seed: u64) -> Vec<SupportPattern> {
    let setup = SyntheticSetup {
        weight_range: (-0.5, 0.5),
        bias_range: (-2.5, -0.5),
        ..SyntheticSetup::small_unitary(m, band)
    };
    let model = setup.model(1.0, seed).expect("valid setup");
    gibbs_sample_supports(model.prior(), count, &GibbsConfig::default(), seed + 1).expect("sampling")
}
