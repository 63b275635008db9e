use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoltzmannParams, LabeledSample, SignalModel, SparseRepresentation, SupportPattern};
use crate::error::{check_dim, Error, Result};
use crate::rng::{gaussian, rng_from_seed, stream_rng};

/// Chain settings for the support sampler, in sweeps. A sweep visits every
/// site once in ascending order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 100,
            thin: 5,
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn sweep<R: Rng + ?Sized>(prior: &BoltzmannParams, spins: &mut [i8], rng: &mut R) {
    for i in 0..spins.len() {
        // The field excludes S_i itself because the diagonal of W is zero.
        let field = prior.local_field(i, spins);
        let p_on = logistic(2.0 * field);
        spins[i] = if rng.random::<f64>() < p_on { 1 } else { -1 };
    }
}

/// Draws `count` supports from a single Gibbs chain started at the empty
/// support. Site `i` is switched on with probability
/// `1 / (1 + exp(-2(W_iᵀS + b_i)))`.
pub fn gibbs_sample_supports(
    prior: &BoltzmannParams,
    count: usize,
    config: &GibbsConfig,
    seed: u64,
) -> Result<Vec<SupportPattern>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    if config.thin == 0 {
        return Err(Error::invalid("thinning interval must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut spins = vec![-1i8; prior.dim()];
    for _ in 0..config.burn_in {
        sweep(prior, &mut spins, &mut rng);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..config.thin {
            sweep(prior, &mut spins, &mut rng);
        }
        out.push(SupportPattern::from_spins(&spins)?);
    }
    Ok(out)
}

/// Draws `x_s ~ N(0, Σ_s)` and `y = Ax + e`, `e ~ N(0, σ_e² I)`.
pub fn sample_signal(model: &SignalModel, support: &SupportPattern, seed: u64) -> Result<LabeledSample> {
    check_dim("support", model.atoms(), support.dim())?;
    let mut rng = rng_from_seed(seed);
    let mut coeffs = DVector::zeros(model.atoms());
    for &i in support.indices() {
        coeffs[i] = model.coef_vars()[i].sqrt() * gaussian(&mut rng);
    }
    let clean = model.dictionary() * &coeffs;
    let noise_std = model.noise_std();
    let signal = DVector::from_fn(model.signal_dim(), |r, _| clean[r] + noise_std * gaussian(&mut rng));
    Ok(LabeledSample {
        signal,
        representation: SparseRepresentation::new(coeffs, support.clone())?,
        clean_signal: Some(clean),
    })
}

/// `count` labeled samples: supports from one Gibbs chain, signal `l` from
/// its own seed stream so the output does not depend on thread count.
pub fn sample_dataset(
    model: &SignalModel,
    count: usize,
    gibbs: &GibbsConfig,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let supports = gibbs_sample_supports(model.prior(), count, gibbs, seed)?;
    supports
        .par_iter()
        .enumerate()
        .map(|(l, s)| {
            let signal_seed: u64 = stream_rng(seed, 1 + l as u64).random();
            sample_signal(model, s, signal_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn marginals(supports: &[SupportPattern]) -> Vec<f64> {
        let m = supports[0].dim();
        let mut counts = vec![0usize; m];
        for s in supports {
            for &i in s.indices() {
                counts[i] += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / supports.len() as f64).collect()
    }

    #[test]
    fn independent_marginals_match_logistic_bias() {
        let prior = BoltzmannParams::independent(DVector::from_element(4, -1.5)).unwrap();
        let cfg = GibbsConfig { burn_in: 10, thin: 1 };
        let s = gibbs_sample_supports(&prior, 50_000, &cfg, 3).unwrap();
        let expected = 1.0 / (1.0 + 3f64.exp());
        assert!((expected - 0.04743).abs() < 1e-5);
        for p in marginals(&s) {
            assert!((p - expected).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn unbiased_marginals_are_half() {
        let prior = BoltzmannParams::independent(DVector::zeros(3)).unwrap();
        let s = gibbs_sample_supports(&prior, 50_000, &GibbsConfig { burn_in: 5, thin: 1 }, 4).unwrap();
        for p in marginals(&s) {
            assert!((p - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn pair_conditionals() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let prior = BoltzmannParams::new(w, DVector::zeros(2)).unwrap();
        let s = gibbs_sample_supports(&prior, 100_000, &GibbsConfig { burn_in: 10, thin: 1 }, 5).unwrap();
        let (mut on_on, mut on, mut off_on, mut off) = (0.0, 0.0, 0.0, 0.0);
        for p in &s {
            if p.is_active(1) {
                on += 1.0;
                if p.is_active(0) {
                    on_on += 1.0;
                }
            } else {
                off += 1.0;
                if p.is_active(0) {
                    off_on += 1.0;
                }
            }
        }
        assert!((on_on / on - 1.0 / (1.0 + (-1f64).exp())).abs() < 0.02);
        assert!((off_on / off - 1.0 / (1.0 + 1f64.exp())).abs() < 0.02);
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let prior = BoltzmannParams::independent(DVector::from_element(6, -0.7)).unwrap();
        let cfg = GibbsConfig::default();
        let a = gibbs_sample_supports(&prior, 20, &cfg, 77).unwrap();
        let b = gibbs_sample_supports(&prior, 20, &cfg, 77).unwrap();
        assert_eq!(a, b);
        assert!(gibbs_sample_supports(&prior, 0, &cfg, 1).is_err());
        assert!(gibbs_sample_supports(&prior, 1, &GibbsConfig { burn_in: 0, thin: 0 }, 1).is_err());
    }

    fn toy_model(noise: f64) -> SignalModel {
        let a = DMatrix::from_row_slice(3, 4, &[
            1.0, 0.0, 0.5, 0.2, //
            0.0, 1.0, 0.5, -0.4, //
            0.0, 0.0, 0.7, 0.9,
        ]);
        let prior = BoltzmannParams::independent(DVector::from_element(4, -1.0)).unwrap();
        SignalModel::new(a, DVector::from_vec(vec![4.0, 1.0, 9.0, 2.25]), noise, prior).unwrap()
    }

    #[test]
    fn empty_support_gives_pure_noise() {
        let model = toy_model(1.5);
        let empty = SupportPattern::empty(4);
        let mut sum_sq = 0.0;
        let draws = 40_000;
        for seed in 0..draws {
            let sample = sample_signal(&model, &empty, seed).unwrap();
            assert!(sample.representation.coeffs().iter().all(|&c| c == 0.0));
            sum_sq += sample.signal.norm_squared();
        }
        let var = sum_sq / (draws as f64 * 3.0);
        assert!((var / 2.25 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn noiseless_singleton_is_scaled_atom() {
        let model = toy_model(1e-9);
        let s = SupportPattern::from_indices(4, &[2]).unwrap();
        let sample = sample_signal(&model, &s, 5).unwrap();
        let x = sample.representation.coeffs()[2];
        let expected = model.dictionary().column(2) * x;
        assert!((sample.signal - expected).amax() < 1e-7);
    }

    #[test]
    fn signal_covariance_matches_model() {
        let model = toy_model(0.8);
        let s = SupportPattern::from_indices(4, &[0, 2, 3]).unwrap();
        let draws = 100_000u64;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for seed in 0..draws {
            let y = sample_signal(&model, &s, seed).unwrap().signal;
            cov += &y * y.transpose();
        }
        cov /= draws as f64;
        let mut expected = DMatrix::identity(3, 3) * model.noise_var();
        for &i in s.indices() {
            let a = model.dictionary().column(i);
            expected += a * a.transpose() * model.coef_vars()[i];
        }
        for r in 0..3 {
            for c in 0..3 {
                let scale = (expected[(r, r)] * expected[(c, c)]).sqrt();
                assert!(
                    (cov[(r, c)] - expected[(r, c)]).abs() < 0.03 * scale,
                    "entry ({r},{c}): {} vs {}",
                    cov[(r, c)],
                    expected[(r, c)]
                );
            }
        }
    }

    #[test]
    fn dataset_is_reproducible() {
        let model = toy_model(0.5);
        let a = sample_dataset(&model, 30, &GibbsConfig::default(), 42).unwrap();
        let b = sample_dataset(&model, 30, &GibbsConfig::default(), 42).unwrap();
        assert_eq!(a, b);
    }
}
