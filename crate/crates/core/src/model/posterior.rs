use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{quadratic_form_score, SignalModel, SparseRepresentation, SupportPattern};
use crate::error::{check_dim, Error, Result};

/// Largest `m` for which the `2^m` enumerations will run.
pub const EXHAUSTIVE_MAX_ATOMS: usize = 20;

/// A signal paired with the model it is scored under; caches `Aᵀy`.
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    model: &'a SignalModel,
    signal: &'a DVector<f64>,
    aty: DVector<f64>,
}

impl<'a> Observation<'a> {
    pub fn new(model: &'a SignalModel, signal: &'a DVector<f64>) -> Result<Self> {
        check_dim("signal", model.signal_dim(), signal.len())?;
        let aty = model.dictionary().tr_mul(signal);
        Ok(Self { model, signal, aty })
    }

    pub fn model(&self) -> &'a SignalModel {
        self.model
    }

    pub fn signal(&self) -> &'a DVector<f64> {
        self.signal
    }

    /// `Aᵀy`.
    pub fn aty(&self) -> &DVector<f64> {
        &self.aty
    }

    /// `v_i = ln(σ²_{x,i} / σ_e²)`.
    pub fn log_snr(&self, i: usize) -> f64 {
        (self.model.coef_vars()[i] / self.model.noise_var()).ln()
    }

    /// Support-prior part of the score: `½SᵀWS + (b - v/4)ᵀS`.
    pub fn prior_term(&self, support: &SupportPattern) -> f64 {
        let prior = self.model.prior();
        let m = prior.dim();
        let linear = DVector::from_fn(m, |i, _| prior.bias()[i] - 0.25 * self.log_snr(i));
        quadratic_form_score(prior.weights(), &linear, support.spins())
    }

    /// Builds and factors `Q_s` from scratch.
    fn factor(&self, support: &SupportPattern) -> Result<(Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
        let idx = support.indices();
        let k = idx.len();
        let gram = self.model.gram();
        let vars = self.model.coef_vars();
        let noise_var = self.model.noise_var();
        let q = DMatrix::from_fn(k, k, |r, c| {
            let g = gram[(idx[r], idx[c])];
            if r == c {
                g + noise_var / vars[idx[r]]
            } else {
                g
            }
        });
        let rhs = DVector::from_fn(k, |r, _| self.aty[idx[r]]);
        let chol = Cholesky::new(q)
            .ok_or_else(|| Error::Numeric("Q_s is not numerically positive definite".into()))?;
        Ok((chol, rhs))
    }

    /// Log posterior of a support up to a `y`-dependent constant.
    pub fn score(&self, support: &SupportPattern) -> Result<f64> {
        check_dim("support", self.model.atoms(), support.dim())?;
        let prior = self.prior_term(support);
        if support.is_empty() {
            return Ok(prior);
        }
        let (chol, rhs) = self.factor(support)?;
        let sol = chol.solve(&rhs);
        let data = rhs.dot(&sol);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(data / (2.0 * self.model.noise_var()) - 0.5 * log_det + prior)
    }

    /// `x̂_s = Q_s⁻¹ A_sᵀ y`, zero elsewhere.
    pub fn oracle(&self, support: &SupportPattern) -> Result<SparseRepresentation> {
        check_dim("support", self.model.atoms(), support.dim())?;
        let m = self.model.atoms();
        let mut coeffs = DVector::zeros(m);
        if !support.is_empty() {
            let (chol, rhs) = self.factor(support)?;
            let sol = chol.solve(&rhs);
            for (r, &i) in support.indices().iter().enumerate() {
                coeffs[i] = sol[r];
            }
        }
        SparseRepresentation::new(coeffs, support.clone())
    }
}

/// Log posterior score of a support for signal `y`:
/// `(1/2σ_e²) yᵀA_sQ_s⁻¹A_sᵀy - ½ ln det Q_s + ½SᵀWS + (b - v/4)ᵀS`.
///
/// Only differences between supports at the same `y` are meaningful. For the
/// empty support the first two terms are absent.
pub fn log_posterior_support_score(
    model: &SignalModel,
    y: &DVector<f64>,
    support: &SupportPattern,
) -> Result<f64> {
    Observation::new(model, y)?.score(support)
}

/// Posterior-mean coefficients given the support.
pub fn oracle_coefficients(
    model: &SignalModel,
    y: &DVector<f64>,
    support: &SupportPattern,
) -> Result<SparseRepresentation> {
    Observation::new(model, y)?.oracle(support)
}

/// Bias `q` of the posterior Boltzmann machine for a unitary dictionary:
/// `Pr(S|y) ∝ exp(qᵀS + ½SᵀWS)`.
pub fn posterior_bias(model: &SignalModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    if !model.is_unitary() {
        return Err(Error::precondition("posterior bias requires a unitary dictionary"));
    }
    check_dim("signal", model.signal_dim(), y.len())?;
    let aty = model.dictionary().tr_mul(y);
    let noise_var = model.noise_var();
    let bias = model.prior().bias();
    Ok(DVector::from_fn(model.atoms(), |i, _| {
        let var = model.coef_vars()[i];
        let gain = var / (noise_var * (noise_var + var));
        bias[i] + 0.25 * (gain * aty[i] * aty[i] - (var / noise_var).ln_1p())
    }))
}

fn enumeration_guard(m: usize) -> Result<()> {
    if m > EXHAUSTIVE_MAX_ATOMS {
        Err(Error::TooLarge {
            m,
            max: EXHAUSTIVE_MAX_ATOMS,
        })
    } else {
        Ok(())
    }
}

/// Exact MAP support by scoring all `2^m` supports. Ties go to the smaller
/// support, then to the lexicographically smaller spin vector.
pub fn exhaustive_map(model: &SignalModel, y: &DVector<f64>) -> Result<SupportPattern> {
    let m = model.atoms();
    enumeration_guard(m)?;
    let obs = Observation::new(model, y)?;
    let mut best: Option<(f64, SupportPattern)> = None;
    for mask in 0..(1u64 << m) {
        let s = SupportPattern::from_mask(m, mask);
        let score = obs.score(&s)?;
        let better = match &best {
            None => true,
            Some((b, bs)) => match score.partial_cmp(b) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => s.tie_order(bs) == Ordering::Less,
                _ => false,
            },
        };
        if better {
            best = Some((score, s));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or_else(|| SupportPattern::empty(m)))
}

/// Exact MMSE estimate `Σ_s Pr(s|y) E[x|y,s]` by enumeration.
pub fn exhaustive_mmse(model: &SignalModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    let m = model.atoms();
    enumeration_guard(m)?;
    let obs = Observation::new(model, y)?;
    let supports: Vec<SupportPattern> = (0..(1u64 << m))
        .map(|mask| SupportPattern::from_mask(m, mask))
        .collect();
    let scores = supports
        .iter()
        .map(|s| obs.score(s))
        .collect::<Result<Vec<_>>>()?;
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut mean = DVector::zeros(m);
    for (s, score) in supports.iter().zip(&scores) {
        let weight = (score - top).exp();
        total += weight;
        if !s.is_empty() {
            mean += obs.oracle(s)?.coeffs() * weight;
        }
    }
    Ok(mean / total)
}
