//! The Boltzmann-machine generative model for sparse signals.
//!
//! A support pattern `S ∈ {-1,+1}^m` is drawn from a Boltzmann machine with
//! interactions `W` and biases `b`, the active coefficients are independent
//! zero-mean Gaussians with per-atom variances, and the observed signal is
//! `y = A x + e` with white Gaussian noise of known level.

mod posterior;
mod sampling;

pub use posterior::{
    exhaustive_map, exhaustive_mmse, log_posterior_support_score, oracle_coefficients,
    posterior_bias, Observation, EXHAUSTIVE_MAX_ATOMS,
};
pub(crate) use sampling::logistic;
pub use sampling::{gibbs_sample_supports, sample_dataset, sample_signal, GibbsConfig};

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Tolerance on `max |AᵀA - I|` for a dictionary to count as unitary.
pub const UNITARY_TOL: f64 = 1e-10;

/// Interaction matrix and bias vector of a Boltzmann machine prior.
///
/// The matrix is exactly symmetric with a zero diagonal. Densities are only
/// ever handled up to the log partition function.
#[derive(Clone, Debug, PartialEq)]
pub struct BoltzmannParams {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl BoltzmannParams {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let m = bias.len();
        check_dim("interaction rows", m, weights.nrows())?;
        check_dim("interaction columns", m, weights.ncols())?;
        for i in 0..m {
            if weights[(i, i)] != 0.0 {
                return Err(Error::invalid(format!(
                    "interaction diagonal entry {i} is {} (must be zero)",
                    weights[(i, i)]
                )));
            }
            for j in (i + 1)..m {
                if weights[(i, j)] != weights[(j, i)] {
                    return Err(Error::invalid(format!(
                        "interaction matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Boltzmann parameter"));
        }
        Ok(Self { weights, bias })
    }

    /// Independent sites, `W = 0`.
    pub fn independent(bias: DVector<f64>) -> Result<Self> {
        let m = bias.len();
        Self::new(DMatrix::zeros(m, m), bias)
    }

    /// I.i.d. prior with `Pr(S_i = 1) = p` for every site.
    pub fn iid(m: usize, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("activation probability {p} outside (0, 1)")));
        }
        Self::independent(DVector::from_element(m, 0.5 * (p / (1.0 - p)).ln()))
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn is_independent(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// `bᵀS + ½ SᵀWS`.
    pub fn log_score(&self, support: &SupportPattern) -> Result<f64> {
        check_dim("support", self.dim(), support.dim())?;
        Ok(quadratic_form_score(&self.weights, &self.bias, support.spins()))
    }

    /// `W_iᵀS + b_i`, the field felt by site `i`.
    pub(crate) fn local_field(&self, i: usize, spins: &[i8]) -> f64 {
        let col = self.weights.column(i);
        let mut field = self.bias[i];
        for (w, &s) in col.iter().zip(spins) {
            field += w * f64::from(s);
        }
        field
    }

    /// Relabel sites so that new site `k` is old site `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.dim())?;
        let m = self.dim();
        let weights = DMatrix::from_fn(m, m, |i, j| self.weights[(perm[i], perm[j])]);
        let bias = DVector::from_fn(m, |i, _| self.bias[perm[i]]);
        Self::new(weights, bias)
    }
}

/// `hᵀS + ½ SᵀWS` for a symmetric zero-diagonal `W`.
pub(crate) fn quadratic_form_score(weights: &DMatrix<f64>, linear: &DVector<f64>, spins: &[i8]) -> f64 {
    let m = spins.len();
    let mut score = 0.0;
    for j in 0..m {
        let sj = f64::from(spins[j]);
        score += linear[j] * sj;
        let col = weights.column(j);
        let mut acc = 0.0;
        for i in 0..j {
            acc += col[i] * f64::from(spins[i]);
        }
        score += acc * sj;
    }
    score
}

pub(crate) fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    check_dim("permutation", m, perm.len())?;
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(Error::invalid("not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// A sparsity pattern, held both as a spin vector and as its sorted index set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SupportPattern {
    spins: Vec<i8>,
    indices: Vec<usize>,
}

impl SupportPattern {
    pub fn empty(m: usize) -> Self {
        Self {
            spins: vec![-1; m],
            indices: Vec::new(),
        }
    }

    pub fn full(m: usize) -> Self {
        Self {
            spins: vec![1; m],
            indices: (0..m).collect(),
        }
    }

    /// Any order is accepted; duplicates and out-of-range entries are not.
    pub fn from_indices(m: usize, indices: &[usize]) -> Result<Self> {
        let mut spins = vec![-1i8; m];
        for &i in indices {
            if i >= m {
                return Err(Error::invalid(format!("atom index {i} out of range for m = {m}")));
            }
            if spins[i] == 1 {
                return Err(Error::invalid(format!("atom index {i} repeated")));
            }
            spins[i] = 1;
        }
        Ok(Self::from_valid_spins(spins))
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!("spin value {bad} is not ±1")));
        }
        Ok(Self::from_valid_spins(spins.to_vec()))
    }

    /// Bit `i` of `mask` switches atom `i` on.
    pub fn from_mask(m: usize, mask: u64) -> Self {
        debug_assert!(m <= 64);
        let spins = (0..m)
            .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
            .collect();
        Self::from_valid_spins(spins)
    }

    fn from_valid_spins(spins: Vec<i8>) -> Self {
        let indices = spins
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == 1).then_some(i))
            .collect();
        Self { spins, indices }
    }

    pub fn dim(&self) -> usize {
        self.spins.len()
    }

    pub fn cardinality(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.spins[i] == 1
    }

    /// Copy with atom `i` switched on.
    pub fn with_atom(&self, i: usize) -> Self {
        let mut spins = self.spins.clone();
        spins[i] = 1;
        Self::from_valid_spins(spins)
    }

    pub fn intersection_size(&self, other: &SupportPattern) -> usize {
        self.spins
            .iter()
            .zip(&other.spins)
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_valid_spins(perm.iter().map(|&p| self.spins[p]).collect())
    }

    /// Deterministic tie-break order: fewer active atoms first, then
    /// lexicographic on the spin vector.
    pub(crate) fn tie_order(&self, other: &Self) -> Ordering {
        self.cardinality()
            .cmp(&other.cardinality())
            .then_with(|| self.spins.cmp(&other.spins))
    }
}

/// A coefficient vector together with its support. Off-support entries are
/// exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRepresentation {
    coeffs: DVector<f64>,
    support: SupportPattern,
}

impl SparseRepresentation {
    pub fn new(coeffs: DVector<f64>, support: SupportPattern) -> Result<Self> {
        check_dim("coefficients", support.dim(), coeffs.len())?;
        for (i, c) in coeffs.iter().enumerate() {
            if !support.is_active(i) && *c != 0.0 {
                return Err(Error::invalid(format!(
                    "coefficient {i} is {c} but atom {i} is off the support"
                )));
            }
        }
        Ok(Self { coeffs, support })
    }

    pub fn zero(m: usize) -> Self {
        Self {
            coeffs: DVector::zeros(m),
            support: SupportPattern::empty(m),
        }
    }

    /// A dense estimate (e.g. a posterior mean) paired with the full support.
    pub fn dense(coeffs: DVector<f64>) -> Self {
        let support = SupportPattern::full(coeffs.len());
        Self { coeffs, support }
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn support(&self) -> &SupportPattern {
        &self.support
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            coeffs: DVector::from_fn(perm.len(), |i, _| self.coeffs[perm[i]]),
            support: self.support.permuted(perm),
        }
    }
}

/// Dictionary, coefficient variances, noise level and support prior.
#[derive(Clone, Debug)]
pub struct SignalModel {
    dictionary: DMatrix<f64>,
    coef_vars: DVector<f64>,
    noise_std: f64,
    prior: BoltzmannParams,
    unitary: bool,
    gram: DMatrix<f64>,
}

/// Serializable summary of a model's scalar settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelMeta {
    pub signal_dim: usize,
    pub atoms: usize,
    pub noise_std: f64,
    pub unitary: bool,
}

impl SignalModel {
    pub fn new(
        dictionary: DMatrix<f64>,
        coef_vars: DVector<f64>,
        noise_std: f64,
        prior: BoltzmannParams,
    ) -> Result<Self> {
        let m = dictionary.ncols();
        check_dim("coefficient variances", m, coef_vars.len())?;
        check_dim("prior", m, prior.dim())?;
        if dictionary.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary has non-finite entries"));
        }
        if coef_vars.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("coefficient variances must be positive and finite"));
        }
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise level {noise_std} must be positive")));
        }
        let gram = dictionary.tr_mul(&dictionary);
        let unitary = dictionary.nrows() == m
            && gram
                .iter()
                .enumerate()
                .all(|(idx, &g)| {
                    let target = if idx % m == idx / m { 1.0 } else { 0.0 };
                    (g - target).abs() <= UNITARY_TOL
                });
        Ok(Self {
            dictionary,
            coef_vars,
            noise_std,
            prior,
            unitary,
            gram,
        })
    }

    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.dictionary
    }

    pub fn coef_vars(&self) -> &DVector<f64> {
        &self.coef_vars
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    pub fn prior(&self) -> &BoltzmannParams {
        &self.prior
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    /// `AᵀA`, cached at construction.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn signal_dim(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            signal_dim: self.signal_dim(),
            atoms: self.atoms(),
            noise_std: self.noise_std,
            unitary: self.unitary,
        }
    }

    pub fn with_prior(&self, prior: BoltzmannParams) -> Result<Self> {
        check_dim("prior", self.atoms(), prior.dim())?;
        Ok(Self {
            prior,
            ..self.clone()
        })
    }

    pub fn with_coef_vars(&self, coef_vars: DVector<f64>) -> Result<Self> {
        Self::new(self.dictionary.clone(), coef_vars, self.noise_std, self.prior.clone())
    }

    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        Self::new(self.dictionary.clone(), self.coef_vars.clone(), noise_std, self.prior.clone())
    }

    /// Reorder atoms so that new atom `k` is old atom `perm[k]`; dictionary
    /// columns, variances and prior move together.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.atoms())?;
        let n = self.signal_dim();
        let dictionary = DMatrix::from_fn(n, perm.len(), |r, c| self.dictionary[(r, perm[c])]);
        let coef_vars = DVector::from_fn(perm.len(), |i, _| self.coef_vars[perm[i]]);
        Self::new(dictionary, coef_vars, self.noise_std, self.prior.permuted(perm)?)
    }
}

/// One synthetic draw from the generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub signal: DVector<f64>,
    pub representation: SparseRepresentation,
    pub clean_signal: Option<DVector<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_score_zero() {
        let prior = BoltzmannParams::independent(DVector::zeros(4)).unwrap();
        for mask in 0..16 {
            let s = SupportPattern::from_mask(4, mask);
            assert_eq!(prior.log_score(&s).unwrap(), 0.0);
        }
    }

    #[test]
    fn pair_interaction_score() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let prior = BoltzmannParams::new(w, DVector::zeros(2)).unwrap();
        let s = SupportPattern::full(2);
        assert_eq!(prior.log_score(&s).unwrap(), 0.5);
    }

    #[test]
    fn score_matches_transposed_quadratic_form() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 0.3, -1.2, 0.3, 0.0, 0.7, -1.2, 0.7, 0.0]);
        let b = DVector::from_vec(vec![0.1, -0.4, 0.25]);
        let prior = BoltzmannParams::new(w.clone(), b.clone()).unwrap();
        for mask in 0..8 {
            let s = SupportPattern::from_mask(3, mask);
            let sv = DVector::from_fn(3, |i, _| f64::from(s.spins()[i]));
            let direct = b.dot(&sv) + 0.5 * sv.dot(&(w.transpose() * &sv));
            assert!((prior.log_score(&s).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let prior = BoltzmannParams::independent(DVector::zeros(3)).unwrap();
        assert!(matches!(
            prior.log_score(&SupportPattern::empty(4)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn asymmetric_or_diagonal_weights_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.4, 0.0]);
        assert!(BoltzmannParams::new(w, DVector::zeros(2)).is_err());
        let w = DMatrix::from_row_slice(2, 2, &[0.1, 0.5, 0.5, 0.0]);
        assert!(BoltzmannParams::new(w, DVector::zeros(2)).is_err());
        let w = DMatrix::from_row_slice(2, 2, &[0.0, f64::NAN, f64::NAN, 0.0]);
        assert!(BoltzmannParams::new(w, DVector::zeros(2)).is_err());
    }

    #[test]
    fn support_views_agree() {
        let s = SupportPattern::from_indices(6, &[4, 1]).unwrap();
        assert_eq!(s.indices(), &[1, 4]);
        assert_eq!(s.spins(), &[-1, 1, -1, -1, 1, -1]);
        assert_eq!(s.cardinality(), 2);
        assert!(SupportPattern::from_indices(6, &[1, 1]).is_err());
        assert!(SupportPattern::from_indices(6, &[6]).is_err());
        assert!(SupportPattern::from_spins(&[1, 0]).is_err());
        assert_eq!(SupportPattern::from_spins(s.spins()).unwrap(), s);
    }

    #[test]
    fn representation_rejects_off_support_values() {
        let s = SupportPattern::from_indices(3, &[1]).unwrap();
        assert!(SparseRepresentation::new(DVector::from_vec(vec![0.0, 2.0, 0.0]), s.clone()).is_ok());
        assert!(SparseRepresentation::new(DVector::from_vec(vec![1e-300, 2.0, 0.0]), s).is_err());
    }

    #[test]
    fn unitary_flag_follows_gram() {
        let prior = BoltzmannParams::independent(DVector::zeros(2)).unwrap();
        let eye = DMatrix::identity(2, 2);
        let m = SignalModel::new(eye, DVector::from_element(2, 1.0), 1.0, prior.clone()).unwrap();
        assert!(m.is_unitary());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let m = SignalModel::new(skew, DVector::from_element(2, 1.0), 1.0, prior).unwrap();
        assert!(!m.is_unitary());
    }

    #[test]
    fn iid_prior_marginal() {
        let p = BoltzmannParams::iid(5, 0.2).unwrap();
        let b = p.bias()[0];
        assert!((1.0 / (1.0 + (-2.0 * b).exp()) - 0.2).abs() < 1e-14);
    }
}
