//! Random model generators for the synthetic experiments and the tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dct_1d_unitary, dct_overcomplete, dct_unitary};
use crate::error::{Error, Result};
use crate::model::{BoltzmannParams, SignalModel};
use crate::rng::{gaussian, rng_from_seed, uniform};

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign
/// of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| gaussian(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric interaction matrix with i.i.d. `U[lo, hi]` entries for
/// `1 <= |i - j| <= band` and zeros elsewhere. `band = m - 1` gives a dense
/// matrix.
pub fn banded_weights<R: Rng + ?Sized>(m: usize, band: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m.min(i + band + 1) {
            let v = uniform(rng, lo, hi);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

pub fn uniform_vector<R: Rng + ?Sized>(m: usize, lo: f64, hi: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(m, |_, _| uniform(rng, lo, hi))
}

pub fn gaussian_vector<R: Rng + ?Sized>(m: usize, mean: f64, std: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(m, |_, _| mean + std * gaussian(rng))
}

/// The parameter ranges of a synthetic benchmark configuration.
///
/// Coefficient standard deviations are drawn from `coef_std_range`; the model
/// variances are their squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSetup {
    pub signal_dim: usize,
    pub atoms: usize,
    /// Band order of `W`; `None` for a dense matrix.
    pub band: Option<usize>,
    pub weight_range: (f64, f64),
    pub bias_range: (f64, f64),
    pub coef_std_range: (f64, f64),
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        Self::unitary()
    }
}

impl SyntheticSetup {
    /// 64×64 unitary DCT with a 9th-order banded `W`.
    pub fn unitary() -> Self {
        Self {
            signal_dim: 64,
            atoms: 64,
            band: Some(9),
            weight_range: (-1.0, 1.0),
            bias_range: (-3.0, -2.0),
            coef_std_range: (15.0, 60.0),
        }
    }

    /// 64×256 overcomplete DCT with a dense, weak `W`.
    pub fn overcomplete() -> Self {
        Self {
            signal_dim: 64,
            atoms: 256,
            band: None,
            weight_range: (-0.1, 0.1),
            ..Self::unitary()
        }
    }

    /// A small unitary configuration with the same parameter ranges.
    pub fn small_unitary(m: usize, band: usize) -> Self {
        Self {
            signal_dim: m,
            atoms: m,
            band: Some(band),
            ..Self::unitary()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_dim == 0 || self.atoms < self.signal_dim {
            return Err(Error::invalid("need 0 < signal_dim <= atoms"));
        }
        for (name, (lo, hi)) in [
            ("weight_range", self.weight_range),
            ("bias_range", self.bias_range),
            ("coef_std_range", self.coef_std_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("{name} must be a finite interval")));
            }
        }
        if self.coef_std_range.0 <= 0.0 {
            return Err(Error::invalid("coefficient standard deviations must be positive"));
        }
        Ok(())
    }

    /// The DCT dictionary for this shape: 2-D separable when the signal
    /// dimension is a perfect square, 1-D otherwise.
    pub fn dictionary(&self) -> Result<DMatrix<f64>> {
        if self.atoms == self.signal_dim {
            match dct_unitary(self.signal_dim) {
                Ok(a) => Ok(a),
                Err(_) => Ok(dct_1d_unitary(self.signal_dim)),
            }
        } else {
            dct_overcomplete(self.signal_dim, self.atoms)
        }
    }

    /// Draw a prior and variances and attach them to `dictionary`.
    pub fn model_with_dictionary(&self, dictionary: DMatrix<f64>, noise_std: f64, seed: u64) -> Result<SignalModel> {
        self.validate()?;
        let m = self.atoms;
        let mut rng = rng_from_seed(seed);
        let band = self.band.unwrap_or(m.saturating_sub(1));
        let (wlo, whi) = self.weight_range;
        let w = banded_weights(m, band, wlo, whi, &mut rng);
        let b = uniform_vector(m, self.bias_range.0, self.bias_range.1, &mut rng);
        let std = uniform_vector(m, self.coef_std_range.0, self.coef_std_range.1, &mut rng);
        let vars = std.map(|s| s * s);
        SignalModel::new(dictionary, vars, noise_std, BoltzmannParams::new(w, b)?)
    }

    pub fn model(&self, noise_std: f64, seed: u64) -> Result<SignalModel> {
        self.model_with_dictionary(self.dictionary()?, noise_std, seed)
    }
}
