//! Parameter estimation from labeled data: closed-form coefficient variances,
//! maximum pseudo-likelihood for `(W, b)` by SESOP or plain gradient ascent,
//! and projection of a learned `W` onto a banded structure.

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{check_permutation, BoltzmannParams, LabeledSample, SparseRepresentation, SupportPattern};

/// Default variance for atoms that never appear in the data.
pub const DEFAULT_VARIANCE_FALLBACK: f64 = 2500.0;

/// Per-atom ML variance: mean squared coefficient over the samples in which
/// the atom is active. Atoms never active (or only with zero coefficients)
/// get `fallback`.
pub fn estimate_variances(samples: &[LabeledSample], fallback: f64) -> Result<DVector<f64>> {
    let reps: Vec<&SparseRepresentation> = samples.iter().map(|s| &s.representation).collect();
    estimate_variances_from(&reps, fallback)
}

pub fn estimate_variances_from(reps: &[&SparseRepresentation], fallback: f64) -> Result<DVector<f64>> {
    if !(fallback > 0.0 && fallback.is_finite()) {
        return Err(Error::invalid("variance fallback must be positive"));
    }
    let Some(first) = reps.first() else {
        return Err(Error::invalid("no samples given"));
    };
    let m = first.coeffs().len();
    let mut energy = DVector::<f64>::zeros(m);
    let mut count = vec![0usize; m];
    for r in reps {
        check_dim("coefficients", m, r.coeffs().len())?;
        for &i in r.support().indices() {
            energy[i] += r.coeffs()[i] * r.coeffs()[i];
            count[i] += 1;
        }
    }
    Ok(DVector::from_fn(m, |i, _| {
        let v = if count[i] > 0 { energy[i] / count[i] as f64 } else { 0.0 };
        if v > 0.0 && v.is_finite() {
            v
        } else {
            fallback
        }
    }))
}

/// `(W, b)` packed as the strict upper triangle of `W` in row-major order
/// followed by `b`; length `(m² + m) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedParams {
    m: usize,
    u: DVector<f64>,
}

impl PackedParams {
    pub fn len_for(m: usize) -> usize {
        (m * m + m) / 2
    }

    pub fn pack(params: &BoltzmannParams) -> Self {
        Self::from_parts(params.weights(), params.bias())
    }

    fn from_parts(w: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let m = b.len();
        let mut u = Vec::with_capacity(Self::len_for(m));
        for i in 0..m {
            for j in (i + 1)..m {
                u.push(w[(i, j)]);
            }
        }
        u.extend(b.iter());
        Self { m, u: DVector::from_vec(u) }
    }

    pub fn from_vector(m: usize, u: DVector<f64>) -> Result<Self> {
        check_dim("packed parameters", Self::len_for(m), u.len())?;
        Ok(Self { m, u })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.u
    }

    fn parts(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.m;
        let mut w = DMatrix::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in (i + 1)..m {
                w[(i, j)] = self.u[k];
                w[(j, i)] = self.u[k];
                k += 1;
            }
        }
        (w, self.u.rows(k, m).into_owned())
    }

    pub fn unpack(&self) -> Result<BoltzmannParams> {
        let (w, b) = self.parts();
        BoltzmannParams::new(w, b)
    }
}

/// How sums over samples are accumulated. Both modes are deterministic;
/// `Chunked` splits the samples into fixed-size blocks that are processed in
/// parallel and added in block order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Serial,
    #[default]
    Chunked,
}

const CHUNK: usize = 4096;

impl Reduction {
    fn sum(self, len: usize, f: impl Fn(Range<usize>) -> f64 + Sync) -> f64 {
        match self {
            Reduction::Serial => f(0..len),
            Reduction::Chunked => {
                let parts: Vec<f64> = (0..len.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| f(c * CHUNK..len.min((c + 1) * CHUNK)))
                    .collect();
                parts.iter().sum()
            }
        }
    }

    fn sum_vec(self, len: usize, dim: usize, f: impl Fn(Range<usize>) -> Vec<f64> + Sync) -> Vec<f64> {
        let add = |mut acc: Vec<f64>, part: Vec<f64>| {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
            acc
        };
        match self {
            Reduction::Serial => f(0..len),
            Reduction::Chunked => {
                let parts: Vec<Vec<f64>> = (0..len.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| f(c * CHUNK..len.min((c + 1) * CHUNK)))
                    .collect();
                parts.into_iter().fold(vec![0.0; dim], add)
            }
        }
    }
}

/// `ln cosh z` without overflow.
fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn sech2(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

/// Spins of a sample set as an `N × m` matrix plus the reduction mode.
struct PlData {
    spins: DMatrix<f64>,
    reduction: Reduction,
}

impl PlData {
    fn new(supports: &[SupportPattern], m: usize, reduction: Reduction) -> Result<Self> {
        for s in supports {
            check_dim("support", m, s.dim())?;
        }
        let spins = DMatrix::from_fn(supports.len(), m, |l, i| f64::from(supports[l].spins()[i]));
        Ok(Self { spins, reduction })
    }

    fn samples(&self) -> usize {
        self.spins.nrows()
    }

    fn atoms(&self) -> usize {
        self.spins.ncols()
    }

    /// `Z = S W + 1 bᵀ`, row `l` holding `W S⁽ˡ⁾ + b`.
    fn fields(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let mut z = &self.spins * w;
        for (mut col, &bi) in z.column_iter_mut().zip(b.iter()) {
            col.add_scalar_mut(bi);
        }
        z
    }

    /// Sum over all entries of `S ∘ Z - ln cosh Z`, minus `mN ln 2`.
    fn value(&self, z: &DMatrix<f64>) -> f64 {
        let (s, zs) = (self.spins.as_slice(), z.as_slice());
        let total = self
            .reduction
            .sum(zs.len(), |r| r.map(|k| s[k] * zs[k] - ln_cosh(zs[k])).sum());
        total - (self.samples() * self.atoms()) as f64 * std::f64::consts::LN_2
    }

    fn gradient(&self, z: &DMatrix<f64>) -> PackedParams {
        let resid = self.spins.zip_map(z, |s, zv| s - zv.tanh());
        let g = resid.tr_mul(&self.spins);
        let gw = &g + g.transpose();
        let gb = DVector::from_fn(self.atoms(), |i, _| resid.column(i).sum());
        PackedParams::from_parts(&gw, &gb)
    }

    /// `S ΔW + 1 Δbᵀ` for a packed direction.
    fn direction_fields(&self, dir: &PackedParams) -> DMatrix<f64> {
        let (w, b) = dir.parts();
        self.fields(&w, &b)
    }
}

fn check_params(params: &BoltzmannParams, supports: &[SupportPattern]) -> Result<()> {
    for s in supports {
        check_dim("support", params.dim(), s.dim())?;
    }
    Ok(())
}

/// Log pseudo-likelihood `Σ_l Σ_i ln Pr(S_i⁽ˡ⁾ | rest)`.
pub fn log_pl(params: &BoltzmannParams, supports: &[SupportPattern]) -> Result<f64> {
    check_params(params, supports)?;
    let data = PlData::new(supports, params.dim(), Reduction::Serial)?;
    Ok(data.value(&data.fields(params.weights(), params.bias())))
}

/// Gradient of [`log_pl`] in packed layout.
pub fn log_pl_gradient(params: &BoltzmannParams, supports: &[SupportPattern]) -> Result<PackedParams> {
    check_params(params, supports)?;
    let data = PlData::new(supports, params.dim(), Reduction::Serial)?;
    Ok(data.gradient(&data.fields(params.weights(), params.bias())))
}

/// Hessian of [`log_pl`] in packed layout, `-Σ_l Σ_k sech²(z_k) c_k c_kᵀ`
/// with `c_k = ∂z_k/∂u`.
pub fn log_pl_hessian(params: &BoltzmannParams, supports: &[SupportPattern]) -> Result<DMatrix<f64>> {
    check_params(params, supports)?;
    let m = params.dim();
    let p = PackedParams::len_for(m);
    let data = PlData::new(supports, m, Reduction::Serial)?;
    let z = data.fields(params.weights(), params.bias());
    // Packed index of W_ij for i < j.
    let pair = |i: usize, j: usize| i * (2 * m - i - 1) / 2 + (j - i - 1);
    let mut h = DMatrix::zeros(p, p);
    let mut idx = Vec::with_capacity(m);
    let mut val = Vec::with_capacity(m);
    for l in 0..data.samples() {
        for k in 0..m {
            idx.clear();
            val.clear();
            for j in (0..m).filter(|&j| j != k) {
                idx.push(if k < j { pair(k, j) } else { pair(j, k) });
                val.push(data.spins[(l, j)]);
            }
            idx.push(p - m + k);
            val.push(1.0);
            let c = sech2(z[(l, k)]);
            for (a, &ia) in idx.iter().enumerate() {
                for (bb, &ib) in idx.iter().enumerate() {
                    h[(ia, ib)] -= c * val[a] * val[bb];
                }
            }
        }
    }
    Ok(h)
}

/// Settings of the SESOP optimizer for the pseudo-likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SesopConfig {
    /// Number of previous steps kept in the search subspace (`M`).
    pub history: usize,
    pub max_iters: usize,
    /// Stop once `‖∇‖` falls below this; `None` means `1e-5·N`.
    pub grad_tol: Option<f64>,
    pub inner_newton_iters: usize,
    /// Initial step fraction of each inner Newton step, halved while the
    /// objective does not increase.
    pub inner_newton_damping: f64,
    pub reduction: Reduction,
}

impl Default for SesopConfig {
    fn default() -> Self {
        Self {
            history: 2,
            max_iters: 50,
            grad_tol: None,
            inner_newton_iters: 10,
            inner_newton_damping: 1.0,
            reduction: Reduction::Chunked,
        }
    }
}

impl SesopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_newton_iters == 0 {
            return Err(Error::invalid("inner Newton iteration count must be positive"));
        }
        if !(self.inner_newton_damping > 0.0 && self.inner_newton_damping <= 1.0) {
            return Err(Error::invalid("inner Newton damping must lie in (0, 1]"));
        }
        if let Some(t) = self.grad_tol {
            if !(t >= 0.0) {
                return Err(Error::invalid("gradient tolerance must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Result of a pseudo-likelihood fit.
#[derive(Clone, Debug, PartialEq)]
pub struct MplFit {
    pub params: BoltzmannParams,
    /// Log-PL at the starting point and after every iteration.
    pub log_pl: Vec<f64>,
    /// Gradient norm at the same points.
    pub grad_norms: Vec<f64>,
}

impl MplFit {
    pub fn iterations(&self) -> usize {
        self.log_pl.len() - 1
    }
}

/// Independent-atom starting point: `W = 0`, `b_i = atanh(mean_l S_i⁽ˡ⁾)` with
/// the mean clamped to `±(1 - 1e-6)`.
pub fn bias_initialization(supports: &[SupportPattern]) -> Result<BoltzmannParams> {
    let Some(first) = supports.first() else {
        return Err(Error::invalid("no supports given"));
    };
    let m = first.dim();
    let mut mean = DVector::zeros(m);
    for s in supports {
        check_dim("support", m, s.dim())?;
        for (acc, &v) in mean.iter_mut().zip(s.spins()) {
            *acc += f64::from(v);
        }
    }
    let lim = 1.0 - 1e-6;
    let b = mean.map(|v: f64| (v / supports.len() as f64).clamp(-lim, lim).atanh());
    BoltzmannParams::independent(b)
}

/// Maximum pseudo-likelihood estimate of `(W, b)` by SESOP from the
/// independent-atom initialization.
pub fn mpl_sesop(supports: &[SupportPattern], config: &SesopConfig) -> Result<BoltzmannParams> {
    mpl_sesop_fit(supports, config, None).map(|f| f.params)
}

/// SESOP with an optional warm start. Each outer iteration maximizes the
/// objective over the span of the current gradient and the last `M` steps
/// with a damped Newton method in that low-dimensional subspace.
pub fn mpl_sesop_fit(
    supports: &[SupportPattern],
    config: &SesopConfig,
    init: Option<&BoltzmannParams>,
) -> Result<MplFit> {
    config.validate()?;
    let start = match init {
        Some(p) => p.clone(),
        None => bias_initialization(supports)?,
    };
    let m = start.dim();
    let data = PlData::new(supports, m, config.reduction)?;
    let tol = config.grad_tol.unwrap_or(1e-5 * supports.len() as f64);

    let mut u = PackedParams::pack(&start);
    let (w0, b0) = u.parts();
    let mut z = data.fields(&w0, &b0);
    let mut value = data.value(&z);
    let mut history: VecDeque<DVector<f64>> = VecDeque::new();
    let mut fit = MplFit {
        params: start,
        log_pl: vec![value],
        grad_norms: Vec::new(),
    };

    for _ in 0..config.max_iters {
        let grad = data.gradient(&z);
        let gnorm = grad.as_vector().norm();
        fit.grad_norms.push(gnorm);
        if gnorm < tol || gnorm == 0.0 {
            fit.log_pl.pop();
            fit.grad_norms.pop();
            break;
        }
        let mut dirs = vec![grad.as_vector() / gnorm];
        for step in &history {
            let n = step.norm();
            if n > 0.0 {
                dirs.push(step / n);
            }
        }
        let fields: Vec<DMatrix<f64>> = dirs
            .iter()
            .map(|d| data.direction_fields(&PackedParams { m, u: d.clone() }))
            .collect();
        let (alpha, new_value, new_z) = subspace_newton(&data, &z, value, &fields, config);
        if new_value <= value {
            fit.grad_norms.pop();
            break;
        }
        let mut step = DVector::zeros(u.u.len());
        for (a, d) in alpha.iter().zip(&dirs) {
            step.axpy(*a, d, 1.0);
        }
        u.u += &step;
        history.push_back(step);
        if history.len() > config.history {
            history.pop_front();
        }
        z = new_z;
        value = new_value;
        fit.log_pl.push(value);
    }
    if fit.grad_norms.len() < fit.log_pl.len() {
        fit.grad_norms.push(data.gradient(&z).as_vector().norm());
    }
    fit.params = u.unpack()?;
    Ok(fit)
}

/// Value, gradient and Hessian of `α ↦ log-PL(Z0 + Σ α_d V_d)`.
fn subspace_terms(data: &PlData, z: &DMatrix<f64>, fields: &[DMatrix<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let k = fields.len();
    let (s, zs) = (data.spins.as_slice(), z.as_slice());
    let vs: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
    let packed = data.reduction.sum_vec(zs.len(), k + k * k, |r| {
        let mut acc = vec![0.0; k + k * k];
        for e in r {
            let resid = s[e] - zs[e].tanh();
            let c = sech2(zs[e]);
            for d in 0..k {
                acc[d] += resid * vs[d][e];
                for f in 0..k {
                    acc[k + d * k + f] -= c * vs[d][e] * vs[f][e];
                }
            }
        }
        acc
    });
    let g = DVector::from_column_slice(&packed[..k]);
    let h = DMatrix::from_row_slice(k, k, &packed[k..]);
    (g, h)
}

fn shifted(z0: &DMatrix<f64>, fields: &[DMatrix<f64>], alpha: &DVector<f64>) -> DMatrix<f64> {
    let mut z = z0.clone();
    for (a, f) in alpha.iter().zip(fields) {
        z += f * *a;
    }
    z
}

fn subspace_newton(
    data: &PlData,
    z0: &DMatrix<f64>,
    value0: f64,
    fields: &[DMatrix<f64>],
    config: &SesopConfig,
) -> (DVector<f64>, f64, DMatrix<f64>) {
    let k = fields.len();
    let mut alpha = DVector::zeros(k);
    let mut z = z0.clone();
    let mut value = value0;
    for _ in 0..config.inner_newton_iters {
        let (g, h) = subspace_terms(data, &z, fields);
        if g.norm() <= 1e-12 * (1.0 + value.abs()) {
            break;
        }
        // Newton direction for the concave subproblem: (-H) δ = g, with a
        // small ridge if -H is numerically singular.
        let neg_h = -h;
        let scale = neg_h.diagonal().amax().max(1e-300);
        let mut delta = None;
        for ridge in [0.0, 1e-10, 1e-6, 1e-2] {
            let mat = &neg_h + DMatrix::identity(k, k) * (ridge * scale);
            if let Some(ch) = mat.cholesky() {
                delta = Some(ch.solve(&g));
                break;
            }
        }
        let delta = delta.unwrap_or_else(|| g.clone() / scale);
        let mut t = config.inner_newton_damping;
        let mut improved = false;
        for _ in 0..40 {
            let trial = &alpha + &delta * t;
            let zt = shifted(z0, fields, &trial);
            let vt = data.value(&zt);
            if vt > value {
                alpha = trial;
                z = zt;
                value = vt;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (alpha, value, z)
}

/// Gradient-ascent baseline: `u ← u + η ∇/N`, halving `η` for a step until
/// the pseudo-likelihood increases.
pub fn mpl_gradient_ascent(supports: &[SupportPattern], steps: usize, learning_rate: f64) -> Result<BoltzmannParams> {
    mpl_gradient_ascent_fit(supports, steps, learning_rate, Reduction::Chunked).map(|f| f.params)
}

pub fn mpl_gradient_ascent_fit(
    supports: &[SupportPattern],
    steps: usize,
    learning_rate: f64,
    reduction: Reduction,
) -> Result<MplFit> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let start = bias_initialization(supports)?;
    let m = start.dim();
    let data = PlData::new(supports, m, reduction)?;
    let n = supports.len() as f64;
    let mut u = PackedParams::pack(&start);
    let mut z = data.fields(&start.weights().clone(), &start.bias().clone());
    let mut value = data.value(&z);
    let mut fit = MplFit {
        params: start,
        log_pl: vec![value],
        grad_norms: Vec::new(),
    };
    for _ in 0..steps {
        let grad = data.gradient(&z);
        fit.grad_norms.push(grad.as_vector().norm());
        let dir_fields = data.direction_fields(&grad);
        let mut eta = learning_rate / n;
        let mut accepted = false;
        for _ in 0..60 {
            let zt = &z + &dir_fields * eta;
            let vt = data.value(&zt);
            if vt > value {
                u.u.axpy(eta, grad.as_vector(), 1.0);
                z = zt;
                value = vt;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            fit.grad_norms.pop();
            break;
        }
        fit.log_pl.push(value);
    }
    fit.grad_norms.push(data.gradient(&z).as_vector().norm());
    fit.params = u.unpack()?;
    Ok(fit)
}

/// Output of [`band_projection`]. `permutation[new] = old`; callers realign
/// dictionary columns with it.
#[derive(Clone, Debug, PartialEq)]
pub struct BandProjection {
    pub params: BoltzmannParams,
    pub variances: DVector<f64>,
    pub permutation: Vec<usize>,
}

/// `Σ |W_{π(i), π(j)}|` over in-band pairs `0 < |i - j| <= band` that touch
/// position `a` or `b`.
fn local_energy(w: &DMatrix<f64>, perm: &[usize], band: usize, a: usize, b: usize) -> f64 {
    let m = perm.len();
    let mut e = 0.0;
    for &pos in &[a, b] {
        for other in pos.saturating_sub(band)..m.min(pos + band + 1) {
            if other == pos || (pos == b && other == a) {
                continue;
            }
            e += w[(perm[pos], perm[other])].abs();
        }
    }
    e
}

/// Relabels atoms by repeated best single pair swaps that maximize the in-band
/// `ℓ₁` energy of `W`, then zeros every entry outside the band. Biases and
/// variances follow the relabeling.
pub fn band_projection(params: &BoltzmannParams, variances: &DVector<f64>, band: usize) -> Result<BandProjection> {
    if band == 0 {
        return Err(Error::invalid("band order must be at least 1"));
    }
    let m = params.dim();
    check_dim("variances", m, variances.len())?;
    let w = params.weights();
    let mut perm: Vec<usize> = (0..m).collect();
    let tol = 1e-12 * (1.0 + w.abs().sum());
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..m {
            for b in (a + 1)..m {
                let before = local_energy(w, &perm, band, a, b);
                perm.swap(a, b);
                let after = local_energy(w, &perm, band, a, b);
                perm.swap(a, b);
                let gain = after - before;
                if gain > tol && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, a, b));
                }
            }
        }
        match best {
            Some((_, a, b)) => perm.swap(a, b),
            None => break,
        }
    }
    check_permutation(&perm, m)?;
    let weights = DMatrix::from_fn(m, m, |i, j| {
        if i.abs_diff(j) <= band {
            w[(perm[i], perm[j])]
        } else {
            0.0
        }
    });
    let bias = DVector::from_fn(m, |i, _| params.bias()[perm[i]]);
    Ok(BandProjection {
        params: BoltzmannParams::new(weights, bias)?,
        variances: DVector::from_fn(m, |i, _| variances[perm[i]]),
        permutation: perm,
    })
}

/// In-band `ℓ₁` energy of `W`.
pub fn in_band_energy(w: &DMatrix<f64>, band: usize) -> f64 {
    let m = w.nrows();
    let mut e = 0.0;
    for i in 0..m {
        for j in (i + 1)..m.min(i + band + 1) {
            e += w[(i, j)].abs();
        }
    }
    e
}
