//! Dictionaries, image patches, noise injection, support statistics and the
//! evaluation metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::SupportPattern;
use crate::rng::{gaussian, stream_rng};

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Orthonormal DCT-II basis of size `n`; column `k` is the `k`-th atom.
pub fn dct_1d_unitary(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |t, k| {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        scale * (std::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

/// Separable 2-D orthonormal DCT for `√n × √n` patches.
///
/// Pixels are row-major (`r·√n + c`) and atom `kr·√n + kc` is the product of
/// the 1-D atoms `kr` along rows and `kc` along columns.
pub fn dct_unitary(n: usize) -> Result<DMatrix<f64>> {
    let p = exact_sqrt(n).ok_or_else(|| Error::invalid(format!("{n} is not a perfect square")))?;
    let d = dct_1d_unitary(p);
    Ok(d.kronecker(&d))
}

/// Overcomplete separable DCT: `√m` sampled cosines `cos(t·k·π/√m)` per axis
/// (mean removed for `k > 0`, unit norm), combined by a Kronecker product.
pub fn dct_overcomplete(n: usize, m: usize) -> Result<DMatrix<f64>> {
    let p = exact_sqrt(n).ok_or_else(|| Error::invalid(format!("{n} is not a perfect square")))?;
    let q = exact_sqrt(m).ok_or_else(|| Error::invalid(format!("{m} is not a perfect square")))?;
    if q < p {
        return Err(Error::invalid("overcomplete dictionary needs at least as many atoms as pixels"));
    }
    let mut d = DMatrix::from_fn(p, q, |t, k| (t as f64 * k as f64 * std::f64::consts::PI / q as f64).cos());
    for k in 0..q {
        let mut col = d.column_mut(k);
        if k > 0 {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let norm = col.norm();
        col /= norm;
    }
    Ok(d.kronecker(&d))
}

/// A grayscale image; `pixels` is row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dim("image pixels", width * height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// DC-free square patches with their removed means.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<DVector<f64>>,
    pub dc_values: Vec<f64>,
    pub patch_size: usize,
    pub source: String,
}

impl PatchSet {
    /// Removes the mean of every patch.
    pub fn from_raw(patches: Vec<DVector<f64>>, patch_size: usize, source: impl Into<String>) -> Result<Self> {
        let n = patch_size * patch_size;
        let mut dc_values = Vec::with_capacity(patches.len());
        let mut out = Vec::with_capacity(patches.len());
        for p in patches {
            check_dim("patch", n, p.len())?;
            let mean = p.mean();
            dc_values.push(mean);
            out.push(p.add_scalar(-mean));
        }
        Ok(Self {
            patches: out,
            dc_values,
            patch_size,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Patches with their DC values added back.
    pub fn with_dc(&self) -> Vec<DVector<f64>> {
        self.patches
            .iter()
            .zip(&self.dc_values)
            .map(|(p, &dc)| p.add_scalar(dc))
            .collect()
    }
}

/// All `size × size` patches at multiples of `stride`, DC removed.
pub fn extract_patches(image: &GrayImage, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if size > image.width || size > image.height {
        return Err(Error::invalid(format!(
            "{size}x{size} patches do not fit in a {}x{} image",
            image.width, image.height
        )));
    }
    let mut raw = Vec::new();
    for r in (0..=image.height - size).step_by(stride) {
        for c in (0..=image.width - size).step_by(stride) {
            raw.push(DVector::from_fn(size * size, |k, _| image.at(r + k / size, c + k % size)));
        }
    }
    PatchSet::from_raw(raw, size, "image")
}

/// Adds i.i.d. `N(0, sigma²)` noise to every patch. DC values are kept, so the
/// noisy patches are no longer exactly zero-mean.
pub fn add_noise(patches: &PatchSet, sigma: f64, seed: u64) -> Result<PatchSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level {sigma} must be non-negative")));
    }
    let noisy = patches
        .patches
        .par_iter()
        .enumerate()
        .map(|(l, p)| {
            let mut rng = stream_rng(seed, l as u64);
            p.map(|v| v + sigma * gaussian(&mut rng))
        })
        .collect();
    Ok(PatchSet {
        patches: noisy,
        ..patches.clone()
    })
}

/// Support statistics measuring how far atoms are from independent and
/// identically distributed.
///
/// `r[i] = |log₁₀(P_i / p̄)|`, `u[(i, j)] = |log₁₀(P(i|j)/P_i + δ)|`,
/// `v[(i, j)] = |log₁₀(P(i|j) + δ)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityStats {
    pub r: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub p_bar: f64,
    pub delta: f64,
    /// Atoms never active in the data; their columns of `u` and `v` hold the
    /// placeholder `|log₁₀ δ|`.
    pub never_active: Vec<bool>,
}

pub const DEFAULT_DELTA: f64 = 0.1;

pub fn validity_stats(supports: &[SupportPattern], delta: f64) -> Result<ValidityStats> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let Some(first) = supports.first() else {
        return Err(Error::invalid("no supports given"));
    };
    let m = first.dim();
    let n = supports.len() as f64;
    let mut counts = vec![0.0; m];
    let mut joint = DMatrix::<f64>::zeros(m, m);
    for s in supports {
        check_dim("support", m, s.dim())?;
        let idx = s.indices();
        for (a, &i) in idx.iter().enumerate() {
            counts[i] += 1.0;
            for &j in &idx[a..] {
                joint[(i, j)] += 1.0;
                if i != j {
                    joint[(j, i)] += 1.0;
                }
            }
        }
    }
    let marg: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let p_bar = marg.iter().sum::<f64>() / m as f64;
    let r = marg
        .iter()
        .map(|&p| {
            if p_bar == 0.0 {
                0.0
            } else {
                (p / p_bar).log10().abs()
            }
        })
        .collect();
    let never_active: Vec<bool> = counts.iter().map(|&c| c == 0.0).collect();
    let placeholder = delta.log10().abs();
    let mut u = DMatrix::from_element(m, m, placeholder);
    let mut v = DMatrix::from_element(m, m, placeholder);
    for j in (0..m).filter(|&j| !never_active[j]) {
        for i in 0..m {
            let cond = joint[(i, j)] / counts[j];
            let ratio = if marg[i] > 0.0 { cond / marg[i] } else { 0.0 };
            u[(i, j)] = (ratio + delta).log10().abs();
            v[(i, j)] = (cond + delta).log10().abs();
        }
    }
    Ok(ValidityStats {
        r,
        u,
        v,
        p_bar,
        delta,
        never_active,
    })
}

/// `1 - mean |s ∩ ŝ| / max(|s|, |ŝ|)`; a pair of empty supports counts as a
/// perfect match.
pub fn support_error(truth: &[SupportPattern], estimates: &[SupportPattern]) -> Result<f64> {
    check_dim("estimates", truth.len(), estimates.len())?;
    if truth.is_empty() {
        return Err(Error::invalid("no supports given"));
    }
    let mut total = 0.0;
    for (s, e) in truth.iter().zip(estimates) {
        check_dim("support", s.dim(), e.dim())?;
        let denom = s.cardinality().max(e.cardinality());
        total += if denom == 0 {
            1.0
        } else {
            s.intersection_size(e) as f64 / denom as f64
        };
    }
    Ok(1.0 - total / truth.len() as f64)
}

fn relative_energy<'a>(pairs: impl Iterator<Item = (DVector<f64>, &'a DVector<f64>)>) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (diff, truth) in pairs {
        num += diff.norm_squared();
        den += truth.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::invalid("reference vectors have zero energy"));
    }
    Ok((num / den).sqrt())
}

/// `sqrt(Σ ‖x̂ - x‖² / Σ ‖x‖²)`.
pub fn coef_error(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> Result<f64> {
    check_dim("estimates", truth.len(), estimates.len())?;
    for (t, e) in truth.iter().zip(estimates) {
        check_dim("coefficients", t.len(), e.len())?;
    }
    relative_energy(truth.iter().zip(estimates).map(|(t, e)| (e - t, t)))
}

/// `sqrt(Σ ‖A x̂ - A x‖² / Σ ‖A x‖²)`.
pub fn signal_error(dictionary: &DMatrix<f64>, truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> Result<f64> {
    check_dim("estimates", truth.len(), estimates.len())?;
    let clean: Vec<DVector<f64>> = truth
        .iter()
        .map(|t| {
            check_dim("coefficients", dictionary.ncols(), t.len())?;
            Ok(dictionary * t)
        })
        .collect::<Result<_>>()?;
    let mut diffs = Vec::with_capacity(truth.len());
    for (t, e) in truth.iter().zip(estimates) {
        check_dim("coefficients", t.len(), e.len())?;
        diffs.push(dictionary * (e - t));
    }
    relative_energy(diffs.into_iter().zip(&clean))
}

/// Indices of the `k` largest `|x̂_i|`, ties to the lower index.
pub fn rand_omp_support(xhat: &DVector<f64>, k: usize) -> SupportPattern {
    let mut order: Vec<usize> = (0..xhat.len()).collect();
    order.sort_by(|&a, &b| xhat[b].abs().total_cmp(&xhat[a].abs()));
    order.truncate(k.min(xhat.len()));
    SupportPattern::from_indices(xhat.len(), &order).expect("indices are distinct and in range")
}

/// Root of the mean squared pixel error over all patches.
pub fn rmse_per_pixel(clean: &[DVector<f64>], denoised: &[DVector<f64>]) -> Result<f64> {
    check_dim("denoised patches", clean.len(), denoised.len())?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (c, d) in clean.iter().zip(denoised) {
        check_dim("patch", c.len(), d.len())?;
        sum += (c - d).norm_squared();
        count += c.len();
    }
    if count == 0 {
        return Err(Error::invalid("no pixels to compare"));
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn pat(m: usize, idx: &[usize]) -> SupportPattern {
        SupportPattern::from_indices(m, idx).unwrap()
    }

    #[test]
    fn unitary_dct_is_orthonormal() {
        for n in [4, 16, 64] {
            let a = dct_unitary(n).unwrap();
            assert!((a.transpose() * &a - DMatrix::identity(n, n)).amax() < 1e-12);
            let first = a.column(0);
            assert!(first.iter().all(|&v| (v - first[0]).abs() < 1e-15));
        }
        let a = dct_1d_unitary(10);
        assert!((a.transpose() * &a - DMatrix::identity(10, 10)).amax() < 1e-12);
        assert!(dct_unitary(10).is_err());
    }

    #[test]
    fn unitary_dct_preserves_energy() {
        let a = dct_unitary(64).unwrap();
        let mut rng = rng_from_seed(2);
        let x = DVector::from_fn(64, |_, _| gaussian(&mut rng));
        assert!(((&a * &x).norm() - x.norm()).abs() < 1e-12);
    }

    #[test]
    fn overcomplete_dct_shape_and_norms() {
        let d = dct_overcomplete(64, 256).unwrap();
        assert_eq!(d.shape(), (64, 256));
        for c in d.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        // Low-frequency unitary atoms have close counterparts.
        let u = dct_unitary(64).unwrap();
        let corr = u.transpose() * &d;
        for (kr, kc) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 1)] {
            let best = corr.row(kr * 8 + kc).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(best > 0.9, "atom ({kr},{kc}) best correlation {best}");
        }
        assert!(dct_overcomplete(64, 32).is_err());
    }

    #[test]
    fn patch_extraction() {
        let img = GrayImage::new(8, 8, (0..64).map(f64::from).collect()).unwrap();
        let set = extract_patches(&img, 8, 8).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.patches[0].mean().abs() < 1e-12);
        assert!((set.dc_values[0] - 31.5).abs() < 1e-12);
        assert_eq!(set.with_dc()[0][9], 9.0);

        let flat = GrayImage::new(16, 16, vec![7.0; 256]).unwrap();
        let set = extract_patches(&flat, 8, 4).unwrap();
        assert_eq!(set.len(), 9);
        assert!(set.patches.iter().all(|p| p.amax() == 0.0));
        assert!(extract_patches(&flat, 17, 1).is_err());
    }

    #[test]
    fn noise_injection() {
        let clean = PatchSet::from_raw(vec![DVector::zeros(64); 2000], 8, "zeros").unwrap();
        assert_eq!(add_noise(&clean, 0.0, 1).unwrap().patches, clean.patches);
        let noisy = add_noise(&clean, 3.0, 5).unwrap();
        let n = (noisy.len() * 64) as f64;
        let var: f64 = noisy.patches.iter().map(|p| p.norm_squared()).sum::<f64>() / n;
        assert!((var / 9.0 - 1.0).abs() < 0.02);
        assert_eq!(noisy, add_noise(&clean, 3.0, 5).unwrap());
    }

    #[test]
    fn validity_of_independent_and_coupled_data() {
        let mut rng = rng_from_seed(4);
        use rand::Rng;
        let sups: Vec<SupportPattern> = (0..40000)
            .map(|_| {
                let idx: Vec<usize> = (0..4).filter(|_| rng.random::<f64>() < 0.3).collect();
                pat(4, &idx)
            })
            .collect();
        let st = validity_stats(&sups, 0.1).unwrap();
        let target = 1.1f64.log10();
        for i in 0..4 {
            assert!(st.r[i] < 0.02);
            for j in 0..4 {
                if i != j {
                    assert!((st.u[(i, j)] - target).abs() < 0.02);
                }
            }
        }

        let coupled = vec![pat(3, &[0, 1]), pat(3, &[0, 1]), pat(3, &[])];
        let st = validity_stats(&coupled, 0.1).unwrap();
        assert!((st.v[(0, 1)] - target).abs() < 1e-12);
        assert!(st.never_active[2]);
        assert!((st.u[(0, 2)] - 1.0).abs() < 1e-12);
        // Conditional probability zero gives exactly |log10 δ| = 1.
        let st = validity_stats(&[pat(2, &[0]), pat(2, &[1])], 0.1).unwrap();
        assert!((st.u[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((st.v[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(st.r, vec![0.0, 0.0]);
    }

    #[test]
    fn support_error_cases() {
        let s = vec![pat(5, &[1, 2])];
        assert_eq!(support_error(&s, &s).unwrap(), 0.0);
        assert_eq!(support_error(&s, &[pat(5, &[2, 3])]).unwrap(), 0.5);
        assert_eq!(support_error(&[pat(5, &[])], &[pat(5, &[])]).unwrap(), 0.0);
        assert_eq!(support_error(&s, &[pat(5, &[])]).unwrap(), 1.0);
        assert!(support_error(&s, &[]).is_err());
    }

    #[test]
    fn coefficient_and_signal_errors() {
        let t = vec![DVector::from_vec(vec![3.0, 0.0, 4.0])];
        assert_eq!(coef_error(&t, &t).unwrap(), 0.0);
        assert_eq!(coef_error(&t, &[DVector::zeros(3)]).unwrap(), 1.0);
        let e = vec![DVector::from_vec(vec![3.0, 1.0, 2.0])];
        assert!((coef_error(&t, &e).unwrap() - (5.0f64 / 25.0).sqrt()).abs() < 1e-15);

        let u = dct_1d_unitary(3);
        assert!((signal_error(&u, &t, &e).unwrap() - coef_error(&t, &e).unwrap()).abs() < 1e-12);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        // A x = (3, 8), A x̂ = (4, 4).
        assert!((signal_error(&a, &t, &e).unwrap() - (17.0f64 / 73.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn top_k_support() {
        let x = DVector::from_vec(vec![0.5, -2.0, 1.0, 2.0, 0.0]);
        assert!(rand_omp_support(&x, 0).is_empty());
        assert_eq!(rand_omp_support(&x, 1).indices(), &[1]);
        assert_eq!(rand_omp_support(&x, 3).indices(), &[1, 2, 3]);
    }

    #[test]
    fn rmse_cases() {
        let a = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])];
        assert_eq!(rmse_per_pixel(&a, &a).unwrap(), 0.0);
        let shifted: Vec<_> = a.iter().map(|p| p.add_scalar(-2.5)).collect();
        assert!((rmse_per_pixel(&a, &shifted).unwrap() - 2.5).abs() < 1e-15);
        let b = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![3.0, 4.0])];
        assert!((rmse_per_pixel(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }
}
