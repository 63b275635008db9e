//! Experiment drivers: the synthetic pursuit benchmark and the patch
//! denoising protocol. Both are deterministic functions of their seeds.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_recover, AdaptiveConfig, AdaptiveIteration, PursuitKind};
use crate::data::{
    add_noise, dct_overcomplete, dct_unitary, rand_omp_support, rmse_per_pixel, PatchSet,
};
use crate::error::{Error, Result};
use crate::exact::{map_message_passing, map_zero_w};
use crate::greedy::{
    gibbs_annealing_map, omp_baseline, omp_baseline_detailed, omp_like_map_traced, random_omp_mmse,
    thresholding_like_map, AnnealingSchedule,
};
use crate::model::{
    exhaustive_map, BoltzmannParams, gibbs_sample_supports, oracle_coefficients, GibbsConfig, SignalModel, SparseRepresentation,
    SupportPattern,
};
use crate::rng::{gaussian, stream_rng};
use crate::synthetic::SyntheticSetup;

/// Every support / coefficient estimator the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Omp,
    OmpLike,
    Thresholding,
    RandomMmse,
    MessagePassing,
    Annealing,
    ZeroW,
    Exhaustive,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Omp,
        Algorithm::OmpLike,
        Algorithm::Thresholding,
        Algorithm::RandomMmse,
        Algorithm::MessagePassing,
        Algorithm::Annealing,
        Algorithm::ZeroW,
        Algorithm::Exhaustive,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Omp => "omp",
            Algorithm::OmpLike => "omp_like",
            Algorithm::Thresholding => "thresholding",
            Algorithm::RandomMmse => "random_mmse",
            Algorithm::MessagePassing => "message_passing",
            Algorithm::Annealing => "annealing",
            Algorithm::ZeroW => "zero_w",
            Algorithm::Exhaustive => "exhaustive",
            Algorithm::Oracle => "oracle",
        }
    }

    /// Whether the estimate needs the true support.
    pub fn needs_truth(self) -> bool {
        self == Algorithm::Oracle
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                Error::invalid(format!("unknown algorithm `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Options shared by the estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PursuitOptions {
    /// OMP stopping constant `η`.
    pub eta: f64,
    /// Runs of the randomized pursuit.
    pub j0: usize,
    /// Band order for message passing.
    pub band_order: Option<usize>,
    pub t_initial: f64,
    pub t_final: f64,
    /// Annealing budget as a multiple of the OMP-like pursuit's `Val`
    /// evaluations on the same signal.
    pub annealing_budget_factor: f64,
}

impl Default for PursuitOptions {
    fn default() -> Self {
        Self {
            eta: 1.0,
            j0: 10,
            band_order: None,
            t_initial: 600.0,
            t_final: 1.0,
            annealing_budget_factor: 1.0,
        }
    }
}

/// Support and coefficient estimate for one signal. For the randomized
/// pursuit the support is the `k` largest coefficients, `k` being the true
/// cardinality when known and the rounded mean run cardinality otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub support: SupportPattern,
    pub coeffs: DVector<f64>,
}

/// Runs `algo` on one signal. `truth` is required by the oracle and used by
/// the randomized pursuit to pick its support size.
pub fn estimate(
    algo: Algorithm,
    model: &SignalModel,
    y: &DVector<f64>,
    truth: Option<&SupportPattern>,
    opts: &PursuitOptions,
    seed: u64,
) -> Result<Estimate> {
    let with_oracle = |support: SupportPattern| -> Result<Estimate> {
        let coeffs = oracle_coefficients(model, y, &support)?.into_coeffs();
        Ok(Estimate { support, coeffs })
    };
    match algo {
        Algorithm::Omp => with_oracle(omp_baseline(model, y, opts.eta)?),
        Algorithm::OmpLike => with_oracle(omp_like_map_traced(model, y, false)?.0),
        Algorithm::Thresholding => with_oracle(thresholding_like_map(model, y)?),
        Algorithm::MessagePassing => {
            let band = opts
                .band_order
                .ok_or_else(|| Error::invalid("message passing needs a band order"))?;
            with_oracle(map_message_passing(model, y, band)?)
        }
        Algorithm::ZeroW => with_oracle(map_zero_w(model, y)?),
        Algorithm::Exhaustive => with_oracle(exhaustive_map(model, y)?),
        Algorithm::Oracle => {
            let s = truth.ok_or_else(|| Error::invalid("the oracle needs the true support"))?;
            with_oracle(s.clone())
        }
        Algorithm::Annealing => {
            let (_, trace) = omp_like_map_traced(model, y, false)?;
            let budget = (trace.val_evaluations as f64 * opts.annealing_budget_factor).round() as usize;
            let schedule = AnnealingSchedule::matched_budget(budget, model.atoms(), opts.t_initial, opts.t_final)?;
            with_oracle(gibbs_annealing_map(model, y, &schedule, seed)?)
        }
        Algorithm::RandomMmse => {
            let runs = crate::greedy::random_omp_mmse_runs(model, y, opts.j0, seed)?;
            let k = match truth {
                Some(s) => s.cardinality(),
                None => {
                    let mean = runs.supports.iter().map(|s| s.cardinality()).sum::<usize>() as f64
                        / runs.supports.len() as f64;
                    mean.round() as usize
                }
            };
            Ok(Estimate {
                support: rand_omp_support(&runs.estimate, k),
                coeffs: runs.estimate,
            })
        }
    }
}

/// Clean synthetic data: a model (noise level unset), Gibbs-sampled supports
/// and Gaussian coefficients.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub model: SignalModel,
    pub supports: Vec<SupportPattern>,
    pub coeffs: Vec<DVector<f64>>,
    pub clean: Vec<DVector<f64>>,
}

impl SyntheticData {
    pub fn generate(setup: &SyntheticSetup, count: usize, gibbs: &GibbsConfig, seed: u64) -> Result<Self> {
        let model = setup.model(1.0, stream_rng(seed, 0).random())?;
        Self::from_model(model, count, gibbs, seed)
    }

    pub fn from_model(model: SignalModel, count: usize, gibbs: &GibbsConfig, seed: u64) -> Result<Self> {
        let supports = gibbs_sample_supports(model.prior(), count, gibbs, stream_rng(seed, 1).random())?;
        let coeff_key: u64 = stream_rng(seed, 2).random();
        let coeffs: Vec<DVector<f64>> = supports
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                let mut rng = stream_rng(coeff_key, l as u64);
                let mut x = DVector::zeros(model.atoms());
                for &i in s.indices() {
                    x[i] = model.coef_vars()[i].sqrt() * gaussian(&mut rng);
                }
                x
            })
            .collect();
        let clean = coeffs.iter().map(|x| model.dictionary() * x).collect();
        Ok(Self {
            model,
            supports,
            coeffs,
            clean,
        })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn mean_cardinality(&self) -> f64 {
        self.supports.iter().map(|s| s.cardinality() as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Clean signals plus white noise of level `sigma`. The noise of signal
    /// `l` depends only on `(seed, sigma, l)`.
    pub fn noisy(&self, sigma: f64, seed: u64) -> Vec<DVector<f64>> {
        let key = seed ^ sigma.to_bits().rotate_left(17);
        self.clean
            .par_iter()
            .enumerate()
            .map(|(l, c)| {
                let mut rng = stream_rng(key, l as u64);
                c.map(|v| v + sigma * gaussian(&mut rng))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub setup: SyntheticSetup,
    pub signals: usize,
    pub sigmas: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub gibbs: GibbsConfig,
    pub pursuit: PursuitOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            setup: SyntheticSetup::unitary(),
            signals: 1000,
            sigmas: vec![2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            algorithms: vec![
                Algorithm::Omp,
                Algorithm::OmpLike,
                Algorithm::RandomMmse,
                Algorithm::MessagePassing,
                Algorithm::Annealing,
                Algorithm::Oracle,
            ],
            seed: 0,
            gibbs: GibbsConfig::default(),
            pursuit: PursuitOptions {
                band_order: Some(9),
                ..PursuitOptions::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        if self.signals == 0 {
            return Err(Error::invalid("signal count must be positive"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise levels must be positive"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("no algorithms selected"));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(Error::invalid("algorithms listed twice"));
        }
        Ok(())
    }
}

/// Aggregated metrics of one algorithm at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub sigma: f64,
    pub algorithm: Algorithm,
    pub support_error: f64,
    /// Standard error of the support error over signals.
    pub support_error_se: f64,
    pub coef_error: f64,
    pub signal_error: f64,
    pub mean_cardinality: f64,
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
    /// Per-signal support-error terms `1 - |s ∩ ŝ| / max(|s|, |ŝ|)`, indexed
    /// like `cells`.
    pub support_terms: Vec<Vec<f64>>,
    pub mean_true_cardinality: f64,
}

impl BenchResult {
    pub fn cell(&self, sigma: f64, algo: Algorithm) -> Option<(&BenchCell, &[f64])> {
        self.cells
            .iter()
            .position(|c| c.sigma == sigma && c.algorithm == algo)
            .map(|k| (&self.cells[k], self.support_terms[k].as_slice()))
    }
}

fn support_term(truth: &SupportPattern, est: &SupportPattern) -> f64 {
    let denom = truth.cardinality().max(est.cardinality());
    if denom == 0 {
        0.0
    } else {
        1.0 - truth.intersection_size(est) as f64 / denom as f64
    }
}

/// Mean and standard error of `a - b` over paired samples.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len().min(b.len());
    if n == 0 {
        return (0.0, 0.0);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs every algorithm on the same data at every noise level.
pub fn run_synthetic_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let data = SyntheticData::generate(&config.setup, config.signals, &config.gibbs, config.seed)?;
    benchmark_on(&data, config)
}

pub fn benchmark_on(data: &SyntheticData, config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let n = data.len() as f64;
    let dict = data.model.dictionary();
    let mut cells = Vec::new();
    let mut terms = Vec::new();
    let noise_key: u64 = stream_rng(config.seed, 3).random();
    for &sigma in &config.sigmas {
        let model = data.model.with_noise_std(sigma)?;
        let signals = data.noisy(sigma, noise_key);
        for &algo in &config.algorithms {
            let algo_key: u64 = stream_rng(config.seed ^ sigma.to_bits(), 4 + algo as u64).random();
            let estimates: Vec<Estimate> = signals
                .par_iter()
                .enumerate()
                .map(|(l, y)| {
                    let seed = stream_rng(algo_key, l as u64).random();
                    estimate(algo, &model, y, Some(&data.supports[l]), &config.pursuit, seed)
                })
                .collect::<Result<_>>()?;
            let t: Vec<f64> = estimates
                .iter()
                .zip(&data.supports)
                .map(|(e, s)| support_term(s, &e.support))
                .collect();
            let mean = t.iter().sum::<f64>() / n;
            let se = if t.len() > 1 {
                (t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            let (mut ce, mut cd, mut se_num, mut se_den) = (0.0, 0.0, 0.0, 0.0);
            for (e, (x, clean)) in estimates.iter().zip(data.coeffs.iter().zip(&data.clean)) {
                ce += (&e.coeffs - x).norm_squared();
                cd += x.norm_squared();
                se_num += (dict * &e.coeffs - clean).norm_squared();
                se_den += clean.norm_squared();
            }
            let ratio = |a: f64, b: f64| if b > 0.0 { (a / b).sqrt() } else { 0.0 };
            cells.push(BenchCell {
                sigma,
                algorithm: algo,
                support_error: mean,
                support_error_se: se,
                coef_error: ratio(ce, cd),
                signal_error: ratio(se_num, se_den),
                mean_cardinality: estimates.iter().map(|e| e.support.cardinality() as f64).sum::<f64>() / n,
            });
            terms.push(t);
        }
    }
    Ok(BenchResult {
        cells,
        support_terms: terms,
        mean_true_cardinality: data.mean_cardinality(),
    })
}

/// The four denoising schemes compared on patch data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMethod {
    UnitaryOmp,
    UnitaryBm,
    OvercompleteOmp,
    OvercompleteBm,
}

impl DenoiseMethod {
    pub const ALL: [DenoiseMethod; 4] = [
        DenoiseMethod::UnitaryOmp,
        DenoiseMethod::UnitaryBm,
        DenoiseMethod::OvercompleteOmp,
        DenoiseMethod::OvercompleteBm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DenoiseMethod::UnitaryOmp => "unitary_omp",
            DenoiseMethod::UnitaryBm => "unitary_bm",
            DenoiseMethod::OvercompleteOmp => "overcomplete_omp",
            DenoiseMethod::OvercompleteBm => "overcomplete_bm",
        }
    }
}

impl fmt::Display for DenoiseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DenoiseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown denoising method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    pub sigmas: Vec<f64>,
    pub methods: Vec<DenoiseMethod>,
    pub overcomplete_atoms: usize,
    /// Band order of the unitary BM scheme.
    pub band_order: usize,
    pub eta: f64,
    pub seed: u64,
    /// Settings of the adaptive scheme; its pursuit and band order are set
    /// per method.
    pub adaptive: AdaptiveConfig,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![2.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            methods: DenoiseMethod::ALL.to_vec(),
            overcomplete_atoms: 256,
            band_order: 9,
            eta: 1.0,
            seed: 0,
            adaptive: AdaptiveConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub sigma: f64,
    pub method: DenoiseMethod,
    pub rmse: f64,
}

/// Standard OMP with least-squares coefficients, reconstructed.
pub fn omp_denoise(dictionary: &DMatrix<f64>, noise_std: f64, signals: &[DVector<f64>], eta: f64) -> Result<Vec<DVector<f64>>> {
    let m = dictionary.ncols();
    let model = SignalModel::new(
        dictionary.clone(),
        DVector::from_element(m, 1.0),
        noise_std,
        BoltzmannParams::independent(DVector::zeros(m))?,
    )?;
    signals
        .par_iter()
        .map(|y| omp_baseline_detailed(&model, y, eta).map(|r| dictionary * r.coeffs))
        .collect()
}

fn representations_to_signals(dictionary: &DMatrix<f64>, reps: &[SparseRepresentation]) -> Vec<DVector<f64>> {
    reps.iter().map(|r| dictionary * r.coeffs()).collect()
}

/// Score trace and learned parameters of one adaptive run.
#[derive(Clone, Debug)]
pub struct DenoiseTrace {
    pub sigma: f64,
    pub method: DenoiseMethod,
    pub trace: Vec<AdaptiveIteration>,
    pub snapshots: Vec<(BoltzmannParams, DVector<f64>)>,
    pub permutation: Vec<usize>,
}

/// Adds noise to the (DC-free) patches at each level, denoises them with
/// every method and reports the RMSE per pixel against the clean patches.
pub fn run_denoising(clean: &PatchSet, config: &DenoiseConfig) -> Result<Vec<DenoiseRow>> {
    run_denoising_detailed(clean, config).map(|(rows, _)| rows)
}

/// As [`run_denoising`], also returning the adaptive runs' traces.
pub fn run_denoising_detailed(clean: &PatchSet, config: &DenoiseConfig) -> Result<(Vec<DenoiseRow>, Vec<DenoiseTrace>)> {
    if clean.is_empty() {
        return Err(Error::invalid("no patches given"));
    }
    let n = clean.dim();
    let unitary = dct_unitary(n)?;
    let needs_over = config
        .methods
        .iter()
        .any(|m| matches!(m, DenoiseMethod::OvercompleteOmp | DenoiseMethod::OvercompleteBm));
    let over = if needs_over {
        Some(dct_overcomplete(n, config.overcomplete_atoms)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut keep = |sigma: f64, method: DenoiseMethod, res: &crate::adaptive::AdaptiveResult| {
        traces.push(DenoiseTrace {
            sigma,
            method,
            trace: res.trace.clone(),
            snapshots: res.snapshots.clone(),
            permutation: res.permutation.clone(),
        })
    };
    for &sigma in &config.sigmas {
        let noisy = add_noise(clean, sigma, config.seed ^ sigma.to_bits())?;
        for &method in &config.methods {
            let denoised = match method {
                DenoiseMethod::UnitaryOmp => omp_denoise(&unitary, sigma, &noisy.patches, config.eta)?,
                DenoiseMethod::OvercompleteOmp => {
                    omp_denoise(over.as_ref().expect("built above"), sigma, &noisy.patches, config.eta)?
                }
                DenoiseMethod::UnitaryBm => {
                    let cfg = AdaptiveConfig {
                        pursuit: PursuitKind::MessagePassing,
                        band_order: Some(config.band_order),
                        ..config.adaptive.clone()
                    };
                    let res = adaptive_recover(&noisy.patches, &unitary, sigma, &cfg)?;
                    keep(sigma, method, &res);
                    representations_to_signals(&unitary, &res.representations)
                }
                DenoiseMethod::OvercompleteBm => {
                    let dict = over.as_ref().expect("built above");
                    let cfg = AdaptiveConfig {
                        pursuit: PursuitKind::OmpLike,
                        band_order: None,
                        ..config.adaptive.clone()
                    };
                    let res = adaptive_recover(&noisy.patches, dict, sigma, &cfg)?;
                    keep(sigma, method, &res);
                    representations_to_signals(dict, &res.representations)
                }
            };
            rows.push(DenoiseRow {
                sigma,
                method,
                rmse: rmse_per_pixel(&clean.patches, &denoised)?,
            });
        }
    }
    Ok((rows, traces))
}

/// DC-free patches drawn from the generative model of `setup` (which must
/// have a square signal dimension).
pub fn synthetic_patches(setup: &SyntheticSetup, count: usize, gibbs: &GibbsConfig, seed: u64) -> Result<PatchSet> {
    let side = (setup.signal_dim as f64).sqrt().round() as usize;
    if side * side != setup.signal_dim {
        return Err(Error::invalid("patch dimension must be a perfect square"));
    }
    let data = SyntheticData::generate(setup, count, gibbs, seed)?;
    PatchSet::from_raw(data.clean, side, "synthetic")
}

/// Convenience wrapper used by the CLI: the randomized pursuit's dense
/// estimate for one signal.
pub fn random_mmse_estimate(model: &SignalModel, y: &DVector<f64>, j0: usize, seed: u64) -> Result<DVector<f64>> {
    random_omp_mmse(model, y, j0, seed).map(|r| r.into_coeffs())
}
