//! Joint estimation of sparse representations and model parameters from
//! signals only, by alternating pursuit and model update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::map_message_passing;
use crate::greedy::{omp_like_map, random_omp_mmse_runs, thresholding_like_map};
use crate::learning::{band_projection, estimate_variances_from, mpl_sesop_fit, SesopConfig};
use crate::model::{
    log_posterior_support_score, oracle_coefficients, BoltzmannParams, SignalModel, SparseRepresentation,
    SupportPattern,
};
use crate::rng::stream_rng;

/// Pursuit used in the sparse-coding stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PursuitKind {
    MessagePassing,
    OmpLike,
    Thresholding,
    RandomMmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    /// Number of pursuit / model-update rounds before the final pursuit.
    pub iterations: usize,
    pub pursuit: PursuitKind,
    /// Band order imposed on `W` after every model update.
    pub band_order: Option<usize>,
    pub init_variance: f64,
    /// Expected number of active atoms under the initial i.i.d. prior.
    pub init_cardinality: f64,
    pub variance_fallback: f64,
    /// Runs per signal of the randomized pursuit.
    pub j0: usize,
    pub seed: u64,
    pub learner: SesopConfig,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            pursuit: PursuitKind::OmpLike,
            band_order: None,
            init_variance: 2500.0,
            init_cardinality: 10.0,
            variance_fallback: 2500.0,
            j0: 10,
            seed: 0,
            learner: SesopConfig::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self, dictionary: &DMatrix<f64>) -> Result<()> {
        let m = dictionary.ncols();
        if self.pursuit == PursuitKind::MessagePassing && self.band_order.is_none() {
            return Err(Error::invalid("message passing needs a band order"));
        }
        if !(self.init_variance > 0.0 && self.variance_fallback > 0.0) {
            return Err(Error::invalid("variances must be positive"));
        }
        if !(self.init_cardinality > 0.0 && self.init_cardinality < m as f64) {
            return Err(Error::invalid(format!(
                "initial cardinality must lie strictly between 0 and {m}"
            )));
        }
        if self.j0 == 0 {
            return Err(Error::invalid("j0 must be positive"));
        }
        if self.band_order == Some(0) {
            return Err(Error::invalid("band order must be at least 1"));
        }
        self.learner.validate()
    }

    /// `b_i = ½ ln(p / (1 - p))` with `p = k / m`.
    pub fn initial_prior(&self, m: usize) -> Result<BoltzmannParams> {
        BoltzmannParams::iid(m, self.init_cardinality / m as f64)
    }
}

/// Aggregates recorded after each pursuit stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveIteration {
    pub iteration: usize,
    /// Sum over signals of the posterior score of the selected support.
    pub total_score: f64,
    pub mean_cardinality: f64,
}

/// Final state of the adaptive scheme, in the original atom order.
#[derive(Clone, Debug)]
pub struct AdaptiveResult {
    pub representations: Vec<SparseRepresentation>,
    pub supports: Vec<SupportPattern>,
    pub params: BoltzmannParams,
    pub variances: DVector<f64>,
    /// Relabeling accumulated by the band projections, `permutation[new] =
    /// old`; `params.permuted(&permutation)` is banded.
    pub permutation: Vec<usize>,
    pub trace: Vec<AdaptiveIteration>,
    /// Learned parameters after every model update (original atom order).
    pub snapshots: Vec<(BoltzmannParams, DVector<f64>)>,
}

/// One signal's pursuit output: the coefficient estimate and the support
/// that represents it for learning and scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Pursued {
    pub representation: SparseRepresentation,
    pub support: SupportPattern,
    /// Coefficients restricted to `support`, used for variance estimation.
    pub restricted: SparseRepresentation,
}

/// Runs `kind` on every signal. The randomized pursuit uses one seed per
/// signal derived from `seed`, and its support is the set of atoms active in
/// at least half of the runs.
pub fn pursue_all(
    model: &SignalModel,
    signals: &[DVector<f64>],
    kind: PursuitKind,
    band_order: Option<usize>,
    j0: usize,
    seed: u64,
) -> Result<Vec<Pursued>> {
    signals
        .par_iter()
        .enumerate()
        .map(|(l, y)| pursue_one(model, y, kind, band_order, j0, stream_rng(seed, l as u64).random()))
        .collect()
}

fn pursue_one(
    model: &SignalModel,
    y: &DVector<f64>,
    kind: PursuitKind,
    band_order: Option<usize>,
    j0: usize,
    seed: u64,
) -> Result<Pursued> {
    let support = match kind {
        PursuitKind::MessagePassing => {
            let band = band_order.ok_or_else(|| Error::invalid("message passing needs a band order"))?;
            map_message_passing(model, y, band)?
        }
        PursuitKind::OmpLike => omp_like_map(model, y)?,
        PursuitKind::Thresholding => thresholding_like_map(model, y)?,
        PursuitKind::RandomMmse => {
            let runs = random_omp_mmse_runs(model, y, j0, seed)?;
            let support = runs.majority_support();
            let coeffs = DVector::from_fn(runs.estimate.len(), |i, _| {
                if support.is_active(i) {
                    runs.estimate[i]
                } else {
                    0.0
                }
            });
            return Ok(Pursued {
                restricted: SparseRepresentation::new(coeffs, support.clone())?,
                representation: SparseRepresentation::dense(runs.estimate),
                support,
            });
        }
    };
    let representation = oracle_coefficients(model, y, &support)?;
    Ok(Pursued {
        restricted: representation.clone(),
        representation,
        support,
    })
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Alternates (a) pursuit of every signal under the current parameters and
/// (b) re-estimation of the variances and of `(W, b)` by pseudo-likelihood,
/// followed by band projection when a band order is set. `iterations` rounds
/// are followed by a final pursuit under the last parameters; with zero
/// rounds this is a plain pursuit under the i.i.d. initial prior.
pub fn adaptive_recover(
    signals: &[DVector<f64>],
    dictionary: &DMatrix<f64>,
    noise_std: f64,
    config: &AdaptiveConfig,
) -> Result<AdaptiveResult> {
    config.validate(dictionary)?;
    if signals.is_empty() {
        return Err(Error::invalid("no signals given"));
    }
    let m = dictionary.ncols();
    let base = SignalModel::new(
        dictionary.clone(),
        DVector::from_element(m, config.init_variance),
        noise_std,
        config.initial_prior(m)?,
    )?;
    if config.pursuit == PursuitKind::MessagePassing && !base.is_unitary() {
        return Err(Error::precondition("message passing needs a unitary dictionary"));
    }

    // `working` holds the model in the current (possibly relabeled) atom
    // order; `perm[new] = old`.
    let mut perm: Vec<usize> = (0..m).collect();
    let mut working = base.clone();
    let mut learned: Option<BoltzmannParams> = None;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();

    for iteration in 0..=config.iterations {
        let seed = stream_rng(config.seed, iteration as u64).random();
        let pursued = pursue_all(&working, signals, config.pursuit, config.band_order, config.j0, seed)?;
        let scores: Vec<f64> = pursued
            .par_iter()
            .zip(signals)
            .map(|(p, y)| log_posterior_support_score(&working, y, &p.support))
            .collect::<Result<_>>()?;
        trace.push(AdaptiveIteration {
            iteration,
            total_score: scores.iter().sum(),
            mean_cardinality: pursued.iter().map(|p| p.support.cardinality() as f64).sum::<f64>()
                / signals.len() as f64,
        });

        if iteration == config.iterations {
            let back = inverse(&perm);
            let representations = pursued.iter().map(|p| p.representation.permuted(&back)).collect();
            let supports = pursued.iter().map(|p| p.support.permuted(&back)).collect();
            return Ok(AdaptiveResult {
                representations,
                supports,
                params: working.prior().permuted(&back)?,
                variances: DVector::from_fn(m, |i, _| working.coef_vars()[back[i]]),
                permutation: perm,
                trace,
                snapshots,
            });
        }

        let views: Vec<&SparseRepresentation> = pursued.iter().map(|p| &p.restricted).collect();
        let variances = estimate_variances_from(&views, config.variance_fallback)?;
        let supports: Vec<SupportPattern> = pursued.into_iter().map(|p| p.support).collect();
        let fit = mpl_sesop_fit(&supports, &config.learner, learned.as_ref())?;
        let (params, variances) = match config.band_order {
            Some(band) => {
                let proj = band_projection(&fit.params, &variances, band)?;
                perm = proj.permutation.iter().map(|&p| perm[p]).collect();
                let dict = DMatrix::from_fn(dictionary.nrows(), m, |r, c| dictionary[(r, perm[c])]);
                working = SignalModel::new(dict, working.coef_vars().clone(), noise_std, working.prior().clone())?;
                (proj.params, proj.variances)
            }
            None => (fit.params, variances),
        };
        working = working.with_prior(params.clone())?.with_coef_vars(variances.clone())?;
        let back = inverse(&perm);
        snapshots.push((
            params.permuted(&back)?,
            DVector::from_fn(m, |i, _| variances[back[i]]),
        ));
        learned = Some(params);
    }
    unreachable!("the final round returns")
}
