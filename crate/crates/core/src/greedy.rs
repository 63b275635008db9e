//! Greedy approximations of the MAP support and the MMSE coefficients for
//! arbitrary dictionaries and interaction matrices, plus the two reference
//! pursuits they are compared against (plain OMP and annealed Gibbs sampling).

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Border, GrowingCholesky};
use crate::model::{
    posterior_bias, BoltzmannParams, Observation, SignalModel, SparseRepresentation, SupportPattern,
};
use crate::rng::rng_from_seed;

/// Diagnostics for one greedy MAP run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GreedyTrace {
    pub initial_score: f64,
    /// Atoms in the order they were tried; the last one was rejected when
    /// `rejected_last` is set.
    pub chosen_indices: Vec<usize>,
    /// Posterior score after each entry of `chosen_indices`.
    pub scores: Vec<f64>,
    pub rejected_last: bool,
    /// `(atom, Val)` for every candidate, per iteration, when requested.
    pub val_tables: Option<Vec<Vec<(usize, f64)>>>,
    /// Number of `Val` evaluations performed.
    pub val_evaluations: usize,
}

/// Incremental state of a greedy pursuit: current support, its factor and
/// its exact posterior score.
struct GreedyState<'a> {
    obs: Observation<'a>,
    factor: GrowingCholesky,
    support: SupportPattern,
    score: f64,
}

struct Candidate {
    border: Border,
    /// `Val(i)`.
    val: f64,
    /// Exact score of the augmented support.
    score: f64,
}

impl<'a> GreedyState<'a> {
    fn new(model: &'a SignalModel, y: &'a DVector<f64>) -> Result<Self> {
        let obs = Observation::new(model, y)?;
        let support = SupportPattern::empty(model.atoms());
        let score = obs.prior_term(&support);
        Ok(Self {
            obs,
            factor: GrowingCholesky::new(),
            support,
            score,
        })
    }

    fn from_support(model: &'a SignalModel, y: &'a DVector<f64>, support: &SupportPattern) -> Result<Self> {
        check_dim("support", model.atoms(), support.dim())?;
        let mut state = Self::new(model, y)?;
        for &i in support.indices() {
            let cand = state
                .candidate(i)
                .ok_or_else(|| Error::Numeric("Q_s lost positive definiteness".into()))?;
            state.accept(cand);
        }
        Ok(state)
    }

    fn model(&self) -> &'a SignalModel {
        self.obs.model()
    }

    fn max_cardinality(&self) -> usize {
        self.model().signal_dim().min(self.model().atoms())
    }

    fn candidate(&self, atom: usize) -> Option<Candidate> {
        let model = self.model();
        let border = self.factor.border(model, self.obs.aty(), atom)?;
        let noise_var = model.noise_var();
        let prior = model.prior();
        let interaction = prior.local_field(atom, self.support.spins());
        let data = self.factor.data() + border.data_gain();
        let log_det = self.factor.log_det() + border.log_det_gain();
        let val = data / (2.0 * noise_var) - 0.5 * log_det + 2.0 * interaction
            - 0.5 * model.coef_vars()[atom].ln();
        let score = self.score + border.data_gain() / (2.0 * noise_var) - 0.5 * border.log_det_gain()
            + 2.0 * interaction
            - 0.5 * self.obs.log_snr(atom);
        Some(Candidate { border, val, score })
    }

    fn candidates(&self) -> Vec<Candidate> {
        (0..self.model().atoms())
            .filter(|&i| !self.support.is_active(i))
            .filter_map(|i| self.candidate(i))
            .collect()
    }

    fn accept(&mut self, cand: Candidate) {
        self.support = self.support.with_atom(cand.border.atom);
        self.score = cand.score;
        self.factor.push(cand.border);
    }

    fn coefficients(&self) -> SparseRepresentation {
        let m = self.model().atoms();
        let mut coeffs = DVector::zeros(m);
        for (&i, x) in self.factor.atoms().iter().zip(self.factor.solve()) {
            coeffs[i] = x;
        }
        SparseRepresentation::new(coeffs, self.support.clone())
            .expect("factor atoms coincide with the support")
    }
}

/// First maximum; ties go to the lower atom index because candidates are
/// generated in ascending order.
fn argmax_val(cands: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, c) in cands.iter().enumerate() {
        if best.is_none_or(|b| c.val > cands[b].val) {
            best = Some(k);
        }
    }
    best
}

/// `Val(i)` for adding inactive atom `i` to `prev`.
///
/// Differs from the full posterior score of `prev ∪ {i}` by a quantity that
/// does not depend on `i`.
pub fn val_score(model: &SignalModel, y: &DVector<f64>, prev: &SupportPattern, i: usize) -> Result<f64> {
    if i >= model.atoms() {
        return Err(Error::invalid(format!("atom {i} out of range")));
    }
    if prev.dim() == model.atoms() && prev.is_active(i) {
        return Err(Error::invalid(format!("atom {i} is already active")));
    }
    let state = GreedyState::from_support(model, y, prev)?;
    state
        .candidate(i)
        .map(|c| c.val)
        .ok_or_else(|| Error::Numeric("Q_s lost positive definiteness".into()))
}

/// OMP-like MAP pursuit: repeatedly add the atom with the largest `Val`
/// until the posterior stops increasing (or `min(n, m)` atoms are active).
pub fn omp_like_map(model: &SignalModel, y: &DVector<f64>) -> Result<SupportPattern> {
    omp_like_map_traced(model, y, false).map(|(s, _)| s)
}

pub fn omp_like_map_traced(
    model: &SignalModel,
    y: &DVector<f64>,
    keep_val_tables: bool,
) -> Result<(SupportPattern, GreedyTrace)> {
    let mut state = GreedyState::new(model, y)?;
    let mut trace = GreedyTrace {
        initial_score: state.score,
        val_tables: keep_val_tables.then(Vec::new),
        ..Default::default()
    };
    while state.support.cardinality() < state.max_cardinality() {
        let mut cands = state.candidates();
        trace.val_evaluations += cands.len();
        if let Some(tables) = trace.val_tables.as_mut() {
            tables.push(cands.iter().map(|c| (c.border.atom, c.val)).collect());
        }
        let Some(best) = argmax_val(&cands) else { break };
        let cand = cands.swap_remove(best);
        trace.chosen_indices.push(cand.border.atom);
        trace.scores.push(cand.score);
        if cand.score > state.score {
            state.accept(cand);
        } else {
            trace.rejected_last = true;
            break;
        }
    }
    Ok((state.support, trace))
}

/// Thresholding-like MAP pursuit: rank atoms once by `Val` from the empty
/// support and return the best-scoring prefix of that ranking.
pub fn thresholding_like_map(model: &SignalModel, y: &DVector<f64>) -> Result<SupportPattern> {
    let mut state = GreedyState::new(model, y)?;
    let mut ranked: Vec<(usize, f64)> = state
        .candidates()
        .into_iter()
        .map(|c| (c.border.atom, c.val))
        .collect();
    // Stable sort keeps ascending atom order among equal values.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut best_score = state.score;
    let mut best_len = 0;
    for (k, &(atom, _)) in ranked.iter().enumerate() {
        let Some(cand) = state.candidate(atom) else { break };
        state.accept(cand);
        if state.score > best_score {
            best_score = state.score;
            best_len = k + 1;
        }
    }
    let chosen: Vec<usize> = ranked[..best_len].iter().map(|&(i, _)| i).collect();
    SupportPattern::from_indices(model.atoms(), &chosen)
}

/// Output of the randomized pursuit: the averaged coefficients and the
/// support reached by each run.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomPursuit {
    pub estimate: DVector<f64>,
    pub supports: Vec<SupportPattern>,
}

impl RandomPursuit {
    /// Fraction of runs in which each atom ended up active.
    pub fn inclusion_frequencies(&self) -> DVector<f64> {
        let m = self.estimate.len();
        let mut freq = DVector::zeros(m);
        for s in &self.supports {
            for &i in s.indices() {
                freq[i] += 1.0;
            }
        }
        freq / self.supports.len().max(1) as f64
    }

    /// Atoms active in at least half the runs.
    pub fn majority_support(&self) -> SupportPattern {
        let freq = self.inclusion_frequencies();
        let idx: Vec<usize> = (0..freq.len()).filter(|&i| freq[i] >= 0.5).collect();
        SupportPattern::from_indices(freq.len(), &idx).expect("indices are distinct and in range")
    }
}

/// Randomized OMP-like pursuit approximating the MMSE estimate: `j0` greedy
/// runs that draw each new atom with probability `∝ exp(Val(i))`, averaged.
pub fn random_omp_mmse(model: &SignalModel, y: &DVector<f64>, j0: usize, seed: u64) -> Result<SparseRepresentation> {
    random_omp_mmse_runs(model, y, j0, seed).map(|r| SparseRepresentation::dense(r.estimate))
}

pub fn random_omp_mmse_runs(model: &SignalModel, y: &DVector<f64>, j0: usize, seed: u64) -> Result<RandomPursuit> {
    if j0 == 0 {
        return Err(Error::invalid("number of runs must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut sum = DVector::zeros(model.atoms());
    let mut supports = Vec::with_capacity(j0);
    for _ in 0..j0 {
        let mut state = GreedyState::new(model, y)?;
        while state.support.cardinality() < state.max_cardinality() {
            let mut cands = state.candidates();
            if cands.is_empty() {
                break;
            }
            let pick = sample_softmax(&cands, &mut rng);
            let cand = cands.swap_remove(pick);
            if cand.score > state.score {
                state.accept(cand);
            } else {
                break;
            }
        }
        sum += state.coefficients().coeffs();
        supports.push(state.support);
    }
    Ok(RandomPursuit {
        estimate: sum / j0 as f64,
        supports,
    })
}

fn sample_softmax<R: Rng + ?Sized>(cands: &[Candidate], rng: &mut R) -> usize {
    let top = cands.iter().map(|c| c.val).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = cands.iter().map(|c| (c.val - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    // Rounding left `u` past the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Result of the plain OMP reference pursuit.
#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult {
    pub support: SupportPattern,
    /// Least-squares coefficients on the support.
    pub coeffs: DVector<f64>,
    /// `‖r‖₂` before each iteration and after the last one.
    pub residual_norms: Vec<f64>,
}

/// Standard OMP stopped when `‖y - A_s x_s‖₂ < η √n σ_e` (least-squares
/// `x_s`) or when `min(n, m)` atoms are active.
pub fn omp_baseline(model: &SignalModel, y: &DVector<f64>, eta: f64) -> Result<SupportPattern> {
    omp_baseline_detailed(model, y, eta).map(|r| r.support)
}

pub fn omp_baseline_detailed(model: &SignalModel, y: &DVector<f64>, eta: f64) -> Result<OmpResult> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("stopping constant {eta} must be positive")));
    }
    check_dim("signal", model.signal_dim(), y.len())?;
    let a = model.dictionary();
    let gram = model.gram();
    let (n, m) = (model.signal_dim(), model.atoms());
    let threshold = eta * (n as f64).sqrt() * model.noise_std();
    let aty = a.tr_mul(y);

    let mut active: Vec<usize> = Vec::new();
    let mut is_active = vec![false; m];
    let mut chol_rows: Vec<Vec<f64>> = Vec::new();
    let mut coeffs_s: Vec<f64> = Vec::new();
    let mut residual = y.clone();
    let mut norms = vec![residual.norm()];

    while *norms.last().unwrap() >= threshold && active.len() < n.min(m) {
        let corr = a.tr_mul(&residual);
        let mut pick: Option<(usize, f64)> = None;
        for i in (0..m).filter(|&i| !is_active[i]) {
            let norm = gram[(i, i)].sqrt();
            if norm == 0.0 {
                continue;
            }
            let c = corr[i].abs() / norm;
            if pick.is_none_or(|(_, best)| c > best) {
                pick = Some((i, c));
            }
        }
        let Some((atom, _)) = pick else { break };
        // Border the Cholesky factor of A_sᵀA_s.
        let k = active.len();
        let mut w = Vec::with_capacity(k + 1);
        for r in 0..k {
            let mut acc = gram[(active[r], atom)];
            for (c, wc) in w.iter().enumerate() {
                acc -= chol_rows[r][c] * wc;
            }
            w.push(acc / chol_rows[r][r]);
        }
        let pivot_sq = gram[(atom, atom)] - w.iter().map(|v| v * v).sum::<f64>();
        if pivot_sq <= 1e-12 * gram[(atom, atom)] {
            break;
        }
        w.push(pivot_sq.sqrt());
        chol_rows.push(w);
        active.push(atom);
        is_active[atom] = true;

        // Solve A_sᵀA_s x = A_sᵀy.
        let k = active.len();
        let mut z: Vec<f64> = Vec::with_capacity(k);
        for r in 0..k {
            let mut acc = aty[active[r]];
            for (c, zc) in z.iter().enumerate() {
                acc -= chol_rows[r][c] * zc;
            }
            z.push(acc / chol_rows[r][r]);
        }
        for r in (0..k).rev() {
            let mut acc = z[r];
            for c in (r + 1)..k {
                acc -= chol_rows[c][r] * z[c];
            }
            z[r] = acc / chol_rows[r][r];
        }
        coeffs_s = z;
        residual = y.clone();
        for (&i, &x) in active.iter().zip(&coeffs_s) {
            residual.axpy(-x, &a.column(i), 1.0);
        }
        norms.push(residual.norm());
    }

    let mut coeffs = DVector::zeros(m);
    for (&i, &x) in active.iter().zip(&coeffs_s) {
        coeffs[i] = x;
    }
    Ok(OmpResult {
        support: SupportPattern::from_indices(m, &active)?,
        coeffs,
        residual_norms: norms,
    })
}

/// Geometric cooling schedule `T_{k+1} = β T_k` from `t_initial` down to
/// `t_final`, with an optional cap on the total number of site updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingSchedule {
    pub t_initial: f64,
    pub t_final: f64,
    pub beta: f64,
    pub sweeps_per_temperature: usize,
    pub max_site_updates: Option<usize>,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            t_initial: 600.0,
            t_final: 1.0,
            beta: 0.9,
            sweeps_per_temperature: 1,
            max_site_updates: None,
        }
    }
}

impl AnnealingSchedule {
    pub fn new(t_initial: f64, t_final: f64, beta: f64, sweeps_per_temperature: usize) -> Result<Self> {
        let s = Self {
            t_initial,
            t_final,
            beta,
            sweeps_per_temperature,
            max_site_updates: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// One sweep per temperature, `β` chosen so the schedule runs from
    /// `t_initial` to `t_final` in exactly `⌈site_updates / m⌉` sweeps, and
    /// the run stops after `site_updates` single-site updates.
    pub fn matched_budget(site_updates: usize, m: usize, t_initial: f64, t_final: f64) -> Result<Self> {
        let sweeps = site_updates.div_ceil(m.max(1)).max(1);
        let beta = if sweeps > 1 {
            (t_final / t_initial).powf(1.0 / (sweeps - 1) as f64)
        } else {
            0.5
        };
        let s = Self {
            t_initial,
            t_final,
            beta,
            sweeps_per_temperature: 1,
            max_site_updates: Some(site_updates),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_max_site_updates(mut self, cap: usize) -> Self {
        self.max_site_updates = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final <= self.t_initial && self.t_initial.is_finite()) {
            return Err(Error::invalid("temperatures must satisfy 0 < t_final <= t_initial"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("cooling ratio must lie in (0, 1)"));
        }
        if self.sweeps_per_temperature == 0 {
            return Err(Error::invalid("sweeps per temperature must be positive"));
        }
        Ok(())
    }

    /// The temperature ladder, ending at the last `T_k >= t_final`.
    pub fn temperatures(&self) -> Vec<f64> {
        let steps = ((self.t_final / self.t_initial).ln() / self.beta.ln() + 1e-9).floor();
        let steps = if steps.is_finite() && steps > 0.0 { steps as usize } else { 0 };
        (0..=steps).map(|k| self.t_initial * self.beta.powi(k as i32)).collect()
    }
}

/// Posterior log-odds of switching one site, in two flavors: the closed form
/// `2(q_i + W_iᵀS)` for unitary dictionaries, and differences of full scores
/// otherwise.
enum FlipScorer<'a> {
    Unitary { prior: BoltzmannParams },
    General { obs: Observation<'a> },
}

impl<'a> FlipScorer<'a> {
    fn new(model: &'a SignalModel, y: &'a DVector<f64>) -> Result<Self> {
        if model.is_unitary() {
            let q = posterior_bias(model, y)?;
            Ok(Self::Unitary {
                prior: BoltzmannParams::new(model.prior().weights().clone(), q)?,
            })
        } else {
            Ok(Self::General {
                obs: Observation::new(model, y)?,
            })
        }
    }

    fn score(&self, support: &SupportPattern) -> Result<f64> {
        match self {
            Self::Unitary { prior } => prior.log_score(support),
            Self::General { obs } => obs.score(support),
        }
    }
}

/// Simulated annealing with a single-site Gibbs sampler on the support
/// posterior, started from the empty support. Returns the best-scoring
/// pattern visited.
pub fn gibbs_annealing_map(
    model: &SignalModel,
    y: &DVector<f64>,
    schedule: &AnnealingSchedule,
    seed: u64,
) -> Result<SupportPattern> {
    schedule.validate()?;
    let scorer = FlipScorer::new(model, y)?;
    let m = model.atoms();
    let mut rng = rng_from_seed(seed);
    let mut current = SupportPattern::empty(m);
    let mut current_score = scorer.score(&current)?;
    let mut best = (current_score, current.clone());
    let budget = schedule.max_site_updates.unwrap_or(usize::MAX);
    let mut updates = 0usize;

    'outer: for temp in schedule.temperatures() {
        for _ in 0..schedule.sweeps_per_temperature {
            for i in 0..m {
                if updates >= budget {
                    break 'outer;
                }
                updates += 1;
                let mut spins = current.spins().to_vec();
                spins[i] = -spins[i];
                let flipped = SupportPattern::from_spins(&spins)?;
                let (delta_on, flipped_score) = match &scorer {
                    FlipScorer::Unitary { prior } => {
                        let field = prior.local_field(i, current.spins());
                        let delta_on = 2.0 * field;
                        let sign = f64::from(spins[i]);
                        (delta_on, current_score + sign * delta_on)
                    }
                    FlipScorer::General { .. } => {
                        let fs = scorer.score(&flipped)?;
                        let delta_on = if current.is_active(i) { current_score - fs } else { fs - current_score };
                        (delta_on, fs)
                    }
                };
                let p_on = crate::model::logistic(delta_on / temp);
                let on = rng.random::<f64>() < p_on;
                if on != current.is_active(i) {
                    current = flipped;
                    current_score = flipped_score;
                    if current_score > best.0 {
                        best = (current_score, current.clone());
                    }
                }
            }
        }
    }
    Ok(best.1)
}
