use std::path::PathBuf;

use clap::Args;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bmpursuit::data::{coef_error, signal_error, support_error};
use bmpursuit::experiments::{estimate, Algorithm, Estimate, PursuitOptions};
use bmpursuit::io::rows_to_vectors;
use bmpursuit::rng::stream_rng;

use super::{read_matrix, read_model, read_supports};
use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::OutDir;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct PursueArgs {
    /// Model directory as written by `sample`.
    #[arg(long)]
    pub model: PathBuf,
    /// Signal matrix, one signal per row.
    #[arg(long)]
    pub signals: PathBuf,
    /// Directory with `supports.txt` and `coefficients.txt` of the true
    /// representations; enables the error metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// Noise standard deviation assumed by the pursuit.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub band_order: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub j0: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PursueConfig {
    pub algorithm: Algorithm,
    pub noise_std: Option<f64>,
    pub seed: u64,
    pub pursuit: PursuitOptions,
}

impl Default for PursueConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::OmpLike,
            noise_std: None,
            seed: 0,
            pursuit: PursuitOptions::default(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub sigma: f64,
    pub signals: usize,
    pub mean_cardinality: f64,
    pub support_error: Option<f64>,
    pub coef_error: Option<f64>,
    pub signal_error: Option<f64>,
}

pub fn resolve(g: &GlobalArgs, a: &PursueArgs) -> Result<PursueConfig> {
    let mut c: PursueConfig = config::load(g.config.as_deref())?;
    if let Some(x) = a.algo {
        c.algorithm = x;
    }
    if let Some(x) = a.sigma {
        c.noise_std = Some(x);
    }
    if let Some(x) = a.band_order {
        c.pursuit.band_order = Some(x);
    }
    if let Some(x) = a.eta {
        c.pursuit.eta = x;
    }
    if let Some(x) = a.j0 {
        c.pursuit.j0 = x;
    }
    if let Some(x) = g.seed {
        c.seed = x;
    }
    match c.noise_std {
        Some(s) if s > 0.0 && s.is_finite() => {}
        Some(_) => return Err(CliError::config("noise level must be positive")),
        None => return Err(CliError::config("noise level missing: pass --sigma or set noise_std")),
    }
    if c.algorithm == Algorithm::MessagePassing && c.pursuit.band_order.is_none() {
        return Err(CliError::config("message passing needs --band-order"));
    }
    Ok(c)
}

/// Writes `supports.txt`, `coefficients.txt` and `metrics.csv`.
pub fn run(g: &GlobalArgs, a: &PursueArgs) -> Result<()> {
    let c = resolve(g, a)?;
    let sigma = c.noise_std.expect("checked in resolve");
    let model = read_model(&a.model, sigma)?;
    let signals = rows_to_vectors(&read_matrix(&a.signals)?);
    if let Some(y) = signals.first() {
        if y.len() != model.signal_dim() {
            return Err(CliError::config(format!(
                "signals have length {}, the dictionary has {} rows",
                y.len(),
                model.signal_dim()
            )));
        }
    }
    let truth = match &a.truth {
        Some(dir) => {
            let s = read_supports(&dir.join("supports.txt"))?;
            let x = rows_to_vectors(&read_matrix(&dir.join("coefficients.txt"))?);
            if s.len() != signals.len() || x.len() != signals.len() {
                return Err(CliError::config("truth files and signals differ in length"));
            }
            Some((s, x))
        }
        None => None,
    };
    if c.algorithm.needs_truth() && truth.is_none() {
        return Err(CliError::config("the oracle needs --truth"));
    }
    if signals.is_empty() {
        eprintln!("warning: {} holds no signals", a.signals.display());
    }

    let key: u64 = stream_rng(c.seed, 0).random();
    let estimates: Vec<Estimate> = signals
        .par_iter()
        .enumerate()
        .map(|(l, y)| {
            let t = truth.as_ref().map(|(s, _)| &s[l]);
            estimate(c.algorithm, &model, y, t, &c.pursuit, stream_rng(key, l as u64).random())
        })
        .collect::<bmpursuit::Result<_>>()
        .context(format!("running {}", c.algorithm))?;

    let supports: Vec<_> = estimates.iter().map(|e| e.support.clone()).collect();
    let coeffs: Vec<_> = estimates.iter().map(|e| e.coeffs.clone()).collect();
    let n = estimates.len();
    let mut row = MetricsRow {
        algorithm: c.algorithm,
        sigma,
        signals: n,
        mean_cardinality: if n == 0 {
            0.0
        } else {
            supports.iter().map(|s| s.cardinality()).sum::<usize>() as f64 / n as f64
        },
        support_error: None,
        coef_error: None,
        signal_error: None,
    };
    if let (Some((ts, tx)), true) = (&truth, n > 0) {
        row.support_error = Some(support_error(ts, &supports).context("support error")?);
        row.coef_error = Some(coef_error(tx, &coeffs).context("coefficient error")?);
        row.signal_error = Some(signal_error(model.dictionary(), tx, &coeffs).context("signal error")?);
    }

    let out = OutDir::create(&g.out)?;
    out.supports("supports.txt", &supports)?;
    out.rows("coefficients.txt", &coeffs, model.atoms())?;
    out.csv("metrics.csv", &[row])?;
    let mut inputs = vec![("model", a.model.as_path()), ("signals", a.signals.as_path())];
    if let Some(t) = &a.truth {
        inputs.push(("truth", t.as_path()));
    }
    out.manifest("pursue", &c, &inputs)
}
