use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use bmpursuit::io::rows_to_vectors;
use bmpursuit::learning::{
    band_projection, estimate_variances_from, mpl_gradient_ascent_fit, mpl_sesop_fit, MplFit, SesopConfig,
    DEFAULT_VARIANCE_FALLBACK,
};
use bmpursuit::{BoltzmannParams, SparseRepresentation};
use nalgebra::DVector;

use super::{read_matrix, read_params, read_supports};
use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::OutDir;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    /// Support file, one sample per line.
    #[arg(long)]
    pub supports: PathBuf,
    /// Coefficient rows matching the supports; enables variance estimation.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    /// Directory with the generating `weights.txt` and `bias.txt`; adds
    /// parameter errors to the comparison table.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// SESOP history size M.
    #[arg(long)]
    pub sesop_m: Option<usize>,
    /// Iterations of SESOP (and of gradient ascent when compared).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub band_order: Option<usize>,
    /// Also run gradient ascent for the same number of iterations.
    #[arg(long)]
    pub compare_ga: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub sesop: SesopConfig,
    pub band_order: Option<usize>,
    pub compare_gradient_ascent: bool,
    pub ga_learning_rate: f64,
    pub variance_fallback: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            sesop: SesopConfig::default(),
            band_order: None,
            compare_gradient_ascent: false,
            ga_learning_rate: 1.0,
            variance_fallback: DEFAULT_VARIANCE_FALLBACK,
        }
    }
}

#[derive(Debug, Serialize)]
struct TraceRow {
    method: &'static str,
    iteration: usize,
    log_pl: f64,
    grad_norm: f64,
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    method: &'static str,
    iterations: usize,
    final_log_pl: f64,
    weight_mae: Option<f64>,
    bias_mae: Option<f64>,
}

pub fn resolve(g: &GlobalArgs, a: &LearnArgs) -> Result<LearnConfig> {
    let mut c: LearnConfig = config::load(g.config.as_deref())?;
    if let Some(x) = a.sesop_m {
        c.sesop.history = x;
    }
    if let Some(x) = a.iters {
        c.sesop.max_iters = x;
    }
    if let Some(x) = a.band_order {
        c.band_order = Some(x);
    }
    if a.compare_ga {
        c.compare_gradient_ascent = true;
    }
    c.sesop.validate().context("learner settings")?;
    if !(c.ga_learning_rate > 0.0 && c.variance_fallback > 0.0) {
        return Err(CliError::config("learning rate and variance fallback must be positive"));
    }
    if c.band_order == Some(0) {
        return Err(CliError::config("band order must be at least 1"));
    }
    Ok(c)
}

/// Mean absolute error over the strict upper triangle of `W` and over `b`.
pub fn parameter_errors(est: &BoltzmannParams, truth: &BoltzmannParams) -> (f64, f64) {
    let m = est.dim();
    let mut w = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            w += (est.weights()[(i, j)] - truth.weights()[(i, j)]).abs();
        }
    }
    let pairs = (m * (m - 1) / 2).max(1) as f64;
    let b = (est.bias() - truth.bias()).abs().sum() / m as f64;
    (w / pairs, b)
}

fn trace_rows<'a>(method: &'static str, fit: &'a MplFit) -> impl Iterator<Item = TraceRow> + 'a {
    fit.log_pl
        .iter()
        .zip(&fit.grad_norms)
        .enumerate()
        .map(move |(k, (&l, &gn))| TraceRow {
            method,
            iteration: k,
            log_pl: l,
            grad_norm: gn,
        })
}

/// Writes `weights.txt`, `bias.txt`, `trace.csv`, `comparison.csv` and, when
/// coefficients are given, `variances.txt`; with a band order the projected
/// parameters and `permutation.txt` (`new -> old`).
pub fn run(g: &GlobalArgs, a: &LearnArgs) -> Result<()> {
    let c = resolve(g, a)?;
    let supports = read_supports(&a.supports)?;
    if supports.is_empty() {
        return Err(CliError::config(format!("{} holds no supports", a.supports.display())));
    }
    let m = supports[0].dim();
    let variances = match &a.coefficients {
        Some(p) => {
            let xs = rows_to_vectors(&read_matrix(p)?);
            if xs.len() != supports.len() {
                return Err(CliError::config("coefficients and supports differ in length"));
            }
            let reps: Vec<SparseRepresentation> = xs
                .into_iter()
                .zip(&supports)
                .map(|(x, s)| SparseRepresentation::new(x, s.clone()))
                .collect::<bmpursuit::Result<_>>()
                .context("coefficients")?;
            let views: Vec<&SparseRepresentation> = reps.iter().collect();
            Some(estimate_variances_from(&views, c.variance_fallback).context("variance estimation")?)
        }
        None => None,
    };
    let truth = a.truth.as_deref().map(read_params).transpose()?;
    if let Some(t) = &truth {
        if t.dim() != m {
            return Err(CliError::config("true parameters have the wrong dimension"));
        }
    }

    let fit = mpl_sesop_fit(&supports, &c.sesop, None).context("pseudo-likelihood fit")?;
    let mut trace: Vec<TraceRow> = trace_rows("sesop", &fit).collect();
    let mut comparison = vec![(("sesop", fit.iterations()), fit.log_pl.last().copied(), &fit.params)];
    let ga = if c.compare_gradient_ascent {
        Some(
            mpl_gradient_ascent_fit(&supports, c.sesop.max_iters, c.ga_learning_rate, c.sesop.reduction)
                .context("gradient ascent")?,
        )
    } else {
        None
    };
    if let Some(ga) = &ga {
        trace.extend(trace_rows("gradient_ascent", ga));
        comparison.push((("gradient_ascent", ga.iterations()), ga.log_pl.last().copied(), &ga.params));
    }
    let comparison: Vec<ComparisonRow> = comparison
        .into_iter()
        .map(|((method, iterations), l, p)| {
            let errs = truth.as_ref().map(|t| parameter_errors(p, t));
            ComparisonRow {
                method,
                iterations,
                final_log_pl: l.unwrap_or(f64::NAN),
                weight_mae: errs.map(|e| e.0),
                bias_mae: errs.map(|e| e.1),
            }
        })
        .collect();

    let out = OutDir::create(&g.out)?;
    let vars = variances.clone().unwrap_or_else(|| DVector::from_element(m, 1.0));
    match c.band_order {
        Some(band) => {
            let proj = band_projection(&fit.params, &vars, band).context("band projection")?;
            out.params("", &proj.params)?;
            out.permutation("permutation.txt", &proj.permutation)?;
            if variances.is_some() {
                out.vector("variances.txt", &proj.variances)?;
            }
        }
        None => {
            out.params("", &fit.params)?;
            if let Some(v) = &variances {
                out.vector("variances.txt", v)?;
            }
        }
    }
    out.csv("trace.csv", &trace)?;
    out.csv("comparison.csv", &comparison)?;
    let mut inputs = vec![("supports", a.supports.as_path())];
    if let Some(p) = &a.coefficients {
        inputs.push(("coefficients", p.as_path()));
    }
    if let Some(p) = &a.truth {
        inputs.push(("truth", p.as_path()));
    }
    out.manifest("learn", &c, &inputs)
}
