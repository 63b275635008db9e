use clap::Args;
use serde::Serialize;

use bmpursuit::experiments::{run_synthetic_benchmark, Algorithm, BenchConfig, BenchResult};

use super::sample::Preset;
use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::{cell, OutDir};
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Comma-separated algorithm names.
    #[arg(long, value_delimiter = ',')]
    pub algo: Option<Vec<Algorithm>>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma_list: Option<Vec<f64>>,
    #[arg(long, short = 'n')]
    pub signals: Option<usize>,
    #[arg(long)]
    pub band_order: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub j0: Option<usize>,
}

/// Defaults per preset: the unitary sweep runs exact message passing, the
/// overcomplete one the thresholding pursuit instead.
pub fn preset_config(p: Preset) -> BenchConfig {
    let mut c = BenchConfig {
        setup: p.setup(),
        sigmas: (1..=15).map(|k| 2.0 * k as f64).collect(),
        ..BenchConfig::default()
    };
    if p == Preset::Overcomplete {
        c.algorithms = vec![
            Algorithm::Omp,
            Algorithm::OmpLike,
            Algorithm::Thresholding,
            Algorithm::RandomMmse,
            Algorithm::Annealing,
            Algorithm::Oracle,
        ];
        c.pursuit.band_order = None;
    }
    c
}

pub fn resolve(g: &GlobalArgs, a: &BenchArgs) -> Result<BenchConfig> {
    let mut c = match (&g.config, a.preset) {
        (Some(_), _) => config::load(g.config.as_deref())?,
        (None, p) => preset_config(p.unwrap_or(Preset::Unitary)),
    };
    if let (Some(_), Some(p)) = (&g.config, a.preset) {
        c.setup = p.setup();
    }
    if let Some(x) = &a.algo {
        c.algorithms = x.clone();
    }
    if let Some(x) = &a.sigma_list {
        c.sigmas = x.clone();
    }
    if let Some(x) = a.signals {
        c.signals = x;
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
    c.sigmas.sort_by(f64::total_cmp);
    c.sigmas.dedup();
    c.validate().context("benchmark configuration")?;
    if c.algorithms.contains(&Algorithm::MessagePassing) && c.pursuit.band_order.is_none() {
        return Err(CliError::config("message passing needs a band order"));
    }
    Ok(c)
}

#[derive(Debug, Serialize)]
struct Summary {
    signals: usize,
    mean_true_cardinality: f64,
}

/// Long table of every cell plus one wide table per metric, rows ordered by
/// noise level and columns in configuration order.
pub fn write_tables(out: &OutDir, c: &BenchConfig, r: &BenchResult) -> Result<()> {
    out.csv("results.csv", &r.cells)?;
    let mut header = vec!["sigma".to_string()];
    header.extend(c.algorithms.iter().map(|a| a.name().to_string()));
    let metrics: [(&str, fn(&bmpursuit::experiments::BenchCell) -> f64); 3] = [
        ("support_error.csv", |x| x.support_error),
        ("coef_error.csv", |x| x.coef_error),
        ("signal_error.csv", |x| x.signal_error),
    ];
    for (name, f) in metrics {
        let rows: Vec<Vec<String>> = c
            .sigmas
            .iter()
            .map(|&s| {
                let mut row = vec![cell(s)];
                row.extend(c.algorithms.iter().map(|&a| cell(f(r.cell(s, a).expect("every cell is run").0))));
                row
            })
            .collect();
        out.table(name, &header, &rows)?;
    }
    out.json(
        "summary.json",
        &Summary {
            signals: c.signals,
            mean_true_cardinality: r.mean_true_cardinality,
        },
    )
}

pub fn run(g: &GlobalArgs, a: &BenchArgs) -> Result<()> {
    let c = resolve(g, a)?;
    let r = run_synthetic_benchmark(&c).context("synthetic benchmark")?;
    let out = OutDir::create(&g.out)?;
    write_tables(&out, &c, &r)?;
    out.manifest("bench-synthetic", &c, &[])
}
