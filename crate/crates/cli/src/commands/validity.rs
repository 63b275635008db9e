use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use bmpursuit::data::{validity_stats, DEFAULT_DELTA};

use super::read_supports;
use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::OutDir;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct ValidityArgs {
    #[arg(long)]
    pub supports: PathBuf,
    /// Offset inside the logarithms of U and V.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityConfig {
    pub delta: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

#[derive(Debug, Serialize)]
struct AtomRow {
    atom: usize,
    r: f64,
    never_active: bool,
}

#[derive(Debug, Serialize)]
struct Summary {
    samples: usize,
    atoms: usize,
    p_bar: f64,
    delta: f64,
}

/// Writes `r.csv` (per atom), `u.txt` and `v.txt` (matrix files) and
/// `summary.json`.
pub fn run(g: &GlobalArgs, a: &ValidityArgs) -> Result<()> {
    let mut c: ValidityConfig = config::load(g.config.as_deref())?;
    if let Some(d) = a.delta {
        c.delta = d;
    }
    let supports = read_supports(&a.supports)?;
    if supports.is_empty() {
        return Err(CliError::config(format!("{} holds no supports", a.supports.display())));
    }
    let stats = validity_stats(&supports, c.delta).context("validity statistics")?;
    let out = OutDir::create(&g.out)?;
    let rows: Vec<AtomRow> = stats
        .r
        .iter()
        .zip(&stats.never_active)
        .enumerate()
        .map(|(atom, (&r, &never_active))| AtomRow { atom, r, never_active })
        .collect();
    out.csv("r.csv", &rows)?;
    out.matrix("u.txt", &stats.u)?;
    out.matrix("v.txt", &stats.v)?;
    out.json(
        "summary.json",
        &Summary {
            samples: supports.len(),
            atoms: stats.r.len(),
            p_bar: stats.p_bar,
            delta: stats.delta,
        },
    )?;
    out.manifest("validity", &c, &[("supports", a.supports.as_path())])
}
