use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use bmpursuit::data::{extract_patches, PatchSet};
use bmpursuit::experiments::{run_denoising_detailed, synthetic_patches, DenoiseConfig, DenoiseMethod, DenoiseRow};
use bmpursuit::io::load_pgm;
use bmpursuit::model::GibbsConfig;
use bmpursuit::synthetic::SyntheticSetup;

use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::{cell, OutDir};
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    /// PGM images to draw patches from; synthetic patches when omitted.
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Number of synthetic patches.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<DenoiseMethod>>,
    /// Band order of the unitary BM scheme.
    #[arg(long)]
    pub band_order: Option<usize>,
    /// Model-update rounds of the adaptive scheme.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub sesop_m: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub j0: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Keep at most this many patches, evenly spaced over the corpus.
    #[arg(long)]
    pub max_patches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSource {
    pub images: Vec<PathBuf>,
    pub patch_size: usize,
    pub stride: usize,
    pub max_patches: Option<usize>,
    /// Generator of the synthetic patches used when no image is given.
    pub synthetic_setup: SyntheticSetup,
    pub synthetic_count: usize,
    pub gibbs: GibbsConfig,
}

impl Default for PatchSource {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            patch_size: 8,
            stride: 8,
            max_patches: None,
            synthetic_setup: SyntheticSetup::unitary(),
            synthetic_count: 2000,
            gibbs: GibbsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseCommandConfig {
    pub source: PatchSource,
    pub denoise: DenoiseConfig,
}

pub fn resolve(g: &GlobalArgs, a: &DenoiseArgs) -> Result<DenoiseCommandConfig> {
    let mut c: DenoiseCommandConfig = config::load(g.config.as_deref())?;
    let (s, d) = (&mut c.source, &mut c.denoise);
    if !a.images.is_empty() {
        s.images = a.images.clone();
    }
    if let Some(x) = a.synthetic {
        s.synthetic_count = x;
    }
    if let Some(x) = a.patch_size {
        s.patch_size = x;
    }
    if let Some(x) = a.stride {
        s.stride = x;
    }
    if let Some(x) = a.max_patches {
        s.max_patches = Some(x);
    }
    if let Some(x) = &a.sigma_list {
        d.sigmas = x.clone();
    }
    if let Some(x) = &a.methods {
        d.methods = x.clone();
    }
    if let Some(x) = a.band_order {
        d.band_order = x;
    }
    if let Some(x) = a.iters {
        d.adaptive.iterations = x;
    }
    if let Some(x) = a.sesop_m {
        d.adaptive.learner.history = x;
    }
    if let Some(x) = a.eta {
        d.eta = x;
    }
    if let Some(x) = a.j0 {
        d.adaptive.j0 = x;
    }
    if let Some(x) = g.seed {
        d.seed = x;
        d.adaptive.seed = x;
    }
    if d.sigmas.is_empty() || d.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(CliError::config("noise levels must be positive"));
    }
    if d.methods.is_empty() {
        return Err(CliError::config("no denoising method selected"));
    }
    if s.patch_size == 0 || s.stride == 0 {
        return Err(CliError::config("patch size and stride must be positive"));
    }
    if s.images.is_empty() && s.synthetic_count == 0 {
        return Err(CliError::config("no images and no synthetic patches requested"));
    }
    Ok(c)
}

/// Patches from the configured images (in order), or synthetic patches.
pub fn load_patches(s: &PatchSource, seed: u64) -> Result<PatchSet> {
    let set = if s.images.is_empty() {
        synthetic_patches(&s.synthetic_setup, s.synthetic_count, &s.gibbs, seed).context("synthetic patches")?
    } else {
        let mut raw = Vec::new();
        for p in &s.images {
            let img = load_pgm(p).context(format!("reading {}", p.display()))?;
            let set = extract_patches(&img, s.patch_size, s.stride).context(format!("patches of {}", p.display()))?;
            raw.extend(set.with_dc());
        }
        let name = s.images.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        PatchSet::from_raw(raw, s.patch_size, name).context("patches")?
    };
    match s.max_patches {
        Some(k) if k < set.len() => {
            let raw = set.with_dc();
            let picked: Vec<_> = (0..k).map(|i| raw[i * raw.len() / k].clone()).collect();
            PatchSet::from_raw(picked, set.patch_size, set.source.clone()).context("patches")
        }
        _ => Ok(set),
    }
}

#[derive(Debug, Serialize)]
struct TraceRow {
    sigma: f64,
    method: DenoiseMethod,
    iteration: usize,
    total_score: f64,
    mean_cardinality: f64,
}

/// Writes `rmse.csv` (long), `rmse_table.csv` (noise level × method),
/// `trace.csv` and per-update parameter snapshots under `snapshots/`.
pub fn run(g: &GlobalArgs, a: &DenoiseArgs) -> Result<()> {
    let c = resolve(g, a)?;
    let patches = load_patches(&c.source, c.denoise.seed)?;
    if patches.is_empty() {
        return Err(CliError::config("the corpus yields no patches"));
    }
    let (rows, traces) = run_denoising_detailed(&patches, &c.denoise).context("denoising")?;

    let out = OutDir::create(&g.out)?;
    out.csv("rmse.csv", &rows)?;
    write_grid(&out, &c.denoise, &rows)?;
    let mut trace_rows = Vec::new();
    let snaps = out.subdir("snapshots")?;
    for t in &traces {
        for it in &t.trace {
            trace_rows.push(TraceRow {
                sigma: t.sigma,
                method: t.method,
                iteration: it.iteration,
                total_score: it.total_score,
                mean_cardinality: it.mean_cardinality,
            });
        }
        for (k, (p, v)) in t.snapshots.iter().enumerate() {
            let prefix = format!("{}_sigma{}_update{}_", t.method, t.sigma, k + 1);
            snaps.params(&prefix, p)?;
            snaps.vector(&format!("{prefix}variances.txt"), v)?;
        }
        snaps.permutation(&format!("{}_sigma{}_permutation.txt", t.method, t.sigma), &t.permutation)?;
    }
    out.csv("trace.csv", &trace_rows)?;
    let inputs: Vec<(&str, &std::path::Path)> = c.source.images.iter().map(|p| ("image", p.as_path())).collect();
    out.manifest("adaptive", &c, &inputs)?;
    eprintln!("denoised {} patches of dimension {}", patches.len(), patches.dim());
    Ok(())
}

fn write_grid(out: &OutDir, c: &DenoiseConfig, rows: &[DenoiseRow]) -> Result<()> {
    let mut header = vec!["sigma".to_string()];
    header.extend(c.methods.iter().map(|m| m.name().to_string()));
    let grid: Vec<Vec<String>> = c
        .sigmas
        .iter()
        .map(|&s| {
            let mut r = vec![cell(s)];
            r.extend(c.methods.iter().map(|&m| {
                rows.iter()
                    .find(|x| x.sigma == s && x.method == m)
                    .map_or(String::new(), |x| cell(x.rmse))
            }));
            r
        })
        .collect();
    out.table("rmse_table.csv", &header, &grid)
}
