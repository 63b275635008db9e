use clap::{Args, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};

use bmpursuit::model::{sample_dataset, GibbsConfig};
use bmpursuit::rng::stream_rng;
use bmpursuit::synthetic::SyntheticSetup;

use crate::config;
use crate::error::{CliError, Context, Result};
use crate::output::OutDir;
use crate::GlobalArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 64 atoms, unitary DCT, 9th-order banded W.
    Unitary,
    /// 64×256 overcomplete DCT, dense weak W.
    Overcomplete,
}

impl Preset {
    pub fn setup(self) -> SyntheticSetup {
        match self {
            Preset::Unitary => SyntheticSetup::unitary(),
            Preset::Overcomplete => SyntheticSetup::overcomplete(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Number of signals.
    #[arg(long, short = 'n')]
    pub signals: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Band order of the drawn W.
    #[arg(long)]
    pub band_order: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub setup: SyntheticSetup,
    pub signals: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub gibbs: GibbsConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            setup: SyntheticSetup::unitary(),
            signals: 1000,
            noise_std: 10.0,
            seed: 0,
            gibbs: GibbsConfig::default(),
        }
    }
}

pub fn resolve(g: &GlobalArgs, a: &SampleArgs) -> Result<SampleConfig> {
    let mut c: SampleConfig = config::load(g.config.as_deref())?;
    if let Some(p) = a.preset {
        c.setup = p.setup();
    }
    if let Some(n) = a.signals {
        c.signals = n;
    }
    if let Some(s) = a.sigma {
        c.noise_std = s;
    }
    if let Some(l) = a.band_order {
        c.setup.band = Some(l);
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    c.setup.validate().context("setup")?;
    if c.signals == 0 {
        return Err(CliError::config("signal count must be positive"));
    }
    if !(c.noise_std >= 0.0 && c.noise_std.is_finite()) {
        return Err(CliError::config("noise level must be non-negative"));
    }
    Ok(c)
}

/// Writes `model/` (dictionary, weights, bias, variances), `supports.txt`,
/// `coefficients.txt`, `clean.txt` and `signals.txt` (one row per signal).
pub fn run(g: &GlobalArgs, a: &SampleArgs) -> Result<()> {
    let c = resolve(g, a)?;
    let model = c
        .setup
        .model(c.noise_std, stream_rng(c.seed, 0).random())
        .context("drawing the model")?;
    let samples = sample_dataset(&model, c.signals, &c.gibbs, stream_rng(c.seed, 1).random())
        .context("sampling signals")?;

    let out = OutDir::create(&g.out)?;
    let md = out.subdir("model")?;
    md.matrix("dictionary.txt", model.dictionary())?;
    md.params("", model.prior())?;
    md.vector("variances.txt", model.coef_vars())?;

    let supports: Vec<_> = samples.iter().map(|s| s.representation.support().clone()).collect();
    let coeffs: Vec<_> = samples.iter().map(|s| s.representation.coeffs().clone()).collect();
    let clean: Vec<_> = samples
        .iter()
        .map(|s| s.clean_signal.clone().unwrap_or_else(|| s.signal.clone()))
        .collect();
    let signals: Vec<_> = samples.iter().map(|s| s.signal.clone()).collect();
    out.supports("supports.txt", &supports)?;
    out.rows("coefficients.txt", &coeffs, model.atoms())?;
    out.rows("clean.txt", &clean, model.signal_dim())?;
    out.rows("signals.txt", &signals, model.signal_dim())?;
    out.manifest("sample", &c, &[])?;
    eprintln!(
        "sampled {} signals, mean cardinality {:.2}",
        c.signals,
        supports.iter().map(|s| s.cardinality()).sum::<usize>() as f64 / c.signals as f64
    );
    Ok(())
}
