pub mod bench;
pub mod denoise;
pub mod learn;
pub mod pursue;
pub mod sample;
pub mod validity;

use std::path::Path;

use bmpursuit::io::{load_matrix, load_supports, load_vector};
use bmpursuit::{BoltzmannParams, SignalModel, SupportPattern};
use nalgebra::{DMatrix, DVector};

use crate::error::{Context, Result};

pub(crate) fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    load_matrix(path).context(format!("reading {}", path.display()))
}

pub(crate) fn read_vector(path: &Path) -> Result<DVector<f64>> {
    load_vector(path).context(format!("reading {}", path.display()))
}

pub(crate) fn read_supports(path: &Path) -> Result<Vec<SupportPattern>> {
    load_supports(path).context(format!("reading {}", path.display()))
}

/// Model directory layout written by `sample`: `dictionary.txt`,
/// `weights.txt`, `bias.txt`, `variances.txt`.
pub(crate) fn read_model(dir: &Path, noise_std: f64) -> Result<SignalModel> {
    let dict = read_matrix(&dir.join("dictionary.txt"))?;
    let prior = read_params(dir)?;
    let vars = read_vector(&dir.join("variances.txt"))?;
    SignalModel::new(dict, vars, noise_std, prior).context(format!("model in {}", dir.display()))
}

pub(crate) fn read_params(dir: &Path) -> Result<BoltzmannParams> {
    let w = read_matrix(&dir.join("weights.txt"))?;
    let b = read_vector(&dir.join("bias.txt"))?;
    BoltzmannParams::new(w, b).context(format!("parameters in {}", dir.display()))
}
