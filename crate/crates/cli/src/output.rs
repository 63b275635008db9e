//! Output directory handling: manifests, CSV tables and model files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bmpursuit::io::{save_matrix, save_supports, save_vector, vectors_to_rows};
use bmpursuit::{BoltzmannParams, SupportPattern};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CliError, Context, Result};

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<OutDir> {
        OutDir::create(&self.root.join(name))
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| CliError::Io { path, source })
    }

    /// `manifest.json`: the command and its fully resolved configuration.
    pub fn manifest<C: Serialize>(&self, command: &str, config: &C, inputs: &[(&str, &Path)]) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            inputs: Vec<(&'a str, String)>,
            config: &'a C,
        }
        let m = Manifest {
            tool: "bmpursuit",
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
            config,
        };
        self.json("manifest.json", &m)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f).and_then(|_| f.flush()).map_err(|source| CliError::Io {
            path: self.path(name),
            source,
        })
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: self.path(name),
            source,
        })
    }

    /// A table with a header row and string cells, for layouts that are not
    /// known at compile time.
    pub fn table(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: self.path(name),
            source,
        })
    }

    pub fn matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        save_matrix(&self.path(name), m).context(format!("writing {name}"))
    }

    pub fn vector(&self, name: &str, v: &DVector<f64>) -> Result<()> {
        save_vector(&self.path(name), v).context(format!("writing {name}"))
    }

    pub fn rows(&self, name: &str, vs: &[DVector<f64>], dim: usize) -> Result<()> {
        self.matrix(name, &vectors_to_rows(vs, dim).context(format!("writing {name}"))?)
    }

    pub fn supports(&self, name: &str, s: &[SupportPattern]) -> Result<()> {
        save_supports(&self.path(name), s).context(format!("writing {name}"))
    }

    pub fn params(&self, prefix: &str, p: &BoltzmannParams) -> Result<()> {
        self.matrix(&format!("{prefix}weights.txt"), p.weights())?;
        self.vector(&format!("{prefix}bias.txt"), p.bias())
    }

    pub fn permutation(&self, name: &str, perm: &[usize]) -> Result<()> {
        let mut f = self.file(name)?;
        let line: Vec<String> = perm.iter().map(|p| p.to_string()).collect();
        writeln!(f, "{}", line.join(" "))
            .and_then(|_| f.flush())
            .map_err(|source| CliError::Io {
                path: self.path(name),
                source,
            })
    }
}

/// Column text for a float cell.
pub fn cell(v: f64) -> String {
    format!("{v:?}")
}
