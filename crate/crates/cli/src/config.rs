//! TOML configuration files. Each command reads its own configuration type;
//! unknown keys are rejected and command-line flags override file values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

