//! Plain-text matrix and support files, and PGM images.
//!
//! A matrix file starts with a line `rows cols` followed by `rows` lines of
//! whitespace-separated reals. Vectors are stored as `n 1` matrices (a single
//! `1 n` row is also accepted on input). A support file has one line per
//! sample with `m` entries in `{-1, 1}`. Reals are written in Rust's shortest
//! round-trip form, so reading back gives bit-identical values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::model::SupportPattern;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn write_matrix<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    let mut line = String::new();
    for r in 0..m.nrows() {
        line.clear();
        for c in 0..m.ncols() {
            if c > 0 {
                line.push(' ');
            }
            line.push_str(&m[(r, c)].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing `rows cols` header"))?;
    let header = header?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(hline, format!("bad dimension `{t}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(hline, "header must be `rows cols`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline + r + 1, format!("expected {rows} rows, found {r}")))?;
        let line = line?;
        let before = data.len();
        for t in line.split_whitespace() {
            let v: f64 = t.parse().map_err(|_| parse_err(ln, format!("bad number `{t}`")))?;
            if !v.is_finite() {
                return Err(parse_err(ln, format!("non-finite value `{t}`")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(parse_err(ln, format!("expected {cols} values, found {}", data.len() - before)));
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected data after the last row"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_vector<W: Write>(out: W, v: &DVector<f64>) -> Result<()> {
    write_matrix(out, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector<R: BufRead>(input: R) -> Result<DVector<f64>> {
    let m = read_matrix(input)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        (r, c) => Err(parse_err(1, format!("expected a vector, found a {r}x{c} matrix"))),
    }
}

pub fn write_supports<W: Write>(mut out: W, supports: &[SupportPattern]) -> Result<()> {
    let mut line = String::new();
    for s in supports {
        line.clear();
        for (k, &v) in s.spins().iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(if v > 0 { "1" } else { "-1" });
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_supports<R: BufRead>(input: R) -> Result<Vec<SupportPattern>> {
    let mut out: Vec<SupportPattern> = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spins: Vec<i8> = line
            .split_whitespace()
            .map(|t| match t {
                "1" | "+1" => Ok(1),
                "-1" => Ok(-1),
                _ => Err(parse_err(k + 1, format!("spin must be 1 or -1, found `{t}`"))),
            })
            .collect::<Result<_>>()?;
        if let Some(first) = out.first() {
            if first.dim() != spins.len() {
                return Err(parse_err(
                    k + 1,
                    format!("expected {} spins, found {}", first.dim(), spins.len()),
                ));
            }
        }
        out.push(SupportPattern::from_spins(&spins)?);
    }
    Ok(out)
}

/// Signals or coefficient vectors stored as the rows of a matrix file.
pub fn rows_to_vectors(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.row_iter().map(|r| r.transpose()).collect()
}

pub fn vectors_to_rows(vs: &[DVector<f64>], dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(vs.len(), dim);
    for (r, v) in vs.iter().enumerate() {
        crate::error::check_dim("vector", dim, v.len())?;
        m.row_mut(r).copy_from(&v.transpose());
    }
    Ok(m)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrix(&mut out, m)?;
    out.flush()?;
    Ok(())
}

pub fn load_vector(path: &Path) -> Result<DVector<f64>> {
    read_vector(BufReader::new(File::open(path)?))
}

pub fn save_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_vector(&mut out, v)?;
    out.flush()?;
    Ok(())
}

pub fn load_supports(path: &Path) -> Result<Vec<SupportPattern>> {
    read_supports(BufReader::new(File::open(path)?))
}

pub fn save_supports(path: &Path, supports: &[SupportPattern]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_supports(&mut out, supports)?;
    out.flush()?;
    Ok(())
}

/// Reads an 8- or 16-bit PGM (`P2` or `P5`). Pixel values are kept as is.
pub fn read_pgm<R: Read>(mut input: R) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(0, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| parse_err(0, format!("bad PGM {what} `{t}`")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(0, format!("PGM maxval {maxval} out of range")));
    }
    let count = width * height;
    let pixels: Vec<f64> = match magic.as_str() {
        "P2" => (0..count)
            .map(|_| number("pixel").map(|v| v as f64))
            .collect::<Result<_>>()?,
        "P5" => {
            // Exactly one whitespace byte separates the header from the raster.
            let start = pos + 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let raster = bytes
                .get(start..start + need)
                .ok_or_else(|| parse_err(0, "truncated PGM raster"))?;
            if wide {
                raster
                    .chunks_exact(2)
                    .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
                    .collect()
            } else {
                raster.iter().map(|&b| f64::from(b)).collect()
            }
        }
        other => return Err(parse_err(0, format!("unsupported PGM magic `{other}`"))),
    };
    GrayImage::new(width, height, pixels)
}

/// Writes a binary PGM, rounding and clamping pixels to `0..=maxval`.
pub fn write_pgm<W: Write>(mut out: W, image: &GrayImage, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::invalid("maxval must be positive"));
    }
    write!(out, "P5\n{} {}\n{}\n", image.width, image.height, maxval)?;
    let clamp = |v: f64| v.round().clamp(0.0, f64::from(maxval)) as u16;
    let mut raster = Vec::new();
    for &p in &image.pixels {
        let v = clamp(p);
        if maxval > 255 {
            raster.extend_from_slice(&v.to_be_bytes());
        } else {
            raster.push(v as u8);
        }
    }
    out.write_all(&raster)?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    read_pgm(BufReader::new(File::open(path)?))
}
