//! Field and table output: raw little-endian `f64` pairs with a JSON sidecar,
//! and plain CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BoxShape;

/// Metadata stored next to a binary field file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub kind: String,
    pub t: f64,
    #[serde(default)]
    pub eps: Option<f64>,
    pub grid: BoxShape,
    /// Number of stacked fields (modes) in the array, each `grid` sized.
    pub components: usize,
    #[serde(default)]
    pub potential_digest: Option<String>,
    #[serde(default)]
    pub modes: Vec<(Vec<f64>, usize)>,
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

pub fn encode(data: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * data.len());
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::invalid("binary field length is not a multiple of 16 bytes"));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect())
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn write_field(base: &Path, data: &[Complex64], sidecar: &FieldSidecar) -> Result<()> {
    let expected: usize = sidecar.grid.points.iter().product::<usize>() * sidecar.components;
    if data.len() != expected {
        return Err(Error::invalid(format!("field has {} samples, sidecar describes {expected}", data.len())));
    }
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(with_ext(base, "bin"), encode(data))?;
    fs::write(with_ext(base, "json"), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_field(base: &Path) -> Result<(Vec<Complex64>, FieldSidecar)> {
    let sidecar: FieldSidecar = serde_json::from_str(&fs::read_to_string(with_ext(base, "json"))?)?;
    let data = decode(&fs::read(with_ext(base, "bin"))?)?;
    let expected: usize = sidecar.grid.points.iter().product::<usize>() * sidecar.components;
    if data.len() != expected {
        return Err(Error::invalid(format!("field has {} samples, sidecar describes {expected}", data.len())));
    }
    Ok((data, sidecar))
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_csv_with_comments(path, &[], header, rows)
}

/// CSV preceded by `# `-prefixed metadata lines.
pub fn write_csv_with_comments(path: &Path, comments: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
