//! Text formats: cochain files keyed by simplex index with a mesh hash,
//! spectrum CSV, and atomic file writes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dec::{Cochain, DecOps};
use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the raw values of a cochain.
pub fn cochain_hash(c: &Cochain) -> String {
    let mut bytes = Vec::with_capacity(8 * c.len() + 8);
    bytes.extend_from_slice(&(c.degree() as u64).to_le_bytes());
    for v in c.values().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn cochain_to_string(c: &Cochain, mesh_hash: &str) -> String {
    let mut out = String::new();
    out.push_str("# cochain\n");
    out.push_str(&format!("mesh_hash {mesh_hash}\n"));
    out.push_str(&format!("degree {}\n", c.degree()));
    out.push_str(&format!("count {}\n", c.len()));
    for (i, v) in c.values().iter().enumerate() {
        out.push_str(&format!("{i} {v:.16e}\n"));
    }
    out
}

pub fn write_cochain(path: &Path, c: &Cochain, mesh_hash: &str) -> Result<()> {
    write_atomic(path, &cochain_to_string(c, mesh_hash))
}

/// Parses a cochain file; returns the cochain and the recorded mesh hash.
pub fn parse_cochain(text: &str) -> Result<(Cochain, String)> {
    let mut hash = None;
    let mut degree = None;
    let mut count = None;
    let mut values: Vec<Option<f64>> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: ln + 1,
            message,
        };
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or("");
        let second = tok.next();
        match head {
            "mesh_hash" => {
                hash = Some(
                    second
                        .ok_or_else(|| err("missing hash".into()))?
                        .to_string(),
                )
            }
            "degree" => {
                degree = Some(
                    second
                        .ok_or_else(|| err("missing degree".into()))?
                        .parse::<usize>()
                        .map_err(|e| err(e.to_string()))?,
                )
            }
            "count" => {
                let n = second
                    .ok_or_else(|| err("missing count".into()))?
                    .parse::<usize>()
                    .map_err(|e| err(e.to_string()))?;
                count = Some(n);
                values = vec![None; n];
            }
            _ => {
                let n = count.ok_or_else(|| err("value before count".into()))?;
                let i: usize = head
                    .parse()
                    .map_err(|e: std::num::ParseIntError| err(e.to_string()))?;
                let v: f64 = second
                    .ok_or_else(|| err("missing value".into()))?
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| err(e.to_string()))?;
                if i >= n {
                    return Err(err(format!("index {i} out of range for count {n}")));
                }
                if values[i].is_some() {
                    return Err(err(format!("duplicate index {i}")));
                }
                values[i] = Some(v);
            }
        }
    }
    let eof = |m: &str| Error::Parse {
        line: text.lines().count(),
        message: m.to_string(),
    };
    let hash = hash.ok_or_else(|| eof("missing mesh_hash"))?;
    let degree = degree.ok_or_else(|| eof("missing degree"))?;
    count.ok_or_else(|| eof("missing count"))?;
    let vals: Option<Vec<f64>> = values.into_iter().collect();
    let vals = vals.ok_or_else(|| eof("missing values"))?;
    Ok((
        Cochain::new(degree, nalgebra::DVector::from_vec(vals)),
        hash,
    ))
}

/// Reads a cochain and checks it against the mesh of `ops`.
pub fn read_cochain(path: &Path, ops: &DecOps) -> Result<Cochain> {
    let (c, hash) = parse_cochain(&fs::read_to_string(path)?)?;
    if hash != ops.complex().hash() {
        return Err(Error::InvalidArgument(format!(
            "cochain {} was written for mesh {hash}, not {}",
            path.display(),
            ops.complex().hash()
        )));
    }
    ops.check(&c)?;
    Ok(c)
}

/// CSV rows `index,lambda,residual`, harmonics first with λ = 0.
pub fn spectrum_csv(basis: &SpectralBasis, ops: &DecOps) -> Result<String> {
    let k = basis.degree;
    let m = ops.mass(k)?;
    let stiff = ops.stiffness(k)?;
    let mut out = String::from("index,lambda,residual\n");
    let mut row = 0usize;
    for j in 0..basis.harmonic_count() {
        let h = basis.harmonic(j);
        let r = (&stiff * h.values()).norm() / m.apply(h.values()).norm().max(f64::MIN_POSITIVE);
        out.push_str(&format!("{row},{:.16e},{r:.16e}\n", 0.0));
        row += 1;
    }
    for i in 0..basis.truncation() {
        let x = basis.eigenvector(i);
        let l = basis.eigenvalues[i];
        let mx = m.apply(x.values());
        let r = (&stiff * x.values() - &mx * l).norm() / (mx.norm() * l.abs().max(1.0));
        out.push_str(&format!("{row},{l:.16e},{r:.16e}\n",));
        row += 1;
    }
    Ok(out)
}
