//! Array persistence: little-endian `f64` payloads (column-major for dense
//! matrices, `(u64 row, u64 col, f64 value)` records for sparse ones), each
//! next to a JSON manifest with shape, role and SHA-256 checksum.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayFormat {
    DenseF64LeColMajor,
    CooF64Le,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayManifest {
    pub shape: [usize; 2],
    pub role: String,
    pub format: ArrayFormat,
    pub nnz: Option<usize>,
    pub sha256: String,
}

fn artifact(path: &Path, reason: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.bin")), dir.join(format!("{name}.json")))
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_pair(dir: &Path, name: &str, bytes: &[u8], manifest: &ArrayManifest) -> Result<()> {
    let (bin, json) = paths(dir, name);
    fs::write(&bin, bytes).map_err(|e| artifact(&bin, e.to_string()))?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&json, text).map_err(|e| artifact(&json, e.to_string()))
}

/// Reads and verifies the payload of `name`, returning it with its manifest.
fn read_pair(dir: &Path, name: &str, format: ArrayFormat) -> Result<(Vec<u8>, ArrayManifest)> {
    let (bin, json) = paths(dir, name);
    let text = fs::read_to_string(&json).map_err(|e| artifact(&json, e.to_string()))?;
    let manifest: ArrayManifest =
        serde_json::from_str(&text).map_err(|e| artifact(&json, e.to_string()))?;
    if manifest.format != format {
        return Err(artifact(&json, format!("expected {format:?}, found {:?}", manifest.format)));
    }
    let bytes = fs::read(&bin).map_err(|e| artifact(&bin, e.to_string()))?;
    if checksum(&bytes) != manifest.sha256 {
        return Err(artifact(&bin, "checksum mismatch"));
    }
    Ok((bytes, manifest))
}

pub fn dense_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_dense(dir: &Path, name: &str, role: &str, m: &DMatrix<f64>) -> Result<ArrayManifest> {
    let bytes = dense_bytes(m);
    let manifest = ArrayManifest {
        shape: [m.nrows(), m.ncols()],
        role: role.to_string(),
        format: ArrayFormat::DenseF64LeColMajor,
        nnz: None,
        sha256: checksum(&bytes),
    };
    write_pair(dir, name, &bytes, &manifest)?;
    Ok(manifest)
}

pub fn read_dense(dir: &Path, name: &str) -> Result<DMatrix<f64>> {
    let (bytes, manifest) = read_pair(dir, name, ArrayFormat::DenseF64LeColMajor)?;
    let [r, c] = manifest.shape;
    if bytes.len() != 8 * r * c {
        return Err(artifact(&paths(dir, name).0, "payload length does not match shape"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(DMatrix::from_vec(r, c, values))
}

pub fn write_sparse(dir: &Path, name: &str, role: &str, m: &SparseMatrix) -> Result<ArrayManifest> {
    let trip = m.triplets();
    let mut bytes = Vec::with_capacity(24 * trip.len());
    for (i, j, v) in &trip {
        bytes.extend((*i as u64).to_le_bytes());
        bytes.extend((*j as u64).to_le_bytes());
        bytes.extend(v.to_le_bytes());
    }
    let manifest = ArrayManifest {
        shape: [m.nrows(), m.ncols()],
        role: role.to_string(),
        format: ArrayFormat::CooF64Le,
        nnz: Some(trip.len()),
        sha256: checksum(&bytes),
    };
    write_pair(dir, name, &bytes, &manifest)?;
    Ok(manifest)
}

pub fn read_sparse(dir: &Path, name: &str) -> Result<SparseMatrix> {
    let (bytes, manifest) = read_pair(dir, name, ArrayFormat::CooF64Le)?;
    let [r, c] = manifest.shape;
    if bytes.len() % 24 != 0 || Some(bytes.len() / 24) != manifest.nnz {
        return Err(artifact(&paths(dir, name).0, "payload length does not match nnz"));
    }
    let trip: Vec<(usize, usize, f64)> = bytes
        .chunks_exact(24)
        .map(|b| {
            let i = u64::from_le_bytes(b[0..8].try_into().expect("8 bytes")) as usize;
            let j = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes")) as usize;
            let v = f64::from_le_bytes(b[16..24].try_into().expect("8 bytes"));
            (i, j, v)
        })
        .collect();
    SparseMatrix::from_triplets(r, c, &trip)
}
