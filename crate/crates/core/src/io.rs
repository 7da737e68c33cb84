//! Output helpers shared by the CSV writers and manifests.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

/// Float with 17 significant digits, stable across runs.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Optional integer time, empty when absent (censored or not reached).
pub fn fmt_opt_u64(x: Option<u64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Header names `S_11, S_12, ..., S_mq` (1-based).
pub fn matrix_headers(prefix: &str, m: usize, q: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(m * q);
    for i in 1..=m {
        for j in 1..=q {
            h.push(format!("{prefix}_{i}{j}"));
        }
    }
    h
}
