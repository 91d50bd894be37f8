//! Durability scan: no durable file may contain a secret verbatim.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

fn files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).expect("readable data dir").flatten() {
        let p = entry.path();
        if p.is_dir() {
            files(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Every `(file, secret)` pair where the file holds the secret in the clear.
pub fn plaintext_hits(dir: &Path, secrets: &[[u8; 16]]) -> Vec<(PathBuf, String)> {
    let wanted: HashSet<&[u8]> = secrets.iter().map(|s| s.as_slice()).collect();
    let mut all = Vec::new();
    files(dir, &mut all);
    let mut hits = Vec::new();
    for f in all {
        let bytes = std::fs::read(&f).expect("readable file");
        for w in bytes.windows(16) {
            if wanted.contains(w) {
                hits.push((f.clone(), String::from_utf8_lossy(w).into_owned()));
            }
        }
    }
    hits
}

/// Number of files under `dir`, for reporting.
pub fn file_count(dir: &Path) -> usize {
    let mut all = Vec::new();
    files(dir, &mut all);
    all.len()
}
