//! Encrypted snapshot of the in-memory database.
//!
//! Layout: `"ESCK"`, version `u16`, `upto_seq u64`, then a sealed blob
//! (`nonce || ciphertext || tag`) under the escrow-internal key, with the
//! 14-byte header as associated data.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::cipher;
use super::keys::SymmetricKey;
use super::VaultError;
use crate::ids::Seq;

pub const MAGIC: &[u8; 4] = b"ESCK";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub upto_seq: Seq,
    pub snapshot: Vec<u8>,
}

fn header(upto_seq: Seq) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6..].copy_from_slice(&upto_seq.to_le_bytes());
    h
}

/// Atomically replaces the checkpoint at `path` (write to a sibling, fsync, rename).
pub fn write_checkpoint(
    path: &Path,
    key: &SymmetricKey,
    upto_seq: Seq,
    snapshot: &[u8],
) -> Result<(), VaultError> {
    let h = header(upto_seq);
    let mut bytes = h.to_vec();
    bytes.extend(cipher::encrypt_blob(key, snapshot, &h));
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent()
        && let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    Ok(())
}

pub fn read_checkpoint(path: &Path, key: &SymmetricKey) -> Result<Option<Checkpoint>, VaultError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(VaultError::BadCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(VaultError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let upto_seq = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let snapshot = cipher::decrypt_blob(key, &bytes[HEADER_LEN..], &bytes[..HEADER_LEN])
        .map_err(|_| VaultError::BadCheckpoint("authentication failed".into()))?;
    Ok(Some(Checkpoint { upto_seq, snapshot }))
}
