//! Encrypted write-ahead log.
//!
//! File layout, one record after another, all integers little-endian:
//!
//! ```text
//! +---------+-----------+------------+----------+----------------------+
//! | seq u64 | agent u64 | ct_len u32 | nonce 12 | ciphertext + tag     |
//! +---------+-----------+------------+----------+----------------------+
//! ```
//!
//! The first 20 header bytes are bound into the AEAD as associated data, so a
//! record cannot be moved to another position or re-attributed to another
//! agent without failing authentication.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::cipher::{self, AuthFailure, NONCE_LEN};
use super::keys::SymmetricKey;
use super::VaultError;
use crate::ids::{AgentId, Seq};

const HEADER_LEN: usize = 8 + 8 + 4;

/// How hard an append pushes bytes towards the disk before returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncMode {
    /// `fsync` after every record.
    #[default]
    Fsync,
    /// Hand the bytes to the OS only. Survives a process crash, not a power cut.
    OsBuffer,
}

/// One record as read from disk, still encrypted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EwalRecord {
    pub seq: Seq,
    pub agent: AgentId,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl EwalRecord {
    fn aad(seq: Seq, agent: AgentId, ct_len: u32) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..8].copy_from_slice(&seq.to_le_bytes());
        h[8..16].copy_from_slice(&agent.0.to_le_bytes());
        h[16..].copy_from_slice(&ct_len.to_le_bytes());
        h
    }

    pub fn seal(seq: Seq, agent: AgentId, key: &SymmetricKey, plaintext: &[u8]) -> Self {
        let nonce = cipher::random_nonce();
        let ct_len = (plaintext.len() + cipher::TAG_LEN) as u32;
        let ciphertext =
            cipher::seal_with_nonce(key, &nonce, plaintext, &Self::aad(seq, agent, ct_len));
        Self {
            seq,
            agent,
            nonce,
            ciphertext,
        }
    }

    pub fn open(&self, key: &SymmetricKey) -> Result<Vec<u8>, AuthFailure> {
        let aad = Self::aad(self.seq, self.agent, self.ciphertext.len() as u32);
        cipher::open_with_nonce(key, &self.nonce, &self.ciphertext, &aad)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + NONCE_LEN + self.ciphertext.len());
        out.extend_from_slice(&Self::aad(self.seq, self.agent, self.ciphertext.len() as u32));
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }
}

/// Result of scanning an existing log file.
#[derive(Debug, Default)]
pub struct LogScan {
    pub records: Vec<EwalRecord>,
    /// Bytes of an incomplete trailing record that were cut off.
    pub torn_tail_bytes: u64,
}

/// Appender for the encrypted write-ahead log. One instance owns the file;
/// callers serialize access (the escrow holds it behind its mutation lock).
#[derive(Debug)]
pub struct Ewal {
    path: PathBuf,
    file: File,
    next_seq: Seq,
    sync: SyncMode,
}

impl Ewal {
    /// Opens (creating if needed) the log at `path` and returns every complete
    /// record in it. A partially written final record is truncated away: it was
    /// never acknowledged. `first_seq` is the sequence number the first record
    /// must carry (one past the checkpoint, or 1).
    pub fn open(path: &Path, first_seq: Seq, sync: SyncMode) -> Result<(Self, LogScan), VaultError> {
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)?;
        let scan = scan(&mut file, first_seq)?;
        let valid_len = file.metadata()?.len() - scan.torn_tail_bytes;
        if scan.torn_tail_bytes > 0 {
            log::warn!(
                "truncating {} bytes of torn tail from {}",
                scan.torn_tail_bytes,
                path.display()
            );
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(valid_len))?;
        let next_seq = scan.records.last().map_or(first_seq, |r| r.seq + 1);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq,
                sync,
            },
            scan,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> Seq {
        self.next_seq
    }

    /// Encrypts `plaintext` under `key`, appends it attributed to `agent`, and
    /// pushes it to disk before returning its sequence number.
    pub fn append(
        &mut self,
        agent: AgentId,
        key: &SymmetricKey,
        plaintext: &[u8],
    ) -> Result<Seq, VaultError> {
        let seq = self.next_seq;
        let rec = EwalRecord::seal(seq, agent, key, plaintext);
        self.file.write_all(&rec.encode())?;
        match self.sync {
            SyncMode::Fsync => self.file.sync_data()?,
            SyncMode::OsBuffer => self.file.flush()?,
        }
        self.next_seq += 1;
        Ok(seq)
    }

    /// Writes only the first `keep` bytes of what would be the next record, as
    /// a crash in the middle of `write` would. Test hook for crash injection.
    #[doc(hidden)]
    pub fn append_torn(
        &mut self,
        agent: AgentId,
        key: &SymmetricKey,
        plaintext: &[u8],
        keep: usize,
    ) -> Result<(), VaultError> {
        let bytes = EwalRecord::seal(self.next_seq, agent, key, plaintext).encode();
        let keep = keep.min(bytes.len().saturating_sub(1));
        self.file.write_all(&bytes[..keep])?;
        self.file.flush()?;
        Ok(())
    }

    /// Drops every record: used after a checkpoint covering `upto_seq`.
    pub fn reset_after_checkpoint(&mut self, upto_seq: Seq) -> Result<(), VaultError> {
        self.file.set_len(0)?;
        self.file.seek(SeekFrom::Start(0))?;
        self.file.sync_all()?;
        self.next_seq = upto_seq + 1;
        Ok(())
    }
}

fn scan(file: &mut File, first_seq: Seq) -> Result<LogScan, VaultError> {
    file.seek(SeekFrom::Start(0))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut out = LogScan::default();
    let mut pos = 0usize;
    let mut expected = first_seq;
    while pos < buf.len() {
        let rest = &buf[pos..];
        if rest.len() < HEADER_LEN + NONCE_LEN {
            out.torn_tail_bytes = rest.len() as u64;
            break;
        }
        let seq = u64::from_le_bytes(rest[..8].try_into().unwrap());
        let agent = AgentId(u64::from_le_bytes(rest[8..16].try_into().unwrap()));
        let ct_len = u32::from_le_bytes(rest[16..20].try_into().unwrap()) as usize;
        let total = HEADER_LEN + NONCE_LEN + ct_len;
        if rest.len() < total {
            if seq != expected {
                return Err(VaultError::CorruptLog {
                    seq: expected,
                    reason: format!("header of incomplete record carries seq {seq}"),
                });
            }
            out.torn_tail_bytes = rest.len() as u64;
            break;
        }
        if seq != expected {
            return Err(VaultError::CorruptLog {
                seq: expected,
                reason: format!("sequence gap: found {seq}"),
            });
        }
        let nonce: [u8; NONCE_LEN] = rest[HEADER_LEN..HEADER_LEN + NONCE_LEN].try_into().unwrap();
        out.records.push(EwalRecord {
            seq,
            agent,
            nonce,
            ciphertext: rest[HEADER_LEN + NONCE_LEN..total].to_vec(),
        });
        expected += 1;
        pos += total;
    }
    Ok(out)
}

/// Sequence number of the first record in the file, if it holds a full header.
pub fn first_seq_on_disk(path: &Path) -> Result<Option<Seq>, VaultError> {
    let mut f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut b = [0u8; 8];
    match f.read_exact(&mut b) {
        Ok(()) => Ok(Some(u64::from_le_bytes(b))),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Reads a log without opening it for append (no truncation).
pub fn read_log(path: &Path, first_seq: Seq) -> Result<LogScan, VaultError> {
    match File::open(path) {
        Ok(mut f) => scan(&mut f, first_seq),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LogScan::default()),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SymmetricKey {
        SymmetricKey::from_bytes([7; 32])
    }

    #[test]
    fn thousand_appends_have_no_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal");
        let (mut wal, scan) = Ewal::open(&path, 1, SyncMode::OsBuffer).unwrap();
        assert!(scan.records.is_empty());
        for i in 0..1000u32 {
            let seq = wal.append(AgentId(1), &key(), &i.to_le_bytes()).unwrap();
            assert_eq!(seq, i as u64 + 1);
        }
        drop(wal);
        let scan = read_log(&path, 1).unwrap();
        let seqs: Vec<_> = scan.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (1..=1000).collect::<Vec<_>>());
        assert_eq!(scan.records[41].open(&key()).unwrap(), 41u32.to_le_bytes());
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal");
        let (mut wal, _) = Ewal::open(&path, 1, SyncMode::OsBuffer).unwrap();
        wal.append(AgentId(0), &key(), b"one").unwrap();
        wal.append_torn(AgentId(0), &key(), b"two", 25).unwrap();
        drop(wal);
        let (mut wal, scan) = Ewal::open(&path, 1, SyncMode::OsBuffer).unwrap();
        assert_eq!(scan.records.len(), 1);
        assert_eq!(scan.torn_tail_bytes, 25);
        assert_eq!(wal.append(AgentId(0), &key(), b"two").unwrap(), 2);
        drop(wal);
        assert_eq!(read_log(&path, 1).unwrap().records.len(), 2);
    }

    #[test]
    fn sequence_gap_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal");
        let mut bytes = EwalRecord::seal(1, AgentId(0), &key(), b"a").encode();
        bytes.extend(EwalRecord::seal(3, AgentId(0), &key(), b"b").encode());
        std::fs::write(&path, bytes).unwrap();
        match read_log(&path, 1) {
            Err(VaultError::CorruptLog { seq, .. }) => assert_eq!(seq, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_is_authenticated() {
        let rec = EwalRecord::seal(5, AgentId(2), &key(), b"payload");
        let mut moved = rec.clone();
        moved.agent = AgentId(3);
        assert!(moved.open(&key()).is_err());
        let mut renumbered = rec.clone();
        renumbered.seq = 6;
        assert!(renumbered.open(&key()).is_err());
        assert_eq!(rec.open(&key()).unwrap(), b"payload");
    }
}
