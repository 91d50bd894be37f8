//! Data element registry, provenance, and encrypted content storage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{EscrowError, Result};
use crate::ids::{AgentId, ContractId, DataElementId};

/// How an element came to exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    Uploaded,
    /// Written by a contract function; owned by the escrow and never
    /// readable by any agent.
    Intermediate { key: String },
    /// Released result of a contract execution.
    Output { contract: ContractId },
}

pub const INTERMEDIATE_TYPE: &str = "intermediate";
pub const OUTPUT_TYPE: &str = "output";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataElementRecord {
    pub id: DataElementId,
    pub owner: AgentId,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub access_parameters: Value,
    pub discoverable: bool,
    pub provenance: BTreeSet<DataElementId>,
}

/// Registry entry: the exported record plus escrow-internal bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementEntry {
    pub record: DataElementRecord,
    pub kind: ElementKind,
    /// Plaintext length of stored content, if any was uploaded.
    pub content_len: Option<u64>,
}

impl ElementEntry {
    pub fn id(&self) -> DataElementId {
        self.record.id
    }

    pub fn owner(&self) -> AgentId {
        self.record.owner
    }
}

/// All registered elements, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    entries: BTreeMap<DataElementId, ElementEntry>,
}

impl Registry {
    pub fn get(&self, id: DataElementId) -> Option<&ElementEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: DataElementId) -> Option<&mut ElementEntry> {
        self.entries.get_mut(&id)
    }

    pub fn contains(&self, id: DataElementId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn insert(&mut self, e: ElementEntry) {
        self.entries.insert(e.id(), e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &ElementEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One JSON object per line with the fields `id`, `owner`, `type`,
    /// `access_parameters`, `discoverable`, `provenance`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(&e.record).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses [`to_json_lines`](Self::to_json_lines) output. Kinds are
    /// inferred from the type tag; content lengths are unknown.
    pub fn records_from_json_lines(s: &str) -> Result<Vec<DataElementRecord>> {
        s.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| EscrowError::InvalidArgument(e.to_string())))
            .collect()
    }

    pub fn closure(&self, root: DataElementId) -> Result<ProvenanceClosure> {
        provenance_closure(|d| self.get(d).map(|e| &e.record), root)
    }

    /// Source agents for a set of elements: every non-escrow owner in the
    /// union of their provenance closures.
    pub fn source_agents(&self, des: &BTreeSet<DataElementId>) -> Result<BTreeSet<AgentId>> {
        let mut out = BTreeSet::new();
        for d in des {
            for m in self.closure(*d)?.members {
                let e = self.get(m).ok_or(EscrowError::UnknownDataElement(m))?;
                if !e.owner().is_system() {
                    out.insert(e.owner());
                }
            }
        }
        Ok(out)
    }
}

/// Transitive provenance of one element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceClosure {
    pub members: BTreeSet<DataElementId>,
    /// Owners of members with empty provenance.
    pub leaf_owners: BTreeSet<AgentId>,
    /// Members with empty provenance that are not uploads (suspicious).
    pub orphans: BTreeSet<DataElementId>,
}

/// Iterative DFS over `provenance` edges, tolerant of shared sub-DAGs.
pub fn provenance_closure<'a>(
    lookup: impl Fn(DataElementId) -> Option<&'a DataElementRecord>,
    root: DataElementId,
) -> Result<ProvenanceClosure> {
    let mut members = BTreeSet::new();
    let mut leaf_owners = BTreeSet::new();
    let mut orphans = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(d) = stack.pop() {
        if !members.insert(d) {
            continue;
        }
        let r = lookup(d).ok_or(EscrowError::UnknownDataElement(d))?;
        if r.provenance.is_empty() {
            if r.owner.is_system() {
                orphans.insert(d);
            } else {
                leaf_owners.insert(r.owner);
            }
        }
        stack.extend(r.provenance.iter().filter(|p| !members.contains(p)));
    }
    Ok(ProvenanceClosure { members, leaf_owners, orphans })
}

/// Where a type's content lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Encrypted blob file under the data directory.
    File,
    /// Encrypted blob held in process memory.
    Memory,
    /// Content fetched from elsewhere; not uploadable.
    Remote,
}

/// Maps type tags to backends.
#[derive(Debug, Clone)]
pub struct Backends {
    by_type: BTreeMap<String, BackendKind>,
}

impl Default for Backends {
    fn default() -> Self {
        let by_type = [
            ("csv", BackendKind::File),
            ("parquet", BackendKind::File),
            ("bytes", BackendKind::File),
            ("kv", BackendKind::Memory),
            ("open_data", BackendKind::Remote),
            (INTERMEDIATE_TYPE, BackendKind::File),
            (OUTPUT_TYPE, BackendKind::File),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Backends { by_type }
    }
}

impl Backends {
    pub fn register(&mut self, type_tag: &str, kind: BackendKind) {
        self.by_type.insert(type_tag.to_string(), kind);
    }

    pub fn kind(&self, type_tag: &str) -> Result<BackendKind> {
        self.by_type
            .get(type_tag)
            .copied()
            .ok_or_else(|| EscrowError::UnsupportedType(type_tag.to_string()))
    }

    /// Rejects unknown types and remote elements without an `endpoint`.
    pub fn validate(&self, type_tag: &str, access_parameters: &Value) -> Result<()> {
        if self.kind(type_tag)? == BackendKind::Remote && access_parameters.get("endpoint").is_none() {
            return Err(EscrowError::InvalidArgument(format!(
                "{type_tag} elements need an \"endpoint\" access parameter"
            )));
        }
        Ok(())
    }
}

/// Associated data binding a blob to the element it belongs to.
pub fn blob_aad(id: DataElementId) -> [u8; 8] {
    id.0.to_le_bytes()
}

pub fn blob_file_name(id: DataElementId) -> String {
    format!("{:020}.enc", id.0)
}

/// Holds ciphertext only. Callers encrypt before `put`.
#[derive(Debug)]
pub struct BlobStore {
    dir: PathBuf,
    memory: Mutex<HashMap<DataElementId, Vec<u8>>>,
}

impl BlobStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(BlobStore { dir: dir.to_path_buf(), memory: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, id: DataElementId) -> PathBuf {
        self.dir.join(blob_file_name(id))
    }

    pub fn put(&self, kind: BackendKind, id: DataElementId, ciphertext: &[u8]) -> Result<()> {
        match kind {
            BackendKind::File => {
                let path = self.path_of(id);
                let tmp = path.with_extension("tmp");
                let mut f = fs::File::create(&tmp)?;
                f.write_all(ciphertext)?;
                f.sync_data()?;
                fs::rename(tmp, path)?;
                Ok(())
            }
            BackendKind::Memory => {
                self.memory.lock().expect("blob map poisoned").insert(id, ciphertext.to_vec());
                Ok(())
            }
            BackendKind::Remote => Err(EscrowError::UnsupportedType("remote content".into())),
        }
    }

    pub fn get(&self, kind: BackendKind, id: DataElementId) -> Result<Vec<u8>> {
        match kind {
            BackendKind::File => fs::read(self.path_of(id)).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => EscrowError::ContentMissing(id),
                _ => e.into(),
            }),
            BackendKind::Memory => self
                .memory
                .lock()
                .expect("blob map poisoned")
                .get(&id)
                .cloned()
                .ok_or(EscrowError::ContentMissing(id)),
            BackendKind::Remote => Err(EscrowError::UnsupportedType("remote fetch is not available".into())),
        }
    }
}
