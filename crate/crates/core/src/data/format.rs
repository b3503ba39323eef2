use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, FragmentRecord};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FFC1";
const VERSION: u16 = 1;
/// magic, version u16, fragment_size u32, record_count u64, num_classes u16, scenario u8,
/// reserved u8.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 8 + 2 + 1 + 1;

/// JSON written next to a corpus file: class names and where the records came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub class_names: Vec<String>,
    pub scenario: u8,
    pub provenance: serde_json::Value,
    /// Per-record provenance tokens, when any record has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<Option<String>>>,
}

impl Sidecar {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let s: Sidecar =
            serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
        if s.class_names.is_empty() {
            return Err(Error::Format("sidecar lists no classes".into()));
        }
        Ok(s)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + corpus.len() * (2 + corpus.fragment_size));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.fragment_size as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.len() as u64).to_le_bytes());
    out.extend_from_slice(&(corpus.num_classes() as u16).to_le_bytes());
    out.push(corpus.scenario);
    out.push(0);
    for r in &corpus.records {
        out.extend_from_slice(&r.label.to_le_bytes());
        out.extend_from_slice(&r.bytes);
    }
    out
}

/// Parses a corpus image. Class names come from `sidecar` when given, otherwise they
/// are `class0`, `class1`, ...
pub fn decode_corpus(bytes: &[u8], sidecar: Option<&Sidecar>) -> Result<Corpus> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the corpus header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a corpus file (bad magic)".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let fragment_size = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let num_classes = u16_at(18) as usize;
    let scenario = bytes[20];
    if bytes[21] != 0 {
        return Err(Error::Format("corpus header reserved byte is not zero".into()));
    }
    if fragment_size == 0 || num_classes == 0 {
        return Err(Error::Format("corpus header has a zero fragment size or class count".into()));
    }
    let expected = usize::try_from(count)
        .ok()
        .and_then(|n| n.checked_mul(2 + fragment_size))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "header declares {count} records of {fragment_size} bytes but the file has {} bytes",
            bytes.len()
        )));
    }
    let class_names = match sidecar {
        Some(s) if s.class_names.len() != num_classes => {
            return Err(Error::Format(format!(
                "sidecar lists {} classes, corpus header says {num_classes}",
                s.class_names.len()
            )))
        }
        Some(s) => s.class_names.clone(),
        None => (0..num_classes).map(|i| format!("class{i}")).collect(),
    };
    let sources = sidecar.and_then(|s| s.sources.as_ref());
    if sources.is_some_and(|s| s.len() as u64 != count) {
        return Err(Error::Format("sidecar source list does not match the record count".into()));
    }
    let records = bytes[HEADER_LEN..]
        .chunks_exact(2 + fragment_size)
        .enumerate()
        .map(|(i, rec)| FragmentRecord {
            label: u16::from_le_bytes([rec[0], rec[1]]),
            bytes: rec[2..].to_vec(),
            source_id: sources.and_then(|s| s[i].clone()),
        })
        .collect();
    let provenance = sidecar.map_or(serde_json::Value::Null, |s| s.provenance.clone());
    if let Some(s) = sidecar {
        if s.scenario != scenario {
            return Err(Error::Format(format!(
                "sidecar scenario {} disagrees with header scenario {scenario}",
                s.scenario
            )));
        }
    }
    Corpus::new(fragment_size, class_names, scenario, records, provenance)
}

fn write_locked(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f: File = OpenOptions::new().create(true).write(true).truncate(false).open(path)?;
    f.lock()?;
    f.set_len(0)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    f.unlock()?;
    Ok(())
}

/// Writes the corpus and its sidecar, holding an exclusive advisory lock on each file
/// while it is written.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    corpus.validate()?;
    let sources = corpus
        .records
        .iter()
        .any(|r| r.source_id.is_some())
        .then(|| corpus.records.iter().map(|r| r.source_id.clone()).collect());
    let sidecar = Sidecar {
        class_names: corpus.class_names.clone(),
        scenario: corpus.scenario,
        provenance: corpus.provenance.clone(),
        sources,
    };
    write_locked(path, &encode_corpus(corpus))?;
    write_locked(&sidecar_path(path), &serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a corpus and, when present, its sidecar.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() { Some(Sidecar::from_json(&fs::read(side)?)?) } else { None };
    decode_corpus(&bytes, sidecar.as_ref())
}
