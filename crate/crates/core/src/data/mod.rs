//! Corpora of labeled fixed-size fragments: extraction from files, the six labeling
//! scenarios over the 75 known file types, synthetic generators, stratified splits and
//! the on-disk format.

mod format;
mod scenario;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use format::{decode_corpus, encode_corpus, read_corpus, sidecar_path, write_corpus, Sidecar, HEADER_LEN};
pub use scenario::{
    extensions, group_names, group_of, parse_extension, scenario_map, ScenarioMap, GROUPS,
    NUM_EXTENSIONS,
};
pub use synth::{byte_entropy, default_kinds, synth_corpus, GeneratorKind};

use crate::error::{Error, Result};
use crate::models::fnv1a64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub bytes: Vec<u8>,
    pub label: u16,
    pub source_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub fragment_size: usize,
    pub class_names: Vec<String>,
    /// Labeling scenario 1 to 6, or 0 for corpora that do not come from file types.
    pub scenario: u8,
    pub records: Vec<FragmentRecord>,
    pub provenance: serde_json::Value,
}

impl Corpus {
    pub fn new(
        fragment_size: usize,
        class_names: Vec<String>,
        scenario: u8,
        records: Vec<FragmentRecord>,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        let c = Corpus { fragment_size, class_names, scenario, records, provenance };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fragment_size == 0 || self.fragment_size > u32::MAX as usize {
            return Err(Error::Format(format!("invalid fragment size {}", self.fragment_size)));
        }
        if self.class_names.is_empty() || self.class_names.len() > u16::MAX as usize {
            return Err(Error::Format(format!("invalid class count {}", self.class_names.len())));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.bytes.len() != self.fragment_size {
                return Err(Error::Format(format!(
                    "record {i} has {} bytes, corpus fragment size is {}",
                    r.bytes.len(),
                    self.fragment_size
                )));
            }
            if r.label as usize >= self.class_names.len() {
                return Err(Error::Format(format!(
                    "record {i} has label {} but the corpus has {} classes",
                    r.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }

    /// FNV-1a 64 of the encoded corpus, as 16 hex digits.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a64(&encode_corpus(self)))
    }

    fn subset(&self, idx: &[usize], part: &str) -> Corpus {
        Corpus {
            fragment_size: self.fragment_size,
            class_names: self.class_names.clone(),
            scenario: self.scenario,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: serde_json::json!({ "kind": "split", "part": part, "parent": self.provenance }),
        }
    }
}

/// Offsets of the full blocks `extract_fragments` would return.
pub fn fragment_offsets(len: usize, fragment_size: usize, stride: usize, skip_first: bool) -> Result<Vec<usize>> {
    if stride == 0 || fragment_size == 0 {
        return Err(Error::InvalidArgument("fragment size and stride must be positive".into()));
    }
    let first = if skip_first { stride } else { 0 };
    Ok((first..)
        .step_by(stride)
        .take_while(|&o| o.checked_add(fragment_size).is_some_and(|end| end <= len))
        .collect())
}

/// Full blocks at offsets 0, stride, 2*stride, ...; a trailing partial block is dropped.
/// `skip_first` drops the block at offset 0.
pub fn extract_fragments(
    bytes: &[u8],
    fragment_size: usize,
    stride: usize,
    skip_first: bool,
) -> Result<Vec<&[u8]>> {
    Ok(fragment_offsets(bytes.len(), fragment_size, stride, skip_first)?
        .into_iter()
        .map(|o| &bytes[o..o + fragment_size])
        .collect())
}

/// Stratified split into train/validation/test. Each class is shuffled with `seed` and
/// cut at the rounded cumulative ratios.
pub fn split_indices(labels: &[u16], num_classes: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l as usize)
            .ok_or_else(|| Error::Format(format!("label {l} outside {num_classes} classes")))?
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} records, fewer than the 3 partitions",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let a = (n * ratios[0]).round() as usize;
        let b = ((n * (ratios[0] + ratios[1])).round() as usize).max(a);
        parts[0].extend_from_slice(&idx[..a]);
        parts[1].extend_from_slice(&idx[a..b]);
        parts[2].extend_from_slice(&idx[b..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let labels: Vec<u16> = corpus.records.iter().map(|r| r.label).collect();
    let [a, b, c] = split_indices(&labels, corpus.num_classes(), ratios, seed)?;
    Ok((corpus.subset(&a, "train"), corpus.subset(&b, "val"), corpus.subset(&c, "test")))
}

/// What `build_corpus` saw besides the fragments it kept.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub files: usize,
    /// Known file types that the scenario excludes.
    pub excluded_files: usize,
    /// Files whose extension is not one of the 75 known types.
    pub unknown_files: usize,
    pub per_class: Vec<usize>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if p.is_file() {
            out.push(p);
        }
    }
    Ok(())
}

/// Labels every file under `input_dir` by its extension under `scenario` and cuts it into
/// fragments. Files of excluded or unknown types are counted and skipped.
pub fn build_corpus(
    input_dir: &Path,
    fragment_size: usize,
    scenario: u8,
    stride: usize,
    skip_first: bool,
) -> Result<(Corpus, BuildStats)> {
    let map = ScenarioMap::new(scenario)?;
    let mut files = Vec::new();
    walk(input_dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no files under {}", input_dir.display())));
    }
    let mut stats = BuildStats { files: files.len(), per_class: vec![0; map.num_classes()], ..Default::default() };
    let mut records = Vec::new();
    for path in &files {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let label = match map.class_of(ext) {
            Ok(Some(l)) => l,
            Ok(None) => {
                stats.excluded_files += 1;
                continue;
            }
            Err(_) => {
                stats.unknown_files += 1;
                continue;
            }
        };
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(input_dir).unwrap_or(path).display().to_string();
        let offsets = fragment_offsets(bytes.len(), fragment_size, stride, skip_first)?;
        for o in offsets {
            stats.per_class[label as usize] += 1;
            records.push(FragmentRecord {
                bytes: bytes[o..o + fragment_size].to_vec(),
                label,
                source_id: Some(format!("{rel}@{o}")),
            });
        }
    }
    let provenance = serde_json::json!({
        "kind": "files",
        "input_dir": input_dir.display().to_string(),
        "stride": stride,
        "skip_first": skip_first,
        "files": stats.files,
        "excluded_files": stats.excluded_files,
        "unknown_files": stats.unknown_files,
    });
    let corpus = Corpus::new(fragment_size, map.class_names.clone(), scenario, records, provenance)?;
    Ok((corpus, stats))
}
