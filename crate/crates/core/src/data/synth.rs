use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, FragmentRecord};
use crate::error::{Error, Result};

/// Byte-level generators with clearly different statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// One random byte value repeated.
    ConstantFill,
    /// Lower-case word-like tokens, punctuation and line breaks.
    PrintableText,
    /// Independent uniform bytes; the high-entropy case.
    UniformRandom,
    /// Runs of 4 to 64 copies of a random byte.
    RunLength,
    /// A random 2 to 32 byte pattern repeated.
    PeriodicPattern,
    /// A fixed 8-byte magic, then 7-bit noise.
    MagicHeader,
    /// Slowly rising values in 0..64 with a little jitter.
    LowByteGradient,
    /// Base64 alphabet with a line break every 76 characters.
    Base64,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 8] = [
        GeneratorKind::ConstantFill,
        GeneratorKind::PrintableText,
        GeneratorKind::UniformRandom,
        GeneratorKind::RunLength,
        GeneratorKind::PeriodicPattern,
        GeneratorKind::MagicHeader,
        GeneratorKind::LowByteGradient,
        GeneratorKind::Base64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::ConstantFill => "constant-fill",
            GeneratorKind::PrintableText => "printable-text",
            GeneratorKind::UniformRandom => "uniform-random",
            GeneratorKind::RunLength => "run-length",
            GeneratorKind::PeriodicPattern => "periodic-pattern",
            GeneratorKind::MagicHeader => "magic-header",
            GeneratorKind::LowByteGradient => "low-byte-gradient",
            GeneratorKind::Base64 => "base64",
        }
    }

    /// Fills one fragment.
    pub fn generate<R: Rng>(self, rng: &mut R, len: usize) -> Vec<u8> {
        match self {
            GeneratorKind::ConstantFill => vec![rng.gen(); len],
            GeneratorKind::PrintableText => text(rng, len),
            GeneratorKind::UniformRandom => {
                let mut v = vec![0u8; len];
                rng.fill(v.as_mut_slice());
                v
            }
            GeneratorKind::RunLength => {
                let mut v = Vec::with_capacity(len + 64);
                while v.len() < len {
                    let b: u8 = rng.gen();
                    let n = rng.gen_range(4..=64);
                    v.extend(std::iter::repeat_n(b, n));
                }
                v.truncate(len);
                v
            }
            GeneratorKind::PeriodicPattern => {
                let p = rng.gen_range(2..=32);
                let pattern: Vec<u8> = (0..p).map(|_| rng.gen()).collect();
                let phase = rng.gen_range(0..p);
                (0..len).map(|i| pattern[(i + phase) % p]).collect()
            }
            GeneratorKind::MagicHeader => {
                const MAGIC: &[u8; 8] = b"\x89FFC\r\n\x1a\n";
                (0..len)
                    .map(|i| if i < MAGIC.len() { MAGIC[i] } else { rng.gen::<u8>() & 0x7f })
                    .collect()
            }
            GeneratorKind::LowByteGradient => {
                let start = rng.gen_range(0..64usize);
                let step = rng.gen_range(4..=32usize);
                (0..len)
                    .map(|i| ((start + i / step) % 64) as u8 + rng.gen_range(0..3u8))
                    .collect()
            }
            GeneratorKind::Base64 => {
                const ALPHABET: &[u8] =
                    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
                let col = rng.gen_range(0..77usize);
                (0..len)
                    .map(|i| {
                        if (i + col) % 77 == 76 {
                            b'\n'
                        } else {
                            ALPHABET[rng.gen_range(0..64)]
                        }
                    })
                    .collect()
            }
        }
    }
}

fn text<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(len + 16);
    let mut line = 0;
    while v.len() < len {
        let n = rng.gen_range(1..=9);
        for _ in 0..n {
            v.push(b'a' + rng.gen_range(0..26u8));
        }
        line += n + 1;
        let sep = match rng.gen_range(0..20) {
            0 => b'.',
            1 => b',',
            _ => b' ',
        };
        v.push(sep);
        if line > 60 {
            v.push(b'\n');
            line = 0;
        }
    }
    v.truncate(len);
    v
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        GeneratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().split('-').next() == Some(s.as_str()))
            .ok_or_else(|| {
                let known: Vec<&str> = GeneratorKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown generator kind {s:?}; known kinds: {}",
                    known.join(", ")
                ))
            })
    }
}

/// `per_class` fragments for each listed generator; class `i` uses `kinds[i]`.
/// Records are interleaved by class. Deterministic in `seed`.
pub fn synth_corpus(
    kinds: &[GeneratorKind],
    per_class: usize,
    fragment_size: usize,
    seed: u64,
) -> Result<Corpus> {
    if kinds.len() < 2 {
        return Err(Error::InvalidArgument("a synthetic corpus needs at least 2 classes".into()));
    }
    if fragment_size == 0 || per_class == 0 {
        return Err(Error::InvalidArgument("fragment size and per-class count must be positive".into()));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..kinds.len())
        .map(|c| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(c as u64 + 1);
            r
        })
        .collect();
    let mut records = Vec::with_capacity(kinds.len() * per_class);
    for _ in 0..per_class {
        for (c, kind) in kinds.iter().enumerate() {
            records.push(FragmentRecord {
                bytes: kind.generate(&mut rngs[c], fragment_size),
                label: c as u16,
                source_id: None,
            });
        }
    }
    let class_names = kinds.iter().map(|k| k.name().to_string()).collect();
    let provenance = serde_json::json!({
        "kind": "synthetic",
        "generators": kinds,
        "per_class": per_class,
        "seed": seed,
    });
    Corpus::new(fragment_size, class_names, 0, records, provenance)
}

/// The first `classes` built-in generators.
pub fn default_kinds(classes: usize) -> Result<Vec<GeneratorKind>> {
    if !(2..=GeneratorKind::ALL.len()).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpora support 2 to {} classes, got {classes}",
            GeneratorKind::ALL.len()
        )));
    }
    Ok(GeneratorKind::ALL[..classes].to_vec())
}

/// Empirical Shannon entropy of a byte string, in bits per byte.
pub fn byte_entropy(bytes: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}
