//! Block-by-block classification of raw images and inference benchmarking.

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::train::argmax;

/// Classification of one block of an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub offset: u64,
    pub class_id: usize,
    pub class_name: String,
    /// Softmax probability of the predicted class.
    pub probability: f32,
}

/// Cuts `image` into consecutive disjoint blocks of the model's fragment size (a trailing
/// partial block is ignored) and classifies each one. Batches run in parallel; the
/// result is ordered by offset.
pub fn classify_image(
    model: &Model<f32>,
    image: &[u8],
    class_names: &[String],
    batch_size: usize,
) -> Result<Vec<BlockRecord>> {
    let size = model.config().fragment_size;
    let k = model.config().num_classes;
    if image.len() < size {
        return Err(Error::InvalidArgument(format!(
            "image has {} bytes, less than one {size}-byte block",
            image.len()
        )));
    }
    if class_names.len() != k {
        return Err(Error::Config(format!(
            "{} class names for a {k}-class model",
            class_names.len()
        )));
    }
    let blocks: Vec<&[u8]> = image.chunks_exact(size).collect();
    let per_batch: Vec<Vec<BlockRecord>> = blocks
        .par_chunks(batch_size.max(1))
        .enumerate()
        .map(|(b, chunk)| {
            let p = model.predict_proba(chunk)?;
            Ok(p.data()
                .chunks(k)
                .enumerate()
                .map(|(i, row)| {
                    let class_id = argmax(row);
                    BlockRecord {
                        offset: ((b * batch_size.max(1) + i) * size) as u64,
                        class_id,
                        class_name: class_names[class_id].clone(),
                        probability: row[class_id],
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[BlockRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Blocks classified for the throughput measurement.
    pub blocks: usize,
    pub batch_size: usize,
    /// Single-block calls timed for the latency measurement.
    pub latency_blocks: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { blocks: 10_000, batch_size: 64, latency_blocks: 1_000, warmup: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fragment_size: usize,
    /// Mean single-block latency at batch 1 on one worker.
    pub ms_per_block: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub latency_blocks: usize,
    pub throughput_blocks: usize,
    pub batch_size: usize,
    pub threads: usize,
    /// Throughput wall time per block at `batch_size`.
    pub seconds_per_block: f64,
    /// Minutes to classify 1 GiB at the measured throughput.
    pub min_per_gib: f64,
    pub blocks_per_gib: u64,
    pub hardware: String,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[i.min(sorted.len() - 1)]
}

/// Times inference on random blocks. Latency is measured at batch 1 on a single worker
/// after `warmup` untimed calls; throughput runs `blocks` blocks at `batch_size` on the
/// current thread pool. Compute only, no I/O.
pub fn bench(model: &Model<f32>, config: &BenchConfig) -> Result<BenchReport> {
    if config.blocks == 0 || config.latency_blocks == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("benchmark sizes must be positive".into()));
    }
    let size = model.config().fragment_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool_len = config.blocks.max(config.latency_blocks + config.warmup).min(4096);
    let mut data = vec![0u8; pool_len * size];
    rng.fill_bytes(&mut data);
    let block = |i: usize| &data[(i % pool_len) * size..(i % pool_len + 1) * size];

    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut lat = single.install(|| -> Result<Vec<f64>> {
        for i in 0..config.warmup {
            model.forward_eval(&[block(i)])?;
        }
        (0..config.latency_blocks)
            .map(|i| {
                let t = Instant::now();
                model.forward_eval(&[block(config.warmup + i)])?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    })?;
    lat.sort_by(f64::total_cmp);
    let ms_per_block = lat.iter().sum::<f64>() / lat.len() as f64;

    let idx: Vec<usize> = (0..config.blocks).collect();
    let t = Instant::now();
    idx.par_chunks(config.batch_size).try_for_each(|chunk| {
        let frags: Vec<&[u8]> = chunk.iter().map(|&i| block(i)).collect();
        model.forward_eval(&frags).map(|_| ())
    })?;
    let wall = t.elapsed().as_secs_f64();
    let seconds_per_block = wall / config.blocks as f64;
    let blocks_per_gib = (1u64 << 30) / size as u64;
    let threads = rayon::current_num_threads();
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(BenchReport {
        fragment_size: size,
        ms_per_block,
        p50_ms: percentile(&lat, 0.5),
        p95_ms: percentile(&lat, 0.95),
        latency_blocks: config.latency_blocks,
        throughput_blocks: config.blocks,
        batch_size: config.batch_size,
        threads,
        seconds_per_block,
        min_per_gib: seconds_per_block * blocks_per_gib as f64 / 60.0,
        blocks_per_gib,
        hardware: format!(
            "{} {} logical CPUs; latency on 1 worker at batch 1, throughput on {threads} workers at batch {}; compute only",
            std::env::consts::ARCH,
            cpus,
            config.batch_size
        ),
    })
}
