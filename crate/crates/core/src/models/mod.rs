//! The three network variants: DSC, DSC-SE (squeeze-and-excitation after every
//! inception block) and M-DSC (depthwise stem, group norm, ReLU, dropout before the
//! head), plus checkpoints and cross-fragment-size weight transfer.

mod blocks;
mod checkpoint;
mod config;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use blocks::{
    inception_block_forward, stem_forward, Block, BlockCtx, Branch, Layout, Norm, Stem,
};
pub use checkpoint::{
    fnv1a64, load_checkpoint, save_checkpoint, transfer_load, Checkpoint, Manifest, TensorIndex,
    TrainingMeta, TransferReport,
};
pub use config::{Architecture, ModelConfig};

use crate::error::{Error, Result};
use crate::layers::{dropout, embedding, global_avgpool, linear, Mode};
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

pub const VOCAB: usize = 256;

/// A built network: its configuration, named weight store and the position of every
/// weight in that store.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    layout: Layout<ParamId>,
    rng: ChaCha8Rng,
}

/// Output of a recorded forward pass.
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    pub logits: Var,
    /// Tape variable for every store entry, in store order.
    pub bound: Vec<Var>,
}

struct Builder<'a, T: Scalar> {
    store: ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    batch_norm: bool,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.gen_range(-bound..=bound))).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data), true)
    }

    /// Kaiming-uniform for a ReLU-family layer with the given fan-in.
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt())
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape), true)
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> Norm<ParamId> {
        let gamma = self.store.add(format!("{prefix}.gamma"), Tensor::ones(&[channels]), true);
        let beta = self.zeros(format!("{prefix}.beta"), &[channels]);
        let running = self.batch_norm.then(|| {
            let m = self.store.add(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false);
            let v = self.store.add(format!("{prefix}.running_var"), Tensor::ones(&[channels]), false);
            (m, v)
        });
        Norm { gamma, beta, running }
    }
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a network. Convolutions and FC layers are Kaiming-uniform in
    /// their fan-in, norm affine parameters start at one/zero, the embedding at
    /// U(-0.05, 0.05). The classifier starts near zero so that a fresh model predicts
    /// close to uniformly.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modified = config.architecture.is_modified();
        let mut b = Builder { store: ParamStore::new(), rng: &mut rng, batch_norm: !modified };

        let e = config.embed_dim;
        let embedding = b.uniform("embedding".into(), &[VOCAB, e], 0.05);
        let k = config.stem_kernel;
        let s = config.stem_out_channels;
        let stem_conv = if modified {
            b.kaiming("stem.dw.w".into(), &[k, e], k)
        } else {
            b.kaiming("stem.conv.w".into(), &[k, e, s], k * e)
        };
        let stem = Stem { conv: stem_conv, depthwise: modified, norm: b.norm("stem.norm", s) };

        let chain = config.channel_chain();
        let mut blocks = Vec::new();
        for (i, pair) in chain.windows(2).enumerate() {
            let (m, n) = (pair[0], pair[1]);
            let p = format!("block{}", i + 1);
            let branches = config
                .branch_kernels
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    let q = format!("{p}.branch{}", j + 1);
                    let dw = b.kaiming(format!("{q}.dw.w"), &[k, m], k);
                    let dw_norm = b.norm(&format!("{q}.dw_norm"), m);
                    let pw = b.kaiming(format!("{q}.pw.w"), &[m, n], m);
                    let pw_norm = b.norm(&format!("{q}.pw_norm"), n);
                    Branch { dw, dw_norm, pw, pw_norm }
                })
                .collect();
            let shortcut = (m != n).then(|| {
                let w = b.kaiming(format!("{p}.shortcut.w"), &[m, n], m);
                (w, b.zeros(format!("{p}.shortcut.b"), &[n]))
            });
            let se = (config.architecture == Architecture::DscSe).then(|| {
                let h = n / config.se_reduction;
                [
                    b.kaiming(format!("{p}.se.fc1.w"), &[n, h], n),
                    b.zeros(format!("{p}.se.fc1.b"), &[h]),
                    b.kaiming(format!("{p}.se.fc2.w"), &[h, n], h),
                    b.zeros(format!("{p}.se.fc2.b"), &[n]),
                ]
            });
            blocks.push(Block { branches, shortcut, se });
        }
        let (c, kc) = (config.head_channels, config.num_classes);
        let head_w = b.uniform("head.w".into(), &[c, kc], 0.1 / c as f64);
        let head_b = b.zeros("head.b".into(), &[kc]);
        let layout = Layout { embedding, stem, blocks, head_w, head_b };
        let store = b.store;
        Ok(Model { config: config.clone(), store, layout, rng })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn layout(&self) -> &Layout<ParamId> {
        &self.layout
    }

    /// Trainable element count.
    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Reseeds the dropout generator.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Same network in another scalar type (f64 for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
            rng: self.rng.clone(),
        }
    }

    fn symbols(&self, fragments: &[&[u8]]) -> Result<Vec<u32>> {
        let want = self.config.fragment_size;
        if fragments.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut out = Vec::with_capacity(fragments.len() * want);
        for (i, f) in fragments.iter().enumerate() {
            if f.len() != want {
                return Err(Error::InvalidShape(format!(
                    "fragment {i} has {} bytes; this model expects fragments of {want} bytes",
                    f.len()
                )));
            }
            out.extend(f.iter().map(|&b| b as u32));
        }
        Ok(out)
    }

    /// Records the network on `tape` using `vars` (one per store entry) as weights.
    /// Returns the `[B, K]` logits and the batch statistics of every batch-norm layer
    /// when `mode` is training.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        fragments: &[&[u8]],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Var, BlockCtx<'_, T>)> {
        if vars.len() != self.store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} bound variables for {} weights",
                vars.len(),
                self.store.len()
            )));
        }
        let symbols = self.symbols(fragments)?;
        let cfg = &self.config;
        let lay = self.layout.map(|id| vars[id.index()]);
        let mut ctx = BlockCtx {
            store: &self.store,
            mode,
            modified: cfg.architecture.is_modified(),
            groups: cfg.norm_groups,
            se_reduction: cfg.se_reduction,
            pool_window: cfg.pool_window,
            stats: Vec::new(),
        };
        let x = embedding(tape, lay.embedding, &symbols, &[fragments.len(), cfg.fragment_size])?;
        let mut h = stem_forward(tape, &mut ctx, x, &lay.stem)?;
        for block in &lay.blocks {
            h = inception_block_forward(tape, &mut ctx, h, block)?;
        }
        let mut pooled = global_avgpool(tape, h)?;
        if cfg.architecture.is_modified() {
            pooled = dropout(tape, pooled, cfg.dropout_p, mode, rng)?;
        }
        let logits = linear(tape, pooled, lay.head_w, lay.head_b)?;
        Ok((logits, ctx))
    }

    /// Training-mode forward pass with gradient recording. Batch-norm running statistics
    /// are updated from this batch.
    pub fn forward(&mut self, fragments: &[&[u8]]) -> Result<ForwardPass<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let mut rng = self.rng.clone();
        let (logits, ctx) = self.forward_on(&mut tape, &bound, fragments, Mode::Train, &mut rng)?;
        let stats = ctx.stats;
        for (mean_id, var_id, s) in stats {
            let mut rm = self.store.get(mean_id).data().to_vec();
            let mut rv = self.store.get(var_id).data().to_vec();
            s.update_running(&mut rm, &mut rv, 0.1);
            self.store.get_mut(mean_id).data_mut().copy_from_slice(&rm);
            self.store.get_mut(var_id).data_mut().copy_from_slice(&rv);
        }
        self.rng = rng;
        Ok(ForwardPass { tape, logits, bound })
    }

    /// Evaluation-mode logits `[B, K]`; nothing is recorded for backpropagation.
    pub fn forward_eval(&self, fragments: &[&[u8]]) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let bound = self.store.bind(&mut tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (logits, _) = self.forward_on(&mut tape, &bound, fragments, Mode::Eval, &mut rng)?;
        Ok(tape.value(logits).clone())
    }

    /// Row-wise softmax of the evaluation logits.
    pub fn predict_proba(&self, fragments: &[&[u8]]) -> Result<Tensor<T>> {
        let logits = self.forward_eval(fragments)?;
        let k = self.config.num_classes;
        let mut p = logits.into_data();
        for row in p.chunks_mut(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        Tensor::new(&[fragments.len(), k], p)
    }
}
