//! Analytic parameter and multiply-accumulate accounting.
//!
//! Convolution costs use the output length as `D_F`, so a strided layer is charged for
//! the positions it actually computes. Normalization, activation and pooling are charged
//! two operations per element.

use std::fmt::{self, Write as _};

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::layers::{ConvKind, ConvLayerSpec};
use crate::models::{Architecture, Model, ModelConfig, VOCAB};
use crate::tensor::Scalar;

/// `D_F * N * M * D_K`.
pub fn standard_conv_cost(spec: &ConvLayerSpec) -> u64 {
    spec.out_len() as u64 * spec.n as u64 * spec.m as u64 * spec.d_k as u64
}

/// `D_F * M * D_K`; independent of `N`.
pub fn depthwise_cost(spec: &ConvLayerSpec) -> u64 {
    spec.out_len() as u64 * spec.m as u64 * spec.d_k as u64
}

/// Depthwise pass plus the 1x1 pass: `D_F * M * D_K + D_F * N * M`.
pub fn separable_cost(spec: &ConvLayerSpec) -> u64 {
    depthwise_cost(spec) + spec.out_len() as u64 * spec.n as u64 * spec.m as u64
}

/// Separable over standard cost, `1/N + 1/D_K`, exactly.
pub fn reduction_ratio(n: u64, d_k: u64) -> Ratio<u64> {
    Ratio::new(1, n) + Ratio::new(1, d_k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    ConvStandard,
    ConvDepthwise,
    ConvPointwise,
    BatchNorm,
    GroupNorm,
    Activation,
    MaxPool,
    Add,
    AvgPool,
    Linear,
    Scale,
    Dropout,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Embedding => "embedding",
            LayerKind::ConvStandard => "conv_standard",
            LayerKind::ConvDepthwise => "conv_depthwise",
            LayerKind::ConvPointwise => "conv_pointwise",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::GroupNorm => "group_norm",
            LayerKind::Activation => "activation",
            LayerKind::MaxPool => "max_pool",
            LayerKind::Add => "add",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::Linear => "linear",
            LayerKind::Scale => "scale",
            LayerKind::Dropout => "dropout",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    /// Output length for convolutions, input length otherwise.
    pub d_f: usize,
    pub d_k: usize,
    pub m: usize,
    pub n: usize,
    pub params: u64,
    pub mult_adds: u64,
}

/// A depthwise + pointwise pair and what the same layer would cost as one standard conv.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeparableRow {
    pub name: String,
    pub spec: ConvLayerSpec,
    pub separable_cost: u64,
    pub standard_cost: u64,
    #[serde(serialize_with = "ratio_ser")]
    pub ratio: Ratio<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub params: u64,
    pub mult_adds: u64,
    /// Summed separable cost over summed standard-equivalent cost.
    #[serde(serialize_with = "opt_ratio_ser")]
    pub reduction_ratio: Option<Ratio<u64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub architecture: Architecture,
    pub fragment_size: usize,
    pub num_classes: usize,
    pub rows: Vec<CostRow>,
    pub separable: Vec<SeparableRow>,
    pub totals: CostTotals,
}

#[derive(Serialize)]
struct RatioJson {
    numer: u64,
    denom: u64,
    value: f64,
}

fn ratio_json(r: &Ratio<u64>) -> RatioJson {
    RatioJson { numer: *r.numer(), denom: *r.denom(), value: ratio_f64(r) }
}

fn ratio_ser<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    ratio_json(r).serialize(s)
}

fn opt_ratio_ser<S: Serializer>(r: &Option<Ratio<u64>>, s: S) -> Result<S::Ok, S::Error> {
    r.as_ref().map(ratio_json).serialize(s)
}

pub fn ratio_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

struct Plan {
    rows: Vec<CostRow>,
    separable: Vec<SeparableRow>,
}

impl Plan {
    fn row(&mut self, name: String, kind: LayerKind, d_f: usize, d_k: usize, m: usize, n: usize, params: usize, mult_adds: u64) {
        self.rows.push(CostRow { name, kind, d_f, d_k, m, n, params: params as u64, mult_adds });
    }

    fn conv(&mut self, name: String, spec: ConvLayerSpec, bias: bool) {
        let (kind, cost) = match spec.kind {
            ConvKind::Standard => (LayerKind::ConvStandard, standard_conv_cost(&spec)),
            ConvKind::Depthwise => (LayerKind::ConvDepthwise, depthwise_cost(&spec)),
            ConvKind::Pointwise => (LayerKind::ConvPointwise, standard_conv_cost(&spec)),
        };
        let params = spec.weight_count() + if bias { spec.n } else { 0 };
        self.row(name, kind, spec.out_len(), spec.d_k, spec.m, spec.n, params, cost);
    }

    /// Two ops per element, no parameters.
    fn elementwise(&mut self, name: String, kind: LayerKind, len: usize, c: usize) {
        self.row(name, kind, len, 1, c, c, 0, 2 * (len * c) as u64);
    }

    fn norm(&mut self, name: String, modified: bool, len: usize, c: usize) {
        let kind = if modified { LayerKind::GroupNorm } else { LayerKind::BatchNorm };
        self.row(name, kind, len, 1, c, c, 2 * c, 2 * (len * c) as u64);
    }

    fn add(&mut self, name: String, terms: usize, len: usize, c: usize) {
        self.row(name, LayerKind::Add, len, 1, c, c, 0, ((terms - 1) * len * c) as u64);
    }

    fn linear(&mut self, name: String, m: usize, n: usize) {
        self.row(name, LayerKind::Linear, 1, 1, m, n, m * n + n, (m * n) as u64);
    }
}

/// Layer-by-layer cost of `config` evaluated at `fragment_size` (which may differ from
/// the configured size; weights do not depend on it).
pub fn analyze(config: &ModelConfig, fragment_size: usize) -> CostReport {
    let modified = config.architecture.is_modified();
    let mut p = Plan { rows: Vec::new(), separable: Vec::new() };
    let e = config.embed_dim;
    let s = config.stem_out_channels;
    let mut len = fragment_size;
    p.row("embedding".into(), LayerKind::Embedding, len, 1, VOCAB, e, VOCAB * e, 0);
    if modified {
        p.conv("stem.dw".into(), ConvLayerSpec::depthwise(len, config.stem_kernel, e, 1), false);
    } else {
        p.conv("stem.conv".into(), ConvLayerSpec::standard(len, config.stem_kernel, e, s, 1), false);
    }
    p.norm("stem.norm".into(), modified, len, s);
    p.elementwise("stem.act".into(), LayerKind::Activation, len, s);

    let w = config.pool_window;
    for (i, pair) in config.channel_chain().windows(2).enumerate() {
        let (m, n) = (pair[0], pair[1]);
        let b = format!("block{}", i + 1);
        for (j, &k) in config.branch_kernels.iter().enumerate() {
            let q = format!("{b}.branch{}", j + 1);
            let dw = ConvLayerSpec::depthwise(len, k, m, 1);
            let pw = ConvLayerSpec::pointwise(len, m, n, 1);
            p.conv(format!("{q}.dw"), dw, false);
            p.norm(format!("{q}.dw_norm"), modified, len, m);
            p.elementwise(format!("{q}.dw_act"), LayerKind::Activation, len, m);
            p.conv(format!("{q}.pw"), pw, false);
            p.norm(format!("{q}.pw_norm"), modified, len, n);
            p.elementwise(format!("{q}.pw_act"), LayerKind::Activation, len, n);
            let spec = ConvLayerSpec::standard(len, k, m, n, 1);
            let standard_cost = standard_conv_cost(&spec);
            let separable_cost = separable_cost(&spec);
            p.separable.push(SeparableRow {
                name: q,
                spec,
                separable_cost,
                standard_cost,
                ratio: Ratio::new(separable_cost, standard_cost),
            });
        }
        p.add(format!("{b}.branch_sum"), config.branch_kernels.len(), len, n);
        p.elementwise(format!("{b}.pool"), LayerKind::MaxPool, len, n);
        let out = len / w;
        if m != n {
            p.conv(format!("{b}.shortcut"), ConvLayerSpec::pointwise(len, m, n, w), true);
        } else {
            p.elementwise(format!("{b}.shortcut_pool"), LayerKind::MaxPool, len, n);
        }
        p.add(format!("{b}.residual"), 2, out, n);
        if config.architecture == Architecture::DscSe {
            let h = n / config.se_reduction;
            p.elementwise(format!("{b}.se.squeeze"), LayerKind::AvgPool, out, n);
            p.linear(format!("{b}.se.fc1"), n, h);
            p.elementwise(format!("{b}.se.relu"), LayerKind::Activation, 1, h);
            p.linear(format!("{b}.se.fc2"), h, n);
            p.elementwise(format!("{b}.se.sigmoid"), LayerKind::Activation, 1, n);
            p.row(format!("{b}.se.scale"), LayerKind::Scale, out, 1, n, n, 0, (out * n) as u64);
        }
        len = out;
    }
    let c = config.head_channels;
    p.elementwise("global_pool".into(), LayerKind::AvgPool, len, c);
    if modified {
        p.row("dropout".into(), LayerKind::Dropout, 1, 1, c, c, 0, 0);
    }
    p.linear("head".into(), c, config.num_classes);

    let params = p.rows.iter().map(|r| r.params).sum();
    let mult_adds = p.rows.iter().map(|r| r.mult_adds).sum();
    let (sep, std): (u64, u64) = p
        .separable
        .iter()
        .fold((0, 0), |(a, b), r| (a + r.separable_cost, b + r.standard_cost));
    let reduction_ratio = (std > 0).then(|| Ratio::new(sep, std));
    CostReport {
        architecture: config.architecture,
        fragment_size,
        num_classes: config.num_classes,
        rows: p.rows,
        separable: p.separable,
        totals: CostTotals { params, mult_adds, reduction_ratio },
    }
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> CostReport {
    analyze(model.config(), model.config().fragment_size)
}

pub fn count_flops<T: Scalar>(model: &Model<T>, fragment_size: usize) -> CostReport {
    analyze(model.config(), fragment_size)
}

impl CostReport {
    pub fn mflops(&self) -> f64 {
        self.totals.mult_adds as f64 / 1e6
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }

    /// Aligned text table: one line per layer, totals, then one reduction-ratio line per
    /// separable unit.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} fragment={} classes={}",
            self.architecture, self.fragment_size, self.num_classes
        );
        let _ = writeln!(
            out,
            "{:<26} {:<15} {:>6} {:>4} {:>5} {:>5} {:>9} {:>13}",
            "layer", "kind", "D_F", "D_K", "M", "N", "params", "mult_adds"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<26} {:<15} {:>6} {:>4} {:>5} {:>5} {:>9} {:>13}",
                r.name, r.kind, r.d_f, r.d_k, r.m, r.n, r.params, r.mult_adds
            );
        }
        let _ = writeln!(
            out,
            "total params {}  mult-adds {} ({:.2} M)",
            self.totals.params,
            self.totals.mult_adds,
            self.mflops()
        );
        for s in &self.separable {
            let _ = writeln!(
                out,
                "ratio {:<20} N={:<4} D_K={:<3} separable/standard = {} = {:.6}",
                s.name,
                s.spec.n,
                s.spec.d_k,
                s.ratio,
                ratio_f64(&s.ratio)
            );
        }
        if let Some(r) = &self.totals.reduction_ratio {
            let _ = writeln!(out, "overall separable/standard = {:.6}", ratio_f64(r));
        }
        out
    }
}
