//! MAC, parameter and filter counts, comparison reports and inference timing.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cost of one layer. `filters` counts conv filters (P) or basis filters (Q).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub macs: u64,
    pub params: u64,
    pub filters: u64,
}

/// Counts for a layer described by `spec` applied to `input_shape`.
pub fn count_spec(spec: &LayerSpec, input_shape: &[usize]) -> Result<LayerCount> {
    let out = spec.output_shape(input_shape)?;
    let c = |v: usize| v as u64;
    Ok(match *spec {
        LayerSpec::Conv {
            in_channels,
            filters,
            kernel,
            ..
        } => {
            let (p, ld2, hw) = (c(filters), c(in_channels * kernel * kernel), c(out[1] * out[2]));
            LayerCount {
                macs: hw * p * ld2,
                params: p * ld2 + p,
                filters: p,
            }
        }
        LayerSpec::BasisConv {
            in_channels,
            filters,
            kernel,
            rank,
            ..
        } => {
            let (p, q, ld2, hw) = (c(filters), c(rank), c(in_channels * kernel * kernel), c(out[1] * out[2]));
            LayerCount {
                macs: hw * q * ld2 + hw * p * q,
                params: q * ld2 + p * q + p,
                filters: q,
            }
        }
        LayerSpec::Dense { inputs, outputs } => LayerCount {
            macs: c(inputs * outputs),
            params: c(inputs * outputs + outputs),
            filters: 0,
        },
        LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => LayerCount::default(),
    })
}

pub fn count_layer<T: Scalar>(layer: &Layer<T>, input_shape: &[usize]) -> Result<LayerCount> {
    count_spec(&layer.spec(), input_shape)
}

/// Per-layer counts of a whole network.
pub fn count_network<T: Scalar>(network: &Network<T>) -> Result<Vec<LayerCount>> {
    let shapes = network.layer_input_shapes()?;
    network
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(l, s)| count_layer(l, s))
        .collect()
}

/// How reported FLOPs relate to MACs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopsConvention {
    /// One FLOP per multiply-accumulate.
    #[default]
    #[serde(rename = "mac")]
    Mac,
    /// Two FLOPs (a multiply and an add) per multiply-accumulate.
    #[serde(rename = "2xmac")]
    TwoXMac,
}

impl FlopsConvention {
    pub fn flops(self, macs: u64) -> u64 {
        match self {
            FlopsConvention::Mac => macs,
            FlopsConvention::TwoXMac => 2 * macs,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FlopsConvention::Mac => "1 FLOP = 1 MAC",
            FlopsConvention::TwoXMac => "1 FLOP = 2 x MAC",
        }
    }
}

impl std::str::FromStr for FlopsConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mac" => Ok(FlopsConvention::Mac),
            "2xmac" => Ok(FlopsConvention::TwoXMac),
            _ => Err(Error::InvalidArgument(format!("unknown FLOPs convention {s:?} (expected mac or 2xmac)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub index: usize,
    pub kind_before: String,
    pub kind_after: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<usize>,
    pub macs_before: u64,
    pub macs_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
    pub filters_before: u64,
    pub filters_after: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub macs_before: u64,
    pub macs_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
    pub filters_before: u64,
    pub filters_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub flops_convention: FlopsConvention,
    pub input_shape: Vec<usize>,
    /// Only layers with a nonzero cost on either side.
    pub layers: Vec<LayerMetrics>,
    pub totals: Totals,
    pub flops_reduction_pct: f64,
    pub params_reduction_pct: f64,
    pub filters_reduction_pct: f64,
    /// `macs_before / macs_after`.
    pub speedup_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy_after: Option<f64>,
}

/// `100 * (1 - after / before)`, or 0 when both are zero.
pub fn reduction_pct(before: u64, after: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (1.0 - after as f64 / before as f64)
    }
}

/// Compares two networks that share a layer layout, such as an original and
/// its compressed form. `accuracies` is `(before, after)` when known.
pub fn compare<T: Scalar, U: Scalar>(
    a: &Network<T>,
    b: &Network<U>,
    input_shape: &[usize],
    accuracies: Option<(f64, f64)>,
    convention: FlopsConvention,
) -> Result<MetricsReport> {
    for (name, net) in [("first", a.input_shape()), ("second", b.input_shape())] {
        if net != input_shape {
            return Err(Error::dim(
                format!("{name} network input"),
                format!("{input_shape:?}"),
                format!("{net:?}"),
            ));
        }
    }
    if a.layers().len() != b.layers().len() {
        return Err(Error::dim("layer count", a.layers().len(), b.layers().len()));
    }
    let (ca, cb) = (count_network(a)?, count_network(b)?);
    let mut layers = Vec::new();
    let mut t = Totals::default();
    for (i, ((x, y), (la, lb))) in ca.iter().zip(&cb).zip(a.layers().iter().zip(b.layers())).enumerate() {
        t.macs_before += x.macs;
        t.macs_after += y.macs;
        t.params_before += x.params;
        t.params_after += y.params;
        t.filters_before += x.filters;
        t.filters_after += y.filters;
        if *x == LayerCount::default() && *y == LayerCount::default() {
            continue;
        }
        let rank = match lb {
            Layer::BasisConv(bc) => Some(bc.rank()),
            _ => None,
        };
        layers.push(LayerMetrics {
            index: i,
            kind_before: la.spec().name().to_string(),
            kind_after: lb.spec().name().to_string(),
            rank,
            macs_before: x.macs,
            macs_after: y.macs,
            flops_before: convention.flops(x.macs),
            flops_after: convention.flops(y.macs),
            params_before: x.params,
            params_after: y.params,
            filters_before: x.filters,
            filters_after: y.filters,
        });
    }
    t.flops_before = convention.flops(t.macs_before);
    t.flops_after = convention.flops(t.macs_after);
    let speedup_ratio = if t.macs_after == 0 {
        1.0
    } else {
        t.macs_before as f64 / t.macs_after as f64
    };
    Ok(MetricsReport {
        flops_convention: convention,
        input_shape: input_shape.to_vec(),
        flops_reduction_pct: reduction_pct(t.macs_before, t.macs_after),
        params_reduction_pct: reduction_pct(t.params_before, t.params_after),
        filters_reduction_pct: reduction_pct(t.filters_before, t.filters_after),
        speedup_ratio,
        layers,
        totals: t,
        accuracy_before: accuracies.map(|a| a.0),
        accuracy_after: accuracies.map(|a| a.1),
    })
}

impl MetricsReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "FLOPs convention: {}", self.flops_convention.describe());
        let _ = writeln!(
            s,
            "{:>5}  {:<10}  {:<10}  {:>4}  {:>12}  {:>12}  {:>10}  {:>10}  {:>7}  {:>7}",
            "layer", "before", "after", "Q", "FLOPs before", "FLOPs after", "params bef", "params aft", "filt b", "filt a"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:<10}  {:<10}  {:>4}  {:>12}  {:>12}  {:>10}  {:>10}  {:>7}  {:>7}",
                l.index,
                l.kind_before,
                l.kind_after,
                l.rank.map_or("-".to_string(), |q| q.to_string()),
                l.flops_before,
                l.flops_after,
                l.params_before,
                l.params_after,
                l.filters_before,
                l.filters_after
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "{:>5}  {:<10}  {:<10}  {:>4}  {:>12}  {:>12}  {:>10}  {:>10}  {:>7}  {:>7}",
            "total", "", "", "", t.flops_before, t.flops_after, t.params_before, t.params_after, t.filters_before, t.filters_after
        );
        let _ = writeln!(s, "FLOPs reduction:   {:.2}%", self.flops_reduction_pct);
        let _ = writeln!(s, "params reduction:  {:.2}%", self.params_reduction_pct);
        let _ = writeln!(s, "filters reduction: {:.2}%", self.filters_reduction_pct);
        let _ = writeln!(s, "speedup ratio:     {:.3}x", self.speedup_ratio);
        if let (Some(a), Some(b)) = (self.accuracy_before, self.accuracy_after) {
            let _ = writeln!(
                s,
                "accuracy:          {:.2}% -> {:.2}% ({:+.2} points)",
                100.0 * a,
                100.0 * b,
                100.0 * (b - a)
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub repetitions: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Wall-clock forward-pass timing on a fixed random input. One warmup pass
/// runs before the measured ones.
pub fn bench_inference<T: Scalar>(network: &Network<T>, repetitions: usize, seed: u64) -> Result<BenchStats> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 repetitions, got {repetitions}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<T>::randn(network.input_shape(), 1.0, &mut rng);
    network.forward(&x)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(network.forward(&x)?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / repetitions as f64;
    times.sort_by(f64::total_cmp);
    let pct = |p: f64| times[((p * repetitions as f64).ceil() as usize).clamp(1, repetitions) - 1];
    Ok(BenchStats {
        repetitions,
        mean_ms,
        p50_ms: pct(0.5),
        p95_ms: pct(0.95),
    })
}
