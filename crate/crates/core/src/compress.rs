//! Per-layer rank selection and substitution of conv layers by BasisConv.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accounting::count_spec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, BasisConvLayer, ConvLayer, Layer, LayerSpec, Network};
use crate::scalar::Scalar;
use crate::spectral::{decompose, energy_ratio, Decomposition};

/// How ranks were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Smallest Q whose top-Q eigenvalues hold at least `t_min` of the energy.
    EnergyThreshold { t_min: f64 },
    /// Smallest Q whose single-layer substitution loses at most `max_drop`
    /// accuracy on a calibration set.
    AccuracyGuided { max_drop: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer_index: usize,
    /// P
    pub filters: usize,
    /// L
    pub channels: usize,
    /// D
    pub kernel: usize,
    pub chosen_q: usize,
    /// Energy ratio retained at `chosen_q`.
    pub energy_t: f64,
    /// True when the BasisConv form would not have fewer parameters.
    pub skip: bool,
    pub params_before: u64,
    /// Predicted for the BasisConv form, whether or not the layer is skipped.
    pub params_after: u64,
    pub macs_before: u64,
    pub macs_after: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline_accuracy: Option<f64>,
    /// Calibration accuracy with only this layer substituted at `chosen_q`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub policy: Policy,
    pub input_shape: Vec<usize>,
    pub entries: Vec<PlanEntry>,
}

impl CompressionPlan {
    /// Entries that will actually be substituted.
    pub fn active(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(|e| !e.skip)
    }

    /// Checks that every entry refers to a matching conv layer of `network`.
    pub fn validate<T: Scalar>(&self, network: &Network<T>) -> Result<()> {
        if self.input_shape != network.input_shape() {
            return Err(Error::Plan(format!(
                "plan input shape {:?} differs from network input shape {:?}",
                self.input_shape,
                network.input_shape()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.layer_index) {
                return Err(Error::Plan(format!("layer {} appears twice", e.layer_index)));
            }
            let layer = network.layers().get(e.layer_index).ok_or_else(|| {
                Error::Plan(format!(
                    "layer index {} out of range ({} layers)",
                    e.layer_index,
                    network.layers().len()
                ))
            })?;
            let Layer::Conv(c) = layer else {
                return Err(Error::Plan(format!(
                    "layer {} is {}, not conv",
                    e.layer_index,
                    layer.spec().name()
                )));
            };
            if (c.num_filters(), c.channels(), c.kernel()) != (e.filters, e.channels, e.kernel) {
                return Err(Error::Plan(format!(
                    "layer {}: plan expects P={} L={} D={}, network has P={} L={} D={}",
                    e.layer_index,
                    e.filters,
                    e.channels,
                    e.kernel,
                    c.num_filters(),
                    c.channels(),
                    c.kernel()
                )));
            }
            let max = e.filters.min(e.channels * e.kernel * e.kernel);
            if e.chosen_q == 0 || e.chosen_q > max {
                return Err(Error::Plan(format!(
                    "layer {}: Q = {} outside [1, {max}]",
                    e.layer_index, e.chosen_q
                )));
            }
        }
        Ok(())
    }
}

fn conv_layers<T: Scalar>(network: &Network<T>) -> Result<Vec<(usize, &ConvLayer<T>)>> {
    let convs: Vec<_> = network
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            Layer::Conv(c) => Some((i, c)),
            _ => None,
        })
        .collect();
    if convs.is_empty() {
        Err(Error::EmptyPlan)
    } else {
        Ok(convs)
    }
}

fn entry<T: Scalar>(
    index: usize,
    conv: &ConvLayer<T>,
    input_shape: &[usize],
    decomposition: &Decomposition<T>,
    q: usize,
) -> Result<PlanEntry> {
    let before_spec = Layer::Conv(conv.clone()).spec();
    let LayerSpec::Conv {
        in_channels,
        filters,
        kernel,
        stride,
        pad,
    } = before_spec
    else {
        unreachable!("conv spec")
    };
    let after_spec = LayerSpec::BasisConv {
        in_channels,
        filters,
        kernel,
        stride,
        pad,
        rank: q,
    };
    let before = count_spec(&before_spec, input_shape)?;
    let after = count_spec(&after_spec, input_shape)?;
    Ok(PlanEntry {
        layer_index: index,
        filters,
        channels: in_channels,
        kernel,
        chosen_q: q,
        energy_t: energy_ratio(decomposition.eigenvalues(), q)?.as_f64(),
        skip: after.params >= before.params,
        params_before: before.params,
        params_after: after.params,
        macs_before: before.macs,
        macs_after: after.macs,
        baseline_accuracy: None,
        accuracy: None,
    })
}

/// Chooses, for every conv layer, the smallest rank whose energy ratio
/// reaches `t_min`.
pub fn plan_by_energy<T: Scalar>(network: &Network<T>, t_min: f64) -> Result<CompressionPlan> {
    if !(t_min > 0.0 && t_min <= 1.0) {
        return Err(Error::InvalidArgument(format!("t_min {t_min} outside (0, 1]")));
    }
    let shapes = network.layer_input_shapes()?;
    let mut entries = Vec::new();
    for (i, conv) in conv_layers(network)? {
        let dec = decompose(&conv.bank()?)?;
        let eig = dec.eigenvalues();
        let mut q = eig.len();
        for k in 1..=eig.len() {
            if energy_ratio(eig, k)?.as_f64() >= t_min {
                q = k;
                break;
            }
        }
        entries.push(entry(i, conv, &shapes[i], &dec, q)?);
    }
    Ok(CompressionPlan {
        policy: Policy::EnergyThreshold { t_min },
        input_shape: network.input_shape().to_vec(),
        entries,
    })
}

fn substitute<T: Scalar>(network: &Network<T>, index: usize, conv: &ConvLayer<T>, dec: &Decomposition<T>, q: usize) -> Result<Network<T>> {
    let (basis, weights) = dec.truncate(q)?;
    let layer = BasisConvLayer::from_spectral(basis, weights, conv.bias.clone(), conv.stride, conv.pad)?;
    let mut net = network.clone();
    net.replace_layer(index, Layer::BasisConv(layer))?;
    Ok(net)
}

/// Chooses, for every conv layer independently, the smallest rank whose
/// substitution keeps calibration accuracy within `max_drop` of the
/// baseline. Ranks are binary-searched; the chosen rank is always evaluated
/// directly. A layer that misses the target even at full rank is skipped.
pub fn plan_by_accuracy<T: Scalar>(network: &Network<T>, calib: &Dataset<T>, max_drop: f64) -> Result<CompressionPlan> {
    if !(max_drop.is_finite() && max_drop >= 0.0) {
        return Err(Error::InvalidArgument(format!("max_drop {max_drop} must be >= 0")));
    }
    if calib.is_empty() {
        return Err(Error::Data("calibration set is empty".into()));
    }
    let shapes = network.layer_input_shapes()?;
    let convs = conv_layers(network)?;
    let baseline = evaluate(network, calib)?;
    let target = baseline - max_drop;
    let mut entries = Vec::new();
    for (i, conv) in convs {
        let dec = decompose(&conv.bank()?)?;
        let mut tried = BTreeMap::new();
        let mut accuracy_at = |q: usize| -> Result<f64> {
            if let Some(&a) = tried.get(&q) {
                return Ok(a);
            }
            let a = evaluate(&substitute(network, i, conv, &dec, q)?, calib)?;
            tried.insert(q, a);
            Ok(a)
        };
        let (mut lo, mut hi) = (1, dec.max_rank());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if accuracy_at(mid)? >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let acc = accuracy_at(lo)?;
        let mut e = entry(i, conv, &shapes[i], &dec, lo)?;
        e.skip |= acc < target;
        e.baseline_accuracy = Some(baseline);
        e.accuracy = Some(acc);
        entries.push(e);
    }
    Ok(CompressionPlan {
        policy: Policy::AccuracyGuided { max_drop },
        input_shape: network.input_shape().to_vec(),
        entries,
    })
}

/// Replaces every non-skipped planned conv layer with an eigen-initialized
/// BasisConv layer of the planned rank.
pub fn apply_plan<T: Scalar>(network: &Network<T>, plan: &CompressionPlan) -> Result<Network<T>> {
    plan.validate(network)?;
    let mut out = network.clone();
    for e in plan.active() {
        let Layer::Conv(conv) = &network.layers()[e.layer_index] else {
            unreachable!("validated")
        };
        let dec = decompose(&conv.bank()?)?;
        out = substitute(&out, e.layer_index, conv, &dec, e.chosen_q)?;
    }
    Ok(out)
}
