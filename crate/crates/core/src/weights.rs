//! Naming and shape-checked loading of layer parameters from a container.

use crate::error::{invalid, Result};
use crate::io::{TensorEntry, WeightContainer};
use crate::series::SeriesActivationParams;
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

/// Store `{prefix}.weight` and, if present, `{prefix}.bias`.
pub fn push_conv(out: &mut Vec<TensorEntry>, prefix: &str, conv: &ConvSpec) {
    out.push(TensorEntry::from_tensor(format!("{prefix}.weight"), &conv.weight));
    if let Some(b) = &conv.bias {
        out.push(TensorEntry::vector(format!("{prefix}.bias"), b));
    }
}

/// Store `{prefix}.{gamma,beta,mean,var,eps}`.
pub fn push_bn(out: &mut Vec<TensorEntry>, prefix: &str, bn: &BatchNormParams) {
    out.push(TensorEntry::vector(format!("{prefix}.gamma"), &bn.gamma));
    out.push(TensorEntry::vector(format!("{prefix}.beta"), &bn.beta));
    out.push(TensorEntry::vector(format!("{prefix}.mean"), &bn.mean));
    out.push(TensorEntry::vector(format!("{prefix}.var"), &bn.variance));
    out.push(TensorEntry::scalar(format!("{prefix}.eps"), bn.epsilon));
}

pub fn push_series(out: &mut Vec<TensorEntry>, prefix: &str, act: &SeriesActivationParams) {
    out.push(TensorEntry::from_tensor(format!("{prefix}.weight"), &act.weight));
    out.push(TensorEntry::vector(format!("{prefix}.bias"), &act.bias));
}

fn vector(store: &WeightContainer, name: &str, len: usize) -> Result<Vec<f32>> {
    let e = store.require(name)?;
    if e.shape != [len] {
        return Err(invalid(format!("tensor `{name}` has shape {:?}, expected [{len}]", e.shape)));
    }
    Ok(e.data.clone())
}

fn tensor4(store: &WeightContainer, name: &str, shape: [usize; 4]) -> Result<Tensor> {
    let e = store.require(name)?;
    if e.shape != shape {
        return Err(invalid(format!("tensor `{name}` has shape {:?}, expected {shape:?}", e.shape)));
    }
    Tensor::new(shape, e.data.clone())
}

/// Geometry of a convolution to be loaded by name.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: 1, stride: 1, padding: 0, groups: 1 }
    }
}

/// Loads `{prefix}.weight` and an optional `{prefix}.bias`.
pub fn load_conv(store: &WeightContainer, prefix: &str, g: ConvGeometry) -> Result<ConvSpec> {
    let weight = tensor4(
        store,
        &format!("{prefix}.weight"),
        [g.out_channels, g.in_channels / g.groups, g.kernel, g.kernel],
    )?;
    let bias_name = format!("{prefix}.bias");
    let bias = if store.contains(&bias_name) {
        Some(vector(store, &bias_name, g.out_channels)?)
    } else {
        None
    };
    ConvSpec::new(g.in_channels, g.out_channels, g.kernel, g.stride, g.padding, g.groups, weight, bias)
}

/// Loads batch-norm vectors; `{prefix}.eps` falls back to `default_eps` when absent.
pub fn load_bn(
    store: &WeightContainer,
    prefix: &str,
    channels: usize,
    default_eps: f32,
) -> Result<BatchNormParams> {
    let eps_name = format!("{prefix}.eps");
    let epsilon = match store.get(&eps_name) {
        Some(e) if e.data.len() == 1 => e.data[0],
        Some(e) => {
            return Err(invalid(format!("tensor `{eps_name}` has shape {:?}, expected [1]", e.shape)))
        }
        None => default_eps,
    };
    BatchNormParams::new(
        vector(store, &format!("{prefix}.gamma"), channels)?,
        vector(store, &format!("{prefix}.beta"), channels)?,
        vector(store, &format!("{prefix}.mean"), channels)?,
        vector(store, &format!("{prefix}.var"), channels)?,
        epsilon,
    )
}

pub fn load_series(
    store: &WeightContainer,
    prefix: &str,
    channels: usize,
    radius: usize,
) -> Result<SeriesActivationParams> {
    let side = 2 * radius + 1;
    SeriesActivationParams::new(
        radius,
        tensor4(store, &format!("{prefix}.weight"), [channels, 1, side, side])?,
        vector(store, &format!("{prefix}.bias"), channels)?,
    )
}
