//! Golden-vector conformance against externally exported references.
//!
//! A goldens container holds, per case `{case}`:
//!
//! * `golden.{case}.input` and `golden.{case}.expected`
//! * optional `golden.{case}.tolerance` (shape `[1]`, default 1e-3)
//!
//! Recognized cases:
//!
//! * `conv2d`: `golden.conv2d.weight`, optional `.bias`, `.geometry = [stride, padding, groups]`
//! * `batch_norm`: `golden.batch_norm.{gamma,beta,mean,var,eps}`
//! * `hard_swish`
//! * `se.r{K}`: the SE gate of backbone block `r{K}`
//! * `block.r{K}`: backbone block `r{K}`
//! * `prefix`: the whole backbone; expected is the deepest tap

use crate::backbone::{backbone_forward, inverted_residual, se_block, BackbonePrefix};
use crate::error::{invalid, Error, Result};
use crate::io::WeightContainer;
use crate::ops::{batch_norm_infer, conv2d, hard_swish};
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

pub const DEFAULT_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_abs_diff: f32,
    pub tolerance: f32,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_abs_diff <= self.tolerance
    }
}

fn tensor(store: &WeightContainer, name: &str) -> Result<Tensor> {
    store.require(name)?.to_tensor()
}

fn vector(store: &WeightContainer, name: &str) -> Result<Vec<f32>> {
    Ok(store.require(name)?.data.clone())
}

fn block<'a>(backbone: Option<&'a BackbonePrefix>, k: &str) -> Result<&'a crate::backbone::InvertedResidual> {
    let bb = backbone.ok_or_else(|| invalid("backbone weights are required for block goldens"))?;
    let k: usize = k.parse().map_err(|_| invalid(format!("bad block index `{k}`")))?;
    bb.blocks
        .get(k.wrapping_sub(1))
        .ok_or_else(|| invalid(format!("backbone has no block r{k}")))
}

fn evaluate(store: &WeightContainer, case: &str, input: &Tensor, backbone: Option<&BackbonePrefix>) -> Result<Tensor> {
    let p = |s: &str| format!("golden.{case}.{s}");
    match case {
        "conv2d" => {
            let weight = tensor(store, &p("weight"))?;
            let geo = vector(store, &p("geometry"))?;
            let [stride, padding, groups] = <[f32; 3]>::try_from(geo.as_slice())
                .map_err(|_| invalid("conv2d geometry must be [stride, padding, groups]"))?
                .map(|v| v as usize);
            let [o, _, k, _] = weight.shape();
            let bias = store.get(&p("bias")).map(|e| e.data.clone());
            let spec = ConvSpec::new(input.channels(), o, k, stride, padding, groups, weight, bias)?;
            conv2d(input, &spec)
        }
        "batch_norm" => {
            let bn = BatchNormParams::new(
                vector(store, &p("gamma"))?,
                vector(store, &p("beta"))?,
                vector(store, &p("mean"))?,
                vector(store, &p("var"))?,
                vector(store, &p("eps"))?.first().copied().unwrap_or(1e-5),
            )?;
            batch_norm_infer(input, &bn)
        }
        "hard_swish" => Ok(hard_swish(input)),
        "prefix" => {
            let bb = backbone.ok_or_else(|| invalid("backbone weights are required for prefix goldens"))?;
            Ok(backbone_forward(input, bb)?.pop().expect("at least one tap").tensor)
        }
        _ => {
            if let Some(k) = case.strip_prefix("se.r") {
                let b = block(backbone, k)?;
                let se = b.se.as_ref().ok_or_else(|| invalid(format!("block r{k} has no SE gate")))?;
                se_block(input, se)
            } else if let Some(k) = case.strip_prefix("block.r") {
                inverted_residual(input, block(backbone, k)?)
            } else {
                Err(Error::Unsupported(format!("unknown golden case `{case}`")))
            }
        }
    }
}

/// Evaluate every case in `goldens`, in container order.
pub fn run_goldens(goldens: &WeightContainer, backbone: Option<&BackbonePrefix>) -> Result<Vec<CaseResult>> {
    let cases: Vec<String> = goldens
        .names()
        .filter_map(|n| n.strip_prefix("golden.")?.strip_suffix(".input"))
        .map(str::to_string)
        .collect();
    cases
        .into_iter()
        .map(|case| {
            let input = tensor(goldens, &format!("golden.{case}.input"))?;
            let expected = tensor(goldens, &format!("golden.{case}.expected"))?;
            let tolerance = goldens
                .get(&format!("golden.{case}.tolerance"))
                .and_then(|e| e.data.first().copied())
                .unwrap_or(DEFAULT_TOLERANCE);
            let got = evaluate(goldens, &case, &input, backbone)?;
            let max_abs_diff = got.max_abs_diff(&expected).ok_or_else(|| {
                invalid(format!(
                    "case `{case}`: engine output {:?} vs expected {:?}",
                    got.shape(),
                    expected.shape()
                ))
            })?;
            Ok(CaseResult { name: case, max_abs_diff, tolerance })
        })
        .collect()
}
