//! Train→deploy re-parametrization and static cost accounting.
//!
//! A train-mode fusible block computes `conv2(leaky(bn(conv1(x)), a))`.
//! At `a = 1` the Leaky ReLU is the identity, so batch norm folds into
//! `conv1` and the two 1×1 convolutions collapse into a single matrix
//! product. The series activation and resampling are left untouched.

use std::fmt;

use crate::backbone::{BackbonePrefix, InvertedResidual};
use crate::error::{invalid, Error, Result};
use crate::init::WeightInit;
use crate::model::{fusible_forward, FusibleBlock, FusibleBody, LvUnet, Mode, Resample, SkipMode};
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

/// Fold inference batch norm into the preceding convolution:
/// `W'ᵢ = (γᵢ/σᵢ)·Wᵢ`, `B'ᵢ = (Bᵢ − μᵢ)·γᵢ/σᵢ + βᵢ` with `σᵢ = √(varᵢ + ε)`.
pub fn fuse_conv_bn(spec: &ConvSpec, p: &BatchNormParams) -> Result<ConvSpec> {
    spec.validate()?;
    if p.channels() != spec.out_channels {
        return Err(invalid(format!(
            "batch norm has {} channels, convolution outputs {}",
            p.channels(),
            spec.out_channels
        )));
    }
    let per_out = spec.weight.len() / spec.out_channels;
    let mut weight = spec.weight.clone();
    let mut bias = Vec::with_capacity(spec.out_channels);
    for (i, row) in weight.data_mut().chunks_mut(per_out).enumerate() {
        let var = p.variance[i] as f64 + p.epsilon as f64;
        if !(var > 0.0) {
            return Err(invalid(format!("variance + epsilon = {var} is not positive for channel {i}")));
        }
        let scale = p.gamma[i] as f64 / var.sqrt();
        row.iter_mut().for_each(|w| *w = (*w as f64 * scale) as f32);
        let b = spec.bias.as_ref().map_or(0.0, |b| b[i] as f64);
        bias.push(((b - p.mean[i] as f64) * scale + p.beta[i] as f64) as f32);
    }
    ConvSpec::new(
        spec.in_channels,
        spec.out_channels,
        spec.kernel,
        spec.stride,
        spec.padding,
        spec.groups,
        weight,
        Some(bias),
    )
}

fn check_pointwise(spec: &ConvSpec, which: &str) -> Result<()> {
    spec.validate()?;
    if spec.kernel != 1 || spec.stride != 1 || spec.padding != 0 || spec.groups != 1 {
        return Err(Error::Unsupported(format!(
            "{which} convolution must be 1×1, stride 1, no padding, ungrouped"
        )));
    }
    Ok(())
}

/// Single 1×1 convolution equal to `outer(inner(x))`.
pub fn merge_conv1x1(inner: &ConvSpec, outer: &ConvSpec) -> Result<ConvSpec> {
    check_pointwise(inner, "inner")?;
    check_pointwise(outer, "outer")?;
    if outer.in_channels != inner.out_channels {
        return Err(invalid(format!(
            "outer expects {} channels, inner produces {}",
            outer.in_channels, inner.out_channels
        )));
    }
    let (ci, cm, co) = (inner.in_channels, inner.out_channels, outer.out_channels);
    let wi = inner.weight.data();
    let wo = outer.weight.data();
    let mut merged = vec![0.0f32; co * ci];
    let mut bias = vec![0.0f32; co];
    for o in 0..co {
        for i in 0..ci {
            let acc: f64 = (0..cm).map(|m| wo[o * cm + m] as f64 * wi[m * ci + i] as f64).sum();
            merged[o * ci + i] = acc as f32;
        }
        let inner_b: f64 = match &inner.bias {
            Some(b) => (0..cm).map(|m| wo[o * cm + m] as f64 * b[m] as f64).sum(),
            None => 0.0,
        };
        bias[o] = (inner_b + outer.bias.as_ref().map_or(0.0, |b| b[o] as f64)) as f32;
    }
    ConvSpec::pointwise(Tensor::new([co, ci, 1, 1], merged)?, Some(bias))
}

/// Collapse a train-mode block into its deploy form.
pub fn fuse_block(block: &FusibleBlock) -> Result<FusibleBlock> {
    match &block.body {
        FusibleBody::Train { conv1, bn, conv2 } => {
            let conv = merge_conv1x1(&fuse_conv_bn(conv1, bn)?, conv2)?;
            Ok(FusibleBlock { resample: block.resample, body: FusibleBody::Deploy { conv }, act: block.act.clone() })
        }
        FusibleBody::Deploy { .. } => Err(Error::InvalidState("block is already in deploy mode".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFusion {
    pub name: String,
    pub original_params: usize,
    pub fused_params: usize,
    /// Largest `|train(a=1) − deploy|` on the probe input.
    pub max_abs_diff: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    pub blocks: Vec<BlockFusion>,
    pub total_before: usize,
    pub total_after: usize,
}

impl FusionReport {
    pub fn reduction(&self) -> usize {
        self.total_before - self.total_after
    }

    pub fn max_abs_diff(&self) -> f32 {
        self.blocks.iter().map(|b| b.max_abs_diff).fold(0.0, f32::max)
    }

    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            s += &format!("block.{}.params_before={}\n", b.name, b.original_params);
            s += &format!("block.{}.params_after={}\n", b.name, b.fused_params);
            s += &format!("block.{}.max_abs_diff={:e}\n", b.name, b.max_abs_diff);
        }
        s += &format!("total.params_before={}\n", self.total_before);
        s += &format!("total.params_after={}\n", self.total_after);
        s += &format!("total.params_removed={}\n", self.reduction());
        s += &format!("total.max_abs_diff={:e}\n", self.max_abs_diff());
        s
    }
}

impl fmt::Display for FusionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>12}", "block", "before", "after", "max |diff|")?;
        for b in &self.blocks {
            writeln!(
                f,
                "{:<8} {:>10} {:>10} {:>12.3e}",
                b.name, b.original_params, b.fused_params, b.max_abs_diff
            )?;
        }
        writeln!(
            f,
            "model parameters: {} -> {} ({} removed)",
            self.total_before,
            self.total_after,
            self.reduction()
        )
    }
}

const PROBE_SEED: u64 = 0x5eed_f00d;
const PROBE_SIZE: usize = 4;

fn probe_block(name: String, train: &FusibleBlock, fused: &FusibleBlock, init: &mut WeightInit) -> Result<BlockFusion> {
    let x = init.uniform_tensor([1, train.in_channels(), PROBE_SIZE, PROBE_SIZE], -1.0, 1.0);
    let a = fusible_forward(&x, train, 1.0)?;
    let b = fusible_forward(&x, fused, 1.0)?;
    Ok(BlockFusion {
        name,
        original_params: train.param_count(),
        fused_params: fused.param_count(),
        max_abs_diff: a.max_abs_diff(&b).expect("same shape"),
    })
}

/// Rewrite every fusible block into deploy form. Exact only when the model
/// was trained to slope 1; each block is probed at that slope.
pub fn to_deploy(model: &LvUnet) -> Result<(LvUnet, FusionReport)> {
    if model.mode() != Mode::Train {
        return Err(Error::InvalidState("model is already in deploy mode".into()));
    }
    let mut probe = WeightInit::seeded(PROBE_SEED);
    let mut report = Vec::new();
    let mut fuse_all = |prefix: &str, blocks: &[FusibleBlock]| -> Result<Vec<FusibleBlock>> {
        blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let fused = fuse_block(b)?;
                report.push(probe_block(format!("{prefix}.{i}"), b, &fused, &mut probe)?);
                Ok(fused)
            })
            .collect()
    };
    let encoder = fuse_all("enc", &model.encoder)?;
    let decoder = fuse_all("dec", &model.decoder)?;
    let deployed = LvUnet { encoder, decoder, ..model.clone() };
    let report = FusionReport {
        blocks: report,
        total_before: count_params(model).total,
        total_after: count_params(&deployed).total,
    };
    Ok((deployed, report))
}

/// Totals with a per-module breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostBreakdown {
    pub total: u64,
    pub parts: Vec<(String, u64)>,
}

impl CostBreakdown {
    fn from_parts(parts: Vec<(String, u64)>) -> Self {
        Self { total: parts.iter().map(|p| p.1).sum(), parts }
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.parts.iter().find(|p| p.0 == name).map(|p| p.1)
    }
}

impl fmt::Display for CostBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in &self.parts {
            writeln!(f, "  {name:<10} {v:>12}")?;
        }
        writeln!(f, "  {:<10} {:>12}", "total", self.total)
    }
}

/// Parameter count; `total` is also available as a plain integer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub breakdown: CostBreakdown,
}

/// Every stored float: convolution weights and biases, four batch-norm
/// vectors per channel, `(2n+1)²·C + C` per series activation.
pub fn count_params(model: &LvUnet) -> ParamCount {
    let mut parts = vec![("backbone".to_string(), model.backbone.param_count() as u64)];
    for (i, b) in model.encoder.iter().enumerate() {
        parts.push((format!("enc.{i}"), b.param_count() as u64));
    }
    for (i, b) in model.decoder.iter().enumerate() {
        parts.push((format!("dec.{i}"), b.param_count() as u64));
    }
    for (i, r) in model.reducers.iter().enumerate() {
        parts.push((format!("reduce.{i}"), r.param_count() as u64));
    }
    parts.push(("head".to_string(), model.head.param_count() as u64));
    let breakdown = CostBreakdown::from_parts(parts);
    ParamCount { total: breakdown.total as usize, breakdown }
}

/// Multiply-accumulate counter.
///
/// Convolutions cost `C_out·(C_in/groups)·k²·H'·W'`; batch norm, pointwise
/// activations, pooling, resampling and additions cost one per output
/// element; a series activation is a ReLU plus a depthwise convolution.
#[derive(Default)]
struct MacCounter {
    macs: u64,
}

impl MacCounter {
    fn conv(&mut self, spec: &ConvSpec, h: usize, w: usize) -> Result<(usize, usize)> {
        let (oh, ow) = spec.output_hw(h, w)?;
        let per = spec.out_channels * (spec.in_channels / spec.groups) * spec.kernel * spec.kernel;
        self.macs += (per * oh * ow) as u64;
        Ok((oh, ow))
    }

    fn elementwise(&mut self, c: usize, h: usize, w: usize) {
        self.macs += (c * h * w) as u64;
    }

    fn take(&mut self) -> u64 {
        std::mem::take(&mut self.macs)
    }
}

fn block_macs(m: &mut MacCounter, b: &InvertedResidual, h: usize, w: usize) -> Result<(usize, usize)> {
    let e = b.cfg.expansion_channels;
    if let Some(ex) = &b.expand {
        m.conv(&ex.conv, h, w)?;
        m.elementwise(2 * e, h, w);
    }
    let (oh, ow) = m.conv(&b.dw.conv, h, w)?;
    m.elementwise(2 * e, oh, ow);
    if let Some(se) = &b.se {
        let r = se.reduce_to();
        m.elementwise(e, 1, 1);
        m.conv(&se.fc1, 1, 1)?;
        m.elementwise(r, 1, 1);
        m.conv(&se.fc2, 1, 1)?;
        m.elementwise(e, 1, 1);
        m.elementwise(e, oh, ow);
    }
    m.conv(&b.project.conv, oh, ow)?;
    m.elementwise(b.cfg.out_channels, oh, ow);
    if b.has_residual() {
        m.elementwise(b.cfg.out_channels, oh, ow);
    }
    Ok((oh, ow))
}

fn backbone_macs(m: &mut MacCounter, bb: &BackbonePrefix, h: usize, w: usize) -> Result<(usize, usize)> {
    let (mut h, mut w) = m.conv(&bb.init.conv, h, w)?;
    m.elementwise(2 * bb.init.conv.out_channels, h, w);
    for b in &bb.blocks {
        (h, w) = block_macs(m, b, h, w)?;
    }
    Ok((h, w))
}

fn fusible_macs(m: &mut MacCounter, b: &FusibleBlock, h: usize, w: usize) -> Result<(usize, usize)> {
    let c = b.out_channels();
    match &b.body {
        FusibleBody::Train { conv1, conv2, .. } => {
            m.conv(conv1, h, w)?;
            m.elementwise(2 * c, h, w);
            m.conv(conv2, h, w)?;
        }
        FusibleBody::Deploy { conv } => {
            m.conv(conv, h, w)?;
        }
    }
    let (oh, ow) = match b.resample {
        Resample::Pool => (h / 2, w / 2),
        Resample::Upsample => (h * 2, w * 2),
    };
    m.elementwise(c, oh, ow);
    m.elementwise(c, oh, ow);
    m.macs += (b.act.window() * b.act.window() * c * oh * ow) as u64;
    Ok((oh, ow))
}

/// Multiply-accumulate count for one `h × w` image.
pub fn count_flops(model: &LvUnet, h: usize, w: usize) -> Result<CostBreakdown> {
    let div = model.input_divisor();
    if h % div != 0 || w % div != 0 {
        return Err(invalid(format!("input {h}×{w} must be divisible by {div}")));
    }
    let mut m = MacCounter::default();
    let mut parts = Vec::new();
    let (mut ch, mut cw) = backbone_macs(&mut m, &model.backbone, h, w)?;
    parts.push(("backbone".to_string(), m.take()));
    for (i, b) in model.encoder.iter().enumerate() {
        (ch, cw) = fusible_macs(&mut m, b, ch, cw)?;
        parts.push((format!("enc.{i}"), m.take()));
    }
    for (i, b) in model.decoder.iter().enumerate() {
        (ch, cw) = fusible_macs(&mut m, b, ch, cw)?;
        match model.config.skip_mode {
            SkipMode::Add => m.elementwise(b.out_channels(), ch, cw),
            SkipMode::Concat => {
                m.conv(&model.reducers[i], ch, cw)?;
            }
        }
        parts.push((format!("dec.{i}"), m.take()));
    }
    m.elementwise(model.head.in_channels, 2 * ch, 2 * cw);
    m.conv(&model.head, 2 * ch, 2 * cw)?;
    parts.push(("head".to_string(), m.take()));
    Ok(CostBreakdown::from_parts(parts))
}
