//! MobileNetV3-Large encoder prefix: the initial convolution and inverted
//! residual blocks `r1..r14`, with one feature tap per spatial stride.

use crate::error::{invalid, Result};
use crate::init::WeightInit;
use crate::io::{TensorEntry, WeightContainer};
use crate::ops::{
    add, batch_norm_infer, conv2d, global_avg_pool, hard_sigmoid, hard_swish, relu, scale_channels,
};
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};
use crate::weights::{load_bn, load_conv, push_bn, push_conv, ConvGeometry};

/// Batch-norm epsilon of the published backbone.
pub const BACKBONE_BN_EPS: f32 = 1e-3;
pub const STEM_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    HardSwish,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Self::Relu => relu(x),
            Self::HardSwish => hard_swish(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvertedResidualConfig {
    pub kernel: usize,
    pub expansion_channels: usize,
    pub out_channels: usize,
    pub use_se: bool,
    pub activation: Activation,
    pub stride: usize,
}

const fn ir(
    kernel: usize,
    expansion_channels: usize,
    out_channels: usize,
    use_se: bool,
    activation: Activation,
    stride: usize,
) -> InvertedResidualConfig {
    InvertedResidualConfig { kernel, expansion_channels, out_channels, use_se, activation, stride }
}

use Activation::{HardSwish as HS, Relu as RE};

/// Blocks `r1..r14` of MobileNetV3-Large.
pub const MOBILENET_V3_LARGE: [InvertedResidualConfig; 14] = [
    ir(3, 16, 16, false, RE, 1),
    ir(3, 64, 24, false, RE, 2),
    ir(3, 72, 24, false, RE, 1),
    ir(5, 72, 40, true, RE, 2),
    ir(5, 120, 40, true, RE, 1),
    ir(5, 120, 40, true, RE, 1),
    ir(3, 240, 80, false, HS, 2),
    ir(3, 200, 80, false, HS, 1),
    ir(3, 184, 80, false, HS, 1),
    ir(3, 184, 80, false, HS, 1),
    ir(3, 480, 112, true, HS, 1),
    ir(3, 672, 112, true, HS, 1),
    ir(5, 672, 160, true, HS, 2),
    ir(5, 960, 160, true, HS, 1),
];

/// Round to the nearest multiple of `divisor`, never going below 90% of `v`.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

/// Convolution followed by inference batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvSpec,
    pub bn: BatchNormParams,
}

impl ConvBn {
    pub fn forward(&self, x: &Tensor, act: Option<Activation>) -> Result<Tensor> {
        let y = batch_norm_infer(&conv2d(x, &self.conv)?, &self.bn)?;
        Ok(match act {
            Some(a) => a.apply(&y),
            None => y,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    fn random(init: &mut WeightInit, g: ConvGeometry) -> Self {
        Self {
            conv: init.conv(g.in_channels, g.out_channels, g.kernel, g.stride, g.padding, g.groups, false),
            bn: init.batch_norm(g.out_channels, BACKBONE_BN_EPS),
        }
    }

    fn push(&self, out: &mut Vec<TensorEntry>, prefix: &str) {
        push_conv(out, &format!("{prefix}.conv"), &self.conv);
        push_bn(out, &format!("{prefix}.bn"), &self.bn);
    }

    fn load(store: &WeightContainer, prefix: &str, g: ConvGeometry) -> Result<Self> {
        Ok(Self {
            conv: load_conv(store, &format!("{prefix}.conv"), g)?,
            bn: load_bn(store, &format!("{prefix}.bn"), g.out_channels, BACKBONE_BN_EPS)?,
        })
    }
}

/// Squeeze-and-excitation gate: two 1×1 convolutions on the pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeExcite {
    pub fc1: ConvSpec,
    pub fc2: ConvSpec,
}

impl SqueezeExcite {
    pub fn reduce_to(&self) -> usize {
        self.fc1.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}

/// `x · hard_sigmoid(fc2(relu(fc1(avgpool(x)))))`, per channel.
pub fn se_block(x: &Tensor, se: &SqueezeExcite) -> Result<Tensor> {
    if x.channels() != se.fc1.in_channels || se.fc2.out_channels != x.channels() {
        return Err(invalid(format!(
            "SE block expects {} channels, input has {}",
            se.fc1.in_channels,
            x.channels()
        )));
    }
    let pooled = global_avg_pool(x);
    let gate = hard_sigmoid(&conv2d(&relu(&conv2d(&pooled, &se.fc1)?), &se.fc2)?);
    scale_channels(x, &gate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidual {
    /// 1-based block number, `r{index}`.
    pub index: usize,
    pub cfg: InvertedResidualConfig,
    pub in_channels: usize,
    pub expand: Option<ConvBn>,
    pub dw: ConvBn,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBn,
}

impl InvertedResidual {
    pub fn has_residual(&self) -> bool {
        self.cfg.stride == 1 && self.in_channels == self.cfg.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.expand.as_ref().map_or(0, ConvBn::param_count)
            + self.dw.param_count()
            + self.se.as_ref().map_or(0, SqueezeExcite::param_count)
            + self.project.param_count()
    }

    fn geometries(index: usize, in_channels: usize) -> BlockGeometry {
        let cfg = MOBILENET_V3_LARGE[index - 1];
        let e = cfg.expansion_channels;
        BlockGeometry {
            cfg,
            expand: (e != in_channels).then(|| ConvGeometry::pointwise(in_channels, e)),
            dw: ConvGeometry {
                in_channels: e,
                out_channels: e,
                kernel: cfg.kernel,
                stride: cfg.stride,
                padding: (cfg.kernel - 1) / 2,
                groups: e,
            },
            se_reduce: cfg.use_se.then(|| make_divisible(e as f64 / 4.0, 8)),
            project: ConvGeometry::pointwise(e, cfg.out_channels),
        }
    }

    fn random(index: usize, in_channels: usize, init: &mut WeightInit) -> Self {
        let g = Self::geometries(index, in_channels);
        let e = g.cfg.expansion_channels;
        Self {
            index,
            cfg: g.cfg,
            in_channels,
            expand: g.expand.map(|eg| ConvBn::random(init, eg)),
            dw: ConvBn::random(init, g.dw),
            se: g.se_reduce.map(|r| SqueezeExcite {
                fc1: init.pointwise(e, r, true),
                fc2: init.pointwise(r, e, true),
            }),
            project: ConvBn::random(init, g.project),
        }
    }

    fn prefix(&self) -> String {
        format!("backbone.r{}", self.index)
    }

    fn push(&self, out: &mut Vec<TensorEntry>) {
        let p = self.prefix();
        if let Some(e) = &self.expand {
            e.push(out, &format!("{p}.expand"));
        }
        self.dw.push(out, &format!("{p}.dw"));
        if let Some(se) = &self.se {
            push_conv(out, &format!("{p}.se.fc1.conv"), &se.fc1);
            push_conv(out, &format!("{p}.se.fc2.conv"), &se.fc2);
        }
        self.project.push(out, &format!("{p}.project"));
    }

    fn load(store: &WeightContainer, index: usize, in_channels: usize) -> Result<Self> {
        let g = Self::geometries(index, in_channels);
        let p = format!("backbone.r{index}");
        let e = g.cfg.expansion_channels;
        let se = match g.se_reduce {
            Some(r) => Some(SqueezeExcite {
                fc1: load_conv(store, &format!("{p}.se.fc1.conv"), ConvGeometry::pointwise(e, r))?,
                fc2: load_conv(store, &format!("{p}.se.fc2.conv"), ConvGeometry::pointwise(r, e))?,
            }),
            None => None,
        };
        Ok(Self {
            index,
            cfg: g.cfg,
            in_channels,
            expand: g.expand.map(|eg| ConvBn::load(store, &format!("{p}.expand"), eg)).transpose()?,
            dw: ConvBn::load(store, &format!("{p}.dw"), g.dw)?,
            se,
            project: ConvBn::load(store, &format!("{p}.project"), g.project)?,
        })
    }
}

struct BlockGeometry {
    cfg: InvertedResidualConfig,
    expand: Option<ConvGeometry>,
    dw: ConvGeometry,
    se_reduce: Option<usize>,
    project: ConvGeometry,
}

/// expand → depthwise → SE → linear project, plus the input when the
/// block keeps both stride and width.
pub fn inverted_residual(x: &Tensor, block: &InvertedResidual) -> Result<Tensor> {
    if x.channels() != block.in_channels {
        return Err(invalid(format!(
            "r{} expects {} input channels, got {}",
            block.index,
            block.in_channels,
            x.channels()
        )));
    }
    let act = Some(block.cfg.activation);
    let mut y = match &block.expand {
        Some(e) => e.forward(x, act)?,
        None => x.clone(),
    };
    y = block.dw.forward(&y, act)?;
    if let Some(se) = &block.se {
        y = se_block(&y, se)?;
    }
    y = block.project.forward(&y, None)?;
    if block.has_residual() {
        y = add(&y, x)?;
    }
    Ok(y)
}

pub fn init_geometry() -> ConvGeometry {
    ConvGeometry { in_channels: 3, out_channels: STEM_CHANNELS, kernel: 3, stride: 2, padding: 1, groups: 1 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackbonePrefix {
    pub init: ConvBn,
    pub blocks: Vec<InvertedResidual>,
}

/// One feature map exposed for a skip connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub stride: usize,
    pub tensor: Tensor,
}

impl BackbonePrefix {
    fn check_last(last: usize) -> Result<()> {
        if !(1..=MOBILENET_V3_LARGE.len()).contains(&last) {
            return Err(invalid(format!("backbone must end at r1..r14, got r{last}")));
        }
        Ok(())
    }

    /// Prefix ending at block `r{last}`.
    pub fn random(last: usize, init: &mut WeightInit) -> Result<Self> {
        Self::check_last(last)?;
        let stem = ConvBn::random(init, init_geometry());
        let mut blocks = Vec::with_capacity(last);
        let mut cin = STEM_CHANNELS;
        for k in 1..=last {
            let b = InvertedResidual::random(k, cin, init);
            cin = b.cfg.out_channels;
            blocks.push(b);
        }
        Ok(Self { init: stem, blocks })
    }

    /// Loads `backbone.*` tensors for blocks `r1..r{last}`.
    pub fn load(store: &WeightContainer, last: usize) -> Result<Self> {
        Self::check_last(last)?;
        let stem = ConvBn::load(store, "backbone.init", init_geometry())?;
        let mut blocks = Vec::with_capacity(last);
        let mut cin = STEM_CHANNELS;
        for k in 1..=last {
            let b = InvertedResidual::load(store, k, cin)?;
            cin = b.cfg.out_channels;
            blocks.push(b);
        }
        Ok(Self { init: stem, blocks })
    }

    /// Index of the deepest block present in `store` (e.g. 9 for `backbone.r9.*`).
    pub fn detect_last(store: &WeightContainer) -> Option<usize> {
        (1..=MOBILENET_V3_LARGE.len())
            .rev()
            .find(|k| store.names().any(|n| n.starts_with(&format!("backbone.r{k}."))))
    }

    pub fn push_entries(&self, out: &mut Vec<TensorEntry>) {
        self.init.push(out, "backbone.init");
        for b in &self.blocks {
            b.push(out);
        }
    }

    pub fn last_block(&self) -> usize {
        self.blocks.len()
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(STEM_CHANNELS, |b| b.cfg.out_channels)
    }

    /// `(stride, channels)` for each tap, shallowest first.
    pub fn tap_layout(&self) -> Vec<(usize, usize)> {
        let mut taps = vec![(2, STEM_CHANNELS)];
        let mut stride = 2;
        for b in &self.blocks {
            if b.cfg.stride != 1 {
                stride *= b.cfg.stride;
                taps.push((stride, b.cfg.out_channels));
            } else if stride > 2 {
                taps.last_mut().unwrap().1 = b.cfg.out_channels;
            }
        }
        taps
    }

    pub fn param_count(&self) -> usize {
        self.init.param_count() + self.blocks.iter().map(InvertedResidual::param_count).sum::<usize>()
    }

    pub fn max_stride(&self) -> usize {
        self.tap_layout().last().map_or(2, |t| t.0)
    }
}

/// Runs the prefix and returns the taps, shallowest first.
///
/// The stride-2 tap is the initial convolution's output; every deeper tap
/// is the output of the last block at that stride.
pub fn backbone_forward(x: &Tensor, prefix: &BackbonePrefix) -> Result<Vec<Tap>> {
    if x.channels() != 3 {
        return Err(invalid(format!("backbone input must have 3 channels, got {}", x.channels())));
    }
    let div = prefix.max_stride().max(32);
    if x.height() % div != 0 || x.width() % div != 0 {
        return Err(invalid(format!(
            "backbone input {}×{} must be divisible by {div}",
            x.height(),
            x.width()
        )));
    }
    let mut cur = prefix.init.forward(x, Some(Activation::HardSwish))?;
    let mut taps = vec![Tap { stride: 2, tensor: cur.clone() }];
    let mut stride = 2;
    for b in &prefix.blocks {
        cur = inverted_residual(&cur, b)?;
        if b.cfg.stride != 1 {
            stride *= b.cfg.stride;
            taps.push(Tap { stride, tensor: cur.clone() });
        } else if stride > 2 {
            taps.last_mut().unwrap().tensor = cur.clone();
        }
    }
    Ok(taps)
}
