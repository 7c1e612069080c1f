//! Fusible blocks and the assembled LV-UNet network.
//!
//! Layout: backbone prefix → fusible encoder blocks → six fusible decoder
//! blocks, each followed by a skip from the encoder feature of the same
//! resolution → bilinear ×2 → 1×1 output convolution producing logits.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{backbone_forward, BackbonePrefix};
use crate::error::{invalid, Error, Result};
use crate::init::{InitKind, WeightInit};
use crate::io::{TensorEntry, WeightContainer};
use crate::ops::{
    add, batch_norm_infer, concat_channels, conv2d, leaky_relu, max_pool2d, upsample_bilinear2x,
};
use crate::series::{series_act, SeriesActivationParams};
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};
use crate::weights::{load_bn, load_conv, load_series, push_bn, push_conv, push_series, ConvGeometry};

/// Batch-norm epsilon inside fusible blocks.
pub const FUSIBLE_BN_EPS: f32 = 1e-5;
/// Width at the bottom of the encoder.
pub const BOTTLENECK_CHANNELS: usize = 480;
/// Default series-activation radius.
pub const DEFAULT_SERIES_N: usize = 1;

/// How much of the pre-trained backbone is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combination {
    /// Through `r14`, two fusible encoder blocks.
    I,
    /// Through `r9`, three fusible encoder blocks.
    II,
    /// Through `r5`, four fusible encoder blocks.
    III,
}

impl Combination {
    pub const ALL: [Combination; 3] = [Self::I, Self::II, Self::III];

    pub fn last_block(self) -> usize {
        match self {
            Self::I => 14,
            Self::II => 9,
            Self::III => 5,
        }
    }

    /// Output widths of the fusible encoder blocks.
    pub fn encoder_widths(self) -> &'static [usize] {
        match self {
            Self::I => &[240, 480],
            Self::II => &[160, 240, 480],
            Self::III => &[80, 160, 240, 480],
        }
    }

    pub fn from_last_block(last: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.last_block() == last)
    }
}

impl FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Self::I),
            "II" | "2" => Ok(Self::II),
            "III" | "3" => Ok(Self::III),
            other => Err(invalid(format!("unknown combination `{other}` (expected I, II or III)"))),
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    Add,
    /// Channel concatenation followed by a 1×1 convolution back to the decoder width.
    Concat,
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(Self::Add),
            "concat" => Ok(Self::Concat),
            other => Err(invalid(format!("unknown skip mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Deploy,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "deploy" => Ok(Self::Deploy),
            other => Err(invalid(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Deploy => "deploy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// 2×2 max pooling (encoder).
    Pool,
    /// Bilinear ×2 (decoder).
    Upsample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusibleBody {
    Train { conv1: ConvSpec, bn: BatchNormParams, conv2: ConvSpec },
    Deploy { conv: ConvSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusibleBlock {
    pub resample: Resample,
    pub body: FusibleBody,
    pub act: SeriesActivationParams,
}

impl FusibleBlock {
    pub fn random(
        in_channels: usize,
        out_channels: usize,
        resample: Resample,
        series_n: usize,
        init: &mut WeightInit,
    ) -> Self {
        let conv1 = init.pointwise(in_channels, out_channels, true);
        let bn = init.batch_norm(out_channels, FUSIBLE_BN_EPS);
        let conv2 = init.pointwise(out_channels, out_channels, true);
        let act = init.series(out_channels, series_n);
        Self { resample, body: FusibleBody::Train { conv1, bn, conv2 }, act }
    }

    pub fn mode(&self) -> Mode {
        match self.body {
            FusibleBody::Train { .. } => Mode::Train,
            FusibleBody::Deploy { .. } => Mode::Deploy,
        }
    }

    pub fn in_channels(&self) -> usize {
        match &self.body {
            FusibleBody::Train { conv1, .. } => conv1.in_channels,
            FusibleBody::Deploy { conv } => conv.in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.act.channels()
    }

    pub fn param_count(&self) -> usize {
        let body = match &self.body {
            FusibleBody::Train { conv1, bn, conv2 } => {
                conv1.param_count() + bn.param_count() + conv2.param_count()
            }
            FusibleBody::Deploy { conv } => conv.param_count(),
        };
        body + self.act.param_count()
    }

    fn push(&self, out: &mut Vec<TensorEntry>, prefix: &str) {
        match &self.body {
            FusibleBody::Train { conv1, bn, conv2 } => {
                push_conv(out, &format!("{prefix}.conv1"), conv1);
                push_bn(out, &format!("{prefix}.bn"), bn);
                push_conv(out, &format!("{prefix}.conv2"), conv2);
            }
            FusibleBody::Deploy { conv } => push_conv(out, &format!("{prefix}.conv"), conv),
        }
        push_series(out, &format!("{prefix}.act"), &self.act);
    }

    fn load(
        store: &WeightContainer,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        resample: Resample,
        series_n: usize,
        mode: Mode,
    ) -> Result<Self> {
        let body = match mode {
            Mode::Train => FusibleBody::Train {
                conv1: load_conv(store, &format!("{prefix}.conv1"), ConvGeometry::pointwise(in_channels, out_channels))?,
                bn: load_bn(store, &format!("{prefix}.bn"), out_channels, FUSIBLE_BN_EPS)?,
                conv2: load_conv(store, &format!("{prefix}.conv2"), ConvGeometry::pointwise(out_channels, out_channels))?,
            },
            Mode::Deploy => FusibleBody::Deploy {
                conv: load_conv(store, &format!("{prefix}.conv"), ConvGeometry::pointwise(in_channels, out_channels))?,
            },
        };
        let act = load_series(store, &format!("{prefix}.act"), out_channels, series_n)?;
        Ok(Self { resample, body, act })
    }
}

/// Train: `act(resample(conv2(leaky(bn(conv1(x)), a))))`.
/// Deploy: `act(resample(conv(x)))`; the slope is ignored.
pub fn fusible_forward(x: &Tensor, block: &FusibleBlock, slope: f32) -> Result<Tensor> {
    let y = match &block.body {
        FusibleBody::Train { conv1, bn, conv2 } => {
            if !(0.0..=1.0).contains(&slope) {
                return Err(invalid(format!("leaky slope {slope} outside [0, 1]")));
            }
            let h = batch_norm_infer(&conv2d(x, conv1)?, bn)?;
            conv2d(&leaky_relu(&h, slope), conv2)?
        }
        FusibleBody::Deploy { conv } => conv2d(x, conv)?,
    };
    let y = match block.resample {
        Resample::Pool => max_pool2d(&y)?,
        Resample::Upsample => upsample_bilinear2x(&y),
    };
    series_act(&y, &block.act)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub combination: Combination,
    pub series_n: usize,
    pub num_classes: usize,
    pub skip_mode: SkipMode,
}

impl ModelConfig {
    pub fn new(combination: Combination, series_n: usize) -> Self {
        Self { combination, series_n, num_classes: 1, skip_mode: SkipMode::Add }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Combination::II, DEFAULT_SERIES_N)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvUnet {
    pub config: ModelConfig,
    pub backbone: BackbonePrefix,
    pub encoder: Vec<FusibleBlock>,
    pub decoder: Vec<FusibleBlock>,
    /// One 2C→C convolution per decoder block in concat mode, empty otherwise.
    pub reducers: Vec<ConvSpec>,
    pub head: ConvSpec,
}

/// Channel plan derived from the backbone and combination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ladder {
    /// `(in, out)` per fusible encoder block.
    pub encoder: Vec<(usize, usize)>,
    /// `(in, out)` per fusible decoder block.
    pub decoder: Vec<(usize, usize)>,
    /// Skip widths, shallowest first; decoder block `i` consumes `skips[len−1−i]`.
    pub skips: Vec<usize>,
}

pub fn ladder(combination: Combination, backbone_taps: &[(usize, usize)]) -> Ladder {
    let mut widths: Vec<usize> = backbone_taps.iter().map(|t| t.1).collect();
    let mut encoder = Vec::new();
    let mut cin = *widths.last().expect("backbone has at least one tap");
    for &w in combination.encoder_widths() {
        encoder.push((cin, w));
        widths.push(w);
        cin = w;
    }
    widths.pop();
    let mut decoder = Vec::new();
    for &w in widths.iter().rev() {
        decoder.push((cin, w));
        cin = w;
    }
    Ladder { encoder, decoder, skips: widths }
}

impl LvUnet {
    /// Model with freshly initialized weights, in train mode.
    pub fn build(config: ModelConfig, init: InitKind) -> Result<Self> {
        if config.num_classes == 0 {
            return Err(invalid("num_classes must be positive"));
        }
        let mut rng = WeightInit::new(init);
        let backbone = BackbonePrefix::random(config.combination.last_block(), &mut rng)?;
        Self::assemble(config, backbone, &mut rng)
    }

    /// Random fusible blocks and head on top of the given backbone.
    pub fn with_backbone(config: ModelConfig, backbone: BackbonePrefix, init: InitKind) -> Result<Self> {
        if backbone.last_block() != config.combination.last_block() {
            return Err(invalid(format!(
                "combination {} needs a backbone through r{}, got r{}",
                config.combination,
                config.combination.last_block(),
                backbone.last_block()
            )));
        }
        Self::assemble(config, backbone, &mut WeightInit::new(init))
    }

    fn assemble(config: ModelConfig, backbone: BackbonePrefix, rng: &mut WeightInit) -> Result<Self> {
        let plan = ladder(config.combination, &backbone.tap_layout());
        let n = config.series_n;
        let encoder = plan
            .encoder
            .iter()
            .map(|&(i, o)| FusibleBlock::random(i, o, Resample::Pool, n, rng))
            .collect();
        let decoder: Vec<FusibleBlock> = plan
            .decoder
            .iter()
            .map(|&(i, o)| FusibleBlock::random(i, o, Resample::Upsample, n, rng))
            .collect();
        let reducers = match config.skip_mode {
            SkipMode::Add => Vec::new(),
            SkipMode::Concat => plan.decoder.iter().map(|&(_, o)| rng.pointwise(2 * o, o, true)).collect(),
        };
        let last = plan.decoder.last().map_or(backbone.out_channels(), |d| d.1);
        let head = rng.pointwise(last, config.num_classes, true);
        Ok(Self { config, backbone, encoder, decoder, reducers, head })
    }

    pub fn ladder(&self) -> Ladder {
        ladder(self.config.combination, &self.backbone.tap_layout())
    }

    pub fn mode(&self) -> Mode {
        self.encoder.first().or(self.decoder.first()).map_or(Mode::Train, FusibleBlock::mode)
    }

    /// Spatial divisor the input must satisfy: the stride of the deepest encoder feature.
    pub fn input_divisor(&self) -> usize {
        (self.backbone.max_stride() << self.encoder.len()).max(32)
    }

    /// Logits of shape `(n, num_classes, h, w)`.
    pub fn forward(&self, x: &Tensor, slope: f32) -> Result<Tensor> {
        self.forward_impl(x, slope, None)
    }

    /// Forward pass with skip `index` (shallowest first) replaced by zeros.
    pub fn forward_with_zeroed_skip(&self, x: &Tensor, slope: f32, index: usize) -> Result<Tensor> {
        self.forward_impl(x, slope, Some(index))
    }

    fn forward_impl(&self, x: &Tensor, slope: f32, zero_skip: Option<usize>) -> Result<Tensor> {
        let div = self.input_divisor();
        if x.height() % div != 0 || x.width() % div != 0 {
            return Err(invalid(format!(
                "input {}×{} must be divisible by {div}",
                x.height(),
                x.width()
            )));
        }
        let taps = backbone_forward(x, &self.backbone)?;
        let mut skips: Vec<Tensor> = taps.into_iter().map(|t| t.tensor).collect();
        let mut cur = skips.pop().expect("backbone yields taps");
        for blk in &self.encoder {
            let next = fusible_forward(&cur, blk, slope)?;
            skips.push(std::mem::replace(&mut cur, next));
        }
        if let Some(i) = zero_skip {
            let s = skips
                .get_mut(i)
                .ok_or_else(|| invalid(format!("skip index {i} out of range")))?;
            *s = Tensor::zeros(s.shape());
        }
        for (i, blk) in self.decoder.iter().enumerate() {
            let y = fusible_forward(&cur, blk, slope)?;
            let skip = &skips[skips.len() - 1 - i];
            cur = match self.config.skip_mode {
                SkipMode::Add => add(&y, skip)?,
                SkipMode::Concat => conv2d(&concat_channels(&y, skip)?, &self.reducers[i])?,
            };
        }
        conv2d(&upsample_bilinear2x(&cur), &self.head)
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut entries = Vec::new();
        self.backbone.push_entries(&mut entries);
        for (i, b) in self.encoder.iter().enumerate() {
            b.push(&mut entries, &format!("enc.{i}"));
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.push(&mut entries, &format!("dec.{i}"));
        }
        for (i, r) in self.reducers.iter().enumerate() {
            push_conv(&mut entries, &format!("dec.{i}.reduce"), r);
        }
        push_conv(&mut entries, "head.conv", &self.head);
        WeightContainer::from_entries(entries).expect("model tensor names are unique")
    }

    /// Recover the configuration from tensor names and shapes.
    pub fn infer_config(store: &WeightContainer) -> Result<(ModelConfig, Mode)> {
        let last = BackbonePrefix::detect_last(store)
            .ok_or_else(|| Error::MissingWeight("backbone.r*".into()))?;
        let combination = Combination::from_last_block(last)
            .ok_or_else(|| invalid(format!("backbone ends at r{last}, which is not a known combination")))?;
        let mode = if store.contains("enc.0.conv1.weight") {
            Mode::Train
        } else if store.contains("enc.0.conv.weight") {
            Mode::Deploy
        } else {
            return Err(Error::MissingWeight("enc.0.conv1.weight".into()));
        };
        let act = store.require("enc.0.act.weight")?;
        let side = *act.shape.last().unwrap_or(&1);
        if act.shape.len() != 4 || side % 2 == 0 {
            return Err(invalid(format!("enc.0.act.weight has unexpected shape {:?}", act.shape)));
        }
        let head = store.require("head.conv.weight")?;
        let num_classes = *head.shape.first().unwrap_or(&0);
        let skip_mode = if store.contains("dec.0.reduce.weight") { SkipMode::Concat } else { SkipMode::Add };
        Ok((ModelConfig { combination, series_n: side / 2, num_classes, skip_mode }, mode))
    }

    pub fn from_container(store: &WeightContainer) -> Result<Self> {
        let (config, mode) = Self::infer_config(store)?;
        let backbone = BackbonePrefix::load(store, config.combination.last_block())?;
        let plan = ladder(config.combination, &backbone.tap_layout());
        let n = config.series_n;
        let encoder = plan
            .encoder
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| FusibleBlock::load(store, &format!("enc.{i}"), ci, co, Resample::Pool, n, mode))
            .collect::<Result<_>>()?;
        let decoder = plan
            .decoder
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| FusibleBlock::load(store, &format!("dec.{i}"), ci, co, Resample::Upsample, n, mode))
            .collect::<Result<_>>()?;
        let reducers = match config.skip_mode {
            SkipMode::Add => Vec::new(),
            SkipMode::Concat => plan
                .decoder
                .iter()
                .enumerate()
                .map(|(i, &(_, o))| load_conv(store, &format!("dec.{i}.reduce"), ConvGeometry::pointwise(2 * o, o)))
                .collect::<Result<_>>()?,
        };
        let last = plan.decoder.last().map_or(backbone.out_channels(), |d| d.1);
        let head = load_conv(store, "head.conv", ConvGeometry::pointwise(last, config.num_classes))?;
        Ok(Self { config, backbone, encoder, decoder, reducers, head })
    }
}

/// Build a model with seeded random weights.
pub fn build(
    combination: Combination,
    series_n: usize,
    num_classes: usize,
    skip_mode: SkipMode,
    seed: u64,
) -> Result<LvUnet> {
    LvUnet::build(ModelConfig { combination, series_n, num_classes, skip_mode }, InitKind::Random(seed))
}

pub fn forward(model: &LvUnet, x: &Tensor, slope: f32) -> Result<Tensor> {
    model.forward(x, slope)
}
