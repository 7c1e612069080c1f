//! Dense NCHW tensors and the parameter bundles that hang off them.

use crate::error::{invalid, Result};

/// A dense `(n, c, h, w)` array of `f32` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(invalid(format!(
                "data length {} does not match shape {:?} (expected {len})",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([b, ch, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> f32 {
        self.data[self.index(idx)]
    }

    /// Contiguous `h * w` slice for one `(batch, channel)` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Convolution geometry plus its weights.
///
/// `weight` has shape `(out_channels, in_channels / groups, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        weight: Tensor,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        let spec = Self { in_channels, out_channels, kernel, stride, padding, groups, weight, bias };
        spec.validate()?;
        Ok(spec)
    }

    /// A 1×1, stride-1, ungrouped convolution.
    pub fn pointwise(weight: Tensor, bias: Option<Vec<f32>>) -> Result<Self> {
        let [o, i, _, _] = weight.shape();
        Self::new(i, o, 1, 1, 0, 1, weight, bias)
    }

    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if groups == 0 {
            return Err(invalid("groups must be positive"));
        }
        let weight = Tensor::zeros([out_channels, in_channels / groups, kernel, kernel]);
        let bias = with_bias.then(|| vec![0.0; out_channels]);
        Self::new(in_channels, out_channels, kernel, stride, padding, groups, weight, bias)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        if self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(invalid("kernel, stride and groups must be positive"));
        }
        if self.in_channels % self.groups != 0 {
            return Err(invalid(format!(
                "in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            )));
        }
        if self.out_channels % self.groups != 0 {
            return Err(invalid(format!(
                "out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            )));
        }
        let expected = [self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel];
        if self.weight.shape() != expected {
            return Err(invalid(format!(
                "weight shape {:?} does not match geometry {:?}",
                self.weight.shape(),
                expected
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(invalid(format!(
                    "bias length {} does not match out_channels {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k {
            return Err(invalid(format!("height {h} + 2*padding {} < kernel {k}", self.padding)));
        }
        if pw < k {
            return Err(invalid(format!("width {w} + 2*padding {} < kernel {k}", self.padding)));
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }
}

/// Inference-time batch-norm statistics for `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        variance: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let p = Self { gamma, beta, mean, variance, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// gamma = 1, beta = 0, mean = 0, variance = 1 − epsilon.
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            variance: vec![1.0 - epsilon; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.variance.len() != c {
            return Err(invalid("batch-norm vectors have different lengths"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("batch-norm epsilon {} must be positive", self.epsilon)));
        }
        if let Some(i) = self.variance.iter().position(|&v| !(v >= 0.0)) {
            return Err(invalid(format!(
                "batch-norm variance[{i}] = {} is negative",
                self.variance[i]
            )));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` with `y = scale * x + shift`, evaluated in f64.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let sigma = (self.variance[c] as f64 + self.epsilon as f64).sqrt();
                let scale = self.gamma[c] as f64 / sigma;
                (scale, self.beta[c] as f64 - self.mean[c] as f64 * scale)
            })
            .collect()
    }

    /// Four stored vectors per channel.
    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}
