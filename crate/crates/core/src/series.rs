//! Series-informed activation: a per-channel weighted sum of shifted ReLUs.
//!
//! For radius `n`, each output is
//! `y[h, w, c] = Σ_{i, j ∈ [−n, n]} a[i, j, c] · relu(x[h+i, w+j, c] + b[c])`
//! with out-of-bounds taps contributing zero. This is evaluated as a ReLU
//! followed by a depthwise `(2n+1)×(2n+1)` convolution with padding `n`.

use crate::error::{invalid, Result};
use crate::ops::conv2d;
use crate::tensor::{ConvSpec, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesActivationParams {
    pub radius: usize,
    /// Shape `(C, 1, 2n+1, 2n+1)`; `weight[c, 0, i+n, j+n]` is `a[i, j, c]`.
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl SeriesActivationParams {
    pub fn new(radius: usize, weight: Tensor, bias: Vec<f32>) -> Result<Self> {
        let p = Self { radius, weight, bias };
        p.validate()?;
        Ok(p)
    }

    /// Unit center tap, zero bias: reduces to plain ReLU.
    pub fn relu(channels: usize, radius: usize) -> Self {
        let side = 2 * radius + 1;
        let mut weight = Tensor::zeros([channels, 1, side, side]);
        for c in 0..channels {
            let idx = weight.index([c, 0, radius, radius]);
            weight.data_mut()[idx] = 1.0;
        }
        Self { radius, weight, bias: vec![0.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.window();
        let c = self.bias.len();
        if self.weight.shape() != [c, 1, side, side] {
            return Err(invalid(format!(
                "series activation weight shape {:?}, expected {:?}",
                self.weight.shape(),
                [c, 1, side, side]
            )));
        }
        Ok(())
    }

    /// `(2n+1)²·C` weights plus `C` biases.
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn as_depthwise(&self) -> ConvSpec {
        let c = self.channels();
        ConvSpec {
            in_channels: c,
            out_channels: c,
            kernel: self.window(),
            stride: 1,
            padding: self.radius,
            groups: c,
            weight: self.weight.clone(),
            bias: None,
        }
    }
}

pub fn series_act(x: &Tensor, p: &SeriesActivationParams) -> Result<Tensor> {
    p.validate()?;
    if x.channels() != p.channels() {
        return Err(invalid(format!(
            "series activation channels: input has {}, parameters have {}",
            x.channels(),
            p.channels()
        )));
    }
    let [_, c, h, w] = x.shape();
    let hw = h * w;
    let mut shifted = x.clone();
    if hw > 0 {
        for (i, plane) in shifted.data_mut().chunks_mut(hw).enumerate() {
            let b = p.bias[i % c];
            plane.iter_mut().for_each(|v| *v = (*v + b).max(0.0));
        }
    }
    conv2d(&shifted, &p.as_depthwise())
}
