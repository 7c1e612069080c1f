//! Reproducible weight initialization.
//!
//! Random weights come from `ChaCha8Rng::seed_from_u64(seed)`, drawn in a
//! fixed traversal order (backbone, encoder, decoder, skip reducers, head),
//! so the same seed always produces the same bytes.
//!
//! * convolution weights: fan-in scaled uniform with unit gain, `U(−√(3/fan_in), √(3/fan_in))`
//! * convolution biases: `U(−1/√fan_in, 1/√fan_in)`
//! * batch norm: gamma `U(0.5, 1.5)`, beta and mean `U(−0.1, 0.1)`, variance `U(0.5, 1.5)`
//! * series activation: weights `U(−0.5, 0.5)`, bias 0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::series::SeriesActivationParams;
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Random(u64),
    /// Every weight and bias zero, batch norm with zero gamma and unit variance.
    Zeros,
}

pub struct WeightInit {
    rng: Option<ChaCha8Rng>,
}

impl WeightInit {
    pub fn new(kind: InitKind) -> Self {
        match kind {
            InitKind::Random(seed) => Self::seeded(seed),
            InitKind::Zeros => Self { rng: None },
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self { rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    fn fill(&mut self, len: usize, lo: f32, hi: f32) -> Vec<f32> {
        match &mut self.rng {
            Some(rng) => (0..len).map(|_| rng.gen_range(lo..hi)).collect(),
            None => vec![0.0; len],
        }
    }

    pub fn uniform_tensor(&mut self, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
        let data = self.fill(shape.iter().product(), lo, hi);
        Tensor::new(shape, data).expect("shape matches by construction")
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> ConvSpec {
        let fan_in = (in_channels / groups) * kernel * kernel;
        let wb = (3.0 / fan_in as f32).sqrt();
        let weight = self.uniform_tensor([out_channels, in_channels / groups, kernel, kernel], -wb, wb);
        let bb = 1.0 / (fan_in as f32).sqrt();
        let bias = bias.then(|| self.fill(out_channels, -bb, bb));
        ConvSpec::new(in_channels, out_channels, kernel, stride, padding, groups, weight, bias)
            .expect("initializer geometry is valid")
    }

    pub fn pointwise(&mut self, in_channels: usize, out_channels: usize, bias: bool) -> ConvSpec {
        self.conv(in_channels, out_channels, 1, 1, 0, 1, bias)
    }

    pub fn batch_norm(&mut self, channels: usize, epsilon: f32) -> BatchNormParams {
        match self.rng {
            Some(_) => BatchNormParams {
                gamma: self.fill(channels, 0.5, 1.5),
                beta: self.fill(channels, -0.1, 0.1),
                mean: self.fill(channels, -0.1, 0.1),
                variance: self.fill(channels, 0.5, 1.5),
                epsilon,
            },
            None => BatchNormParams {
                gamma: vec![0.0; channels],
                beta: vec![0.0; channels],
                mean: vec![0.0; channels],
                variance: vec![1.0; channels],
                epsilon,
            },
        }
    }

    pub fn series(&mut self, channels: usize, radius: usize) -> SeriesActivationParams {
        let side = 2 * radius + 1;
        let weight = self.uniform_tensor([channels, 1, side, side], -0.5, 0.5);
        SeriesActivationParams::new(radius, weight, vec![0.0; channels]).expect("valid shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = WeightInit::seeded(7).conv(8, 16, 3, 1, 1, 1, true);
        let b = WeightInit::seeded(7).conv(8, 16, 3, 1, 1, 1, true);
        let c = WeightInit::seeded(8).conv(8, 16, 3, 1, 1, 1, true);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bounds_follow_fan_in() {
        let s = WeightInit::seeded(1).conv(4, 8, 3, 1, 1, 1, true);
        let wb = (3.0f32 / 36.0).sqrt();
        assert!(s.weight.data().iter().all(|v| v.abs() <= wb));
        assert!(s.bias.unwrap().iter().all(|v| v.abs() <= 1.0 / 6.0));
        let bn = WeightInit::seeded(1).batch_norm(32, 1e-5);
        assert!(bn.validate().is_ok());
    }

    #[test]
    fn zeros_are_zero() {
        let mut z = WeightInit::new(InitKind::Zeros);
        assert!(z.conv(3, 4, 3, 1, 1, 1, true).weight.data().iter().all(|&v| v == 0.0));
        assert!(z.series(4, 1).weight.data().iter().all(|&v| v == 0.0));
        assert!(z.batch_norm(4, 1e-3).gamma.iter().all(|&v| v == 0.0));
    }
}
