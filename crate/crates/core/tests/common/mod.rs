#![allow(dead_code)]

use lvunet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Series activation written as the literal neighborhood sum, no convolution.
pub fn series_oracle(x: &Tensor, radius: usize, weight: &Tensor, bias: &[f32]) -> Tensor {
    let [_, _, h, w] = x.shape();
    let n = radius as isize;
    Tensor::from_fn(x.shape(), |[b, c, y, xx]| {
        let mut acc = 0.0f64;
        for i in -n..=n {
            for j in -n..=n {
                let (yy, xj) = (y as isize + i, xx as isize + j);
                if yy < 0 || xj < 0 || yy >= h as isize || xj >= w as isize {
                    continue;
                }
                let v = (x.at([b, c, yy as usize, xj as usize]) + bias[c]).max(0.0);
                let a = weight.at([c, 0, (i + n) as usize, (j + n) as usize]);
                acc += a as f64 * v as f64;
            }
        }
        acc as f32
    })
}

/// Brute-force 2×2 window maximum.
pub fn max_pool_oracle(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, h / 2, w / 2], |[b, ch, y, xx]| {
        let mut m = f32::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.at([b, ch, 2 * y + dy, 2 * xx + dx]));
            }
        }
        m
    })
}
