//! Reference kernels for every primitive layer the model uses.
//!
//! Every kernel is a pure function of its inputs. Convolutions accumulate
//! each output element in `f64` in a fixed order (input channel, then kernel
//! row, then kernel column), add the bias last and round once to `f32`, so
//! results do not depend on how work is split across threads.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

/// Dense row-major matrix, used for im2col patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

fn check_conv_input(x: &Tensor, spec: &ConvSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    if x.channels() != spec.in_channels {
        return Err(invalid(format!(
            "conv input channels: got {}, expected {}",
            x.channels(),
            spec.in_channels
        )));
    }
    spec.output_hw(x.height(), x.width())
}

/// Range of output columns whose tap `kx` lands inside `[0, w)`.
#[inline]
fn valid_range(out: usize, stride: usize, pad: usize, tap: usize, len: usize) -> (usize, usize) {
    // in = o * stride + tap - pad, need 0 <= in < len
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if len + pad > tap { ((len + pad - tap - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Direct-loop 2-D convolution with zero padding and grouped channels.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (oh, ow) = check_conv_input(x, spec)?;
    let [n, _, h, w] = x.shape();
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let weight = spec.weight.data();
    let mut out = Tensor::zeros([n, spec.out_channels, oh, ow]);
    if oh * ow == 0 {
        return Ok(out);
    }

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, oc) = (idx / spec.out_channels, idx % spec.out_channels);
            let g = oc / cout_g;
            let mut acc = vec![0.0f64; oh * ow];
            for icg in 0..cin_g {
                let plane = x.plane(b, g * cin_g + icg);
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(oh, s, p, ky, h);
                    if y_lo == y_hi {
                        continue;
                    }
                    for kx in 0..k {
                        let wv = weight[((oc * cin_g + icg) * k + ky) * k + kx] as f64;
                        let (x_lo, x_hi) = valid_range(ow, s, p, kx, w);
                        if x_lo == x_hi {
                            continue;
                        }
                        for oy in y_lo..y_hi {
                            let row = &plane[(oy * s + ky - p) * w..][..w];
                            let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let src = &row[x_lo + kx - p..x_hi + kx - p];
                                for (a, &v) in acc_row[x_lo..x_hi].iter_mut().zip(src) {
                                    *a += wv * v as f64;
                                }
                            } else {
                                for ox in x_lo..x_hi {
                                    acc_row[ox] += wv * row[ox * s + kx - p] as f64;
                                }
                            }
                        }
                    }
                }
            }
            let bias = spec.bias.as_ref().map_or(0.0, |b| b[oc] as f64);
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = (a + bias) as f32;
            }
        });
    Ok(out)
}

/// Patch matrix of shape `(C·k·k) × (n·H'·W')`.
///
/// Row `c·k² + ky·k + kx` holds tap `(ky, kx)` of channel `c`; column `j`
/// is output position `j` in row-major (batch, row, column) order.
/// Out-of-bounds taps read as zero.
pub fn im2col(x: &Tensor, k: usize, stride: usize, padding: usize) -> Result<Matrix> {
    if k == 0 || stride == 0 {
        return Err(invalid("kernel and stride must be positive"));
    }
    let [n, c, h, w] = x.shape();
    if h + 2 * padding < k {
        return Err(invalid(format!("height {h} + 2*padding {padding} < kernel {k}")));
    }
    if w + 2 * padding < k {
        return Err(invalid(format!("width {w} + 2*padding {padding} < kernel {k}")));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let rows = c * k * k;
    let cols = n * oh * ow;
    let mut data = vec![0.0f32; rows * cols];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ch * k + ky) * k + kx;
                for b in 0..n {
                    let plane = x.plane(b, ch);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            data[r * cols + (b * oh + oy) * ow + ox] =
                                plane[iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(Matrix { rows, cols, data })
}

/// Convolution as `reshape(W) × im2col(x)`. Only ungrouped convolutions.
pub fn im2col_matmul_conv(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    if spec.groups != 1 {
        return Err(Error::Unsupported(format!(
            "im2col path needs groups = 1, got {}",
            spec.groups
        )));
    }
    let (oh, ow) = check_conv_input(x, spec)?;
    let patches = im2col(x, spec.kernel, spec.stride, spec.padding)?;
    let n = x.n();
    let depth = patches.rows;
    let w = spec.weight.data();
    let mut out = vec![0.0f32; n * spec.out_channels * oh * ow];
    for oc in 0..spec.out_channels {
        let wrow = &w[oc * depth..(oc + 1) * depth];
        let bias = spec.bias.as_ref().map_or(0.0, |b| b[oc] as f64);
        for j in 0..patches.cols {
            let mut acc = 0.0f64;
            for (r, &wv) in wrow.iter().enumerate() {
                acc += wv as f64 * patches.data[r * patches.cols + j] as f64;
            }
            let (b, pos) = (j / (oh * ow), j % (oh * ow));
            out[(b * spec.out_channels + oc) * oh * ow + pos] = (acc + bias) as f32;
        }
    }
    Tensor::new([n, spec.out_channels, oh, ow], out)
}

/// `gamma · (x − mean) / sqrt(variance + epsilon) + beta`, per channel.
pub fn batch_norm_infer(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    p.validate()?;
    if x.channels() != p.channels() {
        return Err(invalid(format!(
            "batch-norm channels: input has {}, parameters have {}",
            x.channels(),
            p.channels()
        )));
    }
    let [_, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    if hw == 0 {
        return Ok(out);
    }
    for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
        let ch = i % c;
        let sigma = (p.variance[ch] as f64 + p.epsilon as f64).sqrt();
        let (g, b, m) = (p.gamma[ch] as f64, p.beta[ch] as f64, p.mean[ch] as f64);
        for v in chunk {
            *v = (g * (*v as f64 - m) / sigma + b) as f32;
        }
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// `max(a·x, x)`.
pub fn leaky_relu(x: &Tensor, a: f32) -> Tensor {
    x.map(|v| (a * v).max(v))
}

#[inline]
pub fn relu6_scalar(v: f32) -> f32 {
    v.max(0.0).min(6.0)
}

#[inline]
pub fn hard_sigmoid_scalar(v: f32) -> f32 {
    relu6_scalar(v + 3.0) / 6.0
}

#[inline]
pub fn hard_swish_scalar(v: f32) -> f32 {
    v * hard_sigmoid_scalar(v)
}

#[inline]
pub fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu6(x: &Tensor) -> Tensor {
    x.map(relu6_scalar)
}

pub fn hard_sigmoid(x: &Tensor) -> Tensor {
    x.map(hard_sigmoid_scalar)
}

pub fn hard_swish(x: &Tensor) -> Tensor {
    x.map(hard_swish_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// 2×2 max pooling with stride 2.
pub fn max_pool2d(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 {
        return Err(invalid(format!("max_pool2d needs even height, got {h}")));
    }
    if w % 2 != 0 {
        return Err(invalid(format!("max_pool2d needs even width, got {w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = x.plane(b, ch);
            for oy in 0..oh {
                let r0 = &plane[2 * oy * w..][..w];
                let r1 = &plane[(2 * oy + 1) * w..][..w];
                for ox in 0..ow {
                    let m = r0[2 * ox].max(r0[2 * ox + 1]).max(r1[2 * ox]).max(r1[2 * ox + 1]);
                    out.push(m);
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Per-channel spatial mean, shape `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let data = (0..n * c)
        .map(|i| {
            if hw == 0 {
                return 0.0;
            }
            let s: f64 = x.plane(i / c, i % c).iter().map(|&v| v as f64).sum();
            (s / hw as f64) as f32
        })
        .collect();
    Tensor::new([n, c, 1, 1], data).expect("shape matches by construction")
}

/// Bilinear ×2 upsampling, half-pixel centers, source coordinates clamped.
///
/// Output pixel `i` samples the input at `(i + 0.5) / 2 − 0.5`.
pub fn upsample_bilinear2x(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let taps = |len: usize, out: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|i| {
                let src = ((i as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (len.max(1) - 1) as f32);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len.max(1) - 1);
                (i0, i1, src - i0 as f32)
            })
            .collect()
    };
    let ys = taps(h, oh);
    let xs = taps(w, ow);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = x.plane(b, ch);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out).expect("shape matches by construction")
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(invalid(format!("add: shapes {:?} and {:?} differ", x.shape(), y.shape())));
    }
    let data = x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape(), data)
}

/// Concatenate along the channel axis.
pub fn concat_channels(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let ([n, c1, h, w], [n2, c2, h2, w2]) = (x.shape(), y.shape());
    if n != n2 || h != h2 || w != w2 {
        return Err(invalid(format!(
            "concat: shapes {:?} and {:?} differ outside the channel axis",
            x.shape(),
            y.shape()
        )));
    }
    let mut data = Vec::with_capacity(x.len() + y.len());
    for b in 0..n {
        for ch in 0..c1 {
            data.extend_from_slice(x.plane(b, ch));
        }
        for ch in 0..c2 {
            data.extend_from_slice(y.plane(b, ch));
        }
    }
    Tensor::new([n, c1 + c2, h, w], data)
}

/// Multiply each `(b, c)` plane of `x` by `gate[b, c, 0, 0]`.
pub fn scale_channels(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if gate.shape() != [n, c, 1, 1] {
        return Err(invalid(format!(
            "channel gate shape {:?} does not match input {:?}",
            gate.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let mut out = x.clone();
    if hw > 0 {
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let g = gate.data()[i];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
    }
    Ok(out)
}
