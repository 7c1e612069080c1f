//! Binary netpbm images (P5 greyscale, P6 RGB), 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

/// ImageNet statistics used by the pre-trained backbone.
pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Gray,
    Rgb,
}

struct Header {
    kind: Kind,
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(format_err(0, "not a netpbm file"));
    }
    let kind = match bytes[1] {
        b'5' => Kind::Gray,
        b'6' => Kind::Rgb,
        b'1' | b'2' | b'3' | b'4' => {
            return Err(Error::UnsupportedFormat(format!(
                "netpbm variant P{} (only binary P5/P6 are supported)",
                bytes[1] as char
            )))
        }
        _ => return Err(format_err(1, "unknown netpbm magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(pos as u64, "truncated netpbm header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(pos as u64, "expected a decimal number in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err(start as u64, "header number out of range"))?;
        if i < 2 && *field == 0 {
            return Err(format_err(start as u64, "image dimensions must be positive"));
        }
    }
    if fields[2] != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {} (only 255 is supported)", fields[2])));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos as u64, "missing whitespace after maxval")),
    }
    Ok(Header { kind, width: fields[0], height: fields[1], data_start: pos })
}

fn decode(bytes: &[u8], expect: Option<Kind>) -> Result<(Kind, Tensor)> {
    let hdr = parse_header(bytes)?;
    if let Some(k) = expect {
        if k != hdr.kind {
            let want = if k == Kind::Gray { "P5" } else { "P6" };
            return Err(Error::UnsupportedFormat(format!("expected a {want} image")));
        }
    }
    let channels = if hdr.kind == Kind::Gray { 1 } else { 3 };
    let hw = hdr.width * hdr.height;
    let raster = &bytes[hdr.data_start..];
    if raster.len() < hw * channels {
        return Err(format_err(bytes.len() as u64, "truncated raster"));
    }
    // interleaved RGB -> planar
    let mut data = vec![0.0f32; channels * hw];
    for (p, px) in raster[..hw * channels].chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * hw + p] = v as f32 / 255.0;
        }
    }
    Ok((hdr.kind, Tensor::new([1, channels, hdr.height, hdr.width], data)?))
}

/// Binary P6 image as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(decode(&fs::read(path)?, Some(Kind::Rgb))?.1)
}

/// Binary P5 image as a `(1, 1, h, w)` tensor in `[0, 1]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(decode(&fs::read(path)?, Some(Kind::Gray))?.1)
}

/// P5 or P6 image as a 3-channel tensor; greyscale is replicated.
pub fn read_image_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let (kind, t) = decode(&fs::read(path)?, None)?;
    Ok(match kind {
        Kind::Rgb => t,
        Kind::Gray => gray_to_rgb(&t),
    })
}

pub fn gray_to_rgb(t: &Tensor) -> Tensor {
    let [n, _, h, w] = t.shape();
    let mut data = Vec::with_capacity(3 * t.len());
    for b in 0..n {
        for _ in 0..3 {
            data.extend_from_slice(t.plane(b, 0));
        }
    }
    Tensor::new([n, 3, h, w], data).expect("shape matches by construction")
}

/// Mask pixels `>= 128` are foreground.
pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let t = read_pgm(path)?;
    let (h, w) = (t.height(), t.width());
    BinaryMask::new(h, w, t.data().iter().map(|&v| v >= 0.5).collect())
}

pub fn encode_pgm_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&f| if f { 255u8 } else { 0 }));
    out
}

/// P5, maxval 255, foreground 255 and background 0.
pub fn write_pgm_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm_mask(mask))?;
    Ok(())
}

/// Per-channel `(x − mean) / std` with the backbone's pre-training statistics.
pub fn normalize(x: &Tensor) -> Result<Tensor> {
    if x.channels() != 3 {
        return Err(invalid(format!("normalize expects 3 channels, got {}", x.channels())));
    }
    let hw = x.height() * x.width();
    let mut out = x.clone();
    if hw > 0 {
        for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let c = i % 3;
            plane.iter_mut().for_each(|v| *v = (*v - MEAN[c]) / STD[c]);
        }
    }
    Ok(out)
}
