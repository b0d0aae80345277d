use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded P5/P6 image with samples scaled to `[0, 1]`, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Pnm {
    /// Grayscale `[H,W]`; color is converted with Rec. 601 luma weights.
    pub fn to_gray(&self) -> Tensor {
        let n = self.width * self.height;
        let data = if self.channels == 1 {
            self.data.clone()
        } else {
            (0..n)
                .map(|i| {
                    let p = &self.data[i * 3..i * 3 + 3];
                    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
                })
                .collect()
        };
        Tensor::new(vec![self.height, self.width], data).expect("pnm shape")
    }
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(format!("pnm: {}", msg.into())))
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return parse_err("truncated header");
    }
    std::str::from_utf8(&bytes[start..*pos]).or_else(|_| parse_err("header is not ASCII"))
}

pub fn read_pnm(bytes: &[u8]) -> Result<Pnm> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)? {
        "P5" => 1,
        "P6" => 3,
        m => return parse_err(format!("unsupported magic {m:?}")),
    };
    let num = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("pnm: bad number {s:?}")))
    };
    let width = num(header_token(bytes, &mut pos)?)?;
    let height = num(header_token(bytes, &mut pos)?)?;
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("pnm: empty image {width}x{height}")));
    }
    let maxval = num(header_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return parse_err(format!("maxval {maxval} out of range"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return parse_err("missing raster");
    }
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Parse("pnm: image too large".into()))?;
    let raster = &bytes[pos..];
    if count.checked_mul(bps) != Some(raster.len()) {
        return parse_err(format!(
            "raster has {} bytes, expected {count}×{bps}",
            raster.len()
        ));
    }
    let m = maxval as f64;
    let data = if bps == 1 {
        raster.iter().map(|&b| (b as f64 / m).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / m).min(1.0))
            .collect()
    };
    Ok(Pnm {
        width,
        height,
        channels,
        data,
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit P5 of a `[H,W]` map in `[0, 1]`.
pub fn write_pgm(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

/// 8-bit P6 from interleaved RGB samples in `[0, 1]`.
pub fn write_ppm(width: usize, height: usize, rgb: &[f64]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "ppm raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| quantize(v)));
    out
}

/// Gray image written as P6 with equal channels.
pub fn gray_to_rgb(img: &Tensor) -> Vec<f64> {
    img.data().iter().flat_map(|&v| [v, v, v]).collect()
}

/// Blue (small) to red (large) ramp for error maps, saturating at `max`.
pub fn error_colormap(err: &[f64], max: f64) -> Vec<f64> {
    err.iter()
        .flat_map(|&e| {
            let t = if max > 0.0 {
                (e / max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t]
        })
        .collect()
}
