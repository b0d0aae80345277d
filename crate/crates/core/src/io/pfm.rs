use crate::error::{Error, Result};

/// Decoded PFM image, rows top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(format!("pfm: {}", msg.into())))
}

/// Read the next whitespace-delimited header token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return parse_err("truncated header");
    }
    std::str::from_utf8(&bytes[start..*pos]).or_else(|_| parse_err("header is not ASCII"))
}

pub fn read_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        m => return parse_err(format!("bad magic {m:?}")),
    };
    let dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("pfm: bad dimension {s:?}")))
    };
    let width = dim(token(bytes, &mut pos)?)?;
    let height = dim(token(bytes, &mut pos)?)?;
    if width == 0 || height == 0 {
        return parse_err(format!("empty image {width}x{height}"));
    }
    let scale: f32 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Parse("pfm: bad scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return parse_err("scale must be non-zero and finite");
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return parse_err("missing raster");
    }
    pos += 1;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Parse("pfm: image too large".into()))?;
    let raster = &bytes[pos..];
    if raster.len() != count * 4 {
        return parse_err(format!(
            "expected {} raster bytes, found {}",
            count * 4,
            raster.len()
        ));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0f32; count];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        // stored bottom row first
        let (r, c) = (i / row, i % row);
        data[(height - 1 - r) * row + c] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Single-channel little-endian PFM of a row-major, top-to-bottom map.
pub fn write_pfm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pfm raster size");
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for r in (0..height).rev() {
        for v in &values[r * width..(r + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}
