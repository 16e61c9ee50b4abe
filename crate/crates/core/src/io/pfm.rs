//! Portable FloatMap (`.pfm`) codec.
//!
//! Rows are stored bottom to top. A negative scale marks little-endian data.
//! Grayscale `Pf` files are broadcast to RGB. Files are always written as
//! little-endian `PF`.

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::image::{EnvMap, RgbImage};

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(usize, &'a str)> {
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_whitespace()) {
        *pos += 1;
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "unexpected end of header"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(start, "header is not text"))?;
    Ok((start, s))
}

pub fn read_pfm(bytes: &[u8]) -> Result<EnvMap> {
    let mut pos = 0;
    let (_, magic) = token(bytes, &mut pos)?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(0, format!("unknown PFM signature {magic:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        let (at, t) = token(bytes, &mut pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(at, format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let (at, scale) = token(bytes, &mut pos)?;
    let scale: f64 = scale
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::parse(at, format!("bad scale {scale:?}")))?;
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::parse(bytes.len(), format!("expected {need} bytes of pixel data")))?;
    let read = |i: usize| {
        let b = [data[4 * i], data[4 * i + 1], data[4 * i + 2], data[4 * i + 3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        v as f64
    };
    let image = RgbImage::from_fn(GridDims::new(width, height), |x, y| {
        let base = ((height - 1 - y) * width + x) * channels;
        if channels == 3 {
            [read(base), read(base + 1), read(base + 2)]
        } else {
            [read(base); 3]
        }
    });
    EnvMap::new(image)
}

/// Writes little-endian RGB. Values are narrowed to `f32`.
pub fn write_pfm(env: &EnvMap) -> Vec<u8> {
    let (w, h) = (env.width(), env.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for y in (0..h).rev() {
        for p in env.image().row(y) {
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}
