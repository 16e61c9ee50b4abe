//! Radiance RGBE (`.hdr`) codec.
//!
//! Decoding follows the reference rule `channel = mantissa · 2^(e − 136)`,
//! `e = 0 → black`. Encoding rounds mantissas to nearest and writes
//! new-style run-length scanlines with the reference run-finding scheme.

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::image::{EnvMap, Rgb, RgbImage};

const MIN_RUN: usize = 4;
const MAX_RUN: usize = 127;
const MAX_LITERAL: usize = 128;
const RLE_WIDTH: std::ops::RangeInclusive<usize> = 8..=0x7fff;

/// Below this the reference encoder writes a zero pixel.
const ZERO_THRESHOLD: f64 = 1e-32;

pub fn rgbe_to_rgb(p: [u8; 4]) -> Rgb {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let scale = 2f64.powi(p[3] as i32 - 136);
    [p[0] as f64 * scale, p[1] as f64 * scale, p[2] as f64 * scale]
}

/// Shared-exponent encoding with round-to-nearest mantissas.
pub fn rgb_to_rgbe(c: Rgb) -> [u8; 4] {
    let v = c[0].max(c[1]).max(c[2]);
    if v.is_nan() || v < ZERO_THRESHOLD {
        return [0; 4];
    }
    let (_, mut exp) = frexp(v);
    let mut scale = 256.0 * 2f64.powi(-exp);
    if (v * scale).round() >= 256.0 {
        exp += 1;
        scale *= 0.5;
    }
    if exp + 128 > 255 {
        return [255, 255, 255, 255];
    }
    let m = |x: f64| (x.max(0.0) * scale).round().min(255.0) as u8;
    [m(c[0]), m(c[1]), m(c[2]), (exp + 128) as u8]
}

/// `v = f · 2^e` with `f ∈ [0.5, 1)` for positive finite `v`.
fn frexp(v: f64) -> (f64, i32) {
    let mut e = v.log2().floor() as i32 + 1;
    let mut f = v * 2f64.powi(-e);
    // log2 can land one off near powers of two.
    if f >= 1.0 {
        f *= 0.5;
        e += 1;
    } else if f < 0.5 {
        f *= 2.0;
        e -= 1;
    }
    (f, e)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.bytes.len(), "truncated scanline"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        self.pos += end + 1;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse(start, "header is not text"))?;
        Ok((start, text))
    }
}

fn parse_header(cur: &mut Cursor) -> Result<GridDims> {
    let (at, magic) = cur.line()?;
    if !magic.starts_with("#?") {
        return Err(Error::parse(at, "missing #? signature"));
    }
    loop {
        let (at, line) = cur.line()?;
        if line.trim().is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(Error::parse(at, format!("unsupported pixel format {:?}", fmt.trim())));
            }
        }
    }
    let (at, res) = cur.line()?;
    let tokens: Vec<&str> = res.split_whitespace().collect();
    match tokens.as_slice() {
        ["-Y", h, "+X", w] => {
            let num = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::parse(at, format!("bad image size {s:?}")))
            };
            Ok(GridDims::new(num(w)?, num(h)?))
        }
        [a, _, b, _] if ["-Y", "+Y", "-X", "+X"].contains(a) && ["-Y", "+Y", "-X", "+X"].contains(b) => {
            Err(Error::parse(at, format!("unsupported orientation {res:?}")))
        }
        _ => Err(Error::parse(at, format!("bad resolution line {res:?}"))),
    }
}

/// Flat scanline that may contain old-style `(1, 1, 1, n)` repeat markers.
/// `first` is the already-consumed first pixel, if any.
fn read_old_scanline(cur: &mut Cursor, first: Option<[u8; 4]>, out: &mut [[u8; 4]]) -> Result<()> {
    let mut i = 0;
    let mut shift = 0u32;
    let mut pending = first;
    while i < out.len() {
        let at = cur.pos;
        let p = match pending.take() {
            Some(p) => p,
            None => {
                let s = cur.take(4)?;
                [s[0], s[1], s[2], s[3]]
            }
        };
        if p[0] == 1 && p[1] == 1 && p[2] == 1 {
            if i == 0 {
                return Err(Error::parse(at, "repeat marker with no preceding pixel"));
            }
            let count = (p[3] as usize) << shift;
            if i + count > out.len() {
                return Err(Error::parse(at, "repeat runs past end of scanline"));
            }
            let prev = out[i - 1];
            out[i..i + count].fill(prev);
            i += count;
            shift += 8;
        } else {
            out[i] = p;
            i += 1;
            shift = 0;
        }
    }
    Ok(())
}

fn read_rle_scanline(cur: &mut Cursor, out: &mut [[u8; 4]]) -> Result<()> {
    let width = out.len();
    for ch in 0..4 {
        let mut i = 0;
        while i < width {
            let at = cur.pos;
            let count = cur.byte()? as usize;
            if count > 128 {
                let n = count - 128;
                if i + n > width {
                    return Err(Error::parse(at, "bad scanline data: run too long"));
                }
                let v = cur.byte()?;
                out[i..i + n].iter_mut().for_each(|p| p[ch] = v);
                i += n;
            } else {
                if count == 0 || i + count > width {
                    return Err(Error::parse(at, "bad scanline data: literal length"));
                }
                for (p, &v) in out[i..i + count].iter_mut().zip(cur.take(count)?) {
                    p[ch] = v;
                }
                i += count;
            }
        }
    }
    Ok(())
}

/// Decodes the raw RGBE quadruples of an image, top row first.
pub fn decode_rgbe(bytes: &[u8]) -> Result<(GridDims, Vec<[u8; 4]>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let dims = parse_header(&mut cur)?;
    let width = dims.width;
    let mut data = vec![[0u8; 4]; dims.pixel_count()];
    for row in data.chunks_exact_mut(width) {
        if !RLE_WIDTH.contains(&width) {
            read_old_scanline(&mut cur, None, row)?;
            continue;
        }
        let at = cur.pos;
        let s = cur.take(4)?;
        let head = [s[0], s[1], s[2], s[3]];
        if head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0 {
            let w = ((head[2] as usize) << 8) | head[3] as usize;
            if w != width {
                return Err(Error::parse(
                    at,
                    format!("scanline width {w} does not match image width {width}"),
                ));
            }
            read_rle_scanline(&mut cur, row)?;
        } else {
            read_old_scanline(&mut cur, Some(head), row)?;
        }
    }
    Ok((dims, data))
}

pub fn read_hdr(bytes: &[u8]) -> Result<EnvMap> {
    let (dims, data) = decode_rgbe(bytes)?;
    EnvMap::new(RgbImage::from_data(dims, data.into_iter().map(rgbe_to_rgb).collect())?)
}

fn write_rle_channel(data: &[u8], out: &mut Vec<u8>) {
    let n = data.len();
    let mut cur = 0;
    while cur < n {
        let mut beg_run = cur;
        let mut run_count = 0;
        let mut old_run_count = 0;
        while run_count < MIN_RUN && beg_run < n {
            beg_run += run_count;
            old_run_count = run_count;
            run_count = 1;
            while beg_run + run_count < n && run_count < MAX_RUN && data[beg_run] == data[beg_run + run_count] {
                run_count += 1;
            }
        }
        if old_run_count > 1 && old_run_count == beg_run - cur {
            out.push((128 + old_run_count) as u8);
            out.push(data[cur]);
            cur = beg_run;
        }
        while cur < beg_run {
            let literal = (beg_run - cur).min(MAX_LITERAL);
            out.push(literal as u8);
            out.extend_from_slice(&data[cur..cur + literal]);
            cur += literal;
        }
        if run_count >= MIN_RUN {
            out.push((128 + run_count) as u8);
            out.push(data[beg_run]);
            cur += run_count;
        }
    }
}

/// Encodes raw RGBE quadruples, top row first.
pub fn encode_rgbe(dims: GridDims, data: &[[u8; 4]]) -> Result<Vec<u8>> {
    if data.len() != dims.pixel_count() {
        return Err(Error::dims(dims.pixel_count(), data.len()));
    }
    let mut out = format!(
        "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {} +X {}\n",
        dims.height, dims.width
    )
    .into_bytes();
    let width = dims.width;
    let mut channel = vec![0u8; width];
    for row in data.chunks_exact(width) {
        if !RLE_WIDTH.contains(&width) {
            row.iter().for_each(|p| out.extend_from_slice(p));
            continue;
        }
        out.extend_from_slice(&[2, 2, (width >> 8) as u8, (width & 0xff) as u8]);
        for ch in 0..4 {
            for (c, p) in channel.iter_mut().zip(row) {
                *c = p[ch];
            }
            write_rle_channel(&channel, &mut out);
        }
    }
    Ok(out)
}

pub fn write_hdr(env: &EnvMap) -> Vec<u8> {
    let data: Vec<[u8; 4]> = env.pixels().iter().map(|&p| rgb_to_rgbe(p)).collect();
    encode_rgbe(env.dims(), &data).expect("pixel count matches dims")
}
