//! Netpbm images: PPM (P6/P3) for color, PGM (P5/P2) for masks.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::{Mask, RgbImage, Vec3};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::format("PNM", msg)
}

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let buf = r.fill_buf()?;
        let Some(&b) = buf.first() else {
            break;
        };
        if b == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        r.consume(1);
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b);
    }
    if tok.is_empty() {
        return Err(malformed("truncated header"));
    }
    String::from_utf8(tok).map_err(|_| malformed("non-ascii header"))
}

fn number<T: std::str::FromStr>(r: &mut impl BufRead, what: &str) -> Result<T> {
    let t = read_token(r)?;
    t.parse().map_err(|_| malformed(format!("bad {what} `{t}`")))
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let magic = read_token(r)?;
    let magic: [u8; 2] = magic
        .as_bytes()
        .try_into()
        .map_err(|_| malformed(format!("bad magic `{magic}`")))?;
    let width = number(r, "width")?;
    let height = number(r, "height")?;
    let maxval: u32 = number(r, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(malformed("bad dimensions or maxval"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
    })
}

/// Samples scaled to `[0, 1]`.
fn read_samples(r: &mut impl BufRead, h: &Header, channels: usize, binary: bool) -> Result<Vec<f64>> {
    let n = h.width * h.height * channels;
    let scale = h.maxval as f64;
    if binary {
        let bytes_per = if h.maxval > 255 { 2 } else { 1 };
        let mut buf = vec![0u8; n * bytes_per];
        r.read_exact(&mut buf).map_err(|_| malformed("pixel data truncated"))?;
        Ok(if bytes_per == 1 {
            buf.iter().map(|&b| b as f64 / scale).collect()
        } else {
            buf.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
                .collect()
        })
    } else {
        (0..n).map(|_| number::<u32>(r, "sample").map(|v| v as f64 / scale)).collect()
    }
}

pub fn read_ppm(mut r: impl BufRead) -> Result<RgbImage> {
    let h = read_header(&mut r)?;
    let binary = match &h.magic {
        b"P6" => true,
        b"P3" => false,
        _ => return Err(malformed("not a PPM (P3/P6) image")),
    };
    let s = read_samples(&mut r, &h, 3, binary)?;
    let pixels = s.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    RgbImage::from_pixels(h.width, h.height, pixels)
}

/// Mask from a PGM; pixels above half the maximum value are set.
pub fn read_pgm_mask(mut r: impl BufRead) -> Result<Mask> {
    let h = read_header(&mut r)?;
    let binary = match &h.magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(malformed("not a PGM (P2/P5) image")),
    };
    let s = read_samples(&mut r, &h, 1, binary)?;
    Ok(Mask {
        width: h.width,
        height: h.height,
        bits: s.into_iter().map(|v| v > 0.5).collect(),
    })
}

/// Binary 8-bit PPM.
pub fn write_ppm(w: &mut impl Write, img: &RgbImage) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|p| p.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect::<Vec<_>>())
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Binary PGM with 0 and 255.
pub fn write_pgm_mask(w: &mut impl Write, mask: &Mask) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}
