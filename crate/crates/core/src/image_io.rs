//! Binary PPM (P6) and PGM (P5) image files.
//!
//! 8-bit only. Tensors hold channel-planar [0,1] floats; files hold
//! interleaved bytes, so writes quantize with round(v * 255) and reads
//! divide by 255.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a (3, H, W) tensor as binary PPM.
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid(
            "write_ppm",
            format!("expected (3, H, W), got {s:?}"),
        ));
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            bytes.push(quantize(d[c * h * w + p]));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Write a (1, H, W) or (H, W) tensor as binary PGM.
pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => {
            return Err(Error::invalid(
                "write_pgm",
                format!("expected (1, H, W) or (H, W), got {s:?}"),
            ))
        }
    };
    let d = img.data();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(d.iter().map(|&v| quantize(v)));
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderParser<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.path, "expected integer in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(self.path, "bad integer in header"))
    }
}

/// Read a PPM/PGM file: (3, H, W) for P6, (1, H, W) for P5.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 {
        return Err(Error::format(path, "file too short"));
    }
    let channels = match &bytes[0..2] {
        b"P6" => 3usize,
        b"P5" => 1usize,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported magic {:?} (only binary P5/P6)", other),
            ))
        }
    };
    let mut p = HeaderParser {
        bytes: &bytes,
        pos: 2,
        path,
    };
    let w = p.number()?;
    let h = p.number()?;
    let maxval = p.number()?;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported, want 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing header terminator"));
    }
    p.pos += 1;
    let payload = &bytes[p.pos..];
    if payload.len() != channels * h * w {
        return Err(Error::format(
            path,
            format!(
                "payload {} bytes, expected {} for {w}x{h}x{channels}",
                payload.len(),
                channels * h * w
            ),
        ));
    }
    let mut data = vec![0f32; channels * h * w];
    for pix in 0..h * w {
        for c in 0..channels {
            data[c * h * w + pix] = payload[pix * channels + c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[channels, h, w], data)
}
