//! Binary PGM (P5). Frames are written with 8-bit samples; 8- and 16-bit
//! files are read.

use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Encodes values in `[0, 1]` as an 8-bit P5 image.
pub fn encode_pgm_values(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    encode_pgm_values(frame.width(), frame.height(), frame.data())
}

/// Decodes a P5 image into a frame stamped `t_ns`.
pub fn decode_pgm(bytes: &[u8], path: &Path, t_ns: u64) -> Result<Frame> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    pos += 1; // single whitespace after maxval
    let n = w * h;
    let data: Vec<f64> = if maxval < 256 {
        let body = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated pixel data"))?;
        body.iter().map(|&b| (f64::from(b) / maxval as f64).min(1.0)).collect()
    } else {
        let body = bytes.get(pos..pos + 2 * n).ok_or_else(|| bad("truncated pixel data"))?;
        body.chunks_exact(2)
            .map(|c| (f64::from(u16::from_be_bytes([c[0], c[1]])) / maxval as f64).min(1.0))
            .collect()
    };
    Frame::new(w, h, data, t_ns)
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    super::write_bytes(path, &encode_pgm(frame))
}

pub fn read_pgm(path: &Path, t_ns: u64) -> Result<Frame> {
    decode_pgm(&super::read_bytes(path)?, path, t_ns)
}
