//! Binary event files: a 16-byte header (`DVS1`, width u16, height u16,
//! dt_e u64) followed by 16-byte records (x u16, y u16, p i8, 3 zero bytes,
//! t u64). All integers little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::event_sim::Event;

const MAGIC: &[u8; 4] = b"DVS1";
const HEADER: usize = 16;
const RECORD: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub width: usize,
    pub height: usize,
    pub dt_e_ns: u64,
    pub events: Vec<Event>,
}

pub fn encode_events(file: &EventFile) -> Result<Vec<u8>> {
    let w = u16::try_from(file.width).map_err(|_| Error::InvalidInput("width exceeds u16".into()))?;
    let h = u16::try_from(file.height).map_err(|_| Error::InvalidInput("height exceeds u16".into()))?;
    let mut out = Vec::with_capacity(HEADER + RECORD * file.events.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&file.dt_e_ns.to_le_bytes());
    for e in &file.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&e.t_ns.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates an event file; `path` is used in error messages.
pub fn decode_events(bytes: &[u8], path: &Path) -> Result<EventFile> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("not an event file (bad magic)".into()));
    }
    if !(bytes.len() - HEADER).is_multiple_of(RECORD) {
        return Err(bad(format!(
            "truncated record ({} trailing bytes)",
            (bytes.len() - HEADER) % RECORD
        )));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (width, height) = (usize::from(u16_at(4)), usize::from(u16_at(6)));
    let dt_e_ns = u64_at(8);
    if dt_e_ns == 0 {
        return Err(bad("dt_e is zero".into()));
    }
    let mut events: Vec<Event> = Vec::with_capacity((bytes.len() - HEADER) / RECORD);
    for (k, r) in bytes[HEADER..].chunks_exact(RECORD).enumerate() {
        let o = HEADER + k * RECORD;
        let e = Event {
            x: u16_at(o),
            y: u16_at(o + 2),
            p: r[4] as i8,
            t_ns: u64_at(o + 8),
        };
        if usize::from(e.x) >= width || usize::from(e.y) >= height {
            return Err(bad(format!("event {k} at ({}, {}) outside {width}x{height}", e.x, e.y)));
        }
        if e.p != 1 && e.p != -1 || r[5..8] != [0, 0, 0] {
            return Err(bad(format!("event {k} has invalid polarity or padding")));
        }
        if let Some(prev) = events.last() {
            if prev.sort_key() > e.sort_key() {
                return Err(bad(format!("event {k} is out of order")));
            }
        }
        events.push(e);
    }
    Ok(EventFile {
        width,
        height,
        dt_e_ns,
        events,
    })
}

pub fn write_events(path: &Path, file: &EventFile) -> Result<()> {
    super::write_bytes(path, &encode_events(file)?)
}

pub fn read_events(path: &Path) -> Result<EventFile> {
    decode_events(&super::read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventFile {
        EventFile {
            width: 4,
            height: 3,
            dt_e_ns: 1000,
            events: vec![
                Event {
                    x: 1,
                    y: 0,
                    p: 1,
                    t_ns: 0,
                },
                Event {
                    x: 3,
                    y: 2,
                    p: -1,
                    t_ns: 0,
                },
                Event {
                    x: 0,
                    y: 1,
                    p: 1,
                    t_ns: 5000,
                },
            ],
        }
    }

    #[test]
    fn layout_and_round_trip() {
        let f = sample();
        let bytes = encode_events(&f).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 16);
        assert_eq!(&bytes[..4], b"DVS1");
        assert_eq!(bytes[16 + 16 + 4], 0xFF);
        let back = decode_events(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_events(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_events(&sample()).unwrap();
        let p = Path::new("x.dvs");
        assert!(decode_events(&bytes[..20], p).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode_events(&b, p).is_err());
        let mut b = bytes.clone();
        b[16 + 4] = 0;
        assert!(decode_events(&b, p).is_err());
        let mut b = bytes.clone();
        b[16] = 9;
        assert!(decode_events(&b, p).is_err());
        let mut b = bytes;
        b[16 + 32 + 8..16 + 32 + 16].copy_from_slice(&0u64.to_le_bytes());
        b[16 + 32] = 3;
        assert!(decode_events(&b, p).is_err());
    }
}
