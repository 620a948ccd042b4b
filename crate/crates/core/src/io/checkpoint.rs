//! Network checkpoints.
//!
//! Layout (little-endian): `DNCK`, version u32, kind u8 (1 frame network,
//! 2 spiking network), input shape as three u32, architecture string (u32
//! length + UTF-8), kind-specific hyperparameters, then parameter groups as
//! u32 count followed by (u64 length, f64 values) each.

use std::path::Path;

use crate::ann::{Activation, AnnNetwork};
use crate::error::{Error, Result};
use crate::layers::{format_arch, parse_arch, Shape3};
use crate::snn::{LifParams, SnnNetwork};

const MAGIC: &[u8; 4] = b"DNCK";
const VERSION: u32 = 1;
const KIND_ANN: u8 = 1;
const KIND_SNN: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Ann(AnnNetwork),
    Snn(SnnNetwork),
}

struct Writer(Vec<u8>);

impl Writer {
    fn header(kind: u8, input: Shape3, arch: &str) -> Self {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION);
        w.0.push(kind);
        for d in [input.c, input.h, input.w] {
            w.u32(d as u32);
        }
        w.u32(arch.len() as u32);
        w.0.extend_from_slice(arch.as_bytes());
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn groups(&mut self, groups: &[&[f64]]) {
        self.u32(groups.len() as u32);
        for g in groups {
            self.0.extend_from_slice(&(g.len() as u64).to_le_bytes());
            for &v in *g {
                self.f64(v);
            }
        }
    }
}

pub fn encode_ann(net: &AnnNetwork) -> Vec<u8> {
    let mut w = Writer::header(KIND_ANN, net.input_shape(), &format_arch(&net.layer_specs()));
    w.0.push(match net.output_activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
    w.f64(net.lambda);
    let groups: Vec<&[f64]> = net.layer_params().into_iter().flat_map(|(a, b)| [a, b]).collect();
    w.groups(&groups);
    w.0
}

pub fn encode_snn(net: &SnnNetwork) -> Vec<u8> {
    let mut w = Writer::header(KIND_SNN, net.input_shape(), &format_arch(&net.layer_specs()));
    let l = net.lif;
    for v in [l.tau, l.dt, l.v_th, l.u_rest, l.surrogate_width] {
        w.f64(v);
    }
    w.u32(net.time_steps as u32);
    w.u32(net.decode_window as u32);
    w.f64(net.lambda);
    let mut groups = net.layer_weights();
    groups.push(net.decode_weights());
    groups.push(net.decode_bias());
    w.groups(&groups);
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.err("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn groups(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = self.u64()? as usize;
            if len > (self.bytes.len() - self.pos) / 8 {
                return Err(self.err("parameter group longer than file"));
            }
            let g: Vec<f64> = (0..len).map(|_| self.f64()).collect::<Result<_>>()?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{}: parameter", self.path.display())));
            }
            out.push(g);
        }
        Ok(out)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.u8()?;
    let input = Shape3::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let len = r.u32()? as usize;
    let arch = match std::str::from_utf8(r.take(len)?) {
        Ok(a) => a.to_string(),
        Err(_) => return Err(r.err("architecture is not UTF-8")),
    };
    let specs = parse_arch(&arch).map_err(|e| r.err(e.to_string()))?;
    let wrap = |e: Error, path: &Path| match e {
        Error::DimensionMismatch { .. } | Error::Config(_) => Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        },
        other => other,
    };
    let ck = match kind {
        KIND_ANN => {
            let act = match r.u8()? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                a => return Err(r.err(format!("unknown activation {a}"))),
            };
            let lambda = r.f64()?;
            let mut groups = r.groups()?.into_iter();
            let mut params = Vec::new();
            while let Some(w) = groups.next() {
                let b = groups.next().ok_or_else(|| r.err("odd number of parameter groups"))?;
                params.push((w, b));
            }
            Checkpoint::Ann(AnnNetwork::from_parts(input, specs, params, act, lambda).map_err(|e| wrap(e, path))?)
        }
        KIND_SNN => {
            let lif = LifParams {
                tau: r.f64()?,
                dt: r.f64()?,
                v_th: r.f64()?,
                u_rest: r.f64()?,
                surrogate_width: r.f64()?,
            };
            let time_steps = r.u32()? as usize;
            let decode_window = r.u32()? as usize;
            let lambda = r.f64()?;
            let mut groups = r.groups()?;
            if groups.len() < 2 {
                return Err(r.err("missing readout parameters"));
            }
            let decode_b = groups.pop().expect("len >= 2");
            let decode_w = groups.pop().expect("len >= 1");
            Checkpoint::Snn(
                SnnNetwork::from_parts(
                    input,
                    specs,
                    groups,
                    decode_w,
                    decode_b,
                    lif,
                    time_steps,
                    decode_window,
                    lambda,
                )
                .map_err(|e| wrap(e, path))?,
            )
        }
        k => return Err(r.err(format!("unknown network kind {k}"))),
    };
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after checkpoint"));
    }
    Ok(ck)
}

pub fn save_ann(path: &Path, net: &AnnNetwork) -> Result<()> {
    super::write_bytes(path, &encode_ann(net))
}

pub fn save_snn(path: &Path, net: &SnnNetwork) -> Result<()> {
    super::write_bytes(path, &encode_snn(net))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnSpec;
    use crate::snn::SnnSpec;

    #[test]
    fn ann_round_trip() {
        let net = AnnNetwork::init(&AnnSpec::desk_default(2), 9).unwrap();
        let bytes = encode_ann(&net);
        assert_eq!(&bytes[..4], b"DNCK");
        let Checkpoint::Ann(back) = decode_checkpoint(&bytes, Path::new("a")).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back, net);
        assert_eq!(encode_ann(&back), bytes);
    }

    #[test]
    fn snn_round_trip() {
        let net = SnnNetwork::init(&SnnSpec::desk_default(), 4).unwrap();
        let bytes = encode_snn(&net);
        let Checkpoint::Snn(back) = decode_checkpoint(&bytes, Path::new("s")).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back, net);
        assert_eq!(encode_snn(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let net = AnnNetwork::init(&AnnSpec::desk_default(1), 1).unwrap();
        let bytes = encode_ann(&net);
        let p = Path::new("c");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], p).is_err());
        let mut b = bytes.clone();
        b[8] = 7;
        assert!(decode_checkpoint(&b, p).is_err());
        let mut b = bytes.clone();
        b.push(0);
        assert!(decode_checkpoint(&b, p).is_err());
        let mut b = bytes;
        b[0] = b'X';
        assert!(decode_checkpoint(&b, p).is_err());
    }
}
