//! Line-oriented text formats: timestamps, trajectories, interpolation
//! kernels and loss curves. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::fusion::{Source, TrackEstimate};
use crate::interp::InterpKernel;

const TRAJECTORY_HEADER: &str = "t_ns,source,x,y,w,h";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Nonblank lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn write_timestamps(path: &Path, ts: &[u64]) -> Result<()> {
    let mut s = String::new();
    for t in ts {
        writeln!(s, "{t}").expect("string write");
    }
    super::write_bytes(path, s.as_bytes())
}

pub fn read_timestamps(path: &Path) -> Result<Vec<u64>> {
    let text = super::read_string(path)?;
    let ts: Vec<u64> = lines(&text)
        .map(|(n, l)| {
            l.parse()
                .map_err(|_| parse_err(path, n, format!("bad timestamp {l:?}")))
        })
        .collect::<Result<_>>()?;
    if ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "timestamps must be strictly increasing".into(),
        });
    }
    Ok(ts)
}

pub fn format_trajectory(traj: &[TrackEstimate]) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for e in traj {
        let b = e.bbox;
        writeln!(s, "{},{},{},{},{},{}", e.t_ns, e.source.as_str(), b.x, b.y, b.w, b.h).expect("string write");
    }
    s
}

/// Parses a trajectory; `path` is used in error messages.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<TrackEstimate>> {
    let mut out: Vec<TrackEstimate> = Vec::new();
    for (n, l) in lines(text) {
        if l == TRAJECTORY_HEADER {
            continue;
        }
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(parse_err(path, n, format!("expected 6 fields, found {}", f.len())));
        }
        let t_ns: u64 = f[0]
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad timestamp {:?}", f[0])))?;
        let source = Source::parse(f[1]).ok_or_else(|| parse_err(path, n, format!("unknown source {:?}", f[1])))?;
        let mut v = [0.0; 4];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            *slot = s
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_err(path, n, format!("bad number {s:?}")))?;
        }
        if out.last().is_some_and(|p| p.t_ns >= t_ns) {
            return Err(parse_err(path, n, "timestamps must be strictly increasing"));
        }
        out.push(TrackEstimate::new(BBox::from_array(v), t_ns, source));
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, traj: &[TrackEstimate]) -> Result<()> {
    super::write_bytes(path, format_trajectory(traj).as_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrackEstimate>> {
    parse_trajectory(&super::read_string(path)?, path)
}

/// `radius r`, then the previous-frame grid rows, a blank line, and the
/// next-frame grid rows.
pub fn format_kernel(k: &InterpKernel) -> String {
    let side = k.side();
    let mut s = format!("radius {}\n", k.radius());
    for (g, grid) in k.weights().chunks(side * side).enumerate() {
        if g > 0 {
            s.push('\n');
        }
        for row in grid.chunks(side) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(" ")).expect("string write");
        }
    }
    s
}

pub fn parse_kernel(text: &str, path: &Path) -> Result<InterpKernel> {
    let mut it = lines(text);
    let (n, first) = it.next().ok_or_else(|| parse_err(path, 1, "empty kernel file"))?;
    let radius: usize = first
        .strip_prefix("radius ")
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| parse_err(path, n, "expected `radius <r>`"))?;
    let side = 2 * radius + 1;
    let mut weights = Vec::with_capacity(2 * side * side);
    for (n, l) in it {
        let row: Vec<f64> = l
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| parse_err(path, n, format!("bad weight {v:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != side {
            return Err(parse_err(
                path,
                n,
                format!("expected {side} weights, found {}", row.len()),
            ));
        }
        weights.extend(row);
    }
    InterpKernel::new(radius, weights).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_kernel(path: &Path, k: &InterpKernel) -> Result<()> {
    super::write_bytes(path, format_kernel(k).as_bytes())
}

pub fn read_kernel(path: &Path) -> Result<InterpKernel> {
    parse_kernel(&super::read_string(path)?, path)
}

/// `epoch,loss` CSV, epochs numbered from 1.
pub fn format_losses(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, l).expect("string write");
    }
    s
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    super::write_bytes(path, format_losses(losses).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip() {
        let t = vec![
            TrackEstimate::new(BBox::new(0.1, 1.0 / 3.0, 0.25, 1e-17), 5, Source::Fused),
            TrackEstimate::new(BBox::new(-0.5, 0.5, 0.2, 0.2), 12_500_000, Source::Gt),
        ];
        let text = format_trajectory(&t);
        let back = parse_trajectory(&text, Path::new("t.csv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(format_trajectory(&back), text);
    }

    #[test]
    fn trajectory_errors_name_the_line() {
        let text = "t_ns,source,x,y,w,h\n0,ann,0,0,1,1\n\n7,ann,0,zz,1,1\n";
        let err = parse_trajectory(text, Path::new("t.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        assert!(err.to_string().contains("line 4"));
        let err = parse_trajectory("3,bogus,0,0,1,1", Path::new("t.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_trajectory("3,ann,0,0,1,1\n3,ann,0,0,1,1", Path::new("t.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn kernel_round_trip() {
        let k = InterpKernel::new(1, (0..18).map(|i| i as f64 / 7.0).collect()).unwrap();
        let text = format_kernel(&k);
        assert!(text.starts_with("radius 1\n"));
        let back = parse_kernel(&text, Path::new("k")).unwrap();
        assert_eq!(back, k);
        assert!(parse_kernel("radius 1\n1 2\n", Path::new("k")).is_err());
    }

    #[test]
    fn losses_csv() {
        assert_eq!(format_losses(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
