//! Temporal complementary filter.
//!
//! Each SNN output is blended with the temporally nearest ANN output. The
//! blend weight on the SNN side, `1 - 2 / (1 + e^D)`, is zero when an ANN
//! estimate shares the timestamp and approaches one as the squared
//! normalized time gap `D` grows.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Ann,
    Snn,
    Fused,
    /// Ground-truth labels stored in the trajectory format.
    Gt,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Ann => "ann",
            Source::Snn => "snn",
            Source::Fused => "fused",
            Source::Gt => "gt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ann" => Some(Source::Ann),
            "snn" => Some(Source::Snn),
            "fused" => Some(Source::Fused),
            "gt" => Some(Source::Gt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEstimate {
    pub bbox: BBox,
    pub t_ns: u64,
    pub source: Source,
}

impl TrackEstimate {
    pub fn new(bbox: BBox, t_ns: u64, source: Source) -> Self {
        Self { bbox, t_ns, source }
    }
}

/// Timestamp-ordered estimates.
pub type Trajectory = Vec<TrackEstimate>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcfConfig {
    /// Time scale normalizing the ANN/SNN gap, in ns.
    pub kappa_ns: f64,
    /// Only ANN outputs at or before the SNN timestamp are admissible.
    pub causal: bool,
}

impl Default for TcfConfig {
    fn default() -> Self {
        Self {
            kappa_ns: 100e6,
            causal: true,
        }
    }
}

impl TcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_ns > 0.0 && self.kappa_ns.is_finite()) {
            return Err(Error::Config(format!("kappa must be > 0, got {}", self.kappa_ns)));
        }
        Ok(())
    }

    /// `((t_a - t_s) / kappa)^2`.
    pub fn distance(&self, t_a: u64, t_s: u64) -> f64 {
        let gap = (t_a as f64 - t_s as f64) / self.kappa_ns;
        gap * gap
    }
}

/// The admissible ANN output closest in time to `t_s` and its distance `D`.
/// Ties go to the earlier anchor.
pub fn nearest_ann<'a>(t_s: u64, anchors: &'a [TrackEstimate], cfg: &TcfConfig) -> Result<(&'a TrackEstimate, f64)> {
    let mut best: Option<(&TrackEstimate, f64)> = None;
    for a in anchors {
        if cfg.causal && a.t_ns > t_s {
            continue;
        }
        let d = cfg.distance(a.t_ns, t_s);
        best = match best {
            Some((b, bd)) if bd < d || (bd == d && b.t_ns <= a.t_ns) => Some((b, bd)),
            _ => Some((a, d)),
        };
    }
    best.ok_or(Error::NoAnchor { t_ns: t_s })
}

/// Largest value below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// SNN-side blend weight `(e^D - 1) / (e^D + 1)`, in `[0, 1)`.
pub fn tcf_weight(d: f64) -> f64 {
    let w = 1.0 - 2.0 / (1.0 + d.exp());
    w.min(BELOW_ONE)
}

/// `w * snn + (1 - w) * ann`, stamped at the SNN time.
pub fn fuse(snn: &TrackEstimate, ann: &TrackEstimate, d: f64) -> TrackEstimate {
    let w = tcf_weight(d);
    let o = snn.bbox.to_array();
    let a = ann.bbox.to_array();
    let bbox = BBox::from_array(std::array::from_fn(|i| w * o[i] + (1.0 - w) * a[i]));
    TrackEstimate::new(bbox, snn.t_ns, Source::Fused)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(t: u64, v: f64) -> TrackEstimate {
        TrackEstimate::new(BBox::new(v, v, v, v), t, Source::Ann)
    }

    #[test]
    fn coincident_anchor() {
        let cfg = TcfConfig::default();
        let anchors = [est(0, 0.0), est(500, 1.0)];
        let (a, d) = nearest_ann(500, &anchors, &cfg).unwrap();
        assert_eq!(a.t_ns, 500);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn offline_and_causal_search() {
        let k = 1000.0;
        let anchors = [est(0, 0.0), est(10_000, 1.0)];
        let offline = TcfConfig {
            kappa_ns: k,
            causal: false,
        };
        let (a, d) = nearest_ann(4000, &anchors, &offline).unwrap();
        assert_eq!((a.t_ns, d), (0, 16.0));
        let (a, d) = nearest_ann(7000, &anchors, &offline).unwrap();
        assert_eq!((a.t_ns, d), (10_000, 9.0));
        let causal = TcfConfig {
            kappa_ns: k,
            causal: true,
        };
        let (a, _) = nearest_ann(7000, &anchors, &causal).unwrap();
        assert_eq!(a.t_ns, 0);
        // equidistant: earlier wins
        let (a, _) = nearest_ann(5000, &anchors, &offline).unwrap();
        assert_eq!(a.t_ns, 0);
    }

    #[test]
    fn no_anchor_errors() {
        let cfg = TcfConfig::default();
        assert!(matches!(nearest_ann(10, &[], &cfg), Err(Error::NoAnchor { t_ns: 10 })));
        assert!(nearest_ann(10, &[est(20, 0.0)], &cfg).is_err());
    }

    #[test]
    fn weight_values() {
        assert_eq!(tcf_weight(0.0), 0.0);
        assert!((tcf_weight(3f64.ln()) - 0.5).abs() < 1e-12);
        assert!(tcf_weight(50.0) > 1.0 - 1e-12);
        assert!(tcf_weight(50.0) < 1.0);
        assert!(tcf_weight(1e6) < 1.0);
        assert!(tcf_weight(f64::INFINITY) < 1.0);
    }

    #[test]
    fn fuse_limits() {
        let o = TrackEstimate::new(BBox::new(0.1, 0.2, 0.3, 0.4), 77, Source::Snn);
        let a = TrackEstimate::new(BBox::new(0.9, 0.8, 0.7, 0.6), 10, Source::Ann);
        let f = fuse(&o, &a, 0.0);
        assert_eq!(f.bbox, a.bbox);
        assert_eq!((f.t_ns, f.source), (77, Source::Fused));
        let f = fuse(&o, &a, 1e3);
        for (x, y) in f.bbox.to_array().iter().zip(o.bbox.to_array()) {
            assert!((x - y).abs() < 1e-9);
        }
        let z = TrackEstimate::new(BBox::default(), 0, Source::Snn);
        let one = TrackEstimate::new(BBox::new(1.0, 1.0, 1.0, 1.0), 0, Source::Ann);
        let f = fuse(&z, &one, 3f64.ln());
        for v in f.bbox.to_array() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}
