//! The hybrid pipeline: the frame network runs on each APS frame with
//! attention feedback, the spiking network runs on fixed-period event
//! windows, and each spiking output is fused with its nearest frame output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{frame_tensor, AnnNetwork};
use crate::attention::{apply_mask, build_mask, nearest_prior, AttentionConfig};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::event_sim::DavisBundle;
use crate::frame::Frame;
use crate::fusion::{fuse, nearest_ann, Source, TcfConfig, TrackEstimate, Trajectory};
use crate::layers::Tensor3;
use crate::snn::{encode_events, SnnInputEncoding, SnnNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Time between spiking inferences, ns.
    pub snn_period_ns: u64,
    /// Event span fed to each spiking inference, ns.
    pub snn_window_ns: u64,
    pub tcf: TcfConfig,
    pub attention: AttentionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_frame_interval(100_000_000)
    }
}

impl PipelineConfig {
    /// Eight spiking inferences per APS interval, non-overlapping windows,
    /// and a fusion time scale of a fifth of the interval.
    pub fn for_frame_interval(dt_f_ns: u64) -> Self {
        Self {
            snn_period_ns: dt_f_ns / 8,
            snn_window_ns: dt_f_ns / 8,
            tcf: TcfConfig {
                kappa_ns: dt_f_ns as f64 / 5.0,
                ..TcfConfig::default()
            },
            attention: AttentionConfig::default(),
        }
    }

    pub fn validate(&self, dt_e_ns: u64) -> Result<()> {
        if self.snn_period_ns == 0 || self.snn_period_ns < dt_e_ns {
            return Err(Error::Config(format!(
                "snn period {} ns must be > 0 and >= dt_e {dt_e_ns} ns",
                self.snn_period_ns
            )));
        }
        if self.snn_window_ns == 0 {
            return Err(Error::Config("snn window must be > 0".into()));
        }
        self.tcf.validate()?;
        self.attention.validate()
    }

    /// Encoding that spreads the window over the network's time steps.
    pub fn encoding(&self, width: usize, height: usize, steps: usize) -> Result<SnnInputEncoding> {
        if steps == 0 || !self.snn_window_ns.is_multiple_of(steps as u64) {
            return Err(Error::Config(format!(
                "snn window {} ns is not divisible into {steps} steps",
                self.snn_window_ns
            )));
        }
        Ok(SnnInputEncoding {
            width,
            height,
            dt_ns: self.snn_window_ns / steps as u64,
            steps,
        })
    }
}

/// Spiking inference times `t0 + k * period`, `k >= 1`, covering the last
/// frame and the last event. Empty when there are no events. Ticks whose
/// window would start before time zero are skipped.
pub fn tick_schedule(bundle: &DavisBundle, cfg: &PipelineConfig) -> Result<Vec<u64>> {
    let t0 = bundle
        .aps
        .first()
        .ok_or_else(|| Error::InvalidInput("bundle has no frames".into()))?
        .t_ns;
    let Some(last_event) = bundle.dvs.last().filter(|e| e.t_ns >= t0) else {
        return Ok(Vec::new());
    };
    let p = cfg.snn_period_ns;
    let last_frame = bundle.aps.last().expect("nonempty").t_ns;
    let k_max = ((last_frame - t0) / p).max((last_event.t_ns - t0) / p + 1);
    Ok((1..=k_max)
        .map(|k| t0 + k * p)
        .filter(|&t| t >= cfg.snn_window_ns)
        .collect())
}

/// Frame-network input: the frame, plus its masked copy when the network
/// expects attention channels.
pub fn ann_input(net: &AnnNetwork, frame: &Frame, prior: &BBox, att: &AttentionConfig) -> Result<Tensor3> {
    let x = frame_tensor(frame);
    let want = net.input_shape();
    if want == x.shape {
        return Ok(x);
    }
    if want.c == 2 * x.shape.c && (want.h, want.w) == (x.shape.h, x.shape.w) {
        let m = build_mask(prior, frame.width(), frame.height(), att);
        return apply_mask(&x, &m);
    }
    Err(Error::dims(want, x.shape))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub fused: Trajectory,
    pub ann: Trajectory,
    /// Every spiking output, unfused.
    pub snn: Trajectory,
    /// Events before the first frame, ignored.
    pub dropped_events: usize,
}

/// Runs both networks over the bundle and fuses their outputs.
pub fn run(bundle: &DavisBundle, snn: &SnnNetwork, ann: &AnnNetwork, cfg: &PipelineConfig) -> Result<TrackOutput> {
    cfg.validate(bundle.dt_e_ns)?;
    let t0 = bundle
        .aps
        .first()
        .ok_or_else(|| Error::InvalidInput("bundle has no frames".into()))?
        .t_ns;
    let dropped_events = bundle.dvs.partition_point(|e| e.t_ns < t0);
    let enc = cfg.encoding(bundle.width, bundle.height, snn.time_steps)?;
    if enc.shape() != snn.input_shape() {
        return Err(Error::dims(snn.input_shape(), enc.shape()));
    }

    let ticks = tick_schedule(bundle, cfg)?;
    let snn_out: Vec<TrackEstimate> = ticks
        .par_iter()
        .map(|&t| {
            let start = t - cfg.snn_window_ns;
            let events = bundle.events_in(start.max(t0), t);
            let x = encode_events(events, &enc, start);
            snn.forward(&x).map(|b| TrackEstimate::new(b, t, Source::Snn))
        })
        .collect::<Result<_>>()?;

    let mut fused: Trajectory = Vec::new();
    let mut ann_traj: Trajectory = Vec::with_capacity(bundle.aps.len());
    let mut s = 0;
    for frame in &bundle.aps {
        while s < snn_out.len() && snn_out[s].t_ns < frame.t_ns {
            fuse_into(&snn_out[s], &ann_traj, &cfg.tcf, &mut fused);
            s += 1;
        }
        let prior = nearest_prior(frame.t_ns, &fused);
        let x = ann_input(ann, frame, &prior.estimate.bbox, &cfg.attention)?;
        let b = ann.predict(&x)?;
        if !b.is_finite() {
            return Err(Error::NonFinite(format!("frame network output at t={}", frame.t_ns)));
        }
        ann_traj.push(TrackEstimate::new(b, frame.t_ns, Source::Ann));
    }
    for o in &snn_out[s..] {
        fuse_into(o, &ann_traj, &cfg.tcf, &mut fused);
    }

    if !cfg.tcf.causal {
        // Attention used the causal history above; the reported fusion may
        // look ahead.
        fused.clear();
        for o in &snn_out {
            fuse_into(o, &ann_traj, &cfg.tcf, &mut fused);
        }
    }
    Ok(TrackOutput {
        fused,
        ann: ann_traj,
        snn: snn_out,
        dropped_events,
    })
}

fn fuse_into(o: &TrackEstimate, anchors: &[TrackEstimate], cfg: &TcfConfig, out: &mut Trajectory) {
    // Before the first anchor the spiking output stays unfused.
    if let Ok((a, d)) = nearest_ann(o.t_ns, anchors, cfg) {
        out.push(fuse(o, a, d));
    }
}

/// Frame network alone on every APS frame, without feedback. An attention
/// network gets the whole-frame mask.
pub fn run_ann_only(bundle: &DavisBundle, ann: &AnnNetwork, att: &AttentionConfig) -> Result<Trajectory> {
    bundle
        .aps
        .iter()
        .map(|f| {
            let x = ann_input(ann, f, &BBox::full_frame(), att)?;
            Ok(TrackEstimate::new(ann.predict(&x)?, f.t_ns, Source::Ann))
        })
        .collect()
}

/// Holds the latest estimate at or before each query; queries before the
/// first estimate get the first one. Returns the held trajectory and the
/// number of such early queries.
pub fn zero_order_hold(ann: &[TrackEstimate], queries: &[u64]) -> Result<(Trajectory, usize)> {
    let first = ann
        .first()
        .ok_or_else(|| Error::InvalidInput("zero-order hold needs at least one estimate".into()))?;
    let mut early = 0;
    let out = queries
        .iter()
        .map(|&q| {
            let i = ann.partition_point(|a| a.t_ns <= q);
            let src = if i == 0 {
                early += 1;
                first
            } else {
                &ann[i - 1]
            };
            TrackEstimate::new(src.bbox, q, src.source)
        })
        .collect();
    Ok((out, early))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnSpec;
    use crate::event_sim::Event;
    use crate::snn::SnnSpec;

    fn bundle(frames: &[u64], events: &[u64]) -> DavisBundle {
        DavisBundle {
            width: 32,
            height: 32,
            dt_e_ns: 1_250_000,
            aps: frames.iter().map(|&t| Frame::filled(32, 32, 0.5, t).unwrap()).collect(),
            dvs: events
                .iter()
                .map(|&t| Event {
                    x: 3,
                    y: 4,
                    p: 1,
                    t_ns: t,
                })
                .collect(),
        }
    }

    fn nets() -> (SnnNetwork, AnnNetwork) {
        let snn = SnnNetwork::init(&SnnSpec::desk_default(), 1).unwrap();
        let ann = AnnNetwork::init(&AnnSpec::desk_default(2), 2).unwrap();
        (snn, ann)
    }

    const MS: u64 = 1_000_000;

    #[test]
    fn schedule_arithmetic() {
        let cfg = PipelineConfig::default();
        let b = bundle(&[0, 100 * MS, 200 * MS], &[5 * MS, 199 * MS]);
        let t = tick_schedule(&b, &cfg).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t[0], 12_500_000);
        assert_eq!(*t.last().unwrap(), 200 * MS);
        // events past the last frame extend the schedule
        let b = bundle(&[0], &[30 * MS]);
        assert_eq!(tick_schedule(&b, &cfg).unwrap(), vec![12_500_000, 25 * MS, 37_500_000]);
        assert!(tick_schedule(&bundle(&[0, 100 * MS], &[]), &cfg).unwrap().is_empty());
    }

    #[test]
    fn zero_events_gives_empty_fusion() {
        let (snn, ann) = nets();
        let b = bundle(&[0, 100 * MS, 200 * MS], &[]);
        let out = run(&b, &snn, &ann, &PipelineConfig::default()).unwrap();
        assert!(out.fused.is_empty() && out.snn.is_empty());
        assert_eq!(out.ann.len(), 3);
    }

    #[test]
    fn single_frame_anchors_everything() {
        let (snn, ann) = nets();
        let b = bundle(&[10 * MS], &[2 * MS, 20 * MS, 40 * MS, 41 * MS]);
        let cfg = PipelineConfig::default();
        let out = run(&b, &snn, &ann, &cfg).unwrap();
        assert_eq!(out.dropped_events, 1);
        assert_eq!(out.fused.len(), out.snn.len());
        assert_eq!(out.snn.len(), 3);
        let a = out.ann[0];
        for (f, o) in out.fused.iter().zip(&out.snn) {
            let d = cfg.tcf.distance(a.t_ns, o.t_ns);
            assert_eq!(*f, fuse(o, &a, d));
        }
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let (snn, ann) = nets();
        let cfg = PipelineConfig::default();
        assert!(run(&bundle(&[], &[1]), &snn, &ann, &cfg).is_err());
        let mut b = bundle(&[0], &[1]);
        b.width = 16;
        assert!(run(&b, &snn, &ann, &cfg).is_err());
    }

    #[test]
    fn zoh_examples() {
        let e = |t: u64, v: f64| TrackEstimate::new(BBox::new(v, v, v, v), t, Source::Ann);
        let anchors = [e(10, 0.1), e(20, 0.2)];
        let (h, early) = zero_order_hold(&anchors, &[5, 10, 15, 20, 99]).unwrap();
        assert_eq!(early, 1);
        let xs: Vec<f64> = h.iter().map(|x| x.bbox.x).collect();
        assert_eq!(xs, vec![0.1, 0.1, 0.1, 0.2, 0.2]);
        assert_eq!(h[2].t_ns, 15);
        assert!(zero_order_hold(&[], &[1]).is_err());
    }
}
