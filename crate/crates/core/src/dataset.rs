//! Training samples cut from simulated bundles and their ground truth.

use rand::Rng;

use crate::ann::frame_tensor;
use crate::ann::AnnSample;
use crate::attention::{apply_mask, augment_label, build_mask, AttentionConfig};
use crate::bbox::BBox;
use crate::error::Result;
use crate::eval::gt_at;
use crate::event_sim::{simulate, DavisBundle, SimConfig};
use crate::frame::Frame;
use crate::fusion::TrackEstimate;
use crate::snn::{encode_events, SnnSample};
use crate::synth::{SynthSpec, SynthVideo};
use crate::tracker::{tick_schedule, PipelineConfig};

/// Renders a scene at the sub-frame rate and simulates it; returns the bundle
/// and the rendered video with its ground truth.
pub fn simulate_scene(spec: &SynthSpec, sim: &SimConfig) -> Result<(DavisBundle, SynthVideo)> {
    let spec = SynthSpec {
        frame_interval_ns: sim.sub_interval_ns(),
        ..spec.clone()
    };
    let video = spec.render()?;
    Ok((simulate(&video.frames, sim)?, video))
}

/// One sample per pipeline tick: the trailing event window and the box at
/// the tick time.
pub fn snn_samples(
    bundle: &DavisBundle,
    gt: &[TrackEstimate],
    cfg: &PipelineConfig,
    steps: usize,
) -> Result<Vec<SnnSample>> {
    let enc = cfg.encoding(bundle.width, bundle.height, steps)?;
    let Some(last) = gt.last() else {
        return Ok(Vec::new());
    };
    tick_schedule(bundle, cfg)?
        .into_iter()
        .filter(|&t| t <= last.t_ns)
        .map(|t| {
            let start = t - cfg.snn_window_ns;
            Ok(SnnSample {
                input: encode_events(bundle.events_in(start, t), &enc, start),
                target: gt_at(gt, t)?,
            })
        })
        .collect()
}

/// Plain frame samples.
pub fn ann_samples(frames: &[Frame], gt: &[TrackEstimate]) -> Result<Vec<AnnSample>> {
    frames
        .iter()
        .map(|f| {
            Ok(AnnSample {
                input: frame_tensor(f),
                target: gt_at(gt, f.t_ns)?,
            })
        })
        .collect()
}

/// Frame samples with attention channels built from a perturbed copy of
/// the true box. With probability `cold_start_rate` the prior is the whole
/// frame instead, as for the first frame of a sequence.
pub fn ann_attention_samples<R: Rng + ?Sized>(
    frames: &[Frame],
    gt: &[TrackEstimate],
    cfg: &AttentionConfig,
    cold_start_rate: f64,
    rng: &mut R,
) -> Result<Vec<AnnSample>> {
    frames
        .iter()
        .map(|f| {
            let target = gt_at(gt, f.t_ns)?;
            let prior = if rng.random_bool(cold_start_rate.clamp(0.0, 1.0)) {
                BBox::full_frame()
            } else {
                augment_label(&target, rng, cfg)
            };
            let m = build_mask(&prior, f.width(), f.height(), cfg);
            Ok(AnnSample {
                input: apply_mask(&frame_tensor(f), &m)?,
                target,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_follow_schedule() {
        let sim = SimConfig::default();
        let spec = SynthSpec {
            frames: 17,
            ..SynthSpec::default()
        };
        let (b, video) = simulate_scene(&spec, &sim).unwrap();
        let gt = video.gt;
        assert_eq!(b.aps.len(), 3);
        let cfg = PipelineConfig::default();
        let s = snn_samples(&b, &gt, &cfg, 10).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s[3].target, gt[4].bbox);
        assert!(s.iter().all(|x| x.input.spike_count() > 0));
        let a = ann_samples(&b.aps, &gt).unwrap();
        assert_eq!(a[1].target, gt[8].bbox);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at = ann_attention_samples(&b.aps, &gt, &cfg.attention, 0.0, &mut rng).unwrap();
        assert_eq!(at[0].input.shape.c, 2);
    }
}
