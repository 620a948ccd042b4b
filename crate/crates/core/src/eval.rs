//! Tracking metrics, simulator fidelity metrics and operation accounting.

use crate::ann::AnnNetwork;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::fusion::TrackEstimate;
use crate::layers::LayerOp;
use crate::snn::{LayerActivity, SnnNetwork, SpikeTensor, OUTPUTS};

/// Number of points on the success-curve threshold grid.
pub const CURVE_POINTS: usize = 101;

/// Intersection over union of two center-format boxes; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Ground truth at `t_ns`, linearly interpolated between labels.
pub fn gt_at(gt: &[TrackEstimate], t_ns: u64) -> Result<BBox> {
    let (Some(first), Some(last)) = (gt.first(), gt.last()) else {
        return Err(Error::InvalidInput("ground truth is empty".into()));
    };
    if t_ns < first.t_ns || t_ns > last.t_ns {
        return Err(Error::InvalidInput(format!(
            "t={t_ns} outside ground truth range [{}, {}]",
            first.t_ns, last.t_ns
        )));
    }
    let i = gt.partition_point(|g| g.t_ns < t_ns);
    let hi = &gt[i];
    if hi.t_ns == t_ns || i == 0 {
        return Ok(hi.bbox);
    }
    let lo = &gt[i - 1];
    let s = (t_ns - lo.t_ns) as f64 / (hi.t_ns - lo.t_ns) as f64;
    Ok(lo.bbox.lerp(&hi.bbox, s))
}

/// IOU of each estimate against the ground truth at its timestamp.
pub fn iou_series(traj: &[TrackEstimate], gt: &[TrackEstimate]) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    traj.iter().map(|e| Ok(iou(&e.bbox, &gt_at(gt, e.t_ns)?))).collect()
}

pub fn miou(traj: &[TrackEstimate], gt: &[TrackEstimate]) -> Result<f64> {
    let s = iou_series(traj, gt)?;
    Ok(mean(&s))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fraction of IOUs strictly above each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

impl SuccessCurve {
    pub fn from_ious(ious: &[f64]) -> Self {
        let thresholds: Vec<f64> = (0..CURVE_POINTS)
            .map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
            .collect();
        let rates = thresholds.iter().map(|&t| success_rate(ious, t)).collect();
        Self { thresholds, rates }
    }

    /// Mean success rate over the grid.
    pub fn area(&self) -> f64 {
        mean(&self.rates)
    }
}

pub fn success_rate(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

/// Success curve and the success rate at `threshold`.
pub fn success_auc(traj: &[TrackEstimate], gt: &[TrackEstimate], threshold: f64) -> Result<(SuccessCurve, f64)> {
    let s = iou_series(traj, gt)?;
    Ok((SuccessCurve::from_ious(&s), success_rate(&s, threshold)))
}

/// Fraction of samples with IOU below `fail_threshold`; lower is better.
pub fn robustness(traj: &[TrackEstimate], gt: &[TrackEstimate], fail_threshold: f64) -> Result<f64> {
    let s = iou_series(traj, gt)?;
    Ok(failure_rate(&s, fail_threshold))
}

pub fn failure_rate(ious: &[f64], fail_threshold: f64) -> f64 {
    ious.iter().filter(|&&v| v < fail_threshold).count() as f64 / ious.len().max(1) as f64
}

/// Summary of one trajectory against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackScore {
    pub miou: f64,
    pub auc: f64,
    pub rb: f64,
    pub samples: usize,
}

pub fn score(
    traj: &[TrackEstimate],
    gt: &[TrackEstimate],
    auc_threshold: f64,
    fail_threshold: f64,
) -> Result<TrackScore> {
    let s = iou_series(traj, gt)?;
    Ok(TrackScore {
        miou: mean(&s),
        auc: success_rate(&s, auc_threshold),
        rb: failure_rate(&s, fail_threshold),
        samples: s.len(),
    })
}

/// Scores a precomputed IOU series.
pub fn score_ious(ious: &[f64], auc_threshold: f64, fail_threshold: f64) -> Option<TrackScore> {
    (!ious.is_empty()).then(|| TrackScore {
        miou: mean(ious),
        auc: success_rate(ious, auc_threshold),
        rb: failure_rate(ious, fail_threshold),
        samples: ious.len(),
    })
}

/// Column names of the ablation report, in order.
pub const ABLATION_COLUMNS: [&str; 6] = [
    "SNN-origin",
    "SNN-hybrid",
    "ANN-NAT",
    "ANN-AT",
    "ANN-AT (zero-order hold)",
    "Hybrid-AT",
];

/// Per-column IOU series; an empty series means the column is unavailable.
///
/// The last two columns are evaluated at inter-frame times only: fused
/// timestamps that do not coincide with a frame output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ablation {
    pub series: [Vec<f64>; 6],
}

impl Ablation {
    pub fn from_tracks(
        fused: &[TrackEstimate],
        ann: &[TrackEstimate],
        snn: &[TrackEstimate],
        ann_nat: Option<&[TrackEstimate]>,
        gt: &[TrackEstimate],
    ) -> Result<Self> {
        let opt = |t: &[TrackEstimate]| -> Result<Vec<f64>> {
            if t.is_empty() {
                Ok(Vec::new())
            } else {
                iou_series(t, gt)
            }
        };
        let between: Vec<TrackEstimate> = fused
            .iter()
            .filter(|f| ann.binary_search_by_key(&f.t_ns, |a| a.t_ns).is_err())
            .copied()
            .collect();
        let held = if ann.is_empty() || between.is_empty() {
            Vec::new()
        } else {
            let q: Vec<u64> = between.iter().map(|f| f.t_ns).collect();
            crate::tracker::zero_order_hold(ann, &q)?.0
        };
        Ok(Self {
            series: [
                opt(snn)?,
                opt(fused)?,
                opt(ann_nat.unwrap_or(&[]))?,
                opt(ann)?,
                opt(&held)?,
                opt(&between)?,
            ],
        })
    }

    pub fn merge(&mut self, other: &Ablation) {
        for (a, b) in self.series.iter_mut().zip(&other.series) {
            a.extend(b);
        }
    }

    pub fn scores(&self, auc_threshold: f64, fail_threshold: f64) -> [Option<TrackScore>; 6] {
        std::array::from_fn(|i| score_ious(&self.series[i], auc_threshold, fail_threshold))
    }
}

/// RMSE over all pixels of all frames and PSNR in dB with peak value 1.
/// Identical inputs give `(0, inf)`.
pub fn rmse_psnr(sim: &[Frame], reference: &[Frame]) -> Result<(f64, f64)> {
    if sim.len() != reference.len() {
        return Err(Error::dims(
            format!("{} frames", reference.len()),
            format!("{} frames", sim.len()),
        ));
    }
    if sim.is_empty() {
        return Err(Error::InvalidInput("no frames to compare".into()));
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    for (a, b) in sim.iter().zip(reference) {
        a.ensure_same_dims(b)?;
        sq += a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        n += a.data().len();
    }
    let rmse = (sq / n as f64).sqrt();
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (1.0 / rmse).log10()
    };
    Ok((rmse, psnr))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpCount {
    pub additions: f64,
    pub multiplications: f64,
}

impl OpCount {
    pub fn new(additions: f64, multiplications: f64) -> Self {
        Self {
            additions,
            multiplications,
        }
    }
}

impl std::ops::Add for OpCount {
    type Output = OpCount;

    fn add(self, o: OpCount) -> OpCount {
        OpCount::new(self.additions + o.additions, self.multiplications + o.multiplications)
    }
}

impl std::ops::AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

/// Operation counts of one layer. `synaptic` covers weighted inputs;
/// `neuron` covers per-neuron membrane decay.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOps {
    pub label: String,
    pub spiking: bool,
    pub synaptic: OpCount,
    pub neuron: OpCount,
}

impl LayerOps {
    pub fn total(&self) -> OpCount {
        self.synaptic + self.neuron
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpReport {
    pub layers: Vec<LayerOps>,
}

impl OpReport {
    pub fn total(&self) -> OpCount {
        self.layers.iter().fold(OpCount::default(), |acc, l| acc + l.total())
    }

    /// Synaptic counts summed over spiking layers.
    pub fn spiking_synaptic(&self) -> OpCount {
        self.layers
            .iter()
            .filter(|l| l.spiking)
            .fold(OpCount::default(), |acc, l| acc + l.synaptic)
    }
}

fn dense_cost(op: &LayerOp) -> u64 {
    match op {
        LayerOp::Conv(c) => c.tap_count(),
        LayerOp::Fc(d) => (d.inputs * d.outputs) as u64,
        LayerOp::Pool(_) => 0,
    }
}

/// One add and one multiply per weight application; the bias takes the
/// place of the first accumulation.
pub fn ann_op_count(net: &AnnNetwork) -> OpReport {
    let layers = net
        .layer_specs()
        .iter()
        .zip(net.layer_ops())
        .enumerate()
        .map(|(i, (spec, op))| {
            let n = dense_cost(&op) as f64;
            LayerOps {
                label: format!("L{} {}", i + 1, spec),
                spiking: false,
                synaptic: OpCount::new(n, n),
                neuron: OpCount::default(),
            }
        })
        .collect();
    OpReport { layers }
}

/// Event-driven accounting averaged over `inputs`: spiking layers add one
/// weight per active synapse and multiply once per neuron and step for the
/// decay; the readout is a dense layer.
pub fn snn_op_count(net: &SnnNetwork, inputs: &[SpikeTensor]) -> Result<OpReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no inputs to count operations on".into()));
    }
    let acts: Vec<Vec<LayerActivity>> = inputs
        .iter()
        .map(|x| net.forward_with_activity(x).map(|(_, a)| a))
        .collect::<Result<_>>()?;
    let k = inputs.len() as f64;
    let mut layers: Vec<LayerOps> = acts[0]
        .iter()
        .map(|a| LayerOps {
            label: a.label.clone(),
            spiking: a.spiking,
            synaptic: OpCount::default(),
            neuron: OpCount::default(),
        })
        .collect();
    for run in &acts {
        for (l, a) in layers.iter_mut().zip(run) {
            l.synaptic.additions += a.synaptic_updates as f64 / k;
            l.neuron.multiplications += a.neuron_steps as f64 / k;
        }
    }
    let n = (net.readout_inputs() * OUTPUTS) as f64;
    layers.push(LayerOps {
        label: format!("L{} FC{} (readout)", layers.len() + 1, OUTPUTS),
        spiking: false,
        synaptic: OpCount::new(n, n),
        neuron: OpCount::default(),
    });
    Ok(OpReport { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Source;

    fn est(t: u64, b: BBox) -> TrackEstimate {
        TrackEstimate::new(b, t, Source::Ann)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        let b = BBox::new(1.0, 0.5, 1.0, 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&BBox::default(), &BBox::default()), 0.0);
    }

    #[test]
    fn gt_interpolation() {
        let gt = [
            est(0, BBox::new(0.0, 0.0, 0.2, 0.2)),
            est(10, BBox::new(1.0, 0.5, 0.2, 0.2)),
        ];
        let g = gt_at(&gt, 4).unwrap();
        assert!((g.x - 0.4).abs() < 1e-12 && (g.y - 0.2).abs() < 1e-12);
        assert_eq!(gt_at(&gt, 10).unwrap(), gt[1].bbox);
        assert!(gt_at(&gt, 11).is_err());
    }

    #[test]
    fn miou_examples() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        let gt = [est(0, a), est(1, a)];
        assert_eq!(miou(&gt, &gt).unwrap(), 1.0);
        let far = [est(0, BBox::new(9.0, 9.0, 1.0, 1.0))];
        assert_eq!(miou(&far, &gt).unwrap(), 0.0);
        let mix = [est(0, a), est(1, BBox::new(1.0, 0.5, 1.0, 1.0))];
        assert!((miou(&mix, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(miou(&[], &gt).is_err());
    }

    #[test]
    fn success_examples() {
        let c = SuccessCurve::from_ious(&[1.0; 5]);
        assert_eq!(c.thresholds.len(), 101);
        assert!(c.rates[..100].iter().all(|&r| r == 1.0));
        assert_eq!(success_rate(&[0.6; 3], 0.5), 1.0);
        assert_eq!(success_rate(&[0.6; 3], 0.7), 0.0);
        assert!((success_rate(&[0.2, 0.6, 0.8], 0.5) - 2.0 / 3.0).abs() < 1e-12);
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        let gt = [est(0, a)];
        let (curve, s) = success_auc(&gt, &gt, 0.5).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(curve.rates[50], 1.0);
    }

    #[test]
    fn robustness_examples() {
        assert_eq!(failure_rate(&[1.0; 4], 0.1), 0.0);
        assert_eq!(failure_rate(&[0.0; 4], 0.1), 1.0);
        assert_eq!(failure_rate(&[0.05, 0.5, 0.6, 0.9], 0.1), 0.25);
    }

    #[test]
    fn ablation_columns() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let gt = [est(0, b), est(100, b)];
        let ann = [est(0, b), est(100, BBox::new(0.6, 0.5, 0.2, 0.2))];
        let fused = [
            TrackEstimate::new(b, 50, Source::Fused),
            TrackEstimate::new(b, 100, Source::Fused),
        ];
        let a = Ablation::from_tracks(&fused, &ann, &fused, None, &gt).unwrap();
        assert!(a.series[2].is_empty());
        assert_eq!(a.series[3].len(), 2);
        assert_eq!(a.series[4], vec![1.0]);
        assert_eq!(a.series[5], vec![1.0]);
        let s = a.scores(0.5, 0.1);
        assert!(s[2].is_none());
        assert_eq!(s[0].unwrap().miou, 1.0);
        let mut m = a.clone();
        m.merge(&a);
        assert_eq!(m.series[3].len(), 4);
    }

    #[test]
    fn rmse_psnr_examples() {
        let a = Frame::filled(3, 2, 0.5, 0).unwrap();
        let (r, p) = rmse_psnr(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!(r, 0.0);
        assert!(p.is_infinite());
        let b = Frame::filled(3, 2, 0.6, 0).unwrap();
        let (r, p) = rmse_psnr(&[b], std::slice::from_ref(&a)).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        assert!((p - 20.0).abs() < 1e-9);
        assert!(rmse_psnr(&[], &[a]).is_err());
    }

    #[test]
    fn rmse_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mk =
            |rng: &mut rand_chacha::ChaCha8Rng| Frame::from_fn(5, 4, 0, |_, _| rng.random_range(0.0..1.0)).unwrap();
        let (a, b, c, d) = (mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let mut s = 0.0f64;
        for (f, g) in [(&a, &c), (&b, &d)] {
            for y in 0..4 {
                for x in 0..5 {
                    s += (f.get(x, y) - g.get(x, y)).powi(2);
                }
            }
        }
        let want = (s / 40.0).sqrt();
        let (r, _) = rmse_psnr(&[a, b], &[c, d]).unwrap();
        assert!((r - want).abs() < 1e-12);
    }
}
