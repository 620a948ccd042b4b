//! The command-line entry points as library functions. Each writes only
//! under its output directory, records the effective configuration there
//! as `config.toml`, and returns the lines it reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ann::{ann_train, AnnNetwork};
use crate::config::RunConfig;
use crate::dataset::{ann_attention_samples, ann_samples, snn_samples};
use crate::error::{Error, Result};
use crate::eval::{ann_op_count, gt_at, snn_op_count, Ablation, OpReport, SuccessCurve, ABLATION_COLUMNS};
use crate::event_sim::{simulate, DavisBundle, SimConfig};
use crate::frame::Frame;
use crate::fusion::{Source, TrackEstimate};
use crate::interp::{default_kernel, interpolate_sequence, train_kernel_from, Triplet};
use crate::io;
use crate::snn::{calibration_inputs, encode_events, snn_train, SnnNetwork, SpikeTensor, CALIBRATION_INPUTS};
use crate::tracker::{run, run_ann_only, tick_schedule};

/// Report keys of the ablation columns, in [`ABLATION_COLUMNS`] order.
pub const COLUMN_KEYS: [&str; 6] = [
    "snn_origin",
    "snn_hybrid",
    "ann_nat",
    "ann_at",
    "ann_at_zoh",
    "hybrid_at",
];

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.txt";
pub const CURVE_FILE: &str = "success.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    Ann,
    Snn,
    Interp,
}

fn record_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    io::write_bytes(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())
}

/// Renders a synthetic video with ground truth into `out`.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let spec = match &cfg.sampler {
        Some(s) => s.sample(cfg.seed),
        None => cfg.synth.clone(),
    };
    let video = spec.render()?;
    io::write_video(out, &video.frames, &video.gt)?;
    record_config(out, cfg)?;
    Ok(vec![format!(
        "wrote {} frames of {}x{} to {}",
        video.frames.len(),
        spec.width,
        spec.height,
        out.display()
    )])
}

/// Interpolates the video in `video` and converts it into a bundle in `out`.
/// The sub-interval count follows from the interpolated frame spacing, so
/// the APS interval stays fixed. Ground truth, if present, is copied.
pub fn simulate_video(cfg: &RunConfig, video: &Path, out: &Path) -> Result<Vec<String>> {
    let (frames, gt) = io::read_video(video)?;
    let kernel = match &cfg.interp.kernel {
        Some(p) => io::read_kernel(p)?,
        None => default_kernel(cfg.interp.radius),
    };
    let frames = interpolate_sequence(&frames, cfg.interp.factor, &kernel)?;
    let sim = sim_for(&frames, &cfg.sim)?;
    let bundle = simulate(&frames, &sim)?;
    io::write_bundle(out, &bundle)?;
    if let Some(gt) = gt {
        io::write_trajectory(&out.join(io::GT_FILE), &gt)?;
    }
    record_config(out, cfg)?;
    Ok(vec![
        format!("interpolation factor {}, m = {}", cfg.interp.factor, sim.m),
        format!(
            "wrote {} APS frames and {} events to {}",
            bundle.aps.len(),
            bundle.dvs.len(),
            out.display()
        ),
    ])
}

fn sim_for(frames: &[Frame], base: &SimConfig) -> Result<SimConfig> {
    let spacing = match frames {
        [a, b, ..] => b.t_ns.saturating_sub(a.t_ns),
        _ => return Err(Error::InvalidInput("simulation needs at least 2 frames".into())),
    };
    if spacing == 0 || !base.dt_f_ns.is_multiple_of(spacing) {
        return Err(Error::Config(format!(
            "frame spacing {spacing} ns does not divide dt_f {} ns",
            base.dt_f_ns
        )));
    }
    let m = u32::try_from(base.dt_f_ns / spacing).map_err(|_| Error::Config("too many sub-intervals".into()))?;
    let sim = SimConfig { m, ..*base };
    sim.validate()?;
    Ok(sim)
}

fn read_gt(dir: &Path) -> Result<Vec<TrackEstimate>> {
    io::read_trajectory(&dir.join(io::GT_FILE))
}

fn finite_losses(losses: &[f64], what: &str) -> Result<()> {
    match losses.iter().position(|l| !l.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} loss in epoch {}", i + 1))),
        None => Ok(()),
    }
}

fn same_dims(dims: &mut Option<(usize, usize)>, got: (usize, usize), dir: &Path) -> Result<()> {
    match dims {
        Some(d) if *d != got => Err(Error::Format {
            path: dir.to_path_buf(),
            msg: format!("data is {}x{}, earlier data is {}x{}", got.0, got.1, d.0, d.1),
        }),
        _ => {
            *dims = Some(got);
            Ok(())
        }
    }
}

/// Trains one model on the directories in `data` and writes it to `out`.
///
/// Spiking networks read bundles with `gt.csv`; frame networks read the
/// frames and ground truth of video or bundle directories; interpolation
/// kernels fit every consecutive frame triplet of video directories.
pub fn train(cfg: &RunConfig, kind: TrainKind, data: &[PathBuf], out: &Path) -> Result<Vec<String>> {
    if data.is_empty() {
        return Err(Error::Config("no training data given".into()));
    }
    let mut dims = None;
    let lines = match kind {
        TrainKind::Snn => {
            let mut samples = Vec::new();
            for dir in data {
                let bundle = io::read_bundle(dir)?;
                same_dims(&mut dims, (bundle.width, bundle.height), dir)?;
                samples.extend(snn_samples(&bundle, &read_gt(dir)?, &cfg.pipeline, cfg.snn.time_steps)?);
            }
            let (w, h) = dims.expect("data is nonempty");
            let mut net = SnnNetwork::init(&cfg.snn.spec(w, h)?, cfg.seed)?;
            if cfg.train.epochs > 0 {
                net.calibrate(&calibration_inputs(&samples, CALIBRATION_INPUTS), &cfg.snn.rates)?;
            }
            let (net, losses) = snn_train(net, &samples, &cfg.train)?;
            finite_losses(&losses, "SNN")?;
            io::save_snn(&out.join("snn.ck"), &net)?;
            io::write_losses(&out.join("snn_loss.csv"), &losses)?;
            trained("spiking network", samples.len(), &losses)
        }
        TrainKind::Ann => {
            let (mut frames, mut gt) = (Vec::new(), Vec::new());
            for dir in data {
                let (f, g) = io::read_video(dir)?;
                let g = g.ok_or_else(|| Error::Format {
                    path: dir.join(io::GT_FILE),
                    msg: "ground truth missing".into(),
                })?;
                for mut frame in f {
                    same_dims(&mut dims, frame.dims(), dir)?;
                    // renumbered so frames from different directories never share a time
                    let t = frames.len() as u64;
                    gt.push(TrackEstimate::new(gt_at(&g, frame.t_ns)?, t, Source::Gt));
                    frame.t_ns = t;
                    frames.push(frame);
                }
            }
            let (w, h) = dims.expect("data is nonempty");
            let samples = if cfg.ann.attention {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let att = &cfg.pipeline.attention;
                ann_attention_samples(&frames, &gt, att, cfg.ann.cold_start_rate, &mut rng)?
            } else {
                ann_samples(&frames, &gt)?
            };
            let net = AnnNetwork::init(&cfg.ann.spec(w, h)?, cfg.seed)?;
            let (net, losses) = ann_train(net, &samples, &cfg.train)?;
            finite_losses(&losses, "ANN")?;
            io::save_ann(&out.join("ann.ck"), &net)?;
            io::write_losses(&out.join("ann_loss.csv"), &losses)?;
            trained("frame network", samples.len(), &losses)
        }
        TrainKind::Interp => {
            let mut triplets: Vec<Triplet> = Vec::new();
            for dir in data {
                let frames = io::read_frames(dir)?;
                for w in frames.windows(3) {
                    same_dims(&mut dims, w[0].dims(), dir)?;
                    triplets.push((w[0].clone(), w[1].clone(), w[2].clone()));
                }
            }
            let init = default_kernel(cfg.interp.radius);
            let (kernel, losses) = train_kernel_from(&triplets, init, cfg.interp.lr, cfg.interp.steps)?;
            finite_losses(&losses, "interpolation")?;
            io::write_kernel(&out.join("kernel.txt"), &kernel)?;
            io::write_losses(&out.join("interp_loss.csv"), &losses)?;
            let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
            vec![format!(
                "fitted interpolation kernel on {} triplets, mean L1 {} (initial {})",
                triplets.len(),
                best,
                losses[0]
            )]
        }
    };
    record_config(out, cfg)?;
    Ok(lines)
}

fn trained(what: &str, samples: usize, losses: &[f64]) -> Vec<String> {
    let last = losses.last().map_or("n/a".to_string(), |l| l.to_string());
    vec![format!("trained {what} on {samples} samples, final loss {last}")]
}

fn load_ann(path: &Path) -> Result<AnnNetwork> {
    match io::load_checkpoint(path)? {
        io::Checkpoint::Ann(n) => Ok(n),
        io::Checkpoint::Snn(_) => Err(Error::Format {
            path: path.to_path_buf(),
            msg: "expected a frame network checkpoint".into(),
        }),
    }
}

fn load_snn(path: &Path) -> Result<SnnNetwork> {
    match io::load_checkpoint(path)? {
        io::Checkpoint::Snn(n) => Ok(n),
        io::Checkpoint::Ann(_) => Err(Error::Format {
            path: path.to_path_buf(),
            msg: "expected a spiking network checkpoint".into(),
        }),
    }
}

/// Checkpoints used by `track` and for operation counts in `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoints {
    pub snn: PathBuf,
    /// Frame network fused with the spiking one.
    pub ann: PathBuf,
    /// Optional frame network run on its own, without attention.
    pub ann_nat: Option<PathBuf>,
}

/// Runs the hybrid tracker over a bundle and writes `fused.csv`, `ann.csv`,
/// `snn.csv` and, with a second frame network, `ann_nat.csv`.
pub fn track(cfg: &RunConfig, bundle: &Path, ck: &Checkpoints, out: &Path) -> Result<Vec<String>> {
    let bundle = io::read_bundle(bundle)?;
    let snn = load_snn(&ck.snn)?;
    let ann = load_ann(&ck.ann)?;
    let res = run(&bundle, &snn, &ann, &cfg.pipeline)?;
    io::write_trajectory(&out.join("fused.csv"), &res.fused)?;
    io::write_trajectory(&out.join("ann.csv"), &res.ann)?;
    io::write_trajectory(&out.join("snn.csv"), &res.snn)?;
    let mut lines = vec![format!(
        "{} fused, {} frame and {} spiking estimates; {} events before the first frame ignored",
        res.fused.len(),
        res.ann.len(),
        res.snn.len(),
        res.dropped_events
    )];
    if let Some(p) = &ck.ann_nat {
        let nat = run_ann_only(&bundle, &load_ann(p)?, &cfg.pipeline.attention)?;
        io::write_trajectory(&out.join("ann_nat.csv"), &nat)?;
        lines.push(format!(
            "{} estimates from the frame network without attention",
            nat.len()
        ));
    }
    record_config(out, cfg)?;
    Ok(lines)
}

/// Trajectory files compared by `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs {
    pub gt: PathBuf,
    pub fused: PathBuf,
    pub ann: PathBuf,
    pub snn: PathBuf,
    pub ann_nat: Option<PathBuf>,
    /// Bundle and networks for operation counts.
    pub ops: Option<(PathBuf, Checkpoints)>,
}

/// Spiking inputs at every pipeline tick of `bundle`.
pub fn snn_inputs(bundle: &DavisBundle, cfg: &RunConfig, steps: usize) -> Result<Vec<SpikeTensor>> {
    let enc = cfg.pipeline.encoding(bundle.width, bundle.height, steps)?;
    Ok(tick_schedule(bundle, &cfg.pipeline)?
        .into_iter()
        .map(|t| {
            let start = t - cfg.pipeline.snn_window_ns;
            encode_events(bundle.events_in(start, t), &enc, start)
        })
        .collect())
}

fn push_ops(s: &mut String, prefix: &str, r: &OpReport) {
    for l in &r.layers {
        let name = l.label.split_whitespace().next().unwrap_or("layer");
        let _ = writeln!(s, "ops.{prefix}.{name}.layer: {}", l.label);
        let _ = writeln!(s, "ops.{prefix}.{name}.synaptic_additions: {}", l.synaptic.additions);
        let _ = writeln!(
            s,
            "ops.{prefix}.{name}.synaptic_multiplications: {}",
            l.synaptic.multiplications
        );
        let _ = writeln!(
            s,
            "ops.{prefix}.{name}.neuron_multiplications: {}",
            l.neuron.multiplications
        );
    }
    let t = r.total();
    let _ = writeln!(s, "ops.{prefix}.total_additions: {}", t.additions);
    let _ = writeln!(s, "ops.{prefix}.total_multiplications: {}", t.multiplications);
}

/// Scores the trajectories and writes `report.txt` (key: value lines) and
/// `success.csv` (one curve per column).
pub fn eval(cfg: &RunConfig, inputs: &EvalInputs, out: &Path) -> Result<Vec<String>> {
    let gt = io::read_trajectory(&inputs.gt)?;
    let fused = io::read_trajectory(&inputs.fused)?;
    let ann = io::read_trajectory(&inputs.ann)?;
    let snn = io::read_trajectory(&inputs.snn)?;
    let nat = inputs.ann_nat.as_deref().map(io::read_trajectory).transpose()?;
    let ablation = Ablation::from_tracks(&fused, &ann, &snn, nat.as_deref(), &gt)?;
    let scores = ablation.scores(cfg.eval.success_threshold, cfg.eval.failure_threshold);

    let mut report = String::new();
    let _ = writeln!(report, "success_threshold: {}", cfg.eval.success_threshold);
    let _ = writeln!(report, "failure_threshold: {}", cfg.eval.failure_threshold);
    for ((key, name), (score, series)) in COLUMN_KEYS
        .iter()
        .zip(ABLATION_COLUMNS)
        .zip(scores.iter().zip(&ablation.series))
    {
        let _ = writeln!(report, "{key}.column: {name}");
        match score {
            Some(s) => {
                let _ = writeln!(report, "{key}.miou: {}", s.miou);
                let _ = writeln!(report, "{key}.auc: {}", s.auc);
                let _ = writeln!(report, "{key}.curve_area: {}", SuccessCurve::from_ious(series).area());
                let _ = writeln!(report, "{key}.rb: {}", s.rb);
                let _ = writeln!(report, "{key}.samples: {}", s.samples);
            }
            None => {
                let _ = writeln!(report, "{key}.samples: 0");
            }
        }
    }
    if let Some((bundle, ck)) = &inputs.ops {
        let bundle = io::read_bundle(bundle)?;
        let snn_net = load_snn(&ck.snn)?;
        let spikes = snn_inputs(&bundle, cfg, snn_net.time_steps)?;
        push_ops(&mut report, "ann", &ann_op_count(&load_ann(&ck.ann)?));
        let r = snn_op_count(&snn_net, &spikes)?;
        push_ops(&mut report, "snn", &r);
        let syn = r.spiking_synaptic();
        let _ = writeln!(report, "ops.snn.spiking_synaptic_additions: {}", syn.additions);
        let _ = writeln!(
            report,
            "ops.snn.spiking_synaptic_multiplications: {}",
            syn.multiplications
        );
    }
    if report.contains("NaN") {
        return Err(Error::NonFinite("metrics report".into()));
    }

    let curves: Vec<Option<SuccessCurve>> = ablation
        .series
        .iter()
        .map(|s| (!s.is_empty()).then(|| SuccessCurve::from_ious(s)))
        .collect();
    let mut csv = format!("threshold,{}\n", COLUMN_KEYS.join(","));
    for (i, t) in SuccessCurve::from_ious(&[]).thresholds.iter().enumerate() {
        let cells: Vec<String> = curves
            .iter()
            .map(|c| c.as_ref().map_or(String::new(), |c| c.rates[i].to_string()))
            .collect();
        let _ = writeln!(csv, "{t},{}", cells.join(","));
    }
    io::write_bytes(&out.join(REPORT_FILE), report.as_bytes())?;
    io::write_bytes(&out.join(CURVE_FILE), csv.as_bytes())?;
    record_config(out, cfg)?;
    Ok(report.lines().map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.synth.frames = 17;
        c.train.epochs = 1;
        c
    }

    #[test]
    fn synth_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth(&cfg(), a.path()).unwrap();
        synth(&cfg(), b.path()).unwrap();
        for f in ["gt.csv", "timestamps.txt", "frames/000016.pgm", CONFIG_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn interpolation_factor_sets_m() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.synth.frame_interval_ns = 25_000_000;
        synth(&c, &dir.path().join("v")).unwrap();
        c.interp.factor = 1;
        let lines = simulate_video(&c, &dir.path().join("v"), &dir.path().join("b")).unwrap();
        assert!(lines[0].contains("m = 8"), "{lines:?}");
        let b = io::read_bundle(&dir.path().join("b")).unwrap();
        assert_eq!(b.aps.len(), 5);
        c.interp.factor = 0;
        c.synth.frame_interval_ns = 30_000_000;
        synth(&c, &dir.path().join("w")).unwrap();
        let err = simulate_video(&c, &dir.path().join("w"), &dir.path().join("c")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        synth(&c, &dir.path().join("v")).unwrap();
        c.train.epochs = 0;
        train(&c, TrainKind::Ann, &[dir.path().join("v")], &dir.path().join("o")).unwrap();
        let io::Checkpoint::Ann(net) = io::load_checkpoint(&dir.path().join("o/ann.ck")).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(net, AnnNetwork::init(&c.ann.spec(32, 32).unwrap(), c.seed).unwrap());
    }

    #[test]
    fn corrupt_data_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        synth(&cfg(), &dir.path().join("v")).unwrap();
        std::fs::write(dir.path().join("v/frames/000003.pgm"), b"P5 junk").unwrap();
        let err = train(&cfg(), TrainKind::Ann, &[dir.path().join("v")], &dir.path().join("o")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("000003.pgm"), "{err}");
    }
}
