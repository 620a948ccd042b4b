//! Desk-scale benchmark: random moving-rectangle scenes, toy training of
//! the three networks and the six-column ablation on held-out scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{ann_train, AnnNetwork, AnnSpec};
use crate::dataset::{ann_attention_samples, ann_samples, simulate_scene, snn_samples};
use crate::error::{Error, Result};
use crate::eval::Ablation;
use crate::event_sim::{DavisBundle, SimConfig};
use crate::frame::Frame;
use crate::fusion::TrackEstimate;
use crate::optim::{AdamConfig, TrainConfig};
use crate::snn::{calibration_inputs, snn_train, RateTarget, SnnNetwork, SnnSpec, CALIBRATION_INPUTS};
use crate::synth::{SceneSampler, SynthSpec};
use crate::tracker::{run, run_ann_only, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Scene distribution; its frame count is derived from `aps_intervals`.
    pub scenes: SceneSampler,
    /// APS intervals per scene.
    pub aps_intervals: usize,
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Frame-network training images, each a snapshot of a fresh random
    /// scene.
    pub ann_images: usize,
    /// Fraction of attention training samples given the whole-frame prior.
    pub cold_start_rate: f64,
    pub snn_rates: RateTarget,
    pub snn_train: TrainConfig,
    pub ann_train: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            scenes: SceneSampler {
                distractors: 1,
                distractor_contrast: [0.5, 0.8],
                ..SceneSampler::default()
            },
            aps_intervals: 10,
            pipeline: PipelineConfig::for_frame_interval(sim.dt_f_ns),
            sim,
            train_scenes: 24,
            test_scenes: 6,
            ann_images: 2000,
            cold_start_rate: 0.1,
            snn_rates: RateTarget::default(),
            snn_train: TrainConfig {
                epochs: 12,
                ..TrainConfig::default()
            },
            ann_train: TrainConfig {
                epochs: 25,
                adam: AdamConfig {
                    lr: 3e-3,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
        }
    }
}

/// One simulated scene with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bundle: DavisBundle,
    /// Rendered frames at the sub-frame rate.
    pub frames: Vec<Frame>,
    pub gt: Vec<TrackEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub snn: SnnNetwork,
    /// Frame network with attention channels.
    pub ann_at: AnnNetwork,
    /// Frame network without attention.
    pub ann_nat: AnnNetwork,
}

/// Final-epoch training losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub snn: f64,
    pub ann_at: f64,
    pub ann_nat: f64,
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const TEST_STREAM: u64 = 0x7465_7374_0000_0000;
const IMAGE_STREAM: u64 = 0x696d_6167_6500_0000;

fn scene_seed(stream: u64, seed: u64, i: usize) -> u64 {
    stream ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.pipeline.validate(self.sim.dt_e_ns)?;
        if self.ann_images == 0 {
            return Err(Error::Config("ann_images must be positive".into()));
        }
        if self.aps_intervals == 0 || self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::Config(
                "benchmark needs scenes with at least one APS interval".into(),
            ));
        }
        Ok(())
    }

    pub fn scene_spec(&self, scene_seed: u64) -> SynthSpec {
        SceneSampler {
            frames: self.aps_intervals * self.sim.m as usize + 1,
            ..self.scenes.clone()
        }
        .sample(scene_seed)
    }

    pub fn scene(&self, scene_seed: u64) -> Result<Scene> {
        let sim = SimConfig {
            seed: scene_seed,
            ..self.sim
        };
        let (bundle, video) = simulate_scene(&self.scene_spec(scene_seed), &sim)?;
        Ok(Scene {
            bundle,
            frames: video.frames,
            gt: video.gt,
        })
    }

    pub fn train_scenes(&self, seed: u64) -> Result<Vec<Scene>> {
        (0..self.train_scenes)
            .map(|i| self.scene(scene_seed(TRAIN_STREAM, seed, i)))
            .collect()
    }

    /// Held-out scenes, drawn from a separate seed stream.
    pub fn test_scenes(&self, seed: u64) -> Result<Vec<Scene>> {
        (0..self.test_scenes)
            .map(|i| self.scene(scene_seed(TEST_STREAM, seed, i)))
            .collect()
    }

    pub fn snn_spec(&self) -> SnnSpec {
        let mut s = SnnSpec::desk_default();
        s.input = crate::layers::Shape3::new(2, self.scenes.height, self.scenes.width);
        s
    }

    pub fn ann_spec(&self, attention: bool) -> AnnSpec {
        let mut s = AnnSpec::desk_default(if attention { 2 } else { 1 });
        s.input.h = self.scenes.height;
        s.input.w = self.scenes.width;
        s
    }

    /// Snapshots of independent random scenes for frame-network training.
    pub fn ann_images(&self, seed: u64) -> Result<(Vec<Frame>, Vec<TrackEstimate>)> {
        let frames = self.aps_intervals * self.sim.m as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(IMAGE_STREAM, seed, 0));
        let mut images = Vec::with_capacity(self.ann_images);
        let mut gt = Vec::with_capacity(self.ann_images);
        for i in 0..self.ann_images {
            let spec = self.scene_spec(scene_seed(IMAGE_STREAM, seed, i + 1));
            let (mut f, mut g) = spec.render_frame(rng.random_range(0..frames))?;
            // distinct timestamps so each label is found by time
            f.t_ns = i as u64;
            g.t_ns = i as u64;
            images.push(f);
            gt.push(g);
        }
        Ok((images, gt))
    }

    /// Trains the spiking network on `scenes` and the frame networks on
    /// fresh snapshots.
    pub fn train(&self, scenes: &[Scene], seed: u64) -> Result<(Models, TrainSummary)> {
        self.validate()?;
        let snn_spec = self.snn_spec();
        let mut snn_data = Vec::new();
        for s in scenes {
            snn_data.extend(snn_samples(&s.bundle, &s.gt, &self.pipeline, snn_spec.time_steps)?);
        }
        let (images, labels) = self.ann_images(seed)?;
        let nat_data = ann_samples(&images, &labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let at_data = ann_attention_samples(
            &images,
            &labels,
            &self.pipeline.attention,
            self.cold_start_rate,
            &mut rng,
        )?;
        let with_seed = |c: &TrainConfig, k: u64| TrainConfig {
            seed: seed.wrapping_add(k),
            ..*c
        };
        let mut snn = SnnNetwork::init(&snn_spec, seed)?;
        snn.calibrate(&calibration_inputs(&snn_data, CALIBRATION_INPUTS), &self.snn_rates)?;
        let (snn, snn_hist) = snn_train(snn, &snn_data, &with_seed(&self.snn_train, 1))?;
        let nat = AnnNetwork::init(&self.ann_spec(false), seed.wrapping_add(2))?;
        let (ann_nat, nat_hist) = ann_train(nat, &nat_data, &with_seed(&self.ann_train, 3))?;
        let at = AnnNetwork::init(&self.ann_spec(true), seed.wrapping_add(4))?;
        let (ann_at, at_hist) = ann_train(at, &at_data, &with_seed(&self.ann_train, 5))?;
        let last = |h: &[f64]| h.last().copied().unwrap_or(f64::NAN);
        Ok((
            Models { snn, ann_at, ann_nat },
            TrainSummary {
                snn: last(&snn_hist),
                ann_at: last(&at_hist),
                ann_nat: last(&nat_hist),
            },
        ))
    }

    /// Runs the pipeline on each scene and pools the ablation series.
    pub fn evaluate(&self, models: &Models, scenes: &[Scene]) -> Result<Ablation> {
        let mut total = Ablation::default();
        for s in scenes {
            let out = run(&s.bundle, &models.snn, &models.ann_at, &self.pipeline)?;
            let nat = run_ann_only(&s.bundle, &models.ann_nat, &self.pipeline.attention)?;
            let a = Ablation::from_tracks(&out.fused, &out.ann, &out.snn, Some(&nat), &s.gt)?;
            total.merge(&a);
        }
        Ok(total)
    }
}
