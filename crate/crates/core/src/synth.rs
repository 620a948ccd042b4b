//! Synthetic moving-rectangle videos with ground-truth boxes, standing in for
//! real annotated footage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::fusion::{Source, TrackEstimate, Trajectory};

/// A rectangle drawn beneath the tracked object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distractor {
    pub start: [f64; 2],
    pub size: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    pub intensity: f64,
}

/// Scene parameters. Positions and sizes are in pixels; velocity is pixels
/// per rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Rendered frames, spaced `frame_interval_ns` apart.
    pub frames: usize,
    pub frame_interval_ns: u64,
    /// Object extent `[w, h]`.
    pub size: [f64; 2],
    /// Top-left corner at frame 0.
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub background: f64,
    pub foreground: f64,
    /// Reflect off the image borders instead of leaving the frame.
    pub bounce: bool,
    /// Untracked rectangles, drawn before the object.
    pub distractors: Vec<Distractor>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            frames: 81,
            frame_interval_ns: 12_500_000,
            size: [8.0, 8.0],
            start: [4.0, 12.0],
            velocity: [0.5, 0.25],
            background: 0.2,
            foreground: 0.8,
            bounce: true,
            distractors: Vec::new(),
        }
    }
}

/// Distribution of random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSampler {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Upper bound on the object's displacement per frame, pixels.
    pub speed: f64,
    /// Static rectangles per scene.
    pub distractors: usize,
    /// Distractor contrast range as a fraction of the object's contrast.
    pub distractor_contrast: [f64; 2],
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            frames: 81,
            speed: 1.0,
            distractors: 0,
            distractor_contrast: [0.4, 0.6],
        }
    }
}

impl SceneSampler {
    /// Size, start, speed, direction and contrasts drawn from `seed`.
    pub fn sample(&self, seed: u64) -> SynthSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (wf, hf) = (self.width as f64, self.height as f64);
        let rect = |rng: &mut ChaCha8Rng| {
            let size = [rng.random_range(0.18..0.32) * wf, rng.random_range(0.18..0.32) * hf];
            let start = [rng.random_range(0.0..wf - size[0]), rng.random_range(0.0..hf - size[1])];
            (size, start)
        };
        let (size, start) = rect(&mut rng);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.4..1.0) * self.speed;
        let (lo, hi) = (rng.random_range(0.05..0.35), rng.random_range(0.65..0.95));
        let (background, foreground) = if rng.random_bool(0.5) { (lo, hi) } else { (hi, lo) };
        let [c0, c1] = self.distractor_contrast;
        let distractors = (0..self.distractors)
            .map(|_| {
                let (size, start) = rect(&mut rng);
                let c = if c1 > c0 { rng.random_range(c0..c1) } else { c0 };
                Distractor {
                    start,
                    size,
                    velocity: [0.0, 0.0],
                    intensity: (background + c * (foreground - background)).clamp(0.0, 1.0),
                }
            })
            .collect();
        SynthSpec {
            width: self.width,
            height: self.height,
            frames: self.frames,
            size,
            start,
            velocity: [v * angle.cos(), v * angle.sin()],
            background,
            foreground,
            distractors,
            ..SynthSpec::default()
        }
    }
}

/// Rendered frames and the box at each frame time.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub frames: Vec<Frame>,
    pub gt: Trajectory,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 || self.frame_interval_ns == 0 {
            return Err(Error::Config(
                "synth dimensions, frame count and interval must be > 0".into(),
            ));
        }
        let fits = self.size[0] > 0.0
            && self.size[1] > 0.0
            && self.size[0] <= self.width as f64
            && self.size[1] <= self.height as f64;
        if !fits {
            return Err(Error::Config(format!(
                "object size {:?} does not fit the image",
                self.size
            )));
        }
        for d in &self.distractors {
            let ok = d.size.iter().all(|&v| v > 0.0)
                && d.start.iter().chain(&d.velocity).all(|v| v.is_finite())
                && (0.0..=1.0).contains(&d.intensity);
            if !ok {
                return Err(Error::Config(format!("invalid distractor {d:?}")));
            }
        }
        for v in [self.background, self.foreground] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("intensity {v} outside [0, 1]")));
            }
        }
        if !self.start.iter().chain(&self.velocity).all(|v| v.is_finite()) {
            return Err(Error::Config("start and velocity must be finite".into()));
        }
        Ok(())
    }

    /// Top-left corner at frame `k`.
    pub fn position(&self, k: usize) -> [f64; 2] {
        let span = [self.width as f64 - self.size[0], self.height as f64 - self.size[1]];
        std::array::from_fn(|i| {
            let q = self.start[i] + self.velocity[i] * k as f64;
            if self.bounce {
                reflect(q, span[i])
            } else {
                q
            }
        })
    }

    /// Normalized ground-truth box at frame `k`.
    pub fn bbox(&self, k: usize) -> BBox {
        let [x0, y0] = self.position(k);
        let (wf, hf) = (self.width as f64, self.height as f64);
        BBox::new(
            (x0 + self.size[0] / 2.0) / wf,
            (y0 + self.size[1] / 2.0) / hf,
            self.size[0] / wf,
            self.size[1] / hf,
        )
    }

    pub fn render(&self) -> Result<SynthVideo> {
        self.validate()?;
        let mut frames = Vec::with_capacity(self.frames);
        let mut gt = Vec::with_capacity(self.frames);
        for k in 0..self.frames {
            let (f, b) = self.draw(k)?;
            frames.push(f);
            gt.push(b);
        }
        Ok(SynthVideo { frames, gt })
    }

    /// Frame `k` alone, with its ground truth.
    pub fn render_frame(&self, k: usize) -> Result<(Frame, TrackEstimate)> {
        self.validate()?;
        self.draw(k)
    }

    fn draw(&self, k: usize) -> Result<(Frame, TrackEstimate)> {
        {
            let t = k as u64 * self.frame_interval_ns;
            let [x0, y0] = self.position(k);
            let (x1, y1) = (x0 + self.size[0], y0 + self.size[1]);
            let rects: Vec<([f64; 4], f64)> = self
                .distractors
                .iter()
                .map(|d| {
                    let p = [
                        d.start[0] + d.velocity[0] * k as f64,
                        d.start[1] + d.velocity[1] * k as f64,
                    ];
                    ([p[0], p[1], p[0] + d.size[0], p[1] + d.size[1]], d.intensity)
                })
                .chain(std::iter::once(([x0, y0, x1, y1], self.foreground)))
                .collect();
            let frame = Frame::from_fn(self.width, self.height, t, |i, j| {
                let (i, j) = (i as f64, j as f64);
                rects.iter().fold(self.background, |v, (r, c)| {
                    let cover = overlap(i, i + 1.0, r[0], r[2]) * overlap(j, j + 1.0, r[1], r[3]);
                    v + (c - v) * cover
                })
            })?;
            Ok((frame, TrackEstimate::new(self.bbox(k), t, Source::Gt)))
        }
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Folds `q` into `[0, span]` as a ball bouncing between the ends.
fn reflect(q: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let r = q.rem_euclid(2.0 * span);
    if r > span {
        2.0 * span - r
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_square_has_constant_gt() {
        let spec = SynthSpec {
            velocity: [0.0, 0.0],
            frames: 5,
            ..SynthSpec::default()
        };
        let v = spec.render().unwrap();
        assert!(v.gt.windows(2).all(|w| w[0].bbox == w[1].bbox));
        assert!(v.frames.windows(2).all(|w| w[0].data() == w[1].data()));
    }

    #[test]
    fn constant_velocity_gives_arithmetic_centers() {
        let spec = SynthSpec {
            velocity: [0.5, -0.25],
            start: [2.0, 20.0],
            frames: 10,
            ..SynthSpec::default()
        };
        let v = spec.render().unwrap();
        for w in v.gt.windows(3) {
            let d1 = w[1].bbox.x - w[0].bbox.x;
            let d2 = w[2].bbox.x - w[1].bbox.x;
            assert!((d1 - 0.5 / 32.0).abs() < 1e-12 && (d1 - d2).abs() < 1e-12);
            assert!((w[2].bbox.y - 2.0 * w[1].bbox.y + w[0].bbox.y).abs() < 1e-12);
        }
        assert_eq!(v.frames[3].t_ns, 3 * spec.frame_interval_ns);
        let (f, g) = spec.render_frame(7).unwrap();
        assert_eq!((&f, g), (&v.frames[7], v.gt[7]));
    }

    #[test]
    fn rendering_conserves_object_mass() {
        let spec = SynthSpec {
            start: [3.3, 7.6],
            size: [5.5, 4.25],
            background: 0.0,
            foreground: 1.0,
            frames: 1,
            ..SynthSpec::default()
        };
        let f = &spec.render().unwrap().frames[0];
        let mass: f64 = f.data().iter().sum();
        assert!((mass - 5.5 * 4.25).abs() < 1e-9);
    }

    #[test]
    fn bounce_stays_inside() {
        let spec = SynthSpec {
            velocity: [3.7, -2.9],
            frames: 200,
            ..SynthSpec::default()
        };
        for k in 0..spec.frames {
            let [x, y] = spec.position(k);
            assert!((0.0..=24.0).contains(&x) && (0.0..=24.0).contains(&y));
        }
    }

    #[test]
    fn random_scenes_are_seeded() {
        let sampler = SceneSampler {
            frames: 9,
            distractors: 2,
            ..SceneSampler::default()
        };
        let a = sampler.sample(4);
        assert_eq!(a, sampler.sample(4));
        assert_ne!(a, sampler.sample(5));
        assert_eq!(a.distractors.len(), 2);
        a.validate().unwrap();
    }

    #[test]
    fn object_occludes_distractor() {
        let spec = SynthSpec {
            velocity: [0.0, 0.0],
            start: [0.0, 0.0],
            size: [4.0, 4.0],
            background: 0.0,
            foreground: 1.0,
            frames: 1,
            distractors: vec![Distractor {
                start: [2.0, 0.0],
                size: [4.0, 4.0],
                velocity: [0.0, 0.0],
                intensity: 0.5,
            }],
            ..SynthSpec::default()
        };
        let f = &spec.render().unwrap().frames[0];
        assert_eq!(f.get(3, 1), 1.0);
        assert_eq!(f.get(5, 1), 0.5);
        assert_eq!(f.get(7, 1), 0.0);
    }
}
