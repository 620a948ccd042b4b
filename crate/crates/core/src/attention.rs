//! Attention feedback: a soft spatial mask around the most recent fused
//! estimate, multiplied into the frame and stacked as extra input channels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::fusion::{Source, TrackEstimate};
use crate::layers::{Shape3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Gaussian falloff outside the box, in pixels.
    pub sigma_px: f64,
    /// Std-dev of the label scale noise.
    pub alpha_sigma: f64,
    /// Std-dev of the label shift noise.
    pub beta_sigma: f64,
    /// Multiply the exterior Gaussian by `1 / (2 pi sqrt(sigma))`.
    pub gaussian_prefactor: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            sigma_px: 4.0,
            alpha_sigma: 0.1,
            beta_sigma: 0.1,
            gaussian_prefactor: false,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma_px)));
        }
        if !(self.alpha_sigma >= 0.0 && self.beta_sigma >= 0.0) {
            return Err(Error::Config("augmentation std-devs must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel attention weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// The estimate feeding the mask for a query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub estimate: TrackEstimate,
    /// No earlier estimate existed; `estimate` is the whole-frame fallback.
    pub cold_start: bool,
}

/// Latest entry of a time-sorted history strictly before `t_query`.
pub fn nearest_prior(t_query: u64, history: &[TrackEstimate]) -> Prior {
    let idx = history.partition_point(|e| e.t_ns < t_query);
    match idx.checked_sub(1) {
        Some(i) => Prior {
            estimate: history[i],
            cold_start: false,
        },
        None => Prior {
            estimate: TrackEstimate::new(BBox::full_frame(), t_query, Source::Fused),
            cold_start: true,
        },
    }
}

/// Mask with value 1 on pixels whose centers fall inside the box and a
/// Gaussian of the distance to the box center elsewhere.
///
/// A box that covers no pixel center (including a zero-area box) marks only
/// the pixel containing its center.
pub fn build_mask(bbox: &BBox, width: usize, height: usize, cfg: &AttentionConfig) -> Mask {
    let (wf, hf) = (width as f64, height as f64);
    let (cx, cy) = (bbox.x * wf, bbox.y * hf);
    let (hw, hh) = (bbox.w.max(0.0) * wf / 2.0, bbox.h.max(0.0) * hf / 2.0);
    let two_s2 = 2.0 * cfg.sigma_px * cfg.sigma_px;
    let scale = if cfg.gaussian_prefactor {
        1.0 / (2.0 * std::f64::consts::PI * cfg.sigma_px.sqrt())
    } else {
        1.0
    };
    let mut data = Vec::with_capacity(width * height);
    let mut inside_any = false;
    for j in 0..height {
        for i in 0..width {
            let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
            if (px - cx).abs() <= hw && (py - cy).abs() <= hh {
                inside_any = true;
                data.push(1.0);
            } else {
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                data.push((scale * (-d2 / two_s2).exp()).clamp(f64::MIN_POSITIVE, 1.0));
            }
        }
    }
    if !inside_any && cx >= 0.0 && cy >= 0.0 && cx < wf && cy < hf {
        data[cy as usize * width + cx as usize] = 1.0;
    }
    Mask { width, height, data }
}

/// Stacks `[X; X * M]`: the input channels followed by their masked copies.
pub fn apply_mask(x: &Tensor3, m: &Mask) -> Result<Tensor3> {
    if (x.shape.w, x.shape.h) != (m.width, m.height) {
        return Err(Error::dims(
            format!("{}x{}", m.width, m.height),
            format!("{}x{}", x.shape.w, x.shape.h),
        ));
    }
    let mut data = x.data.clone();
    for c in 0..x.shape.c {
        data.extend(x.channel(c).iter().zip(&m.data).map(|(v, w)| v * w));
    }
    Tensor3::new(Shape3::new(2 * x.shape.c, x.shape.h, x.shape.w), data)
}

/// `(1 + alpha) * (gt + beta)` with a scalar `alpha` and per-coordinate `beta`.
pub fn augment_label_with(gt: &BBox, alpha: f64, beta: [f64; 4]) -> BBox {
    let g = gt.to_array();
    BBox::from_array(std::array::from_fn(|i| (1.0 + alpha) * (g[i] + beta[i])))
}

/// Noisy stand-in for the fused feedback used when training with attention.
pub fn augment_label<R: Rng + ?Sized>(gt: &BBox, rng: &mut R, cfg: &AttentionConfig) -> BBox {
    let alpha = if cfg.alpha_sigma > 0.0 {
        Normal::new(0.0, cfg.alpha_sigma).expect("finite").sample(rng)
    } else {
        0.0
    };
    let beta: [f64; 4] = if cfg.beta_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.beta_sigma).expect("finite");
        std::array::from_fn(|_| n.sample(rng))
    } else {
        [0.0; 4]
    };
    augment_label_with(gt, alpha, beta)
}
