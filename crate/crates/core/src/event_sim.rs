//! Frame-to-event conversion producing a simulated DAVIS stream.
//!
//! Each pixel keeps a brightness accumulator. Per sub-interval the change
//! between consecutive frames is added, `floor(|acc| / theta)` events of the
//! accumulator's sign are emitted and the remainder is carried forward, so the
//! signed event count reconstructs the total intensity change to within one
//! threshold step. Event timestamps are jittered uniformly on the `dt_e` grid
//! inside the sub-interval that produced them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Slack applied to `|acc| / theta` before flooring, so that changes which
/// are an exact multiple of the threshold in real arithmetic are not lost to
/// rounding in the accumulated sum.
pub const COUNT_TOLERANCE: f64 = 1e-9;

/// One DVS event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// `+1` for a brightness increase, `-1` for a decrease.
    pub p: i8,
    pub t_ns: u64,
}

impl Event {
    /// Stream order: time, then row, column and polarity.
    pub fn sort_key(&self) -> (u64, u16, u16, i8) {
        (self.t_ns, self.y, self.x, self.p)
    }
}

/// Sorts events by `(t, y, x, p)`.
pub fn sort_events(events: &mut [Event]) {
    events.sort_unstable_by_key(Event::sort_key);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Brightness-change threshold, in intensity units.
    pub theta: f64,
    /// Event timestamp resolution in ns.
    pub dt_e_ns: u64,
    /// APS frame interval in ns.
    pub dt_f_ns: u64,
    /// Number of sub-intervals between two APS frames.
    pub m: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            dt_e_ns: 1_250_000,
            dt_f_ns: 100_000_000,
            m: 8,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be > 0, got {}", self.theta)));
        }
        if self.dt_e_ns == 0 {
            return Err(Error::Config("dt_e must be > 0".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be a positive integer".into()));
        }
        let step = self.dt_e_ns * u64::from(self.m);
        if self.dt_f_ns == 0 || !self.dt_f_ns.is_multiple_of(step) {
            return Err(Error::Config(format!(
                "dt_f ({}) must be a positive multiple of m*dt_e ({step})",
                self.dt_f_ns
            )));
        }
        Ok(())
    }

    /// Spacing of the (interpolated) input frames.
    pub fn sub_interval_ns(&self) -> u64 {
        self.dt_f_ns / u64::from(self.m)
    }

    /// Number of `dt_e` slots in one sub-interval.
    pub fn jitter_slots(&self) -> u64 {
        self.sub_interval_ns() / self.dt_e_ns
    }
}

/// Simulated sensor output: synchronous APS frames plus the asynchronous DVS stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DavisBundle {
    pub width: usize,
    pub height: usize,
    pub dt_e_ns: u64,
    pub aps: Vec<Frame>,
    /// Sorted by `(t, y, x, p)`.
    pub dvs: Vec<Event>,
}

impl DavisBundle {
    /// Events with `start <= t < end`; relies on the sorted invariant.
    pub fn events_in(&self, start_ns: u64, end_ns: u64) -> &[Event] {
        let lo = self.dvs.partition_point(|e| e.t_ns < start_ns);
        let hi = self.dvs.partition_point(|e| e.t_ns < end_ns);
        &self.dvs[lo..hi.max(lo)]
    }

    /// Drops every frame and event with a timestamp after `t_ns`.
    pub fn truncated(&self, t_ns: u64) -> DavisBundle {
        DavisBundle {
            width: self.width,
            height: self.height,
            dt_e_ns: self.dt_e_ns,
            aps: self.aps.iter().filter(|f| f.t_ns <= t_ns).cloned().collect(),
            dvs: self.dvs.iter().filter(|e| e.t_ns <= t_ns).copied().collect(),
        }
    }
}

/// Per-pixel change `next - prev`.
pub fn brightness_delta(prev: &Frame, next: &Frame) -> Result<Vec<f64>> {
    prev.ensure_same_dims(next)?;
    Ok(next.data().iter().zip(prev.data()).map(|(n, p)| n - p).collect())
}

fn step(v: f64) -> i8 {
    i8::from(v > 0.0)
}

/// `step(d - theta) + step(d + theta) - 1`, with `step(0) = 0`.
pub fn polarity(delta: f64, theta: f64) -> i8 {
    step(delta - theta) + step(delta + theta) - 1
}

/// Events produced by one accumulator read-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventCount {
    pub count: u32,
    /// Sign of the accumulator; `0` when no event fires.
    pub polarity: i8,
    /// What is left in the accumulator after emitting `count` events.
    pub residual: f64,
}

pub fn event_count(accumulated: f64, theta: f64) -> EventCount {
    let n = (accumulated.abs() / theta + COUNT_TOLERANCE).floor();
    if n < 1.0 {
        return EventCount {
            count: 0,
            polarity: 0,
            residual: accumulated,
        };
    }
    let p: i8 = if accumulated > 0.0 { 1 } else { -1 };
    EventCount {
        count: n as u32,
        polarity: p,
        residual: accumulated - f64::from(p) * theta * n,
    }
}

/// Draws `count` timestamps `t_f + floor(U(0, slots)) * dt_e`.
pub fn jitter_timestamps<R: Rng + ?Sized>(count: usize, t_f_ns: u64, cfg: &SimConfig, rng: &mut R) -> Vec<u64> {
    let slots = cfg.jitter_slots() as f64;
    (0..count)
        .map(|_| {
            let slot = rng.random_range(0.0..slots).floor() as u64;
            t_f_ns + slot * cfg.dt_e_ns
        })
        .collect()
}

/// Converts frames spaced `dt_f / m` apart into a DAVIS bundle.
///
/// The APS stream keeps every `m`-th input frame, starting with the first.
pub fn simulate(frames: &[Frame], cfg: &SimConfig) -> Result<DavisBundle> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "simulation needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let first = &frames[0];
    let (width, height) = first.dims();
    if width > usize::from(u16::MAX) + 1 || height > usize::from(u16::MAX) + 1 {
        return Err(Error::InvalidInput("frame too large for u16 coordinates".into()));
    }
    let spacing = cfg.sub_interval_ns();
    for (i, pair) in frames.windows(2).enumerate() {
        pair[0]
            .ensure_same_dims(&pair[1])
            .map_err(|e| Error::InvalidInput(format!("frame {} changes dimensions: {e}", i + 1)))?;
        if pair[1].t_ns.checked_sub(pair[0].t_ns) != Some(spacing) {
            return Err(Error::InvalidInput(format!(
                "frames {i} and {} are not spaced dt_f/m = {spacing} ns apart",
                i + 1
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = vec![0.0f64; width * height];
    let mut dvs = Vec::new();
    for pair in frames.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        for (idx, (n, p)) in next.data().iter().zip(prev.data()).enumerate() {
            acc[idx] += n - p;
            let fired = event_count(acc[idx], cfg.theta);
            if fired.count == 0 {
                continue;
            }
            acc[idx] = fired.residual;
            let (x, y) = ((idx % width) as u16, (idx / width) as u16);
            for t_ns in jitter_timestamps(fired.count as usize, prev.t_ns, cfg, &mut rng) {
                dvs.push(Event {
                    x,
                    y,
                    p: fired.polarity,
                    t_ns,
                });
            }
        }
    }
    sort_events(&mut dvs);

    let aps = frames.iter().step_by(cfg.m as usize).cloned().collect();
    Ok(DavisBundle {
        width,
        height,
        dt_e_ns: cfg.dt_e_ns,
        aps,
        dvs,
    })
}

/// Intensity implied by `initial` plus `theta` times the signed count of
/// events strictly before `t_ns`, clamped to `[0, 1]`.
pub fn reconstruct_at(initial: &Frame, events: &[Event], theta: f64, t_ns: u64) -> Frame {
    let w = initial.width();
    let mut data = initial.data().to_vec();
    for e in events.iter().take_while(|e| e.t_ns < t_ns) {
        data[usize::from(e.y) * w + usize::from(e.x)] += theta * f64::from(e.p);
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Frame::new(w, initial.height(), data, t_ns).expect("clamped data of known size")
}
