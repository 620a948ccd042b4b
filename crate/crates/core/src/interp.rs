//! Kernel-based frame interpolation.
//!
//! A synthesized pixel is the dot product of the `(2r+1)^2` patches around it
//! in the previous and next frames with a pair of weight grids. The kernel
//! source is pluggable; [`InterpKernel`] itself is the global (shared by all
//! pixels) source and can be fitted by L1 gradient descent on frame triplets.

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Weights of shape `(2, 2r+1, 2r+1)`: index 0 applies to the previous frame, 1 to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpKernel {
    radius: usize,
    weights: Vec<f64>,
}

/// Supplies the kernel used at each output pixel.
pub trait KernelSource {
    fn radius(&self) -> usize;
    fn kernel_at(&self, x: usize, y: usize) -> &InterpKernel;
}

impl KernelSource for InterpKernel {
    fn radius(&self) -> usize {
        self.radius
    }

    fn kernel_at(&self, _x: usize, _y: usize) -> &InterpKernel {
        self
    }
}

impl InterpKernel {
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let expected = 2 * Self::side_for(radius) * Self::side_for(radius);
        if weights.len() != expected {
            return Err(Error::dims(expected, weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("interpolation kernel weight".into()));
        }
        Ok(Self { radius, weights })
    }

    fn side_for(radius: usize) -> usize {
        2 * radius + 1
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        Self::side_for(self.radius)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight for `frame` (0 = previous, 1 = next) at patch offset `(dy, dx)` in `0..side`.
    pub fn weight(&self, frame: usize, dy: usize, dx: usize) -> f64 {
        let s = self.side();
        self.weights[(frame * s + dy) * s + dx]
    }

    /// Every tap gets the same weight; sums to one.
    pub fn uniform(radius: usize) -> Self {
        let n = 2 * Self::side_for(radius).pow(2);
        Self {
            radius,
            weights: vec![1.0 / n as f64; n],
        }
    }
}

/// 0.5 on both center taps, zero elsewhere: a plain linear blend.
pub fn default_kernel(radius: usize) -> InterpKernel {
    let s = 2 * radius + 1;
    let mut weights = vec![0.0; 2 * s * s];
    let center = radius * s + radius;
    weights[center] = 0.5;
    weights[s * s + center] = 0.5;
    InterpKernel { radius, weights }
}

fn raw_pixel(prev: &Frame, next: &Frame, k: &InterpKernel, x: usize, y: usize) -> f64 {
    let r = k.radius as isize;
    let s = k.side();
    let mut acc = 0.0;
    for (fi, src) in [prev, next].into_iter().enumerate() {
        for dy in 0..s {
            for dx in 0..s {
                let v = src.get_clamped(x as isize + dx as isize - r, y as isize + dy as isize - r);
                acc += v * k.weights[(fi * s + dy) * s + dx];
            }
        }
    }
    acc
}

/// Synthesizes the frame halfway between `prev` and `next` with a kernel source.
pub fn interpolate_with(prev: &Frame, next: &Frame, src: &dyn KernelSource) -> Result<Frame> {
    prev.ensure_same_dims(next)?;
    let t_ns = prev.t_ns + (next.t_ns.saturating_sub(prev.t_ns)) / 2;
    Frame::from_fn(prev.width(), prev.height(), t_ns, |x, y| {
        raw_pixel(prev, next, src.kernel_at(x, y), x, y)
    })
}

/// Replicate-padded patch convolution, clamped to `[0, 1]`, stamped at the midpoint time.
pub fn interpolate_frame(prev: &Frame, next: &Frame, k: &InterpKernel) -> Result<Frame> {
    interpolate_with(prev, next, k)
}

/// Inserts `n` frames between each consecutive pair by repeated midpoint synthesis.
///
/// `n + 1` must be a power of two (0, 1, 3, 7, ...).
pub fn interpolate_sequence(frames: &[Frame], n: usize, src: &dyn KernelSource) -> Result<Vec<Frame>> {
    if !(n + 1).is_power_of_two() {
        return Err(Error::Config(format!("interpolation factor must be 2^k - 1, got {n}")));
    }
    let mut out = frames.to_vec();
    let mut inserted = 0;
    while inserted < n {
        let mut next = Vec::with_capacity(out.len() * 2);
        for pair in out.windows(2) {
            next.push(pair[0].clone());
            next.push(interpolate_with(&pair[0], &pair[1], src)?);
        }
        if let Some(last) = out.last() {
            next.push(last.clone());
        }
        out = next;
        inserted = 2 * inserted + 1;
    }
    Ok(out)
}

/// Sum of absolute per-pixel differences.
pub fn l1_loss(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum())
}

/// `(previous, middle, next)` training example.
pub type Triplet = (Frame, Frame, Frame);

fn mean_loss(triplets: &[Triplet], k: &InterpKernel) -> Result<f64> {
    let mut total = 0.0;
    for (prev, mid, next) in triplets {
        total += l1_loss(&interpolate_frame(prev, next, k)?, mid)?;
    }
    Ok(total / triplets.len() as f64)
}

/// Fits a global kernel to triplets by subgradient descent on the per-pixel
/// mean absolute error, starting from `init`. Steps preserve the sum of the
/// weights.
///
/// Returns the best kernel seen (by mean L1 over the set), which is never
/// worse than `init`, together with the per-step loss curve.
pub fn train_kernel_from(
    triplets: &[Triplet],
    init: InterpKernel,
    lr: f64,
    steps: usize,
) -> Result<(InterpKernel, Vec<f64>)> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput("kernel training set is empty".into()));
    }
    let r = init.radius as isize;
    let s = init.side();
    let pixels: usize = triplets.iter().map(|t| t.1.data().len()).sum();

    let mut kernel = init;
    let mut best = kernel.clone();
    let mut best_loss = mean_loss(triplets, &kernel)?;
    let mut history = vec![best_loss];
    for _ in 0..steps {
        let mut grad = vec![0.0; kernel.weights.len()];
        for (prev, mid, next) in triplets {
            prev.ensure_same_dims(next)?;
            prev.ensure_same_dims(mid)?;
            for y in 0..mid.height() {
                for x in 0..mid.width() {
                    let raw = raw_pixel(prev, next, &kernel, x, y);
                    // clamp is flat outside [0, 1]
                    if !(0.0..=1.0).contains(&raw) {
                        continue;
                    }
                    let diff = raw - mid.get(x, y);
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    if sign == 0.0 {
                        continue;
                    }
                    for (fi, src) in [prev, next].into_iter().enumerate() {
                        for dy in 0..s {
                            for dx in 0..s {
                                let v = src.get_clamped(x as isize + dx as isize - r, y as isize + dy as isize - r);
                                grad[(fi * s + dy) * s + dx] += sign * v;
                            }
                        }
                    }
                }
            }
        }
        // zero-sum step: keeps flat regions exact, where the L1 kink
        // otherwise stalls descent
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        for (w, g) in kernel.weights.iter_mut().zip(&grad) {
            *w -= lr * (g - mean) / pixels as f64;
        }
        let loss = mean_loss(triplets, &kernel)?;
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = kernel.clone();
        }
    }
    Ok((best, history))
}

/// [`train_kernel_from`] starting at the uniform kernel of radius `radius`.
pub fn train_kernel(triplets: &[Triplet], radius: usize, lr: f64, steps: usize) -> Result<InterpKernel> {
    train_kernel_from(triplets, InterpKernel::uniform(radius), lr, steps).map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, data: &[f64]) -> Frame {
        Frame::new(w, h, data.to_vec(), 0).unwrap()
    }

    #[test]
    fn identical_frames_are_fixed_points() {
        let f = Frame::from_fn(4, 3, 10, |x, y| (x + 2 * y) as f64 / 10.0).unwrap();
        let out = interpolate_frame(&f, &f, &default_kernel(1)).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.t_ns, 10);
    }

    #[test]
    fn black_to_white_gives_mid_gray() {
        let a = Frame::filled(3, 3, 0.0, 0).unwrap();
        let b = Frame::filled(3, 3, 1.0, 100).unwrap();
        let out = interpolate_frame(&a, &b, &default_kernel(2)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(out.t_ns, 50);
    }

    #[test]
    fn hand_computed_center_pixel() {
        let prev = frame(3, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        let next = frame(3, 3, &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
        let mut w = vec![0.0; 18];
        // previous frame: top-left 0.2, bottom-right 0.1; next frame: center 0.3, top 0.05
        w[0] = 0.2;
        w[8] = 0.1;
        w[9 + 4] = 0.3;
        w[9 + 1] = 0.05;
        let k = InterpKernel::new(1, w).unwrap();
        let out = interpolate_frame(&prev, &next, &k).unwrap();
        // 0.2*0.1 + 0.1*0.9 + 0.3*0.5 + 0.05*0.8 = 0.02 + 0.09 + 0.15 + 0.04
        assert!((out.get(1, 1) - 0.30).abs() < 1e-12);
    }

    #[test]
    fn default_kernel_shape() {
        let k0 = default_kernel(0);
        assert_eq!(k0.weights(), &[0.5, 0.5]);
        let k = default_kernel(2);
        assert_eq!(k.weights().len(), 50);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((InterpKernel::uniform(1).weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_clamped() {
        let a = Frame::filled(2, 2, 1.0, 0).unwrap();
        let k = InterpKernel::new(0, vec![2.0, 2.0]).unwrap();
        let out = interpolate_frame(&a, &a, &k).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l1_examples() {
        let a = frame(2, 1, &[0.1, 0.5]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let b = frame(2, 1, &[0.4, 0.5]);
        assert!((l1_loss(&a, &b).unwrap() - 0.3).abs() < 1e-12);
        assert!(l1_loss(&a, &frame(1, 2, &[0.1, 0.5])).is_err());
    }

    #[test]
    fn sequence_factors() {
        let a = Frame::filled(2, 2, 0.0, 0).unwrap();
        let b = Frame::filled(2, 2, 0.8, 800).unwrap();
        let k = default_kernel(0);
        for n in [0usize, 1, 3, 7] {
            let seq = interpolate_sequence(&[a.clone(), b.clone()], n, &k).unwrap();
            assert_eq!(seq.len(), n + 2);
            let step = 800 / (n as u64 + 1);
            for (i, f) in seq.iter().enumerate() {
                assert_eq!(f.t_ns, i as u64 * step);
                assert!((f.get(0, 0) - 0.8 * i as f64 / (n + 1) as f64).abs() < 1e-12);
            }
        }
        assert!(interpolate_sequence(&[a, b], 2, &k).is_err());
    }

    #[test]
    fn training_edge_cases() {
        assert!(train_kernel(&[], 1, 0.1, 10).is_err());
        let a = Frame::from_fn(4, 4, 0, |x, _| x as f64 / 4.0).unwrap();
        let b = Frame::from_fn(4, 4, 2, |_, y| y as f64 / 4.0).unwrap();
        let mid = interpolate_frame(&a, &b, &default_kernel(1)).unwrap();
        let set = vec![(a, mid, b)];
        let init = InterpKernel::uniform(1);
        assert_eq!(train_kernel(&set, 1, 0.1, 0).unwrap(), init);
        assert_eq!(train_kernel(&set, 1, 0.0, 20).unwrap(), init);
    }

    #[test]
    fn training_improves_and_keeps_weight_sum() {
        // a bar moving one pixel per frame
        let bar = |t: u64| Frame::from_fn(8, 8, t, move |x, _| if x == 2 + t as usize { 0.9 } else { 0.2 }).unwrap();
        let set: Vec<Triplet> = (0..4).map(|t| (bar(t), bar(t + 1), bar(t + 2))).collect();
        let (k, losses) = train_kernel_from(&set, InterpKernel::uniform(1), 0.5, 100).unwrap();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 0.8 * losses[0], "{losses:?}");
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
