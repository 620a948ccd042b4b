//! Dense-buffer layer kernels shared by the spiking and frame networks.
//!
//! All tensors are flat `f64` slices in `(channel, row, col)` order. Forward
//! kernels accumulate into their output; backward kernels accumulate into
//! their gradient buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// A dense `(channel, row, col)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub shape: Shape3,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::dims(shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.h * self.shape.w;
        &self.data[c * n..(c + 1) * n]
    }
}

/// 2-D convolution geometry with zero padding. Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub input: Shape3,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn output(&self) -> Shape3 {
        let oh = (self.input.h + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let ow = (self.input.w + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        Shape3::new(self.out_channels, oh, ow)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.input.c * self.kernel * self.kernel
    }

    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Visits every in-bounds `(out_index, weight_index, in_index)` triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let out = self.output();
        let (ic, ih, iw) = (self.input.c, self.input.h, self.input.w);
        let k = self.kernel;
        for oc in 0..out.c {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let oi = (oc * out.h + oy) * out.w + ox;
                    for c in 0..ic {
                        for ky in 0..k {
                            let Some(iy) = self.src(oy, ky, ih) else { continue };
                            for kx in 0..k {
                                let Some(ix) = self.src(ox, kx, iw) else { continue };
                                let wi = ((oc * ic + c) * k + ky) * k + kx;
                                f(oi, wi, (c * ih + iy) * iw + ix);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output positions `o` along one axis whose source `o * stride + k - pad`
    /// lies inside `[0, extent)`.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> std::ops::Range<usize> {
        let (s, pad) = (self.stride, self.padding);
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
        // largest o with o * s + k - pad <= extent - 1
        let hi = if extent + pad > k {
            ((extent + pad - k - 1) / s + 1).min(out_extent)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    /// Calls `f(weight_index, out_row_start, in_row_start, xs)` for every
    /// kernel tap and output row, where `xs` is the valid output column range.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, std::ops::Range<usize>)) {
        let out = self.output();
        let (ic, ih, iw) = (self.input.c, self.input.h, self.input.w);
        let k = self.kernel;
        for oc in 0..out.c {
            for c in 0..ic {
                for ky in 0..k {
                    let ys = self.valid_range(ky, ih, out.h);
                    for kx in 0..k {
                        let xs = self.valid_range(kx, iw, out.w);
                        if xs.is_empty() {
                            continue;
                        }
                        let wi = ((oc * ic + c) * k + ky) * k + kx;
                        for oy in ys.clone() {
                            let iy = oy * self.stride + ky - self.padding;
                            f(wi, (oc * out.h + oy) * out.w, (c * ih + iy) * iw, xs.clone());
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, weights: &[f64], input: &[f64], out: &mut [f64]) {
        let (s, kx_off) = (self.stride, self.padding);
        let k = self.kernel;
        self.for_each_row(|wi, orow, irow, xs| {
            let w = weights[wi];
            let kx = wi % k;
            for ox in xs {
                out[orow + ox] += w * input[irow + ox * s + kx - kx_off];
            }
        });
    }

    /// Output positions reached from one input pixel, per output channel.
    fn targets(&self, iy: usize, ix: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let out = self.output();
        let p = self.padding as isize;
        for ky in 0..self.kernel {
            let ny = iy as isize + p - ky as isize;
            if ny < 0 || !(ny as usize).is_multiple_of(self.stride) || ny as usize / self.stride >= out.h {
                continue;
            }
            for kx in 0..self.kernel {
                let nx = ix as isize + p - kx as isize;
                if nx < 0 || !(nx as usize).is_multiple_of(self.stride) || nx as usize / self.stride >= out.w {
                    continue;
                }
                f(ky, kx, ny as usize / self.stride, nx as usize / self.stride);
            }
        }
    }

    /// Event-driven forward for sparse inputs: only nonzero inputs are
    /// propagated. Returns the number of synaptic updates performed.
    pub fn forward_sparse(&self, weights: &[f64], input: &[f64], out: &mut [f64]) -> u64 {
        let o = self.output();
        let (ic, ih, iw) = (self.input.c, self.input.h, self.input.w);
        let k = self.kernel;
        let mut updates = 0u64;
        for c in 0..ic {
            for iy in 0..ih {
                for ix in 0..iw {
                    let v = input[(c * ih + iy) * iw + ix];
                    if v == 0.0 {
                        continue;
                    }
                    self.targets(iy, ix, |ky, kx, oy, ox| {
                        for oc in 0..o.c {
                            let wi = ((oc * ic + c) * k + ky) * k + kx;
                            out[(oc * o.h + oy) * o.w + ox] += weights[wi] * v;
                        }
                        updates += o.c as u64;
                    });
                }
            }
        }
        updates
    }

    /// Number of synapses leaving input pixel `(c, iy, ix)`.
    pub fn fanout(&self, iy: usize, ix: usize) -> u64 {
        let mut n = 0u64;
        self.targets(iy, ix, |_, _, _, _| n += self.out_channels as u64);
        n
    }

    /// Total in-bounds weight applications for one dense forward pass.
    pub fn tap_count(&self) -> u64 {
        let mut n = 0u64;
        self.for_each_tap(|_, _, _| n += 1);
        n
    }

    pub fn backward(
        &self,
        weights: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        let (s, pad) = (self.stride, self.padding);
        let k = self.kernel;
        self.for_each_row(|wi, orow, irow, xs| {
            let kx = wi % k;
            let w = weights[wi];
            let mut acc = 0.0;
            for ox in xs.clone() {
                acc += grad_out[orow + ox] * input[irow + ox * s + kx - pad];
            }
            grad_w[wi] += acc;
            if let Some(gi) = grad_in.as_deref_mut() {
                for ox in xs {
                    gi[irow + ox * s + kx - pad] += grad_out[orow + ox] * w;
                }
            }
        });
    }
}

/// Non-overlapping max pooling (window = stride = `size`, floor on borders).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub input: Shape3,
    pub size: usize,
}

impl MaxPool {
    pub fn output(&self) -> Shape3 {
        Shape3::new(self.input.c, self.input.h / self.size, self.input.w / self.size)
    }

    /// Writes the maxima into `out` and the winning input index into `argmax`
    /// (first maximum in row-major window order).
    pub fn forward(&self, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        let o = self.output();
        let (ih, iw) = (self.input.h, self.input.w);
        for c in 0..o.c {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for dy in 0..self.size {
                        for dx in 0..self.size {
                            let ii = (c * ih + oy * self.size + dy) * iw + ox * self.size + dx;
                            if input[ii] > best {
                                best = input[ii];
                                arg = ii;
                            }
                        }
                    }
                    let oi = (c * o.h + oy) * o.w + ox;
                    out[oi] = best;
                    argmax[oi] = arg;
                }
            }
        }
    }

    pub fn backward(&self, grad_out: &[f64], argmax: &[usize], grad_in: &mut [f64]) {
        for (g, &a) in grad_out.iter().zip(argmax) {
            grad_in[a] += g;
        }
    }
}

/// Fully connected map, weights row-major `[out][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn forward(&self, weights: &[f64], input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Sparse forward: only nonzero inputs contribute. Returns synaptic updates.
    pub fn forward_sparse(&self, weights: &[f64], input: &[f64], out: &mut [f64]) -> u64 {
        let mut updates = 0;
        for (j, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += weights[i * self.inputs + j] * x;
            }
            updates += self.outputs as u64;
        }
        updates
    }

    pub fn backward(
        &self,
        weights: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_in: Option<&mut [f64]>,
    ) {
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad_w[i * self.inputs..(i + 1) * self.inputs];
            for (gw, x) in row.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
        if let Some(gi) = grad_in {
            for (i, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &weights[i * self.inputs..(i + 1) * self.inputs];
                for (gx, w) in gi.iter_mut().zip(row) {
                    *gx += g * w;
                }
            }
        }
    }
}

/// One layer in an architecture string such as `Input-8C3S2-MP2-16C3S1-FC64-FC4`.
///
/// Convolutions use `(kernel - 1) / 2` zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        size: usize,
    },
    Fc {
        units: usize,
    },
}

impl LayerSpec {
    pub fn build(&self, input: Shape3) -> Result<LayerOp> {
        let op = match *self {
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
            } => {
                if channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!("degenerate layer {self}")));
                }
                let padding = (kernel - 1) / 2;
                if input.h + 2 * padding < kernel || input.w + 2 * padding < kernel {
                    return Err(Error::Config(format!("{self} does not fit input {input}")));
                }
                LayerOp::Conv(Conv2d {
                    input,
                    out_channels: channels,
                    kernel,
                    stride,
                    padding,
                })
            }
            LayerSpec::MaxPool { size } => {
                if size == 0 || input.h < size || input.w < size {
                    return Err(Error::Config(format!("{self} does not fit input {input}")));
                }
                LayerOp::Pool(MaxPool { input, size })
            }
            LayerSpec::Fc { units } => {
                if units == 0 {
                    return Err(Error::Config(format!("degenerate layer {self}")));
                }
                LayerOp::Fc(Dense {
                    inputs: input.len(),
                    outputs: units,
                })
            }
        };
        Ok(op)
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
            } => write!(f, "{channels}C{kernel}S{stride}"),
            LayerSpec::MaxPool { size } => write!(f, "MP{size}"),
            LayerSpec::Fc { units } => write!(f, "FC{units}"),
        }
    }
}

fn parse_layer(tok: &str) -> Option<LayerSpec> {
    if let Some(n) = tok.strip_prefix("MP") {
        return n.parse().ok().map(|size| LayerSpec::MaxPool { size });
    }
    if let Some(n) = tok.strip_prefix("FC") {
        return n.parse().ok().map(|units| LayerSpec::Fc { units });
    }
    let (ch, rest) = tok.split_once('C')?;
    let (k, s) = rest.split_once('S')?;
    Some(LayerSpec::Conv {
        channels: ch.parse().ok()?,
        kernel: k.parse().ok()?,
        stride: s.parse().ok()?,
    })
}

/// Parses `Input-<layer>-<layer>-...`.
pub fn parse_arch(s: &str) -> Result<Vec<LayerSpec>> {
    let mut toks = s.trim().split('-');
    if toks.next() != Some("Input") {
        return Err(Error::Config(format!("architecture must start with `Input`: {s}")));
    }
    toks.map(|t| parse_layer(t).ok_or_else(|| Error::Config(format!("bad layer token `{t}` in {s}"))))
        .collect()
}

pub fn format_arch(layers: &[LayerSpec]) -> String {
    let mut s = String::from("Input");
    for l in layers {
        s.push('-');
        s.push_str(&l.to_string());
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Conv(Conv2d),
    Pool(MaxPool),
    Fc(Dense),
}

impl LayerOp {
    pub fn input(&self) -> Shape3 {
        match self {
            LayerOp::Conv(c) => c.input,
            LayerOp::Pool(p) => p.input,
            LayerOp::Fc(d) => Shape3::new(d.inputs, 1, 1),
        }
    }

    pub fn output(&self) -> Shape3 {
        match self {
            LayerOp::Conv(c) => c.output(),
            LayerOp::Pool(p) => p.output(),
            LayerOp::Fc(d) => Shape3::new(d.outputs, 1, 1),
        }
    }

    pub fn weight_len(&self) -> usize {
        match self {
            LayerOp::Conv(c) => c.weight_len(),
            LayerOp::Pool(_) => 0,
            LayerOp::Fc(d) => d.weight_len(),
        }
    }

    /// Bias length when the layer carries one (one per output channel or unit).
    pub fn bias_len(&self) -> usize {
        match self {
            LayerOp::Conv(c) => c.out_channels,
            LayerOp::Pool(_) => 0,
            LayerOp::Fc(d) => d.outputs,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerOp::Conv(c) => c.input.c * c.kernel * c.kernel,
            LayerOp::Pool(_) => 0,
            LayerOp::Fc(d) => d.inputs,
        }
    }

    pub fn has_weights(&self) -> bool {
        !matches!(self, LayerOp::Pool(_))
    }
}

/// Builds the ops for a layer stack, threading shapes through.
pub fn build_stack(input: Shape3, specs: &[LayerSpec]) -> Result<Vec<LayerOp>> {
    let mut shape = input;
    specs
        .iter()
        .map(|s| {
            let op = s.build(shape)?;
            shape = op.output();
            Ok(op)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_strings_round_trip() {
        let a = "Input-MP2-32C3S3-64C3S1-128C3S1-128C3S2-256C3S2-FC1024-FC4";
        let layers = parse_arch(a).unwrap();
        assert_eq!(layers.len(), 8);
        assert_eq!(
            layers[1],
            LayerSpec::Conv {
                channels: 32,
                kernel: 3,
                stride: 3
            }
        );
        assert_eq!(format_arch(&layers), a);
        assert!(parse_arch("8C3S2-FC4").is_err());
        assert!(parse_arch("Input-8X3").is_err());
    }

    #[test]
    fn stack_shapes() {
        let specs = parse_arch("Input-8C3S2-MP2-16C3S1-FC64-FC4").unwrap();
        let ops = build_stack(Shape3::new(1, 32, 32), &specs).unwrap();
        let shapes: Vec<_> = ops.iter().map(|o| o.output()).collect();
        assert_eq!(shapes[0], Shape3::new(8, 16, 16));
        assert_eq!(shapes[1], Shape3::new(8, 8, 8));
        assert_eq!(shapes[2], Shape3::new(16, 8, 8));
        assert_eq!(ops[3].fan_in(), 1024);
        assert_eq!(shapes[4], Shape3::new(4, 1, 1));
    }

    #[test]
    fn conv_output_shapes() {
        let c = Conv2d {
            input: Shape3::new(2, 32, 32),
            out_channels: 8,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(c.output(), Shape3::new(8, 16, 16));
        let c = Conv2d {
            input: Shape3::new(1, 5, 5),
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 0,
        };
        assert_eq!(c.output(), Shape3::new(1, 3, 3));
    }

    #[test]
    fn sparse_and_dense_conv_agree() {
        let c = Conv2d {
            input: Shape3::new(2, 7, 6),
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let w: Vec<f64> = (0..c.weight_len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x: Vec<f64> = (0..c.input.len())
            .map(|i| if (i * 7) % 5 == 0 { 1.0 } else { 0.0 })
            .collect();
        let mut a = vec![0.0; c.output().len()];
        let mut b = vec![0.0; c.output().len()];
        c.forward(&w, &x, &mut a);
        let updates = c.forward_sparse(&w, &x, &mut b);
        assert_eq!(a, b);
        let expected: u64 = (0..c.input.len())
            .filter(|&i| x[i] != 0.0)
            .map(|i| {
                let r = i % (c.input.h * c.input.w);
                c.fanout(r / c.input.w, r % c.input.w)
            })
            .sum();
        assert_eq!(updates, expected);
    }

    #[test]
    fn conv_matches_tap_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (k, s, h, w) in [(1, 1, 5, 4), (3, 1, 7, 6), (3, 2, 7, 8), (5, 3, 9, 7), (3, 3, 4, 5)] {
            let c = Conv2d {
                input: Shape3::new(2, h, w),
                out_channels: 3,
                kernel: k,
                stride: s,
                padding: (k - 1) / 2,
            };
            let wts: Vec<f64> = (0..c.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..c.input.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = c.output().len();
            let go: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; n];
            let mut want = vec![0.0; n];
            c.forward(&wts, &x, &mut out);
            c.for_each_tap(|oi, wi, ii| want[oi] += wts[wi] * x[ii]);
            let mut gw = vec![0.0; wts.len()];
            let mut gi = vec![0.0; x.len()];
            c.backward(&wts, &x, &go, &mut gw, Some(&mut gi));
            let mut want_gw = vec![0.0; wts.len()];
            let mut want_gi = vec![0.0; x.len()];
            c.for_each_tap(|oi, wi, ii| {
                want_gw[wi] += go[oi] * x[ii];
                want_gi[ii] += go[oi] * wts[wi];
            });
            for (a, b) in out
                .iter()
                .zip(&want)
                .chain(gw.iter().zip(&want_gw))
                .chain(gi.iter().zip(&want_gi))
            {
                assert!((a - b).abs() < 1e-12, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dense_sparse_matches() {
        let d = Dense { inputs: 4, outputs: 2 };
        let w = [1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0];
        let x = [1.0, 0.0, 1.0, 0.0];
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        d.forward(&w, &x, &mut a);
        assert_eq!(d.forward_sparse(&w, &x, &mut b), 4);
        assert_eq!(a, b);
        assert_eq!(a, [4.0, -1.0]);
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let p = MaxPool {
            input: Shape3::new(1, 2, 4),
            size: 2,
        };
        let x = [1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 7.0];
        let mut out = [0.0; 2];
        let mut arg = [0; 2];
        p.forward(&x, &mut out, &mut arg);
        assert_eq!(out, [5.0, 7.0]);
        let mut g = [0.0; 8];
        p.backward(&[1.0, 2.0], &arg, &mut g);
        assert_eq!(g, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }
}
