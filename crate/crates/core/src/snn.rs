//! Spiking tracker.
//!
//! Layers of leaky integrate-and-fire neurons (convolutional or fully
//! connected, plus binary max pooling) feed a linear readout over the spike
//! counts of the last spiking layer in the final `decode_window` timesteps.
//! Training is backpropagation through time where the Heaviside firing
//! function is differentiated with a rectangle surrogate and the reset is
//! treated as a stop-gradient event.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::event_sim::Event;
use crate::layers::{build_stack, parse_arch, LayerOp, LayerSpec, Shape3};
use crate::optim::{Adam, TrainConfig};

/// Number of readout values: `[x, y, w, h]`.
pub const OUTPUTS: usize = 4;

/// Samples accumulated sequentially per parallel task; fixed so that
/// results do not depend on the thread count.
pub(crate) const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    /// Membrane time constant, same unit as `dt`.
    pub tau: f64,
    pub dt: f64,
    pub v_th: f64,
    pub u_rest: f64,
    /// Width of the rectangle surrogate around `v_th`.
    pub surrogate_width: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 4.0,
            dt: 1.0,
            v_th: 1.0,
            u_rest: 0.0,
            surrogate_width: 1.0,
        }
    }
}

impl LifParams {
    /// Sets the threshold and the surrogate width to the same value.
    pub fn with_threshold(v_th: f64) -> Self {
        Self {
            v_th,
            surrogate_width: v_th,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // also rejects NaN
        if [self.tau, self.dt, self.surrogate_width]
            .iter()
            .any(|v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::Config(format!("LIF parameters need tau, dt, a > 0: {self:?}")));
        }
        Ok(())
    }

    /// Per-step membrane decay `exp(-dt / tau)`.
    pub fn decay(&self) -> f64 {
        (-self.dt / self.tau).exp()
    }

    /// Rectangle surrogate for dH/du: `1/a` inside `|u - v_th| < a/2`.
    pub fn surrogate(&self, u: f64) -> f64 {
        let a = self.surrogate_width;
        if (u - self.v_th).abs() < a / 2.0 {
            1.0 / a
        } else {
            0.0
        }
    }
}

/// Membrane potentials of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub u: Vec<f64>,
}

impl LifState {
    pub fn at_rest(n: usize, p: &LifParams) -> Self {
        Self { u: vec![p.u_rest; n] }
    }
}

/// Integrates one step in place. `pre` receives the pre-reset potentials and
/// `spikes` the 0/1 outputs.
fn integrate(u: &mut [f64], current: &[f64], p: &LifParams, decay: f64, pre: &mut [f64], spikes: &mut [f64]) {
    for i in 0..u.len() {
        let v = u[i] * decay + current[i];
        pre[i] = v;
        if v - p.v_th > 0.0 {
            spikes[i] = 1.0;
            u[i] = p.u_rest;
        } else {
            spikes[i] = 0.0;
            u[i] = v;
        }
    }
}

/// `u' = u * exp(-dt/tau) + input`; neurons with `u' > v_th` spike and reset to `u_rest`.
pub fn lif_step(state: &LifState, input_current: &[f64], p: &LifParams) -> (LifState, Vec<u8>) {
    assert_eq!(state.u.len(), input_current.len());
    let n = state.u.len();
    let mut u = state.u.clone();
    let mut pre = vec![0.0; n];
    let mut spikes = vec![0.0; n];
    integrate(&mut u, input_current, p, p.decay(), &mut pre, &mut spikes);
    (LifState { u }, spikes.iter().map(|&s| s as u8).collect())
}

/// Binary activations over `(timestep, channel, row, col)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    steps: usize,
    shape: Shape3,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(steps: usize, shape: Shape3) -> Self {
        Self {
            steps,
            shape,
            data: vec![0; steps * shape.len()],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(t, c, y, x)]
    }

    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize) {
        let i = self.index(t, c, y, x);
        self.data[i] = 1;
    }

    pub fn step(&self, t: usize) -> &[u8] {
        let n = self.shape.len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn step_f64(&self, t: usize) -> Vec<f64> {
        self.step(t).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn spike_count(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }
}

/// How events are binned into the network input: two polarity channels
/// (0 = ON, 1 = OFF), `steps` bins of `dt_ns` each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnnInputEncoding {
    pub width: usize,
    pub height: usize,
    pub dt_ns: u64,
    pub steps: usize,
}

impl SnnInputEncoding {
    pub fn shape(&self) -> Shape3 {
        Shape3::new(2, self.height, self.width)
    }

    pub fn window_ns(&self) -> u64 {
        self.dt_ns * self.steps as u64
    }
}

/// Bins events with `start <= t < start + steps * dt` into a spike tensor.
///
/// Events outside the window or the sensor area are ignored; repeated events
/// in one bin saturate at 1.
pub fn encode_events(events: &[Event], enc: &SnnInputEncoding, start_ns: u64) -> SpikeTensor {
    let mut out = SpikeTensor::zeros(enc.steps, enc.shape());
    let end = start_ns + enc.window_ns();
    for e in events {
        if e.t_ns < start_ns || e.t_ns >= end {
            continue;
        }
        let (x, y) = (usize::from(e.x), usize::from(e.y));
        if x >= enc.width || y >= enc.height {
            continue;
        }
        let t = ((e.t_ns - start_ns) / enc.dt_ns) as usize;
        let c = if e.p > 0 { 0 } else { 1 };
        out.set(t, c, y, x);
    }
    out
}

/// Architecture and hyperparameters from which a network is initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnSpec {
    pub input: Shape3,
    /// Spiking layers; the readout is added on top.
    pub layers: Vec<LayerSpec>,
    pub lif: LifParams,
    pub time_steps: usize,
    pub decode_window: usize,
    pub lambda: f64,
    /// Scale of the uniform weight initialization relative to `sqrt(3 / fan_in)`.
    pub init_gain: f64,
}

impl SnnSpec {
    /// `Input(2x32x32)-8C3S2-16C3S2-FC64` with a 4-unit readout.
    pub fn desk_default() -> Self {
        Self {
            input: Shape3::new(2, 32, 32),
            layers: parse_arch("Input-8C3S2-16C3S2-FC64").expect("valid"),
            lif: LifParams::default(),
            time_steps: 10,
            decode_window: 10,
            lambda: 1e-4,
            init_gain: 2.0,
        }
    }

    /// The full-size architecture (`Input-MP2-32C3S3-...-FC1024-FC4`).
    pub fn full_size(input: Shape3) -> Self {
        Self {
            input,
            layers: parse_arch("Input-MP2-32C3S3-64C3S1-128C3S1-128C3S2-256C3S2-FC1024").expect("valid"),
            ..Self::desk_default()
        }
    }

    /// Builds a spec from an architecture string whose last layer is `FC4`
    /// (the readout).
    pub fn from_arch(arch: &str, input: Shape3) -> Result<Self> {
        let mut layers = parse_arch(arch)?;
        if layers.pop() != Some(LayerSpec::Fc { units: OUTPUTS }) {
            return Err(Error::Config(format!("{arch}: last layer must be FC4")));
        }
        Ok(Self {
            input,
            layers,
            ..Self::desk_default()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SpikingLayer {
    pub spec: LayerSpec,
    pub op: LayerOp,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnNetwork {
    pub(crate) input: Shape3,
    pub(crate) layers: Vec<SpikingLayer>,
    /// Readout weights `[4][n_last]`.
    pub(crate) decode_w: Vec<f64>,
    pub(crate) decode_b: Vec<f64>,
    pub lif: LifParams,
    pub time_steps: usize,
    pub decode_window: usize,
    pub lambda: f64,
}

/// Gradients in the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnGrads {
    pub layers: Vec<Vec<f64>>,
    pub decode_w: Vec<f64>,
    pub decode_b: Vec<f64>,
}

impl SnnGrads {
    fn zeros_like(net: &SnnNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            decode_w: vec![0.0; net.decode_w.len()],
            decode_b: vec![0.0; net.decode_b.len()],
        }
    }

    fn add_scaled(&mut self, other: &SnnGrads, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (x, y) in self.decode_w.iter_mut().zip(&other.decode_w) {
            *x += s * y;
        }
        for (x, y) in self.decode_b.iter_mut().zip(&other.decode_b) {
            *x += s * y;
        }
    }

    /// Flattened in parameter order: spiking layers, readout weights, readout bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.layers.iter().flatten().copied().collect();
        v.extend(&self.decode_w);
        v.extend(&self.decode_b);
        v
    }
}

/// One training example: an encoded event window and its target box.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnSample {
    pub input: SpikeTensor,
    pub target: BBox,
}

/// Per-layer activity from one forward pass, used for operation counting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerActivity {
    pub label: String,
    pub spiking: bool,
    /// Incoming nonzero activations summed over timesteps.
    pub input_spikes: u64,
    /// Synaptic accumulations triggered by incoming spikes.
    pub synaptic_updates: u64,
    /// Neurons times timesteps (one decay multiplication each).
    pub neuron_steps: u64,
    /// Spikes emitted, summed over timesteps.
    pub output_spikes: u64,
}

/// Smallest relative rate increase that justifies another upscaling round.
const SATURATION_GAIN: f64 = 1.1;

/// Band of per-neuron, per-step firing rates targeted by
/// [`SnnNetwork::calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateTarget {
    pub min: f64,
    pub max: f64,
    /// Weight scale factor per adjustment.
    pub step: f64,
    pub max_rounds: usize,
}

impl Default for RateTarget {
    fn default() -> Self {
        Self {
            min: 0.02,
            max: 0.2,
            step: 1.5,
            max_rounds: 20,
        }
    }
}

struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<Vec<f64>>>,
    spikes: Vec<Vec<Vec<f64>>>,
    argmax: Vec<Vec<Vec<usize>>>,
    counts: Vec<f64>,
}

impl SnnNetwork {
    pub fn init(spec: &SnnSpec, seed: u64) -> Result<Self> {
        spec.lif.validate()?;
        if spec.time_steps == 0 || spec.decode_window == 0 || spec.decode_window > spec.time_steps {
            return Err(Error::Config(format!(
                "need 0 < decode_window ({}) <= time_steps ({})",
                spec.decode_window, spec.time_steps
            )));
        }
        let ops = build_stack(spec.input, &spec.layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(ops.len());
        for (s, op) in spec.layers.iter().zip(ops) {
            let bound = spec.init_gain * (3.0 / op.fan_in().max(1) as f64).sqrt();
            let weights = (0..op.weight_len()).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push(SpikingLayer { spec: *s, op, weights });
        }
        let n_last = layers.last().map_or(spec.input.len(), |l| l.op.output().len());
        let bound = (3.0 / n_last as f64).sqrt() / spec.time_steps as f64;
        let decode_w = (0..OUTPUTS * n_last)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Ok(Self {
            input: spec.input,
            layers,
            decode_w,
            decode_b: vec![0.5, 0.5, 0.25, 0.25],
            lif: spec.lif,
            time_steps: spec.time_steps,
            decode_window: spec.decode_window,
            lambda: spec.lambda,
        })
    }

    /// Assembles a network from stored parts (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        input: Shape3,
        specs: Vec<LayerSpec>,
        weights: Vec<Vec<f64>>,
        decode_w: Vec<f64>,
        decode_b: Vec<f64>,
        lif: LifParams,
        time_steps: usize,
        decode_window: usize,
        lambda: f64,
    ) -> Result<Self> {
        lif.validate()?;
        let ops = build_stack(input, &specs)?;
        if weights.len() != ops.len() {
            return Err(Error::dims(ops.len(), weights.len()));
        }
        let mut layers = Vec::new();
        for ((spec, op), w) in specs.into_iter().zip(ops).zip(weights) {
            if w.len() != op.weight_len() {
                return Err(Error::dims(op.weight_len(), w.len()));
            }
            layers.push(SpikingLayer { spec, op, weights: w });
        }
        let n_last = layers.last().map_or(input.len(), |l| l.op.output().len());
        if decode_w.len() != OUTPUTS * n_last || decode_b.len() != OUTPUTS {
            return Err(Error::dims(OUTPUTS * n_last, decode_w.len()));
        }
        if decode_window == 0 || decode_window > time_steps {
            return Err(Error::Config("need 0 < decode_window <= time_steps".into()));
        }
        Ok(Self {
            input,
            layers,
            decode_w,
            decode_b,
            lif,
            time_steps,
            decode_window,
            lambda,
        })
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn layer_weights(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.weights.as_slice()).collect()
    }

    pub fn layer_weights_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.layers[i].weights
    }

    pub fn decode_weights(&self) -> &[f64] {
        &self.decode_w
    }

    pub fn decode_weights_mut(&mut self) -> &mut [f64] {
        &mut self.decode_w
    }

    pub fn decode_bias(&self) -> &[f64] {
        &self.decode_b
    }

    pub fn decode_bias_mut(&mut self) -> &mut [f64] {
        &mut self.decode_b
    }

    /// Width of the layer feeding the readout.
    pub fn readout_inputs(&self) -> usize {
        self.decode_w.len() / OUTPUTS
    }

    /// `sum_k ||W_k||^2` over spiking and readout weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .chain(&self.decode_w)
            .map(|w| w * w)
            .sum()
    }

    fn check_input(&self, input: &SpikeTensor) -> Result<()> {
        if input.shape() != self.input || input.steps() != self.time_steps {
            return Err(Error::dims(
                format!("{} steps of {}", self.time_steps, self.input),
                format!("{} steps of {}", input.steps(), input.shape()),
            ));
        }
        Ok(())
    }

    /// Linear readout of windowed spike counts.
    pub fn decode(&self, counts: &[f64]) -> BBox {
        let n = self.readout_inputs();
        let mut y = [0.0; OUTPUTS];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.decode_w[i * n..(i + 1) * n];
            *yi = self.decode_b[i] + row.iter().zip(counts).map(|(w, c)| w * c).sum::<f64>();
        }
        BBox::from_array(y)
    }

    fn run(
        &self,
        input: &SpikeTensor,
        record: bool,
        mut activity: Option<&mut Vec<LayerActivity>>,
    ) -> (Vec<f64>, Option<Trace>) {
        let steps = self.time_steps;
        let decay = self.lif.decay();
        let n_layers = self.layers.len();
        let mut u: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![self.lif.u_rest; l.op.output().len()])
            .collect();
        let mut trace = record.then(|| Trace {
            inputs: Vec::with_capacity(steps),
            pre: vec![Vec::with_capacity(steps); n_layers],
            spikes: vec![Vec::with_capacity(steps); n_layers],
            argmax: vec![Vec::with_capacity(steps); n_layers],
            counts: Vec::new(),
        });
        if let Some(act) = activity.as_deref_mut() {
            act.clear();
            for (i, l) in self.layers.iter().enumerate() {
                act.push(LayerActivity {
                    label: format!("L{} {}", i + 1, l.spec),
                    spiking: l.op.has_weights(),
                    ..LayerActivity::default()
                });
            }
        }
        let n_last = self.readout_inputs();
        let mut counts = vec![0.0; n_last];
        for t in 0..steps {
            let x = input.step_f64(t);
            let mut cur_in = x.clone();
            for (li, layer) in self.layers.iter().enumerate() {
                let n_out = layer.op.output().len();
                let mut out = vec![0.0; n_out];
                let mut pre = Vec::new();
                let mut arg = Vec::new();
                let updates = match layer.op {
                    LayerOp::Pool(p) => {
                        arg = vec![0; n_out];
                        p.forward(&cur_in, &mut out, &mut arg);
                        0
                    }
                    LayerOp::Conv(c) => {
                        let mut current = vec![0.0; n_out];
                        let n = c.forward_sparse(&layer.weights, &cur_in, &mut current);
                        pre = vec![0.0; n_out];
                        integrate(&mut u[li], &current, &self.lif, decay, &mut pre, &mut out);
                        n
                    }
                    LayerOp::Fc(d) => {
                        let mut current = vec![0.0; n_out];
                        let n = d.forward_sparse(&layer.weights, &cur_in, &mut current);
                        pre = vec![0.0; n_out];
                        integrate(&mut u[li], &current, &self.lif, decay, &mut pre, &mut out);
                        n
                    }
                };
                if let Some(act) = activity.as_deref_mut() {
                    let a = &mut act[li];
                    a.input_spikes += cur_in.iter().filter(|&&v| v != 0.0).count() as u64;
                    a.synaptic_updates += updates;
                    a.output_spikes += out.iter().filter(|&&v| v != 0.0).count() as u64;
                    if layer.op.has_weights() {
                        a.neuron_steps += n_out as u64;
                    }
                }
                if let Some(tr) = trace.as_mut() {
                    tr.pre[li].push(pre);
                    tr.argmax[li].push(arg);
                    tr.spikes[li].push(out.clone());
                }
                cur_in = out;
            }
            if t >= steps - self.decode_window {
                for (c, s) in counts.iter_mut().zip(&cur_in) {
                    *c += s;
                }
            }
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(x);
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.counts = counts.clone();
        }
        (counts, trace)
    }

    /// Spike counts of the readout's input over the decode window.
    pub fn window_counts(&self, input: &SpikeTensor) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input, false, None).0)
    }

    pub fn forward(&self, input: &SpikeTensor) -> Result<BBox> {
        Ok(self.decode(&self.window_counts(input)?))
    }

    /// Forward pass that also reports per-layer activity.
    pub fn forward_with_activity(&self, input: &SpikeTensor) -> Result<(BBox, Vec<LayerActivity>)> {
        self.check_input(input)?;
        let mut act = Vec::new();
        let (counts, _) = self.run(input, false, Some(&mut act));
        Ok((self.decode(&counts), act))
    }

    /// Mean firing rate of spiking layer `li` over `inputs`.
    fn firing_rate(&self, li: usize, inputs: &[&SpikeTensor]) -> f64 {
        let (spikes, steps) = inputs
            .iter()
            .map(|x| {
                let mut act = Vec::new();
                self.run(x, false, Some(&mut act));
                (act[li].output_spikes, act[li].neuron_steps)
            })
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        spikes as f64 / steps.max(1) as f64
    }

    /// Rescales each spiking layer's weights, first to last, until its
    /// firing rate on `inputs` lies in the target band or the rounds run out.
    /// Keeps deep layers from starting silent, where the surrogate gradient
    /// is zero. Returns the final rate of each layer with weights.
    pub fn calibrate(&mut self, inputs: &[&SpikeTensor], target: &RateTarget) -> Result<Vec<f64>> {
        for x in inputs {
            self.check_input(x)?;
        }
        if !(0.0 < target.min && target.min < target.max && target.step > 1.0) {
            return Err(Error::Config(format!("invalid rate target {target:?}")));
        }
        let mut rates = Vec::new();
        for li in 0..self.layers.len() {
            if !self.layers[li].op.has_weights() {
                continue;
            }
            let mut rate = self.firing_rate(li, inputs);
            for _ in 0..target.max_rounds {
                let scale = if rate < target.min {
                    target.step
                } else if rate > target.max {
                    1.0 / target.step
                } else {
                    break;
                };
                self.layers[li].weights.iter_mut().for_each(|w| *w *= scale);
                let next = self.firing_rate(li, inputs);
                // sparse inputs cap the rate; stop once scaling up stops paying off
                if scale > 1.0 && next < rate * SATURATION_GAIN {
                    self.layers[li].weights.iter_mut().for_each(|w| *w /= scale);
                    break;
                }
                rate = next;
            }
            rates.push(rate);
        }
        Ok(rates)
    }

    /// Data term and gradients for one sample (no regularizer).
    /// Adds one sample's data-term gradients into `g`; returns its loss.
    fn sample_grads(&self, sample: &SnnSample, g: &mut SnnGrads) -> f64 {
        let (_, trace) = self.run(&sample.input, true, None);
        let tr = trace.expect("recorded");
        let pred = self.decode(&tr.counts).to_array();
        let gt = sample.target.to_array();
        let n_last = self.readout_inputs();

        let mut loss = 0.0;
        let mut grad_counts = vec![0.0; n_last];
        for i in 0..OUTPUTS {
            let r = pred[i] - gt[i];
            loss += r * r;
            let dy = 2.0 * r;
            g.decode_b[i] += dy;
            for (j, gc) in grad_counts.iter_mut().enumerate() {
                g.decode_w[i * n_last + j] += dy * tr.counts[j];
                *gc += dy * self.decode_w[i * n_last + j];
            }
        }

        let steps = self.time_steps;
        let decay = self.lif.decay();
        let n_layers = self.layers.len();
        // dL/du for the post-reset state of each layer, flowing back from t+1
        let mut carry: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.op.output().len()]).collect();
        for t in (0..steps).rev() {
            let mut grad_out = if t >= steps - self.decode_window {
                grad_counts.clone()
            } else {
                vec![0.0; n_last]
            };
            for li in (0..n_layers).rev() {
                let layer = &self.layers[li];
                let input = if li == 0 { &tr.inputs[t] } else { &tr.spikes[li - 1][t] };
                let need_in = li > 0;
                let mut grad_in = vec![0.0; if need_in { input.len() } else { 0 }];
                match layer.op {
                    LayerOp::Pool(p) => {
                        if need_in {
                            p.backward(&grad_out, &tr.argmax[li][t], &mut grad_in);
                        }
                    }
                    LayerOp::Conv(_) | LayerOp::Fc(_) => {
                        let pre = &tr.pre[li][t];
                        let spikes = &tr.spikes[li][t];
                        let mut grad_pre = vec![0.0; pre.len()];
                        for k in 0..pre.len() {
                            grad_pre[k] = grad_out[k] * self.lif.surrogate(pre[k]) + carry[li][k] * (1.0 - spikes[k]);
                            carry[li][k] = decay * grad_pre[k];
                        }
                        let gi = need_in.then_some(grad_in.as_mut_slice());
                        match layer.op {
                            LayerOp::Conv(c) => c.backward(&layer.weights, input, &grad_pre, &mut g.layers[li], gi),
                            LayerOp::Fc(d) => d.backward(&layer.weights, input, &grad_pre, &mut g.layers[li], gi),
                            LayerOp::Pool(_) => unreachable!(),
                        }
                    }
                }
                grad_out = grad_in;
            }
        }
        loss
    }

    fn batch_grads(&self, batch: &[&SnnSample]) -> Result<(SnnGrads, f64)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in batch {
            self.check_input(&s.input)?;
        }
        let partial: Vec<(SnnGrads, f64)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = SnnGrads::zeros_like(self);
                let loss = chunk.iter().map(|s| self.sample_grads(s, &mut g)).sum();
                (g, loss)
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut total = SnnGrads::zeros_like(self);
        let mut loss = 0.0;
        for (g, l) in &partial {
            total.add_scaled(g, scale);
            loss += l * scale;
        }
        // regularizer: lambda * ||W||^2
        for (gl, layer) in total.layers.iter_mut().zip(&self.layers) {
            for (gw, w) in gl.iter_mut().zip(&layer.weights) {
                *gw += 2.0 * self.lambda * w;
            }
        }
        for (gw, w) in total.decode_w.iter_mut().zip(&self.decode_w) {
            *gw += 2.0 * self.lambda * w;
        }
        loss += self.lambda * self.weight_norm_sq();
        Ok((total, loss))
    }

    fn param_groups(&mut self) -> Vec<&mut [f64]> {
        let mut groups: Vec<&mut [f64]> = self.layers.iter_mut().map(|l| l.weights.as_mut_slice()).collect();
        groups.push(&mut self.decode_w);
        groups.push(&mut self.decode_b);
        groups
    }
}

/// `sum_i (pred_i - gt_i)^2 + lambda * sum_k ||W_k||^2`.
pub fn snn_loss(pred: &BBox, gt: &BBox, net: &SnnNetwork) -> f64 {
    let data: f64 = pred
        .to_array()
        .iter()
        .zip(gt.to_array())
        .map(|(p, g)| (p - g).powi(2))
        .sum();
    data + net.lambda * net.weight_norm_sq()
}

/// Gradients of the batch-mean loss, and the loss itself.
pub fn bptt_grads(net: &SnnNetwork, batch: &[SnnSample]) -> Result<(SnnGrads, f64)> {
    let refs: Vec<&SnnSample> = batch.iter().collect();
    net.batch_grads(&refs)
}

/// Adam training on minibatches; returns the network and per-epoch mean loss.
pub fn snn_train(mut net: SnnNetwork, dataset: &[SnnSample], cfg: &TrainConfig) -> Result<(SnnNetwork, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("SNN training set is empty".into()));
    }
    let sizes: Vec<usize> = net.param_groups().iter().map(|g| g.len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SnnSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (g, loss) = net.batch_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("SNN loss in epoch {}", epoch + 1)));
            }
            total += loss * batch.len() as f64;
            let grads = vec_groups(g);
            adam.step(&mut net.param_groups(), &grads);
        }
        history.push(total / dataset.len() as f64);
    }
    Ok((net, history))
}

/// Default size of the calibration set.
pub const CALIBRATION_INPUTS: usize = 64;

/// Up to `n` inputs taken at an even stride, for [`SnnNetwork::calibrate`].
pub fn calibration_inputs(dataset: &[SnnSample], n: usize) -> Vec<&SpikeTensor> {
    let stride = dataset.len().div_ceil(n.max(1)).max(1);
    dataset.iter().step_by(stride).map(|s| &s.input).collect()
}

fn vec_groups(g: SnnGrads) -> Vec<Vec<f64>> {
    let mut v = g.layers;
    v.push(g.decode_w);
    v.push(g.decode_b);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lif_decay_without_spike() {
        let p = LifParams {
            tau: 2.0,
            dt: 1.0,
            ..LifParams::default()
        };
        let (s, o) = lif_step(&LifState { u: vec![1.0] }, &[0.0], &p);
        assert!((s.u[0] - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert_eq!(o, vec![0]);
    }

    #[test]
    fn lif_threshold_and_reset() {
        let p = LifParams {
            tau: f64::INFINITY,
            ..LifParams::default()
        };
        assert_eq!(p.decay(), 1.0);
        let (s, o) = lif_step(&LifState { u: vec![0.9] }, &[0.3], &p);
        assert_eq!(o, vec![1]);
        assert_eq!(s.u, vec![0.0]);
        // H(0) = 0: reaching exactly v_th does not fire
        let (s, o) = lif_step(&LifState { u: vec![0.5] }, &[0.5], &p);
        assert_eq!(o, vec![0]);
        assert_eq!(s.u, vec![1.0]);
    }

    #[test]
    fn resting_neuron_stays_at_rest() {
        let p = LifParams::default();
        let mut s = LifState::at_rest(3, &p);
        for _ in 0..50 {
            let (n, o) = lif_step(&s, &[0.0; 3], &p);
            assert_eq!(o, vec![0; 3]);
            s = n;
        }
        assert_eq!(s.u, vec![0.0; 3]);
    }

    #[test]
    fn surrogate_is_rectangle() {
        let p = LifParams::with_threshold(1.0);
        assert_eq!(p.surrogate(1.0), 1.0);
        assert_eq!(p.surrogate(1.49), 1.0);
        assert_eq!(p.surrogate(1.5), 0.0);
        assert_eq!(p.surrogate(0.4), 0.0);
        let inf = LifParams::with_threshold(f64::INFINITY);
        assert_eq!(inf.surrogate(1e300), 0.0);
    }

    fn enc() -> SnnInputEncoding {
        SnnInputEncoding {
            width: 4,
            height: 3,
            dt_ns: 10,
            steps: 5,
        }
    }

    #[test]
    fn encoding_examples() {
        let e = enc();
        assert_eq!(encode_events(&[], &e, 100).spike_count(), 0);
        let on = Event {
            x: 2,
            y: 1,
            p: 1,
            t_ns: 100,
        };
        let t = encode_events(&[on], &e, 100);
        assert_eq!(t.get(0, 0, 1, 2), 1);
        assert_eq!(t.spike_count(), 1);
        let again = Event { t_ns: 105, ..on };
        let t = encode_events(&[on, again], &e, 100);
        assert_eq!(t.spike_count(), 1);
        let off = Event { p: -1, t_ns: 149, ..on };
        let late = Event { t_ns: 150, ..on };
        let early = Event { t_ns: 99, ..on };
        let t = encode_events(&[early, off, late], &e, 100);
        assert_eq!(t.spike_count(), 1);
        assert_eq!(t.get(4, 1, 1, 2), 1);
    }

    fn tiny_spec() -> SnnSpec {
        SnnSpec {
            input: Shape3::new(2, 3, 4),
            layers: vec![LayerSpec::Fc { units: 5 }, LayerSpec::Fc { units: 3 }],
            lif: LifParams::default(),
            time_steps: 6,
            decode_window: 3,
            lambda: 0.0,
            init_gain: 2.0,
        }
    }

    #[test]
    fn zero_input_decodes_bias() {
        let mut net = SnnNetwork::init(&tiny_spec(), 1).unwrap();
        net.decode_b = vec![0.0; 4];
        let x = SpikeTensor::zeros(6, Shape3::new(2, 3, 4));
        assert_eq!(net.forward(&x).unwrap(), BBox::default());
        let bad = SpikeTensor::zeros(5, Shape3::new(2, 3, 4));
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn infinite_threshold_silences_network() {
        let mut spec = tiny_spec();
        spec.lif = LifParams::with_threshold(f64::INFINITY);
        let mut net = SnnNetwork::init(&spec, 3).unwrap();
        net.decode_b = vec![0.0; 4];
        let mut x = SpikeTensor::zeros(6, Shape3::new(2, 3, 4));
        for t in 0..6 {
            x.set(t, 0, 1, 1);
            x.set(t, 1, 2, 3);
        }
        assert_eq!(net.forward(&x).unwrap(), BBox::default());
    }

    #[test]
    fn readout_is_linear_in_counts() {
        let net = SnnNetwork::init(&tiny_spec(), 4).unwrap();
        let counts = [1.0, 0.0, 3.0];
        let doubled = [2.0, 0.0, 6.0];
        let b = BBox::from_array([0.5, 0.5, 0.25, 0.25]);
        let y1 = net.decode(&counts).to_array();
        let y2 = net.decode(&doubled).to_array();
        for i in 0..4 {
            let (a, c) = (y1[i] - b.to_array()[i], y2[i] - b.to_array()[i]);
            assert!((c - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let mut spec = tiny_spec();
        let net = SnnNetwork::init(&spec, 0).unwrap();
        let g = BBox::new(0.3, 0.4, 0.1, 0.2);
        assert_eq!(snn_loss(&g, &g, &net), 0.0);
        let p = BBox::new(1.3, 0.4, 0.1, 0.2);
        assert!((snn_loss(&p, &g, &net) - 1.0).abs() < 1e-12);
        spec.lambda = 0.5;
        let net = SnnNetwork::init(&spec, 0).unwrap();
        let brute: f64 = net
            .layer_weights()
            .iter()
            .flat_map(|w| w.iter())
            .chain(net.decode_weights())
            .map(|w| w * w)
            .sum();
        assert!((snn_loss(&g, &g, &net) - 0.5 * brute).abs() < 1e-12);
    }

    #[test]
    fn zero_input_zero_init_has_zero_grads() {
        let mut net = SnnNetwork::init(&tiny_spec(), 0).unwrap();
        for i in 0..2 {
            net.layer_weights_mut(i).fill(0.0);
        }
        net.decode_w.fill(0.0);
        net.decode_b.fill(0.0);
        let sample = SnnSample {
            input: SpikeTensor::zeros(6, Shape3::new(2, 3, 4)),
            target: BBox::default(),
        };
        let (g, loss) = bptt_grads(&net, &[sample]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_rejects_empty_and_respects_zero_lr() {
        let net = SnnNetwork::init(&tiny_spec(), 0).unwrap();
        assert!(snn_train(net.clone(), &[], &TrainConfig::default()).is_err());
        let mut x = SpikeTensor::zeros(6, Shape3::new(2, 3, 4));
        x.set(0, 0, 0, 0);
        let data = vec![SnnSample {
            input: x,
            target: BBox::new(0.1, 0.2, 0.3, 0.4),
        }];
        let mut cfg = TrainConfig::default();
        cfg.adam.lr = 0.0;
        cfg.epochs = 3;
        let (trained, hist) = snn_train(net.clone(), &data, &cfg).unwrap();
        assert_eq!(trained, net);
        assert_eq!(hist.len(), 3);
    }
}
