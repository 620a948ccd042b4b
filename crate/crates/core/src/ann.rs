//! Frame-based tracker: a small ReLU CNN regressing `[x, y, w, h]`,
//! trained by backpropagation on a squared loss with L2 weight decay.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::layers::{build_stack, parse_arch, LayerOp, LayerSpec, Shape3, Tensor3};
use crate::optim::{Adam, TrainConfig};
use crate::snn::GRAD_CHUNK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(pre > 0.0)),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnSpec {
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
    /// Activation of the last layer; hidden layers always use ReLU.
    pub output_activation: Activation,
    pub lambda: f64,
}

impl AnnSpec {
    /// `Input(Cx32x32)-8C3S2-MP2-16C3S1-FC64-FC4`.
    pub fn desk_default(channels: usize) -> Self {
        Self {
            input: Shape3::new(channels, 32, 32),
            layers: parse_arch("Input-8C3S2-MP2-16C3S1-FC64-FC4").expect("valid"),
            output_activation: Activation::Identity,
            lambda: 1e-4,
        }
    }

    /// The full-size architecture (`Input-32C3S3-MP2-...-FC1024-FC4`).
    pub fn full_size(input: Shape3) -> Self {
        Self {
            input,
            layers: parse_arch("Input-32C3S3-MP2-64C3S1-MP2-128C3S1-128C1S1-MP2-256C2S2-FC1024-FC4").expect("valid"),
            output_activation: Activation::Identity,
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AnnLayer {
    pub spec: LayerSpec,
    pub op: LayerOp,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnNetwork {
    pub(crate) input: Shape3,
    pub(crate) layers: Vec<AnnLayer>,
    pub output_activation: Activation,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl AnnGrads {
    fn zeros_like(net: &AnnNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Weights then bias for each layer in order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w);
            v.extend(b);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnSample {
    pub input: Tensor3,
    pub target: BBox,
}

/// Single-channel tensor view of a frame.
pub fn frame_tensor(frame: &Frame) -> Tensor3 {
    Tensor3 {
        shape: Shape3::new(1, frame.height(), frame.width()),
        data: frame.data().to_vec(),
    }
}

struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each weighted layer.
    pre: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    output: Vec<f64>,
}

impl AnnNetwork {
    pub fn init(spec: &AnnSpec, seed: u64) -> Result<Self> {
        let ops = build_stack(spec.input, &spec.layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ops.len();
        let mut layers = Vec::with_capacity(n);
        for (i, (s, op)) in spec.layers.iter().zip(ops).enumerate() {
            let last = i + 1 == n;
            let gain = if last { 0.1 } else { 1.0 };
            let bound = gain * (6.0 / op.fan_in().max(1) as f64).sqrt();
            let weights = (0..op.weight_len()).map(|_| rng.random_range(-bound..=bound)).collect();
            let mut bias = vec![0.0; op.bias_len()];
            if last && bias.len() == 4 {
                bias = vec![0.5, 0.5, 0.25, 0.25];
            }
            layers.push(AnnLayer {
                spec: *s,
                op,
                weights,
                bias,
            });
        }
        Ok(Self {
            input: spec.input,
            layers,
            output_activation: spec.output_activation,
            lambda: spec.lambda,
        })
    }

    pub fn from_parts(
        input: Shape3,
        specs: Vec<LayerSpec>,
        params: Vec<(Vec<f64>, Vec<f64>)>,
        output_activation: Activation,
        lambda: f64,
    ) -> Result<Self> {
        let ops = build_stack(input, &specs)?;
        if params.len() != ops.len() {
            return Err(Error::dims(ops.len(), params.len()));
        }
        let mut layers = Vec::new();
        for ((spec, op), (weights, bias)) in specs.into_iter().zip(ops).zip(params) {
            let want_b = if op.has_weights() { op.bias_len() } else { 0 };
            if weights.len() != op.weight_len() || bias.len() != want_b {
                return Err(Error::dims(
                    format!("{}+{}", op.weight_len(), want_b),
                    format!("{}+{}", weights.len(), bias.len()),
                ));
            }
            layers.push(AnnLayer {
                spec,
                op,
                weights,
                bias,
            });
        }
        Ok(Self {
            input,
            layers,
            output_activation,
            lambda,
        })
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input.len(), |l| l.op.output().len())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub(crate) fn layer_ops(&self) -> Vec<LayerOp> {
        self.layers.iter().map(|l| l.op).collect()
    }

    pub fn layer_params(&self) -> Vec<(&[f64], &[f64])> {
        self.layers
            .iter()
            .map(|l| (l.weights.as_slice(), l.bias.as_slice()))
            .collect()
    }

    pub fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = &mut self.layers[i];
        (&mut l.weights, &mut l.bias)
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights.iter()).map(|w| w * w).sum()
    }

    fn check_input(&self, input: &Tensor3) -> Result<()> {
        if input.shape != self.input {
            return Err(Error::dims(self.input, input.shape));
        }
        Ok(())
    }

    fn activation_of(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    fn run(&self, input: &[f64], record: bool) -> (Vec<f64>, Option<Trace>) {
        let mut trace = record.then(|| Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            argmax: Vec::new(),
            output: Vec::new(),
        });
        let mut cur = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let n_out = layer.op.output().len();
            let mut pre = vec![0.0; n_out];
            let mut arg = Vec::new();
            let out = match layer.op {
                LayerOp::Pool(p) => {
                    arg = vec![0; n_out];
                    p.forward(&cur, &mut pre, &mut arg);
                    pre.clone()
                }
                LayerOp::Conv(c) => {
                    let plane = n_out / c.out_channels;
                    for (oc, b) in layer.bias.iter().enumerate() {
                        pre[oc * plane..(oc + 1) * plane].fill(*b);
                    }
                    c.forward(&layer.weights, &cur, &mut pre);
                    let act = self.activation_of(i);
                    pre.iter().map(|&v| act.apply(v)).collect()
                }
                LayerOp::Fc(d) => {
                    pre.copy_from_slice(&layer.bias);
                    d.forward(&layer.weights, &cur, &mut pre);
                    let act = self.activation_of(i);
                    pre.iter().map(|&v| act.apply(v)).collect()
                }
            };
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(std::mem::replace(&mut cur, out));
                tr.pre.push(pre);
                tr.argmax.push(arg);
            } else {
                cur = out;
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.output = cur.clone();
        }
        (cur, trace)
    }

    /// Raw output activations.
    pub fn forward(&self, input: &Tensor3) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(&input.data, false).0)
    }

    /// Forward pass interpreted as a box; the network must have 4 outputs.
    pub fn predict(&self, input: &Tensor3) -> Result<BBox> {
        let out = self.forward(input)?;
        let arr: [f64; 4] = out
            .as_slice()
            .try_into()
            .map_err(|_| Error::dims("4 outputs", out.len()))?;
        Ok(BBox::from_array(arr))
    }

    /// Adds one sample's data-term gradients into `g`; returns its loss.
    fn sample_grads(&self, sample: &AnnSample, g: &mut AnnGrads) -> f64 {
        let (_, trace) = self.run(&sample.input.data, true);
        let tr = trace.expect("recorded");
        let gt = sample.target.to_array();
        let mut loss = 0.0;
        let mut grad_out: Vec<f64> = tr
            .output
            .iter()
            .zip(gt)
            .map(|(p, t)| {
                loss += (p - t).powi(2);
                2.0 * (p - t)
            })
            .collect();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &tr.inputs[i];
            let need_in = i > 0;
            let mut grad_in = vec![0.0; if need_in { input.len() } else { 0 }];
            match layer.op {
                LayerOp::Pool(p) => {
                    if need_in {
                        p.backward(&grad_out, &tr.argmax[i], &mut grad_in);
                    }
                }
                LayerOp::Conv(_) | LayerOp::Fc(_) => {
                    let act = self.activation_of(i);
                    let grad_pre: Vec<f64> = grad_out
                        .iter()
                        .zip(&tr.pre[i])
                        .map(|(g, &p)| g * act.derivative(p))
                        .collect();
                    let gi = need_in.then_some(grad_in.as_mut_slice());
                    match layer.op {
                        LayerOp::Conv(c) => {
                            let plane = grad_pre.len() / c.out_channels;
                            for (oc, gb) in g.biases[i].iter_mut().enumerate() {
                                *gb += grad_pre[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
                            }
                            c.backward(&layer.weights, input, &grad_pre, &mut g.weights[i], gi);
                        }
                        LayerOp::Fc(d) => {
                            for (gb, gp) in g.biases[i].iter_mut().zip(&grad_pre) {
                                *gb += gp;
                            }
                            d.backward(&layer.weights, input, &grad_pre, &mut g.weights[i], gi);
                        }
                        LayerOp::Pool(_) => unreachable!(),
                    }
                }
            }
            grad_out = grad_in;
        }
        loss
    }

    fn batch_grads(&self, batch: &[&AnnSample]) -> Result<(AnnGrads, f64)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in batch {
            self.check_input(&s.input)?;
            if s.target.to_array().len() != self.output_len() {
                return Err(Error::dims(self.output_len(), 4));
            }
        }
        let partial: Vec<(AnnGrads, f64)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = AnnGrads::zeros_like(self);
                let loss = chunk.iter().map(|s| self.sample_grads(s, &mut g)).sum();
                (g, loss)
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut total = AnnGrads::zeros_like(self);
        let mut loss = 0.0;
        for (g, l) in &partial {
            for (a, b) in total.weights.iter_mut().zip(&g.weights) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
            }
            for (a, b) in total.biases.iter_mut().zip(&g.biases) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
            }
            loss += scale * l;
        }
        for (gw, layer) in total.weights.iter_mut().zip(&self.layers) {
            for (g, w) in gw.iter_mut().zip(&layer.weights) {
                *g += 2.0 * self.lambda * w;
            }
        }
        loss += self.lambda * self.weight_norm_sq();
        Ok((total, loss))
    }

    fn param_groups(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.weights);
            v.push(&mut l.bias);
        }
        v
    }
}

/// `sum_i (pred_i - gt_i)^2 + lambda * sum_k ||W_k||^2`.
pub fn ann_loss(pred: &BBox, gt: &BBox, net: &AnnNetwork) -> f64 {
    let data: f64 = pred
        .to_array()
        .iter()
        .zip(gt.to_array())
        .map(|(p, g)| (p - g).powi(2))
        .sum();
    data + net.lambda * net.weight_norm_sq()
}

/// Exact gradients of the batch-mean loss, and the loss itself.
pub fn ann_grads(net: &AnnNetwork, batch: &[AnnSample]) -> Result<(AnnGrads, f64)> {
    let refs: Vec<&AnnSample> = batch.iter().collect();
    net.batch_grads(&refs)
}

/// Adam training on minibatches; returns the network and per-epoch mean loss.
pub fn ann_train(mut net: AnnNetwork, dataset: &[AnnSample], cfg: &TrainConfig) -> Result<(AnnNetwork, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("ANN training set is empty".into()));
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
            let batch: Vec<&AnnSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (g, loss) = net.batch_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("ANN loss in epoch {}", epoch + 1)));
            }
            total += loss * batch.len() as f64;
            let mut grads = Vec::new();
            for (w, b) in g.weights.into_iter().zip(g.biases) {
                grads.push(w);
                grads.push(b);
            }
            adam.step(&mut net.param_groups(), &grads);
        }
        history.push(total / dataset.len() as f64);
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_neuron(w: [f64; 2], b: f64) -> AnnNetwork {
        AnnNetwork::from_parts(
            Shape3::new(2, 1, 1),
            vec![LayerSpec::Fc { units: 1 }],
            vec![(w.to_vec(), vec![b])],
            Activation::Relu,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_relu_neuron() {
        let x = Tensor3::new(Shape3::new(2, 1, 1), vec![1.0, 1.0]).unwrap();
        assert_eq!(single_neuron([1.0, 2.0], 0.5).forward(&x).unwrap(), vec![3.5]);
        assert_eq!(single_neuron([-1.0, -2.0], 0.5).forward(&x).unwrap(), vec![0.0]);
        let bad = Tensor3::new(Shape3::new(1, 1, 2), vec![1.0, 1.0]).unwrap();
        assert!(single_neuron([1.0, 2.0], 0.5).forward(&bad).is_err());
    }

    #[test]
    fn loss_examples() {
        let mut spec = AnnSpec::desk_default(1);
        spec.lambda = 0.0;
        let net = AnnNetwork::init(&spec, 0).unwrap();
        let g = BBox::new(0.5, 0.5, 0.2, 0.2);
        assert_eq!(ann_loss(&g, &g, &net), 0.0);
        assert!((ann_loss(&BBox::new(0.5, 1.5, 0.2, 0.2), &g, &net) - 1.0).abs() < 1e-12);

        let mut net = single_neuron([1.0, -2.0], 3.0);
        net.lambda = 0.1;
        // biases are not penalized: 0.1 * (1 + 4)
        let p = BBox::default();
        assert!((ann_loss(&p, &p, &net) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient_is_two_lambda_w() {
        let mut spec = AnnSpec::desk_default(1);
        spec.lambda = 0.3;
        let net = AnnNetwork::init(&spec, 5).unwrap();
        let x = Tensor3::zeros(spec.input);
        let (g0, _) = ann_grads(
            &AnnNetwork {
                lambda: 0.0,
                ..net.clone()
            },
            &[AnnSample {
                input: x.clone(),
                target: BBox::default(),
            }],
        )
        .unwrap();
        let (g1, _) = ann_grads(
            &net,
            &[AnnSample {
                input: x,
                target: BBox::default(),
            }],
        )
        .unwrap();
        for (l, (w, _)) in net.layer_params().iter().enumerate() {
            for k in 0..w.len() {
                let d = g1.weights[l][k] - g0.weights[l][k];
                assert!((d - 0.6 * w[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_no_data_gradient() {
        let mut spec = AnnSpec::desk_default(1);
        spec.lambda = 0.0;
        let net = AnnNetwork::init(&spec, 2).unwrap();
        let x = Tensor3::new(
            spec.input,
            (0..spec.input.len()).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        let target = net.predict(&x).unwrap();
        let (g, loss) = ann_grads(&net, &[AnnSample { input: x, target }]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }
}
