//! Layer lists, parameters, and reverse-mode differentiation through them.
//!
//! A model is an ordered list of layers. Each layer consumes the output of
//! the previous one; a `Concat { skip }` layer additionally appends the
//! channels of layer `skip`'s output, which is how U-Net skip connections are
//! expressed without a general graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{self, Activation};
use super::loss::bce_loss;
use super::scalar::Scalar;
use super::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    MaxPool2,
    UpConv2,
    Upsample2,
    Relu,
    Sigmoid,
    /// Appends the output channels of layer `skip` to the running activation.
    Concat { skip: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv3x3 => "conv3x3",
            LayerKind::Conv1x1 => "conv1x1",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::UpConv2 => "upconv2",
            LayerKind::Upsample2 => "upsample2",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Concat { .. } => "concat",
        }
    }

    pub fn from_name(name: &str, skip: Option<usize>) -> Result<Self> {
        Ok(match (name, skip) {
            ("conv3x3", None) => LayerKind::Conv3x3,
            ("conv1x1", None) => LayerKind::Conv1x1,
            ("maxpool2", None) => LayerKind::MaxPool2,
            ("upconv2", None) => LayerKind::UpConv2,
            ("upsample2", None) => LayerKind::Upsample2,
            ("relu", None) => LayerKind::Relu,
            ("sigmoid", None) => LayerKind::Sigmoid,
            ("concat", Some(skip)) => LayerKind::Concat { skip },
            _ => {
                return Err(Error::Parse {
                    context: "layer kind".into(),
                    reason: format!("unknown layer {name:?} (skip {skip:?})"),
                })
            }
        })
    }

    fn kernel(&self) -> Option<usize> {
        match self {
            LayerKind::Conv3x3 => Some(3),
            LayerKind::Conv1x1 => Some(1),
            LayerKind::UpConv2 => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv3x3,
            in_channels,
            out_channels,
        }
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv1x1,
            in_channels,
            out_channels,
        }
    }

    pub fn upconv2(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::UpConv2,
            in_channels,
            out_channels,
        }
    }

    fn passthrough(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn maxpool2(channels: usize) -> Self {
        Self::passthrough(LayerKind::MaxPool2, channels)
    }

    pub fn upsample2(channels: usize) -> Self {
        Self::passthrough(LayerKind::Upsample2, channels)
    }

    pub fn relu(channels: usize) -> Self {
        Self::passthrough(LayerKind::Relu, channels)
    }

    pub fn sigmoid(channels: usize) -> Self {
        Self::passthrough(LayerKind::Sigmoid, channels)
    }

    pub fn concat(in_channels: usize, skip: usize, skip_channels: usize) -> Self {
        Self {
            kind: LayerKind::Concat { skip },
            in_channels,
            out_channels: in_channels + skip_channels,
        }
    }

    pub fn weight_len(&self) -> usize {
        match self.kind.kernel() {
            Some(k) => k * k * self.in_channels * self.out_channels,
            None => 0,
        }
    }

    pub fn bias_len(&self) -> usize {
        if self.kind.kernel().is_some() {
            self.out_channels
        } else {
            0
        }
    }

    pub fn has_params(&self) -> bool {
        self.kind.kernel().is_some()
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 9 * self.in_channels,
            _ => self.in_channels,
        }
    }
}

/// Weights and bias of one layer; both empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weights: vec![T::zero(); spec.weight_len()],
            bias: vec![T::zero(); spec.bias_len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Per-layer parameter gradients, shaped like [`ModelParams::params`].
pub type Gradients<T> = Vec<LayerParams<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<LayerParams<T>>,
    pub rng_seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases, from a seeded ChaCha stream.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|spec| {
                let mut p = LayerParams::zeros(spec);
                if spec.has_params() {
                    let limit = (6.0 / spec.fan_in() as f64).sqrt();
                    for w in &mut p.weights {
                        *w = T::from_f64(rng.random_range(-limit..limit));
                    }
                }
                p
            })
            .collect();
        Ok(Self {
            layers,
            params,
            rng_seed: seed,
        })
    }

    pub fn zeros(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let params = layers.iter().map(LayerParams::zeros).collect();
        Ok(Self {
            layers,
            params,
            rng_seed: seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_layers(&self.layers)?;
        if self.params.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers but {} parameter blocks",
                self.layers.len(),
                self.params.len()
            )));
        }
        for (i, (spec, p)) in self.layers.iter().zip(&self.params).enumerate() {
            if p.weights.len() != spec.weight_len() || p.bias.len() != spec.bias_len() {
                return Err(Error::SizeMismatch(format!(
                    "layer {i} ({}) expects {}+{} values, has {}+{}",
                    spec.kind.name(),
                    spec.weight_len(),
                    spec.bias_len(),
                    p.weights.len(),
                    p.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    weights: p.weights.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    bias: p.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(Error::NonFinite("model parameters"))
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.layers.iter().map(LayerParams::zeros).collect()
    }

    /// Output `(height, width, channels)` of every layer for an input of the
    /// given spatial size. Checks pooling parity and skip alignment.
    pub fn infer_shapes(&self, height: usize, width: usize) -> Result<Vec<[usize; 3]>> {
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.layers.len());
        let mut cur = [height, width, self.input_channels()];
        for (i, spec) in self.layers.iter().enumerate() {
            cur = match spec.kind {
                LayerKind::MaxPool2 => {
                    if cur[0] % 2 != 0 || cur[1] % 2 != 0 {
                        return Err(Error::Shape(format!(
                            "layer {i}: cannot pool odd spatial dims {}x{}",
                            cur[0], cur[1]
                        )));
                    }
                    [cur[0] / 2, cur[1] / 2, spec.out_channels]
                }
                LayerKind::UpConv2 | LayerKind::Upsample2 => {
                    [cur[0] * 2, cur[1] * 2, spec.out_channels]
                }
                LayerKind::Concat { skip } => {
                    let s = shapes[skip];
                    if [s[0], s[1]] != [cur[0], cur[1]] {
                        return Err(Error::Shape(format!(
                            "layer {i}: skip from layer {skip} is {}x{}, stream is {}x{}",
                            s[0], s[1], cur[0], cur[1]
                        )));
                    }
                    [cur[0], cur[1], spec.out_channels]
                }
                _ => [cur[0], cur[1], spec.out_channels],
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Inference pass; activations are dropped as soon as nothing reads them.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_prefix(input, self.layers.len())
    }

    /// Runs only the first `n_layers` layers and returns the last output.
    pub fn forward_prefix(&self, input: &Tensor4<T>, n_layers: usize) -> Result<Tensor4<T>> {
        let n_layers = n_layers.min(self.layers.len());
        if n_layers == 0 {
            return Ok(input.clone());
        }
        let last_use = self.last_uses(n_layers);
        let mut outputs: Vec<Option<Tensor4<T>>> = vec![None; n_layers];
        for i in 0..n_layers {
            let out = {
                let prev = if i == 0 {
                    input
                } else {
                    outputs[i - 1].as_ref().expect("previous activation retained")
                };
                let (out, _) = self.apply(i, prev, |s| {
                    outputs[s].as_ref().expect("skip activation retained")
                })?;
                out
            };
            outputs[i] = Some(out);
            for j in 0..i {
                if last_use[j] == i {
                    outputs[j] = None;
                }
            }
        }
        Ok(outputs.pop().flatten().expect("final activation"))
    }

    fn last_uses(&self, n_layers: usize) -> Vec<usize> {
        let mut last = (0..n_layers).map(|i| i + 1).collect::<Vec<_>>();
        for (j, spec) in self.layers.iter().enumerate().take(n_layers) {
            if let LayerKind::Concat { skip } = spec.kind {
                last[skip] = last[skip].max(j);
            }
        }
        last
    }

    fn apply<'a>(
        &self,
        i: usize,
        prev: &Tensor4<T>,
        skip_of: impl Fn(usize) -> &'a Tensor4<T>,
    ) -> Result<(Tensor4<T>, Option<Vec<u32>>)>
    where
        T: 'a,
    {
        let spec = &self.layers[i];
        let p = &self.params[i];
        if prev.channels() != spec.in_channels {
            return Err(Error::Shape(format!(
                "layer {i} ({}) expects {} channels, got {}",
                spec.kind.name(),
                spec.in_channels,
                prev.channels()
            )));
        }
        Ok(match spec.kind {
            LayerKind::Conv3x3 => (layers::conv_forward(prev, &p.weights, &p.bias, 3)?, None),
            LayerKind::Conv1x1 => (layers::conv_forward(prev, &p.weights, &p.bias, 1)?, None),
            LayerKind::MaxPool2 => {
                let (out, arg) = layers::maxpool2_forward(prev)?;
                (out, Some(arg))
            }
            LayerKind::UpConv2 => (layers::upconv2_forward(prev, &p.weights, &p.bias)?, None),
            LayerKind::Upsample2 => (layers::upsample2_forward(prev), None),
            LayerKind::Relu => (layers::activation_forward(prev, Activation::Relu), None),
            LayerKind::Sigmoid => (layers::activation_forward(prev, Activation::Sigmoid), None),
            LayerKind::Concat { skip } => (layers::concat_forward(prev, skip_of(skip))?, None),
        })
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    for (i, spec) in layers.iter().enumerate() {
        if spec.in_channels == 0 || spec.out_channels == 0 {
            return Err(Error::Shape(format!("layer {i} has zero channels")));
        }
        if i > 0 && layers[i - 1].out_channels != spec.in_channels {
            return Err(Error::Shape(format!(
                "layer {i} ({}) takes {} channels but layer {} emits {}",
                spec.kind.name(),
                spec.in_channels,
                i - 1,
                layers[i - 1].out_channels
            )));
        }
        match spec.kind {
            LayerKind::Concat { skip } => {
                if skip >= i {
                    return Err(Error::Shape(format!(
                        "layer {i} concatenates non-earlier layer {skip}"
                    )));
                }
                if spec.out_channels != spec.in_channels + layers[skip].out_channels {
                    return Err(Error::Shape(format!(
                        "layer {i} concat channel count is inconsistent"
                    )));
                }
            }
            LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::UpConv2 => {}
            _ => {
                if spec.in_channels != spec.out_channels {
                    return Err(Error::Shape(format!(
                        "layer {i} ({}) cannot change channel count",
                        spec.kind.name()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub input: Tensor4<T>,
    pub outputs: Vec<Tensor4<T>>,
    argmax: Vec<Option<Vec<u32>>>,
}

/// Gradients from a backward pass.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub params: Gradients<T>,
    pub input: Tensor4<T>,
}

/// A model plus the state of its most recent training forward pass.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    pub model: ModelParams<T>,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(model: ModelParams<T>) -> Self {
        Self { model, trace: None }
    }

    pub fn into_model(self) -> ModelParams<T> {
        self.model
    }

    /// Forward pass that records every activation for a later backward pass.
    pub fn forward(&mut self, input: &Tensor4<T>) -> Result<&Tensor4<T>> {
        input.ensure_finite("network input")?;
        let n = self.model.layers.len();
        let mut outputs: Vec<Tensor4<T>> = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        for i in 0..n {
            let prev = if i == 0 { input } else { &outputs[i - 1] };
            let (out, arg) = self.model.apply(i, prev, |s| &outputs[s])?;
            outputs.push(out);
            argmax.push(arg);
        }
        self.trace = Some(Trace {
            input: input.clone(),
            outputs,
            argmax,
        });
        let trace = self.trace.as_ref().expect("trace just stored");
        Ok(trace.outputs.last().unwrap_or(&trace.input))
    }

    pub fn trace(&self) -> Option<&Trace<T>> {
        self.trace.as_ref()
    }

    /// Output of layer `i` from the last recorded forward pass.
    pub fn activation(&self, i: usize) -> Option<&Tensor4<T>> {
        self.trace.as_ref().and_then(|t| t.outputs.get(i))
    }

    /// Back-propagates `grad_output` (d loss / d network output) through the
    /// recorded pass. Consumes the trace.
    pub fn backward(&mut self, grad_output: &Tensor4<T>) -> Result<Backward<T>> {
        let trace = self.trace.take().ok_or(Error::NoForwardPass)?;
        let n = self.model.layers.len();
        if n == 0 {
            return Ok(Backward {
                params: Vec::new(),
                input: grad_output.clone(),
            });
        }
        let out_dims = trace.outputs[n - 1].dims();
        if grad_output.dims() != out_dims {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.dims(),
                out_dims
            )));
        }
        self.backward_from(&trace, n - 1, grad_output.clone())
    }

    /// Forward pass, mean BCE against `target`, and exact gradients. When the
    /// last layer is a sigmoid the two derivatives are fused into `(p - t) / N`.
    pub fn loss_and_gradients(
        &mut self,
        input: &Tensor4<T>,
        target: &Tensor4<T>,
    ) -> Result<(T, Gradients<T>)> {
        let pred = self.forward(input)?.clone();
        let loss = bce_loss(&pred, target)?;
        let n = self.model.layers.len();
        let fused = n > 0 && self.model.layers[n - 1].kind == LayerKind::Sigmoid;
        if !fused {
            let grad = super::loss::bce_grad(&pred, target)?;
            return Ok((loss, self.backward(&grad)?.params));
        }
        let trace = self.trace.take().ok_or(Error::NoForwardPass)?;
        let count = T::from_f64(pred.len() as f64);
        let dz: Vec<T> = pred
            .values()
            .iter()
            .zip(target.values())
            .map(|(&p, &t)| (p - t) / count)
            .collect();
        let dz = Tensor4::from_vec(pred.dims(), dz)?;
        if n == 1 {
            return Ok((loss, self.model.zero_gradients()));
        }
        let back = self.backward_from(&trace, n - 2, dz)?;
        Ok((loss, back.params))
    }

    fn backward_from(
        &self,
        trace: &Trace<T>,
        start: usize,
        grad: Tensor4<T>,
    ) -> Result<Backward<T>> {
        let model = &self.model;
        let mut pending: Vec<Option<Tensor4<T>>> = vec![None; model.layers.len()];
        pending[start] = Some(grad);
        let mut params = model.zero_gradients();
        let mut grad_input = None;
        for i in (0..=start).rev() {
            let spec = &model.layers[i];
            let input = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let g = match pending[i].take() {
                Some(g) => g,
                None => Tensor4::zeros(trace.outputs[i].dims()),
            };
            let p = &model.params[i];
            let gi = match spec.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = if spec.kind == LayerKind::Conv3x3 { 3 } else { 1 };
                    let (gi, gw, gb) = layers::conv_backward(input, &p.weights, &g, k)?;
                    params[i] = LayerParams {
                        weights: gw,
                        bias: gb,
                    };
                    gi
                }
                LayerKind::UpConv2 => {
                    let (gi, gw, gb) = layers::upconv2_backward(input, &p.weights, &g)?;
                    params[i] = LayerParams {
                        weights: gw,
                        bias: gb,
                    };
                    gi
                }
                LayerKind::MaxPool2 => {
                    let arg = trace.argmax[i].as_ref().expect("pool argmax recorded");
                    layers::maxpool2_backward(&g, arg, input.dims())?
                }
                LayerKind::Upsample2 => layers::upsample2_backward(&g),
                LayerKind::Relu => {
                    layers::activation_backward(&trace.outputs[i], &g, Activation::Relu)
                }
                LayerKind::Sigmoid => {
                    layers::activation_backward(&trace.outputs[i], &g, Activation::Sigmoid)
                }
                LayerKind::Concat { skip } => {
                    let (ga, gb) = layers::concat_backward(&g, spec.in_channels);
                    accumulate(&mut pending[skip], gb);
                    ga
                }
            };
            if i == 0 {
                grad_input = Some(gi);
            } else {
                accumulate(&mut pending[i - 1], gi);
            }
        }
        let input = grad_input.unwrap_or_else(|| Tensor4::zeros(trace.input.dims()));
        for p in &params {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Backward { params, input })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
    match slot {
        Some(existing) => {
            for (a, &b) in existing.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv3x3(1, 3),
            LayerSpec::relu(3),
            LayerSpec::maxpool2(3),
            LayerSpec::upconv2(3, 2),
            LayerSpec::concat(2, 1, 3),
            LayerSpec::conv1x1(5, 1),
            LayerSpec::sigmoid(1),
        ]
    }

    #[test]
    fn validation_catches_bad_chains() {
        assert!(ModelParams::<f32>::init(vec![LayerSpec::conv3x3(1, 2), LayerSpec::relu(3)], 0).is_err());
        assert!(ModelParams::<f32>::init(
            vec![LayerSpec::conv3x3(1, 2), LayerSpec::concat(2, 1, 2)],
            0
        )
        .is_err());
        assert!(ModelParams::<f32>::init(small_net(), 0).is_ok());
    }

    #[test]
    fn shapes_and_skip_alignment() {
        let m = ModelParams::<f32>::init(small_net(), 1).unwrap();
        let shapes = m.infer_shapes(8, 6).unwrap();
        assert_eq!(shapes[2], [4, 3, 3]);
        assert_eq!(shapes.last().unwrap(), &[8, 6, 1]);
        assert!(m.infer_shapes(7, 6).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::<f32>::init(small_net(), 42).unwrap();
        let b = ModelParams::<f32>::init(small_net(), 42).unwrap();
        let c = ModelParams::<f32>::init(small_net(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params.iter().all(|p| p.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn inference_and_training_forward_agree() {
        let m = ModelParams::<f32>::init(small_net(), 3).unwrap();
        let x = Tensor4::from_vec([2, 4, 4, 1], (0..32).map(|i| i as f32 / 32.0).collect()).unwrap();
        let a = m.forward(&x).unwrap();
        let mut net = Network::new(m);
        let b = net.forward(&x).unwrap().clone();
        assert_eq!(a, b);
        let single = net.model.forward(&Tensor4::from_vec([1, 4, 4, 1], x.sample(1).to_vec()).unwrap()).unwrap();
        assert_eq!(single.values(), b.sample(1));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Network::new(ModelParams::<f32>::init(small_net(), 0).unwrap());
        let g = Tensor4::zeros([1, 4, 4, 1]);
        assert!(matches!(net.backward(&g), Err(Error::NoForwardPass)));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mut net = Network::new(ModelParams::<f64>::init(small_net(), 5).unwrap());
        let x = Tensor4::filled([1, 4, 4, 1], 0.3);
        net.forward(&x).unwrap();
        let back = net.backward(&Tensor4::zeros([1, 4, 4, 1])).unwrap();
        assert!(back.params.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn conv1x1_sigmoid_gradient_has_closed_form() {
        // loss = mean_i BCE(σ(w·x_i + b), t_i); dL/dw = mean_i (σ_i - t_i)·x_i.
        let model = ModelParams {
            layers: vec![LayerSpec::conv1x1(1, 1), LayerSpec::sigmoid(1)],
            params: vec![
                LayerParams {
                    weights: vec![0.7f64],
                    bias: vec![-0.2],
                },
                LayerParams {
                    weights: vec![],
                    bias: vec![],
                },
            ],
            rng_seed: 0,
        };
        let xs = [0.1, -0.4, 0.9, 0.3];
        let ts = [1.0, 0.0, 1.0, 0.0];
        let mut net = Network::new(model);
        let x = Tensor4::from_vec([1, 2, 2, 1], xs.to_vec()).unwrap();
        let t = Tensor4::from_vec([1, 2, 2, 1], ts.to_vec()).unwrap();
        let (_, grads) = net.loss_and_gradients(&x, &t).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut dw = 0.0;
        let mut db = 0.0;
        for (x, t) in xs.iter().zip(ts) {
            let s = sig(0.7 * x - 0.2);
            dw += (s - t) * x / 4.0;
            db += (s - t) / 4.0;
        }
        assert!((grads[0].weights[0] - dw).abs() < 1e-14);
        assert!((grads[0].bias[0] - db).abs() < 1e-14);
    }
}
