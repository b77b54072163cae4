//! Fully connected ReLU network with a linear output layer.
//!
//! The same final layer feeds two heads: [`softmax_cross_entropy`] for the
//! supervised phase and [`Network::gar_head`] (rectified pre-activations) for the
//! unsupervised phase. Dropout uses the inverted convention, so evaluation needs
//! no rescaling and the dropout-free GAR head sees the trained weights as is.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl LayerSpec {
    pub fn relu(units: usize, dropout: f64) -> Self {
        LayerSpec {
            units,
            activation: Activation::Relu,
            dropout,
        }
    }

    pub fn linear(units: usize) -> Self {
        LayerSpec {
            units,
            activation: Activation::Linear,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::Config("layer with zero units".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// The four-layer MLP preset: three `FC 2048 - Drop(0.5)` blocks and a linear head.
pub fn mlp4(n_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::relu(2048, 0.5),
        LayerSpec::relu(2048, 0.5),
        LayerSpec::relu(2048, 0.5),
        LayerSpec::linear(n_classes),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × units`.
    pub weights: Matrix,
    /// `1 × units`.
    pub bias: Matrix,
    pub spec: LayerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut Rng),
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the previous layer's output, after dropout).
    inputs: Vec<Matrix>,
    /// Pre-activations `Y⁽ˡ⁻¹⁾W⁽ˡ⁾ + b⁽ˡ⁾`.
    pre: Vec<Matrix>,
    /// Inverted-dropout multipliers, present only for train-mode passes.
    masks: Vec<Option<Matrix>>,
    train: bool,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }

    pub fn mask(&self, layer: usize) -> Option<&Matrix> {
        self.masks[layer].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: Matrix::zeros(1, l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        let g = &self.layers[p.layer];
        match p.kind {
            ParamKind::Weight => g.weights.as_slice()[p.index],
            ParamKind::Bias => g.bias.as_slice()[p.index],
        }
    }

    pub fn get_mut(&mut self, p: ParamRef) -> &mut f64 {
        let g = &mut self.layers[p.layer];
        match p.kind {
            ParamKind::Weight => &mut g.weights.as_mut_slice()[p.index],
            ParamKind::Bias => &mut g.bias.as_mut_slice()[p.index],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weights.as_slice().iter().all(|&x| x == 0.0)
                && g.bias.as_slice().iter().all(|&x| x == 0.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Address of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

impl std::fmt::Display for ParamRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            ParamKind::Weight => "W",
            ParamKind::Bias => "b",
        };
        write!(f, "layer {} {kind}[{}]", self.layer, self.index)
    }
}

impl Network {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new(input_dim: usize, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(input_dim, specs)?;
        for layer in &mut net.layers {
            let std = (2.0 / layer.weights.rows() as f64).sqrt();
            for w in layer.weights.as_mut_slice() {
                *w = std * rng.normal();
            }
        }
        Ok(net)
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(input_dim: usize, specs: &[LayerSpec]) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let Some(last) = specs.last() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        if last.activation != Activation::Linear {
            return Err(Error::Config("output layer must be linear".into()));
        }
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            layers.push(Layer {
                weights: Matrix::zeros(fan_in, spec.units),
                bias: Matrix::zeros(1, spec.units),
                spec: *spec,
            });
            fan_in = spec.units;
        }
        Ok(Network { input_dim, layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        let input_dim = first.weights.rows();
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        let skeleton = Network::zeros(input_dim, &specs)?;
        for (l, (have, want)) in layers.iter().zip(&skeleton.layers).enumerate() {
            if have.weights.shape() != want.weights.shape() {
                return Err(Error::shape(
                    "Network::from_layers weights",
                    have.weights.shape(),
                    want.weights.shape(),
                ));
            }
            if have.bias.shape() != want.bias.shape() {
                return Err(Error::Consistency(format!(
                    "layer {l} bias is {:?}, expected {:?}",
                    have.bias.shape(),
                    want.bias.shape()
                )));
            }
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.units)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.as_slice().len())
            .sum()
    }

    /// Enumerates every scalar parameter, layer by layer, weights before biases.
    pub fn param_refs(&self) -> Vec<ParamRef> {
        let mut out = Vec::with_capacity(self.num_params());
        for (layer, l) in self.layers.iter().enumerate() {
            out.extend((0..l.weights.as_slice().len()).map(|index| ParamRef {
                layer,
                kind: ParamKind::Weight,
                index,
            }));
            out.extend((0..l.bias.as_slice().len()).map(|index| ParamRef {
                layer,
                kind: ParamKind::Bias,
                index,
            }));
        }
        out
    }

    pub fn param(&self, p: ParamRef) -> f64 {
        let l = &self.layers[p.layer];
        match p.kind {
            ParamKind::Weight => l.weights.as_slice()[p.index],
            ParamKind::Bias => l.bias.as_slice()[p.index],
        }
    }

    pub fn param_mut(&mut self, p: ParamRef) -> &mut f64 {
        let l = &mut self.layers[p.layer];
        match p.kind {
            ParamKind::Weight => &mut l.weights.as_mut_slice()[p.index],
            ParamKind::Bias => &mut l.bias.as_mut_slice()[p.index],
        }
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(op, x.shape(), (x.rows(), self.input_dim)));
        }
        Ok(())
    }

    fn affine(layer: &Layer, input: &Matrix) -> Matrix {
        let mut z = input.matmul(&layer.weights);
        z.add_row_broadcast(&layer.bias);
        z
    }

    /// Forward pass returning the output-layer pre-activations (logits).
    pub fn forward(&self, x: &Matrix, mut mode: Mode<'_>) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x, "Network::forward")?;
        let depth = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(depth),
            pre: Vec::with_capacity(depth),
            masks: Vec::with_capacity(depth),
            train: matches!(mode, Mode::Train(_)),
        };
        let mut current = x.clone();
        for layer in &self.layers {
            let z = Self::affine(layer, &current);
            let act = layer.spec.activation;
            let mut out = z.map(|v| act.apply(v));
            let mask = match &mut mode {
                Mode::Train(rng) if layer.spec.dropout > 0.0 => {
                    let p = layer.spec.dropout;
                    let keep = 1.0 / (1.0 - p);
                    let mask = Matrix::from_fn(out.rows(), out.cols(), |_, _| {
                        if rng.next_f64() >= p {
                            keep
                        } else {
                            0.0
                        }
                    });
                    out = out.mul(&mask);
                    Some(mask)
                }
                _ => None,
            };
            cache.inputs.push(std::mem::replace(&mut current, out));
            cache.pre.push(z);
            cache.masks.push(mask);
        }
        Ok((current, cache))
    }

    /// Eval-mode logits without keeping intermediate activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, "Network::predict")?;
        let mut current = x.clone();
        for layer in &self.layers {
            let act = layer.spec.activation;
            current = Self::affine(layer, &current).map(|v| act.apply(v));
        }
        Ok(current)
    }

    /// `B = max(0, logits)` from a dropout-free pass.
    pub fn gar_head(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (logits, cache) = self.forward(x, Mode::Eval)?;
        Ok((logits.map(|v| v.max(0.0)), cache))
    }

    /// Backpropagates `dout` (gradient w.r.t. the output layer's pre-activations)
    /// through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, dout: &Matrix) -> Result<Gradients> {
        let depth = self.layers.len();
        if cache.depth() != depth {
            return Err(Error::Consistency(format!(
                "cache depth {} does not match network depth {depth}",
                cache.depth()
            )));
        }
        let last = &cache.pre[depth - 1];
        if dout.shape() != last.shape() {
            return Err(Error::shape("Network::backward", dout.shape(), last.shape()));
        }
        let mut grads = Vec::with_capacity(depth);
        let mut delta = dout.clone();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            if l != depth - 1 {
                if let Some(mask) = &cache.masks[l] {
                    delta = delta.mul(mask);
                }
                if layer.spec.activation == Activation::Relu {
                    delta = delta.zip_map(&cache.pre[l], |d, z| if z > 0.0 { d } else { 0.0 });
                }
            } else if let Some(mask) = &cache.masks[l] {
                // A linear output layer with dropout: mask the incoming gradient.
                delta = delta.mul(mask);
            }
            let input = &cache.inputs[l];
            if input.shape().1 != layer.weights.rows() {
                return Err(Error::Consistency(format!(
                    "cached input of layer {l} has {} columns, weights expect {}",
                    input.cols(),
                    layer.weights.rows()
                )));
            }
            grads.push(LayerGrad {
                weights: input.t_matmul(&delta),
                bias: delta.column_sums(),
            });
            if l > 0 {
                delta = delta.matmul_t(&layer.weights);
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (rows, n) = logits.shape();
    if labels.len() != rows {
        return Err(Error::shape(
            "softmax_cross_entropy",
            logits.shape(),
            (labels.len(), n),
        ));
    }
    let mut d = Matrix::zeros(rows, n);
    let mut loss = 0.0;
    let inv_rows = 1.0 / rows.max(1) as f64;
    for (i, (&t, row)) in labels.iter().zip(logits.row_iter()).enumerate() {
        if t >= n {
            return Err(Error::Label {
                row: i,
                label: t,
                n_classes: n,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[t] - max);
        let drow = d.row_mut(i);
        for (j, (dv, &z)) in drow.iter_mut().zip(row).enumerate() {
            let p = (z - max - log_sum).exp();
            *dv = (p - if j == t { 1.0 } else { 0.0 }) * inv_rows;
        }
    }
    Ok((loss * inv_rows, d))
}

/// SGD hyperparameters. `lr_t = lr / (1 + decay · t)` with `t` counting updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub decay: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            decay: 1e-6,
            momentum: 0.95,
        }
    }
}

impl SgdConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr / (1.0 + self.decay * step as f64)
    }
}

/// Nesterov momentum state: one velocity per parameter, plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: SgdConfig,
    pub velocity: Gradients,
    pub step: u64,
}

impl OptState {
    pub fn new(net: &Network, config: SgdConfig) -> Self {
        OptState {
            config,
            velocity: Gradients::zeros_like(net),
            step: 0,
        }
    }
}

/// One Nesterov step: `v ← μv − lr_t·g`, `θ ← θ + μv − lr_t·g`.
pub fn sgd_nesterov_step(net: &mut Network, grads: &Gradients, opt: &mut OptState) {
    let lr = opt.config.lr_at(opt.step);
    let mu = opt.config.momentum;
    for ((layer, g), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
    {
        nesterov_update(layer.weights.as_mut_slice(), g.weights.as_slice(), v.weights.as_mut_slice(), lr, mu);
        nesterov_update(layer.bias.as_mut_slice(), g.bias.as_slice(), v.bias.as_mut_slice(), lr, mu);
    }
    opt.step += 1;
}

#[inline]
fn nesterov_update(theta: &mut [f64], grad: &[f64], vel: &mut [f64], lr: f64, mu: f64) {
    assert_eq!(theta.len(), grad.len(), "gradient shape does not match parameters");
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = mu * *v - lr * g;
        *t += mu * *v - lr * g;
    }
}
