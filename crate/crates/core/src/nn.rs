//! Multilayer perceptrons with hand-written backpropagation, plus SGD/Adam.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gemm, spectral_norm, Matrix, Rng, Trans};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub const DEFAULT_HIDDEN: Activation = Activation::LeakyRelu(0.2);

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Global Lipschitz constant of the elementwise map.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Identity | Activation::Tanh => 1.0,
            Activation::LeakyRelu(s) => s.abs().max(1.0),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s <= 1.0) => Err(Error::invalid(
                "Activation",
                format!("leaky_relu slope {s} outside (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let act = match s {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "leaky_relu" => Activation::DEFAULT_HIDDEN,
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid("Activation", format!("unknown activation `{s}`")))?;
                Activation::LeakyRelu(slope)
            }
        };
        act.validate()?;
        Ok(act)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}:{}", self.in_dim, self.out_dim, self.activation)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("LayerSpec", format!("malformed layer `{s}`"));
        let (dims, act) = s.split_once(':').ok_or_else(bad)?;
        let (i, o) = dims.split_once('>').ok_or_else(bad)?;
        Ok(LayerSpec {
            in_dim: i.trim().parse().map_err(|_| bad())?,
            out_dim: o.trim().parse().map_err(|_| bad())?,
            activation: act.parse()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    spec: LayerSpec,
    /// out_dim x in_dim
    weight: Matrix,
    bias: Vec<f64>,
    grad_weight: Matrix,
    grad_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct ForwardCache {
    /// Input fed to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

/// Fully connected network `x ↦ act_L(W_L · … act_1(W_1 x + b_1) … + b_L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    cache: Option<ForwardCache>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        validate_chain(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| {
                let s = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let weight = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| {
                    (2.0 * rng.uniform() - 1.0) * s
                });
                Layer::with_params(spec, weight, vec![0.0; spec.out_dim])
            })
            .collect();
        Ok(Mlp {
            layers,
            cache: None,
        })
    }

    /// `in → hidden… → out`, hidden layers sharing one activation.
    pub fn with_architecture(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Mlp::new(
            &architecture(in_dim, hidden, out_dim, hidden_activation, output_activation),
            rng,
        )
    }

    /// Builds a network from explicit parameters (`weights[l]` is out x in).
    pub fn from_parts(specs: &[LayerSpec], weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        validate_chain(specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::dims("Mlp::from_parts", "parameter count != layer count"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for ((spec, w), b) in specs.iter().zip(weights).zip(biases) {
            if w.shape() != (spec.out_dim, spec.in_dim) || b.len() != spec.out_dim {
                return Err(Error::dims(
                    "Mlp::from_parts",
                    format!("layer {spec} got weight {:?}, bias {}", w.shape(), b.len()),
                ));
            }
            w.ensure_finite("Mlp::from_parts")?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "Mlp::from_parts" });
            }
            layers.push(Layer::with_params(*spec, w, b));
        }
        Ok(Mlp {
            layers,
            cache: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].weight
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.layers[layer].bias
    }

    pub fn grad_weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].grad_weight
    }

    pub fn grad_bias(&self, layer: usize) -> &[f64] {
        &self.layers[layer].grad_bias
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Gradients in the same order as [`Mlp::parameters`].
    pub fn gradients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.grad_weight.data());
            out.extend_from_slice(&l.grad_bias);
        }
        out
    }

    /// (parameter, gradient) slice pairs in [`Mlp::parameters`] order.
    pub fn param_groups_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut groups = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            let Layer {
                weight,
                bias,
                grad_weight,
                grad_bias,
                ..
            } = l;
            groups.push((weight.data_mut(), grad_weight.data_mut()));
            groups.push((bias.as_mut_slice(), grad_bias.as_mut_slice()));
        }
        groups
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.grad_weight.data_mut().iter_mut().for_each(|g| *g = 0.0);
            l.grad_bias.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Forward pass that caches activations for [`Mlp::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(x, Some(&mut cache))?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without touching the cache; safe on a shared network.
    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, None)
    }

    fn run(&self, x: &Matrix, mut cache: Option<&mut ForwardCache>) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::dims(
                "Mlp::forward",
                format!("input has {} cols, network expects {}", x.cols(), self.in_dim()),
            ));
        }
        let mut h = x.clone();
        for l in &self.layers {
            let mut pre = Matrix::zeros(h.rows(), l.spec.out_dim);
            gemm(1.0, &h, Trans::No, &l.weight, Trans::Yes, 0.0, &mut pre);
            for r in 0..pre.rows() {
                for (v, b) in pre.row_mut(r).iter_mut().zip(&l.bias) {
                    *v += b;
                }
            }
            let act = l.spec.activation;
            let out = match act {
                Activation::Identity => pre.clone(),
                _ => {
                    let mut out = pre.clone();
                    out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                    out
                }
            };
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
                c.pre.push(pre);
            }
            h = out;
        }
        h.ensure_finite("Mlp::forward")?;
        Ok(h)
    }

    /// Backpropagates `upstream = ∂L/∂output` through the last cached forward
    /// pass. Parameter gradients are accumulated; the input gradient is
    /// returned. Consumes the cache.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let cache = self.cache.take().ok_or(Error::MissingForwardCache)?;
        let batch = cache.inputs[0].rows();
        if upstream.shape() != (batch, self.out_dim()) {
            return Err(Error::dims(
                "Mlp::backward",
                format!("upstream {:?}, expected ({batch}, {})", upstream.shape(), self.out_dim()),
            ));
        }
        let mut grad = upstream.clone();
        for (l, (input, pre)) in self
            .layers
            .iter_mut()
            .zip(cache.inputs.iter().zip(&cache.pre))
            .rev()
        {
            let act = l.spec.activation;
            if act != Activation::Identity {
                for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
                    *g *= act.derivative(*p);
                }
            }
            // dW += gradᵀ · input ; db += column sums of grad
            gemm(1.0, &grad, Trans::Yes, input, Trans::No, 1.0, &mut l.grad_weight);
            for r in 0..grad.rows() {
                for (gb, g) in l.grad_bias.iter_mut().zip(grad.row(r)) {
                    *gb += g;
                }
            }
            let mut down = Matrix::zeros(batch, l.spec.in_dim);
            gemm(1.0, &grad, Trans::No, &l.weight, Trans::No, 0.0, &mut down);
            grad = down;
        }
        grad.ensure_finite("Mlp::backward")?;
        Ok(grad)
    }
}

impl Layer {
    fn with_params(spec: LayerSpec, weight: Matrix, bias: Vec<f64>) -> Self {
        Layer {
            grad_weight: Matrix::zeros(spec.out_dim, spec.in_dim),
            grad_bias: vec![0.0; spec.out_dim],
            spec,
            weight,
            bias,
        }
    }
}

/// Layer specs for `in → hidden… → out`.
pub fn architecture(
    in_dim: usize,
    hidden: &[usize],
    out_dim: usize,
    hidden_activation: Activation,
    output_activation: Activation,
) -> Vec<LayerSpec> {
    let mut dims = vec![in_dim];
    dims.extend_from_slice(hidden);
    dims.push(out_dim);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                output_activation
            } else {
                hidden_activation
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("Mlp", "no layers"));
    }
    for s in specs {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::invalid("Mlp", format!("zero-width layer {s}")));
        }
        s.activation.validate()?;
    }
    for w in specs.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::dims(
                "Mlp",
                format!("layer {} does not chain into {}", w[0], w[1]),
            ));
        }
    }
    Ok(())
}

/// Upper bound on the network's global Lipschitz constant: the product of
/// layer spectral norms times activation constants.
///
/// Layers whose power iteration does not converge fall back to the Frobenius
/// norm, which bounds the spectral norm from above.
pub fn lipschitz_upper_bound(net: &Mlp) -> Result<f64> {
    let mut bound = 1.0;
    for l in &net.layers {
        let act = l.spec.activation.lipschitz();
        if act > 1.0 {
            return Err(Error::invalid(
                "lipschitz_upper_bound",
                format!("activation {} is {act}-Lipschitz", l.spec.activation),
            ));
        }
        let s = spectral_norm(&l.weight, 10_000, 1e-13)?;
        let sigma = if s.converged {
            s.value
        } else {
            l.weight.frobenius_norm()
        };
        bound *= sigma * act;
    }
    Ok(bound)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid("OptimizerKind", format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Adam with first-moment decay 0.5, the setting used for adversarial
    /// training.
    pub fn adam_adversarial(learning_rate: f64) -> Self {
        OptimizerConfig {
            beta1: 0.5,
            ..OptimizerConfig::adam(learning_rate)
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..OptimizerConfig::adam(learning_rate)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

/// First-order optimizer bound to one network's parameter layout.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, net: &Mlp) -> Self {
        let shapes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weight.data().len(), l.bias.len()])
            .collect();
        Optimizer {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies the update rule to `net` and zeroes its gradients.
    pub fn step(&mut self, net: &mut Mlp) {
        let c = self.config;
        self.t += 1;
        let groups = net.param_groups_mut();
        assert_eq!(groups.len(), self.m.len(), "optimizer bound to another network");
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in groups {
                    for (pi, gi) in p.iter_mut().zip(g.iter_mut()) {
                        *pi -= c.learning_rate * *gi;
                        *gi = 0.0;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(self.t as i32);
                let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                for ((p, g), (m, v)) in groups.into_iter().zip(self.m.iter_mut().zip(&mut self.v)) {
                    for (((pi, gi), mi), vi) in p.iter_mut().zip(g.iter_mut()).zip(m).zip(v.iter_mut()) {
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * *gi;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * *gi * *gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *pi -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
                        *gi = 0.0;
                    }
                }
            }
        }
    }
}
