//! Layer types with forward passes, cached activations and reverse-mode gradients.

use std::cell::Cell;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::rng::Stream;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Fully connected layer, `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape_err!("bias of length {} for {} outputs", bias.len(), weight.rows()));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("dense parameters".into()));
        }
        let (o, i) = weight.shape();
        Ok(Self { grad_weight: Tensor::zeros(o, i), grad_bias: vec![T::zero(); o], weight, bias, input: None })
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self::new(Tensor::zeros(output_dim, input_dim), vec![T::zero(); output_dim]).expect("consistent shapes")
    }

    /// Uniform init with variance `2 / fan_in`, zero bias.
    pub fn init(input_dim: usize, output_dim: usize, rng: &mut Stream) -> Self {
        let bound = (6.0 / input_dim.max(1) as f64).sqrt();
        let data = (0..input_dim * output_dim).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        let weight = Tensor::from_vec(output_dim, input_dim, data).expect("consistent shapes");
        Self::new(weight, vec![T::zero(); output_dim]).expect("finite init")
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.input_dim() {
            return Err(shape_err!("dense layer expects {} inputs, got {}", self.input_dim(), x.cols()));
        }
        let mut y = x.matmul_t(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| Error::Contract("dense backward before forward".into()))?;
        if grad.rows() != x.rows() || grad.cols() != self.output_dim() {
            return Err(shape_err!("dense backward got {:?}", grad.shape()));
        }
        let mut dx = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let (xr, gr) = (x.row(r), grad.row(r));
            let dxr = dx.row_mut(r);
            for (o, &g) in gr.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                self.grad_bias[o] += g;
                T::axpy(g, xr, self.grad_weight.row_mut(o));
                T::axpy(g, self.weight.row(o), dxr);
            }
        }
        Ok(dx)
    }
}

/// Per-column batch normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self::with_hyper(dim, T::lit(Self::DEFAULT_MOMENTUM), T::lit(Self::DEFAULT_EPSILON)).expect("valid defaults")
    }

    pub fn with_hyper(dim: usize, momentum: T, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::Parameter(format!("batchnorm epsilon must be > 0, got {epsilon}")));
        }
        if !(momentum >= T::zero() && momentum <= T::one()) {
            return Err(Error::Parameter(format!("batchnorm momentum must be in [0,1], got {momentum}")));
        }
        Ok(Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            momentum,
            epsilon,
            grad_gamma: vec![T::zero(); dim],
            grad_beta: vec![T::zero(); dim],
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(shape_err!("batchnorm over {} columns, got {}", self.dim(), x.cols()));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let scale: Vec<T> =
            self.running_var.iter().zip(&self.gamma).map(|(&v, &g)| g / (v + self.epsilon).sqrt()).collect();
        let mut y = x.clone();
        for r in 0..y.rows() {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Ok(y)
    }

    /// Train mode normalizes by batch statistics and updates the running ones;
    /// infer mode uses the running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Infer => {
                let y = self.infer(x)?;
                let normalized = Tensor::zeros(x.rows(), x.cols());
                let inv_std = self.running_var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
                self.cache = Some(BnCache { normalized, inv_std, train: false });
                Ok(y)
            }
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::Contract(format!("batchnorm in train mode needs a batch of at least 2 rows, got {n}")));
        }
        let nt = T::from_usize(n).expect("row count");
        let d = self.dim();
        let mut mean = vec![T::zero(); d];
        for row in x.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nt);
        let mut var = vec![T::zero(); d];
        for row in x.iter_rows() {
            for c in 0..d {
                let dv = row[c] - mean[c];
                var[c] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= nt);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
        let mut normalized = Tensor::zeros(n, d);
        let mut y = Tensor::zeros(n, d);
        for r in 0..n {
            let xr = x.row(r);
            for c in 0..d {
                let h = (xr[c] - mean[c]) * inv_std[c];
                normalized.set(r, c, h);
                y.set(r, c, self.gamma[c] * h + self.beta[c]);
            }
        }
        let keep = self.momentum;
        let unbias = nt / (nt - T::one());
        for c in 0..d {
            self.running_mean[c] = keep * self.running_mean[c] + (T::one() - keep) * mean[c];
            self.running_var[c] = keep * self.running_var[c] + (T::one() - keep) * var[c] * unbias;
        }
        self.cache = Some(BnCache { normalized, inv_std, train: true });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::Contract("batchnorm backward before forward".into()))?;
        let (n, d) = cache.normalized.shape();
        if grad.shape() != (n, d) {
            return Err(shape_err!("batchnorm backward got {:?}, expected {:?}", grad.shape(), (n, d)));
        }
        let mut sum_g = vec![T::zero(); d];
        let mut sum_gh = vec![T::zero(); d];
        for r in 0..n {
            let (g, h) = (grad.row(r), cache.normalized.row(r));
            for c in 0..d {
                sum_g[c] += g[c];
                sum_gh[c] += g[c] * h[c];
            }
        }
        for c in 0..d {
            self.grad_beta[c] += sum_g[c];
            self.grad_gamma[c] += sum_gh[c];
        }
        let mut dx = Tensor::zeros(n, d);
        if cache.train {
            let nt = T::from_usize(n).expect("row count");
            for r in 0..n {
                let (g, h) = (grad.row(r), cache.normalized.row(r));
                let out = dx.row_mut(r);
                for c in 0..d {
                    let k = self.gamma[c] * cache.inv_std[c] / nt;
                    out[c] = k * (nt * g[c] - sum_g[c] - h[c] * sum_gh[c]);
                }
            }
        } else {
            for r in 0..n {
                let g = grad.row(r);
                let out = dx.row_mut(r);
                for c in 0..d {
                    out[c] = g[c] * self.gamma[c] * cache.inv_std[c];
                }
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: surviving activations are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: T,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: T) -> Result<Self> {
        if !(rate >= T::zero() && rate < T::one()) {
            return Err(Error::Parameter(format!("dropout rate must be in [0,1), got {rate}")));
        }
        Ok(Self { rate, mask: None })
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Dense(Dense<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    Relu { output: Option<Tensor<T>> },
    Sigmoid { output: Option<Tensor<T>> },
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu { output: None }
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid { output: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::Relu { .. } => "relu",
            Layer::Sigmoid { .. } => "sigmoid",
        }
    }

    /// Pure forward pass in inference mode; never touches caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(d) => d.infer(x),
            Layer::BatchNorm(b) => b.infer(x),
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Relu { .. } => Ok(relu(x)),
            Layer::Sigmoid { .. } => Ok(sigmoid_map(x)),
        }
    }

    /// Forward pass that caches what the backward pass needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Stream) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(d) => {
                let y = d.infer(x)?;
                d.input = Some(x.clone());
                Ok(y)
            }
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Dropout(d) => {
                if mode == Mode::Infer || d.rate == T::zero() {
                    d.mask = None;
                    return Ok(x.clone());
                }
                let keep = T::one() - d.rate;
                let scale = T::one() / keep;
                let rate = d.rate.as_f64();
                let mask: Vec<T> = (0..x.data().len())
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale })
                    .collect();
                let mut y = x.clone();
                y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                d.mask = Some(mask);
                Ok(y)
            }
            Layer::Relu { output } => {
                let y = relu(x);
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Sigmoid { output } => {
                let y = sigmoid_map(x);
                *output = Some(y.clone());
                Ok(y)
            }
        }
    }

    /// Propagates `grad` (dL/dy) back, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let missing = || Error::Contract("backward before forward".into());
        match self {
            Layer::Dense(d) => d.backward(grad),
            Layer::BatchNorm(b) => b.backward(grad),
            Layer::Dropout(d) => match &d.mask {
                None => Ok(grad.clone()),
                Some(mask) => {
                    let mut g = grad.clone();
                    g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
                    Ok(g)
                }
            },
            Layer::Relu { output } => {
                let y = output.as_ref().ok_or_else(missing)?;
                let mut g = grad.clone();
                g.data_mut().iter_mut().zip(y.data()).for_each(|(v, &o)| {
                    if o <= T::zero() {
                        *v = T::zero();
                    }
                });
                Ok(g)
            }
            Layer::Sigmoid { output } => {
                let y = output.as_ref().ok_or_else(missing)?;
                let mut g = grad.clone();
                g.data_mut().iter_mut().zip(y.data()).for_each(|(v, &p)| *v *= p * (T::one() - p));
                Ok(g)
            }
        }
    }

    /// Visits each trainable parameter buffer with its gradient.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        match self {
            Layer::Dense(d) => {
                f(d.weight.data_mut(), d.grad_weight.data_mut());
                f(&mut d.bias, &mut d.grad_bias);
            }
            Layer::BatchNorm(b) => {
                f(&mut b.gamma, &mut b.grad_gamma);
                f(&mut b.beta, &mut b.grad_beta);
            }
            _ => {}
        }
    }

    /// Read-only view of the trainable parameter buffers, in `visit_params` order.
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![d.weight.data(), &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.data().len() + d.bias.len(),
            Layer::BatchNorm(b) => 2 * b.dim(),
            _ => 0,
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.input = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Dropout(d) => d.mask = None,
            Layer::Relu { output } | Layer::Sigmoid { output } => *output = None,
        }
    }

    /// Parameter-preserving conversion to another scalar type; caches are dropped.
    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let v = |x: &[T]| x.iter().map(|a| a.cast()).collect::<Vec<U>>();
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                weight: d.weight.cast(),
                bias: v(&d.bias),
                grad_weight: d.grad_weight.cast(),
                grad_bias: v(&d.grad_bias),
                input: None,
            }),
            Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                gamma: v(&b.gamma),
                beta: v(&b.beta),
                running_mean: v(&b.running_mean),
                running_var: v(&b.running_var),
                momentum: b.momentum.cast(),
                epsilon: b.epsilon.cast(),
                grad_gamma: v(&b.grad_gamma),
                grad_beta: v(&b.grad_beta),
                cache: None,
            }),
            Layer::Dropout(d) => Layer::Dropout(Dropout { rate: d.rate.cast(), mask: None }),
            Layer::Relu { .. } => Layer::Relu { output: None },
            Layer::Sigmoid { .. } => Layer::Sigmoid { output: None },
        }
    }
}

thread_local! {
    static RELU_TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` and returns a fingerprint of the on/off state of every ReLU input
/// it evaluated on this thread. Equal fingerprints mean no unit crossed its kink.
pub fn trace_relu_pattern<R>(f: impl FnOnce() -> R) -> (R, u64) {
    RELU_TRACE.with(|t| t.set(Some(0xcbf2_9ce4_8422_2325)));
    let out = f();
    (out, RELU_TRACE.with(|t| t.take()).unwrap_or(0))
}

fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    RELU_TRACE.with(|t| {
        if let Some(mut h) = t.get() {
            for v in x.data() {
                h = (h ^ u64::from(*v > T::zero())).wrapping_mul(0x100_0000_01b3);
            }
            t.set(Some(h));
        }
    });
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

fn sigmoid_map<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    y
}

/// Applies a stateless activation; used where no layer object is needed.
pub fn activation_forward<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid_map(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// An ordered stack of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    /// Dense/ReLU/Dropout blocks for each hidden width followed by a linear output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, dropout: f64, rng: &mut Stream) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer::Dense(Dense::init(width, h, rng)));
            layers.push(Layer::relu());
            if dropout > 0.0 {
                layers.push(Layer::Dropout(Dropout::new(T::lit(dropout))?));
            }
            width = h;
        }
        layers.push(Layer::Dense(Dense::init(width, output_dim, rng)));
        Ok(Self { layers })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Stream) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.input_dim()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.output_dim()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn has_active_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout(d) if d.rate > T::zero()))
    }

    /// Sets every dropout rate to zero.
    pub fn disable_dropout(&mut self) {
        for l in &mut self.layers {
            if let Layer::Dropout(d) = l {
                d.rate = T::zero();
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential { layers: self.layers.iter().map(Layer::cast).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::params).all(|p| p.iter().all(|v| v.is_finite()))
    }
}
