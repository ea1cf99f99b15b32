//! Central-difference verification of analytic gradients, in `f64`.

use super::layers::{trace_relu_pattern, Mode, Sequential};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::rng::Streams;
use crate::scalar::{sigmoid, softmax, softplus, Scalar};

/// Anything exposing trainable buffers together with their gradients.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T]));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }
}

impl<T: Scalar> Parameterized<T> for Sequential<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        Sequential::visit_params(self, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index (in `visit_params` order) of the worst parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries whose `±h` evaluations switched some ReLU unit relative to the
    /// unperturbed point. Their central difference straddles a kink and is
    /// not a valid derivative estimate.
    pub kink_crossings: usize,
}

pub const MIN_STEP: f64 = 1e-4;
pub const MAX_STEP: f64 = 1e-2;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn with_param<M: Parameterized<f64>>(model: &mut M, index: usize, f: impl FnOnce(&mut f64)) {
    let mut offset = 0;
    let mut f = Some(f);
    model.visit_params(&mut |p, _| {
        if index >= offset && index < offset + p.len() {
            if let Some(f) = f.take() {
                f(&mut p[index - offset]);
            }
        }
        offset += p.len();
    });
}

/// Compares the gradients accumulated by `objective` against central differences.
///
/// `objective` must run a full forward and backward pass, accumulating into the
/// gradient buffers, and return the loss. It is called `2P + 1` times.
pub fn gradient_check<M, F>(model: &mut M, h: f64, mut objective: F) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M) -> Result<f64>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&h) {
        return Err(Error::Parameter(format!("finite-difference step {h} outside [{MIN_STEP}, {MAX_STEP}]")));
    }
    model.zero_grad();
    let (base, pattern) = trace_relu_pattern(|| objective(model));
    let base = base?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base} at the unperturbed point; gradient check aborted")));
    }
    let mut analytic = Vec::new();
    model.visit_params(&mut |_, g| analytic.extend_from_slice(g));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kink_crossings: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let mut original = 0.0;
        with_param(model, i, |p| {
            original = *p;
            *p = original + h;
        });
        model.zero_grad();
        let (plus, plus_pattern) = trace_relu_pattern(|| objective(model));
        with_param(model, i, |p| *p = original - h);
        model.zero_grad();
        let (minus, minus_pattern) = trace_relu_pattern(|| objective(model));
        with_param(model, i, |p| *p = original);
        let (plus, minus) = (plus?, minus?);
        report.kink_crossings += usize::from(plus_pattern != pattern || minus_pattern != pattern);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss not finite when perturbing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    // leave the gradients as they were at the unperturbed point
    model.zero_grad();
    objective(model)?;
    Ok(report)
}

/// Loss functions for checking a bare layer stack.
#[derive(Debug, Clone)]
pub enum StackLoss {
    /// `½ Σ (y − t)²`
    Quadratic(Tensor<f64>),
    /// Binary cross-entropy on a single logit column.
    BinaryCrossEntropy(Vec<f64>),
    /// Categorical cross-entropy on logit rows.
    SoftmaxCrossEntropy(Vec<usize>),
}

impl StackLoss {
    pub fn value_and_grad(&self, out: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        match self {
            StackLoss::Quadratic(t) => {
                if t.shape() != out.shape() {
                    return Err(shape_err!("targets {:?} vs outputs {:?}", t.shape(), out.shape()));
                }
                let mut g = out.clone();
                let mut loss = 0.0;
                for (gv, tv) in g.data_mut().iter_mut().zip(t.data()) {
                    *gv -= tv;
                    loss += 0.5 * *gv * *gv;
                }
                Ok((loss, g))
            }
            StackLoss::BinaryCrossEntropy(y) => {
                if out.cols() != 1 || out.rows() != y.len() {
                    return Err(shape_err!("{} labels for outputs {:?}", y.len(), out.shape()));
                }
                let mut g = Tensor::zeros(out.rows(), 1);
                let mut loss = 0.0;
                for (r, &yr) in y.iter().enumerate() {
                    let z = out.get(r, 0);
                    loss += yr * softplus(-z) + (1.0 - yr) * softplus(z);
                    g.set(r, 0, sigmoid(z) - yr);
                }
                Ok((loss, g))
            }
            StackLoss::SoftmaxCrossEntropy(labels) => {
                if out.rows() != labels.len() {
                    return Err(shape_err!("{} labels for {} rows", labels.len(), out.rows()));
                }
                let mut g = Tensor::zeros(out.rows(), out.cols());
                let mut loss = 0.0;
                for (r, &c) in labels.iter().enumerate() {
                    if c >= out.cols() {
                        return Err(Error::Data(format!("label {c} outside {} classes", out.cols())));
                    }
                    let p = softmax(out.row(r));
                    loss -= p[c].ln();
                    let gr = g.row_mut(r);
                    gr.copy_from_slice(&p);
                    gr[c] -= 1.0;
                }
                Ok((loss, g))
            }
        }
    }
}

/// Gradient check of a single layer stack under `loss`.
///
/// Train mode is only allowed when every dropout layer has rate zero.
pub fn check_stack<T: Scalar>(
    stack: &Sequential<T>,
    input: &Tensor<f64>,
    loss: &StackLoss,
    mode: Mode,
    h: f64,
) -> Result<GradCheckReport> {
    if mode == Mode::Train && stack.has_active_dropout() {
        return Err(Error::Contract("gradient check needs a deterministic graph; dropout is active in train mode".into()));
    }
    let mut net: Sequential<f64> = stack.cast();
    let streams = Streams::new(0);
    gradient_check(&mut net, h, |m| {
        let mut rng = streams.stream("gradcheck");
        let out = m.forward(input, mode, &mut rng)?;
        let (l, g) = loss.value_and_grad(&out)?;
        m.backward(&g)?;
        Ok(l)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::layers::{BatchNorm, Dense, Layer};
    use crate::rng::Streams;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut r = Streams::new(seed).stream("data");
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_dense_quadratic_is_exact() {
        let mut r = Streams::new(3).stream("init");
        let net = Sequential::<f64>::new(vec![Layer::Dense(Dense::init(4, 3, &mut r))]);
        let x = random(5, 4, 1);
        let t = random(5, 3, 2);
        let rep = check_stack(&net, &x, &StackLoss::Quadratic(t), Mode::Train, 1e-3).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        assert_eq!(rep.checked, 15);
    }

    #[test]
    fn two_layer_relu_cross_entropy() {
        let mut r = Streams::new(4).stream("init");
        let net = Sequential::<f64>::mlp(6, &[10], 4, 0.0, &mut r).unwrap();
        let x = random(8, 6, 5);
        let labels = vec![0, 1, 2, 3, 3, 2, 1, 0];
        let rep = check_stack(&net, &x, &StackLoss::SoftmaxCrossEntropy(labels), Mode::Train, 1e-4).unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }

    #[test]
    fn batchnorm_head_with_binary_cross_entropy() {
        let mut r = Streams::new(5).stream("init");
        let mut layers = vec![Layer::BatchNorm(BatchNorm::new(6))];
        layers.extend(Sequential::<f64>::mlp(6, &[7, 7], 1, 0.0, &mut r).unwrap().layers);
        let net = Sequential::new(layers);
        let x = random(12, 6, 6);
        let y: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let rep = check_stack(&net, &x, &StackLoss::BinaryCrossEntropy(y), Mode::Train, 1e-4).unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }

    #[test]
    fn perturbation_across_a_relu_kink_is_flagged() {
        // pre-activation w·x = 5e-5 sits within h = 1e-4 of the kink for the weight
        let dense = Dense::new(Tensor::from_vec(1, 1, vec![5e-5]).unwrap(), vec![0.0]).unwrap();
        let net = Sequential::<f64>::new(vec![Layer::Dense(dense), Layer::relu()]);
        let x = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let t = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let rep = check_stack(&net, &x, &StackLoss::Quadratic(t.clone()), Mode::Train, 1e-4).unwrap();
        assert_eq!(rep.kink_crossings, 2, "{rep:?}");
        assert!(rep.max_rel_error > 1e-3);

        let dense = Dense::new(Tensor::from_vec(1, 1, vec![0.5]).unwrap(), vec![0.0]).unwrap();
        let net = Sequential::<f64>::new(vec![Layer::Dense(dense), Layer::relu()]);
        let rep = check_stack(&net, &x, &StackLoss::Quadratic(t), Mode::Train, 1e-4).unwrap();
        assert_eq!(rep.kink_crossings, 0);
        assert!(rep.max_rel_error < 1e-6);
    }

    #[test]
    fn active_dropout_in_train_mode_is_rejected() {
        let mut r = Streams::new(6).stream("init");
        let net = Sequential::<f32>::mlp(3, &[4], 1, 0.5, &mut r).unwrap();
        let x = random(4, 3, 7);
        let err = check_stack(&net, &x, &StackLoss::BinaryCrossEntropy(vec![0.0, 1.0, 0.0, 1.0]), Mode::Train, 1e-4);
        assert!(matches!(err, Err(Error::Contract(_))));
        // inference mode makes dropout the identity, so the check is allowed
        let ok = check_stack(&net, &x, &StackLoss::BinaryCrossEntropy(vec![0.0, 1.0, 0.0, 1.0]), Mode::Infer, 1e-4);
        assert!(ok.unwrap().max_rel_error < 1e-3);
    }

    #[test]
    fn step_outside_range_and_non_finite_loss_are_errors() {
        let mut net = Sequential::<f64>::new(vec![Layer::Dense(Dense::zeros(1, 1))]);
        assert!(matches!(gradient_check(&mut net, 1e-6, |_| Ok(0.0)), Err(Error::Parameter(_))));
        assert!(matches!(gradient_check(&mut net, 1e-3, |_| Ok(f64::NAN)), Err(Error::NonFinite(_))));
    }
}
