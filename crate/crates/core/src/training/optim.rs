use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Parameterized;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    SgdMomentum,
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::AdaptiveMoment,
            learning_rate: 1e-4,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        // zero is accepted: it is the null-update baseline
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        for (name, v) in [("momentum", self.momentum), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{name} {v} outside [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon {} must be > 0", self.epsilon));
        }
        if problems.is_empty() { Ok(()) } else { Err(Error::Validation(problems)) }
    }
}

/// Optimizer state, one slot per parameter buffer in visit order.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, first: Vec::new(), second: Vec::new(), steps: 0 })
    }

    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M) {
        self.steps += 1;
        let lr = T::lit(self.config.learning_rate);
        let cfg = &self.config;
        let (first, second) = (&mut self.first, &mut self.second);
        let mut slot = 0;
        match cfg.algorithm {
            Algorithm::SgdMomentum => {
                let mu = T::lit(cfg.momentum);
                model.visit_params(&mut |p, g| {
                    if first.len() <= slot {
                        first.push(vec![T::zero(); p.len()]);
                    }
                    for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(first[slot].iter_mut()) {
                        *vi = mu * *vi - lr * *gi;
                        *pi += *vi;
                    }
                    slot += 1;
                });
            }
            Algorithm::AdaptiveMoment => {
                let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.epsilon));
                let c1 = T::one() - b1.powi(self.steps);
                let c2 = T::one() - b2.powi(self.steps);
                model.visit_params(&mut |p, g| {
                    if first.len() <= slot {
                        first.push(vec![T::zero(); p.len()]);
                        second.push(vec![T::zero(); p.len()]);
                    }
                    let (m, v) = (&mut first[slot], &mut second[slot]);
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                    slot += 1;
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{Dense, Layer, Sequential, Tensor};

    fn quadratic_model() -> Sequential<f64> {
        Sequential::new(vec![Layer::Dense(Dense::new(Tensor::from_rows(&[[3.0, -2.0]]).unwrap(), vec![1.0]).unwrap())])
    }

    fn set_grad_to_params(m: &mut Sequential<f64>) {
        m.visit_params(&mut |p, g| g.copy_from_slice(p));
    }

    #[test]
    fn both_algorithms_shrink_a_quadratic() {
        for algorithm in [Algorithm::SgdMomentum, Algorithm::AdaptiveMoment] {
            let mut m = quadratic_model();
            let mut opt = Optimizer::new(OptimizerConfig { algorithm, learning_rate: 0.05, ..Default::default() }).unwrap();
            for _ in 0..300 {
                set_grad_to_params(&mut m);
                opt.step(&mut m);
            }
            let mut norm = 0.0;
            m.visit_params(&mut |p, _| norm += p.iter().map(|v| v * v).sum::<f64>());
            assert!(norm < 0.1, "{algorithm:?} left norm {norm}");
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut m = quadratic_model();
        let before = m.clone();
        let mut opt = Optimizer::new(OptimizerConfig { learning_rate: 0.0, ..Default::default() }).unwrap();
        set_grad_to_params(&mut m);
        opt.step(&mut m);
        let (Layer::Dense(a), Layer::Dense(b)) = (&m.layers[0], &before.layers[0]) else { unreachable!() };
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn invalid_configs_are_listed() {
        let cfg = OptimizerConfig { learning_rate: -1.0, epochs: 0, ..Default::default() };
        match cfg.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
