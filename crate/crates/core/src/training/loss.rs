//! Pairwise cross-entropy, triplet ranking and attribute cross-entropy losses,
//! each with its analytic gradient.

use crate::error::{shape_err, Error, Result};
use crate::scalar::{sigmoid, softmax, softplus, Scalar};

/// `−Σ [y ln p + (1 − y) ln(1 − p)]` over the given pairs.
pub fn xent_pair_loss<T: Scalar>(p: &[T], y: &[u8]) -> Result<T> {
    if p.len() != y.len() {
        return Err(shape_err!("{} probabilities for {} labels", p.len(), y.len()));
    }
    let mut loss = T::zero();
    for (&pi, &yi) in p.iter().zip(y) {
        if !(pi > T::zero() && pi < T::one()) {
            return Err(Error::Domain(format!("probability {pi} outside (0, 1)")));
        }
        loss -= if yi != 0 { pi.ln() } else { (T::one() - pi).ln() };
    }
    Ok(loss)
}

/// Same loss evaluated from logits, with `dL/dz = σ(z) − y`.
pub fn xent_from_logits<T: Scalar>(z: &[T], y: &[u8]) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let grad = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| {
            let t = if yi != 0 { T::one() } else { T::zero() };
            loss += if yi != 0 { softplus(-zi) } else { softplus(zi) };
            sigmoid(zi) - t
        })
        .collect();
    (loss, grad)
}

/// `Σ_k σ(qf · (neg_k − pos))`
pub fn triplet_loss<T: Scalar>(qf: &[T], af_pos: &[T], af_negs: &[&[T]]) -> Result<T> {
    Ok(triplet_with_grad(qf, af_pos, af_negs)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad<T> {
    pub loss: T,
    pub d_query: Vec<T>,
    pub d_positive: Vec<T>,
    pub d_negatives: Vec<Vec<T>>,
}

pub fn triplet_with_grad<T: Scalar>(qf: &[T], af_pos: &[T], af_negs: &[&[T]]) -> Result<TripletGrad<T>> {
    if af_negs.is_empty() {
        return Err(Error::Parameter("triplet loss needs at least one negative".into()));
    }
    let d = qf.len();
    if af_pos.len() != d || af_negs.iter().any(|n| n.len() != d) {
        return Err(shape_err!("triplet vectors must all have length {d}"));
    }
    let pos_score = T::dot(qf, af_pos);
    let mut out = TripletGrad { loss: T::zero(), d_query: vec![T::zero(); d], d_positive: vec![T::zero(); d], d_negatives: Vec::new() };
    for neg in af_negs {
        let s = sigmoid(T::dot(qf, neg) - pos_score);
        out.loss += s;
        let w = s * (T::one() - s);
        for c in 0..d {
            out.d_query[c] += w * (neg[c] - af_pos[c]);
            out.d_positive[c] -= w * qf[c];
        }
        out.d_negatives.push(qf.iter().map(|&q| w * q).collect());
    }
    Ok(out)
}

/// Sum over attributes of categorical cross-entropy; label `0` means missing
/// and contributes nothing. Labels run `1..=cardinality`.
pub fn attribute_xent<T: Scalar>(logits: &[Vec<T>], labels: &[u16]) -> Result<T> {
    Ok(attribute_xent_with_grad(logits, labels)?.0)
}

pub fn attribute_xent_with_grad<T: Scalar>(logits: &[Vec<T>], labels: &[u16]) -> Result<(T, Vec<Vec<T>>)> {
    if logits.len() != labels.len() {
        return Err(shape_err!("{} attribute logit rows for {} labels", logits.len(), labels.len()));
    }
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &label) in logits.iter().zip(labels) {
        if label == 0 {
            grads.push(vec![T::zero(); z.len()]);
            continue;
        }
        let class = usize::from(label) - 1;
        if class >= z.len() {
            return Err(Error::Data(format!("attribute label {label} outside 1..={}", z.len())));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln();
        loss += lse - z[class];
        let mut g = softmax(z);
        g[class] -= T::one();
        grads.push(g);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn pair_loss_closed_forms() {
        assert!((xent_pair_loss(&[0.5f64], &[1]).unwrap() - LN2).abs() < 1e-15);
        assert!((xent_pair_loss(&[0.5f64], &[0]).unwrap() - LN2).abs() < 1e-15);
        let p = vec![0.5f64; 64 * 50];
        let mut y = vec![0u8; 64 * 50];
        y.iter_mut().step_by(50).for_each(|v| *v = 1);
        assert!((xent_pair_loss(&p, &y).unwrap() - 3200.0 * LN2).abs() < 1e-9);
        assert!(matches!(xent_pair_loss(&[1.0f64], &[1]), Err(Error::Domain(_))));
        assert!(matches!(xent_pair_loss(&[0.0f64], &[0]), Err(Error::Domain(_))));
    }

    #[test]
    fn logit_form_agrees_with_probability_form() {
        let z = [-3.0f64, -0.2, 0.0, 1.5, 4.0];
        let y = [0u8, 1, 1, 0, 1];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (l, _) = xent_from_logits(&z, &y);
        assert!((l - xent_pair_loss(&p, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn triplet_closed_forms() {
        let q = [1.0f64, 0.0];
        let same = [0.3f64, 0.4];
        let negs: Vec<&[f64]> = vec![&same; 50];
        assert_eq!(triplet_loss(&q, &same, &negs).unwrap(), 25.0);
        let l = triplet_loss(&[1.0f64, 0.0], &[1.0, 0.0], &[&[0.0, 1.0]]).unwrap();
        assert!((l - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!(matches!(triplet_loss::<f64>(&q, &same, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn triplet_decreases_with_positive_score() {
        let q = [1.0f64, 0.5];
        let negs: Vec<&[f64]> = vec![&[0.2, 0.1], &[-0.4, 0.9]];
        let mut last = f64::INFINITY;
        for s in 0..20 {
            let pos = [s as f64 * 0.3, 0.0];
            let l = triplet_loss(&q, &pos, &negs).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn attribute_loss_cases() {
        let uniform = vec![vec![0.0f64; 7]];
        assert!((attribute_xent(&uniform, &[3]).unwrap() - 7f64.ln()).abs() < 1e-12);
        let mut sat = vec![-50.0f64; 7];
        sat[2] = 50.0;
        assert!(attribute_xent(&[sat], &[3]).unwrap() < 1e-30);
        assert_eq!(attribute_xent(&uniform, &[0]).unwrap(), 0.0);
        assert!(matches!(attribute_xent(&uniform, &[8]), Err(Error::Data(_))));
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let z = vec![-1.2, 0.3, 2.2, -0.1];
        let y = [1u8, 0, 1, 0];
        let (_, g) = xent_from_logits(&z, &y);
        for i in 0..4 {
            assert!(rel(g[i], fd(|v| xent_from_logits(v, &y).0, &z, i)) < 1e-6);
        }

        let x = vec![0.5, -0.3, 0.8, 0.1, 0.4, -0.6, -0.2, 0.9, 0.3];
        let f = |v: &[f64]| triplet_loss(&v[0..3], &v[3..6], &[&v[6..9]]).unwrap();
        let t = triplet_with_grad(&x[0..3], &x[3..6], &[&x[6..9]]).unwrap();
        let analytic: Vec<f64> = t.d_query.iter().chain(&t.d_positive).chain(&t.d_negatives[0]).copied().collect();
        for i in 0..9 {
            assert!(rel(analytic[i], fd(f, &x, i)) < 1e-6);
        }

        let logits = vec![0.2, -0.7, 1.1, 0.05];
        let (_, g) = attribute_xent_with_grad(&[logits.clone()], &[2]).unwrap();
        for i in 0..4 {
            assert!(rel(g[0][i], fd(|v| attribute_xent(&[v.to_vec()], &[2]).unwrap(), &logits, i)) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn triplet_is_shift_invariant(
            q in prop::collection::vec(-2.0f64..2.0, 4),
            pos in prop::collection::vec(-2.0f64..2.0, 4),
            neg in prop::collection::vec(-2.0f64..2.0, 4),
            shift in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let sp: Vec<f64> = pos.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let sn: Vec<f64> = neg.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let a = triplet_loss(&q, &pos, &[&neg]).unwrap();
            let b = triplet_loss(&q, &sp, &[&sn]).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
