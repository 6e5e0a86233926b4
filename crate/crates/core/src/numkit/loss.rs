//! Scalar losses and the small vector helpers they share.

use super::NumError;

/// Lower clamp applied to every argument of `ln` in the crate.
pub const LOG_CLAMP: f64 = 1e-12;

/// `ln(max(p, LOG_CLAMP))`
#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)`, stable for large |z|.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    softmax(&scaled)
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean-free softmax cross-entropy `−ln softmax(logits)[target]` and its logit gradient.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NumError> {
    if target >= logits.len() {
        return Err(NumError::Shape {
            what: "cross-entropy target",
            expected: logits.len(),
            actual: target,
        });
    }
    let lse = log_sum_exp(logits);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((lse - logits[target], grad))
}

/// `u / ‖u‖` and the norm.
pub fn l2_normalize(u: &[f64]) -> (Vec<f64>, f64) {
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(LOG_CLAMP);
    (u.iter().map(|x| x / norm).collect(), norm)
}

/// Chain rule through `z = u/‖u‖`: maps ∂L/∂z to ∂L/∂u.
pub fn l2_normalize_backward(z: &[f64], norm: f64, grad_z: &[f64]) -> Vec<f64> {
    let dot: f64 = z.iter().zip(grad_z).map(|(a, b)| a * b).sum();
    z.iter().zip(grad_z).map(|(zi, gi)| (gi - zi * dot) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_of_uniform_pair_is_ln2() {
        let (l, g) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
        assert!(softmax_cross_entropy(&[0.0], 1).is_err());
    }

    #[test]
    fn sigmoid_forms_agree() {
        for z in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            assert!((log_sigmoid(z) - sigmoid(z).ln()).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
