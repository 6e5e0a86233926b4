use super::{arg, OodError};
use crate::numkit::{l2_normalize, l2_normalize_backward, log_sum_exp, softmax};

pub const DEFAULT_CONTRASTIVE_TAU: f64 = 0.5;

/// Supervised contrastive loss over unit embeddings `z`, with its gradient.
///
/// Every sample is contrasted against all other samples; positives share its label.
pub fn sup_con_loss(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<(f64, Vec<Vec<f64>>), OodError> {
    let m = z.len();
    if labels.len() != m {
        return Err(arg(format!("{m} embeddings for {} labels", labels.len())));
    }
    if !(tau > 0.0) {
        return Err(arg(format!("temperature {tau} must be positive")));
    }
    let d = z.first().map_or(0, Vec::len);
    if z.iter().any(|v| v.len() != d) {
        return Err(arg("embeddings differ in dimension"));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut grad = vec![vec![0.0; d]; m];
    let mut loss = 0.0;
    for i in 0..m {
        let others: Vec<usize> = (0..m).filter(|&a| a != i).collect();
        let positives = others.iter().filter(|&&a| labels[a] == labels[i]).count();
        if positives == 0 {
            return Err(OodError::Degenerate(format!("sample {i} has no positive")));
        }
        let s: Vec<f64> = others.iter().map(|&a| dot(&z[i], &z[a]) / tau).collect();
        let pos_mean = others
            .iter()
            .zip(&s)
            .filter(|(&a, _)| labels[a] == labels[i])
            .map(|(_, v)| v)
            .sum::<f64>()
            / positives as f64;
        loss += log_sum_exp(&s) - pos_mean;
        let q = softmax(&s);
        for (n, &a) in others.iter().enumerate() {
            let is_pos = f64::from(labels[a] == labels[i]);
            let c = (q[n] - is_pos / positives as f64) / (tau * m as f64);
            for t in 0..d {
                grad[i][t] += c * z[a][t];
                grad[a][t] += c * z[i][t];
            }
        }
    }
    Ok((loss / m as f64, grad))
}

/// [`sup_con_loss`] on raw features, normalized here; gradients are with respect to `u`.
pub fn sup_con_loss_from_features(
    u: &[Vec<f64>],
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>), OodError> {
    let (z, norms): (Vec<Vec<f64>>, Vec<f64>) = u.iter().map(|v| l2_normalize(v)).unzip();
    let (loss, gz) = sup_con_loss(&z, labels, tau)?;
    let gu = z.iter().zip(&norms).zip(&gz).map(|((z, &n), g)| l2_normalize_backward(z, n, g)).collect();
    Ok((loss, gu))
}
