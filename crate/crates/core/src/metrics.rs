//! Accuracy, AUC and forgetting metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

fn arg(msg: impl Into<String>) -> MetricsError {
    MetricsError::Argument(msg.into())
}

/// Above this many samples on either side, [`auc`] switches from pair counting to ranks.
pub const PAIRWISE_LIMIT: usize = 10_000;

/// Scores of task-k data (IND) and of other tasks' data (OOD) under task k's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPopulation {
    pub ind: Vec<f64>,
    pub ood: Vec<f64>,
}

impl ScoredPopulation {
    pub fn new(ind: Vec<f64>, ood: Vec<f64>) -> Result<Self, MetricsError> {
        if ind.is_empty() || ood.is_empty() {
            return Err(arg("AUC needs nonempty IND and OOD populations"));
        }
        if ind.iter().chain(&ood).any(|s| s.is_nan()) {
            return Err(arg("AUC scores must not be NaN"));
        }
        Ok(Self { ind, ood })
    }
}

/// Exhaustive Mann-Whitney count: `P(ind > ood) + ½ P(ind = ood)`.
pub fn auc_pairwise(pop: &ScoredPopulation) -> f64 {
    let mut twice: u64 = 0;
    for &a in &pop.ind {
        for &b in &pop.ood {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2.0 * pop.ind.len() as f64 * pop.ood.len() as f64)
}

/// Rank-sum form of the same statistic, with tied scores sharing their average rank.
pub fn auc_rank_sum(pop: &ScoredPopulation) -> f64 {
    let (n1, n2) = (pop.ind.len(), pop.ood.len());
    let mut all: Vec<(f64, bool)> = pop
        .ind
        .iter()
        .map(|&s| (s, true))
        .chain(pop.ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Ranks are doubled so tied averages stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u128;
        let ind_in_run = all[i..=j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_avg * ind_in_run;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (n1 as u128) * (n1 as u128 + 1);
    twice_u as f64 / (2.0 * n1 as f64 * n2 as f64)
}

pub fn auc(pop: &ScoredPopulation) -> f64 {
    if pop.ind.len() <= PAIRWISE_LIMIT && pop.ood.len() <= PAIRWISE_LIMIT {
        auc_pairwise(pop)
    } else {
        auc_rank_sum(pop)
    }
}

pub fn avg_auc(aucs: &[f64]) -> Result<f64, MetricsError> {
    if aucs.is_empty() {
        return Err(arg("average of zero AUC values"));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Percentage of predictions equal to their label.
pub fn cil_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(arg(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(arg("accuracy of an empty set"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilAccuracy {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

/// Within-task accuracy per task (task id given), macro-averaged.
pub fn til_accuracy(per_task: &[(Vec<usize>, Vec<usize>)]) -> Result<TilAccuracy, MetricsError> {
    if per_task.is_empty() {
        return Err(arg("no tasks"));
    }
    let per_task = per_task
        .iter()
        .map(|(p, l)| cil_accuracy(p, l))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(TilAccuracy { per_task, mean })
}

/// `A[k][t]`: accuracy on task k after learning task t (0-based, `t ≥ k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    /// Appends the accuracies of tasks `0..=t` measured right after learning task `t`.
    pub fn push_stage(&mut self, accuracies: &[f64]) -> Result<(), MetricsError> {
        let t = self.stages();
        if accuracies.len() != t + 1 {
            return Err(arg(format!("stage {t} needs {} accuracies, got {}", t + 1, accuracies.len())));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return Err(arg(format!("accuracy {a} outside [0,100]")));
        }
        for (k, &a) in accuracies.iter().enumerate() {
            if k == t {
                self.rows.push(vec![a]);
            } else {
                self.rows[k].push(a);
            }
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, task: usize, stage: usize) -> Option<f64> {
        stage.checked_sub(task).and_then(|d| self.rows.get(task)?.get(d).copied())
    }

    pub fn initial(&self, task: usize) -> Option<f64> {
        self.get(task, task)
    }
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        Self::new()
    }
}

/// `F^t = mean_{k<t} (A_init[k] − A[k][t])`, with `t` counting learned tasks (1-based).
pub fn forgetting_rate(matrix: &AccuracyMatrix, t: usize) -> Result<f64, MetricsError> {
    if t < 2 {
        return Err(arg(format!("forgetting rate needs t ≥ 2, got {t}")));
    }
    if t > matrix.stages() {
        return Err(arg(format!("only {} stages recorded, asked for {t}", matrix.stages())));
    }
    let sum: f64 = (0..t - 1)
        .map(|k| matrix.initial(k).unwrap() - matrix.get(k, t - 1).unwrap())
        .sum();
    Ok(sum / (t - 1) as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| out[k] = r);
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(arg(format!("spearman needs two equal series of length ≥ 2, got {} and {}", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Rounds a percentage to one decimal for reports.
pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}
