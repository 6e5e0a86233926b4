//! Datasets, task sequences and synthetic fixtures.

mod idx;
mod synth;

pub use idx::{load_idx_pair, parse_idx, read_idx, serialize_idx, IdxFile, IMAGE_MAGIC, LABEL_MAGIC};
pub use synth::{synth_gaussian_tasks, synth_image_tasks, GaussianSpec, ImageSpec};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::numkit::seeded_rng;
use crate::theory::TaskTopology;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("stream truncated: need {expected} bytes, have {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

fn arg(msg: impl Into<String>) -> DataError {
    DataError::Argument(msg.into())
}

/// Images flattened row-major with pixels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    height: usize,
    width: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledImageSet {
    pub fn new(
        height: usize,
        width: usize,
        images: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::Length { expected: images.len(), actual: labels.len() });
        }
        if let Some(i) = images.iter().position(|im| im.len() != height * width) {
            return Err(arg(format!("image {i} has {} pixels, expected {}", images[i].len(), height * width)));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(arg(format!("label {l} outside {class_count} classes")));
        }
        if images.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(arg("pixel outside [0,1]"));
        }
        Ok(Self { height, width, images, labels, class_count })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// 2×2 average pooling (odd trailing rows/columns dropped).
    pub fn downsample2(&self) -> LabeledImageSet {
        let (h, w) = (self.height / 2, self.width / 2);
        let images = self
            .images
            .iter()
            .map(|im| {
                let mut out = Vec::with_capacity(h * w);
                for r in 0..h {
                    for c in 0..w {
                        let at = |rr: usize, cc: usize| im[(2 * r + rr) * self.width + 2 * c + cc];
                        out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                    }
                }
                out
            })
            .collect();
        LabeledImageSet { height: h, width: w, images, labels: self.labels.clone(), class_count: self.class_count }
    }

    /// Keeps the first `n` samples of each class, in original order.
    pub fn take_per_class(&self, n: usize) -> LabeledImageSet {
        let mut seen = vec![0usize; self.class_count];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i]];
                *c += 1;
                *c <= n
            })
            .collect();
        LabeledImageSet {
            height: self.height,
            width: self.width,
            images: keep.iter().map(|&i| self.images[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

/// Inputs with labels local to one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn push(&mut self, x: Vec<f64>, y: usize) {
        self.x.push(x);
        self.y.push(y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Samples,
    pub test: Samples,
    /// Source label of each local class.
    pub source_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub topology: TaskTopology,
    pub tasks: Vec<TaskData>,
    pub input_width: usize,
    /// Side length when inputs are square images.
    pub image_side: Option<usize>,
}

impl TaskSequence {
    /// All test samples labelled with their global class id.
    pub fn global_test(&self) -> Vec<(&[f64], usize, usize)> {
        self.tasks
            .iter()
            .enumerate()
            .flat_map(|(k, t)| {
                t.test.x.iter().zip(&t.test.y).map(move |(x, &y)| (x.as_slice(), k, self.topology.global(k, y)))
            })
            .collect()
    }
}

/// Task `k` owns classes `[k·m, (k+1)·m)` of the class order, which is the identity unless
/// `shuffle_seed` permutes it.
pub fn split_tasks(
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    classes_per_task: usize,
    shuffle_seed: Option<u64>,
) -> Result<TaskSequence, DataError> {
    let c = train.class_count();
    if test.class_count() != c || (test.height, test.width) != (train.height, train.width) {
        return Err(arg("train and test sets disagree on classes or image shape"));
    }
    if classes_per_task == 0 || !c.is_multiple_of(classes_per_task) {
        return Err(arg(format!("{c} classes do not split into tasks of {classes_per_task}")));
    }
    let mut order: Vec<usize> = (0..c).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed));
    }
    let t = c / classes_per_task;
    let mut locate = vec![(0, 0); c];
    for (pos, &label) in order.iter().enumerate() {
        locate[label] = (pos / classes_per_task, pos % classes_per_task);
    }
    let mut tasks: Vec<TaskData> = (0..t)
        .map(|k| TaskData {
            train: Samples::default(),
            test: Samples::default(),
            source_labels: order[k * classes_per_task..(k + 1) * classes_per_task].to_vec(),
        })
        .collect();
    for (x, &l) in train.images.iter().zip(&train.labels) {
        let (k, j) = locate[l];
        tasks[k].train.push(x.clone(), j);
    }
    for (x, &l) in test.images.iter().zip(&test.labels) {
        let (k, j) = locate[l];
        tasks[k].test.push(x.clone(), j);
    }
    let side = (train.height == train.width).then_some(train.height);
    Ok(TaskSequence {
        topology: TaskTopology::uniform(t, classes_per_task).map_err(|e| arg(e.to_string()))?,
        tasks,
        input_width: train.height * train.width,
        image_side: side,
    })
}

/// Class-stratified split: each class sends `round(fraction · n_c)` shuffled samples to validation.
pub fn validation_split(set: &Samples, fraction: f64, seed: u64) -> Result<(Samples, Samples), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(arg(format!("validation fraction {fraction} outside (0,1)")));
    }
    let classes = set.y.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in set.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut in_val = vec![false; set.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n_val = (fraction * idx.len() as f64).round() as usize;
        if n_val == 0 || n_val == idx.len() {
            return Err(arg(format!("class {c} with {} samples leaves an empty stratum", idx.len())));
        }
        idx.shuffle(&mut rng);
        idx[..n_val].iter().for_each(|&i| in_val[i] = true);
    }
    let (mut train, mut val) = (Samples::default(), Samples::default());
    for (i, v) in in_val.into_iter().enumerate() {
        let dst = if v { &mut val } else { &mut train };
        dst.push(set.x[i].clone(), set.y[i]);
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(classes: usize, per_class: usize) -> LabeledImageSet {
        let n = classes * per_class;
        let images = (0..n).map(|i| vec![(i % 7) as f64 / 7.0; 4]).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledImageSet::new(2, 2, images, labels, classes).unwrap()
    }

    #[test]
    fn five_task_layout() {
        let s = split_tasks(&toy(10, 3), &toy(10, 1), 2, None).unwrap();
        assert_eq!(s.topology.task_count(), 5);
        assert_eq!(s.tasks[1].source_labels, vec![2, 3]);
        let total: usize = s.tasks.iter().map(|t| t.train.len()).sum();
        assert_eq!(total, 30);
        assert!(s.tasks.iter().all(|t| t.train.y.iter().all(|&y| y < 2)));
        assert_eq!(s.image_side, Some(2));
        assert!(split_tasks(&toy(10, 3), &toy(10, 1), 3, None).is_err());
        let one = split_tasks(&toy(10, 3), &toy(10, 1), 10, None).unwrap();
        assert_eq!(one.topology.task_count(), 1);
    }

    #[test]
    fn shuffled_split_is_still_a_partition() {
        let s = split_tasks(&toy(6, 2), &toy(6, 1), 2, Some(9)).unwrap();
        let mut all: Vec<usize> = s.tasks.iter().flat_map(|t| t.source_labels.clone()).collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_validation() {
        let set = Samples { x: (0..100).map(|i| vec![i as f64]).collect(), y: (0..100).map(|i| i % 2).collect() };
        let (tr, va) = validation_split(&set, 0.1, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
        assert_eq!(va.y.iter().filter(|&&y| y == 0).count(), 5);
        let mut ids: Vec<f64> = tr.x.iter().chain(&va.x).map(|v| v[0]).collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(validation_split(&set, 0.1, 1).unwrap(), (tr, va));
        let tiny = Samples { x: vec![vec![0.0]; 3], y: vec![0, 0, 1] };
        assert!(validation_split(&tiny, 0.1, 0).is_err());
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = vec![0.0, 1.0, 0.5, 0.5];
        let s = LabeledImageSet::new(2, 2, vec![img], vec![0], 1).unwrap().downsample2();
        assert_eq!(s.images()[0], vec![0.5]);
    }
}
