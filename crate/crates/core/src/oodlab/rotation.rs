use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{arg, HeadModel, OodError};
use crate::numkit::{softmax_cross_entropy, Activation, Dense, DenseNet, GradTape, Rng};

/// Quarter-turn count of the rotation group.
pub const ROTATIONS: usize = 4;

/// Counterclockwise rotation by `turns` quarter turns: `new[i][j] = old[j][n−1−i]` per turn.
pub fn rotate90(image: &[f64], height: usize, width: usize, turns: usize) -> Result<Vec<f64>, OodError> {
    if height != width {
        return Err(arg(format!("rotation needs a square image, got {height}×{width}")));
    }
    if image.len() != height * width {
        return Err(arg(format!("image has {} pixels, expected {}", image.len(), height * width)));
    }
    let n = height;
    let mut cur = image.to_vec();
    for _ in 0..turns % ROTATIONS {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = cur[j * n + (n - 1 - i)];
            }
        }
        cur = next;
    }
    Ok(cur)
}

pub fn hflip(image: &[f64], side: usize) -> Vec<f64> {
    let mut out = image.to_vec();
    for row in out.chunks_mut(side) {
        row.reverse();
    }
    out
}

/// View augmentation applied before rotating: a fair-coin horizontal flip plus clamped
/// Gaussian pixel noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub flip: bool,
    pub noise: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Self { flip: true, noise: 0.05 }
    }
}

impl Augment {
    pub const NONE: Augment = Augment { flip: false, noise: 0.0 };

    fn apply(&self, image: &[f64], side: usize, rng: &mut Rng) -> Vec<f64> {
        let mut v = if self.flip && rng.gen_bool(0.5) { hflip(image, side) } else { image.to_vec() };
        if self.noise > 0.0 {
            for p in &mut v {
                let e: f64 = StandardNormal.sample(rng);
                *p = (*p + self.noise * e).clamp(0.0, 1.0);
            }
        }
        v
    }
}

/// Eight samples per input: two augmented views, each under the four rotations.
/// Rotation `r` of class `y` is labelled `4y + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBatch {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    /// Index of the originating input.
    pub source: Vec<usize>,
}

pub const VIEWS: usize = 2;

pub fn build_rotation_batch(
    xs: &[Vec<f64>],
    ys: &[usize],
    side: usize,
    class_count: usize,
    augment: &Augment,
    rng: &mut Rng,
) -> Result<RotationBatch, OodError> {
    if xs.len() != ys.len() {
        return Err(arg(format!("{} inputs for {} labels", xs.len(), ys.len())));
    }
    if let Some(y) = ys.iter().find(|&&y| y >= class_count) {
        return Err(arg(format!("label {y} outside {class_count} classes")));
    }
    let n = xs.len() * VIEWS * ROTATIONS;
    let mut batch = RotationBatch { x: Vec::with_capacity(n), y: Vec::with_capacity(n), source: Vec::with_capacity(n) };
    for (i, (x, &y)) in xs.iter().zip(ys).enumerate() {
        for _ in 0..VIEWS {
            let view = augment.apply(x, side, rng);
            for r in 0..ROTATIONS {
                batch.x.push(rotate90(&view, side, side, r)?);
                batch.y.push(ROTATIONS * y + r);
                batch.source.push(i);
            }
        }
    }
    Ok(batch)
}

/// `out_j = ¼ Σ_r f(rotate(x, r))_{4j+r}` on the raw (unaugmented) input.
pub fn ensemble_logits<M: HeadModel + ?Sized>(model: &M, x: &[f64], side: usize, task: usize) -> Result<Vec<f64>, OodError> {
    let mut out: Vec<f64> = Vec::new();
    for r in 0..ROTATIONS {
        let f = model.logits(&rotate90(x, side, side, r)?, task)?;
        if f.len() % ROTATIONS != 0 {
            return Err(arg(format!("head width {} is not a multiple of {ROTATIONS}", f.len())));
        }
        if out.is_empty() {
            out = vec![0.0; f.len() / ROTATIONS];
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += f[ROTATIONS * j + r] / ROTATIONS as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadFit {
    pub head: Dense,
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trains a linear softmax classifier on fixed features with minibatch SGD.
pub fn finetune_rotation_head(
    features: &[Vec<f64>],
    labels: &[usize],
    width: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    rng: &mut Rng,
) -> Result<HeadFit, OodError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(arg(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    if batch == 0 {
        return Err(arg("batch size must be positive"));
    }
    let dim = features[0].len();
    let mut net = DenseNet::glorot(&[dim, width], &[Activation::Identity], rng);
    let mut tape = GradTape::for_net(&net);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_loss = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            tape.zero();
            for &i in chunk {
                let (f, cache) = net.forward(&features[i], None)?;
                let (l, g) = softmax_cross_entropy(&f, labels[i])?;
                total += l;
                net.backward(&mut tape, &cache, &g)?;
            }
            tape.scale(1.0 / chunk.len() as f64);
            net.sgd_step(&tape, lr)?;
        }
        epoch_loss.push(total / features.len() as f64);
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| net.forward(x, None).map(|(f, _)| crate::numkit::argmax(&f) == y).unwrap_or(false))
        .count();
    let head = net.layers()[0].clone();
    Ok(HeadFit { head, epoch_loss, train_accuracy: 100.0 * correct as f64 / features.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::seeded_rng;

    #[test]
    fn rotation_examples() {
        let img = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rotate90(&img, 2, 2, 1).unwrap(), vec![2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate90(&img, 2, 2, 0).unwrap(), img.to_vec());
        assert_eq!(rotate90(&img, 2, 2, 4).unwrap(), img.to_vec());
        let three: Vec<f64> = (0..9).map(f64::from).collect();
        let mut r = three.clone();
        for _ in 0..4 {
            r = rotate90(&r, 3, 3, 1).unwrap();
        }
        assert_eq!(r, three);
        assert!(rotate90(&[0.0; 6], 2, 3, 1).is_err());
    }

    #[test]
    fn batch_labels_and_size() {
        let mut rng = seeded_rng(1);
        let b = build_rotation_batch(&[vec![0.5; 4]], &[1], 2, 3, &Augment::default(), &mut rng).unwrap();
        assert_eq!(b.x.len(), 8);
        let mut labels = b.y.clone();
        labels.sort();
        assert_eq!(labels, vec![4, 4, 5, 5, 6, 6, 7, 7]);
        let all = build_rotation_batch(&[vec![0.0; 4], vec![0.0; 4]], &[0, 1], 2, 2, &Augment::NONE, &mut rng).unwrap();
        let mut seen = all.y.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        // A constant image is rotation-invariant but its four copies carry four labels.
        assert_eq!(all.x[0], all.x[1]);
        assert_ne!(all.y[0], all.y[1]);
    }

    /// Logit `4j + r` is `j + r` regardless of input.
    struct Fixed;
    impl HeadModel for Fixed {
        fn task_count(&self) -> usize {
            1
        }
        fn logits(&self, _: &[f64], _: usize) -> Result<Vec<f64>, OodError> {
            Ok((0..8).map(|i| (i / 4 + i % 4) as f64).collect())
        }
        fn input_gradient(&self, x: &[f64], _: usize, _: &[f64]) -> Result<Vec<f64>, OodError> {
            Ok(vec![0.0; x.len()])
        }
    }

    #[test]
    fn ensemble_examples() {
        // Class j's rotation logits are j + [0, 1, 2, 3], so the mean is j + 1.5.
        let e = ensemble_logits(&Fixed, &[0.0; 4], 2, 0).unwrap();
        assert_eq!(e, vec![1.5, 2.5]);
    }

    #[test]
    fn ensemble_orbit_sum_is_rotation_equivariant() {
        let mut rng = seeded_rng(4);
        let net = DenseNet::mlp(&[9, 6, 8], Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let orbit = |x: &[f64]| -> Vec<f64> {
            let mut s = vec![0.0; 8];
            for r in 0..4 {
                let f = net.logits(&rotate90(x, 3, 3, r).unwrap(), 0).unwrap();
                s.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            }
            s
        };
        let (a, b) = (orbit(&x), orbit(&rotate90(&x, 3, 3, 1).unwrap()));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn head_fit_on_separable_features() {
        let mut rng = seeded_rng(8);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..200 {
            let c = i % 8;
            let mut v = vec![0.0; 8];
            v[c] = 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0;
            xs.push(v);
            ys.push(c);
        }
        let fit = finetune_rotation_head(&xs, &ys, 8, 100, 0.5, 16, &mut rng).unwrap();
        assert!(fit.train_accuracy >= 99.0);
        assert_eq!(fit.head.output_width(), 8);
    }
}
