//! Deterministic synthetic task sequences.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{arg, DataError, Samples, TaskData, TaskSequence};
use crate::numkit::{derive_seed, seeded_rng, Rng};
use crate::theory::TaskTopology;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// Each class is a unit-variance isotropic Gaussian centred on its own point of the
/// `separation`-spaced integer lattice.
pub fn synth_gaussian_tasks(spec: &GaussianSpec) -> Result<TaskSequence, DataError> {
    if !(spec.separation > 0.0) {
        return Err(arg(format!("separation must be positive, got {}", spec.separation)));
    }
    if spec.dim == 0 {
        return Err(arg("dimension must be at least 1"));
    }
    let topology = TaskTopology::uniform(spec.tasks, spec.classes_per_task).map_err(|e| arg(e.to_string()))?;
    let c = topology.total_classes();
    let mut side = 1usize;
    while side.checked_pow(spec.dim as u32).is_some_and(|n| n < c) {
        side += 1;
    }
    let mut points: Vec<Vec<f64>> = (0..c)
        .map(|mut n| {
            (0..spec.dim)
                .map(|_| {
                    let d = n % side;
                    n /= side;
                    d as f64 * spec.separation
                })
                .collect()
        })
        .collect();
    let mut rng = seeded_rng(spec.seed);
    points.shuffle(&mut rng);
    let mut tasks = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let mut train = Samples::default();
        let mut test = Samples::default();
        for j in 0..spec.classes_per_task {
            let g = topology.global(k, j);
            let centre = &points[g];
            let draw = |rng: &mut Rng, into: &mut Samples, n: usize| {
                for _ in 0..n {
                    let x = centre.iter().map(|m| { let e: f64 = StandardNormal.sample(rng); m + e }).collect();
                    into.x.push(x);
                    into.y.push(j);
                }
            };
            draw(&mut seeded_rng(derive_seed(spec.seed, 2 * g as u64 + 1)), &mut train, spec.train_per_class);
            draw(&mut seeded_rng(derive_seed(spec.seed, 2 * g as u64 + 2)), &mut test, spec.test_per_class);
        }
        tasks.push(TaskData { train, test, source_labels: (0..spec.classes_per_task).map(|j| topology.global(k, j)).collect() });
    }
    Ok(TaskSequence { topology, tasks, input_width: spec.dim, image_side: None })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub side: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

/// Square grayscale images: each class is a random-walk stroke prototype, and samples
/// are that prototype shifted by at most one pixel plus clamped Gaussian noise.
pub fn synth_image_tasks(spec: &ImageSpec) -> Result<TaskSequence, DataError> {
    if spec.side < 4 {
        return Err(arg(format!("image side {} is smaller than 4", spec.side)));
    }
    let topology = TaskTopology::uniform(spec.tasks, spec.classes_per_task).map_err(|e| arg(e.to_string()))?;
    let n = spec.side;
    let mut rng = seeded_rng(spec.seed);
    let prototypes: Vec<Vec<f64>> = (0..topology.total_classes())
        .map(|_| {
            let mut img = vec![0.0; n * n];
            let (mut r, mut c) = (rng.gen_range(1..n - 1) as i64, rng.gen_range(1..n - 1) as i64);
            for _ in 0..2 * n {
                img[r as usize * n + c as usize] = 1.0;
                let (dr, dc) = [(0, 1), (1, 0), (0, -1), (-1, 0)][rng.gen_range(0..4)];
                r = (r + dr).clamp(1, n as i64 - 2);
                c = (c + dc).clamp(1, n as i64 - 2);
            }
            img
        })
        .collect();
    let sample = |proto: &[f64], rng: &mut Rng| -> Vec<f64> {
        let (dr, dc) = (rng.gen_range(-1i64..=1), rng.gen_range(-1i64..=1));
        (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as i64 - dr, (i % n) as i64 - dc);
                let base = if (0..n as i64).contains(&r) && (0..n as i64).contains(&c) {
                    proto[r as usize * n + c as usize]
                } else {
                    0.0
                };
                let e: f64 = StandardNormal.sample(rng);
                (base + spec.noise * e).clamp(0.0, 1.0)
            })
            .collect()
    };
    let mut tasks = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let (mut train, mut test) = (Samples::default(), Samples::default());
        for j in 0..spec.classes_per_task {
            let g = topology.global(k, j);
            let mut r = seeded_rng(derive_seed(spec.seed, g as u64 + 1));
            for _ in 0..spec.train_per_class {
                train.x.push(sample(&prototypes[g], &mut r));
                train.y.push(j);
            }
            for _ in 0..spec.test_per_class {
                test.x.push(sample(&prototypes[g], &mut r));
                test.y.push(j);
            }
        }
        tasks.push(TaskData { train, test, source_labels: (0..spec.classes_per_task).map(|j| topology.global(k, j)).collect() });
    }
    Ok(TaskSequence { topology, tasks, input_width: n * n, image_side: Some(n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(separation: f64) -> GaussianSpec {
        GaussianSpec {
            tasks: 3,
            classes_per_task: 2,
            dim: 2,
            separation,
            train_per_class: 50,
            test_per_class: 20,
            seed: 5,
        }
    }

    fn centres(seq: &TaskSequence) -> Vec<Vec<f64>> {
        seq.tasks
            .iter()
            .flat_map(|t| {
                (0..2).map(move |j| {
                    let xs: Vec<&Vec<f64>> = t.train.x.iter().zip(&t.train.y).filter(|p| *p.1 == j).map(|p| p.0).collect();
                    (0..2).map(|d| xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64).collect()
                })
            })
            .collect()
    }

    #[test]
    fn deterministic_and_separated() {
        let a = synth_gaussian_tasks(&spec(10.0)).unwrap();
        assert_eq!(a, synth_gaussian_tasks(&spec(10.0)).unwrap());
        let c = centres(&a);
        for i in 0..c.len() {
            for j in 0..i {
                let d = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!(d > 8.0, "class means {i},{j} only {d} apart");
            }
        }
        assert!(synth_gaussian_tasks(&spec(0.0)).is_err());
    }

    #[test]
    fn tiny_separation_is_near_chance() {
        // Nearest-true-centre rule (the Bayes rule here) on a two-class task.
        let s = GaussianSpec { separation: 0.1, train_per_class: 2000, ..spec(0.1) };
        let seq = synth_gaussian_tasks(&s).unwrap();
        let c = centres(&seq);
        let t = &seq.tasks[0];
        let correct = t
            .train
            .x
            .iter()
            .zip(&t.train.y)
            .filter(|(x, &y)| {
                let d = |m: &Vec<f64>| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                (d(&c[0]) > d(&c[1])) as usize == y
            })
            .count();
        let acc = correct as f64 / t.train.len() as f64;
        assert!((0.4..0.6).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn images_are_in_range_and_square() {
        let s = ImageSpec { tasks: 2, classes_per_task: 2, side: 8, train_per_class: 5, test_per_class: 2, noise: 0.05, seed: 1 };
        let seq = synth_image_tasks(&s).unwrap();
        assert_eq!(seq.image_side, Some(8));
        assert!(seq.tasks.iter().flat_map(|t| t.train.x.iter().flatten()).all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(seq.tasks[1].test.len(), 4);
    }
}
