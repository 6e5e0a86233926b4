use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Matrix, NumError, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer followed by an activation: `act(W h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }
}

/// A feed-forward stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNet::forward`] for a later backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    /// Post-activation (pre-mask) values of layer `l`.
    pub fn activation(&self, l: usize) -> &[f64] {
        &self.post[l]
    }

    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l]
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Gradient accumulators mirroring a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradTape {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// ∂loss/∂mask for every masked layer (zeros where no hook was applied).
    pub hooks: Vec<Vec<f64>>,
    /// ∂loss/∂x of the most recent backward call.
    pub input: Vec<f64>,
}

impl GradTape {
    pub fn for_net(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            hooks: net.layers.iter().map(|l| vec![0.0; l.output_width()]).collect(),
            input: vec![0.0; net.input_width()],
        }
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|m| m.fill(0.0));
        for v in self.biases.iter_mut().chain(self.hooks.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.input.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.weights {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
        for v in self.biases.iter_mut().chain(self.hooks.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Parameter gradients flattened in [`DenseNet::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self, NumError> {
        if layers.is_empty() {
            return Err(NumError::Shape { what: "layer count", expected: 1, actual: 0 });
        }
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(NumError::Shape {
                    what: "consecutive layer widths",
                    expected: pair[0].output_width(),
                    actual: pair[1].input_width(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_width() {
                return Err(NumError::Shape {
                    what: "bias length",
                    expected: l.output_width(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists input width then every layer width.
    pub fn glorot(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(sizes.len(), activations.len() + 1, "one activation per layer");
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..=limit)),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    /// ReLU on every layer but the last, which is `last`.
    pub fn mlp(sizes: &[usize], last: Activation, rng: &mut Rng) -> Self {
        let n = sizes.len() - 1;
        let acts: Vec<_> =
            (0..n).map(|i| if i + 1 == n { last } else { Activation::Relu }).collect();
        Self::glorot(sizes, &acts, rng)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::output_width).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Copy of this network with every weight matrix multiplied elementwise by `masks[l]`.
    pub fn with_weight_masks(&self, masks: &[Matrix]) -> Result<Self, NumError> {
        if masks.len() != self.layers.len() {
            return Err(NumError::Shape {
                what: "weight mask count",
                expected: self.layers.len(),
                actual: masks.len(),
            });
        }
        let layers = self
            .layers
            .iter()
            .zip(masks)
            .map(|(l, m)| {
                if m.rows() != l.weight.rows() || m.cols() != l.weight.cols() {
                    return Err(NumError::Shape {
                        what: "weight mask",
                        expected: l.weight.len(),
                        actual: m.len(),
                    });
                }
                Ok(Dense {
                    weight: l.weight.hadamard(m),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    /// Runs the network. `hooks[l]`, when present, multiplies the post-activation
    /// output of layer `l` elementwise; layers past `hooks.len()` are unmasked.
    pub fn forward(
        &self,
        x: &[f64],
        hooks: Option<&[Vec<f64>]>,
    ) -> Result<(Vec<f64>, ForwardCache), NumError> {
        if x.len() != self.input_width() {
            return Err(NumError::Shape {
                what: "input",
                expected: self.input_width(),
                actual: x.len(),
            });
        }
        let hooks = hooks.unwrap_or(&[]);
        if hooks.len() > self.layers.len() {
            return Err(NumError::Shape {
                what: "hook count",
                expected: self.layers.len(),
                actual: hooks.len(),
            });
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mask = hooks.get(l).cloned();
            let out = match &mask {
                Some(m) => {
                    if m.len() != a.len() {
                        return Err(NumError::Shape {
                            what: "hook",
                            expected: a.len(),
                            actual: m.len(),
                        });
                    }
                    if let Some(i) = m.iter().position(|v| !(0.0..=1.0).contains(v)) {
                        return Err(NumError::HookRange { layer: l, index: i });
                    }
                    a.iter().zip(m).map(|(v, m)| v * m).collect()
                }
                None => a.clone(),
            };
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.pre.push(z);
            cache.post.push(a);
            cache.masks.push(mask);
        }
        Ok((h, cache))
    }

    /// Accumulates parameter and hook gradients into `tape` for `upstream = ∂loss/∂output`,
    /// and overwrites `tape.input` with ∂loss/∂x.
    pub fn backward(
        &self,
        tape: &mut GradTape,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(), NumError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NumError::MissingCache);
        }
        if tape.weights.len() != self.layers.len() {
            return Err(NumError::Shape {
                what: "tape layers",
                expected: self.layers.len(),
                actual: tape.weights.len(),
            });
        }
        if upstream.len() != self.output_width() {
            return Err(NumError::Shape {
                what: "upstream gradient",
                expected: self.output_width(),
                actual: upstream.len(),
            });
        }
        let mut g = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(m) = &cache.masks[l] {
                for ((hg, gi), ai) in tape.hooks[l].iter_mut().zip(&g).zip(&cache.post[l]) {
                    *hg += gi * ai;
                }
                g.iter_mut().zip(m).for_each(|(gi, mi)| *gi *= mi);
            }
            let dz: Vec<f64> = g
                .iter()
                .zip(&cache.pre[l])
                .map(|(gi, &z)| gi * layer.activation.derivative(z))
                .collect();
            tape.weights[l].add_outer(&dz, &cache.inputs[l], 1.0);
            tape.biases[l].iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            g = layer.weight.matvec_transposed(&dz);
        }
        tape.input = g;
        Ok(())
    }

    /// `p ← p − lr·g` for every weight and bias.
    pub fn sgd_step(&mut self, tape: &GradTape, lr: f64) -> Result<(), NumError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NumError::LearningRate(lr));
        }
        for (l, (w, b)) in tape.weights.iter().zip(&tape.biases).enumerate() {
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFinite { context: "gradient of layer", index: l });
            }
        }
        for (layer, (w, b)) in self.layers.iter_mut().zip(tape.weights.iter().zip(&tape.biases)) {
            for (p, g) in layer.weight.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *p -= lr * g;
            }
            for (p, g) in layer.bias.iter_mut().zip(b) {
                *p -= lr * g;
            }
        }
        Ok(())
    }

    /// All weights and biases flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NumError> {
        if flat.len() != self.param_count() {
            return Err(NumError::Shape {
                what: "flat parameters",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + m]);
            at += m;
        }
        Ok(())
    }
}
