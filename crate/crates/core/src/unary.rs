//! Fully-connected regressor producing the unary depth `z_p` of a superpixel.
//!
//! The layer stack is a small fully-connected head:
//! ReLU hidden layers, one logistic layer, then a single linear output unit.
//! Parameters are shared across every superpixel of every image. `backward`
//! returns `residual · ∂z_p/∂θ`, the per-superpixel term of the chain rule
//! `∂NLL/∂θ = Σ_p 2(A⁻¹z − y)_p ∂z_p/∂θ`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnaryError {
    #[error("input has {found} features, model expects {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("invalid layer widths {0:?}: need an input width, at least one layer, nonzero widths and a single output")]
    InvalidWidths(Vec<usize>),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("forward tape does not belong to the current parameters")]
    StaleTape,
    #[error("parameter vector has length {found}, model has {expected}")]
    ParamLength { expected: usize, found: usize },
}

pub type Result<T, E = UnaryError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Logistic,
    Linear,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Logistic => "logistic",
            Activation::Linear => "linear",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "logistic" => Some(Activation::Logistic),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Logistic => T::one() / (T::one() + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Logistic => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out × in`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
    pub dropout: bool,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Activations for a stack of `layers` fully-connected layers: ReLU, then
/// one logistic layer, then the linear output. A single layer is linear.
pub fn head_activations(layers: usize) -> Vec<Activation> {
    (0..layers)
        .map(|l| {
            if l + 1 == layers {
                Activation::Linear
            } else if l + 2 == layers {
                Activation::Logistic
            } else {
                Activation::Relu
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnaryModel<T> {
    layers: Vec<Layer<T>>,
    dropout_keep: T,
    seed: u64,
    generation: u64,
}

/// How a forward pass treats dropout.
pub enum ForwardMode<'a> {
    /// No dropout; inverted scaling during training means no rescaling here.
    Eval,
    /// Fresh Bernoulli masks on the dropout layers, drawn from the given RNG.
    Train(&'a mut dyn RngCore),
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTape<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    masks: Vec<Option<Vec<bool>>>,
    generation: u64,
}

impl<T: Scalar> ForwardTape<T> {
    pub fn output(&self) -> T {
        self.post.last().map(|v| v[0]).unwrap_or_else(T::zero)
    }

    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn pre_activations(&self, layer: usize) -> &[T] {
        &self.pre[layer]
    }

    pub fn post_activations(&self, layer: usize) -> &[T] {
        &self.post[layer]
    }

    pub fn mask(&self, layer: usize) -> Option<&[bool]> {
        self.masks[layer].as_deref()
    }
}

impl<T: Scalar> UnaryModel<T> {
    /// Fan-in uniform initialization `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    /// `widths` lists the input width, the hidden widths and the output
    /// width, which must be 1.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
            return Err(UnaryError::InvalidWidths(widths.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = head_activations(widths.len() - 1);
        let layers = widths
            .windows(2)
            .zip(&acts)
            .enumerate()
            .map(|(l, (w, &activation))| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| T::lit(rng.random_range(-bound..=bound)))
                    .collect();
                Layer {
                    weights: Matrix::from_row_major(w[1], w[0], data),
                    bias: vec![T::zero(); w[1]],
                    activation,
                    dropout: l < 2 && l + 1 < acts.len(),
                }
            })
            .collect();
        Self::from_layers(layers, T::lit(0.5), seed)
    }

    /// Builds a model from explicit layers, checking the architecture: widths
    /// chain, a single linear output unit, at most one logistic layer placed
    /// directly before the output, and dropout only on the first two layers.
    pub fn from_layers(layers: Vec<Layer<T>>, dropout_keep: T, seed: u64) -> Result<Self> {
        let bad = |m: &str| Err(UnaryError::InvalidArchitecture(m.to_string()));
        let Some(last) = layers.last() else {
            return bad("no layers");
        };
        if last.outputs() != 1 || last.activation != Activation::Linear {
            return bad("output layer must be a single linear unit");
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return bad(&format!("layer {l} output does not feed layer {}", l + 1));
            }
        }
        let logistic: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.activation == Activation::Logistic)
            .map(|(i, _)| i)
            .collect();
        if logistic.len() > 1 || logistic.iter().any(|&i| i + 2 != layers.len()) {
            return bad("the logistic layer must be unique and precede the output");
        }
        if layers.len() > 2 && logistic.is_empty() {
            return bad("hidden stack needs a logistic layer before the output");
        }
        if layers
            .iter()
            .enumerate()
            .any(|(i, l)| l.dropout && (i >= 2 || i + 1 == layers.len()))
        {
            return bad("dropout is only allowed on the first two hidden layers");
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return bad("bias length differs from layer width");
        }
        if !(dropout_keep > T::zero() && dropout_keep <= T::one()) {
            return bad("dropout keep probability must lie in (0, 1]");
        }
        Ok(Self {
            layers,
            dropout_keep,
            seed,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dropout_keep(&self) -> T {
        self.dropout_keep
    }

    pub fn set_dropout_keep(&mut self, keep: T) -> Result<()> {
        if !(keep > T::zero() && keep <= T::one()) {
            return Err(UnaryError::InvalidArchitecture(
                "dropout keep probability must lie in (0, 1]".into(),
            ));
        }
        self.dropout_keep = keep;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Offsets of each layer's parameters in the flat vector: weights
    /// row-major, then biases.
    pub fn layer_param_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start: usize = self.layers[..layer].iter().map(Layer::param_count).sum();
        start..start + self.layers[layer].param_count()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(UnaryError::ParamLength {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.rows() * l.weights.cols();
            l.weights = Matrix::from_row_major(
                l.weights.rows(),
                l.weights.cols(),
                flat[at..at + w].to_vec(),
            );
            at += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        self.generation += 1;
        Ok(())
    }

    /// Adds `delta` to the flat parameter vector.
    pub fn apply_delta(&mut self, delta: &[T]) -> Result<()> {
        let mut p = self.params();
        if delta.len() != p.len() {
            return Err(UnaryError::ParamLength {
                expected: p.len(),
                found: delta.len(),
            });
        }
        for (v, d) in p.iter_mut().zip(delta) {
            *v = *v + *d;
        }
        self.set_params(&p)
    }

    pub fn forward(&self, x: &[T], mode: &mut ForwardMode<'_>) -> Result<(T, ForwardTape<T>)> {
        if x.len() != self.input_width() {
            return Err(UnaryError::InputWidth {
                expected: self.input_width(),
                found: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, Vec::as_slice);
            let z: Vec<T> = (0..layer.outputs())
                .map(|o| dot(layer.weights.row(o), input) + layer.bias[o])
                .collect();
            let mut a: Vec<T> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mask = match mode {
                ForwardMode::Train(rng) if layer.dropout && self.dropout_keep < T::one() => {
                    let keep = self.dropout_keep.to_f64_lossy();
                    let m: Vec<bool> = (0..a.len()).map(|_| rng.random_bool(keep)).collect();
                    for (v, &k) in a.iter_mut().zip(&m) {
                        *v = if k { *v / self.dropout_keep } else { T::zero() };
                    }
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            post.push(a);
            masks.push(mask);
        }
        let tape = ForwardTape {
            input: x.to_vec(),
            pre,
            post,
            masks,
            generation: self.generation,
        };
        Ok((tape.output(), tape))
    }

    /// Evaluation-mode output only.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        Ok(self.forward(x, &mut ForwardMode::Eval)?.0)
    }

    /// `residual · ∂z/∂θ` for the pass recorded in `tape`.
    pub fn backward(&self, tape: &ForwardTape<T>, residual: T) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); self.param_count()];
        self.backward_into(tape, residual, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `residual · ∂z/∂θ` into a flat gradient buffer.
    pub fn backward_into(&self, tape: &ForwardTape<T>, residual: T, grad: &mut [T]) -> Result<()> {
        if tape.generation != self.generation
            || tape.pre.len() != self.layers.len()
            || tape.input.len() != self.input_width()
        {
            return Err(UnaryError::StaleTape);
        }
        if grad.len() != self.param_count() {
            return Err(UnaryError::ParamLength {
                expected: self.param_count(),
                found: grad.len(),
            });
        }
        if residual == T::zero() {
            return Ok(());
        }
        let last = self.layers.len() - 1;
        // delta = ∂(residual·z)/∂(pre-activation) of the current layer.
        let mut delta: Vec<T> = vec![
            residual
                * self.layers[last]
                    .activation
                    .derivative(tape.pre[last][0], tape.post[last][0]),
        ];
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let input = if l == 0 {
                &tape.input
            } else {
                &tape.post[l - 1]
            };
            let range = self.layer_param_range(l);
            let (gw, gb) = grad[range].split_at_mut(layer.inputs() * layer.outputs());
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &mut gw[o * layer.inputs()..(o + 1) * layer.inputs()];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g = *g + d * xi;
                }
                gb[o] = gb[o] + d;
            }
            if l == 0 {
                break;
            }
            let prev = &self.layers[l - 1];
            let mut next = vec![T::zero(); layer.inputs()];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(layer.weights.row(o)) {
                    *n = *n + d * w;
                }
            }
            for (i, n) in next.iter_mut().enumerate() {
                let mut scale = prev.activation.derivative(
                    tape.pre[l - 1][i],
                    prev.activation.apply(tape.pre[l - 1][i]),
                );
                if let Some(m) = &tape.masks[l - 1] {
                    scale = if m[i] {
                        scale / self.dropout_keep
                    } else {
                        T::zero()
                    };
                }
                *n = *n * scale;
            }
            delta = next;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_gradient;

    fn linear(w: Vec<f64>, b: f64) -> UnaryModel<f64> {
        let n = w.len();
        UnaryModel::from_layers(
            vec![Layer {
                weights: Matrix::from_row_major(1, n, w),
                bias: vec![b],
                activation: Activation::Linear,
                dropout: false,
            }],
            1.0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = UnaryModel::<f64>::init(&[4, 3, 2, 1], 1).unwrap();
        m.set_params(&vec![0.0; m.param_count()]).unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn affine_identity() {
        let m = linear(vec![0.5, -1.0, 2.0], 0.25);
        let z = m.predict(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, 0.5 - 2.0 + 6.0 + 0.25);
        let (_, tape) = m.forward(&[1.0, 2.0, 3.0], &mut ForwardMode::Eval).unwrap();
        let g = m.backward(&tape, 3.0).unwrap();
        assert_eq!(g, vec![3.0, 6.0, 9.0, 3.0]);
        assert!(m.backward(&tape, 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_set_two_layer_net() {
        // Hidden: logistic(W1 x + b1); output: w2 · h + b2.
        let w1 = vec![0.3, -0.2, 0.1, 0.4, 0.5, -0.6];
        let b1 = vec![0.05, -0.1];
        let w2 = vec![1.5, -0.7];
        let b2 = 0.2;
        let model = UnaryModel::from_layers(
            vec![
                Layer {
                    weights: Matrix::from_row_major(2, 3, w1.clone()),
                    bias: b1.clone(),
                    activation: Activation::Logistic,
                    dropout: false,
                },
                Layer {
                    weights: Matrix::from_row_major(1, 2, w2.clone()),
                    bias: vec![b2],
                    activation: Activation::Linear,
                    dropout: false,
                },
            ],
            1.0,
            0,
        )
        .unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut expected: f64 = b2;
        for o in 0..2 {
            let mut s: f64 = b1[o];
            for i in 0..3 {
                s += w1[o * 3 + i] * x[i];
            }
            expected += w2[o] / (1.0 + (-s).exp());
        }
        assert!((model.predict(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn init_counts_and_determinism() {
        let a = UnaryModel::<f64>::init(&[16, 8, 8, 4, 1], 7).unwrap();
        assert_eq!(a.layers().len(), 4);
        assert_eq!(
            a.param_count(),
            (16 * 8 + 8) + (8 * 8 + 8) + (8 * 4 + 4) + (4 + 1)
        );
        assert_eq!(a.param_count(), 249);
        let acts: Vec<_> = a.layers().iter().map(|l| l.activation).collect();
        assert_eq!(
            acts,
            [
                Activation::Relu,
                Activation::Relu,
                Activation::Logistic,
                Activation::Linear
            ]
        );
        let dropout: Vec<_> = a.layers().iter().map(|l| l.dropout).collect();
        assert_eq!(dropout, [true, true, false, false]);
        assert_eq!(a, UnaryModel::init(&[16, 8, 8, 4, 1], 7).unwrap());
        assert_ne!(
            a.params(),
            UnaryModel::<f64>::init(&[16, 8, 8, 4, 1], 8)
                .unwrap()
                .params()
        );
        let bound = 1.0 / 4.0;
        let w0 = &a.params()[..128];
        assert!(w0.iter().all(|w| w.abs() <= bound));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_bad_widths() {
        for w in [&[4usize][..], &[4, 0, 1], &[4, 3, 2], &[]] {
            assert!(UnaryModel::<f64>::init(w, 0).is_err());
        }
    }

    #[test]
    fn architecture_checks() {
        let good = UnaryModel::<f64>::init(&[3, 4, 2, 1], 0).unwrap();
        let mut layers = good.layers().to_vec();
        layers[0].activation = Activation::Logistic;
        assert!(UnaryModel::from_layers(layers, 0.5, 0).is_err());
        let mut layers = good.layers().to_vec();
        layers[2].dropout = true;
        assert!(UnaryModel::from_layers(layers, 0.5, 0).is_err());
        let mut layers = good.layers().to_vec();
        layers[2].activation = Activation::Relu;
        assert!(UnaryModel::from_layers(layers, 0.5, 0).is_err());
    }

    #[test]
    fn input_width_and_stale_tape() {
        let mut m = UnaryModel::<f64>::init(&[3, 2, 1], 0).unwrap();
        assert!(matches!(
            m.predict(&[1.0]),
            Err(UnaryError::InputWidth {
                expected: 3,
                found: 1
            })
        ));
        let (_, tape) = m.forward(&[1.0, 2.0, 3.0], &mut ForwardMode::Eval).unwrap();
        m.apply_delta(&vec![0.1; m.param_count()]).unwrap();
        assert_eq!(m.backward(&tape, 1.0).unwrap_err(), UnaryError::StaleTape);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let model = UnaryModel::<f64>::init(&[5, 6, 4, 3, 1], 21).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05, -0.4];
        let (_, tape) = model.forward(&x, &mut ForwardMode::Eval).unwrap();
        let g = model.backward(&tape, 1.0).unwrap();
        let fd = fd_gradient(
            |p| {
                let mut m = model.clone();
                m.set_params(p).unwrap();
                m.predict(&x).unwrap()
            },
            &model.params(),
            1e-5,
        );
        for (a, b) in g.iter().zip(&fd) {
            assert!(
                (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn dropout_masks_and_scaling() {
        let model = UnaryModel::<f64>::init(&[4, 8, 8, 3, 1], 2).unwrap();
        let x = [0.5, 0.1, -0.3, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, tape) = model
            .forward(&x, &mut ForwardMode::Train(&mut rng))
            .unwrap();
        let (_, eval) = model.forward(&x, &mut ForwardMode::Eval).unwrap();
        // The first layer sees the same input in both modes.
        for (i, &keep) in tape.mask(0).unwrap().iter().enumerate() {
            let expected = if keep {
                eval.post_activations(0)[i] / 0.5
            } else {
                0.0
            };
            assert_eq!(tape.post_activations(0)[i], expected);
        }
        assert!(tape.mask(1).is_some());
        assert!(tape.mask(2).is_none() && eval.mask(0).is_none());
        // Backward through a fixed mask is the derivative of the masked net.
        let g = model.backward(&tape, 1.0).unwrap();
        let masked = |p: &[f64]| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            m.forward(&x, &mut ForwardMode::Train(&mut rng)).unwrap().0
        };
        let fd = fd_gradient(masked, &model.params(), 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3));
        }
    }

    #[test]
    fn logistic_layer_range() {
        let model = UnaryModel::<f64>::init(&[3, 5, 4, 1], 4).unwrap();
        for s in 0..20 {
            let x = [s as f64 - 10.0, 0.3 * s as f64, -1.0];
            let (_, tape) = model.forward(&x, &mut ForwardMode::Eval).unwrap();
            assert!(tape.post_activations(1).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn single_precision_forward() {
        let m = UnaryModel::<f32>::init(&[3, 4, 2, 1], 3).unwrap();
        let d = UnaryModel::<f64>::init(&[3, 4, 2, 1], 3).unwrap();
        let a = m.predict(&[0.1, 0.2, 0.3]).unwrap() as f64;
        let b = d.predict(&[0.1, 0.2, 0.3]).unwrap();
        assert!((a - b).abs() < 1e-5);
    }
}
