//! MLP feature extractor `g` and linear classifier `h`, with hand-derived
//! reverse-mode gradients and SGD with momentum.
//!
//! The extractor is a stack of affine layers with `tanh` between them; the
//! last extractor layer is linear and its output is the feature vector. The
//! classifier is a single affine map from features to logits.

mod checkpoint;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// Affine layer `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("Dense::new", weight.rows(), bias.len()));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("Dense::new"));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weight)?;
        z.add_row_vector(&self.bias)?;
        Ok(z)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weight.as_slice().iter().chain(&self.bias).copied()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weight.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    fn len(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Feature extractor plus classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    extractor: Vec<Dense>,
    classifier: Dense,
    classifier_frozen: bool,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<Dense>,
    pub classifier: Dense,
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    velocity: Gradients,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Matrix,
    pub logits: Matrix,
    /// Input of every extractor layer (`inputs[0]` is the batch itself).
    inputs: Vec<Matrix>,
}

impl Model {
    /// Random initialization. Weights are drawn from
    /// `U(-sqrt(3 / fan_in), sqrt(3 / fan_in))` (unit-variance signal for
    /// unit-variance inputs); biases start at zero; the classifier is unfrozen.
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        feature_dim: usize,
        class_count: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 || class_count == 0 || hidden_dims.contains(&0) {
            return Err(Error::invalid(
                "architecture",
                format!(
                    "all dimensions must be >= 1 (input={input_dim} hidden={hidden_dims:?} d={feature_dim} k={class_count})"
                ),
            ));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(feature_dim);

        let mut layer = |out_dim: usize, in_dim: usize| {
            let bound = (3.0 / in_dim as f64).sqrt();
            let data = (0..out_dim * in_dim)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            Dense {
                weight: Matrix::from_vec(out_dim, in_dim, data).expect("finite by construction"),
                bias: vec![0.0; out_dim],
            }
        };
        let extractor = dims.windows(2).map(|w| layer(w[1], w[0])).collect();
        let classifier = layer(class_count, feature_dim);
        Ok(Self {
            extractor,
            classifier,
            classifier_frozen: false,
        })
    }

    /// Assembles a model from explicit layers, checking that dimensions chain.
    pub fn from_layers(extractor: Vec<Dense>, classifier: Dense) -> Result<Self> {
        if extractor.is_empty() {
            return Err(Error::invalid("architecture", "extractor needs at least one layer"));
        }
        for (i, w) in extractor.windows(2).enumerate() {
            if w[1].in_dim() != w[0].out_dim() {
                return Err(Error::shape(
                    "Model::from_layers",
                    format!("layer {} input {}", i + 1, w[0].out_dim()),
                    w[1].in_dim(),
                ));
            }
        }
        let d = extractor.last().map(Dense::out_dim).unwrap_or_default();
        if classifier.in_dim() != d {
            return Err(Error::shape(
                "Model::from_layers",
                format!("classifier input {d}"),
                classifier.in_dim(),
            ));
        }
        if extractor
            .iter()
            .chain(std::iter::once(&classifier))
            .any(|l| l.in_dim() == 0 || l.out_dim() == 0)
        {
            return Err(Error::invalid("architecture", "zero-sized layer"));
        }
        Ok(Self {
            extractor,
            classifier,
            classifier_frozen: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.extractor[0].in_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.extractor[..self.extractor.len() - 1]
            .iter()
            .map(Dense::out_dim)
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn class_count(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn extractor(&self) -> &[Dense] {
        &self.extractor
    }

    pub fn classifier(&self) -> &Dense {
        &self.classifier
    }

    pub fn classifier_frozen(&self) -> bool {
        self.classifier_frozen
    }

    pub fn set_classifier_frozen(&mut self, frozen: bool) {
        self.classifier_frozen = frozen;
    }

    /// Features `g(X)` and logits `h(g(X))`.
    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("{} input columns", self.input_dim()),
                x.cols(),
            ));
        }
        let last = self.extractor.len() - 1;
        let mut inputs = Vec::with_capacity(self.extractor.len());
        let mut a = x.clone();
        for (l, layer) in self.extractor.iter().enumerate() {
            let mut z = layer.apply(&a)?;
            if l < last {
                z = z.map(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        let logits = self.classifier.apply(&a)?;
        logits.ensure_finite("forward")?;
        Ok(Forward {
            features: a,
            logits,
            inputs,
        })
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.logits)
    }

    /// Gradients of a scalar loss given its gradient with respect to the logits.
    /// Runs its own forward pass; see [`Model::backward_from`] to reuse one.
    pub fn backward(&self, x: &Matrix, grad_logits: &Matrix) -> Result<Gradients> {
        let fwd = self.forward(x)?;
        self.backward_from(&fwd, grad_logits)
    }

    /// Reverse pass over a stored forward pass. Classifier gradients are
    /// always computed; freezing is enforced by the optimizer.
    pub fn backward_from(&self, fwd: &Forward, grad_logits: &Matrix) -> Result<Gradients> {
        if grad_logits.shape() != fwd.logits.shape() {
            return Err(Error::shape(
                "backward",
                format!("{:?}", fwd.logits.shape()),
                format!("{:?}", grad_logits.shape()),
            ));
        }
        grad_logits.ensure_finite("backward")?;

        let classifier = Dense {
            weight: grad_logits.t_matmul(&fwd.features)?,
            bias: grad_logits.column_sums(),
        };
        // gradient with respect to the output of the current extractor layer
        let mut delta = grad_logits.matmul(&self.classifier.weight)?;
        let mut extractor = Vec::with_capacity(self.extractor.len());
        for l in (0..self.extractor.len()).rev() {
            let input = &fwd.inputs[l];
            extractor.push(Dense {
                weight: delta.t_matmul(input)?,
                bias: delta.column_sums(),
            });
            if l > 0 {
                let mut d_in = delta.matmul(&self.extractor[l].weight)?;
                // input of layer l is tanh output of layer l-1
                for (g, &a) in d_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *g *= 1.0 - a * a;
                }
                delta = d_in;
            }
        }
        extractor.reverse();
        let grads = Gradients { extractor, classifier };
        if !grads.values().all(f64::is_finite) {
            return Err(Error::NonFinite("backward"));
        }
        Ok(grads)
    }

    /// All parameters flattened: per extractor layer weight then bias, then
    /// the classifier weight and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers().flat_map(Dense::values).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let n = self.param_count();
        if values.len() != n {
            return Err(Error::shape("set_flat_params", n, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("set_flat_params"));
        }
        for (p, &v) in self.layers_mut().flat_map(Dense::values_mut).zip(values) {
            *p = v;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> + '_ {
        self.extractor.iter().chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> + '_ {
        self.extractor.iter_mut().chain(std::iter::once(&mut self.classifier))
    }
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            extractor: model
                .extractor
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            classifier: Dense::zeros(model.classifier.out_dim(), model.classifier.in_dim()),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.extractor.len() != other.extractor.len() {
            return Err(Error::shape(
                "Gradients::accumulate",
                self.extractor.len(),
                other.extractor.len(),
            ));
        }
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weight.add_scaled(&b.weight, 1.0)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Same ordering as [`Model::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.values().collect()
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers().flat_map(Dense::values)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> + '_ {
        self.extractor.iter().chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> + '_ {
        self.extractor.iter_mut().chain(std::iter::once(&mut self.classifier))
    }
}

impl OptState {
    /// Zeroed momentum buffers shaped like `model`.
    pub fn new(model: &Model) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
        }
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// v ← momentum · v + grad + weight_decay · θ
/// θ ← θ − lr · v
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        for (name, v) in [("lr", lr), ("momentum", momentum), ("weight_decay", weight_decay)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
        })
    }

    /// One update. Frozen classifier parameters and their buffers are left
    /// untouched.
    pub fn step(&self, model: &mut Model, grads: &Gradients, state: &mut OptState) -> Result<()> {
        if grads.extractor.len() != model.extractor.len() || state.velocity.extractor.len() != model.extractor.len() {
            return Err(Error::shape("sgd_step", model.extractor.len(), grads.extractor.len()));
        }
        let frozen = model.classifier_frozen;
        let n_layers = model.extractor.len() + 1;
        let params = model.layers_mut();
        let grads_it = grads.layers();
        let bufs = state.velocity.layers_mut();
        for (i, ((p, g), v)) in params.zip(grads_it).zip(bufs).enumerate() {
            if frozen && i == n_layers - 1 {
                continue;
            }
            if p.weight.shape() != g.weight.shape() || p.weight.shape() != v.weight.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("{:?}", p.weight.shape()),
                    format!("{:?}", g.weight.shape()),
                ));
            }
            for ((pv, gv), vv) in p.values_mut().zip(g.values()).zip(v.values_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
