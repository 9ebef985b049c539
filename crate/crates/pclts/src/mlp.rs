//! One-hidden-layer regression network.
//!
//! The model is `f(x) = sum_j v_j * g(w_j . x + b_j) + c` with `g` the
//! logistic sigmoid and a linear output unit. All parameters live in one flat
//! vector (see [`NetworkShape`] for the layout), which is what the
//! derivative-free optimizer manipulates. Exact backpropagation gradients are
//! provided for the ordinary-least-squares fine-tuning stage.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of a network with `inputs` inputs, one sigmoid hidden layer
/// and a single linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub inputs: usize,
    pub hidden: usize,
}

impl NetworkShape {
    pub fn new(inputs: usize, hidden: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "network shape must have at least one input and one hidden unit, got {inputs}x{hidden}"
            )));
        }
        Ok(Self { inputs, hidden })
    }

    /// Total number of free parameters.
    ///
    /// Flat layout: for each hidden unit `j`, its `inputs` weights followed by
    /// its bias; then the `hidden` output weights; then the output bias.
    pub fn param_count(&self) -> usize {
        self.hidden * (self.inputs + 1) + self.hidden + 1
    }

    #[inline]
    fn unit_offset(&self, j: usize) -> usize {
        j * (self.inputs + 1)
    }

    #[inline]
    fn input_bias(&self, j: usize) -> usize {
        self.unit_offset(j) + self.inputs
    }

    #[inline]
    fn output_weight(&self, j: usize) -> usize {
        self.hidden * (self.inputs + 1) + j
    }

    #[inline]
    fn output_bias(&self) -> usize {
        self.hidden * (self.inputs + 2)
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// A regression sample: `n` rows of inputs in `R^m` with scalar targets,
/// optionally labelled with ground-truth outlier flags for benchmark scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_inputs: usize,
    x: Vec<f64>, // row-major, n * num_inputs
    y: Vec<f64>,
    outlier_truth: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(
        num_inputs: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        outlier_truth: Option<Vec<bool>>,
    ) -> Result<Self> {
        if num_inputs == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one input column".into()));
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("dataset must contain at least one row"));
        }
        if x.len() != y.len() * num_inputs {
            return Err(Error::ShapeMismatch(format!(
                "x has {} values, expected {} rows x {} columns",
                x.len(),
                y.len(),
                num_inputs
            )));
        }
        if let Some(truth) = &outlier_truth {
            if truth.len() != y.len() {
                return Err(Error::ShapeMismatch(format!(
                    "outlier labels have length {}, expected {}",
                    truth.len(),
                    y.len()
                )));
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self { num_inputs, x, y, outlier_truth })
    }

    /// Builds a dataset from one `Vec` per row. Convenience for tests and CSV.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("dataset must contain at least one row"));
        }
        let m = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} values, expected {m}",
                    r.len()
                )));
            }
        }
        let x = rows.iter().flatten().copied().collect();
        Dataset::new(m, x, y.to_vec(), None)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.num_inputs..(i + 1) * self.num_inputs]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn outlier_truth(&self) -> Option<&[bool]> {
        self.outlier_truth.as_deref()
    }

    pub fn set_outlier_truth(&mut self, truth: Option<Vec<bool>>) -> Result<()> {
        if let Some(t) = &truth {
            if t.len() != self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "outlier labels have length {}, expected {}",
                    t.len(),
                    self.len()
                )));
            }
        }
        self.outlier_truth = truth;
        Ok(())
    }

    /// Returns the rows where `keep` is true, preserving order.
    pub fn retain(&self, keep: &[bool]) -> Result<Dataset> {
        if keep.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has length {}, expected {}",
                keep.len(),
                self.len()
            )));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut truth = self.outlier_truth.as_ref().map(|_| Vec::new());
        for i in 0..self.len() {
            if keep[i] {
                x.extend_from_slice(self.row(i));
                y.push(self.y[i]);
                if let (Some(t), Some(src)) = (truth.as_mut(), self.outlier_truth.as_ref()) {
                    t.push(src[i]);
                }
            }
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("retain mask removed every row"));
        }
        Dataset::new(self.num_inputs, x, y, truth)
    }
}

/// Network weights as one flat vector in the [`NetworkShape`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shape: NetworkShape,
    weights: Vec<f64>,
}

/// On-disk form of a model: shape fields plus the flat weight vector.
/// Serialized as TOML; float formatting is shortest-round-trip, so reloading
/// reproduces the weights bit for bit.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    inputs: usize,
    hidden: usize,
    weights: Vec<f64>,
}

impl NetworkParams {
    pub fn new(shape: NetworkShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != shape.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has length {}, shape {}x{} needs {}",
                weights.len(),
                shape.inputs,
                shape.hidden,
                shape.param_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("parameter vector contains non-finite values".into()));
        }
        Ok(Self { shape, weights })
    }

    /// Skips the finiteness scan; used on optimizer trial points where
    /// non-finite values are handled by the objective wrapper.
    pub(crate) fn new_unchecked(shape: NetworkShape, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), shape.param_count());
        Self { shape, weights }
    }

    pub fn zeros(shape: NetworkShape) -> Self {
        Self { shape, weights: vec![0.0; shape.param_count()] }
    }

    /// Weights drawn uniformly from `[-half_width, half_width]`.
    pub fn random<R: Rng + ?Sized>(shape: NetworkShape, half_width: f64, rng: &mut R) -> Self {
        let weights = (0..shape.param_count())
            .map(|_| rng.gen_range(-half_width..half_width))
            .collect();
        Self { shape, weights }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Network output at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.shape.inputs {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.shape.inputs
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let s = self.shape;
        let w = &self.weights;
        let mut out = w[s.output_bias()];
        for j in 0..s.hidden {
            let off = s.unit_offset(j);
            let mut z = w[s.input_bias(j)];
            for k in 0..s.inputs {
                z += w[off + k] * x[k];
            }
            out += w[s.output_weight(j)] * sigmoid(z);
        }
        out
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.num_inputs() != self.shape.inputs {
            return Err(Error::ShapeMismatch(format!(
                "dataset has {} input columns, network expects {}",
                data.num_inputs(),
                self.shape.inputs
            )));
        }
        Ok(())
    }

    /// Residuals `f(x_i) - y_i`, in row order.
    pub fn residuals(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        Ok((0..data.len())
            .map(|i| self.forward_unchecked(data.row(i)) - data.target(i))
            .collect())
    }

    /// Sum of squared residuals (sequential summation, so the value does not
    /// depend on any internal parallelism).
    pub fn ols_loss(&self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        let mut acc = 0.0;
        for i in 0..data.len() {
            let r = self.forward_unchecked(data.row(i)) - data.target(i);
            acc += r * r;
        }
        Ok(acc)
    }

    /// Exact gradient of [`ols_loss`](Self::ols_loss) with respect to the flat
    /// parameter vector, by reverse-mode differentiation through the sigmoid
    /// layer.
    pub fn ols_gradient(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let s = self.shape;
        let w = &self.weights;
        let mut grad = vec![0.0; w.len()];
        for i in 0..data.len() {
            let x = data.row(i);
            // Forward pass, caching activations.
            let mut acts = vec![0.0; s.hidden];
            let mut out = w[s.output_bias()];
            for j in 0..s.hidden {
                let off = s.unit_offset(j);
                let mut z = w[s.input_bias(j)];
                for k in 0..s.inputs {
                    z += w[off + k] * x[k];
                }
                let g = sigmoid(z);
                acts[j] = g;
                out += w[s.output_weight(j)] * g;
            }
            let two_r = 2.0 * (out - data.target(i));
            grad[s.output_bias()] += two_r;
            for j in 0..s.hidden {
                let g = acts[j];
                grad[s.output_weight(j)] += two_r * g;
                let delta = two_r * w[s.output_weight(j)] * g * (1.0 - g);
                let off = s.unit_offset(j);
                for k in 0..s.inputs {
                    grad[off + k] += delta * x[k];
                }
                grad[s.input_bias(j)] += delta;
            }
        }
        Ok(grad)
    }

    pub fn to_model_text(&self) -> String {
        let file = ModelFile {
            inputs: self.shape.inputs,
            hidden: self.shape.hidden,
            weights: self.weights.clone(),
        };
        toml::to_string(&file).expect("model serialization cannot fail")
    }

    pub fn from_model_text(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count() as u64);
            Error::Parse { line: line.max(1), msg: format!("model file: {}", e.message()) }
        })?;
        let shape = NetworkShape::new(file.inputs, file.hidden)?;
        NetworkParams::new(shape, file.weights)
    }

    pub fn save_model(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_model_text())?;
        Ok(())
    }

    pub fn load_model(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_model_text(&text)
    }
}

impl std::fmt::Display for NetworkParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        let _ = write!(s, "{}-{}-1 network", self.shape.inputs, self.shape.hidden);
        f.write_str(&s)
    }
}

/// Full-batch gradient descent on the OLS loss with a monotone-accept rule:
/// a trial step that would increase the loss is rejected and the rate halved
/// (retried within the same step); accepted steps grow the rate again. The
/// returned parameters never have a larger loss than `start`.
pub fn fit_ols(
    start: &NetworkParams,
    data: &Dataset,
    steps: usize,
    initial_rate: f64,
) -> Result<NetworkParams> {
    start.check_data(data)?;
    if !(initial_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {initial_rate}"
        )));
    }
    let mut current = start.clone();
    let mut loss = current.ols_loss(data)?;
    if !loss.is_finite() {
        return Err(Error::Training { step: 0, msg: format!("initial loss is {loss}") });
    }
    let mut rate = initial_rate;
    for step in 1..=steps {
        let grad = current.ols_gradient(data)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, msg: "gradient is not finite".into() });
        }
        let mut accepted = false;
        for _ in 0..64 {
            let trial: Vec<f64> = current
                .weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - rate * g)
                .collect();
            let trial = NetworkParams::new_unchecked(current.shape, trial);
            let trial_loss = trial.ols_loss(data)?;
            if trial_loss.is_finite() && trial_loss <= loss {
                current = trial;
                loss = trial_loss;
                rate *= 1.2;
                accepted = true;
                break;
            }
            rate *= 0.5;
        }
        if !accepted {
            // No descent direction at any representable rate: converged.
            break;
        }
    }
    // Re-validate: a finite loss does not guarantee finite weights (saturated
    // sigmoids hide infinite input weights).
    NetworkParams::new(current.shape, current.weights)
        .map_err(|_| Error::Training { step: steps, msg: "non-finite weights after fine-tune".into() })
}
