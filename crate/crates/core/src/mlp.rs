//! Small fully connected networks over a flat parameter vector.
//!
//! Every network parameter lives in one `Vec<f64>` so that curves, tunnels
//! and samplers can treat a network as a point in `R^D`. The layout is
//! `W_0, b_0, W_1, b_1, ..., W_L, b_L[, log_sigma]` with each weight matrix
//! stored row-major as `fan_out x fan_in`.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, Matrix};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// ELU with alpha = 1.
    Elu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Gaussian likelihood with one shared, trainable log standard deviation.
    RegressionHomoscedastic,
    /// Softmax likelihood; targets are class indices stored as `f64`.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths..., output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub task: Task,
    /// Store hidden-layer biases as unconstrained increments that map to a
    /// strictly increasing sequence (see [`bias_sort_transform`]).
    #[serde(default)]
    pub bias_sorted: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, task: Task) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation,
            task,
            bias_sorted: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias_sorting(mut self, on: bool) -> Self {
        self.bias_sorted = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs input, at least one hidden layer and output; got widths {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.task == Task::Classification && self.output_width() < 2 {
            return Err(Error::Config(
                "classification needs at least two classes".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub layers: Vec<LayerSlot>,
    pub dim: usize,
    pub log_sigma_offset: Option<usize>,
    pub bias_sorted: bool,
}

impl ParamLayout {
    fn new(spec: &MlpSpec) -> Self {
        let mut offset = 0;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let slot = LayerSlot {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                slot
            })
            .collect();
        let log_sigma_offset = match spec.task {
            Task::RegressionHomoscedastic => {
                offset += 1;
                Some(offset - 1)
            }
            Task::Classification => None,
        };
        Self {
            layers,
            dim: offset,
            log_sigma_offset,
            bias_sorted: spec.bias_sorted,
        }
    }

    pub fn includes_log_sigma(&self) -> bool {
        self.log_sigma_offset.is_some()
    }

    /// Layers whose biases take part in bias sorting (hidden layers only;
    /// output units carry no permutation symmetry).
    pub fn hidden_layers(&self) -> &[LayerSlot] {
        &self.layers[..self.layers.len() - 1]
    }
}

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check(&self, layout: &ParamLayout) -> Result<()> {
        if self.0.len() != layout.dim {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: layout.dim,
                got: self.0.len(),
            });
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter vector",
                index: i,
            });
        }
        Ok(())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw (unconstrained) hidden-layer biases to sorted ones:
/// `B_i = B'_0 + sum_{0<j<=i} softplus(B'_j)`. Weights, output biases and
/// `log_sigma` pass through unchanged.
pub fn bias_sort_transform(layout: &ParamLayout, raw: &[f64]) -> Result<ParamVector> {
    if !layout.bias_sorted {
        return Err(Error::Config(
            "bias_sort_transform called on a layout without bias sorting".into(),
        ));
    }
    if raw.len() != layout.dim {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: layout.dim,
            got: raw.len(),
        });
    }
    let mut out = raw.to_vec();
    for slot in layout.hidden_layers() {
        let r = slot.bias_range();
        let mut acc = raw[r.start];
        out[r.start] = acc;
        for i in r.start + 1..r.end {
            // an increment below one ulp of acc would tie two biases
            let next = acc + softplus(raw[i]);
            acc = if next > acc { next } else { acc.next_up() };
            out[i] = acc;
        }
    }
    Ok(ParamVector(out))
}

/// Chain rule through [`bias_sort_transform`]: turns a gradient with respect
/// to sorted biases into one with respect to the raw increments.
fn bias_sort_backward(layout: &ParamLayout, raw: &[f64], grad: &mut [f64]) {
    for slot in layout.hidden_layers() {
        let r = slot.bias_range();
        // suffix sums: dB_i/dB'_j = 1 for i >= j
        let mut suffix = 0.0;
        for i in (r.start..r.end).rev() {
            suffix += grad[i];
            grad[i] = if i == r.start {
                suffix
            } else {
                suffix * sigmoid(raw[i])
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every weight and bias.
    UniformFanIn,
    Normal {
        sigma: f64,
    },
}

/// Random parameters; reproducible for a given seed. `log_sigma` starts at 0.
pub fn init(spec: &MlpSpec, seed: u64, scheme: InitScheme) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with_rng(spec, &mut rng, scheme)
}

pub fn init_with_rng<R: Rng + ?Sized>(
    spec: &MlpSpec,
    rng: &mut R,
    scheme: InitScheme,
) -> ParamVector {
    let layout = spec.layout();
    let mut theta = vec![0.0; layout.dim];
    for slot in &layout.layers {
        let range = slot.weight_offset..slot.bias_offset + slot.fan_out;
        match scheme {
            InitScheme::UniformFanIn => {
                let bound = 1.0 / (slot.fan_in as f64).sqrt();
                for v in &mut theta[range] {
                    *v = rng.random_range(-bound..bound);
                }
            }
            InitScheme::Normal { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for v in &mut theta[range] {
                    *v = normal.sample(rng);
                }
            }
        }
    }
    ParamVector(theta)
}

/// A network spec bound to its layout; the entry point for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layout: ParamLayout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    fn check_inputs(&self, theta: &[f64], x: &Matrix) -> Result<()> {
        if theta.len() != self.layout.dim {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.layout.dim,
                got: theta.len(),
            });
        }
        if x.cols() != self.spec.input_width() {
            return Err(Error::Dimension {
                what: "feature columns",
                expected: self.spec.input_width(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Parameters as the network consumes them (bias sorting applied).
    pub fn effective_params<'a>(&self, theta: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        if self.layout.bias_sorted {
            let sorted = bias_sort_transform(&self.layout, theta).expect("layout checked");
            std::borrow::Cow::Owned(sorted.into_inner())
        } else {
            std::borrow::Cow::Borrowed(theta)
        }
    }

    /// Whole-batch forward pass. Returns per-layer pre-activations and the
    /// activated outputs of the hidden layers, both row-major `n x fan_out`;
    /// the last pre-activation block holds the network outputs.
    fn forward_batch(&self, eff: &[f64], x: &Matrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = x.rows();
        let last = self.layout.layers.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(last);
        for (l, slot) in self.layout.layers.iter().enumerate() {
            let w = &eff[slot.weight_range()];
            let b = &eff[slot.bias_range()];
            let input = if l == 0 { x.as_slice() } else { &acts[l - 1] };
            let mut z = vec![0.0; n * slot.fan_out];
            for (h, zi) in input
                .chunks_exact(slot.fan_in)
                .zip(z.chunks_exact_mut(slot.fan_out))
            {
                for (o, zo) in zi.iter_mut().enumerate() {
                    let wr = &w[o * slot.fan_in..(o + 1) * slot.fan_in];
                    *zo = b[o] + dot(wr, h);
                }
            }
            if l != last {
                acts.push(z.iter().map(|&v| self.spec.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        (pre, acts)
    }

    /// Network outputs: mean predictions for regression, logits for
    /// classification. One row per input row.
    pub fn forward(&self, theta: &[f64], x: &Matrix) -> Result<Matrix> {
        self.check_inputs(theta, x)?;
        let eff = self.effective_params(theta);
        let (mut pre, _) = self.forward_batch(&eff, x);
        Matrix::from_vec(
            x.rows(),
            self.spec.output_width(),
            pre.pop().expect("layers"),
        )
    }

    /// Per-point log-likelihood `log p(y_i | theta)`.
    pub fn log_likelihood_points(&self, theta: &[f64], x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(theta, x, y)?;
        let eff = self.effective_params(theta);
        let (pre, _) = self.forward_batch(&eff, x);
        let out = pre.last().expect("layers");
        Ok(out
            .chunks_exact(self.spec.output_width())
            .zip(y)
            .map(|(o, &target)| -self.point_nll(&eff, o, target))
            .collect())
    }

    /// Point predictions: mean for regression, argmax class for classification.
    pub fn predict_point(&self, theta: &[f64], x: &Matrix) -> Result<Vec<f64>> {
        let out = self.forward(theta, x)?;
        Ok(out
            .iter_rows()
            .map(|r| match self.spec.task {
                Task::RegressionHomoscedastic => r[0],
                Task::Classification => argmax(r) as f64,
            })
            .collect())
    }

    fn check_batch(&self, theta: &[f64], x: &Matrix, y: &[f64]) -> Result<()> {
        self.check_inputs(theta, x)?;
        if x.rows() == 0 {
            return Err(Error::input("empty batch"));
        }
        if y.len() != x.rows() {
            return Err(Error::Dimension {
                what: "targets",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if self.spec.task == Task::Classification {
            let c = self.spec.output_width();
            if let Some(bad) = y
                .iter()
                .find(|&&v| v < 0.0 || v.fract() != 0.0 || v as usize >= c)
            {
                return Err(Error::input(format!("class label {bad} outside 0..{c}")));
            }
        }
        Ok(())
    }

    fn point_nll(&self, eff: &[f64], out: &[f64], target: f64) -> f64 {
        match self.spec.task {
            Task::RegressionHomoscedastic => {
                let log_sigma = eff[self.layout.log_sigma_offset.expect("regression layout")];
                let r = target - out[0];
                HALF_LN_2PI + log_sigma + 0.5 * r * r * (-2.0 * log_sigma).exp()
            }
            Task::Classification => log_sum_exp(out) - out[target as usize],
        }
    }

    /// Mean negative log-likelihood over the batch and its gradient with
    /// respect to `theta` (raw parameters, bias sorting included).
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        x: &Matrix,
        y: &[f64],
    ) -> Result<(f64, ParamVector)> {
        let (total, mut grad) = self.nll_sum_and_grad(theta, x, y)?;
        let n = x.rows() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((total / n, ParamVector(grad)))
    }

    /// Summed negative log-likelihood and its gradient.
    pub fn nll_sum_and_grad(
        &self,
        theta: &[f64],
        x: &Matrix,
        y: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_batch(theta, x, y)?;
        let eff = self.effective_params(theta);
        let n = x.rows();
        let mut grad = vec![0.0; self.layout.dim];
        let mut total = 0.0;
        let last = self.layout.layers.len() - 1;
        let (pre, acts) = self.forward_batch(&eff, x);
        let out_w = self.spec.output_width();

        // dNLL/d(output), one row per point
        let mut delta = vec![0.0; n * out_w];
        for ((out, &target), d) in pre[last]
            .chunks_exact(out_w)
            .zip(y)
            .zip(delta.chunks_exact_mut(out_w))
        {
            total += self.point_nll(&eff, out, target);
            match self.spec.task {
                Task::RegressionHomoscedastic => {
                    let ls = self.layout.log_sigma_offset.expect("regression layout");
                    let s = eff[ls].exp();
                    let r = target - out[0];
                    let inv_var = 1.0 / (s * s);
                    grad[ls] += 1.0 - r * r * inv_var;
                    d[0] = -r * inv_var;
                }
                Task::Classification => {
                    let lse = log_sum_exp(out);
                    for (di, v) in d.iter_mut().zip(out) {
                        *di = (v - lse).exp();
                    }
                    d[target as usize] -= 1.0;
                }
            }
        }

        for l in (0..=last).rev() {
            let slot = &self.layout.layers[l];
            let (fi, fo) = (slot.fan_in, slot.fan_out);
            if l != last {
                for (d, &z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= self.spec.activation.derivative(z);
                }
            }
            let input = if l == 0 { x.as_slice() } else { &acts[l - 1] };
            for (di, a) in delta.chunks_exact(fo).zip(input.chunks_exact(fi)) {
                for (o, &d) in di.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad[slot.bias_offset + o] += d;
                    let off = slot.weight_offset + o * fi;
                    for (g, &av) in grad[off..off + fi].iter_mut().zip(a) {
                        *g += d * av;
                    }
                }
            }
            if l > 0 {
                let w = &eff[slot.weight_range()];
                let mut prev = vec![0.0; n * fi];
                for (di, p) in delta.chunks_exact(fo).zip(prev.chunks_exact_mut(fi)) {
                    for (o, &d) in di.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (pv, &wv) in p.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                            *pv += d * wv;
                        }
                    }
                }
                delta = prev;
            }
        }

        if self.layout.bias_sorted {
            bias_sort_backward(&self.layout, theta, &mut grad);
        }
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let index = theta
                .iter()
                .position(|v| !v.is_finite())
                .or_else(|| {
                    // an overflowing precision exp(-2 log sigma) poisons every entry
                    self.layout
                        .log_sigma_offset
                        .filter(|&i| !(-2.0 * theta[i]).exp().is_finite())
                })
                .or_else(|| grad.iter().position(|g| !g.is_finite()))
                .or(self.layout.log_sigma_offset)
                .unwrap_or(0);
            let what = if total.is_finite() {
                "gradient"
            } else {
                "loss"
            };
            return Err(Error::NonFinite { what, index });
        }
        Ok((total, grad))
    }

    /// Mean negative log-likelihood without the gradient.
    pub fn loss(&self, theta: &[f64], x: &Matrix, y: &[f64]) -> Result<f64> {
        let ll = self.log_likelihood_points(theta, x, y)?;
        Ok(-ll.iter().sum::<f64>() / ll.len() as f64)
    }
}

fn argmax(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = i;
        }
    }
    best
}

/// Gaussian log density, used by metrics and predictive checks.
pub fn gaussian_log_density(y: f64, mean: f64, sigma: f64) -> f64 {
    let r = (y - mean) / sigma;
    -0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * r * r
}
