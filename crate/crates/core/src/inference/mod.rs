//! Posterior inference in tunnel or volume coordinates.

pub mod diagnostics;
pub mod sampler;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bezier::ControlPoints;
use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::mlp::{Mlp, Task};
use crate::tunnel::{Param, SubspaceBasis, Tunnel, VolumeMode};

pub use diagnostics::{ess, rhat, Diagnostic};
pub use sampler::{
    lifted_diagnostics, mean_ess, mean_rhat, run_hmc, run_mh, sample, series_diagnostics,
    ChainSamples, Kernel, SampleSet, SampleSummary, SamplerConfig,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A differentiable log density over `R^dim`, possibly with some coordinates
/// confined to an interval.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Unnormalized log density; `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Log density and its gradient.
    fn grad_log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Interval that coordinate `i` must stay in, if any.
    fn bounds(&self, _i: usize) -> Option<(f64, f64)> {
        None
    }

    fn initial_point(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn coord_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Independent normals with the given means and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl DiagGaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }
}

impl Target for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| -0.5 * ((v - m) / s).powi(2))
            .sum()
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = x
            .iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| -(v - m) / (s * s))
            .collect();
        Ok((self.log_density(x), g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// `phi ~ N(0, sigma^2 I)` on the control-point hyperplane.
    VolumeGauss { sigma: f64 },
    /// `t ~ U(0, 1)`, `xi ~ N(0, sigma^2 I)`.
    TunnelT { sigma: f64 },
    /// Uniform in arc length: the tunnel_t prior plus `log|c'(t)| - log S`
    /// (or the full Jacobian version); the state is still `(t, xi)`.
    TunnelS { sigma: f64 },
}

impl PriorKind {
    pub fn sigma(&self) -> f64 {
        match *self {
            PriorKind::VolumeGauss { sigma }
            | PriorKind::TunnelT { sigma }
            | PriorKind::TunnelS { sigma } => sigma,
        }
    }

    pub fn is_tunnel(&self) -> bool {
        !matches!(self, PriorKind::VolumeGauss { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    #[serde(default)]
    pub adjustment: VolumeMode,
}

impl PriorSpec {
    pub fn new(kind: PriorKind) -> Self {
        Self {
            kind,
            adjustment: VolumeMode::SpeedOnly,
        }
    }
}

/// How sampler coordinates map to parameters.
#[derive(Debug, Clone)]
pub enum Lifting {
    /// State `(t, xi)`.
    Tunnel(Tunnel),
    /// State `phi`, the hyperplane coordinate. `curve` holds the control
    /// points in basis coordinates and is used to place initial states.
    Volume {
        basis: SubspaceBasis,
        curve: Option<ControlPoints>,
    },
}

impl Lifting {
    pub fn dim(&self) -> usize {
        match self {
            Lifting::Tunnel(t) => t.rank(),
            Lifting::Volume { basis, .. } => basis.rank(),
        }
    }

    /// Volume lifting over the same hyperplane as `tunnel`.
    pub fn volume_of(tunnel: &Tunnel) -> Self {
        Lifting::Volume {
            basis: tunnel.basis().clone(),
            curve: Some(tunnel.subspace_curve().clone()),
        }
    }

    pub fn basis(&self) -> &SubspaceBasis {
        match self {
            Lifting::Tunnel(t) => t.basis(),
            Lifting::Volume { basis, .. } => basis,
        }
    }

    /// Parameter vector for a sampler state.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Lifting::Tunnel(t) => t.lift(Param::Time(x[0]), &x[1..]),
            Lifting::Volume { basis, .. } => basis.volume_lift(x),
        }
    }
}

/// Tempered posterior `(1/T) log p(D | theta(x)) + log prior(x)`.
/// Normalizing constants of the Gaussian priors are included; the uniform
/// `t` prior contributes 0. Without data the target is the prior alone.
#[derive(Debug)]
pub struct PosteriorTarget<'a> {
    net: &'a Mlp,
    data: Option<&'a SplitData>,
    lifting: &'a Lifting,
    prior: PriorSpec,
    temperature: f64,
    fd_step: f64,
    boundary_fallbacks: AtomicUsize,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(
        net: &'a Mlp,
        data: Option<&'a SplitData>,
        lifting: &'a Lifting,
        prior: PriorSpec,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be finite and > 0, got {temperature}"
            )));
        }
        let sigma = prior.kind.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "prior scale must be > 0, got {sigma}"
            )));
        }
        let fd_step = match (lifting, prior.kind.is_tunnel()) {
            (Lifting::Tunnel(t), true) => {
                if t.rank() < 1 {
                    return Err(Error::Config("tunnel has rank 0".into()));
                }
                1.0 / (10.0 * t.table().grid_points as f64)
            }
            (Lifting::Volume { .. }, false) => 0.0,
            _ => {
                return Err(Error::Config(
                    "prior kind does not match the lifting (volume prior needs a volume lifting, tunnel priors a tunnel)"
                        .into(),
                ))
            }
        };
        if lifting.basis().ambient_dim() != net.dim() {
            return Err(Error::Dimension {
                what: "lifting dimension vs network parameters",
                expected: net.dim(),
                got: lifting.basis().ambient_dim(),
            });
        }
        if let Some(d) = data {
            if d.is_empty() {
                return Err(Error::Config("posterior data split is empty".into()));
            }
        }
        Ok(Self {
            net,
            data,
            lifting,
            prior,
            temperature,
            fd_step,
            boundary_fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn lifting(&self) -> &Lifting {
        self.lifting
    }

    /// Number of t-gradients that fell back to one-sided differences.
    pub fn boundary_fallbacks(&self) -> usize {
        self.boundary_fallbacks.load(Ordering::Relaxed)
    }

    /// `sum_i log p(y_i | theta)`, untempered.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let Some(d) = self.data else { return 0.0 };
        if theta.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match self.net.log_likelihood_points(theta, &d.x, &d.y) {
            Ok(ll) => {
                let s: f64 = ll.iter().sum();
                if s.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    s
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn gaussian_log_prior(&self, z: &[f64]) -> f64 {
        let s = self.prior.kind.sigma();
        let n = z.len() as f64;
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() / (s * s) - n * (HALF_LN_2PI + s.ln())
    }

    /// Log prior including the volume adjustment for `tunnel_s`.
    pub fn log_prior(&self, x: &[f64]) -> f64 {
        match (self.lifting, self.prior.kind) {
            (Lifting::Volume { .. }, _) => self.gaussian_log_prior(x),
            (Lifting::Tunnel(tun), kind) => {
                let t = x[0];
                if !(0.0..=1.0).contains(&t) {
                    return f64::NEG_INFINITY;
                }
                let mut lp = self.gaussian_log_prior(&x[1..]);
                if let PriorKind::TunnelS { .. } = kind {
                    match tun.log_volume_adjustment(Param::Time(t), &x[1..], self.prior.adjustment)
                    {
                        Ok(adj) => lp += adj - tun.length().ln(),
                        Err(_) => return f64::NEG_INFINITY,
                    }
                }
                lp
            }
        }
    }

    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let theta = match self.lifting.lift(x) {
            Ok(th) => th,
            Err(_) => return f64::NEG_INFINITY,
        };
        let ll = self.log_likelihood(&theta);
        let v = ll / self.temperature + lp;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// `sum_i log p(y_i | theta)` and its gradient; `None` when either is
    /// not finite.
    fn likelihood_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = self.data?;
        let (nll, mut g) = self.net.nll_sum_and_grad(theta, &d.x, &d.y).ok()?;
        for v in &mut g {
            *v = -*v;
        }
        Some((-nll, g))
    }
}

impl Target for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.lifting.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior(x)
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::Dimension {
                what: "sampler state",
                expected: dim,
                got: x.len(),
            });
        }
        let reject = || Ok((f64::NEG_INFINITY, vec![0.0; dim]));
        if x.iter().any(|v| !v.is_finite()) {
            return reject();
        }
        let lp = self.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return reject();
        }
        let sigma2 = self.prior.kind.sigma().powi(2);
        let Ok(theta) = self.lifting.lift(x) else {
            return reject();
        };
        let (ll, like_grad) = if self.data.is_some() {
            match self.likelihood_and_gradient(&theta) {
                Some((ll, g)) => (ll, Some(g)),
                None => return reject(),
            }
        } else {
            (0.0, None)
        };
        let value = ll / self.temperature + lp;
        if value.is_nan() {
            return reject();
        }
        // Pi^T grad_theta, scaled by 1/T
        let u: Vec<f64> = match &like_grad {
            Some(g) => self
                .lifting
                .basis()
                .pi_t
                .iter_rows()
                .map(|r| dot(r, g) / self.temperature)
                .collect(),
            None => vec![0.0; self.lifting.basis().rank()],
        };
        match self.lifting {
            Lifting::Volume { .. } => {
                let g = u.iter().zip(x).map(|(ui, xi)| ui - xi / sigma2).collect();
                Ok((value, g))
            }
            Lifting::Tunnel(tun) => {
                let t = x[0];
                let xi = &x[1..];
                let frame = tun.frame_at(t)?;
                let mut g = vec![0.0; dim];
                for (j, k) in frame.normals.iter().enumerate() {
                    g[j + 1] = dot(&u, k) - xi[j] / sigma2;
                }
                if matches!(self.prior.kind, PriorKind::TunnelS { .. })
                    && self.prior.adjustment == VolumeMode::FullJacobian
                    && xi.iter().any(|&v| v != 0.0)
                {
                    let dk = tun.normal_derivatives(t)?;
                    let speed = tun.speed(t)?;
                    let tangent = &frame.tangent;
                    let a: Vec<f64> = dk.iter().map(|d| dot(d, tangent)).collect();
                    let arg = speed + xi.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
                    for j in 0..xi.len() {
                        g[j + 1] += a[j] / arg;
                    }
                }
                // t: central difference of the whole log posterior
                let h = self.fd_step;
                let mut probe = x.to_vec();
                let (lo, hi) = ((t - h).max(0.0), (t + h).min(1.0));
                if lo == t || hi == t {
                    self.boundary_fallbacks.fetch_add(1, Ordering::Relaxed);
                    log::debug!("one-sided t-gradient at t = {t}");
                }
                probe[0] = hi;
                let fp = if hi == t {
                    value
                } else {
                    self.log_posterior(&probe)
                };
                probe[0] = lo;
                let fm = if lo == t {
                    value
                } else {
                    self.log_posterior(&probe)
                };
                g[0] = if hi > lo { (fp - fm) / (hi - lo) } else { 0.0 };
                if !g[0].is_finite() {
                    g[0] = 0.0;
                }
                Ok((value, g))
            }
        }
    }

    fn bounds(&self, i: usize) -> Option<(f64, f64)> {
        match self.lifting {
            Lifting::Tunnel(_) if i == 0 => Some((0.0, 1.0)),
            _ => None,
        }
    }

    /// Tunnel: uniform `t`, `xi = 0`. Volume: the hyperplane coordinate of a
    /// uniformly drawn curve point.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let t: f64 = rng.random_range(0.05..0.95);
        match self.lifting {
            Lifting::Tunnel(_) => {
                let mut x = vec![0.0; self.dim()];
                x[0] = t;
                x
            }
            Lifting::Volume { curve: Some(c), .. } => c.evaluate(t).expect("t in range"),
            Lifting::Volume { curve: None, .. } => vec![0.0; self.dim()],
        }
    }

    fn coord_names(&self) -> Vec<String> {
        match self.lifting {
            Lifting::Tunnel(_) => std::iter::once("t".to_string())
                .chain((1..self.dim()).map(|j| format!("xi{j}")))
                .collect(),
            Lifting::Volume { .. } => (1..=self.dim()).map(|j| format!("phi{j}")).collect(),
        }
    }
}

/// Per-draw predictive quantities on a data split.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    /// `log p(y_i | theta_u)`, one row per observation, one column per draw.
    pub log_densities: Matrix,
    /// Point predictions per draw (rows = draws): means for regression,
    /// argmax classes for classification.
    pub predictions: Matrix,
    /// Posterior-mean prediction per observation (regression mean, or the
    /// class with the highest average probability).
    pub mean_prediction: Vec<f64>,
}

/// Lifts each draw and evaluates the network on `split`.
pub fn posterior_predict(
    net: &Mlp,
    lifting: &Lifting,
    draws: &[Vec<f64>],
    split: &SplitData,
) -> Result<Predictive> {
    thetas_predict(
        net,
        &draws
            .iter()
            .map(|x| lifting.lift(x))
            .collect::<Result<Vec<_>>>()?,
        split,
    )
}

/// [`posterior_predict`] on parameter vectors directly.
pub fn thetas_predict(net: &Mlp, thetas: &[Vec<f64>], split: &SplitData) -> Result<Predictive> {
    if thetas.is_empty() {
        return Err(Error::input("no draws to predict with"));
    }
    let n = split.len();
    let u = thetas.len();
    let mut log_dens = Matrix::zeros(n, u);
    let mut preds = Matrix::zeros(u, n);
    let classes = net.spec().output_width();
    let mut prob_acc = vec![0.0; n * classes];
    let mut mean_acc = vec![0.0; n];
    for (j, theta) in thetas.iter().enumerate() {
        let ll = net.log_likelihood_points(theta, &split.x, &split.y)?;
        for (i, v) in ll.iter().enumerate() {
            log_dens.set(i, j, *v);
        }
        let out = net.forward(theta, &split.x)?;
        for (i, row) in out.iter_rows().enumerate() {
            match net.spec().task {
                Task::RegressionHomoscedastic => {
                    preds.set(j, i, row[0]);
                    mean_acc[i] += row[0] / u as f64;
                }
                Task::Classification => {
                    let lse = crate::linalg::log_sum_exp(row);
                    let mut best = 0;
                    for (c, v) in row.iter().enumerate() {
                        prob_acc[i * classes + c] += (v - lse).exp() / u as f64;
                        if *v > row[best] {
                            best = c;
                        }
                    }
                    preds.set(j, i, best as f64);
                }
            }
        }
    }
    let mean_prediction = match net.spec().task {
        Task::RegressionHomoscedastic => mean_acc,
        Task::Classification => (0..n)
            .map(|i| {
                let p = &prob_acc[i * classes..(i + 1) * classes];
                let mut best = 0;
                for c in 0..classes {
                    if p[c] > p[best] {
                        best = c;
                    }
                }
                best as f64
            })
            .collect(),
    };
    Ok(Predictive {
        log_densities: log_dens,
        predictions: preds,
        mean_prediction,
    })
}
