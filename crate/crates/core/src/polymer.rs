//! Diffusion of a control-point chain in a flat loss landscape.
//!
//! With the loss gradient replaced by Gaussian noise, path training turns
//! into a polymer-like random walk: every step draws `t* ~ U(0, 1)` and one
//! shared noise vector, and each control point moves by its Bernstein weight
//! times that vector. This module simulates that walk, measures the chain
//! geometry and provides the closed-form moments it is checked against.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::{bernstein_unchecked, ControlPoints, QuadratureConfig};
use crate::error::{Error, Result};
use crate::linalg::{distance, Matrix};
use crate::path::sgd_step;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialChain {
    /// Every control point starts at the origin.
    #[default]
    Origin,
    /// Independent `N(0, scale^2)` entries.
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolymerConfig {
    /// Curve degree; the chain has `k + 1` control points.
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub repetitions: usize,
    pub record_stride: usize,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: InitialChain,
    /// Also record the Bézier arc length (costs a quadrature per record).
    #[serde(default = "default_true")]
    pub track_arc_length: bool,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

fn default_true() -> bool {
    true
}

impl Default for PolymerConfig {
    fn default() -> Self {
        Self::new(10, 55, 1.0, 1.0, 10_000, 100)
    }
}

impl PolymerConfig {
    pub fn new(k: usize, d: usize, sigma: f64, eta: f64, steps: usize, repetitions: usize) -> Self {
        Self {
            k,
            d,
            sigma,
            eta,
            steps,
            repetitions,
            record_stride: (steps / 100).max(1),
            weight_decay: 0.0,
            seed: 0,
            init: InitialChain::Origin,
            track_arc_length: true,
            quadrature: QuadratureConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 {
            return bad("polymer dimension d must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("noise sigma must be finite and >= 0");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("learning rate eta must be positive");
        }
        if self.repetitions == 0 || self.record_stride == 0 {
            return bad("repetitions and record_stride must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be >= 0");
        }
        if let InitialChain::Gaussian { scale } = self.init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return bad("initial chain scale must be finite and >= 0");
            }
        }
        self.quadrature.validate()
    }

    /// `n * eta^2 * sigma^2`.
    pub fn effective_time(&self, step: usize) -> f64 {
        step as f64 * self.eta * self.eta * self.sigma * self.sigma
    }

    fn is_recorded(&self, step: usize) -> bool {
        step % self.record_stride == 0 || step == self.steps
    }
}

/// Chain geometry at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainObservables {
    /// Displacement of the center of mass from the reference point.
    pub com: f64,
    /// End-to-end distance `||theta_K - theta_0||`.
    pub re: f64,
    /// Radius of gyration.
    pub rg: f64,
    /// Control polygon length `sum ||theta_{k+1} - theta_k||`.
    pub lambda_k: f64,
    /// Bézier arc length (0 when not tracked).
    pub s: f64,
}

impl ChainObservables {
    pub const NAMES: [&'static str; 5] = ["com", "re", "rg", "lambda_k", "s"];

    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Com => self.com,
            Quantity::Re => self.re,
            Quantity::Rg => self.rg,
            Quantity::LambdaK => self.lambda_k,
            Quantity::ArcLength => self.s,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [self.com, self.re, self.rg, self.lambda_k, self.s]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            com: a[0],
            re: a[1],
            rg: a[2],
            lambda_k: a[3],
            s: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Com,
    Re,
    Rg,
    LambdaK,
    ArcLength,
}

/// Center of mass of the control points.
pub fn center_of_mass(points: &ControlPoints) -> Vec<f64> {
    let mut com = vec![0.0; points.dim()];
    for row in points.iter() {
        for (c, v) in com.iter_mut().zip(row) {
            *c += v;
        }
    }
    let n = (points.degree() + 1) as f64;
    com.iter_mut().for_each(|c| *c /= n);
    com
}

/// Geometric observables of a chain. `com` is measured from `reference`
/// (the origin when `None`); the arc length is computed only when `quad` is
/// given.
pub fn chain_metrics(
    points: &ControlPoints,
    reference: Option<&[f64]>,
    quad: Option<&QuadratureConfig>,
) -> Result<ChainObservables> {
    let com_vec = center_of_mass(points);
    let com = match reference {
        Some(r) => distance(&com_vec, r),
        None => com_vec.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    let n = (points.degree() + 1) as f64;
    let rg = (points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&com_vec)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let lambda_k = (0..points.degree())
        .map(|k| distance(points.point(k), points.point(k + 1)))
        .sum();
    let s = match quad {
        Some(q) => points.total_length(q)?,
        None => 0.0,
    };
    Ok(ChainObservables {
        com,
        re: points.chord(),
        rg,
        lambda_k,
        s,
    })
}

/// One step of the flat-landscape dynamics: draws `t*` and then the noise
/// vector `sigma * z`, `z ~ N(0, I)`. Path training's noise-injection mode
/// consumes the RNG in exactly this order.
pub fn draw_noise_step<R: Rng + ?Sized>(rng: &mut R, d: usize, sigma: f64) -> (f64, Vec<f64>) {
    let t: f64 = rng.random();
    let noise = (0..d)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (t, noise)
}

pub fn initial_chain(config: &PolymerConfig, rng: &mut ChaCha8Rng) -> ControlPoints {
    let rows = config.k + 1;
    let data = match config.init {
        InitialChain::Origin => vec![0.0; rows * config.d],
        InitialChain::Gaussian { scale } => (0..rows * config.d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    ControlPoints::new(Matrix::from_vec(rows, config.d, data).expect("shape")).expect("finite init")
}

/// A single repetition: `(step, observables)` at every recorded step,
/// starting with step 0. Repetition `rep` uses RNG stream `rep` of the seed.
pub fn simulate_repetition(
    config: &PolymerConfig,
    rep: usize,
) -> Result<Vec<(usize, ChainObservables)>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, rep as u64);
    let mut chain = initial_chain(config, &mut rng);
    let origin = center_of_mass(&chain);
    let quad = config.track_arc_length.then_some(&config.quadrature);
    let mut out = Vec::with_capacity(config.steps / config.record_stride + 2);
    out.push((0, chain_metrics(&chain, Some(&origin), quad)?));
    for step in 1..=config.steps {
        let (t, noise) = draw_noise_step(&mut rng, config.d, config.sigma);
        let weights = bernstein_unchecked(config.k, t);
        sgd_step(
            &mut chain,
            &weights,
            &noise,
            config.eta,
            config.weight_decay,
        );
        if config.is_recorded(step) {
            out.push((step, chain_metrics(&chain, Some(&origin), quad)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub eff_time: f64,
    pub mean: ChainObservables,
    /// Standard error of the mean across repetitions (0 for one repetition).
    pub stderr: ChainObservables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerTrace {
    pub config: PolymerConfig,
    pub rows: Vec<TraceRow>,
}

impl PolymerTrace {
    pub fn values(&self, q: Quantity) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean.get(q)).collect()
    }

    pub fn eff_times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eff_time).collect()
    }

    /// Row recorded at `step`, if any.
    pub fn at_step(&self, step: usize) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        writeln!(
            buf,
            "step,eff_time,com,re,rg,lambda_k,s,com_se,re_se,rg_se,lambda_k_se,s_se"
        )
        .expect("vec write");
        for r in &self.rows {
            let m = r.mean.as_array();
            let e = r.stderr.as_array();
            let fields: Vec<String> = std::iter::once(r.step.to_string())
                .chain(std::iter::once(format!("{:?}", r.eff_time)))
                .chain(m.iter().chain(&e).map(|v| format!("{v:?}")))
                .collect();
            writeln!(buf, "{}", fields.join(",")).expect("vec write");
        }
        String::from_utf8(buf).expect("ascii")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::manifest::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Runs all repetitions (in parallel) and averages the recorded observables.
pub fn simulate(config: &PolymerConfig) -> Result<PolymerTrace> {
    config.validate()?;
    let runs: Vec<Vec<(usize, ChainObservables)>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| simulate_repetition(config, rep))
        .collect::<Result<_>>()?;
    let r = runs.len() as f64;
    let rows = (0..runs[0].len())
        .map(|i| {
            let step = runs[0][i].0;
            let mut mean = [0.0; 5];
            let mut sq = [0.0; 5];
            for run in &runs {
                for (j, v) in run[i].1.as_array().iter().enumerate() {
                    mean[j] += v;
                    sq[j] += v * v;
                }
            }
            let mut se = [0.0; 5];
            for j in 0..5 {
                mean[j] /= r;
                if runs.len() > 1 {
                    let var = ((sq[j] - r * mean[j] * mean[j]) / (r - 1.0)).max(0.0);
                    se[j] = (var / r).sqrt();
                }
            }
            TraceRow {
                step,
                eff_time: config.effective_time(step),
                mean: ChainObservables::from_array(mean),
                stderr: ChainObservables::from_array(se),
            }
        })
        .collect();
    Ok(PolymerTrace {
        config: config.clone(),
        rows,
    })
}

/// `sqrt(n eta^2 sigma^2) * sqrt(D) / (K + 1)`: the root-mean-square
/// center-of-mass displacement after `n` noise steps.
pub fn analytic_com(n: f64, eta: f64, sigma: f64, d: f64, k: usize) -> f64 {
    (n * eta * eta * sigma * sigma).sqrt() * d.sqrt() / (k as f64 + 1.0)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `I_K = int_0^1 (t^K - (1-t)^K)^2 dt = 2/(2K+1) - 2 (K!)^2 / (2K+1)!`.
pub fn end_to_end_integral(k: usize) -> f64 {
    let beta = (2.0 * ln_factorial(k) - ln_factorial(2 * k + 1)).exp();
    2.0 / (2 * k + 1) as f64 - 2.0 * beta
}

/// `E[R_e^2] = eta^2 sigma^2 n D I_K` for a chain started at the origin.
pub fn analytic_re2(n: f64, eta: f64, sigma: f64, d: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::input("end-to-end distance needs K >= 1"));
    }
    Ok(eta * eta * sigma * sigma * n * d * end_to_end_integral(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares line through `(log x, log y)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            what: "fit samples",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 10 {
        return Err(Error::input(format!(
            "scaling fit needs at least 10 points, got {}",
            xs.len()
        )));
    }
    if let Some(i) = xs.iter().zip(ys).position(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::input(format!(
            "non-positive value in fit window at point {i} (x = {}, y = {})",
            xs[i], ys[i]
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::input("fit window has a single abscissa"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = if lx.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(ScalingFit {
        slope,
        intercept,
        stderr,
        points: lx.len(),
    })
}

/// Window of recorded steps used by [`fit_scaling`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub from_step: usize,
    pub to_step: usize,
}

impl FitWindow {
    /// The last decade of the trace: `(steps / 10, steps]`.
    pub fn last_decade(steps: usize) -> Self {
        Self {
            from_step: steps / 10,
            to_step: steps,
        }
    }
}

/// Log-log slope of `quantity` against effective time over `window`.
pub fn fit_scaling(
    trace: &PolymerTrace,
    quantity: Quantity,
    window: Option<FitWindow>,
) -> Result<ScalingFit> {
    let window = window.unwrap_or_else(|| FitWindow::last_decade(trace.config.steps));
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .rows
        .iter()
        .filter(|r| r.step >= window.from_step && r.step <= window.to_step && r.step > 0)
        .map(|r| (r.eff_time, r.mean.get(quantity)))
        .unzip();
    fit_power_law(&xs, &ys)
}
