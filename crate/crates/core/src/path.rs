//! Path finding: training all control points of a Bézier curve so that the
//! whole curve has low loss.
//!
//! Each step samples `t* ~ U(0, 1)`, evaluates the loss gradient once at
//! `b(t*)` and hands control point `k` the share `omega_k(t*)` of it.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bezier::{bernstein_unchecked, ControlPoints, QuadratureConfig};
use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::mlp::{init_with_rng, InitScheme, Mlp, MlpSpec};
use crate::polymer::{center_of_mass, chain_metrics, draw_noise_step};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Expected loss under `t ~ U(0, 1)`.
    #[default]
    UniformT,
    /// Expected loss under uniform arc length, via importance weights
    /// `|b'(t)| / S` on uniform `t` draws.
    ArcLengthIs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    /// Evenly spaced `t` values used by the validation path score.
    pub grid_points: usize,
    /// Halt after this many consecutive recorded evaluations without
    /// improvement. `None` trains for all epochs; the best checkpoint is
    /// returned either way.
    pub patience: Option<usize>,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            grid_points: 1000,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub objective: Objective,
    /// Draws of `t` per step.
    #[serde(default = "one")]
    pub samples_per_step: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    pub seed: u64,
    /// Hold the first and last control point fixed (fixed-endpoint
    /// mode-connectivity variant).
    #[serde(default)]
    pub freeze_endpoints: bool,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Every epoch up to this one is recorded; later epochs are binned
    /// logarithmically.
    #[serde(default = "dense_until")]
    pub trace_dense_until: usize,
    #[serde(default = "bins_per_decade")]
    pub trace_bins_per_decade: usize,
}

fn one() -> usize {
    1
}
fn dense_until() -> usize {
    100
}
fn bins_per_decade() -> usize {
    20
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::UniformT,
            samples_per_step: 1,
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 1000,
            batch_size: 128,
            early_stop: EarlyStopConfig::default(),
            seed: 0,
            freeze_endpoints: false,
            quadrature: QuadratureConfig::default(),
            trace_dense_until: 100,
            trace_bins_per_decade: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.samples_per_step == 0 {
            return bad("samples_per_step (M) must be >= 1".into());
        }
        if self.early_stop.grid_points < 2 {
            return bad("early_stop.grid_points must be >= 2".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.trace_bins_per_decade == 0 {
            return bad("trace_bins_per_decade must be >= 1".into());
        }
        self.quadrature.validate()
    }

    /// Epochs at which the trace records a row.
    pub fn record_epochs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=self.epochs.min(self.trace_dense_until)).collect();
        if self.epochs > self.trace_dense_until {
            let base = self.trace_dense_until.max(1) as f64;
            let mut j = 1;
            loop {
                let e = (base * 10f64.powf(j as f64 / self.trace_bins_per_decade as f64)).ceil()
                    as usize;
                if e >= self.epochs {
                    break;
                }
                if e > *out.last().expect("nonempty") {
                    out.push(e);
                }
                j += 1;
            }
            out.push(self.epochs);
        }
        out
    }
}

/// In-place SGD update of every control point with dispatched gradient
/// `weights[k] * grad` plus decay: `theta_k -= lr * (w_k g + lambda theta_k)`.
pub fn sgd_step(
    points: &mut ControlPoints,
    weights: &[f64],
    grad: &[f64],
    lr: f64,
    weight_decay: f64,
) {
    for (k, &w) in weights.iter().enumerate() {
        for (p, &g) in points.point_mut(k).iter_mut().zip(grad) {
            *p -= lr * (w * g + weight_decay * *p);
        }
    }
}

enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        step: i32,
    },
}

impl OptimizerState {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                m: vec![0.0; len],
                v: vec![0.0; len],
                step: 0,
            },
        }
    }

    /// Applies one update. `grad` is the dispatched loss gradient, one row
    /// per control point; decay is added here. Returns the summed per-point
    /// gradient norm.
    fn apply(
        &mut self,
        points: &mut ControlPoints,
        grad: &Matrix,
        lr: f64,
        weight_decay: f64,
        frozen: &[bool],
    ) -> f64 {
        let d = points.dim();
        let mut norm_sum = 0.0;
        if let OptimizerState::Adam { step, .. } = self {
            *step += 1;
        }
        for k in 0..=points.degree() {
            let g_row = grad.row(k);
            let p_row = points.point_mut(k);
            let mut sq = 0.0;
            for (i, (p, &g)) in p_row.iter_mut().zip(g_row).enumerate() {
                let full = g + weight_decay * *p;
                sq += full * full;
                if frozen[k] {
                    continue;
                }
                match self {
                    OptimizerState::Sgd => *p -= lr * full,
                    OptimizerState::Adam {
                        beta1,
                        beta2,
                        eps,
                        m,
                        v,
                        step,
                    } => {
                        let j = k * d + i;
                        m[j] = *beta1 * m[j] + (1.0 - *beta1) * full;
                        v[j] = *beta2 * v[j] + (1.0 - *beta2) * full * full;
                        let mh = m[j] / (1.0 - beta1.powi(*step));
                        let vh = v[j] / (1.0 - beta2.powi(*step));
                        *p -= lr * mh / (vh.sqrt() + *eps);
                    }
                }
            }
            norm_sum += sq.sqrt();
        }
        norm_sum
    }
}

/// Speed-based importance weight `|b'(t)| / S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeight {
    pub value: f64,
    /// The curve has zero length; `value` is then 1.
    pub degenerate: bool,
}

pub fn importance_weight(
    points: &ControlPoints,
    t: f64,
    quad: &QuadratureConfig,
) -> Result<ImportanceWeight> {
    let total = points.total_length(quad)?;
    importance_weight_with_total(points, t, total)
}

fn importance_weight_with_total(
    points: &ControlPoints,
    t: f64,
    total: f64,
) -> Result<ImportanceWeight> {
    let speed = points.speed(t)?;
    if total == 0.0 {
        return Ok(ImportanceWeight {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(ImportanceWeight {
        value: speed / total,
        degenerate: false,
    })
}

/// Mean per-point log-likelihood of `split`, averaged over `grid_points`
/// evenly spaced `t` in `[0, 1]`. Higher is better.
pub fn path_validation_score(
    net: &Mlp,
    points: &ControlPoints,
    split: &SplitData,
    grid_points: usize,
) -> Result<f64> {
    if grid_points < 2 {
        return Err(Error::input("validation grid needs at least 2 points"));
    }
    let ts: Vec<f64> = (0..grid_points)
        .map(|i| i as f64 / (grid_points - 1) as f64)
        .collect();
    let profile = path_nll_profile(net, points, split, &ts)?;
    Ok(-profile.iter().sum::<f64>() / profile.len() as f64)
}

/// Mean negative log-likelihood of `split` at each `t` in `ts`.
pub fn path_nll_profile(
    net: &Mlp,
    points: &ControlPoints,
    split: &SplitData,
    ts: &[f64],
) -> Result<Vec<f64>> {
    ts.iter()
        .map(|&t| {
            let theta = points.evaluate(t)?;
            net.loss(&theta, &split.x, &split.y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Mean training loss over the epochs since the previous row.
    pub loss: f64,
    pub val_score: f64,
    pub s: f64,
    pub re: f64,
    pub rg: f64,
    pub lambda_k: f64,
    pub com: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathTrace {
    pub rows: Vec<TraceRow>,
}

impl PathTrace {
    pub const HEADER: &'static str = "epoch,loss,val_score,S,R_e,R_g,lambda_K,com,grad_norm";

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        writeln!(buf, "{}", Self::HEADER).expect("vec write");
        for r in &self.rows {
            writeln!(
                buf,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.loss, r.val_score, r.s, r.re, r.rg, r.lambda_k, r.com, r.grad_norm
            )
            .expect("vec write");
        }
        String::from_utf8(buf).expect("ascii")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::manifest::write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Control points with the best validation path score.
    pub best: ControlPoints,
    pub best_epoch: usize,
    pub best_score: f64,
    /// Control points after the last completed epoch.
    pub last: ControlPoints,
    pub trace: PathTrace,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

/// Where the per-step gradient at `b(t*)` comes from.
enum GradientSource<'a> {
    Data {
        net: &'a Mlp,
        train: &'a SplitData,
    },
    /// Flat landscape: the gradient is replaced by `N(0, sigma^2 I)` noise.
    Noise {
        sigma: f64,
    },
}

struct Recorder<'a> {
    config: &'a TrainConfig,
    record: Vec<usize>,
    next: usize,
    origin: Vec<f64>,
    loss_acc: f64,
    loss_count: usize,
    grad_acc: f64,
}

impl Recorder<'_> {
    fn wants(&self, epoch: usize) -> bool {
        self.record.get(self.next) == Some(&epoch)
    }

    fn row(&mut self, epoch: usize, points: &ControlPoints, val_score: f64) -> Result<TraceRow> {
        let m = chain_metrics(points, Some(&self.origin), Some(&self.config.quadrature))?;
        let n = self.loss_count.max(1) as f64;
        let row = TraceRow {
            epoch,
            loss: self.loss_acc / n,
            val_score,
            s: m.s,
            re: m.re,
            rg: m.rg,
            lambda_k: m.lambda_k,
            com: m.com,
            grad_norm: self.grad_acc / n,
        };
        self.loss_acc = 0.0;
        self.grad_acc = 0.0;
        self.loss_count = 0;
        self.next += 1;
        Ok(row)
    }
}

fn run(
    source: GradientSource<'_>,
    val: Option<&SplitData>,
    init: &ControlPoints,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let GradientSource::Data { net, train } = &source {
        if init.dim() != net.dim() {
            return Err(Error::Dimension {
                what: "control point dimension",
                expected: net.dim(),
                got: init.dim(),
            });
        }
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
    }
    let k = init.degree();
    let d = init.dim();
    let mut points = init.clone();
    let mut opt = OptimizerState::new(config.optimizer, (k + 1) * d);
    let frozen: Vec<bool> = (0..=k)
        .map(|i| config.freeze_endpoints && (i == 0 || i == k))
        .collect();

    // stream 0: t* and injected noise; stream 1: minibatch shuffling
    let mut rng = stream_rng(config.seed, 0);
    let mut shuffle_rng = stream_rng(config.seed, 1);

    let score = |pts: &ControlPoints| -> Result<f64> {
        match (&source, val) {
            (GradientSource::Data { net, .. }, Some(v)) => {
                path_validation_score(net, pts, v, config.early_stop.grid_points)
            }
            _ => Ok(0.0),
        }
    };

    let mut rec = Recorder {
        config,
        record: config.record_epochs(),
        next: 0,
        origin: center_of_mass(&points),
        loss_acc: 0.0,
        loss_count: 0,
        grad_acc: 0.0,
    };
    let mut trace = PathTrace::default();
    let initial_score = score(&points)?;
    trace.rows.push(rec.row(0, &points, initial_score)?);
    let mut best = (points.clone(), 0usize, initial_score);
    let mut since_best = 0usize;
    let mut aborted = None;

    let n_train = match &source {
        GradientSource::Data { train, .. } => train.len(),
        GradientSource::Noise { .. } => 1,
    };
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut grad = Matrix::zeros(k + 1, d);

    'epochs: for epoch in 1..=config.epochs {
        if matches!(source, GradientSource::Data { .. }) && n_train > config.batch_size {
            order.shuffle(&mut shuffle_rng);
        }
        for batch in order.chunks(config.batch_size) {
            grad.as_slice();
            let mut g_acc = vec![0.0; (k + 1) * d];
            let mut loss_sum = 0.0;
            let total_length = match config.objective {
                Objective::ArcLengthIs => Some(points.total_length(&config.quadrature)?),
                Objective::UniformT => None,
            };
            for _ in 0..config.samples_per_step {
                let (t, loss, g) = match &source {
                    GradientSource::Noise { sigma } => {
                        let (t, noise) = draw_noise_step(&mut rng, d, *sigma);
                        (t, 0.0, noise)
                    }
                    GradientSource::Data { net, train } => {
                        let t: f64 = rng.random();
                        let theta = points.evaluate(t)?;
                        let (bx, by) = if batch.len() == train.len() {
                            (train.x.clone(), train.y.clone())
                        } else {
                            train.select(batch)
                        };
                        match net.loss_and_grad(&theta, &bx, &by) {
                            Ok((l, g)) => (t, l, g.into_inner()),
                            Err(e @ Error::NonFinite { .. }) => {
                                aborted = Some(format!("epoch {epoch}: {e}"));
                                break 'epochs;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                };
                let mut scale = 1.0;
                if let Some(total) = total_length {
                    scale = importance_weight_with_total(&points, t, total)?.value;
                }
                let weights = bernstein_unchecked(k, t);
                if config.samples_per_step == 1 && scale == 1.0 {
                    for (kk, &w) in weights.iter().enumerate() {
                        for (dst, &gi) in g_acc[kk * d..(kk + 1) * d].iter_mut().zip(&g) {
                            *dst = w * gi;
                        }
                    }
                } else {
                    let m = config.samples_per_step as f64;
                    for (kk, &w) in weights.iter().enumerate() {
                        let c = scale * w / m;
                        for (dst, &gi) in g_acc[kk * d..(kk + 1) * d].iter_mut().zip(&g) {
                            *dst += c * gi;
                        }
                    }
                }
                loss_sum += loss * scale;
            }
            grad = Matrix::from_vec(k + 1, d, g_acc)?;
            let gn = opt.apply(
                &mut points,
                &grad,
                config.learning_rate,
                config.weight_decay,
                &frozen,
            );
            rec.loss_acc += loss_sum / config.samples_per_step as f64;
            rec.grad_acc += gn;
            rec.loss_count += 1;
        }
        if let Some(i) = points
            .matrix()
            .as_slice()
            .iter()
            .position(|v| !v.is_finite())
        {
            aborted = Some(format!("epoch {epoch}: non-finite control point entry {i}"));
            break;
        }
        if rec.wants(epoch) {
            let s = score(&points)?;
            if !s.is_finite() {
                aborted = Some(format!("epoch {epoch}: non-finite validation score"));
                break;
            }
            trace.rows.push(rec.row(epoch, &points, s)?);
            if s > best.2 {
                best = (points.clone(), epoch, s);
                since_best = 0;
            } else {
                since_best += 1;
                if config.early_stop.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        best_score: best.2,
        last: points,
        trace,
        aborted,
    })
}

/// Random initial control points: each of the `degree + 1` points is an
/// independent network initialization drawn from one seeded stream.
pub fn init_control_points(
    spec: &MlpSpec,
    degree: usize,
    seed: u64,
    scheme: InitScheme,
) -> Result<ControlPoints> {
    let mut rng = stream_rng(seed, 2);
    let rows: Vec<Vec<f64>> = (0..=degree)
        .map(|_| init_with_rng(spec, &mut rng, scheme).into_inner())
        .collect();
    ControlPoints::from_rows(&rows)
}

/// Trains the control points on `train`, scoring checkpoints on `val`.
pub fn train_path(
    net: &Mlp,
    init: &ControlPoints,
    train: &SplitData,
    val: &SplitData,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    run(GradientSource::Data { net, train }, Some(val), init, config)
}

/// Flat-landscape training: one step per epoch whose gradient is pure
/// `N(0, sigma^2 I)` noise. With SGD this reproduces the polymer model.
pub fn train_path_noise(
    init: &ControlPoints,
    sigma: f64,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    run(GradientSource::Noise { sigma }, None, init, config)
}

/// Gradient each control point receives from a loss gradient `g` at `t`:
/// `omega_k(t) * g`.
pub fn dispatch_gradient(degree: usize, t: f64, g: &[f64]) -> Result<Matrix> {
    let w = crate::bezier::bernstein_weights(degree, t)?;
    let rows: Vec<Vec<f64>> = w
        .iter()
        .map(|&wk| g.iter().map(|gi| wk * gi).collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Sum of per-point Euclidean norms.
pub fn summed_norm(grad: &Matrix) -> f64 {
    grad.iter_rows().map(norm).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init, Activation, InitScheme, MlpSpec, Task};
    use crate::polymer::{simulate_repetition, InitialChain, PolymerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn curve_1d(vals: &[f64]) -> ControlPoints {
        let rows: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
        ControlPoints::from_rows(&rows).unwrap()
    }

    fn toy_data(n: usize, seed: u64) -> SplitData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (1.5 * x).sin()).collect();
        SplitData::new(Matrix::column(&xs), ys).unwrap()
    }

    #[test]
    fn dispatch_at_half_is_bernstein_scaled() {
        let g = [2.0, -4.0];
        let m = dispatch_gradient(2, 0.5, &g).unwrap();
        assert_eq!(m.row(0), &[0.5, -1.0]);
        assert_eq!(m.row(1), &[1.0, -2.0]);
        assert_eq!(m.row(2), &[0.5, -1.0]);
    }

    #[test]
    fn dispatched_gradients_sum_to_point_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1usize, 3, 10, 20] {
            let g: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: f64 = rng.random();
            let m = dispatch_gradient(k, t, &g).unwrap();
            for i in 0..7 {
                let s: f64 = (0..=k).map(|kk| m.get(kk, i)).sum();
                assert!((s - g[i]).abs() <= 1e-15 * (k as f64 + 1.0), "K={k}");
            }
        }
    }

    #[test]
    fn importance_weight_examples() {
        let quad = QuadratureConfig::default();
        let line = ControlPoints::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!((importance_weight(&line, t, &quad).unwrap().value - 1.0).abs() < 1e-14);
        }
        let q = curve_1d(&[0.0, 1.0, 0.0]);
        assert!((importance_weight(&q, 0.0, &quad).unwrap().value - 2.0).abs() < 1e-12);
        let flat = curve_1d(&[1.0, 1.0]);
        let w = importance_weight(&flat, 0.5, &quad).unwrap();
        assert!(w.degenerate && w.value == 1.0);
    }

    #[test]
    fn importance_weighted_mc_matches_quadrature() {
        // loss l(theta) = |theta|^2 along a bent 2-D curve
        let quad = QuadratureConfig::default();
        let c = ControlPoints::from_rows(&[
            vec![0.0, 0.0],
            vec![2.0, 0.2],
            vec![0.5, 1.5],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let loss = |t: f64| {
            let p = c.evaluate(t).unwrap();
            p[0] * p[0] + p[1] * p[1]
        };
        let total = c.total_length(&quad).unwrap();
        // oracle: int l |b'| dt / int |b'| dt by Simpson on 20k panels
        let n = 20_000;
        let h = 1.0 / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let sp = c.speed(t).unwrap();
            num += w * loss(t) * sp;
            den += w * sp;
        }
        let oracle = num / den;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let t: f64 = rng.random();
                importance_weight_with_total(&c, t, total).unwrap().value * loss(t)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - oracle).abs() < 3.0 * se,
            "mc {mean} oracle {oracle} se {se}"
        );
    }

    #[test]
    fn record_epochs_are_dense_then_logarithmic() {
        let cfg = TrainConfig {
            epochs: 10_000,
            ..TrainConfig::default()
        };
        let e = cfg.record_epochs();
        assert_eq!(&e[..101], &(0..=100).collect::<Vec<_>>()[..]);
        assert_eq!(*e.last().unwrap(), 10_000);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        // 20 bins per decade over two decades, plus the dense part
        assert!(e.len() <= 101 + 41);
    }

    #[test]
    fn single_point_curve_is_plain_sgd() {
        let spec = MlpSpec::new(
            vec![1, 4, 1],
            Activation::Elu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let net = Mlp::new(spec.clone()).unwrap();
        let theta0 = init(&spec, 1, InitScheme::UniformFanIn);
        let data = toy_data(16, 1);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 16,
            early_stop: EarlyStopConfig {
                grid_points: 2,
                patience: None,
            },
            ..TrainConfig::default()
        };
        let pts = ControlPoints::from_rows(&[theta0.to_vec()]).unwrap();
        let out = train_path(&net, &pts, &data, &data, &cfg).unwrap();
        let mut theta = theta0.to_vec();
        for _ in 0..5 {
            let (_, g) = net.loss_and_grad(&theta, &data.x, &data.y).unwrap();
            for (p, gi) in theta.iter_mut().zip(g.iter()) {
                *p -= 0.05 * (1.0 * gi + 0.0 * *p);
            }
        }
        assert_eq!(out.last.point(0), &theta[..]);
    }

    #[test]
    fn noise_training_reproduces_polymer_trace_bit_exactly() {
        let (k, d, sigma, eta, steps) = (5, 9, 0.7, 0.3, 400);
        let mut pc = PolymerConfig::new(k, d, sigma, eta, steps, 1);
        pc.seed = 17;
        pc.record_stride = 1;
        pc.init = InitialChain::Origin;
        let poly = simulate_repetition(&pc, 0).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: eta,
            epochs: steps,
            batch_size: 1,
            seed: 17,
            ..TrainConfig::default()
        };
        let init = ControlPoints::new(Matrix::zeros(k + 1, d)).unwrap();
        let out = train_path_noise(&init, sigma, &cfg).unwrap();
        for row in &out.trace.rows {
            let (_, obs) = poly[row.epoch];
            assert_eq!(row.com, obs.com, "epoch {}", row.epoch);
            assert_eq!(row.re, obs.re);
            assert_eq!(row.rg, obs.rg);
            assert_eq!(row.lambda_k, obs.lambda_k);
            assert_eq!(row.s, obs.s);
        }
    }

    #[test]
    fn training_is_reproducible_and_rejects_empty_validation() {
        let spec = MlpSpec::new(
            vec![1, 6, 1],
            Activation::Relu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let net = Mlp::new(spec.clone()).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|s| init(&spec, s, InitScheme::UniformFanIn).into_inner())
            .collect();
        let pts = ControlPoints::from_rows(&rows).unwrap();
        let train = toy_data(40, 2);
        let val = toy_data(10, 3);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 8,
            early_stop: EarlyStopConfig {
                grid_points: 20,
                patience: None,
            },
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_path(&net, &pts, &train, &val, &cfg).unwrap();
        let b = train_path(&net, &pts, &train, &val, &cfg).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.trace, b.trace);
        let empty = SplitData::new(Matrix::zeros(0, 1), vec![]).unwrap();
        assert!(matches!(
            train_path(&net, &pts, &train, &empty, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_score_symmetry_and_collapse() {
        let spec = MlpSpec::new(
            vec![1, 5, 1],
            Activation::Elu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let net = Mlp::new(spec.clone()).unwrap();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|s| init(&spec, 10 + s, InitScheme::UniformFanIn).into_inner())
            .collect();
        let pts = ControlPoints::from_rows(&rows).unwrap();
        let val = toy_data(12, 8);
        let a = path_validation_score(&net, &pts, &val, 101).unwrap();
        let b = path_validation_score(&net, &pts.reversed(), &val, 101).unwrap();
        assert!((a - b).abs() < 1e-12);

        let single = init(&spec, 3, InitScheme::UniformFanIn);
        let collapsed = ControlPoints::from_rows(&vec![single.to_vec(); 3]).unwrap();
        let s = path_validation_score(&net, &collapsed, &val, 50).unwrap();
        let ll = -net.loss(&single, &val.x, &val.y).unwrap();
        assert!((s - ll).abs() < 1e-12);
    }

    #[test]
    fn frozen_endpoints_do_not_move() {
        let spec = MlpSpec::new(
            vec![1, 4, 1],
            Activation::Relu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let net = Mlp::new(spec.clone()).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|s| init(&spec, s, InitScheme::UniformFanIn).into_inner())
            .collect();
        let pts = ControlPoints::from_rows(&rows).unwrap();
        let data = toy_data(20, 1);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 20,
            freeze_endpoints: true,
            early_stop: EarlyStopConfig {
                grid_points: 5,
                patience: None,
            },
            ..TrainConfig::default()
        };
        let out = train_path(&net, &pts, &data, &data, &cfg).unwrap();
        assert_eq!(out.last.point(0), pts.point(0));
        assert_eq!(out.last.point(2), pts.point(2));
        assert_ne!(out.last.point(1), pts.point(1));
    }
}
