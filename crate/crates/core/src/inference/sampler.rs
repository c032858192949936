//! Random-walk Metropolis–Hastings and Hamiltonian Monte Carlo.
//!
//! Chains run in parallel, chain `m` on RNG stream `m` of the seed, so a
//! sample set does not depend on the thread count.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{ess, rhat, Diagnostic};
use super::{Lifting, Target};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// Gaussian random walk; `scale` is the initial per-coordinate
    /// proposal standard deviation.
    Rwmh { scale: f64 },
    Hmc {
        step_size: f64,
        leapfrog_steps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kernel: Kernel,
    pub chains: usize,
    pub warmup: usize,
    /// Retained draws per chain.
    pub draws: usize,
    /// Keep every `thin`-th post-warmup state.
    #[serde(default = "one")]
    pub thin: usize,
    pub seed: u64,
    /// Adapt proposal scales (RWMH) or step size and mass (HMC) in warmup.
    #[serde(default = "yes")]
    pub adapt: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Hmc {
                step_size: 0.05,
                leapfrog_steps: 10,
            },
            chains: 10,
            warmup: 1000,
            draws: 1000,
            thin: 1,
            seed: 0,
            adapt: true,
        }
    }
}

/// Warmup acceptance targets.
pub const RWMH_TARGET_ACCEPT: f64 = 0.3;
pub const HMC_TARGET_ACCEPT: f64 = 0.8;
/// `|dH|` beyond which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.chains == 0 {
            return bad("at least one chain is required".into());
        }
        if self.draws < 10 {
            return bad(format!("draws must be >= 10, got {}", self.draws));
        }
        if self.thin == 0 {
            return bad("thin must be >= 1".into());
        }
        match self.kernel {
            Kernel::Rwmh { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                bad(format!("proposal scale must be >= 0, got {scale}"))
            }
            Kernel::Hmc {
                step_size,
                leapfrog_steps,
            } if !(step_size > 0.0 && step_size.is_finite()) || leapfrog_steps == 0 => {
                bad("HMC needs step_size > 0 and leapfrog_steps >= 1".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// Post-warmup acceptance rate.
    pub acceptance: f64,
    pub warmup_acceptance: f64,
    pub divergences: usize,
    /// `|dH|` per post-warmup HMC transition.
    pub energy_errors: Vec<f64>,
    /// Proposal multiplier (RWMH) or step size (HMC) after warmup.
    pub final_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub coord_names: Vec<String>,
    pub config: SamplerConfig,
    pub chains: Vec<ChainSamples>,
    pub wall_time_secs: f64,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub coord_names: Vec<String>,
    pub acceptance: Vec<f64>,
    pub mean_acceptance: f64,
    pub ess: Vec<Diagnostic>,
    /// `None` with fewer than two chains.
    pub rhat: Option<Vec<Diagnostic>>,
    pub mean_ess: f64,
    pub mean_rhat: Option<f64>,
    pub divergences: usize,
    pub median_abs_energy_error: Option<f64>,
    pub wall_time_secs: f64,
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DrawLine {
    chain: usize,
    draw: usize,
    coord: Vec<f64>,
    log_posterior: f64,
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// ESS and R-hat per scalar series, where `series[m][d]` holds chain `m`'s
/// trace of quantity `d`.
pub fn series_diagnostics(
    series: &[Vec<Vec<f64>>],
) -> Result<(Vec<Diagnostic>, Option<Vec<Diagnostic>>)> {
    let dims = series.first().map_or(0, Vec::len);
    let ess_v = (0..dims)
        .into_par_iter()
        .map(|d| {
            let refs: Vec<&[f64]> = series.iter().map(|c| c[d].as_slice()).collect();
            ess(&refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let rhat_v = if series.len() >= 2 {
        Some(
            (0..dims)
                .into_par_iter()
                .map(|d| {
                    let refs: Vec<&[f64]> = series.iter().map(|c| c[d].as_slice()).collect();
                    rhat(&refs)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((ess_v, rhat_v))
}

/// ESS and R-hat of every parameter coordinate, with `chains[m][u]` the
/// sampler state of draw `u` in chain `m`.
pub fn lifted_diagnostics(
    lifting: &Lifting,
    chains: &[Vec<Vec<f64>>],
) -> Result<(Vec<Diagnostic>, Option<Vec<Diagnostic>>)> {
    let d = lifting.basis().ambient_dim();
    let series = chains
        .par_iter()
        .map(|c| {
            let mut per_dim = vec![Vec::with_capacity(c.len()); d];
            for x in c {
                let theta = lifting.lift(x)?;
                for (dst, v) in per_dim.iter_mut().zip(theta) {
                    dst.push(v);
                }
            }
            Ok(per_dim)
        })
        .collect::<Result<Vec<_>>>()?;
    series_diagnostics(&series)
}

/// Mean of unflagged values; flagged ESS count as 0, flagged R-hat are
/// skipped.
pub fn mean_ess(v: &[Diagnostic]) -> f64 {
    mean_of(v.iter().map(|d| if d.flagged { 0.0 } else { d.value }))
}

pub fn mean_rhat(v: &[Diagnostic]) -> f64 {
    mean_of(v.iter().filter(|d| !d.flagged).map(|d| d.value))
}

impl SampleSet {
    pub fn dim(&self) -> usize {
        self.coord_names.len()
    }

    /// Chain `m`'s trace of coordinate `d`.
    pub fn trace(&self, m: usize, d: usize) -> Vec<f64> {
        self.chains[m].draws.iter().map(|x| x[d]).collect()
    }

    /// All retained draws, chain by chain.
    pub fn all_draws(&self) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().cloned())
            .collect()
    }

    pub fn summary(&self) -> Result<SampleSummary> {
        let series: Vec<Vec<Vec<f64>>> = (0..self.chains.len())
            .map(|m| (0..self.dim()).map(|d| self.trace(m, d)).collect())
            .collect();
        let (ess_v, rhat_v) = series_diagnostics(&series)?;
        let energy: Vec<f64> = self
            .chains
            .iter()
            .flat_map(|c| c.energy_errors.iter().copied())
            .collect();
        Ok(SampleSummary {
            coord_names: self.coord_names.clone(),
            acceptance: self.chains.iter().map(|c| c.acceptance).collect(),
            mean_acceptance: mean_of(self.chains.iter().map(|c| c.acceptance)),
            mean_ess: mean_ess(&ess_v),
            mean_rhat: rhat_v.as_ref().map(|r| mean_rhat(r)),
            ess: ess_v,
            rhat: rhat_v,
            divergences: self.chains.iter().map(|c| c.divergences).sum(),
            median_abs_energy_error: median(energy),
            wall_time_secs: self.wall_time_secs,
            config_hash: self.config_hash.clone(),
        })
    }

    /// ESS and R-hat over the lifted parameter vectors.
    pub fn parameter_diagnostics(
        &self,
        lifting: &Lifting,
    ) -> Result<(Vec<Diagnostic>, Option<Vec<Diagnostic>>)> {
        let chains: Vec<Vec<Vec<f64>>> = self.chains.iter().map(|c| c.draws.clone()).collect();
        lifted_diagnostics(lifting, &chains)
    }

    /// One JSON object per draw.
    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        for (m, c) in self.chains.iter().enumerate() {
            for (u, (x, lp)) in c.draws.iter().zip(&c.log_posterior).enumerate() {
                let line = DrawLine {
                    chain: m,
                    draw: u,
                    coord: x.clone(),
                    log_posterior: *lp,
                };
                serde_json::to_writer(&mut buf, &line).expect("serializable");
                buf.push(b'\n');
            }
        }
        String::from_utf8(buf).expect("utf8")
    }

    /// Reads draws written by [`to_jsonl`](Self::to_jsonl). Only draws and
    /// log posteriors are restored.
    pub fn draws_from_jsonl(text: &str) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: DrawLine = serde_json::from_str(line).map_err(|e| Error::Data {
                line: i + 1,
                message: e.to_string(),
            })?;
            if chains.len() <= d.chain {
                chains.resize(d.chain + 1, Vec::new());
            }
            if d.draw != chains[d.chain].len() {
                return Err(Error::Data {
                    line: i + 1,
                    message: format!("chain {} draw {} out of order", d.chain, d.draw),
                });
            }
            chains[d.chain].push(d.coord);
        }
        Ok(chains)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn starting_point<T: Target + ?Sized>(target: &T, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
    for _ in 0..100 {
        let x = target.initial_point(rng);
        let lp = target.log_density(&x);
        if lp.is_finite() {
            return Ok((x, lp));
        }
    }
    Err(Error::Sampler(
        "no initial point with finite log density in 100 tries".into(),
    ))
}

/// Per-coordinate standard deviation of `states`; `None` for too few.
fn coordinate_sd(states: &[Vec<f64>]) -> Option<Vec<f64>> {
    if states.len() < 20 {
        return None;
    }
    let d = states[0].len();
    let n = states.len() as f64;
    let mut mean = vec![0.0; d];
    for s in states {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in states {
        for ((a, v), m) in var.iter_mut().zip(s).zip(&mean) {
            *a += (v - m) * (v - m) / (n - 1.0);
        }
    }
    Some(var.into_iter().map(f64::sqrt).collect())
}

fn adapt_rate(it: usize) -> f64 {
    (it as f64 + 10.0).powf(-0.6)
}

fn reflect(x: &mut f64, p: &mut f64, (a, b): (f64, f64)) {
    for _ in 0..64 {
        if *x < a {
            *x = 2.0 * a - *x;
            *p = -*p;
        } else if *x > b {
            *x = 2.0 * b - *x;
            *p = -*p;
        } else {
            return;
        }
    }
    *x = x.clamp(a, b);
}

fn mh_chain<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
    init_scale: f64,
) -> Result<ChainSamples> {
    let mut rng = stream_rng(config.seed, chain as u64);
    let d = target.dim();
    let (mut x, mut lp) = starting_point(target, &mut rng)?;
    let mut scales = vec![init_scale; d];
    let mut log_mult = 0.0_f64;
    let total = config.warmup + config.draws * config.thin;
    let mut out = ChainSamples {
        draws: Vec::with_capacity(config.draws),
        log_posterior: Vec::with_capacity(config.draws),
        acceptance: 0.0,
        warmup_acceptance: f64::NAN,
        divergences: 0,
        energy_errors: Vec::new(),
        final_step: 1.0,
    };
    let mut warm_states: Vec<Vec<f64>> = Vec::new();
    let (mut late_warm_acc, mut late_warm_n) = (0usize, 0usize);
    let mut accepted = 0usize;
    let mut z = vec![0.0; d];
    let mut prop = vec![0.0; d];
    for it in 0..total {
        let mult = log_mult.exp();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            prop[i] = x[i] + mult * scales[i] * z[i];
        }
        let lp_new = target.log_density(&prop);
        let alpha = if lp_new.is_nan() {
            0.0
        } else {
            (lp_new - lp).exp().min(1.0)
        };
        let u: f64 = rng.random();
        let accept = u < alpha;
        if accept {
            x.copy_from_slice(&prop);
            lp = lp_new;
        }
        if it < config.warmup {
            if config.adapt {
                log_mult += adapt_rate(it) * (alpha - RWMH_TARGET_ACCEPT);
                if it >= config.warmup / 4 && it < config.warmup / 2 {
                    warm_states.push(x.clone());
                }
                if it + 1 == config.warmup / 2 {
                    if let Some(sd) = coordinate_sd(&warm_states) {
                        let base = 2.38 / (d as f64).sqrt();
                        for (s, v) in scales.iter_mut().zip(sd) {
                            if v > 0.0 {
                                *s = base * v;
                            }
                        }
                        log_mult = 0.0;
                    }
                    warm_states.clear();
                }
            }
            if it >= config.warmup / 2 {
                late_warm_n += 1;
                late_warm_acc += accept as usize;
            }
        } else {
            accepted += accept as usize;
            if (it - config.warmup) % config.thin == config.thin - 1 {
                out.draws.push(x.clone());
                out.log_posterior.push(lp);
            }
        }
    }
    if late_warm_n >= 20 {
        let rate = late_warm_acc as f64 / late_warm_n as f64;
        out.warmup_acceptance = rate;
        if rate < 0.01 {
            return Err(Error::Sampler(format!(
                "chain {chain}: warmup acceptance {rate:.4} < 0.01; reduce the proposal scale"
            )));
        }
    }
    out.acceptance = accepted as f64 / (config.draws * config.thin) as f64;
    out.final_step = log_mult.exp();
    Ok(out)
}

fn hmc_chain<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
    step_size: f64,
    leapfrog_steps: usize,
) -> Result<ChainSamples> {
    let mut rng = stream_rng(config.seed, chain as u64);
    let d = target.dim();
    let bounds: Vec<Option<(f64, f64)>> = (0..d).map(|i| target.bounds(i)).collect();
    let (x0, _) = starting_point(target, &mut rng)?;
    let mut x = x0;
    let (mut lp, mut grad) = target.grad_log_density(&x)?;
    // inverse mass (per-coordinate variance estimate)
    let mut minv: Vec<f64> = vec![1.0; d];
    let mut log_eps = step_size.ln();
    let total = config.warmup + config.draws * config.thin;
    let mut out = ChainSamples {
        draws: Vec::with_capacity(config.draws),
        log_posterior: Vec::with_capacity(config.draws),
        acceptance: 0.0,
        warmup_acceptance: f64::NAN,
        divergences: 0,
        energy_errors: Vec::new(),
        final_step: step_size,
    };
    let mut warm_states: Vec<Vec<f64>> = Vec::new();
    let mut accept_sum = 0.0;
    let (mut late_acc, mut late_n) = (0.0, 0usize);
    let mut p = vec![0.0; d];
    for it in 0..total {
        let eps = log_eps.exp();
        for (pi, mi) in p.iter_mut().zip(&minv) {
            *pi = rng.sample::<f64, _>(StandardNormal) / mi.sqrt();
        }
        let kinetic = |p: &[f64]| 0.5 * p.iter().zip(&minv).map(|(a, m)| m * a * a).sum::<f64>();
        let h0 = -lp + kinetic(&p);
        let mut q = x.clone();
        let mut g = grad.clone();
        let mut lq = lp;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        for l in 0..leapfrog_steps {
            for i in 0..d {
                q[i] += eps * minv[i] * p[i];
                if let Some(b) = bounds[i] {
                    reflect(&mut q[i], &mut p[i], b);
                }
            }
            let (v, gn) = target.grad_log_density(&q)?;
            lq = v;
            g = gn;
            if !lq.is_finite() {
                break;
            }
            let w = if l + 1 == leapfrog_steps { 0.5 } else { 1.0 };
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi += w * eps * gi;
            }
        }
        let h1 = -lq + kinetic(&p);
        let dh = h1 - h0;
        let divergent = !dh.is_finite() || dh.abs() > DIVERGENCE_THRESHOLD;
        let alpha = if divergent { 0.0 } else { (-dh).exp().min(1.0) };
        let u: f64 = rng.random();
        let accept = !divergent && u < alpha;
        if accept {
            x = q;
            lp = lq;
            grad = g;
        }
        if it < config.warmup {
            if config.adapt {
                log_eps += adapt_rate(it) * (alpha - HMC_TARGET_ACCEPT);
                if it >= config.warmup / 4 && it < config.warmup / 2 {
                    warm_states.push(x.clone());
                }
                if it + 1 == config.warmup / 2 {
                    if let Some(sd) = coordinate_sd(&warm_states) {
                        for (m, s) in minv.iter_mut().zip(sd) {
                            if s > 0.0 {
                                *m = s * s;
                            }
                        }
                        // restart the step search from the initial value
                        log_eps = step_size.ln();
                    }
                    warm_states.clear();
                }
            }
            if it >= config.warmup / 2 {
                late_acc += alpha;
                late_n += 1;
            }
        } else {
            if divergent {
                out.divergences += 1;
            } else {
                out.energy_errors.push(dh.abs());
            }
            accept_sum += alpha;
            if (it - config.warmup) % config.thin == config.thin - 1 {
                out.draws.push(x.clone());
                out.log_posterior.push(lp);
            }
        }
    }
    if late_n > 0 {
        out.warmup_acceptance = late_acc / late_n as f64;
    }
    out.acceptance = accept_sum / (config.draws * config.thin) as f64;
    out.final_step = log_eps.exp();
    Ok(out)
}

fn run<T: Target + ?Sized>(target: &T, config: &SamplerConfig) -> Result<SampleSet> {
    config.validate()?;
    let start = Instant::now();
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|m| match config.kernel {
            Kernel::Rwmh { scale } => mh_chain(target, config, m, scale),
            Kernel::Hmc {
                step_size,
                leapfrog_steps,
            } => hmc_chain(target, config, m, step_size, leapfrog_steps),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        coord_names: target.coord_names(),
        config: *config,
        chains,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config_hash: None,
    })
}

/// Random-walk Metropolis–Hastings. Requires an `Rwmh` kernel.
pub fn run_mh<T: Target + ?Sized>(target: &T, config: &SamplerConfig) -> Result<SampleSet> {
    if !matches!(config.kernel, Kernel::Rwmh { .. }) {
        return Err(Error::Config("run_mh needs an rwmh kernel".into()));
    }
    run(target, config)
}

/// Hamiltonian Monte Carlo with leapfrog integration. Bounded coordinates
/// reflect position and momentum at the boundary.
pub fn run_hmc<T: Target + ?Sized>(target: &T, config: &SamplerConfig) -> Result<SampleSet> {
    if !matches!(config.kernel, Kernel::Hmc { .. }) {
        return Err(Error::Config("run_hmc needs an hmc kernel".into()));
    }
    run(target, config)
}

/// Dispatches on the configured kernel.
pub fn sample<T: Target + ?Sized>(target: &T, config: &SamplerConfig) -> Result<SampleSet> {
    run(target, config)
}
