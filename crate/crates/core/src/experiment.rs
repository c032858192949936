//! Experiment configuration and the pipeline stages driven by the
//! command-line tool: data, path training, tunnel construction, sampling
//! and evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bezier::ControlPoints;
use crate::checkpoint::Checkpoint;
use crate::data::{
    generate_synthetic, load_csv, CsvSchema, Dataset, SplitData, SplitSpec, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::inference::{
    lifted_diagnostics, mean_ess, mean_rhat, posterior_predict, thetas_predict, Lifting,
    PosteriorTarget, PriorKind, PriorSpec, SampleSet, SamplerConfig,
};
use crate::metrics::{lppd, rmse};
use crate::mlp::{Activation, InitScheme, Mlp, MlpSpec, Task};
use crate::path::{init_control_points, path_nll_profile, train_path, TrainConfig, TrainOutcome};
use crate::polymer::PolymerConfig;
use crate::tunnel::{Tunnel, TunnelConfig, VolumeMode};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias_sorted: bool,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16, 16],
            activation: Activation::Relu,
            bias_sorted: true,
            init: InitScheme::UniformFanIn,
        }
    }
}

impl ModelConfig {
    /// Regression network for `n_features` inputs.
    pub fn spec(&self, n_features: usize) -> Result<MlpSpec> {
        let mut widths = vec![n_features];
        widths.extend(&self.hidden);
        widths.push(1);
        Ok(
            MlpSpec::new(widths, self.activation, Task::RegressionHomoscedastic)?
                .with_bias_sorting(self.bias_sorted),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// Relative to the output directory unless absolute.
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    pub split: SplitSpec,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// Curve degree `K`.
    pub degree: usize,
    pub train: TrainConfig,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 100_000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub prior: PriorKind,
    pub adjustment: VolumeMode,
    pub temperature: f64,
    /// Candidates for `evaluate --sweep`; the best validation LPPD wins.
    pub temperature_grid: Vec<f64>,
    pub sampler: SamplerConfig,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            prior: PriorKind::TunnelS { sigma: 1.0 },
            adjustment: VolumeMode::SpeedOnly,
            temperature: 1.0,
            temperature_grid: vec![1.0, 10.0, 100.0, 1000.0, 10000.0],
            sampler: SamplerConfig::default(),
        }
    }
}

impl SamplingConfig {
    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            kind: self.prior,
            adjustment: self.adjustment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    /// Overrides every per-stage seed when set.
    pub seed: Option<u64>,
    pub data: DataSource,
    pub model: ModelConfig,
    pub path: PathConfig,
    pub tunnel: TunnelConfig,
    pub sampling: SamplingConfig,
    pub polymer: PolymerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            name: "experiment".into(),
            seed: None,
            data: DataSource::default(),
            model: ModelConfig::default(),
            path: PathConfig::default(),
            tunnel: TunnelConfig::default(),
            sampling: SamplingConfig::default(),
            polymer: PolymerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Copy with the top-level seed pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = c.seed {
            match &mut c.data {
                DataSource::Synthetic(sc) => sc.seed = s,
                DataSource::Csv(cs) => {
                    if let SplitSpec::Fractions { seed, .. } = &mut cs.split {
                        *seed = s;
                    }
                }
            }
            c.path.train.seed = s;
            c.tunnel.seed = s;
            c.sampling.sampler.seed = s;
            c.polymer.seed = s;
        }
        c
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        match &self.data {
            DataSource::Synthetic(sc) => sc.validate()?,
            DataSource::Csv(cs) => {
                let p = resolve(base, &cs.path);
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "data file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        self.model.spec(1)?;
        self.path.train.validate()?;
        self.tunnel.validate()?;
        self.sampling.sampler.validate()?;
        if !(self.sampling.temperature > 0.0)
            || self.sampling.temperature_grid.iter().any(|t| !(*t > 0.0))
        {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        self.polymer.validate()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds or reads the dataset described by the config. `base` anchors
/// relative CSV paths.
pub fn load_dataset(cfg: &ExperimentConfig, base: &Path) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(sc) => {
            let ds = generate_synthetic(sc)?.dataset;
            Ok(if sc.standardize {
                ds.standardize(true)
            } else {
                ds
            })
        }
        DataSource::Csv(cs) => {
            let schema = CsvSchema {
                target: cs.target.clone(),
                features: cs.features.clone(),
            };
            load_csv(&resolve(base, &cs.path), &schema, &cs.split, cs.standardize)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPath {
    pub init: ControlPoints,
    pub checkpoint: Checkpoint,
    pub outcome: TrainOutcome,
}

/// Random initial curve plus training; the checkpoint holds the best
/// validation-scored control points.
pub fn train_stage(cfg: &ExperimentConfig, ds: &Dataset) -> Result<TrainedPath> {
    let spec = cfg.model.spec(ds.n_features())?;
    let net = Mlp::new(spec.clone())?;
    let tc = &cfg.path.train;
    let init = init_control_points(&spec, cfg.path.degree, tc.seed, cfg.model.init)?;
    let outcome = train_path(&net, &init, &ds.train, &ds.val, tc)?;
    let mut checkpoint = Checkpoint::new(spec, tc.seed, outcome.best.clone())?;
    checkpoint
        .metadata
        .insert("best_epoch".into(), outcome.best_epoch.into());
    checkpoint
        .metadata
        .insert("best_val_score".into(), outcome.best_score.into());
    if let Some(msg) = &outcome.aborted {
        checkpoint
            .metadata
            .insert("aborted".into(), msg.clone().into());
    }
    Ok(TrainedPath {
        init,
        checkpoint,
        outcome,
    })
}

pub fn lifting_for(prior: &PriorKind, tunnel: &Tunnel) -> Lifting {
    if prior.is_tunnel() {
        Lifting::Tunnel(tunnel.clone())
    } else {
        Lifting::volume_of(tunnel)
    }
}

/// Samples the tempered posterior on the training split.
pub fn sample_stage(
    net: &Mlp,
    lifting: &Lifting,
    train: &SplitData,
    prior: PriorSpec,
    temperature: f64,
    sampler: &SamplerConfig,
) -> Result<SampleSet> {
    let target = PosteriorTarget::new(net, Some(train), lifting, prior, temperature)?;
    let set = crate::inference::sample(&target, sampler)?;
    let fallbacks = target.boundary_fallbacks();
    if fallbacks > 0 {
        log::info!("t-gradient used one-sided differences {fallbacks} times");
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub prior: String,
    pub temperature: f64,
    pub draws: usize,
    pub lppd_test: f64,
    pub lppd_val: f64,
    /// Root mean squared error of the posterior-mean prediction, in
    /// original target units.
    pub rmse_test: f64,
    /// ESS and R-hat averaged over all network parameters.
    pub mean_ess: f64,
    pub mean_rhat: Option<f64>,
}

pub fn prior_name(p: &PriorKind) -> &'static str {
    match p {
        PriorKind::VolumeGauss { .. } => "volume",
        PriorKind::TunnelT { .. } => "tunnel-t",
        PriorKind::TunnelS { .. } => "tunnel-s",
    }
}

/// Predictive metrics and parameter-space diagnostics of sampler draws,
/// `chains[m][u]` being draw `u` of chain `m`.
pub fn evaluate_draws(
    net: &Mlp,
    lifting: &Lifting,
    chains: &[Vec<Vec<f64>>],
    ds: &Dataset,
    prior: &PriorKind,
    temperature: f64,
) -> Result<Evaluation> {
    let draws: Vec<Vec<f64>> = chains.iter().flatten().cloned().collect();
    let test = posterior_predict(net, lifting, &draws, &ds.test)?;
    let val = posterior_predict(net, lifting, &draws, &ds.val)?;
    let y_std = ds.stats.as_ref().map(|s| s.y_std);
    let (ess, rh) = lifted_diagnostics(lifting, chains)?;
    Ok(Evaluation {
        prior: prior_name(prior).into(),
        temperature,
        draws: draws.len(),
        lppd_test: lppd(&test.log_densities)?,
        lppd_val: lppd(&val.log_densities)?,
        rmse_test: rmse(&test.mean_prediction, &ds.test.y, y_std)?,
        mean_ess: mean_ess(&ess),
        mean_rhat: rh.as_deref().map(mean_rhat),
    })
}

pub fn evaluate_samples(
    net: &Mlp,
    lifting: &Lifting,
    set: &SampleSet,
    ds: &Dataset,
    prior: &PriorKind,
    temperature: f64,
) -> Result<Evaluation> {
    let chains: Vec<Vec<Vec<f64>>> = set.chains.iter().map(|c| c.draws.clone()).collect();
    evaluate_draws(net, lifting, &chains, ds, prior, temperature)
}

/// Samples at every temperature and returns all evaluations plus the index
/// of the one with the highest validation LPPD.
pub fn temperature_sweep(
    net: &Mlp,
    lifting: &Lifting,
    ds: &Dataset,
    prior: PriorSpec,
    temperatures: &[f64],
    sampler: &SamplerConfig,
) -> Result<(Vec<(Evaluation, SampleSet)>, usize)> {
    if temperatures.is_empty() {
        return Err(Error::Config("temperature grid is empty".into()));
    }
    let mut out = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let set = sample_stage(net, lifting, &ds.train, prior, t, sampler)?;
        let ev = evaluate_samples(net, lifting, &set, ds, &prior.kind, t)?;
        out.push((ev, set));
    }
    let best = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.lppd_val.total_cmp(&b.1 .0.lppd_val))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok((out, best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub t: f64,
    pub val_log_likelihood: f64,
    pub lppd_test: f64,
    pub rmse_test: f64,
}

/// The single curve point with the highest mean validation log-likelihood
/// over an evenly spaced grid of `grid_points` values of `t`.
pub fn best_point_on_path(
    net: &Mlp,
    points: &ControlPoints,
    ds: &Dataset,
    grid_points: usize,
) -> Result<PointEstimate> {
    if grid_points < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    let ts: Vec<f64> = (0..grid_points)
        .map(|i| i as f64 / (grid_points - 1) as f64)
        .collect();
    let nll = path_nll_profile(net, points, &ds.val, &ts)?;
    let (i, best) = nll
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let theta = points.evaluate(ts[i])?;
    let pred = thetas_predict(net, &[theta], &ds.test)?;
    let y_std = ds.stats.as_ref().map(|s| s.y_std);
    Ok(PointEstimate {
        t: ts[i],
        val_log_likelihood: -best,
        lppd_test: lppd(&pred.log_densities)?,
        rmse_test: rmse(&pred.mean_prediction, &ds.test.y, y_std)?,
    })
}
