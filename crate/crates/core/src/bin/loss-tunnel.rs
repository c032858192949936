use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use loss_tunnel::checkpoint::{sidecar_path, Checkpoint};
use loss_tunnel::data::{Dataset, Split};
use loss_tunnel::experiment::{
    best_point_on_path, evaluate_draws, lifting_for, load_dataset, prior_name, sample_stage,
    train_stage, ExperimentConfig, PointEstimate,
};
use loss_tunnel::inference::{
    mean_ess, mean_rhat, Kernel, PriorKind, PriorSpec, SampleSet, SamplerConfig,
};
use loss_tunnel::manifest::{hash_json, read_json, sha256_hex, verify_artifact, RunManifest};
use loss_tunnel::mlp::Mlp;
use loss_tunnel::polymer::{analytic_com, analytic_re2, fit_scaling, simulate, Quantity};
use loss_tunnel::tunnel::Tunnel;
use loss_tunnel::{Error, Result};

#[derive(Parser)]
#[command(
    name = "loss-tunnel",
    version,
    about = "Bezier loss paths, loss tunnels and tunnel-space posterior sampling"
)]
struct Cli {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory; every artifact path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute even when the outputs are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the dataset and write its splits.
    GenData,
    /// Train the Bézier control points.
    TrainPath(TrainArgs),
    /// Build the tunnel (basis and frame table) around the trained path.
    BuildTunnel,
    /// Sample the tempered posterior in tunnel or volume coordinates.
    Sample(SampleArgs),
    /// ESS and R-hat of every coordinate in a JSONL sample file.
    Diagnose(DiagnoseArgs),
    /// Predictive metrics and parameter diagnostics of a sample run.
    Evaluate(EvalArgs),
    /// Simulate the flat-landscape polymer model.
    SimulatePolymer(PolymerArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Store control points inline (base-64) instead of a sidecar file.
    #[arg(long)]
    portable: bool,
    /// Hold the first and last control point fixed.
    #[arg(long)]
    freeze_endpoints: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Curve degree K.
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Volume,
    TunnelT,
    TunnelS,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Hmc,
    Rwmh,
}

#[derive(Args, Clone)]
struct SampleArgs {
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    /// Prior scale (sigma of xi or phi).
    #[arg(long)]
    sigma: Option<f64>,
    /// Likelihood temperature T.
    #[arg(long = "temp")]
    temperature: Option<f64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Tunnel artifact to sample in (default tunnel/tunnel.json).
    #[arg(long)]
    tunnel: Option<PathBuf>,
    /// Name of the run directory under samples/ (default: the prior name).
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// JSONL sample file (one draw per line).
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Text,
    Json,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    /// Sample at every temperature of the configured grid and keep the one
    /// with the best validation LPPD.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    sampling: SampleArgs,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct PolymerArgs {
    /// Trace CSV (default polymer/trace.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
}

const DATA_DIR: &str = "data";
const PATH_DIR: &str = "path";
const TUNNEL_DIR: &str = "tunnel";
const DATASET_FILE: &str = "dataset.json";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const TUNNEL_FILE: &str = "tunnel.json";

/// A command's output directory and the manifest being assembled for it.
struct Stage {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Stage {
    /// `None` when a current manifest already covers this exact run.
    fn begin(
        out: &Path,
        sub: &str,
        command: &str,
        config: &impl Serialize,
        inputs: &[PathBuf],
        force: bool,
    ) -> Result<Option<Self>> {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = RunManifest::new(command, hash_json(config)?);
        for p in inputs {
            manifest.add_input(p)?;
        }
        if !force {
            if let Some(old) = RunManifest::load(&dir)? {
                if old.is_current(&manifest, &dir) {
                    eprintln!(
                        "{command}: {} is up to date (use --force to rerun)",
                        dir.display()
                    );
                    return Ok(None);
                }
            }
        }
        Ok(Some(Self {
            dir,
            manifest,
            started: Instant::now(),
        }))
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.manifest.write_output(&self.dir, rel, bytes)
    }

    fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        self.manifest.save(&self.dir)
    }
}

/// Checks an upstream artifact against its producer's manifest and returns
/// its path.
fn upstream(out: &Path, sub: &str, rel: &str) -> Result<PathBuf> {
    let dir = out.join(sub);
    let path = dir.join(rel);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} does not exist; run the producing command first",
            path.display()
        )));
    }
    verify_artifact(&dir, rel)?;
    Ok(path)
}

fn upstream_file(out: &Path, given: &Path) -> Result<PathBuf> {
    let path = if given.is_absolute() {
        given.to_path_buf()
    } else {
        out.join(given)
    };
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?
        .to_string_lossy()
        .into_owned();
    upstream(&dir, "", &name)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let cfg = cfg.resolved();
    cfg.validate(&cli.out)?;
    Ok(cfg)
}

fn load_inputs(out: &Path) -> Result<(Dataset, Checkpoint, PathBuf, PathBuf)> {
    let ds_path = upstream(out, DATA_DIR, DATASET_FILE)?;
    let ck_path = upstream(out, PATH_DIR, CHECKPOINT_FILE)?;
    let ds: Dataset = read_json(&ds_path)?;
    let ck = Checkpoint::load(&ck_path)?;
    Ok((ds, ck, ds_path, ck_path))
}

fn cmd_gen_data(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let inputs = match &cfg.data {
        loss_tunnel::experiment::DataSource::Csv(cs) => vec![if cs.path.is_absolute() {
            cs.path.clone()
        } else {
            cli.out.join(&cs.path)
        }],
        _ => vec![],
    };
    let Some(mut stage) = Stage::begin(
        &cli.out, DATA_DIR, "gen-data", &cfg.data, &inputs, cli.force,
    )?
    else {
        return Ok(());
    };
    let ds = load_dataset(cfg, &cli.out)?;
    stage.write_json(DATASET_FILE, &ds)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        stage.write(&format!("{}.csv", s.name()), ds.split_csv(s).as_bytes())?;
    }
    println!(
        "gen-data: {} train / {} val / {} test rows in {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        stage.dir.display()
    );
    stage.finish()
}

fn cmd_train(cli: &Cli, mut cfg: ExperimentConfig, args: &TrainArgs) -> Result<()> {
    if let Some(e) = args.epochs {
        cfg.path.train.epochs = e;
    }
    if let Some(k) = args.degree {
        cfg.path.degree = k;
    }
    cfg.path.train.freeze_endpoints |= args.freeze_endpoints;
    cfg.path.train.validate()?;
    let ds_path = upstream(&cli.out, DATA_DIR, DATASET_FILE)?;
    let run = json!({"model": cfg.model, "path": cfg.path, "portable": args.portable});
    let Some(mut stage) = Stage::begin(
        &cli.out,
        PATH_DIR,
        "train-path",
        &run,
        std::slice::from_ref(&ds_path),
        cli.force,
    )?
    else {
        return Ok(());
    };
    let ds: Dataset = read_json(&ds_path)?;
    let trained = train_stage(&cfg, &ds)?;
    let header_path = stage.dir.join(CHECKPOINT_FILE);
    let (header, side) = trained.checkpoint.encode(&header_path, args.portable)?;
    if let Some((p, bytes)) = side {
        let rel = p
            .file_name()
            .expect("sidecar name")
            .to_string_lossy()
            .into_owned();
        stage.write(&rel, &bytes)?;
    } else {
        // a stale sidecar from an earlier non-portable run would be misleading
        let _ = std::fs::remove_file(sidecar_path(&header_path));
    }
    stage.write(CHECKPOINT_FILE, header.as_bytes())?;
    stage.write("trace.csv", trained.outcome.trace.to_csv().as_bytes())?;
    let o = &trained.outcome;
    stage.write_json(
        "summary.json",
        &json!({
            "degree": cfg.path.degree,
            "epochs": cfg.path.train.epochs,
            "best_epoch": o.best_epoch,
            "best_val_score": o.best_score,
            "aborted": o.aborted,
        }),
    )?;
    println!(
        "train-path: best validation score {:.6} at epoch {} (K = {}, D = {})",
        o.best_score,
        o.best_epoch,
        cfg.path.degree,
        trained.checkpoint.points.dim()
    );
    stage.finish()?;
    match &o.aborted {
        Some(msg) => {
            eprintln!("train-path: {msg}; last finite checkpoint kept");
            Err(Error::NonFinite {
                what: "training loss",
                index: o.trace.rows.last().map_or(0, |r| r.epoch),
            })
        }
        None => Ok(()),
    }
}

fn cmd_build_tunnel(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let ck_path = upstream(&cli.out, PATH_DIR, CHECKPOINT_FILE)?;
    let Some(mut stage) = Stage::begin(
        &cli.out,
        TUNNEL_DIR,
        "build-tunnel",
        &cfg.tunnel,
        std::slice::from_ref(&ck_path),
        cli.force,
    )?
    else {
        return Ok(());
    };
    let ck = Checkpoint::load(&ck_path)?;
    let mut tunnel = Tunnel::build(&ck.points, &cfg.tunnel)?;
    let ck_bytes = std::fs::read(&ck_path).map_err(|e| Error::io(&ck_path, e))?;
    tunnel.set_source_hash(Some(sha256_hex(&ck_bytes)));
    stage.write_json(TUNNEL_FILE, &tunnel.to_artifact())?;
    if let Some(w) = &tunnel.basis().warning {
        eprintln!("build-tunnel: {w}");
    }
    println!(
        "build-tunnel: rank {} ({} normal directions), curve length {:.6}, {} reference frames",
        tunnel.rank(),
        tunnel.n_normals(),
        tunnel.length(),
        tunnel.table().frames.len()
    );
    stage.finish()
}

fn apply_sample_args(cfg: &mut ExperimentConfig, a: &SampleArgs) -> Result<()> {
    let s = &mut cfg.sampling;
    let sigma = a.sigma.unwrap_or(s.prior.sigma());
    s.prior = match a.prior {
        Some(PriorArg::Volume) => PriorKind::VolumeGauss { sigma },
        Some(PriorArg::TunnelT) => PriorKind::TunnelT { sigma },
        Some(PriorArg::TunnelS) => PriorKind::TunnelS { sigma },
        None => match s.prior {
            PriorKind::VolumeGauss { .. } => PriorKind::VolumeGauss { sigma },
            PriorKind::TunnelT { .. } => PriorKind::TunnelT { sigma },
            PriorKind::TunnelS { .. } => PriorKind::TunnelS { sigma },
        },
    };
    if let Some(t) = a.temperature {
        s.temperature = t;
    }
    let sc = &mut s.sampler;
    match a.kernel {
        Some(KernelArg::Hmc) if !matches!(sc.kernel, Kernel::Hmc { .. }) => {
            sc.kernel = match SamplerConfig::default().kernel {
                k @ Kernel::Hmc { .. } => k,
                _ => unreachable!(),
            }
        }
        Some(KernelArg::Rwmh) if !matches!(sc.kernel, Kernel::Rwmh { .. }) => {
            sc.kernel = Kernel::Rwmh { scale: 0.1 }
        }
        _ => {}
    }
    if let Some(v) = a.chains {
        sc.chains = v;
    }
    if let Some(v) = a.warmup {
        sc.warmup = v;
    }
    if let Some(v) = a.draws {
        sc.draws = v;
    }
    if let Some(v) = a.thin {
        sc.thin = v;
    }
    sc.validate()?;
    if !(s.temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RunInfo {
    prior: PriorSpec,
    temperature: f64,
    sampler: SamplerConfig,
    tunnel: String,
    tunnel_sha256: String,
}

fn tunnel_path(cli: &Cli, a: &SampleArgs) -> Result<PathBuf> {
    match &a.tunnel {
        Some(p) => upstream_file(&cli.out, p),
        None => upstream(&cli.out, TUNNEL_DIR, TUNNEL_FILE),
    }
}

fn cmd_sample(cli: &Cli, mut cfg: ExperimentConfig, a: &SampleArgs) -> Result<()> {
    apply_sample_args(&mut cfg, a)?;
    let tag = a
        .tag
        .clone()
        .unwrap_or_else(|| prior_name(&cfg.sampling.prior).to_string());
    let tpath = tunnel_path(cli, a)?;
    let (ds, ck, ds_path, ck_path) = load_inputs(&cli.out)?;
    let run_cfg = json!({"sampling": cfg.sampling});
    let Some(mut stage) = Stage::begin(
        &cli.out,
        &format!("samples/{tag}"),
        "sample",
        &run_cfg,
        &[ds_path, ck_path, tpath.clone()],
        cli.force,
    )?
    else {
        return Ok(());
    };
    let tunnel = Tunnel::load(&tpath)?;
    let net = Mlp::new(ck.spec.clone())?;
    let lifting = lifting_for(&cfg.sampling.prior, &tunnel);
    let prior = cfg.sampling.prior_spec();
    let mut set = sample_stage(
        &net,
        &lifting,
        &ds.train,
        prior,
        cfg.sampling.temperature,
        &cfg.sampling.sampler,
    )?;
    set.config_hash = Some(stage.manifest.config_hash.clone());
    stage.write("draws.jsonl", set.to_jsonl().as_bytes())?;
    let summary = set.summary()?;
    stage.write_json("summary.json", &summary)?;
    stage.write_json(
        "run.json",
        &RunInfo {
            prior,
            temperature: cfg.sampling.temperature,
            sampler: cfg.sampling.sampler,
            tunnel: tpath.display().to_string(),
            tunnel_sha256: loss_tunnel::manifest::sha256_file(&tpath)?,
        },
    )?;
    println!(
        "sample [{tag}]: {} chains x {} draws, acceptance {:.3}, mean ESS {:.1}, mean R-hat {}, {} divergences",
        set.chains.len(),
        set.config.draws,
        summary.mean_acceptance,
        summary.mean_ess,
        summary.mean_rhat.map_or("n/a".into(), |r| format!("{r:.4}")),
        summary.divergences
    );
    stage.finish()
}

fn cmd_diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<()> {
    let path = if a.samples.is_absolute() {
        a.samples.clone()
    } else {
        cli.out.join(&a.samples)
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let stem = path
        .file_stem()
        .map_or("samples".into(), |s| s.to_string_lossy().into_owned());
    let Some(mut stage) = Stage::begin(
        &cli.out,
        &format!("diagnose/{stem}"),
        "diagnose",
        &json!({}),
        std::slice::from_ref(&path),
        cli.force,
    )?
    else {
        let d: serde_json::Value =
            read_json(&cli.out.join(format!("diagnose/{stem}/diagnostics.json")))?;
        println!("{}", serde_json::to_string_pretty(&d)?);
        return Ok(());
    };
    let chains = SampleSet::draws_from_jsonl(&text)?;
    if chains.is_empty() || chains[0].is_empty() {
        return Err(Error::Data {
            line: 1,
            message: "sample file holds no draws".into(),
        });
    }
    let dim = chains[0][0].len();
    let series: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| (0..dim).map(|d| c.iter().map(|x| x[d]).collect()).collect())
        .collect();
    let equal = chains.iter().all(|c| c.len() == chains[0].len());
    let (ess, rhat) = if equal {
        loss_tunnel::inference::series_diagnostics(&series)?
    } else {
        let (e, _) = loss_tunnel::inference::series_diagnostics(&series[..1])?;
        (e, None)
    };
    let report = json!({
        "file": path.display().to_string(),
        "chains": chains.len(),
        "draws": chains.iter().map(Vec::len).sum::<usize>(),
        "dim": dim,
        "ess": ess,
        "rhat": rhat,
        "mean_ess": mean_ess(&ess),
        "mean_rhat": rhat.as_deref().map(mean_rhat),
    });
    stage.write_json("diagnostics.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    stage.finish()
}

#[derive(Serialize, Deserialize)]
struct Metrics {
    name: String,
    evaluations: Vec<loss_tunnel::experiment::Evaluation>,
    selected: usize,
    point_estimate: PointEstimate,
}

fn print_table(m: &Metrics) {
    println!(
        "{:<10} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10}",
        "prior", "T", "LPPD test", "LPPD val", "RMSE", "ESS avg", "R-hat avg"
    );
    for (i, e) in m.evaluations.iter().enumerate() {
        println!(
            "{:<10} {:>10} {:>12.4} {:>12.4} {:>10.4} {:>10.1} {:>10}{}",
            e.prior,
            e.temperature,
            e.lppd_test,
            e.lppd_val,
            e.rmse_test,
            e.mean_ess,
            e.mean_rhat.map_or("n/a".into(), |r| format!("{r:.4}")),
            if i == m.selected && m.evaluations.len() > 1 {
                "  *"
            } else {
                ""
            }
        );
    }
    let p = &m.point_estimate;
    println!(
        "{:<10} {:>10} {:>12.4} {:>12} {:>10.4}   (best t = {:.3})",
        "point", "-", p.lppd_test, "-", p.rmse_test, p.t
    );
}

fn cmd_evaluate(cli: &Cli, mut cfg: ExperimentConfig, a: &EvalArgs) -> Result<()> {
    apply_sample_args(&mut cfg, &a.sampling)?;
    let tag = a
        .sampling
        .tag
        .clone()
        .unwrap_or_else(|| prior_name(&cfg.sampling.prior).to_string());
    let (ds, ck, ds_path, ck_path) = load_inputs(&cli.out)?;
    let name = if a.sweep {
        format!("{tag}-sweep")
    } else {
        tag.clone()
    };
    let grid = cfg.path.train.early_stop.grid_points;
    let (metrics, stage) = if a.sweep {
        let tpath = tunnel_path(cli, &a.sampling)?;
        let run_cfg = json!({"sampling": cfg.sampling, "grid": grid});
        let Some(stage) = Stage::begin(
            &cli.out,
            &format!("eval/{name}"),
            "evaluate",
            &run_cfg,
            &[ds_path, ck_path, tpath.clone()],
            cli.force,
        )?
        else {
            return show_existing(cli, &name, a.format);
        };
        let tunnel = Tunnel::load(&tpath)?;
        let net = Mlp::new(ck.spec.clone())?;
        let lifting = lifting_for(&cfg.sampling.prior, &tunnel);
        let (evs, best) = loss_tunnel::experiment::temperature_sweep(
            &net,
            &lifting,
            &ds,
            cfg.sampling.prior_spec(),
            &cfg.sampling.temperature_grid,
            &cfg.sampling.sampler,
        )?;
        let metrics = Metrics {
            name: name.clone(),
            evaluations: evs.into_iter().map(|(e, _)| e).collect(),
            selected: best,
            point_estimate: best_point_on_path(&net, &ck.points, &ds, grid)?,
        };
        (metrics, stage)
    } else {
        let sdir = format!("samples/{tag}");
        let draws_path = upstream(&cli.out, &sdir, "draws.jsonl")?;
        let run_path = upstream(&cli.out, &sdir, "run.json")?;
        let run: RunInfo = read_json(&run_path)?;
        let tpath = PathBuf::from(&run.tunnel);
        let Some(stage) = Stage::begin(
            &cli.out,
            &format!("eval/{name}"),
            "evaluate",
            &json!({"grid": grid}),
            &[ds_path, ck_path, draws_path.clone(), run_path],
            cli.force,
        )?
        else {
            return show_existing(cli, &name, a.format);
        };
        let actual = loss_tunnel::manifest::sha256_file(&tpath)?;
        if actual != run.tunnel_sha256 {
            return Err(Error::StaleArtifact {
                path: tpath,
                expected: run.tunnel_sha256,
                actual,
            });
        }
        let tunnel = Tunnel::load(&tpath)?;
        let net = Mlp::new(ck.spec.clone())?;
        let lifting = lifting_for(&run.prior.kind, &tunnel);
        let text = std::fs::read_to_string(&draws_path).map_err(|e| Error::io(&draws_path, e))?;
        let chains = SampleSet::draws_from_jsonl(&text)?;
        let ev = evaluate_draws(
            &net,
            &lifting,
            &chains,
            &ds,
            &run.prior.kind,
            run.temperature,
        )?;
        let metrics = Metrics {
            name: name.clone(),
            evaluations: vec![ev],
            selected: 0,
            point_estimate: best_point_on_path(&net, &ck.points, &ds, grid)?,
        };
        (metrics, stage)
    };
    let mut stage = stage;
    stage.write_json("metrics.json", &metrics)?;
    report(&metrics, a.format)?;
    stage.finish()
}

fn report(m: &Metrics, format: Format) -> Result<()> {
    if format != Format::Json {
        print_table(m);
    }
    if format != Format::Text {
        println!("{}", serde_json::to_string_pretty(m)?);
    }
    Ok(())
}

fn show_existing(cli: &Cli, name: &str, format: Format) -> Result<()> {
    let m: Metrics = read_json(&cli.out.join(format!("eval/{name}/metrics.json")))?;
    report(&m, format)
}

fn cmd_polymer(cli: &Cli, cfg: &ExperimentConfig, a: &PolymerArgs) -> Result<()> {
    let pc = &cfg.polymer;
    let rel = a
        .trace
        .clone()
        .unwrap_or_else(|| PathBuf::from("polymer/trace.csv"));
    let full = cli.out.join(&rel);
    let dir = full
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.clone());
    let file = full
        .file_name()
        .ok_or_else(|| Error::Config("--trace must name a file".into()))?;
    let sub = dir
        .strip_prefix(&cli.out)
        .map(Path::to_path_buf)
        .unwrap_or(dir.clone());
    let Some(mut stage) = Stage::begin(
        &cli.out,
        &sub.to_string_lossy(),
        "simulate-polymer",
        pc,
        &[],
        cli.force,
    )?
    else {
        return Ok(());
    };
    let trace = simulate(pc)?;
    stage.write(&file.to_string_lossy(), trace.to_csv().as_bytes())?;
    let mut fits = serde_json::Map::new();
    let quantities = [
        ("com", Quantity::Com),
        ("re", Quantity::Re),
        ("rg", Quantity::Rg),
        ("lambda_k", Quantity::LambdaK),
        ("s", Quantity::ArcLength),
    ];
    for (name, q) in quantities {
        if q == Quantity::ArcLength && !pc.track_arc_length {
            continue;
        }
        match fit_scaling(&trace, q, None) {
            Ok(f) => {
                fits.insert(name.into(), serde_json::to_value(f)?);
            }
            Err(e) => eprintln!("simulate-polymer: no {name} fit: {e}"),
        }
    }
    let n = pc.steps as f64;
    let last = trace.rows.last().expect("trace has rows");
    let analytic = json!({
        "com": analytic_com(n, pc.eta, pc.sigma, pc.d as f64, pc.k),
        "re_squared": analytic_re2(n, pc.eta, pc.sigma, pc.d as f64, pc.k)?,
    });
    let summary = json!({
        "fits_last_decade": fits,
        "final_step": last.step,
        "final_mean": last.mean,
        "analytic_at_final_step": analytic,
    });
    stage.write_json("fits.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    stage.finish()
}

fn run(cli: &Cli) -> Result<()> {
    if let Ok(v) = std::env::var("LOSS_TUNNEL_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "LOSS_TUNNEL_THREADS must be a positive integer, got '{v}'"
            ))
        })?;
        if n == 0 {
            return Err(Error::Config("LOSS_TUNNEL_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Diagnose(a) => cmd_diagnose(cli, a),
        cmd => {
            let cfg = load_config(cli)?;
            match cmd {
                Command::GenData => cmd_gen_data(cli, &cfg),
                Command::TrainPath(a) => cmd_train(cli, cfg, a),
                Command::BuildTunnel => cmd_build_tunnel(cli, &cfg),
                Command::Sample(a) => cmd_sample(cli, cfg, a),
                Command::Evaluate(a) => cmd_evaluate(cli, cfg, a),
                Command::SimulatePolymer(a) => cmd_polymer(cli, &cfg, a),
                Command::Diagnose(_) => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
