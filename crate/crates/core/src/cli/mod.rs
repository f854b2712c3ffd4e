//! The `trajmix` command line: ingestion, training, prediction, evaluation,
//! simulation studies and cluster-count selection.

pub mod artifact;
pub mod ingest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::select_num_clusters;
use crate::error::{Error, Result};
use crate::eval::{evaluate_methods, Method, Roster};
use crate::numerics::SampledCurve;
use crate::pipeline::{train, ClusterCount, PipelineConfig};
use crate::predict::{bootstrap_interval, BootstrapOptions, Mode, Prediction, Predictor, Span};
use crate::rng::derive_seed;
use crate::simulate::{run_study, SimulationConfig};
use artifact::ModelArtifact;

/// Process exit status per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const INGESTION: i32 = 3;
    pub const FIT: i32 = 4;
    pub const PREDICT: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "trajmix", version, about = "Functional mixture prediction of daily curves")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a CSV of daily readings and write the accepted days.
    Ingest { csv: PathBuf },
    /// Fit the mixture model and save it as model.json.
    Train {
        csv: PathBuf,
        /// Number of clusters or "auto".
        #[arg(long)]
        k: Option<ClusterCount>,
    },
    /// Predict the rest of the day for partially observed days.
    Predict {
        model: PathBuf,
        csv: PathBuf,
        /// Current time in hours.
        #[arg(long)]
        tau: f64,
        /// Observed window length in hours, or "full".
        #[arg(long, default_value = "full")]
        omega: Span,
        /// soft, hard, fpcp (soft), fpcp-hard.
        #[arg(long, default_value = "soft")]
        mode: Mode,
        /// Add bootstrap bands at this level.
        #[arg(long)]
        bands: Option<f64>,
    },
    /// Score the prediction methods on complete test days.
    Evaluate {
        model: PathBuf,
        csv: PathBuf,
        /// Comma-separated observed-window lengths (hours or "full").
        #[arg(long, value_delimiter = ',')]
        omega: Option<Vec<Span>>,
        /// Comma-separated horizons (hours or "full").
        #[arg(long, value_delimiter = ',')]
        kappa: Option<Vec<Span>>,
    },
    /// Run a replicated study on synthetic data.
    Simulate {
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Choose the number of clusters by bootstrap tests.
    SelectK { csv: PathBuf },
}

/// Configuration file for `simulate`: the generator and the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StudyConfig {
    pub simulation: SimulationConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Fit,
    Predict,
}

fn exit_code(stage: Stage, err: &Error) -> i32 {
    match err {
        Error::Config(_) => exit::CONFIG,
        Error::Ingestion(_) => exit::INGESTION,
        Error::Io(_) | Error::Artifact(_) | Error::Json(_) | Error::Csv(_) => exit::IO,
        _ => match stage {
            Stage::Fit => exit::FIT,
            Stage::Predict => exit::PREDICT,
        },
    }
}

struct Failure {
    code: i32,
    err: Error,
}

trait Staged<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, Failure>;
}

impl<T> Staged<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, Failure> {
        self.map_err(|err| Failure { code: exit_code(stage, &err), err })
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {}", f.err);
            f.code
        }
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into())).at(Stage::Fit);
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    std::fs::create_dir_all(&cli.global.out).map_err(Error::from).at(Stage::Fit)?;
    match &cli.command {
        Command::Ingest { csv } => cmd_ingest(cli, csv).at(Stage::Fit),
        Command::Train { csv, k } => cmd_train(cli, csv, *k).at(Stage::Fit),
        Command::Predict { model, csv, tau, omega, mode, bands } => {
            cmd_predict(cli, model, csv, *tau, *omega, *mode, *bands).at(Stage::Predict)
        }
        Command::Evaluate { model, csv, omega, kappa } => {
            cmd_evaluate(cli, model, csv, omega.as_deref(), kappa.as_deref()).at(Stage::Predict)
        }
        Command::Simulate { replicates } => cmd_simulate(cli, *replicates).at(Stage::Fit),
        Command::SelectK { csv } => cmd_select_k(cli, csv).at(Stage::Fit),
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = read_config(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_training(path: &Path) -> Result<Vec<SampledCurve>> {
    let data = ingest::read_curves(path)?;
    if data.curves.is_empty() {
        return Err(Error::Ingestion(format!("{} holds no complete days", path.display())));
    }
    Ok(data.curves)
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(out.join(name), text)?;
    Ok(())
}

fn cmd_ingest(cli: &Cli, csv: &Path) -> Result<()> {
    let data = ingest::read_curves(csv)?;
    let mut buf = Vec::new();
    ingest::write_curves(&data.curves, &mut buf)?;
    std::fs::write(cli.global.out.join("curves.csv"), buf)?;
    let points = data.curves.first().map_or(0, |c| c.len());
    println!("{} curves on a {points}-point grid; {} days rejected", data.curves.len(), data.rejected.len());
    for r in &data.rejected {
        println!("rejected {}: {} missing", r.day_id, r.missing);
    }
    Ok(())
}

fn cmd_train(cli: &Cli, csv: &Path, k: Option<ClusterCount>) -> Result<()> {
    let mut cfg = pipeline_config(cli)?;
    if let Some(k) = k {
        cfg.num_clusters = k;
    }
    let curves = load_training(csv)?;
    let outcome = train(&curves, &cfg, cfg.seed)?;
    let artifact = ModelArtifact::new(&curves, outcome, cfg.clone(), cfg.seed);
    artifact.save(&cli.global.out.join("model.json"))?;
    let k = artifact.mixture.num_clusters();
    let mut table = String::from("day_id,cluster");
    for c in 1..=k {
        let _ = write!(table, ",p{c}");
    }
    table.push('\n');
    for t in &artifact.training {
        let _ = write!(table, "{},{}", t.id, t.cluster + 1);
        for p in &t.posterior {
            let _ = write!(table, ",{p}");
        }
        table.push('\n');
    }
    write(&cli.global.out, "assignments.csv", &table)?;
    println!("trained {k} cluster(s) on {} curves", curves.len());
    Ok(())
}

/// `t,mixture,cluster1..K[,lower,upper]`.
pub fn prediction_csv(p: &Prediction) -> String {
    let mut out = String::from("t,mixture");
    for c in 1..=p.per_cluster_curves.len() {
        let _ = write!(out, ",cluster{c}");
    }
    if p.bands.is_some() {
        out.push_str(",lower,upper");
    }
    out.push('\n');
    for (i, t) in p.future_grid.points().iter().enumerate() {
        let _ = write!(out, "{t},{}", p.mixture_curve.values[i]);
        for c in &p.per_cluster_curves {
            let _ = write!(out, ",{}", c.values[i]);
        }
        if let Some(b) = &p.bands {
            let _ = write!(out, ",{},{}", b.lower[i], b.upper[i]);
        }
        out.push('\n');
    }
    out
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_predict(cli: &Cli, model: &Path, csv: &Path, tau: f64, omega: Span, mode: Mode, bands: Option<f64>) -> Result<()> {
    let artifact = ModelArtifact::load(model)?;
    let cfg = pipeline_config(cli).map(|c| if cli.global.config.is_some() { c } else { artifact.config.clone() })?;
    let seed = cli.global.seed.unwrap_or(artifact.metadata.seed);
    let mixture = &artifact.mixture;
    let predictor = Predictor::new(mixture, omega)?;
    let q = predictor.tau_position(tau)?;
    let tau = mixture.tau_grid.points()[q];
    let text = std::fs::read(csv).map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", csv.display())))?;
    let curves = ingest::parse_partial(text.as_slice(), mixture.grid(), tau)?;
    if curves.is_empty() {
        return Err(Error::Ingestion(format!("{} holds no readings", csv.display())));
    }
    let training = match bands {
        Some(_) => Some(artifact.training_curves()?),
        None => None,
    };
    let k = mixture.num_clusters();
    let mut trace = String::from("day_id,tau");
    for c in 1..=k {
        let _ = write!(trace, ",p{c}");
    }
    trace.push('\n');
    for (d, curve) in curves.iter().enumerate() {
        let observed = predictor.observed_values(q, curve)?;
        let mut pred = predictor.predict_observed(q, &observed, mode)?;
        if let (Some(level), Some((train_curves, labels))) = (bands, training.as_ref()) {
            let opts = BootstrapOptions { level, ..cfg.bootstrap.clone() };
            pred.bands = Some(bootstrap_interval(
                curve,
                mixture,
                train_curves,
                labels,
                tau,
                omega,
                mode,
                &opts,
                derive_seed(seed, &[d as u64]),
            )?);
        }
        write(&cli.global.out, &format!("prediction_{}.csv", file_stem(&curve.id)), &prediction_csv(&pred))?;
        // Posterior at every grid time up to τ that the window allows.
        for qq in 0..=q {
            let Ok(obs) = predictor.observed_values(qq, curve) else { continue };
            let post = predictor.posterior(qq, &obs)?;
            let _ = write!(trace, "{},{}", curve.id, mixture.tau_grid.points()[qq]);
            for p in post {
                let _ = write!(trace, ",{p}");
            }
            trace.push('\n');
        }
    }
    write(&cli.global.out, "posterior.csv", &trace)?;
    println!("predicted {} day(s) from τ = {tau}", curves.len());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, model: &Path, csv: &Path, omegas: Option<&[Span]>, kappas: Option<&[Span]>) -> Result<()> {
    let artifact = ModelArtifact::load(model)?;
    let cfg = if cli.global.config.is_some() { pipeline_config(cli)? } else { artifact.config.clone() };
    if cfg.evaluation.methods.contains(&Method::FmpOracle) {
        return Err(Error::Config("FMP_S* needs ground-truth labels, which a test CSV does not carry".into()));
    }
    let test = load_training(csv)?;
    let omegas = omegas.map(<[Span]>::to_vec).unwrap_or_else(|| artifact.mixture.windows.iter().map(|w| w.omega).collect());
    let kappas = kappas.map(<[Span]>::to_vec).unwrap_or_else(|| cfg.evaluation.kappas.clone());
    let roster = Roster { main: &artifact.mixture, pooled: artifact.pooled.as_ref(), oracle: None };
    let table = evaluate_methods(roster, &test, None, &cfg.evaluation.methods, &omegas, &kappas)?;
    write(&cli.global.out, "table.csv", &table.to_csv())?;
    write(&cli.global.out, "traces.csv", &table.traces_csv())?;
    if table.failures > 0 {
        log::warn!("{} curve-level predictions failed and were left out", table.failures);
    }
    print!("{}", table.to_csv());
    Ok(())
}

fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_simulate(cli: &Cli, replicates: Option<usize>) -> Result<()> {
    let mut cfg: StudyConfig = read_config(cli.global.config.as_deref())?;
    if let Some(r) = replicates {
        cfg.simulation.replicates = r;
    }
    if let Some(seed) = cli.global.seed {
        cfg.pipeline.seed = seed;
    }
    let seed = cfg.pipeline.seed;
    let report = run_study(&cfg.simulation, &cfg.pipeline, seed)?;
    let out = &cli.global.out;
    write(out, "table.csv", &report.summary.to_csv())?;
    write(out, "traces.csv", &report.summary.traces_csv())?;
    write(out, "replicates.csv", &report.replicates_csv())?;
    let config_json = serde_json::to_string(&cfg)?;
    let meta = serde_json::json!({
        "seed": seed,
        "config_sha256": config_hash(&config_json),
        "replicates_requested": report.requested,
        "replicates_succeeded": report.replicates.len(),
        "replicate_seeds": report.replicates.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "failures": report.failures,
        "mean_clustering_error": report.mean_clustering_error(),
        "config": cfg,
    });
    write(out, "metadata.json", &serde_json::to_string_pretty(&meta)?)?;
    print!("{}", report.summary.to_csv());
    Ok(())
}

fn cmd_select_k(cli: &Cli, csv: &Path) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let curves = load_training(csv)?;
    let mut opts = cfg.select_k.clone();
    opts.clustering = cfg.clustering.clone();
    let res = select_num_clusters(&curves, cfg.seed, &opts)?;
    let mut table = String::from("k,adjusted_level,cluster_a,cluster_b,mean_statistic,subspace_statistic,h01_p,h02_p,replicates,accepted,fit_error\n");
    for t in &res.tests {
        if t.pairs.is_empty() {
            let _ = writeln!(table, "{},{},,,,,,,,{},{}", t.k, t.adjusted_level, t.accepted, t.fit_error.as_deref().unwrap_or(""));
        }
        for p in &t.pairs {
            let _ = writeln!(
                table,
                "{},{},{},{},{},{},{},{},{},{},{}",
                t.k,
                t.adjusted_level,
                p.clusters.0,
                p.clusters.1,
                p.mean_statistic,
                p.subspace_statistic,
                p.h01_p,
                p.h02_p,
                p.replicates,
                t.accepted,
                t.fit_error.as_deref().unwrap_or("")
            );
        }
    }
    write(&cli.global.out, "select_k.csv", &table)?;
    println!("K = {}", res.k);
    Ok(())
}
