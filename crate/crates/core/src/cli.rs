//! Command-line front end. Flags and an optional TOML config file resolve
//! into one [`RunConfig`] with every value filled in; that resolved config is
//! written to `manifest.toml` next to the artifacts and can be fed back with
//! `--config` to repeat the run.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_threshold, decide_at, CalibrationThreshold, CandidateSummary, Decision, LeafEncoding, Target,
    ThresholdSource,
};
use crate::data::{load_csv, save_csv, Dataset, Schema};
use crate::discovery::{extract_leaf_profiles, SubtypeTreeParams, TsneParams};
use crate::error::{Error, Result};
use crate::experiments::plot::ecdf_svg;
use crate::experiments::report::{write_ecdf_csv, write_summary_csv};
use crate::experiments::surface::write_surface_csv;
use crate::experiments::{
    effect_surface_grid, read_records_csv, run_replications, scenario_discovery, write_records_csv, GridSpec,
    MediationParams, ReplicationPlan, ReplicationRecord,
};
use crate::learners::{BoostParams, CartParams, ForestParams, LearnerSpec};
use crate::linalg::Matrix;
use crate::pipeline::{run_pipeline, DiscoveryParams};
use crate::rng::{self, streams};
use crate::simulation::{generate, true_effect_surface, ScenarioConfig, ScenarioId};

pub const SEED_ENV: &str = "MEDLEARN_SEED";
pub const MANIFEST: &str = "manifest.toml";

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  configuration or usage error (bad flag, bad config file, missing data source)
  3  file-system error (missing input, unwritable output)
  4  schema or ingestion error in an input CSV
  5  validation error (degenerate arm, empty or mis-shaped input, too few replications)
  6  mode error (mediator target without a mediator column)
  7  numeric error (non-finite values)

Errors are written to stderr as one JSON object with fields kind, message and exit_code.
The seed falls back to the MEDLEARN_SEED environment variable, then to 0.";

#[derive(Debug, Parser)]
#[command(name = "medlearn", version, about = "Subgroup discovery for total and indirect treatment effects", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated trial with its ground truth.
    Simulate(Flags),
    /// Run the discovery pipeline once on a dataset.
    Fit(Flags),
    /// Derive an acceptance threshold from null-scenario replications.
    Calibrate(Flags),
    /// Monte-Carlo replications of a scenario.
    Replicate(Flags),
    /// Summaries and ECDF plots from replication records.
    Report(Flags),
    /// Average estimated effect over a two-covariate grid.
    Surface(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Calibrate(_) => "calibrate",
            Command::Replicate(_) => "replicate",
            Command::Report(_) => "report",
            Command::Surface(_) => "surface",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Simulate(f)
            | Command::Fit(f)
            | Command::Calibrate(f)
            | Command::Replicate(f)
            | Command::Report(f)
            | Command::Surface(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerName {
    Cart,
    Rf,
    Gb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Outcome,
    Mediator,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Outcome => Target::Outcome,
            TargetArg::Mediator => Target::Mediator,
        }
    }
}

/// Flags shared by every command. Each overrides the config file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file (a previous manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Simulated scenario, e.g. simple, null, simple-all.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML schema mapping CSV columns to roles.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerName>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Nominal level; also the calibration quantile.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Calibrated threshold applied to decisions.
    #[arg(long)]
    pub threshold_file: Option<PathBuf>,
    /// Simulated sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Simulated covariate count.
    #[arg(long)]
    pub d: Option<usize>,
    /// Simulated noise variance.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Random-forest trees.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Boosting rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Embedding dimension (2 or 3).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Embedding iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Bootstrap resamples for mediation p-values.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Cluster the raw covariates instead of the embedded effects.
    #[arg(long)]
    pub baseline: bool,
    /// Replication records to summarise (repeatable).
    #[arg(long)]
    pub input: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<LearnerName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_split: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoverySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans_restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<LeafEncoding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tsne: Option<TsneParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<SubtypeTreeParams>,
}

/// File form of a run. After [`resolve`] every field the command uses is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub learner: LearnerSection,
    pub discovery: DiscoverySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mediation: Option<MediationParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface: Option<GridSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    fn scenario(&self) -> Option<ScenarioConfig> {
        let d = &self.data;
        d.scenario.map(|id| {
            let mut cfg = ScenarioConfig::new(id);
            cfg.n = d.n.unwrap_or(cfg.n);
            cfg.d = d.d.unwrap_or(cfg.d);
            cfg.noise_variance = d.noise.unwrap_or(cfg.noise_variance);
            cfg.b = d.b;
            cfg.b1 = d.b1;
            cfg.b2 = d.b2;
            cfg.c = d.c;
            cfg
        })
    }

    fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    fn out(&self) -> PathBuf {
        self.run.out.clone().unwrap_or_else(|| PathBuf::from("medlearn-out"))
    }

    fn learner(&self) -> LearnerSpec {
        let l = &self.learner;
        match l.kind.unwrap_or(LearnerName::Rf) {
            LearnerName::Cart => {
                let d = CartParams::default();
                LearnerSpec::cart(CartParams {
                    max_depth: l.max_depth.unwrap_or(d.max_depth),
                    min_split: l.min_split.unwrap_or(d.min_split),
                    min_leaf: l.min_leaf.unwrap_or(d.min_leaf),
                })
            }
            LearnerName::Rf => {
                let d = ForestParams::default();
                LearnerSpec::random_forest(
                    ForestParams {
                        n_trees: l.trees.unwrap_or(d.n_trees),
                        mtry: l.mtry.or(d.mtry),
                        min_leaf: l.min_leaf.unwrap_or(d.min_leaf),
                        bootstrap: d.bootstrap,
                    },
                    0,
                )
            }
            LearnerName::Gb => {
                let d = BoostParams::default();
                LearnerSpec::gradient_boost(
                    BoostParams {
                        n_rounds: l.rounds.unwrap_or(d.n_rounds),
                        learning_rate: l.learning_rate.unwrap_or(d.learning_rate),
                        max_depth: l.max_depth.unwrap_or(d.max_depth),
                        min_child: l.min_leaf.unwrap_or(d.min_child),
                    },
                    0,
                )
            }
        }
    }

    fn discovery(&self) -> DiscoveryParams {
        let s = &self.discovery;
        let mut p = DiscoveryParams {
            tsne: s.tsne.unwrap_or_default(),
            tree: s.tree.unwrap_or_default(),
            k_range: s.k_min.zip(s.k_max),
            target: s.target.unwrap_or(Target::Outcome),
            encoding: s.encoding.unwrap_or_default(),
            ..DiscoveryParams::default()
        };
        if let Some(r) = s.kmeans_restarts {
            p.kmeans_restarts = r;
        }
        p
    }

    fn threshold(&self) -> Result<(f64, ThresholdSource)> {
        match &self.run.threshold_file {
            Some(path) => Ok((CalibrationThreshold::load(path)?.threshold, ThresholdSource::Calibrated)),
            None => Ok((self.run.alpha.unwrap_or(0.10), ThresholdSource::Nominal)),
        }
    }
}

fn apply_flags(cfg: &mut RunConfig, f: &Flags) -> Result<()> {
    fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    if let Some(s) = &f.scenario {
        cfg.data.scenario = Some(s.parse()?);
    }
    set(&mut cfg.data.path, &f.data);
    set(&mut cfg.data.schema, &f.schema);
    set(&mut cfg.data.n, &f.n);
    set(&mut cfg.data.d, &f.d);
    set(&mut cfg.data.noise, &f.noise);
    set(&mut cfg.learner.kind, &f.learner);
    set(&mut cfg.learner.trees, &f.trees);
    set(&mut cfg.learner.rounds, &f.rounds);
    set(&mut cfg.discovery.target, &f.target.map(Target::from));
    set(&mut cfg.discovery.k_min, &f.k_min);
    set(&mut cfg.discovery.k_max, &f.k_max);
    if f.dim.is_some() || f.iterations.is_some() {
        let mut t = cfg.discovery.tsne.unwrap_or_default();
        t.dim = f.dim.unwrap_or(t.dim);
        t.iterations = f.iterations.unwrap_or(t.iterations);
        cfg.discovery.tsne = Some(t);
    }
    if let Some(b) = f.bootstrap {
        let mut m = cfg.mediation.unwrap_or_default();
        m.bootstrap = b;
        cfg.mediation = Some(m);
    }
    set(&mut cfg.run.alpha, &f.alpha);
    set(&mut cfg.run.seed, &f.seed);
    set(&mut cfg.run.reps, &f.reps);
    set(&mut cfg.run.out, &f.out);
    set(&mut cfg.run.threshold_file, &f.threshold_file);
    if f.baseline {
        cfg.run.baseline = Some(true);
    }
    if !f.input.is_empty() {
        cfg.run.inputs = f.input.clone();
    }
    Ok(())
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Merges config file, flags and the seed fallback, then fills every
/// default the command relies on so the result is self-describing.
pub fn resolve(command: &Command) -> Result<RunConfig> {
    let flags = command.flags();
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, flags)?;
    cfg.run.command = Some(command.name().into());
    if cfg.run.seed.is_none() {
        cfg.run.seed = Some(env_seed()?.unwrap_or(0));
    }
    cfg.run.out = Some(cfg.out());

    let name = command.name();
    let has_scenario = cfg.data.scenario.is_some();
    let has_path = cfg.data.path.is_some();
    match name {
        "report" => {
            if cfg.run.inputs.is_empty() {
                return Err(Error::Config("report needs at least one --input records file".into()));
            }
            return Ok(cfg);
        }
        "fit" => {
            if has_scenario == has_path {
                return Err(Error::Config(
                    "fit needs exactly one data source: --scenario or --data".into(),
                ));
            }
            if has_path && cfg.data.schema.is_none() {
                return Err(Error::Config("--data needs a --schema file".into()));
            }
        }
        _ => {
            if !has_scenario || has_path {
                return Err(Error::Config(format!("{name} needs --scenario and no --data")));
            }
        }
    }

    if let Some(sc) = cfg.scenario() {
        sc.validate()?;
        cfg.data.n = Some(sc.n);
        cfg.data.d = Some(sc.d);
        cfg.data.noise = Some(sc.noise_variance);
    }
    if name == "simulate" {
        return Ok(cfg);
    }

    // Scenario runs default to the simulation-study discovery settings.
    if let Some(id) = cfg.data.scenario {
        let base = scenario_discovery(id);
        let s = &mut cfg.discovery;
        s.target.get_or_insert(base.target);
        if s.k_min.is_none() && s.k_max.is_none() {
            if let Some((lo, hi)) = base.k_range {
                s.k_min = Some(lo);
                s.k_max = Some(hi);
            }
        }
    }
    let learner = cfg.learner.kind.unwrap_or(LearnerName::Rf);
    resolve_learner(&mut cfg.learner, learner);
    if name == "surface" {
        cfg.discovery.target.get_or_insert(Target::Outcome);
        cfg.surface.get_or_insert_with(GridSpec::default);
        cfg.run.reps.get_or_insert(10);
        return Ok(cfg);
    }

    let s = &mut cfg.discovery;
    s.target.get_or_insert(Target::Outcome);
    s.encoding.get_or_insert(LeafEncoding::Categorical);
    s.kmeans_restarts.get_or_insert(DiscoveryParams::default().kmeans_restarts);
    s.tsne.get_or_insert_with(TsneParams::default);
    s.tree.get_or_insert_with(SubtypeTreeParams::default);
    match (s.k_min, s.k_max) {
        (Some(_), Some(_)) => {}
        (None, None) if name == "fit" && cfg.data.path.is_some() => {}
        _ => {
            return Err(Error::Config("give both --k-min and --k-max, or neither".into()));
        }
    }
    cfg.run.alpha.get_or_insert(0.10);
    if name != "fit" {
        cfg.run.reps.get_or_insert(100);
        cfg.run.baseline.get_or_insert(false);
        cfg.mediation.get_or_insert_with(MediationParams::default);
    }
    Ok(cfg)
}

fn resolve_learner(l: &mut LearnerSection, kind: LearnerName) {
    l.kind = Some(kind);
    match kind {
        LearnerName::Cart => {
            let d = CartParams::default();
            l.max_depth.get_or_insert(d.max_depth);
            l.min_split.get_or_insert(d.min_split);
            l.min_leaf.get_or_insert(d.min_leaf);
        }
        LearnerName::Rf => {
            let d = ForestParams::default();
            l.trees.get_or_insert(d.n_trees);
            l.min_leaf.get_or_insert(d.min_leaf);
        }
        LearnerName::Gb => {
            let d = BoostParams::default();
            l.rounds.get_or_insert(d.n_rounds);
            l.learning_rate.get_or_insert(d.learning_rate);
            l.max_depth.get_or_insert(d.max_depth);
            l.min_leaf.get_or_insert(d.min_child);
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `args` and runs the command. Returns the process exit code and
/// reports failures on stderr as a JSON record.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", error_record("usage", &e.render().to_string(), 2));
            return 2;
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.display());
            0
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_record(e.kind(), &e.to_string(), code));
            code
        }
    }
}

fn error_record(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "kind": kind, "message": message.trim_end(), "exit_code": code }).to_string()
}

/// Runs a parsed command and returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve(&cli.command)?;
    let jobs = cli.command.flags().jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let out = cfg.out();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    pool.install(|| match &cli.command {
        Command::Simulate(_) => simulate(&cfg, &out),
        Command::Fit(_) => fit(&cfg, &out),
        Command::Calibrate(_) => calibrate(&cfg, &out),
        Command::Replicate(_) => replicate(&cfg, &out),
        Command::Report(_) => report(&cfg, &out),
        Command::Surface(_) => surface(&cfg, &out),
    })?;
    write_text(&out.join(MANIFEST), &cfg.to_toml()?)?;
    Ok(out)
}

fn scenario_of(cfg: &RunConfig) -> Result<ScenarioConfig> {
    cfg.scenario()
        .ok_or_else(|| Error::Config("a --scenario is required".into()))
}

fn simulated(cfg: &RunConfig) -> Result<(Dataset, crate::simulation::GroundTruth)> {
    let sc = scenario_of(cfg)?.with_seed(rng::derive(cfg.seed(), streams::DATA));
    generate(&sc)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ds, truth) = simulated(cfg)?;
    save_csv(&ds, &out.join("data.csv"))?;
    truth.save_csv(&out.join("truth.csv"))?;
    let schema = toml::to_string(&ds.schema()).map_err(|e| Error::Config(format!("cannot serialise schema: {e}")))?;
    write_text(&out.join("schema.toml"), &schema)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    learner: &'a str,
    learner_fingerprint: &'a str,
    target: Target,
    decision: Decision,
    threshold: f64,
    threshold_source: ThresholdSource,
    p_leaf: f64,
    statistic: f64,
    df: usize,
    rank_deficient: bool,
    chosen_k: usize,
    n_leaves: usize,
    covariates: Vec<String>,
    candidates: &'a [CandidateSummary],
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = match &cfg.data.path {
        Some(path) => {
            let schema = Schema::from_toml_file(cfg.data.schema.as_deref().expect("resolved"))?;
            load_csv(path, &schema)?
        }
        None => simulated(cfg)?.0,
    };
    let params = cfg.discovery();
    let (threshold, source) = cfg.threshold()?;
    let learner = cfg.learner();
    let run = run_pipeline(&ds, &learner, &params, rng::derive(cfg.seed(), streams::PIPELINE))?;
    let selection = decide_at(run.selection, threshold, source);

    run.effects.save_csv(&out.join("effects.csv"))?;

    let mut w = csv::Writer::from_writer(create(&out.join("embedding.csv"))?);
    let coords = run.embedding.coords();
    let mut header = vec!["unit_index".to_string()];
    header.extend((1..=coords.cols()).map(|c| format!("coord{c}")));
    header.extend(run.clusterings.iter().map(|c| format!("label_k{}", c.k())));
    header.push("subtype".into());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row = vec![i.to_string()];
        row.extend(coords.row(i).iter().map(f64::to_string));
        row.extend(run.clusterings.iter().map(|c| c.labels()[i].to_string()));
        row.push(selection.assignment[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(out.join("embedding.csv"), e))?;

    let summary = FitSummary {
        learner: learner.short_name(),
        learner_fingerprint: run.effects.learner_fingerprint(),
        target: params.target,
        decision: selection.decision,
        threshold,
        threshold_source: source,
        p_leaf: selection.p_leaf(),
        statistic: selection.lrt.statistic,
        df: selection.lrt.df,
        rank_deficient: selection.lrt.rank_deficient,
        chosen_k: selection.tree.k_source(),
        n_leaves: selection.tree.n_leaves(),
        covariates: selection.reported_covariates(),
        candidates: &selection.candidates,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(format!("cannot serialise selection: {e}")))?;
    write_text(&out.join("selection.toml"), &text)?;

    let profiles = extract_leaf_profiles(&selection.tree);
    let mut txt = String::new();
    for p in &profiles {
        txt.push_str(&p.to_string());
        txt.push('\n');
    }
    write_text(&out.join("profiles.txt"), &txt)?;
    let json = serde_json::to_string_pretty(&profiles)
        .map_err(|e| Error::Config(format!("cannot serialise profiles: {e}")))?;
    write_text(&out.join("profiles.json"), &(json + "\n"))
}

fn plan_of(cfg: &RunConfig) -> Result<ReplicationPlan> {
    let mut plan = ReplicationPlan::new(
        scenario_of(cfg)?,
        cfg.run.reps.unwrap_or(100),
        cfg.seed(),
        cfg.learner(),
    );
    plan.discovery = cfg.discovery();
    plan.mediation = cfg.mediation.unwrap_or_default();
    plan.baseline = cfg.run.baseline.unwrap_or(false);
    Ok(plan)
}

fn write_records(records: &[ReplicationRecord], out: &Path) -> Result<()> {
    write_records_csv(records, create(&out.join("records.csv"))?)
}

fn calibrate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let plan = plan_of(cfg)?;
    let records = run_replications(&plan)?;
    let ps: Vec<f64> = records.iter().map(|r| r.p_leaf).collect();
    let seeds = records.iter().map(|r| r.seed).collect();
    let mut thr = calibrate_threshold(&ps, cfg.run.alpha.unwrap_or(0.10), plan.scenario.id.slug(), seeds)?;
    let s = &mut thr.settings;
    s.insert("learner".into(), plan.learner.short_name().into());
    s.insert("learner_params".into(), format!("{:?}", plan.learner.kind));
    s.insert("n".into(), plan.scenario.n.to_string());
    s.insert("d".into(), plan.scenario.d.to_string());
    s.insert("noise".into(), plan.scenario.noise_variance.to_string());
    s.insert("target".into(), plan.discovery.target.to_string());
    s.insert("master_seed".into(), plan.master_seed.to_string());
    s.insert("baseline".into(), plan.baseline.to_string());
    write_records(&records, out)?;
    thr.save(&out.join("threshold.toml"))
}

fn write_reports(labelled: &[(String, Vec<ReplicationRecord>)], out: &Path) -> Result<()> {
    for (label, records) in labelled {
        let suffix = if labelled.len() == 1 { String::new() } else { format!("-{label}") };
        write_summary_csv(records, create(&out.join(format!("summary{suffix}.csv")))?)?;
        let ps: Vec<f64> = records.iter().map(|r| r.p_leaf).collect();
        write_ecdf_csv(&ps, create(&out.join(format!("ecdf{suffix}.csv")))?)?;
    }
    let ps: Vec<(String, Vec<f64>)> = labelled
        .iter()
        .map(|(l, r)| (l.clone(), r.iter().map(|x| x.p_leaf).collect()))
        .collect();
    let series: Vec<(&str, &[f64])> = ps.iter().map(|(l, v)| (l.as_str(), v.as_slice())).collect();
    write_text(&out.join("ecdf.svg"), &ecdf_svg("ECDF of p_leaf", &series))
}

fn replicate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut plan = plan_of(cfg)?;
    plan.threshold = Some(cfg.threshold()?);
    let records = run_replications(&plan)?;
    write_records(&records, out)?;
    write_reports(&[(plan.scenario.id.slug().to_string(), records)], out)
}

fn report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut labelled = Vec::new();
    for (i, path) in cfg.run.inputs.iter().enumerate() {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let records = read_records_csv(f)?;
        let stem = path
            .parent()
            .and_then(|p| p.file_name())
            .filter(|_| path.file_stem().is_some_and(|s| s == "records"))
            .or(path.file_stem())
            .map_or_else(|| format!("input{i}"), |s| s.to_string_lossy().into_owned());
        labelled.push((format!("{}-{stem}", i + 1), records));
    }
    write_reports(&labelled, out)
}

fn surface(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = scenario_of(cfg)?;
    let grid = cfg.surface.unwrap_or_default();
    let kind = cfg.discovery().effect_kind();
    let points = effect_surface_grid(&sc, &cfg.learner(), kind, &grid, cfg.run.reps.unwrap_or(10), cfg.seed())?;
    let names = (format!("x{}", grid.cov1 + 1), format!("x{}", grid.cov2 + 1));
    write_surface_csv(&points, (&names.0, &names.1), create(&out.join("surface.csv"))?)?;

    // Closed-form surface with the remaining covariates at zero.
    let mut x = Matrix::zeros(points.len(), sc.d);
    for (r, p) in points.iter().enumerate() {
        x.set(r, grid.cov1, p.cov1);
        x.set(r, grid.cov2, p.cov2);
    }
    let truth = true_effect_surface(&sc, &x)?;
    let mut w = csv::Writer::from_writer(create(&out.join("truth_surface.csv"))?);
    w.write_record([names.0.as_str(), names.1.as_str(), "tau"])?;
    for (p, t) in points.iter().zip(truth) {
        w.write_record([p.cov1.to_string(), p.cov2.to_string(), t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(out.join("truth_surface.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("medlearn").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[run]\nseed = 3\nreps = 7\n[data]\nscenario = \"null\"\nn = 80\n[learner]\nkind = \"gb\"\nrounds = 5\n",
        )
        .unwrap();
        let cli = parse(&["replicate", "--config", path.to_str().unwrap(), "--reps", "2", "--n", "90"]);
        let cfg = resolve(&cli.command).unwrap();
        assert_eq!(cfg.run.seed, Some(3));
        assert_eq!(cfg.run.reps, Some(2));
        assert_eq!(cfg.data.n, Some(90));
        assert_eq!(cfg.learner.rounds, Some(5));
        assert_eq!((cfg.discovery.k_min, cfg.discovery.k_max), (Some(2), Some(5)));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cli = parse(&["fit", "--scenario", "simple-all", "--learner", "cart", "--seed", "4"]);
        let cfg = resolve(&cli.command).unwrap();
        assert_eq!(cfg.discovery.target, Some(Target::Mediator));
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn data_source_rules() {
        let err = |args: &[&str]| resolve(&parse(args).command).unwrap_err().exit_code();
        assert_eq!(err(&["fit"]), 2);
        assert_eq!(err(&["fit", "--scenario", "null", "--data", "x.csv"]), 2);
        assert_eq!(err(&["fit", "--data", "x.csv"]), 2);
        assert_eq!(err(&["simulate"]), 2);
        assert_eq!(err(&["report"]), 2);
        assert_eq!(err(&["replicate", "--scenario", "null", "--k-min", "2"]), 2);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(RunConfig::from_toml("[run]\nsede = 1\n").is_err());
        assert!(RunConfig::from_toml("[extra]\n").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run_from(["medlearn", "fit", "--bogus"]), 2);
        let help = Cli::try_parse_from(["medlearn", "--help"]).unwrap_err();
        assert_eq!(help.kind(), clap::error::ErrorKind::DisplayHelp);
    }
}
