use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use unibasis::basis::{build_basis, streaming_consecutive_angles, BasisConfig, BasisKind, Reorthogonalization};
use unibasis::graph::{estimate_homophily, Graph, IsolatedNodePolicy, LabeledSplit, PropagationConfig};
use unibasis::io::{self, load_graph, load_labels, load_matrix, load_split};
use unibasis::matrix::SignalMatrix;
use unibasis::metrics::spectrum_profile;
use unibasis::model::{train, FilterModel, Hyper};
use unibasis::synth::{generate, planted_partition, PlantedSpec, SynthSpec, DEFAULT_FEATURE_DIM};

/// Polynomial graph-signal bases, filters and synthetic homophily sweeps.
///
/// Every option can also come from a JSON file given with --config (keys are
/// the option names with underscores); flags on the command line win. Each run
/// that has --out writes the fully resolved options to run_config.json, which
/// can be passed back with --config to repeat it.
#[derive(Parser)]
#[command(name = "unibasis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the homophily ratio from edges inside the training set
    EstimateH(Settings),
    /// Build a basis and export one text file per hop plus manifest.json
    BuildBasis(Settings),
    /// Train a filter and write model.json and report.json
    Train(Settings),
    /// Mean angle between consecutive hops, computed without storing the basis
    Angles(Settings),
    /// Generate a synthetic dataset at a target homophily ratio
    Synth(Settings),
    /// Per-hop signal frequency paired with the learned hop weights
    Spectrum(Settings),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    /// JSON file providing defaults for any option
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Edge list, one "u v" pair per line
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<PathBuf>,
    /// Feature matrix, one row per node
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    /// One integer class per line
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<PathBuf>,
    /// JSON object with train/val/test index arrays; random split when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<PathBuf>,
    /// homophily | orthonormal | heterophily | unibasis
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<BasisKind>,
    /// Highest hop K (the basis has K + 1 slices)
    #[arg(long, short = 'K')]
    #[serde(skip_serializing_if = "Option::is_none")]
    hops: Option<usize>,
    /// Homophily estimate setting the basis angle; estimated from the split when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    h_hat: Option<f64>,
    /// Weight of the propagated slice in the mixed basis
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    /// none | partial | full
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reorth: Option<Reorthogonalization>,
    /// Propagate with A + I instead of A
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    self_loops: Option<bool>,
    /// zero | self-loop
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    isolated: Option<IsolatedNodePolicy>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    /// Width of an optional ReLU hidden layer
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Train fraction of a random split
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_frac: Option<f64>,
    /// Validation fraction of a random split
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_frac: Option<f64>,
    /// Homophily ratio the synthetic labels are reassigned towards
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_h: Option<f64>,
    /// Width of synthetic one-hot features
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
    /// Model file written by `train`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing)]
    out: Option<PathBuf>,
}

macro_rules! fill_from {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )*
    };
}

impl Settings {
    fn resolve(mut self) -> Result<Self> {
        if let Some(path) = self.config.take() {
            let file: Settings = io::read_json(&path)?;
            fill_from!(self, file;
                graph, features, labels, split, kind, hops, h_hat, tau, reorth, self_loops, isolated,
                lr, weight_decay, dropout, patience, max_epochs, hidden, seed, train_frac, val_frac,
                target_h, feature_dim, checkpoint, out);
        }
        Ok(self)
    }

    fn seed(&mut self) -> u64 {
        *self.seed.get_or_insert(0)
    }

    fn propagation(&mut self) -> PropagationConfig {
        PropagationConfig {
            self_loops: *self.self_loops.get_or_insert(false),
            isolated_node_policy: *self.isolated.get_or_insert(IsolatedNodePolicy::Zero),
        }
    }

    fn kind(&mut self) -> BasisKind {
        *self.kind.get_or_insert(BasisKind::Unibasis)
    }

    fn basis_config(&mut self, h_hat: f64) -> BasisConfig {
        let defaults = BasisConfig::default();
        BasisConfig {
            hops: *self.hops.get_or_insert(defaults.hops),
            h_hat,
            tau: *self.tau.get_or_insert(defaults.tau),
            propagation: self.propagation(),
            reorthogonalization: *self.reorth.get_or_insert(Reorthogonalization::None),
            ..defaults
        }
    }

    fn hyper(&mut self) -> Hyper {
        let d = Hyper::default();
        Hyper {
            lr: *self.lr.get_or_insert(d.lr),
            weight_decay: *self.weight_decay.get_or_insert(d.weight_decay),
            dropout: *self.dropout.get_or_insert(d.dropout),
            max_epochs: *self.max_epochs.get_or_insert(d.max_epochs),
            patience: *self.patience.get_or_insert(d.patience),
            hidden: self.hidden,
        }
    }
}

fn missing(flag: &str) -> anyhow::Error {
    anyhow!(ContractError(format!("--{flag} is required (or set it in --config)")))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| missing(flag))
}

/// Usage and contract violations detected by the front end itself.
#[derive(Debug)]
struct ContractError(String);

impl std::fmt::Display for ContractError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ContractError {}

struct Data {
    graph: Graph,
    features: Option<SignalMatrix>,
    split: Option<LabeledSplit>,
}

/// Loads whatever of graph / features / labels the settings name. The node
/// count is taken from labels or features so trailing isolated nodes survive.
fn load(s: &mut Settings, need_features: bool, need_labels: bool) -> Result<Data> {
    let graph_path = required(&s.graph, "graph")?.to_path_buf();
    let features = match &s.features {
        Some(p) => Some(load_matrix(p)?),
        None if need_features => return Err(missing("features")),
        None => None,
    };
    let labels = match &s.labels {
        Some(p) => Some(load_labels(p)?),
        None if need_labels => return Err(missing("labels")),
        None => None,
    };
    let n_hint = labels
        .as_ref()
        .map(Vec::len)
        .or(features.as_ref().map(SignalMatrix::rows));
    let graph = load_graph(&graph_path, n_hint)?;
    let split = match labels {
        Some(labels) => Some(match &s.split {
            Some(p) => load_split(p, labels)?,
            None => {
                let train_frac = *s.train_frac.get_or_insert(0.6);
                let val_frac = *s.val_frac.get_or_insert(0.2);
                let seed = s.seed();
                LabeledSplit::random(labels, train_frac, val_frac, seed)?
            }
        }),
        None => None,
    };
    Ok(Data { graph, features, split })
}

/// Uses `--h-hat` when given, otherwise estimates it from the split and records
/// the value so run_config.json reproduces the run.
fn resolve_h_hat(s: &mut Settings, data: &Data, kind: BasisKind) -> Result<f64> {
    if let Some(h) = s.h_hat {
        return Ok(h);
    }
    match &data.split {
        Some(split) => {
            let est = estimate_homophily(&data.graph, split)?;
            if est.fallback {
                eprintln!("warning: no edges inside the training set; using h_hat = {}", est.ratio);
            }
            s.h_hat = Some(est.ratio);
            Ok(est.ratio)
        }
        None if matches!(kind, BasisKind::Heterophily | BasisKind::Unibasis) => Err(anyhow!(ContractError(format!(
            "{} basis needs --h-hat or --labels to estimate it",
            kind.name()
        )))),
        None => Ok(BasisConfig::default().h_hat),
    }
}

fn prepare_out(s: &Settings, needed: bool) -> Result<Option<PathBuf>> {
    match &s.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.clone()))
        }
        None if needed => Err(missing("out")),
        None => Ok(None),
    }
}

fn finish<T: Serialize>(s: &Settings, out: Option<&Path>, name: &str, result: &T) -> Result<()> {
    if let Some(dir) = out {
        io::write_json(dir.join(name), result)?;
        io::write_json(dir.join("run_config.json"), s)?;
    }
    println!("{}", serde_json::to_string(result)?);
    Ok(())
}

fn estimate_h(mut s: Settings) -> Result<()> {
    let data = load(&mut s, false, true)?;
    let out = prepare_out(&s, false)?;
    let split = data.split.as_ref().expect("labels loaded");
    let est = estimate_homophily(&data.graph, split)?;
    finish(&s, out.as_deref(), "estimate.json", &est)
}

#[derive(Serialize)]
struct BasisSummary {
    kind: BasisKind,
    hops: usize,
    nodes: usize,
    dim: usize,
    theta: Option<f64>,
    h_hat: Option<f64>,
    zero_columns: usize,
    breakdowns: usize,
}

fn build(mut s: Settings) -> Result<()> {
    let out = prepare_out(&s, true)?.expect("required");
    let data = load(&mut s, true, false)?;
    let kind = s.kind();
    let h_hat = resolve_h_hat(&mut s, &data, kind)?;
    let cfg = s.basis_config(h_hat);
    let basis = build_basis(
        &data.graph,
        data.features.as_ref().expect("features loaded"),
        kind,
        &cfg,
    )?;
    basis.export(&out)?;
    let summary = BasisSummary {
        kind,
        hops: cfg.hops,
        nodes: basis.num_nodes(),
        dim: basis.dim(),
        theta: basis.theta,
        h_hat: basis.h_used,
        zero_columns: basis.flags.zero_columns.len(),
        breakdowns: basis.flags.breakdowns.len(),
    };
    io::write_json(out.join("run_config.json"), &s)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    h_hat: f64,
    best_val_accuracy: f64,
    test_accuracy: Option<f64>,
    epochs_run: usize,
}

fn train_cmd(mut s: Settings) -> Result<()> {
    let out = prepare_out(&s, true)?.expect("required");
    let data = load(&mut s, true, true)?;
    let kind = s.kind();
    let h_hat = resolve_h_hat(&mut s, &data, kind)?;
    let cfg = s.basis_config(h_hat);
    let hyper = s.hyper();
    let seed = s.seed();
    let basis = build_basis(
        &data.graph,
        data.features.as_ref().expect("features loaded"),
        kind,
        &cfg,
    )?;
    let split = data.split.as_ref().expect("labels loaded");
    let (model, report) = train(&basis, split, hyper, seed)?;
    io::write_json_atomic(out.join("model.json"), &model)?;
    io::write_json(out.join("report.json"), &report)?;
    io::write_json(out.join("run_config.json"), &s)?;
    let summary = TrainSummary {
        h_hat,
        best_val_accuracy: report.best_val_accuracy,
        test_accuracy: report.test_accuracy,
        epochs_run: report.epochs_run,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn angles(mut s: Settings) -> Result<()> {
    let out = prepare_out(&s, false)?;
    let data = load(&mut s, true, false)?;
    let kind = s.kind();
    let h_hat = resolve_h_hat(&mut s, &data, kind)?;
    let cfg = s.basis_config(h_hat);
    let report = streaming_consecutive_angles(
        &data.graph,
        data.features.as_ref().expect("features loaded"),
        kind,
        &cfg,
    )?;
    finish(&s, out.as_deref(), "angles.json", &report)
}

fn synth(mut s: Settings) -> Result<()> {
    let out = prepare_out(&s, true)?.expect("required");
    let target_h = s.target_h.ok_or_else(|| missing("target-h"))?;
    let seed = s.seed();
    let (graph, labels) = match (&s.graph, &s.labels) {
        (Some(g), Some(l)) => {
            let labels = load_labels(l)?;
            (load_graph(g, Some(labels.len()))?, labels)
        }
        (None, None) => planted_partition(&PlantedSpec::cora_like(seed))?,
        _ => {
            return Err(anyhow!(ContractError(
                "a custom base needs both --graph and --labels".into()
            )))
        }
    };
    let spec = SynthSpec {
        feature_dim: *s.feature_dim.get_or_insert(DEFAULT_FEATURE_DIM),
        ..SynthSpec::new(graph, labels, target_h, seed)
    };
    let manifest = generate(&spec)?.write(&out)?;
    io::write_json(out.join("run_config.json"), &s)?;
    println!("{}", serde_json::to_string(&manifest)?);
    Ok(())
}

fn spectrum(mut s: Settings) -> Result<()> {
    let out = prepare_out(&s, false)?;
    let checkpoint = required(&s.checkpoint, "checkpoint")?.to_path_buf();
    let model: FilterModel = io::read_json(&checkpoint)?;
    let data = load(&mut s, true, false)?;
    let kind = s.kind();
    let h_hat = resolve_h_hat(&mut s, &data, kind)?;
    let cfg = s.basis_config(h_hat);
    let basis = build_basis(
        &data.graph,
        data.features.as_ref().expect("features loaded"),
        kind,
        &cfg,
    )?;
    let profile = spectrum_profile(&data.graph, &basis, &model.w)?;
    finish(&s, out.as_deref(), "spectrum.json", &profile)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::EstimateH(s) => estimate_h(s.resolve()?),
        Command::BuildBasis(s) => build(s.resolve()?),
        Command::Train(s) => train_cmd(s.resolve()?),
        Command::Angles(s) => angles(s.resolve()?),
        Command::Synth(s) => synth(s.resolve()?),
        Command::Spectrum(s) => spectrum(s.resolve()?),
    }
}

/// 2 for filesystem and input-format problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<unibasis::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
