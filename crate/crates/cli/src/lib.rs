//! `airhold` subcommands. Every stage reads and writes files so each
//! intermediate artifact can be inspected, and every run leaves a manifest
//! with input and output digests next to its primary output.

pub mod manifest;

use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use airhold_core::eval::{classification_metrics, regression_metrics, write_table_row, TABLE_HEADER};
use airhold_core::features::{build_matrix, NetworkFeatures};
use airhold_core::gat::BatchBuilder;
use airhold_core::gbdt::{train_traced, TrainOutput};
use airhold_core::ingest::{parse_records, stratified_split, synth_generate};
use airhold_core::{
    ClassificationReport, Dataset, Execution, FeatureMatrix, FeatureRegistry, FlightMultigraph, Gat, GatConfig,
    MetricsReport, Task, TrainConfig, WeightedDigraph,
};
use airhold_service::{Snapshot, CLASSIFIER_FILE, REGISTRY_FILE, REGRESSOR_FILE};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::{manifest_path_for, ManifestBuilder};

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let kind = if e.kind() == ErrorKind::NotFound { "missing_input" } else { "io" };
        CliError::new(kind, format!("{}: {e}", path.display()))
    }

    /// Usage-type failures exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "missing_input" => 2,
            _ => 1,
        }
    }

    /// One line of JSON for stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

fn err<E: std::fmt::Display>(kind: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::new(kind, e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "airhold", version, about = "Holding-maneuver prediction on the flight network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic flight dataset with a planted holding signal.
    Synth(SynthArgs),
    /// Stratified train/test split of a flight CSV.
    Split(SplitArgs),
    /// Collapse flights into the weighted route graph.
    BuildGraph(BuildGraphArgs),
    /// Encode flights as a feature matrix, joining route metrics.
    Features(FeaturesArgs),
    /// Train the holding classifier and delay regressor.
    TrainGbdt(TrainGbdtArgs),
    /// Train the graph attention network and score it.
    TrainGat(TrainGatArgs),
    /// Score trained models on a feature matrix.
    Evaluate(EvaluateArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
    /// Run every stage end to end into one directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 42_336)]
    pub rows: usize,
    #[arg(long, default_value_t = 720)]
    pub positives: usize,
    #[arg(long, default_value_t = 24)]
    pub airports: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildGraphArgs {
    /// Training flights; the graph never sees test flights.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-route metrics as CSV.
    #[arg(long)]
    pub edge_features: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum RegistryChoice {
    /// Flight, network and unseen-route columns.
    Standard,
    /// Flight columns only.
    Tabular,
}

impl RegistryChoice {
    fn registry(self) -> FeatureRegistry {
        match self {
            RegistryChoice::Standard => FeatureRegistry::standard(),
            RegistryChoice::Tabular => FeatureRegistry::tabular(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Route graph from `build-graph`.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value_t = RegistryChoice::Standard)]
    pub registry: RegistryChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GbdtFlags {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Positive-class weight; `balanced` means N_neg/N_pos.
    #[arg(long)]
    pub class_weight: Option<String>,
}

impl GbdtFlags {
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_slice(&read(p)?).map_err(err("config"))?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.max_depth {
            cfg.max_depth = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.min_samples_leaf {
            cfg.min_samples_leaf = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda_l2 = v;
        }
        if let Some(w) = &self.class_weight {
            cfg.class_weight_positive = match w.as_str() {
                "balanced" => None,
                other => Some(other.parse().map_err(|_| CliError::new("usage", format!("bad --class-weight {other}")))?),
            };
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGbdtArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub gbdt: GbdtFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct GatFlags {
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGatArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Flights to score; defaults to the training flights.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub gat: GatFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write a `model,accuracy,precision,recall,f1` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 42_336)]
    pub rows: usize,
    #[arg(long, default_value_t = 720)]
    pub positives: usize,
    #[arg(long, default_value_t = 24)]
    pub airports: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub gbdt: GbdtFlags,
    /// GAT depths to train and score; empty skips the GAT.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub gat_layers: Vec<usize>,
    #[arg(long, default_value_t = 40)]
    pub gat_epochs: usize,
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    parse_records(read(path)?.as_slice()).map_err(|e| CliError::new("data", format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix, CliError> {
    FeatureMatrix::read_csv(read(path)?.as_slice()).map_err(|e| CliError::new("data", format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("synth", Some(a.seed), a);
    let ds = synth_generate(a.seed, a.rows, a.positives, a.airports).map_err(err("usage"))?;
    write(&a.out, &ds.to_csv())?;
    m.output(&a.out)?;
    m.finish(&manifest_path_for(&a.out))?;
    log::info!("wrote {} flights ({} holding) to {}", ds.len(), ds.provenance.counts.positives, a.out.display());
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("split", Some(a.seed), a);
    let ds = read_dataset(&a.data)?;
    m.input(&a.data)?;
    let (train, test) = stratified_split(&ds, a.test_fraction, a.seed).map_err(err("usage"))?;
    write(&a.train_out, &train.to_csv())?;
    write(&a.test_out, &test.to_csv())?;
    m.output(&a.train_out)?;
    m.output(&a.test_out)?;
    m.finish(&manifest_path_for(&a.train_out))?;
    Ok(())
}

pub fn build_graph(a: &BuildGraphArgs) -> Result<WeightedDigraph, CliError> {
    let mut m = ManifestBuilder::start("build-graph", None, a);
    let ds = read_dataset(&a.data)?;
    m.input(&a.data)?;
    let graph = FlightMultigraph::from_records(&ds.records).map_err(err("data"))?.collapse();
    write(&a.out, &graph.to_json())?;
    m.output(&a.out)?;
    if let Some(path) = &a.edge_features {
        let network = NetworkFeatures::from_graph(graph.clone(), Execution::default()).map_err(err("data"))?;
        let mut buf = Vec::new();
        airhold_core::centrality::write_feature_csv(&graph, network.edge_features(), &mut buf).map_err(err("io"))?;
        write(path, &buf)?;
        m.output(path)?;
    }
    m.finish(&manifest_path_for(&a.out))?;
    Ok(graph)
}

pub fn features(a: &FeaturesArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("features", None, a);
    let ds = read_dataset(&a.data)?;
    let graph = WeightedDigraph::from_json(&read(&a.graph)?).map_err(err("data"))?;
    m.input(&a.data)?;
    m.input(&a.graph)?;
    let network = NetworkFeatures::from_graph(graph, Execution::default()).map_err(err("data"))?;
    let matrix = build_matrix(&network.attach(&ds.records), &a.registry.registry()).map_err(err("data"))?;
    write(&a.out, &matrix.to_csv())?;
    m.output(&a.out)?;
    m.finish(&manifest_path_for(&a.out))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainingLog<'a> {
    config: &'a TrainConfig,
    classifier_loss: &'a [f64],
    regressor_loss: &'a [f64],
}

pub fn train_gbdt(a: &TrainGbdtArgs) -> Result<(), CliError> {
    let cfg = a.gbdt.resolve()?;
    let mut m = ManifestBuilder::start("train-gbdt", Some(cfg.seed), a);
    let matrix = read_matrix(&a.features)?;
    m.input(&a.features)?;
    let registry = FeatureRegistry::from_names(matrix.names()).map_err(err("data"))?;
    let fit = |task| train_traced(&matrix, task, &cfg, Execution::default()).map_err(err("model"));
    let TrainOutput { model: classifier, loss_trace: cls_loss } = fit(Task::Classification)?;
    let TrainOutput { model: regressor, loss_trace: reg_loss } = fit(Task::Regression)?;
    let outputs = [
        (CLASSIFIER_FILE, classifier.to_json()),
        (REGRESSOR_FILE, regressor.to_json()),
        (REGISTRY_FILE, registry.to_json()),
        ("training.json", pretty(&TrainingLog { config: &cfg, classifier_loss: &cls_loss, regressor_loss: &reg_loss })),
    ];
    for (name, bytes) in outputs {
        let path = a.out_dir.join(name);
        write(&path, &bytes)?;
        m.output(&path)?;
    }
    m.finish(&a.out_dir.join("manifest.json"))?;
    Ok(())
}

fn table_row(model: &str, r: &ClassificationReport) -> String {
    let mut buf = Vec::new();
    write_table_row(model, r, &mut buf).expect("write to memory");
    String::from_utf8(buf).expect("ascii")
}

/// Returns the report and its Table-1 style CSV row.
pub fn train_gat(a: &TrainGatArgs) -> Result<(MetricsReport, String), CliError> {
    let mut m = ManifestBuilder::start("train-gat", Some(a.seed), a);
    let train = read_dataset(&a.train)?;
    m.input(&a.train)?;
    let test = match &a.test {
        Some(p) => {
            m.input(p)?;
            read_dataset(p)?
        }
        None => train.clone(),
    };
    let (report, gat, builder) = fit_gat(&train, &test, &a.gat, a.seed)?;
    write(&a.out, &gat.to_json(Some(&builder)))?;
    m.output(&a.out)?;
    if let Some(p) = &a.report {
        write(p, &report.to_json())?;
        m.output(p)?;
    }
    m.finish(&manifest_path_for(&a.out))?;
    let row = table_row(&report.model, report.classification.as_ref().expect("classification report"));
    Ok((report, row))
}

fn fit_gat(train: &Dataset, test: &Dataset, f: &GatFlags, seed: u64) -> Result<(MetricsReport, Gat, BatchBuilder), CliError> {
    let builder = BatchBuilder::fit(&train.records).map_err(err("data"))?;
    let train_batch = builder.batch(&train.records).map_err(err("data"))?;
    let test_batch = builder.batch(&test.records).map_err(err("data"))?;
    let cfg = GatConfig {
        layers: f.layers,
        heads: f.heads,
        hidden_dim: f.hidden,
        epochs: f.epochs,
        learning_rate: f.learning_rate,
        seed,
        ..GatConfig::default()
    };
    let mut gat = Gat::new(cfg, builder.edge_dim()).map_err(err("usage"))?;
    let trace = gat.train(&train_batch).map_err(err("model"))?;
    log::info!("gat-{}: loss {:?} -> {:?}", f.layers, trace.first(), trace.last());
    let probs = gat.edge_predict(&test_batch).map_err(err("model"))?;
    let cls = classification_metrics(&test_batch.labels, &probs, 0.5).map_err(err("model"))?;
    let report = MetricsReport { model: format!("gat-{}", f.layers), classification: Some(cls), regression: None };
    Ok((report, gat, builder))
}

/// Returns the report and its Table-1 style CSV row.
pub fn evaluate(a: &EvaluateArgs) -> Result<(MetricsReport, String), CliError> {
    let mut m = ManifestBuilder::start("evaluate", None, a);
    let load = |name: &str| -> Result<airhold_core::GbdtModel, CliError> {
        let path = a.model_dir.join(name);
        airhold_core::GbdtModel::from_json(&read(&path)?).map_err(|e| CliError::new("model", format!("{}: {e}", path.display())))
    };
    let classifier = load(CLASSIFIER_FILE)?;
    let regressor = load(REGRESSOR_FILE)?;
    let matrix = read_matrix(&a.features)?;
    for p in [a.model_dir.join(CLASSIFIER_FILE), a.model_dir.join(REGRESSOR_FILE), a.features.clone()] {
        m.input(&p)?;
    }
    let x = matrix.select(&classifier.feature_names).map_err(err("data"))?;
    let probs = classifier.predict_matrix(&x).map_err(err("model"))?;
    let delays = regressor.predict_matrix(&x).map_err(err("model"))?;
    let cls = classification_metrics(x.labels_cls(), &probs, a.threshold).map_err(err("model"))?;
    let reg = regression_metrics(x.labels_reg(), &delays, a.bins).map_err(err("model"))?;
    let row = table_row("gbdt", &cls);
    let report = MetricsReport { model: "gbdt".into(), classification: Some(cls), regression: Some(reg) };
    write(&a.report, &report.to_json())?;
    m.output(&a.report)?;
    if let Some(p) = &a.csv {
        write(p, format!("{TABLE_HEADER}\n{row}").as_bytes())?;
        m.output(p)?;
    }
    m.finish(&manifest_path_for(&a.report))?;
    Ok((report, row))
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("serve", None, a);
    let snapshot = Snapshot::load(&a.model_dir, &a.graph).map_err(err("model"))?;
    m.input(&a.graph)?;
    let runtime = tokio::runtime::Runtime::new().map_err(err("server"))?;
    runtime.block_on(async {
        let listener = airhold_service::bind(&a.bind).await.map_err(err("bind"))?;
        m.finish(&a.model_dir.join("serve.manifest.json"))?;
        eprintln!("listening on {}", a.bind);
        airhold_service::serve(Arc::new(snapshot), listener).await.map_err(err("server"))
    })
}

#[derive(Debug, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub rows: usize,
    pub positives: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub models: Vec<MetricsReport>,
}

/// All stages through files in `out_dir`; returns the report.
pub fn pipeline(a: &PipelineArgs) -> Result<PipelineReport, CliError> {
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut m = ManifestBuilder::start("pipeline", Some(a.seed), a);
    let p = |name: &str| dir.join(name);

    synth(&SynthArgs { seed: a.seed, rows: a.rows, positives: a.positives, airports: a.airports, out: p("flights.csv") })?;
    split(&SplitArgs {
        data: p("flights.csv"),
        test_fraction: a.test_fraction,
        seed: a.seed,
        train_out: p("train.csv"),
        test_out: p("test.csv"),
    })?;
    build_graph(&BuildGraphArgs { data: p("train.csv"), out: p("graph.json"), edge_features: Some(p("route_metrics.csv")) })?;
    for (data, out) in [("train.csv", "train_features.csv"), ("test.csv", "test_features.csv")] {
        features(&FeaturesArgs { data: p(data), graph: p("graph.json"), registry: RegistryChoice::Standard, out: p(out) })?;
    }
    let gbdt = GbdtFlags {
        config: a.gbdt.config.clone(),
        rounds: a.gbdt.rounds,
        max_depth: a.gbdt.max_depth,
        learning_rate: a.gbdt.learning_rate,
        min_samples_leaf: a.gbdt.min_samples_leaf,
        lambda: a.gbdt.lambda,
        class_weight: a.gbdt.class_weight.clone(),
    };
    train_gbdt(&TrainGbdtArgs { features: p("train_features.csv"), out_dir: p("models"), gbdt })?;
    let (gbdt_report, gbdt_row) = evaluate(&EvaluateArgs {
        model_dir: p("models"),
        features: p("test_features.csv"),
        report: p("gbdt_report.json"),
        csv: None,
        threshold: 0.5,
        bins: 50,
    })?;
    let mut models = vec![gbdt_report];
    let mut table = format!("{TABLE_HEADER}\n{gbdt_row}");
    for &layers in &a.gat_layers {
        let (report, row) = train_gat(&TrainGatArgs {
            train: p("train.csv"),
            test: Some(p("test.csv")),
            seed: a.seed,
            gat: GatFlags { layers, epochs: a.gat_epochs, ..GatFlags::default() },
            out: p(&format!("gat_{layers}.json")),
            report: None,
        })?;
        models.push(report);
        table.push_str(&row);
    }

    let train_rows = read_dataset(&p("train.csv"))?.len();
    let test_rows = read_dataset(&p("test.csv"))?.len();
    let report = PipelineReport { seed: a.seed, rows: a.rows, positives: a.positives, train_rows, test_rows, models };
    write(&p("report.json"), &pretty(&report))?;
    write(&p("table.csv"), table.as_bytes())?;
    for name in ["report.json", "table.csv"] {
        m.output(&p(name))?;
    }
    m.finish(&p("pipeline.manifest.json"))?;
    Ok(report)
}

impl Default for GatFlags {
    fn default() -> Self {
        GatFlags { layers: 1, heads: 4, hidden: 8, epochs: 40, learning_rate: 0.1 }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Split(a) => split(&a),
        Command::BuildGraph(a) => build_graph(&a).map(|_| ()),
        Command::Features(a) => features(&a),
        Command::TrainGbdt(a) => train_gbdt(&a),
        Command::TrainGat(a) => {
            let (_, row) = train_gat(&a)?;
            print!("{TABLE_HEADER}\n{row}");
            Ok(())
        }
        Command::Evaluate(a) => {
            let (_, row) = evaluate(&a)?;
            print!("{TABLE_HEADER}\n{row}");
            Ok(())
        }
        Command::Serve(a) => serve(&a),
        Command::Pipeline(a) => {
            let report = pipeline(&a)?;
            println!("{}", a.out_dir.join("report.json").display());
            for mr in &report.models {
                if let Some(c) = &mr.classification {
                    print!("{}", table_row(&mr.model, c));
                }
            }
            Ok(())
        }
    }
}
