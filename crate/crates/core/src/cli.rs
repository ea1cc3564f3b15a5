//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 file-system failure.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cooccur::{cm_to_csv, correlation_from_dataset, CmMode};
use crate::dataset::{
    load_manifest, manifest_to_string, synth_generate, Dataset, FeatureDims, LabelSchema, SynthConfig,
};
use crate::models::{FusionModel, GraphModel, LabelEmbedding, ModelConfig};
use crate::nn::{Checkpoint, Matrix};
use crate::trainer::{
    evaluate, log_to_jsonl, param_counts, run_pipeline, run_repeats, train_fusion_stage, train_graph_stage, GraphStage,
    ParamCounts, PipelineReports, PipelineWeights, Preset, TrainConfig, TrainError, Variant,
};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl<E: Error + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        let mut cur: Option<&(dyn Error + 'static)> = Some(&e);
        while let Some(err) = cur {
            if err.is::<std::io::Error>() {
                return CliError::Io(e.to_string());
            }
            cur = err.source();
        }
        CliError::Validation(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "geln", version, about = "Two-modality multi-label classifier with a label-graph ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic manifest with planted label correlations.
    Synth(SynthArgs),
    /// Write the label correlation matrix of a manifest as CSV.
    Cm(CmArgs),
    /// Train both stages and write checkpoints and logs.
    Train(TrainArgs),
    /// Search ensemble weights and report test metrics from saved checkpoints.
    Eval(EvalArgs),
    /// Train, search weights and report in one run.
    Pipeline(TrainArgs),
    /// Run seeded pipelines and aggregate mean and standard deviation.
    Repeat(RepeatArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Directory receiving every artifact
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML file with [synth], [model] and [train] sections; flags override it [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    io: OutArgs,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Training cases [default: 600]
    #[arg(long)]
    n_train: Option<usize>,
    /// Validation cases [default: 200]
    #[arg(long)]
    n_val: Option<usize>,
    /// Test cases [default: 200]
    #[arg(long)]
    n_test: Option<usize>,
    /// Probability that a category follows the shared latent class [default: 0.8]
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Args, Debug)]
struct CmArgs {
    #[command(flatten)]
    io: OutArgs,
    /// JSON manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Matrix normalization: raw or row-stochastic [default: raw]
    #[arg(long)]
    cm_mode: Option<CmMode>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Root seed for initialization and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Hyperparameter preset: desk (60 epochs, lr 3e-4, averaging over last 10) or paper (250, 3e-5, 50) [default: desk]
    #[arg(long)]
    preset: Option<Preset>,
    /// Stage-2 treatment of the fusion model: freeze or unfreeze [default: unfreeze]
    #[arg(long)]
    variant: Option<Variant>,
    /// Matrix normalization: raw or row-stochastic [default: raw]
    #[arg(long)]
    cm_mode: Option<CmMode>,
    /// Ensemble weight grid step, must divide 1 [default: 0.05]
    #[arg(long)]
    grid_step: Option<f64>,
    /// Epochs per stage [default: from the preset]
    #[arg(long)]
    epochs: Option<usize>,
    /// Label embedding CSV, one row per class [default: seeded Gaussian]
    #[arg(long)]
    embedding: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    io: OutArgs,
    /// JSON manifest [default for pipeline: synthetic data from the [synth] section and the seed]
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    io: OutArgs,
    /// JSON manifest with the val and test cases
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `train`
    #[arg(long)]
    checkpoints: PathBuf,
    /// Ensemble weight grid step [default: the value used in training]
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Args, Debug)]
struct RepeatArgs {
    #[command(flatten)]
    io: OutArgs,
    /// JSON manifest shared by every run [default: fresh synthetic data per run seed]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of runs, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    synth: SynthSection,
    model: ModelConfig,
    train: TrainSection,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields, default)]
struct SynthSection {
    n_train: usize,
    n_val: usize,
    n_test: usize,
    feature_dims: FeatureDims,
    correlation_strength: f64,
    noise_scale: f64,
    /// Use this many binary categories instead of the dermatology schema.
    binary_categories: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            feature_dims: d.feature_dims,
            correlation_strength: d.correlation_strength,
            noise_scale: d.noise_scale,
            binary_categories: None,
        }
    }
}

impl SynthSection {
    fn to_config(&self, seed: u64) -> Result<SynthConfig, CliError> {
        let schema = match self.binary_categories {
            Some(n) => LabelSchema::binary(n)?,
            None => LabelSchema::spc(),
        };
        Ok(SynthConfig {
            schema,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            feature_dims: self.feature_dims,
            correlation_strength: self.correlation_strength,
            noise_scale: self.noise_scale,
            seed,
        })
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    preset: Option<Preset>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    base_lr: Option<f64>,
    min_lr: Option<f64>,
    swa_last_epochs: Option<usize>,
    variant: Option<Variant>,
    seed: Option<u64>,
    cm_mode: Option<CmMode>,
    grid_step: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display()))),
    }
}

fn train_config(file: &TrainSection, flags: &TrainFlags) -> Result<TrainConfig, CliError> {
    let preset = flags.preset.or(file.preset).unwrap_or(Preset::Desk);
    let mut cfg = TrainConfig::preset(preset);
    let scaled_swa = flags.epochs.is_some() && file.swa_last_epochs.is_none();
    macro_rules! layer {
        ($($field:ident),*) => {$(
            if let Some(v) = file.$field { cfg.$field = v; }
        )*};
    }
    layer!(epochs, batch_size, base_lr, min_lr, swa_last_epochs, variant, seed, cm_mode, grid_step);
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if scaled_swa {
        cfg.swa_last_epochs = cfg.swa_last_epochs.min(cfg.epochs);
    }
    cfg.seed = flags.seed.unwrap_or(cfg.seed);
    cfg.variant = flags.variant.unwrap_or(cfg.variant);
    cfg.cm_mode = flags.cm_mode.unwrap_or(cfg.cm_mode);
    cfg.grid_step = flags.grid_step.unwrap_or(cfg.grid_step);
    cfg.validate()?;
    Ok(cfg)
}

/// Writes files under one directory and announces each path.
struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(path)
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct Meta {
    schema: LabelSchema,
    feature_dims: FeatureDims,
    embedding_dim: usize,
    model: ModelConfig,
    train: TrainConfig,
    param_counts: ParamCounts,
}

const META: &str = "meta.json";
const FUSION_CKPT: &str = "fusion_stage.ckpt";
const GRAPH_CKPT: &str = "graph_stage.ckpt";

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn dataset_or_synth(
    manifest: Option<&Path>,
    synth: &SynthSection,
    seed: u64,
    out: &Artifacts,
) -> Result<Dataset, CliError> {
    match manifest {
        Some(p) => Ok(load_manifest(p)?),
        None => {
            let data = synth_generate(&synth.to_config(seed)?)?;
            out.write("manifest.json", manifest_to_string(&data))?;
            Ok(data)
        }
    }
}

fn embedding_for(
    path: Option<&Path>,
    schema: &LabelSchema,
    model: &ModelConfig,
) -> Result<Option<LabelEmbedding>, CliError> {
    path.map(|p| Ok(LabelEmbedding::from_csv(&read_text(p)?, schema, model.train_embedding)?)).transpose()
}

fn write_reports(out: &Artifacts, weights: &PipelineWeights, reports: &PipelineReports) -> Result<(), CliError> {
    for (name, r) in [("fusion", &reports.fusion), ("graph", &reports.graph), ("geln", &reports.geln)] {
        out.write(&format!("report_{name}.json"), r.to_json())?;
        out.write(&format!("report_{name}.csv"), r.to_csv())?;
    }
    out.write("weights.json", json(weights))?;
    println!(
        "test mean AUC  fusion {:.4}  graph {:.4}  geln {:.4}",
        reports.fusion.overall_mean_auc, reports.graph.overall_mean_auc, reports.geln.overall_mean_auc
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_training(
    out: &Artifacts,
    data: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    stage1: &FusionModel,
    stage2: &GraphStage,
    fusion_log: &str,
    cm: &crate::cooccur::CorrelationMatrix<f64>,
) -> Result<(), CliError> {
    out.write("cm.csv", cm_to_csv(cm, &data.schema().class_labels())?)?;
    out.write(FUSION_CKPT, Checkpoint::from_model("fusion.", stage1).to_bytes())?;
    let mut graph = Checkpoint::from_model("graph.", &stage2.graph);
    if let Some(j) = &stage2.joint_fusion {
        graph.insert_model("joint.", j);
    }
    graph.entries.insert("cm".into(), cm.to_matrix());
    out.write(GRAPH_CKPT, graph.to_bytes())?;
    out.write("log_fusion.jsonl", fusion_log)?;
    out.write("log_graph.jsonl", log_to_jsonl(&stage2.log))?;
    let meta = Meta {
        schema: data.schema().clone(),
        feature_dims: data.feature_dims(),
        embedding_dim: stage2.graph.label_embedding.dim(),
        model: model.clone(),
        train: cfg.clone(),
        param_counts: param_counts(stage1, stage2),
    };
    out.write(META, json(&meta))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let file = load_config(a.io.config.as_deref())?;
    let mut cfg = file.synth.to_config(a.seed.unwrap_or(0))?;
    cfg.n_train = a.n_train.unwrap_or(cfg.n_train);
    cfg.n_val = a.n_val.unwrap_or(cfg.n_val);
    cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
    cfg.correlation_strength = a.strength.unwrap_or(cfg.correlation_strength);
    let data = synth_generate(&cfg)?;
    Artifacts::new(&a.io.out)?.write("manifest.json", manifest_to_string(&data))?;
    Ok(())
}

fn cmd_cm(a: &CmArgs) -> Result<(), CliError> {
    let file = load_config(a.io.config.as_deref())?;
    let mode = a.cm_mode.or(file.train.cm_mode).unwrap_or_default();
    let data = load_manifest(&a.manifest)?;
    let cm = correlation_from_dataset::<f64>(&data, mode)?;
    Artifacts::new(&a.io.out)?.write("cm.csv", cm_to_csv(&cm, &data.schema().class_labels())?)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, full: bool) -> Result<(), CliError> {
    let file = load_config(a.io.config.as_deref())?;
    let cfg = train_config(&file.train, &a.train)?;
    if !full && a.manifest.is_none() {
        return Err(invalid("--manifest is required for train"));
    }
    let out = Artifacts::new(&a.io.out)?;
    let data = dataset_or_synth(a.manifest.as_deref(), &file.synth, cfg.seed, &out)?;
    let embedding = embedding_for(a.train.embedding.as_deref(), data.schema(), &file.model)?;
    if full {
        let res = run_pipeline::<f64>(&data, &file.model, &cfg, embedding)?;
        write_training(
            &out,
            &data,
            &file.model,
            &cfg,
            &res.fusion.model,
            &res.graph,
            &log_to_jsonl(&res.fusion.log),
            &res.cm,
        )?;
        return write_reports(&out, &res.weights, &res.reports);
    }
    let (train, _, _) = data.split();
    if train.is_empty() {
        return Err(TrainError::EmptyTrain.into());
    }
    let cm = correlation_from_dataset::<f64>(&data, cfg.cm_mode)?;
    let cm_t = cm.to_matrix();
    let stage1 = train_fusion_stage::<f64>(&train, &file.model, &cfg)?;
    let frozen = (cfg.variant == Variant::Freeze).then_some(&stage1.model);
    let stage2 = train_graph_stage(&train, &cm_t, frozen, &file.model, &cfg, embedding)?;
    write_training(&out, &data, &file.model, &cfg, &stage1.model, &stage2, &log_to_jsonl(&stage1.log), &cm)
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let dir = &a.checkpoints;
    let meta: Meta = serde_json::from_str(&read_text(&dir.join(META))?)
        .map_err(|e| invalid(format!("{}: {e}", dir.join(META).display())))?;
    let data = load_manifest(&a.manifest)?;
    if data.schema() != &meta.schema {
        return Err(invalid("manifest schema differs from the trained schema"));
    }
    if data.feature_dims() != meta.feature_dims {
        return Err(invalid("manifest feature_dims differ from the trained feature_dims"));
    }
    let load = |name: &str| -> Result<Checkpoint, CliError> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(Checkpoint::from_bytes(&bytes)?)
    };
    let (fusion_ckpt, graph_ckpt) = (load(FUSION_CKPT)?, load(GRAPH_CKPT)?);
    let seed = meta.train.seed;
    let mut stage1 = FusionModel::new(&meta.model, meta.feature_dims, &meta.schema, seed, "fusion.stage1");
    fusion_ckpt.load_into("fusion.", &mut stage1)?;
    let placeholder =
        LabelEmbedding::seeded(meta.schema.num_classes(), meta.embedding_dim, seed, meta.model.train_embedding);
    let mut graph = GraphModel::new(&meta.model, &meta.schema, seed, Some(placeholder))?;
    graph_ckpt.load_into("graph.", &mut graph)?;
    let joint_fusion = match meta.train.variant {
        Variant::Freeze => None,
        Variant::Unfreeze => {
            let mut j = FusionModel::new(&meta.model, meta.feature_dims, &meta.schema, seed, "fusion.joint");
            graph_ckpt.load_into("joint.", &mut j)?;
            Some(j)
        }
    };
    let cm: &Matrix<f64> = graph_ckpt.entries.get("cm").ok_or_else(|| invalid("checkpoint lacks the `cm` tensor"))?;
    let stage2 = GraphStage { graph, joint_fusion, log: Vec::new() };
    let (_, val, test) = data.split();
    let step = a.grid_step.unwrap_or(meta.train.grid_step);
    let (weights, reports) = evaluate(&stage1, &stage2, cm, &val, &test, step)?;
    write_reports(&Artifacts::new(&a.io.out)?, &weights, &reports)
}

fn cmd_repeat(a: &RepeatArgs) -> Result<(), CliError> {
    if a.repeats == 0 {
        return Err(invalid("--repeats must be at least 1"));
    }
    let file = load_config(a.io.config.as_deref())?;
    let cfg = train_config(&file.train, &a.train)?;
    if a.train.embedding.is_some() {
        return Err(invalid("--embedding is not supported by repeat"));
    }
    let shared = a.manifest.as_deref().map(load_manifest).transpose()?;
    let synth = &file.synth;
    let seeds = cfg.seed..cfg.seed + a.repeats as u64;
    let summary = run_repeats(
        seeds,
        |seed| match &shared {
            Some(d) => Ok(d.clone()),
            None => {
                let sc = synth.to_config(seed).map_err(|e| TrainError::Config(e.message().to_string()))?;
                Ok(synth_generate(&sc)?)
            }
        },
        &file.model,
        &cfg,
    )?;
    let out = Artifacts::new(&a.io.out)?;
    let table = summary.to_table();
    out.write("repeat.json", json(&summary))?;
    out.write("repeat.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Cm(a) => cmd_cm(a),
        Command::Train(a) => cmd_train(a, false),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_train(a, true),
        Command::Repeat(a) => cmd_repeat(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
