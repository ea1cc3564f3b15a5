use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_fusion_stage, train_graph_stage, FusionStage, GraphStage, TrainConfig, TrainError, Variant};
use crate::cooccur::{correlation_from_dataset, CorrelationMatrix};
use crate::dataset::{Dataset, Modality};
use crate::ensemble::{combine, search_or_uniform, EnsembleWeights};
use crate::metrics::{build_report, MetricsReport};
use crate::models::{FusionModel, LabelEmbedding, ModelConfig, PredictionSet, Source};
use crate::nn::{Matrix, Mode, Parameterized};
use crate::scalar::Scalar;

/// Per-branch probabilities of both models on one split.
#[derive(Clone, Debug)]
pub struct BranchPredictions {
    /// `P_FC`, `P_FD`, `P_FF`
    pub fusion: [PredictionSet; 3],
    /// `P_GC`, `P_GD`, `P_GF`
    pub graph: [PredictionSet; 3],
}

const FUSION_SOURCES: [Source; 3] = [Source::FusionClinical, Source::FusionDermoscopy, Source::FusionFused];
const GRAPH_SOURCES: [Source; 3] = [Source::GraphClinical, Source::GraphDermoscopy, Source::GraphFused];

/// Evaluates `P_F*` with the stage-1 model and `P_G*` with the graph model
/// fed by the stage-2 encoder, batch norm in eval mode.
pub fn predict_branches<T: Scalar>(
    stage1: &FusionModel<T>,
    stage2: &GraphStage<T>,
    cm: &Matrix<T>,
    data: &Dataset,
) -> Result<BranchPredictions, TrainError> {
    let ids: Vec<String> = data.cases().iter().map(|c| c.id.clone()).collect();
    let c = data.schema().num_classes();
    let wrap = |source: Source, m: Option<&Matrix<T>>| PredictionSet {
        source,
        case_ids: ids.clone(),
        probs: m.map(|m| m.cast::<f64>()).unwrap_or_else(|| Matrix::zeros(0, c)),
    };
    if data.is_empty() {
        return Ok(BranchPredictions {
            fusion: FUSION_SOURCES.map(|s| wrap(s, None)),
            graph: GRAPH_SOURCES.map(|s| wrap(s, None)),
        });
    }
    let xc = data.feature_matrix::<T>(Modality::Clinical);
    let xd = data.feature_matrix::<T>(Modality::Dermoscopy);
    let (fusion_out, _) = stage1.forward(&xc, &xd)?;
    let (features, _) = stage2.encoder(stage1).encode(&xc, &xd)?;
    let mut graph = stage2.graph.clone();
    let (graph_out, _) = graph.forward(cm, &features, Mode::Eval)?;
    let [a, b, f] = FUSION_SOURCES;
    let [ga, gb, gf] = GRAPH_SOURCES;
    Ok(BranchPredictions {
        fusion: [
            wrap(a, Some(&fusion_out.probs[0])),
            wrap(b, Some(&fusion_out.probs[1])),
            wrap(f, Some(&fusion_out.probs[2])),
        ],
        graph: [
            wrap(ga, Some(&graph_out.probs[0])),
            wrap(gb, Some(&graph_out.probs[1])),
            wrap(gf, Some(&graph_out.probs[2])),
        ],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineWeights {
    pub fusion_branches: EnsembleWeights,
    pub graph_branches: EnsembleWeights,
    /// `(W_pf, W_pg)`
    pub total: EnsembleWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub fusion_stage1: usize,
    /// Fusion parameters the variant carries: one model for freeze, two for unfreeze.
    pub fusion_share: usize,
    pub graph: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReports {
    pub fusion: MetricsReport,
    pub graph: MetricsReport,
    pub geln: MetricsReport,
}

pub struct PipelineOutput<T = f64> {
    pub fusion: FusionStage<T>,
    pub graph: GraphStage<T>,
    pub cm: CorrelationMatrix<f64>,
    pub weights: PipelineWeights,
    pub reports: PipelineReports,
    pub param_counts: ParamCounts,
}

fn refs(sets: &[PredictionSet; 3]) -> [&PredictionSet; 3] {
    [&sets[0], &sets[1], &sets[2]]
}

/// Searches the three weight vectors on `val` and reports on `test`.
pub fn evaluate<T: Scalar>(
    stage1: &FusionModel<T>,
    stage2: &GraphStage<T>,
    cm: &Matrix<T>,
    val: &Dataset,
    test: &Dataset,
    step: f64,
) -> Result<(PipelineWeights, PipelineReports), TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyTest);
    }
    let schema = test.schema();
    let (yv, yt) = (val.label_matrix::<f64>(), test.label_matrix::<f64>());
    let pv = predict_branches(stage1, stage2, cm, val)?;
    let pt = predict_branches(stage1, stage2, cm, test)?;
    let wf = search_or_uniform(&refs(&pv.fusion), &yv, step)?;
    let wg = search_or_uniform(&refs(&pv.graph), &yv, step)?;
    let pf_val = combine(&refs(&pv.fusion), &wf.weights, Source::Fusion)?;
    let pg_val = combine(&refs(&pv.graph), &wg.weights, Source::Graph)?;
    let wt = search_or_uniform(&[&pf_val, &pg_val], &yv, step)?;
    let pf = combine(&refs(&pt.fusion), &wf.weights, Source::Fusion)?;
    let pg = combine(&refs(&pt.graph), &wg.weights, Source::Graph)?;
    let total = combine(&[&pf, &pg], &wt.weights, Source::Total)?;
    let reports = PipelineReports {
        fusion: build_report(&pf, &yt, schema, Some(wf.clone()), vec![])?,
        graph: build_report(&pg, &yt, schema, Some(wg.clone()), vec![])?,
        geln: build_report(&total, &yt, schema, Some(wt.clone()), vec![wf.clone(), wg.clone()])?,
    };
    Ok((PipelineWeights { fusion_branches: wf, graph_branches: wg, total: wt }, reports))
}

pub fn param_counts<T: Scalar>(stage1: &FusionModel<T>, stage2: &GraphStage<T>) -> ParamCounts {
    let fusion_stage1 = stage1.param_count();
    let fusion_share = fusion_stage1 + stage2.joint_fusion.as_ref().map_or(0, |j| j.param_count());
    let graph = stage2.graph.param_count();
    ParamCounts { fusion_stage1, fusion_share, graph, total: fusion_share + graph }
}

/// Stage 1, stage 2, weight searches on validation and test reports.
///
/// The correlation matrix is counted over the train and validation cases.
pub fn run_pipeline<T: Scalar>(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    embedding: Option<LabelEmbedding<T>>,
) -> Result<PipelineOutput<T>, TrainError> {
    cfg.validate()?;
    let (train, val, test) = dataset.split();
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(TrainError::EmptyTest);
    }
    let cm = correlation_from_dataset::<f64>(dataset, cfg.cm_mode)?;
    let cm_t = cm.to_matrix().cast::<T>();
    let mut fusion = train_fusion_stage::<T>(&train, model_cfg, cfg)?;
    let stage1 = (cfg.variant == Variant::Freeze).then_some(&fusion.model);
    let mut graph = train_graph_stage(&train, &cm_t, stage1, model_cfg, cfg, embedding)?;
    let (weights, reports) = evaluate(&fusion.model, &graph, &cm_t, &val, &test, cfg.grid_step)?;
    fusion.model.set_branch_weights(weights.fusion_branches.weights.clone().try_into().expect("three weights"))?;
    graph.graph.set_branch_weights(weights.graph_branches.weights.clone().try_into().expect("three weights"))?;
    let param_counts = param_counts(&fusion.model, &graph);
    Ok(PipelineOutput { fusion, graph, cm, weights, reports, param_counts })
}

/// Headline numbers of one seeded pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub seed: u64,
    pub fusion_overall: f64,
    pub graph_overall: f64,
    pub geln_overall: f64,
    pub fusion_listed: f64,
    pub graph_listed: f64,
    pub geln_listed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub variant: Variant,
    pub rows: Vec<RepeatRow>,
    /// Keyed `fusion_overall`, `geln_listed`, ...; sample standard deviation.
    pub aggregate: indexmap::IndexMap<String, MeanStd>,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

pub fn aggregate_repeats(variant: Variant, rows: Vec<RepeatRow>) -> RepeatSummary {
    type Column = (&'static str, fn(&RepeatRow) -> f64);
    let columns: [Column; 6] = [
        ("fusion_overall", |r| r.fusion_overall),
        ("graph_overall", |r| r.graph_overall),
        ("geln_overall", |r| r.geln_overall),
        ("fusion_listed", |r| r.fusion_listed),
        ("graph_listed", |r| r.graph_listed),
        ("geln_listed", |r| r.geln_listed),
    ];
    let aggregate = columns
        .iter()
        .map(|(name, get)| {
            let v: Vec<f64> = rows.iter().map(get).collect();
            (name.to_string(), mean_std(&v))
        })
        .collect();
    RepeatSummary { variant, rows, aggregate }
}

impl RepeatSummary {
    /// Plain-text table of mean ± std in percent.
    pub fn to_table(&self) -> String {
        let cell = |k: &str| {
            let m = &self.aggregate[k];
            format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std)
        };
        let mut out = format!("variant: {}  runs: {}\n", self.variant, self.rows.len());
        out.push_str(&format!("{:<10} {:>18} {:>18}\n", "model", "overall AUC (%)", "listed AUC (%)"));
        for model in ["fusion", "graph", "geln"] {
            out.push_str(&format!(
                "{:<10} {:>18} {:>18}\n",
                model,
                cell(&format!("{model}_overall")),
                cell(&format!("{model}_listed"))
            ));
        }
        out
    }
}

/// One pipeline per seed in `seeds`, in parallel; rows come back in seed order.
pub fn run_repeats<F>(
    seeds: std::ops::Range<u64>,
    dataset_for_seed: F,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<RepeatSummary, TrainError>
where
    F: Fn(u64) -> Result<Dataset, TrainError> + Sync,
{
    let rows = seeds
        .collect::<Vec<u64>>()
        .into_par_iter()
        .map(|seed| {
            let data = dataset_for_seed(seed)?;
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let out = run_pipeline::<f64>(&data, model_cfg, &run_cfg, None)?;
            let r = &out.reports;
            Ok(RepeatRow {
                seed,
                fusion_overall: r.fusion.overall_mean_auc,
                graph_overall: r.graph.overall_mean_auc,
                geln_overall: r.geln.overall_mean_auc,
                fusion_listed: r.fusion.listed_mean_auc,
                graph_listed: r.graph.listed_mean_auc,
                geln_listed: r.geln.listed_mean_auc,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(aggregate_repeats(cfg.variant, rows))
}
