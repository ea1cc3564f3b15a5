use std::time::Instant;

use super::{chunk, epoch_batches, EpochLog, Stage, SwaState, TrainConfig, TrainError, Variant};
use crate::dataset::{Dataset, Modality};
use crate::models::{Branch, FusionModel, GraphModel, LabelEmbedding, ModelConfig};
use crate::nn::{Adam, AdamConfig, CosineSchedule, Matrix, Mode};
use crate::scalar::Scalar;

pub struct FusionStage<T = f64> {
    pub model: FusionModel<T>,
    pub log: Vec<EpochLog>,
}

pub struct GraphStage<T = f64> {
    pub graph: GraphModel<T>,
    /// The jointly trained fusion model of the unfreeze variant.
    pub joint_fusion: Option<FusionModel<T>>,
    pub log: Vec<EpochLog>,
}

impl<T: Scalar> GraphStage<T> {
    /// The model whose encoders feed the graph model.
    pub fn encoder<'a>(&'a self, stage1: &'a FusionModel<T>) -> &'a FusionModel<T> {
        self.joint_fusion.as_ref().unwrap_or(stage1)
    }
}

struct Inputs<T> {
    clinical: Matrix<T>,
    dermoscopy: Matrix<T>,
    targets: Matrix<T>,
}

fn inputs<T: Scalar>(data: &Dataset) -> Result<Inputs<T>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    Ok(Inputs {
        clinical: data.feature_matrix(Modality::Clinical),
        dermoscopy: data.feature_matrix(Modality::Dermoscopy),
        targets: data.label_matrix(),
    })
}

fn in_swa_window(cfg: &TrainConfig, epoch: usize) -> bool {
    cfg.swa_last_epochs > 0 && epoch + cfg.swa_last_epochs >= cfg.epochs
}

/// Stage 1: minimizes `L_F` over the fusion model only.
pub fn train_fusion_stage<T: Scalar>(
    train: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FusionStage<T>, TrainError> {
    cfg.validate()?;
    let data = inputs::<T>(train)?;
    let n = train.len();
    let mut model = FusionModel::new(model_cfg, train.feature_dims(), train.schema(), cfg.seed, "fusion.stage1");
    let mut adam = Adam::new(AdamConfig::default());
    let schedule = CosineSchedule::new(cfg.base_lr, cfg.epochs, cfg.min_lr);
    let mut swa = SwaState::new(false);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = schedule.lr(epoch);
        let mut total = 0.0;
        for batch in epoch_batches(n, cfg.batch_size, cfg.seed, "fusion", epoch)? {
            let (out, cache) =
                model.forward(&data.clinical.select_rows(&batch), &data.dermoscopy.select_rows(&batch))?;
            let loss = model.loss(&out, &data.targets.select_rows(&batch))?;
            let grads = model.backward(&out, &cache, &loss.grad_logits)?;
            adam.step(&mut model, &grads, lr)?;
            total += loss.total.to_f64_lossy() * batch.len() as f64;
        }
        if in_swa_window(cfg, epoch) {
            swa.snapshot(&model);
        }
        log.push(EpochLog {
            stage: Stage::Fusion,
            epoch,
            lr,
            loss: total / n as f64,
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
    }
    if swa.count() > 0 {
        swa.apply(&mut model)?;
    }
    Ok(FusionStage { model, log })
}

/// Recomputes the trunk's batch-norm statistics as the plain average over
/// one ordered pass of training batches, without touching weights.
fn reestimate_bn<T: Scalar>(
    graph: &mut GraphModel<T>,
    cm: &Matrix<T>,
    features: &[Matrix<T>; 3],
    batch_size: usize,
) -> Result<(), TrainError> {
    let momentum = graph.fcn_g_shared.bn1.momentum;
    graph.reset_bn_stats();
    let z = [
        graph.node_features(Branch::Clinical, cm)?.0,
        graph.node_features(Branch::Dermoscopy, cm)?.0,
        graph.node_features(Branch::Fused, cm)?.0,
    ];
    let mut k = 0usize;
    for batch in chunk((0..features[0].rows()).collect(), batch_size) {
        for branch in Branch::ALL {
            let b = branch as usize;
            graph.set_bn_momentum(T::one() / T::of_usize(k + 1));
            graph.head_forward(&z[b], &features[b].select_rows(&batch), branch, Mode::Train)?;
            k += 1;
        }
    }
    graph.set_bn_momentum(momentum);
    Ok(())
}

/// Stage 2: minimizes `L_G`.
///
/// Freeze: features come from `stage1`, which is only read. Unfreeze: a
/// fresh fusion model is trained jointly and returned in `joint_fusion`.
pub fn train_graph_stage<T: Scalar>(
    train: &Dataset,
    cm: &Matrix<T>,
    stage1: Option<&FusionModel<T>>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    embedding: Option<LabelEmbedding<T>>,
) -> Result<GraphStage<T>, TrainError> {
    cfg.validate()?;
    let data = inputs::<T>(train)?;
    let n = train.len();
    let schema = train.schema();
    let mut graph = GraphModel::new(model_cfg, schema, cfg.seed, embedding)?;
    let mut joint = match cfg.variant {
        Variant::Freeze => None,
        Variant::Unfreeze => Some(FusionModel::new(model_cfg, train.feature_dims(), schema, cfg.seed, "fusion.joint")),
    };
    let frozen_features = match (cfg.variant, stage1) {
        (Variant::Freeze, None) => return Err(TrainError::MissingFusion),
        (Variant::Freeze, Some(f)) => Some(f.encode(&data.clinical, &data.dermoscopy)?.0),
        (Variant::Unfreeze, _) => None,
    };
    let mut graph_adam = Adam::new(AdamConfig::default());
    let mut joint_adam = Adam::new(AdamConfig::default());
    let schedule = CosineSchedule::new(cfg.base_lr, cfg.epochs, cfg.min_lr);
    let mut graph_swa = SwaState::new(true);
    let mut joint_swa = SwaState::new(false);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = schedule.lr(epoch);
        let mut total = 0.0;
        for batch in epoch_batches(n, cfg.batch_size, cfg.seed, "graph", epoch)? {
            let targets = data.targets.select_rows(&batch);
            let (features, fusion_cache) = match (&frozen_features, &joint) {
                (Some(all), _) => ([0, 1, 2].map(|b| all[b].select_rows(&batch)), None),
                (None, Some(j)) => {
                    let (f, c) = j.encode(&data.clinical.select_rows(&batch), &data.dermoscopy.select_rows(&batch))?;
                    (f, Some(c))
                }
                (None, None) => unreachable!("unfreeze always builds a joint model"),
            };
            let (out, cache) = graph.forward(cm, &features, Mode::Train)?;
            let loss = graph.loss(&out, &targets)?;
            let (grads, feature_grads) = graph.backward(cm, &out, &cache, &loss.grad_logits)?;
            graph_adam.step(&mut graph, &grads, lr)?;
            if let (Some(j), Some(c)) = (joint.as_mut(), fusion_cache) {
                let jg = j.backward_features(&c, &feature_grads)?;
                joint_adam.step(j, &jg, lr)?;
            }
            total += loss.total.to_f64_lossy() * batch.len() as f64;
        }
        if in_swa_window(cfg, epoch) {
            graph_swa.snapshot(&graph);
            if let Some(j) = &joint {
                joint_swa.snapshot(j);
            }
        }
        log.push(EpochLog {
            stage: Stage::Graph,
            epoch,
            lr,
            loss: total / n as f64,
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
    }
    if graph_swa.count() > 0 {
        graph_swa.apply(&mut graph)?;
        if let Some(j) = joint.as_mut() {
            joint_swa.apply(j)?;
        }
        if graph_swa.reestimate_bn {
            let features = match (&frozen_features, &joint) {
                (Some(f), _) => f.clone(),
                (None, Some(j)) => j.encode(&data.clinical, &data.dermoscopy)?.0,
                (None, None) => unreachable!("unfreeze always builds a joint model"),
            };
            reestimate_bn(&mut graph, cm, &features, cfg.batch_size)?;
        }
    }
    Ok(GraphStage { graph, joint_fusion: joint, log })
}

/// `L_F` over a whole dataset in one batch.
pub fn fusion_loss_on<T: Scalar>(model: &FusionModel<T>, data: &Dataset) -> Result<f64, TrainError> {
    let d = inputs::<T>(data)?;
    let (out, _) = model.forward(&d.clinical, &d.dermoscopy)?;
    Ok(model.loss(&out, &d.targets)?.total.to_f64_lossy())
}

/// `L_G` over a whole dataset in one eval-mode batch.
pub fn graph_loss_on<T: Scalar>(
    graph: &GraphModel<T>,
    encoder: &FusionModel<T>,
    cm: &Matrix<T>,
    data: &Dataset,
) -> Result<f64, TrainError> {
    let d = inputs::<T>(data)?;
    let (features, _) = encoder.encode(&d.clinical, &d.dermoscopy)?;
    let mut g = graph.clone();
    let (out, _) = g.forward(cm, &features, Mode::Eval)?;
    Ok(g.loss(&out, &d.targets)?.total.to_f64_lossy())
}
