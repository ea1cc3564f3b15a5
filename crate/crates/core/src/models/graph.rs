use super::{
    accumulate, branch_loss, validate_simplex, weighted_average, Branch, Gcn, GcnActivation, GcnCache, GraphLoss,
    LabelEmbedding, ModelConfig, ModelError, UNIFORM3,
};
use crate::dataset::LabelSchema;
use crate::nn::{
    category_softmax, component_rng, join, swish, swish_backward, BatchNorm, BnCache, CategoryBlocks, Linear, Matrix,
    Mode, NnError, Parameterized,
};
use crate::scalar::Scalar;

/// Weight-shared part of the graph head: `(Linear → BN → Swish) × 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTrunk<T = f64> {
    pub l1: Linear<T>,
    pub bn1: BatchNorm<T>,
    pub l2: Linear<T>,
    pub bn2: BatchNorm<T>,
}

#[derive(Clone, Debug)]
pub struct TrunkCache<T = f64> {
    s: Matrix<T>,
    n1: Matrix<T>,
    bn1: Option<BnCache<T>>,
    h1: Matrix<T>,
    n2: Matrix<T>,
    bn2: Option<BnCache<T>>,
    h2: Matrix<T>,
}

impl<T: Scalar> GraphTrunk<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            bn1: self.bn1.zeros_like(),
            l2: self.l2.zeros_like(),
            bn2: self.bn2.zeros_like(),
        }
    }

    pub fn forward(&mut self, s: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, TrunkCache<T>), NnError> {
        let (n1, bn1) = self.bn1.forward(&self.l1.forward(s)?, mode)?;
        let h1 = swish(&n1);
        let (n2, bn2) = self.bn2.forward(&self.l2.forward(&h1)?, mode)?;
        let h2 = swish(&n2);
        Ok((h2.clone(), TrunkCache { s: s.clone(), n1, bn1, h1, n2, bn2, h2 }))
    }

    /// Returns `(∂L/∂s, grads)`.
    pub fn backward(&self, cache: &TrunkCache<T>, grad_h2: &Matrix<T>) -> Result<(Matrix<T>, GraphTrunk<T>), NnError> {
        let (bn1_cache, bn2_cache) = match (&cache.bn1, &cache.bn2) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(NnError::MissingCache),
        };
        let g = swish_backward(&cache.n2, grad_h2)?;
        let (g, bn2) = self.bn2.backward(bn2_cache, &g)?;
        let (g, l2) = self.l2.backward(&cache.h1, &g)?;
        let g = swish_backward(&cache.n1, &g)?;
        let (g, bn1) = self.bn1.backward(bn1_cache, &g)?;
        let (g_s, l1) = self.l1.backward(&cache.s, &g)?;
        Ok((g_s, GraphTrunk { l1, bn1, l2, bn2 }))
    }
}

impl<T: Scalar> Parameterized<T> for GraphTrunk<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.l1.visit_params(&join(prefix, "l1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.l2.visit_params(&join(prefix, "l2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.l1.visit_params_mut(&join(prefix, "l1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.l2.visit_params_mut(&join(prefix, "l2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
    }
}

/// Label embedding, one GCN per branch, the shared trunk and per-branch
/// per-category classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphModel<T = f64> {
    pub gcn_clinical: Gcn<T>,
    pub gcn_dermoscopy: Gcn<T>,
    pub gcn_fused: Gcn<T>,
    pub label_embedding: LabelEmbedding<T>,
    pub fcn_g_shared: GraphTrunk<T>,
    /// `heads[branch][category]`, each `H_g → K_i`.
    pub heads: [Vec<Linear<T>>; 3],
    /// Weights of the clinical, dermoscopy and fused branches in `P_G`.
    pub branch_weights: [f64; 3],
    blocks: CategoryBlocks,
}

/// Logits, probabilities and trunk cache of one branch head.
pub type HeadOutput<T> = (Matrix<T>, Matrix<T>, TrunkCache<T>);

#[derive(Clone, Debug)]
pub struct GraphOutput<T = f64> {
    pub z: [Matrix<T>; 3],
    pub logits: [Matrix<T>; 3],
    pub probs: [Matrix<T>; 3],
    pub p_g: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct GraphCache<T = f64> {
    gcn: Vec<GcnCache<T>>,
    trunk: Vec<TrunkCache<T>>,
    features: Vec<Matrix<T>>,
}

impl<T: Scalar> GraphModel<T> {
    /// Random model; a seeded Gaussian embedding is drawn unless one is given.
    pub fn new(
        config: &ModelConfig,
        schema: &LabelSchema,
        seed: u64,
        embedding: Option<LabelEmbedding<T>>,
    ) -> Result<Self, ModelError> {
        let c = schema.num_classes();
        let embedding =
            embedding.unwrap_or_else(|| LabelEmbedding::seeded(c, config.embed_dim, seed, config.train_embedding));
        if embedding.n_classes() != c {
            return Err(ModelError::Embedding(format!("{} rows for {c} classes", embedding.n_classes())));
        }
        let act = GcnActivation::LeakyRelu(config.gcn_slope);
        let (d, d1, out, hg) = (embedding.dim(), config.gcn_hidden, config.encoder_dim, config.graph_hidden);
        let mut rng = component_rng(seed, "graph.gcn");
        let gcn_clinical = Gcn::init(d, d1, out, act, &mut rng);
        let gcn_dermoscopy = Gcn::init(d, d1, out, act, &mut rng);
        let gcn_fused = Gcn::init(d, d1, out, act, &mut rng);
        let mut rng = component_rng(seed, "graph.trunk");
        let fcn_g_shared = GraphTrunk {
            l1: Linear::init(c, hg, &mut rng),
            bn1: BatchNorm::new(hg),
            l2: Linear::init(hg, hg, &mut rng),
            bn2: BatchNorm::new(hg),
        };
        let mut rng = component_rng(seed, "graph.heads");
        let heads = [(); 3].map(|_| schema.class_counts().into_iter().map(|k| Linear::init(hg, k, &mut rng)).collect());
        Ok(Self {
            gcn_clinical,
            gcn_dermoscopy,
            gcn_fused,
            label_embedding: embedding,
            fcn_g_shared,
            heads,
            branch_weights: UNIFORM3,
            blocks: schema.blocks(),
        })
    }

    pub fn blocks(&self) -> &CategoryBlocks {
        &self.blocks
    }

    pub fn set_branch_weights(&mut self, w: [f64; 3]) -> Result<(), ModelError> {
        validate_simplex(&w)?;
        self.branch_weights = w;
        Ok(())
    }

    pub fn gcn(&self, branch: Branch) -> &Gcn<T> {
        match branch {
            Branch::Clinical => &self.gcn_clinical,
            Branch::Dermoscopy => &self.gcn_dermoscopy,
            Branch::Fused => &self.gcn_fused,
        }
    }

    /// Sets the running-statistics momentum of both trunk batch norms.
    pub fn set_bn_momentum(&mut self, momentum: T) {
        self.fcn_g_shared.bn1.momentum = momentum;
        self.fcn_g_shared.bn2.momentum = momentum;
    }

    pub fn reset_bn_stats(&mut self) {
        self.fcn_g_shared.bn1.reset_running_stats();
        self.fcn_g_shared.bn2.reset_running_stats();
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gcn_clinical: self.gcn_clinical.zeros_like(),
            gcn_dermoscopy: self.gcn_dermoscopy.zeros_like(),
            gcn_fused: self.gcn_fused.zeros_like(),
            label_embedding: LabelEmbedding {
                lf: Matrix::zeros(self.label_embedding.n_classes(), self.label_embedding.dim()),
                trainable: self.label_embedding.trainable,
            },
            fcn_g_shared: self.fcn_g_shared.zeros_like(),
            heads: self.heads.clone().map(|hs| hs.iter().map(Linear::zeros_like).collect()),
            branch_weights: self.branch_weights,
            blocks: self.blocks.clone(),
        }
    }

    /// `Z` for one branch.
    pub fn node_features(&self, branch: Branch, cm: &Matrix<T>) -> Result<(Matrix<T>, GcnCache<T>), NnError> {
        self.gcn(branch).forward(&self.label_embedding.lf, cm)
    }

    /// Scores `s = x·Zᵀ` through the shared trunk and the branch's category
    /// heads; returns logits, probabilities and the trunk cache.
    pub fn head_forward(
        &mut self,
        z: &Matrix<T>,
        feature: &Matrix<T>,
        branch: Branch,
        mode: Mode,
    ) -> Result<HeadOutput<T>, NnError> {
        let s = feature.matmul_t(z)?;
        let (h2, cache) = self.fcn_g_shared.forward(&s, mode)?;
        let mut logits = Matrix::zeros(h2.rows(), self.blocks.width());
        for (head, range) in self.heads[branch as usize].iter().zip(self.blocks.ranges()) {
            logits.set_columns(range.start, &head.forward(&h2)?)?;
        }
        let probs = category_softmax(&logits, &self.blocks)?;
        Ok((logits, probs, cache))
    }

    /// All three branches; `features` are `f_c`, `f_d`, `f_f`.
    pub fn forward(
        &mut self,
        cm: &Matrix<T>,
        features: &[Matrix<T>; 3],
        mode: Mode,
    ) -> Result<(GraphOutput<T>, GraphCache<T>), NnError> {
        let mut z = Vec::with_capacity(3);
        let mut logits = Vec::with_capacity(3);
        let mut probs = Vec::with_capacity(3);
        let mut cache = GraphCache { gcn: Vec::new(), trunk: Vec::new(), features: features.to_vec() };
        for branch in Branch::ALL {
            let (zb, gc) = self.node_features(branch, cm)?;
            let (lb, pb, tc) = self.head_forward(&zb, &features[branch as usize], branch, mode)?;
            z.push(zb);
            logits.push(lb);
            probs.push(pb);
            cache.gcn.push(gc);
            cache.trunk.push(tc);
        }
        let p_g = weighted_average(&[&probs[0], &probs[1], &probs[2]], &self.branch_weights)?;
        let three = |v: Vec<Matrix<T>>| -> [Matrix<T>; 3] { v.try_into().expect("three branches") };
        Ok((GraphOutput { z: three(z), logits: three(logits), probs: three(probs), p_g }, cache))
    }

    /// `L_G = L_GC + L_GD + L_GF`.
    pub fn loss(&self, out: &GraphOutput<T>, targets: &Matrix<T>) -> Result<GraphLoss<T>, NnError> {
        branch_loss(&out.logits, targets, &self.blocks)
    }

    /// Parameter gradients and gradients on the three input feature matrices.
    pub fn backward(
        &self,
        cm: &Matrix<T>,
        out: &GraphOutput<T>,
        cache: &GraphCache<T>,
        grad_logits: &[Matrix<T>; 3],
    ) -> Result<(GraphModel<T>, [Matrix<T>; 3]), NnError> {
        let mut grads = self.zeros_like();
        let mut feature_grads = Vec::with_capacity(3);
        for branch in Branch::ALL {
            let b = branch as usize;
            let h2 = &cache.trunk[b].h2;
            let mut g_h2 = Matrix::zeros(h2.rows(), h2.cols());
            for (i, (head, range)) in self.heads[b].iter().zip(self.blocks.ranges()).enumerate() {
                let (g, gh) = head.backward(h2, &grad_logits[b].columns(range.clone()))?;
                g_h2.add_assign(&g)?;
                grads.heads[b][i] = gh;
            }
            let (g_s, trunk) = self.fcn_g_shared.backward(&cache.trunk[b], &g_h2)?;
            accumulate(&mut grads.fcn_g_shared, &trunk);
            feature_grads.push(g_s.matmul(&out.z[b])?);
            let g_z = g_s.t_matmul(&cache.features[b])?;
            let (g_lf, gcn) = self.gcn(branch).backward(cm, &cache.gcn[b], &g_z)?;
            grads.label_embedding.lf.add_assign(&g_lf)?;
            match branch {
                Branch::Clinical => grads.gcn_clinical = gcn,
                Branch::Dermoscopy => grads.gcn_dermoscopy = gcn,
                Branch::Fused => grads.gcn_fused = gcn,
            }
        }
        Ok((grads, feature_grads.try_into().expect("three branches")))
    }
}

impl<T: Scalar> Parameterized<T> for GraphModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.gcn_clinical.visit_params(&join(prefix, "gcn_clinical"), f);
        self.gcn_dermoscopy.visit_params(&join(prefix, "gcn_dermoscopy"), f);
        self.gcn_fused.visit_params(&join(prefix, "gcn_fused"), f);
        self.label_embedding.visit_params(&join(prefix, "label_embedding"), f);
        self.fcn_g_shared.visit_params(&join(prefix, "fcn_g_shared"), f);
        for branch in Branch::ALL {
            for (i, head) in self.heads[branch as usize].iter().enumerate() {
                head.visit_params(&join(prefix, &format!("fc_{}.{i}", branch.name())), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.gcn_clinical.visit_params_mut(&join(prefix, "gcn_clinical"), f);
        self.gcn_dermoscopy.visit_params_mut(&join(prefix, "gcn_dermoscopy"), f);
        self.gcn_fused.visit_params_mut(&join(prefix, "gcn_fused"), f);
        self.label_embedding.visit_params_mut(&join(prefix, "label_embedding"), f);
        self.fcn_g_shared.visit_params_mut(&join(prefix, "fcn_g_shared"), f);
        for branch in Branch::ALL {
            for (i, head) in self.heads[branch as usize].iter_mut().enumerate() {
                head.visit_params_mut(&join(prefix, &format!("fc_{}.{i}", branch.name())), f);
            }
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.label_embedding.visit_buffers(&join(prefix, "label_embedding"), f);
        self.fcn_g_shared.visit_buffers(&join(prefix, "fcn_g_shared"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.label_embedding.visit_buffers_mut(&join(prefix, "label_embedding"), f);
        self.fcn_g_shared.visit_buffers_mut(&join(prefix, "fcn_g_shared"), f);
    }
}
