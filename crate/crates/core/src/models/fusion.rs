use rand::Rng;

use super::{branch_loss, validate_simplex, weighted_average, FusionLoss, ModelConfig, ModelError, UNIFORM3};
use crate::dataset::{FeatureDims, LabelSchema};
use crate::nn::{
    category_softmax, component_rng, join, swish, swish_backward, CategoryBlocks, Linear, Matrix, NnError,
    Parameterized,
};
use crate::scalar::Scalar;

/// Two-layer perceptron `in → H → D` with Swish on the hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T = f64> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T = f64> {
    x: Matrix<T>,
    pre: Matrix<T>,
    hidden: Matrix<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Self { l1: Linear::init(in_dim, hidden, rng), l2: Linear::init(hidden, out_dim, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { l1: self.l1.zeros_like(), l2: self.l2.zeros_like() }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, EncoderCache<T>), NnError> {
        let pre = self.l1.forward(x)?;
        let hidden = swish(&pre);
        let out = self.l2.forward(&hidden)?;
        Ok((out, EncoderCache { x: x.clone(), pre, hidden }))
    }

    pub fn backward(&self, cache: &EncoderCache<T>, grad_out: &Matrix<T>) -> Result<Encoder<T>, NnError> {
        let (g_hidden, l2) = self.l2.backward(&cache.hidden, grad_out)?;
        let g_pre = swish_backward(&cache.pre, &g_hidden)?;
        let (_, l1) = self.l1.backward(&cache.x, &g_pre)?;
        Ok(Encoder { l1, l2 })
    }
}

impl<T: Scalar> Parameterized<T> for Encoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.l1.visit_params(&join(prefix, "l1"), f);
        self.l2.visit_params(&join(prefix, "l2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.l1.visit_params_mut(&join(prefix, "l1"), f);
        self.l2.visit_params_mut(&join(prefix, "l2"), f);
    }
}

/// Clinical and dermoscopy encoders, summation fusion and three linear heads.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T = f64> {
    pub encoder_clinical: Encoder<T>,
    pub encoder_dermoscopy: Encoder<T>,
    pub fcn_f_clinical: Linear<T>,
    pub fcn_f_dermoscopy: Linear<T>,
    pub fcn_f_fused: Linear<T>,
    /// Weights of the clinical, dermoscopy and fused branches in `P_F`.
    pub branch_weights: [f64; 3],
    blocks: CategoryBlocks,
}

/// Branch features, logits and probabilities for one batch, ordered
/// clinical, dermoscopy, fused.
#[derive(Clone, Debug)]
pub struct FusionOutput<T = f64> {
    pub features: [Matrix<T>; 3],
    pub logits: [Matrix<T>; 3],
    pub probs: [Matrix<T>; 3],
    pub p_f: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct FusionCache<T = f64> {
    clinical: EncoderCache<T>,
    dermoscopy: EncoderCache<T>,
}

impl<T: Scalar> FusionModel<T> {
    /// Randomly initialized model; `tag` separates independent instances
    /// under the same root seed.
    pub fn new(config: &ModelConfig, dims: FeatureDims, schema: &LabelSchema, seed: u64, tag: &str) -> Self {
        let mut rng = component_rng(seed, tag);
        let (h, d, c) = (config.hidden, config.encoder_dim, schema.num_classes());
        Self {
            encoder_clinical: Encoder::init(dims.clinical, h, d, &mut rng),
            encoder_dermoscopy: Encoder::init(dims.dermoscopy, h, d, &mut rng),
            fcn_f_clinical: Linear::init(d, c, &mut rng),
            fcn_f_dermoscopy: Linear::init(d, c, &mut rng),
            fcn_f_fused: Linear::init(d, c, &mut rng),
            branch_weights: UNIFORM3,
            blocks: schema.blocks(),
        }
    }

    pub fn blocks(&self) -> &CategoryBlocks {
        &self.blocks
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder_clinical.out_dim()
    }

    pub fn set_branch_weights(&mut self, w: [f64; 3]) -> Result<(), ModelError> {
        validate_simplex(&w)?;
        self.branch_weights = w;
        Ok(())
    }

    /// Gradient container with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder_clinical: self.encoder_clinical.zeros_like(),
            encoder_dermoscopy: self.encoder_dermoscopy.zeros_like(),
            fcn_f_clinical: self.fcn_f_clinical.zeros_like(),
            fcn_f_dermoscopy: self.fcn_f_dermoscopy.zeros_like(),
            fcn_f_fused: self.fcn_f_fused.zeros_like(),
            branch_weights: self.branch_weights,
            blocks: self.blocks.clone(),
        }
    }

    fn heads(&self) -> [&Linear<T>; 3] {
        [&self.fcn_f_clinical, &self.fcn_f_dermoscopy, &self.fcn_f_fused]
    }

    /// `f_c`, `f_d` and `f_f = f_c + f_d`.
    pub fn encode(&self, x_c: &Matrix<T>, x_d: &Matrix<T>) -> Result<([Matrix<T>; 3], FusionCache<T>), NnError> {
        let (f_c, clinical) = self.encoder_clinical.forward(x_c)?;
        let (f_d, dermoscopy) = self.encoder_dermoscopy.forward(x_d)?;
        let f_f = f_c.add(&f_d)?;
        Ok(([f_c, f_d, f_f], FusionCache { clinical, dermoscopy }))
    }

    pub fn forward(&self, x_c: &Matrix<T>, x_d: &Matrix<T>) -> Result<(FusionOutput<T>, FusionCache<T>), NnError> {
        let (features, cache) = self.encode(x_c, x_d)?;
        let heads = self.heads();
        let logits = [0, 1, 2].map(|b| heads[b].forward(&features[b]));
        let [l0, l1, l2] = logits;
        let logits = [l0?, l1?, l2?];
        let probs = [
            category_softmax(&logits[0], &self.blocks)?,
            category_softmax(&logits[1], &self.blocks)?,
            category_softmax(&logits[2], &self.blocks)?,
        ];
        let p_f = weighted_average(&[&probs[0], &probs[1], &probs[2]], &self.branch_weights)?;
        Ok((FusionOutput { features, logits, probs, p_f }, cache))
    }

    /// `L_F = L_FC + L_FD + L_FF` with gradients per branch logits.
    pub fn loss(&self, out: &FusionOutput<T>, targets: &Matrix<T>) -> Result<FusionLoss<T>, NnError> {
        branch_loss(&out.logits, targets, &self.blocks)
    }

    /// Gradients of all parameters given gradients on the three branch logits.
    pub fn backward(
        &self,
        out: &FusionOutput<T>,
        cache: &FusionCache<T>,
        grad_logits: &[Matrix<T>; 3],
    ) -> Result<FusionModel<T>, NnError> {
        let heads = self.heads();
        let mut head_grads = Vec::with_capacity(3);
        let mut feature_grads = Vec::with_capacity(3);
        for b in 0..3 {
            let (gx, gh) = heads[b].backward(&out.features[b], &grad_logits[b])?;
            feature_grads.push(gx);
            head_grads.push(gh);
        }
        let feature_grads: [Matrix<T>; 3] = feature_grads.try_into().expect("three branches");
        let mut grads = self.backward_features(cache, &feature_grads)?;
        let mut it = head_grads.into_iter();
        grads.fcn_f_clinical = it.next().expect("head");
        grads.fcn_f_dermoscopy = it.next().expect("head");
        grads.fcn_f_fused = it.next().expect("head");
        Ok(grads)
    }

    /// Encoder gradients given gradients on `f_c`, `f_d` and `f_f`; heads
    /// receive zero.
    pub fn backward_features(
        &self,
        cache: &FusionCache<T>,
        grad_features: &[Matrix<T>; 3],
    ) -> Result<FusionModel<T>, NnError> {
        let g_c = grad_features[0].add(&grad_features[2])?;
        let g_d = grad_features[1].add(&grad_features[2])?;
        let mut grads = self.zeros_like();
        grads.encoder_clinical = self.encoder_clinical.backward(&cache.clinical, &g_c)?;
        grads.encoder_dermoscopy = self.encoder_dermoscopy.backward(&cache.dermoscopy, &g_d)?;
        Ok(grads)
    }
}

impl<T: Scalar> Parameterized<T> for FusionModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        self.encoder_clinical.visit_params(&join(prefix, "encoder_clinical"), f);
        self.encoder_dermoscopy.visit_params(&join(prefix, "encoder_dermoscopy"), f);
        self.fcn_f_clinical.visit_params(&join(prefix, "fcn_f_clinical"), f);
        self.fcn_f_dermoscopy.visit_params(&join(prefix, "fcn_f_dermoscopy"), f);
        self.fcn_f_fused.visit_params(&join(prefix, "fcn_f_fused"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        self.encoder_clinical.visit_params_mut(&join(prefix, "encoder_clinical"), f);
        self.encoder_dermoscopy.visit_params_mut(&join(prefix, "encoder_dermoscopy"), f);
        self.fcn_f_clinical.visit_params_mut(&join(prefix, "fcn_f_clinical"), f);
        self.fcn_f_dermoscopy.visit_params_mut(&join(prefix, "fcn_f_dermoscopy"), f);
        self.fcn_f_fused.visit_params_mut(&join(prefix, "fcn_f_fused"), f);
    }
}
