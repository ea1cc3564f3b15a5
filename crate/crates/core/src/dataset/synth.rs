use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Case, Dataset, DatasetError, FeatureDims, Features, LabelSchema, Modality, Split};
use crate::nn::component_rng;

/// Parameters of the planted-correlation generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub schema: LabelSchema,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub feature_dims: FeatureDims,
    /// Probability that a non-driver category copies the shared latent.
    pub correlation_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            schema: LabelSchema::spc(),
            n_train: 600,
            n_val: 200,
            n_test: 200,
            feature_dims: FeatureDims::default(),
            correlation_strength: 0.8,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.correlation_strength) {
            return Err(DatasetError::InvalidConfig("correlation_strength must lie in [0, 1]".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(DatasetError::InvalidConfig("noise_scale must be finite and nonnegative".into()));
        }
        if self.n_train == 0 {
            return Err(DatasetError::InvalidConfig("n_train must be at least 1".into()));
        }
        for m in Modality::ALL {
            if self.feature_dims.get(m) == 0 {
                return Err(DatasetError::ZeroDimension(m));
            }
        }
        Ok(())
    }
}

/// How strongly each modality observes each category's class pattern.
/// Category 0 is seen moderately by both; the rest alternate between a
/// strong and a weak modality.
fn visibility(modality: Modality, category: usize) -> f64 {
    if category == 0 {
        return 0.7;
    }
    let strong = match modality {
        Modality::Clinical => category.is_multiple_of(2),
        Modality::Dermoscopy => !category.is_multiple_of(2),
    };
    if strong {
        1.0
    } else {
        0.35
    }
}

const SIGNAL: f64 = 1.5;

struct Structure {
    marginals: Vec<WeightedIndex<f64>>,
    /// `patterns[modality][category][class]`
    patterns: [Vec<Vec<Vec<f64>>>; 2],
}

fn draw_structure(config: &SynthConfig) -> Structure {
    let mut rng = component_rng(config.seed, "synth.structure");
    let schema = &config.schema;
    let marginals = schema
        .categories()
        .iter()
        .map(|c| {
            let w: Vec<f64> = (0..c.classes.len()).map(|_| 1.0 + rng.random::<f64>()).collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let patterns = Modality::ALL.map(|m| {
        let dim = config.feature_dims.get(m);
        let scale = SIGNAL / (dim as f64).sqrt();
        schema
            .categories()
            .iter()
            .enumerate()
            .map(|(ci, cat)| {
                let v = visibility(m, ci) * scale;
                (0..cat.classes.len())
                    .map(|_| (0..dim).map(|_| v * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            })
            .collect()
    });
    Structure { marginals, patterns }
}

/// Generates a dataset with planted cross-category label dependence.
///
/// Category 0 is drawn from its marginal and acts as the shared latent `u`.
/// Every other category `i` takes class `u mod K_i` with probability
/// `correlation_strength`, otherwise an independent draw from its own
/// marginal. Each modality's features sum class-specific mean patterns
/// (with modality-dependent visibility per category) plus isotropic
/// Gaussian noise. Output is a pure function of `config`.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let schema = &config.schema;
    let structure = draw_structure(config);
    let mut rng = component_rng(config.seed, "synth.cases");
    let mut cases = Vec::with_capacity(config.n_train + config.n_val + config.n_test);
    for (split, n) in [(Split::Train, config.n_train), (Split::Val, config.n_val), (Split::Test, config.n_test)] {
        for idx in 0..n {
            let latent = structure.marginals[0].sample(&mut rng);
            let mut classes = vec![latent];
            for (ci, cat) in schema.categories().iter().enumerate().skip(1) {
                let coupled = rng.random::<f64>() < config.correlation_strength;
                let independent = structure.marginals[ci].sample(&mut rng);
                classes.push(if coupled { latent % cat.classes.len() } else { independent });
            }
            let mut features = Modality::ALL.map(|m| {
                let dim = config.feature_dims.get(m);
                let mut v = vec![0.0; dim];
                for (ci, &k) in classes.iter().enumerate() {
                    let pattern = &structure.patterns[m as usize][ci][k];
                    v.iter_mut().zip(pattern).for_each(|(x, p)| *x += p);
                }
                v
            });
            for v in features.iter_mut() {
                for x in v.iter_mut() {
                    *x += config.noise_scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let [clinical, dermoscopy] = features;
            let labels: BTreeMap<String, String> = schema
                .categories()
                .iter()
                .zip(&classes)
                .map(|(cat, &k)| (cat.name.clone(), cat.classes[k].clone()))
                .collect();
            let tag = match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            cases.push(Case {
                id: format!("{tag}-{idx:05}"),
                split,
                features: Features { clinical, dermoscopy },
                labels,
            });
        }
    }
    Dataset::new(schema.clone(), config.feature_dims, cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Category;

    fn small(strength: f64, n_train: usize, schema: LabelSchema) -> SynthConfig {
        SynthConfig {
            schema,
            n_train,
            n_val: 0,
            n_test: 0,
            feature_dims: FeatureDims { clinical: 3, dermoscopy: 2 },
            correlation_strength: strength,
            noise_scale: 1.0,
            seed: 11,
        }
    }

    fn two_categories() -> LabelSchema {
        LabelSchema::new(vec![Category::new("A", &["a0", "a1", "a2"]), Category::new("B", &["b0", "b1"])]).unwrap()
    }

    /// Counting oracle: p(j | i) and p(j) straight from the label strings.
    fn conditional(ds: &Dataset, (ca, a): (&str, &str), (cb, b): (&str, &str)) -> (f64, f64) {
        let has = |c: &Case, cat: &str, class: &str| c.labels[cat] == class;
        let n_a = ds.cases().iter().filter(|c| has(c, ca, a)).count() as f64;
        let n_ab = ds.cases().iter().filter(|c| has(c, ca, a) && has(c, cb, b)).count() as f64;
        let n_b = ds.cases().iter().filter(|c| has(c, cb, b)).count() as f64;
        (n_ab / n_a, n_b / ds.len() as f64)
    }

    #[test]
    fn independent_when_strength_zero() {
        let ds = synth_generate(&small(0.0, 10_000, two_categories())).unwrap();
        for a in ["a0", "a1", "a2"] {
            for b in ["b0", "b1"] {
                let (cond, marginal) = conditional(&ds, ("A", a), ("B", b));
                assert!((cond - marginal).abs() < 0.05, "p({b}|{a}) = {cond}, p({b}) = {marginal}");
                let (cond, marginal) = conditional(&ds, ("B", b), ("A", a));
                assert!((cond - marginal).abs() < 0.05);
            }
        }
    }

    #[test]
    fn designated_pair_is_deterministic_at_full_strength() {
        let ds = synth_generate(&small(1.0, 500, two_categories())).unwrap();
        let (cond, _) = conditional(&ds, ("A", "a0"), ("B", "b0"));
        assert_eq!(cond, 1.0);
        let ds = synth_generate(&small(1.0, 500, LabelSchema::spc())).unwrap();
        let (cond, _) = conditional(&ds, ("Diag", "BCC"), ("PN", "ABS"));
        assert_eq!(cond, 1.0);
    }

    #[test]
    fn deterministic_and_disjoint_splits() {
        let cfg = SynthConfig { n_train: 40, n_val: 10, n_test: 5, ..small(0.5, 40, LabelSchema::spc()) };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(crate::dataset::manifest_to_string(&a), crate::dataset::manifest_to_string(&b));
        let (tr, va, te) = a.split();
        assert_eq!((tr.len(), va.len(), te.len()), (40, 10, 5));
        let other = synth_generate(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn every_class_appears_with_enough_cases() {
        let schema = LabelSchema::spc();
        let n = 10 * schema.num_classes();
        let ds = synth_generate(&small(0.8, n, schema.clone())).unwrap();
        let labels = ds.label_matrix::<f64>();
        for (g, s) in labels.column_sums().iter().enumerate() {
            assert!(*s > 0.0, "class {} never drawn", schema.class_label(g));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(synth_generate(&small(1.5, 10, two_categories())).is_err());
        assert!(synth_generate(&small(0.5, 0, two_categories())).is_err());
        let mut cfg = small(0.5, 10, two_categories());
        cfg.noise_scale = -1.0;
        assert!(synth_generate(&cfg).is_err());
    }
}
