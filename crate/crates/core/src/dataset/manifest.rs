use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Case, Dataset, DatasetError, FeatureDims, LabelSchema};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: LabelSchema,
    feature_dims: FeatureDims,
    cases: Vec<Case>,
}

pub fn manifest_from_str(text: &str) -> Result<Dataset, DatasetError> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    Dataset::new(m.schema, m.feature_dims, m.cases)
}

pub fn manifest_to_string(dataset: &Dataset) -> String {
    let m = Manifest {
        schema: dataset.schema().clone(),
        feature_dims: dataset.feature_dims(),
        cases: dataset.cases().to_vec(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serialization")
}

pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    manifest_from_str(&text)
}

pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, manifest_to_string(dataset)).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use proptest::prelude::*;

    const ONE_CASE: &str = r#"{
      "schema": [
        {"name": "Diag", "classes": ["BCC", "NEV", "MEL", "MISC", "SK"]},
        {"name": "PN", "classes": ["ABS", "TYP", "ATP"]},
        {"name": "BWV", "classes": ["ABS", "PRS"]},
        {"name": "RS", "classes": ["ABS", "PRS"]},
        {"name": "VS", "classes": ["ABS", "REG", "IR"]},
        {"name": "PIG", "classes": ["ABS", "REG", "IR"]},
        {"name": "STR", "classes": ["ABS", "REG", "IR"]},
        {"name": "DaG", "classes": ["ABS", "REG", "IR"]}
      ],
      "feature_dims": {"clinical": 2, "dermoscopy": 1},
      "cases": [
        {"id": "case-1", "split": "train",
         "features": {"clinical": [0.5, -1.25], "dermoscopy": [3]},
         "labels": {"Diag": "MEL", "PN": "ATP", "BWV": "PRS", "RS": "ABS",
                    "VS": "ABS", "PIG": "IR", "STR": "REG", "DaG": "IR"}}
      ]
    }"#;

    #[test]
    fn loads_spc_manifest() {
        let ds = manifest_from_str(ONE_CASE).unwrap();
        assert_eq!(ds.schema().num_classes(), 24);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.schema(), &LabelSchema::spc());
    }

    #[test]
    fn reports_missing_label_and_bad_dims() {
        let missing = ONE_CASE.replace(r#""BWV": "PRS", "#, "");
        let err = manifest_from_str(&missing).unwrap_err().to_string();
        assert!(err.contains("missing category label") && err.contains("BWV"), "{err}");
        let short = ONE_CASE.replace("[0.5, -1.25]", "[0.5]");
        let err = manifest_from_str(&short).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch") && err.contains("features.clinical"), "{err}");
        assert!(matches!(manifest_from_str("{"), Err(DatasetError::Malformed(_))));
        assert!(matches!(load_manifest(Path::new("/nonexistent/m.json")), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn file_roundtrip() {
        let ds = manifest_from_str(ONE_CASE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_manifest(&ds, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), ds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn synthetic_manifests_roundtrip(seed in any::<u64>(), noise in 0.0f64..3.0) {
            let cfg = SynthConfig {
                n_train: 7, n_val: 3, n_test: 2,
                feature_dims: FeatureDims { clinical: 5, dermoscopy: 4 },
                noise_scale: noise, seed, ..SynthConfig::default()
            };
            let ds = synth_generate(&cfg).unwrap();
            prop_assert_eq!(manifest_from_str(&manifest_to_string(&ds)).unwrap(), ds);
        }
    }
}
