use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::nn::CategoryBlocks;

/// One labelling axis with mutually exclusive classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub name: String,
    pub classes: Vec<String>,
}

impl Category {
    pub fn new(name: &str, classes: &[&str]) -> Self {
        Self { name: name.to_string(), classes: classes.iter().map(|c| c.to_string()).collect() }
    }
}

/// Ordered categories; the global class index runs over all classes in
/// declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct LabelSchema {
    categories: Vec<Category>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<Category>> for LabelSchema {
    type Error = DatasetError;

    fn try_from(categories: Vec<Category>) -> Result<Self, Self::Error> {
        Self::new(categories)
    }
}

impl From<LabelSchema> for Vec<Category> {
    fn from(s: LabelSchema) -> Self {
        s.categories
    }
}

impl LabelSchema {
    pub fn new(categories: Vec<Category>) -> Result<Self, DatasetError> {
        if categories.is_empty() {
            return Err(DatasetError::InvalidSchema("schema has no categories".into()));
        }
        let mut names = HashSet::new();
        for cat in &categories {
            if !names.insert(cat.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!("duplicate category `{}`", cat.name)));
            }
            if cat.classes.len() < 2 {
                return Err(DatasetError::InvalidSchema(format!("category `{}` needs at least 2 classes", cat.name)));
            }
            let mut seen = HashSet::new();
            for class in &cat.classes {
                if !seen.insert(class.as_str()) {
                    return Err(DatasetError::InvalidSchema(format!(
                        "duplicate class `{class}` in category `{}`",
                        cat.name
                    )));
                }
            }
        }
        let mut offsets = Vec::with_capacity(categories.len());
        let mut acc = 0;
        for cat in &categories {
            offsets.push(acc);
            acc += cat.classes.len();
        }
        Ok(Self { categories, offsets })
    }

    /// Seven-point-checklist schema: diagnosis plus seven criteria, 24 classes.
    pub fn spc() -> Self {
        Self::new(vec![
            Category::new("Diag", &["BCC", "NEV", "MEL", "MISC", "SK"]),
            Category::new("PN", &["ABS", "TYP", "ATP"]),
            Category::new("BWV", &["ABS", "PRS"]),
            Category::new("RS", &["ABS", "PRS"]),
            Category::new("VS", &["ABS", "REG", "IR"]),
            Category::new("PIG", &["ABS", "REG", "IR"]),
            Category::new("STR", &["ABS", "REG", "IR"]),
            Category::new("DaG", &["ABS", "REG", "IR"]),
        ])
        .expect("static schema is valid")
    }

    /// `n` binary categories `C0..` with classes `NEG`/`POS`.
    pub fn binary(n: usize) -> Result<Self, DatasetError> {
        Self::new((0..n).map(|i| Category::new(&format!("C{i}"), &["NEG", "POS"])).collect())
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// `N`
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// `C`
    pub fn num_classes(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.categories.last().map_or(0, |c| c.classes.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.categories.iter().map(|c| c.classes.len()).collect()
    }

    pub fn offset(&self, category: usize) -> usize {
        self.offsets[category]
    }

    pub fn global_index(&self, category: usize, class: usize) -> usize {
        debug_assert!(class < self.categories[category].classes.len());
        self.offsets[category] + class
    }

    /// Inverse of [`global_index`](Self::global_index).
    pub fn locate(&self, global: usize) -> (usize, usize) {
        let cat = self.offsets.partition_point(|&o| o <= global) - 1;
        (cat, global - self.offsets[cat])
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn class_index(&self, category: usize, class: &str) -> Option<usize> {
        self.categories[category].classes.iter().position(|c| c == class)
    }

    /// `"category/class"`
    pub fn class_label(&self, global: usize) -> String {
        let (cat, class) = self.locate(global);
        let c = &self.categories[cat];
        format!("{}/{}", c.name, c.classes[class])
    }

    pub fn class_labels(&self) -> Vec<String> {
        (0..self.num_classes()).map(|g| self.class_label(g)).collect()
    }

    pub fn blocks(&self) -> CategoryBlocks {
        CategoryBlocks::from_sizes(&self.class_counts())
    }
}
