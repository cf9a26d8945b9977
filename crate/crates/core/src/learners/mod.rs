//! Deterministic learners for the experiment pipeline.
//!
//! Both learners see the dataset's numeric features followed, when
//! `use_protected_feature` is set, by the group indicator as one more column.
//! A score is a probability in `[0, 1]`; the binary prediction is
//! `score >= threshold`.

mod logistic;
mod tree;

use serde::{Deserialize, Serialize};

use crate::group::Group;

pub use logistic::LogisticTrace;
pub use tree::{depth as tree_depth, TreeNode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("no training rows")]
    EmptyData,
    #[error("logistic regression needs both labels in the training data")]
    SingleClass,
    #[error("Newton system stayed singular after ridge {ridge}")]
    SingularFit { ridge: f64 },
    #[error("model expects {expected} features, dataset has {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// Individuals with numeric features, a protected group and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major, `len() * n_features()` values.
    features: Vec<f64>,
    group: Vec<Group>,
    label: Vec<bool>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        group: Vec<Group>,
        label: Vec<bool>,
        feature_names: Vec<String>,
    ) -> Result<Self, LearnerError> {
        let rows = group.len();
        if label.len() != rows || features.len() != rows * feature_names.len() {
            return Err(LearnerError::InvalidDataset(format!(
                "{} groups, {} labels, {} feature values for {} columns",
                rows,
                label.len(),
                features.len(),
                feature_names.len()
            )));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            let d = feature_names.len();
            return Err(LearnerError::InvalidDataset(format!(
                "non-finite value in row {}, column {:?}",
                i / d,
                feature_names[i % d]
            )));
        }
        Ok(Self {
            features,
            group,
            label,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn group(&self, i: usize) -> Group {
        self.group[i]
    }

    pub fn label(&self, i: usize) -> bool {
        self.label[i]
    }

    pub fn groups(&self) -> &[Group] {
        &self.group
    }

    pub fn labels(&self) -> &[bool] {
        &self.label
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            group: indices.iter().map(|&i| self.group[i]).collect(),
            label: indices.iter().map(|&i| self.label[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Learner input for row `i`.
    fn input_row(&self, i: usize, with_group: bool, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.row(i));
        if with_group {
            out.push(self.group[i].index() as f64);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Logistic,
    Tree,
    /// Accepted in configs so experiments can name it; [`train`] rejects it
    /// and the harness substitutes a deeper tree.
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Newton iterations for logistic regression.
    pub max_iter: usize,
    /// L2 penalty on standardized logistic coefficients.
    pub ridge: f64,
    /// Logistic convergence threshold on the largest coefficient step.
    pub tol: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub threshold: f64,
    pub use_protected_feature: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Logistic,
            max_iter: 50,
            ridge: 1e-6,
            tol: 1e-8,
            max_depth: 5,
            min_leaf: 10,
            threshold: 0.5,
            use_protected_feature: true,
        }
    }
}

impl LearnerConfig {
    pub fn logistic() -> Self {
        Self::default()
    }

    pub fn tree() -> Self {
        Self {
            kind: LearnerKind::Tree,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidConfig(m.into()));
        if self.max_iter == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return bad("iteration, depth and leaf bounds must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.ridge >= 0.0 && self.tol > 0.0) {
            return bad("ridge must be nonnegative and tol positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    /// Coefficients act on `(x - mean) / scale`.
    Logistic {
        means: Vec<f64>,
        scales: Vec<f64>,
        coefficients: Vec<f64>,
        intercept: f64,
    },
    /// Node 0 is the root.
    Tree { nodes: Vec<TreeNode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: LearnerKind,
    pub threshold: f64,
    pub use_protected_feature: bool,
    /// Dataset columns the model expects, excluding the group indicator.
    pub n_features: usize,
    pub params: ModelParams,
    pub training_seed: u64,
}

impl FittedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Logistic {
                means,
                scales,
                coefficients,
                intercept,
            } => {
                let z = x
                    .iter()
                    .zip(means)
                    .zip(scales)
                    .zip(coefficients)
                    .fold(*intercept, |acc, (((v, m), s), w)| acc + w * (v - m) / s);
                logistic::sigmoid(z)
            }
            ModelParams::Tree { nodes } => tree::score(nodes, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Fits a model. Deterministic in `(ds, cfg)`; `seed` is recorded.
pub fn train(ds: &Dataset, cfg: &LearnerConfig, seed: u64) -> Result<FittedModel, LearnerError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(LearnerError::EmptyData);
    }
    let params = match cfg.kind {
        LearnerKind::Logistic => logistic::fit(ds, cfg)?.0,
        LearnerKind::Tree => tree::fit(ds, cfg),
        LearnerKind::RandomForest => {
            return Err(LearnerError::InvalidConfig(
                "random forests are not implemented".into(),
            ))
        }
    };
    Ok(FittedModel {
        kind: cfg.kind,
        threshold: cfg.threshold,
        use_protected_feature: cfg.use_protected_feature,
        n_features: ds.n_features(),
        params,
        training_seed: seed,
    })
}

/// Logistic fit plus the penalized loss after every accepted step.
pub fn train_logistic_traced(
    ds: &Dataset,
    cfg: &LearnerConfig,
) -> Result<(FittedModel, LogisticTrace), LearnerError> {
    let cfg = LearnerConfig {
        kind: LearnerKind::Logistic,
        ..cfg.clone()
    };
    cfg.validate()?;
    if ds.is_empty() {
        return Err(LearnerError::EmptyData);
    }
    let (params, trace) = logistic::fit(ds, &cfg)?;
    let model = FittedModel {
        kind: cfg.kind,
        threshold: cfg.threshold,
        use_protected_feature: cfg.use_protected_feature,
        n_features: ds.n_features(),
        params,
        training_seed: 0,
    };
    Ok((model, trace))
}

pub fn predict(model: &FittedModel, ds: &Dataset) -> Result<Predictions, LearnerError> {
    if ds.n_features() != model.n_features {
        return Err(LearnerError::ArityMismatch {
            expected: model.n_features,
            got: ds.n_features(),
        });
    }
    let mut x = Vec::with_capacity(ds.n_features() + 1);
    let mut scores = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        ds.input_row(i, model.use_protected_feature, &mut x);
        scores.push(model.score_row(&x));
    }
    let labels = scores.iter().map(|&s| s >= model.threshold).collect();
    Ok(Predictions { scores, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Label is `x1 > x2` on a grid that avoids the boundary.
    fn separable() -> Dataset {
        let mut f = Vec::new();
        let mut g = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                if i == j {
                    continue;
                }
                f.extend_from_slice(&[i as f64 / 19.0, j as f64 / 19.0]);
                g.push(if (i + j) % 2 == 0 {
                    Group::Zero
                } else {
                    Group::One
                });
                y.push(i > j);
            }
        }
        Dataset::new(f, g, y, vec!["x1".into(), "x2".into()]).unwrap()
    }

    fn accuracy(model: &FittedModel, ds: &Dataset) -> f64 {
        let p = predict(model, ds).unwrap();
        let hits = p
            .labels
            .iter()
            .zip(ds.labels())
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / ds.len() as f64
    }

    #[test]
    fn both_learners_fit_a_separable_set() {
        let ds = separable();
        let lr = train(&ds, &LearnerConfig::logistic(), 1).unwrap();
        assert!(accuracy(&lr, &ds) >= 0.99);
        let tree_cfg = LearnerConfig {
            max_depth: 12,
            min_leaf: 1,
            ..LearnerConfig::tree()
        };
        let tree = train(&ds, &tree_cfg, 1).unwrap();
        assert!(accuracy(&tree, &ds) >= 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable();
        for cfg in [LearnerConfig::logistic(), LearnerConfig::tree()] {
            let a = train(&ds, &cfg, 9).unwrap();
            let b = train(&ds, &cfg, 9).unwrap();
            assert_eq!(a.to_json(), b.to_json());
        }
    }

    #[test]
    fn zero_coefficients_score_one_half_and_predict_positive() {
        let ds = separable();
        let model = FittedModel {
            kind: LearnerKind::Logistic,
            threshold: 0.5,
            use_protected_feature: false,
            n_features: 2,
            params: ModelParams::Logistic {
                means: vec![0.0; 2],
                scales: vec![1.0; 2],
                coefficients: vec![0.0; 2],
                intercept: 0.0,
            },
            training_seed: 0,
        };
        let p = predict(&model, &ds).unwrap();
        assert!(p.scores.iter().all(|&s| s == 0.5));
        assert!(p.labels.iter().all(|&b| b));
    }

    #[test]
    fn all_negative_labels() {
        let ds = Dataset::new(
            vec![0.0, 1.0, 2.0],
            vec![Group::Zero; 3],
            vec![false; 3],
            vec!["x".into()],
        )
        .unwrap();
        let tree = train(&ds, &LearnerConfig::tree(), 0).unwrap();
        assert!(predict(&tree, &ds).unwrap().labels.iter().all(|&b| !b));
        assert_eq!(
            train(&ds, &LearnerConfig::logistic(), 0),
            Err(LearnerError::SingleClass)
        );
    }

    #[test]
    fn arity_and_empty_checks() {
        let ds = separable();
        let model = train(&ds, &LearnerConfig::tree(), 0).unwrap();
        let narrow =
            Dataset::new(vec![0.5], vec![Group::One], vec![true], vec!["x".into()]).unwrap();
        assert_eq!(
            predict(&model, &narrow),
            Err(LearnerError::ArityMismatch {
                expected: 2,
                got: 1
            })
        );
        let empty = ds.subset(&[]);
        assert_eq!(
            train(&empty, &LearnerConfig::tree(), 0),
            Err(LearnerError::EmptyData)
        );
    }

    #[test]
    fn model_json_round_trip() {
        let ds = separable();
        for cfg in [LearnerConfig::logistic(), LearnerConfig::tree()] {
            let m = train(&ds, &cfg, 3).unwrap();
            assert_eq!(FittedModel::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"kind":"tree"}"#).unwrap();
        assert_eq!(cfg.max_depth, 5);
        assert_eq!(cfg.min_leaf, 10);
        assert_eq!(cfg.threshold, 0.5);
        assert!(cfg.use_protected_feature);
        let bad = LearnerConfig {
            threshold: 1.0,
            ..LearnerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
