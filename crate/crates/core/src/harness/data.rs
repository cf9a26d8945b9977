use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::group::Group;
use crate::learners::Dataset;

use super::HarnessError;

/// Ground truth for synthetic lending data.
///
/// Features are independent standard normals. The label of a group-`a`
/// row is `1{intercept[a] + weights[a] · x + noise · L > 0}` with `L`
/// standard logistic, so `noise = 1` draws `y ~ Bernoulli(sigmoid(logit))`
/// and `noise = 0` thresholds the logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub feature_dim: usize,
    /// `Pr[A = 1]`.
    pub group_balance: f64,
    /// Per group, one weight per feature.
    pub weights: [Vec<f64>; 2],
    pub intercepts: [f64; 2],
    /// Group 0's whole signal lives in column 0: its label depends on
    /// `intercept[0] + |weights[0]| · x_0`, and its other columns are 0.
    #[serde(default)]
    pub shared_proxy: bool,
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.group_balance) {
            return bad(format!(
                "group_balance {} is not a probability",
                self.group_balance
            ));
        }
        if self.weights.iter().any(|w| w.len() != self.feature_dim) {
            return bad(format!(
                "each weight vector needs {} entries",
                self.feature_dim
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!(
                "noise {} must be finite and nonnegative",
                self.noise
            ));
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.intercepts)
            .all(|v| v.is_finite());
        if !finite {
            return bad("weights and intercepts must be finite".into());
        }
        Ok(())
    }

    /// Third-party scenario: group 0 is predictable from a single proxy
    /// column, group 1 from many weak columns, so lenders fitted on small
    /// samples disagree far more on group 1.
    pub fn third_party_proxy(n_rows: usize) -> Self {
        let feature_dim = 8;
        Self {
            n_rows,
            feature_dim,
            group_balance: 0.5,
            weights: [
                vec![2.5; 1]
                    .into_iter()
                    .chain(vec![0.0; feature_dim - 1])
                    .collect(),
                vec![0.3; feature_dim],
            ],
            intercepts: [1.2, 0.5],
            shared_proxy: true,
            noise: 1.0,
        }
    }
}

/// Draws a dataset; identical for identical `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(spec.n_rows * d);
    let mut groups = Vec::with_capacity(spec.n_rows);
    let mut labels = Vec::with_capacity(spec.n_rows);
    let proxy_weight = [
        spec.weights[0].iter().map(|w| w * w).sum::<f64>().sqrt(),
        spec.weights[1].iter().map(|w| w * w).sum::<f64>().sqrt(),
    ];
    for _ in 0..spec.n_rows {
        let group = if rng.random::<f64>() < spec.group_balance {
            Group::One
        } else {
            Group::Zero
        };
        let a = group.index();
        let start = features.len();
        for _ in 0..d {
            features.push(rng.sample::<f64, _>(StandardNormal));
        }
        let proxied = spec.shared_proxy && group == Group::Zero;
        if proxied {
            features[start + 1..].fill(0.0);
        }
        let x = &features[start..];
        let signal = if proxied {
            proxy_weight[0] * x[0]
        } else {
            spec.weights[a].iter().zip(x).map(|(w, v)| w * v).sum()
        };
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let noise = spec.noise * (u / (1.0 - u)).ln();
        groups.push(group);
        labels.push(spec.intercepts[a] + signal + noise > 0.0);
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Ok(Dataset::new(features, groups, labels, names).expect("generated data is well formed"))
}

/// Maps a CSV column onto a binary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryColumn {
    pub column: String,
    /// Cell value meaning 1; every other value means 0.
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Numeric feature columns, in output order.
    pub features: Vec<String>,
    pub group: BinaryColumn,
    pub label: BinaryColumn,
    /// Categorical columns, one-hot encoded after the numeric features in
    /// this order, each with its levels sorted and named `column=level`.
    #[serde(default)]
    pub categorical: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, HarnessError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader(reader: impl Read, schema: &CsvSchema) -> Result<Dataset, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| HarnessError::Io(e.to_string()))?
        .clone();
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
    };
    let numeric = schema
        .features
        .iter()
        .map(|c| index(c))
        .collect::<Result<Vec<_>, _>>()?;
    let categorical = schema
        .categorical
        .iter()
        .map(|c| index(c))
        .collect::<Result<Vec<_>, _>>()?;
    let group_col = index(&schema.group.column)?;
    let label_col = index(&schema.label.column)?;

    let records = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let levels: Vec<Vec<String>> = categorical
        .iter()
        .map(|&j| {
            let set: BTreeSet<&str> = records.iter().map(|r| r.get(j).unwrap_or("")).collect();
            set.into_iter().map(str::to_string).collect()
        })
        .collect();

    let mut names: Vec<String> = schema.features.clone();
    for (col, lv) in schema.categorical.iter().zip(&levels) {
        names.extend(lv.iter().map(|l| format!("{col}={l}")));
    }
    let mut features = Vec::with_capacity(records.len() * names.len());
    let mut groups = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        for (&j, name) in numeric.iter().zip(&schema.features) {
            let cell = rec.get(j).unwrap_or("");
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| HarnessError::ParseFailure {
                    row,
                    column: name.clone(),
                })?;
            features.push(v);
        }
        for (&j, lv) in categorical.iter().zip(&levels) {
            let cell = rec.get(j).unwrap_or("");
            features.extend(lv.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
        }
        let bit = |j: usize, pos: &str| rec.get(j).map(|c| c == pos).unwrap_or(false);
        groups.push(if bit(group_col, &schema.group.positive) {
            Group::One
        } else {
            Group::Zero
        });
        labels.push(bit(label_col, &schema.label.positive));
    }
    Dataset::new(features, groups, labels, names)
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
}
