use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{empirical_fairness, PredictionRow, PredictionTable};
use crate::fairness::UtilityKind;
use crate::group::Group;
use crate::learners::{predict, train, Dataset, FittedModel, LearnerConfig, LearnerKind};
use crate::postprocess::{
    apply_policy, derived_tpr, fit_eo_policy_masses, DerivedPolicy, StratumMasses,
};

use super::data::{generate_synthetic, load_csv, CsvSchema, SyntheticSpec};
use super::stats::{
    effect_size, harm_likelihood, zero_baseline_count, IntervalEstimate, IntervalMethod,
};
use super::{HarnessError, ReplicateFailure, ReplicateOutcome, ReplicateResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated from `base_seed`.
    Synthetic {
        spec: SyntheticSpec,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

/// How lenders' training data and served populations differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    /// Every lender trains on the same sample.
    SharedData,
    /// Lender `l` trains only on rows whose `column` value is in `values[l]`.
    SplitByColumn {
        column: String,
        values: Vec<Vec<f64>>,
    },
    /// Each lender draws its own sample from the whole pool.
    IndependentSamples,
    /// `serves[l]` is the only group lender `l` serves, or null for both.
    SubsetServing { serves: Vec<Option<Group>> },
    /// Every lender scores `group` with one shared model fitted on a separate
    /// sample, and the other group with its own model.
    ThirdParty { group: Group },
}

/// Sample the derived policies are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSplit {
    /// Each lender's own training sample.
    #[default]
    Training,
    /// A fresh sample of `train_size` pool rows per replicate.
    Calibration,
}

fn default_replicates() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub n_lenders: usize,
    pub mode: Mode,
    /// One entry per lender.
    pub learners: Vec<LearnerConfig>,
    /// Learner of the shared model in third-party mode; defaults to
    /// `learners[0]`.
    #[serde(default)]
    pub shared_learner: Option<LearnerConfig>,
    pub train_size: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub eval_size: usize,
    #[serde(default)]
    pub fit_split: FitSplit,
    pub base_seed: u64,
    #[serde(default = "default_interval")]
    pub interval: IntervalMethod,
}

fn default_interval() -> IntervalMethod {
    IntervalMethod::Normal
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if !(2..=3).contains(&self.n_lenders) {
            return bad(format!("n_lenders must be 2 or 3, got {}", self.n_lenders));
        }
        if self.learners.len() != self.n_lenders {
            return bad(format!(
                "{} learners for {} lenders",
                self.learners.len(),
                self.n_lenders
            ));
        }
        if self.replicates == 0 || self.train_size == 0 || self.eval_size == 0 {
            return bad("replicates, train_size and eval_size must be positive".into());
        }
        match &self.mode {
            Mode::SplitByColumn { values, .. } if values.len() != self.n_lenders => bad(format!(
                "split_by_column needs {} value lists",
                self.n_lenders
            )),
            Mode::SubsetServing { serves } if serves.len() != self.n_lenders => {
                bad(format!("subset_serving needs {} entries", self.n_lenders))
            }
            _ => Ok(()),
        }
    }
}

/// Everything needed to reproduce and interpret a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub base_seed: u64,
    pub replicates: usize,
    pub dataset_rows: usize,
    pub eval_rows: usize,
    pub pool_rows: usize,
    pub fit_split: FitSplit,
    /// Learner substitutions made for kinds that are not implemented.
    pub substitutions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub results: Vec<ReplicateOutcome>,
    pub metadata: RunMetadata,
    pub interval: IntervalMethod,
}

/// Replaces unimplemented learner kinds.
fn resolve_learner(cfg: &LearnerConfig, who: &str, notes: &mut Vec<String>) -> LearnerConfig {
    if cfg.kind != LearnerKind::RandomForest {
        return cfg.clone();
    }
    let sub = LearnerConfig {
        kind: LearnerKind::Tree,
        max_depth: 8,
        min_leaf: 5,
        ..cfg.clone()
    };
    notes.push(format!(
        "{who}: random forest replaced by a single CART tree (max_depth {}, min_leaf {})",
        sub.max_depth, sub.min_leaf
    ));
    sub
}

struct Prepared {
    ds: Dataset,
    eval: Vec<usize>,
    pool: Vec<usize>,
    /// Rows each lender may train on.
    lender_pool: Vec<Vec<usize>>,
    learners: Vec<LearnerConfig>,
    shared: LearnerConfig,
    metadata: RunMetadata,
}

fn serves(mode: &Mode, lender: usize, group: Group) -> bool {
    match mode {
        Mode::SubsetServing { serves } => serves[lender].is_none_or(|g| g == group),
        _ => true,
    }
}

fn serves_both(mode: &Mode, lender: usize) -> bool {
    Group::BOTH.iter().all(|&g| serves(mode, lender, g))
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let ds = match &cfg.data {
        DataSource::Synthetic { spec } => generate_synthetic(spec, cfg.base_seed)?,
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
    };
    let need = cfg.eval_size + cfg.train_size;
    if ds.len() < need {
        return Err(HarnessError::InvalidConfig(format!(
            "{} rows cannot hold eval_size + train_size = {need}",
            ds.len()
        )));
    }
    // Stream 0 fixes the evaluation split; replicate r uses stream r + 1.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let mut eval = order[..cfg.eval_size].to_vec();
    let mut pool = order[cfg.eval_size..].to_vec();
    eval.sort_unstable();
    pool.sort_unstable();

    let lender_pool: Vec<Vec<usize>> = match &cfg.mode {
        Mode::SplitByColumn { column, values } => {
            let j = ds
                .feature_names()
                .iter()
                .position(|n| n == column)
                .ok_or_else(|| HarnessError::MissingColumn(column.clone()))?;
            values
                .iter()
                .map(|vals| {
                    pool.iter()
                        .copied()
                        .filter(|&i| vals.contains(&ds.row(i)[j]))
                        .collect()
                })
                .collect()
        }
        Mode::SubsetServing { .. } => (0..cfg.n_lenders)
            .map(|l| {
                pool.iter()
                    .copied()
                    .filter(|&i| serves(&cfg.mode, l, ds.group(i)))
                    .collect()
            })
            .collect(),
        _ => vec![pool.clone(); cfg.n_lenders],
    };
    for (l, rows) in lender_pool.iter().enumerate() {
        if rows.len() < cfg.train_size {
            return Err(HarnessError::InvalidConfig(format!(
                "lender {} can draw from {} rows, fewer than train_size {}",
                l + 1,
                rows.len(),
                cfg.train_size
            )));
        }
    }

    let mut substitutions = Vec::new();
    let learners = cfg
        .learners
        .iter()
        .enumerate()
        .map(|(l, c)| resolve_learner(c, &format!("lender {}", l + 1), &mut substitutions))
        .collect();
    let shared = resolve_learner(
        cfg.shared_learner.as_ref().unwrap_or(&cfg.learners[0]),
        "shared model",
        &mut substitutions,
    );
    let metadata = RunMetadata {
        base_seed: cfg.base_seed,
        replicates: cfg.replicates,
        dataset_rows: ds.len(),
        eval_rows: eval.len(),
        pool_rows: pool.len(),
        fit_split: cfg.fit_split,
        substitutions,
    };
    Ok(Prepared {
        ds,
        eval,
        pool,
        lender_pool,
        learners,
        shared,
        metadata,
    })
}

fn draw(rng: &mut ChaCha8Rng, from: &[usize], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, from.len(), k)
        .into_iter()
        .map(|i| from[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// A lender's classifier, possibly delegating one group to a shared model.
struct Lender<'a> {
    own: FittedModel,
    shared: Option<(Group, &'a FittedModel)>,
}

impl Lender<'_> {
    fn predict(&self, ds: &Dataset, rows: &[usize]) -> Result<Vec<bool>, HarnessError> {
        let sub = ds.subset(rows);
        let own = predict(&self.own, &sub)?.labels;
        let Some((group, shared)) = self.shared else {
            return Ok(own);
        };
        let theirs = predict(shared, &sub)?.labels;
        Ok((0..rows.len())
            .map(|i| {
                if sub.group(i) == group {
                    theirs[i]
                } else {
                    own[i]
                }
            })
            .collect())
    }
}

fn replicate_seed(base_seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(r as u64 + 1);
    rng.next_u64()
}

fn run_replicate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    r: usize,
) -> Result<ReplicateResult, HarnessError> {
    let seed = replicate_seed(cfg.base_seed, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_lenders;
    let ds = &prep.ds;

    let train_rows: Vec<Vec<usize>> = match cfg.mode {
        Mode::SharedData => vec![draw(&mut rng, &prep.pool, cfg.train_size); n],
        _ => (0..n)
            .map(|l| draw(&mut rng, &prep.lender_pool[l], cfg.train_size))
            .collect(),
    };
    let shared_model = match cfg.mode {
        Mode::ThirdParty { group } => {
            let rows: Vec<usize> = draw(&mut rng, &prep.pool, cfg.train_size)
                .into_iter()
                .filter(|&i| ds.group(i) == group)
                .collect();
            Some((group, train(&ds.subset(&rows), &prep.shared, seed)?))
        }
        _ => None,
    };
    let calibration = match cfg.fit_split {
        FitSplit::Calibration => Some(draw(&mut rng, &prep.pool, cfg.train_size)),
        FitSplit::Training => None,
    };

    let mut lenders = Vec::with_capacity(n);
    for (l, rows) in train_rows.iter().enumerate() {
        let own_rows: Vec<usize> = match &shared_model {
            Some((g, _)) => rows
                .iter()
                .copied()
                .filter(|&i| ds.group(i) != *g)
                .collect(),
            None => rows.clone(),
        };
        let own = train(&ds.subset(&own_rows), &prep.learners[l], seed)?;
        lenders.push(Lender {
            own,
            shared: shared_model.as_ref().map(|(g, m)| (*g, m)),
        });
    }

    let mut eval_preds = Vec::with_capacity(n);
    for lender in &lenders {
        eval_preds.push(lender.predict(ds, &prep.eval)?);
    }
    let rows = prep
        .eval
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let served: Vec<bool> = (0..n).map(|l| serves(&cfg.mode, l, ds.group(i))).collect();
            let offer_prob = (0..n)
                .map(|l| {
                    if served[l] && eval_preds[l][k] {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            PredictionRow {
                id: i.to_string(),
                group: ds.group(i),
                label: ds.label(i),
                served,
                offer_prob,
            }
        })
        .collect();
    let before_table =
        PredictionTable::new(n, rows).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let audit = |t: &PredictionTable| {
        empirical_fairness(t, UtilityKind::at_least_one())
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    };
    let before = audit(&before_table)?;

    let mut after_table = before_table.clone();
    let mut fit_before = vec![0.0; n];
    let mut fit_after = vec![0.0; n];
    for l in 0..n {
        if !serves_both(&cfg.mode, l) {
            continue;
        }
        let fit_rows = calibration.as_ref().unwrap_or(&train_rows[l]);
        let preds = lenders[l].predict(ds, fit_rows)?;
        let mut counts = [[[0u64; 2]; 2]; 2];
        for (k, &i) in fit_rows.iter().enumerate() {
            counts[ds.group(i).index()][usize::from(ds.label(i))][usize::from(preds[k])] += 1;
        }
        let total = fit_rows.len() as f64;
        let masses = StratumMasses {
            mass: counts.map(|g| g.map(|y| y.map(|c| c as f64 / total))),
        };
        let fit = fit_eo_policy_masses(&masses, l, 1e-12)
            .map_err(|e| HarnessError::InvalidConfig(format!("lender {}: {e}", l + 1)))?;
        let identity = DerivedPolicy::identity();
        let gap = |p: &DerivedPolicy<f64>| {
            (derived_tpr(p, &masses, Group::Zero) - derived_tpr(p, &masses, Group::One)).abs()
        };
        fit_before[l] = gap(&identity);
        fit_after[l] = gap(&fit.policy);
        after_table = apply_policy(&fit.policy, &after_table, l)
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    }
    let after = audit(&after_table)?;

    Ok(ReplicateResult::new(
        r,
        seed,
        before.eoc,
        after.eoc,
        before.eo_per_lender,
        after.eo_per_lender,
        fit_before,
        fit_after,
    ))
}

/// Runs every replicate on the global thread pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let prep = prepare(cfg)?;
    let results = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(cfg, &prep, r).map_err(|e| ReplicateFailure {
                replicate: r,
                message: e.to_string(),
            })
        })
        .collect();
    Ok(ExperimentReport {
        results,
        metadata: prep.metadata,
        interval: cfg.interval,
    })
}

/// Runs on a dedicated pool of `workers` threads; the report does not
/// depend on `workers`.
pub fn run_experiment_with_workers(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub harm_ci: Option<IntervalEstimate>,
    pub effect_ci: Option<IntervalEstimate>,
    pub excluded_count: usize,
    pub harmed: usize,
    pub succeeded: usize,
    pub failures: Vec<ReplicateFailure>,
    /// Why an interval is missing.
    pub notes: Vec<String>,
    pub metadata: RunMetadata,
}

pub fn summarize(report: &ExperimentReport) -> ExperimentSummary {
    let mut notes = Vec::new();
    let harm_ci = harm_likelihood(&report.results, report.interval)
        .map_err(|e| notes.push(format!("harm_ci: {e}")))
        .ok();
    let effect_ci = effect_size(&report.results)
        .map_err(|e| notes.push(format!("effect_ci: {e}")))
        .ok()
        .map(|e| e.interval);
    let ok = report.results.iter().filter_map(|r| r.as_ref().ok());
    ExperimentSummary {
        harm_ci,
        effect_ci,
        excluded_count: zero_baseline_count(&report.results),
        harmed: ok.clone().filter(|r| r.harmed).count(),
        succeeded: ok.count(),
        failures: report
            .results
            .iter()
            .filter_map(|r| r.as_ref().err().cloned())
            .collect(),
        notes,
        metadata: report.metadata.clone(),
    }
}

/// One row per replicate, in replicate order.
pub fn results_csv(report: &ExperimentReport, n_lenders: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "replicate",
        "seed",
        "status",
        "eoc_before",
        "eoc_after",
        "harmed",
        "ratio",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend((1..=n_lenders).map(|l| format!("eo_before_{l}")));
    header.extend((1..=n_lenders).map(|l| format!("eo_after_{l}")));
    header.push("error".into());
    w.write_record(&header).expect("in-memory csv");
    for outcome in &report.results {
        let rec: Vec<String> = match outcome {
            Ok(r) => {
                let mut v = vec![
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    "ok".into(),
                    r.eoc_before.to_string(),
                    r.eoc_after.to_string(),
                    u8::from(r.harmed).to_string(),
                    r.ratio.map(|x| x.to_string()).unwrap_or_default(),
                ];
                v.extend(r.eo_before.iter().chain(&r.eo_after).map(|x| x.to_string()));
                v.push(String::new());
                v
            }
            Err(f) => {
                let mut v = vec![f.replicate.to_string(), String::new(), "failed".into()];
                v.extend(std::iter::repeat_n(String::new(), 4 + 2 * n_lenders));
                v.push(f.message.clone());
                v
            }
        };
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
