//! `ecofair`: batch front end for the ecosystem-fairness toolkit.
//!
//! Every subcommand writes one document to stdout (JSON by default, CSV
//! with `--format csv`) and is deterministic given its arguments. Exit
//! status is 0 on success, 1 when a verification check fails and 2 on
//! usage or input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use ecofair::fairness::{
    correlation_feasible_range, dpc_correlation_level, dpc_correlation_worst_case,
    dpc_overlap_level, dpc_overlap_worst_case, eoc_correlation_gap, eoc_correlation_worst_case,
    eoc_overlap_gap, eoc_overlap_worst_case, eoc_worst_case_n, veoc_correlation_gap,
    veoc_worst_case, CorrelationPair, OverlapRow,
};
use ecofair::harness::{
    results_csv, run_experiment, run_experiment_with_workers, summarize, ExperimentConfig,
};
use ecofair::joint::{pmf_fairness_levels, sample};
use ecofair::postprocess::{apply_policy, fit_eo_policy};
use ecofair::scenarios::{by_name, Phase};
use ecofair::verify::{run_suite, Suite};
use ecofair::{
    empirical_correlation, empirical_fairness, lit, Levels, Model, PredictionTable, Rational,
    UtilityKind,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{failed} of {total} verification checks failed")]
    VerifyFailed {
        failed: usize,
        total: usize,
        report: String,
    },
}

impl CliError {
    fn input(e: impl std::fmt::Display) -> Self {
        Self::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "ecofair",
    version,
    about = "Fairness of competing lenders: closed forms, audits, post-processing, experiments"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Absolute tolerance of verification checks.
    #[arg(long, global = true, default_value_t = 1e-12)]
    tolerance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form levels and worst-case bounds.
    Analytic {
        #[command(subcommand)]
        query: Analytic,
    },
    /// Exact and Monte-Carlo levels of a named scenario or a model file.
    Simulate(SimulateArgs),
    /// Empirical fairness levels of a prediction table.
    Audit(AuditArgs),
    /// Fits and applies the least-loss Equal-Opportunity policy to one lender.
    Adjust(AdjustArgs),
    /// Runs a replicated train / audit / adjust / audit experiment.
    Experiment(ExperimentArgs),
    /// Brute-force oracle checks of the closed forms and the policy fit.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
enum Analytic {
    /// Two EO lenders with miss-indicator correlations per group.
    EocCorr(CorrArgs),
    /// Welfare version under 0-1-k preferences.
    VeocCorr {
        #[command(flatten)]
        corr: CorrArgs,
        #[arg(long)]
        k: f64,
    },
    /// Worst case for n EO lenders.
    EocN {
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Two uncorrelated EO lenders serving overlapping pools.
    EocOverlap(OverlapArgs),
    /// Two DP lenders with approval correlations per group.
    DpcCorr {
        #[arg(long)]
        eta1: f64,
        #[arg(long)]
        eta2: f64,
        #[arg(long)]
        rho0: f64,
        #[arg(long)]
        rho1: f64,
    },
    /// Two uncorrelated DP lenders serving overlapping pools.
    DpcOverlap {
        #[arg(long)]
        eta1: f64,
        #[arg(long)]
        eta2: f64,
        /// Group-0 shares served by lender 1 and lender 2.
        #[arg(long, value_delimiter = ',', required = true)]
        g0: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        g1: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct CorrArgs {
    #[arg(long)]
    beta1: f64,
    #[arg(long)]
    beta2: f64,
    #[arg(long)]
    rho0: f64,
    #[arg(long)]
    rho1: f64,
}

#[derive(Debug, Args)]
struct OverlapArgs {
    #[arg(long)]
    beta1: f64,
    #[arg(long)]
    beta2: f64,
    /// Group-0 shares served by lender 1 and lender 2.
    #[arg(long, value_delimiter = ',', required = true)]
    g0: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    g1: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Before,
    After,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// example1, example3, example4 or monoculture.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    scenario: Option<String>,
    /// Model JSON document.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Before)]
    phase: PhaseArg,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Monte-Carlo sample size.
    #[arg(long = "samples", short = 'N', default_value_t = 1_000_000)]
    samples: u64,
    /// Utility of several offers.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Also report pairwise offer correlations per group.
    #[arg(long)]
    correlation: bool,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[arg(long)]
    table: PathBuf,
    /// Lender to adjust, counted from 1.
    #[arg(long)]
    lender: usize,
    /// Where to write the adjusted table.
    #[arg(long)]
    adjusted: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Where to write the per-replicate CSV.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// frechet, worst-case, overlap, dpc, lp or all.
    #[arg(long, default_value = "all")]
    suite: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e @ CliError::VerifyFailed { .. }) => {
            if let CliError::VerifyFailed { report, .. } = &e {
                print!("{report}");
            }
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Analytic { query } => render(&analytic(query)?, cli.format),
        Command::Simulate(args) => render(&simulate(args, cli.seed)?, cli.format),
        Command::Audit(args) => render(&audit(args)?, cli.format),
        Command::Adjust(args) => render(&adjust(args)?, cli.format),
        Command::Experiment(args) => experiment(args, cli),
        Command::Verify(args) => verify(args, cli),
    }
}

/// `shares` is the pair of group shares served by lender 1 and lender 2.
fn overlap_row(shares: &[f64]) -> CliResult<OverlapRow<f64>> {
    let &[s1, s2] = shares else {
        return Err(CliError::input(format!(
            "expected two comma-separated shares, got {}",
            shares.len()
        )));
    };
    OverlapRow::from_lender_shares(s1, s2).map_err(CliError::input)
}

fn analytic(query: &Analytic) -> CliResult<Value> {
    let e = CliError::input;
    Ok(match query {
        Analytic::EocCorr(a) => {
            let corr = CorrelationPair::new(a.rho0, a.rho1);
            let gap = eoc_correlation_gap(a.beta1, a.beta2, corr).map_err(e)?;
            let range = correlation_feasible_range(a.beta1, a.beta2).map_err(e)?;
            json!({
                "query": "eoc-corr",
                "formula": "sigma1 * sigma2 * |rho0 - rho1|",
                "eoc": gap.abs(),
                "offer_gap": gap,
                "worst_case": eoc_correlation_worst_case(a.beta1, a.beta2).map_err(e)?,
                "rho_range": [range.lo, range.hi],
            })
        }
        Analytic::VeocCorr { corr: a, k } => {
            let util = UtilityKind::new(*k).map_err(e)?;
            let corr = CorrelationPair::new(a.rho0, a.rho1);
            let gap = veoc_correlation_gap(util, a.beta1, a.beta2, corr).map_err(e)?;
            json!({
                "query": "veoc-corr",
                "formula": "sigma1 * sigma2 * |(k - 2)(rho0 - rho1)|",
                "k": k,
                "veoc": gap.abs(),
                "welfare_gap": gap,
                "worst_case": veoc_worst_case(util, a.beta1, a.beta2).map_err(e)?,
            })
        }
        Analytic::EocN { betas } => json!({
            "query": "eoc-n",
            "formula": "min(beta) - max(0, sum(beta) - (n - 1))",
            "n": betas.len(),
            "worst_case": eoc_worst_case_n(betas).map_err(e)?,
        }),
        Analytic::EocOverlap(a) => {
            let (g0, g1) = (overlap_row(&a.g0)?, overlap_row(&a.g1)?);
            let gap = eoc_overlap_gap(a.beta1, a.beta2, &g0, &g1).map_err(e)?;
            json!({
                "query": "eoc-overlap",
                "formula": "|(g2_0 - g2_1) beta1 + (g1_0 - g1_1) beta2 + (g12_1 - g12_0) beta1 beta2|",
                "eoc": gap.abs(),
                "offer_gap": gap,
                "worst_case": eoc_overlap_worst_case(a.beta1, a.beta2).map_err(e)?,
            })
        }
        Analytic::DpcCorr {
            eta1,
            eta2,
            rho0,
            rho1,
        } => json!({
            "query": "dpc-corr",
            "formula": "sigma1 * sigma2 * |rho0 - rho1| with sigma from the approval rates",
            "dpc": dpc_correlation_level(*eta1, *eta2, CorrelationPair::new(*rho0, *rho1)).map_err(e)?,
            "worst_case": dpc_correlation_worst_case(*eta1, *eta2).map_err(e)?,
        }),
        Analytic::DpcOverlap { eta1, eta2, g0, g1 } => {
            let (g0, g1) = (overlap_row(g0)?, overlap_row(g1)?);
            json!({
                "query": "dpc-overlap",
                "formula": "overlap form with beta replaced by 1 - eta",
                "dpc": dpc_overlap_level(*eta1, *eta2, &g0, &g1).map_err(e)?,
                "worst_case": dpc_overlap_worst_case(*eta1, *eta2).map_err(e)?,
            })
        }
    })
}

fn levels_json(levels: &Levels) -> Value {
    serde_json::to_value(levels).expect("levels serialize")
}

fn simulate(args: &SimulateArgs, seed: u64) -> CliResult<Value> {
    let util = UtilityKind::new(args.k).map_err(CliError::input)?;
    let phase = match args.phase {
        PhaseArg::Before => Phase::Before,
        PhaseArg::After => Phase::After,
    };
    let (source, exact, model): (String, Levels, Model) = match (&args.scenario, &args.model) {
        (Some(name), _) => {
            let beta = args.beta.map(lit::<Rational>);
            let scenario = by_name::<Rational>(name, beta, args.n).map_err(CliError::input)?;
            let model = scenario.model(phase);
            let util_exact = UtilityKind::new(lit::<Rational>(args.k)).map_err(CliError::input)?;
            let exact = pmf_fairness_levels(&model, util_exact).to_f64();
            (name.clone(), exact, model.to_f64())
        }
        (None, Some(path)) => {
            if phase == Phase::After {
                return Err(CliError::Input(
                    "--phase after needs a named scenario".into(),
                ));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let model = Model::from_json(&text).map_err(CliError::input)?;
            (
                path.display().to_string(),
                pmf_fairness_levels(&model, util),
                model,
            )
        }
        (None, None) => return Err(CliError::Input("give --scenario or --model".into())),
    };
    let batch = sample(&model, args.samples, seed).map_err(CliError::input)?;
    let summary = batch.summary(util);
    let sampled = summary.levels().map_err(CliError::input)?;
    let offer_se = summary
        .offer_gap_standard_error()
        .map_err(CliError::input)?;
    let welfare_se = summary
        .welfare_gap_standard_error()
        .map_err(CliError::input)?;
    Ok(json!({
        "source": source,
        "phase": match phase { Phase::Before => "before", Phase::After => "after" },
        "n_lenders": model.n(),
        "k": args.k,
        "samples": args.samples,
        "seed": seed,
        "eoc_exact": exact.eoc,
        "eoc_sampled": sampled.eoc,
        "offer_gap_exact": exact.offer_gap,
        "offer_gap_sampled": sampled.offer_gap,
        "offer_gap_se": offer_se,
        "welfare_gap_se": welfare_se,
        "exact": levels_json(&exact),
        "sampled": levels_json(&sampled),
    }))
}

fn read_table(path: &PathBuf) -> CliResult<PredictionTable> {
    PredictionTable::read_csv(path).map_err(CliError::input)
}

fn audit(args: &AuditArgs) -> CliResult<Value> {
    let table = read_table(&args.table)?;
    let util = UtilityKind::new(args.k).map_err(CliError::input)?;
    let levels = empirical_fairness(&table, util).map_err(CliError::input)?;
    let mut out = json!({
        "rows": table.rows().len(),
        "n_lenders": table.n_lenders(),
        "k": args.k,
        "levels": levels_json(&levels),
    });
    if args.correlation {
        let corr = empirical_correlation(&table).map_err(CliError::input)?;
        out["correlation"] = serde_json::to_value(corr).expect("report serializes");
    }
    Ok(out)
}

fn adjust(args: &AdjustArgs) -> CliResult<Value> {
    let table = read_table(&args.table)?;
    if args.lender == 0 || args.lender > table.n_lenders() {
        return Err(CliError::Input(format!(
            "--lender must be between 1 and {}",
            table.n_lenders()
        )));
    }
    let lender = args.lender - 1;
    let fit = fit_eo_policy(&table, lender).map_err(CliError::input)?;
    let adjusted = apply_policy(&fit.policy, &table, lender).map_err(CliError::input)?;
    if let Some(path) = &args.adjusted {
        adjusted.write_csv(path).map_err(CliError::input)?;
    }
    let policy: Value = serde_json::from_str(&fit.policy.to_json()).expect("policy json");
    Ok(json!({
        "lender": args.lender,
        "policy": policy,
        "identity": fit.policy.is_identity(),
        "achieved_tpr": fit.achieved_tpr,
        "expected_loss": fit.expected_loss,
        "candidates_examined": fit.candidates_examined,
        "degenerate_base": fit.degenerate_base,
    }))
}

fn experiment(args: &ExperimentArgs, cli: &Cli) -> CliResult<String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::from_json(&text).map_err(CliError::input)?;
    let report = match args.workers {
        Some(w) => run_experiment_with_workers(&cfg, w),
        None => run_experiment(&cfg),
    }
    .map_err(CliError::input)?;
    let csv = results_csv(&report, cfg.n_lenders);
    if let Some(path) = &args.results {
        std::fs::write(path, &csv)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    match cli.format {
        Format::Csv => Ok(csv),
        Format::Json => {
            let summary = serde_json::to_value(summarize(&report)).expect("summary serializes");
            Ok(pretty(&summary))
        }
    }
}

fn verify(args: &VerifyArgs, cli: &Cli) -> CliResult<String> {
    let suite: Suite = args.suite.parse().map_err(CliError::Input)?;
    let checks = run_suite(suite, cli.tolerance);
    let total = checks.len();
    let failed = checks.iter().filter(|c| !c.passed).count();
    let doc = json!({
        "suite": args.suite,
        "tolerance": cli.tolerance,
        "passed": failed == 0,
        "checks": checks,
    });
    let report = match cli.format {
        Format::Json => pretty(&doc),
        Format::Csv => table_csv(doc["checks"].as_array().expect("array"))?,
    };
    if failed > 0 {
        return Err(CliError::VerifyFailed {
            failed,
            total,
            report,
        });
    }
    Ok(report)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn render(v: &Value, format: Format) -> CliResult<String> {
    match format {
        Format::Json => Ok(pretty(v)),
        Format::Csv => table_csv(std::slice::from_ref(v)),
    }
}

/// Flattens nested objects and arrays into dotted column names.
fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&key(&(i + 1).to_string()), v, out)),
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// One CSV row per value; the header comes from the first.
fn table_csv(rows: &[Value]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let flat: Vec<Map<String, Value>> = rows
        .iter()
        .map(|r| {
            let mut m = Map::new();
            flatten("", r, &mut m);
            m
        })
        .collect();
    let header: Vec<String> = flat
        .first()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    w.write_record(&header).map_err(CliError::input)?;
    for m in &flat {
        let cells = header.iter().map(|h| match m.get(h) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(v) => v.to_string(),
        });
        w.write_record(cells).map_err(CliError::input)?;
    }
    String::from_utf8(w.into_inner().map_err(CliError::input)?).map_err(CliError::input)
}
