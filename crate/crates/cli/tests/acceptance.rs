//! Acceptance criteria AC1 to AC9. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ecofair::fairness::{
    dpc_correlation_level, dpc_overlap_level, eoc_correlation_level, eoc_overlap_level,
    veoc_correlation_gap, veoc_correlation_level, CorrelationPair, OverlapRow,
};
use ecofair::harness::{
    run_experiment, run_experiment_with_workers, summarize, DataSource, ExperimentConfig, FitSplit,
    IntervalMethod, Mode, SyntheticSpec,
};
use ecofair::joint::{batch_to_table, expand_exact, independent_pmf};
use ecofair::learners::LearnerConfig;
use ecofair::postprocess::{expected_loss, fit_eo_policy_masses, lemma1_candidates, StratumMasses};
use ecofair::scenarios::example3;
use ecofair::{pmf_fairness_levels, EcosystemModel, Group, JointPmf, Rational, UtilityKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TOL: f64 = 1e-12;
const DRAWS: usize = 200;

fn ecofair(args: &[&str]) -> (Vec<u8>, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ecofair"))
        .args(args)
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    assert!(
        out.status.success(),
        "ecofair {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (out.stdout, elapsed)
}

fn json(args: &[&str]) -> Value {
    serde_json::from_slice(&ecofair(args).0).expect("JSON output")
}

fn num(v: &Value, path: &str) -> f64 {
    path.split('.')
        .fold(v, |v, key| match key.parse::<usize>() {
            Ok(i) => &v[i],
            Err(_) => &v[key],
        })
        .as_f64()
        .unwrap_or_else(|| panic!("{path} missing in {v}"))
}

fn within(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
}

fn ac1() -> String {
    let start = Instant::now();
    let before = json(&["simulate", "--scenario", "example3", "--phase", "before"]);
    let after = json(&["simulate", "--scenario", "example3", "--phase", "after"]);
    let elapsed = start.elapsed();
    within(num(&before, "eoc_exact"), 0.0, TOL, "eoc before");
    let eoc_after = num(&after, "eoc_exact");
    assert!(eoc_after > TOL, "eoc after {eoc_after}");
    for l in 0..2 {
        within(
            num(&after, &format!("exact.eo_per_lender.{l}")),
            0.0,
            TOL,
            "lender EO after",
        );
    }
    let s = example3::<Rational>().unwrap();
    for g in Group::BOTH {
        assert_eq!(s.before.pmf(g, true).no_offer(), Rational::new(1, 10));
    }
    for v in [&before, &after] {
        let gap = (num(v, "offer_gap_sampled") - num(v, "offer_gap_exact")).abs();
        let se = num(v, "offer_gap_se");
        assert!(gap <= 4.0 * se, "sampled gap off by {gap} (se {se})");
    }
    assert!(elapsed < Duration::from_secs(5), "{elapsed:?}");
    format!(
        "eoc 0 -> {eoc_after}, sampled within 4 se, {:.2}s",
        elapsed.as_secs_f64()
    )
}

fn ac2() -> String {
    let analytic = json(&[
        "analytic", "eoc-corr", "--beta1", "0.1", "--beta2", "0.1", "--rho0", "1", "--rho1", "0",
    ]);
    within(num(&analytic, "eoc"), 0.09, TOL, "analytic example1");
    within(
        num(
            &json(&["simulate", "--scenario", "example1", "-N", "1000"]),
            "eoc_exact",
        ),
        0.09,
        TOL,
        "example1",
    );
    let mut last = 0.0;
    for n in 2..=6 {
        let out = json(&[
            "simulate",
            "--scenario",
            "monoculture",
            "--beta",
            "0.2",
            "--n",
            &n.to_string(),
            "-N",
            "1000",
        ]);
        let eoc = num(&out, "eoc_exact");
        within(
            eoc,
            0.2 - 0.2f64.powi(n),
            TOL,
            &format!("monoculture n={n}"),
        );
        assert!(eoc > last, "not increasing at n={n}");
        last = eoc;
    }
    "0.09 and beta - beta^n strictly increasing over n = 2..6".into()
}

fn ac3() -> String {
    let before = json(&[
        "simulate",
        "--scenario",
        "example4",
        "--beta",
        "0.25",
        "--phase",
        "before",
        "-N",
        "1000",
    ]);
    let after = json(&[
        "simulate",
        "--scenario",
        "example4",
        "--beta",
        "0.25",
        "--phase",
        "after",
        "-N",
        "1000",
    ]);
    within(num(&before, "eoc_exact"), 0.0, TOL, "before");
    within(num(&after, "eoc_exact"), 0.25, TOL, "after");
    within(
        num(&after, "exact.eo_per_lender.0"),
        0.0,
        TOL,
        "lender 1 EO",
    );
    "0 -> 0.25".into()
}

fn pair(b1: f64, b2: f64, t: f64) -> JointPmf<f64> {
    JointPmf::from_cells(2, vec![t, b1 - t, b2 - t, 1.0 - b1 - b2 + t]).unwrap()
}

fn miss_rho(b1: f64, b2: f64, t: f64) -> f64 {
    (t - b1 * b2) / (b1 * (1.0 - b1) * b2 * (1.0 - b2)).sqrt()
}

fn rate(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.02..0.98)
}

fn coupling(rng: &mut ChaCha8Rng, b1: f64, b2: f64) -> f64 {
    rng.random_range((b1 + b2 - 1.0).max(0.0)..=b1.min(b2))
}

fn overlap_cells(b1: f64, b2: f64, row: &OverlapRow<f64>) -> JointPmf<f64> {
    let (only1, only2, both) = (
        1.0 - row.served_by_2,
        1.0 - row.served_by_1,
        row.served_by_both,
    );
    let (o1, o2) = (1.0 - b1, 1.0 - b2);
    JointPmf::from_cells(
        2,
        vec![
            only1 * b1 + only2 * b2 + both * b1 * b2,
            only2 * o2 + both * b1 * o2,
            only1 * o1 + both * o1 * b2,
            both * o1 * o2,
        ],
    )
    .unwrap()
}

fn random_row(rng: &mut ChaCha8Rng) -> OverlapRow<f64> {
    let s1: f64 = rng.random_range(0.0..=1.0);
    OverlapRow::from_lender_shares(s1, rng.random_range(1.0 - s1..=1.0)).unwrap()
}

fn model(g0: JointPmf<f64>, g1: JointPmf<f64>) -> EcosystemModel<f64> {
    let neg = |a, b| independent_pmf(&[a, b]).unwrap();
    EcosystemModel::new(g0, g1, neg(0.3, 0.6), neg(0.2, 0.1), [0.4, 0.7]).unwrap()
}

fn parity(g0: JointPmf<f64>, g1: JointPmf<f64>) -> EcosystemModel<f64> {
    EcosystemModel::new(g0.clone(), g1.clone(), g0, g1, [0.35, 0.8]).unwrap()
}

fn ac4() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let levels =
        |m: &EcosystemModel<f64>, k: f64| pmf_fairness_levels(m, UtilityKind::new(k).unwrap());
    let mut worst = 0.0f64;
    let mut check = |closed: f64, exact: f64| {
        worst = worst.max((closed - exact).abs());
        within(closed, exact, TOL, "closed form vs enumeration");
    };
    for _ in 0..DRAWS {
        let (b1, b2) = (rate(&mut rng), rate(&mut rng));
        let (t0, t1) = (coupling(&mut rng, b1, b2), coupling(&mut rng, b1, b2));
        let corr = CorrelationPair::new(miss_rho(b1, b2, t0), miss_rho(b1, b2, t1));
        check(
            eoc_correlation_level(b1, b2, corr).unwrap(),
            levels(&model(pair(b1, b2, t0), pair(b1, b2, t1)), 1.0).eoc,
        );
    }
    for k in [1.0, 1.5, 2.0, 3.0] {
        for _ in 0..DRAWS {
            let (b1, b2) = (rate(&mut rng), rate(&mut rng));
            let (t0, t1) = (coupling(&mut rng, b1, b2), coupling(&mut rng, b1, b2));
            let corr = CorrelationPair::new(miss_rho(b1, b2, t0), miss_rho(b1, b2, t1));
            let closed =
                veoc_correlation_level(UtilityKind::new(k).unwrap(), b1, b2, corr).unwrap();
            check(
                closed,
                levels(&model(pair(b1, b2, t0), pair(b1, b2, t1)), k).veoc,
            );
        }
    }
    for _ in 0..DRAWS {
        let (b1, b2) = (rate(&mut rng), rate(&mut rng));
        let (r0, r1) = (random_row(&mut rng), random_row(&mut rng));
        let exact = levels(
            &model(overlap_cells(b1, b2, &r0), overlap_cells(b1, b2, &r1)),
            1.0,
        )
        .eoc;
        check(eoc_overlap_level(b1, b2, &r0, &r1).unwrap(), exact);
    }
    for _ in 0..DRAWS {
        let (e1, e2) = (rate(&mut rng), rate(&mut rng));
        let (r1, r2) = (1.0 - e1, 1.0 - e2);
        let (t0, t1) = (coupling(&mut rng, r1, r2), coupling(&mut rng, r1, r2));
        let corr = CorrelationPair::new(miss_rho(r1, r2, t0), miss_rho(r1, r2, t1));
        check(
            dpc_correlation_level(e1, e2, corr).unwrap(),
            levels(&parity(pair(r1, r2, t0), pair(r1, r2, t1)), 1.0).dpc,
        );
    }
    for _ in 0..DRAWS {
        let (e1, e2) = (rate(&mut rng), rate(&mut rng));
        let (w0, w1) = (random_row(&mut rng), random_row(&mut rng));
        let exact = levels(
            &parity(
                overlap_cells(1.0 - e1, 1.0 - e2, &w0),
                overlap_cells(1.0 - e1, 1.0 - e2, &w1),
            ),
            1.0,
        )
        .dpc;
        check(dpc_overlap_level(e1, e2, &w0, &w1).unwrap(), exact);
    }
    let corr = CorrelationPair::new(1.0, 0.0);
    let gap = |k: f64| veoc_correlation_gap(UtilityKind::new(k).unwrap(), 0.1, 0.1, corr).unwrap();
    let (low, high) = (gap(1.5), gap(3.0));
    assert!(low < 0.0 && high > 0.0, "welfare gaps {low}, {high}");
    format!(
        "1600 draws, max deviation {worst:.1e}; welfare gap {low:.4} at k=1.5, {high:.4} at k=3"
    )
}

fn verify_suite(suite: &str) -> (Value, Duration) {
    let (out, elapsed) = ecofair(&["verify", "--suite", suite]);
    let v: Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(v["passed"], Value::Bool(true), "{suite}: {v}");
    (v, elapsed)
}

fn ac5() -> String {
    let (worst, t1) = verify_suite("worst-case");
    let (overlap, t2) = verify_suite("overlap");
    let elapsed = t1 + t2;
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
    let checks =
        worst["checks"].as_array().unwrap().len() + overlap["checks"].as_array().unwrap().len();
    format!("{checks} checks passed in {:.2}s", elapsed.as_secs_f64())
}

fn ac6() -> String {
    let (lp, _) = verify_suite("lp");
    let [c1, c2] = lemma1_candidates(0.2, 0.1, 0.1, 0.1).unwrap();
    within(c1.cost, 0.1375, TOL, "candidate 1 cost");
    within(c2.cost, 0.025, TOL, "candidate 2 cost");
    let masses = StratumMasses::uniform(0.2, 0.1, 0.1, 0.1);
    let fit = fit_eo_policy_masses(&masses, 0, 1e-12).unwrap();
    let entries = |p: &ecofair::DerivedPolicy<f64>| p.p.concat();
    for (a, b) in entries(&fit.policy).iter().zip(entries(&c2.policy)) {
        within(*a, b, TOL, "fit against the cheaper candidate");
    }
    assert!(fit.expected_loss <= expected_loss(&c1.policy, &masses) + TOL);
    let cases = lp["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["cases"].as_u64().unwrap())
        .sum::<u64>();
    format!("{cases} cases; uniform instance costs 0.1375 / 0.025, cheaper selected")
}

fn ac7_config(train_size: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic {
            spec: SyntheticSpec::third_party_proxy(45_000),
        },
        n_lenders: 2,
        mode: Mode::ThirdParty { group: Group::Zero },
        learners: vec![LearnerConfig::logistic(), LearnerConfig::logistic()],
        shared_learner: None,
        train_size,
        replicates: 200,
        eval_size: 10_000,
        fit_split: FitSplit::Training,
        base_seed: 1,
        interval: IntervalMethod::Normal,
    }
}

fn ac7() -> String {
    let start = Instant::now();
    let small = summarize(&run_experiment(&ac7_config(300)).unwrap());
    let large = summarize(&run_experiment(&ac7_config(30_000)).unwrap());
    let elapsed = start.elapsed();
    let harm = |s: &ecofair::harness::ExperimentSummary| s.harm_ci.as_ref().unwrap().point;
    let effect = small.effect_ci.as_ref().expect("effect size at 300").point;
    assert!(harm(&small) > 0.5, "harm at 300: {}", harm(&small));
    assert!(effect > 1.0, "effect at 300: {effect}");
    assert!(
        harm(&large) < harm(&small),
        "harm at 30000: {}",
        harm(&large)
    );
    assert!(elapsed < Duration::from_secs(600), "{elapsed:?}");
    format!(
        "harm {:.3} (effect {effect:.2}) at 300, harm {:.3} at 30000, {:.1}s",
        harm(&small),
        harm(&large),
        elapsed.as_secs_f64()
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> EcosystemModel<f64> {
    let n = rng.random_range(2..=4);
    let mut pmf = || {
        let raw: Vec<f64> = (0..1 << n).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        JointPmf::from_cells(n, raw.iter().map(|x| x / total).collect()).unwrap()
    };
    let (a, b, c, d) = (pmf(), pmf(), pmf(), pmf());
    EcosystemModel::new(a, b, c, d, [rng.random(), rng.random()]).unwrap()
}

fn ac8() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let levels = pmf_fairness_levels(&random_model(&mut rng), UtilityKind::at_least_one());
        assert!(
            levels.edc >= levels.eoc - TOL,
            "edc {} < eoc {}",
            levels.edc,
            levels.eoc
        );
    }
    for _ in 0..DRAWS {
        let (e1, e2) = (rate(&mut rng), rate(&mut rng));
        let (r1, r2) = (1.0 - e1, 1.0 - e2);
        let (t0, t1) = (coupling(&mut rng, r1, r2), coupling(&mut rng, r1, r2));
        let corr = CorrelationPair::new(miss_rho(r1, r2, t0), miss_rho(r1, r2, t1));
        within(
            dpc_correlation_level(e1, e2, corr).unwrap(),
            eoc_correlation_level(r1, r2, corr).unwrap(),
            TOL,
            "substitution",
        );
        let (w0, w1) = (random_row(&mut rng), random_row(&mut rng));
        within(
            dpc_overlap_level(e1, e2, &w0, &w1).unwrap(),
            eoc_overlap_level(r1, r2, &w0, &w1).unwrap(),
            TOL,
            "overlap substitution",
        );
    }
    // Symmetric worst case by grid search over the both-reject mass.
    for (eta, expected) in [(0.7, 0.3), (0.3, 0.3)] {
        let reject = ((1.0 - eta) * 200.0_f64).round() as i64;
        let feasible: Vec<i64> = (0..=200)
            .filter(|&t| t <= reject && 2 * reject - t <= 200)
            .collect();
        let brute = (feasible[feasible.len() - 1] - feasible[0]) as f64 / 200.0;
        within(brute, expected, TOL, "grid worst case");
        let cli = json(&[
            "analytic",
            "dpc-corr",
            "--eta1",
            &eta.to_string(),
            "--eta2",
            &eta.to_string(),
            "--rho0",
            "1",
            "--rho1",
            "1",
        ]);
        within(
            num(&cli, "worst_case"),
            expected,
            TOL,
            "reported worst case",
        );
    }
    verify_suite("dpc");
    "1000 models EDC >= EOC; substitution exact; worst cases 0.3 / 0.3".into()
}

fn write_tables(dir: &Path) {
    let s = example3::<Rational>().unwrap();
    for (name, m) in [("before.csv", s.before.clone()), ("after.csv", s.after())] {
        batch_to_table(&expand_exact(&m, 4000).unwrap())
            .write_csv(dir.join(name))
            .unwrap();
    }
    let cfg = ExperimentConfig {
        replicates: 6,
        data: DataSource::Synthetic {
            spec: SyntheticSpec::third_party_proxy(3000),
        },
        eval_size: 1000,
        ..ac7_config(300)
    };
    std::fs::write(dir.join("experiment.json"), cfg.to_json()).unwrap();
}

fn ac9() -> String {
    let dir = tempfile::tempdir().unwrap();
    write_tables(dir.path());
    let path = |f: &str| dir.path().join(f).to_str().unwrap().to_owned();
    let (before, config) = (path("before.csv"), path("experiment.json"));
    let runs: Vec<Vec<String>> = [
        vec![
            "analytic", "eoc-corr", "--beta1", "0.2", "--beta2", "0.3", "--rho0", "0.5", "--rho1",
            "0.1",
        ],
        vec!["analytic", "eoc-n", "--betas", "0.1,0.2,0.3"],
        vec![
            "analytic",
            "eoc-overlap",
            "--beta1",
            "0.2",
            "--beta2",
            "0.3",
            "--g0",
            "0.8,0.6",
            "--g1",
            "0.5,0.7",
        ],
        vec![
            "simulate",
            "--scenario",
            "example3",
            "--phase",
            "after",
            "--seed",
            "9",
        ],
        vec!["--format", "csv", "simulate", "--scenario", "example4"],
        vec!["audit", "--table", &before, "--correlation"],
        vec!["adjust", "--table", &before, "--lender", "1"],
        vec!["experiment", "--config", &config],
        vec!["--format", "csv", "experiment", "--config", &config],
        vec!["verify", "--suite", "lp"],
    ]
    .iter()
    .map(|a| a.iter().map(|s| s.to_string()).collect())
    .collect();
    for args in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(
            ecofair(&args).0,
            ecofair(&args).0,
            "ecofair {args:?} differs between runs"
        );
    }
    let one = ecofair(&["experiment", "--config", &config, "--workers", "1"]).0;
    let four = ecofair(&["experiment", "--config", &config, "--workers", "4"]).0;
    assert_eq!(one, four, "experiment output depends on worker count");
    let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&config).unwrap()).unwrap();
    assert_eq!(
        run_experiment_with_workers(&cfg, 1).unwrap(),
        run_experiment_with_workers(&cfg, 3).unwrap()
    );
    format!(
        "{} invocations byte-identical; workers 1 = 3 = 4",
        runs.len()
    )
}

/// Name and check; a check returns a one-line summary or panics.
type Criterion = (&'static str, fn() -> String);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(detail) => println!("{name} PASS {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("{name} FAIL {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
