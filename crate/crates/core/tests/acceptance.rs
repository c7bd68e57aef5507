//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ldp_quantile::distributions::Distribution;
use ldp_quantile::estimator::{EstimatorConfig, EstimatorState};
use ldp_quantile::experiments::{
    cell_estimates, coverage_experiment, variance_optimality_check, Cell, CoverageReport, ExperimentConfig,
};
use ldp_quantile::inference::self_normalizer;
use ldp_quantile::pivot::{PivotKind, PivotTable, DEFAULT_GRID_STEPS, DEFAULT_PATHS};
use ldp_quantile::protocol::net::{user_client, ClientOptions, Curator, ServeOptions};
use ldp_quantile::protocol::{run_session, Recording};
use ldp_quantile::randomizer::{lrc_respond, response_probability, Inquiry, PrivacyLevel, ResponseBit};
use ldp_quantile::rng::stream;
use rand::Rng;
use rand_distr::Distribution as _;

const SEED: u64 = 20240601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Gate {
    dir: tempfile::TempDir,
    failures: u32,
}

impl Gate {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce(&Path) -> Outcome) {
        let start = Instant::now();
        let dir = self.dir.path();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| f(dir)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                check(false, format!("panicked: {msg}"))
            });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            self.failures += 1;
        }
        println!("{verdict} criterion {id} {name}: {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
    }
}

fn main() {
    let mut gate = Gate { dir: tempfile::tempdir().expect("temp dir"), failures: 0 };
    gate.run(1, "privacy ratio", privacy_ratio);
    gate.run(2, "normalizer identity", normalizer_identity);
    gate.run(3, "pivot critical values", pivot_critical_values);
    gate.run(4, "normal coverage", normal_coverage);
    gate.run(5, "cauchy coverage", cauchy_coverage);
    gate.run(6, "clt variance", clt_variance);
    gate.run(7, "median optimality", median_optimality);
    gate.run(8, "transport equivalence", transport_equivalence);
    gate.run(9, "cli determinism", cli_determinism);
    if gate.failures > 0 {
        println!("{} criteria failed", gate.failures);
        std::process::exit(1);
    }
}

fn rates() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

fn privacy_ratio(_: &Path) -> Outcome {
    let start = Instant::now();
    let draws = 1_000_000u32;
    let mut worst_gap = 0.0f64;
    let mut worst_z = 0.0f64;
    for r in rates() {
        let level = PrivacyLevel::from_rate(r).unwrap();
        let bound = level.epsilon().exp();
        // Worst case over outputs and input pairs is attained.
        let p1 = response_probability(&level, ResponseBit::ONE);
        let p0 = response_probability(&level, ResponseBit::ZERO);
        let analytic = (p1 / p0).max((1.0 - p0) / (1.0 - p1));
        worst_gap = worst_gap.max((analytic / bound - 1.0).abs());

        let mut rng = stream(SEED, &[1, r.to_bits()]);
        let inquiry = Inquiry::new(0.0).unwrap();
        let mut ones = [0u32; 2];
        for (slot, x) in [(0, -1.0), (1, 1.0)] {
            for _ in 0..draws {
                ones[slot] += lrc_respond(inquiry, &level, x, &mut rng).unwrap().as_u8() as u32;
            }
        }
        let (lo, hi) = (ones[0] as f64 / draws as f64, ones[1] as f64 / draws as f64);
        // Delta-method z score of the log ratio against ln(e^ε).
        let se = ((1.0 - hi) / (hi * draws as f64) + (1.0 - lo) / (lo * draws as f64)).sqrt();
        let z = ((hi / lo).ln() - level.epsilon()).abs() / se;
        worst_z = worst_z.max(z);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_gap < 1e-12 && worst_z < 4.0 && secs < 10.0,
        format!("analytic max |ratio/e^eps - 1| = {worst_gap:.1e}, empirical max |z| = {worst_z:.2} over 19 rates, {secs:.1}s"),
    )
}

fn brute_normalizer(qs: &[f64]) -> f64 {
    let n = qs.len() as f64;
    let qbar = qs.iter().sum::<f64>() / n;
    let mut s = 0.0;
    let mut total = 0.0;
    for (k, q) in qs.iter().enumerate() {
        s += q;
        let dev = s - (k + 1) as f64 * qbar;
        total += dev * dev;
    }
    total / n
}

fn normalizer_identity(_: &Path) -> Outcome {
    let start = Instant::now();
    let mut rng = stream(SEED, &[2]);
    let source = Distribution::STANDARD_NORMAL.source(None).unwrap();
    let mut worst = 0.0f64;
    for trace in 0..100u64 {
        let n = rng.random_range(2..=100_000u64);
        let tau = rng.random_range(0.05..0.95);
        let r = rng.random_range(0.1..0.95);
        let cfg = EstimatorConfig::new(tau, PrivacyLevel::from_rate(r).unwrap());
        let mut data_rng = stream(SEED, &[2, trace]);
        let data = std::iter::from_fn(|| Some(source.sample(&mut data_rng)));
        let out = run_session(&cfg, data, n, &mut rng, Recording { transcript: false, trajectory: true }).unwrap();
        let online = self_normalizer(&out.state).unwrap();
        let brute = brute_normalizer(&out.trajectory.unwrap().qs);
        worst = worst.max((online - brute).abs() / brute);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-9 && secs < 30.0, format!("max relative error {worst:.1e} over 100 traces, {secs:.1}s"))
}

fn squared_table_path(dir: &Path) -> PathBuf {
    PivotTable::cache_file(dir, PivotKind::SquaredIntegral, DEFAULT_PATHS, DEFAULT_GRID_STEPS, SEED)
}

fn pivot_critical_values(dir: &Path) -> Outcome {
    let start = Instant::now();
    let alphas = [0.05, 0.1, 0.2];
    let main = PivotTable::cached(dir, PivotKind::SquaredIntegral, &alphas, DEFAULT_PATHS, DEFAULT_GRID_STEPS, SEED).unwrap();
    let other_seed = PivotTable::build(PivotKind::SquaredIntegral, &alphas, DEFAULT_PATHS, DEFAULT_GRID_STEPS, SEED + 1).unwrap();
    let finer = PivotTable::build(PivotKind::SquaredIntegral, &alphas, DEFAULT_PATHS, 2 * DEFAULT_GRID_STEPS, SEED + 2).unwrap();
    let u = |t: &PivotTable| t.critical_value(0.05).unwrap().value;
    let values = [u(&main), u(&other_seed), u(&finer)];
    let spread = values.iter().fold(f64::MIN, |a, &b| a.max(b)) - values.iter().fold(f64::MAX, |a, &b| a.min(b));
    let ordered = main.u[0] > main.u[1] && main.u[1] > main.u[2];
    let secs = start.elapsed().as_secs_f64();
    check(
        spread <= 0.1 && values.iter().all(|&v| v > 1.96) && ordered && secs < 300.0,
        format!(
            "U(0.975) = {:.3} / {:.3} (second seed) / {:.3} ({} steps), spread {spread:.3}; U(0.95) = {:.3}, U(0.9) = {:.3}",
            values[0],
            values[1],
            values[2],
            2 * DEFAULT_GRID_STEPS,
            main.u[1],
            main.u[2]
        ),
    )
}

fn coverage_cell(dir: &Path, dist: Distribution, tau: f64, r: f64, n: u64) -> CoverageReport {
    let exp = ExperimentConfig {
        distribution: dist,
        tau: vec![tau],
        r: vec![r],
        n: vec![n],
        reps: 1000,
        seed: SEED,
        pivot_table: Some(squared_table_path(dir)),
        ..ExperimentConfig::default()
    };
    coverage_experiment(&exp).unwrap().into_iter().find(|x| x.method == "sn").unwrap()
}

fn normal_coverage(dir: &Path) -> Outcome {
    let cells = [(0.5, 0.5, 100_000, 0.944, 0.02), (0.3, 0.25, 10_000, 0.926, 0.03), (0.5, 0.25, 10_000, 0.834, 0.03)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (tau, r, n, target, tol) in cells {
        let start = Instant::now();
        let rep = coverage_cell(dir, Distribution::STANDARD_NORMAL, tau, r, n);
        let secs = start.elapsed().as_secs_f64();
        pass &= (rep.coverage - target).abs() <= tol && secs < 300.0;
        parts.push(format!("tau={tau} r={r} n={n}: {:.3} (target {target}±{tol}, mae {:.4})", rep.coverage, rep.mae));
    }
    check(pass, parts.join("; "))
}

fn cauchy_coverage(dir: &Path) -> Outcome {
    let rep = coverage_cell(dir, Distribution::STANDARD_CAUCHY, 0.8, 0.5, 100_000);
    let cov_ok = (rep.coverage - 0.970).abs() <= 0.03;
    let mae_ok = (rep.mae / 0.026 - 1.0).abs() <= 0.3;
    check(
        cov_ok && mae_ok,
        format!("coverage {:.3} (target 0.970±0.03), mae {:.4} (target 0.026±30%)", rep.coverage, rep.mae),
    )
}

fn clt_variance(_: &Path) -> Outcome {
    let (tau, r, n) = (0.3, 0.5, 100_000u64);
    let exp = ExperimentConfig { tau: vec![tau], r: vec![r], n: vec![n], reps: 2000, seed: SEED, ..Default::default() };
    let truth = Distribution::STANDARD_NORMAL.quantile(tau).unwrap();
    let f = Distribution::STANDARD_NORMAL.density(truth);
    let est = cell_estimates(&exp, &Cell { tau, r, n }).unwrap();
    let scaled: Vec<f64> = est.iter().map(|q| (n as f64).sqrt() * (q - truth)).collect();
    let var = common::sample_variance(&scaled);
    let theory = (1.0 - r * r * (2.0 * tau - 1.0).powi(2)) / (4.0 * r * r * f * f);
    let rel = var / theory - 1.0;
    check(rel.abs() <= 0.1, format!("var {var:.3} vs theory {theory:.3} (f(Q) = {f:.4}), relative {rel:+.3}"))
}

fn median_optimality(_: &Path) -> Outcome {
    let exp = ExperimentConfig {
        tau: vec![0.5],
        r: vec![0.25, 0.9],
        n: vec![100_000],
        reps: 2000,
        seed: SEED,
        ..Default::default()
    };
    let reports = variance_optimality_check(&exp).unwrap();
    let pass = reports.iter().all(|x| (0.9..=1.1).contains(&x.ratio));
    let detail = reports.iter().map(|x| format!("r={}: ratio {:.3}", x.r, x.ratio)).collect::<Vec<_>>().join(", ");
    check(pass, detail)
}

fn transport_equivalence(_: &Path) -> Outcome {
    let start = Instant::now();
    let rounds = 10_000u64;
    let cfg = EstimatorConfig::new(0.7, PrivacyLevel::from_rate(0.6).unwrap());
    let source = Distribution::STANDARD_NORMAL.source(None).unwrap();
    let mut data_rng = stream(SEED, &[8, 0]);
    let data: Vec<f64> = (0..rounds).map(|_| source.sample(&mut data_rng)).collect();

    let mut coins = stream(SEED, &[8, 1]);
    let local: EstimatorState = run_session(&cfg, data.iter().copied(), rounds, &mut coins, Recording::NONE).unwrap().state;

    let bind: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let opts = ServeOptions { max_rounds: Some(rounds), round_timeout: Duration::from_secs(5), ..Default::default() };
    let handle = Curator::bind(bind, cfg, &common::coarse_table(), opts).unwrap().spawn().unwrap();
    let mut coins = stream(SEED, &[8, 1]);
    let mut leaks = 0;
    for &x in &data {
        let round = user_client(handle.addr(), x, &mut coins, &ClientOptions::default()).unwrap();
        for needle in [x.to_le_bytes(), x.to_be_bytes()] {
            if round.sent.windows(8).any(|w| w == needle) {
                leaks += 1;
            }
        }
    }
    let remote = handle.join().unwrap();
    let identical = remote == local
        && remote.q.to_bits() == local.q.to_bits()
        && remote.qbar.to_bits() == local.qbar.to_bits()
        && remote.va.to_bits() == local.va.to_bits()
        && remote.vb.to_bits() == local.vb.to_bits();
    let secs = start.elapsed().as_secs_f64();
    check(
        identical && leaks == 0 && secs < 60.0,
        format!("{rounds} rounds, states identical: {identical}, frames with datum: {leaks}, {secs:.1}s"),
    )
}

fn ldpq(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ldpq")).args(args).output().expect("run ldpq");
    assert!(out.status.success(), "ldpq {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn cli_determinism(dir: &Path) -> Outcome {
    let sq = dir.join("cli-sq.json");
    let sup = dir.join("cli-sup.json");
    let (sq_s, sup_s) = (sq.to_str().unwrap(), sup.to_str().unwrap());
    ldpq(&["pivot", "--paths", "10000", "--grid-steps", "1000", "--seed", "3", "--out", sq_s]);
    ldpq(&["pivot", "--kind", "sup_abs", "--paths", "10000", "--grid-steps", "1000", "--seed", "3", "--out", sup_s]);

    let common_args = ["--seed", "11", "--pivot", sq_s];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("pivot", vec!["pivot", "--paths", "10000", "--grid-steps", "1000", "--seed", "5"]),
        ("simulate", vec!["simulate", "--tau", "0.3", "--r", "0.5", "--n", "20000", "--checkpoints", "100,1000,20000", "--alt-pivot", sup_s]),
        ("coverage", vec!["coverage", "--tau", "0.5,0.8", "--r", "0.25,0.5", "--n", "2000", "--reps", "60", "--alt-pivot", sup_s]),
        ("curve", vec!["curve", "--tau", "0.3", "--r", "0.5", "--n", "3000", "--reps", "60"]),
        ("boxes", vec!["boxes", "--dist", "pert", "--tau", "0.5", "--r", "0.5,0.9", "--n", "2000", "--reps", "40"]),
        ("optimality", vec!["optimality", "--dist", "cauchy", "--r", "0.5", "--n", "2000", "--reps", "60"]),
    ];
    let mut mismatched = Vec::new();
    let mut bytes = 0;
    for (name, base) in &runs {
        let outputs: Vec<Vec<u8>> = ["1", "4", "16"]
            .iter()
            .map(|t| {
                let mut args = base.clone();
                if *name != "pivot" {
                    args.extend_from_slice(&common_args);
                }
                args.extend_from_slice(&["--threads", t]);
                ldpq(&args)
            })
            .collect();
        bytes += outputs[0].len();
        if outputs.iter().any(|o| o != &outputs[0] || o.is_empty()) {
            mismatched.push(*name);
        }
    }
    check(
        mismatched.is_empty(),
        format!("{} commands x threads 1/4/16, {bytes} bytes per pass, mismatched: {mismatched:?}", runs.len()),
    )
}
