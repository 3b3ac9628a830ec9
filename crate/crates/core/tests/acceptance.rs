//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p conmab-core --test acceptance`. A single criterion
//! can be selected by number: `cargo test -p conmab-core --test acceptance -- 7`.

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use conmab_core::allocator::{AllocatorKind, AllocatorParams};
use conmab_core::harness::suites::{epic_instance, EpicCell};
use conmab_core::harness::{
    epic_epir_suite, mean_se, monotonicity_suite, run_experiment, sweep_bs, EpicMode, EpicReport,
    ExperimentConfig, ExperimentReport, DEFAULT_BATCH_SIZES,
};
use conmab_core::linmodel::LearnerState;
use conmab_core::mechanism::{resample, run_mechanism, MechanismConfig, MechanismKind, RunOptions};
use conmab_core::rng::{derive_seed, rng_from_seed, Stream};
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

const MONOTONE_BUDGET: Duration = Duration::from_secs(180);
const DESK_BUDGET: Duration = Duration::from_secs(300);
/// Both truthful mechanisms must stay below this fraction of the baseline.
const BASELINE_FRACTION: f64 = 0.25;
const EPIC_SE_MULTIPLE: f64 = 3.0;
const DOUBLING_RATIO_MAX: f64 = 1.9;
const RIDGE_TOLERANCE: f64 = 1e-8;
const RIDGE_UPDATES: usize = 1000;
const RESAMPLE_DRAWS: usize = 100_000;
const SIGNIFICANCE: f64 = 0.01;
/// Iterations per batch size in the sweep, as in the original protocol.
const SWEEP_ITERATIONS: usize = 40;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn suite_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("ci").unwrap();
    cfg.workers = 0;
    cfg
}

fn desk_run() -> &'static (ExperimentReport, Duration) {
    static RUN: OnceLock<(ExperimentReport, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::preset("paper-desk").unwrap();
        let start = Instant::now();
        let report = run_experiment(&cfg, None).unwrap();
        (report, start.elapsed())
    })
}

fn epic_run() -> &'static EpicReport {
    static RUN: OnceLock<EpicReport> = OnceLock::new();
    RUN.get_or_init(|| epic_epir_suite(&suite_config(), EpicMode::Full, None).unwrap())
}

fn desk_final(kind: MechanismKind) -> f64 {
    desk_run().0.curve(kind).unwrap().final_mean()
}

fn m(kind: AllocatorKind) -> MechanismKind {
    MechanismKind::Allocator(kind)
}

fn monotone_stock() -> Outcome {
    let cfg = suite_config();
    let start = Instant::now();
    let report = monotonicity_suite(&cfg, &AllocatorKind::STOCK, None).unwrap();
    let elapsed = start.elapsed();
    let pass = report.violation_count() == 0 && elapsed <= MONOTONE_BUDGET;
    outcome(
        pass,
        format!(
            "{} instances, T={}, comparisons {:?}, violations {:?}, {:.1}s (budget {}s)",
            report.instances,
            report.horizon,
            report.comparisons,
            report.violations_by_allocator,
            elapsed.as_secs_f64(),
            MONOTONE_BUDGET.as_secs()
        ),
    )
}

fn monotone_power() -> Outcome {
    let cfg = suite_config();
    let report = monotonicity_suite(&cfg, &[AllocatorKind::BrokenProbe], None).unwrap();
    outcome(
        report.violation_count() >= 1,
        format!("broken probe: {} violations on the same grid", report.violation_count()),
    )
}

fn epir() -> Outcome {
    let r = epic_run();
    outcome(
        r.epir_violations == 0,
        format!(
            "{} truthful agent-runs, {} with a negative round, min round utility {}",
            r.epir_agent_runs, r.epir_violations, r.epir_min_round_utility
        ),
    )
}

fn epic() -> Outcome {
    let r = epic_run();
    let worst = r
        .cells
        .iter()
        .map(|c| c.difference_mean / c.difference_se.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    // Failed cells are re-estimated with many more seeds for the log; the
    // verdict still rests on the pre-registered seed count.
    let failures: Vec<String> = r
        .cells
        .iter()
        .filter(|c| !c.pass)
        .take(FOLLOW_UP_CELLS)
        .map(|c| {
            let (m, se) = epic_follow_up(c);
            format!(
                "inst {} {} ×{}: z {:.2} at {} seeds, {:.2} at {FOLLOW_UP_SEEDS}",
                c.instance,
                c.allocator,
                c.multiplier,
                c.difference_mean / c.difference_se,
                r.resample_seeds,
                m / se
            )
        })
        .collect();
    outcome(
        r.epic_failures() == 0 && r.cells.len() >= 100 * 5,
        format!(
            "{} cells ({} instances, {} seeds, T={}, δ={}), {} beyond {}·SE, worst z {:.2} {:?}",
            r.cells.len(),
            r.instances,
            r.resample_seeds,
            r.horizon,
            r.delta,
            r.epic_failures(),
            EPIC_SE_MULTIPLE,
            worst,
            failures
        ),
    )
}

const FOLLOW_UP_CELLS: usize = 10;
const FOLLOW_UP_SEEDS: usize = 5000;

/// Paired truthful − deviant utility difference of one cell over fresh seeds.
fn epic_follow_up(cell: &EpicCell) -> (f64, f64) {
    let cfg = suite_config();
    let instance = epic_instance(&cfg, cell.instance).unwrap();
    let mut bids = instance.bids();
    bids[cell.agent] = cell.deviant_bid;
    let deviant = instance.with_bids(&bids).unwrap();
    let mech = MechanismConfig {
        allocator: AllocatorParams {
            batch_size: cfg.suites.batch_size,
            ..cfg.allocator
        },
        ..cfg.mechanism_config()
    };
    let diffs: Vec<f64> = (0..FOLLOW_UP_SEEDS)
        .map(|s| {
            let seed = derive_seed(cfg.seed ^ 0xF011_0000, Stream::Resample, s as u64);
            let t = run_mechanism(cell.allocator, &instance, &mech, seed, RunOptions::default()).unwrap();
            let d = run_mechanism(cell.allocator, &deviant, &mech, seed, RunOptions::default()).unwrap();
            t.utilities[cell.agent] - d.utilities[cell.agent]
        })
        .collect();
    mean_se(&diffs)
}

fn regret_vs_baseline() -> Outcome {
    let (_, elapsed) = desk_run();
    let base = desk_final(MechanismKind::ExplorationSeparated);
    let e = desk_final(m(AllocatorKind::ELinUcbSB));
    let s = desk_final(m(AllocatorKind::SupLinUcbS));
    let pass = e < BASELINE_FRACTION * base && s < BASELINE_FRACTION * base && *elapsed <= DESK_BUDGET;
    outcome(
        pass,
        format!(
            "baseline {base:.1}, m-elinucb-sb {e:.1} ({:.3}), m-suplinucb-s {s:.1} ({:.3}), limit {BASELINE_FRACTION}, {:.1}s",
            e / base,
            s / base,
            elapsed.as_secs_f64()
        ),
    )
}

fn batched_beats_staged() -> Outcome {
    let e = desk_final(m(AllocatorKind::ELinUcbSB));
    let s = desk_final(m(AllocatorKind::SupLinUcbS));
    outcome(e < s, format!("m-elinucb-sb {e:.1} vs m-suplinucb-s {s:.1} (ratio {:.2})", s / e))
}

fn batch_sweep() -> Outcome {
    let mut cfg = ExperimentConfig::preset("ci").unwrap();
    cfg.iterations = SWEEP_ITERATIONS;
    let points = sweep_bs(&cfg, &DEFAULT_BATCH_SIZES, None).unwrap();
    let at = |bs: usize| points.iter().find(|p| p.batch_size == bs).unwrap().final_regret_mean;
    let table: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.1}", p.batch_size, p.final_regret_mean))
        .collect();
    outcome(at(100) < at(1), format!("T={}, {} iterations, {}", cfg.horizon, cfg.iterations, table.join(" ")))
}

fn staged_mean_regret(horizon: usize, seeds: usize) -> f64 {
    let mut cfg = ExperimentConfig::preset("paper-desk").unwrap();
    cfg.horizon = horizon;
    let params = AllocatorParams::default();
    let mech = MechanismConfig {
        allocator: params,
        ..MechanismConfig::default()
    };
    let options = RunOptions {
        record_rounds: false,
        disable_resampling: true,
    };
    let total: f64 = (0..seeds)
        .map(|k| {
            let instance = conmab_core::harness::experiment::iteration_instance(&cfg, k).unwrap();
            run_mechanism(AllocatorKind::SupLinUcbS, &instance, &mech, 0, options)
                .unwrap()
                .final_regret
        })
        .sum();
    total / seeds as f64
}

fn sublinear() -> Outcome {
    let t = 50_000;
    let r1 = staged_mean_regret(t, 10);
    let r2 = staged_mean_regret(2 * t, 10);
    let ratio = r2 / r1;
    outcome(
        ratio <= DOUBLING_RATIO_MAX,
        format!("R({t}) = {r1:.1}, R({}) = {r2:.1}, ratio {ratio:.3} (limit {DOUBLING_RATIO_MAX})", 2 * t),
    )
}

/// Solves `(I + Σ x xᵀ) θ = Σ r x` from scratch by Gaussian elimination with
/// partial pivoting.
fn dense_ridge(xs: &[Vec<f64>], rs: &[bool]) -> Vec<f64> {
    let d = xs[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (x, &r) in xs.iter().zip(rs) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
            if r {
                a[i][d] += x[i];
            }
        }
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in col + 1..d {
            let f = a[row][col] / a[col][col];
            for k in col..=d {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut theta = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| a[i][k] * theta[k]).sum();
        theta[i] = (a[i][d] - s) / a[i][i];
    }
    theta
}

fn ks_p_value(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let mut rng = rng_from_seed(derive_seed(99, Stream::Contexts, trial));
        let d = 2 + trial as usize % 4;
        let mut learner = LearnerState::new(d);
        let mut xs = Vec::new();
        let mut rs = Vec::new();
        for step in 1..=RIDGE_UPDATES {
            let mut x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= nrm);
            let r = rng.random_bool(0.4);
            learner.update(&x, r);
            xs.push(x);
            rs.push(r);
            if step % 100 == 0 {
                let exact = dense_ridge(&xs, &rs);
                for (a, b) in learner.theta().iter().zip(&exact) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }

    let delta = 0.1;
    let bids = vec![0.5; RESAMPLE_DRAWS];
    let out = resample(&bids, delta, 4242).unwrap();
    let kept = out.draws.iter().filter(|d| d.kept).count() as u64;
    let binom = Binomial::new(1.0 - delta, RESAMPLE_DRAWS as u64).unwrap();
    let lo = binom.inverse_cdf(SIGNIFICANCE / 2.0);
    let hi = binom.inverse_cdf(1.0 - SIGNIFICANCE / 2.0);
    let mut u: Vec<f64> = out
        .draws
        .iter()
        .filter(|d| !d.kept)
        .map(|d| d.eta.powf(1.0 - delta))
        .collect();
    u.sort_by(f64::total_cmp);
    let p = ks_p_value(&u);
    let pass = worst <= RIDGE_TOLERANCE && (lo..=hi).contains(&kept) && p > SIGNIFICANCE;
    outcome(
        pass,
        format!(
            "ridge max deviation {worst:.2e} (tol {RIDGE_TOLERANCE:.0e}); η=1 count {kept} in [{lo}, {hi}]; KS p = {p:.3}"
        ),
    )
}

fn stage_bounds() -> Outcome {
    let (report, _) = desk_run();
    let mut growth = 0;
    let mut forced = 0;
    let mut survived = Vec::new();
    for it in &report.iterations {
        let run = it.run(m(AllocatorKind::SupLinUcbS)).unwrap();
        let diag = run.stage_diagnostics.as_ref().unwrap();
        growth += diag.index_set_growth_excess().len();
        forced += diag.forced_exploit_excess().len();
        survived.push(diag.best_agent_survived.unwrap() as f64 / diag.rounds as f64);
    }
    let min_survival = survived.iter().copied().fold(1.0, f64::min);
    outcome(
        growth == 0 && forced == 0,
        format!(
            "{} runs: index-set growth excesses {growth}, forced-exploit excesses {forced}; best agent kept in ≥{:.4} of rounds",
            report.iterations.len(),
            min_survival
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("monotonicity of stock allocators", monotone_stock),
        ("monotonicity suite detects the broken probe", monotone_power),
        ("individual rationality under truthful bids", epir),
        ("incentive compatibility within standard error", epic),
        ("regret far below the exploration-separated baseline", regret_vs_baseline),
        ("batched elimination beats the staged rule", batched_beats_staged),
        ("batching reduces regret", batch_sweep),
        ("sublinear regret of the staged rule", sublinear),
        ("incremental ridge and resampling distribution", oracle_equivalence),
        ("stage index-set and forced-exploit bounds", stage_bounds),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += !pass as usize;
        println!(
            "criterion {number:>2} {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
