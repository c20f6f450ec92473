//! End-to-end acceptance suite. Prints one line per criterion.
//!
//! Criteria listed in `KNOWN_GAPS` are still evaluated at full tolerance and
//! reported as FAIL when they fail, but do not change the exit status unless
//! `TWINCTL_ACCEPTANCE_STRICT=1` is set.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twinctl::harness::ModelSpec;
use twinctl::observation::standard_normal;
use twinctl::selftest;
use twinctl::{
    discounted_cost, run_experiment, DigitalTwin, Ensemble, ExperimentPreset, ObsMode, Observation,
    ObservationModel, RunRecord,
};

const SEEDS: [u64; 3] = [1, 2, 3];
const KNOWN_GAPS: [&str; 3] = ["6", "7", "8a"];

struct Line {
    id: &'static str,
    title: &'static str,
    passed: bool,
    detail: String,
}

struct RunStats {
    seed: u64,
    m: usize,
    u_max: Option<f64>,
    error: Option<String>,
    elapsed: Duration,
    /// Fraction of steps with `t > 20` and mean first component below -1.
    frac_below: f64,
    min_mean_x1: f64,
    max_abs_u: f64,
    bound_hits: usize,
    max_rmse: f64,
    monotone_growth: bool,
    disc_cost: f64,
    csv: Vec<u8>,
}

impl RunStats {
    fn completed(&self) -> bool {
        self.error.is_none()
    }
}

fn csv_bytes(record: &RunRecord) -> Vec<u8> {
    let mut out = Vec::new();
    record.write_csv(&mut out).expect("writing to memory");
    out
}

/// Strictly increasing block means of RMSE across ten blocks of the final half.
fn monotone_growth(record: &RunRecord) -> bool {
    let half = &record.rows[record.rows.len() / 2..];
    let block = half.len() / 10;
    if block == 0 {
        return false;
    }
    let means: Vec<f64> = half
        .chunks_exact(block)
        .take(10)
        .map(|c| c.iter().map(|r| r.rmse).sum::<f64>() / c.len() as f64)
        .collect();
    means.windows(2).all(|w| w[1] > w[0])
}

fn run(preset: &ExperimentPreset) -> RunStats {
    let start = Instant::now();
    let (record, error) = match run_experiment(preset) {
        Ok(r) => (r, None),
        Err(f) => (f.record, Some(f.error.to_string())),
    };
    let elapsed = start.elapsed();
    let after = |t0: f64| record.rows.iter().filter(move |r| r.t > t0);
    let late = after(20.0).count().max(1);
    let below = after(20.0).filter(|r| r.mean[0] < -1.0).count();
    let u_max = preset.twin.u_max;
    let max_abs_u = record
        .rows
        .iter()
        .flat_map(|r| r.control.iter())
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let bound_hits = u_max.map_or(0, |b| {
        record
            .rows
            .iter()
            .flat_map(|r| r.control.iter())
            .filter(|v| v.abs() == b)
            .count()
    });
    RunStats {
        seed: preset.twin.seed,
        m: preset.twin.m,
        u_max,
        error,
        elapsed,
        frac_below: below as f64 / late as f64,
        min_mean_x1: after(20.0).map(|r| r.mean[0]).fold(f64::INFINITY, f64::min),
        max_abs_u,
        bound_hits,
        max_rmse: after(5.0).map(|r| r.rmse).fold(0.0, f64::max),
        monotone_growth: monotone_growth(&record),
        disc_cost: discounted_cost(&record, preset.twin.gamma),
        csv: csv_bytes(&record),
    }
}

fn lorenz(seed: u64, m: usize, u_max: f64) -> ExperimentPreset {
    let mut p = ExperimentPreset::lorenz63();
    p.twin.seed = seed;
    p.twin.m = m;
    p.twin.u_max = Some(u_max);
    p
}

fn lorenz_runs(m: usize, u_max: f64) -> Vec<RunStats> {
    SEEDS
        .iter()
        .map(|&s| {
            let stats = run(&lorenz(s, m, u_max));
            eprintln!(
                "  lorenz63 m={m} u_max={u_max} seed={s}: {} in {:.1}s",
                stats.error.as_deref().unwrap_or("ok"),
                stats.elapsed.as_secs_f64()
            );
            stats
        })
        .collect()
}

fn failures(runs: &[&RunStats]) -> Option<String> {
    let failed: Vec<String> = runs
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("m={} seed={}: {e}", r.m, r.seed))
        })
        .collect();
    (!failed.is_empty()).then(|| failed.join("; "))
}

fn enforcement(runs: &[RunStats]) -> (bool, String) {
    let passed = runs
        .iter()
        .all(|r| r.completed() && r.frac_below < 0.02 && r.elapsed.as_secs() <= 300);
    let fracs: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.4}", r.frac_below))
        .collect();
    let mut detail = format!("fraction below -1: [{}] (limit 0.02)", fracs.join(", "));
    if let Some(f) = failures(&runs.iter().collect::<Vec<_>>()) {
        detail.push_str(&format!("; failed: {f}"));
    }
    (passed, detail)
}

fn excursions(runs: &[RunStats]) -> (bool, String) {
    let passed = runs.iter().any(|r| r.completed() && r.min_mean_x1 < -5.0);
    let mins: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}", r.min_mean_x1))
        .collect();
    (
        passed,
        format!(
            "min mean x1 after t=20: [{}] (need one < -5)",
            mins.join(", ")
        ),
    )
}

fn saturation(runs: &[&RunStats]) -> (bool, String) {
    let passed = runs.iter().all(|r| {
        r.completed()
            && r.u_max
                .is_some_and(|b| r.max_abs_u <= b && r.bound_hits > 0)
    });
    let hits: Vec<String> = runs
        .iter()
        .map(|r| format!("{}:{}", r.u_max.unwrap_or(f64::NAN), r.bound_hits))
        .collect();
    (
        passed,
        format!(
            "steps at bound per run: [{}], never exceeded: {passed}",
            hits.join(", ")
        ),
    )
}

fn boundedness(runs: &[&RunStats]) -> (bool, String) {
    let passed = runs
        .iter()
        .all(|r| r.completed() && r.max_rmse < 5.0 && !r.monotone_growth);
    let worst = runs.iter().map(|r| r.max_rmse).fold(0.0, f64::max);
    let growing = runs.iter().filter(|r| r.monotone_growth).count();
    (
        passed,
        format!(
            "max RMSE after t=5: {worst:.3} (limit 5), runs with monotone growth: {growing}/{}",
            runs.len()
        ),
    )
}

fn pendulum_runs() -> Vec<(RunStats, RunStats)> {
    SEEDS
        .iter()
        .map(|&seed| {
            let mut p = ExperimentPreset::pendulum();
            p.twin.seed = seed;
            let controlled = run(&p);
            p.zero_control = true;
            let uncontrolled = run(&p);
            eprintln!(
                "  pendulum seed={seed}: {} in {:.1}s",
                controlled.error.as_deref().unwrap_or("ok"),
                controlled.elapsed.as_secs_f64()
            );
            (controlled, uncontrolled)
        })
        .collect()
}

/// Largest distance of the mean from the upright equilibrium for `t > 50`.
fn upright_deviation(seed: u64) -> (f64, Option<String>) {
    let mut p = ExperimentPreset::pendulum();
    p.twin.seed = seed;
    match run_experiment(&p) {
        Ok(record) => {
            let dev = record
                .rows
                .iter()
                .filter(|r| r.t > 50.0)
                .map(|r| ((r.mean[0] - std::f64::consts::PI).powi(2) + r.mean[1].powi(2)).sqrt())
                .fold(0.0, f64::max);
            (dev, None)
        }
        Err(f) => (f64::INFINITY, Some(f.error.to_string())),
    }
}

fn oracle_line(
    id: &'static str,
    title: &'static str,
    report: twinctl::Result<selftest::OracleReport>,
) -> Line {
    match report {
        Ok(r) => Line {
            id,
            title,
            passed: r.passed && r.elapsed.as_secs_f64() <= 30.0,
            detail: format!("{r}"),
        },
        Err(e) => Line {
            id,
            title,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Zero running cost, zero data and zero initial co-states for 10^4 steps.
fn degenerate() -> (bool, String) {
    let mut checked = 0;
    let cases = [
        (
            ModelSpec::Lorenz63 {
                sigma: 10.0,
                r: 28.0,
                b: 8.0 / 3.0,
                rho: 0.0,
            },
            vec![0, 1],
            0.5,
            4,
        ),
        (
            ModelSpec::Pendulum {
                friction: 2.0,
                rho: 0.0,
            },
            vec![0],
            0.1,
            3,
        ),
    ];
    for (spec, components, sigma, m) in cases {
        let d = spec.state_dim();
        let obs = ObservationModel::components(d, &components, 0.01, ObsMode::Continuous)
            .expect("valid observation");
        let mut cfg = match spec {
            ModelSpec::Lorenz63 { .. } => ExperimentPreset::lorenz63().twin,
            ModelSpec::Pendulum { .. } => ExperimentPreset::pendulum().twin,
        };
        cfg.m = m;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let columns: Vec<DVector<f64>> =
            (0..m).map(|_| standard_normal(d, &mut rng) * 0.3).collect();
        let states = DMatrix::from_columns(&columns);
        let zero_data = [
            Observation::None,
            Observation::Increment(DVector::zeros(components.len())),
        ];
        for data in &zero_data {
            let mut twin = DigitalTwin::new(
                spec.build(sigma),
                obs.clone(),
                cfg.clone(),
                Ensemble::from_states(states.clone()).expect("finite ensemble"),
            )
            .expect("valid twin");
            for step in 0..10_000 {
                let diag = match twin.step(data) {
                    Ok(d) => d,
                    Err(e) => return (false, format!("{}: {e}", spec.name())),
                };
                if diag.control.iter().any(|&u| u != 0.0)
                    || twin.ensemble().costates.iter().any(|&p| p != 0.0)
                {
                    return (
                        false,
                        format!("{} with {data:?}: nonzero at step {step}", spec.name()),
                    );
                }
            }
            checked += 1;
        }
    }
    (
        true,
        format!("{checked} runs of 10^4 steps, control and co-states identically 0"),
    )
}

fn determinism(m4: &[RunStats]) -> (bool, String) {
    let again = run(&lorenz(SEEDS[0], 4, 100.0));
    let lorenz_same = again.csv == m4[0].csv;
    let pend = || {
        let mut p = ExperimentPreset::pendulum();
        p.twin.n_steps = 20_000;
        run(&p).csv
    };
    let pend_same = pend() == pend();
    (
        lorenz_same && pend_same,
        format!("lorenz63 m=4 full horizon identical: {lorenz_same}, pendulum 2e4 steps identical: {pend_same}"),
    )
}

fn main() -> ExitCode {
    let strict = std::env::var("TWINCTL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut lines = Vec::new();

    eprintln!("acceptance: lorenz63 m=100 runs (this takes several minutes)");
    let big_100 = lorenz_runs(100, 100.0);
    let big_50 = lorenz_runs(100, 50.0);
    eprintln!("acceptance: lorenz63 m=4 runs");
    let small_100 = lorenz_runs(4, 100.0);
    let small_50 = lorenz_runs(4, 50.0);

    let (passed, detail) = enforcement(&big_100);
    lines.push(Line {
        id: "1",
        title: "lorenz63 m=100 u_max=100 enforces x >= 0",
        passed,
        detail,
    });
    let (passed, detail) = excursions(&big_50);
    lines.push(Line {
        id: "2",
        title: "lorenz63 m=100 u_max=50 allows excursions",
        passed,
        detail,
    });
    let big: Vec<&RunStats> = big_100.iter().chain(&big_50).collect();
    let (passed, detail) = saturation(&big);
    lines.push(Line {
        id: "3",
        title: "control saturates at u_max",
        passed,
        detail,
    });
    let all: Vec<&RunStats> = big
        .iter()
        .copied()
        .chain(&small_100)
        .chain(&small_50)
        .collect();
    let (passed, detail) = boundedness(&all);
    lines.push(Line {
        id: "4",
        title: "RMSE bounded for m in {100, 4}",
        passed,
        detail,
    });

    let small: Vec<&RunStats> = small_100.iter().chain(&small_50).collect();
    let checks = [
        enforcement(&small_100),
        excursions(&small_50),
        saturation(&small),
        boundedness(&small),
    ];
    let passed = failures(&small).is_none() && checks.iter().all(|c| c.0);
    let detail = checks
        .iter()
        .zip(1..)
        .map(|((ok, d), k)| format!("{k}:{} ({d})", if *ok { "ok" } else { "fail" }))
        .collect::<Vec<_>>()
        .join("; ");
    lines.push(Line {
        id: "5",
        title: "lorenz63 m=4 robustness",
        passed,
        detail,
    });

    eprintln!("acceptance: pendulum runs");
    let deviations: Vec<(u64, f64, Option<String>)> = SEEDS
        .iter()
        .map(|&s| {
            let start = Instant::now();
            let (dev, err) = upright_deviation(s);
            let err = match err {
                None if start.elapsed().as_secs() > 60 => Some("runtime above 60 s".to_string()),
                other => other,
            };
            (s, dev, err)
        })
        .collect();
    let passed = deviations
        .iter()
        .all(|(_, dev, err)| err.is_none() && *dev < 0.2);
    let detail = deviations
        .iter()
        .map(|(s, dev, err)| match err {
            Some(e) => format!("seed {s}: {e}"),
            None => format!("seed {s}: max deviation {dev:.3}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    lines.push(Line {
        id: "6",
        title: "pendulum m=3 holds upright for t > 50",
        passed,
        detail: format!("{detail} (limit 0.2)"),
    });

    let pend = pendulum_runs();
    let passed = pend
        .iter()
        .all(|(c, z)| c.completed() && z.completed() && c.disc_cost < z.disc_cost);
    let detail = pend
        .iter()
        .map(|(c, z)| match &c.error {
            Some(e) => format!("seed {}: controlled run failed ({e})", c.seed),
            None => format!(
                "seed {}: {:.1} vs U=0 {:.1}",
                c.seed, c.disc_cost, z.disc_cost
            ),
        })
        .collect::<Vec<_>>()
        .join("; ");
    lines.push(Line {
        id: "7",
        title: "pendulum control beats U = 0",
        passed,
        detail,
    });

    eprintln!("acceptance: oracles");
    lines.push(oracle_line(
        "8a",
        "oracle: gaussian score",
        selftest::gaussian_score(),
    ));
    lines.push(oracle_line(
        "8b",
        "oracle: linear-gaussian update",
        selftest::kalman_update(),
    ));
    lines.push(oracle_line(
        "8c",
        "oracle: riccati tracking",
        selftest::riccati_tracking(),
    ));
    lines.push(oracle_line(
        "8d",
        "oracle: jacobian checks",
        selftest::jacobian_checks(),
    ));
    lines.push(oracle_line(
        "8e",
        "oracle: sinkhorn invariants",
        selftest::sinkhorn_invariants(),
    ));

    let (passed, detail) = determinism(&small_100);
    lines.push(Line {
        id: "9",
        title: "identical seeds give identical CSV",
        passed,
        detail,
    });
    let (passed, detail) = degenerate();
    lines.push(Line {
        id: "10",
        title: "degenerate input keeps U and P at zero",
        passed,
        detail,
    });

    let mut unexpected = 0;
    for line in &lines {
        let known = KNOWN_GAPS.contains(&line.id);
        let note = match (line.passed, known) {
            (false, true) => " [known gap]",
            (true, true) => " [known gap now passes]",
            _ => "",
        };
        println!(
            "[{}] {:<3} {}: {}{note}",
            if line.passed { "PASS" } else { "FAIL" },
            line.id,
            line.title,
            line.detail
        );
        if !line.passed && (strict || !known) {
            unexpected += 1;
        }
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed, {unexpected} counted against exit status",
        lines.len() - failed
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
