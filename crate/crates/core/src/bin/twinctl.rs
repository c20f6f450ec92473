use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use twinctl::config::{echo_config, parse_config};
use twinctl::harness::RunFailure;
use twinctl::{discounted_cost, run_experiment, ExperimentPreset, RunRecord, TwinError};

#[derive(Parser)]
#[command(
    name = "twinctl",
    version,
    about = "Particle digital twin with ensemble Kalman assimilation and co-state control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write run.csv plus config.txt.
    Run(RunArgs),
    /// Check a preset or config file and print the resolved settings.
    Validate(Source),
    /// Run the analytic oracle checks.
    Selftest,
}

#[derive(Args)]
struct Source {
    /// Built-in preset: lorenz63 or pendulum.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed, or a comma-separated list of seeds for a sweep.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Ensemble size.
    #[arg(long)]
    m: Option<usize>,
    /// Control bound, or `none`.
    #[arg(long, value_parser = parse_umax)]
    umax: Option<UMax>,
    #[arg(long)]
    n_steps: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Write here instead of a fresh timestamped directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Parent of the timestamped run directories.
    #[arg(
        long,
        env = "TWINCTL_OUT",
        default_value = "runs",
        hide_env_values = true
    )]
    out_root: PathBuf,
    /// Seeds run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy)]
struct UMax(Option<f64>);

fn parse_umax(s: &str) -> Result<UMax, String> {
    if s == "none" {
        return Ok(UMax(None));
    }
    s.parse::<f64>()
        .map(|v| UMax(Some(v)))
        .map_err(|_| format!("expected a number or `none`, got `{s}`"))
}

impl Source {
    /// Resolved presets, one per seed, validated before anything runs.
    fn presets(&self) -> twinctl::Result<Vec<ExperimentPreset>> {
        let mut base = match (&self.preset, &self.config) {
            (Some(name), _) => ExperimentPreset::by_name(name)?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    TwinError::config("config", format!("cannot read {}: {e}", path.display()))
                })?;
                parse_config(&text)?
            }
            (None, None) => {
                return Err(TwinError::Usage(
                    "one of --preset or --config is required".into(),
                ))
            }
        };
        if let Some(m) = self.m {
            base.twin.m = m;
        }
        if let Some(UMax(u)) = self.umax {
            base.twin.u_max = u;
        }
        if let Some(n) = self.n_steps {
            base.twin.n_steps = n;
        }
        let seeds = if self.seed.is_empty() {
            vec![base.twin.seed]
        } else {
            self.seed.clone()
        };
        seeds
            .into_iter()
            .map(|seed| {
                let mut p = base.clone();
                p.twin.seed = seed;
                p.validate()?;
                Ok(p)
            })
            .collect()
    }
}

fn config_failure(err: &TwinError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(2)
}

fn timestamp() -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    format!("{}-{:09}", now.as_secs(), now.subsec_nanos())
}

/// Creates a directory that did not exist before.
fn fresh_dir(root: &Path, stem: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    for attempt in 0.. {
        let name = if attempt == 0 {
            stem.to_string()
        } else {
            format!("{stem}-{attempt}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

/// Writes through a temporary file so readers never see a half-written file.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> io::Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut out)?;
        out.flush()?;
    }
    fs::rename(tmp, path)
}

fn failure_dump(failure: &RunFailure) -> String {
    let mut text = format!("error: {}\n", failure.error);
    if let TwinError::NonFinite {
        diagnostics,
        snapshot,
        ..
    } = failure.error.root()
    {
        text.push_str(&format!("diagnostics: {diagnostics:?}\n"));
        text.push_str(&format!(
            "time: {}\nstates:{}costates:{}",
            snapshot.time, snapshot.states, snapshot.costates
        ));
    }
    if let Some(row) = failure.record.final_row() {
        text.push_str(&format!("last recorded row: {row:?}\n"));
    }
    text
}

struct Outcome {
    seed: u64,
    dir: PathBuf,
    result: Result<RunRecord, RunFailure>,
}

fn run_one(preset: &ExperimentPreset, dir: PathBuf) -> io::Result<Outcome> {
    write_atomic(&dir.join("config.txt"), |out| {
        out.write_all(echo_config(preset).as_bytes())
    })?;
    let result = run_experiment(preset);
    let record = match &result {
        Ok(record) => record,
        Err(failure) => {
            write_atomic(&dir.join("failure.txt"), |out| {
                out.write_all(failure_dump(failure).as_bytes())
            })?;
            &failure.record
        }
    };
    write_atomic(&dir.join("run.csv"), |out| record.write_csv(out))?;
    Ok(Outcome {
        seed: preset.twin.seed,
        dir,
        result,
    })
}

fn run(args: RunArgs) -> ExitCode {
    let presets = match args.source.presets() {
        Ok(p) => p,
        Err(e) => return config_failure(&e),
    };
    let sweep = presets.len() > 1;
    let stamp = timestamp();
    let mut dirs = Vec::new();
    for p in &presets {
        let dir = match &args.out_dir {
            Some(dir) if sweep => fs::create_dir_all(dir.join(format!("seed-{}", p.twin.seed)))
                .map(|_| dir.join(format!("seed-{}", p.twin.seed))),
            Some(dir) => fs::create_dir_all(dir).map(|_| dir.clone()),
            None => fresh_dir(
                &args.out_root,
                &format!("{}-{stamp}-seed{}", p.name, p.twin.seed),
            ),
        };
        match dir {
            Ok(d) => dirs.push(d),
            Err(e) => {
                eprintln!("error: cannot create output directory: {e}");
                return ExitCode::from(1);
            }
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes = Mutex::new(Vec::new());
    let jobs = args.jobs.clamp(1, presets.len());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= presets.len() {
                    break;
                }
                let outcome = run_one(&presets[k], dirs[k].clone());
                outcomes
                    .lock()
                    .expect("no worker panics while holding the lock")
                    .push((k, outcome));
            });
        }
    });
    let mut outcomes = outcomes.into_inner().expect("workers finished");
    outcomes.sort_by_key(|(k, _)| *k);

    let mut code = ExitCode::SUCCESS;
    for (k, outcome) in outcomes {
        match outcome {
            Ok(Outcome {
                seed,
                dir,
                result: Ok(record),
            }) => {
                let final_rmse = record.final_row().map_or(f64::NAN, |r| r.rmse);
                let cost = discounted_cost(&record, presets[k].twin.gamma);
                println!(
                    "seed={seed} steps={} final_rmse={final_rmse:.6} discounted_cost={cost:.6} out={}",
                    record.rows.len() - 1,
                    dir.display()
                );
            }
            Ok(Outcome {
                seed,
                dir,
                result: Err(failure),
            }) => {
                eprintln!(
                    "seed={seed} failed: {failure} (dump in {})",
                    dir.join("failure.txt").display()
                );
                code = ExitCode::from(1);
            }
            Err(e) => {
                eprintln!("error writing output: {e}");
                code = ExitCode::from(1);
            }
        }
    }
    code
}

fn validate(source: Source) -> ExitCode {
    match source.presets() {
        Ok(presets) => {
            for p in presets {
                print!("{}", echo_config(&p));
            }
            ExitCode::SUCCESS
        }
        Err(e) => config_failure(&e),
    }
}

fn selftest() -> ExitCode {
    match twinctl::selftest::run_all() {
        Ok(reports) => {
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(source) => validate(source),
        Command::Selftest => selftest(),
    }
}
