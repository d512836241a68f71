use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtinterp::evaluation::linear_fit;
use rtinterp::exec::Execution;
use rtinterp::harness::{self, EvalSettings, Evaluator, HarnessError, SweepAxis, TruthModel};
use rtinterp::interpolation::{InterpolationParams, Method};
use rtinterp::pathdata::{read_grid_file, read_scene_file, DataError, RunConfig};
use rtinterp::scenarios::ScenarioSpec;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_EMPTY: u8 = 4;

/// Ray-traced channel interpolation over synthetic urban scenes.
#[derive(Parser)]
#[command(name = "rtinterp", version)]
struct Cli {
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the reference lattice; writes grid.csv, targets.csv, ledger.csv,
    /// scene.json and scenario.toml.
    Trace {
        #[command(flatten)]
        common: Common,
    },
    /// Interpolate paths at target points from a grid CSV.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: PathBuf,
        /// Targets CSV; defaults to the scenario's seeded targets.
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Compare interpolated results with traced truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        results: PathBuf,
        /// Grid CSV, enables the nearest-reference capacity baseline.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Interpolate and evaluate once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// grid_spacing | sigma | p_th | method
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Runtime ledger over increasing link counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated link counts.
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Built-in scenario name or scenario TOML file.
    #[arg(long, default_value = "most_los")]
    scenario: String,
    /// Scene JSON replacing the scenario's scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Run-config TOML replacing the scenario's config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Target sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampled targets.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    grid_spacing: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    p_th: Option<f64>,
    #[arg(long)]
    d_th: Option<f64>,
    /// kernel | nearest | average
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    max_order: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth channel model: exhaustive | rm | pwa
    #[arg(long, default_value = "exhaustive")]
    model: TruthModel,
    /// Skip the capacity metrics.
    #[arg(long)]
    no_capacity: bool,
}

impl EvalArgs {
    fn settings(&self, config: &RunConfig) -> EvalSettings {
        EvalSettings {
            truth: self.model,
            capacity: !self.no_capacity,
            cluster_epsilon: config.cluster_epsilon,
        }
    }
}

impl Common {
    fn scenario(&self) -> harness::Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::resolve(&self.scenario)?;
        if let Some(path) = &self.scene {
            spec.scene = read_scene_file(path)?;
        }
        if let Some(path) = &self.config {
            spec.config = RunConfig::read_file(path)?;
        }
        if let Some(s) = self.grid_spacing {
            spec.grid_spacing = s;
        }
        let (count, seed) = (
            self.count.unwrap_or(spec.target_count),
            self.seed.unwrap_or(spec.target_seed),
        );
        spec = spec.with_targets(count, seed);
        let c = &mut spec.config;
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.p_th {
            c.p_th = v;
        }
        if let Some(v) = self.d_th {
            c.d_th = Some(v);
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.max_order {
            c.max_order = v;
        }
        c.validate()?;
        for w in spec.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(spec)
    }
}

enum Outcome {
    Done,
    Empty(String),
}

fn run(cli: Cli, exec: Execution) -> harness::Result<Outcome> {
    match cli.command {
        Command::Trace { common } => {
            let spec = common.scenario()?;
            let run = harness::run_trace(&spec, exec)?;
            harness::write_trace(&run, &spec, &common.out)?;
            let with_paths = run.grid.references().iter().filter(|r| !r.paths.is_empty()).count();
            println!(
                "traced {} references ({} with paths) into {}",
                run.grid.len(),
                with_paths,
                common.out.display()
            );
            if with_paths == 0 {
                return Ok(Outcome::Empty("no reference received any path".into()));
            }
        }
        Command::Interpolate { common, grid, targets } => {
            let spec = common.scenario()?;
            let grid = read_grid_file(&grid)?;
            let targets = match targets {
                Some(path) => harness::read_targets_file(path)?,
                None => spec.targets(),
            };
            let spacing = common.grid_spacing.or(grid.grid_spacing_hint());
            let params = InterpolationParams::from_config(&spec.config, spacing)?;
            let run = harness::run_interpolate(&grid, &targets, params, exec)?;
            run.write(&common.out)?;
            let failed = run.rows.iter().filter(|r| r.result.is_none()).count();
            println!(
                "interpolated {} targets ({} without neighbours or failed) into {}",
                run.rows.len(),
                failed,
                common.out.display()
            );
            if run.is_empty_result() {
                return Ok(Outcome::Empty("no target received an interpolated path".into()));
            }
        }
        Command::Evaluate {
            common,
            results,
            grid,
            eval,
        } => {
            let spec = common.scenario()?;
            let (tx, estimates) = harness::read_results_file(&results)?;
            if (tx - spec.tx).norm() > 1e-9 {
                eprintln!("warning: results transmitter differs from the scenario; using the results' transmitter");
            }
            let grid = grid.map(read_grid_file).transpose()?;
            let evaluator = Evaluator::new(
                &spec.scene,
                tx,
                spec.sector_azimuth(),
                &spec.config,
                grid.as_ref(),
                eval.settings(&spec.config),
            )?;
            let run = harness::run_evaluate(&evaluator, &estimates, exec)?;
            run.write(&common.out)?;
            print!("{}", run.report());
            if run.rows.is_empty() {
                return Ok(Outcome::Empty("results file holds no targets".into()));
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            eval,
        } => {
            let spec = common.scenario()?;
            let cells = harness::run_sweep(&spec, axis, &values, eval.settings(&spec.config), exec)?;
            harness::write_sweep(&common.out, axis, &cells)?;
            let mut summary = Vec::new();
            harness::write_sweep_summary(&mut summary, axis, &cells)?;
            print!("{}", String::from_utf8_lossy(&summary));
            if let Some(c) = cells.iter().find(|c| c.interpolation.is_empty_result()) {
                return Ok(Outcome::Empty(format!(
                    "{}={} produced no interpolated paths",
                    axis.name(),
                    c.value
                )));
            }
        }
        Command::Bench { common, sizes, repeats } => {
            if sizes.len() < 2 {
                return Err(HarnessError::Usage("bench needs at least two sizes".into()));
            }
            let spec = common.scenario()?;
            let ledger = harness::run_bench(&spec, &sizes, repeats, exec)?;
            write_ledger(&common.out, &ledger)?;
            println!("stage,links,trace_calls,seconds");
            for e in &ledger.entries {
                println!("{},{},{},{:.6e}", e.stage, e.links, e.trace_calls, e.seconds);
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = ledger.stage("trace").map(|e| (e.links as f64, e.seconds)).unzip();
            let (slope, _, r2) = linear_fit(&xs, &ys);
            println!("trace seconds per link={slope:.6e} r2={r2:.4}");
        }
    }
    Ok(Outcome::Done)
}

fn write_ledger(dir: &Path, ledger: &rtinterp::evaluation::RuntimeLedger) -> harness::Result<()> {
    std::fs::create_dir_all(dir).map_err(DataError::from)?;
    let mut buf = Vec::new();
    ledger.write_csv(&mut buf)?;
    std::fs::write(dir.join("ledger.csv"), buf).map_err(DataError::from)?;
    Ok(())
}

fn execution(threads: Option<usize>) -> Result<Execution, String> {
    match threads {
        Some(0) => Err("--threads must be at least 1".into()),
        Some(1) => Ok(Execution::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| e.to_string())?;
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match execution(cli.threads) {
        Ok(e) => e,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(cli, exec) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Empty(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(EXIT_EMPTY)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_CONFIG })
        }
    }
}
