//! In-memory implementations of the command-line subcommands plus the files
//! they read and write. The CLI binary only parses flags and maps errors to
//! exit codes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::evaluation::{
    empirical_cdf, path_set_diagnostics, received_power_error, relative_se_error, spectral_efficiency, summarize,
    LinkBudget, RuntimeLedger, Summary,
};
use crate::exec::Execution;
use crate::geometry::{GeometryError, PathSet, Scene, Tracer, Vec3};
use crate::interpolation::{InterpolationError, InterpolationParams, InterpolationResult, Interpolator, Method};
use crate::mimo::{
    build_upa, channel_matrix, channel_matrix_exhaustive, constant_channel_matrix, facing, sector_arrays,
    select_best_sector, ArrayGeometry, Carrier, ChannelMatrix, ChannelPath, DistanceModel, MimoError, References,
};
use crate::pathdata::{
    read_path_table, write_path_sets, write_scene_file, DataError, ReferenceGrid, RunConfig, SCHEMA_VERSION,
};
use crate::reflection::{recover_transform_from_route, ImageTransform};
use crate::scenarios::ScenarioSpec;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Interpolation(#[from] InterpolationError),
    #[error(transparent)]
    Mimo(#[from] MimoError),
    #[error("{0}")]
    Usage(String),
}

impl HarnessError {
    /// True for failures reading or writing data files (including files
    /// with an unsupported schema version), as opposed to bad configuration
    /// or arguments.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            HarnessError::Data(
                DataError::Io(_) | DataError::Parse { .. } | DataError::InvalidGrid(_) | DataError::Version { .. }
            )
        )
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(DataError::from)?;
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(DataError::from)?))
}

// ---------------------------------------------------------------- targets

const TARGETS_TAG: &str = "# rtinterp-targets";

pub fn write_targets<W: Write>(mut dest: W, targets: &[Vec3]) -> Result<()> {
    let mut out = format!("{TARGETS_TAG}\n# schema_version={SCHEMA_VERSION}\nx,y,z\n");
    for t in targets {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", t.x, t.y, t.z);
    }
    dest.write_all(out.as_bytes()).map_err(DataError::from)?;
    Ok(())
}

pub fn read_targets<R: Read>(mut source: R) -> Result<Vec<Vec3>> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(DataError::from)?;
    let mut lines = text.lines();
    if lines.next() != Some(TARGETS_TAG) {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected `{TARGETS_TAG}`"),
        }
        .into());
    }
    let version = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema_version="))
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or(DataError::Parse {
            line: 2,
            message: "expected `# schema_version=N`".into(),
        })?;
    if version != SCHEMA_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: SCHEMA_VERSION,
        }
        .into());
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 4;
        let rec = rec.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or(DataError::Parse {
                line,
                message: format!("column {} is not a number", k + 1),
            })?;
        }
        out.push(Vec3::from(xyz));
    }
    Ok(out)
}

pub fn read_targets_file(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    read_targets(File::open(path).map_err(DataError::from)?)
}

// ---------------------------------------------------------------- trace

/// Traces every point from `tx`; returns the sets and the trace-call count.
pub fn trace_links(
    scene: &Scene,
    tx: &Vec3,
    points: &[Vec3],
    config: &RunConfig,
    exec: Execution,
) -> Result<(Vec<PathSet>, u64)> {
    let tracer = Tracer::new(scene, config.carrier_frequency, config.max_order)?;
    let sets = exec
        .map(points, |p| tracer.trace(tx, p))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((sets, tracer.calls()))
}

pub struct TraceRun {
    pub grid: ReferenceGrid,
    pub targets: Vec<Vec3>,
    pub ledger: RuntimeLedger,
}

pub fn run_trace(spec: &ScenarioSpec, exec: Execution) -> Result<TraceRun> {
    spec.config.validate()?;
    let points = spec.reference_points()?;
    let mut ledger = RuntimeLedger::new();
    let start = Instant::now();
    let (sets, calls) = trace_links(&spec.scene, &spec.tx, &points, &spec.config, exec)?;
    ledger.record(
        "reference_grid",
        points.len() as u64,
        calls,
        start.elapsed().as_secs_f64(),
    );
    let grid = ReferenceGrid::new(spec.tx, sets, Some(spec.grid_spacing))?;
    Ok(TraceRun {
        grid,
        targets: spec.targets(),
        ledger,
    })
}

/// Writes `grid.csv`, `targets.csv`, `ledger.csv`, `scene.json` and a
/// `scenario.toml` that points at the written scene.
pub fn write_trace(run: &TraceRun, spec: &ScenarioSpec, dir: &Path) -> Result<()> {
    let mut w = create(dir, "grid.csv")?;
    crate::pathdata::write_grid(&run.grid, &mut w)?;
    w.flush().map_err(DataError::from)?;
    let mut w = create(dir, "targets.csv")?;
    write_targets(&mut w, &run.targets)?;
    w.flush().map_err(DataError::from)?;
    let mut w = create(dir, "ledger.csv")?;
    run.ledger.write_csv(&mut w)?;
    w.flush().map_err(DataError::from)?;
    write_scene_file(&spec.scene, dir.join("scene.json"))?;
    fs::write(dir.join("scenario.toml"), spec.to_toml("scene.json")).map_err(DataError::from)?;
    Ok(())
}

// ---------------------------------------------------------------- interpolate

#[derive(Debug, Clone, PartialEq)]
pub enum TargetStatus {
    Ok,
    NoNeighbors,
    Failed(String),
}

impl TargetStatus {
    fn label(&self) -> &str {
        match self {
            TargetStatus::Ok => "ok",
            TargetStatus::NoNeighbors => "no_neighbors",
            TargetStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetResult {
    pub target: Vec3,
    pub status: TargetStatus,
    pub result: Option<InterpolationResult>,
}

#[derive(Debug, Clone)]
pub struct InterpolationRun {
    pub tx: Vec3,
    pub grid_spacing: Option<f64>,
    pub rows: Vec<TargetResult>,
    pub seconds: f64,
}

/// Interpolates every target; per-target failures are recorded, not raised.
pub fn run_interpolate(
    grid: &ReferenceGrid,
    targets: &[Vec3],
    params: InterpolationParams,
    exec: Execution,
) -> Result<InterpolationRun> {
    let interp = Interpolator::new(grid, params)?;
    Ok(interpolate_targets(&interp, targets, grid.grid_spacing_hint(), exec))
}

pub fn interpolate_targets(
    interp: &Interpolator,
    targets: &[Vec3],
    grid_spacing: Option<f64>,
    exec: Execution,
) -> InterpolationRun {
    let start = Instant::now();
    let rows = interp
        .interpolate_batch(targets, exec)
        .into_iter()
        .zip(targets)
        .map(|(r, t)| match r {
            Ok(res) => TargetResult {
                target: *t,
                status: TargetStatus::Ok,
                result: Some(res),
            },
            Err(InterpolationError::NoNeighbors { .. }) => TargetResult {
                target: *t,
                status: TargetStatus::NoNeighbors,
                result: None,
            },
            Err(e) => TargetResult {
                target: *t,
                status: TargetStatus::Failed(e.to_string()),
                result: None,
            },
        })
        .collect();
    InterpolationRun {
        tx: interp.tx(),
        grid_spacing,
        rows,
        seconds: start.elapsed().as_secs_f64(),
    }
}

impl InterpolationRun {
    /// One path set per target; targets without a result carry no paths.
    pub fn path_sets(&self) -> Vec<PathSet> {
        self.rows
            .iter()
            .map(|r| match &r.result {
                Some(res) => res.to_path_set(self.tx),
                None => PathSet {
                    tx: self.tx,
                    rx: r.target,
                    paths: Vec::new(),
                },
            })
            .collect()
    }

    /// No target received a single path.
    pub fn is_empty_result(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.result.as_ref().is_none_or(|res| res.paths.is_empty()))
    }

    pub fn write_results<W: Write>(&self, dest: W) -> Result<()> {
        write_path_sets(dest, &self.tx, &self.path_sets(), self.grid_spacing)?;
        Ok(())
    }

    /// Per-target status, neighbourhood size, cluster counts and scores.
    pub fn write_diagnostics<W: Write>(&self, mut dest: W) -> Result<()> {
        let mut out = String::from("x,y,z,status,neighbors,clusters_considered,clusters_kept,probabilities\n");
        for r in &self.rows {
            let t = r.target;
            let (n, k, kept, probs) = match &r.result {
                Some(res) => (
                    res.neighbors.len(),
                    res.clusters_considered,
                    res.clusters_kept,
                    res.probabilities
                        .iter()
                        .map(|p| format!("{p:.6}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
                None => (0, 0, 0, String::new()),
            };
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{},{n},{k},{kept},{probs}",
                t.x,
                t.y,
                t.z,
                r.status.label()
            );
        }
        dest.write_all(out.as_bytes()).map_err(DataError::from)?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = create(dir, "results.csv")?;
        self.write_results(&mut w)?;
        w.flush().map_err(DataError::from)?;
        let mut w = create(dir, "diagnostics.csv")?;
        self.write_diagnostics(&mut w)?;
        w.flush().map_err(DataError::from)?;
        Ok(())
    }
}

/// Reads a results (or grid) CSV as plain path sets, keeping file order.
pub fn read_results<R: Read>(source: R) -> Result<(Vec3, Vec<PathSet>)> {
    let table = read_path_table(source)?;
    Ok((table.tx, table.sets))
}

pub fn read_results_file(path: impl AsRef<Path>) -> Result<(Vec3, Vec<PathSet>)> {
    read_results(File::open(path).map_err(DataError::from)?)
}

// ---------------------------------------------------------------- evaluate

/// How the ground-truth channel matrix is built from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruthModel {
    /// One trace per element pair.
    #[default]
    Exhaustive,
    /// Paths traced once at the array centres, spread with the mirror-image
    /// distance.
    Rm,
    /// Paths traced once at the array centres under the plane-wave expansion.
    Pwa,
}

impl std::str::FromStr for TruthModel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(TruthModel::Exhaustive),
            "rm" => Ok(TruthModel::Rm),
            "pwa" => Ok(TruthModel::Pwa),
            other => Err(format!("unknown model {other:?} (pwa|rm|exhaustive)")),
        }
    }
}

/// Channel estimates scored for capacity error, in report order.
pub const ESTIMATES: [&str; 5] = ["rm_interp", "pwa_interp", "pwa_nearest", "pwa_truth", "constant"];

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEvaluation {
    pub target: Vec3,
    pub true_paths: usize,
    pub est_paths: usize,
    pub power_error_db: f64,
    pub precision: f64,
    pub recall: f64,
    pub sector: Option<usize>,
    /// Capacity error per entry of [`ESTIMATES`]; `None` when undefined.
    pub capacity: Option<[Option<f64>; 5]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub truth: TruthModel,
    pub capacity: bool,
    pub cluster_epsilon: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            truth: TruthModel::Exhaustive,
            capacity: true,
            cluster_epsilon: 1e-2,
        }
    }
}

/// Scores estimated path sets against freshly traced truth.
pub struct Evaluator<'a> {
    tracer: Tracer<'a>,
    tx: Vec3,
    sectors: [ArrayGeometry; 3],
    config: RunConfig,
    budget: LinkBudget,
    carrier: Carrier,
    grid: Option<&'a ReferenceGrid>,
    settings: EvalSettings,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        scene: &'a Scene,
        tx: Vec3,
        sector_azimuth: f64,
        config: &RunConfig,
        grid: Option<&'a ReferenceGrid>,
        settings: EvalSettings,
    ) -> Result<Self> {
        config.validate()?;
        let sectors = sector_arrays(
            tx,
            sector_azimuth,
            config.sector_elevation_deg.to_radians(),
            config.array_rows,
            config.array_cols,
            config.array_spacing,
        )?;
        let mut carrier = Carrier::narrowband(config.carrier_frequency);
        carrier.speed_of_light = scene.speed_of_light;
        Ok(Self {
            tracer: Tracer::new(scene, config.carrier_frequency, config.max_order)?,
            tx,
            sectors,
            config: config.clone(),
            budget: LinkBudget::from_config(config),
            carrier,
            grid,
            settings,
        })
    }

    pub fn for_scenario(
        spec: &'a ScenarioSpec,
        grid: Option<&'a ReferenceGrid>,
        settings: EvalSettings,
    ) -> Result<Self> {
        Self::new(
            &spec.scene,
            spec.tx,
            spec.sector_azimuth(),
            &spec.config,
            grid,
            settings,
        )
    }

    pub fn trace_calls(&self) -> u64 {
        self.tracer.calls()
    }

    pub fn settings(&self) -> EvalSettings {
        self.settings
    }

    pub fn truth(&self, target: &Vec3) -> Result<PathSet> {
        Ok(self.tracer.trace(&self.tx, target)?)
    }

    pub fn evaluate(&self, estimate: &PathSet) -> Result<TargetEvaluation> {
        let truth = self.truth(&estimate.rx)?;
        self.evaluate_against(estimate, &truth)
    }

    pub fn evaluate_against(&self, estimate: &PathSet, truth: &PathSet) -> Result<TargetEvaluation> {
        let (precision, recall) = path_set_diagnostics(estimate, truth, self.settings.cluster_epsilon);
        let mut row = TargetEvaluation {
            target: estimate.rx,
            true_paths: truth.paths.len(),
            est_paths: estimate.paths.len(),
            power_error_db: received_power_error(&truth.paths, &estimate.paths),
            precision,
            recall,
            sector: None,
            capacity: None,
        };
        if self.settings.capacity {
            let (sector, errors) = self.capacity_errors(estimate, truth)?;
            row.sector = Some(sector);
            row.capacity = Some(errors);
        }
        Ok(row)
    }

    fn rx_array(&self, target: &Vec3) -> Result<ArrayGeometry> {
        let (az, el) = facing(target, &self.tx);
        Ok(build_upa(
            self.config.array_rows,
            self.config.array_cols,
            self.config.array_spacing,
            *target,
            az,
            el,
        )?)
    }

    fn matrix(
        &self,
        paths: &[ChannelPath],
        rx_ref: Vec3,
        tx_array: &ArrayGeometry,
        rx_array: &ArrayGeometry,
        model: DistanceModel,
    ) -> Result<ChannelMatrix> {
        let refs = References {
            tx: self.tx,
            rx: rx_ref,
        };
        Ok(channel_matrix(
            paths,
            refs,
            tx_array,
            rx_array,
            self.carrier,
            model,
            Execution::Sequential,
        )?)
    }

    fn capacity_errors(&self, estimate: &PathSet, truth: &PathSet) -> Result<(usize, [Option<f64>; 5])> {
        let target = truth.rx;
        let rx_array = self.rx_array(&target)?;
        let true_paths = channel_paths(truth)?;
        // the truth decides the serving sector for every estimate
        let (sector, rm_truth) = select_best_sector(&self.sectors, |s| {
            self.matrix(&true_paths, target, s, &rx_array, DistanceModel::Rm)
        })?;
        let tx_array = &self.sectors[sector];
        let h_true = match self.settings.truth {
            TruthModel::Rm => rm_truth,
            TruthModel::Pwa => self.matrix(&true_paths, target, tx_array, &rx_array, DistanceModel::Pwa)?,
            TruthModel::Exhaustive => {
                channel_matrix_exhaustive(&self.tracer, tx_array, &rx_array, self.carrier, Execution::Sequential)?
                    .matrix
            }
        };
        let se_true = spectral_efficiency(&h_true, &self.budget);

        let est_paths = channel_paths(estimate)?;
        let score = |h: &ChannelMatrix| relative_se_error(spectral_efficiency(h, &self.budget), se_true);
        let rm_interp = score(&self.matrix(&est_paths, target, tx_array, &rx_array, DistanceModel::Rm)?);
        let pwa_interp = score(&self.matrix(&est_paths, target, tx_array, &rx_array, DistanceModel::Pwa)?);
        let pwa_nearest = match self.grid {
            Some(grid) => {
                let nearest = nearest_reference(grid, &target);
                let paths = channel_paths(nearest)?;
                score(&self.matrix(&paths, nearest.rx, tx_array, &rx_array, DistanceModel::Pwa)?)
            }
            None => None,
        };
        let pwa_truth = score(&self.matrix(&true_paths, target, tx_array, &rx_array, DistanceModel::Pwa)?);
        let records: Vec<_> = estimate.paths.clone();
        let constant = score(&constant_channel_matrix(
            &records,
            rx_array.len(),
            tx_array.len(),
            self.carrier.frequency,
        ));
        Ok((sector, [rm_interp, pwa_interp, pwa_nearest, pwa_truth, constant]))
    }
}

/// Attaches image transforms recovered from each path's bounce route.
pub fn channel_paths(set: &PathSet) -> Result<Vec<ChannelPath>> {
    set.paths
        .iter()
        .map(|p| {
            let t: ImageTransform =
                recover_transform_from_route(&p.reflection_points, &set.tx, &set.rx).map_err(|e| DataError::Parse {
                    line: 0,
                    message: format!("path at {:?}: {e}", set.rx.as_slice()),
                })?;
            Ok(ChannelPath::new(p.clone(), Some(t)))
        })
        .collect()
}

fn nearest_reference<'g>(grid: &'g ReferenceGrid, target: &Vec3) -> &'g PathSet {
    grid.references()
        .iter()
        .min_by(|a, b| (a.rx - target).norm().total_cmp(&(b.rx - target).norm()))
        .expect("grid is non-empty")
}

#[derive(Debug, Clone)]
pub struct EvaluationRun {
    pub truth: TruthModel,
    pub rows: Vec<TargetEvaluation>,
    pub trace_calls: u64,
    pub seconds: f64,
}

pub fn run_evaluate(evaluator: &Evaluator<'_>, estimates: &[PathSet], exec: Execution) -> Result<EvaluationRun> {
    let start = Instant::now();
    let before = evaluator.trace_calls();
    let rows = exec
        .map(estimates, |e| evaluator.evaluate(e))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationRun {
        truth: evaluator.settings().truth,
        rows,
        trace_calls: evaluator.trace_calls() - before,
        seconds: start.elapsed().as_secs_f64(),
    })
}

impl EvaluationRun {
    pub fn power_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.power_error_db).collect()
    }

    /// Capacity errors for one entry of [`ESTIMATES`]; undefined → NaN.
    pub fn capacity_errors(&self, estimate: &str) -> Vec<f64> {
        let Some(k) = ESTIMATES.iter().position(|e| *e == estimate) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|r| r.capacity.map(|c| c[k].unwrap_or(f64::NAN)))
            .collect()
    }

    pub fn power_summary(&self) -> Summary {
        summarize(&self.power_errors())
    }

    pub fn has_capacity(&self) -> bool {
        self.rows.iter().any(|r| r.capacity.is_some())
    }

    /// `key=value` lines: medians, 90th percentiles and outage fractions.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6e}"));
        let _ = writeln!(out, "targets={}", self.rows.len());
        let _ = writeln!(out, "truth_model={:?}", self.truth);
        let _ = writeln!(out, "trace_calls={}", self.trace_calls);
        let p = self.power_summary();
        let _ = writeln!(out, "power_error_db.median={}", fmt(p.median));
        let _ = writeln!(out, "power_error_db.p90={}", fmt(p.p90));
        let _ = writeln!(out, "power_error_db.outage_fraction={:.6}", p.outage_fraction);
        let n = self.rows.len().max(1) as f64;
        let _ = writeln!(
            out,
            "cluster.precision.mean={:.6}",
            self.rows.iter().map(|r| r.precision).sum::<f64>() / n
        );
        let _ = writeln!(
            out,
            "cluster.recall.mean={:.6}",
            self.rows.iter().map(|r| r.recall).sum::<f64>() / n
        );
        if self.has_capacity() {
            for name in ESTIMATES {
                let errs = self.capacity_errors(name);
                let s = summarize(&errs);
                let undefined = errs.iter().filter(|v| v.is_nan()).count();
                let _ = writeln!(out, "capacity_error.{name}.median={}", fmt(s.median));
                let _ = writeln!(out, "capacity_error.{name}.p90={}", fmt(s.p90));
                let _ = writeln!(out, "capacity_error.{name}.undefined={undefined}");
            }
        }
        out
    }

    pub fn write_per_target<W: Write>(&self, mut dest: W) -> Result<()> {
        let mut out = String::from("x,y,z,true_paths,est_paths,power_error_db,precision,recall,sector");
        for name in ESTIMATES {
            let _ = write!(out, ",capacity_{name}");
        }
        out.push('\n');
        for r in &self.rows {
            let t = r.target;
            let _ = write!(
                out,
                "{:.16e},{:.16e},{:.16e},{},{},{:e},{:.6},{:.6},{}",
                t.x,
                t.y,
                t.z,
                r.true_paths,
                r.est_paths,
                r.power_error_db,
                r.precision,
                r.recall,
                r.sector.map(|s| s.to_string()).unwrap_or_default()
            );
            for k in 0..ESTIMATES.len() {
                match r.capacity.and_then(|c| c[k]) {
                    Some(v) => {
                        let _ = write!(out, ",{v:e}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        dest.write_all(out.as_bytes()).map_err(DataError::from)?;
        Ok(())
    }

    /// `report.txt`, `per_target.csv` and one CDF file per metric.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(DataError::from)?;
        fs::write(dir.join("report.txt"), self.report()).map_err(DataError::from)?;
        let mut w = create(dir, "per_target.csv")?;
        self.write_per_target(&mut w)?;
        w.flush().map_err(DataError::from)?;
        let mut w = create(dir, "power_error_cdf.csv")?;
        empirical_cdf(&self.power_errors()).write_csv(&mut w)?;
        w.flush().map_err(DataError::from)?;
        if self.has_capacity() {
            for name in ESTIMATES {
                let mut w = create(dir, &format!("capacity_error_{name}_cdf.csv"))?;
                empirical_cdf(&self.capacity_errors(name)).write_csv(&mut w)?;
                w.flush().map_err(DataError::from)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    GridSpacing,
    Sigma,
    PTh,
    Method,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "grid_spacing" => Ok(SweepAxis::GridSpacing),
            "sigma" => Ok(SweepAxis::Sigma),
            "p_th" => Ok(SweepAxis::PTh),
            "method" => Ok(SweepAxis::Method),
            other => Err(format!("unknown sweep axis {other:?} (grid_spacing|sigma|p_th|method)")),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::GridSpacing => "grid_spacing",
            SweepAxis::Sigma => "sigma",
            SweepAxis::PTh => "p_th",
            SweepAxis::Method => "method",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub interpolation: InterpolationRun,
    pub evaluation: EvaluationRun,
}

fn parse_number(axis: SweepAxis, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| HarnessError::Usage(format!("{} value {v:?} is not a number", axis.name())))
}

/// One interpolation + evaluation per value. Truth is traced once per target
/// and shared by every cell; only the grid-spacing axis re-traces the grid.
pub fn run_sweep(
    spec: &ScenarioSpec,
    axis: SweepAxis,
    values: &[String],
    settings: EvalSettings,
    exec: Execution,
) -> Result<Vec<SweepCell>> {
    if values.len() < 2 {
        return Err(HarnessError::Usage("a sweep needs at least two values".into()));
    }
    let targets = spec.targets();
    let base_grid = match axis {
        SweepAxis::GridSpacing => None,
        _ => Some(run_trace(spec, exec)?.grid),
    };
    let truth_eval = Evaluator::for_scenario(spec, None, settings)?;
    let truths = exec
        .map(&targets, |t| truth_eval.truth(t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(values.len());
    for value in values {
        let mut cell_spec = spec.clone();
        match axis {
            SweepAxis::GridSpacing => cell_spec.grid_spacing = parse_number(axis, value)?,
            SweepAxis::Sigma => cell_spec.config.sigma = parse_number(axis, value)?,
            SweepAxis::PTh => cell_spec.config.p_th = parse_number(axis, value)?,
            SweepAxis::Method => cell_spec.config.method = value.parse::<Method>().map_err(HarnessError::Usage)?,
        }
        cell_spec.config.validate()?;
        let grid = match &base_grid {
            Some(g) => g.clone(),
            None => run_trace(&cell_spec, exec)?.grid,
        };
        let params = InterpolationParams::from_config(&cell_spec.config, Some(cell_spec.grid_spacing))?;
        let interpolation = run_interpolate(&grid, &targets, params, exec)?;
        let estimates = interpolation.path_sets();
        let evaluator = Evaluator::for_scenario(&cell_spec, Some(&grid), settings)?;
        let start = Instant::now();
        let before = evaluator.trace_calls();
        let rows = exec
            .map_range(targets.len(), |i| evaluator.evaluate_against(&estimates[i], &truths[i]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let evaluation = EvaluationRun {
            truth: settings.truth,
            rows,
            trace_calls: evaluator.trace_calls() - before,
            seconds: start.elapsed().as_secs_f64(),
        };
        cells.push(SweepCell {
            value: value.clone(),
            interpolation,
            evaluation,
        });
    }
    Ok(cells)
}

/// Merged comparison table, one row per sweep value.
pub fn write_sweep_summary<W: Write>(mut dest: W, axis: SweepAxis, cells: &[SweepCell]) -> Result<()> {
    let mut out = format!(
        "{},targets,power_median_db,power_p90_db,power_outage_fraction",
        axis.name()
    );
    for name in ESTIMATES {
        let _ = write!(out, ",capacity_{name}_median");
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for c in cells {
        let p = c.evaluation.power_summary();
        let _ = write!(
            out,
            "{},{},{},{},{}",
            c.value,
            p.count,
            fmt(p.median),
            fmt(p.p90),
            p.outage_fraction
        );
        for name in ESTIMATES {
            let m = summarize(&c.evaluation.capacity_errors(name)).median;
            let _ = write!(out, ",{}", fmt(m));
        }
        out.push('\n');
    }
    dest.write_all(out.as_bytes()).map_err(DataError::from)?;
    Ok(())
}

pub fn write_sweep(dir: &Path, axis: SweepAxis, cells: &[SweepCell]) -> Result<()> {
    let mut w = create(dir, "sweep_summary.csv")?;
    write_sweep_summary(&mut w, axis, cells)?;
    w.flush().map_err(DataError::from)?;
    for c in cells {
        c.evaluation.write(&dir.join(format!("{}_{}", axis.name(), c.value)))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- bench

/// Runtime ledger over increasing link counts. Stages: `trace` (one trace
/// per link), `interpolate` (one query per link, no tracing) and a single
/// `exhaustive` array channel. Times are the best of `repeats` runs.
pub fn run_bench(spec: &ScenarioSpec, sizes: &[usize], repeats: usize, exec: Execution) -> Result<RuntimeLedger> {
    let mut ledger = RuntimeLedger::new();
    let repeats = repeats.max(1);
    let grid = run_trace(spec, exec)?.grid;
    ledger.record("reference_grid", grid.len() as u64, grid.len() as u64, f64::NAN);
    let params = InterpolationParams::from_config(&spec.config, Some(spec.grid_spacing))?;
    let interp = Interpolator::new(&grid, params)?;

    for &n in sizes {
        let targets = spec.clone().with_targets(n, spec.target_seed).targets();
        let mut best = f64::INFINITY;
        let mut calls = 0;
        for _ in 0..repeats {
            let start = Instant::now();
            let (_, c) = trace_links(&spec.scene, &spec.tx, &targets, &spec.config, exec)?;
            best = best.min(start.elapsed().as_secs_f64());
            calls = c;
        }
        ledger.record("trace", n as u64, calls, best);

        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let start = Instant::now();
            let _ = interp.interpolate_batch(&targets, exec);
            best = best.min(start.elapsed().as_secs_f64());
        }
        // interpolation never touches a tracer
        ledger.record("interpolate", n as u64, 0, best);
    }

    if let Some(first) = spec.targets().first() {
        let tracer = Tracer::new(&spec.scene, spec.config.carrier_frequency, spec.config.max_order)?;
        let cfg = &spec.config;
        let sectors = sector_arrays(
            spec.tx,
            spec.sector_azimuth(),
            cfg.sector_elevation_deg.to_radians(),
            cfg.array_rows,
            cfg.array_cols,
            cfg.array_spacing,
        )?;
        let (az, el) = facing(first, &spec.tx);
        let rx = build_upa(cfg.array_rows, cfg.array_cols, cfg.array_spacing, *first, az, el)?;
        let start = Instant::now();
        let ex = channel_matrix_exhaustive(
            &tracer,
            &sectors[0],
            &rx,
            Carrier::narrowband(cfg.carrier_frequency),
            exec,
        )?;
        ledger.record("exhaustive", 1, ex.trace_calls, start.elapsed().as_secs_f64());
    }
    Ok(ledger)
}
