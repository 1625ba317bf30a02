//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use social_bandits::montecarlo::{run_point, SweepPoint};
use social_bandits::bayes::run_bayes_greedy_with_prior;
use social_bandits::{enumerate_exact, EstimateWithCI, Estimates, Estimator, Instance, SweepAxis};

use crate::config::{resolve_parallelism, ExperimentConfig, PriorConfig, PARALLELISM_ENV};
use crate::error::{CliError, CliResult};
use crate::output::{result_cells, result_header, shapes_for, Cell, Manifest, RowInput, RowTiming, Table};
use crate::verify::{run_suite, Check, Suite, VerifyOptions};

/// Flags shared by the experiment subcommands.
#[derive(Debug, Clone, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
}

/// A loaded configuration with the flag overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub parallelism: usize,
    pub out_dir: PathBuf,
}

pub fn resolve(args: &CommonArgs) -> CliResult<Resolved> {
    let text = match &args.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut config = ExperimentConfig::load(text.as_deref(), &args.set)?;
    if let Some(seed) = args.seed {
        config.estimator.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.display().to_string();
    }
    let env = std::env::var(PARALLELISM_ENV).ok();
    let parallelism = resolve_parallelism(args.parallelism, env.as_deref(), config.estimator.parallelism)?;
    let out_dir = PathBuf::from(&config.output.dir);
    Ok(Resolved {
        config,
        parallelism,
        out_dir,
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Rows a point contributes: failure first, then regret.
fn estimate_rows(estimator: Estimator, est: &Estimates) -> Vec<(&'static str, Option<u64>, EstimateWithCI)> {
    let n = match estimator {
        Estimator::Failure { n } | Estimator::Both { n } => Some(n),
        Estimator::Regret => None,
    };
    let mut out = Vec::new();
    if let Some(f) = est.failure {
        out.push(("failure", n, f));
    }
    if let Some(r) = est.regret {
        out.push(("regret", None, r));
    }
    out
}

fn rows_per_point(estimator: Estimator) -> usize {
    match estimator {
        Estimator::Both { .. } => 2,
        _ => 1,
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub result_file: PathBuf,
    pub manifest_file: PathBuf,
    pub rows: usize,
    pub resumed_points: usize,
}

fn run_points(
    r: &Resolved,
    command: &str,
    axes: &[SweepAxis],
    points: &[SweepPoint],
    shapes: bool,
    resume: bool,
) -> CliResult<RunReport> {
    let cfg = &r.config;
    ensure_dir(&r.out_dir)?;
    let started = Instant::now();
    let started_unix = unix_now();
    let hash = cfg.hash();
    let mut table = Table::new(&r.out_dir, &cfg.output.name, cfg.output.format, result_header(axes, shapes));
    let manifest_path = Manifest::path(&r.out_dir, &cfg.output.name);
    let mut timings = Vec::new();
    let mut done = 0;

    if resume {
        let previous = Manifest::load(&manifest_path)?;
        if let Some(m) = &previous {
            if m.config_hash != hash {
                return Err(CliError::Config(format!(
                    "{} was written by a different configuration (hash {}); refusing to resume",
                    manifest_path.display(),
                    m.config_hash
                )));
            }
        }
        let expected: Vec<usize> = points
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.index, rows_per_point(cfg.estimator_for(&p.instance))))
            .collect();
        let rows = table.resume(|row, pos| expected.get(pos) == Some(&row))?;
        // Only whole points count; a point cut short is run again.
        let mut kept_rows = 0;
        for p in points {
            let k = rows_per_point(cfg.estimator_for(&p.instance));
            if kept_rows + k > rows.len() {
                break;
            }
            kept_rows += k;
            done += 1;
        }
        table.truncate(kept_rows);
        if let Some(m) = previous {
            timings.extend(m.rows.into_iter().filter(|t| t.row < done));
        }
    }

    let mut manifest = manifest(cfg, command, r.parallelism, &table, started, timings);
    manifest.started_unix = started_unix;
    let settings = cfg.settings(r.parallelism);
    for p in &points[done..] {
        let t0 = Instant::now();
        let estimator = cfg.estimator_for(&p.instance);
        let row = run_point(p, estimator, &settings)?;
        let shape = if shapes { Some(shapes_for(&p.instance, &p.population)?) } else { None };
        for (name, n, e) in estimate_rows(estimator, &row.estimates) {
            table.push(&result_cells(&RowInput {
                row: p.index,
                values: &p.values,
                instance: &p.instance,
                estimator: name,
                n,
                estimate: &e,
                seed: p.seed,
                shapes: shape.as_ref(),
            }));
        }
        table.save()?;
        manifest.rows.push(RowTiming {
            row: p.index,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        manifest.wall_seconds = started.elapsed().as_secs_f64();
        manifest.save(&manifest_path)?;
    }
    table.save()?;
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path)?;
    Ok(RunReport {
        result_file: table.path().to_path_buf(),
        manifest_file: manifest_path,
        rows: table.len(),
        resumed_points: done,
    })
}

fn base_point(cfg: &ExperimentConfig) -> SweepPoint {
    SweepPoint {
        index: 0,
        values: Vec::new(),
        instance: cfg.instance,
        population: cfg.population.clone(),
        seed: social_bandits::model::row_seed(cfg.estimator.master_seed, 0),
    }
}

fn grid_points(cfg: &ExperimentConfig) -> CliResult<Option<(Vec<SweepAxis>, Vec<SweepPoint>)>> {
    let Some(grid) = cfg.grid() else {
        return Ok(None);
    };
    let axes = grid.axes().iter().map(|a| a.axis).collect();
    let points = (0..grid.len())
        .map(|i| grid.point(i, &cfg.instance, &cfg.population, cfg.estimator.master_seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("sweep: {e}")))?;
    Ok(Some((axes, points)))
}

/// Estimates at the base point of the configuration; a sweep block is ignored.
/// With a `[prior]` block, runs Bayesian-greedy agents under that prior instead.
pub fn cmd_simulate(r: &Resolved) -> CliResult<RunReport> {
    if let Some(p) = &r.config.prior {
        return run_prior(r, p);
    }
    if r.config.sweep.is_some() {
        eprintln!("note: simulate runs the base point only; use `sweep` for the grid");
    }
    run_points(r, "simulate", &[], &[base_point(&r.config)], false, false)
}

pub fn cmd_sweep(r: &Resolved, resume: bool) -> CliResult<RunReport> {
    let (axes, points) = grid_points(&r.config)?
        .ok_or_else(|| CliError::Config("sweep: the configuration has no [sweep] block".into()))?;
    let shapes = r.config.sweep.as_ref().is_some_and(|s| s.shapes);
    run_points(r, "sweep", &axes, &points, shapes, resume)
}

/// One `never_arm2` row, then one `doob_mean` row per recorded round with
/// the round in the `n` column. `mu1` and `mu2` hold the prior means.
fn run_prior(r: &Resolved, p: &PriorConfig) -> CliResult<RunReport> {
    let cfg = &r.config;
    let prior = cfg.finite_prior(p)?;
    ensure_dir(&r.out_dir)?;
    let started = Instant::now();
    let (mut e1, mut e2) = (0.0, 0.0);
    for (&(a, b), &w) in prior.support().iter().zip(prior.weights()) {
        e1 += w * a;
        e2 += w * b;
    }
    let trials = cfg.estimator.trials;
    let seed = cfg.estimator.master_seed;
    let rep = run_bayes_greedy_with_prior(&prior, cfg.instance.horizon, trials, seed, &p.record_rounds, cfg.estimator.ci_level)?;
    let shown = Instance {
        mu1: e1,
        mu2: e2,
        n0: 0,
        ..cfg.instance
    };
    let mut table = Table::new(&r.out_dir, &cfg.output.name, cfg.output.format, result_header(&[], false));
    let mut push = |name: &'static str, n: Option<u64>, e: &EstimateWithCI| {
        table.push(&result_cells(&RowInput {
            row: 0,
            values: &[],
            instance: &shown,
            estimator: name,
            n,
            estimate: e,
            seed,
            shapes: None,
        }))
    };
    push("never_arm2", None, &rep.never_arm2);
    for d in &rep.doob_means {
        let var = d.std_error * d.std_error * trials as f64;
        push("doob_mean", Some(d.round), &EstimateWithCI::mean_with_variance(d.mean, var, trials, cfg.estimator.ci_level));
    }
    table.save()?;
    let manifest_path = Manifest::path(&r.out_dir, &cfg.output.name);
    manifest(cfg, "simulate", 1, &table, started, Vec::new()).save(&manifest_path)?;
    Ok(RunReport {
        result_file: table.path().to_path_buf(),
        manifest_file: manifest_path,
        rows: table.len(),
        resumed_points: 0,
    })
}

fn manifest(cfg: &ExperimentConfig, command: &str, parallelism: usize, table: &Table, started: Instant, rows: Vec<RowTiming>) -> Manifest {
    Manifest {
        command: command.into(),
        config_hash: cfg.hash(),
        master_seed: cfg.estimator.master_seed,
        bandit_lab_version: env!("CARGO_PKG_VERSION").into(),
        social_bandits_version: social_bandits::VERSION.into(),
        parallelism,
        result_file: table
            .path()
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        started_unix: unix_now(),
        wall_seconds: started.elapsed().as_secs_f64(),
        rows,
        config: cfg.to_toml(),
    }
}

pub const ORACLE_COLUMNS: [&str; 9] = [
    "mu1",
    "mu2",
    "n0",
    "horizon",
    "n",
    "failure_probability",
    "expected_regret",
    "total_mass",
    "tapes",
];

/// Exact values by enumeration, at the base point or at every grid point.
/// Prints one mass-conservation line per point.
pub fn cmd_oracle(r: &Resolved) -> CliResult<RunReport> {
    let cfg = &r.config;
    let (axes, points) = grid_points(cfg)?.unwrap_or_else(|| (Vec::new(), vec![base_point(cfg)]));
    // Fail before touching the output directory.
    let exact = points
        .iter()
        .map(|p| enumerate_exact(&p.instance, &p.population))
        .collect::<Result<Vec<_>, _>>()?;
    ensure_dir(&r.out_dir)?;
    let started = Instant::now();
    let mut header = vec!["row".to_string()];
    header.extend(axes.iter().map(|a| a.name().to_string()));
    header.extend(ORACLE_COLUMNS.iter().map(|s| s.to_string()));
    let mut table = Table::new(&r.out_dir, &cfg.output.name, cfg.output.format, header);
    let n = cfg.estimator.n;
    for (p, ex) in points.iter().zip(&exact) {
        let mut cells = vec![Cell::Int(p.index as u64)];
        cells.extend(p.values.iter().map(|&(_, v)| Cell::Float(v)));
        cells.extend([
            Cell::Float(p.instance.mu1),
            Cell::Float(p.instance.mu2),
            Cell::Int(p.instance.n0),
            Cell::Int(p.instance.horizon),
            Cell::Int(n),
            Cell::Float(ex.failure_probability(n)),
            Cell::Float(ex.expected_regret),
            Cell::Float(ex.total_mass),
            Cell::Int(ex.tapes),
        ]);
        table.push(&cells);
        println!(
            "row {}: total mass {:.15} (|1 - mass| = {:.3e})",
            p.index,
            ex.total_mass,
            (1.0 - ex.total_mass).abs()
        );
    }
    table.save()?;
    let manifest_path = Manifest::path(&r.out_dir, &cfg.output.name);
    manifest(cfg, "oracle", 1, &table, started, Vec::new()).save(&manifest_path)?;
    Ok(RunReport {
        result_file: table.path().to_path_buf(),
        manifest_file: manifest_path,
        rows: table.len(),
        resumed_points: 0,
    })
}

/// Runs the suites in order and writes one JSON line per check to `sink`.
pub fn cmd_verify(suites: &[Suite], opts: &VerifyOptions, sink: &mut dyn std::io::Write) -> CliResult<Vec<Check>> {
    let mut all = Vec::new();
    for &s in suites {
        for c in run_suite(s, opts)? {
            writeln!(sink, "{}", serde_json::to_string(&c).expect("json"))?;
            all.push(c);
        }
    }
    Ok(all)
}

pub fn verify_parallelism(flag: Option<usize>) -> CliResult<usize> {
    let env = std::env::var(PARALLELISM_ENV).ok();
    resolve_parallelism(flag, env.as_deref(), None)
}
