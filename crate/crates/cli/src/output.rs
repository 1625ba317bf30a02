//! Result tables (CSV, or JSON arrays with the same columns) and the run
//! manifest.
//!
//! Result columns, in order:
//! `row`, one column per sweep axis, `mu1`, `mu2`, `n0`, `horizon`,
//! `estimator`, `n`, `point`, `ci_low`, `ci_high`, `std_error`, `trials`,
//! `successes`, `master_seed`, then the `shape_*` columns when requested.
//! Each grid point gives one row per estimated quantity.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use social_bandits::probtools::{theorem_shapes, TheoremShapes};
use social_bandits::{EstimateWithCI, Instance, PopulationSpec, SweepAxis};

use crate::config::Format;
use crate::error::{CliError, CliResult};

pub const SHAPE_COLUMNS: [&str; 7] = [
    "shape_confident",
    "shape_confident_small_gap",
    "shape_unbiased",
    "shape_small_n0",
    "shape_regret_optimistic",
    "shape_regret_interval",
    "shape_regret_recurring",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Empty => Value::Null,
        }
    }
}

pub fn result_header(axes: &[SweepAxis], shapes: bool) -> Vec<String> {
    let mut h = vec!["row".to_string()];
    h.extend(axes.iter().map(|a| a.name().to_string()));
    for c in [
        "mu1", "mu2", "n0", "horizon", "estimator", "n", "point", "ci_low", "ci_high", "std_error", "trials",
        "successes", "master_seed",
    ] {
        h.push(c.into());
    }
    if shapes {
        h.extend(SHAPE_COLUMNS.iter().map(|s| s.to_string()));
    }
    h
}

/// One estimated quantity at one grid point.
pub struct RowInput<'a> {
    pub row: usize,
    pub values: &'a [(SweepAxis, f64)],
    pub instance: &'a Instance,
    pub estimator: &'static str,
    pub n: Option<u64>,
    pub estimate: &'a EstimateWithCI,
    pub seed: u64,
    pub shapes: Option<&'a TheoremShapes>,
}

pub fn result_cells(r: &RowInput) -> Vec<Cell> {
    let mut c = vec![Cell::Int(r.row as u64)];
    c.extend(r.values.iter().map(|&(_, v)| Cell::Float(v)));
    let e = r.estimate;
    c.extend([
        Cell::Float(r.instance.mu1),
        Cell::Float(r.instance.mu2),
        Cell::Int(r.instance.n0),
        Cell::Int(r.instance.horizon),
        Cell::Text(r.estimator.into()),
        r.n.map_or(Cell::Empty, Cell::Int),
        Cell::Float(e.point),
        Cell::Float(e.ci_low),
        Cell::Float(e.ci_high),
        Cell::Float(e.std_error),
        Cell::Int(e.trials),
        e.successes.map_or(Cell::Empty, Cell::Int),
        Cell::Int(r.seed),
    ]);
    if let Some(s) = r.shapes {
        c.extend([
            Cell::Float(s.confident.evaluate()),
            Cell::Float(s.confident_small_gap.evaluate()),
            Cell::Float(s.unbiased.evaluate()),
            s.small_n0.as_ref().map_or(Cell::Empty, |b| Cell::Float(b.evaluate())),
            Cell::Float(s.regret_optimistic.evaluate()),
            Cell::Float(s.regret_interval.evaluate()),
            Cell::Float(s.regret_recurring.evaluate()),
        ]);
    }
    c
}

/// Shapes at one point: eta from the first component, eta_max the largest
/// confidence level present, q the first component's probability.
pub fn shapes_for(instance: &Instance, population: &PopulationSpec) -> CliResult<TheoremShapes> {
    let comps = population.components();
    let etas: Vec<f64> = comps.iter().filter_map(|c| c.behavior.confidence_eta()).collect();
    let eta = comps[0].behavior.confidence_eta().unwrap_or(0.0);
    let mut eta_max = etas.iter().copied().fold(eta, f64::max);
    for c in comps {
        if let social_bandits::BehaviorSpec::IntervalOptimistic { eta_max: m, .. } = c.behavior {
            eta_max = eta_max.max(m);
        }
    }
    Ok(theorem_shapes(instance, eta, eta_max, comps[0].probability)?)
}

/// A table kept in memory and rewritten in full on every save, so a killed
/// run leaves a well-formed file holding every finished point.
pub struct Table {
    path: PathBuf,
    format: Format,
    header: Vec<String>,
    csv_rows: Vec<Vec<String>>,
    json_rows: Vec<Value>,
}

impl Table {
    pub fn new(dir: &Path, name: &str, format: Format, header: Vec<String>) -> Self {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        Table {
            path: dir.join(format!("{name}.{ext}")),
            format,
            header,
            csv_rows: Vec::new(),
            json_rows: Vec::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.csv_rows.len().max(self.json_rows.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncate(&mut self, rows: usize) {
        self.csv_rows.truncate(rows);
        self.json_rows.truncate(rows);
    }

    pub fn push(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.header.len());
        match self.format {
            Format::Csv => self.csv_rows.push(cells.iter().map(Cell::to_csv).collect()),
            Format::Json => {
                let obj = self
                    .header
                    .iter()
                    .zip(cells)
                    .map(|(k, c)| (k.clone(), c.to_json()))
                    .collect::<serde_json::Map<_, _>>();
                self.json_rows.push(Value::Object(obj));
            }
        }
    }

    /// Loads an existing file and keeps the leading rows whose `row` column
    /// passes `keep`, stopping at the first that does not. The header must
    /// match.
    pub fn resume(&mut self, keep: impl Fn(usize, usize) -> bool) -> CliResult<Vec<usize>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&self.path)?;
        let mut rows = Vec::new();
        match self.format {
            Format::Csv => {
                let mut rd = csv::Reader::from_reader(text.as_bytes());
                let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
                if header != self.header {
                    return Err(CliError::Config(format!(
                        "{} has different columns; refusing to resume",
                        self.path.display()
                    )));
                }
                for rec in rd.records() {
                    let rec = rec?;
                    let row = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad_row(&self.path))?;
                    rows.push(row);
                    self.csv_rows.push(rec.iter().map(str::to_string).collect());
                }
            }
            Format::Json => {
                let all: Vec<Value> = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", self.path.display())))?;
                for v in all {
                    let same = v
                        .as_object()
                        .is_some_and(|o| o.len() == self.header.len() && o.keys().zip(&self.header).all(|(a, b)| a == b));
                    if !same {
                        return Err(CliError::Config(format!(
                            "{} has different columns; refusing to resume",
                            self.path.display()
                        )));
                    }
                    let row = v.get("row").and_then(Value::as_u64).ok_or_else(|| bad_row(&self.path))?;
                    rows.push(row as usize);
                    self.json_rows.push(v);
                }
            }
        }
        let mut kept = 0;
        while kept < rows.len() && keep(rows[kept], kept) {
            kept += 1;
        }
        rows.truncate(kept);
        self.csv_rows.truncate(kept.min(self.csv_rows.len()));
        self.json_rows.truncate(kept.min(self.json_rows.len()));
        Ok(rows)
    }

    pub fn save(&self) -> CliResult<()> {
        let bytes = match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header)?;
                for r in &self.csv_rows {
                    w.write_record(r)?;
                }
                w.into_inner().map_err(|e| CliError::Io(e.to_string()))?
            }
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json_rows).expect("json");
                s.push('\n');
                s.into_bytes()
            }
        };
        atomic_write(&self.path, &bytes)
    }
}

fn bad_row(path: &Path) -> CliError {
    CliError::Config(format!("{}: row without a valid `row` column", path.display()))
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowTiming {
    pub row: usize,
    pub wall_seconds: f64,
}

/// Everything needed to reproduce a result file, plus timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub bandit_lab_version: String,
    pub social_bandits_version: String,
    pub parallelism: usize,
    pub result_file: String,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub rows: Vec<RowTiming>,
    /// The resolved configuration, as TOML.
    pub config: String,
}

impl Manifest {
    pub fn path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.manifest.json"))
    }

    pub fn load(path: &Path) -> CliResult<Option<Manifest>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(self).expect("json");
        s.push('\n');
        atomic_write(path, s.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Format;

    fn est() -> EstimateWithCI {
        EstimateWithCI::proportion(3, 10, 0.99)
    }

    #[test]
    fn header_matches_cells() {
        let inst = Instance::new(0.6, 0.4, 1, 6).unwrap().with_margin(0.25).unwrap();
        let pop = PopulationSpec::single(social_bandits::BehaviorSpec::Optimistic { eta: 1.0 });
        let shapes = shapes_for(&inst, &pop).unwrap();
        let values = [(SweepAxis::Eta, 1.0)];
        for with in [false, true] {
            let h = result_header(&[SweepAxis::Eta], with);
            let e = est();
            let cells = result_cells(&RowInput {
                row: 0,
                values: &values,
                instance: &inst,
                estimator: "failure",
                n: Some(0),
                estimate: &e,
                seed: 1,
                shapes: with.then_some(&shapes),
            });
            assert_eq!(h.len(), cells.len());
        }
    }

    #[test]
    fn save_and_resume_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Json] {
            let header = vec!["row".to_string(), "x".to_string()];
            let mut t = Table::new(dir.path(), "t", format, header.clone());
            for i in 0..4u64 {
                t.push(&[Cell::Int(i / 2), Cell::Float(0.1 * i as f64)]);
            }
            t.save().unwrap();
            let mut r = Table::new(dir.path(), "t", format, header.clone());
            let rows = r.resume(|row, _| row < 1).unwrap();
            assert_eq!(rows, vec![0, 0]);
            assert_eq!(r.len(), 2);
            let mut other = Table::new(dir.path(), "t", format, vec!["row".into(), "y".into()]);
            assert!(other.resume(|_, _| true).is_err());
        }
    }

    #[test]
    fn json_null_for_missing() {
        assert_eq!(Cell::Empty.to_json(), Value::Null);
        assert_eq!(Cell::Float(f64::NAN).to_json(), Value::Null);
        assert_eq!(Cell::Float(0.25).to_csv(), "0.25");
    }
}
