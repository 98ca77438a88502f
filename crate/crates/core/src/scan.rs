//! Parameter scans: one fresh training run per grid point, persisted so an
//! interrupted scan resumes where it stopped.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::sampler::mix_seed;
use crate::trainer::{load_ortho_models, train_with, RunRecord, SUMMARY_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanAxis {
    /// Dotted path into the run config, e.g. `system.separation`.
    pub path: String,
    pub values: Vec<f64>,
}

impl ScanAxis {
    /// Column name: the last path segment.
    pub fn name(&self) -> &str {
        self.path.rsplit('.').next().unwrap_or(&self.path)
    }
}

/// JSON patch applied to one point after the axis values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointOverride {
    pub index: usize,
    pub patch: Value,
}

fn default_max_points() -> usize {
    1000
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPlan {
    pub base: RunConfig,
    #[serde(default)]
    pub axes: Vec<ScanAxis>,
    #[serde(default)]
    pub overrides: Vec<PointOverride>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub resume: bool,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    /// Second seed per point to expose near-degenerate solutions.
    #[serde(default)]
    pub paranoid: bool,
    #[serde(default = "one")]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub index: usize,
    pub params: Vec<f64>,
    pub energy: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub converged: bool,
    pub seed: u64,
    pub runtime_s: f64,
    pub error: Option<String>,
    /// Energy of the second-seed run when `paranoid` is set.
    pub paranoid_energy: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub axis_names: Vec<String>,
    pub axis_values: Vec<Vec<f64>>,
    pub rows: Vec<ScanRow>,
}

pub const SCAN_FILE: &str = "scan.csv";
pub const MATRIX_FILE: &str = "scan_matrix.csv";
pub const PARANOID_DIR: &str = "second_seed";

impl ScanPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        ScanPlan::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.len() > 2 {
            return Err(Error::Config(format!(
                "a scan has at most 2 axes, got {}",
                self.axes.len()
            )));
        }
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(Error::Config(format!("axis {} has no values", axis.path)));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("axis {} has a non-finite value", axis.path)));
            }
        }
        if self.n_points() > self.max_points {
            return Err(Error::Config(format!(
                "scan has {} points, limit is {}",
                self.n_points(),
                self.max_points
            )));
        }
        for i in 0..self.n_points() {
            self.point_config(i)?.validate()?;
        }
        Ok(())
    }

    /// Axis values of point `index`; the first axis varies slowest.
    pub fn point_params(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut out = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = axis.values[rest % axis.values.len()];
            rest /= axis.values.len();
        }
        out
    }

    pub fn point_seed(&self, index: usize) -> u64 {
        mix_seed(self.base.sampler.seed, index as u64)
    }

    pub fn point_dir(&self, index: usize) -> PathBuf {
        self.output_dir.join(format!("point_{index:04}"))
    }

    /// Fully resolved config of point `index`.
    pub fn point_config(&self, index: usize) -> Result<RunConfig> {
        let mut doc = serde_json::to_value(&self.base)?;
        for (axis, value) in self.axes.iter().zip(self.point_params(index)) {
            set_path(&mut doc, &axis.path, Value::from(value))?;
        }
        for o in self.overrides.iter().filter(|o| o.index == index) {
            merge(&mut doc, &o.patch);
        }
        let mut config: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("scan point {index}: {e}")))?;
        config.sampler.seed = self.point_seed(index);
        config.output_dir = Some(self.point_dir(index));
        Ok(config.resolved())
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("axis path {path}: `{part}` is not inside an object")))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty axis path".into()))
}

fn merge(doc: &mut Value, patch: &Value) {
    match (doc, patch) {
        (Value::Object(d), Value::Object(p)) => {
            for (k, v) in p {
                merge(d.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn se_mean_tail(record: &RunRecord) -> f64 {
    record.rows.last().map_or(f64::NAN, |r| r.se_mean)
}

/// Runs or, when resuming, reloads one training run.
fn run_point(config: &RunConfig, dir: &Path, resume: bool) -> Result<RunRecord> {
    if resume && dir.join(SUMMARY_FILE).exists() {
        return RunRecord::read(dir);
    }
    let ortho = load_ortho_models(config)?;
    let mut record = train_with(config, ortho, |_| {})?;
    record.write(dir)?;
    Ok(record)
}

fn scan_point(plan: &ScanPlan, index: usize) -> ScanRow {
    let params = plan.point_params(index);
    let seed = plan.point_seed(index);
    let failed = |msg: String| ScanRow {
        index,
        params: params.clone(),
        energy: f64::NAN,
        variance: f64::NAN,
        se_mean: f64::NAN,
        converged: false,
        seed,
        runtime_s: 0.0,
        error: Some(msg),
        paranoid_energy: None,
        warning: None,
    };
    let config = match plan.point_config(index) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let dir = plan.point_dir(index);
    let record = match run_point(&config, &dir, plan.resume) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let s = &record.summary;
    let mut row = ScanRow {
        index,
        params,
        energy: s.observable,
        variance: s.variance,
        se_mean: se_mean_tail(&record),
        converged: s.converged,
        seed,
        runtime_s: s.wall_time_s,
        error: s.failure.clone(),
        paranoid_energy: None,
        warning: None,
    };
    if plan.paranoid {
        let mut second = config.clone();
        second.sampler.seed = mix_seed(seed, 1);
        let sub = dir.join(PARANOID_DIR);
        second.output_dir = Some(sub.clone());
        match run_point(&second, &sub, plan.resume) {
            Ok(other) => {
                let e2 = other.summary.observable;
                row.paranoid_energy = Some(e2);
                let tol = 3.0 * row.se_mean.max(se_mean_tail(&other));
                if row.converged && other.summary.converged && (row.energy - e2).abs() > tol {
                    row.warning = Some(format!(
                        "variance converged but seeds disagree: {} vs {e2}",
                        row.energy
                    ));
                }
            }
            Err(e) => row.warning = Some(format!("second seed failed: {e}")),
        }
    }
    row
}

/// Runs every grid point (up to `workers` at a time), then writes the
/// tidy and matrix CSVs.
pub fn run_scan(plan: &ScanPlan) -> Result<ScanTable> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.output_dir).map_err(|e| Error::file(&plan.output_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let n = plan.n_points().max(1);
    let rows: Vec<ScanRow> =
        pool.install(|| (0..n).into_par_iter().map(|i| scan_point(plan, i)).collect());
    let table = ScanTable {
        axis_names: plan.axes.iter().map(|a| a.name().to_string()).collect(),
        axis_values: plan.axes.iter().map(|a| a.values.clone()).collect(),
        rows,
    };
    let report = scan_report(&table);
    let write = |name: &str, text: &str| {
        let p = plan.output_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::file(p, e))
    };
    write(SCAN_FILE, &report.tidy_csv)?;
    if let Some(m) = &report.matrix_csv {
        write(MATRIX_FILE, m)?;
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    pub tidy_csv: String,
    /// Rows follow the second axis, columns the first.
    pub matrix_csv: Option<String>,
    /// One line per non-converged or failed point, plus seed warnings.
    pub flags: Vec<String>,
    /// `max |E(a,b) - E(b,a)|` when both axes share the same values.
    pub max_asymmetry: Option<f64>,
    pub max_relative_asymmetry: Option<f64>,
}

impl ScanTable {
    /// Energy at grid position `(i, j)` of a 2-axis scan.
    pub fn energy_at(&self, i: usize, j: usize) -> f64 {
        let n2 = self.axis_values[1].len();
        self.rows[i * n2 + j].energy
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }
}

pub fn scan_report(table: &ScanTable) -> ScanReport {
    let mut tidy = String::new();
    for name in &table.axis_names {
        let _ = write!(tidy, "{name},");
    }
    tidy.push_str("energy,variance,converged,seed,runtime_s\n");
    let mut flags = Vec::new();
    for row in &table.rows {
        for p in &row.params {
            let _ = write!(tidy, "{p},");
        }
        let _ = writeln!(
            tidy,
            "{},{},{},{},{}",
            row.energy, row.variance, row.converged, row.seed, row.runtime_s
        );
        let at = format!("point {} {:?}", row.index, row.params);
        if let Some(e) = &row.error {
            flags.push(format!("{at}: failed: {e}"));
        } else if !row.converged {
            flags.push(format!("{at}: not converged (variance {})", row.variance));
        }
        if let Some(w) = &row.warning {
            flags.push(format!("{at}: {w}"));
        }
    }

    let mut matrix_csv = None;
    let mut max_asymmetry = None;
    let mut max_relative_asymmetry = None;
    if table.axis_names.len() == 2 && table.rows.len() == table.axis_values[0].len() * table.axis_values[1].len() {
        let (a, b) = (&table.axis_values[0], &table.axis_values[1]);
        let mut m = format!("{}\\{}", table.axis_names[1], table.axis_names[0]);
        for x in a {
            let _ = write!(m, ",{x}");
        }
        m.push('\n');
        for (j, y) in b.iter().enumerate() {
            let _ = write!(m, "{y}");
            for i in 0..a.len() {
                let _ = write!(m, ",{}", table.energy_at(i, j));
            }
            m.push('\n');
        }
        matrix_csv = Some(m);
        if a == b {
            let (mut abs, mut rel) = (0.0_f64, 0.0_f64);
            for i in 0..a.len() {
                for j in 0..i {
                    let (e1, e2) = (table.energy_at(i, j), table.energy_at(j, i));
                    let d = (e1 - e2).abs();
                    abs = abs.max(d);
                    rel = rel.max(d / e1.abs().max(e2.abs()));
                }
            }
            max_asymmetry = Some(abs);
            max_relative_asymmetry = Some(rel);
        }
    }
    ScanReport {
        tidy_csv: tidy,
        matrix_csv,
        flags,
        max_asymmetry,
        max_relative_asymmetry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::HamiltonianSpec;

    /// Published ground-state energies of the three-body dot; rows ω_y,
    /// columns ω_x, both 0.10..0.30.
    const DOT_TABLE: [[f64; 5]; 5] = [
        [1.016510606, 1.126879096, 1.218364358, 1.302534461, 1.384103537],
        [1.126871347, 1.250050545, 1.347112894, 1.435063004, 1.518608332],
        [1.217986345, 1.347136974, 1.447034240, 1.537023544, 1.622270823],
        [1.302550912, 1.434744835, 1.536868930, 1.627518654, 1.713410497],
        [1.384493470, 1.519017816, 1.621944904, 1.713231206, 1.799155951],
    ];

    fn dot_table() -> ScanTable {
        let omegas = vec![0.10, 0.15, 0.20, 0.25, 0.30];
        let mut rows = Vec::new();
        for (i, &wx) in omegas.iter().enumerate() {
            for (j, &wy) in omegas.iter().enumerate() {
                rows.push(ScanRow {
                    index: rows.len(),
                    params: vec![wx, wy],
                    energy: DOT_TABLE[j][i],
                    variance: 1e-4,
                    se_mean: 1e-4,
                    converged: true,
                    seed: 0,
                    runtime_s: 0.0,
                    error: None,
                    paranoid_energy: None,
                    warning: None,
                });
            }
        }
        ScanTable {
            axis_names: vec!["omega_x".into(), "omega_y".into()],
            axis_values: vec![omegas.clone(), omegas],
            rows,
        }
    }

    #[test]
    fn matrix_layout_matches_published_table() {
        let report = scan_report(&dot_table());
        let m = report.matrix_csv.unwrap();
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(lines[0], "omega_y\\omega_x,0.1,0.15,0.2,0.25,0.3");
        assert!(lines[1].starts_with("0.1,1.016510606,1.126879096,"));
        assert!(lines[2].starts_with("0.15,1.126871347,"));
        assert!(report.flags.is_empty());
    }

    #[test]
    fn published_asymmetry_is_reproduced() {
        // max |E(wx,wy) - E(wy,wx)| over the table, by hand: cells
        // (0.30,0.10) vs (0.10,0.30) differ by 3.89933e-4, and
        // (0.30,0.15) vs (0.15,0.30) by 4.09484e-4.
        let report = scan_report(&dot_table());
        let asym = report.max_asymmetry.unwrap();
        assert!((asym - 4.09484e-4).abs() < 1e-9, "{asym}");
        assert!(report.max_relative_asymmetry.unwrap() < 5e-3);
    }

    fn tiny_plan(dir: &Path) -> ScanPlan {
        let mut base = RunConfig::new(HamiltonianSpec::DoubleWell2D {
            alpha: 1.0,
            mass: 1.0,
            omega_y: 1.0,
            separation: 0.0,
        });
        base.ansatz.layers = 1;
        base.ansatz.width = 4;
        base.sampler.n_walkers = 32;
        base.sampler.burn_in = 10;
        base.sampler.sweeps_per_step = 1;
        base.trainer.max_steps = 5;
        base.monitor.window = 3;
        ScanPlan {
            base,
            axes: vec![ScanAxis {
                path: "system.separation".into(),
                values: vec![0.0, 1.0, 2.0],
            }],
            overrides: vec![],
            output_dir: dir.to_path_buf(),
            resume: true,
            max_points: 10,
            paranoid: false,
            workers: 1,
        }
    }

    #[test]
    fn point_configs_follow_axes() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path());
        let c = plan.point_config(2).unwrap();
        assert!(matches!(c.system, HamiltonianSpec::DoubleWell2D { separation, .. } if separation == 2.0));
        assert_eq!(c.sampler.seed, mix_seed(0, 2));
        assert_ne!(plan.point_seed(0), plan.point_seed(1));
    }

    #[test]
    fn bad_axis_path_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.axes[0].path = "system.width".into();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn resume_is_idempotent_and_recomputes_missing_points() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path());
        let first = run_scan(&plan).unwrap();
        let csv1 = std::fs::read_to_string(dir.path().join(SCAN_FILE)).unwrap();
        let second = run_scan(&plan).unwrap();
        let csv2 = std::fs::read_to_string(dir.path().join(SCAN_FILE)).unwrap();
        assert_eq!(first, second);
        assert_eq!(csv1, csv2);
        assert!(csv1.starts_with("separation,energy,variance,converged,seed,runtime_s\n"));

        let metrics = |i: usize| {
            std::fs::read_to_string(plan.point_dir(i).join(crate::trainer::METRICS_FILE)).unwrap()
        };
        let before = metrics(1);
        std::fs::remove_dir_all(plan.point_dir(1)).unwrap();
        let third = run_scan(&plan).unwrap();
        assert_eq!(metrics(1), before);
        assert_eq!(third.rows[0], first.rows[0]);
        assert_eq!(third.rows[1].energy, first.rows[1].energy);
    }

    #[test]
    fn empty_axis_list_is_a_single_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.axes.clear();
        let table = run_scan(&plan).unwrap();
        assert_eq!(table.rows.len(), 1);
        let mut c = plan.base.clone();
        c.sampler.seed = plan.point_seed(0);
        let direct = crate::trainer::train(&c).unwrap();
        assert_eq!(table.rows[0].energy, direct.summary.observable);
    }
}
