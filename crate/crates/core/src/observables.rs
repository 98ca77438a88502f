//! Densities and pair correlations of converged states.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::ansatz::WavefunctionModel;
use crate::error::{Error, Result};
use crate::hamiltonians::HamiltonianSpec;
use crate::sampler::WalkerEnsemble;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    /// Configuration coordinate shown on this axis.
    pub coordinate: usize,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(coordinate: usize, min: f64, max: f64, count: usize) -> Self {
        GridAxis {
            coordinate,
            min,
            max,
            count,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let h = self.spacing();
        (0..self.count).map(|i| self.min + h * i as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        if self.count > 1 {
            (self.max - self.min) / (self.count - 1) as f64
        } else {
            1.0
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.max >= self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!("invalid grid axis {self:?}")));
        }
        Ok(())
    }
}

/// How coordinates that are not on the grid are removed.
#[derive(Clone, Debug, PartialEq)]
pub enum Reduction {
    /// Every coordinate is on the grid.
    None,
    /// Histogram of walker positions projected onto the grid coordinates.
    MonteCarlo { samples: Array2<f64> },
    /// Sum of `|ψ|²` over a tensor grid of the remaining coordinates.
    Quadrature { axes: Vec<GridAxis> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub axes: Vec<GridAxis>,
    /// Row-major over `axes`, first axis slowest.
    pub values: Vec<f64>,
    /// Factor that was divided out so that `Σ values · cell = 1`.
    pub normalization: f64,
    pub reduction: String,
}

impl DensityGrid {
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::spacing).product()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn value_at(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (axis, &i) in self.axes.iter().zip(index) {
            flat = flat * axis.count + i;
        }
        self.values[flat]
    }

    /// Local maxima (strictly above every neighbour) of a 1-D or 2-D grid.
    pub fn peaks(&self) -> Vec<(Vec<usize>, f64)> {
        let shape: Vec<usize> = self.axes.iter().map(|a| a.count).collect();
        let mut out = Vec::new();
        for flat in 0..self.values.len() {
            let idx = unflatten(flat, &shape);
            let v = self.values[flat];
            let mut is_peak = v > 0.0;
            for k in 0..shape.len() {
                for delta in [-1_i64, 1] {
                    let j = idx[k] as i64 + delta;
                    if j < 0 || j >= shape[k] as i64 {
                        continue;
                    }
                    let mut n = idx.clone();
                    n[k] = j as usize;
                    if self.value_at(&n) >= v {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                out.push((idx, v));
            }
        }
        out
    }

    /// Columns: one per axis (`x<coordinate>`), then `density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in &self.axes {
            let _ = write!(out, "x{},", a.coordinate);
        }
        out.push_str("density\n");
        let shape: Vec<usize> = self.axes.iter().map(|a| a.count).collect();
        let points: Vec<Vec<f64>> = self.axes.iter().map(GridAxis::points).collect();
        for (flat, v) in self.values.iter().enumerate() {
            for (k, &i) in unflatten(flat, &shape).iter().enumerate() {
                let _ = write!(out, "{},", points[k][i]);
            }
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

fn tensor_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
    let pts: Vec<Vec<f64>> = axes.iter().map(GridAxis::points).collect();
    let total: usize = shape.iter().product();
    (0..total)
        .map(|flat| {
            unflatten(flat, &shape)
                .iter()
                .enumerate()
                .map(|(k, &i)| pts[k][i])
                .collect()
        })
        .collect()
}

/// Normalised `|ψ|²` on a grid of selected coordinates.
pub fn density_grid(
    model: &WavefunctionModel,
    spec: &HamiltonianSpec,
    axes: &[GridAxis],
    reduction: &Reduction,
) -> Result<DensityGrid> {
    let d = spec.dim();
    for a in axes {
        a.validate()?;
        if a.coordinate >= d {
            return Err(Error::Config(format!(
                "grid coordinate {} out of range for {}",
                a.coordinate,
                spec.tag()
            )));
        }
    }
    let grid = tensor_points(axes);
    let (raw, name) = match reduction {
        Reduction::None => {
            if axes.len() != d {
                return Err(Error::Config(format!(
                    "unreduced grid needs all {d} coordinates, got {}",
                    axes.len()
                )));
            }
            let mut rows = Array2::zeros((grid.len(), d));
            for (r, p) in grid.iter().enumerate() {
                for (a, &v) in axes.iter().zip(p) {
                    rows[[r, a.coordinate]] = v;
                }
            }
            check_domain(spec, rows.view())?;
            let psi = model.psi_values(rows.view())?;
            (psi.iter().map(|p| p * p).collect::<Vec<_>>(), "none")
        }
        Reduction::Quadrature { axes: rest } => {
            if axes.len() + rest.len() != d {
                return Err(Error::Config("grid and quadrature axes must cover every coordinate".into()));
            }
            if rest.len() > 3 {
                return Err(Error::Config("quadrature over more than 3 coordinates".into()));
            }
            for a in rest {
                a.validate()?;
            }
            let inner = tensor_points(rest);
            let mut raw = Vec::with_capacity(grid.len());
            for p in &grid {
                let mut rows = Array2::zeros((inner.len(), d));
                for (r, q) in inner.iter().enumerate() {
                    for (a, &v) in axes.iter().zip(p) {
                        rows[[r, a.coordinate]] = v;
                    }
                    for (a, &v) in rest.iter().zip(q) {
                        rows[[r, a.coordinate]] = v;
                    }
                }
                check_domain(spec, rows.view())?;
                let psi = model.psi_values(rows.view())?;
                raw.push(psi.iter().map(|p| p * p).sum::<f64>());
            }
            (raw, "quadrature")
        }
        Reduction::MonteCarlo { samples } => {
            if samples.ncols() != d {
                return Err(Error::Shape(format!(
                    "samples have {} coordinates, {} needs {d}",
                    samples.ncols(),
                    spec.tag()
                )));
            }
            let shape: Vec<usize> = axes.iter().map(|a| a.count).collect();
            let mut counts = vec![0.0; grid.len()];
            'rows: for row in samples.outer_iter() {
                let mut flat = 0;
                for (k, a) in axes.iter().enumerate() {
                    let h = a.spacing();
                    let i = ((row[a.coordinate] - a.min) / h + 0.5).floor();
                    if !(i >= 0.0 && i < shape[k] as f64) {
                        continue 'rows;
                    }
                    flat = flat * shape[k] + i as usize;
                }
                counts[flat] += 1.0;
            }
            (counts, "monte_carlo")
        }
    };
    let cell: f64 = axes.iter().map(GridAxis::spacing).product();
    let total = raw.iter().sum::<f64>() * cell;
    if !(total > 0.0) {
        return Err(Error::Training("density vanishes on the whole grid".into()));
    }
    Ok(DensityGrid {
        axes: axes.to_vec(),
        values: raw.iter().map(|v| v / total).collect(),
        normalization: total,
        reduction: name.into(),
    })
}

fn check_domain(spec: &HamiltonianSpec, rows: ArrayView2<f64>) -> Result<()> {
    match rows.outer_iter().position(|x| !spec.in_domain(x)) {
        Some(i) => Err(Error::Domain(format!(
            "grid point {} outside the {} domain",
            rows.row(i),
            spec.tag()
        ))),
        None => Ok(()),
    }
}

/// Sign changes of a sampled 1-D function, ignoring values below
/// `rel_tol` of its maximum magnitude.
pub fn count_nodes(values: &[f64], rel_tol: f64) -> usize {
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut last_sign = 0.0;
    let mut nodes = 0;
    for &v in values {
        if v.abs() <= rel_tol * max {
            continue;
        }
        let s = v.signum();
        if last_sign != 0.0 && s != last_sign {
            nodes += 1;
        }
        last_sign = s;
    }
    nodes
}

/// `u(r)` of a radial model on `(0, r_max]`.
pub fn radial_function(model: &WavefunctionModel, radii: &[f64]) -> Result<Array1<f64>> {
    let rows = Array2::from_shape_vec((radii.len(), 1), radii.to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    model.psi_values(rows.view())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairCorrelation {
    pub pair: (usize, usize),
    pub edges: Vec<f64>,
    pub g: Vec<f64>,
    /// Number of samples, the constant divided out of the histogram.
    pub normalization: f64,
}

impl PairCorrelation {
    pub fn integral(&self) -> f64 {
        self.g
            .iter()
            .zip(self.edges.windows(2))
            .map(|(g, e)| g * (e[1] - e[0]))
            .sum()
    }

    pub fn mean_distance(&self) -> f64 {
        self.g
            .iter()
            .zip(self.edges.windows(2))
            .map(|(g, e)| g * (e[1] - e[0]) * 0.5 * (e[0] + e[1]))
            .sum()
    }
}

pub struct PairCorrelations {
    pub curves: Vec<PairCorrelation>,
    pub warnings: Vec<String>,
}

pub const MIN_PAIR_SAMPLES: usize = 1000;

fn distance(x: ndarray::ArrayView1<f64>, a: usize, b: usize, dim: usize) -> f64 {
    (0..dim)
        .map(|k| (x[a * dim + k] - x[b * dim + k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Histogram of `|r_i - r_j|` for every pair over `[0, 3⟨r⟩]` (all pairs
/// share the range), normalised to unit integral.
pub fn pair_correlation(
    samples: ArrayView2<f64>,
    particles: usize,
    dim: usize,
    bins: usize,
) -> Result<PairCorrelations> {
    if samples.ncols() != particles * dim {
        return Err(Error::Shape(format!(
            "samples have {} coordinates, expected {}",
            samples.ncols(),
            particles * dim
        )));
    }
    if bins == 0 || samples.nrows() == 0 {
        return Err(Error::Config("need at least one bin and one sample".into()));
    }
    let mut warnings = Vec::new();
    if samples.nrows() < MIN_PAIR_SAMPLES {
        warnings.push(format!(
            "only {} samples; pair correlations are noisy below {MIN_PAIR_SAMPLES}",
            samples.nrows()
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..particles)
        .flat_map(|a| (a + 1..particles).map(move |b| (a, b)))
        .collect();
    let dists: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(a, b)| samples.outer_iter().map(|x| distance(x, a, b, dim)).collect())
        .collect();
    let all = dists.iter().flatten();
    let mean = all.clone().sum::<f64>() / (dists.len() * samples.nrows()) as f64;
    let r_max = if mean > 0.0 { 3.0 * mean } else { 1.0 };
    let width = r_max / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let curves = pairs
        .iter()
        .zip(&dists)
        .map(|(&pair, ds)| {
            let mut counts = vec![0.0; bins];
            for &r in ds {
                let i = ((r / width).floor() as usize).min(bins - 1);
                counts[i] += 1.0;
            }
            let norm = ds.len() as f64;
            PairCorrelation {
                pair,
                edges: edges.clone(),
                g: counts.iter().map(|c| c / (norm * width)).collect(),
                normalization: norm,
            }
        })
        .collect();
    Ok(PairCorrelations { curves, warnings })
}

/// Columns `r` (bin centre) then `g<i><j>` per pair.
pub fn pair_correlation_csv(curves: &[PairCorrelation]) -> String {
    let mut out = String::from("r");
    for c in curves {
        let _ = write!(out, ",g{}{}", c.pair.0, c.pair.1);
    }
    out.push('\n');
    if let Some(first) = curves.first() {
        for (i, e) in first.edges.windows(2).enumerate() {
            let _ = write!(out, "{}", 0.5 * (e[0] + e[1]));
            for c in curves {
                let _ = write!(out, ",{}", c.g[i]);
            }
            out.push('\n');
        }
    }
    out
}

/// Walkers drawn from |ψ|² for histogram observables: burn-in, then one
/// snapshot of every walker each `thin` sweeps.
pub fn sample_positions(
    model: &WavefunctionModel,
    spec: &HamiltonianSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    const WALKERS: usize = 1000;
    const THIN: usize = 5;
    let mut ensemble = WalkerEnsemble::init(spec, WALKERS, seed)?;
    ensemble.burn_in(model, 300)?;
    let snapshots = n_samples.div_ceil(WALKERS).max(1);
    let mut rows = Array2::zeros((0, spec.dim()));
    for _ in 0..snapshots {
        ensemble.sweep(model, THIN)?;
        rows.append(Axis(0), ensemble.positions().view())
            .map_err(|e| Error::Shape(e.to_string()))?;
    }
    Ok(rows)
}

/// CSV files (name, contents) describing a trained state, sized from
/// `samples`:
/// - 1-D radial systems: `radial.csv` with columns `r,u`;
/// - 2-D systems: `density.csv`, exact |ψ|² on an 80×80 grid;
/// - 3-D systems: `density_xy.csv` and `density_xz.csv`, with the third
///   coordinate integrated by quadrature;
/// - the three-body dot: `density_xy.csv`, a histogram of particle 0, and
///   `pair_correlation.csv`.
pub fn standard_observables(
    model: &WavefunctionModel,
    spec: &HamiltonianSpec,
    samples: ArrayView2<f64>,
) -> Result<Vec<(String, String)>> {
    let d = spec.dim();
    if samples.ncols() != d || samples.nrows() == 0 {
        return Err(Error::Shape(format!("need samples with {d} coordinates")));
    }
    // Symmetric box a little wider than the walkers reach; even counts keep
    // the origin off the grid for Coulomb systems.
    let extent: Vec<f64> = (0..d)
        .map(|k| 1.1 * samples.column(k).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .map(|l| if l > 0.0 { l } else { 1.0 })
        .collect();
    let axis = |k: usize, n: usize| GridAxis::new(k, -extent[k], extent[k], n);
    let mut files = Vec::new();
    match d {
        1 => {
            let n = 200;
            let radii: Vec<f64> = (1..=n).map(|i| extent[0] * i as f64 / n as f64).collect();
            let u = radial_function(model, &radii)?;
            let mut out = String::from("r,u\n");
            for (r, u) in radii.iter().zip(&u) {
                let _ = writeln!(out, "{r},{u}");
            }
            files.push(("radial.csv".into(), out));
        }
        2 => {
            let g = density_grid(model, spec, &[axis(0, 80), axis(1, 80)], &Reduction::None)?;
            files.push(("density.csv".into(), g.to_csv()));
        }
        3 => {
            for (name, keep, drop) in [("density_xy.csv", 1, 2), ("density_xz.csv", 2, 1)] {
                let reduction = Reduction::Quadrature { axes: vec![axis(drop, 40)] };
                let g = density_grid(model, spec, &[axis(0, 60), axis(keep, 60)], &reduction)?;
                files.push((name.into(), g.to_csv()));
            }
        }
        _ => {
            let reduction = Reduction::MonteCarlo { samples: samples.to_owned() };
            let g = density_grid(model, spec, &[axis(0, 60), axis(1, 60)], &reduction)?;
            files.push(("density_xy.csv".into(), g.to_csv()));
            if d % 3 == 0 {
                let pc = pair_correlation(samples, d / 3, 3, 60)?;
                files.push(("pair_correlation.csv".into(), pair_correlation_csv(&pc.curves)));
            }
        }
    }
    Ok(files)
}
