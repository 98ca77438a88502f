//! Trial wavefunctions: an MLP multiplied by analytic envelope and boundary
//! factors, with optional distance features fed to the network.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adjoint_row, backward_chunks, chunk_ranges, forward_chunks, ActivationKind, EvalBatch, Jet,
    Layer, LossAdjoint, MlpParams, Tape,
};
use crate::error::{Error, Result};

/// Radial inputs are clamped to at least this value before the boundary
/// factor and distance features are evaluated.
const RADIUS_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    None,
    /// `exp(-sum_j x_j^2 / (2 a_j^2))`. A single width is broadcast to
    /// every coordinate.
    Gaussian { widths: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryFactor {
    None,
    /// Multiplies a 1-D radial function by `r^power`, so `u(0) = 0`.
    RadialOrigin { power: u32 },
}

/// What the network sees. Distances give the network access to the
/// non-smooth coordinates of Coulomb problems without fixing any cusp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputFeatures {
    Cartesian,
    /// Coordinates followed by `|x|`.
    CartesianRadius,
    /// Coordinates of `particles` particles in `dim` dimensions followed by
    /// every pair distance `|r_i - r_j|`, `i < j`.
    PairDistances { particles: usize, dim: usize },
}

impl InputFeatures {
    pub fn feature_count(self, input_dim: usize) -> usize {
        match self {
            InputFeatures::Cartesian => input_dim,
            InputFeatures::CartesianRadius => input_dim + 1,
            InputFeatures::PairDistances { particles, .. } => {
                input_dim + particles * (particles - 1) / 2
            }
        }
    }

    fn name(self) -> String {
        match self {
            InputFeatures::Cartesian => "cartesian".into(),
            InputFeatures::CartesianRadius => "cartesian_radius".into(),
            InputFeatures::PairDistances { particles, dim } => {
                format!("pair_distances {particles} {dim}")
            }
        }
    }

    fn parse(text: &str) -> Option<Self> {
        let mut parts = text.split_whitespace();
        match parts.next()? {
            "cartesian" => Some(InputFeatures::Cartesian),
            "cartesian_radius" => Some(InputFeatures::CartesianRadius),
            "pair_distances" => {
                let particles = parts.next()?.parse().ok()?;
                let dim = parts.next()?.parse().ok()?;
                Some(InputFeatures::PairDistances { particles, dim })
            }
            _ => None,
        }
    }

    /// Seed jet for rows `[n x d]`.
    fn jet(self, rows: ArrayView2<f64>) -> Jet {
        let (n, d) = rows.dim();
        let mut jet = Jet::zeros(self.feature_count(d), n, d);
        for i in 0..n {
            for j in 0..d {
                jet.data[[j, i]] = rows[[i, j]];
                jet.data[[j, n + i * d + j]] = 1.0;
            }
        }
        match self {
            InputFeatures::Cartesian => {}
            InputFeatures::CartesianRadius => {
                for i in 0..n {
                    let row = rows.row(i);
                    let r = row.dot(&row).sqrt().max(RADIUS_FLOOR);
                    jet.data[[d, i]] = r;
                    for j in 0..d {
                        jet.data[[d, n + i * d + j]] = row[j] / r;
                    }
                    jet.data[[d, n + n * d + i]] = (d as f64 - 1.0) / r;
                }
            }
            InputFeatures::PairDistances { particles, dim } => {
                let mut f = d;
                for a in 0..particles {
                    for b in a + 1..particles {
                        for i in 0..n {
                            let mut r2 = 0.0;
                            for c in 0..dim {
                                let diff = rows[[i, a * dim + c]] - rows[[i, b * dim + c]];
                                r2 += diff * diff;
                            }
                            let r = r2.sqrt().max(RADIUS_FLOOR);
                            jet.data[[f, i]] = r;
                            for c in 0..dim {
                                let u = (rows[[i, a * dim + c]] - rows[[i, b * dim + c]]) / r;
                                jet.data[[f, n + i * d + a * dim + c]] = u;
                                jet.data[[f, n + i * d + b * dim + c]] = -u;
                            }
                            // Each particle's own Laplacian of |r_a - r_b| is (dim-1)/r.
                            jet.data[[f, n + n * d + i]] = 2.0 * (dim as f64 - 1.0) / r;
                        }
                        f += 1;
                    }
                }
            }
        }
        jet
    }
}

/// Network architecture and analytic factors of a trial wavefunction.
#[derive(Clone, Debug, PartialEq)]
pub struct WavefunctionModel {
    pub mlp: MlpParams,
    pub envelope: Envelope,
    pub boundary: BoundaryFactor,
    pub features: InputFeatures,
    pub input_dim: usize,
    pub system_tag: String,
    pub units: String,
}

/// Value, gradient and Laplacian of the analytic prefactor at one point.
struct Prefactor {
    value: f64,
    grad: Array1<f64>,
    laplacian: f64,
}

impl WavefunctionModel {
    pub fn new(
        mlp: MlpParams,
        envelope: Envelope,
        boundary: BoundaryFactor,
        features: InputFeatures,
        input_dim: usize,
    ) -> Result<Self> {
        let model = WavefunctionModel {
            mlp,
            envelope,
            boundary,
            features,
            input_dim,
            system_tag: "custom".into(),
            units: "atomic".into(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Freshly initialised model with uniform Glorot weights.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        activation: ActivationKind,
        envelope: Envelope,
        boundary: BoundaryFactor,
        features: InputFeatures,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = MlpParams::init_uniform(
            features.feature_count(input_dim),
            hidden,
            activation,
            rng,
        )?;
        WavefunctionModel::new(mlp, envelope, boundary, features, input_dim)
    }

    pub fn with_system(mut self, tag: &str, units: &str) -> Self {
        self.system_tag = tag.to_string();
        self.units = units.to_string();
        self
    }

    fn validate(&self) -> Result<()> {
        let expected = self.features.feature_count(self.input_dim);
        if self.mlp.input_dim() != expected {
            return Err(Error::Shape(format!(
                "network takes {} inputs but features produce {expected}",
                self.mlp.input_dim()
            )));
        }
        if let Envelope::Gaussian { widths } = &self.envelope {
            if widths.len() != 1 && widths.len() != self.input_dim {
                return Err(Error::Shape(format!(
                    "envelope has {} widths for {} coordinates",
                    widths.len(),
                    self.input_dim
                )));
            }
            if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::Config("envelope widths must be positive".into()));
            }
        }
        if matches!(self.boundary, BoundaryFactor::RadialOrigin { .. }) && self.input_dim != 1 {
            return Err(Error::Config(
                "radial boundary factor needs a one-dimensional input".into(),
            ));
        }
        if let InputFeatures::PairDistances { particles, dim } = self.features {
            if particles * dim != self.input_dim || particles < 2 {
                return Err(Error::Shape(format!(
                    "{particles} particles in {dim} dimensions do not make {} coordinates",
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    fn envelope_width(&self, j: usize) -> Option<f64> {
        match &self.envelope {
            Envelope::None => None,
            Envelope::Gaussian { widths } => Some(if widths.len() == 1 {
                widths[0]
            } else {
                widths[j]
            }),
        }
    }

    fn check_rows(&self, rows: ArrayView2<f64>) -> Result<()> {
        if rows.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "inputs have {} columns, model expects {}",
                rows.ncols(),
                self.input_dim
            )));
        }
        if rows.nrows() == 0 {
            return Err(Error::Shape("empty input batch".into()));
        }
        if matches!(self.boundary, BoundaryFactor::RadialOrigin { .. }) {
            if let Some(r) = rows.iter().find(|r| !(**r > 0.0)) {
                return Err(Error::Domain(format!("radial input {r} is not positive")));
            }
        }
        Ok(())
    }

    fn prefactor(&self, x: ArrayView1<f64>) -> Prefactor {
        let d = x.len();
        let mut log_env = 0.0;
        let mut env_grad_over = Array1::zeros(d);
        let mut env_lap_over = 0.0;
        if matches!(self.envelope, Envelope::Gaussian { .. }) {
            for j in 0..d {
                let a = self.envelope_width(j).unwrap_or(1.0);
                let a2 = a * a;
                log_env -= x[j] * x[j] / (2.0 * a2);
                env_grad_over[j] = -x[j] / a2;
                env_lap_over += x[j] * x[j] / (a2 * a2) - 1.0 / a2;
            }
        }
        let env = log_env.exp();
        match self.boundary {
            BoundaryFactor::None => Prefactor {
                value: env,
                grad: env_grad_over * env,
                laplacian: env_lap_over * env,
            },
            BoundaryFactor::RadialOrigin { power } => {
                let r = x[0].max(RADIUS_FLOOR);
                let p = power as f64;
                let b = r.powi(power as i32);
                let db = if power == 0 { 0.0 } else { p * r.powi(power as i32 - 1) };
                let d2b = if power < 2 {
                    0.0
                } else {
                    p * (p - 1.0) * r.powi(power as i32 - 2)
                };
                let de = env_grad_over[0] * env;
                let d2e = env_lap_over * env;
                Prefactor {
                    value: env * b,
                    grad: Array1::from_elem(1, env * db + de * b),
                    laplacian: env * d2b + 2.0 * de * db + d2e * b,
                }
            }
        }
    }

    fn forward(&self, rows: ArrayView2<f64>) -> Result<Vec<Tape>> {
        let features = self.features;
        forward_chunks(&self.mlp, rows.nrows(), |r| {
            Ok(features.jet(rows.slice(s![r, ..])))
        })
    }

    /// Composes network outputs with the prefactor. Returns the composed
    /// batch and the per-row prefactors.
    fn compose(&self, rows: ArrayView2<f64>, mlp: &EvalBatch) -> (EvalBatch, Vec<Prefactor>) {
        let (n, d) = rows.dim();
        let mut value = Array1::zeros(n);
        let mut grad = Array2::zeros((n, d));
        let mut laplacian = Array1::zeros(n);
        let mut pre = Vec::with_capacity(n);
        for i in 0..n {
            let f = self.prefactor(rows.row(i));
            let m = mlp.value[i];
            let gm = mlp.grad.row(i);
            value[i] = f.value * m;
            let mut cross = 0.0;
            for j in 0..d {
                grad[[i, j]] = m * f.grad[j] + f.value * gm[j];
                cross += f.grad[j] * gm[j];
            }
            laplacian[i] = m * f.laplacian + 2.0 * cross + f.value * mlp.laplacian[i];
            pre.push(f);
        }
        let nonfinite_rows = (0..n)
            .filter(|&i| {
                !(value[i].is_finite()
                    && laplacian[i].is_finite()
                    && grad.row(i).iter().all(|g| g.is_finite()))
            })
            .collect();
        (
            EvalBatch {
                inputs: rows.to_owned(),
                value,
                grad,
                laplacian,
                nonfinite_rows,
            },
            pre,
        )
    }

    /// ψ, ∇ψ and ∇²ψ of the composed wavefunction at every row.
    pub fn psi_batch(&self, rows: ArrayView2<f64>) -> Result<EvalBatch> {
        self.check_rows(rows)?;
        let tapes = self.forward(rows)?;
        let mlp = EvalBatch::from_tapes(rows.to_owned(), &tapes);
        Ok(self.compose(rows, &mlp).0)
    }

    /// ψ only; cheaper than [`psi_batch`](Self::psi_batch).
    pub fn psi_values(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_rows(rows)?;
        let jet_free: Vec<Array1<f64>> = chunk_ranges(rows.nrows())
            .into_iter()
            .map(|r| {
                let chunk = rows.slice(s![r, ..]);
                let feats = self.feature_matrix(chunk);
                let m = self.mlp.values(feats.view())?;
                Ok(Array1::from_iter(
                    chunk
                        .outer_iter()
                        .zip(m.iter())
                        .map(|(x, m)| self.prefactor_value(x) * m),
                ))
            })
            .collect::<Result<_>>()?;
        let mut out = Array1::zeros(rows.nrows());
        let mut offset = 0;
        for part in jet_free {
            out.slice_mut(s![offset..offset + part.len()]).assign(&part);
            offset += part.len();
        }
        Ok(out)
    }

    fn prefactor_value(&self, x: ArrayView1<f64>) -> f64 {
        let mut log_env = 0.0;
        if matches!(self.envelope, Envelope::Gaussian { .. }) {
            for j in 0..x.len() {
                let a = self.envelope_width(j).unwrap_or(1.0);
                log_env -= x[j] * x[j] / (2.0 * a * a);
            }
        }
        let b = match self.boundary {
            BoundaryFactor::None => 1.0,
            BoundaryFactor::RadialOrigin { power } => x[0].max(RADIUS_FLOOR).powi(power as i32),
        };
        log_env.exp() * b
    }

    /// Network input features, `[features x n]`.
    fn feature_matrix(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let (n, d) = rows.dim();
        let mut out = Array2::zeros((self.features.feature_count(d), n));
        out.slice_mut(s![0..d, ..]).assign(&rows.t());
        match self.features {
            InputFeatures::Cartesian => {}
            InputFeatures::CartesianRadius => {
                for i in 0..n {
                    let row = rows.row(i);
                    out[[d, i]] = row.dot(&row).sqrt().max(RADIUS_FLOOR);
                }
            }
            InputFeatures::PairDistances { particles, dim } => {
                let mut f = d;
                for a in 0..particles {
                    for b in a + 1..particles {
                        for i in 0..n {
                            let mut r2 = 0.0;
                            for c in 0..dim {
                                let diff = rows[[i, a * dim + c]] - rows[[i, b * dim + c]];
                                r2 += diff * diff;
                            }
                            out[[f, i]] = r2.sqrt().max(RADIUS_FLOOR);
                        }
                        f += 1;
                    }
                }
            }
        }
        out
    }

    /// Parameter gradient of a loss of the composed (ψ, ∇ψ, ∇²ψ) over fixed
    /// rows. The closure also receives the composed batch so it can compute
    /// local energies. Returns `(loss, flat gradient, composed batch)`.
    pub fn param_gradient<L>(
        &self,
        rows: ArrayView2<f64>,
        loss: L,
    ) -> Result<(f64, Vec<f64>, EvalBatch)>
    where
        L: FnOnce(&EvalBatch) -> Result<LossAdjoint>,
    {
        self.check_rows(rows)?;
        let (n, d) = rows.dim();
        let tapes = self.forward(rows)?;
        let mlp = EvalBatch::from_tapes(rows.to_owned(), &tapes);
        let (psi, pre) = self.compose(rows, &mlp);
        let adj = loss(&psi)?;
        if adj.d_value.len() != n || adj.d_laplacian.len() != n {
            return Err(Error::Shape("loss adjoint length differs from batch".into()));
        }
        // Chain rule through psi = F * M.
        let mut m_adj = LossAdjoint::zeros(n);
        m_adj.loss = adj.loss;
        let mut dgm = Array2::zeros((n, d));
        for (i, f) in pre.iter().enumerate() {
            let dv = adj.d_value[i];
            let dl = adj.d_laplacian[i];
            let mut dm = dv * f.value + dl * f.laplacian;
            for j in 0..d {
                let dg = adj.d_grad.as_ref().map_or(0.0, |g| g[[i, j]]);
                dm += dg * f.grad[j];
                dgm[[i, j]] = dg * f.value + 2.0 * dl * f.grad[j];
            }
            m_adj.d_value[i] = dm;
            m_adj.d_laplacian[i] = dl * f.value;
        }
        m_adj.d_grad = Some(dgm);
        let ranges = chunk_ranges(n);
        let grad = backward_chunks(&self.mlp, &tapes, |c, tape| {
            adjoint_row(tape, ranges[c].start, &m_adj)
        })?;
        Ok((adj.loss, grad, psi))
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.mlp.to_flat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.mlp.set_flat(flat)
    }

    /// Serialises to the text checkpoint format.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nvmc-checkpoint 1");
        let _ = writeln!(out, "system = {}", self.system_tag);
        let _ = writeln!(out, "units = {}", self.units);
        let _ = writeln!(out, "input_dim = {}", self.input_dim);
        let _ = writeln!(out, "features = {}", self.features.name());
        let acts: Vec<&str> = self.mlp.activations().iter().map(|a| a.name()).collect();
        let _ = writeln!(out, "activations = {}", acts.join(","));
        let widths: Vec<String> = self
            .mlp
            .layers()
            .iter()
            .map(|l| format!("{}x{}", l.fan_out(), l.fan_in()))
            .collect();
        let _ = writeln!(out, "layers = {}", widths.join(","));
        let envelope = match &self.envelope {
            Envelope::None => "none".to_string(),
            Envelope::Gaussian { widths } => {
                let w: Vec<String> = widths.iter().map(|w| format!("{w:e}")).collect();
                format!("gaussian {}", w.join(" "))
            }
        };
        let _ = writeln!(out, "envelope = {envelope}");
        let boundary = match self.boundary {
            BoundaryFactor::None => "none".to_string(),
            BoundaryFactor::RadialOrigin { power } => format!("radial_origin {power}"),
        };
        let _ = writeln!(out, "boundary = {boundary}");
        for (k, layer) in self.mlp.layers().iter().enumerate() {
            let _ = writeln!(out, "[layer {k} weight]");
            for row in layer.weight.outer_iter() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
            let _ = writeln!(out, "[layer {k} bias]");
            let vals: Vec<String> = layer.bias.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        let _ = writeln!(out, "end");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Checkpoint {
            line: line + 1,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some("nvmc-checkpoint 1") {
            return Err(err(0, "missing 'nvmc-checkpoint 1' header"));
        }
        let mut header = std::collections::BTreeMap::new();
        let mut idx = 1;
        while idx < lines.len() && !lines[idx].starts_with('[') {
            let line = lines[idx].trim();
            if !line.is_empty() {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| err(idx, "expected 'key = value'"))?;
                header.insert(k.trim().to_string(), (idx, v.trim().to_string()));
            }
            idx += 1;
        }
        let get = |key: &str| {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| err(0, &format!("missing header key '{key}'")))
        };
        let (l, input_dim) = get("input_dim")?;
        let input_dim: usize = input_dim.parse().map_err(|_| err(l, "bad input_dim"))?;
        let (l, features) = get("features")?;
        let features = InputFeatures::parse(&features).ok_or_else(|| err(l, "bad features"))?;
        let (l, acts) = get("activations")?;
        let activations = if acts.is_empty() {
            Vec::new()
        } else {
            acts.split(',')
                .map(|a| ActivationKind::from_name(a.trim()).ok_or_else(|| err(l, "bad activation")))
                .collect::<Result<Vec<_>>>()?
        };
        let (l, shapes) = get("layers")?;
        let shapes = shapes
            .split(',')
            .map(|s| {
                let (o, i) = s.trim().split_once('x').ok_or_else(|| err(l, "bad layer shape"))?;
                Ok((
                    o.parse::<usize>().map_err(|_| err(l, "bad layer shape"))?,
                    i.parse::<usize>().map_err(|_| err(l, "bad layer shape"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (l, env) = get("envelope")?;
        let mut env_parts = env.split_whitespace();
        let envelope = match env_parts.next() {
            Some("none") => Envelope::None,
            Some("gaussian") => Envelope::Gaussian {
                widths: env_parts
                    .map(|w| w.parse::<f64>().map_err(|_| err(l, "bad envelope width")))
                    .collect::<Result<_>>()?,
            },
            _ => return Err(err(l, "bad envelope")),
        };
        let (l, bnd) = get("boundary")?;
        let mut bnd_parts = bnd.split_whitespace();
        let boundary = match bnd_parts.next() {
            Some("none") => BoundaryFactor::None,
            Some("radial_origin") => BoundaryFactor::RadialOrigin {
                power: bnd_parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| err(l, "bad boundary power"))?,
            },
            _ => return Err(err(l, "bad boundary")),
        };

        let parse_row = |line: usize, expected: usize| -> Result<Vec<f64>> {
            let text = lines.get(line).ok_or_else(|| err(line, "unexpected end of file"))?;
            let vals = text
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(line, "bad number")))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != expected {
                return Err(err(line, &format!("expected {expected} numbers, got {}", vals.len())));
            }
            Ok(vals)
        };
        let mut layers = Vec::with_capacity(shapes.len());
        for (k, &(out_w, in_w)) in shapes.iter().enumerate() {
            if lines.get(idx).map(|l| l.trim()) != Some(format!("[layer {k} weight]").as_str()) {
                return Err(err(idx, &format!("expected [layer {k} weight]")));
            }
            idx += 1;
            let mut weight = Vec::with_capacity(out_w * in_w);
            for _ in 0..out_w {
                weight.extend(parse_row(idx, in_w)?);
                idx += 1;
            }
            if lines.get(idx).map(|l| l.trim()) != Some(format!("[layer {k} bias]").as_str()) {
                return Err(err(idx, &format!("expected [layer {k} bias]")));
            }
            idx += 1;
            let bias = parse_row(idx, out_w)?;
            idx += 1;
            layers.push(Layer::new(
                Array2::from_shape_vec((out_w, in_w), weight).map_err(|e| err(idx, &e.to_string()))?,
                Array1::from(bias),
            ));
        }
        if lines.get(idx).map(|l| l.trim()) != Some("end") {
            return Err(err(idx, "expected 'end'"));
        }
        let mlp = MlpParams::new(layers, activations)?;
        let mut model = WavefunctionModel::new(mlp, envelope, boundary, features, input_dim)?;
        model.system_tag = get("system")?.1;
        model.units = get("units")?.1;
        Ok(model)
    }
}
