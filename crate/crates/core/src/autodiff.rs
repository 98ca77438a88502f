//! Exact value / input-gradient / input-Laplacian propagation through a
//! multilayer perceptron, plus reverse-mode parameter gradients of losses
//! built from those three quantities.
//!
//! The forward pass carries a second-order "jet" per sample: the activation
//! value, its Jacobian with respect to the `d` configuration coordinates and
//! its Laplacian. For a linear layer all three transform by the same weight
//! matrix (the bias only touches the value), so a whole batch of jets is one
//! matrix product. Activations mix them with the closed-form derivatives
//! `a'`, `a''`. The backward pass differentiates that recursion, which needs
//! `a'''` as well.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per evaluation chunk. Fixed so that chunk-ordered reductions are
/// bit-identical regardless of the worker count.
pub const CHUNK_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    /// `a(x) = exp(-x^2)`
    Gaussian,
    Tanh,
}

impl ActivationKind {
    pub fn value(self, x: f64) -> f64 {
        match self {
            ActivationKind::Gaussian => (-x * x).exp(),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// `[a, a', a'', a''']` at `x`.
    #[inline]
    pub fn derivatives(self, x: f64) -> [f64; 4] {
        match self {
            ActivationKind::Gaussian => {
                let g = (-x * x).exp();
                let x2 = x * x;
                [
                    g,
                    -2.0 * x * g,
                    (4.0 * x2 - 2.0) * g,
                    (12.0 * x - 8.0 * x2 * x) * g,
                ]
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                let sech2 = 1.0 - t * t;
                [t, sech2, -2.0 * t * sech2, sech2 * (6.0 * t * t - 2.0)]
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Gaussian => "gaussian",
            ActivationKind::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gaussian" => Some(ActivationKind::Gaussian),
            "tanh" => Some(ActivationKind::Tanh),
            _ => None,
        }
    }
}

/// One affine map `y = W x + b` with `W` stored `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        Layer { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a scalar-output MLP. Every layer except the last is
/// followed by its activation; the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activations: Vec<ActivationKind>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activations: Vec<ActivationKind>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::Shape(format!(
                "{} layers need {} activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::Shape(format!(
                    "layer {k}: bias length {} != output width {}",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            if k > 0 && layers[k - 1].fan_out() != layer.fan_in() {
                return Err(Error::Shape(format!(
                    "layer {k}: input width {} != previous output width {}",
                    layer.fan_in(),
                    layers[k - 1].fan_out()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter",
                    layer: k,
                });
            }
        }
        if layers.last().map(Layer::fan_out) != Some(1) {
            return Err(Error::Shape("final layer must have exactly one output".into()));
        }
        Ok(MlpParams {
            layers,
            activations,
        })
    }

    /// Glorot-uniform initialisation: weights and biases of each layer are
    /// drawn from `U[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn init_uniform<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        activation: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-scale..scale));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-scale..scale));
                Layer { weight, bias }
            })
            .collect();
        MlpParams::new(layers, vec![activation; hidden.len()])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activations(&self) -> &[ActivationKind] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::fan_out)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Layer index owning flat parameter `index`.
    pub fn layer_of_param(&self, mut index: usize) -> usize {
        for (k, layer) in self.layers.iter().enumerate() {
            let n = layer.weight.len() + layer.bias.len();
            if index < n {
                return k;
            }
            index -= n;
        }
        self.layers.len() - 1
    }

    /// Plain forward pass. `features` is `[n_in x N]` (one column per sample).
    pub fn values(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                features.nrows(),
                self.input_dim()
            )));
        }
        let mut x = features.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = row_major(layer.weight.dot(&x));
            y += &layer.bias.view().insert_axis(Axis(1));
            if let Some(act) = self.activations.get(k) {
                y.mapv_inplace(|v| act.value(v));
            }
            x = y;
        }
        Ok(x.index_axis_move(Axis(0), 0))
    }

    /// Propagates one chunk of jets through the network, recording what the
    /// backward pass needs.
    pub fn forward_jet(&self, input: Jet) -> Result<Tape> {
        if input.data.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "jet has {} features, network expects {}",
                input.data.nrows(),
                self.input_dim()
            )));
        }
        let (n, d) = (input.n, input.d);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.activations.len());
        let mut x = input.data;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = row_major(layer.weight.dot(&x));
            {
                let mut vals = y.slice_mut(s![.., 0..n]);
                vals += &layer.bias.view().insert_axis(Axis(1));
            }
            inputs.push(x);
            match self.activations.get(k) {
                Some(&act) => {
                    let post = activate_jet(act, &y, n, d);
                    pre_activations.push(y);
                    x = post;
                }
                None => x = y,
            }
        }
        Ok(Tape {
            n,
            d,
            inputs,
            pre_activations,
            output: x.index_axis_move(Axis(0), 0),
        })
    }

    /// Reverse pass for one chunk. `out_adjoint` holds dLoss/d(output jet
    /// entry) in the same column layout as [`Jet`]. Returns the flat
    /// parameter gradient contribution of this chunk.
    pub fn backward_jet(&self, tape: &Tape, out_adjoint: ArrayView1<f64>) -> Vec<f64> {
        let (n, d) = (tape.n, tape.d);
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut g = out_adjoint.insert_axis(Axis(0)).to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &tape.inputs[k];
            let gw = g.dot(&x.t());
            let gb = g.slice(s![.., 0..n]).sum_axis(Axis(1));
            grads.push((gw, gb));
            if k == 0 {
                break;
            }
            let g_post = row_major(layer.weight.t().dot(&g));
            g = activate_jet_adjoint(
                self.activations[k - 1],
                &tape.pre_activations[k - 1],
                &g_post,
                n,
                d,
            );
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw.iter().copied());
            flat.extend(gb.iter().copied());
        }
        flat
    }
}

/// A chunk of `n` second-order jets over `d` configuration coordinates.
///
/// `data` is `[features x n*(2+d)]`: columns `0..n` hold values, columns
/// `n + i*d + j` hold `d/dx_j` for sample `i`, and columns `n + n*d + i`
/// hold Laplacians.
#[derive(Clone, Debug)]
pub struct Jet {
    pub n: usize,
    pub d: usize,
    pub data: Array2<f64>,
}

impl Jet {
    pub fn zeros(features: usize, n: usize, d: usize) -> Self {
        Jet {
            n,
            d,
            data: Array2::zeros((features, n * (2 + d))),
        }
    }

    /// Identity seed: feature `j` is coordinate `j`. `rows` is `[n x d]`.
    pub fn identity(rows: ArrayView2<f64>) -> Self {
        let (n, d) = rows.dim();
        let mut jet = Jet::zeros(d, n, d);
        for i in 0..n {
            for j in 0..d {
                jet.data[[j, i]] = rows[[i, j]];
                jet.data[[j, n + i * d + j]] = 1.0;
            }
        }
        jet
    }

    #[inline]
    pub fn value_col(&self, i: usize) -> usize {
        i
    }

    #[inline]
    pub fn grad_col(&self, i: usize, j: usize) -> usize {
        self.n + i * self.d + j
    }

    #[inline]
    pub fn lap_col(&self, i: usize) -> usize {
        self.n + self.n * self.d + i
    }
}

/// Forward record of one chunk.
#[derive(Clone, Debug)]
pub struct Tape {
    pub n: usize,
    pub d: usize,
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    /// Output jet row, same column layout as [`Jet`].
    pub output: Array1<f64>,
}

impl Tape {
    pub fn value(&self, i: usize) -> f64 {
        self.output[i]
    }

    pub fn grad(&self, i: usize) -> ArrayView1<'_, f64> {
        let start = self.n + i * self.d;
        self.output.slice(s![start..start + self.d])
    }

    pub fn laplacian(&self, i: usize) -> f64 {
        self.output[self.n + self.n * self.d + i]
    }
}

/// Matrix products of thin operands may come back column-major.
fn row_major(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn activate_jet(act: ActivationKind, pre: &Array2<f64>, n: usize, d: usize) -> Array2<f64> {
    let mut post = Array2::zeros(pre.raw_dim());
    for (row_in, mut row_out) in pre.outer_iter().zip(post.outer_iter_mut()) {
        let row_in = row_in.as_slice().expect("row-major");
        let row_out = row_out.as_slice_mut().expect("row-major");
        for i in 0..n {
            let [a, a1, a2, _] = act.derivatives(row_in[i]);
            let jac = &row_in[n + i * d..n + (i + 1) * d];
            let mut sq = 0.0;
            for (o, &g) in row_out[n + i * d..n + (i + 1) * d].iter_mut().zip(jac) {
                *o = a1 * g;
                sq += g * g;
            }
            row_out[i] = a;
            row_out[n + n * d + i] = a1 * row_in[n + n * d + i] + a2 * sq;
        }
    }
    post
}

/// Pulls the adjoint of a post-activation jet back to the pre-activation jet.
fn activate_jet_adjoint(
    act: ActivationKind,
    pre: &Array2<f64>,
    g_post: &Array2<f64>,
    n: usize,
    d: usize,
) -> Array2<f64> {
    let mut g_pre = Array2::zeros(pre.raw_dim());
    for ((row_in, row_g), mut row_out) in pre
        .outer_iter()
        .zip(g_post.outer_iter())
        .zip(g_pre.outer_iter_mut())
    {
        let z = row_in.as_slice().expect("row-major");
        let g = row_g.as_slice().expect("row-major");
        let out = row_out.as_slice_mut().expect("row-major");
        for i in 0..n {
            let [_, a1, a2, a3] = act.derivatives(z[i]);
            let lap_col = n + n * d + i;
            let g_lap = g[lap_col];
            let jac = &z[n + i * d..n + (i + 1) * d];
            let g_jac = &g[n + i * d..n + (i + 1) * d];
            let mut sq = 0.0;
            let mut cross = 0.0;
            for (o, (&jz, &gj)) in out[n + i * d..n + (i + 1) * d]
                .iter_mut()
                .zip(jac.iter().zip(g_jac))
            {
                sq += jz * jz;
                cross += gj * jz;
                *o = gj * a1 + 2.0 * g_lap * a2 * jz;
            }
            out[i] = g[i] * a1 + a2 * cross + g_lap * (a2 * z[lap_col] + a3 * sq);
            out[lap_col] = g_lap * a1;
        }
    }
    g_pre
}

/// Values, input gradients and input Laplacians for a batch of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    pub inputs: Array2<f64>,
    pub value: Array1<f64>,
    pub grad: Array2<f64>,
    pub laplacian: Array1<f64>,
    /// Rows whose outputs contain NaN or infinity.
    pub nonfinite_rows: Vec<usize>,
}

impl EvalBatch {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn from_tapes(inputs: Array2<f64>, tapes: &[Tape]) -> Self {
        let (n_total, d) = inputs.dim();
        let mut value = Array1::zeros(n_total);
        let mut grad = Array2::zeros((n_total, d));
        let mut laplacian = Array1::zeros(n_total);
        let mut row = 0;
        for tape in tapes {
            for i in 0..tape.n {
                value[row] = tape.value(i);
                grad.row_mut(row).assign(&tape.grad(i));
                laplacian[row] = tape.laplacian(i);
                row += 1;
            }
        }
        let nonfinite_rows = (0..n_total)
            .filter(|&i| {
                !(value[i].is_finite()
                    && laplacian[i].is_finite()
                    && grad.row(i).iter().all(|g| g.is_finite()))
            })
            .collect();
        EvalBatch {
            inputs,
            value,
            grad,
            laplacian,
            nonfinite_rows,
        }
    }
}

/// dLoss/d(value, grad, laplacian) per row.
#[derive(Clone, Debug)]
pub struct LossAdjoint {
    pub loss: f64,
    pub d_value: Array1<f64>,
    /// `None` when the loss does not depend on the gradient.
    pub d_grad: Option<Array2<f64>>,
    pub d_laplacian: Array1<f64>,
}

impl LossAdjoint {
    pub fn zeros(n: usize) -> Self {
        LossAdjoint {
            loss: 0.0,
            d_value: Array1::zeros(n),
            d_grad: None,
            d_laplacian: Array1::zeros(n),
        }
    }
}

/// Splits `[N x d]` rows into fixed-size chunks.
pub(crate) fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n))
        .collect()
}

/// Runs `forward_jet` on every chunk, building seeds with `seed`.
pub(crate) fn forward_chunks<F>(params: &MlpParams, n: usize, seed: F) -> Result<Vec<Tape>>
where
    F: Fn(std::ops::Range<usize>) -> Result<Jet> + Sync,
{
    chunk_ranges(n)
        .into_par_iter()
        .map(|range| params.forward_jet(seed(range)?))
        .collect()
}

/// Backward over every chunk and sums the per-chunk gradients in chunk order.
/// `adjoint_row(c, tape)` returns the output adjoint row for chunk `c`.
pub(crate) fn backward_chunks<F>(
    params: &MlpParams,
    tapes: &[Tape],
    adjoint_row: F,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &Tape) -> Array1<f64> + Sync,
{
    let partials: Vec<Vec<f64>> = tapes
        .par_iter()
        .enumerate()
        .map(|(c, tape)| params.backward_jet(tape, adjoint_row(c, tape).view()))
        .collect();
    let mut total = vec![0.0; params.n_params()];
    for partial in partials {
        for (t, p) in total.iter_mut().zip(partial) {
            *t += p;
        }
    }
    if let Some(bad) = total.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "parameter gradient",
            layer: params.layer_of_param(bad),
        });
    }
    Ok(total)
}

/// Builds the output-jet adjoint row for rows `offset..offset+tape.n`.
pub(crate) fn adjoint_row(tape: &Tape, offset: usize, adj: &LossAdjoint) -> Array1<f64> {
    let (n, d) = (tape.n, tape.d);
    let mut row = Array1::zeros(n * (2 + d));
    for i in 0..n {
        row[i] = adj.d_value[offset + i];
        row[n + n * d + i] = adj.d_laplacian[offset + i];
        if let Some(dg) = &adj.d_grad {
            for j in 0..d {
                row[n + i * d + j] = dg[[offset + i, j]];
            }
        }
    }
    row
}

/// Value, input gradient and input Laplacian of the MLP at every row of
/// `inputs` (`[N x d]`).
pub fn eval_with_derivatives(params: &MlpParams, inputs: ArrayView2<f64>) -> Result<EvalBatch> {
    let (n, d) = inputs.dim();
    if n == 0 {
        return Err(Error::Shape("empty input batch".into()));
    }
    if d != params.input_dim() {
        return Err(Error::Shape(format!(
            "inputs have {d} columns, network expects {}",
            params.input_dim()
        )));
    }
    let tapes = forward_chunks(params, n, |r| Ok(Jet::identity(inputs.slice(s![r, ..]))))?;
    Ok(EvalBatch::from_tapes(inputs.to_owned(), &tapes))
}

/// Gradient of a scalar loss of `(value, grad, laplacian)` over a fixed
/// input batch with respect to every network parameter. The inputs are
/// treated as constants.
///
/// Returns `(loss, flat gradient)` in the layout of [`MlpParams::to_flat`].
pub fn loss_param_gradient<L>(
    params: &MlpParams,
    inputs: ArrayView2<f64>,
    loss: L,
) -> Result<(f64, Vec<f64>)>
where
    L: FnOnce(&EvalBatch) -> Result<LossAdjoint>,
{
    let (n, d) = inputs.dim();
    if n == 0 {
        return Err(Error::Shape("empty input batch".into()));
    }
    if d != params.input_dim() {
        return Err(Error::Shape(format!(
            "inputs have {d} columns, network expects {}",
            params.input_dim()
        )));
    }
    let ranges = chunk_ranges(n);
    let tapes = forward_chunks(params, n, |r| Ok(Jet::identity(inputs.slice(s![r, ..]))))?;
    let batch = EvalBatch::from_tapes(inputs.to_owned(), &tapes);
    let adj = loss(&batch)?;
    if adj.d_value.len() != n || adj.d_laplacian.len() != n {
        return Err(Error::Shape("loss adjoint length differs from batch".into()));
    }
    let grad = backward_chunks(params, &tapes, |c, tape| {
        adjoint_row(tape, ranges[c].start, &adj)
    })?;
    Ok((adj.loss, grad))
}
