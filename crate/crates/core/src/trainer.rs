//! Optimisation loop: sample, evaluate the loss, AdamW update, monitor σ².

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ansatz::WavefunctionModel;
use crate::autodiff::{EvalBatch, LossAdjoint};
use crate::config::{LossConfig, RunConfig};
use crate::error::{Error, Result};
use crate::estimators::{median, summarize, ConvergenceMonitor, LocalEnergyBatch, MonitorState};
use crate::hamiltonians::{local_energies, HamiltonianSpec, LocalEnergies};
use crate::optim::AdamW;
use crate::sampler::WalkerEnsemble;

/// Steps of history behind the variance-spike guard.
const SPIKE_HISTORY: usize = 50;
/// Learning-rate halvings tried on one step before a spike is accepted.
const MAX_SPIKE_RETRIES: usize = 4;

pub const METRICS_HEADER: &str = "step,energy,variance,se_mean,se_variance,acceptance,lr,excluded";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub energy: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub acceptance: f64,
    pub lr: f64,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Mean step energy over the final window (raw eigenvalue).
    pub energy: f64,
    /// `energy` mapped to the reported observable.
    pub observable: f64,
    /// Median σ² over the final window.
    pub variance: f64,
    pub last_variance: f64,
    pub reference: Option<f64>,
    pub relative_error: Option<f64>,
    pub state: MonitorState,
    pub converged: bool,
    pub steps: usize,
    pub excluded_total: usize,
    /// Updates undone by the variance-spike guard.
    pub rejected_steps: usize,
    /// Trained eigenvalue parameter of the residual loss.
    pub residual_energy: Option<f64>,
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
    pub summary: RunSummary,
    /// Fully resolved configuration of the run.
    pub config: RunConfig,
    pub model: WavefunctionModel,
    pub checkpoint: Option<PathBuf>,
}

/// Loss value, flat parameter gradient and the statistics of the rows.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// `∂L/∂E` for the residual loss, 0 otherwise.
    pub grad_energy: f64,
    pub stats: LocalEnergyBatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualWeights {
    pub lambda_orth: f64,
    pub lambda_norm: f64,
    pub c0: f64,
    /// Differentiate the overlap as a |ψ|²-expectation rather than at fixed
    /// samples. See [`residual_adjoint`].
    pub population_overlap: bool,
}

impl Default for ResidualWeights {
    fn default() -> Self {
        ResidualWeights {
            lambda_orth: 1.0,
            lambda_norm: 1.0,
            c0: 1.0,
            population_overlap: true,
        }
    }
}

/// Adjoint of the unbiased variance of `E_L = -k ∇²ψ/ψ + V` with respect
/// to (ψ, ∇²ψ), samples fixed. The optional score term adds the
/// derivative of the sampling density `|ψ|²`.
///
/// A positive `energy_weight` adds `w Ē` to the loss with the usual
/// Monte Carlo energy gradient `2 w mean((E_L - Ē) ∂ ln ψ)`, which is not
/// the fixed-sample derivative of `Ē`.
pub fn variance_adjoint(
    spec: &HamiltonianSpec,
    psi: &EvalBatch,
    score_function: bool,
    energy_weight: f64,
) -> Result<(LossAdjoint, LocalEnergyBatch)> {
    let el = local_energies(spec, psi)?;
    let stats = summarize(&el.usable(), el.excluded_count())?;
    let k = spec.kinetic_prefactor();
    let n = stats.n as f64;
    let mut adj = LossAdjoint::zeros(psi.len());
    adj.loss = stats.variance + energy_weight * stats.mean;
    for i in usable_rows(&el) {
        let p = psi.value[i];
        let dev = el.values[i] - stats.mean;
        let de = 2.0 * dev / (n - 1.0);
        adj.d_laplacian[i] = -de * k / p;
        adj.d_value[i] = de * k * psi.laplacian[i] / (p * p);
        if score_function {
            adj.d_value[i] += 2.0 * (dev * dev - stats.variance) / (n * p);
        }
        if energy_weight > 0.0 {
            adj.d_value[i] += 2.0 * energy_weight * dev / (n * p);
        }
    }
    Ok((adj, stats))
}

fn usable_rows(el: &LocalEnergies) -> impl Iterator<Item = usize> + '_ {
    el.excluded.iter().enumerate().filter(|(_, &e)| !e).map(|(i, _)| i)
}

pub fn variance_loss(
    spec: &HamiltonianSpec,
    model: &WavefunctionModel,
    inputs: ArrayView2<f64>,
    score_function: bool,
    energy_weight: f64,
) -> Result<LossEval> {
    let mut stats = None;
    let (loss, grad, _) = model.param_gradient(inputs, |psi| {
        let (adj, s) = variance_adjoint(spec, psi, score_function, energy_weight)?;
        stats = Some(s);
        Ok(adj)
    })?;
    check_finite(loss)?;
    Ok(LossEval {
        loss,
        grad,
        grad_energy: 0.0,
        stats: stats.expect("closure ran"),
    })
}

/// Parts of the residual loss at one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualParts {
    /// `mean (E_L - E)²`, the `|ψ|²`-sampled estimate of
    /// `‖(H - E)ψ‖² / ‖ψ‖²`.
    pub residual: f64,
    /// `Σ_j S_j²`, squared normalised overlaps with the frozen states.
    pub overlap: f64,
    /// `(mean ψ² - c0)²`.
    pub norm: f64,
}

/// Adjoint of
/// `mean (E_L-E)² + λ_orth Σ_j S_j² + λ_norm (mean ψ² - c0)²`
/// over the usable rows, with `S_j² = (Σ r)² / (n Σ r²)` and
/// `r = ψ_j/ψ`. Under `|ψ|²` sampling `S_j²` estimates the squared overlap
/// of the normalised states. Returns the adjoint, `∂L/∂E` and the parts.
///
/// The fixed-sample derivative of `S_j²` contains `mean(r² ∂lnψ)`, which
/// scales like `ψ⁻³` at nodes of ψ where ψ_j is finite; descending it
/// carves nodes instead of removing overlap. With `population_overlap`
/// the overlap adjoint is instead that of the expectation under `|ψ|²`,
/// `(2A/B) mean((r - A) ∂lnψ)` with `A = mean r`, `B = mean r²`, in which
/// the `r²` derivative cancels.
pub fn residual_adjoint(
    spec: &HamiltonianSpec,
    psi: &EvalBatch,
    energy: f64,
    ortho: &[Array1<f64>],
    w: ResidualWeights,
) -> Result<(LossAdjoint, f64, ResidualParts, LocalEnergyBatch)> {
    let el = local_energies(spec, psi)?;
    let stats = summarize(&el.usable(), el.excluded_count())?;
    let rows: Vec<usize> = usable_rows(&el).collect();
    let n = rows.len() as f64;
    let k = spec.kinetic_prefactor();
    let mut adj = LossAdjoint::zeros(psi.len());

    let mut sum_res2 = 0.0;
    let mut sum_psi2 = 0.0;
    for &i in &rows {
        let d = el.values[i] - energy;
        sum_res2 += d * d;
        sum_psi2 += psi.value[i] * psi.value[i];
    }
    let residual = sum_res2 / n;
    let mean_psi2 = sum_psi2 / n;
    let norm_dev = mean_psi2 - w.c0;
    let mut d_energy = 0.0;
    for &i in &rows {
        let p = psi.value[i];
        let g = 2.0 * (el.values[i] - energy) / n;
        adj.d_value[i] = g * k * psi.laplacian[i] / (p * p) + w.lambda_norm * 4.0 * norm_dev * p / n;
        adj.d_laplacian[i] = -g * k / p;
        d_energy -= g;
    }

    let mut overlap = 0.0;
    for phi in ortho {
        if phi.len() != psi.len() {
            return Err(Error::Shape("frozen state batch length differs".into()));
        }
        let (mut s1, mut s2) = (0.0, 0.0);
        for &i in &rows {
            let r = phi[i] / psi.value[i];
            s1 += r;
            s2 += r * r;
        }
        if !(s2 > 0.0) {
            continue;
        }
        overlap += s1 * s1 / (n * s2);
        let (a, b) = (s1 / n, s2 / n);
        for &i in &rows {
            let p = psi.value[i];
            let r = phi[i] / p;
            adj.d_value[i] += w.lambda_orth
                * if w.population_overlap {
                    2.0 * a / b * (r - a) / (n * p)
                } else {
                    let ds_dr = 2.0 * s1 / (n * s2) - 2.0 * s1 * s1 * r / (n * s2 * s2);
                    ds_dr * (-r / p)
                };
        }
    }

    adj.loss = residual + w.lambda_orth * overlap + w.lambda_norm * norm_dev * norm_dev;
    let parts = ResidualParts {
        residual,
        overlap,
        norm: norm_dev * norm_dev,
    };
    Ok((adj, d_energy, parts, stats))
}

pub fn residual_loss(
    spec: &HamiltonianSpec,
    model: &WavefunctionModel,
    inputs: ArrayView2<f64>,
    energy: f64,
    ortho: &[WavefunctionModel],
    w: ResidualWeights,
) -> Result<(LossEval, ResidualParts)> {
    let phis = ortho
        .iter()
        .map(|m| m.psi_values(inputs))
        .collect::<Result<Vec<_>>>()?;
    let mut extra = None;
    let (loss, grad, _) = model.param_gradient(inputs, |psi| {
        let (adj, de, parts, stats) = residual_adjoint(spec, psi, energy, &phis, w)?;
        extra = Some((de, parts, stats));
        Ok(adj)
    })?;
    check_finite(loss)?;
    let (grad_energy, parts, stats) = extra.expect("closure ran");
    Ok((
        LossEval {
            loss,
            grad,
            grad_energy,
            stats,
        },
        parts,
    ))
}

fn check_finite(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite loss {loss}")))
    }
}

/// Loss state carried across steps.
enum Objective {
    Variance {
        score_function: bool,
        energy_weight: f64,
        warmup_steps: usize,
    },
    Residual {
        energy: Option<f64>,
        ortho: Vec<WavefunctionModel>,
        weights: ResidualWeights,
    },
}

impl Objective {
    fn evaluate(
        &mut self,
        spec: &HamiltonianSpec,
        model: &WavefunctionModel,
        inputs: ArrayView2<f64>,
        step: usize,
    ) -> Result<LossEval> {
        match self {
            Objective::Variance {
                score_function,
                energy_weight,
                warmup_steps,
            } => {
                let w = if *warmup_steps == 0 {
                    *energy_weight
                } else if step < *warmup_steps {
                    *energy_weight * (1.0 - step as f64 / *warmup_steps as f64)
                } else {
                    0.0
                };
                variance_loss(spec, model, inputs, *score_function, w)
            }
            Objective::Residual {
                energy,
                ortho,
                weights,
            } => {
                let e = match *energy {
                    Some(e) => e,
                    None => {
                        let el = crate::hamiltonians::local_energy_batch(spec, model, inputs)?;
                        let e = summarize(&el.usable(), el.excluded_count())?.mean;
                        *energy = Some(e);
                        e
                    }
                };
                Ok(residual_loss(spec, model, inputs, e, ortho, *weights)?.0)
            }
        }
    }

    fn energy(&self) -> Option<f64> {
        match self {
            Objective::Variance { .. } => None,
            Objective::Residual { energy, .. } => *energy,
        }
    }

    fn set_energy(&mut self, value: f64) {
        if let Objective::Residual { energy, .. } = self {
            *energy = Some(value);
        }
    }
}

/// Loads the frozen states named by a residual-loss config.
pub fn load_ortho_models(config: &RunConfig) -> Result<Vec<WavefunctionModel>> {
    match &config.trainer.loss {
        LossConfig::Residual { ortho, .. } => ortho
            .iter()
            .map(|path| {
                let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
                WavefunctionModel::from_checkpoint(&text)
            })
            .collect(),
        LossConfig::Variance { .. } => Ok(Vec::new()),
    }
}

/// Trains from a config, loading frozen states from disk and writing the
/// run artifacts when `output_dir` is set.
pub fn train(config: &RunConfig) -> Result<RunRecord> {
    let ortho = load_ortho_models(config)?;
    train_with(config, ortho, |_| {})
}

/// Trains with explicit frozen states; `progress` sees every row.
pub fn train_with<F>(
    config: &RunConfig,
    ortho: Vec<WavefunctionModel>,
    mut progress: F,
) -> Result<RunRecord>
where
    F: FnMut(&MetricRow),
{
    let started = Instant::now();
    config.validate()?;
    let config = config.resolved();
    let spec = &config.system.clone();
    let mut model = config.build_model()?;
    for m in &ortho {
        if m.input_dim != spec.dim() {
            return Err(Error::Config(format!(
                "frozen state has {} inputs, system needs {}",
                m.input_dim,
                spec.dim()
            )));
        }
    }
    let mut objective = match &config.trainer.loss {
        LossConfig::Variance {
            score_function,
            energy_weight,
            energy_warmup_steps,
        } => Objective::Variance {
            score_function: *score_function,
            energy_weight: *energy_weight,
            warmup_steps: *energy_warmup_steps,
        },
        LossConfig::Residual {
            initial_energy,
            lambda_orth,
            lambda_norm,
            c0,
            population_overlap,
            ..
        } => Objective::Residual {
            energy: *initial_energy,
            ortho,
            weights: ResidualWeights {
                lambda_orth: *lambda_orth,
                lambda_norm: *lambda_norm,
                c0: *c0,
                population_overlap: *population_overlap,
            },
        },
    };
    let residual = config.trainer.loss.is_residual();
    let n_model = model.n_params();
    let n_opt = n_model + usize::from(residual);
    let mut mask = vec![true; n_opt];
    if residual {
        mask[n_model] = false;
    }
    let mut opt = AdamW::new(n_opt, config.trainer.adamw).with_decay_mask(mask);
    let schedule = config.trainer.lr;
    let mut monitor = ConvergenceMonitor::new(config.monitor.threshold, config.monitor.window)
        .with_plateau(config.trainer.plateau_steps, config.trainer.plateau_tolerance);

    let mut ensemble = WalkerEnsemble::init(spec, config.sampler.n_walkers, config.sampler.seed)?;
    let burn = ensemble.burn_in(&model, config.sampler.burn_in)?;
    let mut rows = Vec::new();
    let mut lr_scale = 1.0;

    let mut record_row = |rows: &mut Vec<MetricRow>, step: usize, eval: &LossEval, acc: f64, lr| {
        let row = MetricRow {
            step,
            energy: eval.stats.mean,
            variance: eval.stats.variance,
            se_mean: eval.stats.se_mean,
            se_variance: eval.stats.se_variance,
            acceptance: acc,
            lr,
            excluded: eval.stats.excluded,
        };
        progress(&row);
        rows.push(row);
    };

    let mut eval = match objective.evaluate(spec, &model, ensemble.positions().view(), 0) {
        Ok(e) => e,
        Err(e) => {
            return Ok(finish(config, model, rows, &monitor, None, Some(e.to_string()), 0, started));
        }
    };
    let burn_acc = if burn.attempted == 0 {
        ensemble.acceptance_window
    } else {
        burn.acceptance()
    };
    record_row(&mut rows, 0, &eval, burn_acc, schedule.lr(0));
    monitor.update(0, eval.stats.variance);

    let mut failure = None;
    let mut rejected = 0;
    let spike_factor = config.trainer.spike_factor;
    for step in 1..=config.trainer.max_steps {
        if monitor.state() != MonitorState::Running {
            break;
        }
        let snapshot = (model.clone(), opt.clone(), ensemble.clone(), objective.energy());
        let restore = |model: &mut WavefunctionModel,
                       opt: &mut AdamW,
                       ensemble: &mut WalkerEnsemble,
                       objective: &mut Objective| {
            *model = snapshot.0.clone();
            *opt = snapshot.1.clone();
            *ensemble = snapshot.2.clone();
            if let Some(en) = snapshot.3 {
                objective.set_energy(en);
            }
        };
        let spike_limit = spike_limit(&rows, spike_factor);
        let mut retried = false;
        let mut spikes = 0;
        let (next, acc) = loop {
            // Spike retries shrink only this step; failures shrink the rest
            // of the run.
            let lr = lr_scale * 0.5f64.powi(spikes as i32) * schedule.lr(step - 1);
            match try_step(
                spec,
                &mut model,
                &mut opt,
                &mut ensemble,
                &mut objective,
                &eval,
                lr,
                config.sampler.sweeps_per_step,
                step,
            ) {
                Ok((Some(next), _))
                    if spikes < MAX_SPIKE_RETRIES
                        && spike_limit.is_some_and(|limit| next.stats.variance > limit) =>
                {
                    spikes += 1;
                    rejected += 1;
                    restore(&mut model, &mut opt, &mut ensemble, &mut objective);
                }
                Ok(done) => break done,
                Err(_) if !retried => {
                    retried = true;
                    lr_scale *= 0.5;
                    restore(&mut model, &mut opt, &mut ensemble, &mut objective);
                }
                Err(e) => {
                    failure = Some(format!("step {step}: {e} (after halving the learning rate)"));
                    model = snapshot.0.clone();
                    break (None, 0.0);
                }
            }
        };
        let Some(next) = next else { break };
        eval = next;
        record_row(&mut rows, step, &eval, acc, lr_scale * schedule.lr(step));
        monitor.update(step, eval.stats.variance);
    }
    let energy = objective.energy();
    Ok(finish(config, model, rows, &monitor, energy, failure, rejected, started))
}

/// Variance above which a step is undone: `factor` times the median of the
/// last `SPIKE_HISTORY` recorded variances. `None` while the history is
/// short or the guard is disabled (`factor == 0`).
fn spike_limit(rows: &[MetricRow], factor: f64) -> Option<f64> {
    (factor > 0.0 && rows.len() >= SPIKE_HISTORY).then(|| {
        let recent: Vec<f64> = rows[rows.len() - SPIKE_HISTORY..].iter().map(|r| r.variance).collect();
        factor * median(&recent)
    })
}

#[allow(clippy::too_many_arguments)]
fn try_step(
    spec: &HamiltonianSpec,
    model: &mut WavefunctionModel,
    opt: &mut AdamW,
    ensemble: &mut WalkerEnsemble,
    objective: &mut Objective,
    eval: &LossEval,
    lr: f64,
    sweeps: usize,
    step: usize,
) -> Result<(Option<LossEval>, f64)> {
    let mut flat = model.params_flat();
    let mut grad = eval.grad.clone();
    if let Some(e) = objective.energy() {
        flat.push(e);
        grad.push(eval.grad_energy);
    }
    opt.step(&mut flat, &grad, lr);
    if let Some(e) = objective.energy() {
        let new_e = flat.pop().unwrap_or(e);
        if !new_e.is_finite() {
            return Err(Error::Training("non-finite eigenvalue parameter".into()));
        }
        objective.set_energy(new_e);
    }
    model.set_params_flat(&flat)?;
    let stats = ensemble.sweep(model, sweeps)?;
    let next = objective.evaluate(spec, model, ensemble.positions().view(), step)?;
    let acc = if stats.attempted == 0 {
        ensemble.acceptance_window
    } else {
        stats.acceptance()
    };
    Ok((Some(next), acc))
}

fn finish(
    config: RunConfig,
    model: WavefunctionModel,
    rows: Vec<MetricRow>,
    monitor: &ConvergenceMonitor,
    residual_energy: Option<f64>,
    failure: Option<String>,
    rejected_steps: usize,
    started: Instant,
) -> RunRecord {
    let window = config.monitor.window.min(rows.len()).max(1);
    let tail = &rows[rows.len().saturating_sub(window)..];
    let (energy, variance, last_variance) = if tail.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let e = tail.iter().map(|r| r.energy).sum::<f64>() / tail.len() as f64;
        let v: Vec<f64> = tail.iter().map(|r| r.variance).collect();
        (e, median(&v), *v.last().expect("non-empty"))
    };
    let observable = config.system.observable(energy);
    let reference = config.reference_energy;
    let relative_error = reference.map(|r| ((observable - r) / r).abs());
    let state = if failure.is_some() {
        MonitorState::Running
    } else {
        monitor.state()
    };
    let summary = RunSummary {
        energy,
        observable,
        variance,
        last_variance,
        reference,
        relative_error,
        state,
        converged: state == MonitorState::Converged,
        steps: rows.last().map_or(0, |r| r.step),
        excluded_total: rows.iter().map(|r| r.excluded).sum(),
        rejected_steps,
        residual_energy,
        failure,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    RunRecord {
        rows,
        summary,
        config,
        model,
        checkpoint: None,
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step, r.energy, r.variance, r.se_mean, r.se_variance, r.acceptance, r.lr, r.excluded
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config("metrics CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Config(format!("metrics CSV line {}: malformed row", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricRow {
                step: f[0].parse().map_err(|_| bad())?,
                energy: num(f[1])?,
                variance: num(f[2])?,
                se_mean: num(f[3])?,
                se_variance: num(f[4])?,
                acceptance: num(f[5])?,
                lr: num(f[6])?,
                excluded: f[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

impl RunSummary {
    pub fn to_text(&self, system: &str, seed: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system = {system}");
        let _ = writeln!(out, "seed = {seed}");
        let _ = writeln!(out, "energy = {}", self.energy);
        let _ = writeln!(out, "observable = {}", self.observable);
        let _ = writeln!(out, "variance = {}", self.variance);
        let _ = writeln!(out, "last_variance = {}", self.last_variance);
        let _ = writeln!(out, "reference = {}", opt_num(self.reference));
        let _ = writeln!(out, "relative_error = {}", opt_num(self.relative_error));
        let _ = writeln!(out, "state = {}", self.state.name());
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "excluded_total = {}", self.excluded_total);
        let _ = writeln!(out, "rejected_steps = {}", self.rejected_steps);
        let _ = writeln!(out, "residual_energy = {}", opt_num(self.residual_energy));
        let _ = writeln!(
            out,
            "failure = {}",
            self.failure.as_deref().unwrap_or("none").replace('\n', " ")
        );
        let _ = writeln!(out, "wall_time_s = {}", self.wall_time_s);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                Error::Config(format!("summary line {}: expected `key = value`", i + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("summary lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("summary `{k}` is not a number")))
        };
        let opt = |k: &str| -> Result<Option<f64>> {
            let v = get(k)?;
            if v == "none" {
                Ok(None)
            } else {
                v.parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("summary `{k}` is not a number")))
            }
        };
        let state = match get("state")?.as_str() {
            "running" => MonitorState::Running,
            "converged" => MonitorState::Converged,
            "plateaued" => MonitorState::Plateaued,
            other => return Err(Error::Config(format!("summary state `{other}` unknown"))),
        };
        let failure = get("failure")?;
        Ok(RunSummary {
            energy: num("energy")?,
            observable: num("observable")?,
            variance: num("variance")?,
            last_variance: num("last_variance")?,
            reference: opt("reference")?,
            relative_error: opt("relative_error")?,
            state,
            converged: get("converged")? == "true",
            steps: num("steps")? as usize,
            excluded_total: num("excluded_total")? as usize,
            rejected_steps: num("rejected_steps")? as usize,
            residual_energy: opt("residual_energy")?,
            failure: (failure != "none").then_some(failure),
            wall_time_s: num("wall_time_s")?,
        })
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::file(path, e))
}

impl RunRecord {
    /// Writes config echo, metrics, checkpoint and, last, the summary; a
    /// directory with a summary is therefore complete.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        write_file(&dir.join(CONFIG_FILE), &self.config.to_json())?;
        write_file(&dir.join(METRICS_FILE), &metrics_csv(&self.rows))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        write_file(&ckpt, &self.model.to_checkpoint())?;
        self.checkpoint = Some(ckpt);
        write_file(
            &dir.join(SUMMARY_FILE),
            &self
                .summary
                .to_text(self.config.system.tag(), self.config.sampler.seed),
        )
    }

    /// Reads a completed run directory.
    pub fn read(dir: &Path) -> Result<RunRecord> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::file(p, e))
        };
        let summary = RunSummary::from_text(&read(SUMMARY_FILE)?)?;
        let config = RunConfig::from_json(&read(CONFIG_FILE)?)?;
        let rows = parse_metrics_csv(&read(METRICS_FILE)?)?;
        let model = WavefunctionModel::from_checkpoint(&read(CHECKPOINT_FILE)?)?;
        Ok(RunRecord {
            rows,
            summary,
            config,
            model,
            checkpoint: Some(dir.join(CHECKPOINT_FILE)),
        })
    }
}

/// Trains and, if the config names an output directory, persists the run.
pub fn train_and_write(config: &RunConfig) -> Result<RunRecord> {
    let mut record = train(config)?;
    if let Some(dir) = config.output_dir.clone() {
        record.write(&dir)?;
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{BoundaryFactor, Envelope, InputFeatures};
    use crate::autodiff::{ActivationKind, Layer, MlpParams};
    use ndarray::{Array2, Axis, array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ho() -> HamiltonianSpec {
        HamiltonianSpec::HarmonicOscillator2D {
            mass: 1.0,
            omega: 1.0,
        }
    }

    fn tiny_model(seed: u64, act: ActivationKind) -> WavefunctionModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WavefunctionModel::init(
            2,
            &[4, 3],
            act,
            Envelope::Gaussian { widths: vec![1.3] },
            BoundaryFactor::None,
            InputFeatures::Cartesian,
            &mut rng,
        )
        .unwrap()
    }

    fn samples(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng))
    }

    /// Central differences of `f` over every parameter.
    fn fd_grad(model: &WavefunctionModel, f: impl Fn(&WavefunctionModel) -> f64) -> Vec<f64> {
        let base = model.params_flat();
        let h = 1e-5;
        (0..base.len())
            .map(|j| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[j] += h;
                m.set_params_flat(&p).unwrap();
                let up = f(&m);
                p[j] -= 2.0 * h;
                m.set_params_flat(&p).unwrap();
                (up - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= rel * scale.max(y.abs()),
                "component {j}: analytic {x} vs fd {y}"
            );
        }
    }

    #[test]
    fn variance_gradient_matches_finite_differences() {
        let model = tiny_model(3, ActivationKind::Tanh);
        let x = samples(16, 4);
        let eval = variance_loss(&ho(), &model, x.view(), false, 0.0).unwrap();
        let fd = fd_grad(&model, |m| variance_loss(&ho(), m, x.view(), false, 0.0).unwrap().loss);
        assert_close(&eval.grad, &fd, 1e-4);
    }

    #[test]
    fn energy_weight_adds_the_score_form_energy_gradient() {
        // Oracle: 2 mean((E_L - Ē) ∂ ln|ψ|) with ∂ ln|ψ| by central differences.
        let model = tiny_model(21, ActivationKind::Tanh);
        let x = samples(32, 22);
        let w = 0.8;
        let plain = variance_loss(&ho(), &model, x.view(), false, 0.0).unwrap();
        let mixed = variance_loss(&ho(), &model, x.view(), false, w).unwrap();
        assert!((mixed.loss - plain.loss - w * plain.stats.mean).abs() < 1e-12);
        let el = crate::hamiltonians::local_energy_batch(&ho(), &model, x.view()).unwrap();
        assert_eq!(el.excluded_count(), 0);
        let dev: Vec<f64> = el.values.iter().map(|e| e - plain.stats.mean).collect();
        let n = x.nrows() as f64;
        let expected = fd_grad(&model, |m| {
            let ln_psi = m.psi_values(x.view()).unwrap().mapv(|p| p.abs().ln());
            2.0 * w * ln_psi.iter().zip(&dev).map(|(l, d)| l * d).sum::<f64>() / n
        });
        let got: Vec<f64> = mixed.grad.iter().zip(&plain.grad).map(|(a, b)| a - b).collect();
        assert_close(&got, &expected, 1e-4);
    }

    #[test]
    fn spike_limit_needs_history_and_a_positive_factor() {
        let rows: Vec<MetricRow> = (1..=60)
            .map(|s| MetricRow {
                step: s,
                energy: 0.0,
                variance: s as f64,
                se_mean: 0.0,
                se_variance: 0.0,
                acceptance: 0.5,
                lr: 1e-3,
                excluded: 0,
            })
            .collect();
        assert_eq!(spike_limit(&rows[..SPIKE_HISTORY - 1], 10.0), None);
        assert_eq!(spike_limit(&rows, 0.0), None);
        // Median of 11..=60.
        assert_eq!(spike_limit(&rows, 10.0), Some(355.0));
    }

    #[test]
    fn spike_guard_retries_every_step_under_a_tiny_factor() {
        let mut c = small_config();
        c.trainer.max_steps = SPIKE_HISTORY + 5;
        c.monitor.window = 1000;
        c.trainer.spike_factor = 1e-12;
        let rec = train(&c).unwrap();
        assert_eq!(rec.rows.len(), SPIKE_HISTORY + 6);
        // Steps 50..=55 each exhaust their retries and are then accepted.
        assert_eq!(rec.summary.rejected_steps, 6 * MAX_SPIKE_RETRIES);
        c.trainer.spike_factor = 0.0;
        assert_eq!(train(&c).unwrap().summary.rejected_steps, 0);
    }

    #[test]
    fn variance_loss_equals_summarize() {
        let model = tiny_model(5, ActivationKind::Gaussian);
        let x = samples(64, 6);
        let eval = variance_loss(&ho(), &model, x.view(), false, 0.0).unwrap();
        let el = crate::hamiltonians::local_energy_batch(&ho(), &model, x.view()).unwrap();
        let s = summarize(&el.usable(), el.excluded_count()).unwrap();
        assert_eq!(eval.loss, s.variance);
        assert_eq!(eval.stats, s);
    }

    fn exact_ho_ground() -> WavefunctionModel {
        // Zero hidden-to-output weights: the network is the constant 1.
        let mlp = MlpParams::new(
            vec![
                Layer::new(array![[0.3, -0.2], [0.1, 0.4]], array![0.1, -0.1]),
                Layer::new(array![[0.0, 0.0]], array![1.0]),
            ],
            vec![ActivationKind::Gaussian],
        )
        .unwrap();
        WavefunctionModel::new(
            mlp,
            Envelope::Gaussian { widths: vec![1.0] },
            BoundaryFactor::None,
            InputFeatures::Cartesian,
            2,
        )
        .unwrap()
    }

    #[test]
    fn exact_eigenstate_has_zero_variance_and_gradient() {
        let model = exact_ho_ground();
        let x = samples(500, 1);
        for score in [false, true] {
            let eval = variance_loss(&ho(), &model, x.view(), score, 0.0).unwrap();
            assert!(eval.loss < 1e-20, "{}", eval.loss);
            let norm = eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(norm < 1e-6, "{norm}");
        }
    }

    #[test]
    fn residual_vanishes_on_eigenstate() {
        let model = exact_ho_ground();
        let x = samples(200, 2);
        let (eval, parts) =
            residual_loss(&ho(), &model, x.view(), 1.0, &[], ResidualWeights::default()).unwrap();
        assert!(parts.residual < 1e-24, "{}", parts.residual);
        assert!(eval.grad_energy.abs() < 1e-12);
    }

    #[test]
    fn self_overlap_penalty_is_positive() {
        let model = tiny_model(8, ActivationKind::Tanh);
        let x = samples(100, 9);
        let w = ResidualWeights::default();
        let (_, parts) = residual_loss(&ho(), &model, x.view(), 1.0, &[model.clone()], w).unwrap();
        assert!((parts.overlap - 1.0).abs() < 1e-12, "{}", parts.overlap);
    }

    #[test]
    fn population_overlap_gradient_matches_the_expectation() {
        let model = tiny_model(21, ActivationKind::Tanh);
        let other = tiny_model(22, ActivationKind::Gaussian);
        // Oracle: S² from quadrature on a grid, differentiated numerically.
        let axis: Vec<f64> = (0..141).map(|i| -7.0 + 0.1 * i as f64).collect();
        let grid = Array2::from_shape_fn((141 * 141, 2), |(r, c)| axis[if c == 0 { r / 141 } else { r % 141 }]);
        let phi = other.psi_values(grid.view()).unwrap();
        let exact = |m: &WavefunctionModel| {
            let psi = m.psi_values(grid.view()).unwrap();
            psi.dot(&phi).powi(2) / (psi.dot(&psi) * phi.dot(&phi))
        };
        let oracle = fd_grad(&model, exact);

        let mut walkers = crate::sampler::WalkerEnsemble::init(&ho(), 2000, 5).unwrap();
        walkers.burn_in(&model, 200).unwrap();
        let mut x = Array2::zeros((0, 2));
        for _ in 0..200 {
            walkers.sweep(&model, 5).unwrap();
            x.append(Axis(0), walkers.positions().view()).unwrap();
        }
        let grad = |lambda_orth| {
            let w = ResidualWeights {
                lambda_orth,
                lambda_norm: 0.0,
                ..ResidualWeights::default()
            };
            residual_loss(&ho(), &model, x.view(), 1.0, &[other.clone()], w).unwrap().0.grad
        };
        let (with, without) = (grad(1.0), grad(0.0));
        let est: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a - b).collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = est.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) < 0.05 * norm(&oracle), "{est:?} vs {oracle:?}");
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let model = tiny_model(11, ActivationKind::Tanh);
        let other = tiny_model(12, ActivationKind::Gaussian);
        let x = samples(16, 13);
        let w = ResidualWeights {
            lambda_orth: 0.7,
            lambda_norm: 0.3,
            c0: 0.5,
            population_overlap: false,
        };
        let ortho = [other];
        let e = 1.7;
        let loss = |m: &WavefunctionModel, e: f64| {
            residual_loss(&ho(), m, x.view(), e, &ortho, w).unwrap().0.loss
        };
        let (eval, _) = residual_loss(&ho(), &model, x.view(), e, &ortho, w).unwrap();
        let fd = fd_grad(&model, |m| loss(m, e));
        assert_close(&eval.grad, &fd, 1e-4);
        let h = 1e-5;
        let fd_e = (loss(&model, e + h) - loss(&model, e - h)) / (2.0 * h);
        assert!((eval.grad_energy - fd_e).abs() <= 1e-4 * fd_e.abs(), "{} vs {fd_e}", eval.grad_energy);
    }

    fn small_config() -> RunConfig {
        let mut c = RunConfig::new(ho());
        c.ansatz.layers = 1;
        c.ansatz.width = 4;
        c.sampler.n_walkers = 64;
        c.sampler.burn_in = 20;
        c.sampler.sweeps_per_step = 2;
        c.trainer.max_steps = 15;
        c.monitor.window = 5;
        c
    }

    #[test]
    fn zero_steps_gives_only_initial_row() {
        let mut c = small_config();
        c.trainer.max_steps = 0;
        let rec = train(&c).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].step, 0);
        assert!(!rec.summary.converged);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = small_config();
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(metrics_csv(&a.rows), metrics_csv(&b.rows));
        assert_eq!(a.rows.len(), 16);
        assert!(a.rows.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn residual_run_trains_the_eigenvalue() {
        let mut c = small_config();
        c.trainer.loss = LossConfig::Residual {
            initial_energy: Some(3.0),
            lambda_orth: 1.0,
            lambda_norm: 1.0,
            c0: 1.0,
            population_overlap: true,
            ortho: vec![],
        };
        let rec = train(&c).unwrap();
        let e = rec.summary.residual_energy.unwrap();
        assert!(e < 3.0 && e > 2.9, "{e}");
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = train(&small_config()).unwrap();
        rec.write(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(csv.starts_with("step,energy,variance,se_mean,se_variance,acceptance,lr,excluded\n"));
        let back = RunRecord::read(dir.path()).unwrap();
        assert_eq!(back.rows, rec.rows);
        assert_eq!(back.summary, rec.summary);
        assert_eq!(back.config, rec.config);
        assert_eq!(back.model.to_checkpoint(), rec.model.to_checkpoint());
    }
}
