//! Run configuration: a JSON document with per-system ansatz presets.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{BoundaryFactor, Envelope, InputFeatures, WavefunctionModel};
use crate::autodiff::ActivationKind;
use crate::error::{Error, Result};
use crate::hamiltonians::HamiltonianSpec;
use crate::optim::{AdamWConfig, LrSchedule};
use crate::sampler::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: HamiltonianSpec,
    /// Excitation index used for the reference lookup and labelling.
    #[serde(default)]
    pub state: usize,
    #[serde(default)]
    pub ansatz: AnsatzConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Reference in the reported observable; falls back to the system's
    /// known value for `state` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_energy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnsatzConfig {
    pub layers: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Envelope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryFactor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<InputFeatures>,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig {
            layers: 6,
            width: 128,
            activation: None,
            envelope: None,
            boundary: None,
            features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_walkers: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub sweeps_per_step: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_walkers: 8000,
            seed: 0,
            burn_in: 500,
            sweeps_per_step: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    Variance {
        /// Adds the sampling-measure term of the variance gradient.
        #[serde(default)]
        score_function: bool,
        /// Weight of the mean energy added to the loss. With
        /// `energy_warmup_steps > 0` it falls linearly to zero over that many
        /// steps, after which the objective is the variance alone; with 0 it
        /// stays constant.
        #[serde(default, skip_serializing_if = "is_zero")]
        energy_weight: f64,
        #[serde(default, skip_serializing_if = "is_zero_usize")]
        energy_warmup_steps: usize,
    },
    Residual {
        /// Starting eigenvalue; the first batch mean when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_energy: Option<f64>,
        #[serde(default = "one")]
        lambda_orth: f64,
        #[serde(default = "one")]
        lambda_norm: f64,
        #[serde(default = "one")]
        c0: f64,
        /// Overlap gradient taken as a |ψ|² expectation; `false` gives the
        /// fixed-sample derivative of the batch loss.
        #[serde(default = "yes")]
        population_overlap: bool,
        /// Checkpoints of the frozen lower states.
        #[serde(default)]
        ortho: Vec<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_zero_usize(x: &usize) -> bool {
    *x == 0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Variance {
            score_function: false,
            energy_weight: 0.0,
            energy_warmup_steps: 0,
        }
    }
}

impl LossConfig {
    pub fn is_residual(&self) -> bool {
        matches!(self, LossConfig::Residual { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub loss: LossConfig,
    pub max_steps: usize,
    pub lr: LrSchedule,
    pub adamw: AdamWConfig,
    pub plateau_steps: usize,
    pub plateau_tolerance: f64,
    /// An update whose σ² exceeds this multiple of the recent median is
    /// undone and retried at half the learning rate; 0 disables.
    pub spike_factor: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            loss: LossConfig::default(),
            max_steps: 8000,
            lr: LrSchedule::default(),
            adamw: AdamWConfig::default(),
            plateau_steps: 2000,
            plateau_tolerance: 0.01,
            spike_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    pub threshold: f64,
    pub window: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            threshold: 1e-3,
            window: 200,
        }
    }
}

impl RunConfig {
    pub fn new(system: HamiltonianSpec) -> Self {
        RunConfig {
            system,
            state: 0,
            ansatz: AnsatzConfig::default(),
            sampler: SamplerConfig::default(),
            trainer: TrainerConfig::default(),
            monitor: MonitorConfig::default(),
            output_dir: None,
            reference_energy: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Fills every preset-dependent field so the echo is self-contained.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let residual = self.trainer.loss.is_residual();
        let a = &mut out.ansatz;
        a.activation.get_or_insert(if residual {
            ActivationKind::Tanh
        } else {
            ActivationKind::Gaussian
        });
        a.envelope.get_or_insert_with(|| default_envelope(&self.system));
        a.boundary.get_or_insert_with(|| default_boundary(&self.system));
        a.features.get_or_insert_with(|| default_features(&self.system));
        if out.reference_energy.is_none() {
            out.reference_energy = self.system.reference_energy(self.state);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sampler.n_walkers < 2 {
            return bad(format!(
                "sampler.n_walkers must be at least 2, got {}",
                self.sampler.n_walkers
            ));
        }
        if self.ansatz.width == 0 {
            return bad("ansatz.width must be positive".into());
        }
        if !(self.trainer.lr.base.is_finite() && self.trainer.lr.base > 0.0) {
            return bad(format!("trainer.lr.base must be positive, got {}", self.trainer.lr.base));
        }
        if !(self.trainer.lr.decay_steps > 0.0) {
            return bad("trainer.lr.decay_steps must be positive".into());
        }
        if !(self.trainer.spike_factor >= 0.0 && self.trainer.spike_factor.is_finite()) {
            return bad(format!(
                "trainer.spike_factor must be non-negative, got {}",
                self.trainer.spike_factor
            ));
        }
        if !(self.monitor.threshold > 0.0) {
            return bad(format!(
                "monitor.threshold must be positive, got {}",
                self.monitor.threshold
            ));
        }
        if self.monitor.window == 0 {
            return bad("monitor.window must be positive".into());
        }
        if let LossConfig::Variance { energy_weight, .. } = &self.trainer.loss {
            if !(*energy_weight >= 0.0 && energy_weight.is_finite()) {
                return bad(format!(
                    "trainer.loss.energy_weight must be non-negative, got {energy_weight}"
                ));
            }
        }
        if let LossConfig::Residual {
            lambda_orth,
            lambda_norm,
            c0,
            initial_energy,
            ..
        } = &self.trainer.loss
        {
            if !(*lambda_orth >= 0.0 && *lambda_norm >= 0.0) {
                return bad("trainer.loss lambdas must be non-negative".into());
            }
            if !(*c0 > 0.0) {
                return bad("trainer.loss.c0 must be positive".into());
            }
            if initial_energy.is_some_and(|e| !e.is_finite()) {
                return bad("trainer.loss.initial_energy must be finite".into());
            }
        }
        if let Some(Envelope::Gaussian { widths }) = &self.ansatz.envelope {
            if widths.len() != 1 && widths.len() != self.system.dim() {
                return bad(format!(
                    "ansatz.envelope has {} widths for a {}-dimensional system",
                    widths.len(),
                    self.system.dim()
                ));
            }
        }
        if let Some(BoundaryFactor::RadialOrigin { .. }) = self.ansatz.boundary {
            if self.system.dim() != 1 {
                return bad("ansatz.boundary radial_origin needs a 1-D system".into());
            }
        }
        Ok(())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        vec![self.ansatz.width; self.ansatz.layers]
    }

    /// Fresh model for this config; initialisation draws from its own
    /// stream of the run seed.
    pub fn build_model(&self) -> Result<WavefunctionModel> {
        let r = self.resolved();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.sampler.seed, u64::MAX - 1));
        let model = WavefunctionModel::init(
            self.system.dim(),
            &r.hidden_widths(),
            r.ansatz.activation.expect("resolved"),
            r.ansatz.envelope.expect("resolved"),
            r.ansatz.boundary.expect("resolved"),
            r.ansatz.features.expect("resolved"),
            &mut rng,
        )?;
        Ok(model.with_system(self.system.tag(), self.system.units()))
    }
}

/// Envelope widths a little wider than the physical length scale so that
/// the network, not the envelope, decides the shape.
pub fn default_envelope(system: &HamiltonianSpec) -> Envelope {
    let widths = match *system {
        HamiltonianSpec::HarmonicOscillator2D { mass, omega } => vec![1.0 / (mass * omega).sqrt()],
        HamiltonianSpec::Hydrogen3D {} | HamiltonianSpec::HydrogenMagnetic { .. } => vec![2.0],
        HamiltonianSpec::CharmoniumRadial { .. } => vec![3.0],
        // The quartic length scale keeps walkers out of the steep tails;
        // at wide separation the envelope must still reach both minima or
        // the barrier top is the only well-sampled region.
        HamiltonianSpec::DoubleWell2D {
            alpha,
            mass,
            omega_y,
            separation,
        } => vec![
            (0.7 * (mass * alpha).powf(-1.0 / 6.0)).max(0.5 * separation),
            1.0 / (mass * omega_y).sqrt(),
        ],
        HamiltonianSpec::QuantumDot3Body {
            mass,
            omega_x,
            omega_y,
            omega_z,
        } => {
            let w = |o: f64| 1.5 / (mass * o).sqrt();
            (0..3).flat_map(|_| [w(omega_x), w(omega_y), w(omega_z)]).collect()
        }
    };
    Envelope::Gaussian { widths }
}

pub fn default_boundary(system: &HamiltonianSpec) -> BoundaryFactor {
    match *system {
        HamiltonianSpec::CharmoniumRadial { l, .. } => BoundaryFactor::RadialOrigin { power: l + 1 },
        _ => BoundaryFactor::None,
    }
}

pub fn default_features(system: &HamiltonianSpec) -> InputFeatures {
    match system {
        HamiltonianSpec::Hydrogen3D {} | HamiltonianSpec::HydrogenMagnetic { .. } => {
            InputFeatures::CartesianRadius
        }
        HamiltonianSpec::QuantumDot3Body { .. } => InputFeatures::PairDistances {
            particles: 3,
            dim: 3,
        },
        _ => InputFeatures::Cartesian,
    }
}
