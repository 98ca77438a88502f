//! Benchmark Hamiltonians and local energies `E_L = Hψ/ψ`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ansatz::WavefunctionModel;
use crate::autodiff::EvalBatch;
use crate::error::{Error, Result};

/// Colour factor of the one-gluon exchange term.
pub const CHARM_COLOR_FACTOR: f64 = -4.0 / 3.0;
pub const CHARM_ALPHA_S: f64 = 0.5461;
/// String tension, GeV².
pub const CHARM_STRING_TENSION: f64 = 0.1425;
/// Gaussian smearing of the spin-spin contact term, GeV.
pub const CHARM_SMEARING: f64 = 1.0946;
/// Charm quark mass, GeV.
pub const CHARM_MASS: f64 = 1.4796;
/// Equal-mass two-body reduced mass, GeV.
pub const CHARM_REDUCED_MASS: f64 = CHARM_MASS / 2.0;

/// Rows with `|ψ|` below this fraction of the batch maximum are treated as
/// node-proximal and excluded from statistics.
pub const NODE_GUARD: f64 = 1e-12;

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_r_max() -> f64 {
    15.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// `-∇²/(2m) + m ω² r²/2` in two dimensions.
    #[serde(rename = "ho2d")]
    HarmonicOscillator2D {
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "one")]
        omega: f64,
    },
    /// `-∇²/2 - 1/r`.
    #[serde(rename = "hydrogen")]
    Hydrogen3D {},
    /// Reduced radial equation for `u(r) = r R(r)` with the Cornell plus
    /// smeared spin-spin potential, natural units (GeV).
    #[serde(rename = "charmonium")]
    CharmoniumRadial {
        l: u32,
        s: u32,
        #[serde(default = "default_r_max")]
        r_max: f64,
    },
    /// `-∇²/(2m) + α (x² - (d/2)²)² + m ω_y² y² / 2`.
    #[serde(rename = "double_well")]
    DoubleWell2D {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "two")]
        omega_y: f64,
        separation: f64,
    },
    /// Hydrogen with the diamagnetic term `B² (x² + y²) / 8`.
    #[serde(rename = "hydrogen_magnetic")]
    HydrogenMagnetic { field: f64 },
    /// Three unit charges in an anisotropic harmonic trap; coordinates are
    /// `(x1, y1, z1, x2, ..., z3)`.
    #[serde(rename = "quantum_dot")]
    QuantumDot3Body {
        #[serde(default = "one")]
        mass: f64,
        omega_x: f64,
        omega_y: f64,
        omega_z: f64,
    },
}

/// `s_i · s_j = s(s+1)/2 - 3/4` for total quark spin `s`.
pub fn spin_factor(s: u32) -> f64 {
    let s = s as f64;
    s * (s + 1.0) / 2.0 - 0.75
}

/// Meson mass from the radial eigenvalue: `M = 2 m_c + E_r`.
pub fn charmonium_mass(radial_energy: f64) -> f64 {
    2.0 * CHARM_MASS + radial_energy
}

/// Cornell plus contact potential (without the centrifugal term), GeV.
pub fn cornell_potential(r: f64, s: u32) -> f64 {
    let contact = 32.0 * std::f64::consts::PI * CHARM_ALPHA_S / (9.0 * CHARM_MASS * CHARM_MASS)
        * (CHARM_SMEARING / std::f64::consts::PI.sqrt()).powi(3)
        * (-CHARM_SMEARING * CHARM_SMEARING * r * r).exp();
    CHARM_COLOR_FACTOR * CHARM_ALPHA_S / r + CHARM_STRING_TENSION * r + spin_factor(s) * contact
}

impl HamiltonianSpec {
    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSpec::HarmonicOscillator2D { .. } => 2,
            HamiltonianSpec::Hydrogen3D {} => 3,
            HamiltonianSpec::CharmoniumRadial { .. } => 1,
            HamiltonianSpec::DoubleWell2D { .. } => 2,
            HamiltonianSpec::HydrogenMagnetic { .. } => 3,
            HamiltonianSpec::QuantumDot3Body { .. } => 9,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            HamiltonianSpec::HarmonicOscillator2D { .. } => "ho2d",
            HamiltonianSpec::Hydrogen3D {} => "hydrogen",
            HamiltonianSpec::CharmoniumRadial { .. } => "charmonium",
            HamiltonianSpec::DoubleWell2D { .. } => "double_well",
            HamiltonianSpec::HydrogenMagnetic { .. } => "hydrogen_magnetic",
            HamiltonianSpec::QuantumDot3Body { .. } => "quantum_dot",
        }
    }

    pub fn units(&self) -> &'static str {
        match self {
            HamiltonianSpec::CharmoniumRadial { .. } => "natural_gev",
            _ => "atomic",
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self, HamiltonianSpec::CharmoniumRadial { .. })
    }

    /// Coefficient `c` of the kinetic term `-c ∇²`.
    pub fn kinetic_prefactor(&self) -> f64 {
        match self {
            HamiltonianSpec::HarmonicOscillator2D { mass, .. }
            | HamiltonianSpec::DoubleWell2D { mass, .. }
            | HamiltonianSpec::QuantumDot3Body { mass, .. } => 0.5 / mass,
            HamiltonianSpec::Hydrogen3D {} | HamiltonianSpec::HydrogenMagnetic { .. } => 0.5,
            HamiltonianSpec::CharmoniumRadial { .. } => 0.5 / CHARM_REDUCED_MASS,
        }
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be non-negative, got {v}")))
            }
        };
        match *self {
            HamiltonianSpec::HarmonicOscillator2D { mass, omega } => {
                positive("mass", mass)?;
                positive("omega", omega)
            }
            HamiltonianSpec::Hydrogen3D {} => Ok(()),
            HamiltonianSpec::CharmoniumRadial { s, r_max, .. } => {
                if s > 1 {
                    return Err(Error::Config(format!("spin s must be 0 or 1, got {s}")));
                }
                positive("r_max", r_max)
            }
            HamiltonianSpec::DoubleWell2D {
                alpha,
                mass,
                omega_y,
                separation,
            } => {
                positive("alpha", alpha)?;
                positive("mass", mass)?;
                positive("omega_y", omega_y)?;
                non_negative("separation", separation)
            }
            HamiltonianSpec::HydrogenMagnetic { field } => non_negative("field", field),
            HamiltonianSpec::QuantumDot3Body {
                mass,
                omega_x,
                omega_y,
                omega_z,
            } => {
                positive("mass", mass)?;
                positive("omega_x", omega_x)?;
                positive("omega_y", omega_y)?;
                positive("omega_z", omega_z)
            }
        }
    }

    pub fn domain(&self) -> Domain {
        match *self {
            HamiltonianSpec::CharmoniumRadial { r_max, .. } => Domain::RadialInterval { r_max },
            HamiltonianSpec::Hydrogen3D {} | HamiltonianSpec::HydrogenMagnetic { .. } => {
                Domain::PuncturedSpace
            }
            HamiltonianSpec::QuantumDot3Body { .. } => Domain::DistinctParticles {
                particles: 3,
                dim: 3,
            },
            _ => Domain::Unbounded,
        }
    }

    /// Whether a configuration lies in the domain of the Hamiltonian.
    pub fn in_domain(&self, x: ArrayView1<f64>) -> bool {
        self.domain().contains(x)
    }

    /// `V(x)`; for the radial problem the centrifugal barrier is included.
    pub fn potential(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "{} configuration has {} coordinates, expected {}",
                self.tag(),
                x.len(),
                self.dim()
            )));
        }
        if !self.in_domain(x) {
            return Err(Error::Domain(format!(
                "configuration {x} outside the {} domain",
                self.tag()
            )));
        }
        Ok(match *self {
            HamiltonianSpec::HarmonicOscillator2D { mass, omega } => {
                0.5 * mass * omega * omega * x.dot(&x)
            }
            HamiltonianSpec::Hydrogen3D {} => -1.0 / x.dot(&x).sqrt(),
            HamiltonianSpec::CharmoniumRadial { l, s, .. } => {
                let r = x[0];
                let l = l as f64;
                cornell_potential(r, s) + l * (l + 1.0) / (2.0 * CHARM_REDUCED_MASS * r * r)
            }
            HamiltonianSpec::DoubleWell2D {
                alpha,
                mass,
                omega_y,
                separation,
            } => {
                let half = separation / 2.0;
                let q = x[0] * x[0] - half * half;
                alpha * q * q + 0.5 * mass * omega_y * omega_y * x[1] * x[1]
            }
            HamiltonianSpec::HydrogenMagnetic { field } => {
                -1.0 / x.dot(&x).sqrt() + field * field / 8.0 * (x[0] * x[0] + x[1] * x[1])
            }
            HamiltonianSpec::QuantumDot3Body {
                mass,
                omega_x,
                omega_y,
                omega_z,
            } => {
                let mut v = 0.0;
                for p in 0..3 {
                    let (px, py, pz) = (x[3 * p], x[3 * p + 1], x[3 * p + 2]);
                    v += 0.5
                        * mass
                        * (omega_x * omega_x * px * px
                            + omega_y * omega_y * py * py
                            + omega_z * omega_z * pz * pz);
                }
                v + pair_distances(x).iter().map(|r| 1.0 / r).sum::<f64>()
            }
        })
    }

    /// Exact or experimental reference energy for well-known states, in the
    /// reported observable (meson mass for charmonium).
    pub fn reference_energy(&self, excitation: usize) -> Option<f64> {
        match *self {
            // `excitation` counts distinct levels, not degenerate members.
            HamiltonianSpec::HarmonicOscillator2D { omega, .. } => {
                Some((excitation as f64 + 1.0) * omega)
            }
            HamiltonianSpec::Hydrogen3D {} => {
                let n = excitation as f64 + 1.0;
                Some(-0.5 / (n * n))
            }
            HamiltonianSpec::CharmoniumRadial { l, s, .. } if excitation == 0 => {
                match (l, s) {
                    (0, 0) => Some(2.981),
                    (0, 1) => Some(3.096916),
                    (1, 0) => Some(3.52541),
                    (1, 1) => Some(3.5176),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Maps a raw eigenvalue onto the reported observable.
    pub fn observable(&self, energy: f64) -> f64 {
        if self.is_radial() {
            charmonium_mass(energy)
        } else {
            energy
        }
    }
}

/// Where walkers may live.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Unbounded,
    /// `0 < r <= r_max` for a single radial coordinate.
    RadialInterval { r_max: f64 },
    /// Everything except the origin.
    PuncturedSpace,
    /// No two particles coincide.
    DistinctParticles { particles: usize, dim: usize },
}

impl Domain {
    pub fn contains(&self, x: ArrayView1<f64>) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match *self {
            Domain::Unbounded => true,
            Domain::RadialInterval { r_max } => x[0] > 0.0 && x[0] <= r_max,
            Domain::PuncturedSpace => x.dot(&x) > 0.0,
            Domain::DistinctParticles { particles, dim } => (0..particles).all(|a| {
                (a + 1..particles).all(|b| (0..dim).any(|c| x[a * dim + c] != x[b * dim + c]))
            }),
        }
    }
}

fn pair_distances(x: ArrayView1<f64>) -> [f64; 3] {
    let d = |a: usize, b: usize| {
        ((x[3 * a] - x[3 * b]).powi(2)
            + (x[3 * a + 1] - x[3 * b + 1]).powi(2)
            + (x[3 * a + 2] - x[3 * b + 2]).powi(2))
        .sqrt()
    };
    [d(0, 1), d(0, 2), d(1, 2)]
}

/// Per-row local energies with node-proximity flags.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalEnergies {
    pub values: Array1<f64>,
    pub potential: Array1<f64>,
    /// Row excluded from statistics (node-proximal or non-finite).
    pub excluded: Vec<bool>,
}

impl LocalEnergies {
    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Values of the rows that are not excluded.
    pub fn usable(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.excluded)
            .filter(|(_, &e)| !e)
            .map(|(&v, _)| v)
            .collect()
    }
}

/// Local energies from an already evaluated ψ batch.
pub fn local_energies(spec: &HamiltonianSpec, psi: &EvalBatch) -> Result<LocalEnergies> {
    let n = psi.len();
    if psi.inputs.ncols() != spec.dim() {
        return Err(Error::Shape(format!(
            "batch has {} coordinates, {} needs {}",
            psi.inputs.ncols(),
            spec.tag(),
            spec.dim()
        )));
    }
    let kinetic = spec.kinetic_prefactor();
    let max_abs = psi
        .value
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let guard = NODE_GUARD * max_abs;
    let mut values = Array1::zeros(n);
    let mut potential = Array1::zeros(n);
    let mut excluded = vec![false; n];
    for &bad in &psi.nonfinite_rows {
        excluded[bad] = true;
    }
    for i in 0..n {
        let v = spec.potential(psi.inputs.row(i))?;
        potential[i] = v;
        let p = psi.value[i];
        if excluded[i] || !(p.abs() > guard) {
            excluded[i] = true;
            values[i] = f64::NAN;
            continue;
        }
        let e = -kinetic * psi.laplacian[i] / p + v;
        if e.is_finite() {
            values[i] = e;
        } else {
            excluded[i] = true;
            values[i] = f64::NAN;
        }
    }
    Ok(LocalEnergies {
        values,
        potential,
        excluded,
    })
}

/// `E_L` of `model` at every row of `inputs`.
pub fn local_energy_batch(
    spec: &HamiltonianSpec,
    model: &WavefunctionModel,
    inputs: ArrayView2<f64>,
) -> Result<LocalEnergies> {
    let psi = model.psi_batch(inputs)?;
    local_energies(spec, &psi)
}
