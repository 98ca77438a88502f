//! Metropolis walkers distributed as |ψ|².

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ansatz::WavefunctionModel;
use crate::error::{Error, Result};
use crate::hamiltonians::{Domain, HamiltonianSpec};

pub const TARGET_ACCEPTANCE_LOW: f64 = 0.4;
pub const TARGET_ACCEPTANCE_HIGH: f64 = 0.6;
pub const SCALE_FACTOR: f64 = 1.1;
pub const DEFAULT_PROPOSAL_SCALE: f64 = 0.5;

/// SplitMix64 finaliser; derives independent seeds from `(seed, index)`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepStats {
    pub sweeps: usize,
    pub accepted: u64,
    pub attempted: u64,
    /// Sweeps in which no walker moved.
    pub stalled_sweeps: usize,
}

impl SweepStats {
    pub fn acceptance(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

/// A fixed-size ensemble of walkers with one RNG stream per walker, so a
/// sweep's outcome does not depend on how walkers are partitioned.
#[derive(Clone, Debug)]
pub struct WalkerEnsemble {
    positions: Array2<f64>,
    domain: Domain,
    pub proposal_scale: f64,
    pub rng_seed: u64,
    /// Acceptance fraction of the most recent sweep.
    pub acceptance_window: f64,
    pub node_flag_count: usize,
    adaptation_frozen: bool,
    rngs: Vec<ChaCha8Rng>,
    pub total: SweepStats,
}

impl WalkerEnsemble {
    /// Wraps explicit positions (`[N x d]`); every row must lie in `domain`.
    pub fn from_positions(positions: Array2<f64>, domain: Domain, seed: u64) -> Result<Self> {
        if positions.nrows() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 walkers, got {}",
                positions.nrows()
            )));
        }
        if let Some(i) = positions.outer_iter().position(|x| !domain.contains(x)) {
            return Err(Error::Domain(format!("walker {i} starts outside the domain")));
        }
        let rngs = (0..positions.nrows() as u64)
            .map(|i| ChaCha8Rng::seed_from_u64(mix_seed(seed, i)))
            .collect();
        Ok(WalkerEnsemble {
            positions,
            domain,
            proposal_scale: DEFAULT_PROPOSAL_SCALE,
            rng_seed: seed,
            acceptance_window: 0.0,
            node_flag_count: 0,
            adaptation_frozen: false,
            rngs,
            total: SweepStats::default(),
        })
    }

    /// Unit Gaussian around the origin (radial problems: around `r = 1`,
    /// redrawn until inside the domain).
    pub fn init(spec: &HamiltonianSpec, n_walkers: usize, seed: u64) -> Result<Self> {
        if n_walkers < 2 {
            return Err(Error::Config(format!("need at least 2 walkers, got {n_walkers}")));
        }
        let d = spec.dim();
        let domain = spec.domain();
        let center = if spec.is_radial() { 1.0 } else { 0.0 };
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
        let mut positions = Array2::zeros((n_walkers, d));
        for mut row in positions.outer_iter_mut() {
            loop {
                for v in row.iter_mut() {
                    *v = center + init_rng.sample::<f64, _>(StandardNormal);
                }
                if domain.contains(row.view()) {
                    break;
                }
            }
        }
        WalkerEnsemble::from_positions(positions, domain, seed)
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn n_walkers(&self) -> usize {
        self.positions.nrows()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn adaptation_frozen(&self) -> bool {
        self.adaptation_frozen
    }

    pub fn freeze_adaptation(&mut self) {
        self.adaptation_frozen = true;
    }

    /// Runs `n_steps` sweeps; each sweep proposes one isotropic Gaussian
    /// move per walker and accepts with `min(1, ψ(x')² / ψ(x)²)`.
    pub fn sweep(&mut self, model: &WavefunctionModel, n_steps: usize) -> Result<SweepStats> {
        let (n, d) = self.positions.dim();
        let mut stats = SweepStats::default();
        if n_steps == 0 {
            return Ok(stats);
        }
        let mut psi = model.psi_values(self.positions.view())?;
        let mut proposals = Array2::zeros((n, d));
        let mut in_domain = vec![true; n];
        let mut uniforms = Array1::zeros(n);
        for _ in 0..n_steps {
            for (i, rng) in self.rngs.iter_mut().enumerate() {
                let mut prop = proposals.row_mut(i);
                for (p, &x) in prop.iter_mut().zip(self.positions.row(i)) {
                    *p = x + self.proposal_scale * rng.sample::<f64, _>(StandardNormal);
                }
                uniforms[i] = rng.random::<f64>();
                in_domain[i] = self.domain.contains(prop.view());
                if !in_domain[i] {
                    // Keep the evaluation well defined; the move is rejected below.
                    prop.assign(&self.positions.row(i));
                }
            }
            let psi_new = model.psi_values(proposals.view())?;
            let mut accepted = 0u64;
            for i in 0..n {
                let (old, new) = (psi[i] * psi[i], psi_new[i] * psi_new[i]);
                if in_domain[i] && new.is_finite() && uniforms[i] * old < new {
                    self.positions.row_mut(i).assign(&proposals.row(i));
                    psi[i] = psi_new[i];
                    accepted += 1;
                }
            }
            let fraction = accepted as f64 / n as f64;
            self.acceptance_window = fraction;
            if accepted == 0 {
                stats.stalled_sweeps += 1;
            }
            if !self.adaptation_frozen {
                if fraction < TARGET_ACCEPTANCE_LOW {
                    self.proposal_scale /= SCALE_FACTOR;
                } else if fraction > TARGET_ACCEPTANCE_HIGH {
                    self.proposal_scale *= SCALE_FACTOR;
                }
            }
            stats.sweeps += 1;
            stats.accepted += accepted;
            stats.attempted += n as u64;
        }
        self.total.sweeps += stats.sweeps;
        self.total.accepted += stats.accepted;
        self.total.attempted += stats.attempted;
        self.total.stalled_sweeps += stats.stalled_sweeps;
        Ok(stats)
    }

    /// Adaptive sweeps followed by freezing the proposal scale.
    pub fn burn_in(&mut self, model: &WavefunctionModel, sweeps: usize) -> Result<SweepStats> {
        let stats = self.sweep(model, sweeps)?;
        self.freeze_adaptation();
        Ok(stats)
    }
}
