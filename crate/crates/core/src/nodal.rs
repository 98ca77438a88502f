//! Moment stability of the local energy near a nodal manifold.
//!
//! Near a node of codimension `k` with `ψ ~ δ^β` and `E_L ~ δ^{-γ}`, the
//! `p`-th moment under |ψ|² sampling behaves like `∫ δ^{2β+k-1-pγ} dδ`,
//! which is finite iff `2β > pγ - k`. Under uniform sampling the density
//! factor `δ^{2β}` is absent and the condition becomes `k > pγ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::median;
use crate::sampler::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    PsiSquared,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodalScaling {
    pub beta: f64,
    pub gamma: f64,
    pub k: u32,
    pub p: u32,
    pub sampling: Sampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converges,
    Diverges,
    /// Exponent sits exactly on the boundary: `∫ dδ/δ`.
    LogDivergent,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Converges => "converges",
            Verdict::Diverges => "diverges",
            Verdict::LogDivergent => "log-divergent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentVerdict {
    pub verdict: Verdict,
    /// `2β - pγ + k` (|ψ|²) or `k - pγ` (uniform); positive iff finite.
    pub margin: f64,
}

const BOUNDARY_TOL: f64 = 1e-12;

impl NodalScaling {
    pub fn new(beta: f64, gamma: f64, k: u32, p: u32, sampling: Sampling) -> Self {
        NodalScaling {
            beta,
            gamma,
            k,
            p,
            sampling,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.k == 0 || self.p == 0 {
            return Err("k and p must be at least 1".into());
        }
        Ok(())
    }

    /// Exponent `a` of the sampling density `∝ δ^{a-1}` on `(0, 1]`.
    fn density_exponent(&self) -> f64 {
        match self.sampling {
            Sampling::PsiSquared => 2.0 * self.beta + self.k as f64,
            Sampling::Uniform => self.k as f64,
        }
    }

    fn with_order(&self, p: u32) -> Self {
        NodalScaling { p, ..*self }
    }
}

pub fn moment_converges(s: &NodalScaling) -> MomentVerdict {
    let margin = s.density_exponent() - s.p as f64 * s.gamma;
    let verdict = if margin.abs() <= BOUNDARY_TOL {
        Verdict::LogDivergent
    } else if margin > 0.0 {
        Verdict::Converges
    } else {
        Verdict::Diverges
    };
    MomentVerdict { verdict, margin }
}

/// `⟨|E_L|^p⟩` for the toy model on `δ ∈ (0, 1]`, if finite.
pub fn analytic_raw_moment(s: &NodalScaling) -> Option<f64> {
    let a = s.density_exponent();
    let margin = a - s.p as f64 * s.gamma;
    (margin > BOUNDARY_TOL).then(|| a / margin)
}

/// `⟨(E_L - ⟨E_L⟩)^p⟩` from the raw moments, if finite.
pub fn analytic_central_moment(s: &NodalScaling) -> Option<f64> {
    let mean = analytic_raw_moment(&s.with_order(1))?;
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=s.p {
        let raw = if j == 0 {
            1.0
        } else {
            analytic_raw_moment(&s.with_order(j))?
        };
        total += binom * raw * (-mean).powi((s.p - j) as i32);
        binom = binom * (s.p - j) as f64 / (j + 1) as f64;
    }
    Some(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMomentRow {
    pub n: usize,
    /// Median over replicates of the sample mean of `|E_L|^p`.
    pub raw_moment: f64,
    /// Median over replicates of the sample `p`-th central moment.
    pub central_moment: f64,
}

/// Samples `δ` by inverse CDF from the near-node density, sets
/// `E_L = δ^{-γ}` and reports the empirical `p`-th moments for each sample
/// size. Each row is the median over `replicates` independent draws, which
/// tracks the typical (rather than the rare-event dominated) estimate.
pub fn simulate_toy_moments(
    s: &NodalScaling,
    sample_sizes: &[usize],
    seed: u64,
    replicates: usize,
) -> Vec<ToyMomentRow> {
    let replicates = replicates.max(1);
    let inv_a = 1.0 / s.density_exponent();
    let p = s.p as i32;
    sample_sizes
        .par_iter()
        .map(|&n| {
            let (raws, centrals): (Vec<f64>, Vec<f64>) = (0..replicates)
                .map(|r| {
                    let stream = mix_seed(mix_seed(seed, n as u64), r as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    let values: Vec<f64> = (0..n)
                        .map(|_| {
                            let u = 1.0 - rng.random::<f64>();
                            u.powf(inv_a).powf(-s.gamma)
                        })
                        .collect();
                    let mean = values.iter().sum::<f64>() / n as f64;
                    let raw = values.iter().map(|e| e.powi(p)).sum::<f64>() / n as f64;
                    let central =
                        values.iter().map(|e| (e - mean).powi(p)).sum::<f64>() / n as f64;
                    (raw, central)
                })
                .unzip();
            ToyMomentRow {
                n,
                raw_moment: median(&raws),
                central_moment: median(&centrals),
            }
        })
        .collect()
}

pub fn toy_moments_csv(rows: &[ToyMomentRow]) -> String {
    let mut out = String::from("n,raw_moment,central_moment\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n, r.raw_moment, r.central_moment));
    }
    out
}
