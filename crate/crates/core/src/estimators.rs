//! Local-energy statistics and the variance-based convergence monitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Streaming central moments up to fourth order.
///
/// Single-pass updates and pairwise merges use the Welford/Terriberry
/// recurrences, so partitioned batches combine to the same statistics (up
/// to rounding) as one pass over the concatenation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        self.mean = (na * self.mean + nb * other.mean) / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased (N-1) variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n as f64 - 1.0)).max(0.0)
        }
    }

    /// Population fourth central moment.
    pub fn mu4(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m4 / self.n as f64).max(0.0)
        }
    }
}

impl FromIterator<f64> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MomentAccumulator::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergyBatch {
    pub n: usize,
    pub excluded: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub mu4: f64,
    pub se_variance: f64,
    /// Set when the sample `mu4 < variance^2` and the SE was clamped to 0.
    pub se_variance_clamped: bool,
}

/// Statistics of the usable local energies; `excluded` only records how
/// many node-flagged rows were dropped before this call.
pub fn summarize(values: &[f64], excluded: usize) -> Result<LocalEnergyBatch> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            usable: values.len(),
            needed: 2,
        });
    }
    let acc: MomentAccumulator = values.iter().copied().collect();
    Ok(batch_from_moments(&acc, excluded))
}

pub fn batch_from_moments(acc: &MomentAccumulator, excluded: usize) -> LocalEnergyBatch {
    let n = acc.count() as usize;
    let variance = acc.variance();
    let mu4 = acc.mu4();
    let excess = mu4 - variance * variance;
    LocalEnergyBatch {
        n,
        excluded,
        mean: acc.mean(),
        variance,
        se_mean: (variance / n as f64).sqrt(),
        mu4,
        se_variance: (excess.max(0.0) / n as f64).sqrt(),
        se_variance_clamped: excess < 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorState {
    Running,
    Converged,
    Plateaued,
}

impl MonitorState {
    pub fn name(self) -> &'static str {
        match self {
            MonitorState::Running => "running",
            MonitorState::Converged => "converged",
            MonitorState::Plateaued => "plateaued",
        }
    }
}

/// Declares convergence once the median of the last `window` variances is
/// below `threshold`, or a plateau when that median has improved by less
/// than `plateau_tolerance` over the last `plateau_steps` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceMonitor {
    pub threshold: f64,
    pub window: usize,
    pub plateau_steps: usize,
    pub plateau_tolerance: f64,
    state: MonitorState,
    history: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(threshold: f64, window: usize) -> Self {
        ConvergenceMonitor {
            threshold,
            window: window.max(1),
            plateau_steps: 2000,
            plateau_tolerance: 0.01,
            state: MonitorState::Running,
            history: Vec::new(),
        }
    }

    pub fn with_plateau(mut self, steps: usize, tolerance: f64) -> Self {
        self.plateau_steps = steps;
        self.plateau_tolerance = tolerance;
        self
    }

    pub fn state(&self) -> MonitorState {
        self.state
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Median of the most recent full window, if one exists.
    pub fn windowed_median(&self) -> Option<f64> {
        self.median_ending_at(self.history.len())
    }

    fn median_ending_at(&self, end: usize) -> Option<f64> {
        if end < self.window {
            return None;
        }
        Some(median(&self.history[end - self.window..end]))
    }

    pub fn update(&mut self, _step: usize, sigma2: f64) -> MonitorState {
        self.history.push(if sigma2.is_nan() { f64::INFINITY } else { sigma2 });
        let Some(current) = self.windowed_median() else {
            self.state = MonitorState::Running;
            return self.state;
        };
        self.state = if current < self.threshold {
            MonitorState::Converged
        } else {
            let len = self.history.len();
            match len
                .checked_sub(self.plateau_steps)
                .and_then(|end| self.median_ending_at(end))
            {
                Some(earlier) if current > (1.0 - self.plateau_tolerance) * earlier => {
                    MonitorState::Plateaued
                }
                _ => MonitorState::Running,
            }
        };
        self.state
    }
}

/// Median with the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
