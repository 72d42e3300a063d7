//! Log-domain transfer tables for the area-tilted kernel.
//!
//! After tilting, the recentred walk `Z_k = S_k − h_n(k)` must stay
//! non-negative, pays `exp(−(α_k/n)·Z_k)` at every interior time and ends at
//! `Z_n = z_n`. The engine works in integer `S` coordinates: at time `k` the
//! admissible states are `⌈h_n(k)⌉, …, ⌈h_n(k)⌉ + cap`, with
//! `cap = ⌈K_cap·n^{1/3}⌉`.
//!
//! `F_k(s)` is the log-weight of all prefixes ending at `(k, s)` (potential at
//! `k` included), `B_k(s)` the log-weight of all suffixes leaving `(k, s)`
//! (potential at `k` excluded), so `F_k + B_k` is the unnormalised log
//! marginal at every `k`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{lattice_ceil, log_sum_exp, LATTICE_SLACK};
use crate::obstacle::{ObstacleProfile, TiltSchedule};
use crate::step_law::StepLaw;

pub const DEFAULT_K_CAP: f64 = 12.0;
pub const DEFAULT_MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub k_cap: f64,
    pub mass_tol: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            k_cap: DEFAULT_K_CAP,
            mass_tol: DEFAULT_MASS_TOL,
        }
    }
}

/// Admissible integer heights per time.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub n: usize,
    pub cap: usize,
    floors: Vec<i64>,
    sizes: Vec<usize>,
}

impl HeightGrid {
    pub fn new(profile: &ObstacleProfile, k_cap: f64) -> Result<Self> {
        if !(k_cap > 0.0 && k_cap.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "k_cap must be positive, got {k_cap}"
            )));
        }
        let n = profile.n;
        if profile.hn[0] > LATTICE_SLACK {
            return Err(Error::Infeasible);
        }
        let cap = (k_cap * (n as f64).cbrt()).ceil() as usize;
        let mut floors = Vec::with_capacity(n + 1);
        let mut sizes = Vec::with_capacity(n + 1);
        floors.push(0);
        sizes.push(1);
        for k in 1..n {
            floors.push(lattice_ceil(profile.hn[k]));
            sizes.push(cap + 1);
        }
        floors.push(profile.endpoint());
        sizes.push(1);
        Ok(HeightGrid {
            n,
            cap,
            floors,
            sizes,
        })
    }

    pub fn floor(&self, k: usize) -> i64 {
        self.floors[k]
    }

    pub fn len(&self, k: usize) -> usize {
        self.sizes[k]
    }

    /// Inclusive state range at time `k`.
    pub fn states(&self, k: usize) -> std::ops::RangeInclusive<i64> {
        self.floors[k]..=self.floors[k] + self.sizes[k] as i64 - 1
    }

    #[inline]
    fn index(&self, k: usize, s: i64) -> Option<usize> {
        let i = s - self.floors[k];
        (i >= 0 && (i as usize) < self.sizes[k]).then_some(i as usize)
    }
}

/// Per-run diagnostic record.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KernelDiagnostics {
    pub n: usize,
    #[serde(rename = "logZ")]
    pub log_z: f64,
    pub mass_loss: f64,
    pub cap: usize,
    pub runtime_ms: f64,
    pub consistency: f64,
}

/// Exact distribution of `W_k = S_k − h_n(k)` under the conditioned measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub k: usize,
    /// Lattice state `S_k` of the first entry.
    pub first_state: i64,
    /// `W_k` values, increasing.
    pub heights: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn moment(&self, r: u32) -> f64 {
        self.heights
            .iter()
            .zip(&self.probs)
            .map(|(w, p)| p * w.powi(r as i32))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.moment(1);
        self.heights
            .iter()
            .zip(&self.probs)
            .map(|(w, p)| p * (w - m).powi(2))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct KernelTables {
    pub grid: HeightGrid,
    hn: Vec<f64>,
    /// `steps[k-1]`: `(offset, ln p_k(offset))` for the tilted step `k`.
    steps: Vec<Vec<(i64, f64)>>,
    /// `potential[k]` = `α_k/n` for interior `k`, zero at `k = 0, n`.
    potential: Vec<f64>,
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
    pub log_z: f64,
    pub diagnostics: KernelDiagnostics,
}

impl KernelTables {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn forward(&self, k: usize) -> &[f64] {
        &self.forward[k]
    }

    pub fn backward(&self, k: usize) -> &[f64] {
        &self.backward[k]
    }

    #[inline]
    fn pot(&self, k: usize, s: i64) -> f64 {
        self.potential[k] * (s as f64 - self.hn[k])
    }

    /// Pushes a log-vector over the states at `k − 1` through step `k`.
    fn forward_step(&self, k: usize, prev: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let prev_floor = grid.floor(k - 1);
        let prev_len = prev.len() as i64;
        let step = &self.steps[k - 1];
        let mut out = vec![f64::NEG_INFINITY; grid.len(k)];
        for (j, slot) in out.iter_mut().enumerate() {
            let s = grid.floor(k) + j as i64;
            let mut m = f64::NEG_INFINITY;
            for &(x, lp) in step {
                let i = s - x - prev_floor;
                if i >= 0 && i < prev_len {
                    m = m.max(prev[i as usize] + lp);
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut acc = 0.0;
            for &(x, lp) in step {
                let i = s - x - prev_floor;
                if i >= 0 && i < prev_len {
                    acc += (prev[i as usize] + lp - m).exp();
                }
            }
            *slot = m + acc.ln() - self.pot(k, s);
        }
        out
    }

    /// Pulls a log-vector over the states at `k` back to `k − 1`.
    fn backward_step(&self, k: usize, next: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let step = &self.steps[k - 1];
        let mut out = vec![f64::NEG_INFINITY; grid.len(k - 1)];
        for (i, slot) in out.iter_mut().enumerate() {
            let s = grid.floor(k - 1) + i as i64;
            let mut m = f64::NEG_INFINITY;
            for &(x, lp) in step {
                if let Some(j) = grid.index(k, s + x) {
                    m = m.max(next[j] + lp - self.pot(k, s + x));
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut acc = 0.0;
            for &(x, lp) in step {
                if let Some(j) = grid.index(k, s + x) {
                    acc += (next[j] + lp - self.pot(k, s + x) - m).exp();
                }
            }
            *slot = m + acc.ln();
        }
        out
    }

    /// Largest `|ln Σ_s e^{F_k(s)+B_k(s)} − log Z|` over `k`.
    pub fn consistency_error(&self) -> f64 {
        (0..=self.n())
            .map(|k| {
                let joint: Vec<f64> = self.forward[k]
                    .iter()
                    .zip(&self.backward[k])
                    .map(|(f, b)| f + b)
                    .collect();
                (log_sum_exp(&joint) - self.log_z).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn marginal(&self, k: usize) -> Marginal {
        let floor = self.grid.floor(k);
        let probs: Vec<f64> = self.forward[k]
            .iter()
            .zip(&self.backward[k])
            .map(|(f, b)| (f + b - self.log_z).exp())
            .collect();
        let heights = (0..probs.len())
            .map(|i| (floor + i as i64) as f64 - self.hn[k])
            .collect();
        Marginal {
            k,
            first_state: floor,
            heights,
            probs,
        }
    }

    /// `E(W_k^r)`.
    pub fn moment(&self, k: usize, r: u32) -> f64 {
        if r == 0 {
            return 1.0;
        }
        self.marginal(k).moment(r)
    }

    /// `P(W_k ≥ λ·n^{1/3})`.
    pub fn tail(&self, k: usize, lambda: f64) -> f64 {
        let threshold = lambda * (self.n() as f64).cbrt();
        let m = self.marginal(k);
        m.heights
            .iter()
            .zip(&m.probs)
            .filter(|(w, _)| **w >= threshold)
            .map(|(_, p)| p)
            .sum::<f64>()
            .min(1.0)
    }

    /// `Cov(W_i, W_j)` by carrying the height-weighted forward vector from
    /// `i` to `j` and contracting with `B_j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if i == 0 || j == self.n() {
            return 0.0;
        }
        if i == j {
            return self.marginal(i).variance();
        }
        let floor = self.grid.floor(i);
        let mut g: Vec<f64> = self.forward[i]
            .iter()
            .enumerate()
            .map(|(idx, f)| {
                let w = (floor + idx as i64) as f64 - self.hn[i];
                if w > 0.0 {
                    f + w.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        for k in i + 1..=j {
            g = self.forward_step(k, &g);
        }
        let floor_j = self.grid.floor(j);
        let cross: f64 = g
            .iter()
            .zip(&self.backward[j])
            .enumerate()
            .map(|(idx, (gv, b))| {
                ((floor_j + idx as i64) as f64 - self.hn[j]) * (gv + b - self.log_z).exp()
            })
            .sum();
        cross - self.moment(i, 1) * self.moment(j, 1)
    }

    /// Exact i.i.d. draws of `(S_0, …, S_n)` by backward sampling.
    ///
    /// Path `m` uses the ChaCha stream `m` of `seed`, so results do not depend
    /// on scheduling.
    pub fn sample_paths(&self, count: usize, seed: u64) -> Vec<Vec<i64>> {
        (0..count)
            .into_par_iter()
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                self.sample_one(&mut rng)
            })
            .collect()
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> Vec<i64> {
        let n = self.n();
        let mut path = vec![0i64; n + 1];
        path[n] = self.grid.floor(n);
        let mut weights = Vec::new();
        for k in (1..=n).rev() {
            let s_next = path[k];
            weights.clear();
            for &(x, lp) in &self.steps[k - 1] {
                if let Some(i) = self.grid.index(k - 1, s_next - x) {
                    let w = self.forward[k - 1][i] + lp;
                    if w > f64::NEG_INFINITY {
                        weights.push((s_next - x, w));
                    }
                }
            }
            let m = weights
                .iter()
                .map(|w| w.1)
                .fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = weights.iter().map(|w| (w.1 - m).exp()).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = weights.last().expect("reachable state has a predecessor").0;
            for &(s, w) in &weights {
                let p = (w - m).exp();
                if u < p {
                    pick = s;
                    break;
                }
                u -= p;
            }
            path[k - 1] = pick;
        }
        path
    }
}

/// Builds forward and backward tables for a lattice law.
pub fn build_tables(
    law: &StepLaw,
    profile: &ObstacleProfile,
    schedule: &TiltSchedule,
    config: KernelConfig,
) -> Result<KernelTables> {
    let started = Instant::now();
    let n = profile.n;
    if schedule.gamma.len() != n || schedule.alpha.len() + 1 != n {
        return Err(Error::InvalidArgument(
            "tilt schedule does not match the profile length".into(),
        ));
    }
    if !(config.mass_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mass_tol must be positive, got {}",
            config.mass_tol
        )));
    }
    let grid = HeightGrid::new(profile, config.k_cap)?;
    let steps = (1..=n)
        .map(|k| law.log_tilted_table(schedule.gamma_at(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut potential = vec![0.0; n + 1];
    for k in 1..n {
        potential[k] = schedule.alpha_at(k) / n as f64;
    }
    let mut tables = KernelTables {
        grid,
        hn: profile.hn.clone(),
        steps,
        potential,
        forward: Vec::with_capacity(n + 1),
        backward: Vec::new(),
        log_z: f64::NEG_INFINITY,
        diagnostics: KernelDiagnostics {
            n,
            log_z: f64::NEG_INFINITY,
            mass_loss: 0.0,
            cap: 0,
            runtime_ms: 0.0,
            consistency: 0.0,
        },
    };

    let mut forward = Vec::with_capacity(n + 1);
    forward.push(vec![0.0]);
    for k in 1..=n {
        let next = tables.forward_step(k, &forward[k - 1]);
        forward.push(next);
    }
    let mut backward = vec![Vec::new(); n + 1];
    backward[n] = vec![0.0];
    for k in (1..=n).rev() {
        backward[k - 1] = tables.backward_step(k, &backward[k]);
    }
    tables.log_z = forward[n][0];
    tables.forward = forward;
    tables.backward = backward;
    if tables.log_z == f64::NEG_INFINITY {
        return Err(Error::Infeasible);
    }

    let cap = tables.grid.cap;
    let mass_loss: f64 = (1..n)
        .map(|k| (tables.forward[k][cap] + tables.backward[k][cap] - tables.log_z).exp())
        .sum();
    if mass_loss > config.mass_tol {
        return Err(Error::MassLoss {
            mass_loss,
            tol: config.mass_tol,
            cap,
        });
    }
    let consistency = tables.consistency_error();
    tables.diagnostics = KernelDiagnostics {
        n,
        log_z: tables.log_z,
        mass_loss,
        cap,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
        consistency,
    };
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obstacle::{discretize, tilt_schedule, ObstacleSpec};
    use std::sync::Arc;

    fn flat(n: usize) -> ObstacleProfile {
        let spec = ObstacleSpec::Tabulated {
            h: Arc::new(|_| 0.0),
            dh: Arc::new(|_| 0.0),
            d2h: Arc::new(|_| 0.0),
        };
        discretize(&spec, n).unwrap()
    }

    #[test]
    fn two_step_flat_bridge() {
        // Of the 9 two-step paths, (0,0) and (+1,−1) stay ≥ 0 and end at 0.
        let law = StepLaw::uniform3();
        let t = build_tables(
            &law,
            &flat(2),
            &TiltSchedule::untilted(2),
            KernelConfig::default(),
        )
        .unwrap();
        assert!((t.log_z.exp() - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(t.forward(0), &[0.0]);
        assert_eq!(t.grid.states(0), 0..=0);
    }

    #[test]
    fn quadratic_tables_are_consistent() {
        let law = StepLaw::uniform3();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 200).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let t = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        assert!(t.consistency_error() < 1e-9);
        assert!(t.log_z <= 0.0);
        for k in [0, 1, 57, 100, 199, 200] {
            let m = t.marginal(k);
            assert!((m.total() - 1.0).abs() < 1e-10);
            assert!(m.probs.iter().all(|&p| p >= 0.0));
        }
        let m0 = t.marginal(0);
        assert_eq!(m0.heights, vec![0.0]);
        assert_eq!(t.moment(0, 1), 0.0);
        assert_eq!(t.moment(50, 0), 1.0);
    }

    #[test]
    fn tail_edges() {
        let law = StepLaw::uniform3();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 64).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let t = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        assert!((t.tail(32, 0.0) - 1.0).abs() < 1e-10);
        assert_eq!(t.tail(32, DEFAULT_K_CAP + 2.0), 0.0);
        let mut prev = 1.0 + 1e-12;
        for i in 0..60 {
            let v = t.tail(32, 0.1 * i as f64);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn covariance_edges() {
        let law = StepLaw::centered_binomial(1).unwrap();
        let p = discretize(&ObstacleSpec::Quadratic(0.4), 40).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let t = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        assert_eq!(t.covariance(0, 10), 0.0);
        assert_eq!(t.covariance(10, 40), 0.0);
        let v = t.covariance(20, 20);
        assert!(v > 0.0);
        assert!((v - t.marginal(20).variance()).abs() < 1e-12);
        assert!((t.covariance(12, 25) - t.covariance(25, 12)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_obstacle_has_symmetric_marginals() {
        let law = StepLaw::uniform3();
        let n = 90;
        let p = discretize(&ObstacleSpec::Quadratic(0.5), n).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let t = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        for k in [1, 7, 30, 44] {
            let a = t.marginal(k);
            let b = t.marginal(n - k);
            assert_eq!(a.first_state, b.first_state);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cap_doubling_leaves_log_z() {
        let law = StepLaw::uniform3();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 300).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let a = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        let b = build_tables(
            &law,
            &p,
            &s,
            KernelConfig {
                k_cap: 24.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a.log_z - b.log_z).abs() < 1e-8);
    }

    #[test]
    fn tight_cap_is_rejected() {
        let law = StepLaw::uniform3();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 500).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let err = build_tables(
            &law,
            &p,
            &s,
            KernelConfig {
                k_cap: 0.3,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::MassLoss { .. }), "{err:?}");
    }

    #[test]
    fn samples_respect_constraints_and_seed() {
        let law = StepLaw::uniform3();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 30).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        let t = build_tables(&law, &p, &s, KernelConfig::default()).unwrap();
        let paths = t.sample_paths(200, 7);
        for path in &paths {
            assert_eq!(path[0], 0);
            assert_eq!(path[30], p.endpoint());
            for k in 0..=30 {
                assert!(path[k] as f64 >= p.hn[k] - 1e-9);
            }
            for w in path.windows(2) {
                assert!((w[1] - w[0]).abs() <= 1);
            }
        }
        assert_eq!(paths, t.sample_paths(200, 7));
        assert_ne!(paths, t.sample_paths(200, 8));
    }

    #[test]
    fn gaussian_law_is_rejected() {
        let law = StepLaw::gaussian(1.0).unwrap();
        let p = discretize(&ObstacleSpec::Quadratic(0.5), 10).unwrap();
        let s = tilt_schedule(&law, &p).unwrap();
        assert!(build_tables(&law, &p, &s, KernelConfig::default()).is_err());
    }
}
