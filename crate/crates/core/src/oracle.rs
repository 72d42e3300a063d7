//! Brute-force reference values obtained by enumerating every path.
//!
//! Works in the linear domain with step weights `p(x)e^{γx}/M(γ)` summed
//! directly from the support table, so nothing here shares code with the
//! transfer tables. Only usable for tiny `n` and small supports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{build_tables, KernelConfig};
use crate::numeric::LATTICE_SLACK;
use crate::obstacle::{discretize, tilt_schedule, ObstacleProfile, ObstacleSpec, TiltSchedule};
use crate::step_law::StepLaw;

/// Hard limit on the number of enumerated paths.
pub const MAX_PATHS: f64 = 2e7;

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub n: usize,
    /// Log of the total area-tilted weight.
    pub log_z: f64,
    /// `ln P(S_k ≥ h_n(k) for 0 < k < n, S_n = ⌈h_n(n)⌉)` under the original law.
    pub log_untilted: f64,
    /// Conditioned law of `S_k`, as `(state, probability)` sorted by state.
    pub marginals: Vec<Vec<(i64, f64)>>,
    /// `E(W_k)` with `W_k = S_k − h_n(k)`.
    pub mean: Vec<f64>,
    /// `E(W_i W_j)`.
    pub second: Vec<Vec<f64>>,
    hn: Vec<f64>,
}

impl Enumeration {
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.second[i][j] - self.mean[i] * self.mean[j]
    }

    pub fn moment(&self, k: usize, r: u32) -> f64 {
        self.marginals[k]
            .iter()
            .map(|&(s, p)| p * (s as f64 - self.hn[k]).powi(r as i32))
            .sum()
    }

    pub fn tail(&self, k: usize, lambda: f64) -> f64 {
        let t = lambda * (self.n as f64).cbrt();
        self.marginals[k]
            .iter()
            .filter(|&&(s, _)| s as f64 - self.hn[k] >= t)
            .map(|&(_, p)| p)
            .sum()
    }
}

struct Walker<'a> {
    n: usize,
    hn: &'a [f64],
    end: i64,
    /// Per step: `(x, tilted prob, original prob)`.
    steps: Vec<Vec<(i64, f64, f64)>>,
    pot: Vec<f64>,
    path: Vec<i64>,
    z: f64,
    untilted: f64,
    mass: Vec<std::collections::BTreeMap<i64, f64>>,
    first: Vec<f64>,
    second: Vec<Vec<f64>>,
}

impl Walker<'_> {
    fn descend(&mut self, k: usize, weight: f64, plain: f64) {
        if k == self.n {
            if self.path[k] != self.end {
                return;
            }
            self.z += weight;
            self.untilted += plain;
            let w: Vec<f64> = (0..=self.n)
                .map(|i| self.path[i] as f64 - self.hn[i])
                .collect();
            for i in 0..=self.n {
                *self.mass[i].entry(self.path[i]).or_insert(0.0) += weight;
                self.first[i] += weight * w[i];
                for j in 0..=self.n {
                    self.second[i][j] += weight * w[i] * w[j];
                }
            }
            return;
        }
        for idx in 0..self.steps[k].len() {
            let (x, q, p) = self.steps[k][idx];
            let s = self.path[k] + x;
            let next = k + 1;
            if next < self.n && (s as f64) < self.hn[next] - LATTICE_SLACK {
                continue;
            }
            let damp = if next < self.n {
                (-self.pot[next] * (s as f64 - self.hn[next])).exp()
            } else {
                1.0
            };
            self.path[next] = s;
            self.descend(next, weight * q * damp, plain * p);
        }
    }
}

/// Enumerates all `|support|^n` paths of the tilted, area-damped walk.
pub fn enumerate(
    law: &StepLaw,
    profile: &ObstacleProfile,
    schedule: &TiltSchedule,
) -> Result<Enumeration> {
    let support = law
        .support()
        .ok_or_else(|| Error::InvalidArgument("enumeration needs a lattice law".into()))?;
    let n = profile.n;
    if (support.len() as f64).powi(n as i32) > MAX_PATHS {
        return Err(Error::InvalidArgument(format!(
            "{}^{} paths is too many to enumerate",
            support.len(),
            n
        )));
    }
    if profile.hn[0] > LATTICE_SLACK {
        return Err(Error::Infeasible);
    }
    let steps = (1..=n)
        .map(|k| {
            let g = schedule.gamma_at(k);
            let m: f64 = support.iter().map(|&(x, p)| p * (g * x as f64).exp()).sum();
            support
                .iter()
                .map(|&(x, p)| (x, p * (g * x as f64).exp() / m, p))
                .collect()
        })
        .collect();
    let mut pot = vec![0.0; n + 1];
    for k in 1..n {
        pot[k] = schedule.alpha_at(k) / n as f64;
    }
    let mut w = Walker {
        n,
        hn: &profile.hn,
        end: profile.endpoint(),
        steps,
        pot,
        path: vec![0; n + 1],
        z: 0.0,
        untilted: 0.0,
        mass: vec![Default::default(); n + 1],
        first: vec![0.0; n + 1],
        second: vec![vec![0.0; n + 1]; n + 1],
    };
    w.descend(0, 1.0, 1.0);
    if w.z == 0.0 {
        return Err(Error::Infeasible);
    }
    let z = w.z;
    Ok(Enumeration {
        n,
        log_z: z.ln(),
        log_untilted: w.untilted.ln(),
        marginals: w
            .mass
            .into_iter()
            .map(|m| m.into_iter().map(|(s, v)| (s, v / z)).collect())
            .collect(),
        mean: w.first.iter().map(|v| v / z).collect(),
        second: w
            .second
            .iter()
            .map(|r| r.iter().map(|v| v / z).collect())
            .collect(),
        hn: profile.hn.clone(),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckOutcome {
    fn new(name: String, error: f64, tolerance: f64) -> Self {
        CheckOutcome {
            pass: error <= tolerance,
            name,
            error,
            tolerance,
        }
    }
}

/// Compares the transfer tables with enumeration on small cases.
pub fn self_check() -> Result<Vec<CheckOutcome>> {
    const TOL: f64 = 1e-12;
    let laws = vec![
        StepLaw::uniform3(),
        StepLaw::lazy_srw(0.3)?,
        StepLaw::centered_binomial(2)?,
        StepLaw::lattice("skew", &[(-1, 0.5), (0, 0.25), (2, 0.25)])?,
    ];
    let mut out = Vec::new();
    for law in &laws {
        for (spec, n) in [
            (ObstacleSpec::Quadratic(0.4), 6usize),
            (ObstacleSpec::Cosine(0.3), 7),
        ] {
            let profile = discretize(&spec, n)?;
            let schedule = tilt_schedule(law, &profile)?;
            let tables = build_tables(law, &profile, &schedule, KernelConfig::default())?;
            let e = enumerate(law, &profile, &schedule)?;
            let tag = format!("{}/{:?}/n={}", law.name(), spec, n);
            out.push(CheckOutcome::new(
                format!("{tag} logZ"),
                (tables.log_z - e.log_z).abs(),
                TOL,
            ));
            let mut m_err: f64 = 0.0;
            let mut c_err: f64 = 0.0;
            for k in 0..=n {
                m_err = m_err.max((tables.moment(k, 1) - e.mean[k]).abs());
                m_err = m_err.max((tables.moment(k, 2) - e.moment(k, 2)).abs());
                for j in k..=n {
                    c_err = c_err.max((tables.covariance(k, j) - e.covariance(k, j)).abs());
                }
            }
            out.push(CheckOutcome::new(format!("{tag} moments"), m_err, TOL));
            out.push(CheckOutcome::new(format!("{tag} covariance"), c_err, TOL));
            let identity = schedule.untilted_log_probability(&profile, tables.log_z);
            out.push(CheckOutcome::new(
                format!("{tag} untilted identity"),
                (identity - e.log_untilted).abs(),
                1e-10,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn flat_two_step_count() {
        let spec = ObstacleSpec::Tabulated {
            h: Arc::new(|_| 0.0),
            dh: Arc::new(|_| 0.0),
            d2h: Arc::new(|_| 0.0),
        };
        let p = discretize(&spec, 2).unwrap();
        let e = enumerate(&StepLaw::uniform3(), &p, &TiltSchedule::untilted(2)).unwrap();
        assert!((e.log_z.exp() - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(e.marginals[1], vec![(0, 0.5), (1, 0.5)]);
        assert!((e.covariance(1, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_problems() {
        let p = discretize(&ObstacleSpec::Quadratic(0.3), 40).unwrap();
        let law = StepLaw::uniform3();
        let s = tilt_schedule(&law, &p).unwrap();
        assert!(enumerate(&law, &p, &s).is_err());
    }

    #[test]
    fn self_check_passes() {
        let lines = self_check().unwrap();
        assert!(!lines.is_empty());
        for l in &lines {
            assert!(l.pass, "{l:?}");
        }
    }
}
