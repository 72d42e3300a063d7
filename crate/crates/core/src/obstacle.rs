//! Discretised concave obstacles and the tilt schedule they induce.
//!
//! For an obstacle `h` on `[0, 1]` and a step law with cumulant `H`, the walk
//! is recentred step by step: step `k` is tilted by `γ_k = (H')^{-1}(δ_k)`
//! where `δ_k = h_n(k) − h_n(k−1)`. Summation by parts turns the leftover
//! Radon–Nikodym factor into a linear potential `(α_k/n)·Z_k` with
//! `α_k = n(γ_k − γ_{k+1})`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, lattice_ceil};
use crate::step_law::StepLaw;

pub type ObstacleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ObstacleSpec {
    /// `h(x) = c·x(1 − x)`.
    Quadratic(f64),
    /// `h(x) = (c/π)·sin(πx)`, slope `c` at the origin.
    Cosine(f64),
    /// `h(x) = 1 − |x|^p` on `[−1, 1]`; only meaningful for the Gaussian lab.
    PObstacle(f64),
    /// User supplied `h`, `h'`, `h''`.
    Tabulated {
        h: ObstacleFn,
        dh: ObstacleFn,
        d2h: ObstacleFn,
    },
}

impl fmt::Debug for ObstacleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObstacleSpec::Quadratic(c) => write!(f, "Quadratic({c})"),
            ObstacleSpec::Cosine(c) => write!(f, "Cosine({c})"),
            ObstacleSpec::PObstacle(p) => write!(f, "PObstacle({p})"),
            ObstacleSpec::Tabulated { .. } => write!(f, "Tabulated"),
        }
    }
}

impl ObstacleSpec {
    /// Parses a config family name (`quadratic`, `cosine`, `p_obstacle`).
    pub fn from_family(family: &str, param: f64) -> Result<Self> {
        match family {
            "quadratic" => Ok(Self::Quadratic(param)),
            "cosine" => Ok(Self::Cosine(param)),
            "p_obstacle" | "pobstacle" => Ok(Self::PObstacle(param)),
            other => Err(Error::InvalidObstacle(format!(
                "unknown obstacle family `{other}`"
            ))),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            ObstacleSpec::Quadratic(c) => c * x * (1.0 - x),
            ObstacleSpec::Cosine(c) => c / std::f64::consts::PI * (std::f64::consts::PI * x).sin(),
            ObstacleSpec::PObstacle(p) => 1.0 - x.abs().powf(*p),
            ObstacleSpec::Tabulated { h, .. } => h(x),
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self {
            ObstacleSpec::Quadratic(c) => c * (1.0 - 2.0 * x),
            ObstacleSpec::Cosine(c) => c * (std::f64::consts::PI * x).cos(),
            ObstacleSpec::PObstacle(p) => -p * x.signum() * x.abs().powf(p - 1.0),
            ObstacleSpec::Tabulated { dh, .. } => dh(x),
        }
    }

    pub fn curvature(&self, x: f64) -> f64 {
        match self {
            ObstacleSpec::Quadratic(c) => -2.0 * c,
            ObstacleSpec::Cosine(c) => -c * std::f64::consts::PI * (std::f64::consts::PI * x).sin(),
            ObstacleSpec::PObstacle(p) => -p * (p - 1.0) * x.abs().powf(p - 2.0),
            ObstacleSpec::Tabulated { d2h, .. } => d2h(x),
        }
    }

    /// `n·h(k/n)`, exact in integer arithmetic for the quadratic family.
    fn scaled_value(&self, n: usize, k: usize) -> f64 {
        match self {
            ObstacleSpec::Quadratic(c) => c * ((k * (n - k)) as f64) / n as f64,
            _ => n as f64 * self.value(k as f64 / n as f64),
        }
    }

    /// Checks `h(0) = 0` and `sup h'' < 0` on a grid of `samples` points.
    pub fn check_strongly_concave(&self, samples: usize) -> Result<()> {
        if matches!(self, ObstacleSpec::PObstacle(_)) {
            return Err(Error::InvalidObstacle(
                "the p-obstacle is reserved for the Gaussian lab".into(),
            ));
        }
        if self.value(0.0).abs() > 1e-12 {
            return Err(Error::InvalidObstacle(format!(
                "h(0) = {} ≠ 0",
                self.value(0.0)
            )));
        }
        let worst = (0..=samples)
            .map(|i| self.curvature(i as f64 / samples as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidObstacle(format!(
                "sup h'' = {worst} is not negative"
            )))
        }
    }
}

/// `h_n(k) = n·h(k/n)` with increments `δ_k` and endpoint offset `z_n`.
#[derive(Debug, Clone)]
pub struct ObstacleProfile {
    pub n: usize,
    pub spec: ObstacleSpec,
    /// `hn[k]`, `k = 0..=n`.
    pub hn: Vec<f64>,
    /// `delta[k-1] = hn[k] − hn[k−1]`, `k = 1..=n`.
    pub delta: Vec<f64>,
    /// `⌈h_n(n)⌉ − h_n(n) ∈ [0, 1)`.
    pub zn: f64,
}

impl ObstacleProfile {
    /// Lowest admissible lattice height at time `k`.
    pub fn floor_state(&self, k: usize) -> i64 {
        lattice_ceil(self.hn[k])
    }

    /// `S_n = ⌈h_n(n)⌉`.
    pub fn endpoint(&self) -> i64 {
        lattice_ceil(self.hn[self.n])
    }

    /// `δ_k` for `k = 1..=n`.
    pub fn increment(&self, k: usize) -> f64 {
        self.delta[k - 1]
    }
}

pub fn discretize(spec: &ObstacleSpec, n: usize) -> Result<ObstacleProfile> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n ≥ 2, got {n}")));
    }
    let hn: Vec<f64> = (0..=n).map(|k| spec.scaled_value(n, k)).collect();
    let delta: Vec<f64> = hn.windows(2).map(|w| w[1] - w[0]).collect();
    let zn = (lattice_ceil(hn[n]) as f64 - hn[n]).max(0.0);
    Ok(ObstacleProfile {
        n,
        spec: spec.clone(),
        hn,
        delta,
        zn,
    })
}

/// Per-step tilts, effective potential and the large-deviation exponent.
#[derive(Debug, Clone)]
pub struct TiltSchedule {
    /// `gamma[k-1] = γ_k`, `k = 1..=n`.
    pub gamma: Vec<f64>,
    /// `alpha[k-1] = α_k = n(γ_k − γ_{k+1})`, `k = 1..=n−1`.
    pub alpha: Vec<f64>,
    /// `Σ_k I(δ_k)`.
    pub ld_exponent_sum: f64,
    /// `n ∫₀¹ I(h'(s)) ds`.
    pub ld_exponent_integral: f64,
    /// Observed `(min α_k, max α_k)`.
    pub alpha_bounds: (f64, f64),
}

impl TiltSchedule {
    /// `γ_k`, `k = 1..=n`.
    pub fn gamma_at(&self, k: usize) -> f64 {
        self.gamma[k - 1]
    }

    /// `α_k`, `k = 1..=n−1`.
    pub fn alpha_at(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// Trivial schedule (`γ ≡ 0`, `α ≡ 0`): the kernel then reduces to the
    /// untilted walk constrained above the obstacle.
    pub fn untilted(n: usize) -> Self {
        TiltSchedule {
            gamma: vec![0.0; n],
            alpha: vec![0.0; n.saturating_sub(1)],
            ld_exponent_sum: 0.0,
            ld_exponent_integral: 0.0,
            alpha_bounds: (0.0, 0.0),
        }
    }

    /// `ln P(S ≥ h_n, S_n = ⌈h_n(n)⌉)` recovered from the kernel's
    /// `log_z`: the tilting identity is exact, so
    /// `ln P = −Σ I(δ_k) − γ_n z_n + log_z`.
    pub fn untilted_log_probability(&self, profile: &ObstacleProfile, log_z: f64) -> f64 {
        -self.ld_exponent_sum - self.gamma[profile.n - 1] * profile.zn + log_z
    }
}

pub fn tilt_schedule(law: &StepLaw, profile: &ObstacleProfile) -> Result<TiltSchedule> {
    let n = profile.n;
    let mut gamma = Vec::with_capacity(n);
    let mut ld_sum = 0.0;
    for k in 1..=n {
        let d = profile.increment(k);
        let g = law.invert_mean(d).map_err(|e| match e {
            Error::Slope { slope, .. } => Error::Slope {
                slope,
                step: Some(k),
            },
            other => other,
        })?;
        ld_sum += g * d - law.cumulant(g)?;
        gamma.push(g);
    }
    let alpha: Vec<f64> = gamma.windows(2).map(|w| n as f64 * (w[0] - w[1])).collect();
    let alpha_bounds = alpha
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| {
            (lo.min(a), hi.max(a))
        });

    let spec = &profile.spec;
    let integrand = |s: f64| law.rate_function(spec.slope(s)).unwrap_or(f64::NAN);
    let integral = adaptive_simpson(integrand, 0.0, 1.0, 1e-10);
    if !integral.is_finite() {
        return Err(Error::Slope {
            slope: f64::NAN,
            step: None,
        });
    }

    Ok(TiltSchedule {
        gamma,
        alpha,
        ld_exponent_sum: ld_sum,
        ld_exponent_integral: n as f64 * integral,
        alpha_bounds,
    })
}

/// `−h''(x)/H''((H')^{-1}(h'(x)))`: the large-n limit of `α_k` at `x = k/n`.
pub fn limiting_potential(law: &StepLaw, spec: &ObstacleSpec, x: f64) -> Result<f64> {
    let g = law.invert_mean(spec.slope(x))?;
    let (_, var) = law.cumulant_derivatives(g)?;
    Ok(-spec.curvature(x) / var)
}
