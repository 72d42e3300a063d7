//! Centred step distributions and their cumulant toolkit.
//!
//! A [`StepLaw`] is either a lattice law given by a finite probability table
//! on ℤ, or a Gaussian law. Unbounded lattice laws are truncated at tail mass
//! [`TRUNCATION_MASS`] and renormalised; the truncation radius is recorded.
//!
//! For a law `X` with moment generating function `M(t) = E e^{tX}` the
//! cumulant is `H(t) = ln M(t)`, finite on `(a_*, b_*)`. Tilting by `γ`
//! reweights the law by `e^{γx}/M(γ)` and moves its mean to `H'(γ)`.

use crate::error::{Error, Result};

/// Tail mass discarded when truncating an unbounded lattice law.
pub const TRUNCATION_MASS: f64 = 1e-14;

/// Default distance kept between a tilt and the edge of the cumulant domain.
pub const DEFAULT_SLOPE_MARGIN: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    /// Probability table on ℤ, sorted by offset, strictly positive entries.
    Lattice { support: Vec<(i64, f64)> },
    /// `N(mean, beta)`.
    Gaussian { mean: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLaw {
    name: String,
    kind: StepKind,
    mean: f64,
    sigma2: f64,
    domain: (f64, f64),
    truncation_radius: Option<i64>,
    slope_margin: f64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl StepLaw {
    /// Builds a centred lattice law, validating normalisation, centring and
    /// aperiodicity. Zero-probability entries are dropped.
    pub fn lattice(name: impl Into<String>, table: &[(i64, f64)]) -> Result<Self> {
        Self::lattice_with_domain(name.into(), table, (f64::NEG_INFINITY, f64::INFINITY), None)
    }

    fn lattice_with_domain(
        name: String,
        table: &[(i64, f64)],
        domain: (f64, f64),
        truncation_radius: Option<i64>,
    ) -> Result<Self> {
        if table
            .iter()
            .any(|&(_, p)| !(0.0..=1.0).contains(&p) || p.is_nan())
        {
            return Err(Error::InvalidLaw(format!(
                "{name}: probabilities must lie in [0, 1]"
            )));
        }
        let mut support: Vec<(i64, f64)> =
            table.iter().copied().filter(|&(_, p)| p > 0.0).collect();
        support.sort_by_key(|&(x, _)| x);
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidLaw(format!("{name}: repeated support point")));
        }
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "{name}: probabilities sum to {total}"
            )));
        }
        let mean: f64 = support.iter().map(|&(x, p)| x as f64 * p).sum();
        if mean.abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("{name}: mean {mean} is not 0")));
        }
        let x0 = support[0].0;
        let g = support.iter().fold(0, |g, &(x, _)| gcd(g, x - x0));
        if g != 1 {
            return Err(Error::InvalidLaw(format!(
                "{name}: support is periodic or degenerate (gcd of differences = {g})"
            )));
        }
        let sigma2: f64 = support.iter().map(|&(x, p)| (x as f64).powi(2) * p).sum();
        if !(domain.0 < 0.0 && 0.0 < domain.1) {
            return Err(Error::InvalidLaw(format!("{name}: domain must contain 0")));
        }
        Ok(Self {
            name,
            kind: StepKind::Lattice { support },
            mean: 0.0,
            sigma2,
            domain,
            truncation_radius,
            slope_margin: DEFAULT_SLOPE_MARGIN,
        })
    }

    /// Uniform on `{-1, 0, 1}`.
    pub fn uniform3() -> Self {
        let third = 1.0 / 3.0;
        Self::lattice("uniform3", &[(-1, third), (0, third), (1, third)]).expect("valid law")
    }

    /// Stays put with probability `q`, otherwise a fair ±1 step.
    pub fn lazy_srw(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidLaw(format!("lazy_srw({q}): need 0 < q < 1")));
        }
        let side = 0.5 * (1.0 - q);
        Self::lattice(format!("lazy_srw({q})"), &[(-1, side), (0, q), (1, side)])
    }

    /// `Binomial(2m, 1/2) - m`, supported on `{-m, …, m}`.
    pub fn centered_binomial(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidLaw(
                "centered_binomial(0) is degenerate".into(),
            ));
        }
        let trials = 2 * m as i64;
        let mut table = Vec::with_capacity(trials as usize + 1);
        let mut coeff = 1.0f64;
        let scale = 0.5f64.powi(trials as i32);
        for j in 0..=trials {
            table.push((j - m as i64, coeff * scale));
            coeff = coeff * (trials - j) as f64 / (j + 1) as f64;
        }
        Self::lattice(format!("centered_binomial({m})"), &table)
    }

    /// `P(X = x) ∝ r^{|x|}`, truncated at tail mass [`TRUNCATION_MASS`].
    pub fn two_sided_geometric(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidLaw(format!(
                "two_sided_geometric({r}): need 0 < r < 1"
            )));
        }
        // Mass beyond radius R is 2 r^{R+1} / (1 + r).
        let mut radius = 1i64;
        while 2.0 * r.powi(radius as i32 + 1) / (1.0 + r) > TRUNCATION_MASS {
            radius += 1;
        }
        let norm = (1.0 - r) / (1.0 + r);
        let raw: Vec<(i64, f64)> = (-radius..=radius)
            .map(|x| (x, norm * r.powi(x.abs() as i32)))
            .collect();
        let total: f64 = raw.iter().map(|&(_, p)| p).sum();
        let table: Vec<(i64, f64)> = raw.into_iter().map(|(x, p)| (x, p / total)).collect();
        let b = -r.ln();
        Self::lattice_with_domain(
            format!("two_sided_geometric({r})"),
            &table,
            (-b, b),
            Some(radius),
        )
    }

    /// `N(0, beta)`.
    pub fn gaussian(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidLaw(format!(
                "gaussian({beta}): need beta > 0"
            )));
        }
        Ok(Self {
            name: format!("gaussian({beta})"),
            kind: StepKind::Gaussian { mean: 0.0, beta },
            mean: 0.0,
            sigma2: beta,
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            truncation_radius: None,
            slope_margin: DEFAULT_SLOPE_MARGIN,
        })
    }

    /// Parses `uniform3`, `lazy_srw(q)`, `centered_binomial(m)`,
    /// `two_sided_geometric(r)` or `gaussian(beta)`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, arg) = match spec.find('(') {
            Some(open) => {
                let close = spec
                    .rfind(')')
                    .filter(|&c| c > open && c == spec.len() - 1)
                    .ok_or_else(|| Error::InvalidLaw(format!("malformed law `{spec}`")))?;
                (spec[..open].trim(), Some(spec[open + 1..close].trim()))
            }
            None => (spec, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::InvalidLaw(format!("`{head}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|_| Error::InvalidLaw(format!("bad parameter in `{spec}`")))
        };
        match head {
            "uniform3" if arg.is_none() => Ok(Self::uniform3()),
            "lazy_srw" => Self::lazy_srw(num(arg)?),
            "centered_binomial" => {
                let m = num(arg)?;
                if m.fract() != 0.0 || !(1.0..=1000.0).contains(&m) {
                    return Err(Error::InvalidLaw(format!(
                        "centered_binomial needs an integer m ≥ 1, got {m}"
                    )));
                }
                Self::centered_binomial(m as u32)
            }
            "two_sided_geometric" => Self::two_sided_geometric(num(arg)?),
            "gaussian" => Self::gaussian(num(arg)?),
            _ => Err(Error::InvalidLaw(format!("unknown step law `{spec}`"))),
        }
    }

    pub fn with_slope_margin(mut self, margin: f64) -> Self {
        self.slope_margin = margin;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &StepKind {
        &self.kind
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.kind, StepKind::Lattice { .. })
    }

    /// Probability table for lattice laws, `None` for the Gaussian.
    pub fn support(&self) -> Option<&[(i64, f64)]> {
        match &self.kind {
            StepKind::Lattice { support } => Some(support),
            StepKind::Gaussian { .. } => None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `(a_*, b_*)`.
    pub fn domain_bounds(&self) -> (f64, f64) {
        self.domain
    }

    pub fn truncation_radius(&self) -> Option<i64> {
        self.truncation_radius
    }

    pub fn slope_margin(&self) -> f64 {
        self.slope_margin
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if t.is_finite() && t > lo && t < hi {
            Ok(())
        } else {
            Err(Error::Domain { t, lo, hi })
        }
    }

    /// `H(t) = ln E e^{tX}`.
    pub fn cumulant(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match &self.kind {
            StepKind::Gaussian { mean, beta } => mean * t + 0.5 * beta * t * t,
            StepKind::Lattice { support } => {
                let shift = support
                    .iter()
                    .map(|&(x, _)| t * x as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = support
                    .iter()
                    .map(|&(x, p)| p * (t * x as f64 - shift).exp())
                    .sum();
                shift + s.ln()
            }
        })
    }

    /// `(H'(t), H''(t))` as the mean and variance of the law tilted by `t`.
    pub fn cumulant_derivatives(&self, t: f64) -> Result<(f64, f64)> {
        self.check_domain(t)?;
        Ok(match &self.kind {
            StepKind::Gaussian { mean, beta } => (mean + beta * t, *beta),
            StepKind::Lattice { support } => {
                let shift = support
                    .iter()
                    .map(|&(x, _)| t * x as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                let mut m1 = 0.0;
                for &(x, p) in support {
                    let w = p * (t * x as f64 - shift).exp();
                    z += w;
                    m1 += w * x as f64;
                }
                let mean = m1 / z;
                let var: f64 = support
                    .iter()
                    .map(|&(x, p)| p * (t * x as f64 - shift).exp() * (x as f64 - mean).powi(2))
                    .sum::<f64>()
                    / z;
                (mean, var)
            }
        })
    }

    fn slope_derivative(&self, t: f64) -> f64 {
        self.cumulant_derivatives(t)
            .map(|d| d.0)
            .unwrap_or(f64::NAN)
    }

    /// Solves `H'(γ) = m`.
    ///
    /// Newton with a bisection fallback on a bracket; `H'` is strictly
    /// increasing so the bracket always shrinks onto the root. Tilts closer
    /// than the slope margin to a finite domain edge are refused.
    pub fn invert_mean(&self, m: f64) -> Result<f64> {
        if !m.is_finite() {
            return Err(Error::Slope {
                slope: m,
                step: None,
            });
        }
        if let StepKind::Gaussian { mean, beta } = self.kind {
            return Ok((m - mean) / beta);
        }
        let (a, b) = self.domain;
        let slope_err = Error::Slope {
            slope: m,
            step: None,
        };
        let lo_edge = if a.is_finite() {
            a + self.slope_margin
        } else {
            f64::NEG_INFINITY
        };
        let hi_edge = if b.is_finite() {
            b - self.slope_margin
        } else {
            f64::INFINITY
        };

        let mut hi = if hi_edge.is_finite() { hi_edge } else { 1.0 };
        while self.slope_derivative(hi) <= m {
            if hi_edge.is_finite() || hi > 1e4 {
                return Err(slope_err);
            }
            hi *= 2.0;
        }
        let mut lo = if lo_edge.is_finite() { lo_edge } else { -1.0 };
        while self.slope_derivative(lo) >= m {
            if lo_edge.is_finite() || lo < -1e4 {
                return Err(slope_err);
            }
            lo *= 2.0;
        }

        let tol = 1e-12 * m.abs().max(1.0);
        let mut t = 0.0f64.clamp(lo, hi);
        let mut best = (f64::INFINITY, t);
        for _ in 0..NEWTON_MAX_ITER {
            let (d1, d2) = self.cumulant_derivatives(t)?;
            let f = d1 - m;
            if f.abs() < best.0 {
                best = (f.abs(), t);
            }
            if f.abs() <= tol {
                return Ok(t);
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = t - f / d2;
            t = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * t.abs().max(1.0) {
                break;
            }
        }
        let (residual, t) = best;
        if residual <= tol {
            Ok(t)
        } else {
            Err(Error::Convergence { slope: m, residual })
        }
    }

    /// `I(x) = sup_λ (λx − H(λ))`, evaluated at the maximiser `γ = (H')^{-1}(x)`.
    pub fn rate_function(&self, x: f64) -> Result<f64> {
        let g = self.invert_mean(x)?;
        Ok(g * x - self.cumulant(g)?)
    }

    /// The exponentially tilted law `e^{γx}/M(γ) P(X ∈ dx)`. Not recentred.
    pub fn tilt(&self, gamma: f64) -> Result<StepLaw> {
        self.check_domain(gamma)?;
        let (mean, var) = self.cumulant_derivatives(gamma)?;
        let kind = match &self.kind {
            StepKind::Gaussian { beta, .. } => StepKind::Gaussian { mean, beta: *beta },
            StepKind::Lattice { support } => {
                let h = self.cumulant(gamma)?;
                let raw: Vec<(i64, f64)> = support
                    .iter()
                    .map(|&(x, p)| (x, p * (gamma * x as f64 - h).exp()))
                    .collect();
                let total: f64 = raw.iter().map(|&(_, p)| p).sum();
                StepKind::Lattice {
                    support: raw.into_iter().map(|(x, p)| (x, p / total)).collect(),
                }
            }
        };
        Ok(StepLaw {
            name: format!("tilt({}, {gamma})", self.name),
            kind,
            mean,
            sigma2: var,
            domain: (self.domain.0 - gamma, self.domain.1 - gamma),
            truncation_radius: self.truncation_radius,
            slope_margin: self.slope_margin,
        })
    }

    /// `(offset, ln p_γ(offset))` for the lattice law tilted by `γ`.
    pub fn log_tilted_table(&self, gamma: f64) -> Result<Vec<(i64, f64)>> {
        let h = self.cumulant(gamma)?;
        match &self.kind {
            StepKind::Lattice { support } => Ok(support
                .iter()
                .map(|&(x, p)| (x, p.ln() + gamma * x as f64 - h))
                .collect()),
            StepKind::Gaussian { .. } => Err(Error::InvalidLaw(format!(
                "{} is not a lattice law",
                self.name
            ))),
        }
    }
}
