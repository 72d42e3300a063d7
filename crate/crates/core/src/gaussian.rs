//! Gaussian-step walks above `h(x) = 1 − |x|^p`.
//!
//! The field lives on sites `0..=m` with pinned end values. Its law has
//! density `∝ exp(−Σ(φ_k − φ_{k−1})²/2β)` restricted to `φ_k ≥ g_k`; the
//! full conditional at an interior site is `N((φ_{k−1}+φ_{k+1})/2, β/2)`
//! truncated to `[g_k, ∞)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{open_unit, truncated_std_normal_quantile, HALF_LN_TWO_PI};

pub fn alpha_p(p: f64) -> f64 {
    (p - 1.0) / (2.0 * p - 1.0)
}

/// Stretched-exponential tail exponent `(2p − 1)/p`.
pub fn tail_exponent(p: f64) -> f64 {
    (2.0 * p - 1.0) / p
}

/// Covariance of a Gaussian bridge of length `n` pinned at zero.
pub fn bridge_covariance(n: usize, beta: f64, i: usize, j: usize) -> f64 {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    beta * (i as f64) * (n - j) as f64 / n as f64
}

fn log_q(t: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    x.ln() - 1.5 * t.ln() - HALF_LN_TWO_PI - x * x / (2.0 * t)
}

fn log_p(t: f64, x: f64, y: f64) -> f64 {
    if y <= 0.0 || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -0.5 * t.ln() - HALF_LN_TWO_PI - (x - y).powi(2) / (2.0 * t)
        + (-(-2.0 * x * y / t).exp_m1()).ln()
}

/// Log of the finite-dimensional density of a Brownian excursion of length
/// `l` at times `t_1 < … < t_m`.
pub fn log_excursion_density(l: f64, times: &[f64], heights: &[f64]) -> f64 {
    assert_eq!(
        times.len(),
        heights.len(),
        "times and heights must have equal length"
    );
    assert!(!times.is_empty(), "at least one time is required");
    let m = times.len();
    let mut acc = std::f64::consts::LN_2 + 0.5 * (2.0 * std::f64::consts::PI * l.powi(3)).ln();
    acc += log_q(times[0], heights[0]);
    for i in 1..m {
        acc += log_p(times[i] - times[i - 1], heights[i - 1], heights[i]);
    }
    acc + log_q(l - times[m - 1], heights[m - 1])
}

pub fn excursion_density(l: f64, times: &[f64], heights: &[f64]) -> f64 {
    log_excursion_density(l, times, heights).exp()
}

/// Upper bound on `P(S_k ≥ a)` for the Gaussian walk excursion of length
/// `n`, valid for `1 ≤ k ≤ n/2`.
pub fn excursion_tail_bound(n: usize, beta: f64, k: usize, a: f64) -> f64 {
    debug_assert!(k >= 1 && 2 * k <= n);
    let s = (beta * k as f64).sqrt();
    4.0 / std::f64::consts::PI.sqrt() * (a / s + s / a) * (-a * a / (2.0 * beta * k as f64)).exp()
}

/// `h_n`, `h_n^−` and `h_n^+` on `{−n, …, n}`; index `i` is site `i − n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PObstacles {
    pub p: f64,
    pub n: usize,
    pub l: usize,
    pub h: Vec<f64>,
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
    /// `2h⁺(i) − h⁺(i−1) − h⁺(i+1)`; zero at both ends.
    pub gamma: Vec<f64>,
}

impl PObstacles {
    /// Slope of the linear part of `h_n^+`.
    pub fn plus_slope(&self) -> f64 {
        plus_slope(self.p, self.n, self.l)
    }
}

fn plus_slope(p: f64, n: usize, l: usize) -> f64 {
    // powf gives 0^0 = 1, which is the convention needed at p = 1.
    p.powf(p) * (l as f64).powf(p - 1.0) / ((p - 1.0).powf(p - 1.0) * (n as f64).powf(p - 1.0))
}

pub fn p_obstacle_height(p: f64, n: usize, k: i64) -> f64 {
    let nf = n as f64;
    nf - (k.unsigned_abs() as f64).powf(p) / nf.powf(p - 1.0)
}

pub fn build_p_obstacles(p: f64, n: usize, l: usize) -> Result<PObstacles> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must be ≥ 1, got {p}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if p == 1.0 && l > 0 {
        return Err(Error::Degenerate(
            "p = 1 forces L = 0 in the upper construction".into(),
        ));
    }
    let nf = n as f64;
    if l as f64 > (p - 1.0) / p * nf + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "L = {l} exceeds (p−1)n/p = {}",
            (p - 1.0) / p * nf
        )));
    }
    let s = plus_slope(p, n, l);
    let knee = if p == 1.0 {
        0.0
    } else {
        p * l as f64 / (p - 1.0)
    };
    let h_l = p_obstacle_height(p, n, l as i64);
    let sites: Vec<i64> = (-(n as i64)..=n as i64).collect();
    let h: Vec<f64> = sites.iter().map(|&k| p_obstacle_height(p, n, k)).collect();
    let minus: Vec<f64> = sites
        .iter()
        .zip(&h)
        .map(|(&k, &v)| {
            if k.unsigned_abs() as usize <= l {
                h_l
            } else {
                v
            }
        })
        .collect();
    let plus: Vec<f64> = sites
        .iter()
        .zip(&h)
        .map(|(&k, &v)| {
            let x = k.unsigned_abs() as f64;
            if x <= l as f64 {
                nf
            } else if x <= knee {
                nf - s * (x - l as f64)
            } else {
                v
            }
        })
        .collect();
    let mut gamma = vec![0.0; plus.len()];
    for i in 1..plus.len() - 1 {
        gamma[i] = 2.0 * plus[i] - plus[i - 1] - plus[i + 1];
    }
    let tol = 1e-9 * nf;
    for i in 0..h.len() {
        if minus[i] > h[i] + tol || h[i] > plus[i] + tol {
            return Err(Error::Invariant(format!(
                "ordering h⁻ ≤ h ≤ h⁺ fails at site {}",
                sites[i]
            )));
        }
        if gamma[i] < -tol {
            return Err(Error::Invariant(format!(
                "h⁺ is not concave at site {}",
                sites[i]
            )));
        }
    }
    Ok(PObstacles {
        p,
        n,
        l,
        h,
        minus,
        plus,
        gamma,
    })
}

/// Gaussian field on sites `0..=m`, conditioned to stay above `obstacle`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub beta: f64,
    /// `g_k`, `−∞` where unconstrained. Only interior entries are enforced.
    pub obstacle: Vec<f64>,
    pub left: f64,
    pub right: f64,
    /// Size parameter: default thinning interval in sweeps.
    pub n: usize,
    /// Observable scale; the default coupling tolerance is `1e-3` times this.
    pub scale: f64,
}

impl GaussianField {
    pub fn new(beta: f64, obstacle: Vec<f64>, left: f64, right: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if obstacle.len() < 3 {
            return Err(Error::InvalidArgument(
                "a field needs at least one interior site".into(),
            ));
        }
        let m = obstacle.len() - 1;
        if left < obstacle[0] || right < obstacle[m] {
            return Err(Error::InvalidArgument(
                "boundary values lie below the obstacle".into(),
            ));
        }
        if obstacle.iter().any(|g| g.is_nan() || *g == f64::INFINITY) {
            return Err(Error::InvalidArgument(
                "obstacle values must be finite or −∞".into(),
            ));
        }
        Ok(GaussianField {
            beta,
            obstacle,
            left,
            right,
            n: m,
            scale: beta.sqrt(),
        })
    }

    /// Unconstrained bridge on `0..=n` pinned at zero.
    pub fn free_bridge(n: usize, beta: f64) -> Result<Self> {
        let mut f = Self::new(beta, vec![f64::NEG_INFINITY; n + 1], 0.0, 0.0)?;
        f.scale = 0.5 * (beta * n as f64).sqrt();
        Ok(f)
    }

    /// Field on `{−n, …, n}` above the given obstacle sequence, pinned at zero.
    pub fn over(beta: f64, obstacle: Vec<f64>, p: f64) -> Result<Self> {
        let n = (obstacle.len() - 1) / 2;
        let mut f = Self::new(beta, obstacle, 0.0, 0.0)?;
        f.n = n;
        f.scale = (n as f64).powf(alpha_p(p)) * beta.sqrt();
        Ok(f)
    }

    /// The field of interest: `h_n(k) = n − |k|^p/n^{p−1}` on `{−n, …, n}`.
    pub fn p_obstacle(p: f64, n: usize, beta: f64) -> Result<Self> {
        let h = (-(n as i64)..=n as i64)
            .map(|k| p_obstacle_height(p, n, k))
            .collect();
        Self::over(beta, h, p)
    }

    pub fn sites(&self) -> usize {
        self.obstacle.len()
    }

    fn low_state(&self, ceiling: f64) -> Vec<f64> {
        let m = self.obstacle.len() - 1;
        let mut v: Vec<f64> = self
            .obstacle
            .iter()
            .map(|&g| if g.is_finite() { g } else { -ceiling })
            .collect();
        v[0] = self.left;
        v[m] = self.right;
        v
    }

    fn high_state(&self, ceiling: f64) -> Vec<f64> {
        let m = self.obstacle.len() - 1;
        let mut v: Vec<f64> = self
            .obstacle
            .iter()
            .map(|&g| if g.is_finite() { g + ceiling } else { ceiling })
            .collect();
        v[0] = self.left;
        v[m] = self.right;
        v
    }

    fn default_ceiling(&self) -> f64 {
        let spread = (self.left - self.right).abs();
        4.0 * (self.beta * (self.obstacle.len() - 1) as f64).sqrt() + spread
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    /// Sweeps recorded after coupling (one sample every `thin` sweeps).
    pub sweeps: usize,
    /// Minimum number of sweeps before coupling is tested.
    pub burn_in: usize,
    pub max_sweeps: usize,
    pub coupling_tol: Option<f64>,
    pub thin: Option<usize>,
    /// Offset of the high starting replica above the obstacle.
    pub ceiling: Option<f64>,
    /// Site indices to record; empty records every site.
    pub observe: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            sweeps: 10_000,
            burn_in: 100,
            max_sweeps: 1_000_000,
            coupling_tol: None,
            thin: None,
            ceiling: None,
            observe: Vec::new(),
            seed: 0,
            stream: 0,
        }
    }
}

/// One heat-bath chain with its two sandwich replicas.
#[derive(Debug, Clone)]
pub struct GaussianChain<'a> {
    field: &'a GaussianField,
    pub current: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sweeps: usize,
    rng: ChaCha8Rng,
}

impl<'a> GaussianChain<'a> {
    pub fn new(field: &'a GaussianField, ceiling: f64, seed: u64, stream: u64) -> Self {
        let lower = field.low_state(ceiling);
        let upper = field.high_state(ceiling);
        let current = lower
            .iter()
            .zip(&upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianChain {
            field,
            current,
            lower,
            upper,
            sweeps: 0,
            rng,
        }
    }

    #[inline]
    fn update(state: &mut [f64], k: usize, g: f64, sigma: f64, u: f64) {
        let mean = 0.5 * (state[k - 1] + state[k + 1]);
        let a = if g.is_finite() {
            (g - mean) / sigma
        } else {
            f64::NEG_INFINITY
        };
        state[k] = (mean + sigma * truncated_std_normal_quantile(a, u)).max(g);
    }

    fn site(&mut self, k: usize, sigma: f64) {
        let u = open_unit(&mut self.rng);
        let g = self.field.obstacle[k];
        Self::update(&mut self.lower, k, g, sigma, u);
        Self::update(&mut self.current, k, g, sigma, u);
        Self::update(&mut self.upper, k, g, sigma, u);
    }

    /// Left-to-right then right-to-left pass.
    pub fn sweep(&mut self) {
        let sigma = (0.5 * self.field.beta).sqrt();
        let m = self.current.len() - 1;
        for k in 1..m {
            self.site(k, sigma);
        }
        for k in (1..m).rev() {
            self.site(k, sigma);
        }
        self.sweeps += 1;
    }

    pub fn gap(&self) -> f64 {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max)
    }

    pub fn ordered(&self) -> bool {
        self.lower
            .iter()
            .zip(&self.current)
            .zip(&self.upper)
            .all(|((l, c), u)| l <= c && c <= u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSamples {
    pub observe: Vec<usize>,
    /// `values[s][o]`: sample `s` at site `observe[o]`.
    pub values: Vec<Vec<f64>>,
    /// Sweep at which the sandwich gap first met the tolerance.
    pub coupled_at: usize,
    pub coupling_gap: f64,
    pub total_sweeps: usize,
    /// Sandwich gap after every sweep up to coupling.
    pub gap_trace: Vec<f64>,
    /// Whether `lower ≤ current ≤ upper` held at every recorded sweep.
    pub sandwich_ok: bool,
}

impl GibbsSamples {
    pub fn column(&self, o: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[o]).collect()
    }
}

pub fn gibbs_sample(field: &GaussianField, config: &GibbsConfig) -> Result<GibbsSamples> {
    let tol = config.coupling_tol.unwrap_or(1e-3 * field.scale);
    let thin = config.thin.unwrap_or(field.n).max(1);
    let ceiling = config.ceiling.unwrap_or_else(|| field.default_ceiling());
    if !(tol > 0.0 && ceiling > 0.0) {
        return Err(Error::InvalidArgument(
            "coupling tolerance and ceiling must be positive".into(),
        ));
    }
    let observe: Vec<usize> = if config.observe.is_empty() {
        (0..field.sites()).collect()
    } else {
        config.observe.clone()
    };
    if observe.iter().any(|&o| o >= field.sites()) {
        return Err(Error::InvalidArgument("observed site out of range".into()));
    }
    let mut chain = GaussianChain::new(field, ceiling, config.seed, config.stream);
    let mut gap_trace = Vec::new();
    let mut sandwich_ok = chain.ordered();
    loop {
        if chain.sweeps >= config.max_sweeps {
            return Err(Error::NotCoupled {
                sweeps: chain.sweeps,
                gap: chain.gap(),
                tol,
            });
        }
        chain.sweep();
        let gap = chain.gap();
        gap_trace.push(gap);
        sandwich_ok &= chain.ordered();
        if chain.sweeps >= config.burn_in && gap <= tol {
            break;
        }
    }
    let coupled_at = chain.sweeps;
    let coupling_gap = chain.gap();
    let mut values = Vec::with_capacity(config.sweeps / thin);
    for s in 1..=config.sweeps {
        chain.sweep();
        if s % thin == 0 {
            sandwich_ok &= chain.ordered();
            values.push(observe.iter().map(|&o| chain.current[o]).collect());
        }
    }
    Ok(GibbsSamples {
        observe,
        values,
        coupled_at,
        coupling_gap,
        total_sweeps: chain.sweeps,
        gap_trace,
        sandwich_ok,
    })
}

/// Result of a randomized Holley-condition check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HolleyReport {
    pub n: usize,
    pub trials: usize,
    /// Smallest `ln ν(x∨y) + ln μ(x∧y) − ln ν(y) − ln μ(x)`.
    pub min_slack: f64,
    /// Smallest `H(x) + H(y) − H(x∨y) − H(x∧y)`.
    pub min_bond_slack: f64,
    pub pass: bool,
}

fn dirichlet_energy(interior: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut acc = 0.0;
    for &v in interior.iter().chain(std::iter::once(&0.0)) {
        acc += 0.5 * (v - prev) * (v - prev);
        prev = v;
    }
    acc
}

/// Log-density of the positive walk excursion (unit potential) at interior heights.
fn log_walk(beta: f64, x: &[f64]) -> f64 {
    if x.iter().any(|&v| v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    -dirichlet_energy(x) / beta
}

/// Log-density of `√β` times the Brownian excursion sampled at integer times.
fn log_excursion_reference(beta: f64, y: &[f64]) -> f64 {
    let n = y.len() + 1;
    let times: Vec<f64> = (1..n).map(|t| t as f64).collect();
    let scaled: Vec<f64> = y.iter().map(|v| v / beta.sqrt()).collect();
    log_excursion_density(n as f64, &times, &scaled)
}

pub fn holley_slack(beta: f64, x: &[f64], y: &[f64]) -> (f64, f64) {
    let join: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.max(*b)).collect();
    let meet: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.min(*b)).collect();
    let slack = log_excursion_reference(beta, &join) + log_walk(beta, &meet)
        - log_excursion_reference(beta, y)
        - log_walk(beta, x);
    let bond = dirichlet_energy(x) + dirichlet_energy(y)
        - dirichlet_energy(&join)
        - dirichlet_energy(&meet);
    (slack, bond)
}

pub fn holley_check(n: usize, seed: u64, trials: usize) -> Result<HolleyReport> {
    if !(2..=12).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "holley_check supports 2 ≤ n ≤ 12, got {n}"
        )));
    }
    let beta = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (n as f64).sqrt();
    let mut min_slack = f64::INFINITY;
    let mut min_bond = f64::INFINITY;
    for _ in 0..trials {
        let x: Vec<f64> = (1..n).map(|_| scale * -open_unit(&mut rng).ln()).collect();
        let y: Vec<f64> = (1..n).map(|_| scale * -open_unit(&mut rng).ln()).collect();
        let (s, b) = holley_slack(beta, &x, &y);
        min_slack = min_slack.min(s);
        min_bond = min_bond.min(b);
    }
    let pass = min_slack >= -1e-12 && min_bond >= -1e-12;
    Ok(HolleyReport {
        n,
        trials,
        min_slack,
        min_bond_slack: min_bond,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Grid step in units of `√β`.
    pub dz: f64,
    /// Initial grid height above the obstacle; doubled until the top mass is negligible.
    pub zmax: Option<f64>,
    pub top_mass_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            dz: 0.1,
            zmax: None,
            top_mass_tol: 1e-13,
        }
    }
}

/// Density of `φ_site − g_site` on a uniform grid, normalised under the
/// trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMarginal {
    pub site: usize,
    pub dz: f64,
    pub density: Vec<f64>,
}

impl SiteMarginal {
    fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.density.len() {
            0.5 * self.dz
        } else {
            self.dz
        }
    }

    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.dz
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.density.len())
            .map(|j| self.weight(j) * self.density[j] * f(self.z(j)))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|z| z)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|z| (z - m) * (z - m))
    }

    /// `P(Z ≥ t)`, trapezoid rule with linear interpolation inside the cell.
    pub fn tail(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let last = self.density.len() - 1;
        let pos = t / self.dz;
        let j = pos.floor() as usize;
        if j >= last {
            return 0.0;
        }
        let frac = pos - j as f64;
        let d_t = self.density[j] + frac * (self.density[j + 1] - self.density[j]);
        let mut acc = 0.5 * (1.0 - frac) * self.dz * (d_t + self.density[j + 1]);
        for i in j + 1..last {
            acc += 0.5 * self.dz * (self.density[i] + self.density[i + 1]);
        }
        acc.clamp(0.0, 1.0)
    }

    /// Mass in the top tenth of the grid.
    pub fn top_mass(&self) -> f64 {
        let last = self.density.len() - 1;
        let start = last - last / 10;
        (start..=last)
            .map(|j| self.weight(j) * self.density[j])
            .sum()
    }
}

struct Band {
    lo: isize,
    ker: Vec<f64>,
}

fn step_band(shift: f64, beta: f64, dz: f64) -> Band {
    let sigma = beta.sqrt();
    let lo = ((-9.0 * sigma - shift) / dz).ceil() as isize;
    let hi = ((9.0 * sigma - shift) / dz).floor() as isize;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * beta).sqrt();
    let ker = (lo..=hi)
        .map(|m| {
            let u = m as f64 * dz + shift;
            norm * (-u * u / (2.0 * beta)).exp()
        })
        .collect();
    Band { lo, ker }
}

/// `out[i] = Σ_m ker[m]·src[i − m]` (`sign = 1`) or `Σ_m ker[m]·src[i + m]` (`sign = −1`).
fn convolve(band: &Band, src: &[f64], out: &mut [f64], forward: bool) {
    let len = src.len() as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (idx, &c) in band.ker.iter().enumerate() {
        let m = band.lo + idx as isize;
        let off = if forward { -m } else { m };
        let start = 0.max(-off);
        let end = len.min(len - off);
        if start >= end {
            continue;
        }
        let (s0, s1) = ((start + off) as usize, (end + off) as usize);
        for (o, s) in out[start as usize..end as usize]
            .iter_mut()
            .zip(&src[s0..s1])
        {
            *o += c * s;
        }
    }
}

fn normalise(v: &mut [f64]) {
    let m = v.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

fn quadrature_once(field: &GaussianField, site: usize, dz: f64, zmax: f64) -> SiteMarginal {
    let g = &field.obstacle;
    let m = g.len() - 1;
    let len = (zmax / dz).ceil() as usize + 1;
    let mut w = vec![dz; len];
    w[0] = 0.5 * dz;
    w[len - 1] = 0.5 * dz;
    let gauss = |u: f64| (-u * u / (2.0 * field.beta)).exp();
    let first = |anchor: f64, g_k: f64| -> Vec<f64> {
        (0..len)
            .map(|j| gauss(j as f64 * dz + g_k - anchor))
            .collect()
    };

    let mut scratch = vec![0.0; len];
    let mut fwd = first(field.left, g[1]);
    normalise(&mut fwd);
    for k in 2..=site {
        let band = step_band(g[k] - g[k - 1], field.beta, dz);
        let src: Vec<f64> = fwd.iter().zip(&w).map(|(f, w)| f * w).collect();
        convolve(&band, &src, &mut scratch, true);
        std::mem::swap(&mut fwd, &mut scratch);
        normalise(&mut fwd);
    }
    let mut bwd = first(field.right, g[m - 1]);
    normalise(&mut bwd);
    for k in (site..m - 1).rev() {
        let band = step_band(g[k + 1] - g[k], field.beta, dz);
        let src: Vec<f64> = bwd.iter().zip(&w).map(|(b, w)| b * w).collect();
        convolve(&band, &src, &mut scratch, false);
        std::mem::swap(&mut bwd, &mut scratch);
        normalise(&mut bwd);
    }
    let mut density: Vec<f64> = fwd.iter().zip(&bwd).map(|(f, b)| f * b).collect();
    let total: f64 = density.iter().zip(&w).map(|(d, w)| d * w).sum();
    density.iter_mut().for_each(|d| *d /= total);
    SiteMarginal { site, dz, density }
}

/// Marginal law of `φ_site − g_site` by a trapezoid transfer chain on the
/// heights above the obstacle.
pub fn quadrature_marginal(
    field: &GaussianField,
    site: usize,
    config: &QuadratureConfig,
) -> Result<SiteMarginal> {
    let m = field.obstacle.len() - 1;
    if site == 0 || site >= m {
        return Err(Error::InvalidArgument(
            "quadrature site must be interior".into(),
        ));
    }
    if field.obstacle[1..m].iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(
            "quadrature needs a finite obstacle at every interior site".into(),
        ));
    }
    if !(config.dz > 0.0) {
        return Err(Error::InvalidArgument(
            "quadrature dz must be positive".into(),
        ));
    }
    let dz = config.dz * field.beta.sqrt();
    let mut zmax = config.zmax.unwrap_or_else(|| {
        14.0 * field.scale.max((field.n as f64).cbrt()) + 10.0 * field.beta.sqrt()
    });
    for _ in 0..8 {
        let marginal = quadrature_once(field, site, dz, zmax);
        if marginal.top_mass() <= config.top_mass_tol {
            return Ok(marginal);
        }
        zmax *= 2.0;
    }
    Err(Error::Convergence {
        slope: zmax,
        residual: config.top_mass_tol,
    })
}

/// Point of a tail curve `P(S_0 − n ≥ λ·n^{α_p})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub lambda: f64,
    pub prob: f64,
    /// Exceedance count for sampled estimates.
    pub exceedances: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub p: f64,
    pub n: usize,
    pub mean: f64,
    /// Zero for deterministic estimates.
    pub mean_se: f64,
    pub variance: f64,
    pub tails: Vec<TailPoint>,
    pub sweeps: usize,
    pub coupling_gap: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaMethod {
    Gibbs(GibbsConfig),
    Quadrature(QuadratureConfig),
}

/// Tail grid start and ratio.
pub const TAIL_LAMBDA_START: f64 = 1.0;
pub const TAIL_LAMBDA_RATIO: f64 = 4.0 / 3.0;
/// Minimum number of exceedances for a sampled tail point.
pub const TAIL_MIN_EXCEEDANCES: usize = 50;
/// Deterministic tails stop at the probability that 50 exceedances in
/// `10^5` samples would resolve.
pub const TAIL_MIN_PROB: f64 = 5e-4;
const TAIL_MAX_POINTS: usize = 40;

fn lambda_grid() -> impl Iterator<Item = f64> {
    (0..TAIL_MAX_POINTS).map(|i| TAIL_LAMBDA_START * TAIL_LAMBDA_RATIO.powi(i as i32))
}

fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.min(xs.len());
    if b < 2 {
        return f64::NAN;
    }
    let size = xs.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Height of the field above the obstacle peak at the central site, for each `n`.
pub fn estimate_alpha_p(
    p: f64,
    ns: &[usize],
    beta: f64,
    method: &AlphaMethod,
) -> Result<Vec<AlphaRow>> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be ≥ 1, got {p}")));
    }
    ns.par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let field = GaussianField::p_obstacle(p, n, beta)?;
            let unit = (n as f64).powf(alpha_p(p));
            match method {
                AlphaMethod::Quadrature(q) => {
                    let m = quadrature_marginal(&field, n, q)?;
                    let tails = lambda_grid()
                        .map(|lambda| TailPoint {
                            lambda,
                            prob: m.tail(lambda * unit),
                            exceedances: None,
                        })
                        .take_while(|t| t.prob >= TAIL_MIN_PROB)
                        .collect();
                    Ok(AlphaRow {
                        p,
                        n,
                        mean: m.mean(),
                        mean_se: 0.0,
                        variance: m.variance(),
                        tails,
                        sweeps: 0,
                        coupling_gap: 0.0,
                        accepted: true,
                    })
                }
                AlphaMethod::Gibbs(cfg) => {
                    let cfg = GibbsConfig {
                        observe: vec![n],
                        stream: cfg.stream + idx as u64,
                        ..cfg.clone()
                    };
                    let s = gibbs_sample(&field, &cfg)?;
                    let heights: Vec<f64> =
                        s.column(0).iter().map(|v| v - field.obstacle[n]).collect();
                    let count = heights.len().max(1) as f64;
                    let mean = heights.iter().sum::<f64>() / count;
                    let variance = heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>()
                        / (count - 1.0).max(1.0);
                    let tails = lambda_grid()
                        .map(|lambda| {
                            let e = heights.iter().filter(|&&h| h >= lambda * unit).count();
                            TailPoint {
                                lambda,
                                prob: e as f64 / count,
                                exceedances: Some(e),
                            }
                        })
                        .take_while(|t| t.exceedances.unwrap_or(0) >= TAIL_MIN_EXCEEDANCES)
                        .collect();
                    Ok(AlphaRow {
                        p,
                        n,
                        mean,
                        mean_se: batch_se(&heights, 20),
                        variance,
                        tails,
                        sweeps: s.total_sweeps,
                        coupling_gap: s.coupling_gap,
                        accepted: s.sandwich_ok,
                    })
                }
            }
        })
        .collect()
}

/// Draws `count` independent free-bridge chains and returns the pooled
/// covariance estimates with across-chain standard errors on `sites × sites`.
pub fn free_field_covariances(
    n: usize,
    beta: f64,
    sites: &[usize],
    chains: usize,
    config: &GibbsConfig,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let field = GaussianField::free_bridge(n, beta)?;
    let runs: Vec<GibbsSamples> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let cfg = GibbsConfig {
                observe: sites.to_vec(),
                stream: config.stream + c as u64,
                ..config.clone()
            };
            gibbs_sample(&field, &cfg)
        })
        .collect::<Result<_>>()?;
    if runs.iter().any(|r| !r.sandwich_ok) {
        return Err(Error::Invariant("sandwich ordering violated".into()));
    }
    let total: usize = runs.iter().map(|r| r.values.len()).sum();
    let d = sites.len();
    let mut mean = vec![0.0; d];
    for r in &runs {
        for row in &r.values {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / total as f64;
            }
        }
    }
    let mut out = vec![vec![(0.0, 0.0); d]; d];
    for a in 0..d {
        for b in 0..d {
            let per_chain: Vec<f64> = runs
                .iter()
                .map(|r| {
                    r.values
                        .iter()
                        .map(|row| (row[a] - mean[a]) * (row[b] - mean[b]))
                        .sum::<f64>()
                        / r.values.len() as f64
                })
                .collect();
            let c = per_chain.len() as f64;
            let mu = per_chain.iter().sum::<f64>() / c;
            let var = per_chain.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (c - 1.0);
            out[a][b] = (mu, (var / c).sqrt());
        }
    }
    Ok(out)
}

/// Outcome of the empirical stochastic-domination test at the central site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    /// `(x, F_low(x) − F_high(x), standard error)` at each grid point.
    pub points: Vec<(f64, f64, f64)>,
    /// Most negative `(F_low − F_high)/se`.
    pub worst_z: f64,
    pub pass: bool,
}

fn central_heights(
    field: &GaussianField,
    n: usize,
    chains: usize,
    config: &GibbsConfig,
    offset: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let cfg = GibbsConfig {
                observe: vec![n],
                stream: config.stream + offset + c as u64,
                ..config.clone()
            };
            gibbs_sample(field, &cfg).map(|s| s.column(0))
        })
        .collect()
}

/// Checks that `S_0` under `h_n^−` is stochastically below `S_0` under `h_n`:
/// the empirical CDFs satisfy `F_{h⁻}(x) ≥ F_h(x) − sigmas·se` on a grid of
/// pooled deciles.
pub fn domination_check(
    p: f64,
    n: usize,
    l: usize,
    beta: f64,
    chains: usize,
    config: &GibbsConfig,
    sigmas: f64,
) -> Result<DominationReport> {
    let obs = build_p_obstacles(p, n, l)?;
    let low = GaussianField::over(beta, obs.minus.clone(), p)?;
    let high = GaussianField::over(beta, obs.h.clone(), p)?;
    let a = central_heights(&low, n, chains, config, 0)?;
    let b = central_heights(&high, n, chains, config, chains as u64)?;
    let mut pooled: Vec<f64> = a.iter().chain(&b).flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let cdf = |runs: &[Vec<f64>], x: f64| -> (f64, f64) {
        let per: Vec<f64> = runs
            .iter()
            .map(|r| r.iter().filter(|&&v| v <= x).count() as f64 / r.len() as f64)
            .collect();
        let c = per.len() as f64;
        let mu = per.iter().sum::<f64>() / c;
        let var = per.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (c - 1.0);
        (mu, var / c)
    };
    let mut points = Vec::new();
    let mut worst_z = f64::INFINITY;
    for d in 1..10 {
        let x = pooled[d * pooled.len() / 10];
        let (fa, va) = cdf(&a, x);
        let (fb, vb) = cdf(&b, x);
        let se = (va + vb).sqrt().max(1e-12);
        worst_z = worst_z.min((fa - fb) / se);
        points.push((x, fa - fb, se));
    }
    Ok(DominationReport {
        points,
        worst_z,
        pass: worst_z >= -sigmas,
    })
}

/// Standard-normal draw for tests and callers that want one.
pub fn normal_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    truncated_std_normal_quantile(f64::NEG_INFINITY, open_unit(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson;
    use proptest::prelude::*;

    #[test]
    fn exponent_helpers() {
        assert!((alpha_p(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(alpha_p(1.0), 0.0);
        assert!((alpha_p(3.0) - 0.4).abs() < 1e-15);
        assert!((alpha_p(1.5) - 0.25).abs() < 1e-15);
        assert!((tail_exponent(3.0) - 5.0 / 3.0).abs() < 1e-15);
        assert!((tail_exponent(2.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn bridge_covariance_examples() {
        assert_eq!(bridge_covariance(10, 2.0, 0, 7), 0.0);
        assert_eq!(bridge_covariance(10, 2.0, 5, 5), 2.0 * 10.0 / 4.0);
        for (i, j) in [(1, 3), (2, 9), (4, 4)] {
            assert_eq!(
                bridge_covariance(10, 1.3, i, j),
                bridge_covariance(10, 1.3, 10 - j, 10 - i)
            );
        }
    }

    #[test]
    fn excursion_density_examples() {
        assert_eq!(excursion_density(5.0, &[1.0, 2.0], &[-1.0, 1.0]), 0.0);
        let l = 12.0_f64;
        let t = 6.0;
        for x in [0.3, 1.0, 2.4, 5.0] {
            let direct = 2.0 / (2.0 * std::f64::consts::PI).sqrt()
                * (l / ((l - t) * t)).powf(1.5_f64)
                * x
                * x
                * (-x * x / (2.0 * t) - x * x / (2.0 * (l - t))).exp();
            assert!((excursion_density(l, &[t], &[x]) - direct).abs() < 1e-14);
        }
        // Maximiser √(L/2): the derivative changes sign there.
        let xm = (l / 2.0).sqrt();
        let f = |x: f64| excursion_density(l, &[t], &[x]);
        assert!(f(xm) > f(xm - 1e-4) && f(xm) > f(xm + 1e-4));
    }

    #[test]
    fn excursion_two_time_marginal_integrates_to_one_time() {
        let (l, t1, t2, x1) = (5.0_f64, 1.5, 3.0, 0.9);
        let joint = adaptive_simpson(
            |y| excursion_density(l, &[t1, t2], &[x1, y]),
            0.0,
            30.0,
            1e-12,
        );
        assert!((joint - excursion_density(l, &[t1], &[x1])).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn excursion_marginal_normalises(l in 0.5f64..50.0, frac in 0.02f64..0.98) {
            let t = frac * l;
            let width = (t * (l - t) / l).sqrt();
            let v = adaptive_simpson(|x| excursion_density(l, &[t], &[x]), 0.0, 15.0 * width, 1e-11);
            prop_assert!((v - 1.0).abs() < 1e-8, "l={l} t={t} v={v}");
        }

        #[test]
        fn p_obstacle_ordering(p in 1.0f64..4.0, n in 2usize..200, frac in 0.0f64..1.0) {
            let lmax = ((p - 1.0) / p * n as f64).floor() as usize;
            let l = if p == 1.0 { 0 } else { (frac * lmax as f64).floor() as usize };
            let o = build_p_obstacles(p, n, l).unwrap();
            for i in 0..o.h.len() {
                prop_assert!(o.minus[i] <= o.h[i] + 1e-9 * n as f64);
                prop_assert!(o.h[i] <= o.plus[i] + 1e-9 * n as f64);
                prop_assert!(o.gamma[i] >= -1e-9 * n as f64);
            }
        }
    }

    #[test]
    fn tail_bound_examples() {
        let n = 50;
        let k = 25;
        let a = (k as f64).sqrt();
        let expect = 4.0 / std::f64::consts::PI.sqrt() * 2.0 * (-0.5f64).exp();
        assert!((excursion_tail_bound(n, 1.0, k, a) - expect).abs() < 1e-14);
        assert!(excursion_tail_bound(n, 1.0, k, 1e3) < 1e-300);
    }

    #[test]
    fn p_obstacle_constructions() {
        let n = 40;
        let o = build_p_obstacles(3.0, n, 10).unwrap();
        let s = 27.0 * 100.0 / (4.0 * 1600.0);
        assert!((o.plus_slope() - s).abs() < 1e-12);
        assert!((o.gamma[n + 10] - s).abs() < 1e-9);
        assert!((o.gamma[n - 10] - s).abs() < 1e-9);
        // p = 2, L = n/2: tangent line meets h only at the ends.
        let q = build_p_obstacles(2.0, n, n / 2).unwrap();
        assert!((q.plus[0] - q.h[0]).abs() < 1e-12 && (q.plus[2 * n] - q.h[2 * n]).abs() < 1e-12);
        assert!(q.plus[1] > q.h[1]);
        assert!(matches!(
            build_p_obstacles(1.0, n, 3),
            Err(Error::Degenerate(_))
        ));
        let flat = build_p_obstacles(1.0, n, 0).unwrap();
        assert_eq!(flat.plus, flat.h);
        assert!(build_p_obstacles(2.0, n, n).is_err());
        assert!(build_p_obstacles(0.5, n, 0).is_err());
    }

    #[test]
    fn sandwich_gap_never_grows() {
        let field = GaussianField::p_obstacle(2.0, 10, 1.0).unwrap();
        let cfg = GibbsConfig {
            sweeps: 200,
            burn_in: 300,
            seed: 3,
            ..Default::default()
        };
        let s = gibbs_sample(&field, &cfg).unwrap();
        assert!(s.sandwich_ok);
        assert!(s.coupled_at >= 300);
        for w in s.gap_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_eq!(s.values.len(), 20);
        assert!(s
            .values
            .iter()
            .flatten()
            .zip(field.obstacle.iter().cycle())
            .all(|(v, g)| *v >= *g));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let field = GaussianField::free_bridge(40, 1.0).unwrap();
        let cfg = GibbsConfig {
            max_sweeps: 5,
            ..Default::default()
        };
        assert!(matches!(
            gibbs_sample(&field, &cfg),
            Err(Error::NotCoupled { sweeps: 5, .. })
        ));
    }

    #[test]
    fn positive_obstacle_lifts_mean() {
        let field = GaussianField::new(1.0, vec![0.0; 13], 0.0, 0.0).unwrap();
        let cfg = GibbsConfig {
            sweeps: 6000,
            seed: 11,
            thin: Some(3),
            ..Default::default()
        };
        let s = gibbs_sample(&field, &cfg).unwrap();
        for k in 1..12 {
            let col: Vec<f64> = s.values.iter().map(|r| r[k]).collect();
            assert!(col.iter().sum::<f64>() / col.len() as f64 > 0.0);
        }
    }

    #[test]
    fn excursion_tails_sit_below_bound() {
        let n = 16;
        let k = 8;
        let field = GaussianField::new(1.0, vec![0.0; n + 1], 0.0, 0.0).unwrap();
        let cfg = GibbsConfig {
            sweeps: 40_000,
            seed: 5,
            thin: Some(4),
            observe: vec![k],
            ..Default::default()
        };
        let s = gibbs_sample(&field, &cfg).unwrap();
        let col = s.column(0);
        for a in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let p = col.iter().filter(|&&v| v >= a).count() as f64 / col.len() as f64;
            let se = (p * (1.0 - p) / col.len() as f64).sqrt();
            assert!(
                p <= excursion_tail_bound(n, 1.0, k, a) + 4.0 * se,
                "a={a} p={p}"
            );
        }
    }

    #[test]
    fn holley_degenerate_pairs() {
        let x = [0.5, 1.2, 2.0, 0.7, 0.1];
        let (s, b) = holley_slack(1.0, &x, &x);
        assert!(s.abs() < 1e-12 && b.abs() < 1e-12);
        let y = [0.9, 1.5, 2.0, 3.0, 0.4];
        let (s, b) = holley_slack(1.0, &x, &y);
        assert!(b.abs() < 1e-12);
        assert!(s >= -1e-12);
    }

    #[test]
    fn holley_randomized() {
        for n in [2, 3, 6, 12] {
            let r = holley_check(n, 42, 2000).unwrap();
            assert!(r.pass, "{r:?}");
        }
        assert!(holley_check(13, 0, 1).is_err());
    }

    #[test]
    fn quadrature_matches_gibbs_small() {
        let field = GaussianField::p_obstacle(2.0, 8, 1.0).unwrap();
        let q = quadrature_marginal(&field, 8, &QuadratureConfig::default()).unwrap();
        let cfg = GibbsConfig {
            sweeps: 80_000,
            seed: 9,
            thin: Some(2),
            observe: vec![8],
            ..Default::default()
        };
        let s = gibbs_sample(&field, &cfg).unwrap();
        let h: Vec<f64> = s.column(0).iter().map(|v| v - 8.0).collect();
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let se = batch_se(&h, 20);
        assert!(
            (mean - q.mean()).abs() < 4.0 * se,
            "gibbs {mean} ± {se}, quadrature {}",
            q.mean()
        );
    }

    #[test]
    fn quadrature_grid_refinement() {
        let field = GaussianField::p_obstacle(2.0, 64, 1.0).unwrap();
        let coarse = quadrature_marginal(
            &field,
            64,
            &QuadratureConfig {
                dz: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let fine = quadrature_marginal(
            &field,
            64,
            &QuadratureConfig {
                dz: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let finer = quadrature_marginal(
            &field,
            64,
            &QuadratureConfig {
                dz: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        let e1 = (coarse.mean() - finer.mean()).abs();
        let e2 = (fine.mean() - finer.mean()).abs();
        assert!(e2 < 0.4 * e1, "{e1} {e2}");
        assert!(e2 / finer.mean() < 1e-3);
        assert!((finer.tail(0.0) - 1.0).abs() < 1e-12);
        assert!(finer.tail(1e6) == 0.0);
    }

    #[test]
    fn free_bridge_quadrature_unavailable() {
        let field = GaussianField::free_bridge(10, 1.0).unwrap();
        assert!(quadrature_marginal(&field, 5, &QuadratureConfig::default()).is_err());
    }
}
