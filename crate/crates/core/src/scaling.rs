//! Parameter sweeps and exponent fits.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{
    alpha_p, bridge_covariance, estimate_alpha_p, free_field_covariances, tail_exponent,
    AlphaMethod, GibbsConfig,
};
use crate::kernel::{build_tables, KernelConfig, KernelTables};
use crate::numeric::geometric_grid;
use crate::obstacle::{discretize, tilt_schedule, ObstacleSpec};
use crate::step_law::StepLaw;

pub const DEFAULT_KERNEL_NS: [usize; 5] = [512, 1024, 2048, 4096, 8192];
pub const DEFAULT_GAUSSIAN_NS: [usize; 5] = [256, 512, 1024, 2048, 4096];
pub const EXPERIMENTS: [&str; 6] = [
    "ld_correction",
    "tails",
    "variance",
    "covariance",
    "alpha_p",
    "free_field",
];

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub r2: f64,
    pub points: usize,
}

fn least_squares(xs: &[f64], ys: &[f64], ws: &[f64]) -> Fit {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let syy: f64 = ys.iter().zip(ws).map(|(y, w)| w * (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let m = xs.len();
    let stderr = if m > 2 {
        (sse / (m - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Fit {
        slope,
        intercept,
        stderr,
        r2,
        points: m,
    }
}

/// OLS of `y` on `x`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<Fit> {
    let clean: Vec<_> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if clean.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: clean.len(),
        });
    }
    let xs: Vec<f64> = clean.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = clean.iter().map(|p| p.1).collect();
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    Ok(least_squares(&xs, &ys, &vec![1.0; xs.len()]))
}

/// OLS of `ln y` on `ln x`, using only points with `x, y > 0`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<Fit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: logs.len(),
        });
    }
    fit_linear(&logs)
}

/// Log-log fit weighted by `(y/σ_y)²`, for sampled values with standard errors.
pub fn fit_exponent_weighted(points: &[(f64, f64, f64)]) -> Result<Fit> {
    let kept: Vec<_> = points
        .iter()
        .filter(|(x, y, s)| *x > 0.0 && *y > 0.0 && *s > 0.0)
        .collect();
    if kept.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: kept.len(),
        });
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let ws: Vec<f64> = kept.iter().map(|p| (p.1 / p.2).powi(2)).collect();
    Ok(least_squares(&xs, &ys, &ws))
}

/// One line of `rows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub p: Option<f64>,
    pub value: f64,
    pub stderr: Option<f64>,
    pub valid: bool,
}

pub const CSV_HEADER: &str = "experiment,n,k,lambda,i,j,p,value,stderr,valid";

impl Row {
    fn new(experiment: &str, value: f64) -> Self {
        Row {
            experiment: experiment.to_string(),
            n: None,
            k: None,
            lambda: None,
            i: None,
            j: None,
            p: None,
            value,
            stderr: None,
            valid: value.is_finite(),
        }
    }

    pub fn csv_line(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            opt(&self.n),
            opt(&self.k),
            opt(&self.lambda),
            opt(&self.i),
            opt(&self.j),
            opt(&self.p),
            self.value,
            opt(&self.stderr),
            self.valid
        )
    }
}

pub fn rows_to_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// `|slope − target| ≤ tolerance`.
    Slope { target: f64, tolerance: f64 },
    /// Positive slope and `R² ≥ min_r2` for a linear fit.
    PositiveLinear { min_r2: f64 },
    /// `max/min` of a set of ratios below `max_factor`.
    BoundedRatio { max_factor: f64, observed: f64 },
    /// Every estimate within `sigmas` standard errors of its reference.
    AllWithin { sigmas: f64, worst: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub fit: Option<Fit>,
    pub criterion: Criterion,
    pub pass: bool,
}

impl Check {
    fn slope(name: impl Into<String>, fit: Result<Fit>, target: f64, tolerance: f64) -> Self {
        let fit = fit.ok();
        let pass = fit.is_some_and(|f| (f.slope - target).abs() <= tolerance);
        Check {
            name: name.into(),
            fit,
            criterion: Criterion::Slope { target, tolerance },
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport {
    pub experiment: String,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Whether dropping any single `n` leaves every slope check's verdict unchanged.
    pub leave_one_out_stable: Option<bool>,
    pub verdict: bool,
}

impl ExponentReport {
    fn new(experiment: &str, rows: Vec<Row>, checks: Vec<Check>) -> Self {
        let verdict = !checks.is_empty() && checks.iter().all(|c| c.pass);
        ExponentReport {
            experiment: experiment.into(),
            rows,
            checks,
            leave_one_out_stable: None,
            verdict,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Whether the slope verdict survives dropping each point in turn.
pub fn leave_one_out_stable(points: &[(f64, f64)], target: f64, tolerance: f64) -> bool {
    let full = fit_exponent(points)
        .map(|f| (f.slope - target).abs() <= tolerance)
        .unwrap_or(false);
    (0..points.len()).all(|skip| {
        let sub: Vec<_> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, p)| *p)
            .collect();
        fit_exponent(&sub)
            .map(|f| (f.slope - target).abs() <= tolerance)
            .unwrap_or(false)
            == full
    })
}

/// Shared inputs of the lattice experiments.
#[derive(Debug, Clone)]
pub struct KernelSetup {
    pub law: StepLaw,
    pub spec: ObstacleSpec,
    pub kernel: KernelConfig,
}

impl KernelSetup {
    pub fn tables(&self, n: usize) -> Result<KernelTables> {
        let profile = discretize(&self.spec, n)?;
        let schedule = tilt_schedule(&self.law, &profile)?;
        build_tables(&self.law, &profile, &schedule, self.kernel)
    }
}

fn tables_for(setup: &KernelSetup, ns: &[usize]) -> Vec<Result<KernelTables>> {
    ns.par_iter().map(|&n| setup.tables(n)).collect()
}

fn propagate_fatal<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(t) => Ok(Some(t)),
        Err(Error::MassLoss { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn ld_correction_experiment(setup: &KernelSetup, ns: &[usize]) -> Result<ExponentReport> {
    const TARGET: f64 = 1.0 / 3.0;
    const TOL: f64 = 0.08;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (&n, t) in ns.iter().zip(tables_for(setup, ns)) {
        let mut row = Row::new("ld_correction", f64::NAN);
        row.n = Some(n);
        if let Some(t) = propagate_fatal(t)? {
            row.value = -t.log_z;
            row.valid = true;
            points.push((n as f64, row.value));
        } else {
            row.valid = false;
        }
        rows.push(row);
    }
    let check = Check::slope("ld_exponent", fit_exponent(&points), TARGET, TOL);
    let mut report = ExponentReport::new("ld_correction", rows, vec![check]);
    report.leave_one_out_stable = Some(leave_one_out_stable(&points, TARGET, TOL));
    Ok(report)
}

/// Default tail window `[2, min(8, n^{1/6})]` with `count` evenly spaced points.
pub fn default_lambda_grid(n: usize, count: usize) -> Vec<f64> {
    let hi = 8f64.min((n as f64).powf(1.0 / 6.0)).max(2.0 + 1e-9);
    (0..count)
        .map(|i| 2.0 + (hi - 2.0) * i as f64 / (count - 1).max(1) as f64)
        .collect()
}

pub fn tail_experiment(
    setup: &KernelSetup,
    n: usize,
    k: usize,
    lambdas: &[f64],
) -> Result<ExponentReport> {
    let t = setup.tables(n)?;
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must be interior")));
    }
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &lambda in lambdas {
        let prob = t.tail(k, lambda);
        let value = -prob.ln();
        let mut row = Row::new("tails", value);
        row.n = Some(n);
        row.k = Some(k);
        row.lambda = Some(lambda);
        row.valid = prob > 0.0 && prob < 1.0;
        if row.valid {
            points.push((lambda, value));
        }
        rows.push(row);
    }
    let check = Check::slope("tail_exponent", fit_exponent(&points), 1.5, 0.15);
    Ok(ExponentReport::new("tails", rows, vec![check]))
}

/// Variance of `W_k` with `k = ⌊n·k_frac⌋`, plus moment ratios `E(W^r)/n^{r/3}`.
pub fn variance_experiment(
    setup: &KernelSetup,
    ns: &[usize],
    k_frac: f64,
) -> Result<ExponentReport> {
    const TARGET: f64 = 2.0 / 3.0;
    const TOL: f64 = 0.08;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut ratios: [Vec<f64>; 3] = Default::default();
    for (&n, t) in ns.iter().zip(tables_for(setup, ns)) {
        let k = ((n as f64 * k_frac).floor() as usize).clamp(1, n - 1);
        let t = propagate_fatal(t)?;
        let marginal = t.as_ref().map(|t| t.marginal(k));
        let mut row = Row::new(
            "variance",
            marginal.as_ref().map_or(f64::NAN, |m| m.variance()),
        );
        row.n = Some(n);
        row.k = Some(k);
        row.valid = marginal.is_some();
        if let Some(m) = &marginal {
            points.push((n as f64, m.variance()));
        }
        rows.push(row);
        for r in 1..=3u32 {
            let value = marginal
                .as_ref()
                .map_or(f64::NAN, |m| m.moment(r) / (n as f64).powf(r as f64 / 3.0));
            let mut row = Row::new(&format!("moment_ratio_{r}"), value);
            row.n = Some(n);
            row.k = Some(k);
            row.valid = marginal.is_some();
            if row.valid {
                ratios[r as usize - 1].push(value);
            }
            rows.push(row);
        }
    }
    let mut checks = vec![Check::slope(
        "variance_exponent",
        fit_exponent(&points),
        TARGET,
        TOL,
    )];
    for (r, vals) in ratios.iter().enumerate() {
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let observed = if min > 0.0 { max / min } else { f64::INFINITY };
        checks.push(Check {
            name: format!("moment_ratio_{}", r + 1),
            fit: None,
            criterion: Criterion::BoundedRatio {
                max_factor: 2.0,
                observed,
            },
            pass: vals.len() >= 2 && observed < 2.0,
        });
    }
    let mut report = ExponentReport::new("variance", rows, checks);
    report.leave_one_out_stable = Some(leave_one_out_stable(&points, TARGET, TOL));
    Ok(report)
}

/// Geometric separations from `n^{2/3}/8` to `8n^{2/3}`, keeping `j ≤ n − ⌈n^{2/3}⌉`.
pub fn default_separations(n: usize, i: usize, count: usize) -> Vec<usize> {
    let scale = (n as f64).powf(2.0 / 3.0);
    let limit = n.saturating_sub(scale.ceil() as usize).saturating_sub(i);
    let mut seps: Vec<usize> = geometric_grid(scale / 8.0, 8.0 * scale, count)
        .into_iter()
        .map(|d| (d.round() as usize).clamp(1, limit.max(1)))
        .collect();
    seps.dedup();
    seps
}

pub fn covariance_experiment(
    setup: &KernelSetup,
    n: usize,
    i: usize,
    seps: &[usize],
) -> Result<ExponentReport> {
    let t = setup.tables(n)?;
    let scale = (n as f64).powf(2.0 / 3.0);
    let results: Vec<(usize, f64)> = seps
        .par_iter()
        .filter(|&&d| i + d < n)
        .map(|&d| (d, t.covariance(i, i + d)))
        .collect();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (d, cov) in results {
        let value = -cov.abs().ln();
        let mut row = Row::new("covariance", value);
        row.n = Some(n);
        row.i = Some(i);
        row.j = Some(i + d);
        row.valid = cov != 0.0 && value.is_finite();
        if row.valid {
            points.push((d as f64 / scale, value));
        }
        rows.push(row);
    }
    let fit = fit_linear(&points).ok();
    let pass = fit.is_some_and(|f| f.slope > 0.0 && f.r2 >= 0.95);
    let check = Check {
        name: "covariance_decay".into(),
        fit,
        criterion: Criterion::PositiveLinear { min_r2: 0.95 },
        pass,
    };
    Ok(ExponentReport::new("covariance", rows, vec![check]))
}

/// `E(S_0 − n)` per `(p, n)` with exponent fits; the tail fit uses the largest `n`.
pub fn alpha_p_experiment(
    ps: &[f64],
    ns: &[usize],
    beta: f64,
    method: &AlphaMethod,
    tail_fit_ps: &[f64],
) -> Result<ExponentReport> {
    let per_p: Vec<_> = ps
        .par_iter()
        .map(|&p| estimate_alpha_p(p, ns, beta, method))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (&p, est) in ps.iter().zip(&per_p) {
        let mut points = Vec::new();
        let mut weighted = Vec::new();
        for r in est {
            let mut row = Row::new("alpha_p", r.mean);
            row.n = Some(r.n);
            row.p = Some(p);
            row.k = Some(0);
            row.stderr = (r.mean_se > 0.0).then_some(r.mean_se);
            row.valid = r.accepted && r.mean.is_finite();
            if row.valid {
                points.push((r.n as f64, r.mean));
                weighted.push((r.n as f64, r.mean, r.mean_se));
            }
            rows.push(row);
        }
        let target = alpha_p(p);
        if p == 1.0 {
            // Heights stay O(1): the slope of ln E vs ln n should vanish.
            checks.push(Check::slope(
                format!("alpha_p[p={p}]"),
                fit_exponent(&points),
                0.0,
                0.10,
            ));
        } else {
            checks.push(Check::slope(
                format!("alpha_p[p={p}]"),
                fit_exponent(&points),
                target,
                0.10,
            ));
        }
        if weighted.iter().all(|w| w.2 > 0.0) && !weighted.is_empty() {
            if let Ok(f) = fit_exponent_weighted(&weighted) {
                checks.push(Check {
                    name: format!("alpha_p_weighted[p={p}]"),
                    fit: Some(f),
                    criterion: Criterion::Slope {
                        target,
                        tolerance: 0.10,
                    },
                    pass: (f.slope - target).abs() <= 0.10,
                });
            }
        }
        if let Some(last) = est.last() {
            let mut tail_points = Vec::new();
            for tp in &last.tails {
                let value = -tp.prob.ln();
                let mut row = Row::new("alpha_p_tail", value);
                row.n = Some(last.n);
                row.p = Some(p);
                row.k = Some(0);
                row.lambda = Some(tp.lambda);
                row.valid = tp.prob > 0.0 && tp.prob < 1.0;
                if row.valid {
                    tail_points.push((tp.lambda, value));
                }
                rows.push(row);
            }
            if tail_fit_ps.contains(&p) {
                checks.push(Check::slope(
                    format!("tail_exponent[p={p}]"),
                    fit_exponent(&tail_points),
                    tail_exponent(p),
                    0.2,
                ));
            }
        }
    }
    Ok(ExponentReport::new("alpha_p", rows, checks))
}

/// Free-bridge covariances from the sampler against the closed form on `sites × sites`.
pub fn free_field_experiment(
    n: usize,
    beta: f64,
    sites: &[usize],
    chains: usize,
    config: &GibbsConfig,
) -> Result<ExponentReport> {
    let est = free_field_covariances(n, beta, sites, chains, config)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (a, &i) in sites.iter().enumerate() {
        for (b, &j) in sites.iter().enumerate() {
            let (value, se) = est[a][b];
            let z = (value - bridge_covariance(n, beta, i, j)).abs() / se;
            worst = worst.max(z);
            let mut row = Row::new("free_field", value);
            row.n = Some(n);
            row.i = Some(i);
            row.j = Some(j);
            row.stderr = Some(se);
            rows.push(row);
        }
    }
    let check = Check {
        name: "bridge_covariance".into(),
        fit: None,
        criterion: Criterion::AllWithin { sigmas: 4.0, worst },
        pass: worst <= 4.0,
    };
    Ok(ExponentReport::new("free_field", rows, vec![check]))
}
