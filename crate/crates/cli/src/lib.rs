//! Experiment dispatch and output writing for the `obstacle-walk` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use obstacle_walk::gaussian::{AlphaMethod, GibbsConfig, QuadratureConfig};
use obstacle_walk::kernel::KernelConfig;
use obstacle_walk::scaling::{self, ExponentReport, KernelSetup, Row};

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig, SamplerMethod};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] obstacle_walk::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn kernel_setup(c: &RunConfig) -> Result<KernelSetup, RunError> {
    Ok(KernelSetup {
        law: c.law()?,
        spec: c.obstacle()?,
        kernel: KernelConfig {
            k_cap: c.k_cap,
            mass_tol: c.mass_tol,
        },
    })
}

fn gibbs_config(c: &RunConfig) -> GibbsConfig {
    GibbsConfig {
        sweeps: c.sweeps,
        burn_in: c.burn_in,
        max_sweeps: c.max_sweeps,
        coupling_tol: c.coupling_tol,
        thin: c.thin,
        seed: c.seed,
        ..Default::default()
    }
}

/// Runs the configured experiment in the current thread pool.
pub fn run_experiment(c: &RunConfig) -> Result<ExponentReport, RunError> {
    let report = match c.experiment.as_str() {
        "ld_correction" => {
            let ns = c
                .grid_n
                .clone()
                .unwrap_or(scaling::DEFAULT_KERNEL_NS.to_vec());
            scaling::ld_correction_experiment(&kernel_setup(c)?, &ns)?
        }
        "tails" => {
            let n = c.obstacle_n.unwrap_or(8192);
            let k = ((n as f64 * c.grid_k) as usize).clamp(1, n - 1);
            let lambdas = c
                .grid_lambda
                .clone()
                .unwrap_or_else(|| scaling::default_lambda_grid(n, 17));
            scaling::tail_experiment(&kernel_setup(c)?, n, k, &lambdas)?
        }
        "variance" => {
            let ns = c
                .grid_n
                .clone()
                .unwrap_or(scaling::DEFAULT_KERNEL_NS.to_vec());
            scaling::variance_experiment(&kernel_setup(c)?, &ns, c.grid_k)?
        }
        "covariance" => {
            let n = c.obstacle_n.unwrap_or(4096);
            let i = ((n as f64 * c.grid_k) as usize).clamp(1, n - 1);
            let seps = c
                .grid_separations
                .clone()
                .unwrap_or_else(|| scaling::default_separations(n, i, 12));
            scaling::covariance_experiment(&kernel_setup(c)?, n, i, &seps)?
        }
        "alpha_p" => {
            let ns = c
                .grid_n
                .clone()
                .unwrap_or(scaling::DEFAULT_GAUSSIAN_NS.to_vec());
            let method = match c.sampler_method {
                SamplerMethod::Quadrature => AlphaMethod::Quadrature(QuadratureConfig {
                    dz: c.dz,
                    zmax: c.zmax,
                    ..Default::default()
                }),
                SamplerMethod::Gibbs => AlphaMethod::Gibbs(gibbs_config(c)),
            };
            scaling::alpha_p_experiment(&c.grid_p, &ns, c.beta, &method, &[2.0])?
        }
        "free_field" => {
            let n = c.obstacle_n.unwrap_or(16);
            let sites = c
                .grid_sites
                .clone()
                .unwrap_or_else(|| (1..=5).map(|q| (q * n / 6).max(1)).collect());
            if sites.iter().any(|&s| s == 0 || s >= n) {
                return Err(ConfigError {
                    line: None,
                    key: "grid.sites".into(),
                    message: "sites must be interior".into(),
                }
                .into());
            }
            scaling::free_field_experiment(n, c.beta, &sites, c.chains, &gibbs_config(c))?
        }
        other => unreachable!("experiment `{other}` passed validation"),
    };
    Ok(report)
}

/// Whitespace-separated plot data: a `#` header line, then one row per point.
pub fn plot_data(report: &ExponentReport) -> String {
    let mut out = String::new();
    let fit = report.checks.first().and_then(|c| c.fit);
    let fitted = |x: f64, log: bool| match fit {
        Some(f) if log => (f.intercept + f.slope * x.ln()).exp(),
        Some(f) => f.intercept + f.slope * x,
        None => f64::NAN,
    };
    let valid = report.rows.iter().filter(|r| r.valid);
    match report.experiment.as_str() {
        "ld_correction" | "variance" => {
            out.push_str("# n value fit\n");
            for r in valid.filter(|r| r.experiment == report.experiment) {
                let n = r.n.unwrap_or(0) as f64;
                let _ = writeln!(out, "{n} {} {}", r.value, fitted(n, true));
            }
        }
        "tails" => {
            out.push_str("# lambda minus_log_tail fit\n");
            for r in valid {
                let l = r.lambda.unwrap_or(f64::NAN);
                let _ = writeln!(out, "{l} {} {}", r.value, fitted(l, true));
            }
        }
        "covariance" => {
            out.push_str("# scaled_separation minus_log_abs_cov fit\n");
            for r in valid {
                let n = r.n.unwrap_or(1) as f64;
                let x = (r.j.unwrap_or(0) - r.i.unwrap_or(0)) as f64 / n.powf(2.0 / 3.0);
                let _ = writeln!(out, "{x} {} {}", r.value, fitted(x, false));
            }
        }
        "alpha_p" => {
            out.push_str("# p n mean stderr\n");
            for r in valid.filter(|r| r.experiment == "alpha_p") {
                let _ = writeln!(
                    out,
                    "{} {} {} {}",
                    r.p.unwrap_or(f64::NAN),
                    r.n.unwrap_or(0),
                    r.value,
                    r.stderr.unwrap_or(0.0)
                );
            }
        }
        "free_field" => {
            out.push_str("# i j estimate stderr exact\n");
            for r in valid {
                let (n, i, j) = (r.n.unwrap_or(0), r.i.unwrap_or(0), r.j.unwrap_or(0));
                let exact = obstacle_walk::gaussian::bridge_covariance(n, 1.0, i, j);
                let _ = writeln!(
                    out,
                    "{i} {j} {} {} {exact}",
                    r.value,
                    r.stderr.unwrap_or(0.0)
                );
            }
        }
        _ => {}
    }
    out
}

/// Writes `rows.csv`, `report.json` and `<experiment>.dat` into `dir`.
pub fn write_outputs(report: &ExponentReport, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rows.csv"), scaling::rows_to_csv(&report.rows))?;
    let json = serde_json::to_string_pretty(&JsonReport::from(report)).expect("report serialises");
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(
        dir.join(format!("{}.dat", report.experiment)),
        plot_data(report),
    )?;
    Ok(())
}

#[derive(serde::Serialize)]
struct JsonReport<'a> {
    experiment: &'a str,
    verdict: &'static str,
    leave_one_out_stable: Option<bool>,
    checks: &'a [scaling::Check],
    rows: &'a [Row],
}

impl<'a> From<&'a ExponentReport> for JsonReport<'a> {
    fn from(r: &'a ExponentReport) -> Self {
        JsonReport {
            experiment: &r.experiment,
            verdict: if r.verdict { "pass" } else { "fail" },
            leave_one_out_stable: r.leave_one_out_stable,
            checks: &r.checks,
            rows: &r.rows,
        }
    }
}

/// Runs a configuration end to end and returns the process exit code.
pub fn run(config: &RunConfig) -> Result<i32, RunError> {
    let threads = config.effective_threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let report = pool.install(|| run_experiment(config))?;
    write_outputs(&report, &config.output)?;
    for c in &report.checks {
        let slope = c
            .fit
            .map(|f| format!(" slope={:.4} r2={:.4}", f.slope, f.r2))
            .unwrap_or_default();
        println!(
            "{}: {}{slope}",
            c.name,
            if c.pass { "pass" } else { "fail" }
        );
    }
    println!("verdict: {}", if report.verdict { "pass" } else { "fail" });
    Ok(if report.verdict { EXIT_PASS } else { EXIT_FAIL })
}

/// Built-in oracle suite: transfer tables against path enumeration, plus
/// the Holley check. Returns the exit code.
pub fn check() -> Result<i32, RunError> {
    let mut ok = true;
    for line in obstacle_walk::oracle::self_check()? {
        println!(
            "{} {} (error {:.2e}, tol {:.0e})",
            if line.pass { "ok  " } else { "FAIL" },
            line.name,
            line.error,
            line.tolerance
        );
        ok &= line.pass;
    }
    let holley = obstacle_walk::gaussian::holley_check(6, 0, 10_000)?;
    println!(
        "{} holley n=6 trials={} (min slack {:.2e})",
        if holley.pass { "ok  " } else { "FAIL" },
        holley.trials,
        holley.min_slack
    );
    ok &= holley.pass;
    Ok(if ok { EXIT_PASS } else { EXIT_FAIL })
}

pub fn list() -> String {
    let mut out = String::from("experiments:\n");
    for e in scaling::EXPERIMENTS {
        let _ = writeln!(out, "  {e}");
    }
    out.push_str("laws:\n  uniform3\n  lazy_srw(q)\n  centered_binomial(m)\n  two_sided_geometric(r)\n  gaussian(beta)\n");
    out.push_str("obstacles:\n  quadratic\n  cosine\n  p_obstacle\n");
    out
}
