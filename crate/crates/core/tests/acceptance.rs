//! End-to-end acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.

use std::time::Instant;

use obstacle_walk::gaussian::{
    domination_check, excursion_density, holley_check, AlphaMethod, GibbsConfig, QuadratureConfig,
};
use obstacle_walk::numeric::adaptive_simpson;
use obstacle_walk::oracle::enumerate;
use obstacle_walk::scaling::{
    alpha_p_experiment, covariance_experiment, default_separations, free_field_experiment,
    ld_correction_experiment, tail_experiment, variance_experiment, KernelSetup,
    DEFAULT_GAUSSIAN_NS, DEFAULT_KERNEL_NS,
};
use obstacle_walk::{build_tables, discretize, tilt_schedule, KernelConfig, ObstacleSpec, StepLaw};

fn report(id: &str, pass: bool, detail: String) {
    println!(
        "criterion {id}: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn setup() -> KernelSetup {
    KernelSetup {
        law: StepLaw::uniform3(),
        spec: ObstacleSpec::Quadratic(0.5),
        kernel: KernelConfig::default(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    rel_scaled(a, b, 0.0)
}

/// Relative error with a floor: covariances are differences of raw second
/// moments, so they are compared on the scale `√(E W_i² · E W_j²)`.
fn rel_scaled(a: f64, b: f64, scale: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs()).max(scale)
    }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for law in [StepLaw::uniform3(), StepLaw::centered_binomial(2).unwrap()] {
        for n in 2..=8 {
            let profile = discretize(&ObstacleSpec::Quadratic(0.5), n).unwrap();
            let schedule = tilt_schedule(&law, &profile).unwrap();
            let t = build_tables(&law, &profile, &schedule, KernelConfig::default()).unwrap();
            let e = enumerate(&law, &profile, &schedule).unwrap();
            worst = worst.max(rel(t.log_z, e.log_z));
            for k in 0..=n {
                let m = t.marginal(k);
                for (idx, &p) in m.probs.iter().enumerate() {
                    let s = m.first_state + idx as i64;
                    let q = e.marginals[k]
                        .iter()
                        .find(|(st, _)| *st == s)
                        .map_or(0.0, |x| x.1);
                    worst = worst.max(rel(p, q));
                }
                for &(s, _) in &e.marginals[k] {
                    assert!(s >= m.first_state && s < m.first_state + m.probs.len() as i64);
                }
                worst = worst.max(rel_scaled(m.variance(), e.covariance(k, k), e.second[k][k]));
                for j in k + 1..=n {
                    let scale = (e.second[k][k] * e.second[j][j]).sqrt();
                    worst = worst.max(rel_scaled(t.covariance(k, j), e.covariance(k, j), scale));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 10.0;
    report(
        "1",
        pass,
        format!("max relative error {worst:.2e}, runtime {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_ld_correction_exponent() {
    let r = ld_correction_experiment(&setup(), &DEFAULT_KERNEL_NS).unwrap();
    let f = r.checks[0].fit.unwrap();
    report(
        "2",
        r.verdict,
        format!("slope {:.4} (target 1/3 ± 0.08), R² {:.4}", f.slope, f.r2),
    );
    assert!(r.verdict);
}

#[test]
fn criterion_3_tail_exponent() {
    let n = 8192;
    let lambdas: Vec<f64> = (0..=16).map(|i| 2.0 + 0.25 * i as f64).collect();
    let r = tail_experiment(&setup(), n, n / 2, &lambdas).unwrap();
    let f = r.checks[0].fit.unwrap();
    report(
        "3",
        r.verdict,
        format!(
            "slope {:.4} (target 1.5 ± 0.15) over λ ∈ [2, 6], R² {:.4}",
            f.slope, f.r2
        ),
    );
    assert!(r.verdict);
}

#[test]
fn criterion_4_variance_exponent() {
    let r = variance_experiment(&setup(), &DEFAULT_KERNEL_NS, 0.5).unwrap();
    let f = r.checks[0].fit.unwrap();
    let ratios: Vec<String> = r.checks[1..]
        .iter()
        .map(|c| match &c.criterion {
            obstacle_walk::scaling::Criterion::BoundedRatio { observed, .. } => {
                format!("{}={observed:.3}", c.name)
            }
            _ => unreachable!(),
        })
        .collect();
    report(
        "4",
        r.verdict,
        format!(
            "slope {:.4} (target 2/3 ± 0.08); max/min {}",
            f.slope,
            ratios.join(" ")
        ),
    );
    assert!(r.verdict);
}

#[test]
fn criterion_5_covariance_decay() {
    let n = 4096;
    let seps = default_separations(n, n / 2, 12);
    let r = covariance_experiment(&setup(), n, n / 2, &seps).unwrap();
    let f = r.checks[0].fit.unwrap();
    report(
        "5",
        r.verdict,
        format!(
            "linear slope {:.4}, R² {:.5} over {} separations",
            f.slope, f.r2, f.points
        ),
    );
    assert!(r.verdict);
}

#[test]
fn criterion_6_free_field_oracle() {
    let n = 16;
    let config = GibbsConfig {
        sweeps: 16 * 600,
        seed: 6,
        ..Default::default()
    };
    let r = free_field_experiment(n, 1.0, &[2, 5, 8, 11, 14], 32, &config).unwrap();
    let worst = match &r.checks[0].criterion {
        obstacle_walk::scaling::Criterion::AllWithin { worst, .. } => *worst,
        _ => unreachable!(),
    };
    report(
        "6",
        r.verdict,
        format!("worst deviation {worst:.2} standard errors on a 5×5 grid, sandwich certified"),
    );
    assert!(r.verdict);
}

fn alpha_report() -> obstacle_walk::ExponentReport {
    alpha_p_experiment(
        &[1.5, 2.0, 3.0],
        &DEFAULT_GAUSSIAN_NS,
        1.0,
        &AlphaMethod::Quadrature(QuadratureConfig::default()),
        &[2.0],
    )
    .unwrap()
}

#[test]
fn criterion_7_alpha_p_exponent() {
    let r = alpha_report();
    let mut all = true;
    let mut parts = Vec::new();
    for c in r.checks.iter().filter(|c| c.name.starts_with("alpha_p[")) {
        all &= c.pass;
        parts.push(format!("{} slope {:.4}", c.name, c.fit.unwrap().slope));
    }
    let tail = r.check("tail_exponent[p=2]").unwrap();
    let tail_slope = tail.fit.map_or(f64::NAN, |f| f.slope);
    parts.push(format!("tail slope {tail_slope:.4} (target 1.5 ± 0.2)"));
    report("7", all && tail.pass, parts.join("; "));
    assert!(all, "α_p fits out of tolerance");
    assert!(tail.pass, "tail exponent {tail_slope}");
}

#[test]
fn criterion_8_property_suites() {
    let holley = holley_check(6, 8, 10_000).unwrap();

    let mut worst_norm: f64 = 0.0;
    for (l, frac) in [(1.0_f64, 0.5), (7.0, 0.1), (30.0, 0.8), (100.0, 0.33)] {
        let t = frac * l;
        let width = (t * (l - t) / l).sqrt();
        let v = adaptive_simpson(
            |x| excursion_density(l, &[t], &[x]),
            0.0,
            15.0 * width,
            1e-11,
        );
        worst_norm = worst_norm.max((v - 1.0).abs());
    }

    let dom = domination_check(
        2.0,
        16,
        4,
        1.0,
        16,
        &GibbsConfig {
            sweeps: 16 * 500,
            seed: 88,
            ..Default::default()
        },
        4.0,
    )
    .unwrap();

    let s = setup();
    let mut worst_consistency: f64 = 0.0;
    let mut worst_cap: f64 = 0.0;
    for &n in &DEFAULT_KERNEL_NS {
        let a = s.tables(n).unwrap();
        let wide = KernelSetup {
            kernel: KernelConfig {
                k_cap: 24.0,
                ..s.kernel
            },
            ..s.clone()
        };
        let b = wide.tables(n).unwrap();
        worst_consistency = worst_consistency
            .max(a.diagnostics.consistency)
            .max(b.diagnostics.consistency);
        worst_cap = worst_cap.max((a.log_z - b.log_z).abs());
    }

    let pass = holley.pass
        && worst_norm <= 1e-8
        && dom.pass
        && worst_consistency <= 1e-9
        && worst_cap <= 1e-8;
    report(
        "8",
        pass,
        format!(
            "Holley min slack {:.2e} / bond {:.2e}; excursion norm err {worst_norm:.1e}; domination worst z {:.2}; \
             consistency {worst_consistency:.1e}; K_cap doubling ΔlogZ {worst_cap:.1e}",
            holley.min_slack, holley.min_bond_slack, dom.worst_z
        ),
    );
    assert!(pass);
}
