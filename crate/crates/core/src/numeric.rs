//! Small numerical kernels shared by every module: log-domain accumulation,
//! standard normal tail functions and their inverses, adaptive quadrature,
//! and the lattice ceiling used to place obstacles on the integer grid.

use rand::RngCore;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{LN_2, PI, SQRT_2};

/// Absolute slack used when rounding obstacle heights up to the lattice.
pub const LATTICE_SLACK: f64 = 1e-9;

/// `ln(2π)/2`.
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// `⌈x⌉`, treating values within [`LATTICE_SLACK`] above an integer as that
/// integer.
pub fn lattice_ceil(x: f64) -> i64 {
    (x - LATTICE_SLACK).ceil() as i64
}

/// `ln Σ exp(v)` with a max shift. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - HALF_LN_TWO_PI).exp()
}

/// Upper tail `P(N(0,1) > x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `ln P(N(0,1) > x)`, accurate in both tails.
pub fn log_norm_sf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < -1.0 {
        (-0.5 * erfc(-x / SQRT_2)).ln_1p()
    } else if x < 30.0 {
        (0.5 * erfc(x / SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series; the fifth term is below 1e-12 here.
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - x.ln() - HALF_LN_TWO_PI + series.ln()
    }
}

/// Inverse of the upper tail for `p ∈ (0, 1/2]`.
fn norm_isf_small(p: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * p)
}

/// Solves `ln P(N(0,1) > x) = log_q` for `log_q ≤ ln(1/2)`.
fn norm_isf_log(log_q: f64) -> f64 {
    let mut x = if log_q > -690.0 {
        norm_isf_small(log_q.exp())
    } else {
        let t = -2.0 * log_q;
        (t - (t * 2.0 * PI).ln()).sqrt()
    };
    if x > 1.0 {
        for _ in 0..3 {
            let lq = log_norm_sf(x);
            let dlog = -(-0.5 * x * x - HALF_LN_TWO_PI - lq).exp();
            let step = (lq - log_q) / dlog;
            x -= step;
            if step.abs() < 1e-15 * x.abs() {
                break;
            }
        }
    }
    x
}

/// Quantile of a standard normal truncated to `[a, ∞)` at level `u ∈ (0,1)`.
///
/// The map is non-decreasing in both `a` and `u`, which is what the monotone
/// heat-bath coupling relies on.
pub fn truncated_std_normal_quantile(a: f64, u: f64) -> f64 {
    let log_tail = log_norm_sf(a);
    let log_q = (-u).ln_1p() + log_tail;
    let x = if log_q < -LN_2 {
        norm_isf_log(log_q)
    } else {
        // P(X ≤ x) = Φ(a) + uΦc(a) ≤ 1/2; both terms are computed without
        // cancellation.
        let p = norm_sf(-a).max(0.0) + u * log_tail.exp();
        -norm_isf_small(p.min(0.5))
    };
    x.max(a)
}

/// A uniform draw in the open interval `(0, 1)`.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Split once up front so symmetric integrands cannot fool the first test.
    let left = (m - a) / 6.0 * (fa + 4.0 * f(0.5 * (a + m)) + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * f(0.5 * (m + b)) + fb);
    if (left + right - whole).abs() == 0.0 && whole == 0.0 {
        return 0.0;
    }
    recurse(&f, a, m, fa, f(0.5 * (a + m)), fm, left, 0.5 * tol, 48)
        + recurse(&f, m, b, fm, f(0.5 * (m + b)), fb, right, 0.5 * tol, 48)
}

/// Geometric grid of `count` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let r = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|i| lo * (r * i as f64).exp()).collect()
        }
    }
}
