//! Scale-invariant graduated (SIG) robust kernel.
//!
//! ```text
//! rho(r; mu) = 1/2 * c^2 r^2 / (c^2 + (r^2)^mu)
//! ```
//!
//! `mu = 0` gives the convex quadratic `c^2 r^2 / (2 (c^2 + 1))` and `mu = 1`
//! gives Geman-McClure with scale `c`. For a fixed residual the second
//! derivative in `r` changes sign at most once as `mu` grows; that crossing is
//! the convexity boundary `mu*` used by the efficient schedule.
//!
//! `(r^2)^mu` uses the convention `0^0 = 1`, which is what `f64::powf` does.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of uniformly spaced `mu` samples used to bracket the boundary.
const BRACKET_GRID: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Kernel scale.
    pub c: f64,
    /// Bisection width at which `mu*` is accepted.
    pub mu_tol: f64,
    /// Magnitude below which the second derivative counts as zero.
    pub d2_tol: f64,
    pub max_bisect_iters: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            mu_tol: 1e-6,
            d2_tol: 1e-8,
            max_bisect_iters: 100,
        }
    }
}

impl KernelConfig {
    pub fn with_scale(c: f64) -> Result<Self> {
        let cfg = Self {
            c,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Domain(format!("kernel scale c must be > 0, got {}", self.c)));
        }
        if !(self.mu_tol > 0.0) {
            return Err(Error::Domain(format!("mu_tol must be > 0, got {}", self.mu_tol)));
        }
        if !(self.d2_tol > 0.0) {
            return Err(Error::Domain(format!("d2_tol must be > 0, got {}", self.d2_tol)));
        }
        if self.max_bisect_iters == 0 {
            return Err(Error::Domain("max_bisect_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pointwise kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub rho: f64,
    /// `rho'(r) / r`, the IRLS weight.
    pub weight: f64,
    /// `d^2 rho / dr^2`.
    pub d2: f64,
}

/// Convexity-boundary control parameter for one residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuStar {
    pub mu: f64,
    /// Set when the kernel stays convex at the residual for every `mu` in
    /// `[0, 1]`, so `mu` was clamped to 1.
    pub at_boundary: bool,
}

fn check_args(r: f64, mu: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("residual must be finite, got {r}")));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Domain(format!("mu must lie in [0, 1], got {mu}")));
    }
    Ok(())
}

#[inline]
fn shape(r: f64, mu: f64) -> f64 {
    (r * r).powf(mu)
}

pub fn sig_rho(r: f64, mu: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(r, mu)?;
    let c2 = cfg.c * cfg.c;
    Ok(0.5 * c2 * r * r / (c2 + shape(r, mu)))
}

pub fn sig_weight(r: f64, mu: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(r, mu)?;
    let c2 = cfg.c * cfg.c;
    let s = shape(r, mu);
    let den = c2 + s;
    Ok(c2 * (c2 + (1.0 - mu) * s) / (den * den))
}

pub fn sig_d2(r: f64, mu: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(r, mu)?;
    Ok(d2_unchecked(r, mu, cfg.c * cfg.c))
}

fn d2_unchecked(r: f64, mu: f64, c2: f64) -> f64 {
    let s = shape(r, mu);
    let den = c2 + s;
    let den2 = den * den;
    4.0 * c2 * mu * mu * s * s / (den2 * den) - 2.0 * c2 * mu * mu * s / den2
        - 3.0 * c2 * mu * s / den2
        + c2 / den
}

/// Evaluates cost, weight and curvature together.
pub fn evaluate(r: f64, mu: f64, cfg: &KernelConfig) -> Result<KernelEval> {
    check_args(r, mu)?;
    let c2 = cfg.c * cfg.c;
    let s = shape(r, mu);
    let den = c2 + s;
    Ok(KernelEval {
        rho: 0.5 * c2 * r * r / den,
        weight: c2 * (c2 + (1.0 - mu) * s) / (den * den),
        d2: d2_unchecked(r, mu, c2),
    })
}

/// Largest `mu` for which the kernel is still convex at residual `r`.
///
/// Scans a uniform grid on `[0, 1]` for the first non-positive second
/// derivative and bisects that bracket. The returned value always sits on the
/// convex side of the crossing, so `0 <= d2(r, mu*) <= d2_tol`.
pub fn find_mu_star(r: f64, cfg: &KernelConfig) -> Result<MuStar> {
    check_args(r, 0.0)?;
    cfg.validate()?;
    if r == 0.0 {
        return Ok(MuStar {
            mu: 1.0,
            at_boundary: true,
        });
    }
    let c2 = cfg.c * cfg.c;
    let f = |mu: f64| d2_unchecked(r, mu, c2);
    let grid_mu = |k: usize| k as f64 / (BRACKET_GRID - 1) as f64;

    let mut prev_mu = 0.0;
    let mut prev_f = f(0.0);
    for k in 1..BRACKET_GRID {
        let mu = grid_mu(k);
        let fk = f(mu);
        if fk <= cfg.d2_tol {
            log_multiple_crossings(r, k, &f, grid_mu);
            if fk >= 0.0 {
                return Ok(MuStar {
                    mu,
                    at_boundary: false,
                });
            }
            let mu = bisect(&f, prev_mu, mu, prev_f, cfg)?;
            return Ok(MuStar {
                mu,
                at_boundary: false,
            });
        }
        prev_mu = mu;
        prev_f = fk;
    }
    Ok(MuStar {
        mu: 1.0,
        at_boundary: true,
    })
}

fn log_multiple_crossings(r: f64, k: usize, f: &impl Fn(f64) -> f64, grid_mu: impl Fn(usize) -> f64) {
    let mut negative = f(grid_mu(k)) < 0.0;
    let mut crossings = 0;
    for j in k + 1..BRACKET_GRID {
        let neg = f(grid_mu(j)) < 0.0;
        if neg != negative {
            crossings += 1;
            negative = neg;
        }
    }
    if crossings > 0 {
        debug!("second derivative at r = {r} changes sign {} more time(s) on [0, 1]; using the smallest root", crossings);
    }
}

// Invariant: f(lo) > 0 and f(hi) < 0.
fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut f_lo: f64, cfg: &KernelConfig) -> Result<f64> {
    for _ in 0..cfg.max_bisect_iters {
        if hi - lo <= cfg.mu_tol && f_lo <= cfg.d2_tol {
            return Ok(lo);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm >= 0.0 {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    if hi - lo <= cfg.mu_tol && f_lo <= cfg.d2_tol {
        return Ok(lo);
    }
    Err(Error::Bisection {
        lo,
        hi,
        iters: cfg.max_bisect_iters,
    })
}

/// Heuristic ramp `mu <- min(1, mu + 1.2 (mu - mu_init + 0.1))`.
pub fn baseline_mu_update(mu: f64, mu_init: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu_init) || !(mu_init..=1.0).contains(&mu) {
        return Err(Error::Domain(format!(
            "baseline update needs 0 <= mu_init <= mu <= 1, got mu = {mu}, mu_init = {mu_init}"
        )));
    }
    Ok((mu + 1.2 * (mu - mu_init + 0.1)).min(1.0))
}

/// The full baseline ramp starting at `mu_init`, ending with 1.
pub fn baseline_ramp(mu_init: f64) -> Result<Vec<f64>> {
    let mut mus = vec![mu_init];
    let mut mu = mu_init;
    while mu < 1.0 {
        mu = baseline_mu_update(mu, mu_init)?;
        mus.push(mu);
    }
    Ok(mus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> KernelConfig {
        KernelConfig::default()
    }

    #[test]
    fn rho_examples() {
        let k = unit();
        assert_eq!(sig_rho(0.0, 0.5, &k).unwrap(), 0.0);
        assert_abs_diff_eq!(sig_rho(1.0, 1.0, &k).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sig_rho(2.0, 0.0, &k).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(sig_rho(-3.0, 0.3, &k).unwrap(), sig_rho(3.0, 0.3, &k).unwrap());
    }

    #[test]
    fn weight_examples() {
        let k = unit();
        assert_abs_diff_eq!(sig_weight(3.0, 0.0, &k).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sig_weight(1.0, 1.0, &k).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sig_weight(0.0, 1.0, &k).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sig_weight(0.0, 0.0, &k).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn d2_examples() {
        let k = unit();
        assert_abs_diff_eq!(sig_d2(0.0, 0.5, &k).unwrap(), 1.0, epsilon = 1e-15);
        for r in [0.0, 0.3, 7.0, -40.0] {
            assert_abs_diff_eq!(sig_d2(r, 0.0, &k).unwrap(), 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(sig_d2(1.0 / 3f64.sqrt(), 1.0, &k).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn domain_errors() {
        let k = unit();
        assert!(matches!(sig_rho(f64::NAN, 0.5, &k), Err(Error::Domain(_))));
        assert!(matches!(sig_weight(1.0, 1.5, &k), Err(Error::Domain(_))));
        assert!(matches!(sig_d2(1.0, -0.1, &k), Err(Error::Domain(_))));
        assert!(matches!(find_mu_star(f64::INFINITY, &k), Err(Error::Domain(_))));
        assert!(KernelConfig::with_scale(0.0).is_err());
    }

    #[test]
    fn mu_star_examples() {
        let k = unit();
        let gm_root = find_mu_star(1.0 / 3f64.sqrt(), &k).unwrap();
        assert!(!gm_root.at_boundary);
        assert_abs_diff_eq!(gm_root.mu, 1.0, epsilon = 1e-6);

        let small = find_mu_star(0.1, &k).unwrap();
        assert_eq!(small, MuStar { mu: 1.0, at_boundary: true });

        let big = find_mu_star(10.0, &k).unwrap();
        assert!(!big.at_boundary);
        assert!(big.mu > 0.0 && big.mu < 1.0);
        assert!(sig_d2(10.0, big.mu, &k).unwrap().abs() <= k.d2_tol);

        assert_eq!(find_mu_star(0.0, &k).unwrap(), MuStar { mu: 1.0, at_boundary: true });
        assert_eq!(find_mu_star(-10.0, &k).unwrap(), big);
    }

    #[test]
    fn bisection_budget_exhaustion_reports_bracket() {
        let k = KernelConfig {
            max_bisect_iters: 2,
            ..unit()
        };
        match find_mu_star(10.0, &k) {
            Err(Error::Bisection { lo, hi, iters }) => {
                assert!(lo < hi);
                assert_eq!(iters, 2);
            }
            other => panic!("expected bisection error, got {other:?}"),
        }
    }

    #[test]
    fn baseline_examples() {
        assert_abs_diff_eq!(baseline_mu_update(0.0, 0.0).unwrap(), 0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(baseline_mu_update(0.12, 0.0).unwrap(), 0.384, epsilon = 1e-12);
        assert_eq!(baseline_mu_update(1.0, 0.0).unwrap(), 1.0);
        assert!(baseline_mu_update(0.1, 0.2).is_err());
    }

    #[test]
    fn baseline_ramp_reaches_one_in_five_stages() {
        let ramp = baseline_ramp(0.0).unwrap();
        let expected = [0.0, 0.12, 0.384, 0.9648, 1.0];
        assert_eq!(ramp.len(), expected.len());
        for (a, b) in ramp.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }
}
