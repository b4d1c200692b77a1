//! Adaptive Romberg integration on open intervals.
//!
//! The scheme is the midpoint analogue of Romberg integration: each stage
//! triples the number of midpoint samples (step shrinks to 1/3 of the last
//! size) and Richardson extrapolation is applied across stages. Because
//! endpoints are never evaluated, integrands may be undefined at the limits.
//! Infinite limits are handled by sigma-scaled truncation.
//!
//! The discrete step-size changes of this scheme make the computed value of
//! an integral jump slightly when the number of refinements changes between
//! nearby parameter values. The sweep instrumentation here measures those
//! jumps.

use serde::{Deserialize, Serialize};

use crate::dist;

/// Tolerances and limits for one integration call.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_refinements: usize,
    /// Infinite limits are replaced by center +/- this many scale units.
    pub tail_cutoff_sigmas: f64,
    /// Enables sweep instrumentation in callers.
    pub record_jumps: bool,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            max_refinements: 14,
            tail_cutoff_sigmas: 8.0,
            record_jumps: false,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> bool {
        self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_refinements >= 2
            && self.tail_cutoff_sigmas >= 4.0
    }
}

/// Value, error estimate, and refinement count of one integration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub est_error: f64,
    pub refinements_used: usize,
    /// False when max_refinements was reached with the error still above
    /// tolerance; the value is still usable but flagged.
    pub converged: bool,
}

// Extrapolation window: how many trailing stages enter the Neville table.
const EXTRAP_ORDER: usize = 5;
// Stages before the first extrapolation attempt. Convergence additionally
// requires two successive extrapolations to agree, so the earliest possible
// return is one stage later.
const MIN_STAGES: usize = 2;
// Panels in the first stage. Starting composite (rather than with a single
// midpoint) means even the coarsest stage resolves a Gaussian bump, so the
// extrapolation window never carries wildly-off early values.
const BASE_PANELS: usize = 9;

/// One stage of the open midpoint rule; stage `n` uses BASE_PANELS * 3^(n-1)
/// panels, reusing `prev` from stage n-1 (previous points stay midpoints of
/// every third new panel).
fn midpoint_stage<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, n: usize, prev: f64) -> f64 {
    if n == 1 {
        let w = (hi - lo) / BASE_PANELS as f64;
        let mut sum = 0.0;
        for i in 0..BASE_PANELS {
            sum += f(lo + (i as f64 + 0.5) * w);
        }
        return w * sum;
    }
    let it = BASE_PANELS * 3usize.pow(n as u32 - 2);
    let tnm = it as f64;
    let del = (hi - lo) / (3.0 * tnm);
    let ddel = del + del;
    let mut x = lo + 0.5 * del;
    let mut sum = 0.0;
    for _ in 0..it {
        sum += f(x);
        x += ddel;
        sum += f(x);
        x += del;
    }
    (prev + (hi - lo) * sum / tnm) / 3.0
}

/// Neville polynomial extrapolation of (x_i, y_i) to x = 0; returns the
/// value and the magnitude of the last correction as the error estimate.
fn polint(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mut c = ys.to_vec();
    let mut d = ys.to_vec();
    // nearest point to 0 is the last one (smallest h)
    let mut ns = n as isize - 1;
    let mut y = ys[ns as usize];
    ns -= 1;
    let mut dy = 0.0;
    for m in 1..n {
        for i in 0..n - m {
            let ho = xs[i];
            let hp = xs[i + m];
            let w = c[i + 1] - d[i];
            let den = w / (ho - hp);
            d[i] = hp * den;
            c[i] = ho * den;
        }
        dy = if 2 * (ns + 1) < (n - m) as isize {
            c[(ns + 1) as usize]
        } else {
            let r = d[ns as usize];
            ns -= 1;
            r
        };
        y += dy;
    }
    (y, dy.abs())
}

/// Integrate `f` over the open finite interval (lo, hi).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, cfg: &QuadConfig) -> QuadResult {
    debug_assert!(lo < hi && lo.is_finite() && hi.is_finite());
    let mut stage_val = 0.0;
    let mut hs: Vec<f64> = Vec::with_capacity(cfg.max_refinements);
    let mut ss: Vec<f64> = Vec::with_capacity(cfg.max_refinements);
    let mut h = 1.0;
    let mut best = (0.0, f64::INFINITY);
    let mut prev: Option<f64> = None;
    for n in 1..=cfg.max_refinements {
        stage_val = midpoint_stage(&mut f, lo, hi, n, stage_val);
        hs.push(h);
        ss.push(stage_val);
        if n >= MIN_STAGES {
            let k = n.min(EXTRAP_ORDER);
            let (value, dy) = polint(&hs[n - k..], &ss[n - k..]);
            // The last Neville correction alone is over-optimistic while the
            // window still contains coarse early stages; also require that
            // successive extrapolations agree.
            let err = match prev {
                Some(p) => dy.max((value - p).abs()),
                None => f64::INFINITY,
            };
            prev = Some(value);
            best = (value, err);
            if err <= cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
                return QuadResult {
                    value,
                    est_error: err,
                    refinements_used: n,
                    converged: true,
                };
            }
        }
        // step size error series is in h^2 and each stage divides h by 3
        h /= 9.0;
    }
    QuadResult {
        value: best.0,
        est_error: best.1,
        refinements_used: cfg.max_refinements,
        converged: false,
    }
}

/// Integrate over an interval where either limit may be infinite. Infinite
/// limits are replaced by `center +/- tail_cutoff_sigmas * scale`; the
/// Gaussian tail mass beyond the cutoff is folded into the error estimate.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(
    f: F,
    lo: Option<f64>,
    hi: Option<f64>,
    center: f64,
    scale: f64,
    cfg: &QuadConfig,
) -> QuadResult {
    debug_assert!(scale > 0.0);
    let cut = cfg.tail_cutoff_sigmas * scale;
    let mut trunc_err = 0.0;
    let lo = match lo {
        Some(x) => x,
        None => {
            trunc_err += dist::upper_tail(cfg.tail_cutoff_sigmas);
            center - cut
        }
    };
    let hi = match hi {
        Some(x) => x,
        None => {
            trunc_err += dist::upper_tail(cfg.tail_cutoff_sigmas);
            center + cut
        }
    };
    if lo >= hi {
        return QuadResult {
            value: 0.0,
            est_error: trunc_err,
            refinements_used: 0,
            converged: true,
        };
    }
    let mut r = integrate(f, lo, hi, cfg);
    r.est_error += trunc_err;
    r
}

/// One evaluation of a swept quantity: grid position, computed value, and
/// the refinement count the evaluation used (for nested integrals, callers
/// combine outer and inner counts into one number).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepSample {
    pub position: f64,
    pub value: f64,
    pub refinements: u32,
}

/// A step-size change between adjacent grid points and the accompanying
/// discontinuity in the computed value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JumpEvent {
    pub position: f64,
    pub refinements_before: u32,
    pub refinements_after: u32,
    /// Deviation of the value from the local linear trend at the change.
    pub value_jump: f64,
}

/// Locate refinement-count changes in a parameter sweep. The value jump at
/// each change is measured against a linear extrapolation of the two
/// preceding samples so the smooth trend does not count as a jump.
pub fn jump_report(samples: &[SweepSample]) -> Vec<JumpEvent> {
    let mut events = Vec::new();
    for i in 1..samples.len() {
        let prev = samples[i - 1];
        let cur = samples[i];
        if prev.refinements == cur.refinements {
            continue;
        }
        let predicted = if i >= 2 {
            let p2 = samples[i - 2];
            if (prev.position - p2.position).abs() > 0.0 {
                p2.value
                    + (prev.value - p2.value) * (cur.position - p2.position)
                        / (prev.position - p2.position)
            } else {
                prev.value
            }
        } else {
            prev.value
        };
        events.push(JumpEvent {
            position: cur.position,
            refinements_before: prev.refinements,
            refinements_after: cur.refinements,
            value_jump: cur.value - predicted,
        });
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist;

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    // tolerance with real headroom for tests asserting 1e-6 accuracy
    fn tight() -> QuadConfig {
        QuadConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-11,
            ..QuadConfig::default()
        }
    }

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x * x, 0.0, 1.0, &cfg());
        assert!(r.converged);
        assert!((r.value - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_normalizes() {
        let r = integrate(|x| dist::pdf(x, 0.0, 1.0), -8.0, 8.0, &tight());
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-6);
    }

    // High-precision upper-tail oracle via the continued fraction for
    // erfc (Lentz's method), independent of libm.
    fn erfc_cf(x: f64) -> f64 {
        assert!(x > 0.0);
        let tiny = 1e-300;
        let mut f: f64 = tiny;
        let mut c: f64 = f;
        let mut d: f64 = 0.0;
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
        for i in 0..200 {
            let a = if i == 0 { 1.0 } else { i as f64 / 2.0 };
            let b = x;
            d = b + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / std::f64::consts::PI.sqrt() * f
    }

    #[test]
    fn gaussian_tail_matches_continued_fraction_oracle() {
        let oracle = 0.5 * erfc_cf(1.0 / std::f64::consts::SQRT_2);
        let r = integrate(|x| dist::pdf(x, 0.0, 1.0), 1.0, 8.0, &cfg());
        assert!(r.converged);
        assert!(
            (r.value - oracle).abs() < 1e-6,
            "value {} oracle {}",
            r.value,
            oracle
        );
    }

    #[test]
    fn semi_infinite_gaussian() {
        let mu = 1.7;
        let sigma = 0.4;
        let full =
            integrate_semi_infinite(|x| dist::pdf(x, mu, sigma), None, None, mu, sigma, &tight());
        assert!((full.value - 1.0).abs() < 1e-6);
        let half =
            integrate_semi_infinite(|x| dist::pdf(x, mu, sigma), Some(mu), None, mu, sigma, &tight());
        assert!((half.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gaussian_linear_moment_matches_closed_form() {
        // E[X] over (mu, inf) for X ~ N(mu, sigma^2) weighted by the density:
        // integral of x phi(x) = mu/2 + sigma/sqrt(2 pi)
        let (mu, sigma) = (0.3, 1.3);
        let r = integrate_semi_infinite(
            |x| x * dist::pdf(x, mu, sigma),
            Some(mu),
            None,
            mu,
            sigma,
            &tight(),
        );
        let exact = mu / 2.0 + sigma / (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.value - exact).abs() <= 1e-6);
    }

    #[test]
    fn empty_interval_is_zero() {
        let r = integrate_semi_infinite(|x| dist::pdf(x, 0.0, 1.0), Some(9.0), Some(3.0), 0.0, 1.0, &cfg());
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn jump_report_ignores_constant_refinements() {
        let samples: Vec<SweepSample> = (0..50)
            .map(|i| SweepSample {
                position: i as f64,
                value: i as f64 * 0.1,
                refinements: 5,
            })
            .collect();
        assert!(jump_report(&samples).is_empty());
    }

    #[test]
    fn jump_report_isolates_jump_from_trend() {
        // linear trend with one refinement change and a 0.01 offset after it
        let samples: Vec<SweepSample> = (0..10)
            .map(|i| {
                let jumped = i >= 5;
                SweepSample {
                    position: i as f64,
                    value: i as f64 * 0.2 + if jumped { 0.01 } else { 0.0 },
                    refinements: if jumped { 6 } else { 5 },
                }
            })
            .collect();
        let events = jump_report(&samples);
        assert_eq!(events.len(), 1);
        assert!((events[0].value_jump - 0.01).abs() < 1e-12);
    }
}
