//! Conditional response probabilities for the three decision rules, their
//! special cases, the rule mixture, and the multinomial log-likelihood.
//!
//! Each rule-k matrix cell is a double integral: an outer integral over the
//! momentary representation s and an inner integral over the criterion
//! sample that produces the response, with a product of Gaussian interval
//! probabilities excluding the competing criteria. Both integrals use the
//! open-interval Romberg scheme from [`crate::quad`]; the interval
//! probabilities inside the product are Gaussian tail differences and use
//! the closed form.

use rayon::prelude::*;

use crate::dist;
use crate::error::VdrError;
use crate::model::{ensure_valid, CountMatrix, ModelClass, ModelSpec, ParamSet, ProbMatrix};
use crate::quad::{self, QuadConfig};
use crate::Result;

/// Probability floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

struct Criteria {
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Criteria {
    fn from(theta: &ParamSet, spec: &ModelSpec) -> Self {
        let sds = (0..spec.n_criteria())
            .map(|j| theta.effective_crit_sd(spec, j))
            .collect();
        Criteria {
            means: theta.crit_means.clone(),
            sds,
        }
    }

    fn len(&self) -> usize {
        self.means.len()
    }
}

/// Inner integral for Rule 1, response i+1 (0-based criterion i): the
/// criterion sample c_i falls above s and no competing criterion lands in
/// (s, c_i).
fn inner_rule1(s: f64, i: usize, cr: &Criteria, cdf_at_s: &[f64], cfg: &QuadConfig) -> quad::QuadResult {
    let hi = cr.means[i] + cfg.tail_cutoff_sigmas * cr.sds[i];
    if hi <= s {
        return zero_result();
    }
    let lo = s.max(cr.means[i] - cfg.tail_cutoff_sigmas * cr.sds[i]);
    if lo >= hi {
        return zero_result();
    }
    quad::integrate(
        |c| {
            let mut v = dist::pdf(c, cr.means[i], cr.sds[i]);
            for j in 0..cr.len() {
                if j == i {
                    continue;
                }
                let in_between =
                    (dist::cdf(c, cr.means[j], cr.sds[j]) - cdf_at_s[j]).clamp(0.0, 1.0);
                v *= 1.0 - in_between;
            }
            v
        },
        lo,
        hi,
        cfg,
    )
}

/// Inner integral for Rule 2, response i+2 (0-based criterion i): c_i falls
/// below s and no competing criterion lands in (c_i, s).
fn inner_rule2(s: f64, i: usize, cr: &Criteria, cdf_at_s: &[f64], cfg: &QuadConfig) -> quad::QuadResult {
    let lo = cr.means[i] - cfg.tail_cutoff_sigmas * cr.sds[i];
    if lo >= s {
        return zero_result();
    }
    let hi = s.min(cr.means[i] + cfg.tail_cutoff_sigmas * cr.sds[i]);
    if lo >= hi {
        return zero_result();
    }
    quad::integrate(
        |c| {
            let mut v = dist::pdf(c, cr.means[i], cr.sds[i]);
            for j in 0..cr.len() {
                if j == i {
                    continue;
                }
                let in_between =
                    (cdf_at_s[j] - dist::cdf(c, cr.means[j], cr.sds[j])).clamp(0.0, 1.0);
                v *= 1.0 - in_between;
            }
            v
        },
        lo,
        hi,
        cfg,
    )
}

/// Inner integral for Rule 3 where c_i is the nearest criterion and sits
/// above s: no competing criterion lands in (2s - c_i, c_i).
fn inner_rule3_above(s: f64, i: usize, cr: &Criteria, cfg: &QuadConfig) -> quad::QuadResult {
    let hi = cr.means[i] + cfg.tail_cutoff_sigmas * cr.sds[i];
    if hi <= s {
        return zero_result();
    }
    let lo = s.max(cr.means[i] - cfg.tail_cutoff_sigmas * cr.sds[i]);
    if lo >= hi {
        return zero_result();
    }
    quad::integrate(
        |c| {
            let mut v = dist::pdf(c, cr.means[i], cr.sds[i]);
            for j in 0..cr.len() {
                if j == i {
                    continue;
                }
                v *= 1.0 - dist::interval_prob(2.0 * s - c, c, cr.means[j], cr.sds[j]);
            }
            v
        },
        lo,
        hi,
        cfg,
    )
}

/// Inner integral for Rule 3 where c_i is the nearest criterion and sits
/// below (or at) s: no competing criterion lands in (c_i, 2s - c_i).
fn inner_rule3_below(s: f64, i: usize, cr: &Criteria, cfg: &QuadConfig) -> quad::QuadResult {
    let lo = cr.means[i] - cfg.tail_cutoff_sigmas * cr.sds[i];
    if lo >= s {
        return zero_result();
    }
    let hi = s.min(cr.means[i] + cfg.tail_cutoff_sigmas * cr.sds[i]);
    if lo >= hi {
        return zero_result();
    }
    quad::integrate(
        |c| {
            let mut v = dist::pdf(c, cr.means[i], cr.sds[i]);
            for j in 0..cr.len() {
                if j == i {
                    continue;
                }
                v *= 1.0 - dist::interval_prob(c, 2.0 * s - c, cr.means[j], cr.sds[j]);
            }
            v
        },
        lo,
        hi,
        cfg,
    )
}

/// Conditional probability of one non-default response given a fixed
/// representation sample s. `col` is the 0-based response column.
///
/// Rule 1 covers columns 0..M-2 (column M-1 is the default); Rule 2 covers
/// columns 1..M-1 (column 0 is the default); Rule 3 covers columns 0..M-2
/// directly with column M-1 taken by complement.
fn response_given_s(
    rule: u8,
    s: f64,
    col: usize,
    m: usize,
    cr: &Criteria,
    cfg: &QuadConfig,
) -> Option<quad::QuadResult> {
    match rule {
        1 => {
            if col >= m - 1 {
                return None;
            }
            let cdf_at_s: Vec<f64> = (0..cr.len())
                .map(|j| dist::cdf(s, cr.means[j], cr.sds[j]))
                .collect();
            Some(inner_rule1(s, col, cr, &cdf_at_s, cfg))
        }
        2 => {
            if col == 0 || col > m - 1 {
                return None;
            }
            let cdf_at_s: Vec<f64> = (0..cr.len())
                .map(|j| dist::cdf(s, cr.means[j], cr.sds[j]))
                .collect();
            Some(inner_rule2(s, col - 1, cr, &cdf_at_s, cfg))
        }
        3 => {
            if col >= m - 1 {
                return None;
            }
            let above = inner_rule3_above(s, col, cr, cfg);
            if col == 0 {
                return Some(above);
            }
            let below = inner_rule3_below(s, col - 1, cr, cfg);
            Some(quad::QuadResult {
                value: above.value + below.value,
                est_error: above.est_error + below.est_error,
                refinements_used: above.refinements_used.max(below.refinements_used),
                converged: above.converged && below.converged,
            })
        }
        _ => panic!("rule must be 1, 2, or 3"),
    }
}

/// One double-integral cell, instrumented with the refinement counts used.
#[derive(Debug, Clone, Copy)]
pub struct CellEval {
    pub value: f64,
    pub est_error: f64,
    pub outer_refinements: usize,
    pub max_inner_refinements: usize,
    pub converged: bool,
}

impl CellEval {
    /// Combined refinement count for jump instrumentation.
    pub fn total_refinements(&self) -> u32 {
        (self.outer_refinements + self.max_inner_refinements) as u32
    }
}

fn zero_result() -> quad::QuadResult {
    quad::QuadResult {
        value: 0.0,
        est_error: 0.0,
        refinements_used: 0,
        converged: true,
    }
}

/// Evaluate the nested double integral for one non-default cell (h, col)
/// of the rule-k matrix.
pub fn cell_double_integral(
    rule: u8,
    theta: &ParamSet,
    spec: &ModelSpec,
    cfg: &QuadConfig,
    h: usize,
    col: usize,
) -> CellEval {
    let cr = Criteria::from(theta, spec);
    let m = spec.n_responses;
    let mu = theta.rep_means[h];
    let sd = theta.effective_rep_sd(spec, h);
    let mut max_inner = 0usize;
    let mut inner_ok = true;
    // The inner integral runs a decade tighter than the outer so its residual
    // noise does not stall the outer extrapolation.
    let inner_cfg = QuadConfig {
        rel_tol: cfg.rel_tol / 10.0,
        abs_tol: cfg.abs_tol / 10.0,
        ..*cfg
    };
    let outer = quad::integrate_semi_infinite(
        |s| {
            let inner =
                response_given_s(rule, s, col, m, &cr, &inner_cfg).unwrap_or_else(zero_result);
            max_inner = max_inner.max(inner.refinements_used);
            inner_ok &= inner.converged;
            dist::pdf(s, mu, sd) * inner.value
        },
        None,
        None,
        mu,
        sd,
        cfg,
    );
    CellEval {
        value: outer.value.clamp(0.0, 1.0),
        est_error: outer.est_error,
        outer_refinements: outer.refinements_used,
        max_inner_refinements: max_inner,
        converged: outer.converged && inner_ok,
    }
}

fn default_column(rule: u8, m: usize) -> usize {
    match rule {
        1 | 3 => m - 1,
        2 => 0,
        _ => panic!("rule must be 1, 2, or 3"),
    }
}

/// One row of the rule-k probability matrix.
pub fn vdr_row(
    rule: u8,
    theta: &ParamSet,
    spec: &ModelSpec,
    cfg: &QuadConfig,
    h: usize,
) -> Result<Vec<f64>> {
    let m = spec.n_responses;
    let def = default_column(rule, m);
    let mut row = vec![0.0; m];
    for col in 0..m {
        if col == def {
            continue;
        }
        let cell = cell_double_integral(rule, theta, spec, cfg, h, col);
        if !cell.converged {
            return Err(VdrError::QuadratureFailure {
                row: h,
                col,
                est_error: cell.est_error,
            });
        }
        row[col] = cell.value;
    }
    let others: f64 = row.iter().sum();
    row[def] = (1.0 - others).clamp(0.0, 1.0);
    Ok(row)
}

fn rule_matrix_impl(rule: u8, theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    let rows: Result<Vec<Vec<f64>>> = (0..spec.n_stimuli)
        .into_par_iter()
        .map(|h| vdr_row(rule, theta, spec, cfg, h))
        .collect();
    Ok(ProbMatrix { probs: rows? })
}

/// Rule-1 probability matrix (nearest criterion above s; default response M).
pub fn rule1_matrix(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    rule_matrix_impl(1, theta, spec, cfg)
}

/// Rule-2 probability matrix (nearest criterion below s; default response 1).
pub fn rule2_matrix(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    rule_matrix_impl(2, theta, spec, cfg)
}

/// Rule-3 probability matrix (nearest criterion by absolute difference).
pub fn rule3_matrix(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    rule_matrix_impl(3, theta, spec, cfg)
}

/// Cell-wise convex combination of per-rule matrices. Expects one matrix
/// per rule with nonzero probability.
pub fn mixture_matrix(matrices: &[(u8, ProbMatrix)], rule_probs: &[f64; 3]) -> Result<ProbMatrix> {
    let (first_rule, first) = matrices
        .first()
        .ok_or_else(|| VdrError::ShapeMismatch("no matrices to mix".into()))?;
    let _ = first_rule;
    let (n, m) = (first.n_stimuli(), first.n_responses());
    let mut probs = vec![vec![0.0; m]; n];
    for k in 1..=3u8 {
        let p = rule_probs[(k - 1) as usize];
        if p == 0.0 {
            continue;
        }
        let mat = matrices
            .iter()
            .find(|(r, _)| *r == k)
            .map(|(_, m)| m)
            .ok_or_else(|| {
                VdrError::ShapeMismatch(format!("missing matrix for rule {k} with p > 0"))
            })?;
        if mat.n_stimuli() != n || mat.n_responses() != m {
            return Err(VdrError::ShapeMismatch("mixture shape mismatch".into()));
        }
        for (out, src) in probs.iter_mut().zip(&mat.probs) {
            for (o, &v) in out.iter_mut().zip(src) {
                *o += p * v;
            }
        }
    }
    Ok(ProbMatrix { probs })
}

/// Closed-form SDT matrix: zero criterion variance, so each cell is a
/// difference of Gaussian tail probabilities.
pub fn sdt_matrix(theta: &ParamSet, spec: &ModelSpec) -> ProbMatrix {
    debug_assert!(spec.klass.is_sdt());
    let m = spec.n_responses;
    let probs = (0..spec.n_stimuli)
        .map(|h| {
            let mu = theta.rep_means[h];
            let sd = theta.rep_sds[h].max(crate::model::SD_FLOOR);
            let mut row = Vec::with_capacity(m);
            let mut prev = 0.0;
            for i in 0..m {
                let upper = if i == m - 1 {
                    1.0
                } else {
                    dist::cdf(theta.crit_means[i], mu, sd)
                };
                row.push((upper - prev).clamp(0.0, 1.0));
                prev = upper;
            }
            row
        })
        .collect();
    ProbMatrix { probs }
}

/// One row of the CSDT matrix for one rule: the representation is a Dirac
/// pulse at its mean, so the outer integral drops away.
pub fn csdt_row(
    rule: u8,
    theta: &ParamSet,
    spec: &ModelSpec,
    cfg: &QuadConfig,
    h: usize,
) -> Result<Vec<f64>> {
    let cr = Criteria::from(theta, spec);
    let m = spec.n_responses;
    let s = theta.rep_means[h];
    let def = default_column(rule, m);
    let mut row = vec![0.0; m];
    for col in 0..m {
        if col == def {
            continue;
        }
        let r = response_given_s(rule, s, col, m, &cr, cfg).unwrap_or_else(zero_result);
        if !r.converged {
            return Err(VdrError::QuadratureFailure {
                row: h,
                col,
                est_error: r.est_error,
            });
        }
        row[col] = r.value.clamp(0.0, 1.0);
    }
    let others: f64 = row.iter().sum();
    row[def] = (1.0 - others).clamp(0.0, 1.0);
    Ok(row)
}

/// CSDT matrix: single-integral forms of the three rules, mixed by the
/// rule probabilities.
pub fn csdt_matrix(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    debug_assert!(spec.klass.is_csdt());
    let mut per_rule = Vec::new();
    for k in spec.rule_set.iter() {
        if theta.rule_probs[(k - 1) as usize] == 0.0 {
            continue;
        }
        let rows: Result<Vec<Vec<f64>>> = (0..spec.n_stimuli)
            .into_par_iter()
            .map(|h| csdt_row(k, theta, spec, cfg, h))
            .collect();
        per_rule.push((k, ProbMatrix { probs: rows? }));
    }
    mixture_matrix(&per_rule, &theta.rule_probs)
}

/// Predicted probability matrix for any model class.
pub fn predict(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<ProbMatrix> {
    ensure_valid(theta, spec)?;
    match spec.klass {
        ModelClass::SdtEv | ModelClass::SdtUv => Ok(sdt_matrix(theta, spec)),
        ModelClass::CsdtEv | ModelClass::CsdtUv => csdt_matrix(theta, spec, cfg),
        ModelClass::Vdr => {
            let mut per_rule = Vec::new();
            for k in spec.rule_set.iter() {
                if theta.rule_probs[(k - 1) as usize] == 0.0 {
                    continue;
                }
                per_rule.push((k, rule_matrix_impl(k, theta, spec, cfg)?));
            }
            mixture_matrix(&per_rule, &theta.rule_probs)
        }
    }
}

/// Multinomial log-likelihood of the counts under the predicted
/// probabilities, without the combinatorial constant. Cells are floored at
/// [`PROB_FLOOR`] so zero predictions stay finite.
pub fn log_likelihood(pred: &ProbMatrix, data: &CountMatrix) -> f64 {
    debug_assert_eq!(pred.n_stimuli(), data.n_stimuli());
    debug_assert_eq!(pred.n_responses(), data.n_responses());
    let mut ll = 0.0;
    for (prow, crow) in pred.probs.iter().zip(&data.counts) {
        for (&p, &n) in prow.iter().zip(crow) {
            if n > 0 {
                ll += n as f64 * p.clamp(PROB_FLOOR, 1.0).ln();
            }
        }
    }
    ll
}
