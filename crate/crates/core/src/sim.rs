//! Trial-level simulation of rating experiments, the generating-parameter
//! random walk, and the verbal-rule Monte-Carlo oracle.
//!
//! The simulator and the quadrature of [`crate::likelihood`] are two
//! independent implementations of the same mathematics; agreement between
//! them is the decisive correctness check for the rule equations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{ensure_valid, CountMatrix, ModelSpec, ParamSet, ProbMatrix, MIN_MEAN_GAP};
use crate::quad::QuadConfig;
use crate::rng::substream;
use crate::{likelihood, Result};

/// Inputs for one batch of simulations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec: ModelSpec,
    pub theta: ParamSet,
    /// Trials per stimulus.
    pub tps: u64,
    /// Number of pseudo-data matrices to generate.
    pub nsim: usize,
    pub seed: u64,
    /// Relative scale of the generating-parameter random walk.
    pub walk_step: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            spec: ModelSpec::general_vdr(5, 10).unwrap(),
            theta: default_generating_params(5, 10),
            tps: 400,
            nsim: 1,
            seed: 0,
            walk_step: 0.1,
        }
    }
}

/// A reasonable generating parameter set: evenly spaced means, unit-order
/// SDs, uniform rule probabilities over all three rules.
pub fn default_generating_params(n: usize, m: usize) -> ParamSet {
    let crit = (0..m - 1)
        .map(|j| -0.5 + (n as f64) * (j as f64 + 0.5) / (m as f64 - 1.0))
        .collect();
    ParamSet {
        rep_means: (0..n).map(|h| h as f64).collect(),
        rep_sds: vec![1.0; n],
        crit_means: crit,
        crit_sds: vec![0.5; m - 1],
        rule_probs: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    }
}

/// Apply one decision rule to a representation sample and the momentary
/// criterion samples (which need not be sorted). Returns a 1-based response.
///
/// Rule 1: nearest criterion above s gives its index; default M.
/// Rule 2: nearest criterion below s gives its index + 1; default 1.
/// Rule 3: nearest criterion by absolute distance (ties to the lower
/// index); response is that index if s is below the criterion, else +1.
pub fn apply_rule(rule: u8, s: f64, c: &[f64]) -> usize {
    let m = c.len() + 1;
    match rule {
        1 => {
            let mut best: Option<(usize, f64)> = None;
            for (k, &ck) in c.iter().enumerate() {
                let d = ck - s;
                if d > 0.0 && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best.map_or(m, |(k, _)| k + 1)
        }
        2 => {
            let mut best: Option<(usize, f64)> = None;
            for (k, &ck) in c.iter().enumerate() {
                let d = s - ck;
                if d > 0.0 && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best.map_or(1, |(k, _)| k + 2)
        }
        3 => {
            let mut best = (0usize, f64::INFINITY);
            for (k, &ck) in c.iter().enumerate() {
                let d = (s - ck).abs();
                if d < best.1 {
                    best = (k, d);
                }
            }
            let (k, _) = best;
            if s < c[k] {
                k + 1
            } else {
                k + 2
            }
        }
        _ => panic!("rule must be 1, 2, or 3"),
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        mean
    } else {
        Normal::new(mean, sd).expect("valid normal").sample(rng)
    }
}

/// Tally `tps` trials per stimulus under one rule.
fn rule_counts(
    rule: u8,
    theta: &ParamSet,
    spec: &ModelSpec,
    tps: u64,
    seed: u64,
    batch_index: u64,
) -> Vec<Vec<u64>> {
    let n = spec.n_stimuli;
    let m = spec.n_responses;
    let mut counts = vec![vec![0u64; m]; n];
    for h in 0..n {
        // per-row substream keeps rows independent of scheduling
        let stream_index = batch_index * (3 * n as u64) + (rule as u64 - 1) * n as u64 + h as u64;
        let mut rng = substream(seed, "sim", "trials", stream_index);
        let mu = theta.rep_means[h];
        let sd = theta.effective_rep_sd(spec, h);
        let mut c = vec![0.0; spec.n_criteria()];
        for _ in 0..tps {
            let s = draw(&mut rng, mu, sd);
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = draw(&mut rng, theta.crit_means[j], theta.effective_crit_sd(spec, j));
            }
            let r = apply_rule(rule, s, &c);
            counts[h][r - 1] += 1;
        }
    }
    counts
}

fn simulate_matrix_indexed(cfg: &SimConfig, batch_index: u64) -> Result<CountMatrix> {
    ensure_valid(&cfg.theta, &cfg.spec)?;
    let n = cfg.spec.n_stimuli;
    let m = cfg.spec.n_responses;
    let mut mix = vec![vec![0.0f64; m]; n];
    for rule in 1..=3u8 {
        let p = cfg.theta.rule_probs[(rule - 1) as usize];
        if p == 0.0 {
            continue;
        }
        let counts = rule_counts(rule, &cfg.theta, &cfg.spec, cfg.tps, cfg.seed, batch_index);
        for (acc, row) in mix.iter_mut().zip(&counts) {
            for (a, &cnt) in acc.iter_mut().zip(row) {
                *a += p * cnt as f64;
            }
        }
    }
    let counts = mix
        .into_iter()
        .map(|row| row.into_iter().map(|v| v.round_ties_even() as u64).collect())
        .collect();
    Ok(CountMatrix {
        counts,
        tps: cfg.tps,
    })
}

/// Generate one pseudo-data matrix: trial-level tallies per rule, combined
/// by the rule probabilities and rounded cell-wise (half to even).
pub fn simulate_matrix(cfg: &SimConfig) -> Result<CountMatrix> {
    simulate_matrix_indexed(cfg, 0)
}

/// Monte-Carlo oracle: empirical proportions of the verbal rule at `trials`
/// trials per stimulus, bypassing the mixture.
pub fn mc_rule_proportions(
    rule: u8,
    theta: &ParamSet,
    spec: &ModelSpec,
    trials: u64,
    seed: u64,
) -> ProbMatrix {
    let counts = rule_counts(rule, theta, spec, trials, seed, 0);
    CountMatrix {
        counts,
        tps: trials,
    }
    .proportions()
}

/// Repair a raw parameter vector to the model constraints: sort means into
/// ascending order (with a minimum gap), make SDs positive, restore
/// structural zeros and equal-variance ties, and renormalize the rule
/// probabilities over the rule set.
pub fn repair_params(mut theta: ParamSet, spec: &ModelSpec, sd_floor: f64) -> ParamSet {
    let sort_gap = |xs: &mut Vec<f64>| {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..xs.len() {
            if xs[i] - xs[i - 1] < MIN_MEAN_GAP {
                xs[i] = xs[i - 1] + MIN_MEAN_GAP;
            }
        }
    };
    sort_gap(&mut theta.rep_means);
    sort_gap(&mut theta.crit_means);

    let fix_sds = |sds: &mut Vec<f64>, zero: bool, equal: bool| {
        if zero {
            sds.iter_mut().for_each(|s| *s = 0.0);
            return;
        }
        sds.iter_mut().for_each(|s| *s = s.abs().max(sd_floor));
        if equal {
            let mean = sds.iter().sum::<f64>() / sds.len() as f64;
            sds.iter_mut().for_each(|s| *s = mean);
        }
    };
    fix_sds(
        &mut theta.rep_sds,
        spec.klass.rep_sds_zero(),
        spec.klass.is_sdt() && spec.klass.equal_variance(),
    );
    fix_sds(
        &mut theta.crit_sds,
        spec.klass.crit_sds_zero(),
        spec.klass.is_csdt() && spec.klass.equal_variance(),
    );

    let mut sum = 0.0;
    for k in 1..=3u8 {
        let i = (k - 1) as usize;
        if spec.rule_set.contains(k) {
            theta.rule_probs[i] = theta.rule_probs[i].abs();
            sum += theta.rule_probs[i];
        } else {
            theta.rule_probs[i] = 0.0;
        }
    }
    if sum <= 0.0 {
        let share = 1.0 / spec.rule_set.len() as f64;
        for k in spec.rule_set.iter() {
            theta.rule_probs[(k - 1) as usize] = share;
        }
    } else {
        theta.rule_probs.iter_mut().for_each(|p| *p /= sum);
    }
    theta
}

/// Random-walk step on the generating parameters: zero-mean Gaussian noise
/// scaled by `walk_step`, then the standard repairs.
pub fn perturb_params(
    theta: &ParamSet,
    spec: &ModelSpec,
    walk_step: f64,
    rng: &mut impl Rng,
) -> ParamSet {
    if walk_step == 0.0 {
        return theta.clone();
    }
    let span = {
        let lo = theta
            .rep_means
            .iter()
            .chain(&theta.crit_means)
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = theta
            .rep_means
            .iter()
            .chain(&theta.crit_means)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).max(1.0)
    };
    let mut out = theta.clone();
    for m in out.rep_means.iter_mut().chain(out.crit_means.iter_mut()) {
        *m += draw(rng, 0.0, walk_step * span);
    }
    let perturb_sds = |sds: &mut Vec<f64>, rng: &mut dyn rand::RngCore, equal: bool| {
        if equal {
            let delta = draw(&mut *rng, 0.0, walk_step * (sds[0].abs() + 0.05 * span));
            sds.iter_mut().for_each(|s| *s += delta);
        } else {
            for s in sds.iter_mut() {
                *s += draw(&mut *rng, 0.0, walk_step * (s.abs() + 0.05 * span));
            }
        }
    };
    if !spec.klass.rep_sds_zero() {
        perturb_sds(
            &mut out.rep_sds,
            &mut *rng,
            spec.klass.is_sdt() && spec.klass.equal_variance(),
        );
    }
    if !spec.klass.crit_sds_zero() {
        perturb_sds(
            &mut out.crit_sds,
            &mut *rng,
            spec.klass.is_csdt() && spec.klass.equal_variance(),
        );
    }
    for k in spec.rule_set.iter() {
        out.rule_probs[(k - 1) as usize] += draw(rng, 0.0, walk_step);
    }
    repair_params(out, spec, 1e-3)
}

/// Run `nsim` simulations, walking the generating parameters between them.
/// Each triple carries the generating parameters, the pseudo-data matrix,
/// and the prior log-likelihood log(L)_G of the matrix under them.
pub fn run_batch(cfg: &SimConfig, quad: &QuadConfig) -> Result<Vec<(ParamSet, CountMatrix, f64)>> {
    let mut out = Vec::with_capacity(cfg.nsim);
    let mut theta = cfg.theta.clone();
    let mut walk_rng = substream(cfg.seed, "sim", "walk", 0);
    for i in 0..cfg.nsim {
        let step_cfg = SimConfig {
            theta: theta.clone(),
            ..cfg.clone()
        };
        let matrix = simulate_matrix_indexed(&step_cfg, i as u64)?;
        let pred = likelihood::predict(&theta, &cfg.spec, quad)?;
        let log_l_g = likelihood::log_likelihood(&pred, &matrix);
        out.push((theta.clone(), matrix, log_l_g));
        if i + 1 < cfg.nsim {
            theta = perturb_params(&theta, &cfg.spec, cfg.walk_step, &mut walk_rng);
        }
    }
    Ok(out)
}
