//! Derivative-free annealed Metropolis search over constrained parameter
//! sets, multi-start management, and the percent-inconsistency measure.
//!
//! The chain proposes a perturbation of one randomly chosen parameter
//! block, repairs the candidate to the constraints (the same repairs the
//! simulator uses), and accepts with the Metropolis probability under a
//! geometrically cooled temperature. Per-rule probability matrices are
//! cached and only the rows affected by a proposal are recomputed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::VdrError;
use crate::gof::{self, SampleSize};
use crate::model::{
    check_fit_feasible, count_parameters, ensure_valid, CountMatrix, FitResult, ModelSpec,
    ParamSet, ProbMatrix, SD_FLOOR,
};
use crate::quad::QuadConfig;
use crate::rng::substream;
use crate::sim::repair_params;
use crate::{dist, likelihood, Result};

/// Annealing schedule and multi-start settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_steps: usize,
    pub t_initial: f64,
    pub t_final: f64,
    /// Base proposal scale; annealed proportionally to sqrt(T).
    pub proposal_scale: f64,
    pub n_starts: usize,
    pub seed: u64,
    /// Sample-size convention for the AICc correction.
    pub sample_size: SampleSize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_steps: 20_000,
            t_initial: 2.0,
            t_final: 0.01,
            proposal_scale: 0.05,
            n_starts: 4,
            seed: 0,
            sample_size: SampleSize::TotalTrials,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> bool {
        self.t_initial > self.t_final && self.t_final > 0.0 && self.n_steps >= 100
    }
}

/// Percent inconsistency across repeated fits of the same data (Eq.-5
/// style): the spread of log-likelihoods relative to minus their midpoint.
/// Non-negative when all log-likelihoods are negative.
pub fn percent_inconsistency(log_ls: &[f64]) -> Result<f64> {
    if log_ls.len() < 2 || log_ls.iter().any(|v| !v.is_finite()) {
        return Err(VdrError::Undefined(
            "percent_inconsistency needs >= 2 finite values".into(),
        ));
    }
    let max = log_ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = log_ls.iter().cloned().fold(f64::INFINITY, f64::min);
    let denom = (max + min) / -2.0;
    if denom == 0.0 {
        return Err(VdrError::Undefined(
            "percent_inconsistency undefined when max + min = 0".into(),
        ));
    }
    Ok(100.0 * (max - min) / denom)
}

/// Cached per-rule matrices for one parameter state.
struct State {
    theta: ParamSet,
    /// One matrix per rule in the rule set (VDR/CSDT); empty for SDT.
    per_rule: Vec<(u8, ProbMatrix)>,
    log_l: f64,
}

fn rule_row(rule: u8, theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig, h: usize) -> Result<Vec<f64>> {
    if spec.klass.is_csdt() {
        likelihood::csdt_row(rule, theta, spec, cfg, h)
    } else {
        likelihood::vdr_row(rule, theta, spec, cfg, h)
    }
}

fn full_per_rule(theta: &ParamSet, spec: &ModelSpec, cfg: &QuadConfig) -> Result<Vec<(u8, ProbMatrix)>> {
    spec.rule_set
        .iter()
        .map(|k| {
            let rows: Result<Vec<Vec<f64>>> = (0..spec.n_stimuli)
                .map(|h| rule_row(k, theta, spec, cfg, h))
                .collect();
            Ok((k, ProbMatrix { probs: rows? }))
        })
        .collect()
}

fn predicted(theta: &ParamSet, spec: &ModelSpec, per_rule: &[(u8, ProbMatrix)]) -> Result<ProbMatrix> {
    if spec.klass.is_sdt() {
        Ok(likelihood::sdt_matrix(theta, spec))
    } else {
        likelihood::mixture_matrix(per_rule, &theta.rule_probs)
    }
}

#[derive(Clone, Copy, Debug)]
enum Block {
    RepMean,
    RepSd,
    CritMean,
    CritSd,
    RuleProbs,
}

fn available_blocks(spec: &ModelSpec) -> Vec<Block> {
    let mut blocks = vec![Block::RepMean, Block::CritMean];
    if !spec.klass.rep_sds_zero() {
        blocks.push(Block::RepSd);
    }
    if !spec.klass.crit_sds_zero() {
        blocks.push(Block::CritSd);
    }
    if spec.rule_set.len() > 1 {
        blocks.push(Block::RuleProbs);
    }
    blocks
}

fn span_of(theta: &ParamSet) -> f64 {
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
}

/// Propose a repaired candidate; returns the candidate and whether only the
/// rule probabilities changed.
fn propose(
    theta: &ParamSet,
    spec: &ModelSpec,
    scale: f64,
    rng: &mut impl Rng,
) -> (ParamSet, bool) {
    let blocks = available_blocks(spec);
    let block = blocks[rng.gen_range(0..blocks.len())];
    let span = span_of(theta);
    let mut cand = theta.clone();
    let mut probs_only = false;
    let gauss = |rng: &mut dyn rand::RngCore, sd: f64| -> f64 {
        // Box-Muller keeps this free of distribution-crate state
        let u1: f64 = rand::Rng::gen_range(&mut *rng, f64::MIN_POSITIVE..1.0);
        let u2: f64 = rand::Rng::gen_range(&mut *rng, 0.0..1.0);
        sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    match block {
        Block::RepMean => {
            let i = rng.gen_range(0..cand.rep_means.len());
            cand.rep_means[i] += gauss(rng, scale * span);
        }
        Block::CritMean => {
            let i = rng.gen_range(0..cand.crit_means.len());
            cand.crit_means[i] += gauss(rng, scale * span);
        }
        Block::RepSd => {
            if spec.klass.is_sdt() && spec.klass.equal_variance() {
                let d = gauss(rng, scale * (cand.rep_sds[0] + 0.05 * span));
                cand.rep_sds.iter_mut().for_each(|s| *s += d);
            } else {
                let i = rng.gen_range(0..cand.rep_sds.len());
                cand.rep_sds[i] += gauss(rng, scale * (cand.rep_sds[i] + 0.05 * span));
            }
        }
        Block::CritSd => {
            if spec.klass.is_csdt() && spec.klass.equal_variance() {
                let d = gauss(rng, scale * (cand.crit_sds[0] + 0.05 * span));
                cand.crit_sds.iter_mut().for_each(|s| *s += d);
            } else {
                let i = rng.gen_range(0..cand.crit_sds.len());
                cand.crit_sds[i] += gauss(rng, scale * (cand.crit_sds[i] + 0.05 * span));
            }
        }
        Block::RuleProbs => {
            // zero-sum move between two rules keeps the simplex sum exact;
            // the repair handles sign and range
            let rules: Vec<u8> = spec.rule_set.iter().collect();
            let a = rng.gen_range(0..rules.len());
            let mut b = rng.gen_range(0..rules.len() - 1);
            if b >= a {
                b += 1;
            }
            let d = gauss(rng, scale);
            cand.rule_probs[(rules[a] - 1) as usize] += d;
            cand.rule_probs[(rules[b] - 1) as usize] -= d;
            probs_only = true;
        }
    }
    (repair_params(cand, spec, SD_FLOOR), probs_only)
}

fn dirty_rows(old: &ParamSet, new: &ParamSet, probs_only: bool) -> Option<Vec<usize>> {
    if probs_only {
        return Some(Vec::new());
    }
    if old.crit_means != new.crit_means || old.crit_sds != new.crit_sds {
        return None; // criteria affect every row
    }
    Some(
        (0..old.rep_means.len())
            .filter(|&h| old.rep_means[h] != new.rep_means[h] || old.rep_sds[h] != new.rep_sds[h])
            .collect(),
    )
}

/// Single annealed Metropolis run from one start. Returns the best-ever
/// parameters and their log-likelihood.
pub fn fit(
    data: &CountMatrix,
    spec: &ModelSpec,
    start: &ParamSet,
    cfg: &SearchConfig,
    quad: &QuadConfig,
) -> Result<(ParamSet, f64)> {
    if !check_fit_feasible(spec) {
        return Err(VdrError::InfeasibleSpec {
            data_df: spec.data_df(),
            n_params: count_parameters(spec),
        });
    }
    ensure_valid(start, spec)?;
    let mut rng = substream(cfg.seed, "fit", "chain", 0);

    let per_rule = if spec.klass.is_sdt() {
        Vec::new()
    } else {
        full_per_rule(start, spec, quad)?
    };
    let pred = predicted(start, spec, &per_rule)?;
    let mut cur = State {
        theta: start.clone(),
        per_rule,
        log_l: likelihood::log_likelihood(&pred, data),
    };
    let mut best = (cur.theta.clone(), cur.log_l);

    let cool = if cfg.n_steps > 1 {
        (cfg.t_final / cfg.t_initial).powf(1.0 / (cfg.n_steps as f64 - 1.0))
    } else {
        1.0
    };
    let mut temp = cfg.t_initial;
    for _ in 0..cfg.n_steps {
        let scale = cfg.proposal_scale * (temp / cfg.t_initial).sqrt();
        let (cand, probs_only) = propose(&cur.theta, spec, scale, &mut rng);
        let accept_draw: f64 = rng.gen_range(0.0..1.0);

        let cand_eval: Result<(Vec<(u8, ProbMatrix)>, f64)> = (|| {
            if spec.klass.is_sdt() {
                let pred = likelihood::sdt_matrix(&cand, spec);
                return Ok((Vec::new(), likelihood::log_likelihood(&pred, data)));
            }
            let per_rule = match dirty_rows(&cur.theta, &cand, probs_only) {
                Some(rows) if rows.is_empty() && probs_only => cur.per_rule.clone(),
                Some(rows) => {
                    let mut pr = cur.per_rule.clone();
                    for (k, mat) in pr.iter_mut() {
                        for &h in &rows {
                            mat.probs[h] = rule_row(*k, &cand, spec, quad, h)?;
                        }
                    }
                    pr
                }
                None => full_per_rule(&cand, spec, quad)?,
            };
            let pred = predicted(&cand, spec, &per_rule)?;
            Ok((per_rule, likelihood::log_likelihood(&pred, data)))
        })();

        // a proposal whose likelihood cannot be evaluated is treated as -inf
        if let Ok((per_rule, log_l)) = cand_eval {
            let delta = log_l - cur.log_l;
            if delta >= 0.0 || accept_draw < (delta / temp).exp() {
                cur = State {
                    theta: cand,
                    per_rule,
                    log_l,
                };
                if cur.log_l > best.1 {
                    best = (cur.theta.clone(), cur.log_l);
                }
            }
        }
        temp *= cool;
    }
    Ok(best)
}

/// Run `fit` from each start, keep the run with the highest log-likelihood,
/// and record the percent inconsistency across runs.
pub fn multi_start_fit(
    data: &CountMatrix,
    spec: &ModelSpec,
    starts: &[ParamSet],
    cfg: &SearchConfig,
    quad: &QuadConfig,
) -> Result<FitResult> {
    if starts.len() < 2 {
        return Err(VdrError::Undefined(
            "multi_start_fit needs at least two starts".into(),
        ));
    }
    let runs: Result<Vec<(ParamSet, f64)>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let run_cfg = SearchConfig {
                seed: crate::rng::derive_seed(cfg.seed, "fit", "start", i as u64),
                ..cfg.clone()
            };
            fit(data, spec, start, &run_cfg, quad)
        })
        .collect();
    let runs = runs?;
    let log_ls: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let pct_ic = percent_inconsistency(&log_ls)?;
    let mut best_idx = 0;
    for (i, &ll) in log_ls.iter().enumerate() {
        if ll > log_ls[best_idx] {
            best_idx = i;
        }
    }
    let (theta, log_l) = runs.into_iter().nth(best_idx).unwrap();

    let predicted = likelihood::predict(&theta, spec, quad)?;
    let observed = data.proportions();
    let gof = gof::gof(&observed, &predicted)?;
    let n_obs = match cfg.sample_size {
        SampleSize::TotalTrials => data.total() as usize,
        SampleSize::CellCount => data.n_stimuli() * data.n_responses(),
    };
    let aicc = gof::aicc(log_l, count_parameters(spec), n_obs)?;
    Ok(FitResult {
        spec: *spec,
        theta,
        log_l,
        aicc,
        gof,
        n_starts: starts.len(),
        pct_ic,
        seed: cfg.seed,
        data_digest: data.digest(),
    })
}

/// Heuristic starting points: criterion means from pooled cumulative
/// response quantiles, representation means spread over the same range,
/// SDs at the mean inter-criterion gap, and rule probabilities cycling
/// through the simplex corners and centroid of the rule set.
pub fn default_starts(
    spec: &ModelSpec,
    data: &CountMatrix,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<ParamSet> {
    let m1 = spec.n_criteria();
    let total = data.total().max(1) as f64;
    let mut col_totals = vec![0.0f64; spec.n_responses];
    for row in &data.counts {
        for (i, &c) in row.iter().enumerate() {
            col_totals[i] += c as f64;
        }
    }
    let mut cum = 0.0;
    let crit_means: Vec<f64> = (0..m1)
        .map(|i| {
            cum += col_totals[i] / total;
            dist::std_inv_cdf(cum.clamp(1e-3, 1.0 - 1e-3))
        })
        .collect();
    let lo = crit_means.first().copied().unwrap_or(-1.0) - 0.5;
    let hi = crit_means.last().copied().unwrap_or(1.0) + 0.5;
    let n_stim = spec.n_stimuli;
    let rep_means: Vec<f64> = (0..n_stim)
        .map(|h| lo + (hi - lo) * (h as f64 + 0.5) / n_stim as f64)
        .collect();
    let gap = if m1 > 1 {
        (crit_means[m1 - 1] - crit_means[0]) / (m1 as f64 - 1.0)
    } else {
        1.0
    }
    .max(0.2);

    let rules: Vec<u8> = spec.rule_set.iter().collect();
    let mut prob_choices: Vec<[f64; 3]> = rules
        .iter()
        .map(|&k| {
            let mut p = [0.0; 3];
            p[(k - 1) as usize] = 1.0;
            p
        })
        .collect();
    let centroid = {
        let mut p = [0.0; 3];
        for &k in &rules {
            p[(k - 1) as usize] = 1.0 / rules.len() as f64;
        }
        p
    };
    prob_choices.push(centroid);

    (0..n)
        .map(|i| {
            let jitter = 0.05 * (hi - lo).max(1.0);
            let mut theta = ParamSet {
                rep_means: rep_means
                    .iter()
                    .map(|&x| x + jitter * (rng.gen_range(0.0..1.0) - 0.5))
                    .collect(),
                rep_sds: if spec.klass.rep_sds_zero() {
                    vec![0.0; n_stim]
                } else {
                    vec![gap * (1.0 + 0.2 * i as f64 / n.max(1) as f64); n_stim]
                },
                crit_means: crit_means
                    .iter()
                    .map(|&x| x + jitter * (rng.gen_range(0.0..1.0) - 0.5))
                    .collect(),
                crit_sds: if spec.klass.crit_sds_zero() {
                    vec![0.0; m1]
                } else {
                    vec![gap * (0.8 + 0.2 * i as f64 / n.max(1) as f64); m1]
                },
                rule_probs: prob_choices[i % prob_choices.len()],
            };
            theta = repair_params(theta, spec, SD_FLOOR);
            theta
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_params, ModelClass, RuleSet};
    use crate::sim::{self, SimConfig};

    #[test]
    fn pct_ic_examples() {
        assert_eq!(
            percent_inconsistency(&[-100.0, -100.0, -100.0, -100.0]).unwrap(),
            0.0
        );
        let v = percent_inconsistency(&[-100.0, -102.0]).unwrap();
        assert!((v - 100.0 * 2.0 / 101.0).abs() < 1e-9);
        let v = percent_inconsistency(&[-1000.0, -1001.0]).unwrap();
        assert!((v - 100.0 * 1.0 / 1000.5).abs() < 1e-9);
        assert!(percent_inconsistency(&[1.0, -1.0]).is_err());
        assert!(percent_inconsistency(&[-1.0]).is_err());
    }

    #[test]
    fn default_starts_cover_the_simplex() {
        let spec = ModelSpec::general_vdr(5, 10).unwrap();
        let data = CountMatrix {
            counts: vec![vec![40; 10]; 5],
            tps: 400,
        };
        let mut rng = substream(3, "test", "starts", 0);
        let starts = default_starts(&spec, &data, 4, &mut rng);
        assert_eq!(starts.len(), 4);
        let probs: Vec<[f64; 3]> = starts.iter().map(|s| s.rule_probs).collect();
        assert!(probs.contains(&[1.0, 0.0, 0.0]));
        assert!(probs.contains(&[0.0, 1.0, 0.0]));
        assert!(probs.contains(&[0.0, 0.0, 1.0]));
        assert!(probs
            .iter()
            .any(|p| (p[0] - 1.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12));
        for s in &starts {
            assert!(validate_params(s, &spec).is_empty());
        }
        // pairwise distinct
        for i in 0..starts.len() {
            for j in i + 1..starts.len() {
                assert_ne!(starts[i], starts[j]);
            }
        }
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let spec = ModelSpec::general_vdr(3, 4).unwrap();
        let data = CountMatrix {
            counts: vec![vec![10; 4]; 3],
            tps: 40,
        };
        let start = sim::default_generating_params(3, 4);
        let r = fit(&data, &spec, &start, &SearchConfig::default(), &QuadConfig::default());
        assert!(matches!(r, Err(VdrError::InfeasibleSpec { .. })));
    }

    fn quick_search(seed: u64, steps: usize) -> SearchConfig {
        SearchConfig {
            n_steps: steps,
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn sdt_fit_recovers_and_is_deterministic() {
        let spec = ModelSpec::new(3, 5, ModelClass::SdtEv, RuleSet::single(1)).unwrap();
        let theta = ParamSet {
            rep_means: vec![0.0, 1.0, 2.0],
            rep_sds: vec![1.0; 3],
            crit_means: vec![0.0, 0.7, 1.4, 2.1],
            crit_sds: vec![0.0; 4],
            rule_probs: [1.0, 0.0, 0.0],
        };
        let sim_cfg = SimConfig {
            spec,
            theta: theta.clone(),
            tps: 400,
            nsim: 1,
            seed: 11,
            walk_step: 0.1,
        };
        let data = sim::simulate_matrix(&sim_cfg).unwrap();
        let quad = QuadConfig::default();
        let mut rng = substream(1, "test", "starts", 1);
        let starts = default_starts(&spec, &data, 2, &mut rng);
        let a = multi_start_fit(&data, &spec, &starts, &quick_search(7, 2000), &quad).unwrap();
        let b = multi_start_fit(&data, &spec, &starts, &quick_search(7, 2000), &quad).unwrap();
        assert_eq!(a.log_l, b.log_l);
        assert_eq!(a.theta, b.theta);
        assert!(a.gof.r2 > 0.9, "r2 {}", a.gof.r2);
        assert!(a.pct_ic >= 0.0);

        // fitted log_l should at least approach the generating one
        let pred = likelihood::predict(&theta, &spec, &quad).unwrap();
        let gen_ll = likelihood::log_likelihood(&pred, &data);
        assert!(a.log_l > gen_ll - 5.0, "fit {} gen {}", a.log_l, gen_ll);
    }

    #[test]
    fn degenerate_data_does_not_crash() {
        let spec = ModelSpec::new(3, 5, ModelClass::SdtEv, RuleSet::single(1)).unwrap();
        let mut counts = vec![vec![0u64; 5]; 3];
        counts[0][0] = 100;
        counts[1][2] = 100;
        counts[2][4] = 100;
        let data = CountMatrix { counts, tps: 100 };
        let mut rng = substream(2, "test", "starts", 2);
        let starts = default_starts(&spec, &data, 2, &mut rng);
        let r = multi_start_fit(
            &data,
            &spec,
            &starts,
            &quick_search(3, 500),
            &QuadConfig::default(),
        );
        assert!(r.is_ok());
    }
}
