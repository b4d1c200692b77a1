//! Pre-fit data screening (partial autocorrelation, response binning), the
//! model-selection pipeline, rule-identification scoring, and the critical
//! sample size scan.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::VdrError;
use crate::fit::{self, SearchConfig};
use crate::gof;
use crate::model::{
    check_fit_feasible, CountMatrix, FitResult, ModelClass, ModelSpec, ParamSet, RuleSet,
};
use crate::quad::QuadConfig;
use crate::rng::{derive_seed, substream};
use crate::sim::{self, SimConfig};
use crate::Result;

/// Raw per-trial data: (stimulus index, response value) in presentation
/// order. Responses may be integer categories or continuous ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSequence {
    pub trials: Vec<(usize, f64)>,
}

impl TrialSequence {
    pub fn responses(&self) -> Vec<f64> {
        self.trials.iter().map(|&(_, r)| r).collect()
    }

    pub fn n_stimuli(&self) -> usize {
        self.trials.iter().map(|&(s, _)| s).max().unwrap_or(0)
    }
}

/// Partial autocorrelations at lags 1..max_lag via the Durbin-Levinson
/// recursion on sample autocorrelations, plus the 95% confidence limit
/// 1.96/sqrt(T).
pub fn pacf(responses: &[f64], max_lag: usize) -> Result<(Vec<f64>, f64)> {
    let t = responses.len();
    if t <= max_lag + 1 {
        return Err(VdrError::DegenerateSeries(format!(
            "need more than {} observations for lag {max_lag}",
            max_lag + 1
        )));
    }
    let mean = responses.iter().sum::<f64>() / t as f64;
    let mut gamma = vec![0.0; max_lag + 1];
    for (k, g) in gamma.iter_mut().enumerate() {
        *g = (k..t)
            .map(|i| (responses[i] - mean) * (responses[i - k] - mean))
            .sum::<f64>()
            / t as f64;
    }
    if gamma[0] <= 0.0 {
        return Err(VdrError::DegenerateSeries("series has zero variance".into()));
    }
    let rho: Vec<f64> = gamma.iter().map(|g| g / gamma[0]).collect();

    let mut phi_prev = vec![0.0; max_lag + 1];
    let mut phi = vec![0.0; max_lag + 1];
    let mut out = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        let pk = if k == 1 {
            rho[1]
        } else {
            let num = rho[k] - (1..k).map(|j| phi_prev[j] * rho[k - j]).sum::<f64>();
            let den = 1.0 - (1..k).map(|j| phi_prev[j] * rho[j]).sum::<f64>();
            if den.abs() < 1e-14 {
                0.0
            } else {
                num / den
            }
        };
        phi[k] = pk;
        for j in 1..k {
            phi[j] = phi_prev[j] - pk * phi_prev[k - j];
        }
        out.push(pk);
        phi_prev[..=k].copy_from_slice(&phi[..=k]);
    }
    Ok((out, 1.96 / (t as f64).sqrt()))
}

/// Verdict of the independence screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreenVerdict {
    Pass,
    Warn,
    Fail,
}

/// PACF summary recorded alongside the verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenSummary {
    pub coefficients: Vec<f64>,
    pub cl95: f64,
    pub verdict: ScreenVerdict,
}

// How far above cl95 a lag-1/lag-2 coefficient may sit and still be only
// a warning.
const WARN_FACTOR: f64 = 1.25;

/// Classify a PACF: pass when everything sits below the confidence limit,
/// warn when only lags 1-2 barely exceed it, fail otherwise.
pub fn classify_pacf(coefficients: &[f64], cl95: f64) -> ScreenVerdict {
    let mut verdict = ScreenVerdict::Pass;
    for (lag0, &c) in coefficients.iter().enumerate() {
        let lag = lag0 + 1;
        let a = c.abs();
        if a <= cl95 {
            continue;
        }
        if lag <= 2 && a <= WARN_FACTOR * cl95 {
            verdict = ScreenVerdict::Warn;
        } else {
            return ScreenVerdict::Fail;
        }
    }
    verdict
}

/// Screen a trial sequence for response dependencies.
pub fn screen(seq: &TrialSequence, max_lag: usize) -> Result<ScreenSummary> {
    let (coefficients, cl95) = pacf(&seq.responses(), max_lag)?;
    let verdict = classify_pacf(&coefficients, cl95);
    Ok(ScreenSummary {
        coefficients,
        cl95,
        verdict,
    })
}

/// Binning strategy for continuous ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BinStrategy {
    #[default]
    EqualWidth,
    EqualCount,
}

/// Bin continuous ratings into a count matrix; returns the matrix and any
/// advisory warnings.
pub fn bin_responses(
    seq: &TrialSequence,
    n_bins: usize,
    strategy: BinStrategy,
) -> Result<(CountMatrix, Vec<String>)> {
    if n_bins < 2 {
        return Err(VdrError::Parse("need at least 2 bins".into()));
    }
    let n = seq.n_stimuli();
    if n == 0 {
        return Err(VdrError::Parse("trial sequence names no stimuli".into()));
    }
    let mut warnings = Vec::new();
    if !(10..=13).contains(&n_bins) {
        warnings.push(format!(
            "{n_bins} bins is outside the recommended 10 to 13 range"
        ));
    }
    let responses = seq.responses();
    let lo = responses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = responses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(VdrError::AllEqualRatings);
    }
    let edges: Vec<f64> = match strategy {
        BinStrategy::EqualWidth => (1..n_bins)
            .map(|i| lo + (hi - lo) * i as f64 / n_bins as f64)
            .collect(),
        BinStrategy::EqualCount => {
            let mut sorted = responses.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (1..n_bins)
                .map(|i| {
                    let idx = (i * sorted.len()) / n_bins;
                    sorted[idx.min(sorted.len() - 1)]
                })
                .collect()
        }
    };
    let mut counts = vec![vec![0u64; n_bins]; n];
    for &(stim, r) in &seq.trials {
        if stim == 0 || stim > n {
            return Err(VdrError::Parse(format!("stimulus index {stim} out of 1..{n}")));
        }
        let bin = edges.partition_point(|&e| e <= r).min(n_bins - 1);
        counts[stim - 1][bin] += 1;
    }
    let nonzero_cols = (0..n_bins)
        .filter(|&i| counts.iter().any(|row| row[i] > 0))
        .count();
    if nonzero_cols <= 1 {
        warnings.push("all responses fall in a single bin; matrix is extremely sparse".into());
    }
    let tps = (seq.trials.len() as f64 / n as f64).round() as u64;
    Ok((CountMatrix { counts, tps }, warnings))
}

/// Configuration bundle for the selection pipeline and the css scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub search: SearchConfig,
    pub quad: QuadConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            search: SearchConfig::default(),
            quad: QuadConfig::default(),
            seed: 0,
        }
    }
}

/// Outcome of the model-selection pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub screened: Option<ScreenSummary>,
    pub fits: Vec<FitResult>,
    pub chosen: ModelSpec,
    /// Ordered record of the comparison steps taken.
    pub narrative: Vec<String>,
}

fn pipeline_fit(
    data: &CountMatrix,
    spec: &ModelSpec,
    cfg: &PipelineConfig,
    step: u64,
) -> Result<FitResult> {
    let mut rng = substream(cfg.seed, "pipeline", "starts", step);
    let starts = fit::default_starts(spec, data, cfg.search.n_starts.max(2), &mut rng);
    let search = SearchConfig {
        seed: derive_seed(cfg.seed, "pipeline", "fit", step),
        ..cfg.search.clone()
    };
    fit::multi_start_fit(data, spec, &starts, &search, &cfg.quad)
}

/// The staged model-selection procedure: general VDR against SDT-UV first,
/// then the refinements the winner suggests, then the CSDT check.
pub fn select_model(
    data: &CountMatrix,
    screened: Option<ScreenSummary>,
    cfg: &PipelineConfig,
) -> Result<SelectionReport> {
    let n = data.n_stimuli();
    let m = data.n_responses();
    let mut narrative = Vec::new();
    let mut fits: Vec<FitResult> = Vec::new();
    let mut step = 0u64;

    let try_fit = |spec: ModelSpec,
                       fits: &mut Vec<FitResult>,
                       narrative: &mut Vec<String>,
                       step: &mut u64|
     -> Result<Option<usize>> {
        *step += 1;
        if !check_fit_feasible(&spec) {
            narrative.push(format!(
                "skipped {} {:?}: infeasible (N(M-1) <= U)",
                spec.klass,
                Vec::<u8>::from(spec.rule_set)
            ));
            return Ok(None);
        }
        let fit = pipeline_fit(data, &spec, cfg, *step)?;
        narrative.push(format!(
            "fitted {} {:?}: log(L) = {:.4}, AICc = {:.4}",
            spec.klass,
            Vec::<u8>::from(spec.rule_set),
            fit.log_l,
            fit.aicc
        ));
        fits.push(fit);
        Ok(Some(fits.len() - 1))
    };

    // step 1: general VDR vs SDT-UV
    let vdr_spec = ModelSpec::general_vdr(n, m)?;
    let sdt_uv = ModelSpec::new(n, m, ModelClass::SdtUv, RuleSet::single(1))?;
    let vdr_idx = try_fit(vdr_spec, &mut fits, &mut narrative, &mut step)?;
    let sdtuv_idx = try_fit(sdt_uv, &mut fits, &mut narrative, &mut step)?;

    let mut best = match (vdr_idx, sdtuv_idx) {
        (Some(a), Some(b)) => {
            let r = gof::compare(&fits[a], &fits[b])?;
            let winner = if r.winner == Some(1) { b } else { a };
            narrative.push(format!(
                "step 1: AICc prefers {} over {}",
                fits[winner].spec.klass,
                fits[if winner == a { b } else { a }].spec.klass
            ));
            winner
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(VdrError::InfeasibleSpec {
                data_df: n * (m - 1),
                n_params: usize::MAX,
            })
        }
    };

    if fits[best].spec.klass == ModelClass::SdtUv {
        // criterion variances look zero; test the equal-variance form
        let sdt_ev = ModelSpec::new(n, m, ModelClass::SdtEv, RuleSet::single(1))?;
        if let Some(i) = try_fit(sdt_ev, &mut fits, &mut narrative, &mut step)? {
            let r = gof::compare(&fits[best], &fits[i])?;
            if r.winner == Some(1) {
                best = i;
            }
            narrative.push(format!(
                "step 2: AICc prefers {} between SDT forms",
                fits[best].spec.klass
            ));
        }
    } else if fits[best].spec.klass == ModelClass::Vdr {
        // pursue the rule-probability clues with reduced rule sets
        let probs = fits[best].theta.rule_probs;
        let mut order: Vec<u8> = vec![1, 2, 3];
        order.sort_by(|&a, &b| {
            probs[(b - 1) as usize]
                .partial_cmp(&probs[(a - 1) as usize])
                .unwrap()
        });
        let candidates = [
            RuleSet::new(&[order[0]])?,
            RuleSet::new(&[order[0], order[1]])?,
        ];
        for rs in candidates {
            let spec = ModelSpec::new(n, m, ModelClass::Vdr, rs)?;
            if let Some(i) = try_fit(spec, &mut fits, &mut narrative, &mut step)? {
                let r = gof::compare(&fits[best], &fits[i])?;
                if r.winner == Some(1) {
                    best = i;
                }
            }
        }
        narrative.push(format!(
            "step 3: best VDR form is {:?}",
            Vec::<u8>::from(fits[best].spec.rule_set)
        ));
    }

    // step 4: CSDT check of nonzero representation variances
    for klass in [ModelClass::CsdtEv, ModelClass::CsdtUv] {
        let spec = ModelSpec::new(n, m, klass, RuleSet::ALL)?;
        if let Some(i) = try_fit(spec, &mut fits, &mut narrative, &mut step)? {
            let r = gof::compare(&fits[best], &fits[i])?;
            if r.winner == Some(1) {
                best = i;
            }
            narrative.push(format!(
                "step 4: {} vs current best -> {}",
                klass,
                fits[best].spec.klass
            ));
        }
    }

    let chosen = fits[best].spec;
    narrative.push(format!(
        "chosen: {} {:?}",
        chosen.klass,
        Vec::<u8>::from(chosen.rule_set)
    ));
    Ok(SelectionReport {
        screened,
        fits,
        chosen,
        narrative,
    })
}

/// Whether a general-VDR fit identified the generating rule structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleIdentification {
    pub fitted_argmax: u8,
    pub generating_argmax: u8,
    pub largest_correct: bool,
    pub fitted_argmin: u8,
    pub generating_argmin: u8,
    pub smallest_correct: bool,
}

fn argmax3(p: &[f64; 3]) -> u8 {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best as u8 + 1
}

fn argmin3(p: &[f64; 3]) -> u8 {
    let mut best = 0;
    for i in 1..3 {
        if p[i] < p[best] {
            best = i;
        }
    }
    best as u8 + 1
}

/// Score whether the fitted rule probabilities recover the generating
/// argmax (single-rule case) and argmin (dual-rule case).
pub fn identify_rules(fit: &FitResult, generating: &ParamSet) -> RuleIdentification {
    let f = &fit.theta.rule_probs;
    let g = &generating.rule_probs;
    let fitted_argmax = argmax3(f);
    let generating_argmax = argmax3(g);
    let fitted_argmin = argmin3(f);
    let generating_argmin = argmin3(g);
    RuleIdentification {
        fitted_argmax,
        generating_argmax,
        largest_correct: fitted_argmax == generating_argmax,
        fitted_argmin,
        generating_argmin,
        smallest_correct: fitted_argmin == generating_argmin,
    }
}

/// One cell of the css preference table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CssRow {
    pub tps: u64,
    /// Times model A was AICc-preferred on A-generated data.
    pub a_correct: usize,
    /// Times model B was AICc-preferred on B-generated data.
    pub b_correct: usize,
    pub reps: usize,
}

/// Result of the sample-size scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CssReport {
    pub rows: Vec<CssRow>,
    /// Smallest grid tps from which both diagonal preference rates stay at
    /// or above the threshold; None when no grid point qualifies.
    pub css: Option<u64>,
    pub threshold: f64,
}

/// Simulation-before-experimentation scan: simulate each model over a tps
/// grid, fit both models to every matrix, and look for the sample size
/// beyond which each model stays the better choice for its own data.
#[allow(clippy::too_many_arguments)]
pub fn css_scan(
    spec_a: &ModelSpec,
    theta_a: &ParamSet,
    spec_b: &ModelSpec,
    theta_b: &ParamSet,
    tps_grid: &[u64],
    reps: usize,
    threshold: f64,
    cfg: &PipelineConfig,
) -> Result<CssReport> {
    if reps < 1 || tps_grid.is_empty() || tps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VdrError::Parse("tps grid must be ascending and reps >= 1".into()));
    }
    let mut rows = Vec::with_capacity(tps_grid.len());
    for (gi, &tps) in tps_grid.iter().enumerate() {
        let mut a_correct = 0;
        let mut b_correct = 0;
        for rep in 0..reps {
            for (side, (g_spec, g_theta)) in
                [(0u64, (spec_a, theta_a)), (1u64, (spec_b, theta_b))]
            {
                let cell = (gi as u64) * 2 * reps as u64 + side * reps as u64 + rep as u64;
                let sim_cfg = SimConfig {
                    spec: *g_spec,
                    theta: g_theta.clone(),
                    tps,
                    nsim: 1,
                    seed: derive_seed(cfg.seed, "css", "sim", cell),
                    walk_step: 0.0,
                };
                let data = sim::simulate_matrix(&sim_cfg)?;
                let sub = PipelineConfig {
                    search: cfg.search.clone(),
                    quad: cfg.quad,
                    seed: derive_seed(cfg.seed, "css", "fit", cell),
                };
                let fit_a = pipeline_fit(&data, spec_a, &sub, 0)?;
                let fit_b = pipeline_fit(&data, spec_b, &sub, 1)?;
                let r = gof::compare(&fit_a, &fit_b)?;
                let a_won = r.winner == Some(0);
                if side == 0 && a_won {
                    a_correct += 1;
                }
                if side == 1 && !a_won && !r.tie {
                    b_correct += 1;
                }
            }
        }
        rows.push(CssRow {
            tps,
            a_correct,
            b_correct,
            reps,
        });
    }
    let need = (threshold * reps as f64).ceil() as usize;
    let mut css = None;
    for i in 0..rows.len() {
        if rows[i..]
            .iter()
            .all(|r| r.a_correct >= need && r.b_correct >= need)
        {
            css = Some(rows[i].tps);
            break;
        }
    }
    Ok(CssReport {
        rows,
        css,
        threshold,
    })
}

/// Simulate a trial sequence from a generating model, in randomized
/// presentation order (used by the diagnostics CLI and tests).
pub fn simulate_trial_sequence(
    theta: &ParamSet,
    spec: &ModelSpec,
    tps: u64,
    seed: u64,
) -> TrialSequence {
    let n = spec.n_stimuli;
    let mut order: Vec<usize> = (0..n as u64 * tps).map(|i| (i % n as u64) as usize).collect();
    let mut rng = substream(seed, "diag", "sequence", 0);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut crits = vec![0.0; spec.n_criteria()];
    let trials = order
        .into_iter()
        .map(|h| {
            let s = if spec.klass.rep_sds_zero() {
                theta.rep_means[h]
            } else {
                use rand_distr::Distribution;
                rand_distr::Normal::new(theta.rep_means[h], theta.effective_rep_sd(spec, h))
                    .unwrap()
                    .sample(&mut rng)
            };
            for (j, c) in crits.iter_mut().enumerate() {
                let sd = theta.effective_crit_sd(spec, j);
                *c = if sd == 0.0 {
                    theta.crit_means[j]
                } else {
                    use rand_distr::Distribution;
                    rand_distr::Normal::new(theta.crit_means[j], sd)
                        .unwrap()
                        .sample(&mut rng)
                };
            }
            let rule = pick_rule(&theta.rule_probs, &mut rng);
            (h + 1, sim::apply_rule(rule, s, &crits) as f64)
        })
        .collect();
    TrialSequence { trials }
}

fn pick_rule(probs: &[f64; 3], rng: &mut impl Rng) -> u8 {
    let u: f64 = rng.gen_range(0.0..1.0);
    if u < probs[0] {
        1
    } else if u < probs[0] + probs[1] {
        2
    } else {
        3
    }
}
