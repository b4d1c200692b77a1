//! Goodness-of-fit measures, AICc, and pairwise model comparison.

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::VdrError;
use crate::model::{FitResult, ProbMatrix};
use crate::Result;

/// Observed proportions paired with predicted probabilities.
#[derive(Debug, Clone)]
pub struct GofInput {
    pub observed: ProbMatrix,
    pub predicted: ProbMatrix,
}

/// The five fit measures: regression of observed on predicted (r2, b0, b1
/// with 95% confidence limits), rmsd, and the Kullback-Leibler divergence
/// in bits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GofBundle {
    pub r2: f64,
    pub rmsd: f64,
    pub b0: f64,
    pub b1: f64,
    pub cl_b0: (f64, f64),
    pub cl_b1: (f64, f64),
    pub kl: f64,
}

/// Two-sided 97.5% Student-t critical value via the Cornish-Fisher
/// expansion around the normal quantile; adequate for the nu >= 10 cell
/// counts seen here.
fn t_crit_975(nu: f64) -> f64 {
    let z = dist::std_inv_cdf(0.975);
    let z3 = z * z * z;
    let z5 = z3 * z * z;
    let z7 = z5 * z * z;
    z + (z3 + z) / (4.0 * nu)
        + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * nu * nu)
        + (3.0 * z7 + 19.0 * z5 + 17.0 * z3 - 15.0 * z) / (384.0 * nu * nu * nu)
}

/// Kullback-Leibler divergence (Eq.-style, base 2) between observed
/// proportions and predicted probabilities, summed over all cells with
/// observed mass; predictions floored at 1e-12.
pub fn kl_divergence(observed: &ProbMatrix, predicted: &ProbMatrix) -> f64 {
    let mut kl = 0.0;
    for (orow, prow) in observed.probs.iter().zip(&predicted.probs) {
        for (&o, &p) in orow.iter().zip(prow) {
            if o > 0.0 {
                kl += o * (o / p.max(1e-12)).log2();
            }
        }
    }
    kl
}

/// Ordinary least squares of observed proportions on predicted
/// probabilities over all cells, plus rmsd and K-L divergence.
pub fn gof(observed: &ProbMatrix, predicted: &ProbMatrix) -> Result<GofBundle> {
    if observed.n_stimuli() != predicted.n_stimuli()
        || observed.n_responses() != predicted.n_responses()
    {
        return Err(VdrError::ShapeMismatch("gof requires matched shapes".into()));
    }
    let xs: Vec<f64> = predicted.probs.iter().flatten().copied().collect();
    let ys: Vec<f64> = observed.probs.iter().flatten().copied().collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - xbar) * (x - xbar);
        syy += (y - ybar) * (y - ybar);
        sxy += (x - xbar) * (y - ybar);
    }
    if sxx <= 0.0 {
        return Err(VdrError::DegenerateSeries(
            "predicted matrix has zero variance across cells".into(),
        ));
    }
    let b1 = sxy / sxx;
    let b0 = ybar - b1 * xbar;
    let r2 = if syy <= 0.0 {
        1.0
    } else {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    };
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let e = y - (b0 + b1 * x);
            e * e
        })
        .sum();
    let nu = n - 2.0;
    let s2 = if nu > 0.0 { (sse / nu).max(0.0) } else { 0.0 };
    let t = t_crit_975(nu.max(1.0));
    let se_b1 = (s2 / sxx).sqrt();
    let se_b0 = (s2 * (1.0 / n + xbar * xbar / sxx)).sqrt();
    let rmsd = (xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| (y - x) * (y - x))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(GofBundle {
        r2,
        rmsd,
        b0,
        b1,
        cl_b0: (b0 - t * se_b0, b0 + t * se_b0),
        cl_b1: (b1 - t * se_b1, b1 + t * se_b1),
        kl: kl_divergence(observed, predicted),
    })
}

/// Sample-size convention for the AICc correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SampleSize {
    /// n = total trial count, the standard multinomial choice.
    #[default]
    TotalTrials,
    /// n = number of matrix cells, N*M.
    CellCount,
}

/// Corrected Akaike Information Criterion.
pub fn aicc(log_l: f64, u: usize, n_obs: usize) -> Result<f64> {
    if n_obs <= u + 1 {
        return Err(VdrError::SampleTooSmall {
            n_obs,
            n_params: u,
        });
    }
    let uf = u as f64;
    let nf = n_obs as f64;
    Ok(-2.0 * log_l + 2.0 * uf + 2.0 * uf * (uf + 1.0) / (nf - uf - 1.0))
}

/// Percent difference between fitted and generating log-likelihoods
/// (positive when the fit beats the generating parameters).
pub fn percent_delta_gf(log_l_f: f64, log_l_g: f64) -> Result<f64> {
    let denom = (log_l_f + log_l_g) / -2.0;
    if denom == 0.0 {
        return Err(VdrError::Undefined(
            "percent_delta_gf undefined when log-likelihoods sum to zero".into(),
        ));
    }
    Ok(100.0 * (log_l_f - log_l_g) / denom)
}

/// Outcome of comparing two fits of the same data by AICc.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// 0 if the first fit wins, 1 if the second; None on an exact tie.
    pub winner: Option<usize>,
    pub tie: bool,
    pub delta_aicc: f64,
    /// Percent AICc difference relative to the pair mean.
    pub pct_aicc_diff: f64,
    pub aicc_a: f64,
    pub aicc_b: f64,
    pub gof_a: GofBundle,
    pub gof_b: GofBundle,
    pub spec_a: crate::model::ModelSpec,
    pub spec_b: crate::model::ModelSpec,
}

/// Compare two fits of the same data; lower AICc wins. Errors if the fits
/// refer to different count matrices.
pub fn compare(fit_a: &FitResult, fit_b: &FitResult) -> Result<ComparisonReport> {
    if fit_a.data_digest != fit_b.data_digest {
        return Err(VdrError::DataMismatch);
    }
    let delta = fit_a.aicc - fit_b.aicc;
    let mean = (fit_a.aicc + fit_b.aicc) / 2.0;
    let pct = if mean != 0.0 {
        100.0 * delta.abs() / mean.abs()
    } else {
        0.0
    };
    let (winner, tie) = if delta < 0.0 {
        (Some(0), false)
    } else if delta > 0.0 {
        (Some(1), false)
    } else {
        (None, true)
    };
    Ok(ComparisonReport {
        winner,
        tie,
        delta_aicc: delta,
        pct_aicc_diff: pct,
        aicc_a: fit_a.aicc,
        aicc_b: fit_b.aicc,
        gof_a: fit_a.gof.clone(),
        gof_b: fit_b.gof.clone(),
        spec_a: fit_a.spec,
        spec_b: fit_b.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: Vec<Vec<f64>>) -> ProbMatrix {
        ProbMatrix { probs: rows }
    }

    #[test]
    fn perfect_fit_bundle() {
        let p = mat(vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]]);
        let g = gof(&p, &p).unwrap();
        assert_eq!(g.r2, 1.0);
        assert_eq!(g.rmsd, 0.0);
        assert!(g.b0.abs() < 1e-12);
        assert!((g.b1 - 1.0).abs() < 1e-12);
        assert_eq!(g.kl, 0.0);
        assert!(g.cl_b0.0 <= g.b0 && g.b0 <= g.cl_b0.1);
        assert!(g.cl_b1.0 <= g.b1 && g.b1 <= g.cl_b1.1);
    }

    #[test]
    fn constant_offset_preserving_rows() {
        // +0.01 on half the cells, -0.01 on the other half of each row
        let pred = mat(vec![vec![0.3, 0.2, 0.3, 0.2], vec![0.1, 0.4, 0.1, 0.4]]);
        let obs = mat(vec![
            vec![0.31, 0.19, 0.31, 0.19],
            vec![0.11, 0.39, 0.11, 0.39],
        ]);
        let g = gof(&obs, &pred).unwrap();
        assert!((g.rmsd - 0.01).abs() < 1e-12);
        assert!((g.b1 - 1.0).abs() < 0.06, "b1 {}", g.b1);
    }

    #[test]
    fn kl_examples() {
        let a = mat(vec![vec![1.0, 0.0]]);
        let b = mat(vec![vec![0.5, 0.5]]);
        assert!((kl_divergence(&a, &b) - 1.0).abs() < 1e-12);

        let a = mat(vec![vec![0.5, 0.5]]);
        let b = mat(vec![vec![0.25, 0.75]]);
        let expect = 0.5f64 * 2.0f64.log2() + 0.5 * (0.5f64 / 0.75).log2();
        assert!((kl_divergence(&a, &b) - expect).abs() < 1e-12);
        assert!((kl_divergence(&a, &b) - 0.2075187496).abs() < 1e-9);

        assert_eq!(kl_divergence(&a, &a), 0.0);
        assert!(kl_divergence(&b, &a) >= 0.0);
    }

    #[test]
    fn aicc_examples() {
        let v = aicc(-1000.0, 30, 2000).unwrap();
        assert!((v - (2000.0 + 60.0 + 1860.0 / 1969.0)).abs() < 1e-9);
        assert_eq!(aicc(-50.0, 0, 100).unwrap(), 100.0);
        // large-n limit approaches plain AIC
        let big = aicc(-1000.0, 30, 100_000_000).unwrap();
        assert!((big - 2060.0).abs() < 1e-4);
        assert!(aicc(-10.0, 30, 31).is_err());
    }

    #[test]
    fn aicc_increasing_in_u() {
        let mut last = f64::NEG_INFINITY;
        for u in 0..20 {
            let v = aicc(-500.0, u, 1000).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn percent_delta_gf_examples() {
        assert_eq!(percent_delta_gf(-100.0, -100.0).unwrap(), 0.0);
        let v = percent_delta_gf(-995.0, -1005.0).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        // antisymmetric in sign
        let a = percent_delta_gf(-995.0, -1005.0).unwrap();
        let b = percent_delta_gf(-1005.0, -995.0).unwrap();
        assert!(a > 0.0 && b < 0.0);
        assert!(percent_delta_gf(-1.0, 1.0).is_err());
    }

    fn dummy_fit(aicc: f64, digest: u64) -> FitResult {
        use crate::model::{ModelSpec, ParamSet};
        FitResult {
            spec: ModelSpec::general_vdr(2, 3).unwrap(),
            theta: ParamSet {
                rep_means: vec![0.0, 1.0],
                rep_sds: vec![1.0, 1.0],
                crit_means: vec![0.2, 0.8],
                crit_sds: vec![0.5, 0.5],
                rule_probs: [1.0, 0.0, 0.0],
            },
            log_l: -10.0,
            aicc,
            gof: GofBundle {
                r2: 1.0,
                rmsd: 0.0,
                b0: 0.0,
                b1: 1.0,
                cl_b0: (0.0, 0.0),
                cl_b1: (1.0, 1.0),
                kl: 0.0,
            },
            n_starts: 2,
            pct_ic: 0.0,
            seed: 0,
            data_digest: digest,
        }
    }

    #[test]
    fn compare_picks_lower_aicc() {
        let a = dummy_fit(100.0, 7);
        let b = dummy_fit(105.0, 7);
        let r = compare(&a, &b).unwrap();
        assert_eq!(r.winner, Some(0));
        assert!(!r.tie);

        let r = compare(&a, &a).unwrap();
        assert!(r.tie);
        assert_eq!(r.winner, None);

        let c = dummy_fit(100.0, 8);
        assert!(compare(&a, &c).is_err());
    }

    #[test]
    fn t_crit_sane() {
        // against tabled two-sided 95% t values
        assert!((t_crit_975(10.0) - 2.228).abs() < 0.01);
        assert!((t_crit_975(30.0) - 2.042).abs() < 0.005);
        assert!((t_crit_975(1e9) - 1.96).abs() < 0.001);
    }
}
