//! Helpers shared by the integration test targets.

use rand::Rng;
use vdr_core::model::{ModelClass, ModelSpec, ParamSet, RuleSet};

/// A random, valid general-VDR parameter set with moderate variances.
pub fn random_theta(n: usize, m: usize, rng: &mut impl Rng) -> ParamSet {
    let span = n as f64 - 1.0;
    let mut rep_means: Vec<f64> = (0..n)
        .map(|h| h as f64 + rng.gen_range(-0.2..0.2))
        .collect();
    rep_means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut crit_means: Vec<f64> = (0..m - 1)
        .map(|j| -0.4 + (span + 0.8) * (j as f64 + 0.5) / (m as f64 - 1.0) + rng.gen_range(-0.1..0.1))
        .collect();
    crit_means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // enforce strict gaps
    for i in 1..rep_means.len() {
        if rep_means[i] - rep_means[i - 1] < 1e-3 {
            rep_means[i] = rep_means[i - 1] + 1e-3;
        }
    }
    for i in 1..crit_means.len() {
        if crit_means[i] - crit_means[i - 1] < 1e-3 {
            crit_means[i] = crit_means[i - 1] + 1e-3;
        }
    }
    let p1: f64 = rng.gen_range(0.05..1.0);
    let p2: f64 = rng.gen_range(0.05..1.0);
    let p3: f64 = rng.gen_range(0.05..1.0);
    let tot = p1 + p2 + p3;
    ParamSet {
        rep_means,
        rep_sds: (0..n).map(|_| rng.gen_range(0.6..1.2)).collect(),
        crit_means,
        crit_sds: (0..m - 1).map(|_| rng.gen_range(0.3..0.7)).collect(),
        rule_probs: [p1 / tot, p2 / tot, p3 / tot],
    }
}

/// Evenly spaced representation and criterion means with equal variances,
/// centered so the construction is mirror-symmetric about its midpoint.
/// Not every test binary that includes this module uses it.
#[allow(dead_code)]
pub fn symmetric_theta(n: usize, m: usize) -> ParamSet {
    let rep_means: Vec<f64> = (0..n).map(|h| h as f64).collect();
    let mid = (n as f64 - 1.0) / 2.0;
    let step = (n as f64 - 1.0) / (m as f64 - 2.0).max(1.0);
    let crit_means: Vec<f64> = (0..m - 1)
        .map(|j| mid + step * (j as f64 - (m as f64 - 2.0) / 2.0))
        .collect();
    ParamSet {
        rep_means,
        rep_sds: vec![1.0; n],
        crit_means,
        crit_sds: vec![0.5; m - 1],
        rule_probs: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    }
}

pub fn vdr_spec(n: usize, m: usize) -> ModelSpec {
    ModelSpec::general_vdr(n, m).unwrap()
}

#[allow(dead_code)] // not every test target uses every helper
pub fn csdt_theta(n: usize, m: usize, rng: &mut impl Rng) -> (ModelSpec, ParamSet) {
    let spec = ModelSpec::new(n, m, ModelClass::CsdtUv, RuleSet::ALL).unwrap();
    let mut theta = random_theta(n, m, rng);
    theta.rep_sds = vec![0.0; n];
    (spec, theta)
}
