//! Domain types: model classes, parameter sets, count and probability
//! matrices, parameter counting, and feasibility checks.

use serde::{Deserialize, Serialize};

use crate::error::VdrError;
use crate::gof::GofBundle;
use crate::Result;

/// Minimum gap enforced between successive means.
pub const MIN_MEAN_GAP: f64 = 1e-9;
/// Lower bound on free standard deviations during fitting.
pub const SD_FLOOR: f64 = 1e-6;
/// Tolerance on the rule-probability sum.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Default tolerance for row normalization of probability matrices.
pub const ROW_SUM_TOL: f64 = 1e-4;

/// Which of the three decision rules an observer may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct RuleSet(u8);

impl RuleSet {
    pub const ALL: RuleSet = RuleSet(0b111);

    pub fn new(rules: &[u8]) -> Result<Self> {
        let mut bits = 0u8;
        for &r in rules {
            if !(1..=3).contains(&r) {
                return Err(VdrError::Parse(format!("rule {r} out of range 1..=3")));
            }
            bits |= 1 << (r - 1);
        }
        if bits == 0 {
            return Err(VdrError::Parse("rule set must be nonempty".into()));
        }
        Ok(RuleSet(bits))
    }

    pub fn single(rule: u8) -> Self {
        RuleSet::new(&[rule]).expect("rule in 1..=3")
    }

    pub fn contains(&self, rule: u8) -> bool {
        rule >= 1 && rule <= 3 && self.0 & (1 << (rule - 1)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (1..=3).filter(|&r| self.contains(r))
    }
}

impl From<RuleSet> for Vec<u8> {
    fn from(rs: RuleSet) -> Self {
        rs.iter().collect()
    }
}

impl TryFrom<Vec<u8>> for RuleSet {
    type Error = VdrError;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        RuleSet::new(&v)
    }
}

/// Model class: the general rule mixture or one of its special cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelClass {
    /// Rule mixture with free representation and criterion variances.
    #[serde(rename = "VDR")]
    Vdr,
    /// Zero criterion variance, equal representation variances.
    #[serde(rename = "SDT-EV")]
    SdtEv,
    /// Zero criterion variance, free representation variances.
    #[serde(rename = "SDT-UV")]
    SdtUv,
    /// Zero representation variance, equal criterion variances.
    #[serde(rename = "CSDT-EV")]
    CsdtEv,
    /// Zero representation variance, free criterion variances.
    #[serde(rename = "CSDT-UV")]
    CsdtUv,
}

impl ModelClass {
    pub fn is_sdt(&self) -> bool {
        matches!(self, ModelClass::SdtEv | ModelClass::SdtUv)
    }

    pub fn is_csdt(&self) -> bool {
        matches!(self, ModelClass::CsdtEv | ModelClass::CsdtUv)
    }

    /// Criterion SDs are structurally zero for SDT classes.
    pub fn crit_sds_zero(&self) -> bool {
        self.is_sdt()
    }

    /// Representation SDs are structurally zero for CSDT classes.
    pub fn rep_sds_zero(&self) -> bool {
        self.is_csdt()
    }

    /// The nonzero SDs are constrained equal for the EV classes.
    pub fn equal_variance(&self) -> bool {
        matches!(self, ModelClass::SdtEv | ModelClass::CsdtEv)
    }
}

impl std::fmt::Display for ModelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelClass::Vdr => "VDR",
            ModelClass::SdtEv => "SDT-EV",
            ModelClass::SdtUv => "SDT-UV",
            ModelClass::CsdtEv => "CSDT-EV",
            ModelClass::CsdtUv => "CSDT-UV",
        };
        f.write_str(s)
    }
}

/// Structural description of a model: dimensions, class, and rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_stimuli: usize,
    pub n_responses: usize,
    pub klass: ModelClass,
    pub rule_set: RuleSet,
}

impl ModelSpec {
    /// Build a spec. SDT classes ignore the rule choice (all rules coincide)
    /// and store `{1}`.
    pub fn new(
        n_stimuli: usize,
        n_responses: usize,
        klass: ModelClass,
        rule_set: RuleSet,
    ) -> Result<Self> {
        if n_stimuli < 1 {
            return Err(VdrError::Parse("need at least one stimulus".into()));
        }
        if n_responses < 2 {
            return Err(VdrError::Parse("need at least two responses".into()));
        }
        let rule_set = if klass.is_sdt() {
            RuleSet::single(1)
        } else {
            rule_set
        };
        Ok(ModelSpec {
            n_stimuli,
            n_responses,
            klass,
            rule_set,
        })
    }

    pub fn general_vdr(n_stimuli: usize, n_responses: usize) -> Result<Self> {
        ModelSpec::new(n_stimuli, n_responses, ModelClass::Vdr, RuleSet::ALL)
    }

    pub fn n_criteria(&self) -> usize {
        self.n_responses - 1
    }

    /// Degrees of freedom of a data matrix under this spec, N(M-1).
    pub fn data_df(&self) -> usize {
        self.n_stimuli * (self.n_responses - 1)
    }
}

/// Number of free parameters U of a model class.
///
/// VDR counts means and SDs for all densities plus the free rule
/// probabilities. The special cases drop the structurally zero SDs and
/// collapse equal-variance SDs to one shared value.
pub fn count_parameters(spec: &ModelSpec) -> usize {
    let n = spec.n_stimuli;
    let m1 = spec.n_responses - 1;
    let k = spec.rule_set.len() - 1;
    match spec.klass {
        ModelClass::Vdr => 2 * n + 2 * m1 + k,
        ModelClass::SdtUv => 2 * n + m1,
        ModelClass::SdtEv => n + 1 + m1,
        ModelClass::CsdtUv => n + 2 * m1 + k,
        ModelClass::CsdtEv => n + m1 + 1 + k,
    }
}

/// Necessary condition for fitting: more data cells than parameters,
/// N(M-1) > U.
pub fn check_fit_feasible(spec: &ModelSpec) -> bool {
    spec.data_df() > count_parameters(spec)
}

/// Full parameter vector of a model: Gaussian density parameters plus the
/// rule probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub rep_means: Vec<f64>,
    pub rep_sds: Vec<f64>,
    pub crit_means: Vec<f64>,
    pub crit_sds: Vec<f64>,
    /// (p_R1, p_R2, p_R3); zero outside the owning spec's rule set.
    pub rule_probs: [f64; 3],
}

impl ParamSet {
    /// Effective SD used in computation: structural zeros stay zero,
    /// everything else is floored.
    pub fn effective_rep_sd(&self, spec: &ModelSpec, h: usize) -> f64 {
        if spec.klass.rep_sds_zero() {
            0.0
        } else {
            self.rep_sds[h].max(SD_FLOOR)
        }
    }

    pub fn effective_crit_sd(&self, spec: &ModelSpec, j: usize) -> f64 {
        if spec.klass.crit_sds_zero() {
            0.0
        } else {
            self.crit_sds[j].max(SD_FLOOR)
        }
    }
}

fn ascending(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] - w[0] >= MIN_MEAN_GAP)
}

fn all_equal(xs: &[f64]) -> bool {
    xs.windows(2)
        .all(|w| (w[1] - w[0]).abs() <= 1e-12 * w[0].abs().max(1.0))
}

/// Every violated invariant of `theta` relative to `spec`; empty means valid.
pub fn validate_params(theta: &ParamSet, spec: &ModelSpec) -> Vec<String> {
    let mut v = Vec::new();
    let n = spec.n_stimuli;
    let m1 = spec.n_criteria();
    if theta.rep_means.len() != n || theta.rep_sds.len() != n {
        v.push(format!("representation parameters must have length {n}"));
        return v;
    }
    if theta.crit_means.len() != m1 || theta.crit_sds.len() != m1 {
        v.push(format!("criterion parameters must have length {m1}"));
        return v;
    }
    if !ascending(&theta.rep_means) {
        v.push("rep_means not ascending".into());
    }
    if !ascending(&theta.crit_means) {
        v.push("crit_means not ascending".into());
    }
    for (name, sds, zero) in [
        ("rep_sds", &theta.rep_sds, spec.klass.rep_sds_zero()),
        ("crit_sds", &theta.crit_sds, spec.klass.crit_sds_zero()),
    ] {
        if zero {
            if sds.iter().any(|&s| s != 0.0) {
                v.push(format!("{name} must be structurally zero for {}", spec.klass));
            }
        } else {
            if sds.iter().any(|&s| !(s > 0.0)) {
                v.push(format!("{name} must be strictly positive"));
            }
        }
    }
    if spec.klass.equal_variance() {
        let sds = if spec.klass.is_sdt() {
            &theta.rep_sds
        } else {
            &theta.crit_sds
        };
        if !all_equal(sds) {
            v.push(format!("equal-variance class {} requires equal SDs", spec.klass));
        }
    }
    let probs = &theta.rule_probs;
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        v.push("rule probabilities outside [0,1]".into());
    }
    if (probs.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL {
        v.push("rule probabilities sum != 1".into());
    }
    for k in 1..=3u8 {
        if !spec.rule_set.contains(k) && probs[(k - 1) as usize] != 0.0 {
            v.push(format!("p_R{k} must be exactly zero outside the rule set"));
        }
    }
    v
}

/// Validate and wrap in a `Result`.
pub fn ensure_valid(theta: &ParamSet, spec: &ModelSpec) -> Result<()> {
    let v = validate_params(theta, spec);
    if v.is_empty() {
        Ok(())
    } else {
        Err(VdrError::InvalidParams(v))
    }
}

/// Affinely rescale so rep_means span [0, 1]. All means shift/scale, all SDs
/// scale, rule probabilities unchanged. For comparing recovered against
/// generating parameters only; predicted probabilities are invariant under
/// this transform.
pub fn canonicalize(theta: &ParamSet) -> Result<ParamSet> {
    let first = *theta
        .rep_means
        .first()
        .ok_or_else(|| VdrError::Undefined("empty rep_means".into()))?;
    let last = *theta.rep_means.last().unwrap();
    let scale = last - first;
    if scale.abs() < 1e-12 {
        return Err(VdrError::Undefined(
            "canonicalize degenerate: rep_means[0] == rep_means[N-1]".into(),
        ));
    }
    let map = |x: f64| (x - first) / scale;
    Ok(ParamSet {
        rep_means: theta.rep_means.iter().map(|&x| map(x)).collect(),
        rep_sds: theta.rep_sds.iter().map(|&s| s / scale).collect(),
        crit_means: theta.crit_means.iter().map(|&x| map(x)).collect(),
        crit_sds: theta.crit_sds.iter().map(|&s| s / scale).collect(),
        rule_probs: theta.rule_probs,
    })
}

/// Observed response counts n(R=i | S_h), N rows by M columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub counts: Vec<Vec<u64>>,
    /// Nominal trials per stimulus.
    pub tps: u64,
}

impl CountMatrix {
    pub fn n_stimuli(&self) -> usize {
        self.counts.len()
    }

    pub fn n_responses(&self) -> usize {
        self.counts.first().map_or(0, |r| r.len())
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Cell-wise rounding of the rule mixture can shift row sums by up to
    /// M/2 away from tps.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_responses();
        if m < 2 || self.counts.iter().any(|r| r.len() != m) {
            return Err(VdrError::ShapeMismatch("ragged or empty count matrix".into()));
        }
        let slack = m as f64 / 2.0;
        for (h, s) in self.row_sums().iter().enumerate() {
            if (*s as f64 - self.tps as f64).abs() > slack {
                return Err(VdrError::ShapeMismatch(format!(
                    "row {h} sum {s} deviates from tps {} by more than M/2",
                    self.tps
                )));
            }
        }
        Ok(())
    }

    /// Row-normalized observed proportions.
    pub fn proportions(&self) -> ProbMatrix {
        let probs = self
            .counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                let s = (s as f64).max(1.0);
                row.iter().map(|&c| c as f64 / s).collect()
            })
            .collect();
        ProbMatrix { probs }
    }

    /// Stable content digest used to check that two fits saw the same data.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64 ^ self.tps;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x100000001b3);
        };
        mix(self.n_stimuli() as u64);
        mix(self.n_responses() as u64);
        for row in &self.counts {
            for &c in row {
                mix(c);
            }
        }
        h
    }
}

/// Conditional response probabilities p(R=i | S_h), rows summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    pub probs: Vec<Vec<f64>>,
}

impl ProbMatrix {
    pub fn n_stimuli(&self) -> usize {
        self.probs.len()
    }

    pub fn n_responses(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for (h, row) in self.probs.iter().enumerate() {
            if row.iter().any(|&p| !(-tol..=1.0 + tol).contains(&p)) {
                return Err(VdrError::ShapeMismatch(format!(
                    "row {h} has a probability outside [0,1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(VdrError::ShapeMismatch(format!(
                    "row {h} sums to {s}, outside 1 +/- {tol}"
                )));
            }
        }
        Ok(())
    }

    /// The matrix rotated 180 degrees: cell (h, i) maps to (N+1-h, M+1-i).
    pub fn rotate180(&self) -> ProbMatrix {
        let probs = self
            .probs
            .iter()
            .rev()
            .map(|row| row.iter().rev().copied().collect())
            .collect();
        ProbMatrix { probs }
    }

    /// Largest absolute cell difference against another matrix.
    pub fn max_abs_diff(&self, other: &ProbMatrix) -> f64 {
        self.probs
            .iter()
            .flatten()
            .zip(other.probs.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean response index (1-based) under a uniform stimulus distribution.
    pub fn mean_response_index(&self) -> f64 {
        let n = self.n_stimuli() as f64;
        self.probs
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, &p)| (i + 1) as f64 * p)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }
}

/// Outcome of a multi-start fit, with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta: ParamSet,
    pub log_l: f64,
    pub aicc: f64,
    pub gof: GofBundle,
    pub n_starts: usize,
    /// Percent inconsistency of log-likelihoods across starts.
    pub pct_ic: f64,
    pub seed: u64,
    /// Digest of the fitted count matrix.
    pub data_digest: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vdr_spec(n: usize, m: usize, rules: &[u8]) -> ModelSpec {
        ModelSpec::new(n, m, ModelClass::Vdr, RuleSet::new(rules).unwrap()).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_parameters(&vdr_spec(5, 10, &[1, 2, 3])), 30);
        assert_eq!(count_parameters(&vdr_spec(5, 10, &[1])), 28);
        let sdt_uv = ModelSpec::new(5, 10, ModelClass::SdtUv, RuleSet::ALL).unwrap();
        assert_eq!(count_parameters(&sdt_uv), 19);
        let sdt_ev = ModelSpec::new(5, 10, ModelClass::SdtEv, RuleSet::ALL).unwrap();
        assert_eq!(count_parameters(&sdt_ev), 15);
        let csdt_uv =
            ModelSpec::new(5, 10, ModelClass::CsdtUv, RuleSet::new(&[1, 2, 3]).unwrap()).unwrap();
        assert_eq!(count_parameters(&csdt_uv), 25);
        let csdt_ev =
            ModelSpec::new(5, 10, ModelClass::CsdtEv, RuleSet::new(&[1, 2, 3]).unwrap()).unwrap();
        assert_eq!(count_parameters(&csdt_ev), 17);
    }

    #[test]
    fn count_is_monotone_in_dimensions_and_rules() {
        for klass in [
            ModelClass::Vdr,
            ModelClass::SdtEv,
            ModelClass::SdtUv,
            ModelClass::CsdtEv,
            ModelClass::CsdtUv,
        ] {
            for n in 1..6 {
                for m in 2..8 {
                    let u = |n, m, rules: &[u8]| {
                        count_parameters(
                            &ModelSpec::new(n, m, klass, RuleSet::new(rules).unwrap()).unwrap(),
                        )
                    };
                    assert!(u(n + 1, m, &[1, 2]) >= u(n, m, &[1, 2]));
                    assert!(u(n, m + 1, &[1, 2]) >= u(n, m, &[1, 2]));
                    assert!(u(n, m, &[1, 2, 3]) >= u(n, m, &[1, 2]));
                    assert!(u(n, m, &[1, 2]) >= u(n, m, &[1]));
                }
            }
        }
    }

    #[test]
    fn feasibility() {
        assert!(check_fit_feasible(&vdr_spec(5, 10, &[1, 2, 3])));
        assert!(!check_fit_feasible(&vdr_spec(3, 4, &[1, 2, 3])));
        assert!(!check_fit_feasible(&vdr_spec(1, 2, &[1])));
    }

    fn simple_theta() -> ParamSet {
        ParamSet {
            rep_means: vec![0.0, 1.0],
            rep_sds: vec![1.0, 1.0],
            crit_means: vec![0.5],
            crit_sds: vec![0.5],
            rule_probs: [0.5, 0.5, 0.0],
        }
    }

    #[test]
    fn validation_flags_each_violation() {
        let spec = vdr_spec(2, 2, &[1, 2]);
        assert!(validate_params(&simple_theta(), &spec).is_empty());

        let mut t = simple_theta();
        t.rep_means = vec![1.0, 0.5];
        assert!(validate_params(&t, &spec)
            .iter()
            .any(|v| v.contains("rep_means not ascending")));

        let mut t = simple_theta();
        t.rule_probs = [0.6, 0.6, 0.0];
        assert!(validate_params(&t, &spec)
            .iter()
            .any(|v| v.contains("sum != 1")));

        let mut t = simple_theta();
        t.rule_probs = [0.5, 0.4, 0.1];
        assert!(validate_params(&t, &spec)
            .iter()
            .any(|v| v.contains("outside the rule set")));
    }

    #[test]
    fn canonicalize_affine_map_and_idempotence() {
        let theta = ParamSet {
            rep_means: vec![2.0, 4.0],
            rep_sds: vec![1.0, 1.0],
            crit_means: vec![3.0],
            crit_sds: vec![1.0],
            rule_probs: [1.0, 0.0, 0.0],
        };
        let c = canonicalize(&theta).unwrap();
        assert_eq!(c.rep_means, vec![0.0, 1.0]);
        assert_eq!(c.rep_sds, vec![0.5, 0.5]);
        assert_eq!(c.crit_means, vec![0.5]);
        let c2 = canonicalize(&c).unwrap();
        assert_eq!(c, c2);

        let mut degen = theta;
        degen.rep_means = vec![1.0, 1.0];
        assert!(canonicalize(&degen).is_err());
    }

    #[test]
    fn digest_distinguishes_data() {
        let a = CountMatrix {
            counts: vec![vec![1, 2], vec![3, 4]],
            tps: 3,
        };
        let mut b = a.clone();
        b.counts[0][0] = 2;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = vdr_spec(5, 10, &[1, 3]);
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"VDR\""));
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
