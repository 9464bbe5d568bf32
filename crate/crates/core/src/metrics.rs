//! Detection metrics: exact miss/false-alarm profiles, EER by linear
//! interpolation, and the two-operating-point primary detection cost in
//! min and actual flavors, pooled ("unequalized") or averaged per
//! partition tag ("equalized").

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ScoreSet, TrialKey};
use crate::error::{config_err, data_err, Result};

/// Step-function miss/false-alarm rates at all distinct-score midpoint
/// thresholds plus ∓∞ sentinels. Acceptance rule: score ≥ threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile {
    pub thresholds: Vec<f64>,
    pub p_miss: Vec<f64>,
    pub p_fa: Vec<f64>,
}

pub fn error_profile(scores: &[f64], keys: &[TrialKey]) -> Result<ErrorProfile> {
    if scores.len() != keys.len() {
        return data_err("error_profile: scores and keys length mismatch");
    }
    let n_tar = keys.iter().filter(|k| **k == TrialKey::Target).count();
    let n_non = keys.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return data_err("error_profile: both target and nontarget trials required");
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut p_miss = vec![0.0];
    let mut p_fa = vec![1.0];

    // Walk ascending scores; after passing a distinct-score group, trials
    // in it fall below the next threshold.
    let mut miss = 0usize;
    let mut keep_fa = n_non;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match keys[order[i]] {
                TrialKey::Target => miss += 1,
                TrialKey::Nontarget => keep_fa -= 1,
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            let next = scores[order[i]];
            s + (next - s) * 0.5
        } else {
            f64::INFINITY
        };
        thresholds.push(threshold);
        p_miss.push(miss as f64 / n_tar as f64);
        p_fa.push(keep_fa as f64 / n_non as f64);
    }
    Ok(ErrorProfile {
        thresholds,
        p_miss,
        p_fa,
    })
}

/// Equal error rate by linear interpolation between adjacent profile
/// vertices around the p_miss = p_fa crossing.
pub fn eer(profile: &ErrorProfile) -> f64 {
    let n = profile.p_miss.len();
    for i in 0..n {
        let diff = profile.p_miss[i] - profile.p_fa[i];
        if diff == 0.0 {
            return profile.p_miss[i];
        }
        if diff > 0.0 {
            if i == 0 {
                return profile.p_miss[0];
            }
            let (m0, f0) = (profile.p_miss[i - 1], profile.p_fa[i - 1]);
            let (m1, f1) = (profile.p_miss[i], profile.p_fa[i]);
            // solve m0 + t(m1-m0) = f0 + t(f1-f0)
            let denom = (m1 - m0) - (f1 - f0);
            if denom == 0.0 {
                return 0.5 * (m0 + f0);
            }
            let t = (f0 - m0) / denom;
            return m0 + t * (m1 - m0);
        }
    }
    *profile.p_miss.last().unwrap_or(&0.0)
}

pub fn eer_from_scores(scores: &[f64], keys: &[TrialKey]) -> Result<f64> {
    Ok(eer(&error_profile(scores, keys)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl OperatingPoint {
    /// Bayes decision threshold for calibrated LLR scores.
    pub fn bayes_threshold(&self) -> f64 {
        ((self.c_fa * (1.0 - self.p_target)) / (self.c_miss * self.p_target)).ln()
    }
}

/// Cost parameters: the primary cost averages the normalized detection
/// cost over these operating points. Defaults to the two points
/// (P_target 0.01 and 0.005, unit costs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub operating_points: Vec<OperatingPoint>,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            operating_points: vec![
                OperatingPoint {
                    p_target: 0.01,
                    c_miss: 1.0,
                    c_fa: 1.0,
                },
                OperatingPoint {
                    p_target: 0.005,
                    c_miss: 1.0,
                    c_fa: 1.0,
                },
            ],
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.operating_points.is_empty() {
            return config_err("metrics: at least one operating point required");
        }
        for op in &self.operating_points {
            if !(op.p_target > 0.0 && op.p_target < 1.0) || !(op.c_miss > 0.0) || !(op.c_fa > 0.0) {
                return config_err("metrics: operating point must have 0 < P_target < 1 and positive costs");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Minimize the normalized cost over a shared threshold per
    /// operating point.
    Min,
    /// Evaluate at each operating point's Bayes threshold (scores must be
    /// calibrated LLRs for the result to be meaningful).
    Act,
}

fn normalized_cost(op: &OperatingPoint, p_miss: f64, p_fa: f64) -> f64 {
    let miss_w = op.c_miss * op.p_target;
    let fa_w = op.c_fa * (1.0 - op.p_target);
    (miss_w * p_miss + fa_w * p_fa) / miss_w.min(fa_w)
}

fn rates_at_threshold(scores: &[f64], keys: &[TrialKey], threshold: f64) -> (f64, f64) {
    let mut miss = 0usize;
    let mut fa = 0usize;
    let mut n_tar = 0usize;
    let mut n_non = 0usize;
    for (s, k) in scores.iter().zip(keys) {
        match k {
            TrialKey::Target => {
                n_tar += 1;
                if *s < threshold {
                    miss += 1;
                }
            }
            TrialKey::Nontarget => {
                n_non += 1;
                if *s >= threshold {
                    fa += 1;
                }
            }
        }
    }
    (miss as f64 / n_tar as f64, fa as f64 / n_non as f64)
}

/// Pooled ("unequalized") primary cost: the mean over operating points of
/// the normalized detection cost, minimized over thresholds (`Min`) or
/// evaluated at the Bayes threshold (`Act`).
pub fn cprimary(
    scores: &[f64],
    keys: &[TrialKey],
    params: &CostParams,
    mode: CostMode,
) -> Result<f64> {
    params.validate()?;
    let mut total = 0.0;
    match mode {
        CostMode::Min => {
            let profile = error_profile(scores, keys)?;
            for op in &params.operating_points {
                let best = profile
                    .p_miss
                    .iter()
                    .zip(&profile.p_fa)
                    .map(|(&m, &f)| normalized_cost(op, m, f))
                    .fold(f64::INFINITY, f64::min);
                total += best;
            }
        }
        CostMode::Act => {
            let n_tar = keys.iter().filter(|k| **k == TrialKey::Target).count();
            if n_tar == 0 || n_tar == keys.len() {
                return data_err("cprimary: both classes required");
            }
            for op in &params.operating_points {
                let (m, f) = rates_at_threshold(scores, keys, op.bayes_threshold());
                total += normalized_cost(op, m, f);
            }
        }
    }
    Ok(total / params.operating_points.len() as f64)
}

/// Equalized variant: trials are grouped by partition tag (every trial
/// must carry one), the metric is computed per partition, and the
/// partition values are averaged.
pub fn cprimary_equalized(
    scores: &[f64],
    keys: &[TrialKey],
    partitions: &[Option<String>],
    params: &CostParams,
    mode: CostMode,
) -> Result<f64> {
    equalized_over_partitions(scores, keys, partitions, |s, k| cprimary(s, k, params, mode))
}

pub fn eer_equalized(
    scores: &[f64],
    keys: &[TrialKey],
    partitions: &[Option<String>],
) -> Result<f64> {
    equalized_over_partitions(scores, keys, partitions, eer_from_scores)
}

fn equalized_over_partitions(
    scores: &[f64],
    keys: &[TrialKey],
    partitions: &[Option<String>],
    f: impl Fn(&[f64], &[TrialKey]) -> Result<f64>,
) -> Result<f64> {
    if partitions.len() != scores.len() {
        return data_err("equalized: partition list length mismatch");
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<TrialKey>)> = BTreeMap::new();
    for ((s, k), p) in scores.iter().zip(keys).zip(partitions) {
        let tag = p
            .as_deref()
            .ok_or_else(|| crate::Error::Data("equalized mode requires a partition tag on every trial".into()))?;
        let entry = groups.entry(tag).or_default();
        entry.0.push(*s);
        entry.1.push(*k);
    }
    let mut total = 0.0;
    for (_tag, (s, k)) in &groups {
        total += f(s, k)?;
    }
    Ok(total / groups.len() as f64)
}

/// One system's inputs to the report: raw scores for EER/min-Cprimary
/// and calibrated score sets (by strategy name) for act-Cprimary.
pub struct SystemScores<'a> {
    pub name: String,
    pub raw: &'a ScoreSet,
    pub calibrated: BTreeMap<String, &'a ScoreSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub eer: f64,
    pub min_cprimary: f64,
    /// act-Cprimary per calibration strategy.
    pub act_cprimary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub unequalized: MetricsBlock,
    /// Present only when every trial carries a partition tag.
    pub equalized: Option<MetricsBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub systems: Vec<SystemReport>,
    pub operating_points: Vec<OperatingPoint>,
    pub warnings: Vec<String>,
}

/// Computes the full report. EER and min-Cprimary come from the raw
/// scores (monotone calibration cannot change them); act-Cprimary is
/// evaluated per calibrated score set. Uncalibrated score sets passed as
/// "calibrated" produce a warning rather than an error.
pub fn report(systems: &[SystemScores<'_>], params: &CostParams) -> Result<Report> {
    params.validate()?;
    let mut out = Vec::with_capacity(systems.len());
    let mut warnings = Vec::new();
    for sys in systems {
        let keys = sys.raw.trials.keys()?;
        let scores = &sys.raw.scores;
        let partitions: Vec<Option<String>> = sys
            .raw
            .trials
            .trials
            .iter()
            .map(|t| t.partition_tag.clone())
            .collect();
        let tagged = partitions.iter().all(|p| p.is_some());

        let mut act_uneq = BTreeMap::new();
        let mut act_eq = BTreeMap::new();
        for (strategy, cal) in &sys.calibrated {
            if !cal.calibrated {
                warnings.push(format!(
                    "system '{}' strategy '{strategy}': act-Cprimary computed on scores without a calibration marker",
                    sys.name
                ));
            }
            if cal.trials != sys.raw.trials {
                return data_err(format!(
                    "system '{}' strategy '{strategy}': calibrated trials do not match raw trials",
                    sys.name
                ));
            }
            act_uneq.insert(
                strategy.clone(),
                cprimary(&cal.scores, &keys, params, CostMode::Act)?,
            );
            if tagged {
                act_eq.insert(
                    strategy.clone(),
                    cprimary_equalized(&cal.scores, &keys, &partitions, params, CostMode::Act)?,
                );
            }
        }

        let unequalized = MetricsBlock {
            eer: eer_from_scores(scores, &keys)?,
            min_cprimary: cprimary(scores, &keys, params, CostMode::Min)?,
            act_cprimary: act_uneq,
        };
        let equalized = if tagged {
            Some(MetricsBlock {
                eer: eer_equalized(scores, &keys, &partitions)?,
                min_cprimary: cprimary_equalized(scores, &keys, &partitions, params, CostMode::Min)?,
                act_cprimary: act_eq,
            })
        } else {
            warnings.push(format!(
                "system '{}': equalized metrics skipped (missing partition tags)",
                sys.name
            ));
            None
        };
        out.push(SystemReport {
            system: sys.name.clone(),
            unequalized,
            equalized,
        });
    }
    Ok(Report {
        systems: out,
        operating_points: params.operating_points.clone(),
        warnings,
    })
}

impl Report {
    /// Deterministic fixed-width table; EER as percent, costs to three
    /// decimals, equalized and unequalized separated by `--`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let strategies: Vec<String> = self
            .systems
            .first()
            .map(|s| s.unequalized.act_cprimary.keys().cloned().collect())
            .unwrap_or_default();
        out.push_str("system\tEER/min-Cprimary (eq -- uneq)");
        for s in &strategies {
            out.push_str(&format!("\tact-Cprimary[{s}] (eq -- uneq)"));
        }
        out.push('\n');
        for sys in &self.systems {
            let eq = sys.equalized.as_ref();
            let fmt_pair = |b: &MetricsBlock| format!("{:.2}/{:.3}", 100.0 * b.eer, b.min_cprimary);
            let eq_str = eq.map(fmt_pair).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{} -- {}",
                sys.system,
                eq_str,
                fmt_pair(&sys.unequalized)
            ));
            for s in &strategies {
                let eq_act = eq
                    .and_then(|b| b.act_cprimary.get(s))
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into());
                let uneq_act = sys
                    .unequalized
                    .act_cprimary
                    .get(s)
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!("\t{eq_act} -- {uneq_act}"));
            }
            out.push('\n');
        }
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// DET operating points as a gnuplot-ready two-column table
/// (`p_fa p_miss` per line).
pub fn det_points(profile: &ErrorProfile) -> String {
    let mut out = String::from("# p_fa p_miss\n");
    for (f, m) in profile.p_fa.iter().zip(&profile.p_miss) {
        out.push_str(&format!("{f} {m}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Trial, TrialSet};
    use approx::assert_relative_eq;

    fn keys(tar: usize, non: usize) -> Vec<TrialKey> {
        let mut k = vec![TrialKey::Target; tar];
        k.extend(vec![TrialKey::Nontarget; non]);
        k
    }

    #[test]
    fn separable_profile_has_perfect_vertex() {
        let scores = [2.0, 3.0, 0.0, 1.0];
        let p = error_profile(&scores, &keys(2, 2)).unwrap();
        assert!(p
            .p_miss
            .iter()
            .zip(&p.p_fa)
            .any(|(&m, &f)| m == 0.0 && f == 0.0));
        assert_relative_eq!(eer(&p), 0.0);
        // monotone structure along ascending thresholds
        for w in p.p_miss.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for w in p.p_fa.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn interleaved_scores_cross_at_half() {
        // tar=[1,3], non=[0,2]: the crossing sits exactly at 0.5/0.5.
        let scores = [1.0, 3.0, 0.0, 2.0];
        let p = error_profile(&scores, &keys(2, 2)).unwrap();
        assert_relative_eq!(eer(&p), 0.5);
    }

    #[test]
    fn all_equal_scores_profile_has_only_corners() {
        let scores = [1.0, 1.0, 1.0];
        let p = error_profile(&scores, &keys(1, 2)).unwrap();
        assert_eq!(p.thresholds.len(), 2);
        assert_eq!((p.p_miss[0], p.p_fa[0]), (0.0, 1.0));
        assert_eq!((p.p_miss[1], p.p_fa[1]), (1.0, 0.0));
    }

    #[test]
    fn eer_invariant_under_label_and_sign_swap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ks: Vec<TrialKey> = (0..40)
            .map(|i| {
                if i % 3 == 0 {
                    TrialKey::Target
                } else {
                    TrialKey::Nontarget
                }
            })
            .collect();
        let e1 = eer_from_scores(&scores, &ks).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let swapped: Vec<TrialKey> = ks
            .iter()
            .map(|k| match k {
                TrialKey::Target => TrialKey::Nontarget,
                TrialKey::Nontarget => TrialKey::Target,
            })
            .collect();
        let e2 = eer_from_scores(&neg, &swapped).unwrap();
        assert_relative_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn min_cost_corners() {
        let params = CostParams::default();
        // separable
        let c = cprimary(&[2.0, 3.0, 0.0, 1.0], &keys(2, 2), &params, CostMode::Min).unwrap();
        assert_relative_eq!(c, 0.0);
        // constant scores normalize to 1 at either corner
        let c = cprimary(&[1.0, 1.0, 1.0, 1.0], &keys(2, 2), &params, CostMode::Min).unwrap();
        assert_relative_eq!(c, 1.0);
    }

    #[test]
    fn min_cost_matches_brute_force_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let params = CostParams::default();
        for _ in 0..50 {
            let n = 50;
            let ks: Vec<TrialKey> = (0..n)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.4 {
                        TrialKey::Target
                    } else {
                        TrialKey::Nontarget
                    }
                })
                .collect();
            if !ks.contains(&TrialKey::Target) || !ks.contains(&TrialKey::Nontarget) {
                continue;
            }
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = cprimary(&scores, &ks, &params, CostMode::Min).unwrap();

            // independent sweep: midpoints + sentinels, direct counting
            let mut distinct: Vec<f64> = scores.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
            for w in distinct.windows(2) {
                cands.push(w[0] + (w[1] - w[0]) * 0.5);
            }
            let mut total = 0.0;
            for op in &params.operating_points {
                let mut best = f64::INFINITY;
                for &th in &cands {
                    let (m, f) = rates_at_threshold(&scores, &ks, th);
                    best = best.min(normalized_cost(op, m, f));
                }
                total += best;
            }
            let brute = total / params.operating_points.len() as f64;
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn min_never_exceeds_act_and_act_sees_miscalibration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 200;
        let ks: Vec<TrialKey> = (0..n)
            .map(|i| {
                if i % 5 == 0 {
                    TrialKey::Target
                } else {
                    TrialKey::Nontarget
                }
            })
            .collect();
        let scores: Vec<f64> = ks
            .iter()
            .map(|k| {
                let mu = if *k == TrialKey::Target { 4.0 } else { -2.0 };
                mu + rng.random_range(-2.0..2.0)
            })
            .collect();
        let params = CostParams::default();
        let min_c = cprimary(&scores, &ks, &params, CostMode::Min).unwrap();
        let act_c = cprimary(&scores, &ks, &params, CostMode::Act).unwrap();
        assert!(min_c <= act_c + 1e-12);

        // min mode and EER are invariant under strictly increasing maps;
        // act mode is not.
        let warped: Vec<f64> = scores.iter().map(|s| 3.0 * s + 5.0).collect();
        let min_w = cprimary(&warped, &ks, &params, CostMode::Min).unwrap();
        let act_w = cprimary(&warped, &ks, &params, CostMode::Act).unwrap();
        let eer_orig = eer_from_scores(&scores, &ks).unwrap();
        let eer_w = eer_from_scores(&warped, &ks).unwrap();
        assert_relative_eq!(min_c, min_w, epsilon = 1e-12);
        assert_relative_eq!(eer_orig, eer_w, epsilon = 1e-12);
        assert!((act_c - act_w).abs() > 1e-6);
    }

    #[test]
    fn equalized_reduces_to_unequalized_for_single_partition() {
        let scores = [1.0, 3.0, 0.0, 2.0];
        let ks = keys(2, 2);
        let tags: Vec<Option<String>> = vec![Some("p".into()); 4];
        let params = CostParams::default();
        let eq = cprimary_equalized(&scores, &ks, &tags, &params, CostMode::Min).unwrap();
        let uneq = cprimary(&scores, &ks, &params, CostMode::Min).unwrap();
        assert_relative_eq!(eq, uneq);
        assert_relative_eq!(
            eer_equalized(&scores, &ks, &tags).unwrap(),
            eer_from_scores(&scores, &ks).unwrap()
        );
    }

    #[test]
    fn equalized_requires_tags_everywhere() {
        let scores = [1.0, 3.0, 0.0, 2.0];
        let ks = keys(2, 2);
        let tags = vec![Some("p".to_string()), None, Some("p".into()), Some("p".into())];
        assert!(cprimary_equalized(&scores, &ks, &tags, &CostParams::default(), CostMode::Min).is_err());
    }

    fn score_set(scores: Vec<f64>, ks: &[TrialKey], tag: Option<&str>, calibrated: bool) -> ScoreSet {
        let trials = TrialSet {
            trials: ks
                .iter()
                .enumerate()
                .map(|(i, k)| Trial {
                    enroll_ids: vec![format!("e{i}")],
                    test_id: format!("t{i}"),
                    key: Some(*k),
                    partition_tag: tag.map(String::from),
                })
                .collect(),
        };
        ScoreSet::new(trials, scores, calibrated).unwrap()
    }

    #[test]
    fn report_is_deterministic_and_consistent_with_direct_calls() {
        let ks = keys(3, 5);
        let raw = score_set(vec![2.0, 1.5, 3.0, -1.0, 0.0, -0.5, 0.2, -2.0], &ks, Some("F"), false);
        let cal = score_set(
            raw.scores.iter().map(|s| 2.0 * s).collect(),
            &ks,
            Some("F"),
            true,
        );
        let systems = [SystemScores {
            name: "sys1".into(),
            raw: &raw,
            calibrated: BTreeMap::from([("dev_only".to_string(), &cal)]),
        }];
        let params = CostParams::default();
        let r1 = report(&systems, &params).unwrap();
        let r2 = report(&systems, &params).unwrap();
        assert_eq!(r1.render_text(), r2.render_text());
        assert_eq!(
            serde_json::to_string(&r1.to_json()).unwrap(),
            serde_json::to_string(&r2.to_json()).unwrap()
        );

        let row = &r1.systems[0];
        assert_relative_eq!(
            row.unequalized.eer,
            eer_from_scores(&raw.scores, &ks).unwrap()
        );
        assert_relative_eq!(
            row.unequalized.min_cprimary,
            cprimary(&raw.scores, &ks, &params, CostMode::Min).unwrap()
        );
        assert_relative_eq!(
            row.unequalized.act_cprimary["dev_only"],
            cprimary(&cal.scores, &ks, &params, CostMode::Act).unwrap()
        );
        // single partition: equalized equals unequalized, six numbers total
        let eq = row.equalized.as_ref().unwrap();
        assert_relative_eq!(eq.eer, row.unequalized.eer);
        assert_relative_eq!(eq.min_cprimary, row.unequalized.min_cprimary);
        assert!(r1.warnings.is_empty());
    }

    #[test]
    fn uncalibrated_act_scores_warn() {
        let ks = keys(2, 3);
        let raw = score_set(vec![2.0, 1.0, -1.0, 0.0, -2.0], &ks, None, false);
        let fake_cal = raw.clone();
        let systems = [SystemScores {
            name: "sys".into(),
            raw: &raw,
            calibrated: BTreeMap::from([("dev_only".to_string(), &fake_cal)]),
        }];
        let r = report(&systems, &CostParams::default()).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("calibration marker")));
        // untagged trials also skip equalized metrics with a warning
        assert!(r.systems[0].equalized.is_none());
        assert!(r.warnings.iter().any(|w| w.contains("partition")));
    }

    #[test]
    fn det_table_shape() {
        let p = error_profile(&[1.0, 0.0], &keys(1, 1)).unwrap();
        let s = det_points(&p);
        assert_eq!(s.lines().count(), 1 + p.thresholds.len());
    }
}
