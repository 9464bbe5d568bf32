//! Score calibration and fusion: pool-adjacent-violators calibration to
//! log-likelihood ratios, linear logistic-regression fusion of multiple
//! systems, and synthesis of keyed calibration trials from estimated
//! cluster labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::corpus::{Trial, TrialKey, TrialSet};
use crate::error::{config_err, data_err, numerical_err, Error, Result};

/// Which trials calibrate a system: the keyed development trials, a
/// synthesized trial list over cluster-labeled unlabeled data, or both
/// concatenated with equal per-trial weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStrategy {
    DevOnly,
    UnlabeledOnly,
    DevPlusUnlabeled,
}

impl CalibrationStrategy {
    pub const ALL: [CalibrationStrategy; 3] = [
        CalibrationStrategy::DevOnly,
        CalibrationStrategy::UnlabeledOnly,
        CalibrationStrategy::DevPlusUnlabeled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationStrategy::DevOnly => "dev_only",
            CalibrationStrategy::UnlabeledOnly => "unlabeled_only",
            CalibrationStrategy::DevPlusUnlabeled => "dev_plus_unlabeled",
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        !matches!(self, CalibrationStrategy::DevOnly)
    }

    pub fn uses_dev(self) -> bool {
        !matches!(self, CalibrationStrategy::UnlabeledOnly)
    }
}

/// Monotone step-function score transform from PAV: ascending raw-score
/// knots with non-decreasing calibrated LLR values; inputs outside the
/// knot range clamp to the end values.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    pub breakpoints: Vec<f64>,
    pub calibrated_values: Vec<f64>,
}

impl CalibrationMap {
    pub fn apply_one(&self, score: f64) -> f64 {
        // Largest knot <= score, clamped to the first value below range.
        match self
            .breakpoints
            .partition_point(|&b| b <= score)
            .checked_sub(1)
        {
            Some(i) => self.calibrated_values[i],
            None => self.calibrated_values[0],
        }
    }
}

/// Weighted isotonic regression (squared error) by pool-adjacent
/// violators: returns the non-decreasing fit, one value per input, where
/// pooled blocks take their weighted mean.
pub fn isotonic_regression(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    let n = values.len();
    // Each block: (weighted sum, weight, count of inputs covered).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v * w, w, 1));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.0 / prev.1 > last.0 / last.1 {
                blocks.pop();
                let top = blocks.last_mut().unwrap();
                top.0 += last.0;
                top.1 += last.1;
                top.2 += last.2;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for (sum, weight, count) in blocks {
        let mean = sum / weight;
        out.extend(std::iter::repeat_n(mean, count));
    }
    out
}

/// Fits PAV calibration on keyed scores. Equal raw scores are pre-pooled,
/// isotonic regression fits the 0/1 key sequence in score order, and the
/// pooled posteriors convert to LLRs by removing the empirical target
/// prior: `llr = logit(p) − logit(π)`, clamped to `±llr_cap`.
pub fn pav_fit(scores: &[f64], keys: &[TrialKey], llr_cap: f64) -> Result<CalibrationMap> {
    if scores.len() != keys.len() {
        return data_err("pav: scores and keys length mismatch");
    }
    let n_target = keys.iter().filter(|k| **k == TrialKey::Target).count();
    if n_target == 0 || n_target == keys.len() {
        return data_err("pav: calibration needs both target and nontarget keys");
    }
    if !(llr_cap > 0.0) {
        return config_err("pav: llr_cap must be positive");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Pre-pool ties on the raw score.
    let mut knots: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        let y = if keys[i] == TrialKey::Target { 1.0 } else { 0.0 };
        if knots.last() == Some(&scores[i]) {
            let w = weights.last_mut().unwrap();
            let m = means.last_mut().unwrap();
            *m = (*m * *w + y) / (*w + 1.0);
            *w += 1.0;
        } else {
            knots.push(scores[i]);
            means.push(y);
            weights.push(1.0);
        }
    }

    let fitted = isotonic_regression(&means, &weights);
    let prior = n_target as f64 / keys.len() as f64;
    let prior_logit = (prior / (1.0 - prior)).ln();
    let calibrated_values: Vec<f64> = fitted
        .iter()
        .map(|&p| (logit(p) - prior_logit).clamp(-llr_cap, llr_cap))
        .collect();
    Ok(CalibrationMap {
        breakpoints: knots,
        calibrated_values,
    })
}

fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        (p / (1.0 - p)).ln()
    }
}

/// Applies the monotone map to each score (out-of-range inputs clamp to
/// the end values).
pub fn pav_apply(map: &CalibrationMap, scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| map.apply_one(s)).collect()
}

/// Affine multi-system combiner: `fused = Σ w_j s_j + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Mean L2-regularized logistic loss of a fusion model on keyed scores
/// (the bias is not penalized).
pub fn logistic_loss(model: &FusionModel, systems: &[&[f64]], keys: &[TrialKey], l2: f64) -> f64 {
    let n = keys.len();
    let mut loss = 0.0;
    for i in 0..n {
        let z: f64 = model
            .weights
            .iter()
            .zip(systems)
            .map(|(w, col)| w * col[i])
            .sum::<f64>()
            + model.bias;
        let y = if keys[i] == TrialKey::Target { 1.0 } else { -1.0 };
        loss += log1p_exp(-y * z);
    }
    loss / n as f64 + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Trains the fusion combiner by Newton descent on the convex
/// L2-regularized logistic loss, from zero init with backtracking line
/// search, to gradient norm ≤ 1e-8. `systems` holds one score column per
/// input system, all aligned with `keys`.
pub fn fuse_fit(systems: &[&[f64]], keys: &[TrialKey], l2: f64) -> Result<FusionModel> {
    if systems.is_empty() {
        return data_err("fusion: at least one system required");
    }
    let n = keys.len();
    if n == 0 || systems.iter().any(|col| col.len() != n) {
        return data_err("fusion: score columns must all match the key count");
    }
    let n_target = keys.iter().filter(|k| **k == TrialKey::Target).count();
    if n_target == 0 || n_target == n {
        return data_err("fusion: training keys must contain both classes");
    }
    if !(l2 >= 0.0) {
        return config_err("fusion: l2 penalty must be non-negative");
    }
    let m = systems.len();
    let dim = m + 1; // weights + bias
    let mut theta = vec![0.0f64; dim];
    let grad_tol = 1e-8;
    let max_newton = 200;

    let eval = |theta: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        // loss, gradient, Hessian (row-major dim x dim)
        let mut loss = 0.0;
        let mut grad = vec![0.0f64; dim];
        let mut hess = vec![0.0f64; dim * dim];
        for i in 0..n {
            let mut z = theta[m];
            for (j, col) in systems.iter().enumerate() {
                z += theta[j] * col[i];
            }
            let y = if keys[i] == TrialKey::Target { 1.0 } else { -1.0 };
            loss += log1p_exp(-y * z);
            let sig = 1.0 / (1.0 + (-z).exp()); // P(target | z)
            let t = if y > 0.0 { 1.0 } else { 0.0 };
            let gfac = sig - t;
            let hfac = sig * (1.0 - sig);
            for j in 0..dim {
                let xj = if j < m { systems[j][i] } else { 1.0 };
                grad[j] += gfac * xj;
                for l in j..dim {
                    let xl = if l < m { systems[l][i] } else { 1.0 };
                    hess[j * dim + l] += hfac * xj * xl;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        loss *= inv_n;
        for g in grad.iter_mut() {
            *g *= inv_n;
        }
        for h in hess.iter_mut() {
            *h *= inv_n;
        }
        for j in 0..m {
            loss += 0.5 * l2 * theta[j] * theta[j];
            grad[j] += l2 * theta[j];
            hess[j * dim + j] += l2;
        }
        // mirror, plus a tiny diagonal bump so separable data cannot make
        // the bias direction exactly singular
        for j in 0..dim {
            hess[j * dim + j] += 1e-12;
            for l in 0..j {
                hess[j * dim + l] = hess[l * dim + j];
            }
        }
        (loss, grad, hess)
    };

    let (mut loss, mut grad, mut hess) = eval(&theta);
    for _ in 0..max_newton {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= grad_tol {
            let (weights, bias) = (theta[..m].to_vec(), theta[m]);
            return Ok(FusionModel { weights, bias });
        }
        let h = nalgebra::DMatrix::from_row_slice(dim, dim, &hess);
        let g = nalgebra::DVector::from_column_slice(&grad);
        let step = h
            .cholesky()
            .map(|c| c.solve(&g))
            .unwrap_or_else(|| g.clone()); // gradient fallback
        let mut alpha = 1.0f64;
        let descent: f64 = g.dot(&step);
        loop {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t - alpha * s)
                .collect();
            let (l2_loss, g2, h2) = eval(&trial);
            if l2_loss <= loss - 1e-4 * alpha * descent || alpha < 1e-12 {
                theta = trial;
                loss = l2_loss;
                grad = g2;
                hess = h2;
                break;
            }
            alpha *= 0.5;
        }
    }
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if gnorm <= grad_tol {
        return Ok(FusionModel {
            weights: theta[..m].to_vec(),
            bias: theta[m],
        });
    }
    numerical_err(format!(
        "fusion did not converge: gradient norm {gnorm:.3e} after {max_newton} Newton steps"
    ))
}

/// Applies the combiner to aligned score columns.
pub fn fuse_apply(model: &FusionModel, systems: &[&[f64]]) -> Result<Vec<f64>> {
    if systems.len() != model.weights.len() {
        return data_err(format!(
            "fusion: {} score columns for {} weights",
            systems.len(),
            model.weights.len()
        ));
    }
    let n = systems.first().map(|c| c.len()).unwrap_or(0);
    if systems.iter().any(|c| c.len() != n) {
        return data_err("fusion: ragged score columns");
    }
    Ok((0..n)
        .map(|i| {
            model
                .weights
                .iter()
                .zip(systems)
                .map(|(w, col)| w * col[i])
                .sum::<f64>()
                + model.bias
        })
        .collect())
}

/// Outcome of sampling calibration trials from a cluster assignment,
/// reporting whenever a requested count exceeded availability.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrials {
    pub trials: TrialSet,
    pub target_requested: usize,
    pub target_generated: usize,
    pub nontarget_requested: usize,
    pub nontarget_generated: usize,
}

impl SampledTrials {
    pub fn capped(&self) -> bool {
        self.target_generated < self.target_requested
            || self.nontarget_generated < self.nontarget_requested
    }
}

/// Synthesizes keyed trials from estimated speaker labels: same-cluster
/// segment pairs become targets, cross-cluster pairs nontargets, both
/// sampled without replacement from a seeded stream. Pairs are unordered;
/// the lexicographically smaller segment id enrolls.
pub fn make_unlabeled_trials(
    assignment: &ClusterAssignment,
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<SampledTrials> {
    let clusters: Vec<Vec<&str>> = assignment.clusters().into_values().collect();
    if clusters.len() < 2 {
        return data_err("unlabeled trials need at least 2 clusters");
    }

    // Cumulative counts of within-cluster pairs.
    let mut target_cum: Vec<usize> = Vec::with_capacity(clusters.len());
    let mut total_targets = 0usize;
    for members in &clusters {
        let m = members.len();
        total_targets += m * (m - 1) / 2;
        target_cum.push(total_targets);
    }
    if total_targets == 0 {
        return data_err("no same-cluster pair exists; cannot synthesize target trials");
    }

    // Cumulative counts of cross-cluster pairs over cluster pairs (a < b).
    let mut cross_pairs: Vec<(usize, usize)> = Vec::new();
    let mut cross_cum: Vec<usize> = Vec::new();
    let mut total_cross = 0usize;
    for a in 0..clusters.len() {
        for b in (a + 1)..clusters.len() {
            total_cross += clusters[a].len() * clusters[b].len();
            cross_pairs.push((a, b));
            cross_cum.push(total_cross);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tar_idx = crate::corpus::sample_without_replacement(total_targets, n_target, &mut rng);
    let non_idx = crate::corpus::sample_without_replacement(total_cross, n_nontarget, &mut rng);

    let mut trials = Vec::with_capacity(tar_idx.len() + non_idx.len());
    for idx in &tar_idx {
        let c = target_cum.partition_point(|&cum| cum <= *idx);
        let local = idx - if c == 0 { 0 } else { target_cum[c - 1] };
        let (i, j) = unrank_triangular(local, clusters[c].len());
        trials.push(pair_trial(clusters[c][i], clusters[c][j], TrialKey::Target));
    }
    for idx in &non_idx {
        let p = cross_cum.partition_point(|&cum| cum <= *idx);
        let local = idx - if p == 0 { 0 } else { cross_cum[p - 1] };
        let (a, b) = cross_pairs[p];
        let i = local / clusters[b].len();
        let j = local % clusters[b].len();
        trials.push(pair_trial(clusters[a][i], clusters[b][j], TrialKey::Nontarget));
    }
    Ok(SampledTrials {
        trials: TrialSet { trials },
        target_requested: n_target,
        target_generated: tar_idx.len(),
        nontarget_requested: n_nontarget,
        nontarget_generated: non_idx.len(),
    })
}

fn pair_trial(a: &str, b: &str, key: TrialKey) -> Trial {
    let (enroll, test) = if a <= b { (a, b) } else { (b, a) };
    Trial {
        enroll_ids: vec![enroll.to_string()],
        test_id: test.to_string(),
        key: Some(key),
        partition_tag: None,
    }
}

/// Maps a linear index over {(i, j) : i < j < m} (row-major) back to the
/// pair.
fn unrank_triangular(mut idx: usize, m: usize) -> (usize, usize) {
    for i in 0..m {
        let row = m - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("index out of triangular range")
}

pub fn write_calibration(map: &CalibrationMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "#knots={}", map.breakpoints.len())?;
    for (b, v) in map.breakpoints.iter().zip(&map.calibrated_values) {
        writeln!(w, "{b}\t{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<CalibrationMap> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse_e = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_e(1, "empty calibration file".into()))?;
    let header = header?;
    let knots: usize = header
        .strip_prefix("#knots=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_e(1, format!("expected '#knots=<n>', got '{header}'")))?;
    let mut breakpoints = Vec::with_capacity(knots);
    let mut calibrated_values = Vec::with_capacity(knots);
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (Some(b), Some(v)) = (it.next(), it.next()) else {
            return Err(parse_e(idx + 1, "expected 'score<TAB>llr'".into()));
        };
        breakpoints.push(b.parse().map_err(|_| parse_e(idx + 1, "bad knot".into()))?);
        calibrated_values.push(v.parse().map_err(|_| parse_e(idx + 1, "bad value".into()))?);
    }
    if breakpoints.len() != knots {
        return Err(parse_e(0, format!("expected {knots} knots, found {}", breakpoints.len())));
    }
    Ok(CalibrationMap {
        breakpoints,
        calibrated_values,
    })
}

pub fn write_fusion(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "#systems={}", model.weights.len())?;
    writeln!(w, "#bias={}", model.bias)?;
    for weight in &model.weights {
        writeln!(w, "{weight}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fusion(path: impl AsRef<Path>) -> Result<FusionModel> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines();
    let parse_e = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("#systems="))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_e(1, "expected '#systems=<n>'".into()))?;
    let bias: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("#bias="))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_e(2, "expected '#bias=<b>'".into()))?;
    let weights: std::result::Result<Vec<f64>, _> =
        lines.filter(|l| !l.is_empty()).map(|l| l.parse()).collect();
    let weights = weights.map_err(|_| parse_e(0, "bad weight".into()))?;
    if weights.len() != n {
        return Err(parse_e(0, format!("expected {n} weights, found {}", weights.len())));
    }
    Ok(FusionModel { weights, bias })
}
