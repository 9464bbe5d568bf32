//! Discriminant analysis via support vectors.
//!
//! A deterministic linear SVM (dual coordinate descent, cyclic order, no
//! shuffling) is trained one-vs-rest per speaker class, with any
//! unlabeled in-domain vectors added to the rest class. The between-class
//! scatter is assembled from the classifier directions, the within-class
//! scatter from labeled support vectors only, and the projection comes
//! from the same generalized eigensolution as LDA.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::corpus::Corpus;
use crate::error::{config_err, data_err, numerical_err, Result};
use crate::lda::{self, Projection, ScatterPair};

/// L1-hinge linear SVM solver parameters. The bias is handled by feature
/// augmentation, so the solved objective is
/// `½(|w|² + b²) + C·Σ hinge(y_i (w·x_i + b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c_reg: f64,
    /// Convergence threshold on both the absolute duality gap and the
    /// KKT residual.
    pub tol: f64,
    /// Coordinate-update budget; defaults to `10·n·d` when unset.
    pub max_updates: Option<usize>,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c_reg: 1.0,
            tol: 1e-6,
            max_updates: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub c_reg: f64,
    /// Indices into the training order (positives first, then negatives)
    /// of points with dual coefficient above the support threshold.
    pub support_indices: Vec<usize>,
    /// Dual coefficients aligned with `support_indices`.
    pub dual_alphas: Vec<f64>,
    /// Dual minimization objective `½|w̃|² − Σα` recorded after each
    /// sweep; non-increasing.
    pub sweep_objectives: Vec<f64>,
    pub duality_gap: f64,
    pub kkt_residual: f64,
}

impl LinearSvm {
    /// Decision value `w·x + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

/// Trains a linear SVM separating `positives` (y=+1) from `negatives`
/// (y=−1) by cyclic dual coordinate descent. Deterministic given the data
/// order. Converges when both the absolute duality gap and the KKT
/// residual fall below `params.tol`; exceeding the update budget first is
/// an error reporting the achieved gap.
pub fn train_linear_svm(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    params: &SvmParams,
) -> Result<LinearSvm> {
    if positives.is_empty() || negatives.is_empty() {
        return data_err("svm: both classes must be nonempty");
    }
    if !(params.c_reg > 0.0) {
        return config_err("svm: c_reg must be positive");
    }
    let d = positives[0].len();
    let n = positives.len() + negatives.len();
    let c = params.c_reg;
    let max_updates = params.max_updates.unwrap_or(10 * n * d.max(1));

    // Augmented points (x, 1) and labels, positives first.
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels: Vec<f64> = Vec::with_capacity(n);
    for v in positives.iter().chain(negatives.iter()) {
        if v.len() != d {
            return data_err("svm: inconsistent training vector dimensions");
        }
        let mut p = Vec::with_capacity(d + 1);
        p.extend_from_slice(v);
        p.push(1.0);
        points.push(p);
    }
    labels.extend(std::iter::repeat_n(1.0, positives.len()));
    labels.extend(std::iter::repeat_n(-1.0, negatives.len()));

    let q_diag: Vec<f64> = points
        .iter()
        .map(|p| p.iter().map(|x| x * x).sum::<f64>())
        .collect();

    let mut alpha = vec![0.0f64; n];
    let mut w_aug = vec![0.0f64; d + 1];
    let mut alpha_sum = 0.0f64;
    let mut updates = 0usize;
    let mut sweep_objectives = Vec::new();
    let (gap, kkt) = loop {
        for i in 0..n {
            let g = labels[i] * dot(&w_aug, &points[i]) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                let new = (old - g / q_diag[i]).clamp(0.0, c);
                let delta = new - old;
                if delta != 0.0 {
                    let dy = delta * labels[i];
                    for (w, x) in w_aug.iter_mut().zip(&points[i]) {
                        *w += dy * x;
                    }
                    alpha_sum += delta;
                    alpha[i] = new;
                }
            }
            updates += 1;
        }

        // Resynchronize w from alpha to bound accumulation drift, then
        // evaluate convergence on the exact iterate.
        w_aug = reconstruct_w(&alpha, &labels, &points, d);
        let w_norm2: f64 = w_aug.iter().map(|x| x * x).sum();
        sweep_objectives.push(0.5 * w_norm2 - alpha_sum);

        let mut hinge_sum = 0.0;
        let mut kkt = 0.0f64;
        let boundary = 1e-10 * c;
        for i in 0..n {
            let margin = labels[i] * dot(&w_aug, &points[i]);
            hinge_sum += (1.0 - margin).max(0.0);
            let viol = if alpha[i] <= boundary {
                (1.0 - margin).max(0.0)
            } else if alpha[i] >= c - boundary {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            kkt = kkt.max(viol);
        }
        let primal = 0.5 * w_norm2 + c * hinge_sum;
        let dual = alpha_sum - 0.5 * w_norm2;
        let gap = primal - dual;
        if gap <= params.tol && kkt <= params.tol {
            break (gap, kkt);
        }
        if updates >= max_updates {
            return numerical_err(format!(
                "svm did not converge within {max_updates} coordinate updates \
                 (duality gap {gap:.3e}, kkt residual {kkt:.3e}, tol {:.1e})",
                params.tol
            ));
        }
    };

    let alpha_max = alpha.iter().cloned().fold(0.0f64, f64::max);
    let alpha_tol = 1e-12 * alpha_max;
    let mut support_indices = Vec::new();
    let mut dual_alphas = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > alpha_tol {
            support_indices.push(i);
            dual_alphas.push(a);
        }
    }
    Ok(LinearSvm {
        w: w_aug[..d].to_vec(),
        b: w_aug[d],
        c_reg: c,
        support_indices,
        dual_alphas,
        sweep_objectives,
        duality_gap: gap,
        kkt_residual: kkt,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reconstruct_w(alpha: &[f64], labels: &[f64], points: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut w = vec![0.0; d + 1];
    for ((&a, &y), p) in alpha.iter().zip(labels).zip(points) {
        if a != 0.0 {
            let ay = a * y;
            for (w, x) in w.iter_mut().zip(p) {
                *w += ay * x;
            }
        }
    }
    w
}

/// Scatter matrices assembled from support vectors: `S_b` sums the
/// one-vs-rest classifier directions `w_c w_cᵀ`; `S_w` sums squared
/// deviations of labeled support vectors about their class support
/// means. Unlabeled support vectors shape the directions but are
/// excluded from `S_w` (they have no class mean).
#[derive(Debug, Clone)]
pub struct SvdaScatter {
    pub s_b: DMatrix<f64>,
    pub s_w: DMatrix<f64>,
    /// Labeled support vector pool X̂, ascending corpus order.
    pub support_pool: Vec<Vec<f64>>,
    /// Per-class index sets Î_c into `support_pool`.
    pub class_support: BTreeMap<String, Vec<usize>>,
    /// Per-class support means μ̂_c.
    pub class_support_means: BTreeMap<String, Vec<f64>>,
    /// N̂ = |X̂|.
    pub support_count: usize,
    /// Per-class classifier directions w_c, in `class_order`.
    pub directions: Vec<Vec<f64>>,
    pub class_order: Vec<String>,
}

impl SvdaScatter {
    pub fn as_scatter_pair(&self) -> ScatterPair {
        ScatterPair {
            s_b: self.s_b.clone(),
            s_w: self.s_w.clone(),
            class_count: self.class_order.len(),
        }
    }
}

/// Per-classifier support-vector counts for the diagnostic report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSupportCounts {
    pub class: String,
    pub positive: usize,
    pub negative_labeled: usize,
    pub negative_unlabeled: usize,
}

#[derive(Debug, Clone)]
pub struct SvdaFit {
    pub projection: Projection,
    pub scatter: SvdaScatter,
    pub support_counts: Vec<ClassSupportCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdaParams {
    pub c_reg: f64,
    /// Inner SVM convergence threshold. Scatter assembly needs far less
    /// direction accuracy than a standalone SVM solve, so this default is
    /// looser than `SvmParams::default`.
    pub svm_tol: f64,
    pub svm_max_updates: Option<usize>,
    pub ridge_eps: f64,
}

impl Default for SvdaParams {
    fn default() -> Self {
        SvdaParams {
            c_reg: 1.0,
            svm_tol: 1e-4,
            svm_max_updates: None,
            ridge_eps: 1e-6,
        }
    }
}

/// Builds `S_b = Σ_c w_c w_cᵀ` from classifier directions.
pub fn between_scatter_from_directions(directions: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let mut s_b = DMatrix::<f64>::zeros(d, d);
    for w in directions {
        let v = DVector::from_column_slice(w);
        s_b += &v * v.transpose();
    }
    s_b
}

/// Fits SVDA over a speaker-labeled corpus, optionally folding unlabeled
/// vectors into every rest class. Returns the projection (top
/// eigenvectors of `(S_w + ridge)⁻¹ S_b`, LDA sign convention) along with
/// the scatter decomposition and per-class support diagnostics.
pub fn fit_svda(
    labeled: &Corpus,
    unlabeled: Option<&Corpus>,
    out_dim: usize,
    params: &SvdaParams,
) -> Result<SvdaFit> {
    let d = labeled.dimension();
    if out_dim == 0 || out_dim > d {
        return config_err(format!("svda: out_dim {out_dim} must be in 1..={d}"));
    }
    if let Some(u) = unlabeled {
        if u.dimension() != d {
            return data_err("svda: unlabeled corpus dimension mismatch");
        }
    }
    let groups = labeled.speaker_groups();
    if groups.len() < 2 {
        return data_err(format!(
            "svda needs at least 2 labeled classes, found {}",
            groups.len()
        ));
    }
    let class_order: Vec<String> = groups.keys().map(|s| s.to_string()).collect();
    let unlabeled_vecs: Vec<&[f64]> = unlabeled
        .map(|u| u.segments().iter().map(|s| s.vector.as_slice()).collect())
        .unwrap_or_default();

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(class_order.len());
    let mut support_counts = Vec::with_capacity(class_order.len());
    let mut is_support = vec![false; labeled.len()];

    for class in &class_order {
        let pos_global = &groups[class.as_str()];
        let positives: Vec<Vec<f64>> = pos_global
            .iter()
            .map(|&i| labeled.segments()[i].vector.clone())
            .collect();

        // Rest class: every other labeled segment, then the unlabeled pool.
        let mut negatives: Vec<Vec<f64>> = Vec::new();
        let mut neg_global: Vec<Option<usize>> = Vec::new();
        for (i, seg) in labeled.segments().iter().enumerate() {
            match &seg.speaker_id {
                Some(spk) if spk == class => {}
                Some(_) => {
                    negatives.push(seg.vector.clone());
                    neg_global.push(Some(i));
                }
                None => {}
            }
        }
        for v in &unlabeled_vecs {
            negatives.push(v.to_vec());
            neg_global.push(None);
        }

        // The looser svm_tol needs more room than the standalone-default
        // 10·n·d update budget gives on overlapping one-vs-rest problems.
        let n_points = positives.len() + negatives.len();
        let svm_params = SvmParams {
            c_reg: params.c_reg,
            tol: params.svm_tol,
            max_updates: Some(
                params
                    .svm_max_updates
                    .unwrap_or(2000 * n_points * d.max(1)),
            ),
        };
        let svm = train_linear_svm(&positives, &negatives, &svm_params)?;
        let mut counts = ClassSupportCounts {
            class: class.clone(),
            positive: 0,
            negative_labeled: 0,
            negative_unlabeled: 0,
        };
        for &si in &svm.support_indices {
            if si < positives.len() {
                counts.positive += 1;
                is_support[pos_global[si]] = true;
            } else {
                match neg_global[si - positives.len()] {
                    Some(g) => {
                        counts.negative_labeled += 1;
                        is_support[g] = true;
                    }
                    None => counts.negative_unlabeled += 1,
                }
            }
        }
        directions.push(svm.w);
        support_counts.push(counts);
    }

    // Labeled support pool, ascending corpus order.
    let mut support_pool = Vec::new();
    let mut class_support: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, seg) in labeled.segments().iter().enumerate() {
        if is_support[i] {
            let spk = seg.speaker_id.clone().expect("support pool is labeled");
            class_support.entry(spk).or_default().push(support_pool.len());
            support_pool.push(seg.vector.clone());
        }
    }
    for class in &class_order {
        if !class_support.contains_key(class) {
            return data_err(format!(
                "svda: class '{class}' has zero support vectors among labeled data"
            ));
        }
    }

    let mut class_support_means: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut s_w = DMatrix::<f64>::zeros(d, d);
    for (class, idxs) in &class_support {
        let mut mean = DVector::<f64>::zeros(d);
        for &i in idxs {
            mean += DVector::from_column_slice(&support_pool[i]);
        }
        mean /= idxs.len() as f64;
        for &i in idxs {
            let r = DVector::from_column_slice(&support_pool[i]) - &mean;
            s_w += &r * r.transpose();
        }
        class_support_means.insert(class.clone(), mean.iter().copied().collect());
    }
    let s_b = between_scatter_from_directions(&directions, d);

    let scatter = SvdaScatter {
        s_b,
        s_w,
        support_count: support_pool.len(),
        support_pool,
        class_support,
        class_support_means,
        directions,
        class_order,
    };
    let projection =
        lda::projection_from_scatter(&scatter.as_scatter_pair(), out_dim, params.ridge_eps)?;
    Ok(SvdaFit {
        projection,
        scatter,
        support_counts,
    })
}

pub fn validate_cascade_dims(input_dim: usize, mid_dim: usize, out_dim: usize) -> Result<()> {
    if out_dim == 0 || out_dim > mid_dim || mid_dim > input_dim {
        return config_err(format!(
            "cascade dims must satisfy 1 <= out ({out_dim}) <= mid ({mid_dim}) <= input ({input_dim})"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CascadeFit {
    /// Composed out_dim × input_dim projection (LDA stage after SVDA stage).
    pub projection: Projection,
    pub svda: SvdaFit,
    pub lda_stage: Projection,
}

/// SVDA to `mid_dim`, then LDA (fit on the SVDA-projected labeled data)
/// to `out_dim`, returned as one composed projection.
pub fn fit_svda_lda_cascade(
    labeled: &Corpus,
    unlabeled: Option<&Corpus>,
    mid_dim: usize,
    out_dim: usize,
    params: &SvdaParams,
    lda_ridge: f64,
) -> Result<CascadeFit> {
    validate_cascade_dims(labeled.dimension(), mid_dim, out_dim)?;
    let svda = fit_svda(labeled, unlabeled, mid_dim, params)?;
    let labeled_mid = lda::project(&svda.projection, labeled)?;
    let lda_stage = lda::fit_lda(&labeled_mid, out_dim, lda_ridge)?;
    let projection = lda_stage.compose(&svda.projection)?;
    Ok(CascadeFit {
        projection,
        svda,
        lda_stage,
    })
}

/// Renders the per-class support-count diagnostic report.
pub fn support_report(counts: &[ClassSupportCounts]) -> String {
    let mut out = String::from("class\tpositive_svs\tnegative_labeled_svs\tnegative_unlabeled_svs\n");
    for c in counts {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            c.class, c.positive, c.negative_labeled, c.negative_unlabeled
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Segment};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn corpus_from(classes: &[(&str, Vec<Vec<f64>>)], domain: Domain, labeled: bool) -> Corpus {
        let d = classes[0].1[0].len();
        let mut segs = Vec::new();
        for (spk, vecs) in classes {
            for (i, v) in vecs.iter().enumerate() {
                segs.push(Segment {
                    segment_id: format!("{domain:?}_{spk}_{i}"),
                    vector: v.clone(),
                    speaker_id: labeled.then(|| spk.to_string()),
                    gender: None,
                    domain,
                    partition_tag: None,
                });
            }
        }
        Corpus::new(d, segs).unwrap()
    }

    #[test]
    fn symmetric_two_point_problem() {
        let svm = train_linear_svm(
            &[vec![1.0, 0.0]],
            &[vec![-1.0, 0.0]],
            &SvmParams {
                c_reg: 1e6,
                tol: 1e-9,
                max_updates: Some(100_000),
            },
        )
        .unwrap();
        assert_relative_eq!(svm.w[0], 1.0, epsilon = 1e-6);
        assert!(svm.w[1].abs() < 1e-9);
        assert!(svm.b.abs() < 1e-9);
        assert_eq!(svm.support_indices, vec![0, 1]);
    }

    #[test]
    fn duplicated_data_gives_same_hyperplane() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![1.0 + rng.random_range(0.0..0.5), rng.random_range(-1.0..1.0)])
            .collect();
        let neg: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![-1.0 - rng.random_range(0.0..0.5), rng.random_range(-1.0..1.0)])
            .collect();
        let params = SvmParams {
            c_reg: 1.0,
            tol: 1e-9,
            max_updates: Some(10_000_000),
        };
        let once = train_linear_svm(&pos, &neg, &params).unwrap();

        let pos2: Vec<Vec<f64>> = pos.iter().chain(pos.iter()).cloned().collect();
        let neg2: Vec<Vec<f64>> = neg.iter().chain(neg.iter()).cloned().collect();
        // Halve C so the doubled hinge term weights losses identically.
        let params2 = SvmParams {
            c_reg: 0.5,
            ..params
        };
        let twice = train_linear_svm(&pos2, &neg2, &params2).unwrap();
        for (a, b) in once.w.iter().zip(&twice.w) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
        assert_relative_eq!(once.b, twice.b, epsilon = 1e-6);
    }

    #[test]
    fn hard_margin_kkt_on_random_separable_set() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.random_range(1.0..3.0), rng.random_range(-2.0..2.0)])
            .collect();
        let neg: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.random_range(-3.0..-1.0), rng.random_range(-2.0..2.0)])
            .collect();
        let svm = train_linear_svm(
            &pos,
            &neg,
            &SvmParams {
                c_reg: 1e6,
                tol: 1e-7,
                max_updates: Some(50_000_000),
            },
        )
        .unwrap();
        for (i, v) in pos.iter().chain(neg.iter()).enumerate() {
            let y = if i < pos.len() { 1.0 } else { -1.0 };
            let m = y * svm.decision(v);
            assert!(m >= 1.0 - 1e-4, "margin constraint violated: {m}");
        }
        for (&si, &a) in svm.support_indices.iter().zip(&svm.dual_alphas) {
            if a > 1e-6 && a < svm.c_reg - 1e-6 {
                let all: Vec<&Vec<f64>> = pos.iter().chain(neg.iter()).collect();
                let y = if si < pos.len() { 1.0 } else { -1.0 };
                let m = y * svm.decision(all[si]);
                assert!((m - 1.0).abs() < 1e-3, "support vector off margin: {m}");
            }
        }
    }

    #[test]
    fn sweep_objective_is_non_increasing_and_w_matches_alphas() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let pos: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..2.0)).collect())
            .collect();
        let neg: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..1.0)).collect())
            .collect();
        let svm = train_linear_svm(
            &pos,
            &neg,
            &SvmParams {
                c_reg: 1.0,
                tol: 1e-8,
                max_updates: Some(10_000_000),
            },
        )
        .unwrap();
        for w in svm.sweep_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(svm.kkt_residual <= 1e-8);
        assert!(svm.duality_gap <= 1e-8);

        // w = sum over support vectors of alpha_i y_i x_i (within 1e-6 |w|)
        let all: Vec<&Vec<f64>> = pos.iter().chain(neg.iter()).collect();
        let mut recon = vec![0.0; 3];
        for (&si, &a) in svm.support_indices.iter().zip(&svm.dual_alphas) {
            let y = if si < pos.len() { 1.0 } else { -1.0 };
            for (r, x) in recon.iter_mut().zip(all[si]) {
                *r += a * y * x;
            }
        }
        let wnorm: f64 = svm.w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (r, w) in recon.iter().zip(&svm.w) {
            assert!((r - w).abs() <= 1e-6 * wnorm.max(1e-12));
        }
    }

    #[test]
    fn non_convergence_reports_gap() {
        // Overlapping classes cannot reach a 1e-12 gap within one sweep.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let pos: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.5)).collect())
            .collect();
        let neg: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.0)).collect())
            .collect();
        let err = train_linear_svm(
            &pos,
            &neg,
            &SvmParams {
                c_reg: 1.0,
                tol: 1e-12,
                max_updates: Some(24),
            },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duality gap"), "{msg}");
    }

    #[test]
    fn single_direction_between_scatter() {
        let s_b = between_scatter_from_directions(&[vec![1.0, 0.0]], 2);
        assert_eq!(s_b, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn symmetric_classes_match_lda_direction() {
        // Balanced symmetric classes with no unlabeled data: both SVDA and
        // LDA are forced onto the separating axis.
        let classes = [
            ("a", vec![vec![1.0, 0.5], vec![1.0, -0.5]]),
            ("b", vec![vec![-1.0, 0.5], vec![-1.0, -0.5]]),
        ];
        let c = corpus_from(&classes, Domain::OutOfDomain, true);
        let svda = fit_svda(&c, None, 1, &SvdaParams::default()).unwrap();
        let lda_p = lda::fit_lda(&c, 1, 1e-6).unwrap();
        let sv = svda.projection.matrix();
        let ld = lda_p.matrix();
        assert_relative_eq!(sv[(0, 0)], ld[(0, 0)], epsilon = 1e-4);
        assert!(sv[(0, 1)].abs() < 1e-4 && ld[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn scatters_match_recomputation_from_support_sets() {
        // 3 classes in d=3, ~20 points per class: rebuild S_b from the
        // reported directions and S_w from the reported support sets via
        // the definitional formulas and compare elementwise.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut classes = Vec::new();
        let centers = [[2.0, 0.0, 0.0], [-1.0, 2.0, 0.0], [-1.0, -2.0, 1.0]];
        for (ci, ctr) in centers.iter().enumerate() {
            let vecs: Vec<Vec<f64>> = (0..20)
                .map(|_| {
                    (0..3)
                        .map(|k| ctr[k] + rng.random_range(-0.8..0.8))
                        .collect()
                })
                .collect();
            classes.push((format!("spk{ci}"), vecs));
        }
        let refs: Vec<(&str, Vec<Vec<f64>>)> = classes
            .iter()
            .map(|(s, v)| (s.as_str(), v.clone()))
            .collect();
        let c = corpus_from(&refs, Domain::OutOfDomain, true);
        let fit = fit_svda(&c, None, 2, &SvdaParams::default()).unwrap();
        let sc = &fit.scatter;

        let s_b2 = between_scatter_from_directions(&sc.directions, 3);
        assert_relative_eq!(sc.s_b, s_b2, epsilon = 1e-8);

        let mut s_w2 = DMatrix::<f64>::zeros(3, 3);
        for (class, idxs) in &sc.class_support {
            let mu = DVector::from_column_slice(&sc.class_support_means[class]);
            let mut mu2 = DVector::<f64>::zeros(3);
            for &i in idxs {
                mu2 += DVector::from_column_slice(&sc.support_pool[i]);
            }
            mu2 /= idxs.len() as f64;
            assert_relative_eq!(mu, mu2, epsilon = 1e-10);
            for &i in idxs {
                let r = DVector::from_column_slice(&sc.support_pool[i]) - &mu;
                s_w2 += &r * r.transpose();
            }
        }
        assert_relative_eq!(sc.s_w, s_w2, epsilon = 1e-8);
        assert_eq!(sc.support_count, sc.support_pool.len());

        // S_b rank is at most the class count.
        let ev = crate::linalg::sym_eigenvalues(&sc.s_b);
        let rank = ev.iter().filter(|&&l| l > 1e-9 * ev.last().unwrap()).count();
        assert!(rank <= 3);
    }

    #[test]
    fn all_support_configuration_reduces_to_lda_within_scatter() {
        // Tiny margin-saturated configuration: every point is a support
        // vector, so S_w equals the plain LDA within-class scatter of the
        // full (== support) pool.
        let classes = [
            ("a", vec![vec![1.0, 0.4], vec![1.0, -0.4]]),
            ("b", vec![vec![-1.0, 0.4], vec![-1.0, -0.4]]),
        ];
        let c = corpus_from(&classes, Domain::OutOfDomain, true);
        let fit = fit_svda(&c, None, 1, &SvdaParams::default()).unwrap();
        assert_eq!(fit.scatter.support_count, 4, "all four points should be support vectors");
        let lda_scatter = lda::compute_scatter(&c).unwrap();
        assert_relative_eq!(fit.scatter.s_w, lda_scatter.s_w, epsilon = 1e-9);
    }

    #[test]
    fn far_unlabeled_cluster_moves_directions() {
        let classes = [
            ("a", vec![vec![1.0, 0.3], vec![1.2, -0.1], vec![0.9, 0.1]]),
            ("b", vec![vec![-1.0, 0.2], vec![-1.1, -0.3], vec![-0.9, 0.0]]),
        ];
        let c = corpus_from(&classes, Domain::OutOfDomain, true);
        let far = corpus_from(
            &[("u", vec![vec![0.5, 8.0], vec![-0.5, 8.5], vec![0.0, 9.0]])],
            Domain::InDomainMajor,
            false,
        );
        let plain = fit_svda(&c, None, 1, &SvdaParams::default()).unwrap();
        let with_unlabeled = fit_svda(&c, Some(&far), 1, &SvdaParams::default()).unwrap();
        let mut delta = 0.0;
        for (wa, wb) in plain
            .scatter
            .directions
            .iter()
            .zip(&with_unlabeled.scatter.directions)
        {
            let diff: f64 = wa
                .iter()
                .zip(wb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            delta += diff;
        }
        assert!(delta > 1e-6, "adding a far unlabeled cluster should move the boundaries");
        let unl_svs: usize = with_unlabeled
            .support_counts
            .iter()
            .map(|c| c.negative_unlabeled)
            .sum();
        assert!(unl_svs > 0, "the far cluster should contribute support vectors");
    }

    #[test]
    fn cascade_composition_equals_sequential_application() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut classes = Vec::new();
        for ci in 0..4 {
            let ctr: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let vecs: Vec<Vec<f64>> = (0..8)
                .map(|_| ctr.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect())
                .collect();
            classes.push((format!("s{ci}"), vecs));
        }
        let refs: Vec<(&str, Vec<Vec<f64>>)> =
            classes.iter().map(|(s, v)| (s.as_str(), v.clone())).collect();
        let c = corpus_from(&refs, Domain::OutOfDomain, true);
        let fit = fit_svda_lda_cascade(&c, None, 3, 2, &SvdaParams::default(), 1e-6).unwrap();
        assert_eq!(fit.projection.input_dim(), 4);
        assert_eq!(fit.projection.output_dim(), 2);
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let direct = fit.projection.apply(&v);
            let staged = fit.lda_stage.apply(&fit.svda.projection.apply(&v));
            for (a, b) in direct.iter().zip(&staged) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn paper_scale_cascade_dims_validate() {
        validate_cascade_dims(600, 500, 400).unwrap();
        assert!(validate_cascade_dims(600, 400, 500).is_err());
        assert!(validate_cascade_dims(400, 500, 300).is_err());
    }
}
