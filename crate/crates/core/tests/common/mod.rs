//! Independent oracles for the acceptance suite. Everything here
//! recomputes results through a different algebraic route than the
//! library: a hand-rolled cyclic Jacobi eigensolver with symmetric
//! whitening for generalized eigenproblems, explicit joint-Gaussian
//! densities for PLDA, direct threshold counting for detection costs,
//! and exhaustive partition search for isotonic fits.

#![allow(dead_code)]

pub mod scenario;

use nalgebra::DMatrix;
use spkver::corpus::TrialKey;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix given as rows.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let frob: f64 = m
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let tol = 1e-15 * frob.max(1e-300);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[i][j].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    (values, v)
}

/// Whiten-then-eigensolve oracle for `S_b a = λ S_w a` (S_w already
/// ridged, positive definite): `S_w^{-1/2}` from a Jacobi decomposition,
/// a second Jacobi solve on the whitened `S_b`, eigenvectors mapped back
/// through the symmetric inverse square root. Returns the top-k
/// (eigenvalues desc, eigenvector rows).
pub fn generalized_eigen_oracle(
    s_b: &DMatrix<f64>,
    s_w: &DMatrix<f64>,
    k: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = s_w.nrows();
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    let (w_vals, w_vecs) = jacobi_eigen(&rows(s_w));
    // inv_sqrt[i][j] = sum_l v[i][l] * v[j][l] / sqrt(lambda_l)
    let mut inv_sqrt = vec![vec![0.0f64; d]; d];
    for (l, &lam) in w_vals.iter().enumerate() {
        assert!(lam > 0.0, "oracle whitening needs positive definite S_w");
        let inv = 1.0 / lam.sqrt();
        for i in 0..d {
            for j in 0..d {
                inv_sqrt[i][j] += w_vecs[i][l] * w_vecs[j][l] * inv;
            }
        }
    }
    let mat_mul = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let n = a.len();
        let p = b[0].len();
        let mut out = vec![vec![0.0; p]; n];
        for i in 0..n {
            for (l, bl) in b.iter().enumerate() {
                let ail = a[i][l];
                if ail != 0.0 {
                    for j in 0..p {
                        out[i][j] += ail * bl[j];
                    }
                }
            }
        }
        out
    };
    let sb_rows = rows(s_b);
    let mut m = mat_mul(&mat_mul(&inv_sqrt, &sb_rows), &inv_sqrt);
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    let (m_vals, m_vecs) = jacobi_eigen(&m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| m_vals[b].total_cmp(&m_vals[a]));

    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        values.push(m_vals[idx]);
        // a = S_w^{-1/2} v, then unit-normalized with the library's sign
        // convention so both routes are comparable rowwise.
        let mut a: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| inv_sqrt[i][j] * m_vecs[j][idx]).sum())
            .collect();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in a.iter_mut() {
            *x /= norm;
        }
        if let Some(first) = a.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                for x in a.iter_mut() {
                    *x = -*x;
                }
            }
        }
        vectors.push(a);
    }
    (values, vectors)
}

/// Principal angles (radians) between the row spans of two k×d sets.
pub fn principal_angles(a_rows: &[Vec<f64>], b_rows: &[Vec<f64>]) -> Vec<f64> {
    let k = a_rows.len();
    let d = a_rows[0].len();
    let to_matrix = |rows: &[Vec<f64>]| {
        DMatrix::from_fn(d, k, |i, j| rows[j][i])
    };
    let qa = to_matrix(a_rows).qr().q();
    let qb = to_matrix(b_rows).qr().q();
    let cross = qa.transpose() * qb;
    let svd = cross.svd(false, false);
    svd.singular_values
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect()
}

/// Explicit joint-Gaussian PLDA LLR: builds both 2k×2k covariances and
/// evaluates the log-densities via dense inverse and determinant.
pub fn joint_gaussian_llr(model: &spkver::plda::PldaModel, e: &[f64], t: &[f64]) -> f64 {
    let k = model.dim();
    let tot = model.between_cov() + model.within_cov();
    let mut same = DMatrix::<f64>::zeros(2 * k, 2 * k);
    let mut diff = DMatrix::<f64>::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            same[(i, j)] = tot[(i, j)];
            same[(k + i, k + j)] = tot[(i, j)];
            same[(i, k + j)] = model.between_cov()[(i, j)];
            same[(k + i, j)] = model.between_cov()[(i, j)];
            diff[(i, j)] = tot[(i, j)];
            diff[(k + i, k + j)] = tot[(i, j)];
        }
    }
    let mut x = nalgebra::DVector::<f64>::zeros(2 * k);
    for i in 0..k {
        x[i] = e[i] - model.mu()[i];
        x[k + i] = t[i] - model.mu()[i];
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let log_n = |cov: &DMatrix<f64>| -> f64 {
        let inv = cov.clone().try_inverse().expect("invertible covariance");
        -0.5 * (2.0 * k as f64 * ln_2pi + cov.determinant().ln() + x.dot(&(&inv * &x)))
    };
    log_n(&same) - log_n(&diff)
}

/// Direct-counting miss/false-alarm rates with the `score >= threshold`
/// acceptance rule.
pub fn rates_by_counting(scores: &[f64], keys: &[TrialKey], threshold: f64) -> (f64, f64) {
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

/// Candidate thresholds: distinct-score midpoints plus sentinels.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut cands = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        cands.push(w[0] + (w[1] - w[0]) * 0.5);
    }
    cands.push(f64::INFINITY);
    cands
}

/// Brute-force min normalized primary cost over all candidate thresholds.
pub fn brute_min_cprimary(
    scores: &[f64],
    keys: &[TrialKey],
    params: &spkver::metrics::CostParams,
) -> f64 {
    let cands = candidate_thresholds(scores);
    let mut total = 0.0;
    for op in &params.operating_points {
        let miss_w = op.c_miss * op.p_target;
        let fa_w = op.c_fa * (1.0 - op.p_target);
        let mut best = f64::INFINITY;
        for &th in &cands {
            let (m, f) = rates_by_counting(scores, keys, th);
            best = best.min((miss_w * m + fa_w * f) / miss_w.min(fa_w));
        }
        total += best;
    }
    total / params.operating_points.len() as f64
}

/// Brute-force EER: the linear-interpolation crossing of the ROC vertex
/// list obtained by direct counting at every candidate threshold.
pub fn brute_eer(scores: &[f64], keys: &[TrialKey]) -> f64 {
    let cands = candidate_thresholds(scores);
    let mut vertices: Vec<(f64, f64)> = cands
        .iter()
        .map(|&th| rates_by_counting(scores, keys, th))
        .collect();
    vertices.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut prev = vertices[0];
    if prev.0 >= prev.1 {
        return 0.5 * (prev.0 + prev.1);
    }
    for &(m, f) in &vertices[1..] {
        if m - f >= 0.0 {
            let denom = (m - prev.0) - (f - prev.1);
            if denom == 0.0 {
                return 0.5 * (m + f);
            }
            let t = (prev.1 - prev.0) / denom;
            return prev.0 + t * (m - prev.0);
        }
        prev = (m, f);
    }
    prev.0
}

/// Exhaustive weighted isotonic fit over all contiguous monotone
/// partitions of up to 16 points; returns the minimal squared error.
pub fn exhaustive_isotonic_sse(values: &[f64], weights: &[f64]) -> f64 {
    let n = values.len();
    assert!(n <= 16);
    let sse = |f: &[f64]| -> f64 {
        f.iter()
            .zip(values)
            .zip(weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for gap in 0..(n - 1) {
            if mask & (1 << gap) != 0 {
                blocks.push((start, gap + 1));
                start = gap + 1;
            }
        }
        blocks.push((start, n));
        let mut means = Vec::with_capacity(blocks.len());
        for &(a, b) in &blocks {
            let wsum: f64 = weights[a..b].iter().sum();
            let vsum: f64 = values[a..b]
                .iter()
                .zip(&weights[a..b])
                .map(|(v, w)| v * w)
                .sum();
            means.push(vsum / wsum);
        }
        if means.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let mut f = Vec::with_capacity(n);
        for (bi, &(a, b)) in blocks.iter().enumerate() {
            f.extend(std::iter::repeat_n(means[bi], b - a));
        }
        best = best.min(sse(&f));
    }
    best
}

/// KKT and duality-gap residuals of a returned SVM solution, recomputed
/// from scratch under the augmented-bias formulation.
pub struct SvmResiduals {
    pub kkt: f64,
    pub gap: f64,
}

pub fn svm_residuals(
    svm: &spkver::svda::LinearSvm,
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
) -> SvmResiduals {
    let n = positives.len() + negatives.len();
    let c = svm.c_reg;
    let mut alphas = vec![0.0f64; n];
    for (&i, &a) in svm.support_indices.iter().zip(&svm.dual_alphas) {
        alphas[i] = a;
    }
    let mut kkt = 0.0f64;
    let mut hinge_sum = 0.0f64;
    let boundary = 1e-9 * c;
    for (i, v) in positives.iter().chain(negatives.iter()).enumerate() {
        let y = if i < positives.len() { 1.0 } else { -1.0 };
        let margin = y * svm.decision(v);
        hinge_sum += (1.0 - margin).max(0.0);
        let viol = if alphas[i] <= boundary {
            (1.0 - margin).max(0.0)
        } else if alphas[i] >= c - boundary {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        kkt = kkt.max(viol);
    }
    let w_norm2: f64 = svm.w.iter().map(|x| x * x).sum::<f64>() + svm.b * svm.b;
    let primal = 0.5 * w_norm2 + c * hinge_sum;
    let dual = alphas.iter().sum::<f64>() - 0.5 * w_norm2;
    SvmResiduals {
        kkt,
        gap: primal - dual,
    }
}
