//! Two-covariance PLDA: the generative model `x = mu + y + e` with
//! speaker factor `y ~ N(0, B)` and residual `e ~ N(0, W)`, trained by EM
//! and scored with the closed-form same/different-speaker log-likelihood
//! ratio.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::corpus::{Corpus, ScoreSet, TrialSet};
use crate::error::{config_err, data_err, numerical_err, Error, Result};
use crate::linalg::{self, CholSolver};
use crate::preprocess;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    mu: DVector<f64>,
    b_cov: DMatrix<f64>,
    w_cov: DMatrix<f64>,
    em_log_likelihoods: Vec<f64>,
}

impl PldaModel {
    /// Builds a model from explicit parameters, validating symmetry, B
    /// positive semidefinite and W positive definite.
    pub fn from_parts(mu: DVector<f64>, b_cov: DMatrix<f64>, w_cov: DMatrix<f64>) -> Result<PldaModel> {
        let k = mu.len();
        if b_cov.shape() != (k, k) || w_cov.shape() != (k, k) {
            return data_err("plda: parameter shapes do not match mean dimension");
        }
        if !linalg::is_symmetric(&b_cov, linalg::SYMMETRY_TOL)
            || !linalg::is_symmetric(&w_cov, linalg::SYMMETRY_TOL)
        {
            return numerical_err("plda: covariance matrices must be symmetric");
        }
        if !linalg::is_psd(&b_cov, 1e-8) {
            return numerical_err("plda: between-speaker covariance is not PSD");
        }
        if linalg::sym_eigenvalues(&w_cov).first().copied().unwrap_or(0.0) <= 0.0 {
            return numerical_err("plda: within-speaker covariance is not positive definite");
        }
        Ok(PldaModel {
            mu,
            b_cov,
            w_cov,
            em_log_likelihoods: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn between_cov(&self) -> &DMatrix<f64> {
        &self.b_cov
    }

    pub fn within_cov(&self) -> &DMatrix<f64> {
        &self.w_cov
    }

    pub fn em_log_likelihoods(&self) -> &[f64] {
        &self.em_log_likelihoods
    }

    /// Precomputes the factorizations used by trial scoring.
    pub fn scorer(&self) -> Result<PldaScorer> {
        PldaScorer::new(self)
    }

    /// Convenience single-trial scorer; builds the factorizations each
    /// call, so batch paths should use [`PldaModel::scorer`].
    pub fn score_trial(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        Ok(self.scorer()?.score(enroll, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaParams {
    pub n_iters: usize,
    /// Relative eigenvalue floor on W: eigenvalues below
    /// `floor · trace(W)/k` are raised to it after every M-step.
    pub floor: f64,
}

impl Default for PldaParams {
    fn default() -> Self {
        PldaParams {
            n_iters: 10,
            floor: 1e-6,
        }
    }
}

struct SpeakerStats {
    n: f64,
    sum: DVector<f64>,
    segments: Vec<usize>,
}

/// EM training on a speaker-labeled corpus. Segments without speaker
/// labels are ignored. Initialization is deterministic (B and W each get
/// half the total covariance), each speaker's posterior is computed
/// exactly regardless of segment count, and the per-iteration total data
/// log-likelihood is recorded before the corresponding update.
pub fn fit_plda(corpus: &Corpus, params: &PldaParams) -> Result<PldaModel> {
    if params.n_iters == 0 {
        return config_err("plda: n_iters must be positive");
    }
    let k = corpus.dimension();
    let groups = corpus.speaker_groups();
    if groups.len() < 2 {
        return data_err(format!(
            "plda needs at least 2 speakers, found {}",
            groups.len()
        ));
    }
    if groups.values().all(|idxs| idxs.len() < 2) {
        return data_err("plda: all speakers are singletons; W is unidentifiable");
    }

    let vectors: Vec<DVector<f64>> = corpus
        .segments()
        .iter()
        .map(|s| DVector::from_column_slice(&s.vector))
        .collect();

    let mut n_total = 0usize;
    let mut mu = DVector::<f64>::zeros(k);
    let mut speakers: Vec<SpeakerStats> = Vec::with_capacity(groups.len());
    for (_spk, idxs) in &groups {
        let mut sum = DVector::<f64>::zeros(k);
        for &i in idxs {
            sum += &vectors[i];
        }
        mu += &sum;
        n_total += idxs.len();
        speakers.push(SpeakerStats {
            n: idxs.len() as f64,
            sum,
            segments: idxs.clone(),
        });
    }
    mu /= n_total as f64;

    let mut total_cov = DMatrix::<f64>::zeros(k, k);
    for s in &speakers {
        for &i in &s.segments {
            let r = &vectors[i] - &mu;
            total_cov += &r * r.transpose();
        }
    }
    total_cov /= n_total as f64;

    let mut b_cov = &total_cov * 0.5;
    let mut w_cov = floor_eigenvalues(&total_cov * 0.5, params.floor)?;
    let mut lls = Vec::with_capacity(params.n_iters);

    for _ in 0..params.n_iters {
        let w_solver = CholSolver::new(&w_cov, "plda W")?;
        // Per-distinct-count solvers for (W + nB); reused across speakers.
        let mut nb_solvers: BTreeMap<u64, CholSolver> = BTreeMap::new();
        for s in &speakers {
            let key = s.n as u64;
            if !nb_solvers.contains_key(&key) {
                let m = &w_cov + &b_cov * s.n;
                nb_solvers.insert(key, CholSolver::new(&m, "plda W + nB")?);
            }
        }

        // Log-likelihood at the current parameters plus E-step stats.
        let mut ll = 0.0;
        let mut b_new = DMatrix::<f64>::zeros(k, k);
        let mut w_new = DMatrix::<f64>::zeros(k, k);
        for s in &speakers {
            let n = s.n;
            let nb = &nb_solvers[&(n as u64)];
            let mean_dev = &s.sum / n - &mu; // x̄_s − μ

            // Joint Gaussian over the speaker's segments decomposes into
            // the mean direction (covariance (W + nB)/n-style term) and
            // n−1 within-speaker deviations:
            //   −½[ nk·log2π + (n−1)log|W| + log|W+nB|
            //       + Σ(z_i−z̄)ᵀW⁻¹(z_i−z̄) + n·z̄ᵀ(W+nB)⁻¹z̄ ]
            let mut dev_quad = 0.0;
            for &i in &s.segments {
                let dev = &vectors[i] - &mu - &mean_dev;
                dev_quad += w_solver.quad(&dev);
            }
            ll += -0.5
                * (n * k as f64 * LN_2PI
                    + (n - 1.0) * w_solver.log_det()
                    + nb.log_det()
                    + dev_quad
                    + n * nb.quad(&mean_dev));

            // Posterior of the speaker factor: mean m_s = nB(W+nB)⁻¹ z̄,
            // covariance Σ_s = B(W+nB)⁻¹W  (no B⁻¹ needed, B may be PSD).
            let m_s = &b_cov * nb.solve(&mean_dev) * n;
            let sigma_s = &b_cov * nb.solve_matrix(&w_cov);
            let sigma_s = (&sigma_s + sigma_s.transpose()) * 0.5;

            b_new += &sigma_s + &m_s * m_s.transpose();
            for &i in &s.segments {
                let r = &vectors[i] - &mu - &m_s;
                w_new += &r * r.transpose();
            }
            w_new += sigma_s * n;
        }
        lls.push(ll);

        b_new /= speakers.len() as f64;
        w_new /= n_total as f64;
        b_cov = (&b_new + b_new.transpose()) * 0.5;
        w_cov = floor_eigenvalues((&w_new + w_new.transpose()) * 0.5, params.floor)?;
    }

    Ok(PldaModel {
        mu,
        b_cov,
        w_cov,
        em_log_likelihoods: lls,
    })
}

const LN_2PI: f64 = 1.8378770664093453;

fn floor_eigenvalues(m: DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    let eig = m.symmetric_eigen();
    let trace: f64 = eig.eigenvalues.iter().sum();
    let min_allowed = (floor * trace / k as f64).max(f64::MIN_POSITIVE);
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < min_allowed {
            *v = min_allowed;
        }
    }
    if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return numerical_err("plda: covariance eigenvalues collapsed to zero");
    }
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// Cached factorizations for the verification LLR
/// `log N([e;t]; [μ;μ], Σ_same) − log N([e;t]; [μ;μ], Σ_diff)` with
/// `Σ_same = [[B+W, B],[B, B+W]]` and `Σ_diff = [[B+W, 0],[0, B+W]]`.
/// The 2k-dimensional forms are evaluated in sum/difference coordinates,
/// which block-diagonalize `Σ_same` into `W + 2B` and `W`.
pub struct PldaScorer {
    mu: DVector<f64>,
    tot: CholSolver,    // B + W
    sum_cov: CholSolver, // W + 2B
    within: CholSolver,  // W
}

impl PldaScorer {
    fn new(model: &PldaModel) -> Result<PldaScorer> {
        let t = &model.b_cov + &model.w_cov;
        let p = &model.w_cov + &model.b_cov * 2.0;
        Ok(PldaScorer {
            mu: model.mu.clone(),
            tot: CholSolver::new(&t, "plda B+W")?,
            sum_cov: CholSolver::new(&p, "plda W+2B")?,
            within: CholSolver::new(&model.w_cov, "plda W")?,
        })
    }

    pub fn score(&self, enroll: &[f64], test: &[f64]) -> f64 {
        let e = DVector::from_column_slice(enroll) - &self.mu;
        let t = DVector::from_column_slice(test) - &self.mu;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let u = (&e + &t) * inv_sqrt2;
        let v = (&e - &t) * inv_sqrt2;
        0.5 * (2.0 * self.tot.log_det() + self.tot.quad(&e) + self.tot.quad(&t)
            - self.sum_cov.log_det()
            - self.within.log_det()
            - self.sum_cov.quad(&u)
            - self.within.quad(&v))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    /// Apply trial-based mean subtraction to each (enroll, test) pair
    /// immediately before scoring.
    pub trial_mean_subtract: bool,
}

/// Scores every trial in order. Multi-segment enrollment lists are
/// averaged into a single vector before scoring.
pub fn score_trialset(
    model: &PldaModel,
    corpus: &Corpus,
    trials: &TrialSet,
    opts: ScoreOptions,
) -> Result<ScoreSet> {
    let scorer = model.scorer()?;
    let mut scores = Vec::with_capacity(trials.len());
    for (idx, trial) in trials.trials.iter().enumerate() {
        let mut enroll = vec![0.0; corpus.dimension()];
        if trial.enroll_ids.is_empty() {
            return data_err(format!("trial {idx}: empty enrollment list"));
        }
        for id in &trial.enroll_ids {
            let seg = corpus
                .get(id)
                .ok_or_else(|| Error::Data(format!("trial {idx}: unresolved segment_id '{id}'")))?;
            for (a, v) in enroll.iter_mut().zip(&seg.vector) {
                *a += v;
            }
        }
        for a in &mut enroll {
            *a /= trial.enroll_ids.len() as f64;
        }
        let test = &corpus
            .get(&trial.test_id)
            .ok_or_else(|| {
                Error::Data(format!(
                    "trial {idx}: unresolved segment_id '{}'",
                    trial.test_id
                ))
            })?
            .vector;

        let s = if opts.trial_mean_subtract {
            let (e2, t2) = preprocess::trial_mean_subtract(&enroll, test);
            scorer.score(&e2, &t2)
        } else {
            scorer.score(&enroll, test)
        };
        scores.push(s);
    }
    ScoreSet::new(trials.clone(), scores, false)
}

/// Persists the model as text: dimension header, then `mu`, `B`, `W`
/// (row-major, shortest-round-trip floats).
pub fn write_plda(model: &PldaModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let k = model.dim();
    writeln!(w, "#dim={k}")?;
    writeln!(w, "#mu")?;
    let toks: Vec<String> = model.mu.iter().map(|v| format!("{v}")).collect();
    writeln!(w, "{}", toks.join(" "))?;
    for (tag, m) in [("#B", &model.b_cov), ("#W", &model.w_cov)] {
        writeln!(w, "{tag}")?;
        for r in 0..k {
            let toks: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", toks.join(" "))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_plda(path: impl AsRef<Path>) -> Result<PldaModel> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    let parse_e = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut it = lines.iter().enumerate();
    let (_, header) = it
        .next()
        .ok_or_else(|| parse_e(1, "empty model file".into()))?;
    let k: usize = header
        .strip_prefix("#dim=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_e(1, format!("expected '#dim=<k>', got '{header}'")))?;

    let expect = |tag: &str, it: &mut dyn Iterator<Item = (usize, &String)>| -> Result<()> {
        match it.next() {
            Some((_, l)) if l == tag => Ok(()),
            Some((i, l)) => Err(parse_e(i + 1, format!("expected '{tag}', got '{l}'"))),
            None => Err(parse_e(0, format!("missing '{tag}' section"))),
        }
    };
    let parse_row = |lineno: usize, line: &str| -> Result<Vec<f64>> {
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse()).collect();
        let vals = vals.map_err(|_| parse_e(lineno + 1, "bad float".into()))?;
        if vals.len() != k {
            return Err(parse_e(lineno + 1, format!("expected {k} values")));
        }
        Ok(vals)
    };

    expect("#mu", &mut it)?;
    let (i, l) = it.next().ok_or_else(|| parse_e(0, "missing mu row".into()))?;
    let mu = DVector::from_vec(parse_row(i, l)?);
    let read_matrix = |tag: &str, it: &mut dyn Iterator<Item = (usize, &String)>| -> Result<DMatrix<f64>> {
        match it.next() {
            Some((_, l)) if l == tag => {}
            Some((i, l)) => return Err(parse_e(i + 1, format!("expected '{tag}', got '{l}'"))),
            None => return Err(parse_e(0, format!("missing '{tag}' section"))),
        }
        let mut data = Vec::with_capacity(k * k);
        for _ in 0..k {
            let (i, l) = it
                .next()
                .ok_or_else(|| parse_e(0, format!("truncated '{tag}' section")))?;
            data.extend(parse_row(i, l)?);
        }
        Ok(DMatrix::from_row_slice(k, k, &data))
    };
    let b_cov = read_matrix("#B", &mut it)?;
    let w_cov = read_matrix("#W", &mut it)?;
    PldaModel::from_parts(mu, b_cov, w_cov)
}
