//! Linear discriminant analysis: scatter-matrix estimation and the
//! generalized-eigenvalue projection that maximizes between-class over
//! within-class scatter along each direction.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::corpus::Corpus;
use crate::error::{config_err, data_err, numerical_err, Error, Result};
use crate::linalg;

/// Between/within scatter matrices over a speaker-labeled corpus.
/// `class_count` is the number of distinct speakers that contributed.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub s_b: DMatrix<f64>,
    pub s_w: DMatrix<f64>,
    pub class_count: usize,
}

impl ScatterPair {
    /// Checks symmetry (1e-10) and positive semidefiniteness
    /// (eigenvalues ≥ -1e-8·trace) of both matrices.
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("S_b", &self.s_b), ("S_w", &self.s_w)] {
            if !linalg::is_symmetric(m, linalg::SYMMETRY_TOL) {
                return numerical_err(format!("{name} is not symmetric"));
            }
            if !linalg::is_psd(m, 1e-8) {
                return numerical_err(format!("{name} is not positive semidefinite"));
            }
        }
        Ok(())
    }
}

/// A fitted linear map: `k` rows of projection directions over input
/// dimension `d`, with the generalized eigenvalues that produced them
/// (sorted descending). The optional mean is subtracted before
/// projecting; fits produced by this crate leave it unset and rely on
/// explicit centering stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    matrix: DMatrix<f64>,
    mean: Option<DVector<f64>>,
    objective_values: Vec<f64>,
}

impl Projection {
    pub fn new(matrix: DMatrix<f64>, mean: Option<DVector<f64>>, objective_values: Vec<f64>) -> Result<Projection> {
        if let Some(m) = &mean {
            if m.len() != matrix.ncols() {
                return data_err("projection mean dimension does not match matrix columns");
            }
        }
        Ok(Projection {
            matrix,
            mean,
            objective_values,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn objective_values(&self) -> &[f64] {
        &self.objective_values
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut x = DVector::from_column_slice(v);
        if let Some(m) = &self.mean {
            x -= m;
        }
        (&self.matrix * x).iter().copied().collect()
    }

    /// Composition `self ∘ inner`: applies `inner` first. The result is
    /// the raw matrix product, so composed application is bit-equal to
    /// applying the stages sequentially.
    pub fn compose(&self, inner: &Projection) -> Result<Projection> {
        if self.input_dim() != inner.output_dim() {
            return data_err(format!(
                "cannot compose: outer expects dimension {}, inner produces {}",
                self.input_dim(),
                inner.output_dim()
            ));
        }
        if self.mean.is_some() || inner.mean.is_some() {
            return data_err("cannot compose projections that carry means");
        }
        Ok(Projection {
            matrix: &self.matrix * &inner.matrix,
            mean: None,
            objective_values: self.objective_values.clone(),
        })
    }
}

/// n_c-weighted scatter matrices about the global mean:
/// `S_b = Σ_c n_c (μ_c − μ)(μ_c − μ)ᵀ`,
/// `S_w = Σ_c Σ_{i∈c} (x_i − μ_c)(x_i − μ_c)ᵀ`.
/// Segments without a speaker label are ignored.
pub fn compute_scatter(corpus: &Corpus) -> Result<ScatterPair> {
    let d = corpus.dimension();
    let groups = corpus.speaker_groups();
    if groups.len() < 2 {
        return data_err(format!(
            "scatter needs at least 2 speaker classes, found {}",
            groups.len()
        ));
    }

    let mut total = DVector::<f64>::zeros(d);
    let mut n_total = 0usize;
    let mut class_means: Vec<(Vec<usize>, DVector<f64>)> = Vec::with_capacity(groups.len());
    for (_spk, idxs) in &groups {
        let mut mean = DVector::<f64>::zeros(d);
        for &i in idxs {
            let v = DVector::from_column_slice(&corpus.segments()[i].vector);
            mean += &v;
            total += &v;
        }
        n_total += idxs.len();
        mean /= idxs.len() as f64;
        class_means.push((idxs.clone(), mean));
    }
    total /= n_total as f64;

    let mut s_b = DMatrix::<f64>::zeros(d, d);
    let mut s_w = DMatrix::<f64>::zeros(d, d);
    for (idxs, mean) in &class_means {
        let diff = mean - &total;
        s_b += idxs.len() as f64 * &diff * diff.transpose();
        for &i in idxs {
            let x = DVector::from_column_slice(&corpus.segments()[i].vector);
            let r = x - mean;
            s_w += &r * r.transpose();
        }
    }
    Ok(ScatterPair {
        s_b,
        s_w,
        class_count: groups.len(),
    })
}

/// Ridge added to `S_w` before inversion: `ε · trace(S_w)/d · I`, falling
/// back to `ε · I` when the trace is zero.
pub(crate) fn ridge_matrix(s_w: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let d = s_w.nrows();
    let scale = s_w.trace() / d as f64;
    let r = if scale > 0.0 { eps * scale } else { eps };
    DMatrix::identity(d, d) * r
}

pub(crate) fn projection_from_scatter(
    scatter: &ScatterPair,
    out_dim: usize,
    ridge_eps: f64,
) -> Result<Projection> {
    let d = scatter.s_w.nrows();
    if out_dim == 0 || out_dim > d {
        return config_err(format!("out_dim {out_dim} must be in 1..={d}"));
    }
    let s_w_reg = if ridge_eps > 0.0 {
        &scatter.s_w + ridge_matrix(&scatter.s_w, ridge_eps)
    } else {
        scatter.s_w.clone()
    };
    let gen = linalg::generalized_symmetric_eigen(&scatter.s_b, &s_w_reg, out_dim).map_err(|e| {
        match e {
            Error::Numerical(msg) if ridge_eps == 0.0 => Error::Numerical(format!(
                "{msg} (S_w is singular and ridge is 0; pass a positive ridge epsilon)"
            )),
            other => other,
        }
    })?;
    let mut rows = gen.eigenvectors;
    linalg::normalize_rows(&mut rows);
    linalg::apply_sign_convention(&mut rows);
    Projection::new(rows, None, gen.eigenvalues)
}

/// Fits LDA on a speaker-labeled corpus: rows of the result are the
/// top-k eigenvectors of `(S_w + ridge)⁻¹ S_b`, each normalized to unit
/// norm with a fixed sign convention. `k ≤ min(d, C−1)` is the useful
/// range; only `k ≤ d` is enforced.
pub fn fit_lda(corpus: &Corpus, out_dim: usize, ridge_eps: f64) -> Result<Projection> {
    let scatter = compute_scatter(corpus)?;
    projection_from_scatter(&scatter, out_dim, ridge_eps)
}

/// Applies a projection to every vector, producing a corpus of the
/// projection's output dimension.
pub fn project(projection: &Projection, corpus: &Corpus) -> Result<Corpus> {
    if projection.input_dim() != corpus.dimension() {
        return data_err(format!(
            "projection expects dimension {} but corpus is {}",
            projection.input_dim(),
            corpus.dimension()
        ));
    }
    corpus.map_vectors(projection.output_dim(), |seg| projection.apply(&seg.vector))
}

/// Writes the projection as a text matrix file: header `#rows k #cols d`,
/// optional `#mean <values>` line, then row-major values one row per line.
/// Objective values are not persisted.
pub fn write_projection(p: &Projection, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "#rows {} #cols {}", p.output_dim(), p.input_dim())?;
    if let Some(mean) = &p.mean {
        let toks: Vec<String> = mean.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "#mean {}", toks.join(" "))?;
    }
    for r in 0..p.output_dim() {
        let toks: Vec<String> = p.matrix.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", toks.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<Projection> {
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
        .ok_or_else(|| parse_e(1, "empty projection file".into()))?;
    let header = header?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match toks.as_slice() {
        ["#rows", r, "#cols", c] => (
            r.parse::<usize>()
                .map_err(|_| parse_e(1, format!("bad row count '{r}'")))?,
            c.parse::<usize>()
                .map_err(|_| parse_e(1, format!("bad col count '{c}'")))?,
        ),
        _ => return Err(parse_e(1, format!("expected '#rows k #cols d', got '{header}'"))),
    };

    let mut mean: Option<DVector<f64>> = None;
    let mut data = Vec::with_capacity(rows * cols);
    let mut row_count = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#mean ") {
            let vals: std::result::Result<Vec<f64>, _> =
                rest.split_whitespace().map(|t| t.parse()).collect();
            let vals = vals.map_err(|_| parse_e(lineno, "bad float in mean".into()))?;
            if vals.len() != cols {
                return Err(parse_e(lineno, "mean length does not match #cols".into()));
            }
            mean = Some(DVector::from_vec(vals));
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse()).collect();
        let vals = vals.map_err(|_| parse_e(lineno, "bad float in matrix row".into()))?;
        if vals.len() != cols {
            return Err(parse_e(
                lineno,
                format!("row has {} values, expected {cols}", vals.len()),
            ));
        }
        data.extend(vals);
        row_count += 1;
    }
    if row_count != rows {
        return Err(parse_e(0, format!("expected {rows} rows, found {row_count}")));
    }
    Projection::new(DMatrix::from_row_slice(rows, cols, &data), mean, Vec::new())
}
