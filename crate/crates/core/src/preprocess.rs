//! Embedding conditioning shared by every sub-system: mean subtraction
//! against a selectable reference set, length normalization, and
//! trial-based mean subtraction applied at scoring time.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Domain};
use crate::error::{config_err, data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringSource {
    MinorOnly,
    MajorOnly,
    MinorPlusMajor,
    Custom,
}

/// Which segments a mean is computed over. The three named selectors
/// follow the unlabeled-set conventions (dev-side means from the minor
/// set, eval-side from the major set, or both pooled); `Domains` and
/// `AllSegments` cover everything else and are reported as `Custom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSelector {
    MinorOnly,
    MajorOnly,
    MinorPlusMajor,
    Domains(Vec<Domain>),
    AllSegments,
}

impl MeanSelector {
    pub fn source(&self) -> CenteringSource {
        match self {
            MeanSelector::MinorOnly => CenteringSource::MinorOnly,
            MeanSelector::MajorOnly => CenteringSource::MajorOnly,
            MeanSelector::MinorPlusMajor => CenteringSource::MinorPlusMajor,
            _ => CenteringSource::Custom,
        }
    }

    fn matches(&self, domain: Domain) -> bool {
        match self {
            MeanSelector::MinorOnly => domain == Domain::InDomainMinor,
            MeanSelector::MajorOnly => domain == Domain::InDomainMajor,
            MeanSelector::MinorPlusMajor => {
                domain == Domain::InDomainMinor || domain == Domain::InDomainMajor
            }
            MeanSelector::Domains(ds) => ds.contains(&domain),
            MeanSelector::AllSegments => true,
        }
    }

    /// Stable token for manifests and stage strings, e.g. `minor_only`.
    pub fn token(&self) -> String {
        match self {
            MeanSelector::MinorOnly => "minor_only".into(),
            MeanSelector::MajorOnly => "major_only".into(),
            MeanSelector::MinorPlusMajor => "minor_plus_major".into(),
            MeanSelector::AllSegments => "all".into(),
            MeanSelector::Domains(ds) => ds
                .iter()
                .map(|d| d.as_str())
                .collect::<Vec<_>>()
                .join("+"),
        }
    }

    pub fn parse_token(tok: &str) -> Result<MeanSelector> {
        match tok {
            "minor_only" => Ok(MeanSelector::MinorOnly),
            "major_only" => Ok(MeanSelector::MajorOnly),
            "minor_plus_major" => Ok(MeanSelector::MinorPlusMajor),
            "all" => Ok(MeanSelector::AllSegments),
            other => {
                let domains: Option<Vec<Domain>> = other.split('+').map(Domain::parse).collect();
                match domains {
                    Some(ds) if !ds.is_empty() => Ok(MeanSelector::Domains(ds)),
                    _ => config_err(format!("unknown mean selector '{other}'")),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteringStats {
    pub mean: Vec<f64>,
    pub source: CenteringSource,
}

/// Arithmetic mean of the vectors selected by `selector`.
pub fn compute_mean(corpus: &Corpus, selector: &MeanSelector) -> Result<CenteringStats> {
    let mut mean = vec![0.0; corpus.dimension()];
    let mut count = 0usize;
    for seg in corpus.segments() {
        if selector.matches(seg.domain) {
            for (m, v) in mean.iter_mut().zip(&seg.vector) {
                *m += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return data_err(format!(
            "mean selector '{}' matched no segments",
            selector.token()
        ));
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    Ok(CenteringStats {
        mean,
        source: selector.source(),
    })
}

/// Subtracts `stats.mean` from every vector.
pub fn center(corpus: &Corpus, stats: &CenteringStats) -> Result<Corpus> {
    if stats.mean.len() != corpus.dimension() {
        return data_err(format!(
            "centering mean has dimension {} but corpus is {}",
            stats.mean.len(),
            corpus.dimension()
        ));
    }
    corpus.map_vectors(corpus.dimension(), |seg| {
        seg.vector
            .iter()
            .zip(&stats.mean)
            .map(|(v, m)| v - m)
            .collect()
    })
}

/// Scales every vector to unit Euclidean norm. A zero vector cannot be
/// normalized and is a hard error naming the segment; silently skipping
/// would corrupt downstream cosine/PLDA geometry.
pub fn length_normalize(corpus: &Corpus) -> Result<Corpus> {
    for seg in corpus.segments() {
        let norm: f64 = seg.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return data_err(format!(
                "cannot length-normalize zero vector in segment '{}'",
                seg.segment_id
            ));
        }
    }
    corpus.map_vectors(corpus.dimension(), |seg| {
        let norm: f64 = seg.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        seg.vector.iter().map(|x| x / norm).collect()
    })
}

/// Subtracts the pair mean from both trial sides: with m = (e + t)/2 the
/// outputs satisfy e' = -t' exactly.
pub fn trial_mean_subtract(enroll: &[f64], test: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(enroll.len(), test.len());
    let e: Vec<f64> = enroll
        .iter()
        .zip(test)
        .map(|(e, t)| (e - t) * 0.5)
        .collect();
    let t: Vec<f64> = e.iter().map(|x| -x).collect();
    (e, t)
}

/// One step of the conditioning chain. `Project` marks where the fitted
/// projection applies; `TrialMeanSubtract` is pairwise and must be the
/// final stage before scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Center(MeanSelector),
    LengthNormalize,
    Project,
    TrialMeanSubtract,
}

impl Stage {
    pub fn token(&self) -> String {
        match self {
            Stage::Center(sel) => format!("center:{}", sel.token()),
            Stage::LengthNormalize => "length_normalize".into(),
            Stage::Project => "project".into(),
            Stage::TrialMeanSubtract => "trial_mean_subtract".into(),
        }
    }

    pub fn parse_token(tok: &str) -> Result<Stage> {
        if let Some(sel) = tok.strip_prefix("center:") {
            return Ok(Stage::Center(MeanSelector::parse_token(sel)?));
        }
        match tok {
            "length_normalize" => Ok(Stage::LengthNormalize),
            "project" => Ok(Stage::Project),
            "trial_mean_subtract" => Ok(Stage::TrialMeanSubtract),
            other => config_err(format!("unknown chain stage '{other}'")),
        }
    }
}

/// Writes centering stats as text: dimension and source headers, then
/// the mean vector.
pub fn write_centering(stats: &CenteringStats, path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(w, "#dim={}", stats.mean.len())?;
    let source = match stats.source {
        CenteringSource::MinorOnly => "minor_only",
        CenteringSource::MajorOnly => "major_only",
        CenteringSource::MinorPlusMajor => "minor_plus_major",
        CenteringSource::Custom => "custom",
    };
    writeln!(w, "#source={source}")?;
    let toks: Vec<String> = stats.mean.iter().map(|v| format!("{v}")).collect();
    writeln!(w, "{}", toks.join(" "))?;
    w.flush()?;
    Ok(())
}

pub fn read_centering(path: impl AsRef<std::path::Path>) -> Result<CenteringStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let parse_e = |line: usize, msg: String| crate::Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let dim: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("#dim="))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_e(1, "expected '#dim=<d>'".into()))?;
    let source = match lines.next().and_then(|l| l.strip_prefix("#source=")) {
        Some("minor_only") => CenteringSource::MinorOnly,
        Some("major_only") => CenteringSource::MajorOnly,
        Some("minor_plus_major") => CenteringSource::MinorPlusMajor,
        Some("custom") => CenteringSource::Custom,
        _ => return Err(parse_e(2, "expected '#source=<token>'".into())),
    };
    let mean: std::result::Result<Vec<f64>, _> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| t.parse())
        .collect();
    let mean = mean.map_err(|_| parse_e(3, "bad float in mean".into()))?;
    if mean.len() != dim {
        return Err(parse_e(3, format!("mean has {} values, expected {dim}", mean.len())));
    }
    Ok(CenteringStats { mean, source })
}

/// Validates a conditioning chain: non-empty, at most one projection,
/// and trial-mean subtraction only as the final stage.
pub fn validate_chain(chain: &[Stage]) -> Result<()> {
    if chain.is_empty() {
        return config_err("conditioning chain must not be empty");
    }
    let n_project = chain.iter().filter(|s| matches!(s, Stage::Project)).count();
    if n_project > 1 {
        return config_err("conditioning chain may contain at most one 'project' stage");
    }
    if let Some(pos) = chain
        .iter()
        .position(|s| matches!(s, Stage::TrialMeanSubtract))
    {
        if pos + 1 != chain.len() {
            return config_err("'trial_mean_subtract' must be the final chain stage");
        }
    }
    Ok(())
}
