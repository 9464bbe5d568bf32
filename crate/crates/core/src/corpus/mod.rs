//! Data model for embeddings and trials.
//!
//! A [`Corpus`] is an immutable collection of [`Segment`]s sharing one
//! embedding dimension. Segments optionally carry speaker, gender and
//! partition labels; the [`Domain`] attribute separates labeled
//! out-of-domain training data from the unlabeled in-domain sets and the
//! dev/eval trial populations.

mod io;
mod synth;

pub use io::{
    read_corpus, read_scores, read_trials, write_corpus, write_scores, write_trials,
};
pub(crate) use synth::sample_without_replacement;
pub use synth::{generate_corpus, generate_trials, FrontEnd, ShiftSpec, SynthConfig, TrialSynthConfig};

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }

    pub fn parse(tok: &str) -> Option<Gender> {
        match tok {
            "F" => Some(Gender::F),
            "M" => Some(Gender::M),
            _ => None,
        }
    }
}

/// Data-set role of a segment. `OutOfDomain` mirrors labeled prior-cycle
/// training data; the two in-domain sets are unlabeled at training time;
/// `Dev` and `Eval` hold the trial populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    OutOfDomain,
    InDomainMinor,
    InDomainMajor,
    Dev,
    Eval,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::OutOfDomain,
        Domain::InDomainMinor,
        Domain::InDomainMajor,
        Domain::Dev,
        Domain::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::OutOfDomain => "out_of_domain",
            Domain::InDomainMinor => "in_domain_minor",
            Domain::InDomainMajor => "in_domain_major",
            Domain::Dev => "dev",
            Domain::Eval => "eval",
        }
    }

    pub fn parse(tok: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.as_str() == tok)
    }

    /// Short prefix used in generated speaker ids.
    pub(crate) fn id_prefix(self) -> &'static str {
        match self {
            Domain::OutOfDomain => "ood",
            Domain::InDomainMinor => "minor",
            Domain::InDomainMajor => "major",
            Domain::Dev => "dev",
            Domain::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub vector: Vec<f64>,
    pub speaker_id: Option<String>,
    pub gender: Option<Gender>,
    pub domain: Domain,
    pub partition_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dimension: usize,
    segments: Vec<Segment>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, validating that every vector has the declared
    /// dimension and that segment ids are unique.
    pub fn new(dimension: usize, segments: Vec<Segment>) -> Result<Corpus> {
        if dimension == 0 {
            return config_err("corpus dimension must be positive");
        }
        let mut index = HashMap::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            if seg.vector.len() != dimension {
                return data_err(format!(
                    "segment '{}' has dimension {} but corpus declares {}",
                    seg.segment_id,
                    seg.vector.len(),
                    dimension
                ));
            }
            if index.insert(seg.segment_id.clone(), i).is_some() {
                return data_err(format!("duplicate segment_id '{}'", seg.segment_id));
            }
        }
        Ok(Corpus {
            dimension,
            segments,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, segment_id: &str) -> Option<&Segment> {
        self.index.get(segment_id).map(|&i| &self.segments[i])
    }

    /// Speaker-labeled segments grouped by speaker, in first-appearance
    /// order within each group. Unlabeled segments are not represented.
    pub fn speaker_groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if let Some(spk) = &seg.speaker_id {
                groups.entry(spk.as_str()).or_default().push(i);
            }
        }
        groups
    }

    /// Segments whose domain is in `domains`, preserving corpus order.
    pub fn subset_by_domain(&self, domains: &[Domain]) -> Corpus {
        let set: HashSet<Domain> = domains.iter().copied().collect();
        let segments = self
            .segments
            .iter()
            .filter(|s| set.contains(&s.domain))
            .cloned()
            .collect();
        Corpus::new(self.dimension, segments).expect("subset of a valid corpus is valid")
    }

    /// Applies `f` to every vector, producing a corpus of dimension
    /// `new_dim` (pass the current dimension for in-place-style maps).
    pub fn map_vectors(&self, new_dim: usize, mut f: impl FnMut(&Segment) -> Vec<f64>) -> Result<Corpus> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                vector: f(s),
                ..s.clone()
            })
            .collect();
        Corpus::new(new_dim, segments)
    }

    /// Merges two corpora into one (dimensions must match, ids stay unique).
    pub fn concat(&self, other: &Corpus) -> Result<Corpus> {
        if self.dimension != other.dimension {
            return data_err(format!(
                "cannot concat corpora of dimensions {} and {}",
                self.dimension, other.dimension
            ));
        }
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        Corpus::new(self.dimension, segments)
    }
}

/// Keeps only speakers with at least `min_segments` segments; segment
/// order is preserved. Segments without a speaker label are retained
/// unchanged (the filter is about labeled speakers).
pub fn filter_speakers(corpus: &Corpus, min_segments: usize) -> Result<Corpus> {
    if min_segments == 0 {
        return config_err("min_segments must be a positive integer");
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seg in corpus.segments() {
        if let Some(spk) = &seg.speaker_id {
            *counts.entry(spk.as_str()).or_default() += 1;
        }
    }
    let segments = corpus
        .segments()
        .iter()
        .filter(|s| match &s.speaker_id {
            Some(spk) => counts[spk.as_str()] >= min_segments,
            None => true,
        })
        .cloned()
        .collect();
    Corpus::new(corpus.dimension(), segments)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKey {
    Target,
    Nontarget,
}

impl TrialKey {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKey::Target => "target",
            TrialKey::Nontarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll_ids: Vec<String>,
    pub test_id: String,
    pub key: Option<TrialKey>,
    pub partition_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// True when every trial carries a target/nontarget key.
    pub fn fully_keyed(&self) -> bool {
        self.trials.iter().all(|t| t.key.is_some())
    }

    pub fn keys(&self) -> Result<Vec<TrialKey>> {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.key
                    .ok_or_else(|| crate::Error::Data(format!("trial {i} has no key; metrics refused")))
            })
            .collect()
    }

    /// Checks that every referenced segment id resolves in `corpus`.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for (i, trial) in self.trials.iter().enumerate() {
            for id in trial.enroll_ids.iter().chain(std::iter::once(&trial.test_id)) {
                if corpus.get(id).is_none() {
                    return data_err(format!("trial {i}: unresolved segment_id '{id}'"));
                }
            }
        }
        Ok(())
    }

    pub fn concat(&self, other: &TrialSet) -> TrialSet {
        let mut trials = self.trials.clone();
        trials.extend(other.trials.iter().cloned());
        TrialSet { trials }
    }
}

/// Scores aligned one-to-one with a trial list. `calibrated` marks scores
/// that have been mapped to log-likelihood ratios; act-Cprimary on
/// uncalibrated scores is reported with a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub trials: TrialSet,
    pub scores: Vec<f64>,
    pub calibrated: bool,
}

impl ScoreSet {
    pub fn new(trials: TrialSet, scores: Vec<f64>, calibrated: bool) -> Result<ScoreSet> {
        if trials.len() != scores.len() {
            return data_err(format!(
                "score count {} does not match trial count {}",
                scores.len(),
                trials.len()
            ));
        }
        Ok(ScoreSet {
            trials,
            scores,
            calibrated,
        })
    }
}
