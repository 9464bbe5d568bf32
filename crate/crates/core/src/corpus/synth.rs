//! Deterministic synthetic corpus and trial generation.
//!
//! The generative model matches the two-covariance scoring assumptions:
//! each speaker mean is drawn from an isotropic Gaussian with std
//! `between_speaker_std`, shifted by the speaker's domain shift (and the
//! gender shift for male speakers); each segment adds isotropic noise
//! with std `within_speaker_std`. Domain mismatch is therefore an
//! additive per-domain offset, exactly the class of mismatch that
//! centering removes.
//!
//! RNG discipline (ChaCha8, portable): one stream per speaker for the
//! speaker mean and segment count, a sub-stream per segment for its
//! noise, so corpora are bit-reproducible and insensitive to how many
//! segments earlier speakers drew.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Domain, Gender, Segment, Trial, TrialKey, TrialSet};
use crate::error::{config_err, data_err, Result};

/// Seed salt for domain/gender shift direction streams.
const SHIFT_SALT: u64 = 0x5348_4946_5400; // "SHIFT"

/// A shift vector, given explicitly, by magnitude (direction drawn from a
/// seeded stream), or aliased to another domain's shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSpec {
    Vector(Vec<f64>),
    Magnitude { magnitude: f64 },
    SameAs { same_as: Domain },
}

/// Per-front-end distortion: independent seeded noise added to every
/// segment. Configs that differ only in `tag` model different embedding
/// extractors applied to the same underlying audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub tag: String,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dimension: usize,
    /// Speaker count per domain; absent domains generate nothing.
    pub speakers: BTreeMap<Domain, usize>,
    /// Inclusive (min, max) segments per speaker.
    pub segments_per_speaker: (usize, usize),
    /// Per-domain overrides of `segments_per_speaker` (partitions of real
    /// corpora differ widely in recordings per speaker).
    #[serde(default)]
    pub segments_per_speaker_overrides: BTreeMap<Domain, (usize, usize)>,
    pub between_speaker_std: f64,
    pub within_speaker_std: f64,
    #[serde(default)]
    pub domain_shifts: BTreeMap<Domain, ShiftSpec>,
    #[serde(default)]
    pub gender_shift: Option<ShiftSpec>,
    pub rng_seed: u64,
    #[serde(default)]
    pub front_end: Option<FrontEnd>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return config_err("synth: dimension must be positive");
        }
        let (lo, hi) = self.segments_per_speaker;
        if lo == 0 || hi < lo {
            return config_err("synth: segments_per_speaker must satisfy 1 <= min <= max");
        }
        for (dom, &(lo, hi)) in &self.segments_per_speaker_overrides {
            if lo == 0 || hi < lo {
                return config_err(format!(
                    "synth: segments_per_speaker override for {} must satisfy 1 <= min <= max",
                    dom.as_str()
                ));
            }
        }
        if !(self.between_speaker_std >= 0.0) || !(self.within_speaker_std >= 0.0) {
            return config_err("synth: speaker stds must be non-negative finite");
        }
        for (dom, spec) in &self.domain_shifts {
            if let ShiftSpec::Vector(v) = spec {
                if v.len() != self.dimension {
                    return config_err(format!(
                        "synth: shift vector for {} has dimension {}, expected {}",
                        dom.as_str(),
                        v.len(),
                        self.dimension
                    ));
                }
            }
        }
        if let Some(ShiftSpec::Vector(v)) = &self.gender_shift {
            if v.len() != self.dimension {
                return config_err("synth: gender shift vector dimension mismatch");
            }
        }
        if let Some(fe) = &self.front_end {
            if !(fe.noise_std >= 0.0) {
                return config_err("synth: front_end.noise_std must be non-negative");
            }
        }
        Ok(())
    }

    /// Resolves the shift vector for `domain` (zero vector if none).
    pub fn resolve_domain_shift(&self, domain: Domain) -> Result<Vec<f64>> {
        self.resolve_shift_inner(Some(domain), self.domain_shifts.get(&domain), 0)
    }

    fn resolve_gender_shift(&self) -> Result<Vec<f64>> {
        self.resolve_shift_inner(None, self.gender_shift.as_ref(), 0)
    }

    fn resolve_shift_inner(
        &self,
        domain: Option<Domain>,
        spec: Option<&ShiftSpec>,
        depth: usize,
    ) -> Result<Vec<f64>> {
        if depth > Domain::ALL.len() {
            return config_err("synth: same_as shift references form a cycle");
        }
        match spec {
            None => Ok(vec![0.0; self.dimension]),
            Some(ShiftSpec::Vector(v)) => Ok(v.clone()),
            Some(ShiftSpec::Magnitude { magnitude }) => {
                // Stream index: one per domain, plus one for the gender shift.
                let stream = match domain {
                    Some(d) => Domain::ALL.iter().position(|x| *x == d).unwrap() as u64 + 1,
                    None => 100,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed ^ SHIFT_SALT);
                rng.set_stream(stream);
                let gauss = Normal::new(0.0, 1.0).expect("unit normal");
                let mut dir: Vec<f64> = (0..self.dimension).map(|_| gauss.sample(&mut rng)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return config_err("synth: degenerate shift direction draw");
                }
                for x in &mut dir {
                    *x *= magnitude / norm;
                }
                Ok(dir)
            }
            Some(ShiftSpec::SameAs { same_as }) => {
                self.resolve_shift_inner(Some(*same_as), self.domain_shifts.get(same_as), depth + 1)
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generates a corpus from `cfg`. Pure function of the config: the same
/// config yields a bit-identical corpus.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let d = cfg.dimension;
    let gender_shift = cfg.resolve_gender_shift()?;
    let speaker_noise = Normal::new(0.0, cfg.between_speaker_std)
        .map_err(|e| crate::Error::Config(format!("synth: bad between_speaker_std: {e}")))?;
    let segment_noise = Normal::new(0.0, cfg.within_speaker_std)
        .map_err(|e| crate::Error::Config(format!("synth: bad within_speaker_std: {e}")))?;

    let mut fe_rng = cfg.front_end.as_ref().map(|fe| {
        let noise = Normal::new(0.0, fe.noise_std).expect("validated non-negative std");
        (ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ fnv1a(fe.tag.as_bytes())), noise)
    });

    let mut segments = Vec::new();
    let mut speaker_counter: u64 = 0;
    let mut segment_counter: u64 = 0;
    for (&domain, &n_speakers) in &cfg.speakers {
        let domain_shift = cfg.resolve_domain_shift(domain)?;
        for local_idx in 0..n_speakers {
            speaker_counter += 1;
            let mut spk_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            spk_rng.set_stream(speaker_counter);

            // Genders alternate within each domain so both are always present.
            let gender = if local_idx % 2 == 0 { Gender::F } else { Gender::M };
            let speaker_id = format!("{}_spk{:04}", domain.id_prefix(), local_idx);

            let mut mean: Vec<f64> = (0..d).map(|_| speaker_noise.sample(&mut spk_rng)).collect();
            for (i, m) in mean.iter_mut().enumerate() {
                *m += domain_shift[i];
                if gender == Gender::M {
                    *m += gender_shift[i];
                }
            }
            let (lo, hi) = cfg
                .segments_per_speaker_overrides
                .get(&domain)
                .copied()
                .unwrap_or(cfg.segments_per_speaker);
            let n_segments = spk_rng.random_range(lo..=hi);

            for j in 0..n_segments {
                segment_counter += 1;
                let mut seg_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
                seg_rng.set_stream((speaker_counter << 32) | (j as u64 + 1));
                let mut v: Vec<f64> = mean
                    .iter()
                    .map(|m| m + segment_noise.sample(&mut seg_rng))
                    .collect();
                if let Some((rng, noise)) = fe_rng.as_mut() {
                    rng.set_stream((1 << 63) | segment_counter);
                    for x in v.iter_mut() {
                        *x += noise.sample(rng);
                    }
                }
                segments.push(Segment {
                    segment_id: format!("{speaker_id}_seg{j:02}"),
                    vector: v,
                    speaker_id: Some(speaker_id.clone()),
                    gender: Some(gender),
                    domain,
                    partition_tag: Some(gender.as_str().to_string()),
                });
            }
        }
    }
    Corpus::new(d, segments)
}

/// Trial-list synthesis over one generated domain: the first
/// `enroll_segments` segments of each speaker form the enrollment model,
/// the rest are tests. Targets pair a model with its own speaker's test
/// segments, nontargets with other speakers'. Seeded sampling without
/// replacement; if a requested count exceeds availability every available
/// pair is emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSynthConfig {
    pub domain: Domain,
    pub enroll_segments: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub rng_seed: u64,
}

pub fn generate_trials(corpus: &Corpus, cfg: &TrialSynthConfig) -> Result<TrialSet> {
    if cfg.enroll_segments == 0 {
        return config_err("trials: enroll_segments must be positive");
    }
    let sub = corpus.subset_by_domain(&[cfg.domain]);
    let groups = sub.speaker_groups();
    if groups.is_empty() {
        return data_err(format!(
            "trials: no speaker-labeled segments in domain {}",
            cfg.domain.as_str()
        ));
    }

    struct Model<'a> {
        enroll_ids: Vec<String>,
        tests: Vec<&'a Segment>,
    }
    let mut models: Vec<Model> = Vec::new();
    for (_spk, idxs) in groups {
        if idxs.len() <= cfg.enroll_segments {
            continue; // not enough segments for both enrollment and test
        }
        let segs: Vec<&Segment> = idxs.iter().map(|&i| &sub.segments()[i]).collect();
        models.push(Model {
            enroll_ids: segs[..cfg.enroll_segments]
                .iter()
                .map(|s| s.segment_id.clone())
                .collect(),
            tests: segs[cfg.enroll_segments..].to_vec(),
        });
    }
    if models.len() < 2 {
        return data_err("trials: need at least two speakers with test segments".to_string());
    }

    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        for t in &m.tests {
            targets.push((mi, *t));
        }
        for (oj, other) in models.iter().enumerate() {
            if oj == mi {
                continue;
            }
            for t in &other.tests {
                nontargets.push((mi, *t));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let tar_idx = sample_without_replacement(targets.len(), cfg.n_target, &mut rng);
    let non_idx = sample_without_replacement(nontargets.len(), cfg.n_nontarget, &mut rng);

    let mut trials = Vec::with_capacity(tar_idx.len() + non_idx.len());
    for i in tar_idx {
        let (mi, t) = &targets[i];
        trials.push(make_trial(&models[*mi].enroll_ids, t, TrialKey::Target));
    }
    for i in non_idx {
        let (mi, t) = &nontargets[i];
        trials.push(make_trial(&models[*mi].enroll_ids, t, TrialKey::Nontarget));
    }
    Ok(TrialSet { trials })
}

fn make_trial(enroll_ids: &[String], test: &Segment, key: TrialKey) -> Trial {
    Trial {
        enroll_ids: enroll_ids.to_vec(),
        test_id: test.segment_id.clone(),
        key: Some(key),
        partition_tag: test.partition_tag.clone(),
    }
}

/// Draws `count` distinct indices from `0..n` (all of them if
/// `count >= n`), returned in ascending order for determinism.
pub(crate) fn sample_without_replacement(
    n: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < count {
        chosen.insert(rng.random_range(0..n));
    }
    chosen.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> SynthConfig {
        SynthConfig {
            dimension: 2,
            speakers: BTreeMap::from([(Domain::OutOfDomain, 2)]),
            segments_per_speaker: (3, 3),
            segments_per_speaker_overrides: BTreeMap::new(),
            between_speaker_std: 10.0,
            within_speaker_std: 0.1,
            domain_shifts: BTreeMap::new(),
            gender_shift: None,
            rng_seed: 7,
            front_end: None,
        }
    }

    #[test]
    fn same_config_is_bit_identical() {
        let cfg = base_config();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_within_std_collapses_speaker_segments() {
        let mut cfg = base_config();
        cfg.within_speaker_std = 0.0;
        let c = generate_corpus(&cfg).unwrap();
        for (_spk, idxs) in c.speaker_groups() {
            let first = &c.segments()[idxs[0]].vector;
            for &i in &idxs {
                assert_eq!(&c.segments()[i].vector, first);
            }
        }
    }

    #[test]
    fn within_distances_below_between_distances() {
        // d=2, 2 speakers, sigma_b=10, sigma_w=0.1, seed=7: every
        // within-speaker pairwise distance is below every between-speaker
        // distance, checked by direct distance computation.
        let c = generate_corpus(&base_config()).unwrap();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut within = Vec::new();
        let mut between = Vec::new();
        let segs = c.segments();
        for i in 0..segs.len() {
            for j in (i + 1)..segs.len() {
                let d = dist(&segs[i].vector, &segs[j].vector);
                if segs[i].speaker_id == segs[j].speaker_id {
                    within.push(d);
                } else {
                    between.push(d);
                }
            }
        }
        let max_within = within.iter().cloned().fold(f64::MIN, f64::max);
        let min_between = between.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max_within < min_between,
            "max within {max_within} should be below min between {min_between}"
        );
    }

    #[test]
    fn nearest_centroid_is_perfect_at_high_separation() {
        // sigma_b / sigma_w >= 10 with >= 3 segments per speaker gives
        // 100% nearest-centroid speaker assignment.
        for seed in [1, 2, 3] {
            let mut cfg = base_config();
            cfg.dimension = 5;
            cfg.speakers = BTreeMap::from([(Domain::OutOfDomain, 8)]);
            cfg.between_speaker_std = 10.0;
            cfg.within_speaker_std = 1.0;
            cfg.segments_per_speaker = (3, 5);
            cfg.rng_seed = seed;
            let c = generate_corpus(&cfg).unwrap();
            let groups = c.speaker_groups();
            let centroids: Vec<(&str, Vec<f64>)> = groups
                .iter()
                .map(|(spk, idxs)| {
                    let mut m = vec![0.0; c.dimension()];
                    for &i in idxs {
                        for (k, x) in c.segments()[i].vector.iter().enumerate() {
                            m[k] += x / idxs.len() as f64;
                        }
                    }
                    (*spk, m)
                })
                .collect();
            for seg in c.segments() {
                let nearest = centroids
                    .iter()
                    .min_by(|a, b| {
                        let da: f64 = a.1.iter().zip(&seg.vector).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = b.1.iter().zip(&seg.vector).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(Some(nearest.0), seg.speaker_id.as_deref());
            }
        }
    }

    #[test]
    fn shift_same_as_resolves_to_target_domain() {
        let mut cfg = base_config();
        cfg.domain_shifts = BTreeMap::from([
            (Domain::InDomainMinor, ShiftSpec::Magnitude { magnitude: 6.0 }),
            (Domain::Dev, ShiftSpec::SameAs { same_as: Domain::InDomainMinor }),
        ]);
        let minor = cfg.resolve_domain_shift(Domain::InDomainMinor).unwrap();
        let dev = cfg.resolve_domain_shift(Domain::Dev).unwrap();
        assert_eq!(minor, dev);
        let norm: f64 = minor.iter().map(|x| x * x).sum::<f64>().sqrt();
        approx::assert_relative_eq!(norm, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn front_end_variants_share_structure_but_differ() {
        let mut cfg_a = base_config();
        cfg_a.front_end = Some(FrontEnd { tag: "fe_a".into(), noise_std: 0.5 });
        let mut cfg_b = cfg_a.clone();
        cfg_b.front_end = Some(FrontEnd { tag: "fe_b".into(), noise_std: 0.5 });
        let a = generate_corpus(&cfg_a).unwrap();
        let b = generate_corpus(&cfg_b).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.segments().iter().zip(b.segments()) {
            assert_eq!(sa.segment_id, sb.segment_id);
            assert_ne!(sa.vector, sb.vector);
        }
    }

    #[test]
    fn trials_are_deterministic_and_keyed() {
        let mut cfg = base_config();
        cfg.speakers = BTreeMap::from([(Domain::Dev, 6)]);
        cfg.segments_per_speaker = (4, 5);
        let c = generate_corpus(&cfg).unwrap();
        let tcfg = TrialSynthConfig {
            domain: Domain::Dev,
            enroll_segments: 2,
            n_target: 10,
            n_nontarget: 30,
            rng_seed: 3,
        };
        let t1 = generate_trials(&c, &tcfg).unwrap();
        let t2 = generate_trials(&c, &tcfg).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.fully_keyed());
        assert_eq!(t1.len(), 40);
        t1.validate_against(&c).unwrap();
        let n_target = t1
            .trials
            .iter()
            .filter(|t| t.key == Some(TrialKey::Target))
            .count();
        assert_eq!(n_target, 10);
    }
}
