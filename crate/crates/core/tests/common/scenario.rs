//! The synthetic-mismatch scenario behind the directional acceptance
//! checks: 200 out-of-domain speakers, 30 matched in-domain "major"
//! speakers plus a smaller mismatched "minor" set, speaker/segment stds
//! in ratio 3, and per-domain shifts of norm 2·σb. The front-end noise
//! level keeps verification error rates in a regime where directional
//! differences are measurable.

use std::collections::BTreeMap;

use spkver::calfuse;
use spkver::cluster;
use spkver::corpus::{
    generate_corpus, generate_trials, Corpus, Domain, FrontEnd, Gender, ScoreSet, ShiftSpec,
    SynthConfig, TrialSet, TrialSynthConfig,
};
use spkver::lda;
use spkver::metrics::{cprimary, eer_from_scores, CostMode, CostParams};
use spkver::plda::{self, PldaParams, ScoreOptions};
use spkver::preprocess::{self, MeanSelector};
use spkver::svda::{self, SvdaParams};

pub const DIM: usize = 50;
pub const SIGMA_B: f64 = 3.0;
pub const SIGMA_W: f64 = 1.0; // sigma_b / sigma_w = 3
pub const SHIFT_NORM: f64 = 2.0 * SIGMA_B;
pub const FRONT_END_NOISE: f64 = 4.0;
pub const LDA_DIM: usize = 33; // mirrors the 600 -> 400 reduction ratio
pub const CASCADE_MID: usize = 42; // mirrors 600 -> 500

pub fn corpus_for_seed(seed: u64) -> Corpus {
    corpus_with_noise(seed, FRONT_END_NOISE)
}

pub fn corpus_with_noise(seed: u64, front_end_noise: f64) -> Corpus {
    let cfg = SynthConfig {
        dimension: DIM,
        speakers: BTreeMap::from([
            (Domain::OutOfDomain, 200),
            (Domain::InDomainMinor, 15),
            (Domain::InDomainMajor, 30),
            (Domain::Dev, 25),
            (Domain::Eval, 60),
        ]),
        segments_per_speaker: (4, 6),
        // The matched in-domain set dwarfs the mismatched one, mirroring
        // the paper's 2272-vs-200 unlabeled split.
        segments_per_speaker_overrides: BTreeMap::from([
            (Domain::InDomainMinor, (3, 5)),
            (Domain::InDomainMajor, (12, 16)),
        ]),
        between_speaker_std: SIGMA_B,
        within_speaker_std: SIGMA_W,
        domain_shifts: BTreeMap::from([
            (Domain::InDomainMinor, ShiftSpec::Magnitude { magnitude: SHIFT_NORM }),
            (Domain::InDomainMajor, ShiftSpec::Magnitude { magnitude: SHIFT_NORM }),
            (Domain::Dev, ShiftSpec::SameAs { same_as: Domain::InDomainMinor }),
            (Domain::Eval, ShiftSpec::SameAs { same_as: Domain::InDomainMajor }),
        ]),
        gender_shift: Some(ShiftSpec::Magnitude { magnitude: 4.0 }),
        rng_seed: seed,
        front_end: Some(FrontEnd {
            tag: "acceptance".into(),
            noise_std: front_end_noise,
        }),
    };
    generate_corpus(&cfg).expect("scenario corpus generates")
}

pub fn eval_trials(corpus: &Corpus, seed: u64) -> TrialSet {
    generate_trials(
        corpus,
        &TrialSynthConfig {
            domain: Domain::Eval,
            enroll_segments: 2,
            n_target: usize::MAX / 2,
            n_nontarget: 100_000,
            rng_seed: seed ^ 0xe7a1,
        },
    )
    .expect("eval trials generate")
}

pub fn dev_trials(corpus: &Corpus, seed: u64) -> TrialSet {
    generate_trials(
        corpus,
        &TrialSynthConfig {
            domain: Domain::Dev,
            enroll_segments: 2,
            n_target: usize::MAX / 2,
            n_nontarget: 100_000,
            rng_seed: seed ^ 0xdeb1,
        },
    )
    .expect("dev trials generate")
}

/// A fitted verification system: conditioned space, projection and PLDA,
/// scored with trial-mean subtraction off (the simple chains) by default.
pub struct System {
    pub projected: Corpus,
    pub model: plda::PldaModel,
    pub tms: bool,
}

impl System {
    pub fn score(&self, trials: &TrialSet) -> ScoreSet {
        plda::score_trialset(
            &self.model,
            &self.projected,
            trials,
            ScoreOptions {
                trial_mean_subtract: self.tms,
            },
        )
        .expect("scoring succeeds")
    }
}

/// center(selector) → length_normalize, or length_normalize alone.
pub fn condition(corpus: &Corpus, selector: Option<&MeanSelector>) -> Corpus {
    let c = match selector {
        Some(sel) => {
            let stats = preprocess::compute_mean(corpus, sel).expect("nonempty selection");
            preprocess::center(corpus, &stats).expect("dimensions match")
        }
        None => corpus.clone(),
    };
    preprocess::length_normalize(&c).expect("no zero vectors")
}

/// LDA system over a conditioned corpus: fit on out-of-domain labels,
/// optional post-projection length normalization, PLDA on the projected
/// out-of-domain data.
pub fn lda_system(conditioned: &Corpus, post_lnorm: bool, tms: bool) -> System {
    let ood = conditioned.subset_by_domain(&[Domain::OutOfDomain]);
    let projection = lda::fit_lda(&ood, LDA_DIM, 1e-6).expect("lda fits");
    let mut projected = lda::project(&projection, conditioned).expect("projection applies");
    if post_lnorm {
        projected = preprocess::length_normalize(&projected).expect("no zero vectors");
    }
    let model = plda::fit_plda(
        &projected.subset_by_domain(&[Domain::OutOfDomain]),
        &PldaParams::default(),
    )
    .expect("plda fits");
    System {
        projected,
        model,
        tms,
    }
}

/// SVDA→LDA cascade system with the unlabeled in-domain sets in the rest
/// classes.
pub fn svda_system(conditioned: &Corpus, post_lnorm: bool, tms: bool) -> System {
    let ood = conditioned.subset_by_domain(&[Domain::OutOfDomain]);
    let unlabeled =
        conditioned.subset_by_domain(&[Domain::InDomainMinor, Domain::InDomainMajor]);
    let fit = svda::fit_svda_lda_cascade(
        &ood,
        Some(&unlabeled),
        CASCADE_MID,
        LDA_DIM,
        &SvdaParams {
            svm_tol: 1e-3,
            ..SvdaParams::default()
        },
        1e-6,
    )
    .expect("cascade fits");
    let mut projected = lda::project(&fit.projection, conditioned).expect("projection applies");
    if post_lnorm {
        projected = preprocess::length_normalize(&projected).expect("no zero vectors");
    }
    let model = plda::fit_plda(
        &projected.subset_by_domain(&[Domain::OutOfDomain]),
        &PldaParams::default(),
    )
    .expect("plda fits");
    System {
        projected,
        model,
        tms,
    }
}

/// Cluster one unlabeled set in the given space with k = the true
/// speaker count, returning the relabeled corpus (labels namespaced by
/// set).
pub fn cluster_set(space: &Corpus, domain: Domain, k_total: usize, seed: u64) -> Corpus {
    let ood = space.subset_by_domain(&[Domain::OutOfDomain]);
    let gender_model = cluster::fit_gender(&ood).expect("gender model fits");
    let subset = space.subset_by_domain(&[domain]);
    let (n_f, n_m) = subset.segments().iter().fold((0usize, 0usize), |(f, m), s| {
        match gender_model.classify(&s.vector) {
            Gender::F => (f + 1, m),
            Gender::M => (f, m + 1),
        }
    });
    let (k_f, k_m) = cluster::split_k_proportional(k_total, n_f, n_m);
    let mut budgets = BTreeMap::new();
    if k_f > 0 {
        budgets.insert(Gender::F, k_f);
    }
    if k_m > 0 {
        budgets.insert(Gender::M, k_m);
    }
    let assignment =
        cluster::cluster_unlabeled(&subset, &gender_model, &budgets, seed, 100, 10)
            .expect("clustering succeeds");
    let mut namespaced = assignment.clone();
    namespaced.labels = assignment
        .labels
        .iter()
        .map(|(seg, lab)| (seg.clone(), format!("{domain:?}_{lab}")))
        .collect();
    cluster::apply_assignment(&subset, &namespaced).expect("assignment covers subset")
}

pub struct SeedOutcome {
    pub eer_centered: f64,
    pub eer_uncentered: f64,
    pub minc_lda: f64,
    pub minc_svda: f64,
    pub eer_matched_plda: f64,
    pub eer_pooled_plda: f64,
    pub member_eers: Vec<f64>,
    pub fused_eer: f64,
}

pub fn keys_of(trials: &TrialSet) -> Vec<spkver::corpus::TrialKey> {
    trials.keys().expect("generated trials are keyed")
}

/// Runs every directional comparison for one seed.
pub fn run_seed(seed: u64, params: &CostParams) -> SeedOutcome {
    let corpus = corpus_for_seed(seed);
    let trials = eval_trials(&corpus, seed);
    let keys = keys_of(&trials);

    // (a) in-domain-mean centering vs no centering, same everything else
    let centered = condition(&corpus, Some(&MeanSelector::MajorOnly));
    let uncentered = condition(&corpus, None);
    let sys_centered = lda_system(&centered, false, false);
    let sys_uncentered = lda_system(&uncentered, false, false);
    let scores_centered = sys_centered.score(&trials);
    let eer_centered = eer_from_scores(&scores_centered.scores, &keys).unwrap();
    let eer_uncentered =
        eer_from_scores(&sys_uncentered.score(&trials).scores, &keys).unwrap();

    // (b) LDA vs SVDA cascade over the pooled-mean conditioned chain
    let pooled = condition(&corpus, Some(&MeanSelector::MinorPlusMajor));
    let sys_lda = lda_system(&pooled, true, true);
    let sys_svda = svda_system(&pooled, true, true);
    let scores_lda = sys_lda.score(&trials);
    let scores_svda = sys_svda.score(&trials);
    let minc_lda = cprimary(&scores_lda.scores, &keys, params, CostMode::Min).unwrap();
    let minc_svda = cprimary(&scores_svda.scores, &keys, params, CostMode::Min).unwrap();

    // (c) matched clustered PLDA vs pooled matched+mismatched PLDA, in
    // the centered LDA space of (a)
    let space = &sys_centered.projected;
    let clustered_major = cluster_set(space, Domain::InDomainMajor, 30, seed ^ 0xc1);
    let clustered_minor = cluster_set(space, Domain::InDomainMinor, 15, seed ^ 0xc2);
    let plda_matched = plda::fit_plda(&clustered_major, &PldaParams::default()).unwrap();
    let pooled_train = clustered_major.concat(&clustered_minor).unwrap();
    let plda_pooled = plda::fit_plda(&pooled_train, &PldaParams::default()).unwrap();
    let matched_scores =
        plda::score_trialset(&plda_matched, space, &trials, ScoreOptions::default()).unwrap();
    let pooled_scores =
        plda::score_trialset(&plda_pooled, space, &trials, ScoreOptions::default()).unwrap();
    let eer_matched_plda = eer_from_scores(&matched_scores.scores, &keys).unwrap();
    let eer_pooled_plda = eer_from_scores(&pooled_scores.scores, &keys).unwrap();

    // (d) calibrate-then-fuse three diverse members on the same trials
    let member_scores = [&scores_lda, &scores_svda, &matched_scores];
    let mut calibrated: Vec<Vec<f64>> = Vec::new();
    let mut member_eers = Vec::new();
    for ss in member_scores {
        let map = calfuse::pav_fit(&ss.scores, &keys, 7.0).unwrap();
        calibrated.push(calfuse::pav_apply(&map, &ss.scores));
        member_eers.push(eer_from_scores(&ss.scores, &keys).unwrap());
    }
    let columns: Vec<&[f64]> = calibrated.iter().map(|c| c.as_slice()).collect();
    let fusion = calfuse::fuse_fit(&columns, &keys, 1e-4).unwrap();
    let fused = calfuse::fuse_apply(&fusion, &columns).unwrap();
    let fused_eer = eer_from_scores(&fused, &keys).unwrap();

    SeedOutcome {
        eer_centered,
        eer_uncentered,
        minc_lda,
        minc_svda,
        eer_matched_plda,
        eer_pooled_plda,
        member_eers,
        fused_eer,
    }
}
