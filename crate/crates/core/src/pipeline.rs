//! Config-driven experiment orchestration.
//!
//! Every stage reads its inputs from, and writes its outputs to, the run
//! directory, so the `run` subcommand and the individual stage
//! subcommands share one implementation and every intermediate artifact
//! is re-loadable through its module's reader. A manifest records the
//! config hash, the applied conditioning order, and per-stage output
//! digests (timings excluded from reproducibility comparisons).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calfuse::{self, CalibrationStrategy};
use crate::cluster;
use crate::config::{
    CorpusSource, ExperimentConfig, FusionConfig, PldaDataSelector, ProjectionMethod,
    TrainDataSelector, TrialGenSpec, TrialsTarget, UnlabeledSet,
};
use crate::corpus::{
    self, Corpus, Domain, ScoreSet, Segment, TrialSet, TrialSynthConfig,
};
use crate::error::{config_err, data_err, Error, Result};
use crate::lda;
use crate::metrics::{self, SystemScores};
use crate::plda::{self, PldaParams, ScoreOptions};
use crate::preprocess::{self, Stage};
use crate::svda::{self, SvdaParams};

pub mod files {
    pub const CORPUS: &str = "corpus.txt";
    pub const TRIALS_DEV: &str = "trials_dev.txt";
    pub const TRIALS_EVAL: &str = "trials_eval.txt";
    pub const CORPUS_FILTERED: &str = "corpus_filtered.txt";
    pub const CORPUS_PRE: &str = "corpus_pre.txt";
    pub const CORPUS_PROJ: &str = "corpus_proj.txt";
    pub const PROJECTION: &str = "projection.txt";
    pub const SVDA_REPORT: &str = "svda_support_report.txt";
    pub const PLDA: &str = "plda.txt";
    pub const SCORES_RAW: &str = "scores_raw.txt";
    pub const SCORES_CAL_DEV_INPUT: &str = "scores_caldev_raw.txt";
    pub const TRIALS_CAL_UNLABELED: &str = "trials_cal_unlabeled.txt";
    pub const SCORES_CAL_UNLABELED_INPUT: &str = "scores_calunlab_raw.txt";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const DET_RAW: &str = "det_raw.dat";
    pub const MANIFEST: &str = "manifest.json";
    pub const FUSION_MODEL: &str = "fusion.txt";
    pub const SCORES_FUSED: &str = "scores_fused.txt";

    pub fn clustered(set: &str) -> String {
        format!("clustered_{set}.txt")
    }

    pub fn centering(index: usize) -> String {
        format!("centering_{index}.txt")
    }

    pub fn calibration(strategy: &str) -> String {
        format!("calibration_{strategy}.txt")
    }

    pub fn scores_calibrated(strategy: &str) -> String {
        format!("scores_cal_{strategy}.txt")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageRecord {
    pub stage: String,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Conditioning stages in the order the pipeline applied them.
    pub applied_chain: Vec<String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    fn load_or_new(path: &Path) -> RunManifest {
        fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn upsert(&mut self, record: StageRecord) {
        if let Some(existing) = self.stages.iter_mut().find(|s| s.stage == record.stage) {
            *existing = record;
        } else {
            self.stages.push(record);
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(crate::config::hex_digest(hasher))
}

/// One experiment run rooted at an output directory.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    /// Master seed (CLI override or the config's); mixed into every
    /// stage-level seed.
    pub seed: u64,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>, seed_override: Option<u64>) -> Result<Pipeline> {
        cfg.validate()?;
        let out = out.into();
        fs::create_dir_all(&out)?;
        let seed = seed_override.unwrap_or(cfg.seed);
        Ok(Pipeline { cfg, out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn mix_seed(&self, stage_seed: u64) -> u64 {
        stage_seed ^ self.seed
    }

    fn record_stage(&self, stage: &str, outputs: &[String], started: Instant) -> Result<()> {
        let mut manifest = RunManifest::load_or_new(&self.path(files::MANIFEST));
        manifest.name = self.cfg.name.clone();
        manifest.config_hash = self.cfg.canonical_hash();
        manifest.seed = self.seed;
        manifest
            .versions
            .insert("spkver".into(), env!("CARGO_PKG_VERSION").into());
        manifest.applied_chain = self.cfg.chain.clone();
        let mut digests = BTreeMap::new();
        for name in outputs {
            digests.insert(name.clone(), sha256_file(&self.path(name))?);
        }
        manifest.upsert(StageRecord {
            stage: stage.into(),
            outputs: digests,
            elapsed_ms: started.elapsed().as_millis(),
        });
        manifest.save(&self.path(files::MANIFEST))
    }

    fn read_corpus_file(&self, name: &str) -> Result<Corpus> {
        corpus::read_corpus(self.path(name)).map_err(|e| stage_input_error(name, e))
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<()> {
        self.gen_data()?;
        self.filter()?;
        self.preprocess()?;
        if self.cfg.clustering.is_some() {
            self.cluster()?;
        }
        self.fit_projection()?;
        self.fit_plda()?;
        self.score()?;
        self.calibrate()?;
        self.evaluate()?;
        Ok(())
    }

    /// Stage 1: obtain the corpus and trial lists (synthetic generation
    /// or normalization of externally supplied files into the run dir).
    pub fn gen_data(&self) -> Result<()> {
        let started = Instant::now();
        let mut outputs = vec![files::CORPUS.to_string()];
        match &self.cfg.corpus {
            CorpusSource::Synth {
                synth,
                dev_trials,
                eval_trials,
            } => {
                let mut synth = synth.clone();
                synth.rng_seed = self.mix_seed(synth.rng_seed);
                let c = corpus::generate_corpus(&synth)?;
                corpus::write_corpus(&c, self.path(files::CORPUS))?;
                for (spec, domain, file) in [
                    (dev_trials, Domain::Dev, files::TRIALS_DEV),
                    (eval_trials, Domain::Eval, files::TRIALS_EVAL),
                ] {
                    if let Some(spec) = spec {
                        let trials = corpus::generate_trials(&c, &trial_synth(spec, domain, self.seed))?;
                        corpus::write_trials(&trials, self.path(file))?;
                        outputs.push(file.to_string());
                    }
                }
            }
            CorpusSource::Paths {
                corpus: corpus_path,
                dev_trials,
                eval_trials,
            } => {
                let c = corpus::read_corpus(corpus_path)?;
                corpus::write_corpus(&c, self.path(files::CORPUS))?;
                for (src, file) in [
                    (dev_trials, files::TRIALS_DEV),
                    (eval_trials, files::TRIALS_EVAL),
                ] {
                    if let Some(src) = src {
                        let t = corpus::read_trials(src)?;
                        t.validate_against(&c)?;
                        corpus::write_trials(&t, self.path(file))?;
                        outputs.push(file.to_string());
                    }
                }
            }
        }
        self.record_stage("gen-data", &outputs, started)
    }

    /// Stage 2: drop under-represented speakers from the labeled
    /// out-of-domain training set. Trial populations and unlabeled sets
    /// pass through untouched.
    pub fn filter(&self) -> Result<()> {
        let started = Instant::now();
        let c = self.read_corpus_file(files::CORPUS)?;
        let filtered = match self.cfg.filter_min_segments {
            None => c,
            Some(min) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for seg in c.segments() {
                    if seg.domain == Domain::OutOfDomain {
                        if let Some(spk) = &seg.speaker_id {
                            *counts.entry(spk.as_str()).or_default() += 1;
                        }
                    }
                }
                let keep: Vec<Segment> = c
                    .segments()
                    .iter()
                    .filter(|s| {
                        if s.domain != Domain::OutOfDomain {
                            return true;
                        }
                        match &s.speaker_id {
                            Some(spk) => counts[spk.as_str()] >= min,
                            None => true,
                        }
                    })
                    .cloned()
                    .collect();
                Corpus::new(c.dimension(), keep)?
            }
        };
        corpus::write_corpus(&filtered, self.path(files::CORPUS_FILTERED))?;
        self.record_stage("filter", &[files::CORPUS_FILTERED.to_string()], started)
    }

    fn chain(&self) -> Vec<Stage> {
        self.cfg.parsed_chain().expect("validated at construction")
    }

    /// Stage 3: apply the pre-projection part of the conditioning chain.
    pub fn preprocess(&self) -> Result<()> {
        let started = Instant::now();
        let mut c = self.read_corpus_file(files::CORPUS_FILTERED)?;
        let mut outputs = Vec::new();
        for (i, stage) in self.chain().iter().enumerate() {
            match stage {
                Stage::Project => break,
                Stage::Center(sel) => {
                    let stats = preprocess::compute_mean(&c, sel)?;
                    let name = files::centering(i);
                    preprocess::write_centering(&stats, self.path(&name))?;
                    outputs.push(name);
                    c = preprocess::center(&c, &stats)?;
                }
                Stage::LengthNormalize => c = preprocess::length_normalize(&c)?,
                Stage::TrialMeanSubtract => {
                    return config_err("trial_mean_subtract cannot precede projection");
                }
            }
        }
        corpus::write_corpus(&c, self.path(files::CORPUS_PRE))?;
        outputs.push(files::CORPUS_PRE.to_string());
        self.record_stage("preprocess", &outputs, started)
    }

    /// Stage 4 (optional): estimated speaker labels for the unlabeled
    /// in-domain sets, written back as corpus files.
    pub fn cluster(&self) -> Result<()> {
        let started = Instant::now();
        let spec = self
            .cfg
            .clustering
            .as_ref()
            .ok_or_else(|| Error::Config("cluster stage requires a clustering spec".into()))?;
        let pre = self.read_corpus_file(files::CORPUS_PRE)?;
        let ood = pre.subset_by_domain(&[Domain::OutOfDomain]);
        let gender_model = cluster::fit_gender(&ood)?;

        let mut outputs = Vec::new();
        for (set, k_total) in [
            (UnlabeledSet::Minor, spec.k_minor),
            (UnlabeledSet::Major, spec.k_major),
        ] {
            if k_total == 0 {
                continue;
            }
            let subset = pre.subset_by_domain(&[set.domain()]);
            if subset.is_empty() {
                return data_err(format!(
                    "clustering requested for empty {} set",
                    set.as_str()
                ));
            }
            let (n_f, n_m) = subset.segments().iter().fold((0usize, 0usize), |(f, m), s| {
                match gender_model.classify(&s.vector) {
                    corpus::Gender::F => (f + 1, m),
                    corpus::Gender::M => (f, m + 1),
                }
            });
            let (k_f, k_m) = cluster::split_k_proportional(k_total, n_f, n_m);
            let mut budgets = BTreeMap::new();
            if k_f > 0 {
                budgets.insert(corpus::Gender::F, k_f);
            }
            if k_m > 0 {
                budgets.insert(corpus::Gender::M, k_m);
            }
            let assignment = cluster::cluster_unlabeled(
                &subset,
                &gender_model,
                &budgets,
                self.mix_seed(spec.seed),
                spec.max_iters,
                spec.restarts,
            )?;
            // Namespace labels per set so minor and major clusters can
            // coexist in one training corpus.
            let mut namespaced = assignment.clone();
            namespaced.labels = assignment
                .labels
                .iter()
                .map(|(seg, lab)| (seg.clone(), format!("{}_{lab}", set.as_str())))
                .collect();
            let relabeled = cluster::apply_assignment(&subset, &namespaced)?;
            let name = files::clustered(set.as_str());
            corpus::write_corpus(&relabeled, self.path(&name))?;
            outputs.push(name);
        }
        self.record_stage("cluster", &outputs, started)
    }

    fn clustered_subset(&self, set: UnlabeledSet, space: &Corpus) -> Result<Corpus> {
        let name = files::clustered(set.as_str());
        let labeled = self.read_corpus_file(&name)?;
        // Transfer estimated labels onto the requested vector space.
        let segs: Result<Vec<Segment>> = labeled
            .segments()
            .iter()
            .map(|s| {
                let in_space = space.get(&s.segment_id).ok_or_else(|| {
                    Error::Data(format!(
                        "clustered segment '{}' missing from projected corpus",
                        s.segment_id
                    ))
                })?;
                let mut out = in_space.clone();
                out.speaker_id = s.speaker_id.clone();
                Ok(out)
            })
            .collect();
        Corpus::new(space.dimension(), segs?)
    }

    /// Stage 5: fit the projection, then materialize the projected (and
    /// post-projection conditioned) corpus.
    pub fn fit_projection(&self) -> Result<()> {
        let started = Instant::now();
        let pre = self.read_corpus_file(files::CORPUS_PRE)?;
        let mut labeled = pre.subset_by_domain(&[Domain::OutOfDomain]);
        if self.cfg.projection.data == TrainDataSelector::LabeledPlusClustered {
            for set in &self.cfg.projection.clustered_sets {
                labeled = labeled.concat(&self.clustered_subset(*set, &pre)?)?;
            }
        }
        let unlabeled = if self.cfg.projection.unlabeled.is_empty() {
            None
        } else {
            let domains: Vec<Domain> = self
                .cfg
                .projection
                .unlabeled
                .iter()
                .map(|s| s.domain())
                .collect();
            Some(pre.subset_by_domain(&domains))
        };

        let svda_params = SvdaParams {
            c_reg: self.cfg.projection.svm_c,
            svm_tol: self.cfg.projection.svm_tol,
            svm_max_updates: None,
            ridge_eps: self.cfg.projection.ridge,
        };
        let mut outputs = vec![files::PROJECTION.to_string()];
        let projection = match self.cfg.projection.method {
            ProjectionMethod::Lda => {
                lda::fit_lda(&labeled, self.cfg.projection.out_dim, self.cfg.projection.ridge)?
            }
            ProjectionMethod::Svda => {
                let fit = svda::fit_svda(
                    &labeled,
                    unlabeled.as_ref(),
                    self.cfg.projection.out_dim,
                    &svda_params,
                )?;
                fs::write(
                    self.path(files::SVDA_REPORT),
                    svda::support_report(&fit.support_counts),
                )?;
                outputs.push(files::SVDA_REPORT.to_string());
                fit.projection
            }
            ProjectionMethod::SvdaLdaCascade => {
                let mid = self.cfg.projection.mid_dim.expect("validated");
                let fit = svda::fit_svda_lda_cascade(
                    &labeled,
                    unlabeled.as_ref(),
                    mid,
                    self.cfg.projection.out_dim,
                    &svda_params,
                    self.cfg.projection.ridge,
                )?;
                fs::write(
                    self.path(files::SVDA_REPORT),
                    svda::support_report(&fit.svda.support_counts),
                )?;
                outputs.push(files::SVDA_REPORT.to_string());
                fit.projection
            }
        };
        lda::write_projection(&projection, self.path(files::PROJECTION))?;

        // Apply 'project' and the post-projection stages (except the
        // pairwise trial-mean subtraction) to every segment.
        let mut projected = lda::project(&projection, &pre)?;
        let chain = self.chain();
        let after_project = chain
            .iter()
            .position(|s| matches!(s, Stage::Project))
            .expect("validated")
            + 1;
        for stage in &chain[after_project..] {
            match stage {
                Stage::LengthNormalize => projected = preprocess::length_normalize(&projected)?,
                Stage::Center(sel) => {
                    let stats = preprocess::compute_mean(&projected, sel)?;
                    projected = preprocess::center(&projected, &stats)?;
                }
                Stage::TrialMeanSubtract => {} // applied at scoring time
                Stage::Project => unreachable!("single project stage validated"),
            }
        }
        corpus::write_corpus(&projected, self.path(files::CORPUS_PROJ))?;
        outputs.push(files::CORPUS_PROJ.to_string());
        self.record_stage("fit-projection", &outputs, started)
    }

    /// Stage 6: fit PLDA on the configured data selection in the
    /// projected space.
    pub fn fit_plda(&self) -> Result<()> {
        let started = Instant::now();
        let proj = self.read_corpus_file(files::CORPUS_PROJ)?;
        let mut training: Option<Corpus> = None;
        let add = |c: Corpus, training: &mut Option<Corpus>| -> Result<()> {
            *training = Some(match training.take() {
                None => c,
                Some(t) => t.concat(&c)?,
            });
            Ok(())
        };
        if self.cfg.plda.data != PldaDataSelector::Clustered {
            add(proj.subset_by_domain(&[Domain::OutOfDomain]), &mut training)?;
        }
        if self.cfg.plda.data != PldaDataSelector::Labeled {
            for set in &self.cfg.plda.clustered_sets {
                add(self.clustered_subset(*set, &proj)?, &mut training)?;
            }
        }
        let training = training.ok_or_else(|| Error::Config("empty PLDA data selection".into()))?;
        let model = plda::fit_plda(
            &training,
            &PldaParams {
                n_iters: self.cfg.plda.iters,
                floor: self.cfg.plda.floor,
            },
        )?;
        plda::write_plda(&model, self.path(files::PLDA))?;
        self.record_stage("fit-plda", &[files::PLDA.to_string()], started)
    }

    fn trials_file(&self, target: TrialsTarget) -> &'static str {
        match target {
            TrialsTarget::Dev => files::TRIALS_DEV,
            TrialsTarget::Eval => files::TRIALS_EVAL,
        }
    }

    fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            trial_mean_subtract: self
                .chain()
                .iter()
                .any(|s| matches!(s, Stage::TrialMeanSubtract)),
        }
    }

    fn score_trials_from(&self, trials_file: &str) -> Result<ScoreSet> {
        let proj = self.read_corpus_file(files::CORPUS_PROJ)?;
        let model = plda::read_plda(self.path(files::PLDA))
            .map_err(|e| stage_input_error(files::PLDA, e))?;
        let trials = corpus::read_trials(self.path(trials_file))
            .map_err(|e| stage_input_error(trials_file, e))?;
        plda::score_trialset(&model, &proj, &trials, self.score_options())
    }

    /// Stage 7: score the target trials (and whatever extra trial lists
    /// calibration needs).
    pub fn score(&self) -> Result<()> {
        let started = Instant::now();
        let mut outputs = vec![files::SCORES_RAW.to_string()];
        let target = self.score_trials_from(self.trials_file(self.cfg.trials))?;
        corpus::write_scores(&target, self.path(files::SCORES_RAW))?;

        let needs_dev = self
            .cfg
            .calibration
            .strategies
            .iter()
            .any(|s| s.uses_dev());
        if needs_dev && self.cfg.trials != TrialsTarget::Dev {
            let dev = self.score_trials_from(files::TRIALS_DEV)?;
            corpus::write_scores(&dev, self.path(files::SCORES_CAL_DEV_INPUT))?;
            outputs.push(files::SCORES_CAL_DEV_INPUT.to_string());
        }

        let needs_unlabeled = self
            .cfg
            .calibration
            .strategies
            .iter()
            .any(|s| s.uses_unlabeled());
        if needs_unlabeled {
            let set = self.cfg.calibration.unlabeled_source;
            let clustered = self.read_corpus_file(&files::clustered(set.as_str()))?;
            let mut labels = BTreeMap::new();
            for seg in clustered.segments() {
                labels.insert(
                    seg.segment_id.clone(),
                    seg.speaker_id.clone().expect("clustered corpus is labeled"),
                );
            }
            let assignment = cluster::ClusterAssignment {
                labels,
                subsets: BTreeMap::new(),
                empty_subsets: Vec::new(),
            };
            let sampled = calfuse::make_unlabeled_trials(
                &assignment,
                self.cfg.calibration.n_target,
                self.cfg.calibration.n_nontarget,
                self.mix_seed(self.cfg.calibration.seed),
            )?;
            corpus::write_trials(&sampled.trials, self.path(files::TRIALS_CAL_UNLABELED))?;
            outputs.push(files::TRIALS_CAL_UNLABELED.to_string());
            let scored = self.score_trials_from(files::TRIALS_CAL_UNLABELED)?;
            corpus::write_scores(&scored, self.path(files::SCORES_CAL_UNLABELED_INPUT))?;
            outputs.push(files::SCORES_CAL_UNLABELED_INPUT.to_string());
        }
        self.record_stage("score", &outputs, started)
    }

    fn calibration_inputs(&self, strategy: CalibrationStrategy) -> Result<(Vec<f64>, Vec<corpus::TrialKey>)> {
        let mut scores = Vec::new();
        let mut keys = Vec::new();
        if strategy.uses_dev() {
            let dev = if self.cfg.trials == TrialsTarget::Dev {
                corpus::read_scores(self.path(files::SCORES_RAW))
                    .map_err(|e| stage_input_error(files::SCORES_RAW, e))?
            } else {
                corpus::read_scores(self.path(files::SCORES_CAL_DEV_INPUT))
                    .map_err(|e| stage_input_error(files::SCORES_CAL_DEV_INPUT, e))?
            };
            keys.extend(dev.trials.keys()?);
            scores.extend(dev.scores);
        }
        if strategy.uses_unlabeled() {
            let unl = corpus::read_scores(self.path(files::SCORES_CAL_UNLABELED_INPUT))
                .map_err(|e| stage_input_error(files::SCORES_CAL_UNLABELED_INPUT, e))?;
            keys.extend(unl.trials.keys()?);
            scores.extend(unl.scores);
        }
        Ok((scores, keys))
    }

    /// Stage 8: fit one PAV map per configured strategy and apply it to
    /// the target scores.
    pub fn calibrate(&self) -> Result<()> {
        let started = Instant::now();
        let raw = corpus::read_scores(self.path(files::SCORES_RAW))
            .map_err(|e| stage_input_error(files::SCORES_RAW, e))?;
        let mut outputs = Vec::new();
        for strategy in &self.cfg.calibration.strategies {
            let (scores, keys) = self.calibration_inputs(*strategy)?;
            let map = calfuse::pav_fit(&scores, &keys, self.cfg.calibration.llr_cap)?;
            let map_file = files::calibration(strategy.as_str());
            calfuse::write_calibration(&map, self.path(&map_file))?;
            outputs.push(map_file);

            let calibrated = ScoreSet::new(
                raw.trials.clone(),
                calfuse::pav_apply(&map, &raw.scores),
                true,
            )?;
            let scores_file = files::scores_calibrated(strategy.as_str());
            corpus::write_scores(&calibrated, self.path(&scores_file))?;
            outputs.push(scores_file);
        }
        self.record_stage("calibrate", &outputs, started)
    }

    /// Stage 9: the metric report over raw and calibrated target scores.
    pub fn evaluate(&self) -> Result<metrics::Report> {
        let started = Instant::now();
        let raw = corpus::read_scores(self.path(files::SCORES_RAW))
            .map_err(|e| stage_input_error(files::SCORES_RAW, e))?;
        let mut calibrated = BTreeMap::new();
        for strategy in &self.cfg.calibration.strategies {
            let file = files::scores_calibrated(strategy.as_str());
            calibrated.insert(
                strategy.as_str().to_string(),
                corpus::read_scores(self.path(&file)).map_err(|e| stage_input_error(&file, e))?,
            );
        }
        let cal_refs: BTreeMap<String, &ScoreSet> =
            calibrated.iter().map(|(k, v)| (k.clone(), v)).collect();
        let systems = [SystemScores {
            name: self.cfg.name.clone(),
            raw: &raw,
            calibrated: cal_refs,
        }];
        let report = metrics::report(&systems, &self.cfg.metrics)?;
        fs::write(
            self.path(files::REPORT_JSON),
            serde_json::to_string_pretty(&report.to_json()).expect("report json"),
        )?;
        fs::write(self.path(files::REPORT_TEXT), report.render_text())?;
        let keys = raw.trials.keys()?;
        let profile = metrics::error_profile(&raw.scores, &keys)?;
        fs::write(self.path(files::DET_RAW), metrics::det_points(&profile))?;
        self.record_stage(
            "evaluate",
            &[
                files::REPORT_JSON.to_string(),
                files::REPORT_TEXT.to_string(),
                files::DET_RAW.to_string(),
            ],
            started,
        )?;
        Ok(report)
    }
}

fn trial_synth(spec: &TrialGenSpec, domain: Domain, master_seed: u64) -> TrialSynthConfig {
    TrialSynthConfig {
        domain,
        enroll_segments: spec.enroll_segments,
        n_target: spec.n_target,
        n_nontarget: spec.n_nontarget,
        rng_seed: spec.seed ^ master_seed,
    }
}

fn stage_input_error(file: &str, e: Error) -> Error {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Data(format!(
            "missing pipeline artifact '{file}' (run the earlier stages first): {io}"
        )),
        other => other,
    }
}

/// Runs logistic-regression fusion over already-run member experiments.
/// Member calibrated scores for the configured strategy must exist and
/// share one trial list. The fused scores are shifted by the empirical
/// prior log-odds (or re-calibrated with PAV when configured) so they are
/// interpretable as LLRs.
pub fn run_fusion(cfg: &FusionConfig, out: impl Into<PathBuf>, seed_override: Option<u64>) -> Result<metrics::Report> {
    cfg.validate()?;
    let _ = seed_override; // fusion is deterministic; kept for CLI symmetry
    let out = out.into();
    fs::create_dir_all(&out)?;
    let started = Instant::now();

    let score_file = files::scores_calibrated(cfg.strategy.as_str());
    let missing: Vec<String> = cfg
        .members
        .iter()
        .filter(|m| !m.out.join(&score_file).exists())
        .map(|m| m.out.join(&score_file).display().to_string())
        .collect();
    if !missing.is_empty() {
        return data_err(format!(
            "missing member scores for strategy '{}': {}",
            cfg.strategy.as_str(),
            missing.join(", ")
        ));
    }

    let mut member_names = Vec::new();
    let mut member_cal: Vec<ScoreSet> = Vec::new();
    let mut member_raw: Vec<ScoreSet> = Vec::new();
    for m in &cfg.members {
        let member_cfg = ExperimentConfig::load(&m.config)?;
        member_names.push(member_cfg.name);
        member_cal.push(corpus::read_scores(m.out.join(&score_file))?);
        member_raw.push(corpus::read_scores(m.out.join(files::SCORES_RAW))?);
    }
    let trials: &TrialSet = &member_cal[0].trials;
    for (name, ss) in member_names.iter().zip(&member_cal) {
        if &ss.trials != trials {
            return data_err(format!(
                "member '{name}' scored a different trial list; fusion requires aligned trials"
            ));
        }
    }
    let keys = trials.keys()?;
    let columns: Vec<&[f64]> = member_cal.iter().map(|s| s.scores.as_slice()).collect();
    let model = calfuse::fuse_fit(&columns, &keys, cfg.l2)?;
    calfuse::write_fusion(&model, out.join(files::FUSION_MODEL))?;

    let fused_raw = calfuse::fuse_apply(&model, &columns)?;
    let fused_llr = if cfg.recalibrate_fused {
        let map = calfuse::pav_fit(&fused_raw, &keys, 7.0)?;
        calfuse::write_calibration(&map, out.join(files::calibration("post_fusion")))?;
        calfuse::pav_apply(&map, &fused_raw)
    } else {
        // The logistic output estimates log-odds under the training
        // prior; removing the prior log-odds leaves an LLR.
        let n_tar = keys
            .iter()
            .filter(|k| **k == corpus::TrialKey::Target)
            .count();
        let prior = n_tar as f64 / keys.len() as f64;
        let prior_logit = (prior / (1.0 - prior)).ln();
        fused_raw.iter().map(|s| s - prior_logit).collect()
    };
    let fused = ScoreSet::new(trials.clone(), fused_llr, true)?;
    corpus::write_scores(&fused, out.join(files::SCORES_FUSED))?;

    let strategy_name = cfg.strategy.as_str().to_string();
    let mut systems = Vec::new();
    for ((name, raw), cal) in member_names.iter().zip(&member_raw).zip(&member_cal) {
        systems.push(SystemScores {
            name: name.clone(),
            raw,
            calibrated: BTreeMap::from([(strategy_name.clone(), cal)]),
        });
    }
    systems.push(SystemScores {
        name: format!("fused_{}", cfg.name),
        raw: &fused,
        calibrated: BTreeMap::from([(strategy_name.clone(), &fused)]),
    });
    let report = metrics::report(&systems, &cfg.metrics)?;
    fs::write(
        out.join(files::REPORT_JSON),
        serde_json::to_string_pretty(&report.to_json()).expect("report json"),
    )?;
    fs::write(out.join(files::REPORT_TEXT), report.render_text())?;

    let mut manifest = RunManifest::load_or_new(&out.join(files::MANIFEST));
    manifest.name = cfg.name.clone();
    manifest.config_hash = cfg.canonical_hash();
    manifest
        .versions
        .insert("spkver".into(), env!("CARGO_PKG_VERSION").into());
    let mut digests = BTreeMap::new();
    for name in [
        files::FUSION_MODEL,
        files::SCORES_FUSED,
        files::REPORT_JSON,
        files::REPORT_TEXT,
    ] {
        digests.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    manifest.upsert(StageRecord {
        stage: "fuse".into(),
        outputs: digests,
        elapsed_ms: started.elapsed().as_millis(),
    });
    manifest.save(&out.join(files::MANIFEST))?;
    Ok(report)
}
