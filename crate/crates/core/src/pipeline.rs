//! Self-training schedules.
//!
//! Multi-source: `pretrain -> (EEA -> FFA) x N`, final prediction is the
//! average of the last FFA bank. Semi-supervised: `pretrain -> EEA x N`, final
//! prediction averages the `B` adapted classifiers with `B` prototype
//! classifiers built on labeled plus pseudo-labeled target rows.
//!
//! EEA (end-to-end adaptation) continues training each backbone's classifier
//! on source rows (cross entropy) and pseudo-labeled target rows (generalized
//! cross entropy). FFA (feature-fusion adaptation) trains a fresh bank over
//! every single backbone and every bilinear-fused backbone pair.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::binio::Predictions;
use crate::error::{Error, Result};
use crate::feature_store::{DatasetManifest, FeatureStore, FeatureTable, UNLABELED};
use crate::fusion::{enumerate_pairs, fuse_tables, FusionConfig, InputSpec};
use crate::linear_model::{predict_proba, train_classifier, LinearClassifier, SampleKind, TrainConfig, TrainingSet};
use crate::metrics::{argmax_rows, evaluate, EvalResult};
use crate::parallel::map_indexed;
use crate::prototype::{build_prototypes, PrototypeSet};
use crate::pseudo::{ensemble_average, pseudo_label_shift, to_pseudo_labels, PseudoLabelSet};

/// Alternations used for the multi-source track.
pub const PAPER_MULTI_SOURCE_ROUNDS: usize = 4;
/// Adaptation repetitions used for the semi-supervised track.
pub const PAPER_SEMI_SUPERVISED_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    MultiSource,
    SemiSupervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Number of (EEA + FFA) alternations, or EEA repetitions in semi-supervised mode.
    pub rounds: usize,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub pseudo_threshold: f64,
    pub prototype_temperature: f64,
    /// L2-normalize every feature row at ingestion.
    pub normalize_features: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::MultiSource,
            rounds: PAPER_MULTI_SOURCE_ROUNDS,
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            pseudo_threshold: 0.0,
            prototype_temperature: 1.0,
            normalize_features: true,
        }
    }
}

impl PipelineConfig {
    /// Defaults with the round count of the given track.
    pub fn paper(mode: Mode) -> Self {
        let rounds = match mode {
            Mode::MultiSource => PAPER_MULTI_SOURCE_ROUNDS,
            Mode::SemiSupervised => PAPER_SEMI_SUPERVISED_ROUNDS,
        };
        PipelineConfig { mode, rounds, ..PipelineConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_threshold) {
            return Err(Error::config("pseudo_threshold must be in [0, 1]"));
        }
        if !(self.prototype_temperature > 0.0 && self.prototype_temperature.is_finite()) {
            return Err(Error::config("prototype_temperature must be positive"));
        }
        self.train.validate()?;
        self.fusion.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_slice(&fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn uses_labeled_target(&self) -> bool {
        self.mode == Mode::SemiSupervised
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain = 0,
    Eea = 1,
    Ffa = 2,
}

/// Private random stream of one classifier: distinct for every
/// `(round, stage, member)` so parallel and sequential runs agree.
pub fn stream_id(round: usize, stage: Stage, member: usize) -> u64 {
    ((round as u64) << 32) | ((stage as u64) << 24) | member as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub name: String,
    pub mean_acc_all: f64,
    pub mean_acc_classes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub stage: Stage,
    /// Per-member target metrics; empty when no target truth is available.
    pub classifiers: Vec<ClassifierScore>,
    pub ensemble: Option<ClassifierScore>,
    /// Fraction of hard pseudo labels that changed relative to the previous round.
    pub pseudo_label_shift: Option<f64>,
    pub excluded: usize,
    /// Wall-clock time; kept out of serialized reports so run directories are reproducible.
    #[serde(skip)]
    pub duration_ms: f64,
}

/// Per-backbone views of one experiment, ready for training.
#[derive(Clone, Debug)]
pub struct Experiment {
    backbones: Vec<String>,
    class_count: usize,
    sources: Vec<FeatureTable>,
    target: Vec<FeatureTable>,
    labeled_target: Option<Vec<FeatureTable>>,
    truth: Option<Vec<usize>>,
}

impl Experiment {
    pub fn from_store(store: &FeatureStore) -> Result<Self> {
        let manifest = store.manifest();
        let sources = manifest.backbones.iter().map(|b| store.merge_sources(b)).collect::<Result<Vec<_>>>()?;
        let nb = manifest.backbones.len();
        let target = (0..nb).map(|b| store.target_unlabeled(b).without_labels()).collect();
        let labeled_target = store.target_labeled(0).map(|_| {
            (0..nb).map(|b| store.target_labeled(b).expect("every backbone has the domain").clone()).collect()
        });
        // Fully labeled target rows double as truth when no separate file is given.
        let truth = store.truth().map(<[usize]>::to_vec).or_else(|| store.target_unlabeled(0).class_labels());
        Ok(Experiment {
            backbones: manifest.backbones.clone(),
            class_count: manifest.class_count,
            sources,
            target,
            labeled_target,
            truth,
        })
    }

    pub fn load(manifest: &DatasetManifest, normalize: bool) -> Result<Self> {
        Self::from_store(&FeatureStore::load(manifest, normalize)?)
    }

    pub fn backbones(&self) -> &[String] {
        &self.backbones
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn target_count(&self) -> usize {
        self.target[0].sample_count()
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn source(&self, backbone: usize) -> &FeatureTable {
        &self.sources[backbone]
    }

    pub fn target(&self, backbone: usize) -> &FeatureTable {
        &self.target[backbone]
    }

    pub fn labeled_target(&self, backbone: usize) -> Option<&FeatureTable> {
        self.labeled_target.as_ref().map(|t| &t[backbone])
    }

    /// Source, target and labeled-target tables for one classifier input.
    pub fn views(&self, spec: InputSpec, fusion: &FusionConfig) -> Result<Views<'_>> {
        Ok(match spec {
            InputSpec::Single(b) => Views {
                source: Cow::Borrowed(&self.sources[b]),
                target: Cow::Borrowed(&self.target[b]),
                labeled: self.labeled_target(b).map(Cow::Borrowed),
            },
            InputSpec::Pair(a, b) => Views {
                source: Cow::Owned(fuse_tables(&self.sources[a], &self.sources[b], fusion)?),
                target: Cow::Owned(fuse_tables(&self.target[a], &self.target[b], fusion)?),
                labeled: match (self.labeled_target(a), self.labeled_target(b)) {
                    (Some(x), Some(y)) => Some(Cow::Owned(fuse_tables(x, y, fusion)?)),
                    _ => None,
                },
            },
        })
    }

    fn score(&self, name: &str, probs: &Array2<f64>) -> Result<Option<ClassifierScore>> {
        let Some(truth) = &self.truth else { return Ok(None) };
        let r = evaluate(&argmax_rows(probs), truth, self.class_count)?;
        Ok(Some(ClassifierScore {
            name: name.to_string(),
            mean_acc_all: r.mean_acc_all,
            mean_acc_classes: r.mean_acc_classes,
        }))
    }

    fn report(
        &self,
        round_index: usize,
        stage: Stage,
        members: &[(String, &Array2<f64>)],
        pseudo: &PseudoLabelSet,
        previous: Option<&PseudoLabelSet>,
        started: Stopwatch,
    ) -> Result<RoundReport> {
        let mut classifiers = Vec::new();
        for (name, probs) in members {
            classifiers.extend(self.score(name, probs)?);
        }
        Ok(RoundReport {
            round_index,
            stage,
            classifiers,
            ensemble: self.score("ensemble", &pseudo.avg_probs)?,
            pseudo_label_shift: previous.map(|p| pseudo_label_shift(p, pseudo)).transpose()?,
            excluded: pseudo.excluded.iter().filter(|&&e| e).count(),
            duration_ms: started.elapsed_ms(),
        })
    }
}

pub struct Views<'a> {
    pub source: Cow<'a, FeatureTable>,
    pub target: Cow<'a, FeatureTable>,
    pub labeled: Option<Cow<'a, FeatureTable>>,
}

fn labeled_rows(table: &FeatureTable) -> (Vec<usize>, Vec<usize>) {
    table.labels().iter().enumerate().filter(|(_, &l)| l != UNLABELED).map(|(i, &l)| (i, l as usize)).unzip()
}

/// Source rows, optional labeled target rows and the non-excluded pseudo-labeled target rows.
pub fn build_training_set(
    source: &FeatureTable,
    labeled: Option<&FeatureTable>,
    target: &FeatureTable,
    pseudo: Option<&PseudoLabelSet>,
) -> Result<TrainingSet> {
    let mut set = TrainingSet::new(source.feature_dim(), source.class_count());
    let (rows, labels) = labeled_rows(source);
    set.add(source.features().select(ndarray::Axis(0), &rows).view(), &labels, SampleKind::SourceLabeled)?;
    if let Some(t) = labeled {
        let (rows, labels) = labeled_rows(t);
        set.add(t.features().select(ndarray::Axis(0), &rows).view(), &labels, SampleKind::TargetLabeled)?;
    }
    if let Some(p) = pseudo {
        if p.len() != target.sample_count() {
            return Err(Error::dimension(format!(
                "{} pseudo labels for {} target rows",
                p.len(),
                target.sample_count()
            )));
        }
        let (rows, labels): (Vec<usize>, Vec<usize>) = p.included().unzip();
        set.add(target.features().select(ndarray::Axis(0), &rows).view(), &labels, SampleKind::TargetPseudo)?;
    }
    Ok(set)
}

#[derive(Clone, Copy)]
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

fn check_round_inputs(exp: &Experiment, pseudo: &PseudoLabelSet, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    if pseudo.len() != exp.target_count() {
        return Err(Error::dimension(format!(
            "pseudo labels cover {} samples, target has {}",
            pseudo.len(),
            exp.target_count()
        )));
    }
    Ok(())
}

/// Outcome of one stage: the per-backbone classifiers it produced or kept,
/// the refreshed pseudo labels and the report.
pub type StageOutput = (Vec<LinearClassifier>, PseudoLabelSet, RoundReport);

/// One classifier per backbone trained on merged sources (plus oversampled
/// labeled target in semi-supervised mode); their averaged target
/// predictions become the round-0 pseudo labels.
pub fn pretrain_source_only(exp: &Experiment, config: &PipelineConfig) -> Result<StageOutput> {
    config.validate()?;
    let started = Stopwatch::start();
    let backbones: Vec<usize> = (0..exp.backbones.len()).collect();
    let results = map_indexed(&backbones, |_, &b| -> Result<(LinearClassifier, Array2<f64>)> {
        let labeled = if config.uses_labeled_target() { exp.labeled_target(b) } else { None };
        let set = build_training_set(exp.source(b), labeled, exp.target(b), None)?;
        let clf = train_classifier(&set, &config.train, None, stream_id(0, Stage::Pretrain, b))?;
        let probs = predict_proba(&clf, exp.target(b).features())?;
        Ok((clf, probs))
    });
    let (classifiers, probs): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let pseudo = to_pseudo_labels(&ensemble_average(&probs)?, config.pseudo_threshold, 0)?;
    let members: Vec<_> = exp.backbones.iter().cloned().zip(&probs).collect();
    let report = exp.report(0, Stage::Pretrain, &members, &pseudo, None, started)?;
    Ok((classifiers, pseudo, report))
}

/// Continues training every backbone classifier on source CE plus
/// pseudo-labeled target GCE, then re-averages their target predictions.
pub fn eea_round(
    exp: &Experiment,
    classifiers: Vec<LinearClassifier>,
    pseudo: &PseudoLabelSet,
    config: &PipelineConfig,
) -> Result<StageOutput> {
    check_round_inputs(exp, pseudo, config)?;
    if classifiers.len() != exp.backbones.len() {
        return Err(Error::dimension(format!(
            "{} classifiers for {} backbones",
            classifiers.len(),
            exp.backbones.len()
        )));
    }
    let started = Stopwatch::start();
    let round = pseudo.round_index + 1;
    let results = map_indexed(&classifiers, |b, clf| -> Result<(LinearClassifier, Array2<f64>)> {
        let labeled = if config.uses_labeled_target() { exp.labeled_target(b) } else { None };
        let set = build_training_set(exp.source(b), labeled, exp.target(b), Some(pseudo))?;
        let clf = train_classifier(&set, &config.train, Some(clf.clone()), stream_id(round, Stage::Eea, b))?;
        let probs = predict_proba(&clf, exp.target(b).features())?;
        Ok((clf, probs))
    });
    let (classifiers, probs): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let next = to_pseudo_labels(&ensemble_average(&probs)?, config.pseudo_threshold, round)?;
    let members: Vec<_> = exp.backbones.iter().cloned().zip(&probs).collect();
    let report = exp.report(round, Stage::Eea, &members, &next, Some(pseudo), started)?;
    Ok((classifiers, next, report))
}

/// Classifiers over every single backbone and every fused backbone pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierBank {
    pub round_index: usize,
    pub specs: Vec<InputSpec>,
    pub classifiers: Vec<LinearClassifier>,
}

impl ClassifierBank {
    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    /// Target predictions of every member, in spec order.
    pub fn predict_target(&self, exp: &Experiment, fusion: &FusionConfig) -> Result<Vec<Array2<f64>>> {
        let members: Vec<_> = self.specs.iter().zip(&self.classifiers).collect();
        map_indexed(&members, |_, (spec, clf)| predict_proba(clf, exp.views(**spec, fusion)?.target.features()))
            .into_iter()
            .collect()
    }
}

/// Trains a fresh bank of `B + B(B-1)/2` classifiers from scratch and
/// re-averages all of their target predictions.
pub fn ffa_round(
    exp: &Experiment,
    pseudo: &PseudoLabelSet,
    config: &PipelineConfig,
) -> Result<(ClassifierBank, PseudoLabelSet, RoundReport)> {
    check_round_inputs(exp, pseudo, config)?;
    let started = Stopwatch::start();
    let round = pseudo.round_index + 1;
    let specs = enumerate_pairs(&exp.backbones)?;
    let results = map_indexed(&specs, |k, &spec| -> Result<(LinearClassifier, Array2<f64>)> {
        let views = exp.views(spec, &config.fusion)?;
        let labeled = if config.uses_labeled_target() { views.labeled.as_deref() } else { None };
        let set = build_training_set(&views.source, labeled, &views.target, Some(pseudo))?;
        let clf = train_classifier(&set, &config.train, None, stream_id(round, Stage::Ffa, k))?;
        let probs = predict_proba(&clf, views.target.features())?;
        Ok((clf, probs))
    });
    let (classifiers, probs): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let next = to_pseudo_labels(&ensemble_average(&probs)?, config.pseudo_threshold, round)?;
    let members: Vec<_> = specs.iter().map(|s| s.name(&exp.backbones)).zip(&probs).collect();
    let report = exp.report(round, Stage::Ffa, &members, &next, Some(pseudo), started)?;
    Ok((ClassifierBank { round_index: round, specs, classifiers }, next, report))
}

/// One prototype set per backbone from labeled target rows plus the
/// non-excluded pseudo-labeled target rows, on raw (unfused) features.
pub fn build_backbone_prototypes(
    exp: &Experiment,
    pseudo: &PseudoLabelSet,
    temperature: f64,
) -> Result<Vec<PrototypeSet>> {
    if pseudo.len() != exp.target_count() {
        return Err(Error::dimension("pseudo labels do not cover the target"));
    }
    (0..exp.backbones.len())
        .map(|b| {
            let mut rows: Vec<Array2<f32>> = Vec::new();
            let mut labels = Vec::new();
            if let Some(t) = exp.labeled_target(b) {
                let (idx, l) = labeled_rows(t);
                rows.push(t.features().select(ndarray::Axis(0), &idx));
                labels.extend(l);
            }
            let (idx, l): (Vec<usize>, Vec<usize>) = pseudo.included().unzip();
            rows.push(exp.target(b).features().select(ndarray::Axis(0), &idx));
            labels.extend(l);
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            let features =
                ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::dimension(e.to_string()))?;
            build_prototypes(features.view(), &labels, exp.class_count, temperature)
        })
        .collect()
}

/// Everything a finished pipeline produced.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub mode: Mode,
    /// `target_count x class_count`.
    pub final_probs: Array2<f64>,
    pub reports: Vec<RoundReport>,
    /// Pseudo labels after every stage, starting with pretraining.
    pub pseudo_history: Vec<PseudoLabelSet>,
    /// Per-backbone classifiers after the last EEA round.
    pub classifiers: Vec<LinearClassifier>,
    /// Last FFA bank (multi-source only).
    pub final_bank: Option<ClassifierBank>,
    /// Per-backbone prototypes (semi-supervised only).
    pub prototypes: Vec<PrototypeSet>,
    /// Number of probability matrices averaged into `final_probs`.
    pub final_member_count: usize,
    pub final_eval: Option<EvalResult>,
}

fn final_eval(exp: &Experiment, probs: &Array2<f64>) -> Result<Option<EvalResult>> {
    exp.truth.as_ref().map(|t| evaluate(&argmax_rows(probs), t, exp.class_count)).transpose()
}

pub fn run_multi_source(exp: &Experiment, config: &PipelineConfig) -> Result<PipelineRun> {
    if config.mode != Mode::MultiSource {
        return Err(Error::config("run_multi_source needs mode multi_source"));
    }
    let (mut classifiers, mut pseudo, report) = pretrain_source_only(exp, config)?;
    let mut reports = vec![report];
    let mut history = vec![pseudo.clone()];
    let mut bank = None;
    for _ in 0..config.rounds {
        let (c, p, r) = eea_round(exp, classifiers, &pseudo, config)?;
        classifiers = c;
        reports.push(r);
        history.push(p.clone());
        let (b, p, r) = ffa_round(exp, &p, config)?;
        reports.push(r);
        history.push(p.clone());
        pseudo = p;
        bank = Some(b);
    }
    let bank = bank.expect("rounds >= 1");
    let members = bank.predict_target(exp, &config.fusion)?;
    let final_probs = ensemble_average(&members)?;
    Ok(PipelineRun {
        mode: Mode::MultiSource,
        final_eval: final_eval(exp, &final_probs)?,
        final_probs,
        reports,
        pseudo_history: history,
        classifiers,
        final_member_count: members.len(),
        final_bank: Some(bank),
        prototypes: Vec::new(),
    })
}

pub fn run_semi_supervised(exp: &Experiment, config: &PipelineConfig) -> Result<PipelineRun> {
    if config.mode != Mode::SemiSupervised {
        return Err(Error::config("run_semi_supervised needs mode semi_supervised"));
    }
    if exp.labeled_target.is_none() {
        return Err(Error::config("semi-supervised mode needs a target_labeled domain"));
    }
    let (mut classifiers, mut pseudo, report) = pretrain_source_only(exp, config)?;
    let mut reports = vec![report];
    let mut history = vec![pseudo.clone()];
    for _ in 0..config.rounds {
        let (c, p, r) = eea_round(exp, classifiers, &pseudo, config)?;
        classifiers = c;
        reports.push(r);
        history.push(p.clone());
        pseudo = p;
    }
    let prototypes = build_backbone_prototypes(exp, &pseudo, config.prototype_temperature)?;
    let mut members = Vec::with_capacity(2 * classifiers.len());
    for (b, clf) in classifiers.iter().enumerate() {
        members.push(predict_proba(clf, exp.target(b).features())?);
    }
    for (b, protos) in prototypes.iter().enumerate() {
        members.push(protos.predict_table(exp.target(b).features())?);
    }
    let final_probs = ensemble_average(&members)?;
    Ok(PipelineRun {
        mode: Mode::SemiSupervised,
        final_eval: final_eval(exp, &final_probs)?,
        final_probs,
        reports,
        pseudo_history: history,
        classifiers,
        final_bank: None,
        prototypes,
        final_member_count: members.len(),
    })
}

/// Runs the schedule selected by `config.mode`.
pub fn run(exp: &Experiment, config: &PipelineConfig) -> Result<PipelineRun> {
    match config.mode {
        Mode::MultiSource => run_multi_source(exp, config),
        Mode::SemiSupervised => run_semi_supervised(exp, config),
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    mode: Mode,
    reports: &'a [RoundReport],
    final_member_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_eval: Option<&'a EvalResult>,
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl PipelineRun {
    /// Writes the run directory:
    ///
    /// ```text
    /// config.json            configuration snapshot
    /// pseudo/round_NNN.json  pseudo labels after every stage
    /// checkpoints/eea/*.fsdc per-backbone classifiers after the last EEA round
    /// checkpoints/ffa/*.fsdc last FFA bank (multi-source)
    /// checkpoints/pc/*.fsdp  prototypes (semi-supervised)
    /// predictions.fsdr       final target probabilities
    /// metrics.json           round reports and final metrics
    /// ```
    pub fn write(&self, dir: impl AsRef<Path>, backbones: &[String], config: &PipelineConfig) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("pseudo"))?;
        write_json(&dir.join("config.json"), config)?;
        for (k, p) in self.pseudo_history.iter().enumerate() {
            p.save(dir.join("pseudo").join(format!("round_{k:03}.json")))?;
        }
        let eea = dir.join("checkpoints").join("eea");
        fs::create_dir_all(&eea)?;
        for (name, clf) in backbones.iter().zip(&self.classifiers) {
            clf.save(eea.join(format!("{name}.fsdc")))?;
        }
        if let Some(bank) = &self.final_bank {
            let ffa = dir.join("checkpoints").join("ffa");
            fs::create_dir_all(&ffa)?;
            for (spec, clf) in bank.specs.iter().zip(&bank.classifiers) {
                clf.save(ffa.join(format!("{}.fsdc", spec.name(backbones))))?;
            }
        }
        if !self.prototypes.is_empty() {
            let pc = dir.join("checkpoints").join("pc");
            fs::create_dir_all(&pc)?;
            for (name, p) in backbones.iter().zip(&self.prototypes) {
                p.save(pc.join(format!("{name}.fsdp")))?;
            }
        }
        Predictions::from_f64(&self.final_probs).save(dir.join("predictions.fsdr"))?;
        write_json(
            &dir.join("metrics.json"),
            &MetricsFile {
                mode: self.mode,
                reports: &self.reports,
                final_member_count: self.final_member_count,
                final_eval: self.final_eval.as_ref(),
            },
        )
    }
}
