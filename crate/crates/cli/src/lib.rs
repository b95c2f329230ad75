//! `fsda` command line: synthetic data generation, the individual adaptation
//! stages, full pipelines, evaluation and file inspection.
//!
//! Exit codes: 0 on success, 1 when an input file or configuration fails
//! validation (or any other runtime error), 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use fsda::binio::{FileHeader, Predictions};
use fsda::feature_store::load_feature_table;
use fsda::metrics::argmax_rows;
use fsda::parallel::with_jobs;
use fsda::pipeline::{
    build_backbone_prototypes, eea_round, ffa_round, pretrain_source_only, run, Experiment, RoundReport,
};
use fsda::synthgen::{generate, Preset};
use fsda::{ensemble_average, evaluate, DatasetManifest, LinearClassifier, Mode, PipelineConfig, PseudoLabelSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "fsda", version, about = "Feature-space multi-source and semi-supervised domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic benchmark (feature tables, manifest, target truth).
    Gen(GenArgs),
    /// Train one source-only classifier per backbone and emit round-0 pseudo labels.
    Pretrain(StageArgs),
    /// One end-to-end adaptation round continuing from per-backbone checkpoints.
    Eea(EeaArgs),
    /// One feature-fusion round: single-backbone and fused-pair classifiers.
    Ffa(PseudoStageArgs),
    /// Per-backbone prototype classifiers from labeled and pseudo-labeled target rows.
    Proto(PseudoStageArgs),
    /// Full schedule for one track, written as a run directory.
    Pipeline(PipelineArgs),
    /// Score a prediction file against a labeled feature table.
    Eval(EvalArgs),
    /// Print the header of an FSDA/FSDC/FSDP/FSDR file.
    Inspect { file: PathBuf },
}

#[derive(Args, Debug)]
struct GenArgs {
    /// One of easy, shifted, noisy-pseudo, bilinear.
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    /// Data seed; the same seed always writes the same bytes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    MultiSource,
    SemiSupervised,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::MultiSource => Mode::MultiSource,
            ModeArg::SemiSupervised => Mode::SemiSupervised,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoundPreset {
    /// Four alternations (multi-source) or three repetitions (semi-supervised).
    Paper,
}

/// Options shared by every training command.
#[derive(Args, Debug)]
struct Common {
    /// Dataset manifest (JSON) listing backbones and per-domain feature files.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the mode of the configuration.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not change results.
    #[arg(long, env = "FSDA_JOBS")]
    jobs: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PseudoStageArgs {
    #[command(flatten)]
    common: Common,
    /// Pseudo label snapshot produced by an earlier stage.
    #[arg(long)]
    pseudo: PathBuf,
}

#[derive(Args, Debug)]
struct EeaArgs {
    #[command(flatten)]
    common: Common,
    /// Pseudo label snapshot produced by an earlier stage.
    #[arg(long)]
    pseudo: PathBuf,
    /// Directory holding one `<backbone>.fsdc` per backbone.
    #[arg(long)]
    checkpoints: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    /// Number of EEA+FFA alternations or EEA repetitions (pretraining not counted).
    #[arg(long, conflicts_with = "preset")]
    rounds: Option<usize>,
    /// Named round schedule.
    #[arg(long, value_enum)]
    preset: Option<RoundPreset>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// FSDR prediction file.
    #[arg(long)]
    pred: PathBuf,
    /// FSDA table whose labels are the truth.
    #[arg(long)]
    truth: PathBuf,
    /// Also write the full report (per-class table, confusion matrix) as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: fsda::Error| e.to_string())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn execute(command: Command) -> fsda::Result<()> {
    match command {
        Command::Gen(a) => {
            let bench = generate(&a.preset.config(a.seed))?;
            let manifest = bench.write(&a.out)?;
            println!(
                "wrote {} ({} backbones, {} domains)",
                manifest.display(),
                bench.manifest.backbones.len(),
                bench.manifest.domains.len()
            );
            Ok(())
        }
        Command::Pretrain(a) => {
            let (exp, cfg) = setup(&a.common, None)?;
            let (classifiers, pseudo, report) = with_jobs(a.common.jobs, || pretrain_source_only(&exp, &cfg))?;
            write_stage(&a.common.out, &cfg, exp.backbones(), &classifiers, &pseudo, &report)
        }
        Command::Eea(a) => {
            let (exp, cfg) = setup(&a.common, None)?;
            let pseudo = PseudoLabelSet::load(&a.pseudo)?;
            let classifiers = exp
                .backbones()
                .iter()
                .map(|b| LinearClassifier::load(a.checkpoints.join(format!("{b}.fsdc"))))
                .collect::<fsda::Result<Vec<_>>>()?;
            let (classifiers, next, report) = with_jobs(a.common.jobs, || eea_round(&exp, classifiers, &pseudo, &cfg))?;
            write_stage(&a.common.out, &cfg, exp.backbones(), &classifiers, &next, &report)
        }
        Command::Ffa(a) => {
            let (exp, cfg) = setup(&a.common, None)?;
            let pseudo = PseudoLabelSet::load(&a.pseudo)?;
            let (bank, next, report) = with_jobs(a.common.jobs, || ffa_round(&exp, &pseudo, &cfg))?;
            let names: Vec<String> = bank.specs.iter().map(|s| s.name(exp.backbones())).collect();
            write_stage(&a.common.out, &cfg, &names, &bank.classifiers, &next, &report)
        }
        Command::Proto(a) => {
            let (exp, cfg) = setup(&a.common, None)?;
            let pseudo = PseudoLabelSet::load(&a.pseudo)?;
            let prototypes = build_backbone_prototypes(&exp, &pseudo, cfg.prototype_temperature)?;
            let dir = a.common.out.join("prototypes");
            fs::create_dir_all(&dir)?;
            let mut members = Vec::with_capacity(prototypes.len());
            for (b, (name, p)) in exp.backbones().iter().zip(&prototypes).enumerate() {
                p.save(dir.join(format!("{name}.fsdp")))?;
                members.push(p.predict_table(exp.target(b).features())?);
            }
            let avg = ensemble_average(&members)?;
            Predictions::from_f64(&avg).save(a.common.out.join("predictions.fsdr"))?;
            write_json(&a.common.out.join("config.json"), &cfg)?;
            if let Some(truth) = exp.truth() {
                print!("{}", evaluate(&argmax_rows(&avg), truth, exp.class_count())?.summary());
            }
            Ok(())
        }
        Command::Pipeline(a) => {
            let (exp, mut cfg) = setup(&a.common, a.rounds)?;
            if let Some(RoundPreset::Paper) = a.preset {
                cfg.rounds = PipelineConfig::paper(cfg.mode).rounds;
            }
            let result = with_jobs(a.common.jobs, || run(&exp, &cfg))?;
            result.write(&a.common.out, exp.backbones(), &cfg)?;
            for r in &result.reports {
                println!("{}", report_line(r));
            }
            if let Some(eval) = &result.final_eval {
                print!("{}", eval.summary());
            }
            Ok(())
        }
        Command::Eval(a) => {
            let pred = Predictions::load(&a.pred)?;
            let truth_table = load_feature_table(&a.truth)?;
            let truth = truth_table
                .class_labels()
                .ok_or_else(|| fsda::Error::Data(format!("{} carries no complete labels", a.truth.display())))?;
            if pred.class_count() != truth_table.class_count() {
                return Err(fsda::Error::Dimension(format!(
                    "predictions have {} classes, truth has {}",
                    pred.class_count(),
                    truth_table.class_count()
                )));
            }
            let result = evaluate(&pred.hard_labels(), &truth, truth_table.class_count())?;
            print!("{}", result.summary());
            if let Some(out) = &a.out {
                result.save(out)?;
            }
            Ok(())
        }
        Command::Inspect { file } => {
            let bytes = fs::read(&file)?;
            println!("{}", FileHeader::parse(&bytes)?);
            Ok(())
        }
    }
}

/// Loads the manifest and configuration and applies command-line overrides.
fn setup(common: &Common, rounds: Option<usize>) -> fsda::Result<(Experiment, PipelineConfig)> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::paper(common.mode.map(Mode::from).unwrap_or_default()),
    };
    if let Some(mode) = common.mode {
        cfg.mode = mode.into();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = rounds {
        cfg.rounds = n;
    }
    cfg.validate()?;
    let manifest = DatasetManifest::load(&common.manifest)?;
    let exp = Experiment::load(&manifest, cfg.normalize_features)?;
    Ok((exp, cfg))
}

fn write_stage(
    out: &Path,
    cfg: &PipelineConfig,
    names: &[String],
    classifiers: &[LinearClassifier],
    pseudo: &PseudoLabelSet,
    report: &RoundReport,
) -> fsda::Result<()> {
    let dir = out.join("classifiers");
    fs::create_dir_all(&dir)?;
    for (name, clf) in names.iter().zip(classifiers) {
        clf.save(dir.join(format!("{name}.fsdc")))?;
    }
    pseudo.save(out.join("pseudo.json"))?;
    Predictions::from_f64(&pseudo.avg_probs).save(out.join("predictions.fsdr"))?;
    write_json(&out.join("report.json"), report)?;
    write_json(&out.join("config.json"), cfg)?;
    println!("{}", report_line(report));
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> fsda::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn report_line(r: &RoundReport) -> String {
    let mut line = format!("round {} {:?}", r.round_index, r.stage);
    if let Some(e) = &r.ensemble {
        line.push_str(&format!(
            ", ensemble mean_acc_all {:.4} mean_acc_classes {:.4}",
            e.mean_acc_all, e.mean_acc_classes
        ));
    }
    if let Some(s) = r.pseudo_label_shift {
        line.push_str(&format!(", pseudo shift {s:.4}"));
    }
    line
}
