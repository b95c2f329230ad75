use fsda::linear_model::predict_proba;
use fsda::metrics::accuracy;
use fsda::parallel::with_jobs;
use fsda::pipeline::{
    build_training_set, eea_round, ffa_round, pretrain_source_only, run, run_multi_source, run_semi_supervised,
    stream_id, Experiment,
};
use fsda::synthgen::{generate, DomainShift, Preset, SynthConfig};
use fsda::{ensemble_average, pseudo_label_shift, train_classifier, Mode, PipelineConfig, SampleKind, Stage};

fn small(preset: Preset, seed: u64, backbones: usize, per_class: usize) -> Experiment {
    let cfg = SynthConfig { backbone_count: backbones, samples_per_class_per_domain: per_class, ..preset.config(seed) };
    generate(&cfg).unwrap().experiment(true).unwrap()
}

fn quick(mode: Mode, rounds: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::paper(mode);
    cfg.rounds = rounds;
    cfg.train.epochs = 4;
    cfg
}

#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let exp = small(Preset::Shifted, 1, 3, 10);
    for mode in [Mode::MultiSource, Mode::SemiSupervised] {
        let cfg = quick(mode, 2);
        let one = with_jobs(Some(1), || run(&exp, &cfg)).unwrap();
        let four = with_jobs(Some(4), || run(&exp, &cfg)).unwrap();
        assert_eq!(one.final_probs, four.final_probs);
        assert_eq!(one.classifiers, four.classifiers);
        assert_eq!(one.final_bank, four.final_bank);
        assert_eq!(one.prototypes, four.prototypes);
        assert_eq!(one.pseudo_history, four.pseudo_history);
    }
}

#[test]
fn report_counts_and_final_rows() {
    let exp = small(Preset::Shifted, 2, 3, 8);
    for n in 1..=3 {
        let multi = run_multi_source(&exp, &quick(Mode::MultiSource, n)).unwrap();
        assert_eq!(multi.reports.len(), 1 + 2 * n);
        let semi = run_semi_supervised(&exp, &quick(Mode::SemiSupervised, n)).unwrap();
        assert_eq!(semi.reports.len(), 1 + n);
        for r in [&multi, &semi] {
            assert_eq!(r.final_probs.nrows(), exp.target_count());
            for row in r.final_probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
            for report in &r.reports {
                for s in report.classifiers.iter().chain(&report.ensemble) {
                    assert!((0.0..=1.0).contains(&s.mean_acc_all) && (0.0..=1.0).contains(&s.mean_acc_classes));
                }
            }
        }
    }
}

#[test]
fn eight_backbones_give_a_bank_of_36() {
    let exp = small(Preset::Easy, 3, 8, 4);
    let cfg = quick(Mode::MultiSource, 1);
    let (_, pseudo, _) = pretrain_source_only(&exp, &cfg).unwrap();
    let (bank, next, report) = ffa_round(&exp, &pseudo, &cfg).unwrap();
    assert_eq!(bank.len(), 36);
    assert_eq!(bank.specs.iter().filter(|s| matches!(s, fsda::InputSpec::Pair(..))).count(), 28);
    assert_eq!(report.classifiers.len(), 36);
    assert_eq!(next.round_index, 1);
}

#[test]
fn seven_backbones_give_fourteen_semi_supervised_members() {
    let exp = small(Preset::Shifted, 4, 7, 4);
    let run = run_semi_supervised(&exp, &quick(Mode::SemiSupervised, 1)).unwrap();
    assert_eq!(run.final_member_count, 14);
    assert_eq!(run.classifiers.len(), 7);
    assert_eq!(run.prototypes.len(), 7);
}

#[test]
fn multi_source_prediction_is_the_last_bank_average() {
    let exp = small(Preset::Shifted, 5, 3, 8);
    let cfg = quick(Mode::MultiSource, 2);
    let result = run_multi_source(&exp, &cfg).unwrap();
    let bank = result.final_bank.as_ref().unwrap();
    assert_eq!(bank.round_index, 4);
    assert_eq!(result.final_member_count, 6);
    let members = bank.predict_target(&exp, &cfg.fusion).unwrap();
    assert_eq!(result.final_probs, ensemble_average(&members).unwrap());
    // The last FFA's refreshed pseudo labels come from the same average.
    assert_eq!(result.pseudo_history.last().unwrap().avg_probs, result.final_probs);
}

#[test]
fn eea_resumes_and_ffa_restarts() {
    let exp = small(Preset::Shifted, 6, 2, 8);
    let cfg = quick(Mode::MultiSource, 1);
    let (clfs, pseudo, _) = pretrain_source_only(&exp, &cfg).unwrap();
    let (after, next, _) = eea_round(&exp, clfs.clone(), &pseudo, &cfg).unwrap();
    let set = build_training_set(exp.source(1), None, exp.target(1), Some(&pseudo)).unwrap();
    let resumed = train_classifier(&set, &cfg.train, Some(clfs[1].clone()), stream_id(1, Stage::Eea, 1)).unwrap();
    assert_eq!(after[1], resumed);

    let (bank, _, _) = ffa_round(&exp, &next, &cfg).unwrap();
    let set = build_training_set(exp.source(0), None, exp.target(0), Some(&next)).unwrap();
    let fresh = train_classifier(&set, &cfg.train, None, stream_id(2, Stage::Ffa, 0)).unwrap();
    assert_eq!(bank.classifiers[0], fresh);
}

#[test]
fn labeled_target_rows_keep_their_labels() {
    let exp = small(Preset::Shifted, 7, 2, 8);
    let labeled = exp.labeled_target(0).unwrap();
    let cfg = quick(Mode::SemiSupervised, 1);
    let (_, pseudo, _) = pretrain_source_only(&exp, &cfg).unwrap();
    // Pseudo labels cover exactly the unlabeled target.
    assert_eq!(pseudo.len(), exp.target_count());
    let set = build_training_set(exp.source(0), Some(labeled), exp.target(0), Some(&pseudo)).unwrap();
    let given: Vec<usize> = labeled.class_labels().unwrap();
    let in_set: Vec<usize> = set
        .kinds()
        .iter()
        .zip(set.labels())
        .filter(|(k, _)| **k == SampleKind::TargetLabeled)
        .map(|(_, &l)| l)
        .collect();
    assert_eq!(in_set, given);
}

#[test]
fn ensemble_is_not_much_worse_than_any_member_on_separable_data() {
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let exp = small(Preset::Easy, seed, 3, 40);
        let cfg = PipelineConfig::paper(Mode::MultiSource);
        let (clfs, pseudo, _) = pretrain_source_only(&exp, &cfg).unwrap();
        let ens = accuracy(&pseudo.avg_probs, exp.truth().unwrap()).unwrap();
        let best = clfs
            .iter()
            .enumerate()
            .map(|(b, c)| accuracy(&predict_proba(c, exp.target(b).features()).unwrap(), exp.truth().unwrap()).unwrap())
            .fold(0.0, f64::max);
        gaps.push(best - ens);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean_gap <= 0.02, "ensemble trails the best member by {mean_gap}");
}

#[test]
fn generator_is_deterministic_and_balanced() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for p in Preset::ALL {
        let cfg = p.config(9);
        generate(&cfg).unwrap().write(a.path().join(p.name())).unwrap();
        generate(&cfg).unwrap().write(b.path().join(p.name())).unwrap();
        let bench = generate(&cfg).unwrap();
        assert_eq!(bench.manifest.backbones.len(), cfg.backbone_count);
        for (domain, row) in bench.manifest.domains.iter().zip(&bench.tables) {
            assert_eq!(domain.files.len(), cfg.backbone_count);
            assert_eq!(row.len(), cfg.backbone_count);
        }
        let mut counts = vec![0; cfg.class_count];
        for &t in &bench.truth {
            counts[t] += 1;
        }
        assert!(counts.iter().all(|&c| c == cfg.samples_per_class_per_domain));
    }
    let mut names: Vec<_> = walk(a.path());
    names.sort();
    assert!(!names.is_empty());
    for rel in names {
        assert_eq!(std::fs::read(a.path().join(&rel)).unwrap(), std::fs::read(b.path().join(&rel)).unwrap(), "{rel:?}");
    }
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn source_only_accuracy(cfg: &SynthConfig) -> f64 {
    let exp = generate(cfg).unwrap().experiment(true).unwrap();
    let (_, pseudo, _) = pretrain_source_only(&exp, &PipelineConfig::paper(Mode::MultiSource)).unwrap();
    accuracy(&pseudo.avg_probs, exp.truth().unwrap()).unwrap()
}

#[test]
fn zero_shift_zero_noise_is_linearly_solvable() {
    let accs: Vec<f64> = (0..10)
        .map(|seed| {
            let mut cfg = Preset::Easy.config(seed);
            cfg.source_shift = DomainShift::default();
            cfg.target_shift = DomainShift::default();
            cfg.view_noise = 0.0;
            source_only_accuracy(&cfg)
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean >= 0.99, "mean {mean}, per seed {accs:?}");
}

#[test]
fn more_domain_shift_never_helps_source_only() {
    let levels = [0.0, 1.0, 2.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&m| {
            (0..10)
                .map(|seed| {
                    let mut cfg = Preset::Shifted.config(seed);
                    cfg.target_shift = DomainShift { rotation: 0.5 * m, translation: 1.2 * m, noise: 0.3 * m };
                    source_only_accuracy(&cfg)
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn eea_rounds_help_and_pseudo_labels_settle() {
    let (mut source_only, mut eea1, mut early, mut late) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..10 {
        let exp = generate(&Preset::Shifted.config(seed)).unwrap().experiment(true).unwrap();
        let cfg = PipelineConfig::paper(Mode::MultiSource);
        let truth = exp.truth().unwrap();
        let (mut clfs, p0, _) = pretrain_source_only(&exp, &cfg).unwrap();
        let mut history = vec![p0];
        for _ in 0..3 {
            let (next_clfs, next, _) = eea_round(&exp, clfs, history.last().unwrap(), &cfg).unwrap();
            clfs = next_clfs;
            history.push(next);
        }
        source_only += accuracy(&history[0].avg_probs, truth).unwrap() / 10.0;
        eea1 += accuracy(&history[1].avg_probs, truth).unwrap() / 10.0;
        early += pseudo_label_shift(&history[0], &history[1]).unwrap() / 10.0;
        late += pseudo_label_shift(&history[1], &history[3]).unwrap() / 10.0;
    }
    assert!(eea1 >= source_only, "EEA {eea1} vs source-only {source_only}");
    assert!(late <= early, "shift 1->3 {late} vs 0->1 {early}");
}
