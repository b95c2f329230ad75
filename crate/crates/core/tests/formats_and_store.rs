mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use common::*;
use fsda::binio::Predictions;
use fsda::feature_store::{load_feature_table, merge_sources, save_feature_table};
use fsda::{
    build_prototypes, DatasetManifest, DomainEntry, DomainRole, FeatureStore, FeatureTable, LinearClassifier,
    PrototypeSet,
};
use ndarray::Array2;
use rand::Rng;

/// Saves, reloads, and checks both value equality and that saving the
/// reloaded value reproduces the file byte for byte.
fn assert_file_round_trip<T: PartialEq + std::fmt::Debug>(
    path: &Path,
    value: &T,
    save: impl Fn(&T, &Path),
    load: impl Fn(&Path) -> T,
) {
    save(value, path);
    let bytes = fs::read(path).unwrap();
    let back = load(path);
    assert_eq!(&back, value);
    save(&back, path);
    assert_eq!(fs::read(path).unwrap(), bytes);
}

#[test]
fn fifty_random_files_of_each_format_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(77);
    for k in 0..50 {
        let (n, d, c) = (r.random_range(1..30), r.random_range(1..12), r.random_range(2..8));
        let unlabeled = [0.0, 0.5, 1.0][k % 3];
        let table = random_table(&mut r, n, d, c, unlabeled);
        let path = dir.path().join(format!("t{k}.fsda"));
        save_feature_table(&table, &path).unwrap();
        let back = load_feature_table(&path).unwrap();
        assert!(back.bitwise_eq(&table));
        assert_eq!(back.labels(), table.labels());

        let clf = random_classifier(&mut r, c, d, 4.0).to_f32_precision();
        assert_file_round_trip(
            &dir.path().join(format!("c{k}.fsdc")),
            &clf,
            |v, p| v.save(p).unwrap(),
            |p| LinearClassifier::load(p).unwrap(),
        );

        let preds = Predictions::from_f64(&random_probs(&mut r, n, c));
        assert_file_round_trip(
            &dir.path().join(format!("p{k}.fsdr")),
            &preds,
            |v, p| v.save(p).unwrap(),
            |p| Predictions::load(p).unwrap(),
        );

        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let protos = build_prototypes(table.features(), &labels, c, r.random_range(0.1..4.0)).unwrap();
        // Prototypes are stored as f32; compare against the f32-rounded set.
        let rounded = PrototypeSet::from_bytes(&protos.to_bytes().unwrap()).unwrap();
        assert_file_round_trip(
            &dir.path().join(format!("q{k}.fsdp")),
            &rounded,
            |v, p| v.save(p).unwrap(),
            |p| PrototypeSet::load(p).unwrap(),
        );
    }
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let mut r = rng(3);
    let table = random_table(&mut r, 4, 3, 2, 0.2);
    let bytes = table.to_bytes().unwrap();
    for cut in [1, 4, bytes.len() - 24] {
        assert!(matches!(FeatureTable::from_bytes(&bytes[..bytes.len() - cut]), Err(fsda::Error::Truncated { .. })));
    }
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(FeatureTable::from_bytes(&padded).is_err());
    let clf = random_classifier(&mut r, 3, 2, 1.0).to_f32_precision().to_bytes().unwrap();
    assert!(LinearClassifier::from_bytes(&clf[..clf.len() - 4]).is_err());
    assert!(FeatureTable::from_bytes(&clf).is_err());
}

/// Writes `sizes.len()` source domains plus a target for one backbone and
/// returns the manifest path and the source tables.
fn write_sources(dir: &Path, sizes: &[usize], dims: &[usize]) -> (PathBuf, Vec<FeatureTable>) {
    let mut r = rng(sizes.iter().sum::<usize>() as u64);
    let mut domains = Vec::new();
    let mut tables = Vec::new();
    for (k, (&n, &d)) in sizes.iter().zip(dims).enumerate() {
        let t = random_table(&mut r, n, d, 3, 0.0);
        let name = format!("s{k}.fsda");
        save_feature_table(&t, dir.join(&name)).unwrap();
        domains.push(DomainEntry {
            id: format!("s{k}"),
            role: DomainRole::Source,
            files: BTreeMap::from([("bb".to_string(), PathBuf::from(name))]),
        });
        tables.push(t);
    }
    let target = random_table(&mut r, 4, dims[0], 3, 1.0);
    save_feature_table(&target, dir.join("target.fsda")).unwrap();
    domains.push(DomainEntry {
        id: "target".into(),
        role: DomainRole::TargetUnlabeled,
        files: BTreeMap::from([("bb".to_string(), PathBuf::from("target.fsda"))]),
    });
    let path = dir.join("manifest.json");
    DatasetManifest::new(3, vec!["bb".into()], domains).save(&path).unwrap();
    (path, tables)
}

#[test]
fn single_source_merges_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (path, tables) = write_sources(dir.path(), &[7], &[4]);
    let merged = merge_sources(&DatasetManifest::load(&path).unwrap(), "bb", false).unwrap();
    assert!(merged.bitwise_eq(&tables[0]));
}

#[test]
fn sizes_three_and_five_merge_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let (path, tables) = write_sources(dir.path(), &[3, 5], &[2, 2]);
    let merged = merge_sources(&DatasetManifest::load(&path).unwrap(), "bb", false).unwrap();
    assert_eq!(merged.sample_count(), 8);
    for i in 0..3 {
        assert_eq!(merged.row(i), tables[0].row(i));
    }
    for i in 0..5 {
        assert_eq!(merged.row(3 + i), tables[1].row(i));
    }
    assert_eq!(&merged.labels()[3..], tables[1].labels());
}

#[test]
fn six_source_merge_is_a_bijection_onto_source_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sizes = [4, 1, 9, 3, 6, 2];
    let (path, tables) = write_sources(dir.path(), &sizes, &[3; 6]);
    let manifest = DatasetManifest::load(&path).unwrap();
    let store = FeatureStore::load(&manifest, false).unwrap();
    let (merged, provenance) = store.merge_sources_with_provenance("bb").unwrap();
    assert_eq!(merged.sample_count(), sizes.iter().sum::<usize>());
    assert_eq!(provenance.len(), merged.sample_count());
    let distinct: HashSet<_> = provenance.iter().collect();
    assert_eq!(distinct.len(), provenance.len());
    // Every (domain, row) appears, and the merged row carries its content.
    for (d, &n) in sizes.iter().enumerate() {
        for row in 0..n {
            assert!(distinct.contains(&(d, row)));
        }
    }
    for (i, &(d, row)) in provenance.iter().enumerate() {
        assert_eq!(merged.row(i), tables[d].row(row));
        assert_eq!(merged.labels()[i], tables[d].labels()[row]);
    }
}

#[test]
fn merge_rejects_mismatched_dims_and_unknown_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_sources(dir.path(), &[3, 4], &[2, 5]);
    let manifest = DatasetManifest::load(&path).unwrap();
    assert!(matches!(merge_sources(&manifest, "bb", false), Err(fsda::Error::Dimension(_))));
    assert!(merge_sources(&manifest, "nope", false).is_err());
}

#[test]
fn normalization_gives_unit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_sources(dir.path(), &[5, 5], &[4, 4]);
    let merged = merge_sources(&DatasetManifest::load(&path).unwrap(), "bb", true).unwrap();
    for row in merged.features().rows() {
        let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
}

#[test]
fn manifest_roles_are_validated_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let entry = |id: &str, role| DomainEntry {
        id: id.into(),
        role,
        files: BTreeMap::from([("bb".to_string(), PathBuf::from("x.fsda"))]),
    };
    let bad = [
        vec![entry("t", DomainRole::TargetUnlabeled)],
        vec![entry("s", DomainRole::Source)],
        vec![
            entry("s", DomainRole::Source),
            entry("t", DomainRole::TargetUnlabeled),
            entry("u", DomainRole::TargetUnlabeled),
        ],
        vec![
            entry("s", DomainRole::Source),
            entry("t", DomainRole::TargetUnlabeled),
            entry("l1", DomainRole::TargetLabeled),
            entry("l2", DomainRole::TargetLabeled),
        ],
    ];
    for domains in bad {
        let path = dir.path().join("m.json");
        DatasetManifest::new(2, vec!["bb".into()], domains).save(&path).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }
    let mut missing = entry("s", DomainRole::Source);
    missing.files.clear();
    let path = dir.path().join("m.json");
    DatasetManifest::new(2, vec!["bb".into()], vec![missing, entry("t", DomainRole::TargetUnlabeled)])
        .save(&path)
        .unwrap();
    assert!(DatasetManifest::load(&path).is_err());
}

#[test]
fn out_of_range_labels_never_load() {
    let mut bytes = FeatureTable::new(Array2::zeros((1, 1)), vec![1], 2).unwrap().to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&2i32.to_le_bytes());
    assert!(FeatureTable::from_bytes(&bytes).is_err());
    bytes[n - 4..].copy_from_slice(&(-2i32).to_le_bytes());
    assert!(FeatureTable::from_bytes(&bytes).is_err());
}
