//! Deterministic synthetic multi-source benchmark.
//!
//! Classes are Gaussian clusters in a latent space. Every domain rotates and
//! translates the cluster centers and adds its own noise; every simulated
//! backbone views the latent sample through a fixed random linear map followed
//! by `tanh`, plus a little view-specific noise, so ensemble members disagree.
//!
//! The bilinear preset instead plants the class in the product of one signed
//! coordinate seen by backbone 0 and one seen by backbone 1: no single view,
//! nor their concatenation, separates it linearly, while their bilinear fusion
//! does.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{save_feature_table, DatasetManifest, DomainEntry, DomainRole, FeatureStore, FeatureTable};
use crate::pipeline::Experiment;
use crate::pseudo::PseudoLabelSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Radians, applied in two random coordinate planes.
    pub rotation: f64,
    /// Length of the random translation of all class centers.
    pub translation: f64,
    /// Extra isotropic sample noise.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub samples_per_class_per_domain: usize,
    pub source_domain_count: usize,
    /// Each source domain draws its own directions at this magnitude.
    pub source_shift: DomainShift,
    pub target_shift: DomainShift,
    pub backbone_count: usize,
    /// Size of the labeled target domain per class; 0 omits the domain.
    pub labeled_target_per_class: usize,
    /// Expected distance between two class centers.
    pub class_separation: f64,
    pub cluster_std: f64,
    pub view_noise: f64,
    /// Plant the class in a cross-backbone product instead of clusters.
    pub bilinear: bool,
    /// Fraction of target rows whose published pseudo label is flipped.
    pub pseudo_label_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.class_count,
            self.feature_dim,
            self.samples_per_class_per_domain,
            self.source_domain_count,
            self.backbone_count,
        ];
        if counts.contains(&0) {
            return Err(Error::config("synthetic counts must be >= 1"));
        }
        if self.class_count < 2 {
            return Err(Error::config("need at least two classes"));
        }
        for s in [self.source_shift, self.target_shift] {
            if s.noise < 0.0 || s.translation < 0.0 {
                return Err(Error::config("noise and translation must be non-negative"));
            }
        }
        if self.cluster_std < 0.0 || self.view_noise < 0.0 {
            return Err(Error::config("noise sigmas must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_label_noise) {
            return Err(Error::config("pseudo_label_noise must be in [0, 1]"));
        }
        if self.bilinear && (self.class_count != 2 || self.backbone_count < 2) {
            return Err(Error::config("the bilinear benchmark needs 2 classes and >= 2 backbones"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Easy,
    Shifted,
    NoisyPseudo,
    Bilinear,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Easy, Preset::Shifted, Preset::NoisyPseudo, Preset::Bilinear];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Easy => "easy",
            Preset::Shifted => "shifted",
            Preset::NoisyPseudo => "noisy-pseudo",
            Preset::Bilinear => "bilinear",
        }
    }

    pub fn config(self, seed: u64) -> SynthConfig {
        let base = SynthConfig {
            class_count: 4,
            feature_dim: 8,
            samples_per_class_per_domain: 40,
            source_domain_count: 2,
            source_shift: DomainShift { rotation: 0.1, translation: 0.1, noise: 0.0 },
            target_shift: DomainShift { rotation: 0.1, translation: 0.1, noise: 0.0 },
            backbone_count: 3,
            labeled_target_per_class: 0,
            class_separation: 4.0,
            cluster_std: 0.6,
            view_noise: 0.05,
            bilinear: false,
            pseudo_label_noise: 0.0,
            seed,
        };
        match self {
            Preset::Easy => base,
            Preset::Shifted => SynthConfig {
                class_count: 5,
                feature_dim: 10,
                source_domain_count: 3,
                source_shift: DomainShift { rotation: 0.25, translation: 0.5, noise: 0.2 },
                target_shift: DomainShift { rotation: 0.7, translation: 1.6, noise: 0.4 },
                labeled_target_per_class: 3,
                cluster_std: 0.8,
                view_noise: 0.08,
                ..base
            },
            Preset::NoisyPseudo => SynthConfig {
                class_count: 5,
                feature_dim: 40,
                samples_per_class_per_domain: 30,
                source_domain_count: 2,
                source_shift: DomainShift { rotation: 0.2, translation: 0.4, noise: 0.1 },
                target_shift: DomainShift { rotation: 0.8, translation: 1.5, noise: 0.3 },
                backbone_count: 2,
                cluster_std: 0.8,
                pseudo_label_noise: 0.4,
                ..base
            },
            Preset::Bilinear => SynthConfig {
                class_count: 2,
                feature_dim: 6,
                samples_per_class_per_domain: 100,
                source_domain_count: 2,
                source_shift: DomainShift { rotation: 0.0, translation: 0.2, noise: 0.05 },
                target_shift: DomainShift { rotation: 0.0, translation: 0.4, noise: 0.1 },
                backbone_count: 2,
                view_noise: 0.02,
                bilinear: true,
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown preset {s:?} (easy, shifted, noisy-pseudo, bilinear)")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Generated tables held in memory, indexed `[domain][backbone]` like the manifest.
#[derive(Clone, Debug)]
pub struct SyntheticBenchmark {
    pub manifest: DatasetManifest,
    pub tables: Vec<Vec<FeatureTable>>,
    /// True labels of the unlabeled target domain.
    pub truth: Vec<usize>,
    /// Target labels with `pseudo_label_noise` of them flipped, if requested.
    pub noisy_pseudo: Option<Vec<usize>>,
}

impl SyntheticBenchmark {
    pub fn store(&self, normalize: bool) -> Result<FeatureStore> {
        FeatureStore::from_tables(self.manifest.clone(), self.tables.clone(), Some(self.truth.clone()), normalize)
    }

    pub fn experiment(&self, normalize: bool) -> Result<Experiment> {
        Experiment::from_store(&self.store(normalize)?)
    }

    /// Writes every table, `target_truth.fsda`, `manifest.json` and, for noisy
    /// presets, `noisy_pseudo.json`. Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (domain, row) in self.manifest.domains.iter().zip(&self.tables) {
            for (backbone, table) in self.manifest.backbones.iter().zip(row) {
                save_feature_table(table, dir.join(&domain.files[backbone]))?;
            }
        }
        let (target, _) = self.manifest.domains_with_role(DomainRole::TargetUnlabeled).next().expect("generated");
        let truth_table = FeatureTable::new(
            self.tables[target][0].features().to_owned(),
            self.truth.iter().map(|&l| l as i32).collect(),
            self.manifest.class_count,
        )?;
        save_feature_table(&truth_table, dir.join("target_truth.fsda"))?;
        if let Some(noisy) = &self.noisy_pseudo {
            PseudoLabelSet::from_hard_labels(noisy, self.manifest.class_count, 0)?
                .save(dir.join("noisy_pseudo.json"))?;
        }
        let mut manifest = self.manifest.clone();
        manifest.target_truth = Some(PathBuf::from("target_truth.fsda"));
        let path = dir.join("manifest.json");
        manifest.save(&path)?;
        Ok(path)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || std * rng.sample::<f64, _>(StandardNormal))
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let v = gaussian_vec(rng, n, 1.0);
    let norm = v.dot(&v).sqrt().max(1e-12);
    v / norm
}

/// Affine map of latent cluster space belonging to one domain.
#[derive(Clone)]
struct DomainTransform {
    rotation: Array2<f64>,
    translation: Array1<f64>,
    noise: f64,
}

impl DomainTransform {
    fn draw(rng: &mut ChaCha8Rng, dim: usize, shift: DomainShift) -> Self {
        let mut rotation = Array2::eye(dim);
        if dim >= 2 {
            for _ in 0..2 {
                let i = rng.random_range(0..dim);
                let mut j = rng.random_range(0..dim - 1);
                if j >= i {
                    j += 1;
                }
                let angle = if rng.random::<bool>() { shift.rotation } else { -shift.rotation };
                let mut g = Array2::eye(dim);
                g[[i, i]] = angle.cos();
                g[[j, j]] = angle.cos();
                g[[i, j]] = -angle.sin();
                g[[j, i]] = angle.sin();
                rotation = g.dot(&rotation);
            }
        }
        let translation = unit_vec(rng, dim) * shift.translation;
        DomainTransform { rotation, translation, noise: shift.noise }
    }
}

/// Class centers at pairwise distance exactly `separation` (random orthonormal
/// directions scaled by `separation / sqrt(2)`) when `k <= dim`; otherwise
/// Gaussian centers at that expected distance.
fn class_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, separation: f64) -> Vec<Array1<f64>> {
    if k > dim {
        let std = separation / (2.0 * dim as f64).sqrt();
        return (0..k).map(|_| gaussian_vec(rng, dim, std)).collect();
    }
    orthonormal_rows(rng, k, dim).into_iter().map(|u| u * (separation / std::f64::consts::SQRT_2)).collect()
}

/// `k <= dim` random orthonormal vectors (Gram-Schmidt on Gaussian draws).
fn orthonormal_rows(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for u in &basis {
            let proj = v.dot(u);
            v.scaled_add(-proj, u);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Fixed random view of the latent space: `tanh(map * h) + noise`.
struct Backbone {
    map: Array2<f64>,
    noise: f64,
}

impl Backbone {
    fn view(&self, h: &Array1<f64>, rng: &mut ChaCha8Rng) -> Vec<f32> {
        self.map.dot(h).iter().map(|&v| (v.tanh() + self.noise * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
    }
}

struct Domain {
    id: String,
    role: DomainRole,
    per_class: usize,
    transform: DomainTransform,
}

/// Generates the benchmark in memory. Identical configs give identical bytes.
pub fn generate(config: &SynthConfig) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.feature_dim;
    let k = config.class_count;

    let centers = class_centers(&mut rng, k, dim, config.class_separation);

    let backbones: Vec<Backbone> = (0..config.backbone_count)
        .map(|_| {
            let map = if config.bilinear {
                // Positive diagonal: each coordinate keeps its sign.
                Array2::from_diag(&Array1::from_shape_simple_fn(dim, || rng.random_range(0.8..1.6)))
            } else {
                // Random rotation with per-axis gains in [0.6, 1.4]: invertible
                // and well conditioned, so no view loses the class structure.
                let axes = orthonormal_rows(&mut rng, dim, dim);
                let mut map = Array2::zeros((dim, dim));
                for (mut row, axis) in map.rows_mut().into_iter().zip(axes) {
                    row.assign(&(axis * rng.random_range(0.6..1.4)));
                }
                map
            };
            Backbone { map, noise: config.view_noise }
        })
        .collect();

    let mut domains: Vec<Domain> = (0..config.source_domain_count)
        .map(|s| Domain {
            id: format!("source{s}"),
            role: DomainRole::Source,
            per_class: config.samples_per_class_per_domain,
            transform: DomainTransform::draw(&mut rng, dim, config.source_shift),
        })
        .collect();
    let target_transform = DomainTransform::draw(&mut rng, dim, config.target_shift);
    if config.labeled_target_per_class > 0 {
        domains.push(Domain {
            id: "target_labeled".into(),
            role: DomainRole::TargetLabeled,
            per_class: config.labeled_target_per_class,
            transform: target_transform.clone(),
        });
    }
    domains.push(Domain {
        id: "target".into(),
        role: DomainRole::TargetUnlabeled,
        per_class: config.samples_per_class_per_domain,
        transform: target_transform,
    });

    let backbone_ids: Vec<String> = (0..config.backbone_count).map(|b| format!("bb{b}")).collect();
    let mut tables = Vec::with_capacity(domains.len());
    let mut entries = Vec::with_capacity(domains.len());
    let mut truth = Vec::new();
    for domain in &domains {
        let n = domain.per_class * k;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut views: Vec<Vec<f32>> = vec![Vec::with_capacity(n * dim); backbones.len()];
        for &label in &labels {
            let latents = if config.bilinear {
                bilinear_latents(&mut rng, config, &domain.transform, label)
            } else {
                let t = &domain.transform;
                let h = t.rotation.dot(&centers[label])
                    + &t.translation
                    + gaussian_vec(&mut rng, dim, config.cluster_std)
                    + gaussian_vec(&mut rng, dim, t.noise);
                vec![h; backbones.len()]
            };
            for ((view, backbone), h) in views.iter_mut().zip(&backbones).zip(&latents) {
                view.extend(backbone.view(h, &mut rng));
            }
        }
        let stored_labels: Vec<i32> = if domain.role == DomainRole::TargetUnlabeled {
            truth = labels.clone();
            vec![crate::UNLABELED; n]
        } else {
            labels.iter().map(|&l| l as i32).collect()
        };
        let row = views
            .into_iter()
            .zip(&backbone_ids)
            .map(|(v, b)| {
                let features = Array2::from_shape_vec((n, dim), v).expect("generated rows");
                Ok(FeatureTable::new(features, stored_labels.clone(), k)?.with_ids(&domain.id, b))
            })
            .collect::<Result<Vec<_>>>()?;
        tables.push(row);
        entries.push(DomainEntry {
            id: domain.id.clone(),
            role: domain.role,
            files: backbone_ids.iter().map(|b| (b.clone(), PathBuf::from(format!("{}.{b}.fsda", domain.id)))).collect(),
        });
    }

    let noisy_pseudo =
        (config.pseudo_label_noise > 0.0).then(|| corrupt_labels(&truth, config.pseudo_label_noise, k, &mut rng));

    Ok(SyntheticBenchmark { manifest: DatasetManifest::new(k, backbone_ids, entries), tables, truth, noisy_pseudo })
}

/// One latent vector per backbone. Backbones 0 and 1 carry the signed
/// coordinates `a` and `b` in slot 0, and the class is `a * b > 0`; every
/// other slot, and every further backbone, is class-independent nuisance.
fn bilinear_latents(rng: &mut ChaCha8Rng, config: &SynthConfig, t: &DomainTransform, label: usize) -> Vec<Array1<f64>> {
    let dim = config.feature_dim;
    let s0: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let s1 = if label == 1 { s0 } else { -s0 };
    let signals = [s0, s1];
    (0..config.backbone_count)
        .map(|b| {
            let mut h = gaussian_vec(rng, dim, config.cluster_std) + gaussian_vec(rng, dim, t.noise);
            // Translation moves nuisance slots only; slot 0 keeps its sign.
            for j in 1..dim {
                h[j] += t.translation[j];
            }
            h[0] = match signals.get(b) {
                Some(&s) => s * rng.random_range(0.5..1.0),
                None => rng.sample::<f64, _>(StandardNormal) * config.cluster_std,
            };
            h
        })
        .collect()
}

/// Flips exactly `round(rate * n)` labels, each to a uniformly drawn other class.
pub fn corrupt_labels(labels: &[usize], rate: f64, class_count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = labels.to_vec();
    let flips = (rate * labels.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(rng);
    for &i in &idx[..flips.min(labels.len())] {
        let mut other = rng.random_range(0..class_count - 1);
        if other >= labels[i] {
            other += 1;
        }
        out[i] = other;
    }
    out
}
