//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance suite. Everything here is written
//! with plain loops over `Vec`s, deliberately avoiding the library's own
//! helpers, so agreement means something.

#![allow(dead_code)]

use fsda::{Batch, FeatureTable, LinearClassifier, SampleKind, TrainConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability matrix with rows summing to one.
pub fn random_probs(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.01..1.0));
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

pub fn random_table(rng: &mut impl Rng, n: usize, d: usize, classes: usize, unlabeled_rate: f64) -> FeatureTable {
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0f32..3.0));
    let labels = (0..n)
        .map(|_| if rng.random_bool(unlabeled_rate) { -1 } else { rng.random_range(0..classes) as i32 })
        .collect();
    FeatureTable::new(features, labels, classes).unwrap()
}

pub fn random_classifier(rng: &mut impl Rng, classes: usize, dim: usize, scale: f64) -> LinearClassifier {
    LinearClassifier::new(
        Array2::from_shape_fn((classes, dim), |_| rng.random_range(-scale..scale)),
        Array1::from_shape_fn(classes, |_| rng.random_range(-scale..scale)),
    )
    .unwrap()
}

/// A random mixed batch: features, labels and kinds.
pub struct OwnedBatch {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub kinds: Vec<SampleKind>,
}

impl OwnedBatch {
    pub fn random(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Self {
        let kinds = [SampleKind::SourceLabeled, SampleKind::TargetLabeled, SampleKind::TargetPseudo];
        OwnedBatch {
            features: Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0f32..2.0)),
            labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
            kinds: (0..n).map(|_| kinds[rng.random_range(0..3)]).collect(),
        }
    }

    pub fn view(&self) -> Batch<'_> {
        Batch { features: self.features.view(), labels: &self.labels, kinds: &self.kinds }
    }
}

/// The mixed objective evaluated from scratch: mean over rows of CE (labeled)
/// or `(1 - p^q)/q` (pseudo), plus `0.5 * wd * ||W||^2`.
pub fn objective_oracle(clf: &LinearClassifier, batch: &OwnedBatch, cfg: &TrainConfig) -> f64 {
    let (classes, dim) = clf.weights.dim();
    let mut total = 0.0;
    for i in 0..batch.labels.len() {
        let logits: Vec<f64> = (0..classes)
            .map(|c| clf.bias[c] + (0..dim).map(|j| clf.weights[[c, j]] * batch.features[[i, j]] as f64).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let p = ((logits[batch.labels[i]] - max).exp() / z).max(1e-12);
        total += match batch.kinds[i] {
            SampleKind::TargetPseudo if cfg.pseudo_loss == fsda::PseudoLoss::Gce => {
                (1.0 - p.powf(cfg.gce_q)) / cfg.gce_q
            }
            _ => -p.ln(),
        };
    }
    let decay: f64 = clf.weights.iter().map(|w| w * w).sum();
    total / batch.labels.len() as f64 + 0.5 * cfg.weight_decay * decay
}

/// Central finite-difference gradient of [`objective_oracle`] with step `h`,
/// flattened as `[weights row-major..., bias...]`.
pub fn finite_difference_grad(clf: &LinearClassifier, batch: &OwnedBatch, cfg: &TrainConfig, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = clf.clone();
    for k in 0..clf.weights.len() {
        let (c, j) = (k / clf.weights.ncols(), k % clf.weights.ncols());
        let w0 = clf.weights[[c, j]];
        probe.weights[[c, j]] = w0 + h;
        let up = objective_oracle(&probe, batch, cfg);
        probe.weights[[c, j]] = w0 - h;
        let down = objective_oracle(&probe, batch, cfg);
        probe.weights[[c, j]] = w0;
        out.push((up - down) / (2.0 * h));
    }
    for c in 0..clf.bias.len() {
        let b0 = clf.bias[c];
        probe.bias[c] = b0 + h;
        let up = objective_oracle(&probe, batch, cfg);
        probe.bias[c] = b0 - h;
        let down = objective_oracle(&probe, batch, cfg);
        probe.bias[c] = b0;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Random gradient-check instance `k`: classifier, batch and config, all
/// drawn from one seeded stream.
pub fn gradient_instance(k: u64) -> (LinearClassifier, OwnedBatch, TrainConfig) {
    let mut r = rng(0x6_7261_6400 + k);
    let classes = r.random_range(2..6);
    let dim = r.random_range(1..7);
    let n = r.random_range(1..9);
    let clf = random_classifier(&mut r, classes, dim, 1.0);
    let batch = OwnedBatch::random(&mut r, n, dim, classes);
    let cfg = TrainConfig {
        gce_q: r.random_range(0.05..=1.0),
        weight_decay: if r.random_bool(0.5) { r.random_range(0.0..0.1) } else { 0.0 },
        ..TrainConfig::default()
    };
    (clf, batch, cfg)
}

/// Worst norm-wise relative error of the analytic gradient over `count`
/// random instances, against central differences with step `h`.
pub fn worst_gradient_error(count: u64, h: f64) -> f64 {
    (0..count)
        .map(|k| {
            let (clf, batch, cfg) = gradient_instance(k);
            let (_, g) = fsda::mixed_loss_grad(&clf, &batch.view(), &cfg).unwrap();
            let analytic: Vec<f64> = g.weights.iter().chain(g.bias.iter()).copied().collect();
            relative_error(&analytic, &finite_difference_grad(&clf, &batch, &cfg, h))
        })
        .fold(0.0, f64::max)
}

/// Outer product, signed square root and L2 normalization by scalar loops.
pub fn fuse_oracle(x: &[f64], y: &[f64], signed_sqrt: bool, l2: bool) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() * y.len());
    for &a in x {
        for &b in y {
            let v = a * b;
            z.push(if signed_sqrt { v.signum() * v.abs().sqrt() } else { v });
        }
    }
    if l2 {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut z {
                *v /= norm;
            }
        }
    }
    z
}

/// Per-class mean of rows by scalar loops; `None` for empty classes.
pub fn centroid_oracle(rows: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<Option<Vec<f64>>> {
    (0..classes)
        .map(|c| {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                return None;
            }
            let dim = members[0].len();
            Some((0..dim).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64).collect())
        })
        .collect()
}

/// Index of the nearest non-empty centroid and whether the runner-up is
/// within `tie_margin` (ambiguous queries are reported so callers can skip them).
pub fn nearest_centroid(centroids: &[Option<Vec<f64>>], x: &[f64], tie_margin: f64) -> (usize, bool) {
    let mut d: Vec<(f64, usize)> = centroids
        .iter()
        .enumerate()
        .filter_map(|(c, m)| m.as_ref().map(|m| (m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), c)))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tie = d.len() > 1 && d[1].0 - d[0].0 <= tie_margin;
    (d[0].1, tie)
}

/// Elementwise mean of matrices by scalar loops.
pub fn mean_oracle(ms: &[Array2<f64>]) -> Vec<Vec<f64>> {
    let (r, c) = ms[0].dim();
    (0..r).map(|i| (0..c).map(|j| ms.iter().map(|m| m[[i, j]]).sum::<f64>() / ms.len() as f64).collect()).collect()
}

/// `(mean_acc_all, mean_acc_classes, confusion)` by direct counting.
pub fn metrics_oracle(pred: &[usize], truth: &[usize], classes: usize) -> (f64, f64, Vec<Vec<u64>>) {
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let mut recalls = Vec::new();
    for c in 0..classes {
        let support = truth.iter().filter(|&&t| t == c).count();
        if support > 0 {
            let hit = pred.iter().zip(truth).filter(|(&p, &t)| t == c && p == c).count();
            recalls.push(hit as f64 / support as f64);
        }
    }
    (correct as f64 / pred.len() as f64, recalls.iter().sum::<f64>() / recalls.len() as f64, confusion)
}
