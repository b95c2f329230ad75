//! Softmax linear classifier trained by mini-batch SGD on a mix of labeled
//! rows (cross entropy) and pseudo-labeled target rows (generalized cross
//! entropy, `(1 - p_y^q) / q`).
//!
//! Parameters live in f64 so analytic gradients can be checked against finite
//! differences; the `FSDC` checkpoint stores them as f32.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{checked_len, u32_dim, Reader, Writer, CLASSIFIER_MAGIC};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside logs and powers.
pub const PROB_EPSILON: f64 = 1e-12;

/// How a training row enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleKind {
    SourceLabeled,
    /// Loss-wise identical to a source row; replicated when sampling.
    TargetLabeled,
    TargetPseudo,
}

impl SampleKind {
    fn is_pseudo(self) -> bool {
        self == SampleKind::TargetPseudo
    }
}

/// Loss used for pseudo-labeled rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLoss {
    #[default]
    Gce,
    Ce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Exponent of the generalized cross entropy, in (0, 1].
    pub gce_q: f64,
    pub pseudo_loss: PseudoLoss,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of `0.5 * ||W||^2`; the bias is not decayed.
    pub weight_decay: f64,
    /// Copies of each labeled target row in the sampling pool.
    pub target_oversample: usize,
    pub seed: u64,
    /// Start from all-zero parameters instead of the seeded uniform init.
    pub zero_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gce_q: 0.7,
            pseudo_loss: PseudoLoss::Gce,
            learning_rate: 1.0,
            epochs: 100,
            batch_size: 32,
            weight_decay: 1e-4,
            target_oversample: 10,
            seed: 0,
            zero_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gce_q > 0.0 && self.gce_q <= 1.0) {
            return Err(Error::config(format!("gce_q must be in (0, 1], got {}", self.gce_q)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.target_oversample == 0 {
            return Err(Error::config("target_oversample must be positive"));
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn check_label(probs: &[f64], label: usize) -> Result<f64> {
    probs.get(label).copied().ok_or_else(|| Error::contract(format!("label {label} outside {} classes", probs.len())))
}

pub fn ce_loss(probs: &[f64], label: usize) -> Result<f64> {
    let p = check_label(probs, label)?;
    Ok(-p.max(PROB_EPSILON).ln())
}

pub fn gce_loss(probs: &[f64], label: usize, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::config(format!("gce q must be in (0, 1], got {q}")));
    }
    let p = check_label(probs, label)?;
    Ok((1.0 - p.max(PROB_EPSILON).powf(q)) / q)
}

/// Per-row loss and the scale applied to `p - onehot(y)` in its logit gradient.
///
/// d/dz of `-ln p_y` is `p - e_y`; d/dz of `(1 - p_y^q)/q` is `p_y^q (p - e_y)`.
/// Below the epsilon floor the loss is constant, so its gradient vanishes.
fn row_loss(p_y: f64, pseudo: bool, config: &TrainConfig) -> (f64, f64) {
    let floored = p_y.max(PROB_EPSILON);
    let active = if p_y >= PROB_EPSILON { 1.0 } else { 0.0 };
    if pseudo && config.pseudo_loss == PseudoLoss::Gce {
        let pq = floored.powf(config.gce_q);
        ((1.0 - pq) / config.gce_q, active * pq)
    } else {
        (-floored.ln(), active)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// `class_count x input_dim`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearClassifier {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dimension(format!("{} weight rows but {} biases", weights.nrows(), bias.len())));
        }
        if weights.nrows() < 2 || weights.ncols() == 0 {
            return Err(Error::dimension("classifier needs >= 2 classes and >= 1 input"));
        }
        let c = LinearClassifier { weights, bias };
        if !c.is_finite() {
            return Err(Error::Numeric("non-finite classifier parameters".into()));
        }
        Ok(c)
    }

    pub fn zeros(class_count: usize, input_dim: usize) -> Self {
        LinearClassifier { weights: Array2::zeros((class_count, input_dim)), bias: Array1::zeros(class_count) }
    }

    /// Weights uniform in `(-a, a)` with `a = 1/sqrt(input_dim)`, zero bias.
    pub fn random(class_count: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (input_dim as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((class_count, input_dim), || rng.random_range(-a..a));
        LinearClassifier { weights, bias: Array1::zeros(class_count) }
    }

    pub fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn logits(&self, features: ArrayView2<'_, f32>) -> Array2<f64> {
        let x = features.mapv(f64::from);
        let logits = x.dot(&self.weights.t()) + &self.bias;
        // Row slices below need C order whatever the input layout was.
        if logits.is_standard_layout() {
            logits
        } else {
            logits.as_standard_layout().into_owned()
        }
    }

    /// Parameters rounded to the f32 precision of the checkpoint format.
    pub fn to_f32_precision(&self) -> Self {
        LinearClassifier { weights: self.weights.mapv(|v| v as f32 as f64), bias: self.bias.mapv(|v| v as f32 as f64) }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(CLASSIFIER_MAGIC);
        w.u32(u32_dim(self.class_count(), "class_count")?);
        w.u32(u32_dim(self.input_dim(), "input_dim")?);
        for &v in self.weights.iter().chain(self.bias.iter()) {
            w.f32(v as f32);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CLASSIFIER_MAGIC)?;
        r.version()?;
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        r.expect_payload(checked_len(&[classes as u64, dim as u64 + 1, 4])?)?;
        let weights = r.f32s(classes * dim)?.into_iter().map(f64::from).collect();
        let bias = r.f32s(classes)?.into_iter().map(f64::from).collect();
        let weights = Array2::from_shape_vec((classes, dim), weights).map_err(|e| Error::format(e.to_string()))?;
        LinearClassifier::new(weights, Array1::from_vec(bias)).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Row-wise softmax of `features * W^T + b`.
pub fn predict_proba(classifier: &LinearClassifier, features: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
    if features.ncols() != classifier.input_dim() {
        return Err(Error::dimension(format!(
            "features have dim {}, classifier expects {}",
            features.ncols(),
            classifier.input_dim()
        )));
    }
    let mut probs = classifier.logits(features);
    for mut row in probs.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    Ok(probs)
}

/// A mini-batch: one kind flag and one class label per feature row.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f32>,
    pub labels: &'a [usize],
    pub kinds: &'a [SampleKind],
}

/// Mean per-row loss (CE for labeled rows, GCE or CE for pseudo rows per
/// `config.pseudo_loss`) plus weight decay, with its exact gradient.
pub fn mixed_loss_grad(
    classifier: &LinearClassifier,
    batch: &Batch<'_>,
    config: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let n = batch.features.nrows();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    if batch.labels.len() != n || batch.kinds.len() != n {
        return Err(Error::dimension("batch labels/kinds length differs from row count"));
    }
    if batch.features.ncols() != classifier.input_dim() {
        return Err(Error::dimension("batch feature dim differs from classifier input"));
    }
    let classes = classifier.class_count();
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {l} outside {classes} classes")));
    }

    let mut scale = classifier.logits(batch.features);
    let mut loss = 0.0;
    for ((mut row, &y), &kind) in scale.rows_mut().into_iter().zip(batch.labels).zip(batch.kinds) {
        let row = row.as_slice_mut().expect("standard layout");
        softmax_in_place(row);
        let (l, coeff) = row_loss(row[y], kind.is_pseudo(), config);
        loss += l;
        row[y] -= 1.0;
        for g in row.iter_mut() {
            *g *= coeff;
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;

    let x = batch.features.mapv(f64::from);
    let mut weights = scale.t().dot(&x) * inv_n;
    let bias = scale.sum_axis(Axis(0)) * inv_n;
    if config.weight_decay > 0.0 {
        loss += 0.5 * config.weight_decay * classifier.weights.iter().map(|w| w * w).sum::<f64>();
        weights.scaled_add(config.weight_decay, &classifier.weights);
    }
    Ok((loss, Gradients { weights, bias }))
}

/// Rows for one classifier, each with a class label and a [`SampleKind`].
#[derive(Clone, Debug)]
pub struct TrainingSet {
    dim: usize,
    class_count: usize,
    features: Vec<f32>,
    labels: Vec<usize>,
    kinds: Vec<SampleKind>,
}

impl TrainingSet {
    pub fn new(dim: usize, class_count: usize) -> Self {
        TrainingSet { dim, class_count, features: Vec::new(), labels: Vec::new(), kinds: Vec::new() }
    }

    pub fn add(&mut self, features: ArrayView2<'_, f32>, labels: &[usize], kind: SampleKind) -> Result<()> {
        if features.ncols() != self.dim {
            return Err(Error::dimension(format!("rows have dim {}, set expects {}", features.ncols(), self.dim)));
        }
        if features.nrows() != labels.len() {
            return Err(Error::dimension("one label per row"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::contract(format!("label {l} outside {} classes", self.class_count)));
        }
        self.features.extend(features.iter());
        self.labels.extend_from_slice(labels);
        self.kinds.extend(std::iter::repeat_n(kind, labels.len()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn kinds(&self) -> &[SampleKind] {
        &self.kinds
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.len(), self.dim), &self.features).expect("consistent buffer")
    }

    /// Row indices drawn from in one epoch; labeled target rows appear
    /// `oversample` times, every other row once.
    pub fn sampling_pool(&self, oversample: usize) -> Vec<usize> {
        let mut pool = Vec::with_capacity(self.len());
        for (i, kind) in self.kinds.iter().enumerate() {
            let copies = if *kind == SampleKind::TargetLabeled { oversample } else { 1 };
            pool.extend(std::iter::repeat_n(i, copies));
        }
        pool
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f32>, Vec<usize>, Vec<SampleKind>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
        }
        let x = Array2::from_shape_vec((idx.len(), self.dim), x).expect("gathered rows");
        (x, idx.iter().map(|&i| self.labels[i]).collect(), idx.iter().map(|&i| self.kinds[i]).collect())
    }
}

/// The random stream private to one classifier.
pub fn classifier_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains with plain SGD. Shuffles and initialization come from
/// `classifier_rng(config.seed, stream)`, so the result depends only on the
/// inputs and never on which thread runs it.
pub fn train_classifier(
    data: &TrainingSet,
    config: &TrainConfig,
    init: Option<LinearClassifier>,
    stream: u64,
) -> Result<LinearClassifier> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let mut rng = classifier_rng(config.seed, stream);
    let mut clf = match init {
        Some(c) => {
            if c.input_dim() != data.dim() || c.class_count() != data.class_count() {
                return Err(Error::dimension("initial classifier does not match training data"));
            }
            c
        }
        None if config.zero_init => LinearClassifier::zeros(data.class_count(), data.dim()),
        None => LinearClassifier::random(data.class_count(), data.dim(), &mut rng),
    };

    let mut pool = data.sampling_pool(config.target_oversample);
    for epoch in 0..config.epochs {
        pool.shuffle(&mut rng);
        for chunk in pool.chunks(config.batch_size) {
            let (x, labels, kinds) = data.gather(chunk);
            let batch = Batch { features: x.view(), labels: &labels, kinds: &kinds };
            let (loss, grad) = mixed_loss_grad(&clf, &batch, config)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("loss is {loss}") });
            }
            clf.weights.scaled_add(-config.learning_rate, &grad.weights);
            clf.bias.scaled_add(-config.learning_rate, &grad.bias);
        }
        if !clf.is_finite() {
            return Err(Error::Training { epoch, message: "non-finite parameters".into() });
        }
    }
    Ok(clf)
}
