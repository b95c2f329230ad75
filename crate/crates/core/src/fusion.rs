//! Bilinear pooling of two backbones' features and the classifier input specs
//! of a fusion bank (every single backbone plus every unordered pair).

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub signed_sqrt: bool,
    pub l2_normalize: bool,
    /// Outer products longer than this are sketched down to `max_dim` entries.
    pub max_dim: usize,
    pub projection_seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { signed_sqrt: true, l2_normalize: true, max_dim: 16384, projection_seed: 0 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_dim == 0 {
            return Err(Error::config("fusion max_dim must be >= 1"));
        }
        Ok(())
    }

    /// Length of the fused vector for inputs of sizes `d1` and `d2`.
    pub fn output_dim(&self, d1: usize, d2: usize) -> usize {
        (d1 * d2).min(self.max_dim)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sparse sign projection: entry `k` lands in one hashed bucket with a hashed sign.
fn sketch(z: &[f64], out_dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; out_dim];
    let key = splitmix64(seed);
    for (k, &v) in z.iter().enumerate() {
        let h = splitmix64(key ^ splitmix64(k as u64));
        let bucket = (h % out_dim as u64) as usize;
        if h >> 63 == 1 {
            out[bucket] -= v;
        } else {
            out[bucket] += v;
        }
    }
    out
}

/// Flattened outer product `x y^T` (row-major), sketched when longer than
/// `max_dim`, then signed square root and L2 normalization as configured.
pub fn bilinear_fuse(x: &[f64], y: &[f64], config: &FusionConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::dimension("bilinear_fuse needs non-empty inputs"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("bilinear_fuse input is not finite".into()));
    }
    let mut z = Vec::with_capacity(x.len() * y.len());
    for &a in x {
        z.extend(y.iter().map(|&b| a * b));
    }
    if z.len() > config.max_dim {
        z = sketch(&z, config.max_dim, config.projection_seed);
    }
    if config.signed_sqrt {
        for v in &mut z {
            *v = v.signum() * v.abs().sqrt();
        }
    }
    if config.l2_normalize {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut z {
                *v /= norm;
            }
        }
    }
    Ok(z)
}

/// Row-wise [`bilinear_fuse`] of two tables describing the same samples.
pub fn fuse_tables(a: &FeatureTable, b: &FeatureTable, config: &FusionConfig) -> Result<FeatureTable> {
    if a.sample_count() != b.sample_count() {
        return Err(Error::Alignment(format!("tables have {} and {} rows", a.sample_count(), b.sample_count())));
    }
    if a.labels() != b.labels() {
        return Err(Error::Alignment("tables disagree on labels".into()));
    }
    if a.class_count() != b.class_count() {
        return Err(Error::Alignment("tables disagree on class_count".into()));
    }
    let out_dim = config.output_dim(a.feature_dim(), b.feature_dim());
    let mut fused = Vec::with_capacity(a.sample_count() * out_dim);
    let mut xa = Vec::with_capacity(a.feature_dim());
    let mut xb = Vec::with_capacity(b.feature_dim());
    for i in 0..a.sample_count() {
        xa.clear();
        xa.extend(a.row(i).iter().map(|&v| f64::from(v)));
        xb.clear();
        xb.extend(b.row(i).iter().map(|&v| f64::from(v)));
        fused.extend(bilinear_fuse(&xa, &xb, config)?.into_iter().map(|v| v as f32));
    }
    let features = Array2::from_shape_vec((a.sample_count(), out_dim), fused).expect("row lengths match");
    let table = FeatureTable::new(features, a.labels().to_vec(), a.class_count())?;
    Ok(table.with_ids(a.domain_id.clone(), format!("{}+{}", a.backbone_id, b.backbone_id)))
}

/// Input of one classifier in a fusion bank, by backbone index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputSpec {
    Single(usize),
    /// First index is always the smaller one.
    Pair(usize, usize),
}

impl InputSpec {
    pub fn name(&self, backbones: &[String]) -> String {
        match *self {
            InputSpec::Single(i) => backbones[i].clone(),
            InputSpec::Pair(i, j) => format!("{}+{}", backbones[i], backbones[j]),
        }
    }
}

impl fmt::Display for InputSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSpec::Single(i) => write!(f, "{i}"),
            InputSpec::Pair(i, j) => write!(f, "{i}+{j}"),
        }
    }
}

/// `B` singles followed by the `B(B-1)/2` unordered pairs in lexicographic order.
pub fn enumerate_pairs(backbones: &[String]) -> Result<Vec<InputSpec>> {
    if backbones.is_empty() {
        return Err(Error::config("no backbones to enumerate"));
    }
    for (i, b) in backbones.iter().enumerate() {
        if backbones[..i].contains(b) {
            return Err(Error::config(format!("duplicate backbone {b:?}")));
        }
    }
    let n = backbones.len();
    let singles = (0..n).map(InputSpec::Single);
    let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| InputSpec::Pair(i, j)));
    Ok(singles.chain(pairs).collect())
}
