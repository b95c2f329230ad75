//! Nearest-centroid classifier over per-class prototypes.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::binio::{checked_len, u32_dim, Reader, Writer, PROTOTYPE_MAGIC};
use crate::error::{Error, Result};
use crate::linear_model::softmax_in_place;

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    /// `class_count x feature_dim`; rows of empty classes are zero and unused.
    pub centroids: Array2<f64>,
    /// Rows averaged into each centroid; zero marks an empty class.
    pub counts: Vec<usize>,
    pub temperature: f64,
}

/// Centroid of class `c` is the mean of the rows labeled `c`.
pub fn build_prototypes(
    features: ArrayView2<'_, f32>,
    labels: &[usize],
    class_count: usize,
    temperature: f64,
) -> Result<PrototypeSet> {
    if labels.is_empty() {
        return Err(Error::contract("prototypes need at least one labeled sample"));
    }
    if features.nrows() != labels.len() {
        return Err(Error::dimension("one label per feature row"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    let mut centroids = Array2::<f64>::zeros((class_count, features.ncols()));
    let mut counts = vec![0usize; class_count];
    for (row, &label) in features.rows().into_iter().zip(labels) {
        if label >= class_count {
            return Err(Error::contract(format!("label {label} outside {class_count} classes")));
        }
        counts[label] += 1;
        let mut centroid = centroids.row_mut(label);
        for (c, &v) in centroid.iter_mut().zip(row) {
            *c += f64::from(v);
        }
    }
    for (mut centroid, &n) in centroids.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            centroid /= n as f64;
        }
    }
    if centroids.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite centroid".into()));
    }
    Ok(PrototypeSet { centroids, counts, temperature })
}

impl PrototypeSet {
    pub fn class_count(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn is_empty_class(&self, class: usize) -> bool {
        self.counts[class] == 0
    }

    /// Softmax of `-||x - centroid||^2 / temperature` over non-empty classes;
    /// empty classes get probability 0.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim() {
            return Err(Error::dimension(format!("query dim {} vs prototype dim {}", x.len(), self.feature_dim())));
        }
        let live: Vec<usize> = (0..self.class_count()).filter(|&c| !self.is_empty_class(c)).collect();
        if live.is_empty() {
            return Err(Error::contract("every class is empty"));
        }
        let mut scores: Vec<f64> = live
            .iter()
            .map(|&c| {
                let d2: f64 = self.centroids.row(c).iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                -d2 / self.temperature
            })
            .collect();
        softmax_in_place(&mut scores);
        let mut probs = vec![0.0; self.class_count()];
        for (&c, p) in live.iter().zip(scores) {
            probs[c] = p;
        }
        Ok(probs)
    }

    pub fn predict_table(&self, features: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((features.nrows(), self.class_count()));
        let mut x = Vec::with_capacity(features.ncols());
        for (i, row) in features.rows().into_iter().enumerate() {
            x.clear();
            x.extend(row.iter().map(|&v| f64::from(v)));
            for (o, p) in out.row_mut(i).iter_mut().zip(self.predict(&x)?) {
                *o = p;
            }
        }
        Ok(out)
    }

    /// `FSDP`: header as `FSDC`, then f32 centroids, f32 counts, f32 temperature.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(PROTOTYPE_MAGIC);
        w.u32(u32_dim(self.class_count(), "class_count")?);
        w.u32(u32_dim(self.feature_dim(), "feature_dim")?);
        for &v in self.centroids.iter() {
            w.f32(v as f32);
        }
        for &n in &self.counts {
            w.f32(n as f32);
        }
        w.f32(self.temperature as f32);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PROTOTYPE_MAGIC)?;
        r.version()?;
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        r.expect_payload(checked_len(&[classes as u64, dim as u64 + 1, 4])? + 4)?;
        let centroids = r.f32s(classes * dim)?.into_iter().map(f64::from).collect();
        let counts = r
            .f32s(classes)?
            .into_iter()
            .map(|c| {
                if c >= 0.0 && c.fract() == 0.0 {
                    Ok(c as usize)
                } else {
                    Err(Error::data(format!("invalid class count {c}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let temperature = f64::from(r.f32s(1)?[0]);
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::data("non-positive temperature"));
        }
        let centroids = Array2::from_shape_vec((classes, dim), centroids).map_err(|e| Error::format(e.to_string()))?;
        Ok(PrototypeSet { centroids, counts, temperature })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
