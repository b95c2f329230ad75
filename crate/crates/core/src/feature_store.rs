//! Feature tables, the `FSDA` file format and the experiment manifest.
//!
//! An `FSDA` file is little-endian:
//!
//! ```text
//! magic "FSDA" | version u16 = 1 | flags u16 (bit 0: labels present)
//! class_count u32 | sample_count u64 | feature_dim u32
//! sample_count * feature_dim f32, row-major
//! sample_count i32 labels           (only when bit 0 is set)
//! ```
//!
//! A table whose labels are all [`UNLABELED`] is written without the label
//! block and reads back as all-unlabeled.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::binio::{checked_len, u32_dim, Reader, Writer, FEATURE_MAGIC};
use crate::error::{Error, Result};

/// Label sentinel for rows without a class.
pub const UNLABELED: i32 = -1;

const LABELS_PRESENT: u16 = 1;

/// One backbone's features for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    /// Not stored in the file; filled in when loaded through a manifest.
    pub backbone_id: String,
    pub domain_id: String,
    features: Array2<f32>,
    labels: Vec<i32>,
    class_count: usize,
}

impl FeatureTable {
    pub fn new(features: Array2<f32>, labels: Vec<i32>, class_count: usize) -> Result<Self> {
        // Stored row-major so rows can be handed out as slices.
        let features =
            if features.is_standard_layout() { features } else { features.as_standard_layout().into_owned() };
        let table =
            FeatureTable { backbone_id: String::new(), domain_id: String::new(), features, labels, class_count };
        table.validate()?;
        Ok(table)
    }

    pub fn with_ids(mut self, domain_id: impl Into<String>, backbone_id: impl Into<String>) -> Self {
        self.domain_id = domain_id.into();
        self.backbone_id = backbone_id.into();
        self
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = self.features.dim();
        if n == 0 || d == 0 {
            return Err(Error::data(format!("table must be non-empty, got {n}x{d}")));
        }
        if self.class_count < 2 {
            return Err(Error::data(format!("class_count must be >= 2, got {}", self.class_count)));
        }
        if self.labels.len() != n {
            return Err(Error::dimension(format!("{} labels for {n} rows", self.labels.len())));
        }
        if let Some((row, &l)) =
            self.labels.iter().enumerate().find(|(_, &l)| l != UNLABELED && (l < 0 || l as usize >= self.class_count))
        {
            return Err(Error::data(format!("row {row}: label {l} outside [-1, {})", self.class_count)));
        }
        if let Some(row) = self.features.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::data(format!("row {row}: non-finite feature value")));
        }
        Ok(())
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sample_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(|&l| l != UNLABELED)
    }

    /// Labels as class ids, or `None` if any row is unlabeled.
    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.labels.iter().map(|&l| if l == UNLABELED { None } else { Some(l as usize) }).collect()
    }

    /// Same rows with every label replaced by [`UNLABELED`].
    pub fn without_labels(&self) -> Self {
        FeatureTable { labels: vec![UNLABELED; self.sample_count()], ..self.clone() }
    }

    /// Scales every row to unit L2 norm; all-zero rows are left as they are.
    pub fn l2_normalized(&self) -> Self {
        let mut features = self.features.clone();
        for mut row in features.rows_mut() {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| (v as f64 / norm) as f32);
            }
        }
        FeatureTable { features, ..self.clone() }
    }

    /// Bit-level equality of features, labels and class count.
    pub fn bitwise_eq(&self, other: &FeatureTable) -> bool {
        self.class_count == other.class_count
            && self.labels == other.labels
            && self.features.dim() == other.features.dim()
            && self.features.iter().zip(other.features.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let labels_present = self.has_labels();
        let mut w = Writer::header(FEATURE_MAGIC);
        w.u16(if labels_present { LABELS_PRESENT } else { 0 });
        w.u32(u32_dim(self.class_count, "class_count")?);
        w.u64(self.sample_count() as u64);
        w.u32(u32_dim(self.feature_dim(), "feature_dim")?);
        for &v in self.features.iter() {
            w.f32(v);
        }
        if labels_present {
            for &l in &self.labels {
                w.i32(l);
            }
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FEATURE_MAGIC)?;
        r.version()?;
        let flags = r.u16()?;
        if flags & !LABELS_PRESENT != 0 {
            return Err(Error::format(format!("unknown flag bits {flags:#06x}")));
        }
        let labels_present = flags & LABELS_PRESENT != 0;
        let class_count = r.u32()? as usize;
        let samples = r.u64()?;
        let dim = r.u32()? as u64;
        let payload = checked_len(&[samples, dim, 4])? + if labels_present { checked_len(&[samples, 4])? } else { 0 };
        r.expect_payload(payload)?;
        let n = samples as usize;
        let values = r.f32s(n * dim as usize)?;
        let labels = if labels_present { r.i32s(n)? } else { vec![UNLABELED; n] };
        let features = Array2::from_shape_vec((n, dim as usize), values).map_err(|e| Error::format(e.to_string()))?;
        debug_assert_eq!(r.position(), bytes.len());
        FeatureTable::new(features, labels, class_count)
    }
}

pub fn load_feature_table(path: impl AsRef<Path>) -> Result<FeatureTable> {
    FeatureTable::from_bytes(&fs::read(path)?)
}

pub fn save_feature_table(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, table.to_bytes()?)?;
    Ok(())
}

/// Row-wise concatenation of tables that share feature dimension and class
/// count. Also returns, for every output row, its `(table index, row)` origin.
pub fn concat_tables(tables: &[&FeatureTable]) -> Result<(FeatureTable, Vec<(usize, usize)>)> {
    let first = tables.first().ok_or_else(|| Error::contract("nothing to concatenate"))?;
    let dim = first.feature_dim();
    for t in tables {
        if t.feature_dim() != dim {
            return Err(Error::dimension(format!(
                "domain {:?} has feature_dim {}, expected {dim}",
                t.domain_id,
                t.feature_dim()
            )));
        }
        if t.class_count != first.class_count {
            return Err(Error::dimension(format!(
                "domain {:?} has class_count {}, expected {}",
                t.domain_id, t.class_count, first.class_count
            )));
        }
    }
    let views: Vec<_> = tables.iter().map(|t| t.features.view()).collect();
    let features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::dimension(e.to_string()))?;
    let labels = tables.iter().flat_map(|t| t.labels.iter().copied()).collect();
    let provenance = tables.iter().enumerate().flat_map(|(i, t)| (0..t.sample_count()).map(move |r| (i, r))).collect();
    let mut merged = FeatureTable::new(features, labels, first.class_count)?;
    merged.backbone_id = first.backbone_id.clone();
    merged.domain_id = "merged_sources".into();
    Ok((merged, provenance))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    TargetUnlabeled,
    TargetLabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub id: String,
    pub role: DomainRole,
    /// Backbone id to feature file; relative paths resolve against the manifest directory.
    pub files: BTreeMap<String, PathBuf>,
}

/// JSON description of an experiment: its domains, backbones and class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_count: usize,
    /// Fixed order; classifier indexing everywhere follows it.
    pub backbones: Vec<String>,
    pub domains: Vec<DomainEntry>,
    /// Labeled copy of the unlabeled target, used only for reporting metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_truth: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(class_count: usize, backbones: Vec<String>, domains: Vec<DomainEntry>) -> Self {
        DatasetManifest { class_count, backbones, domains, target_truth: None, base_dir: PathBuf::new() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest: DatasetManifest = serde_json::from_slice(&fs::read(path)?)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count must be >= 2"));
        }
        if self.backbones.is_empty() {
            return Err(Error::config("manifest lists no backbones"));
        }
        for (i, b) in self.backbones.iter().enumerate() {
            if self.backbones[..i].contains(b) {
                return Err(Error::config(format!("duplicate backbone {b:?}")));
            }
        }
        let count = |role| self.domains.iter().filter(|d| d.role == role).count();
        if count(DomainRole::Source) == 0 {
            return Err(Error::config("manifest needs at least one source domain"));
        }
        if count(DomainRole::TargetUnlabeled) != 1 {
            return Err(Error::config("manifest needs exactly one target_unlabeled domain"));
        }
        if count(DomainRole::TargetLabeled) > 1 {
            return Err(Error::config("manifest allows at most one target_labeled domain"));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if self.domains[..i].iter().any(|o| o.id == d.id) {
                return Err(Error::config(format!("duplicate domain {:?}", d.id)));
            }
            for b in &self.backbones {
                if !d.files.contains_key(b) {
                    return Err(Error::config(format!("domain {:?} has no file for backbone {b:?}", d.id)));
                }
            }
            if let Some(extra) = d.files.keys().find(|k| !self.backbones.contains(k)) {
                return Err(Error::config(format!("domain {:?} lists unknown backbone {extra:?}", d.id)));
            }
        }
        Ok(())
    }

    pub fn backbone_index(&self, backbone_id: &str) -> Result<usize> {
        self.backbones
            .iter()
            .position(|b| b == backbone_id)
            .ok_or_else(|| Error::config(format!("backbone {backbone_id:?} not in manifest")))
    }

    pub fn domains_with_role(&self, role: DomainRole) -> impl Iterator<Item = (usize, &DomainEntry)> {
        self.domains.iter().enumerate().filter(move |(_, d)| d.role == role)
    }
}

/// All tables of a manifest held in memory, indexed `[domain][backbone]`.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    manifest: DatasetManifest,
    tables: Vec<Vec<FeatureTable>>,
    truth: Option<Vec<usize>>,
}

impl FeatureStore {
    /// Reads every file named by the manifest, optionally L2-normalizing rows.
    pub fn load(manifest: &DatasetManifest, normalize: bool) -> Result<Self> {
        manifest.validate()?;
        let mut tables = Vec::with_capacity(manifest.domains.len());
        for domain in &manifest.domains {
            let row = manifest
                .backbones
                .iter()
                .map(|b| {
                    let t = load_feature_table(manifest.resolve(&domain.files[b]))?;
                    Ok(t.with_ids(&domain.id, b))
                })
                .collect::<Result<Vec<_>>>()?;
            tables.push(row);
        }
        let truth = match &manifest.target_truth {
            Some(p) => {
                let t = load_feature_table(manifest.resolve(p))?;
                Some(t.class_labels().ok_or_else(|| Error::data("target_truth has unlabeled rows"))?)
            }
            None => None,
        };
        Self::from_tables(manifest.clone(), tables, truth, normalize)
    }

    /// Builds a store from tables already in memory, indexed `[domain][backbone]`.
    pub fn from_tables(
        manifest: DatasetManifest,
        tables: Vec<Vec<FeatureTable>>,
        truth: Option<Vec<usize>>,
        normalize: bool,
    ) -> Result<Self> {
        manifest.validate()?;
        if tables.len() != manifest.domains.len() {
            return Err(Error::dimension("one row of tables per manifest domain"));
        }
        for (domain, row) in manifest.domains.iter().zip(&tables) {
            if row.len() != manifest.backbones.len() {
                return Err(Error::dimension(format!("domain {:?}: one table per backbone", domain.id)));
            }
            for t in row {
                if t.class_count != manifest.class_count {
                    return Err(Error::data(format!(
                        "domain {:?}: class_count {} differs from manifest {}",
                        domain.id, t.class_count, manifest.class_count
                    )));
                }
                if t.sample_count() != row[0].sample_count() || t.labels != row[0].labels {
                    return Err(Error::Alignment(format!(
                        "domain {:?}: backbone files disagree on sample count or labels",
                        domain.id
                    )));
                }
            }
        }
        let target_rows = manifest
            .domains_with_role(DomainRole::TargetUnlabeled)
            .map(|(i, _)| tables[i][0].sample_count())
            .next()
            .unwrap_or(0);
        if let Some(truth) = &truth {
            if truth.len() != target_rows {
                return Err(Error::dimension(format!(
                    "target_truth has {} rows, target has {target_rows}",
                    truth.len()
                )));
            }
        }
        let tables = if normalize {
            tables.iter().map(|row| row.iter().map(FeatureTable::l2_normalized).collect()).collect()
        } else {
            tables
        };
        Ok(FeatureStore { manifest, tables, truth })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn table(&self, domain: usize, backbone: usize) -> &FeatureTable {
        &self.tables[domain][backbone]
    }

    /// True target labels, if the manifest supplied them.
    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    /// Concatenation of all source-role tables for `backbone_id`, in manifest order.
    pub fn merge_sources(&self, backbone_id: &str) -> Result<FeatureTable> {
        Ok(self.merge_sources_with_provenance(backbone_id)?.0)
    }

    /// Like [`merge_sources`](Self::merge_sources), also mapping every merged
    /// row to its `(domain index, row)` origin.
    pub fn merge_sources_with_provenance(&self, backbone_id: &str) -> Result<(FeatureTable, Vec<(usize, usize)>)> {
        let b = self.manifest.backbone_index(backbone_id)?;
        let domains: Vec<usize> = self.manifest.domains_with_role(DomainRole::Source).map(|(i, _)| i).collect();
        let parts: Vec<&FeatureTable> = domains.iter().map(|&d| &self.tables[d][b]).collect();
        let (mut merged, provenance) = concat_tables(&parts)?;
        merged.backbone_id = backbone_id.to_string();
        let provenance = provenance.into_iter().map(|(part, row)| (domains[part], row)).collect();
        Ok((merged, provenance))
    }

    pub fn target_unlabeled(&self, backbone: usize) -> &FeatureTable {
        let (d, _) = self.manifest.domains_with_role(DomainRole::TargetUnlabeled).next().expect("validated");
        &self.tables[d][backbone]
    }

    pub fn target_labeled(&self, backbone: usize) -> Option<&FeatureTable> {
        self.manifest.domains_with_role(DomainRole::TargetLabeled).next().map(|(d, _)| &self.tables[d][backbone])
    }
}

/// Loads the manifest's files and merges its sources for one backbone.
pub fn merge_sources(manifest: &DatasetManifest, backbone_id: &str, normalize: bool) -> Result<FeatureTable> {
    FeatureStore::load(manifest, normalize)?.merge_sources(backbone_id)
}
