//! Little-endian helpers shared by the binary file formats, the prediction
//! file (`FSDR`) and a header dump used by `fsda inspect`.
//!
//! | magic  | contents                                                        |
//! |--------|-----------------------------------------------------------------|
//! | `FSDA` | feature table: f32 rows plus optional i32 labels                |
//! | `FSDC` | linear classifier checkpoint: f32 weights then f32 bias         |
//! | `FSDP` | prototype checkpoint: f32 centroids, f32 counts, f32 temperature |
//! | `FSDR` | prediction matrix: sample_count x class_count f32 probabilities |

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"FSDA";
pub const CLASSIFIER_MAGIC: [u8; 4] = *b"FSDC";
pub const PROTOTYPE_MAGIC: [u8; 4] = *b"FSDP";
pub const PREDICTION_MAGIC: [u8; 4] = *b"FSDR";
pub const FORMAT_VERSION: u16 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Truncated { expected: end as u64, actual: self.buf.len() as u64 });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(&expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    /// Checks the buffer holds exactly `payload` more bytes after the header.
    pub(crate) fn expect_payload(&self, payload: u64) -> Result<()> {
        let expected = self.pos as u64 + payload;
        let actual = self.buf.len() as u64;
        if actual < expected {
            Err(Error::Truncated { expected, actual })
        } else if actual > expected {
            Err(Error::format(format!("{} trailing bytes after payload", actual - expected)))
        } else {
            Ok(())
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn header(magic: [u8; 4]) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(&magic);
        w.u16(FORMAT_VERSION);
        w
    }

    pub(crate) fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Product of sizes with overflow reported as a format error.
pub(crate) fn checked_len(parts: &[u64]) -> Result<u64> {
    parts.iter().try_fold(1u64, |acc, &p| acc.checked_mul(p)).ok_or_else(|| Error::format("declared sizes overflow"))
}

pub(crate) fn u32_dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::dimension(format!("{what} {n} does not fit in u32")))
}

/// A prediction matrix as stored in an `FSDR` file.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub probs: Array2<f32>,
}

impl Predictions {
    pub fn from_f64(probs: &Array2<f64>) -> Self {
        Predictions { probs: probs.mapv(|p| p as f32) }
    }

    pub fn class_count(&self) -> usize {
        self.probs.ncols()
    }

    /// Row-wise argmax, ties to the lowest class index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(PREDICTION_MAGIC);
        w.u32(self.probs.ncols() as u32);
        w.u64(self.probs.nrows() as u64);
        for &p in self.probs.iter() {
            w.f32(p);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PREDICTION_MAGIC)?;
        r.version()?;
        let classes = r.u32()? as u64;
        let samples = r.u64()?;
        if classes == 0 || samples == 0 {
            return Err(Error::format("empty prediction matrix"));
        }
        r.expect_payload(checked_len(&[samples, classes, 4])?)?;
        let values = r.f32s((samples * classes) as usize)?;
        let probs = Array2::from_shape_vec((samples as usize, classes as usize), values)
            .expect("shape checked against payload");
        Ok(Predictions { probs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Parsed header of any of the four binary formats.
#[derive(Clone, Debug, PartialEq)]
pub enum FileHeader {
    Features { version: u16, labels_present: bool, class_count: u32, sample_count: u64, feature_dim: u32 },
    Classifier { version: u16, class_count: u32, input_dim: u32 },
    Prototypes { version: u16, class_count: u32, feature_dim: u32 },
    Predictions { version: u16, class_count: u32, sample_count: u64 },
}

impl FileHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        let version = r.u16()?;
        Ok(match &magic {
            b"FSDA" => {
                let flags = r.u16()?;
                FileHeader::Features {
                    version,
                    labels_present: flags & 1 == 1,
                    class_count: r.u32()?,
                    sample_count: r.u64()?,
                    feature_dim: r.u32()?,
                }
            }
            b"FSDC" => FileHeader::Classifier { version, class_count: r.u32()?, input_dim: r.u32()? },
            b"FSDP" => FileHeader::Prototypes { version, class_count: r.u32()?, feature_dim: r.u32()? },
            b"FSDR" => FileHeader::Predictions { version, class_count: r.u32()?, sample_count: r.u64()? },
            other => return Err(Error::format(format!("unknown magic {:?}", String::from_utf8_lossy(other)))),
        })
    }
}

impl fmt::Display for FileHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileHeader::Features { version, labels_present, class_count, sample_count, feature_dim } => write!(
                f,
                "FSDA feature table\n  version {version}\n  labels_present {labels_present}\n  class_count {class_count}\n  sample_count {sample_count}\n  feature_dim {feature_dim}"
            ),
            FileHeader::Classifier { version, class_count, input_dim } => write!(
                f,
                "FSDC classifier checkpoint\n  version {version}\n  class_count {class_count}\n  input_dim {input_dim}"
            ),
            FileHeader::Prototypes { version, class_count, feature_dim } => write!(
                f,
                "FSDP prototype checkpoint\n  version {version}\n  class_count {class_count}\n  feature_dim {feature_dim}"
            ),
            FileHeader::Predictions { version, class_count, sample_count } => write!(
                f,
                "FSDR predictions\n  version {version}\n  class_count {class_count}\n  sample_count {sample_count}"
            ),
        }
    }
}
