//! Tweet records, dataset splits, and the TFRE v1 embedding container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic        4 bytes   "TFRE"
//! version      u32       1
//! record_count u64
//! d_img        u32
//! d_txt        u32
//! record_count x {
//!     id_len    u16
//!     id        id_len bytes, UTF-8
//!     label     u8       0 = real, 1 = fake, 255 = unlabeled
//!     split     u8       0 = seen, 1 = unseen, 2 = test
//!     event_id  u32      0xFFFFFFFF = unknown
//!     image_emb d_img x f32
//!     text_emb  d_txt x f32
//! }
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ndops::Tensor;

pub const MAGIC: [u8; 4] = *b"TFRE";
pub const FORMAT_VERSION: u32 = 1;
/// Byte length of the fixed header that precedes the records.
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;
pub const EVENT_UNKNOWN: u32 = u32::MAX;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"TFRE\"")]
    BadMagic([u8; 4]),
    #[error("version mismatch: expected {expected}, got {actual}")]
    VersionMismatch { expected: u32, actual: u32 },
    #[error("record {index}: {field} has {actual} values, header says {expected}")]
    DimMismatch {
        index: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("record {index} ({id}): non-finite value in {field}")]
    NonFiniteValue {
        index: usize,
        id: String,
        field: &'static str,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {index}: invalid {field} byte {value}")]
    InvalidEnum {
        index: usize,
        field: &'static str,
        value: u8,
    },
    #[error("record {index}: id is not valid UTF-8")]
    InvalidId { index: usize },
    #[error("record {index}: id longer than {max} bytes", max = u16::MAX)]
    IdTooLong { index: usize },
    #[error("record {index} ({id}): {split:?} record has no label")]
    MissingLabel {
        index: usize,
        id: String,
        split: Split,
    },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("trailing bytes after last record")]
    TrailingBytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Real,
    Fake,
    Unlabeled,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Class column in a `(p_real, p_fake)` row.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Real => Some(0),
            Label::Fake => Some(1),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Seen,
    Unseen,
    Test,
}

impl Split {
    pub fn to_byte(self) -> u8 {
        match self {
            Split::Seen => 0,
            Split::Unseen => 1,
            Split::Test => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Seen),
            1 => Some(Split::Unseen),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TweetRecord {
    pub id: String,
    pub image_emb: Vec<f32>,
    pub text_emb: Vec<f32>,
    pub label: Label,
    /// `None` is stored as [`EVENT_UNKNOWN`].
    pub event_id: Option<u32>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<TweetRecord>,
    pub d_img: usize,
    pub d_txt: usize,
}

impl Dataset {
    /// Builds a dataset and checks every invariant the loader enforces.
    pub fn new(records: Vec<TweetRecord>, d_img: usize, d_txt: usize) -> Result<Self, DataError> {
        let ds = Dataset {
            records,
            d_img,
            d_txt,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(d_img: usize, d_txt: usize) -> Self {
        Dataset {
            records: Vec::new(),
            d_img,
            d_txt,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = HashSet::with_capacity(self.records.len());
        for (index, r) in self.records.iter().enumerate() {
            if r.image_emb.len() != self.d_img {
                return Err(DataError::DimMismatch {
                    index,
                    field: "image_emb",
                    expected: self.d_img,
                    actual: r.image_emb.len(),
                });
            }
            if r.text_emb.len() != self.d_txt {
                return Err(DataError::DimMismatch {
                    index,
                    field: "text_emb",
                    expected: self.d_txt,
                    actual: r.text_emb.len(),
                });
            }
            for (field, v) in [("image_emb", &r.image_emb), ("text_emb", &r.text_emb)] {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(DataError::NonFiniteValue {
                        index,
                        id: r.id.clone(),
                        field,
                    });
                }
            }
            if r.id.len() > u16::MAX as usize {
                return Err(DataError::IdTooLong { index });
            }
            if r.split != Split::Test && r.label == Label::Unlabeled {
                return Err(DataError::MissingLabel {
                    index,
                    id: r.id.clone(),
                    split: r.split,
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    /// Indices of records in `split`, in record order.
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn splits(&self) -> Vec<Split> {
        self.records.iter().map(|r| r.split).collect()
    }
}

/// Row `i` is `concat(image_emb_i, text_emb_i)` widened to f64.
pub fn node_features(ds: &Dataset) -> Tensor {
    let cols = ds.d_img + ds.d_txt;
    let mut data = Vec::with_capacity(ds.len() * cols);
    for r in &ds.records {
        data.extend(r.image_emb.iter().map(|&x| x as f64));
        data.extend(r.text_emb.iter().map(|&x| x as f64));
    }
    Tensor::from_vec(ds.len(), cols, data).expect("row lengths checked by dataset invariants")
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(ds: &Dataset, w: &mut W) -> Result<(), DataError> {
    ds.validate()?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ds.records.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.d_img as u32).to_le_bytes())?;
    w.write_all(&(ds.d_txt as u32).to_le_bytes())?;
    for r in &ds.records {
        w.write_all(&(r.id.len() as u16).to_le_bytes())?;
        w.write_all(r.id.as_bytes())?;
        w.write_all(&[r.label.to_byte(), r.split.to_byte()])?;
        w.write_all(&r.event_id.unwrap_or(EVENT_UNKNOWN).to_le_bytes())?;
        for x in r.image_emb.iter().chain(&r.text_emb) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}

struct Reader<'a, R> {
    inner: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N], DataError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| truncated(e, what))?;
        Ok(buf)
    }

    fn u16(&mut self, what: &str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.bytes(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, DataError> {
        let mut raw = vec![0u8; n * 4];
        self.inner.read_exact(&mut raw).map_err(|e| truncated(e, what))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn truncated(e: std::io::Error, what: &str) -> DataError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DataError::Truncated(format!("while reading {what}"))
    } else {
        DataError::Io(e)
    }
}

pub fn read_dataset<R: Read>(inner: &mut R) -> Result<Dataset, DataError> {
    let mut r = Reader { inner };
    let magic: [u8; 4] = r.bytes("magic")?;
    if magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            expected: FORMAT_VERSION,
            actual: version,
        });
    }
    let count = r.u64("record_count")?;
    let d_img = r.u32("d_img")? as usize;
    let d_txt = r.u32("d_txt")? as usize;

    // The count comes from the file, so only trust it up to a sane capacity.
    let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut ids = HashSet::new();
    for index in 0..count as usize {
        let id_len = r.u16("id_len")? as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.inner
            .read_exact(&mut id_bytes)
            .map_err(|e| truncated(e, "id"))?;
        let id = String::from_utf8(id_bytes).map_err(|_| DataError::InvalidId { index })?;
        let [label_b, split_b] = r.bytes::<2>("label/split")?;
        let label = Label::from_byte(label_b).ok_or(DataError::InvalidEnum {
            index,
            field: "label",
            value: label_b,
        })?;
        let split = Split::from_byte(split_b).ok_or(DataError::InvalidEnum {
            index,
            field: "split",
            value: split_b,
        })?;
        let event = r.u32("event_id")?;
        let image_emb = r.f32s(d_img, "image_emb")?;
        let text_emb = r.f32s(d_txt, "text_emb")?;
        if !ids.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        records.push(TweetRecord {
            id,
            image_emb,
            text_emb,
            label,
            event_id: (event != EVENT_UNKNOWN).then_some(event),
            split,
        });
    }
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe)? {
        0 => {}
        _ => return Err(DataError::TrailingBytes),
    }
    let ds = Dataset {
        records,
        d_img,
        d_txt,
    };
    ds.validate()?;
    Ok(ds)
}
