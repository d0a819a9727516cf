//! CIFAR-10 / CIFAR-100 binary archives.
//!
//! CIFAR-10 record: 1 label byte + 3072 pixel bytes (R, G, B planes, each
//! 32×32 row-major). CIFAR-100 record: coarse label byte, fine label byte,
//! then the same 3072 pixel bytes. The fine label is used.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};

pub const IMAGE_SHAPE: [usize; 3] = [3, 32, 32];
pub const PIXELS: usize = 3 * 32 * 32;

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(CifarKind::Cifar10),
            "cifar100" => Ok(CifarKind::Cifar100),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (cifar10|cifar100)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "cifar10",
            CifarKind::Cifar100 => "cifar100",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_size(self) -> usize {
        self.label_bytes() + PIXELS
    }

    /// Loads `(train, test)` from `dir`.
    pub fn load(self, dir: &Path) -> Result<(Dataset, Dataset)> {
        match self {
            CifarKind::Cifar10 => load_cifar10(dir),
            CifarKind::Cifar100 => load_cifar100(dir),
        }
    }
}

struct Records {
    pixels: Vec<u8>,
    labels: Vec<usize>,
    coarse: Vec<usize>,
}

fn parse_file(path: &Path, kind: CifarKind, into: &mut Records) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let record = kind.record_size();
    if bytes.len() < record {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record,
        });
    }
    let whole = bytes.len() / record;
    if whole * record != bytes.len() {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            offset: (whole * record) as u64,
        });
    }
    let classes = kind.num_classes();
    for (r, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[kind.label_bytes() - 1] as usize;
        if label >= classes {
            return Err(Error::Parse(format!(
                "{}: record {r} (offset {}) has label {label} >= {classes}",
                path.display(),
                r * record
            )));
        }
        if kind == CifarKind::Cifar100 {
            into.coarse.push(rec[0] as usize);
        }
        into.labels.push(label);
        into.pixels.extend_from_slice(&rec[kind.label_bytes()..]);
    }
    Ok(())
}

fn load_files(dir: &Path, files: &[&str], kind: CifarKind, split: SplitTag) -> Result<Dataset> {
    let mut recs = Records {
        pixels: Vec::new(),
        labels: Vec::new(),
        coarse: Vec::new(),
    };
    for f in files {
        parse_file(&dir.join(f), kind, &mut recs)?;
    }
    let mut ds = Dataset::new(IMAGE_SHAPE, recs.pixels, recs.labels, kind.num_classes(), split)?;
    if kind == CifarKind::Cifar100 {
        ds.coarse_labels = Some(recs.coarse);
    }
    Ok(ds)
}

/// `(train, test)`: the five `data_batch_*.bin` files and `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    check_dir(dir)?;
    Ok((
        load_files(dir, &CIFAR10_TRAIN_FILES, CifarKind::Cifar10, SplitTag::Train)?,
        load_files(dir, &[CIFAR10_TEST_FILE], CifarKind::Cifar10, SplitTag::Test)?,
    ))
}

/// `(train, test)` from `train.bin` / `test.bin`, fine labels.
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    check_dir(dir)?;
    Ok((
        load_files(dir, &[CIFAR100_TRAIN_FILE], CifarKind::Cifar100, SplitTag::Train)?,
        load_files(dir, &[CIFAR100_TEST_FILE], CifarKind::Cifar100, SplitTag::Test)?,
    ))
}

fn check_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::MissingFile(PathBuf::from(dir)))
    }
}

/// Serializes images in the CIFAR-10 record layout.
pub fn encode_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    encode(ds, CifarKind::Cifar10)
}

pub fn encode_cifar100(ds: &Dataset) -> Result<Vec<u8>> {
    encode(ds, CifarKind::Cifar100)
}

fn encode(ds: &Dataset, kind: CifarKind) -> Result<Vec<u8>> {
    if ds.shape != IMAGE_SHAPE {
        return Err(Error::shape("cifar encode", format!("image shape {:?}", ds.shape)));
    }
    let mut out = Vec::with_capacity(ds.len() * kind.record_size());
    for i in 0..ds.len() {
        if kind == CifarKind::Cifar100 {
            let coarse = ds.coarse_labels.as_ref().map_or(0, |c| c[i]);
            out.push(coarse as u8);
        }
        out.push(ds.labels[i] as u8);
        out.extend_from_slice(ds.image_bytes(i));
    }
    Ok(out)
}

pub fn write_cifar10(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_cifar10(ds)?)?;
    Ok(())
}

pub fn write_cifar100(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_cifar100(ds)?)?;
    Ok(())
}

/// Writes a dataset as a complete CIFAR directory layout (`train` spread over
/// the five batch files for CIFAR-10).
pub fn write_archive(dir: &Path, kind: CifarKind, train: &Dataset, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    match kind {
        CifarKind::Cifar10 => {
            let per = train.len().div_ceil(5);
            for (b, name) in CIFAR10_TRAIN_FILES.iter().enumerate() {
                let idx: Vec<usize> = (b * per..((b + 1) * per).min(train.len())).collect();
                if idx.is_empty() {
                    return Err(Error::Config("need at least 5 training images".into()));
                }
                write_cifar10(&dir.join(name), &train.select(&idx, SplitTag::Train)?)?;
            }
            write_cifar10(&dir.join(CIFAR10_TEST_FILE), test)
        }
        CifarKind::Cifar100 => {
            write_cifar100(&dir.join(CIFAR100_TRAIN_FILE), train)?;
            write_cifar100(&dir.join(CIFAR100_TEST_FILE), test)
        }
    }
}

/// Parses one standalone record (or raw 3072 pixel bytes) as a single image.
pub fn parse_single_image(bytes: &[u8]) -> Result<Dataset> {
    let (label, pixels) = match bytes.len() {
        PIXELS => (0, bytes),
        n if n == PIXELS + 1 => (bytes[0] as usize, &bytes[1..]),
        n if n == PIXELS + 2 => (bytes[1] as usize, &bytes[2..]),
        n => {
            return Err(Error::Parse(format!(
                "image file has {n} bytes; expected {PIXELS}, {} or {}",
                PIXELS + 1,
                PIXELS + 2
            )))
        }
    };
    Dataset::new(IMAGE_SHAPE, pixels.to_vec(), vec![label], label + 1, SplitTag::Test)
}
