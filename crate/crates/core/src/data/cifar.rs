use std::path::{Path, PathBuf};

use crate::data::LabeledDataset;
use crate::error::{data_err, Result};

/// One label byte followed by 32×32 pixels per channel, R then G then B.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const RECORDS_PER_FILE: usize = 10_000;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct CifarSplits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads the binary CIFAR-10 batches from `dir`. `train_subset` / `test_subset`
/// keep the first k images of each class.
pub fn load_cifar10(dir: &Path, train_subset: Option<usize>, test_subset: Option<usize>) -> Result<CifarSplits> {
    let names = read_class_names(dir)?;
    let mut train = read_files(dir, &TRAIN_FILES)?;
    let mut test = read_files(dir, &[TEST_FILE])?;
    if let Some(k) = train_subset {
        train = train.first_per_class(k);
    }
    if let Some(k) = test_subset {
        test = test.first_per_class(k);
    }
    train.class_names = names.clone();
    test.class_names = names;
    Ok(CifarSplits { train, test })
}

fn read_files(dir: &Path, files: &[&str]) -> Result<LabeledDataset> {
    let mut images = Vec::with_capacity(files.len() * RECORDS_PER_FILE * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(files.len() * RECORDS_PER_FILE);
    for name in files {
        let path = dir.join(name);
        let bytes = read_exact_len(&path, RECORDS_PER_FILE * CIFAR_RECORD_LEN)?;
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
            if rec[0] > 9 {
                return Err(data_err!(
                    "{}: label {} at byte offset {} is not a CIFAR-10 class",
                    path.display(),
                    rec[0],
                    r * CIFAR_RECORD_LEN
                ));
            }
            labels.push(rec[0] as usize);
            images.extend_from_slice(&rec[1..]);
        }
    }
    LabeledDataset::new(images, labels, (3, 32, 32), 10)
}

fn read_exact_len(path: &PathBuf, expected: usize) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| {
        data_err!("cannot read {} ({e}); expected a {expected}-byte CIFAR-10 batch file", path.display())
    })?;
    if bytes.len() < expected {
        let record = bytes.len() / CIFAR_RECORD_LEN;
        return Err(data_err!(
            "{} is truncated: record {record} starting at byte offset {} is incomplete; file has {} bytes, expected {expected}",
            path.display(),
            record * CIFAR_RECORD_LEN,
            bytes.len()
        ));
    }
    if bytes.len() > expected {
        return Err(data_err!(
            "{} has {} bytes, expected {expected}; trailing data starts at byte offset {expected}",
            path.display(),
            bytes.len()
        ));
    }
    Ok(bytes)
}

fn read_class_names(dir: &Path) -> Result<Option<Vec<String>>> {
    let path = dir.join("batches.meta.txt");
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(Some(
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(data_err!("cannot read {}: {e}", path.display())),
    }
}
