use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{data_err, Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    let short = |need: usize| data_err!("{}: {} bytes is shorter than the {need}-byte header", path.display(), bytes.len());
    if bytes.len() < 4 {
        return Err(short(need));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(data_err!("{}: magic 0x{found:08x}, expected 0x{magic:08x}", path.display()));
    }
    if bytes.len() < need {
        return Err(short(need));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload<'a>(bytes: &'a [u8], path: &Path, offset: usize, len: usize) -> Result<&'a [u8]> {
    if bytes.len() != offset + len {
        return Err(data_err!(
            "{}: {} bytes, expected {} from the header",
            path.display(),
            bytes.len(),
            offset + len
        ));
    }
    Ok(&bytes[offset..])
}

/// Reads an IDX image file (N×H×W bytes) and its label file. Images are stored with C = 1.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let ib = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let d = header(&ib, images, IMAGES_MAGIC, 3)?;
    let (n, h, w) = (d[0], d[1], d[2]);
    let n_labels = header(&lb, labels, LABELS_MAGIC, 1)?[0];
    if n != n_labels {
        return Err(data_err!("{n} images in {} but {n_labels} labels in {}", images.display(), labels.display()));
    }
    let pixels = payload(&ib, images, 16, n * h * w)?;
    let label_bytes = payload(&lb, labels, 8, n)?;
    let label_vec: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let num_classes = label_vec.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(pixels.to_vec(), label_vec, (1, h, w), num_classes)
}

/// Writes a single-channel dataset in IDX format.
pub fn write_idx(ds: &LabeledDataset, images: &Path, labels: &Path) -> Result<()> {
    let (c, h, w) = ds.shape();
    if c != 1 {
        return Err(data_err!("IDX stores single-channel images; dataset has {c} channels"));
    }
    if ds.labels().iter().any(|&l| l > 255) {
        return Err(data_err!("IDX labels are bytes; dataset has labels above 255"));
    }
    let mut ib = Vec::with_capacity(16 + ds.images().len());
    for v in [IMAGES_MAGIC, ds.len() as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend_from_slice(ds.images());
    let mut lb = Vec::with_capacity(8 + ds.len());
    for v in [LABELS_MAGIC, ds.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend(ds.labels().iter().map(|&l| l as u8));
    std::fs::write(images, ib).map_err(|e| Error::io(images, e))?;
    std::fs::write(labels, lb).map_err(|e| Error::io(labels, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LabeledDataset {
        let images: Vec<u8> = (0..5 * 4 * 3).map(|v| (v * 7) as u8).collect();
        LabeledDataset::new(images, vec![0, 3, 1, 2, 3], (1, 4, 3), 4).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
        let ds = small();
        write_idx(&ds, &i, &l).unwrap();
        let back = load_idx(&i, &l).unwrap();
        assert_eq!(back, ds);
        assert_eq!(&std::fs::read(&i).unwrap()[..4], &[0, 0, 8, 3]);
    }

    #[test]
    fn bad_magic_reports_value() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&small(), &i, &l).unwrap();
        let msg = load_idx(&l, &l).unwrap_err().to_string();
        assert!(msg.contains("0x00000801"), "{msg}");
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
        let ds = small();
        write_idx(&ds, &i, &l).unwrap();
        write_idx(&ds.select(&[0, 1]), &dir.path().join("x"), &l).unwrap();
        assert!(load_idx(&i, &l).unwrap_err().to_string().contains("5 images"));
    }
}
