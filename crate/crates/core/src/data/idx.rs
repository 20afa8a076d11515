//! IDX (MNIST) file reader. Files ending in `.gz` are decompressed on the fly.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Targets};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX3 image file into `(count, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != IMAGES_MAGIC {
        return Err(format!("bad magic number {magic:#010x} for images (expected {IMAGES_MAGIC:#010x})"));
    }
    let (Some(n), Some(rows), Some(cols)) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12)) else {
        return Err("truncated header".into());
    };
    let (n, dim) = (n as usize, rows as usize * cols as usize);
    let body = &bytes[16..];
    if body.len() < n * dim {
        return Err(format!("truncated file: expected {} pixel bytes, found {}", n * dim, body.len()));
    }
    Ok((n, dim, body[..n * dim].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != LABELS_MAGIC {
        return Err(format!("bad magic number {magic:#010x} for labels (expected {LABELS_MAGIC:#010x})"));
    }
    let n = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(format!("truncated file: expected {n} labels, found {}", body.len()));
    }
    Ok(body[..n].to_vec())
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let fmt = |path: &Path, msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };

    let (n, dim, pixels) = parse_idx_images(&read_all(images_path)?).map_err(|m| fmt(images_path, m))?;
    let labels = parse_idx_labels(&read_all(labels_path)?).map_err(|m| fmt(labels_path, m))?;
    if labels.len() != n {
        return Err(fmt(
            labels_path,
            format!("count mismatch: {} labels for {n} images", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(fmt(labels_path, format!("label {bad} outside 0..=9")));
    }
    let inputs = Tensor::matrix(n, dim, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    Dataset::new(
        inputs,
        Targets::Classes(labels.iter().map(|&l| l as usize).collect()),
        10,
    )
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn images(n: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, 2, 2] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn labels(magic: u32, values: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(magic.to_be_bytes());
        b.extend((values.len() as u32).to_be_bytes());
        b.extend(values);
        b
    }

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn loads_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &images(2, &[0, 255, 51, 102, 1, 2, 3, 4]));
        let lab = write(&dir, "lab", &labels(LABELS_MAGIC, &[7, 3]));
        let data = load_idx(&img, &lab).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.inputs().data()[1], 1.0);
        assert_eq!(data.inputs().data()[2], 0.2);
        assert_eq!(data.labels().unwrap(), &[7, 3]);
    }

    #[test]
    fn gzip_files_are_decoded() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(bytes).unwrap();
            enc.finish().unwrap()
        };
        let img = write(&dir, "img.gz", &gz(&images(1, &[255, 0, 0, 0])));
        let lab = write(&dir, "lab.gz", &gz(&labels(LABELS_MAGIC, &[5])));
        let data = load_idx(&img, &lab).unwrap();
        assert_eq!(data.labels().unwrap(), &[5]);
        assert_eq!(data.inputs().data()[0], 1.0);
    }

    #[test]
    fn wrong_label_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &images(1, &[0; 4]));
        let lab = write(&dir, "lab", &labels(IMAGES_MAGIC, &[1]));
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_and_mismatched_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &images(2, &[0; 5]));
        let lab = write(&dir, "lab", &labels(LABELS_MAGIC, &[1, 2]));
        assert!(load_idx(&img, &lab).unwrap_err().to_string().contains("truncated"));

        let img = write(&dir, "img2", &images(2, &[0; 8]));
        let lab = write(&dir, "lab2", &labels(LABELS_MAGIC, &[1, 2, 3]));
        assert!(load_idx(&img, &lab).unwrap_err().to_string().contains("count mismatch"));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_idx("/nonexistent/img", "/nonexistent/lab").unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Io);
    }
}
