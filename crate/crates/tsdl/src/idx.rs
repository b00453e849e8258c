//! Big-endian IDX files as used for MNIST.

use std::path::{Path, PathBuf};

use tsdl_core::datasets::{one_hot, LabeledBatch};
use tsdl_core::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file truncated: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} is not a digit")]
    BadLabel(u8),
}

/// Raw images: `count` images of `rows × cols` bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], words: usize, magic: u32) -> Result<Vec<usize>, IdxError> {
    if bytes.len() < 4 * words {
        return Err(IdxError::Truncated {
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("four bytes"));
    if word(0) != magic {
        return Err(IdxError::BadMagic {
            expected: magic,
            found: word(0),
        });
    }
    Ok((1..words).map(|i| word(i) as usize).collect())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let dims = header(bytes, 4, IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let dims = header(bytes, 2, LABEL_MAGIC)?;
    let expected = 8 + dims[0];
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Images as `784 × n` features scaled to `[0, 1]` with one-hot labels.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledBatch, IdxError> {
    let img = parse_images(&read(images)?)?;
    let lbl = parse_labels(&read(labels)?)?;
    if img.count != lbl.len() {
        return Err(IdxError::CountMismatch {
            images: img.count,
            labels: lbl.len(),
        });
    }
    if let Some(&bad) = lbl.iter().find(|&&l| l > 9) {
        return Err(IdxError::BadLabel(bad));
    }
    let px = img.rows * img.cols;
    let inputs = Matrix::from_fn(px, img.count, |r, c| f64::from(img.pixels[c * px + r]) / 255.0);
    let classes: Vec<usize> = lbl.iter().map(|&l| usize::from(l)).collect();
    let labels = one_hot(&classes, 10).expect("labels checked above");
    Ok(LabeledBatch { inputs, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: vec![0, 255, 10, 20, 30, 40, 1, 2, 3, 4, 5, 6],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let img = two_images();
        let bytes = encode_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_images(&bytes).unwrap(), img);
        assert_eq!(parse_labels(&encode_labels(&[3, 9])).unwrap(), vec![3, 9]);
    }

    #[test]
    fn header_of_full_training_set() {
        let mut bytes = Vec::new();
        for w in [IMAGE_MAGIC, 60000, 28, 28] {
            bytes.extend_from_slice(&w.to_be_bytes());
        }
        bytes.resize(16 + 60000 * 784, 0);
        let img = parse_images(&bytes).unwrap();
        assert_eq!((img.count, img.rows * img.cols), (60000, 784));
    }

    #[test]
    fn distinct_errors() {
        let img = encode_images(&two_images());
        assert!(matches!(parse_labels(&img), Err(IdxError::BadMagic { .. })));
        assert!(matches!(parse_images(&img[..20]), Err(IdxError::Truncated { .. })));
        assert!(matches!(parse_images(&img[..3]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn load_scales_and_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, encode_images(&two_images())).unwrap();
        std::fs::write(&lp, encode_labels(&[7, 0])).unwrap();
        let batch = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(batch.inputs.shape(), (6, 2));
        assert_eq!(batch.inputs[(1, 0)], 1.0);
        assert_eq!(batch.inputs[(0, 1)], 1.0 / 255.0);
        assert_eq!(batch.classes(), vec![7, 0]);
        std::fs::write(&lp, encode_labels(&[7])).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(IdxError::CountMismatch { images: 2, labels: 1 })));
        assert!(matches!(load_mnist_idx(&dir.path().join("nope"), &lp), Err(IdxError::Io { .. })));
    }
}
