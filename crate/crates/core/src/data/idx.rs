//! IDX container parsing (the MNIST distribution format).
//!
//! A file starts with a big-endian `u32` magic `0x000008DD` where `DD` is the
//! number of dimensions, followed by one big-endian `u32` per dimension and
//! then the raw unsigned bytes in row-major order.

use std::fs;
use std::io;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(what: &str) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated idx {what}")))
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(what))
}

/// Header dims and payload of an IDX buffer with the expected magic.
fn parse<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32(bytes, 0, what)?;
    if found != magic {
        return Err(Error::Format(format!("{what}: magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|k| read_u32(bytes, 4 + 4 * k, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| truncated(what))?;
    Ok((dims, payload))
}

/// Images as `[n × rows·cols]`, scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Tensor> {
    let (dims, payload) = parse(bytes, IMAGES_MAGIC, "images")?;
    let n = dims[0];
    let d = dims[1] * dims[2];
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("images: empty dimensions {dims:?}")));
    }
    Tensor::from_vec(&[n, d], payload.iter().map(|&b| f64::from(b) / 255.0).collect())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse(bytes, LABELS_MAGIC, "labels")?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

/// Load an image/label file pair. The class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_images(&fs::read(images_path)?)?;
    let labels = parse_labels(&fs::read(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            images.rows(),
            labels_path.display(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |f| f.to_string_lossy().into_owned());
    Dataset::new(name, images, labels, classes)
}

/// The standard MNIST file names inside a directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// `(train, test)` from a directory holding the four raw MNIST files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
    let test = load_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
    Ok((train.renamed("mnist-train"), test.renamed("mnist-test")))
}

/// Encode images (values in `[0, 255]` as bytes) in IDX form; used to build fixtures.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_two_by_two_image() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 204, 255];
        let t = parse_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 4]);
        assert_eq!(t.data(), &[0.0, 0.2, 0.8, 1.0]);
    }

    #[test]
    fn single_label() {
        assert_eq!(parse_labels(&[0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap(), vec![7]);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let err = parse_labels(&[0, 0, 8, 3, 0, 0, 0, 1, 7]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let err = parse_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 7]).unwrap_err();
        assert!(matches!(err, Error::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof));
        assert!(matches!(parse_images(&[0, 0, 8]), Err(Error::Io(_))));
    }

    #[test]
    fn encode_round_trip() {
        let px: Vec<u8> = (0..12).collect();
        let t = parse_images(&encode_images(3, 2, 2, &px)).unwrap();
        assert_eq!(t.shape(), &[3, 4]);
        assert_eq!(parse_labels(&encode_labels(&[1, 2])).unwrap(), vec![1, 2]);
    }
}
