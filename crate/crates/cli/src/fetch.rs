//! `hat fetch-data`: put the four MNIST IDX files in a directory and verify
//! them against known SHA-256 digests.
//!
//! The source is a base URL or a local directory; files may be stored raw or
//! gzip-compressed (`<name>.gz`). Files already present with the right digest
//! are left alone. A file whose digest does not match is moved to
//! `<dest>/quarantine/` and the command fails.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use hat_core::data::load_mnist;

use crate::error::{CliError, Result};
use crate::run::write_atomic;

pub const DEFAULT_SOURCE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

/// Digests of the uncompressed files of the official distribution.
pub const MNIST_SHA256: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"),
    ("train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"),
    ("t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"),
    ("t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"),
];

const DOWNLOAD_LIMIT: u64 = 128 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileStatus {
    AlreadyValid,
    Fetched,
}

#[derive(Debug, Clone)]
pub struct FetchReport {
    pub files: Vec<(String, FileStatus)>,
    pub train_samples: usize,
    pub test_samples: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn gunzip_if_needed(bytes: Vec<u8>, what: &str) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(CliError::io(format!("decompressing {what}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn from_dir(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let raw = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    let path = if raw.is_file() { raw } else { gz };
    let bytes = fs::read(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
    gunzip_if_needed(bytes, &path.display().to_string())
}

fn from_url(base: &str, name: &str) -> Result<Vec<u8>> {
    let url = format!("{}/{name}.gz", base.trim_end_matches('/'));
    let mut resp = ureq::get(&url).call().map_err(|e| CliError::Download(format!("{url}: {e}")))?;
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(DOWNLOAD_LIMIT)
        .read_to_vec()
        .map_err(|e| CliError::Download(format!("{url}: {e}")))?;
    gunzip_if_needed(bytes, &url)
}

fn quarantine(dest: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let dir = dest.join("quarantine");
    fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
    Ok(path)
}

pub fn cmd_fetch(name: &str, dest: &Path, source: Option<&str>) -> Result<FetchReport> {
    if name != "mnist" {
        return Err(CliError::Usage(format!("unknown dataset {name:?}; only \"mnist\" is supported")));
    }
    let source = source.unwrap_or(DEFAULT_SOURCE);
    let is_url = source.starts_with("http://") || source.starts_with("https://");
    fs::create_dir_all(dest).map_err(CliError::io(format!("creating {}", dest.display())))?;

    let mut files = Vec::new();
    for (file, digest) in MNIST_SHA256 {
        let target = dest.join(file);
        if let Ok(existing) = fs::read(&target) {
            if sha256_hex(&existing) == digest {
                files.push((file.to_string(), FileStatus::AlreadyValid));
                continue;
            }
            let moved = quarantine(dest, file, &existing)?;
            fs::remove_file(&target).map_err(CliError::io(format!("removing {}", target.display())))?;
            eprintln!("[fetch] {} had a wrong digest, moved to {}", target.display(), moved.display());
        }
        let bytes = if is_url { from_url(source, file)? } else { from_dir(Path::new(source), file)? };
        let got = sha256_hex(&bytes);
        if got != digest {
            let moved = quarantine(dest, file, &bytes)?;
            return Err(CliError::Integrity(format!(
                "{file}: expected sha256 {digest}, got {got}; saved to {}",
                moved.display()
            )));
        }
        write_atomic(&target, &bytes)?;
        files.push((file.to_string(), FileStatus::Fetched));
    }
    let (train, test) = load_mnist(dest)?;
    Ok(FetchReport { files, train_samples: train.len(), test_samples: test.len() })
}
