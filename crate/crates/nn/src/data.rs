//! Image datasets: IDX files (Fashion-MNIST) and CIFAR-10 binary batches.
//!
//! Pixels stay as bytes in height × width × channel order. A byte `p` stands
//! for the normalized value `p / 255`, which is also its 8-bit activation code
//! at the network input.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

pub const N_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Fmnist,
    Cifar10,
}

impl FromStr for DatasetName {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fmnist" => Ok(DatasetName::Fmnist),
            "cifar10" => Ok(DatasetName::Cifar10),
            _ => Err(NnError::input(format!("unknown dataset `{s}` (expected fmnist or cifar10)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(NnError::input("images must have nonzero size"));
        }
        if pixels.len() != per * labels.len() {
            return Err(NnError::input(format!(
                "{} pixel bytes for {} images of {per}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= N_CLASSES) {
            return Err(NnError::input(format!("label {l} outside 0..{N_CLASSES}")));
        }
        Ok(Dataset {
            height,
            width,
            channels,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixel `(y, x, c)` of image `n` in [0, 1].
    pub fn normalized(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        f32::from(self.image(n)[(y * self.width + x) * self.channels + c]) / 255.0
    }

    /// The first `n` images (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Dataset {
        self.range(0, n.min(self.len()))
    }

    /// Images `start..end`.
    pub fn range(&self, start: usize, end: usize) -> Dataset {
        let end = end.min(self.len());
        let start = start.min(end);
        let n = self.image_len();
        Dataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Zero-pad every image to `height × width`, centered.
    pub fn padded(&self, height: usize, width: usize) -> Result<Dataset> {
        if height < self.height || width < self.width {
            return Err(NnError::input(format!(
                "cannot pad {}×{} images to {height}×{width}",
                self.height, self.width
            )));
        }
        let (top, left) = ((height - self.height) / 2, (width - self.width) / 2);
        let c = self.channels;
        let mut pixels = vec![0u8; self.len() * height * width * c];
        for (i, dst) in pixels.chunks_exact_mut(height * width * c).enumerate() {
            let src = self.image(i);
            for y in 0..self.height {
                let d = ((y + top) * width + left) * c;
                dst[d..d + self.width * c].copy_from_slice(&src[y * self.width * c..(y + 1) * self.width * c]);
            }
        }
        Dataset::new(height, width, c, pixels, self.labels.clone())
    }

    /// Images per class.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut n = [0; N_CLASSES];
        for &l in &self.labels {
            n[usize::from(l)] += 1;
        }
        n
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| NnError::io(path, e))
}

/// Parsed IDX file: dimensions and the unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parse IDX bytes. `path` only labels errors.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<Idx> {
    if bytes.len() < 4 {
        return Err(NnError::format(path, bytes.len() as u64, "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(NnError::format(path, 0, "bad magic number: first two bytes must be zero"));
    }
    if bytes[2] != 0x08 {
        return Err(NnError::format(
            path,
            2,
            format!("bad magic number: element type {:#04x}, expected unsigned byte 0x08", bytes[2]),
        ));
    }
    let ndim = usize::from(bytes[3]);
    if ndim == 0 {
        return Err(NnError::format(path, 3, "bad magic number: zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(NnError::format(path, bytes.len() as u64, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let have = bytes.len() - header;
    if have < n {
        return Err(NnError::format(
            path,
            bytes.len() as u64,
            format!("truncated payload: {have} of {n} bytes"),
        ));
    }
    if have > n {
        return Err(NnError::format(path, (header + n) as u64, "trailing bytes after payload"));
    }
    Ok(Idx {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<Idx> {
    parse_idx(&read(path)?, path)
}

/// Images (`n × rows × cols`) and labels (`n`) from a pair of IDX files.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let im = read_idx(images)?;
    let lb = read_idx(labels)?;
    if im.dims.len() != 3 {
        return Err(NnError::format(images, 3, format!("expected 3 dimensions, found {}", im.dims.len())));
    }
    if lb.dims.len() != 1 {
        return Err(NnError::format(labels, 3, format!("expected 1 dimension, found {}", lb.dims.len())));
    }
    if im.dims[0] != lb.dims[0] {
        return Err(NnError::format(
            labels,
            4,
            format!("{} labels for {} images", lb.dims[0], im.dims[0]),
        ));
    }
    if let Some(i) = lb.data.iter().position(|&l| usize::from(l) >= N_CLASSES) {
        return Err(NnError::format(labels, 8 + i as u64, format!("label {} outside 0..10", lb.data[i])));
    }
    Dataset::new(im.dims[1], im.dims[2], 1, im.data, lb.data)
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parse one CIFAR-10 binary batch: records of a label byte and three 32×32
/// channel planes.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let rem = bytes.len() % CIFAR_RECORD;
    if rem != 0 {
        return Err(NnError::format(
            path,
            (bytes.len() - rem) as u64,
            format!("truncated record: {rem} of {CIFAR_RECORD} bytes"),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = vec![0u8; n * 3072];
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if usize::from(rec[0]) >= N_CLASSES {
            return Err(NnError::format(
                path,
                (i * CIFAR_RECORD) as u64,
                format!("label {} outside 0..10", rec[0]),
            ));
        }
        labels.push(rec[0]);
        let dst = &mut pixels[i * 3072..(i + 1) * 3072];
        for c in 0..3 {
            for p in 0..1024 {
                dst[p * 3 + c] = rec[1 + c * 1024 + p];
            }
        }
    }
    Dataset::new(32, 32, 3, pixels, labels)
}

pub fn read_cifar_batch(path: &Path) -> Result<Dataset> {
    parse_cifar_batch(&read(path)?, path)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| NnError::input("no batches"))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        pixels.extend_from_slice(&p.pixels);
        labels.extend_from_slice(&p.labels);
    }
    Dataset::new(h, w, c, pixels, labels)
}

fn first_existing(dir: &Path, candidates: &[&str]) -> PathBuf {
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join(candidates[0]))
}

/// Load both splits from the standard distribution file names under `dir`.
pub fn load_dataset(name: DatasetName, dir: &Path) -> Result<Splits> {
    match name {
        DatasetName::Fmnist => {
            let f = |stem: &str| first_existing(dir, &[stem, &stem.replacen("-idx", ".idx", 1)]);
            Ok(Splits {
                train: load_idx_pair(&f("train-images-idx3-ubyte"), &f("train-labels-idx1-ubyte"))?,
                test: load_idx_pair(&f("t10k-images-idx3-ubyte"), &f("t10k-labels-idx1-ubyte"))?,
            })
        }
        DatasetName::Cifar10 => {
            let sub = dir.join("cifar-10-batches-bin");
            let base = if sub.is_dir() { sub } else { dir.to_path_buf() };
            let train = (1..=5)
                .map(|i| read_cifar_batch(&base.join(format!("data_batch_{i}.bin"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Splits {
                train: concat(train)?,
                test: read_cifar_batch(&base.join("test_batch.bin"))?,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_round_trip() {
        let b = idx(&[2, 2, 3], &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
        let p = parse_idx(&b, Path::new("x")).unwrap();
        assert_eq!(p.dims, vec![2, 2, 3]);
        assert_eq!(p.data[11], 12);
    }

    #[test]
    fn idx_errors_name_offsets() {
        let p = Path::new("x");
        let mut b = idx(&[3], &[1, 2, 3]);
        b[2] = 0x0D;
        assert!(matches!(parse_idx(&b, p), Err(NnError::Format { offset: 2, .. })));
        let b = idx(&[4], &[1, 2, 3]);
        assert!(matches!(parse_idx(&b, p), Err(NnError::Format { offset: 11, .. })));
        assert!(matches!(parse_idx(&[0, 0], p), Err(NnError::Format { offset: 2, .. })));
        let mut b = idx(&[1], &[1]);
        b[0] = 1;
        assert!(matches!(parse_idx(&b, p), Err(NnError::Format { offset: 0, .. })));
    }

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![7u8];
        for c in 0..3u8 {
            rec.extend(std::iter::repeat_n(c + 1, 1024));
        }
        let d = parse_cifar_batch(&rec, Path::new("b")).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.label(0), 7);
        assert_eq!(&d.image(0)[..6], &[1, 2, 3, 1, 2, 3]);
        let err = parse_cifar_batch(&rec[..3000], Path::new("b")).unwrap_err();
        assert!(matches!(err, NnError::Format { offset: 0, .. }));
    }

    #[test]
    fn padding_centers() {
        let d = Dataset::new(2, 2, 1, vec![1, 2, 3, 4], vec![0]).unwrap();
        let p = d.padded(4, 4).unwrap();
        assert_eq!(p.image(0), &[0, 0, 0, 0, 0, 1, 2, 0, 0, 3, 4, 0, 0, 0, 0, 0]);
    }
}
