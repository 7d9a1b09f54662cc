//! IDX container files (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 `u8` images,
//! `0x00000801` for rank-1 `u8` labels), one big-endian `u32` per
//! dimension, then the raw bytes.

use std::path::Path;

use crate::error::{FilterError, Result};

use super::Corpus;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn header(bytes: &[u8], magic: u32, rank: usize) -> Result<Vec<usize>> {
    let word = |k: usize| -> Result<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| FilterError::Idx("truncated header".into()))
    };
    let found = word(0)?;
    if found != magic {
        return Err(FilterError::Idx(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    (1..=rank).map(|k| word(k).map(|v| v as usize)).collect()
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let dims = header(bytes, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(FilterError::Idx(format!("expected {} pixel bytes, found {}", n * rows * cols, body.len())));
    }
    Ok(IdxImages { rows, cols, pixels: body.to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let n = header(bytes, LABELS_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() != n {
        return Err(FilterError::Idx(format!("expected {n} label bytes, found {}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGES_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&std::fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&std::fs::read(path)?)
}

/// Binary task built from digit labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Digits 0 and 1 only; label = digit.
    ZeroOne,
    /// All digits; label 0 for even, 1 for odd.
    EvenOdd,
}

impl Task {
    pub fn label(self, digit: u8) -> Option<u8> {
        match self {
            Task::ZeroOne => (digit <= 1).then_some(digit),
            Task::EvenOdd => Some(digit % 2),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero-one" => Ok(Task::ZeroOne),
            "even-odd" => Ok(Task::EvenOdd),
            other => Err(format!("unknown task {other:?} (expected zero-one or even-odd)")),
        }
    }
}

/// Corpus of the images relevant to `task`, intensities scaled to `[0, 1]`.
pub fn task_corpus(images: &IdxImages, digits: &[u8], task: Task) -> Result<Corpus> {
    if images.len() != digits.len() {
        return Err(FilterError::Idx(format!("{} images but {} labels", images.len(), digits.len())));
    }
    let dim = images.rows * images.cols;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, &d) in digits.iter().enumerate() {
        if let Some(l) = task.label(d) {
            features.extend(images.image(i).iter().map(|&p| f64::from(p) / 255.0));
            labels.push(l);
        }
    }
    Corpus::new(dim, features, labels)
}

pub fn load_task(images: &Path, labels: &Path, task: Task) -> Result<Corpus> {
    task_corpus(&read_images(images)?, &read_labels(labels)?, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (IdxImages, Vec<u8>) {
        let images = IdxImages { rows: 2, cols: 2, pixels: vec![0, 255, 10, 20, 1, 2, 3, 4, 255, 255, 0, 0] };
        (images, vec![1, 7, 0])
    }

    #[test]
    fn header_layout() {
        let (images, labels) = sample();
        let bytes = encode_images(&images);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 3]);
        assert_eq!(&encode_labels(&labels)[..4], &[0, 0, 8, 1]);
        assert_eq!(parse_images(&bytes).unwrap(), images);
        assert_eq!(parse_labels(&encode_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn malformed_files() {
        let (images, labels) = sample();
        let mut bytes = encode_images(&images);
        bytes.pop();
        assert!(parse_images(&bytes).is_err());
        assert!(parse_images(&encode_labels(&labels)).is_err());
        assert!(parse_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn task_filtering_and_scaling() {
        let (images, labels) = sample();
        let zo = task_corpus(&images, &labels, Task::ZeroOne).unwrap();
        assert_eq!(zo.labels(), &[1, 0]);
        assert_eq!(zo.vector(0), &[0.0, 1.0, 10.0 / 255.0, 20.0 / 255.0]);
        let eo = task_corpus(&images, &labels, Task::EvenOdd).unwrap();
        assert_eq!(eo.labels(), &[1, 1, 0]);
        assert_eq!("even-odd".parse::<Task>().unwrap(), Task::EvenOdd);
        assert!("three".parse::<Task>().is_err());
    }
}
