//! MNIST IDX and CIFAR-10 binary readers/writers, pixel normalization,
//! Hadamard preprocessing and the mini-batch stream.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::hadamard_batch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}; expected train or test"))),
        }
    }
}

/// Images as `N×C×H×W` in `[0,1]` plus labels in `0..10`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::InvalidShape(format!(
                "dataset images must be N×C×H×W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::LabelOutOfRange(bad));
        }
        Ok(Dataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example `C×H×W`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copies the selected images into a new batch tensor.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let per: usize = self.image_shape().iter().product();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(src[i * per..(i + 1) * per].iter().map(|&v| T::from_f64(v as f64)));
        }
        let mut shape = vec![indices.len()];
        shape.extend(self.image_shape());
        Tensor::from_vec(&shape, data).expect("gathered length matches shape")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// First `n` examples (or all, if fewer).
    pub fn truncate(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        Dataset {
            images: self.gather(&idx),
            labels: self.gather_labels(&idx),
            split: self.split,
        }
    }
}

fn normalize(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn truncated(context: &str, detail: String) -> Error {
    Error::Truncated {
        path: context.into(),
        detail,
    }
}

/// Raw IDX image payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8], context: &str) -> Result<IdxImages> {
    if bytes.len() < 16 {
        return Err(truncated(context, format!("{} byte header, need 16", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            context: context.to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let (count, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(truncated(
            context,
            format!("{} pixel bytes, header promises {need}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::Format(format!(
            "{context}: {} trailing bytes after image data",
            body.len() - need
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(truncated(context, format!("{} byte header, need 8", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            context: context.to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(truncated(
            context,
            format!("{} label bytes, header promises {count}", body.len()),
        ));
    }
    if body.len() > count {
        return Err(Error::Format(format!(
            "{context}: {} trailing bytes after labels",
            body.len() - count
        )));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend(v.to_be_bytes());
    }
    out.extend(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

/// Reads an IDX image/label file pair into a normalized dataset.
pub fn load_idx_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = parse_idx_images(&read_file(images)?, &images.display().to_string())?;
    let lab = parse_idx_labels(&read_file(labels)?, &labels.display().to_string())?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    let tensor = Tensor::from_vec(&[img.count, 1, img.rows, img.cols], normalize(&img.pixels))?;
    Dataset::new(tensor, lab, split)
}

pub const MNIST_FILES: [(&str, &str, Split); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test),
];

/// Loads `(train, test)` from the four standard uncompressed IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |(img, lab, split): (&str, &str, Split)| load_idx_pair(&dir.join(img), &dir.join(lab), split);
    Ok((load(MNIST_FILES[0])?, load(MNIST_FILES[1])?))
}

/// Splits CIFAR-10 binary records into `(labels, pixels)`.
pub fn parse_cifar_records(bytes: &[u8], context: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() {
        return Err(truncated(context, "empty file".into()));
    }
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(truncated(
            context,
            format!(
                "{} bytes is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(rec[0]);
        pixels.extend(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_cifar_records(labels: &[u8], pixels: &[u8]) -> Result<Vec<u8>> {
    let per = CIFAR_RECORD_LEN - 1;
    if pixels.len() != labels.len() * per {
        return Err(Error::CountMismatch {
            images: pixels.len() / per,
            labels: labels.len(),
        });
    }
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD_LEN);
    for (l, img) in labels.iter().zip(pixels.chunks_exact(per)) {
        out.push(*l);
        out.extend(img);
    }
    Ok(out)
}

/// Reads and concatenates CIFAR-10 batch files.
pub fn load_cifar_files(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let (l, px) = parse_cifar_records(&read_file(p)?, &p.display().to_string())?;
        labels.extend(l);
        pixels.extend(px);
    }
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], normalize(&pixels))?;
    Dataset::new(images, labels, split)
}

/// Loads `(train, test)` from `data_batch_{1..5}.bin` and `test_batch.bin`,
/// found either in `dir` or in its `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.join("test_batch.bin").exists() {
        nested
    } else {
        dir.to_path_buf()
    };
    let train: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
    Ok((
        load_cifar_files(&train, Split::Train)?,
        load_cifar_files(&[root.join("test_batch.bin")], Split::Test)?,
    ))
}

/// Per-image, per-channel orthonormal 2-D Hadamard transform (computed in
/// f64). Spatial dimensions are zero-padded to powers of two.
pub fn hadamard_preprocess(ds: &Dataset) -> Result<Dataset> {
    let images: Tensor<f64> = ds.images.cast();
    let out = hadamard_batch(&images)?;
    Ok(Dataset {
        images: out.cast(),
        labels: ds.labels.clone(),
        split: ds.split,
    })
}

/// Example indices for one epoch: a ChaCha8 shuffle keyed by `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Mini-batch stream over the concatenation of per-epoch permutations.
///
/// Batch `i` covers stream positions `[i·b, (i+1)·b)`, so an epoch's
/// trailing partial batch continues into the next permutation and every
/// batch is full. Batch content depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    seed: u64,
    position: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::at_batch(n, batch_size, seed, 0)
    }

    /// Starts as if `batches` batches had already been drawn.
    pub fn at_batch(n: usize, batch_size: usize, seed: u64, batches: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(BatchIterator {
            n,
            batch_size,
            seed,
            position: batches * batch_size as u64,
            cached: None,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self) -> u64 {
        self.position / self.n as u64
    }

    fn index_at(&mut self, pos: u64) -> usize {
        let epoch = pos / self.n as u64;
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.cached = Some((epoch, epoch_permutation(self.n, self.seed, epoch)));
        }
        let (_, perm) = self.cached.as_ref().expect("just filled");
        perm[(pos % self.n as u64) as usize]
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let start = self.position;
        let out = (start..start + self.batch_size as u64)
            .map(|p| self.index_at(p))
            .collect();
        self.position += self.batch_size as u64;
        out
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_indices())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn synthetic_idx(count: usize, fill: impl Fn(usize) -> u8) -> (IdxImages, Vec<u8>) {
        let img = IdxImages {
            count,
            rows: 28,
            cols: 28,
            pixels: (0..count * 784).map(&fill).collect(),
        };
        let labels = (0..count).map(|i| (i % 10) as u8).collect();
        (img, labels)
    }

    fn write_mnist(dir: &Path, img: &IdxImages, labels: &[u8]) {
        for (i, l, _) in MNIST_FILES {
            fs::write(dir.join(i), encode_idx_images(img)).unwrap();
            fs::write(dir.join(l), encode_idx_labels(labels)).unwrap();
        }
    }

    #[test]
    fn zero_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = synthetic_idx(2, |_| 0);
        write_mnist(dir.path(), &img, &[3, 9]);
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.images.shape(), &[2, 1, 28, 28]);
        assert!(train.images.data().iter().all(|&v| v == 0.0));
        assert_eq!(train.labels, vec![3, 9]);
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn idx_bytes_round_trip_bitwise() {
        let (img, labels) = synthetic_idx(5, |i| (i * 37 % 256) as u8);
        let bytes = encode_idx_images(&img);
        assert_eq!(parse_idx_images(&bytes, "x").unwrap(), img);
        assert_eq!(encode_idx_images(&parse_idx_images(&bytes, "x").unwrap()), bytes);
        assert_eq!(parse_idx_labels(&encode_idx_labels(&labels), "y").unwrap(), labels);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (img, labels) = synthetic_idx(2, |_| 1);
        let mut bytes = encode_idx_images(&img);
        bytes[3] = 0x04; // 2052
        let err = parse_idx_images(&bytes, "f").unwrap_err();
        assert!(err.to_string().contains("bad magic"));

        let bytes = encode_idx_images(&img);
        assert!(matches!(
            parse_idx_images(&bytes[..bytes.len() - 1], "f"),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_images(&bytes[..10], "f"),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&encode_idx_images(&img), "f"),
            Err(Error::BadMagic { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        write_mnist(dir.path(), &img, &labels);
        fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_mnist(dir.path()),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));

        fs::remove_file(dir.path().join("t10k-labels-idx1-ubyte")).unwrap();
        assert!(matches!(load_mnist(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn label_range_is_checked() {
        let t = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            Dataset::new(t, vec![10], Split::Train),
            Err(Error::LabelOutOfRange(10))
        ));
    }

    #[test]
    fn cifar_single_record() {
        let bytes = encode_cifar_records(&[7], &[255; 3072]).unwrap();
        assert_eq!(bytes.len(), CIFAR_RECORD_LEN);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("test_batch.bin");
        fs::write(&p, &bytes).unwrap();
        let ds = load_cifar_files(std::slice::from_ref(&p), Split::Test).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        assert!(ds.images.data().iter().all(|&v| v == 1.0));

        fs::write(&p, &bytes[..3000]).unwrap();
        assert!(matches!(
            load_cifar_files(&[p], Split::Test),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn cifar_channel_layout_is_planar() {
        let mut px = vec![0u8; 3072];
        px[1024] = 255; // first green pixel
        let (_, pixels) = parse_cifar_records(&encode_cifar_records(&[0], &px).unwrap(), "c").unwrap();
        let t = Tensor::from_vec(&[1, 3, 32, 32], normalize(&pixels)).unwrap();
        assert_eq!(t.data()[32 * 32], 1.0);
        assert_eq!(t.data()[0], 0.0);
    }

    #[test]
    fn cifar_directory_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("cifar-10-batches-bin");
        fs::create_dir(&nested).unwrap();
        let rec = encode_cifar_records(&[1, 2], &[9; 6144]).unwrap();
        for i in 1..=5 {
            fs::write(nested.join(format!("data_batch_{i}.bin")), &rec).unwrap();
        }
        fs::write(nested.join("test_batch.bin"), &rec).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (10, 2));
    }

    #[test]
    fn hadamard_preprocess_pads_and_preserves_norm() {
        let (img, labels) = synthetic_idx(3, |i| (i * 13 % 256) as u8);
        let t = Tensor::from_vec(&[3, 1, 28, 28], normalize(&img.pixels)).unwrap();
        let ds = Dataset::new(t, labels, Split::Train).unwrap();
        let h = hadamard_preprocess(&ds).unwrap();
        assert_eq!(h.images.shape(), &[3, 1, 32, 32]);
        for i in 0..3 {
            let a: f64 = ds.gather::<f64>(&[i]).l2_norm();
            let b: f64 = h.gather::<f64>(&[i]).l2_norm();
            assert!((a - b).abs() < 1e-5);
        }
        // Transforming again recovers the zero-padded input.
        let back = hadamard_preprocess(&h).unwrap();
        for i in 0..3 {
            let orig = ds.gather::<f64>(&[i]);
            let rec = back.gather::<f64>(&[i]);
            for r in 0..32 {
                for c in 0..32 {
                    let want = if r < 28 && c < 28 { orig.data()[r * 28 + c] } else { 0.0 };
                    assert!((rec.data()[r * 32 + c] - want).abs() < 1e-6);
                }
            }
        }
        let zeros = Dataset::new(Tensor::zeros(&[1, 3, 32, 32]), vec![0], Split::Test).unwrap();
        assert!(hadamard_preprocess(&zeros)
            .unwrap()
            .images
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn mnist_epoch_arithmetic() {
        // 600 full batches per 60000-image epoch; 10000 iterations span 17 epochs.
        let mut it = BatchIterator::new(60_000, DEFAULT_BATCH_SIZE, 0).unwrap();
        for _ in 0..10_000 {
            it.next_indices();
        }
        assert_eq!(it.epoch(), 16);
        assert_eq!((10_000 * 100usize).div_ceil(60_000), 17);
    }

    #[test]
    fn carried_partial_batch_spans_epochs() {
        let mut it = BatchIterator::new(10, 4, 3).unwrap();
        let stream: Vec<usize> = (0..5).flat_map(|_| it.next_indices()).collect();
        assert_eq!(&stream[..10], epoch_permutation(10, 3, 0).as_slice());
        assert_eq!(&stream[10..20], epoch_permutation(10, 3, 1).as_slice());
        assert_ne!(epoch_permutation(10, 3, 0), epoch_permutation(10, 3, 1));
    }

    #[test]
    fn resumed_stream_matches() {
        let mut a = BatchIterator::new(257, 100, 9).unwrap();
        let full: Vec<Vec<usize>> = (0..12).map(|_| a.next_indices()).collect();
        let mut b = BatchIterator::at_batch(257, 100, 9, 7).unwrap();
        let tail: Vec<Vec<usize>> = (0..5).map(|_| b.next_indices()).collect();
        assert_eq!(&full[7..], tail.as_slice());
    }

    proptest! {
        #[test]
        fn every_epoch_covers_each_index_once(n in 1usize..300, seed in any::<u64>(), epoch in 0u64..50) {
            let mut perm = epoch_permutation(n, seed, epoch);
            perm.sort_unstable();
            prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn batches_over_whole_epochs_are_balanced(n in 1usize..60, b in 1usize..20, seed in any::<u64>()) {
            // Across lcm(n,b) stream positions every index occurs equally often.
            let g = (1..=n.min(b)).rev().find(|d| n % d == 0 && b % d == 0).unwrap();
            let batches = n / g;
            let mut it = BatchIterator::new(n, b, seed).unwrap();
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for _ in 0..batches {
                let idx = it.next_indices();
                prop_assert_eq!(idx.len(), b);
                for i in idx {
                    *counts.entry(i).or_default() += 1;
                }
            }
            prop_assert_eq!(counts.len(), n);
            prop_assert!(counts.values().all(|&c| c == b / g));
        }

        #[test]
        fn normalized_pixels_stay_in_unit_range(px in proptest::collection::vec(any::<u8>(), 1..500)) {
            prop_assert!(normalize(&px).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
