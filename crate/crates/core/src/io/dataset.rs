//! Readers for IDX (MNIST-style) and CIFAR binary image sets.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{synthetic_shapes, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel affine normalization `x' = (x - mean) / scale`, applied to
/// pixels already mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Per-channel mean and standard deviation of `images` (`[C, H, W]`).
    pub fn fit<T: Scalar>(images: &[Tensor<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Data("cannot fit normalization on an empty set".into()))?;
        let c = first.dim(0);
        let plane = first.len() / c;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for im in images {
            for (ch, chunk) in im.data().chunks(plane).enumerate() {
                for &v in chunk {
                    let v = v.as_f64();
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let n = (images.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalization { mean, scale })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, image: &mut Tensor<T>) -> Result<()> {
        let c = image.dim(0);
        if c != self.channels() || self.scale.len() != c {
            return Err(Error::dim("normalization channels", c, self.channels()));
        }
        let plane = image.len() / c;
        for (ch, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
            let m = T::lit(self.mean[ch]);
            let s = T::lit(self.scale[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(())
    }
}

/// Where a labelled image set comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// An IDX image file and its IDX label file.
    Idx { images: PathBuf, labels: PathBuf },
    /// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).
    Cifar10(Vec<PathBuf>),
    /// CIFAR-100 binary files (coarse and fine label bytes); fine labels are used.
    Cifar100(Vec<PathBuf>),
    /// Procedurally generated shapes, see [`synthetic_shapes`].
    Synthetic { count: usize, seed: u64 },
}

pub const MNIST_TRAIN: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
pub const MNIST_TEST: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

impl DatasetSource {
    pub fn mnist(dir: impl AsRef<Path>, train: bool) -> Self {
        let (im, lb) = if train { MNIST_TRAIN } else { MNIST_TEST };
        DatasetSource::Idx {
            images: dir.as_ref().join(im),
            labels: dir.as_ref().join(lb),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            DatasetSource::Idx { .. } => None,
            DatasetSource::Cifar10(_) => Some(10),
            DatasetSource::Cifar100(_) => Some(100),
            DatasetSource::Synthetic { .. } => Some(crate::data::SYNTHETIC_CLASSES),
        }
    }
}

/// Parses `mnist:DIR`, `mnist-test:DIR`, `idx:IMAGES,LABELS`,
/// `cifar10:FILE[,FILE..]`, `cifar100:FILE[,FILE..]` and `synthetic[:N[:SEED]]`.
impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let paths = || -> Vec<PathBuf> { rest.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect() };
        let bad = |why: &str| Error::InvalidArgument(format!("dataset source {s:?}: {why}"));
        match kind {
            "mnist" | "mnist-train" | "mnist-test" if !rest.is_empty() => {
                Ok(DatasetSource::mnist(rest, kind != "mnist-test"))
            }
            "idx" => match paths()[..] {
                [ref images, ref labels] => Ok(DatasetSource::Idx {
                    images: images.clone(),
                    labels: labels.clone(),
                }),
                _ => Err(bad("expected idx:IMAGES,LABELS")),
            },
            "cifar10" | "cifar100" => {
                let files = paths();
                if files.is_empty() {
                    return Err(bad("expected at least one file"));
                }
                Ok(if kind == "cifar10" {
                    DatasetSource::Cifar10(files)
                } else {
                    DatasetSource::Cifar100(files)
                })
            }
            "synthetic" => {
                let mut parts = rest.split(':').filter(|p| !p.is_empty());
                let count = match parts.next() {
                    Some(n) => n.parse().map_err(|_| bad("count is not an integer"))?,
                    None => 512,
                };
                let seed = match parts.next() {
                    Some(n) => n.parse().map_err(|_| bad("seed is not an integer"))?,
                    None => 0,
                };
                Ok(DatasetSource::Synthetic { count, seed })
            }
            _ => Err(bad("unknown kind or missing path")),
        }
    }
}

/// A parsed IDX file: dimensions and the raw unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses an unsigned-byte IDX file, optionally keeping only the first
/// `limit` entries along the leading axis.
pub fn parse_idx(bytes: &[u8], path: &Path, limit: Option<usize>) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "file shorter than the IDX magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, 0, "bad IDX magic"));
    }
    if bytes[2] != 0x08 {
        return Err(format_err(path, 2, format!("IDX element type {:#04x}, only unsigned bytes are supported", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(format_err(path, 3, "IDX file declares zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(format_err(path, bytes.len(), "file ends inside the IDX dimension table"));
    }
    let mut dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let row: usize = dims[1..].iter().product();
    let total = dims[0] * row;
    if bytes.len() - header != total {
        return Err(format_err(
            path,
            header,
            format!(
                "count mismatch: dimensions {dims:?} need {total} bytes, found {}",
                bytes.len() - header
            ),
        ));
    }
    let keep = limit.map_or(dims[0], |l| l.min(dims[0]));
    dims[0] = keep;
    Ok(IdxArray {
        dims,
        data: bytes[header..header + keep * row].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_dataset<T: Scalar>(
    pixels: Vec<&[u8]>,
    shape: &[usize],
    labels: Vec<usize>,
    classes: usize,
) -> Result<Dataset<T>> {
    let images = pixels
        .into_iter()
        .map(|px| Tensor::new(shape.to_vec(), px.iter().map(|&b| T::lit(b as f64 / 255.0)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, labels, classes)
}

fn load_idx<T: Scalar>(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset<T>> {
    let im = parse_idx(&read(images)?, images, limit)?;
    let lb = parse_idx(&read(labels)?, labels, limit)?;
    if lb.dims.len() != 1 {
        return Err(format_err(labels, 3, format!("label file has {} dimensions, expected 1", lb.dims.len())));
    }
    let shape = match im.dims[1..] {
        [h, w] => vec![1, h, w],
        [c, h, w] => vec![c, h, w],
        _ => return Err(format_err(images, 3, format!("image file has {} dimensions, expected 3 or 4", im.dims.len()))),
    };
    if im.dims[0] != lb.dims[0] {
        return Err(format_err(
            labels,
            4,
            format!("count mismatch: {} images but {} labels", im.dims[0], lb.dims[0]),
        ));
    }
    let row: usize = shape.iter().product();
    let labels_usize: Vec<usize> = lb.data.iter().map(|&b| b as usize).collect();
    let classes = labels_usize.iter().max().map_or(1, |m| (m + 1).max(10));
    to_dataset(im.data.chunks(row).collect(), &shape, labels_usize, classes)
}

fn load_cifar<T: Scalar>(files: &[PathBuf], label_bytes: usize, classes: usize, limit: Option<usize>) -> Result<Dataset<T>> {
    const PIXELS: usize = 3 * 32 * 32;
    let record = label_bytes + PIXELS;
    let want = limit.unwrap_or(usize::MAX);
    let mut buffers = Vec::new();
    let mut count = 0usize;
    for path in files {
        if count >= want {
            break;
        }
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(format_err(
                path,
                bytes.len() - bytes.len() % record,
                format!("count mismatch: {} bytes is not a whole number of {record}-byte records", bytes.len()),
            ));
        }
        let n = (bytes.len() / record).min(want - count);
        for r in 0..n {
            let label = bytes[r * record + label_bytes - 1] as usize;
            if label >= classes {
                return Err(format_err(path, r * record + label_bytes - 1, format!("label {label} outside [0, {classes})")));
            }
        }
        count += n;
        buffers.push((bytes, n));
    }
    let mut pixels = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (bytes, n) in &buffers {
        for rec in bytes.chunks_exact(record).take(*n) {
            labels.push(rec[label_bytes - 1] as usize);
            pixels.push(&rec[label_bytes..]);
        }
    }
    to_dataset(pixels, &[3, 32, 32], labels, classes)
}

/// Loads pixels scaled to `[0, 1]` without normalizing them.
pub fn load_raw<T: Scalar>(source: &DatasetSource, limit: Option<usize>) -> Result<Dataset<T>> {
    match source {
        DatasetSource::Idx { images, labels } => load_idx(images, labels, limit),
        DatasetSource::Cifar10(files) => load_cifar(files, 1, 10, limit),
        DatasetSource::Cifar100(files) => load_cifar(files, 2, 100, limit),
        DatasetSource::Synthetic { count, seed } => {
            Ok(synthetic_shapes(limit.map_or(*count, |l| l.min(*count)), *seed))
        }
    }
}

/// Loads a dataset and normalizes it. With `normalization = None` the
/// statistics are fitted on the loaded samples; the ones used are returned.
pub fn load_dataset<T: Scalar>(
    source: &DatasetSource,
    limit: Option<usize>,
    normalization: Option<&Normalization>,
) -> Result<(Dataset<T>, Normalization)> {
    let raw = load_raw::<T>(source, limit)?;
    if raw.is_empty() {
        return Err(Error::Data(format!("{source:?} contains no samples")));
    }
    let norm = match normalization {
        Some(n) => n.clone(),
        None => match source {
            DatasetSource::Synthetic { .. } => Normalization::identity(1),
            _ => Normalization::fit(raw.images())?,
        },
    };
    let classes = raw.num_classes();
    let labels = raw.labels().to_vec();
    let mut images = raw.images().to_vec();
    for im in &mut images {
        norm.apply(im)?;
    }
    Ok((Dataset::new(images, labels, classes)?, norm))
}
