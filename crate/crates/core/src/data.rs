//! In-memory labelled image sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar = f64> {
    images: Vec<Tensor<T>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Data(format!("label {l} at index {i} outside [0, {num_classes})")));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| im.shape() != first.shape()) {
                return Err(Error::Data(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    images[i].shape(),
                    first.shape()
                )));
            }
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&Tensor<T>, usize) {
        (&self.images[i], self.labels[i])
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    /// The first `n` samples (all of them if fewer).
    pub fn take(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(mut self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let images = self.images.split_off(n);
        let labels = self.labels.split_off(n);
        let rest = Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        };
        (self, rest)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.iter().map(|t| t.cast()).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Number of classes produced by [`synthetic_shapes`].
pub const SYNTHETIC_CLASSES: usize = 4;
/// Side length of [`synthetic_shapes`] images.
pub const SYNTHETIC_SIZE: usize = 12;

/// Procedurally drawn `[1, 12, 12]` images of four shapes: horizontal bar,
/// vertical bar, diagonal stroke and hollow square, at random positions with
/// Gaussian-ish pixel noise. Labels cycle through the classes.
pub fn synthetic_shapes<T: Scalar>(count: usize, seed: u64) -> Dataset<T> {
    let n = SYNTHETIC_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % SYNTHETIC_CLASSES;
        let mut px = vec![0.0f64; n * n];
        let len = rng.gen_range(5..9);
        let r0 = rng.gen_range(1..n - len);
        let c0 = rng.gen_range(1..n - len);
        let mut put = |r: usize, c: usize| px[r * n + c] = 1.0;
        match class {
            0 => (0..len).for_each(|k| put(r0 + len / 2, c0 + k)),
            1 => (0..len).for_each(|k| put(r0 + k, c0 + len / 2)),
            2 => (0..len).for_each(|k| put(r0 + k, c0 + k)),
            _ => {
                for k in 0..len {
                    put(r0, c0 + k);
                    put(r0 + len - 1, c0 + k);
                    put(r0 + k, c0);
                    put(r0 + k, c0 + len - 1);
                }
            }
        }
        for p in px.iter_mut() {
            let noise: f64 = (0..3).map(|_| rng.gen_range(-0.1..0.1)).sum();
            *p += noise;
        }
        images.push(Tensor::new(vec![1, n, n], px.into_iter().map(T::lit).collect()).expect("fixed shape"));
        labels.push(class);
    }
    Dataset::new(images, labels, SYNTHETIC_CLASSES).expect("labels in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_labels_and_counts() {
        let im = vec![Tensor::<f64>::zeros(&[1, 2, 2])];
        assert!(Dataset::new(im.clone(), vec![3], 3).is_err());
        assert!(Dataset::new(im.clone(), vec![0, 1], 3).is_err());
        assert!(Dataset::new(im, vec![2], 3).is_ok());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_shapes::<f64>(20, 7);
        let b = synthetic_shapes::<f64>(20, 7);
        assert_eq!(a, b);
        assert_eq!(a.sample_shape(), Some(&[1, 12, 12][..]));
        assert_eq!(a.labels()[..5], [0, 1, 2, 3, 0]);
        assert_ne!(a, synthetic_shapes::<f64>(20, 8));
    }

    #[test]
    fn take_and_split() {
        let d = synthetic_shapes::<f64>(10, 1);
        assert_eq!(d.clone().take(3).len(), 3);
        let (a, b) = d.split_at(7);
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(b.labels(), &[3, 0, 1]);
    }
}
