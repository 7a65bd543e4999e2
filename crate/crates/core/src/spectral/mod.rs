//! Eigen decomposition of a convolution layer's filter bank.
//!
//! The `P` filters `h_k` of shape `[L, D, D]` are vectorized into the columns
//! of `A` (`L*D*D x P`, index order `(l, m, n)` with `n` fastest, which is the
//! in-memory order of a filter). The eigenvectors of `A A^T` give an
//! orthonormal basis `F`, and each filter's coordinates in it are
//! `w_k = F^T h_k`.

mod jacobi;

pub use jacobi::{symmetric_eigen, MAX_SWEEPS};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The original filters and biases of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T: Scalar = f64> {
    filters: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> FilterBank<T> {
    /// `filters` is `[P, L, D, D]`, `bias` is `[P]`.
    pub fn new(filters: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [p, _, d, d2] = filters.shape()[..] else {
            return Err(Error::dim("filter bank rank", 4, filters.ndim()));
        };
        if d != d2 {
            return Err(Error::dim("filter width axis", d, d2));
        }
        if bias.shape() != [p] {
            return Err(Error::dim("bias axis", format!("[{p}]"), format!("{:?}", bias.shape())));
        }
        if !filters.all_finite() || !bias.all_finite() {
            return Err(Error::Numeric("filter bank has non-finite entries".into()));
        }
        Ok(FilterBank { filters, bias })
    }

    pub fn filters(&self) -> &Tensor<T> {
        &self.filters
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>) {
        (self.filters, self.bias)
    }

    pub fn num_filters(&self) -> usize {
        self.filters.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.filters.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.filters.dim(2)
    }

    /// `L * D * D`, the length of a vectorized filter.
    pub fn filter_len(&self) -> usize {
        self.channels() * self.kernel() * self.kernel()
    }

    /// `min(P, L*D*D)`: the largest admissible basis size.
    pub fn max_rank(&self) -> usize {
        self.num_filters().min(self.filter_len())
    }
}

/// `Q` orthonormal basis filters with their eigenvalues, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis<T: Scalar = f64> {
    /// `[Q, L, D, D]`
    pub basis: Tensor<T>,
    /// `[Q]`, non-increasing and non-negative.
    pub eigenvalues: Tensor<T>,
}

impl<T: Scalar> EigenBasis<T> {
    pub fn rank(&self) -> usize {
        self.basis.dim(0)
    }
}

/// Coordinates of each original filter in the basis; row `k` is `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeights<T: Scalar = f64> {
    /// `[P, Q]`
    pub weights: Tensor<T>,
}

/// Vectorizes a bank into `A = [h_1 ... h_P]`, shape `[L*D*D, P]`.
pub fn build_filter_matrix<T: Scalar>(bank: &FilterBank<T>) -> Tensor<T> {
    let p = bank.num_filters();
    let n = bank.filter_len();
    let f = bank.filters().data();
    Tensor::from_fn(&[n, p], |idx| {
        let (row, col) = (idx / p, idx % p);
        f[col * n + row]
    })
}

/// Inverse of [`build_filter_matrix`]: columns back to `[P, L, D, D]`.
pub fn filters_from_matrix<T: Scalar>(matrix: &Tensor<T>, channels: usize, kernel: usize) -> Result<Tensor<T>> {
    let (n, p) = matrix.dims2("filter matrix")?;
    if n != channels * kernel * kernel {
        return Err(Error::dim("filter matrix rows", channels * kernel * kernel, n));
    }
    matrix.transpose()?.reshape(&[p, channels, kernel, kernel])
}

/// The full spectrum of a bank: every eigenpair of the filter Gram matrix.
#[derive(Debug, Clone)]
pub struct Decomposition<T: Scalar = f64> {
    /// `min(P, L*D*D)` eigenvalues, non-increasing; noise below
    /// `SPECTRUM_CLAMP * lambda_max` is clamped to zero.
    eigenvalues: Vec<T>,
    /// Row `i` is the unit eigenvector `f_i`.
    vectors: Vec<Vec<T>>,
    bank: FilterBank<T>,
}

impl<T: Scalar> Decomposition<T> {
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn bank(&self) -> &FilterBank<T> {
        &self.bank
    }

    pub fn max_rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of eigenvalues that survive clamping.
    pub fn numerical_rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > T::zero()).count()
    }

    /// Keeps the top `q` eigenpairs and projects the filters onto them.
    pub fn truncate(&self, q: usize) -> Result<(EigenBasis<T>, SpectralWeights<T>)> {
        if q == 0 || q > self.max_rank() {
            return Err(Error::Rank(format!("Q = {q} outside [1, {}]", self.max_rank())));
        }
        let (l, d) = (self.bank.channels(), self.bank.kernel());
        let n = self.bank.filter_len();
        let basis_data: Vec<T> = self.vectors[..q].iter().flatten().copied().collect();
        let basis = Tensor::new(vec![q, l, d, d], basis_data)?;
        let eigenvalues = Tensor::new(vec![q], self.eigenvalues[..q].to_vec())?;

        let p = self.bank.num_filters();
        let filters = self.bank.filters().data();
        let mut w = Vec::with_capacity(p * q);
        for h in filters.chunks_exact(n) {
            for f in &self.vectors[..q] {
                w.push(dot(f, h));
            }
        }
        let weights = Tensor::new(vec![p, q], w)?;
        Ok((EigenBasis { basis, eigenvalues }, SpectralWeights { weights }))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn orthonormalize_against<T: Scalar>(v: &mut [T], basis: &[Vec<T>]) -> T {
    // Two Gram-Schmidt passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for f in basis {
            let c = dot(v, f);
            for (x, &y) in v.iter_mut().zip(f) {
                *x -= c * y;
            }
        }
    }
    let norm = dot(v, v).sqrt();
    if norm > T::zero() {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is positive.
fn fix_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Computes every eigenpair of the bank's Gram matrix.
///
/// When `P < L*D*D` the smaller `A^T A` is decomposed and its eigenvectors
/// are mapped through `f_i = A v_i / sqrt(lambda_i)`. Directions with a
/// clamped (zero) eigenvalue are completed from the standard basis so the
/// result is always a full orthonormal set.
pub fn decompose<T: Scalar>(bank: &FilterBank<T>) -> Result<Decomposition<T>> {
    let p = bank.num_filters();
    let n = bank.filter_len();
    let h = bank.filters().data();
    let use_small = p < n;
    let m = p.min(n);

    let mut gram = vec![T::zero(); m * m];
    if use_small {
        for i in 0..p {
            for j in i..p {
                let g = dot(&h[i * n..(i + 1) * n], &h[j * n..(j + 1) * n]);
                gram[i * p + j] = g;
                gram[j * p + i] = g;
            }
        }
    } else {
        for col in h.chunks_exact(n) {
            for a in 0..n {
                let ha = col[a];
                if ha == T::zero() {
                    continue;
                }
                for b in a..n {
                    gram[a * n + b] += ha * col[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                gram[a * n + b] = gram[b * n + a];
            }
        }
    }

    let (raw, vecs) = symmetric_eigen(gram, m)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| raw[j].partial_cmp(&raw[i]).unwrap_or(std::cmp::Ordering::Equal));

    let lambda_max = raw[order[0]].max(T::zero());
    let floor = T::SPECTRUM_CLAMP * lambda_max;
    let eigenvalues: Vec<T> = order
        .iter()
        .map(|&i| if raw[i] > floor && raw[i] > T::zero() { raw[i] } else { T::zero() })
        .collect();

    let mut vectors: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut pending_completion = 0;
    for (rank, &i) in order.iter().enumerate() {
        if eigenvalues[rank] == T::zero() {
            pending_completion += 1;
            continue;
        }
        let mut f: Vec<T> = if use_small {
            let inv = T::one() / eigenvalues[rank].sqrt();
            let mut f = vec![T::zero(); n];
            for (k, hk) in h.chunks_exact(n).enumerate() {
                let c = vecs[k * m + i] * inv;
                for (x, &y) in f.iter_mut().zip(hk) {
                    *x += c * y;
                }
            }
            f
        } else {
            (0..n).map(|a| vecs[a * m + i]).collect()
        };
        orthonormalize_against(&mut f, &vectors);
        fix_sign(&mut f);
        vectors.push(f);
    }

    // Null-space directions: take the standard basis vector with the largest
    // residual after projecting out what is already in the basis.
    for _ in 0..pending_completion {
        let mut best: Option<(T, Vec<T>)> = None;
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let norm = orthonormalize_against(&mut e, &vectors);
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, e));
            }
        }
        let (_, mut f) = best.expect("filter length is positive");
        fix_sign(&mut f);
        vectors.push(f);
    }

    Ok(Decomposition {
        eigenvalues,
        vectors,
        bank: bank.clone(),
    })
}

/// Top-`q` eigen basis and the spectral weights of every filter in it.
pub fn eigen_decompose<T: Scalar>(bank: &FilterBank<T>, q: usize) -> Result<(EigenBasis<T>, SpectralWeights<T>)> {
    if q == 0 || q > bank.max_rank() {
        return Err(Error::Rank(format!("Q = {q} outside [1, {}]", bank.max_rank())));
    }
    decompose(bank)?.truncate(q)
}

/// Fraction of the spectrum's mass held by its top `q` eigenvalues.
pub fn energy_ratio<T: Scalar>(eigenvalues: &[T], q: usize) -> Result<T> {
    if q == 0 || q > eigenvalues.len() {
        return Err(Error::Rank(format!("Q = {q} outside [1, {}]", eigenvalues.len())));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("eigenvalues must be sorted descending".into()));
    }
    let lambda_max = eigenvalues[0].max(T::zero());
    let floor = T::SPECTRUM_CLAMP * lambda_max;
    let clamped: Vec<T> = eigenvalues
        .iter()
        .map(|&l| if l > floor && l > T::zero() { l } else { T::zero() })
        .collect();
    let total: T = clamped.iter().copied().sum();
    if total == T::zero() {
        return Err(Error::DegenerateSpectrum);
    }
    let kept: T = clamped[..q].iter().copied().sum();
    Ok(kept / total)
}

/// Rebuilds `h_k = sum_i W[k, i] f_i`; the bias passes through unchanged.
pub fn reconstruct<T: Scalar>(
    basis: &EigenBasis<T>,
    weights: &SpectralWeights<T>,
    bias: &Tensor<T>,
) -> Result<FilterBank<T>> {
    let q = basis.rank();
    let (p, wq) = weights.weights.dims2("spectral weights")?;
    if wq != q {
        return Err(Error::Rank(format!("weights have {wq} columns but basis has {q} filters")));
    }
    let shape = basis.basis.shape();
    let n = basis.basis.len() / q;
    let mut out = vec![T::zero(); p * n];
    crate::tensor::gemm(p, q, n, weights.weights.data(), basis.basis.data(), &mut out);
    let filters = Tensor::new(vec![p, shape[1], shape[2], shape[3]], out)?;
    FilterBank::new(filters, bias.clone())
}

/// `max |F^T F - I|` for a `[Q, ...]` stack of basis filters.
pub fn orthogonality_residual<T: Scalar>(basis: &Tensor<T>) -> T {
    let q = basis.dim(0);
    let n = basis.len() / q;
    let rows: Vec<&[T]> = basis.data().chunks_exact(n).collect();
    let mut worst = T::zero();
    for i in 0..q {
        for j in i..q {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((dot(rows[i], rows[j]) - target).abs());
        }
    }
    worst
}
