use super::counter;
use crate::scalar::Scalar;

/// `c[M,N] += a[M,K] * b[K,N]`
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    counter::add((m * k * n) as u64);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if aik == T::zero() {
                continue;
            }
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
}

/// `c[M,N] += a^T * b` with `a` stored as `[K,M]`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    counter::add((m * k * n) as u64);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&api, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            if api == T::zero() {
                continue;
            }
            for (cij, &bpj) in c_row.iter_mut().zip(b_row) {
                *cij += api * bpj;
            }
        }
    }
}

/// `c[M,N] += a * b^T` with `b` stored as `[N,K]`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![T::zero(); k * n];
    for (j, b_row) in b.chunks_exact(k).enumerate() {
        for (p, &v) in b_row.iter().enumerate() {
            bt[p * n + j] = v;
        }
    }
    gemm(m, k, n, a, &bt, c);
}
