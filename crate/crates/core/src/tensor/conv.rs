use super::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn check<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [c, h, w] = input.shape()[..] else {
            return Err(Error::dim("input rank", "3 ([C,H,W])", input.ndim()));
        };
        let [p, l, d, d2] = filters.shape()[..] else {
            return Err(Error::dim("filter rank", "4 ([P,C,D,D])", filters.ndim()));
        };
        if l != c {
            return Err(Error::dim("channel axis", c, l));
        }
        if d != d2 {
            return Err(Error::dim("filter width axis", d, d2));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let out_h = conv_output_extent(h, d, stride, pad)
            .ok_or_else(|| Error::dim("height axis", format!(">= {}", d.saturating_sub(2 * pad)), h))?;
        let out_w = conv_output_extent(w, d, stride, pad)
            .ok_or_else(|| Error::dim("width axis", format!(">= {}", d.saturating_sub(2 * pad)), w))?;
        Ok(Geometry {
            channels: c,
            height: h,
            width: w,
            filters: p,
            kernel: d,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn spatial(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `[C,H,W]` into `[C*D*D, H'*W']`. Row index is `(c*D + i)*D + j`,
/// the same order a `[C,D,D]` filter is laid out in memory.
pub(crate) fn im2col<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    d: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut cols = vec![T::zero(); c * d * d * oh * ow];
    let pad = pad as isize;
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ki in 0..d {
            for kj in 0..d {
                let row = (ch * d + ki) * d + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let y = (oy * stride) as isize + ki as isize - pad;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let x = (ox * stride) as isize + kj as isize - pad;
                        if x >= 0 && x < w as isize {
                            *o = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `[C*D*D, H'*W']` back onto `[C,H,W]`.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    d: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    let pad = pad as isize;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..d {
            for kj in 0..d {
                let row = (ch * d + ki) * d + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let y = (oy * stride) as isize + ki as isize - pad;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for (ox, &g) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let x = (ox * stride) as isize + kj as isize - pad;
                        if x >= 0 && x < w as isize {
                            dst[x as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of `[C,H,W]` with `[P,C,D,D]`, no bias.
pub(crate) fn conv2d_nobias<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::check(input, filters, stride, pad)?;
    let cols = im2col(
        input.data(),
        (g.channels, g.height, g.width),
        g.kernel,
        g.stride,
        g.pad,
        (g.out_h, g.out_w),
    );
    let mut out = vec![T::zero(); g.filters * g.spatial()];
    gemm(g.filters, g.patch(), g.spatial(), filters.data(), &cols, &mut out);
    Tensor::new(vec![g.filters, g.out_h, g.out_w], out)
}

/// 2-D cross-correlation (no kernel flip) plus a per-filter bias.
///
/// `input` is `[C,H,W]`, `filters` is `[P,C,D,D]`, `bias` is `[P]`; the
/// result is `[P,H',W']` with `H' = (H + 2*pad - D) / stride + 1`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let p = filters.shape().first().copied().unwrap_or(0);
    if bias.shape() != [p] {
        return Err(Error::dim("bias axis", format!("[{p}]"), format!("{:?}", bias.shape())));
    }
    let mut out = conv2d_nobias(input, filters, stride, pad)?;
    let spatial = out.dim(1) * out.dim(2);
    for (plane, &b) in out.data_mut().chunks_exact_mut(spatial).zip(bias.data()) {
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar = f64> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::check(input, filters, stride, pad)?;
    let expected = [g.filters, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::dim(
            "grad_out shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let dims = (g.channels, g.height, g.width);
    let out_dims = (g.out_h, g.out_w);
    let cols = im2col(input.data(), dims, g.kernel, g.stride, g.pad, out_dims);

    let mut grad_filters = vec![T::zero(); g.filters * g.patch()];
    gemm_nt(g.filters, g.spatial(), g.patch(), grad_out.data(), &cols, &mut grad_filters);

    let mut grad_cols = vec![T::zero(); g.patch() * g.spatial()];
    gemm_tn(g.patch(), g.filters, g.spatial(), filters.data(), grad_out.data(), &mut grad_cols);
    let grad_input = col2im(&grad_cols, dims, g.kernel, g.stride, g.pad, out_dims);

    let grad_bias = grad_out
        .data()
        .chunks_exact(g.spatial())
        .map(|plane| plane.iter().copied().sum())
        .collect();

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        filters: Tensor::new(filters.shape().to_vec(), grad_filters)?,
        bias: Tensor::new(vec![g.filters], grad_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Tensor = crate::tensor::Tensor<f64>;

    /// Direct seven-loop cross-correlation.
    fn brute_force(input: &Tensor, filters: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (c, h, w) = (input.dim(0), input.dim(1), input.dim(2));
        let (p, d) = (filters.dim(0), filters.dim(2));
        let oh = (h + 2 * pad - d) / stride + 1;
        let ow = (w + 2 * pad - d) / stride + 1;
        let mut out = Tensor::zeros(&[p, oh, ow]);
        for k in 0..p {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.at(&[k]);
                    for l in 0..c {
                        for i in 0..d {
                            for j in 0..d {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let x = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                    acc += input.at(&[l, y as usize, x as usize]) * filters.at(&[k, l, i, j]);
                                }
                            }
                        }
                    }
                    out.set(&[k, oy, ox], acc);
                }
            }
        }
        out
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_input_gives_bias_planes() {
        let mut r = rng(3);
        let filters = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
        let bias = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d_forward(&Tensor::zeros(&[2, 5, 5]), &filters, &bias, 1, 1).unwrap();
        for (k, plane) in out.data().chunks(25).enumerate() {
            assert!(plane.iter().all(|&v| v == bias.at(&[k])));
        }
    }

    #[test]
    fn scalar_product_case() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let f = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let out = conv2d_forward(&x, &f, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out.data(), &[6.0]);

        let g = conv2d_backward(&x, &f, &Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(), 1, 0).unwrap();
        assert_eq!(g.input.data(), &[3.0]);
        assert_eq!(g.filters.data(), &[2.0]);
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn three_by_three_ramp() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let f = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&x, &f, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(out, brute_force(&x, &f, &bias, 1, 0));
    }

    #[test]
    fn matches_brute_force_with_stride_and_pad() {
        let mut r = rng(4);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)] {
            let x = Tensor::randn(&[3, 7, 6], 1.0, &mut r);
            let f = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut r);
            let b = Tensor::randn(&[4], 1.0, &mut r);
            let fast = conv2d_forward(&x, &f, &b, stride, pad).unwrap();
            let slow = brute_force(&x, &f, &b, stride, pad);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn one_hot_filter_is_shifted_crop() {
        let mut r = rng(5);
        let x = Tensor::randn(&[1, 5, 6], 1.0, &mut r);
        for i in 0..3 {
            for j in 0..3 {
                let mut f = Tensor::zeros(&[1, 1, 3, 3]);
                f.set(&[0, 0, i, j], 1.0);
                let out = conv2d_forward(&x, &f, &Tensor::zeros(&[1]), 1, 0).unwrap();
                for y in 0..3 {
                    for xx in 0..4 {
                        assert_eq!(out.at(&[0, y, xx]), x.at(&[0, y + i, xx + j]));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut r = rng(6);
        let x = Tensor::randn(&[2, 5, 5], 1.0, &mut r);
        let f = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
        let g = conv2d_backward(&x, &f, &Tensor::zeros(&[3, 3, 3]), 1, 0).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.filters.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let f = Tensor::zeros(&[3, 1, 3, 3]);
        match conv2d_forward(&x, &f, &Tensor::zeros(&[3]), 1, 0) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "channel axis"),
            other => panic!("{other:?}"),
        }
        let f = Tensor::zeros(&[3, 2, 7, 7]);
        match conv2d_forward(&x, &f, &Tensor::zeros(&[3]), 1, 0) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "height axis"),
            other => panic!("{other:?}"),
        }
        let f = Tensor::zeros(&[3, 2, 3, 3]);
        match conv2d_backward(&x, &f, &Tensor::zeros(&[3, 4, 4]), 1, 0) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "grad_out shape"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_precision_agrees_with_double() {
        let mut r = rng(7);
        let x = Tensor::randn(&[2, 6, 6], 1.0, &mut r);
        let f = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
        let b = Tensor::zeros(&[3]);
        let wide = conv2d_forward(&x, &f, &b, 1, 1).unwrap();
        let narrow = conv2d_forward(&x.cast::<f32>(), &f.cast(), &b.cast(), 1, 1).unwrap();
        assert!(wide.max_abs_diff(&narrow.cast()).unwrap() < 1e-4);
    }

    proptest::proptest! {
        #[test]
        fn linear_in_input_and_filters(seed in 0u64..500) {
            let mut r = rng(seed);
            let x1 = Tensor::randn(&[2, 6, 5], 1.0, &mut r);
            let x2 = Tensor::randn(&[2, 6, 5], 1.0, &mut r);
            let f1 = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
            let f2 = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
            let b = Tensor::zeros(&[3]);
            let conv = |x: &Tensor, f: &Tensor| conv2d_forward(x, f, &b, 1, 1).unwrap();
            let lhs = conv(&x1.add(&x2).unwrap(), &f1);
            let rhs = conv(&x1, &f1).add(&conv(&x2, &f1)).unwrap();
            proptest::prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
            let lhs = conv(&x1, &f1.add(&f2).unwrap());
            let rhs = conv(&x1, &f1).add(&conv(&x1, &f2)).unwrap();
            proptest::prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
