//! 2-D convolution in the cross-correlation convention with zero padding.
//!
//! Each image is lowered to a patch matrix (im2col), turning the forward
//! pass, the weight gradient and the input gradient into three matrix
//! products. The products run through register-tiled microkernels: training
//! is single-threaded CPU work, so conv throughput decides the wall-clock
//! cost of every epoch. Summation order is fixed, so results are
//! bit-reproducible run to run.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// Gradients of [`conv2d_forward`] with respect to its differentiable inputs.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output extent along one spatial axis. The division must be exact.
pub fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize, ShapeError> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(ShapeError::Invalid(format!(
            "kernel {kernel} exceeds padded extent {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(ShapeError::Invalid(format!(
            "output extent ({padded} - {kernel}) / {stride} is not exact"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[allow(clippy::type_complexity)]
fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), ShapeError> {
    let (b, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weights.dims4()?;
    if kh != kw {
        return Err(ShapeError::Invalid(format!(
            "kernel must be square, got {kh}x{kw}"
        )));
    }
    if kh % 2 == 0 {
        return Err(ShapeError::Invalid(format!("kernel size {kh} must be odd")));
    }
    if wcin != cin {
        return Err(ShapeError::Dim {
            axis: "in_channels",
            expected: cin,
            actual: wcin,
        });
    }
    if bias.len() != cout {
        return Err(ShapeError::Dim {
            axis: "bias",
            expected: cout,
            actual: bias.len(),
        });
    }
    if stride == 0 {
        return Err(ShapeError::Invalid("stride must be positive".into()));
    }
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    Ok((b, cin, h, w, cout, kh, oh, ow))
}

#[inline]
fn saxpy<T: Scalar>(acc: &mut [T], a: T, x: &[T]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o = v.mul_add(a, *o);
    }
}

// Microkernel tile sizes: MR output rows x NR accumulator columns stay in
// registers across the whole reduction (4 x 64 f32 = 16 AVX-512 lanes' worth).
const MR: usize = 4;
const NR: usize = 64;
/// Reduction lanes for the A*B^T kernel.
const KR: usize = 16;

/// `C[m x n] += A[m x k] * B[k x n]`, all row-major. Accumulation order over
/// `k` is sequential, matching the naive triple loop.
fn gemm_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut i = 0;
    while i + MR <= m {
        let mut j0 = 0;
        while j0 + NR <= n {
            let mut acc = [[T::zero(); NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j0..][..NR]);
            }
            for p in 0..k {
                let bp = &b[p * n + j0..][..NR];
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for t in 0..NR {
                        row[t] = bp[t].mul_add(av, row[t]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j0..][..NR].copy_from_slice(row);
            }
            j0 += NR;
        }
        if j0 < n {
            for r in 0..MR {
                for p in 0..k {
                    saxpy(&mut c[(i + r) * n + j0..(i + r + 1) * n], a[(i + r) * k + p], &b[p * n + j0..(p + 1) * n]);
                }
            }
        }
        i += MR;
    }
    while i < m {
        for p in 0..k {
            saxpy(&mut c[i * n..][..n], a[i * k + p], &b[p * n..][..n]);
        }
        i += 1;
    }
}

/// Chunked dot product with a fixed lane-reduction order.
#[inline]
fn dot_chunked<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); KR];
    let mut chunks_a = a.chunks_exact(KR);
    let mut chunks_b = b.chunks_exact(KR);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        for t in 0..KR {
            lanes[t] = ca[t].mul_add(cb[t], lanes[t]);
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail = x.mul_add(y, tail);
    }
    let mut sum = T::zero();
    for &l in &lanes {
        sum = sum + l;
    }
    sum + tail
}

/// `C[m x n] += A[m x j] * B[n x j]^T`: every C entry is a dot product over
/// the shared trailing axis. Tiled 4x4 with KR reduction lanes.
fn gemm_abt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, n: usize, j_len: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * j_len);
    debug_assert_eq!(b.len(), n * j_len);
    let mut i = 0;
    while i + MR <= m {
        let mut s0 = 0;
        while s0 + MR <= n {
            let mut acc = [[T::zero(); KR]; MR * MR];
            let mut jc = 0;
            while jc + KR <= j_len {
                for r in 0..MR {
                    let av = &a[(i + r) * j_len + jc..][..KR];
                    for s in 0..MR {
                        let bv = &b[(s0 + s) * j_len + jc..][..KR];
                        let cell = &mut acc[r * MR + s];
                        for t in 0..KR {
                            cell[t] = av[t].mul_add(bv[t], cell[t]);
                        }
                    }
                }
                jc += KR;
            }
            for r in 0..MR {
                for s in 0..MR {
                    let mut sum = T::zero();
                    for &l in &acc[r * MR + s] {
                        sum = sum + l;
                    }
                    for j in jc..j_len {
                        sum = a[(i + r) * j_len + j].mul_add(b[(s0 + s) * j_len + j], sum);
                    }
                    let slot = &mut c[(i + r) * n + s0 + s];
                    *slot = *slot + sum;
                }
            }
            s0 += MR;
        }
        for s in s0..n {
            for r in 0..MR {
                let d = dot_chunked(&a[(i + r) * j_len..][..j_len], &b[s * j_len..][..j_len]);
                let slot = &mut c[(i + r) * n + s];
                *slot = *slot + d;
            }
        }
        i += MR;
    }
    while i < m {
        for s in 0..n {
            let d = dot_chunked(&a[i * j_len..][..j_len], &b[s * j_len..][..j_len]);
            let slot = &mut c[i * n + s];
            *slot = *slot + d;
        }
        i += 1;
    }
}

/// Fills `patch` with the q-major lowering of one image: row `q = (ci, ky,
/// kx)` holds the padded input value seen by every output pixel `j`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    img: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    patch: &mut [T],
) {
    let p = padding as isize;
    let mut q = 0usize;
    for ci in 0..cin {
        let plane = &img[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row_base = q * oh * ow;
                q += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - p;
                    let dst = &mut patch[row_base + oy * ow..][..ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    if stride == 1 {
                        // ix = ox + kx - p; copy the in-bounds span, zero the rest.
                        let shift = kx as isize - p;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).max(0) as usize).min(ow);
                        dst[..lo.min(ow)].fill(T::zero());
                        if lo < hi {
                            dst[lo..hi]
                                .copy_from_slice(&src[(lo as isize + shift) as usize..][..hi - lo]);
                        }
                        dst[hi.max(lo).min(ow)..].fill(T::zero());
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - p;
                            *d = if ix >= 0 && ix < w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds the patch-space gradient back to image space; the exact
/// adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    grad_patch: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let p = padding as isize;
    let mut q = 0usize;
    for ci in 0..cin {
        let plane = &mut img[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row_base = q * oh * ow;
                q += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &grad_patch[row_base + oy * ow..][..ow];
                    let dst = &mut plane[iy as usize * w..][..w];
                    if stride == 1 {
                        let shift = kx as isize - p;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).max(0) as usize).min(ow);
                        if lo < hi {
                            let out = &mut dst[(lo as isize + shift) as usize..][..hi - lo];
                            for (o, &g) in out.iter_mut().zip(&src[lo..hi]) {
                                *o = *o + g;
                            }
                        }
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlates `input` (B x Cin x H x W) with `weights`
/// (Cout x Cin x K x K) plus per-channel `bias`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, ShapeError> {
    let (b, cin, h, w, cout, k, oh, ow) = check_shapes(input, weights, bias, stride, padding)?;
    let q_len = cin * k * k;
    let j_len = oh * ow;
    let mut patch = vec![T::zero(); q_len * j_len];
    let mut out = Tensor::zeros(vec![b, cout, oh, ow]);
    for bi in 0..b {
        im2col(
            &input.data()[bi * cin * h * w..][..cin * h * w],
            cin,
            h,
            w,
            k,
            stride,
            padding,
            oh,
            ow,
            &mut patch,
        );
        let out_img = &mut out.data_mut()[bi * cout * j_len..][..cout * j_len];
        for co in 0..cout {
            out_img[co * j_len..][..j_len].fill(bias.data()[co]);
        }
        gemm_acc(out_img, weights.data(), &patch, cout, q_len, j_len);
    }
    Ok(out)
}

/// Analytic gradients of the forward map at `(input, weights)` for an
/// upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>, ShapeError> {
    let bias_probe = Tensor::zeros(vec![weights.shape()[0]]);
    let (b, cin, h, w, cout, k, oh, ow) =
        check_shapes(input, weights, &bias_probe, stride, padding)?;
    let expected = [b, cout, oh, ow];
    if grad_out.shape() != expected {
        return Err(ShapeError::Mismatch {
            a: grad_out.shape().to_vec(),
            b: expected.to_vec(),
        });
    }

    let q_len = cin * k * k;
    let j_len = oh * ow;
    let mut grad_input = Tensor::zeros(input.shape().to_vec());
    let mut grad_weights = Tensor::zeros(weights.shape().to_vec());
    let mut grad_bias = Tensor::zeros(vec![cout]);

    // W^T, for the input-gradient product gP = W^T * G.
    let mut wt = vec![T::zero(); q_len * cout];
    for co in 0..cout {
        for q in 0..q_len {
            wt[q * cout + co] = weights.data()[co * q_len + q];
        }
    }

    let mut patch = vec![T::zero(); q_len * j_len];
    let mut grad_patch = vec![T::zero(); q_len * j_len];

    for bi in 0..b {
        let gout_img = &grad_out.data()[bi * cout * j_len..][..cout * j_len];

        for co in 0..cout {
            let row = &gout_img[co * j_len..][..j_len];
            let mut lanes = [T::zero(); KR];
            let mut chunks = row.chunks_exact(KR);
            for ch in chunks.by_ref() {
                for t in 0..KR {
                    lanes[t] = lanes[t] + ch[t];
                }
            }
            let mut sum = T::zero();
            for &l in &lanes {
                sum = sum + l;
            }
            for &g in chunks.remainder() {
                sum = sum + g;
            }
            grad_bias.data_mut()[co] = grad_bias.data()[co] + sum;
        }

        im2col(
            &input.data()[bi * cin * h * w..][..cin * h * w],
            cin,
            h,
            w,
            k,
            stride,
            padding,
            oh,
            ow,
            &mut patch,
        );
        gemm_abt_acc(
            grad_weights.data_mut(),
            gout_img,
            &patch,
            cout,
            q_len,
            j_len,
        );

        grad_patch.fill(T::zero());
        gemm_acc(&mut grad_patch, &wt, gout_img, q_len, cout, j_len);
        col2im_add(
            &grad_patch,
            cin,
            h,
            w,
            k,
            stride,
            padding,
            oh,
            ow,
            &mut grad_input.data_mut()[bi * cin * h * w..][..cin * h * w],
        );
    }

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_value_through() {
        let input = t(&[1, 1, 1, 1], &[5.0]);
        let kernel = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn all_ones_3x3_sums_window() {
        let input = t(&[1, 1, 3, 3], &[1.0; 9]);
        let kernel = t(&[1, 1, 3, 3], &[1.0; 9]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert!((out.data()[0] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_kernel_scales_and_biases() {
        let input = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let kernel = t(&[1, 1, 1, 1], &[2.0]);
        let bias = t(&[1], &[1.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn same_padding_keeps_extent() {
        let input = Tensor::<f64>::full(vec![2, 3, 8, 8], 0.25);
        let kernel = Tensor::<f64>::full(vec![4, 3, 3, 3], 0.1);
        let bias = Tensor::<f64>::zeros(vec![4]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 8, 8]);
        assert!(out.all_finite());
    }

    #[test]
    fn matches_naive_convolution_on_random_cases() {
        let mut rng = SplitMix64::new(99);
        for case in 0..12 {
            let b = 1 + (case % 2);
            let cin = 1 + rng.next_below(3) as usize;
            let cout = 1 + rng.next_below(5) as usize;
            let k = [1usize, 3, 5][rng.next_below(3) as usize];
            let stride = 1 + rng.next_below(2) as usize;
            let padding = rng.next_below(3) as usize;
            let h = k + stride * (1 + rng.next_below(4) as usize) - 2 * padding;
            let (h, w) = (h.max(k.saturating_sub(2 * padding)).max(1), h);
            if conv_out_extent(h, k, stride, padding).is_err() {
                continue;
            }
            let input = Tensor::new(
                vec![b, cin, h, w],
                (0..b * cin * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let weights = Tensor::new(
                vec![cout, cin, k, k],
                (0..cout * cin * k * k).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let bias = Tensor::new(vec![cout], (0..cout).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .unwrap();
            let fast = conv2d_forward(&input, &weights, &bias, stride, padding).unwrap();

            // reference: direct quadruple loop
            let oh = conv_out_extent(h, k, stride, padding).unwrap();
            let ow = oh;
            for bi in 0..b {
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias.data()[co];
                            for ci in 0..cin {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                                        {
                                            acc += input.data()
                                                [((bi * cin + ci) * h + iy as usize) * w
                                                    + ix as usize]
                                                * weights.data()
                                                    [((co * cin + ci) * k + ky) * k + kx];
                                        }
                                    }
                                }
                            }
                            let got =
                                fast.data()[((bi * cout + co) * oh + oy) * ow + ox];
                            assert!(
                                (got - acc).abs() < 1e-10,
                                "case {case} mismatch at {bi},{co},{oy},{ox}: {got} vs {acc}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn output_extent_formula_exhaustive() {
        for k in [1usize, 3, 5] {
            for stride in [1usize, 2] {
                for h in k..=16 {
                    for padding in 0..=2usize {
                        let padded = h + 2 * padding;
                        if padded < k {
                            continue;
                        }
                        let exact = (padded - k) % stride == 0;
                        let got = conv_out_extent(h, k, stride, padding);
                        if exact {
                            assert_eq!(got.unwrap(), (padded - k) / stride + 1);
                        } else {
                            assert!(got.is_err(), "h={h} k={k} s={stride} p={padding}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let input = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let kernel = Tensor::<f64>::zeros(vec![2, 4, 3, 3]);
        let bias = Tensor::<f64>::zeros(vec![2]);
        let err = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap_err();
        assert!(matches!(err, ShapeError::Dim { axis: "in_channels", .. }));
    }

    #[test]
    fn even_kernel_rejected() {
        let input = Tensor::<f64>::zeros(vec![1, 1, 4, 4]);
        let kernel = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        let bias = Tensor::<f64>::zeros(vec![1]);
        assert!(conv2d_forward(&input, &kernel, &bias, 1, 0).is_err());
    }

    #[test]
    fn zero_upstream_zeroes_all_grads() {
        let input = t(&[1, 2, 4, 4], &(0..32).map(|i| i as f64 * 0.1).collect::<Vec<_>>());
        let kernel = Tensor::<f64>::full(vec![3, 2, 3, 3], 0.2);
        let gout = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let grads = conv2d_backward(&gout, &input, &kernel, 1, 1).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_identity_backward_matches_chain_rule() {
        let input = t(&[1, 1, 1, 1], &[5.0]);
        let kernel = t(&[1, 1, 1, 1], &[1.0]);
        let gout = t(&[1, 1, 1, 1], &[0.7]);
        let grads = conv2d_backward(&gout, &input, &kernel, 1, 0).unwrap();
        assert_eq!(grads.input.data(), gout.data());
        assert!((grads.weights.data()[0] - 5.0 * 0.7).abs() < 1e-15);
        assert!((grads.bias.data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn grad_shapes_mirror_primals() {
        let input = Tensor::<f64>::full(vec![2, 3, 6, 6], 0.3);
        let kernel = Tensor::<f64>::full(vec![4, 3, 3, 3], -0.1);
        let gout = Tensor::<f64>::full(vec![2, 4, 6, 6], 1.0);
        let grads = conv2d_backward(&gout, &input, &kernel, 1, 1).unwrap();
        assert_eq!(grads.input.shape(), input.shape());
        assert_eq!(grads.weights.shape(), kernel.shape());
        assert_eq!(grads.bias.shape(), &[4]);
    }

    #[test]
    fn upstream_shape_mismatch_is_error() {
        let input = Tensor::<f64>::zeros(vec![1, 1, 4, 4]);
        let kernel = Tensor::<f64>::zeros(vec![1, 1, 3, 3]);
        let gout = Tensor::<f64>::zeros(vec![1, 1, 4, 4]);
        // padding 0 shrinks the output to 2x2, so a 4x4 upstream is wrong
        assert!(conv2d_backward(&gout, &input, &kernel, 1, 0).is_err());
    }
}
