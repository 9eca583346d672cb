//! 2x2 max pooling and its nearest-neighbour upsampling counterpart.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// 2x2 window, stride 2. Returns the pooled tensor and the flat input index
/// of each window maximum (first index in row-major order wins ties), which
/// the backward pass uses for gradient routing.
pub fn maxpool2_forward<T: Scalar>(
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<u32>), ShapeError> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ShapeError::Invalid(format!(
            "max pool needs even extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let data = input.data();
    let out_data = out.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        let out_base = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = base + (2 * oy) * w + 2 * ox;
                let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = candidates[0];
                let mut best_v = data[best];
                for &idx in &candidates[1..] {
                    if data[idx] > best_v {
                        best_v = data[idx];
                        best = idx;
                    }
                }
                out_data[out_base + oy * ow + ox] = best_v;
                argmax[out_base + oy * ow + ox] = best as u32;
            }
        }
    }
    Ok((out, argmax))
}

/// Scatters the upstream gradient to each window's argmax position.
pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>, ShapeError> {
    if grad_out.len() != argmax.len() {
        return Err(ShapeError::Invalid(format!(
            "argmax cache holds {} entries, upstream has {}",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_input = Tensor::zeros(input_shape.to_vec());
    let gi = grad_input.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gi[idx as usize] = gi[idx as usize] + g;
    }
    Ok(grad_input)
}

/// Replicates each pixel into a 2x2 block.
pub fn upsample2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let (b, c, h, w) = input.dims4()?;
    let mut out = Tensor::zeros(vec![b, c, 2 * h, 2 * w]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..b * c {
        let sbase = plane * h * w;
        let dbase = plane * 4 * h * w;
        for y in 0..h {
            let srow = &src[sbase + y * w..][..w];
            for half in 0..2 {
                let drow = &mut dst[dbase + (2 * y + half) * 2 * w..][..2 * w];
                for (x, &v) in srow.iter().enumerate() {
                    drow[2 * x] = v;
                    drow[2 * x + 1] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Sums the four upstream gradients belonging to each source pixel.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let (b, c, h2, w2) = grad_out.dims4()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(ShapeError::Invalid(format!(
            "upsample gradient needs even extents, got {h2}x{w2}"
        )));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad_input = Tensor::zeros(vec![b, c, h, w]);
    let src = grad_out.data();
    let dst = grad_input.data_mut();
    for plane in 0..b * c {
        let sbase = plane * h2 * w2;
        let dbase = plane * h * w;
        for y in 0..h {
            let top = &src[sbase + (2 * y) * w2..][..w2];
            let bot = &src[sbase + (2 * y + 1) * w2..][..w2];
            let drow = &mut dst[dbase + y * w..][..w];
            for x in 0..w {
                drow[x] = top[2 * x] + top[2 * x + 1] + bot[2 * x] + bot[2 * x + 1];
            }
        }
    }
    Ok(grad_input)
}
