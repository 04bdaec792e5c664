//! 2-d convolution and fractionally-strided (transposed) convolution.
//!
//! Convolution is cross-correlation (no kernel flip). Forward and the weight
//! gradient run as one large matrix product over patch matrices; the input
//! gradient scatters back through `col2im`. The transposed convolution is a
//! separate route: zero-stuff the input, run a stride-1 correlation against
//! the flipped kernel, crop. Keeping the two routes independent lets the
//! adjoint identity between them act as a real consistency check.
//!
//! All loops are ordered so that parallel execution is bit-identical to the
//! sequential one: every output element is written by exactly one task and
//! every reduction runs in a fixed index order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Output extent of a strided correlation along one axis.
#[inline]
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Output extent of the transposed convolution along one axis.
#[inline]
pub fn conv_transpose_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> isize {
    (input as isize - 1) * stride as isize - 2 * pad as isize + kernel as isize
}

fn check_conv_geometry(
    op: &'static str,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<()> {
    if stride < 1 {
        return Err(Error::shape(op, "stride must be >= 1"));
    }
    if kh < 1 || kw < 1 {
        return Err(Error::shape(op, "kernel extents must be >= 1"));
    }
    if h + 2 * pad < kh {
        return Err(Error::shape(
            op,
            format!("input height {h} + 2*pad {pad} smaller than kernel height {kh}"),
        ));
    }
    if w + 2 * pad < kw {
        return Err(Error::shape(
            op,
            format!("input width {w} + 2*pad {pad} smaller than kernel width {kw}"),
        ));
    }
    Ok(())
}

/// Writes the patch matrix of one image in transposed layout:
/// row = output position `(i, j)`, column = `(c, u, v)`.
#[allow(clippy::too_many_arguments)]
fn im2col_t(
    image: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let row_len = c * kh * kw;
    debug_assert_eq!(out.len(), oh * ow * row_len);
    for i in 0..oh {
        for j in 0..ow {
            let row = &mut out[(i * ow + j) * row_len..(i * ow + j + 1) * row_len];
            let y0 = (i * stride) as isize - pad as isize;
            let x0 = (j * stride) as isize - pad as isize;
            let mut col = 0;
            for ch in 0..c {
                let plane = &image[ch * h * w..(ch + 1) * h * w];
                for u in 0..kh {
                    let y = y0 + u as isize;
                    for v in 0..kw {
                        let x = x0 + v as isize;
                        row[col] = if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                            plane[y as usize * w + x as usize]
                        } else {
                            0.0
                        };
                        col += 1;
                    }
                }
            }
        }
    }
}

/// Scatter counterpart of [`im2col_t`]: accumulates columns back into image
/// positions.
#[allow(clippy::too_many_arguments)]
fn col2im_t(
    cols_t: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    image: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let row_len = c * kh * kw;
    for i in 0..oh {
        for j in 0..ow {
            let row = &cols_t[(i * ow + j) * row_len..(i * ow + j + 1) * row_len];
            let y0 = (i * stride) as isize - pad as isize;
            let x0 = (j * stride) as isize - pad as isize;
            let mut col = 0;
            for ch in 0..c {
                for u in 0..kh {
                    let y = y0 + u as isize;
                    for v in 0..kw {
                        let x = x0 + v as isize;
                        if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                            image[(ch * h + y as usize) * w + x as usize] += row[col];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
}

/// Stacks the patch matrices of a whole batch, one image per slice, rows in
/// `(n, i, j)` order.
fn stacked_cols(input: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let per_image = oh * ow * c * kh * kw;
    let mut cols = vec![0.0; n * per_image];
    cols.par_chunks_mut(per_image)
        .enumerate()
        .for_each(|(ni, chunk)| {
            let image = &input.data()[ni * c * h * w..(ni + 1) * c * h * w];
            im2col_t(image, c, h, w, kh, kw, stride, pad, chunk);
        });
    cols
}

/// `[N, F, P]` to `[N*P, F]` reordering so reductions over `(n, p)` become
/// plain matrix products.
fn batch_transpose(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    let (n, f) = (s[0], s[1]);
    let p: usize = s[2..].iter().product();
    let mut out = vec![0.0; n * p * f];
    out.par_chunks_mut(p * f).enumerate().for_each(|(ni, chunk)| {
        let src = &t.data()[ni * f * p..(ni + 1) * f * p];
        for fi in 0..f {
            for pi in 0..p {
                chunk[pi * f + fi] = src[fi * p + pi];
            }
        }
    });
    out
}

fn check_conv_shapes(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4(op)?;
    let (f, wc, kh, kw) = weight.dims4(op)?;
    if wc != c {
        return Err(Error::shape(
            op,
            format!("weight expects {wc} input channels, input has {c}"),
        ));
    }
    check_conv_geometry(op, (h, w), (kh, kw), stride, pad)?;
    Ok((n, c, h, w, f, kh, kw, 0))
}

/// Strided cross-correlation with bias.
///
/// `input` is `[N, C, H, W]`, `weight` `[F, C, kH, kW]`, `bias` `[F]`;
/// output is `[N, F, H', W']` with `H' = (H + 2 pad - kH) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (_, _, _, _, f, _, _, _) = check_conv_shapes("conv2d", input, weight, stride, pad)?;
    if bias.shape() != [f] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?}, expected [{f}]", bias.shape()),
        ));
    }
    conv2d_raw(input, weight, Some(bias), stride, pad)
}

fn conv2d_raw(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (f, _, kh, kw) = weight.dims4("conv2d")?;
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let row_len = c * kh * kw;
    let cols = stacked_cols(input, kh, kw, stride, pad);

    // weight [F, row_len] * cols^T -> [F, N*oh*ow]
    let prod = matmul_a_bt(weight.data(), &cols, f, row_len, n * oh * ow);

    let mut out = vec![0.0; n * f * oh * ow];
    out.par_chunks_mut(f * oh * ow)
        .enumerate()
        .for_each(|(ni, chunk)| {
            for fi in 0..f {
                let b = bias.map_or(0.0, |b| b.data()[fi]);
                let dst = &mut chunk[fi * oh * ow..(fi + 1) * oh * ow];
                let src = &prod[fi * n * oh * ow + ni * oh * ow..][..oh * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        });
    Ok(Tensor::from_parts(
        vec![n, f, oh, ow],
        out,
        input.precision().promote(weight.precision()),
    ))
}

/// Analytic gradients of [`conv2d`] with respect to input, weight and bias.
///
/// `grad_out` must have the forward output shape for `saved_input`.
pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let op = "conv2d_backward";
    let (n, c, h, w) = saved_input.dims4(op)?;
    let (f, wc, kh, kw) = weight.dims4(op)?;
    if wc != c {
        return Err(Error::shape(
            op,
            format!("weight expects {wc} input channels, saved input has {c}"),
        ));
    }
    check_conv_geometry(op, (h, w), (kh, kw), stride, pad)?;
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    if grad_out.shape() != [n, f, oh, ow] {
        return Err(Error::shape(
            op,
            format!(
                "grad_out shape {:?}, expected [{n}, {f}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }
    let row_len = c * kh * kw;
    let p = oh * ow;

    // grad_bias
    let mut grad_bias = vec![0.0; f];
    for ni in 0..n {
        for fi in 0..f {
            let src = &grad_out.data()[(ni * f + fi) * p..(ni * f + fi + 1) * p];
            grad_bias[fi] += src.iter().sum::<f64>();
        }
    }

    let gout_t = batch_transpose(grad_out); // [N*P, F]
    let cols = stacked_cols(saved_input, kh, kw, stride, pad); // [N*P, row_len]

    // grad_weight [F, row_len] = gout_t^T * cols
    let grad_weight = matmul_at_b(&gout_t, &cols, n * p, f, row_len);

    // per-position column gradients [N*P, row_len] = gout_t * weight
    let colgrad = matmul(&gout_t, weight.data(), n * p, f, row_len);

    let mut grad_input = vec![0.0; n * c * h * w];
    grad_input
        .par_chunks_mut(c * h * w)
        .enumerate()
        .for_each(|(ni, chunk)| {
            col2im_t(
                &colgrad[ni * p * row_len..(ni + 1) * p * row_len],
                c,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                chunk,
            );
        });

    let prec = saved_input.precision().promote(weight.precision());
    Ok((
        Tensor::from_parts(vec![n, c, h, w], grad_input, prec),
        Tensor::from_parts(vec![f, c, kh, kw], grad_weight, prec),
        Tensor::from_parts(vec![f], grad_bias, prec),
    ))
}

/// Fractionally-strided convolution used to upsample.
///
/// `input` is `[N, C, H, W]`, `weight` `[C, F, kH, kW]` (input channels
/// first), `bias` `[F]`; output is `[N, F, H', W']` with
/// `H' = (H - 1) * stride - 2 pad + kH`.
///
/// Implemented by zero-stuffing the input to stride 1, correlating against
/// the flipped kernel at full padding, and cropping `pad` from each border.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let op = "conv_transpose2d";
    let (n, c, h, w) = input.dims4(op)?;
    let (wc, f, kh, kw) = weight.dims4(op)?;
    if wc != c {
        return Err(Error::shape(
            op,
            format!("weight expects {wc} input channels, input has {c}"),
        ));
    }
    if bias.shape() != [f] {
        return Err(Error::shape(
            op,
            format!("bias shape {:?}, expected [{f}]", bias.shape()),
        ));
    }
    if stride < 1 {
        return Err(Error::shape(op, "stride must be >= 1"));
    }
    let oh = conv_transpose_out_extent(h, kh, stride, pad);
    let ow = conv_transpose_out_extent(w, kw, stride, pad);
    if oh < 1 || ow < 1 {
        return Err(Error::shape(
            op,
            format!("output extent {oh}x{ow} is degenerate"),
        ));
    }
    let (oh, ow) = (oh as usize, ow as usize);

    // zero-stuffed input at stride 1
    let sh = (h - 1) * stride + 1;
    let sw = (w - 1) * stride + 1;
    let mut stuffed = vec![0.0; n * c * sh * sw];
    stuffed
        .par_chunks_mut(c * sh * sw)
        .enumerate()
        .for_each(|(ni, chunk)| {
            let src = &input.data()[ni * c * h * w..(ni + 1) * c * h * w];
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        chunk[(ch * sh + i * stride) * sw + j * stride] = src[(ch * h + i) * w + j];
                    }
                }
            }
        });
    let stuffed = Tensor::from_parts(vec![n, c, sh, sw], stuffed, input.precision());

    // kernel flipped in space, channels swapped to [F, C, kH, kW]
    let mut flipped = vec![0.0; f * c * kh * kw];
    for ci in 0..c {
        for fi in 0..f {
            for u in 0..kh {
                for v in 0..kw {
                    flipped[((fi * c + ci) * kh + (kh - 1 - u)) * kw + (kw - 1 - v)] =
                        weight.data()[((ci * f + fi) * kh + u) * kw + v];
                }
            }
        }
    }
    let flipped = Tensor::from_parts(vec![f, c, kh, kw], flipped, weight.precision());

    let full = conv2d_raw(&stuffed, &flipped, None, 1, kh - 1)?;
    let (fh, fw) = (sh + kh - 1, sw + kw - 1);
    debug_assert_eq!(full.shape(), &[n, f, fh, fw]);

    // crop `pad` from each border and add bias
    let mut out = vec![0.0; n * f * oh * ow];
    out.par_chunks_mut(f * oh * ow)
        .enumerate()
        .for_each(|(ni, chunk)| {
            for fi in 0..f {
                let b = bias.data()[fi];
                for y in 0..oh {
                    let src_row = &full.data()
                        [((ni * f + fi) * fh + y + pad) * fw + pad..][..ow];
                    let dst_row = &mut chunk[(fi * oh + y) * ow..(fi * oh + y + 1) * ow];
                    for (d, &s) in dst_row.iter_mut().zip(src_row) {
                        *d = s + b;
                    }
                }
            }
        });
    Ok(Tensor::from_parts(
        vec![n, f, oh, ow],
        out,
        input.precision().promote(weight.precision()),
    ))
}

/// Analytic gradients of [`conv_transpose2d`].
///
/// The input gradient is the strided correlation of `grad_out` with the same
/// weight, which is exactly the adjoint relationship the forward map inverts.
pub fn conv_transpose2d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let op = "conv_transpose2d_backward";
    let (n, c, h, w) = saved_input.dims4(op)?;
    let (wc, f, kh, kw) = weight.dims4(op)?;
    if wc != c {
        return Err(Error::shape(
            op,
            format!("weight expects {wc} input channels, saved input has {c}"),
        ));
    }
    let oh = conv_transpose_out_extent(h, kh, stride, pad);
    let ow = conv_transpose_out_extent(w, kw, stride, pad);
    if oh < 1 || ow < 1 {
        return Err(Error::shape(op, "degenerate forward output extent"));
    }
    let (oh, ow) = (oh as usize, ow as usize);
    if grad_out.shape() != [n, f, oh, ow] {
        return Err(Error::shape(
            op,
            format!(
                "grad_out shape {:?}, expected [{n}, {f}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }

    // grad wrt input: strided correlation of grad_out against the weight,
    // viewing it as [C, F, kH, kW] filters over the F channels of grad_out.
    let grad_input = conv2d_raw(grad_out, weight, None, stride, pad)?;
    debug_assert_eq!(grad_input.shape(), saved_input.shape());

    // grad wrt weight: patches of grad_out at the forward geometry against
    // the saved input.
    let p = h * w;
    let row_len = f * kh * kw;
    let cols = stacked_cols(grad_out, kh, kw, stride, pad); // [N*P, row_len]
    let in_t = batch_transpose(saved_input); // [N*P, C]
    let grad_weight = matmul_at_b(&in_t, &cols, n * p, c, row_len);

    let mut grad_bias = vec![0.0; f];
    for ni in 0..n {
        for fi in 0..f {
            let src = &grad_out.data()[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
            grad_bias[fi] += src.iter().sum::<f64>();
        }
    }

    let prec = saved_input.precision().promote(weight.precision());
    Ok((
        grad_input,
        Tensor::from_parts(vec![c, f, kh, kw], grad_weight, prec),
        Tensor::from_parts(vec![f], grad_bias, prec),
    ))
}
