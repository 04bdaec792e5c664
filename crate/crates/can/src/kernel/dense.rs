//! Fully connected layer.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Affine map `input * weight + bias` with `input [N, D]`, `weight [D, M]`,
/// `bias [M]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = input.dims2("dense")?;
    let (wd, m) = weight.dims2("dense")?;
    if wd != d {
        return Err(Error::shape(
            "dense",
            format!("input features {d} do not match weight rows {wd}"),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(
            "dense",
            format!("bias shape {:?}, expected [{m}]", bias.shape()),
        ));
    }
    let mut out = matmul(input.data(), weight.data(), n, d, m);
    for row in out.chunks_mut(m) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(Tensor::from_parts(
        vec![n, m],
        out,
        input.precision().promote(weight.precision()),
    ))
}

/// Gradients of [`dense`] with respect to input, weight and bias.
pub fn dense_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let op = "dense_backward";
    let (n, d) = saved_input.dims2(op)?;
    let (wd, m) = weight.dims2(op)?;
    if wd != d {
        return Err(Error::shape(op, "saved input and weight disagree"));
    }
    if grad_out.shape() != [n, m] {
        return Err(Error::shape(
            op,
            format!("grad_out shape {:?}, expected [{n}, {m}]", grad_out.shape()),
        ));
    }
    let grad_input = matmul_a_bt(grad_out.data(), weight.data(), n, m, d);
    let grad_weight = matmul_at_b(saved_input.data(), grad_out.data(), n, d, m);
    let mut grad_bias = vec![0.0; m];
    for row in grad_out.data().chunks(m) {
        for (g, &v) in grad_bias.iter_mut().zip(row) {
            *g += v;
        }
    }
    let prec = saved_input.precision().promote(weight.precision());
    Ok((
        Tensor::from_parts(vec![n, d], grad_input, prec),
        Tensor::from_parts(vec![d, m], grad_weight, prec),
        Tensor::from_parts(vec![m], grad_bias, prec),
    ))
}
