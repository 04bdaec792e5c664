//! Dense n-dimensional arrays.
//!
//! [`Tensor`] is the universal value type of the crate: images, weights,
//! activations and gradients are all row-major flat buffers with a shape.
//! Image tensors are ordered `(batch, channel, height, width)`.
//!
//! Arithmetic always runs in f64. A tensor tagged [`Precision::F32`] rounds
//! every stored value through f32 after each operation, so reduced-precision
//! results can be produced without a second code path; the default is full
//! 64-bit storage.

use crate::error::{Error, Result};

/// Storage precision of a tensor. Accumulation is always f64; `F32` rounds
/// stored values to f32 on every write-back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    /// Widest precision wins when operands disagree.
    pub fn promote(self, other: Precision) -> Precision {
        if self == Precision::F64 || other == Precision::F64 {
            Precision::F64
        } else {
            Precision::F32
        }
    }

    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }
}

/// Dense tensor: a shape and a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    /// Builds a tensor from parts, quantizing if the precision asks for it.
    pub fn from_parts(shape: Vec<usize>, mut data: Vec<f64>, precision: Precision) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if precision == Precision::F32 {
            for v in &mut data {
                *v = *v as f32 as f64;
            }
        }
        Tensor {
            shape,
            data,
            precision,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_parts(shape.to_vec(), data, Precision::F64)
    }

    /// Like [`Tensor::from_vec`] but checks the element count.
    pub fn try_from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor::from_vec(shape, data))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            precision: Precision::F64,
        }
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.len()],
            precision: other.precision,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            precision: Precision::F64,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| f(i)).collect())
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Returns a copy stored at the given precision.
    pub fn with_precision(&self, precision: Precision) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.clone(), precision)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. The caller is responsible for
    /// keeping F32 tensors quantized; kernels funnel writes through
    /// [`Tensor::from_parts`] instead.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        let v = self.precision.quantize(v);
        self.data.fill(v);
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            precision: self.precision,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
            self.precision,
        )
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            self.precision.promote(other.precision),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Adds `other * s` into self elementwise, in place.
    pub fn axpy(&mut self, s: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "axpy",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = self.precision.quantize(*a + s * b);
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.sum() / self.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index helper for `[N, C, H, W]` tensors.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 4);
        let (cc, hh, ww) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    /// Expects exactly four dimensions and returns them.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::shape(
                op,
                format!("expected 4-d tensor, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(
                op,
                format!("expected 2-d tensor, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Row-major matrix product: `a` is `m x k`, `b` is `k x n`.
///
/// Parallelized over output rows; every output element is produced by exactly
/// one task with a fixed inner summation order, so the result is bit-identical
/// to the sequential loop regardless of thread count.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    use rayon::prelude::*;
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        });
    out
}

/// `a^T * b` where `a` is `k x m` and `b` is `k x n`; result `m x n`.
pub fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    use rayon::prelude::*;
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            for kk in 0..k {
                let av = a[kk * m + i];
                if av == 0.0 {
                    continue;
                }
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        });
    out
}

/// `a * b^T` where `a` is `m x k` and `b` is `n x k`; result `m x n`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    use rayon::prelude::*;
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&av, &bv) in a_row.iter().zip(b_row) {
                    acc += av * bv;
                }
                *o = acc;
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_len_agree() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.len(), 24);
        assert_eq!(t.shape(), &[2, 3, 4]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::try_from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn f32_precision_rounds_storage() {
        let v = 0.1f64 + 0.2f64; // not representable exactly in f32
        let t = Tensor::from_parts(vec![1], vec![v], Precision::F32);
        assert_eq!(t.data()[0], v as f32 as f64);
        assert_ne!(t.data()[0], v);
        // default stays full width
        let t64 = Tensor::from_vec(&[1], vec![v]);
        assert_eq!(t64.data()[0], v);
    }

    #[test]
    fn precision_promotion() {
        assert_eq!(Precision::F32.promote(Precision::F64), Precision::F64);
        assert_eq!(Precision::F32.promote(Precision::F32), Precision::F32);
    }

    #[test]
    fn matmul_small_known() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect(); // 4x5
        let base = matmul(&a, &b, 3, 4, 5);

        // a^T path: build a_t as 4x3 then multiply a_t^T * b
        let mut a_t = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                a_t[j * 3 + i] = a[i * 4 + j];
            }
        }
        assert_eq!(matmul_at_b(&a_t, &b, 4, 3, 5), base);

        let mut b_t = vec![0.0; 20];
        for i in 0..4 {
            for j in 0..5 {
                b_t[j * 4 + i] = b[i * 5 + j];
            }
        }
        assert_eq!(matmul_a_bt(&a, &b_t, 3, 4, 5), base);
    }
}
