//! Elementwise activations and the class-axis softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Leaky rectifier: `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(input: &Tensor, slope: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&slope) || slope == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "leaky slope must lie in (0, 1), got {slope}"
        )));
    }
    Ok(input.map(|v| if v >= 0.0 { v } else { slope * v }))
}

pub fn leaky_relu_backward(grad_out: &Tensor, saved_input: &Tensor, slope: f64) -> Result<Tensor> {
    grad_out.zip(saved_input, |g, x| if x >= 0.0 { g } else { slope * g })
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Backward through sigmoid given the saved *output*.
pub fn sigmoid_backward(grad_out: &Tensor, saved_output: &Tensor) -> Result<Tensor> {
    grad_out.zip(saved_output, |g, s| g * s * (1.0 - s))
}

pub fn tanh(input: &Tensor) -> Tensor {
    input.map(f64::tanh)
}

/// Backward through tanh given the saved *output*.
pub fn tanh_backward(grad_out: &Tensor, saved_output: &Tensor) -> Result<Tensor> {
    grad_out.zip(saved_output, |g, t| g * (1.0 - t * t))
}

/// Row-wise softmax over the class axis of a `[N, K]` tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let (n, k) = input.dims2("softmax")?;
    if k < 1 {
        return Err(Error::InvalidArgument(
            "softmax needs at least one class".into(),
        ));
    }
    let mut out = vec![0.0; n * k];
    for (row_out, row_in) in out.chunks_mut(k).zip(input.data().chunks(k)) {
        let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            let e = (v - max).exp();
            *o = e;
            denom += e;
        }
        for o in row_out.iter_mut() {
            *o /= denom;
        }
    }
    Ok(Tensor::from_parts(vec![n, k], out, input.precision()))
}

/// Backward through softmax given the saved *output* probabilities:
/// `dlogits = p * (dy - sum(dy * p))` per row.
pub fn softmax_backward(grad_out: &Tensor, saved_output: &Tensor) -> Result<Tensor> {
    let (n, k) = saved_output.dims2("softmax_backward")?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape(
            "softmax_backward",
            format!("grad_out {:?} vs output {:?}", grad_out.shape(), saved_output.shape()),
        ));
    }
    let mut out = vec![0.0; n * k];
    for ((row_out, dy), p) in out
        .chunks_mut(k)
        .zip(grad_out.data().chunks(k))
        .zip(saved_output.data().chunks(k))
    {
        let dot: f64 = dy.iter().zip(p).map(|(&a, &b)| a * b).sum();
        for ((o, &g), &pv) in row_out.iter_mut().zip(dy).zip(p) {
            *o = pv * (g - dot);
        }
    }
    Ok(Tensor::from_parts(
        vec![n, k],
        out,
        grad_out.precision().promote(saved_output.precision()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::testutil::{finite_diff_check, seeded_tensor};

    #[test]
    fn leaky_relu_known_values() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]);
        let out = leaky_relu(&t, 0.2).unwrap();
        assert_eq!(out.data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn leaky_relu_rejects_bad_slope() {
        let t = Tensor::zeros(&[1]);
        assert!(leaky_relu(&t, 0.0).is_err());
        assert!(leaky_relu(&t, 1.0).is_err());
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let z = Tensor::zeros(&[1]);
        assert_eq!(sigmoid(&z).data()[0], 0.5);
        assert_eq!(tanh(&z).data()[0], 0.0);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        let t = Tensor::from_vec(&[2], vec![-800.0, 800.0]);
        let s = sigmoid(&t);
        assert!(s.all_finite());
        assert!(s.data()[0] >= 0.0 && s.data()[1] <= 1.0);
    }

    #[test]
    fn softmax_uniform_logits() {
        let t = Tensor::zeros(&[1, 3]);
        let p = softmax(&t).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = seeded_tensor(&[5, 7], 71).scale(10.0);
        let p = softmax(&t).unwrap();
        for row in p.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let input = seeded_tensor(&[4, 6], 81).scale(2.0);

        let e = finite_diff_check(
            std::slice::from_ref(&input),
            |t| leaky_relu(&t[0], 0.2),
            |t, g| Ok(vec![leaky_relu_backward(g, &t[0], 0.2)?]),
            1e-5,
        );
        assert!(e <= 1e-6, "leaky_relu rel err {e}");

        let e = finite_diff_check(
            std::slice::from_ref(&input),
            |t| Ok(sigmoid(&t[0])),
            |t, g| Ok(vec![sigmoid_backward(g, &sigmoid(&t[0]))?]),
            1e-5,
        );
        assert!(e <= 1e-6, "sigmoid rel err {e}");

        let e = finite_diff_check(
            std::slice::from_ref(&input),
            |t| Ok(tanh(&t[0])),
            |t, g| Ok(vec![tanh_backward(g, &tanh(&t[0]))?]),
            1e-5,
        );
        assert!(e <= 1e-6, "tanh rel err {e}");

        let e = finite_diff_check(
            std::slice::from_ref(&input),
            |t| softmax(&t[0]),
            |t, g| Ok(vec![softmax_backward(g, &softmax(&t[0])?)?]),
            1e-5,
        );
        assert!(e <= 1e-6, "softmax rel err {e}");
    }

    #[cfg(test)]
    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_probability_vector(logits in proptest::collection::vec(-30.0f64..30.0, 1..24)) {
                let k = logits.len();
                let t = Tensor::from_vec(&[1, k], logits);
                let p = softmax(&t).unwrap();
                let sum: f64 = p.data().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(p.data().iter().all(|&v| v >= 0.0));
            }
        }
    }
}
