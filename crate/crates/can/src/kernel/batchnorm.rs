//! Batch normalization over the channel axis of `[N, C, H, W]` tensors.
//!
//! Train mode normalizes with the biased batch statistics and keeps an
//! exponential moving average for inference:
//! `running = (1 - momentum) * running + momentum * batch_stat`.
//! The backward pass differentiates through the batch mean and variance.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-call normalization statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormSaved {
    /// Normalized activations before the affine transform.
    pub normalized: Tensor,
    /// Per-channel `1 / sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
}

/// Batch statistics of one train-mode call, used to update running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_affine(op: &'static str, c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Train-mode forward pass. Requires at least two samples per channel
/// statistic, i.e. `N * H * W >= 2`.
pub fn batchnorm2d_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, BatchNormSaved, BatchStats)> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    check_affine("batchnorm2d", c, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::InvalidArgument(
            "batchnorm2d train mode needs at least 2 values per channel".into(),
        ));
    }
    let plane = h * w;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for ni in 0..n {
            let slice = &input.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
            acc += slice.iter().sum::<f64>();
        }
        let mu = acc / m as f64;
        let mut vacc = 0.0;
        for ni in 0..n {
            let slice = &input.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
            vacc += slice.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ci] = mu;
        var[ci] = vacc / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + epsilon).sqrt()).collect();

    let mut normalized = vec![0.0; input.len()];
    let mut out = vec![0.0; input.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (mu, is) = (mean[ci], inv_std[ci]);
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for k in 0..plane {
                let xh = (input.data()[base + k] - mu) * is;
                normalized[base + k] = xh;
                out[base + k] = g * xh + b;
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![n, c, h, w], out, input.precision()),
        BatchNormSaved {
            normalized: Tensor::from_vec(input.shape(), normalized),
            inv_std,
        },
        BatchStats { mean, var },
    ))
}

/// Inference-mode forward pass using running statistics.
pub fn batchnorm2d_infer(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    epsilon: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    check_affine("batchnorm2d", c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            "running statistics do not match channel count",
        ));
    }
    let plane = h * w;
    let mut out = vec![0.0; input.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let is = 1.0 / (running_var[ci] + epsilon).sqrt();
            let (mu, g, b) = (running_mean[ci], gamma.data()[ci], beta.data()[ci]);
            for k in 0..plane {
                out[base + k] = g * (input.data()[base + k] - mu) * is + b;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out, input.precision()))
}

/// Gradients of the train-mode forward pass.
///
/// Differentiates through the batch statistics: with `m` values per channel,
/// `dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))`.
pub fn batchnorm2d_backward(
    grad_out: &Tensor,
    saved: &BatchNormSaved,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = grad_out.dims4("batchnorm2d_backward")?;
    if saved.normalized.shape() != grad_out.shape() {
        return Err(Error::shape(
            "batchnorm2d_backward",
            "saved activations do not match grad_out",
        ));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ci in 0..c {
        let mut gg = 0.0;
        let mut gb = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for k in 0..plane {
                let dy = grad_out.data()[base + k];
                gg += dy * saved.normalized.data()[base + k];
                gb += dy;
            }
        }
        grad_gamma[ci] = gg;
        grad_beta[ci] = gb;
    }

    let mut grad_input = vec![0.0; grad_out.len()];
    for ci in 0..c {
        let mean_dy = grad_beta[ci] / m;
        let mean_dy_xhat = grad_gamma[ci] / m;
        let scale = gamma.data()[ci] * saved.inv_std[ci];
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for k in 0..plane {
                let dy = grad_out.data()[base + k];
                let xh = saved.normalized.data()[base + k];
                grad_input[base + k] = scale * (dy - mean_dy - xh * mean_dy_xhat);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![n, c, h, w], grad_input, grad_out.precision()),
        Tensor::from_vec(&[c], grad_gamma),
        Tensor::from_vec(&[c], grad_beta),
    ))
}

/// Folds batch statistics into running averages in place.
pub fn update_running_stats(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    stats: &BatchStats,
    momentum: f64,
) {
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::testutil::{finite_diff_check, seeded_tensor};

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let input = seeded_tensor(&[4, 3, 5, 5], 51);
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let (out, _, _) = batchnorm2d_train(&input, &gamma, &beta, 1e-5).unwrap();
        let plane = 25;
        for ci in 0..3 {
            let mut acc = 0.0;
            let mut sq = 0.0;
            for ni in 0..4 {
                let base = (ni * 3 + ci) * plane;
                for k in 0..plane {
                    acc += out.data()[base + k];
                    sq += out.data()[base + k] * out.data()[base + k];
                }
            }
            let m = (4 * plane) as f64;
            let mean = acc / m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() <= 1e-6, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-4, "channel {ci} var {var}");
        }
    }

    #[test]
    fn constant_channel_collapses_to_zero() {
        let input = Tensor::full(&[3, 2, 4, 4], 2.5);
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let (out, _, _) = batchnorm2d_train(&input, &gamma, &beta, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let input = Tensor::zeros(&[1, 2, 1, 1]);
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        assert!(batchnorm2d_train(&input, &gamma, &beta, 1e-5).is_err());
    }

    #[test]
    fn infer_mode_uses_running_statistics() {
        let input = Tensor::full(&[1, 1, 2, 2], 3.0);
        let gamma = Tensor::full(&[1], 2.0);
        let beta = Tensor::full(&[1], 0.5);
        let out = batchnorm2d_infer(&input, &gamma, &beta, &[1.0], &[4.0], 0.0).unwrap();
        // 2 * (3 - 1) / 2 + 0.5 = 2.5
        assert!(out.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let stats = BatchStats {
            mean: vec![2.0],
            var: vec![3.0],
        };
        update_running_stats(&mut rm, &mut rv, &stats, 0.1);
        assert!((rm[0] - 0.2).abs() < 1e-15);
        assert!((rv[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let input = seeded_tensor(&[4, 2, 3, 3], 61);
        let gamma = seeded_tensor(&[2], 62).map(|v| 1.0 + 0.3 * v);
        let beta = seeded_tensor(&[2], 63);
        let max_err = finite_diff_check(
            &[input, gamma, beta],
            |t| batchnorm2d_train(&t[0], &t[1], &t[2], 1e-5).map(|(o, _, _)| o),
            |t, gout| {
                let (_, saved, _) = batchnorm2d_train(&t[0], &t[1], &t[2], 1e-5)?;
                let (gi, gg, gb) = batchnorm2d_backward(gout, &saved, &t[1])?;
                Ok(vec![gi, gg, gb])
            },
            1e-5,
        );
        assert!(max_err <= 1e-4, "max rel err {max_err}");
    }
}
