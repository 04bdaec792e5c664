//! Finite-difference oracle shared by the kernel unit tests.
//!
//! Independent of every backward implementation it checks: gradients are
//! approximated by central differences of the forward map only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

pub fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = (a.abs() + n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Checks analytic gradients of `backward` against central differences of
/// `forward`, scalarized through a fixed random projection of the output.
/// Returns the maximum relative error over all elements of all inputs.
pub fn finite_diff_check(
    inputs: &[Tensor],
    forward: impl Fn(&[Tensor]) -> Result<Tensor>,
    backward: impl Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
    h: f64,
) -> f64 {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let out = forward(&work).expect("forward failed");
    let mut proj_rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let proj = Tensor::from_fn(out.shape(), |_| proj_rng.random_range(-1.0..1.0));

    let scalar = |t: &[Tensor]| -> f64 {
        let o = forward(t).expect("forward failed");
        o.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };

    let analytic = backward(&work, &proj).expect("backward failed");
    assert_eq!(analytic.len(), inputs.len(), "one gradient per input");

    let mut max_err: f64 = 0.0;
    for ti in 0..work.len() {
        assert_eq!(analytic[ti].shape(), work[ti].shape());
        for ei in 0..work[ti].len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let up = scalar(&work);
            work[ti].data_mut()[ei] = orig - h;
            let down = scalar(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic[ti].data()[ei], numeric));
        }
    }
    max_err
}
