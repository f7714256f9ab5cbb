//! Finite-difference verification of analytic gradients.
//!
//! The numeric side is a central difference of the `f64` reference forward
//! pass ([`ReferenceStack`]) with a step of `1e-6`. A step this small almost
//! never straddles a ReLU or max-pool kink, and `f64` keeps the rounding
//! noise of the difference near `1e-10`. The relative error of one
//! coordinate is `|analytic - numeric| / max(|analytic|, |numeric|,
//! GRADCHECK_FLOOR)`; the floor keeps coordinates whose true gradient is near
//! zero from dividing the `f32` error of the analytic side by a tiny number.

use super::reference::{reference_cross_entropy, to_f64, ReferenceStack};
use super::loss::cross_entropy_batch;
use super::stack::LayerStack;
use super::tensor::Tensor;
use crate::error::Result;

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_FLOOR: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Central difference of `loss` with respect to one scalar, perturbing it in
/// place through `set` and restoring it afterwards.
pub fn central_difference(
    value: f64,
    mut set: impl FnMut(f64),
    mut loss: impl FnMut() -> Result<f64>,
) -> Result<f64> {
    set(value + GRADCHECK_STEP);
    let l_plus = loss()?;
    set(value - GRADCHECK_STEP);
    let l_minus = loss()?;
    set(value);
    Ok((l_plus - l_minus) / (2.0 * GRADCHECK_STEP))
}

/// Compares the analytic parameter gradients of mean cross-entropy over
/// `(x, labels)` against central differences. Returns the worst relative
/// error. Gradients are left zeroed.
pub fn gradcheck(stack: &mut LayerStack, x: &Tensor, labels: &[usize]) -> Result<f64> {
    stack.zero_grad();
    let logits = stack.forward(x)?;
    let (_, grad) = cross_entropy_batch(&logits, labels)?;
    stack.backward(&grad)?;
    let analytic: Vec<Vec<f32>> = stack.params().map(|p| p.grad.data().to_vec()).collect();
    stack.zero_grad();
    stack.clear_caches();

    let batch = x.shape()[0];
    let xs = to_f64(x);
    let mut reference = ReferenceStack::from_stack(stack);
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for (ei, &a) in grad.iter().enumerate() {
            let value = reference.params_mut().nth(pi).expect("param index")[ei];
            let cell = std::cell::RefCell::new(&mut reference);
            let numeric = central_difference(
                value,
                |v| cell.borrow_mut().params_mut().nth(pi).expect("param index")[ei] = v,
                || reference_cross_entropy(&cell.borrow().forward(&xs, batch), labels),
            )?;
            worst = worst.max(relative_error(a as f64, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{LayerSpec, Rng};

    fn random_batch(rng: &mut Rng, shape: &[usize], n: usize) -> Tensor {
        let mut full = vec![n];
        full.extend_from_slice(shape);
        let len = full.iter().product();
        Tensor::new(full, (0..len).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn dense_softmax_toy_net() {
        let mut rng = Rng::seed(42);
        let mut stack = LayerStack::build(
            vec![6],
            &[
                LayerSpec::Dense { outputs: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { outputs: 3 },
                LayerSpec::Softmax,
            ],
            &mut rng,
        )
        .unwrap();
        let x = random_batch(&mut rng, &[6], 4);
        let err = gradcheck(&mut stack, &x, &[0, 1, 2, 1]).unwrap();
        assert!(err < GRADCHECK_TOLERANCE, "max relative error {err}");
    }

    #[test]
    fn zero_net_bias_gradients() {
        let mut rng = Rng::seed(0);
        let mut stack =
            LayerStack::build(vec![4], &[LayerSpec::Dense { outputs: 2 }], &mut rng).unwrap();
        for p in stack.params_mut() {
            p.value.fill(0.0);
        }
        let x = Tensor::zeros(vec![1, 4]);
        let err = gradcheck(&mut stack, &x, &[1]).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_pool_dense_net() {
        let mut rng = Rng::seed(7);
        let mut stack = LayerStack::build(
            vec![2, 10, 10],
            &[
                LayerSpec::Conv2d {
                    out_channels: 3,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 4 },
            ],
            &mut rng,
        )
        .unwrap();
        assert!(stack.num_params() < 10_000);
        let x = random_batch(&mut rng, &[2, 10, 10], 3);
        let err = gradcheck(&mut stack, &x, &[3, 0, 2]).unwrap();
        assert!(err < GRADCHECK_TOLERANCE, "max relative error {err}");
    }
}
