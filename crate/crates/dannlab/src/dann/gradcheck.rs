use serde::Serialize;

use super::model::{to_batch, DannModel};
use crate::error::Result;
use crate::numcore::{
    central_difference, cross_entropy_batch, reference_cross_entropy, relative_error, to_f64, ReferenceStack, Tensor,
};

/// Worst relative error per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeGradcheck {
    pub extractor: f64,
    pub label_head: f64,
    pub domain_head: f64,
}

impl CompositeGradcheck {
    pub fn worst(&self) -> f64 {
        self.extractor.max(self.label_head).max(self.domain_head)
    }
}

/// Checks the gradients one training step would apply against central
/// differences of the `f64` reference forward pass.
///
/// The label batch `(x, labels)` flows through extractor and label head; the
/// domain batch `(xd, domains)` flows through extractor, gradient reversal
/// and domain head. Each head is compared against the derivative of its own
/// loss. The extractor receives `dL_label - lambda * dL_domain`, so that is
/// the finite-difference target for its parameters.
pub fn gradcheck_composite(
    model: &mut DannModel,
    x: &[&Tensor],
    labels: &[usize],
    xd: &[&Tensor],
    domains: &[usize],
) -> Result<CompositeGradcheck> {
    let shape = model.input_shape;
    let x = to_batch(x, shape)?;
    let xd = to_batch(xd, shape)?;
    let lambda = model.lambda() as f64;
    for s in model.stacks_mut() {
        s.zero_grad();
    }
    let f = model.extractor.forward(&x)?;
    let logits = model.label_head.forward(&f)?;
    let g = cross_entropy_batch(&logits, labels)?.1;
    let g = model.label_head.backward(&g)?;
    model.extractor.backward_params(&g)?;
    let f = model.extractor.forward(&xd)?;
    let logits = model.domain_head.forward(&f)?;
    let g = cross_entropy_batch(&logits, domains)?.1;
    let g = model.domain_head.backward(&g)?;
    model.extractor.backward_params(&g)?;

    let analytic: Vec<Vec<Vec<f32>>> = model
        .stacks()
        .iter()
        .map(|s| s.params().map(|p| p.grad.data().to_vec()).collect())
        .collect();
    for s in model.stacks_mut() {
        s.zero_grad();
        s.clear_caches();
    }

    let (nx, nd) = (labels.len(), domains.len());
    let (x, xd) = (to_f64(&x), to_f64(&xd));
    let mut refs = model.stacks().map(ReferenceStack::from_stack);
    let label_loss = |r: &[ReferenceStack; 3]| {
        reference_cross_entropy(&r[1].forward(&r[0].forward(&x, nx), nx), labels)
    };
    let domain_loss = |r: &[ReferenceStack; 3]| {
        reference_cross_entropy(&r[2].forward(&r[0].forward(&xd, nd), nd), domains)
    };

    let mut worst = [0.0f64; 3];
    for (si, grads) in analytic.iter().enumerate() {
        for (pi, grad) in grads.iter().enumerate() {
            for (ei, &a) in grad.iter().enumerate() {
                let value = refs[si].params_mut().nth(pi).expect("param index")[ei];
                let cell = std::cell::RefCell::new(&mut refs);
                let numeric = central_difference(
                    value,
                    |v| cell.borrow_mut()[si].params_mut().nth(pi).expect("param index")[ei] = v,
                    || {
                        let r = cell.borrow();
                        match si {
                            0 => Ok(label_loss(&r)? - lambda * domain_loss(&r)?),
                            1 => label_loss(&r),
                            _ => domain_loss(&r),
                        }
                    },
                )?;
                worst[si] = worst[si].max(relative_error(a as f64, numeric));
            }
        }
    }
    Ok(CompositeGradcheck {
        extractor: worst[0],
        label_head: worst[1],
        domain_head: worst[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dann::ModelConfig;
    use crate::numcore::{Rng, GRADCHECK_TOLERANCE};

    #[test]
    fn small_composite_model_passes() {
        let cfg = ModelConfig {
            conv1_channels: 3,
            conv2_channels: 4,
            kernel: 3,
            pool: 2,
            label_hidden: vec![6],
            domain_hidden: vec![5],
        };
        let mut rng = Rng::seed(21);
        let mut model = DannModel::build(&cfg, [10, 10, 2], 3, 0.8, &mut rng).unwrap();
        let images: Vec<Tensor> = (0..4)
            .map(|_| Tensor::new(vec![10, 10, 2], (0..200).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let report =
            gradcheck_composite(&mut model, &refs[..2], &[0, 2], &refs[2..], &[0, 1]).unwrap();
        assert!(report.worst() < GRADCHECK_TOLERANCE, "{report:?}");
    }
}

