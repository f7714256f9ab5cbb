//! The gradient reversal layer and a finite-difference check of the full
//! DANN model (extractor, label head, and domain head behind the GRL).
//!
//! ```bash
//! cargo run --example gradient_reversal
//! ```

use dannlab::dann::{gradcheck_composite, DannModel, ModelConfig};
use dannlab::numcore::{grl_backward, grl_forward, Rng, Tensor, GRADCHECK_TOLERANCE};

pub fn run_example() -> anyhow::Result<()> {
    let x = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0])?;
    println!("forward  {:?}", grl_forward(&x).data());
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        println!("backward lambda={lambda}: {:?}", grl_backward(&x, lambda).data());
    }

    // A model small enough to difference every parameter.
    let cfg = ModelConfig {
        conv1_channels: 3,
        conv2_channels: 4,
        kernel: 3,
        pool: 2,
        label_hidden: vec![8],
        domain_hidden: vec![6],
    };
    let mut rng = Rng::seed(3);
    let mut model = DannModel::build(&cfg, [12, 12, 1], 4, 1.0, &mut rng)?;
    let images: Vec<Tensor> = (0..6)
        .map(|_| Tensor::new(vec![12, 12, 1], (0..144).map(|_| rng.uniform()).collect()))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Tensor> = images.iter().collect();
    let report = gradcheck_composite(&mut model, &refs[..3], &[0, 1, 3], &refs[3..], &[0, 1, 1])?;
    println!(
        "{} parameters; worst relative error: extractor {:.2e}, label head {:.2e}, domain head {:.2e}",
        model.num_params(),
        report.extractor,
        report.label_head,
        report.domain_head
    );
    anyhow::ensure!(report.worst() < GRADCHECK_TOLERANCE, "gradient check failed");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
