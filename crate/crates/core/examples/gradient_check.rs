//! Prints the layer shapes of the dual-stream network and checks its
//! analytic gradients against central differences in f64.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tankdef::a3c::{A3cObjective, Hyperparams, SyntheticStep};
use tankdef::nn::{grad_check, Architecture, GradCheckConfig, NetworkParams};

fn main() {
    let arch = Architecture::dual_stream(4);
    let p = arch.shape_pipeline();
    println!(
        "input {:?} -> conv1 {:?} -> conv2 {:?} (x{} streams) -> concat {} -> fc {} -> policy {} / value {}",
        p.input, p.conv1, p.conv2, p.streams, p.concat, p.hidden, p.policy, p.value
    );

    let params = NetworkParams::<f32>::init(arch, 1).cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let plane = 84 * 84;
    let steps = (0..3)
        .map(|i| SyntheticStep {
            state: (0..4 * plane).map(|_| rng.gen::<f64>()).collect(),
            mask: Some((0..plane).map(|j| if (j / 84) % 20 < 8 { 1.0 } else { 0.0 }).collect()),
            action: i,
            reward: if i == 1 { 10.0 } else { 0.0 },
        })
        .collect();
    // steps much above 1e-6 start crossing ReLU kinks in conv1
    let objective = A3cObjective::new(&params, steps, 0.5, false, &Hyperparams::default()).unwrap();
    let report = grad_check(&params, &objective, &GradCheckConfig { epsilon: 1e-6, ..GradCheckConfig::default() });

    println!(
        "{} coordinates over {}/{} tensors, max relative error {:.3e}, passed {}",
        report.checks.len(),
        report.tensors_covered,
        report.tensors_total,
        report.max_rel_error,
        report.passed
    );
    if let Some(w) = report.worst() {
        println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", w.tensor, w.index, w.analytic, w.numeric);
    }
}
