use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{Gradients, NetworkParams};
use super::tensor::Scalar;

/// A scalar function of the network parameters together with its
/// analytic gradient.
pub trait Objective<S: Scalar> {
    fn loss(&self, params: &NetworkParams<S>) -> f64;
    fn gradient(&self, params: &NetworkParams<S>) -> Gradients<S>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Lower bound on the number of coordinates probed in total.
    pub min_coords: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Denominator floor for the relative error of near-zero gradients.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            min_coords: 200,
            epsilon: 1e-3,
            tolerance: 1e-3,
            seed: 0,
            floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub tensors_covered: usize,
    pub tensors_total: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn coords_per_tensor(sizes: &[usize], min_total: usize) -> Vec<usize> {
    let per = min_total.div_ceil(sizes.len().max(1));
    let mut counts: Vec<usize> = sizes.iter().map(|&s| s.min(per)).collect();
    let mut total: usize = counts.iter().sum();
    // top up from tensors with spare coordinates, largest first
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(sizes[i]));
    while total < min_total {
        let mut progressed = false;
        for &i in &order {
            if total >= min_total {
                break;
            }
            if counts[i] < sizes[i] {
                counts[i] += 1;
                total += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    counts
}

/// Compares the analytic gradient against central finite differences on a
/// random subsample of coordinates that touches every tensor.
pub fn grad_check<S: Scalar, O: Objective<S>>(
    params: &NetworkParams<S>,
    objective: &O,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let analytic = objective.gradient(params);
    let names: Vec<String> = params.named().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let counts = coords_per_tensor(&sizes, cfg.min_coords);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();
    let mut checks = Vec::new();
    for (t, (&size, &count)) in sizes.iter().zip(&counts).enumerate() {
        for index in sample(&mut rng, size, count).into_iter() {
            let original = params.tensors()[t].data()[index];
            probe.tensors_mut()[t].data_mut()[index] = S::of(original.as_f64() + cfg.epsilon);
            let plus = objective.loss(&probe);
            probe.tensors_mut()[t].data_mut()[index] = S::of(original.as_f64() - cfg.epsilon);
            let minus = objective.loss(&probe);
            probe.tensors_mut()[t].data_mut()[index] = original;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = analytic.tensors()[t].data()[index].as_f64();
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            checks.push(CoordCheck {
                tensor: names[t].clone(),
                index,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
            });
        }
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let tensors_covered = counts.iter().filter(|&&c| c > 0).count();
    GradCheckReport {
        passed: max_rel_error < cfg.tolerance
            && tensors_covered == sizes.len()
            && checks.len() >= cfg.min_coords.min(sizes.iter().sum()),
        max_rel_error,
        tensors_covered,
        tensors_total: sizes.len(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_budget_covers_every_tensor() {
        let counts = coords_per_tensor(&[1, 16, 1000, 6, 256], 200);
        assert!(counts.iter().all(|&c| c > 0));
        assert!(counts.iter().sum::<usize>() >= 200);
        assert_eq!(counts[0], 1);
    }
}
