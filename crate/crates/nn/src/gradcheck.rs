//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::Module;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per tensor; smaller tensors are probed fully.
    pub probes_per_tensor: usize,
    pub seed: u64,
    /// Tensors left out of the probe set, by dotted name.
    pub skip: Vec<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            probes_per_tensor: 6,
            seed: 7,
            skip: Vec::new(),
        }
    }
}

/// Worst probe of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn probe_count(&self) -> usize {
        self.tensors.iter().map(|t| t.probes).sum()
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Evaluates `loss` on a fresh tape.
pub fn eval_loss<M, F>(params: &M, loss: &F) -> f64
where
    M: Module,
    F: for<'t> Fn(&'t Tape, &M::Bound<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    loss(&tape, &bound).item()
}

/// Compares backward gradients of `loss` with central differences at a
/// seeded random subset of coordinates of every tensor.
pub fn grad_check<M, F>(params: &M, loss: F, config: &GradCheckConfig) -> GradCheckReport
where
    M: Module + Clone,
    F: for<'t> Fn(&'t Tape, &M::Bound<'t>) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let grads = loss(&tape, &bound).backward();
        M::grads(&bound, &grads)
    };
    let mut analytic_flat = Vec::new();
    analytic.visit(&mut |name, g| analytic_flat.push((name.to_string(), g.clone())));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tensors = Vec::new();
    for (k, (name, grad)) in analytic_flat.iter().enumerate() {
        if config.skip.iter().any(|s| s == name) || grad.is_empty() {
            continue;
        }
        let n = grad.len();
        let indices: Vec<usize> = if n <= config.probes_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, config.probes_per_tensor).into_vec()
        };
        let mut worst: Option<TensorCheck> = None;
        for &idx in &indices {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let mut seen = 0;
                p.visit_mut(&mut |_, t| {
                    if seen == k {
                        t.data_mut()[idx] += delta;
                    }
                    seen += 1;
                });
                eval_loss(&p, &loss)
            };
            let numeric = (shifted(config.eps) - shifted(-config.eps)) / (2.0 * config.eps);
            let analytic = grad.data()[idx];
            let err = relative_error(analytic, numeric);
            if worst.as_ref().is_none_or(|w| err > w.max_rel_error) {
                worst = Some(TensorCheck {
                    name: name.clone(),
                    probes: indices.len(),
                    max_rel_error: err,
                    worst_index: idx,
                    analytic,
                    numeric,
                });
            }
        }
        let Some(worst) = worst else { continue };
        tensors.push(worst);
    }
    GradCheckReport { tensors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Linear;
    use crate::tensor::Tensor;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_sigmoid_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Linear::init(4, 3, &mut rng);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let report = grad_check(
            &layer,
            |tape, p| {
                let x = tape.leaf(x.clone());
                p.apply(x).sigmoid().ln().mean()
            },
            &GradCheckConfig::default(),
        );
        assert_eq!(report.tensors.len(), 2);
        assert!(report.passed(1e-6), "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // the bias is re-recorded as a detached leaf, so the tape sees no
        // path from the loss back to it
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = Linear::init(2, 2, &mut rng);
        let report = grad_check(
            &layer,
            |tape, p| {
                let detached = tape.leaf(p.bias.value());
                let x = tape.leaf(Tensor::filled(&[1, 2], 1.0));
                x.matmul(p.weight.t()).add(detached).mul(detached).sum()
            },
            &GradCheckConfig::default(),
        );
        let bias = report.tensors.iter().find(|t| t.name == "bias").unwrap();
        assert_eq!(bias.analytic, 0.0);
        assert!(bias.max_rel_error > 0.5, "{bias:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 2.1).abs() < 1e-15);
    }
}
