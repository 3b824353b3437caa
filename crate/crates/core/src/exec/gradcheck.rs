use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradient, train_loss, ExecError, ImageBatch, ParameterSet};
use crate::arch::NetworkGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Flat index of the worst coordinate with its analytic and numeric values.
    pub worst: (usize, f64, f64),
}

/// Compares analytic gradients against central differences on `samples`
/// coordinates drawn without replacement (all of them if the network is
/// smaller). Relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator. Loss is the train-mode MSE.
pub fn finite_diff_check(
    graph: &NetworkGraph,
    params: &ParameterSet<f64>,
    batch: &ImageBatch<f64>,
    target: &ImageBatch<f64>,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, ExecError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ExecError::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = loss_and_gradient(graph, params, batch, target)?.grads;
    let total = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = rand::seq::index::sample(&mut rng, total, samples.min(total)).into_vec();

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: (0, 0.0, 0.0) };
    for idx in coords {
        let orig = probe.get_flat(idx);
        probe.set_flat(idx, orig + eps);
        let plus = train_loss(graph, &probe, batch, target)?;
        probe.set_flat(idx, orig - eps);
        let minus = train_loss(graph, &probe, batch, target)?;
        probe.set_flat(idx, orig);

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get_flat(idx);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = (idx, a, numeric);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::GraphBuilder;
    use ndarray::Array4;

    #[test]
    fn zero_step_is_rejected() {
        let mut b = GraphBuilder::new("linear", 1);
        b.conv("w", 1, 1, 1, false);
        let g = b.finish().unwrap();
        let p = ParameterSet::<f64>::init(&g, 0);
        let x = Array4::from_elem((1, 1, 2, 2), 1.0);
        let err = finite_diff_check(&g, &p, &x, &x, 0.0, 10, 0).unwrap_err();
        assert!(matches!(err, ExecError::InvalidArgument(_)));
    }

    #[test]
    fn linear_model_is_exact() {
        let mut b = GraphBuilder::new("linear", 2);
        b.conv("w", 1, 3, 1, true);
        let g = b.finish().unwrap();
        let p = ParameterSet::<f64>::init(&g, 4);
        let x = Array4::from_shape_fn((2, 2, 4, 4), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) as f64).sin());
        let t = Array4::from_shape_fn((2, 1, 4, 4), |(a, _, c, d)| ((a * 7 + c + d) as f64).cos());
        let r = finite_diff_check(&g, &p, &x, &t, 1e-5, 1000, 1).unwrap();
        assert_eq!(r.checked, p.len());
        assert!(r.max_relative_error <= 1e-9, "{r:?}");
    }
}
