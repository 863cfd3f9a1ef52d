use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{loss_and_grad, SeqInput, Target};
use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic - numeric| / max(|numeric|, 1e-8)
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compares the analytic masked-LM gradient against central differences on
/// `samples` coordinates. Coordinates are spread over every tensor so no
/// parameter group goes unchecked. Runs without dropout.
///
/// Key biases are skipped: softmax is shift invariant, so their gradient is
/// exactly zero and a finite difference there measures only rounding noise.
pub fn gradient_check(
    params: &ModelParams,
    seqs: &[SeqInput],
    targets: &[Target],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) || samples == 0 || targets.is_empty() {
        return Err(Error::InputDomain("gradient check needs eps > 0, samples > 0 and targets".into()));
    }
    let (_, analytic) = loss_and_grad(params, seqs, targets, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<_> = params.layout.specs.iter().filter(|s| !is_key_bias(&s.name)).collect();
    let per_tensor = samples.div_ceil(specs.len());
    let mut coords = Vec::new();
    for spec in &specs {
        let n = spec.tensor.len();
        let take = per_tensor.min(n);
        coords.extend(sample(&mut rng, n, take).into_iter().map(|i| spec.tensor.offset + i));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coordinate: 0, worst_tensor: String::new(), checked: 0 };
    for &c in &coords {
        let orig = probe.data[c];
        probe.data[c] = orig + eps;
        let (up, _) = loss_and_grad(&probe, seqs, targets, None)?;
        probe.data[c] = orig - eps;
        let (down, _) = loss_and_grad(&probe, seqs, targets, None)?;
        probe.data[c] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic[c] - numeric).abs() / numeric.abs().max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = rel;
            report.worst_coordinate = c;
        }
    }
    report.worst_tensor = specs
        .iter()
        .find(|s| s.tensor.range().contains(&report.worst_coordinate))
        .map(|s| s.name.clone())
        .unwrap_or_default();
    Ok(report)
}

fn is_key_bias(name: &str) -> bool {
    name.ends_with("attn.key.bias")
}
