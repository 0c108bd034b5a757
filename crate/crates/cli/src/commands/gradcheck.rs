use midline_core::loss::gradcheck::run_suite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss_weights;
use crate::error::{CliError, CliResult};
use crate::{info, WeightArgs};

pub fn run(
    samples: usize,
    step: f64,
    tolerance: f64,
    weights: &WeightArgs,
    perturb: Option<f64>,
    seed: u64,
) -> CliResult<()> {
    if !(step > 0.0 && step.is_finite()) || !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(CliError::validation(
            "--step and --tolerance must be positive",
        ));
    }
    let weights = loss_weights(weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let results = run_suite(&mut rng, samples, step, tolerance, &weights, perturb)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed { "pass" } else { "fail" };
        println!(
            "loss={} samples={} max_rel_error={:.3e} status={status}",
            r.kind.name(),
            r.samples,
            r.max_rel_error
        );
        if !r.passed {
            failed.push(r.kind.name());
        }
    }
    info!(
        "gradcheck",
        seed = seed,
        samples = samples,
        tolerance = tolerance,
        failed = failed.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "gradient check failed for {} at tolerance {tolerance}",
            failed.join(", ")
        )))
    }
}
