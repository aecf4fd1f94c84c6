//! More reconstruction attempts, fewer attribution errors: the attempt
//! pools are shared across budgets, so the error curve is non-increasing
//! by construction.
//!
//!     cargo run --release --example attempts_sweep

use deepattrib::attribution::NoiseMode;
use deepattrib::harness::runs::{run_experiment, ExperimentResults};
use deepattrib::harness::{ExperimentConfig, ExperimentKind};

fn main() {
    let mut cfg = ExperimentConfig::default_for("attempts-sweep", 11).unwrap();
    // Trim the default protocol so the example finishes in about a minute.
    cfg.kind = ExperimentKind::AttemptsSweep {
        attempts_grid: vec![1, 2, 4],
    };
    cfg.images_per_generator = 3;
    cfg.reconstruction.steps = 250;
    cfg.dataset_noise = NoiseMode::Sampled;
    cfg.reconstruction.noise_mode = NoiseMode::Sampled;

    let report = run_experiment(&cfg).unwrap();
    match &report.results {
        ExperimentResults::AttemptsSweep(r) => {
            println!("attempts  error");
            for (m, e) in r.attempts_grid.iter().zip(&r.errors) {
                println!("{m:>8}  {e:.4}");
            }
        }
        _ => unreachable!("attempts-sweep config"),
    }
    println!("\n(sampled-noise mode makes single attempts unreliable on the style models,");
    println!(" which is exactly what extra restarts repair)");
}
