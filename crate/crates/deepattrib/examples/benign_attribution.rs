//! Attribute images back to the generator that produced them.
//!
//! Builds the standard three-generator pool, generates a few labeled
//! images, and runs argmin attribution on each. Run with:
//!
//!     cargo run --release --example benign_attribution

use deepattrib::attribution::{attribute, Candidate, NoiseMode, ReconstructionConfig};
use deepattrib::distance::FeatureExtractor;
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::rng::DetRng;

fn main() {
    let fx = FeatureExtractor::standard();
    let pool = vec![
        Candidate::new(
            "g0-plain",
            GeneratorModel::build(GeneratorArch::plain_default(), 100).unwrap(),
        ),
        Candidate::new(
            "g1-style",
            GeneratorModel::build(GeneratorArch::style_default(), 101).unwrap(),
        ),
        Candidate::new(
            "g2-style",
            GeneratorModel::build(GeneratorArch::style_default(), 102).unwrap(),
        ),
    ];
    // Shorter reconstructions than the full protocol keep this example fast.
    let cfg = ReconstructionConfig {
        steps: 400,
        attempts: 2,
        noise_mode: NoiseMode::Zero,
        rng_seed: 7,
        ..Default::default()
    };

    let mut rng = DetRng::new(55);
    let mut correct = 0;
    let n = 9;
    for i in 0..n {
        let source = &pool[i % pool.len()];
        let seed = rng.standard_normal_tensor(&[source.model.arch().seed_dim()]);
        let image = source
            .model
            .generate(&seed, &NoiseInput::zeros(source.model.arch(), cfg.psi))
            .unwrap();
        let outcome = attribute(&image, &pool, &cfg, &fx).unwrap();
        let report = outcome.report;
        let ok = report.winner == source.id;
        correct += ok as usize;
        println!(
            "image {i} from {:<8} -> winner {:<8} margin {:>8.4}  {}",
            source.id,
            report.winner,
            report.margin.unwrap_or(0.0),
            if ok { "ok" } else { "WRONG" }
        );
        for id in &report.ranking {
            println!("    {id:<8} distance {:.6}", report.distances[id]);
        }
    }
    println!("\nattributed {correct}/{n} correctly");
}
