//! Strict attribution has a limit: a style generator whose final block is
//! adaptive instance normalization can be forced to emit any image by
//! pinning that block's style (gamma = 0, beta = logit(target)), so it
//! wins argmin attribution for content it never produced.
//!
//!     cargo run --release --example force_output_takeover

use deepattrib::dataset::{make_toy_dataset, ToyDatasetSpec};
use deepattrib::distance::{distance, DistanceKind, FeatureExtractor};
use deepattrib::generators::{force_output, GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::rng::DetRng;

fn main() {
    let fx = FeatureExtractor::standard();
    let victim = GeneratorModel::build(GeneratorArch::style_default(), 500).unwrap();
    let honest = GeneratorModel::build(GeneratorArch::plain_default(), 501).unwrap();

    // Targets the victim never generated: procedural dataset images and an
    // image from a completely different model.
    let mut targets = make_toy_dataset(&ToyDatasetSpec::blob_faces(3, 6)).unwrap();
    let mut rng = DetRng::new(7);
    targets.push(
        honest
            .generate(
                &rng.standard_normal_tensor(&[64]),
                &NoiseInput::zeros(honest.arch(), 0.7),
            )
            .unwrap(),
    );

    for (i, target) in targets.iter().enumerate() {
        let (override_style, clamped) = force_output(&victim, target).unwrap();
        // Any seed, any noise: the override pins the output.
        let seed = rng.standard_normal_tensor(&[64]);
        let noise = NoiseInput::sample(victim.arch(), 1000 + i as u64, 0.7);
        let forced = victim
            .generate_with_override(&seed, &noise, &override_style)
            .unwrap();
        let max_err = forced
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        let d = distance(DistanceKind::L2Feature, &forced, target, &fx).unwrap();
        println!(
            "target {i}: max pixel error {max_err:.2e}, feature distance {d:.2e}{}",
            if clamped { " (saturated pixels clamped)" } else { "" }
        );
    }
    println!(
        "\nevery target is reproduced to numerical precision, so this generator \
         \"wins\" attribution\nfor arbitrary content: argmin attribution alone cannot \
         provide strict integrity."
    );
}
