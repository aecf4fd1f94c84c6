//! Fine-tune a trained parent into near-replica children and try to tell
//! the family members apart by reconstruction distance.
//!
//!     cargo run --release --example finetune_family

use deepattrib::attribution::{attribute, Candidate, NoiseMode, ReconstructionConfig};
use deepattrib::dataset::{make_toy_dataset, ToyDatasetSpec};
use deepattrib::distance::FeatureExtractor;
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::rng::DetRng;
use deepattrib::training::{
    fine_tune, relative_param_distance, train_gan, DiscriminatorArch, DiscriminatorModel,
    TrainConfig,
};

fn main() {
    let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(48, 1)).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 6,
        rng_seed: 2,
        ..Default::default()
    };
    println!("training the parent ({} steps)...", cfg.steps);
    let gen0 = GeneratorModel::build(GeneratorArch::plain_default(), 3).unwrap();
    let disc0 = DiscriminatorModel::build(DiscriminatorArch::standard(), 4).unwrap();
    let (parent, disc, _) = train_gan(&gen0, &disc0, &data, &cfg).unwrap();

    let mut pool = vec![Candidate::new("parent", parent.clone())];
    for steps in [20usize, 100, 500] {
        let child = fine_tune(&parent, &disc, &data, steps, &cfg).unwrap();
        println!(
            "child-{steps}: digest {}..., relative param distance {:.5}",
            &child.digest_hex()[..12],
            relative_param_distance(&parent, &child)
        );
        pool.push(Candidate::new(format!("child-{steps}"), child));
    }

    let recon = ReconstructionConfig {
        steps: 500,
        attempts: 2,
        noise_mode: NoiseMode::Zero,
        rng_seed: 5,
        ..Default::default()
    };
    let fx = FeatureExtractor::standard();
    let mut rng = DetRng::new(6);
    let mut correct = 0;
    let trials = 8;
    for t in 0..trials {
        let source = &pool[t % pool.len()];
        let s = rng.standard_normal_tensor(&[64]);
        let image = source
            .model
            .generate(&s, &NoiseInput::zeros(source.model.arch(), recon.psi))
            .unwrap();
        let report = attribute(&image, &pool, &recon, &fx).unwrap().report;
        let ok = report.winner == source.id;
        correct += ok as usize;
        println!(
            "image from {:<9} -> {:<9} (margin {:.5})",
            source.id,
            report.winner,
            report.margin.unwrap_or(0.0)
        );
    }
    println!("\n{correct}/{trials} attributed to the exact family member");
}
