//! Adversarially train a toy generator on procedural blob faces and export
//! a sample sheet.
//!
//!     cargo run --release --example train_toy_gan

use deepattrib::dataset::{make_toy_dataset, ToyDatasetSpec};
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::imageio::save_image;
use deepattrib::rng::DetRng;
use deepattrib::training::{train_gan, DiscriminatorArch, DiscriminatorModel, TrainConfig};

fn main() {
    let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(64, 5)).unwrap();
    let gen = GeneratorModel::build(GeneratorArch::plain_default(), 1).unwrap();
    let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 2).unwrap();
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 6,
        rng_seed: 3,
        ..Default::default()
    };
    println!("training for {} steps...", cfg.steps);
    let (gen, disc, trace) = train_gan(&gen, &disc, &data, &cfg).unwrap();

    for step in [0usize, 100, 200, 399] {
        let (s, jd, jg) = trace.losses[step.min(trace.losses.len() - 1)];
        println!("step {s:>4}: J_D = {jd:.4}, J_G = {jg:.4}");
    }

    // Mean discriminator score gap at the end of training.
    let mut rng = DetRng::new(9);
    let real_mean: f32 = data
        .iter()
        .take(16)
        .map(|x| disc.score(x).unwrap())
        .sum::<f32>()
        / 16.0;
    let fake_mean: f32 = (0..16)
        .map(|i| {
            let s = rng.standard_normal_tensor(&[64]);
            let noise = NoiseInput::sample(gen.arch(), i, 1.0);
            disc.score(&gen.generate(&s, &noise).unwrap()).unwrap()
        })
        .sum::<f32>()
        / 16.0;
    println!("\ndiscriminator mean logit: real {real_mean:.3}, fake {fake_mean:.3}");
    println!("trained generator digest: {}", gen.digest_hex());

    let out = std::path::Path::new("out/train_toy_gan");
    std::fs::create_dir_all(out).unwrap();
    save_image(&out.join("real_sample.pgm"), &data[0]).unwrap();
    let s = rng.standard_normal_tensor(&[64]);
    let sample = gen
        .generate(&s, &NoiseInput::zeros(gen.arch(), 0.7))
        .unwrap();
    save_image(&out.join("fake_sample.pgm"), &sample).unwrap();
    std::fs::write(out.join("losses.csv"), trace.loss_csv()).unwrap();
    println!("wrote samples and loss curve to {}", out.display());
}
