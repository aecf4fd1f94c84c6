//! Non-adversarial manipulations and their effect on attribution: the six
//! augmentations plus JPEG-style recompression, on a handful of images.
//!
//!     cargo run --release --example augment_and_compress

use deepattrib::attribution::{attribute, Candidate, NoiseMode, ReconstructionConfig};
use deepattrib::distance::{ssim, FeatureExtractor};
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::perturb::{augment, jpeg_like_compress, AugmentationKind, AugmentationSpec};
use deepattrib::rng::DetRng;
use deepattrib::tensor::Tensor;

fn main() {
    let fx = FeatureExtractor::standard();
    let pool = vec![
        Candidate::new(
            "g0-plain",
            GeneratorModel::build(GeneratorArch::plain_default(), 200).unwrap(),
        ),
        Candidate::new(
            "g1-style",
            GeneratorModel::build(GeneratorArch::style_default(), 201).unwrap(),
        ),
    ];
    let cfg = ReconstructionConfig {
        steps: 300,
        attempts: 2,
        noise_mode: NoiseMode::Zero,
        rng_seed: 5,
        ..Default::default()
    };

    // A few labeled images per generator.
    let mut rng = DetRng::new(77);
    let mut targets: Vec<(String, Tensor)> = Vec::new();
    for c in &pool {
        for _ in 0..3 {
            let s = rng.standard_normal_tensor(&[64]);
            let img = c
                .model
                .generate(&s, &NoiseInput::zeros(c.model.arch(), cfg.psi))
                .unwrap();
            targets.push((c.id.clone(), img));
        }
    }

    let attribute_all = |images: &[(String, Tensor)]| -> usize {
        images
            .iter()
            .filter(|(true_id, img)| {
                attribute(img, &pool, &cfg, &fx).unwrap().report.winner == *true_id
            })
            .count()
    };

    println!("{:<16} {:>9} {:>10}", "manipulation", "correct", "mean ssim");
    for kind in AugmentationKind::ALL {
        let mut ssim_acc = 0.0f32;
        let images: Vec<(String, Tensor)> = targets
            .iter()
            .enumerate()
            .map(|(i, (id, img))| {
                let y = augment(img, &AugmentationSpec { kind, rng_seed: i as u64 }).unwrap();
                ssim_acc += ssim(img, &y).unwrap();
                (id.clone(), y)
            })
            .collect();
        println!(
            "{:<16} {:>6}/{} {:>10.4}",
            kind.name(),
            attribute_all(&images),
            images.len(),
            ssim_acc / images.len() as f32
        );
    }
    for quality in [100u32, 90, 50] {
        let mut ssim_acc = 0.0f32;
        let images: Vec<(String, Tensor)> = targets
            .iter()
            .map(|(id, img)| {
                let y = jpeg_like_compress(img, quality).unwrap();
                ssim_acc += ssim(img, &y).unwrap();
                (id.clone(), y)
            })
            .collect();
        println!(
            "{:<16} {:>6}/{} {:>10.4}",
            format!("jpeg q{quality}"),
            attribute_all(&images),
            images.len(),
            ssim_acc / images.len() as f32
        );
    }
}
