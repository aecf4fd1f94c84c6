//! The three attack families against attribution, with SSIM as the
//! perceptibility readout: FGSM in seed space, FGSM in image space, and
//! the adapted CW trade-off between perturbation norm and feature damage.
//!
//!     cargo run --release --example adversarial_attacks

use deepattrib::distance::{distance, ssim, DistanceKind, FeatureExtractor};
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::perturb::{cw_image, fgsm_image, fgsm_seed, AttackNorm};
use deepattrib::rng::DetRng;

fn main() {
    let fx = FeatureExtractor::standard();
    let g = GeneratorModel::build(GeneratorArch::style_default(), 300).unwrap();
    let mut rng = DetRng::new(4);
    let seed = rng.standard_normal_tensor(&[64]);
    let noise = NoiseInput::zeros(g.arch(), 0.7);
    let x = g.generate(&seed, &noise).unwrap();

    println!("seed-space FGSM (attacker perturbs the latent, then regenerates):");
    for eps in [0.0169f32, 0.039, 0.078, 0.196] {
        let adv = fgsm_seed(&g, &fx, &seed, &noise, eps, 1).unwrap();
        println!(
            "  eps {eps:>6.4}: feature distance {:>8.4}, ssim {:>7.4}",
            distance(DistanceKind::L2Feature, &x, &adv, &fx).unwrap(),
            ssim(&x, &adv).unwrap()
        );
    }

    println!("\nimage-space FGSM (one signed step on the extractor):");
    for eps in [0.01f32, 0.0588, 0.1] {
        let adv = fgsm_image(&fx, &x, eps, AttackNorm::LInf, 2).unwrap();
        let linf = x
            .data()
            .iter()
            .zip(adv.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        println!(
            "  eps {eps:>6.4}: |delta|_inf {linf:>6.4}, feature distance {:>8.4}, ssim {:>7.4}",
            distance(DistanceKind::L2Feature, &x, &adv, &fx).unwrap(),
            ssim(&x, &adv).unwrap()
        );
    }

    println!("\nadapted CW (minimize |delta|_2 - c * feature distance):");
    for c in [0.1f32, 1.0, 10.0] {
        let r = cw_image(&fx, &x, c, 120, 0.01, 3).unwrap();
        println!(
            "  c {c:>5.1}: |delta|_2 {:>7.4}, feature distance {:>8.4}, ssim {:>7.4}{}",
            r.delta_norm,
            r.feature_distance,
            ssim(&x, &r.image).unwrap(),
            if r.diverged { " (diverged)" } else { "" }
        );
    }
}
