//! Transferability: attack a substitute classifier trained to map images to
//! their source generator, then check whether the adversarial examples also
//! break seed-reconstruction attribution.
//!
//!     cargo run --release --example substitute_transfer

use deepattrib::attribution::{attribute, Candidate, NoiseMode, ReconstructionConfig};
use deepattrib::distance::FeatureExtractor;
use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::perturb::{train_substitute, AttackNorm, SubstituteConfig};
use deepattrib::rng::DetRng;
use deepattrib::tensor::Tensor;

fn main() {
    let fx = FeatureExtractor::standard();
    let pool = vec![
        Candidate::new(
            "g0-plain",
            GeneratorModel::build(GeneratorArch::plain_default(), 400).unwrap(),
        ),
        Candidate::new(
            "g1-style",
            GeneratorModel::build(GeneratorArch::style_default(), 401).unwrap(),
        ),
    ];

    // Labeled corpus straight from the generators.
    let mut rng = DetRng::new(8);
    let mut images: Vec<Tensor> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (li, c) in pool.iter().enumerate() {
        for _ in 0..120 {
            let s = rng.standard_normal_tensor(&[64]);
            images.push(
                c.model
                    .generate(&s, &NoiseInput::zeros(c.model.arch(), 0.7))
                    .unwrap(),
            );
            labels.push(li);
        }
    }
    let (clf, report) = train_substitute(
        &images,
        &labels,
        pool.len(),
        &SubstituteConfig {
            steps: 300,
            batch_size: 8,
            rng_seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    println!(
        "substitute classifier: train accuracy {:.3} after {} steps",
        report.train_accuracy, report.steps
    );

    let cfg = ReconstructionConfig {
        steps: 300,
        attempts: 2,
        noise_mode: NoiseMode::Zero,
        rng_seed: 10,
        ..Default::default()
    };
    let subset: Vec<usize> = (0..images.len()).step_by(40).collect();
    for eps in [0.05f32, 0.1] {
        let mut clf_ok = 0;
        let mut attr_ok = 0;
        for &i in &subset {
            let adv = clf
                .fgsm_against(&images[i], labels[i], eps, AttackNorm::LInf)
                .unwrap();
            clf_ok += (clf.predict(&adv).unwrap().0 == labels[i]) as usize;
            let winner = attribute(&adv, &pool, &cfg, &fx).unwrap().report.winner;
            attr_ok += (winner == pool[labels[i]].id) as usize;
        }
        println!(
            "fgsm eps {eps}: classifier {clf_ok}/{} correct, attribution {attr_ok}/{} correct",
            subset.len(),
            subset.len()
        );
    }
    println!("\nattacks that shatter the classifier transfer poorly to attribution");
}
