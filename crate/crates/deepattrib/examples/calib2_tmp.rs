use deepattrib::attribution::{attribute, NoiseMode, ReconstructionConfig};
use deepattrib::distance::FeatureExtractor;
use deepattrib::harness::runs::generate_targets;
use deepattrib::harness::{build_pool, ExperimentConfig};
use deepattrib::perturb::jpeg_like_compress;

fn main() {
    let cfg = ExperimentConfig::default_for("compression", 42).unwrap();
    let built = build_pool(&cfg.pool).unwrap();
    let fx = FeatureExtractor::standard();
    let recon = ReconstructionConfig { noise_mode: NoiseMode::Zero, ..cfg.reconstruction.clone() };
    let targets = generate_targets(&built.candidates, 8, NoiseMode::Zero, recon.psi, cfg.master_seed).unwrap();
    for (i, t) in targets.iter().enumerate() {
        let xc = jpeg_like_compress(&t.image, 50).unwrap();
        let rep = attribute(&xc, &built.candidates, &recon, &fx).unwrap().report;
        if rep.winner != t.true_id {
            let (mn, mx) = t.image.data().iter().fold((1f32, 0f32), |(a, b), &v| (a.min(v), b.max(v)));
            println!("img {i} {} -> {} range [{mn:.2},{mx:.2}] dists {:?}", t.true_id, rep.winner, rep.distances);
        }
    }
    println!("probe done");
}
