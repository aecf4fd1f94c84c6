//! Gradient-based attacks against attribution.
//!
//! All three objectives maximize the feature distance from the original
//! image, which is exactly zero (with zero gradient) at the unperturbed
//! point. Gradients are therefore evaluated at a seeded, infinitesimally
//! jittered copy; the perturbation itself is always applied to the original
//! input, so epsilon = 0 returns it bit-exactly.

use crate::autodiff::{NodeId, Tape};
use crate::distance::{DistanceKind, FeatureExtractor};
use crate::generators::{GeneratorModel, NoiseInput};
use crate::rng::{tag, DetRng};
use crate::tensor::Tensor;

use super::PerturbError;

const GRAD_JITTER: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackNorm {
    LInf,
    L2,
}

/// Feature distance d_f(a, b) with the target side detached, as a tape node
/// (actual norm, smoothed at zero so its gradient stays finite).
fn feature_distance_node(
    fx: &FeatureExtractor,
    tape: &mut Tape,
    image: NodeId,
    target_feats: Tensor,
) -> Result<NodeId, PerturbError> {
    let feats = fx.features_on_tape(tape, image)?;
    let t = tape.constant(target_feats);
    let diff = tape.sub(feats, t)?;
    let sq = tape.l2_norm_sq(diff)?;
    let tiny = tape.constant(Tensor::scalar(1e-12));
    let smoothed = tape.add(sq, tiny)?;
    Ok(tape.sqrt(smoothed)?)
}

/// Seed-space attack: perturb the seed under an l-inf budget so the
/// generated image's features move away from the original output. The
/// generator and extractor are differentiated as one composed model.
pub fn fgsm_seed(
    g: &GeneratorModel,
    fx: &FeatureExtractor,
    seed: &Tensor,
    noise: &NoiseInput,
    eps: f32,
    jitter_seed: u64,
) -> Result<Tensor, PerturbError> {
    if eps < 0.0 {
        return Err(PerturbError::Epsilon(eps));
    }
    let original = g.generate(seed, noise)?;
    let target_feats = fx.extract(&original)?;

    let mut rng = DetRng::derived(jitter_seed, &[tag("fgsm-seed-jitter")]);
    let jittered = Tensor::new(
        seed.shape().to_vec(),
        seed.data()
            .iter()
            .map(|&v| v + rng.normal_f32() * GRAD_JITTER)
            .collect(),
    )?;

    let mut tape = Tape::new();
    let s_node = tape.variable(jittered);
    let noise_nodes: Vec<NodeId> = noise
        .layers
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let img = g.forward_on_tape(&mut tape, s_node, &noise_nodes, noise.psi, &[], None)?;
    let d = feature_distance_node(fx, &mut tape, img, target_feats)?;
    let grads = tape.backward(d)?;
    let grad = grads
        .get(s_node)
        .ok_or(PerturbError::Epsilon(eps))
        .expect("seed participates in the objective");
    if !grad.all_finite() {
        return Err(PerturbError::Tensor(
            grad.check_finite().unwrap_err(),
        ));
    }
    // Ascent: move the seed to *maximize* feature distance.
    let adv_seed = Tensor::new(
        seed.shape().to_vec(),
        seed.data()
            .iter()
            .zip(grad.data())
            .map(|(&s, &gv)| s + eps * sign(gv))
            .collect(),
    )?;
    Ok(g.generate(&adv_seed, noise)?)
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Image-space attack: a single gradient step on the feature distance,
/// differentiating through the extractor only. `LInf` takes a signed step
/// (clamped so the per-pixel bound is exact); `L2` steps along the
/// normalized gradient.
pub fn fgsm_image(
    fx: &FeatureExtractor,
    x: &Tensor,
    eps: f32,
    norm: AttackNorm,
    jitter_seed: u64,
) -> Result<Tensor, PerturbError> {
    if eps < 0.0 {
        return Err(PerturbError::Epsilon(eps));
    }
    let target_feats = fx.extract(x)?;
    let mut rng = DetRng::derived(jitter_seed, &[tag("fgsm-image-jitter")]);
    let jittered = Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .map(|&v| v + rng.normal_f32() * GRAD_JITTER)
            .collect(),
    )?;
    let mut tape = Tape::new();
    let x_node = tape.variable(jittered);
    let d = feature_distance_node(fx, &mut tape, x_node, target_feats)?;
    let grads = tape.backward(d)?;
    let grad = grads.get(x_node).expect("image participates");
    if !grad.all_finite() {
        return Err(PerturbError::Tensor(grad.check_finite().unwrap_err()));
    }
    let data: Vec<f32> = match norm {
        AttackNorm::LInf => x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&p, &gv)| (p + eps * sign(gv)).clamp(0.0, 1.0))
            .collect(),
        AttackNorm::L2 => {
            let n = grad.l2_norm().max(1e-12);
            x.data()
                .iter()
                .zip(grad.data())
                .map(|(&p, &gv)| (p + eps * gv / n).clamp(0.0, 1.0))
                .collect()
        }
    };
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}

#[derive(Debug, Clone)]
pub struct CwResult {
    pub image: Tensor,
    /// l2 norm of the final perturbation.
    pub delta_norm: f32,
    /// Feature distance achieved by the final perturbation.
    pub feature_distance: f32,
    /// True if the optimizer hit a non-finite loss and returned the best
    /// iterate seen so far.
    pub diverged: bool,
}

/// Adapted CW-style attack: minimize `||delta||_2 - c * d_f(x, x + delta)`
/// with Adam, clamping `x + delta` into [0,1] after every step.
pub fn cw_image(
    fx: &FeatureExtractor,
    x: &Tensor,
    c: f32,
    steps: usize,
    lr: f32,
    jitter_seed: u64,
) -> Result<CwResult, PerturbError> {
    if c <= 0.0 {
        return Err(PerturbError::CwWeight(c));
    }
    let target_feats = fx.extract(x)?;
    let mut rng = DetRng::derived(jitter_seed, &[tag("cw-init")]);
    let mut delta = Tensor::new(
        x.shape().to_vec(),
        (0..x.numel()).map(|_| rng.normal_f32() * 1e-3).collect(),
    )?;
    // Keep x + delta feasible from the start.
    delta = project(x, &delta);

    let mut adam = crate::adam::AdamState::new(x.shape(), lr);
    let mut best = delta.clone();
    let mut best_obj = f32::INFINITY;
    let mut diverged = false;

    for _ in 0..steps {
        let mut tape = Tape::new();
        let d_node = tape.variable(delta.clone());
        let x_node = tape.constant(x.clone());
        let adv = tape.add(x_node, d_node)?;
        let dist = feature_distance_node(fx, &mut tape, adv, target_feats.clone())?;
        let dsq = tape.l2_norm_sq(d_node)?;
        let tiny = tape.constant(Tensor::scalar(1e-12));
        let dsq_s = tape.add(dsq, tiny)?;
        let dnorm = tape.sqrt(dsq_s)?;
        let weighted = tape.scale(dist, -c)?;
        let obj = tape.add(dnorm, weighted)?;
        let val = tape.value(obj).item();
        if !val.is_finite() {
            diverged = true;
            break;
        }
        if val < best_obj {
            best_obj = val;
            best = delta.clone();
        }
        let mut grads = tape.backward(obj)?;
        let g = grads.take(d_node).expect("delta participates");
        if !g.all_finite() {
            diverged = true;
            break;
        }
        delta = project(x, &adam.step(&delta, &g)?);
    }
    let final_delta = if diverged { best } else { delta };
    let image = Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(final_delta.data())
            .map(|(&p, &d)| (p + d).clamp(0.0, 1.0))
            .collect(),
    )?;
    let delta_norm = final_delta.l2_norm();
    let feature_distance = crate::distance::distance(DistanceKind::L2Feature, x, &image, fx)?;
    Ok(CwResult {
        image,
        delta_norm,
        feature_distance,
        diverged,
    })
}

/// Clamp delta so that x + delta stays in [0,1].
fn project(x: &Tensor, delta: &Tensor) -> Tensor {
    Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(delta.data())
            .map(|(&p, &d)| (p + d).clamp(0.0, 1.0) - p)
            .collect(),
    )
    .expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::GeneratorArch;

    fn test_image(seed: u64) -> Tensor {
        let mut rng = DetRng::new(seed);
        Tensor::new(
            vec![1, 32, 32],
            (0..1024).map(|_| 0.2 + 0.6 * rng.uniform_f32()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epsilon_returns_the_input_bit_exactly() {
        let fx = FeatureExtractor::standard();
        let x = test_image(1);
        for norm in [AttackNorm::LInf, AttackNorm::L2] {
            let y = fgsm_image(&fx, &x, 0.0, norm, 3).unwrap();
            assert!(x
                .data()
                .iter()
                .zip(y.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let g = GeneratorModel::build(GeneratorArch::style_default(), 2).unwrap();
        let mut rng = DetRng::new(4);
        let s = rng.standard_normal_tensor(&[64]);
        let noise = NoiseInput::zeros(g.arch(), 0.7);
        let x0 = g.generate(&s, &noise).unwrap();
        let y = fgsm_seed(&g, &fx, &s, &noise, 0.0, 5).unwrap();
        assert!(x0
            .data()
            .iter()
            .zip(y.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn linf_bound_is_exact_per_pixel() {
        let fx = FeatureExtractor::standard();
        for seed in 0..20u64 {
            let x = test_image(seed);
            let eps = 0.0588;
            let y = fgsm_image(&fx, &x, eps, AttackNorm::LInf, seed).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!((a - b).abs() <= eps + 1e-7);
                assert!((0.0..=1.0).contains(b));
            }
        }
    }

    #[test]
    fn fgsm_moves_features_monotonically_with_eps() {
        let fx = FeatureExtractor::standard();
        let x = test_image(9);
        let mut last = 0.0f32;
        for eps in [0.0f32, 0.01, 0.0588, 0.1] {
            let y = fgsm_image(&fx, &x, eps, AttackNorm::LInf, 11).unwrap();
            let d = crate::distance::distance(DistanceKind::L2Feature, &x, &y, &fx).unwrap();
            assert!(d >= last - 1e-5, "eps {eps}: {d} < {last}");
            last = d;
        }
    }

    #[test]
    fn cw_with_vanishing_c_shrinks_delta_to_nothing() {
        let fx = FeatureExtractor::standard();
        let x = test_image(12);
        let r = cw_image(&fx, &x, 1e-6, 300, 1e-5, 13).unwrap();
        assert!(!r.diverged);
        assert!(r.delta_norm < 1e-3, "delta norm {}", r.delta_norm);
    }

    #[test]
    fn larger_c_buys_larger_perturbations() {
        let fx = FeatureExtractor::standard();
        let x = test_image(14);
        let mut norms = Vec::new();
        for c in [0.1f32, 1.0, 10.0] {
            let r = cw_image(&fx, &x, c, 60, 0.01, 15).unwrap();
            assert!(r.image.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
            norms.push(r.delta_norm);
        }
        assert!(norms[0] < norms[1] && norms[1] < norms[2], "{norms:?}");
    }

    #[test]
    fn attack_objectives_are_differentiable() {
        // Gradient check of the composed attack objective (extractor path).
        let build = |seed: u64| {
            let fx = FeatureExtractor::standard();
            let mut rng = DetRng::new(seed);
            let x = Tensor::new(
                vec![1, 32, 32],
                (0..1024).map(|_| 0.2 + 0.6 * rng.uniform_f32()).collect(),
            )
            .unwrap();
            let target = fx.extract(&x).unwrap();
            let jit = Tensor::new(
                vec![1, 32, 32],
                x.data().iter().map(|&v| v + rng.normal_f32() * 0.05).collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let xv = tape.variable(jit);
            let d = feature_distance_node(&fx, &mut tape, xv, target).unwrap();
            (tape, d, vec![xv])
        };
        let err = crate::gradcheck::check_resampled(
            build,
            &[1, 2, 3],
            crate::gradcheck::DEFAULT_H,
            crate::gradcheck::DEFAULT_TOL,
        )
        .unwrap();
        assert!(err < crate::gradcheck::DEFAULT_TOL);
    }
}
