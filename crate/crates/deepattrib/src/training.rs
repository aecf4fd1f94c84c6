//! Toy-scale adversarial training and fine-tuning.
//!
//! Alternating updates (one discriminator step, one generator step per
//! iteration) with the non-saturating losses in their numerically stable
//! softplus forms:
//!
//! ```text
//! J_D = mean(softplus(-z_real)) + mean(softplus(z_fake))
//! J_G = -mean(softplus(z_fake))      (= mean(log(1 - sigmoid(z_fake))))
//! ```
//!
//! Training is single-threaded and deterministic in the config seed. The
//! attributed generators come out of here as trained artifacts, and
//! fine-tuning a parent for a handful of extra steps produces the
//! near-replica child models the parent/child attribution experiments need.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adam::AdamState;
use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::generators::{FormatError, GeneratorError, GeneratorModel, NoiseInput};
use crate::rng::{tag, DetRng};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: J_D = {j_d}, J_G = {j_g}")]
    Diverged { step: usize, j_d: f32, j_g: f32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset image shape {got:?} does not match generator output {expected:?}")]
    DataShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid discriminator architecture: {0}")]
    InvalidArch(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Stride-2 conv stack ending in a dense head that emits one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub image_shape: [usize; 3],
    /// Output channels of each stride-2 3x3 conv layer.
    pub conv_channels: Vec<usize>,
}

impl DiscriminatorArch {
    pub fn standard() -> Self {
        DiscriminatorArch {
            image_shape: [1, 32, 32],
            conv_channels: vec![8, 16],
        }
    }

    fn validate(&self) -> Result<(), TrainingError> {
        let [c, h, w] = self.image_shape;
        if c == 0 || h == 0 || w == 0 || self.conv_channels.is_empty() {
            return Err(TrainingError::InvalidArch(
                "degenerate discriminator shape".into(),
            ));
        }
        if h % (1 << self.conv_channels.len()) != 0 || w % (1 << self.conv_channels.len()) != 0 {
            return Err(TrainingError::InvalidArch(format!(
                "{h}x{w} input not divisible by 2^{} stride chain",
                self.conv_channels.len()
            )));
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        let [_, h, w] = self.image_shape;
        let down = 1 << self.conv_channels.len();
        self.conv_channels.last().unwrap() * (h / down) * (w / down)
    }

    fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut in_ch = self.image_shape[0];
        for (i, &out_ch) in self.conv_channels.iter().enumerate() {
            specs.push((format!("conv{i}.w"), vec![out_ch, in_ch, 3, 3]));
            specs.push((format!("conv{i}.b"), vec![out_ch]));
            in_ch = out_ch;
        }
        specs.push(("head.w".into(), vec![self.head_inputs(), 1]));
        specs.push(("head.b".into(), vec![1, 1]));
        specs.sort_by(|a, b| a.0.cmp(&b.0));
        specs
    }
}

/// Discriminator: conv stack plus dense head, scalar logit per image.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    arch: DiscriminatorArch,
    params: BTreeMap<String, Tensor>,
}

impl DiscriminatorModel {
    pub fn build(arch: DiscriminatorArch, init_rng_seed: u64) -> Result<Self, TrainingError> {
        arch.validate()?;
        let mut rng = DetRng::derived(init_rng_seed, &[tag("discriminator-init")]);
        let mut params = BTreeMap::new();
        for (name, shape) in arch.param_specs() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                rng.normal_tensor(&shape, 0.05)
            };
            params.insert(name, t);
        }
        Ok(DiscriminatorModel { arch, params })
    }

    pub fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn with_params(&self, params: BTreeMap<String, Tensor>) -> Self {
        DiscriminatorModel {
            arch: self.arch.clone(),
            params,
        }
    }

    pub fn digest_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.serialize());
        hex::encode(h.finalize())
    }

    pub fn serialize(&self) -> Vec<u8> {
        let json = crate::canonical_json(&self.arch).expect("arch serializes");
        crate::generators::write_container(&json, &self.params)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, TrainingError> {
        let (json, params) = crate::generators::read_container(bytes, |json| {
            let arch: DiscriminatorArch = serde_json::from_str(json)
                .map_err(|e| FormatError::ArchJson(e.to_string()))?;
            Ok(arch.param_specs())
        })?;
        let arch: DiscriminatorArch =
            serde_json::from_str(&json).map_err(|e| FormatError::ArchJson(e.to_string()))?;
        arch.validate()?;
        Ok(DiscriminatorModel { arch, params })
    }

    fn param_node(
        &self,
        tape: &mut Tape,
        bindings: Option<&BTreeMap<String, NodeId>>,
        name: &str,
    ) -> NodeId {
        match bindings {
            Some(b) => b[name],
            None => tape.constant(self.params[name].clone()),
        }
    }

    /// Score one image node; returns a [1,1] logit node.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        image: NodeId,
        bindings: Option<&BTreeMap<String, NodeId>>,
    ) -> Result<NodeId, TrainingError> {
        let got = tape.value(image).shape().to_vec();
        if got != self.arch.image_shape {
            return Err(TrainingError::DataShape {
                expected: self.arch.image_shape.to_vec(),
                got,
            });
        }
        let mut x = image;
        for i in 0..self.arch.conv_channels.len() {
            let w = self.param_node(tape, bindings, &format!("conv{i}.w"));
            let b = self.param_node(tape, bindings, &format!("conv{i}.b"));
            x = tape.conv2d(x, w, Some(b), 2, 1)?;
            x = tape.relu(x)?;
        }
        let flat = tape.reshape(x, vec![1, self.arch.head_inputs()])?;
        let w = self.param_node(tape, bindings, "head.w");
        let b = self.param_node(tape, bindings, "head.b");
        let h = tape.matmul(flat, w)?;
        Ok(tape.add(h, b)?)
    }

    /// Logit for one image outside any training tape.
    pub fn score(&self, image: &Tensor) -> Result<f32, TrainingError> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let logit = self.forward_on_tape(&mut tape, x, None)?;
        Ok(tape.value(logit).item())
    }
}

/// Value-level GAN losses in the stable softplus forms. Finite for any
/// finite logits.
pub fn gan_losses(real_logits: &[f32], fake_logits: &[f32]) -> (f32, f32) {
    fn softplus(z: f32) -> f32 {
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }
    let mean = |v: &[f32], f: &dyn Fn(f32) -> f32| -> f32 {
        if v.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0f32;
        for &z in v {
            acc += f(z);
        }
        acc / v.len() as f32
    };
    let j_d = mean(real_logits, &|z| softplus(-z)) + mean(fake_logits, &|z| softplus(z));
    let j_g = -mean(fake_logits, &|z| softplus(z));
    (j_d, j_g)
}

/// Tape-level discriminator loss from per-sample logit nodes.
pub fn disc_loss_on_tape(
    tape: &mut Tape,
    real_logits: &[NodeId],
    fake_logits: &[NodeId],
) -> Result<NodeId, AutodiffError> {
    let reals = tape.concat(0, real_logits)?;
    let nreals = tape.scale(reals, -1.0)?;
    let sp_r = tape.softplus(nreals)?;
    let real_term = tape.mean(sp_r)?;
    let fakes = tape.concat(0, fake_logits)?;
    let sp_f = tape.softplus(fakes)?;
    let fake_term = tape.mean(sp_f)?;
    tape.add(real_term, fake_term)
}

/// Tape-level generator loss from per-sample fake logit nodes.
pub fn gen_loss_on_tape(tape: &mut Tape, fake_logits: &[NodeId]) -> Result<NodeId, AutodiffError> {
    let fakes = tape.concat(0, fake_logits)?;
    let sp = tape.softplus(fakes)?;
    let m = tape.mean(sp)?;
    tape.scale(m, -1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub gen_lr: f32,
    pub disc_lr: f32,
    /// Emit a generator checkpoint every this many steps (and at the end).
    pub checkpoint_every: Option<usize>,
    pub rng_seed: u64,
    /// Truncation applied during training forward passes.
    pub psi: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            gen_lr: 2e-4,
            disc_lr: 2e-4,
            checkpoint_every: None,
            rng_seed: 0,
            psi: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainingError> {
        if self.batch_size == 0 {
            return Err(TrainingError::InvalidConfig("batch_size must be > 0".into()));
        }
        if !(self.gen_lr > 0.0 && self.disc_lr > 0.0) {
            return Err(TrainingError::InvalidConfig(
                "learning rates must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Loss curve plus any checkpoints captured along the way.
pub struct TrainTrace {
    /// (step, J_D, J_G) recorded every step.
    pub losses: Vec<(usize, f32, f32)>,
    pub checkpoints: Vec<(usize, GeneratorModel)>,
}

impl TrainTrace {
    /// CSV with header `step,j_d,j_g`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,j_d,j_g\n");
        for (s, d, g) in &self.losses {
            out.push_str(&format!("{s},{d},{g}\n"));
        }
        out
    }
}

struct ParamOptimizer {
    states: BTreeMap<String, AdamState>,
}

impl ParamOptimizer {
    fn new(params: &BTreeMap<String, Tensor>, lr: f32) -> Self {
        ParamOptimizer {
            states: params
                .iter()
                .map(|(k, v)| (k.clone(), AdamState::new(v.shape(), lr)))
                .collect(),
        }
    }

    fn apply(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        bindings: &BTreeMap<String, NodeId>,
        grads: &mut crate::autodiff::Gradients,
    ) -> Result<(), TensorError> {
        for (name, node) in bindings {
            if let Some(g) = grads.take(*node) {
                let cur = params.get_mut(name).expect("binding matches params");
                *cur = self.states.get_mut(name).expect("state exists").step(cur, &g)?;
            }
        }
        Ok(())
    }
}

fn bind_all(
    tape: &mut Tape,
    params: &BTreeMap<String, Tensor>,
) -> BTreeMap<String, NodeId> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), tape.variable(v.clone())))
        .collect()
}

/// Adversarial training: per iteration one discriminator update on a fresh
/// real/fake batch, then one generator update. Deterministic in the config.
pub fn train_gan(
    gen: &GeneratorModel,
    disc: &DiscriminatorModel,
    data: &[Tensor],
    cfg: &TrainConfig,
) -> Result<(GeneratorModel, DiscriminatorModel, TrainTrace), TrainingError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let image_shape = gen.arch().image_shape().to_vec();
    for img in data {
        if img.shape() != image_shape.as_slice() {
            return Err(TrainingError::DataShape {
                expected: image_shape,
                got: img.shape().to_vec(),
            });
        }
    }

    let mut gen_params = gen.params().clone();
    let mut disc_params = disc.params().clone();
    let mut gen_opt = ParamOptimizer::new(&gen_params, cfg.gen_lr);
    let mut disc_opt = ParamOptimizer::new(&disc_params, cfg.disc_lr);
    let mut rng = DetRng::derived(cfg.rng_seed, &[tag("gan-train")]);
    let seed_dim = gen.arch().seed_dim();

    let mut trace = TrainTrace {
        losses: Vec::with_capacity(cfg.steps),
        checkpoints: Vec::new(),
    };

    for step in 0..cfg.steps {
        // Batch ingredients drawn in a fixed order.
        let real_idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.int_range(0, data.len() - 1))
            .collect();
        let seeds: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| rng.standard_normal_tensor(&[seed_dim]))
            .collect();
        let noise_seeds: Vec<u64> = (0..cfg.batch_size).map(|_| rng.u64()).collect();

        // Discriminator step: generator parameters enter as constants.
        let frozen_gen = gen.with_updated_params(gen_params.clone())?;
        let j_d = {
            let mut tape = Tape::new();
            let disc_bind = bind_all(&mut tape, &disc_params);
            let mut real_logits = Vec::with_capacity(cfg.batch_size);
            for &i in &real_idx {
                let x = tape.constant(data[i].clone());
                real_logits.push(disc.with_params(disc_params.clone()).forward_on_tape(
                    &mut tape,
                    x,
                    Some(&disc_bind),
                )?);
            }
            let mut fake_logits = Vec::with_capacity(cfg.batch_size);
            for b in 0..cfg.batch_size {
                let noise = NoiseInput::sample(frozen_gen.arch(), noise_seeds[b], cfg.psi);
                let fake = frozen_gen.generate(&seeds[b], &noise)?;
                let x = tape.constant(fake);
                fake_logits.push(disc.with_params(disc_params.clone()).forward_on_tape(
                    &mut tape,
                    x,
                    Some(&disc_bind),
                )?);
            }
            let loss = disc_loss_on_tape(&mut tape, &real_logits, &fake_logits)?;
            let j_d = tape.value(loss).item();
            if !j_d.is_finite() {
                return Err(TrainingError::Diverged {
                    step,
                    j_d,
                    j_g: f32::NAN,
                });
            }
            let mut grads = tape.backward(loss)?;
            disc_opt.apply(&mut disc_params, &disc_bind, &mut grads)?;
            j_d
        };

        // Generator step: discriminator parameters enter as constants.
        let j_g = {
            let mut tape = Tape::new();
            let gen_bind = bind_all(&mut tape, &gen_params);
            let gen_model = gen.with_updated_params(gen_params.clone())?;
            let frozen_disc = disc.with_params(disc_params.clone());
            let mut fake_logits = Vec::with_capacity(cfg.batch_size);
            for b in 0..cfg.batch_size {
                let noise = NoiseInput::sample(gen_model.arch(), noise_seeds[b], cfg.psi);
                let s = tape.constant(seeds[b].clone());
                let noise_nodes: Vec<NodeId> = noise
                    .layers
                    .iter()
                    .map(|t| tape.constant(t.clone()))
                    .collect();
                let fake = gen_model.forward_on_tape(
                    &mut tape,
                    s,
                    &noise_nodes,
                    cfg.psi,
                    &[],
                    Some(&gen_bind),
                )?;
                fake_logits.push(frozen_disc.forward_on_tape(&mut tape, fake, None)?);
            }
            let loss = gen_loss_on_tape(&mut tape, &fake_logits)?;
            let j_g = tape.value(loss).item();
            if !j_g.is_finite() {
                return Err(TrainingError::Diverged { step, j_d, j_g });
            }
            let mut grads = tape.backward(loss)?;
            gen_opt.apply(&mut gen_params, &gen_bind, &mut grads)?;
            j_g
        };

        trace.losses.push((step, j_d, j_g));
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && (step + 1) % every == 0 {
                trace
                    .checkpoints
                    .push((step + 1, gen.with_updated_params(gen_params.clone())?));
            }
        }
    }

    let final_gen = gen.with_updated_params(gen_params)?;
    let final_disc = disc.with_params(disc_params);
    Ok((final_gen, final_disc, trace))
}

/// Continue adversarial training of a parent for `extra_steps`, yielding a
/// near-replica child. `extra_steps = 0` returns the parent unchanged
/// (digest-identical).
pub fn fine_tune(
    parent: &GeneratorModel,
    disc: &DiscriminatorModel,
    data: &[Tensor],
    extra_steps: usize,
    cfg: &TrainConfig,
) -> Result<GeneratorModel, TrainingError> {
    if extra_steps == 0 {
        return Ok(parent.clone());
    }
    let cfg = TrainConfig {
        steps: extra_steps,
        ..cfg.clone()
    };
    let (child, _, _) = train_gan(parent, disc, data, &cfg)?;
    Ok(child)
}

/// Relative parameter movement ||child - parent||_2 / ||parent||_2 over the
/// concatenated parameter vector.
pub fn relative_param_distance(parent: &GeneratorModel, child: &GeneratorModel) -> f32 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (name, p) in parent.params() {
        let c = &child.params()[name];
        for (a, b) in p.data().iter().zip(c.data()) {
            num += ((a - b) as f64).powi(2);
            den += (*a as f64).powi(2);
        }
    }
    ((num.sqrt()) / den.sqrt().max(1e-12)) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_toy_dataset, ToyDatasetSpec};
    use crate::generators::GeneratorArch;

    #[test]
    fn losses_at_zero_logits_match_analytic_values() {
        // sigma(0) = 0.5: J_D = 2 ln 2, J_G = ln(1/2).
        let (j_d, j_g) = gan_losses(&[0.0, 0.0], &[0.0, 0.0]);
        assert!((j_d - 2.0 * std::f32::consts::LN_2).abs() < 1e-6, "{j_d}");
        assert!((j_g + std::f32::consts::LN_2).abs() < 1e-6, "{j_g}");
    }

    #[test]
    fn perfect_discriminator_limit_drives_j_d_to_zero() {
        let (j_d, _) = gan_losses(&[40.0, 50.0], &[-40.0, -50.0]);
        assert!(j_d.abs() < 1e-6, "{j_d}");
    }

    #[test]
    fn losses_match_f64_reference_on_random_logits() {
        // High-precision direct evaluation of the defining expectations.
        let mut rng = DetRng::new(3);
        for _ in 0..50 {
            let reals: Vec<f32> = (0..8).map(|_| rng.normal_f32() * 5.0).collect();
            let fakes: Vec<f32> = (0..8).map(|_| rng.normal_f32() * 5.0).collect();
            let (j_d, j_g) = gan_losses(&reals, &fakes);
            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            let jd_ref: f64 = reals.iter().map(|&z| -sig(z as f64).ln()).sum::<f64>()
                / reals.len() as f64
                + fakes
                    .iter()
                    .map(|&z| -(1.0 - sig(z as f64)).ln())
                    .sum::<f64>()
                    / fakes.len() as f64;
            let jg_ref: f64 = fakes
                .iter()
                .map(|&z| (1.0 - sig(z as f64)).ln())
                .sum::<f64>()
                / fakes.len() as f64;
            assert!((j_d as f64 - jd_ref).abs() < 1e-6, "{j_d} vs {jd_ref}");
            assert!((j_g as f64 - jg_ref).abs() < 1e-6, "{j_g} vs {jg_ref}");
        }
    }

    #[test]
    fn losses_never_nan_for_large_finite_logits() {
        let mut rng = DetRng::new(4);
        for _ in 0..500 {
            let r = rng.uniform_range(-50.0, 50.0);
            let f = rng.uniform_range(-50.0, 50.0);
            let (j_d, j_g) = gan_losses(&[r], &[f]);
            assert!(j_d.is_finite() && j_g.is_finite(), "logits {r} {f}");
        }
    }

    #[test]
    fn zero_steps_leaves_models_unchanged() {
        let gen = GeneratorModel::build(GeneratorArch::plain_default(), 1).unwrap();
        let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 2).unwrap();
        let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(8, 3)).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let (g2, d2, trace) = train_gan(&gen, &disc, &data, &cfg).unwrap();
        assert_eq!(g2.digest(), gen.digest());
        assert_eq!(d2.digest_hex(), disc.digest_hex());
        assert!(trace.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_improves_discrimination() {
        let gen = GeneratorModel::build(GeneratorArch::plain_default(), 5).unwrap();
        let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 6).unwrap();
        let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(32, 7)).unwrap();
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 4,
            rng_seed: 8,
            ..Default::default()
        };
        let (g1, d1, t1) = train_gan(&gen, &disc, &data, &cfg).unwrap();
        let (g2, d2, _) = train_gan(&gen, &disc, &data, &cfg).unwrap();
        assert_eq!(g1.digest(), g2.digest());
        assert_eq!(d1.digest_hex(), d2.digest_hex());
        assert_ne!(g1.digest(), gen.digest());
        assert!(t1.losses.len() == 60);
        // The trained discriminator separates real from fake better than
        // chance: mean real score above mean fake score.
        let mut rng = DetRng::new(9);
        let mut real_mean = 0.0f32;
        for img in data.iter().take(8) {
            real_mean += d1.score(img).unwrap();
        }
        let mut fake_mean = 0.0f32;
        for i in 0..8 {
            let s = rng.standard_normal_tensor(&[64]);
            let noise = NoiseInput::sample(g1.arch(), 100 + i, 1.0);
            fake_mean += d1.score(&g1.generate(&s, &noise).unwrap()).unwrap();
        }
        assert!(
            real_mean / 8.0 > fake_mean / 8.0,
            "real {real_mean} vs fake {fake_mean}"
        );
    }

    #[test]
    fn checkpoints_follow_the_configured_cadence() {
        let gen = GeneratorModel::build(GeneratorArch::plain_default(), 14).unwrap();
        let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 15).unwrap();
        let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(8, 16)).unwrap();
        let cfg = TrainConfig {
            steps: 10,
            batch_size: 2,
            checkpoint_every: Some(4),
            rng_seed: 17,
            ..Default::default()
        };
        let (_, _, trace) = train_gan(&gen, &disc, &data, &cfg).unwrap();
        let steps: Vec<usize> = trace.checkpoints.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![4, 8]);
        // Checkpoints round-trip through the binary model format.
        let bytes = trace.checkpoints[0].1.serialize();
        assert_eq!(
            GeneratorModel::deserialize(&bytes).unwrap().digest(),
            trace.checkpoints[0].1.digest()
        );
    }

    #[test]
    fn fine_tune_children_are_distinct_but_close() {
        let gen = GeneratorModel::build(GeneratorArch::plain_default(), 10).unwrap();
        let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 11).unwrap();
        let data = make_toy_dataset(&ToyDatasetSpec::blob_faces(16, 12)).unwrap();
        let cfg = TrainConfig {
            steps: 40,
            batch_size: 4,
            rng_seed: 13,
            ..Default::default()
        };
        let (parent, disc_t, _) = train_gan(&gen, &disc, &data, &cfg).unwrap();
        let same = fine_tune(&parent, &disc_t, &data, 0, &cfg).unwrap();
        assert_eq!(same.digest(), parent.digest());
        let mut digests = vec![parent.digest()];
        let mut prev_dist = 0.0f32;
        for steps in [5usize, 20, 60] {
            let child = fine_tune(&parent, &disc_t, &data, steps, &cfg).unwrap();
            assert!(!digests.contains(&child.digest()));
            digests.push(child.digest());
            let d = relative_param_distance(&parent, &child);
            assert!(d < 0.1, "relative param distance {d} too large");
            assert!(d >= prev_dist, "param distance should grow with steps");
            prev_dist = d;
        }
    }

    #[test]
    fn disc_loss_gradients_match_finite_differences() {
        let build = |seed: u64| {
            let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 20).unwrap();
            let mut rng = DetRng::new(seed);
            let mut tape = Tape::new();
            let bind = bind_all(&mut tape, disc.params());
            let real = tape.constant(rng.normal_tensor(&[1, 32, 32], 0.3).map(|v| v.abs().min(1.0)));
            let fake = tape.constant(rng.normal_tensor(&[1, 32, 32], 0.3).map(|v| v.abs().min(1.0)));
            let rl = disc.forward_on_tape(&mut tape, real, Some(&bind)).unwrap();
            let fl = disc.forward_on_tape(&mut tape, fake, Some(&bind)).unwrap();
            let loss = disc_loss_on_tape(&mut tape, &[rl], &[fl]).unwrap();
            let leaves: Vec<NodeId> = bind.values().copied().collect();
            (tape, loss, leaves)
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

    #[test]
    fn disc_serialization_round_trips() {
        let disc = DiscriminatorModel::build(DiscriminatorArch::standard(), 30).unwrap();
        let bytes = disc.serialize();
        let back = DiscriminatorModel::deserialize(&bytes).unwrap();
        assert_eq!(disc, back);
    }
}
