//! Substitute classifier for the transferability study: a small convnet
//! trained to map images to their source generator, attacked in place of
//! the (non-differentiable) attribution pipeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::autodiff::{NodeId, Tape};
use crate::rng::{tag, DetRng};
use crate::tensor::Tensor;

use super::{AttackNorm, PerturbError};

/// Four stride-varied 3x3 conv layers and a dense head over the classes.
pub struct SubstituteClassifier {
    conv_channels: [usize; 4],
    classes: usize,
    image_shape: [usize; 3],
    params: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstituteConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub rng_seed: u64,
}

impl Default for SubstituteConfig {
    fn default() -> Self {
        SubstituteConfig {
            steps: 1200,
            batch_size: 16,
            lr: 1e-3,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubstituteTrainReport {
    pub final_train_loss: f32,
    pub train_accuracy: f32,
    pub steps: usize,
}

impl SubstituteClassifier {
    // Strides: 2, 2, 1, 2 -> 32x32 ends at 4x4 spatial.
    const STRIDES: [usize; 4] = [2, 2, 1, 2];

    fn build(classes: usize, image_shape: [usize; 3], init_seed: u64) -> Self {
        let conv_channels = [8usize, 16, 16, 32];
        let mut rng = DetRng::derived(init_seed, &[tag("substitute-init")]);
        let mut params = BTreeMap::new();
        let mut in_ch = image_shape[0];
        for (i, &out_ch) in conv_channels.iter().enumerate() {
            let std = (2.0 / (in_ch as f32 * 9.0)).sqrt();
            params.insert(
                format!("conv{i}.w"),
                rng.normal_tensor(&[out_ch, in_ch, 3, 3], std),
            );
            params.insert(format!("conv{i}.b"), Tensor::zeros(&[out_ch]));
            in_ch = out_ch;
        }
        let down: usize = Self::STRIDES.iter().product();
        let head_in = conv_channels[3] * (image_shape[1] / down) * (image_shape[2] / down);
        params.insert("head.w".into(), rng.normal_tensor(&[head_in, classes], 0.05));
        params.insert("head.b".into(), Tensor::zeros(&[1, classes]));
        SubstituteClassifier {
            conv_channels,
            classes,
            image_shape,
            params,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn head_inputs(&self) -> usize {
        let down: usize = Self::STRIDES.iter().product();
        self.conv_channels[3] * (self.image_shape[1] / down) * (self.image_shape[2] / down)
    }

    /// Log-softmax class scores for one image node, shape [1, classes].
    pub fn log_probs_on_tape(
        &self,
        tape: &mut Tape,
        image: NodeId,
        bindings: Option<&BTreeMap<String, NodeId>>,
    ) -> Result<NodeId, PerturbError> {
        let get = |tape: &mut Tape, name: &str| -> NodeId {
            match bindings {
                Some(b) => b[name],
                None => tape.constant(self.params[name].clone()),
            }
        };
        let mut x = image;
        for i in 0..4 {
            let w = get(tape, &format!("conv{i}.w"));
            let b = get(tape, &format!("conv{i}.b"));
            x = tape.conv2d(x, w, Some(b), Self::STRIDES[i], 1)?;
            x = tape.relu(x)?;
        }
        let flat = tape.reshape(x, vec![1, self.head_inputs()])?;
        let w = get(tape, "head.w");
        let b = get(tape, "head.b");
        let logits = tape.matmul(flat, w)?;
        let logits = tape.add(logits, b)?;
        Ok(tape.log_softmax(logits)?)
    }

    /// Class probabilities; they sum to one by construction.
    pub fn predict(&self, image: &Tensor) -> Result<(usize, Vec<f32>), PerturbError> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let lp = self.log_probs_on_tape(&mut tape, x, None)?;
        let probs: Vec<f32> = tape.value(lp).data().iter().map(|&v| v.exp()).collect();
        let arg = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok((arg, probs))
    }

    pub fn accuracy(&self, images: &[Tensor], labels: &[usize]) -> Result<f32, PerturbError> {
        let mut correct = 0usize;
        for (img, &lbl) in images.iter().zip(labels) {
            if self.predict(img)?.0 == lbl {
                correct += 1;
            }
        }
        Ok(correct as f32 / images.len().max(1) as f32)
    }

    /// Negative log-likelihood node for one (image, label) pair.
    fn nll_on_tape(
        &self,
        tape: &mut Tape,
        image: NodeId,
        label: usize,
        bindings: Option<&BTreeMap<String, NodeId>>,
    ) -> Result<NodeId, PerturbError> {
        let lp = self.log_probs_on_tape(tape, image, bindings)?;
        let mut onehot = vec![0.0f32; self.classes];
        onehot[label] = 1.0;
        let oh = tape.constant(Tensor::new(vec![1, self.classes], onehot)?);
        let picked = tape.mul(lp, oh)?;
        let s = tape.sum(picked)?;
        Ok(tape.scale(s, -1.0)?)
    }

    /// One-step signed-gradient attack that *increases* the classifier's
    /// loss on the true label.
    pub fn fgsm_against(
        &self,
        x: &Tensor,
        label: usize,
        eps: f32,
        norm: AttackNorm,
    ) -> Result<Tensor, PerturbError> {
        if eps < 0.0 {
            return Err(PerturbError::Epsilon(eps));
        }
        if label >= self.classes {
            return Err(PerturbError::LabelRange {
                expected: self.classes,
                got: label,
            });
        }
        let mut tape = Tape::new();
        let xv = tape.variable(x.clone());
        let loss = self.nll_on_tape(&mut tape, xv, label, None)?;
        let grads = tape.backward(loss)?;
        let g = grads.get(xv).expect("input participates");
        let data: Vec<f32> = match norm {
            AttackNorm::LInf => x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&p, &gv)| {
                    (p + eps * if gv > 0.0 { 1.0 } else if gv < 0.0 { -1.0 } else { 0.0 })
                        .clamp(0.0, 1.0)
                })
                .collect(),
            AttackNorm::L2 => {
                let n = g.l2_norm().max(1e-12);
                x.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&p, &gv)| (p + eps * gv / n).clamp(0.0, 1.0))
                    .collect()
            }
        };
        Ok(Tensor::new(x.shape().to_vec(), data)?)
    }

    /// CW-style attack on the classifier: minimize
    /// `||delta||_2 - c * nll(x + delta, label)` with Adam, pixel-clamped.
    pub fn cw_against(
        &self,
        x: &Tensor,
        label: usize,
        c: f32,
        steps: usize,
        lr: f32,
        jitter_seed: u64,
    ) -> Result<Tensor, PerturbError> {
        if c <= 0.0 {
            return Err(PerturbError::CwWeight(c));
        }
        let mut rng = DetRng::derived(jitter_seed, &[tag("cw-clf-init")]);
        let mut delta = Tensor::new(
            x.shape().to_vec(),
            (0..x.numel()).map(|_| rng.normal_f32() * 1e-3).collect(),
        )?;
        let mut adam = AdamState::new(x.shape(), lr);
        for _ in 0..steps {
            let mut tape = Tape::new();
            let d_node = tape.variable(delta.clone());
            let x_node = tape.constant(x.clone());
            let adv = tape.add(x_node, d_node)?;
            let nll = self.nll_on_tape(&mut tape, adv, label, None)?;
            let dsq = tape.l2_norm_sq(d_node)?;
            let tiny = tape.constant(Tensor::scalar(1e-12));
            let dsq_s = tape.add(dsq, tiny)?;
            let dnorm = tape.sqrt(dsq_s)?;
            let weighted = tape.scale(nll, -c)?;
            let obj = tape.add(dnorm, weighted)?;
            if !tape.value(obj).item().is_finite() {
                break;
            }
            let mut grads = tape.backward(obj)?;
            let g = grads.take(d_node).expect("delta participates");
            delta = adam.step(&delta, &g)?;
            // Keep x + delta feasible.
            delta = Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(delta.data())
                    .map(|(&p, &d)| (p + d).clamp(0.0, 1.0) - p)
                    .collect(),
            )?;
        }
        Ok(Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(delta.data())
                .map(|(&p, &d)| (p + d).clamp(0.0, 1.0))
                .collect(),
        )?)
    }
}

/// Train a substitute classifier with cross-entropy on labeled generator
/// outputs. Deterministic in the config seed.
pub fn train_substitute(
    images: &[Tensor],
    labels: &[usize],
    classes: usize,
    cfg: &SubstituteConfig,
) -> Result<(SubstituteClassifier, SubstituteTrainReport), PerturbError> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(PerturbError::BadTrainingSet);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(PerturbError::LabelRange {
            expected: classes,
            got: bad,
        });
    }
    let image_shape: [usize; 3] = images[0].shape().try_into().map_err(|_| {
        PerturbError::Rank(images[0].shape().to_vec())
    })?;
    let mut clf = SubstituteClassifier::build(classes, image_shape, cfg.rng_seed);
    let mut opts: BTreeMap<String, AdamState> = clf
        .params
        .iter()
        .map(|(k, v)| (k.clone(), AdamState::new(v.shape(), cfg.lr)))
        .collect();
    let mut rng = DetRng::derived(cfg.rng_seed, &[tag("substitute-train")]);
    let mut final_loss = f32::NAN;

    for _step in 0..cfg.steps {
        let mut tape = Tape::new();
        let bindings: BTreeMap<String, NodeId> = clf
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.variable(v.clone())))
            .collect();
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.int_range(0, images.len() - 1);
            let x = tape.constant(images[i].clone());
            losses.push(clf.nll_on_tape(&mut tape, x, labels[i], Some(&bindings))?);
        }
        let stacked = tape.concat(0, &losses)?;
        let loss = tape.mean(stacked)?;
        final_loss = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        for (name, node) in &bindings {
            if let Some(g) = grads.take(*node) {
                let cur = clf.params.get_mut(name).expect("param exists");
                *cur = opts.get_mut(name).expect("state exists").step(cur, &g)?;
            }
        }
    }
    let train_accuracy = clf.accuracy(images, labels)?;
    let report = SubstituteTrainReport {
        final_train_loss: final_loss,
        train_accuracy,
        steps: cfg.steps,
    };
    Ok((clf, report))
}
