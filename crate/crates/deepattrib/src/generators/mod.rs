//! Differentiable toy image generators.
//!
//! Two families cover the architectural ingredients that matter for
//! attribution. `plain-deconv` maps the seed through a dense layer onto a
//! coarse grid and upsamples with stride-2 transpose convolutions. The
//! `style-injection` family keeps the seed out of the synthesis path
//! entirely: a mapping network turns it into a style vector, every block
//! adds weighted per-layer noise, and adaptive instance normalization
//! applies the (truncation-interpolated) style. Its final block is an AdaIN
//! layer immediately before the output sigmoid, which is what makes
//! [`force_output`] exact: with gamma pinned to zero the block emits beta
//! regardless of seed and noise, so any target image becomes reachable.
//!
//! All generation is deterministic in (model, seed, noise input), and every
//! forward pass runs through the autodiff tape so reconstruction can
//! differentiate with respect to the seed.

mod format;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::rng::{tag, DetRng};
use crate::tensor::{Tensor, TensorError};

pub use format::FormatError;

/// Write any named-tensor collection in the model container format (other
/// model kinds, like discriminators, reuse the same wire layout).
pub fn write_container(arch_json: &str, params: &BTreeMap<String, Tensor>) -> Vec<u8> {
    format::write_model_bytes(arch_json, params)
}

/// Read a container, resolving parameter shapes from the descriptor via
/// `specs_for`.
pub fn read_container(
    bytes: &[u8],
    specs_for: impl Fn(&str) -> Result<Vec<(String, Vec<usize>)>, FormatError>,
) -> Result<(String, BTreeMap<String, Tensor>), FormatError> {
    let (json, payload) = format::read_model_bytes(bytes)?;
    let specs = specs_for(&json)?;
    let params = format::decode_params(payload, &specs)?;
    Ok((json, params))
}

pub const DEFAULT_SEED_DIM: usize = 64;
pub const DEFAULT_IMAGE_SHAPE: [usize; 3] = [1, 32, 32];
/// Default style truncation rate.
pub const DEFAULT_PSI: f32 = 0.7;
/// Seeds used to estimate the mapping-network output mean at build time.
pub const W_MEAN_SAMPLES: usize = 10_000;
const INSTANCE_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("seed has shape {got:?}, expected [{expected}]")]
    SeedShape { expected: usize, got: Vec<usize> },
    #[error("noise input {index} has shape {got:?}, expected {expected:?}")]
    NoiseShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("noise input has {got} layers, model needs {expected}")]
    NoiseCount { expected: usize, got: usize },
    #[error("generation failed: non-finite value in {context}")]
    GenerationFailed { context: &'static str },
    #[error("style override targets layer {layer}, model has {blocks} blocks")]
    OverrideLayer { layer: usize, blocks: usize },
    #[error("style override {which} has shape {got:?}, expected [{c}] or {full:?}")]
    OverrideShape {
        which: &'static str,
        got: Vec<usize>,
        c: usize,
        full: Vec<usize>,
    },
    #[error("{op} requires a style-injection model")]
    NotStyleModel { op: &'static str },
    #[error("force_output target has shape {got:?}, expected {expected:?}")]
    TargetShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One transpose-convolution stage of a plain generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DeconvLayer {
    fn out_size(&self, in_size: usize) -> i64 {
        (in_size as i64 - 1) * self.stride as i64 - 2 * self.padding as i64 + self.kernel as i64
    }
}

/// Architecture descriptor; fully determines parameter names and shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GeneratorArch {
    #[serde(rename = "plain-deconv")]
    PlainDeconv {
        seed_dim: usize,
        image_shape: [usize; 3],
        base_channels: usize,
        base_size: usize,
        layers: Vec<DeconvLayer>,
        /// Non-learned per-channel normalization between stages (the
        /// batch-size-1 stand-in for DCGAN's batch norm); keeps activations
        /// O(1) so outputs carry real contrast.
        instance_norm: bool,
    },
    #[serde(rename = "style-injection")]
    StyleInjection {
        seed_dim: usize,
        image_shape: [usize; 3],
        base_channels: usize,
        base_size: usize,
        /// Channels after each upsample+conv stage; the last entry is the
        /// image channel count. Style blocks = up_channels.len() + 1.
        up_channels: Vec<usize>,
        mapping_depth: usize,
        style_dim: usize,
    },
}

impl GeneratorArch {
    /// Default plain generator: dense to an 8x8 grid, two stride-2
    /// transpose convolutions up to 32x32, sigmoid output.
    pub fn plain_default() -> Self {
        GeneratorArch::PlainDeconv {
            seed_dim: DEFAULT_SEED_DIM,
            image_shape: DEFAULT_IMAGE_SHAPE,
            base_channels: 8,
            base_size: 8,
            layers: vec![
                DeconvLayer {
                    in_ch: 8,
                    out_ch: 8,
                    kernel: 2,
                    stride: 2,
                    padding: 0,
                },
                DeconvLayer {
                    in_ch: 8,
                    out_ch: 1,
                    kernel: 2,
                    stride: 2,
                    padding: 0,
                },
            ],
            instance_norm: true,
        }
    }

    /// A shallower plain variant (single transpose convolution), the second
    /// architecture of the two-architecture attribution analog.
    pub fn plain_shallow() -> Self {
        GeneratorArch::PlainDeconv {
            seed_dim: DEFAULT_SEED_DIM,
            image_shape: DEFAULT_IMAGE_SHAPE,
            base_channels: 6,
            base_size: 16,
            layers: vec![DeconvLayer {
                in_ch: 6,
                out_ch: 1,
                kernel: 2,
                stride: 2,
                padding: 0,
            }],
            instance_norm: true,
        }
    }

    /// Default style-injection generator: 8x8 learned constant, three style
    /// blocks with per-layer noise and AdaIN, two upsample+conv stages.
    pub fn style_default() -> Self {
        GeneratorArch::StyleInjection {
            seed_dim: DEFAULT_SEED_DIM,
            image_shape: DEFAULT_IMAGE_SHAPE,
            base_channels: 8,
            base_size: 8,
            up_channels: vec![4, 1],
            mapping_depth: 2,
            style_dim: 64,
        }
    }

    pub fn seed_dim(&self) -> usize {
        match self {
            GeneratorArch::PlainDeconv { seed_dim, .. }
            | GeneratorArch::StyleInjection { seed_dim, .. } => *seed_dim,
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        match self {
            GeneratorArch::PlainDeconv { image_shape, .. }
            | GeneratorArch::StyleInjection { image_shape, .. } => *image_shape,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GeneratorArch::PlainDeconv { .. } => "plain-deconv",
            GeneratorArch::StyleInjection { .. } => "style-injection",
        }
    }

    pub fn is_style(&self) -> bool {
        matches!(self, GeneratorArch::StyleInjection { .. })
    }

    /// Number of style blocks (0 for plain models).
    pub fn style_blocks(&self) -> usize {
        match self {
            GeneratorArch::PlainDeconv { .. } => 0,
            GeneratorArch::StyleInjection { up_channels, .. } => up_channels.len() + 1,
        }
    }

    /// (channels, height, width) of each style block's activations.
    pub fn block_shapes(&self) -> Vec<[usize; 3]> {
        match self {
            GeneratorArch::PlainDeconv { .. } => Vec::new(),
            GeneratorArch::StyleInjection {
                base_channels,
                base_size,
                up_channels,
                ..
            } => {
                let mut shapes = vec![[*base_channels, *base_size, *base_size]];
                let mut size = *base_size;
                for &ch in up_channels {
                    size *= 2;
                    shapes.push([ch, size, size]);
                }
                shapes
            }
        }
    }

    /// Validate the layer chain against the declared image shape.
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |msg: String| Err(GeneratorError::InvalidArch(msg));
        if self.seed_dim() == 0 {
            return bad("seed_dim must be positive".into());
        }
        let [c, h, w] = self.image_shape();
        if c == 0 || h == 0 || w == 0 {
            return bad(format!("degenerate image shape {:?}", self.image_shape()));
        }
        match self {
            GeneratorArch::PlainDeconv {
                base_channels,
                base_size,
                layers,
                ..
            } => {
                if layers.is_empty() {
                    return bad("plain-deconv needs at least one layer".into());
                }
                let mut ch = *base_channels;
                let mut size = *base_size as i64;
                for (i, l) in layers.iter().enumerate() {
                    if l.in_ch != ch {
                        return bad(format!(
                            "layer {i} expects {} input channels, chain provides {ch}",
                            l.in_ch
                        ));
                    }
                    if l.stride == 0 || l.kernel == 0 {
                        return bad(format!("layer {i} has zero kernel or stride"));
                    }
                    size = l.out_size(size as usize);
                    if size <= 0 {
                        return bad(format!("layer {i} collapses spatial size"));
                    }
                    ch = l.out_ch;
                }
                if ch != c || size != h as i64 || h != w {
                    return bad(format!(
                        "chain ends at {ch}x{size}x{size}, image is {c}x{h}x{w}"
                    ));
                }
                Ok(())
            }
            GeneratorArch::StyleInjection {
                base_channels,
                base_size,
                up_channels,
                mapping_depth,
                style_dim,
                ..
            } => {
                if *mapping_depth == 0 || *style_dim == 0 {
                    return bad("mapping network needs positive depth and width".into());
                }
                if *base_channels == 0 || *base_size == 0 {
                    return bad("degenerate base grid".into());
                }
                if up_channels.is_empty() {
                    return bad("style-injection needs at least one upsample stage".into());
                }
                let size = *base_size << up_channels.len();
                if size != h || h != w {
                    return bad(format!(
                        "{} upsample stages from {base_size} give {size}, image is {h}x{w}",
                        up_channels.len()
                    ));
                }
                if *up_channels.last().unwrap() != c {
                    return bad(format!(
                        "final stage has {} channels, image has {c}",
                        up_channels.last().unwrap()
                    ));
                }
                Ok(())
            }
        }
    }

    /// Ordered (name, shape) list of every parameter tensor. Sorted by name;
    /// this order defines the serialization payload and the digest.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        match self {
            GeneratorArch::PlainDeconv {
                seed_dim,
                base_channels,
                base_size,
                layers,
                ..
            } => {
                let grid = base_channels * base_size * base_size;
                specs.push(("dense.w".into(), vec![*seed_dim, grid]));
                specs.push(("dense.b".into(), vec![1, grid]));
                for (i, l) in layers.iter().enumerate() {
                    specs.push((
                        format!("deconv{i}.w"),
                        vec![l.in_ch, l.out_ch, l.kernel, l.kernel],
                    ));
                    specs.push((format!("deconv{i}.b"), vec![l.out_ch]));
                }
            }
            GeneratorArch::StyleInjection {
                seed_dim,
                base_channels,
                base_size,
                up_channels,
                mapping_depth,
                style_dim,
                ..
            } => {
                for i in 0..*mapping_depth {
                    let in_dim = if i == 0 { *seed_dim } else { *style_dim };
                    specs.push((format!("mapping.fc{i}.w"), vec![in_dim, *style_dim]));
                    specs.push((format!("mapping.fc{i}.b"), vec![1, *style_dim]));
                }
                specs.push(("mapping.w_mean".into(), vec![1, *style_dim]));
                specs.push((
                    "synthesis.const".into(),
                    vec![*base_channels, *base_size, *base_size],
                ));
                for (i, shape) in self.block_shapes().iter().enumerate() {
                    let ch = shape[0];
                    specs.push((format!("block{i}.noise_w"), shape.to_vec()));
                    specs.push((format!("block{i}.gamma.w"), vec![*style_dim, ch]));
                    specs.push((format!("block{i}.gamma.b"), vec![1, ch]));
                    specs.push((format!("block{i}.beta.w"), vec![*style_dim, ch]));
                    specs.push((format!("block{i}.beta.b"), vec![1, ch]));
                }
                let mut ch = *base_channels;
                for (i, &out_ch) in up_channels.iter().enumerate() {
                    specs.push((format!("up{i}.w"), vec![out_ch, ch, 3, 3]));
                    specs.push((format!("up{i}.b"), vec![out_ch]));
                    ch = out_ch;
                }
            }
        }
        specs.sort_by(|a, b| a.0.cmp(&b.0));
        specs
    }

    /// Canonical JSON descriptor (sorted keys, no whitespace).
    pub fn canonical_json(&self) -> String {
        crate::canonical_json(self).expect("arch serializes")
    }
}

/// Per-layer noise tensors plus the style truncation rate.
///
/// Plain models accept any noise input and ignore its layers; style models
/// require one tensor per block with matching shapes. `psi` in [0,1]
/// interpolates styles toward the mapping-network mean (0 = fully
/// truncated, 1 = untruncated).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseInput {
    pub layers: Vec<Tensor>,
    pub psi: f32,
}

impl NoiseInput {
    /// No per-layer noise; valid for plain models and for style models in
    /// the noise-disabled regime (equivalent to all-zero noise).
    pub fn empty(psi: f32) -> Self {
        NoiseInput {
            layers: Vec::new(),
            psi,
        }
    }

    pub fn zeros(arch: &GeneratorArch, psi: f32) -> Self {
        NoiseInput {
            layers: arch
                .block_shapes()
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
            psi,
        }
    }

    /// Standard-normal noise drawn from a dedicated stream; regenerable
    /// from (arch, rng_seed, psi) alone, which the ledger relies on.
    pub fn sample(arch: &GeneratorArch, rng_seed: u64, psi: f32) -> Self {
        let mut rng = DetRng::derived(rng_seed, &[tag("noise-input")]);
        NoiseInput {
            layers: arch
                .block_shapes()
                .iter()
                .map(|s| rng.standard_normal_tensor(s))
                .collect(),
            psi,
        }
    }

    /// SHA-256 over psi and the little-endian bytes of every layer.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.psi.to_le_bytes());
        h.update((self.layers.len() as u32).to_le_bytes());
        for t in &self.layers {
            for &d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Externally supplied AdaIN style for one block, replacing the
/// mapping-network projection. Shapes must be per-channel `[C]` or the full
/// block shape `[C,H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleOverride {
    pub layer: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// An architecture plus parameters, content-addressed by digest.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    arch: GeneratorArch,
    params: BTreeMap<String, Tensor>,
    digest: [u8; 32],
}

impl GeneratorModel {
    /// Draw parameters from a deterministic stream: normal with std 0.05,
    /// biases zero, AdaIN gamma biases one. Same (arch, seed) gives a
    /// bit-identical model.
    pub fn build(arch: GeneratorArch, init_rng_seed: u64) -> Result<Self, GeneratorError> {
        arch.validate()?;
        let mut rng = DetRng::derived(init_rng_seed, &[tag("generator-init")]);
        let mut params = BTreeMap::new();
        for (name, shape) in arch.param_specs() {
            let t = if name.ends_with(".b") || name == "mapping.w_mean" {
                if name.contains("gamma") {
                    Tensor::full(&shape, 1.0)
                } else {
                    Tensor::zeros(&shape)
                }
            } else {
                rng.normal_tensor(&shape, 0.05)
            };
            params.insert(name, t);
        }
        Self::from_parts(arch, params)
    }

    /// Assemble a model from explicit parameters, recomputing the frozen
    /// mapping mean for style models and the content digest.
    pub fn from_parts(
        arch: GeneratorArch,
        mut params: BTreeMap<String, Tensor>,
    ) -> Result<Self, GeneratorError> {
        arch.validate()?;
        for (name, shape) in arch.param_specs() {
            let t = params
                .get(&name)
                .ok_or_else(|| GeneratorError::InvalidArch(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(GeneratorError::InvalidArch(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if arch.is_style() {
            let w_mean = estimate_w_mean(&arch, &params)?;
            params.insert("mapping.w_mean".into(), w_mean);
        }
        let digest = digest_of(&arch, &params);
        Ok(GeneratorModel {
            arch,
            params,
            digest,
        })
    }

    /// Rebuild after a parameter update (training); style models get their
    /// mapping mean re-estimated.
    pub fn with_updated_params(
        &self,
        params: BTreeMap<String, Tensor>,
    ) -> Result<Self, GeneratorError> {
        Self::from_parts(self.arch.clone(), params)
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// Content digest over the serialized bytes (arch descriptor plus
    /// parameter bytes).
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn serialize(&self) -> Vec<u8> {
        format::write_model_bytes(&self.arch.canonical_json(), &self.params)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, GeneratorError> {
        let (json, payload) = format::read_model_bytes(bytes)?;
        let arch: GeneratorArch =
            serde_json::from_str(&json).map_err(|e| FormatError::ArchJson(e.to_string()))?;
        arch.validate()?;
        let params = format::decode_params(payload, &arch.param_specs())?;
        // Trust the stored mapping mean: deserialization must round-trip
        // bit-exactly even if the estimation procedure ever changes.
        let digest = digest_of(&arch, &params);
        Ok(GeneratorModel {
            arch,
            params,
            digest,
        })
    }

    fn param_node(
        &self,
        tape: &mut Tape,
        bindings: Option<&BTreeMap<String, NodeId>>,
        name: &str,
    ) -> NodeId {
        if let Some(b) = bindings {
            b[name]
        } else {
            tape.constant(self.params[name].clone())
        }
    }

    /// Record the generator forward pass on a tape.
    ///
    /// `seed` must be a `[seed_dim]` node already on the tape (variable for
    /// reconstruction, constant for inference). `noise_nodes` carries one
    /// `[C,H,W]` node per style block (empty means zero noise). When
    /// `bindings` is given it supplies parameter nodes (used by training);
    /// otherwise parameters enter as constants.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        seed: NodeId,
        noise_nodes: &[NodeId],
        psi: f32,
        overrides: &[StyleOverride],
        bindings: Option<&BTreeMap<String, NodeId>>,
    ) -> Result<NodeId, GeneratorError> {
        let seed_dim = self.arch.seed_dim();
        if tape.value(seed).shape() != [seed_dim] {
            return Err(GeneratorError::SeedShape {
                expected: seed_dim,
                got: tape.value(seed).shape().to_vec(),
            });
        }
        for ov in overrides {
            self.check_override(ov)?;
        }
        match &self.arch {
            GeneratorArch::PlainDeconv {
                base_channels,
                base_size,
                layers,
                instance_norm,
                ..
            } => {
                let unit_norm = |tape: &mut Tape, x: NodeId| -> Result<NodeId, AutodiffError> {
                    let c = tape.value(x).shape()[0];
                    let gamma = tape.constant(Tensor::full(&[c], 1.0));
                    let beta = tape.constant(Tensor::zeros(&[c]));
                    tape.instance_norm(x, gamma, beta, INSTANCE_NORM_EPS)
                };
                let s2 = tape.reshape(seed, vec![1, seed_dim])?;
                let w = self.param_node(tape, bindings, "dense.w");
                let b = self.param_node(tape, bindings, "dense.b");
                let h = tape.matmul(s2, w)?;
                let h = tape.add(h, b)?;
                let mut x = tape.reshape(h, vec![*base_channels, *base_size, *base_size])?;
                if *instance_norm {
                    x = unit_norm(tape, x)?;
                }
                x = tape.relu(x)?;
                for (i, l) in layers.iter().enumerate() {
                    let w = self.param_node(tape, bindings, &format!("deconv{i}.w"));
                    let b = self.param_node(tape, bindings, &format!("deconv{i}.b"));
                    x = tape.conv_transpose2d(x, w, Some(b), l.stride, l.padding)?;
                    if i + 1 < layers.len() {
                        if *instance_norm {
                            x = unit_norm(tape, x)?;
                        }
                        x = tape.relu(x)?;
                    }
                }
                Ok(tape.sigmoid(x)?)
            }
            GeneratorArch::StyleInjection { up_channels, .. } => {
                let block_shapes = self.arch.block_shapes();
                if !noise_nodes.is_empty() && noise_nodes.len() != block_shapes.len() {
                    return Err(GeneratorError::NoiseCount {
                        expected: block_shapes.len(),
                        got: noise_nodes.len(),
                    });
                }
                for (i, &nid) in noise_nodes.iter().enumerate() {
                    if tape.value(nid).shape() != block_shapes[i] {
                        return Err(GeneratorError::NoiseShape {
                            index: i,
                            expected: block_shapes[i].to_vec(),
                            got: tape.value(nid).shape().to_vec(),
                        });
                    }
                }

                // Mapping network and psi-truncation toward the frozen mean.
                let s2 = tape.reshape(seed, vec![1, seed_dim])?;
                let mut wv = s2;
                let depth = match &self.arch {
                    GeneratorArch::StyleInjection { mapping_depth, .. } => *mapping_depth,
                    _ => unreachable!(),
                };
                for i in 0..depth {
                    let w = self.param_node(tape, bindings, &format!("mapping.fc{i}.w"));
                    let b = self.param_node(tape, bindings, &format!("mapping.fc{i}.b"));
                    wv = tape.matmul(wv, w)?;
                    wv = tape.add(wv, b)?;
                    if i + 1 < depth {
                        wv = tape.relu(wv)?;
                    }
                }
                let w_mean = tape.constant(self.params["mapping.w_mean"].clone());
                let centered = tape.sub(wv, w_mean)?;
                let scaled = tape.scale(centered, psi)?;
                let w_trunc = tape.add(w_mean, scaled)?;

                let mut x = self.param_node(tape, bindings, "synthesis.const");
                for (i, shape) in block_shapes.iter().enumerate() {
                    // x = relu(x + B * w_B)
                    let noise = match noise_nodes.get(i) {
                        Some(&n) => n,
                        None => tape.constant(Tensor::zeros(shape)),
                    };
                    let nw = self.param_node(tape, bindings, &format!("block{i}.noise_w"));
                    let weighted = tape.mul(noise, nw)?;
                    x = tape.add(x, weighted)?;
                    x = tape.relu(x)?;
                    // AdaIN with projected (or overridden) style.
                    let ov = overrides.iter().find(|o| o.layer == i);
                    let (gamma, beta) = match ov {
                        Some(o) => (tape.constant(o.gamma.clone()), tape.constant(o.beta.clone())),
                        None => {
                            let ch = shape[0];
                            let gw = self.param_node(tape, bindings, &format!("block{i}.gamma.w"));
                            let gb = self.param_node(tape, bindings, &format!("block{i}.gamma.b"));
                            let bw = self.param_node(tape, bindings, &format!("block{i}.beta.w"));
                            let bb = self.param_node(tape, bindings, &format!("block{i}.beta.b"));
                            let g = tape.matmul(w_trunc, gw)?;
                            let g = tape.add(g, gb)?;
                            let g = tape.reshape(g, vec![ch])?;
                            let b = tape.matmul(w_trunc, bw)?;
                            let b = tape.add(b, bb)?;
                            let b = tape.reshape(b, vec![ch])?;
                            (g, b)
                        }
                    };
                    x = tape.instance_norm(x, gamma, beta, INSTANCE_NORM_EPS)?;
                    if i < up_channels.len() {
                        x = tape.upsample2x(x)?;
                        let w = self.param_node(tape, bindings, &format!("up{i}.w"));
                        let b = self.param_node(tape, bindings, &format!("up{i}.b"));
                        x = tape.conv2d(x, w, Some(b), 1, 1)?;
                    }
                }
                Ok(tape.sigmoid(x)?)
            }
        }
    }

    fn check_override(&self, ov: &StyleOverride) -> Result<(), GeneratorError> {
        let shapes = self.arch.block_shapes();
        if shapes.is_empty() {
            return Err(GeneratorError::NotStyleModel {
                op: "style override",
            });
        }
        if ov.layer >= shapes.len() {
            return Err(GeneratorError::OverrideLayer {
                layer: ov.layer,
                blocks: shapes.len(),
            });
        }
        let full = shapes[ov.layer].to_vec();
        let c = full[0];
        for (which, t) in [("gamma", &ov.gamma), ("beta", &ov.beta)] {
            if t.shape() != [c] && t.shape() != full.as_slice() {
                return Err(GeneratorError::OverrideShape {
                    which,
                    got: t.shape().to_vec(),
                    c,
                    full,
                });
            }
        }
        Ok(())
    }

    /// Generate an image; pure in (model, seed, noise).
    pub fn generate(&self, seed: &Tensor, noise: &NoiseInput) -> Result<Tensor, GeneratorError> {
        self.generate_impl(seed, noise, &[])
    }

    /// Generate with explicit AdaIN style overrides (style models only).
    pub fn generate_with_override(
        &self,
        seed: &Tensor,
        noise: &NoiseInput,
        ov: &StyleOverride,
    ) -> Result<Tensor, GeneratorError> {
        if !self.arch.is_style() {
            return Err(GeneratorError::NotStyleModel {
                op: "generate_with_override",
            });
        }
        self.generate_impl(seed, noise, std::slice::from_ref(ov))
    }

    fn generate_impl(
        &self,
        seed: &Tensor,
        noise: &NoiseInput,
        overrides: &[StyleOverride],
    ) -> Result<Tensor, GeneratorError> {
        seed.check_finite().map_err(|_| GeneratorError::GenerationFailed {
            context: "seed",
        })?;
        let mut tape = Tape::new();
        let s = tape.constant(seed.clone());
        let noise_nodes: Vec<NodeId> = noise
            .layers
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let out = self.forward_on_tape(&mut tape, s, &noise_nodes, noise.psi, overrides, None)?;
        let image = tape.value(out).clone();
        if !image.all_finite() {
            return Err(GeneratorError::GenerationFailed { context: "output" });
        }
        Ok(image)
    }
}

fn digest_of(arch: &GeneratorArch, params: &BTreeMap<String, Tensor>) -> [u8; 32] {
    let bytes = format::write_model_bytes(&arch.canonical_json(), params);
    let mut h = Sha256::new();
    h.update(&bytes);
    h.finalize().into()
}

/// Mean mapping-network output over a fixed population of seeds; the frozen
/// center that psi-truncation interpolates toward.
fn estimate_w_mean(
    arch: &GeneratorArch,
    params: &BTreeMap<String, Tensor>,
) -> Result<Tensor, GeneratorError> {
    let (seed_dim, style_dim, depth) = match arch {
        GeneratorArch::StyleInjection {
            seed_dim,
            style_dim,
            mapping_depth,
            ..
        } => (*seed_dim, *style_dim, *mapping_depth),
        _ => unreachable!("estimate_w_mean on non-style arch"),
    };
    let mut rng = DetRng::derived(0, &[tag("w-mean-population")]);
    let mut acc = vec![0.0f64; style_dim];
    for _ in 0..W_MEAN_SAMPLES {
        let seed = rng.standard_normal_tensor(&[seed_dim]);
        let mut v = seed.into_data();
        for i in 0..depth {
            let w = &params[&format!("mapping.fc{i}.w")];
            let b = &params[&format!("mapping.fc{i}.b")];
            let in_dim = w.shape()[0];
            let out_dim = w.shape()[1];
            let mut out = vec![0.0f32; out_dim];
            out.copy_from_slice(&b.data()[..out_dim]);
            for (p, &xv) in v.iter().enumerate().take(in_dim) {
                let row = &w.data()[p * out_dim..(p + 1) * out_dim];
                for (o, &wv) in out.iter_mut().zip(row) {
                    *o += xv * wv;
                }
            }
            if i + 1 < depth {
                for o in out.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            v = out;
        }
        for (a, &x) in acc.iter_mut().zip(&v) {
            *a += x as f64;
        }
    }
    let data: Vec<f32> = acc
        .iter()
        .map(|&a| (a / W_MEAN_SAMPLES as f64) as f32)
        .collect();
    Ok(Tensor::new(vec![1, style_dim], data)?)
}

/// Pin a style model's final AdaIN block so it emits `target` exactly:
/// gamma = 0 and beta = logit(target). Values at exactly 0 or 1 are clamped
/// into (0,1) first; the boolean reports whether clamping happened.
pub fn force_output(
    model: &GeneratorModel,
    target: &Tensor,
) -> Result<(StyleOverride, bool), GeneratorError> {
    if !model.arch().is_style() {
        return Err(GeneratorError::NotStyleModel { op: "force_output" });
    }
    let expected = model.arch().image_shape().to_vec();
    if target.shape() != expected.as_slice() {
        return Err(GeneratorError::TargetShape {
            expected,
            got: target.shape().to_vec(),
        });
    }
    let mut clamped = false;
    let beta_data: Vec<f32> = target
        .data()
        .iter()
        .map(|&p| {
            let q = if p < 1e-6 || p > 1.0 - 1e-6 {
                clamped = true;
                p.clamp(1e-6, 1.0 - 1e-6)
            } else {
                p
            };
            (q / (1.0 - q)).ln()
        })
        .collect();
    let shape = target.shape().to_vec();
    let layer = model.arch().style_blocks() - 1;
    Ok((
        StyleOverride {
            layer,
            gamma: Tensor::zeros(&shape),
            beta: Tensor::new(shape, beta_data)?,
        },
        clamped,
    ))
}
