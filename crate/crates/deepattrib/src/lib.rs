//! Attribution of synthetic images to the generative models that produced
//! them, by gradient-based seed reconstruction.
//!
//! Given a synthetic image and a pool of candidate generators, each
//! candidate searches its latent space for a seed whose output matches the
//! image; the candidate achieving the smallest final reconstruction distance
//! wins. The crate contains everything needed to run that pipeline end to
//! end at desk scale, self-contained on a CPU:
//!
//! - [`tensor`] / [`autodiff`] / [`adam`]: dense f32 tensors, a tape-based
//!   reverse-mode differentiation engine, and the optimizer driving
//!   reconstruction.
//! - [`generators`]: two differentiable toy generator families (a plain
//!   deconvolutional one and a style-injection one with per-layer noise and
//!   adaptive instance normalization), plus a binary model format.
//! - [`training`] / [`dataset`]: toy-scale adversarial training so
//!   attributed models are trained artifacts, and fine-tuning to build
//!   parent/child model families.
//! - [`distance`]: raw pixel distance, feature-space distance through a
//!   fixed random convolutional extractor, and SSIM.
//! - [`attribution`]: seed reconstruction and argmin attribution over a
//!   candidate pool, with multi-restart support.
//! - [`perturb`]: the robustness suite — augmentations, JPEG-style
//!   compression, FGSM/CW-style attacks, and a substitute classifier for
//!   transferability studies.
//! - [`ledger`]: an append-only hash-linked ledger of signed generation
//!   records, verified by deterministically regenerating each image.
//! - [`harness`]: reproducible experiment drivers with JSON/CSV reports.
//!
//! Runnable demonstrations of each capability live in `examples/`; the
//! `deepattrib` binary exposes the same functionality as subcommands.

pub mod adam;
pub mod attribution;
pub mod autodiff;
pub mod dataset;
pub mod distance;
pub mod generators;
pub mod gradcheck;
pub mod harness;
pub mod imageio;
pub mod ledger;
pub mod perturb;
pub mod rng;
pub mod tensor;
pub mod training;

pub use adam::AdamState;
pub use attribution::{attribute, reconstruct, AttributionReport, ReconstructionConfig};
pub use autodiff::{Attrs, NodeId, PrimitiveKind, Tape};
pub use generators::{GeneratorArch, GeneratorModel, NoiseInput, StyleOverride};
pub use tensor::Tensor;

/// Canonical JSON: sorted keys, no whitespace.
///
/// Serialization goes through `serde_json::Value`, whose object map keeps
/// keys in sorted order, so any two structurally equal values produce
/// byte-identical text.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}
