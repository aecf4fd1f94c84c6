//! Image distances: raw pixel l2, feature-space l2 through a fixed
//! extractor, and SSIM.
//!
//! The feature extractor is three stride-2 3x3 convolutions (channels
//! 8 -> 16 -> 32) with relu, mapping 1x32x32 images to 32x4x4 feature maps.
//! Its weights come from a fixed, published stream seed and are never
//! trained, so every installation computes identical features; the digest
//! of those weights is a repository constant checked at construction.
//!
//! Reconstruction optimizes the squared form of these distances (better
//! conditioned near zero); reported distances are always the norm itself.
//! Argmin decisions are unaffected since the square root is monotone.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::rng::{tag, DetRng};
use crate::tensor::{Tensor, TensorError};

/// Published stream seed for the frozen extractor weights.
pub const FEATURE_EXTRACTOR_SEED: u64 = 0xdeefa77b;
/// SHA-256 of the extractor's weight bytes; checked at construction.
pub const FEATURE_EXTRACTOR_DIGEST: &str =
    "36876865f6bfb6b2e85fd2a8f1ae246c68568e650202eea66c25c5a723cf8855";

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("images have different shapes: {a:?} vs {b:?}")]
    ShapeMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("image shape {got:?} is not [C,H,W]")]
    Rank { got: Vec<usize> },
    #[error("image {h}x{w} is smaller than the {win}x{win} SSIM window")]
    TooSmallForWindow { h: usize, w: usize, win: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which distance the reconstruction objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    RawL2,
    L2Feature,
}

struct ConvLayer {
    weight: Tensor, // [Co, Ci, 3, 3]
    out_ch: usize,
}

/// Frozen random convolutional feature extractor.
pub struct FeatureExtractor {
    layers: Vec<ConvLayer>,
    input_hw: usize,
}

impl FeatureExtractor {
    /// The standard extractor for 32x32 single-channel images.
    pub fn standard() -> Self {
        Self::with_seed(FEATURE_EXTRACTOR_SEED, true)
    }

    fn with_seed(seed: u64, check_digest: bool) -> Self {
        let mut rng = DetRng::derived(seed, &[tag("feature-extractor")]);
        let channels = [1usize, 8, 16, 32];
        let mut layers = Vec::new();
        for i in 0..3 {
            let (ci, co) = (channels[i], channels[i + 1]);
            // He-style scale keeps feature magnitudes O(1) through relu.
            let std = (2.0 / (ci as f32 * 9.0)).sqrt();
            layers.push(ConvLayer {
                weight: rng.normal_tensor(&[co, ci, 3, 3], std),
                out_ch: co,
            });
        }
        let fx = FeatureExtractor {
            layers,
            input_hw: 32,
        };
        if check_digest {
            debug_assert_eq!(
                fx.digest_hex(),
                FEATURE_EXTRACTOR_DIGEST,
                "frozen feature extractor drifted from its published digest"
            );
        }
        fx
    }

    /// SHA-256 over the weight bytes in layer order.
    pub fn digest_hex(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for &x in l.weight.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Record feature extraction on a tape. Non-1x32x32 inputs are
    /// bilinearly resized (and channel-averaged) first, outside the tape.
    pub fn features_on_tape(
        &self,
        tape: &mut Tape,
        image: NodeId,
    ) -> Result<NodeId, DistanceError> {
        let shape = tape.value(image).shape().to_vec();
        if shape.len() != 3 {
            return Err(DistanceError::Rank { got: shape });
        }
        let needs_resize = shape[0] != 1 || shape[1] != self.input_hw || shape[2] != self.input_hw;
        let mut x = image;
        if needs_resize {
            // Resize happens outside the tape, so it must never sit on a
            // differentiated path.
            if tape.node_needs_grad(image) {
                return Err(DistanceError::Rank { got: shape });
            }
            let t = tape.value(image).clone();
            let resized = to_extractor_input(&t, self.input_hw)?;
            x = tape.constant(resized);
        }
        for l in &self.layers {
            let w = tape.constant(l.weight.clone());
            x = tape.conv2d(x, w, None, 2, 1)?;
            x = tape.relu(x)?;
            debug_assert_eq!(tape.value(x).shape()[0], l.out_ch);
        }
        Ok(x)
    }

    /// Extract a feature map; deterministic and differentiable w.r.t. x.
    pub fn extract(&self, image: &Tensor) -> Result<Tensor, DistanceError> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let f = self.features_on_tape(&mut tape, x)?;
        Ok(tape.value(f).clone())
    }
}

/// Average channels to one and bilinearly resize to `hw` x `hw`.
fn to_extractor_input(image: &Tensor, hw: usize) -> Result<Tensor, DistanceError> {
    if image.shape().len() != 3 {
        return Err(DistanceError::Rank {
            got: image.shape().to_vec(),
        });
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut gray = vec![0.0f32; h * w];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for (g, &p) in gray.iter_mut().zip(plane) {
            *g += p / c as f32;
        }
    }
    let gray = Tensor::new(vec![1, h, w], gray)?;
    if h == hw && w == hw {
        return Ok(gray);
    }
    Ok(bilinear_resize(&gray, hw, hw)?)
}

/// Bilinear resize of a [C,H,W] tensor, edge-clamped, align-corners=false.
pub fn bilinear_resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = vec![0.0f32; c * out_h * out_w];
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, h as f32 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, w as f32 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f32;
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out[ch * out_h * out_w + oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Distance between two images under the given kind. Symmetric,
/// non-negative, zero iff the inputs agree (up to float rounding).
pub fn distance(
    kind: DistanceKind,
    a: &Tensor,
    b: &Tensor,
    fx: &FeatureExtractor,
) -> Result<f32, DistanceError> {
    if a.shape() != b.shape() {
        return Err(DistanceError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    let (fa, fb) = match kind {
        DistanceKind::RawL2 => (a.clone(), b.clone()),
        DistanceKind::L2Feature => (fx.extract(a)?, fx.extract(b)?),
    };
    let mut acc = 0.0f32;
    for (x, y) in fa.data().iter().zip(fb.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Record the squared distance between a tape image node and fixed target
/// features/pixels. Returns the squared-distance node; callers report
/// `sqrt(value)` as the distance.
pub fn squared_distance_on_tape(
    kind: DistanceKind,
    tape: &mut Tape,
    image: NodeId,
    target: &Tensor,
    fx: &FeatureExtractor,
) -> Result<NodeId, DistanceError> {
    match kind {
        DistanceKind::RawL2 => {
            if tape.value(image).shape() != target.shape() {
                return Err(DistanceError::ShapeMismatch {
                    a: tape.value(image).shape().to_vec(),
                    b: target.shape().to_vec(),
                });
            }
            let t = tape.constant(target.clone());
            let diff = tape.sub(image, t)?;
            Ok(tape.l2_norm_sq(diff)?)
        }
        DistanceKind::L2Feature => {
            let feats = self::FeatureExtractor::features_on_tape(fx, tape, image)?;
            let target_feats = fx.extract(target)?;
            let t = tape.constant(target_feats);
            let diff = tape.sub(feats, t)?;
            Ok(tape.l2_norm_sq(diff)?)
        }
    }
}

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f32 = 0.01 * 0.01;
const SSIM_C2: f32 = 0.03 * 0.03;

/// Mean SSIM over all 7x7 uniform windows (stride 1), on [0,1] images.
/// Multi-channel inputs are averaged to luminance first. Result is in
/// [-1, 1]; identical images give exactly 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f32, DistanceError> {
    if a.shape() != b.shape() {
        return Err(DistanceError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    if a.shape().len() != 3 {
        return Err(DistanceError::Rank {
            got: a.shape().to_vec(),
        });
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(DistanceError::TooSmallForWindow {
            h,
            w,
            win: SSIM_WINDOW,
        });
    }
    let lum = |t: &Tensor| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for ch in 0..c {
            let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
            for (o, &p) in out.iter_mut().zip(plane) {
                *o += p / c as f32;
            }
        }
        out
    };
    let la = lum(a);
    let lb = lum(b);

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f32;
    let mut total = 0.0f32;
    let mut windows = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f32, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (y0 + dy) * w + x0;
                for dx in 0..SSIM_WINDOW {
                    let xa = la[row + dx];
                    let xb = lb[row + dx];
                    sa += xa;
                    sb += xb;
                    saa += xa * xa;
                    sbb += xb * xb;
                    sab += xa * xb;
                }
            }
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            total += s;
            windows += 1;
        }
    }
    Ok(total / windows as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> FeatureExtractor {
        FeatureExtractor::standard()
    }

    #[test]
    fn extractor_digest_is_the_repository_constant() {
        assert_eq!(standard().digest_hex(), FEATURE_EXTRACTOR_DIGEST);
    }

    #[test]
    fn feature_shape_contract() {
        let fx = standard();
        let img = Tensor::zeros(&[1, 32, 32]);
        let f = fx.extract(&img).unwrap();
        assert_eq!(f.shape(), &[32, 4, 4]);
    }

    #[test]
    fn extraction_is_deterministic() {
        let fx = standard();
        let mut rng = DetRng::new(3);
        let img = rng.normal_tensor(&[1, 32, 32], 0.3).map(|x| x.abs().min(1.0));
        let a = fx.extract(&img).unwrap();
        let b = fx.extract(&img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn features_differentiable_wrt_input() {
        let build = |seed: u64| {
            let fx = standard();
            let mut rng = DetRng::new(seed);
            let mut tape = Tape::new();
            let x = tape.variable(rng.normal_tensor(&[1, 32, 32], 0.3));
            let f = fx.features_on_tape(&mut tape, x).unwrap();
            let loss = tape.l2_norm_sq(f).unwrap();
            (tape, loss, vec![x])
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
    fn distance_of_image_with_itself_is_zero() {
        let fx = standard();
        let mut rng = DetRng::new(5);
        let img = rng.normal_tensor(&[1, 32, 32], 0.2).map(|x| x.abs().min(1.0));
        for kind in [DistanceKind::RawL2, DistanceKind::L2Feature] {
            assert_eq!(distance(kind, &img, &img, &fx).unwrap(), 0.0);
        }
    }

    #[test]
    fn distance_is_symmetric() {
        let fx = standard();
        let mut rng = DetRng::new(6);
        for _ in 0..5 {
            let a = rng.normal_tensor(&[1, 32, 32], 0.2).map(|x| x.abs().min(1.0));
            let b = rng.normal_tensor(&[1, 32, 32], 0.2).map(|x| x.abs().min(1.0));
            for kind in [DistanceKind::RawL2, DistanceKind::L2Feature] {
                let dab = distance(kind, &a, &b, &fx).unwrap();
                let dba = distance(kind, &b, &a, &fx).unwrap();
                assert_eq!(dab, dba);
                assert!(dab >= 0.0);
            }
        }
    }

    #[test]
    fn raw_l2_between_zero_and_one_images() {
        // 1x32x32 all-zeros vs all-ones: sqrt(1024) = 32.
        let fx = standard();
        let a = Tensor::zeros(&[1, 32, 32]);
        let b = Tensor::full(&[1, 32, 32], 1.0);
        let d = distance(DistanceKind::RawL2, &a, &b, &fx).unwrap();
        assert!((d - 32.0).abs() < 1e-4, "{d}");
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let fx = standard();
        let mut rng = DetRng::new(7);
        for _ in 0..10 {
            let mk = |rng: &mut DetRng| rng.normal_tensor(&[1, 32, 32], 0.2).map(|x| x.abs().min(1.0));
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            for kind in [DistanceKind::RawL2, DistanceKind::L2Feature] {
                let ab = distance(kind, &a, &b, &fx).unwrap();
                let bc = distance(kind, &b, &c, &fx).unwrap();
                let ac = distance(kind, &a, &c, &fx).unwrap();
                assert!(ac <= ab + bc + 1e-4);
            }
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = DetRng::new(8);
        let img = rng.normal_tensor(&[1, 32, 32], 0.2).map(|x| x.abs().min(1.0));
        let s = ssim(&img, &img).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        // Checkerboard of 0/1 against its inversion: means cancel, the
        // covariance term is strongly negative. Direct-evaluation oracle on
        // a 2-valued image.
        let (h, w) = (32usize, 32usize);
        let mut data = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = (((y / 4) + (x / 4)) % 2) as f32;
            }
        }
        let a = Tensor::new(vec![1, h, w], data).unwrap();
        let b = a.map(|x| 1.0 - x);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "ssim = {s}");
    }

    #[test]
    fn ssim_decreases_with_noise_level() {
        let mut rng = DetRng::new(9);
        let base = rng.normal_tensor(&[1, 32, 32], 0.15).map(|x| 0.5 + x.clamp(-0.45, 0.45));
        let mut vals = Vec::new();
        for (i, std) in [0.01f32, 0.05, 0.1].iter().enumerate() {
            let mut noise_rng = DetRng::new(100 + i as u64);
            let noisy = Tensor::new(
                base.shape().to_vec(),
                base.data()
                    .iter()
                    .map(|&p| (p + noise_rng.normal_f32() * std).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap();
            vals.push(ssim(&base, &noisy).unwrap());
        }
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let a = Tensor::zeros(&[1, 5, 5]);
        assert!(matches!(
            ssim(&a, &a),
            Err(DistanceError::TooSmallForWindow { .. })
        ));
    }

    #[test]
    fn bilinear_resize_preserves_constants() {
        let img = Tensor::full(&[1, 16, 16], 0.37);
        let up = bilinear_resize(&img, 32, 32).unwrap();
        for &p in up.data() {
            assert!((p - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn non_square_inputs_are_resized_for_features() {
        let fx = standard();
        let img = Tensor::full(&[3, 48, 40], 0.5);
        let f = fx.extract(&img).unwrap();
        assert_eq!(f.shape(), &[32, 4, 4]);
    }
}
