//! Post-generation manipulations: non-adversarial augmentations, JPEG-style
//! compression, gradient-based attacks, and the substitute classifier used
//! for transferability studies.

mod attacks;
mod jpeg;
mod substitute;

pub use attacks::{cw_image, fgsm_image, fgsm_seed, AttackNorm, CwResult};
pub use jpeg::jpeg_like_compress;
pub use substitute::{
    train_substitute, SubstituteClassifier, SubstituteConfig, SubstituteTrainReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::distance::{bilinear_resize, DistanceError};
use crate::generators::GeneratorError;
use crate::rng::{tag, DetRng};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("image must be [C,H,W], got {0:?}")]
    Rank(Vec<usize>),
    #[error("jpeg quality must be in 1..=100, got {0}")]
    Quality(u32),
    #[error("attack epsilon must be >= 0, got {0}")]
    Epsilon(f32),
    #[error("cw weight c must be > 0, got {0}")]
    CwWeight(f32),
    #[error("classifier expects {expected} classes, got label {got}")]
    LabelRange { expected: usize, got: usize },
    #[error("training set is empty or labels mismatch images")]
    BadTrainingSet,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Non-adversarial manipulations; output shape always equals input shape
/// and pixels are clamped back to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    /// Control row: returns the image unchanged.
    Identity,
    /// Gaussian blur with kernel size drawn from {3,5,7}.
    GaussianBlur,
    /// Additive Gaussian noise with variance 0.01.
    GaussianNoise,
    /// Exact horizontal flip.
    Mirror,
    /// Random crop to 90-100% of each axis, resized back.
    RandomCrop,
    /// Rotation by 0-5 degrees, bilinear with edge padding.
    RandomRotate,
    /// Center 90% crop, resized back.
    ZoomIn,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 7] = [
        AugmentationKind::Identity,
        AugmentationKind::GaussianBlur,
        AugmentationKind::GaussianNoise,
        AugmentationKind::Mirror,
        AugmentationKind::RandomCrop,
        AugmentationKind::RandomRotate,
        AugmentationKind::ZoomIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::Identity => "identity",
            AugmentationKind::GaussianBlur => "gaussian-blur",
            AugmentationKind::GaussianNoise => "gaussian-noise",
            AugmentationKind::Mirror => "mirror",
            AugmentationKind::RandomCrop => "random-crop",
            AugmentationKind::RandomRotate => "random-rotate",
            AugmentationKind::ZoomIn => "zoom-in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub rng_seed: u64,
}

/// Apply one augmentation; deterministic given the spec seed.
pub fn augment(x: &Tensor, spec: &AugmentationSpec) -> Result<Tensor, PerturbError> {
    if x.shape().len() != 3 {
        return Err(PerturbError::Rank(x.shape().to_vec()));
    }
    let mut rng = DetRng::derived(spec.rng_seed, &[tag("augment"), tag(spec.kind.name())]);
    let out = match spec.kind {
        AugmentationKind::Identity => x.clone(),
        AugmentationKind::GaussianBlur => {
            let kernel = 2 * rng.int_range(1, 3) + 1; // 3, 5, or 7
            gaussian_blur(x, kernel)
        }
        AugmentationKind::GaussianNoise => {
            let std = 0.01f32.sqrt();
            let data = x
                .data()
                .iter()
                .map(|&p| p + rng.normal_f32() * std)
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        AugmentationKind::Mirror => mirror(x),
        AugmentationKind::RandomCrop => {
            let (c, h, w) = dims(x);
            let frac = rng.uniform_range(0.9, 1.0);
            let ch = ((h as f32 * frac).round() as usize).clamp(1, h);
            let cw = ((w as f32 * frac).round() as usize).clamp(1, w);
            let oy = rng.int_range(0, h - ch);
            let ox = rng.int_range(0, w - cw);
            let cropped = crop(x, c, oy, ox, ch, cw);
            bilinear_resize(&cropped, h, w)?
        }
        AugmentationKind::RandomRotate => {
            let degrees = rng.uniform_range(0.0, 5.0);
            rotate_bilinear(x, degrees)
        }
        AugmentationKind::ZoomIn => {
            let (c, h, w) = dims(x);
            let ch = ((h as f32 * 0.9).round() as usize).max(1);
            let cw = ((w as f32 * 0.9).round() as usize).max(1);
            let cropped = crop(x, c, (h - ch) / 2, (w - cw) / 2, ch, cw);
            bilinear_resize(&cropped, h, w)?
        }
    };
    Ok(out.clamped(0.0, 1.0))
}

fn dims(x: &Tensor) -> (usize, usize, usize) {
    (x.shape()[0], x.shape()[1], x.shape()[2])
}

/// Exact horizontal flip (x axis along the center line).
pub fn mirror(x: &Tensor) -> Tensor {
    let (c, h, w) = dims(x);
    let mut data = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let row = &x.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
            let out = &mut data[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (o, &v) in out.iter_mut().zip(row.iter().rev()) {
                *o = v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data).expect("consistent shape")
}

fn crop(x: &Tensor, c: usize, oy: usize, ox: usize, ch: usize, cw: usize) -> Tensor {
    let (_, h, w) = dims(x);
    let _ = h;
    let mut data = vec![0.0f32; c * ch * cw];
    for chn in 0..c {
        for y in 0..ch {
            let src = &x.data()[(chn * h + oy + y) * w + ox..(chn * h + oy + y) * w + ox + cw];
            data[(chn * ch + y) * cw..(chn * ch + y + 1) * cw].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, ch, cw], data).expect("consistent shape")
}

/// Separable Gaussian blur with the OpenCV sigma convention for the kernel
/// size, replicate edge handling.
pub fn gaussian_blur(x: &Tensor, kernel: usize) -> Tensor {
    let (c, h, w) = dims(x);
    let sigma = 0.3 * ((kernel as f32 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = kernel / 2;
    let mut weights = vec![0.0f32; kernel];
    let mut sum = 0.0f32;
    for (i, wt) in weights.iter_mut().enumerate() {
        let d = i as f32 - half as f32;
        *wt = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *wt;
    }
    for wt in weights.iter_mut() {
        *wt /= sum;
    }
    let mut tmp = vec![0.0f32; c * h * w];
    // Horizontal pass.
    for chn in 0..c {
        for y in 0..h {
            let row = &x.data()[(chn * h + y) * w..(chn * h + y + 1) * w];
            let out = &mut tmp[(chn * h + y) * w..(chn * h + y + 1) * w];
            for (xi, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (i, &wt) in weights.iter().enumerate() {
                    let sx = (xi + i).saturating_sub(half).min(w - 1);
                    acc += wt * row[sx];
                }
                *o = acc;
            }
        }
    }
    // Vertical pass.
    let mut data = vec![0.0f32; c * h * w];
    for chn in 0..c {
        for y in 0..h {
            for xi in 0..w {
                let mut acc = 0.0f32;
                for (i, &wt) in weights.iter().enumerate() {
                    let sy = (y + i).saturating_sub(half).min(h - 1);
                    acc += wt * tmp[(chn * h + sy) * w + xi];
                }
                data[(chn * h + y) * w + xi] = acc;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data).expect("consistent shape")
}

/// Rotate counterclockwise about the image center, bilinear sampling with
/// edge padding (coordinates clamped to the source).
pub fn rotate_bilinear(x: &Tensor, degrees: f32) -> Tensor {
    let (c, h, w) = dims(x);
    let theta = degrees.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let mut data = vec![0.0f32; c * h * w];
    for chn in 0..c {
        let plane = &x.data()[chn * h * w..(chn + 1) * h * w];
        for y in 0..h {
            for xi in 0..w {
                // Inverse-map the output pixel into the source.
                let dy = y as f32 - cy;
                let dx = xi as f32 - cx;
                let sy = (cos_t * dy + sin_t * dx + cy).clamp(0.0, h as f32 - 1.0);
                let sx = (-sin_t * dy + cos_t * dx + cx).clamp(0.0, w as f32 - 1.0);
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let wy = sy - y0 as f32;
                let wx = sx - x0 as f32;
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                data[(chn * h + y) * w + xi] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(seed: u64) -> Tensor {
        let mut rng = DetRng::new(seed);
        Tensor::new(
            vec![1, 32, 32],
            (0..1024)
                .map(|_| 0.3 + 0.4 * rng.uniform_f32())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mirror_is_an_involution() {
        let x = test_image(1);
        let m = mirror(&mirror(&x));
        assert!(x
            .data()
            .iter()
            .zip(m.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn gaussian_noise_mean_abs_matches_half_normal() {
        // E|N(0, 0.1^2)| = 0.1 * sqrt(2/pi) = 0.0798. Pixels kept away from
        // 0/1 so clamping cannot bias the estimate.
        let x = test_image(2);
        let spec = AugmentationSpec {
            kind: AugmentationKind::GaussianNoise,
            rng_seed: 77,
        };
        let y = augment(&x, &spec).unwrap();
        let mean_abs: f32 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / x.numel() as f32;
        assert!((mean_abs - 0.0798).abs() < 0.01, "{mean_abs}");
    }

    #[test]
    fn rotate_by_zero_is_identity_within_epsilon() {
        let x = test_image(3);
        let r = rotate_bilinear(&x, 0.0);
        for (a, b) in x.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn augmentations_preserve_shape_and_range() {
        let x = test_image(4);
        for kind in AugmentationKind::ALL {
            let y = augment(&x, &AugmentationSpec { kind, rng_seed: 5 }).unwrap();
            assert_eq!(y.shape(), x.shape(), "{kind:?}");
            assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn augmentation_is_deterministic_in_seed() {
        let x = test_image(6);
        for kind in AugmentationKind::ALL {
            let spec = AugmentationSpec { kind, rng_seed: 9 };
            let a = augment(&x, &spec).unwrap();
            let b = augment(&x, &spec).unwrap();
            assert_eq!(a.data(), b.data(), "{kind:?}");
        }
    }

    #[test]
    fn blur_smooths_towards_the_mean() {
        let x = test_image(7);
        let y = gaussian_blur(&x, 5);
        let var = |t: &Tensor| {
            let mu: f32 = t.data().iter().sum::<f32>() / t.numel() as f32;
            t.data().iter().map(|&p| (p - mu).powi(2)).sum::<f32>() / t.numel() as f32
        };
        assert!(var(&y) < var(&x));
    }
}
