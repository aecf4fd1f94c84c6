//! Procedural toy datasets for adversarial training.
//!
//! Two families: `blob-faces` (two Gaussian eyes and an arc mouth on a soft
//! face disk) and `two-class-digits` (rings and vertical bars). Every image
//! is a pure function of the spec, so the same spec reproduces the dataset
//! byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{tag, DetRng};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset images must be single-channel, got shape {0:?}")]
    Channels(Vec<usize>),
    #[error("count must be positive")]
    EmptyCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyDatasetKind {
    BlobFaces,
    TwoClassDigits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub kind: ToyDatasetKind,
    pub count: usize,
    pub image_shape: [usize; 3],
    /// Std of feature-position jitter, in pixels.
    pub position_jitter: f32,
    /// Relative std of feature-size jitter.
    pub scale_jitter: f32,
    /// Std of brightness jitter.
    pub intensity_jitter: f32,
    pub rng_seed: u64,
}

impl ToyDatasetSpec {
    pub fn blob_faces(count: usize, rng_seed: u64) -> Self {
        ToyDatasetSpec {
            kind: ToyDatasetKind::BlobFaces,
            count,
            image_shape: [1, 32, 32],
            position_jitter: 1.2,
            scale_jitter: 0.12,
            intensity_jitter: 0.06,
            rng_seed,
        }
    }

    pub fn two_class_digits(count: usize, rng_seed: u64) -> Self {
        ToyDatasetSpec {
            kind: ToyDatasetKind::TwoClassDigits,
            count,
            image_shape: [1, 32, 32],
            position_jitter: 1.5,
            scale_jitter: 0.15,
            intensity_jitter: 0.08,
            rng_seed,
        }
    }
}

/// Deterministic ordered image collection; all pixels in [0,1].
pub fn make_toy_dataset(spec: &ToyDatasetSpec) -> Result<Vec<Tensor>, DatasetError> {
    if spec.count == 0 {
        return Err(DatasetError::EmptyCount);
    }
    if spec.image_shape[0] != 1 {
        return Err(DatasetError::Channels(spec.image_shape.to_vec()));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng = DetRng::derived(spec.rng_seed, &[tag("toy-image"), i as u64]);
            Ok(match spec.kind {
                ToyDatasetKind::BlobFaces => blob_face(spec, &mut rng),
                ToyDatasetKind::TwoClassDigits => {
                    if i % 2 == 0 {
                        ring_digit(spec, &mut rng)
                    } else {
                        bar_digit(spec, &mut rng)
                    }
                }
            })
        })
        .collect()
}

fn gauss_bump(d2: f32, sigma: f32) -> f32 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn blob_face(spec: &ToyDatasetSpec, rng: &mut DetRng) -> Tensor {
    let [_, h, w] = spec.image_shape;
    let pj = spec.position_jitter;
    let sj = spec.scale_jitter;
    let ij = spec.intensity_jitter;
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    let face_r = 13.0 * (1.0 + sj * rng.normal_f32());
    let face_v = 0.35 + ij * rng.normal_f32();
    let eye_dx = 6.0 * (1.0 + sj * rng.normal_f32());
    let eye_y = cy - 4.5 + pj * rng.normal_f32();
    let eye_sigma = 1.7 * (1.0 + sj * rng.normal_f32());
    let eye_v = 0.55 + ij * rng.normal_f32();
    let (e0y, e0x) = (eye_y + pj * 0.3 * rng.normal_f32(), cx - eye_dx + pj * rng.normal_f32());
    let (e1y, e1x) = (eye_y + pj * 0.3 * rng.normal_f32(), cx + eye_dx + pj * rng.normal_f32());
    let mouth_y = cy + 5.5 + pj * rng.normal_f32();
    let mouth_r = 5.0 * (1.0 + sj * rng.normal_f32());
    let mouth_v = 0.5 + ij * rng.normal_f32();
    let bg = 0.08 + 0.5 * ij * rng.normal_f32();

    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32, x as f32);
            let mut v = bg;
            let rc = ((yf - cy).powi(2) + (xf - cx).powi(2)).sqrt();
            // Soft face disk.
            v += face_v / (1.0 + ((rc - face_r) / 1.2).exp());
            // Eyes.
            v += eye_v * gauss_bump((yf - e0y).powi(2) + (xf - e0x).powi(2), eye_sigma);
            v += eye_v * gauss_bump((yf - e1y).powi(2) + (xf - e1x).powi(2), eye_sigma);
            // Mouth: lower half of a ring around (mouth_y - mouth_r*0.5).
            if yf > mouth_y - 1.0 {
                let md = (((yf - mouth_y).powi(2) + (xf - cx).powi(2)).sqrt() - mouth_r).abs();
                v += mouth_v * gauss_bump(md * md, 1.0);
            }
            data[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, h, w], data).expect("consistent shape")
}

fn ring_digit(spec: &ToyDatasetSpec, rng: &mut DetRng) -> Tensor {
    let [_, h, w] = spec.image_shape;
    let cy = h as f32 / 2.0 + spec.position_jitter * rng.normal_f32();
    let cx = w as f32 / 2.0 + spec.position_jitter * rng.normal_f32();
    let r = 8.5 * (1.0 + spec.scale_jitter * rng.normal_f32());
    let v0 = 0.85 + spec.intensity_jitter * rng.normal_f32();
    let thickness = 1.4 * (1.0 + spec.scale_jitter * rng.normal_f32());
    let mut data = vec![0.05f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = (((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt() - r).abs();
            let v = 0.05 + v0 * gauss_bump(d * d, thickness);
            data[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, h, w], data).expect("consistent shape")
}

fn bar_digit(spec: &ToyDatasetSpec, rng: &mut DetRng) -> Tensor {
    let [_, h, w] = spec.image_shape;
    let cx = w as f32 / 2.0 + spec.position_jitter * rng.normal_f32();
    let half_len = 9.0 * (1.0 + spec.scale_jitter * rng.normal_f32());
    let cy = h as f32 / 2.0 + spec.position_jitter * rng.normal_f32();
    let v0 = 0.85 + spec.intensity_jitter * rng.normal_f32();
    let thickness = 1.3 * (1.0 + spec.scale_jitter * rng.normal_f32());
    let mut data = vec![0.05f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f32 - cy).abs() - half_len;
            let dx = (x as f32 - cx).abs();
            let d2 = dx * dx + dy.max(0.0).powi(2);
            let v = 0.05 + v0 * gauss_bump(d2, thickness);
            data[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, h, w], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::quantize8;

    #[test]
    fn zero_jitter_collapses_to_identical_images() {
        let spec = ToyDatasetSpec {
            position_jitter: 0.0,
            scale_jitter: 0.0,
            intensity_jitter: 0.0,
            ..ToyDatasetSpec::blob_faces(5, 3)
        };
        let imgs = make_toy_dataset(&spec).unwrap();
        for img in &imgs[1..] {
            assert_eq!(img.data(), imgs[0].data());
        }
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        for spec in [
            ToyDatasetSpec::blob_faces(20, 1),
            ToyDatasetSpec::two_class_digits(20, 2),
        ] {
            for img in make_toy_dataset(&spec).unwrap() {
                assert!(img.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_datasets() {
        let spec = ToyDatasetSpec::blob_faces(10, 42);
        let a = make_toy_dataset(&spec).unwrap();
        let b = make_toy_dataset(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(quantize8(x), quantize8(y));
            assert!(x
                .data()
                .iter()
                .zip(y.data())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn digit_classes_alternate_and_differ() {
        let spec = ToyDatasetSpec::two_class_digits(4, 7);
        let imgs = make_toy_dataset(&spec).unwrap();
        let d = |a: &Tensor, b: &Tensor| -> f32 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum()
        };
        // Rings (0,2) resemble each other more than they resemble bars (1,3).
        assert!(d(&imgs[0], &imgs[2]) < d(&imgs[0], &imgs[1]));
        assert!(d(&imgs[1], &imgs[3]) < d(&imgs[1], &imgs[2]));
    }
}
