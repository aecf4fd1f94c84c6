//! JPEG-style lossy compression: 8x8 block DCT-II, quantization with the
//! standard luminance table under the libjpeg quality scaling, dequantize,
//! inverse DCT. No entropy coding — the quantization noise is the effect
//! under study. Images whose sides are not multiples of 8 are
//! reflect-padded and cropped back.

use crate::tensor::Tensor;

use super::PerturbError;

/// Standard luminance quantization table (quality 50 base), row-major.
const LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// libjpeg quality -> table scaling.
fn scaled_table(quality: u32) -> [f32; 64] {
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let mut out = [0.0f32; 64];
    for (o, &q) in out.iter_mut().zip(&LUMA_QTABLE) {
        let v = (u32::from(q) * scale + 50) / 100;
        *o = v.clamp(1, 255) as f32;
    }
    out
}

/// Orthonormal 8-point DCT-II basis, b[k][n].
fn dct_basis() -> [[f32; 8]; 8] {
    let mut b = [[0.0f32; 8]; 8];
    for (k, row) in b.iter_mut().enumerate() {
        let a = if k == 0 {
            (1.0f32 / 8.0).sqrt()
        } else {
            (2.0f32 / 8.0).sqrt()
        };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f32::consts::PI * (2.0 * n as f32 + 1.0) * k as f32 / 16.0).cos();
        }
    }
    b
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * n - 2 - i.min(2 * n - 2)
    }
}

/// Lossy recompression of a [0,1] image; per-channel, quality in 1..=100.
pub fn jpeg_like_compress(x: &Tensor, quality: u32) -> Result<Tensor, PerturbError> {
    if !(1..=100).contains(&quality) {
        return Err(PerturbError::Quality(quality));
    }
    if x.shape().len() != 3 {
        return Err(PerturbError::Rank(x.shape().to_vec()));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let qt = scaled_table(quality);
    let basis = dct_basis();
    let mut out = vec![0.0f32; c * h * w];

    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        // Reflect-pad into the working buffer, shifted to [-128, 127].
        let mut work = vec![0.0f32; ph * pw];
        for y in 0..ph {
            let sy = reflect_index(y, h);
            for xi in 0..pw {
                let sx = reflect_index(xi, w);
                work[y * pw + xi] = plane[sy * w + sx] * 255.0 - 128.0;
            }
        }
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [[0.0f32; 8]; 8];
                for (y, row) in block.iter_mut().enumerate() {
                    for (xi, v) in row.iter_mut().enumerate() {
                        *v = work[(by + y) * pw + bx + xi];
                    }
                }
                // C = B . block . B^T
                let mut tmp = [[0.0f32; 8]; 8];
                for k in 0..8 {
                    for n in 0..8 {
                        let mut acc = 0.0f32;
                        for m in 0..8 {
                            acc += basis[k][m] * block[m][n];
                        }
                        tmp[k][n] = acc;
                    }
                }
                let mut coef = [[0.0f32; 8]; 8];
                for k in 0..8 {
                    for l in 0..8 {
                        let mut acc = 0.0f32;
                        for n in 0..8 {
                            acc += tmp[k][n] * basis[l][n];
                        }
                        coef[k][l] = acc;
                    }
                }
                // Quantize / dequantize.
                for k in 0..8 {
                    for l in 0..8 {
                        let q = qt[k * 8 + l];
                        coef[k][l] = (coef[k][l] / q).round() * q;
                    }
                }
                // block = B^T . C . B
                for n in 0..8 {
                    for l in 0..8 {
                        let mut acc = 0.0f32;
                        for k in 0..8 {
                            acc += basis[k][n] * coef[k][l];
                        }
                        tmp[n][l] = acc;
                    }
                }
                for (y, row) in block.iter_mut().enumerate() {
                    for (xi, v) in row.iter_mut().enumerate() {
                        let mut acc = 0.0f32;
                        for l in 0..8 {
                            acc += tmp[y][l] * basis[l][xi];
                        }
                        *v = acc;
                    }
                }
                for (y, row) in block.iter().enumerate() {
                    for (xi, &v) in row.iter().enumerate() {
                        work[(by + y) * pw + bx + xi] = v;
                    }
                }
            }
        }
        for y in 0..h {
            for xi in 0..w {
                out[ch * h * w + y * w + xi] =
                    ((work[y * pw + xi] + 128.0) / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).map_err(Into::into)
}
