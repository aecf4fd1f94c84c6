//! Binary PGM (P5) / PPM (P6) export and import for image tensors.
//!
//! Single-channel images are written as P5, three-channel as P6, both with
//! maxval 255. Pixels are the 8-bit quantization of the [0,1] float image.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{quantize8, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported channel count {0} (PGM needs 1, PPM needs 3)")]
    Channels(usize),
    #[error("image tensor must be [C,H,W], got {0:?}")]
    Rank(Vec<usize>),
    #[error("malformed {format} header: {detail}")]
    Header {
        format: &'static str,
        detail: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn write_image<W: Write>(mut w: W, image: &Tensor) -> Result<(), ImageIoError> {
    if image.shape().len() != 3 {
        return Err(ImageIoError::Rank(image.shape().to_vec()));
    }
    let (c, h, wd) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let bytes = quantize8(image);
    match c {
        1 => {
            write!(w, "P5\n{wd} {h}\n255\n")?;
            w.write_all(&bytes)?;
        }
        3 => {
            write!(w, "P6\n{wd} {h}\n255\n")?;
            // [C,H,W] -> interleaved RGB rows.
            let plane = h * wd;
            let mut inter = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                inter.push(bytes[i]);
                inter.push(bytes[plane + i]);
                inter.push(bytes[2 * plane + i]);
            }
            w.write_all(&inter)?;
        }
        other => return Err(ImageIoError::Channels(other)),
    }
    Ok(())
}

pub fn save_image(path: &Path, image: &Tensor) -> Result<(), ImageIoError> {
    let f = std::fs::File::create(path)?;
    write_image(io::BufWriter::new(f), image)
}

fn read_token<R: Read>(r: &mut R, format: &'static str) -> Result<String, ImageIoError> {
    let mut tok = String::new();
    let mut byte = [0u8];
    // Skip whitespace and comment lines.
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            b'#' => {
                while byte[0] != b'\n' {
                    r.read_exact(&mut byte)?;
                }
            }
            b' ' | b'\t' | b'\r' | b'\n' => {}
            _ => break,
        }
    }
    tok.push(byte[0] as char);
    loop {
        if r.read_exact(&mut byte).is_err() {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            break;
        }
        tok.push(byte[0] as char);
        if tok.len() > 32 {
            return Err(ImageIoError::Header {
                format,
                detail: "token too long".into(),
            });
        }
    }
    Ok(tok)
}

pub fn read_image<R: Read>(mut r: R) -> Result<Tensor, ImageIoError> {
    let magic = read_token(&mut r, "pnm")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(ImageIoError::Header {
                format: "pnm",
                detail: format!("unknown magic {other:?}"),
            })
        }
    };
    let parse = |tok: String| -> Result<usize, ImageIoError> {
        tok.parse().map_err(|_| ImageIoError::Header {
            format: "pnm",
            detail: format!("bad integer {tok:?}"),
        })
    };
    let w = parse(read_token(&mut r, "pnm")?)?;
    let h = parse(read_token(&mut r, "pnm")?)?;
    let maxval = parse(read_token(&mut r, "pnm")?)?;
    if maxval != 255 {
        return Err(ImageIoError::Header {
            format: "pnm",
            detail: format!("unsupported maxval {maxval}"),
        });
    }
    let mut bytes = vec![0u8; channels * w * h];
    r.read_exact(&mut bytes)?;
    let plane = w * h;
    let mut data = vec![0.0f32; channels * plane];
    if channels == 1 {
        for (d, &b) in data.iter_mut().zip(&bytes) {
            *d = b as f32 / 255.0;
        }
    } else {
        for i in 0..plane {
            for ch in 0..3 {
                data[ch * plane + i] = bytes[3 * i + ch] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data)?)
}

pub fn load_image(path: &Path) -> Result<Tensor, ImageIoError> {
    let f = std::fs::File::open(path)?;
    read_image(io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_preserves_quantized_pixels() {
        let img = Tensor::new(vec![1, 2, 3], vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        let back = read_image(buf.as_slice()).unwrap();
        assert_eq!(quantize8(&back), quantize8(&img));
    }

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::new(
            vec![3, 1, 2],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        let back = read_image(buf.as_slice()).unwrap();
        assert_eq!(quantize8(&back), quantize8(&img));
    }
}
