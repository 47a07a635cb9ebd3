//! File formats: the binary tensor container and 8-bit PGM/PPM images.
//!
//! Tensor container layout: 8-byte magic `SAKDTNSR`, a little-endian u32
//! length prefix, a UTF-8 JSON header `{"shape":[…],"dtype":"f64"}`, then the
//! row-major payload as little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"SAKDTNSR";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a tensor container")]
    BadMagic { path: String },
    #[error("{path}: malformed header: {detail}")]
    BadHeader { path: String, detail: String },
    #[error("{path}: payload holds {got} values, header shape {shape:?} wants {expected}")]
    PayloadMismatch {
        path: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{path}: non-finite value in payload")]
    NonFinite { path: String },
    #[error("{path}: unsupported image format (want binary P5/P6 or ascii P2)")]
    BadImage { path: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    shape: Vec<usize>,
    dtype: String,
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Write a tensor to the binary container format.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let header = serde_json::to_vec(&TensorHeader {
        shape: tensor.shape().to_vec(),
        dtype: "f64".to_string(),
    })
    .expect("header serialization cannot fail");
    let mut out = Vec::with_capacity(8 + 4 + header.len() + tensor.len() * 8);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(file_err(path))
}

/// Read a tensor from the binary container format.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut file = fs::File::open(path).map_err(file_err(path))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(file_err(path))?;
    if &magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes).map_err(file_err(path))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(file_err(path))?;
    let header: TensorHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| IoError::BadHeader {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    if header.dtype != "f64" {
        return Err(IoError::BadHeader {
            path: path.display().to_string(),
            detail: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(file_err(path))?;
    let expected: usize = header.shape.iter().product();
    if payload.len() != expected * 8 {
        return Err(IoError::PayloadMismatch {
            path: path.display().to_string(),
            shape: header.shape,
            expected,
            got: payload.len() / 8,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(header.shape, data).map_err(|_| IoError::NonFinite {
        path: path.display().to_string(),
    })
}

// ── PGM / PPM ───────────────────────────────────────────────────────

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Write a binary PGM (P5).
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    debug_assert_eq!(image.pixels.len(), image.width * image.height);
    let mut file = fs::File::create(path).map_err(file_err(path))?;
    write!(file, "P5\n{} {}\n255\n", image.width, image.height).map_err(file_err(path))?;
    file.write_all(&image.pixels).map_err(file_err(path))
}

enum PnmKind {
    GrayBinary,
    GrayAscii,
    RgbBinary,
}

fn parse_pnm(path: &Path) -> Result<(PnmKind, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let bad = || IoError::BadImage {
        path: path.display().to_string(),
    };
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::GrayBinary,
        Some(b"P6") => PnmKind::RgbBinary,
        Some(b"P2") => PnmKind::GrayAscii,
        _ => return Err(bad()),
    };
    // Header tokens: width, height, maxval, with '#' comments allowed.
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?;
        tokens.push(token.parse::<usize>().map_err(|_| bad())?);
    }
    if tokens.len() != 3 || tokens[2] != 255 {
        return Err(bad());
    }
    let (width, height) = (tokens[0], tokens[1]);
    let data = match kind {
        PnmKind::GrayBinary | PnmKind::RgbBinary => {
            pos += 1; // single whitespace after maxval
            let channels = if matches!(kind, PnmKind::RgbBinary) { 3 } else { 1 };
            let need = width * height * channels;
            if bytes.len() < pos + need {
                return Err(bad());
            }
            bytes[pos..pos + need].to_vec()
        }
        PnmKind::GrayAscii => {
            let rest = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad())?;
            let values: std::result::Result<Vec<u8>, _> =
                rest.split_whitespace().map(|t| t.parse::<u8>()).collect();
            let values = values.map_err(|_| bad())?;
            if values.len() != width * height {
                return Err(bad());
            }
            values
        }
    };
    Ok((kind, width, height, data))
}

/// Read a PGM (P5 binary or P2 ascii) as grayscale.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let (kind, width, height, pixels) = parse_pnm(path)?;
    match kind {
        PnmKind::GrayBinary | PnmKind::GrayAscii => Ok(GrayImage {
            width,
            height,
            pixels,
        }),
        PnmKind::RgbBinary => Err(IoError::BadImage {
            path: path.display().to_string(),
        }),
    }
}

/// Read a PGM or PPM; PGM loads as single-channel, PPM as three.
/// Returns (channels, height, width, pixels in channel-major order, [0,1]).
pub fn read_frame(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let (kind, width, height, raw) = parse_pnm(path)?;
    let channels = match kind {
        PnmKind::GrayBinary | PnmKind::GrayAscii => 1,
        PnmKind::RgbBinary => 3,
    };
    let mut planar = vec![0.0; channels * height * width];
    for p in 0..height * width {
        for c in 0..channels {
            planar[c * height * width + p] = raw[p * channels + c] as f64 / 255.0;
        }
    }
    Ok((channels, height, width, planar))
}

/// Map a value in [−1, 1] to an 8-bit intensity.
pub fn quantize_signed_unit(v: f64) -> u8 {
    let scaled = ((v + 1.0) / 2.0 * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Min-max map an arbitrary map to 8-bit; a constant map becomes all zeros.
pub fn quantize_min_max(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - min) / (max - min)) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::new(vec![2, 3], vec![1.5, -2.0, 0.0, 3.25, 1e-12, -7.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn tensor_container_layout_is_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"SAKDTNSR");
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header["shape"], serde_json::json!([2]));
        assert_eq!(header["dtype"], "f64");
        assert_eq!(bytes.len(), 12 + len + 16);
        assert_eq!(f64::from_le_bytes(bytes[12 + len..20 + len].try_into().unwrap()), 1.0);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tnsr");
        fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(read_tensor(&path), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn pgm_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 127, 255, 10, 20, 30],
        };
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_reads_as_three_planes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        fs::write(&path, bytes).unwrap();
        let (c, h, w, data) = read_frame(&path).unwrap();
        assert_eq!((c, h, w), (3, 1, 2));
        assert_eq!(data, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn signed_unit_quantization_endpoints() {
        assert_eq!(quantize_signed_unit(-1.0), 0);
        assert_eq!(quantize_signed_unit(1.0), 255);
        assert_eq!(quantize_signed_unit(0.0), 128);
    }

    #[test]
    fn min_max_quantization_constant_map_is_zero() {
        assert_eq!(quantize_min_max(&[2.0, 2.0]), vec![0, 0]);
        assert_eq!(quantize_min_max(&[0.0, 1.0, 2.0]), vec![0, 128, 255]);
    }
}
