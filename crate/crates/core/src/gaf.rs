//! Gramian Angular Field virtual images from tri-axial sensor windows.
//!
//! Each axis is min-max normalized into [−1, 1], mapped to polar angles
//! θᵢ = arccos(x̃ᵢ), and expanded into the matrix G[i,j] = cos(θᵢ+θⱼ). The
//! three per-axis matrices stack into one virtual image. Timestamps only set
//! the polar radius, which the matrix never consumes; they are carried for
//! provenance.

use std::path::Path;

use thiserror::Error;

use crate::io::{self, GrayImage, IoError};
use crate::tensor::Tensor;

/// Slack allowed on the arccos domain after normalization rounding.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GafError {
    #[error("constant signal (max == min) on axis {axis} of {context}")]
    ConstantSignal { axis: usize, context: String },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("window too short: {got} samples, need at least 2")]
    TooShort { got: usize },
    #[error("normalized value {value} outside [-1, 1] beyond slack")]
    DomainViolation { value: f64 },
    #[error("axes have unequal lengths: {lens:?}")]
    RaggedAxes { lens: [usize; 3] },
    #[error("resize side must be ≥ 2, got {got}")]
    BadResizeSide { got: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, GafError>;

/// What to do with a window axis whose samples are all equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantSignalPolicy {
    /// Reject the window (default).
    #[default]
    Error,
    /// Encode the axis as the all-zeros normalized signal (θ = π/2 so the
    /// channel becomes −1 everywhere) and flag it in provenance.
    ZeroFallback,
}

/// One fixed-length tri-axial sensor segment.
#[derive(Debug, Clone)]
pub struct SensorWindow {
    /// x, y, z sample sequences of identical length.
    pub axes: [Vec<f64>; 3],
    /// Optional monotone timestamps; carried but unused by the encoding.
    pub timestamps: Option<Vec<f64>>,
    pub label: usize,
    pub modality: String,
}

impl SensorWindow {
    pub fn new(axes: [Vec<f64>; 3], label: usize, modality: impl Into<String>) -> Result<Self> {
        let lens = [axes[0].len(), axes[1].len(), axes[2].len()];
        if lens[0] != lens[1] || lens[0] != lens[2] {
            return Err(GafError::RaggedAxes { lens });
        }
        if lens[0] < 2 {
            return Err(GafError::TooShort { got: lens[0] });
        }
        for axis in &axes {
            if let Some(index) = axis.iter().position(|v| !v.is_finite()) {
                return Err(GafError::NonFinite { index });
            }
        }
        Ok(Self {
            axes,
            timestamps: None,
            label,
            modality: modality.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.axes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes[0].is_empty()
    }
}

/// Provenance of a virtual image: where it came from and which axes were
/// degenerate under the zero-fallback policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GafProvenance {
    pub modality: String,
    pub label: usize,
    pub constant_axes: [bool; 3],
}

/// n×n×3 virtual image; one symmetric channel per axis, values in [−1, 1].
#[derive(Debug, Clone)]
pub struct GafImage {
    side: usize,
    /// Channel-major storage: three n×n matrices (x, y, z order).
    channels: [Vec<f64>; 3],
    pub source: GafProvenance,
}

impl GafImage {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn value(&self, c: usize, i: usize, j: usize) -> f64 {
        self.channels[c][i * self.side + j]
    }

    /// Channel-first tensor `3×n×n`, the layout networks consume.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.side;
        let mut data = Vec::with_capacity(3 * n * n);
        for c in 0..3 {
            data.extend_from_slice(&self.channels[c]);
        }
        Tensor::from_parts(vec![3, n, n], data)
    }

    /// Channel-last tensor `n×n×3`, the on-disk layout.
    pub fn to_tensor_hwc(&self) -> Tensor {
        let n = self.side;
        let mut data = Vec::with_capacity(3 * n * n);
        for p in 0..n * n {
            for c in 0..3 {
                data.push(self.channels[c][p]);
            }
        }
        Tensor::from_parts(vec![n, n, 3], data)
    }

    /// Write the image as a tensor container (shape n×n×3).
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_tensor(path, &self.to_tensor_hwc())?;
        Ok(())
    }

    /// Export one channel as an 8-bit PGM, mapping [−1, 1] onto [0, 255].
    pub fn write_channel_pgm(&self, path: &Path, channel: usize) -> Result<()> {
        let pixels = self.channels[channel]
            .iter()
            .map(|&v| io::quantize_signed_unit(v))
            .collect();
        io::write_pgm(
            path,
            &GrayImage {
                width: self.side,
                height: self.side,
                pixels,
            },
        )?;
        Ok(())
    }
}

/// Min-max normalize a signal into [−1, 1]: the minimum maps to −1 and the
/// maximum to +1.
pub fn normalize_signal(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(GafError::TooShort { got: signal.len() });
    }
    if let Some(index) = signal.iter().position(|v| !v.is_finite()) {
        return Err(GafError::NonFinite { index });
    }
    let min = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let max = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(GafError::ConstantSignal {
            axis: 0,
            context: "signal".to_string(),
        });
    }
    let range = max - min;
    Ok(signal
        .iter()
        .map(|&x| ((x - max) + (x - min)) / range)
        .collect())
}

/// Expand a normalized signal into its Gramian Angular Field matrix
/// G[i,j] = cos(arccos(x̃ᵢ) + arccos(x̃ⱼ)). Symmetry is exact by construction:
/// each pair is computed once and mirrored.
pub fn encode_gaf(normalized: &[f64]) -> Result<Vec<f64>> {
    let n = normalized.len();
    let mut angles = Vec::with_capacity(n);
    for &v in normalized {
        if v.abs() > 1.0 + DOMAIN_SLACK {
            return Err(GafError::DomainViolation { value: v });
        }
        angles.push(v.clamp(-1.0, 1.0).acos());
    }
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let value = (angles[i] + angles[j]).cos();
            matrix[i * n + j] = value;
            matrix[j * n + i] = value;
        }
    }
    Ok(matrix)
}

/// Encode a tri-axial window as a three-channel virtual image (x, y, z order).
pub fn encode_triaxial(window: &SensorWindow, policy: ConstantSignalPolicy) -> Result<GafImage> {
    let n = window.len();
    let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut constant_axes = [false; 3];
    for (axis_index, axis) in window.axes.iter().enumerate() {
        let normalized = match normalize_signal(axis) {
            Ok(v) => v,
            Err(GafError::ConstantSignal { .. }) => match policy {
                ConstantSignalPolicy::Error => {
                    return Err(GafError::ConstantSignal {
                        axis: axis_index,
                        context: format!("{} (label {})", window.modality, window.label),
                    });
                }
                ConstantSignalPolicy::ZeroFallback => {
                    constant_axes[axis_index] = true;
                    vec![0.0; n]
                }
            },
            Err(other) => return Err(other),
        };
        channels[axis_index] = encode_gaf(&normalized)?;
    }
    Ok(GafImage {
        side: n,
        channels,
        source: GafProvenance {
            modality: window.modality.clone(),
            label: window.label,
            constant_axes,
        },
    })
}

/// Bilinear interpolation weights with corners aligned to corners.
fn bilinear_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 || n_in == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Resize one row-major channel bilinearly.
pub fn resize_channel(channel: &[f64], n_in: usize, side: usize) -> Vec<f64> {
    let rows = bilinear_axis(n_in, side);
    let cols = bilinear_axis(n_in, side);
    let mut out = Vec::with_capacity(side * side);
    for &(r0, r1, rf) in &rows {
        for &(c0, c1, cf) in &cols {
            let top = channel[r0 * n_in + c0] * (1.0 - cf) + channel[r0 * n_in + c1] * cf;
            let bottom = channel[r1 * n_in + c0] * (1.0 - cf) + channel[r1 * n_in + c1] * cf;
            out.push(top * (1.0 - rf) + bottom * rf);
        }
    }
    out
}

/// Resize a virtual image to `side×side×3`. Resizing to the current side is
/// an exact no-op.
pub fn resize_image(image: &GafImage, side: usize) -> Result<GafImage> {
    if side < 2 {
        return Err(GafError::BadResizeSide { got: side });
    }
    if side == image.side {
        return Ok(image.clone());
    }
    let channels = [
        resize_channel(&image.channels[0], image.side, side),
        resize_channel(&image.channels[1], image.side, side),
        resize_channel(&image.channels[2], image.side, side),
    ];
    Ok(GafImage {
        side,
        channels,
        source: image.source.clone(),
    })
}

/// Closed-form route to the same matrix: G = x̃x̃ᵀ − √(1−x̃²)√(1−x̃²)ᵀ.
/// Kept next to the encoder as its independent test oracle.
pub fn gram_identity_oracle(normalized: &[f64]) -> Vec<f64> {
    let n = normalized.len();
    let complements: Vec<f64> = normalized
        .iter()
        .map(|&v| (1.0 - v * v).max(0.0).sqrt())
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = normalized[i] * normalized[j] - complements[i] * complements[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> SensorWindow {
        SensorWindow::new([x, y, z], 0, "acc1").unwrap()
    }

    #[test]
    fn normalize_maps_endpoints_and_midpoint() {
        let out = normalize_signal(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(out, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_two_point_case() {
        assert_eq!(normalize_signal(&[-3.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_constant_signal() {
        assert!(matches!(
            normalize_signal(&[5.0, 5.0, 5.0]),
            Err(GafError::ConstantSignal { .. })
        ));
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert!(matches!(
            normalize_signal(&[0.0, f64::NAN]),
            Err(GafError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn encode_cosines_at_quarter_turns() {
        let g = encode_gaf(&[-1.0, 0.0, 1.0]).unwrap();
        let expected = [1.0, 0.0, -1.0, 0.0, -1.0, 0.0, -1.0, 0.0, 1.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_all_ones_gives_all_ones() {
        let g = encode_gaf(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn encode_rejects_out_of_domain() {
        assert!(matches!(
            encode_gaf(&[0.0, 1.1]),
            Err(GafError::DomainViolation { .. })
        ));
        // Values within the slack are clamped, not rejected.
        assert!(encode_gaf(&[0.0, 1.0 + 5e-13]).is_ok());
    }

    #[test]
    fn encode_matches_closed_form_oracle() {
        let normalized = normalize_signal(&[0.1, -0.7, 0.4, 0.9, -0.2]).unwrap();
        let g = encode_gaf(&normalized).unwrap();
        let oracle = gram_identity_oracle(&normalized);
        for (a, b) in g.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_recovers_magnitude() {
        let normalized = normalize_signal(&[0.3, -0.6, 0.8, 0.05]).unwrap();
        let n = normalized.len();
        let g = encode_gaf(&normalized).unwrap();
        for i in 0..n {
            let diag = g[i * n + i];
            assert!((diag - (2.0 * normalized[i] * normalized[i] - 1.0)).abs() < 1e-12);
            let magnitude = ((diag + 1.0) / 2.0).max(0.0).sqrt();
            assert!((magnitude - normalized[i].abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetry_is_exact() {
        let normalized = normalize_signal(&[0.2, 0.9, -0.4, -0.8, 0.6, 0.0]).unwrap();
        let n = normalized.len();
        let g = encode_gaf(&normalized).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(g[i * n + j].to_bits(), g[j * n + i].to_bits());
            }
        }
    }

    #[test]
    fn palindromic_axis_is_reversal_invariant() {
        let x = vec![0.1, 0.8, -0.3, 0.8, 0.1];
        let normalized = normalize_signal(&x).unwrap();
        let n = x.len();
        let g = encode_gaf(&normalized).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mirrored = g[(n - 1 - i) * n + (n - 1 - j)];
                assert!((g[i * n + j] - mirrored).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn triaxial_identical_axes_give_identical_channels() {
        let axis = vec![0.0, 1.0, 0.5, -0.25];
        let w = window(axis.clone(), axis.clone(), axis);
        let img = encode_triaxial(&w, ConstantSignalPolicy::Error).unwrap();
        assert_eq!(img.channel(0), img.channel(1));
        assert_eq!(img.channel(0), img.channel(2));
    }

    #[test]
    fn triaxial_shape_and_range() {
        let n = 64;
        let mk = |f: f64| (0..n).map(|i| (i as f64 * f).sin()).collect::<Vec<_>>();
        let w = window(mk(0.1), mk(0.2), mk(0.3));
        let img = encode_triaxial(&w, ConstantSignalPolicy::Error).unwrap();
        assert_eq!(img.side(), 64);
        for c in 0..3 {
            assert!(img.channel(c).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn constant_axis_policy_error_and_fallback() {
        let w = window(vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            encode_triaxial(&w, ConstantSignalPolicy::Error),
            Err(GafError::ConstantSignal { axis: 0, .. })
        ));
        let img = encode_triaxial(&w, ConstantSignalPolicy::ZeroFallback).unwrap();
        assert_eq!(img.source.constant_axes, [true, false, false]);
        // θ = π/2 everywhere ⇒ cos(θᵢ+θⱼ) = −1.
        assert!(img.channel(0).iter().all(|&v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn resize_same_side_is_bit_exact() {
        let w = window(
            vec![0.0, 0.3, -0.4, 1.0],
            vec![0.5, -0.5, 0.25, 0.75],
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let img = encode_triaxial(&w, ConstantSignalPolicy::Error).unwrap();
        let resized = resize_image(&img, 4).unwrap();
        for c in 0..3 {
            assert_eq!(img.channel(c), resized.channel(c));
        }
    }

    #[test]
    fn resize_constant_channel_stays_constant() {
        let constant = vec![0.25; 16];
        let out = resize_channel(&constant, 4, 7);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_2x2_checker_center_is_half() {
        let out = resize_channel(&[0.0, 1.0, 1.0, 0.0], 2, 3);
        assert_eq!(out.len(), 9);
        assert!((out[4] - 0.5).abs() < 1e-15);
        // Corners stay pinned.
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
        assert_eq!(out[6], 1.0);
        assert_eq!(out[8], 0.0);
    }

    #[test]
    fn resize_stays_within_input_range() {
        let w = window(
            vec![0.0, 0.9, -0.2, 0.4, 0.8],
            vec![1.0, 0.1, 0.5, -0.6, 0.3],
            vec![-1.0, 0.0, 1.0, 0.5, 0.25],
        );
        let img = encode_triaxial(&w, ConstantSignalPolicy::Error).unwrap();
        let resized = resize_image(&img, 9).unwrap();
        for c in 0..3 {
            let min = img.channel(c).iter().copied().fold(f64::INFINITY, f64::min);
            let max = img.channel(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(resized
                .channel(c)
                .iter()
                .all(|&v| v >= min - 1e-12 && v <= max + 1e-12));
        }
    }

    #[test]
    fn tensor_layouts_agree() {
        let w = window(
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.5, -0.5],
        );
        let img = encode_triaxial(&w, ConstantSignalPolicy::Error).unwrap();
        let chw = img.to_tensor();
        let hwc = img.to_tensor_hwc();
        assert_eq!(chw.shape(), &[3, 2, 2]);
        assert_eq!(hwc.shape(), &[2, 2, 3]);
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(chw.at(&[c, i, j]), hwc.at(&[i, j, c]));
                }
            }
        }
    }
}
