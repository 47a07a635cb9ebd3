//! Data plumbing: the synthetic multi-modal task generator, sensor-CSV
//! windowing, frame-directory ingestion, and modality-aligned batching.
//!
//! The synthetic task drives both the tri-axial signals and the rendered
//! frames from one latent motion per sample, so the sensor and vision
//! modalities are genuinely correlated; noise is drawn independently per
//! modality. Everything regenerates bit-identically from (spec, seed).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaf::{GafError, SensorWindow};
use crate::io::{self, IoError};
use crate::tensor::{init, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {detail}")]
    MalformedRow {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}: missing column {column:?} in header")]
    MissingColumn { path: String, column: String },
    #[error("{path}: {rows} rows is fewer than window length {window}")]
    TooFewRows {
        path: String,
        rows: usize,
        window: usize,
    },
    #[error("window length and stride must be ≥ 1 (got {window}, {stride})")]
    BadWindowing { window: usize, stride: usize },
    #[error("{dir}: found {got} frames, need at least {need}")]
    TooFewFrames { dir: String, got: usize, need: usize },
    #[error("{dir}: frame {frame} is {got:?}, expected {expected:?}")]
    InconsistentFrames {
        dir: String,
        frame: String,
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error("sample {id} lacks modality index {modality}")]
    MissingModality { id: String, modality: usize },
    #[error("batch size must be ≥ 1")]
    BadBatchSize,
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Gaf(#[from] GafError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One multi-modal sample: per-modality sensor windows plus a frame stack,
/// all carrying the same id and label.
#[derive(Debug, Clone)]
pub struct AlignedSample {
    pub id: String,
    /// One window per sensor modality, in fixed modality order.
    pub windows: Vec<SensorWindow>,
    /// Selected frames, `K×c×h×w`, pixel values in [0, 1].
    pub frames: Tensor,
    pub label: usize,
    pub split: Split,
}

impl AlignedSample {
    /// Internal alignment: every modality carries the sample's label.
    pub fn check_aligned(&self) -> bool {
        self.windows.iter().all(|w| w.label == self.label)
    }
}

/// Parameters of the synthetic action task. Each class is a distinct latent
/// rotation (frequency and direction); sensors read phase-shifted harmonics
/// of it and frames render the moving blob it traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub classes: usize,
    pub modalities: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Sensor window length n.
    pub window_len: usize,
    /// Frames rendered per sample before segment selection.
    pub frame_count: usize,
    /// Frames kept per sample (segment count K).
    pub segments: usize,
    /// Square frame side in pixels.
    pub frame_side: usize,
    /// Uniform sensor noise half-width per axis.
    pub noise_sigma: f64,
    /// Uniform pixel noise half-width.
    pub pixel_noise: f64,
    /// Number of distractor blobs per sample; each follows a seeded random
    /// walk, distinguishable from the class blob only by temporal
    /// inconsistency.
    #[serde(default)]
    pub distractors: usize,
    /// Phase jitter as a fraction of a full turn.
    pub phase_jitter: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(DataError::BadSpec("need at least 2 classes".into()));
        }
        if self.window_len < 8 {
            return Err(DataError::BadSpec("window length must be ≥ 8".into()));
        }
        if self.modalities == 0 {
            return Err(DataError::BadSpec("need at least one modality".into()));
        }
        if self.segments == 0 || self.frame_count < self.segments {
            return Err(DataError::BadSpec(format!(
                "segment count {} exceeds rendered frames {}",
                self.segments, self.frame_count
            )));
        }
        if self.frame_side < 4 {
            return Err(DataError::BadSpec("frame side must be ≥ 4".into()));
        }
        Ok(())
    }
}

const CLASS_VOCABULARY: [&str; 8] = [
    "waving", "jumping", "sitting", "clapping", "walking", "running", "bending", "pushing",
];

/// Deterministic class names for a synthetic task.
pub fn synthetic_class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|k| {
            CLASS_VOCABULARY
                .get(k)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("action{k}"))
        })
        .collect()
}

/// A generated dataset with its class vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<AlignedSample>,
    pub test: Vec<AlignedSample>,
    pub class_names: Vec<String>,
}

fn render_frame(
    side: usize,
    blobs: &[(f64, f64)],
    rng: &mut impl Rng,
    pixel_noise: f64,
) -> Vec<f64> {
    let sigma = side as f64 / 8.0;
    let mut frame = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let mut v = 0.0;
            for &(cx, cy) in blobs {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                v += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
            if pixel_noise > 0.0 {
                v += rng.gen_range(-pixel_noise..pixel_noise);
            }
            frame.push(v.clamp(0.0, 1.0));
        }
    }
    frame
}

fn synthesize_sample(
    spec: &SyntheticTaskSpec,
    class: usize,
    split: Split,
    index: usize,
) -> AlignedSample {
    let split_tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let id = format!("syn-{split_tag}-c{class}-{index:04}");
    // Half-integer frequency spacing with alternating direction keeps the
    // per-segment blob displacement distinct across classes (integer spacing
    // aliases at the segment sampling rate).
    let frequency = 0.5 * (1.0 + class as f64);
    let direction = if class % 2 == 0 { 1.0 } else { -1.0 };

    let mut latent_rng = init::seeded_rng(spec.seed, &format!("{id}/latent"));
    let phase = if spec.phase_jitter > 0.0 {
        latent_rng.gen_range(0.0..spec.phase_jitter * std::f64::consts::TAU)
    } else {
        0.0
    };

    // Sensor windows: phase-shifted fundamental plus a class-direction
    // quadrature and a second harmonic, with independent noise per modality.
    let n = spec.window_len;
    let mut windows = Vec::with_capacity(spec.modalities);
    for modality in 0..spec.modalities {
        let mut noise_rng = init::seeded_rng(spec.seed, &format!("{id}/sensor{modality}"));
        let offset = modality as f64 * std::f64::consts::FRAC_PI_4;
        let mut axes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for t in 0..n {
            let tau = t as f64 / n as f64;
            let angle = std::f64::consts::TAU * frequency * tau + phase + offset;
            let clean = [
                angle.sin(),
                direction * angle.cos(),
                0.5 * (2.0 * angle).sin(),
            ];
            for (axis, &value) in axes.iter_mut().zip(&clean) {
                let noise = if spec.noise_sigma > 0.0 {
                    noise_rng.gen_range(-spec.noise_sigma..spec.noise_sigma)
                } else {
                    0.0
                };
                axis.push(value + noise);
            }
        }
        let window = SensorWindow::new(axes, class, format!("sensor{modality}"))
            .expect("synthetic axes are finite and equal length");
        windows.push(window);
    }

    // Frames: a bright blob orbiting the frame center along the latent
    // motion, plus any distractor blobs wandering on seeded random walks.
    let side = spec.frame_side;
    let radius = side as f64 * 0.30;
    let center = (side as f64 - 1.0) / 2.0;
    let mut frame_rng = init::seeded_rng(spec.seed, &format!("{id}/frames"));
    let mut walk_rng = init::seeded_rng(spec.seed, &format!("{id}/distractors"));
    let mut walkers: Vec<(f64, f64)> = (0..spec.distractors)
        .map(|_| {
            (
                walk_rng.gen_range(0.0..side as f64 - 1.0),
                walk_rng.gen_range(0.0..side as f64 - 1.0),
            )
        })
        .collect();
    let mut rendered = Vec::with_capacity(spec.frame_count);
    for t in 0..spec.frame_count {
        let tau = t as f64 / spec.frame_count as f64;
        let angle = direction * std::f64::consts::TAU * frequency * tau + phase;
        let mut blobs = vec![(
            center + radius * angle.cos(),
            center + radius * angle.sin(),
        )];
        for walker in &mut walkers {
            let step = side as f64 / 6.0;
            walker.0 = (walker.0 + walk_rng.gen_range(-step..step)).clamp(0.0, side as f64 - 1.0);
            walker.1 = (walker.1 + walk_rng.gen_range(-step..step)).clamp(0.0, side as f64 - 1.0);
            blobs.push(*walker);
        }
        rendered.push(render_frame(side, &blobs, &mut frame_rng, spec.pixel_noise));
    }
    let selected = select_frame_indices(spec.frame_count, spec.segments, FrameSampling::Center);
    let mut data = Vec::with_capacity(spec.segments * side * side);
    for &frame_index in &selected {
        data.extend_from_slice(&rendered[frame_index]);
    }
    let frames = Tensor::from_parts(vec![spec.segments, 1, side, side], data);

    AlignedSample {
        id,
        windows,
        frames,
        label: class,
        split,
    }
}

/// Generate the train and test splits of a synthetic task. A pure function
/// of (spec, seed).
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut train = Vec::with_capacity(spec.classes * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.classes * spec.test_per_class);
    for class in 0..spec.classes {
        for index in 0..spec.train_per_class {
            train.push(synthesize_sample(spec, class, Split::Train, index));
        }
        for index in 0..spec.test_per_class {
            test.push(synthesize_sample(spec, class, Split::Test, index));
        }
    }
    Ok(SyntheticDataset {
        train,
        test,
        class_names: synthetic_class_names(spec.classes),
    })
}

// ── Sensor CSV ingestion ────────────────────────────────────────────

/// A window cut from a recording, with its derived sample id.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub id: String,
    pub window: SensorWindow,
    /// Start row of the window within the recording.
    pub start: usize,
}

/// Number of sliding windows of `window` length at the given stride over
/// `rows` samples (trailing partial window dropped).
pub fn window_count(rows: usize, window: usize, stride: usize) -> usize {
    if rows < window {
        0
    } else {
        (rows - window) / stride + 1
    }
}

/// Load a `t,x,y,z` CSV and cut it into sliding windows. Sample ids derive
/// from the file stem and window start row. Labels are not part of the file
/// format; windows carry label 0 and callers relabel from their manifests.
pub fn load_sensor_csv(path: &Path, window: usize, stride: usize) -> Result<Vec<WindowRecord>> {
    if window == 0 || stride == 0 {
        return Err(DataError::BadWindowing { window, stride });
    }
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| {
        DataError::Io(IoError::File {
            path: display.clone(),
            source,
        })
    })?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| DataError::TooFewRows {
            path: display.clone(),
            rows: 0,
            window,
        })?
        .1;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    for expected in ["t", "x", "y", "z"] {
        if !columns.iter().any(|c| *c == expected) {
            return Err(DataError::MissingColumn {
                path: display,
                column: expected.to_string(),
            });
        }
    }
    let index_of = |name: &str| columns.iter().position(|c| *c == name).expect("checked");
    let (ti, xi, yi, zi) = (index_of("t"), index_of("x"), index_of("y"), index_of("z"));

    let mut timestamps = Vec::new();
    let mut axes: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(DataError::MalformedRow {
                path: display,
                line: line_no + 1,
                detail: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        let parse = |index: usize| -> Result<f64> {
            fields[index].parse::<f64>().map_err(|_| DataError::MalformedRow {
                path: display.clone(),
                line: line_no + 1,
                detail: format!("cannot parse {:?} as a number", fields[index]),
            })
        };
        timestamps.push(parse(ti)?);
        axes[0].push(parse(xi)?);
        axes[1].push(parse(yi)?);
        axes[2].push(parse(zi)?);
    }

    let rows = timestamps.len();
    if rows < window {
        return Err(DataError::TooFewRows {
            path: display,
            rows,
            window,
        });
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "recording".to_string());
    let mut records = Vec::new();
    let mut start = 0;
    while start + window <= rows {
        let slice = |axis: &[f64]| axis[start..start + window].to_vec();
        let mut sensor =
            SensorWindow::new([slice(&axes[0]), slice(&axes[1]), slice(&axes[2])], 0, &stem)?;
        sensor.timestamps = Some(timestamps[start..start + window].to_vec());
        records.push(WindowRecord {
            id: format!("{stem}-w{start:06}"),
            window: sensor,
            start,
        });
        start += stride;
    }
    Ok(records)
}

// ── Frame ingestion ─────────────────────────────────────────────────

/// How frames are drawn from their segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSampling {
    /// The center frame of each of K equal bins (deterministic; eval default).
    Center,
    /// A seeded uniform draw within each bin (optional training mode).
    UniformWithinBin { seed: u64 },
}

/// Indices of K frames out of `total`, one per equal-width bin.
pub fn select_frame_indices(total: usize, k: usize, sampling: FrameSampling) -> Vec<usize> {
    assert!(k >= 1 && total >= k, "need total ≥ k ≥ 1");
    match sampling {
        FrameSampling::Center => (0..k).map(|i| ((2 * i + 1) * total) / (2 * k)).collect(),
        FrameSampling::UniformWithinBin { seed } => {
            let mut rng = init::seeded_rng(seed, "frame-sampling");
            (0..k)
                .map(|i| {
                    let lo = i * total / k;
                    let hi = ((i + 1) * total / k).max(lo + 1);
                    rng.gen_range(lo..hi)
                })
                .collect()
        }
    }
}

/// Load a directory of PGM/PPM frames (lexicographic order), keeping K
/// selected frames scaled to [0, 1]. Returns `K×c×h×w`.
pub fn load_frames(dir: &Path, k: usize, sampling: FrameSampling) -> Result<Tensor> {
    let display = dir.display().to_string();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| {
            DataError::Io(IoError::File {
                path: display.clone(),
                source,
            })
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.len() < k {
        return Err(DataError::TooFewFrames {
            dir: display,
            got: paths.len(),
            need: k,
        });
    }
    let selected = select_frame_indices(paths.len(), k, sampling);
    let mut frames = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for &index in &selected {
        let (c, h, w, data) = io::read_frame(&paths[index])?;
        match dims {
            None => dims = Some((c, h, w)),
            Some(expected) if expected != (c, h, w) => {
                return Err(DataError::InconsistentFrames {
                    dir: display,
                    frame: paths[index].display().to_string(),
                    got: (c, h, w),
                    expected,
                });
            }
            _ => {}
        }
        frames.extend_from_slice(&data);
    }
    let (c, h, w) = dims.expect("k ≥ 1");
    Ok(Tensor::from_parts(vec![k, c, h, w], frames))
}

// ── Dataset manifests ───────────────────────────────────────────────

/// On-disk dataset description: class vocabulary plus per-sample modality
/// CSVs and a frame directory. Paths resolve relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    /// Sensor window length cut from the head of each modality recording.
    pub window: usize,
    /// Frames kept per sample.
    pub segments: usize,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// One `t,x,y,z` CSV per modality, in fixed modality order.
    pub modalities: Vec<String>,
    /// Directory of PGM/PPM frames.
    pub frames: String,
}

/// Load a dataset manifest and materialize its aligned samples. Each
/// modality recording contributes its first window; longer recordings are
/// windowed separately through the encode workflow.
pub fn load_manifest(path: &Path) -> Result<(Vec<AlignedSample>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|source| {
        DataError::Io(IoError::File {
            path: path.display().to_string(),
            source,
        })
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        DataError::BadSpec(format!("{}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if entry.label >= manifest.classes.len() {
            return Err(DataError::BadSpec(format!(
                "sample {}: label {} out of range",
                entry.id, entry.label
            )));
        }
        let mut windows = Vec::with_capacity(entry.modalities.len());
        for (modality, file) in entry.modalities.iter().enumerate() {
            let records = load_sensor_csv(&base.join(file), manifest.window, manifest.window)?;
            let mut window = records
                .into_iter()
                .next()
                .ok_or_else(|| DataError::MissingModality {
                    id: entry.id.clone(),
                    modality,
                })?
                .window;
            window.label = entry.label;
            window.modality = format!("m{modality}");
            windows.push(window);
        }
        let frames = load_frames(
            &base.join(&entry.frames),
            manifest.segments,
            FrameSampling::Center,
        )?;
        samples.push(AlignedSample {
            id: entry.id.clone(),
            windows,
            frames,
            label: entry.label,
            split: entry.split,
        });
    }
    Ok((samples, manifest.classes))
}

// ── Aligned batching ────────────────────────────────────────────────

/// One mini-batch: indices into the sample list plus the shared id order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sample-id list as each modality sees it. One shared shuffled order
    /// drives every modality, so all lists are built from the same ids; the
    /// alignment invariant asserts they stay identical.
    pub fn per_modality_ids(&self, samples: &[AlignedSample], modalities: usize) -> Vec<Vec<String>> {
        (0..modalities)
            .map(|_| {
                self.indices
                    .iter()
                    .map(|&i| samples[i].id.clone())
                    .collect()
            })
            .collect()
    }
}

/// Shuffle samples with the shared seed and emit aligned batches. The last
/// short batch is dropped in training and kept in eval.
pub fn make_aligned_batches(
    samples: &[AlignedSample],
    batch_size: usize,
    seed: u64,
    split: Split,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(DataError::BadBatchSize);
    }
    let modalities = samples.first().map(|s| s.windows.len()).unwrap_or(0);
    for sample in samples {
        if sample.windows.len() != modalities {
            return Err(DataError::MissingModality {
                id: sample.id.clone(),
                modality: sample.windows.len().min(modalities),
            });
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = init::seeded_rng(seed, "dataloader-shuffle");
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < batch_size && split == Split::Train {
            continue;
        }
        let ids = chunk.iter().map(|&i| samples[i].id.clone()).collect();
        batches.push(Batch {
            indices: chunk.to_vec(),
            ids,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            classes: 2,
            modalities: 2,
            train_per_class: 5,
            test_per_class: 3,
            window_len: 16,
            frame_count: 12,
            segments: 3,
            frame_side: 8,
            noise_sigma: 0.05,
            pixel_noise: 0.05,
            distractors: 0,
            phase_jitter: 0.2,
            seed: 11,
        }
    }

    #[test]
    fn synthetic_regenerates_bit_identically() {
        let spec = small_spec();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.frames.data(), y.frames.data());
            for (wx, wy) in x.windows.iter().zip(&y.windows) {
                assert_eq!(wx.axes, wy.axes);
            }
        }
    }

    #[test]
    fn synthetic_counts_and_balance() {
        let mut spec = small_spec();
        spec.train_per_class = 50;
        spec.test_per_class = 25;
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.train.len(), 100);
        assert_eq!(data.test.len(), 50);
        let class0 = data.train.iter().filter(|s| s.label == 0).count();
        assert_eq!(class0, 50);
        assert!(data.train.iter().all(|s| s.check_aligned()));
    }

    #[test]
    fn zero_noise_zero_jitter_collapses_within_class() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        spec.pixel_noise = 0.0;
        spec.phase_jitter = 0.0;
        let data = generate_synthetic(&spec).unwrap();
        let same: Vec<&AlignedSample> =
            data.train.iter().filter(|s| s.label == 1).collect();
        for pair in same.windows(2) {
            assert_eq!(pair[0].frames.data(), pair[1].frames.data());
            for (a, b) in pair[0].windows.iter().zip(&pair[1].windows) {
                assert_eq!(a.axes, b.axes);
            }
        }
    }

    #[test]
    fn synthetic_modalities_differ() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let sample = &data.train[0];
        assert_ne!(sample.windows[0].axes, sample.windows[1].axes);
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let mut spec = small_spec();
        spec.classes = 1;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = small_spec();
        spec.window_len = 4;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = small_spec();
        spec.segments = 20;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn csv_windowing_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        let mut text = String::from("t,x,y,z\n");
        for row in 0..10 {
            text.push_str(&format!("{row},{},{},{}\n", row as f64, row as f64 * 2.0, 9.0 - row as f64));
        }
        fs::write(&path, &text).unwrap();

        let windows = load_sensor_csv(&path, 4, 2).unwrap();
        assert_eq!(windows.len(), 4);
        assert_eq!(
            windows.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![0, 2, 4, 6]
        );
        assert_eq!(windows[0].id, "rec-w000000");

        // Stride larger than the window leaves gaps.
        let gapped = load_sensor_csv(&path, 4, 5).unwrap();
        assert_eq!(gapped.len(), window_count(10, 4, 5));
        assert_eq!(gapped.len(), 2);
    }

    #[test]
    fn csv_missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, "t,x,y\n0,1,2\n").unwrap();
        match load_sensor_csv(&path, 2, 1) {
            Err(DataError::MissingColumn { column, .. }) => assert_eq!(column, "z"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, "t,x,y,z\n0,1,2,3\n1,oops,2,3\n").unwrap();
        match load_sensor_csv(&path, 2, 1) {
            Err(DataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_too_short_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, "t,x,y,z\n0,1,2,3\n1,1,2,3\n").unwrap();
        assert!(matches!(
            load_sensor_csv(&path, 4, 1),
            Err(DataError::TooFewRows { rows: 2, .. })
        ));
    }

    #[test]
    fn window_count_matches_brute_force() {
        for rows in 0..40 {
            for window in 1..10 {
                for stride in 1..10 {
                    let mut brute = 0;
                    let mut start = 0;
                    while start + window <= rows {
                        brute += 1;
                        start += stride;
                    }
                    assert_eq!(
                        window_count(rows, window, stride),
                        brute,
                        "rows={rows} window={window} stride={stride}"
                    );
                }
            }
        }
    }

    #[test]
    fn frame_bin_centers_match_reference() {
        assert_eq!(
            select_frame_indices(24, 8, FrameSampling::Center),
            vec![1, 4, 7, 10, 13, 16, 19, 22]
        );
        // Exactly K frames: identity selection.
        assert_eq!(select_frame_indices(3, 3, FrameSampling::Center), vec![0, 1, 2]);
        // One more frame than K: deterministic and repeatable.
        let a = select_frame_indices(4, 3, FrameSampling::Center);
        let b = select_frame_indices(4, 3, FrameSampling::Center);
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_bin_sampling_stays_within_bins_and_is_seeded() {
        let a = select_frame_indices(24, 8, FrameSampling::UniformWithinBin { seed: 5 });
        let b = select_frame_indices(24, 8, FrameSampling::UniformWithinBin { seed: 5 });
        assert_eq!(a, b);
        for (i, &index) in a.iter().enumerate() {
            assert!(index >= i * 3 && index < (i + 1) * 3, "bin {i}: index {index}");
        }
    }

    #[test]
    fn frames_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for f in 0..6 {
            let img = io::GrayImage {
                width: 4,
                height: 4,
                pixels: vec![(f * 40) as u8; 16],
            };
            io::write_pgm(&dir.path().join(format!("frame{f:02}.pgm")), &img).unwrap();
        }
        let frames = load_frames(dir.path(), 3, FrameSampling::Center).unwrap();
        assert_eq!(frames.shape(), &[3, 1, 4, 4]);
        // Bin centers of 6 frames with K=3 are frames 1, 3, 5.
        assert!((frames.at(&[0, 0, 0, 0]) - 40.0 / 255.0).abs() < 1e-12);
        assert!((frames.at(&[1, 0, 0, 0]) - 120.0 / 255.0).abs() < 1e-12);
        assert!((frames.at(&[2, 0, 0, 0]) - 200.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_frames_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = io::GrayImage {
            width: 2,
            height: 2,
            pixels: vec![0; 4],
        };
        io::write_pgm(&dir.path().join("only.pgm"), &img).unwrap();
        assert!(matches!(
            load_frames(dir.path(), 3, FrameSampling::Center),
            Err(DataError::TooFewFrames { got: 1, need: 3, .. })
        ));
    }

    #[test]
    fn batches_share_one_shuffled_order() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let a = make_aligned_batches(&data.train, 4, 3, Split::Train).unwrap();
        let b = make_aligned_batches(&data.train, 4, 3, Split::Train).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.ids, y.ids);
        }
        for batch in &a {
            let per_modality = batch.per_modality_ids(&data.train, 2);
            assert_eq!(per_modality[0], per_modality[1]);
            assert_eq!(per_modality[0], batch.ids);
        }
    }

    #[test]
    fn short_batch_dropped_in_train_kept_in_eval() {
        let data = generate_synthetic(&small_spec()).unwrap();
        // 10 train samples, batch 4 → train drops the trailing 2.
        let train = make_aligned_batches(&data.train, 4, 0, Split::Train).unwrap();
        assert_eq!(train.len(), 2);
        assert!(train.iter().all(|b| b.len() == 4));
        let eval = make_aligned_batches(&data.train, 4, 0, Split::Test).unwrap();
        assert_eq!(eval.len(), 3);
        assert_eq!(eval.last().unwrap().len(), 2);
    }

    #[test]
    fn manifest_loads_aligned_samples() {
        let dir = tempfile::tempdir().unwrap();
        // Two modality recordings and four frames for one sample.
        for modality in ["m0.csv", "m1.csv"] {
            let mut text = String::from("t,x,y,z\n");
            for row in 0..8 {
                let v = row as f64 + if modality == "m0.csv" { 0.0 } else { 10.0 };
                text.push_str(&format!("{row},{v},{},{}\n", v * 2.0, -v));
            }
            fs::write(dir.path().join(modality), text).unwrap();
        }
        let frames_dir = dir.path().join("frames-a");
        fs::create_dir(&frames_dir).unwrap();
        for f in 0..4 {
            let img = io::GrayImage {
                width: 4,
                height: 4,
                pixels: vec![f * 10; 16],
            };
            io::write_pgm(&frames_dir.join(format!("{f:02}.pgm")), &img).unwrap();
        }
        let manifest = serde_json::json!({
            "classes": ["waving", "jumping"],
            "window": 8,
            "segments": 2,
            "samples": [{
                "id": "a",
                "label": 1,
                "split": "Train",
                "modalities": ["m0.csv", "m1.csv"],
                "frames": "frames-a",
            }],
        });
        let path = dir.path().join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

        let (samples, classes) = load_manifest(&path).unwrap();
        assert_eq!(classes, vec!["waving", "jumping"]);
        assert_eq!(samples.len(), 1);
        let sample = &samples[0];
        assert_eq!(sample.label, 1);
        assert_eq!(sample.windows.len(), 2);
        assert_eq!(sample.windows[0].len(), 8);
        assert_ne!(sample.windows[0].axes[0], sample.windows[1].axes[0]);
        assert_eq!(sample.frames.shape(), &[2, 1, 4, 4]);
        assert!(sample.check_aligned());
    }

    #[test]
    fn manifest_rejects_out_of_range_label() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "classes": ["waving"],
            "window": 8,
            "segments": 2,
            "samples": [{
                "id": "a", "label": 5, "split": "Test",
                "modalities": [], "frames": "x",
            }],
        });
        let path = dir.path().join("manifest.json");
        fs::write(&path, manifest.to_string()).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::BadSpec(_))));
    }

    #[test]
    fn batch_equal_to_dataset_size_is_single() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let batches = make_aligned_batches(&data.train, data.train.len(), 9, Split::Train).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), data.train.len());
    }
}
