//! Training loops: joint teacher training and distillation into the student.
//!
//! Teachers minimize mean cross-entropy plus the semantic-preserving MSE that
//! ties fc2 features to class-name embeddings. The student minimizes
//! `ce + α·st + β·gsdm + γ·sp` against frozen teachers, with the two
//! dataloader views driven by one shared shuffle seed so every batch is
//! modality-aligned. Optimization is plain SGD with an exponential
//! step-decay schedule (momentum configurable, default 0).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_aligned_batches, AlignedSample, Batch, DataError, Split};
use crate::embeddings::EmbeddingTable;
use crate::gaf::{self, ConstantSignalPolicy, GafError};
use crate::gsdm::{self, GraphNorm, GsdmError, SemanticSource};
use crate::losses::{self, LossError, LossReport, LossWeights};
use crate::tensor::{Graph, Gradients, NodeId, Tensor, TensorError};

use super::{
    ActivationPack, FusionMode, ModelError, StudentMode, StudentNet, TeacherEnsemble,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("no full batches: {samples} samples at batch size {batch}")]
    NoBatches { samples: usize, batch: usize },
    #[error("batch size must be ≥ 2 when the saliency loss is active")]
    BatchTooSmallForGraphs,
    #[error("schedule invalid: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Gsdm(#[from] GsdmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gaf(#[from] GafError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

const DIVERGENCE_LIMIT: f64 = 1e6;

/// SGD schedule: `lr · decay_ratio^⌊step/decay_interval⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_ratio: f64,
    pub decay_interval: usize,
    pub iterations: usize,
    pub momentum: f64,
    /// Global gradient-norm ceiling. The saliency loss can emit brief
    /// gradient spikes through near-zero map norms; a generous clip keeps a
    /// single step from destroying the trunk without reshaping ordinary
    /// updates. `None` disables clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl TrainSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        self.learning_rate * self.decay_ratio.powi((step / self.decay_interval) as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_interval == 0 {
            return Err(TrainError::BadSchedule(
                "batch size and decay interval must be ≥ 1".into(),
            ));
        }
        if let Some(limit) = self.clip_norm {
            if !(limit > 0.0) {
                return Err(TrainError::BadSchedule("clip norm must be > 0".into()));
            }
        }
        if !(self.learning_rate >= 0.0) || !(self.decay_ratio > 0.0) || self.momentum < 0.0 {
            return Err(TrainError::BadSchedule(
                "learning rate ≥ 0, decay ratio > 0, momentum ≥ 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-modality GAF inputs for every sample, resized to the network side.
pub fn prepare_gaf_inputs(samples: &[AlignedSample], side: usize) -> Result<Vec<Vec<Tensor>>> {
    samples
        .iter()
        .map(|sample| {
            sample
                .windows
                .iter()
                .map(|window| {
                    let image = gaf::encode_triaxial(window, ConstantSignalPolicy::Error)?;
                    let resized = gaf::resize_image(&image, side)?;
                    Ok(resized.to_tensor())
                })
                .collect::<Result<Vec<Tensor>>>()
        })
        .collect()
}

/// Stack one modality's prepared inputs for a batch: `b×c×s×s`.
fn stack_modality(inputs: &[Vec<Tensor>], batch: &Batch, modality: usize) -> Tensor {
    let sample = &inputs[batch.indices[0]][modality];
    let mut shape = vec![batch.len()];
    shape.extend_from_slice(sample.shape());
    let mut data = Vec::with_capacity(batch.len() * sample.len());
    for &index in &batch.indices {
        data.extend_from_slice(inputs[index][modality].data());
    }
    Tensor::from_parts(shape, data)
}

/// Stack frame stacks for a batch: `b×K×c×s×s`.
fn stack_frames(samples: &[AlignedSample], batch: &Batch) -> Tensor {
    let first = &samples[batch.indices[0]].frames;
    let mut shape = vec![batch.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(batch.len() * first.len());
    for &index in &batch.indices {
        data.extend_from_slice(samples[index].frames.data());
    }
    Tensor::from_parts(shape, data)
}

fn batch_labels(samples: &[AlignedSample], batch: &Batch) -> Vec<usize> {
    batch.indices.iter().map(|&i| samples[i].label).collect()
}

/// One SGD step over the named parameters present in the gradient map.
fn sgd_apply(
    params: &mut BTreeMap<String, Tensor>,
    nodes: &BTreeMap<String, NodeId>,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    clip_norm: Option<f64>,
    velocity: &mut BTreeMap<String, Vec<f64>>,
) {
    let mut scale = 1.0;
    if let Some(limit) = clip_norm {
        let mut squared = 0.0;
        for &node in nodes.values() {
            if let Some(grad) = grads.get(node) {
                squared += grad.data().iter().map(|g| g * g).sum::<f64>();
            }
        }
        let norm = squared.sqrt();
        if norm > limit {
            scale = limit / norm;
        }
    }
    for (name, &node) in nodes {
        let Some(grad) = grads.get(node) else {
            continue;
        };
        let tensor = params.get_mut(name).expect("parameter exists");
        let mut data = tensor.data().to_vec();
        if momentum > 0.0 {
            let v = velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; data.len()]);
            for ((value, g), vel) in data.iter_mut().zip(grad.data()).zip(v.iter_mut()) {
                *vel = momentum * *vel + g * scale;
                *value -= lr * *vel;
            }
        } else {
            for (value, g) in data.iter_mut().zip(grad.data()) {
                *value -= lr * g * scale;
            }
        }
        *tensor = Tensor::from_parts(tensor.shape().to_vec(), data);
    }
}

fn epoch_batches(
    samples: &[AlignedSample],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    let shuffle_seed = crate::tensor::init::derive_seed(seed, &format!("epoch{epoch}"));
    let batches = make_aligned_batches(samples, batch_size, shuffle_seed, Split::Train)?;
    if batches.is_empty() {
        return Err(TrainError::NoBatches {
            samples: samples.len(),
            batch: batch_size,
        });
    }
    Ok(batches)
}

// ── Teacher training ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TeacherTrainReport {
    pub reports: Vec<LossReport>,
    pub per_modality_train_accuracy: Vec<f64>,
    pub per_modality_test_accuracy: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Accuracy of each teacher on its own modality, in the given fusion mode.
pub fn eval_teachers(
    ensemble: &TeacherEnsemble,
    samples: &[AlignedSample],
    batch_size: usize,
    mode: FusionMode,
) -> Result<Vec<f64>> {
    let inputs = prepare_gaf_inputs(samples, ensemble.config.input_side)?;
    let batches = make_aligned_batches(samples, batch_size, 0, Split::Test)?;
    let mut hits = vec![0usize; ensemble.modalities];
    let mut total = 0usize;
    for batch in &batches {
        let modality_inputs: Vec<Tensor> = (0..ensemble.modalities)
            .map(|k| stack_modality(&inputs, batch, k))
            .collect();
        let packs = ensemble.forward(&modality_inputs, mode)?;
        let labels = batch_labels(samples, batch);
        total += labels.len();
        for (k, pack) in packs.iter().enumerate() {
            let predictions = gsdm::argmax_rows(&pack.logits)?;
            hits[k] += predictions
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / total as f64).collect())
}

/// Train all teachers simultaneously on aligned batches.
pub fn train_teachers(
    ensemble: &mut TeacherEnsemble,
    train: &[AlignedSample],
    test: &[AlignedSample],
    class_names: &[String],
    embeddings: &EmbeddingTable,
    schedule: &TrainSchedule,
    mode: FusionMode,
    seed: u64,
) -> Result<TeacherTrainReport> {
    schedule.validate()?;
    let inputs = prepare_gaf_inputs(train, ensemble.config.input_side)?;
    let m = ensemble.modalities;
    let mut velocity = BTreeMap::new();
    let mut reports = Vec::with_capacity(schedule.iterations);
    let mut step = 0;
    let mut epoch = 0;
    'training: loop {
        let batches = epoch_batches(train, schedule.batch_size, seed, epoch)?;
        for batch in &batches {
            if step >= schedule.iterations {
                break 'training;
            }
            let labels = batch_labels(train, batch);
            let targets = gsdm::embed_labels(&labels, class_names, embeddings)?;

            let mut graph = Graph::new();
            let modality_nodes: Vec<NodeId> = (0..m)
                .map(|k| graph.constant(stack_modality(&inputs, batch, k)))
                .collect();
            let (packs, param_nodes) =
                ensemble.forward_nodes(&mut graph, &modality_nodes, mode, true)?;

            let target_node = graph.constant(targets);
            let mut ce_total: Option<NodeId> = None;
            let mut sp_total: Option<NodeId> = None;
            for pack in &packs {
                let ce = losses::cross_entropy_node(&mut graph, pack.logits, &labels)?;
                ce_total = Some(match ce_total {
                    Some(t) => graph.add(t, ce)?,
                    None => ce,
                });
                let sp = losses::semantic_preserving_node(&mut graph, pack.features, target_node)?;
                sp_total = Some(match sp_total {
                    Some(t) => graph.add(t, sp)?,
                    None => sp,
                });
            }
            let ce_mean = graph.scale(ce_total.expect("m ≥ 1"), 1.0 / m as f64)?;
            let sp_mean = graph.scale(sp_total.expect("m ≥ 1"), 1.0 / m as f64)?;
            let total = graph.add(ce_mean, sp_mean)?;

            let ce_value = graph.value(ce_mean).item();
            let sp_value = graph.value(sp_mean).item();
            let total_value = graph.value(total).item();
            if !total_value.is_finite() || total_value > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged {
                    step,
                    loss: total_value,
                });
            }

            let grads = graph.backward_scalar(total)?;
            sgd_apply(
                &mut ensemble.params,
                &param_nodes,
                &grads,
                schedule.lr_at(step),
                schedule.momentum,
                schedule.clip_norm,
                &mut velocity,
            );

            reports.push(LossReport {
                step,
                ce: ce_value,
                soft_target: 0.0,
                gsdm: 0.0,
                semantic_preserve: sp_value,
                total: total_value,
                alpha: 0.0,
                beta: 0.0,
                gamma: 1.0,
                temperature: 1.0,
                t2_scaled: false,
            });
            step += 1;
        }
        epoch += 1;
    }

    let per_modality_train_accuracy = eval_teachers(ensemble, train, schedule.batch_size, mode)?;
    let per_modality_test_accuracy = if test.is_empty() {
        Vec::new()
    } else {
        eval_teachers(ensemble, test, schedule.batch_size, mode)?
    };
    let final_loss = reports.last().map(|r| r.total).unwrap_or(0.0);
    Ok(TeacherTrainReport {
        reports,
        per_modality_train_accuracy,
        per_modality_test_accuracy,
        final_loss,
        steps: step,
    })
}

// ── Student training ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct StudentTrainOptions {
    pub weights: LossWeights,
    pub pairing: Vec<(String, String)>,
    pub graph_norm: GraphNorm,
    pub semantic_source: SemanticSource,
    /// T² gradient-parity factor on the soft-target term.
    pub t2_scaled: bool,
    /// Denominator guard of the slope metric.
    pub slope_epsilon: f64,
}

impl Default for StudentTrainOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            pairing: super::default_pairing(),
            graph_norm: GraphNorm::default(),
            semantic_source: SemanticSource::default(),
            t2_scaled: true,
            slope_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudentTrainReport {
    pub reports: Vec<LossReport>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub steps: usize,
}

/// Student accuracy over a sample set (eval mode, deterministic).
pub fn eval_student(
    student: &StudentNet,
    samples: &[AlignedSample],
    batch_size: usize,
) -> Result<f64> {
    let batches = make_aligned_batches(samples, batch_size, 0, Split::Test)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for batch in &batches {
        let frames = stack_frames(samples, batch);
        let pack = student.forward(&frames, StudentMode::Eval)?;
        let labels = batch_labels(samples, batch);
        let predictions = gsdm::argmax_rows(&pack.logits)?;
        hits += predictions
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        total += labels.len();
    }
    Ok(hits as f64 / total as f64)
}

/// ω for one network from its original-half and ablated-half outputs.
fn drop_weights(
    logits: &Tensor,
    features: &Tensor,
    logits_ablated: &Tensor,
    features_ablated: &Tensor,
    labels: &[usize],
    class_names: &[String],
    embeddings: &EmbeddingTable,
    options: &StudentTrainOptions,
) -> Result<Tensor> {
    let semantic = match options.semantic_source {
        SemanticSource::Predicted => gsdm::embed_predictions(logits, class_names, embeddings)?,
        SemanticSource::GroundTruth => gsdm::embed_labels(labels, class_names, embeddings)?,
    };
    // The ablated half has no ground truth; it always embeds its predictions.
    let semantic_ablated = gsdm::embed_predictions(logits_ablated, class_names, embeddings)?;
    let q = gsdm::graph_normalize(features, options.graph_norm)?;
    let q_ablated = gsdm::graph_normalize(features_ablated, options.graph_norm)?;
    let omega = gsdm::slope_metric(
        &q,
        &semantic,
        &q_ablated,
        &semantic_ablated,
        options.slope_epsilon,
    )?;
    // Importance is the magnitude of the relative change. The signed slope
    // entries are sign-indefinite for class-name embeddings, and their signed
    // mean gates whole maps to zero (or to noise) on a freshly initialized
    // network, which starves the saliency loss of any usable gradient.
    Ok(Tensor::from_parts(
        omega.shape().to_vec(),
        omega.data().iter().map(|v| v.abs()).collect(),
    ))
}

/// Teacher-side context that is constant throughout student training.
struct FrozenTeacherContext {
    /// Ablated-half activation packs, one per teacher (inputs all zero).
    ablated: Vec<ActivationPack>,
    /// Teacher layers referenced by the pairing.
    teacher_layers: Vec<String>,
}

/// Frozen-teacher view of one batch: per-teacher logits and features, plus
/// saliency maps when the saliency loss is active. The fusion gate couples a
/// teacher's outputs to the whole batch, so these are only stationary when
/// the batch partition is fixed; student training therefore reuses one
/// partition across epochs and caches this context per batch.
struct TeacherBatchContext {
    logits: Vec<Tensor>,
    features: Vec<Tensor>,
    maps: Vec<BTreeMap<String, Tensor>>,
}

/// Train the student against frozen teachers.
pub fn train_student(
    student: &mut StudentNet,
    teachers: &TeacherEnsemble,
    train: &[AlignedSample],
    test: &[AlignedSample],
    class_names: &[String],
    embeddings: &EmbeddingTable,
    schedule: &TrainSchedule,
    options: &StudentTrainOptions,
    seed: u64,
) -> Result<StudentTrainReport> {
    schedule.validate()?;
    options.weights.validate()?;
    let distilling =
        options.weights.alpha > 0.0 || options.weights.beta > 0.0 || options.weights.gamma > 0.0;
    let saliency_active = options.weights.beta > 0.0;
    if saliency_active && schedule.batch_size < 2 {
        return Err(TrainError::BatchTooSmallForGraphs);
    }

    let gaf_inputs = if distilling {
        prepare_gaf_inputs(train, teachers.config.input_side)?
    } else {
        Vec::new()
    };

    // The ablated teacher pass is input-independent and teachers are frozen,
    // so it is computed once.
    let teacher_context = if saliency_active {
        let zero_inputs: Vec<Tensor> = (0..teachers.modalities)
            .map(|_| {
                Tensor::zeros(&[
                    schedule.batch_size,
                    teachers.config.input_channels,
                    teachers.config.input_side,
                    teachers.config.input_side,
                ])
            })
            .collect();
        let ablated = teachers.forward(&zero_inputs, FusionMode::Joint)?;
        let teacher_layers: Vec<String> = options
            .pairing
            .iter()
            .map(|(t, _)| t.clone())
            .collect();
        Some(FrozenTeacherContext {
            ablated,
            teacher_layers,
        })
    } else {
        None
    };

    // One fixed batch partition for the whole run keeps the frozen teachers'
    // batch-coupled outputs stationary across epochs.
    let batches = epoch_batches(train, schedule.batch_size, seed, 0)?;
    let mut teacher_cache: Vec<Option<TeacherBatchContext>> = Vec::new();
    teacher_cache.resize_with(batches.len(), || None);

    let mut velocity = BTreeMap::new();
    let mut reports = Vec::with_capacity(schedule.iterations);
    let mut step = 0;
    'training: loop {
        for (batch_index, batch) in batches.iter().enumerate() {
            if step >= schedule.iterations {
                break 'training;
            }
            let labels = batch_labels(train, batch);
            let frames = stack_frames(train, batch);

            if distilling && teacher_cache[batch_index].is_none() {
                let modality_inputs: Vec<Tensor> = (0..teachers.modalities)
                    .map(|k| stack_modality(&gaf_inputs, batch, k))
                    .collect();
                let packs = teachers.forward(&modality_inputs, FusionMode::Joint)?;
                let maps = match &teacher_context {
                    Some(context) => {
                        let mut all = Vec::with_capacity(packs.len());
                        for (pack, ablated) in packs.iter().zip(&context.ablated) {
                            let omega = drop_weights(
                                &pack.logits,
                                &pack.features,
                                &ablated.logits,
                                &ablated.features,
                                &labels,
                                class_names,
                                embeddings,
                                options,
                            )?;
                            let mut layer_maps = BTreeMap::new();
                            for layer in &context.teacher_layers {
                                let activations = pack.taps.get(layer).ok_or_else(|| {
                                    GsdmError::MissingLayer {
                                        side: "teacher",
                                        layer: layer.clone(),
                                    }
                                })?;
                                layer_maps
                                    .insert(layer.clone(), gsdm::saliency_map(&omega, activations)?);
                            }
                            all.push(layer_maps);
                        }
                        all
                    }
                    None => Vec::new(),
                };
                teacher_cache[batch_index] = Some(TeacherBatchContext {
                    logits: packs.iter().map(|p| p.logits.clone()).collect(),
                    features: packs.iter().map(|p| p.features.clone()).collect(),
                    maps,
                });
            }
            let teacher_batch = teacher_cache[batch_index].as_ref();

            // Student training graph.
            let mut graph = Graph::new();
            let frame_node = graph.constant(frames.clone());
            let (student_nodes, param_nodes) = student.forward_nodes(
                &mut graph,
                frame_node,
                StudentMode::Train { step },
                true,
            )?;

            let ce = losses::cross_entropy_node(&mut graph, student_nodes.logits, &labels)?;

            let st = if options.weights.alpha > 0.0 {
                losses::soft_target_kl_node(
                    &mut graph,
                    &teacher_batch.expect("distilling").logits,
                    student_nodes.logits,
                    options.weights.temperature,
                    options.t2_scaled,
                )?
            } else {
                graph.constant(Tensor::scalar(0.0))
            };

            let gsdm_node = if saliency_active {
                // Student drop weights come from a dropout-free pass on the
                // zero batch (the original half reuses the training values;
                // the conv taps feeding the maps sit upstream of dropout).
                let zero_frames = Tensor::zeros(frames.shape());
                let ablated_pack = student.forward(&zero_frames, StudentMode::Eval)?;
                let student_logits = graph.value(student_nodes.logits).clone();
                let student_features = graph.value(student_nodes.features).clone();
                let omega = drop_weights(
                    &student_logits,
                    &student_features,
                    &ablated_pack.logits,
                    &ablated_pack.features,
                    &labels,
                    class_names,
                    embeddings,
                    options,
                )?;
                let mut student_maps = BTreeMap::new();
                for (_, student_layer) in &options.pairing {
                    let &tap = student_nodes.taps.get(student_layer).ok_or_else(|| {
                        GsdmError::MissingLayer {
                            side: "student",
                            layer: student_layer.clone(),
                        }
                    })?;
                    let map = gsdm::saliency_node(&mut graph, &omega, tap)?;
                    student_maps.insert(student_layer.clone(), map);
                }
                gsdm::gsdm_loss_node(
                    &mut graph,
                    &teacher_batch.expect("distilling").maps,
                    &student_maps,
                    &options.pairing,
                )?
            } else {
                graph.constant(Tensor::scalar(0.0))
            };

            let sp = if options.weights.gamma > 0.0 {
                let feature_targets = &teacher_batch.expect("distilling").features;
                let mut total: Option<NodeId> = None;
                for features in feature_targets {
                    let target = graph.constant(features.clone());
                    let term = losses::semantic_preserving_node(
                        &mut graph,
                        student_nodes.features,
                        target,
                    )?;
                    total = Some(match total {
                        Some(t) => graph.add(t, term)?,
                        None => term,
                    });
                }
                graph.scale(total.expect("m ≥ 1"), 1.0 / feature_targets.len() as f64)?
            } else {
                graph.constant(Tensor::scalar(0.0))
            };

            let total =
                losses::student_total_node(&mut graph, ce, st, gsdm_node, sp, &options.weights)?;

            let (total_value, report) = losses::student_total(
                graph.value(ce).item(),
                graph.value(st).item(),
                graph.value(gsdm_node).item(),
                graph.value(sp).item(),
                &options.weights,
                step,
                options.t2_scaled,
            )?;
            debug_assert!((graph.value(total).item() - total_value).abs() <= 1e-12);
            if !total_value.is_finite() || total_value > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged {
                    step,
                    loss: total_value,
                });
            }

            let grads = graph.backward_scalar(total)?;
            sgd_apply(
                &mut student.params,
                &param_nodes,
                &grads,
                schedule.lr_at(step),
                schedule.momentum,
                schedule.clip_norm,
                &mut velocity,
            );

            reports.push(report);
            step += 1;
        }
    }

    let train_accuracy = eval_student(student, train, schedule.batch_size)?;
    let test_accuracy = if test.is_empty() {
        f64::NAN
    } else {
        eval_student(student, test, schedule.batch_size)?
    };
    Ok(StudentTrainReport {
        reports,
        train_accuracy,
        test_accuracy,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticTaskSpec};
    use crate::embeddings::pseudo_embed;
    use crate::models::{StudentConfig, TapFrame, TeacherConfig};

    fn tiny_task() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            classes: 2,
            modalities: 2,
            train_per_class: 8,
            test_per_class: 4,
            window_len: 16,
            frame_count: 8,
            segments: 2,
            frame_side: 16,
            noise_sigma: 0.1,
            pixel_noise: 0.05,
            distractors: 0,
            phase_jitter: 0.3,
            seed: 5,
        }
    }

    fn tiny_teacher_config(embed_dim: usize) -> TeacherConfig {
        TeacherConfig {
            input_channels: 3,
            input_side: 16,
            block_channels: [3, 4, 4, 6, 6],
            fc1_width: 8,
            embed_dim,
            classes: 2,
            fusion_layers: vec!["t3".to_string(), "fc1".to_string()],
        }
    }

    fn tiny_student_config(embed_dim: usize) -> StudentConfig {
        StudentConfig {
            input_channels: 1,
            input_side: 16,
            block_channels: [3, 4, 4, 6, 6],
            segments: 2,
            relation_width: 10,
            embed_dim,
            classes: 2,
            dropout: 0.2,
            tap_frame: TapFrame::Middle,
        }
    }

    fn tiny_schedule(iterations: usize) -> TrainSchedule {
        TrainSchedule {
            batch_size: 4,
            learning_rate: 0.05,
            decay_ratio: 0.5,
            decay_interval: 40,
            iterations,
            momentum: 0.0,
            clip_norm: None,
        }
    }

    #[test]
    fn lr_schedule_decays_stepwise() {
        let schedule = tiny_schedule(100);
        assert_eq!(schedule.lr_at(0), 0.05);
        assert_eq!(schedule.lr_at(39), 0.05);
        assert_eq!(schedule.lr_at(40), 0.025);
        assert_eq!(schedule.lr_at(80), 0.0125);
    }

    #[test]
    fn teacher_training_reduces_cross_entropy_and_zero_lr_is_noop() {
        let data = generate_synthetic(&tiny_task()).unwrap();
        let embeddings = pseudo_embed(&data.class_names, 8, 1).unwrap();
        let mut ensemble = TeacherEnsemble::init(tiny_teacher_config(8), 2, 3).unwrap();

        // Zero learning rate leaves parameters bit-identical.
        let frozen = ensemble.params.clone();
        let mut zero_schedule = tiny_schedule(5);
        zero_schedule.learning_rate = 0.0;
        train_teachers(
            &mut ensemble,
            &data.train,
            &[],
            &data.class_names,
            &embeddings,
            &zero_schedule,
            FusionMode::Joint,
            0,
        )
        .unwrap();
        for (name, tensor) in &frozen {
            assert_eq!(tensor.data(), ensemble.params[name].data(), "{name}");
        }

        let report = train_teachers(
            &mut ensemble,
            &data.train,
            &data.test,
            &data.class_names,
            &embeddings,
            &tiny_schedule(60),
            FusionMode::Joint,
            0,
        )
        .unwrap();
        assert_eq!(report.steps, 60);
        let initial_ce = report.reports[0].ce;
        let final_ce = report.reports.last().unwrap().ce;
        assert!(initial_ce < (2.0f64).ln() * 1.2, "CE starts near ln 2");
        assert!(
            final_ce < initial_ce,
            "CE should drop: {initial_ce} -> {final_ce}"
        );
        assert_eq!(report.per_modality_test_accuracy.len(), 2);
    }

    #[test]
    fn teacher_training_same_seed_reproduces_final_loss() {
        let data = generate_synthetic(&tiny_task()).unwrap();
        let embeddings = pseudo_embed(&data.class_names, 8, 1).unwrap();
        let run = || {
            let mut ensemble = TeacherEnsemble::init(tiny_teacher_config(8), 2, 3).unwrap();
            train_teachers(
                &mut ensemble,
                &data.train,
                &[],
                &data.class_names,
                &embeddings,
                &tiny_schedule(20),
                FusionMode::Joint,
                9,
            )
            .unwrap()
            .final_loss
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn student_training_distills_and_freezes_teachers() {
        let data = generate_synthetic(&tiny_task()).unwrap();
        let embed_dim = 8;
        let embeddings = pseudo_embed(&data.class_names, embed_dim, 1).unwrap();
        let mut ensemble = TeacherEnsemble::init(tiny_teacher_config(embed_dim), 2, 3).unwrap();
        train_teachers(
            &mut ensemble,
            &data.train,
            &[],
            &data.class_names,
            &embeddings,
            &tiny_schedule(30),
            FusionMode::Joint,
            0,
        )
        .unwrap();
        let teacher_snapshot = ensemble.params.clone();

        let mut student = StudentNet::init(tiny_student_config(embed_dim), 7).unwrap();
        let report = train_student(
            &mut student,
            &ensemble,
            &data.train,
            &data.test,
            &data.class_names,
            &embeddings,
            &tiny_schedule(12),
            &StudentTrainOptions::default(),
            11,
        )
        .unwrap();
        assert_eq!(report.steps, 12);
        for r in &report.reports {
            assert!(r.is_consistent(), "report at step {} inconsistent", r.step);
            assert!(r.ce.is_finite() && r.gsdm.is_finite());
            assert!(r.gsdm >= 0.0 && r.soft_target >= 0.0 && r.semantic_preserve >= 0.0);
        }
        // Teachers are bit-identical after student training.
        for (name, tensor) in &teacher_snapshot {
            assert_eq!(tensor.data(), ensemble.params[name].data(), "{name}");
        }
    }

    #[test]
    fn ce_only_weights_reduce_to_plain_ce() {
        let data = generate_synthetic(&tiny_task()).unwrap();
        let embed_dim = 8;
        let embeddings = pseudo_embed(&data.class_names, embed_dim, 1).unwrap();
        let ensemble = TeacherEnsemble::init(tiny_teacher_config(embed_dim), 2, 3).unwrap();
        let mut student = StudentNet::init(tiny_student_config(embed_dim), 7).unwrap();
        let options = StudentTrainOptions {
            weights: LossWeights::ce_only(4.0),
            ..Default::default()
        };
        let report = train_student(
            &mut student,
            &ensemble,
            &data.train,
            &[],
            &data.class_names,
            &embeddings,
            &tiny_schedule(6),
            &options,
            13,
        )
        .unwrap();
        for r in &report.reports {
            assert_eq!(r.total, r.ce);
            assert_eq!(r.soft_target, 0.0);
            assert_eq!(r.gsdm, 0.0);
            assert_eq!(r.semantic_preserve, 0.0);
        }
    }

    #[test]
    fn random_frozen_teachers_still_give_finite_losses() {
        let data = generate_synthetic(&tiny_task()).unwrap();
        let embed_dim = 8;
        let embeddings = pseudo_embed(&data.class_names, embed_dim, 1).unwrap();
        let ensemble = TeacherEnsemble::init(tiny_teacher_config(embed_dim), 2, 29).unwrap();
        let mut student = StudentNet::init(tiny_student_config(embed_dim), 7).unwrap();
        let report = train_student(
            &mut student,
            &ensemble,
            &data.train,
            &[],
            &data.class_names,
            &embeddings,
            &tiny_schedule(4),
            &StudentTrainOptions::default(),
            17,
        )
        .unwrap();
        for r in &report.reports {
            assert!(r.total.is_finite());
        }
    }
}
