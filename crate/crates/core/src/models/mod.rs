//! Desk-scale teacher and student networks.
//!
//! Teachers consume virtual images through five conv blocks with taps
//! t1…t5, then fc1 and fc2 (fc2 width ties to the embedding dimension) and a
//! classifier head. In joint mode the fusion layer recalibrates all teachers'
//! activations at every flagged layer. The student runs a shared per-frame
//! encoder with taps s1…s5, pools the middle frame's maps for distillation
//! pairing, and classifies through a temporal relation head, fc1 (embedding
//! width), and a classifier.

mod checkpoint;
mod train;

pub use checkpoint::{load_student, load_teachers, save_student, save_teachers};
pub use train::{
    eval_student, eval_teachers, prepare_gaf_inputs,
    train_student, train_teachers, StudentTrainOptions, StudentTrainReport, TeacherTrainReport,
    TrainError, TrainSchedule,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spamfm::{self, FusionParamNodes, FusionParams};
use crate::tensor::init::{seeded_rng, xavier_uniform};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

use rand::Rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input shape {got:?} does not match the configured {expected}")]
    BadInput { expected: String, got: Vec<usize>    },
    #[error("input side {side} cannot pass {blocks} halving blocks")]
    BadSide { side: usize, blocks: usize },
    #[error("modality count mismatch: {got} inputs for {expected} teachers")]
    ModalityCount { expected: usize, got: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Fusion(#[from] spamfm::FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Teacher tap names in forward order.
pub const TEACHER_TAPS: [&str; 5] = ["t1", "t2", "t3", "t4", "t5"];
/// Student tap names in forward order.
pub const STUDENT_TAPS: [&str; 5] = ["s1", "s2", "s3", "s4", "s5"];

/// The default five-pair tap alignment (t1,s1)…(t5,s5).
pub fn default_pairing() -> Vec<(String, String)> {
    TEACHER_TAPS
        .iter()
        .zip(STUDENT_TAPS)
        .map(|(t, s)| (t.to_string(), s.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub input_channels: usize,
    pub input_side: usize,
    /// Output channels of the five conv blocks.
    pub block_channels: [usize; 5],
    pub fc1_width: usize,
    /// fc2 width; must equal the semantic embedding dimension.
    pub embed_dim: usize,
    pub classes: usize,
    /// Layers with fusion attached in joint mode (subset of t1…t5, fc1, fc2).
    pub fusion_layers: Vec<String>,
}

impl TeacherConfig {
    fn validate(&self) -> Result<()> {
        // Four pooling stages between the five blocks.
        if self.input_side % 16 != 0 {
            return Err(ModelError::BadSide {
                side: self.input_side,
                blocks: 4,
            });
        }
        Ok(())
    }

    /// Channel count at a fusion-capable layer.
    fn layer_channels(&self, layer: &str) -> usize {
        match layer {
            "t1" => self.block_channels[0],
            "t2" => self.block_channels[1],
            "t3" => self.block_channels[2],
            "t4" => self.block_channels[3],
            "t5" => self.block_channels[4],
            "fc1" => self.fc1_width,
            "fc2" => self.embed_dim,
            other => panic!("unknown fusion layer {other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Fusion active at every flagged layer (the trained configuration).
    Joint,
    /// Fusion skipped; each teacher runs alone (ablation baseline).
    Independent,
}

/// Which frame feeds the student's distillation taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TapFrame {
    #[default]
    Middle,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub input_channels: usize,
    pub input_side: usize,
    pub block_channels: [usize; 5],
    /// Frames per sample (K).
    pub segments: usize,
    pub relation_width: usize,
    /// fc1 width; must equal the semantic embedding dimension.
    pub embed_dim: usize,
    pub classes: usize,
    /// Dropout ratio applied after global pooling, training mode only.
    pub dropout: f64,
    pub tap_frame: TapFrame,
}

impl StudentConfig {
    fn validate(&self) -> Result<()> {
        if self.input_side % 16 != 0 {
            return Err(ModelError::BadSide {
                side: self.input_side,
                blocks: 4,
            });
        }
        Ok(())
    }
}

/// Tapped activations plus logits and penultimate features, as graph nodes.
#[derive(Debug, Clone)]
pub struct ActivationNodes {
    pub taps: BTreeMap<String, NodeId>,
    pub logits: NodeId,
    /// Teacher fc2 / student fc1 features.
    pub features: NodeId,
}

/// Tapped activations plus logits and penultimate features, as values.
#[derive(Debug, Clone)]
pub struct ActivationPack {
    pub taps: BTreeMap<String, Tensor>,
    pub logits: Tensor,
    pub features: Tensor,
}

impl ActivationNodes {
    pub fn resolve(&self, graph: &Graph) -> ActivationPack {
        ActivationPack {
            taps: self
                .taps
                .iter()
                .map(|(name, &id)| (name.clone(), graph.value(id).clone()))
                .collect(),
            logits: graph.value(self.logits).clone(),
            features: graph.value(self.features).clone(),
        }
    }
}

// Layers feeding a ReLU use fan-in-only scaling (the ReLU halves activation
// variance; plain Xavier attenuates deep stacks into vanishing logits).
// Linear-output layers (fc2, heads) keep the symmetric Xavier bound.
fn conv_init(name: &str, co: usize, ci: usize, seed: u64) -> Tensor {
    let fan_in = ci * 9;
    xavier_uniform(&[co, ci, 3, 3], fan_in / 2, fan_in / 2, seed, name)
}

fn relu_fc_init(name: &str, out: usize, inp: usize, seed: u64) -> Tensor {
    xavier_uniform(&[out, inp], inp / 2, (inp + 1) / 2, seed, name)
}

fn fc_init(name: &str, out: usize, inp: usize, seed: u64) -> Tensor {
    xavier_uniform(&[out, inp], inp, out, seed, name)
}

fn linear(graph: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let product = graph.matmul_t(x, w, false, true)?;
    Ok(graph.add(product, b)?)
}

/// Parameter map helpers shared by teachers and the student.
pub(crate) struct ParamNodes<'a> {
    nodes: BTreeMap<String, NodeId>,
    graph: &'a mut Graph,
}

impl<'a> ParamNodes<'a> {
    fn insert_all(
        graph: &'a mut Graph,
        params: &BTreeMap<String, Tensor>,
        trainable: bool,
    ) -> Self {
        let mut nodes = BTreeMap::new();
        for (name, tensor) in params {
            let id = graph.input(name, tensor.clone().requires_grad(trainable));
            nodes.insert(name.clone(), id);
        }
        Self { nodes, graph }
    }

    fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    fn fusion_nodes(&self, layer: &str) -> Result<FusionParamNodes> {
        let g = |suffix: &str| self.get(&format!("spamfm/{layer}/{suffix}"));
        Ok(FusionParamNodes {
            w_con1: g("W_con1")?,
            b_con1: g("b_con1")?,
            w_sum1: g("W_sum1")?,
            b_sum1: g("b_sum1")?,
            w_had1: g("W_had1")?,
            b_had1: g("b_had1")?,
            w_con2: g("W_con2")?,
            b_con2: g("b_con2")?,
            w_sum2: g("W_sum2")?,
            b_sum2: g("b_sum2")?,
            w_had2: g("W_had2")?,
            b_had2: g("b_had2")?,
        })
    }

    pub(crate) fn into_map(self) -> BTreeMap<String, NodeId> {
        self.nodes
    }
}

/// The teacher ensemble: one conv stack per modality plus the shared fusion
/// parameters, stored flat under stable names.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    pub config: TeacherConfig,
    pub modalities: usize,
    pub params: BTreeMap<String, Tensor>,
    pub seed: u64,
}

impl TeacherEnsemble {
    pub fn init(config: TeacherConfig, modalities: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for k in 0..modalities {
            let mut ci = config.input_channels;
            for (i, &co) in config.block_channels.iter().enumerate() {
                let name = format!("teacher{k}/block{}/W", i + 1);
                params.insert(name.clone(), conv_init(&name, co, ci, seed));
                ci = co;
            }
            let c5 = config.block_channels[4];
            let fc1 = format!("teacher{k}/fc1/W");
            params.insert(fc1.clone(), relu_fc_init(&fc1, config.fc1_width, c5, seed));
            params.insert(format!("teacher{k}/fc1/b"), Tensor::zeros(&[config.fc1_width]));
            let fc2 = format!("teacher{k}/fc2/W");
            params.insert(
                fc2.clone(),
                fc_init(&fc2, config.embed_dim, config.fc1_width, seed),
            );
            params.insert(format!("teacher{k}/fc2/b"), Tensor::zeros(&[config.embed_dim]));
            let head = format!("teacher{k}/head/W");
            params.insert(
                head.clone(),
                fc_init(&head, config.classes, config.embed_dim, seed),
            );
            params.insert(format!("teacher{k}/head/b"), Tensor::zeros(&[config.classes]));
        }
        for layer in &config.fusion_layers {
            let fusion = FusionParams::init(modalities, config.layer_channels(layer), seed, layer);
            for (suffix, tensor) in fusion.tensors() {
                params.insert(format!("spamfm/{layer}/{suffix}"), tensor.clone());
            }
        }
        Ok(Self {
            config,
            modalities,
            params,
            seed,
        })
    }

    /// Build the joint forward pass over one graph. `inputs` holds one
    /// `b×c×s×s` node per modality. Returns per-modality activations and the
    /// parameter node map (for gradient application).
    pub fn forward_nodes(
        &self,
        graph: &mut Graph,
        inputs: &[NodeId],
        mode: FusionMode,
        trainable: bool,
    ) -> Result<(Vec<ActivationNodes>, BTreeMap<String, NodeId>)> {
        if inputs.len() != self.modalities {
            return Err(ModelError::ModalityCount {
                expected: self.modalities,
                got: inputs.len(),
            });
        }
        let expected_shape = [
            self.config.input_channels,
            self.config.input_side,
            self.config.input_side,
        ];
        for &input in inputs {
            let shape = graph.shape(input);
            if shape.len() != 4 || shape[1..] != expected_shape {
                return Err(ModelError::BadInput {
                    expected: format!("b×{expected_shape:?} virtual images"),
                    got: shape.to_vec(),
                });
            }
        }
        let params = ParamNodes::insert_all(graph, &self.params, trainable);
        let fuse_at = |layer: &str| {
            mode == FusionMode::Joint && self.config.fusion_layers.iter().any(|l| l == layer)
        };

        let mut states: Vec<NodeId> = inputs.to_vec();
        let mut taps: Vec<BTreeMap<String, NodeId>> =
            vec![BTreeMap::new(); self.modalities];

        for (block, tap_name) in TEACHER_TAPS.iter().enumerate() {
            let mut activations = Vec::with_capacity(self.modalities);
            for (k, state) in states.iter().enumerate() {
                let w = params.get(&format!("teacher{k}/block{}/W", block + 1))?;
                let conv = params.graph.conv2d(*state, w, 1, 1)?;
                activations.push(params.graph.relu(conv)?);
            }
            if fuse_at(tap_name) {
                let fusion = params.fusion_nodes(tap_name)?;
                let (fused, _) =
                    spamfm::fuse_recalibrate_nodes(params.graph, &activations, &fusion)?;
                activations = fused;
            }
            for (k, &activation) in activations.iter().enumerate() {
                taps[k].insert(tap_name.to_string(), activation);
            }
            states = if block < 4 {
                activations
                    .iter()
                    .map(|&a| params.graph.avg_pool2(a))
                    .collect::<std::result::Result<_, _>>()?
            } else {
                activations
            };
        }

        // Global pooling into the fully-connected stack.
        let mut features: Vec<NodeId> = states
            .iter()
            .map(|&s| params.graph.global_avg_pool(s))
            .collect::<std::result::Result<_, _>>()?;

        let mut fc1_out = Vec::with_capacity(self.modalities);
        for (k, &f) in features.iter().enumerate() {
            let w = params.get(&format!("teacher{k}/fc1/W"))?;
            let b = params.get(&format!("teacher{k}/fc1/b"))?;
            let z = linear(params.graph, f, w, b)?;
            fc1_out.push(params.graph.relu(z)?);
        }
        if fuse_at("fc1") {
            let fusion = params.fusion_nodes("fc1")?;
            let (fused, _) = spamfm::fuse_recalibrate_nodes(params.graph, &fc1_out, &fusion)?;
            fc1_out = fused;
        }
        for (k, &node) in fc1_out.iter().enumerate() {
            taps[k].insert("fc1".to_string(), node);
        }

        let mut fc2_out = Vec::with_capacity(self.modalities);
        for (k, &f) in fc1_out.iter().enumerate() {
            let w = params.get(&format!("teacher{k}/fc2/W"))?;
            let b = params.get(&format!("teacher{k}/fc2/b"))?;
            fc2_out.push(linear(params.graph, f, w, b)?);
        }
        if fuse_at("fc2") {
            let fusion = params.fusion_nodes("fc2")?;
            let (fused, _) = spamfm::fuse_recalibrate_nodes(params.graph, &fc2_out, &fusion)?;
            fc2_out = fused;
        }
        for (k, &node) in fc2_out.iter().enumerate() {
            taps[k].insert("fc2".to_string(), node);
        }

        let mut packs = Vec::with_capacity(self.modalities);
        features.clear();
        for (k, tap_map) in taps.into_iter().enumerate() {
            let fc2 = tap_map["fc2"];
            let w = params.get(&format!("teacher{k}/head/W"))?;
            let b = params.get(&format!("teacher{k}/head/b"))?;
            let logits = linear(params.graph, fc2, w, b)?;
            packs.push(ActivationNodes {
                taps: tap_map,
                logits,
                features: fc2,
            });
        }
        Ok((packs, params.into_map()))
    }

    /// Value-only forward pass.
    pub fn forward(&self, inputs: &[Tensor], mode: FusionMode) -> Result<Vec<ActivationPack>> {
        let mut graph = Graph::new();
        let nodes: Vec<NodeId> = inputs
            .iter()
            .map(|t| graph.constant(t.clone()))
            .collect();
        let (packs, _) = self.forward_nodes(&mut graph, &nodes, mode, false)?;
        Ok(packs.iter().map(|p| p.resolve(&graph)).collect())
    }
}

/// The video-frame student network.
#[derive(Debug, Clone)]
pub struct StudentNet {
    pub config: StudentConfig,
    pub params: BTreeMap<String, Tensor>,
    pub seed: u64,
}

/// Forward-pass mode: training applies the configured dropout with a
/// step-seeded mask; eval is deterministic and dropout-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentMode {
    Train { step: usize },
    Eval,
}

impl StudentNet {
    pub fn init(config: StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        let mut ci = config.input_channels;
        for (i, &co) in config.block_channels.iter().enumerate() {
            let name = format!("student/block{}/W", i + 1);
            params.insert(name.clone(), conv_init(&name, co, ci, seed));
            ci = co;
        }
        let pooled = config.block_channels[4] * config.segments;
        let rel = "student/rel/W";
        params.insert(rel.to_string(), relu_fc_init(rel, config.relation_width, pooled, seed));
        params.insert("student/rel/b".to_string(), Tensor::zeros(&[config.relation_width]));
        // fc1 reads the relation features alongside the pooled frame features
        // through a shortcut, so the head keeps a gradient path even when the
        // relation branch saturates.
        let fc1 = "student/fc1/W";
        params.insert(
            fc1.to_string(),
            fc_init(fc1, config.embed_dim, config.relation_width + pooled, seed),
        );
        params.insert("student/fc1/b".to_string(), Tensor::zeros(&[config.embed_dim]));
        let head = "student/head/W";
        params.insert(
            head.to_string(),
            fc_init(head, config.classes, config.embed_dim, seed),
        );
        params.insert("student/head/b".to_string(), Tensor::zeros(&[config.classes]));
        Ok(Self {
            config,
            params,
            seed,
        })
    }

    /// Build the forward pass for `frames` of shape `b×K×c×s×s`. Taps report
    /// the configured frame reduction (middle frame by default).
    pub fn forward_nodes(
        &self,
        graph: &mut Graph,
        frames: NodeId,
        mode: StudentMode,
        trainable: bool,
    ) -> Result<(ActivationNodes, BTreeMap<String, NodeId>)> {
        let shape = graph.shape(frames).to_vec();
        let c = self.config.input_channels;
        let s = self.config.input_side;
        let k = self.config.segments;
        if shape.len() != 5 || shape[1] != k || shape[2] != c || shape[3] != s || shape[4] != s {
            return Err(ModelError::BadInput {
                expected: format!("b×{k}×{c}×{s}×{s} frame stacks"),
                got: shape,
            });
        }
        let b = shape[0];
        let params = ParamNodes::insert_all(graph, &self.params, trainable);

        // Shared per-frame encoder over the flattened b·K batch.
        let mut state = params.graph.reshape(frames, &[b * k, c, s, s])?;
        let mut taps = BTreeMap::new();
        let mut side = s;
        let mut channels = c;
        for (block, tap_name) in STUDENT_TAPS.iter().enumerate() {
            let w = params.get(&format!("student/block{}/W", block + 1))?;
            let conv = params.graph.conv2d(state, w, 1, 1)?;
            let act = params.graph.relu(conv)?;
            channels = self.config.block_channels[block];

            // Distillation view: reduce the frame axis to one map per sample.
            let per_frame =
                params
                    .graph
                    .reshape(act, &[b, k, channels, side, side])?;
            let reduced = match self.config.tap_frame {
                TapFrame::Middle => {
                    let mut mask = vec![0.0; k];
                    mask[k / 2] = 1.0;
                    let mask = params
                        .graph
                        .constant(Tensor::from_parts(vec![1, k, 1, 1, 1], mask));
                    let selected = params.graph.mul(per_frame, mask)?;
                    params.graph.reduce_sum(selected, &[1], false)?
                }
                TapFrame::Average => params.graph.reduce_mean(per_frame, &[1], false)?,
            };
            taps.insert(tap_name.to_string(), reduced);

            state = if block < 4 {
                side /= 2;
                params.graph.avg_pool2(act)?
            } else {
                act
            };
        }

        // Per-frame features, concatenated in frame order.
        let pooled = params.graph.global_avg_pool(state)?; // (b·K)×c5
        let mut joined = params.graph.reshape(pooled, &[b, k * channels])?;

        if let StudentMode::Train { step } = mode {
            if self.config.dropout > 0.0 {
                let keep = 1.0 - self.config.dropout;
                let mut rng = seeded_rng(self.seed ^ (step as u64), "student/dropout");
                let mask: Vec<f64> = (0..b * k * channels)
                    .map(|_| {
                        if rng.gen_range(0.0..1.0) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mask = params
                    .graph
                    .constant(Tensor::from_parts(vec![b, k * channels], mask));
                joined = params.graph.mul(joined, mask)?;
            }
        }

        let rel_w = params.get("student/rel/W")?;
        let rel_b = params.get("student/rel/b")?;
        let rel = linear(params.graph, joined, rel_w, rel_b)?;
        let rel = params.graph.relu(rel)?;
        let combined = params.graph.concat(&[rel, joined], 1)?;

        let fc1_w = params.get("student/fc1/W")?;
        let fc1_b = params.get("student/fc1/b")?;
        let fc1 = linear(params.graph, combined, fc1_w, fc1_b)?;

        let head_w = params.get("student/head/W")?;
        let head_b = params.get("student/head/b")?;
        let logits = linear(params.graph, fc1, head_w, head_b)?;

        Ok((
            ActivationNodes {
                taps,
                logits,
                features: fc1,
            },
            params.into_map(),
        ))
    }

    /// Value-only forward pass.
    pub fn forward(&self, frames: &Tensor, mode: StudentMode) -> Result<ActivationPack> {
        let mut graph = Graph::new();
        let input = graph.constant(frames.clone());
        let (nodes, _) = self.forward_nodes(&mut graph, input, mode, false)?;
        Ok(nodes.resolve(&graph))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::seeded_uniform;

    fn teacher_config() -> TeacherConfig {
        TeacherConfig {
            input_channels: 3,
            input_side: 16,
            block_channels: [4, 6, 6, 8, 8],
            fc1_width: 10,
            embed_dim: 12,
            classes: 4,
            fusion_layers: ["t1", "t2", "t3", "t4", "t5", "fc1", "fc2"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    fn student_config() -> StudentConfig {
        StudentConfig {
            input_channels: 1,
            input_side: 16,
            block_channels: [4, 6, 6, 8, 8],
            segments: 3,
            relation_width: 14,
            embed_dim: 12,
            classes: 4,
            dropout: 0.5,
            tap_frame: TapFrame::Middle,
        }
    }

    #[test]
    fn teacher_forward_shapes_and_finiteness() {
        let ensemble = TeacherEnsemble::init(teacher_config(), 2, 7).unwrap();
        let inputs = [
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 1),
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 2),
        ];
        let packs = ensemble.forward(&inputs, FusionMode::Joint).unwrap();
        assert_eq!(packs.len(), 2);
        for pack in &packs {
            assert_eq!(pack.logits.shape(), &[2, 4]);
            assert_eq!(pack.features.shape(), &[2, 12]);
            assert_eq!(pack.taps["t1"].shape(), &[2, 4, 16, 16]);
            assert_eq!(pack.taps["t3"].shape(), &[2, 6, 4, 4]);
            assert_eq!(pack.taps["t5"].shape(), &[2, 8, 1, 1]);
            assert_eq!(pack.taps["fc1"].shape(), &[2, 10]);
            assert_eq!(pack.taps["fc2"].shape(), &[2, 12]);
            assert!(pack.logits.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_modality_joint_mode_self_gates() {
        let ensemble = TeacherEnsemble::init(teacher_config(), 1, 3).unwrap();
        let inputs = [seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 5)];
        let packs = ensemble.forward(&inputs, FusionMode::Joint).unwrap();
        assert!(packs[0].logits.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn teacher_forward_is_deterministic() {
        let ensemble = TeacherEnsemble::init(teacher_config(), 2, 11).unwrap();
        let inputs = [
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 8),
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 9),
        ];
        let a = ensemble.forward(&inputs, FusionMode::Independent).unwrap();
        let b = ensemble.forward(&inputs, FusionMode::Independent).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.logits.data(), y.logits.data());
            for (name, tap) in &x.taps {
                assert_eq!(tap.data(), y.taps[name].data(), "{name}");
            }
        }
    }

    #[test]
    fn joint_and_independent_modes_differ() {
        let ensemble = TeacherEnsemble::init(teacher_config(), 2, 13).unwrap();
        let inputs = [
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 10),
            seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 11),
        ];
        let joint = ensemble.forward(&inputs, FusionMode::Joint).unwrap();
        let independent = ensemble.forward(&inputs, FusionMode::Independent).unwrap();
        let mut any_difference = false;
        for (a, b) in joint.iter().zip(&independent) {
            for (name, tap) in &a.taps {
                if tap.data() != b.taps[name].data() {
                    any_difference = true;
                }
            }
        }
        assert!(any_difference, "fusion should change some tapped map");
    }

    #[test]
    fn modality_count_mismatch_rejected() {
        let ensemble = TeacherEnsemble::init(teacher_config(), 2, 1).unwrap();
        let inputs = [seeded_uniform(&[2, 3, 16, 16], -1.0, 1.0, 1)];
        assert!(matches!(
            ensemble.forward(&inputs, FusionMode::Joint),
            Err(ModelError::ModalityCount { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn student_forward_shapes() {
        let net = StudentNet::init(student_config(), 17).unwrap();
        let frames = seeded_uniform(&[1, 3, 1, 16, 16], 0.0, 1.0, 20);
        let pack = net.forward(&frames, StudentMode::Eval).unwrap();
        assert_eq!(pack.logits.shape(), &[1, 4]);
        assert_eq!(pack.features.shape(), &[1, 12]);
        assert_eq!(pack.taps["s1"].shape(), &[1, 4, 16, 16]);
        assert_eq!(pack.taps["s5"].shape(), &[1, 8, 1, 1]);
    }

    #[test]
    fn identical_frames_produce_identical_frame_features() {
        // With every frame equal, the middle-frame tap equals the average tap.
        let mut config = student_config();
        let net = StudentNet::init(config.clone(), 19).unwrap();
        let one = seeded_uniform(&[1, 1, 1, 16, 16], 0.0, 1.0, 21);
        let mut frames = Vec::new();
        for _ in 0..3 {
            frames.extend_from_slice(one.data());
        }
        let frames = Tensor::from_parts(vec![1, 3, 1, 16, 16], frames);
        let middle = net.forward(&frames, StudentMode::Eval).unwrap();

        config.tap_frame = TapFrame::Average;
        let net_avg = StudentNet {
            config,
            params: net.params.clone(),
            seed: net.seed,
        };
        let averaged = net_avg.forward(&frames, StudentMode::Eval).unwrap();
        for name in STUDENT_TAPS {
            assert!(middle.taps[name].max_abs_diff(&averaged.taps[name]) < 1e-12);
        }
        assert!(middle.logits.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frame_order_affects_logits() {
        let net = StudentNet::init(student_config(), 23).unwrap();
        let frames = seeded_uniform(&[1, 3, 1, 16, 16], 0.0, 1.0, 24);
        let base = net.forward(&frames, StudentMode::Eval).unwrap();

        // Swap frames 0 and 2.
        let stride = 16 * 16;
        let mut swapped = frames.data().to_vec();
        for p in 0..stride {
            swapped.swap(p, 2 * stride + p);
        }
        let swapped = Tensor::from_parts(vec![1, 3, 1, 16, 16], swapped);
        let permuted = net.forward(&swapped, StudentMode::Eval).unwrap();
        let diff = base.logits.max_abs_diff(&permuted.logits);
        assert!(diff > 1e-9, "frame order should matter, diff {diff}");
    }

    #[test]
    fn dropout_active_only_in_training_mode() {
        let mut config = student_config();
        config.dropout = 0.8;
        let net = StudentNet::init(config, 29).unwrap();
        let frames = seeded_uniform(&[2, 3, 1, 16, 16], 0.0, 1.0, 30);
        let eval_a = net.forward(&frames, StudentMode::Eval).unwrap();
        let eval_b = net.forward(&frames, StudentMode::Eval).unwrap();
        assert_eq!(eval_a.logits.data(), eval_b.logits.data());

        let train_a = net.forward(&frames, StudentMode::Train { step: 0 }).unwrap();
        let train_b = net.forward(&frames, StudentMode::Train { step: 0 }).unwrap();
        assert_eq!(train_a.logits.data(), train_b.logits.data(), "same step, same mask");
        let train_c = net.forward(&frames, StudentMode::Train { step: 1 }).unwrap();
        assert_ne!(train_a.logits.data(), train_c.logits.data(), "steps draw fresh masks");
        assert_ne!(train_a.logits.data(), eval_a.logits.data());
    }

    #[test]
    fn bad_frame_shape_rejected() {
        let net = StudentNet::init(student_config(), 31).unwrap();
        let frames = seeded_uniform(&[1, 2, 1, 16, 16], 0.0, 1.0, 32);
        assert!(matches!(
            net.forward(&frames, StudentMode::Eval),
            Err(ModelError::BadInput { .. })
        ));
    }
}
