//! Similarity-preserving adaptive multi-modal fusion.
//!
//! For each modality the batch's flattened activations form a row-normalized
//! Gram matrix; multiplying it into the squeezed (globally pooled) features
//! yields similarity-weighted per-modality summaries. Three relation
//! functions — concatenation, summation, Hadamard product — each pass through
//! their own two fully-connected layers, and the summed ReLU excitations form
//! one shared channel gate applied to every modality's activations.
//!
//! All modalities must share the batch size and channel count; spatial sizes
//! may differ per modality. The gate is computed once and applied to each
//! modality (the excitations carry no modality index).

use thiserror::Error;

use crate::tensor::init::xavier_uniform;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no modalities supplied")]
    Empty,
    #[error("modality {index}: expected batch {b} and {c} channels, got shape {shape:?}")]
    ModalityMismatch {
        index: usize,
        b: usize,
        c: usize,
        shape: Vec<usize>,
    },
    #[error("activations must be b×c or b×c×h×w, got {0:?}")]
    BadRank(Vec<usize>),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: &'static str,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Bottleneck width for the concatenation branch: ⌈m·c / 2m⌉ = ⌈c/2⌉.
pub fn bottleneck_width(channels: usize) -> usize {
    channels.div_ceil(2)
}

/// The twelve trainable tensors of one fusion layer.
///
/// First-stage weights map onto the joint representations, second-stage
/// weights produce the per-channel excitations. Weight layout is
/// `out×in`, applied as `x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub w_con1: Tensor,
    pub b_con1: Tensor,
    pub w_sum1: Tensor,
    pub b_sum1: Tensor,
    pub w_had1: Tensor,
    pub b_had1: Tensor,
    pub w_con2: Tensor,
    pub b_con2: Tensor,
    pub w_sum2: Tensor,
    pub b_sum2: Tensor,
    pub w_had2: Tensor,
    pub b_had2: Tensor,
}

/// Serialized parameter names, in the order used everywhere.
pub const PARAM_NAMES: [&str; 12] = [
    "W_con1", "b_con1", "W_sum1", "b_sum1", "W_had1", "b_had1", "W_con2", "b_con2", "W_sum2",
    "b_sum2", "W_had2", "b_had2",
];

impl FusionParams {
    /// Seeded initialization for `modalities` inputs of `channels` channels at
    /// the named layer. Weights are Xavier-uniform streams keyed by
    /// `spamfm/<layer>/<param>`. First-stage biases start at zero;
    /// second-stage biases start at 1/3 so the three ReLU excitations sum to
    /// a unit gate and the layer begins as the identity (a closed gate at
    /// every attached layer would extinguish the forward signal).
    pub fn init(modalities: usize, channels: usize, seed: u64, layer: &str) -> Self {
        let m = modalities;
        let c = channels;
        let c_con = bottleneck_width(c);
        let w = |name: &str, out: usize, inp: usize| {
            xavier_uniform(
                &[out, inp],
                inp,
                out,
                seed,
                &format!("spamfm/{layer}/{name}"),
            )
        };
        let open_gate = 1.0 / 3.0;
        Self {
            w_con1: w("W_con1", c_con, m * c),
            b_con1: Tensor::zeros(&[c_con]),
            w_sum1: w("W_sum1", c, c),
            b_sum1: Tensor::zeros(&[c]),
            w_had1: w("W_had1", c, c),
            b_had1: Tensor::zeros(&[c]),
            w_con2: w("W_con2", c, c_con),
            b_con2: Tensor::filled(&[c], open_gate),
            w_sum2: w("W_sum2", c, c),
            b_sum2: Tensor::filled(&[c], open_gate),
            w_had2: w("W_had2", c, c),
            b_had2: Tensor::filled(&[c], open_gate),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("W_con1", &self.w_con1),
            ("b_con1", &self.b_con1),
            ("W_sum1", &self.w_sum1),
            ("b_sum1", &self.b_sum1),
            ("W_had1", &self.w_had1),
            ("b_had1", &self.b_had1),
            ("W_con2", &self.w_con2),
            ("b_con2", &self.b_con2),
            ("W_sum2", &self.w_sum2),
            ("b_sum2", &self.b_sum2),
            ("W_had2", &self.w_had2),
            ("b_had2", &self.b_had2),
        ]
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        Some(match name {
            "W_con1" => &mut self.w_con1,
            "b_con1" => &mut self.b_con1,
            "W_sum1" => &mut self.w_sum1,
            "b_sum1" => &mut self.b_sum1,
            "W_had1" => &mut self.w_had1,
            "b_had1" => &mut self.b_had1,
            "W_con2" => &mut self.w_con2,
            "b_con2" => &mut self.b_con2,
            "W_sum2" => &mut self.w_sum2,
            "b_sum2" => &mut self.b_sum2,
            "W_had2" => &mut self.w_had2,
            "b_had2" => &mut self.b_had2,
            _ => return None,
        })
    }

    fn validate(&self, modalities: usize, channels: usize) -> Result<()> {
        let c = channels;
        let c_con = bottleneck_width(c);
        let expectations: [(&'static str, &Tensor, Vec<usize>); 12] = [
            ("W_con1", &self.w_con1, vec![c_con, modalities * c]),
            ("b_con1", &self.b_con1, vec![c_con]),
            ("W_sum1", &self.w_sum1, vec![c, c]),
            ("b_sum1", &self.b_sum1, vec![c]),
            ("W_had1", &self.w_had1, vec![c, c]),
            ("b_had1", &self.b_had1, vec![c]),
            ("W_con2", &self.w_con2, vec![c, c_con]),
            ("b_con2", &self.b_con2, vec![c]),
            ("W_sum2", &self.w_sum2, vec![c, c]),
            ("b_sum2", &self.b_sum2, vec![c]),
            ("W_had2", &self.w_had2, vec![c, c]),
            ("b_had2", &self.b_had2, vec![c]),
        ];
        for (name, tensor, expected) in expectations {
            if tensor.shape() != expected.as_slice() {
                return Err(FusionError::ParamShape {
                    name,
                    got: tensor.shape().to_vec(),
                    expected,
                });
            }
        }
        Ok(())
    }
}

/// Graph handles to one fusion layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct FusionParamNodes {
    pub w_con1: NodeId,
    pub b_con1: NodeId,
    pub w_sum1: NodeId,
    pub b_sum1: NodeId,
    pub w_had1: NodeId,
    pub b_had1: NodeId,
    pub w_con2: NodeId,
    pub b_con2: NodeId,
    pub w_sum2: NodeId,
    pub b_sum2: NodeId,
    pub w_had2: NodeId,
    pub b_had2: NodeId,
}

impl FusionParamNodes {
    pub fn named(&self) -> [(&'static str, NodeId); 12] {
        [
            ("W_con1", self.w_con1),
            ("b_con1", self.b_con1),
            ("W_sum1", self.w_sum1),
            ("b_sum1", self.b_sum1),
            ("W_had1", self.w_had1),
            ("b_had1", self.b_had1),
            ("W_con2", self.w_con2),
            ("b_con2", self.b_con2),
            ("W_sum2", self.w_sum2),
            ("b_sum2", self.b_sum2),
            ("W_had2", self.w_had2),
            ("b_had2", self.b_had2),
        ]
    }
}

/// Register a layer's fusion parameters as graph inputs. Names follow the
/// serialized convention `spamfm/<layer>/<param>`.
pub fn insert_params(
    graph: &mut Graph,
    params: &FusionParams,
    layer: &str,
    trainable: bool,
) -> FusionParamNodes {
    let mut insert = |name: &str, tensor: &Tensor| {
        graph.input(
            &format!("spamfm/{layer}/{name}"),
            tensor.clone().requires_grad(trainable),
        )
    };
    FusionParamNodes {
        w_con1: insert("W_con1", &params.w_con1),
        b_con1: insert("b_con1", &params.b_con1),
        w_sum1: insert("W_sum1", &params.w_sum1),
        b_sum1: insert("b_sum1", &params.b_sum1),
        w_had1: insert("W_had1", &params.w_had1),
        b_had1: insert("b_had1", &params.b_had1),
        w_con2: insert("W_con2", &params.w_con2),
        b_con2: insert("b_con2", &params.b_con2),
        w_sum2: insert("W_sum2", &params.w_sum2),
        b_sum2: insert("b_sum2", &params.b_sum2),
        w_had2: insert("W_had2", &params.w_had2),
        b_had2: insert("b_had2", &params.b_had2),
    }
}

/// Counters describing degenerate inputs seen during one fusion pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FusionDiagnostics {
    /// Similarity-matrix rows left unnormalized because their norm vanished,
    /// summed over modalities.
    pub zero_norm_rows: usize,
}

fn batch_channels(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1])),
        4 => Ok((shape[0], shape[1])),
        _ => Err(FusionError::BadRank(shape.to_vec())),
    }
}

/// Row-normalized batch Gram matrix of one modality's activations (Eq. 4–5
/// route): reshape to `b×(chw)`, form `R·Rᵀ`, normalize each row. Returns the
/// similarity node and the number of zero-norm rows left untouched.
pub fn similarity_node(graph: &mut Graph, activations: NodeId) -> Result<(NodeId, usize)> {
    let shape = graph.shape(activations).to_vec();
    let (b, _) = batch_channels(&shape)?;
    let flat_width: usize = shape[1..].iter().product();
    let flat = graph.reshape(activations, &[b, flat_width])?;
    let gram = graph.matmul_t(flat, flat, false, true)?;
    let zero_rows = {
        let value = graph.value(gram);
        (0..b)
            .filter(|&r| {
                let row = &value.data()[r * b..(r + 1) * b];
                row.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12
            })
            .count()
    };
    let normalized = graph.row_l2_normalize(gram)?;
    Ok((normalized, zero_rows))
}

/// Plain-value similarity matrix (`b×b`) with its zero-row count.
pub fn intra_modality_similarity(activations: &Tensor) -> Result<(Tensor, usize)> {
    let mut graph = Graph::new();
    let a = graph.constant(activations.clone());
    let (node, zero_rows) = similarity_node(&mut graph, a)?;
    Ok((graph.value(node).clone(), zero_rows))
}

/// Per-channel spatial mean; the identity for `b×c` inputs.
pub fn squeeze_node(graph: &mut Graph, activations: NodeId) -> Result<NodeId> {
    let shape = graph.shape(activations).to_vec();
    match shape.len() {
        2 => Ok(activations),
        4 => Ok(graph.global_avg_pool(activations)?),
        _ => Err(FusionError::BadRank(shape)),
    }
}

/// Plain-value squeeze (`b×c`).
pub fn squeeze(activations: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let a = graph.constant(activations.clone());
    let node = squeeze_node(&mut graph, a)?;
    Ok(graph.value(node).clone())
}

fn linear(graph: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let product = graph.matmul_t(x, w, false, true)?;
    Ok(graph.add(product, b)?)
}

/// Build the fusion layer over per-modality activation nodes, returning the
/// recalibrated activations (one per modality, same shapes as the inputs).
pub fn fuse_recalibrate_nodes(
    graph: &mut Graph,
    activations: &[NodeId],
    params: &FusionParamNodes,
) -> Result<(Vec<NodeId>, FusionDiagnostics)> {
    if activations.is_empty() {
        return Err(FusionError::Empty);
    }
    let (b, c) = batch_channels(graph.shape(activations[0]))?;
    for (index, &a) in activations.iter().enumerate() {
        let shape = graph.shape(a);
        let (bi, ci) = batch_channels(shape)?;
        if bi != b || ci != c {
            return Err(FusionError::ModalityMismatch {
                index,
                b,
                c,
                shape: shape.to_vec(),
            });
        }
    }

    let mut diagnostics = FusionDiagnostics::default();
    // Similarity-weighted squeezed features Gₖ·Sₖ per modality.
    let mut weighted = Vec::with_capacity(activations.len());
    for &a in activations {
        let (similarity, zero_rows) = similarity_node(graph, a)?;
        diagnostics.zero_norm_rows += zero_rows;
        let squeezed = squeeze_node(graph, a)?;
        weighted.push(graph.matmul(similarity, squeezed)?);
    }

    // Three joint representations.
    let concatenated = graph.concat(&weighted, 1)?;
    let z_con = linear(graph, concatenated, params.w_con1, params.b_con1)?;

    let mut summed = weighted[0];
    for &w in &weighted[1..] {
        summed = graph.add(summed, w)?;
    }
    let z_sum = linear(graph, summed, params.w_sum1, params.b_sum1)?;

    let mut product = weighted[0];
    for &w in &weighted[1..] {
        product = graph.mul(product, w)?;
    }
    let z_had = linear(graph, product, params.w_had1, params.b_had1)?;

    // Excitations and the shared gate.
    let e_con = linear(graph, z_con, params.w_con2, params.b_con2)?;
    let e_sum = linear(graph, z_sum, params.w_sum2, params.b_sum2)?;
    let e_had = linear(graph, z_had, params.w_had2, params.b_had2)?;
    let r_con = graph.relu(e_con)?;
    let r_sum = graph.relu(e_sum)?;
    let r_had = graph.relu(e_had)?;
    let partial = graph.add(r_con, r_sum)?;
    let gate = graph.add(partial, r_had)?;

    // Channel-wise recalibration, broadcast over each modality's own
    // spatial extent.
    let mut recalibrated = Vec::with_capacity(activations.len());
    for &a in activations {
        let shape = graph.shape(a).to_vec();
        let gated = if shape.len() == 4 {
            let gate4 = graph.reshape(gate, &[b, c, 1, 1])?;
            graph.mul(gate4, a)?
        } else {
            graph.mul(gate, a)?
        };
        recalibrated.push(gated);
    }
    Ok((recalibrated, diagnostics))
}

/// Plain-value fusion over per-modality activation tensors.
pub fn fuse_recalibrate(
    activations: &[Tensor],
    params: &FusionParams,
) -> Result<(Vec<Tensor>, FusionDiagnostics)> {
    if activations.is_empty() {
        return Err(FusionError::Empty);
    }
    let (_, c) = batch_channels(activations[0].shape())?;
    params.validate(activations.len(), c)?;
    let mut graph = Graph::new();
    let nodes: Vec<NodeId> = activations
        .iter()
        .map(|a| graph.constant(a.clone()))
        .collect();
    let param_nodes = insert_params(&mut graph, params, "adhoc", false);
    let (outputs, diagnostics) = fuse_recalibrate_nodes(&mut graph, &nodes, &param_nodes)?;
    Ok((
        outputs.into_iter().map(|n| graph.value(n).clone()).collect(),
        diagnostics,
    ))
}
