//! Graph-guided semantically discriminative mapping.
//!
//! Saliency is derived from an ablation experiment: run a network on the
//! original batch and on an all-zero batch, embed the predicted class of each
//! half, propagate both embedding matrices through Gaussian-affinity graph
//! operators built from the final fully-connected features, and measure the
//! relative drop. The per-sample drop weights the channel-summed activations
//! of a tap layer into a nonnegative map; teacher and student maps are then
//! L2-normalized and compared with a squared distance averaged over teachers
//! and layer pairs.
//!
//! Gradient flows through the activations only; the drop weights and graph
//! operators come from forward values (the argmax embedding step is piecewise
//! constant anyway) and the teacher side is frozen during distillation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::embeddings::{EmbedError, EmbeddingTable};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GsdmError {
    #[error("ablation batch needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("layer pairing must be nonempty")]
    EmptyPairing,
    #[error("{context}: expected shape {expected}, got {got:?}")]
    Shape {
        context: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("no {side} map for layer {layer:?}")]
    MissingLayer { side: &'static str, layer: String },
    #[error("class id {0} out of range for {1} class names")]
    BadClassId(usize, usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GsdmError>;

/// Which normalization builds Q from the affinity W and degree D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphNorm {
    /// Q = D^{1/2} · W · D^{−1/2} (the written form; default).
    #[default]
    PaperLiteral,
    /// Q = D^{−1/2} · W · D^{−1/2} (the conventional symmetric form).
    Symmetric,
}

/// Whether semantic embeddings follow the network's predictions or the
/// ground-truth labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemanticSource {
    #[default]
    Predicted,
    GroundTruth,
}

/// Normalized graph operator plus the affinity and degrees it came from.
#[derive(Debug, Clone)]
pub struct GraphOperator {
    pub q: Tensor,
    pub affinity: Tensor,
    pub degrees: Vec<f64>,
}

/// Append an all-zero ablation copy after the original samples: `b×…` → `2b×…`.
pub fn build_ablation_batch(batch: &Tensor) -> Result<Tensor> {
    let shape = batch.shape();
    if shape.is_empty() || shape[0] < 2 {
        return Err(GsdmError::BatchTooSmall(shape.first().copied().unwrap_or(0)));
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] *= 2;
    let mut data = Vec::with_capacity(batch.len() * 2);
    data.extend_from_slice(batch.data());
    data.resize(batch.len() * 2, 0.0);
    Ok(Tensor::from_parts(out_shape, data))
}

/// Predicted class index per row; ties break toward the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(GsdmError::Shape {
            context: "argmax_rows",
            expected: "b×C".into(),
            got: shape.to_vec(),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(b);
    for r in 0..b {
        let row = &logits.data()[r * c..(r + 1) * c];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Embed the argmax class of each row of logits: `b×C` → `b×d`.
pub fn embed_predictions(
    logits: &Tensor,
    class_names: &[String],
    table: &EmbeddingTable,
) -> Result<Tensor> {
    let predictions = argmax_rows(logits)?;
    embed_labels(&predictions, class_names, table)
}

/// Embed explicit class ids: `b` → `b×d`.
pub fn embed_labels(
    labels: &[usize],
    class_names: &[String],
    table: &EmbeddingTable,
) -> Result<Tensor> {
    let names: Vec<&str> = labels
        .iter()
        .map(|&id| {
            class_names
                .get(id)
                .map(String::as_str)
                .ok_or(GsdmError::BadClassId(id, class_names.len()))
        })
        .collect::<Result<_>>()?;
    Ok(table.embed_rows(&names)?)
}

/// Gaussian-affinity graph over embedded features: W[i,j] = exp(−‖fᵢ−fⱼ‖²/2),
/// D = diag(row sums), Q per the chosen normalization.
pub fn graph_normalize(features: &Tensor, norm: GraphNorm) -> Result<GraphOperator> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(GsdmError::Shape {
            context: "graph_normalize",
            expected: "b×d".into(),
            got: shape.to_vec(),
        });
    }
    let (b, d) = (shape[0], shape[1]);
    if b < 2 {
        return Err(GsdmError::BatchTooSmall(b));
    }
    let data = features.data();
    let mut affinity = vec![0.0; b * b];
    for i in 0..b {
        affinity[i * b + i] = 1.0;
        for j in i + 1..b {
            let mut dist = 0.0;
            for k in 0..d {
                let diff = data[i * d + k] - data[j * d + k];
                dist += diff * diff;
            }
            let w = (-dist / 2.0).exp();
            affinity[i * b + j] = w;
            affinity[j * b + i] = w;
        }
    }
    let degrees: Vec<f64> = (0..b)
        .map(|i| affinity[i * b..(i + 1) * b].iter().sum())
        .collect();
    let mut q = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            q[i * b + j] = match norm {
                GraphNorm::PaperLiteral => {
                    degrees[i].sqrt() * affinity[i * b + j] / degrees[j].sqrt()
                }
                GraphNorm::Symmetric => {
                    affinity[i * b + j] / (degrees[i].sqrt() * degrees[j].sqrt())
                }
            };
        }
    }
    Ok(GraphOperator {
        q: Tensor::from_parts(vec![b, b], q),
        affinity: Tensor::from_parts(vec![b, b], affinity),
        degrees,
    })
}

/// Relative drop of graph-propagated embeddings:
/// ω = (Q·F − Q_a·F_a) ⁄ guard(Q·F), elementwise. Denominator entries with
/// |den| < ε are replaced by ε·sign(den); sign(0) counts as +.
pub fn slope_metric(
    q: &GraphOperator,
    features: &Tensor,
    q_ablated: &GraphOperator,
    features_ablated: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let propagate = |op: &GraphOperator, f: &Tensor| -> Result<Tensor> {
        let mut graph = Graph::new();
        let qn = graph.constant(op.q.clone());
        let fn_ = graph.constant(f.clone());
        let product = graph.matmul(qn, fn_)?;
        Ok(graph.value(product).clone())
    };
    let original = propagate(q, features)?;
    let ablated = propagate(q_ablated, features_ablated)?;
    if original.shape() != ablated.shape() {
        return Err(GsdmError::Shape {
            context: "slope_metric",
            expected: format!("{:?}", original.shape()),
            got: ablated.shape().to_vec(),
        });
    }
    let data = original
        .data()
        .iter()
        .zip(ablated.data())
        .map(|(&num_side, &ab)| {
            let numerator = num_side - ab;
            let denominator = if num_side.abs() < epsilon {
                epsilon * if num_side < 0.0 { -1.0 } else { 1.0 }
            } else {
                num_side
            };
            numerator / denominator
        })
        .collect();
    Ok(Tensor::from_parts(original.shape().to_vec(), data))
}

/// Per-sample scalar weights: the mean over the semantic dimensions of ω.
/// The ablation is whole-input, so there is no per-channel signal to spread;
/// this single reduction is the one place to change if that ever differs.
pub fn omega_weights(omega: &Tensor) -> Result<Vec<f64>> {
    let shape = omega.shape();
    if shape.len() != 2 {
        return Err(GsdmError::Shape {
            context: "omega_weights",
            expected: "b×d".into(),
            got: shape.to_vec(),
        });
    }
    let (b, d) = (shape[0], shape[1]);
    Ok((0..b)
        .map(|r| omega.data()[r * d..(r + 1) * d].iter().sum::<f64>() / d as f64)
        .collect())
}

/// In-graph saliency: ReLU(w_b · Σ_channels A), shape `b×h×w`. ω enters as
/// forward values only.
pub fn saliency_node(graph: &mut Graph, omega: &Tensor, activations: NodeId) -> Result<NodeId> {
    let shape = graph.shape(activations).to_vec();
    if shape.len() != 4 {
        return Err(GsdmError::Shape {
            context: "saliency_node",
            expected: "b×p×h×w".into(),
            got: shape,
        });
    }
    let b = shape[0];
    let weights = omega_weights(omega)?;
    if weights.len() != b {
        return Err(GsdmError::Shape {
            context: "saliency_node",
            expected: format!("ω with batch {b}"),
            got: omega.shape().to_vec(),
        });
    }
    let channel_sum = graph.reduce_sum(activations, &[1], false)?;
    let w = graph.constant(Tensor::from_parts(vec![b, 1, 1], weights));
    let weighted = graph.mul(w, channel_sum)?;
    Ok(graph.relu(weighted)?)
}

/// Plain-value saliency maps for one layer: `b×p×h×w` → `b×h×w`.
pub fn saliency_map(omega: &Tensor, activations: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let a = graph.constant(activations.clone());
    let node = saliency_node(&mut graph, omega, a)?;
    Ok(graph.value(node).clone())
}

/// Bilinear interpolation operator `(oh·ow)×(ih·iw)` with corners aligned,
/// for resizing flattened maps by one matrix product.
fn resize_operator(ih: usize, iw: usize, oh: usize, ow: usize) -> Tensor {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
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
    };
    let rows = axis(ih, oh);
    let cols = axis(iw, ow);
    let mut op = vec![0.0; oh * ow * ih * iw];
    for (r, &(r0, r1, rf)) in rows.iter().enumerate() {
        for (c, &(c0, c1, cf)) in cols.iter().enumerate() {
            let out_index = (r * ow + c) * ih * iw;
            op[out_index + r0 * iw + c0] += (1.0 - rf) * (1.0 - cf);
            op[out_index + r0 * iw + c1] += (1.0 - rf) * cf;
            op[out_index + r1 * iw + c0] += rf * (1.0 - cf);
            op[out_index + r1 * iw + c1] += rf * cf;
        }
    }
    Tensor::from_parts(vec![oh * ow, ih * iw], op)
}

/// Flatten a `b×h×w` map node to `b×(h'w')`, resizing to the target size
/// when it differs.
fn flatten_resized(
    graph: &mut Graph,
    maps: NodeId,
    target_h: usize,
    target_w: usize,
) -> Result<NodeId> {
    let shape = graph.shape(maps).to_vec();
    let (b, h, w) = (shape[0], shape[1], shape[2]);
    let flat = graph.reshape(maps, &[b, h * w])?;
    if (h, w) == (target_h, target_w) {
        return Ok(flat);
    }
    let op = graph.constant(resize_operator(h, w, target_h, target_w));
    Ok(graph.matmul_t(flat, op, false, true)?)
}

/// Build the distillation loss node over per-layer saliency maps.
///
/// For every teacher and every (teacher layer, student layer) pair, both maps
/// are resized to the smaller spatial side of the pair, flattened per sample,
/// L2-normalized, and compared with a squared distance; per-sample distances
/// average over the batch, and the total averages over teachers × pairs.
/// Maps with vanishing norm stay zero vectors, so such a pair contributes the
/// other side's unit norm.
pub fn gsdm_loss_node(
    graph: &mut Graph,
    teacher_maps: &[BTreeMap<String, Tensor>],
    student_maps: &BTreeMap<String, NodeId>,
    pairing: &[(String, String)],
) -> Result<NodeId> {
    if pairing.is_empty() {
        return Err(GsdmError::EmptyPairing);
    }
    if teacher_maps.is_empty() {
        return Err(GsdmError::MissingLayer {
            side: "teacher",
            layer: "(no teachers)".into(),
        });
    }
    let mut total: Option<NodeId> = None;
    for per_teacher in teacher_maps {
        for (teacher_layer, student_layer) in pairing {
            let t_map = per_teacher
                .get(teacher_layer)
                .ok_or_else(|| GsdmError::MissingLayer {
                    side: "teacher",
                    layer: teacher_layer.clone(),
                })?;
            let &s_node = student_maps
                .get(student_layer)
                .ok_or_else(|| GsdmError::MissingLayer {
                    side: "student",
                    layer: student_layer.clone(),
                })?;
            let t_shape = t_map.shape().to_vec();
            let s_shape = graph.shape(s_node).to_vec();
            if t_shape.len() != 3 || s_shape.len() != 3 || t_shape[0] != s_shape[0] {
                return Err(GsdmError::Shape {
                    context: "gsdm_loss",
                    expected: format!("paired b×h×w maps, teacher {t_shape:?}"),
                    got: s_shape,
                });
            }
            let target_h = t_shape[1].min(s_shape[1]);
            let target_w = t_shape[2].min(s_shape[2]);
            let t_node = graph.constant(t_map.clone());
            let t_flat = flatten_resized(graph, t_node, target_h, target_w)?;
            let s_flat = flatten_resized(graph, s_node, target_h, target_w)?;
            let t_unit = graph.row_l2_normalize(t_flat)?;
            let s_unit = graph.row_l2_normalize(s_flat)?;
            let diff = graph.sub(t_unit, s_unit)?;
            let squared = graph.square(diff)?;
            let per_sample = graph.reduce_sum(squared, &[1], false)?;
            let batch_mean = graph.mean_all(per_sample)?;
            total = Some(match total {
                Some(t) => graph.add(t, batch_mean)?,
                None => batch_mean,
            });
        }
    }
    let total = total.expect("pairing nonempty");
    let denom = (teacher_maps.len() * pairing.len()) as f64;
    Ok(graph.scale(total, 1.0 / denom)?)
}

/// Plain-value distillation loss over saliency maps.
pub fn gsdm_loss(
    teacher_maps: &[BTreeMap<String, Tensor>],
    student_maps: &BTreeMap<String, Tensor>,
    pairing: &[(String, String)],
) -> Result<f64> {
    let mut graph = Graph::new();
    let student_nodes: BTreeMap<String, NodeId> = student_maps
        .iter()
        .map(|(layer, map)| (layer.clone(), graph.constant(map.clone())))
        .collect();
    let loss = gsdm_loss_node(&mut graph, teacher_maps, &student_nodes, pairing)?;
    Ok(graph.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::pseudo_embed;
    use crate::tensor::gradcheck::finite_diff_check;
    use crate::tensor::init::seeded_uniform;

    fn maps_of(layer: &str, t: Tensor) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(layer.to_string(), t)])
    }

    fn pair(a: &str, b: &str) -> Vec<(String, String)> {
        vec![(a.to_string(), b.to_string())]
    }

    #[test]
    fn ablation_batch_appends_zeros() {
        let batch = Tensor::new(vec![2, 1, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let doubled = build_ablation_batch(&batch).unwrap();
        assert_eq!(doubled.shape(), &[4, 1, 2, 2]);
        assert_eq!(&doubled.data()[..8], batch.data());
        assert!(doubled.data()[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ablation_batch_of_zeros_stays_zero() {
        let batch = Tensor::zeros(&[3, 2]);
        let doubled = build_ablation_batch(&batch).unwrap();
        assert_eq!(doubled.shape(), &[6, 2]);
        assert!(doubled.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ablation_batch_requires_two_samples() {
        let batch = Tensor::zeros(&[1, 4]);
        assert!(matches!(
            build_ablation_batch(&batch),
            Err(GsdmError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn embed_predictions_one_hot_and_ties() {
        let names: Vec<String> = ["jump", "sit", "wave", "clap"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let table = pseudo_embed(&names, 8, 3).unwrap();
        let logits = Tensor::new(
            vec![3, 4],
            vec![
                0.0, 0.0, 5.0, 0.0, // argmax 2 -> wave
                1.0, 0.5, 0.2, 1.0, // tie between 0 and 3 -> 0 (jump)
                1.0, 0.5, 0.2, 1.0, // identical row -> identical embedding
            ],
        )
        .unwrap();
        let embedded = embed_predictions(&logits, &names, &table).unwrap();
        assert_eq!(&embedded.data()[0..8], table.get("wave").unwrap());
        assert_eq!(&embedded.data()[8..16], table.get("jump").unwrap());
        assert_eq!(&embedded.data()[8..16], &embedded.data()[16..24]);
    }

    #[test]
    fn graph_of_identical_features_is_uniform() {
        let features = Tensor::new(vec![2, 3], vec![0.5, 1.0, -0.25, 0.5, 1.0, -0.25]).unwrap();
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        assert!(op.affinity.data().iter().all(|&v| v == 1.0));
        assert_eq!(op.degrees, vec![2.0, 2.0]);
        assert!(op.q.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn gaussian_kernel_value_at_distance_sqrt2() {
        // ‖f₁−f₂‖² = 2 ⇒ W[0,1] = e^{−1}.
        let features = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        assert!((op.affinity.at(&[0, 1]) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn q_entries_match_elementwise_oracle() {
        let features = seeded_uniform(&[5, 3], -1.0, 1.0, 17);
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected =
                    (op.degrees[i] / op.degrees[j]).sqrt() * op.affinity.at(&[i, j]);
                assert!((op.q.at(&[i, j]) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_symmetric_but_paper_q_is_not() {
        let features = seeded_uniform(&[4, 3], -1.0, 1.0, 19);
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        let mut asymmetric = false;
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(
                    op.affinity.at(&[i, j]).to_bits(),
                    op.affinity.at(&[j, i]).to_bits()
                );
                if (op.q.at(&[i, j]) - op.q.at(&[j, i])).abs() > 1e-9 {
                    asymmetric = true;
                }
            }
        }
        assert!(asymmetric, "paper-literal Q should be asymmetric for non-uniform degrees");

        let sym = graph_normalize(&features, GraphNorm::Symmetric).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((sym.q.at(&[i, j]) - sym.q.at(&[j, i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slope_metric_zero_when_halves_match() {
        let features = seeded_uniform(&[3, 4], -1.0, 1.0, 23);
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        let omega = slope_metric(&op, &features, &op, &features, 1e-8).unwrap();
        assert!(omega.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slope_metric_one_when_ablated_side_vanishes() {
        let features = seeded_uniform(&[3, 4], 0.5, 1.5, 29);
        let op = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
        let zeros = Tensor::zeros(&[3, 4]);
        let op_a = graph_normalize(&seeded_uniform(&[3, 4], -1.0, 1.0, 31), GraphNorm::PaperLiteral)
            .unwrap();
        let omega = slope_metric(&op, &features, &op_a, &zeros, 1e-8).unwrap();
        assert!(omega.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn slope_metric_guard_handles_zero_denominator() {
        // Q·F = 0 with Q_a·F_a = −1 ⇒ numerator 1, denominator ε ⇒ ω = 1e8.
        let op_zero = GraphOperator {
            q: Tensor::zeros(&[2, 2]),
            affinity: Tensor::ones(&[2, 2]),
            degrees: vec![2.0, 2.0],
        };
        let identity = GraphOperator {
            q: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            affinity: Tensor::ones(&[2, 2]),
            degrees: vec![2.0, 2.0],
        };
        let features = Tensor::ones(&[2, 3]);
        let negated = Tensor::filled(&[2, 3], -1.0);
        let omega = slope_metric(&op_zero, &features, &identity, &negated, 1e-8).unwrap();
        assert!(omega.data().iter().all(|&v| (v - 1e8).abs() < 1e-4));
    }

    #[test]
    fn saliency_zero_omega_gives_zero_maps() {
        let omega = Tensor::zeros(&[2, 5]);
        let acts = seeded_uniform(&[2, 3, 4, 4], -1.0, 1.0, 37);
        let maps = saliency_map(&omega, &acts).unwrap();
        assert_eq!(maps.shape(), &[2, 4, 4]);
        assert!(maps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_relu_gates_sign() {
        let negative = Tensor::filled(&[1, 2, 2, 2], -1.0);
        let positive = Tensor::filled(&[1, 2, 2, 2], 1.0);
        let plus = Tensor::ones(&[1, 3]);
        let minus = Tensor::filled(&[1, 3], -1.0);
        // Positive weight, negative channel sum → zero.
        assert!(saliency_map(&plus, &negative)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        // Negative weight, positive channel sum → zero.
        assert!(saliency_map(&minus, &positive)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        // Positive weight, positive channel sum → the channel sum.
        let maps = saliency_map(&plus, &positive).unwrap();
        assert!(maps.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn saliency_maps_are_nonnegative() {
        let omega = seeded_uniform(&[3, 5], -2.0, 2.0, 41);
        let acts = seeded_uniform(&[3, 4, 3, 3], -1.0, 1.0, 43);
        let maps = saliency_map(&omega, &acts).unwrap();
        assert!(maps.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn loss_zero_for_identical_maps() {
        let maps = seeded_uniform(&[2, 3, 3], 0.0, 1.0, 47);
        let teacher = vec![maps_of("t1", maps.clone())];
        let student = maps_of("s1", maps);
        let loss = gsdm_loss(&teacher, &student, &pair("t1", "s1")).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_two_for_orthogonal_unit_maps() {
        // Disjoint-support maps normalize to orthonormal vectors: ‖u−v‖² = 2.
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = Tensor::new(vec![1, 2, 2], vec![0.0, 3.0, 0.0, 0.0]).unwrap();
        let loss = gsdm_loss(&[maps_of("t1", t)], &maps_of("s1", s), &pair("t1", "s1")).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_invariant_under_positive_scaling() {
        let t = seeded_uniform(&[2, 4, 4], 0.0, 1.0, 53);
        let s = seeded_uniform(&[2, 4, 4], 0.0, 1.0, 59);
        let base = gsdm_loss(
            &[maps_of("t1", t.clone())],
            &maps_of("s1", s.clone()),
            &pair("t1", "s1"),
        )
        .unwrap();
        let doubled = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|v| v * 2.0).collect(),
        );
        let scaled = gsdm_loss(&[maps_of("t1", doubled)], &maps_of("s1", s), &pair("t1", "s1"))
            .unwrap();
        assert!((base - scaled).abs() <= 1e-12);
    }

    #[test]
    fn zero_norm_map_contributes_other_sides_unit_norm() {
        let t = Tensor::zeros(&[1, 2, 2]);
        let s = Tensor::new(vec![1, 2, 2], vec![0.0, 5.0, 0.0, 0.0]).unwrap();
        let loss = gsdm_loss(&[maps_of("t1", t)], &maps_of("s1", s), &pair("t1", "s1")).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_averages_over_teachers_and_pairs() {
        let zero = Tensor::zeros(&[1, 2, 2]);
        let unit = Tensor::new(vec![1, 2, 2], vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        // Teacher 1 matches the student exactly; teacher 2's map is zero.
        let teachers = vec![maps_of("t1", unit.clone()), maps_of("t1", zero)];
        let student = maps_of("s1", unit);
        let loss = gsdm_loss(&teachers, &student, &pair("t1", "s1")).unwrap();
        // (0 + 1) / 2 teachers.
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_sizes_resize_to_smaller_side() {
        // A constant 4×4 teacher map downsamples to a constant 2×2, matching
        // the student exactly: loss 0.
        let t = Tensor::filled(&[1, 4, 4], 0.7);
        let s = Tensor::filled(&[1, 2, 2], 0.3);
        let loss = gsdm_loss(&[maps_of("t1", t)], &maps_of("s1", s), &pair("t1", "s1")).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn empty_pairing_rejected() {
        let maps = maps_of("t1", Tensor::zeros(&[1, 2, 2]));
        assert!(matches!(
            gsdm_loss(&[maps.clone()], &maps, &[]),
            Err(GsdmError::EmptyPairing)
        ));
    }

    #[test]
    fn permutation_equivariance_of_omega_and_maps() {
        let b = 4;
        let d = 5;
        let features = seeded_uniform(&[b, d], -1.0, 1.0, 61);
        let features_ablated = seeded_uniform(&[b, d], -1.0, 1.0, 67);
        let acts = seeded_uniform(&[b, 3, 2, 2], -1.0, 1.0, 71);

        let omega = {
            let q = graph_normalize(&features, GraphNorm::PaperLiteral).unwrap();
            let qa = graph_normalize(&features_ablated, GraphNorm::PaperLiteral).unwrap();
            slope_metric(&q, &features, &qa, &features_ablated, 1e-8).unwrap()
        };
        let maps = saliency_map(&omega, &acts).unwrap();

        let perm = [3usize, 1, 0, 2];
        let permute = |t: &Tensor| {
            let row = t.len() / b;
            let mut data = vec![0.0; t.len()];
            for (dst, &src) in perm.iter().enumerate() {
                data[dst * row..(dst + 1) * row]
                    .copy_from_slice(&t.data()[src * row..(src + 1) * row]);
            }
            Tensor::from_parts(t.shape().to_vec(), data)
        };

        let omega_p = {
            let fp = permute(&features);
            let fap = permute(&features_ablated);
            let q = graph_normalize(&fp, GraphNorm::PaperLiteral).unwrap();
            let qa = graph_normalize(&fap, GraphNorm::PaperLiteral).unwrap();
            slope_metric(&q, &fp, &qa, &fap, 1e-8).unwrap()
        };
        let maps_p = saliency_map(&omega_p, &permute(&acts)).unwrap();

        assert!(permute(&omega).max_abs_diff(&omega_p) < 1e-12);
        assert!(permute(&maps).max_abs_diff(&maps_p) < 1e-12);
    }

    #[test]
    fn loss_gradient_wrt_student_activations_passes_fd_check() {
        let b = 2;
        let omega = seeded_uniform(&[b, 4], -1.0, 1.0, 73);
        let teacher = vec![maps_of("t1", seeded_uniform(&[b, 3, 3], 0.0, 1.0, 79))];
        let pairing = pair("t1", "s1");
        let acts = seeded_uniform(&[b, 3, 3, 3], -1.0, 1.0, 83).requires_grad(true);

        let report = finite_diff_check(
            |g, ids| {
                let maps = saliency_node(g, &omega, ids[0]).map_err(|e| match e {
                    GsdmError::Tensor(t) => t,
                    other => panic!("unexpected error {other:?}"),
                })?;
                let student = BTreeMap::from([("s1".to_string(), maps)]);
                gsdm_loss_node(g, &teacher, &student, &pairing).map_err(|e| match e {
                    GsdmError::Tensor(t) => t,
                    other => panic!("unexpected error {other:?}"),
                })
            },
            &[("acts", acts)],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }
}
