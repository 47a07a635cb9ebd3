//! Teacher and student loss assembly.
//!
//! Cross-entropy and the semantic-preserving MSE serve both networks; the
//! student adds the temperature-softened KL term and the saliency-map
//! distillation term, combined as `ce + α·st + β·gsdm + γ·sp`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::softmax_rows;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {context}: {a:?} vs {b:?}")]
    ShapeMismatch {
        context: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("at least one teacher required")]
    NoTeachers,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("loss weights must be nonnegative and temperature positive")]
    BadWeights,
    #[error("non-finite loss component {0}")]
    NonFiniteComponent(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Student loss weighting: `ce + alpha·st + beta·gsdm + gamma·sp`, with the
/// softening temperature for the soft-target term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, temperature: f64) -> Result<Self> {
        let weights = Self {
            alpha,
            beta,
            gamma,
            temperature,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0
            || self.beta < 0.0
            || self.gamma < 0.0
            || !(self.temperature > 0.0)
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
            || !self.gamma.is_finite()
            || !self.temperature.is_finite()
        {
            return Err(LossError::BadWeights);
        }
        Ok(())
    }

    /// Cross-entropy only; the distillation ablation baseline.
    pub fn ce_only(temperature: f64) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            temperature,
        }
    }
}

impl Default for LossWeights {
    /// α=0.1, β=1, γ=1, T=4.
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
            gamma: 1.0,
            temperature: 4.0,
        }
    }
}

/// Decomposed loss values for one training step, one JSON object per line in
/// the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub ce: f64,
    #[serde(rename = "st")]
    pub soft_target: f64,
    pub gsdm: f64,
    #[serde(rename = "sp")]
    pub semantic_preserve: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
    /// Whether the soft-target term carries the T² gradient-parity factor.
    pub t2_scaled: bool,
}

impl LossReport {
    /// The weighted sum the total must reproduce (within 1e−12).
    pub fn recomputed_total(&self) -> f64 {
        self.ce
            + self.alpha * self.soft_target
            + self.beta * self.gsdm
            + self.gamma * self.semantic_preserve
    }

    pub fn is_consistent(&self) -> bool {
        (self.total - self.recomputed_total()).abs() <= 1e-12
    }
}

// ── Cross-entropy ───────────────────────────────────────────────────

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(LossError::BadLabel {
                label,
                classes,
            });
        }
        data[row * classes + label] = 1.0;
    }
    Ok(Tensor::from_parts(vec![labels.len(), classes], data))
}

/// Mean over the batch of −log softmax probability of the true class.
pub fn cross_entropy_node(graph: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let shape = graph.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(LossError::ShapeMismatch {
            context: "cross_entropy",
            a: shape,
            b: vec![labels.len()],
        });
    }
    let targets = graph.constant(one_hot(labels, shape[1])?);
    let log_probs = graph.log_softmax(logits, 1.0)?;
    let picked = graph.mul(targets, log_probs)?;
    let per_sample = graph.reduce_sum(picked, &[1], false)?;
    let mean = graph.mean_all(per_sample)?;
    Ok(graph.scale(mean, -1.0)?)
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut graph = Graph::new();
    let node = graph.constant(logits.clone());
    let loss = cross_entropy_node(&mut graph, node, labels)?;
    Ok(graph.value(loss).item())
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let mut hits = 0;
    for (row, &label) in labels.iter().enumerate() {
        let data = &logits.data()[row * c..(row + 1) * c];
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / b as f64
}

// ── Semantic preserving ─────────────────────────────────────────────

/// Mean over the batch of the squared L2 distance between feature rows and
/// target rows.
pub fn semantic_preserving_node(
    graph: &mut Graph,
    features: NodeId,
    targets: NodeId,
) -> Result<NodeId> {
    let fs = graph.shape(features).to_vec();
    let ts = graph.shape(targets).to_vec();
    if fs != ts || fs.len() != 2 {
        return Err(LossError::ShapeMismatch {
            context: "semantic_preserving",
            a: fs,
            b: ts,
        });
    }
    let diff = graph.sub(features, targets)?;
    let squared = graph.square(diff)?;
    let per_sample = graph.reduce_sum(squared, &[1], false)?;
    Ok(graph.mean_all(per_sample)?)
}

pub fn semantic_preserving(features: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut graph = Graph::new();
    let f = graph.constant(features.clone());
    let t = graph.constant(targets.clone());
    let loss = semantic_preserving_node(&mut graph, f, t)?;
    Ok(graph.value(loss).item())
}

/// Multi-teacher form: the mean over teachers of the per-teacher loss.
pub fn semantic_preserving_multi(features: &Tensor, targets: &[Tensor]) -> Result<f64> {
    if targets.is_empty() {
        return Err(LossError::NoTeachers);
    }
    let mut total = 0.0;
    for target in targets {
        total += semantic_preserving(features, target)?;
    }
    Ok(total / targets.len() as f64)
}

// ── Soft targets ────────────────────────────────────────────────────

/// Mean over teachers of KL(softmax(teacher/T) ‖ softmax(student/T)),
/// averaged over the batch. `t2_scaled` multiplies by T², restoring gradient
/// magnitude parity across temperatures.
pub fn soft_target_kl_node(
    graph: &mut Graph,
    teacher_logits: &[Tensor],
    student_logits: NodeId,
    temperature: f64,
    t2_scaled: bool,
) -> Result<NodeId> {
    if teacher_logits.is_empty() {
        return Err(LossError::NoTeachers);
    }
    let student_shape = graph.shape(student_logits).to_vec();
    let student_log = graph.log_softmax(student_logits, temperature)?;
    let mut total: Option<NodeId> = None;
    for teacher in teacher_logits {
        if teacher.shape() != student_shape.as_slice() {
            return Err(LossError::ShapeMismatch {
                context: "soft_target_kl",
                a: teacher.shape().to_vec(),
                b: student_shape,
            });
        }
        let (b, c) = (teacher.shape()[0], teacher.shape()[1]);
        let probs = softmax_rows(teacher.data(), b, c, temperature, false);
        let log_probs = softmax_rows(teacher.data(), b, c, temperature, true);
        let p = graph.constant(Tensor::from_parts(vec![b, c], probs));
        let lp = graph.constant(Tensor::from_parts(vec![b, c], log_probs));
        let diff = graph.sub(lp, student_log)?;
        let weighted = graph.mul(p, diff)?;
        let per_sample = graph.reduce_sum(weighted, &[1], false)?;
        let mean = graph.mean_all(per_sample)?;
        total = Some(match total {
            Some(t) => graph.add(t, mean)?,
            None => mean,
        });
    }
    let mut loss = graph.scale(total.expect("nonempty"), 1.0 / teacher_logits.len() as f64)?;
    if t2_scaled {
        loss = graph.scale(loss, temperature * temperature)?;
    }
    Ok(loss)
}

pub fn soft_target_kl(
    teacher_logits: &[Tensor],
    student_logits: &Tensor,
    temperature: f64,
    t2_scaled: bool,
) -> Result<f64> {
    let mut graph = Graph::new();
    let student = graph.constant(student_logits.clone());
    let loss = soft_target_kl_node(&mut graph, teacher_logits, student, temperature, t2_scaled)?;
    Ok(graph.value(loss).item())
}

// ── Totals ──────────────────────────────────────────────────────────

/// Teacher objective: (1/m)·ΣCEₖ + sp.
pub fn teacher_total(ce_per_teacher: &[f64], semantic_preserve: f64) -> Result<f64> {
    if ce_per_teacher.is_empty() {
        return Err(LossError::NoTeachers);
    }
    let mean_ce = ce_per_teacher.iter().sum::<f64>() / ce_per_teacher.len() as f64;
    Ok(mean_ce + semantic_preserve)
}

/// Student objective with its decomposed report.
pub fn student_total(
    ce: f64,
    soft_target: f64,
    gsdm: f64,
    semantic_preserve: f64,
    weights: &LossWeights,
    step: usize,
    t2_scaled: bool,
) -> Result<(f64, LossReport)> {
    weights.validate()?;
    for (name, value) in [
        ("ce", ce),
        ("st", soft_target),
        ("gsdm", gsdm),
        ("sp", semantic_preserve),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFiniteComponent(name));
        }
    }
    let total =
        ce + weights.alpha * soft_target + weights.beta * gsdm + weights.gamma * semantic_preserve;
    let report = LossReport {
        step,
        ce,
        soft_target,
        gsdm,
        semantic_preserve,
        total,
        alpha: weights.alpha,
        beta: weights.beta,
        gamma: weights.gamma,
        temperature: weights.temperature,
        t2_scaled,
    };
    Ok((total, report))
}

/// In-graph weighted combination of the four component nodes.
pub fn student_total_node(
    graph: &mut Graph,
    ce: NodeId,
    soft_target: NodeId,
    gsdm: NodeId,
    semantic_preserve: NodeId,
    weights: &LossWeights,
) -> Result<NodeId> {
    weights.validate()?;
    let st = graph.scale(soft_target, weights.alpha)?;
    let gs = graph.scale(gsdm, weights.beta)?;
    let sp = graph.scale(semantic_preserve, weights.gamma)?;
    let a = graph.add(ce, st)?;
    let b = graph.add(a, gs)?;
    Ok(graph.add(b, sp)?)
}
