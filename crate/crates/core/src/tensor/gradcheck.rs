//! Central-difference gradient verification.
//!
//! The checker treats the reverse sweep and the finite-difference estimate as
//! two independent routes to the same derivative and reports the worst
//! relative error per input. It is used both by unit tests and by the `verify`
//! command.

use super::{Graph, NodeId, Result, Tensor, TensorError};

/// Relative error convention used everywhere: |a−b| / max(|a|, |b|, 1e−8).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-8)
}

/// Worst relative error observed for one input tensor.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub inputs: Vec<InputReport>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }
}

/// Compare reverse-mode gradients of a scalar-valued program against central
/// differences for every requires-grad input.
///
/// The program is re-run from scratch for each perturbed evaluation, so it
/// must be a pure function of its inputs.
pub fn finite_diff_check<F>(
    program: F,
    inputs: &[(&str, Tensor)],
    epsilon: f64,
    tolerance: f64,
) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");

    let eval = |tensors: &[Tensor]| -> Result<(f64, Option<(Graph, Vec<NodeId>, NodeId)>)> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .zip(tensors)
            .map(|((name, _), tensor)| graph.input(name, tensor.clone()))
            .collect();
        let out = program(&mut graph, &ids)?;
        if !graph.value(out).is_scalar() {
            return Err(TensorError::NonScalarOutput(graph.shape(out).to_vec()));
        }
        let value = graph.value(out).item();
        Ok((value, Some((graph, ids, out))))
    };

    let base: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (_, ctx) = eval(&base)?;
    let (mut graph, ids, out) = ctx.expect("base evaluation keeps its graph");
    let grads = graph.backward_scalar(out)?;

    let mut reports = Vec::new();
    for (which, (name, tensor)) in inputs.iter().enumerate() {
        if !tensor.wants_grad() {
            continue;
        }
        let analytic = grads
            .get(ids[which])
            .expect("requires-grad input has a gradient");
        let mut worst = InputReport {
            name: name.to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for flat in 0..tensor.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            let mut pd = plus[which].data().to_vec();
            let mut md = minus[which].data().to_vec();
            pd[flat] += epsilon;
            md[flat] -= epsilon;
            plus[which] = Tensor::from_parts(tensor.shape().to_vec(), pd);
            minus[which] = Tensor::from_parts(tensor.shape().to_vec(), md);
            let (fp, _) = eval(&plus).map_err(|e| match e {
                TensorError::NonFinite { .. } => TensorError::NonFinitePerturbation,
                other => other,
            })?;
            let (fm, _) = eval(&minus).map_err(|e| match e {
                TensorError::NonFinite { .. } => TensorError::NonFinitePerturbation,
                other => other,
            })?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(TensorError::NonFinitePerturbation);
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic.data()[flat];
            let e = rel_err(a, numeric);
            if e > worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_index = flat;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        reports.push(worst);
    }
    Ok(FdReport {
        inputs: reports,
        epsilon,
        tolerance,
    })
}
