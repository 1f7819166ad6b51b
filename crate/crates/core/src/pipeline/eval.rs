//! Whole-domain reference interpreter; the semantic ground truth that
//! generated kernels must reproduce bit-exactly.
//!
//! Stages evaluate in topological order, one full domain at a time, row-major
//! with dimension 0 innermost. Out-of-domain producer and image reads clamp to
//! the nearest valid coordinate. Arithmetic is f32 (ints promote on demand)
//! with the expression tree's own left-to-right order, so any evaluator that
//! walks the same tree with the same scalar rules agrees to the bit.

use std::collections::HashMap;

use super::{
    apply_bin, apply_un, topo_order, Buffer, PipelineGraph, StencilExpr, Value, ValueError,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("missing input image `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has shape {got:?}, expected {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error("input `{name}` has kind {got}, expected {want}")]
    KindMismatch { name: String, got: &'static str, want: &'static str },
    #[error("stage `{stage}` at {coords:?}: {source}")]
    Arithmetic { stage: String, coords: Vec<i64>, source: ValueError },
}

/// Per-run instrumentation.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct EvalStats {
    /// Points evaluated, summed over all stages.
    pub points_computed: u64,
}

/// Evaluate every stage and return buffers for the liveouts.
pub fn reference_eval(
    g: &PipelineGraph,
    inputs: &HashMap<String, Buffer>,
) -> Result<HashMap<String, Buffer>, EvalError> {
    reference_eval_with_stats(g, inputs).map(|(out, _)| out)
}

/// Like [`reference_eval`] but also reports how many points were computed.
pub fn reference_eval_with_stats(
    g: &PipelineGraph,
    inputs: &HashMap<String, Buffer>,
) -> Result<(HashMap<String, Buffer>, EvalStats), EvalError> {
    for img in &g.images {
        let buf = inputs
            .get(&img.name)
            .ok_or_else(|| EvalError::MissingInput(img.name.clone()))?;
        if buf.dims != img.dims {
            return Err(EvalError::ShapeMismatch {
                name: img.name.clone(),
                got: buf.dims.clone(),
                want: img.dims.clone(),
            });
        }
        if buf.kind() != img.kind {
            return Err(EvalError::KindMismatch {
                name: img.name.clone(),
                got: buf.kind().name(),
                want: img.kind.name(),
            });
        }
    }

    let mut computed: HashMap<String, Buffer> = HashMap::new();
    let mut stats = EvalStats::default();
    for name in topo_order(g) {
        let stage = g.stage(&name).unwrap();
        let extents = stage.extents();
        let mut buf = Buffer::zeros(stage.kind, &extents);
        let ndim = stage.ndim();
        let mut coords: Vec<i64> = stage.domain.iter().map(|&(lo, _)| lo).collect();
        'points: loop {
            let v = eval_expr(&stage.expr, &coords, g, inputs, &computed).map_err(|e| {
                EvalError::Arithmetic { stage: name.clone(), coords: coords.clone(), source: e }
            })?;
            let rel: Vec<i64> =
                coords.iter().zip(&stage.domain).map(|(&c, &(lo, _))| c - lo).collect();
            let linear = buf.linear(&rel);
            buf.set(linear, v);
            stats.points_computed += 1;
            // Advance row-major, dimension 0 fastest.
            for d in 0..ndim {
                coords[d] += 1;
                if coords[d] <= stage.domain[d].1 {
                    continue 'points;
                }
                coords[d] = stage.domain[d].0;
            }
            break;
        }
        computed.insert(name, buf);
    }

    let out = g
        .liveouts
        .iter()
        .map(|name| (name.clone(), computed.get(name).unwrap().clone()))
        .collect();
    Ok((out, stats))
}

fn eval_expr(
    e: &StencilExpr,
    coords: &[i64],
    g: &PipelineGraph,
    inputs: &HashMap<String, Buffer>,
    computed: &HashMap<String, Buffer>,
) -> Result<Value, ValueError> {
    match e {
        StencilExpr::ConstF(v) => Ok(Value::F32(*v)),
        StencilExpr::ConstI(v) => Ok(Value::I32(*v as i32)),
        StencilExpr::ImageLoad { image, idx } => {
            let buf = &inputs[image.as_str()];
            let pos: Vec<i64> = idx
                .iter()
                .enumerate()
                .map(|(d, ix)| ix.apply(coords[d]).clamp(0, buf.dims[d] as i64 - 1))
                .collect();
            Ok(buf.get(buf.linear(&pos)))
        }
        StencilExpr::StageLoad { stage, idx } => {
            let prod = g.stage(stage).unwrap();
            let buf = &computed[stage.as_str()];
            let pos: Vec<i64> = idx
                .iter()
                .enumerate()
                .map(|(d, ix)| {
                    let (lo, hi) = prod.domain[d];
                    ix.apply(coords[d]).clamp(lo, hi) - lo
                })
                .collect();
            Ok(buf.get(buf.linear(&pos)))
        }
        StencilExpr::Bin(op, a, b) => {
            let va = eval_expr(a, coords, g, inputs, computed)?;
            let vb = eval_expr(b, coords, g, inputs, computed)?;
            apply_bin(*op, va, vb)
        }
        StencilExpr::Un(op, a) => {
            let va = eval_expr(a, coords, g, inputs, computed)?;
            Ok(apply_un(*op, va))
        }
    }
}
