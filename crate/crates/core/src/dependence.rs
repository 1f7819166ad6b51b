//! Dependence vectors and fusion-group overlap geometry.
//!
//! Two sign conventions coexist and are easy to mix up:
//!
//! - A [`DependenceVector`] stores `consumer coordinate - producer coordinate`
//!   per dimension (the time-stamp difference), so a consumer reading its
//!   producer at `y - 1` yields offset `+1`.
//! - Overlap geometry works with *read offsets* `b` (producer position
//!   relative to the consumer, the negation of the above). Read offsets
//!   accumulate into per-stage left/right tile extensions, and the group's
//!   right hyperplane `phi_r` is the largest accumulated right extension.
//!   Every read offset satisfies `b <= phi_r`, which is what makes the
//!   parallelogram split of hybrid tiling acyclic.

use std::collections::{BTreeMap, BTreeSet};

use crate::pipeline::{PipelineGraph, StencilExpr};

/// Constant offset between a consumer timestamp and a producer timestamp.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DependenceVector {
    pub producer: String,
    pub consumer: String,
    /// Per-dimension `consumer - producer` spatial offset.
    pub offset: Vec<i64>,
}

/// One dependence vector per distinct (producer, consumer, offset) triple,
/// in deterministic order.
pub fn compute_dependence_vectors(g: &PipelineGraph) -> Vec<DependenceVector> {
    let mut set = BTreeSet::new();
    for stage in &g.stages {
        stage.expr.for_each_load(&mut |load| {
            if let StencilExpr::StageLoad { stage: p, idx } = load {
                if idx.iter().all(|ix| ix.coef == 1) {
                    set.insert(DependenceVector {
                        producer: p.clone(),
                        consumer: stage.name.clone(),
                        offset: idx.iter().map(|ix| -ix.offset).collect(),
                    });
                }
            }
        });
    }
    set.into_iter().collect()
}

/// True iff every producer-consumer access internal to `group` is a
/// unit-coefficient constant-offset access. Scaled accesses (coefficient
/// other than 1) make a group untileable here and must stay unfused.
pub fn constant_dependences(g: &PipelineGraph, group: &[String]) -> bool {
    let members: BTreeSet<&str> = group.iter().map(String::as_str).collect();
    for name in group {
        let stage = match g.stage(name) {
            Some(s) => s,
            None => return false,
        };
        let mut ok = true;
        stage.expr.for_each_load(&mut |load| {
            if let StencilExpr::StageLoad { stage: p, idx } = load {
                if members.contains(p.as_str()) && idx.iter().any(|ix| ix.coef != 1) {
                    ok = false;
                }
            }
        });
        if !ok {
            return false;
        }
    }
    true
}

/// Per-stage tile extensions and the group's right hyperplanes.
///
/// For a warp tile covering core positions `[0, T_d*W_d)` of the group's
/// liveouts, stage `n` must compute positions
/// `[-left[n][d], T_d*W_d - 1 + right[n][d]]` in dimension `d`. The total
/// overlap is `O_d^n = left + right`, zero for pure liveouts and nonincreasing
/// toward the liveout. `phi_r[d] = max_n right[n][d]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupGeometry {
    /// Group members in topological order.
    pub group: Vec<String>,
    pub ndim: usize,
    pub left: BTreeMap<String, Vec<i64>>,
    pub right: BTreeMap<String, Vec<i64>>,
    /// Right hyperplane offset per dimension.
    pub phi_r: Vec<i64>,
}

impl GroupGeometry {
    /// Total overlap `O_d^n = left + right` for one stage.
    pub fn overlap(&self, stage: &str) -> Vec<i64> {
        self.left[stage]
            .iter()
            .zip(&self.right[stage])
            .map(|(l, r)| l + r)
            .collect()
    }

    /// Largest per-dimension overlap over all member stages.
    pub fn max_overlap(&self) -> Vec<i64> {
        let mut out = vec![0i64; self.ndim];
        for name in &self.group {
            for (d, o) in self.overlap(name).into_iter().enumerate() {
                out[d] = out[d].max(o);
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("non-constant dependence vectors in group")]
    NonConstant,
    #[error("`{0}` is not a stage of the pipeline")]
    UnknownStage(String),
    #[error("group is empty")]
    EmptyGroup,
    #[error("stage `{0}` in group is neither a group liveout nor consumed within the group")]
    DeadStage(String),
}

/// Per-dimension read-offset range of `consumer`'s accesses to `producer`:
/// `(min_b, max_b)` per dimension, or `None` if there is no access.
fn read_offset_ranges(
    g: &PipelineGraph,
    producer: &str,
    consumer: &str,
    ndim: usize,
) -> Option<(Vec<i64>, Vec<i64>)> {
    let stage = g.stage(consumer)?;
    let mut lo: Option<Vec<i64>> = None;
    let mut hi: Option<Vec<i64>> = None;
    stage.expr.for_each_load(&mut |load| {
        if let StencilExpr::StageLoad { stage: p, idx } = load {
            if p == producer {
                let offs: Vec<i64> = (0..ndim)
                    .map(|d| idx.get(d).map(|ix| ix.offset).unwrap_or(0))
                    .collect();
                match (&mut lo, &mut hi) {
                    (Some(l), Some(h)) => {
                        for d in 0..ndim {
                            l[d] = l[d].min(offs[d]);
                            h[d] = h[d].max(offs[d]);
                        }
                    }
                    _ => {
                        lo = Some(offs.clone());
                        hi = Some(offs);
                    }
                }
            }
        }
    });
    lo.zip(hi)
}

/// Backward accumulation of tile extensions from the group's liveouts.
pub fn group_geometry(
    g: &PipelineGraph,
    group: &[String],
    liveouts_of_group: &[String],
) -> Result<GroupGeometry, GeometryError> {
    if group.is_empty() {
        return Err(GeometryError::EmptyGroup);
    }
    if !constant_dependences(g, group) {
        return Err(GeometryError::NonConstant);
    }
    for name in group {
        if g.stage(name).is_none() {
            return Err(GeometryError::UnknownStage(name.clone()));
        }
    }
    // Topological order within the group = pipeline declaration order.
    let mut ordered: Vec<String> = g
        .stages
        .iter()
        .filter(|s| group.contains(&s.name))
        .map(|s| s.name.clone())
        .collect();
    let ndim = g.stage(&ordered[0]).map(|s| s.ndim()).unwrap_or(1);

    let mut left: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    let mut right: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for name in ordered.iter().rev() {
        let is_liveout = liveouts_of_group.contains(name);
        let mut l: Option<Vec<i64>> = if is_liveout { Some(vec![0; ndim]) } else { None };
        let mut r: Option<Vec<i64>> = if is_liveout { Some(vec![0; ndim]) } else { None };
        for consumer in ordered.iter() {
            if consumer == name {
                continue;
            }
            if let Some((min_b, max_b)) = read_offset_ranges(g, name, consumer, ndim) {
                let cl = &left[consumer];
                let cr = &right[consumer];
                // Per-side reach is an absolute extent and never negative.
                let cand_l: Vec<i64> = (0..ndim).map(|d| cl[d] + (-min_b[d]).max(0)).collect();
                let cand_r: Vec<i64> = (0..ndim).map(|d| cr[d] + max_b[d].max(0)).collect();
                l = Some(match l {
                    Some(prev) => (0..ndim).map(|d| prev[d].max(cand_l[d])).collect(),
                    None => cand_l,
                });
                r = Some(match r {
                    Some(prev) => (0..ndim).map(|d| prev[d].max(cand_r[d])).collect(),
                    None => cand_r,
                });
            }
        }
        match (l, r) {
            (Some(l), Some(r)) => {
                left.insert(name.clone(), l);
                right.insert(name.clone(), r);
            }
            _ => return Err(GeometryError::DeadStage(name.clone())),
        }
    }

    let mut phi_r = vec![0i64; ndim];
    for name in &ordered {
        for d in 0..ndim {
            phi_r[d] = phi_r[d].max(right[name][d]);
        }
    }
    ordered.shrink_to_fit();
    Ok(GroupGeometry { group: ordered, ndim, left, right, phi_r })
}

/// Redundant-computation fraction of one warp tile as an exact rational:
/// (points computed redundantly, volume of the group's overlapped warp tile).
pub fn overlap_fraction_rational(
    geom: &GroupGeometry,
    tile: &[usize],
    warp: &[usize],
) -> (u64, u64) {
    let ndim = geom.ndim;
    let core: u64 = (0..ndim).map(|d| (tile[d] * warp[d]) as u64).product();
    let mut redundant = 0u64;
    for name in &geom.group {
        let with_overlap: u64 = (0..ndim)
            .map(|d| (tile[d] * warp[d]) as i64 + geom.overlap(name)[d])
            .map(|v| v.max(0) as u64)
            .product();
        redundant += with_overlap.saturating_sub(core);
    }
    let max_o = geom.max_overlap();
    let denom: u64 = (0..ndim)
        .map(|d| ((tile[d] * warp[d]) as i64 + max_o[d]).max(1) as u64)
        .product();
    (redundant, denom)
}

/// `overlap_fraction_rational` as a ratio in `[0, 1)`.
pub fn overlap_fraction(geom: &GroupGeometry, tile: &[usize], warp: &[usize]) -> f64 {
    let (num, den) = overlap_fraction_rational(geom, tile, warp);
    num as f64 / den as f64
}

/// All read offsets of internal accesses, per dimension, for invariant checks.
pub fn internal_read_offsets(g: &PipelineGraph, group: &[String]) -> Vec<Vec<i64>> {
    let members: BTreeSet<&str> = group.iter().map(String::as_str).collect();
    let mut out: Vec<Vec<i64>> = Vec::new();
    for name in group {
        if let Some(stage) = g.stage(name) {
            stage.expr.for_each_load(&mut |load| {
                if let StencilExpr::StageLoad { stage: p, idx } = load {
                    if members.contains(p.as_str()) {
                        out.push(idx.iter().map(|ix| ix.offset).collect());
                    }
                }
            });
        }
    }
    out
}

/// Group liveouts: stages that are pipeline liveouts or consumed outside.
pub fn group_liveouts(g: &PipelineGraph, group: &[String]) -> Vec<String> {
    let members: BTreeSet<&str> = group.iter().map(String::as_str).collect();
    let mut consumed_outside: BTreeSet<String> = BTreeSet::new();
    for stage in &g.stages {
        if members.contains(stage.name.as_str()) {
            continue;
        }
        stage.expr.for_each_load(&mut |load| {
            if let StencilExpr::StageLoad { stage: p, .. } = load {
                if members.contains(p.as_str()) {
                    consumed_outside.insert(p.clone());
                }
            }
        });
    }
    let mut out = Vec::new();
    for stage in &g.stages {
        if !members.contains(stage.name.as_str()) {
            continue;
        }
        if g.liveouts.contains(&stage.name) || consumed_outside.contains(&stage.name) {
            out.push(stage.name.clone());
        }
    }
    out
}

/// Stage buffers read by `group` but produced outside it (external inputs).
pub fn external_stage_inputs(g: &PipelineGraph, group: &[String]) -> Vec<String> {
    let members: BTreeSet<&str> = group.iter().map(String::as_str).collect();
    let mut seen = BTreeSet::new();
    for name in group {
        if let Some(stage) = g.stage(name) {
            stage.expr.for_each_load(&mut |load| {
                if let StencilExpr::StageLoad { stage: p, .. } = load {
                    if !members.contains(p.as_str()) {
                        seen.insert(p.clone());
                    }
                }
            });
        }
    }
    seen.into_iter().collect()
}
