//! Fusion and tile-size search: exhaustive per-group configuration search
//! over the cost model, and dynamic programming over convex stage groupings.
//!
//! The grouping DP peels topologically-last convex groups off the stage DAG:
//! a set of stages is schedulable after `S` exactly when `S` is closed under
//! predecessors, so memoizing on those closed sets enumerates every valid
//! grouping once. Group costs add across groups.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cost::{cost, CostBreakdown, CostError, CostWeights, GpuSpec, ProfileTable, StageProfile};
use crate::pipeline::PipelineGraph;

/// Candidate axes of the per-group configuration search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Tile-size candidates per dimension.
    pub tiles: [Vec<usize>; 3],
    pub blocks: Vec<[usize; 3]>,
    pub frac_regs: Vec<f64>,
    pub tx_sizes: Vec<u32>,
    /// Set when [`bound_search`] pruned the tile/block grid.
    pub bounded: bool,
}

impl SearchSpace {
    /// Full search space: tiles 1..=32 per dimension, thread blocks that are
    /// warp-size multiples up to 1024 threads with at most two non-unit
    /// dimensions, register fractions 0.0..=1.0 in steps of 0.1, and both
    /// transaction sizes.
    pub fn default_for(gpu: &GpuSpec) -> Self {
        let tiles: Vec<usize> = (1..=32).collect();
        let mut blocks = Vec::new();
        for &bx in &[16usize, 32, 64, 128, 256, 512, 1024] {
            for &by in &[1usize, 2, 4, 8] {
                let threads = bx * by;
                if threads % gpu.warp_size == 0 && threads <= 1024 {
                    blocks.push([bx, by, 1]);
                }
            }
        }
        let frac_regs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        SearchSpace {
            tiles: [tiles.clone(), tiles.clone(), tiles],
            blocks,
            frac_regs,
            tx_sizes: gpu.gl_mem_tx_sizes.clone(),
            bounded: false,
        }
    }

    /// Tile/block candidate count (the axes [`bound_search`] prunes).
    pub fn tile_block_candidates(&self) -> usize {
        self.tiles.iter().map(|t| t.len().max(1)).product::<usize>() * self.blocks.len().max(1)
    }
}

/// Thin a candidate list to roughly half, keeping the median element.
fn thin<T: Clone>(v: &[T]) -> Vec<T> {
    if v.len() <= 1 {
        return v.to_vec();
    }
    let keep_parity = (v.len() / 2) % 2;
    v.iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == keep_parity)
        .map(|(_, x)| x.clone())
        .collect()
}

/// Prune the tile/block grid by stride sampling until at most `budget`
/// candidates remain. The register-fraction and transaction-size axes are
/// never pruned.
pub fn bound_search(space: &SearchSpace, budget: usize) -> SearchSpace {
    let budget = budget.max(1);
    let mut out = space.clone();
    while out.tile_block_candidates() > budget {
        // Thin the longest axis first.
        let lens = [
            out.tiles[0].len(),
            out.tiles[1].len(),
            out.tiles[2].len(),
            out.blocks.len(),
        ];
        let (axis, len) = lens.iter().copied().enumerate().max_by_key(|&(_, l)| l).unwrap();
        if len <= 1 {
            break;
        }
        match axis {
            0 | 1 | 2 => out.tiles[axis] = thin(&out.tiles[axis]),
            _ => out.blocks = thin(&out.blocks),
        }
        out.bounded = true;
    }
    out
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

pub const DEFAULT_REG_USAGE: u32 = 16;
pub const DEFAULT_TIME_PER_ITER: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("line {0}: malformed profile record (expected `stage <name> reg=<int> time_per_iter=<float>`)")]
    Malformed(usize),
    #[error("line {0}: duplicate stage `{1}`")]
    Duplicate(usize, String),
}

/// Parse a profile file and fill every unprofiled stage of `g` with the
/// documented synthetic defaults, returning one warning per filled stage.
pub fn load_profile(
    text: &str,
    g: &PipelineGraph,
) -> Result<(ProfileTable, Vec<String>), ProfileError> {
    let mut table = ProfileTable::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (kw, name, reg, time) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if kw != "stage" || name.is_empty() || parts.next().is_some() {
            return Err(ProfileError::Malformed(lineno));
        }
        let reg_usage: u32 = reg
            .strip_prefix("reg=")
            .and_then(|v| v.parse().ok())
            .ok_or(ProfileError::Malformed(lineno))?;
        let time_per_iter: f64 = time
            .strip_prefix("time_per_iter=")
            .and_then(|v| v.parse().ok())
            .filter(|v| *v > 0.0)
            .ok_or(ProfileError::Malformed(lineno))?;
        if table.insert(name.to_string(), StageProfile { reg_usage, time_per_iter }).is_some() {
            return Err(ProfileError::Duplicate(lineno, name.to_string()));
        }
    }
    let mut warnings = Vec::new();
    for stage in &g.stages {
        if !table.contains_key(&stage.name) {
            warnings.push(format!(
                "no profile for stage `{}`; using defaults reg={} time_per_iter={:e}",
                stage.name, DEFAULT_REG_USAGE, DEFAULT_TIME_PER_ITER
            ));
            table.insert(
                stage.name.clone(),
                StageProfile { reg_usage: DEFAULT_REG_USAGE, time_per_iter: DEFAULT_TIME_PER_ITER },
            );
        }
    }
    Ok((table, warnings))
}

// ---------------------------------------------------------------------------
// Per-group configuration search
// ---------------------------------------------------------------------------

/// Winning configuration of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupChoice {
    pub tile: [usize; 3],
    pub block: [usize; 3],
    pub frac_reg: f64,
    pub tx_size: u32,
    pub breakdown: CostBreakdown,
}

/// Exhaustive minimum over the space. Ties break toward smaller tile volume,
/// smaller block volume, smaller register fraction, larger transaction size,
/// then lexicographically smaller shapes.
pub fn best_config_for_group(
    g: &PipelineGraph,
    group: &[String],
    space: &SearchSpace,
    gpu: &GpuSpec,
    weights: &CostWeights,
    profiles: &ProfileTable,
) -> Result<GroupChoice, CostError> {
    let ndim = group
        .iter()
        .filter_map(|n| g.stage(n))
        .map(|s| s.ndim())
        .max()
        .ok_or_else(|| CostError::UnknownStage(group.first().cloned().unwrap_or_default()))?;
    let one = vec![1usize];
    let axis = |d: usize| -> &[usize] {
        if d < ndim {
            &space.tiles[d]
        } else {
            &one
        }
    };

    let mut best: Option<(GroupChoice, CandKey)> = None;
    for &t0 in axis(0) {
        for &t1 in axis(1) {
            for &t2 in axis(2) {
                let tile = [t0, t1, t2];
                for block in &space.blocks {
                    for &frac_reg in &space.frac_regs {
                        for &tx_size in &space.tx_sizes {
                            let breakdown = cost(
                                g, group, tile, *block, frac_reg, tx_size, gpu, weights, profiles,
                            )?;
                            let key = CandKey {
                                cost: breakdown.cost,
                                tile_vol: tile.iter().product(),
                                block_vol: block.iter().product(),
                                frac_reg,
                                tx_size,
                                tile,
                                block: *block,
                            };
                            let replace = match &best {
                                None => true,
                                Some((_, k)) => key.better_than(k),
                            };
                            if replace {
                                best = Some((
                                    GroupChoice {
                                        tile,
                                        block: *block,
                                        frac_reg,
                                        tx_size,
                                        breakdown,
                                    },
                                    key,
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(best.expect("search space is nonempty").0)
}

struct CandKey {
    cost: f64,
    tile_vol: usize,
    block_vol: usize,
    frac_reg: f64,
    tx_size: u32,
    tile: [usize; 3],
    block: [usize; 3],
}

impl CandKey {
    fn better_than(&self, other: &CandKey) -> bool {
        let lhs = (
            self.cost,
            self.tile_vol,
            self.block_vol,
            self.frac_reg,
            std::cmp::Reverse(self.tx_size),
            self.tile,
            self.block,
        );
        let rhs = (
            other.cost,
            other.tile_vol,
            other.block_vol,
            other.frac_reg,
            std::cmp::Reverse(other.tx_size),
            other.tile,
            other.block,
        );
        match lhs.0.total_cmp(&rhs.0) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => match lhs.3.total_cmp(&rhs.3) {
                _ if (lhs.1, lhs.2) != (rhs.1, rhs.2) => (lhs.1, lhs.2) < (rhs.1, rhs.2),
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => (lhs.4, lhs.5, lhs.6) < (rhs.4, rhs.5, rhs.6),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Grouping search
// ---------------------------------------------------------------------------

/// One scheduled group with its configuration and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSchedule {
    pub stages: Vec<String>,
    pub tile: [usize; 3],
    pub block: [usize; 3],
    pub frac_reg: f64,
    pub tx_size: u32,
    pub breakdown: CostBreakdown,
}

/// A complete schedule: grouping plus per-group configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub groups: Vec<GroupSchedule>,
    #[serde(deserialize_with = "crate::cost::inf_from_null")]
    pub total_cost: f64,
    pub bounded: bool,
    /// True when every grouping was infeasible and the all-singleton
    /// fallback is reported instead.
    pub all_infeasible: bool,
}

/// Shared per-group cost cache for the DP and for brute-force checkers.
pub struct Scheduler<'a> {
    pub g: &'a PipelineGraph,
    pub space: &'a SearchSpace,
    pub gpu: &'a GpuSpec,
    pub weights: &'a CostWeights,
    pub profiles: &'a ProfileTable,
    names: Vec<String>,
    preds: Vec<u64>,
    cache: HashMap<u64, GroupChoice>,
}

impl<'a> Scheduler<'a> {
    pub fn new(
        g: &'a PipelineGraph,
        space: &'a SearchSpace,
        gpu: &'a GpuSpec,
        weights: &'a CostWeights,
        profiles: &'a ProfileTable,
    ) -> Self {
        let names: Vec<String> = g.stages.iter().map(|s| s.name.clone()).collect();
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut preds = vec![0u64; names.len()];
        for (p, c) in g.edges() {
            preds[index[c.as_str()]] |= 1 << index[p.as_str()];
        }
        Scheduler { g, space, gpu, weights, profiles, names, preds, cache: HashMap::new() }
    }

    pub fn n_stages(&self) -> usize {
        self.names.len()
    }

    pub fn group_names(&self, mask: u64) -> Vec<String> {
        (0..self.names.len())
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| self.names[i].clone())
            .collect()
    }

    /// Best configuration (memoized) of the group encoded by `mask`.
    pub fn group_choice(&mut self, mask: u64) -> Result<GroupChoice, CostError> {
        if let Some(c) = self.cache.get(&mask) {
            return Ok(c.clone());
        }
        let names = self.group_names(mask);
        let choice =
            best_config_for_group(self.g, &names, self.space, self.gpu, self.weights, self.profiles)?;
        self.cache.insert(mask, choice.clone());
        Ok(choice)
    }

    fn is_closed_under_preds(&self, set: u64) -> bool {
        let mut rest = set;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            if self.preds[i] & !set != 0 {
                return false;
            }
        }
        true
    }

    /// Dynamic programming over predecessor-closed subsets: peel every
    /// topologically-last convex group, memoize the best remainder.
    pub fn dp_fuse(&mut self) -> Result<ScheduleConfig, CostError> {
        let n = self.names.len();
        let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut memo: HashMap<u64, (f64, Vec<u64>)> = HashMap::new();
        let (total_cost, masks) = self.dp(full, &mut memo)?;

        if total_cost.is_infinite() {
            // Report the all-singleton grouping with its (infinite) costs.
            let mut groups = Vec::new();
            for i in 0..n {
                groups.push(self.group_schedule(1 << i)?);
            }
            return Ok(ScheduleConfig {
                groups,
                total_cost,
                bounded: self.space.bounded,
                all_infeasible: true,
            });
        }

        let ordered = self.topo_order_groups(&masks);
        let mut groups = Vec::new();
        for mask in ordered {
            groups.push(self.group_schedule(mask)?);
        }
        Ok(ScheduleConfig {
            groups,
            total_cost,
            bounded: self.space.bounded,
            all_infeasible: false,
        })
    }

    fn group_schedule(&mut self, mask: u64) -> Result<GroupSchedule, CostError> {
        let choice = self.group_choice(mask)?;
        Ok(GroupSchedule {
            stages: self.group_names(mask),
            tile: choice.tile,
            block: choice.block,
            frac_reg: choice.frac_reg,
            tx_size: choice.tx_size,
            breakdown: choice.breakdown,
        })
    }

    fn dp(
        &mut self,
        set: u64,
        memo: &mut HashMap<u64, (f64, Vec<u64>)>,
    ) -> Result<(f64, Vec<u64>), CostError> {
        if set == 0 {
            return Ok((0.0, Vec::new()));
        }
        if let Some(hit) = memo.get(&set) {
            return Ok(hit.clone());
        }
        let mut best: Option<(f64, Vec<u64>)> = None;
        // Enumerate nonempty submasks `group` of `set` whose remainder is
        // predecessor-closed (so `group` is a valid final batch).
        let mut group = set;
        loop {
            let rest = set & !group;
            if self.is_closed_under_preds(rest) {
                let gcost = self.group_choice(group)?.breakdown.cost;
                let (rcost, rmasks) = self.dp(rest, memo)?;
                let total = gcost + rcost;
                let mut masks = rmasks;
                masks.push(group);
                masks.sort_unstable();
                let cand = (total, masks);
                let replace = match &best {
                    None => true,
                    Some(b) => grouping_key_better(&cand, b),
                };
                if replace {
                    best = Some(cand);
                }
            }
            if group == 0 {
                break;
            }
            group = (group - 1) & set;
            if group == 0 {
                break;
            }
        }
        let best = best.expect("the full set itself is always a candidate");
        memo.insert(set, best.clone());
        Ok(best)
    }

    /// Deterministic topological order of group masks (smallest ready mask
    /// first).
    fn topo_order_groups(&self, masks: &[u64]) -> Vec<u64> {
        let mut remaining: Vec<u64> = masks.to_vec();
        remaining.sort_unstable();
        let mut done: u64 = 0;
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let pos = remaining
                .iter()
                .position(|&m| {
                    let mut need: u64 = 0;
                    let mut rest = m;
                    while rest != 0 {
                        let i = rest.trailing_zeros() as usize;
                        rest &= rest - 1;
                        need |= self.preds[i];
                    }
                    need & !done & !m == 0
                })
                .expect("convex grouping always has a ready group");
            let m = remaining.remove(pos);
            done |= m;
            out.push(m);
        }
        out
    }
}

/// Total order over grouping candidates: cost, then group count, then the
/// sorted mask list.
fn grouping_key_better(a: &(f64, Vec<u64>), b: &(f64, Vec<u64>)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => return true,
        std::cmp::Ordering::Greater => return false,
        std::cmp::Ordering::Equal => {}
    }
    (a.1.len(), &a.1) < (b.1.len(), &b.1)
}

/// Convenience wrapper over [`Scheduler::dp_fuse`].
pub fn dp_fuse(
    g: &PipelineGraph,
    space: &SearchSpace,
    gpu: &GpuSpec,
    weights: &CostWeights,
    profiles: &ProfileTable,
) -> Result<ScheduleConfig, CostError> {
    Scheduler::new(g, space, gpu, weights, profiles).dp_fuse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::parse_pipeline;

    fn small_space(gpu: &GpuSpec) -> SearchSpace {
        SearchSpace {
            tiles: [vec![1, 2, 4, 8], vec![1], vec![1]],
            blocks: vec![[32, 1, 1], [64, 4, 1]],
            frac_regs: vec![0.0, 0.5, 1.0],
            tx_sizes: gpu.gl_mem_tx_sizes.clone(),
            bounded: false,
        }
    }

    #[test]
    fn profile_parsing_and_defaults() {
        let g = crate::fixtures::graph("blur");
        let (table, warnings) = load_profile(
            "stage blurx reg=12 time_per_iter=1e-9\nstage blury reg=12 time_per_iter=1e-9\n",
            &g,
        )
        .unwrap();
        assert_eq!(table.len(), 2);
        assert!(warnings.is_empty());

        let (table, warnings) = load_profile("", &g).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(warnings.len(), 2);
        assert_eq!(table["blurx"].reg_usage, DEFAULT_REG_USAGE);

        let dup = "stage blurx reg=1 time_per_iter=1e-9\nstage blurx reg=2 time_per_iter=1e-9\n";
        assert!(matches!(load_profile(dup, &g), Err(ProfileError::Duplicate(2, _))));

        assert!(matches!(
            load_profile("stage blurx reg=zz time_per_iter=1e-9\n", &g),
            Err(ProfileError::Malformed(1))
        ));
    }

    #[test]
    fn bound_search_prunes_to_budget() {
        let gpu = GpuSpec::gtx1080ti();
        let space = SearchSpace::default_for(&gpu);
        let full = space.tile_block_candidates();
        assert_eq!(bound_search(&space, full + 1).tile_block_candidates(), full);
        let b100 = bound_search(&space, 100);
        assert!(b100.tile_block_candidates() <= 100);
        assert!(b100.bounded);
        assert_eq!(b100.frac_regs.len(), space.frac_regs.len());
        assert_eq!(b100.tx_sizes.len(), space.tx_sizes.len());
        let b1 = bound_search(&space, 1);
        assert_eq!(b1.tile_block_candidates(), 1);
        // The surviving tile candidate is the median of 1..=32.
        assert_eq!(b1.tiles[0], vec![17]);
    }

    #[test]
    fn pointwise_singleton_prefers_zero_frac() {
        let text = "\
image i(256, 4): float32
stage p(x, y) [0..255, 0..3] = i[x, y] * 2 + 1
liveout p
";
        let g = parse_pipeline(text).unwrap();
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let (profiles, _) = load_profile("", &g).unwrap();
        let space = small_space(&gpu);
        let choice =
            best_config_for_group(&g, &["p".into()], &space, &gpu, &weights, &profiles).unwrap();
        assert_eq!(choice.frac_reg, 0.0);
        assert!(choice.breakdown.cost.is_finite());
    }

    #[test]
    fn blur_best_config_matches_naive_reenumeration() {
        let g = crate::fixtures::graph("blur");
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let (profiles, _) = load_profile(
            "stage blurx reg=12 time_per_iter=1e-9\nstage blury reg=12 time_per_iter=1e-9\n",
            &g,
        )
        .unwrap();
        let space = small_space(&gpu);
        let group = vec!["blurx".to_string(), "blury".to_string()];
        let got = best_config_for_group(&g, &group, &space, &gpu, &weights, &profiles).unwrap();

        // Independent plain-loop re-enumeration with the same tie-break.
        let mut best: Option<GroupChoice> = None;
        for &t in &space.tiles[0] {
            for block in &space.blocks {
                for &f in &space.frac_regs {
                    for &tx in &space.tx_sizes {
                        let b = cost(&g, &group, [t, 1, 1], *block, f, tx, &gpu, &weights, &profiles)
                            .unwrap();
                        let better = match &best {
                            None => true,
                            Some(prev) => {
                                let ka = (
                                    b.cost,
                                    t,
                                    block.iter().product::<usize>(),
                                    f,
                                    std::cmp::Reverse(tx),
                                );
                                let kb = (
                                    prev.breakdown.cost,
                                    prev.tile[0],
                                    prev.block.iter().product::<usize>(),
                                    prev.frac_reg,
                                    std::cmp::Reverse(prev.tx_size),
                                );
                                ka.0.total_cmp(&kb.0).is_lt()
                                    || (ka.0.total_cmp(&kb.0).is_eq()
                                        && (ka.1, ka.2, ka.3, ka.4) < (kb.1, kb.2, kb.3, kb.4))
                            }
                        };
                        if better {
                            best = Some(GroupChoice {
                                tile: [t, 1, 1],
                                block: *block,
                                frac_reg: f,
                                tx_size: tx,
                                breakdown: b,
                            });
                        }
                    }
                }
            }
        }
        let want = best.unwrap();
        assert_eq!(got.tile, want.tile);
        assert_eq!(got.block, want.block);
        assert_eq!(got.frac_reg, want.frac_reg);
        assert_eq!(got.tx_size, want.tx_size);
        assert_eq!(got.breakdown.cost, want.breakdown.cost);
    }

    #[test]
    fn dp_fuses_blur_into_one_group() {
        let g = crate::fixtures::graph("blur");
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let (profiles, _) = load_profile(
            "stage blurx reg=12 time_per_iter=1e-9\nstage blury reg=12 time_per_iter=1e-9\n",
            &g,
        )
        .unwrap();
        let space = small_space(&gpu);
        let mut s = Scheduler::new(&g, &space, &gpu, &weights, &profiles);
        let schedule = s.dp_fuse().unwrap();
        assert_eq!(schedule.groups.len(), 1);
        assert_eq!(schedule.groups[0].stages, vec!["blurx", "blury"]);
        // Brute force over the only two groupings confirms fusing is cheaper.
        let fused = s.group_choice(0b11).unwrap().breakdown.cost;
        let split = s.group_choice(0b01).unwrap().breakdown.cost
            + s.group_choice(0b10).unwrap().breakdown.cost;
        assert!(fused < split);
        assert_eq!(schedule.total_cost, fused);
    }

    #[test]
    fn single_stage_pipeline_is_trivial() {
        let text = "\
image i(64, 4): float32
stage only(x, y) [1..62, 0..3] = i[x-1, y] + i[x+1, y]
liveout only
";
        let g = parse_pipeline(text).unwrap();
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let (profiles, _) = load_profile("", &g).unwrap();
        let space = small_space(&gpu);
        let schedule = dp_fuse(&g, &space, &gpu, &weights, &profiles).unwrap();
        assert_eq!(schedule.groups.len(), 1);
        assert!(!schedule.all_infeasible);
    }

    #[test]
    fn dp_is_deterministic() {
        let g = crate::fixtures::graph("diamond");
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let (profiles, _) = load_profile("", &g).unwrap();
        let space = small_space(&gpu);
        let a = dp_fuse(&g, &space, &gpu, &weights, &profiles).unwrap();
        let b = dp_fuse(&g, &space, &gpu, &weights, &profiles).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn infeasible_everywhere_reports_singletons() {
        // A register profile beyond MaxRegPerTh makes every group infeasible.
        let g = crate::fixtures::graph("blur");
        let gpu = GpuSpec::gtx1080ti();
        let weights = CostWeights::gtx1080ti();
        let mut profiles = ProfileTable::new();
        profiles.insert("blurx".into(), StageProfile { reg_usage: 300, time_per_iter: 1e-9 });
        profiles.insert("blury".into(), StageProfile { reg_usage: 300, time_per_iter: 1e-9 });
        let space = small_space(&gpu);
        let schedule = dp_fuse(&g, &space, &gpu, &weights, &profiles).unwrap();
        assert!(schedule.all_infeasible);
        assert_eq!(schedule.groups.len(), 2);
        assert!(schedule.total_cost.is_infinite());
    }
}
