//! Kernel emission: one fused stage group becomes one warp-tiled kernel.
//!
//! Every warp owns one overlapped tile of the group's liveout domain and the
//! stages synchronize with `__syncwarp` only. A tile is computed in up to two
//! phases per stage:
//!
//! - a *shared phase* that walks the left part of the tile (plus all overlap)
//!   and stores results in the stage's per-warp scratchpad slice, and
//! - a *register phase* that fully unrolls the right part of the tile into
//!   named per-lane scalars split into parallelogram sub-tiles along the split
//!   dimension. The sub-tile boundary slants parallel to the group's right
//!   hyperplane, so producer reads resolve to the current lane's register,
//!   another lane's register in the current or previous sub-tile (a warp
//!   shuffle), or the shared left part.
//!
//! Shuffles are always emitted above the lane-dependent select that consumes
//! them, never under a divergent guard.
//!
//! The register phase assumes the group's stage domains nest (each producer
//! domain covers its consumers' reads), which holds for bound-inferred
//! pipelines. Groups that clamp internal reads, and warp shapes with multiple
//! lanes in an overlapping non-split dimension, degrade to the shared-only
//! path; the kernel records the reason.

use std::collections::HashMap;

use crate::cost::GpuSpec;
use crate::dependence::{group_geometry, group_liveouts, GroupGeometry};
use crate::ir::{
    AOp, COp, FOp, GlobalBuf, Instr, KernelIr, KernelParam, Operand, RegDecl, RegId, RegKind,
    SharedDecl, Special,
};
use crate::pipeline::{
    BinOp as PBinOp, ElemKind, PipelineGraph, Stage, StencilExpr, UnOp as PUnOp,
};
use crate::tiling::{pad_block, warp_sizes, warps_per_block, BlockShape, WarpShape};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error("group has non-constant dependence vectors")]
    NonConstant,
    #[error("empty group")]
    EmptyGroup,
    #[error("`{0}` is not a stage of the pipeline")]
    UnknownStage(String),
    #[error("stages in a fused group must share dimensionality")]
    MixedDimensionality,
}

/// How one warp tile splits between shared memory and registers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridPlan {
    pub split_dim: Option<usize>,
    /// Shared-tile iterations along the split dimension.
    pub shared_iters: usize,
    /// Register-tile iterations along the split dimension.
    pub reg_iters: usize,
    pub frac_reg: f64,
}

impl HybridPlan {
    /// Quantize `frac_reg` of the split-dimension tile into register
    /// iterations. Without a split dimension the plan is shared-only.
    pub fn new(tile: &[usize; 3], warp: &WarpShape, frac_reg: f64) -> Self {
        let split = select_split_dimension(tile, warp);
        match split {
            Some(d) => {
                let t = tile[d];
                let r = ((t as f64) * frac_reg).round() as usize;
                let r = r.min(t);
                HybridPlan { split_dim: Some(d), shared_iters: t - r, reg_iters: r, frac_reg }
            }
            None => HybridPlan { split_dim: None, shared_iters: 0, reg_iters: 0, frac_reg },
        }
    }

    pub fn shared_only(&self) -> bool {
        self.split_dim.is_none() || self.reg_iters == 0
    }
}

/// Lowest-index dimension with more than one iteration per thread and more
/// than one lane; `None` means tiles must stay entirely in shared memory.
pub fn select_split_dimension(tile: &[usize; 3], warp: &WarpShape) -> Option<usize> {
    (0..3).find(|&d| tile[d] > 1 && warp.0[d] > 1)
}

/// Where one producer load of the register phase finds its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadType {
    /// Type 1: the current lane's own register.
    OwnRegister = 1,
    /// Type 2: the shared-memory part of the tile.
    SharedMemory = 2,
    /// Type 3: another lane's register in the current parallelogram tile.
    CurrTileShuffle = 3,
    /// Type 4: another lane's register in the previous parallelogram tile.
    PrevTileShuffle = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadClassification {
    pub load_type: LoadType,
    /// Register index along the split dimension (types 1, 3, 4).
    pub reg_index: i64,
    pub curr_tile_src_lane: Option<usize>,
    pub prev_tile_src_lane: Option<usize>,
}

/// Classify one register-phase producer load along the split dimension.
///
/// `phi` is the load's reach (read offset plus the consumer's slant) and
/// `phi_r` the producer's slant, so `diff = phi - phi_r <= 0`. Differences of
/// any magnitude are supported: whole parallelogram tiles of distance are
/// taken off the register index and the remainder moves lanes.
pub fn classify_load(
    phi: i64,
    phi_r: i64,
    lane: usize,
    warp: usize,
    reg_iter: usize,
    first_reg_iter: bool,
) -> LoadClassification {
    debug_assert!(phi <= phi_r, "reads never reach past the right hyperplane");
    debug_assert_eq!(first_reg_iter, reg_iter == 0);
    debug_assert!(lane < warp);
    let diff = phi - phi_r;
    let neg = -diff;
    let m = (neg % warp as i64) as usize;
    let tiles_back = neg / warp as i64;
    if m == 0 {
        let reg_index = reg_iter as i64 - tiles_back;
        if reg_index >= 0 {
            LoadClassification {
                load_type: LoadType::OwnRegister,
                reg_index,
                curr_tile_src_lane: None,
                prev_tile_src_lane: None,
            }
        } else {
            LoadClassification {
                load_type: LoadType::SharedMemory,
                reg_index,
                curr_tile_src_lane: None,
                prev_tile_src_lane: None,
            }
        }
    } else if lane >= m {
        let reg_index = reg_iter as i64 - tiles_back;
        let src = lane - m;
        if reg_index >= 0 {
            LoadClassification {
                load_type: LoadType::CurrTileShuffle,
                reg_index,
                curr_tile_src_lane: Some(src),
                prev_tile_src_lane: None,
            }
        } else {
            LoadClassification {
                load_type: LoadType::SharedMemory,
                reg_index,
                curr_tile_src_lane: Some(src),
                prev_tile_src_lane: None,
            }
        }
    } else {
        let reg_index = reg_iter as i64 - tiles_back - 1;
        let src = lane + warp - m;
        if reg_index >= 0 {
            LoadClassification {
                load_type: LoadType::PrevTileShuffle,
                reg_index,
                curr_tile_src_lane: None,
                prev_tile_src_lane: Some(src),
            }
        } else {
            LoadClassification {
                load_type: LoadType::SharedMemory,
                reg_index,
                curr_tile_src_lane: None,
                prev_tile_src_lane: Some(src),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Group code generation
// ---------------------------------------------------------------------------

struct StageInfo {
    stage: Stage,
    /// Tile extension per dimension (group geometry).
    left: Vec<i64>,
    right: Vec<i64>,
    /// Scratchpad: (shared array index, per-dim extents, per-warp slice len).
    scratch: Option<Scratch>,
    is_liveout: bool,
    /// Register iterations per non-split dimension (register phase).
    reg_dim_iters: Vec<usize>,
}

struct Scratch {
    arr: usize,
    extents: Vec<usize>,
}

/// How producer loads resolve in the current phase.
enum AddrCtx {
    /// Shared phase: per-lane producer-clamped scratchpad addressing.
    Shared,
    /// Register phase: slot addressing via registers, shuffles, or spills.
    Register { consumer: String, reg_iter: usize, combo: Vec<usize> },
}

pub struct GroupCodegen<'g> {
    g: &'g PipelineGraph,
    geom: GroupGeometry,
    plan: HybridPlan,
    tile: [usize; 3],
    warp: WarpShape,
    block: BlockShape,
    wpb: [usize; 3],
    ndim: usize,
    /// Union of the group liveouts' domains.
    union_lo: Vec<i64>,
    union_hi: Vec<i64>,
    grid: [usize; 3],
    warp_size: usize,
    stages: Vec<StageInfo>,
    hybrid: bool,
    fallback_reason: Option<String>,

    // IR under construction.
    regs: Vec<RegDecl>,
    named: HashMap<String, RegId>,
    params: Vec<KernelParam>,
    global_bufs: Vec<GlobalBuf>,
    shared: Vec<SharedDecl>,
    /// Prologue registers.
    base: Vec<RegId>,
    sbase: HashMap<String, RegId>,
    /// Upper coordinate limit register per (buffer, dim), for clamping.
    buf_lim: HashMap<(usize, usize), RegId>,
}

/// Emit the kernel for one fused group.
///
/// `block` may be any shape; it is padded to whole warps first. The plan's
/// register fraction applies along its split dimension; infeasible plans
/// degrade to shared-only emission with a recorded reason.
pub fn gen_group_kernel(
    g: &PipelineGraph,
    group: &[String],
    tile: [usize; 3],
    block: [usize; 3],
    frac_reg: f64,
    gpu: &GpuSpec,
) -> Result<KernelIr, CodegenError> {
    let padded = pad_block(BlockShape(block), gpu.warp_size);
    let warp = warp_sizes(padded, gpu.warp_size);
    let plan = HybridPlan::new(&tile, &warp, frac_reg);
    let liveouts = group_liveouts(g, group);
    let geom = group_geometry(g, group, &liveouts).map_err(|e| match e {
        crate::dependence::GeometryError::NonConstant => CodegenError::NonConstant,
        crate::dependence::GeometryError::EmptyGroup => CodegenError::EmptyGroup,
        crate::dependence::GeometryError::UnknownStage(s) => CodegenError::UnknownStage(s),
        crate::dependence::GeometryError::DeadStage(s) => CodegenError::UnknownStage(s),
    })?;
    let mut cg = GroupCodegen::new(g, geom, plan, tile, padded, warp, gpu.warp_size, &liveouts)?;
    Ok(cg.build())
}

impl<'g> GroupCodegen<'g> {
    /// Builder for one group, for emitting individual pieces such as
    /// [`GroupCodegen::register_tile_fragment`]. [`gen_group_kernel`] drives
    /// the same machinery end to end.
    pub fn for_group(
        g: &'g PipelineGraph,
        group: &[String],
        tile: [usize; 3],
        block: [usize; 3],
        frac_reg: f64,
        gpu: &GpuSpec,
    ) -> Result<Self, CodegenError> {
        let padded = pad_block(BlockShape(block), gpu.warp_size);
        let warp = warp_sizes(padded, gpu.warp_size);
        let plan = HybridPlan::new(&tile, &warp, frac_reg);
        let liveouts = group_liveouts(g, group);
        let geom = group_geometry(g, group, &liveouts).map_err(|e| match e {
            crate::dependence::GeometryError::NonConstant => CodegenError::NonConstant,
            crate::dependence::GeometryError::EmptyGroup => CodegenError::EmptyGroup,
            crate::dependence::GeometryError::UnknownStage(s) => CodegenError::UnknownStage(s),
            crate::dependence::GeometryError::DeadStage(s) => CodegenError::UnknownStage(s),
        })?;
        let mut cg =
            GroupCodegen::new(g, geom, plan, tile, padded, warp, gpu.warp_size, &liveouts)?;
        let los = group_liveouts(cg.g, &cg.geom.group.clone());
        cg.collect_buffers(&los);
        cg.collect_stages(&los);
        let mut prologue = Vec::new();
        cg.prologue(&mut prologue);
        Ok(cg)
    }
}

impl<'g> GroupCodegen<'g> {
    fn new(
        g: &'g PipelineGraph,
        geom: GroupGeometry,
        plan: HybridPlan,
        tile: [usize; 3],
        block: BlockShape,
        warp: WarpShape,
        warp_size: usize,
        liveouts: &[String],
    ) -> Result<Self, CodegenError> {
        let ndim = geom.ndim;
        for name in &geom.group {
            if g.stage(name).map(|s| s.ndim()) != Some(ndim) {
                return Err(CodegenError::MixedDimensionality);
            }
        }
        let mut union_lo = vec![i64::MAX; ndim];
        let mut union_hi = vec![i64::MIN; ndim];
        for name in liveouts {
            let stage = g.stage(name).ok_or_else(|| CodegenError::UnknownStage(name.clone()))?;
            for d in 0..ndim {
                union_lo[d] = union_lo[d].min(stage.domain[d].0);
                union_hi[d] = union_hi[d].max(stage.domain[d].1);
            }
        }

        // Decide whether the register phase is sound for this group/config.
        let mut plan = plan;
        let mut fallback = None;
        if !plan.shared_only() {
            let split = plan.split_dim.unwrap();
            if let Some(reason) = hybrid_obstacle(g, &geom, split, &warp) {
                fallback = Some(reason);
                plan = HybridPlan {
                    split_dim: plan.split_dim,
                    shared_iters: tile[split],
                    reg_iters: 0,
                    frac_reg: plan.frac_reg,
                };
            }
        }
        let hybrid = !plan.shared_only();

        let wpb = warps_per_block(block, warp);
        let mut grid = [1usize; 3];
        for d in 0..ndim {
            let n = (union_hi[d] - union_lo[d] + 1) as usize;
            let tiles = n.div_ceil(tile[d] * warp.0[d]);
            grid[d] = tiles.div_ceil(wpb[d]);
        }

        Ok(GroupCodegen {
            g,
            geom,
            plan,
            tile,
            warp,
            block,
            wpb,
            ndim,
            union_lo,
            union_hi,
            grid,
            warp_size,
            stages: Vec::new(),
            hybrid,
            fallback_reason: fallback,
            regs: Vec::new(),
            named: HashMap::new(),
            params: Vec::new(),
            global_bufs: Vec::new(),
            shared: Vec::new(),
            base: Vec::new(),
            sbase: HashMap::new(),
            buf_lim: HashMap::new(),
        })
    }

    fn fresh(&mut self, hint: &str, kind: RegKind) -> RegId {
        let id = self.regs.len() as RegId;
        self.regs.push(RegDecl { name: format!("{hint}{id}"), kind });
        id
    }

    fn named_reg(&mut self, name: String, kind: RegKind) -> RegId {
        if let Some(&id) = self.named.get(&name) {
            return id;
        }
        let id = self.regs.len() as RegId;
        self.regs.push(RegDecl { name: name.clone(), kind });
        self.named.insert(name, id);
        id
    }

    /// Shared-region extent per dimension of one stage's scratchpad.
    fn shared_extents(&self, name: &str) -> Vec<usize> {
        let left = &self.geom.left[name];
        let right = &self.geom.right[name];
        (0..self.ndim)
            .map(|d| {
                let tw = (self.tile[d] * self.warp.0[d]) as i64;
                let ext = if Some(d) == self.plan.split_dim {
                    left[d] + (self.plan.shared_iters * self.warp.0[d]) as i64 + right[d]
                } else {
                    tw + left[d] + right[d]
                };
                ext.max(0) as usize
            })
            .collect()
    }

    fn is_internally_consumed(&self, name: &str) -> bool {
        self.geom.group.iter().any(|consumer| {
            if consumer == name {
                return false;
            }
            let mut found = false;
            self.g.stage(consumer).unwrap().expr.for_each_load(&mut |load| {
                if let StencilExpr::StageLoad { stage, .. } = load {
                    if stage == name {
                        found = true;
                    }
                }
            });
            found
        })
    }

    fn build(&mut self) -> KernelIr {
        let liveouts = group_liveouts(self.g, &self.geom.group.clone());
        self.collect_buffers(&liveouts);
        self.collect_stages(&liveouts);

        let mut body = Vec::new();
        self.prologue(&mut body);

        let mut phase_instrs = Vec::new();
        let group = self.geom.group.clone();
        for (i, name) in group.iter().enumerate() {
            self.shared_phase(&mut phase_instrs, name);
            if self.hybrid {
                let frag = self.register_tile_fragment(name);
                phase_instrs.extend(frag);
            }
            if i + 1 < group.len() {
                phase_instrs.push(Instr::SyncWarp);
            }
        }

        // Warps whose tile lies wholly beyond the domain skip everything;
        // the condition is warp-uniform, so shuffles inside stay full-warp.
        let guard = self.tile_in_range_cond(&mut body);
        body.push(Instr::If { cond: guard, then_: phase_instrs, else_: vec![] });

        let liveout_name = self.geom.group.last().cloned().unwrap_or_default();
        KernelIr {
            name: format!("fused_{liveout_name}"),
            stages: self.geom.group.clone(),
            grid: self.grid,
            block: self.block.0,
            warp: self.warp.0,
            warps_per_block: self.wpb,
            warp_size: self.warp_size,
            params: std::mem::take(&mut self.params),
            global_bufs: std::mem::take(&mut self.global_bufs),
            shared: std::mem::take(&mut self.shared),
            regs: std::mem::take(&mut self.regs),
            body,
            hybrid: self.hybrid,
            fallback_reason: self.fallback_reason.take(),
        }
    }

    fn collect_buffers(&mut self, liveouts: &[String]) {
        // Images referenced by the group.
        let mut images: Vec<String> = Vec::new();
        for name in &self.geom.group {
            self.g.stage(name).unwrap().expr.for_each_load(&mut |load| {
                if let StencilExpr::ImageLoad { image, .. } = load {
                    if !images.contains(image) {
                        images.push(image.clone());
                    }
                }
            });
        }
        for image in images {
            let img = self.g.image(&image).unwrap();
            self.global_bufs.push(GlobalBuf {
                name: image,
                kind: img.kind,
                dims: img.dims.clone(),
                origin: vec![0; img.dims.len()],
                output: false,
            });
        }
        // Stage inputs produced by other groups.
        for name in crate::dependence::external_stage_inputs(self.g, &self.geom.group) {
            let stage = self.g.stage(&name).unwrap();
            self.global_bufs.push(GlobalBuf {
                name,
                kind: stage.kind,
                dims: stage.extents(),
                origin: stage.domain.iter().map(|&(lo, _)| lo).collect(),
                output: false,
            });
        }
        // Liveout outputs.
        for name in liveouts {
            let stage = self.g.stage(name).unwrap();
            self.global_bufs.push(GlobalBuf {
                name: name.clone(),
                kind: stage.kind,
                dims: stage.extents(),
                origin: stage.domain.iter().map(|&(lo, _)| lo).collect(),
                output: true,
            });
        }
        // One extent parameter per buffer dimension.
        for b in 0..self.global_bufs.len() {
            for d in 0..self.global_bufs[b].dims.len() {
                let name = format!("n_{}_{d}", self.global_bufs[b].name);
                self.params.push(KernelParam { name, value: self.global_bufs[b].dims[d] as i64 });
            }
        }
    }

    fn collect_stages(&mut self, liveouts: &[String]) {
        let group = self.geom.group.clone();
        for name in &group {
            let stage = self.g.stage(name).unwrap().clone();
            let left = self.geom.left[name].clone();
            let right = self.geom.right[name].clone();
            let scratch = if self.is_internally_consumed(name) {
                let extents = self.shared_extents(name);
                let slice: usize = extents.iter().product();
                let total = slice * self.wpb.iter().product::<usize>();
                let arr = self.shared.len();
                self.shared.push(SharedDecl {
                    name: format!("sp_{name}"),
                    kind: stage.kind,
                    len: total,
                });
                Some(Scratch { arr, extents })
            } else {
                None
            };
            // Register-phase iteration counts for non-split dimensions.
            let reg_dim_iters: Vec<usize> = (0..self.ndim)
                .map(|d| {
                    if Some(d) == self.plan.split_dim {
                        self.plan.reg_iters
                    } else if self.warp.0[d] == 1 {
                        (self.tile[d] as i64 + left[d] + right[d]).max(0) as usize
                    } else {
                        self.tile[d]
                    }
                })
                .collect();
            self.stages.push(StageInfo {
                is_liveout: liveouts.contains(name),
                stage,
                left,
                right,
                scratch,
                reg_dim_iters,
            });
        }
    }

    fn prologue(&mut self, out: &mut Vec<Instr>) {
        // base_d = union_lo_d + (block_d * warpsPerBlock_d + warp_d) * T_d*W_d
        for d in 0..self.ndim {
            let t0 = self.fresh("t", RegKind::I32);
            out.push(Instr::Bin {
                dst: t0,
                op: AOp::Mul,
                a: Operand::Special(Special::Block(d)),
                b: Operand::ImmI(self.wpb[d] as i64),
            });
            let t1 = self.fresh("t", RegKind::I32);
            out.push(Instr::Bin {
                dst: t1,
                op: AOp::Add,
                a: Operand::Reg(t0),
                b: Operand::Special(Special::WarpInBlock(d)),
            });
            let t2 = self.fresh("t", RegKind::I32);
            out.push(Instr::Bin {
                dst: t2,
                op: AOp::Mul,
                a: Operand::Reg(t1),
                b: Operand::ImmI((self.tile[d] * self.warp.0[d]) as i64),
            });
            let base = self.fresh("base", RegKind::I32);
            out.push(Instr::Bin {
                dst: base,
                op: AOp::Add,
                a: Operand::Reg(t2),
                b: Operand::ImmI(self.union_lo[d]),
            });
            self.base.push(base);
        }
        // Linear warp index inside the block, for scratchpad slicing.
        let wl0 = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin {
            dst: wl0,
            op: AOp::Mul,
            a: Operand::Special(Special::WarpInBlock(2)),
            b: Operand::ImmI(self.wpb[1] as i64),
        });
        let wl1 = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin {
            dst: wl1,
            op: AOp::Add,
            a: Operand::Reg(wl0),
            b: Operand::Special(Special::WarpInBlock(1)),
        });
        let wl2 = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin {
            dst: wl2,
            op: AOp::Mul,
            a: Operand::Reg(wl1),
            b: Operand::ImmI(self.wpb[0] as i64),
        });
        let warp_linear = self.fresh("warp_linear", RegKind::I32);
        out.push(Instr::Bin {
            dst: warp_linear,
            op: AOp::Add,
            a: Operand::Reg(wl2),
            b: Operand::Special(Special::WarpInBlock(0)),
        });
        // Scratchpad slice bases.
        let names: Vec<String> = self.geom.group.clone();
        for name in names {
            let slice = match self.stage_info(&name).scratch.as_ref() {
                Some(s) => s.extents.iter().product::<usize>(),
                None => continue,
            };
            let sb = self.fresh(&format!("sb_{name}_"), RegKind::I32);
            out.push(Instr::Bin {
                dst: sb,
                op: AOp::Mul,
                a: Operand::Reg(warp_linear),
                b: Operand::ImmI(slice as i64),
            });
            self.sbase.insert(name, sb);
        }
        // Clamp limits for input buffers: origin + extent - 1, from params.
        for b in 0..self.global_bufs.len() {
            if self.global_bufs[b].output {
                continue;
            }
            let dims = self.global_bufs[b].dims.len();
            for d in 0..dims {
                let pidx = self.param_index(b, d);
                let origin = self.global_bufs[b].origin[d];
                let lim = self.fresh("lim", RegKind::I32);
                out.push(Instr::Bin {
                    dst: lim,
                    op: AOp::Add,
                    a: Operand::Param(pidx),
                    b: Operand::ImmI(origin - 1),
                });
                self.buf_lim.insert((b, d), lim);
            }
        }
    }

    fn param_index(&self, buf: usize, dim: usize) -> usize {
        let mut idx = 0;
        for b in 0..buf {
            idx += self.global_bufs[b].dims.len();
        }
        idx + dim
    }

    fn stage_info(&self, name: &str) -> &StageInfo {
        self.stages.iter().find(|s| s.stage.name == name).unwrap()
    }

    fn tile_in_range_cond(&mut self, out: &mut Vec<Instr>) -> Operand {
        let mut conj: Option<RegId> = None;
        for d in 0..self.ndim {
            let c = self.fresh("inrange", RegKind::I32);
            out.push(Instr::Cmp {
                dst: c,
                op: COp::Le,
                a: Operand::Reg(self.base[d]),
                b: Operand::ImmI(self.union_hi[d]),
            });
            conj = Some(match conj {
                None => c,
                Some(prev) => {
                    let a = self.fresh("inrange", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: a,
                        op: AOp::And,
                        a: Operand::Reg(prev),
                        b: Operand::Reg(c),
                    });
                    a
                }
            });
        }
        Operand::Reg(conj.expect("at least one dimension"))
    }

    // -- shared phase -------------------------------------------------------

    fn shared_phase(&mut self, out: &mut Vec<Instr>, name: &str) {
        let info = self.stage_info(name);
        let left: Vec<i64> = info.left.clone();
        let exts = self.shared_extents(name);
        if exts.iter().any(|&e| e == 0) {
            return;
        }
        let stage = info.stage.clone();
        let is_liveout = info.is_liveout;
        let has_scratch = info.scratch.is_some();

        // Innermost body first: raw slot indices, coordinates, expression.
        let mut body = Vec::new();
        let mut raw: Vec<Operand> = Vec::new();
        let mut loop_vars: Vec<(RegId, usize)> = Vec::new();
        for d in 0..self.ndim {
            let iters = exts[d].div_ceil(self.warp.0[d]);
            let var = self.fresh(&format!("it{d}_"), RegKind::I32);
            loop_vars.push((var, iters));
            if self.warp.0[d] == 1 {
                raw.push(Operand::Reg(var));
            } else {
                let r0 = self.fresh("t", RegKind::I32);
                body.push(Instr::Bin {
                    dst: r0,
                    op: AOp::Mul,
                    a: Operand::Reg(var),
                    b: Operand::ImmI(self.warp.0[d] as i64),
                });
                let r1 = self.fresh("t", RegKind::I32);
                body.push(Instr::Bin {
                    dst: r1,
                    op: AOp::Add,
                    a: Operand::Reg(r0),
                    b: Operand::Special(Special::Lane(d)),
                });
                raw.push(Operand::Reg(r1));
            }
        }
        // Guard raw indices that can overrun the extent.
        let mut guard: Option<RegId> = None;
        for d in 0..self.ndim {
            if loop_vars[d].1 * self.warp.0[d] > exts[d] {
                let c = self.fresh("g", RegKind::I32);
                body.push(Instr::Cmp {
                    dst: c,
                    op: COp::Lt,
                    a: raw[d],
                    b: Operand::ImmI(exts[d] as i64),
                });
                guard = Some(match guard {
                    None => c,
                    Some(prev) => {
                        let a = self.fresh("g", RegKind::I32);
                        body.push(Instr::Bin {
                            dst: a,
                            op: AOp::And,
                            a: Operand::Reg(prev),
                            b: Operand::Reg(c),
                        });
                        a
                    }
                });
            }
        }

        let mut inner = Vec::new();
        // Unclamped and clamped coordinates.
        let mut g0: Vec<RegId> = Vec::new();
        let mut coord: Vec<Operand> = Vec::new();
        for d in 0..self.ndim {
            let p = if left[d] != 0 {
                let p = self.fresh("t", RegKind::I32);
                inner.push(Instr::Bin {
                    dst: p,
                    op: AOp::Sub,
                    a: raw[d],
                    b: Operand::ImmI(left[d]),
                });
                Operand::Reg(p)
            } else {
                raw[d]
            };
            let u = self.fresh("pos", RegKind::I32);
            inner.push(Instr::Bin {
                dst: u,
                op: AOp::Add,
                a: Operand::Reg(self.base[d]),
                b: p,
            });
            g0.push(u);
            let c = self.clamp(&mut inner, Operand::Reg(u), stage.domain[d].0, stage.domain[d].1);
            coord.push(c);
        }

        let value = self.lower_expr(&mut inner, &stage.expr, &coord, &AddrCtx::Shared);

        if has_scratch {
            let info = self.stage_info(name);
            let (arr, extents) = {
                let s = info.scratch.as_ref().unwrap();
                (s.arr, s.extents.clone())
            };
            let sbase = self.sbase[name];
            let off = self.linearize(&mut inner, &raw, &extents, Some(sbase));
            inner.push(Instr::StoreShared { arr, off, src: value });
        }
        if is_liveout {
            self.guarded_global_store(&mut inner, &stage, &g0, value);
        }

        // Assemble: body (+ guard around inner), wrapped in the loop nest.
        match guard {
            Some(gr) => body.push(Instr::If { cond: Operand::Reg(gr), then_: inner, else_: vec![] }),
            None => body.extend(inner),
        }
        let mut nest = body;
        for d in 0..self.ndim {
            let (var, iters) = loop_vars[d];
            nest = vec![Instr::Loop { var, count: iters, body: nest }];
        }
        out.extend(nest);
    }

    fn clamp(&mut self, out: &mut Vec<Instr>, v: Operand, lo: i64, hi: i64) -> Operand {
        let a = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin { dst: a, op: AOp::Max, a: v, b: Operand::ImmI(lo) });
        let b = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin { dst: b, op: AOp::Min, a: Operand::Reg(a), b: Operand::ImmI(hi) });
        Operand::Reg(b)
    }

    fn clamp_reg_lim(&mut self, out: &mut Vec<Instr>, v: Operand, lo: i64, lim: RegId) -> Operand {
        let a = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin { dst: a, op: AOp::Max, a: v, b: Operand::ImmI(lo) });
        let b = self.fresh("t", RegKind::I32);
        out.push(Instr::Bin { dst: b, op: AOp::Min, a: Operand::Reg(a), b: Operand::Reg(lim) });
        Operand::Reg(b)
    }

    /// `base + sum_d raw_d * stride_d` with row-major strides over `extents`.
    fn linearize(
        &mut self,
        out: &mut Vec<Instr>,
        raw: &[Operand],
        extents: &[usize],
        base: Option<RegId>,
    ) -> Operand {
        let mut acc: Option<Operand> = base.map(Operand::Reg);
        let mut stride = 1i64;
        for (d, r) in raw.iter().enumerate() {
            let term = match r {
                Operand::ImmI(v) => Operand::ImmI(v * stride),
                _ if stride == 1 => *r,
                _ => {
                    let t = self.fresh("t", RegKind::I32);
                    out.push(Instr::Bin { dst: t, op: AOp::Mul, a: *r, b: Operand::ImmI(stride) });
                    Operand::Reg(t)
                }
            };
            if matches!(term, Operand::ImmI(0)) && acc.is_some() {
                stride *= extents[d] as i64;
                continue;
            }
            acc = Some(match acc {
                None => term,
                Some(prev) => {
                    let t = self.fresh("t", RegKind::I32);
                    out.push(Instr::Bin { dst: t, op: AOp::Add, a: prev, b: term });
                    Operand::Reg(t)
                }
            });
            stride *= extents[d] as i64;
        }
        acc.unwrap_or(Operand::ImmI(0))
    }

    fn guarded_global_store(
        &mut self,
        out: &mut Vec<Instr>,
        stage: &Stage,
        g0: &[RegId],
        value: Operand,
    ) {
        let buf = self.global_bufs.iter().position(|b| b.name == stage.name && b.output).unwrap();
        let mut cond: Option<RegId> = None;
        for d in 0..self.ndim {
            let ge = self.fresh("s", RegKind::I32);
            out.push(Instr::Cmp {
                dst: ge,
                op: COp::Ge,
                a: Operand::Reg(g0[d]),
                b: Operand::ImmI(stage.domain[d].0),
            });
            let le = self.fresh("s", RegKind::I32);
            out.push(Instr::Cmp {
                dst: le,
                op: COp::Le,
                a: Operand::Reg(g0[d]),
                b: Operand::ImmI(stage.domain[d].1),
            });
            let both = self.fresh("s", RegKind::I32);
            out.push(Instr::Bin {
                dst: both,
                op: AOp::And,
                a: Operand::Reg(ge),
                b: Operand::Reg(le),
            });
            cond = Some(match cond {
                None => both,
                Some(prev) => {
                    let a = self.fresh("s", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: a,
                        op: AOp::And,
                        a: Operand::Reg(prev),
                        b: Operand::Reg(both),
                    });
                    a
                }
            });
        }
        let mut store = Vec::new();
        let mut idx = Vec::new();
        for d in 0..self.ndim {
            let origin = stage.domain[d].0;
            if origin == 0 {
                idx.push(Operand::Reg(g0[d]));
            } else {
                let t = self.fresh("t", RegKind::I32);
                store.push(Instr::Bin {
                    dst: t,
                    op: AOp::Sub,
                    a: Operand::Reg(g0[d]),
                    b: Operand::ImmI(origin),
                });
                idx.push(Operand::Reg(t));
            }
        }
        store.push(Instr::StoreGlobal { buf, idx, src: value });
        out.push(Instr::If { cond: Operand::Reg(cond.unwrap()), then_: store, else_: vec![] });
    }

    // -- register phase -----------------------------------------------------

    /// Fully unrolled register tile of one stage (the hybrid right part).
    /// A degenerate plan (no split dimension or zero register iterations)
    /// contributes nothing.
    pub fn register_tile_fragment(&mut self, name: &str) -> Vec<Instr> {
        if self.plan.shared_only() {
            return Vec::new();
        }
        let split = self.plan.split_dim.unwrap();
        let info = self.stage_info(name);
        let stage = info.stage.clone();
        let shift = info.right[split];
        let left: Vec<i64> = info.left.clone();
        let dim_iters = info.reg_dim_iters.clone();
        let is_liveout = info.is_liveout;
        let kind = stage.kind;

        let mut out = Vec::new();
        // All non-split iteration combos, dimension 0 fastest.
        let combos = combos(&dim_iters, split);
        for r in 0..self.plan.reg_iters {
            for combo in &combos {
                // Positions and coordinates per dimension.
                let mut g0: Vec<RegId> = Vec::new();
                let mut coord: Vec<Operand> = Vec::new();
                for d in 0..self.ndim {
                    let p: Operand = if d == split {
                        let off =
                            ((self.plan.shared_iters + r) * self.warp.0[d]) as i64 + shift;
                        let t = self.fresh("t", RegKind::I32);
                        out.push(Instr::Bin {
                            dst: t,
                            op: AOp::Add,
                            a: Operand::Special(Special::Lane(d)),
                            b: Operand::ImmI(off),
                        });
                        Operand::Reg(t)
                    } else if self.warp.0[d] == 1 {
                        Operand::ImmI(combo[d] as i64 - left[d])
                    } else {
                        let t = self.fresh("t", RegKind::I32);
                        out.push(Instr::Bin {
                            dst: t,
                            op: AOp::Add,
                            a: Operand::Special(Special::Lane(d)),
                            b: Operand::ImmI((combo[d] * self.warp.0[d]) as i64),
                        });
                        Operand::Reg(t)
                    };
                    let u = self.fresh("pos", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: u,
                        op: AOp::Add,
                        a: Operand::Reg(self.base[d]),
                        b: p,
                    });
                    g0.push(u);
                    let c =
                        self.clamp(&mut out, Operand::Reg(u), stage.domain[d].0, stage.domain[d].1);
                    coord.push(c);
                }

                let ctx = AddrCtx::Register { consumer: name.to_string(), reg_iter: r, combo: combo.clone() };
                let value = self.lower_expr(&mut out, &stage.expr, &coord, &ctx);
                let casted = self.cast_to(&mut out, value, kind);
                let reg = self.stage_reg(name, r, combo, kind);
                out.push(Instr::Mov { dst: reg, a: casted });
                if is_liveout {
                    self.guarded_global_store(&mut out, &stage, &g0, Operand::Reg(reg));
                }
            }
        }
        out
    }

    fn cast_to(&mut self, out: &mut Vec<Instr>, v: Operand, kind: ElemKind) -> Operand {
        let (op, rk) = match kind {
            ElemKind::F32 => (FOp::ToF32, RegKind::F32),
            ElemKind::I32 => (FOp::ToI32, RegKind::I32),
            ElemKind::U8 => (FOp::ToU8, RegKind::I32),
        };
        let t = self.fresh("t", rk);
        out.push(Instr::Un { dst: t, op, a: v });
        Operand::Reg(t)
    }

    fn stage_reg(&mut self, name: &str, r: usize, combo: &[usize], kind: ElemKind) -> RegId {
        let mut tag = format!("r_{name}_{r}");
        for (d, c) in combo.iter().enumerate() {
            if Some(d) != self.plan.split_dim && d < self.ndim {
                tag.push_str(&format!("_{c}"));
            }
        }
        let rk = match kind {
            ElemKind::F32 => RegKind::F32,
            _ => RegKind::I32,
        };
        self.named_reg(tag, rk)
    }

    // -- expression lowering --------------------------------------------------

    fn lower_expr(
        &mut self,
        out: &mut Vec<Instr>,
        expr: &StencilExpr,
        coord: &[Operand],
        ctx: &AddrCtx,
    ) -> Operand {
        match expr {
            StencilExpr::ConstF(v) => Operand::ImmF(*v),
            StencilExpr::ConstI(v) => Operand::ImmI(*v),
            StencilExpr::Bin(op, a, b) => {
                let va = self.lower_expr(out, a, coord, ctx);
                let vb = self.lower_expr(out, b, coord, ctx);
                let kind = self.expr_kind(expr);
                let dst = self.fresh("t", kind);
                let aop = match op {
                    PBinOp::Add => AOp::Add,
                    PBinOp::Sub => AOp::Sub,
                    PBinOp::Mul => AOp::Mul,
                    PBinOp::Div => AOp::Div,
                    PBinOp::Min => AOp::Min,
                    PBinOp::Max => AOp::Max,
                };
                out.push(Instr::Bin { dst, op: aop, a: va, b: vb });
                Operand::Reg(dst)
            }
            StencilExpr::Un(op, a) => {
                let va = self.lower_expr(out, a, coord, ctx);
                let kind = self.expr_kind(expr);
                let dst = self.fresh("t", kind);
                let fop = match op {
                    PUnOp::Abs => FOp::Abs,
                    PUnOp::Sqrt => FOp::Sqrt,
                    PUnOp::Exp => FOp::Exp,
                    PUnOp::Neg => FOp::Neg,
                };
                out.push(Instr::Un { dst, op: fop, a: va });
                Operand::Reg(dst)
            }
            StencilExpr::ImageLoad { image, idx } => {
                let buf = self.global_bufs.iter().position(|b| &b.name == image).unwrap();
                self.lower_global_load(out, buf, idx, coord)
            }
            StencilExpr::StageLoad { stage, idx } => {
                if self.geom.group.contains(stage) {
                    self.lower_internal_load(out, stage.clone(), idx, coord, ctx)
                } else {
                    let buf = self.global_bufs.iter().position(|b| &b.name == stage).unwrap();
                    self.lower_global_load(out, buf, idx, coord)
                }
            }
        }
    }

    /// Clamped load from an input image or external stage buffer.
    fn lower_global_load(
        &mut self,
        out: &mut Vec<Instr>,
        buf: usize,
        idx: &[crate::pipeline::AffineIndex],
        coord: &[Operand],
    ) -> Operand {
        let origin = self.global_bufs[buf].origin.clone();
        let kind = self.global_bufs[buf].kind;
        let mut coords = Vec::new();
        for (d, ix) in idx.iter().enumerate() {
            let pos = self.affine_apply(out, ix, coord[d]);
            let lim = self.buf_lim[&(buf, d)];
            let clamped = self.clamp_reg_lim(out, pos, origin[d], lim);
            let c = if origin[d] == 0 {
                clamped
            } else {
                let t = self.fresh("t", RegKind::I32);
                out.push(Instr::Bin {
                    dst: t,
                    op: AOp::Sub,
                    a: clamped,
                    b: Operand::ImmI(origin[d]),
                });
                Operand::Reg(t)
            };
            coords.push(c);
        }
        let dst = self.fresh(
            "v",
            match kind {
                ElemKind::F32 => RegKind::F32,
                _ => RegKind::I32,
            },
        );
        out.push(Instr::LoadGlobal { dst, buf, idx: coords });
        Operand::Reg(dst)
    }

    fn affine_apply(
        &mut self,
        out: &mut Vec<Instr>,
        ix: &crate::pipeline::AffineIndex,
        coord: Operand,
    ) -> Operand {
        let scaled = if ix.coef == 1 {
            coord
        } else {
            let t = self.fresh("t", RegKind::I32);
            out.push(Instr::Bin { dst: t, op: AOp::Mul, a: coord, b: Operand::ImmI(ix.coef) });
            Operand::Reg(t)
        };
        if ix.offset == 0 {
            scaled
        } else {
            let t = self.fresh("t", RegKind::I32);
            out.push(Instr::Bin {
                dst: t,
                op: AOp::Add,
                a: scaled,
                b: Operand::ImmI(ix.offset),
            });
            Operand::Reg(t)
        }
    }

    /// Load of a producer inside the group.
    fn lower_internal_load(
        &mut self,
        out: &mut Vec<Instr>,
        producer: String,
        idx: &[crate::pipeline::AffineIndex],
        coord: &[Operand],
        ctx: &AddrCtx,
    ) -> Operand {
        match ctx {
            AddrCtx::Shared => {
                // Producer-domain-clamped scratchpad addressing: the slot at
                // clamp(c + b) holds exactly the reference value read here.
                let p = self.stage_info(&producer);
                let dom = p.stage.domain.clone();
                let left = p.left.clone();
                let (arr, extents) = {
                    let s = p.scratch.as_ref().expect("consumed stage has a scratchpad");
                    (s.arr, s.extents.clone())
                };
                let kind = p.stage.kind;
                let sbase = self.sbase[&producer];
                let mut raw = Vec::new();
                for (d, ix) in idx.iter().enumerate() {
                    let pos = self.affine_apply(out, ix, coord[d]);
                    let q = self.clamp(out, pos, dom[d].0, dom[d].1);
                    let t = self.fresh("t", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: t,
                        op: AOp::Sub,
                        a: q,
                        b: Operand::Reg(self.base[d]),
                    });
                    if left[d] == 0 {
                        raw.push(Operand::Reg(t));
                    } else {
                        let t2 = self.fresh("t", RegKind::I32);
                        out.push(Instr::Bin {
                            dst: t2,
                            op: AOp::Add,
                            a: Operand::Reg(t),
                            b: Operand::ImmI(left[d]),
                        });
                        raw.push(Operand::Reg(t2));
                    }
                }
                let off = self.linearize(out, &raw, &extents, Some(sbase));
                let dst = self.fresh(
                    "v",
                    match kind {
                        ElemKind::F32 => RegKind::F32,
                        _ => RegKind::I32,
                    },
                );
                out.push(Instr::LoadShared { dst, arr, off });
                Operand::Reg(dst)
            }
            AddrCtx::Register { consumer, reg_iter, combo } => self.lower_register_load(
                out,
                &producer,
                idx,
                consumer,
                *reg_iter,
                combo,
            ),
        }
    }

    /// Register-phase producer load: own register, shuffle, or shared spill.
    fn lower_register_load(
        &mut self,
        out: &mut Vec<Instr>,
        producer: &str,
        idx: &[crate::pipeline::AffineIndex],
        consumer: &str,
        reg_iter: usize,
        combo: &[usize],
    ) -> Operand {
        let split = self.plan.split_dim.unwrap();
        let w = self.warp.0[split];
        let cinfo = self.stage_info(consumer);
        let shift_c = cinfo.right[split];
        let c_left = cinfo.left.clone();
        let pinfo = self.stage_info(producer);
        let shift_p = pinfo.right[split];
        let p_left = pinfo.left.clone();
        let p_dim_iters = pinfo.reg_dim_iters.clone();
        let kind = pinfo.stage.kind;
        let scratch = pinfo.scratch.as_ref().map(|s| (s.arr, s.extents.clone()));

        // Effective reach along the split dimension, relative to the
        // producer's slant.
        let b_split = idx[split].offset;
        let phi = b_split + shift_c;
        let phi_r = shift_p;

        // Non-split target iteration indices in the producer's register file.
        let mut p_combo = vec![0usize; self.ndim];
        for d in 0..self.ndim {
            if d == split {
                continue;
            }
            let b = idx[d].offset;
            let iq = if self.warp.0[d] == 1 {
                (combo[d] as i64 - c_left[d]) + b + p_left[d]
            } else {
                debug_assert_eq!(b, 0, "multi-lane non-split dims carry no offsets");
                combo[d] as i64
            };
            debug_assert!(
                iq >= 0 && (iq as usize) < p_dim_iters[d].max(1),
                "register target in range"
            );
            p_combo[d] = iq as usize;
        }

        // Representative classifications for the two lane ranges.
        let lo_class = classify_load(phi, phi_r, 0, w, reg_iter, reg_iter == 0);
        let diff = phi - phi_r;
        let m = ((-diff) % w as i64) as usize;

        let reg_of = |cg: &mut Self, ri: i64| -> RegId {
            let mut c = p_combo.clone();
            c[split] = ri as usize;
            cg.stage_reg(producer, ri as usize, &c, kind)
        };

        let spill_load = |cg: &mut Self, out: &mut Vec<Instr>, dst: RegId| {
            // Slot addressing: position p_split + b maps into the producer's
            // shared region. p_split for this point = lane + const offset.
            let (arr, extents) = scratch.clone().expect("spilled producer has a scratchpad");
            let const_off = ((cg.plan.shared_iters + reg_iter) * w) as i64 + shift_c + b_split
                + p_left[split];
            let mut raw: Vec<Operand> = Vec::new();
            for d in 0..cg.ndim {
                if d == split {
                    let t = cg.fresh("t", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: t,
                        op: AOp::Add,
                        a: Operand::Special(Special::Lane(d)),
                        b: Operand::ImmI(const_off),
                    });
                    raw.push(Operand::Reg(t));
                } else if cg.warp.0[d] == 1 {
                    raw.push(Operand::ImmI(p_combo[d] as i64));
                } else {
                    let t = cg.fresh("t", RegKind::I32);
                    out.push(Instr::Bin {
                        dst: t,
                        op: AOp::Add,
                        a: Operand::Special(Special::Lane(d)),
                        b: Operand::ImmI((p_combo[d] * cg.warp.0[d]) as i64),
                    });
                    raw.push(Operand::Reg(t));
                }
            }
            let sbase = cg.sbase[producer];
            let off = cg.linearize(out, &raw, &extents, Some(sbase));
            out.push(Instr::LoadShared { dst, arr, off });
        };

        let rk = match kind {
            ElemKind::F32 => RegKind::F32,
            _ => RegKind::I32,
        };

        if m == 0 {
            if lo_class.load_type == LoadType::OwnRegister {
                return Operand::Reg(reg_of(self, lo_class.reg_index));
            }
            // Whole warp reads left of the register region: shared spill.
            let dst = self.fresh("v", rk);
            spill_load(self, out, dst);
            return Operand::Reg(dst);
        }

        // Lane-dependent select between the two sides.
        let hi_class = classify_load(phi, phi_r, m, w, reg_iter, reg_iter == 0);
        let lane_stride: i64 = self.warp.0[..split].iter().product::<usize>() as i64;
        let val = self.fresh("v", rk);
        let shuffle_into = |cg: &mut Self,
                               out: &mut Vec<Instr>,
                               ri: i64,
                               lane_delta: i64|
         -> RegId {
            let src = reg_of(cg, ri);
            let sl = cg.fresh("t", RegKind::I32);
            out.push(Instr::Bin {
                dst: sl,
                op: AOp::Add,
                a: Operand::Special(Special::LaneLinear),
                b: Operand::ImmI(lane_delta * lane_stride),
            });
            let dst = cg.fresh("sh", rk);
            out.push(Instr::Shuffle { dst, src, src_lane: Operand::Reg(sl) });
            dst
        };

        let hi_shuffled = (hi_class.load_type == LoadType::CurrTileShuffle)
            .then(|| shuffle_into(self, out, hi_class.reg_index, -(m as i64)));
        let lo_shuffled = (lo_class.load_type == LoadType::PrevTileShuffle)
            .then(|| shuffle_into(self, out, lo_class.reg_index, (w - m) as i64));

        if hi_shuffled.is_none() && lo_shuffled.is_none() {
            // Both sides read the shared spill; no select needed.
            let dst = self.fresh("v", rk);
            spill_load(self, out, dst);
            return Operand::Reg(dst);
        }

        let cond = self.fresh("c", RegKind::I32);
        out.push(Instr::Cmp {
            dst: cond,
            op: COp::Lt,
            a: Operand::Special(Special::Lane(split)),
            b: Operand::ImmI(m as i64),
        });
        let mut then_ = Vec::new();
        match lo_shuffled {
            Some(sh) => then_.push(Instr::Mov { dst: val, a: Operand::Reg(sh) }),
            None => spill_load(self, &mut then_, val),
        }
        let mut else_ = Vec::new();
        match hi_shuffled {
            Some(sh) => else_.push(Instr::Mov { dst: val, a: Operand::Reg(sh) }),
            None => spill_load(self, &mut else_, val),
        }
        out.push(Instr::If { cond: Operand::Reg(cond), then_, else_ });
        Operand::Reg(val)
    }

    /// Static value kind of an expression (mirrors the promotion rules).
    fn expr_kind(&self, expr: &StencilExpr) -> RegKind {
        match expr {
            StencilExpr::ConstF(_) => RegKind::F32,
            StencilExpr::ConstI(_) => RegKind::I32,
            StencilExpr::ImageLoad { image, .. } => {
                match self.g.image(image).map(|i| i.kind) {
                    Some(ElemKind::F32) => RegKind::F32,
                    _ => RegKind::I32,
                }
            }
            StencilExpr::StageLoad { stage, .. } => {
                match self.g.stage(stage).map(|s| s.kind) {
                    Some(ElemKind::F32) => RegKind::F32,
                    _ => RegKind::I32,
                }
            }
            StencilExpr::Bin(op, a, b) => match op {
                PBinOp::Add | PBinOp::Sub | PBinOp::Mul | PBinOp::Div | PBinOp::Min
                | PBinOp::Max => {
                    if self.expr_kind(a) == RegKind::F32 || self.expr_kind(b) == RegKind::F32 {
                        RegKind::F32
                    } else {
                        RegKind::I32
                    }
                }
            },
            StencilExpr::Un(op, a) => match op {
                PUnOp::Sqrt | PUnOp::Exp => RegKind::F32,
                PUnOp::Abs | PUnOp::Neg => self.expr_kind(a),
            },
        }
    }
}

/// All iteration combos over non-split dimensions (split entry left 0),
/// dimension 0 fastest.
fn combos(dim_iters: &[usize], split: usize) -> Vec<Vec<usize>> {
    let ndim = dim_iters.len();
    let mut out = vec![vec![0usize; ndim]];
    for d in 0..ndim {
        if d == split {
            continue;
        }
        let mut next = Vec::with_capacity(out.len() * dim_iters[d].max(1));
        for i in 0..dim_iters[d].max(1) {
            for c in &out {
                let mut c = c.clone();
                c[d] = i;
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// Why the register phase cannot be emitted for this group, if it cannot.
fn hybrid_obstacle(
    g: &PipelineGraph,
    geom: &GroupGeometry,
    split: usize,
    warp: &WarpShape,
) -> Option<String> {
    // Non-split dimensions with several lanes cannot carry overlap: offsets
    // in those dimensions would need cross-lane traffic the parallelogram
    // split does not cover.
    for d in 0..geom.ndim {
        if d == split || warp.0[d] == 1 {
            continue;
        }
        for name in &geom.group {
            if geom.overlap(name)[d] != 0 {
                return Some(format!(
                    "dimension {d} has {} lanes and nonzero overlap",
                    warp.0[d]
                ));
            }
        }
    }
    // Stage domains must nest: every internal read of an in-domain consumer
    // point lands inside the producer's domain, so register values propagate
    // without clamping.
    for consumer in &geom.group {
        let cstage = g.stage(consumer).unwrap();
        let mut bad: Option<String> = None;
        cstage.expr.for_each_load(&mut |load| {
            if bad.is_some() {
                return;
            }
            if let StencilExpr::StageLoad { stage: p, idx } = load {
                if !geom.group.contains(p) {
                    return;
                }
                let pstage = g.stage(p).unwrap();
                for (d, ix) in idx.iter().enumerate() {
                    let (clo, chi) = cstage.domain[d];
                    let (plo, phi) = pstage.domain[d];
                    if clo + ix.offset < plo || chi + ix.offset > phi {
                        bad = Some(format!(
                            "reads of `{p}` clamp at the domain border in dimension {d}"
                        ));
                        return;
                    }
                }
            }
        });
        if bad.is_some() {
            return bad;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_tile_fragment_respects_the_plan() {
        let g = crate::fixtures::graph("blur");
        let gpu = crate::cost::GpuSpec::gtx1080ti();
        let group: Vec<String> = g.stages.iter().map(|s| s.name.clone()).collect();
        // frac 0 contributes nothing.
        let mut zero =
            GroupCodegen::for_group(&g, &group, [8, 1, 1], [64, 4, 1], 0.0, &gpu).unwrap();
        assert!(zero.register_tile_fragment("blurx").is_empty());
        // frac 0.5 on tile 16 unrolls eight iterations with warp shuffles.
        let mut half =
            GroupCodegen::for_group(&g, &group, [16, 1, 1], [64, 4, 1], 0.5, &gpu).unwrap();
        let frag = half.register_tile_fragment("blurx");
        assert!(!frag.is_empty());
        let movs = frag
            .iter()
            .filter(|i| matches!(i, Instr::Mov { dst, .. }
                if half.regs[*dst as usize].name.starts_with("r_blurx_")))
            .count();
        assert_eq!(movs, 8);
        let frag2 = half.register_tile_fragment("blury");
        assert!(frag2.iter().any(|i| matches!(i, Instr::Shuffle { .. })));
    }

    #[test]
    fn split_dimension_selection() {
        let w32 = WarpShape([32, 1, 1]);
        assert_eq!(select_split_dimension(&[8, 1, 1], &w32), Some(0));
        assert_eq!(select_split_dimension(&[1, 1, 1], &w32), None);
        let w162 = WarpShape([16, 2, 1]);
        assert_eq!(select_split_dimension(&[1, 4, 1], &w162), Some(1));
    }

    #[test]
    fn plan_quantizes_fraction() {
        let w = WarpShape([32, 1, 1]);
        let p = HybridPlan::new(&[16, 1, 1], &w, 0.5);
        assert_eq!((p.shared_iters, p.reg_iters), (8, 8));
        let p0 = HybridPlan::new(&[16, 1, 1], &w, 0.0);
        assert!(p0.shared_only());
        let p1 = HybridPlan::new(&[16, 1, 1], &w, 1.0);
        assert_eq!((p1.shared_iters, p1.reg_iters), (0, 16));
    }

    #[test]
    fn classify_matches_worked_cases() {
        // diff = -1, lane 0, first register iteration: shared memory.
        let c = classify_load(0, 1, 0, 32, 0, true);
        assert_eq!(c.load_type, LoadType::SharedMemory);
        // diff = -1, lane 5: current-tile shuffle from lane 4.
        let c = classify_load(0, 1, 5, 32, 0, true);
        assert_eq!(c.load_type, LoadType::CurrTileShuffle);
        assert_eq!(c.curr_tile_src_lane, Some(4));
        // diff = -1, lane 0, later iteration: previous-tile shuffle, lane 31.
        let c = classify_load(0, 1, 0, 32, 3, false);
        assert_eq!(c.load_type, LoadType::PrevTileShuffle);
        assert_eq!(c.prev_tile_src_lane, Some(31));
        assert_eq!(c.reg_index, 2);
        // diff = 0: own register at the same index.
        let c = classify_load(1, 1, 17, 32, 2, false);
        assert_eq!(c.load_type, LoadType::OwnRegister);
        assert_eq!(c.reg_index, 2);
    }

    /// Exhaustive lane-math check against position arithmetic: the returned
    /// source must hold exactly the target position `reg_iter*W + lane + diff`
    /// of the producer's register region, or be a shared load when that
    /// position precedes the region.
    #[test]
    fn classification_resolves_positions_exhaustively() {
        for w in [2usize, 4, 8, 16, 32] {
            for diff in (-2 * w as i64 + 1)..=0 {
                for lane in 0..w {
                    for (reg_iter, first) in [(0usize, true), (3, false)] {
                        let c = classify_load(diff, 0, lane, w, reg_iter, first);
                        let target = (reg_iter * w) as i64 + lane as i64 + diff;
                        match c.load_type {
                            LoadType::SharedMemory => {
                                assert!(target < 0, "w={w} diff={diff} lane={lane}");
                            }
                            LoadType::OwnRegister => {
                                assert_eq!(c.reg_index * w as i64 + lane as i64, target);
                            }
                            LoadType::CurrTileShuffle => {
                                let src = c.curr_tile_src_lane.unwrap();
                                assert!(src < w);
                                assert_eq!(c.reg_index * w as i64 + src as i64, target);
                                assert_eq!(c.reg_index as usize, reg_iter - (-diff as usize) / w);
                            }
                            LoadType::PrevTileShuffle => {
                                let src = c.prev_tile_src_lane.unwrap();
                                assert!(src < w);
                                assert_eq!(c.reg_index * w as i64 + src as i64, target);
                            }
                        }
                    }
                }
            }
        }
    }
}
