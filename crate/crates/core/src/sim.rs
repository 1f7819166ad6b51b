//! Deterministic lockstep warp simulator: the correctness oracle for
//! generated kernels in place of GPU execution.
//!
//! Warps run one after another (block-major, warp-major), each warp in strict
//! lockstep over the instruction stream. Divergence exists only as explicit
//! `If` masks, and a shuffle executed while any lane of the warp is masked off
//! is a hard error: that enforces the hoisted-shuffle discipline of the code
//! generator, which is stricter than hardware on purpose.
//!
//! The simulator also traces global-memory accesses and counts the distinct
//! aligned 32B/128B segments each warp access touches, which cross-checks the
//! cost model's transaction estimates.

use std::collections::HashMap;

use crate::ir::{AOp, COp, FOp, Instr, KernelIr, Operand, Special};
use crate::pipeline::{apply_bin, apply_un, BinOp, Buffer, ElemKind, UnOp, Value, ValueError};

const FULL_MASK: u32 = u32::MAX;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("missing input buffer `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has shape {got:?}, expected {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error("block shape {0:?} is not a whole number of {1}-lane warps")]
    BadBlockShape([usize; 3], usize),
    #[error("out-of-bounds shared access: array `{arr}` offset {off} (len {len})")]
    SharedOutOfBounds { arr: String, off: i64, len: usize },
    #[error("out-of-bounds global access: buffer `{buf}` coords {coords:?}")]
    GlobalOutOfBounds { buf: String, coords: Vec<i64> },
    #[error("read of never-written register `{0}`")]
    PoisonRegister(String),
    #[error("read of never-written shared slot {off} of `{arr}`")]
    PoisonShared { arr: String, off: usize },
    #[error("shuffle under a lane-divergent guard (mask {mask:#010x})")]
    DivergentShuffle { mask: u32 },
    #[error("arithmetic fault: {0}")]
    Arithmetic(#[from] ValueError),
}

/// Launch description. Grid/block/warp shapes come from the kernel itself;
/// the config controls tracing and (for tests) warp execution order.
#[derive(Debug, Clone, Default)]
pub struct SimConfig {
    /// Record one [`TraceRecord`] per executed global access.
    pub trace: bool,
    /// Permute warp execution order deterministically (tests the
    /// warp-order-independence of generated kernels).
    pub warp_order_seed: Option<u64>,
}

/// One executed global access of one warp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    /// Global warp number in execution order.
    pub warp: usize,
    pub is_store: bool,
    pub buf: String,
    /// Per-lane byte address; `None` for masked-off lanes.
    pub addrs: Vec<Option<u64>>,
    pub segs32: u32,
    pub segs128: u32,
}

/// Global-memory access trace plus per-warp load-transaction totals.
#[derive(Debug, Clone, Default)]
pub struct MemTrace {
    pub records: Vec<TraceRecord>,
    /// Per warp (dense, execution order): total load segments at 32B/128B.
    pub warp_load_segs32: Vec<u64>,
    pub warp_load_segs128: Vec<u64>,
}

impl MemTrace {
    /// Line-oriented dump: one line per access with lane addresses and counts.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let addrs: Vec<String> = r
                .addrs
                .iter()
                .map(|a| a.map(|v| v.to_string()).unwrap_or_else(|| "-".into()))
                .collect();
            out.push_str(&format!(
                "warp={} {} {} segs32={} segs128={} addrs={}\n",
                r.warp,
                if r.is_store { "store" } else { "load" },
                r.buf,
                r.segs32,
                r.segs128,
                addrs.join(",")
            ));
        }
        out
    }
}

#[derive(Debug)]
pub struct SimOutput {
    pub outputs: HashMap<String, Buffer>,
    pub trace: MemTrace,
    pub syncwarps_executed: u64,
    pub syncthreads_executed: u64,
}

/// Distinct aligned `tx_size`-byte segments touched by one warp access.
pub fn segments_touched(addrs: &[Option<u64>], tx_size: u64) -> u32 {
    let mut segs: Vec<u64> = addrs.iter().flatten().map(|a| a / tx_size).collect();
    segs.sort_unstable();
    segs.dedup();
    segs.len() as u32
}

/// Execute a kernel over its whole grid.
pub fn simulate_kernel(
    ir: &KernelIr,
    inputs: &HashMap<String, Buffer>,
    cfg: &SimConfig,
) -> Result<SimOutput, SimError> {
    let threads: usize = ir.block.iter().product();
    if ir.warp_size == 0 || threads % ir.warp_size != 0 {
        return Err(SimError::BadBlockShape(ir.block, ir.warp_size));
    }

    // Bind global buffers: inputs are borrowed copies, outputs allocated.
    let mut globals: Vec<Buffer> = Vec::with_capacity(ir.global_bufs.len());
    for decl in &ir.global_bufs {
        if decl.output {
            globals.push(Buffer::zeros(decl.kind, &decl.dims));
        } else {
            let buf = inputs
                .get(&decl.name)
                .ok_or_else(|| SimError::MissingInput(decl.name.clone()))?;
            if buf.dims != decl.dims {
                return Err(SimError::ShapeMismatch {
                    name: decl.name.clone(),
                    got: buf.dims.clone(),
                    want: decl.dims.clone(),
                });
            }
            globals.push(buf.clone());
        }
    }

    let n_blocks = ir.blocks_linear();
    let warps_pb = ir.warps_per_block_linear();
    let mut order: Vec<(usize, usize)> = (0..n_blocks)
        .flat_map(|b| (0..warps_pb).map(move |w| (b, w)))
        .collect();
    if let Some(seed) = cfg.warp_order_seed {
        let mut rng = crate::rng::SplitMix64::new(seed);
        for i in (1..order.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
    }

    // Shared memory lives per block and persists across that block's warps.
    let mut shared_by_block: HashMap<usize, Vec<Vec<Option<Value>>>> = HashMap::new();
    let mut machine = Machine {
        ir,
        globals,
        trace: MemTrace::default(),
        cfg,
        syncwarps: 0,
        syncthreads: 0,
        warp_seq: 0,
    };

    for &(block, warp) in &order {
        let shared = shared_by_block.entry(block).or_insert_with(|| {
            ir.shared.iter().map(|d| vec![None; d.len]).collect()
        });
        machine.run_warp(block, warp, shared)?;
    }

    let outputs = ir
        .global_bufs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.output)
        .map(|(i, d)| (d.name.clone(), machine.globals[i].clone()))
        .collect();
    Ok(SimOutput {
        outputs,
        trace: machine.trace,
        syncwarps_executed: machine.syncwarps,
        syncthreads_executed: machine.syncthreads,
    })
}

struct Machine<'a> {
    ir: &'a KernelIr,
    globals: Vec<Buffer>,
    trace: MemTrace,
    cfg: &'a SimConfig,
    syncwarps: u64,
    syncthreads: u64,
    warp_seq: usize,
}

struct WarpState {
    /// regs[lane][reg]; `None` = never written (poison).
    regs: Vec<Vec<Option<Value>>>,
    lane_ids: Vec<[i64; 3]>,
    warp_in_block: [i64; 3],
    block_idx: [i64; 3],
    n_lanes: usize,
}

impl Machine<'_> {
    fn run_warp(
        &mut self,
        block: usize,
        warp: usize,
        shared: &mut [Vec<Option<Value>>],
    ) -> Result<(), SimError> {
        let ir = self.ir;
        let g = ir.grid;
        let block_idx = [
            (block % g[0]) as i64,
            (block / g[0] % g[1]) as i64,
            (block / (g[0] * g[1])) as i64,
        ];
        let wpb = ir.warps_per_block;
        let warp_in_block = [
            (warp % wpb[0]) as i64,
            (warp / wpb[0] % wpb[1]) as i64,
            (warp / (wpb[0] * wpb[1])) as i64,
        ];
        let w = ir.warp;
        let n_lanes = ir.warp_size;
        let lane_ids: Vec<[i64; 3]> = (0..n_lanes)
            .map(|l| {
                [
                    (l % w[0]) as i64,
                    (l / w[0] % w[1]) as i64,
                    (l / (w[0] * w[1])) as i64,
                ]
            })
            .collect();
        let mut state = WarpState {
            regs: vec![vec![None; ir.regs.len()]; n_lanes],
            lane_ids,
            warp_in_block,
            block_idx,
            n_lanes,
        };
        let full = if n_lanes == 32 { FULL_MASK } else { (1u32 << n_lanes) - 1 };
        self.exec(&ir.body, &mut state, full, full, shared)?;
        self.warp_seq += 1;
        Ok(())
    }

    fn eval(&self, op: &Operand, state: &WarpState, lane: usize) -> Result<Value, SimError> {
        Ok(match op {
            Operand::Reg(r) => state.regs[lane][*r as usize].ok_or_else(|| {
                SimError::PoisonRegister(self.ir.regs[*r as usize].name.clone())
            })?,
            Operand::ImmI(v) => Value::I32(*v as i32),
            Operand::ImmF(v) => Value::F32(*v),
            Operand::Special(Special::Lane(d)) => Value::I32(state.lane_ids[lane][*d] as i32),
            Operand::Special(Special::LaneLinear) => Value::I32(lane as i32),
            Operand::Special(Special::WarpInBlock(d)) => {
                Value::I32(state.warp_in_block[*d] as i32)
            }
            Operand::Special(Special::Block(d)) => Value::I32(state.block_idx[*d] as i32),
            Operand::Param(i) => Value::I32(self.ir.params[*i].value as i32),
        })
    }

    fn eval_i64(&self, op: &Operand, state: &WarpState, lane: usize) -> Result<i64, SimError> {
        Ok(match self.eval(op, state, lane)? {
            Value::I32(v) => v as i64,
            Value::F32(v) => v as i64,
        })
    }

    fn exec(
        &mut self,
        instrs: &[Instr],
        state: &mut WarpState,
        mask: u32,
        entry_mask: u32,
        shared: &mut [Vec<Option<Value>>],
    ) -> Result<(), SimError> {
        let n_lanes = state.n_lanes;
        let lanes = move |m: u32| (0..n_lanes).filter(move |&l| m & (1 << l) != 0);
        for instr in instrs {
            match instr {
                Instr::Bin { dst, op, a, b } => {
                    for l in lanes(mask) {
                        let va = self.eval(a, state, l)?;
                        let vb = self.eval(b, state, l)?;
                        let v = match op {
                            AOp::Add => apply_bin(BinOp::Add, va, vb)?,
                            AOp::Sub => apply_bin(BinOp::Sub, va, vb)?,
                            AOp::Mul => apply_bin(BinOp::Mul, va, vb)?,
                            AOp::Div => apply_bin(BinOp::Div, va, vb)?,
                            AOp::Min => apply_bin(BinOp::Min, va, vb)?,
                            AOp::Max => apply_bin(BinOp::Max, va, vb)?,
                            AOp::And => Value::I32((va.is_truthy() && vb.is_truthy()) as i32),
                            AOp::Or => Value::I32((va.is_truthy() || vb.is_truthy()) as i32),
                        };
                        state.regs[l][*dst as usize] = Some(v);
                    }
                }
                Instr::Cmp { dst, op, a, b } => {
                    for l in lanes(mask) {
                        let va = self.eval(a, state, l)?;
                        let vb = self.eval(b, state, l)?;
                        let r = match (va, vb) {
                            (Value::I32(x), Value::I32(y)) => cmp_ord(*op, x.cmp(&y)),
                            _ => {
                                let (x, y) = (va.as_f32(), vb.as_f32());
                                match op {
                                    COp::Lt => x < y,
                                    COp::Le => x <= y,
                                    COp::Gt => x > y,
                                    COp::Ge => x >= y,
                                    COp::Eq => x == y,
                                    COp::Ne => x != y,
                                }
                            }
                        };
                        state.regs[l][*dst as usize] = Some(Value::I32(r as i32));
                    }
                }
                Instr::Un { dst, op, a } => {
                    for l in lanes(mask) {
                        let va = self.eval(a, state, l)?;
                        let v = match op {
                            FOp::Abs => apply_un(UnOp::Abs, va),
                            FOp::Sqrt => apply_un(UnOp::Sqrt, va),
                            FOp::Exp => apply_un(UnOp::Exp, va),
                            FOp::Neg => apply_un(UnOp::Neg, va),
                            FOp::ToF32 => Value::F32(va.as_f32()),
                            FOp::ToI32 => Value::I32(match va {
                                Value::I32(x) => x,
                                Value::F32(x) => x as i32,
                            }),
                            FOp::ToU8 => Value::I32(match va {
                                Value::I32(x) => x as u8 as i32,
                                Value::F32(x) => x as u8 as i32,
                            }),
                        };
                        state.regs[l][*dst as usize] = Some(v);
                    }
                }
                Instr::Mov { dst, a } => {
                    for l in lanes(mask) {
                        let v = self.eval(a, state, l)?;
                        state.regs[l][*dst as usize] = Some(v);
                    }
                }
                Instr::LoadGlobal { dst, buf, idx } => {
                    let mut addrs: Vec<Option<u64>> = vec![None; state.n_lanes];
                    for l in lanes(mask) {
                        let coords = self.coords(idx, state, l)?;
                        let (linear, addr) = self.global_linear(*buf, &coords)?;
                        let v = self.globals[*buf].get(linear);
                        state.regs[l][*dst as usize] = Some(v);
                        addrs[l] = Some(addr);
                    }
                    self.record_access(*buf, false, addrs);
                }
                Instr::StoreGlobal { buf, idx, src } => {
                    let mut addrs: Vec<Option<u64>> = vec![None; state.n_lanes];
                    for l in lanes(mask) {
                        let coords = self.coords(idx, state, l)?;
                        let (linear, addr) = self.global_linear(*buf, &coords)?;
                        let v = self.eval(src, state, l)?;
                        self.globals[*buf].set(linear, v);
                        addrs[l] = Some(addr);
                    }
                    self.record_access(*buf, true, addrs);
                }
                Instr::LoadShared { dst, arr, off } => {
                    for l in lanes(mask) {
                        let o = self.eval_i64(off, state, l)?;
                        let slots = &shared[*arr];
                        if o < 0 || o as usize >= slots.len() {
                            return Err(SimError::SharedOutOfBounds {
                                arr: self.ir.shared[*arr].name.clone(),
                                off: o,
                                len: slots.len(),
                            });
                        }
                        let v = slots[o as usize].ok_or(SimError::PoisonShared {
                            arr: self.ir.shared[*arr].name.clone(),
                            off: o as usize,
                        })?;
                        state.regs[l][*dst as usize] = Some(v);
                    }
                }
                Instr::StoreShared { arr, off, src } => {
                    for l in lanes(mask) {
                        let o = self.eval_i64(off, state, l)?;
                        let slots = &mut shared[*arr];
                        if o < 0 || o as usize >= slots.len() {
                            return Err(SimError::SharedOutOfBounds {
                                arr: self.ir.shared[*arr].name.clone(),
                                off: o,
                                len: slots.len(),
                            });
                        }
                        let v = self.eval(src, state, l)?;
                        slots[o as usize] = Some(store_cast(self.ir.shared[*arr].kind, v));
                    }
                }
                Instr::Shuffle { dst, src, src_lane } => {
                    if mask != entry_mask {
                        return Err(SimError::DivergentShuffle { mask });
                    }
                    // Gather first: every lane reads the pre-instruction value.
                    let mut gathered: Vec<Option<Value>> = vec![None; state.n_lanes];
                    for l in lanes(mask) {
                        let sl = self
                            .eval_i64(src_lane, state, l)?
                            .clamp(0, state.n_lanes as i64 - 1) as usize;
                        let v = state.regs[sl][*src as usize].ok_or_else(|| {
                            SimError::PoisonRegister(self.ir.regs[*src as usize].name.clone())
                        })?;
                        gathered[l] = Some(v);
                    }
                    for l in lanes(mask) {
                        state.regs[l][*dst as usize] = gathered[l];
                    }
                }
                Instr::SyncWarp => {
                    // Lockstep by construction; counted as a checkpoint.
                    self.syncwarps += 1;
                }
                Instr::SyncThreads => {
                    self.syncthreads += 1;
                }
                Instr::If { cond, then_, else_ } => {
                    let mut then_mask = 0u32;
                    let mut else_mask = 0u32;
                    for l in lanes(mask) {
                        if self.eval(cond, state, l)?.is_truthy() {
                            then_mask |= 1 << l;
                        } else {
                            else_mask |= 1 << l;
                        }
                    }
                    if then_mask != 0 {
                        self.exec(then_, state, then_mask, entry_mask, shared)?;
                    }
                    if else_mask != 0 {
                        self.exec(else_, state, else_mask, entry_mask, shared)?;
                    }
                }
                Instr::Loop { var, count, body } => {
                    for iter in 0..*count {
                        for l in 0..state.n_lanes {
                            state.regs[l][*var as usize] = Some(Value::I32(iter as i32));
                        }
                        self.exec(body, state, mask, entry_mask, shared)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn coords(&self, idx: &[Operand], state: &WarpState, lane: usize) -> Result<Vec<i64>, SimError> {
        idx.iter().map(|o| self.eval_i64(o, state, lane)).collect()
    }

    fn global_linear(&self, buf: usize, coords: &[i64]) -> Result<(usize, u64), SimError> {
        let decl = &self.ir.global_bufs[buf];
        let mut linear = 0usize;
        let mut stride = 1usize;
        for (d, &c) in coords.iter().enumerate() {
            if c < 0 || c as usize >= decl.dims[d] {
                return Err(SimError::GlobalOutOfBounds {
                    buf: decl.name.clone(),
                    coords: coords.to_vec(),
                });
            }
            linear += c as usize * stride;
            stride *= decl.dims[d];
        }
        let addr = linear as u64 * decl.kind.size_bytes() as u64;
        Ok((linear, addr))
    }

    fn record_access(&mut self, buf: usize, is_store: bool, addrs: Vec<Option<u64>>) {
        if addrs.iter().all(|a| a.is_none()) {
            return;
        }
        let segs32 = segments_touched(&addrs, 32);
        let segs128 = segments_touched(&addrs, 128);
        if !is_store {
            let trace = &mut self.trace;
            if trace.warp_load_segs32.len() <= self.warp_seq {
                trace.warp_load_segs32.resize(self.warp_seq + 1, 0);
                trace.warp_load_segs128.resize(self.warp_seq + 1, 0);
            }
            trace.warp_load_segs32[self.warp_seq] += segs32 as u64;
            trace.warp_load_segs128[self.warp_seq] += segs128 as u64;
        }
        if self.cfg.trace {
            let name = self.ir.global_bufs[buf].name.clone();
            self.trace.records.push(TraceRecord {
                warp: self.warp_seq,
                is_store,
                buf: name,
                addrs,
                segs32,
                segs128,
            });
        }
    }
}

fn cmp_ord(op: COp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        COp::Lt => ord == Less,
        COp::Le => ord != Greater,
        COp::Gt => ord == Greater,
        COp::Ge => ord != Less,
        COp::Eq => ord == Equal,
        COp::Ne => ord != Equal,
    }
}

/// Cast a value for storage into a slot of the given element kind, matching
/// [`Buffer::set`] + [`Buffer::get`] composition exactly.
pub fn store_cast(kind: ElemKind, v: Value) -> Value {
    match kind {
        ElemKind::F32 => Value::F32(v.as_f32()),
        ElemKind::I32 => Value::I32(match v {
            Value::I32(x) => x,
            Value::F32(x) => x as i32,
        }),
        ElemKind::U8 => Value::I32(match v {
            Value::I32(x) => x as u8 as i32,
            Value::F32(x) => x as u8 as i32,
        }),
    }
}

// ---------------------------------------------------------------------------
// Output comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    BitExact,
    /// Float comparisons allow up to this many units in the last place.
    Ulp(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub pass: bool,
    /// First differing (buffer, linear index, left, right).
    pub first_diff: Option<(String, usize, String, String)>,
    pub elements_compared: usize,
}

/// Compare two output maps buffer by buffer.
pub fn compare_outputs(
    a: &HashMap<String, Buffer>,
    b: &HashMap<String, Buffer>,
    mode: CompareMode,
) -> Result<CompareReport, SimError> {
    let mut compared = 0usize;
    let mut names: Vec<&String> = a.keys().collect();
    names.sort();
    for name in names {
        let ba = &a[name];
        let bb = b.get(name).ok_or_else(|| SimError::MissingInput(name.clone()))?;
        if ba.dims != bb.dims || ba.kind() != bb.kind() {
            return Err(SimError::ShapeMismatch {
                name: name.clone(),
                got: bb.dims.clone(),
                want: ba.dims.clone(),
            });
        }
        for i in 0..ba.len() {
            compared += 1;
            let (va, vb) = (ba.get(i), bb.get(i));
            let equal = match (mode, va, vb) {
                (CompareMode::BitExact, _, _) => va.bits() == vb.bits(),
                (CompareMode::Ulp(n), Value::F32(x), Value::F32(y)) => ulp_distance(x, y) <= n as u64,
                (CompareMode::Ulp(_), _, _) => va.bits() == vb.bits(),
            };
            if !equal {
                return Ok(CompareReport {
                    pass: false,
                    first_diff: Some((name.clone(), i, va.to_string(), vb.to_string())),
                    elements_compared: compared,
                });
            }
        }
    }
    Ok(CompareReport { pass: true, first_diff: None, elements_compared: compared })
}

fn ulp_distance(a: f32, b: f32) -> u64 {
    if a.to_bits() == b.to_bits() {
        return 0;
    }
    if a.is_nan() || b.is_nan() || a.is_sign_positive() != b.is_sign_positive() {
        return u64::MAX;
    }
    let (x, y) = (a.to_bits() as i64, b.to_bits() as i64);
    x.abs_diff(y)
}

/// Static census of synchronization instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncCounts {
    pub syncwarp: usize,
    pub syncthreads: usize,
}

pub fn count_sync_stalls(ir: &KernelIr) -> SyncCounts {
    let mut counts = SyncCounts { syncwarp: 0, syncthreads: 0 };
    ir.visit(&mut |i| match i {
        Instr::SyncWarp => counts.syncwarp += 1,
        Instr::SyncThreads => counts.syncthreads += 1,
        _ => {}
    });
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GlobalBuf, RegDecl, RegKind, SharedDecl};

    fn kernel_shell(regs: Vec<RegDecl>, body: Vec<Instr>) -> KernelIr {
        KernelIr {
            name: "k".into(),
            stages: vec![],
            grid: [1, 1, 1],
            block: [32, 1, 1],
            warp: [32, 1, 1],
            warps_per_block: [1, 1, 1],
            warp_size: 32,
            params: vec![],
            global_bufs: vec![],
            shared: vec![],
            regs,
            body,
            hybrid: false,
            fallback_reason: None,
        }
    }

    /// Butterfly reduction: val starts as the lane id; after offsets
    /// 16,8,4,2,1 of `val += shuffle(val, lane + offset)`, lane 0 holds the
    /// sum over all 32 lanes.
    #[test]
    fn butterfly_reduction_sums_lane_ids() {
        let regs = vec![
            RegDecl { name: "val".into(), kind: RegKind::I32 },
            RegDecl { name: "peer".into(), kind: RegKind::I32 },
            RegDecl { name: "srcl".into(), kind: RegKind::I32 },
        ];
        let mut body = vec![Instr::Mov { dst: 0, a: Operand::Special(Special::LaneLinear) }];
        for offset in [16i64, 8, 4, 2, 1] {
            body.push(Instr::Bin {
                dst: 2,
                op: AOp::Add,
                a: Operand::Special(Special::LaneLinear),
                b: Operand::ImmI(offset),
            });
            body.push(Instr::Shuffle { dst: 1, src: 0, src_lane: Operand::Reg(2) });
            body.push(Instr::Bin { dst: 0, op: AOp::Add, a: Operand::Reg(0), b: Operand::Reg(1) });
        }
        let mut k = kernel_shell(regs, body);
        k.global_bufs.push(GlobalBuf {
            name: "out".into(),
            kind: ElemKind::I32,
            dims: vec![32],
            origin: vec![0],
            output: true,
        });
        k.body.push(Instr::StoreGlobal {
            buf: 0,
            idx: vec![Operand::Special(Special::LaneLinear)],
            src: Operand::Reg(0),
        });
        let out = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap();
        match &out.outputs["out"].data {
            crate::pipeline::BufferData::I32(v) => assert_eq!(v[0], 496),
            _ => panic!(),
        }
    }

    #[test]
    fn identity_shuffle_returns_own_value() {
        let regs = vec![
            RegDecl { name: "val".into(), kind: RegKind::I32 },
            RegDecl { name: "got".into(), kind: RegKind::I32 },
        ];
        let body = vec![
            Instr::Mov { dst: 0, a: Operand::Special(Special::LaneLinear) },
            Instr::Shuffle { dst: 1, src: 0, src_lane: Operand::Special(Special::LaneLinear) },
        ];
        let mut k = kernel_shell(regs, body);
        k.global_bufs.push(GlobalBuf {
            name: "out".into(),
            kind: ElemKind::I32,
            dims: vec![32],
            origin: vec![0],
            output: true,
        });
        k.body.push(Instr::StoreGlobal {
            buf: 0,
            idx: vec![Operand::Special(Special::LaneLinear)],
            src: Operand::Reg(1),
        });
        let out = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap();
        match &out.outputs["out"].data {
            crate::pipeline::BufferData::I32(v) => {
                assert_eq!(*v, (0..32).collect::<Vec<i32>>());
            }
            _ => panic!(),
        }
    }

    #[test]
    fn divergent_shuffle_is_a_hard_error() {
        let regs = vec![
            RegDecl { name: "val".into(), kind: RegKind::I32 },
            RegDecl { name: "cond".into(), kind: RegKind::I32 },
        ];
        let body = vec![
            Instr::Mov { dst: 0, a: Operand::Special(Special::LaneLinear) },
            Instr::Cmp {
                dst: 1,
                op: COp::Lt,
                a: Operand::Special(Special::LaneLinear),
                b: Operand::ImmI(5),
            },
            Instr::If {
                cond: Operand::Reg(1),
                then_: vec![Instr::Shuffle {
                    dst: 0,
                    src: 0,
                    src_lane: Operand::ImmI(0),
                }],
                else_: vec![],
            },
        ];
        let k = kernel_shell(regs, body);
        let err = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap_err();
        assert!(matches!(err, SimError::DivergentShuffle { .. }));
    }

    #[test]
    fn poison_register_read_is_an_error() {
        let regs = vec![
            RegDecl { name: "a".into(), kind: RegKind::I32 },
            RegDecl { name: "never".into(), kind: RegKind::I32 },
        ];
        let body = vec![Instr::Mov { dst: 0, a: Operand::Reg(1) }];
        let k = kernel_shell(regs, body);
        let err = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap_err();
        assert_eq!(err, SimError::PoisonRegister("never".into()));
    }

    #[test]
    fn shared_out_of_bounds_is_an_error() {
        let regs = vec![RegDecl { name: "a".into(), kind: RegKind::F32 }];
        let mut k = kernel_shell(
            regs,
            vec![Instr::LoadShared {
                dst: 0,
                arr: 0,
                off: Operand::ImmI(99),
            }],
        );
        k.shared.push(SharedDecl { name: "sp".into(), kind: ElemKind::F32, len: 16 });
        let err = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap_err();
        assert!(matches!(err, SimError::SharedOutOfBounds { .. }));
    }

    #[test]
    fn loop_variable_counts_and_guards_mask_stores() {
        // out[lane] = number of loop iterations where iter <= lane, for
        // lane < 4 only.
        let regs = vec![
            RegDecl { name: "acc".into(), kind: RegKind::I32 },
            RegDecl { name: "it".into(), kind: RegKind::I32 },
            RegDecl { name: "cond".into(), kind: RegKind::I32 },
            RegDecl { name: "inlane".into(), kind: RegKind::I32 },
        ];
        let body = vec![
            Instr::Mov { dst: 0, a: Operand::ImmI(0) },
            Instr::Loop {
                var: 1,
                count: 4,
                body: vec![
                    Instr::Cmp {
                        dst: 2,
                        op: COp::Le,
                        a: Operand::Reg(1),
                        b: Operand::Special(Special::LaneLinear),
                    },
                    Instr::If {
                        cond: Operand::Reg(2),
                        then_: vec![Instr::Bin {
                            dst: 0,
                            op: AOp::Add,
                            a: Operand::Reg(0),
                            b: Operand::ImmI(1),
                        }],
                        else_: vec![],
                    },
                ],
            },
            Instr::Cmp {
                dst: 3,
                op: COp::Lt,
                a: Operand::Special(Special::LaneLinear),
                b: Operand::ImmI(4),
            },
            Instr::If {
                cond: Operand::Reg(3),
                then_: vec![Instr::StoreGlobal {
                    buf: 0,
                    idx: vec![Operand::Special(Special::LaneLinear)],
                    src: Operand::Reg(0),
                }],
                else_: vec![],
            },
        ];
        let mut k = kernel_shell(regs, body);
        k.global_bufs.push(GlobalBuf {
            name: "out".into(),
            kind: ElemKind::I32,
            dims: vec![4],
            origin: vec![0],
            output: true,
        });
        let out = simulate_kernel(&k, &HashMap::new(), &SimConfig::default()).unwrap();
        match &out.outputs["out"].data {
            crate::pipeline::BufferData::I32(v) => assert_eq!(*v, vec![1, 2, 3, 4]),
            _ => panic!(),
        }
    }

    #[test]
    fn trace_counts_coalesced_segments() {
        // One warp loads 32 consecutive f32: 1 segment at 128B, 4 at 32B.
        let regs = vec![RegDecl { name: "v".into(), kind: RegKind::F32 }];
        let body = vec![Instr::LoadGlobal {
            dst: 0,
            buf: 0,
            idx: vec![Operand::Special(Special::LaneLinear)],
        }];
        let mut k = kernel_shell(regs, body);
        k.global_bufs.push(GlobalBuf {
            name: "img".into(),
            kind: ElemKind::F32,
            dims: vec![32],
            origin: vec![0],
            output: false,
        });
        let mut inputs = HashMap::new();
        inputs.insert("img".to_string(), Buffer::zeros(ElemKind::F32, &[32]));
        let out =
            simulate_kernel(&k, &inputs, &SimConfig { trace: true, warp_order_seed: None })
                .unwrap();
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.trace.records[0].segs128, 1);
        assert_eq!(out.trace.records[0].segs32, 4);
        assert_eq!(out.trace.warp_load_segs128, vec![1]);
    }

    #[test]
    fn compare_reports_first_diff_and_ulp_mode() {
        let mut a = HashMap::new();
        let mut b = HashMap::new();
        a.insert("o".to_string(), Buffer::zeros(ElemKind::F32, &[8]));
        let mut bb = Buffer::zeros(ElemKind::F32, &[8]);
        // One trailing-bit flip at index 3.
        bb.set(3, Value::F32(f32::from_bits(0.0f32.to_bits() ^ 1)));
        b.insert("o".to_string(), bb);
        let rep = compare_outputs(&a, &b, CompareMode::BitExact).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.first_diff.as_ref().unwrap().1, 3);
        let rep2 = compare_outputs(&a, &b, CompareMode::Ulp(2)).unwrap();
        assert!(rep2.pass);
    }

    #[test]
    fn sync_census_counts_both_kinds() {
        let k = kernel_shell(
            vec![RegDecl { name: "i".into(), kind: RegKind::I32 }],
            vec![
                Instr::SyncWarp,
                Instr::Loop { var: 0, count: 3, body: vec![Instr::SyncThreads] },
            ],
        );
        let c = count_sync_stalls(&k);
        assert_eq!(c, SyncCounts { syncwarp: 1, syncthreads: 1 });
        let empty = kernel_shell(vec![], vec![]);
        assert_eq!(count_sync_stalls(&empty), SyncCounts { syncwarp: 0, syncthreads: 0 });
    }
}
