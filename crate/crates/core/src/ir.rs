//! Kernel IR: a straight-line/loop program executed per warp, with shared
//! scratchpads, named per-lane registers, warp shuffles, and warp barriers.
//!
//! The IR is deliberately low level. Register arrays are already unrolled to
//! named scalars, addresses are ordinary integer arithmetic, and every value
//! operation maps 1:1 onto the scalar semantics in [`crate::pipeline`], which
//! is what makes simulator output bit-comparable with the reference
//! interpreter.

use serde::{Deserialize, Serialize};

use crate::pipeline::ElemKind;

pub type RegId = u32;

/// Values wired in by the launch environment, readable anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Special {
    /// Lane index within the warp along one dimension of the warp shape.
    Lane(usize),
    /// Lane index linearized over the warp shape (dimension 0 fastest).
    LaneLinear,
    /// Warp index within the thread block along one dimension.
    WarpInBlock(usize),
    /// Block index along one dimension.
    Block(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    Reg(RegId),
    ImmI(i64),
    ImmF(f32),
    Special(Special),
    /// Kernel scalar parameter (index into [`KernelIr::params`]).
    Param(usize),
}

/// Binary arithmetic; `And`/`Or` operate on 0/1 integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum COp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Unary functions, including the store casts that mirror buffer semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FOp {
    Abs,
    Sqrt,
    Exp,
    Neg,
    ToF32,
    ToI32,
    /// Wrap to u8 then widen back to i32 (u8 storage semantics).
    ToU8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Instr {
    Bin { dst: RegId, op: AOp, a: Operand, b: Operand },
    Cmp { dst: RegId, op: COp, a: Operand, b: Operand },
    Un { dst: RegId, op: FOp, a: Operand },
    Mov { dst: RegId, a: Operand },
    /// Per-lane load from a global buffer; one coordinate operand per dim.
    LoadGlobal { dst: RegId, buf: usize, idx: Vec<Operand> },
    /// Per-lane store; the value is cast to the buffer's element kind.
    StoreGlobal { buf: usize, idx: Vec<Operand>, src: Operand },
    /// Per-lane load at a linear offset into a shared array.
    LoadShared { dst: RegId, arr: usize, off: Operand },
    StoreShared { arr: usize, off: Operand, src: Operand },
    /// Full-warp shuffle: every lane receives `src` as held by the lane whose
    /// linear id is `src_lane` (clamped into the warp). Must never appear
    /// under a lane-divergent guard.
    Shuffle { dst: RegId, src: RegId, src_lane: Operand },
    SyncWarp,
    SyncThreads,
    If { cond: Operand, then_: Vec<Instr>, else_: Vec<Instr> },
    Loop { var: RegId, count: usize, body: Vec<Instr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegKind {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegDecl {
    pub name: String,
    pub kind: RegKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedDecl {
    pub name: String,
    pub kind: ElemKind,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBuf {
    pub name: String,
    pub kind: ElemKind,
    pub dims: Vec<usize>,
    /// Domain origin of the stage the buffer holds (zeros for images).
    pub origin: Vec<i64>,
    pub output: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParam {
    pub name: String,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelIr {
    pub name: String,
    /// Stages computed by this kernel, topological order.
    pub stages: Vec<String>,
    pub grid: [usize; 3],
    pub block: [usize; 3],
    pub warp: [usize; 3],
    pub warps_per_block: [usize; 3],
    pub warp_size: usize,
    pub params: Vec<KernelParam>,
    pub global_bufs: Vec<GlobalBuf>,
    pub shared: Vec<SharedDecl>,
    pub regs: Vec<RegDecl>,
    pub body: Vec<Instr>,
    /// True when a register phase was emitted (hybrid tiling active).
    pub hybrid: bool,
    /// Why hybrid emission degraded to shared-only, when it did.
    pub fallback_reason: Option<String>,
}

impl KernelIr {
    pub fn warps_per_block_linear(&self) -> usize {
        self.warps_per_block.iter().product()
    }

    pub fn blocks_linear(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn buf_index(&self, name: &str) -> Option<usize> {
        self.global_bufs.iter().position(|b| b.name == name)
    }

    /// Visit all instructions depth-first in program order.
    pub fn visit<F: FnMut(&Instr)>(&self, f: &mut F) {
        fn walk<F: FnMut(&Instr)>(instrs: &[Instr], f: &mut F) {
            for i in instrs {
                f(i);
                match i {
                    Instr::If { then_, else_, .. } => {
                        walk(then_, f);
                        walk(else_, f);
                    }
                    Instr::Loop { body, .. } => walk(body, f),
                    _ => {}
                }
            }
        }
        walk(&self.body, f);
    }
}

// ---------------------------------------------------------------------------
// CUDA-dialect rendering
// ---------------------------------------------------------------------------

/// Render the kernel as CUDA-dialect source text. Deterministic: the same IR
/// always produces byte-identical text. The text is an output artifact; tests
/// execute the IR through the simulator instead.
pub fn render_cuda(ir: &KernelIr) -> String {
    let mut out = String::new();
    let p = &mut out;
    use std::fmt::Write;

    let mut sig: Vec<String> = Vec::new();
    for b in &ir.global_bufs {
        let ty = cuda_ty(b.kind);
        if b.output {
            sig.push(format!("{ty}* {}", b.name));
        } else {
            sig.push(format!("const {ty}* __restrict__ {}", b.name));
        }
    }
    for param in &ir.params {
        sig.push(format!("int {}", param.name));
    }
    let _ = writeln!(p, "extern \"C\" __global__ void {}({}) {{", ir.name, sig.join(", "));

    let w = ir.warp;
    let _ = writeln!(p, "  const int lane_x = threadIdx.x % {};", w[0]);
    let _ = writeln!(p, "  const int lane_y = threadIdx.y % {};", w[1]);
    let _ = writeln!(p, "  const int lane_z = threadIdx.z % {};", w[2]);
    let _ = writeln!(p, "  const int lane = lane_x + {} * (lane_y + {} * lane_z);", w[0], w[1]);
    let _ = writeln!(p, "  const int warp_x = threadIdx.x / {};", w[0]);
    let _ = writeln!(p, "  const int warp_y = threadIdx.y / {};", w[1]);
    let _ = writeln!(p, "  const int warp_z = threadIdx.z / {};", w[2]);
    for decl in &ir.shared {
        let _ = writeln!(p, "  __shared__ {} {}[{}];", cuda_ty(decl.kind), decl.name, decl.len);
    }
    // Loop variables are declared by their `for` statements.
    let mut loop_vars = std::collections::HashSet::new();
    ir.visit(&mut |i| {
        if let Instr::Loop { var, .. } = i {
            loop_vars.insert(*var);
        }
    });
    for (id, reg) in ir.regs.iter().enumerate() {
        if loop_vars.contains(&(id as RegId)) {
            continue;
        }
        let ty = match reg.kind {
            RegKind::F32 => "float",
            RegKind::I32 => "int",
        };
        let _ = writeln!(p, "  {ty} {};", reg.name);
    }
    render_instrs(p, ir, &ir.body, 1);
    let _ = writeln!(p, "}}");
    out
}

fn cuda_ty(kind: ElemKind) -> &'static str {
    match kind {
        ElemKind::F32 => "float",
        ElemKind::I32 => "int",
        ElemKind::U8 => "unsigned char",
    }
}

fn operand(ir: &KernelIr, o: &Operand) -> String {
    match o {
        Operand::Reg(r) => ir.regs[*r as usize].name.clone(),
        Operand::ImmI(v) => format!("{v}"),
        Operand::ImmF(v) => format!("{v:?}f"),
        Operand::Special(Special::Lane(d)) => format!("lane_{}", ["x", "y", "z"][*d]),
        Operand::Special(Special::LaneLinear) => "lane".to_string(),
        Operand::Special(Special::WarpInBlock(d)) => format!("warp_{}", ["x", "y", "z"][*d]),
        Operand::Special(Special::Block(d)) => format!("blockIdx.{}", ["x", "y", "z"][*d]),
        Operand::Param(i) => ir.params[*i].name.clone(),
    }
}

fn reg_name(ir: &KernelIr, r: RegId) -> &str {
    &ir.regs[r as usize].name
}

fn global_index(ir: &KernelIr, buf: usize, idx: &[Operand]) -> String {
    // Row-major, dimension 0 innermost.
    let dims = &ir.global_bufs[buf].dims;
    let mut terms: Vec<String> = Vec::new();
    let mut stride = 1usize;
    for (d, op) in idx.iter().enumerate() {
        if stride == 1 {
            terms.push(operand(ir, op));
        } else {
            terms.push(format!("{} * {}", operand(ir, op), stride));
        }
        stride *= dims[d];
    }
    terms.join(" + ")
}

fn render_instrs(out: &mut String, ir: &KernelIr, instrs: &[Instr], depth: usize) {
    use std::fmt::Write;
    let pad = "  ".repeat(depth);
    for i in instrs {
        match i {
            Instr::Bin { dst, op, a, b } => {
                let (sa, sb) = (operand(ir, a), operand(ir, b));
                let is_f32 = matches!(ir.regs[*dst as usize].kind, RegKind::F32);
                let expr = match op {
                    AOp::Add => format!("{sa} + {sb}"),
                    AOp::Sub => format!("{sa} - {sb}"),
                    AOp::Mul => format!("{sa} * {sb}"),
                    AOp::Div => format!("{sa} / {sb}"),
                    AOp::Min => {
                        if is_f32 {
                            format!("fminf({sa}, {sb})")
                        } else {
                            format!("min({sa}, {sb})")
                        }
                    }
                    AOp::Max => {
                        if is_f32 {
                            format!("fmaxf({sa}, {sb})")
                        } else {
                            format!("max({sa}, {sb})")
                        }
                    }
                    AOp::And => format!("{sa} && {sb}"),
                    AOp::Or => format!("{sa} || {sb}"),
                };
                let _ = writeln!(out, "{pad}{} = {expr};", reg_name(ir, *dst));
            }
            Instr::Cmp { dst, op, a, b } => {
                let sym = match op {
                    COp::Lt => "<",
                    COp::Le => "<=",
                    COp::Gt => ">",
                    COp::Ge => ">=",
                    COp::Eq => "==",
                    COp::Ne => "!=",
                };
                let _ = writeln!(
                    out,
                    "{pad}{} = {} {} {};",
                    reg_name(ir, *dst),
                    operand(ir, a),
                    sym,
                    operand(ir, b)
                );
            }
            Instr::Un { dst, op, a } => {
                let sa = operand(ir, a);
                let expr = match op {
                    FOp::Abs => format!("fabsf({sa})"),
                    FOp::Sqrt => format!("sqrtf({sa})"),
                    FOp::Exp => format!("expf({sa})"),
                    FOp::Neg => format!("-{sa}"),
                    FOp::ToF32 => format!("(float)({sa})"),
                    FOp::ToI32 => format!("(int)({sa})"),
                    FOp::ToU8 => format!("(int)(unsigned char)({sa})"),
                };
                let _ = writeln!(out, "{pad}{} = {expr};", reg_name(ir, *dst));
            }
            Instr::Mov { dst, a } => {
                let _ = writeln!(out, "{pad}{} = {};", reg_name(ir, *dst), operand(ir, a));
            }
            Instr::LoadGlobal { dst, buf, idx } => {
                let _ = writeln!(
                    out,
                    "{pad}{} = {}[{}];",
                    reg_name(ir, *dst),
                    ir.global_bufs[*buf].name,
                    global_index(ir, *buf, idx)
                );
            }
            Instr::StoreGlobal { buf, idx, src } => {
                let _ = writeln!(
                    out,
                    "{pad}{}[{}] = {};",
                    ir.global_bufs[*buf].name,
                    global_index(ir, *buf, idx),
                    operand(ir, src)
                );
            }
            Instr::LoadShared { dst, arr, off } => {
                let _ = writeln!(
                    out,
                    "{pad}{} = {}[{}];",
                    reg_name(ir, *dst),
                    ir.shared[*arr].name,
                    operand(ir, off)
                );
            }
            Instr::StoreShared { arr, off, src } => {
                let _ = writeln!(
                    out,
                    "{pad}{}[{}] = {};",
                    ir.shared[*arr].name,
                    operand(ir, off),
                    operand(ir, src)
                );
            }
            Instr::Shuffle { dst, src, src_lane } => {
                let _ = writeln!(
                    out,
                    "{pad}{} = __shfl_sync(0xffffffff, {}, {}, {});",
                    reg_name(ir, *dst),
                    reg_name(ir, *src),
                    operand(ir, src_lane),
                    ir.warp_size
                );
            }
            Instr::SyncWarp => {
                let _ = writeln!(out, "{pad}__syncwarp();");
            }
            Instr::SyncThreads => {
                let _ = writeln!(out, "{pad}__syncthreads();");
            }
            Instr::If { cond, then_, else_ } => {
                let _ = writeln!(out, "{pad}if ({}) {{", operand(ir, cond));
                render_instrs(out, ir, then_, depth + 1);
                if !else_.is_empty() {
                    let _ = writeln!(out, "{pad}}} else {{");
                    render_instrs(out, ir, else_, depth + 1);
                }
                let _ = writeln!(out, "{pad}}}");
            }
            Instr::Loop { var, count, body } => {
                let v = reg_name(ir, *var).to_string();
                let _ = writeln!(out, "{pad}for (int {v} = 0; {v} < {count}; ++{v}) {{");
                render_instrs(out, ir, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
        }
    }
}
