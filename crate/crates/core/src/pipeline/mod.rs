//! Pipeline model: a DAG of affine stencil stages over rectangular integer
//! domains, plus the buffers and scalar value semantics shared by the
//! reference interpreter and the kernel simulator.

mod eval;
mod parse;

pub use eval::{reference_eval, reference_eval_with_stats, EvalError, EvalStats};
pub use parse::{parse_pipeline, print_pipeline, ParseError};

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of an image, stage, or buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemKind {
    F32,
    I32,
    U8,
}

impl ElemKind {
    pub fn size_bytes(self) -> usize {
        match self {
            ElemKind::F32 | ElemKind::I32 => 4,
            ElemKind::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemKind::F32 => "float32",
            ElemKind::I32 => "int32",
            ElemKind::U8 => "uint8",
        }
    }
}

/// An input image parameter: name, per-dimension extents, element kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageParam {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ElemKind,
}

/// One per-dimension index expression of a load, normalized to `coef*var + offset`
/// where `var` is the consuming stage's iteration variable for that dimension.
///
/// The parser only produces `coef == 1`; other coefficients can be built by
/// hand to model scaled accesses, which the grouping legality check rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineIndex {
    pub coef: i64,
    pub offset: i64,
}

impl AffineIndex {
    pub fn shift(offset: i64) -> Self {
        AffineIndex { coef: 1, offset }
    }

    pub fn apply(&self, x: i64) -> i64 {
        self.coef * x + self.offset
    }
}

/// Binary arithmetic operators available in stage expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

/// Unary scalar functions available in stage expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Abs,
    Sqrt,
    Exp,
    Neg,
}

/// Expression tree of a stage body.
#[derive(Debug, Clone, PartialEq)]
pub enum StencilExpr {
    ConstF(f32),
    ConstI(i64),
    /// Load from an input image; one index per image dimension.
    ImageLoad { image: String, idx: Vec<AffineIndex> },
    /// Load from an earlier stage; one index per producer dimension.
    StageLoad { stage: String, idx: Vec<AffineIndex> },
    Bin(BinOp, Box<StencilExpr>, Box<StencilExpr>),
    Un(UnOp, Box<StencilExpr>),
}

impl StencilExpr {
    /// Visit every load in evaluation (left-to-right) order.
    pub fn for_each_load<F: FnMut(&StencilExpr)>(&self, f: &mut F) {
        match self {
            StencilExpr::ImageLoad { .. } | StencilExpr::StageLoad { .. } => f(self),
            StencilExpr::Bin(_, a, b) => {
                a.for_each_load(f);
                b.for_each_load(f);
            }
            StencilExpr::Un(_, a) => a.for_each_load(f),
            _ => {}
        }
    }
}

/// One pipeline stage: a function from its rectangular domain to values.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    /// Per-dimension closed interval `[lo, hi]`.
    pub domain: Vec<(i64, i64)>,
    pub expr: StencilExpr,
    pub kind: ElemKind,
}

impl Stage {
    pub fn ndim(&self) -> usize {
        self.domain.len()
    }

    pub fn extents(&self) -> Vec<usize> {
        self.domain.iter().map(|&(lo, hi)| (hi - lo + 1) as usize).collect()
    }
}

/// A validated pipeline: images, stages in declaration (producer-first) order,
/// and the set of externally visible stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineGraph {
    pub images: Vec<ImageParam>,
    pub stages: Vec<Stage>,
    pub liveouts: Vec<String>,
}

/// Graph construction and validation failures.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("no stages")]
    NoStages,
    #[error("no liveouts")]
    NoLiveouts,
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("stage `{stage}` references undeclared `{name}`")]
    Undeclared { stage: String, name: String },
    #[error("cyclic reference in stage `{0}`")]
    CyclicReference(String),
    #[error("stage `{stage}`: load of `{name}` has {got} indices, expected {want}")]
    IndexArity { stage: String, name: String, got: usize, want: usize },
    #[error("empty domain in stage `{0}`")]
    EmptyDomain(String),
    #[error("image `{0}` has a zero extent")]
    EmptyImage(String),
    #[error("`{0}` has {1} dimensions; only 1-3 are supported")]
    TooManyDims(String, usize),
    #[error("stage `{0}` is not reachable from any liveout")]
    Unreachable(String),
    #[error("liveout `{0}` is not a stage")]
    UnknownLiveout(String),
}

impl PipelineGraph {
    /// Validate all structural invariants. Called by the parser; hand-built
    /// graphs should call it too.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.stages.is_empty() {
            return Err(GraphError::NoStages);
        }
        if self.liveouts.is_empty() {
            return Err(GraphError::NoLiveouts);
        }
        let mut names = HashSet::new();
        for img in &self.images {
            if !names.insert(img.name.clone()) {
                return Err(GraphError::DuplicateName(img.name.clone()));
            }
            if img.dims.is_empty() || img.dims.len() > 3 {
                return Err(GraphError::TooManyDims(img.name.clone(), img.dims.len()));
            }
            if img.dims.iter().any(|&d| d == 0) {
                return Err(GraphError::EmptyImage(img.name.clone()));
            }
        }
        let images: HashMap<&str, &ImageParam> =
            self.images.iter().map(|i| (i.name.as_str(), i)).collect();
        let mut declared: HashMap<&str, &Stage> = HashMap::new();
        for stage in &self.stages {
            if !names.insert(stage.name.clone()) {
                return Err(GraphError::DuplicateName(stage.name.clone()));
            }
            if stage.domain.is_empty() || stage.domain.len() > 3 {
                return Err(GraphError::TooManyDims(stage.name.clone(), stage.domain.len()));
            }
            if stage.domain.iter().any(|&(lo, hi)| hi < lo) {
                return Err(GraphError::EmptyDomain(stage.name.clone()));
            }
            let mut err = None;
            stage.expr.for_each_load(&mut |load| {
                if err.is_some() {
                    return;
                }
                match load {
                    StencilExpr::ImageLoad { image, idx } => match images.get(image.as_str()) {
                        Some(img) => {
                            if idx.len() != img.dims.len() {
                                err = Some(GraphError::IndexArity {
                                    stage: stage.name.clone(),
                                    name: image.clone(),
                                    got: idx.len(),
                                    want: img.dims.len(),
                                });
                            }
                        }
                        None => {
                            err = Some(GraphError::Undeclared {
                                stage: stage.name.clone(),
                                name: image.clone(),
                            })
                        }
                    },
                    StencilExpr::StageLoad { stage: p, idx } => {
                        if p == &stage.name {
                            err = Some(GraphError::CyclicReference(stage.name.clone()));
                        } else {
                            match declared.get(p.as_str()) {
                                Some(prod) => {
                                    if idx.len() != prod.ndim() {
                                        err = Some(GraphError::IndexArity {
                                            stage: stage.name.clone(),
                                            name: p.clone(),
                                            got: idx.len(),
                                            want: prod.ndim(),
                                        });
                                    }
                                }
                                None => {
                                    // Declared later or never: either way the
                                    // reference relation would not be a DAG in
                                    // declaration order.
                                    err = Some(if self.stage(p).is_some() {
                                        GraphError::CyclicReference(stage.name.clone())
                                    } else {
                                        GraphError::Undeclared {
                                            stage: stage.name.clone(),
                                            name: p.clone(),
                                        }
                                    });
                                }
                            }
                        }
                    }
                    _ => {}
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            declared.insert(stage.name.as_str(), stage);
        }
        for lo in &self.liveouts {
            if self.stage(lo).is_none() {
                return Err(GraphError::UnknownLiveout(lo.clone()));
            }
        }
        // Every stage must be reachable from a liveout, walking consumer->producer.
        let mut reached: HashSet<&str> = HashSet::new();
        let mut work: Vec<&str> = self.liveouts.iter().map(|s| s.as_str()).collect();
        while let Some(name) = work.pop() {
            if !reached.insert(name) {
                continue;
            }
            if let Some(stage) = self.stage(name) {
                stage.expr.for_each_load(&mut |load| {
                    if let StencilExpr::StageLoad { stage: p, .. } = load {
                        work.push(self.stage(p).map(|s| s.name.as_str()).unwrap_or(""));
                    }
                });
            }
        }
        for stage in &self.stages {
            if !reached.contains(stage.name.as_str()) {
                return Err(GraphError::Unreachable(stage.name.clone()));
            }
        }
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn image(&self, name: &str) -> Option<&ImageParam> {
        self.images.iter().find(|i| i.name == name)
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    /// Internal producer->consumer edges, deduplicated, in declaration order.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for stage in &self.stages {
            let mut seen = HashSet::new();
            stage.expr.for_each_load(&mut |load| {
                if let StencilExpr::StageLoad { stage: p, .. } = load {
                    if seen.insert(p.clone()) {
                        out.push((p.clone(), stage.name.clone()));
                    }
                }
            });
        }
        out
    }
}

/// Producers-before-consumers stage order; ties broken by declaration order.
///
/// Validation already forces declaration order to be topological, so this is
/// the declaration order itself, which keeps results deterministic.
pub fn topo_order(g: &PipelineGraph) -> Vec<String> {
    g.stages.iter().map(|s| s.name.clone()).collect()
}

// ---------------------------------------------------------------------------
// Runtime values and buffers
// ---------------------------------------------------------------------------

/// A scalar during evaluation. Loads from `U8` buffers promote to `I32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    F32(f32),
    I32(i32),
}

impl Value {
    pub fn as_f32(self) -> f32 {
        match self {
            Value::F32(v) => v,
            Value::I32(v) => v as f32,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Value::F32(v) => v.to_bits(),
            Value::I32(v) => v as u32,
        }
    }

    pub fn is_truthy(self) -> bool {
        match self {
            Value::F32(v) => v != 0.0,
            Value::I32(v) => v != 0,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::F32(v) => write!(f, "{v:?}"),
            Value::I32(v) => write!(f, "{v}"),
        }
    }
}

/// Arithmetic failure shared by both evaluators.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ValueError {
    #[error("integer division by zero")]
    DivByZero,
}

/// Apply a binary operator. Mixed operands promote to f32; pure integer
/// division by zero is a runtime error, other integer ops wrap.
pub fn apply_bin(op: BinOp, a: Value, b: Value) -> Result<Value, ValueError> {
    use Value::*;
    match (a, b) {
        (I32(x), I32(y)) => {
            let v = match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Div => {
                    if y == 0 {
                        return Err(ValueError::DivByZero);
                    }
                    x.wrapping_div(y)
                }
                BinOp::Min => x.min(y),
                BinOp::Max => x.max(y),
            };
            Ok(I32(v))
        }
        _ => {
            let (x, y) = (a.as_f32(), b.as_f32());
            let v = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Min => x.min(y),
                BinOp::Max => x.max(y),
            };
            Ok(F32(v))
        }
    }
}

/// Apply a unary operator. `sqrt`/`exp` promote to f32.
pub fn apply_un(op: UnOp, a: Value) -> Value {
    use Value::*;
    match op {
        UnOp::Abs => match a {
            F32(v) => F32(v.abs()),
            I32(v) => I32(v.wrapping_abs()),
        },
        UnOp::Sqrt => F32(a.as_f32().sqrt()),
        UnOp::Exp => F32(a.as_f32().exp()),
        UnOp::Neg => match a {
            F32(v) => F32(-v),
            I32(v) => I32(v.wrapping_neg()),
        },
    }
}

/// A dense row-major buffer (innermost dimension = dimension 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub dims: Vec<usize>,
    pub data: BufferData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl Buffer {
    pub fn zeros(kind: ElemKind, dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        let data = match kind {
            ElemKind::F32 => BufferData::F32(vec![0.0; n]),
            ElemKind::I32 => BufferData::I32(vec![0; n]),
            ElemKind::U8 => BufferData::U8(vec![0; n]),
        };
        Buffer { dims: dims.to_vec(), data }
    }

    /// Deterministic pseudo-random fill from a seed; used for test inputs.
    pub fn seeded(kind: ElemKind, dims: &[usize], seed: u64) -> Self {
        let n: usize = dims.iter().product();
        let mut rng = crate::rng::SplitMix64::new(seed);
        let data = match kind {
            ElemKind::F32 => BufferData::F32((0..n).map(|_| rng.next_f32()).collect()),
            ElemKind::I32 => {
                BufferData::I32((0..n).map(|_| (rng.next_u64() % 255) as i32).collect())
            }
            ElemKind::U8 => BufferData::U8((0..n).map(|_| (rng.next_u64() & 0xff) as u8).collect()),
        };
        Buffer { dims: dims.to_vec(), data }
    }

    pub fn kind(&self) -> ElemKind {
        match &self.data {
            BufferData::F32(_) => ElemKind::F32,
            BufferData::I32(_) => ElemKind::I32,
            BufferData::U8(_) => ElemKind::U8,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index of in-bounds coordinates.
    pub fn linear(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let mut idx = 0usize;
        let mut stride = 1usize;
        for (d, &c) in coords.iter().enumerate() {
            debug_assert!(c >= 0 && (c as usize) < self.dims[d]);
            idx += c as usize * stride;
            stride *= self.dims[d];
        }
        idx
    }

    pub fn get(&self, linear: usize) -> Value {
        match &self.data {
            BufferData::F32(v) => Value::F32(v[linear]),
            BufferData::I32(v) => Value::I32(v[linear]),
            BufferData::U8(v) => Value::I32(v[linear] as i32),
        }
    }

    /// Store with the same cast rules in both evaluators.
    pub fn set(&mut self, linear: usize, value: Value) {
        match &mut self.data {
            BufferData::F32(v) => v[linear] = value.as_f32(),
            BufferData::I32(v) => {
                v[linear] = match value {
                    Value::I32(x) => x,
                    Value::F32(x) => x as i32,
                }
            }
            BufferData::U8(v) => {
                v[linear] = match value {
                    Value::I32(x) => x as u8,
                    Value::F32(x) => x as u8,
                }
            }
        }
    }

    /// Bit-level equality (distinguishes NaN payloads, unlike `==` on f32).
    pub fn bits_equal(&self, other: &Buffer) -> bool {
        if self.dims != other.dims {
            return false;
        }
        match (&self.data, &other.data) {
            (BufferData::F32(a), BufferData::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (BufferData::I32(a), BufferData::I32(b)) => a == b,
            (BufferData::U8(a), BufferData::U8(b)) => a == b,
            _ => false,
        }
    }
}
