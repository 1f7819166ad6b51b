//! Warp-overlapped tiling for stencil image pipelines.
//!
//! The crate compiles a small pipeline DSL (a DAG of affine stencil stages)
//! into warp-tiled GPU kernels, where each overlapped tile is processed by a
//! single warp and producer/consumer stages synchronize with warp barriers
//! only. Tiles can be split between shared memory and per-lane registers
//! bridged by warp shuffles (hybrid tiling). A resource cost model drives a
//! dynamic-programming fusion and tile-size search, and a deterministic
//! lockstep warp simulator executes the generated kernels so results can be
//! checked bit-exactly against the reference interpreter without a GPU.
//!
//! Module map:
//! - [`pipeline`]: DSL parsing, validation, buffers, reference interpreter.
//! - [`dependence`]: dependence vectors, group overlap geometry.
//! - [`tiling`]: warp-shape decomposition, block padding, scratchpad sizing.
//! - [`ir`]: kernel IR and the CUDA-dialect renderer.
//! - [`codegen`]: shared-only and hybrid (shared+register) kernel emission.
//! - [`sim`]: lockstep warp simulator and memory-transaction tracing.
//! - [`cost`]: GPU resource model and the weighted cost function.
//! - [`schedule`]: fusion/tile/block/fraction search over the cost model.
//! - [`driver`]: runs a whole schedule through the simulator end to end.

pub mod codegen;
pub mod cost;
pub mod dependence;
pub mod driver;
pub mod fixtures;
pub mod ir;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod sim;
pub mod tiling;
