//! Runs a whole schedule end to end: emits one kernel per group, simulates
//! the kernels in topological order wiring group outputs to later groups'
//! inputs, and compares liveouts against the reference interpreter.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codegen::{gen_group_kernel, CodegenError};
use crate::cost::GpuSpec;
use crate::ir::KernelIr;
use crate::pipeline::{reference_eval, Buffer, EvalError, PipelineGraph};
use crate::sim::{simulate_kernel, MemTrace, SimConfig, SimError};

/// One group of a schedule with its chosen configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub stages: Vec<String>,
    pub tile: [usize; 3],
    pub block: [usize; 3],
    pub frac_reg: f64,
    pub tx_size: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DriverError {
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug)]
pub struct RunResult {
    /// Buffers of the pipeline liveouts.
    pub outputs: HashMap<String, Buffer>,
    pub kernels: Vec<KernelIr>,
    pub traces: Vec<MemTrace>,
}

/// Compile every group and run the kernels through the simulator.
pub fn run_groups(
    g: &PipelineGraph,
    groups: &[GroupConfig],
    inputs: &HashMap<String, Buffer>,
    gpu: &GpuSpec,
    sim_cfg: &SimConfig,
) -> Result<RunResult, DriverError> {
    let mut pool: HashMap<String, Buffer> = inputs.clone();
    let mut kernels = Vec::new();
    let mut traces = Vec::new();
    for group in groups {
        let ir = gen_group_kernel(g, &group.stages, group.tile, group.block, group.frac_reg, gpu)?;
        let out = simulate_kernel(&ir, &pool, sim_cfg)?;
        for (name, buf) in out.outputs {
            pool.insert(name, buf);
        }
        traces.push(out.trace);
        kernels.push(ir);
    }
    let outputs = g
        .liveouts
        .iter()
        .filter_map(|n| pool.get(n).map(|b| (n.clone(), b.clone())))
        .collect();
    Ok(RunResult { outputs, kernels, traces })
}

/// Run a schedule and compare every pipeline liveout bit-exactly against the
/// reference interpreter. Returns the simulator run and the compare report.
pub fn verify_groups(
    g: &PipelineGraph,
    groups: &[GroupConfig],
    inputs: &HashMap<String, Buffer>,
    gpu: &GpuSpec,
    sim_cfg: &SimConfig,
) -> Result<(RunResult, crate::sim::CompareReport), DriverError> {
    let run = run_groups(g, groups, inputs, gpu, sim_cfg)?;
    let expect = reference_eval(g, inputs)?;
    let report = crate::sim::compare_outputs(&expect, &run.outputs, crate::sim::CompareMode::BitExact)?;
    Ok((run, report))
}

/// The whole pipeline as a single fused group.
pub fn single_group(
    g: &PipelineGraph,
    tile: [usize; 3],
    block: [usize; 3],
    frac_reg: f64,
    tx_size: u32,
) -> GroupConfig {
    GroupConfig {
        stages: g.stages.iter().map(|s| s.name.clone()).collect(),
        tile,
        block,
        frac_reg,
        tx_size,
    }
}
