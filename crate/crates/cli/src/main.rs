//! Command-line front end: schedule search, kernel emission, simulation, and
//! cost reporting.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 usage or input error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use warptile::codegen::gen_group_kernel;
use warptile::cost::{cost, CostWeights, GpuSpec, ProfileTable};
use warptile::driver::GroupConfig;
use warptile::ir::{render_cuda, KernelIr};
use warptile::pipeline::{parse_pipeline, reference_eval, Buffer, PipelineGraph};
use warptile::schedule::{bound_search, dp_fuse, load_profile, ScheduleConfig, SearchSpace};
use warptile::sim::{compare_outputs, simulate_kernel, CompareMode, SimConfig};

const USAGE: &str = "\
warptile <command> [flags]

Commands:
  schedule   Search fusion groupings, tile/block sizes, register fractions
  compile    Emit kernel source and IR for a schedule or explicit flags
  simulate   Compile, run on the warp simulator, compare with the reference
  cost       Print the cost breakdown of one group configuration

Flags:
  --pipeline <file>    Pipeline description (required)
  --gpu <file>         GPU spec JSON (default: $WARPTILE_GPU_PRESET or gtx1080ti)
  --weights <file>     Cost weights JSON (default: preset matching the GPU)
  --profile <file>     Per-stage profile (default: synthetic defaults)
  --schedule <file>    Schedule report from `warptile schedule`
  --group <a,b,...>    Stage group for `cost`
  --tile <x,y,z>       Tile sizes (iterations per thread)
  --block <x,y,z>      Thread-block size
  --frac-reg <f>       Fraction of the split-dimension tile kept in registers
  --tx-size <32|128>   Global-memory transaction size
  --budget <n>         Tile/block candidates per group (0 = unbounded; default 256)
  --seed <n>           Seed for generated input images (default 1)
  --out <dir>          Output directory (default ./out)
  --trace              Write the global-memory access trace when simulating
  --sweep              simulate: run every bundled sample pipeline
  --corrupt            simulate: flip one constant after compiling (negative control)
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

struct Flags {
    values: HashMap<String, String>,
    switches: Vec<String>,
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.get(name).map(PathBuf::from)
    }
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let switches = ["--trace", "--sweep", "--corrupt"];
    let mut flags = Flags { values: HashMap::new(), switches: Vec::new() };
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if !arg.starts_with("--") {
            return Err(format!("unexpected argument `{arg}`"));
        }
        if switches.contains(&arg.as_str()) {
            flags.switches.push(arg.clone());
            i += 1;
            continue;
        }
        let value = args.get(i + 1).ok_or_else(|| format!("flag `{arg}` needs a value"))?;
        flags.values.insert(arg.clone(), value.clone());
        i += 2;
    }
    Ok(flags)
}

fn run(args: Vec<String>) -> Result<ExitCode, String> {
    let Some(command) = args.first().cloned() else {
        eprint!("{USAGE}");
        return Ok(ExitCode::from(2));
    };
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "schedule" => cmd_schedule(&flags),
        "compile" => cmd_compile(&flags),
        "simulate" => cmd_simulate(&flags),
        "cost" => cmd_cost(&flags),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(ExitCode::SUCCESS)
        }
        other => Err(format!("unknown command `{other}`")),
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_pipeline(flags: &Flags) -> Result<PipelineGraph, String> {
    let path = flags.path("--pipeline").ok_or("--pipeline is required")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("pipeline `{}`: {e}", path.display()))?;
    parse_pipeline(&text).map_err(|e| format!("pipeline `{}`: {e}", path.display()))
}

fn load_gpu(flags: &Flags) -> Result<GpuSpec, String> {
    if let Some(path) = flags.path("--gpu") {
        let text = std::fs::read_to_string(&path)
            .map_err(|_| format!("gpu spec not found: `{}`", path.display()))?;
        return serde_json::from_str(&text).map_err(|e| format!("gpu spec: {e}"));
    }
    let preset = std::env::var("WARPTILE_GPU_PRESET").unwrap_or_else(|_| "gtx1080ti".into());
    GpuSpec::preset(&preset).ok_or_else(|| format!("unknown GPU preset `{preset}`"))
}

fn load_weights(flags: &Flags, gpu: &GpuSpec) -> Result<CostWeights, String> {
    if let Some(path) = flags.path("--weights") {
        let text = std::fs::read_to_string(&path)
            .map_err(|_| format!("weights not found: `{}`", path.display()))?;
        return serde_json::from_str(&text).map_err(|e| format!("weights: {e}"));
    }
    Ok(CostWeights::preset(&gpu.name).unwrap_or_else(CostWeights::gtx1080ti))
}

fn load_profiles(flags: &Flags, g: &PipelineGraph) -> Result<ProfileTable, String> {
    let text = match flags.path("--profile") {
        Some(path) => std::fs::read_to_string(&path)
            .map_err(|_| format!("profile not found: `{}`", path.display()))?,
        None => String::new(),
    };
    let (table, warnings) = load_profile(&text, g).map_err(|e| e.to_string())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(table)
}

fn parse_triple(s: &str, what: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(format!("{what}: expected up to three comma-separated integers"));
    }
    let mut out = [1usize; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| format!("{what}: bad integer `{p}`"))?;
    }
    Ok(out)
}

fn out_dir(flags: &Flags) -> Result<PathBuf, String> {
    let dir = flags.path("--out").unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| format!("creating `{}`: {e}", dir.display()))?;
    Ok(dir)
}

fn groups_from_flags_or_schedule(
    flags: &Flags,
    g: &PipelineGraph,
) -> Result<Vec<GroupConfig>, String> {
    if let Some(path) = flags.path("--schedule") {
        let text = std::fs::read_to_string(&path)
            .map_err(|_| format!("schedule not found: `{}`", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("schedule: {e}"))?;
        let schedule: ScheduleConfig = match value.get("schedule") {
            Some(inner) => serde_json::from_value(inner.clone()),
            None => serde_json::from_value(value),
        }
        .map_err(|e| format!("schedule: {e}"))?;
        if schedule.all_infeasible || !schedule.total_cost.is_finite() {
            return Err("schedule is infeasible; refusing to compile".into());
        }
        return Ok(schedule
            .groups
            .iter()
            .map(|grp| GroupConfig {
                stages: grp.stages.clone(),
                tile: grp.tile,
                block: grp.block,
                frac_reg: grp.frac_reg,
                tx_size: grp.tx_size,
            })
            .collect());
    }
    // Flag mode: the whole pipeline as one group.
    let tile = parse_triple(flags.get("--tile").unwrap_or("4,1,1"), "--tile")?;
    let block = parse_triple(flags.get("--block").unwrap_or("64,4,1"), "--block")?;
    let frac_reg: f64 =
        flags.get("--frac-reg").unwrap_or("0").parse().map_err(|_| "--frac-reg: bad value")?;
    let tx_size: u32 =
        flags.get("--tx-size").unwrap_or("128").parse().map_err(|_| "--tx-size: bad value")?;
    if !(0.0..=1.0).contains(&frac_reg) {
        return Err("--frac-reg must lie in [0, 1]".into());
    }
    if tx_size != 32 && tx_size != 128 {
        return Err("--tx-size must be 32 or 128".into());
    }
    Ok(vec![GroupConfig {
        stages: g.stages.iter().map(|s| s.name.clone()).collect(),
        tile,
        block,
        frac_reg,
        tx_size,
    }])
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_schedule(flags: &Flags) -> Result<ExitCode, String> {
    let g = load_pipeline(flags)?;
    let gpu = load_gpu(flags)?;
    let weights = load_weights(flags, &gpu)?;
    let profiles = load_profiles(flags, &g)?;
    let budget: usize =
        flags.get("--budget").unwrap_or("256").parse().map_err(|_| "--budget: bad value")?;
    let full = SearchSpace::default_for(&gpu);
    let space = if budget == 0 { full } else { bound_search(&full, budget) };
    let start = Instant::now();
    let schedule = dp_fuse(&g, &space, &gpu, &weights, &profiles).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let dir = out_dir(flags)?;
    let report = serde_json::json!({
        "pipeline": flags.get("--pipeline"),
        "gpu": gpu.name,
        "budget": budget,
        "bounded": schedule.bounded,
        "search_seconds": seconds,
        "schedule": schedule,
    });
    let path = dir.join("schedule.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| format!("writing `{}`: {e}", path.display()))?;
    println!(
        "{} group(s), total cost {}, search took {seconds:.3}s -> {}",
        schedule.groups.len(),
        schedule.total_cost,
        path.display()
    );
    for (i, grp) in schedule.groups.iter().enumerate() {
        println!(
            "  group {i}: [{}] tile={:?} block={:?} frac_reg={} tx={}B cost={}",
            grp.stages.join(", "),
            grp.tile,
            grp.block,
            grp.frac_reg,
            grp.tx_size,
            grp.breakdown.cost
        );
    }
    if schedule.all_infeasible {
        println!("  note: every grouping is infeasible; singleton groups reported");
    }
    Ok(ExitCode::SUCCESS)
}

fn compile_groups(
    g: &PipelineGraph,
    groups: &[GroupConfig],
    gpu: &GpuSpec,
    dir: &Path,
) -> Result<Vec<KernelIr>, String> {
    let mut kernels = Vec::new();
    for (i, grp) in groups.iter().enumerate() {
        let ir = gen_group_kernel(g, &grp.stages, grp.tile, grp.block, grp.frac_reg, gpu)
            .map_err(|e| format!("group {i}: {e}"))?;
        let stem = format!("group_{i}_{}", ir.stages.last().cloned().unwrap_or_default());
        let cu = dir.join(format!("{stem}.cu"));
        std::fs::write(&cu, render_cuda(&ir)).map_err(|e| format!("writing kernel: {e}"))?;
        let irp = dir.join(format!("{stem}.ir.json"));
        std::fs::write(&irp, serde_json::to_string_pretty(&ir).unwrap())
            .map_err(|e| format!("writing IR: {e}"))?;
        if let Some(reason) = &ir.fallback_reason {
            eprintln!("note: group {i} compiled shared-only: {reason}");
        }
        println!("wrote {}", cu.display());
        kernels.push(ir);
    }
    Ok(kernels)
}

fn cmd_compile(flags: &Flags) -> Result<ExitCode, String> {
    let g = load_pipeline(flags)?;
    let gpu = load_gpu(flags)?;
    let groups = groups_from_flags_or_schedule(flags, &g)?;
    let dir = out_dir(flags)?;
    compile_groups(&g, &groups, &gpu, &dir)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_once(
    g: &PipelineGraph,
    groups: &[GroupConfig],
    gpu: &GpuSpec,
    seed: u64,
    trace: bool,
    corrupt: bool,
    dir: &Path,
    label: &str,
) -> Result<bool, String> {
    let inputs: HashMap<String, Buffer> = g
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            (img.name.clone(), Buffer::seeded(img.kind, &img.dims, seed.wrapping_add(i as u64)))
        })
        .collect();
    let mut pool = inputs.clone();
    let mut trace_summary = String::new();
    for (i, grp) in groups.iter().enumerate() {
        let mut ir = gen_group_kernel(g, &grp.stages, grp.tile, grp.block, grp.frac_reg, gpu)
            .map_err(|e| format!("group {i}: {e}"))?;
        if corrupt && i == 0 {
            corrupt_first_constant(&mut ir.body);
        }
        let out = simulate_kernel(&ir, &pool, &SimConfig { trace, warp_order_seed: None })
            .map_err(|e| format!("group {i}: {e}"))?;
        let (s32, s128): (u64, u64) = (
            out.trace.warp_load_segs32.iter().sum(),
            out.trace.warp_load_segs128.iter().sum(),
        );
        trace_summary.push_str(&format!(
            "group {i} [{}]: warps={} load_segments_32B={} load_segments_128B={} syncwarps={}\n",
            grp.stages.join(","),
            out.trace.warp_load_segs32.len(),
            s32,
            s128,
            out.syncwarps_executed,
        ));
        if trace {
            let path = dir.join(format!("{label}_group_{i}.trace"));
            std::fs::write(&path, out.trace.dump()).map_err(|e| format!("trace: {e}"))?;
        }
        for (name, buf) in out.outputs {
            pool.insert(name, buf);
        }
    }
    std::fs::write(dir.join(format!("{label}_memtrace_summary.txt")), &trace_summary)
        .map_err(|e| format!("summary: {e}"))?;

    let expect = reference_eval(g, &inputs).map_err(|e| e.to_string())?;
    let got: HashMap<String, Buffer> = g
        .liveouts
        .iter()
        .filter_map(|n| pool.get(n).map(|b| (n.clone(), b.clone())))
        .collect();
    let report =
        compare_outputs(&expect, &got, CompareMode::BitExact).map_err(|e| e.to_string())?;
    if report.pass {
        println!("{label}: PASS ({} elements bit-exact, seed {seed})", report.elements_compared);
        Ok(true)
    } else {
        let (buf, idx, a, b) = report.first_diff.unwrap();
        println!("{label}: FAIL at `{buf}`[{idx}]: reference {a}, simulated {b}");
        Ok(false)
    }
}

fn corrupt_first_constant(instrs: &mut [warptile::ir::Instr]) -> bool {
    use warptile::ir::{AOp, Instr, Operand};
    for instr in instrs {
        match instr {
            // Flip the first piece of expression arithmetic: a division
            // becomes a subtraction, or a float constant moves by one.
            Instr::Bin { op: op @ AOp::Div, .. } => {
                *op = AOp::Sub;
                return true;
            }
            Instr::Bin { b: Operand::ImmF(v), .. } => {
                *v += 1.0;
                return true;
            }
            Instr::If { then_, else_, .. } => {
                if corrupt_first_constant(then_) || corrupt_first_constant(else_) {
                    return true;
                }
            }
            Instr::Loop { body, .. } => {
                if corrupt_first_constant(body) {
                    return true;
                }
            }
            _ => {}
        }
    }
    false
}

fn cmd_simulate(flags: &Flags) -> Result<ExitCode, String> {
    let gpu = load_gpu(flags)?;
    let seed: u64 = flags.get("--seed").unwrap_or("1").parse().map_err(|_| "--seed: bad value")?;
    let trace = flags.has("--trace");
    let corrupt = flags.has("--corrupt");
    let dir = out_dir(flags)?;

    if flags.has("--sweep") {
        let mut passed = 0usize;
        let mut total = 0usize;
        for (name, text) in warptile::fixtures::all() {
            let g = parse_pipeline(text).map_err(|e| e.to_string())?;
            let groups = vec![GroupConfig {
                stages: g.stages.iter().map(|s| s.name.clone()).collect(),
                tile: [4, 1, 1],
                block: [64, 4, 1],
                frac_reg: 0.5,
                tx_size: 128,
            }];
            total += 1;
            if simulate_once(&g, &groups, &gpu, seed, false, false, &dir, name)? {
                passed += 1;
            }
        }
        println!("sweep: {passed}/{total} pipelines bit-exact");
        return Ok(if passed == total { ExitCode::SUCCESS } else { ExitCode::from(1) });
    }

    let g = load_pipeline(flags)?;
    let groups = groups_from_flags_or_schedule(flags, &g)?;
    let ok = simulate_once(&g, &groups, &gpu, seed, trace, corrupt, &dir, "simulate")?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_cost(flags: &Flags) -> Result<ExitCode, String> {
    let g = load_pipeline(flags)?;
    let gpu = load_gpu(flags)?;
    let weights = load_weights(flags, &gpu)?;
    let profiles = load_profiles(flags, &g)?;
    let group: Vec<String> = match flags.get("--group") {
        Some(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
        None => g.stages.iter().map(|s| s.name.clone()).collect(),
    };
    let tile = parse_triple(flags.get("--tile").unwrap_or("4,1,1"), "--tile")?;
    let block = parse_triple(flags.get("--block").unwrap_or("64,4,1"), "--block")?;
    let frac_reg: f64 =
        flags.get("--frac-reg").unwrap_or("0").parse().map_err(|_| "--frac-reg: bad value")?;
    let tx_size: u32 =
        flags.get("--tx-size").unwrap_or("128").parse().map_err(|_| "--tx-size: bad value")?;
    let b = cost(&g, &group, tile, block, frac_reg, tx_size, &gpu, &weights, &profiles)
        .map_err(|e| e.to_string())?;
    let mut out = String::new();
    if let Some(v) = b.violation {
        out.push_str(&format!("INFEASIBLE({v})\n"));
    } else {
        out.push_str(&format!("totalGLMemTxs    {}\n", b.total_gl_mem_txs));
        out.push_str(&format!("occupancy        {}\n", b.occupancy));
        out.push_str(&format!("memTime          {:e}\n", b.mem_time));
        out.push_str(&format!("computeTime      {:e}\n", b.compute_time));
        out.push_str(&format!("unallocatedShMem {}\n", b.unallocated_sh_mem));
        out.push_str(&format!("unusedReg        {}\n", b.unused_reg));
        out.push_str(&format!("fracOverlap      {}\n", b.frac_overlap));
        out.push_str(&format!("extraTBs         {}\n", b.extra_tbs));
        out.push_str(&format!("shMemPerTB       {} bytes\n", b.sh_mem_per_tb_bytes));
        out.push_str(&format!("regPerThread     {}\n", b.reg_per_thread));
        out.push_str(&format!("cost             {}\n", b.cost));
    }
    // Tolerate a closed pipe (e.g. `warptile cost ... | head`).
    use std::io::Write;
    let _ = std::io::stdout().write_all(out.as_bytes());
    Ok(ExitCode::SUCCESS)
}
