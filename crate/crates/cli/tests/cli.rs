//! End-to-end CLI behavior: exit codes, report files, kernel artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn warptile() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warptile"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("warptile_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn warptile")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn schedule_blur_fuses_one_group() {
    let dir = temp_dir("sched");
    let out = run(warptile()
        .args(["schedule", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--profile"])
        .arg(repo_root().join("profiles/blur.profile"))
        .args(["--budget", "64", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json")).unwrap())
            .unwrap();
    assert_eq!(report["schedule"]["groups"].as_array().unwrap().len(), 1);
    assert_eq!(report["bounded"], serde_json::json!(true));
    assert!(report["search_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn missing_gpu_spec_exits_2() {
    let out = run(warptile()
        .args(["schedule", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--gpu", "/nonexistent/gpu.json"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gpu spec not found"));
}

#[test]
fn budget_one_reports_bounded_search() {
    let dir = temp_dir("budget1");
    let out = run(warptile()
        .args(["schedule", "--pipeline"])
        .arg(repo_root().join("pipelines/chain3.pipe"))
        .args(["--budget", "1", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json")).unwrap())
            .unwrap();
    assert_eq!(report["bounded"], serde_json::json!(true));
}

#[test]
fn compile_blur_emits_warp_synced_kernel() {
    let dir = temp_dir("compile");
    let out = run(warptile()
        .args(["compile", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--tile", "16,1,1", "--block", "64,4,1", "--frac-reg", "0.5", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cu = std::fs::read_to_string(dir.join("group_0_blury.cu")).unwrap();
    assert!(cu.contains("__syncwarp()"));
    assert!(!cu.contains("__syncthreads"));
    assert!(cu.contains("__shfl_sync(0xffffffff"));
    assert!(dir.join("group_0_blury.ir.json").exists());
}

#[test]
fn compile_is_deterministic_and_frac_zero_matches_shared_only() {
    let d1 = temp_dir("det1");
    let d2 = temp_dir("det2");
    for dir in [&d1, &d2] {
        let out = run(warptile()
            .args(["compile", "--pipeline"])
            .arg(repo_root().join("pipelines/blur.pipe"))
            .args(["--tile", "8,1,1", "--block", "64,4,1", "--frac-reg", "0", "--out"])
            .arg(dir));
        assert!(out.status.success());
    }
    let a = std::fs::read(d1.join("group_0_blury.cu")).unwrap();
    let b = std::fs::read(d2.join("group_0_blury.cu")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn compile_two_group_schedule_yields_two_kernels() {
    let dir = temp_dir("twogroup");
    let schedule = serde_json::json!({
        "groups": [
            {
                "stages": ["blurx"],
                "tile": [2, 1, 1], "block": [32, 1, 1], "frac_reg": 0.0, "tx_size": 128,
                "breakdown": null_breakdown()
            },
            {
                "stages": ["blury"],
                "tile": [4, 1, 1], "block": [64, 4, 1], "frac_reg": 0.5, "tx_size": 32,
                "breakdown": null_breakdown()
            }
        ],
        "total_cost": 0.0,
        "bounded": false,
        "all_infeasible": false
    });
    let spath = dir.join("schedule.json");
    std::fs::write(&spath, serde_json::to_string(&schedule).unwrap()).unwrap();
    let out = run(warptile()
        .args(["compile", "--pipeline"])
        .arg(repo_root().join("pipelines/blur2d.pipe"))
        .args(["--schedule"])
        .arg(&spath)
        .args(["--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("group_0_blurx.cu").exists());
    assert!(dir.join("group_1_blury.cu").exists());
}

fn null_breakdown() -> serde_json::Value {
    serde_json::json!({
        "total_gl_mem_txs": 0, "occupancy": 0.0, "mem_time": 0.0, "compute_time": 1.0,
        "unallocated_sh_mem": 0.0, "unused_reg": 0.0, "frac_overlap": 0.0, "extra_tbs": 0,
        "sh_mem_per_tb_bytes": 0.0, "reg_per_thread": 0.0, "max_tb_per_sm": 1,
        "cost": 0.0, "violation": null
    })
}

#[test]
fn simulate_blur_passes_and_corruption_fails_with_coordinate() {
    let dir = temp_dir("sim");
    let out = run(warptile()
        .args(["simulate", "--pipeline"])
        .arg(repo_root().join("pipelines/chain3.pipe"))
        .args(["--tile", "4,1,1", "--block", "32,1,1", "--frac-reg", "0.5"])
        .args(["--seed", "42", "--trace", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("PASS"));
    assert!(dir.join("simulate_memtrace_summary.txt").exists());
    assert!(dir.join("simulate_group_0.trace").exists());

    let bad = run(warptile()
        .args(["simulate", "--pipeline"])
        .arg(repo_root().join("pipelines/chain3.pipe"))
        .args(["--tile", "4,1,1", "--block", "32,1,1", "--corrupt", "--out"])
        .arg(&dir));
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    assert!(text.contains("FAIL at"), "{text}");
}

#[test]
fn simulate_sweep_aggregates_fixtures() {
    let dir = temp_dir("sweep");
    let out = run(warptile().args(["simulate", "--sweep", "--out"]).arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("sweep: 7/7 pipelines bit-exact"), "{text}");
}

#[test]
fn cost_blur_reports_reported_occupancies() {
    let out = run(warptile()
        .args(["cost", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--profile"])
        .arg(repo_root().join("profiles/blur.profile"))
        .args(["--tile", "16,1,1", "--block", "64,4,1", "--frac-reg", "0"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("occupancy        0.625"), "{text}");

    let out2 = run(warptile()
        .args(["cost", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--profile"])
        .arg(repo_root().join("profiles/blur.profile"))
        .args(["--tile", "16,1,1", "--block", "64,4,1", "--frac-reg", "0.5"]));
    let text2 = stdout(&out2);
    assert!(text2.contains("occupancy        1"), "{text2}");
}

#[test]
fn cost_prints_infeasible_with_limit() {
    let out = run(warptile()
        .args(["cost", "--pipeline"])
        .arg(repo_root().join("pipelines/blur.pipe"))
        .args(["--tile", "32,8,1", "--block", "256,4,1", "--frac-reg", "0"]));
    assert!(out.status.success());
    assert!(stdout(&out).contains("INFEASIBLE(MaxShMemPerTb)"));
}

#[test]
fn env_preset_selects_gpu() {
    let dir = temp_dir("env");
    let out = run(warptile()
        .env("WARPTILE_GPU_PRESET", "teslav100")
        .args(["schedule", "--pipeline"])
        .arg(repo_root().join("pipelines/chain3.pipe"))
        .args(["--budget", "8", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json")).unwrap())
            .unwrap();
    assert_eq!(report["gpu"], serde_json::json!("teslav100"));
}

#[test]
fn bundled_preset_files_match_builtin_specs() {
    // The JSON files shipped in presets/ must stay in lockstep with the
    // built-in constructors (bless with WARPTILE_BLESS=1).
    use warptile::cost::{CostWeights, GpuSpec};
    let dir = repo_root().join("presets");
    std::fs::create_dir_all(&dir).unwrap();
    for (file, json) in [
        ("gtx1080ti.json", serde_json::to_string_pretty(&GpuSpec::gtx1080ti()).unwrap()),
        ("teslav100.json", serde_json::to_string_pretty(&GpuSpec::teslav100()).unwrap()),
        (
            "weights_gtx1080ti.json",
            serde_json::to_string_pretty(&CostWeights::gtx1080ti()).unwrap(),
        ),
        (
            "weights_teslav100.json",
            serde_json::to_string_pretty(&CostWeights::teslav100()).unwrap(),
        ),
    ] {
        let path = dir.join(file);
        if std::env::var_os("WARPTILE_BLESS").is_some() {
            std::fs::write(&path, format!("{json}\n")).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).expect("preset file present");
        assert_eq!(on_disk.trim_end(), json, "{file} drifted");
    }
    // A preset file loaded through --gpu behaves like the builtin.
    let loaded: GpuSpec = serde_json::from_str(
        &std::fs::read_to_string(dir.join("teslav100.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(loaded, GpuSpec::teslav100());
}

#[test]
fn schedule_compile_simulate_composes_for_every_sample() {
    for name in ["blur2d", "chain3", "diamond"] {
        let dir = temp_dir(&format!("e2e_{name}"));
        let pipe = repo_root().join(format!("pipelines/{name}.pipe"));
        let sched = run(warptile()
            .args(["schedule", "--pipeline"])
            .arg(&pipe)
            .args(["--budget", "16", "--out"])
            .arg(&dir));
        assert!(sched.status.success(), "{name}: {}", String::from_utf8_lossy(&sched.stderr));
        let spath = dir.join("schedule.json");
        let comp = run(warptile()
            .args(["compile", "--pipeline"])
            .arg(&pipe)
            .args(["--schedule"])
            .arg(&spath)
            .args(["--out"])
            .arg(&dir));
        assert!(comp.status.success(), "{name}: {}", String::from_utf8_lossy(&comp.stderr));
        let sim = run(warptile()
            .args(["simulate", "--pipeline"])
            .arg(&pipe)
            .args(["--schedule"])
            .arg(&spath)
            .args(["--seed", "9", "--out"])
            .arg(&dir));
        assert!(sim.status.success(), "{name}: {}", String::from_utf8_lossy(&sim.stderr));
        assert!(stdout(&sim).contains("PASS"), "{name}");
    }
}
