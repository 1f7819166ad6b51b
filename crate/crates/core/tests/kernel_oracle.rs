//! Generated kernels must reproduce the reference interpreter bit-exactly.

use warptile::codegen::gen_group_kernel;
use warptile::cost::GpuSpec;
use warptile::driver::{single_group, verify_groups, GroupConfig};
use warptile::fixtures;
use warptile::ir::render_cuda;
use warptile::sim::{count_sync_stalls, SimConfig};

fn check(fixture: &str, tile: [usize; 3], block: [usize; 3], frac_reg: f64) {
    let g = fixtures::graph(fixture);
    let inputs = fixtures::seeded_inputs(&g, 0xBEEF);
    let gpu = GpuSpec::gtx1080ti();
    let groups = [single_group(&g, tile, block, frac_reg, 128)];
    let (run, report) = verify_groups(&g, &groups, &inputs, &gpu, &SimConfig::default())
        .unwrap_or_else(|e| panic!("{fixture} tile={tile:?} block={block:?} f={frac_reg}: {e}"));
    assert!(
        report.pass,
        "{fixture} tile={tile:?} block={block:?} f={frac_reg} hybrid={} diff={:?}",
        run.kernels[0].hybrid, report.first_diff
    );
}

#[test]
fn blur_shared_only_matches_reference() {
    check("blur", [8, 1, 1], [64, 4, 1], 0.0);
}

#[test]
fn blur_worked_config_matches_reference() {
    // Tile 16 split half-and-half between shared memory and registers.
    check("blur", [16, 1, 1], [64, 4, 1], 0.5);
}

#[test]
fn blur_full_register_tile_matches_reference() {
    check("blur", [16, 1, 1], [64, 4, 1], 1.0);
}

#[test]
fn blur2d_hybrid_matches_reference() {
    check("blur2d", [4, 2, 1], [32, 1, 1], 0.5);
}

#[test]
fn chain3_hybrid_matches_reference() {
    check("chain3", [4, 1, 1], [32, 1, 1], 0.5);
}

#[test]
fn diamond_hybrid_matches_reference() {
    check("diamond", [4, 2, 1], [64, 4, 1], 0.7);
}

#[test]
fn harris_hybrid_matches_reference() {
    check("harris11", [4, 4, 1], [64, 4, 1], 0.5);
}

#[test]
fn two_group_schedule_matches_reference() {
    // blurx and blury compiled as separate kernels, wired through global
    // memory.
    let g = fixtures::graph("blur2d");
    let inputs = fixtures::seeded_inputs(&g, 7);
    let gpu = GpuSpec::gtx1080ti();
    let groups = [
        GroupConfig {
            stages: vec!["blurx".into()],
            tile: [2, 1, 1],
            block: [32, 1, 1],
            frac_reg: 0.0,
            tx_size: 128,
        },
        GroupConfig {
            stages: vec!["blury".into()],
            tile: [4, 1, 1],
            block: [64, 4, 1],
            frac_reg: 0.5,
            tx_size: 32,
        },
    ];
    let (_, report) =
        verify_groups(&g, &groups, &inputs, &gpu, &SimConfig::default()).unwrap();
    assert!(report.pass, "{:?}", report.first_diff);
}

#[test]
fn emitted_kernel_uses_warp_sync_only() {
    let g = fixtures::graph("blur");
    let gpu = GpuSpec::gtx1080ti();
    let group: Vec<String> = g.stages.iter().map(|s| s.name.clone()).collect();
    let ir = gen_group_kernel(&g, &group, [16, 1, 1], [64, 4, 1], 0.5, &gpu).unwrap();
    let counts = count_sync_stalls(&ir);
    assert_eq!(counts.syncthreads, 0);
    assert!(counts.syncwarp >= 1);
    let text = render_cuda(&ir);
    assert!(text.contains("__syncwarp()"));
    assert!(!text.contains("__syncthreads"));
    assert!(text.contains("__shfl_sync(0xffffffff"));
}

#[test]
fn frac_zero_ir_is_identical_to_shared_only_path() {
    let g = fixtures::graph("blur");
    let gpu = GpuSpec::gtx1080ti();
    let group: Vec<String> = g.stages.iter().map(|s| s.name.clone()).collect();
    let a = gen_group_kernel(&g, &group, [8, 1, 1], [64, 4, 1], 0.0, &gpu).unwrap();
    let b = gen_group_kernel(&g, &group, [8, 1, 1], [64, 4, 1], 0.0, &gpu).unwrap();
    assert_eq!(a, b);
    assert!(!a.hybrid);
}
