//! Warp-level tile geometry: decomposing a thread block into per-dimension
//! warp shapes, padding odd block sizes, mapping threads to warp/lane tuples,
//! and sizing per-stage scratchpads.

use crate::dependence::GroupGeometry;

/// Thread-block extent per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape(pub [usize; 3]);

/// Per-dimension warp extent; the product always equals the warp size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpShape(pub [usize; 3]);

/// Tile iterations per thread and the derived warp-tile extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: [usize; 3],
    pub warp_tile: [usize; 3],
    pub problem: [usize; 3],
}

impl TileConfig {
    pub fn new(tile: [usize; 3], warp: WarpShape, problem: [usize; 3]) -> Self {
        let warp_tile = [tile[0] * warp.0[0], tile[1] * warp.0[1], tile[2] * warp.0[2]];
        TileConfig { tile, warp_tile, problem }
    }
}

/// Per-dimension warp extents of a block:
/// `W_x = min(B_x, warpSize)`, `W_y = min(B_y, warpSize/W_x)`,
/// `W_z = min(B_z, warpSize/(W_x*W_y))`, all integer division.
///
/// The product equals `warp_size` only for block shapes accepted by
/// [`pad_block`]; call that first for arbitrary shapes.
pub fn warp_sizes(block: BlockShape, warp_size: usize) -> WarpShape {
    let b = block.0;
    let wx = b[0].min(warp_size);
    let wy = b[1].min((warp_size / wx).max(1));
    let wz = b[2].min((warp_size / (wx * wy)).max(1));
    WarpShape([wx, wy, wz])
}

fn block_is_warp_complete(block: BlockShape, warp_size: usize) -> bool {
    let w = warp_sizes(block, warp_size);
    let threads = block.0.iter().product::<usize>();
    threads % warp_size == 0
        && w.0.iter().product::<usize>() == warp_size
        && (0..3).all(|d| block.0[d] % w.0[d] == 0)
}

/// Extend the x dimension until the block decomposes into whole warps:
/// thread count a multiple of the warp size, warp extents multiplying to the
/// warp size, and each warp extent dividing its block extent.
pub fn pad_block(block: BlockShape, warp_size: usize) -> BlockShape {
    let mut bx = block.0[0];
    loop {
        let candidate = BlockShape([bx, block.0[1], block.0[2]]);
        if block_is_warp_complete(candidate, warp_size) {
            return candidate;
        }
        bx += 1;
    }
}

/// Warp and lane tuple of one thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadMapping {
    pub warp_id: [usize; 3],
    pub lane_id: [usize; 3],
}

/// `warpId_i = floor((b_i*B_i + t_i)/W_i)`, `laneId_i = (b_i*B_i + t_i) mod W_i`.
pub fn thread_mapping(
    block: BlockShape,
    warp: WarpShape,
    block_idx: [usize; 3],
    thread_idx: [usize; 3],
) -> ThreadMapping {
    let mut warp_id = [0usize; 3];
    let mut lane_id = [0usize; 3];
    for d in 0..3 {
        let global = block_idx[d] * block.0[d] + thread_idx[d];
        warp_id[d] = global / warp.0[d];
        lane_id[d] = global % warp.0[d];
    }
    ThreadMapping { warp_id, lane_id }
}

/// Warps per block in each dimension (`ceil(B_i / W_i)`).
pub fn warps_per_block(block: BlockShape, warp: WarpShape) -> [usize; 3] {
    let mut out = [0usize; 3];
    for d in 0..3 {
        out[d] = block.0[d].div_ceil(warp.0[d]);
    }
    out
}

/// Scratchpad element count per stage for one thread block:
/// `prod_i ceil(B_i/W_i) * (T_i*W_i + O_i^n)`.
///
/// Returned in the geometry's group order.
pub fn scratchpad_sizes(
    geom: &GroupGeometry,
    tile: &[usize],
    warp: WarpShape,
    block: BlockShape,
) -> Vec<(String, usize)> {
    let warps = warps_per_block(block, warp);
    geom.group
        .iter()
        .map(|name| {
            let overlap = geom.overlap(name);
            let mut elems = 1usize;
            for d in 0..geom.ndim {
                let extent = (tile[d] * warp.0[d]) as i64 + overlap[d];
                elems *= warps[d] * extent.max(0) as usize;
            }
            // Unused trailing dimensions still contribute their warp count
            // (always 1 warp of extent 1).
            for d in geom.ndim..3 {
                elems *= warps[d];
            }
            (name.clone(), elems)
        })
        .collect()
}

/// Dimensions that participate in warp tiling: those with `W_i > 1`.
/// Dimensions with a single lane run as plain loops.
pub fn warp_tiled_dimensions(warp: WarpShape) -> Vec<usize> {
    (0..3).filter(|&d| warp.0[d] > 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::group_geometry;
    use crate::pipeline::parse_pipeline;
    use std::collections::HashSet;

    #[test]
    fn warp_sizes_worked_example() {
        assert_eq!(warp_sizes(BlockShape([16, 8, 1]), 32), WarpShape([16, 2, 1]));
    }

    #[test]
    fn warp_sizes_identity_and_3d() {
        assert_eq!(warp_sizes(BlockShape([32, 1, 1]), 32), WarpShape([32, 1, 1]));
        assert_eq!(warp_sizes(BlockShape([8, 8, 4]), 32), WarpShape([8, 4, 1]));
    }

    #[test]
    fn warp_tile_worked_example() {
        let w = warp_sizes(BlockShape([16, 8, 1]), 32);
        let t = TileConfig::new([8, 4, 1], w, [4096, 4096, 1]);
        assert_eq!(t.warp_tile, [128, 8, 1]);
    }

    #[test]
    fn pad_block_examples() {
        assert_eq!(pad_block(BlockShape([48, 1, 1]), 32), BlockShape([64, 1, 1]));
        assert_eq!(pad_block(BlockShape([32, 4, 1]), 32), BlockShape([32, 4, 1]));
        assert_eq!(pad_block(BlockShape([10, 3, 1]), 32), BlockShape([32, 3, 1]));
    }

    #[test]
    fn pad_block_matches_exhaustive_search() {
        // Smallest x' >= 10 making ([x', 3, 1]) warp-complete.
        let mut expect = None;
        for x in 10..320 {
            if block_is_warp_complete(BlockShape([x, 3, 1]), 32) {
                expect = Some(x);
                break;
            }
        }
        assert_eq!(pad_block(BlockShape([10, 3, 1]), 32).0[0], expect.unwrap());
    }

    #[test]
    fn padded_blocks_have_full_warps() {
        for bx in 1..=70 {
            for by in [1usize, 2, 3, 4, 8] {
                let b = pad_block(BlockShape([bx, by, 1]), 32);
                let w = warp_sizes(b, 32);
                assert_eq!(w.0.iter().product::<usize>(), 32, "block {b:?}");
                assert!((0..3).all(|d| b.0[d] % w.0[d] == 0), "block {b:?} warp {w:?}");
            }
        }
    }

    #[test]
    fn thread_mapping_examples() {
        let b = BlockShape([16, 8, 1]);
        let w = WarpShape([16, 2, 1]);
        let m = thread_mapping(b, w, [0, 0, 0], [5, 3, 0]);
        assert_eq!(m.warp_id, [0, 1, 0]);
        assert_eq!(m.lane_id, [5, 1, 0]);
        let m0 = thread_mapping(b, w, [0, 0, 0], [0, 0, 0]);
        assert_eq!(m0.warp_id, [0, 0, 0]);
        assert_eq!(m0.lane_id, [0, 0, 0]);
    }

    #[test]
    fn block_sweep_gives_bijective_lanes() {
        // A (16,8,1) block holds exactly 4 warps of 32 distinct linear lanes.
        let b = BlockShape([16, 8, 1]);
        let w = warp_sizes(b, 32);
        let mut by_warp: std::collections::HashMap<(usize, usize), HashSet<usize>> =
            std::collections::HashMap::new();
        for ty in 0..8 {
            for tx in 0..16 {
                let m = thread_mapping(b, w, [0, 0, 0], [tx, ty, 0]);
                let linear_lane = m.lane_id[0] + m.lane_id[1] * w.0[0];
                by_warp
                    .entry((m.warp_id[0], m.warp_id[1]))
                    .or_default()
                    .insert(linear_lane);
            }
        }
        assert_eq!(by_warp.len(), 4);
        for lanes in by_warp.values() {
            assert_eq!(lanes.len(), 32);
            assert_eq!(*lanes.iter().max().unwrap(), 31);
        }
    }

    const BLURX2: &str = "\
image img(4100, 8): float32
stage blurx(x, y) [1..4098, 0..7] = (img[x-1, y] + img[x, y] + img[x+1, y]) / 3
stage blury(x, y) [2..4097, 0..7] = (blurx[x-1, y] + blurx[x, y] + blurx[x+1, y]) / 3
liveout blury
";

    #[test]
    fn scratchpad_sizes_blur() {
        let g = parse_pipeline(BLURX2).unwrap();
        let group = vec!["blurx".to_string(), "blury".to_string()];
        let geom = group_geometry(&g, &group, &["blury".into()]).unwrap();
        let block = BlockShape([64, 4, 1]);
        let warp = warp_sizes(block, 32); // (32, 1, 1)
        assert_eq!(warp, WarpShape([32, 1, 1]));
        let sizes = scratchpad_sizes(&geom, &[8, 1, 1], warp, block);
        // 8 warps/block, blurx: (8*32 + 2) * 1 per warp = 258 -> 2064 total.
        assert_eq!(sizes[0], ("blurx".to_string(), 2064));
        // liveout has no overlap: 8 * 256 = 2048.
        assert_eq!(sizes[1], ("blury".to_string(), 2048));
    }

    #[test]
    fn scratchpad_collapses_without_overlap_or_tiling() {
        let g = parse_pipeline(BLURX2).unwrap();
        let geom = group_geometry(&g, &["blurx".to_string()], &["blurx".into()]).unwrap();
        let block = BlockShape([64, 4, 1]);
        let warp = warp_sizes(block, 32);
        // O = 0, T = 1: the scratchpad is exactly the block's thread count.
        let sizes = scratchpad_sizes(&geom, &[1, 1, 1], warp, block);
        assert_eq!(sizes[0].1, 256);
    }

    #[test]
    fn scratchpad_monotone_in_tile_and_overlap() {
        let g = parse_pipeline(BLURX2).unwrap();
        let group = vec!["blurx".to_string(), "blury".to_string()];
        let geom = group_geometry(&g, &group, &["blury".into()]).unwrap();
        let block = BlockShape([64, 4, 1]);
        let warp = warp_sizes(block, 32);
        let mut prev = 0;
        for t in 1..=16 {
            let s = scratchpad_sizes(&geom, &[t, 1, 1], warp, block)[0].1;
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn tiled_dimension_filter() {
        assert_eq!(warp_tiled_dimensions(WarpShape([32, 1, 1])), vec![0]);
        assert_eq!(warp_tiled_dimensions(WarpShape([16, 2, 1])), vec![0, 1]);
    }
}
