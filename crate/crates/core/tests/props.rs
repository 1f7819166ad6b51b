//! Randomized properties over the tiling and transaction primitives.

use proptest::prelude::*;
use warptile::cost::min_gl_transactions;
use warptile::tiling::{pad_block, warp_sizes, BlockShape};

proptest! {
    /// Wider transactions never need more segments, and four 32B segments
    /// cover at most one 128B segment.
    #[test]
    fn txsz_dominance(addrs in proptest::collection::vec(0i64..1_000_000, 1..32)) {
        let t128 = min_gl_transactions(&addrs, 128);
        let t32 = min_gl_transactions(&addrs, 32);
        prop_assert!(t128 <= t32);
        prop_assert!(t32 <= 4 * t128);
    }

    /// Any block shape pads to whole warps whose extents divide the block.
    #[test]
    fn padded_blocks_decompose_into_warps(bx in 1usize..96, by in 1usize..12, bz in 1usize..4) {
        let b = pad_block(BlockShape([bx, by, bz]), 32);
        let w = warp_sizes(b, 32);
        prop_assert_eq!(w.0.iter().product::<usize>(), 32);
        for d in 0..3 {
            prop_assert_eq!(b.0[d] % w.0[d], 0);
        }
        prop_assert!(b.0[0] >= bx);
        prop_assert_eq!((b.0[1], b.0[2]), (by, bz));
    }
}
