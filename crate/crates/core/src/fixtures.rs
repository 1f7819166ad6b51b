//! Sample pipelines bundled for tests and demos; the same files live under
//! `pipelines/` at the repository root for CLI use.

use std::collections::HashMap;

use crate::pipeline::{parse_pipeline, Buffer, PipelineGraph};

pub const BLUR: &str = include_str!("../../../pipelines/blur.pipe");
pub const BLUR2D: &str = include_str!("../../../pipelines/blur2d.pipe");
pub const BLUR_TX: &str = include_str!("../../../pipelines/blur_tx.pipe");
pub const CHAIN3: &str = include_str!("../../../pipelines/chain3.pipe");
pub const CHAIN6: &str = include_str!("../../../pipelines/chain6.pipe");
pub const DIAMOND: &str = include_str!("../../../pipelines/diamond.pipe");
pub const HARRIS11: &str = include_str!("../../../pipelines/harris11.pipe");

/// (name, source) of every bundled pipeline.
pub fn all() -> Vec<(&'static str, &'static str)> {
    vec![
        ("blur", BLUR),
        ("blur2d", BLUR2D),
        ("blur_tx", BLUR_TX),
        ("chain3", CHAIN3),
        ("chain6", CHAIN6),
        ("diamond", DIAMOND),
        ("harris11", HARRIS11),
    ]
}

pub fn graph(name: &str) -> PipelineGraph {
    let src = all()
        .into_iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("unknown fixture `{name}`"))
        .1;
    parse_pipeline(src).expect("bundled fixture parses")
}

/// Seeded random input buffers for a pipeline.
pub fn seeded_inputs(g: &PipelineGraph, seed: u64) -> HashMap<String, Buffer> {
    g.images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            (img.name.clone(), Buffer::seeded(img.kind, &img.dims, seed.wrapping_add(i as u64)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fixtures_parse_and_validate() {
        for (name, src) in all() {
            let g = parse_pipeline(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!g.stages.is_empty());
        }
    }

    #[test]
    fn harris_fixture_has_eleven_stages() {
        assert_eq!(graph("harris11").stages.len(), 11);
    }

    #[test]
    fn topo_order_is_edge_consistent_on_harris() {
        // Oracle: every producer-consumer edge points forward in the order.
        let g = graph("harris11");
        let order = crate::pipeline::topo_order(&g);
        let pos: HashMap<&str, usize> =
            order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        for (p, c) in g.edges() {
            assert!(pos[p.as_str()] < pos[c.as_str()], "{p} -> {c}");
        }
    }
}
