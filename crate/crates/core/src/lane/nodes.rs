use alloc::vec::Vec;

use super::{LaneGraph, LaneId};
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Side length of the square (m) around the scene center that map nodes are
/// gathered from.
pub const MAP_SQUARE_SIZE: f64 = 190.0;

/// A sampled centerline segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapNode {
    pub node_id: usize,
    pub lane_id: LaneId,
    pub position: Vec2,
    /// Unit tangent of the centerline segment under the node.
    pub direction: Vec2,
    pub arc_pos: f64,
}

/// Samples every centerline each `step` meters (plus the lane endpoint) and
/// keeps the samples inside the axis-aligned map square around `center`.
/// Lanes are visited in id order; node ids are assigned in output order.
pub fn discretize_map(g: &LaneGraph, center: Vec2, step: f64) -> Result<Vec<MapNode>> {
    if g.is_empty() {
        return Err(Error::EmptyLaneGraph);
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!("map node step must be positive, got {step}")));
    }
    let half = 0.5 * MAP_SQUARE_SIZE;
    let mut out = Vec::new();
    for lane in g.lanes() {
        let len = lane.length();
        let mut arcs = Vec::new();
        let mut s = 0.0;
        let mut i = 0u32;
        while s < len - 1e-9 {
            arcs.push(s);
            i += 1;
            s = f64::from(i) * step;
        }
        arcs.push(len);
        for s in arcs {
            let p = lane.point_at(s);
            let d = p - center;
            if d.x.abs() <= half && d.y.abs() <= half {
                out.push(MapNode {
                    node_id: out.len(),
                    lane_id: lane.id,
                    position: p,
                    direction: lane.tangent_at(s),
                    arc_pos: s,
                });
            }
        }
    }
    Ok(out)
}
