//! Lane network: lanes with centerlines and topology, plus the extra map
//! layers used by the rasterizer.

mod anchor;
mod nodes;
mod project;
mod raster;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use anchor::{enumerate_agent_anchors, enumerate_anchor_paths, heading_along_anchor, AnchorPath, AnchorSettings, LANE_CHANGE_MIN_OVERLAP};
pub use nodes::{discretize_map, MapNode, MAP_SQUARE_SIZE};
pub use project::{project_agent, project_agents, Projection, ProjectionGate};
pub use raster::{rasterize, Pose, RasterPatch, RASTER_CHANNELS, RASTER_EXTENT, RASTER_SIZE};

use crate::error::{Error, Result};
use crate::geom::{cumulative_lengths, distance_to_polyline, Aabb, Vec2};

/// Tolerance applied to corridor containment so that points placed exactly on
/// a corridor boundary count as drivable despite rounding.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Raster channels, in patch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RasterChannel {
    Drivable,
    LaneBorder,
    LaneDivider,
    PedCrossing,
    Walkway,
    StopArea,
    Carpark,
    RoadDivider,
    TrafficSign,
    IntersectionZone,
}

impl RasterChannel {
    pub const ALL: [RasterChannel; 10] = [
        RasterChannel::Drivable,
        RasterChannel::LaneBorder,
        RasterChannel::LaneDivider,
        RasterChannel::PedCrossing,
        RasterChannel::Walkway,
        RasterChannel::StopArea,
        RasterChannel::Carpark,
        RasterChannel::RoadDivider,
        RasterChannel::TrafficSign,
        RasterChannel::IntersectionZone,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            RasterChannel::Drivable => "drivable",
            RasterChannel::LaneBorder => "lane_border",
            RasterChannel::LaneDivider => "lane_divider",
            RasterChannel::PedCrossing => "ped_crossing",
            RasterChannel::Walkway => "walkway",
            RasterChannel::StopArea => "stop_area",
            RasterChannel::Carpark => "carpark",
            RasterChannel::RoadDivider => "road_divider",
            RasterChannel::TrafficSign => "traffic_sign",
            RasterChannel::IntersectionZone => "intersection_zone",
        }
    }
}

impl FromStr for RasterChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RasterChannel::ALL
            .into_iter()
            .find(|c| c.tag() == s)
            .ok_or_else(|| Error::InvalidLaneGraph(format!("unknown channel tag `{s}`")))
    }
}

/// Extra map geometry drawn into one raster channel.
#[derive(Debug, Clone, PartialEq)]
pub enum MapShape {
    Polygon(Vec<Vec2>),
    Polyline(Vec<Vec2>),
}

impl MapShape {
    pub fn points(&self) -> &[Vec2] {
        match self {
            MapShape::Polygon(p) | MapShape::Polyline(p) => p,
        }
    }

    fn map_points(&self, f: impl Fn(Vec2) -> Vec2) -> MapShape {
        match self {
            MapShape::Polygon(p) => MapShape::Polygon(p.iter().map(|&q| f(q)).collect()),
            MapShape::Polyline(p) => MapShape::Polyline(p.iter().map(|&q| f(q)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub successors: Vec<LaneId>,
    pub predecessors: Vec<LaneId>,
    pub left: Option<LaneId>,
    pub right: Option<LaneId>,
    pub tags: Vec<RasterChannel>,
    cum: Vec<f64>,
}

impl Lane {
    pub fn new(id: LaneId, centerline: Vec<Vec2>, width: f64) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidLaneGraph(format!("lane {id}: {m}")));
        if centerline.len() < 2 {
            return bad("centerline needs at least two points");
        }
        if centerline.windows(2).any(|w| w[0] == w[1]) {
            return bad("consecutive centerline points coincide");
        }
        if centerline.iter().any(|p| !p.is_finite()) {
            return bad("non-finite centerline point");
        }
        if !(width > 0.0 && width.is_finite()) {
            return bad("width must be positive");
        }
        let cum = cumulative_lengths(&centerline);
        Ok(Self {
            id,
            centerline,
            width,
            successors: Vec::new(),
            predecessors: Vec::new(),
            left: None,
            right: None,
            tags: Vec::new(),
            cum,
        })
    }

    pub fn with_successors(mut self, ids: impl IntoIterator<Item = u32>) -> Self {
        self.successors = ids.into_iter().map(LaneId).collect();
        self
    }

    pub fn with_predecessors(mut self, ids: impl IntoIterator<Item = u32>) -> Self {
        self.predecessors = ids.into_iter().map(LaneId).collect();
        self
    }

    pub fn with_neighbors(mut self, left: Option<u32>, right: Option<u32>) -> Self {
        self.left = left.map(LaneId);
        self.right = right.map(LaneId);
        self
    }

    pub fn with_tags(mut self, tags: impl IntoIterator<Item = RasterChannel>) -> Self {
        self.tags = tags.into_iter().collect();
        self
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    /// Cumulative arc length per centerline vertex.
    pub fn arc_lengths(&self) -> &[f64] {
        &self.cum
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        crate::geom::point_at_arc(&self.centerline, &self.cum, s).0
    }

    /// Unit tangent at arc `s` (direction of the segment containing it).
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let (_, seg) = crate::geom::point_at_arc(&self.centerline, &self.cum, s);
        (self.centerline[seg + 1] - self.centerline[seg])
            .normalized()
            .unwrap_or(Vec2::new(1.0, 0.0))
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::of_points(&self.centerline).expect("lane has points")
    }

    fn map_points(&self, f: impl Fn(Vec2) -> Vec2) -> Lane {
        let centerline: Vec<Vec2> = self.centerline.iter().map(|&p| f(p)).collect();
        let cum = cumulative_lengths(&centerline);
        Lane {
            centerline,
            cum,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneGraph {
    lanes: BTreeMap<LaneId, Lane>,
    pub extras: BTreeMap<RasterChannel, Vec<MapShape>>,
}

impl LaneGraph {
    /// Builds and validates a graph. Every referenced id must resolve and
    /// left/right links must be mutual.
    pub fn new(lanes: Vec<Lane>, extras: BTreeMap<RasterChannel, Vec<MapShape>>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for l in lanes {
            let id = l.id;
            if map.insert(id, l).is_some() {
                return Err(Error::InvalidLaneGraph(format!("duplicate lane id {id}")));
            }
        }
        let g = Self { lanes: map, extras };
        g.validate()?;
        Ok(g)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    fn validate(&self) -> Result<()> {
        for l in self.lanes.values() {
            let refs = l
                .successors
                .iter()
                .chain(&l.predecessors)
                .chain(l.left.iter())
                .chain(l.right.iter());
            for r in refs {
                if !self.lanes.contains_key(r) {
                    return Err(Error::InvalidLaneGraph(format!("lane {} references missing lane {r}", l.id)));
                }
            }
            if let Some(b) = l.left {
                if self.lanes[&b].right != Some(l.id) {
                    return Err(Error::InvalidLaneGraph(format!("left of {} is {b} but right of {b} is not {}", l.id, l.id)));
                }
            }
            if let Some(b) = l.right {
                if self.lanes[&b].left != Some(l.id) {
                    return Err(Error::InvalidLaneGraph(format!("right of {} is {b} but left of {b} is not {}", l.id, l.id)));
                }
            }
        }
        for shapes in self.extras.values() {
            for s in shapes {
                let min = if matches!(s, MapShape::Polygon(_)) { 3 } else { 2 };
                if s.points().len() < min || s.points().iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidLaneGraph("degenerate extra shape".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn lane(&self, id: LaneId) -> Result<&Lane> {
        self.lanes.get(&id).ok_or(Error::UnknownLane(id))
    }

    pub fn contains(&self, id: LaneId) -> bool {
        self.lanes.contains_key(&id)
    }

    /// True iff `a` and `b` are left/right neighbors.
    pub fn adjacent(&self, a: LaneId, b: LaneId) -> bool {
        self.lanes
            .get(&a)
            .is_some_and(|l| l.left == Some(b) || l.right == Some(b))
    }

    pub fn translated(&self, offset: Vec2) -> LaneGraph {
        self.map_points(|p| p + offset)
    }

    /// Rotates every point about the map origin.
    pub fn rotated(&self, theta: f64) -> LaneGraph {
        self.map_points(|p| p.rotate(theta))
    }

    fn map_points(&self, f: impl Fn(Vec2) -> Vec2 + Copy) -> LaneGraph {
        LaneGraph {
            lanes: self.lanes.iter().map(|(k, l)| (*k, l.map_points(f))).collect(),
            extras: self
                .extras
                .iter()
                .map(|(k, v)| (*k, v.iter().map(|s| s.map_points(f)).collect()))
                .collect(),
        }
    }

    /// Closed-set test against the union of lane corridors (centerline
    /// buffered by half the lane width).
    pub fn is_on_drivable(&self, p: Vec2) -> bool {
        self.lanes.values().any(|l| {
            let hw = l.half_width();
            l.bbox().inflate(hw + BOUNDARY_EPS).contains(p) && distance_to_polyline(&l.centerline, p) <= hw + BOUNDARY_EPS
        })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    //! Small hand-built graphs shared by unit tests.
    use super::*;
    use alloc::vec;
    use core::f64::consts::FRAC_PI_2;

    pub fn straight(len: f64) -> LaneGraph {
        let l = Lane::new(LaneId(1), vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)], 3.5).unwrap();
        LaneGraph::new(vec![l], BTreeMap::new()).unwrap()
    }

    /// Two parallel eastbound lanes: 1 on the right (y=0), 2 on the left (y=3.5).
    pub fn parallel(len: f64) -> LaneGraph {
        let r = Lane::new(LaneId(1), vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)], 3.5)
            .unwrap()
            .with_neighbors(Some(2), None);
        let l = Lane::new(LaneId(2), vec![Vec2::new(0.0, 3.5), Vec2::new(len, 3.5)], 3.5)
            .unwrap()
            .with_neighbors(None, Some(1));
        LaneGraph::new(vec![r, l], BTreeMap::new()).unwrap()
    }

    pub fn arc(center: Vec2, radius: f64, a0: f64, a1: f64, n: usize) -> Vec<Vec2> {
        (0..=n)
            .map(|i| {
                let a = a0 + (a1 - a0) * i as f64 / n as f64;
                center + Vec2::new(a.cos(), a.sin()) * radius
            })
            .collect()
    }

    /// Counter-clockwise quarter circle of radius 10 from (10,0) to (0,10).
    pub fn quarter_circle() -> LaneGraph {
        let l = Lane::new(LaneId(1), arc(Vec2::ZERO, 10.0, 0.0, FRAC_PI_2, 1000), 3.5).unwrap();
        LaneGraph::new(vec![l], BTreeMap::new()).unwrap()
    }

    /// Stem lane 1 (x from -30 to 0), branches 2 (bending left) and 3 (bending
    /// right), each roughly 100 m long.
    pub fn y_fork() -> LaneGraph {
        let stem = Lane::new(LaneId(1), vec![Vec2::new(-30.0, 0.0), Vec2::new(0.0, 0.0)], 3.5)
            .unwrap()
            .with_successors([2, 3]);
        let left = Lane::new(
            LaneId(2),
            vec![Vec2::new(0.0, 0.0), Vec2::new(20.0, 5.0), Vec2::new(100.0, 40.0)],
            3.5,
        )
        .unwrap()
        .with_predecessors([1]);
        let right = Lane::new(
            LaneId(3),
            vec![Vec2::new(0.0, 0.0), Vec2::new(20.0, -5.0), Vec2::new(100.0, -40.0)],
            3.5,
        )
        .unwrap()
        .with_predecessors([1]);
        LaneGraph::new(vec![stem, left, right], BTreeMap::new()).unwrap()
    }
}
