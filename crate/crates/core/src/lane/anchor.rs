//! Anchor paths: permitted future paths of a road-bound agent.
//!
//! Paths are enumerated depth-first from the agent's projection. A path
//! continues along its current lane into each successor, or hops to a left or
//! right neighbor. A hop is only taken where the agent enters a lane (at the
//! projection or at a successor boundary), never twice in a row, and only if
//! the neighbor continues for at least [`LANE_CHANGE_MIN_OVERLAP`] meters past
//! the hop point. Paths are cut at the maximum length; dead ends give shorter
//! paths.

use alloc::vec;
use alloc::vec::Vec;

use super::{Lane, LaneGraph, LaneId, Projection};
use crate::error::Result;
use crate::geom::{angle_diff, closest_on_segment, project_on_polyline, sub_polyline, vertex_headings, Vec2};

pub const LANE_CHANGE_MIN_OVERLAP: f64 = 5.0;
/// Longitudinal distance over which a lane change merges onto the neighbor.
const LANE_CHANGE_LENGTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSettings {
    pub max_len: f64,
    pub max_k: usize,
}

impl Default for AnchorSettings {
    fn default() -> Self {
        Self {
            max_len: 100.0,
            max_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPath {
    pub anchor_id: usize,
    pub lane_ids: Vec<LaneId>,
    pub polyline: Vec<Vec2>,
    /// Heading per polyline point.
    pub headings: Vec<f64>,
}

impl AnchorPath {
    pub fn length(&self) -> f64 {
        crate::geom::polyline_length(&self.polyline)
    }

    fn from_points(lane_ids: Vec<LaneId>, polyline: Vec<Vec2>) -> Self {
        let headings = vertex_headings(&polyline);
        Self {
            anchor_id: 0,
            lane_ids,
            polyline,
            headings,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Entry {
    Start,
    Successor,
    LaneChange,
}

struct Search<'a> {
    g: &'a LaneGraph,
    max_len: f64,
    found: Vec<AnchorPath>,
}

impl Search<'_> {
    /// Extends a path that has just entered `lane` at arc `entry`.
    /// `pts` already ends at the entry point and has length `len`.
    fn visit(&mut self, lane: &Lane, entry: f64, how: Entry, lanes: &mut Vec<LaneId>, pts: &mut Vec<Vec2>, len: f64) {
        if how != Entry::LaneChange {
            let here = lane.point_at(entry);
            for nb in [lane.left, lane.right].into_iter().flatten() {
                if lanes.contains(&nb) {
                    continue;
                }
                let Ok(target) = self.g.lane(nb) else { continue };
                let Some(foot) = project_on_polyline(&target.centerline, here) else {
                    continue;
                };
                let overlap = target.length() - foot.arc;
                if overlap < LANE_CHANGE_MIN_OVERLAP {
                    continue;
                }
                let land_arc = foot.arc + LANE_CHANGE_LENGTH.min(overlap);
                let land = target.point_at(land_arc);
                let hop = here.dist(land);
                let mark = pts.len();
                lanes.push(nb);
                if len + hop >= self.max_len {
                    pts.push(here.lerp(land, (self.max_len - len) / hop));
                    self.emit(lanes, pts);
                } else {
                    pts.push(land);
                    self.visit(target, land_arc, Entry::LaneChange, lanes, pts, len + hop);
                }
                lanes.pop();
                pts.truncate(mark);
            }
        }

        let remaining = lane.length() - entry;
        let mark = pts.len();
        if len + remaining >= self.max_len {
            let cut = sub_polyline(&lane.centerline, lane.arc_lengths(), entry, entry + (self.max_len - len));
            push_skip_dup(pts, &cut);
            self.emit(lanes, pts);
            pts.truncate(mark);
            return;
        }
        let rest = sub_polyline(&lane.centerline, lane.arc_lengths(), entry, lane.length());
        push_skip_dup(pts, &rest);
        let next_len = len + remaining;
        let mut extended = false;
        for &succ in &lane.successors {
            if lanes.contains(&succ) {
                continue;
            }
            let Ok(next) = self.g.lane(succ) else { continue };
            extended = true;
            lanes.push(succ);
            let mark2 = pts.len();
            let start = next.centerline[0];
            let gap = pts.last().map_or(0.0, |p| p.dist(start));
            if gap > 0.0 {
                pts.push(start);
            }
            self.visit(next, 0.0, Entry::Successor, lanes, pts, next_len + gap);
            pts.truncate(mark2);
            lanes.pop();
        }
        if !extended {
            self.emit(lanes, pts);
        }
        pts.truncate(mark);
    }

    fn emit(&mut self, lanes: &[LaneId], pts: &[Vec2]) {
        if self.found.iter().any(|a| a.lane_ids == lanes) {
            return;
        }
        self.found.push(AnchorPath::from_points(lanes.to_vec(), pts.to_vec()));
    }
}

fn push_skip_dup(pts: &mut Vec<Vec2>, more: &[Vec2]) {
    for &p in more {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
}

/// Enumerates the anchor paths starting at a projection.
///
/// The result is deduplicated by lane sequence and sorted lexicographically
/// by it. When more than `max_k` paths exist, the ones whose final heading
/// deviates least from the initial heading are kept.
pub fn enumerate_anchor_paths(g: &LaneGraph, proj: &Projection, settings: AnchorSettings) -> Result<Vec<AnchorPath>> {
    enumerate_agent_anchors(g, core::slice::from_ref(proj), settings)
}

/// Anchor paths from every projection of one agent, merged, deduplicated and
/// capped as in [`enumerate_anchor_paths`].
pub fn enumerate_agent_anchors(g: &LaneGraph, projections: &[Projection], settings: AnchorSettings) -> Result<Vec<AnchorPath>> {
    let mut search = Search {
        g,
        max_len: settings.max_len,
        found: Vec::new(),
    };
    for proj in projections {
        let lane = g.lane(proj.lane_id)?;
        let start = lane.point_at(proj.arc_pos);
        let mut lanes = vec![lane.id];
        let mut pts = vec![start];
        search.visit(lane, proj.arc_pos, Entry::Start, &mut lanes, &mut pts, 0.0);
    }
    let mut found = search.found;

    if found.len() > settings.max_k {
        let turn = |a: &AnchorPath| {
            let h = &a.headings;
            angle_diff(h[h.len() - 1], h[0])
        };
        found.sort_by(|a, b| turn(a).total_cmp(&turn(b)).then_with(|| a.lane_ids.cmp(&b.lane_ids)));
        found.truncate(settings.max_k);
    }
    found.sort_by(|a, b| a.lane_ids.cmp(&b.lane_ids));
    for (i, a) in found.iter_mut().enumerate() {
        a.anchor_id = i;
    }
    Ok(found)
}

/// Heading of the anchor segment nearest to `query`. Ties go to the earlier
/// segment; single-point anchors return their only heading.
pub fn heading_along_anchor(anchor: &AnchorPath, query: Vec2) -> f64 {
    let pts = &anchor.polyline;
    if pts.len() < 2 {
        return anchor.headings.first().copied().unwrap_or(0.0);
    }
    let mut best = (f64::INFINITY, 0usize);
    for (i, w) in pts.windows(2).enumerate() {
        if w[0] == w[1] {
            continue;
        }
        let d = query.dist(closest_on_segment(query, w[0], w[1]).0);
        if d < best.0 {
            best = (d, i);
        }
    }
    (pts[best.1 + 1] - pts[best.1]).angle()
}
