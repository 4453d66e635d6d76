//! Semantic scene graph: typed relations between agents derived from their
//! lane projections.
//!
//! For every ordered pair of agents and every pair of their projection
//! identities a relation is derived:
//!
//! * **Longitudinal** if one lane is reachable from the other through
//!   successor links (or both are the same lane) within the horizon, in either
//!   direction; the distance is the route length between the two foot points.
//! * **Lateral** if the lanes are left/right neighbors; the distance is the
//!   difference of arc positions.
//! * **Intersecting** if the centerlines cross and neither of the above
//!   holds; the distance is the source's arc distance to the nearest
//!   crossing. Centerlines that only touch at a shared endpoint of both do not
//!   cross.
//!
//! Identity pairs collapse to the minimum distance per relation, and each
//! ordered agent pair keeps a single relation, chosen in the order
//! longitudinal, lateral, intersecting.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::geom::segment_intersection;
use crate::lane::{LaneGraph, LaneId, Projection};

/// Default reachability horizon (m) for longitudinal relations.
pub const DEFAULT_HORIZON: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationType {
    Longitudinal,
    Lateral,
    Intersecting,
}

impl RelationType {
    pub const ALL: [RelationType; 3] = [RelationType::Longitudinal, RelationType::Lateral, RelationType::Intersecting];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Longitudinal => "longitudinal",
            RelationType::Lateral => "lateral",
            RelationType::Intersecting => "intersecting",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsgEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationType,
    pub along_dist: f64,
}

/// Shortest route length (m) from arc `from_arc` on `from` to arc `to_arc` on
/// `to` following successor links, if it is at most `horizon`.
pub fn route_distance(g: &LaneGraph, from: LaneId, from_arc: f64, to: LaneId, to_arc: f64, horizon: f64) -> Result<Option<f64>> {
    let start = g.lane(from)?;
    g.lane(to)?;
    let mut best: Option<f64> = None;
    if from == to && to_arc >= from_arc {
        best = Some(to_arc - from_arc);
    }
    // Dijkstra over lane entries; key = distance at the start of a lane
    let mut dist: BTreeMap<LaneId, f64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let exit = start.length() - from_arc;
    for &s in &start.successors {
        push_if_better(&mut dist, &mut heap, s, exit);
    }
    while let Some(Reverse(Entry(d, id))) = heap.pop() {
        if d > horizon || dist.get(&id).is_some_and(|&k| k < d) {
            continue;
        }
        if best.is_some_and(|b| d >= b) {
            break;
        }
        if id == to {
            let total = d + to_arc;
            if best.is_none_or(|b| total < b) {
                best = Some(total);
            }
        }
        let lane = g.lane(id)?;
        let next = d + lane.length();
        for &s in &lane.successors {
            push_if_better(&mut dist, &mut heap, s, next);
        }
    }
    Ok(best.filter(|&b| b <= horizon))
}

#[derive(PartialEq)]
struct Entry(f64, LaneId);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn push_if_better(dist: &mut BTreeMap<LaneId, f64>, heap: &mut BinaryHeap<Reverse<Entry>>, id: LaneId, d: f64) {
    if dist.get(&id).is_none_or(|&k| d < k) {
        dist.insert(id, d);
        heap.push(Reverse(Entry(d, id)));
    }
}

/// Arc positions on `a` and `b` where their centerlines cross. Contacts
/// located at an endpoint of both centerlines are ignored.
pub fn lane_crossings(g: &LaneGraph, a: LaneId, b: LaneId) -> Result<Vec<(f64, f64)>> {
    let la = g.lane(a)?;
    let lb = g.lane(b)?;
    let (ca, cb) = (la.arc_lengths(), lb.arc_lengths());
    let mut out = Vec::new();
    if a == b || !la.bbox().intersects(&lb.bbox()) {
        return Ok(out);
    }
    let (na, nb) = (la.centerline.len(), lb.centerline.len());
    for i in 0..na - 1 {
        for j in 0..nb - 1 {
            let Some((t, u)) = segment_intersection(la.centerline[i], la.centerline[i + 1], lb.centerline[j], lb.centerline[j + 1]) else {
                continue;
            };
            let sa = ca[i] + t * (ca[i + 1] - ca[i]);
            let sb = cb[j] + u * (cb[j + 1] - cb[j]);
            let end_a = sa <= 1e-9 || sa >= la.length() - 1e-9;
            let end_b = sb <= 1e-9 || sb >= lb.length() - 1e-9;
            if !(end_a && end_b) {
                out.push((sa, sb));
            }
        }
    }
    Ok(out)
}

/// Relation between two projection identities, if any, with its distance.
fn identity_relations(g: &LaneGraph, pa: &Projection, pb: &Projection, horizon: f64) -> Result<[Option<f64>; 3]> {
    let fwd = route_distance(g, pa.lane_id, pa.arc_pos, pb.lane_id, pb.arc_pos, horizon)?;
    let bwd = route_distance(g, pb.lane_id, pb.arc_pos, pa.lane_id, pa.arc_pos, horizon)?;
    let longitudinal = match (fwd, bwd) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    let lateral = g
        .adjacent(pa.lane_id, pb.lane_id)
        .then(|| (pa.arc_pos - pb.arc_pos).abs());
    let mut intersecting = None;
    if longitudinal.is_none() && lateral.is_none() {
        intersecting = lane_crossings(g, pa.lane_id, pb.lane_id)?
            .into_iter()
            .map(|(sa, _)| (sa - pa.arc_pos).abs())
            .min_by(f64::total_cmp);
    }
    Ok([longitudinal, lateral, intersecting])
}

/// Builds the scene graph for the projections of one timestep. Edges are
/// ordered by (src, dst).
pub fn build_ssg(projections: &[Projection], g: &LaneGraph, horizon: f64) -> Result<Vec<SsgEdge>> {
    for p in projections {
        g.lane(p.lane_id)?;
    }
    let mut by_agent: BTreeMap<usize, Vec<&Projection>> = BTreeMap::new();
    for p in projections {
        by_agent.entry(p.agent).or_default().push(p);
    }
    let mut edges = Vec::new();
    for (&a, pas) in &by_agent {
        for (&b, pbs) in &by_agent {
            if a == b {
                continue;
            }
            let mut best: [Option<f64>; 3] = [None; 3];
            for pa in pas {
                for pb in pbs {
                    let rel = identity_relations(g, pa, pb, horizon)?;
                    for (slot, d) in best.iter_mut().zip(rel) {
                        if let Some(d) = d {
                            if slot.is_none_or(|s| d < s) {
                                *slot = Some(d);
                            }
                        }
                    }
                }
            }
            if let Some((relation, d)) = RelationType::ALL
                .into_iter()
                .zip(best)
                .find_map(|(r, d)| d.map(|d| (r, d)))
            {
                edges.push(SsgEdge {
                    src: a,
                    dst: b,
                    relation,
                    along_dist: d,
                });
            }
        }
    }
    Ok(edges)
}

/// `1 - |ssg edges| / (n (n - 1))` for `n` agents.
pub fn reduction_ratio(num_agents: usize, num_edges: usize) -> Result<f64> {
    if num_agents < 2 {
        return Err(Error::TooFewAgents {
            needed: 2,
            got: num_agents,
        });
    }
    let full = num_agents * (num_agents - 1);
    Ok(1.0 - num_edges as f64 / full as f64)
}

/// Text dump, one `src dst relation dist_m` line per edge.
pub fn dump_edges(edges: &[SsgEdge], names: &[String]) -> String {
    let mut s = String::new();
    for e in edges {
        let name = |i: usize| names.get(i).map_or("?", String::as_str);
        let _ = writeln!(s, "{} {} {} {:.6}", name(e.src), name(e.dst), e.relation.name(), e.along_dist);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::lane::{project_agents, ProjectionGate};
    use crate::synth::{template_lane_graph, Template};
    use alloc::vec;

    fn proj(g: &LaneGraph, agents: &[(usize, Vec2, f64)]) -> Vec<Projection> {
        project_agents(g, agents, ProjectionGate::default())
    }

    #[test]
    fn followers_on_one_lane() {
        let g = crate::lane::fixtures::straight(100.0);
        let p = proj(&g, &[(0, Vec2::new(10.0, 0.0), 0.0), (1, Vec2::new(22.0, 0.0), 0.0)]);
        let e = build_ssg(&p, &g, DEFAULT_HORIZON).unwrap();
        assert_eq!(e.len(), 2);
        for x in &e {
            assert_eq!(x.relation, RelationType::Longitudinal);
            assert!((x.along_dist - 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crossing_lanes_intersect() {
        let g = template_lane_graph(Template::CrossIntersection);
        // eastbound on lane 2 at x=-5, northbound on lane 5 at y=-8
        let p = proj(
            &g,
            &[
                (0, Vec2::new(-5.0, -1.75), 0.0),
                (1, Vec2::new(1.75, -8.0), core::f64::consts::FRAC_PI_2),
            ],
        );
        let e = build_ssg(&p, &g, DEFAULT_HORIZON).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|x| x.relation == RelationType::Intersecting));
        // crossing at (1.75, -1.75): 6.75 m ahead of agent 0, 6.25 m ahead of agent 1
        assert!((e[0].along_dist - 6.75).abs() < 1e-9);
        assert!((e[1].along_dist - 6.25).abs() < 1e-9);
    }

    #[test]
    fn single_agent_has_no_edges() {
        let g = crate::lane::fixtures::straight(100.0);
        let p = proj(&g, &[(0, Vec2::new(10.0, 0.0), 0.0)]);
        assert!(build_ssg(&p, &g, DEFAULT_HORIZON).unwrap().is_empty());
    }

    #[test]
    fn neighbors_are_lateral() {
        let g = crate::lane::fixtures::parallel(100.0);
        let p = proj(&g, &[(0, Vec2::new(10.0, 0.0), 0.0), (1, Vec2::new(14.0, 3.5), 0.0)]);
        let e = build_ssg(&p, &g, DEFAULT_HORIZON).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|x| x.relation == RelationType::Lateral && (x.along_dist - 4.0).abs() < 1e-12));
    }

    #[test]
    fn route_through_successors() {
        let g = crate::lane::fixtures::y_fork();
        let d = route_distance(&g, LaneId(1), 10.0, LaneId(2), 5.0, 100.0).unwrap();
        assert!((d.unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(route_distance(&g, LaneId(2), 5.0, LaneId(1), 10.0, 100.0).unwrap(), None);
        assert_eq!(route_distance(&g, LaneId(1), 10.0, LaneId(2), 90.0, 100.0).unwrap(), None);
    }

    #[test]
    fn unknown_lane_in_projection() {
        let g = crate::lane::fixtures::straight(100.0);
        let p = vec![Projection {
            agent: 0,
            lane_id: LaneId(5),
            arc_pos: 0.0,
            lateral_offset: 0.0,
            identity_id: 0,
        }];
        assert_eq!(build_ssg(&p, &g, DEFAULT_HORIZON), Err(Error::UnknownLane(LaneId(5))));
    }

    #[test]
    fn ratio_counts() {
        assert_eq!(reduction_ratio(2, 2).unwrap(), 0.0);
        assert!((reduction_ratio(3, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(reduction_ratio(1, 0).is_err());
    }
}
