use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_3;

use super::{LaneGraph, LaneId};
use crate::geom::{angle_diff, project_on_polyline, Vec2};

/// Thresholds deciding which lanes an agent is projected onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGate {
    /// Maximum distance (m) from the centerline.
    pub radius: f64,
    /// Maximum heading deviation (rad) from the lane tangent.
    pub heading_tol: f64,
}

impl Default for ProjectionGate {
    fn default() -> Self {
        Self {
            radius: 3.0,
            heading_tol: FRAC_PI_3,
        }
    }
}

/// One (agent, lane) pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Index of the agent in its scene.
    pub agent: usize,
    pub lane_id: LaneId,
    pub arc_pos: f64,
    /// Signed, positive to the left of the lane direction.
    pub lateral_offset: f64,
    pub identity_id: usize,
}

/// Projects an agent onto every lane whose centerline passes within the gate
/// radius and whose tangent at the foot point agrees with `heading`.
/// Identity ids are numbered from zero in lane order; [`project_agents`]
/// numbers them across a whole timestep.
pub fn project_agent(g: &LaneGraph, agent: usize, position: Vec2, heading: f64, gate: ProjectionGate) -> Vec<Projection> {
    let mut out = Vec::new();
    if !(gate.radius > 0.0) {
        return out;
    }
    for lane in g.lanes() {
        if !lane.bbox().inflate(gate.radius).contains(position) {
            continue;
        }
        let Some(foot) = project_on_polyline(&lane.centerline, position) else {
            continue;
        };
        if foot.distance > gate.radius {
            continue;
        }
        let tangent = lane.centerline[foot.segment + 1] - lane.centerline[foot.segment];
        if angle_diff(tangent.angle(), heading) > gate.heading_tol {
            continue;
        }
        out.push(Projection {
            agent,
            lane_id: lane.id,
            arc_pos: foot.arc,
            lateral_offset: foot.lateral,
            identity_id: out.len(),
        });
    }
    out
}

/// Projects several agents `(index, position, heading)` at one timestep,
/// assigning identity ids sequentially over the result.
pub fn project_agents(g: &LaneGraph, agents: &[(usize, Vec2, f64)], gate: ProjectionGate) -> Vec<Projection> {
    let mut out: Vec<Projection> = Vec::new();
    for &(agent, pos, heading) in agents {
        for mut p in project_agent(g, agent, pos, heading, gate) {
            p.identity_id = out.len();
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn agent_on_centerline() {
        let g = straight(50.0);
        let p = project_agent(&g, 0, Vec2::new(10.0, 0.0), 0.0, ProjectionGate::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].lateral_offset, 0.0);
        assert!((p[0].arc_pos - 10.0).abs() < 1e-12);
    }

    #[test]
    fn agent_between_parallel_lanes_gets_two_identities() {
        let g = parallel(50.0);
        let p = project_agent(&g, 0, Vec2::new(10.0, 1.75), 0.0, ProjectionGate::default());
        assert_eq!(p.len(), 2);
        assert_ne!(p[0].identity_id, p[1].identity_id);
        assert!(p.iter().all(|q| q.lateral_offset.abs() <= 3.0));
    }

    #[test]
    fn opposing_heading_is_gated() {
        let g = straight(50.0);
        assert!(project_agent(&g, 0, Vec2::new(10.0, 0.0), PI, ProjectionGate::default()).is_empty());
    }

    #[test]
    fn identities_are_numbered_across_agents() {
        let g = parallel(50.0);
        let p = project_agents(
            &g,
            &[(0, Vec2::new(10.0, 1.75), 0.0), (1, Vec2::new(20.0, 0.0), 0.0)],
            ProjectionGate::default(),
        );
        let ids: Vec<usize> = p.iter().map(|q| q.identity_id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }
}
