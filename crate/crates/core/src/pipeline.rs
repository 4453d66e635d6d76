//! Scene to model input: local frame, map nodes, per-step scene graphs,
//! anchors, the heterogeneous graph and (optionally) map latents.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::graph::{build_graph, GraphConfig, GraphInputs, HeteroGraph};
use crate::lane::{
    discretize_map, enumerate_agent_anchors, project_agents, rasterize, AnchorPath, AnchorSettings, LaneGraph, Pose, Projection,
    ProjectionGate,
};
use crate::model::MapAutoencoder;
use crate::scene::{AgentTrack, AgentType, Scene, HISTORY_STEPS};
use crate::ssg::{build_ssg, SsgEdge, DEFAULT_HORIZON};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub graph: GraphConfig,
    pub gate: ProjectionGate,
    pub anchor_max_len: f64,
    pub ssg_horizon: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            gate: ProjectionGate::default(),
            anchor_max_len: 100.0,
            ssg_horizon: DEFAULT_HORIZON,
        }
    }
}

/// A scene prepared for the network, everything in the local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene_id: String,
    pub origin: Vec2,
    pub tracks: Vec<AgentTrack>,
    pub lanes: LaneGraph,
    /// Scene graph per history slot (oldest first).
    pub ssg: Vec<Vec<SsgEdge>>,
    pub graph: HeteroGraph,
}

/// Projections of every agent observed at timestep `t`.
pub fn projections_at(tracks: &[AgentTrack], lanes: &LaneGraph, t: i32, gate: ProjectionGate) -> Vec<Projection> {
    let agents: Vec<(usize, Vec2, f64)> = tracks
        .iter()
        .enumerate()
        .filter_map(|(i, tr)| tr.state_at(t).map(|s| (i, s.position, s.yaw)))
        .collect();
    project_agents(lanes, &agents, gate)
}

/// Scene graph of each history slot, t = −4..=0.
pub fn history_ssg(tracks: &[AgentTrack], lanes: &LaneGraph, gate: ProjectionGate, horizon: f64) -> Result<Vec<Vec<SsgEdge>>> {
    (0..HISTORY_STEPS)
        .map(|slot| {
            let t = slot as i32 - (HISTORY_STEPS as i32 - 1);
            build_ssg(&projections_at(tracks, lanes, t, gate), lanes, horizon)
        })
        .collect()
}

/// Anchor paths of every agent from its projections at t = 0; empty for
/// non-road-bound agents.
pub fn scene_anchors(tracks: &[AgentTrack], lanes: &LaneGraph, gate: ProjectionGate, settings: AnchorSettings) -> Result<Vec<Vec<AnchorPath>>> {
    let proj = projections_at(tracks, lanes, 0, gate);
    tracks
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            if tr.agent_type == AgentType::NonRoadBound {
                return Ok(Vec::new());
            }
            let mine: Vec<Projection> = proj.iter().filter(|p| p.agent == i).copied().collect();
            enumerate_agent_anchors(lanes, &mine, settings)
        })
        .collect()
}

/// Builds the graph for `scene` on the map-frame lane graph `lanes`.
pub fn build_sample(scene: &Scene, lanes: &LaneGraph, cfg: &SampleConfig) -> Result<Sample> {
    if scene.tracks.is_empty() {
        return Err(Error::Graph("scene has no agents".into()));
    }
    let origin = scene.origin();
    let tracks = scene.local_tracks();
    let lanes = lanes.translated(-origin);
    let map_nodes = discretize_map(&lanes, Vec2::ZERO, cfg.graph.map_step)?;
    let ssg = history_ssg(&tracks, &lanes, cfg.gate, cfg.ssg_horizon)?;
    let settings = AnchorSettings {
        max_len: cfg.anchor_max_len,
        max_k: cfg.graph.max_anchors,
    };
    let anchors = scene_anchors(&tracks, &lanes, cfg.gate, settings)?;
    let graph = build_graph(
        &GraphInputs {
            tracks: &tracks,
            lane_graph: &lanes,
            map_nodes: &map_nodes,
            ssg: &ssg,
            anchors: &anchors,
        },
        &cfg.graph,
    )?;
    Ok(Sample {
        scene_id: scene.scene_id.clone(),
        origin,
        tracks,
        lanes,
        ssg,
        graph,
    })
}

/// Raster poses of every agent node, in node order per agent type.
pub fn node_poses(sample: &Sample) -> [Vec<Pose>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for t in [AgentType::RoadBound, AgentType::NonRoadBound] {
        let slot = match t {
            AgentType::RoadBound => 0,
            AgentType::NonRoadBound => 1,
        };
        let mut poses = alloc::vec![None; sample.graph.agent_nodes(t).len()];
        for (ai, info) in sample.graph.agents_of(t) {
            let w = sample.tracks[ai].history_window();
            for (k, &node) in info.nodes.iter().enumerate() {
                poses[node] = Some(Pose {
                    center: w.states[k].position,
                    heading: w.states[k].yaw,
                });
            }
        }
        out[slot] = poses.into_iter().map(|p| p.expect("every node belongs to an agent")).collect();
    }
    out
}

/// Rasterizes around every agent node and stores the encoder's latents in
/// the graph.
pub fn attach_map_latents(sample: &mut Sample, ae: &MapAutoencoder, store: &ParamStore) -> Result<()> {
    let poses = node_poses(sample);
    let dim = ae.config.latent_dim();
    for (t, poses) in [AgentType::RoadBound, AgentType::NonRoadBound].into_iter().zip(poses) {
        let mut latent = Vec::with_capacity(poses.len() * dim);
        for chunk in poses.chunks(8) {
            let patches: Vec<Vec<f64>> = chunk.iter().map(|&p| rasterize(&sample.lanes, p).to_signed()).collect();
            let refs: Vec<&[f64]> = patches.iter().map(Vec::as_slice).collect();
            for z in ae.encode_patches(store, &refs)? {
                latent.extend(z);
            }
        }
        let nodes = sample.graph.agent_nodes_mut(t);
        nodes.map_latent = Some(latent);
        nodes.map_latent_dim = dim;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_scenes, template_lane_graph, GeneratorSpec, Template};

    #[test]
    fn fork_sample_is_local_and_consistent() {
        let spec = GeneratorSpec::new("y_fork", 2, 1, 1).unwrap();
        let scene = &generate_synthetic_scenes(&spec, 1).unwrap()[0];
        let lanes = template_lane_graph(Template::YFork);
        let s = build_sample(scene, &lanes, &SampleConfig::default()).unwrap();
        assert_eq!(s.graph.agents.len(), 3);
        assert_eq!(s.ssg.len(), HISTORY_STEPS);
        let mean = s
            .tracks
            .iter()
            .flat_map(|t| t.observed())
            .fold((Vec2::ZERO, 0.0), |(a, n), st| (a + st.position, n + 1.0));
        assert!((mean.0 * (1.0 / mean.1)).norm() < 1e-9);
        // road-bound agents on a fork have at least one anchor, pedestrians none
        for a in &s.graph.agents {
            match a.agent_type {
                AgentType::RoadBound => assert!(!a.anchors.is_empty()),
                AgentType::NonRoadBound => assert!(a.anchors.is_empty()),
            }
        }
        let poses = node_poses(&s);
        assert_eq!(poses[0].len(), 10);
        assert_eq!(poses[1].len(), 5);
    }

    #[test]
    fn empty_scene_rejected() {
        let scene = Scene::new("e", "straight", Vec::new()).unwrap();
        let lanes = template_lane_graph(Template::Straight);
        assert!(build_sample(&scene, &lanes, &SampleConfig::default()).is_err());
    }
}
