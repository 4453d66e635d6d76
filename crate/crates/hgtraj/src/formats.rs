//! JSON file formats for scenes, lane graphs and predictions.
//!
//! Every document rejects unknown fields. Scene files hold positions in the
//! map frame together with the local-frame origin; prediction files hold
//! points in the scene's local frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hgtraj_core::geom::Vec2;
use hgtraj_core::lane::{Lane, LaneGraph, LaneId, MapShape, RasterChannel};
use hgtraj_core::model::{AgentPrediction, Prediction};
use hgtraj_core::scene::{AgentState, AgentTrack, AgentType, Scene, FUTURE_STEPS};
use hgtraj_core::Error;

/// Tolerance when checking a file's origin against the recomputed centroid.
pub const ORIGIN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentTypeTag {
    #[serde(rename = "rb")]
    RoadBound,
    #[serde(rename = "nrb")]
    NonRoadBound,
}

impl From<AgentType> for AgentTypeTag {
    fn from(t: AgentType) -> Self {
        match t {
            AgentType::RoadBound => AgentTypeTag::RoadBound,
            AgentType::NonRoadBound => AgentTypeTag::NonRoadBound,
        }
    }
}

impl From<AgentTypeTag> for AgentType {
    fn from(t: AgentTypeTag) -> Self {
        match t {
            AgentTypeTag::RoadBound => AgentType::RoadBound,
            AgentTypeTag::NonRoadBound => AgentType::NonRoadBound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub t: i32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub agent_id: String,
    pub agent_type: AgentTypeTag,
    pub is_target: bool,
    pub states: Vec<StateFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene_id: String,
    pub lane_graph: String,
    pub origin: [f64; 2],
    pub tracks: Vec<TrackFile>,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        let o = s.origin();
        SceneFile {
            scene_id: s.scene_id.clone(),
            lane_graph: s.lane_graph_ref.clone(),
            origin: [o.x, o.y],
            tracks: s
                .tracks
                .iter()
                .map(|t| TrackFile {
                    agent_id: t.agent_id.clone(),
                    agent_type: t.agent_type.into(),
                    is_target: t.is_target,
                    states: t
                        .states
                        .iter()
                        .map(|s| StateFile {
                            t: s.t,
                            x: s.position.x,
                            y: s.position.y,
                            vx: s.velocity.x,
                            vy: s.velocity.y,
                            yaw: s.yaw,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;

    fn try_from(f: SceneFile) -> Result<Self, Error> {
        let tracks = f
            .tracks
            .into_iter()
            .map(|t| AgentTrack {
                agent_id: t.agent_id,
                agent_type: t.agent_type.into(),
                is_target: t.is_target,
                states: t
                    .states
                    .into_iter()
                    .map(|s| AgentState {
                        t: s.t,
                        position: Vec2::new(s.x, s.y),
                        velocity: Vec2::new(s.vx, s.vy),
                        yaw: s.yaw,
                    })
                    .collect(),
            })
            .collect();
        let scene = Scene::new(f.scene_id, f.lane_graph, tracks)?;
        let o = Vec2::new(f.origin[0], f.origin[1]);
        if !o.is_finite() || scene.origin().dist(o) > ORIGIN_TOL {
            return Err(Error::InvalidScene(format!(
                "origin ({}, {}) is not the centroid of the observed positions ({}, {})",
                o.x,
                o.y,
                scene.origin().x,
                scene.origin().y
            )));
        }
        Ok(scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFile {
    Polygon(Vec<[f64; 2]>),
    Polyline(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneFile {
    pub id: u32,
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    #[serde(default)]
    pub successors: Vec<u32>,
    #[serde(default)]
    pub predecessors: Vec<u32>,
    #[serde(default)]
    pub left: Option<u32>,
    #[serde(default)]
    pub right: Option<u32>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneGraphFile {
    pub lanes: Vec<LaneFile>,
    /// Channel tag to shapes.
    #[serde(default)]
    pub extras: BTreeMap<String, Vec<ShapeFile>>,
}

fn pts(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn vecs(v: &[[f64; 2]]) -> Vec<Vec2> {
    v.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

impl From<&LaneGraph> for LaneGraphFile {
    fn from(g: &LaneGraph) -> Self {
        LaneGraphFile {
            lanes: g
                .lanes()
                .map(|l| LaneFile {
                    id: l.id.0,
                    centerline: pts(&l.centerline),
                    width: l.width,
                    successors: l.successors.iter().map(|i| i.0).collect(),
                    predecessors: l.predecessors.iter().map(|i| i.0).collect(),
                    left: l.left.map(|i| i.0),
                    right: l.right.map(|i| i.0),
                    tags: l.tags.iter().map(|t| t.tag().to_string()).collect(),
                })
                .collect(),
            extras: g
                .extras
                .iter()
                .map(|(c, shapes)| {
                    let shapes = shapes
                        .iter()
                        .map(|s| match s {
                            MapShape::Polygon(p) => ShapeFile::Polygon(pts(p)),
                            MapShape::Polyline(p) => ShapeFile::Polyline(pts(p)),
                        })
                        .collect();
                    (c.tag().to_string(), shapes)
                })
                .collect(),
        }
    }
}

impl TryFrom<LaneGraphFile> for LaneGraph {
    type Error = Error;

    fn try_from(f: LaneGraphFile) -> Result<Self, Error> {
        let mut lanes = Vec::with_capacity(f.lanes.len());
        for l in f.lanes {
            let mut lane = Lane::new(LaneId(l.id), vecs(&l.centerline), l.width)?;
            lane.successors = l.successors.into_iter().map(LaneId).collect();
            lane.predecessors = l.predecessors.into_iter().map(LaneId).collect();
            lane.left = l.left.map(LaneId);
            lane.right = l.right.map(LaneId);
            lane.tags = l.tags.iter().map(|t| t.parse()).collect::<Result<_, _>>()?;
            lanes.push(lane);
        }
        let mut extras: BTreeMap<RasterChannel, Vec<MapShape>> = BTreeMap::new();
        for (tag, shapes) in f.extras {
            let channel: RasterChannel = tag.parse()?;
            extras.entry(channel).or_default().extend(shapes.into_iter().map(|s| match s {
                ShapeFile::Polygon(p) => MapShape::Polygon(vecs(&p)),
                ShapeFile::Polyline(p) => MapShape::Polyline(vecs(&p)),
            }));
        }
        LaneGraph::new(lanes, extras)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<usize>,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPredictionFile {
    pub agent_id: String,
    pub agent_type: AgentTypeTag,
    pub modes: Vec<ModeFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub scene_id: String,
    pub agents: Vec<AgentPredictionFile>,
}

impl PredictionFile {
    pub fn new(scene_id: &str, p: &Prediction) -> Self {
        PredictionFile {
            scene_id: scene_id.to_string(),
            agents: p
                .agents
                .iter()
                .map(|a| AgentPredictionFile {
                    agent_id: a.agent_id.clone(),
                    agent_type: a.agent_type.into(),
                    modes: a
                        .trajectories
                        .iter()
                        .zip(&a.scores)
                        .zip(&a.anchor_ids)
                        .map(|((t, &score), &anchor_id)| ModeFile {
                            score,
                            anchor_id,
                            points: pts(t),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// The in-memory prediction; `agent` indices follow file order.
    pub fn to_prediction(&self) -> Result<Prediction, Error> {
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, a) in self.agents.iter().enumerate() {
            if a.modes.is_empty() {
                return Err(Error::InvalidArgument(format!("agent {} has no modes", a.agent_id)));
            }
            let mut trajectories = Vec::with_capacity(a.modes.len());
            for m in &a.modes {
                if m.points.len() != FUTURE_STEPS {
                    return Err(Error::InvalidArgument(format!(
                        "agent {}: {} points per mode, expected {FUTURE_STEPS}",
                        a.agent_id,
                        m.points.len()
                    )));
                }
                if !m.score.is_finite() || m.points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("prediction for agent {}", a.agent_id)));
                }
                let mut t = [Vec2::ZERO; FUTURE_STEPS];
                for (d, p) in t.iter_mut().zip(&m.points) {
                    *d = Vec2::new(p[0], p[1]);
                }
                trajectories.push(t);
            }
            agents.push(AgentPrediction {
                agent: i,
                agent_id: a.agent_id.clone(),
                agent_type: a.agent_type.into(),
                scores: a.modes.iter().map(|m| m.score).collect(),
                anchor_ids: a.modes.iter().map(|m| m.anchor_id).collect(),
                trajectories,
            });
        }
        Ok(Prediction { agents })
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let f: SceneFile = read_json(path)?;
    Scene::try_from(f).with_context(|| format!("validating {}", path.display()))
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    write_json(path, &SceneFile::from(scene))
}

pub fn load_lane_graph(path: &Path) -> Result<LaneGraph> {
    let f: LaneGraphFile = read_json(path)?;
    LaneGraph::try_from(f).with_context(|| format!("validating {}", path.display()))
}

pub fn save_lane_graph(g: &LaneGraph, path: &Path) -> Result<()> {
    write_json(path, &LaneGraphFile::from(g))
}

pub fn load_prediction(path: &Path) -> Result<(String, Prediction)> {
    let f: PredictionFile = read_json(path)?;
    let p = f.to_prediction().with_context(|| format!("validating {}", path.display()))?;
    Ok((f.scene_id, p))
}

pub fn save_prediction(scene_id: &str, p: &Prediction, path: &Path) -> Result<()> {
    write_json(path, &PredictionFile::new(scene_id, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgtraj_core::synth::{generate_synthetic_scenes, template_lane_graph, GeneratorSpec, Template};

    #[test]
    fn scene_round_trip() {
        let spec = GeneratorSpec::new("cross_intersection", 2, 1, 1).unwrap();
        let scene = generate_synthetic_scenes(&spec, 3).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        save_scene(&scene, &p).unwrap();
        assert_eq!(load_scene(&p).unwrap(), scene);
    }

    #[test]
    fn lane_graph_round_trip() {
        for t in Template::ALL {
            let g = template_lane_graph(t);
            let back = LaneGraph::try_from(LaneGraphFile::from(&g)).unwrap();
            assert_eq!(back, g, "{t}");
        }
    }

    #[test]
    fn yaw_out_of_range_is_rejected() {
        let text = r#"{"scene_id":"s","lane_graph":"g","origin":[1,2],
            "tracks":[{"agent_id":"a","agent_type":"rb","is_target":true,
            "states":[{"t":0,"x":1,"y":2,"vx":0,"vy":0,"yaw":4.0}]}]}"#;
        let f: SceneFile = serde_json::from_str(text).unwrap();
        assert!(matches!(Scene::try_from(f), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"scene_id":"s","lane_graph":"g","origin":[0,0],"tracks":[],"extra":1}"#;
        assert!(serde_json::from_str::<SceneFile>(text).is_err());
        let text = r#"{"lanes":[{"id":1,"centerline":[[0,0],[1,0]],"width":3,"colour":"red"}]}"#;
        assert!(serde_json::from_str::<LaneGraphFile>(text).is_err());
    }

    #[test]
    fn wrong_origin_is_rejected() {
        let text = r#"{"scene_id":"s","lane_graph":"g","origin":[5,5],
            "tracks":[{"agent_id":"a","agent_type":"nrb","is_target":false,
            "states":[{"t":0,"x":1,"y":2,"vx":0,"vy":0,"yaw":0}]}]}"#;
        let f: SceneFile = serde_json::from_str(text).unwrap();
        assert!(Scene::try_from(f).is_err());
    }

    #[test]
    fn prediction_needs_twelve_points() {
        let f = PredictionFile {
            scene_id: "s".into(),
            agents: vec![AgentPredictionFile {
                agent_id: "a".into(),
                agent_type: AgentTypeTag::RoadBound,
                modes: vec![ModeFile {
                    score: 0.0,
                    anchor_id: None,
                    points: vec![[0.0, 0.0]; 11],
                }],
            }],
        };
        assert!(f.to_prediction().is_err());
    }
}
