//! Agents, tracks and scenes.
//!
//! Scenes are sampled on a fixed 2 Hz grid. Timestep `0` is the current
//! observation; `-4..=0` is the history window and `1..=12` the prediction
//! horizon. Positions are kept in the map frame; [`Scene::origin`] is the
//! centroid of all observed positions and defines the local frame used by the
//! model.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Number of history states including the current one.
pub const HISTORY_STEPS: usize = 5;
/// Number of predicted future states.
pub const FUTURE_STEPS: usize = 12;
/// Sampling period in seconds.
pub const DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentType {
    RoadBound,
    NonRoadBound,
}

impl AgentType {
    pub fn short_name(self) -> &'static str {
        match self {
            AgentType::RoadBound => "rb",
            AgentType::NonRoadBound => "nrb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub t: i32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub states: Vec<AgentState>,
    pub is_target: bool,
}

/// Fixed-length history with per-step validity. Missing steps repeat the
/// nearest older state, or the oldest available one at the front.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub states: [AgentState; HISTORY_STEPS],
    pub valid: [bool; HISTORY_STEPS],
}

impl AgentTrack {
    pub fn state_at(&self, t: i32) -> Option<&AgentState> {
        self.states
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|i| &self.states[i])
    }

    pub fn current(&self) -> &AgentState {
        self.state_at(0).expect("validated track has a state at t=0")
    }

    pub fn observed(&self) -> impl Iterator<Item = &AgentState> {
        self.states.iter().filter(|s| s.t <= 0)
    }

    pub fn history_window(&self) -> HistoryWindow {
        let first = self.observed().next().copied().unwrap_or(*self.current());
        let mut states = [first; HISTORY_STEPS];
        let mut valid = [false; HISTORY_STEPS];
        let mut last = first;
        for (slot, t) in (-(HISTORY_STEPS as i32 - 1)..=0).enumerate() {
            if let Some(s) = self.state_at(t) {
                last = *s;
                valid[slot] = true;
            }
            states[slot] = AgentState { t, ..last };
        }
        HistoryWindow { states, valid }
    }

    /// Future positions for t = 1..=12, if all are present.
    pub fn future(&self) -> Option<[Vec2; FUTURE_STEPS]> {
        let mut out = [Vec2::ZERO; FUTURE_STEPS];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.state_at(i as i32 + 1)?.position;
        }
        Some(out)
    }

    pub fn future_states(&self) -> impl Iterator<Item = &AgentState> {
        self.states.iter().filter(|s| s.t > 0)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScene(alloc::format!("agent {}: {msg}", self.agent_id)));
        if self.states.is_empty() {
            return bad("no states");
        }
        for w in self.states.windows(2) {
            if w[1].t <= w[0].t {
                return bad("timesteps are not strictly increasing");
            }
        }
        for s in &self.states {
            if !(s.position.is_finite() && s.velocity.is_finite() && s.yaw.is_finite()) {
                return bad("non-finite state");
            }
            if !(s.yaw > -PI && s.yaw <= PI) {
                return bad("yaw outside (-pi, pi]");
            }
            if s.t < -(HISTORY_STEPS as i32 - 1) || s.t > FUTURE_STEPS as i32 {
                return bad("timestep outside [-4, 12]");
            }
        }
        if self.state_at(0).is_none() {
            return bad("no state at t=0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub lane_graph_ref: String,
    pub tracks: Vec<AgentTrack>,
    origin: Vec2,
}

impl Scene {
    /// Validates the tracks and derives the local-frame origin.
    pub fn new(scene_id: impl Into<String>, lane_graph_ref: impl Into<String>, tracks: Vec<AgentTrack>) -> Result<Self> {
        for tr in &tracks {
            tr.validate()?;
        }
        let mut ids: Vec<&str> = tracks.iter().map(|t| t.agent_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidScene("duplicate agent id".into()));
        }
        let origin = observed_centroid(&tracks);
        Ok(Self {
            scene_id: scene_id.into(),
            lane_graph_ref: lane_graph_ref.into(),
            tracks,
            origin,
        })
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    /// Tracks re-expressed in the local frame (origin subtracted).
    pub fn local_tracks(&self) -> Vec<AgentTrack> {
        self.tracks
            .iter()
            .map(|tr| AgentTrack {
                states: tr
                    .states
                    .iter()
                    .map(|s| AgentState {
                        position: s.position - self.origin,
                        ..*s
                    })
                    .collect(),
                ..tr.clone()
            })
            .collect()
    }

    pub fn count(&self, ty: AgentType) -> usize {
        self.tracks.iter().filter(|t| t.agent_type == ty).count()
    }
}

fn observed_centroid(tracks: &[AgentTrack]) -> Vec2 {
    let mut sum = Vec2::ZERO;
    let mut n = 0usize;
    for s in tracks.iter().flat_map(|t| t.observed()) {
        sum += s.position;
        n += 1;
    }
    if n == 0 {
        Vec2::ZERO
    } else {
        sum * (1.0 / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn st(t: i32, x: f64, y: f64) -> AgentState {
        AgentState {
            t,
            position: Vec2::new(x, y),
            velocity: Vec2::new(1.0, 0.0),
            yaw: 0.0,
        }
    }

    fn track(id: &str, states: Vec<AgentState>) -> AgentTrack {
        AgentTrack {
            agent_id: id.into(),
            agent_type: AgentType::RoadBound,
            states,
            is_target: false,
        }
    }

    #[test]
    fn single_agent_origin_is_centroid() {
        let tr = track("a", (-4..=0).map(|t| st(t, 10.0 + t as f64, 2.0 * t as f64)).collect());
        let sc = Scene::new("s", "m", vec![tr]).unwrap();
        assert!((sc.origin().x - 8.0).abs() < 1e-12);
        assert!((sc.origin().y + 4.0).abs() < 1e-12);
        let local = sc.local_tracks();
        let mean = local[0].observed().fold(Vec2::ZERO, |a, s| a + s.position) * 0.2;
        assert!(mean.norm() < 1e-9);
    }

    #[test]
    fn yaw_out_of_range_is_rejected() {
        let mut s = st(0, 0.0, 0.0);
        s.yaw = 4.0;
        assert!(matches!(Scene::new("s", "m", vec![track("a", vec![s])]), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn non_monotone_timesteps_are_rejected() {
        let tr = track("a", vec![st(0, 0.0, 0.0), st(-1, 0.0, 0.0)]);
        assert!(Scene::new("s", "m", vec![tr]).is_err());
    }

    #[test]
    fn short_history_is_left_padded() {
        let tr = track("a", vec![st(-1, 1.0, 0.0), st(0, 2.0, 0.0)]);
        let w = tr.history_window();
        assert_eq!(w.valid, [false, false, false, true, true]);
        assert_eq!(w.states[0].position, Vec2::new(1.0, 0.0));
        assert_eq!(w.states[0].t, -4);
        assert_eq!(w.states[4].position, Vec2::new(2.0, 0.0));
    }
}
