//! Heterogeneous spatio-temporal scene graph.
//!
//! Node kinds: road-bound agent states, non-road-bound agent states (one node
//! per history step, padded steps included and flagged invalid) and map
//! nodes. Edge kinds and their endpoints:
//!
//! | kind                  | src → dst     | features                    |
//! |-----------------------|---------------|-----------------------------|
//! | `TemporalSuc(a)`      | a(t) → a(t+1) | dist, dx, dy                |
//! | `TemporalPre(a)`      | a(t+1) → a(t) | dist, dx, dy                |
//! | `Ssg(a, b)`           | a → b         | relation one-hot, along dist|
//! | `MapSuc(i)`/`MapPre(i)` | m → m       | dist, dx, dy                |
//! | `MapLeft`/`MapRight`  | m → m         | dist, dx, dy                |
//! | `DrivesOn(a)`         | a → m         | dist, dx, dy                |
//! | `GivesTrafficInfo(a)` | m → a         | dist, dx, dy                |
//! | `Merge(a)`            | a(t) → a(0)   | dist, dx, dy                |
//! | `Anchor(k)`           | m → rb(0)     | dist, dx, dy                |
//!
//! `dx, dy` are destination minus source position. Merge edges include the
//! self edge of the latest node. Map `i`-hop links are walks of exactly `i`
//! steps in the 1-hop successor graph, which crosses lane boundaries through
//! successor links.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::error::{Error, Result};
use crate::geom::{distance_to_polyline, Vec2};
use crate::lane::{AnchorPath, LaneGraph, LaneId, MapNode};
use crate::scene::{AgentTrack, AgentType, FUTURE_STEPS, HISTORY_STEPS};
use crate::ssg::SsgEdge;

pub const GENERIC_EDGE_DIM: usize = 3;
pub const SSG_EDGE_DIM: usize = 4;
pub const MAX_MAP_HOPS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    RbAgent,
    NrbAgent,
    Map,
}

impl NodeKind {
    pub fn of_agent(t: AgentType) -> Self {
        match t {
            AgentType::RoadBound => NodeKind::RbAgent,
            AgentType::NonRoadBound => NodeKind::NrbAgent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    TemporalSuc(AgentType),
    TemporalPre(AgentType),
    Ssg(AgentType, AgentType),
    MapSuc(u8),
    MapPre(u8),
    MapLeft,
    MapRight,
    DrivesOn(AgentType),
    GivesTrafficInfo(AgentType),
    Merge(AgentType),
    Anchor(u8),
}

impl EdgeKind {
    pub fn src_kind(self) -> NodeKind {
        match self {
            EdgeKind::TemporalSuc(a) | EdgeKind::TemporalPre(a) | EdgeKind::Merge(a) | EdgeKind::DrivesOn(a) => NodeKind::of_agent(a),
            EdgeKind::Ssg(a, _) => NodeKind::of_agent(a),
            EdgeKind::MapSuc(_)
            | EdgeKind::MapPre(_)
            | EdgeKind::MapLeft
            | EdgeKind::MapRight
            | EdgeKind::GivesTrafficInfo(_)
            | EdgeKind::Anchor(_) => NodeKind::Map,
        }
    }

    pub fn dst_kind(self) -> NodeKind {
        match self {
            EdgeKind::TemporalSuc(a) | EdgeKind::TemporalPre(a) | EdgeKind::Merge(a) | EdgeKind::GivesTrafficInfo(a) => NodeKind::of_agent(a),
            EdgeKind::Ssg(_, b) => NodeKind::of_agent(b),
            EdgeKind::MapSuc(_) | EdgeKind::MapPre(_) | EdgeKind::MapLeft | EdgeKind::MapRight | EdgeKind::DrivesOn(_) => NodeKind::Map,
            EdgeKind::Anchor(_) => NodeKind::RbAgent,
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            EdgeKind::Ssg(..) => SSG_EDGE_DIM,
            _ => GENERIC_EDGE_DIM,
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = |t: &AgentType| t.short_name();
        match self {
            EdgeKind::TemporalSuc(t) => write!(f, "{}-suc-{}", a(t), a(t)),
            EdgeKind::TemporalPre(t) => write!(f, "{}-pre-{}", a(t), a(t)),
            EdgeKind::Ssg(s, d) => write!(f, "{}-ssg-{}", a(s), a(d)),
            EdgeKind::MapSuc(i) => write!(f, "m-suc{i}-m"),
            EdgeKind::MapPre(i) => write!(f, "m-pre{i}-m"),
            EdgeKind::MapLeft => write!(f, "m-left-m"),
            EdgeKind::MapRight => write!(f, "m-right-m"),
            EdgeKind::DrivesOn(t) => write!(f, "{}-drives_on-m", a(t)),
            EdgeKind::GivesTrafficInfo(t) => write!(f, "m-gives_traffic_info-{}", a(t)),
            EdgeKind::Merge(t) => write!(f, "{}-merge-{}", a(t), a(t)),
            EdgeKind::Anchor(k) => write!(f, "m-anchor{k}-rb"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Row-major `len × feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl EdgeList {
    fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn push(&mut self, src: usize, dst: usize, feats: &[f64]) {
        debug_assert_eq!(feats.len(), self.feature_dim);
        self.src.push(src);
        self.dst.push(dst);
        self.features.extend_from_slice(feats);
    }

    pub fn feature(&self, e: usize) -> &[f64] {
        &self.features[e * self.feature_dim..(e + 1) * self.feature_dim]
    }
}

/// `[euclidean distance, dx, dy]` with `(dx, dy) = dst - src`.
pub fn edge_feature(src: Vec2, dst: Vec2) -> [f64; 3] {
    let d = dst - src;
    [d.norm(), d.x, d.y]
}

/// Agent-state nodes of one agent type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentNodes {
    /// `[x, y, vx, vy]` per node, local frame.
    pub features: Vec<[f64; 4]>,
    pub timestep: Vec<i32>,
    pub valid: Vec<bool>,
    /// Index into [`HeteroGraph::agents`].
    pub agent: Vec<usize>,
    /// Optional map latent per node (row-major, `len × map_latent_dim`).
    pub map_latent: Option<Vec<f64>>,
    pub map_latent_dim: usize,
}

impl AgentNodes {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn position(&self, i: usize) -> Vec2 {
        Vec2::new(self.features[i][0], self.features[i][1])
    }
}

/// Per-agent bookkeeping carried alongside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInfo {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub is_target: bool,
    /// Node indices (in the table of this agent's type) for t = -4..=0.
    pub nodes: [usize; HISTORY_STEPS],
    /// Local-frame current state.
    pub position: Vec2,
    pub velocity: Vec2,
    pub yaw: f64,
    /// Anchor paths (local frame); empty for non-road-bound agents.
    pub anchors: Vec<AnchorPath>,
    /// Local-frame ground truth, when known.
    pub future: Option<[Vec2; FUTURE_STEPS]>,
}

impl AgentInfo {
    pub fn latest_node(&self) -> usize {
        self.nodes[HISTORY_STEPS - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeteroGraph {
    pub rb: AgentNodes,
    pub nrb: AgentNodes,
    pub map: Vec<MapNode>,
    pub edges: BTreeMap<EdgeKind, EdgeList>,
    pub agents: Vec<AgentInfo>,
}

impl HeteroGraph {
    pub fn agent_nodes(&self, t: AgentType) -> &AgentNodes {
        match t {
            AgentType::RoadBound => &self.rb,
            AgentType::NonRoadBound => &self.nrb,
        }
    }

    pub fn agent_nodes_mut(&mut self, t: AgentType) -> &mut AgentNodes {
        match t {
            AgentType::RoadBound => &mut self.rb,
            AgentType::NonRoadBound => &mut self.nrb,
        }
    }

    pub fn node_count(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::RbAgent => self.rb.len(),
            NodeKind::NrbAgent => self.nrb.len(),
            NodeKind::Map => self.map.len(),
        }
    }

    pub fn node_position(&self, r: NodeRef) -> Vec2 {
        match r.kind {
            NodeKind::RbAgent => self.rb.position(r.index),
            NodeKind::NrbAgent => self.nrb.position(r.index),
            NodeKind::Map => self.map[r.index].position,
        }
    }

    pub fn edges_of(&self, kind: EdgeKind) -> Option<&EdgeList> {
        self.edges.get(&kind).filter(|e| !e.is_empty())
    }

    /// Agents of one type in table order (`agents` index, info).
    pub fn agents_of(&self, t: AgentType) -> impl Iterator<Item = (usize, &AgentInfo)> {
        self.agents.iter().enumerate().filter(move |(_, a)| a.agent_type == t)
    }

    fn edge_list(&mut self, kind: EdgeKind) -> &mut EdgeList {
        self.edges.entry(kind).or_insert_with(|| EdgeList::new(kind.feature_dim()))
    }

    fn push_generic(&mut self, kind: EdgeKind, src: usize, dst: usize) {
        let sp = self.node_position(NodeRef { kind: kind.src_kind(), index: src });
        let dp = self.node_position(NodeRef { kind: kind.dst_kind(), index: dst });
        self.edge_list(kind).push(src, dst, &edge_feature(sp, dp));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Agent-to-map connection radius (m).
    pub drives_on_radius: f64,
    /// Distance (m) from an anchor polyline within which map nodes feed it.
    pub anchor_radius: f64,
    /// Number of anchor slots K.
    pub max_anchors: usize,
    /// Map node spacing used to match lateral neighbors.
    pub map_step: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            drives_on_radius: 20.0,
            anchor_radius: 2.0,
            max_anchors: 10,
            map_step: 5.0,
        }
    }
}

/// Everything `build_graph` consumes, all in the same (local) frame.
pub struct GraphInputs<'a> {
    pub tracks: &'a [AgentTrack],
    pub lane_graph: &'a LaneGraph,
    pub map_nodes: &'a [MapNode],
    /// SSG edges per history slot (t = -4..=0), agent indices = track indices.
    pub ssg: &'a [Vec<SsgEdge>],
    /// Anchor paths per track (empty for non-road-bound agents).
    pub anchors: &'a [Vec<AnchorPath>],
}

pub fn build_graph(inp: &GraphInputs<'_>, cfg: &GraphConfig) -> Result<HeteroGraph> {
    let n_agents = inp.tracks.len();
    if n_agents == 0 {
        return Err(Error::Graph("scene has no agents".into()));
    }
    if inp.anchors.len() != n_agents {
        return Err(Error::Graph(format!("{} anchor lists for {n_agents} agents", inp.anchors.len())));
    }
    if inp.ssg.len() != HISTORY_STEPS {
        return Err(Error::Graph(format!("expected {HISTORY_STEPS} ssg timesteps, got {}", inp.ssg.len())));
    }
    if cfg.max_anchors > usize::from(u8::MAX) {
        return Err(Error::Graph("too many anchor slots".into()));
    }
    for (i, (tr, a)) in inp.tracks.iter().zip(inp.anchors).enumerate() {
        if a.len() > cfg.max_anchors {
            return Err(Error::Graph(format!("agent {i} has {} anchors, K = {}", a.len(), cfg.max_anchors)));
        }
        if tr.agent_type == AgentType::NonRoadBound && !a.is_empty() {
            return Err(Error::Graph(format!("non-road-bound agent {i} has anchors")));
        }
    }
    for n in inp.map_nodes {
        if !inp.lane_graph.contains(n.lane_id) {
            return Err(Error::Graph(format!("map node {} references unknown lane {}", n.node_id, n.lane_id)));
        }
    }

    let mut g = HeteroGraph {
        map: inp.map_nodes.to_vec(),
        ..Default::default()
    };

    // agent nodes
    for (ai, tr) in inp.tracks.iter().enumerate() {
        let w = tr.history_window();
        let table = g.agent_nodes_mut(tr.agent_type);
        let mut nodes = [0usize; HISTORY_STEPS];
        for (slot, (s, &valid)) in w.states.iter().zip(&w.valid).enumerate() {
            nodes[slot] = table.len();
            table.features.push([s.position.x, s.position.y, s.velocity.x, s.velocity.y]);
            table.timestep.push(s.t);
            table.valid.push(valid);
            table.agent.push(ai);
        }
        let cur = tr.current();
        g.agents.push(AgentInfo {
            agent_id: tr.agent_id.clone(),
            agent_type: tr.agent_type,
            is_target: tr.is_target,
            nodes,
            position: cur.position,
            velocity: cur.velocity,
            yaw: cur.yaw,
            anchors: inp.anchors[ai].clone(),
            future: tr.future(),
        });
    }

    // temporal and merge edges
    for ai in 0..n_agents {
        let info = g.agents[ai].clone();
        let t = info.agent_type;
        for w in info.nodes.windows(2) {
            g.push_generic(EdgeKind::TemporalSuc(t), w[0], w[1]);
        }
        for w in info.nodes.windows(2) {
            g.push_generic(EdgeKind::TemporalPre(t), w[1], w[0]);
        }
        for &n in &info.nodes {
            g.push_generic(EdgeKind::Merge(t), n, info.latest_node());
        }
    }

    // social edges per timestep
    for (slot, edges) in inp.ssg.iter().enumerate() {
        for e in edges {
            if e.src >= n_agents || e.dst >= n_agents || e.src == e.dst {
                return Err(Error::Graph(format!("ssg edge {} -> {} is dangling", e.src, e.dst)));
            }
            let (a, b) = (&g.agents[e.src], &g.agents[e.dst]);
            let (sn, dn) = (a.nodes[slot], b.nodes[slot]);
            let (st, dt) = (a.agent_type, b.agent_type);
            if !(g.agent_nodes(st).valid[sn] && g.agent_nodes(dt).valid[dn]) {
                continue;
            }
            let mut f = [0.0; SSG_EDGE_DIM];
            f[e.relation.index()] = 1.0;
            f[3] = e.along_dist;
            g.edge_list(EdgeKind::Ssg(st, dt)).push(sn, dn, &f);
        }
    }

    build_map_edges(&mut g, inp.lane_graph, cfg);

    // agent <-> map
    for t in [AgentType::RoadBound, AgentType::NonRoadBound] {
        let r2 = cfg.drives_on_radius * cfg.drives_on_radius;
        let n = g.agent_nodes(t).len();
        for an in 0..n {
            if !g.agent_nodes(t).valid[an] {
                continue;
            }
            let p = g.agent_nodes(t).position(an);
            let near: Vec<usize> = (0..g.map.len()).filter(|&m| (g.map[m].position - p).norm_sq() <= r2).collect();
            for &m in &near {
                g.push_generic(EdgeKind::DrivesOn(t), an, m);
            }
            for &m in &near {
                g.push_generic(EdgeKind::GivesTrafficInfo(t), m, an);
            }
        }
    }

    // anchors
    for ai in 0..n_agents {
        let latest = g.agents[ai].latest_node();
        let anchors = g.agents[ai].anchors.clone();
        for (k, a) in anchors.iter().enumerate() {
            for m in 0..g.map.len() {
                if distance_to_polyline(&a.polyline, g.map[m].position) <= cfg.anchor_radius {
                    g.push_generic(EdgeKind::Anchor(k as u8), m, latest);
                }
            }
        }
    }
    Ok(g)
}

fn build_map_edges(g: &mut HeteroGraph, lanes: &LaneGraph, cfg: &GraphConfig) {
    let mut by_lane: BTreeMap<LaneId, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.map.iter().enumerate() {
        by_lane.entry(n.lane_id).or_default().push(i);
    }
    for nodes in by_lane.values_mut() {
        nodes.sort_by(|&a, &b| g.map[a].arc_pos.total_cmp(&g.map[b].arc_pos));
    }

    // 1-hop successor adjacency
    let mut next: Vec<Vec<usize>> = vec![Vec::new(); g.map.len()];
    for (lane_id, nodes) in &by_lane {
        for w in nodes.windows(2) {
            next[w[0]].push(w[1]);
        }
        let lane = lanes.lane(*lane_id).expect("validated");
        let last = *nodes.last().expect("non-empty");
        if (g.map[last].arc_pos - lane.length()).abs() > 1e-9 {
            continue;
        }
        for succ in &lane.successors {
            if let Some(first) = by_lane.get(succ).and_then(|v| v.first()) {
                if g.map[*first].arc_pos.abs() <= 1e-9 {
                    next[last].push(*first);
                }
            }
        }
    }

    // exactly-i-hop walks
    let mut frontier: Vec<BTreeSet<usize>> = (0..g.map.len()).map(|i| BTreeSet::from([i])).collect();
    for hop in 1..=MAX_MAP_HOPS {
        frontier = frontier
            .iter()
            .map(|set| set.iter().flat_map(|&n| next[n].iter().copied()).collect())
            .collect();
        for (src, dsts) in frontier.iter().enumerate() {
            for &dst in dsts {
                g.push_generic(EdgeKind::MapSuc(hop), src, dst);
            }
        }
        let mut pre: Vec<(usize, usize)> = frontier
            .iter()
            .enumerate()
            .flat_map(|(src, dsts)| dsts.iter().map(move |&dst| (dst, src)))
            .collect();
        pre.sort_unstable();
        for (src, dst) in pre {
            g.push_generic(EdgeKind::MapPre(hop), src, dst);
        }
    }

    // lateral neighbors at matched arc positions
    for (lane_id, nodes) in &by_lane {
        let lane = lanes.lane(*lane_id).expect("validated");
        for (kind, nb) in [(EdgeKind::MapLeft, lane.left), (EdgeKind::MapRight, lane.right)] {
            let Some(nb) = nb else { continue };
            let (Some(nb_nodes), Ok(nb_lane)) = (by_lane.get(&nb), lanes.lane(nb)) else {
                continue;
            };
            for &n in nodes {
                let Some(foot) = crate::geom::project_on_polyline(&nb_lane.centerline, g.map[n].position) else {
                    continue;
                };
                let best = nb_nodes
                    .iter()
                    .copied()
                    .min_by(|&a, &b| (g.map[a].arc_pos - foot.arc).abs().total_cmp(&(g.map[b].arc_pos - foot.arc).abs()));
                if let Some(m) = best {
                    if (g.map[m].arc_pos - foot.arc).abs() <= 0.5 * cfg.map_step + 1e-9 {
                        g.push_generic(kind, n, m);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphStats {
    pub nodes: BTreeMap<NodeKind, usize>,
    pub edges: BTreeMap<EdgeKind, usize>,
}

impl GraphStats {
    pub fn total_edges(&self) -> usize {
        self.edges.values().sum()
    }

    pub fn ssg_edges(&self) -> usize {
        self.edges
            .iter()
            .filter(|(k, _)| matches!(k, EdgeKind::Ssg(..)))
            .map(|(_, v)| v)
            .sum()
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.nodes {
            writeln!(f, "nodes {k:?} {v}")?;
        }
        for (k, v) in &self.edges {
            writeln!(f, "edges {k} {v}")?;
        }
        Ok(())
    }
}

pub fn graph_stats(g: &HeteroGraph) -> GraphStats {
    let mut s = GraphStats::default();
    for k in [NodeKind::RbAgent, NodeKind::NrbAgent, NodeKind::Map] {
        s.nodes.insert(k, g.node_count(k));
    }
    for (k, e) in &g.edges {
        s.edges.insert(*k, e.len());
    }
    s
}

/// One line per edge: `kind src dst features...`.
pub fn dump_edges(g: &HeteroGraph) -> String {
    let mut out = String::new();
    for (k, list) in &g.edges {
        for e in 0..list.len() {
            let _ = write!(out, "{k} {} {}", list.src[e], list.dst[e]);
            for v in list.feature(e) {
                let _ = write!(out, " {v:.6}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane::{discretize_map, fixtures};
    use crate::scene::AgentState;

    fn track(id: &str, ty: AgentType, xs: &[(i32, f64)]) -> AgentTrack {
        AgentTrack {
            agent_id: id.into(),
            agent_type: ty,
            states: xs
                .iter()
                .map(|&(t, x)| AgentState {
                    t,
                    position: Vec2::new(x, 0.0),
                    velocity: Vec2::new(2.0, 0.0),
                    yaw: 0.0,
                })
                .collect(),
            is_target: true,
        }
    }

    fn build(tracks: &[AgentTrack], lanes: &LaneGraph, anchors: &[Vec<AnchorPath>]) -> HeteroGraph {
        let nodes = discretize_map(lanes, Vec2::ZERO, 5.0).unwrap();
        let ssg = vec![Vec::new(); HISTORY_STEPS];
        build_graph(
            &GraphInputs {
                tracks,
                lane_graph: lanes,
                map_nodes: &nodes,
                ssg: &ssg,
                anchors,
            },
            &GraphConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn edge_feature_examples() {
        assert_eq!(edge_feature(Vec2::ZERO, Vec2::new(3.0, 4.0)), [5.0, 3.0, 4.0]);
        assert_eq!(edge_feature(Vec2::new(2.0, 2.0), Vec2::new(2.0, 2.0)), [0.0, 0.0, 0.0]);
        assert_eq!(edge_feature(Vec2::new(1.0, 1.0), Vec2::new(-2.0, 5.0)), [5.0, -3.0, 4.0]);
    }

    #[test]
    fn single_agent_temporal_counts() {
        let lanes = fixtures::straight(35.0);
        let tr = track("a", AgentType::RoadBound, &[(-4, 0.0), (-3, 1.0), (-2, 2.0), (-1, 3.0), (0, 4.0)]);
        let g = build(&[tr], &lanes, &[Vec::new()]);
        let s = graph_stats(&g);
        assert_eq!(s.edges[&EdgeKind::TemporalSuc(AgentType::RoadBound)], 4);
        assert_eq!(s.edges[&EdgeKind::TemporalPre(AgentType::RoadBound)], 4);
        assert_eq!(s.edges[&EdgeKind::Merge(AgentType::RoadBound)], 5);
        assert!(!s.edges.keys().any(|k| matches!(k, EdgeKind::Anchor(_))));
    }

    #[test]
    fn map_hop_chain_counts() {
        // 35 m lane at 5 m spacing: 8 nodes
        let lanes = fixtures::straight(35.0);
        let tr = track("a", AgentType::RoadBound, &[(0, 0.0)]);
        let g = build(&[tr], &lanes, &[Vec::new()]);
        assert_eq!(g.map.len(), 8);
        let s = graph_stats(&g);
        for i in 1..=6u8 {
            assert_eq!(s.edges[&EdgeKind::MapSuc(i)], 8 - usize::from(i));
            assert_eq!(s.edges[&EdgeKind::MapPre(i)], 8 - usize::from(i));
        }
    }

    #[test]
    fn endpoints_type_check() {
        let lanes = fixtures::parallel(60.0);
        let tracks = [
            track("a", AgentType::RoadBound, &[(-1, 0.0), (0, 1.0)]),
            track("p", AgentType::NonRoadBound, &[(0, 3.0)]),
        ];
        let g = build(&tracks, &lanes, &[Vec::new(), Vec::new()]);
        for (k, list) in &g.edges {
            for e in 0..list.len() {
                assert!(list.src[e] < g.node_count(k.src_kind()), "{k}");
                assert!(list.dst[e] < g.node_count(k.dst_kind()), "{k}");
                let f = list.feature(e);
                assert!((f[0] - f[1].hypot(f[2])).abs() < 1e-9);
            }
            let mut pairs: Vec<(usize, usize)> = list.src.iter().copied().zip(list.dst.iter().copied()).collect();
            pairs.sort_unstable();
            pairs.dedup();
            assert_eq!(pairs.len(), list.len(), "duplicate in {k}");
        }
        assert!(g.edges_of(EdgeKind::MapLeft).is_some());
        assert!(g.edges_of(EdgeKind::MapRight).is_some());
        // padded nodes do not connect to the map
        let padded: Vec<usize> = (0..g.rb.len()).filter(|&i| !g.rb.valid[i]).collect();
        let d = &g.edges[&EdgeKind::DrivesOn(AgentType::RoadBound)];
        assert!(d.src.iter().all(|s| !padded.contains(s)));
    }

    #[test]
    fn anchor_count_over_k_is_rejected() {
        let lanes = fixtures::straight(35.0);
        let nodes = discretize_map(&lanes, Vec2::ZERO, 5.0).unwrap();
        let tr = [track("a", AgentType::RoadBound, &[(0, 0.0)])];
        let a = AnchorPath {
            anchor_id: 0,
            lane_ids: vec![LaneId(1)],
            polyline: vec![Vec2::ZERO, Vec2::new(1.0, 0.0)],
            headings: vec![0.0, 0.0],
        };
        let ssg = vec![Vec::new(); HISTORY_STEPS];
        let cfg = GraphConfig { max_anchors: 1, ..Default::default() };
        let r = build_graph(
            &GraphInputs {
                tracks: &tr,
                lane_graph: &lanes,
                map_nodes: &nodes,
                ssg: &ssg,
                anchors: &[vec![a.clone(), a]],
            },
            &cfg,
        );
        assert!(matches!(r, Err(Error::Graph(_))));
    }

    #[test]
    fn empty_graph_stats() {
        let s = graph_stats(&HeteroGraph::default());
        assert!(s.nodes.values().all(|&v| v == 0));
        assert_eq!(s.total_edges(), 0);
    }
}
