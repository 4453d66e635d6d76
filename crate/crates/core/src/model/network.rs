//! The prediction network.
//!
//! Stage order: node and edge embedding, an agent round (temporal eGCN and
//! social GATv2) and a map round (eGCN over the 14 map relations) on
//! separate parts of the graph, fusion (agent/map GATv2 followed by another
//! agent and map round), map-latent fusion, the merge GATv2 that yields one
//! state per agent at its latest node, and the anchor read-out. Within one
//! round every relation computes its increment from the same input states
//! and the increments are summed.
//!
//! Decoding is per agent type and per mode `k`. Trajectories are
//! parametrized as a constant-velocity rollout from the current state plus a
//! learned offset.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::config::ModelConfig;
use super::layers::{EdgeBatch, Egcn, Gatv2, Linear, Mlp};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::graph::{EdgeKind, HeteroGraph, NodeKind, MAX_MAP_HOPS};
use crate::scene::{AgentType, DT, FUTURE_STEPS};

const TYPES: [AgentType; 2] = [AgentType::RoadBound, AgentType::NonRoadBound];
/// Values per trajectory row (`FUTURE_STEPS` points, x then y).
pub const TRAJ_DIM: usize = 2 * FUTURE_STEPS;

/// Sinusoidal encoding of a (relative) timestep.
pub fn time_encoding(t: i32, dim: usize) -> Vec<f64> {
    let pos = f64::from(t);
    (0..dim)
        .map(|c| {
            let i = (c / 2) as f64;
            let freq = 1.0 / 10000.0.powf(2.0 * i / dim as f64);
            if c % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    Egcn(Egcn),
    Gat(Gatv2),
}

impl Layer {
    fn delta(&self, tape: &mut Tape, store: &ParamStore, hs: Var, hd: Var, e: EdgeBatch<'_>) -> Result<Var> {
        match self {
            Layer::Egcn(l) => l.delta(tape, store, hs, hd, e),
            Layer::Gat(l) => l.delta(tape, store, hs, hd, e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Head {
    traj: Mlp,
    score: Mlp,
}

fn type_index(t: AgentType) -> usize {
    match t {
        AgentType::RoadBound => 0,
        AgentType::NonRoadBound => 1,
    }
}

/// Anchor relations share one set of weights; this maps them to one key.
fn canonical(kind: EdgeKind) -> EdgeKind {
    match kind {
        EdgeKind::Anchor(_) => EdgeKind::Anchor(0),
        k => k,
    }
}

fn slug(kind: EdgeKind) -> String {
    match kind {
        EdgeKind::Anchor(_) => "m-anchor-rb".into(),
        k => format!("{k}"),
    }
}

fn agent_kinds() -> Vec<(EdgeKind, bool)> {
    let mut v = Vec::new();
    for t in TYPES {
        v.push((EdgeKind::TemporalSuc(t), false));
        v.push((EdgeKind::TemporalPre(t), false));
    }
    for a in TYPES {
        for b in TYPES {
            v.push((EdgeKind::Ssg(a, b), true));
        }
    }
    v
}

fn map_kinds() -> Vec<EdgeKind> {
    let mut v: Vec<EdgeKind> = (1..=MAX_MAP_HOPS).map(EdgeKind::MapSuc).collect();
    v.extend((1..=MAX_MAP_HOPS).map(EdgeKind::MapPre));
    v.push(EdgeKind::MapLeft);
    v.push(EdgeKind::MapRight);
    v
}

fn fusion_kinds() -> Vec<EdgeKind> {
    TYPES.iter().flat_map(|&t| [EdgeKind::DrivesOn(t), EdgeKind::GivesTrafficInfo(t)]).collect()
}

/// Tape values for one agent type.
#[derive(Debug, Clone)]
pub struct TypeOutput {
    pub agent_type: AgentType,
    /// Indices into `HeteroGraph::agents`, in graph order.
    pub agents: Vec<usize>,
    /// `[n, hidden]`.
    pub z_agent: Var,
    /// Per mode, `[n, hidden]` (road-bound only, after padding).
    pub z_anchor: Vec<Var>,
    /// `[n, K · 24]`: mode `k` of agent `i` is row `i`, columns `24k..24k+24`.
    pub traj: Var,
    /// `[n, K]`.
    pub scores: Var,
    /// Per agent and mode, the index into the agent's anchor list.
    pub anchor_slots: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Default)]
pub struct Output {
    pub rb: Option<TypeOutput>,
    pub nrb: Option<TypeOutput>,
}

impl Output {
    pub fn of_type(&self, t: AgentType) -> Option<&TypeOutput> {
        match t {
            AgentType::RoadBound => self.rb.as_ref(),
            AgentType::NonRoadBound => self.nrb.as_ref(),
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = &TypeOutput> {
        self.rb.iter().chain(self.nrb.iter())
    }

    /// Reads trajectories and scores off the tape.
    pub fn prediction(&self, tape: &Tape, g: &HeteroGraph) -> Prediction {
        let mut agents = Vec::new();
        for part in self.parts() {
            let traj = tape.value(part.traj);
            let scores = tape.value(part.scores);
            let k = scores.cols();
            for (row, &ai) in part.agents.iter().enumerate() {
                let info = &g.agents[ai];
                let trajectories = (0..k)
                    .map(|m| {
                        let r = &traj.row(row)[m * TRAJ_DIM..(m + 1) * TRAJ_DIM];
                        core::array::from_fn(|s| Vec2::new(r[2 * s], r[2 * s + 1]))
                    })
                    .collect();
                agents.push(AgentPrediction {
                    agent: ai,
                    agent_id: info.agent_id.clone(),
                    agent_type: info.agent_type,
                    trajectories,
                    scores: scores.row(row).to_vec(),
                    anchor_ids: part.anchor_slots[row]
                        .iter()
                        .map(|s| s.map(|j| info.anchors[j].anchor_id))
                        .collect(),
                });
            }
        }
        agents.sort_by_key(|a| a.agent);
        Prediction { agents }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    pub agent: usize,
    pub agent_id: String,
    pub agent_type: AgentType,
    /// K trajectories in the scene's local frame.
    pub trajectories: Vec<[Vec2; FUTURE_STEPS]>,
    pub scores: Vec<f64>,
    /// Anchor id conditioning each mode (road-bound agents with anchors).
    pub anchor_ids: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub agents: Vec<AgentPrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    embed: [Mlp; 3],
    edge_embed: BTreeMap<EdgeKind, Linear>,
    agent_rounds: [BTreeMap<EdgeKind, Layer>; 2],
    map_rounds: [BTreeMap<EdgeKind, Layer>; 2],
    fusion: BTreeMap<EdgeKind, Layer>,
    fuse: [Mlp; 2],
    merge: [Gatv2; 2],
    anchor: Gatv2,
    heads: [Vec<Head>; 2],
}

impl Network {
    pub fn new(config: ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let (heads, slope) = (config.num_heads, config.leaky_slope);
        let embed = [
            Mlp::new(store, "embed.rb", [4, h, h], rng),
            Mlp::new(store, "embed.nrb", [4, h, h], rng),
            Mlp::new(store, "embed.m", [4, h, h], rng),
        ];

        let mut all_kinds: Vec<EdgeKind> = agent_kinds().into_iter().map(|(k, _)| k).collect();
        all_kinds.extend(map_kinds());
        all_kinds.extend(fusion_kinds());
        all_kinds.extend(TYPES.map(EdgeKind::Merge));
        all_kinds.push(EdgeKind::Anchor(0));
        let edge_embed = all_kinds
            .iter()
            .map(|&k| (k, Linear::new(store, &format!("edge.{}", slug(k)), k.feature_dim(), h, rng)))
            .collect();

        let mut agent_round = |store: &mut ParamStore, r: usize| -> BTreeMap<EdgeKind, Layer> {
            agent_kinds()
                .into_iter()
                .map(|(k, attn)| {
                    let name = format!("agent{r}.{k}");
                    let l = if attn {
                        Layer::Gat(Gatv2::new(store, &name, h, h, h, heads, slope, rng))
                    } else {
                        Layer::Egcn(Egcn::new(store, &name, h, h, h, rng))
                    };
                    (k, l)
                })
                .collect()
        };
        let agent_rounds = [agent_round(store, 0), agent_round(store, 1)];
        let mut map_round = |store: &mut ParamStore, r: usize| -> BTreeMap<EdgeKind, Layer> {
            map_kinds()
                .into_iter()
                .map(|k| (k, Layer::Egcn(Egcn::new(store, &format!("map{r}.{k}"), h, h, h, rng))))
                .collect()
        };
        let map_rounds = [map_round(store, 0), map_round(store, 1)];
        let fusion = fusion_kinds()
            .into_iter()
            .map(|k| (k, Layer::Gat(Gatv2::new(store, &format!("fusion.{k}"), h, h, h, heads, slope, rng))))
            .collect();
        let l = config.map_latent_dim;
        let fuse = TYPES.map(|t| Mlp::new(store, &format!("fuse.{}", t.short_name()), [h + l, h, h], rng));
        let merge = TYPES.map(|t| Gatv2::new(store, &format!("merge.{}", t.short_name()), h, h, h, heads, slope, rng));
        let anchor = Gatv2::new(store, "anchor", h, h, h, heads, slope, rng);
        let heads = TYPES.map(|t| {
            let input = if t == AgentType::RoadBound { 2 * h } else { h };
            (0..config.num_modes)
                .map(|k| Head {
                    traj: Mlp::new(store, &format!("dec.{}.{k}.traj", t.short_name()), [input, h, TRAJ_DIM], rng),
                    score: Mlp::new(store, &format!("dec.{}.{k}.score", t.short_name()), [input, h, 1], rng),
                })
                .collect()
        });
        Ok(Self {
            config,
            embed,
            edge_embed,
            agent_rounds,
            map_rounds,
            fusion,
            fuse,
            merge,
            anchor,
            heads,
        })
    }

    /// Embedded node states per non-empty node kind.
    pub fn embed_nodes(&self, tape: &mut Tape, store: &ParamStore, g: &HeteroGraph) -> Result<BTreeMap<NodeKind, Var>> {
        let c = &self.config;
        let mut out = BTreeMap::new();
        for t in TYPES {
            let nodes = g.agent_nodes(t);
            if nodes.is_empty() {
                continue;
            }
            let raw: Vec<f64> = nodes
                .features
                .iter()
                .flat_map(|f| [f[0] / c.pos_scale, f[1] / c.pos_scale, f[2] / c.vel_scale, f[3] / c.vel_scale])
                .collect();
            let x = tape.constant(Tensor::new(&[nodes.len(), 4], raw)?);
            let e = self.embed[type_index(t)].forward(tape, store, x)?;
            let pe: Vec<f64> = nodes.timestep.iter().flat_map(|&s| time_encoding(s, c.hidden_dim)).collect();
            let pe = tape.constant(Tensor::new(&[nodes.len(), c.hidden_dim], pe)?);
            out.insert(NodeKind::of_agent(t), tape.add(e, pe)?);
        }
        if !g.map.is_empty() {
            let raw: Vec<f64> = g
                .map
                .iter()
                .flat_map(|m| [m.position.x / c.pos_scale, m.position.y / c.pos_scale, m.direction.x, m.direction.y])
                .collect();
            let x = tape.constant(Tensor::new(&[g.map.len(), 4], raw)?);
            out.insert(NodeKind::Map, self.embed[2].forward(tape, store, x)?);
        }
        Ok(out)
    }

    /// Embedded features of every non-empty edge list.
    fn embed_edges(&self, tape: &mut Tape, store: &ParamStore, g: &HeteroGraph) -> Result<BTreeMap<EdgeKind, Var>> {
        let s = self.config.pos_scale;
        let mut out = BTreeMap::new();
        for (&kind, list) in &g.edges {
            if list.is_empty() {
                continue;
            }
            let lin = self
                .edge_embed
                .get(&canonical(kind))
                .ok_or_else(|| Error::Graph(format!("no embedding for edge kind {kind}")))?;
            let d = list.feature_dim;
            if d != kind.feature_dim() {
                return Err(Error::shape("edge features", format!("{kind} has width {d}")));
            }
            let data = list
                .features
                .chunks(d)
                .flat_map(|f| {
                    let mut f = f.to_vec();
                    // distances are scaled; relation one-hots are not
                    let from = if matches!(kind, EdgeKind::Ssg(..)) { d - 1 } else { 0 };
                    f[from..].iter_mut().for_each(|v| *v /= s);
                    f
                })
                .collect();
            let x = tape.constant(Tensor::new(&[list.len(), d], data)?);
            let y = lin.forward(tape, store, x)?;
            out.insert(kind, tape.relu(y));
        }
        Ok(out)
    }

    fn round(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layers: &BTreeMap<EdgeKind, Layer>,
        g: &HeteroGraph,
        feats: &BTreeMap<EdgeKind, Var>,
        h: &mut BTreeMap<NodeKind, Var>,
    ) -> Result<()> {
        let old = h.clone();
        let mut deltas: BTreeMap<NodeKind, Vec<Var>> = BTreeMap::new();
        for (&kind, layer) in layers {
            let (Some(list), Some(&feat)) = (g.edges.get(&kind), feats.get(&kind)) else {
                continue;
            };
            let (Some(&hs), Some(&hd)) = (old.get(&kind.src_kind()), old.get(&kind.dst_kind())) else {
                return Err(Error::Graph(format!("{kind} edges without endpoint nodes")));
            };
            let batch = EdgeBatch {
                src: &list.src,
                dst: &list.dst,
                feat,
                n_dst: tape.shape(hd)[0],
            };
            let d = layer.delta(tape, store, hs, hd, batch)?;
            deltas.entry(kind.dst_kind()).or_default().push(d);
        }
        for (kind, ds) in deltas {
            let mut acc = old[&kind];
            for d in ds {
                acc = tape.add(acc, d)?;
            }
            h.insert(kind, acc);
        }
        Ok(())
    }

    /// Replaces agent states `h` `[n, hidden]` by
    /// `MLP(concat(h, dropout(z_map)))`; `z_map` is `[n, map_latent_dim]`.
    #[allow(clippy::too_many_arguments)]
    pub fn fuse_map_latent(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        t: AgentType,
        h: Var,
        z_map: Var,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let n = tape.shape(h)[0];
        if tape.shape(z_map) != [n, self.config.map_latent_dim] {
            return Err(Error::shape(
                "fuse_map_latent",
                format!("map latent {:?}, expected [{n}, {}]", tape.shape(z_map), self.config.map_latent_dim),
            ));
        }
        let z = tape.dropout(z_map, self.config.dropout_map, train, rng)?;
        let x = tape.concat(&[h, z], 1)?;
        self.fuse[type_index(t)].forward(tape, store, x)
    }

    /// Trajectory rows `[n, K·24]` and scores `[n, K]` from agent states and,
    /// for road-bound agents, one anchor embedding per mode. `base` `[n, 24]`
    /// is the constant-velocity rollout the offsets are added to.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, t: AgentType, z_agent: Var, z_anchor: &[Var], base: Var) -> Result<(Var, Var)> {
        let k_modes = self.config.num_modes;
        if t == AgentType::RoadBound && z_anchor.len() != k_modes {
            return Err(Error::shape("decode", format!("{} anchor embeddings for {k_modes} modes", z_anchor.len())));
        }
        let mut trajs = Vec::with_capacity(k_modes);
        let mut scores = Vec::with_capacity(k_modes);
        for (k, head) in self.heads[type_index(t)].iter().enumerate() {
            let x = if t == AgentType::RoadBound {
                tape.concat(&[z_agent, z_anchor[k]], 1)?
            } else {
                z_agent
            };
            let off = head.traj.forward(tape, store, x)?;
            let off = tape.scale(off, self.config.traj_scale);
            trajs.push(tape.add(base, off)?);
            scores.push(head.score.forward(tape, store, x)?);
        }
        Ok((tape.concat(&trajs, 1)?, tape.concat(&scores, 1)?))
    }

    /// Full forward pass. `train` enables dropout on the map latents.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, g: &HeteroGraph, train: bool, rng: &mut impl Rng) -> Result<Output> {
        let hd = self.config.hidden_dim;
        if g.agents.is_empty() {
            return Err(Error::Graph("graph has no agents".into()));
        }
        let mut h = self.embed_nodes(tape, store, g)?;
        let feats = self.embed_edges(tape, store, g)?;

        self.round(tape, store, &self.agent_rounds[0], g, &feats, &mut h)?;
        self.round(tape, store, &self.map_rounds[0], g, &feats, &mut h)?;
        self.round(tape, store, &self.fusion, g, &feats, &mut h)?;
        self.round(tape, store, &self.agent_rounds[1], g, &feats, &mut h)?;
        self.round(tape, store, &self.map_rounds[1], g, &feats, &mut h)?;

        for t in TYPES {
            let kind = NodeKind::of_agent(t);
            let Some(&ht) = h.get(&kind) else { continue };
            let nodes = g.agent_nodes(t);
            let l = self.config.map_latent_dim;
            let z = match &nodes.map_latent {
                Some(z) => {
                    if nodes.map_latent_dim != l || z.len() != nodes.len() * l {
                        return Err(Error::shape(
                            "map latent",
                            format!("{} values of width {}, expected width {l}", z.len(), nodes.map_latent_dim),
                        ));
                    }
                    Tensor::new(&[nodes.len(), l], z.clone())?
                }
                None => Tensor::zeros(&[nodes.len(), l]),
            };
            let z = tape.constant(z);
            let fused = self.fuse_map_latent(tape, store, t, ht, z, train, rng)?;
            h.insert(kind, fused);
        }

        let mut out = Output::default();
        for t in TYPES {
            let kind = NodeKind::of_agent(t);
            let Some(&ht) = h.get(&kind) else { continue };
            let agents: Vec<usize> = g.agents_of(t).map(|(i, _)| i).collect();
            if agents.is_empty() {
                continue;
            }
            let merged = match (g.edges.get(&EdgeKind::Merge(t)), feats.get(&EdgeKind::Merge(t))) {
                (Some(list), Some(&feat)) => {
                    let batch = EdgeBatch {
                        src: &list.src,
                        dst: &list.dst,
                        feat,
                        n_dst: tape.shape(ht)[0],
                    };
                    self.merge[type_index(t)].forward(tape, store, ht, ht, batch)?
                }
                _ => ht,
            };
            let latest: Vec<usize> = agents.iter().map(|&i| g.agents[i].latest_node()).collect();
            let z_agent = tape.gather_rows(merged, &latest)?;

            let (z_anchor, anchor_slots) = if t == AgentType::RoadBound {
                self.anchor_readout(tape, store, g, &h, &feats, z_agent, &agents)?
            } else {
                (Vec::new(), vec![vec![None; self.config.num_modes]; agents.len()])
            };

            let base: Vec<f64> = agents
                .iter()
                .flat_map(|&i| {
                    let a = &g.agents[i];
                    (1..=FUTURE_STEPS).flat_map(move |s| {
                        let p = a.position + a.velocity * (DT * s as f64);
                        [p.x, p.y]
                    })
                })
                .collect();
            let base = tape.constant(Tensor::new(&[agents.len(), TRAJ_DIM], base)?);
            let (traj, scores) = self.decode(tape, store, t, z_agent, &z_anchor, base)?;
            let part = TypeOutput {
                agent_type: t,
                agents,
                z_agent,
                z_anchor,
                traj,
                scores,
                anchor_slots,
            };
            match t {
                AgentType::RoadBound => out.rb = Some(part),
                AgentType::NonRoadBound => out.nrb = Some(part),
            }
        }
        debug_assert!(out.parts().all(|p| tape.shape(p.z_agent)[1] == hd));
        Ok(out)
    }

    /// Anchor embeddings per mode for the road-bound agents `agents` (rows
    /// of `z_agent`). Slot `k` of an agent with `n > 0` anchors uses anchor
    /// `k mod n`; agents without anchors get zero rows.
    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn anchor_readout(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &HeteroGraph,
        h: &BTreeMap<NodeKind, Var>,
        feats: &BTreeMap<EdgeKind, Var>,
        z_agent: Var,
        agents: &[usize],
    ) -> Result<(Vec<Var>, Vec<Vec<Option<usize>>>)> {
        let k_modes = self.config.num_modes;
        let hd = self.config.hidden_dim;
        let n = agents.len();
        let mut row_of = BTreeMap::new();
        for (r, &ai) in agents.iter().enumerate() {
            row_of.insert(g.agents[ai].latest_node(), r);
        }
        let slots: Vec<Vec<Option<usize>>> = agents
            .iter()
            .map(|&ai| {
                let na = g.agents[ai].anchors.len();
                (0..k_modes).map(|k| (na > 0).then(|| k % na)).collect()
            })
            .collect();

        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut parts = Vec::new();
        for j in 0..k_modes {
            let kind = EdgeKind::Anchor(j as u8);
            let (Some(list), Some(&feat)) = (g.edges.get(&kind), feats.get(&kind)) else {
                continue;
            };
            for (&s, &d) in list.src.iter().zip(&list.dst) {
                let r = *row_of
                    .get(&d)
                    .ok_or_else(|| Error::Graph(format!("anchor edge into node {d}, not a latest node")))?;
                src.push(s);
                dst.push(r * k_modes + j);
            }
            parts.push(feat);
        }

        let zeros = tape.constant(Tensor::zeros(&[n, hd]));
        if parts.is_empty() {
            return Ok((vec![zeros; k_modes], slots));
        }
        let h_map = *h
            .get(&NodeKind::Map)
            .ok_or_else(|| Error::Graph("anchor edges without map nodes".into()))?;
        let feat = tape.concat(&parts, 0)?;
        let slot_rows: Vec<usize> = (0..n * k_modes).map(|s| s / k_modes).collect();
        let h_slots = tape.gather_rows(z_agent, &slot_rows)?;
        let batch = EdgeBatch {
            src: &src,
            dst: &dst,
            feat,
            n_dst: n * k_modes,
        };
        let delta = self.anchor.delta(tape, store, h_map, h_slots, batch)?;
        let zero_row = tape.constant(Tensor::zeros(&[1, hd]));
        let padded = tape.concat(&[delta, zero_row], 0)?;
        let mut z = Vec::with_capacity(k_modes);
        for k in 0..k_modes {
            let idx: Vec<usize> = (0..n)
                .map(|r| slots[r][k].map_or(n * k_modes, |j| r * k_modes + j))
                .collect();
            z.push(tape.gather_rows(padded, &idx)?);
        }
        Ok((z, slots))
    }

    /// Parameters of mode `k`'s trajectory head for agent type `t`.
    pub fn trajectory_head_params(&self, t: AgentType, k: usize) -> Vec<crate::autodiff::ParamId> {
        let m = &self.heads[type_index(t)][k].traj;
        vec![m.l1.w, m.l1.b, m.l2.w, m.l2.b]
    }

    pub fn score_head_params(&self, t: AgentType, k: usize) -> Vec<crate::autodiff::ParamId> {
        let m = &self.heads[type_index(t)][k].score;
        vec![m.l1.w, m.l1.b, m.l2.w, m.l2.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{micro_graph, small_config};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(cfg: ModelConfig, seed: u64) -> (Network, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        (Network::new(cfg, &mut s, &mut rng).unwrap(), s)
    }

    #[test]
    fn time_encoding_distinguishes_steps() {
        let a = time_encoding(0, 8);
        assert_eq!(a, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_ne!(time_encoding(-1, 8), a);
    }

    #[test]
    fn embedding_properties() {
        let (n, s) = net(small_config(), 0);
        let mut g = micro_graph();
        // two rb nodes with equal raw features
        let f = g.rb.features[0];
        g.rb.features[1] = f;
        let t0 = g.rb.timestep[0];
        let mut tape = Tape::new();
        let h = n.embed_nodes(&mut tape, &s, &g).unwrap();
        let rb = tape.value(h[&NodeKind::RbAgent]).clone();
        assert_ne!(rb.row(0), rb.row(1), "different timesteps must differ");
        g.rb.timestep[1] = t0;
        let mut tape = Tape::new();
        let h = n.embed_nodes(&mut tape, &s, &g).unwrap();
        let rb = tape.value(h[&NodeKind::RbAgent]);
        assert_eq!(rb.row(0), rb.row(1));
        // map embeddings do not see timesteps at all
        let m0 = tape.value(h[&NodeKind::Map]).clone();
        g.rb.timestep.iter_mut().for_each(|t| *t -= 1);
        let mut tape = Tape::new();
        let h = n.embed_nodes(&mut tape, &s, &g).unwrap();
        assert_eq!(tape.value(h[&NodeKind::Map]), &m0);
    }

    #[test]
    fn output_shapes_and_padding() {
        let cfg = small_config();
        let (n, s) = net(cfg, 1);
        let g = micro_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let out = n.forward(&mut tape, &s, &g, false, &mut rng).unwrap();
        let rb = out.rb.as_ref().unwrap();
        assert_eq!(tape.shape(rb.traj), [rb.agents.len(), cfg.num_modes * TRAJ_DIM]);
        assert_eq!(tape.shape(rb.scores), [rb.agents.len(), cfg.num_modes]);
        // agent 1 has one anchor: both modes use it
        assert_eq!(rb.anchor_slots[0], [Some(0), Some(1)]);
        assert_eq!(rb.anchor_slots[1], [Some(0), Some(0)]);
        assert_eq!(tape.value(rb.z_anchor[0]).row(1), tape.value(rb.z_anchor[1]).row(1));
        assert_ne!(tape.value(rb.z_anchor[0]).row(0), tape.value(rb.z_anchor[1]).row(0));
        let p = out.prediction(&tape, &g);
        assert_eq!(p.agents.len(), g.agents.len());
        assert!(p.agents.iter().all(|a| a.trajectories.len() == cfg.num_modes && a.scores.iter().all(|s| s.is_finite())));
    }

    #[test]
    fn fuse_map_latent_modes() {
        let cfg = small_config();
        let (n, s) = net(cfg, 2);
        let run = |train: bool, seed: u64, zero: bool| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = Tape::new();
            let h = t.constant(Tensor::full(&[3, cfg.hidden_dim], 0.3));
            let z = if zero {
                Tensor::zeros(&[3, cfg.map_latent_dim])
            } else {
                Tensor::new(&[3, cfg.map_latent_dim], (0..3 * cfg.map_latent_dim).map(|i| (i as f64).sin()).collect()).unwrap()
            };
            let z = t.constant(z);
            let y = n.fuse_map_latent(&mut t, &s, AgentType::RoadBound, h, z, train, &mut rng).unwrap();
            t.value(y).clone()
        };
        assert_eq!(run(false, 1, false), run(false, 2, false));
        assert_ne!(run(true, 1, false), run(true, 2, false));
        assert!(run(true, 1, true).is_finite());
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[2, cfg.hidden_dim]));
        let z = t.constant(Tensor::zeros(&[2, cfg.map_latent_dim + 1]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(n.fuse_map_latent(&mut t, &s, AgentType::RoadBound, h, z, false, &mut rng).is_err());
    }

    #[test]
    fn decoder_anchor_conditioning() {
        let cfg = small_config();
        let (n, s) = net(cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hd = cfg.hidden_dim;
        let rand_t = |rng: &mut ChaCha8Rng| Tensor::new(&[2, hd], (0..2 * hd).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let za = rand_t(&mut rng);
        let an = [rand_t(&mut rng), rand_t(&mut rng)];
        let run = |za: &Tensor, an: &[Tensor], t: AgentType| {
            let mut tape = Tape::new();
            let z = tape.constant(za.clone());
            let a: Vec<Var> = an.iter().map(|x| tape.constant(x.clone())).collect();
            let base = tape.constant(Tensor::zeros(&[2, TRAJ_DIM]));
            let (tr, sc) = n.decode(&mut tape, &s, t, z, &a, base).unwrap();
            (tape.value(tr).clone(), tape.value(sc).clone())
        };
        let (t0, _) = run(&za, &an, AgentType::RoadBound);
        // perturb anchor 1 only: mode 0 unchanged, mode 1 changes
        let mut an2 = an.clone();
        an2[1].data.iter_mut().for_each(|v| *v += 0.5);
        let (t1, _) = run(&za, &an2, AgentType::RoadBound);
        for r in 0..2 {
            assert_eq!(t0.row(r)[..TRAJ_DIM], t1.row(r)[..TRAJ_DIM]);
            assert_ne!(t0.row(r)[TRAJ_DIM..], t1.row(r)[TRAJ_DIM..]);
        }
        // non-road-bound decoding ignores anchors
        let (n0, s0) = run(&za, &an, AgentType::NonRoadBound);
        let (n1, s1) = run(&za, &an2, AgentType::NonRoadBound);
        assert_eq!((n0, s0), (n1, s1));
    }

    #[test]
    fn permutation_invariance() {
        let cfg = small_config();
        let (n, s) = net(cfg, 5);
        let g = micro_graph();
        let perm = crate::model::testutil::micro_graph_permuted(&[1, 2, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t1 = Tape::new();
        let p1 = n.forward(&mut t1, &s, &g, false, &mut rng).unwrap().prediction(&t1, &g);
        let mut t2 = Tape::new();
        let p2 = n.forward(&mut t2, &s, &perm, false, &mut rng).unwrap().prediction(&t2, &perm);
        for a in &p1.agents {
            let b = p2.agents.iter().find(|b| b.agent_id == a.agent_id).unwrap();
            for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
                for (pa, pb) in ta.iter().zip(tb) {
                    assert!((*pa - *pb).norm() < 1e-9);
                }
            }
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
