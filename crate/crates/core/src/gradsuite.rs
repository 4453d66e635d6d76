//! Central finite-difference checks over the whole differentiable stack:
//! every tape operation, both message-passing layers, the map autoencoder,
//! the decoder heads and the complete loss on a micro scene.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{grad_check, grad_check_params, BnMode, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::geom::Vec2;
use crate::graph::{GraphConfig, HeteroGraph};
use crate::lane::{Lane, LaneGraph, LaneId};
use crate::model::layers::{EdgeBatch, Egcn, Gatv2};
use crate::model::{compute_loss, AutoencoderConfig, BnUpdates, MapAutoencoder, ModelConfig, Network};
use crate::pipeline::{build_sample, SampleConfig};
use crate::scene::{AgentState, AgentTrack, AgentType, Scene};

pub const EPS: f64 = 1e-5;
/// Tolerance for single ops and layers.
pub const UNIT_TOLERANCE: f64 = 1e-4;
/// Tolerance for the full pipeline loss.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<24} {:.3e} (< {:.0e})",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance
        )
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Values in ±[0.1, 1) so relu-type kinks are never probed.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Non-uniform weights so that a reduction does not hide errors.
fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
    let n = t.value(y).numel();
    let w = Tensor::new(&t.value(y).shape.clone(), (0..n).map(|i| (i as f64 * 0.37).sin() + 1.1).collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type OpFn = fn(&mut Tape, Var, &[Var]) -> Result<Var>;

/// Checks `f` with respect to `x` and to each extra operand in turn.
fn check_op(name: &str, x: Tensor, extras: Vec<Tensor>, f: OpFn) -> Result<Check> {
    let mut worst = grad_check(&x, EPS, |t, v| {
        let ex: Vec<Var> = extras.iter().map(|e| t.constant(e.clone())).collect();
        let y = f(t, v, &ex)?;
        weighted_sum(t, y)
    })?;
    for k in 0..extras.len() {
        let e = grad_check(&extras[k], EPS, |t, v| {
            let xv = t.constant(x.clone());
            let ex: Vec<Var> = extras
                .iter()
                .enumerate()
                .map(|(j, e)| if j == k { v } else { t.constant(e.clone()) })
                .collect();
            let y = f(t, xv, &ex)?;
            let s = t.mul(y, y)?;
            Ok(t.sum(s))
        })?;
        worst = worst.max(e);
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance: UNIT_TOLERANCE,
    })
}

/// One check per tape operation.
pub fn op_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let cases: Vec<(&str, Tensor, Vec<Tensor>, OpFn)> = vec![
        ("matmul", rand_t(&[3, 4], r), vec![rand_t(&[4, 2], r)], |t, x, e| t.matmul(x, e[0])),
        ("add", rand_t(&[3, 4], r), vec![rand_t(&[3, 4], r)], |t, x, e| t.add(x, e[0])),
        ("add_row", rand_t(&[3, 4], r), vec![rand_t(&[4], r)], |t, x, e| t.add(x, e[0])),
        ("sub_col", rand_t(&[3, 4], r), vec![rand_t(&[3, 1], r)], |t, x, e| t.sub(x, e[0])),
        ("mul", rand_t(&[3, 4], r), vec![rand_t(&[3, 4], r)], |t, x, e| t.mul(x, e[0])),
        ("mul_scalar", rand_t(&[3, 4], r), vec![rand_t(&[1, 1], r)], |t, x, e| t.mul(x, e[0])),
        ("mul_const", rand_t(&[2, 3], r), vec![], |t, x, _| t.mul_const(x, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0])),
        ("scale", rand_t(&[2, 3], r), vec![], |t, x, _| Ok(t.scale(x, -1.7))),
        ("add_scalar", rand_t(&[2, 3], r), vec![], |t, x, _| Ok(t.add_scalar(x, 0.3))),
        ("relu", away_from_zero(&[3, 4], r), vec![], |t, x, _| Ok(t.relu(x))),
        ("leaky_relu", away_from_zero(&[3, 4], r), vec![], |t, x, _| Ok(t.leaky_relu(x, 0.2))),
        ("tanh", rand_t(&[3, 4], r), vec![], |t, x, _| Ok(t.tanh(x))),
        ("cos", rand_t(&[3, 4], r), vec![], |t, x, _| Ok(t.cos(x))),
        ("atan2", away_from_zero(&[3, 4], r), vec![away_from_zero(&[3, 4], r)], |t, x, e| t.atan2(x, e[0])),
        ("softmax_rows", rand_t(&[3, 4], r), vec![], |t, x, _| t.softmax(x, 1)),
        ("softmax_cols", rand_t(&[3, 4], r), vec![], |t, x, _| t.softmax(x, 0)),
        ("sum", rand_t(&[3, 4], r), vec![], |t, x, _| Ok(t.sum(x))),
        ("sum_axis0", rand_t(&[3, 4], r), vec![], |t, x, _| t.sum_axis(x, 0)),
        ("mean", rand_t(&[3, 4], r), vec![], |t, x, _| Ok(t.mean(x))),
        ("mean_axis1", rand_t(&[3, 4], r), vec![], |t, x, _| t.mean_axis(x, 1)),
        ("smooth_l1", rand_t(&[4, 5], r), vec![rand_t(&[4, 5], r)], |t, x, e| {
            // spread the differences across both branches
            let two = t.scale(x, 2.0);
            t.smooth_l1(two, e[0], 1.0)
        }),
        ("concat0", rand_t(&[2, 3], r), vec![rand_t(&[1, 3], r)], |t, x, e| t.concat(&[x, e[0], x], 0)),
        ("concat1", rand_t(&[2, 3], r), vec![rand_t(&[2, 2], r)], |t, x, e| t.concat(&[e[0], x], 1)),
        ("slice0", rand_t(&[4, 3], r), vec![], |t, x, _| t.slice(x, 0, 1, 2)),
        ("slice1", rand_t(&[4, 3], r), vec![], |t, x, _| t.slice(x, 1, 1, 2)),
        ("gather_rows", rand_t(&[4, 3], r), vec![], |t, x, _| t.gather_rows(x, &[3, 0, 3, 1])),
        ("scatter_sum", rand_t(&[5, 3], r), vec![], |t, x, _| t.scatter_sum(x, &[2, 0, 2, 2, 1], 4)),
        ("scatter_mean", rand_t(&[5, 3], r), vec![], |t, x, _| t.scatter_mean(x, &[2, 0, 2, 2, 1], 4)),
        ("scatter_softmax", rand_t(&[5, 3], r), vec![], |t, x, _| t.scatter_softmax(x, &[2, 0, 2, 2, 1], 3)),
        ("reshape", rand_t(&[4, 3], r), vec![], |t, x, _| t.reshape(x, &[2, 6])),
        ("conv2d", rand_t(&[2, 2, 6, 6], r), vec![rand_t(&[3, 2, 4, 4], r)], |t, x, e| {
            let y = t.conv2d(x, e[0], 2, 1)?;
            t.reshape(y, &[2, 27])
        }),
        ("deconv2d", rand_t(&[2, 3, 3, 3], r), vec![rand_t(&[3, 2, 4, 4], r)], |t, x, e| {
            let y = t.deconv2d(x, e[0], 2, 1)?;
            t.reshape(y, &[2, 72])
        }),
        ("channel_bias", rand_t(&[2, 3, 2, 2], r), vec![rand_t(&[3], r)], |t, x, e| {
            let y = t.channel_bias(x, e[0])?;
            t.reshape(y, &[2, 12])
        }),
        ("batchnorm_train", rand_t(&[3, 2, 2, 2], r), vec![rand_t(&[2], r), rand_t(&[2], r)], |t, x, e| {
            let (y, _) = t.batchnorm2d(x, e[0], e[1], BnMode::Train)?;
            t.reshape(y, &[3, 8])
        }),
        ("batchnorm_eval", rand_t(&[3, 2, 2, 2], r), vec![rand_t(&[2], r), rand_t(&[2], r)], |t, x, e| {
            let mode = BnMode::Eval {
                mean: &[0.1, -0.2],
                var: &[0.5, 2.0],
            };
            let (y, _) = t.batchnorm2d(x, e[0], e[1], mode)?;
            t.reshape(y, &[3, 8])
        }),
        ("dropout", rand_t(&[3, 4], r), vec![], |t, x, _| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            t.dropout(x, 0.3, true, &mut rng)
        }),
    ];
    cases.into_iter().map(|(n, x, e, f)| check_op(n, x, e, f)).collect()
}

/// eGCN and GATv2 on a random bipartite micro-graph, parameters and inputs.
pub fn layer_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let egcn = Egcn::new(&mut store, "egcn", 6, 3, 8, &mut rng);
    let mut gat_store = ParamStore::new();
    let gat = Gatv2::new(&mut gat_store, "gatv2", 6, 3, 8, 2, 0.2, &mut rng);
    let hs = rand_t(&[4, 6], &mut rng);
    let hd = rand_t(&[3, 8], &mut rng);
    let ef = rand_t(&[5, 3], &mut rng);
    let (src, dst) = ([0, 1, 3, 2, 1], [0, 0, 1, 1, 1]);

    let run = |t: &mut Tape, s: &ParamStore, hs: Var, hd: Var, ef: Var, gat_layer: bool| -> Result<Var> {
        let eb = EdgeBatch {
            src: &src,
            dst: &dst,
            feat: ef,
            n_dst: 3,
        };
        let y = if gat_layer {
            gat.forward(t, s, hs, hd, eb)?
        } else {
            egcn.forward(t, s, hs, hd, eb)?
        };
        weighted_sum(t, y)
    };

    let mut out = Vec::new();
    for (name, s, is_gat) in [("egcn", &store, false), ("gatv2", &gat_store, true)] {
        let p = grad_check_params(s, EPS, None, seed, |t, s| {
            let (a, b, c) = (t.constant(hs.clone()), t.constant(hd.clone()), t.constant(ef.clone()));
            run(t, s, a, b, c, is_gat)
        })?;
        let x_src = grad_check(&hs, EPS, |t, v| {
            let (b, c) = (t.constant(hd.clone()), t.constant(ef.clone()));
            run(t, s, v, b, c, is_gat)
        })?;
        let x_dst = grad_check(&hd, EPS, |t, v| {
            let (a, c) = (t.constant(hs.clone()), t.constant(ef.clone()));
            run(t, s, a, v, c, is_gat)
        })?;
        let x_edge = grad_check(&ef, EPS, |t, v| {
            let (a, b) = (t.constant(hs.clone()), t.constant(hd.clone()));
            run(t, s, a, b, v, is_gat)
        })?;
        out.push(Check {
            name: name.to_string(),
            max_rel_error: p.max_rel_error.max(x_src).max(x_dst).max(x_edge),
            tolerance: UNIT_TOLERANCE,
        });
    }
    Ok(out)
}

/// Reconstruction loss of a two-block autoencoder in training mode.
pub fn autoencoder_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AutoencoderConfig {
        in_channels: 2,
        size: 8,
        channels: vec![3, 4],
        kernel: 4,
        leaky_slope: 0.2,
    };
    let mut store = ParamStore::new();
    let ae = MapAutoencoder::new(cfg, &mut store, &mut rng)?;
    let x: Vec<f64> = (0..3 * 2 * 64).map(|_| if rng.random_bool(0.4) { 1.0 } else { -1.0 }).collect();
    let x = Tensor::new(&[3, 2, 8, 8], x)?;
    let r = grad_check_params(&store, EPS, Some(16), seed, |t, s| {
        let xv = t.constant(x.clone());
        let mut up = BnUpdates::default();
        let z = ae.encode(t, s, xv, true, &mut up)?;
        let y = ae.decode(t, s, z, true, &mut up)?;
        let d = t.sub(y, xv)?;
        let sq = t.mul(d, d)?;
        Ok(t.mean(sq))
    })?;
    Ok(Check {
        name: "autoencoder".to_string(),
        max_rel_error: r.max_rel_error,
        tolerance: UNIT_TOLERANCE,
    })
}

fn micro_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_heads: 2,
        num_modes: 2,
        map_latent_dim: 4,
        ..Default::default()
    }
}

/// Both decoder types on random agent and anchor embeddings.
pub fn decoder_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = micro_model();
    let net = Network::new(cfg, &mut store, &mut rng)?;
    let n = 3;
    let z_agent = rand_t(&[n, cfg.hidden_dim], &mut rng);
    let z_anchor: Vec<Tensor> = (0..cfg.num_modes).map(|_| rand_t(&[n, cfg.hidden_dim], &mut rng)).collect();
    let base = rand_t(&[n, 24], &mut rng);
    let f = |t: &mut Tape, s: &ParamStore, za: Var| -> Result<Var> {
        let anchors: Vec<Var> = z_anchor.iter().map(|z| t.constant(z.clone())).collect();
        let b = t.constant(base.clone());
        let mut total = None;
        for ty in [AgentType::RoadBound, AgentType::NonRoadBound] {
            let (traj, scores) = net.decode(t, s, ty, za, &anchors, b)?;
            let a = weighted_sum(t, traj)?;
            let b = weighted_sum(t, scores)?;
            let ab = t.add(a, b)?;
            total = Some(match total {
                Some(v) => t.add(v, ab)?,
                None => ab,
            });
        }
        Ok(total.expect("two agent types"))
    };
    // only the decoder's parameters take part
    let p = grad_check_params(&store, EPS, Some(8), seed, |t, s| {
        let za = t.constant(z_agent.clone());
        f(t, s, za)
    })?;
    let x = grad_check(&z_agent, EPS, |t, v| f(t, &store, v))?;
    Ok(Check {
        name: "decoder".to_string(),
        max_rel_error: p.max_rel_error.max(x),
        tolerance: UNIT_TOLERANCE,
    })
}

/// A 10 m stem forking into two 10 m branches: six map nodes at 10 m spacing.
pub fn micro_lanes() -> LaneGraph {
    let stem = Lane::new(LaneId(1), vec![Vec2::ZERO, Vec2::new(10.0, 0.0)], 3.5)
        .expect("valid lane")
        .with_successors([2, 3]);
    let l = Lane::new(LaneId(2), vec![Vec2::new(10.0, 0.0), Vec2::new(18.0, 6.0)], 3.5)
        .expect("valid lane")
        .with_predecessors([1]);
    let r = Lane::new(LaneId(3), vec![Vec2::new(10.0, 0.0), Vec2::new(18.0, -6.0)], 3.5)
        .expect("valid lane")
        .with_predecessors([1]);
    LaneGraph::new(vec![stem, l, r], BTreeMap::new()).expect("valid graph")
}

fn track(id: &str, ty: AgentType, t0: i32, f: impl Fn(i32) -> (Vec2, Vec2)) -> AgentTrack {
    AgentTrack {
        agent_id: id.to_string(),
        agent_type: ty,
        states: (t0..=12)
            .map(|t| {
                let (p, v) = f(t);
                AgentState {
                    t,
                    position: p,
                    velocity: v,
                    yaw: v.angle(),
                }
            })
            .collect(),
        is_target: true,
    }
}

/// Two road-bound agents (on the stem and on the left branch) and one
/// pedestrian with a three-step history, all with full futures.
pub fn micro_tracks() -> Vec<AgentTrack> {
    let dir = Vec2::new(0.8, 0.6);
    vec![
        track("a", AgentType::RoadBound, -4, |t| {
            let s = f64::from(t + 4);
            (Vec2::new(s, -0.02 * s * s), Vec2::new(2.0, -0.08 * s))
        }),
        track("b", AgentType::RoadBound, -4, |t| (Vec2::new(10.0, 0.0) + dir * f64::from(t + 5), dir * 2.0)),
        track("c", AgentType::NonRoadBound, -2, |t| {
            (Vec2::new(6.0, 5.0 - 0.5 * f64::from(t + 2)), Vec2::new(0.0, -1.0))
        }),
    ]
}

pub fn micro_sample_config() -> SampleConfig {
    SampleConfig {
        graph: GraphConfig {
            map_step: 10.0,
            max_anchors: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// The end-to-end fixture: the stem vehicle (two anchors) and the
/// pedestrian, with random map latents attached.
pub fn micro_scene_graph(seed: u64) -> Result<HeteroGraph> {
    let t = micro_tracks();
    let scene = Scene::new("micro", "micro", vec![t[0].clone(), t[2].clone()])?;
    let mut g = build_sample(&scene, &micro_lanes(), &micro_sample_config())?.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = micro_model().map_latent_dim;
    for ty in [AgentType::RoadBound, AgentType::NonRoadBound] {
        let nodes = g.agent_nodes_mut(ty);
        nodes.map_latent = Some((0..nodes.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        nodes.map_latent_dim = dim;
    }
    Ok(g)
}

/// Full training-mode loss (fixed dropout mask) on the micro scene, K = 2.
pub fn end_to_end_check(seed: u64) -> Result<Check> {
    let g = micro_scene_graph(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = Network::new(micro_model(), &mut store, &mut rng)?;
    let r = grad_check_params(&store, EPS, Some(6), seed, |t, s| {
        let mut drop = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let out = net.forward(t, s, &g, true, &mut drop)?;
        Ok(compute_loss(t, &out, &g, &net.config)?.total)
    })?;
    Ok(Check {
        name: "end_to_end".to_string(),
        max_rel_error: r.max_rel_error,
        tolerance: END_TO_END_TOLERANCE,
    })
}

/// Every check, ops first and the full pipeline last.
pub fn run_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = op_checks(seed)?;
    out.extend(layer_checks(seed)?);
    out.push(autoencoder_check(seed)?);
    out.push(decoder_check(seed)?);
    out.push(end_to_end_check(seed)?);
    Ok(out)
}
