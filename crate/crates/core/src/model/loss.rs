//! Training loss: winner-takes-all regression, max-margin scoring and the
//! orientation term against anchor headings.
//!
//! The winner of an agent is the mode with the smallest final displacement
//! error (ties go to the lower mode index). Regression only reaches the
//! winner's row through a row gather, so no other trajectory head receives
//! gradient from it. Orientation at step `t` is `atan2(p_t − p_{t−1})` with
//! `p_{−1}` the last observed position; steps shorter than
//! [`DEGENERATE_STEP`] reuse the previous heading (the observed yaw before
//! the first step).

use alloc::vec;
use alloc::vec::Vec;

use super::config::{ModelConfig, YawModes};
use super::network::{Output, TRAJ_DIM};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::graph::HeteroGraph;
use crate::lane::{heading_along_anchor, AnchorPath};
use crate::scene::FUTURE_STEPS;

pub const DEGENERATE_STEP: f64 = 1e-9;

/// Loss inputs for one row of a trajectory block.
#[derive(Debug, Clone)]
pub struct LossAgent<'a> {
    pub future: Option<[Vec2; FUTURE_STEPS]>,
    pub position: Vec2,
    pub yaw: f64,
    /// Anchor conditioning each mode; all `None` disables the orientation term.
    pub mode_anchors: Vec<Option<&'a AnchorPath>>,
}

/// A block of agents sharing decoder outputs `traj` `[n, K·24]` and
/// `scores` `[n, K]`.
#[derive(Debug, Clone)]
pub struct LossBlock<'a> {
    pub traj: Var,
    pub scores: Var,
    pub agents: Vec<LossAgent<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub reg: f64,
    pub score: f64,
    pub yaw: f64,
    /// Agents with ground truth.
    pub agents: usize,
    /// Agents contributing to the orientation term.
    pub yaw_agents: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub reg: Var,
    pub score: Var,
    pub yaw: Var,
    pub breakdown: LossBreakdown,
}

fn points(row: &[f64], k: usize) -> impl Iterator<Item = Vec2> + '_ {
    row[k * TRAJ_DIM..(k + 1) * TRAJ_DIM].chunks(2).map(|c| Vec2::new(c[0], c[1]))
}

/// Mode with the least final displacement error; ties go to the lower index.
pub fn winner_mode(traj_row: &[f64], gt: &[Vec2; FUTURE_STEPS]) -> usize {
    let k_modes = traj_row.len() / TRAJ_DIM;
    let goal = gt[FUTURE_STEPS - 1];
    (0..k_modes)
        .map(|k| (k, points(traj_row, k).last().map_or(f64::INFINITY, |p| p.dist(goal))))
        .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
        .0
}

/// Headings of a predicted path after the degenerate-step fallback, as
/// indices into `[θ_0 … θ_11, yaw]`: each step points at itself or at the
/// closest earlier valid step, or at the observed yaw (index 12).
fn heading_sources(start: Vec2, pts: &[Vec2]) -> Vec<usize> {
    let mut prev_valid = FUTURE_STEPS;
    let mut last = start;
    pts.iter()
        .enumerate()
        .map(|(t, &p)| {
            if (p - last).norm() > DEGENERATE_STEP {
                prev_valid = t;
            }
            last = p;
            prev_valid
        })
        .collect()
}

/// Per-row orientation loss `[m, 1]`, averaged over the 12 steps, for
/// predicted paths `x` `[m, 24]` starting after `start[i]` with observed
/// yaw `yaw[i]`, compared against `anchors[i]`.
pub fn yaw_loss_rows(tape: &mut Tape, x: Var, start: &[Vec2], yaw: &[f64], anchors: &[&AnchorPath]) -> Result<Var> {
    let m = tape.shape(x)[0];
    if tape.shape(x) != [m, TRAJ_DIM] || start.len() != m || yaw.len() != m || anchors.len() != m {
        return Err(Error::shape("yaw loss", "inconsistent row counts"));
    }
    let n = FUTURE_STEPS;
    let mut mx = vec![0.0; TRAJ_DIM * n];
    let mut my = vec![0.0; TRAJ_DIM * n];
    for t in 0..n {
        mx[2 * t * n + t] = 1.0;
        my[(2 * t + 1) * n + t] = 1.0;
        if t > 0 {
            mx[2 * (t - 1) * n + t] = -1.0;
            my[(2 * (t - 1) + 1) * n + t] = -1.0;
        }
    }
    let mut cx = vec![0.0; m * n];
    let mut cy = vec![0.0; m * n];
    for (i, s) in start.iter().enumerate() {
        cx[i * n] = s.x;
        cy[i * n] = s.y;
    }
    let mx = tape.constant(Tensor::new(&[TRAJ_DIM, n], mx)?);
    let my = tape.constant(Tensor::new(&[TRAJ_DIM, n], my)?);
    let cx = tape.constant(Tensor::new(&[m, n], cx)?);
    let cy = tape.constant(Tensor::new(&[m, n], cy)?);
    let dx = tape.matmul(x, mx)?;
    let dx = tape.sub(dx, cx)?;
    let dy = tape.matmul(x, my)?;
    let dy = tape.sub(dy, cy)?;
    let mut theta = tape.atan2(dy, dx)?;

    let xv = tape.value(x).clone();
    let mut target = Vec::with_capacity(m * n);
    let mut gather = Vec::with_capacity(m * n);
    let mut fallback = false;
    for i in 0..m {
        let pts: Vec<Vec2> = points(xv.row(i), 0).collect();
        for (t, src) in heading_sources(start[i], &pts).into_iter().enumerate() {
            fallback |= src != t;
            gather.push(if src == n { m * n + i } else { i * n + src });
        }
        target.extend(pts.iter().map(|&p| heading_along_anchor(anchors[i], p)));
    }
    if fallback {
        let flat = tape.reshape(theta, &[m * n, 1])?;
        let yaw_c = tape.constant(Tensor::new(&[m, 1], yaw.to_vec())?);
        let ext = tape.concat(&[flat, yaw_c], 0)?;
        let picked = tape.gather_rows(ext, &gather)?;
        theta = tape.reshape(picked, &[m, n])?;
    }
    let target = tape.constant(Tensor::new(&[m, n], target)?);
    let diff = tape.sub(target, theta)?;
    let c = tape.cos(diff);
    let l = tape.scale(c, -1.0);
    let l = tape.add_scalar(l, 1.0);
    tape.mean_axis(l, 1)
}

/// The combined loss over several blocks, each term averaged over the agents
/// it applies to. Like the score term, the orientation term sums over the
/// modes of an agent.
pub fn loss_from_blocks(tape: &mut Tape, blocks: &[LossBlock<'_>], cfg: &ModelConfig) -> Result<LossVars> {
    let k_modes = cfg.num_modes;
    let mut reg_terms = Vec::new();
    let mut score_terms = Vec::new();
    let mut yaw_terms = Vec::new();
    let mut n_agents = 0usize;
    let mut n_yaw = 0usize;

    for b in blocks {
        let n = b.agents.len();
        if tape.shape(b.traj) != [n, k_modes * TRAJ_DIM] || tape.shape(b.scores) != [n, k_modes] {
            return Err(Error::shape(
                "loss",
                alloc::format!("trajectories {:?}, scores {:?} for {n} agents", tape.shape(b.traj), tape.shape(b.scores)),
            ));
        }
        let rows: Vec<usize> = (0..n).filter(|&r| b.agents[r].future.is_some()).collect();
        if rows.is_empty() {
            continue;
        }
        let tv = tape.value(b.traj).clone();
        let winners: Vec<usize> = rows
            .iter()
            .map(|&r| winner_mode(tv.row(r), b.agents[r].future.as_ref().expect("filtered")))
            .collect();
        let widx: Vec<usize> = rows.iter().zip(&winners).map(|(&r, &k)| r * k_modes + k).collect();
        n_agents += rows.len();

        // regression on the winners only
        let flat = tape.reshape(b.traj, &[n * k_modes, TRAJ_DIM])?;
        let win = tape.gather_rows(flat, &widx)?;
        let gt: Vec<f64> = rows
            .iter()
            .flat_map(|&r| b.agents[r].future.expect("filtered").into_iter().flat_map(|p| [p.x, p.y]))
            .collect();
        let gt = tape.constant(Tensor::new(&[rows.len(), TRAJ_DIM], gt)?);
        let sl = tape.smooth_l1(win, gt, cfg.smooth_l1_beta)?;
        let s = tape.sum(sl);
        reg_terms.push(tape.scale(s, 1.0 / TRAJ_DIM as f64));

        // max-margin scoring
        let sflat = tape.reshape(b.scores, &[n * k_modes, 1])?;
        let sw = tape.gather_rows(sflat, &widx)?;
        let sg = tape.gather_rows(b.scores, &rows)?;
        let d = tape.sub(sg, sw)?;
        let d = tape.add_scalar(d, cfg.score_margin);
        let d = tape.relu(d);
        let mut mask = vec![1.0; rows.len() * k_modes];
        for (i, &k) in winners.iter().enumerate() {
            mask[i * k_modes + k] = 0.0;
        }
        let d = tape.mul_const(d, mask)?;
        score_terms.push(tape.sum(d));

        // orientation against the anchors
        let mut yrows = Vec::new();
        let mut starts = Vec::new();
        let mut yaws = Vec::new();
        let mut anchors = Vec::new();
        for (&r, &kw) in rows.iter().zip(&winners) {
            let a = &b.agents[r];
            let modes: Vec<usize> = match cfg.yaw_modes {
                YawModes::All => (0..k_modes).filter(|&k| a.mode_anchors.get(k).copied().flatten().is_some()).collect(),
                YawModes::Winner => a.mode_anchors.get(kw).copied().flatten().map(|_| kw).into_iter().collect(),
            };
            if modes.is_empty() {
                continue;
            }
            n_yaw += 1;
            for &k in &modes {
                yrows.push(r * k_modes + k);
                starts.push(a.position);
                yaws.push(a.yaw);
                anchors.push(a.mode_anchors[k].expect("filtered"));
            }
        }
        if !yrows.is_empty() {
            let x = tape.gather_rows(flat, &yrows)?;
            let l = yaw_loss_rows(tape, x, &starts, &yaws, &anchors)?;
            yaw_terms.push(tape.sum(l));
        }
    }
    if n_agents == 0 {
        return Err(Error::InvalidArgument("no agent has a ground-truth future".into()));
    }

    let mut combine = |terms: &[Var], count: usize| -> Result<Var> {
        if terms.is_empty() || count == 0 {
            return Ok(tape.constant(Tensor::full(&[1, 1], 0.0)));
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Ok(tape.scale(acc, 1.0 / count as f64))
    };
    let reg = combine(&reg_terms, n_agents)?;
    let score = combine(&score_terms, n_agents)?;
    let yaw = combine(&yaw_terms, n_yaw)?;
    let ws = tape.scale(score, cfg.w1);
    let wy = tape.scale(yaw, cfg.w2);
    let total = tape.add(reg, ws)?;
    let total = tape.add(total, wy)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        reg: tape.value(reg).item(),
        score: tape.value(score).item(),
        yaw: tape.value(yaw).item(),
        agents: n_agents,
        yaw_agents: n_yaw,
    };
    Ok(LossVars {
        total,
        reg,
        score,
        yaw,
        breakdown,
    })
}

/// Loss of a network output against the futures stored in the graph.
pub fn compute_loss(tape: &mut Tape, out: &Output, g: &HeteroGraph, cfg: &ModelConfig) -> Result<LossVars> {
    let blocks: Vec<LossBlock<'_>> = out
        .parts()
        .map(|p| LossBlock {
            traj: p.traj,
            scores: p.scores,
            agents: p
                .agents
                .iter()
                .zip(&p.anchor_slots)
                .map(|(&ai, slots)| {
                    let info = &g.agents[ai];
                    LossAgent {
                        future: info.future,
                        position: info.position,
                        yaw: info.yaw,
                        mode_anchors: slots.iter().map(|s| s.map(|j| &info.anchors[j])).collect(),
                    }
                })
                .collect(),
        })
        .collect();
    loss_from_blocks(tape, &blocks, cfg)
}
