//! Prediction metrics: minADE_k, minFDE_k, MR_{2,k} and the off-road rate.
//!
//! Top-k selection sorts modes by descending score; equal scores keep mode
//! order. An agent misses when its top-k modes all (default) or any deviate
//! more than [`MISS_THRESHOLD`] meters from the ground truth at some step.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::lane::LaneGraph;
use crate::model::Prediction;
use crate::scene::{AgentType, FUTURE_STEPS};

pub const MISS_THRESHOLD: f64 = 2.0;

pub type Trajectory = [Vec2; FUTURE_STEPS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissRule {
    /// A miss only if every top-k mode misses.
    #[default]
    All,
    /// A miss if any top-k mode misses.
    Any,
}

impl FromStr for MissRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MissRule::All),
            "any" => Ok(MissRule::Any),
            _ => Err(Error::InvalidArgument(format!("miss rule must be `all` or `any`, got `{s}`"))),
        }
    }
}

impl fmt::Display for MissRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissRule::All => "all",
            MissRule::Any => "any",
        })
    }
}

/// Indices of the `k` best-scored modes, best first.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} modes", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("mode score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    Ok(idx)
}

fn check(trajs: &[Trajectory], scores: &[f64]) -> Result<()> {
    if trajs.len() != scores.len() {
        return Err(Error::InvalidArgument(format!("{} trajectories, {} scores", trajs.len(), scores.len())));
    }
    Ok(())
}

pub fn ade(t: &Trajectory, gt: &Trajectory) -> f64 {
    t.iter().zip(gt).map(|(a, b)| a.dist(*b)).sum::<f64>() / FUTURE_STEPS as f64
}

pub fn fde(t: &Trajectory, gt: &Trajectory) -> f64 {
    t[FUTURE_STEPS - 1].dist(gt[FUTURE_STEPS - 1])
}

pub fn max_deviation(t: &Trajectory, gt: &Trajectory) -> f64 {
    t.iter().zip(gt).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max)
}

fn min_over(trajs: &[Trajectory], scores: &[f64], k: usize, f: impl Fn(&Trajectory) -> f64) -> Result<f64> {
    check(trajs, scores)?;
    Ok(top_k(scores, k)?.into_iter().map(|i| f(&trajs[i])).fold(f64::INFINITY, f64::min))
}

pub fn min_ade(trajs: &[Trajectory], scores: &[f64], gt: &Trajectory, k: usize) -> Result<f64> {
    min_over(trajs, scores, k, |t| ade(t, gt))
}

pub fn min_fde(trajs: &[Trajectory], scores: &[f64], gt: &Trajectory, k: usize) -> Result<f64> {
    min_over(trajs, scores, k, |t| fde(t, gt))
}

pub fn is_miss(trajs: &[Trajectory], scores: &[f64], gt: &Trajectory, k: usize, rule: MissRule) -> Result<bool> {
    check(trajs, scores)?;
    let mut misses = top_k(scores, k)?.into_iter().map(|i| max_deviation(&trajs[i], gt) > MISS_THRESHOLD);
    Ok(match rule {
        MissRule::All => misses.all(|m| m),
        MissRule::Any => misses.any(|m| m),
    })
}

/// Fraction of trajectories with at least one point off the drivable area.
/// Zero for an empty set.
pub fn offroad_rate<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>, lanes: &LaneGraph) -> f64 {
    let (mut off, mut n) = (0usize, 0usize);
    for t in trajs {
        n += 1;
        if t.iter().any(|&p| !lanes.is_on_drivable(p)) {
            off += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        off as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMetrics {
    pub agent_id: String,
    pub agent_type: AgentType,
    /// Per configured k.
    pub min_ade: Vec<f64>,
    pub min_fde: Vec<f64>,
    pub miss: Vec<bool>,
    /// Modes leaving the drivable area (road-bound agents only).
    pub offroad_modes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub min_ade: Vec<f64>,
    pub min_fde: Vec<f64>,
    pub miss_rate: Vec<f64>,
    /// Off-road rate over all modes of the evaluated road-bound agents.
    pub offroad_rate: f64,
    pub miss_rule: MissRule,
    pub agents: Vec<AgentMetrics>,
}

/// One scene's predictions with the ground truth of each predicted agent and
/// the lane graph in the same frame.
#[derive(Debug, Clone, Copy)]
pub struct EvalCase<'a> {
    pub prediction: &'a Prediction,
    /// Parallel to `prediction.agents`; agents without ground truth are skipped.
    pub ground_truth: &'a [Option<Trajectory>],
    pub lanes: &'a LaneGraph,
}

/// Aggregates metrics over every agent with ground truth.
pub fn evaluate(cases: &[EvalCase<'_>], ks: &[usize], rule: MissRule) -> Result<MetricReport> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values".into()));
    }
    let mut agents = Vec::new();
    let (mut off, mut modes) = (0usize, 0usize);
    for c in cases {
        if c.ground_truth.len() != c.prediction.agents.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ground-truth entries for {} predicted agents",
                c.ground_truth.len(),
                c.prediction.agents.len()
            )));
        }
        for (a, gt) in c.prediction.agents.iter().zip(c.ground_truth) {
            let Some(gt) = gt else { continue };
            let mut m = AgentMetrics {
                agent_id: a.agent_id.clone(),
                agent_type: a.agent_type,
                min_ade: Vec::with_capacity(ks.len()),
                min_fde: Vec::with_capacity(ks.len()),
                miss: Vec::with_capacity(ks.len()),
                offroad_modes: 0,
            };
            for &k in ks {
                m.min_ade.push(min_ade(&a.trajectories, &a.scores, gt, k)?);
                m.min_fde.push(min_fde(&a.trajectories, &a.scores, gt, k)?);
                m.miss.push(is_miss(&a.trajectories, &a.scores, gt, k, rule)?);
            }
            if a.agent_type == AgentType::RoadBound {
                m.offroad_modes = a.trajectories.iter().filter(|t| t.iter().any(|&p| !c.lanes.is_on_drivable(p))).count();
                off += m.offroad_modes;
                modes += a.trajectories.len();
            }
            agents.push(m);
        }
    }
    if agents.is_empty() {
        return Err(Error::InvalidArgument("no agent with ground truth to evaluate".into()));
    }
    let n = agents.len() as f64;
    let mean = |f: &dyn Fn(&AgentMetrics) -> f64| agents.iter().map(f).sum::<f64>() / n;
    let idx = 0..ks.len();
    Ok(MetricReport {
        ks: ks.to_vec(),
        min_ade: idx.clone().map(|i| mean(&|a| a.min_ade[i])).collect(),
        min_fde: idx.clone().map(|i| mean(&|a| a.min_fde[i])).collect(),
        miss_rate: idx.map(|i| mean(&|a| f64::from(u8::from(a.miss[i])))).collect(),
        offroad_rate: if modes == 0 { 0.0 } else { off as f64 / modes as f64 },
        miss_rule: rule,
        agents,
    })
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>10} {:>10} {:>10}", "k", "minADE", "minFDE", "MR_2")?;
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "{k:<6} {:>10.4} {:>10.4} {:>10.4}", self.min_ade[i], self.min_fde[i], self.miss_rate[i])?;
        }
        writeln!(f, "ORR    {:>10.4}", self.offroad_rate)?;
        write!(f, "agents {:>10}  (miss rule: {})", self.agents.len(), self.miss_rule)
    }
}
