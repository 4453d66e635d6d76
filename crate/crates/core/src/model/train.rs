//! Training loop with gradient accumulation over scenes.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{compute_loss, LossBreakdown};
use super::network::{Network, Prediction};
use crate::autodiff::{Adam, AdamConfig, LrSchedule, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            schedule: LrSchedule::default(),
            weight_decay: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's scenes, measured in training mode.
    pub loss: LossBreakdown,
    pub steps: u64,
}

/// Trains `net` on `graphs`. `on_epoch` sees every log row and may stop
/// training early by returning `false`.
pub fn train(
    net: &Network,
    store: &mut ParamStore,
    graphs: &[HeteroGraph],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore) -> bool,
) -> Result<Vec<EpochLog>> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.schedule.lr(1),
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        store,
    );
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        adam.set_lr(lr);
        order.shuffle(&mut order_rng);
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grad();
            for &i in batch {
                let mut tape = Tape::new();
                let out = net.forward(&mut tape, store, &graphs[i], true, &mut drop_rng)?;
                let l = compute_loss(&mut tape, &out, &graphs[i], &net.config)?;
                let b = l.breakdown;
                if !b.total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, scene {i}: reg {} score {} yaw {}",
                        b.reg, b.score, b.yaw
                    )));
                }
                tape.backward(l.total)?.accumulate(&tape, store);
                sum.total += b.total;
                sum.reg += b.reg;
                sum.score += b.score;
                sum.yaw += b.yaw;
                sum.agents += b.agents;
                sum.yaw_agents += b.yaw_agents;
            }
            store.scale_grads(1.0 / batch.len() as f64);
            adam.step(store)?;
        }
        let n = graphs.len() as f64;
        let log = EpochLog {
            epoch,
            lr,
            loss: LossBreakdown {
                total: sum.total / n,
                reg: sum.reg / n,
                score: sum.score / n,
                yaw: sum.yaw / n,
                ..sum
            },
            steps: adam.steps(),
        };
        logs.push(log);
        if !on_epoch(&log, store) {
            break;
        }
    }
    Ok(logs)
}

/// Eval-mode predictions for each graph.
pub fn predict(net: &Network, store: &ParamStore, graphs: &[HeteroGraph]) -> Result<Vec<Prediction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    graphs
        .iter()
        .map(|g| {
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, store, g, false, &mut rng)?;
            Ok(out.prediction(&tape, g))
        })
        .collect()
}

/// Eval-mode loss of one graph.
pub fn evaluate_loss(net: &Network, store: &ParamStore, g: &HeteroGraph) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, store, g, false, &mut rng)?;
    Ok(compute_loss(&mut tape, &out, g, &net.config)?.breakdown)
}
