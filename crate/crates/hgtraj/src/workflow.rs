//! End-to-end steps shared by the command line and the acceptance suite.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use hgtraj_core::autodiff::ParamStore;
use hgtraj_core::eval::{evaluate, EvalCase, MetricReport, MissRule, Trajectory};
use hgtraj_core::model::{
    channel_mean_baseline, predict, train, train_autoencoder, EpochLog, MapAutoencoder, Network, Prediction,
};
use hgtraj_core::pipeline::Sample;
use hgtraj_core::graph::HeteroGraph;
use hgtraj_core::Error;

use crate::config::RunConfig;

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, store.to_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ParamStore::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// A freshly initialized network for `cfg`, or one restored from `checkpoint`.
pub fn network(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Network, ParamStore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = Network::new(cfg.model_config()?, &mut store, &mut rng)?;
    if let Some(p) = checkpoint {
        store.load_from(&read_checkpoint(p)?)?;
    }
    Ok((net, store))
}

pub fn autoencoder(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(MapAutoencoder, ParamStore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let ae = MapAutoencoder::new(cfg.ae_config(), &mut store, &mut rng)?;
    if let Some(p) = checkpoint {
        store.load_from(&read_checkpoint(p)?)?;
    }
    Ok((ae, store))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub reg: f64,
    pub score: f64,
    pub yaw: f64,
    /// Training-set metrics at the largest configured k, when computed.
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub miss_rate: Option<f64>,
}

/// Trains on `samples`. With `out_dir` set, writes `train_log.csv`, periodic
/// `epoch_NNNN.ckpt` files and the final `model.ckpt`.
pub fn train_model(
    cfg: &RunConfig,
    samples: &[Sample],
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&LogRow),
) -> Result<(Network, ParamStore, Vec<LogRow>)> {
    let (net, mut store) = network(cfg, None)?;
    let graphs: Vec<HeteroGraph> = samples.iter().map(|s| s.graph.clone()).collect();
    let mut writer = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            Some(csv::Writer::from_path(d.join("train_log.csv"))?)
        }
        None => None,
    };
    let rule = cfg.miss_rule()?;
    let k_max = *cfg.eval.ks.iter().max().expect("validated non-empty");
    let mut rows = Vec::new();
    let mut failure: Option<anyhow::Error> = None;
    let tc = cfg.train_config();
    let on_epoch = |log: &EpochLog, store: &ParamStore| -> bool {
        let mut step = || -> Result<LogRow> {
            let mut row = LogRow {
                epoch: log.epoch,
                lr: log.lr,
                loss: log.loss.total,
                reg: log.loss.reg,
                score: log.loss.score,
                yaw: log.loss.yaw,
                min_ade: None,
                min_fde: None,
                miss_rate: None,
            };
            let every = cfg.train.eval_every;
            if every > 0 && (log.epoch % every == 0 || log.epoch == tc.epochs) {
                let preds = predict_graphs(&net, store, &graphs)?;
                let r = evaluate_samples(samples, &preds, &[k_max], rule)?;
                row.min_ade = Some(r.min_ade[0]);
                row.min_fde = Some(r.min_fde[0]);
                row.miss_rate = Some(r.miss_rate[0]);
            }
            if let Some(w) = writer.as_mut() {
                w.serialize(&row)?;
                w.flush()?;
            }
            if let Some(d) = out_dir {
                let every = cfg.train.checkpoint_every;
                if every > 0 && log.epoch % every == 0 {
                    save_checkpoint(store, &d.join(format!("epoch_{:04}.ckpt", log.epoch)))?;
                }
            }
            Ok(row)
        };
        match step() {
            Ok(row) => {
                progress(&row);
                rows.push(row);
                true
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    };
    train(&net, &mut store, &graphs, &tc, on_epoch)?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(d) = out_dir {
        save_checkpoint(&store, &d.join("model.ckpt"))?;
    }
    Ok((net, store, rows))
}

/// Eval-mode predictions, parallel across graphs.
pub fn predict_graphs(net: &Network, store: &ParamStore, graphs: &[HeteroGraph]) -> Result<Vec<Prediction>> {
    graphs
        .par_iter()
        .map(|g| Ok(predict(net, store, std::slice::from_ref(g))?.remove(0)))
        .collect()
}

/// Metrics of `preds` (parallel to `samples`) against the samples' futures.
/// Predicted agents are matched to scene agents by id.
pub fn evaluate_samples(samples: &[Sample], preds: &[Prediction], ks: &[usize], rule: MissRule) -> Result<MetricReport> {
    if samples.len() != preds.len() {
        bail!(Error::InvalidArgument(format!("{} predictions for {} scenes", preds.len(), samples.len())));
    }
    let mut gts: Vec<Vec<Option<Trajectory>>> = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let mut gt = Vec::with_capacity(p.agents.len());
        for a in &p.agents {
            let Some(info) = s.graph.agents.iter().find(|i| i.agent_id == a.agent_id) else {
                bail!(Error::InvalidArgument(format!("scene {}: unknown agent {}", s.scene_id, a.agent_id)));
            };
            gt.push(info.future);
        }
        gts.push(gt);
    }
    let cases: Vec<EvalCase<'_>> = samples
        .iter()
        .zip(preds)
        .zip(&gts)
        .map(|((s, p), gt)| EvalCase {
            prediction: p,
            ground_truth: gt,
            lanes: &s.lanes,
        })
        .collect();
    Ok(evaluate(&cases, ks, rule)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderRun {
    pub curve: Vec<f64>,
    pub held_out_mse: f64,
    /// MSE of predicting each channel's training mean on the held-out set.
    pub baseline_mse: f64,
}

/// Pre-trains the map autoencoder on `train_patches` and scores it on
/// `held_out`.
pub fn pretrain_autoencoder(
    cfg: &RunConfig,
    ae: &MapAutoencoder,
    store: &mut ParamStore,
    train_patches: &[Vec<f64>],
    held_out: &[Vec<f64>],
    on_epoch: impl FnMut(usize, f64),
) -> Result<AutoencoderRun> {
    let curve = train_autoencoder(ae, store, train_patches, &cfg.ae_training(), on_epoch)?;
    let tr: Vec<&[f64]> = train_patches.iter().map(Vec::as_slice).collect();
    let ho: Vec<&[f64]> = held_out.iter().map(Vec::as_slice).collect();
    let held_out_mse = ae.reconstruction_mse(store, &ho, cfg.autoencoder.batch_size)?;
    let baseline_mse = channel_mean_baseline(&tr, &ho, ae.config.in_channels)?;
    Ok(AutoencoderRun {
        curve,
        held_out_mse,
        baseline_mse,
    })
}
