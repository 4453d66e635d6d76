//! Convolutional map autoencoder.
//!
//! Encoder: six `conv(k=4, s=2) → batchnorm → leaky_relu` blocks taking a
//! `10×128×128` patch down to `C×1×1` (the last block has no padding and maps
//! 4×4 to 1×1). Decoder: the mirror image with transposed convolutions,
//! batchnorm and ReLU, and a final transposed convolution with bias and tanh.
//! Targets are the binary masks mapped to {−1, +1}.
//!
//! Batchnorm running statistics are cumulative averages of the batch
//! statistics seen in training, stored as non-trainable buffers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{Adam, AdamConfig, BatchStats, BnMode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lane::{RASTER_CHANNELS, RASTER_SIZE};

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    pub in_channels: usize,
    pub size: usize,
    /// Encoder output channels per block; the last entry is the latent size.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            in_channels: RASTER_CHANNELS,
            size: RASTER_SIZE,
            channels: vec![16, 32, 64, 128, 128, 128],
            kernel: 4,
            leaky_slope: 0.2,
        }
    }
}

impl AutoencoderConfig {
    /// Spatial size after each encoder block; the last must be 1.
    fn sizes(&self) -> Result<Vec<usize>> {
        let n = self.channels.len();
        if n == 0 || self.kernel < 2 {
            return Err(Error::InvalidArgument("autoencoder needs at least one block".into()));
        }
        let mut s = self.size;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let pad = if i + 1 == n { 0 } else { 1 };
            let span = (s + 2 * pad)
                .checked_sub(self.kernel)
                .ok_or_else(|| Error::InvalidArgument(format!("patch size {} too small for {n} blocks", self.size)))?;
            s = span / 2 + 1;
            out.push(s);
        }
        if s != 1 {
            return Err(Error::InvalidArgument(format!("encoder ends at {s}x{s}, expected 1x1")));
        }
        Ok(out)
    }

    pub fn latent_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
    batches: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
            batches: store.add_buffer(&format!("{name}.batches"), Tensor::zeros(&[1])),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, train: bool, stats: &mut Vec<(Norm, BatchStats)>) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let mode = if train {
            BnMode::Train
        } else {
            BnMode::Eval {
                mean: &store.value(self.mean).data,
                var: &store.value(self.var).data,
            }
        };
        let (y, s) = tape.batchnorm2d(x, g, b, mode)?;
        if let Some(s) = s {
            stats.push((*self, s));
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    w: ParamId,
    norm: Option<Norm>,
    bias: Option<ParamId>,
    pad: usize,
}

/// Batchnorm statistics gathered during a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct BnUpdates(Vec<(Norm, BatchStats)>);

impl BnUpdates {
    /// Folds the batch statistics into the running buffers.
    pub fn apply(self, store: &mut ParamStore) {
        for (n, s) in self.0 {
            let k = store.value(n.batches).data[0] + 1.0;
            store.value_mut(n.batches).data[0] = k;
            for (r, b) in store.value_mut(n.mean).data.iter_mut().zip(&s.mean) {
                *r += (b - *r) / k;
            }
            for (r, b) in store.value_mut(n.var).data.iter_mut().zip(&s.var) {
                *r += (b - *r) / k;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapAutoencoder {
    pub config: AutoencoderConfig,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
}

impl MapAutoencoder {
    pub fn new(config: AutoencoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.sizes()?;
        let k = config.kernel;
        let n = config.channels.len();
        let mut chans = vec![config.in_channels];
        chans.extend_from_slice(&config.channels);
        let mut encoder = Vec::with_capacity(n);
        for i in 0..n {
            let (ci, co) = (chans[i], chans[i + 1]);
            let bound = (6.0 / ((ci * k * k) as f64)).sqrt();
            encoder.push(Block {
                w: store.add_uniform(&format!("ae.enc{i}.w"), &[co, ci, k, k], bound, rng),
                norm: Some(Norm::new(store, &format!("ae.enc{i}.bn"), co)),
                bias: None,
                pad: if i + 1 == n { 0 } else { 1 },
            });
        }
        let mut decoder = Vec::with_capacity(n);
        for i in 0..n {
            // mirror: block i maps chans[n - i] -> chans[n - i - 1]
            let (ci, co) = (chans[n - i], chans[n - i - 1]);
            let last = i + 1 == n;
            let bound = (6.0 / ((ci * k * k) as f64 / 4.0)).sqrt().min(1.0);
            decoder.push(Block {
                w: store.add_uniform(&format!("ae.dec{i}.w"), &[ci, co, k, k], bound, rng),
                norm: (!last).then(|| Norm::new(store, &format!("ae.dec{i}.bn"), co)),
                bias: last.then(|| store.add(&format!("ae.dec{i}.b"), Tensor::zeros(&[co]))),
                pad: if i == 0 { 0 } else { 1 },
            });
        }
        Ok(Self { config, encoder, decoder })
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<usize> {
        let s = tape.shape(x);
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.size || s[3] != c.size {
            return Err(Error::shape(
                "autoencoder",
                format!("expected [N, {}, {}, {}], got {s:?}", c.in_channels, c.size, c.size),
            ));
        }
        Ok(s[0])
    }

    /// Latent codes `[N, latent_dim]` for patches `[N, C, S, S]`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var, train: bool, updates: &mut BnUpdates) -> Result<Var> {
        let n = self.check_input(tape, x)?;
        let mut h = x;
        for b in &self.encoder {
            let w = tape.param(store, b.w);
            h = tape.conv2d(h, w, 2, b.pad)?;
            if let Some(norm) = b.norm {
                h = norm.apply(tape, store, h, train, &mut updates.0)?;
            }
            h = tape.leaky_relu(h, self.config.leaky_slope);
        }
        tape.reshape(h, &[n, self.config.latent_dim()])
    }

    /// Reconstruction `[N, C, S, S]` in (−1, 1) from latents `[N, latent_dim]`.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var, train: bool, updates: &mut BnUpdates) -> Result<Var> {
        let (n, d) = tape.value(z).expect_2d("decode")?;
        if d != self.config.latent_dim() {
            return Err(Error::shape("decode", format!("latent of {d}, expected {}", self.config.latent_dim())));
        }
        let mut h = tape.reshape(z, &[n, d, 1, 1])?;
        for b in &self.decoder {
            let w = tape.param(store, b.w);
            h = tape.deconv2d(h, w, 2, b.pad)?;
            if let Some(norm) = b.norm {
                h = norm.apply(tape, store, h, train, &mut updates.0)?;
                h = tape.relu(h);
            }
            if let Some(bias) = b.bias {
                let bv = tape.param(store, bias);
                h = tape.channel_bias(h, bv)?;
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Encodes signed patches (each `C·S·S` values) in eval mode.
    pub fn encode_patches(&self, store: &ParamStore, patches: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(self.stack(patches)?);
        let z = self.encode(&mut tape, store, x, false, &mut BnUpdates::default())?;
        let d = self.config.latent_dim();
        Ok(tape.value(z).data.chunks(d).map(<[f64]>::to_vec).collect())
    }

    fn stack(&self, patches: &[&[f64]]) -> Result<Tensor> {
        let c = &self.config;
        let per = c.in_channels * c.size * c.size;
        if let Some(p) = patches.iter().find(|p| p.len() != per) {
            return Err(Error::shape("autoencoder", format!("patch of {} values, expected {per}", p.len())));
        }
        let data = patches.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor::new(&[patches.len(), c.in_channels, c.size, c.size], data)
    }

    /// Recomputes the batchnorm running statistics as the average batch
    /// statistics of one training-mode pass over `patches` with the current
    /// weights.
    pub fn recalibrate_batchnorm(&self, store: &mut ParamStore, patches: &[&[f64]], batch: usize) -> Result<()> {
        let chunks: Vec<&[&[f64]]> = patches.chunks(batch.max(2)).filter(|c| c.len() >= 2).collect();
        if chunks.is_empty() {
            return Err(Error::InvalidArgument("batchnorm needs batches of at least 2 patches".into()));
        }
        for b in self.encoder.iter().chain(&self.decoder) {
            if let Some(n) = b.norm {
                store.value_mut(n.batches).data[0] = 0.0;
            }
        }
        for chunk in chunks {
            let mut tape = Tape::new();
            let x = tape.constant(self.stack(chunk)?);
            let mut up = BnUpdates::default();
            let z = self.encode(&mut tape, store, x, true, &mut up)?;
            self.decode(&mut tape, store, z, true, &mut up)?;
            up.apply(store);
        }
        Ok(())
    }

    /// Mean squared reconstruction error of each batch element set, eval mode.
    pub fn reconstruction_mse(&self, store: &ParamStore, patches: &[&[f64]], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in patches.chunks(batch.max(1)) {
            let mut tape = Tape::new();
            let x = tape.constant(self.stack(chunk)?);
            let mut up = BnUpdates::default();
            let z = self.encode(&mut tape, store, x, false, &mut up)?;
            let y = self.decode(&mut tape, store, z, false, &mut up)?;
            total += tape
                .value(y)
                .data
                .iter()
                .zip(&tape.value(x).data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += tape.value(x).numel();
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AutoencoderTraining {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 2e-4,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Trains on signed patches with an MSE loss; returns the mean training loss
/// per epoch. A callback receives `(epoch, loss)` after each epoch. Batchnorm
/// statistics are recalibrated on the final weights before returning.
pub fn train_autoencoder(
    ae: &MapAutoencoder,
    store: &mut ParamStore,
    patches: &[Vec<f64>],
    cfg: &AutoencoderTraining,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("no training patches".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidArgument("batchnorm needs batches of at least 2 patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        store,
    );
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| patches[i].as_slice()).collect();
            let mut tape = Tape::new();
            let x = tape.constant(ae.stack(&refs)?);
            let mut up = BnUpdates::default();
            let z = ae.encode(&mut tape, store, x, true, &mut up)?;
            let y = ae.decode(&mut tape, store, z, true, &mut up)?;
            let d = tape.sub(y, x)?;
            let sq = tape.mul(d, d)?;
            let loss = tape.mean(sq);
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            store.zero_grad();
            tape.backward(loss)?.accumulate(&tape, store);
            adam.step(store)?;
            up.apply(store);
            sum += lv;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    let refs: Vec<&[f64]> = patches.iter().map(Vec::as_slice).collect();
    ae.recalibrate_batchnorm(store, &refs, cfg.batch_size)?;
    Ok(curve)
}

/// MSE on `test` of the constant predictor that outputs each channel's mean
/// value over `train`.
pub fn channel_mean_baseline(train: &[&[f64]], test: &[&[f64]], channels: usize) -> Result<f64> {
    let len = train.first().or(test.first()).map_or(0, |p| p.len());
    if train.is_empty() || test.is_empty() || channels == 0 || len % channels != 0 {
        return Err(Error::InvalidArgument("baseline needs non-empty patch sets split into channels".into()));
    }
    if train.iter().chain(test).any(|p| p.len() != len) {
        return Err(Error::InvalidArgument("patches differ in size".into()));
    }
    let per = len / channels;
    let mut mean = vec![0.0; channels];
    for p in train {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += p[c * per..(c + 1) * per].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= (train.len() * per) as f64;
    }
    let mut se = 0.0;
    for p in test {
        for (c, m) in mean.iter().enumerate() {
            se += p[c * per..(c + 1) * per].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    Ok(se / (test.len() * len) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;

    fn tiny() -> AutoencoderConfig {
        AutoencoderConfig {
            in_channels: 2,
            size: 8,
            channels: vec![3, 4],
            kernel: 4,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn baseline_of_known_channels() {
        // channel 0 is always +1, channel 1 is half +1 half -1
        let a = [1.0, 1.0, 1.0, -1.0];
        let b = [1.0, 1.0, -1.0, 1.0];
        let v = channel_mean_baseline(&[&a, &b], &[&a], 2).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
        assert!(channel_mean_baseline(&[], &[&a], 2).is_err());
        assert!(channel_mean_baseline(&[&a], &[&a], 3).is_err());
    }

    #[test]
    fn default_geometry() {
        let c = AutoencoderConfig::default();
        assert_eq!(c.sizes().unwrap(), [64, 32, 16, 8, 4, 1]);
        assert_eq!(c.latent_dim(), 128);
        let bad = AutoencoderConfig { size: 100, ..c };
        assert!(bad.sizes().is_err());
    }

    #[test]
    fn shapes_and_wrong_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let ae = MapAutoencoder::new(tiny(), &mut s, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[2, 2, 8, 8], -1.0));
        let mut up = BnUpdates::default();
        let z = ae.encode(&mut t, &s, x, true, &mut up).unwrap();
        assert_eq!(t.shape(z), [2, 4]);
        let y = ae.decode(&mut t, &s, z, true, &mut up).unwrap();
        assert_eq!(t.shape(y), [2, 2, 8, 8]);
        let wrong = t.constant(Tensor::zeros(&[1, 3, 8, 8]));
        assert!(ae.encode(&mut t, &s, wrong, false, &mut up).is_err());
    }

    #[test]
    fn gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let ae = MapAutoencoder::new(tiny(), &mut s, &mut rng).unwrap();
        let x: Vec<f64> = (0..3 * 2 * 64).map(|i| if (i * 7) % 5 < 2 { 1.0 } else { -1.0 }).collect();
        let xt = Tensor::new(&[3, 2, 8, 8], x).unwrap();
        let r = grad_check_params(&s, 1e-5, Some(12), 3, |t, s| {
            let xv = t.constant(xt.clone());
            let mut up = BnUpdates::default();
            let z = ae.encode(t, s, xv, true, &mut up)?;
            let y = ae.decode(t, s, z, true, &mut up)?;
            let d = t.sub(y, xv)?;
            let sq = t.mul(d, d)?;
            Ok(t.mean(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn learns_constant_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let ae = MapAutoencoder::new(tiny(), &mut s, &mut rng).unwrap();
        let zeros = vec![vec![-1.0; 2 * 64]; 8];
        let cfg = AutoencoderTraining {
            epochs: 200,
            batch_size: 4,
            lr: 1e-2,
            ..Default::default()
        };
        let curve = train_autoencoder(&ae, &mut s, &zeros, &cfg, |_, _| {}).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        let refs: Vec<&[f64]> = zeros.iter().map(Vec::as_slice).collect();
        let mse = ae.reconstruction_mse(&s, &refs, 4).unwrap();
        assert!(mse < 0.05, "{mse}");
    }

    #[test]
    fn running_stats_are_batch_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let ae = MapAutoencoder::new(tiny(), &mut s, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[2, 2, 8, 8], (0..256).map(|i| f64::from(i % 3) - 1.0).collect()).unwrap());
        let mut up = BnUpdates::default();
        ae.encode(&mut t, &s, x, true, &mut up).unwrap();
        let first = up.0[0].1.clone();
        up.apply(&mut s);
        let id = s.id("ae.enc0.bn.running_mean").unwrap();
        assert_eq!(s.value(id).data, first.mean);
    }
}
