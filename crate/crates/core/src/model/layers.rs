//! Building blocks: dense layers and the two message-passing layers.
//!
//! eGCN, per destination node `i`:
//!
//! ```text
//! m_ji = relu(W_m · [h_j, e_ji] + b_m)
//! a_i  = mean_j m_ji
//! h_i' = h_i + relu(W_u · [h_i, a_i] + b_u)      (h_i' = h_i without incoming edges)
//! ```
//!
//! GATv2 with `H` heads of width `d`:
//!
//! ```text
//! s_ji^h = a_h · leaky_relu(W · [h_i, h_j, e_ji])_h
//! α_ji^h = softmax over incoming edges of i
//! h_i'   = h_i + concat_h Σ_j α_ji^h · (W_v · [h_j, e_ji])_h
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_linear_weight(&format!("{name}.w"), fan_in, fan_out, rng);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let b = store.add_uniform(&format!("{name}.b"), &[fan_out], bound, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// `Linear → ReLU → Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], rng),
            l2: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.l2.forward(tape, store, h)
    }
}

/// Edges of one kind, with already embedded features.
#[derive(Debug, Clone, Copy)]
pub struct EdgeBatch<'a> {
    pub src: &'a [usize],
    pub dst: &'a [usize],
    /// `[E, edge_dim]`.
    pub feat: Var,
    pub n_dst: usize,
}

impl EdgeBatch<'_> {
    fn check(&self, tape: &Tape, h_src: Var, h_dst: Var) -> Result<()> {
        let e = self.src.len();
        if self.dst.len() != e || tape.shape(self.feat).first() != Some(&e) {
            return Err(Error::shape("edges", format!("{} src, {} dst, features {:?}", e, self.dst.len(), tape.shape(self.feat))));
        }
        if tape.shape(h_dst).first() != Some(&self.n_dst) {
            return Err(Error::shape("edges", "destination count"));
        }
        let n_src = tape.shape(h_src)[0];
        if self.src.iter().any(|&s| s >= n_src) || self.dst.iter().any(|&d| d >= self.n_dst) {
            return Err(Error::shape("edges", "endpoint out of range"));
        }
        Ok(())
    }

    fn has_incoming(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_dst];
        for &d in self.dst {
            m[d] = 1.0;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Egcn {
    pub msg: Linear,
    pub upd: Linear,
}

impl Egcn {
    pub fn new(store: &mut ParamStore, name: &str, src_dim: usize, edge_dim: usize, dst_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            msg: Linear::new(store, &format!("{name}.msg"), src_dim + edge_dim, dst_dim, rng),
            upd: Linear::new(store, &format!("{name}.upd"), 2 * dst_dim, dst_dim, rng),
        }
    }

    /// The residual increment; zero rows for nodes without incoming edges.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, h_src: Var, h_dst: Var, edges: EdgeBatch<'_>) -> Result<Var> {
        edges.check(tape, h_src, h_dst)?;
        let hs = tape.gather_rows(h_src, edges.src)?;
        let x = tape.concat(&[hs, edges.feat], 1)?;
        let m = self.msg.forward(tape, store, x)?;
        let m = tape.relu(m);
        let agg = tape.scatter_mean(m, edges.dst, edges.n_dst)?;
        let x = tape.concat(&[h_dst, agg], 1)?;
        let u = self.upd.forward(tape, store, x)?;
        let u = tape.relu(u);
        let mask = tape.constant(Tensor {
            shape: vec![edges.n_dst, 1],
            data: edges.has_incoming(),
        });
        tape.mul(u, mask)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h_src: Var, h_dst: Var, edges: EdgeBatch<'_>) -> Result<Var> {
        let d = self.delta(tape, store, h_src, h_dst, edges)?;
        tape.add(h_dst, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gatv2 {
    pub w: Linear,
    pub a: ParamId,
    pub value: Linear,
    pub heads: usize,
    pub head_dim: usize,
    pub slope: f64,
}

impl Gatv2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        src_dim: usize,
        edge_dim: usize,
        dst_dim: usize,
        heads: usize,
        slope: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads > 0 && dst_dim % heads == 0, "dst_dim must split into heads");
        let head_dim = dst_dim / heads;
        Self {
            w: Linear::new(store, &format!("{name}.w"), dst_dim + src_dim + edge_dim, dst_dim, rng),
            a: store.add_uniform(&format!("{name}.a"), &[1, dst_dim], 1.0 / (head_dim as f64).sqrt(), rng),
            value: Linear::new(store, &format!("{name}.v"), src_dim + edge_dim, dst_dim, rng),
            heads,
            head_dim,
            slope,
        }
    }

    /// `[dst_dim, heads]` indicator of each head's block, or its transpose.
    fn head_blocks(&self, transpose: bool) -> Tensor {
        let d = self.heads * self.head_dim;
        let mut m = vec![0.0; d * self.heads];
        for c in 0..d {
            let h = c / self.head_dim;
            m[if transpose { h * d + c } else { c * self.heads + h }] = 1.0;
        }
        let shape = if transpose { vec![self.heads, d] } else { vec![d, self.heads] };
        Tensor { shape, data: m }
    }

    /// Attention weights `[E, heads]` and values `[E, dst_dim]`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, h_src: Var, h_dst: Var, edges: EdgeBatch<'_>) -> Result<(Var, Var)> {
        edges.check(tape, h_src, h_dst)?;
        let hj = tape.gather_rows(h_src, edges.src)?;
        let hi = tape.gather_rows(h_dst, edges.dst)?;
        let x = tape.concat(&[hi, hj, edges.feat], 1)?;
        let t = self.w.forward(tape, store, x)?;
        let t = tape.leaky_relu(t, self.slope);
        let a = tape.param(store, self.a);
        let ta = tape.mul(t, a)?;
        let hs = tape.constant(self.head_blocks(false));
        let scores = tape.matmul(ta, hs)?;
        let alpha = tape.scatter_softmax(scores, edges.dst, edges.n_dst)?;
        let xv = tape.concat(&[hj, edges.feat], 1)?;
        let v = self.value.forward(tape, store, xv)?;
        Ok((alpha, v))
    }

    /// The residual increment; zero rows for nodes without incoming edges.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, h_src: Var, h_dst: Var, edges: EdgeBatch<'_>) -> Result<Var> {
        let (alpha, v) = self.attention(tape, store, h_src, h_dst, edges)?;
        let expand = tape.constant(self.head_blocks(true));
        let a_full = tape.matmul(alpha, expand)?;
        let weighted = tape.mul(a_full, v)?;
        tape.scatter_sum(weighted, edges.dst, edges.n_dst)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h_src: Var, h_dst: Var, edges: EdgeBatch<'_>) -> Result<Var> {
        let d = self.delta(tape, store, h_src, h_dst, edges)?;
        tape.add(h_dst, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    struct Micro {
        hs: Tensor,
        hd: Tensor,
        ef: Tensor,
        src: Vec<usize>,
        dst: Vec<usize>,
    }

    fn micro(rng: &mut ChaCha8Rng) -> Micro {
        Micro {
            hs: rand_t(&[4, 6], rng),
            hd: rand_t(&[3, 8], rng),
            ef: rand_t(&[5, 3], rng),
            src: vec![0, 1, 3, 2, 1],
            dst: vec![0, 0, 1, 1, 1],
        }
    }

    fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
        let n = t.value(y).numel();
        let w = t.constant(Tensor::new(&t.value(y).shape.clone(), (0..n).map(|i| (i as f64 * 0.3).sin()).collect())?);
        let p = t.mul(y, w)?;
        Ok(t.sum(p))
    }

    #[test]
    fn egcn_without_edges_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let l = Egcn::new(&mut s, "e", 6, 3, 8, &mut rng);
        let m = micro(&mut rng);
        let mut t = Tape::new();
        let (hs, hd) = (t.constant(m.hs), t.constant(m.hd.clone()));
        let ef = t.constant(Tensor::zeros(&[0, 3]));
        let y = l
            .forward(&mut t, &s, hs, hd, EdgeBatch { src: &[], dst: &[], feat: ef, n_dst: 3 })
            .unwrap();
        assert_eq!(t.value(y), &m.hd);
    }

    #[test]
    fn egcn_mean_ignores_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let l = Egcn::new(&mut s, "e", 6, 3, 8, &mut rng);
        let m = micro(&mut rng);
        let run = |src: &[usize], dst: &[usize], rows: &[usize]| {
            let mut t = Tape::new();
            let (hs, hd) = (t.constant(m.hs.clone()), t.constant(m.hd.clone()));
            let f = t.constant(m.ef.clone());
            let f = t.gather_rows(f, rows).unwrap();
            let y = l.forward(&mut t, &s, hs, hd, EdgeBatch { src, dst, feat: f, n_dst: 3 }).unwrap();
            t.value(y).clone()
        };
        let once = run(&[2], &[1], &[0]);
        let twice = run(&[2, 2], &[1, 1], &[0, 0]);
        assert!(once.max_abs_diff(&twice) < 1e-15);
        // untouched rows keep their state
        assert_eq!(once.row(0), m.hd.row(0));
        assert_eq!(once.row(2), m.hd.row(2));
    }

    #[test]
    fn gat_attention_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let l = Gatv2::new(&mut s, "g", 6, 3, 8, 2, 0.2, &mut rng);
        let m = micro(&mut rng);
        let mut t = Tape::new();
        let (hs, hd) = (t.constant(m.hs.clone()), t.constant(m.hd.clone()));
        let f = t.constant(m.ef.clone());
        let single = t.slice(f, 0, 0, 1).unwrap();
        let (a, _) = l.attention(&mut t, &s, hs, hd, EdgeBatch { src: &[1], dst: &[2], feat: single, n_dst: 3 }).unwrap();
        assert_eq!(t.value(a).data, [1.0, 1.0]);
        let pair = t.gather_rows(f, &[4, 4]).unwrap();
        let (a, _) = l.attention(&mut t, &s, hs, hd, EdgeBatch { src: &[0, 0], dst: &[1, 1], feat: pair, n_dst: 3 }).unwrap();
        assert_eq!(t.value(a).data, [0.5, 0.5, 0.5, 0.5]);
        let empty = t.constant(Tensor::zeros(&[0, 3]));
        let y = l.forward(&mut t, &s, hs, hd, EdgeBatch { src: &[], dst: &[], feat: empty, n_dst: 3 }).unwrap();
        assert_eq!(t.value(y), &m.hd);
    }

    #[test]
    fn layers_pass_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let e = Egcn::new(&mut s, "e", 6, 3, 8, &mut rng);
        let g = Gatv2::new(&mut s, "g", 6, 3, 8, 2, 0.2, &mut rng);
        let m = micro(&mut rng);
        let report = grad_check_params(&s, 1e-5, None, 0, |t, s| {
            let (hs, hd) = (t.constant(m.hs.clone()), t.constant(m.hd.clone()));
            let f = t.constant(m.ef.clone());
            let eb = EdgeBatch { src: &m.src, dst: &m.dst, feat: f, n_dst: 3 };
            let y1 = e.forward(t, s, hs, hd, eb)?;
            let y2 = g.forward(t, s, hs, y1, eb)?;
            weighted_sum(t, y2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn bad_edges_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let e = Egcn::new(&mut s, "e", 6, 3, 8, &mut rng);
        let m = micro(&mut rng);
        let mut t = Tape::new();
        let (hs, hd) = (t.constant(m.hs), t.constant(m.hd));
        let f = t.constant(m.ef);
        let eb = EdgeBatch { src: &[9, 0, 0, 0, 0], dst: &m.dst, feat: f, n_dst: 3 };
        assert!(e.forward(&mut t, &s, hs, hd, eb).is_err());
    }
}
