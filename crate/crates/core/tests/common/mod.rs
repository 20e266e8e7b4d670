//! Straight-line fp64 re-implementation of the classifier, written without
//! any of the engine's kernels, plus small random helpers.
#![allow(dead_code, clippy::needless_range_loop)]

use mambalite::{ClassifierConfig, ClassifierParams, MambaBlockParams, Pooling, Tensor};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng64 = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Rng64 {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn randn(rng: &mut Rng64, shape: &[usize], std: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal) * std)
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Row-major f64 matrix.
#[derive(Clone, Debug)]
pub struct M {
    pub rows: usize,
    pub cols: usize,
    pub v: Vec<f64>,
}

impl M {
    pub fn of(t: &Tensor) -> M {
        let shape = t.shape();
        let cols = *shape.last().unwrap();
        M {
            rows: t.numel() / cols,
            cols,
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    fn zeros(rows: usize, cols: usize) -> M {
        M {
            rows,
            cols,
            v: vec![0.0; rows * cols],
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.v[r * self.cols + c]
    }
}

fn vec64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

/// x (L x in) times w^T (out x in) plus b.
fn dense(x: &M, w: &Tensor, b: Option<&Tensor>) -> M {
    let w = M::of(w);
    let b = b.map(vec64);
    let mut out = M::zeros(x.rows, w.rows);
    for r in 0..x.rows {
        for o in 0..w.rows {
            let mut s = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..x.cols {
                s += x.at(r, i) * w.at(o, i);
            }
            out.v[r * w.rows + o] = s;
        }
    }
    out
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// fp64 Mamba layer on an already-projected `L x d_model` input.
pub fn mamba_f64(p: &MambaBlockParams, x: &M) -> M {
    let len = x.rows;
    let di = p.conv_w.shape()[0];
    let k = p.conv_w.shape()[1];
    let n = p.a.shape()[1];
    let rank = p.w_dt.shape()[1];
    let xz = dense(x, &p.w_in, None);
    let conv_w = M::of(&p.conv_w);
    let conv_b = vec64(&p.conv_b);

    // causal depthwise conv then SiLU
    let mut xs = M::zeros(len, di);
    for t in 0..len {
        for c in 0..di {
            let mut s = conv_b[c];
            for j in 0..k {
                // tap j sees input time t - (k - 1 - j)
                let back = k - 1 - j;
                if t >= back {
                    s += conv_w.at(c, j) * xz.at(t - back, c);
                }
            }
            xs.v[t * di + c] = silu(s);
        }
    }

    let proj = dense(&xs, &p.w_xproj, None);
    let mut dt_in = M::zeros(len, rank);
    for t in 0..len {
        for r in 0..rank {
            dt_in.v[t * rank + r] = proj.at(t, r);
        }
    }
    let mut delta = dense(&dt_in, &p.w_dt, Some(&p.b_dt));
    delta.v.iter_mut().for_each(|v| *v = softplus(*v));

    let a = M::of(&p.a);
    let d_skip = vec64(&p.d_skip);
    let mut h = vec![0.0f64; di * n];
    let mut gated = M::zeros(len, di);
    for t in 0..len {
        for c in 0..di {
            let dl = delta.at(t, c);
            let u = xs.at(t, c);
            let mut y = 0.0;
            for s in 0..n {
                let bt = proj.at(t, rank + s);
                let ct = proj.at(t, rank + n + s);
                let hs = &mut h[c * n + s];
                *hs = (dl * a.at(c, s)).exp() * *hs + dl * bt * u;
                y += *hs * ct;
            }
            y += d_skip[c] * u;
            gated.v[t * di + c] = y * silu(xz.at(t, di + c));
        }
    }
    dense(&gated, &p.w_out, None)
}

pub struct Trace64 {
    pub block_out: M,
    pub logits: Vec<f64>,
}

/// fp64 classifier on one `L x input_dim` sample.
pub fn classifier_f64(cfg: &ClassifierConfig, p: &ClassifierParams, x: &Tensor) -> Trace64 {
    let hidden = dense(&M::of(x), &p.w_proj, Some(&p.b_proj));
    let block_out = mamba_f64(&p.block, &hidden);
    let dm = block_out.cols;
    let pooled: Vec<f64> = (0..dm)
        .map(|c| {
            let col = (0..block_out.rows).map(|t| block_out.at(t, c));
            match cfg.pooling {
                Pooling::Mean => col.sum::<f64>() / block_out.rows as f64,
                Pooling::Max => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let pooled = M {
        rows: 1,
        cols: dm,
        v: pooled,
    };
    let logits = dense(&pooled, &p.w_head, Some(&p.b_head)).v;
    Trace64 { block_out, logits }
}

/// Max and mean absolute difference between an engine tensor and an fp64 oracle.
pub fn abs_err(got: &[f32], want: &[f64]) -> (f64, f64) {
    assert_eq!(got.len(), want.len());
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for (&g, &w) in got.iter().zip(want) {
        let d = (g as f64 - w).abs();
        max = max.max(d);
        sum += d;
    }
    (max, sum / got.len() as f64)
}
