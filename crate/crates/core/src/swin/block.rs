//! Windowed self-attention blocks and stacks of block pairs.

use std::cell::Cell;
use std::sync::Arc;

use super::window::{half_shift, BlockGeometry, WindowLayout};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::init::{trunc_normal, SeededRng, WEIGHT_STD};
use crate::tensor::{Tensor, Var};

pub const LN_EPS: f32 = 1e-5;

thread_local! {
    static ATTENTION_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates spent in `QKᵀ` and `AV` on this thread since the
/// last reset.
pub fn attention_macs() -> u64 {
    ATTENTION_MACS.with(Cell::get)
}

pub fn reset_attention_macs() {
    ATTENTION_MACS.with(|c| c.set(0));
}

/// Weight and bias of a dense layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), trunc_normal([fan_in, fan_out], WEIGHT_STD, rng))?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros([fan_out]))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.weight);
        let b = self.bias.map(|b| s.p(b));
        s.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.insert(format!("{name}.weight"), Tensor::ones([c]))?,
            beta: store.insert(format!("{name}.bias"), Tensor::zeros([c]))?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        s.layer_norm(x, g, b, LN_EPS)
    }
}

/// One transformer block: windowed attention and an MLP, each pre-normed and
/// residual.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub rel_table: ParamId,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub geometry: Arc<BlockGeometry>,
}

impl SwinBlock {
    pub fn new(store: &mut ParamStore, name: &str, geometry: Arc<BlockGeometry>, rng: &mut SeededRng) -> Result<Self> {
        let c = geometry.channels;
        let rows = geometry.layout.table_rows();
        Ok(SwinBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c)?,
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), c, 3 * c, true, rng)?,
            rel_table: store.insert(
                format!("{name}.attn.rel_pos_table"),
                Tensor::zeros([rows, geometry.heads]),
            )?,
            proj: Linear::new(store, &format!("{name}.attn.proj"), c, c, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c)?,
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), c, 2 * c, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), 2 * c, c, true, rng)?,
            geometry,
        })
    }

    /// Attention probabilities `(n_w, heads, N, N)` and the merged per-window
    /// output `(n_w, N, C)` before the output projection.
    pub fn attention_core(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let geo = &self.geometry;
        let (c, heads, d) = (geo.channels, geo.heads, geo.head_dim());
        let n = geo.layout.tokens_per_window();
        let n_w = geo.layout.num_windows();
        let xw = s.gather(x, vec![n_w, n, c], geo.partition.clone())?;
        let qkv = self.qkv.forward(s, xw)?;
        let q = s.gather(qkv, vec![n_w, heads, n, d], geo.q.clone())?;
        let q = s.scale(q, (d as f32).powf(-0.5));
        let kt = s.gather(qkv, vec![n_w, heads, d, n], geo.kt.clone())?;
        let v = s.gather(qkv, vec![n_w, heads, n, d], geo.v.clone())?;
        let scores = s.matmul(q, kt)?;
        let table = s.p(self.rel_table);
        let bias = s.gather(table, vec![heads, n, n], geo.bias.clone())?;
        let mut scores = s.add(scores, bias)?;
        if let Some(mask) = &geo.layout.mask {
            let m = s.constant(mask.clone());
            scores = s.add(scores, m)?;
        }
        let probs = s.softmax_lastdim(scores)?;
        let out = s.matmul(probs, v)?;
        ATTENTION_MACS.with(|m| m.set(m.get() + 2 * (n_w * heads * n * n * d) as u64));
        let merged = s.gather(out, vec![n_w, n, c], geo.merge_heads.clone())?;
        Ok((probs, merged))
    }

    /// Windowed multi-head attention on a `(T,H,W,C)` grid, shape preserving.
    pub fn attention(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (_, merged) = self.attention_core(s, x)?;
        let projected = self.proj.forward(s, merged)?;
        let shape = s.shape(x).to_vec();
        s.gather(projected, shape, self.geometry.reverse.clone())
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let expected = self.geometry.layout.grid;
        let shape = s.shape(x);
        if shape.len() != 4 || shape[..3] != expected || shape[3] != self.geometry.channels {
            return Err(Error::shape(
                "swin_block",
                format!("input {:?} vs grid {expected:?} with {} channels", shape, self.geometry.channels),
            ));
        }
        let h = self.norm1.forward(s, x)?;
        let a = self.attention(s, h)?;
        let x = s.add(x, a)?;
        let h = self.norm2.forward(s, x)?;
        let h = self.fc1.forward(s, h)?;
        let h = s.gelu(h);
        let h = self.fc2.forward(s, h)?;
        s.add(x, h)
    }
}

/// A run of block pairs at one resolution; the second block of every pair
/// uses the half-window shift.
#[derive(Debug, Clone)]
pub struct SwinStage {
    pub blocks: Vec<SwinBlock>,
}

impl SwinStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        grid: [usize; 3],
        channels: usize,
        heads: usize,
        window: [usize; 3],
        pairs: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let plain = Arc::new(BlockGeometry::new(WindowLayout::new(grid, window, [0; 3])?, channels, heads)?);
        let shifted = Arc::new(BlockGeometry::new(
            WindowLayout::new(grid, window, half_shift(window))?,
            channels,
            heads,
        )?);
        let mut blocks = Vec::with_capacity(2 * pairs);
        for p in 0..pairs {
            for (b, geo) in [&plain, &shifted].into_iter().enumerate() {
                blocks.push(SwinBlock::new(
                    store,
                    &format!("{name}.pair.{p}.block.{b}"),
                    geo.clone(),
                    rng,
                )?);
            }
        }
        Ok(SwinStage { blocks })
    }

    pub fn forward(&self, s: &mut Session, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(s, x)?;
        }
        Ok(x)
    }
}
