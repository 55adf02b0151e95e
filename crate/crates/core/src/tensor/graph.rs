use std::sync::Arc;

use rayon::prelude::*;

use super::kernels::{self, broadcast_index, broadcast_shape};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Marks a gather slot that reads as zero (padding).
pub const GATHER_ZERO: u32 = u32::MAX;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: Var, b: Var, a_map: Option<Arc<[u32]>>, b_map: Option<Arc<[u32]>> },
    Sub { a: Var, b: Var, a_map: Option<Arc<[u32]>>, b_map: Option<Arc<[u32]>> },
    Mul { a: Var, b: Var, a_map: Option<Arc<[u32]>>, b_map: Option<Arc<[u32]>> },
    Scale { a: Var, s: f32 },
    MatMul { a: Var, b: Var, layout: MatLayout },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Clamp { a: Var, lo: f32, hi: f32 },
    Gather { a: Var, index: Arc<[u32]> },
    Reshape { a: Var },
    Concat { a: Var, b: Var, ca: usize, cb: usize },
    Sum { a: Var },
    Mean { a: Var },
    Mse { pred: Var, target: Arc<Tensor> },
    Dot { a: Var, weights: Arc<Tensor> },
}

#[derive(Debug, Clone, Copy)]
struct MatLayout {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations supporting one reverse pass.
///
/// Nodes are appended in creation order, which is a topological order, so
/// the backward pass simply walks the node list in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    backward_done: bool,
    visit_order: Vec<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise ---------------------------------------------------

    fn broadcast_pair(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(Vec<usize>, Option<Arc<[u32]>>, Option<Arc<[u32]>>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(op, format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let map = |s: &[usize]| -> Option<Arc<[u32]>> {
            if s == out.as_slice() {
                None
            } else {
                Some(broadcast_index(&out, s).into())
            }
        };
        Ok((out.clone(), map(sa), map(sb)))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<(Tensor, Option<Arc<[u32]>>, Option<Arc<[u32]>>)> {
        let (shape, a_map, b_map) = self.broadcast_pair(op, a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = numel(&shape);
        let get = |d: &[f32], m: &Option<Arc<[u32]>>, i: usize| match m {
            None => d[i],
            Some(m) => d[m[i] as usize],
        };
        let data: Vec<f32> = (0..n)
            .map(|i| f(get(va, &a_map, i), get(vb, &b_map, i)))
            .collect();
        Ok((Tensor { shape, data }, a_map, b_map))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a_map, b_map) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a, b, a_map, b_map }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a_map, b_map) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub { a, b, a_map, b_map }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a_map, b_map) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul { a, b, a_map, b_map }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale { a, s }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::gelu);
        let rg = self.rg(&[a]);
        self.push(t, Op::Gelu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid { a }, rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let t = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(t, Op::Clamp { a, lo, hi }, rg)
    }

    // ---- linear algebra -------------------------------------------------

    /// Matrix product over the last two axes.
    ///
    /// Leading (batch) axes must either match exactly or be absent on one
    /// side, in which case that operand is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (batch_shape, a_batched, b_batched) = match (ba.is_empty(), bb.is_empty()) {
            (_, true) => (ba.to_vec(), !ba.is_empty(), false),
            (true, false) => (bb.to_vec(), false, true),
            (false, false) if ba == bb => (ba.to_vec(), true, true),
            _ => return Err(mismatch()),
        };
        let batch = numel(&batch_shape);
        let layout = MatLayout {
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
        };
        let data = matmul_forward(self.value(a).data(), self.value(b).data(), layout);
        let mut shape = batch_shape;
        shape.extend([m, n]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::MatMul { a, b, layout }, rg))
    }

    /// `x · w + bias` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ---- normalisation ---------------------------------------------------

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let c = *x.shape().last().unwrap();
        let mut out = vec![0.0f32; x.len()];
        for (src, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut total = 0.0f64;
            let exps: Vec<f64> = src
                .iter()
                .map(|&v| {
                    let e = (v as f64 - max).exp();
                    total += e;
                    e
                })
                .collect();
            for (d, e) in dst.iter_mut().zip(exps) {
                *d = (e / total) as f32;
            }
        }
        let t = Tensor {
            shape: x.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax { a }, rg))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let c = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} do not match channel dim of {:?}",
                    self.shape(gamma),
                    self.shape(beta),
                    self.shape(x)
                ),
            ));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / c;
        let mut xhat = vec![0.0f32; xv.len()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; xv.len()];
        for r in 0..rows {
            let src = &xv.data()[r * c..(r + 1) * c];
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            rstd[r] = rs as f32;
            for j in 0..c {
                let h = (src[j] as f64 - mean) * rs;
                xhat[r * c + j] = h as f32;
                out[r * c + j] = (h * g[j] as f64 + b[j] as f64) as f32;
            }
        }
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    // ---- data movement ------------------------------------------------------

    /// `out[i] = a[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    ///
    /// Every rearrangement in the crate (permute, roll, padding, window
    /// partition, patch shuffles) is expressed through this op, so a single
    /// scatter-add backward covers all of them.
    pub fn gather(&mut self, a: Var, shape: Vec<usize>, index: Arc<[u32]>) -> Result<Var> {
        if numel(&shape) != index.len() {
            return Err(Error::shape(
                "gather",
                format!("index of length {} for shape {shape:?}", index.len()),
            ));
        }
        let src = self.value(a).data();
        if let Some(&bad) = index
            .iter()
            .find(|&&i| i != GATHER_ZERO && i as usize >= src.len())
        {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {} elements", src.len()),
            ));
        }
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i as usize] })
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Gather { a, index }, rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let (shape, index) = kernels::permute_index(self.shape(a), axes)?;
        self.gather(a, shape, index.into())
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r}")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// Cyclic shift of the first three axes; `roll3d(roll3d(x, s), -s) == x`.
    pub fn roll3d(&mut self, a: Var, shifts: [isize; 3]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let index = roll3d_index(&shape, shifts)?;
        self.gather(a, shape, index.into())
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Concatenation along the last axis.
    pub fn concat_lastdim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat", format!("{sa:?} with {sb:?}")));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.chunks(ca).zip(vb.chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Concat { a, b, ca, cb }, rg))
    }

    /// Transposed 3D convolution over a `(T, H, W, C_in)` grid.
    ///
    /// Only non-overlapping upsampling (kernel extent equal to stride) and the
    /// pointwise `1×1×1` case are supported. The kernel is laid out as
    /// `(k_t, k_h, k_w, C_in, C_out)`.
    pub fn conv3d_transpose(&mut self, x: Var, kernel: Var, stride: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 5 || ks[3] != xs[3] {
            return Err(Error::shape(
                "conv3d_transpose",
                format!("input {xs:?} with kernel {ks:?}"),
            ));
        }
        let kext = [ks[0], ks[1], ks[2]];
        if kext != stride && kext != [1, 1, 1] {
            return Err(Error::Config(format!(
                "conv3d_transpose supports kernel == stride or 1x1x1 only, got kernel {kext:?} stride {stride:?}"
            )));
        }
        if kext == [1, 1, 1] && stride != [1, 1, 1] {
            return Err(Error::Config(format!(
                "conv3d_transpose: 1x1x1 kernel with stride {stride:?} is unsupported"
            )));
        }
        let (t, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[4];
        let patch = kext[0] * kext[1] * kext[2];
        // kernel (a,b,c,i,o) -> (i, (a,b,c,o))
        let kmat = self.permute(kernel, &[3, 0, 1, 2, 4])?;
        let kmat = self.reshape(kmat, [cin, patch * cout])?;
        let x2 = self.reshape(x, [t * h * w, cin])?;
        let z = self.matmul(x2, kmat)?;
        let out_shape = vec![t * kext[0], h * kext[1], w * kext[2], cout];
        let index = upsample_index([t, h, w], kext, cout);
        self.gather(z, out_shape, index.into())
    }

    // ---- reductions ------------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Mean { a }, rg)
    }

    /// `Σ a·weights` against constant weights of the same shape.
    pub fn dot_const(&mut self, a: Var, weights: Tensor) -> Result<Var> {
        if self.shape(a) != weights.shape() {
            return Err(Error::shape(
                "dot_const",
                format!("{:?} vs {:?}", self.shape(a), weights.shape()),
            ));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&x, &w)| x as f64 * w as f64)
            .sum();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::Dot {
                a,
                weights: Arc::new(weights),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let p = self.value(pred).data();
        let s: f64 = p
            .iter()
            .zip(target.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::Mse {
                pred,
                target: Arc::new(target.clone()),
            },
            rg,
        ))
    }

    // ---- backward ---------------------------------------------------------------

    /// Reverse pass from a scalar node.
    ///
    /// A graph supports exactly one backward pass; build a fresh graph (a new
    /// forward pass) before differentiating again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this graph; run a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        self.visit_order.clear();
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.visit_order.push(id);
            self.backprop_node(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Node ids in the order the last backward pass visited them.
    pub fn backward_order(&self) -> &[usize] {
        &self.visit_order
    }

    /// Gradient accumulated for `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref()).map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Moves the gradient buffer out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .map(|data| Tensor { shape, data })
    }

    fn accum(&mut self, v: Var, contribution: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reduces a gradient over the broadcast map back to the source shape.
    fn unbroadcast(&self, v: Var, g: Vec<f32>, map: &Option<Arc<[u32]>>) -> Vec<f32> {
        match map {
            None => g,
            Some(m) => {
                let mut acc = vec![0.0f64; self.value(v).len()];
                for (i, &gi) in g.iter().enumerate() {
                    acc[m[i] as usize] += gi as f64;
                }
                acc.into_iter().map(|x| x as f32).collect()
            }
        }
    }

    fn backprop_node(&mut self, id: usize, g: &[f32]) {
        // Take the op out temporarily so self can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add { a, b, a_map, b_map } | Op::Sub { a, b, a_map, b_map } => {
                let negate = matches!(op, Op::Sub { .. });
                if self.wants(*a) {
                    let ga = self.unbroadcast(*a, g.to_vec(), a_map);
                    self.accum(*a, ga);
                }
                if self.wants(*b) {
                    let gb: Vec<f32> = if negate {
                        g.iter().map(|v| -v).collect()
                    } else {
                        g.to_vec()
                    };
                    let gb = self.unbroadcast(*b, gb, b_map);
                    self.accum(*b, gb);
                }
            }
            Op::Mul { a, b, a_map, b_map } => {
                let pick = |d: &[f32], m: &Option<Arc<[u32]>>, i: usize| match m {
                    None => d[i],
                    Some(m) => d[m[i] as usize],
                };
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f32> = (0..g.len()).map(|i| g[i] * pick(vb, b_map, i)).collect();
                let gb: Vec<f32> = (0..g.len()).map(|i| g[i] * pick(va, a_map, i)).collect();
                if self.wants(*a) {
                    let ga = self.unbroadcast(*a, ga, a_map);
                    self.accum(*a, ga);
                }
                if self.wants(*b) {
                    let gb = self.unbroadcast(*b, gb, b_map);
                    self.accum(*b, gb);
                }
            }
            Op::Scale { a, s } => {
                let ga = g.iter().map(|v| v * s).collect();
                self.accum(*a, ga);
            }
            Op::MatMul { a, b, layout } => {
                let (ga, gb) = matmul_backward(
                    self.value(*a).data(),
                    self.value(*b).data(),
                    g,
                    *layout,
                    self.wants(*a),
                    self.wants(*b),
                );
                if let Some(ga) = ga {
                    self.accum(*a, ga);
                }
                if let Some(gb) = gb {
                    self.accum(*b, gb);
                }
            }
            Op::Softmax { a } => {
                let y = self.nodes[id].value.data();
                let c = *self.nodes[id].value.shape().last().unwrap();
                let mut ga = vec![0.0f32; y.len()];
                for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(&p, &q)| p as f64 * q as f64).sum();
                    for j in 0..c {
                        out[j] = (yr[j] as f64 * (gr[j] as f64 - dot)) as f32;
                    }
                }
                self.accum(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma).data().to_vec();
                let c = gv.len();
                let rows = xhat.len() / c;
                let mut gx = vec![0.0f32; xhat.len()];
                let mut gg = vec![0.0f64; c];
                let mut gb = vec![0.0f64; c];
                for r in 0..rows {
                    let xh = &xhat[r * c..(r + 1) * c];
                    let dy = &g[r * c..(r + 1) * c];
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    for j in 0..c {
                        let dyg = dy[j] as f64 * gv[j] as f64;
                        m1 += dyg;
                        m2 += dyg * xh[j] as f64;
                        gg[j] += dy[j] as f64 * xh[j] as f64;
                        gb[j] += dy[j] as f64;
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    let rs = rstd[r] as f64;
                    for j in 0..c {
                        let dyg = dy[j] as f64 * gv[j] as f64;
                        gx[r * c + j] = (rs * (dyg - m1 - xh[j] as f64 * m2)) as f32;
                    }
                }
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.accum(x, gx);
                self.accum(gamma, gg.into_iter().map(|v| v as f32).collect());
                self.accum(beta, gb.into_iter().map(|v| v as f32).collect());
            }
            Op::Gelu { a } => {
                let x = self.value(*a).data();
                let ga = x.iter().zip(g).map(|(&x, &d)| d * kernels::gelu_grad(x)).collect();
                self.accum(*a, ga);
            }
            Op::Sigmoid { a } => {
                let y = self.nodes[id].value.data();
                let ga = y.iter().zip(g).map(|(&y, &d)| d * y * (1.0 - y)).collect();
                self.accum(*a, ga);
            }
            Op::Clamp { a, lo, hi } => {
                let x = self.value(*a).data();
                let ga = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &d)| if x >= *lo && x <= *hi { d } else { 0.0 })
                    .collect();
                self.accum(*a, ga);
            }
            Op::Gather { a, index } => {
                if self.wants(*a) {
                    let mut acc = vec![0.0f64; self.value(*a).len()];
                    for (&i, &gi) in index.iter().zip(g) {
                        if i != GATHER_ZERO {
                            acc[i as usize] += gi as f64;
                        }
                    }
                    self.accum(*a, acc.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::Reshape { a } => self.accum(*a, g.to_vec()),
            Op::Concat { a, b, ca, cb } => {
                let (ca, cb) = (*ca, *cb);
                let rows = g.len() / (ca + cb);
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in g.chunks(ca + cb) {
                    ga.extend_from_slice(&r[..ca]);
                    gb.extend_from_slice(&r[ca..]);
                }
                self.accum(*a, ga);
                self.accum(*b, gb);
            }
            Op::Sum { a } => {
                let n = self.value(*a).len();
                self.accum(*a, vec![g[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.value(*a).len();
                self.accum(*a, vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::Dot { a, weights } => {
                let ga = weights.data().iter().map(|&w| w * g[0]).collect();
                self.accum(*a, ga);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = 2.0 * g[0] as f64 / p.len() as f64;
                let ga = p
                    .iter()
                    .zip(target.data())
                    .map(|(&x, &y)| ((x as f64 - y as f64) * scale) as f32)
                    .collect();
                self.accum(*pred, ga);
            }
        }
        self.nodes[id].op = op;
    }
}

fn matmul_forward(a: &[f32], b: &[f32], l: MatLayout) -> Vec<f32> {
    let MatLayout {
        batch,
        m,
        k,
        n,
        a_batched,
        b_batched,
    } = l;
    if !b_batched {
        let rows = if a_batched { batch * m } else { m };
        return kernels::mm_nn(a, b, rows, k, n);
    }
    let chunks: Vec<Vec<f32>> = (0..batch)
        .into_par_iter()
        .map(|bi| {
            let ab = if a_batched { &a[bi * m * k..(bi + 1) * m * k] } else { a };
            let bb = &b[bi * k * n..(bi + 1) * k * n];
            kernels::mm_nn(ab, bb, m, k, n)
        })
        .collect();
    chunks.concat()
}

fn matmul_backward(
    a: &[f32],
    b: &[f32],
    g: &[f32],
    l: MatLayout,
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let MatLayout {
        batch,
        m,
        k,
        n,
        a_batched,
        b_batched,
    } = l;
    if !b_batched {
        let rows = if a_batched { batch * m } else { m };
        let ga = want_a.then(|| kernels::mm_nt(g, b, rows, n, k));
        let gb = want_b.then(|| kernels::mm_tn(a, g, rows, k, n));
        return (ga, gb);
    }
    let per: Vec<(Vec<f32>, Vec<f32>)> = (0..batch)
        .into_par_iter()
        .map(|bi| {
            let ab = if a_batched { &a[bi * m * k..(bi + 1) * m * k] } else { a };
            let bb = &b[bi * k * n..(bi + 1) * k * n];
            let gc = &g[bi * m * n..(bi + 1) * m * n];
            let ga = if want_a { kernels::mm_nt(gc, bb, m, n, k) } else { Vec::new() };
            let gb = if want_b { kernels::mm_tn(ab, gc, m, k, n) } else { Vec::new() };
            (ga, gb)
        })
        .collect();
    let ga = want_a.then(|| {
        if a_batched {
            per.iter().flat_map(|(ga, _)| ga.iter().copied()).collect()
        } else {
            let mut acc = vec![0.0f64; m * k];
            for (ga, _) in &per {
                for (s, &v) in acc.iter_mut().zip(ga) {
                    *s += v as f64;
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        }
    });
    let gb = want_b.then(|| per.iter().flat_map(|(_, gb)| gb.iter().copied()).collect());
    (ga, gb)
}

/// Source indices for a cyclic shift of the first three axes.
pub(crate) fn roll3d_index(shape: &[usize], shifts: [isize; 3]) -> Result<Vec<u32>> {
    if shape.len() < 3 {
        return Err(Error::shape("roll3d", format!("needs rank >= 3, got {shape:?}")));
    }
    let inner: usize = shape[3..].iter().product();
    let (t, h, w) = (shape[0], shape[1], shape[2]);
    let norm = |s: isize, d: usize| s.rem_euclid(d as isize) as usize;
    let (st, sh, sw) = (norm(shifts[0], t), norm(shifts[1], h), norm(shifts[2], w));
    let mut index = Vec::with_capacity(t * h * w * inner);
    for ti in 0..t {
        let src_t = (ti + t - st) % t;
        for hi in 0..h {
            let src_h = (hi + h - sh) % h;
            for wi in 0..w {
                let src_w = (wi + w - sw) % w;
                let base = ((src_t * h + src_h) * w + src_w) * inner;
                index.extend((0..inner).map(|c| (base + c) as u32));
            }
        }
    }
    Ok(index)
}

/// Maps `(t, h, w, (a, b, c, o))` matmul output onto the upsampled grid.
fn upsample_index(grid: [usize; 3], k: [usize; 3], cout: usize) -> Vec<u32> {
    let [t, h, w] = grid;
    let row_len = k[0] * k[1] * k[2] * cout;
    let (ot, oh, ow) = (t * k[0], h * k[1], w * k[2]);
    let mut index = Vec::with_capacity(ot * oh * ow * cout);
    for yt in 0..ot {
        for yh in 0..oh {
            for yw in 0..ow {
                let src_row = ((yt / k[0]) * h + yh / k[1]) * w + yw / k[2];
                let off = (((yt % k[0]) * k[1] + yh % k[1]) * k[2] + yw % k[2]) * cout;
                let base = src_row * row_len + off;
                index.extend((0..cout).map(|o| (base + o) as u32));
            }
        }
    }
    index
}
