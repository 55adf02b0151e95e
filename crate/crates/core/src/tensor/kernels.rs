//! Raw slice kernels shared by the graph ops.
//!
//! Reductions accumulate in `f64` and round once. Parallel kernels split work
//! by output row only, so every output element is produced by one sequential
//! loop and results do not depend on the thread count.

use rayon::prelude::*;

use super::strides_of;
use crate::error::{Error, Result};

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let row = |(i, out_row): (usize, &mut [f32])| {
        let mut acc = vec![0.0f64; n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let av = av as f64;
            let b_row = &b[kk * n..(kk + 1) * n];
            for (acc_j, &bv) in acc.iter_mut().zip(b_row) {
                *acc_j += av * bv as f64;
            }
        }
        for (o, v) in out_row.iter_mut().zip(acc) {
            *o = v as f32;
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let row = |(i, out_row): (usize, &mut [f32])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f64;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x as f64 * y as f64;
            }
            *o = acc as f32;
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[p,n] = a[m,p]ᵀ · d[m,n]`
pub fn mm_tn(a: &[f32], d: &[f32], m: usize, p: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; p * n];
    let row = |(pi, out_row): (usize, &mut [f32])| {
        let mut acc = vec![0.0f64; n];
        for mi in 0..m {
            let av = a[mi * p + pi] as f64;
            let d_row = &d[mi * n..(mi + 1) * n];
            for (acc_j, &dv) in acc.iter_mut().zip(d_row) {
                *acc_j += av * dv as f64;
            }
        }
        for (o, v) in out_row.iter_mut().zip(acc) {
            *o = v as f32;
        }
    };
    if m * n * p >= PAR_THRESHOLD && p > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// Output shape and source index for every output element of an axis
/// permutation.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<u32>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank
        || axes.iter().any(|&a| {
            a >= rank || std::mem::replace(&mut seen[a], true)
        })
    {
        return Err(Error::shape(
            "permute",
            format!("axes {axes:?} invalid for shape {shape:?}"),
        ));
    }
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    Ok((out_shape.clone(), odometer_index(&out_shape, &src_strides)))
}

/// For each element of `out_shape` (row-major), `Σ index[i]·src_strides[i]`.
pub fn odometer_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<u32> {
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(n);
    let mut src = 0usize;
    for _ in 0..n {
        out.push(src as u32);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Numpy-style broadcast of two shapes (right aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Source index into a tensor of `src_shape` for each element of the
/// broadcast `out_shape`.
pub fn broadcast_index(out_shape: &[usize], src_shape: &[usize]) -> Vec<u32> {
    let rank = out_shape.len();
    let src_strides_raw = strides_of(src_shape);
    let mut strides = vec![0usize; rank];
    for i in 0..src_shape.len() {
        let oi = rank - src_shape.len() + i;
        if src_shape[i] != 1 {
            strides[oi] = src_strides_raw[i];
        }
    }
    odometer_index(out_shape, &strides)
}

const GELU_C: f64 = 0.797_884_560_8;
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())) as f32
}

pub fn gelu_grad(x: f32) -> f32 {
    let x = x as f64;
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du) as f32
}

pub fn sigmoid(x: f32) -> f32 {
    let x = x as f64;
    (1.0 / (1.0 + (-x).exp())) as f32
}
