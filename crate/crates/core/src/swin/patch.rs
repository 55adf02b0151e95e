//! Patch partition, embedding, merging and expanding.

use super::block::Linear;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::tensor::init::SeededRng;
use crate::tensor::{Tensor, Var};

/// Gather map `(T,H,W,ch)` → `(T/pt, H/ph, W/pw, pt·ph·pw·ch)`.
pub fn patch_partition_index(shape: &[usize], patch: [usize; 3]) -> Result<(Vec<usize>, Vec<u32>)> {
    if shape.len() != 4 || patch.contains(&0) || (0..3).any(|i| shape[i] % patch[i] != 0) {
        return Err(Error::shape(
            "patch_partition",
            format!("clip {shape:?} is not divisible by patch {patch:?}"),
        ));
    }
    let [t, h, w, ch] = [shape[0], shape[1], shape[2], shape[3]];
    let [a, b, c] = patch;
    let out = vec![t / a, h / b, w / c, a * b * c * ch];
    let mut idx = Vec::with_capacity(t * h * w * ch);
    for ti in 0..t / a {
        for hi in 0..h / b {
            for wi in 0..w / c {
                for i in 0..a {
                    for j in 0..b {
                        for k in 0..c {
                            let base = (((ti * a + i) * h + hi * b + j) * w + wi * c + k) * ch;
                            idx.extend((0..ch).map(|z| (base + z) as u32));
                        }
                    }
                }
            }
        }
    }
    Ok((out, idx))
}

/// Lossless rearrangement of a clip into flattened 3D patches.
pub fn patch_partition(clip: &Tensor, patch: [usize; 3]) -> Result<Tensor> {
    let (shape, idx) = patch_partition_index(clip.shape(), patch)?;
    let data = idx.iter().map(|&i| clip.data()[i as usize]).collect();
    Tensor::new(shape, data)
}

/// Inverse of [`patch_partition`].
pub fn patch_unpartition(tokens: &Tensor, patch: [usize; 3]) -> Result<Tensor> {
    let s = tokens.shape();
    let vol: usize = patch.iter().product();
    if s.len() != 4 || s[3] % vol != 0 {
        return Err(Error::shape("patch_unpartition", format!("{s:?} with patch {patch:?}")));
    }
    let clip_shape = [s[0] * patch[0], s[1] * patch[1], s[2] * patch[2], s[3] / vol];
    let (_, idx) = patch_partition_index(&clip_shape, patch)?;
    let mut data = vec![0.0f32; tokens.len()];
    for (o, &i) in idx.iter().enumerate() {
        data[i as usize] = tokens.data()[o];
    }
    Tensor::new(clip_shape.to_vec(), data)
}

/// Patch partition followed by a per-token linear map to `C` channels.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub patch: [usize; 3],
    pub proj: Linear,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, name: &str, patch: [usize; 3], ch: usize, c: usize, rng: &mut SeededRng) -> Result<Self> {
        let feat = patch.iter().product::<usize>() * ch;
        Ok(PatchEmbed {
            patch,
            proj: Linear::new(store, &format!("{name}.proj"), feat, c, true, rng)?,
        })
    }

    pub fn forward(&self, s: &mut Session, clip: Var) -> Result<Var> {
        let (shape, idx) = patch_partition_index(s.shape(clip), self.patch)?;
        let tokens = s.gather(clip, shape, idx.into())?;
        self.proj.forward(s, tokens)
    }
}

/// Gather map `(T,H,W,C)` → `(T,H/2,W/2,4C)`; neighbours in order
/// `(0,0),(0,1),(1,0),(1,1)`.
pub fn merge_index(shape: &[usize]) -> Result<(Vec<usize>, Vec<u32>)> {
    if shape.len() != 4 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
        return Err(Error::shape("patch_merging", format!("needs even H and W, got {shape:?}")));
    }
    let [t, h, w, c] = [shape[0], shape[1], shape[2], shape[3]];
    let mut idx = Vec::with_capacity(t * h * w * c);
    for ti in 0..t {
        for hi in 0..h / 2 {
            for wi in 0..w / 2 {
                for (dh, dw) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let base = ((ti * h + 2 * hi + dh) * w + 2 * wi + dw) * c;
                    idx.extend((0..c).map(|k| (base + k) as u32));
                }
            }
        }
    }
    Ok((vec![t, h / 2, w / 2, 4 * c], idx))
}

/// Gather map `(T,H,W,C)` → `(T,2H,2W,C/4)`: each token's vector is split
/// into a 2×2 neighbourhood.
pub fn expand_index(shape: &[usize]) -> Result<(Vec<usize>, Vec<u32>)> {
    if shape.len() != 4 || shape[3] % 4 != 0 {
        return Err(Error::shape("patch_expanding", format!("channels of {shape:?} not divisible by 4")));
    }
    let [t, h, w, c] = [shape[0], shape[1], shape[2], shape[3]];
    let q = c / 4;
    let mut idx = Vec::with_capacity(t * h * w * c);
    for ti in 0..t {
        for yh in 0..2 * h {
            for yw in 0..2 * w {
                let base = ((ti * h + yh / 2) * w + yw / 2) * c + ((yh % 2) * 2 + yw % 2) * q;
                idx.extend((0..q).map(|k| (base + k) as u32));
            }
        }
    }
    Ok((vec![t, 2 * h, 2 * w, q], idx))
}

/// 2×2 spatial downsampling with a `4C → 2C` projection.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub reduction: Linear,
}

impl PatchMerging {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(PatchMerging {
            reduction: Linear::new(store, &format!("{name}.reduction"), 4 * c, 2 * c, false, rng)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (shape, idx) = merge_index(s.shape(x))?;
        let g = s.gather(x, shape, idx.into())?;
        self.reduction.forward(s, g)
    }
}

/// 2× spatial upsampling: `c → 2c` projection, then rearranged into a 2×2
/// neighbourhood of `c/2` channels.
#[derive(Debug, Clone)]
pub struct PatchExpanding {
    pub expand: Linear,
}

impl PatchExpanding {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut SeededRng) -> Result<Self> {
        if c % 2 != 0 {
            return Err(Error::shape("patch_expanding", format!("odd channel count {c}")));
        }
        Ok(PatchExpanding {
            expand: Linear::new(store, &format!("{name}.expand"), c, 2 * c, false, rng)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.expand.forward(s, x)?;
        let (shape, idx) = expand_index(s.shape(y))?;
        s.gather(y, shape, idx.into())
    }
}
