//! Window partitioning of a `(T, H, W, C)` token grid.
//!
//! Everything here is index arithmetic computed once per grid shape. The
//! graph then applies the precomputed maps with `gather`, so the forward
//! pass does no coordinate math.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, GATHER_ZERO};

/// Additive attention mask value for pairs that must not attend.
pub const MASK_VALUE: f32 = -1e4;

/// Token-level geometry of one (possibly shifted) window partition.
#[derive(Debug, Clone)]
pub struct WindowLayout {
    pub grid: [usize; 3],
    /// Configured window; relative-position tables are sized from this.
    pub window_cfg: [usize; 3],
    /// Window actually used, clamped to the grid extent.
    pub window: [usize; 3],
    pub shift: [usize; 3],
    pub padded: [usize; 3],
    /// Source token (row-major `t,h,w`) for each `(window, slot)`, `None` for padding.
    pub slots: Vec<Option<usize>>,
    /// `(window, slot)` of every grid token.
    pub token_slot: Vec<usize>,
    /// `(n_w, N, N)` additive mask, present when shifted or padded.
    pub mask: Option<Tensor>,
    /// Relative-position table row for each `(query, key)` slot pair.
    pub rel_index: Vec<u32>,
}

/// Shift used by the second block of a pair: half the window, rounded down.
pub fn half_shift(window: [usize; 3]) -> [usize; 3] {
    window.map(|m| m / 2)
}

impl WindowLayout {
    pub fn new(grid: [usize; 3], window_cfg: [usize; 3], shift_cfg: [usize; 3]) -> Result<Self> {
        if grid.contains(&0) || window_cfg.contains(&0) {
            return Err(Error::Config(format!(
                "window partition of grid {grid:?} with window {window_cfg:?}"
            )));
        }
        let mut window = [0; 3];
        let mut shift = [0; 3];
        let mut padded = [0; 3];
        for i in 0..3 {
            if shift_cfg[i] >= window_cfg[i] {
                return Err(Error::Config(format!(
                    "shift {shift_cfg:?} must be smaller than window {window_cfg:?}"
                )));
            }
            if grid[i] <= window_cfg[i] {
                window[i] = grid[i];
                shift[i] = 0;
            } else {
                window[i] = window_cfg[i];
                shift[i] = shift_cfg[i];
            }
            padded[i] = grid[i].div_ceil(window[i]) * window[i];
        }
        let counts = [0, 1, 2].map(|i| padded[i] / window[i]);
        let n = window[0] * window[1] * window[2];
        let n_w = counts[0] * counts[1] * counts[2];

        let mut slots = Vec::with_capacity(n_w * n);
        let mut regions = Vec::with_capacity(n_w * n);
        let mut token_slot = vec![0usize; grid[0] * grid[1] * grid[2]];
        let region_of = |axis: usize, r: usize| -> usize {
            if shift[axis] == 0 {
                0
            } else if r < padded[axis] - window[axis] {
                0
            } else if r < padded[axis] - shift[axis] {
                1
            } else {
                2
            }
        };
        for wt in 0..counts[0] {
            for wh in 0..counts[1] {
                for ww in 0..counts[2] {
                    for it in 0..window[0] {
                        for ih in 0..window[1] {
                            for iw in 0..window[2] {
                                let r = [wt * window[0] + it, wh * window[1] + ih, ww * window[2] + iw];
                                let o = [0, 1, 2].map(|a| (r[a] + shift[a]) % padded[a]);
                                let valid = (0..3).all(|a| o[a] < grid[a]);
                                let slot = slots.len();
                                if valid {
                                    let flat = (o[0] * grid[1] + o[1]) * grid[2] + o[2];
                                    token_slot[flat] = slot;
                                    slots.push(Some(flat));
                                } else {
                                    slots.push(None);
                                }
                                regions.push(
                                    region_of(0, r[0]) * 9 + region_of(1, r[1]) * 3 + region_of(2, r[2]),
                                );
                            }
                        }
                    }
                }
            }
        }

        let needs_mask = shift.iter().any(|&s| s > 0) || padded != grid;
        let mask = needs_mask.then(|| {
            let mut m = vec![0.0f32; n_w * n * n];
            for w in 0..n_w {
                for i in 0..n {
                    for j in 0..n {
                        let (si, sj) = (w * n + i, w * n + j);
                        if regions[si] != regions[sj] || slots[sj].is_none() {
                            m[(w * n + i) * n + j] = MASK_VALUE;
                        }
                    }
                }
            }
            Tensor::new([n_w, 1, n, n], m).expect("mask shape")
        });

        let span = window_cfg.map(|m| 2 * m - 1);
        let coord = |s: usize| [s / (window[1] * window[2]), (s / window[2]) % window[1], s % window[2]];
        let mut rel_index = Vec::with_capacity(n * n);
        for i in 0..n {
            let ci = coord(i);
            for j in 0..n {
                let cj = coord(j);
                let d = [0, 1, 2].map(|a| ci[a] + window_cfg[a] - 1 - cj[a]);
                rel_index.push(((d[0] * span[1] + d[1]) * span[2] + d[2]) as u32);
            }
        }

        Ok(WindowLayout {
            grid,
            window_cfg,
            window,
            shift,
            padded,
            slots,
            token_slot,
            mask,
            rel_index,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.slots.len() / self.tokens_per_window()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    pub fn num_tokens(&self) -> usize {
        self.grid.iter().product()
    }

    /// Rows of the relative-position bias table.
    pub fn table_rows(&self) -> usize {
        self.window_cfg.iter().map(|m| 2 * m - 1).product()
    }

    /// Gather map `(T,H,W,C)` → `(n_w, N, C)`.
    pub fn partition_index(&self, c: usize) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.slots.len() * c);
        for s in &self.slots {
            match s {
                Some(t) => idx.extend((0..c).map(|k| (t * c + k) as u32)),
                None => idx.extend(std::iter::repeat_n(GATHER_ZERO, c)),
            }
        }
        idx
    }

    /// Gather map `(n_w, N, C)` → `(T,H,W,C)`; padded slots are dropped.
    pub fn reverse_index(&self, c: usize) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.token_slot.len() * c);
        for &s in &self.token_slot {
            idx.extend((0..c).map(|k| (s * c + k) as u32));
        }
        idx
    }
}

/// Precomputed gather maps for one attention block at a fixed width.
#[derive(Debug)]
pub struct BlockGeometry {
    pub layout: WindowLayout,
    pub channels: usize,
    pub heads: usize,
    pub partition: Arc<[u32]>,
    pub reverse: Arc<[u32]>,
    pub q: Arc<[u32]>,
    pub kt: Arc<[u32]>,
    pub v: Arc<[u32]>,
    pub merge_heads: Arc<[u32]>,
    pub bias: Arc<[u32]>,
}

impl BlockGeometry {
    pub fn new(layout: WindowLayout, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide {channels} channels"
            )));
        }
        let c = channels;
        let d = c / heads;
        let n = layout.tokens_per_window();
        let n_w = layout.num_windows();
        let qkv_at = |w: usize, tok: usize, part: usize, h: usize, e: usize| {
            ((w * n + tok) * 3 * c + part * c + h * d + e) as u32
        };
        let mut q = Vec::with_capacity(n_w * n * c);
        let mut v = Vec::with_capacity(n_w * n * c);
        let mut kt = Vec::with_capacity(n_w * n * c);
        let mut merge = Vec::with_capacity(n_w * n * c);
        for w in 0..n_w {
            for h in 0..heads {
                for tok in 0..n {
                    for e in 0..d {
                        q.push(qkv_at(w, tok, 0, h, e));
                        v.push(qkv_at(w, tok, 2, h, e));
                    }
                }
                for e in 0..d {
                    for tok in 0..n {
                        kt.push(qkv_at(w, tok, 1, h, e));
                    }
                }
            }
            for tok in 0..n {
                for h in 0..heads {
                    for e in 0..d {
                        merge.push((((w * heads + h) * n + tok) * d + e) as u32);
                    }
                }
            }
        }
        let mut bias = Vec::with_capacity(heads * n * n);
        for h in 0..heads {
            for &r in &layout.rel_index {
                bias.push(r * heads as u32 + h as u32);
            }
        }
        Ok(BlockGeometry {
            partition: layout.partition_index(c).into(),
            reverse: layout.reverse_index(c).into(),
            q: q.into(),
            kt: kt.into(),
            v: v.into(),
            merge_heads: merge.into(),
            bias: bias.into(),
            layout,
            channels,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_cube_gives_eight_windows() {
        let plain = WindowLayout::new([16; 3], [8; 3], [0; 3]).unwrap();
        assert_eq!(plain.num_windows(), 8);
        assert!(plain.mask.is_none());
        let shifted = WindowLayout::new([16; 3], [8; 3], [4; 3]).unwrap();
        assert_eq!(shifted.num_windows(), 8);
        let m = shifted.mask.as_ref().unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == MASK_VALUE));
    }

    #[test]
    fn window_clamps_to_small_grid() {
        let l = WindowLayout::new([2, 3, 3], [2, 7, 7], [1, 3, 3]).unwrap();
        assert_eq!(l.window, [2, 3, 3]);
        assert_eq!(l.shift, [0, 0, 0]);
        assert_eq!(l.num_windows(), 1);
        assert!(l.mask.is_none());
    }

    #[test]
    fn padding_masks_padded_keys() {
        let l = WindowLayout::new([1, 3, 3], [1, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(l.padded, [1, 4, 4]);
        assert_eq!(l.num_windows(), 4);
        let m = l.mask.as_ref().unwrap();
        let n = 4;
        for w in 0..4 {
            for j in 0..n {
                let pad = l.slots[w * n + j].is_none();
                assert_eq!(m.data()[w * n * n + j] == MASK_VALUE, pad);
            }
        }
    }

    #[test]
    fn every_token_has_exactly_one_slot() {
        let l = WindowLayout::new([3, 5, 6], [2, 2, 4], [1, 1, 2]).unwrap();
        let mut seen = vec![0; l.num_tokens()];
        for s in l.slots.iter().flatten() {
            seen[*s] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        for (t, &s) in l.token_slot.iter().enumerate() {
            assert_eq!(l.slots[s], Some(t));
        }
    }

    #[test]
    fn rel_index_depends_on_displacement_only() {
        let l = WindowLayout::new([2, 4, 4], [2, 4, 4], [0; 3]).unwrap();
        let n = l.tokens_per_window();
        let coord = |s: usize| [s / 16, (s / 4) % 4, s % 4];
        let rows = l.table_rows() as u32;
        for i in 0..n {
            for j in 0..n {
                let r = l.rel_index[i * n + j];
                assert!(r < rows);
                // swapping query and key mirrors the displacement around the centre row
                assert_eq!(l.rel_index[j * n + i], rows - 1 - r);
                let (ci, cj) = (coord(i), coord(j));
                for k in 0..n {
                    for m in 0..n {
                        let (ck, cm) = (coord(k), coord(m));
                        let same = (0..3).all(|a| ci[a] as isize - cj[a] as isize == ck[a] as isize - cm[a] as isize);
                        if same {
                            assert_eq!(r, l.rel_index[k * n + m]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_shift_is_rejected() {
        assert!(WindowLayout::new([8; 3], [2; 3], [2; 3]).is_err());
    }
}
