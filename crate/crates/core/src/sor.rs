//! Spectrum occupancy labelling by local-mean binarisation.

use crate::colormap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SorLabelConfig {
    /// Side of the square averaging window.
    pub block: usize,
    /// Margin above the local mean, in normalised intensity.
    pub margin: f64,
}

impl Default for SorLabelConfig {
    fn default() -> Self {
        SorLabelConfig {
            block: 16,
            margin: 0.02,
        }
    }
}

impl SorLabelConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.block == 0 || self.block % 2 != 0 || self.block > h.min(w) {
            return Err(Error::Config(format!(
                "SOR block size {} must be even, positive and at most min(H, W) = {}",
                self.block,
                h.min(w)
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("SOR margin {} must be non-negative", self.margin)));
        }
        Ok(())
    }
}

/// Mean of the `block×block` window around each pixel, in `[0, 1]`.
///
/// The window covers `[x - block/2, x + block/2 - 1]` on each axis and is
/// clipped to the image; the mean divides by the in-bounds count.
pub fn local_threshold(levels: &[u8], h: usize, w: usize, block: usize) -> Vec<f64> {
    assert_eq!(levels.len(), h * w, "local_threshold: image size mismatch");
    // integral image with a zero border
    let mut integral = vec![0u64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += levels[y * w + x] as u64;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let half = block / 2;
    let span = |c: usize, n: usize| (c.saturating_sub(half), (c + block - half).min(n));
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1) = span(y, h);
        for x in 0..w {
            let (x0, x1) = span(x, w);
            let total = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(total as f64 / count / 255.0);
        }
    }
    out
}

/// Binary occupancy of one frame; rows are time, columns frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), height * width);
        OccupancyGrid { height, width, cells }
    }

    /// Occupied-pixel fraction, the primary estimator.
    pub fn fraction(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }

    /// Number of columns (frequencies) with no occupied pixel.
    pub fn idle_columns(&self) -> usize {
        (0..self.width)
            .filter(|&x| (0..self.height).all(|y| !self.cells[y * self.width + x]))
            .count()
    }

    /// Number of rows (time instants) with no occupied pixel.
    pub fn idle_rows(&self) -> usize {
        self.cells.chunks(self.width).filter(|r| r.iter().all(|&c| !c)).count()
    }

    pub fn p_f(&self) -> f64 {
        1.0 - self.idle_columns() as f64 / self.width as f64
    }

    pub fn p_t(&self) -> f64 {
        1.0 - self.idle_rows() as f64 / self.height as f64
    }

    /// `1 - F0·T0 / (F·T)`.
    pub fn union(&self) -> f64 {
        1.0 - (self.idle_columns() * self.idle_rows()) as f64 / (self.width * self.height) as f64
    }
}

/// Pixel is occupied iff `I > θ + δ`.
pub fn binarize(levels: &[u8], theta: &[f64], h: usize, w: usize, margin: f64) -> OccupancyGrid {
    let cells = levels
        .iter()
        .zip(theta)
        .map(|(&l, &t)| l as f64 / 255.0 > t + margin)
        .collect();
    OccupancyGrid::new(h, w, cells)
}

/// Labels of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLabel {
    pub fraction: f64,
    pub union: f64,
    pub p_f: f64,
    pub p_t: f64,
}

pub fn label_frame(intensity: &[f32], h: usize, w: usize, cfg: &SorLabelConfig) -> FrameLabel {
    let levels: Vec<u8> = intensity.iter().map(|&v| colormap::level(v)).collect();
    let theta = local_threshold(&levels, h, w, cfg.block);
    let grid = binarize(&levels, &theta, h, w, cfg.margin);
    FrameLabel {
        fraction: grid.fraction(),
        union: grid.union(),
        p_f: grid.p_f(),
        p_t: grid.p_t(),
    }
}

/// Per-frame labels of a `(T, H, W, ch)` clip.
pub fn label_clip(clip: &Tensor, cfg: &SorLabelConfig) -> Result<Vec<FrameLabel>> {
    let s = clip.shape();
    if s.len() != 4 || !matches!(s[3], 1 | 3) {
        return Err(Error::shape("label_clip", format!("expected (T,H,W,1|3), got {s:?}")));
    }
    let (h, w, ch) = (s[1], s[2], s[3]);
    cfg.validate(h, w)?;
    Ok(clip
        .data()
        .chunks(h * w * ch)
        .map(|frame| label_frame(&colormap::intensity(frame, ch), h, w, cfg))
        .collect())
}

/// Occupied fractions of every frame, the regression target.
pub fn sor_series(clip: &Tensor, cfg: &SorLabelConfig) -> Result<Vec<f32>> {
    Ok(label_clip(clip, cfg)?
        .into_iter()
        .map(|l| l.fraction as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(levels: &[u8], h: usize, w: usize, block: usize) -> Vec<f64> {
        let half = block as isize / 2;
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut s, mut n) = (0u64, 0u64);
                for yy in y - half..y - half + block as isize {
                    for xx in x - half..x - half + block as isize {
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            s += levels[yy as usize * w + xx as usize] as u64;
                            n += 1;
                        }
                    }
                }
                out[y as usize * w + x as usize] = s as f64 / n as f64 / 255.0;
            }
        }
        out
    }

    #[test]
    fn threshold_matches_naive_oracle() {
        let levels: Vec<u8> = (0..8 * 8).map(|i| ((i * 97 + 13) % 256) as u8).collect();
        for block in [2, 4, 6, 8] {
            assert_eq!(local_threshold(&levels, 8, 8, block), naive(&levels, 8, 8, block));
        }
        let tall: Vec<u8> = (0..12 * 6).map(|i| ((i * 31) % 256) as u8).collect();
        assert_eq!(local_threshold(&tall, 12, 6, 4), naive(&tall, 12, 6, 4));
    }

    #[test]
    fn constant_and_checkerboard_thresholds() {
        let c = vec![77u8; 64];
        assert!(local_threshold(&c, 8, 8, 4).iter().all(|&t| t == 77.0 / 255.0));
        let board: Vec<u8> = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 255 } else { 0 }).collect();
        assert!(local_threshold(&board, 8, 8, 16).iter().all(|&t| t == 0.5));
    }

    #[test]
    fn fixture_estimators() {
        // columns 2 and 5 idle, rows 0, 3 and 7 idle
        let mut cells = vec![false; 64];
        for y in [1, 2, 4, 5, 6] {
            for x in [0, 1, 3, 4, 6, 7] {
                cells[y * 8 + x] = true;
            }
        }
        let g = OccupancyGrid::new(8, 8, cells);
        assert_eq!(g.p_f(), 0.75);
        assert_eq!(g.p_t(), 0.625);
        assert_eq!(g.union(), 0.90625);
    }

    #[test]
    fn endpoints() {
        let idle = OccupancyGrid::new(4, 4, vec![false; 16]);
        let busy = OccupancyGrid::new(4, 4, vec![true; 16]);
        assert_eq!((idle.fraction(), idle.union()), (0.0, 0.0));
        assert_eq!((busy.fraction(), busy.union()), (1.0, 1.0));
    }

    #[test]
    fn bright_row_is_exactly_occupied() {
        let (h, w) = (16, 16);
        let mut img = vec![0.1f32; h * w];
        for x in 0..w {
            img[5 * w + x] = 0.9;
        }
        let cfg = SorLabelConfig { block: 8, margin: 0.02 };
        let levels: Vec<u8> = img.iter().map(|&v| colormap::level(v)).collect();
        let theta = local_threshold(&levels, h, w, cfg.block);
        let g = binarize(&levels, &theta, h, w, cfg.margin);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(g.cells[y * w + x], y == 5);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SorLabelConfig { block: 7, margin: 0.02 }.validate(16, 16).is_err());
        assert!(SorLabelConfig { block: 32, margin: 0.02 }.validate(16, 16).is_err());
        assert!(SorLabelConfig::default().validate(16, 16).is_ok());
    }
}
