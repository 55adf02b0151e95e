//! Power grids to normalised spectrogram frames.

use crate::colormap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Power of one frame, `rows` time columns by `cols` frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFrame {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// dB range mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub db_min: f64,
    pub db_max: f64,
}

impl Norm {
    pub fn validate(&self) -> Result<()> {
        if !(self.db_min < self.db_max) || !self.db_min.is_finite() || !self.db_max.is_finite() {
            return Err(Error::Config(format!(
                "normalisation needs finite db_min < db_max, got {} and {}",
                self.db_min, self.db_max
            )));
        }
        Ok(())
    }

    pub fn apply(&self, power: f64) -> f32 {
        let db = to_db(power).clamp(self.db_min, self.db_max);
        ((db - self.db_min) / (self.db_max - self.db_min)) as f32
    }
}

pub fn to_db(power: f64) -> f64 {
    10.0 * (power + 1e-12).log10()
}

/// Linearly interpolated percentile of already sorted values.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// dB bounds from the `lo`/`hi` percentiles over every pixel of `frames`.
pub fn norm_from_frames<'a>(frames: impl IntoIterator<Item = &'a PowerFrame>, lo: f64, hi: f64) -> Result<Norm> {
    let mut db: Vec<f64> = frames
        .into_iter()
        .flat_map(|f| f.data.iter().map(|&p| to_db(p)))
        .collect();
    if db.is_empty() {
        return Err(Error::Data("no frames to derive normalisation from".into()));
    }
    db.sort_by(f64::total_cmp);
    let norm = Norm {
        db_min: percentile(&db, lo),
        db_max: percentile(&db, hi),
    };
    norm.validate()
        .map_err(|_| Error::Data(format!("degenerate dynamic range {:.3} dB in training frames", norm.db_min)))?;
    Ok(norm)
}

/// Resampling weights along one axis; triangle filter widened by the
/// downscale factor so shrinking averages instead of aliasing.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let centre = (i as f64 + 0.5) * scale;
            let lo = ((centre - support).floor().max(0.0)) as usize;
            let hi = ((centre + support).ceil() as usize).min(src);
            let mut w: Vec<(usize, f64)> = (lo..hi)
                .map(|j| (j, 1.0 - ((j as f64 + 0.5 - centre) / support).abs()))
                .filter(|&(_, v)| v > 0.0)
                .collect();
            let total: f64 = w.iter().map(|p| p.1).sum();
            for p in &mut w {
                p.1 /= total;
            }
            w
        })
        .collect()
}

/// Antialiased bilinear resize of a single-channel plane.
pub fn resize(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let wx = axis_weights(sw, dw);
    let wy = axis_weights(sh, dh);
    let mut tmp = vec![0.0f64; sh * dw];
    for y in 0..sh {
        for (x, ws) in wx.iter().enumerate() {
            tmp[y * dw + x] = ws.iter().map(|&(j, w)| src[y * sw + j] as f64 * w).sum();
        }
    }
    let mut out = vec![0.0f32; dh * dw];
    for (y, ws) in wy.iter().enumerate() {
        for x in 0..dw {
            out[y * dw + x] = ws.iter().map(|&(j, w)| tmp[j * dw + x] * w).sum::<f64>().clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Frame `H×W×ch` from a power grid: dB, clip and scale, resize, then the
/// palette when `channels == 3`.
pub fn render_frame(frame: &PowerFrame, norm: &Norm, channels: usize, out_hw: [usize; 2]) -> Vec<f32> {
    let scalar: Vec<f32> = frame.data.iter().map(|&p| norm.apply(p)).collect();
    let plane = resize(&scalar, frame.rows, frame.cols, out_hw[0], out_hw[1]);
    match channels {
        1 => plane,
        _ => plane.iter().flat_map(|&v| colormap::apply(v)).collect(),
    }
}

/// Checks that `H` and `W` are multiples of four times the patch extent.
pub fn check_patchable(out_hw: [usize; 2], patch_hw: [usize; 2]) -> Result<()> {
    for (dim, p, name) in [(out_hw[0], patch_hw[0], "H"), (out_hw[1], patch_hw[1], "W")] {
        if p == 0 || dim == 0 || dim % (4 * p) != 0 {
            return Err(Error::Config(format!(
                "{name}={dim} is not a multiple of 4x patch extent {p}"
            )));
        }
    }
    Ok(())
}

/// Stacks rendered frames into a `(T, H, W, ch)` clip.
pub fn render_clip(frames: &[PowerFrame], norm: &Norm, channels: usize, out_hw: [usize; 2]) -> Result<Tensor> {
    norm.validate()?;
    if !matches!(channels, 1 | 3) {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let data: Vec<f32> = frames
        .iter()
        .flat_map(|f| render_frame(f, norm, channels, out_hw))
        .collect();
    Tensor::new(vec![frames.len(), out_hw[0], out_hw[1], channels], data)
}
