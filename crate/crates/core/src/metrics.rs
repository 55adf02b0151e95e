//! Frame-wise image metrics, occupancy-rate threshold accuracy and the
//! comparison harnesses built on them.

use std::fmt::Write as _;

use crate::colormap;
use crate::error::{Error, Result};
use crate::ingest::{Manifest, Split};
use crate::models::{SwinLinearModel, SwinStbModel};
use crate::sor::{sor_series, SorLabelConfig};
use crate::tensor::Tensor;

/// Peak value of 8-bit pixels.
pub const MAX_PIXEL: f64 = 255.0;
/// PSNR written to CSV for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `[0, 1]` values to integer pixel levels.
pub fn to_pixels(frame: &[f32]) -> Vec<f64> {
    frame.iter().map(|&v| colormap::level(v) as f64).collect()
}

fn check_len(a: &[f64], b: &[f64], ch: usize) -> Result<()> {
    if a.len() != b.len() || ch == 0 || a.len() % ch != 0 {
        return Err(Error::shape("metric", format!("frames of {} and {} values with {ch} channels", a.len(), b.len())));
    }
    Ok(())
}

/// Mean over channels of the per-pixel mean squared difference, in pixel
/// units. Frames are interleaved `H×W×ch`.
pub fn mse_frame(pred: &[f64], truth: &[f64], ch: usize) -> Result<f64> {
    check_len(pred, truth, ch)?;
    let pixels = (pred.len() / ch) as f64;
    let mut per_channel = vec![0.0f64; ch];
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        per_channel[i % ch] += (p - t) * (p - t);
    }
    Ok(per_channel.iter().map(|s| s / pixels).sum::<f64>() / ch as f64)
}

/// `10·log10(255² / MSE)`; `+∞` for identical frames.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_PIXEL * MAX_PIXEL / mse).log10()
    }
}

pub fn psnr_frame(pred: &[f64], truth: &[f64], ch: usize) -> Result<f64> {
    mse_frame(pred, truth, ch).map(psnr_from_mse)
}

/// BT.601 luma plane of an interleaved frame; single-channel frames pass
/// through.
pub fn luma_plane(frame: &[f64], ch: usize) -> Vec<f64> {
    match ch {
        1 => frame.to_vec(),
        _ => frame
            .chunks(ch)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect(),
    }
}

/// SSIM from whole-frame statistics with `ρ₁ = 0.01`, `ρ₂ = 0.03`, `L = 255`.
pub fn ssim_frame(pred: &[f64], truth: &[f64], ch: usize) -> Result<f64> {
    check_len(pred, truth, ch)?;
    let (x, y) = (luma_plane(pred, ch), luma_plane(truth, ch));
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let moment = |a: &[f64], ma: f64, b: &[f64], mb: f64| a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n;
    let vx = moment(&x, mx, &x, mx);
    let vy = moment(&y, my, &y, my);
    let cov = moment(&x, mx, &y, my);
    let c1 = (0.01 * MAX_PIXEL).powi(2);
    let c2 = (0.03 * MAX_PIXEL).powi(2);
    Ok((2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub k: usize,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Metrics of frame `k` of every clip pair, averaged over the pairs.
pub fn framewise(preds: &[Tensor], truths: &[Tensor]) -> Result<Vec<FrameMetrics>> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::shape("framewise", format!("{} predictions for {} targets", preds.len(), truths.len())));
    }
    let shape = truths[0].shape().to_vec();
    if shape.len() != 4 || preds.iter().chain(truths).any(|t| t.shape() != shape) {
        return Err(Error::shape("framewise", format!("clips must all be (K,H,W,ch) like {shape:?}")));
    }
    let (k_len, ch) = (shape[0], shape[3]);
    let frame = shape[1] * shape[2] * ch;
    let n = preds.len() as f64;
    (0..k_len)
        .map(|k| {
            let mut acc = FrameMetrics { k, mse: 0.0, psnr: 0.0, ssim: 0.0 };
            for (p, t) in preds.iter().zip(truths) {
                let p = to_pixels(&p.data()[k * frame..(k + 1) * frame]);
                let t = to_pixels(&t.data()[k * frame..(k + 1) * frame]);
                let mse = mse_frame(&p, &t, ch)?;
                acc.mse += mse / n;
                acc.psnr += psnr_from_mse(mse) / n;
                acc.ssim += ssim_frame(&p, &t, ch)? / n;
            }
            Ok(acc)
        })
        .collect()
}

/// `k,mse,psnr,ssim` with PSNR capped for identical frames.
pub fn framewise_csv(rows: &[FrameMetrics]) -> String {
    let mut s = String::from("k,mse,psnr,ssim\n");
    for r in rows {
        writeln!(s, "{},{:.6},{:.6},{:.6}", r.k, r.mse, r.psnr.min(PSNR_CAP_DB), r.ssim).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub lambda: f64,
    pub k: usize,
    pub n_time: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Fraction of frames whose absolute rate error is at most `lambda`, over
/// `n_time` series of length `K`.
pub fn sor_accuracy(pred: &[Vec<f64>], truth: &[Vec<f64>], lambda: f64) -> Result<AccuracyReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::shape("sor_accuracy", format!("{} predicted series for {} true", pred.len(), truth.len())));
    }
    let k = truth[0].len();
    if pred.iter().chain(truth).any(|s| s.len() != k) {
        return Err(Error::shape("sor_accuracy", format!("every series must have length {k}")));
    }
    let correct = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.iter().zip(t))
        .filter(|(p, t)| (*p - *t).abs() <= lambda)
        .count();
    Ok(AccuracyReport {
        lambda,
        k,
        n_time: pred.len(),
        correct,
        accuracy: correct as f64 / (k * pred.len()) as f64,
    })
}

/// Forecasts and targets of one split.
pub fn stb_predictions(model: &SwinStbModel, manifest: &Manifest, split: Split) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (x, y) in manifest.samples(split)? {
        preds.push(model.predict(&x)?);
        truths.push(y);
    }
    Ok((preds, truths))
}

/// Both ways of forecasting occupancy rates on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SorComparison {
    pub head: AccuracyReport,
    pub from_predicted: AccuracyReport,
}

impl SorComparison {
    pub fn difference(&self) -> f64 {
        self.head.accuracy - self.from_predicted.accuracy
    }
}

/// Dedicated rate head against labelling the forecast spectrogram.
pub fn compare_sor_paths(
    stb: &SwinStbModel,
    head: &SwinLinearModel,
    manifest: &Manifest,
    split: Split,
    labels: &SorLabelConfig,
    lambda: f64,
) -> Result<SorComparison> {
    let mut truth = Vec::new();
    let mut from_head = Vec::new();
    let mut from_pred = Vec::new();
    for (x, y) in manifest.samples(split)? {
        truth.push(sor_series(&y, labels)?.into_iter().map(f64::from).collect());
        from_head.push(head.predict(&x)?.into_iter().map(f64::from).collect());
        from_pred.push(sor_series(&stb.predict(&x)?, labels)?.into_iter().map(f64::from).collect());
    }
    Ok(SorComparison {
        head: sor_accuracy(&from_head, &truth, lambda)?,
        from_predicted: sor_accuracy(&from_pred, &truth, lambda)?,
    })
}

/// Mean of each metric over the horizon.
pub fn horizon_mean(rows: &[FrameMetrics]) -> FrameMetrics {
    let n = rows.len() as f64;
    FrameMetrics {
        k: rows.len(),
        mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}
