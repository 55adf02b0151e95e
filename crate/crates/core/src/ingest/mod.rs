//! I/Q captures to normalised spectrogram clips, synthetic datasets and
//! chronological splits.

pub mod iq;
pub mod manifest;
pub mod render;
pub mod stft;
pub mod synth;

use std::fs;
use std::path::Path;

use rayon::prelude::*;

pub use iq::{read_capture, write_capture, write_ppm};
pub use manifest::{check_chronological, chronological_split, ClipEntry, Manifest, Split, MANIFEST_FILE};
pub use render::{render_clip, Norm, PowerFrame};
pub use stft::{power, stft, IqRecord, StftConfig, StftGrid};
pub use synth::{Emitter, Scenario};

use crate::error::{Error, Result};
use crate::tensor::io;

/// Rendering and split settings shared by file and synthetic ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub stft: StftConfig,
    /// Input frames per sample; the horizon is the same length.
    pub input_length: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub ratio: [usize; 3],
    /// Spatial patch extent `(H_p, W_p)` the clips must be compatible with.
    pub patch_hw: [usize; 2],
    /// Percentiles of training-split dB values mapped to 0 and 1.
    pub norm_percentiles: [f64; 2],
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            stft: StftConfig::default(),
            input_length: 8,
            height: 64,
            width: 64,
            channels: 3,
            ratio: [4, 1, 1],
            patch_hw: [4, 4],
            norm_percentiles: [1.0, 99.0],
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        render::check_patchable([self.height, self.width], self.patch_hw)?;
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.input_length == 0 {
            return Err(Error::Config("input length must be positive".into()));
        }
        let [lo, hi] = self.norm_percentiles;
        if !(0.0..100.0).contains(&lo) || !(lo < hi && hi <= 100.0) {
            return Err(Error::Config(format!("bad normalisation percentiles {lo}, {hi}")));
        }
        Ok(())
    }

    pub fn frames_per_clip(&self) -> usize {
        2 * self.input_length
    }
}

/// Power frame of one record: rows are STFT columns (time), columns are bins.
pub fn power_frame(record: &IqRecord, cfg: &StftConfig) -> Result<PowerFrame> {
    let grid = stft(record, cfg)?;
    Ok(PowerFrame {
        rows: grid.columns,
        cols: grid.bins,
        data: power(&grid),
    })
}

/// Renders chronologically ordered records into clips under `out_dir` and
/// writes the manifest. Trailing records that do not fill a clip are dropped.
pub fn build_dataset(records: &[IqRecord], cfg: &IngestConfig, out_dir: &Path, source: &str) -> Result<Manifest> {
    cfg.validate()?;
    let stamps: Vec<i64> = records.iter().map(|r| r.timestamp).collect();
    check_chronological(&stamps)?;
    let per_clip = cfg.frames_per_clip();
    let n_clips = records.len() / per_clip;
    let [train, val, test] = chronological_split(n_clips, cfg.ratio).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{} records make {n_clips} clips of {per_clip} frames: {m}", records.len())),
        other => other,
    })?;
    let frames: Vec<PowerFrame> = records[..n_clips * per_clip]
        .par_iter()
        .map(|r| power_frame(r, &cfg.stft))
        .collect::<Result<_>>()?;
    let [lo, hi] = cfg.norm_percentiles;
    let norm = render::norm_from_frames(&frames[..train.end * per_clip], lo, hi)?;

    let clip_dir = out_dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let clips: Vec<ClipEntry> = frames
        .par_chunks(per_clip)
        .enumerate()
        .map(|(i, chunk)| {
            let clip = render_clip(chunk, &norm, cfg.channels, [cfg.height, cfg.width])?;
            let rel = format!("clips/clip_{i:04}.spt");
            io::save(&clip, out_dir.join(&rel))?;
            Ok(ClipEntry {
                path: rel,
                timestamp: stamps[i * per_clip],
            })
        })
        .collect::<Result<_>>()?;
    let frame_period_s = match stamps.as_slice() {
        [a, b, ..] => (b - a) as f64,
        _ => 1.0,
    };
    let m = Manifest {
        clips,
        train,
        val,
        test,
        input_length: cfg.input_length,
        horizon: cfg.input_length,
        height: cfg.height,
        width: cfg.width,
        channels: cfg.channels,
        norm,
        frame_period_s,
        source: source.to_string(),
        root: out_dir.to_path_buf(),
    };
    m.write()?;
    Ok(m)
}

/// Reads capture files (`.iq` or `.csv`, each with a `.hdr` sidecar) in the
/// given order and builds a dataset from them.
pub fn ingest_files<P: AsRef<Path> + Sync>(paths: &[P], cfg: &IngestConfig, out_dir: &Path) -> Result<Manifest> {
    let records: Vec<IqRecord> = paths
        .par_iter()
        .map(|p| read_capture(p.as_ref()))
        .collect::<Result<_>>()?;
    build_dataset(&records, cfg, out_dir, "files")
}

/// Synthetic dataset settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub clips: usize,
    /// Frequency offset added to every emitter, in cycles per decimated sample.
    pub carrier_shift: f64,
    /// STFT columns generated per output row; rows average this many columns.
    pub oversample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenario: Scenario::FmLike,
            seed: 0,
            clips: 16,
            carrier_shift: 0.0,
            oversample: 8,
        }
    }
}

/// Generates, renders and writes a synthetic dataset; each frame's record is
/// exactly `oversample·H` STFT columns long.
pub fn synth_dataset(synth: &SynthConfig, cfg: &IngestConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if synth.clips == 0 || synth.oversample == 0 {
        return Err(Error::Config("synthetic dataset needs positive clip count and oversampling".into()));
    }
    let records = synth::scenario_records(
        synth.scenario,
        synth.seed,
        synth.clips * cfg.frames_per_clip(),
        cfg.height * synth.oversample,
        synth.carrier_shift,
        &cfg.stft,
    );
    build_dataset(&records, cfg, out_dir, &format!("synth:{}", synth.scenario.as_str()))
}
