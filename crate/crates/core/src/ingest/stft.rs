//! Short-time Fourier transform of I/Q records.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One capture of complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqRecord {
    pub samples: Vec<Complex<f32>>,
    pub sample_rate_hz: f64,
    pub center_frequency_hz: f64,
    pub timestamp: i64,
}

impl IqRecord {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data(format!("record at t={} has no samples", self.timestamp)));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "record at t={} has non-positive sample rate {}",
                self.timestamp, self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_length: usize,
    /// Integer decimation applied (block mean) before the transform.
    pub downsample: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: 256,
            hop_length: 128,
            fft_length: 256,
            downsample: 4,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hop_length > 0
            && self.downsample > 0
            && self.hop_length <= self.window_length
            && self.window_length <= self.fft_length;
        if !ok {
            return Err(Error::Config(format!(
                "STFT needs 0 < hop ({}) <= window ({}) <= fft ({}) and downsample ({}) > 0",
                self.hop_length, self.window_length, self.fft_length, self.downsample
            )));
        }
        Ok(())
    }

    /// Raw samples needed for exactly `columns` STFT columns.
    pub fn samples_for(&self, columns: usize) -> usize {
        self.downsample * (self.hop_length * (columns - 1) + self.window_length)
    }

    /// Column count for `n` raw samples, if at least one window fits.
    pub fn columns_for(&self, n: usize) -> Option<usize> {
        let m = n / self.downsample;
        (m >= self.window_length).then(|| (m - self.window_length) / self.hop_length + 1)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex coefficients, one row per time column, bins ordered from the most
/// negative to the most positive frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct StftGrid {
    pub columns: usize,
    pub bins: usize,
    pub data: Vec<Complex<f64>>,
}

impl StftGrid {
    pub fn get(&self, column: usize, bin: usize) -> Complex<f64> {
        self.data[column * self.bins + bin]
    }
}

/// Block-mean decimation by an integer factor; a trailing partial block is
/// dropped.
pub fn decimate(samples: &[Complex<f32>], factor: usize) -> Vec<Complex<f64>> {
    samples
        .chunks_exact(factor)
        .map(|c| {
            let s: Complex<f64> = c.iter().map(|v| Complex::new(v.re as f64, v.im as f64)).sum();
            s / factor as f64
        })
        .collect()
}

/// Windowed DFT with `1/√nfft` scaling, so the summed power of a column
/// equals the energy of the windowed segment.
pub fn stft(record: &IqRecord, cfg: &StftConfig) -> Result<StftGrid> {
    cfg.validate()?;
    record.validate()?;
    let x = decimate(&record.samples, cfg.downsample);
    let columns = cfg.columns_for(record.samples.len()).ok_or_else(|| {
        Error::Data(format!(
            "record at t={} has {} samples, fewer than one window ({} after {}x decimation)",
            record.timestamp,
            record.samples.len(),
            cfg.window_length,
            cfg.downsample
        ))
    })?;
    let n = cfg.fft_length;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let window = hann(cfg.window_length);
    let scale = 1.0 / (n as f64).sqrt();
    let mut data = Vec::with_capacity(columns * n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for c in 0..columns {
        buf.fill(Complex::new(0.0, 0.0));
        let start = c * cfg.hop_length;
        for (k, w) in window.iter().enumerate() {
            buf[k] = x[start + k] * *w;
        }
        fft.process(&mut buf);
        // centre the zero frequency
        for b in 0..n {
            data.push(buf[(b + n / 2) % n] * scale);
        }
    }
    Ok(StftGrid { columns, bins: n, data })
}

/// Squared modulus of every coefficient, `columns × bins`.
pub fn power(grid: &StftGrid) -> Vec<f64> {
    grid.data.iter().map(|c| c.norm_sqr()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(samples: Vec<Complex<f32>>) -> IqRecord {
        IqRecord {
            samples,
            sample_rate_hz: 1.0,
            center_frequency_hz: 0.0,
            timestamp: 0,
        }
    }

    fn plain() -> StftConfig {
        StftConfig {
            downsample: 1,
            ..StftConfig::default()
        }
    }

    #[test]
    fn column_count() {
        assert_eq!(plain().columns_for(1024), Some(7));
        let g = stft(&record(vec![Complex::new(0.0, 0.0); 1024]), &plain()).unwrap();
        assert_eq!((g.columns, g.bins), (7, 256));
        assert!(power(&g).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn tone_concentrates_in_its_bin() {
        let bin = 32.0;
        let s = (0..1024)
            .map(|n| {
                let ph = 2.0 * std::f64::consts::PI * bin * n as f64 / 256.0;
                Complex::new(ph.cos() as f32, ph.sin() as f32)
            })
            .collect();
        let g = stft(&record(s), &plain()).unwrap();
        let p = power(&g);
        let mut per_bin: Vec<f64> = (0..256).map(|b| (0..g.columns).map(|c| p[c * 256 + b]).sum()).collect();
        let peak = per_bin[128 + 32];
        assert_eq!(per_bin.iter().cloned().fold(0.0, f64::max), peak);
        per_bin.sort_by(f64::total_cmp);
        assert!(peak >= 10.0 * per_bin[128]);
    }

    #[test]
    fn too_short_record_is_rejected() {
        assert!(matches!(stft(&record(vec![Complex::new(1.0, 0.0); 100]), &plain()), Err(Error::Data(_))));
    }

    #[test]
    fn config_ordering_is_checked() {
        let cfg = StftConfig {
            hop_length: 300,
            ..StftConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
