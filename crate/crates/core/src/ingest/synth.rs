//! Synthetic captures: narrowband and block emitters with Markov on/off
//! activity over complex Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;

use super::stft::{IqRecord, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::init::{rng, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// A few persistent narrow carriers with slow frequency modulation.
    FmLike,
    /// Wide noise-like blocks that switch on and off every few columns.
    LteLike,
    /// Many short narrow bursts.
    Bursty,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::FmLike => "fm_like",
            Scenario::LteLike => "lte_like",
            Scenario::Bursty => "bursty",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm_like" => Ok(Scenario::FmLike),
            "lte_like" => Ok(Scenario::LteLike),
            "bursty" => Ok(Scenario::Bursty),
            _ => Err(Error::Config(format!("unknown scenario {s:?} (fm_like, lte_like, bursty)"))),
        }
    }
}

/// One transmitter. Frequencies are in cycles per decimated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Emitter {
    pub freq: f64,
    /// Occupied bandwidth; 0 for a single tone.
    pub width: f64,
    pub amplitude: f64,
    /// Peak frequency deviation of the slow modulation.
    pub deviation: f64,
    pub p_stay_on: f64,
    pub p_stay_off: f64,
    pub on: bool,
}

impl Emitter {
    pub fn always_on(freq: f64, amplitude: f64) -> Self {
        Emitter {
            freq,
            width: 0.0,
            amplitude,
            deviation: 0.0,
            p_stay_on: 1.0,
            p_stay_off: 0.0,
            on: true,
        }
    }

    fn subcarriers(&self) -> usize {
        if self.width > 0.0 {
            16
        } else {
            1
        }
    }
}

fn wrap(f: f64) -> f64 {
    (f + 0.5).rem_euclid(1.0) - 0.5
}

/// Emitter layout of a scenario; every centre is offset by `shift`.
pub fn layout(scenario: Scenario, shift: f64, rng: &mut SeededRng) -> Vec<Emitter> {
    let mut out = Vec::new();
    let (count, lo, hi) = match scenario {
        Scenario::FmLike => (3, -0.4, 0.4),
        Scenario::LteLike => (2, -0.3, 0.3),
        Scenario::Bursty => (6, -0.42, 0.42),
    };
    // evenly spaced slots with jitter keep emitters apart
    let slot = (hi - lo) / count as f64;
    for k in 0..count {
        let centre = lo + slot * (k as f64 + 0.5) + rng.random_range(-0.25..0.25) * slot;
        let e = match scenario {
            Scenario::FmLike => Emitter {
                freq: wrap(centre + shift),
                width: 0.0,
                amplitude: rng.random_range(0.6..1.5),
                deviation: rng.random_range(0.002..0.006),
                p_stay_on: 0.9995,
                p_stay_off: 0.99,
                on: true,
            },
            Scenario::LteLike => Emitter {
                freq: wrap(centre + shift),
                width: rng.random_range(0.12..0.2),
                amplitude: rng.random_range(0.3..0.45),
                deviation: 0.0,
                p_stay_on: 0.985,
                p_stay_off: 0.985,
                on: rng.random_bool(0.5),
            },
            Scenario::Bursty => Emitter {
                freq: wrap(centre + shift),
                width: 0.0,
                amplitude: rng.random_range(0.6..1.5),
                deviation: 0.0,
                p_stay_on: 0.96,
                p_stay_off: 0.997,
                on: false,
            },
        };
        out.push(e);
    }
    out
}

/// Noise standard deviation per I and Q component at the raw rate.
pub const NOISE_STD: f64 = 0.5;

/// Generates `count` consecutive records, each exactly long enough for
/// `columns` STFT columns. Emitter activity carries over between records.
pub fn generate(
    emitters: &mut [Emitter],
    count: usize,
    columns: usize,
    stft: &StftConfig,
    rng: &mut SeededRng,
) -> Vec<IqRecord> {
    let ds = stft.downsample;
    let len = stft.samples_for(columns);
    let slot = stft.hop_length * ds;
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut phases: Vec<Vec<f64>> = emitters
        .iter()
        .map(|e| (0..e.subcarriers()).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let tau = 2.0 * std::f64::consts::PI;
    // modulation period of the slow FM, in raw samples
    let period = 8.0 * slot as f64;
    let mut n_global = 0u64;
    let mut out = Vec::with_capacity(count);
    for r in 0..count {
        let mut samples = vec![Complex::new(0.0f64, 0.0); len];
        for start in (0..len).step_by(slot) {
            let end = (start + slot).min(len);
            for (e, ph) in emitters.iter_mut().zip(phases.iter_mut()) {
                let stay = if e.on { e.p_stay_on } else { e.p_stay_off };
                if !rng.random_bool(stay.clamp(0.0, 1.0)) {
                    e.on = !e.on;
                }
                let m = ph.len();
                if m > 1 {
                    // fresh symbol phases every slot make the block noise-like
                    for p in ph.iter_mut() {
                        *p = rng.random_range(0.0..1.0);
                    }
                }
                if !e.on {
                    continue;
                }
                let amp = e.amplitude / (m as f64).sqrt();
                let swing = e.deviation / ds as f64 * period / tau;
                for (k, p) in ph.iter().enumerate() {
                    let offset = if m > 1 { e.width * ((k as f64 + 0.5) / m as f64 - 0.5) } else { 0.0 };
                    let f = (e.freq + offset) / ds as f64;
                    let n0 = (n_global + start as u64) as f64;
                    // exact phase at each chunk start, constant instantaneous
                    // frequency within the chunk
                    let chunk = if swing == 0.0 { end - start } else { 32 };
                    for c0 in (start..end).step_by(chunk) {
                        let c1 = (c0 + chunk).min(end);
                        let n = n0 + (c0 - start) as f64;
                        let phase = (p + f * n - swing * (tau * n / period).cos()).rem_euclid(1.0);
                        let inst = f + swing * tau / period * (tau * n / period).sin();
                        let step = Complex::from_polar(1.0, tau * inst);
                        let mut z = Complex::from_polar(amp, tau * phase);
                        for s in samples[c0..c1].iter_mut() {
                            *s += z;
                            z *= step;
                        }
                    }
                }
            }
        }
        for s in samples.iter_mut() {
            *s += Complex::new(noise.sample(rng), noise.sample(rng));
        }
        n_global += len as u64;
        out.push(IqRecord {
            samples: samples.into_iter().map(|c| Complex::new(c.re as f32, c.im as f32)).collect(),
            sample_rate_hz: 1.0e6,
            center_frequency_hz: 100.0e6,
            timestamp: BASE_TIMESTAMP + r as i64,
        });
    }
    out
}

pub const BASE_TIMESTAMP: i64 = 1_700_000_000;

/// Records of a scenario, seeded end to end.
pub fn scenario_records(
    scenario: Scenario,
    seed: u64,
    count: usize,
    columns: usize,
    shift: f64,
    stft: &StftConfig,
) -> Vec<IqRecord> {
    let mut r = rng(seed);
    let mut emitters = layout(scenario, shift, &mut r);
    generate(&mut emitters, count, columns, stft, &mut r)
}
