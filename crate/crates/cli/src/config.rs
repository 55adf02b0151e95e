//! Flat `key=value` run configuration with file loading, overrides and
//! typed accessors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use specpred::ingest::{IngestConfig, Scenario, StftConfig, SynthConfig};
use specpred::models::{parse_list, ModelConfig};
use specpred::sor::SorLabelConfig;
use specpred::training::{AdamWConfig, TrainConfig};
use specpred::{Error, Result};

/// Every accepted key, its default and a one-line description. An empty
/// default means "taken from the preset or the dataset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("ingest.scenario", "fm_like", "synthetic scenario: fm_like, lte_like or bursty"),
    ("ingest.seed", "0", "synthetic generator seed"),
    ("ingest.clips", "16", "number of synthetic clips"),
    ("ingest.carrier_shift", "0", "offset added to every synthetic emitter, cycles per decimated sample"),
    ("ingest.oversample", "8", "synthetic STFT columns per output row"),
    ("ingest.window_length", "256", "STFT window length"),
    ("ingest.hop_length", "128", "STFT hop length"),
    ("ingest.fft_length", "256", "DFT length"),
    ("ingest.downsample", "4", "integer decimation before the STFT"),
    ("ingest.input_length", "8", "input frames T per sample (horizon K = T)"),
    ("ingest.height", "64", "frame height H (time)"),
    ("ingest.width", "64", "frame width W (frequency)"),
    ("ingest.channels", "3", "1 for grayscale, 3 for the RGB palette"),
    ("ingest.ratio", "4,1,1", "chronological train,val,test ratio"),
    ("ingest.patch", "4,4", "spatial patch extent H_p,W_p the frames must suit"),
    ("ingest.norm_low_pct", "1", "training-split dB percentile mapped to 0"),
    ("ingest.norm_high_pct", "99", "training-split dB percentile mapped to 1"),
    ("model.preset", "default", "base architecture: default or micro"),
    ("model.seed", "0", "parameter initialisation seed"),
    ("model.channels", "", "embedding width C"),
    ("model.enc_blocks", "", "block pairs per encoder stage"),
    ("model.enc_heads", "", "attention heads per encoder stage"),
    ("model.bottleneck_blocks", "", "block pairs in the bottleneck"),
    ("model.dec_blocks", "", "block pairs per decoder stage, deepest first"),
    ("model.dec_heads", "", "attention heads per decoder stage, deepest first"),
    ("model.patch", "", "patch extent T_p,H_p,W_p"),
    ("model.window", "", "attention window P,M,M"),
    ("model.linear_blocks", "", "hidden blocks of the rate predictor"),
    ("model.linear_hidden", "", "hidden width of the rate predictor"),
    ("model.input", "", "clip shape T,H,W,ch (flops only; training takes it from the dataset)"),
    ("train.lr", "0.001", "learning rate"),
    ("train.epochs", "20", "epoch budget"),
    ("train.batch_size", "1", "samples per update"),
    ("train.stop_threshold_pct", "0.01", "per-epoch relative loss decrease (percent) counted as stalled"),
    ("train.patience", "4", "stalled epochs that stop training"),
    ("train.seed", "0", "sample-order seed"),
    ("train.beta1", "0.9", "first-moment decay"),
    ("train.beta2", "0.999", "second-moment decay"),
    ("train.eps", "1e-8", "denominator epsilon"),
    ("train.weight_decay", "0.01", "decoupled weight decay"),
    ("train.freeze_encoder", "false", "keep encoder parameters fixed"),
    ("sor.block", "16", "local-mean window side w (even, at most min(H,W))"),
    ("sor.margin", "0.02", "margin above the local mean"),
    ("eval.lambda", "0.05", "rate error threshold counted as correct"),
    ("eval.split", "test", "split evaluated: train, val or test"),
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown configuration key {key:?}")))
    }
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Applies a `key=value` file; `#` starts a comment line.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        known(key)?;
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}={v:?} is not a valid value")))
    }

    fn list<const N: usize>(&self, key: &str) -> Result<[usize; N]> {
        parse_list(self.raw(key)).map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    fn opt_list<const N: usize>(&self, key: &str, fallback: [usize; N]) -> Result<[usize; N]> {
        if self.raw(key).is_empty() {
            Ok(fallback)
        } else {
            self.list(key)
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str, fallback: T) -> Result<T> {
        if self.raw(key).is_empty() {
            Ok(fallback)
        } else {
            self.get(key)
        }
    }

    /// Fully resolved `key=value` lines, one per key, sorted.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn ingest(&self) -> Result<IngestConfig> {
        Ok(IngestConfig {
            stft: StftConfig {
                window_length: self.get("ingest.window_length")?,
                hop_length: self.get("ingest.hop_length")?,
                fft_length: self.get("ingest.fft_length")?,
                downsample: self.get("ingest.downsample")?,
            },
            input_length: self.get("ingest.input_length")?,
            height: self.get("ingest.height")?,
            width: self.get("ingest.width")?,
            channels: self.get("ingest.channels")?,
            ratio: self.list("ingest.ratio")?,
            patch_hw: self.list("ingest.patch")?,
            norm_percentiles: [self.get("ingest.norm_low_pct")?, self.get("ingest.norm_high_pct")?],
        })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            scenario: self.raw("ingest.scenario").parse::<Scenario>()?,
            seed: self.get("ingest.seed")?,
            clips: self.get("ingest.clips")?,
            carrier_shift: self.get("ingest.carrier_shift")?,
            oversample: self.get("ingest.oversample")?,
        })
    }

    /// Architecture from the preset and any explicit overrides; `input`
    /// replaces the clip shape when given.
    pub fn model(&self, input: Option<[usize; 4]>) -> Result<ModelConfig> {
        let base = match self.raw("model.preset") {
            "default" => ModelConfig::default(),
            "micro" => ModelConfig::micro(),
            other => return Err(Error::Config(format!("unknown model.preset {other:?} (default, micro)"))),
        };
        let cfg = ModelConfig {
            channels: self.opt("model.channels", base.channels)?,
            enc_blocks: self.opt_list("model.enc_blocks", base.enc_blocks)?,
            enc_heads: self.opt_list("model.enc_heads", base.enc_heads)?,
            bottleneck_blocks: self.opt("model.bottleneck_blocks", base.bottleneck_blocks)?,
            dec_blocks: self.opt_list("model.dec_blocks", base.dec_blocks)?,
            dec_heads: self.opt_list("model.dec_heads", base.dec_heads)?,
            patch: self.opt_list("model.patch", base.patch)?,
            window: self.opt_list("model.window", base.window)?,
            input: match input {
                Some(i) => i,
                None => self.opt_list("model.input", base.input)?,
            },
            linear_blocks: self.opt("model.linear_blocks", base.linear_blocks)?,
            linear_hidden: self.opt("model.linear_hidden", base.linear_hidden)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            optimizer: AdamWConfig {
                lr: self.get("train.lr")?,
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                eps: self.get("train.eps")?,
                weight_decay: self.get("train.weight_decay")?,
            },
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            stop_threshold_pct: self.get("train.stop_threshold_pct")?,
            patience: self.get("train.patience")?,
            seed: self.get("train.seed")?,
            freeze_encoder: self.get("train.freeze_encoder")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sor(&self) -> Result<SorLabelConfig> {
        Ok(SorLabelConfig {
            block: self.get("sor.block")?,
            margin: self.get("sor.margin")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::new();
        c.ingest().unwrap().validate().unwrap();
        assert_eq!(c.model(None).unwrap(), ModelConfig::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.sor().unwrap(), SorLabelConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::new();
        assert!(c.apply("train.learning_rate=0.1").is_err());
        c.apply("train.lr=abc").unwrap();
        assert!(c.train().is_err());
    }

    #[test]
    fn preset_then_overrides() {
        let mut c = RunConfig::new();
        c.apply("model.preset=micro").unwrap();
        c.apply("model.window=2,4,4").unwrap();
        let m = c.model(Some([4, 16, 16, 1])).unwrap();
        assert_eq!((m.channels, m.window, m.input), (8, [2, 4, 4], [4, 16, 16, 1]));
    }

    #[test]
    fn file_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# micro run\ntrain.epochs = 3\n\nmodel.preset=micro\n").unwrap();
        let mut c = RunConfig::new();
        c.load_file(&p).unwrap();
        assert_eq!(c.train().unwrap().epochs, 3);
        std::fs::write(&p, "bogus=1\n").unwrap();
        assert!(c.load_file(&p).unwrap_err().to_string().contains("run.cfg:1"));
    }

    #[test]
    fn book_lists_every_key() {
        let book = include_str!("../../../book/src/cli.md");
        for (k, _, _) in KEYS {
            assert!(book.contains(&format!("| `{k}` |")), "{k} missing from the book");
        }
    }
}
