use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by both networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Embedding width `C`; stages run at `C`, `2C`, `4C`.
    pub channels: usize,
    /// Block pairs per encoder stage.
    pub enc_blocks: [usize; 3],
    pub enc_heads: [usize; 3],
    pub bottleneck_blocks: usize,
    /// Block pairs per decoder stage, deepest (4C) first.
    pub dec_blocks: [usize; 3],
    pub dec_heads: [usize; 3],
    pub patch: [usize; 3],
    pub window: [usize; 3],
    /// Clip shape `(T, H, W, ch)`; the horizon equals `T`.
    pub input: [usize; 4],
    pub linear_blocks: usize,
    pub linear_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 96,
            enc_blocks: [2, 4, 2],
            enc_heads: [4, 8, 16],
            bottleneck_blocks: 2,
            dec_blocks: [2, 4, 2],
            dec_heads: [16, 8, 4],
            patch: [2, 4, 4],
            window: [2, 7, 7],
            input: [8, 64, 64, 3],
            linear_blocks: 2,
            linear_hidden: 256,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for gradient checks and overfit runs.
    pub fn micro() -> Self {
        ModelConfig {
            channels: 8,
            enc_blocks: [1, 1, 1],
            enc_heads: [2, 2, 4],
            bottleneck_blocks: 1,
            dec_blocks: [1, 1, 1],
            dec_heads: [4, 2, 2],
            patch: [2, 2, 2],
            window: [2, 2, 2],
            input: [4, 8, 8, 3],
            linear_blocks: 2,
            linear_hidden: 32,
        }
    }

    pub fn horizon(&self) -> usize {
        self.input[0]
    }

    /// Token grid of encoder stage `i` (0-based).
    pub fn stage_grid(&self, i: usize) -> [usize; 3] {
        let [t, h, w, _] = self.input;
        let [pt, ph, pw] = self.patch;
        [t / pt, h / ph >> i, w / pw >> i]
    }

    pub fn stage_width(&self, i: usize) -> usize {
        self.channels << i
    }

    /// Number of 1×1×1 layers in the projection head: `⌈log₂(C/3)⌉`.
    pub fn head_steps(&self) -> usize {
        let mut n = 0;
        while (3usize << n) < self.channels {
            n += 1;
        }
        n.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.patch.contains(&0) || self.window.contains(&0) || self.input.contains(&0) {
            return bad(format!("zero-sized model dimension in {self:?}"));
        }
        if !matches!(self.input[3], 1 | 3) {
            return bad(format!("input channels must be 1 or 3, got {}", self.input[3]));
        }
        if self.input[0] % self.patch[0] != 0 {
            return bad(format!("T={} not divisible by patch T_p={}", self.input[0], self.patch[0]));
        }
        for (dim, p, name) in [(self.input[1], self.patch[1], "H"), (self.input[2], self.patch[2], "W")] {
            if dim % (4 * p) != 0 {
                return bad(format!("{name}={dim} must be a multiple of 4x patch extent {p}"));
            }
        }
        for i in 0..3 {
            let w = self.stage_width(i);
            if self.enc_heads[i] == 0 || w % self.enc_heads[i] != 0 {
                return bad(format!("encoder stage {} heads {} do not divide width {w}", i + 1, self.enc_heads[i]));
            }
            let dw = self.stage_width(2 - i);
            if self.dec_heads[i] == 0 || dw % self.dec_heads[i] != 0 {
                return bad(format!("decoder stage {} heads {} do not divide width {dw}", i + 1, self.dec_heads[i]));
            }
        }
        if self.linear_blocks == 0 || self.linear_hidden == 0 {
            return bad("linear predictor needs at least one hidden block".into());
        }
        Ok(())
    }

    /// Metadata lines written next to checkpoints.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("config.C".into(), self.channels.to_string());
        m.insert("config.patch".into(), list(&self.patch));
        m.insert("config.window".into(), list(&self.window));
        m.insert("config.input".into(), list(&self.input));
        m.insert("config.linear_blocks".into(), self.linear_blocks.to_string());
        m.insert("config.linear_hidden".into(), self.linear_hidden.to_string());
        for i in 0..3 {
            m.insert(format!("stage.enc{}.blocks", i + 1), self.enc_blocks[i].to_string());
            m.insert(format!("stage.enc{}.heads", i + 1), self.enc_heads[i].to_string());
            m.insert(format!("stage.dec{}.blocks", i + 1), self.dec_blocks[i].to_string());
            m.insert(format!("stage.dec{}.heads", i + 1), self.dec_heads[i].to_string());
        }
        m.insert("stage.bottleneck.blocks".into(), self.bottleneck_blocks.to_string());
        m
    }

    pub fn from_meta(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata is missing {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata {k} is not an integer")))
        };
        let c = ModelConfig {
            channels: num("config.C")?,
            enc_blocks: [num("stage.enc1.blocks")?, num("stage.enc2.blocks")?, num("stage.enc3.blocks")?],
            enc_heads: [num("stage.enc1.heads")?, num("stage.enc2.heads")?, num("stage.enc3.heads")?],
            bottleneck_blocks: num("stage.bottleneck.blocks")?,
            dec_blocks: [num("stage.dec1.blocks")?, num("stage.dec2.blocks")?, num("stage.dec3.blocks")?],
            dec_heads: [num("stage.dec1.heads")?, num("stage.dec2.heads")?, num("stage.dec3.heads")?],
            patch: parse_list(get("config.patch")?).map_err(Error::Checkpoint)?,
            window: parse_list(get("config.window")?).map_err(Error::Checkpoint)?,
            input: parse_list(get("config.input")?).map_err(Error::Checkpoint)?,
            linear_blocks: num("config.linear_blocks")?,
            linear_hidden: num("config.linear_hidden")?,
        };
        c.validate()
            .map_err(|e| Error::Checkpoint(format!("stored config is invalid: {e}")))?;
        Ok(c)
    }
}

/// Parses `"a,b,c"` into a fixed-size array.
pub fn parse_list<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("expected {N} comma-separated integers, got {s:?}"))?;
    v.try_into()
        .map_err(|_| format!("expected {N} comma-separated integers, got {s:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [ModelConfig::default(), ModelConfig::micro()] {
            c.validate().unwrap();
            assert_eq!(ModelConfig::from_meta(&c.to_meta()).unwrap(), c);
        }
    }

    #[test]
    fn head_steps_follow_log2_rule() {
        let mut c = ModelConfig::default();
        assert_eq!(c.head_steps(), 5);
        c.channels = 8;
        assert_eq!(c.head_steps(), 2);
        c.channels = 48;
        assert_eq!(c.head_steps(), 4);
    }

    #[test]
    fn stage_grids() {
        let c = ModelConfig::default();
        assert_eq!(c.stage_grid(0), [4, 16, 16]);
        assert_eq!(c.stage_grid(2), [4, 4, 4]);
    }

    #[test]
    fn rejects_bad_heads_and_dims() {
        let mut c = ModelConfig::micro();
        c.enc_heads[0] = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro();
        c.input[1] = 12;
        assert!(c.validate().is_err());
    }
}
