use super::ModelConfig;
use crate::error::Result;
use crate::params::{ParamStore, Session};
use crate::swin::{PatchEmbed, PatchMerging, SwinStage};
use crate::tensor::init::SeededRng;
use crate::tensor::Var;

/// Patch embedding followed by three stages joined by patch merging.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embed: PatchEmbed,
    pub stages: Vec<SwinStage>,
    pub merges: Vec<PatchMerging>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let embed = PatchEmbed::new(store, &format!("{name}.embed"), cfg.patch, cfg.input[3], cfg.channels, rng)?;
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for i in 0..3 {
            if i > 0 {
                merges.push(PatchMerging::new(
                    store,
                    &format!("{name}.merge.{}", i - 1),
                    cfg.stage_width(i - 1),
                    rng,
                )?);
            }
            stages.push(SwinStage::new(
                store,
                &format!("{name}.stage.{i}"),
                cfg.stage_grid(i),
                cfg.stage_width(i),
                cfg.enc_heads[i],
                cfg.window,
                cfg.enc_blocks[i],
                rng,
            )?);
        }
        Ok(Encoder { embed, stages, merges })
    }

    /// Stage outputs `S1, S2, S3` at widths `C, 2C, 4C`.
    pub fn forward(&self, s: &mut Session, clip: Var) -> Result<[Var; 3]> {
        let x = self.embed.forward(s, clip)?;
        let s1 = self.stages[0].forward(s, x)?;
        let m = self.merges[0].forward(s, s1)?;
        let s2 = self.stages[1].forward(s, m)?;
        let m = self.merges[1].forward(s, s2)?;
        let s3 = self.stages[2].forward(s, m)?;
        Ok([s1, s2, s3])
    }
}
