use super::{Encoder, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::swin::{Linear, PatchExpanding, SwinStage};
use crate::tensor::init::{self, trunc_normal, SeededRng, WEIGHT_STD};
use crate::tensor::{Tensor, Var};

/// One transposed-convolution layer of the projection head.
#[derive(Debug, Clone, Copy)]
pub struct ConvT {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: [usize; 3],
}

impl ConvT {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        stride: [usize; 3],
        cin: usize,
        cout: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let [a, b, c] = stride;
        Ok(ConvT {
            kernel: store.insert(format!("{name}.kernel"), trunc_normal([a, b, c, cin, cout], WEIGHT_STD, rng))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros([cout]))?,
            stride,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (k, b) = (s.p(self.kernel), s.p(self.bias));
        let y = s.conv3d_transpose(x, k, self.stride)?;
        s.add(y, b)
    }
}

/// Encoder, bottleneck, skip-connected decoder and 3D projection head.
#[derive(Debug, Clone)]
pub struct SwinStbModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub bottleneck: SwinStage,
    /// Skip reductions `2c → c`, deepest first.
    pub reduce: Vec<Linear>,
    /// Decoder stages, deepest first.
    pub decoder: Vec<SwinStage>,
    pub expand: Vec<PatchExpanding>,
    pub head: Vec<ConvT>,
}

impl SwinStbModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = init::rng(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "enc", &cfg, &mut rng)?;
        let bottleneck = SwinStage::new(
            &mut store,
            "bottleneck",
            cfg.stage_grid(2),
            cfg.stage_width(2),
            cfg.enc_heads[2],
            cfg.window,
            cfg.bottleneck_blocks,
            &mut rng,
        )?;
        let mut reduce = Vec::new();
        let mut decoder = Vec::new();
        let mut expand = Vec::new();
        for d in 0..3 {
            let level = 2 - d;
            let c = cfg.stage_width(level);
            reduce.push(Linear::new(&mut store, &format!("dec.{d}.skip_reduce"), 2 * c, c, true, &mut rng)?);
            decoder.push(SwinStage::new(
                &mut store,
                &format!("dec.{d}"),
                cfg.stage_grid(level),
                c,
                cfg.dec_heads[d],
                cfg.window,
                cfg.dec_blocks[d],
                &mut rng,
            )?);
            if level > 0 {
                expand.push(PatchExpanding::new(&mut store, &format!("dec.{d}.expand"), c, &mut rng)?);
            }
        }
        let mut head = vec![ConvT::new(&mut store, "head.up", cfg.patch, cfg.channels, cfg.channels, &mut rng)?];
        let n = cfg.head_steps();
        let mut cin = cfg.channels;
        for i in 0..n {
            let cout = if i + 1 == n { cfg.input[3] } else { (cin / 2).max(cfg.input[3]) };
            head.push(ConvT::new(&mut store, &format!("head.step.{i}"), [1, 1, 1], cin, cout, &mut rng)?);
            cin = cout;
        }
        log::debug!("3D-SwinSTB parameters: {}", store.num_scalars());
        Ok(SwinStbModel {
            config: cfg,
            store,
            encoder,
            bottleneck,
            reduce,
            decoder,
            expand,
            head,
        })
    }

    fn check_clip(&self, s: &Session, clip: Var) -> Result<()> {
        if s.shape(clip) != self.config.input {
            return Err(Error::Config(format!(
                "clip shape {:?} does not match model input {:?}",
                s.shape(clip),
                self.config.input
            )));
        }
        Ok(())
    }

    pub fn encode(&self, s: &mut Session, clip: Var) -> Result<[Var; 3]> {
        self.check_clip(s, clip)?;
        self.encoder.forward(s, clip)
    }

    /// Decoder and projection head without the final clamp.
    pub fn decode_raw(&self, s: &mut Session, feats: [Var; 3]) -> Result<Var> {
        let mut x = self.bottleneck.forward(s, feats[2])?;
        for d in 0..3 {
            let skip = feats[2 - d];
            let cat = s.concat_lastdim(x, skip)?;
            x = self.reduce[d].forward(s, cat)?;
            x = self.decoder[d].forward(s, x)?;
            if d < 2 {
                x = self.expand[d].forward(s, x)?;
            }
        }
        for layer in &self.head {
            x = layer.forward(s, x)?;
        }
        Ok(x)
    }

    pub fn decode(&self, s: &mut Session, feats: [Var; 3]) -> Result<Var> {
        let raw = self.decode_raw(s, feats)?;
        Ok(s.clamp(raw, 0.0, 1.0))
    }

    pub fn forward(&self, s: &mut Session, clip: Var) -> Result<Var> {
        let feats = self.encode(s, clip)?;
        self.decode(s, feats)
    }

    /// Predicts the next `T` frames for one clip.
    pub fn predict(&self, clip: &Tensor) -> Result<Tensor> {
        let mut s = Session::eval(&self.store);
        let x = s.constant(clip.clone());
        let y = self.forward(&mut s, x)?;
        Ok(s.value(y).clone())
    }
}
