use super::stb::ConvT;
use super::{Encoder, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::swin::Linear;
use crate::tensor::init;
use crate::tensor::{Tensor, Var};

/// Encoder plus a convolutional/linear head emitting one occupancy rate per
/// future frame.
#[derive(Debug, Clone)]
pub struct SwinLinearModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub conv_blocks: Vec<ConvT>,
    pub linear_blocks: Vec<Linear>,
    pub out: Linear,
}

impl SwinLinearModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = init::rng(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "enc", &cfg, &mut rng)?;
        let deep = cfg.stage_width(2);
        let tp = cfg.patch[0];
        let temporal: Vec<usize> = if tp == 1 {
            vec![]
        } else if tp.is_power_of_two() {
            vec![2; tp.trailing_zeros() as usize]
        } else {
            vec![tp]
        };
        let mut conv_blocks = Vec::new();
        for (i, &st) in temporal.iter().enumerate() {
            conv_blocks.push(ConvT::new(&mut store, &format!("sor.conv.{i}"), [st, 1, 1], deep, deep, &mut rng)?);
        }
        conv_blocks.push(ConvT::new(
            &mut store,
            &format!("sor.conv.{}", temporal.len()),
            [1, 1, 1],
            deep,
            3,
            &mut rng,
        )?);
        let [_, h, w] = cfg.stage_grid(2);
        let mut fan_in = h * w * 3;
        let mut linear_blocks = Vec::new();
        for i in 0..cfg.linear_blocks {
            linear_blocks.push(Linear::new(&mut store, &format!("sor.fc.{i}"), fan_in, cfg.linear_hidden, true, &mut rng)?);
            fan_in = cfg.linear_hidden;
        }
        let out = Linear::new(&mut store, "sor.out", fan_in, 1, true, &mut rng)?;
        log::debug!("3D-SwinLinear parameters: {}", store.num_scalars());
        Ok(SwinLinearModel {
            config: cfg,
            store,
            encoder,
            conv_blocks,
            linear_blocks,
            out,
        })
    }

    /// Occupancy-rate predictions of shape `(T,)`, each in `(0, 1)`.
    pub fn forward(&self, s: &mut Session, clip: Var) -> Result<Var> {
        if s.shape(clip) != self.config.input {
            return Err(Error::Config(format!(
                "clip shape {:?} does not match model input {:?}",
                s.shape(clip),
                self.config.input
            )));
        }
        let [_, _, s3] = self.encoder.forward(s, clip)?;
        let x = self.head_logits(s, s3)?;
        Ok(s.sigmoid(x))
    }

    /// Predictor head up to (excluding) the sigmoid.
    pub fn head_logits(&self, s: &mut Session, s3: Var) -> Result<Var> {
        let mut x = s3;
        for c in &self.conv_blocks {
            x = c.forward(s, x)?;
            x = s.gelu(x);
        }
        let shape = s.shape(x).to_vec();
        x = s.reshape(x, [shape[0], shape[1] * shape[2] * shape[3]])?;
        for l in &self.linear_blocks {
            x = l.forward(s, x)?;
            x = s.gelu(x);
        }
        let x = self.out.forward(s, x)?;
        let t = s.shape(x)[0];
        s.reshape(x, [t])
    }

    pub fn predict(&self, clip: &Tensor) -> Result<Vec<f32>> {
        let mut s = Session::eval(&self.store);
        let x = s.constant(clip.clone());
        let y = self.forward(&mut s, x)?;
        Ok(s.value(y).data().to_vec())
    }
}
