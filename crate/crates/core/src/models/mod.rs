//! The spectrogram forecaster and the occupancy-rate forecaster.

mod checkpoint;
mod config;
mod encoder;
mod linear;
mod stb;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use config::{parse_list, ModelConfig};
pub use encoder::Encoder;
pub use linear::SwinLinearModel;
pub use stb::{ConvT, SwinStbModel};

use crate::error::Result;
use crate::params::{ParamStore, Session};
use crate::tensor::Tensor;

/// Mean-pooled deepest encoder features of one clip, the embedding used for
/// domain distances.
pub fn encoder_features(encoder: &Encoder, store: &ParamStore, clip: &Tensor) -> Result<Vec<f64>> {
    let mut s = Session::eval(store);
    let x = s.constant(clip.clone());
    let [_, _, s3] = encoder.forward(&mut s, x)?;
    let v = s.value(s3);
    let c = *v.shape().last().unwrap();
    let rows = v.len() / c;
    let mut acc = vec![0.0f64; c];
    for row in v.data().chunks(c) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x as f64;
        }
    }
    Ok(acc.into_iter().map(|a| a / rows as f64).collect())
}

impl SwinStbModel {
    pub fn features(&self, clip: &Tensor) -> Result<Vec<f64>> {
        encoder_features(&self.encoder, &self.store, clip)
    }

    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        save_checkpoint(dir.as_ref(), ModelKind::Stb, &self.config, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Stb)?;
        let mut m = SwinStbModel::new(&ck.config, 0)?;
        m.store.copy_from(&ck.store)?;
        Ok(m)
    }
}

impl SwinLinearModel {
    pub fn features(&self, clip: &Tensor) -> Result<Vec<f64>> {
        encoder_features(&self.encoder, &self.store, clip)
    }

    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        save_checkpoint(dir.as_ref(), ModelKind::Sor, &self.config, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Sor)?;
        let mut m = SwinLinearModel::new(&ck.config, 0)?;
        m.store.copy_from(&ck.store)?;
        Ok(m)
    }
}
