//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: store
                .iter()
                .map(|(_, t)| (vec![0.0; t.len()], vec![0.0; t.len()]))
                .collect(),
        }
    }

    /// One update. Parameters without a gradient are left untouched,
    /// including by weight decay.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if !g.all_finite() {
                    let bad = g.data().iter().filter(|v| !v.is_finite()).count();
                    return Err(Error::Numeric(format!(
                        "{bad} non-finite gradient entries in {} at step {}",
                        store.name(id),
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = &mut self.moments[k];
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] as f64;
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let decayed = p[i] as f64 * (1.0 - c.lr * c.weight_decay);
                p[i] = (decayed - c.lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new([1], vec![v]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.update(&mut s, &[Some(Tensor::zeros([1]))]).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.5f32, -3.0] {
            let mut s = scalar_store(1.0);
            let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
            let mut opt = AdamW::new(&s, cfg);
            opt.update(&mut s, &[Some(Tensor::new([1], vec![g]).unwrap())]).unwrap();
            let want = 1.0 - cfg.lr * g as f64 / (g.abs() as f64 + cfg.eps);
            assert!((s.by_name("w").unwrap().data()[0] as f64 - want).abs() < 1e-7);
        }
    }

    #[test]
    fn decay_alone_shrinks_geometrically() {
        let mut s = scalar_store(2.0);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(&s, cfg);
        for _ in 0..3 {
            opt.update(&mut s, &[Some(Tensor::zeros([1]))]).unwrap();
        }
        assert!((s.by_name("w").unwrap().data()[0] as f64 - 2.0 * 0.95f64.powi(3)).abs() < 1e-6);
    }

    #[test]
    fn vanishing_lr_leaves_parameters() {
        let mut s = scalar_store(1.5);
        let mut opt = AdamW::new(&s, AdamWConfig { lr: 0.0, ..Default::default() });
        opt.update(&mut s, &[Some(Tensor::new([1], vec![4.0]).unwrap())]).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[1.5]);
    }

    #[test]
    fn non_finite_gradient_aborts_before_any_change() {
        let mut s = scalar_store(1.0);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let err = opt.update(&mut s, &[Some(Tensor::new([1], vec![f32::NAN]).unwrap())]).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains('w')));
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0]);
        assert_eq!(opt.step, 0);
    }
}
