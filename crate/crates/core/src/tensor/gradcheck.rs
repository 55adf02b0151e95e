//! Central finite-difference checks against the analytic backward pass.

use super::init::{self, SeededRng};
use super::{Graph, Tensor, Var};
use crate::error::Result;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f32,
    pub rel_tol: f64,
    /// Coordinates per input that are perturbed (all if the input is smaller).
    pub max_coords: usize,
    /// Coordinates whose analytic gradient is below this fraction of the
    /// largest one are skipped; their finite differences are dominated by
    /// `f32` rounding.
    pub floor_fraction: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            rel_tol: 1e-2,
            max_coords: 24,
            floor_fraction: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose estimates at `step` and `2·step` disagree by more
    /// than half the tolerance; their finite difference is rounding noise.
    pub unstable: usize,
    pub failures: Vec<String>,
    pub worst_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, fd: [f64; 2], tol: f64) {
        let [numeric, coarse] = fd;
        let scale = |x: f64, y: f64| x.abs().max(y.abs()).max(1e-12);
        if (numeric - coarse).abs() / scale(numeric, coarse) > tol / 2.0 {
            self.unstable += 1;
            return;
        }
        let rel = (analytic - numeric).abs() / scale(analytic, numeric);
        self.checked += 1;
        self.worst_rel_err = self.worst_rel_err.max(rel);
        if rel > tol {
            self.failures.push(format!(
                "{}: analytic {analytic:.6e} numeric {numeric:.6e} rel {rel:.3e}",
                label()
            ));
        }
    }
}

/// Central differences at `h` and `2h` for one coordinate.
fn central(mut eval: impl FnMut(f32) -> Result<f64>, orig: f32, h: f32) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (k, step) in [h, 2.0 * h].into_iter().enumerate() {
        let up = eval(orig + step)?;
        let down = eval(orig - step)?;
        out[k] = (up - down) / (2.0 * step as f64);
    }
    Ok(out)
}

/// Compares analytic and numeric gradients of `Σ w·f(inputs)` where `w` is a
/// fixed random weighting drawn from `seed`.
pub fn check<F>(inputs: &[Tensor], f: F, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = init::rng(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let weights = init::uniform(g.shape(out).to_vec(), -1.0, 1.0, &mut rng);
    let loss = g.dot_const(out, weights.clone())?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g
            .value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum())
    };

    let global_max = analytic
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let floor = cfg.floor_fraction * global_max;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        let candidates: Vec<usize> = (0..grad.len())
            .filter(|&i| grad.data()[i].abs() as f64 > floor)
            .collect();
        for i in pick(&candidates, cfg.max_coords, &mut rng) {
            let orig = work[ti].data()[i];
            let fd = central(
                |v| {
                    work[ti].data_mut()[i] = v;
                    eval(&work)
                },
                orig,
                cfg.step,
            )?;
            work[ti].data_mut()[i] = orig;
            let a = grad.data()[i] as f64;
            report.record(|| format!("input {ti} coord {i}"), a, fd, cfg.rel_tol);
        }
    }
    Ok(report)
}

fn pick(candidates: &[usize], k: usize, rng: &mut SeededRng) -> Vec<usize> {
    if candidates.len() <= k {
        return candidates.to_vec();
    }
    let mut pool = candidates.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Finite-difference check of `Σ w·f(params)` with respect to sampled
/// coordinates of every parameter in `store`.
///
/// `max_coords` applies to the whole store. Candidates are drawn uniformly
/// from coordinates whose analytic gradient clears the floor.
pub fn check_store<F>(
    store: &crate::params::ParamStore,
    f: F,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut crate::params::Session) -> Result<Var>,
{
    use crate::params::Session;
    let mut rng = init::rng(seed);
    let mut s = Session::train(store);
    let out = f(&mut s)?;
    let weights = init::uniform(s.shape(out).to_vec(), -1.0, 1.0, &mut rng);
    let loss = s.dot_const(out, weights.clone())?;
    s.backward(loss)?;
    let grads = s.take_grads();
    drop(s);

    let global_max = grads
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let floor = cfg.floor_fraction * global_max;
    let mut candidates = Vec::new();
    for (pi, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            for (i, &v) in g.data().iter().enumerate() {
                if v.abs() as f64 > floor {
                    candidates.push((pi, i));
                }
            }
        }
    }
    let picks: Vec<(usize, usize)> = {
        let idx: Vec<usize> = (0..candidates.len()).collect();
        pick(&idx, cfg.max_coords, &mut rng)
            .into_iter()
            .map(|k| candidates[k])
            .collect()
    };

    let eval = |store: &crate::params::ParamStore| -> Result<f64> {
        let mut s = Session::eval(store);
        let out = f(&mut s)?;
        Ok(s.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum())
    };
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport::default();
    for (pi, i) in picks {
        let id = ids[pi];
        let orig = work.get(id).data()[i];
        let fd = central(
            |v| {
                work.get_mut(id).data_mut()[i] = v;
                eval(&work)
            },
            orig,
            cfg.step,
        )?;
        work.get_mut(id).data_mut()[i] = orig;
        let a = grads[pi].as_ref().unwrap().data()[i] as f64;
        report.record(|| format!("{}[{i}]", store.name(id)), a, fd, cfg.rel_tol);
    }
    Ok(report)
}
