//! Squared maximum mean discrepancy with a Gaussian kernel.

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled sets; 1 if all points
/// coincide.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut k: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| (-gamma * sq_dist(x, y)).exp()))
        .collect();
    // a fixed summation order makes the estimate symmetric bit for bit
    k.sort_by(f64::total_cmp);
    k.iter().sum::<f64>() / k.len() as f64
}

/// Biased estimate `mean k(a,a') + mean k(b,b') - 2 mean k(a,b)` with
/// bandwidth set by the median heuristic.
pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("MMD needs two nonempty feature sets".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::Data(format!("MMD feature vectors must all have dimension {dim}")));
    }
    let sigma = median_bandwidth(a, b);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (kaa, kbb, kab) = (mean_kernel(a, a, gamma), mean_kernel(b, b, gamma), mean_kernel(a, b, gamma));
    Ok((kaa + kbb - 2.0 * kab).max(0.0))
}
