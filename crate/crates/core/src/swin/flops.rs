//! Attention cost formulas for global and windowed self-attention.

/// Global attention over `p·h·w` tokens of width `c`: `4phwC² + 2(phw)²C`.
pub fn flops_msa(p: u64, h: u64, w: u64, c: u64) -> u64 {
    let n = p * h * w;
    4 * n * c * c + 2 * n * n * c
}

/// Windowed attention with `(P, M, M)` windows: `4phwC² + 2PM²·phw·C`.
pub fn flops_wmsa(p: u64, h: u64, w: u64, c: u64, win_p: u64, win_m: u64) -> u64 {
    let n = p * h * w;
    4 * n * c * c + 2 * win_p * win_m * win_m * n * c
}

/// The token-mixing part of [`flops_wmsa`] alone (`QKᵀ` plus `AV`).
pub fn wmsa_attention_term(p: u64, h: u64, w: u64, c: u64, win_p: u64, win_m: u64) -> u64 {
    2 * win_p * win_m * win_m * p * h * w * c
}
