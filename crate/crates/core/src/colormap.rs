//! The fixed 256-entry "jet-like" palette used for RGB spectrograms.

use std::sync::OnceLock;

const BREAKS: [(usize, [f64; 3]); 5] = [
    (0, [0.0, 0.0, 128.0]),
    (64, [0.0, 255.0, 255.0]),
    (128, [255.0, 255.0, 0.0]),
    (192, [255.0, 128.0, 0.0]),
    (255, [128.0, 0.0, 0.0]),
];

/// Palette entries scaled to `[0, 1]`.
pub fn lut() -> &'static [[f32; 3]; 256] {
    static LUT: OnceLock<[[f32; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut out = [[0.0f32; 3]; 256];
        for seg in BREAKS.windows(2) {
            let ((i0, c0), (i1, c1)) = (seg[0], seg[1]);
            for (i, entry) in out.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                let t = (i - i0) as f64 / (i1 - i0) as f64;
                for ch in 0..3 {
                    entry[ch] = ((c0[ch] + t * (c1[ch] - c0[ch])) / 255.0) as f32;
                }
            }
        }
        out
    })
}

/// Palette colour for a normalised intensity in `[0, 1]`.
pub fn apply(v: f32) -> [f32; 3] {
    lut()[level(v) as usize]
}

/// 8-bit level `round(v·255)` of a value clamped to `[0, 1]`.
pub fn level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

/// BT.601 luma.
pub fn luma(rgb: [f32; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

/// Intensity whose palette colour is nearest (Euclidean) to `rgb`.
///
/// Luma is not monotone along this palette, so RGB frames are mapped back to
/// intensity by palette lookup instead.
pub fn invert(rgb: [f32; 3]) -> f32 {
    let mut best = (f32::INFINITY, 0usize);
    for (i, e) in lut().iter().enumerate() {
        let d = (0..3).map(|c| (e[c] - rgb[c]).powi(2)).sum::<f32>();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1 as f32 / 255.0
}

/// Intensity plane of a frame stored as `H×W×ch` (ch 1 or 3).
pub fn intensity(frame: &[f32], ch: usize) -> Vec<f32> {
    match ch {
        1 => frame.to_vec(),
        _ => frame
            .chunks(ch)
            .map(|p| invert([p[0], p[1], p[2]]))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakpoints_are_exact() {
        let l = lut();
        assert_eq!(l[0], [0.0, 0.0, 128.0 / 255.0]);
        assert_eq!(l[64], [0.0, 1.0, 1.0]);
        assert_eq!(l[128], [1.0, 1.0, 0.0]);
        assert_eq!(l[192], [1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(l[255], [128.0 / 255.0, 0.0, 0.0]);
    }

    #[test]
    fn inversion_recovers_every_level() {
        for i in 0..=255u8 {
            let v = i as f32 / 255.0;
            assert_eq!(level(invert(apply(v))), i);
        }
    }
}
