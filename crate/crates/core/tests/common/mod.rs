//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

/// Generalized dice loss by plain nested loops over classes, rows and columns.
pub fn scalar_gdl(p: &[Vec<Vec<f64>>], labels: &[Vec<u8>]) -> f64 {
    let k = p.len();
    let (h, w) = (labels.len(), labels[0].len());
    let mut weights = vec![0.0; k];
    for (c, wc) in weights.iter_mut().enumerate() {
        let mut n = 0.0;
        for row in labels {
            for &l in row {
                if l as usize == c {
                    n += 1.0;
                }
            }
        }
        if n > 0.0 {
            *wc = 1.0 / (n * n);
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..k {
        for y in 0..h {
            for x in 0..w {
                let g = if labels[y][x] as usize == c { 1.0 } else { 0.0 };
                let v = p[c][y][x];
                num += weights[c] * v * g;
                den += weights[c] * (v * v + g * g);
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * num / den
    }
}

/// Per-pixel confusion counts `(tp, fp, fn, tn)` for one structure, where
/// `member` decides whether a label belongs to it.
pub fn brute_counts(pred: &[u8], gt: &[u8], member: impl Fn(u8) -> bool) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        match (member(pred[i]), member(gt[i])) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// `[DC, JC, Sen, Sp]` straight from the count ratios; `None` when a
/// denominator is zero.
pub fn brute_ratios((tp, fp, fn_, tn): (u64, u64, u64, u64)) -> [Option<f64>; 4] {
    let r = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
    [
        r(2 * tp, 2 * tp + fp + fn_),
        r(tp, tp + fp + fn_),
        r(tp, tp + fn_),
        r(tn, tn + fp),
    ]
}
