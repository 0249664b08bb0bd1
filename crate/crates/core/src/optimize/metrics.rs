//! Sparsity and contrast statistics of an illumination pattern.

use ndarray::Array2;
use serde::Serialize;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternMetrics {
    /// Strict local maxima (8-neighbourhood) above 10% of the peak.
    pub dot_count: usize,
    pub peak_to_mean: f64,
    pub gini: f64,
    /// Share of total energy held by the brightest 1% of samples (at least
    /// one sample).
    pub top1_energy: f64,
}

pub fn pattern_metrics<T: Real>(intensity: &Array2<T>) -> PatternMetrics {
    let vals: Vec<f64> = intensity.iter().map(|v| v.as_f64().max(0.0)).collect();
    let n = vals.len();
    let total: f64 = vals.iter().sum();
    let peak = vals.iter().copied().fold(0.0, f64::max);
    if n == 0 || total <= 0.0 {
        return PatternMetrics { dot_count: 0, peak_to_mean: 0.0, gini: 0.0, top1_energy: 0.0 };
    }
    let (h, w) = intensity.dim();
    let at = |y: usize, x: usize| vals[y * w + x];
    let threshold = 0.1 * peak;
    let mut dot_count = 0;
    for y in 0..h {
        for x in 0..w {
            let v = at(y, x);
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    if at(yy as usize, xx as usize) >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            dot_count += is_max as usize;
        }
    }
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let gini = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - nf - 1.0) * x)
        .sum::<f64>()
        / (nf * total);
    let k = (n as f64 * 0.01).ceil().max(1.0) as usize;
    let top: f64 = sorted.iter().rev().take(k).sum();
    PatternMetrics { dot_count, peak_to_mean: peak / (total / nf), gini, top1_energy: top / total }
}
