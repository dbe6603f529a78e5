//! Posterior summaries and convergence checks.

use serde::{Deserialize, Serialize};

/// Split-R̂ threshold above which a parameter is flagged.
pub const RHAT_WARN: f64 = 1.1;

/// Mean, SD and central 95% interval of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    #[serde(rename = "ci2.5")]
    pub lo: f64,
    #[serde(rename = "ci97.5")]
    pub hi: f64,
}

impl Summary {
    pub fn of(draws: &[f64]) -> Self {
        let n = draws.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, lo: f64::NAN, hi: f64::NAN };
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { mean, sd, lo: quantile(&sorted, 0.025), hi: quantile(&sorted, 0.975) }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Split-R̂ over equal-length chains. Every chain is cut in half and the
/// halves are compared as separate chains. Constant draws give 1.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = pieces
        .iter()
        .zip(&means)
        .map(|(p, m)| p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let m = pieces.len() as f64;
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}
