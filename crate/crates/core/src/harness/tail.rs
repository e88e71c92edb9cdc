use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailSide {
    Positive,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate {
    pub index: f64,
    pub se: f64,
    pub k: usize,
    /// Estimates over `k ∈ {n/200, n/100, n/50, n/20}` (where `k ≥ 2`).
    pub sensitivity: Vec<(usize, f64)>,
}

fn hill_sorted_desc(desc: &[f64], k: usize) -> f64 {
    let xk = desc[k];
    let s: f64 = desc[..k].iter().map(|x| (x / xk).ln()).sum();
    k as f64 / s
}

/// Hill estimator of the tail index over the top `k` order statistics.
pub fn hill_index(samples: &[f64], k: usize, side: TailSide) -> Result<HillEstimate> {
    let mut desc: Vec<f64> = match side {
        TailSide::Positive => samples.iter().copied().filter(|x| *x > 0.0).collect(),
        TailSide::Absolute => samples.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect(),
    };
    let n = desc.len();
    if k < 2 || 2 * k >= n {
        return Err(Error::InsufficientSamples(format!(
            "Hill estimator needs 2 ≤ k < n/2, got k = {k} with {n} usable samples"
        )));
    }
    desc.sort_by(|a, b| b.total_cmp(a));
    let index = hill_sorted_desc(&desc, k);
    let sensitivity = [200, 100, 50, 20]
        .iter()
        .map(|d| samples.len() / d)
        .filter(|&kk| kk >= 2 && 2 * kk < n)
        .map(|kk| (kk, hill_sorted_desc(&desc, kk)))
        .collect();
    Ok(HillEstimate {
        index,
        se: index / (k as f64).sqrt(),
        k,
        sensitivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pareto(alpha: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 0.5) / n as f64).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn pareto_and_exponential_oracles() {
        let h = hill_index(&pareto(1.0, 100_000), 1000, TailSide::Positive).unwrap();
        assert!((h.index - 1.0).abs() < 0.1);
        assert_eq!(h.sensitivity.len(), 4);
        let h = hill_index(&pareto(2.0, 100_000), 1000, TailSide::Absolute).unwrap();
        assert!((h.index - 2.0).abs() < 0.2);
        let expo: Vec<f64> = (0..100_000).map(|i| -((i as f64 + 0.5) / 1e5).ln()).collect();
        assert!(hill_index(&expo, 1000, TailSide::Positive).unwrap().index > 3.0);
        assert!(hill_index(&expo, 60_000, TailSide::Positive).is_err());
    }
}
