use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcfPoint {
    pub lambda: f64,
    pub value: Complex64,
    /// `√((Var cos + Var sin)/n)`, never above `1/√n`.
    pub se: f64,
}

/// Empirical characteristic function `mean(e^{iλx})` on a grid.
pub fn empirical_cf(samples: &[f64], grid: &[f64]) -> Result<Vec<EcfPoint>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("empirical CF of an empty sample".into()));
    }
    let n = samples.len() as f64;
    Ok(grid
        .iter()
        .map(|&lambda| {
            let (mut c, mut s) = (0.0, 0.0);
            for &x in samples {
                let (si, co) = (lambda * x).sin_cos();
                c += co;
                s += si;
            }
            let value = Complex64::new(c / n, s / n);
            // E cos² + E sin² = 1
            let var = (1.0 - value.norm_sqr()).max(0.0);
            EcfPoint {
                lambda,
                value,
                se: (var / n).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfDistance {
    pub sup: f64,
    pub argmax: f64,
    pub profile: Vec<(f64, f64)>,
}

pub fn cf_distance(ecf: &[Complex64], model: &[Complex64], grid: &[f64]) -> Result<CfDistance> {
    if ecf.len() != grid.len() || model.len() != grid.len() {
        return Err(Error::param("grid", "CF tables must share the grid"));
    }
    let profile: Vec<(f64, f64)> = grid
        .iter()
        .zip(ecf.iter().zip(model))
        .map(|(&l, (a, b))| (l, (a - b).norm()))
        .collect();
    let (argmax, sup) = profile
        .iter()
        .copied()
        .fold((f64::NAN, 0.0), |acc, (l, d)| if d > acc.1 || acc.0.is_nan() { (l, d) } else { acc });
    Ok(CfDistance { sup, argmax, profile })
}

/// Mixture of Cauchy laws, the mixing variable entering scale and location
/// linearly: `φ(λ) = mean_j exp(-z_j (scale |λ| - i λ location))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyMixture {
    pub scale: f64,
    pub location: f64,
    pub mixing: Vec<f64>,
}

impl CauchyMixture {
    pub fn cf(&self, lambda: f64) -> Complex64 {
        let a = Complex64::new(self.scale * lambda.abs(), -lambda * self.location);
        let n = self.mixing.len() as f64;
        self.mixing.iter().map(|&z| (-z * a).exp()).sum::<Complex64>() / n
    }

    pub fn cf_on(&self, grid: &[f64]) -> Vec<Complex64> {
        grid.iter().map(|&l| self.cf(l)).collect()
    }
}

/// Least-sup-distance fit of a [`CauchyMixture`] with the given mixing
/// sample (typically the `Z_T` values of the same replicates).
pub fn fit_cauchy_mixture(samples: &[f64], mixing: &[f64], grid: &[f64]) -> Result<(CauchyMixture, CfDistance)> {
    if mixing.is_empty() || mixing.iter().any(|z| !(*z >= 0.0)) {
        return Err(Error::param("mixing", "mixing sample must be non-empty and non-negative"));
    }
    let ecf: Vec<Complex64> = empirical_cf(samples, grid)?.into_iter().map(|p| p.value).collect();
    let mz = median(mixing).max(1e-12);
    let med = median(samples);
    let mad = median(&samples.iter().map(|x| (x - med).abs()).collect::<Vec<_>>());
    let mut mix = CauchyMixture {
        scale: (mad / mz).max(1e-6),
        location: med / mz,
        mixing: mixing.to_vec(),
    };
    let objective = |ls: f64, loc: f64, mix: &mut CauchyMixture| {
        mix.scale = ls.exp();
        mix.location = loc;
        let model = mix.cf_on(grid);
        ecf.iter().zip(&model).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    };
    // Pattern search on (log scale, location).
    let (mut x, mut y) = (mix.scale.ln(), mix.location);
    let mut best = objective(x, y, &mut mix);
    let (mut hx, mut hy) = (1.0, (mix.scale).max(0.1));
    while hx > 1e-6 {
        let mut improved = false;
        for (dx, dy) in [(hx, 0.0), (-hx, 0.0), (0.0, hy), (0.0, -hy)] {
            let v = objective(x + dx, y + dy, &mut mix);
            if v < best {
                best = v;
                x += dx;
                y += dy;
                improved = true;
                break;
            }
        }
        if !improved {
            hx *= 0.5;
            hy *= 0.5;
        }
    }
    mix.scale = x.exp();
    mix.location = y;
    let d = cf_distance(&ecf, &mix.cf_on(grid), grid)?;
    Ok((mix, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Cauchy, Distribution, Normal};

    #[test]
    fn ecf_basics() {
        let e = empirical_cf(&[0.0; 5], &[-1.0, 0.5, 3.0]).unwrap();
        assert!(e.iter().all(|p| p.value == Complex64::new(1.0, 0.0) && p.se == 0.0));
        let xs = [0.3, -1.2, 2.5, 0.1];
        let e = empirical_cf(&xs, &[-0.7, 0.7]).unwrap();
        assert_eq!(e[0].value, e[1].value.conj());
        assert!(e.iter().all(|p| p.se <= 0.5));
        assert!(empirical_cf(&[], &[1.0]).is_err());
    }

    #[test]
    fn cauchy_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let c = Cauchy::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| c.sample(&mut rng)).collect();
        let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
        let e = empirical_cf(&xs, &grid).unwrap();
        let one = e.iter().find(|p| (p.lambda - 1.0).abs() < 1e-12).unwrap();
        assert!((one.value - Complex64::new((-1f64).exp(), 0.0)).norm() < 3.0 * one.se.max(1e-3));
        let model: Vec<Complex64> = grid.iter().map(|l| Complex64::new((-l.abs()).exp(), 0.0)).collect();
        let ev: Vec<Complex64> = e.iter().map(|p| p.value).collect();
        assert!(cf_distance(&ev, &model, &grid).unwrap().sup < 0.02);
        assert_eq!(cf_distance(&model, &model, &grid).unwrap().sup, 0.0);

        let g = Normal::new(0.0, 1.0).unwrap();
        let ys: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
        let ey: Vec<Complex64> = empirical_cf(&ys, &grid).unwrap().into_iter().map(|p| p.value).collect();
        assert!(cf_distance(&ey, &model, &grid).unwrap().sup > 0.1);
    }

    #[test]
    fn mixture_fit_recovers_parameters() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let zs: Vec<f64> = (0..4000).map(|i| 0.5 + (i % 7) as f64 * 0.3).collect();
        let xs: Vec<f64> = zs
            .iter()
            .map(|&z| Cauchy::new(0.4 * z, 1.5 * z).unwrap().sample(&mut rng))
            .collect();
        let grid: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.1).collect();
        let (fit, d) = fit_cauchy_mixture(&xs, &zs, &grid).unwrap();
        assert!((fit.scale - 1.5).abs() < 0.15, "{fit:?}");
        assert!((fit.location - 0.4).abs() < 0.15, "{fit:?}");
        assert!(d.sup < 0.05);
    }
}
