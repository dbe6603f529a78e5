//! Conjugate full-conditional draws.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Draw from `InverseGamma(shape, scale)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive inverse-gamma shape");
    scale / g.sample(rng)
}

/// Draw from `Gamma(shape, rate)`.
pub fn gibbs_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

/// Residual variance given residuals and an `IG(a, b)` prior:
/// draws `IG(a + n/2, b + SSR/2)`.
pub fn gibbs_sigma2<R: Rng + ?Sized>(residuals: &[f64], prior: (f64, f64), rng: &mut R) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Domain("residual variance update needs at least one residual".into()));
    }
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(gibbs_sigma2_ssr(ssr, residuals.len(), prior, rng))
}

/// Same as [`gibbs_sigma2`] from a precomputed sum of squares.
pub fn gibbs_sigma2_ssr<R: Rng + ?Sized>(ssr: f64, n: usize, prior: (f64, f64), rng: &mut R) -> f64 {
    inverse_gamma(prior.0 + 0.5 * n as f64, prior.1 + 0.5 * ssr, rng)
}

/// Covariance of `n` zero-mean random-effect vectors with scatter `S`, under an
/// inverse-Wishart `(scale, df)` prior: draws `IW(df + n, scale + S)` with the
/// Bartlett decomposition.
pub fn gibbs_invwishart<R: Rng + ?Sized>(
    scatter: &DMatrix<f64>,
    scale: &DMatrix<f64>,
    df: f64,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scatter.nrows();
    if scatter.ncols() != d || scale.shape() != (d, d) {
        return Err(Error::Domain("inverse-Wishart matrices must be square and conformable".into()));
    }
    let tol = 1e-10 * (1.0 + scatter.amax());
    if (scatter - scatter.transpose()).amax() > tol {
        return Err(Error::Domain("scatter matrix is not symmetric".into()));
    }
    let nu = df + n as f64;
    if nu <= (d as f64) - 1.0 {
        return Err(Error::Domain(format!("inverse-Wishart degrees of freedom {nu} too small for dimension {d}")));
    }
    let psi = scale + scatter;
    let psi = 0.5 * (&psi + psi.transpose());
    // W ~ Wishart(nu, psi^-1), Σ = W^-1
    let psi_inv = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is not positive definite".into()))?
        .inverse();
    let l = psi_inv
        .cholesky()
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is not positive definite".into()))?
        .unpack();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).expect("positive chi-square degrees of freedom");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    let sigma = w
        .cholesky()
        .ok_or_else(|| Error::Numerical("Wishart draw is singular".into()))?
        .inverse();
    Ok(0.5 * (&sigma + sigma.transpose()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::samplers::stream_rng;
    use statrs::distribution::{ContinuousCDF, InverseGamma};

    /// Kolmogorov–Smirnov distance between a sample and a CDF.
    pub(crate) fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sigma2_rejects_empty_residuals() {
        let mut rng = stream_rng(1, 0);
        assert!(gibbs_sigma2(&[], (1.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn sigma2_mean_matches_inverse_gamma() {
        let mut rng = stream_rng(2, 0);
        let n = 6;
        let res = vec![0.0; n];
        let draws: Vec<f64> = (0..100_000).map(|_| gibbs_sigma2(&res, (1.0, 1.0), &mut rng).unwrap()).collect();
        // IG(1 + n/2, 1): mean 1/(n/2), variance mean²/(shape − 2)
        let shape = 1.0 + n as f64 / 2.0;
        let mean = 1.0 / (shape - 1.0);
        let sd = (mean * mean / (shape - 2.0)).sqrt();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((m - mean).abs() < 3.0 * sd / (draws.len() as f64).sqrt(), "{m} vs {mean}");
    }

    #[test]
    fn sigma2_matches_full_conditional_ks() {
        let mut rng = stream_rng(3, 0);
        let res = [0.3, -1.2, 0.8, 0.1, -0.4, 2.0, -0.7];
        let ssr: f64 = res.iter().map(|r| r * r).sum();
        let draws: Vec<f64> = (0..10_000).map(|_| gibbs_sigma2(&res, (0.5, 0.2), &mut rng).unwrap()).collect();
        let ig = InverseGamma::new(0.5 + res.len() as f64 / 2.0, 0.2 + ssr / 2.0).unwrap();
        assert!(ks_distance(draws, |x| ig.cdf(x)) < 0.02);
    }

    #[test]
    fn invwishart_dimension_one_is_inverse_gamma() {
        let mut rng = stream_rng(4, 0);
        let s = DMatrix::from_element(1, 1, 2.5);
        let v = DMatrix::from_element(1, 1, 1.0);
        let (df, n) = (1.0, 7);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| gibbs_invwishart(&s, &v, df, n, &mut rng).unwrap()[(0, 0)])
            .collect();
        let ig = InverseGamma::new((df + n as f64) / 2.0, (1.0 + 2.5) / 2.0).unwrap();
        assert!(ks_distance(draws, |x| ig.cdf(x)) < 0.02);
    }

    #[test]
    fn invwishart_mean_matches_analytic() {
        let mut rng = stream_rng(5, 0);
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let v = DMatrix::<f64>::identity(2, 2);
        let (df, n) = (2.0, 10);
        let m = 100_000;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sumsq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..m {
            let d = gibbs_invwishart(&s, &v, df, n, &mut rng).unwrap();
            assert!(d.clone().cholesky().is_some());
            sumsq += d.component_mul(&d);
            sum += d;
        }
        let mean = &sum / m as f64;
        let want = (&v + &s) / (df + n as f64 - 2.0 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let var = sumsq[(i, j)] / m as f64 - mean[(i, j)].powi(2);
                let se = (var / m as f64).sqrt();
                assert!((mean[(i, j)] - want[(i, j)]).abs() < 4.0 * se, "({i},{j}) {} vs {}", mean[(i, j)], want[(i, j)]);
            }
        }
    }

    #[test]
    fn invwishart_rejects_asymmetric_scatter() {
        let mut rng = stream_rng(6, 0);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let v = DMatrix::<f64>::identity(2, 2);
        assert!(gibbs_invwishart(&s, &v, 2.0, 3, &mut rng).is_err());
    }

    #[test]
    fn invwishart_zero_count_is_prior_draw() {
        let s = DMatrix::<f64>::zeros(2, 2);
        let v = DMatrix::<f64>::identity(2, 2);
        let d = gibbs_invwishart(&s, &v, 3.0, 0, &mut stream_rng(7, 0)).unwrap();
        assert!(d.cholesky().is_some());
    }
}
