//! Synthetic multi-marker competing-risks data with known truth.
//!
//! Markers follow `Y = (β_0 + b_0) + (β_1 + b_1) s + ε` on the grid
//! `{0, 0.1, …, 2}` truncated at the observed time; random effects of all
//! markers are jointly Gaussian with the block covariance of
//! [`build_covariance`]. Latent times per cause are drawn by inverting the
//! cumulative hazard at an `Exp(1)` draw; the observed time is the minimum of
//! the latent times and censoring.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::{LongitudinalDataset, MarkerModelSpec, Measurement, SubjectRecord};
use crate::samplers::stream_rng;

/// How the marker and covariate effects are shared between the two causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectPattern {
    /// Identical effects on both causes.
    Common,
    /// Markers act on cause 1 only; covariates on both.
    #[serde(rename = "single-cause-1")]
    SingleCause1,
    /// Disjoint markers and covariates for each cause.
    SingleBoth,
    /// Same variables, opposite signs.
    Opposite,
}

impl std::str::FromStr for EffectPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown effect pattern `{s}` (common, single-cause-1, single-both, opposite)")))
    }
}

impl std::fmt::Display for EffectPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("serializable");
        f.write_str(s.as_str().expect("string variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub n_markers: usize,
    /// Standard-normal covariates, listed first.
    pub n_gaussian_covariates: usize,
    /// Bernoulli(0.5) covariates, listed after the Gaussian ones.
    pub n_binary_covariates: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub alpha_star: f64,
    pub gamma_star: f64,
    pub pattern: EffectPattern,
    pub beta: [f64; 2],
    /// Constant baseline hazard per cause.
    pub baseline: Vec<f64>,
    pub grid_step: f64,
    pub grid_max: f64,
    /// Administrative censoring time.
    pub admin_censoring: f64,
    /// Early censoring `Uniform(lo, hi)`.
    pub censoring_uniform: (f64, f64),
    /// Training share of the subject-level split.
    pub train_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_subjects: 600,
            n_markers: 10,
            n_gaussian_covariates: 12,
            n_binary_covariates: 12,
            sigma2: 0.5,
            rho: 0.1,
            alpha_star: 1.0,
            gamma_star: 1.0,
            pattern: EffectPattern::Common,
            beta: [-0.5, 0.5],
            baseline: vec![0.22, 0.22],
            grid_step: 0.1,
            grid_max: 2.0,
            admin_censoring: 2.0,
            censoring_uniform: (0.5, 2.5),
            train_fraction: 0.5,
        }
    }
}

impl ScenarioConfig {
    pub fn n_covariates(&self) -> usize {
        self.n_gaussian_covariates + self.n_binary_covariates
    }

    pub fn n_causes(&self) -> usize {
        self.baseline.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::Config("a scenario needs at least 2 subjects".into()));
        }
        if self.n_markers < 4 || self.n_gaussian_covariates < 2 || self.n_binary_covariates < 2 {
            return Err(Error::Config("effect patterns need ≥ 4 markers and ≥ 2 covariates of each kind".into()));
        }
        if self.n_causes() != 2 {
            return Err(Error::Config("effect patterns are defined for 2 causes".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if !(self.sigma2 > 0.0) || self.baseline.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("residual variance and baseline hazards must be positive".into()));
        }
        if !(self.grid_step > 0.0 && self.grid_max >= 0.0 && self.admin_censoring > 0.0) {
            return Err(Error::Config("invalid measurement grid or censoring time".into()));
        }
        let (lo, hi) = self.censoring_uniform;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::Config("censoring interval must satisfy 0 ≤ lo < hi".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// True `(γ_l, α_l)` per cause for the configured pattern.
    pub fn coefficients(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (a, g) = (self.alpha_star, self.gamma_star);
        let k = self.n_markers;
        let ng = self.n_gaussian_covariates;
        let p = self.n_covariates();
        let alpha = |v: [f64; 4]| {
            let mut out = vec![0.0; k];
            out[..4].copy_from_slice(&v);
            out
        };
        // two Gaussian and two binary covariates carry effects
        let gamma = |v: [f64; 4]| {
            let mut out = vec![0.0; p];
            out[0] = v[0];
            out[1] = v[1];
            out[ng] = v[2];
            out[ng + 1] = v[3];
            out
        };
        let common_a = alpha([-a, -a, a, a]);
        let common_g = gamma([g, -g, g, -g]);
        match self.pattern {
            EffectPattern::Common => (vec![common_g.clone(), common_g], vec![common_a.clone(), common_a]),
            EffectPattern::SingleCause1 => (vec![common_g.clone(), common_g], vec![common_a, vec![0.0; k]]),
            EffectPattern::SingleBoth => (
                vec![gamma([g, g, 0.0, 0.0]), gamma([0.0, 0.0, g, g])],
                vec![alpha([a, a, 0.0, 0.0]), alpha([0.0, 0.0, a, a])],
            ),
            EffectPattern::Opposite => (
                vec![common_g, gamma([-g, g, -g, g])],
                vec![common_a, alpha([a, a, -a, -a])],
            ),
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.n_covariates()).map(|j| format!("w{j}")).collect()
    }

    pub fn marker_names(&self) -> Vec<String> {
        (1..=self.n_markers).map(|k| format!("y{k}")).collect()
    }
}

/// Random-effect covariance for `n_markers` linear markers: `[[1, .5], [.5, 1]]`
/// blocks on the diagonal and `ρ·J₂` blocks elsewhere.
pub fn build_covariance(rho: f64, n_markers: usize) -> Result<DMatrix<f64>> {
    let d = 2 * n_markers;
    let m = DMatrix::from_fn(d, d, |r, c| {
        if r / 2 == c / 2 {
            if r == c {
                1.0
            } else {
                0.5
            }
        } else {
            rho
        }
    });
    if m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("random-effect covariance is not positive definite for rho = {rho}")));
    }
    Ok(m)
}

/// Smallest root of `cum(t) = target` on `[0, hi]` by bisection, or `None`
/// when `cum(hi) < target`. `cum` must be nondecreasing.
pub fn invert_cumulative(cum: impl Fn(f64) -> f64, target: f64, hi: f64, tol: f64) -> Option<f64> {
    if !(cum(hi) >= target) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if cum(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `∫_0^t λ₀ e^{A + Bu} du`.
pub fn exp_linear_cumulative(lambda0: f64, a: f64, b: f64, t: f64) -> f64 {
    if b.abs() < 1e-12 {
        lambda0 * a.exp() * t
    } else {
        lambda0 * a.exp() * (b * t).exp_m1() / b
    }
}

/// Everything used to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub gamma: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// `marker_mask[l][k]`: marker `k` truly affects cause `l`.
    pub marker_mask: Vec<Vec<bool>>,
    pub covariate_mask: Vec<Vec<bool>>,
    /// Realized event shares: `[censored, cause 1, cause 2]`.
    pub event_shares: Vec<f64>,
    pub subject_ids: Vec<String>,
    /// `random_effects[i][k] = (b_0, b_1)`.
    pub random_effects: Vec<Vec<[f64; 2]>>,
}

impl Truth {
    /// Truth for a subset of subjects by id.
    pub fn random_effects_of(&self, id: &str) -> Option<&[[f64; 2]]> {
        self.subject_ids.iter().position(|s| s == id).map(|i| self.random_effects[i].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: LongitudinalDataset,
    pub truth: Truth,
}

/// Draw one dataset.
pub fn simulate_dataset(cfg: &ScenarioConfig, seed: u64) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0);
    let k = cfg.n_markers;
    let (gamma, alpha) = cfg.coefficients();
    let chol = build_covariance(cfg.rho, k)?.cholesky().expect("checked above").unpack();
    let noise_sd = cfg.sigma2.sqrt();
    let censor = Uniform::new(cfg.censoring_uniform.0, cfg.censoring_uniform.1).map_err(|e| Error::Config(e.to_string()))?;
    let n_grid = (cfg.grid_max / cfg.grid_step + 1e-9).floor() as usize;

    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut truth_b = Vec::with_capacity(cfg.n_subjects);
    let mut counts = vec![0usize; cfg.n_causes() + 1];
    let width = cfg.n_subjects.to_string().len();
    for i in 0..cfg.n_subjects {
        let z: Vec<f64> = (0..2 * k).map(|_| rng.sample(StandardNormal)).collect();
        let b = &chol * nalgebra::DVector::from_vec(z);
        let bk: Vec<[f64; 2]> = (0..k).map(|m| [b[2 * m], b[2 * m + 1]]).collect();
        let mut w: Vec<f64> = (0..cfg.n_gaussian_covariates).map(|_| rng.sample(StandardNormal)).collect();
        w.extend((0..cfg.n_binary_covariates).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64));

        // exponent A_l + B_l t
        let mut latent = Vec::with_capacity(cfg.n_causes());
        for l in 0..cfg.n_causes() {
            let mut a = gamma[l].iter().zip(&w).map(|(g, x)| g * x).sum::<f64>();
            let mut slope = 0.0;
            for m in 0..k {
                a += alpha[l][m] * (cfg.beta[0] + bk[m][0]);
                slope += alpha[l][m] * (cfg.beta[1] + bk[m][1]);
            }
            let e: f64 = Exp1.sample(&mut rng);
            let lam0 = cfg.baseline[l];
            latent.push(invert_cumulative(|t| exp_linear_cumulative(lam0, a, slope, t), e, 50.0, 1e-10).unwrap_or(f64::INFINITY));
        }
        let c = censor.sample(&mut rng).min(cfg.admin_censoring);
        let (mut time, mut cause) = (c, 0);
        for (l, &t) in latent.iter().enumerate() {
            if t < time {
                time = t;
                cause = l + 1;
            }
        }
        counts[cause] += 1;
        let series: Vec<Vec<Measurement>> = (0..k)
            .map(|m| {
                (0..=n_grid)
                    .map(|j| j as f64 * cfg.grid_step)
                    .filter(|&s| s <= time)
                    .map(|s| {
                        let eta = cfg.beta[0] + bk[m][0] + (cfg.beta[1] + bk[m][1]) * s;
                        let eps: f64 = rng.sample(StandardNormal);
                        Measurement { time: s, value: eta + noise_sd * eps }
                    })
                    .collect()
            })
            .collect();
        subjects.push(SubjectRecord {
            id: format!("s{:0width$}", i + 1),
            event_time: time,
            cause,
            covariates: w,
            series,
        });
        truth_b.push(bk);
    }
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let markers = cfg.marker_names().into_iter().map(MarkerModelSpec::linear).collect();
    let data = LongitudinalDataset::new(subjects, markers, cfg.covariate_names(), cfg.n_causes())?;
    let n = cfg.n_subjects as f64;
    let truth = Truth {
        config: cfg.clone(),
        seed,
        marker_mask: alpha.iter().map(|a| a.iter().map(|v| *v != 0.0).collect()).collect(),
        covariate_mask: gamma.iter().map(|g| g.iter().map(|v| *v != 0.0).collect()).collect(),
        gamma,
        alpha,
        event_shares: counts.iter().map(|c| *c as f64 / n).collect(),
        subject_ids: ids,
        random_effects: truth_b,
    };
    Ok(SimulatedData { data, truth })
}

/// Subject-level random partition into `(train, validation)` with
/// `round(fraction × N)` training subjects.
pub fn split_train_validation(data: &LongitudinalDataset, train_fraction: f64, seed: u64) -> Result<(LongitudinalDataset, LongitudinalDataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config("train fraction must lie in [0, 1]".into()));
    }
    let n = data.n_subjects();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 1));
    let n_train = (train_fraction * n as f64).round() as usize;
    let (mut tr, mut va) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    tr.sort_unstable();
    va.sort_unstable();
    Ok((data.subset(&tr), data.subset(&va)))
}
