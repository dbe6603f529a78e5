//! Stage 1: one joint model per marker.
//!
//! Each fit couples the linear mixed model of one marker with cause-specific
//! hazards that depend on the marker's current value, so informative dropout is
//! accounted for before any selection happens. The fit yields posterior means
//! `θ̂_k` and, per subject, predicted random effects `b̂_ik` that define the
//! plug-in trajectories used in Stage 2.
//!
//! Sampler blocks, in sweep order:
//! - subject means `μ_i = β + b_i`: independence Metropolis from the Gaussian
//!   (longitudinal × prior) conditional, then a random-walk step; both need only
//!   the survival term in the acceptance ratio;
//! - `β | μ` and `Σ | μ, β`: conjugate (normal and inverse-Wishart);
//! - `σ²`: conjugate inverse-gamma;
//! - `α_l` and each `γ_lj`: adaptive random-walk Metropolis;
//! - baseline heights: conjugate gamma, exact because the quadrature
//!   cumulative hazard is linear in each height.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{PiecewiseBaseline, TrajectoryProvider};
use crate::longitudinal::{linear_predictor, subjects_with_marker, LongitudinalDataset, MarkerModelSpec, Measurement, SubjectRecord};
use crate::quadrature::Quadrature;
use crate::samplers::conjugate::{gibbs_gamma, gibbs_invwishart, gibbs_sigma2_ssr};
use crate::samplers::diagnostics::{split_rhat, Summary, RHAT_WARN};
use crate::samplers::mh::{accept, AdaptiveScale};
use crate::samplers::{stream_rng, McmcConfig, PriorConfig};

/// Baseline partition and quadrature shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub n_intervals: usize,
    /// Last knot as a multiple of the largest observed time.
    pub horizon_factor: f64,
    pub quadrature_nodes: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            n_intervals: 5,
            horizon_factor: 1.01,
            quadrature_nodes: crate::quadrature::DEFAULT_NODES,
        }
    }
}

impl BaselineSettings {
    /// Knots at quantiles of the observed event times of `data`.
    pub fn knots(&self, data: &LongitudinalDataset) -> Result<Vec<f64>> {
        let events: Vec<f64> = data.subjects().iter().filter(|s| s.cause > 0).map(|s| s.event_time).collect();
        PiecewiseBaseline::quantile_knots(&events, data.max_time(), self.n_intervals, self.horizon_factor)
    }
}

/// Per-subject random-effect prediction runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionSettings {
    /// Kept Metropolis draws per subject.
    pub draws: usize,
    pub burnin: usize,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        Self { draws: 500, burnin: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Settings {
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    pub baseline: BaselineSettings,
    pub prediction: PredictionSettings,
}

/// One draw (or the posterior mean) of a one-marker joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneMarkerParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Random-effect covariance, row-major `q × q`.
    pub cov: Vec<Vec<f64>>,
    /// `gamma[l][j]`.
    pub gamma: Vec<Vec<f64>>,
    /// `alpha[l]`.
    pub alpha: Vec<f64>,
    /// `baseline[l][κ]`.
    pub baseline: Vec<Vec<f64>>,
}

impl OneMarkerParams {
    /// Named scalar view, used for summaries and R̂.
    fn flatten(&self, covariate_names: &[String]) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (j, b) in self.beta.iter().enumerate() {
            out.push((format!("beta[{j}]"), *b));
        }
        out.push(("sigma2".into(), self.sigma2));
        for (r, row) in self.cov.iter().enumerate() {
            for (c, v) in row.iter().enumerate().skip(r) {
                out.push((format!("Sigma[{r},{c}]"), *v));
            }
        }
        for l in 0..self.alpha.len() {
            out.push((format!("alpha[{}]", l + 1), self.alpha[l]));
            for (j, g) in self.gamma[l].iter().enumerate() {
                out.push((format!("gamma[{},{}]", l + 1, covariate_names[j]), *g));
            }
            for (k, h) in self.baseline[l].iter().enumerate() {
                out.push((format!("lambda[{},{}]", l + 1, k + 1), *h));
            }
        }
        out
    }

    fn mean_of(draws: &[OneMarkerParams]) -> Self {
        let n = draws.len() as f64;
        let mut m = draws[0].clone();
        let add = |acc: &mut Vec<f64>, x: &[f64]| acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        let zero = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = 0.0);
        zero(&mut m.beta);
        m.sigma2 = 0.0;
        m.cov.iter_mut().for_each(zero);
        m.gamma.iter_mut().for_each(zero);
        zero(&mut m.alpha);
        m.baseline.iter_mut().for_each(zero);
        for d in draws {
            add(&mut m.beta, &d.beta);
            m.sigma2 += d.sigma2;
            m.cov.iter_mut().zip(&d.cov).for_each(|(a, b)| add(a, b));
            m.gamma.iter_mut().zip(&d.gamma).for_each(|(a, b)| add(a, b));
            add(&mut m.alpha, &d.alpha);
            m.baseline.iter_mut().zip(&d.baseline).for_each(|(a, b)| add(a, b));
        }
        let div = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= n);
        div(&mut m.beta);
        m.sigma2 /= n;
        m.cov.iter_mut().for_each(div);
        m.gamma.iter_mut().for_each(div);
        div(&mut m.alpha);
        m.baseline.iter_mut().for_each(div);
        m
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let q = self.cov.len();
        DMatrix::from_fn(q, q, |r, c| self.cov[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rhat: BTreeMap<String, f64>,
    pub max_rhat: f64,
    pub acceptance: BTreeMap<String, f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    pub(crate) fn from_rhat(rhat: BTreeMap<String, f64>, acceptance: BTreeMap<String, f64>, context: &str) -> Self {
        let max_rhat = rhat.values().copied().filter(|v| v.is_finite()).fold(1.0, f64::max);
        let mut warnings = Vec::new();
        let bad: Vec<&str> = rhat.iter().filter(|(_, v)| !(**v <= RHAT_WARN)).map(|(k, _)| k.as_str()).collect();
        if !bad.is_empty() {
            let msg = format!("{context}: split-R̂ above {RHAT_WARN} for {}", bad.join(", "));
            warn!("{msg}");
            warnings.push(msg);
        }
        Self { converged: warnings.is_empty(), rhat, max_rhat, acceptance, warnings }
    }
}

/// Result of a one-marker joint fit. Serialized as one JSON file per marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneMarkerFit {
    pub marker_index: usize,
    pub marker: MarkerModelSpec,
    pub covariate_names: Vec<String>,
    pub knots: Vec<f64>,
    pub quadrature_nodes: usize,
    /// Posterior means `θ̂_k`.
    pub mean: OneMarkerParams,
    pub summaries: BTreeMap<String, Summary>,
    /// Subjects retained for this marker, with their predicted random effects.
    pub subject_ids: Vec<String>,
    pub random_effects: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    /// Kept draws `ℒ = chains × kept_per_chain`; not serialized.
    #[serde(skip)]
    pub draws: Vec<OneMarkerParams>,
}

impl OneMarkerFit {
    pub fn n_causes(&self) -> usize {
        self.mean.alpha.len()
    }

    /// Predicted random effects of a retained subject.
    pub fn random_effects_of(&self, id: &str) -> Option<&[f64]> {
        self.subject_ids.iter().position(|s| s == id).map(|i| self.random_effects[i].as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// What the survival part of the random-effect conditional knows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurvivalCondition {
    /// The subject's observed `(t_i, δ_i)`.
    Observed,
    /// Event-free up to landmark `s`; only measurements at or before `s` are used.
    AliveAt(f64),
    /// Longitudinal data only.
    None,
}

/// Random-effect prediction: the posterior mean and the kept draws.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectPrediction {
    pub mean: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// per-subject building blocks

#[derive(Debug, Clone)]
struct SubjectData {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Quadrature nodes over `[0, end]`: basis rows (`q` each), weights, intervals.
    basis: Vec<f64>,
    w: Vec<f64>,
    interval: Vec<usize>,
    /// `(cause index, basis row at the event time)` for observed events.
    event: Option<(usize, Vec<f64>)>,
}

impl SubjectData {
    fn new(
        spec: &MarkerModelSpec,
        series: &[Measurement],
        end: f64,
        event_cause: Option<usize>,
        baseline: &PiecewiseBaseline,
        quad: &Quadrature,
    ) -> Result<Self> {
        let q = spec.q();
        let mut xtx = DMatrix::zeros(q, q);
        let mut xty = DVector::zeros(q);
        let mut yty = 0.0;
        let mut row = vec![0.0; q];
        for m in series {
            spec.trend.fill(m.time, &mut row);
            for r in 0..q {
                xty[r] += row[r] * m.value;
                for c in 0..q {
                    xtx[(r, c)] += row[r] * row[c];
                }
            }
            yty += m.value * m.value;
        }
        let mut basis = Vec::new();
        let mut w = Vec::new();
        let mut interval = Vec::new();
        for (lo, hi, k) in baseline.segments(0.0, end)? {
            for (u, wt) in quad.mapped(lo, hi) {
                spec.trend.fill(u, &mut row);
                basis.extend_from_slice(&row);
                w.push(wt);
                interval.push(k);
            }
        }
        let event = event_cause.map(|l| {
            spec.trend.fill(end, &mut row);
            (l, row.clone())
        });
        Ok(Self { xtx, xty, yty, basis, w, interval, event })
    }

    fn q(&self) -> usize {
        self.xty.len()
    }

    fn ssr(&self, mu: &[f64]) -> f64 {
        let m = DVector::from_column_slice(mu);
        (self.yty - 2.0 * m.dot(&self.xty) + (m.transpose() * &self.xtx * &m)[0]).max(0.0)
    }

    fn eta_nodes(&self, mu: &[f64], out: &mut Vec<f64>) {
        let q = self.q();
        out.clear();
        out.extend(self.basis.chunks_exact(q).map(|row| row.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>()));
    }

    /// `E[l·K + κ] = Σ_{nodes in κ} w e^{α_l η}`.
    fn exposures(&self, eta: &[f64], alpha: &[f64], n_int: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (n, &e) in eta.iter().enumerate() {
            let k = self.interval[n];
            for (l, &a) in alpha.iter().enumerate() {
                out[l * n_int + k] += self.w[n] * (a * e).exp();
            }
        }
    }

    fn event_eta(&self, mu: &[f64]) -> f64 {
        match &self.event {
            Some((_, row)) => row.iter().zip(mu).map(|(a, b)| a * b).sum(),
            None => 0.0,
        }
    }
}

/// Parameters seen by one subject's random-effect conditional.
struct SubjectContext<'a> {
    beta: &'a [f64],
    sigma2: f64,
    cov_inv: &'a DMatrix<f64>,
    alpha: &'a [f64],
    /// `e^{γ_lᵀω_i}` per cause.
    lin_exp: &'a [f64],
    heights: &'a [Vec<f64>],
    n_int: usize,
}

impl SubjectContext<'_> {
    /// `Σ_l I(δ=l) α_l η(t_i) − Σ_l e^{γ_lᵀω} Σ_κ λ_κl E_lκ`.
    fn surv(&self, sd: &SubjectData, eta_event: f64, expo: &[f64]) -> f64 {
        let mut v = 0.0;
        if let Some((l, _)) = &sd.event {
            v += self.alpha[*l] * eta_event;
        }
        for l in 0..self.alpha.len() {
            let mut h = 0.0;
            for k in 0..self.n_int {
                h += self.heights[l][k] * expo[l * self.n_int + k];
            }
            v -= self.lin_exp[l] * h;
        }
        v
    }

    /// Gaussian conditional of `μ_i` from the longitudinal data and the prior:
    /// mean and lower Cholesky factor of the precision.
    fn gaussian(&self, sd: &SubjectData) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let prec = &sd.xtx / self.sigma2 + self.cov_inv;
        let chol = prec
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("random-effect conditional precision is not positive definite".into()))?;
        let rhs = &sd.xty / self.sigma2 + self.cov_inv * DVector::from_column_slice(self.beta);
        let mean = chol.solve(&rhs);
        Ok((mean, chol.unpack()))
    }
}

/// Current value of one subject's mean and its survival caches.
#[derive(Debug, Clone)]
struct SubjectState {
    mu: Vec<f64>,
    eta: Vec<f64>,
    eta_event: f64,
    expo: Vec<f64>,
}

impl SubjectState {
    fn new(sd: &SubjectData, mu: Vec<f64>, alpha: &[f64], n_int: usize) -> Self {
        let mut eta = Vec::new();
        sd.eta_nodes(&mu, &mut eta);
        let mut expo = vec![0.0; alpha.len() * n_int];
        sd.exposures(&eta, alpha, n_int, &mut expo);
        let eta_event = sd.event_eta(&mu);
        Self { mu, eta, eta_event, expo }
    }
}

/// `x = L⁻ᵀ z` for lower-triangular `L`.
fn back_solve_lt(l: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    l.transpose().solve_upper_triangular(z).expect("non-singular Cholesky factor")
}

/// One independence step and one random-walk step on `μ_i`.
fn update_subject<R: Rng + ?Sized>(
    sd: &SubjectData,
    st: &mut SubjectState,
    ctx: &SubjectContext<'_>,
    rw: &mut AdaptiveScale,
    scratch: &mut SubjectState,
    rng: &mut R,
) -> Result<[bool; 2]> {
    let q = sd.q();
    let (mean, chol) = ctx.gaussian(sd)?;
    let cur_surv = ctx.surv(sd, st.eta_event, &st.expo);
    let mut flags = [false; 2];

    let n_expo = st.expo.len();
    let propose = |mu: Vec<f64>, scratch: &mut SubjectState| -> f64 {
        sd.eta_nodes(&mu, &mut scratch.eta);
        scratch.expo.resize(n_expo, 0.0);
        sd.exposures(&scratch.eta, ctx.alpha, ctx.n_int, &mut scratch.expo);
        scratch.eta_event = sd.event_eta(&mu);
        scratch.mu = mu;
        ctx.surv(sd, scratch.eta_event, &scratch.expo)
    };

    // independence proposal from the Gaussian part
    let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let prop = &mean + back_solve_lt(&chol, &z);
    let prop_surv = propose(prop.as_slice().to_vec(), scratch);
    let mut cur_surv = cur_surv;
    if accept(cur_surv, prop_surv, rng)?.0 {
        std::mem::swap(st, scratch);
        cur_surv = prop_surv;
        flags[0] = true;
    }

    // random walk shaped by the same precision
    let quad_form = |mu: &[f64]| {
        let d = DVector::from_column_slice(mu) - &mean;
        let v = chol.transpose() * d;
        -0.5 * v.norm_squared()
    };
    let cur_lt = quad_form(&st.mu) + cur_surv;
    let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let step = back_solve_lt(&chol, &z) * rw.scale();
    let prop: Vec<f64> = st.mu.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    let prop_lt = quad_form(&prop) + propose(prop, scratch);
    let (ok, prob) = accept(cur_lt, prop_lt, rng)?;
    rw.record(prob, ok);
    if ok {
        std::mem::swap(st, scratch);
        flags[1] = true;
    }
    Ok(flags)
}

// ---------------------------------------------------------------------------
// the joint sampler

struct Prepared<'a> {
    spec: &'a MarkerModelSpec,
    ids: Vec<String>,
    omega: Vec<&'a [f64]>,
    cause: Vec<usize>,
    event_interval: Vec<usize>,
    sd: Vec<SubjectData>,
    n_causes: usize,
    n_int: usize,
    n_obs: usize,
    /// Events per cause and interval.
    events: Vec<Vec<f64>>,
    /// `Σ_{δ_i = l} ω_i` per cause.
    cov_event_sum: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(data: &'a LongitudinalDataset, marker: usize, baseline: &PiecewiseBaseline, quad: &Quadrature) -> Result<Self> {
        let spec = &data.markers()[marker];
        let keep = subjects_with_marker(data, marker);
        if keep.len() < 2 {
            return Err(Error::Config(format!(
                "marker `{}`: {} subject(s) with measurements; the random-effect covariance needs at least 2",
                spec.name,
                keep.len()
            )));
        }
        let values: Vec<f64> = keep.iter().flat_map(|&i| data.subjects()[i].series[marker].iter().map(|m| m.value)).collect();
        let first = values[0];
        if values.iter().all(|v| *v == first) {
            return Err(Error::Data(format!("marker `{}` is constant ({first}) across all measurements", spec.name)));
        }
        let n_causes = data.n_causes();
        let n_int = baseline.n_intervals();
        let p = data.covariate_names().len();
        let mut prep = Prepared {
            spec,
            ids: Vec::with_capacity(keep.len()),
            omega: Vec::with_capacity(keep.len()),
            cause: Vec::with_capacity(keep.len()),
            event_interval: Vec::with_capacity(keep.len()),
            sd: Vec::with_capacity(keep.len()),
            n_causes,
            n_int,
            n_obs: values.len(),
            events: vec![vec![0.0; n_int]; n_causes],
            cov_event_sum: vec![vec![0.0; p]; n_causes],
        };
        for &i in &keep {
            let s = &data.subjects()[i];
            let ev = (s.cause > 0).then(|| s.cause - 1);
            prep.sd.push(SubjectData::new(spec, &s.series[marker], s.event_time, ev, baseline, quad)?);
            let k = baseline.interval_of(s.event_time)?;
            if let Some(l) = ev {
                prep.events[l][k] += 1.0;
                prep.cov_event_sum[l].iter_mut().zip(&s.covariates).for_each(|(a, b)| *a += b);
            }
            prep.ids.push(s.id.clone());
            prep.omega.push(&s.covariates);
            prep.cause.push(s.cause);
            prep.event_interval.push(k);
        }
        Ok(prep)
    }

    fn n(&self) -> usize {
        self.sd.len()
    }

    fn p(&self) -> usize {
        self.cov_event_sum[0].len()
    }
}

struct Chain<'a> {
    prep: &'a Prepared<'a>,
    priors: &'a PriorConfig,
    beta: Vec<f64>,
    sigma2: f64,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    gamma: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    heights: Vec<Vec<f64>>,
    subj: Vec<SubjectState>,
    /// `γ_lᵀω_i`, `[l][i]`.
    lin: Vec<Vec<f64>>,
    scratch: SubjectState,
    rw_b: AdaptiveScale,
    indep_accept: (u64, u64),
    rw_alpha: Vec<AdaptiveScale>,
    rw_gamma: Vec<Vec<AdaptiveScale>>,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    fn new(prep: &'a Prepared<'a>, priors: &'a PriorConfig, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, stream);
        let q = prep.spec.q();
        let (n_c, n_int, p) = (prep.n_causes, prep.n_int, prep.p());
        // pooled least squares start
        let mut xtx = DMatrix::<f64>::zeros(q, q);
        let mut xty = DVector::<f64>::zeros(q);
        for sd in &prep.sd {
            xtx += &sd.xtx;
            xty += &sd.xty;
        }
        let ridge = DMatrix::<f64>::identity(q, q) * 1e-8;
        let beta0 = (xtx + ridge)
            .cholesky()
            .ok_or_else(|| Error::Data(format!("marker `{}`: time design is rank deficient", prep.spec.name)))?
            .solve(&xty);
        let ssr: f64 = prep.sd.iter().map(|sd| sd.ssr(beta0.as_slice())).sum();
        let sigma2 = (ssr / prep.n_obs.max(1) as f64).max(1e-6);
        let jitter = |rng: &mut ChaCha8Rng, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
        let beta: Vec<f64> = beta0.iter().map(|b| b + jitter(&mut rng, 0.05)).collect();
        let cov = DMatrix::<f64>::identity(q, q) * (0.5 * sigma2).max(0.1);
        let cov_inv = cov.clone().try_inverse().expect("diagonal start");
        let total_time: f64 = prep.sd.iter().map(|sd| sd.w.iter().sum::<f64>()).sum();
        let heights: Vec<Vec<f64>> = (0..n_c)
            .map(|l| {
                let d: f64 = prep.events[l].iter().sum();
                vec![(d + 0.5) / total_time.max(1e-12); n_int]
            })
            .collect();
        let alpha: Vec<f64> = (0..n_c).map(|_| jitter(&mut rng, 0.05)).collect();
        let gamma = vec![vec![0.0; p]; n_c];
        let mut chain = Chain {
            prep,
            priors,
            beta,
            sigma2,
            cov,
            cov_inv,
            gamma,
            alpha,
            heights,
            subj: Vec::with_capacity(prep.n()),
            lin: vec![vec![0.0; prep.n()]; n_c],
            scratch: SubjectState { mu: vec![], eta: vec![], eta_event: 0.0, expo: vec![] },
            rw_b: AdaptiveScale::block(0.5),
            indep_accept: (0, 0),
            rw_alpha: (0..n_c).map(|_| AdaptiveScale::scalar(0.1)).collect(),
            rw_gamma: (0..n_c).map(|_| (0..p).map(|_| AdaptiveScale::scalar(0.1)).collect()).collect(),
            rng,
        };
        // start each μ_i at its Gaussian conditional mean
        for i in 0..prep.n() {
            let ctx = chain.context(i, &[]);
            let (mean, _) = ctx.gaussian(&prep.sd[i])?;
            let st = SubjectState::new(&prep.sd[i], mean.as_slice().to_vec(), &chain.alpha, n_int);
            chain.subj.push(st);
        }
        Ok(chain)
    }

    fn context<'b>(&'b self, _i: usize, lin_exp: &'b [f64]) -> SubjectContext<'b> {
        SubjectContext {
            beta: &self.beta,
            sigma2: self.sigma2,
            cov_inv: &self.cov_inv,
            alpha: &self.alpha,
            lin_exp,
            heights: &self.heights,
            n_int: self.prep.n_int,
        }
    }

    fn sweep(&mut self) -> Result<()> {
        self.update_subjects()?;
        self.update_beta();
        self.update_sigma2();
        self.update_cov()?;
        for l in 0..self.prep.n_causes {
            self.update_alpha(l)?;
            self.update_gamma(l)?;
            self.update_heights(l);
        }
        Ok(())
    }

    fn update_subjects(&mut self) -> Result<()> {
        let n_c = self.prep.n_causes;
        let mut lin_exp = vec![0.0; n_c];
        let mut subj = std::mem::take(&mut self.subj);
        let mut scratch = std::mem::replace(&mut self.scratch, SubjectState { mu: vec![], eta: vec![], eta_event: 0.0, expo: vec![] });
        let mut rw = self.rw_b.clone();
        let mut rng = self.rng.clone();
        let mut res = Ok(());
        for (i, st) in subj.iter_mut().enumerate() {
            for l in 0..n_c {
                lin_exp[l] = self.lin[l][i].exp();
            }
            let ctx = self.context(i, &lin_exp);
            match update_subject(&self.prep.sd[i], st, &ctx, &mut rw, &mut scratch, &mut rng) {
                Ok(f) => {
                    self.indep_accept.0 += f[0] as u64;
                    self.indep_accept.1 += 1;
                }
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        self.subj = subj;
        self.scratch = scratch;
        self.rw_b = rw;
        self.rng = rng;
        res
    }

    fn update_beta(&mut self) {
        let q = self.beta.len();
        let n = self.subj.len() as f64;
        let mut sum = DVector::<f64>::zeros(q);
        for st in &self.subj {
            sum += DVector::from_column_slice(&st.mu);
        }
        let prec = &self.cov_inv * n + DMatrix::<f64>::identity(q, q) / self.priors.normal_variance;
        let chol = prec.cholesky().expect("positive definite precision");
        let mean = chol.solve(&(&self.cov_inv * sum));
        let z = DVector::from_fn(q, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let draw = mean + back_solve_lt(&chol.unpack(), &z);
        self.beta.copy_from_slice(draw.as_slice());
    }

    fn update_sigma2(&mut self) {
        let ssr: f64 = self.prep.sd.iter().zip(&self.subj).map(|(sd, st)| sd.ssr(&st.mu)).sum();
        self.sigma2 = gibbs_sigma2_ssr(ssr, self.prep.n_obs, self.priors.sigma2, &mut self.rng);
    }

    fn update_cov(&mut self) -> Result<()> {
        let q = self.beta.len();
        let mut scatter = DMatrix::<f64>::zeros(q, q);
        for st in &self.subj {
            let b = DVector::from_iterator(q, st.mu.iter().zip(&self.beta).map(|(m, b)| m - b));
            scatter += &b * b.transpose();
        }
        let scale = DMatrix::<f64>::identity(q, q) * self.priors.iw_scale;
        self.cov = gibbs_invwishart(&scatter, &scale, self.priors.df(q), self.subj.len(), &mut self.rng)?;
        self.cov_inv = self
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("random-effect covariance draw is not positive definite".into()))?
            .inverse();
        Ok(())
    }

    /// Log target of `α_l` (likelihood part plus prior), filling `expo_out`
    /// with the new per-subject exposures for cause `l`.
    fn alpha_target(&self, l: usize, a: f64, expo_out: &mut Vec<f64>) -> f64 {
        let n_int = self.prep.n_int;
        expo_out.clear();
        let mut v = -0.5 * a * a / self.priors.normal_variance;
        for (i, (sd, st)) in self.prep.sd.iter().zip(&self.subj).enumerate() {
            let start = expo_out.len();
            expo_out.resize(start + n_int, 0.0);
            let e = &mut expo_out[start..];
            for (n, &eta) in st.eta.iter().enumerate() {
                e[sd.interval[n]] += sd.w[n] * (a * eta).exp();
            }
            if self.prep.cause[i] == l + 1 {
                v += a * st.eta_event;
            }
            let h: f64 = e.iter().zip(&self.heights[l]).map(|(x, y)| x * y).sum();
            v -= self.lin[l][i].exp() * h;
        }
        v
    }

    fn update_alpha(&mut self, l: usize) -> Result<()> {
        let n_int = self.prep.n_int;
        let mut cur_expo = Vec::new();
        let cur = self.alpha_target(l, self.alpha[l], &mut cur_expo);
        let z: f64 = self.rng.sample(StandardNormal);
        let prop = self.alpha[l] + self.rw_alpha[l].scale() * z;
        let mut new_expo = Vec::new();
        let prop_lt = self.alpha_target(l, prop, &mut new_expo);
        let (ok, prob) = accept(cur, prop_lt, &mut self.rng)?;
        self.rw_alpha[l].record(prob, ok);
        if ok {
            self.alpha[l] = prop;
            for (i, st) in self.subj.iter_mut().enumerate() {
                st.expo[l * n_int..(l + 1) * n_int].copy_from_slice(&new_expo[i * n_int..(i + 1) * n_int]);
            }
        }
        Ok(())
    }

    fn update_gamma(&mut self, l: usize) -> Result<()> {
        let n_int = self.prep.n_int;
        let c = self.priors.normal_variance;
        // H_il = e^{lin} Σ_κ λ E
        let mut h: Vec<f64> = self
            .subj
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let e = &st.expo[l * n_int..(l + 1) * n_int];
                self.lin[l][i].exp() * e.iter().zip(&self.heights[l]).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect();
        for j in 0..self.prep.p() {
            let g = self.gamma[l][j];
            let s = self.prep.cov_event_sum[l][j];
            let omega = &self.prep.omega;
            let target = |gp: f64, h: &[f64]| -> f64 {
                let d = gp - g;
                let mut v = gp * s - 0.5 * gp * gp / c;
                for (i, hi) in h.iter().enumerate() {
                    let w = omega[i][j];
                    v -= if w == 0.0 { *hi } else { hi * (d * w).exp() };
                }
                v
            };
            let cur = target(g, &h);
            let z: f64 = self.rng.sample(StandardNormal);
            let prop = g + self.rw_gamma[l][j].scale() * z;
            let prop_lt = target(prop, &h);
            let (ok, prob) = accept(cur, prop_lt, &mut self.rng)?;
            self.rw_gamma[l][j].record(prob, ok);
            if ok {
                let d = prop - g;
                self.gamma[l][j] = prop;
                for i in 0..h.len() {
                    let w = omega[i][j];
                    if w != 0.0 {
                        self.lin[l][i] += d * w;
                        h[i] *= (d * w).exp();
                    }
                }
            }
        }
        Ok(())
    }

    fn update_heights(&mut self, l: usize) {
        let n_int = self.prep.n_int;
        let (a0, b0) = self.priors.baseline;
        for k in 0..n_int {
            let exposure: f64 = self.subj.iter().enumerate().map(|(i, st)| self.lin[l][i].exp() * st.expo[l * n_int + k]).sum();
            self.heights[l][k] = gibbs_gamma(a0 + self.prep.events[l][k], b0 + exposure, &mut self.rng).max(1e-300);
        }
    }

    fn snapshot(&self) -> OneMarkerParams {
        let q = self.beta.len();
        OneMarkerParams {
            beta: self.beta.clone(),
            sigma2: self.sigma2,
            cov: (0..q).map(|r| (0..q).map(|c| self.cov[(r, c)]).collect()).collect(),
            gamma: self.gamma.clone(),
            alpha: self.alpha.clone(),
            baseline: self.heights.clone(),
        }
    }

    fn freeze(&mut self) {
        self.rw_b.freeze();
        self.indep_accept = (0, 0);
        self.rw_alpha.iter_mut().for_each(AdaptiveScale::freeze);
        self.rw_gamma.iter_mut().flatten().for_each(AdaptiveScale::freeze);
    }

    fn acceptance(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("b(independence)".into(), self.indep_accept.0 as f64 / self.indep_accept.1.max(1) as f64);
        out.insert("b(random-walk)".into(), self.rw_b.acceptance_rate());
        for (l, s) in self.rw_alpha.iter().enumerate() {
            out.insert(format!("alpha[{}]", l + 1), s.acceptance_rate());
        }
        for (l, v) in self.rw_gamma.iter().enumerate() {
            let rates: Vec<f64> = v.iter().map(AdaptiveScale::acceptance_rate).collect();
            if !rates.is_empty() {
                out.insert(format!("gamma[{}](mean)", l + 1), rates.iter().sum::<f64>() / rates.len() as f64);
            }
        }
        out
    }
}

fn run_chain(prep: &Prepared<'_>, priors: &PriorConfig, mcmc: &McmcConfig, stream: u64) -> Result<(Vec<OneMarkerParams>, BTreeMap<String, f64>)> {
    let mut chain = Chain::new(prep, priors, mcmc.seed, stream)?;
    let mut kept = Vec::with_capacity(mcmc.kept_per_chain());
    for it in 0..mcmc.iters {
        if it == mcmc.burnin {
            chain.freeze();
        }
        chain.sweep()?;
        if mcmc.keeps(it) {
            kept.push(chain.snapshot());
        }
    }
    Ok((kept, chain.acceptance()))
}

/// Stream id of chain `c` of marker `k` (distinct from every other stream used).
fn chain_stream(marker: usize, chain: usize) -> u64 {
    ((marker as u64) << 16) | chain as u64
}

/// Fit the one-marker joint model for marker `marker`. Subjects without
/// measurements of this marker are left out of the fit.
pub fn fit_one_marker(data: &LongitudinalDataset, marker: usize, settings: &Stage1Settings) -> Result<OneMarkerFit> {
    if marker >= data.markers().len() {
        return Err(Error::Config(format!("marker index {marker} out of range")));
    }
    settings.mcmc.validate()?;
    let spec = &data.markers()[marker];
    settings.priors.validate(spec.q())?;
    let knots = settings.baseline.knots(data)?;
    let dummy = vec![vec![1.0; knots.len() - 1]; data.n_causes()];
    let baseline = PiecewiseBaseline::new(knots.clone(), dummy)?;
    let quad = Quadrature::new(settings.baseline.quadrature_nodes)?;
    let prep = Prepared::new(data, marker, &baseline, &quad)?;

    let runs: Vec<Result<(Vec<OneMarkerParams>, BTreeMap<String, f64>)>> = (0..settings.mcmc.chains)
        .into_par_iter()
        .map(|c| run_chain(&prep, &settings.priors, &settings.mcmc, chain_stream(marker, c)))
        .collect();
    let mut chains = Vec::with_capacity(runs.len());
    let mut acceptance = BTreeMap::new();
    for (c, r) in runs.into_iter().enumerate() {
        let (draws, acc) = r?;
        for (k, v) in acc {
            acceptance.insert(format!("chain{}:{k}", c + 1), v);
        }
        chains.push(draws);
    }

    // diagnostics on every scalar parameter
    let names: Vec<String> = chains[0][0].flatten(data.covariate_names()).into_iter().map(|(n, _)| n).collect();
    let per_chain: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|draws| {
            let flat: Vec<Vec<(String, f64)>> = draws.iter().map(|d| d.flatten(data.covariate_names())).collect();
            (0..names.len()).map(|j| flat.iter().map(|f| f[j].1).collect()).collect()
        })
        .collect();
    let mut rhat = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        let series: Vec<&[f64]> = per_chain.iter().map(|c| c[j].as_slice()).collect();
        rhat.insert(name.clone(), split_rhat(&series));
        let all: Vec<f64> = series.concat();
        summaries.insert(name.clone(), Summary::of(&all));
    }
    let diagnostics = FitDiagnostics::from_rhat(rhat, acceptance, &format!("stage 1, marker `{}`", spec.name));
    let draws: Vec<OneMarkerParams> = chains.into_iter().flatten().collect();
    let mean = OneMarkerParams::mean_of(&draws);

    let mut fit = OneMarkerFit {
        marker_index: marker,
        marker: spec.clone(),
        covariate_names: data.covariate_names().to_vec(),
        knots,
        quadrature_nodes: settings.baseline.quadrature_nodes,
        mean,
        summaries,
        subject_ids: prep.ids.clone(),
        random_effects: Vec::new(),
        diagnostics,
        draws,
    };
    let subjects = subjects_with_marker(data, marker);
    let preds: Vec<Result<Vec<f64>>> = subjects
        .par_iter()
        .map(|&i| {
            let s = &data.subjects()[i];
            let mut rng = subject_rng(settings.mcmc.seed, &format!("stage1/{marker}/{}", s.id));
            predict_random_effects(&fit, s, SurvivalCondition::Observed, &settings.prediction, &mut rng).map(|p| p.mean)
        })
        .collect();
    fit.random_effects = preds.into_iter().collect::<Result<_>>()?;
    Ok(fit)
}

/// Fit every marker of `data`, concurrently.
pub fn fit_all_markers(data: &LongitudinalDataset, settings: &Stage1Settings) -> Result<Vec<OneMarkerFit>> {
    (0..data.markers().len()).into_par_iter().map(|k| fit_one_marker(data, k, settings)).collect()
}

/// Generator keyed by `(seed, label)`; the label is hashed so streams stay
/// stable across runs and platforms.
pub fn subject_rng(seed: u64, label: &str) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(label.as_bytes());
    let stream = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    stream_rng(seed, stream)
}

/// Posterior mean of one subject's random effects for the fitted marker,
/// given plug-in `θ̂` and the subject's data. Runs a fresh Metropolis chain
/// (independence plus random-walk steps) with `settings.burnin` discarded and
/// `settings.draws` kept.
pub fn predict_random_effects<R: Rng + ?Sized>(
    fit: &OneMarkerFit,
    subject: &SubjectRecord,
    condition: SurvivalCondition,
    settings: &PredictionSettings,
    rng: &mut R,
) -> Result<RandomEffectPrediction> {
    let k = fit.marker_index;
    let series = subject
        .series
        .get(k)
        .ok_or_else(|| Error::Data(format!("subject `{}` has no series for marker `{}`", subject.id, fit.marker.name)))?;
    let (series, end, event): (Vec<Measurement>, f64, Option<usize>) = match condition {
        SurvivalCondition::Observed => (series.clone(), subject.event_time, (subject.cause > 0).then(|| subject.cause - 1)),
        SurvivalCondition::AliveAt(s) => (series.iter().copied().filter(|m| m.time <= s).collect(), s, None),
        SurvivalCondition::None => (series.clone(), 0.0, None),
    };
    if series.is_empty() {
        return Err(Error::Data(format!(
            "subject `{}` has no measurements of marker `{}` to predict from",
            subject.id, fit.marker.name
        )));
    }
    if subject.covariates.len() != fit.covariate_names.len() {
        return Err(Error::Data(format!("subject `{}`: covariate count differs from the fit", subject.id)));
    }
    let n_c = fit.n_causes();
    let baseline = PiecewiseBaseline::new(fit.knots.clone(), fit.mean.baseline.clone())?;
    let quad = Quadrature::new(fit.quadrature_nodes)?;
    let sd = SubjectData::new(&fit.marker, &series, end, event, &baseline, &quad)?;
    let cov_inv = fit
        .mean
        .cov_matrix()
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior-mean covariance is not positive definite".into()))?
        .inverse();
    let lin_exp: Vec<f64> = (0..n_c)
        .map(|l| fit.mean.gamma[l].iter().zip(&subject.covariates).map(|(g, w)| g * w).sum::<f64>().exp())
        .collect();
    let ctx = SubjectContext {
        beta: &fit.mean.beta,
        sigma2: fit.mean.sigma2,
        cov_inv: &cov_inv,
        alpha: &fit.mean.alpha,
        lin_exp: &lin_exp,
        heights: &fit.mean.baseline,
        n_int: baseline.n_intervals(),
    };
    let (mean0, _) = ctx.gaussian(&sd)?;
    let mut st = SubjectState::new(&sd, mean0.as_slice().to_vec(), &fit.mean.alpha, baseline.n_intervals());
    let mut scratch = st.clone();
    let mut rw = AdaptiveScale::block(0.5);
    let q = fit.marker.q();
    let mut sum = vec![0.0; q];
    let mut draws = Vec::with_capacity(settings.draws);
    for it in 0..settings.burnin + settings.draws {
        if it == settings.burnin {
            rw.freeze();
        }
        update_subject(&sd, &mut st, &ctx, &mut rw, &mut scratch, rng)?;
        if it >= settings.burnin {
            let b: Vec<f64> = st.mu.iter().zip(&fit.mean.beta).map(|(m, b)| m - b).collect();
            sum.iter_mut().zip(&b).for_each(|(s, x)| *s += x);
            draws.push(b);
        }
    }
    let n = draws.len().max(1) as f64;
    Ok(RandomEffectPrediction { mean: sum.into_iter().map(|s| s / n).collect(), draws })
}

/// `η(t)` at the posterior-mean fixed effects and predicted random effects.
pub fn predicted_trajectory(fit: &OneMarkerFit, b_hat: &[f64], t: f64) -> Result<f64> {
    linear_predictor(&fit.marker, &fit.mean.beta, b_hat, t)
}

/// Plug-in trajectories `η_ik(t | β̂_k, b̂_ik)` for a set of subjects.
#[derive(Debug, Clone)]
pub struct PluginTrajectories {
    specs: Vec<MarkerModelSpec>,
    beta: Vec<Vec<f64>>,
    /// `b[i][k]`
    b: Vec<Vec<Vec<f64>>>,
}

impl PluginTrajectories {
    pub fn new(specs: Vec<MarkerModelSpec>, beta: Vec<Vec<f64>>, b: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if specs.len() != beta.len() {
            return Err(Error::Config("one fixed-effect vector per marker is required".into()));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.len() != specs.len() {
                return Err(Error::Data(format!("subject {i}: {} random-effect blocks for {} markers", bi.len(), specs.len())));
            }
            for (k, spec) in specs.iter().enumerate() {
                if bi[k].len() != spec.q() || beta[k].len() != spec.p() {
                    return Err(Error::DimensionMismatch {
                        marker: spec.name.clone(),
                        what: "random effects",
                        expected: spec.q(),
                        actual: bi[k].len(),
                    });
                }
            }
        }
        Ok(Self { specs, beta, b })
    }

    /// Trajectories of the subjects of `data` from the Stage-1 fits; subjects a
    /// fit did not retain get `b̂ = 0` (population trajectory).
    pub fn from_fits(fits: &[OneMarkerFit], data: &LongitudinalDataset) -> Result<Self> {
        let specs: Vec<MarkerModelSpec> = fits.iter().map(|f| f.marker.clone()).collect();
        let beta = fits.iter().map(|f| f.mean.beta.clone()).collect();
        let lookups: Vec<BTreeMap<&str, usize>> = fits
            .iter()
            .map(|f| f.subject_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect())
            .collect();
        let b = data
            .subjects()
            .iter()
            .map(|s| {
                fits.iter()
                    .zip(&lookups)
                    .map(|(f, lk)| lk.get(s.id.as_str()).map(|&i| f.random_effects[i].clone()).unwrap_or_else(|| vec![0.0; f.marker.q()]))
                    .collect()
            })
            .collect();
        Self::new(specs, beta, b)
    }

    pub fn random_effects(&self, subject: usize) -> &[Vec<f64>] {
        &self.b[subject]
    }

    pub fn n_subjects(&self) -> usize {
        self.b.len()
    }
}

impl TrajectoryProvider for PluginTrajectories {
    fn n_markers(&self) -> usize {
        self.specs.len()
    }

    #[inline]
    fn eta(&self, subject: usize, marker: usize, t: f64) -> f64 {
        self.specs[marker].eta_unchecked(&self.beta[marker], &self.b[subject][marker], t)
    }
}
