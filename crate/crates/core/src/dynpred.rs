//! Landmark prediction of the cause-1 risk in `(s, s+t]` for a subject
//! event-free at `s`, with Monte-Carlo credible intervals.
//!
//! `risk = ∫_s^{s+t} exp(−Σ_l Λ_l(s, u)) λ_1(u) du`, with `Λ_l(s, u)` the
//! cause-`l` cumulative hazard accrued since the landmark. The outer integral
//! uses Gauss–Legendre nodes on every baseline segment of `[s, s+t]`; the inner
//! one reuses the same nodes through [`RunningIntegral`].

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{HazardParams, TrajectoryProvider};
use crate::longitudinal::{MarkerModelSpec, SubjectRecord};
use crate::quadrature::{Quadrature, RunningIntegral, DEFAULT_NODES};
use crate::samplers::diagnostics::quantile;
use crate::stage1::{predict_random_effects, subject_rng, OneMarkerFit, PredictionSettings, RandomEffectPrediction, SurvivalCondition};
use crate::stage2::Stage2Fit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynPredSettings {
    /// Stage-2 parameter draws `ℒ`, evenly thinned from the posterior.
    pub parameter_draws: usize,
    /// Random-effect draws `M` per parameter draw.
    pub effect_draws: usize,
    pub landmarks: Vec<f64>,
    pub window: f64,
    /// Predict from the refit posterior; `false` uses the spike-and-slab draws.
    pub use_refit: bool,
    pub random_effects: PredictionSettings,
    pub quadrature_nodes: usize,
}

impl Default for DynPredSettings {
    fn default() -> Self {
        Self {
            parameter_draws: 200,
            effect_draws: 5,
            landmarks: vec![0.0, 0.25, 0.5, 0.75],
            window: 0.25,
            use_refit: true,
            random_effects: PredictionSettings::default(),
            quadrature_nodes: DEFAULT_NODES,
        }
    }
}

impl DynPredSettings {
    pub fn validate(&self) -> Result<()> {
        if self.parameter_draws == 0 || self.effect_draws == 0 {
            return Err(Error::Config("prediction needs at least one parameter and one random-effect draw".into()));
        }
        if !(self.window > 0.0) || self.landmarks.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("landmarks must be non-negative and the window positive".into()));
        }
        if self.random_effects.draws == 0 {
            return Err(Error::Config("random-effect prediction needs at least one kept draw".into()));
        }
        Ok(())
    }
}

/// Cause-1 risk in `(s, s+t]` given survival to `s`.
pub fn conditional_risk(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    subject: usize,
    covariates: &[f64],
    s: f64,
    t: f64,
    rule: &RunningIntegral,
) -> Result<f64> {
    if !(s >= 0.0 && t > 0.0) {
        return Err(Error::Domain(format!("landmark s={s} and window t={t}")));
    }
    let horizon = params.baseline.horizon();
    if s + t > horizon {
        return Err(Error::OutOfRange { time: s + t, horizon });
    }
    let n_c = params.n_causes();
    let k = traj.n_markers();
    for c in &params.causes {
        if c.gamma.len() != covariates.len() || c.alpha.len() != k {
            return Err(Error::Config("hazard parameters do not match the subject or trajectories".into()));
        }
    }
    let lin: Vec<f64> = params.causes.iter().map(|c| c.gamma.iter().zip(covariates).map(|(g, w)| g * w).sum()).collect();
    let n = rule.quadrature().len();
    let (mut h1, mut tot, mut run) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut etas = vec![0.0; k];
    let (mut risk, mut cum) = (0.0, 0.0);
    // pieces that accrue more than this much hazard are bisected, so that
    // exp(−Λ) stays well resolved by the fixed rule
    const MAX_PIECE_HAZARD: f64 = 0.5;
    for (lo, hi, kk) in params.baseline.segments(s, s + t)? {
        let mut stack = vec![(hi, lo, 0u32)];
        while let Some((b, a, depth)) = stack.pop() {
            let nodes: Vec<(f64, f64)> = rule.quadrature().mapped(a, b).collect();
            for (j, &(u, _)) in nodes.iter().enumerate() {
                for (m, e) in etas.iter_mut().enumerate() {
                    *e = traj.eta(subject, m, u);
                }
                tot[j] = 0.0;
                for l in 0..n_c {
                    let c = &params.causes[l];
                    let assoc: f64 = c.alpha.iter().zip(&etas).map(|(a, e)| a * e).sum();
                    let h = params.baseline.heights(l)[kk] * (lin[l] + assoc).exp();
                    if l == 0 {
                        h1[j] = h;
                    }
                    tot[j] += h;
                }
            }
            let piece: f64 = nodes.iter().zip(&tot).map(|((_, w), h)| w * h).sum();
            if piece > MAX_PIECE_HAZARD && depth < 30 {
                let mid = 0.5 * (a + b);
                // left half first: the stack is popped from the end
                stack.push((b, mid, depth + 1));
                stack.push((mid, a, depth + 1));
                continue;
            }
            rule.apply(a, b, &tot, &mut run);
            for (j, &(_, w)) in nodes.iter().enumerate() {
                risk += w * h1[j] * (-(cum + run[j])).exp();
            }
            cum += piece;
        }
    }
    if !risk.is_finite() {
        return Err(Error::Numerical(format!("non-finite predicted risk at s={s}, t={t}")));
    }
    Ok(risk.clamp(0.0, 1.0))
}

/// One subject's trajectories from fixed effects and a stacked random-effect draw.
struct DrawTrajectories<'a> {
    specs: &'a [MarkerModelSpec],
    betas: &'a [Vec<f64>],
    b: &'a [Vec<f64>],
}

impl TrajectoryProvider for DrawTrajectories<'_> {
    fn n_markers(&self) -> usize {
        self.specs.len()
    }

    fn eta(&self, _subject: usize, marker: usize, t: f64) -> f64 {
        self.specs[marker].eta_unchecked(&self.betas[marker], &self.b[marker], t)
    }
}

/// Risk draws with their mean and central 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDraws {
    pub draws: Vec<f64>,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl RiskDraws {
    fn from_draws(draws: Vec<f64>) -> Self {
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        Self { mean, lo95: quantile(&sorted, 0.025), hi95: quantile(&sorted, 0.975), draws }
    }
}

/// Fitted model bundle: Stage-1 fixed effects and Stage-2 hazard draws.
#[derive(Debug, Clone)]
pub struct Predictor {
    specs: Vec<MarkerModelSpec>,
    betas: Vec<Vec<f64>>,
    mean: HazardParams,
    draws: Vec<HazardParams>,
    rule: RunningIntegral,
}

impl Predictor {
    pub fn new(specs: Vec<MarkerModelSpec>, betas: Vec<Vec<f64>>, mean: HazardParams, draws: Vec<HazardParams>, quadrature_nodes: usize) -> Result<Self> {
        if specs.len() != betas.len() {
            return Err(Error::Config("one fixed-effect vector per marker is required".into()));
        }
        for (spec, beta) in specs.iter().zip(&betas) {
            if beta.len() != spec.p() {
                return Err(Error::DimensionMismatch { marker: spec.name.clone(), what: "fixed effects", expected: spec.p(), actual: beta.len() });
            }
        }
        if draws.is_empty() {
            return Err(Error::Config("prediction needs at least one hazard parameter draw".into()));
        }
        for p in std::iter::once(&mean).chain(&draws) {
            if p.causes.iter().any(|c| c.alpha.len() != specs.len()) {
                return Err(Error::Config("hazard parameters and Stage-1 fits cover different markers".into()));
            }
        }
        Ok(Self { specs, betas, mean, draws, rule: RunningIntegral::new(Quadrature::new(quadrature_nodes)?) })
    }

    /// Uses `parameter_draws` evenly spaced Stage-2 draws.
    pub fn from_fits(fits: &[OneMarkerFit], hazard: &Stage2Fit, settings: &DynPredSettings) -> Result<Self> {
        let draws = hazard.thinned_indices(settings.parameter_draws).into_iter().map(|m| hazard.hazard_params(m)).collect::<Result<Vec<_>>>()?;
        Self::new(
            fits.iter().map(|f| f.marker.clone()).collect(),
            fits.iter().map(|f| f.mean.beta.clone()).collect(),
            hazard.mean_params()?,
            draws,
            settings.quadrature_nodes,
        )
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    fn risk_with(&self, params: &HazardParams, covariates: &[f64], b: &[Vec<f64>], s: f64, t: f64) -> Result<f64> {
        if b.len() != self.specs.len() || b.iter().zip(&self.specs).any(|(bk, sp)| bk.len() != sp.q()) {
            return Err(Error::Config("random effects do not match the markers".into()));
        }
        let traj = DrawTrajectories { specs: &self.specs, betas: &self.betas, b };
        conditional_risk(params, &traj, 0, covariates, s, t, &self.rule)
    }

    /// Plug-in risk at the posterior-mean hazard parameters and `b̂`.
    pub fn risk_point(&self, covariates: &[f64], b_hat: &[Vec<f64>], s: f64, t: f64) -> Result<f64> {
        self.risk_with(&self.mean, covariates, b_hat, s, t)
    }

    /// `ℒ × M` risk draws: each parameter draw paired with `m` random-effect
    /// draws picked at random from each marker's prediction.
    pub fn risk_draws<R: Rng + ?Sized>(
        &self,
        covariates: &[f64],
        effects: &[RandomEffectPrediction],
        s: f64,
        t: f64,
        m: usize,
        rng: &mut R,
    ) -> Result<RiskDraws> {
        if effects.len() != self.specs.len() || effects.iter().any(|e| e.draws.is_empty()) {
            return Err(Error::Config("one non-empty random-effect prediction per marker is required".into()));
        }
        let mut out = Vec::with_capacity(self.draws.len() * m);
        let mut b: Vec<Vec<f64>> = effects.iter().map(|e| e.mean.clone()).collect();
        for p in &self.draws {
            for _ in 0..m {
                for (bk, e) in b.iter_mut().zip(effects) {
                    bk.clone_from(&e.draws[rng.random_range(0..e.draws.len())]);
                }
                out.push(self.risk_with(p, covariates, &b, s, t)?);
            }
        }
        Ok(RiskDraws::from_draws(out))
    }
}

/// Random effects of every marker for a subject event-free at `s`, using only
/// measurements up to `s`.
pub fn landmark_effects<R: Rng + ?Sized>(
    fits: &[OneMarkerFit],
    subject: &SubjectRecord,
    s: f64,
    settings: &PredictionSettings,
    rng: &mut R,
) -> Result<Vec<RandomEffectPrediction>> {
    if subject.event_time <= s {
        return Err(Error::Domain(format!("subject `{}` is not event-free at landmark {s}", subject.id)));
    }
    fits.iter().map(|f| predict_random_effects(f, subject, SurvivalCondition::AliveAt(s), settings, rng)).collect()
}

/// One output row of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub id: String,
    pub s: f64,
    pub t: f64,
    pub risk: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Risks of all subjects event-free at `s`, for several predictors sharing
/// the same Stage-1 fits (the random effects are predicted once per subject).
/// Subjects are processed in parallel, each with its own stream keyed by
/// `(seed, id, s)`.
pub fn predict_landmark(
    predictors: &[&Predictor],
    fits: &[OneMarkerFit],
    subjects: &[SubjectRecord],
    s: f64,
    t: f64,
    settings: &DynPredSettings,
    seed: u64,
) -> Result<Vec<Vec<RiskRow>>> {
    settings.validate()?;
    let at_risk: Vec<&SubjectRecord> = subjects.iter().filter(|r| r.event_time > s).collect();
    let rows: Vec<Result<Vec<RiskRow>>> = at_risk
        .par_iter()
        .map(|r| {
            let mut rng = subject_rng(seed, &format!("{}@{s}", r.id));
            let effects = landmark_effects(fits, r, s, &settings.random_effects, &mut rng)?;
            predictors
                .iter()
                .map(|p| {
                    let d = p.risk_draws(&r.covariates, &effects, s, t, settings.effect_draws, &mut rng)?;
                    Ok(RiskRow { id: r.id.clone(), s, t, risk: d.mean, lo95: d.lo95, hi95: d.hi95 })
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(at_risk.len()); predictors.len()];
    for r in rows {
        for (o, row) in out.iter_mut().zip(r?) {
            o.push(row);
        }
    }
    Ok(out)
}

pub fn write_risk_csv(rows: &[RiskRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_risk_csv(path: &Path) -> Result<Vec<RiskRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{CauseEffects, FnTrajectories, NoTrajectories, PiecewiseBaseline};
    use proptest::prelude::*;

    fn constant(l: &[f64], horizon: f64) -> HazardParams {
        HazardParams::new(
            l.iter().map(|_| CauseEffects::zeros(0, 0)).collect(),
            PiecewiseBaseline::new(vec![0.0, 0.3, 0.9, horizon], l.iter().map(|h| vec![*h; 3]).collect()).unwrap(),
        )
        .unwrap()
    }

    fn rule() -> RunningIntegral {
        RunningIntegral::new(Quadrature::default())
    }

    #[test]
    fn competing_exponentials() {
        let (l1, l2) = (0.7, 0.4);
        let p = constant(&[l1, l2], 3.0);
        for (s, t) in [(0.0, 0.25), (0.2, 1.3), (1.0, 2.0)] {
            let got = conditional_risk(&p, &NoTrajectories, 0, &[], s, t, &rule()).unwrap();
            let want = l1 / (l1 + l2) * (1.0 - (-(l1 + l2) * t).exp());
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let single = constant(&[0.9], 3.0);
        let got = conditional_risk(&single, &NoTrajectories, 0, &[], 0.5, 1.0, &rule()).unwrap();
        assert!((got - (1.0 - (-0.9f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn tiny_window_has_tiny_risk_and_horizon_is_enforced() {
        let p = constant(&[0.7, 0.4], 3.0);
        let r = conditional_risk(&p, &NoTrajectories, 0, &[], 1.0, 1e-9, &rule()).unwrap();
        assert!(r < 1e-8);
        assert!(matches!(conditional_risk(&p, &NoTrajectories, 0, &[], 2.5, 1.0, &rule()), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn time_varying_hazard_matches_nested_quadrature() {
        // λ_1 = 0.5 e^{0.8 η}, λ_2 = 0.3 e^{-0.4 η}, η(u) = 0.2 + 0.9 u
        let mut p = constant(&[0.5, 0.3], 3.0);
        p.causes[0].alpha = vec![0.8];
        p.causes[1].alpha = vec![-0.4];
        let traj = FnTrajectories::new(1, |_, _, u| 0.2 + 0.9 * u);
        let (s, t): (f64, f64) = (0.1, 1.7);
        let h1 = |u: f64| 0.5 * (0.8 * (0.2 + 0.9 * u)).exp();
        // closed-form cumulative of each exponential-linear hazard
        let cum = |u: f64| 0.5 * (0.16f64).exp() * ((0.72 * u).exp() - (0.72 * s).exp()) / 0.72 + 0.3 * (-0.08f64).exp() * ((-0.36 * u).exp() - (-0.36 * s).exp()) / -0.36;
        let fine = Quadrature::new(40).unwrap();
        let want: f64 = (0..200).map(|j| {
            let (a, b) = (s + t * j as f64 / 200.0, s + t * (j + 1) as f64 / 200.0);
            fine.integrate(a, b, |u| h1(u) * (-cum(u)).exp())
        }).sum();
        let got = conditional_risk(&p, &traj, 0, &[], s, t, &rule()).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let p = constant(&[0.7, 0.4], 3.0);
        let pred = Predictor::new(vec![], vec![], p.clone(), vec![p.clone(), p], 15).unwrap();
        let mut rng = crate::samplers::stream_rng(1, 1);
        let d = pred.risk_draws(&[], &[], 0.5, 0.25, 5, &mut rng).unwrap();
        assert_eq!(d.draws.len(), 10);
        assert_eq!(d.lo95, d.hi95);
        assert!((d.mean - pred.risk_point(&[], &[], 0.5, 0.25).unwrap()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn risk_is_a_probability_and_grows_with_the_window(
            l1 in 0.01f64..3.0, l2 in 0.01f64..3.0, a1 in -1.5f64..1.5, a2 in -1.5f64..1.5,
            slope in -2.0f64..2.0, s in 0.0f64..1.0, t1 in 0.01f64..1.0, dt in 0.0f64..0.9,
        ) {
            let mut p = constant(&[l1, l2], 3.0);
            p.causes[0].alpha = vec![a1];
            p.causes[1].alpha = vec![a2];
            let traj = FnTrajectories::new(1, move |_, _, u| slope * u);
            let r1 = conditional_risk(&p, &traj, 0, &[], s, t1, &rule()).unwrap();
            let r2 = conditional_risk(&p, &traj, 0, &[], s, t1 + dt, &rule()).unwrap();
            prop_assert!((0.0..1.0).contains(&r1) && (0.0..1.0).contains(&r2));
            prop_assert!(r2 >= r1 - 1e-12);
        }

        #[test]
        fn constant_hazards_are_memoryless(l1 in 0.01f64..3.0, l2 in 0.01f64..3.0, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, t in 0.01f64..1.5) {
            let p = constant(&[l1, l2], 3.0);
            let a = conditional_risk(&p, &NoTrajectories, 0, &[], s1, t, &rule()).unwrap();
            let b = conditional_risk(&p, &NoTrajectories, 0, &[], s2, t, &rule()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
