//! Selection accuracy (TPR, FPR, MCC) and landmark prediction accuracy
//! (IPCW AUC and Brier score for cause 1 with competing risks).
//!
//! For a landmark `s` and window `t`, subjects still at risk at `s` are
//! classified as cases (cause-1 event in `(s, s+t]`), controls (event-free at
//! `s+t`, or a cause-2 event in the window) or censored in the window (weight
//! 0). Cases and controls are weighted by `1/Ĝ(min(T_i, s+t)⁻)`, where `Ĝ` is
//! the Kaplan–Meier censoring survival on the at-risk set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub mcc: f64,
    /// A factor of the MCC denominator was 0 and MCC was set to 0.
    pub degenerate: bool,
}

pub fn confusion_metrics(selected: &[bool], truth: &[bool]) -> Result<Confusion> {
    if selected.len() != truth.len() {
        return Err(Error::DimensionMismatch { marker: String::new(), what: "selection mask", expected: truth.len(), actual: selected.len() });
    }
    if selected.is_empty() {
        return Err(Error::Domain("confusion metrics of empty masks".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (s, t) in selected.iter().zip(truth) {
        match (s, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let (ftp, ffp, ftn, ffn) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let den = (ftp + ffp) * (ftp + ffn) * (ftn + ffp) * (ftn + ffn);
    let (mcc, degenerate) = if den == 0.0 { (0.0, true) } else { ((ftp * ftn - ffp * ffn) / den.sqrt(), false) };
    Ok(Confusion { tp, fp, tn, fn_, tpr: ratio(tp, fn_), fpr: ratio(fp, tn), mcc, degenerate })
}

/// Observed follow-up: `cause` 0 is censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub time: f64,
    pub cause: usize,
}

/// Kaplan–Meier estimate of the censoring survival `G`. At tied times events
/// are taken to precede censorings.
#[derive(Debug, Clone)]
pub struct CensoringKm {
    times: Vec<f64>,
    /// `surv[j] = G(times[j])`.
    surv: Vec<f64>,
}

impl CensoringKm {
    pub fn fit(outcomes: &[Outcome]) -> Self {
        let mut sorted: Vec<Outcome> = outcomes.to_vec();
        // events before censorings at equal times
        sorted.sort_by(|a, b| a.time.total_cmp(&b.time).then((a.cause == 0).cmp(&(b.cause == 0))));
        let n = sorted.len();
        let (mut times, mut surv) = (Vec::new(), Vec::new());
        let mut g = 1.0;
        let mut i = 0;
        while i < n {
            let t = sorted[i].time;
            let mut j = i;
            while j < n && sorted[j].time == t && sorted[j].cause != 0 {
                j += 1;
            }
            let mut k = j;
            while k < n && sorted[k].time == t {
                k += 1;
            }
            let censored = k - j;
            if censored > 0 {
                // at risk for censoring: still under follow-up after the events at t
                let at_risk = n - j;
                g *= 1.0 - censored as f64 / at_risk as f64;
                times.push(t);
                surv.push(g);
            }
            i = k;
        }
        Self { times, surv }
    }

    /// `G(u)`.
    pub fn at(&self, u: f64) -> f64 {
        let j = self.times.partition_point(|&x| x <= u);
        if j == 0 { 1.0 } else { self.surv[j - 1] }
    }

    /// `G(u⁻)`.
    pub fn before(&self, u: f64) -> f64 {
        let j = self.times.partition_point(|&x| x < u);
        if j == 0 { 1.0 } else { self.surv[j - 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Case,
    Control,
    Censored,
}

struct Weighted {
    risk: f64,
    status: Status,
    weight: f64,
}

fn weighted(risks: &[f64], outcomes: &[Outcome], s: f64, t: f64) -> Result<Vec<Weighted>> {
    if risks.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { marker: String::new(), what: "risk vector", expected: outcomes.len(), actual: risks.len() });
    }
    if !(s >= 0.0 && t > 0.0 && s.is_finite() && t.is_finite()) {
        return Err(Error::Domain(format!("landmark s={s}, window t={t}")));
    }
    if let Some(r) = risks.iter().find(|r| !r.is_finite()) {
        return Err(Error::Domain(format!("non-finite predicted risk {r}")));
    }
    let at_risk: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].time > s).collect();
    let sub: Vec<Outcome> = at_risk.iter().map(|&i| outcomes[i]).collect();
    let km = CensoringKm::fit(&sub);
    let horizon = s + t;
    Ok(at_risk
        .iter()
        .map(|&i| {
            let o = outcomes[i];
            let status = if o.time > horizon {
                Status::Control
            } else if o.cause == 1 {
                Status::Case
            } else if o.cause == 0 {
                Status::Censored
            } else {
                Status::Control
            };
            let weight = match status {
                Status::Censored => 0.0,
                _ => {
                    let g = km.before(o.time.min(horizon));
                    if g > 0.0 { 1.0 / g } else { 0.0 }
                }
            };
            Weighted { risk: risks[i], status, weight }
        })
        .collect())
}

/// Accuracy at one landmark and window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub s: f64,
    pub t: f64,
    /// `None` without cases or without controls.
    pub auc: Option<f64>,
    /// `None` when nobody is at risk at `s`.
    pub bs: Option<f64>,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// IPCW AUC: weighted concordance of case and control risks, ties counting
/// one half.
pub fn ipcw_auc(risks: &[f64], outcomes: &[Outcome], s: f64, t: f64) -> Result<Option<f64>> {
    Ok(auc_of(&weighted(risks, outcomes, s, t)?))
}

fn auc_of(w: &[Weighted]) -> Option<f64> {
    let mut controls: Vec<(f64, f64)> =
        w.iter().filter(|x| x.status == Status::Control && x.weight > 0.0).map(|x| (x.risk, x.weight)).collect();
    let cases: Vec<(f64, f64)> = w.iter().filter(|x| x.status == Status::Case && x.weight > 0.0).map(|x| (x.risk, x.weight)).collect();
    if cases.is_empty() || controls.is_empty() {
        return None;
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    // cumulative control weight by risk
    let mut cum = Vec::with_capacity(controls.len() + 1);
    cum.push(0.0);
    for c in &controls {
        cum.push(cum.last().unwrap() + c.1);
    }
    let total_c = *cum.last().unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for &(r, wi) in &cases {
        let below = controls.partition_point(|c| c.0 < r);
        let upto = controls.partition_point(|c| c.0 <= r);
        num += wi * (cum[below] + 0.5 * (cum[upto] - cum[below]));
        den += wi * total_c;
    }
    Some(num / den)
}

/// IPCW Brier score: `(1/n) Σ W_i (D_i − r_i)²` over the at-risk set.
pub fn ipcw_brier(risks: &[f64], outcomes: &[Outcome], s: f64, t: f64) -> Result<Option<f64>> {
    Ok(brier_of(&weighted(risks, outcomes, s, t)?))
}

fn brier_of(w: &[Weighted]) -> Option<f64> {
    if w.is_empty() {
        return None;
    }
    let sum: f64 = w
        .iter()
        .map(|x| {
            let d = if x.status == Status::Case { 1.0 } else { 0.0 };
            x.weight * (d - x.risk).powi(2)
        })
        .sum();
    Some(sum / w.len() as f64)
}

/// AUC, Brier score and case/control counts at `(s, t)`.
pub fn accuracy(risks: &[f64], outcomes: &[Outcome], s: f64, t: f64) -> Result<Accuracy> {
    let w = weighted(risks, outcomes, s, t)?;
    Ok(Accuracy {
        s,
        t,
        auc: auc_of(&w),
        bs: brier_of(&w),
        n_cases: w.iter().filter(|x| x.status == Status::Case).count(),
        n_controls: w.iter().filter(|x| x.status == Status::Control).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn confusion_examples() {
        let mut sel = vec![true; 8];
        sel.extend(vec![false; 26]);
        let c = confusion_metrics(&sel, &sel).unwrap();
        assert_eq!((c.tpr, c.fpr, c.mcc), (1.0, 0.0, 1.0));

        // TP=2, FN=2, FP=2, TN=18
        let truth: Vec<bool> = (0..24).map(|i| i < 4).collect();
        let sel: Vec<bool> = (0..24).map(|i| i < 2 || (4..6).contains(&i)).collect();
        let c = confusion_metrics(&sel, &truth).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (2, 2, 2, 18));
        assert!((c.tpr - 0.5).abs() < 1e-15 && (c.fpr - 0.1).abs() < 1e-15);
        // brute force: Pearson correlation of the two 0/1 vectors
        let x: Vec<f64> = sel.iter().map(|b| *b as u8 as f64).collect();
        let y: Vec<f64> = truth.iter().map(|b| *b as u8 as f64).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&x), mean(&y));
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let pearson = cov / (vx * vy).sqrt();
        assert!((c.mcc - 0.4).abs() < 1e-12 && (c.mcc - pearson).abs() < 1e-12);

        let c = confusion_metrics(&[false; 5], &[true, false, true, false, false]).unwrap();
        assert_eq!((c.tpr, c.fpr, c.mcc, c.degenerate), (0.0, 0.0, 0.0, true));
        assert!(confusion_metrics(&[true], &[true, false]).is_err());
    }

    #[test]
    fn censoring_km_matches_hand_computation() {
        // times 1(c) 2(e) 2(c) 3(c) 4(e)
        let o = [
            Outcome { time: 1.0, cause: 0 },
            Outcome { time: 2.0, cause: 1 },
            Outcome { time: 2.0, cause: 0 },
            Outcome { time: 3.0, cause: 0 },
            Outcome { time: 4.0, cause: 2 },
        ];
        let km = CensoringKm::fit(&o);
        assert_eq!(km.before(1.0), 1.0);
        assert!((km.at(1.0) - 0.8).abs() < 1e-15);
        // at 2 the event leaves first: 3 at risk, one censored
        assert!((km.at(2.0) - 0.8 * 2.0 / 3.0).abs() < 1e-15);
        assert!((km.before(2.0) - 0.8).abs() < 1e-15);
        assert!((km.at(3.5) - 0.8 * 2.0 / 3.0 * 0.5).abs() < 1e-15);
    }

    fn uncensored(n: usize, seed: u64) -> (Vec<f64>, Vec<Outcome>) {
        let mut rng = stream_rng(seed, 0);
        let mut risks = Vec::new();
        let mut out = Vec::new();
        for _ in 0..n {
            let r: f64 = rng.random();
            let time = 1.0 + rng.random::<f64>() * 2.0;
            let cause = if rng.random::<f64>() < r { 1 } else { 2 };
            risks.push(r);
            out.push(Outcome { time, cause });
        }
        (risks, out)
    }

    #[test]
    fn perfect_ordering_gives_auc_one() {
        let o: Vec<Outcome> = (0..10).map(|i| Outcome { time: if i < 4 { 1.5 } else { 3.0 }, cause: 1 }).collect();
        let r: Vec<f64> = (0..10).map(|i| if i < 4 { 0.9 } else { 0.1 }).collect();
        assert_eq!(ipcw_auc(&r, &o, 1.0, 1.0).unwrap(), Some(1.0));
        let d: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        assert_eq!(ipcw_brier(&d, &o, 1.0, 1.0).unwrap(), Some(0.0));
    }

    #[test]
    fn uncensored_auc_is_mann_whitney() {
        let (r, o) = uncensored(300, 4);
        let (s, t) = (1.2, 0.8);
        let at: Vec<usize> = (0..r.len()).filter(|&i| o[i].time > s).collect();
        let case = |i: usize| o[i].cause == 1 && o[i].time <= s + t;
        let (mut num, mut den) = (0.0, 0.0);
        for &i in at.iter().filter(|&&i| case(i)) {
            for &j in at.iter().filter(|&&j| !case(j)) {
                den += 1.0;
                num += if r[i] > r[j] { 1.0 } else if r[i] == r[j] { 0.5 } else { 0.0 };
            }
        }
        let got = ipcw_auc(&r, &o, s, t).unwrap().unwrap();
        assert!((got - num / den).abs() < 1e-12);
        let bs: f64 = at.iter().map(|&i| ((case(i) as u8 as f64) - r[i]).powi(2)).sum::<f64>() / at.len() as f64;
        assert!((ipcw_brier(&r, &o, s, t).unwrap().unwrap() - bs).abs() < 1e-12);
    }

    #[test]
    fn uninformative_risks_give_half() {
        let mut rng = stream_rng(9, 1);
        let (_, o) = uncensored(4000, 8);
        let r: Vec<f64> = o.iter().map(|_| rng.random()).collect();
        let auc = ipcw_auc(&r, &o, 1.0, 1.0).unwrap().unwrap();
        assert!((auc - 0.5).abs() < 0.03, "{auc}");
    }

    #[test]
    fn constant_prediction_brier() {
        let (_, o) = uncensored(500, 2);
        let (s, t) = (1.0, 1.0);
        let at: Vec<&Outcome> = o.iter().filter(|x| x.time > s).collect();
        let q = at.iter().filter(|x| x.cause == 1 && x.time <= s + t).count() as f64 / at.len() as f64;
        let p = 0.3;
        let bs = ipcw_brier(&vec![p; o.len()], &o, s, t).unwrap().unwrap();
        assert!((bs - (q * (1.0 - p).powi(2) + (1.0 - q) * p * p)).abs() < 1e-12);
    }

    #[test]
    fn subjects_censored_in_window_get_no_weight() {
        let mut o = vec![Outcome { time: 1.5, cause: 0 }; 3];
        o.extend(vec![Outcome { time: 1.8, cause: 1 }; 2]);
        o.extend(vec![Outcome { time: 3.0, cause: 0 }; 5]);
        let w = weighted(&[0.2; 10], &o, 1.0, 1.0).unwrap();
        assert!(w[..3].iter().all(|x| x.weight == 0.0));
        // 3 of 10 censored before the cases: G = 0.7
        assert!(w[3..].iter().all(|x| (x.weight - 1.0 / 0.7).abs() < 1e-12));
        let a = accuracy(&[0.2; 10], &o, 1.0, 1.0).unwrap();
        assert_eq!((a.n_cases, a.n_controls), (2, 5));
        assert_eq!(ipcw_auc(&[0.2; 5], &o[..5], 1.0, 1.0).unwrap(), None);
    }

    fn censored_sample(seed: u64) -> (Vec<f64>, Vec<Outcome>) {
        let mut rng = stream_rng(seed, 3);
        let (r, mut o) = uncensored(200, seed);
        for x in &mut o {
            let c = 0.5 + 3.0 * rng.random::<f64>();
            if c < x.time {
                *x = Outcome { time: c, cause: 0 };
            }
        }
        (r, o)
    }

    proptest! {
        #[test]
        fn auc_is_rank_invariant(seed in 0u64..500) {
            let (r, o) = censored_sample(seed);
            let a = ipcw_auc(&r, &o, 1.0, 1.0).unwrap();
            let tr: Vec<f64> = r.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            let b = ipcw_auc(&tr, &o, 1.0, 1.0).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn constant_brier_is_minimized_at_weighted_fraction(seed in 0u64..200, dp in -0.2f64..0.2) {
            let (_, o) = censored_sample(seed);
            let w = weighted(&vec![0.0; o.len()], &o, 1.0, 1.0).unwrap();
            let sw: f64 = w.iter().map(|x| x.weight).sum();
            let swd: f64 = w.iter().filter(|x| x.status == Status::Case).map(|x| x.weight).sum();
            let p = swd / sw;
            let at = |q: f64| ipcw_brier(&vec![q; o.len()], &o, 1.0, 1.0).unwrap().unwrap();
            prop_assert!(at(p) <= at(p + dp) + 1e-15);
        }
    }
}
