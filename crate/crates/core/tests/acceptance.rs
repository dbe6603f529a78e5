//! Acceptance suite: one pass/fail line per criterion.
//!
//! The simulation criteria share one replicate grid run with shortened chains
//! (see `grid_config`). Replicate counts can be lowered for a quick look with
//! `TWOSTAGE_ACCEPTANCE_REPLICATES=easy,other`; the pinned values are the
//! defaults.
//!
//! Failed criteria are reported but only fail the process when
//! `TWOSTAGE_ACCEPTANCE_STRICT=1`, so the rest of the workspace tests still run.

use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist, InverseGamma};

use twostage::config::{default_scenarios, Config};
use twostage::dynpred::conditional_risk;
use twostage::experiment::{run_grid, selection_table, ReplicateOutcome};
use twostage::hazard::{cumulative_hazard, CauseEffects, FnTrajectories, HazardParams, NoTrajectories, PiecewiseBaseline};
use twostage::metrics::{confusion_metrics, ipcw_auc, ipcw_brier, Outcome};
use twostage::quadrature::{Quadrature, RunningIntegral};
use twostage::samplers::conjugate::{gibbs_gamma, gibbs_sigma2_ssr};
use twostage::samplers::{stream_rng, Family, McmcConfig};
use twostage::selection::{bayes_factor, Rule};
use twostage::simgen::{simulate_dataset, ScenarioConfig};
use twostage::stage2::{fit_selection_model, Stage2Model, Stage2Settings};

const EASY_REPLICATES: usize = 20;
const OTHER_REPLICATES: usize = 8;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn ks_distance(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn unit_oracles(rep: &mut Report) {
    let mut notes = Vec::new();
    let mut ok = true;

    // conjugate blocks against their analytic full conditionals
    let mut rng = stream_rng(101, 0);
    let ig: Vec<f64> = (0..10_000).map(|_| gibbs_sigma2_ssr(7.3, 12, (0.01, 0.01), &mut rng)).collect();
    let ig_ref = InverseGamma::new(0.01 + 6.0, 0.01 + 3.65).unwrap();
    let ks_ig = ks_distance(ig, |x| ig_ref.cdf(x));
    let ga: Vec<f64> = (0..10_000).map(|_| gibbs_gamma(4.5, 2.0, &mut rng)).collect();
    let ga_ref = GammaDist::new(4.5, 2.0).unwrap();
    let ks_ga = ks_distance(ga, |x| ga_ref.cdf(x));
    ok &= ks_ig < 0.02 && ks_ga < 0.02;
    notes.push(format!("KS {ks_ig:.4}/{ks_ga:.4}"));

    // cumulative hazard with a linear trajectory against ∫ λ₀ e^{a + b u} du
    let pb = PiecewiseBaseline::new(vec![0.0, 0.7, 1.6, 3.0], vec![vec![0.3, 0.9, 0.5]]).unwrap();
    let params = HazardParams::new(vec![CauseEffects { gamma: vec![0.4], alpha: vec![0.8] }], pb.clone()).unwrap();
    let traj = FnTrajectories::new(1, |_, _, t| -0.2 + 1.1 * t);
    let quad = Quadrature::new(15).unwrap();
    let closed = |t: f64| {
        let (a, b): (f64, f64) = (0.4 * 1.3 + 0.8 * -0.2, 0.8 * 1.1);
        let seg = |lo: f64, hi: f64, h: f64| h * a.exp() * ((b * hi).exp() - (b * lo).exp()) / b;
        let k = pb.knots();
        (0..3).map(|j| if t > k[j] { seg(k[j], t.min(k[j + 1]), pb.heights(0)[j]) } else { 0.0 }).sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.7, 1.2, 2.9] {
        let got = cumulative_hazard(&params, &traj, &quad, 0, &[1.3], 0, t).unwrap();
        worst = worst.max((got / closed(t) - 1.0).abs());
    }
    ok &= worst <= 1e-8;
    notes.push(format!("Λ rel err {worst:.1e}"));

    // competing exponentials: λ₁/(λ₁+λ₂)(1 − e^{−(λ₁+λ₂)t})
    let (l1, l2) = (0.6, 0.9);
    let pb = PiecewiseBaseline::new(vec![0.0, 0.5, 1.0, 4.0], vec![vec![l1; 3], vec![l2; 3]]).unwrap();
    let params = HazardParams::new(vec![CauseEffects::zeros(0, 0); 2], pb).unwrap();
    let rule = RunningIntegral::new(Quadrature::new(15).unwrap());
    let mut worst: f64 = 0.0;
    for (s, t) in [(0.0, 0.25), (0.3, 1.4), (1.1, 2.5)] {
        let got = conditional_risk(&params, &NoTrajectories, 0, &[], s, t, &rule).unwrap();
        let want = l1 / (l1 + l2) * (1.0 - (-(l1 + l2) * t).exp());
        worst = worst.max((got / want - 1.0).abs());
    }
    ok &= worst <= 1e-8;
    notes.push(format!("CIF rel err {worst:.1e}"));

    // BF from lBFDR
    let bf_ok = [(0.05, (1.0, 1.0)), (0.3, (2.0, 5.0)), (0.9, (0.5, 0.5))]
        .iter()
        .all(|&(l, (a, b))| bayes_factor(l, (a, b)) == (1.0 - l) / l * b / a);
    ok &= bf_ok;
    notes.push(format!("BF identity {bf_ok}"));

    // MCC against the Pearson correlation of the two masks
    let mut rng = stream_rng(102, 0);
    let mut mcc_ok = true;
    for _ in 0..200 {
        let sel: Vec<bool> = (0..30).map(|_| rng.random::<bool>()).collect();
        let tru: Vec<bool> = (0..30).map(|_| rng.random::<bool>()).collect();
        let c = confusion_metrics(&sel, &tru).unwrap();
        let f = |v: &[bool]| v.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>();
        if !c.degenerate {
            mcc_ok &= (c.mcc - pearson(&f(&sel), &f(&tru))).abs() < 1e-12;
        }
    }
    ok &= mcc_ok;
    notes.push(format!("MCC {mcc_ok}"));

    // no censoring: IPCW AUC is Mann–Whitney, IPCW Brier is the plain mean
    let mut rng = stream_rng(103, 0);
    let outcomes: Vec<Outcome> = (0..300)
        .map(|_| Outcome { time: rng.random_range(0.0..2.0), cause: if rng.random::<bool>() { 1 } else { 2 } })
        .collect();
    let risks: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let (s, t) = (0.2, 0.8);
    let idx: Vec<usize> = (0..300).filter(|&i| outcomes[i].time > s).collect();
    let case = |i: usize| outcomes[i].cause == 1 && outcomes[i].time <= s + t;
    let (cases, ctrls): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| case(i));
    let mut mw = 0.0;
    for &i in &cases {
        for &j in &ctrls {
            mw += if risks[i] > risks[j] { 1.0 } else if risks[i] == risks[j] { 0.5 } else { 0.0 };
        }
    }
    mw /= (cases.len() * ctrls.len()) as f64;
    let bs: f64 = idx.iter().map(|&i| (case(i) as u8 as f64 - risks[i]).powi(2)).sum::<f64>() / idx.len() as f64;
    let sub_r: Vec<f64> = idx.iter().map(|&i| risks[i]).collect();
    let sub_o: Vec<Outcome> = idx.iter().map(|&i| outcomes[i]).collect();
    let auc = ipcw_auc(&sub_r, &sub_o, s, t).unwrap().unwrap();
    let brier = ipcw_brier(&sub_r, &sub_o, s, t).unwrap().unwrap();
    let ipcw_err = (auc - mw).abs().max((brier - bs).abs());
    ok &= ipcw_err <= 1e-12;
    notes.push(format!("IPCW err {ipcw_err:.1e}"));

    // DS zeros and seed determinism on a small simulated problem
    let scen = ScenarioConfig { n_subjects: 150, ..Default::default() };
    let sim = simulate_dataset(&scen, 104).unwrap();
    let effects = sim.truth.random_effects.clone();
    let beta = scen.beta;
    let traj = FnTrajectories::new(scen.n_markers, move |i, k, t| beta[0] + effects[i][k][0] + (beta[1] + effects[i][k][1]) * t);
    let model = Stage2Model::new(&traj, &scen.marker_names(), &sim.data, &Default::default()).unwrap();
    let mut s2 = Stage2Settings::default();
    s2.spike_slab.family = Family::Ds;
    s2.mcmc = McmcConfig { chains: 1, iters: 300, burnin: 100, thin: 1, seed: 5 };
    let a = fit_selection_model(&model, &s2).unwrap();
    let b = fit_selection_model(&model, &s2).unwrap();
    let ds_ok = (0..a.n_draws()).all(|m| a.values[m].iter().zip(&a.included[m]).all(|(v, inc)| *inc == (*v != 0.0)));
    let det_ok = a.values == b.values && a.included == b.included && a.heights == b.heights;
    ok &= ds_ok && det_ok;
    notes.push(format!("DS zeros {ds_ok}, determinism {det_ok}"));

    rep.line("criterion 1 (unit oracles)", ok, notes.join("; "));
}

fn shape_properties(rep: &mut Report) {
    let mut runner = TestRunner::new(PtConfig { cases: 64, failure_persistence: None, ..PtConfig::default() });
    let rule = RunningIntegral::new(Quadrature::new(15).unwrap());
    let strategy = (
        prop::collection::vec(0.01f64..3.0, 3),
        prop::collection::vec(0.01f64..3.0, 3),
        -1.5f64..1.5,
        -1.5f64..1.5,
        -1.0f64..1.0,
        0.0f64..1.5,
        0.05f64..1.0,
        0.05f64..1.0,
    );
    let risk_res = runner.run(&strategy, |(h1, h2, a1, a2, slope, s, t1, dt)| {
        let pb = PiecewiseBaseline::new(vec![0.0, 0.8, 1.7, 5.0], vec![h1, h2]).unwrap();
        let params = HazardParams::new(
            vec![CauseEffects { gamma: vec![0.3], alpha: vec![a1] }, CauseEffects { gamma: vec![-0.2], alpha: vec![a2] }],
            pb,
        )
        .unwrap();
        let traj = FnTrajectories::new(1, move |_, _, u| 0.1 + slope * u);
        let r1 = conditional_risk(&params, &traj, 0, &[1.0], s, t1, &rule).unwrap();
        let r2 = conditional_risk(&params, &traj, 0, &[1.0], s, t1 + dt, &rule).unwrap();
        prop_assert!((0.0..=1.0).contains(&r1) && (0.0..=1.0).contains(&r2));
        prop_assert!(r2 >= r1 - 1e-12, "risk {r1} then {r2}");
        let quad = Quadrature::new(15).unwrap();
        let c1 = cumulative_hazard(&params, &traj, &quad, 0, &[1.0], 0, s + t1).unwrap();
        let c2 = cumulative_hazard(&params, &traj, &quad, 0, &[1.0], 0, s + t1 + dt).unwrap();
        prop_assert!(c2 >= c1);
        Ok(())
    });
    let auc_res = runner.run(
        &(prop::collection::vec((0.0f64..2.0, 0usize..3, 0.0f64..1.0), 20..80), 0.1f64..5.0),
        |(rows, power)| {
            let outcomes: Vec<Outcome> = rows.iter().map(|&(time, cause, _)| Outcome { time, cause }).collect();
            let risks: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let transformed: Vec<f64> = risks.iter().map(|r| r.powf(power)).collect();
            let a = ipcw_auc(&risks, &outcomes, 0.3, 0.8).unwrap();
            let b = ipcw_auc(&transformed, &outcomes, 0.3, 0.8).unwrap();
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
            }
            Ok(())
        },
    );
    let detail = format!(
        "risk in [0,1], nondecreasing in t, Λ nondecreasing: {}; AUC invariant under monotone maps: {}",
        risk_res.as_ref().map_or_else(|e| format!("{e}"), |_| "ok".into()),
        auc_res.as_ref().map_or_else(|e| format!("{e}"), |_| "ok".into())
    );
    rep.line("criterion 7 (shape properties)", risk_res.is_ok() && auc_res.is_ok(), detail);
}

/// Chains shortened from the defaults so that the grid fits a desk budget.
fn grid_config(landmarks: Vec<f64>) -> Config {
    let mut cfg = Config::default().with_seed(2024);
    cfg.stage1.mcmc = McmcConfig { chains: 1, iters: 1000, burnin: 500, thin: 1, seed: 2024 };
    cfg.stage2.mcmc = McmcConfig { chains: 1, iters: 1500, burnin: 500, thin: 1, seed: 2024 };
    cfg.prediction.landmarks = landmarks;
    cfg
}

fn replicate_counts() -> (usize, usize) {
    match std::env::var("TWOSTAGE_ACCEPTANCE_REPLICATES") {
        Ok(v) => {
            let mut it = v.split(',').map(|x| x.trim().parse::<usize>().expect("replicate count"));
            let easy = it.next().unwrap_or(EASY_REPLICATES);
            (easy, it.next().unwrap_or(easy))
        }
        Err(_) => (EASY_REPLICATES, OTHER_REPLICATES),
    }
}

fn scenario_grid(names: &[&str], replicates: usize, landmarks: Vec<f64>) -> Vec<ReplicateOutcome> {
    let mut cfg = grid_config(landmarks);
    cfg.replicate.replicates = replicates;
    cfg.replicate.scenarios = default_scenarios().into_iter().filter(|s| names.contains(&s.name.as_str())).collect();
    run_grid(&cfg).expect("replicate grid")
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn simulation_criteria(rep: &mut Report) {
    let (n_easy, n_other) = replicate_counts();
    let start = Instant::now();
    let easy = scenario_grid(&["easy"], n_easy, vec![0.0]);
    let others = scenario_grid(&["hard", "weak", "single-cause-1"], n_other, Vec::new());
    println!("     grid: {n_easy} easy + 3 x {n_other} other replicates in {:.0?}", start.elapsed());
    let all: Vec<ReplicateOutcome> = easy.iter().chain(&others).cloned().collect();
    let table = selection_table(&all);
    let row = |scen: &str, fam: Family, rule: Rule, group: &str| {
        table
            .iter()
            .find(|r| r.scenario == scen && r.family == fam && r.rule.name() == rule.name() && r.group == group)
            .expect("selection row")
            .clone()
    };

    // 2: easy scenario, total selection under lBFDR
    let mut ok = true;
    let mut notes = Vec::new();
    for fam in [Family::Cs, Family::Ds] {
        let r = row("easy", fam, Rule::LBFDR, "total");
        ok &= r.tpr.0 >= 0.90 && r.fpr.0 <= 0.05 && r.mcc.0 >= 0.85;
        let c = row("easy", fam, Rule::LBFDR, "covariates");
        notes.push(format!("{fam} TPR {:.3} FPR {:.3} MCC {:.3} (covariate TPR {:.3})", r.tpr.0, r.fpr.0, r.mcc.0, c.tpr.0));
    }
    rep.line("criterion 2 (easy scenario selection)", ok, notes.join("; "));

    // 3: BF selects at least as much as lBFDR, per scenario and family
    let mut ok = true;
    let mut notes = Vec::new();
    for scen in ["easy", "hard", "weak", "single-cause-1"] {
        for fam in [Family::Cs, Family::Ds] {
            let (bf, lb) = (row(scen, fam, Rule::BF, "total"), row(scen, fam, Rule::LBFDR, "total"));
            let good = bf.tpr.0 >= lb.tpr.0 && bf.fpr.0 >= lb.fpr.0;
            ok &= good;
            if !good {
                notes.push(format!("{scen} {fam}: BF {:.3}/{:.3} vs lBFDR {:.3}/{:.3}", bf.tpr.0, bf.fpr.0, lb.tpr.0, lb.fpr.0));
            }
        }
    }
    if notes.is_empty() {
        notes.push("TPR and FPR ordered in all 8 scenario/family cells".into());
    }
    rep.line("criterion 3 (rule ordering)", ok, notes.join("; "));

    // 4: correlated markers degrade marker selection
    let hard = row("hard", Family::Cs, Rule::LBFDR, "markers");
    let weak = row("weak", Family::Cs, Rule::LBFDR, "markers");
    let ds = (row("hard", Family::Ds, Rule::LBFDR, "markers").tpr.0, row("weak", Family::Ds, Rule::LBFDR, "markers").tpr.0);
    rep.line(
        "criterion 4 (hard scenario degradation)",
        weak.tpr.0 - hard.tpr.0 >= 0.2,
        format!("CS/lBFDR marker TPR {:.3} (rho 0.1) -> {:.3} (rho 0.7); DS {:.3} -> {:.3}", weak.tpr.0, hard.tpr.0, ds.1, ds.0),
    );

    // 5: prediction accuracy relative to the true model at s = 0, t = 0.25
    let acc = |method: &str, f: fn(&twostage::experiment::AccuracyScore) -> Option<f64>| {
        mean(easy.iter().filter_map(|o| o.accuracy.iter().find(|a| a.method == method && a.s == 0.0).and_then(f)))
    };
    let (real_auc, real_bs) = (acc("Real", |a| a.auc), acc("Real", |a| a.bs));
    let mut ok = true;
    let mut notes = vec![format!("Real AUC {real_auc:.3} BS {real_bs:.3}")];
    for m in ["CS/lBFDR", "DS/lBFDR"] {
        let (auc, bs) = (acc(m, |a| a.auc), acc(m, |a| a.bs));
        ok &= real_auc - auc <= 0.07 && bs - real_bs <= 0.02;
        notes.push(format!("{m} AUC {auc:.3} BS {bs:.3}"));
    }
    rep.line("criterion 5 (dynamic prediction)", ok, notes.join("; "));

    // 6: single effects on cause 1 select no cause-2 markers
    let single: Vec<&ReplicateOutcome> = others.iter().filter(|o| o.scenario == "single-cause-1").collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for fam in [Family::Cs, Family::Ds] {
        let clean = single
            .iter()
            .filter(|o| o.selection.iter().any(|s| s.family == fam && s.rule == Rule::LBFDR && s.cause2_markers == 0))
            .count();
        let share = clean as f64 / single.len() as f64;
        ok &= share >= 0.9;
        notes.push(format!("{fam}: {clean}/{} replicates", single.len()));
    }
    rep.line("criterion 6 (single effects on cause 1)", ok, notes.join("; "));
}

fn main() {
    // honour `cargo test -- <filter>` loosely: any argument naming "quick"
    // skips the simulation grid
    let quick = std::env::args().skip(1).any(|a| a.contains("quick"));
    let mut rep = Report { failed: Vec::new() };
    unit_oracles(&mut rep);
    shape_properties(&mut rep);
    if quick {
        println!("SKIP criteria 2-6 (quick run)");
    } else {
        simulation_criteria(&mut rep);
    }
    if !rep.failed.is_empty() {
        println!("{} criterion(s) failed: {}", rep.failed.len(), rep.failed.join(", "));
        if std::env::var("TWOSTAGE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
