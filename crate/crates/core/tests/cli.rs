use std::fs;
use std::path::Path;

use twostage::cli::main_with_args;
use twostage::config::Config;

const QUICK: &str = r#"{
  "seed": 9,
  "scenario": { "n_subjects": 120 },
  "stage1": { "mcmc": { "chains": 1, "iters": 200, "burnin": 100, "thin": 1, "seed": 9 },
              "prediction": { "draws": 60, "burnin": 30 } },
  "stage2": { "mcmc": { "chains": 1, "iters": 300, "burnin": 100, "thin": 1, "seed": 9 } },
  "prediction": { "parameter_draws": 10, "landmarks": [0.0, 0.5],
                  "random_effects": { "draws": 60, "burnin": 30 } }
}"#;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let cfg = dir.join("quick.json");
    let mut all = vec!["twostage".to_string(), "--config".into(), cfg.display().to_string()];
    all.extend(args.iter().map(|a| a.to_string()));
    main_with_args(all)
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn pipeline_round_trip_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("quick.json"), QUICK).unwrap();
    let p = |s: &str| d.join(s).display().to_string();

    assert_eq!(run(d, &["simulate", "--out", &p("sim")]), 0);
    for f in ["all/longitudinal.csv", "all/subjects.csv", "train/subjects.csv", "validation/longitudinal.csv", "truth.json"] {
        assert!(d.join("sim").join(f).exists(), "{f}");
    }
    assert_eq!(run(d, &["simulate", "--out", &p("sim2")]), 0);
    assert_eq!(read(d.join("sim/all/longitudinal.csv")), read(d.join("sim2/all/longitudinal.csv")));

    assert_eq!(run(d, &["fit", "--data", &p("sim/train"), "--out", &p("fit")]), 0);
    assert!(d.join("fit/stage1/y1.json").exists());
    let draws = read(d.join("fit/stage2_draws.csv"));
    assert!(draws.starts_with("iteration,parameter,value"));
    assert!(draws.contains("included:"));

    assert_eq!(run(d, &["select", "--fit", &p("fit"), "--out", &p("sel.csv"), "--rule", "bf", "--data", &p("sim/train")]), 0);
    let sel = read(d.join("sel.csv"));
    assert_eq!(sel.lines().next().unwrap(), "name,cause,est,sd,ci2.5,ci97.5,lbfdr,bf,selected");
    assert_eq!(sel.lines().count(), 1 + 2 * (24 + 10));
    assert!(d.join("fit/refit_draws.csv").exists());

    assert_eq!(run(d, &["predict", "--fit", &p("fit"), "--data", &p("sim/validation"), "--out", &p("pred.csv")]), 0);
    assert_eq!(run(d, &["predict", "--fit", &p("fit"), "--data", &p("sim/validation"), "--out", &p("pred2.csv")]), 0);
    let pred = read(d.join("pred.csv"));
    assert_eq!(pred, read(d.join("pred2.csv")));
    assert_eq!(pred.lines().next().unwrap(), "id,s,t,risk,lo95,hi95");
    for line in pred.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(3).map(|x| x.parse().unwrap()).collect();
        assert!(0.0 <= f[1] && f[1] <= f[0] + 1e-12 && f[0] <= f[2] + 1e-12 && f[2] <= 1.0, "{line}");
    }

    assert_eq!(run(d, &["evaluate", "--predictions", &p("pred.csv"), "--data", &p("sim/validation"), "--out", &p("eval.csv")]), 0);
    let eval = read(d.join("eval.csv"));
    let mut lines = eval.lines();
    assert_eq!(lines.next().unwrap(), "s,t,auc,bs,n_cases,n_controls");
    assert_eq!(lines.count(), 2);
}

#[test]
fn print_config_round_trips() {
    let cfg = Config::default();
    let back: Config = serde_json::from_str(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(main_with_args(["twostage", "--print-config"]), 0);
}

#[test]
fn usage_and_data_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(main_with_args(["twostage", "frobnicate"]), 2);
    assert_eq!(main_with_args(["twostage", "select", "--fit", "x"]), 2);
    let missing = d.join("none.json").display().to_string();
    assert_eq!(main_with_args(["twostage", "--config", missing.as_str(), "simulate", "--out", "x"]), 2);
    let empty = d.join("empty").display().to_string();
    fs::create_dir(d.join("empty")).unwrap();
    let out = d.join("out").display().to_string();
    assert_eq!(main_with_args(["twostage", "fit", "--data", empty.as_str(), "--out", out.as_str()]), 2);
    fs::write(d.join("bad.json"), r#"{"stage2": {"mcmc": {"iters": 10, "burnin": 20}}}"#).unwrap();
    let bad = d.join("bad.json").display().to_string();
    let sim = d.join("sim").display().to_string();
    assert_eq!(main_with_args(["twostage", "--config", bad.as_str(), "simulate", "--out", sim.as_str()]), 2);
}
