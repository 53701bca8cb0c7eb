use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use galerkin::cli::RunConfig;
use galerkin::solver::{Mode, TrainedModel};

const POISSON: &str = r#"{
    "pde": {"n_dims": 2, "form": "D(D(u,x),x) + D(D(u,y),y) - 5*sin(pi*(x+y))", "boundary_condition": 1},
    "body": {"layout": "fa fa fa f", "units": [15, 25, 15, 1], "activation": "tanh"},
    "train": {"n_iters": 40, "learning_rate": 0.01},
    "output": {"grid": 21}
}"#;

const HEAT: &str = r#"{
    "pde": {
        "n_dims": 2,
        "form": "D(u,t) - D(D(u,x),x) - D(D(u,y),y) - 5*x*y*(1-x)*(1-y)*cos(pi*(x+y))",
        "initial_condition": "x*y*(1-x)*(1-y)"
    },
    "body": {"layout": "faR fa fa+ f", "units": [10, 25, 10, 1], "activation": "tanh"},
    "train": {"n_iters": 3, "batch_size": 50},
    "output": {"grid": 17}
}"#;

fn galerkin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_galerkin"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn solve(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--config", config, "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    galerkin(&args)
}

fn linf(o: &Output) -> f64 {
    let s = String::from_utf8_lossy(&o.stdout);
    let field = s.split_whitespace().find_map(|w| w.strip_prefix("linf=")).expect("linf printed");
    field.parse().unwrap()
}

#[test]
fn solve_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "poisson.json", POISSON);
    let out = dir.path().join("run");
    let o = solve(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iter,loss"));
    assert_eq!(loss.lines().count(), 41);
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(sol.lines().next(), Some("x,y,u"));
    assert_eq!(sol.lines().count(), 21 * 21 + 1);
    // boundary rows carry the boundary value exactly
    assert!(sol.lines().nth(1).unwrap().ends_with(",1"));
    let ckpt = fs::read(out.join("model.ckpt")).unwrap();
    assert!(ckpt.starts_with(b"GFDG1 2 fa fa fa f 15,25,15,1 tanh,tanh,tanh\n"));
    assert!(out.join("resolved_config.json").exists());
}

#[test]
fn seeded_runs_repeat_and_resolved_config_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "poisson.json", POISSON);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(solve(&cfg, &a, &["--seed", "1"]).status.success());
    assert!(solve(&cfg, &b, &["--seed", "1"]).status.success());
    let la = fs::read(a.join("loss.csv")).unwrap();
    assert_eq!(la, fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let resolved = a.join("resolved_config.json");
    let o = solve(resolved.to_str().unwrap(), &c, &[]);
    assert!(o.status.success());
    assert_eq!(la, fs::read(c.join("loss.csv")).unwrap());
    assert!(solve(&cfg, &c, &["--seed", "2"]).status.success());
    assert_ne!(la, fs::read(c.join("loss.csv")).unwrap());
}

#[test]
fn soft_mode_flag_adds_term_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "poisson.json", POISSON);
    let out = dir.path().join("soft");
    let o = solve(&cfg, &out, &["--mode", "soft", "--iters", "5", "--batch-size", "10"]);
    assert!(o.status.success());
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iter,loss,residual,boundary,initial"));
    assert_eq!(loss.lines().count(), 6);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &POISSON.replace("fa fa fa f", "faR fa fa f"));
    let o = solve(&bad, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layout"));
    let bad = write_config(dir.path(), "bad2.json", &POISSON.replace("\"n_iters\": 40", "\"n_iters\": 0"));
    let o = solve(&bad, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_iters"));
    let o = solve(dir.path().join("missing.json").to_str().unwrap(), &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn overflow_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = POISSON.replace("5*sin(pi*(x+y))", "exp(exp(1000*x + 10))");
    let cfg = write_config(dir.path(), "nan.json", &text);
    let o = solve(&cfg, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration 0"));
}

#[test]
fn compare_orders_trained_below_untrained() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "poisson.json", POISSON);
    let out = dir.path().join("trained");
    assert!(solve(&cfg, &out, &["--iters", "300"]).status.success());
    let trained = galerkin(&["compare", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,model,oracle,diff"));
    assert_eq!(csv.lines().count(), 21 * 21 + 1);

    let setup = RunConfig::from_json(POISSON).unwrap().resolve().unwrap();
    let fresh = TrainedModel::new(setup.problem, setup.spec, Mode::Ansatz, 0).unwrap();
    let ckpt = dir.path().join("fresh.ckpt");
    fresh.write_checkpoint(fs::File::create(&ckpt).unwrap()).unwrap();
    let untrained = galerkin(&[
        "compare",
        "--config",
        &cfg,
        "--out-dir",
        dir.path().join("fresh").to_str().unwrap(),
        "--model",
        ckpt.to_str().unwrap(),
    ]);
    assert!(untrained.status.success());
    assert!(linf(&trained) < linf(&untrained), "{} vs {}", linf(&trained), linf(&untrained));
}

#[test]
fn heat_compare_at_initial_time_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.json", HEAT);
    let out = dir.path().join("heat");
    assert!(solve(&cfg, &out, &[]).status.success());
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(sol.lines().next(), Some("x,y,t,u"));
    let o = galerkin(&["compare", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--time", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(linf(&o), 0.0);
    let o = galerkin(&["compare", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--time", "0.5"]);
    assert!(linf(&o) > 0.0);
}

#[test]
fn unsupported_shapes_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let text = POISSON.replace("D(D(u,x),x) + D(D(u,y),y)", "D(D(u,x),x) + 2*D(D(u,y),y)");
    let cfg = write_config(dir.path(), "aniso.json", &text);
    let out = dir.path().join("a");
    assert!(solve(&cfg, &out, &["--iters", "1"]).status.success());
    let o = galerkin(&["compare", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}
