use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixflow_core::experiment::config::ConfigFile;
use mixflow_core::experiment::recipes;
use mixflow_core::scenario::ScenarioConfig;
use serde_json::Value;

fn mixflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixflow")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(x: &Path) -> &str {
    x.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, file: &ConfigFile) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(file).unwrap()).unwrap();
    path
}

fn with_scenario(s: ScenarioConfig) -> ConfigFile {
    ConfigFile {
        scenario: Some(s),
        ..ConfigFile::default()
    }
}

fn summary(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

/// Data rows of a CSV, skipping `#` lines and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn list_recipes_names_every_experiment() {
    let o = mixflow(&["list-recipes"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in recipes::names() {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&mixflow(&["run", "--scenario", "nope", "--out", p(&out)])), 2);
    assert_eq!(code(&mixflow(&["run", "--out", p(&out)])), 2);
    assert_eq!(code(&mixflow(&["run", "--config", "/nonexistent.json"])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"recipe": "sugiyama-230", "colour": "red"}"#).unwrap();
    assert_eq!(code(&mixflow(&["run", "--config", p(&bad), "--out", p(&out)])), 2);
    // learned AVs need a parameter file
    assert_eq!(code(&mixflow(&["run", "--scenario", "ring-260-mlp", "--out", p(&out)])), 2);
    assert_eq!(code(&mixflow(&["run", "--scenario", "sugiyama-230", "--jobs", "0", "--out", p(&out)])), 2);
    let mut s = recipes::find("sugiyama-230").unwrap().scenario;
    s.num_vehicles = 60;
    let crowded = write_config(dir.path(), "crowded.json", &with_scenario(s));
    assert_eq!(code(&mixflow(&["run", "--config", p(&crowded), "--out", p(&out)])), 2);
}

#[test]
fn run_sugiyama_stops_and_formats_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixflow(&["run", "--scenario", "sugiyama-230", "--seed", "0", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path(), "summary.json");
    assert!(s["metrics"]["min_velocity_final"].as_f64().unwrap() < 0.5);
    assert_eq!(s["metrics"]["collided"], false);
    assert_eq!(s["seed"], 0);

    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let stamp = lines.next().unwrap();
    assert!(stamp.starts_with("# mixflow ") && stamp.contains(" config=") && stamp.ends_with(" seed=0"));
    assert_eq!(stamp.split("config=").nth(1).unwrap().split(' ').next().unwrap(), s["config_digest"]);
    assert!(lines.next().unwrap().starts_with("# scenario=sugiyama-230 length=230 dt=0.1"));
    assert_eq!(lines.next().unwrap(), "step,time,vehicle_id,lane,position,velocity,acceleration,tag");
    let data = rows(&dir.path().join("trajectory.csv"));
    assert_eq!(data.len(), 3000 * 22);
    for field in data.iter().take(500).flat_map(|r| r[4..7].to_vec()) {
        let digits = field.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
        assert!(digits.trim_start_matches('0').len() <= 9, "{field}");
        field.parse::<f64>().unwrap();
    }
}

#[test]
fn run_follower_stopper_near_reported_speed() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixflow(&["run", "--scenario", "ring-260-fs", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let v = summary(dir.path(), "summary.json")["metrics"]["mean_velocity_final"].as_f64().unwrap();
    assert!((v - 4.15).abs() < 0.15, "{v}");
}

#[test]
fn collision_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = recipes::find("sugiyama-230").unwrap().scenario;
    // a 2 s Euler step overshoots IDM braking
    s.sim.dt = 2.0;
    let cfg = write_config(dir.path(), "wild.json", &with_scenario(s));
    let out = dir.path().join("out");
    let o = mixflow(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&out, "summary.json")["metrics"]["collided"], true);
}

#[test]
fn sweep_bounds_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(
        &cfg,
        r#"{"recipe": "sugiyama-230", "sweep": {"densities": [0.0846153846153846], "seeds": 3}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mixflow(&["sweep-density", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.contains("\ndensity,h_star,v_star_upper,v_lower_mean,v_lower_std,status\n"));
    let r = &rows(&out.join("sweep.csv"))[0];
    let upper: f64 = r[2].parse().unwrap();
    let lower: f64 = r[3].parse().unwrap();
    assert!((upper - 4.82).abs() < 0.01);
    assert!(lower < upper);
    assert_eq!(r[5], "ok");
}

#[test]
fn human_eval_matches_sweep_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ScenarioConfig::ring("humans", 260.0, 22);
    s.sim.warmup = 300.0;
    s.sim.horizon = 300.0;
    let mut file = with_scenario(s);
    file.sweep = Some(serde_json::from_str(r#"{"densities": [0.0846153846153846, 0.1], "seeds": 3}"#).unwrap());
    file.eval = Some(serde_json::from_str(r#"{"lengths": [260, 220], "seeds": 3}"#).unwrap());
    let cfg = write_config(dir.path(), "humans.json", &file);
    let out = dir.path().join("out");
    assert_eq!(code(&mixflow(&["sweep-density", "--config", p(&cfg), "--seed", "5", "--out", p(&out)])), 0);
    assert_eq!(code(&mixflow(&["eval", "--config", p(&cfg), "--seed", "5", "--out", p(&out)])), 0);
    let sweep = rows(&out.join("sweep.csv"));
    let eval = rows(&out.join("eval.csv"));
    for (sw, ev) in sweep.iter().zip(&eval) {
        let ratio_sweep = sw[3].parse::<f64>().unwrap() / sw[2].parse::<f64>().unwrap();
        let ratio_eval: f64 = ev[4].parse().unwrap();
        assert!((ratio_sweep - ratio_eval).abs() < 1e-7, "{ratio_sweep} vs {ratio_eval}");
        assert_eq!(sw[2], ev[1]);
    }
}

#[test]
fn train_then_eval_outside_training_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"recipe": "ring-260-mlp",
            "train": {"cem": {"population": 16, "iterations": 2, "validation_episodes": 1}, "eval_seeds": 2, "eval_lengths": [240]},
            "eval": {"seeds": 2}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mixflow(&["train", "--config", p(&cfg), "--seed", "1", "--out", p(&out)]);
    assert!([0, 4].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(out.join("train_curve.csv")).unwrap();
    assert!(curve.lines().any(|l| l.starts_with("iteration,fitness_mean,fitness_best,param_std_mean")));
    assert_eq!(rows(&out.join("train_curve.csv")).len(), 2);
    let params = out.join("policy.params");
    let header: Value = serde_json::from_str(fs::read_to_string(&params).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["num_params"], 29);
    assert!(header["generator"].as_str().unwrap().contains("seed=1"));

    let ev = dir.path().join("eval");
    let o = mixflow(&["eval", "--config", p(&cfg), "--params", p(&params), "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lengths: Vec<String> = rows(&ev.join("eval.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(lengths, ["210", "220", "230", "240", "250", "260", "270", "280", "290"]);

    // a parameter file for another architecture is a config error
    let gru = mixflow(&["eval", "--scenario", "ring-260-gru", "--params", p(&params), "--out", p(&ev)]);
    assert_eq!(code(&gru), 2);
}

#[test]
fn crippled_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = recipes::find("ring-260-mlp").unwrap().scenario;
    // the AV can only brake, so any policy ends up slower than humans
    s.sim.accel_bounds = [-1.0, -1.0];
    let mut file = with_scenario(s);
    file.train = Some(
        serde_json::from_str(r#"{"cem": {"population": 16, "iterations": 1, "validation_episodes": 1}, "eval_seeds": 1, "eval_lengths": [260]}"#)
            .unwrap(),
    );
    let cfg = write_config(dir.path(), "crippled.json", &file);
    let out = dir.path().join("out");
    let o = mixflow(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("policy.params").exists());
}

#[test]
fn spacetime_from_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&mixflow(&["run", "--scenario", "sugiyama-230", "--out", p(&run)])), 0);
    let st = dir.path().join("st");
    let o = mixflow(&[
        "spacetime",
        "--scenario",
        "sugiyama-230",
        "--input",
        p(&run.join("trajectory.csv")),
        "--every",
        "50",
        "--out",
        p(&st),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = rows(&st.join("spacetime.csv"));
    assert_eq!(data.len(), 60 * 22);
    assert!(data.iter().all(|r| r.len() == 4));
    let speed = summary(&st, "spacetime.json")["metrics"]["wave_speed"].as_f64().unwrap();
    assert!(speed < 0.0, "{speed}");

    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "not,an,episode\n").unwrap();
    let o = mixflow(&["spacetime", "--scenario", "sugiyama-230", "--input", p(&garbage), "--out", p(&st)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&mixflow(&["run", "--scenario", "ring-260-pi", "--seed", "9", "--out", p(&a)])), 0);
    assert_eq!(code(&mixflow(&["run", "--scenario", "ring-260-pi", "--seed", "9", "--jobs", "2", "--out", p(&b)])), 0);
    for f in ["trajectory.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert_eq!(code(&mixflow(&["run", "--scenario", "ring-260-pi", "--seed", "10", "--out", p(&c)])), 0);
    assert_ne!(fs::read(a.join("summary.json")).unwrap(), fs::read(c.join("summary.json")).unwrap());
}
