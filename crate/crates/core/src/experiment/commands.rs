//! The operations behind each command-line verb. Every command writes its
//! files into an output directory, each stamped with the config digest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use super::config::{ExperimentConfig, SweepController};
use super::recipes;
use super::spacetime::{estimate_wave_speed, parse_episode_csv, spacetime_csv};
use crate::control::{FollowerStopperParams, PiSaturationParams};
use crate::engine::SimConfig;
use crate::episode::{mean_std, rollout, run_episode, EpisodeLog};
use crate::equilibrium::{stop_and_go_average_velocity, uniform_flow_velocity, LowerBoundConfig};
use crate::error::{AnalysisError, ConfigError, PolicyError, SimError};
use crate::output::{csv_row, fmt_float};
use crate::policy::cem::{train_cem, IterationStats};
use crate::policy::evaluate::{evaluate_policy, policy_spec_for, EvalStats, PolicyObjective};
use crate::policy::io::{load_params, save_params};
use crate::policy::{PolicyRunner, PolicySpec};
use crate::rng::derive_indexed;
use crate::scenario::{AvConfig, AvControl, LengthChoice, NetworkConfig, Placement, ScenarioConfig};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Analysis(AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("collision in {episodes} episode(s) of `{scenario}`")]
    Collision { scenario: String, episodes: usize },
    #[error("trained policy averages {policy:.4} m/s, not above the human baseline {baseline:.4} m/s")]
    Underperform { policy: f64, baseline: f64 },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Sim(SimError::Config(_)) | CommandError::Sim(SimError::Policy(_)) => 2,
            CommandError::Analysis(AnalysisError::Config(_)) | CommandError::Analysis(AnalysisError::TooFewSeeds { .. }) => 2,
            CommandError::Collision { .. } => 3,
            CommandError::Underperform { .. } => 4,
            _ => 1,
        }
    }
}

impl From<SimError> for CommandError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CommandError::Config(c),
            other => CommandError::Sim(other),
        }
    }
}

impl From<AnalysisError> for CommandError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Config(c) => CommandError::Config(c),
            AnalysisError::Sim(s) => s.into(),
            other => CommandError::Analysis(other),
        }
    }
}

impl From<PolicyError> for CommandError {
    fn from(e: PolicyError) -> Self {
        CommandError::Sim(SimError::Policy(e))
    }
}

/// Files written and a few human-readable result lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(report: &mut Report, out: &Path, name: &str, text: &str) -> Result<PathBuf, CommandError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(name);
    fs::write(&path, text).map_err(io_err(&path))?;
    report.files.push(path.clone());
    Ok(path)
}

fn preamble(cfg: &ExperimentConfig, length: Option<f64>) -> Vec<String> {
    let length = length.map(fmt_float).unwrap_or_else(|| "various".into());
    vec![
        cfg.stamp(),
        format!(
            "scenario={} length={} dt={}",
            cfg.scenario.name,
            length,
            fmt_float(cfg.scenario.sim.dt)
        ),
    ]
}

fn with_preamble(pre: &[String], header: &str) -> String {
    let mut s = String::new();
    for line in pre {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(header);
    s.push('\n');
    s
}

fn summary_json(cfg: &ExperimentConfig, command: &str, metrics: serde_json::Value) -> String {
    let v = json!({
        "tool": "mixflow",
        "version": crate::VERSION,
        "command": command,
        "scenario": cfg.scenario.name,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "metrics": metrics,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

/// Loads a parameter file and checks it fits the scenario.
pub fn load_policy(scenario: &ScenarioConfig, path: &Path) -> Result<(PolicySpec, Vec<f64>), CommandError> {
    let expected = policy_spec_for(scenario)?;
    let (spec, params) = load_params(path)?;
    if spec != expected {
        return Err(ConfigError::invalid(format!(
            "{}: policy shape does not match scenario `{}`",
            path.display(),
            scenario.name
        ))
        .into());
    }
    Ok((spec, params))
}

fn policy_for(
    scenario: &ScenarioConfig,
    params: Option<&Path>,
) -> Result<Option<(PolicySpec, Vec<f64>)>, CommandError> {
    match (scenario.has_learned_avs(), params) {
        (true, Some(p)) => Ok(Some(load_policy(scenario, p)?)),
        (true, None) => Err(ConfigError::invalid(format!(
            "scenario `{}` has learned AVs; pass --params",
            scenario.name
        ))
        .into()),
        (false, _) => Ok(None),
    }
}

fn simulate_logged(
    cfg: &ExperimentConfig,
    policy: Option<&(PolicySpec, Vec<f64>)>,
) -> Result<EpisodeLog, CommandError> {
    let log = match policy {
        Some((spec, params)) => {
            let mut runner = PolicyRunner::new(spec.clone(), params.clone())?;
            run_episode(&cfg.scenario, LengthChoice::Nominal, cfg.seed, Some(&mut runner), None)?
        }
        None => run_episode(&cfg.scenario, LengthChoice::Nominal, cfg.seed, None, None)?,
    };
    Ok(log)
}

fn episode_csv(log: &EpisodeLog, pre: &[String]) -> String {
    let mut buf = Vec::new();
    log.write_csv(&mut buf, pre).expect("in-memory write");
    String::from_utf8(buf).expect("utf8")
}

/// One episode at the nominal length; writes `trajectory.csv` and
/// `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, params: Option<&Path>) -> Result<Report, CommandError> {
    let policy = policy_for(&cfg.scenario, params)?;
    let log = simulate_logged(cfg, policy.as_ref())?;
    let s = &log.summary;
    let mut report = Report::default();
    let pre = preamble(cfg, Some(s.length));
    write_file(&mut report, out, "trajectory.csv", &episode_csv(&log, &pre))?;
    let metrics = json!({
        "length": s.length,
        "steps": s.steps,
        "collided": s.collided,
        "mean_velocity_final": s.mean_velocity_final,
        "std_velocity_final": s.std_velocity_final,
        "min_velocity": s.min_velocity,
        "min_velocity_final": s.min_velocity_final,
        "return": s.episode_return(1.0),
        "trajectory_digest": log.digest(),
    });
    write_file(&mut report, out, "summary.json", &summary_json(cfg, "run", metrics))?;
    report.lines.push(format!(
        "{}: length {} m, mean velocity {} m/s, std {} m/s, min {} m/s over the final {} s",
        cfg.scenario.name,
        fmt_float(s.length),
        fmt_float(s.mean_velocity_final),
        fmt_float(s.std_velocity_final),
        fmt_float(s.min_velocity_final),
        fmt_float(crate::episode::FINAL_WINDOW),
    ));
    if s.collided {
        return Err(CommandError::Collision {
            scenario: cfg.scenario.name.clone(),
            episodes: 1,
        });
    }
    Ok(report)
}

/// Single-AV ring under a model-based controller, as used by the sweep.
pub fn controller_ring(base: &ScenarioConfig, length: f64, ctrl: SweepController) -> ScenarioConfig {
    let mut s = ScenarioConfig::ring(&format!("{}-{}", base.name, ctrl.column()), length, base.num_vehicles);
    s.vehicle_length = base.vehicle_length;
    s.idm = base.idm;
    s.avs = AvConfig {
        count: 1,
        placement: Placement::Contiguous,
        control: match ctrl {
            SweepController::FollowerStopper => AvControl::FollowerStopper {
                params: FollowerStopperParams::default(),
            },
            SweepController::PiSaturation => AvControl::PiSaturation {
                params: PiSaturationParams::default(),
            },
        },
        lane: 0,
    };
    s.sim = SimConfig {
        warmup: 300.0,
        horizon: 300.0,
        ..base.sim
    };
    s
}

pub fn sweep_header(controllers: &[SweepController]) -> String {
    let mut h = "density,h_star,v_star_upper,v_lower_mean,v_lower_std".to_string();
    for c in controllers {
        h.push_str(&format!(",{0}_mean,{0}_std", c.column()));
    }
    h.push_str(",status");
    h
}

/// Uniform-flow and stop-and-go velocities over a grid of densities on a
/// single-lane ring with the scenario's fleet size. Writes `sweep.csv`.
pub fn cmd_sweep_density(cfg: &ExperimentConfig, out: &Path) -> Result<Report, CommandError> {
    let sc = &cfg.scenario;
    let n = sc.num_vehicles;
    let opts = &cfg.sweep;
    let seeds = episode_seeds(cfg.seed, EPISODE_STREAM, opts.seeds);
    let lb_cfg = LowerBoundConfig {
        idm: sc.idm,
        vehicle_length: sc.vehicle_length,
        require_waves: false,
        ..LowerBoundConfig::default()
    };
    let mut text = with_preamble(&preamble(cfg, None), &sweep_header(&opts.controllers));
    let mut report = Report::default();
    for density in opts.resolved_densities() {
        let length = n as f64 / density;
        let eq = uniform_flow_velocity(length, n, sc.vehicle_length, &sc.idm)?;
        let lb = stop_and_go_average_velocity(length, n, &seeds, &lb_cfg)?;
        let status = if lb.min_wave_std < lb_cfg.wave_std_threshold {
            "no-waves"
        } else {
            "ok"
        };
        let mut row = vec![
            fmt_float(density),
            fmt_float(eq.h_star),
            fmt_float(eq.v_star),
            fmt_float(lb.mean),
            fmt_float(lb.std),
        ];
        for &ctrl in &opts.controllers {
            let s = controller_ring(sc, length, ctrl);
            let runs: Vec<_> = seeds
                .par_iter()
                .map(|&seed| rollout(&s, LengthChoice::Nominal, seed, None))
                .collect::<Result<_, _>>()?;
            let v: Vec<f64> = runs.iter().map(|r| r.mean_velocity_final).collect();
            let (m, sd) = sample_mean_std(&v);
            row.push(fmt_float(m));
            row.push(fmt_float(sd));
        }
        row.push(status.to_string());
        text.push_str(&csv_row(&row));
        report.lines.push(format!(
            "density {} veh/m (L={} m): v* {} m/s, stop-and-go {} m/s [{status}]",
            fmt_float(density),
            fmt_float(length),
            fmt_float(eq.v_star),
            fmt_float(lb.mean)
        ));
    }
    write_file(&mut report, out, "sweep.csv", &text)?;
    Ok(report)
}

fn sample_mean_std(xs: &[f64]) -> (f64, f64) {
    let (m, _) = mean_std(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Lengths evaluated after training: the configured list, else a 10 m grid
/// over the training range, else the nominal length.
pub fn train_eval_lengths(cfg: &ExperimentConfig) -> Vec<f64> {
    if !cfg.train.eval_lengths.is_empty() {
        return cfg.train.eval_lengths.clone();
    }
    match &cfg.scenario.network {
        NetworkConfig::Ring {
            train_range: Some([lo, hi]),
            ..
        } => grid(*lo, *hi),
        other => vec![other.nominal_length()],
    }
}

/// Lengths for `eval`: the configured list, else 210..290 m on single-AV
/// rings with a test range, else the nominal length.
pub fn eval_lengths(cfg: &ExperimentConfig) -> Vec<f64> {
    if !cfg.eval.lengths.is_empty() {
        return cfg.eval.lengths.clone();
    }
    match &cfg.scenario.network {
        NetworkConfig::Ring {
            test_range: Some([lo, hi]),
            ..
        } => grid(*lo, *hi),
        other => vec![other.nominal_length()],
    }
}

fn grid(lo: f64, hi: f64) -> Vec<f64> {
    let steps = ((hi - lo) / 10.0).floor() as usize;
    let mut g: Vec<f64> = (0..=steps).map(|k| lo + 10.0 * k as f64).collect();
    if g.last().is_some_and(|&l| l < hi - 1e-9) {
        g.push(hi);
    }
    g
}

/// The same fleet with every vehicle human-driven.
pub fn human_baseline(scenario: &ScenarioConfig) -> ScenarioConfig {
    let mut s = scenario.clone();
    s.name = format!("{}-human", scenario.name);
    s.avs = AvConfig::none();
    s
}

/// Seed stream shared by `sweep-density` and `eval`, so a human-only
/// evaluation reproduces the sweep's lower bound episode for episode.
pub const EPISODE_STREAM: &str = "episode";

pub fn episode_seeds(master: u64, name: &str, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| derive_indexed(master, name, k)).collect()
}

pub const TRAIN_CURVE_HEADER: &str = "iteration,fitness_mean,fitness_best,param_std_mean,validation_fitness";
pub const TRAIN_EVAL_HEADER: &str =
    "length,v_star,policy_mean_velocity,policy_std_velocity,baseline_mean_velocity,baseline_std_velocity,collisions";

/// Trains the scenario's learned policy with CEM. Writes `policy.params`,
/// `train_curve.csv` and `train_eval.csv`; fails with `Underperform` when
/// the trained fleet is not faster than the all-human one.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    mut progress: impl FnMut(&IterationStats),
) -> Result<Report, CommandError> {
    let sc = &cfg.scenario;
    let spec = policy_spec_for(sc)?;
    let objective = PolicyObjective {
        scenario: sc.clone(),
        spec: spec.clone(),
        gamma: cfg.train.cem.gamma,
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let curve_path = out.join("train_curve.csv");
    let mut curve = fs::File::create(&curve_path).map_err(io_err(&curve_path))?;
    curve
        .write_all(with_preamble(&preamble(cfg, None), TRAIN_CURVE_HEADER).as_bytes())
        .map_err(io_err(&curve_path))?;
    let mut write_failure = None;
    let result = train_cem(&objective, vec![0.0; spec.param_count()], &cfg.train.cem, cfg.seed, |st| {
        let row = csv_row(&[
            st.iteration.to_string(),
            fmt_float(st.fitness_mean),
            fmt_float(st.fitness_best),
            fmt_float(st.param_std_mean),
            fmt_float(st.mean_fitness),
        ]);
        if let Err(e) = curve.write_all(row.as_bytes()).and_then(|_| curve.flush()) {
            write_failure.get_or_insert(e);
        }
        progress(st);
    })?;
    if let Some(e) = write_failure {
        return Err(io_err(&curve_path)(e));
    }
    let mut report = Report {
        files: vec![curve_path],
        ..Report::default()
    };

    let params_path = out.join("policy.params");
    save_params(&params_path, &spec, &result.best_params, Some(&cfg.stamp()))?;
    report.files.push(params_path);

    let seeds = episode_seeds(cfg.seed, "train-eval", cfg.train.eval_seeds);
    let baseline = human_baseline(sc);
    let mut text = with_preamble(&preamble(cfg, None), TRAIN_EVAL_HEADER);
    let (mut pol_all, mut base_all, mut collisions) = (Vec::new(), Vec::new(), 0);
    for length in train_eval_lengths(cfg) {
        let choice = LengthChoice::Fixed(length);
        let p = evaluate_policy(sc, Some((&spec, &result.best_params)), choice, &seeds)?;
        let b = evaluate_policy(&baseline, None, choice, &seeds)?;
        let real_length = p.episodes[0].length;
        let v_star = uniform_flow_velocity(real_length, sc.num_vehicles, sc.vehicle_length, &sc.idm)?.v_star;
        text.push_str(&csv_row(&[
            fmt_float(real_length),
            fmt_float(v_star),
            fmt_float(p.mean_velocity),
            fmt_float(p.std_velocity),
            fmt_float(b.mean_velocity),
            fmt_float(b.std_velocity),
            p.collisions.to_string(),
        ]));
        report.lines.push(format!(
            "L={} m: policy {} m/s, human {} m/s, v* {} m/s",
            fmt_float(real_length),
            fmt_float(p.mean_velocity),
            fmt_float(b.mean_velocity),
            fmt_float(v_star)
        ));
        collisions += p.collisions;
        pol_all.push(p.mean_velocity);
        base_all.push(b.mean_velocity);
    }
    write_file(&mut report, out, "train_eval.csv", &text)?;
    let policy_mean = mean_std(&pol_all).0;
    let baseline_mean = mean_std(&base_all).0;
    let metrics = json!({
        "best_validation_return": result.best_fitness,
        "iterations": result.history.len(),
        "policy_mean_velocity": policy_mean,
        "baseline_mean_velocity": baseline_mean,
        "collisions": collisions,
    });
    write_file(&mut report, out, "train_summary.json", &summary_json(cfg, "train", metrics))?;
    if collisions > 0 {
        return Err(CommandError::Collision {
            scenario: sc.name.clone(),
            episodes: collisions,
        });
    }
    if !(policy_mean > baseline_mean) {
        return Err(CommandError::Underperform {
            policy: policy_mean,
            baseline: baseline_mean,
        });
    }
    Ok(report)
}

pub const EVAL_HEADER: &str = "length,v_star,mean_velocity,std_velocity,ratio_to_v_star,collisions";

/// Evaluates a scenario (with a trained policy when it has learned AVs)
/// across lengths. Writes `eval.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, params: Option<&Path>) -> Result<(Report, Vec<EvalStats>), CommandError> {
    let sc = &cfg.scenario;
    let policy = policy_for(sc, params)?;
    let seeds = episode_seeds(cfg.seed, EPISODE_STREAM, cfg.eval.seeds);
    let mut text = with_preamble(&preamble(cfg, None), EVAL_HEADER);
    let mut report = Report::default();
    let mut all = Vec::new();
    let mut collisions = 0;
    for length in eval_lengths(cfg) {
        let stats = evaluate_policy(
            sc,
            policy.as_ref().map(|(s, p)| (s, p.as_slice())),
            LengthChoice::Fixed(length),
            &seeds,
        )?;
        let real_length = stats.episodes[0].length;
        let v_star = uniform_flow_velocity(real_length, sc.num_vehicles, sc.vehicle_length, &sc.idm)?.v_star;
        text.push_str(&csv_row(&[
            fmt_float(real_length),
            fmt_float(v_star),
            fmt_float(stats.mean_velocity),
            fmt_float(stats.std_velocity),
            fmt_float(stats.mean_velocity / v_star),
            stats.collisions.to_string(),
        ]));
        report.lines.push(format!(
            "L={} m: {} m/s ({}% of v*), {} collisions",
            fmt_float(real_length),
            fmt_float(stats.mean_velocity),
            fmt_float((100.0 * stats.mean_velocity / v_star * 10.0).round() / 10.0),
            stats.collisions
        ));
        collisions += stats.collisions;
        all.push(stats);
    }
    write_file(&mut report, out, "eval.csv", &text)?;
    if collisions > 0 {
        return Err(CommandError::Collision {
            scenario: sc.name.clone(),
            episodes: collisions,
        });
    }
    Ok((report, all))
}

/// Space-time diagram of an episode CSV (`input`) or, without one, of a
/// freshly simulated episode. Writes `spacetime.csv` and the estimated
/// wave speed in `spacetime.json`.
pub fn cmd_spacetime(
    cfg: &ExperimentConfig,
    out: &Path,
    input: Option<&Path>,
    params: Option<&Path>,
    every: usize,
) -> Result<Report, CommandError> {
    let (mut ep, length, collided) = match input {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let ep = parse_episode_csv(&text)?;
            let length = match ep.meta("length") {
                Some(l) => l
                    .parse::<f64>()
                    .map_err(|_| ConfigError::invalid(format!("{}: bad length `{l}`", path.display())))?,
                None => cfg.scenario.network.nominal_length(),
            };
            (ep, length, false)
        }
        None => {
            let policy = policy_for(&cfg.scenario, params)?;
            let log = simulate_logged(cfg, policy.as_ref())?;
            let ep = parse_episode_csv(&episode_csv(&log, &[]))?;
            (ep, log.summary.length, log.summary.collided)
        }
    };
    let source: Vec<String> = ep.preamble.iter().map(|l| format!("source {l}")).collect();
    ep.preamble = preamble(cfg, Some(length));
    ep.preamble.extend(source);
    let end = ep.snapshots.last().map(|s| s.time).unwrap_or(0.0);
    let speed = estimate_wave_speed(&ep, length, 0, end - crate::episode::FINAL_WINDOW);
    let mut report = Report::default();
    write_file(&mut report, out, "spacetime.csv", &spacetime_csv(&ep, every))?;
    let metrics = json!({
        "length": length,
        "wave_speed": speed,
        "sample_every": every.max(1),
        "input": input.map(|p| p.display().to_string()),
    });
    write_file(&mut report, out, "spacetime.json", &summary_json(cfg, "spacetime", metrics))?;
    report.lines.push(match speed {
        Some(c) => format!("wave speed {} m/s (negative = upstream)", fmt_float(c)),
        None => "no waves: velocity profile is flat".into(),
    });
    if collided {
        return Err(CommandError::Collision {
            scenario: cfg.scenario.name.clone(),
            episodes: 1,
        });
    }
    Ok(report)
}

/// `name  description` lines, one per recipe.
pub fn list_recipes() -> Vec<String> {
    let all = recipes::all();
    let width = all.iter().map(|r| r.name.len()).max().unwrap_or(0);
    all.iter()
        .map(|r| format!("{:width$}  {}", r.name, r.description))
        .collect()
}
