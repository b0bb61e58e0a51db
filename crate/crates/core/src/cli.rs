//! Command-line entry points: `run`, `modes` and `check`.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 solver failure.

use nalgebra::DVector;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::RunConfig;
use crate::mpc::{run_episode, EpisodeStatus, ScenarioInfo};
use crate::multimodal::{ego_prior, fair_prior, find_modes, ModeSolution};
use crate::output::{atomic_write, belief_csv, episode_csv, episode_summary_json, SvgCanvas, PALETTE};
use crate::problem::{check_derivatives, GameProblem};
use crate::solver::{solve_feedback, stack_quu, StackedSystem};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_SOLVER_FAILURE: i32 = 3;

/// Parsed command line.
#[derive(Debug, Clone)]
pub struct CliArgs {
    pub command: String,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub exec: Option<String>,
}

const USAGE: &str = "usage: maxent-games <run|modes|check> --config <path> \
[--seed <u64>] [--threads <n>] [--out <dir>] [--exec <mean|sample>]";

impl CliArgs {
    pub fn parse(args: &[String]) -> std::result::Result<Self, String> {
        let mut it = args.iter();
        let command = it.next().ok_or(USAGE)?.clone();
        if !matches!(command.as_str(), "run" | "modes" | "check") {
            return Err(format!("unknown command '{command}'\n{USAGE}"));
        }
        let mut config = None;
        let mut seed = None;
        let mut threads = None;
        let mut out = None;
        let mut exec = None;
        while let Some(flag) = it.next() {
            let mut value = || {
                it.next()
                    .cloned()
                    .ok_or_else(|| format!("flag {flag} needs a value\n{USAGE}"))
            };
            match flag.as_str() {
                "--config" => config = Some(PathBuf::from(value()?)),
                "--seed" => {
                    seed = Some(
                        value()?
                            .parse::<u64>()
                            .map_err(|e| format!("bad --seed: {e}"))?,
                    )
                }
                "--threads" => {
                    threads = Some(
                        value()?
                            .parse::<usize>()
                            .map_err(|e| format!("bad --threads: {e}"))?,
                    )
                }
                "--out" => out = Some(PathBuf::from(value()?)),
                "--exec" => exec = Some(value()?),
                other => return Err(format!("unknown flag '{other}'\n{USAGE}")),
            }
        }
        Ok(Self {
            command,
            config: config.ok_or_else(|| format!("--config is required\n{USAGE}"))?,
            seed,
            threads,
            out,
            exec,
        })
    }
}

fn load_config(args: &CliArgs) -> Result<RunConfig> {
    let mut config = RunConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.episode.seed = seed;
    }
    if let Some(out) = &args.out {
        config.episode.out_dir = out.to_string_lossy().into_owned();
    }
    match args.exec.as_deref() {
        Some("mean") => config.episode.execution = crate::mpc::ExecutionMode::Mean,
        Some("sample") => config.episode.execution = crate::mpc::ExecutionMode::Sample,
        Some(other) => return Err(Error::Config(format!("bad --exec '{other}'"))),
        None => {}
    }
    Ok(config)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG_ERROR,
        _ => EXIT_SOLVER_FAILURE,
    }
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn main(args: &[String]) -> i32 {
    let parsed = match CliArgs::parse(args) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_CONFIG_ERROR;
        }
    };
    if let Some(threads) = parsed.threads {
        // Errors only when a global pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let config = match load_config(&parsed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    let result = match parsed.command.as_str() {
        "run" => cmd_run(&config),
        "modes" => cmd_modes(&config),
        "check" => cmd_check(&config),
        _ => unreachable!(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            exit_code_for(&e)
        }
    }
}

fn artifact_stem(config: &RunConfig, kind: &str) -> PathBuf {
    let controller = config
        .controller_names()
        .first()
        .cloned()
        .unwrap_or_else(|| "none".into())
        .replace('+', "-");
    let name = match kind {
        "run" => format!("{}_{}_{}", config.scenario, controller, config.episode.seed),
        _ => format!("{}_{kind}_{}", config.scenario, config.episode.seed),
    };
    Path::new(&config.episode.out_dir).join(name)
}

/// Runs a closed-loop episode and writes the CSV/JSON/SVG artifacts.
pub fn cmd_run(config: &RunConfig) -> Result<i32> {
    let (problem, x0, info) = config.build()?;
    let mut controllers = config.controllers(&problem, &x0)?;
    let log = run_episode(&problem, &x0, &mut controllers, config.episode.steps, &info)?;

    let stem = artifact_stem(config, "run");
    atomic_write(&stem.with_extension("csv"), episode_csv(&log).as_bytes())?;
    atomic_write(
        &stem.with_extension("json"),
        episode_summary_json(&log)?.as_bytes(),
    )?;
    let belief_path = stem.with_file_name(format!(
        "{}_belief.csv",
        stem.file_name().unwrap().to_string_lossy()
    ));
    atomic_write(&belief_path, belief_csv(&log).as_bytes())?;
    atomic_write(
        &stem.with_extension("svg"),
        episode_svg(config, &log, &info).as_bytes(),
    )?;

    println!(
        "episode: {} steps, status {:?}, final progress {:?}, min distance {:.3}",
        log.controls.len(),
        log.status,
        log.final_progress,
        log.min_distance
    );
    match log.status {
        EpisodeStatus::Completed => Ok(EXIT_OK),
        EpisodeStatus::ControllerFailure { .. } => Ok(EXIT_SOLVER_FAILURE),
    }
}

fn episode_svg(config: &RunConfig, log: &crate::mpc::EpisodeLog, info: &ScenarioInfo) -> String {
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for state in &log.states {
        for &offset in &info.position_offsets {
            x_min = x_min.min(state[offset]);
            x_max = x_max.max(state[offset]);
            y_min = y_min.min(state[offset + 1]);
            y_max = y_max.max(state[offset + 1]);
        }
    }
    if info.position_offsets.is_empty() {
        (x_min, y_min, x_max, y_max) = (0.0, 0.0, 1.0, 1.0);
    }
    let pad = 0.5 + 0.05 * (x_max - x_min).max(y_max - y_min);
    let world = (x_min - pad, y_min - pad, x_max + pad, y_max + pad);
    let aspect = (world.3 - world.1) / (world.2 - world.0);
    let width = 800.0;
    let mut canvas = SvgCanvas::new(width, (width * aspect).max(200.0), world);

    if config.scenario == "racing" {
        let w = config.racing.track_half_width;
        canvas.line((world.0, w), (world.2, w), "#444444", 2.0);
        canvas.line((world.0, -w), (world.2, -w), "#444444", 2.0);
    }
    for (agent, &offset) in info.position_offsets.iter().enumerate() {
        let color = PALETTE[agent % PALETTE.len()];
        let points: Vec<(f64, f64)> = log
            .states
            .iter()
            .map(|s| (s[offset], s[offset + 1]))
            .collect();
        canvas.polyline(&points, color, 2.0);
        // Position dots every fifth step.
        for (t, p) in points.iter().enumerate() {
            if t % 5 == 0 {
                canvas.circle(*p, 0.03, color, true);
            }
        }
    }
    canvas.render()
}

/// Solves the mode set once from the scenario start and writes the dump.
pub fn cmd_modes(config: &RunConfig) -> Result<i32> {
    let (problem, x0, info) = config.build()?;
    let modes = find_modes(&problem, &x0, None, &config.mode_search())?;
    let fair = fair_prior(&modes, &x0, config.solver.alpha)?;
    let ego = ego_prior(&modes, &x0, config.solver.alpha, 0)?;

    let dump = serde_json::json!({
        "scenario": config.scenario,
        "num_modes": modes.len(),
        "fair_prior": fair.probabilities(),
        "ego_prior": ego.probabilities(),
        "modes": modes.iter().map(|m| serde_json::json!({
            "index": m.index,
            "stationarity": m.solve.stationarity,
            "feasibility": m.solve.feasibility,
            "open_loop_residual": m.solve.open_loop_residual,
            "values_at_start": (0..problem.num_agents())
                .map(|i| m.value_at(i, 0, &x0))
                .collect::<Vec<f64>>(),
            "states": m.trajectory().states.iter().map(|s| s.iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>(),
            "controls": m.trajectory().controls.iter().map(|u| u.iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });

    let stem = artifact_stem(config, "modes");
    atomic_write(
        &stem.with_extension("json"),
        serde_json::to_string_pretty(&dump)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?
            .as_bytes(),
    )?;

    // Per-iteration solver log as JSON lines, one record per line tagged
    // with its mode.
    let mut jsonl = String::new();
    for mode in &modes {
        for record in &mode.solve.iterations {
            let mut line = serde_json::to_value(record)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            line["mode"] = serde_json::json!(mode.index);
            jsonl.push_str(&line.to_string());
            jsonl.push('\n');
        }
    }
    let jsonl_path = stem.with_file_name(format!(
        "{}_iters.jsonl",
        stem.file_name().unwrap().to_string_lossy()
    ));
    atomic_write(&jsonl_path, jsonl.as_bytes())?;

    atomic_write(
        &stem.with_extension("svg"),
        modes_svg(config, &problem, &modes, &info).as_bytes(),
    )?;

    println!("{} distinct modes", modes.len());
    for m in &modes {
        println!(
            "mode {}: residual {:.3e}, feasibility {:.3e}, prior {:.3}",
            m.index,
            m.solve.stationarity,
            m.solve.feasibility,
            fair.prob(m.index)
        );
    }
    Ok(EXIT_OK)
}

fn modes_svg(
    config: &RunConfig,
    _problem: &Arc<GameProblem>,
    modes: &[ModeSolution],
    info: &ScenarioInfo,
) -> String {
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for mode in modes {
        for state in &mode.trajectory().states {
            for &offset in &info.position_offsets {
                x_min = x_min.min(state[offset]);
                x_max = x_max.max(state[offset]);
                y_min = y_min.min(state[offset + 1]);
                y_max = y_max.max(state[offset + 1]);
            }
        }
    }
    if info.position_offsets.is_empty() {
        (x_min, y_min, x_max, y_max) = (0.0, 0.0, 1.0, 1.0);
    }
    let pad = 0.5;
    let world = (x_min - pad, y_min - pad, x_max + pad, y_max + pad);
    let aspect = (world.3 - world.1) / (world.2 - world.0);
    let width = 800.0;
    let mut canvas = SvgCanvas::new(width, (width * aspect).max(200.0), world);
    if config.scenario == "racing" {
        let w = config.racing.track_half_width;
        canvas.line((world.0, w), (world.2, w), "#444444", 2.0);
        canvas.line((world.0, -w), (world.2, -w), "#444444", 2.0);
    }
    for mode in modes {
        let color = PALETTE[mode.index % PALETTE.len()];
        for (agent, &offset) in info.position_offsets.iter().enumerate() {
            let points: Vec<(f64, f64)> = mode
                .trajectory()
                .states
                .iter()
                .map(|s| (s[offset], s[offset + 1]))
                .collect();
            canvas.polyline(&points, color, if agent == 0 { 2.5 } else { 1.5 });
        }
    }
    canvas.render()
}

/// Derivative audit plus stacked-feedback residual checks; nonzero exit on
/// any failure with a table of worst errors.
pub fn cmd_check(config: &RunConfig) -> Result<i32> {
    let (problem, x0, _) = config.build()?;
    let report = check_derivatives(&problem, 100, 1e-5)?;
    println!("{}", report.table());
    let mut ok = report.pass();

    // Feedback residuals on a backward pass from the scenario start.
    let costs: Vec<_> = problem.costs().to_vec();
    let controls = crate::problem::zero_controls(&problem);
    let traj = crate::problem::rollout(&problem, &x0, &controls)?;
    let bp = crate::solver::backward_pass(&problem, &costs, &traj, &config.solver, 0.0)?;
    let mut worst_k: f64 = 0.0;
    let mut worst_gain: f64 = 0.0;
    for (t, q) in bp.q_expansions.iter().enumerate() {
        let StackedSystem { quu_hat, qu, qux } = stack_quu(q, problem.partition());
        let sys = StackedSystem {
            quu_hat,
            qu,
            qux,
        };
        let (k, gain) = solve_feedback(&sys)?;
        worst_k = worst_k.max((&sys.quu_hat * &k + &sys.qu).amax());
        worst_gain = worst_gain.max((&sys.quu_hat * &gain + &sys.qux).amax());
        let step = &bp.policy.steps[t];
        worst_k = worst_k.max((&sys.quu_hat * &step.feedforward + &sys.qu).amax());
    }
    println!("feedback residuals: |Qk+q| {worst_k:.3e}, |QK+Qux| {worst_gain:.3e}");
    if worst_k >= 1e-9 || worst_gain >= 1e-9 {
        ok = false;
    }

    if ok {
        println!("check: ok");
        Ok(EXIT_OK)
    } else {
        println!("check: FAILED");
        Ok(EXIT_CHECK_FAILURE)
    }
}

/// Convenience for one-line state access in tests.
pub fn state_of(log: &crate::mpc::EpisodeLog, step: usize) -> DVector<f64> {
    DVector::from_vec(log.states[step].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn args_parse_and_reject() {
        let ok = CliArgs::parse(&[
            "check".into(),
            "--config".into(),
            "c.toml".into(),
            "--seed".into(),
            "7".into(),
        ])
        .unwrap();
        assert_eq!(ok.command, "check");
        assert_eq!(ok.seed, Some(7));

        assert!(CliArgs::parse(&["run".into()]).is_err());
        assert!(CliArgs::parse(&["fly".into(), "--config".into(), "c".into()]).is_err());
        assert!(CliArgs::parse(&[
            "run".into(),
            "--config".into(),
            "c".into(),
            "--bogus".into(),
            "1".into()
        ])
        .is_err());
    }

    #[test]
    fn missing_config_file_is_exit_2() {
        let code = main(&[
            "check".into(),
            "--config".into(),
            "/nonexistent/nowhere.toml".into(),
        ]);
        assert_eq!(code, EXIT_CONFIG_ERROR);
    }
}
