//! Closed-loop racing: the multimodal lead plans against both overtake
//! hypotheses and blocks the IBR rear. Expect a couple of minutes.

use maxent_games::config::RunConfig;
use maxent_games::mpc::run_episode;
use maxent_games::output::{atomic_write, episode_csv, episode_summary_json};
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::from_toml("scenario = \"racing\"")?;
    config.solver.tolerance = 3e-3;
    config.solver.max_iterations = 400;
    config.al.penalty_factor = 4.0;
    config.al.sufficient_decrease = 0.8;
    config.episode.steps = 40;
    config.episode.controllers = vec!["multimodal".into(), "ibr+below".into()];
    let (problem, x0, info) = config.build()?;
    let mut controllers = config.controllers(&problem, &x0)?;
    let log = run_episode(&problem, &x0, &mut controllers, config.episode.steps, &info)?;
    println!(
        "lead progress {:.2}, rear progress {:.2}, min distance {:.2}",
        log.final_progress[0], log.final_progress[1], log.min_distance
    );
    atomic_write(Path::new("out/receding_horizon_race.csv"), episode_csv(&log).as_bytes())?;
    atomic_write(
        Path::new("out/receding_horizon_race.json"),
        episode_summary_json(&log)?.as_bytes(),
    )?;
    println!("wrote out/receding_horizon_race.{{csv,json}}");
    Ok(())
}
