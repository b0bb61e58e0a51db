//! Mode discovery on the three-agent crossing game.

use maxent_games::multimodal::{fair_prior, find_modes, ModeSearchConfig};
use maxent_games::problem::{avoidance_initial_state, make_collision_avoidance, AvoidanceSpec};
use maxent_games::solver::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = AvoidanceSpec::three_agents();
    let problem = make_collision_avoidance(&spec)?;
    let x0 = avoidance_initial_state(&spec);
    let config = ModeSearchConfig {
        num_seeds: 6,
        rounds: 2,
        init_noise: 0.9,
        solver: SolverConfig {
            alpha: 0.1,
            tolerance: 1e-3,
            max_iterations: 300,
            ..SolverConfig::default()
        },
        ..ModeSearchConfig::default()
    };
    let modes = find_modes(&problem, &x0, None, &config)?;
    let prior = fair_prior(&modes, &x0, config.solver.alpha)?;
    println!("{} distinct modes", modes.len());
    for mode in &modes {
        let sum: f64 = (0..3).map(|i| mode.value_at(i, 0, &x0)).sum();
        println!(
            "mode {}: residual {:.2e}, total value {:.2}, prior {:.3}",
            mode.index,
            mode.solve.stationarity,
            sum,
            prior.prob(mode.index)
        );
    }
    Ok(())
}
