//! Bayesian inference of the latent mode: the rear vehicle plays one
//! racing equilibrium for a few steps, the posterior locks on; after a
//! scripted switch it flips within the observation window.

use maxent_games::auglag::AlParams;
use maxent_games::multimodal::{ego_prior, find_modes, mode_posterior, ModeSearchConfig, ObservationBuffer};
use maxent_games::problem::{make_racing, racing_initial_state, RacingSpec};
use maxent_games::solver::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = RacingSpec::default();
    let problem = make_racing(&spec)?;
    let x0 = racing_initial_state(&spec);
    let config = ModeSearchConfig {
        num_seeds: 4,
        rounds: 1,
        init_noise: 0.6,
        solver: SolverConfig {
            alpha: 0.1,
            tolerance: 3e-3,
            max_iterations: 400,
            ..SolverConfig::default()
        },
        al: AlParams {
            penalty_factor: 4.0,
            sufficient_decrease: 0.8,
            ..AlParams::default()
        },
        ..ModeSearchConfig::default()
    };
    let modes = find_modes(&problem, &x0, None, &config)?;
    assert!(modes.len() >= 2, "expected both racing modes");
    let followed = 0usize;
    let other = 1usize;
    let prior = ego_prior(&modes, &x0, config.solver.alpha, 0)?;

    let window = 5;
    let mut buffer = ObservationBuffer::new(window);
    let mut x = x0.clone();
    println!("rear plays mode {followed}, then switches to mode {other}:");
    for step in 0..10 {
        let play = if step < window { followed } else { other };
        let mut u = modes[followed].policy().mean_control(step, &x);
        let rear = modes[play].policy().agent_mean(1, step, &x);
        u[2] = rear[0];
        u[3] = rear[1];
        buffer.push(step, x.clone(), u.clone())?;
        x = problem.dynamics().step(&x, &u);
        let posterior = mode_posterior(&prior, &modes, &buffer, 0)?;
        println!(
            "step {step:2}: playing mode {play}, posterior {:?}",
            posterior
                .probabilities()
                .iter()
                .map(|p| (p * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}
