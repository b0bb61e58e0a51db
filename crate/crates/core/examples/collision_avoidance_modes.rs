//! Find both passing modes of the two-agent swap game, report the fair
//! prior over them, and render sampled rollouts of the mixture policy.

use maxent_games::multimodal::{fair_prior, find_modes, MixtureSampler, ModeSearchConfig, sample_mode_rollout};
use maxent_games::output::{atomic_write, SvgCanvas, PALETTE};
use maxent_games::problem::{avoidance_initial_state, make_collision_avoidance, AvoidanceSpec};
use maxent_games::solver::SolverConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = AvoidanceSpec::default();
    let problem = make_collision_avoidance(&spec)?;
    let x0 = avoidance_initial_state(&spec);
    let config = ModeSearchConfig {
        num_seeds: 4,
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
        println!(
            "mode {}: residual {:.2e}, prior {:.3}, agent-0 lateral at mid {:+.2}",
            mode.index,
            mode.solve.stationarity,
            prior.prob(mode.index),
            mode.trajectory().states[20][0]
        );
    }

    let mut canvas = SvgCanvas::new(700.0, 700.0, (-1.6, -1.6, 1.6, 1.6));
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for _ in 0..40 {
        let draw = MixtureSampler::draw(&prior, &mut rng);
        let sampled = sample_mode_rollout(&problem, &modes[draw.mode], &x0, &mut rng)?;
        for agent in 0..2 {
            let b = 5 * agent;
            let pts: Vec<(f64, f64)> = sampled.states.iter().map(|s| (s[b], s[b + 1])).collect();
            canvas.polyline(&pts, PALETTE[draw.mode % PALETTE.len()], 0.8);
        }
    }
    for mode in &modes {
        for agent in 0..2 {
            let b = 5 * agent;
            let pts: Vec<(f64, f64)> = mode.trajectory().states.iter().map(|s| (s[b], s[b + 1])).collect();
            canvas.polyline(&pts, "#222222", 2.0);
        }
    }
    atomic_write(Path::new("out/collision_avoidance_modes.svg"), canvas.render().as_bytes())?;
    println!("wrote out/collision_avoidance_modes.svg");
    Ok(())
}
