//! Sampling fidelity: the empirical covariance of sampled controls matches
//! the closed-form policy covariance.

use maxent_games::auglag::AlParams;
use maxent_games::problem::{avoidance_initial_state, make_collision_avoidance, AvoidanceSpec};
use maxent_games::mpc::swerve_seed;
use maxent_games::solver::{solve_mode, SolverConfig};
use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = AvoidanceSpec::default();
    let problem = make_collision_avoidance(&spec)?;
    let x0 = avoidance_initial_state(&spec);
    let config = SolverConfig {
        alpha: 0.1,
        tolerance: 1e-3,
        max_iterations: 300,
        ..SolverConfig::default()
    };
    let seed: Vec<_> = swerve_seed(&problem, 0, 0.5)
        .iter()
        .zip(swerve_seed(&problem, 1, 0.5))
        .map(|(a, b)| a + b)
        .collect();
    let solved = solve_mode(&problem, &x0, &seed, &config, &AlParams::default())?;
    let t = 10;
    let x = solved.trajectory.states[t].clone();
    let mean = solved.policy.agent_mean(0, t, &x);
    let sigma = solved.policy.steps[t].covariances[0].clone();

    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let n = 100_000;
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 0..n {
        let u = solved.policy.sample_agent(0, t, &x, &mut rng)?;
        let d = &u - &mean;
        acc.ger(1.0, &d, &d, 1.0);
    }
    acc /= n as f64;
    println!("closed-form covariance:\n{sigma:.6}");
    println!("empirical covariance ({n} samples):\n{acc:.6}");
    println!(
        "relative Frobenius error: {:.4}",
        (&acc - &sigma).norm() / sigma.norm()
    );
    Ok(())
}
