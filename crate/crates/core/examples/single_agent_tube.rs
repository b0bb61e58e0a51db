//! Solve a single-agent jerk-controlled point mass with the entropy term
//! on, then sample rollouts from the stochastic policy. The sample tube
//! tightens where the cost landscape is stiff.

use maxent_games::auglag::AlParams;
use maxent_games::output::{atomic_write, SvgCanvas, PALETTE};
use maxent_games::problem::{make_triple_integrator, zero_controls, TripleIntegratorSpec};
use maxent_games::solver::{forward_pass_sampled, solve_mode, SolverConfig};
use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = TripleIntegratorSpec {
        horizon: 50,
        goal: vec![1.0, 0.6],
        ..TripleIntegratorSpec::default()
    };
    let problem = make_triple_integrator(&spec)?;
    let x0 = DVector::zeros(problem.state_dim());
    let config = SolverConfig {
        alpha: 0.4,
        tolerance: 1e-6,
        ..SolverConfig::default()
    };
    let solved = solve_mode(&problem, &x0, &zero_controls(&problem), &config, &AlParams::default())?;
    println!(
        "solved: {:?}, residual {:.2e}, {} iterations",
        solved.status,
        solved.stationarity,
        solved.iterations.len()
    );

    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut canvas = SvgCanvas::new(800.0, 600.0, (-0.3, -0.3, 1.4, 1.0));
    for k in 0..60 {
        let sampled = forward_pass_sampled(&problem, &solved.policy, &x0, 1.0, &mut rng)?;
        let pts: Vec<(f64, f64)> = sampled.states.iter().map(|s| (s[0], s[3])).collect();
        let _ = k;
        canvas.polyline(&pts, "#9ecae1", 1.0);
    }
    let mean: Vec<(f64, f64)> = solved.trajectory.states.iter().map(|s| (s[0], s[3])).collect();
    canvas.polyline(&mean, PALETTE[0], 2.5);
    canvas.circle((1.0, 0.6), 0.02, "#d62728", true);
    atomic_write(Path::new("out/single_agent_tube.svg"), canvas.render().as_bytes())?;
    println!("wrote out/single_agent_tube.svg");

    // The per-step control covariance is the temperature times the inverse
    // curvature; report the trace along the horizon.
    for t in [0, 25, 49] {
        let sigma = &solved.policy.steps[t].covariances[0];
        println!("step {t:2}: control covariance trace {:.4}", sigma.trace());
    }
    Ok(())
}
