//! Solve both racing equilibria under hard track/speed/separation
//! constraints and print the augmented-Lagrangian trace of one solve.

use maxent_games::auglag::AlParams;
use maxent_games::multimodal::{ego_prior, find_modes, ModeSearchConfig};
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
    let prior = ego_prior(&modes, &x0, config.solver.alpha, 0)?;
    println!("{} modes", modes.len());
    for mode in &modes {
        let mid = &mode.trajectory().states[22];
        println!(
            "mode {}: rear passes {} (y {:+.2}), feasibility {:.1e}, ego prior {:.3}",
            mode.index,
            if mid[6] > 0.0 { "above" } else { "below" },
            mid[6],
            mode.solve.feasibility,
            prior.prob(mode.index)
        );
    }

    // Dual-loop trace of the first mode: (iteration, residual, V, rho).
    println!("\nsolver trace of mode 0 (every 25th iteration):");
    for record in modes[0].solve.iterations.iter().step_by(25) {
        println!(
            "  it {:3}  residual {:.3e}  feasibility {:.3e}  rho {:.0e}  max lambda {:.2}",
            record.iteration, record.residual, record.feasibility, record.rho, record.max_multiplier
        );
    }
    Ok(())
}
