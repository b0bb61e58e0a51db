use maxent_games::auglag::AlParams;
use maxent_games::mpc::*;
use maxent_games::multimodal::ModeSearchConfig;
use maxent_games::problem::*;
use maxent_games::solver::*;
use std::sync::Arc;

fn main() {
    let bias: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(0.6);
    let steps: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(60);
    let spec = RacingSpec {
        track_half_width: 0.9,
        radius: [0.3, 0.25],
        max_speed: [1.0, 1.2],
        horizon: 28,
        rear_offset: if bias > 0.0 { 0.2 } else { -0.2 },
        ..RacingSpec::default()
    };
    let problem = Arc::new(make_racing(&spec).unwrap());
    let x0 = racing_initial_state(&spec);
    let solver = SolverConfig {
        alpha: 0.1,
        tolerance: 3e-3,
        max_iterations: 400,
        ..SolverConfig::default()
    };
    let al = AlParams {
        penalty_factor: 4.0,
        sufficient_decrease: 0.8,
        ..AlParams::default()
    };
    let mut lead = MultimodalController::new(
        Arc::clone(&problem),
        x0.clone(),
        MpcConfig {
            modes: ModeSearchConfig {
                num_seeds: 3,
                rounds: 1,
                seed: 0,
                init_noise: 0.6,
                cluster_tolerance: None,
                bank_slack: 20.0,
                bank_feasibility_slack: 50.0,
                exploration_max_iterations: None,
                solver,
                al,
            },
            observation_window: 5,
            execution: ExecutionMode::Mean,
            ego: 0,
            replan_max_iterations: 120,
            explore_slots: 1,
        },
    )
    .unwrap();
    let ibr = IbrConfig {
        al,
        inner: SolverConfig {
            alpha: 0.0,
            ..solver
        },
        ..IbrConfig::default()
    };
    let mut rear = IbrController::new(Arc::clone(&problem), 1, ibr, bias);
    let mut x = x0.clone();
    let t_all = std::time::Instant::now();
    for step in 0..steps {
        let t0 = std::time::Instant::now();
        let dl = lead.decide(&x, step).unwrap();
        let dr = rear.decide(&x, step).unwrap();
        let mut joint = nalgebra::DVector::zeros(4);
        joint[0] = dl.control[0];
        joint[1] = dl.control[1];
        joint[2] = dr.control[0];
        joint[3] = dr.control[1];
        let x_next = problem.dynamics().step(&x, &joint);
        lead.record(&x, &joint, &x_next).unwrap();
        rear.record(&x, &joint, &x_next).unwrap();
        x = x_next;
        println!(
            "t {:2} [{:4.1}s] lead ({:+.2},{:+.2} v{:.2}) rear ({:+.2},{:+.2} v{:.2}) gapx {:+.2} modes {} belief {:?} {}",
            step,
            t0.elapsed().as_secs_f64(),
            x[0],
            x[1],
            x[3],
            x[5],
            x[6],
            x[8],
            x[0] - x[5],
            dl.num_modes,
            dl.belief
                .as_ref()
                .map(|b| b
                    .probabilities()
                    .iter()
                    .map(|p| (p * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()),
            if dl.degraded { "DEGRADED" } else { "" },
        );
    }
    println!(
        "total {:.0}s, final lead {:.2} rear {:.2}",
        t_all.elapsed().as_secs_f64(),
        x[0],
        x[5]
    );
}
