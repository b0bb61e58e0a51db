//! Finite-difference audit of every shipped model.

use maxent_games::problem::{
    check_derivatives, make_collision_avoidance, make_racing, make_triple_integrator,
    AvoidanceSpec, RacingSpec, TripleIntegratorSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problems = vec![
        ("swap2", make_collision_avoidance(&AvoidanceSpec::default())?),
        ("swap3", make_collision_avoidance(&AvoidanceSpec::three_agents())?),
        ("racing", make_racing(&RacingSpec::default())?),
        ("triple_integrator", make_triple_integrator(&TripleIntegratorSpec::default())?),
    ];
    for (name, problem) in &problems {
        let report = check_derivatives(problem, 100, 1e-5)?;
        println!("== {name}: {}", if report.pass() { "ok" } else { "FAILED" });
        println!("{}", report.table());
    }
    Ok(())
}
