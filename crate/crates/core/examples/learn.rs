// Learn the Gaussian fidelity weight for one noisy/clean pair by projected
// BFGS with forward-difference gradients, then check the first-order
// conditions with the adjoint multiplier.

use tvlearn::bilevel::{train_on_set, BilevelConfig, TrainingPair};
use tvlearn::io::{add_noise, NoiseSpec, Phantom};
use tvlearn::ssn::{SolverConfig, StateModel};

pub struct Learned {
    pub lambda: f64,
    pub iterations: usize,
    pub initial_cost: f64,
    pub cost: f64,
    pub complementarity: f64,
}

pub fn run_example() -> tvlearn::Result<Learned> {
    let clean = Phantom::Shapes.render(32, 32)?;
    let noisy = add_noise(
        &clean,
        &NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.002,
        },
        0,
    )?;
    let out = train_on_set(
        StateModel::Gaussian,
        vec![TrainingPair { noisy, clean }],
        &SolverConfig::default(),
        &BilevelConfig::default(),
    )?;
    Ok(Learned {
        lambda: out.lambda[0],
        iterations: out.trace.iterates.len() - 1,
        initial_cost: out.trace.iterates[0].cost,
        cost: out.cost,
        complementarity: out.trace.kkt.map_or(f64::NAN, |k| k.complementarity),
    })
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let l = run_example()?;
    println!(
        "lambda* = {:.3} after {} iterations",
        l.lambda, l.iterations
    );
    println!("cost {:.4e} -> {:.4e}", l.initial_cost, l.cost);
    println!("|mu lambda| = {:.1e}", l.complementarity);
    Ok(())
}
