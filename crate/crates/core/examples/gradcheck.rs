// Adjoint reduced gradients against central differences of the reduced
// cost, with the state solved in the C¹ Huber form so that both sides
// differentiate the same map.

use tvlearn::bilevel::LearningProblem;
use tvlearn::experiment::gradient_check;
use tvlearn::io::{add_noise, NoiseSpec, Phantom};
use tvlearn::regularizer::HuberParams;
use tvlearn::ssn::{SolverConfig, StateModel};

/// Largest relative mismatch over the checked weights.
pub fn run_example() -> tvlearn::Result<f64> {
    let clean = Phantom::Shapes.render(24, 24)?;
    let noisy = add_noise(
        &clean,
        &NoiseSpec::Gaussian {
            mean: 0.0,
            variance: 0.002,
        },
        5,
    )?;
    let solver = SolverConfig {
        huber: HuberParams::c1_form(100.0, 1.0),
        ..Default::default()
    };
    let mut pb = LearningProblem::single(StateModel::Gaussian, noisy, clean, solver, 1e-10)?;
    let rows = gradient_check(&mut pb, &[vec![50.0], vec![300.0], vec![2000.0]])?;
    for r in &rows {
        println!(
            "lambda {:>7.1}  adjoint {:+.6e}  fd {:+.6e}  rel {:.1e}",
            r.lambda[0], r.adjoint[0], r.fd[0], r.rel_error
        );
    }
    Ok(rows.iter().map(|r| r.rel_error).fold(0.0, f64::max))
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    println!("worst relative mismatch {:.1e}", run_example()?);
    Ok(())
}
