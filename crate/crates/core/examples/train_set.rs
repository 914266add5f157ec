// One weight shared by a training set: the averaged cost over pairs with
// light and heavy noise lands between the two single-pair optima.

use tvlearn::bilevel::{train_on_set, BilevelConfig, TrainingPair};
use tvlearn::io::{add_noise, NoiseSpec, Phantom};
use tvlearn::ssn::{SolverConfig, StateModel};

pub fn run_example() -> tvlearn::Result<[f64; 3]> {
    let clean = Phantom::Squares.render(32, 32)?;
    let pair = |variance: f64, seed: u64| -> tvlearn::Result<TrainingPair> {
        Ok(TrainingPair {
            noisy: add_noise(
                &clean,
                &NoiseSpec::Gaussian {
                    mean: 0.0,
                    variance,
                },
                seed,
            )?,
            clean: clean.clone(),
        })
    };
    let light = pair(0.002, 1)?;
    let heavy = pair(0.02, 2)?;
    let (solver, cfg) = (SolverConfig::default(), BilevelConfig::default());
    let learn = |pairs: Vec<TrainingPair>| -> tvlearn::Result<f64> {
        Ok(train_on_set(StateModel::Gaussian, pairs, &solver, &cfg)?.lambda[0])
    };
    Ok([
        learn(vec![light.clone()])?,
        learn(vec![light, heavy.clone()])?,
        learn(vec![heavy])?,
    ])
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let [light, both, heavy] = run_example()?;
    println!("light noise only  lambda* = {light:.2}");
    println!("both pairs        lambda* = {both:.2}");
    println!("heavy noise only  lambda* = {heavy:.2}");
    Ok(())
}
