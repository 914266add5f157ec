// Salt-and-pepper noise with a Huberized L¹ fidelity: learn the weight and
// report the outer trace, including the SSN iterations of each step.

use tvlearn::bilevel::{train_on_set, BilevelConfig, LearningProblem, TrainingPair};
use tvlearn::io::{add_noise, psnr, NoiseSpec, Phantom};
use tvlearn::regularizer::HuberParams;
use tvlearn::ssn::{SolverConfig, StateModel};

pub struct Impulse {
    /// `(λ, cost, SSN iterations)` per outer iterate.
    pub trace: Vec<(f64, f64, usize)>,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
}

pub fn run_example() -> tvlearn::Result<Impulse> {
    let clean = Phantom::Shapes.render(40, 40)?;
    let noisy = add_noise(&clean, &NoiseSpec::SaltPepper { density: 0.1 }, 1)?;
    let gamma = 50.0;
    let model = StateModel::Impulse { gamma_l1: gamma };
    let solver = SolverConfig {
        huber: HuberParams::max_form(gamma),
        ..Default::default()
    };
    let cfg = BilevelConfig::default();
    let out = train_on_set(
        model,
        vec![TrainingPair {
            noisy: noisy.clone(),
            clean: clean.clone(),
        }],
        &solver,
        &cfg,
    )?;
    let (_, states) =
        LearningProblem::single(model, noisy.clone(), clean.clone(), solver, cfg.beta)?
            .reduced_cost(&out.lambda)?;
    Ok(Impulse {
        trace: out
            .trace
            .iterates
            .iter()
            .map(|i| (i.lambda[0], i.cost, i.ssn_iterations))
            .collect(),
        psnr_noisy: psnr(&noisy, &clean)?,
        psnr_denoised: psnr(&states[0], &clean)?,
    })
}

#[allow(dead_code)]
fn main() -> tvlearn::Result<()> {
    let r = run_example()?;
    println!("{:>4} {:>10} {:>12} {:>5}", "k", "lambda", "cost", "ssn");
    for (k, (l, c, s)) in r.trace.iter().enumerate() {
        println!("{k:>4} {l:>10.4} {c:>12.4e} {s:>5}");
    }
    println!("PSNR {:.2} -> {:.2} dB", r.psnr_noisy, r.psnr_denoised);
    Ok(())
}
