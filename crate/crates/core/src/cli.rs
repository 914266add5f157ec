//! The `tvlearn` command-line tool.
//!
//! Every run resolves one [`Config`]: the file given with `--config`, then
//! `--set key=value` overrides, then the dedicated flags. The hash of that
//! configuration and the seed head every CSV the run writes.
//!
//! Exit status: 0 on success, 1 for usage, input and I/O errors, 2 for
//! numerical failures and for a failed gradient check.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bilevel::{
    default_lambda0, train_on_set_observed, BfgsOutcome, LearningProblem, TrainingPair,
};
use crate::error::{Error, Result};
use crate::experiment::{gradient_check, mesh_sweep, noise_sweep, MeshMode, SweepPoint};
use crate::grid::ImageGrid;
use crate::io::config::{parse_list, Config};
use crate::io::image::{read_image, write_image, BitDepth};
use crate::io::noise::{add_noise, psnr, NoiseSpec};
use crate::io::phantom::Phantom;
use crate::io::trace::{bfgs_columns, bfgs_row, num, ssn_table, CsvHeader, CsvStream, Table};
use crate::ssn::solve_state;

const DEFAULT_NOISE: &str = "gaussian:0.002";

#[derive(Debug, Parser)]
#[command(
    name = "tvlearn",
    version,
    about = "Learn fidelity weights for TV denoising"
)]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory (`output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Noise seed (`seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Noise to synthesize, e.g. `gaussian:0.002` (`noise`).
    #[arg(long, global = true)]
    pub noise: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a noisy copy of the input image.
    Noise,
    /// Solve the lower-level problem once for given weights.
    Denoise {
        /// Comma-separated weights; defaults to `bilevel.lambda0` or the
        /// noise-level heuristic.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Learn the weights for one noisy/clean pair.
    Learn,
    /// Learn shared weights for several pairs.
    Train {
        /// `NOISY,CLEAN` image paths; repeatable.
        #[arg(long = "pair", value_name = "NOISY,CLEAN", required = true)]
        pairs: Vec<String>,
    },
    /// Compare adjoint and finite-difference reduced gradients.
    Gradcheck {
        /// Comma-separated weight vector; repeatable.
        #[arg(long = "lambda")]
        lambdas: Vec<String>,
        /// Largest accepted relative mismatch.
        #[arg(long, default_value_t = 1e-3)]
        bound: f64,
    },
    /// Learned weights against image size.
    SweepMesh {
        #[arg(long, value_delimiter = ',', default_values_t = [60, 65, 70, 75, 80, 85])]
        sizes: Vec<usize>,
        /// `crop` or `resample`.
        #[arg(long, default_value = "crop")]
        mode: String,
    },
    /// Learned weights against Gaussian noise variance.
    SweepNoise {
        #[arg(long, value_delimiter = ',', default_values_t = [0.002, 0.01, 0.02])]
        variances: Vec<f64>,
    },
}

/// Parses `args` and runs the command; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command. `Ok(false)` reports a failed check.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    let out = PathBuf::from(cfg.get_str("output.dir").unwrap_or("out"));
    fs::create_dir_all(&out)?;
    match &cli.command {
        Command::Noise => noise_cmd(&cfg, &out),
        Command::Denoise { lambda } => denoise_cmd(&cfg, &out, lambda.as_deref()),
        Command::Learn => learn_cmd(&cfg, &out),
        Command::Train { pairs } => train_cmd(&cfg, &out, pairs),
        Command::Gradcheck { lambdas, bound } => gradcheck_cmd(&cfg, &out, lambdas, *bound),
        Command::SweepMesh { sizes, mode } => sweep_mesh_cmd(&cfg, &out, sizes, mode),
        Command::SweepNoise { variances } => sweep_noise_cmd(&cfg, &out, variances),
    }
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &cli.set {
        cfg.assign(s)?;
    }
    if let Some(o) = &cli.out {
        cfg.set("output.dir", o.to_string_lossy())?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(n) = &cli.noise {
        cfg.set("noise", n.as_str())?;
    }
    Ok(cfg)
}

fn header(cfg: &Config, grid: &ImageGrid) -> Result<CsvHeader> {
    let (nx, ny) = grid.dims();
    Ok(CsvHeader::new(&cfg.hash(), cfg.seed()?)
        .with("nx", nx)
        .with("ny", ny)
        .with("h", num(grid.h())))
}

fn depth(cfg: &Config) -> Result<BitDepth> {
    match cfg.get_str("output.depth").unwrap_or("8") {
        "8" => Ok(BitDepth::Eight),
        "16" => Ok(BitDepth::Sixteen),
        other => Err(Error::Config(format!(
            "output.depth must be 8 or 16, got {other:?}"
        ))),
    }
}

fn noise_spec(cfg: &Config) -> Result<NoiseSpec> {
    Ok(cfg.noise()?.unwrap_or(DEFAULT_NOISE.parse()?))
}

fn phantom(cfg: &Config, default: Phantom, default_size: usize) -> Result<ImageGrid> {
    let p = match cfg.get_str("input.phantom") {
        Some(name) => name.parse()?,
        None => default,
    };
    let n = cfg.get_or("input.size", default_size)?;
    p.render(n, n)
}

/// The clean image: `input.clean`, or a rendered phantom.
fn clean_image(cfg: &Config) -> Result<ImageGrid> {
    match cfg.get_str("input.clean") {
        Some(p) => read_image(p),
        None => phantom(cfg, Phantom::Shapes, 32),
    }
}

/// The noisy image and, when known, its ground truth. A missing
/// `input.noisy` is synthesized from the clean image.
fn input_pair(cfg: &Config) -> Result<(ImageGrid, Option<ImageGrid>)> {
    match cfg.get_str("input.noisy") {
        Some(p) => {
            let noisy = read_image(p)?;
            let clean = match cfg.get_str("input.clean") {
                Some(c) => Some(read_image(c)?),
                None => None,
            };
            Ok((noisy, clean))
        }
        None => {
            let clean = clean_image(cfg)?;
            let noisy = add_noise(&clean, &noise_spec(cfg)?, cfg.seed()?)?;
            Ok((noisy, Some(clean)))
        }
    }
}

fn noise_cmd(cfg: &Config, out: &Path) -> Result<bool> {
    let clean = clean_image(cfg)?;
    let spec = noise_spec(cfg)?;
    let noisy = add_noise(&clean, &spec, cfg.seed()?)?;
    let path = out.join("noisy.pgm");
    write_image(&noisy, &path, depth(cfg)?)?;
    println!("{spec} seed {} -> {}", cfg.seed()?, path.display());
    Ok(true)
}

fn denoise_cmd(cfg: &Config, out: &Path, lambda: Option<&str>) -> Result<bool> {
    let (noisy, clean) = input_pair(cfg)?;
    let model = cfg.model()?;
    let solver = cfg.solver()?;
    let lambda = match lambda {
        Some(s) => parse_list(s)?,
        None => cfg
            .bilevel()?
            .lambda0
            .unwrap_or_else(|| default_lambda0(model, &noisy)),
    };
    let head = header(cfg, &noisy)?
        .with("model", model.name())
        .with("lambda", join(&lambda));
    let trace_path = out.join("ssn_trace.csv");
    let sol = match solve_state(model, &noisy, &lambda, &solver, None) {
        Ok(s) => s,
        Err(Error::NonConvergence { trace }) => {
            ssn_table(head, &trace).save(&trace_path)?;
            return Err(Error::NonConvergence { trace });
        }
        Err(e) => return Err(e),
    };
    ssn_table(head, &sol.trace).save(&trace_path)?;
    let img = out.join("denoised.pgm");
    write_image(&sol.u, &img, depth(cfg)?)?;
    print!(
        "lambda {} : {} Newton iterations, residual {:.3e}",
        join(&lambda),
        sol.trace.iterations,
        sol.trace.residuals.last().copied().unwrap_or(0.0)
    );
    if let Some(c) = clean {
        print!(
            ", PSNR {:.2} dB -> {:.2} dB",
            psnr(&noisy, &c)?,
            psnr(&sol.u, &c)?
        );
    }
    println!();
    Ok(true)
}

fn learn_cmd(cfg: &Config, out: &Path) -> Result<bool> {
    let (noisy, clean) = input_pair(cfg)?;
    let clean = clean.ok_or_else(|| Error::Config("learning needs input.clean".into()))?;
    learn_pairs(cfg, out, vec![TrainingPair { noisy, clean }])
}

fn train_cmd(cfg: &Config, out: &Path, specs: &[String]) -> Result<bool> {
    let pairs = specs
        .iter()
        .map(|s| {
            let (n, c) = s
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("expected NOISY,CLEAN, got {s:?}")))?;
            Ok(TrainingPair {
                noisy: read_image(n.trim())?,
                clean: read_image(c.trim())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    learn_pairs(cfg, out, pairs)
}

fn learn_pairs(cfg: &Config, out: &Path, pairs: Vec<TrainingPair>) -> Result<bool> {
    let model = cfg.model()?;
    let solver = cfg.solver()?;
    let bilevel = cfg.bilevel()?;
    let head = header(cfg, &pairs[0].noisy)?
        .with("model", model.name())
        .with("pairs", pairs.len());
    let mut stream = CsvStream::create(
        out.join("bfgs_trace.csv"),
        &head,
        &bfgs_columns(model.dim()),
    )?;
    let mut write_err = None;
    let outcome = train_on_set_observed(model, pairs.clone(), &solver, &bilevel, &mut |it| {
        if let Err(e) = stream.row(&bfgs_row(it)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    result_table(head, &outcome).save(out.join("result.csv"))?;
    let pb = LearningProblem::new(model, pairs.clone(), solver, bilevel.beta)?;
    let (_, states) = pb.reduced_cost(&outcome.lambda)?;
    let d = depth(cfg)?;
    for (k, (u, pair)) in states.iter().zip(&pairs).enumerate() {
        let name = if pairs.len() == 1 {
            "denoised.pgm".to_string()
        } else {
            format!("denoised_{k}.pgm")
        };
        write_image(u, out.join(name), d)?;
        println!(
            "pair {k}: PSNR {:.2} dB -> {:.2} dB",
            psnr(&pair.noisy, &pair.clean)?,
            psnr(u, &pair.clean)?
        );
    }
    println!(
        "lambda* = {} after {} iterations ({}), cost {:.6e}",
        join(&outcome.lambda),
        outcome.trace.iterates.len() - 1,
        outcome.trace.stop.name(),
        outcome.cost
    );
    Ok(true)
}

fn result_table(head: CsvHeader, o: &BfgsOutcome) -> Table {
    let mut t = Table::new(head, &["key", "value"]);
    for (i, l) in o.lambda.iter().enumerate() {
        t.push(vec![format!("lambda_{}", i + 1), num(*l)]);
    }
    for (i, m) in o.multipliers.iter().enumerate() {
        t.push(vec![format!("multiplier_{}", i + 1), num(*m)]);
    }
    t.push(vec!["cost".into(), num(o.cost)]);
    t.push(vec![
        "iterations".into(),
        (o.trace.iterates.len() - 1).to_string(),
    ]);
    t.push(vec!["converged".into(), o.trace.converged.to_string()]);
    t.push(vec!["stop".into(), o.trace.stop.name().into()]);
    if let Some(k) = &o.trace.kkt {
        t.push(vec!["kkt_stationarity".into(), num(k.stationarity)]);
        t.push(vec!["kkt_complementarity".into(), num(k.complementarity)]);
        t.push(vec!["kkt_feasibility".into(), num(k.feasibility)]);
    }
    t
}

fn gradcheck_cmd(cfg: &Config, out: &Path, lambdas: &[String], bound: f64) -> Result<bool> {
    let (noisy, clean) = input_pair(cfg)?;
    let clean =
        clean.ok_or_else(|| Error::Config("the gradient check needs input.clean".into()))?;
    let model = cfg.model()?;
    let mut lambdas = lambdas
        .iter()
        .map(|s| parse_list(s))
        .collect::<Result<Vec<_>>>()?;
    if lambdas.is_empty() {
        let l0 = default_lambda0(model, &noisy);
        lambdas = [0.5, 1.0, 2.0]
            .iter()
            .map(|s| l0.iter().map(|l| s * l).collect())
            .collect();
    }
    let head = header(cfg, &noisy)?
        .with("model", model.name())
        .with("bound", num(bound));
    let mut pb = LearningProblem::single(model, noisy, clean, cfg.solver()?, cfg.bilevel()?.beta)?;
    let d = model.dim();
    let mut cols: Vec<String> = (1..=d).map(|i| format!("lambda_{i}")).collect();
    cols.extend((1..=d).map(|i| format!("adjoint_{i}")));
    cols.extend((1..=d).map(|i| format!("fd_{i}")));
    cols.extend(["rel_error".to_string(), "pass".to_string()]);
    let mut stream = CsvStream::create(out.join("gradcheck.csv"), &head, &cols)?;
    let mut ok = true;
    for l in &lambdas {
        let row = gradient_check(&mut pb, std::slice::from_ref(l))?.remove(0);
        let pass = row.rel_error <= bound;
        ok &= pass;
        let mut r: Vec<String> = row.lambda.iter().map(|v| num(*v)).collect();
        r.extend(row.adjoint.iter().map(|v| num(*v)));
        r.extend(row.fd.iter().map(|v| num(*v)));
        r.push(num(row.rel_error));
        r.push(pass.to_string());
        stream.row(&r)?;
        println!(
            "lambda {} : relative mismatch {:.3e} {}",
            join(&row.lambda),
            row.rel_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn sweep_columns(d: usize) -> Vec<String> {
    let mut cols = vec!["size".to_string(), "h".into(), "noise".into()];
    cols.extend((1..=d).map(|i| format!("lambda_{i}")));
    for c in [
        "cost",
        "iterations",
        "converged",
        "psnr_noisy",
        "psnr_denoised",
    ] {
        cols.push(c.into());
    }
    cols
}

fn sweep_row(p: &SweepPoint) -> Vec<String> {
    let mut r = vec![p.size.to_string(), num(p.h), p.noise.to_string()];
    r.extend(p.lambda.iter().map(|v| num(*v)));
    r.push(num(p.cost));
    r.push(p.iterations.to_string());
    r.push(p.converged.to_string());
    r.push(num(p.psnr_noisy));
    r.push(num(p.psnr_denoised));
    r
}

/// Writes a sweep row and echoes it; keeps the first write error.
fn emit(stream: &mut CsvStream, err: &mut Option<Error>, p: &SweepPoint) {
    let row = sweep_row(p);
    if let Err(e) = stream.row(&row) {
        err.get_or_insert(e);
    }
    println!("{}", row.join(" "));
}

fn sweep_mesh_cmd(cfg: &Config, out: &Path, sizes: &[usize], mode: &str) -> Result<bool> {
    let mode: MeshMode = mode.parse()?;
    let model = cfg.model()?;
    let ph = match cfg.get_str("input.phantom") {
        Some(n) => n.parse()?,
        None => Phantom::Mosaic,
    };
    let spec = noise_spec(cfg)?;
    let head = CsvHeader::new(&cfg.hash(), cfg.seed()?)
        .with("model", model.name())
        .with("phantom", ph.name())
        .with("mode", mode.name())
        .with("h", "1/(size-1)");
    let mut stream = CsvStream::create(
        out.join("sweep_mesh.csv"),
        &head,
        &sweep_columns(model.dim()),
    )?;
    let mut err = None;
    mesh_sweep(
        model,
        &cfg.solver()?,
        &cfg.bilevel()?,
        ph,
        sizes,
        &spec,
        cfg.seed()?,
        mode,
        &mut |p| emit(&mut stream, &mut err, p),
    )?;
    err.map_or(Ok(true), Err)
}

fn sweep_noise_cmd(cfg: &Config, out: &Path, variances: &[f64]) -> Result<bool> {
    let model = cfg.model()?;
    let clean = match cfg.get_str("input.clean") {
        Some(p) => read_image(p)?,
        None => phantom(cfg, Phantom::Shapes, 64)?,
    };
    let specs: Vec<NoiseSpec> = variances
        .iter()
        .map(|&variance| NoiseSpec::Gaussian {
            mean: 0.0,
            variance,
        })
        .collect();
    let head = header(cfg, &clean)?.with("model", model.name());
    let mut stream = CsvStream::create(
        out.join("sweep_noise.csv"),
        &head,
        &sweep_columns(model.dim()),
    )?;
    let mut err = None;
    noise_sweep(
        model,
        &cfg.solver()?,
        &cfg.bilevel()?,
        &clean,
        &specs,
        cfg.seed()?,
        &mut |p| emit(&mut stream, &mut err, p),
    )?;
    err.map_or(Ok(true), Err)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_keys() {
        let cli = Cli::try_parse_from([
            "tvlearn",
            "--seed",
            "4",
            "--set",
            "solver.gamma=50",
            "--noise",
            "poisson:80",
            "learn",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed().unwrap(), 4);
        assert_eq!(cfg.solver().unwrap().huber.gamma, 50.0);
        assert_eq!(
            cfg.noise().unwrap(),
            Some(NoiseSpec::Poisson { scale: 80.0 })
        );
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["tvlearn", "frobnicate"]), 1);
        assert_eq!(main_with_args(["tvlearn", "--set", "nope=1", "noise"]), 1);
        assert_eq!(main_with_args(["tvlearn", "--help"]), 0);
    }
}
