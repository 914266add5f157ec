//! Lower-level solvers: Huber-regularized TV denoising by semismooth Newton.
//!
//! Each iteration eliminates the dual increments (`δq` for the TV flux and, for
//! impulse noise, `δp` for the Huberized `L¹` term) so that only a scalar system
//! in `δu` is factorized, using the banded LU from [`crate::band`].
//!
//! Three lower-level equations are supported:
//!
//! * Gaussian: `-εΔu - div h_γ(∇u) + λ(u - f) = 0`
//! * Gauss+Poisson, multiplied by `u` to absorb the positivity constraint:
//!   `u·(-εΔu - div h_γ(∇u) + λ₁(u - f)) + λ₂(u - f) = 0`
//! * Impulse: `-εΔu - div h_γ(∇u) + λ p = 0`, `p = γ(u - f)/max(1, γ|u - f|)`

mod assemble;

pub use assemble::{apply_operator, assemble_operator, OperatorParts};

use crate::band::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::fidelity::{FidelitySpec, DEFAULT_U_FLOOR};
use crate::grid::{
    apply_boundary, check_dims, div, grad, is_boundary, norm_l2, Boundary, ImageGrid, VectorField,
};
use crate::regularizer::{h_gamma, newton_diffusion_matrix, potential, HuberParams, Mat2};

/// Residual norms below this are treated as converged regardless of the
/// relative tolerance.
pub const ABSOLUTE_RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Damping {
    None,
    /// Halve the Newton step until the residual norm decreases, at most
    /// `max_backtracks` times.
    Halving {
        max_backtracks: usize,
    },
}

/// Which generalized Jacobian the Newton step uses on the active sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linearization {
    /// Replace `∇u/|∇u|` (and `(u-f)/|u-f|`) by the projected duals.
    #[default]
    Modified,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub huber: HuberParams,
    pub tol_ssn: f64,
    pub max_ssn: usize,
    pub damping: Damping,
    pub boundary: Boundary,
    pub linearization: Linearization,
    /// Positivity floor for the Gauss+Poisson iterate.
    pub u_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-12,
            huber: HuberParams::max_form(100.0),
            tol_ssn: 1e-8,
            max_ssn: 50,
            damping: Damping::Halving { max_backtracks: 10 },
            boundary: Boundary::Dirichlet,
            linearization: Linearization::Modified,
            u_floor: DEFAULT_U_FLOOR,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.huber.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol_ssn > 0.0 && self.tol_ssn < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tol_ssn must lie in (0, 1), got {}",
                self.tol_ssn
            )));
        }
        if self.max_ssn == 0 {
            return Err(Error::InvalidParameter("max_ssn must be at least 1".into()));
        }
        if !(self.u_floor > 0.0) {
            return Err(Error::InvalidParameter("u_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-solve convergence record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SsnTrace {
    /// `‖R(u^k)‖` for k = 0..=iterations.
    pub residuals: Vec<f64>,
    /// Discrete energy of each iterate, when the equation has one (not for
    /// the multiplied Gauss+Poisson form).
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Total number of step halvings.
    pub backtracks: usize,
    /// Steps taken at full length because no halving decreased the residual.
    pub forced_steps: usize,
    /// Largest fraction of pixels held at the positivity floor (Gauss+Poisson).
    pub clamp_fraction: f64,
    /// Set when the floor was active on more than 1% of the pixels.
    pub clamp_flag: bool,
}

impl SsnTrace {
    /// Ratios `r_{k+1}/r_k` of consecutive residuals.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// The lower-level equation to solve, i.e. the set of fidelity terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateModel {
    Gaussian,
    GaussPoisson,
    Impulse { gamma_l1: f64 },
}

impl StateModel {
    /// Number of weights `λ`.
    pub fn dim(&self) -> usize {
        match self {
            StateModel::GaussPoisson => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StateModel::Gaussian => "gaussian",
            StateModel::GaussPoisson => "gauss-poisson",
            StateModel::Impulse { .. } => "impulse",
        }
    }

    /// Fidelity terms in weight order.
    pub fn fidelities(&self, f: &ImageGrid, cfg: &SolverConfig) -> Result<Vec<FidelitySpec>> {
        Ok(match *self {
            StateModel::Gaussian => vec![FidelitySpec::gaussian(f.clone())],
            StateModel::GaussPoisson => {
                let mut p = FidelitySpec::poisson(f.clone())?;
                p.u_floor = cfg.u_floor;
                vec![FidelitySpec::gaussian(f.clone()), p]
            }
            StateModel::Impulse { gamma_l1 } => vec![FidelitySpec::impulse(f.clone(), gamma_l1)?],
        })
    }
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: ImageGrid,
    /// `h_γ(∇u)` at the returned iterate.
    pub q: VectorField,
    /// Huberized `L¹` dual, impulse model only.
    pub p: Option<ImageGrid>,
    pub trace: SsnTrace,
}

pub fn solve_gaussian(f: &ImageGrid, lambda: f64, cfg: &SolverConfig) -> Result<StateSolution> {
    solve_state(StateModel::Gaussian, f, &[lambda], cfg, None)
}

pub fn solve_gauss_poisson(
    f: &ImageGrid,
    lambda1: f64,
    lambda2: f64,
    cfg: &SolverConfig,
) -> Result<StateSolution> {
    solve_state(StateModel::GaussPoisson, f, &[lambda1, lambda2], cfg, None)
}

pub fn solve_impulse(f: &ImageGrid, lambda: f64, cfg: &SolverConfig) -> Result<StateSolution> {
    let model = StateModel::Impulse {
        gamma_l1: cfg.huber.gamma,
    };
    solve_state(model, f, &[lambda], cfg, None)
}

struct Problem<'a> {
    model: StateModel,
    f: &'a ImageGrid,
    lambda: &'a [f64],
    cfg: &'a SolverConfig,
}

/// Quantities derived from one iterate.
struct Eval {
    grad: VectorField,
    flux: VectorField,
    residual: ImageGrid,
    norm: f64,
    energy: Option<f64>,
}

#[inline]
fn huber_scalar(r: f64, g: f64) -> f64 {
    g * r / (g * r.abs()).max(1.0)
}

impl Problem<'_> {
    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.lambda.len() != self.model.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} model expects {} weights, got {}",
                self.model.name(),
                self.model.dim(),
                self.lambda.len()
            )));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "weights must be nonnegative, got {l}"
            )));
        }
        match self.model {
            StateModel::GaussPoisson => {
                if self.lambda.iter().all(|&l| l == 0.0) {
                    return Err(Error::InvalidParameter(
                        "Gauss+Poisson needs at least one positive weight".into(),
                    ));
                }
                if self.lambda[1] > 0.0 && self.f.min() < 0.0 {
                    return Err(Error::InvalidParameter(
                        "Poisson weight requires nonnegative data".into(),
                    ));
                }
            }
            StateModel::Impulse { gamma_l1 } if !(gamma_l1 > 0.0) => {
                return Err(Error::InvalidParameter("gamma_l1 must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn clamp(&self, u: &mut ImageGrid) -> usize {
        if self.model != StateModel::GaussPoisson {
            return 0;
        }
        let floor = self.cfg.u_floor;
        let dirichlet = self.cfg.boundary == Boundary::Dirichlet;
        let (nx, ny) = u.dims();
        let mut hits = 0;
        for (i, v) in u.values_mut().iter_mut().enumerate() {
            if dirichlet && is_boundary(nx, ny, i) {
                continue;
            }
            if *v < floor {
                *v = floor;
                hits += 1;
            }
        }
        hits
    }

    fn eval(&self, u: &ImageGrid) -> Result<Eval> {
        let cfg = self.cfg;
        let bc = cfg.boundary;
        let g = grad(u, bc);
        let mut flux = VectorField::zeros_like(u);
        for i in 0..u.len() {
            flux.set(i, h_gamma(g.at(i), &cfg.huber));
        }
        // -εΔu - div h(∇u) = -div(ε∇u + h(∇u))
        let mut total = flux.clone();
        for i in 0..u.len() {
            total.qx[i] += cfg.epsilon * g.qx[i];
            total.qy[i] += cfg.epsilon * g.qy[i];
        }
        let elliptic = div(&total, bc);
        let (uv, fv, ev) = (u.values(), self.f.values(), elliptic.values());
        let res: Vec<f64> = match self.model {
            StateModel::Gaussian => (0..u.len())
                .map(|i| -ev[i] + self.lambda[0] * (uv[i] - fv[i]))
                .collect(),
            StateModel::GaussPoisson => (0..u.len())
                .map(|i| {
                    let r = uv[i] - fv[i];
                    uv[i] * (-ev[i] + self.lambda[0] * r) + self.lambda[1] * r
                })
                .collect(),
            StateModel::Impulse { gamma_l1 } => (0..u.len())
                .map(|i| -ev[i] + self.lambda[0] * huber_scalar(uv[i] - fv[i], gamma_l1))
                .collect(),
        };
        let mut residual = u.like(res);
        apply_boundary(&mut residual, bc);
        let norm = norm_l2(&residual);
        let energy = match self.model {
            StateModel::GaussPoisson => None,
            _ => Some(state_energy(self.model, self.f, self.lambda, u, cfg)?),
        };
        Ok(Eval {
            grad: g,
            flux,
            residual,
            norm,
            energy,
        })
    }

    /// Newton matrix at `u` together with the per-node Jacobian pieces needed
    /// to recover the dual increments.
    fn jacobian(
        &self,
        u: &ImageGrid,
        ev: &Eval,
        q: &VectorField,
        p: Option<&ImageGrid>,
        lin: Linearization,
    ) -> Result<(BandMatrix, Vec<Mat2>, Vec<f64>)> {
        let cfg = self.cfg;
        let n = u.len();
        let modified = lin == Linearization::Modified;
        let diffusion: Vec<Mat2> = (0..n)
            .map(|i| {
                let dual = if modified { Some(q.at(i)) } else { None };
                newton_diffusion_matrix(ev.grad.at(i), dual, &cfg.huber)
            })
            .collect();
        let (uv, fv) = (u.values(), self.f.values());
        let mut fidelity_slope = vec![0.0; n];
        let mut row_scale = None;
        let reaction: Vec<f64> = match self.model {
            StateModel::Gaussian => vec![self.lambda[0]; n],
            StateModel::GaussPoisson => {
                // δu · (-εΔu - div q + λ₁(u - f)) uses the current dual q
                let mut total = q.clone();
                for i in 0..n {
                    total.qx[i] += cfg.epsilon * ev.grad.qx[i];
                    total.qy[i] += cfg.epsilon * ev.grad.qy[i];
                }
                let dq = div(&total, cfg.boundary);
                row_scale = Some(uv.to_vec());
                (0..n)
                    .map(|i| {
                        -dq.values()[i]
                            + self.lambda[0] * (uv[i] - fv[i])
                            + self.lambda[0] * uv[i]
                            + self.lambda[1]
                    })
                    .collect()
            }
            StateModel::Impulse { gamma_l1 } => {
                let spec = FidelitySpec {
                    kind: crate::fidelity::FidelityKind::ImpulseHuber,
                    data: self.f.clone(),
                    gamma_l1,
                    u_floor: cfg.u_floor,
                };
                for i in 0..n {
                    let dual = if modified {
                        p.map(|p| p.values()[i])
                    } else {
                        None
                    };
                    fidelity_slope[i] = spec.d2phi_at(uv[i], fv[i], dual)?;
                }
                fidelity_slope.iter().map(|d| self.lambda[0] * d).collect()
            }
        };
        let parts = OperatorParts {
            epsilon: cfg.epsilon,
            diffusion: &diffusion,
            reaction: &reaction,
            row_scale: row_scale.as_deref(),
            boundary: cfg.boundary,
        };
        Ok((assemble_operator(u, &parts), diffusion, fidelity_slope))
    }
}

/// Discrete energy whose critical point the Gaussian and impulse equations
/// characterize:
/// `h²(ε/2 Σ|∇u|² + Σ Ψ_γ(∇u)) + Σᵢ λᵢ ∫φᵢ(u)`.
pub fn state_energy(
    model: StateModel,
    f: &ImageGrid,
    lambda: &[f64],
    u: &ImageGrid,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_dims(f.dims(), u.dims())?;
    let g = grad(u, cfg.boundary);
    let mut reg = 0.0;
    for i in 0..u.len() {
        let z = g.at(i);
        reg += 0.5 * cfg.epsilon * (z[0] * z[0] + z[1] * z[1]) + potential(z, &cfg.huber);
    }
    let h2 = u.h() * u.h();
    let mut total = h2 * reg;
    for (spec, &l) in model.fidelities(f, cfg)?.iter().zip(lambda) {
        if l != 0.0 {
            total += l * crate::fidelity::phi(u, spec)?;
        }
    }
    Ok(total)
}

/// Nonlinear residual of the lower-level equation at `u` (strong form, one
/// value per node).
pub fn state_residual(
    model: StateModel,
    f: &ImageGrid,
    lambda: &[f64],
    u: &ImageGrid,
    cfg: &SolverConfig,
) -> Result<ImageGrid> {
    check_dims(f.dims(), u.dims())?;
    let pb = Problem {
        model,
        f,
        lambda,
        cfg,
    };
    pb.validate()?;
    Ok(pb.eval(u)?.residual)
}

/// The scalar Newton system `A δu = -R(u)` at the iterate `(u, q, p)`.
pub fn assemble_newton_system(
    model: StateModel,
    f: &ImageGrid,
    lambda: &[f64],
    u: &ImageGrid,
    q: &VectorField,
    p: Option<&ImageGrid>,
    cfg: &SolverConfig,
) -> Result<(BandMatrix, Vec<f64>)> {
    check_dims(f.dims(), u.dims())?;
    check_dims(u.dims(), q.dims())?;
    let pb = Problem {
        model,
        f,
        lambda,
        cfg,
    };
    pb.validate()?;
    let ev = pb.eval(u)?;
    let (a, _, _) = pb.jacobian(u, &ev, q, p, cfg.linearization)?;
    let rhs = ev.residual.values().iter().map(|r| -r).collect();
    Ok((a, rhs))
}

/// Solves the lower-level equation for weights `lambda`, starting from `init`
/// (or from the data when absent).
pub fn solve_state(
    model: StateModel,
    f: &ImageGrid,
    lambda: &[f64],
    cfg: &SolverConfig,
    init: Option<&ImageGrid>,
) -> Result<StateSolution> {
    let pb = Problem {
        model,
        f,
        lambda,
        cfg,
    };
    pb.validate()?;
    let n = f.len();
    let all_zero = lambda.iter().all(|&l| l == 0.0);
    if all_zero {
        if cfg.boundary == Boundary::Neumann {
            return Err(Error::InvalidParameter(
                "all weights zero is ill-posed under Neumann boundary".into(),
            ));
        }
        // Dirichlet problem without data term: u = 0 is the unique solution.
        let u = f.zeros_like();
        let p = match model {
            StateModel::Impulse { gamma_l1 } => Some(
                u.like(
                    f.values()
                        .iter()
                        .map(|&fv| huber_scalar(-fv, gamma_l1))
                        .collect(),
                ),
            ),
            _ => None,
        };
        return Ok(StateSolution {
            q: VectorField::zeros_like(&u),
            u,
            p,
            trace: SsnTrace {
                residuals: vec![0.0],
                converged: true,
                ..Default::default()
            },
        });
    }

    let mut masked_f = f.clone();
    apply_boundary(&mut masked_f, cfg.boundary);
    let mut u = match init {
        Some(u0) => {
            check_dims(f.dims(), u0.dims())?;
            u0.clone()
        }
        // the multiplied equation has spurious roots at u = 0; start from the
        // Gaussian state at the total weight, which is positive inside
        None if model == StateModel::GaussPoisson => {
            solve_state(StateModel::Gaussian, f, &[lambda[0] + lambda[1]], cfg, None)?.u
        }
        None => masked_f.clone(),
    };
    apply_boundary(&mut u, cfg.boundary);
    let mut trace = SsnTrace::default();
    let clamped = pb.clamp(&mut u);
    trace.clamp_fraction = clamped as f64 / n as f64;

    let gamma_l1 = match model {
        StateModel::Impulse { gamma_l1 } => Some(gamma_l1),
        _ => None,
    };
    let impulse_dual = |u: &ImageGrid| {
        gamma_l1.map(|g| {
            u.like(
                u.values()
                    .iter()
                    .zip(f.values())
                    .map(|(&a, &b)| huber_scalar(a - b, g))
                    .collect(),
            )
        })
    };

    let mut ev = pb.eval(&u)?;
    let mut q = ev.flux.clone();
    let mut p = impulse_dual(&u);
    let r0 = ev.norm;
    trace.residuals.push(r0);
    trace.energies.extend(ev.energy);
    // relative to the residual at the data, so warm starts share the
    // tolerance of cold starts
    let r_data = pb.eval(&masked_f)?.norm;
    let target = (cfg.tol_ssn * r0.max(r_data)).max(ABSOLUTE_RESIDUAL_FLOOR);

    loop {
        if ev.norm <= target {
            trace.converged = true;
            break;
        }
        if trace.iterations >= cfg.max_ssn {
            return Err(Error::NonConvergence {
                trace: Box::new(trace),
            });
        }

        let (lu, diffusion, slope) = factor_with_fallback(&pb, &u, &ev, &q, p.as_ref())?;
        let rhs: Vec<f64> = ev.residual.values().iter().map(|r| -r).collect();
        let du = u.like(lu.solve(&rhs));

        // Dual values after a full step: q + δq = h(∇u) + D ∇δu, likewise for p.
        let gdu = grad(&du, cfg.boundary);
        let mut q_full = ev.flux.clone();
        for (i, d) in diffusion.iter().enumerate() {
            let z = gdu.at(i);
            q_full.qx[i] += d[0][0] * z[0] + d[0][1] * z[1];
            q_full.qy[i] += d[1][0] * z[0] + d[1][1] * z[1];
        }
        let p_full = match (impulse_dual(&u), gamma_l1) {
            (Some(mut h1), Some(_)) => {
                for (i, v) in h1.values_mut().iter_mut().enumerate() {
                    *v += slope[i] * du.values()[i];
                }
                Some(h1)
            }
            _ => None,
        };

        let (step, next_u, next_ev, clamped) = line_search(&pb, &u, &du, &ev, &mut trace)?;
        trace.clamp_fraction = trace.clamp_fraction.max(clamped as f64 / n as f64);
        for i in 0..n {
            q.qx[i] += step * (q_full.qx[i] - q.qx[i]);
            q.qy[i] += step * (q_full.qy[i] - q.qy[i]);
        }
        if let (Some(p), Some(pf)) = (p.as_mut(), p_full.as_ref()) {
            for (a, b) in p.values_mut().iter_mut().zip(pf.values()) {
                *a += step * (b - *a);
            }
        }
        u = next_u;
        ev = next_ev;
        trace.iterations += 1;
        trace.residuals.push(ev.norm);
        trace.energies.extend(ev.energy);
    }

    trace.clamp_flag = trace.clamp_fraction > 0.01;
    Ok(StateSolution {
        q: ev.flux,
        p: impulse_dual(&u),
        u,
        trace,
    })
}

/// Factorizes the configured Jacobian; if it has lost regularity, retries
/// with the plain active-set linearization.
fn factor_with_fallback(
    pb: &Problem<'_>,
    u: &ImageGrid,
    ev: &Eval,
    q: &VectorField,
    p: Option<&ImageGrid>,
) -> Result<(BandLu, Vec<Mat2>, Vec<f64>)> {
    let lin = pb.cfg.linearization;
    let (a, d, s) = pb.jacobian(u, ev, q, p, lin)?;
    match a.factor() {
        Ok(lu) => Ok((lu, d, s)),
        Err(Error::SingularPivot { .. }) if lin == Linearization::Modified => {
            let (a, d, s) = pb.jacobian(u, ev, q, p, Linearization::Plain)?;
            Ok((a.factor()?, d, s))
        }
        Err(e) => Err(e),
    }
}

fn line_search(
    pb: &Problem<'_>,
    u: &ImageGrid,
    du: &ImageGrid,
    ev: &Eval,
    trace: &mut SsnTrace,
) -> Result<(f64, ImageGrid, Eval, usize)> {
    let trial = |t: f64| -> Result<(ImageGrid, Eval, usize)> {
        let mut cand = u.clone();
        cand.axpy(t, du)?;
        let hits = pb.clamp(&mut cand);
        let e = pb.eval(&cand)?;
        Ok((cand, e, hits))
    };
    let max_backtracks = match pb.cfg.damping {
        Damping::None => {
            let (c, e, hits) = trial(1.0)?;
            return Ok((1.0, c, e, hits));
        }
        Damping::Halving { max_backtracks } => max_backtracks,
    };
    let mut t = 1.0;
    for k in 0..=max_backtracks {
        let (c, e, hits) = trial(t)?;
        // the energy is the merit function where it exists, else the residual
        let accept = match (e.energy, ev.energy) {
            (Some(new), Some(old)) => new <= old + 1e-12 * old.abs().max(1e-300),
            _ => e.norm < ev.norm,
        };
        if accept {
            trace.backtracks += k;
            return Ok((t, c, e, hits));
        }
        t *= 0.5;
    }
    trace.backtracks += max_backtracks;
    trace.forced_steps += 1;
    let (c, e, hits) = trial(1.0)?;
    Ok((1.0, c, e, hits))
}
