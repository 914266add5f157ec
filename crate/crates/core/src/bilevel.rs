//! Learning the fidelity weights: reduced cost, finite-difference and adjoint
//! gradients, and a projected BFGS iteration over `λ ≥ 0`.

use crate::adjoint::{adjoint_data, kkt_residuals, AdjointData, KktResiduals};
use crate::error::{Error, Result};
use crate::grid::{check_dims, inner, ImageGrid};
use crate::ssn::{solve_state, SolverConfig, StateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    #[default]
    ForwardFd,
    CentralFd,
    Adjoint,
}

impl GradMode {
    pub fn name(&self) -> &'static str {
        match self {
            GradMode::ForwardFd => "forward_fd",
            GradMode::CentralFd => "central_fd",
            GradMode::Adjoint => "adjoint",
        }
    }
}

/// Step-length rule of the outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Always take `α`.
    Fixed,
    /// Halve `α` until the cost does not increase.
    Backtracking { max_halvings: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelConfig {
    pub beta: f64,
    pub alpha: f64,
    pub grad_mode: GradMode,
    pub step_rule: StepRule,
    /// Stop when `‖λ - max(0, λ - ∇f)‖ ≤ tol_grad (1 + |f|)`.
    pub tol_grad: f64,
    /// Stop when the cost decreased by less than `tol_cost |f|` over the last
    /// three iterations.
    pub tol_cost: f64,
    pub max_iter: usize,
    /// Initial weights; `None` uses [`default_lambda0`].
    pub lambda0: Option<Vec<f64>>,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            beta: 1e-10,
            alpha: 0.5,
            grad_mode: GradMode::ForwardFd,
            step_rule: StepRule::Fixed,
            tol_grad: 1e-10,
            tol_cost: 1e-9,
            max_iter: 50,
            lambda0: None,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.tol_grad >= 0.0 && self.tol_cost >= 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be nonnegative".into(),
            ));
        }
        if let Some(l0) = &self.lambda0 {
            if l0.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "lambda0 must be nonnegative, got {l0:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Value of the reduced cost at one weight vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostValue {
    pub value: f64,
    /// Newton iterations spent by the lower-level solves.
    pub ssn_iterations: usize,
}

/// A reduced cost `λ ↦ F(λ)` whose evaluation hides a lower-level solve.
pub trait Objective {
    fn dim(&self) -> usize;

    /// `F(λ)`. With `commit = true` the computed states become the warm start
    /// (and the base point of [`Objective::adjoint`]) for later evaluations.
    fn value(&mut self, lambda: &[f64], commit: bool) -> Result<CostValue>;

    /// Adjoint data at the last committed point, one entry per training pair.
    fn adjoint(&mut self, _lambda: &[f64]) -> Result<Vec<AdjointData>> {
        Err(Error::InvalidParameter("objective has no adjoint".into()))
    }
}

/// A noisy image and its ground truth.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub noisy: ImageGrid,
    pub clean: ImageGrid,
}

/// `(1/N) Σ_k ½‖u(λ; f_k) - u_k‖² + β Σ λᵢ²` over a set of training pairs.
#[derive(Debug, Clone)]
pub struct LearningProblem {
    pub model: StateModel,
    pub solver: SolverConfig,
    pub beta: f64,
    pairs: Vec<TrainingPair>,
    warm: Vec<Option<ImageGrid>>,
}

impl LearningProblem {
    pub fn new(
        model: StateModel,
        pairs: Vec<TrainingPair>,
        solver: SolverConfig,
        beta: f64,
    ) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidParameter("training set is empty".into()))?;
        let dims = first.noisy.dims();
        for p in &pairs {
            check_dims(dims, p.noisy.dims())?;
            check_dims(dims, p.clean.dims())?;
        }
        solver.validate()?;
        let warm = vec![None; pairs.len()];
        Ok(Self {
            model,
            solver,
            beta,
            pairs,
            warm,
        })
    }

    pub fn single(
        model: StateModel,
        noisy: ImageGrid,
        clean: ImageGrid,
        solver: SolverConfig,
        beta: f64,
    ) -> Result<Self> {
        Self::new(model, vec![TrainingPair { noisy, clean }], solver, beta)
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    /// Committed states, if any.
    pub fn states(&self) -> Vec<Option<&ImageGrid>> {
        self.warm.iter().map(|w| w.as_ref()).collect()
    }

    pub fn forget_states(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    /// Reduced cost and lower-level solutions at `λ`, without touching the
    /// warm-start state.
    pub fn reduced_cost(&self, lambda: &[f64]) -> Result<(f64, Vec<ImageGrid>)> {
        let (value, _, states) = self.solve_all(lambda)?;
        Ok((value, states))
    }

    fn solve_all(&self, lambda: &[f64]) -> Result<(f64, usize, Vec<ImageGrid>)> {
        self.check_lambda(lambda)?;
        let mut states = Vec::with_capacity(self.pairs.len());
        let mut tracking = 0.0;
        let mut its = 0;
        for (pair, warm) in self.pairs.iter().zip(&self.warm) {
            let sol = solve_state(self.model, &pair.noisy, lambda, &self.solver, warm.as_ref())?;
            let d = sol.u.sub(&pair.clean)?;
            tracking += 0.5 * inner(&d, &d)?;
            its += sol.trace.iterations;
            states.push(sol.u);
        }
        let value = tracking / self.pairs.len() as f64 + tikhonov(self.beta, lambda);
        Ok((value, its, states))
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: (self.model.dim(), 1),
                found: (lambda.len(), 1),
            });
        }
        if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weights must be nonnegative, got {l}"
            )));
        }
        Ok(())
    }
}

fn tikhonov(beta: f64, lambda: &[f64]) -> f64 {
    beta * lambda.iter().map(|l| l * l).sum::<f64>()
}

impl Objective for LearningProblem {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&mut self, lambda: &[f64], commit: bool) -> Result<CostValue> {
        let (value, ssn_iterations, states) = self.solve_all(lambda)?;
        if commit {
            self.warm = states.into_iter().map(Some).collect();
        }
        Ok(CostValue {
            value,
            ssn_iterations,
        })
    }

    fn adjoint(&mut self, lambda: &[f64]) -> Result<Vec<AdjointData>> {
        self.check_lambda(lambda)?;
        let mut out = Vec::with_capacity(self.pairs.len());
        for (k, pair) in self.pairs.iter().enumerate() {
            let u = match &self.warm[k] {
                Some(u) => u.clone(),
                None => solve_state(self.model, &pair.noisy, lambda, &self.solver, None)?.u,
            };
            out.push(adjoint_data(
                self.model,
                &pair.noisy,
                &pair.clean,
                &u,
                lambda,
                self.beta,
                &self.solver,
            )?);
            self.warm[k] = Some(u);
        }
        Ok(out)
    }
}

/// Gradient of the averaged cost from per-pair adjoint data.
pub fn average_gradient(data: &[AdjointData]) -> Vec<f64> {
    let d = data.first().map_or(0, |a| a.grad_f.len());
    (0..d)
        .map(|i| data.iter().map(|a| a.grad_f[i]).sum::<f64>() / data.len() as f64)
        .collect()
}

/// Finite-difference stencil for [`fd_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    /// `δᵢ = 1e-3 max(1, λᵢ)`
    Forward,
    /// `δᵢ = 1e-4 max(1, λᵢ)`; one-sided where `λᵢ < δᵢ`.
    Central,
}

/// Finite-difference gradient around the committed point `λ` with value `f0`.
/// Perturbed solves warm-start from the committed states and do not replace
/// them. Returns the gradient and the Newton iterations spent.
pub fn fd_gradient<O: Objective + ?Sized>(
    obj: &mut O,
    lambda: &[f64],
    f0: f64,
    scheme: FdScheme,
) -> Result<(Vec<f64>, usize)> {
    let mut g = vec![0.0; lambda.len()];
    let mut its = 0;
    let mut probe = lambda.to_vec();
    for i in 0..lambda.len() {
        match scheme {
            FdScheme::Forward => {
                let d = 1e-3 * lambda[i].max(1.0);
                probe[i] = lambda[i] + d;
                let fp = obj.value(&probe, false)?;
                its += fp.ssn_iterations;
                g[i] = (fp.value - f0) / d;
            }
            FdScheme::Central => {
                let d = 1e-4 * lambda[i].max(1.0);
                probe[i] = lambda[i] + d;
                let fp = obj.value(&probe, false)?;
                its += fp.ssn_iterations;
                if lambda[i] >= d {
                    probe[i] = lambda[i] - d;
                    let fm = obj.value(&probe, false)?;
                    its += fm.ssn_iterations;
                    g[i] = (fp.value - fm.value) / (2.0 * d);
                } else {
                    g[i] = (fp.value - f0) / d;
                }
            }
        }
        probe[i] = lambda[i];
    }
    Ok((g, its))
}

/// `‖λ - max(0, λ - g)‖`
pub fn projected_gradient_norm(lambda: &[f64], g: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(g)
        .map(|(l, gi)| {
            let d = l - (l - gi).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsIterate {
    pub iteration: usize,
    pub lambda: Vec<f64>,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub projected_gradient: f64,
    /// Newton iterations of the lower-level solves at `lambda`.
    pub ssn_iterations: usize,
    /// Newton iterations spent on finite-difference probes.
    pub gradient_ssn_iterations: usize,
    /// Step scale taken to reach this iterate (`α` unless backtracking).
    pub step: f64,
    pub update_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ProjectedGradient,
    CostStagnation,
    MaxIterations,
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::ProjectedGradient => "projected_gradient",
            StopReason::CostStagnation => "cost_stagnation",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsTrace {
    pub iterates: Vec<BfgsIterate>,
    pub converged: bool,
    pub stop: StopReason,
    pub kkt: Option<KktResiduals>,
}

impl BfgsTrace {
    pub fn last(&self) -> &BfgsIterate {
        self.iterates
            .last()
            .expect("trace holds the initial iterate")
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub lambda: Vec<f64>,
    pub cost: f64,
    pub trace: BfgsTrace,
    /// Adjoint data at `lambda`, one entry per training pair; empty when the
    /// objective has no adjoint.
    pub adjoint: Vec<AdjointData>,
    /// `μ`, the averaged adjoint gradient at `lambda` (empty without adjoint).
    pub multipliers: Vec<f64>,
}

/// Dense inverse-Hessian approximation.
#[derive(Debug, Clone)]
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
}

impl InverseHessian {
    fn scaled_identity(n: usize, s: f64) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = s;
        }
        Self { n, h }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.h[i * self.n + j] * v[j]).sum())
            .collect()
    }

    /// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`, skipped when the curvature
    /// `sᵀy` is not safely positive. Returns whether the update was applied.
    fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
        let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(sy > 1e-10 * ns * ny) {
            return false;
        }
        let n = self.n;
        let rho = 1.0 / sy;
        let hy = self.apply(y);
        let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
        // expanded form, using the symmetry of H
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] +=
                    -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
        true
    }
}

fn gradient<O: Objective + ?Sized>(
    obj: &mut O,
    lambda: &[f64],
    f0: f64,
    mode: GradMode,
) -> Result<(Vec<f64>, usize)> {
    match mode {
        GradMode::ForwardFd => fd_gradient(obj, lambda, f0, FdScheme::Forward),
        GradMode::CentralFd => fd_gradient(obj, lambda, f0, FdScheme::Central),
        GradMode::Adjoint => Ok((average_gradient(&obj.adjoint(lambda)?), 0)),
    }
}

/// Projected BFGS: `λ ← max(0, λ - α H ∇F(λ))` with a fixed step `α`.
pub fn projected_bfgs<O: Objective + ?Sized>(
    obj: &mut O,
    lambda0: &[f64],
    cfg: &BilevelConfig,
) -> Result<BfgsOutcome> {
    projected_bfgs_observed(obj, lambda0, cfg, &mut |_| {})
}

/// [`projected_bfgs`], handing every iterate to `observe` as soon as it is
/// complete.
pub fn projected_bfgs_observed<O: Objective + ?Sized>(
    obj: &mut O,
    lambda0: &[f64],
    cfg: &BilevelConfig,
    observe: &mut dyn FnMut(&BfgsIterate),
) -> Result<BfgsOutcome> {
    cfg.validate()?;
    if lambda0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: (obj.dim(), 1),
            found: (lambda0.len(), 1),
        });
    }
    let mut lambda: Vec<f64> = lambda0.iter().map(|l| l.max(0.0)).collect();
    let mut f = obj.value(&lambda, true)?;
    let (mut g, mut g_its) = gradient(obj, &lambda, f.value, cfg.grad_mode)?;
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hess =
        InverseHessian::scaled_identity(lambda.len(), if gnorm > 0.0 { 1.0 / gnorm } else { 1.0 });

    let mut iterates = vec![BfgsIterate {
        iteration: 0,
        lambda: lambda.clone(),
        cost: f.value,
        projected_gradient: projected_gradient_norm(&lambda, &g),
        gradient: g.clone(),
        ssn_iterations: f.ssn_iterations,
        gradient_ssn_iterations: g_its,
        step: 0.0,
        update_skipped: false,
    }];
    observe(&iterates[0]);
    let mut best = 0;

    let stop = loop {
        let last = iterates.last().expect("nonempty");
        if last.projected_gradient <= cfg.tol_grad * (1.0 + last.cost.abs()) {
            break StopReason::ProjectedGradient;
        }
        let k = iterates.len() - 1;
        if k >= 3 {
            let old = iterates[k - 3].cost;
            if old - last.cost < cfg.tol_cost * old.abs() {
                break StopReason::CostStagnation;
            }
        }
        if k >= cfg.max_iter {
            break StopReason::MaxIterations;
        }

        let dir = hess.apply(&g);
        let step_to = |alpha: f64| -> Vec<f64> {
            lambda
                .iter()
                .zip(&dir)
                .map(|(l, d)| (l - alpha * d).max(0.0))
                .collect()
        };
        let mut alpha = cfg.alpha;
        let (next, f_next) = match cfg.step_rule {
            StepRule::Fixed => {
                let next = step_to(alpha);
                let fv = obj.value(&next, true)?;
                (next, fv)
            }
            StepRule::Backtracking { max_halvings } => {
                let mut h = 0;
                loop {
                    let cand = step_to(alpha);
                    let fc = obj.value(&cand, false)?;
                    if fc.value <= f.value || h >= max_halvings {
                        // re-solving from the same warm start reproduces fc
                        let fv = obj.value(&cand, true)?;
                        break (cand, fv);
                    }
                    alpha *= 0.5;
                    h += 1;
                }
            }
        };
        let (g_next, its) = gradient(obj, &next, f_next.value, cfg.grad_mode)?;
        g_its = its;
        let s: Vec<f64> = next.iter().zip(&lambda).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let applied = hess.update(&s, &y);
        lambda = next;
        g = g_next;
        f = f_next;
        iterates.push(BfgsIterate {
            iteration: k + 1,
            lambda: lambda.clone(),
            cost: f.value,
            projected_gradient: projected_gradient_norm(&lambda, &g),
            gradient: g.clone(),
            ssn_iterations: f.ssn_iterations,
            gradient_ssn_iterations: g_its,
            step: alpha,
            update_skipped: !applied,
        });
        observe(iterates.last().expect("nonempty"));
        if f.value < iterates[best].cost {
            best = iterates.len() - 1;
        }
    };

    let converged = stop != StopReason::MaxIterations;
    if !converged && best != iterates.len() - 1 {
        lambda = iterates[best].lambda.clone();
        f = obj.value(&lambda, true)?;
    }
    let adjoint = obj.adjoint(&lambda).unwrap_or_default();
    let multipliers = if adjoint.is_empty() {
        Vec::new()
    } else {
        average_gradient(&adjoint)
    };
    let kkt = (!multipliers.is_empty()).then(|| kkt_residuals(&lambda, &multipliers));
    Ok(BfgsOutcome {
        lambda,
        cost: f.value,
        trace: BfgsTrace {
            iterates,
            converged,
            stop,
            kkt,
        },
        adjoint,
        multipliers,
    })
}

/// Projected BFGS on the averaged cost of a training set.
pub fn train_on_set(
    model: StateModel,
    pairs: Vec<TrainingPair>,
    solver: &SolverConfig,
    cfg: &BilevelConfig,
) -> Result<BfgsOutcome> {
    train_on_set_observed(model, pairs, solver, cfg, &mut |_| {})
}

/// [`train_on_set`] with an iterate observer, see [`projected_bfgs_observed`].
pub fn train_on_set_observed(
    model: StateModel,
    pairs: Vec<TrainingPair>,
    solver: &SolverConfig,
    cfg: &BilevelConfig,
    observe: &mut dyn FnMut(&BfgsIterate),
) -> Result<BfgsOutcome> {
    let mut pb = LearningProblem::new(model, pairs, *solver, cfg.beta)?;
    let lambda0 = match &cfg.lambda0 {
        Some(l) => l.clone(),
        None => default_lambda0(model, &pb.pairs()[0].noisy),
    };
    projected_bfgs_observed(&mut pb, &lambda0, cfg, observe)
}

/// Noise variance of `f` from the median response to the 3×3 mask
/// `[1 -2 1; -2 4 -2; 1 -2 1]`, which annihilates affine content; the median
/// ignores the few responses on edges.
pub fn estimate_noise_variance(f: &ImageGrid) -> f64 {
    let (nx, ny) = f.dims();
    let mask = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut resp = Vec::with_capacity((nx - 2) * (ny - 2));
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            let mut c: f64 = 0.0;
            for (dy, row) in mask.iter().enumerate() {
                for (dx, m) in row.iter().enumerate() {
                    c += m * f.get(ix + dx - 1, iy + dy - 1);
                }
            }
            resp.push(c.abs());
        }
    }
    resp.sort_by(f64::total_cmp);
    // ‖mask‖₂ = 6, and 0.6745 is the median of |N(0, 1)|
    let sigma = resp[resp.len() / 2] / (0.674_489_750_196_081_7 * 6.0);
    sigma * sigma
}

/// Initial weights: `1/σ̂²` clipped to `[1, 1e4]` for the Gaussian weight,
/// a tenth of that for the Poisson weight, and `10` for the impulse weight.
pub fn default_lambda0(model: StateModel, f: &ImageGrid) -> Vec<f64> {
    let var = estimate_noise_variance(f);
    let base = if var > 0.0 {
        (1.0 / var).clamp(1.0, 1e4)
    } else {
        1e4
    };
    match model {
        StateModel::Gaussian => vec![base],
        StateModel::GaussPoisson => vec![base, 0.1 * base],
        StateModel::Impulse { .. } => vec![10.0],
    }
}
