//! Sensitivities of the lower-level solution with respect to the weights.
//!
//! Everything here linearizes the unmultiplied optimality condition
//!
//! ```text
//! -εΔu - div h_γ(∇u) + Σ λᵢ φᵢ'(u) = 0
//! ```
//!
//! with the C¹ Huber variant. A state computed with the max form is linearized
//! with the C¹ variant at the same `γ` and unit cap. The outer tracking cost is
//! `½‖u - u_o‖²`, so its derivative is `u - u_o`.

use crate::band::BandMatrix;
use crate::error::{Error, Result};
use crate::fidelity::{d2phi, dphi, FidelitySpec};
use crate::grid::{apply_boundary, check_dims, grad, inner, ImageGrid};
use crate::regularizer::{newton_diffusion_matrix, Mat2};
use crate::ssn::{apply_operator, assemble_operator, OperatorParts, SolverConfig, StateModel};

/// Adjoint state, multipliers and reduced gradient at one weight vector.
#[derive(Debug, Clone)]
pub struct AdjointData {
    pub p: ImageGrid,
    /// `μᵢ = 2βλᵢ + ∫ φᵢ'(ū) p`
    pub mu: Vec<f64>,
    pub grad_f: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max(0, -μᵢ)` over components
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

/// The operator `L = ε GᵀG + Gᵀ h_γ'(∇ū) G + diag(Σ λᵢ φᵢ''(ū))` at a state.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    like: ImageGrid,
    cfg: SolverConfig,
    diffusion: Vec<Mat2>,
    reaction: Vec<f64>,
    /// `φᵢ'(ū)`, masked on the boundary ring under Dirichlet closure
    slopes: Vec<ImageGrid>,
}

impl LinearizedOperator {
    pub fn new(
        model: StateModel,
        f: &ImageGrid,
        u_bar: &ImageGrid,
        lambda: &[f64],
        cfg: &SolverConfig,
    ) -> Result<Self> {
        check_dims(f.dims(), u_bar.dims())?;
        if lambda.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: (model.dim(), 1),
                found: (lambda.len(), 1),
            });
        }
        if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "weights must be nonnegative, got {l}"
            )));
        }
        let huber = cfg.huber.as_c1();
        huber.validate()?;
        let g = grad(u_bar, cfg.boundary);
        let diffusion = (0..u_bar.len())
            .map(|i| newton_diffusion_matrix(g.at(i), None, &huber))
            .collect();
        let fids: Vec<FidelitySpec> = model.fidelities(f, cfg)?;
        let mut reaction = vec![0.0; u_bar.len()];
        let mut slopes = Vec::with_capacity(fids.len());
        for (s, &l) in fids.iter().zip(lambda) {
            let d2 = d2phi(u_bar, s)?;
            for (r, v) in reaction.iter_mut().zip(d2.values()) {
                *r += l * v;
            }
            let mut d1 = dphi(u_bar, s)?;
            apply_boundary(&mut d1, cfg.boundary);
            slopes.push(d1);
        }
        Ok(Self {
            like: u_bar.zeros_like(),
            cfg: SolverConfig { huber, ..*cfg },
            diffusion,
            reaction,
            slopes,
        })
    }

    fn parts(&self) -> OperatorParts<'_> {
        OperatorParts {
            epsilon: self.cfg.epsilon,
            diffusion: &self.diffusion,
            reaction: &self.reaction,
            row_scale: None,
            boundary: self.cfg.boundary,
        }
    }

    pub fn matrix(&self) -> BandMatrix {
        assemble_operator(&self.like, &self.parts())
    }

    pub fn apply(&self, v: &ImageGrid) -> Result<ImageGrid> {
        check_dims(self.like.dims(), v.dims())?;
        apply_operator(v, &self.parts())
    }

    /// Matrix-free `Lᵀ v`, using the transposed per-cell diffusion.
    pub fn apply_transpose(&self, v: &ImageGrid) -> Result<ImageGrid> {
        check_dims(self.like.dims(), v.dims())?;
        let dt: Vec<Mat2> = self
            .diffusion
            .iter()
            .map(|d| [[d[0][0], d[1][0]], [d[0][1], d[1][1]]])
            .collect();
        apply_operator(
            v,
            &OperatorParts {
                diffusion: &dt,
                ..self.parts()
            },
        )
    }

    /// `φᵢ'(ū)` for each fidelity.
    pub fn slopes(&self) -> &[ImageGrid] {
        &self.slopes
    }

    fn solve_with(&self, matrix: BandMatrix, mut rhs: ImageGrid) -> Result<ImageGrid> {
        apply_boundary(&mut rhs, self.cfg.boundary);
        let x = matrix.factor()?.solve(rhs.values());
        Ok(self.like.like(x))
    }

    /// `z` with `L z = -Σ ξᵢ φᵢ'(ū)`.
    pub fn solve_linearized(&self, xi: &[f64]) -> Result<ImageGrid> {
        if xi.len() != self.slopes.len() {
            return Err(Error::DimensionMismatch {
                expected: (self.slopes.len(), 1),
                found: (xi.len(), 1),
            });
        }
        let mut rhs = self.like.clone();
        for (s, &x) in self.slopes.iter().zip(xi) {
            rhs.axpy(-x, s)?;
        }
        self.solve_with(self.matrix(), rhs)
    }

    /// `p` with `Lᵀ p = -rhs`.
    pub fn solve_adjoint(&self, rhs: &ImageGrid) -> Result<ImageGrid> {
        check_dims(self.like.dims(), rhs.dims())?;
        self.solve_with(self.matrix().transpose(), rhs.scale(-1.0))
    }
}

pub fn solve_linearized(
    model: StateModel,
    f: &ImageGrid,
    u_bar: &ImageGrid,
    lambda: &[f64],
    xi: &[f64],
    cfg: &SolverConfig,
) -> Result<ImageGrid> {
    LinearizedOperator::new(model, f, u_bar, lambda, cfg)?.solve_linearized(xi)
}

/// Adjoint state for the right-hand side `rhs = g'(ū)`.
pub fn solve_adjoint(
    model: StateModel,
    f: &ImageGrid,
    u_bar: &ImageGrid,
    lambda: &[f64],
    rhs: &ImageGrid,
    cfg: &SolverConfig,
) -> Result<ImageGrid> {
    LinearizedOperator::new(model, f, u_bar, lambda, cfg)?.solve_adjoint(rhs)
}

/// `2βλᵢ + ∫ φᵢ'(ū) p`.
pub fn reduced_gradient(
    lambda: &[f64],
    slopes: &[ImageGrid],
    p: &ImageGrid,
    beta: f64,
) -> Result<Vec<f64>> {
    lambda
        .iter()
        .zip(slopes)
        .map(|(&l, s)| Ok(2.0 * beta * l + inner(s, p)?))
        .collect()
}

pub fn kkt_residuals(lambda: &[f64], mu: &[f64]) -> KktResiduals {
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, f64::max);
    KktResiduals {
        stationarity: fold(&mut mu.iter().map(|m| (-m).max(0.0))),
        complementarity: fold(&mut mu.iter().zip(lambda).map(|(m, l)| (m * l).abs())),
        feasibility: fold(&mut lambda.iter().map(|l| (-l).max(0.0))),
    }
}

/// Adjoint state and reduced gradient of `½‖u - u_o‖² + βΣλᵢ²` at the state `ū`.
pub fn adjoint_data(
    model: StateModel,
    f: &ImageGrid,
    u_o: &ImageGrid,
    u_bar: &ImageGrid,
    lambda: &[f64],
    beta: f64,
    cfg: &SolverConfig,
) -> Result<AdjointData> {
    let op = LinearizedOperator::new(model, f, u_bar, lambda, cfg)?;
    let p = op.solve_adjoint(&u_bar.sub(u_o)?)?;
    let grad_f = reduced_gradient(lambda, op.slopes(), &p, beta)?;
    Ok(AdjointData {
        p,
        mu: grad_f.clone(),
        grad_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dot, norm_l2};
    use crate::regularizer::HuberParams;
    use crate::ssn::solve_state;

    fn lcg(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
            })
            .collect()
    }

    fn setup(n: usize) -> (ImageGrid, ImageGrid, SolverConfig) {
        let clean = ImageGrid::from_fn(n, n, |x, y| {
            if (x - 0.5).abs() < 0.25 && (y - 0.45).abs() < 0.2 {
                0.8
            } else {
                0.3
            }
        })
        .unwrap();
        let noisy = clean
            .zip_map(&clean.like(lcg(n * n, 7, -0.1, 0.1)), |a, b| a + b)
            .unwrap();
        let cfg = SolverConfig {
            huber: HuberParams::c1_form(50.0, 1.0),
            ..Default::default()
        };
        (clean, noisy, cfg)
    }

    #[test]
    fn zero_direction_gives_zero_sensitivity() {
        let (_, f, cfg) = setup(10);
        let u = solve_state(StateModel::Gaussian, &f, &[40.0], &cfg, None)
            .unwrap()
            .u;
        let z = solve_linearized(StateModel::Gaussian, &f, &u, &[40.0], &[0.0], &cfg).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let p =
            solve_adjoint(StateModel::Gaussian, &f, &u, &[40.0], &u.zeros_like(), &cfg).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_is_consistent_matrix_free() {
        let (_, f, cfg) = setup(12);
        let u = f.map(|v| v * 0.9);
        let op =
            LinearizedOperator::new(StateModel::GaussPoisson, &f, &u, &[30.0, 5.0], &cfg).unwrap();
        for seed in 0..5 {
            let z = f.like(lcg(144, seed, -1.0, 1.0));
            let w = f.like(lcg(144, seed + 100, -1.0, 1.0));
            let lhs = inner(&op.apply(&z).unwrap(), &w).unwrap();
            let rhs = inner(&z, &op.apply_transpose(&w).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn operator_is_positive_definite() {
        let (_, f, cfg) = setup(12);
        let u = solve_state(StateModel::Gaussian, &f, &[60.0], &cfg, None)
            .unwrap()
            .u;
        let a = LinearizedOperator::new(StateModel::Gaussian, &f, &u, &[60.0], &cfg)
            .unwrap()
            .matrix();
        for seed in 0..100 {
            let v = lcg(144, seed, -1.0, 1.0);
            assert!(dot(&v, &a.mul_vec(&v)) > 0.0);
        }
    }

    #[test]
    fn duality_between_linearized_and_adjoint() {
        let (clean, f, cfg) = setup(16);
        let lambda = [40.0, 3.0];
        let model = StateModel::GaussPoisson;
        let u = solve_state(model, &f, &lambda, &cfg, None).unwrap().u;
        let op = LinearizedOperator::new(model, &f, &u, &lambda, &cfg).unwrap();
        let p = op.solve_adjoint(&u.sub(&clean).unwrap()).unwrap();
        for xi in [[1.0, 0.0], [0.3, -2.0]] {
            let z = op.solve_linearized(&xi).unwrap();
            let lhs = inner(&u.sub(&clean).unwrap(), &z).unwrap();
            let rhs: f64 = xi
                .iter()
                .zip(op.slopes())
                .map(|(x, s)| x * inner(s, &p).unwrap())
                .sum();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-6),
                "{lhs} {rhs}"
            );
        }
    }

    #[test]
    fn linearized_matches_directional_difference() {
        let (_, f, cfg) = setup(16);
        let cfg = SolverConfig {
            tol_ssn: 1e-12,
            ..cfg
        };
        let lambda = 50.0;
        let t = 1e-5;
        let u0 = solve_state(StateModel::Gaussian, &f, &[lambda], &cfg, None)
            .unwrap()
            .u;
        let u1 = solve_state(StateModel::Gaussian, &f, &[lambda + t], &cfg, Some(&u0))
            .unwrap()
            .u;
        let fd = u1.sub(&u0).unwrap().scale(1.0 / t);
        let z = solve_linearized(StateModel::Gaussian, &f, &u0, &[lambda], &[1.0], &cfg).unwrap();
        let err = norm_l2(&z.sub(&fd).unwrap()) / norm_l2(&z);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn kkt_residuals_of_simple_points() {
        let r = kkt_residuals(&[0.0, 2.0], &[0.5, -1e-3]);
        assert_eq!(r.stationarity, 1e-3);
        assert_eq!(r.complementarity, 2e-3);
        assert_eq!(r.feasibility, 0.0);
        let r = kkt_residuals(&[-1.0], &[0.0]);
        assert_eq!(r.feasibility, 1.0);
    }

    #[test]
    fn gradient_without_adjoint_is_tikhonov_term() {
        let (_, f, _) = setup(6);
        let g = reduced_gradient(&[3.0], std::slice::from_ref(&f), &f.zeros_like(), 0.25).unwrap();
        assert_eq!(g, vec![1.5]);
    }
}
