//! Data-fidelity terms `φ(u, f)` for the supported noise statistics.

use crate::error::{Error, Result};
use crate::grid::{check_dims, ImageGrid};

/// Default positivity floor for the Poisson term.
pub const DEFAULT_U_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FidelityKind {
    /// `½‖u - f‖²`
    Gaussian,
    /// Kullback–Leibler type `∫ u - f log u`
    Poisson,
    /// Huber-smoothed `‖u - f‖_{L¹}`
    ImpulseHuber,
}

impl FidelityKind {
    pub fn name(&self) -> &'static str {
        match self {
            FidelityKind::Gaussian => "gaussian",
            FidelityKind::Poisson => "poisson",
            FidelityKind::ImpulseHuber => "impulse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelitySpec {
    pub kind: FidelityKind,
    pub data: ImageGrid,
    pub gamma_l1: f64,
    pub u_floor: f64,
}

impl FidelitySpec {
    pub fn gaussian(data: ImageGrid) -> Self {
        Self {
            kind: FidelityKind::Gaussian,
            data,
            gamma_l1: 1.0,
            u_floor: DEFAULT_U_FLOOR,
        }
    }

    pub fn poisson(data: ImageGrid) -> Result<Self> {
        let s = Self {
            kind: FidelityKind::Poisson,
            data,
            gamma_l1: 1.0,
            u_floor: DEFAULT_U_FLOOR,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn impulse(data: ImageGrid, gamma_l1: f64) -> Result<Self> {
        let s = Self {
            kind: FidelityKind::ImpulseHuber,
            data,
            gamma_l1,
            u_floor: DEFAULT_U_FLOOR,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_l1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma_l1 must be positive, got {}",
                self.gamma_l1
            )));
        }
        if !(self.u_floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "u_floor must be positive, got {}",
                self.u_floor
            )));
        }
        if self.kind == FidelityKind::Poisson && self.data.min() < 0.0 {
            return Err(Error::InvalidParameter(
                "Poisson fidelity requires nonnegative data".into(),
            ));
        }
        Ok(())
    }

    fn clamp_poisson(&self, u: f64) -> Result<f64> {
        if u < 0.0 {
            return Err(Error::Domain(format!(
                "Poisson fidelity evaluated at negative intensity {u}"
            )));
        }
        Ok(u.max(self.u_floor))
    }

    /// Pointwise `φ'(u)` at one pixel with datum `f`.
    pub fn dphi_at(&self, u: f64, f: f64) -> Result<f64> {
        Ok(match self.kind {
            FidelityKind::Gaussian => u - f,
            FidelityKind::Poisson => 1.0 - f / self.clamp_poisson(u)?,
            FidelityKind::ImpulseHuber => {
                let g = self.gamma_l1;
                let r = u - f;
                g * r / (g * r.abs()).max(1.0)
            }
        })
    }

    /// Pointwise `φ''(u)`. For the impulse term, `dual = Some(p)` selects the
    /// modified linearization that replaces `sign(u - f)` on the active set by
    /// `p / max(1, |p|)`.
    pub fn d2phi_at(&self, u: f64, f: f64, dual: Option<f64>) -> Result<f64> {
        Ok(match self.kind {
            FidelityKind::Gaussian => 1.0,
            FidelityKind::Poisson => {
                let u = self.clamp_poisson(u)?;
                f / (u * u)
            }
            FidelityKind::ImpulseHuber => {
                let g = self.gamma_l1;
                let r = u - f;
                let m = (g * r.abs()).max(1.0);
                if g * r.abs() >= 1.0 {
                    match dual {
                        Some(p) => g / m - g * g / (m * m) * r * (p / p.abs().max(1.0)),
                        // exact derivative of the saturated branch
                        None => 0.0,
                    }
                } else {
                    g / m
                }
            }
        })
    }

    fn phi_at(&self, u: f64, f: f64) -> Result<f64> {
        Ok(match self.kind {
            FidelityKind::Gaussian => 0.5 * (u - f) * (u - f),
            FidelityKind::Poisson => {
                if u <= 0.0 {
                    return Err(Error::Domain(format!(
                        "Poisson fidelity evaluated at nonpositive intensity {u}"
                    )));
                }
                if f == 0.0 {
                    u
                } else {
                    u - f * u.ln()
                }
            }
            FidelityKind::ImpulseHuber => {
                let g = self.gamma_l1;
                let r = (u - f).abs();
                if r >= 1.0 / g {
                    r - 0.5 / g
                } else {
                    0.5 * g * r * r
                }
            }
        })
    }
}

/// `∫ φ(u, f)` with quadrature weight `h²`.
pub fn phi(u: &ImageGrid, s: &FidelitySpec) -> Result<f64> {
    check_dims(s.data.dims(), u.dims())?;
    let mut acc = 0.0;
    for (&ui, &fi) in u.values().iter().zip(s.data.values()) {
        acc += s.phi_at(ui, fi)?;
    }
    Ok(u.h() * u.h() * acc)
}

pub fn dphi(u: &ImageGrid, s: &FidelitySpec) -> Result<ImageGrid> {
    check_dims(s.data.dims(), u.dims())?;
    let vals = u
        .values()
        .iter()
        .zip(s.data.values())
        .map(|(&ui, &fi)| s.dphi_at(ui, fi))
        .collect::<Result<Vec<_>>>()?;
    Ok(u.like(vals))
}

/// Pointwise multiplier field `φ''(u)` (the a.e. derivative of [`dphi`]).
pub fn d2phi(u: &ImageGrid, s: &FidelitySpec) -> Result<ImageGrid> {
    d2phi_with_dual(u, s, None)
}

/// Like [`d2phi`], with the impulse term linearized around the dual field
/// `p` (see [`FidelitySpec::d2phi_at`]).
pub fn d2phi_with_dual(
    u: &ImageGrid,
    s: &FidelitySpec,
    dual: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    check_dims(s.data.dims(), u.dims())?;
    if let Some(p) = dual {
        check_dims(u.dims(), p.dims())?;
    }
    let vals = (0..u.len())
        .map(|i| {
            s.d2phi_at(
                u.values()[i],
                s.data.values()[i],
                dual.map(|p| p.values()[i]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(u.like(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::norm_l2;
    use proptest::prelude::*;

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

    fn grid(seed: u64, lo: f64, hi: f64) -> ImageGrid {
        ImageGrid::new(6, 6, lcg(36, seed, lo, hi)).unwrap()
    }

    #[test]
    fn zero_at_data() {
        let f = grid(1, 0.1, 0.9);
        let g = FidelitySpec::gaussian(f.clone());
        assert_eq!(phi(&f, &g).unwrap(), 0.0);
        assert!(dphi(&f, &g).unwrap().values().iter().all(|&v| v == 0.0));
        let p = FidelitySpec::poisson(f.clone()).unwrap();
        assert!(dphi(&f, &p)
            .unwrap()
            .values()
            .iter()
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn poisson_with_zero_data_integrates_u() {
        let f = ImageGrid::zeros(6, 6).unwrap();
        let u = grid(2, 0.1, 0.9);
        let p = FidelitySpec::poisson(f).unwrap();
        let expect = u.h() * u.h() * u.values().iter().sum::<f64>();
        assert!((phi(&u, &p).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn poisson_rejects_bad_inputs() {
        let f = grid(3, -0.5, 0.5);
        assert!(FidelitySpec::poisson(f).is_err());
        let p = FidelitySpec::poisson(grid(3, 0.1, 0.5)).unwrap();
        let neg = grid(4, -1.0, -0.1);
        assert!(matches!(phi(&neg, &p), Err(Error::Domain(_))));
        assert!(matches!(dphi(&neg, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn impulse_is_close_to_l1() {
        let f = grid(5, 0.0, 1.0);
        let u = grid(6, 0.0, 1.0);
        let s = FidelitySpec::impulse(f.clone(), 50.0).unwrap();
        let l1 = u.h()
            * u.h()
            * u.values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        let area = u.h() * u.h() * u.len() as f64;
        let v = phi(&u, &s).unwrap();
        assert!(v <= l1 + 1e-15 && l1 - v <= 0.5 / 50.0 * area + 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = grid(7, 0.05, 0.95);
        let u = grid(8, 0.05, 0.95);
        let specs = [
            FidelitySpec::gaussian(f.clone()),
            FidelitySpec::poisson(f.clone()).unwrap(),
            FidelitySpec::impulse(f.clone(), 20.0).unwrap(),
        ];
        for s in &specs {
            let d = dphi(&u, s).unwrap();
            let d2 = d2phi(&u, s).unwrap();
            for i in 0..u.len() {
                let (ui, fi) = (u.values()[i], f.values()[i]);
                if s.kind == FidelityKind::ImpulseHuber
                    && ((ui - fi).abs() * 20.0 - 1.0).abs() < 1e-3
                {
                    continue;
                }
                let t = 1e-6;
                let fd =
                    (s.phi_at(ui + t, fi).unwrap() - s.phi_at(ui - t, fi).unwrap()) / (2.0 * t);
                assert!(
                    (fd - d.values()[i]).abs() <= 1e-6 * d.values()[i].abs().max(1e-3),
                    "{:?}",
                    s.kind
                );
                let fd2 =
                    (s.dphi_at(ui + t, fi).unwrap() - s.dphi_at(ui - t, fi).unwrap()) / (2.0 * t);
                assert!(
                    (fd2 - d2.values()[i]).abs() <= 1e-5 * d2.values()[i].abs().max(1e-2),
                    "{:?}",
                    s.kind
                );
            }
        }
        // and the discrete functional derivative of ∫φ is h² φ'
        let s = &specs[1];
        let e = u.like(lcg(36, 9, -1.0, 1.0));
        let t = 1e-7;
        let mut up = u.clone();
        up.axpy(t, &e).unwrap();
        let mut um = u.clone();
        um.axpy(-t, &e).unwrap();
        let fd = (phi(&up, s).unwrap() - phi(&um, s).unwrap()) / (2.0 * t);
        let an = crate::grid::inner(&dphi(&u, s).unwrap(), &e).unwrap();
        assert!((fd - an).abs() < 1e-6 * an.abs().max(norm_l2(&e) * 1e-3));
    }

    #[test]
    fn impulse_modified_second_derivative() {
        let f = ImageGrid::zeros(3, 3).unwrap();
        let s = FidelitySpec::impulse(f, 10.0).unwrap();
        // active (γ|r| = 5), plain linearization vanishes
        assert_eq!(s.d2phi_at(0.5, 0.0, None).unwrap(), 0.0);
        // modified with a dual pointing the other way doubles the diagonal
        let v = s.d2phi_at(0.5, 0.0, Some(-1.0)).unwrap();
        assert!((v - 2.0 * 10.0 / 5.0).abs() < 1e-14);
        assert_eq!(s.d2phi_at(0.05, 0.0, Some(0.3)).unwrap(), 10.0);
    }

    proptest! {
        #[test]
        fn second_derivatives_are_nonnegative(u in 1e-3f64..2.0, f in 0.0f64..1.0, g in 1.0f64..200.0) {
            let data = ImageGrid::constant(3, 3, f).unwrap();
            for s in [
                FidelitySpec::gaussian(data.clone()),
                FidelitySpec::poisson(data.clone()).unwrap(),
                FidelitySpec::impulse(data.clone(), g).unwrap(),
            ] {
                prop_assert!(s.d2phi_at(u, f, None).unwrap() >= 0.0);
            }
        }

        #[test]
        fn first_derivatives_are_monotone(a in 1e-3f64..2.0, b in 1e-3f64..2.0, f in 0.0f64..1.0, g in 1.0f64..200.0) {
            let data = ImageGrid::constant(3, 3, f).unwrap();
            for s in [
                FidelitySpec::gaussian(data.clone()),
                FidelitySpec::poisson(data.clone()).unwrap(),
                FidelitySpec::impulse(data.clone(), g).unwrap(),
            ] {
                let d = (s.dphi_at(a, f).unwrap() - s.dphi_at(b, f).unwrap()) * (a - b);
                prop_assert!(d >= -1e-15);
            }
        }

        #[test]
        fn impulse_dual_is_bounded(u in -5.0f64..5.0, f in 0.0f64..1.0, g in 0.1f64..500.0) {
            let s = FidelitySpec::impulse(ImageGrid::constant(3, 3, f).unwrap(), g).unwrap();
            prop_assert!(s.dphi_at(u, f).unwrap().abs() <= 1.0 + 1e-15);
        }

        #[test]
        fn coercivity_growth(seed in 0u64..1000) {
            let u = grid(seed, 0.1, 1.0);
            let f = grid(seed + 1, 0.0, 1.0);
            let gauss = FidelitySpec::gaussian(f.clone());
            let pois = FidelitySpec::poisson(f.clone()).unwrap();
            let imp = FidelitySpec::impulse(f.clone(), 10.0).unwrap();
            let at = |s: &FidelitySpec, t: f64| phi(&u.scale(t), s).unwrap();
            // linear growth for Poisson and impulse, quadratic for Gaussian
            for s in [&pois, &imp] {
                prop_assert!(at(s, 200.0) - at(s, 100.0) >= 0.5 * (at(s, 100.0) - at(s, 50.0)));
                prop_assert!(at(s, 100.0) > at(s, 50.0));
            }
            let r = (at(&gauss, 200.0) - at(&gauss, 100.0)) / (at(&gauss, 100.0) - at(&gauss, 50.0));
            prop_assert!(r > 1.9);
        }
    }
}
