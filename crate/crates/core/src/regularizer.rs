//! Huber smoothing of the total-variation integrand and its derivatives.
//!
//! Two choices of the smoothed subgradient `h_γ` are provided. [`HuberVariant::MaxForm`]
//! is the derivative of the classical Huber function, `γz / max(1, γ|z|)`; it is
//! only Lipschitz, so its Jacobian is defined through active sets and is what the
//! semismooth Newton solvers use. [`HuberVariant::C1Form`] replaces the kink at
//! `γ|z| = 1` by a quadratic transition band around the cap `g`, which makes the
//! solution map differentiable and is what the adjoint machinery linearizes.

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HuberVariant {
    #[default]
    MaxForm,
    C1Form,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    pub gamma: f64,
    /// Cap of the C¹ variant. Unrelated to the outer tracking cost.
    pub g_cap: f64,
    pub variant: HuberVariant,
}

impl HuberParams {
    pub fn max_form(gamma: f64) -> Self {
        Self {
            gamma,
            g_cap: 1.0,
            variant: HuberVariant::MaxForm,
        }
    }

    pub fn c1_form(gamma: f64, g_cap: f64) -> Self {
        Self {
            gamma,
            g_cap,
            variant: HuberVariant::C1Form,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "huber gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.g_cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "huber cap must be positive, got {}",
                self.g_cap
            )));
        }
        if self.variant == HuberVariant::C1Form && self.g_cap <= 0.5 / self.gamma {
            return Err(Error::InvalidParameter(format!(
                "C1 cap g={} must exceed 1/(2 gamma)={}",
                self.g_cap,
                0.5 / self.gamma
            )));
        }
        Ok(())
    }

    /// The C¹ variant at the same `γ` and cap. Used when a state computed with
    /// the max form has to be linearized.
    pub fn as_c1(&self) -> Self {
        match self.variant {
            HuberVariant::C1Form => *self,
            HuberVariant::MaxForm => Self::c1_form(self.gamma, 1.0),
        }
    }

    /// Upper bound on `|h_γ(z)|`.
    pub fn dual_bound(&self) -> f64 {
        match self.variant {
            HuberVariant::MaxForm => 1.0,
            HuberVariant::C1Form => self.g_cap,
        }
    }
}

#[inline]
fn norm2(z: Vec2) -> f64 {
    z[0].hypot(z[1])
}

/// Huber-smoothed Euclidean norm: `|z| - 1/(2γ)` above `1/γ`, `γ|z|²/2` below.
pub fn huber_value(z: Vec2, p: &HuberParams) -> f64 {
    let r = norm2(z);
    let g = p.gamma;
    if r >= 1.0 / g {
        // |z| - value stays within [0, 1/(2γ)] after rounding
        let v = r - 0.5 / g;
        if r - v > 0.5 / g {
            v.next_up()
        } else {
            v
        }
    } else {
        0.5 * g * r * r
    }
}

/// Radial potential whose gradient is [`h_gamma`] for the configured variant.
/// Equals [`huber_value`] for the max form.
pub fn potential(z: Vec2, p: &HuberParams) -> f64 {
    match p.variant {
        HuberVariant::MaxForm => huber_value(z, p),
        HuberVariant::C1Form => c1_potential(norm2(z), p.gamma, p.g_cap),
    }
}

fn c1_potential(r: f64, gamma: f64, g: f64) -> f64 {
    let w = 0.5 / gamma;
    let r_lo = (g - w) / gamma;
    let r_hi = (g + w) / gamma;
    // transition-band integral of g - γ/2 t², t = g - γs + 1/(2γ)
    let band = |r: f64| {
        let t_lo = 1.0 / gamma;
        let t = g - gamma * r + w;
        g * (r - r_lo) - (t_lo.powi(3) - t.powi(3)) / 6.0
    };
    if r <= r_lo {
        0.5 * gamma * r * r
    } else if r < r_hi {
        0.5 * gamma * r_lo * r_lo + band(r)
    } else {
        0.5 * gamma * r_lo * r_lo + band(r_hi) + g * (r - r_hi)
    }
}

/// Scalar profile `χ_γ(r)` of the C¹ variant, `h_γ(z) = χ_γ(|z|) z/|z|`.
fn c1_chi(r: f64, gamma: f64, g: f64) -> f64 {
    let gr = gamma * r;
    let w = 0.5 / gamma;
    if gr <= g - w {
        gr
    } else if gr >= g + w {
        g
    } else {
        let t = g - gr + w;
        g - 0.5 * gamma * t * t
    }
}

fn c1_chi_prime(r: f64, gamma: f64, g: f64) -> f64 {
    let gr = gamma * r;
    let w = 0.5 / gamma;
    if gr <= g - w {
        gamma
    } else if gr >= g + w {
        0.0
    } else {
        gamma * gamma * (g - gr + w)
    }
}

/// The smoothed subgradient of `|z|`.
pub fn h_gamma(z: Vec2, p: &HuberParams) -> Vec2 {
    let r = norm2(z);
    let g = p.gamma;
    match p.variant {
        HuberVariant::MaxForm => {
            let m = (g * r).max(1.0);
            [g * z[0] / m, g * z[1] / m]
        }
        HuberVariant::C1Form => {
            if g * r <= p.g_cap - 0.5 / g {
                [g * z[0], g * z[1]]
            } else {
                let s = c1_chi(r, g, p.g_cap) / r;
                [s * z[0], s * z[1]]
            }
        }
    }
}

/// `χ_γ(|z|)`, defined for the C¹ variant only.
pub fn chi_gamma(z: Vec2, p: &HuberParams) -> Result<f64> {
    if p.variant != HuberVariant::C1Form {
        return Err(Error::VariantMismatch(
            "chi_gamma requires the C1 Huber variant",
        ));
    }
    Ok(c1_chi(norm2(z), p.gamma, p.g_cap))
}

/// Per-cell Jacobian contribution of `z ↦ h_γ(z)`.
///
/// `dual = Some(q)` selects the modified linearization: off the inactive set,
/// one factor `z/|z|` of the rank-one term is replaced by the projected dual
/// `q/max(χ, |q|)`, where `χ = |h_γ(z)|` (so `χ = 1` for the max form). The
/// result is then generally nonsymmetric; with `dual = None` it is the exact
/// derivative.
pub fn newton_diffusion_matrix(z: Vec2, dual: Option<Vec2>, p: &HuberParams) -> Mat2 {
    let r = norm2(z);
    let g = p.gamma;
    match p.variant {
        HuberVariant::MaxForm => {
            let m = (g * r).max(1.0);
            let d = g / m;
            let mut out = [[d, 0.0], [0.0, d]];
            if g * r >= 1.0 {
                let w = match dual {
                    Some(q) => {
                        let s = 1.0 / norm2(q).max(1.0);
                        [q[0] * s, q[1] * s]
                    }
                    None => [z[0] / r, z[1] / r],
                };
                let c = g * g / (m * m);
                for (a, row) in out.iter_mut().enumerate() {
                    for (b, entry) in row.iter_mut().enumerate() {
                        *entry -= c * w[a] * z[b];
                    }
                }
            }
            out
        }
        HuberVariant::C1Form => {
            if g * r <= p.g_cap - 0.5 / g {
                return [[g, 0.0], [0.0, g]];
            }
            let chi = c1_chi(r, g, p.g_cap);
            let dchi = c1_chi_prime(r, g, p.g_cap);
            let iso = chi / r;
            let rank1 = (dchi - chi / r) / r;
            let w = match dual {
                Some(q) => {
                    let s = 1.0 / norm2(q).max(chi);
                    [q[0] * s, q[1] * s]
                }
                None => [z[0] / r, z[1] / r],
            };
            [
                [iso + rank1 * w[0] * z[0], rank1 * w[0] * z[1]],
                [rank1 * w[1] * z[0], iso + rank1 * w[1] * z[1]],
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_min_eig(m: Mat2) -> f64 {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt()
    }

    #[test]
    fn huber_value_examples() {
        let p = HuberParams::max_form(1.0);
        assert_eq!(huber_value([0.0, 0.0], &p), 0.0);
        assert!((huber_value([2.0, 0.0], &p) - 1.5).abs() < 1e-15);
        let p = HuberParams::max_form(4.0);
        let at = huber_value([0.25, 0.0], &p);
        assert!((at - 0.125).abs() < 1e-15);
        let below = 0.5 * 4.0 * (0.25f64 - 1e-12).powi(2);
        assert!((at - below).abs() < 1e-11);
    }

    #[test]
    fn h_gamma_examples() {
        let p = HuberParams::max_form(2.0);
        assert_eq!(h_gamma([0.0, 0.0], &p), [0.0, 0.0]);
        assert_eq!(h_gamma([1.0, 0.0], &p), [1.0, 0.0]);
        assert_eq!(h_gamma([0.25, 0.0], &p), [0.5, 0.0]);
        let c = HuberParams::c1_form(2.0, 1.0);
        assert_eq!(h_gamma([0.0, 0.0], &c), [0.0, 0.0]);
    }

    #[test]
    fn chi_branches() {
        let p = HuberParams::c1_form(10.0, 1.0);
        // γ|z| = 0.5 ≤ g - 1/(2γ) = 0.95
        assert!((chi_gamma([0.05, 0.0], &p).unwrap() - 0.5).abs() < 1e-15);
        // γ|z| = 1.2 ≥ g + 1/(2γ) = 1.05
        assert_eq!(chi_gamma([0.0, 0.12], &p).unwrap(), 1.0);
        assert!(chi_gamma([1.0, 0.0], &HuberParams::max_form(10.0)).is_err());
    }

    #[test]
    fn diffusion_matrix_at_origin() {
        let p = HuberParams::max_form(7.0);
        assert_eq!(
            newton_diffusion_matrix([0.0, 0.0], None, &p),
            [[7.0, 0.0], [0.0, 7.0]]
        );
        assert_eq!(
            newton_diffusion_matrix([0.0, 0.0], Some([0.3, 0.1]), &p),
            [[7.0, 0.0], [0.0, 7.0]]
        );
        let c = HuberParams::c1_form(7.0, 1.0);
        assert_eq!(
            newton_diffusion_matrix([0.01, 0.02], None, &c),
            [[7.0, 0.0], [0.0, 7.0]]
        );
    }

    #[test]
    fn c1_saturated_matrix_is_psd() {
        let p = HuberParams::c1_form(5.0, 1.0);
        let mut s = 12345u64;
        for _ in 0..1000 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let r = (1.0 + 0.1) / 5.0 + (s >> 11) as f64 / (1u64 << 53) as f64 * 10.0;
            let m = newton_diffusion_matrix([r * a.cos(), r * a.sin()], None, &p);
            assert!((m[0][1] - m[1][0]).abs() < 1e-14);
            assert!(sym_min_eig(m) >= -1e-12);
        }
    }

    #[test]
    fn modified_matrix_is_exact_at_consistent_dual() {
        for p in [HuberParams::max_form(7.0), HuberParams::c1_form(7.0, 1.0)] {
            for z in [[0.3, -0.1], [0.14, 0.02], [2.0, 1.0]] {
                let exact = newton_diffusion_matrix(z, None, &p);
                let modified = newton_diffusion_matrix(z, Some(h_gamma(z, &p)), &p);
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((exact[a][b] - modified[a][b]).abs() < 1e-12, "{p:?} {z:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn c1_potential_is_continuous() {
        let (g, cap) = (8.0, 1.0);
        let p = HuberParams::c1_form(g, cap);
        for edge in [(cap - 0.5 / g) / g, (cap + 0.5 / g) / g] {
            let lo = potential([edge - 1e-10, 0.0], &p);
            let hi = potential([edge + 1e-10, 0.0], &p);
            assert!((lo - hi).abs() < 1e-9);
        }
    }

    fn vec2() -> impl Strategy<Value = Vec2> {
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| [a, b])
    }

    fn params() -> impl Strategy<Value = HuberParams> {
        (1.0f64..200.0, prop::bool::ANY).prop_map(|(g, c1)| {
            if c1 {
                HuberParams::c1_form(g, 1.0)
            } else {
                HuberParams::max_form(g)
            }
        })
    }

    proptest! {
        #[test]
        fn h_gamma_is_monotone(a in vec2(), b in vec2(), p in params()) {
            let ha = h_gamma(a, &p);
            let hb = h_gamma(b, &p);
            let ip = (ha[0] - hb[0]) * (a[0] - b[0]) + (ha[1] - hb[1]) * (a[1] - b[1]);
            prop_assert!(ip >= -1e-12);
        }

        #[test]
        fn h_gamma_is_bounded(z in vec2(), p in params()) {
            let h = h_gamma(z, &p);
            prop_assert!(norm2(h) <= p.dual_bound().max(1.0) + 1e-12);
        }

        #[test]
        fn chi_matches_norm_of_h(z in vec2(), g in 1.0f64..200.0) {
            let p = HuberParams::c1_form(g, 1.0);
            let chi = chi_gamma(z, &p).unwrap();
            prop_assert!((norm2(h_gamma(z, &p)) - chi).abs() < 1e-12);
        }

        #[test]
        fn huber_is_within_half_over_gamma_of_norm(z in vec2(), g in 0.5f64..1000.0) {
            let p = HuberParams::max_form(g);
            let gap = norm2(z) - huber_value(z, &p);
            // one ulp of |z| for the rounding of |z| - 1/(2γ)
            let ulp = f64::EPSILON * norm2(z);
            prop_assert!(gap >= -ulp);
            prop_assert!(gap <= 0.5 / g + ulp);
        }

        #[test]
        fn h_gamma_is_gradient_of_potential(z in vec2(), p in params()) {
            let r = norm2(z);
            // stay off the kink of the max form
            prop_assume!((p.gamma * r - 1.0).abs() > 1e-3);
            let t = 1e-6 * (1.0 + r);
            let h = h_gamma(z, &p);
            for k in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[k] += t;
                zm[k] -= t;
                let fd = (potential(zp, &p) - potential(zm, &p)) / (2.0 * t);
                prop_assert!((fd - h[k]).abs() <= 1e-6 * h[k].abs().max(1e-2), "{} vs {}", fd, h[k]);
            }
        }

        #[test]
        fn c1_matrix_matches_finite_differences(angle in 0.0f64..std::f64::consts::TAU, off in -0.6f64..0.6, g in 5.0f64..100.0) {
            // points in and around the transition band γ|z| ≈ g_cap
            let p = HuberParams::c1_form(g, 1.0);
            let r = (1.0 + off / g) / g;
            let z = [r * angle.cos(), r * angle.sin()];
            let m = newton_diffusion_matrix(z, None, &p);
            let t = 1e-7 * r;
            for b in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[b] += t;
                zm[b] -= t;
                let hp = h_gamma(zp, &p);
                let hm = h_gamma(zm, &p);
                for a in 0..2 {
                    let fd = (hp[a] - hm[a]) / (2.0 * t);
                    prop_assert!((fd - m[a][b]).abs() < 1e-4 * g, "{} vs {}", fd, m[a][b]);
                }
            }
        }

        #[test]
        fn max_form_plain_matrix_matches_finite_differences(z in vec2(), g in 1.0f64..100.0) {
            let p = HuberParams::max_form(g);
            prop_assume!((g * norm2(z) - 1.0).abs() > 1e-3);
            let m = newton_diffusion_matrix(z, None, &p);
            let t = 1e-8;
            for b in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[b] += t;
                zm[b] -= t;
                let hp = h_gamma(zp, &p);
                let hm = h_gamma(zm, &p);
                for a in 0..2 {
                    let fd = (hp[a] - hm[a]) / (2.0 * t);
                    prop_assert!((fd - m[a][b]).abs() < 1e-5 * g.max(1.0));
                }
            }
        }
    }
}
