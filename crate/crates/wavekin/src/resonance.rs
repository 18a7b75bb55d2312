//! Geometry of the resonant manifold
//! `v + v₁ = v₂ + v₃`, `|v|² + |v₁|² = |v₂|² + |v₃|²`.
//!
//! For fixed `(v, v₁)` the fiber is the sphere with center `(v+v₁)/2` and
//! radius `|v−v₁|/2`, parametrized by `σ ∈ S²`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phase::Vec3;

/// Tolerance on `|σ| = 1`.
pub const UNIT_TOL: f64 = 1e-12;

/// Relative tolerance for a quadruple to count as on-manifold.
pub const MANIFOLD_TOL: f64 = 1e-12;

/// Post-collision velocities `(v₂, v₃) = (v+v₁)/2 ± (|v−v₁|/2) σ`.
pub fn post_collision(v: Vec3, v1: Vec3, sigma: Vec3) -> Result<(Vec3, Vec3)> {
    if !sigma.is_finite() || (sigma.norm() - 1.0).abs() > UNIT_TOL {
        return invalid(format!("sigma must be a unit vector, |sigma| = {}", sigma.norm()));
    }
    Ok(post_collision_unchecked(v, v1, sigma))
}

/// [`post_collision`] without the unit check, for inner quadrature loops.
#[inline(always)]
pub fn post_collision_unchecked(v: Vec3, v1: Vec3, sigma: Vec3) -> (Vec3, Vec3) {
    let mid = (v + v1) * 0.5;
    let a = sigma * (0.5 * (v - v1).norm());
    (mid + a, mid - a)
}

/// A velocity quadruple `(v, v₁, v₂, v₃)` on the resonant manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionQuad {
    pub v: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
    pub v3: Vec3,
}

impl CollisionQuad {
    /// Validates the resonance conditions.
    pub fn new(v: Vec3, v1: Vec3, v2: Vec3, v3: Vec3) -> Result<Self> {
        let q = CollisionQuad { v, v1, v2, v3 };
        let (m, e) = q.residuals();
        if m > MANIFOLD_TOL || e > MANIFOLD_TOL {
            return Err(Error::OffManifold { momentum: m, energy: e });
        }
        Ok(q)
    }

    /// The quadruple over `(v, v₁)` in direction `σ`.
    pub fn from_sigma(v: Vec3, v1: Vec3, sigma: Vec3) -> Result<Self> {
        let (v2, v3) = post_collision(v, v1, sigma)?;
        CollisionQuad::new(v, v1, v2, v3)
    }

    /// Momentum and energy residuals relative to `E = Σ|vᵢ|²` (absolute when
    /// `E = 0`). Momentum is compared against `√E`.
    pub fn residuals(&self) -> (f64, f64) {
        let e = self.v.norm2() + self.v1.norm2() + self.v2.norm2() + self.v3.norm2();
        let m = (self.v + self.v1 - self.v2 - self.v3).norm();
        let en = (self.v.norm2() + self.v1.norm2() - self.v2.norm2() - self.v3.norm2()).abs();
        if e == 0.0 {
            (m, en)
        } else {
            (m / e.sqrt(), en / e)
        }
    }

    /// `W_{0,1} = v − v₁`.
    pub fn w01(&self) -> Vec3 {
        self.v - self.v1
    }
    /// `W_{0,2} = v − v₂`.
    pub fn w02(&self) -> Vec3 {
        self.v - self.v2
    }
    /// `W_{0,3} = v − v₃`.
    pub fn w03(&self) -> Vec3 {
        self.v - self.v3
    }
    /// `W_{2,3} = v₂ − v₃`.
    pub fn w23(&self) -> Vec3 {
        self.v2 - self.v3
    }

    /// `√(1 − (Ŵ₀₁·Ŵ₂₃)²)`, or `None` when either difference vanishes.
    pub fn sine_factor(&self) -> Option<f64> {
        let a = self.w01().unit()?;
        let b = self.w23().unit()?;
        let c = a.dot(b).clamp(-1.0, 1.0);
        Some((1.0 - c * c).max(0.0).sqrt())
    }
}

/// Residuals of the manifold identities, each relative to `|W₀₁|²` (or
/// `|W₀₁|` for the magnitude identity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `W₀₂·W₀₃ = 0`.
    pub orthogonality: f64,
    /// `|W₀₁| = |W₂₃|`.
    pub magnitude: f64,
    /// `|W₀₂|² + |W₀₃|² = |W₀₁|²`.
    pub pythagoras: f64,
    /// `|W₀₂||W₀₃| = (|W₀₁|²/2) √(1 − (Ŵ₀₁·Ŵ₂₃)²)`.
    pub product: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.orthogonality
            .max(self.magnitude)
            .max(self.pythagoras)
            .max(self.product)
    }
}

/// Evaluates the resonant-manifold identities on an on-manifold quadruple.
pub fn manifold_identities(quad: &CollisionQuad) -> Result<IdentityReport> {
    let (m, e) = quad.residuals();
    if m > MANIFOLD_TOL || e > MANIFOLD_TOL {
        return Err(Error::OffManifold { momentum: m, energy: e });
    }
    let (w01, w02, w03, w23) = (quad.w01(), quad.w02(), quad.w03(), quad.w23());
    let r2 = w01.norm2();
    if r2 == 0.0 {
        // Degenerate fiber: every difference vanishes and each identity reads 0 = 0.
        let lhs = [w02.dot(w03).abs(), w23.norm(), w02.norm2() + w03.norm2()];
        let worst = lhs.iter().fold(0.0f64, |a, &b| a.max(b));
        return Ok(IdentityReport {
            orthogonality: worst,
            magnitude: worst,
            pythagoras: worst,
            product: worst,
        });
    }
    let sine = quad.sine_factor().unwrap_or(0.0);
    Ok(IdentityReport {
        orthogonality: w02.dot(w03).abs() / r2,
        magnitude: (w01.norm() - w23.norm()).abs() / r2.sqrt(),
        pythagoras: (w02.norm2() + w03.norm2() - r2).abs() / r2,
        product: (w02.norm() * w03.norm() - 0.5 * r2 * sine).abs() / r2,
    })
}

/// Checks `min{|W₀₂|, |W₀₃|} ≥ (|W₀₁|/2) √(1 − (Ŵ₀₁·Ŵ₂₃)²) − 10⁻¹²`.
pub fn min_estimate_check(quad: &CollisionQuad) -> Result<bool> {
    let (m, e) = quad.residuals();
    if m > MANIFOLD_TOL || e > MANIFOLD_TOL {
        return Err(Error::OffManifold { momentum: m, energy: e });
    }
    if quad.w01().norm() == 0.0 {
        return invalid("min estimate needs v != v1");
    }
    let sine = quad
        .sine_factor()
        .ok_or_else(|| Error::InvalidParam("degenerate quadruple".into()))?;
    let lhs = quad.w02().norm().min(quad.w03().norm());
    let rhs = 0.5 * quad.w01().norm() * sine;
    Ok(lhs >= rhs - 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(a: f64, b: f64) -> Vec3 {
        // (cos θ, φ) parametrization of S².
        let s = (1.0 - a * a).max(0.0).sqrt();
        Vec3::new(s * b.cos(), s * b.sin(), a)
    }

    #[test]
    fn degenerate_fiber() {
        let v = Vec3::new(0.3, -1.0, 2.0);
        let (v2, v3) = post_collision(v, v, Vec3::axis(2)).unwrap();
        assert_eq!(v2, v);
        assert_eq!(v3, v);
        let q = CollisionQuad::new(v, v, v, v).unwrap();
        assert_eq!(manifold_identities(&q).unwrap().max(), 0.0);
        assert!(min_estimate_check(&q).is_err());
    }

    #[test]
    fn hand_example() {
        let (v2, v3) = post_collision(Vec3::axis(0), -Vec3::axis(0), Vec3::axis(1)).unwrap();
        assert_eq!(v2, Vec3::axis(1));
        assert_eq!(v3, -Vec3::axis(1));
    }

    #[test]
    fn non_unit_sigma_rejected() {
        assert!(post_collision(Vec3::ZERO, Vec3::axis(0), Vec3::new(1.0, 1e-4, 0.0)).is_err());
        assert!(post_collision(Vec3::ZERO, Vec3::axis(0), Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn off_manifold_rejected() {
        let r = CollisionQuad::new(Vec3::ZERO, Vec3::axis(0), Vec3::axis(1), Vec3::axis(2));
        assert!(matches!(r, Err(Error::OffManifold { .. })));
    }

    #[test]
    fn perpendicular_sigma() {
        let (v, v1) = (Vec3::new(1.0, 2.0, 0.0), Vec3::new(-1.0, 2.0, 0.0));
        let q = CollisionQuad::from_sigma(v, v1, Vec3::axis(2)).unwrap();
        assert_relative_eq!(q.w02().norm(), q.w03().norm(), max_relative = 1e-15);
        assert_relative_eq!(q.w02().norm(), 2.0 / 2f64.sqrt(), max_relative = 1e-15);
        // min = |W01|/√2 strictly above |W01|/2.
        assert!(min_estimate_check(&q).unwrap());
        assert!(q.w02().norm() > 0.5 * q.w01().norm() + 0.1);
    }

    #[test]
    fn parallel_sigma_has_zero_rhs() {
        let (v, v1) = (Vec3::new(1.0, 0.5, 0.0), Vec3::new(-1.0, 0.0, 0.3));
        let s = (v - v1).unit().unwrap();
        for sigma in [s, -s] {
            let q = CollisionQuad::from_sigma(v, v1, sigma).unwrap();
            assert!(q.sine_factor().unwrap() < 1e-7);
            assert!(min_estimate_check(&q).unwrap());
        }
    }

    proptest! {
        #[test]
        fn identities_hold(
            v in prop::array::uniform3(-10.0f64..10.0),
            v1 in prop::array::uniform3(-10.0f64..10.0),
            a in -1.0f64..1.0, b in 0.0f64..std::f64::consts::TAU,
        ) {
            let sigma = unit(a, b);
            let q = CollisionQuad::from_sigma(v.into(), v1.into(), sigma).unwrap();
            prop_assert!(manifold_identities(&q).unwrap().max() <= 1e-11);
            prop_assert!(min_estimate_check(&q).unwrap());
        }

        #[test]
        fn antipodal_swap_is_exact(
            v in prop::array::uniform3(-10.0f64..10.0),
            v1 in prop::array::uniform3(-10.0f64..10.0),
            a in -1.0f64..1.0, b in 0.0f64..std::f64::consts::TAU,
        ) {
            let sigma = unit(a, b);
            let (v2, v3) = post_collision_unchecked(v.into(), v1.into(), sigma);
            let (w2, w3) = post_collision_unchecked(v.into(), v1.into(), -sigma);
            prop_assert_eq!(v2, w3);
            prop_assert_eq!(v3, w2);
        }
    }
}
