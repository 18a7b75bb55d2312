//! Quadrature rules: Gauss–Legendre on intervals, product rules on the unit
//! sphere and on velocity boxes, composite rules in time, and graded
//! tangent-map rules for improper integrals with algebraic decay.
//!
//! All rules are immutable. Sums run in node order, so results do not depend
//! on the execution mode.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::phase::Vec3;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exactly mirror-symmetric.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n / 2 {
        // Tricomi's initial guess for the i-th largest root.
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        let (_, d) = legendre(n, 0.0);
        x[n / 2] = 0.0;
        w[n / 2] = 2.0 / (d * d);
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|t| h * t).collect())
}

/// Sphere rule families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereFamily {
    /// Gauss–Legendre in `cos θ` times uniform `φ`.
    ProductGauss,
    /// Gauss–Legendre in `θ` (weights carry `sin θ`) times uniform `φ`.
    PolarGauss,
}

/// Config-level description of a sphere rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub family: SphereFamily,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for SphereSpec {
    fn default() -> Self {
        SphereSpec {
            family: SphereFamily::ProductGauss,
            n_theta: 6,
            n_phi: 12,
        }
    }
}

impl SphereSpec {
    pub fn build(&self) -> Result<SphereRule> {
        match self.family {
            SphereFamily::ProductGauss => SphereRule::product_gauss(self.n_theta, self.n_phi),
            SphereFamily::PolarGauss => SphereRule::polar_gauss(self.n_theta, self.n_phi),
        }
    }
}

/// Nodes and positive weights on S² summing to 4π.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    antipodal: bool,
    representatives: Vec<usize>,
    spec: Option<SphereSpec>,
}

impl SphereRule {
    /// Gauss–Legendre in `cos θ` (`n_theta` nodes) times `n_phi` uniform
    /// azimuths. Even `n_phi` gives an antipodally symmetric rule.
    pub fn product_gauss(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return invalid("sphere rule needs positive node counts");
        }
        let (z, wz) = gauss_legendre(n_theta);
        let rule = Self::from_rings(&z, &wz, n_phi)?;
        Ok(rule.with_spec(SphereSpec {
            family: SphereFamily::ProductGauss,
            n_theta,
            n_phi,
        }))
    }

    /// Gauss–Legendre in `θ ∈ [0, π]` times `n_phi` uniform azimuths. The
    /// `sin θ` Jacobian sits in the weights, which suits integrands with a
    /// `1/sin θ` singularity at the poles.
    pub fn polar_gauss(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return invalid("sphere rule needs positive node counts");
        }
        let (t, wt) = gauss_legendre(n_theta);
        let mut z = Vec::with_capacity(n_theta);
        let mut wz = Vec::with_capacity(n_theta);
        for i in 0..n_theta {
            let theta = FRAC_PI_2 * (1.0 + t[i]);
            z.push(theta.cos());
            wz.push(FRAC_PI_2 * wt[i] * theta.sin());
        }
        // Mirror exactly so antipodal pairs are bitwise negations.
        for i in 0..n_theta / 2 {
            z[n_theta - 1 - i] = -z[i];
            wz[n_theta - 1 - i] = wz[i];
        }
        if n_theta % 2 == 1 {
            z[n_theta / 2] = 0.0;
        }
        let mut rule = Self::from_rings(&z, &wz, n_phi)?;
        // The θ-rule integrates sin θ only approximately; renormalize to 4π.
        let total: f64 = rule.weights.iter().sum();
        let scale = 4.0 * PI / total;
        if (scale - 1.0).abs() > 1e-6 {
            return invalid("polar Gauss rule too coarse to normalize");
        }
        for w in &mut rule.weights {
            *w *= scale;
        }
        Ok(rule.with_spec(SphereSpec {
            family: SphereFamily::PolarGauss,
            n_theta,
            n_phi,
        }))
    }

    fn from_rings(z: &[f64], wz: &[f64], n_phi: usize) -> Result<Self> {
        let dphi = 2.0 * PI / n_phi as f64;
        let half = n_phi / 2;
        let mut ring = Vec::with_capacity(n_phi);
        for j in 0..n_phi {
            if n_phi % 2 == 0 && j >= half {
                let (c, s): (f64, f64) = ring[j - half];
                ring.push((-c, -s));
            } else {
                let phi = dphi * j as f64;
                ring.push((phi.cos(), phi.sin()));
            }
        }
        let mut nodes = Vec::with_capacity(z.len() * n_phi);
        let mut weights = Vec::with_capacity(z.len() * n_phi);
        for (&zi, &wi) in z.iter().zip(wz) {
            let s = (1.0 - zi * zi).max(0.0).sqrt();
            for &(c, sn) in &ring {
                nodes.push(Vec3::new(s * c, s * sn, zi));
                weights.push(wi * dphi);
            }
        }
        SphereRule::from_nodes(nodes, weights)
    }

    fn with_spec(mut self, spec: SphereSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    /// Validates a rule and detects antipodal symmetry (exact node negation
    /// with exactly equal weight).
    pub fn from_nodes(nodes: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return invalid("sphere rule needs matching, nonempty nodes and weights");
        }
        if nodes.iter().any(|n| !n.is_finite() || (n.norm() - 1.0).abs() > 1e-12) {
            return invalid("sphere nodes must be unit vectors");
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return invalid("sphere weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 4.0 * PI).abs() > 1e-12 * 4.0 * PI {
            return invalid(format!("sphere weights sum to {total}, expected 4π"));
        }
        let key = |v: Vec3| {
            // Normalize -0.0 to 0.0 so exact negation maps to the same key.
            let b = |c: f64| (c + 0.0).to_bits();
            (b(v.x), b(v.y), b(v.z))
        };
        let index: HashMap<_, usize> = nodes.iter().enumerate().map(|(i, &n)| (key(n), i)).collect();
        let mut antipodal = true;
        let mut representatives = Vec::new();
        for (i, &n) in nodes.iter().enumerate() {
            match index.get(&key(-n)) {
                Some(&j) if j != i && weights[j] == weights[i] => {
                    if i < j {
                        representatives.push(i);
                    }
                }
                _ => {
                    antipodal = false;
                    break;
                }
            }
        }
        if !antipodal {
            representatives.clear();
        }
        Ok(SphereRule {
            nodes,
            weights,
            antipodal,
            representatives,
            spec: None,
        })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_antipodal(&self) -> bool {
        self.antipodal
    }

    /// One index per antipodal pair (empty unless antipodal).
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    pub fn spec(&self) -> Option<SphereSpec> {
        self.spec
    }

    /// The rule rotated so that its pole `e_z` maps to `axis` (unit).
    /// Antipodal symmetry survives the rotation exactly.
    pub fn aligned(&self, axis: Vec3) -> Result<SphereRule> {
        let a = axis.unit().ok_or_else(|| crate::Error::InvalidParam("zero axis".into()))?;
        let (e1, e2) = a.orthonormal_frame();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let r = e1 * n.x + e2 * n.y + a * n.z;
                r / r.norm()
            })
            .collect();
        let mut rule = SphereRule::from_nodes(nodes, self.weights.clone())?;
        rule.spec = self.spec;
        Ok(rule)
    }

    /// Same family with about half the nodes per direction.
    pub fn coarsened(&self) -> Result<SphereRule> {
        let spec = self
            .spec
            .ok_or_else(|| crate::Error::InvalidParam("rule has no family descriptor".into()))?;
        let half = |n: usize| (n / 2).max(1);
        let n_phi = if spec.n_phi % 2 == 0 { (spec.n_phi / 2).max(2) } else { half(spec.n_phi) };
        SphereSpec {
            n_theta: half(spec.n_theta),
            n_phi,
            ..spec
        }
        .build()
    }
}

/// `Σ wᵢ g(σᵢ)`.
pub fn integrate_sphere<G: Fn(Vec3) -> f64>(rule: &SphereRule, g: G) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&n, &w)| w * g(n)).sum()
}

/// Tensor-product Gauss–Legendre rule on `[-V, V]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRule {
    v_max: f64,
    n: usize,
    axis_nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
}

impl BoxRule {
    /// `n` Gauss–Legendre nodes per axis; exact for polynomials of degree
    /// `2n − 1` in each coordinate.
    pub fn gauss(v_max: f64, n: usize) -> Result<Self> {
        if !(v_max > 0.0 && v_max.is_finite()) || n == 0 {
            return invalid("box rule needs positive half-width and node count");
        }
        let (x, w) = gauss_legendre_on(-v_max, v_max, n);
        let mut nodes = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    nodes.push(Vec3::new(x[i], x[j], x[k]));
                    weights.push(w[i] * w[j] * w[k]);
                }
            }
        }
        Ok(BoxRule {
            v_max,
            n,
            axis_nodes: x,
            axis_weights: w,
            nodes,
            weights,
        })
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    /// Polynomial degree integrated exactly per coordinate.
    pub fn degree(&self) -> usize {
        2 * self.n - 1
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn coarsened(&self) -> Result<BoxRule> {
        BoxRule::gauss(self.v_max, (self.n / 2).max(1))
    }
}

/// Tensor-product quadrature value.
pub fn integrate_velocity_box<G: Fn(Vec3) -> f64>(rule: &BoxRule, g: G) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&n, &w)| w * g(n)).sum()
}

/// Composite Gauss–Legendre rule on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRule {
    t: f64,
    panels: usize,
    per_panel: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panel_of: Vec<usize>,
}

impl TimeRule {
    pub fn composite_gauss(t: f64, panels: usize, per_panel: usize) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) || panels == 0 || per_panel == 0 {
            return invalid("time rule needs t >= 0 and positive counts");
        }
        let (x, w) = gauss_legendre(per_panel);
        let h = t / panels as f64;
        let mut nodes = Vec::with_capacity(panels * per_panel);
        let mut weights = Vec::with_capacity(panels * per_panel);
        let mut panel_of = Vec::with_capacity(panels * per_panel);
        for p in 0..panels {
            let a = h * p as f64;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(a + 0.5 * h * (1.0 + xi));
                weights.push(0.5 * h * wi);
                panel_of.push(p);
            }
        }
        Ok(TimeRule {
            t,
            panels,
            per_panel,
            nodes,
            weights,
            panel_of,
        })
    }

    /// Default: 8 panels of 2 Gauss nodes.
    pub fn default_on(t: f64) -> Result<Self> {
        TimeRule::composite_gauss(t, 8, 2)
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn per_panel(&self) -> usize {
        self.per_panel
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Panel index of each node.
    pub fn panel_of(&self) -> &[usize] {
        &self.panel_of
    }

    /// Panel boundaries `0 = t₀ < t₁ < … < t_P = t`.
    pub fn panel_edges(&self) -> Vec<f64> {
        let h = self.t / self.panels as f64;
        (0..=self.panels)
            .map(|p| if p == self.panels { self.t } else { h * p as f64 })
            .collect()
    }

    pub fn coarsened(&self) -> Result<TimeRule> {
        TimeRule::composite_gauss(self.t, (self.panels / 2).max(1), self.per_panel)
    }
}

/// `Σ wᵢ g(sᵢ)`.
pub fn integrate_time<G: Fn(f64) -> f64>(rule: &TimeRule, g: G) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&s, &w)| w * g(s)).sum()
}

/// Domain of a [`LineRule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LineDomain {
    /// The whole real line.
    Real,
    /// `[c, ∞)`.
    HalfLine,
    /// `[c, c + t]`.
    Segment(f64),
}

/// Graded tangent-map Gauss rule for improper integrals.
///
/// With `ψ_m(w) = ∫₀^w (1−τ²)^m dτ / ∫₀¹ (1−τ²)^m dτ`, the real-line rule
/// uses `s = c + h tan((π/2) ψ_m(w))` and Gauss–Legendre in `w`. An
/// integrand decaying like `|s|^{-p}` becomes `O((1−|w|)^{(m+1)(p−1)−1})`
/// at the endpoints, so `m ≈ 4/(p−1)` keeps it smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRule {
    n: usize,
    grading: usize,
    center: f64,
    scale: f64,
    domain: LineDomain,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LineRule {
    pub fn new(domain: LineDomain, n: usize, grading: usize, center: f64, scale: f64) -> Result<Self> {
        if n == 0 || !(scale > 0.0 && scale.is_finite()) || !center.is_finite() {
            return invalid("line rule needs n > 0, finite center and positive scale");
        }
        if let LineDomain::Segment(t) = domain {
            if !(t >= 0.0 && t.is_finite()) {
                return invalid("segment length must be finite and nonnegative");
            }
        }
        let (w, ww) = gauss_legendre(n);
        let (gt, gw) = gauss_legendre(grading + 1);
        // P(w) = ∫₀^w (1−τ²)^m dτ, exact for the polynomial integrand.
        let big_p = |x: f64| -> f64 {
            gt.iter()
                .zip(&gw)
                .map(|(&t, &g)| {
                    let tau = 0.5 * x * (1.0 + t);
                    0.5 * x * g * (1.0 - tau * tau).powi(grading as i32)
                })
                .sum()
        };
        // Q(w) = ∫_w^1 (1−τ²)^m dτ, computed directly so that u_hi − u keeps
        // full relative precision near the singular endpoint.
        let big_q = |x: f64| -> f64 {
            gt.iter()
                .zip(&gw)
                .map(|(&t, &g)| {
                    let tau = x + 0.5 * (1.0 - x) * (1.0 + t);
                    0.5 * (1.0 - x) * g * (1.0 - tau * tau).powi(grading as i32)
                })
                .sum()
        };
        let p1 = big_p(1.0);
        let (u_lo, u_hi) = match domain {
            LineDomain::Real => (-FRAC_PI_2, FRAC_PI_2),
            LineDomain::HalfLine => (0.0, FRAC_PI_2),
            LineDomain::Segment(t) => (0.0, (t / scale).atan()),
        };
        let uh = 0.5 * (u_hi - u_lo);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (&wi, &gi) in w.iter().zip(&ww) {
            let dpsi = (1.0 - wi * wi).powi(grading as i32) / p1;
            // Distance from u to the nearer end of [u_lo, u_hi], kept at full
            // relative precision; P is odd, so 1 + ψ(w) = Q(−w)/P(1) for w < 0.
            let d = uh * big_q(wi.abs()) / p1;
            let (end, sign) = if wi >= 0.0 { (u_hi, -1.0) } else { (u_lo, 1.0) };
            let (tan, sec2) = if end.abs() == FRAC_PI_2 {
                // tan(±π/2 ∓ d) = ±cot d.
                let sn = d.sin();
                (-sign * d.cos() / sn, 1.0 / (sn * sn))
            } else {
                let u = end + sign * d;
                let c = u.cos();
                (u.tan(), 1.0 / (c * c))
            };
            nodes.push(center + scale * tan);
            weights.push(gi * scale * uh * dpsi * sec2);
        }
        Ok(LineRule {
            n,
            grading,
            center,
            scale,
            domain,
            nodes,
            weights,
        })
    }

    /// Rule on R with unit scale centered at 0.
    pub fn real(n: usize, grading: usize) -> Result<Self> {
        LineRule::new(LineDomain::Real, n, grading, 0.0, 1.0)
    }

    /// Grading suited to `|s|^{-p}` decay.
    pub fn grading_for(p: f64) -> usize {
        if !(p > 1.0) {
            return 40;
        }
        (4.0 / (p - 1.0) - 1.0).ceil().clamp(1.0, 40.0) as usize
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> LineDomain {
        self.domain
    }

    pub fn coarsened(&self) -> Result<LineRule> {
        LineRule::new(self.domain, (self.n / 2).max(1), self.grading, self.center, self.scale)
    }
}

/// `Σ wᵢ g(sᵢ)`.
pub fn integrate_line<G: Fn(f64) -> f64>(rule: &LineRule, g: G) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&s, &w)| w * g(s)).sum()
}

/// Value and a two-resolution error estimate `|I_n − I_{n/2}|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

pub fn sphere_with_error<G: Fn(Vec3) -> f64>(rule: &SphereRule, g: G) -> Result<Estimate> {
    let value = integrate_sphere(rule, &g);
    let coarse = integrate_sphere(&rule.coarsened()?, &g);
    Ok(Estimate {
        value,
        error: (value - coarse).abs(),
    })
}

pub fn box_with_error<G: Fn(Vec3) -> f64>(rule: &BoxRule, g: G) -> Result<Estimate> {
    let value = integrate_velocity_box(rule, &g);
    let coarse = integrate_velocity_box(&rule.coarsened()?, &g);
    Ok(Estimate {
        value,
        error: (value - coarse).abs(),
    })
}

pub fn time_with_error<G: Fn(f64) -> f64>(rule: &TimeRule, g: G) -> Result<Estimate> {
    let value = integrate_time(rule, &g);
    let coarse = integrate_time(&rule.coarsened()?, &g);
    Ok(Estimate {
        value,
        error: (value - coarse).abs(),
    })
}

pub fn line_with_error<G: Fn(f64) -> f64>(rule: &LineRule, g: G) -> Result<Estimate> {
    let value = integrate_line(rule, &g);
    let coarse = integrate_line(&rule.coarsened()?, &g);
    Ok(Estimate {
        value,
        error: (value - coarse).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gauss_legendre_moments() {
        for n in 1..30 {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert_relative_eq!(total, 2.0, max_relative = 1e-14);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn sphere_basic_moments() {
        let r = SphereRule::product_gauss(6, 12).unwrap();
        assert!(r.is_antipodal());
        assert_eq!(r.representatives().len(), r.len() / 2);
        assert_relative_eq!(integrate_sphere(&r, |_| 1.0), 4.0 * PI, max_relative = 1e-14);
        assert!(integrate_sphere(&r, |s| s.z).abs() < 1e-14);
        assert_relative_eq!(integrate_sphere(&r, |s| s.z * s.z), 4.0 * PI / 3.0, max_relative = 1e-13);
        assert_relative_eq!(integrate_sphere(&r, |s| s.x * s.x), 4.0 * PI / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn odd_azimuth_count_is_not_antipodal() {
        let r = SphereRule::product_gauss(4, 5).unwrap();
        assert!(!r.is_antipodal());
        assert!(r.representatives().is_empty());
    }

    #[test]
    fn polar_rule_and_alignment() {
        let r = SphereRule::polar_gauss(16, 8).unwrap();
        assert!(r.is_antipodal());
        assert_relative_eq!(integrate_sphere(&r, |s| s.z * s.z), 4.0 * PI / 3.0, max_relative = 1e-10);
        let axis = Vec3::new(1.0, 2.0, -0.5).unit().unwrap();
        let a = r.aligned(axis).unwrap();
        assert!(a.is_antipodal());
        let m = integrate_sphere(&a, |s| s.dot(axis).powi(2));
        assert_relative_eq!(m, 4.0 * PI / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn bad_rules_rejected() {
        assert!(SphereRule::from_nodes(vec![Vec3::axis(0)], vec![1.0]).is_err());
        assert!(SphereRule::from_nodes(vec![Vec3::new(2.0, 0.0, 0.0)], vec![4.0 * PI]).is_err());
    }

    #[test]
    fn box_rule_basics() {
        let r = BoxRule::gauss(3.0, 12).unwrap();
        assert_relative_eq!(integrate_velocity_box(&r, |_| 1.0), 216.0, max_relative = 1e-14);
        assert!(integrate_velocity_box(&r, |v| v.x * v.y.powi(2) + v.z.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_box_matches_erf_closed_form() {
        // ∫_{-V}^{V} e^{-x²} dx = √π erf(V), cubed.
        let v_max = 4.5;
        let r = BoxRule::gauss(v_max, 30).unwrap();
        let q = integrate_velocity_box(&r, |v| (-v.norm2()).exp());
        let exact = (PI.sqrt() * statrs::function::erf::erf(v_max)).powi(3);
        assert_relative_eq!(q, exact, max_relative = 1e-8);
    }

    #[test]
    fn time_rule_polynomials() {
        let r = TimeRule::default_on(2.5).unwrap();
        assert_relative_eq!(integrate_time(&r, |_| 1.0), 2.5, max_relative = 1e-14);
        assert_relative_eq!(integrate_time(&r, |s| s), 2.5 * 2.5 / 2.0, max_relative = 1e-14);
        assert_eq!(r.panel_edges().last(), Some(&2.5));
    }

    #[test]
    fn line_rule_arctan() {
        let r = LineRule::real(64, LineRule::grading_for(2.0)).unwrap();
        let q = integrate_line(&r, |s| 1.0 / (1.0 + s * s));
        assert_relative_eq!(q, PI, max_relative = 1e-8);
        let h = LineRule::new(LineDomain::HalfLine, 64, 3, 0.0, 1.0).unwrap();
        assert_relative_eq!(integrate_line(&h, |s| 1.0 / (1.0 + s * s)), FRAC_PI_2, max_relative = 1e-8);
        let seg = LineRule::new(LineDomain::Segment(2.0), 32, 1, 0.0, 1.0).unwrap();
        assert_relative_eq!(integrate_line(&seg, |s| 1.0 / (1.0 + s * s)), 2f64.atan(), max_relative = 1e-10);
    }

    #[test]
    fn line_rule_slow_decay() {
        // ∫ (1+s²)^{-0.6} ds = √π Γ(0.1)/Γ(0.6).
        let p = 1.2;
        let r = LineRule::real(200, LineRule::grading_for(p)).unwrap();
        let q = integrate_line(&r, |s| (1.0 + s * s).powf(-0.5 * p));
        let g = statrs::function::gamma::gamma;
        let exact = PI.sqrt() * g(0.5 * (p - 1.0)) / g(0.5 * p);
        assert_relative_eq!(q, exact, max_relative = 1e-8);
    }

    #[test]
    fn refinement_within_coarse_estimate() {
        let f = |s: Vec3| (s.x + 0.3 * s.z).exp();
        let coarse = SphereRule::product_gauss(4, 8).unwrap();
        let fine = SphereRule::product_gauss(8, 16).unwrap();
        let e = sphere_with_error(&coarse, f).unwrap();
        assert!((integrate_sphere(&fine, f) - e.value).abs() < e.error);

        let g = |v: Vec3| (-(v - Vec3::new(0.3, 0.0, -0.2)).norm2()).exp();
        let b = BoxRule::gauss(4.0, 8).unwrap();
        let e = box_with_error(&b, g).unwrap();
        let fine = integrate_velocity_box(&BoxRule::gauss(4.0, 16).unwrap(), g);
        assert!((fine - e.value).abs() < e.error);

        let h = |s: f64| (3.0 * s).sin();
        let t = TimeRule::composite_gauss(2.0, 4, 2).unwrap();
        let e = time_with_error(&t, h).unwrap();
        let fine = integrate_time(&TimeRule::composite_gauss(2.0, 8, 2).unwrap(), h);
        assert!((fine - e.value).abs() < e.error);

        let l = LineRule::real(32, 3).unwrap();
        let k = |s: f64| 1.0 / (1.0 + s * s).powi(2);
        let e = line_with_error(&l, k).unwrap();
        let fine = integrate_line(&LineRule::real(64, 3).unwrap(), k);
        assert!((fine - e.value).abs() < e.error);
    }

    proptest! {
        #[test]
        fn product_rules_with_even_azimuths_are_antipodal(nt in 1usize..12, np in 1usize..12) {
            let r = SphereRule::product_gauss(nt, 2 * np).unwrap();
            prop_assert!(r.is_antipodal());
            prop_assert!((integrate_sphere(&r, |_| 1.0) - 4.0 * PI).abs() < 1e-12 * 4.0 * PI);
        }

        #[test]
        fn time_rule_exact_for_constants(t in 0.0f64..50.0, p in 1usize..10, m in 1usize..6) {
            let r = TimeRule::composite_gauss(t, p, m).unwrap();
            prop_assert!(r.weights().iter().all(|w| *w >= 0.0));
            prop_assert!((integrate_time(&r, |_| 1.0) - t).abs() <= 1e-13 * t.max(1.0));
        }
    }
}
