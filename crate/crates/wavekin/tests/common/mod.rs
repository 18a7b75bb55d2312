//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use statrs::function::erf::erf;
use std::f64::consts::PI;
use wavekin::collision::Term;
use wavekin::Vec3;

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

/// Plain Monte-Carlo value of `L_term(g, h, l)(v)` over `v₁ ∈ [−V, V]³`,
/// `σ ∈ S²`, both uniform:
/// `(2V)³ · 4π · E[2⁻³ |v − v₁| · pattern product]`.
///
/// Shares nothing with the library beyond `Vec3` arithmetic: the post
/// collision velocities are built here from their defining formula.
pub fn mc_eval_l<G, H, L>(term: Term, g: G, h: H, l: L, v: Vec3, v_max: f64, samples: usize, seed: u64) -> McEstimate
where
    G: Fn(Vec3) -> f64,
    H: Fn(Vec3) -> f64,
    L: Fn(Vec3) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let volume = (2.0 * v_max).powi(3) * 4.0 * PI;
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=samples {
        let v1 = Vec3::new(
            rng.random_range(-v_max..v_max),
            rng.random_range(-v_max..v_max),
            rng.random_range(-v_max..v_max),
        );
        let s: [f64; 3] = UnitSphere.sample(&mut rng);
        let sigma = Vec3::new(s[0], s[1], s[2]);
        let r = (v - v1).norm();
        let v2 = (v + v1) * 0.5 + sigma * (0.5 * r);
        let v3 = (v + v1) * 0.5 - sigma * (0.5 * r);
        let prod = match term {
            Term::L0 => g(v1) * h(v2) * l(v3),
            Term::L1 => g(v) * h(v2) * l(v3),
            Term::L2 => g(v) * h(v1) * l(v3),
            Term::L3 => g(v) * h(v1) * l(v2),
        };
        let y = volume * 0.125 * r * prod;
        let d = y - mean;
        mean += d / n as f64;
        m2 += d * (y - mean);
    }
    let var = m2 / (samples as f64 - 1.0);
    McEstimate {
        mean,
        se: (var / samples as f64).sqrt(),
        samples,
    }
}

/// `E|Z|` for `Z ~ N(μ, s² I₃)`.
pub fn mean_norm_gaussian3(mu: f64, s: f64) -> f64 {
    if mu == 0.0 {
        return 2.0 * s * (2.0 / PI).sqrt();
    }
    let m = mu / s;
    s * ((2.0 / PI).sqrt() * (-0.5 * m * m).exp() + (m + 1.0 / m) * erf(m / 2f64.sqrt()))
}

/// Closed form of `L₁(e^{−|·|²}, e^{−|·|²}, e^{−|·|²})(v)` on all of ℝ³:
/// on the manifold `h(v₂)l(v₃) = e^{−|v|²−|v₁|²}`, so
/// `L₁ = (π/2) e^{−2|v|²} ∫ |v − v₁| e^{−|v₁|²} dv₁`.
pub fn gaussian_l1(v: Vec3) -> f64 {
    let s = 0.5f64.sqrt();
    0.5 * PI * (-2.0 * v.norm2()).exp() * PI.powf(1.5) * mean_norm_gaussian3(v.norm(), s)
}

/// Closed form of `L₀` for the same Gaussians:
/// `(π/2) e^{−|v|²} ∫ |v − v₁| e^{−2|v₁|²} dv₁`.
pub fn gaussian_l0(v: Vec3) -> f64 {
    let s = 0.5;
    0.5 * PI * (-v.norm2()).exp() * (PI / 2.0).powf(1.5) * mean_norm_gaussian3(v.norm(), s)
}

/// Gaussian bump `e^{−a|v − c|²}`.
pub fn bump(c: Vec3, a: f64) -> impl Fn(Vec3) -> f64 + Copy + Sync {
    move |v: Vec3| (-a * (v - c).norm2()).exp()
}
