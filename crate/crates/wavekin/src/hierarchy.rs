//! Finite truncations of the wave kinetic hierarchy.
//!
//! A [`Marginal`] is a `k`-particle function `g^{(k)}(X_k, V_k)` represented
//! as a tensor power `h^{⊗k}`, a finite mixture `Σ wᵢ hᵢ^{⊗k}`, a labeled
//! product `∏ hᵢ(xᵢ, vᵢ)`, or lazily as a hierarchy collision operator applied
//! to another marginal. Every representation carries an argument permutation
//! and a free-transport shift, so that swaps `S_{j,j+2}` and transports
//! `T_k^s` compose without copying data.
//!
//! The hierarchy operator `𝔠^λ_{j,k+2}` integrates the `(k+2)`-particle
//! marginal over the resonant manifold attached to `(v_j, v_{k+1})`, with
//! slots `k+1, k+2` placed at `x_j`. It uses the same sphere parametrization
//! and `2⁻³` normalization as the equation-level forms.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{constant_c, BoundReport};
use crate::collision::{eval_l, CollisionConfig, Frame, Term};
use crate::error::{invalid, Error, Result};
use crate::exec::{nan_max, Exec};
use crate::phase::{weighted_norm, DistributionField, Sampler, Vec3, WeightParams};
use crate::quadrature::{gauss_legendre_on, TimeRule};
use crate::solver::{picard_solve, PicardState, SolveReport, SolverConfig};

/// Terms carried by a lazily collided marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermSelection {
    One(Term),
    /// `(L₀ + L₁) − (L₂ + L₃)`.
    Full,
}

enum Repr {
    Tensor { h: DistributionField, k: usize },
    Mixture { weights: Vec<f64>, comps: Vec<DistributionField>, k: usize },
    Product { factors: Vec<DistributionField> },
    Collided { j: usize, terms: TermSelection, inner: Marginal, cfg: CollisionConfig },
}

/// A `k`-particle marginal `g^{(k)}(X_k, V_k)`.
#[derive(Clone)]
pub struct Marginal {
    repr: Arc<Repr>,
    /// Argument `i` of the representation reads slot `perm[i]`.
    perm: Option<Arc<Vec<usize>>>,
    shift: f64,
}

impl std::fmt::Debug for Marginal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &*self.repr {
            Repr::Tensor { .. } => "tensor",
            Repr::Mixture { .. } => "mixture",
            Repr::Product { .. } => "product",
            Repr::Collided { .. } => "collided",
        };
        f.debug_struct("Marginal")
            .field("kind", &kind)
            .field("order", &self.order())
            .field("perm", &self.perm)
            .field("shift", &self.shift)
            .finish()
    }
}

/// One summand `w ∏_slot F_slot(x_slot, v_slot)` of a product-form marginal.
pub type Component = (f64, Vec<DistributionField>);

impl Marginal {
    fn wrap(repr: Repr) -> Self {
        Marginal {
            repr: Arc::new(repr),
            perm: None,
            shift: 0.0,
        }
    }

    /// `h^{⊗k}`, `k ≥ 1`.
    pub fn tensor(h: DistributionField, k: usize) -> Result<Self> {
        if k == 0 {
            return invalid("tensor power needs k >= 1");
        }
        Ok(Marginal::wrap(Repr::Tensor { h, k }))
    }

    /// `Σ wᵢ hᵢ^{⊗k}` with nonnegative finite weights.
    pub fn mixture(weights: Vec<f64>, comps: Vec<DistributionField>, k: usize) -> Result<Self> {
        if k == 0 || weights.is_empty() || weights.len() != comps.len() {
            return invalid("mixture needs k >= 1 and one weight per component");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("mixture weights must be finite and nonnegative");
        }
        Ok(Marginal::wrap(Repr::Mixture { weights, comps, k }))
    }

    /// Labeled product `∏ hᵢ(xᵢ, vᵢ)`.
    pub fn product(factors: Vec<DistributionField>) -> Result<Self> {
        if factors.is_empty() {
            return invalid("product needs at least one factor");
        }
        Ok(Marginal::wrap(Repr::Product { factors }))
    }

    /// `𝔠^λ_{j,ℓ} m` (or the full signed sum), a marginal of order `ℓ − 2`.
    pub fn collided(m: &Marginal, j: usize, terms: TermSelection, cfg: &CollisionConfig) -> Result<Self> {
        let order = m.order();
        if order < 3 || j == 0 || j > order - 2 {
            return invalid(format!("collision slot j = {j} needs 1 <= j <= {}", order.saturating_sub(2)));
        }
        Ok(Marginal::wrap(Repr::Collided {
            j,
            terms,
            inner: m.clone(),
            cfg: cfg.clone().with_frame(Frame::Lab),
        }))
    }

    /// Number of particles `k`.
    pub fn order(&self) -> usize {
        match &*self.repr {
            Repr::Tensor { k, .. } | Repr::Mixture { k, .. } => *k,
            Repr::Product { factors } => factors.len(),
            Repr::Collided { inner, .. } => inner.order() - 2,
        }
    }

    /// `T_k^s m (X, V) = m(X − sV, V)`.
    pub fn transport(&self, s: f64) -> Self {
        Marginal {
            shift: self.shift + s,
            ..self.clone()
        }
    }

    /// `m(X∘p, V∘p)` with `(X∘p)_i = X_{p[i]}`.
    pub fn permuted(&self, p: &[usize]) -> Result<Self> {
        let k = self.order();
        let mut seen = vec![false; k];
        if p.len() != k || p.iter().any(|&i| i >= k || std::mem::replace(&mut seen[i], true)) {
            return invalid("argument map must be a permutation of the slots");
        }
        let composed = match &self.perm {
            None => p.to_vec(),
            Some(q) => q.iter().map(|&i| p[i]).collect(),
        };
        Ok(Marginal {
            perm: Some(Arc::new(composed)),
            ..self.clone()
        })
    }

    /// True for the identically zero marginal.
    pub fn is_zero(&self) -> bool {
        match &*self.repr {
            Repr::Tensor { h, .. } => h.is_zero(),
            Repr::Mixture { weights, comps, .. } => {
                weights.iter().zip(comps).all(|(w, c)| *w == 0.0 || c.is_zero())
            }
            Repr::Product { factors } => factors.iter().any(|f| f.is_zero()),
            Repr::Collided { inner, .. } => inner.is_zero(),
        }
    }

    #[inline]
    fn slot(&self, i: usize) -> usize {
        self.perm.as_ref().map_or(i, |p| p[i])
    }

    #[inline]
    fn arg(&self, i: usize, xs: &[Vec3], vs: &[Vec3]) -> (Vec3, Vec3) {
        let m = self.slot(i);
        let x = if self.shift == 0.0 { xs[m] } else { xs[m] - vs[m] * self.shift };
        (x, vs[m])
    }

    /// `g^{(k)}(X_k, V_k)`. Slices must have length `k`.
    pub fn eval(&self, xs: &[Vec3], vs: &[Vec3]) -> f64 {
        debug_assert_eq!(xs.len(), self.order());
        debug_assert_eq!(vs.len(), self.order());
        match &*self.repr {
            Repr::Tensor { h, k } => (0..*k).fold(1.0, |acc, i| {
                let (x, v) = self.arg(i, xs, vs);
                acc * h.eval(x, v)
            }),
            Repr::Mixture { weights, comps, k } => weights
                .iter()
                .zip(comps)
                .map(|(w, h)| {
                    w * (0..*k).fold(1.0, |acc, i| {
                        let (x, v) = self.arg(i, xs, vs);
                        acc * h.eval(x, v)
                    })
                })
                .sum(),
            Repr::Product { factors } => factors.iter().enumerate().fold(1.0, |acc, (i, h)| {
                let (x, v) = self.arg(i, xs, vs);
                acc * h.eval(x, v)
            }),
            Repr::Collided { j, terms, inner, cfg } => {
                let k = xs.len();
                let (ax, av): (Vec<Vec3>, Vec<Vec3>) = (0..k).map(|i| self.arg(i, xs, vs)).unzip();
                match terms {
                    TermSelection::One(t) => collide_generic(*t, *j, inner, &ax, &av, cfg),
                    TermSelection::Full => full_sum_at(*j, inner, &ax, &av, cfg),
                }
            }
        }
    }

    /// [`Marginal::eval`] with length checks.
    pub fn eval_checked(&self, xs: &[Vec3], vs: &[Vec3]) -> Result<f64> {
        if xs.len() != self.order() || vs.len() != self.order() {
            return invalid(format!("marginal of order {} evaluated with {} slots", self.order(), xs.len()));
        }
        Ok(self.eval(xs, vs))
    }

    /// Product-form decomposition with permutation and transport applied:
    /// the factor at index `slot` acts on `(x_slot, v_slot)`. `None` for
    /// lazily collided marginals.
    pub fn components(&self) -> Option<Vec<Component>> {
        let k = self.order();
        let place = |factors: &[DistributionField]| -> Vec<DistributionField> {
            let mut out = vec![DistributionField::zero(); k];
            for (i, f) in factors.iter().enumerate() {
                out[self.slot(i)] = if self.shift == 0.0 { f.clone() } else { f.transport(self.shift) };
            }
            out
        };
        match &*self.repr {
            Repr::Tensor { h, k } => Some(vec![(1.0, place(&vec![h.clone(); *k]))]),
            Repr::Mixture { weights, comps, k } => Some(
                weights
                    .iter()
                    .zip(comps)
                    .map(|(w, h)| (*w, place(&vec![h.clone(); *k])))
                    .collect(),
            ),
            Repr::Product { factors } => Some(vec![(1.0, place(factors))]),
            Repr::Collided { .. } => None,
        }
    }
}

/// `∏ᵢ ⟨αxᵢ⟩^p ⟨βvᵢ⟩^q`.
pub fn marginal_weight(w: &WeightParams, xs: &[Vec3], vs: &[Vec3]) -> f64 {
    xs.iter().zip(vs).map(|(x, v)| w.weight(*x, *v)).product()
}

/// A `k`-particle probe point.
pub type Probe = (Vec<Vec3>, Vec<Vec3>);

/// `count` seeded uniform probes of order `k` in `[-X, X]³ᵏ × [-V, V]³ᵏ`
/// (positions zero when `x_max = 0`).
pub fn random_probes(k: usize, count: usize, x_max: f64, v_max: f64, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut draw = |r: f64| Vec3::new(
        rng.random_range(-1.0..=1.0) * r,
        rng.random_range(-1.0..=1.0) * r,
        rng.random_range(-1.0..=1.0) * r,
    );
    (0..count)
        .map(|_| {
            let xs: Vec<Vec3> = (0..k).map(|_| draw(x_max)).collect();
            let vs: Vec<Vec3> = (0..k).map(|_| draw(v_max)).collect();
            (xs, vs)
        })
        .collect()
}

/// Weighted sup of `m` over the given probes.
pub fn marginal_norm(m: &Marginal, w: &WeightParams, probes: &[Probe], exec: Exec) -> f64 {
    exec.max(probes.len(), |i| {
        let (xs, vs) = &probes[i];
        marginal_weight(w, xs, vs) * m.eval(xs, vs).abs()
    })
}

/// Weighted sup of `m` over every `k`-tuple drawn from a single-particle
/// sample set (`|points|^k` evaluations).
pub fn product_set_norm(m: &Marginal, w: &WeightParams, points: &[(Vec3, Vec3)]) -> Result<f64> {
    let k = m.order();
    let n = points.len();
    let total = n.checked_pow(k as u32).filter(|t| *t <= 50_000_000);
    let Some(total) = total else {
        return Err(Error::CapExceeded(format!("{n}^{k} product points")));
    };
    let mut best = 0.0;
    let mut xs = vec![Vec3::ZERO; k];
    let mut vs = vec![Vec3::ZERO; k];
    for mut idx in 0..total {
        for s in 0..k {
            let (x, v) = points[idx % n];
            xs[s] = x;
            vs[s] = v;
            idx /= n;
        }
        best = nan_max(best, marginal_weight(w, &xs, &vs) * m.eval(&xs, &vs).abs());
    }
    Ok(best)
}

fn check_slots(j: usize, m: &Marginal, xs: &[Vec3], vs: &[Vec3]) -> Result<usize> {
    let k = xs.len();
    if vs.len() != k {
        return invalid("positions and velocities differ in length");
    }
    if m.order() != k + 2 {
        return invalid(format!("collision on {k} slots needs a marginal of order {}, got {}", k + 2, m.order()));
    }
    if j == 0 || j > k {
        return invalid(format!("collision slot j = {j} outside 1..={k}"));
    }
    Ok(k)
}

/// Generic quadrature for `𝔠^λ_{j,k+2} m` at `(X_k, V_k)`, evaluating `m`
/// at every resonant node.
fn collide_generic(term: Term, j: usize, m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> f64 {
    let k = xs.len();
    let v = vs[j - 1];
    let xj = xs[j - 1];
    let mut ax = xs.to_vec();
    ax.extend([xj, xj]);
    let mut av = vs.to_vec();
    av.extend([Vec3::ZERO, Vec3::ZERO]);
    let sphere = &cfg.sphere;
    let mut total = 0.0;
    for (&v1, &w1) in cfg.box_rule.nodes().iter().zip(cfg.box_rule.weights()) {
        let r = (v - v1).norm();
        if r == 0.0 {
            continue;
        }
        let mid = (v + v1) * 0.5;
        let half = 0.5 * r;
        let mut s = 0.0;
        for (&sg, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
            let a = sg * half;
            let [p, q, l] = term.pattern(v, v1, mid + a, mid - a);
            av[j - 1] = p;
            av[k] = q;
            av[k + 1] = l;
            s += ws * m.eval(&ax, &av);
        }
        total += w1 * r * s;
    }
    0.125 * total
}

/// Product-form evaluation through the equation-level forms.
fn collide_factored(term: Term, j: usize, comps: &[Component], xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> f64 {
    let k = xs.len();
    let xj = xs[j - 1];
    let mut total = 0.0;
    for (w, factors) in comps {
        if *w == 0.0 {
            continue;
        }
        let mut rest = 1.0;
        for i in (0..k).filter(|&i| i != j - 1) {
            rest *= factors[i].eval(xs[i], vs[i]);
        }
        if rest == 0.0 {
            continue;
        }
        let core = eval_l(
            term,
            factors[j - 1].at_x(xj),
            factors[k].at_x(xj),
            factors[k + 1].at_x(xj),
            vs[j - 1],
            cfg,
        );
        total += w * rest * core;
    }
    total
}

fn collide_lab(term: Term, j: usize, m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> f64 {
    match m.components() {
        Some(comps) => collide_factored(term, j, &comps, xs, vs, cfg),
        None => collide_generic(term, j, m, xs, vs, cfg),
    }
}

fn full_sum_at(j: usize, m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> f64 {
    let [a, b, c, d] = Term::ALL.map(|t| collide_lab(t, j, m, xs, vs, cfg));
    (a + b) - (c + d)
}

/// Applies the configured frame: `Transported{s}` evaluates
/// `T_k^{−s} 𝔠 T_{k+2}^s m` at `(X, V)`.
fn framed(m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> (Marginal, Vec<Vec3>) {
    match cfg.frame {
        Frame::Lab => (m.clone(), xs.to_vec()),
        Frame::Transported { s } => (
            m.transport(s),
            xs.iter().zip(vs).map(|(x, v)| *x + *v * s).collect(),
        ),
    }
}

/// `𝔠^λ_{j,k+2} m (X_k, V_k)` for a marginal of order `k + 2`, `1 ≤ j ≤ k`.
pub fn hierarchy_collision(
    term: Term,
    j: usize,
    m: &Marginal,
    xs: &[Vec3],
    vs: &[Vec3],
    cfg: &CollisionConfig,
) -> Result<f64> {
    check_slots(j, m, xs, vs)?;
    let (m, xs) = framed(m, xs, vs, cfg);
    Ok(collide_lab(term, j, &m, &xs, vs, cfg))
}

/// [`hierarchy_collision`] through the generic quadrature even for product-form
/// marginals (cross-check of the factored path).
pub fn hierarchy_collision_generic(
    term: Term,
    j: usize,
    m: &Marginal,
    xs: &[Vec3],
    vs: &[Vec3],
    cfg: &CollisionConfig,
) -> Result<f64> {
    check_slots(j, m, xs, vs)?;
    let (m, xs) = framed(m, xs, vs, cfg);
    Ok(collide_generic(term, j, &m, &xs, vs, cfg))
}

/// Per-slot gain `𝔠⁺_{j,k+2} = 𝔠^{L₀} + 𝔠^{L₁}` and loss
/// `𝔠⁻_{j,k+2} = 𝔠^{L₂} + 𝔠^{L₃}`, for `j = 1..k`.
pub fn hierarchy_gain_loss(m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> Result<Vec<(f64, f64)>> {
    let k = xs.len();
    check_slots(1, m, xs, vs)?;
    let (m, xs) = framed(m, xs, vs, cfg);
    Ok((1..=k)
        .map(|j| {
            let [a, b, c, d] = Term::ALL.map(|t| collide_lab(t, j, &m, &xs, vs, cfg));
            (a + b, c + d)
        })
        .collect())
}

/// `𝔠^{k+2} m = Σ_j (𝔠^{L₀} + 𝔠^{L₁} − 𝔠^{L₂} − 𝔠^{L₃})_{j,k+2} m`.
pub fn hierarchy_collision_sum(m: &Marginal, xs: &[Vec3], vs: &[Vec3], cfg: &CollisionConfig) -> Result<f64> {
    let k = xs.len();
    check_slots(1, m, xs, vs)?;
    let (m, xs) = framed(m, xs, vs, cfg);
    let mut acc = 0.0;
    for j in 1..=k {
        acc += full_sum_at(j, &m, &xs, vs, cfg);
    }
    Ok(acc)
}

/// One velocity-Gaussian or phase-space-Gaussian mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentSpec {
    /// `mass · N(center_x, σ_x²)(x) · N(center_v, σ_v²)(v)`.
    Gaussian {
        mass: f64,
        center_x: [f64; 3],
        center_v: [f64; 3],
        sigma_x: f64,
        sigma_v: f64,
    },
    /// `mass · 1_{[-L,L]³}(x) / (2L)³ · N(center_v, σ_v²)(v)`: spatially
    /// uniform on the position box of half-width `L = x_box`.
    Uniform {
        mass: f64,
        x_box: f64,
        center_v: [f64; 3],
        sigma_v: f64,
    },
}

fn gaussian3(y: Vec3, c: Vec3, sigma: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-1.5);
    norm * (-(y - c).norm2() / (2.0 * sigma * sigma)).exp()
}

impl ComponentSpec {
    pub fn mass(&self) -> f64 {
        match self {
            ComponentSpec::Gaussian { mass, .. } | ComponentSpec::Uniform { mass, .. } => *mass,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ComponentSpec::Gaussian { mass, center_x, center_v, sigma_x, sigma_v } => {
                *mass >= 0.0
                    && *sigma_x > 0.0
                    && *sigma_v > 0.0
                    && center_x.iter().chain(center_v).all(|c| c.is_finite())
                    && sigma_x.is_finite()
                    && sigma_v.is_finite()
                    && mass.is_finite()
            }
            ComponentSpec::Uniform { mass, x_box, center_v, sigma_v } => {
                *mass >= 0.0
                    && mass.is_finite()
                    && *x_box > 0.0
                    && x_box.is_finite()
                    && *sigma_v > 0.0
                    && sigma_v.is_finite()
                    && center_v.iter().all(|c| c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("malformed mixture component {self:?}"))
        }
    }

    /// The component density as a field.
    pub fn field(&self) -> DistributionField {
        match *self {
            ComponentSpec::Gaussian { mass, center_x, center_v, sigma_x, sigma_v } => {
                let (cx, cv) = (Vec3::from(center_x), Vec3::from(center_v));
                DistributionField::formula(move |x, v| mass * gaussian3(x, cx, sigma_x) * gaussian3(v, cv, sigma_v))
            }
            ComponentSpec::Uniform { mass, x_box, center_v, sigma_v } => {
                let cv = Vec3::from(center_v);
                let density = mass / (2.0 * x_box).powi(3);
                DistributionField::formula(move |x, v| {
                    if x.to_array().iter().all(|c| c.abs() <= x_box) {
                        density * gaussian3(v, cv, sigma_v)
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

/// Finite mixture `Σ wᵢ hᵢ^{⊗k}` as a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureData {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentSpec>,
}

impl MixtureData {
    /// Weights nonnegative and summing to one within 10⁻¹²; components well formed.
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.components.len() {
            return invalid("mixture needs one weight per component");
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("mixture weights must be nonnegative");
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return invalid(format!("mixture weights sum to {sum}, expected 1"));
        }
        self.components.iter().try_for_each(ComponentSpec::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MixtureData = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MixtureData::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fields(&self) -> Vec<DistributionField> {
        self.components.iter().map(ComponentSpec::field).collect()
    }

    /// `g^{(k)} = Σ wᵢ hᵢ^{⊗k}`.
    pub fn marginal(&self, k: usize) -> Result<Marginal> {
        Marginal::mixture(self.weights.clone(), self.fields(), k)
    }

    /// `(g^{(1)}, …, g^{(K)})`.
    pub fn sequence(&self, k_max: usize) -> Result<Vec<Marginal>> {
        (1..=k_max).map(|k| self.marginal(k)).collect()
    }
}

/// Quadrature and probe settings for admissibility checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityOptions {
    /// Position box half-width for mass integrals.
    pub x_max: f64,
    /// Velocity box half-width for mass integrals.
    pub v_max: f64,
    /// Gauss–Legendre nodes per position axis.
    pub x_nodes: usize,
    /// Gauss–Legendre nodes per velocity axis.
    pub v_nodes: usize,
    pub probes: usize,
    pub seed: u64,
    /// Pass threshold for every residual.
    pub tolerance: f64,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        AdmissibilityOptions {
            x_max: 3.0,
            v_max: 7.0,
            x_nodes: 20,
            v_nodes: 24,
            probes: 64,
            seed: 11,
            tolerance: 1e-6,
        }
    }
}

/// Per-condition residuals of an admissibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub options: AdmissibilityOptions,
    pub orders: usize,
    /// Smallest probe value over all orders (should be `≥ 0`).
    pub min_value: f64,
    /// Largest relative change under adjacent pair swaps.
    pub symmetry: f64,
    /// `|∫∫ g^{(1)} − 1|`.
    pub unit_mass: f64,
    /// For `k < K`: `max |g^{(k)} − ∫ g^{(k+1)} dx_{k+1}dv_{k+1}| / max |g^{(k)}|` on probes.
    pub consistency: Vec<f64>,
    /// Range of the velocity mass `∫ g^{(1)}(x, v) dv` over probe positions
    /// (diagnostic, not asserted).
    pub velocity_mass_range: [f64; 2],
    pub flagged: Vec<String>,
    pub pass: bool,
}

struct SixRule {
    x: Vec<(Vec3, f64)>,
    v: Vec<(Vec3, f64)>,
}

fn cube_rule(half: f64, n: usize) -> Vec<(Vec3, f64)> {
    let (t, w) = gauss_legendre_on(-half, half, n);
    let mut out = Vec::with_capacity(n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                out.push((Vec3::new(t[a], t[b], t[c]), w[a] * w[b] * w[c]));
            }
        }
    }
    out
}

impl SixRule {
    fn new(opts: &AdmissibilityOptions) -> Self {
        SixRule {
            x: cube_rule(opts.x_max, opts.x_nodes),
            v: cube_rule(opts.v_max, opts.v_nodes),
        }
    }

    /// `∫∫ f`, factorized as `∫f(x,v₀)dx · ∫f(x₀,v)dv / f(x₀,v₀)` when
    /// `f(x,v) f(x₀,v₀) = f(x,v₀) f(x₀,v)` holds to rounding on random
    /// test points, and by the full six-dimensional rule otherwise.
    fn integrate_field(&self, exec: Exec, f: &DistributionField, opts: &AdmissibilityOptions) -> f64 {
        let pts: Vec<(Vec3, Vec3)> = random_probes(1, 96, opts.x_max, opts.v_max, opts.seed ^ 0x5eed)
            .into_iter()
            .map(|(xs, vs)| (xs[0], vs[0]))
            .chain(std::iter::once((Vec3::ZERO, Vec3::ZERO)))
            .collect();
        let vals: Vec<f64> = pts.iter().map(|&(x, v)| f.eval(x, v)).collect();
        let (i0, f0) = vals
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, y)| if y.abs() > best.1.abs() { (i, y) } else { best });
        if f0 != 0.0 && f0.is_finite() {
            let (x0, v0) = pts[i0];
            let separable = pts.iter().zip(&vals).all(|(&(x, v), &y)| {
                let lhs = y * f0;
                let rhs = f.eval(x, v0) * f.eval(x0, v);
                (lhs - rhs).abs() <= 1e-12 * f0 * f0
            });
            if separable {
                let ix: f64 = self.x.iter().map(|(x, w)| w * f.eval(*x, v0)).sum();
                let iv: f64 = self.v.iter().map(|(v, w)| w * f.eval(x0, *v)).sum();
                return ix * iv / f0;
            }
        }
        self.integrate(exec, |x, v| f.eval(x, v))
    }

    fn integrate<F: Fn(Vec3, Vec3) -> f64 + Sync>(&self, exec: Exec, f: F) -> f64 {
        exec.map(self.x.len(), |i| {
            let (x, wx) = self.x[i];
            wx * self.v.iter().map(|(v, wv)| wv * f(x, *v)).sum::<f64>()
        })
        .into_iter()
        .sum()
    }
}

/// Checks nonnegativity, pair symmetry, unit mass of `g^{(1)}` and the
/// marginal consistency `g^{(k)} = ∫ g^{(k+1)} dx_{k+1} dv_{k+1}` for `k < K`.
pub fn admissibility_check(seq: &[Marginal], opts: &AdmissibilityOptions, exec: Exec) -> Result<AdmissibilityReport> {
    let kk = seq.len();
    if kk < 2 {
        return invalid("admissibility needs at least two marginals");
    }
    for (i, m) in seq.iter().enumerate() {
        if m.order() != i + 1 {
            return invalid(format!("marginal {} has order {}", i + 1, m.order()));
        }
    }
    let rule = SixRule::new(opts);
    let probes: Vec<Vec<Probe>> = (1..=kk)
        .map(|k| random_probes(k, opts.probes, opts.x_max, opts.v_max, opts.seed))
        .collect();

    let mut min_value = f64::INFINITY;
    let mut symmetry: f64 = 0.0;
    for (m, ps) in seq.iter().zip(&probes) {
        let k = m.order();
        let vals = exec.map(ps.len(), |i| m.eval(&ps[i].0, &ps[i].1));
        let scale = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        min_value = vals.iter().copied().fold(min_value, f64::min);
        for a in 0..k.saturating_sub(1) {
            let mut p: Vec<usize> = (0..k).collect();
            p.swap(a, a + 1);
            let swapped = m.permuted(&p)?;
            for ((xs, vs), val) in ps.iter().zip(&vals) {
                let d = (swapped.eval(xs, vs) - val).abs();
                symmetry = nan_max(symmetry, if scale > 0.0 { d / scale } else { d });
            }
        }
    }

    // Mixture components share fields across orders; integrate each once.
    let mut cache: Vec<(DistributionField, f64)> = Vec::new();
    let mut field_mass = |f: &DistributionField| -> f64 {
        if let Some((_, m)) = cache.iter().find(|(g, _)| g.same_as(f)) {
            return *m;
        }
        let m = rule.integrate_field(exec, f, opts);
        cache.push((f.clone(), m));
        m
    };
    let mass = match seq[0].components() {
        Some(comps) => comps.iter().map(|(w, f)| w * field_mass(&f[0])).sum(),
        None => rule.integrate(exec, |x, v| seq[0].eval(&[x], &[v])),
    };
    let unit_mass = (mass - 1.0).abs();

    let mut consistency = Vec::new();
    for k in 1..kk {
        let (lower, upper) = (&seq[k - 1], &seq[k]);
        let ps = &probes[k - 1];
        let comps = upper.components();
        let integrated: Vec<f64> = match &comps {
            Some(comps) => {
                let masses: Vec<f64> = comps
                    .iter()
                    .map(|(_, f)| field_mass(&f[k]))
                    .collect();
                ps.iter()
                    .map(|(xs, vs)| {
                        comps
                            .iter()
                            .zip(&masses)
                            .map(|((w, f), mass)| {
                                w * mass * (0..k).map(|i| f[i].eval(xs[i], vs[i])).product::<f64>()
                            })
                            .sum()
                    })
                    .collect()
            }
            None => ps
                .iter()
                .map(|(xs, vs)| {
                    let mut ax = xs.clone();
                    let mut av = vs.clone();
                    ax.push(Vec3::ZERO);
                    av.push(Vec3::ZERO);
                    rule.integrate(Exec::Sequential, |x, v| {
                        let (mut ax, mut av) = (ax.clone(), av.clone());
                        ax[k] = x;
                        av[k] = v;
                        upper.eval(&ax, &av)
                    })
                })
                .collect(),
        };
        let direct: Vec<f64> = ps.iter().map(|(xs, vs)| lower.eval(xs, vs)).collect();
        let scale = direct.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let worst = direct
            .iter()
            .zip(&integrated)
            .fold(0.0, |m, (a, b)| nan_max(m, (a - b).abs()));
        consistency.push(if scale > 0.0 { worst / scale } else { worst });
    }

    let velocity_masses: Vec<f64> = probes[0]
        .iter()
        .map(|(xs, _)| {
            rule.v
                .iter()
                .map(|(v, wv)| wv * seq[0].eval(&[xs[0]], &[*v]))
                .sum()
        })
        .collect();
    let velocity_mass_range = [
        velocity_masses.iter().copied().fold(f64::INFINITY, f64::min),
        velocity_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];

    let tol = opts.tolerance;
    let mut flagged = Vec::new();
    if !(min_value >= -tol) {
        flagged.push("nonnegativity".to_string());
    }
    if !(symmetry <= tol) {
        flagged.push("symmetry".to_string());
    }
    if !(unit_mass <= tol) {
        flagged.push("unit_mass".to_string());
    }
    for (i, c) in consistency.iter().enumerate() {
        if !(*c <= tol) {
            flagged.push(format!("consistency_{}", i + 1));
        }
    }
    Ok(AdmissibilityReport {
        options: *opts,
        orders: kk,
        min_value,
        symmetry,
        unit_mass,
        consistency,
        velocity_mass_range,
        pass: flagged.is_empty(),
        flagged,
    })
}

/// Time-indexed marginals `G^{(k)}(t) = Σ wᵢ gᵢ(t)^{⊗k}` assembled from
/// transported-frame solver outputs `gᵢ(t) = T^{−t} hᵢ(t)`.
#[derive(Debug, Clone)]
pub struct MarginalPath {
    pub weights: Vec<f64>,
    pub states: Vec<PicardState>,
}

impl MarginalPath {
    pub fn new(weights: Vec<f64>, states: Vec<PicardState>) -> Result<Self> {
        if weights.is_empty() || weights.len() != states.len() {
            return invalid("path needs one weight per solver state");
        }
        let times = &states[0].times;
        if states.iter().any(|s| &s.times != times) {
            return invalid("solver states have inconsistent time slices");
        }
        Ok(MarginalPath { weights, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.states[0].times
    }

    /// `G^{(k)}(s)` with linear interpolation between slices.
    pub fn at(&self, s: f64, k: usize) -> Result<Marginal> {
        let comps = self
            .states
            .iter()
            .map(|st| st.field_at(s))
            .collect::<Result<Vec<_>>>()?;
        if comps.len() == 1 && self.weights[0] == 1.0 {
            Marginal::tensor(comps[0].clone(), k)
        } else {
            Marginal::mixture(self.weights.clone(), comps, k)
        }
    }
}

/// Sup over probes and slice times of the weighted mild-hierarchy defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub k: usize,
    pub probes: usize,
    pub times: Vec<f64>,
    /// Weighted defect per slice time (sup over probes).
    pub per_time: Vec<f64>,
    pub max: f64,
}

/// Probes of order `k` at grid nodes of the solver grid (positions zero in
/// homogeneous mode).
pub fn node_probes(cfg: &SolverConfig, k: usize, count: usize, seed: u64) -> Vec<Probe> {
    let spec = cfg.grid;
    let n = spec.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + k as u64);
    (0..count)
        .map(|_| {
            (0..k)
                .map(|_| spec.node(rng.random_range(0..n)))
                .unzip()
        })
        .collect()
}

/// Weighted sup of
/// `G^{(k)}(tᵢ) − G^{(k)}_0 − ∫₀^{tᵢ} T_k^{−s} 𝔠^{k+2} T_{k+2}^s G^{(k+2)}(s) ds`
/// over probes and slice times, with the solver's time rule.
pub fn duhamel_residual(
    k: usize,
    path: &MarginalPath,
    f0: &Marginal,
    probes: &[Probe],
    cfg: &SolverConfig,
) -> Result<ResidualReport> {
    if k == 0 || f0.order() != k {
        return invalid(format!("initial marginal has order {}, expected {k}", f0.order()));
    }
    if probes.iter().any(|(xs, vs)| xs.len() != k || vs.len() != k) {
        return invalid("probe order differs from k");
    }
    let rule: &TimeRule = &cfg.time;
    if path.times() != rule.panel_edges().as_slice() {
        return invalid("path slices do not match the time rule");
    }
    let homogeneous = cfg.grid.is_homogeneous();
    let upper: Vec<Marginal> = rule
        .nodes()
        .iter()
        .map(|&s| path.at(s, k + 2))
        .collect::<Result<_>>()?;
    let slices: Vec<Marginal> = path.times().iter().map(|&t| path.at(t, k)).collect::<Result<_>>()?;
    let w = cfg.weights;
    let rows = cfg.exec().map(probes.len(), |ip| -> Result<Vec<f64>> {
        let (xs, vs) = &probes[ip];
        let xs: Vec<Vec3> = if homogeneous { vec![Vec3::ZERO; k] } else { xs.clone() };
        let weight = marginal_weight(&w, &xs, vs);
        let base = f0.eval(&xs, vs);
        let mut out = vec![weight * (slices[0].eval(&xs, vs) - base).abs()];
        let mut acc = 0.0;
        for (n, (&s, &ws)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            let frame = if homogeneous { Frame::Lab } else { Frame::Transported { s } };
            let coll = cfg.collision.clone().with_frame(frame).with_exec(Exec::Sequential);
            if !upper[n].is_zero() {
                acc += ws * hierarchy_collision_sum(&upper[n], &xs, vs, &coll)?;
            }
            let p = rule.panel_of()[n];
            if n + 1 == rule.nodes().len() || rule.panel_of()[n + 1] != p {
                out.push(weight * (slices[p + 1].eval(&xs, vs) - base - acc).abs());
            }
        }
        Ok(out)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let per_time: Vec<f64> = (0..slices.len())
        .map(|i| rows.iter().fold(0.0, |m, r| nan_max(m, r[i])))
        .collect();
    Ok(ResidualReport {
        k,
        probes: probes.len(),
        times: path.times().to_vec(),
        max: per_time.iter().copied().fold(0.0, nan_max),
        per_time,
    })
}

/// Output of [`mixture_solution`].
#[derive(Debug, Clone)]
pub struct MixtureSolution {
    pub path: MarginalPath,
    pub reports: Vec<SolveReport>,
    /// `‖hᵢ(0)‖` per component.
    pub component_norms: Vec<f64>,
    /// `e^{−μ′}`.
    pub component_bound: f64,
    /// `sup_{t, k ≤ k_max} e^{μk} ‖G^{(k)}(t)‖_k` on probe samples.
    pub hierarchy_norm: f64,
    pub bound_holds: bool,
}

/// Solves the equation per component and assembles `Σ wᵢ gᵢ(t)^{⊗k}`.
///
/// Each component must satisfy `‖hᵢ‖ ≤ e^{−μ′}` and lie in the solver's
/// regime. The bound `e^{μk}‖G^{(k)}(t)‖ ≤ 1` is evaluated on `probes`
/// random node tuples plus all diagonal tuples for `k ≤ k_max`.
pub fn mixture_solution(mix: &MixtureData, k_max: usize, cfg: &SolverConfig, probes: usize, seed: u64) -> Result<MixtureSolution> {
    mix.validate()?;
    if k_max == 0 {
        return invalid("k_max must be at least 1");
    }
    cfg.weights.validate_hierarchy()?;
    let bound = (-cfg.weights.mu_prime()).exp();
    let fields = mix.fields();
    let sampler = cfg.sampler();
    let mut norms = Vec::new();
    for (i, h) in fields.iter().enumerate() {
        let n = weighted_norm(h, &cfg.weights, &sampler)?;
        if n > bound {
            return Err(Error::Regime(format!(
                "component {i} has norm {n:.6e} above exp(-mu') = {bound:.6e}"
            )));
        }
        norms.push(n);
    }
    let solved = cfg.exec().map(fields.len(), |i| picard_solve(&fields[i], cfg));
    let (states, reports): (Vec<_>, Vec<_>) = solved.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let path = MarginalPath::new(mix.weights.clone(), states)?;

    let spec = cfg.grid;
    let w = cfg.weights;
    let mut hierarchy_norm: f64 = 0.0;
    for k in 1..=k_max {
        let mut ps = node_probes(cfg, k, probes, seed);
        ps.extend((0..spec.node_count()).map(|i| {
            let (x, v) = spec.node(i);
            (vec![x; k], vec![v; k])
        }));
        for &t in path.times() {
            let m = path.at(t, k)?;
            let n = marginal_norm(&m, &w, &ps, cfg.exec());
            hierarchy_norm = hierarchy_norm.max((w.mu * k as f64).exp() * n);
        }
    }
    Ok(MixtureSolution {
        path,
        reports,
        component_norms: norms,
        component_bound: bound,
        bound_holds: hierarchy_norm <= 1.0,
        hierarchy_norm,
    })
}

/// Settings for [`verify_apriori_hierarchy`].
#[derive(Debug, Clone)]
pub struct AprioriHierarchyOptions {
    pub collision: CollisionConfig,
    pub time: TimeRule,
    /// Probe points of order `k`.
    pub probes: Vec<Probe>,
    /// Single-particle sample set for the `(k+2)`-particle norm.
    pub sampler: Sampler,
}

/// Sampled `‖m‖_{k,p,q,α,β}`: exact tensorization for tensor powers and
/// labeled products, random tuples of sampler points otherwise.
pub fn sampled_marginal_norm(m: &Marginal, w: &WeightParams, sampler: &Sampler, tuples: usize) -> Result<f64> {
    if let Some(comps) = m.components() {
        if comps.len() == 1 {
            let (weight, factors) = &comps[0];
            let mut n = weight.abs();
            for f in factors {
                n *= weighted_norm(f, w, sampler)?;
            }
            return Ok(n);
        }
    }
    let pts = sampler.points();
    if pts.is_empty() {
        return invalid("sampler has no points");
    }
    let k = m.order();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let probes: Vec<Probe> = (0..tuples)
        .map(|_| (0..k).map(|_| pts[rng.random_range(0..pts.len())]).unzip())
        .chain(pts.iter().map(|&(x, v)| (vec![x; k], vec![v; k])))
        .collect();
    Ok(marginal_norm(m, w, &probes, sampler.exec))
}

/// A priori estimate for the hierarchy: with `g^{(k+2)}(s) = T^s m`,
/// checks `‖∫₀ᵗ T_k^{−s} 𝔠^λ_{j,k+2} g^{(k+2)}(s) ds‖_k ≤ C ‖m‖_{k+2}` at the
/// probes and every panel edge.
pub fn verify_apriori_hierarchy(
    k: usize,
    j: usize,
    term: Term,
    m: &Marginal,
    w: &WeightParams,
    opts: &AprioriHierarchyOptions,
) -> Result<BoundReport> {
    if m.order() != k + 2 || j == 0 || j > k {
        return invalid(format!("need a marginal of order {} and 1 <= j <= {k}", k + 2));
    }
    if opts.probes.iter().any(|(xs, vs)| xs.len() != k || vs.len() != k) {
        return invalid("probe order differs from k");
    }
    let c = constant_c(w)?;
    let norm = sampled_marginal_norm(m, w, &opts.sampler, 4096)?;
    let rhs = c * norm;
    let rule = &opts.time;
    let rows = opts.collision.exec.map(opts.probes.len(), |ip| -> Result<(f64, serde_json::Value)> {
        let (xs, vs) = &opts.probes[ip];
        let weight = marginal_weight(w, xs, vs);
        let mut acc = 0.0;
        let mut peak: f64 = 0.0;
        for (n, (&s, &ws)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            let coll = opts.collision.clone().with_frame(Frame::Transported { s });
            acc += ws * hierarchy_collision(term, j, m, xs, vs, &coll)?;
            let p = rule.panel_of()[n];
            if n + 1 == rule.nodes().len() || rule.panel_of()[n + 1] != p {
                peak = peak.max(weight * acc.abs());
            }
        }
        let ratio = if rhs == 0.0 {
            if peak == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            peak / rhs
        };
        Ok((ratio, json!({"x": xs, "v": vs, "lhs": peak, "rhs": rhs})))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::from_ratios(
        "apriori-hierarchy",
        json!({
            "k": k,
            "j": j,
            "term": term,
            "weights": w,
            "horizon": rule.horizon(),
            "panels": rule.panels(),
            "probes": opts.probes.len(),
            "norm": norm,
            "constant": c,
            "sampler": opts.sampler,
        }),
        rows,
    ))
}
