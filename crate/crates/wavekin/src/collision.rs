//! The 4-wave collision operator in its gain/loss form.
//!
//! With the sphere parametrization of the resonant manifold every
//! δ-constrained integral becomes
//!
//! ```text
//! ∫ δ(Σ)δ(Ω) F dv₁dv₂dv₃ = 2⁻³ ∫∫ |v − v₁| F(v, v₁, v₂(σ), v₃(σ)) dσ dv₁,
//! ```
//!
//! evaluated with a [`BoxRule`] in `v₁` and a [`SphereRule`] in `σ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::phase::{DistributionField, GridField, GridSpec, Vec3, WeightParams};
use crate::quadrature::{
    integrate_line, BoxRule, LineDomain, LineRule, SphereRule, SphereSpec,
};

/// One of the four trilinear forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// `g(v₁) h(v₂) l(v₃)`.
    L0,
    /// `g(v) h(v₂) l(v₃)`.
    L1,
    /// `g(v) h(v₁) l(v₃)`.
    L2,
    /// `g(v) h(v₁) l(v₂)`.
    L3,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::L0, Term::L1, Term::L2, Term::L3];

    pub fn from_index(j: usize) -> Result<Term> {
        match j {
            0 => Ok(Term::L0),
            1 => Ok(Term::L1),
            2 => Ok(Term::L2),
            3 => Ok(Term::L3),
            _ => invalid(format!("collision term index must be 0..=3, got {j}")),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `+1` for the gain terms, `−1` for the loss terms.
    pub fn sign(self) -> f64 {
        match self {
            Term::L0 | Term::L1 => 1.0,
            Term::L2 | Term::L3 => -1.0,
        }
    }

    /// Velocities at which `(g, h, l)` are evaluated, given `(v, v₁, v₂, v₃)`.
    #[inline(always)]
    pub fn pattern(self, v: Vec3, v1: Vec3, v2: Vec3, v3: Vec3) -> [Vec3; 3] {
        match self {
            Term::L0 => [v1, v2, v3],
            Term::L1 => [v, v2, v3],
            Term::L2 => [v, v1, v3],
            Term::L3 => [v, v1, v2],
        }
    }
}

/// Frame in which the operator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Frame {
    /// `C[f](x, v)`.
    #[default]
    Lab,
    /// `(T^{-s} C[T^s f])(x, v)`: the velocity function seen at `(x, v)` is
    /// `w ↦ f(x + s(v − w), w)`.
    Transported { s: f64 },
}

/// Quadrature and execution settings for collision integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionConfig {
    pub box_rule: BoxRule,
    pub sphere: SphereRule,
    pub frame: Frame,
    pub exec: Exec,
}

impl CollisionConfig {
    pub fn new(box_rule: BoxRule, sphere: SphereRule) -> Self {
        CollisionConfig {
            box_rule,
            sphere,
            frame: Frame::Lab,
            exec: Exec::default(),
        }
    }

    /// Gauss–Legendre `12³` on `[-V, V]³` with the default sphere rule.
    pub fn default_for(v_max: f64) -> Result<Self> {
        Ok(CollisionConfig::new(BoxRule::gauss(v_max, 12)?, SphereSpec::default().build()?))
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

/// `2⁻³ ∑ w₁ ∑ w_σ |v − v₁| g(·) h(·) l(·)` with the argument pattern of
/// `term`, for velocity functions at a fixed position.
pub fn eval_l<G, H, L>(term: Term, g: G, h: H, l: L, v: Vec3, cfg: &CollisionConfig) -> f64
where
    G: Fn(Vec3) -> f64,
    H: Fn(Vec3) -> f64,
    L: Fn(Vec3) -> f64,
{
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
        match term {
            Term::L0 => {
                let g1 = g(v1);
                if g1 != 0.0 {
                    for (&sg, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                        let a = sg * half;
                        s += ws * h(mid + a) * l(mid - a);
                    }
                    s *= g1;
                }
            }
            Term::L1 => {
                for (&sg, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                    let a = sg * half;
                    s += ws * h(mid + a) * l(mid - a);
                }
            }
            Term::L2 => {
                let h1 = h(v1);
                if h1 != 0.0 {
                    for (&sg, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                        s += ws * l(mid - sg * half);
                    }
                    s *= h1;
                }
            }
            Term::L3 => {
                let h1 = h(v1);
                if h1 != 0.0 {
                    for (&sg, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                        s += ws * l(mid + sg * half);
                    }
                    s *= h1;
                }
            }
        }
        total += w1 * r * s;
    }
    let total = 0.125 * total;
    match term {
        Term::L0 => total,
        _ => g(v) * total,
    }
}

/// [`eval_l`] with the term given by index; indices outside `0..=3` are an error.
pub fn eval_l_index<G, H, L>(j: usize, g: G, h: H, l: L, v: Vec3, cfg: &CollisionConfig) -> Result<f64>
where
    G: Fn(Vec3) -> f64,
    H: Fn(Vec3) -> f64,
    L: Fn(Vec3) -> f64,
{
    Ok(eval_l(Term::from_index(j)?, g, h, l, v, cfg))
}

/// The velocity function seen at `(x, v)` in the configured frame.
#[inline]
pub fn local_view<'a>(f: &'a DistributionField, x: Vec3, v: Vec3, frame: Frame) -> impl Fn(Vec3) -> f64 + 'a {
    let s = match frame {
        Frame::Lab => 0.0,
        Frame::Transported { s } => s,
    };
    move |w: Vec3| {
        if s == 0.0 {
            f.eval(x, w)
        } else {
            f.eval(x + (v - w) * s, w)
        }
    }
}

/// `L_j(g, h, l)(x, v)` for fields, honoring the frame.
pub fn eval_l_field(
    j: usize,
    g: &DistributionField,
    h: &DistributionField,
    l: &DistributionField,
    x: Vec3,
    v: Vec3,
    cfg: &CollisionConfig,
) -> Result<f64> {
    eval_l_index(
        j,
        local_view(g, x, v, cfg.frame),
        local_view(h, x, v, cfg.frame),
        local_view(l, x, v, cfg.frame),
        v,
        cfg,
    )
}

/// Value of `C[f]` together with its gain part `L₀ + L₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionValue {
    pub total: f64,
    pub gain: f64,
}

/// `C[f]` for a velocity function, with the gain part.
///
/// The integrand `f₂f₃(f₁ + f) − f f₁(f₂ + f₃)` is symmetric under
/// `v₂ ↔ v₃`, i.e. under `σ → −σ`; on antipodal rules only one node per
/// pair is visited, with doubled weight.
pub fn eval_c_local<F: Fn(Vec3) -> f64>(f: F, v: Vec3, cfg: &CollisionConfig) -> CollisionValue {
    let sphere = &cfg.sphere;
    let fv = f(v);
    let (mut total, mut gain) = (0.0, 0.0);
    let kernel = |mid: Vec3, a: Vec3, f1: f64| {
        let f2 = f(mid + a);
        let f3 = f(mid - a);
        let g = f2 * f3 * (f1 + fv);
        (g - fv * f1 * (f2 + f3), g)
    };
    for (&v1, &w1) in cfg.box_rule.nodes().iter().zip(cfg.box_rule.weights()) {
        let r = (v - v1).norm();
        if r == 0.0 {
            continue;
        }
        let mid = (v + v1) * 0.5;
        let half = 0.5 * r;
        let f1 = f(v1);
        let (mut sc, mut sg) = (0.0, 0.0);
        if sphere.is_antipodal() {
            for &i in sphere.representatives() {
                let (c, g) = kernel(mid, sphere.nodes()[i] * half, f1);
                let ws = 2.0 * sphere.weights()[i];
                sc += ws * c;
                sg += ws * g;
            }
        } else {
            for (&sg_node, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                let (c, g) = kernel(mid, sg_node * half, f1);
                sc += ws * c;
                sg += ws * g;
            }
        }
        total += w1 * r * sc;
        gain += w1 * r * sg;
    }
    CollisionValue {
        total: 0.125 * total,
        gain: 0.125 * gain,
    }
}

/// `C[f](x, v)` with all factors at the same position (in the configured frame).
pub fn eval_c(f: &DistributionField, x: Vec3, v: Vec3, cfg: &CollisionConfig) -> f64 {
    eval_c_parts(f, x, v, cfg).total
}

/// [`eval_c`] with the gain part.
pub fn eval_c_parts(f: &DistributionField, x: Vec3, v: Vec3, cfg: &CollisionConfig) -> CollisionValue {
    eval_c_local(local_view(f, x, v, cfg.frame), v, cfg)
}

/// Node-wise `C[f]` on `spec`, parallel over output nodes.
pub fn collision_field(f: &DistributionField, spec: &GridSpec, cfg: &CollisionConfig) -> Result<GridField> {
    spec.validate()?;
    let spec = *spec;
    let values = cfg.exec.map(spec.node_count(), |i| {
        let (x, v) = spec.node(i);
        eval_c(f, x, v, cfg)
    });
    GridField::new(spec, values)
}

/// Node-wise `C[f]` and gain part on `spec`.
pub fn collision_field_parts(f: &DistributionField, spec: &GridSpec, cfg: &CollisionConfig) -> Result<Vec<CollisionValue>> {
    spec.validate()?;
    let spec = *spec;
    Ok(cfg.exec.map(spec.node_count(), |i| {
        let (x, v) = spec.node(i);
        eval_c_parts(f, x, v, cfg)
    }))
}

/// Symmetrized weak form and the magnitude it is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakForm {
    /// `(1/4) ∫∫∫ B (φ + φ₁ − φ₂ − φ₃)`.
    pub value: f64,
    /// The same quadrature with every term in absolute value.
    pub scale: f64,
}

impl WeakForm {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.value.abs() / self.scale
        }
    }
}

/// `∫ C[f] φ dv = (1/4) ∫ B(v, v₁, σ) (φ + φ₁ − φ₂ − φ₃)` with
/// `B = 2⁻³|v − v₁|(f₁f₂f₃ + f f₂f₃ − f f₁f₃ − f f₁f₂)`. Both `v` and `v₁`
/// run over the box rule.
pub fn weak_form_parts<P: Fn(Vec3) -> f64 + Sync>(
    f: &DistributionField,
    x: Vec3,
    phi: P,
    cfg: &CollisionConfig,
) -> WeakForm {
    let bx = &cfg.box_rule;
    let sphere = &cfg.sphere;
    let rows = cfg.exec.map(bx.len(), |iv| {
        let v = bx.nodes()[iv];
        let fv = f.eval(x, v);
        let pv = phi(v);
        let (mut val, mut sc) = (0.0, 0.0);
        for (&v1, &w1) in bx.nodes().iter().zip(bx.weights()) {
            let r = (v - v1).norm();
            if r == 0.0 {
                continue;
            }
            let mid = (v + v1) * 0.5;
            let half = 0.5 * r;
            let f1 = f.eval(x, v1);
            let p1 = phi(v1);
            let (mut a, mut b) = (0.0, 0.0);
            for (&s, &ws) in sphere.nodes().iter().zip(sphere.weights()) {
                let d = s * half;
                let (v2, v3) = (mid + d, mid - d);
                let f2 = f.eval(x, v2);
                let f3 = f.eval(x, v3);
                let bracket = f2 * f3 * (f1 + fv) - fv * f1 * (f2 + f3);
                let test = pv + p1 - phi(v2) - phi(v3);
                a += ws * bracket * test;
                b += ws * bracket.abs() * (pv.abs() + p1.abs() + phi(v2).abs() + phi(v3).abs());
            }
            val += w1 * r * a;
            sc += w1 * r * b;
        }
        (bx.weights()[iv] * val, bx.weights()[iv] * sc)
    });
    let (value, scale) = rows.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    WeakForm {
        value: 0.25 * 0.125 * value,
        scale: 0.25 * 0.125 * scale,
    }
}

/// `∫ C[f](x, v) φ(v) dv` through the symmetrized weak form.
pub fn weak_form_average<P: Fn(Vec3) -> f64 + Sync>(
    f: &DistributionField,
    x: Vec3,
    phi: P,
    cfg: &CollisionConfig,
) -> f64 {
    weak_form_parts(f, x, phi, cfg).value
}

/// `∫ C[f](x, v) φ(v) dv` from node values by the grid's integration weights.
pub fn strong_moment<P: Fn(Vec3) -> f64>(c: &GridField, ix: usize, phi: P) -> f64 {
    let spec = c.spec();
    let nv = spec.n_velocity();
    (0..nv)
        .map(|iv| spec.v_weight(iv) * phi(spec.v_node(iv)) * c.values()[ix * nv + iv])
        .sum()
}

/// Upper bound on the part of any `|L_j(f,f,f)(v)|` coming from `v₁`
/// outside the box, for `‖f‖_{p,q,α,β} ≤ norm`.
///
/// Every pattern carries a factor decaying in `v₁`: either `f(v₁)` or,
/// since `|v₂|² + |v₃|² = |v|² + |v₁|²`, a factor at speed `≥ |v₁|/√2`.
/// The result is `∞` when the bound diverges (`q ≤ 4`).
pub fn truncation_tail_bound(v: Vec3, norm: f64, w: &WeightParams, v_max: f64) -> Result<f64> {
    w.validate()?;
    if w.q <= 4.0 {
        return Ok(f64::INFINITY);
    }
    let speed = v.norm();
    let decay = |r: f64| (1.0 + 0.5 * (w.beta * r).powi(2)).powf(-0.5 * w.q);
    let rule = LineRule::new(LineDomain::HalfLine, 96, LineRule::grading_for(w.q - 3.0), v_max, v_max.max(1.0))?;
    let radial = integrate_line(&rule, |r| r * r * (speed + r) * decay(r));
    // 2⁻³ · 4π (sphere) · 4π (shell) · sup of the two remaining factors.
    let per_term = 0.125 * 4.0 * std::f64::consts::PI * 4.0 * std::f64::consts::PI * radial * norm.powi(3);
    Ok(4.0 * per_term)
}
