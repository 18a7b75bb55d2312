//! Phase-space fields on R³×R³, polynomial weights, weighted sup-norms and
//! the free-transport operator.
//!
//! A [`DistributionField`] is either formula-backed (an exact closure) or
//! grid-backed (node values with multilinear interpolation and zero
//! extension outside the box). Free transport `T^s f(x,v) = f(x − s v, v)` is
//! kept symbolic as an accumulated shift, so transport composes exactly and
//! never resamples a grid.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::hierarchy::Marginal;

/// A point of R³, used for positions, velocities and unit vectors alike.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    /// Unit vector along axis `i` (0, 1 or 2).
    pub fn axis(i: usize) -> Self {
        let mut a = [0.0; 3];
        a[i] = 1.0;
        a.into()
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    /// `self / |self|`, or `None` for the zero vector.
    pub fn unit(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Two unit vectors completing `self` (assumed unit) to a right-handed
    /// orthonormal frame `(e1, e2, self)`.
    pub fn orthonormal_frame(self) -> (Vec3, Vec3) {
        let helper = if self.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let e1 = (helper - self * helper.dot(self)).unit().expect("helper is not parallel");
        let e2 = self.cross(e1);
        (e1, e2)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

/// Japanese bracket `⟨y⟩ = √(1 + |y|²)`.
#[inline]
pub fn bracket(y: Vec3) -> f64 {
    (1.0 + y.norm2()).sqrt()
}

/// `⟨y⟩^e`, computed without the intermediate square root.
#[inline]
pub fn bracket_pow(y: Vec3, e: f64) -> f64 {
    (1.0 + y.norm2()).powf(0.5 * e)
}

/// Weight parameters of the norms `‖f‖ = sup ⟨αx⟩^p ⟨βv⟩^q |f|`, together
/// with the hierarchy exponent `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            p: 2.0,
            q: 4.0,
            alpha: 1.0,
            beta: 1.0,
            mu: 0.0,
        }
    }
}

impl WeightParams {
    pub fn new(p: f64, q: f64, alpha: f64, beta: f64) -> Result<Self> {
        let w = WeightParams {
            p,
            q,
            alpha,
            beta,
            mu: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    /// Checks `p > 1`, `q > 3`, `α, β > 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let all = [self.p, self.q, self.alpha, self.beta, self.mu];
        if all.iter().any(|c| !c.is_finite()) {
            return invalid("weight parameters must be finite");
        }
        if self.p <= 1.0 {
            return invalid(format!("p must exceed 1, got {}", self.p));
        }
        if self.q <= 3.0 {
            return invalid(format!("q must exceed 3, got {}", self.q));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return invalid("alpha and beta must be positive");
        }
        Ok(())
    }

    /// Checks the hierarchy condition `e^{2μ} > 32 C_{p,q,α,β}`.
    pub fn validate_hierarchy(&self) -> Result<()> {
        self.validate()?;
        let c = crate::bounds::constant_c(self)?;
        if (2.0 * self.mu).exp() <= 32.0 * c {
            return invalid(format!(
                "hierarchy runs need exp(2 mu) > 32 C = {:.6e}, got mu = {}",
                32.0 * c,
                self.mu
            ));
        }
        Ok(())
    }

    /// `μ′ = μ + ln 2`, the exponent required of the initial data.
    pub fn mu_prime(&self) -> f64 {
        self.mu + std::f64::consts::LN_2
    }

    /// Smallest `μ` with `e^{2μ} = 32 C` times `(1 + margin)`.
    pub fn with_hierarchy_mu(mut self, margin: f64) -> Result<Self> {
        let c = crate::bounds::constant_c(&self)?;
        self.mu = 0.5 * (32.0 * c * (1.0 + margin)).ln();
        Ok(self)
    }

    /// `⟨αx⟩^p`.
    #[inline]
    pub fn weight_x(&self, x: Vec3) -> f64 {
        (1.0 + self.alpha * self.alpha * x.norm2()).powf(0.5 * self.p)
    }

    /// `⟨βv⟩^q`.
    #[inline]
    pub fn weight_v(&self, v: Vec3) -> f64 {
        (1.0 + self.beta * self.beta * v.norm2()).powf(0.5 * self.q)
    }

    /// `⟨αx⟩^p ⟨βv⟩^q`.
    #[inline]
    pub fn weight(&self, x: Vec3, v: Vec3) -> f64 {
        self.weight_x(x) * self.weight_v(v)
    }
}

/// Node placement along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridLayout {
    /// `n` nodes including both box faces.
    Uniform,
    /// `n` nodes at the centers of `n` equal cells.
    CellCentered,
}

/// One axis of a grid: `n` equispaced nodes inside `[-half, half]`.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub half: f64,
    pub n: usize,
    pub first: f64,
    pub step: f64,
    pub layout: GridLayout,
}

impl Axis {
    pub fn new(half: f64, n: usize, layout: GridLayout) -> Self {
        let (first, step) = match layout {
            GridLayout::Uniform => (-half, 2.0 * half / (n as f64 - 1.0)),
            GridLayout::CellCentered => {
                let h = 2.0 * half / n as f64;
                (-half + 0.5 * h, h)
            }
        };
        Axis {
            half,
            n,
            first,
            step,
            layout,
        }
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.first + self.step * i as f64
    }

    /// Cell index and fractional offset of `c`, or `None` outside the box.
    ///
    /// Inside the box but beyond the outermost node the nearest node value is
    /// used (clamping); outside the box the field is zero. Offsets within
    /// `1e-10` of a node snap to it so that node queries are exact.
    #[inline]
    pub fn locate(&self, c: f64) -> Option<(usize, f64)> {
        if !(c.abs() <= self.half * (1.0 + 1e-12)) {
            return None;
        }
        let top = (self.n - 1) as f64;
        let mut u = ((c - self.first) / self.step).clamp(0.0, top);
        let r = u.round();
        if (u - r).abs() <= 1e-10 {
            u = r;
        }
        let i = (u.floor() as usize).min(self.n - 2);
        Some((i, u - i as f64))
    }

    /// 1-D integration weights consistent with the layout (midpoint rule for
    /// cell-centered grids, trapezoid rule for uniform grids).
    pub fn integration_weights(&self) -> Vec<f64> {
        let mut w = vec![self.step; self.n];
        if self.layout == GridLayout::Uniform {
            w[0] *= 0.5;
            w[self.n - 1] *= 0.5;
        }
        w
    }
}

/// Discretization of a truncated phase-space box `[-X,X]³ × [-V,V]³`.
///
/// `n_x = 1` selects the spatially homogeneous mode: fields do not depend on
/// `x`, the single spatial node sits at the origin, and norms use `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_max: f64,
    pub v_max: f64,
    pub n_x: usize,
    pub n_v: usize,
    pub layout: GridLayout,
}

impl GridSpec {
    pub fn new(x_max: f64, v_max: f64, n_x: usize, n_v: usize, layout: GridLayout) -> Result<Self> {
        let g = GridSpec {
            x_max,
            v_max,
            n_x,
            n_v,
            layout,
        };
        g.validate()?;
        Ok(g)
    }

    /// Spatially homogeneous grid with `n_v` velocity nodes per axis.
    pub fn homogeneous(v_max: f64, n_v: usize, layout: GridLayout) -> Result<Self> {
        GridSpec::new(1.0, v_max, 1, n_v, layout)
    }

    /// Box half-widths chosen so the weights' tails fall below `tail_tol`:
    /// `⟨βV⟩^{-q} ≤ tail_tol` and `⟨αX⟩^{-p} ≤ tail_tol`.
    pub fn from_tail(w: &WeightParams, tail_tol: f64, n_x: usize, n_v: usize, layout: GridLayout) -> Result<Self> {
        w.validate()?;
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return invalid("tail tolerance must lie in (0, 1)");
        }
        let v_max = (tail_tol.powf(-2.0 / w.q) - 1.0).sqrt() / w.beta;
        let x_max = (tail_tol.powf(-2.0 / w.p) - 1.0).sqrt() / w.alpha;
        GridSpec::new(x_max, v_max, n_x, n_v, layout)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > 0.0 && self.x_max.is_finite() && self.v_max > 0.0 && self.v_max.is_finite()) {
            return invalid("box half-widths must be positive and finite");
        }
        if self.n_v < 2 {
            return invalid("need at least 2 velocity nodes per axis");
        }
        if self.n_x == 0 {
            return invalid("n_x must be 1 (homogeneous) or at least 2");
        }
        Ok(())
    }

    /// Velocity tail `⟨βV⟩^{-q}` left out of the box.
    pub fn velocity_tail(&self, w: &WeightParams) -> f64 {
        (1.0 + (w.beta * self.v_max).powi(2)).powf(-0.5 * w.q)
    }

    /// Spatial tail `⟨αX⟩^{-p}`; zero in homogeneous mode.
    pub fn spatial_tail(&self, w: &WeightParams) -> f64 {
        if self.is_homogeneous() {
            0.0
        } else {
            (1.0 + (w.alpha * self.x_max).powi(2)).powf(-0.5 * w.p)
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.n_x == 1
    }

    pub fn x_axis(&self) -> Axis {
        Axis::new(self.x_max, self.n_x.max(2), self.layout)
    }

    pub fn v_axis(&self) -> Axis {
        Axis::new(self.v_max, self.n_v, self.layout)
    }

    pub fn x_nodes_per_axis(&self) -> usize {
        self.n_x
    }

    pub fn n_space(&self) -> usize {
        self.n_x.pow(3)
    }

    pub fn n_velocity(&self) -> usize {
        self.n_v.pow(3)
    }

    pub fn node_count(&self) -> usize {
        self.n_space() * self.n_velocity()
    }

    /// Spatial node with flat index `ix` (row-major, last axis fastest).
    pub fn x_node(&self, ix: usize) -> Vec3 {
        if self.is_homogeneous() {
            return Vec3::ZERO;
        }
        let a = self.x_axis();
        let n = self.n_x;
        Vec3::new(a.coord(ix / (n * n)), a.coord((ix / n) % n), a.coord(ix % n))
    }

    /// Velocity node with flat index `iv`.
    pub fn v_node(&self, iv: usize) -> Vec3 {
        let a = self.v_axis();
        let n = self.n_v;
        Vec3::new(a.coord(iv / (n * n)), a.coord((iv / n) % n), a.coord(iv % n))
    }

    /// Phase-space node with flat index `i = ix · n_v³ + iv`.
    pub fn node(&self, i: usize) -> (Vec3, Vec3) {
        let nv = self.n_velocity();
        (self.x_node(i / nv), self.v_node(i % nv))
    }

    /// Quadrature weight of spatial node `ix` (1 in homogeneous mode).
    pub fn x_weight(&self, ix: usize) -> f64 {
        if self.is_homogeneous() {
            return 1.0;
        }
        let w = self.x_axis().integration_weights();
        let n = self.n_x;
        w[ix / (n * n)] * w[(ix / n) % n] * w[ix % n]
    }

    /// Quadrature weight of velocity node `iv`.
    pub fn v_weight(&self, iv: usize) -> f64 {
        let w = self.v_axis().integration_weights();
        let n = self.n_v;
        w[iv / (n * n)] * w[(iv / n) % n] * w[iv % n]
    }
}

/// Node values on a [`GridSpec`], stored row-major as
/// `(x₁, x₂, x₃, v₁, v₂, v₃)` with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<f64>,
    x_axis: AxisCache,
    v_axis: AxisCache,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AxisCache {
    half: f64,
    n: usize,
    first: f64,
    inv_step: f64,
}

impl AxisCache {
    fn from_axis(a: &Axis) -> Self {
        AxisCache {
            half: a.half,
            n: a.n,
            first: a.first,
            inv_step: 1.0 / a.step,
        }
    }

    #[inline(always)]
    fn locate(&self, c: f64) -> Option<(usize, f64)> {
        if !(c.abs() <= self.half * (1.0 + 1e-12)) {
            return None;
        }
        let top = (self.n - 1) as f64;
        let mut u = ((c - self.first) * self.inv_step).clamp(0.0, top);
        let r = u.round();
        if (u - r).abs() <= 1e-10 {
            u = r;
        }
        let i = (u as usize).min(self.n - 2);
        Some((i, u - i as f64))
    }
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.node_count() {
            return invalid(format!(
                "grid expects {} values, got {}",
                spec.node_count(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(GridField {
            spec,
            values,
            x_axis: AxisCache::from_axis(&spec.x_axis()),
            v_axis: AxisCache::from_axis(&spec.v_axis()),
        })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self> {
        GridField::new(spec, vec![0.0; spec.node_count()])
    }

    /// Samples `f` at every node (in parallel when `exec` allows).
    pub fn from_fn<F>(spec: GridSpec, exec: Exec, f: F) -> Result<Self>
    where
        F: Fn(Vec3, Vec3) -> f64 + Sync + Send,
    {
        spec.validate()?;
        let values = exec.map(spec.node_count(), |i| {
            let (x, v) = spec.node(i);
            f(x, v)
        });
        GridField::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multilinear interpolation in the 6-D cell containing `(x, v)`; zero
    /// outside the box. Homogeneous grids ignore `x`.
    #[inline]
    pub fn interpolate(&self, x: Vec3, v: Vec3) -> f64 {
        let nv = self.v_axis.n;
        let Some(vc) = self.v_corners(v) else {
            return 0.0;
        };
        if self.spec.is_homogeneous() {
            return Self::sum_corners(&self.values, 0, &vc);
        }
        let mut xc = [(0usize, 0.0f64); 8];
        let nx = self.x_axis.n;
        let (Some(a), Some(b), Some(c)) = (
            self.x_axis.locate(x.x),
            self.x_axis.locate(x.y),
            self.x_axis.locate(x.z),
        ) else {
            return 0.0;
        };
        let block = nv * nv * nv;
        let stride = [nx * nx * block, nx * block, block];
        let mut k = 0;
        for (da, wa) in [(0, 1.0 - a.1), (1, a.1)] {
            for (db, wb) in [(0, 1.0 - b.1), (1, b.1)] {
                for (dc, wc) in [(0, 1.0 - c.1), (1, c.1)] {
                    let off = (a.0 + da) * stride[0] + (b.0 + db) * stride[1] + (c.0 + dc) * stride[2];
                    xc[k] = (off, wa * wb * wc);
                    k += 1;
                }
            }
        }
        let mut s = 0.0;
        for &(off, w) in &xc {
            if w != 0.0 {
                s += w * Self::sum_corners(&self.values, off, &vc);
            }
        }
        s
    }

    #[inline(always)]
    fn v_corners(&self, v: Vec3) -> Option<[(usize, f64); 8]> {
        let n = self.v_axis.n;
        let a = self.v_axis.locate(v.x)?;
        let b = self.v_axis.locate(v.y)?;
        let c = self.v_axis.locate(v.z)?;
        let base = a.0 * n * n + b.0 * n + c.0;
        let (fa, fb, fc) = (a.1, b.1, c.1);
        let (ga, gb, gc) = (1.0 - fa, 1.0 - fb, 1.0 - fc);
        let nn = n * n;
        Some([
            (base, ga * gb * gc),
            (base + 1, ga * gb * fc),
            (base + n, ga * fb * gc),
            (base + n + 1, ga * fb * fc),
            (base + nn, fa * gb * gc),
            (base + nn + 1, fa * gb * fc),
            (base + nn + n, fa * fb * gc),
            (base + nn + n + 1, fa * fb * fc),
        ])
    }

    #[inline(always)]
    fn sum_corners(values: &[f64], off: usize, vc: &[(usize, f64); 8]) -> f64 {
        let mut s = 0.0;
        for &(i, w) in vc {
            if w != 0.0 {
                s += w * values[off + i];
            }
        }
        s
    }

    /// Pointwise `a·self + b·other` on the same grid.
    pub fn axpby(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        if self.spec != other.spec {
            return invalid("grid specs differ");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridField::new(self.spec, values)
    }
}

type FormulaFn = dyn Fn(Vec3, Vec3) -> f64 + Send + Sync;

enum Kind {
    Zero,
    Formula(Box<FormulaFn>),
    Grid(GridField),
}

/// A scalar function `f(x, v)` on phase space.
///
/// Cloning is cheap (shared backing). Fields are immutable and safe to
/// evaluate from many threads.
#[derive(Clone)]
pub struct DistributionField {
    kind: Arc<Kind>,
    shift: f64,
}

impl fmt::Debug for DistributionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &*self.kind {
            Kind::Zero => "zero".to_string(),
            Kind::Formula(_) => "formula".to_string(),
            Kind::Grid(g) => format!("grid {:?}", g.spec()),
        };
        f.debug_struct("DistributionField")
            .field("kind", &kind)
            .field("shift", &self.shift)
            .finish()
    }
}

impl DistributionField {
    pub fn zero() -> Self {
        DistributionField {
            kind: Arc::new(Kind::Zero),
            shift: 0.0,
        }
    }

    pub fn formula<F>(f: F) -> Self
    where
        F: Fn(Vec3, Vec3) -> f64 + Send + Sync + 'static,
    {
        DistributionField {
            kind: Arc::new(Kind::Formula(Box::new(f))),
            shift: 0.0,
        }
    }

    /// An `x`-independent field `f(x, v) = h(v)`.
    pub fn velocity_only<F>(h: F) -> Self
    where
        F: Fn(Vec3) -> f64 + Send + Sync + 'static,
    {
        DistributionField::formula(move |_, v| h(v))
    }

    pub fn grid(g: GridField) -> Self {
        DistributionField {
            kind: Arc::new(Kind::Grid(g)),
            shift: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: Vec3, v: Vec3) -> f64 {
        let x = if self.shift == 0.0 { x } else { x - v * self.shift };
        match &*self.kind {
            Kind::Zero => 0.0,
            Kind::Formula(f) => f(x, v),
            Kind::Grid(g) => g.interpolate(x, v),
        }
    }

    /// Free transport `(x, v) ↦ f(x − s v, v)`.
    pub fn transport(&self, s: f64) -> Self {
        DistributionField {
            kind: Arc::clone(&self.kind),
            shift: self.shift + s,
        }
    }

    /// Accumulated transport shift.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn is_zero(&self) -> bool {
        matches!(&*self.kind, Kind::Zero)
    }

    pub fn is_formula(&self) -> bool {
        matches!(&*self.kind, Kind::Formula(_))
    }

    /// The backing grid, if grid-backed.
    pub fn backing_grid(&self) -> Option<&GridField> {
        match &*self.kind {
            Kind::Grid(g) => Some(g),
            _ => None,
        }
    }

    /// True when both handles share the same backing and shift.
    pub fn same_as(&self, other: &DistributionField) -> bool {
        Arc::ptr_eq(&self.kind, &other.kind) && self.shift == other.shift
    }

    /// `c · f`.
    pub fn scaled(&self, c: f64) -> Self {
        let f = self.clone();
        DistributionField::formula(move |x, v| c * f.eval(x, v))
    }

    /// `a · f + b · g`.
    pub fn combine(&self, a: f64, other: &DistributionField, b: f64) -> Self {
        let (f, g) = (self.clone(), other.clone());
        DistributionField::formula(move |x, v| a * f.eval(x, v) + b * g.eval(x, v))
    }

    /// Velocity function `w ↦ f(x, w)` at a fixed position.
    pub fn at_x(&self, x: Vec3) -> impl Fn(Vec3) -> f64 + '_ {
        move |w| self.eval(x, w)
    }

    /// Node values on `spec`.
    pub fn sample(&self, spec: GridSpec, exec: Exec) -> Result<GridField> {
        GridField::from_fn(spec, exec, |x, v| self.eval(x, v))
    }
}

/// Multilinear interpolation of a grid-backed field (zero outside the box).
pub fn interpolate(f: &GridField, x: Vec3, v: Vec3) -> f64 {
    f.interpolate(x, v)
}

/// Free transport `T^s f`.
pub fn transport(f: &DistributionField, s: f64) -> DistributionField {
    f.transport(s)
}

/// `h^{⊗k}` as a k-particle marginal.
pub fn tensorize(h: &DistributionField, k: usize) -> Result<Marginal> {
    Marginal::tensor(h.clone(), k)
}

/// Sample set for sup-norm estimation: optional grid nodes plus a seeded,
/// randomly shifted Halton sequence in the box.
///
/// The estimator under-approximates the true supremum on R⁶; its settings
/// are serialized into every report that quotes a norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub grid: Option<GridSpec>,
    pub random: usize,
    pub seed: u64,
    pub x_max: f64,
    pub v_max: f64,
    /// Use `x = 0` only (spatially homogeneous fields).
    pub homogeneous: bool,
    #[serde(skip, default)]
    pub exec: Exec,
}

impl Sampler {
    /// Grid nodes refined by 10⁴ quasi-random points in the same box.
    pub fn for_grid(spec: GridSpec, seed: u64) -> Self {
        Sampler {
            grid: Some(spec),
            random: 10_000,
            seed,
            x_max: spec.x_max,
            v_max: spec.v_max,
            homogeneous: spec.is_homogeneous(),
            exec: Exec::default(),
        }
    }

    /// Grid nodes only.
    pub fn nodes_only(spec: GridSpec) -> Self {
        Sampler {
            random: 0,
            ..Sampler::for_grid(spec, 0)
        }
    }

    /// Quasi-random points only.
    pub fn random_only(x_max: f64, v_max: f64, random: usize, seed: u64) -> Self {
        Sampler {
            grid: None,
            random,
            seed,
            x_max,
            v_max,
            homogeneous: false,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.grid.map_or(0, |g| g.node_count()) + self.random
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `i` of the sample set (grid nodes first).
    pub fn point(&self, i: usize, shift: &[f64; 6]) -> (Vec3, Vec3) {
        let n_grid = self.grid.map_or(0, |g| g.node_count());
        if i < n_grid {
            return self.grid.expect("grid present").node(i);
        }
        let u = halton6(i - n_grid, shift);
        let x = if self.homogeneous {
            Vec3::ZERO
        } else {
            Vec3::new(
                (2.0 * u[0] - 1.0) * self.x_max,
                (2.0 * u[1] - 1.0) * self.x_max,
                (2.0 * u[2] - 1.0) * self.x_max,
            )
        };
        let v = Vec3::new(
            (2.0 * u[3] - 1.0) * self.v_max,
            (2.0 * u[4] - 1.0) * self.v_max,
            (2.0 * u[5] - 1.0) * self.v_max,
        );
        (x, v)
    }

    /// Cranley–Patterson shift of the Halton sequence derived from the seed.
    pub fn shift(&self) -> [f64; 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        std::array::from_fn(|_| rng.random::<f64>())
    }

    pub fn points(&self) -> Vec<(Vec3, Vec3)> {
        let shift = self.shift();
        (0..self.len()).map(|i| self.point(i, &shift)).collect()
    }
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn halton6(i: usize, shift: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|d| {
        let u = radical_inverse(i as u64 + 1, HALTON_BASES[d]) + shift[d];
        u - u.floor()
    })
}

/// Estimated `‖f‖_{p,q,α,β} = sup ⟨αx⟩^p ⟨βv⟩^q |f(x,v)|` over the sampler's
/// points. Nondecreasing in the sample count.
pub fn weighted_norm(f: &DistributionField, w: &WeightParams, sampler: &Sampler) -> Result<f64> {
    if sampler.is_empty() {
        return invalid("sampler has no points");
    }
    let shift = sampler.shift();
    Ok(sampler.exec.max(sampler.len(), |i| {
        let (x, v) = sampler.point(i, &shift);
        w.weight(x, v) * f.eval(x, v).abs()
    }))
}

/// Weighted sup over grid nodes only.
pub fn grid_norm(g: &GridField, w: &WeightParams) -> f64 {
    let spec = *g.spec();
    g.values()
        .iter()
        .enumerate()
        .fold(0.0, |m, (i, val)| {
            let (x, v) = spec.node(i);
            crate::exec::nan_max(m, w.weight(x, v) * val.abs())
        })
}

const MAGIC: &[u8; 8] = b"WKGRID\x00\x01";

/// JSON sidecar written next to a binary grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format: String,
    pub version: u32,
    pub grid: GridSpec,
    pub weights: Option<WeightParams>,
    pub label: Option<String>,
}

/// Path of the JSON sidecar for a binary grid path.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a grid as a little-endian binary file plus a JSON sidecar.
///
/// Header: 8-byte magic, layout `u32` (0 uniform, 1 cell-centered), a
/// reserved `u32`, `x_max` and `v_max` as `f64`, `n_x`, `n_v` and the value
/// count as `u64`. Payload: node values as `f64`, row-major.
pub fn write_grid(path: &Path, g: &GridField, weights: Option<&WeightParams>, label: Option<&str>) -> Result<()> {
    let spec = g.spec();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    let layout: u32 = match spec.layout {
        GridLayout::Uniform => 0,
        GridLayout::CellCentered => 1,
    };
    out.write_all(&layout.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    out.write_all(&spec.x_max.to_le_bytes())?;
    out.write_all(&spec.v_max.to_le_bytes())?;
    out.write_all(&(spec.n_x as u64).to_le_bytes())?;
    out.write_all(&(spec.n_v as u64).to_le_bytes())?;
    out.write_all(&(g.values().len() as u64).to_le_bytes())?;
    for v in g.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    let sidecar = GridSidecar {
        format: "wavekin-grid".into(),
        version: 1,
        grid: *spec,
        weights: weights.copied(),
        label: label.map(str::to_string),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a grid written by [`write_grid`], with its sidecar when present.
pub fn read_grid(path: &Path) -> Result<(GridField, Option<GridSidecar>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("truncated grid file".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let layout = match u32_at(take(4)?) {
        0 => GridLayout::Uniform,
        1 => GridLayout::CellCentered,
        other => return Err(Error::Format(format!("unknown layout {other}"))),
    };
    take(4)?;
    let x_max = f64_at(take(8)?);
    let v_max = f64_at(take(8)?);
    let n_x = u64_at(take(8)?) as usize;
    let n_v = u64_at(take(8)?) as usize;
    let count = u64_at(take(8)?) as usize;
    let spec = GridSpec::new(x_max, v_max, n_x, n_v, layout)?;
    if count != spec.node_count() {
        return Err(Error::Format("value count does not match header".into()));
    }
    let payload = take(8 * count)?;
    let values = payload.chunks_exact(8).map(f64_at).collect();
    let grid = GridField::new(spec, values)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok((grid, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_field(w: WeightParams) -> DistributionField {
        DistributionField::formula(move |x, v| (-v.norm2()).exp() / w.weight_x(x))
    }

    #[test]
    fn bracket_examples() {
        assert_eq!(bracket(Vec3::ZERO), 1.0);
        assert_relative_eq!(bracket(Vec3::new(2.0, 2.0, 1.0)), 10f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn weights_cancel_exactly() {
        let w = WeightParams::default();
        let f = DistributionField::formula(move |x, v| 1.0 / w.weight(x, v));
        let spec = GridSpec::new(3.0, 3.0, 3, 4, GridLayout::Uniform).unwrap();
        let n = weighted_norm(&f, &w, &Sampler::for_grid(spec, 1)).unwrap();
        assert_relative_eq!(n, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let spec = GridSpec::new(3.0, 3.0, 2, 3, GridLayout::Uniform).unwrap();
        let n = weighted_norm(&DistributionField::zero(), &WeightParams::default(), &Sampler::for_grid(spec, 0)).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn empty_sampler_is_an_error() {
        let s = Sampler::random_only(1.0, 1.0, 0, 0);
        assert!(weighted_norm(&DistributionField::zero(), &WeightParams::default(), &s).is_err());
    }

    #[test]
    fn gaussian_norm_below_radial_scan() {
        // sup over the sample set of <v>^4 e^{-|v|^2} never exceeds the
        // radial maximum 4/e and gets close to it.
        let w = WeightParams::default();
        let f = gaussian_field(w);
        let radial = (0..200_001)
            .map(|i| {
                let r2 = (i as f64 * 1e-5 * 4.0).powi(2);
                (1.0 + r2).powi(2) * (-r2).exp()
            })
            .fold(0.0, f64::max);
        assert_relative_eq!(radial, 4.0 / std::f64::consts::E, max_relative = 1e-9);
        let spec = GridSpec::new(2.0, 3.0, 2, 9, GridLayout::Uniform).unwrap();
        let n = weighted_norm(&f, &w, &Sampler::for_grid(spec, 3)).unwrap();
        assert!(n <= radial * (1.0 + 1e-12));
        assert!(n > 0.95 * radial, "estimator too coarse: {n} vs {radial}");
    }

    #[test]
    fn norm_monotone_in_sample_count() {
        let w = WeightParams::default();
        let f = gaussian_field(w);
        let mut last = 0.0;
        for count in [10, 100, 1000] {
            let n = weighted_norm(&f, &w, &Sampler::random_only(3.0, 3.0, count, 9)).unwrap();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn transport_group_law_and_identity() {
        let f = gaussian_field(WeightParams::default()).combine(
            1.0,
            &DistributionField::formula(|x, v| x.x * v.y + x.z),
            1.0,
        );
        let (x, v) = (Vec3::new(0.3, -1.0, 2.0), Vec3::new(1.5, 0.2, -0.7));
        assert_eq!(f.transport(0.0).eval(x, v), f.eval(x, v));
        let a = f.transport(0.4).transport(-1.1).eval(x, v);
        let b = f.transport(0.4 - 1.1).eval(x, v);
        assert_eq!(a, b);
        let direct = f.eval(x - v * (0.4 - 1.1), v);
        assert_relative_eq!(a, direct, max_relative = 1e-14);
    }

    #[test]
    fn x_independent_fields_are_transport_invariant() {
        let f = DistributionField::velocity_only(|v| 1.0 / (1.0 + v.norm2()));
        let (x, v) = (Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.25));
        assert_eq!(f.transport(3.7).eval(x, v), f.eval(x, v));
    }

    #[test]
    fn interpolation_reproduces_nodes_and_affine_data() {
        let spec = GridSpec::new(2.0, 3.0, 3, 4, GridLayout::CellCentered).unwrap();
        let affine = |x: Vec3, v: Vec3| 0.5 + x.x - 2.0 * x.y + 0.25 * x.z + v.x + 3.0 * v.y - v.z;
        let g = GridField::from_fn(spec, Exec::Sequential, affine).unwrap();
        for i in (0..spec.node_count()).step_by(17) {
            let (x, v) = spec.node(i);
            assert_eq!(g.interpolate(x, v), g.values()[i]);
        }
        // Center of a 6-D cell.
        let xa = spec.x_axis();
        let va = spec.v_axis();
        let x = Vec3::new(0.5 * (xa.coord(0) + xa.coord(1)), xa.coord(1), 0.5 * (xa.coord(1) + xa.coord(2)));
        let v = Vec3::new(0.5 * (va.coord(1) + va.coord(2)), 0.5 * (va.coord(2) + va.coord(3)), va.coord(0));
        assert_relative_eq!(g.interpolate(x, v), affine(x, v), max_relative = 1e-13);
        assert_eq!(g.interpolate(Vec3::new(2.5, 0.0, 0.0), v), 0.0);
        assert_eq!(g.interpolate(x, Vec3::new(0.0, -3.5, 0.0)), 0.0);
    }

    #[test]
    fn tail_box_meets_tolerance() {
        let w = WeightParams::default();
        let spec = GridSpec::from_tail(&w, 1e-6, 2, 4, GridLayout::Uniform).unwrap();
        assert!(spec.velocity_tail(&w) <= 1e-6 * (1.0 + 1e-9));
        assert!(spec.spatial_tail(&w) <= 1e-6 * (1.0 + 1e-9));
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let spec = GridSpec::new(2.0, 3.0, 2, 3, GridLayout::Uniform).unwrap();
        let g = GridField::from_fn(spec, Exec::Sequential, |x, v| x.x - v.z * 0.5).unwrap();
        let w = WeightParams::default();
        write_grid(&path, &g, Some(&w), Some("test")).unwrap();
        let (back, side) = read_grid(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(side.unwrap().weights, Some(w));
    }
}
