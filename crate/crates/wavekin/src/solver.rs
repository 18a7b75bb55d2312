//! Mild solutions by Picard iteration in the transported frame.
//!
//! The unknown is `g(t) = T^{−t} f(t)`, for which the Duhamel formula reads
//!
//! ```text
//! g(t) = Φ(g)(t) = f₀ + ∫₀ᵗ T^{−s} C[T^s g(s)] ds.
//! ```
//!
//! `g` is stored at the panel edges of the time rule; inner quadrature nodes
//! use linear interpolation between adjacent slices. Each slice is `f₀`
//! (kept exact) plus a grid-backed correction. Grids with `n_x = 1` run the
//! spatially homogeneous problem, where fields are read at `x = 0` and
//! transport is trivial.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::constant_c;
use crate::collision::{eval_c, CollisionConfig, Frame};
use crate::error::{invalid, Error, Result};
use crate::exec::{nan_max, Exec};
use crate::phase::{weighted_norm, write_grid, DistributionField, GridField, GridSpec, Sampler, Vec3, WeightParams};
use crate::quadrature::TimeRule;

/// Everything the Picard solver needs.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub weights: WeightParams,
    pub grid: GridSpec,
    pub collision: CollisionConfig,
    pub time: TimeRule,
    /// Radius `M` of the ball the iterates must stay in.
    pub ball_radius: f64,
    pub max_iterations: usize,
    /// Stopping tolerance on `|||g_{n+1} − g_n|||`.
    pub tolerance: f64,
    /// Enforce `M < (24C)^{−1/2}`, `‖f₀‖ ≤ M/2` and the ball at every iterate.
    pub enforce_regime: bool,
    /// Seed of the quasi-random refinement used for norms of initial data.
    pub seed: u64,
}

/// `(24 C_{p,q,α,β})^{−1/2}`, the largest admissible ball radius.
pub fn regime_threshold(w: &WeightParams) -> Result<f64> {
    Ok((24.0 * constant_c(w)?).powf(-0.5))
}

impl SolverConfig {
    pub fn horizon(&self) -> f64 {
        self.time.horizon()
    }

    pub fn exec(&self) -> Exec {
        self.collision.exec
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.grid.validate()?;
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return invalid("tolerance and max_iterations must be positive");
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return invalid("ball radius must be positive and finite");
        }
        if self.enforce_regime {
            let m_max = regime_threshold(&self.weights)?;
            if self.ball_radius >= m_max {
                return Err(Error::Regime(format!(
                    "M = {:.6e} must be below (24 C)^(-1/2) = {:.6e}",
                    self.ball_radius, m_max
                )));
            }
        }
        Ok(())
    }

    /// Sampler used for norms of initial data (grid nodes plus 10⁴ quasi-random points).
    pub fn sampler(&self) -> Sampler {
        Sampler::for_grid(self.grid, self.seed).with_exec(self.exec())
    }

    fn frame_at(&self, s: f64) -> Frame {
        if self.grid.is_homogeneous() {
            Frame::Lab
        } else {
            Frame::Transported { s }
        }
    }
}

/// Time slices of the transported-frame unknown.
#[derive(Debug, Clone)]
pub struct PicardState {
    pub times: Vec<f64>,
    pub slices: Vec<DistributionField>,
    /// Grid-backed part `g(tᵢ) − f₀` (absent when it is identically zero).
    pub corrections: Vec<Option<GridField>>,
    pub iteration: usize,
    pub last_increment: f64,
}

impl PicardState {
    /// `g ≡ 0`.
    pub fn zero(cfg: &SolverConfig) -> Self {
        PicardState::constant(&DistributionField::zero(), cfg)
    }

    /// `g(t) = field` for all `t`.
    pub fn constant(field: &DistributionField, cfg: &SolverConfig) -> Self {
        let times = cfg.time.panel_edges();
        let n = times.len();
        PicardState {
            times,
            slices: vec![field.clone(); n],
            corrections: vec![None; n],
            iteration: 0,
            last_increment: f64::NAN,
        }
    }

    /// `g(s)` by linear interpolation between the slices around `s`.
    pub fn field_at(&self, s: f64) -> Result<DistributionField> {
        let last = *self.times.last().expect("at least one slice");
        if !(s >= 0.0 && s <= last) {
            return invalid(format!("time {s} outside [0, {last}]"));
        }
        let p = self.times.partition_point(|&t| t <= s).clamp(1, self.times.len() - 1) - 1;
        let (a, b) = (&self.slices[p], &self.slices[p + 1]);
        if a.same_as(b) || s == self.times[p] {
            return Ok(a.clone());
        }
        if s == self.times[p + 1] {
            return Ok(b.clone());
        }
        let theta = (s - self.times[p]) / (self.times[p + 1] - self.times[p]);
        Ok(a.combine(1.0 - theta, b, theta))
    }

    /// The slice at the final time.
    pub fn final_slice(&self) -> &DistributionField {
        self.slices.last().expect("at least one slice")
    }
}

/// Node values of `T^{−s} C[T^s g]` (or `C[g]` in homogeneous mode).
fn collision_values(g: &DistributionField, s: f64, cfg: &SolverConfig) -> Vec<f64> {
    let coll = cfg.collision.clone().with_frame(cfg.frame_at(s));
    let spec = cfg.grid;
    cfg.exec().map(spec.node_count(), |i| {
        let (x, v) = spec.node(i);
        eval_c(g, x, v, &coll)
    })
}

fn check_slices(g: &PicardState, cfg: &SolverConfig) -> Result<()> {
    let edges = cfg.time.panel_edges();
    if g.times.len() != edges.len() || g.times.iter().zip(&edges).any(|(a, b)| a != b) {
        return invalid("state time slices do not match the time rule");
    }
    Ok(())
}

/// `Φ(g)(tᵢ) = f₀ + ∫₀^{tᵢ} T^{−s} C[T^s g(s)] ds` at every panel edge.
pub fn phi_map(g: &PicardState, f0: &DistributionField, cfg: &SolverConfig) -> Result<PicardState> {
    check_slices(g, cfg)?;
    let rule = &cfg.time;
    let nodes = cfg.grid.node_count();
    let mut acc: Option<Vec<f64>> = None;
    let mut corrections = vec![None];
    // Homogeneous collisions do not depend on s, so identical fields reuse values.
    let mut cache: Vec<(DistributionField, Vec<f64>)> = Vec::new();
    for p in 0..rule.panels() {
        let panel_zero = g.slices[p].is_zero() && g.slices[p + 1].is_zero();
        if !panel_zero {
            for (n, (&s, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
                if rule.panel_of()[n] != p {
                    continue;
                }
                let gs = g.field_at(s)?;
                let q = if cfg.grid.is_homogeneous() {
                    match cache.iter().find(|(f, _)| f.same_as(&gs)) {
                        Some((_, q)) => q.clone(),
                        None => {
                            let q = collision_values(&gs, s, cfg);
                            cache.push((gs.clone(), q.clone()));
                            q
                        }
                    }
                } else {
                    collision_values(&gs, s, cfg)
                };
                let a = acc.get_or_insert_with(|| vec![0.0; nodes]);
                for (ai, qi) in a.iter_mut().zip(&q) {
                    *ai += w * qi;
                }
            }
        }
        corrections.push(match &acc {
            Some(a) => Some(GridField::new(cfg.grid, a.clone())?),
            None => None,
        });
    }
    let slices = corrections
        .iter()
        .map(|c| match c {
            Some(grid) => f0.combine(1.0, &DistributionField::grid(grid.clone()), 1.0),
            None => f0.clone(),
        })
        .collect();
    Ok(PicardState {
        times: g.times.clone(),
        slices,
        corrections,
        iteration: g.iteration + 1,
        last_increment: f64::NAN,
    })
}

/// Node values of every slice, `[slice][node]`.
fn node_values(state: &PicardState, cfg: &SolverConfig) -> Vec<Vec<f64>> {
    let spec = cfg.grid;
    state
        .slices
        .iter()
        .map(|f| {
            cfg.exec().map(spec.node_count(), |i| {
                let (x, v) = spec.node(i);
                f.eval(x, v)
            })
        })
        .collect()
}

/// Weighted sup over grid nodes and slices of `|a − b|`.
pub fn slice_distance(a: &PicardState, b: &PicardState, cfg: &SolverConfig) -> f64 {
    let spec = cfg.grid;
    let w = cfg.weights;
    let weights: Vec<f64> = (0..spec.node_count())
        .map(|i| {
            let (x, v) = spec.node(i);
            w.weight(x, v)
        })
        .collect();
    let (va, vb) = (node_values(a, cfg), node_values(b, cfg));
    let mut m = 0.0;
    for (sa, sb) in va.iter().zip(&vb) {
        for ((x, y), wt) in sa.iter().zip(sb).zip(&weights) {
            m = nan_max(m, wt * (x - y).abs());
        }
    }
    m
}

/// `|||g||| = sup_t ‖g(t)‖` over grid nodes.
pub fn state_norm(state: &PicardState, cfg: &SolverConfig) -> f64 {
    let zero = PicardState::zero(cfg);
    slice_distance(state, &zero, cfg)
}

/// Summary of a Picard run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub increments: Vec<f64>,
    /// Largest ratio of successive increments.
    pub kappa_hat: f64,
    pub converged: bool,
    pub tolerance: f64,
    /// Largest `|||g_n|||` seen over the iterates.
    pub max_iterate_norm: f64,
    pub initial_norm: f64,
    pub ball_radius: f64,
    pub regime_threshold: f64,
    pub enforce_regime: bool,
    pub sampler: Sampler,
}

/// Largest ratio of successive positive increments (0 with fewer than two).
pub fn kappa_hat(increments: &[f64]) -> f64 {
    increments
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, nan_max)
}

/// Iterates `g_{n+1} = Φ(g_n)` from `g₀ = 0` until the increment drops below
/// the tolerance.
pub fn picard_solve(f0: &DistributionField, cfg: &SolverConfig) -> Result<(PicardState, SolveReport)> {
    cfg.validate()?;
    let sampler = cfg.sampler();
    let initial_norm = weighted_norm(f0, &cfg.weights, &sampler)?;
    if cfg.enforce_regime && initial_norm > 0.5 * cfg.ball_radius {
        return Err(Error::Regime(format!(
            "||f0|| = {:.6e} exceeds M/2 = {:.6e}",
            initial_norm,
            0.5 * cfg.ball_radius
        )));
    }
    let mut g = PicardState::zero(cfg);
    let mut increments = Vec::new();
    let mut max_norm: f64 = 0.0;
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let next = phi_map(&g, f0, cfg)?;
        let inc = slice_distance(&next, &g, cfg);
        let norm = state_norm(&next, cfg);
        max_norm = max_norm.max(norm);
        if cfg.enforce_regime && norm > cfg.ball_radius {
            return Err(Error::Regime(format!(
                "iterate {} has norm {:.6e} above M = {:.6e}",
                next.iteration, norm, cfg.ball_radius
            )));
        }
        increments.push(inc);
        g = next;
        g.last_increment = inc;
        if inc <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: increments.len(),
            last: *increments.last().unwrap_or(&f64::NAN),
            increments,
        });
    }
    let report = SolveReport {
        iterations: increments.len(),
        kappa_hat: kappa_hat(&increments),
        increments,
        converged,
        tolerance: cfg.tolerance,
        max_iterate_norm: max_norm,
        initial_norm,
        ball_radius: cfg.ball_radius,
        regime_threshold: regime_threshold(&cfg.weights)?,
        enforce_regime: cfg.enforce_regime,
        sampler,
    };
    Ok((g, report))
}

/// `|||g − Φ(g)|||` over grid nodes and slices (one extra application of Φ).
pub fn mild_residual(state: &PicardState, f0: &DistributionField, cfg: &SolverConfig) -> Result<f64> {
    let next = phi_map(state, f0, cfg)?;
    Ok(slice_distance(state, &next, cfg))
}

/// `Φ(g)(tᵢ)` at a single phase-space point for every slice time.
pub fn phi_point(state: &PicardState, f0: &DistributionField, cfg: &SolverConfig, x: Vec3, v: Vec3) -> Result<Vec<f64>> {
    check_slices(state, cfg)?;
    let rule = &cfg.time;
    let x = if cfg.grid.is_homogeneous() { Vec3::ZERO } else { x };
    let mut out = vec![f0.eval(x, v)];
    let mut acc = 0.0;
    for p in 0..rule.panels() {
        for (n, (&s, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            if rule.panel_of()[n] != p {
                continue;
            }
            let gs = state.field_at(s)?;
            let coll = cfg.collision.clone().with_frame(cfg.frame_at(s));
            acc += w * eval_c(&gs, x, v, &coll);
        }
        out.push(f0.eval(x, v) + acc);
    }
    Ok(out)
}

/// Smallest node value over all slices.
pub fn min_value(state: &PicardState, cfg: &SolverConfig) -> f64 {
    node_values(state, cfg)
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min)
}

/// Global moments and their drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub momentum: Vec<[f64; 3]>,
    pub energy: Vec<f64>,
    /// `max_t |m(t) − m(0)| / |m(0)|`.
    pub mass_drift: f64,
    /// `max_t |P(t) − P(0)| / ∫∫|v||g(0)|`.
    pub momentum_drift: f64,
    /// `max_t |E(t) − E(0)| / |E(0)|`.
    pub energy_drift: f64,
    /// Diagnostic only: `max_{t,x} |ρ(t,x) − ρ(0,x)| / max_x ρ(0,x)` for the
    /// lab-frame density `ρ(t,x) = ∫ f(t,x,v) dv`. Zero in homogeneous mode.
    pub pointwise_mass_drift: f64,
}

fn rel(a: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        a.abs()
    } else {
        a.abs() / scale
    }
}

/// Global moments `∫∫ g(t) φ(v) dx dv` for `φ ∈ {1, v, |v|²}` at each slice.
///
/// Free transport preserves these integrals, so the transported-frame slices
/// give the lab-frame moments up to the spatial truncation.
pub fn conservation_report(state: &PicardState, cfg: &SolverConfig) -> Result<ConservationReport> {
    check_slices(state, cfg)?;
    let spec = cfg.grid;
    let values = node_values(state, cfg);
    let nv = spec.n_velocity();
    let mut mass = Vec::new();
    let mut momentum = Vec::new();
    let mut energy = Vec::new();
    let mut speed_scale = 0.0;
    for (k, vals) in values.iter().enumerate() {
        let (mut m, mut p, mut e, mut s) = (0.0, Vec3::ZERO, 0.0, 0.0);
        for (i, &g) in vals.iter().enumerate() {
            let (ix, iv) = (i / nv, i % nv);
            let v = spec.v_node(iv);
            let w = spec.x_weight(ix) * spec.v_weight(iv) * g;
            m += w;
            p += v * w;
            e += v.norm2() * w;
            s += v.norm() * w.abs();
        }
        if k == 0 {
            speed_scale = s;
        }
        mass.push(m);
        momentum.push(p.to_array());
        energy.push(e);
    }
    let drift = |xs: &[f64]| xs.iter().map(|x| rel(x - xs[0], xs[0].abs())).fold(0.0, nan_max);
    let momentum_drift = momentum
        .iter()
        .map(|p| {
            let d = Vec3::from(*p) - Vec3::from(momentum[0]);
            rel(d.norm(), speed_scale)
        })
        .fold(0.0, nan_max);
    let pointwise_mass_drift = if spec.is_homogeneous() {
        0.0
    } else {
        pointwise_density_drift(state, cfg)
    };
    Ok(ConservationReport {
        times: state.times.clone(),
        mass_drift: drift(&mass),
        energy_drift: drift(&energy),
        momentum_drift,
        mass,
        momentum,
        energy,
        pointwise_mass_drift,
    })
}

fn pointwise_density_drift(state: &PicardState, cfg: &SolverConfig) -> f64 {
    let spec = cfg.grid;
    let nv = spec.n_velocity();
    let density = |f: &DistributionField, t: f64| -> Vec<f64> {
        cfg.exec().map(spec.n_space(), |ix| {
            let x = spec.x_node(ix);
            (0..nv)
                .map(|iv| {
                    let v = spec.v_node(iv);
                    spec.v_weight(iv) * f.eval(x - v * t, v)
                })
                .sum()
        })
    };
    let rho0 = density(&state.slices[0], 0.0);
    let scale = rho0.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut worst = 0.0;
    for (f, &t) in state.slices.iter().zip(&state.times).skip(1) {
        for (a, b) in density(f, t).iter().zip(&rho0) {
            worst = nan_max(worst, rel(a - b, scale));
        }
    }
    worst
}

/// `|||g_f − g_g||| / ‖f₀ − g₀‖` for the solutions with data `f₀`, `g₀`
/// (0 when the data coincide).
pub fn stability_compare(f0: &DistributionField, g0: &DistributionField, cfg: &SolverConfig) -> Result<f64> {
    if f0.same_as(g0) {
        return Ok(0.0);
    }
    let denom = weighted_norm(&f0.combine(1.0, g0, -1.0), &cfg.weights, &cfg.sampler())?;
    let (a, _) = picard_solve(f0, cfg)?;
    let (b, _) = picard_solve(g0, cfg)?;
    let num = slice_distance(&a, &b, cfg);
    Ok(if denom == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        num / denom
    })
}

/// Writes every slice, sampled on the grid, as `slice_NNN.bin` plus sidecar.
pub fn write_checkpoints(state: &PicardState, cfg: &SolverConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (f, t)) in state.slices.iter().zip(&state.times).enumerate() {
        let grid = f.sample(cfg.grid, cfg.exec())?;
        write_grid(
            &dir.join(format!("slice_{i:03}.bin")),
            &grid,
            Some(&cfg.weights),
            Some(&format!("g(t = {t})")),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::GridLayout;
    use crate::quadrature::{BoxRule, SphereRule};
    use approx::assert_relative_eq;

    fn cfg(enforce: bool) -> SolverConfig {
        let w = WeightParams::default();
        SolverConfig {
            weights: w,
            grid: GridSpec::homogeneous(4.0, 5, GridLayout::CellCentered).unwrap(),
            collision: CollisionConfig::new(BoxRule::gauss(4.0, 5).unwrap(), SphereRule::product_gauss(2, 4).unwrap())
                .with_exec(Exec::Sequential),
            time: TimeRule::composite_gauss(1.0, 2, 2).unwrap(),
            ball_radius: 0.9 * regime_threshold(&w).unwrap(),
            max_iterations: 20,
            tolerance: 1e-13,
            enforce_regime: enforce,
            seed: 0,
        }
    }

    #[test]
    fn zero_data() {
        let c = cfg(true);
        let f0 = DistributionField::zero();
        let (s, r) = picard_solve(&f0, &c).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(state_norm(&s, &c), 0.0);
        assert_eq!(mild_residual(&s, &f0, &c).unwrap(), 0.0);
        let cons = conservation_report(&s, &c).unwrap();
        assert!(cons.mass.iter().all(|m| *m == 0.0));
        assert_eq!(stability_compare(&f0, &f0, &c).unwrap(), 0.0);
    }

    #[test]
    fn phi_of_zero_is_data() {
        let c = cfg(false);
        let f0 = DistributionField::velocity_only(|v| 1e-3 * (-v.norm2()).exp());
        let g = phi_map(&PicardState::zero(&c), &f0, &c).unwrap();
        for s in &g.slices {
            assert!(s.same_as(&f0));
        }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let c = cfg(false);
        let f0 = DistributionField::velocity_only(|v| 1e-3 / (1.0 + v.norm2()));
        let g = PicardState::constant(&f0, &c);
        let next = phi_map(&g, &f0, &c).unwrap();
        assert!(slice_distance(&g, &next, &c) <= 1e-10 * 1e-3);
        let (_, r) = picard_solve(&f0, &c).unwrap();
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn regime_violations() {
        let mut c = cfg(true);
        c.ball_radius = regime_threshold(&c.weights).unwrap();
        let err = picard_solve(&DistributionField::zero(), &c).unwrap_err();
        assert!(err.to_string().contains("contraction regime violated"));
        let c = cfg(true);
        let big = DistributionField::velocity_only(|v| (-v.norm2()).exp());
        assert!(matches!(picard_solve(&big, &c), Err(Error::Regime(_))));
    }

    #[test]
    fn field_at_interpolates() {
        let c = cfg(false);
        let mut s = PicardState::zero(&c);
        s.slices[1] = DistributionField::velocity_only(|_| 2.0);
        let f = s.field_at(0.25).unwrap();
        assert_relative_eq!(f.eval(Vec3::ZERO, Vec3::ZERO), 1.0, max_relative = 1e-15);
        assert!(s.field_at(1.5).is_err());
    }

    #[test]
    fn kappa_of_geometric_sequence() {
        assert_relative_eq!(kappa_hat(&[1.0, 0.1, 0.01]), 0.1, max_relative = 1e-12);
        assert_eq!(kappa_hat(&[0.0]), 0.0);
    }
}
