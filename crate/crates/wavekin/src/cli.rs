//! Command-line driver: a sectioned TOML run configuration, one subcommand per
//! suite, and JSON/CSV report emission.
//!
//! Exit statuses: `0` when every asserted contract holds, `1` when a report
//! was produced but a contract failed, `2` for configuration, usage and
//! regime errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::boardgame::{
    self, count_echelon, enumerate_histories, labeled_gaussian_product, partition_classes,
    reachable_echelons, reduce_to_echelon, verify_identity_swap, verify_move_invariance, BoardState, HistoryMap,
};
use crate::bounds::{
    self, constant_c, verify_apriori_equation, AprioriOptions, BoundReport, SampleSpec,
};
use crate::collision::{eval_c_parts, eval_l_field, CollisionConfig, Frame, Term};
use crate::error::{Error, Result};
use crate::hierarchy::{
    admissibility_check, duhamel_residual, mixture_solution, node_probes, random_probes, verify_apriori_hierarchy,
    AdmissibilityOptions, AprioriHierarchyOptions, ComponentSpec, Marginal, MarginalPath, MixtureData,
};
use crate::phase::{weighted_norm, DistributionField, GridLayout, GridSpec, Sampler, Vec3, WeightParams};
use crate::quadrature::{BoxRule, SphereSpec, TimeRule};
use crate::solver::{
    conservation_report, min_value, mild_residual, picard_solve, regime_threshold, stability_compare,
    write_checkpoints, SolverConfig,
};
use crate::Exec;

/// Upper bound on `|||g_f − g_g||| / ‖f₀ − g₀‖` accepted by `solve`.
pub const STABILITY_BOUND: f64 = 2.05;

#[derive(Debug, Parser)]
#[command(name = "wavekin", version, about = "Numerical workbench for the 4-wave kinetic equation and its hierarchy")]
pub struct Cli {
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Runs every sweep on a single worker.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Output directory for reports, tables and checkpoints.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Picard solve with regime, residual, conservation and stability checks.
    Solve,
    /// Evaluates C[f] and L0..L3 at the configured points.
    CollisionEval,
    /// Numerical checks of the integral lemmas and a priori estimates.
    Verify {
        #[arg(value_enum)]
        lemma: Lemma,
    },
    /// History maps, acceptable moves and echelon forms.
    #[command(subcommand)]
    Boardgame(BoardCommand),
    /// Hierarchy residuals, admissibility and mixture solutions.
    #[command(subcommand)]
    Hierarchy(HierarchyCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Lemma {
    OneBracket,
    TimeIntegral,
    Convolution,
    DeltaConvolution,
    VelocityWeight,
    AprioriEquation,
    AprioriHierarchy,
    All,
}

impl Lemma {
    const EACH: [Lemma; 7] = [
        Lemma::OneBracket,
        Lemma::TimeIntegral,
        Lemma::Convolution,
        Lemma::DeltaConvolution,
        Lemma::VelocityWeight,
        Lemma::AprioriEquation,
        Lemma::AprioriHierarchy,
    ];

    fn name(self) -> &'static str {
        match self {
            Lemma::OneBracket => "one-bracket",
            Lemma::TimeIntegral => "time-integral",
            Lemma::Convolution => "convolution",
            Lemma::DeltaConvolution => "delta-convolution",
            Lemma::VelocityWeight => "velocity-weight",
            Lemma::AprioriEquation => "apriori-equation",
            Lemma::AprioriHierarchy => "apriori-hierarchy",
            Lemma::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum BoardCommand {
    /// Lists M_{n,k} and its classes as CSV.
    Enumerate,
    /// Reduces one state to echelon form and writes the move trace.
    Reduce,
    /// Counts echelon forms against the bound 2^{k+3n-2}.
    Count,
    /// Checks move invariance of the nested Duhamel integrals.
    Invariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum HierarchyCommand {
    /// Mild-hierarchy residuals of tensorized solver output.
    Residual,
    /// Admissibility of a finite mixture.
    Admissibility,
    /// Hierarchy solution assembled from a finite mixture.
    Mixture,
}

/// Named initial data, scaled so that `‖f₀‖ = data_fraction · M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataPreset {
    Zero,
    Gaussian,
    ShiftedGaussian,
    Equilibrium,
}

impl DataPreset {
    /// Unscaled shape. In homogeneous mode only the velocity profile is used.
    pub fn shape(self, w: &WeightParams, homogeneous: bool) -> DistributionField {
        let (p, alpha) = (w.p, w.alpha);
        let b = Vec3::new(0.5, 0.0, 0.0);
        match (self, homogeneous) {
            (DataPreset::Zero, _) => DistributionField::zero(),
            (DataPreset::Gaussian, true) => DistributionField::velocity_only(|v| (-0.5 * v.norm2()).exp()),
            (DataPreset::Gaussian, false) => {
                DistributionField::formula(|x, v| (-0.5 * x.norm2() - 0.5 * v.norm2()).exp())
            }
            (DataPreset::ShiftedGaussian, true) => {
                DistributionField::velocity_only(move |v| (-0.7 * (v - b).norm2()).exp())
            }
            (DataPreset::ShiftedGaussian, false) => DistributionField::formula(move |x, v| {
                (-0.7 * (x - 0.5 * b).norm2() - 0.7 * (v - b).norm2()).exp()
            }),
            (DataPreset::Equilibrium, true) => DistributionField::velocity_only(|v| 1.0 / (1.0 + v.norm2())),
            (DataPreset::Equilibrium, false) => DistributionField::formula(move |x, v| {
                (1.0 + alpha * alpha * x.norm2()).powf(-0.5 * p) / (1.0 + v.norm2())
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Hierarchy exponent; when absent, hierarchy commands use the smallest
    /// admissible value times `1 + mu_margin`.
    pub mu: Option<f64>,
    pub mu_margin: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            p: 2.0,
            q: 4.0,
            alpha: 1.0,
            beta: 1.0,
            mu: None,
            mu_margin: 0.01,
        }
    }
}

impl WeightsSection {
    pub fn params(&self) -> Result<WeightParams> {
        let mut w = WeightParams::new(self.p, self.q, self.alpha, self.beta)?;
        w.mu = self.mu.unwrap_or(0.0);
        Ok(w)
    }

    pub fn hierarchy_params(&self) -> Result<WeightParams> {
        let w = self.params()?;
        match self.mu {
            Some(_) => Ok(w),
            None => w.with_hierarchy_mu(self.mu_margin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub x_max: f64,
    pub v_max: f64,
    /// `1` selects the spatially homogeneous problem.
    pub n_x: usize,
    pub n_v: usize,
    pub layout: GridLayout,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            x_max: 4.0,
            v_max: 4.5,
            n_x: 1,
            n_v: 8,
            layout: GridLayout::CellCentered,
        }
    }
}

impl GridSection {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.x_max, self.v_max, self.n_x, self.n_v, self.layout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionSection {
    /// Half-width of the `v₁` box; defaults to the grid's `v_max`.
    pub box_v_max: Option<f64>,
    pub box_nodes: usize,
    pub sphere: SphereSpec,
}

impl Default for CollisionSection {
    fn default() -> Self {
        CollisionSection {
            box_v_max: None,
            box_nodes: 8,
            sphere: SphereSpec {
                n_theta: 4,
                n_phi: 8,
                ..SphereSpec::default()
            },
        }
    }
}

impl CollisionSection {
    pub fn build(&self, default_v_max: f64, exec: Exec) -> Result<CollisionConfig> {
        let b = BoxRule::gauss(self.box_v_max.unwrap_or(default_v_max), self.box_nodes)?;
        Ok(CollisionConfig::new(b, self.sphere.build()?).with_exec(exec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    pub panels: usize,
    pub per_panel: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            horizon: 1.0,
            panels: 2,
            per_panel: 2,
        }
    }
}

impl TimeSection {
    pub fn rule(&self) -> Result<TimeRule> {
        TimeRule::composite_gauss(self.horizon, self.panels, self.per_panel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// `M` as a fraction of `(24C)^{−1/2}`; ignored when `ball_radius` is set.
    pub ball_fraction: f64,
    pub ball_radius: Option<f64>,
    pub data: DataPreset,
    /// `‖f₀‖` as a fraction of `M`.
    pub data_fraction: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub enforce_regime: bool,
    /// Also solve from `stability_data` and report the stability ratio.
    pub stability: bool,
    pub stability_data: DataPreset,
    pub stability_fraction: f64,
    pub checkpoints: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            ball_fraction: 0.9,
            ball_radius: None,
            data: DataPreset::Gaussian,
            data_fraction: 0.5,
            max_iterations: 50,
            tolerance: 1e-13,
            enforce_regime: true,
            stability: true,
            stability_data: DataPreset::ShiftedGaussian,
            stability_fraction: 0.45,
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data: DataPreset,
    /// Amplitude of the (unscaled) data shape.
    pub amplitude: f64,
    /// Evaluation points `[x₁, x₂, x₃, v₁, v₂, v₃]`.
    pub points: Vec<[f64; 6]>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            data: DataPreset::Gaussian,
            amplitude: 1.0,
            points: vec![
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0, 0.3, 0.0],
                [0.5, -0.2, 0.0, 2.5, 0.3, 0.0],
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub count: usize,
    pub radial: usize,
    pub radial_max: f64,
    /// Probe points of the a priori checks.
    pub apriori_probes: usize,
    pub apriori_x_max: f64,
    pub apriori_v_max: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            count: 1000,
            radial: 32,
            radial_max: 10.0,
            apriori_probes: 16,
            apriori_x_max: 2.0,
            apriori_v_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardSection {
    pub k: usize,
    pub n: usize,
    pub cap: u128,
    /// Sweep ranges of `count`.
    pub k_max: usize,
    pub n_max: usize,
    /// `μ(k+2), …, μ(k+2n)` for `reduce` and `invariance`; random when absent.
    pub values: Option<Vec<usize>>,
    /// `σ(k+2), …, σ(k+2n)`; identity when absent.
    pub sigma: Option<Vec<usize>>,
    pub probes: usize,
    pub probe_x_max: f64,
    pub probe_v_max: f64,
    pub horizon: f64,
    /// Gauss–Legendre nodes per simplex direction.
    pub per_dim: usize,
    pub box_v_max: f64,
    pub box_nodes: usize,
    pub sphere: SphereSpec,
    pub tolerance: f64,
    pub swap_level: usize,
    pub swap_j: usize,
    pub swap_probes: usize,
    pub swap_tolerance: f64,
}

impl Default for BoardSection {
    fn default() -> Self {
        BoardSection {
            k: 2,
            n: 2,
            cap: boardgame::DEFAULT_ENUMERATION_CAP,
            k_max: 3,
            n_max: 4,
            values: None,
            sigma: None,
            probes: 8,
            probe_x_max: 0.5,
            probe_v_max: 1.0,
            horizon: 0.5,
            per_dim: 2,
            box_v_max: 3.0,
            box_nodes: 2,
            sphere: SphereSpec {
                n_theta: 2,
                n_phi: 2,
                ..SphereSpec::default()
            },
            tolerance: 1e-10,
            swap_level: 8,
            swap_j: 4,
            swap_probes: 4,
            swap_tolerance: 1e-12,
        }
    }
}

impl BoardSection {
    fn state(&self, seed: u64, default_values: Option<Vec<usize>>) -> Result<BoardState> {
        match self.values.clone().or(default_values) {
            Some(values) => {
                let mu = HistoryMap::new(self.k, self.n, values)?;
                match &self.sigma {
                    Some(s) => BoardState::new(mu, s.clone()),
                    None => Ok(BoardState::identity(mu)),
                }
            }
            None => BoardState::random(self.k, self.n, seed),
        }
    }

    fn collision(&self, exec: Exec) -> Result<CollisionConfig> {
        Ok(CollisionConfig::new(BoxRule::gauss(self.box_v_max, self.box_nodes)?, self.sphere.build()?).with_exec(exec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    /// Mixture JSON; the built-in two-component mixture when absent.
    pub mixture: Option<PathBuf>,
    pub k_max: usize,
    pub probes: usize,
    /// Initial data of `residual` (tensorized).
    pub data: DataPreset,
    pub residual_tolerance: f64,
    pub admissibility: AdmissibilityOptions,
}

impl Default for HierarchySection {
    fn default() -> Self {
        HierarchySection {
            mixture: None,
            k_max: 2,
            probes: 32,
            data: DataPreset::Gaussian,
            residual_tolerance: 1e-10,
            // Matches the position support of the built-in mixture.
            admissibility: AdmissibilityOptions {
                x_max: 4.0,
                ..AdmissibilityOptions::default()
            },
        }
    }
}

/// Built-in unit-mass mixture of two spatially uniform components.
pub fn default_mixture() -> MixtureData {
    MixtureData {
        weights: vec![0.4, 0.6],
        components: vec![
            ComponentSpec::Uniform {
                mass: 1.0,
                x_box: 4.0,
                center_v: [0.0; 3],
                sigma_v: 1.0,
            },
            ComponentSpec::Uniform {
                mass: 1.0,
                x_box: 4.0,
                center_v: [0.8, 0.0, 0.0],
                sigma_v: 1.2,
            },
        ],
    }
}

/// Complete run configuration. Every field has a default, so an empty file
/// is valid; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub weights: WeightsSection,
    pub grid: GridSection,
    pub collision: CollisionSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub eval: EvalSection,
    pub verify: VerifySection,
    pub boardgame: BoardSection,
    pub hierarchy: HierarchySection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&fs::read_to_string(path)?)
    }

    /// Revalidates every section against its module's invariants.
    pub fn validate(&self) -> Result<()> {
        self.weights.params()?;
        self.grid.spec()?;
        self.collision.build(self.grid.v_max, Exec::Sequential)?;
        self.time.rule()?;
        if !(self.solver.ball_fraction > 0.0) || !(self.solver.data_fraction >= 0.0) {
            return Err(Error::InvalidParam("ball_fraction must be positive and data_fraction nonnegative".into()));
        }
        Ok(())
    }

    pub fn solver_config(&self, w: WeightParams, exec: Exec) -> Result<SolverConfig> {
        let grid = self.grid.spec()?;
        let s = &self.solver;
        let ball_radius = match s.ball_radius {
            Some(m) => m,
            None => s.ball_fraction * regime_threshold(&w)?,
        };
        Ok(SolverConfig {
            weights: w,
            grid,
            collision: self.collision.build(grid.v_max, exec)?,
            time: self.time.rule()?,
            ball_radius,
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
            enforce_regime: s.enforce_regime,
            seed: self.seed,
        })
    }

    /// `preset` scaled so that its sampled norm is `fraction · M`.
    pub fn scaled_data(&self, preset: DataPreset, fraction: f64, cfg: &SolverConfig) -> Result<DistributionField> {
        let shape = preset.shape(&cfg.weights, cfg.grid.is_homogeneous());
        if shape.is_zero() {
            return Ok(shape);
        }
        let n = weighted_norm(&shape, &cfg.weights, &cfg.sampler())?;
        Ok(shape.scaled(fraction * cfg.ball_radius / n))
    }
}

/// Result of one subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    fn and(self, other: Outcome) -> Outcome {
        Outcome::from_pass(self == Outcome::Pass && other == Outcome::Pass)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonConvergence { .. } | Error::CapExceeded(_) => 1,
                _ => 2,
            }
        }
    }
}

/// Loads the configuration named on the command line with overrides applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = effective_config(cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let ctx = Ctx { cfg: &cfg, exec, out: &cli.out };
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Solve => cmd_solve(&ctx),
        Command::CollisionEval => cmd_collision_eval(&ctx),
        Command::Verify { lemma } => cmd_verify(&ctx, lemma),
        Command::Boardgame(sub) => cmd_boardgame(&ctx, sub),
        Command::Hierarchy(sub) => cmd_hierarchy(&ctx, sub),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    exec: Exec,
    out: &'a Path,
}

impl Ctx<'_> {
    fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.out.join(name), text)?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.out.join(name), text)?;
        Ok(())
    }

    fn report(&self, command: &str, body: Value) -> Value {
        json!({"command": command, "config": self.cfg, "report": body})
    }
}

fn cmd_solve(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let w = cfg.weights.params()?;
    let scfg = cfg.solver_config(w, ctx.exec)?;
    scfg.validate()?;
    let f0 = cfg.scaled_data(cfg.solver.data, cfg.solver.data_fraction, &scfg)?;
    let (state, report) = picard_solve(&f0, &scfg)?;
    let residual = mild_residual(&state, &f0, &scfg)?;
    let conservation = conservation_report(&state, &scfg)?;
    let stability = if cfg.solver.stability {
        let g0 = cfg.scaled_data(cfg.solver.stability_data, cfg.solver.stability_fraction, &scfg)?;
        Some(stability_compare(&f0, &g0, &scfg)?)
    } else {
        None
    };
    if cfg.solver.checkpoints {
        write_checkpoints(&state, &scfg, &ctx.out.join("checkpoints"))?;
    }
    let checks = json!({
        "converged": report.converged,
        "kappa_below_one": report.kappa_hat < 1.0,
        "residual_within_twice_tolerance": residual <= 2.0 * scfg.tolerance,
        "stability_within_bound": stability.map(|s| s <= STABILITY_BOUND),
    });
    let pass = report.converged
        && report.kappa_hat < 1.0
        && residual <= 2.0 * scfg.tolerance
        && stability.is_none_or(|s| s <= STABILITY_BOUND);
    let body = json!({
        "constant_c": constant_c(&w)?,
        "regime_threshold": regime_threshold(&w)?,
        "solve": report,
        "mild_residual": residual,
        "conservation": conservation,
        "min_value": min_value(&state, &scfg),
        "stability_ratio": stability,
        "stability_bound": STABILITY_BOUND,
        "checks": checks,
        "pass": pass,
    });
    ctx.write_json("solve_report.json", &ctx.report("solve", body))?;
    println!(
        "solve: {} (iterations {}, kappa {:.3e}, residual {:.3e}, mass drift {:.3e})",
        if pass { "pass" } else { "FAIL" },
        report.iterations,
        report.kappa_hat,
        residual,
        conservation.mass_drift
    );
    Ok(Outcome::from_pass(pass))
}

fn cmd_collision_eval(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let w = cfg.weights.params()?;
    let homogeneous = cfg.grid.n_x == 1;
    let f = cfg.eval.data.shape(&w, homogeneous).scaled(cfg.eval.amplitude);
    let coll = cfg.collision.build(cfg.grid.v_max, ctx.exec)?.with_frame(Frame::Lab);
    let rows = ctx.exec.map(cfg.eval.points.len(), |i| -> Result<Value> {
        let p = cfg.eval.points[i];
        let (x, v) = (Vec3::new(p[0], p[1], p[2]), Vec3::new(p[3], p[4], p[5]));
        let parts = eval_c_parts(&f, x, v, &coll);
        let terms = (0..4)
            .map(|j| eval_l_field(j, &f, &f, &f, x, v, &coll))
            .collect::<Result<Vec<f64>>>()?;
        Ok(json!({
            "x": x,
            "v": v,
            "total": parts.total,
            "gain": parts.gain,
            "loss": parts.gain - parts.total,
            "terms": terms,
        }))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("x1,x2,x3,v1,v2,v3,total,gain,loss,l0,l1,l2,l3\n");
    for (p, r) in cfg.eval.points.iter().zip(&rows) {
        let t = r["terms"].as_array().expect("terms");
        let nums: Vec<String> = p
            .iter()
            .map(|c| c.to_string())
            .chain(["total", "gain", "loss"].iter().map(|k| r[k].to_string()))
            .chain(t.iter().map(|c| c.to_string()))
            .collect();
        let _ = writeln!(csv, "{}", nums.join(","));
    }
    ctx.write_text("collision_eval.csv", &csv)?;
    ctx.write_json("collision_eval.json", &ctx.report("collision-eval", json!({"points": rows})))?;
    println!("collision-eval: {} points", rows.len());
    Ok(Outcome::Pass)
}

/// Gaussian fields used as data by the a priori checks.
pub fn apriori_fields() -> [DistributionField; 3] {
    let g = |cx: Vec3, cv: Vec3, a: f64| {
        DistributionField::formula(move |x, v| (-a * (x - cx).norm2() - (v - cv).norm2()).exp())
    };
    [
        g(Vec3::ZERO, Vec3::ZERO, 0.5),
        g(Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.0, 0.5, 0.0), 0.7),
        g(Vec3::new(0.0, -0.2, 0.1), Vec3::new(-0.4, 0.0, 0.3), 0.6),
    ]
}

/// Runs one lemma check with the configured sample settings.
pub fn run_lemma(cfg: &RunConfig, lemma: Lemma, exec: Exec) -> Result<BoundReport> {
    let v = &cfg.verify;
    let spec = SampleSpec {
        count: v.count,
        seed: cfg.seed,
        radial: v.radial,
        radial_max: v.radial_max,
        exec,
    };
    let w = cfg.weights.params()?;
    let probe_points = || -> Vec<(Vec3, Vec3)> {
        random_probes(1, v.apriori_probes, v.apriori_x_max, v.apriori_v_max, cfg.seed)
            .into_iter()
            .map(|(xs, vs)| (xs[0], vs[0]))
            .collect()
    };
    let collision = cfg.collision.build(cfg.grid.v_max, exec)?;
    let time = cfg.time.rule()?;
    let sampler = Sampler::random_only(cfg.grid.x_max, cfg.grid.v_max, 4096, cfg.seed).with_exec(exec);
    match lemma {
        Lemma::OneBracket => bounds::verify_one_bracket(&spec),
        Lemma::TimeIntegral => bounds::verify_time_integral(&spec),
        Lemma::Convolution => bounds::verify_convolution(&spec),
        Lemma::DeltaConvolution => bounds::verify_delta_convolution(&spec),
        Lemma::VelocityWeight => bounds::verify_velocity_weight(&spec),
        Lemma::AprioriEquation => {
            let [g, h, l] = apriori_fields();
            let opts = AprioriOptions {
                collision,
                time,
                probes: probe_points(),
                sampler,
            };
            verify_apriori_equation(&g, &h, &l, &w, &opts)
        }
        Lemma::AprioriHierarchy => {
            let [g, h, l] = apriori_fields();
            let m = Marginal::product(vec![g, h, l])?;
            let opts = AprioriHierarchyOptions {
                collision,
                time,
                probes: random_probes(1, v.apriori_probes, v.apriori_x_max, v.apriori_v_max, cfg.seed),
                sampler,
            };
            let reports = Term::ALL
                .iter()
                .map(|&t| verify_apriori_hierarchy(1, 1, t, &m, &w, &opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(merge_reports("apriori-hierarchy", reports))
        }
        Lemma::All => Err(Error::InvalidParam("`all` is not a single lemma".into())),
    }
}

/// Combines per-term reports: worst ratio, summed samples, all passes.
fn merge_reports(lemma: &str, reports: Vec<BoundReport>) -> BoundReport {
    let worst = reports
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.max_ratio > reports[b].max_ratio || r.max_ratio.is_nan() { i } else { b });
    BoundReport {
        lemma: lemma.to_string(),
        samples: reports.iter().map(|r| r.samples).sum(),
        params: json!({
            "terms": reports.iter().zip(Term::ALL).map(|(r, t)| json!({"term": t, "max_ratio": r.max_ratio, "params": r.params})).collect::<Vec<_>>(),
        }),
        max_ratio: reports[worst].max_ratio,
        worst_sample: reports[worst].worst_sample.clone(),
        pass: reports.iter().all(|r| r.pass),
    }
}

fn cmd_verify(ctx: &Ctx, lemma: Lemma) -> Result<Outcome> {
    let lemmas: Vec<Lemma> = if lemma == Lemma::All { Lemma::EACH.to_vec() } else { vec![lemma] };
    let mut outcome = Outcome::Pass;
    let mut summary = Vec::new();
    for l in lemmas {
        let r = run_lemma(ctx.cfg, l, ctx.exec)?;
        ctx.write_json(&format!("verify_{}.json", l.name()), &ctx.report("verify", serde_json::to_value(&r)?))?;
        println!(
            "verify {}: {} (samples {}, max ratio {:.6})",
            l.name(),
            if r.pass { "pass" } else { "FAIL" },
            r.samples,
            r.max_ratio
        );
        summary.push(json!({"lemma": l.name(), "pass": r.pass, "max_ratio": r.max_ratio, "samples": r.samples}));
        outcome = outcome.and(Outcome::from_pass(r.pass));
    }
    if lemma == Lemma::All {
        ctx.write_json("verify_summary.json", &ctx.report("verify", json!({"lemmas": summary})))?;
    }
    Ok(outcome)
}

fn mu_string(m: &HistoryMap) -> String {
    m.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_boardgame(ctx: &Ctx, sub: BoardCommand) -> Result<Outcome> {
    let b = &ctx.cfg.boardgame;
    match sub {
        BoardCommand::Enumerate => {
            let all = enumerate_histories(b.k, b.n, b.cap)?;
            let classes = partition_classes(b.k, b.n, ctx.exec)?;
            let mut rep_of = std::collections::BTreeMap::new();
            for (rep, members) in &classes {
                for m in members {
                    rep_of.insert(m.clone(), rep.clone());
                }
            }
            let mut csv = String::from("index,mu,echelon,representative\n");
            for (i, m) in all.iter().enumerate() {
                let _ = writeln!(csv, "{i},{},{},{}", mu_string(m), m.is_echelon(), mu_string(&rep_of[m]));
            }
            ctx.write_text(&format!("histories_k{}_n{}.csv", b.k, b.n), &csv)?;
            let mut csv = String::from("representative,size,members\n");
            for (rep, members) in &classes {
                let list: Vec<String> = members.iter().map(mu_string).collect();
                let _ = writeln!(csv, "{},{},{}", mu_string(rep), members.len(), list.join(";"));
            }
            ctx.write_text(&format!("classes_k{}_n{}.csv", b.k, b.n), &csv)?;
            let covered: usize = classes.values().map(Vec::len).sum();
            println!("k={} n={}: {} histories, {} classes", b.k, b.n, all.len(), classes.len());
            Ok(Outcome::from_pass(covered == all.len()))
        }
        BoardCommand::Reduce => {
            let state = b.state(ctx.cfg.seed, None)?;
            let red = reduce_to_echelon(&state)?;
            let ends = if boardgame::history_count(b.k, b.n)? <= 1_000_000 {
                Some(reachable_echelons(&state.mu)?)
            } else {
                None
            };
            let unique = ends.as_ref().map(|e| e.len() == 1 && e.contains(&red.echelon));
            let pass = red.echelon.is_echelon() && unique != Some(false);
            let body = json!({
                "reduction": red,
                "moves": red.trace.len(),
                "reachable_echelons": ends,
                "unique_echelon": unique,
                "pass": pass,
            });
            ctx.write_json("reduce_trace.json", &ctx.report("boardgame reduce", body))?;
            println!("reduce: [{}] -> [{}] in {} moves", mu_string(&state.mu), mu_string(&red.echelon), red.trace.len());
            Ok(Outcome::from_pass(pass))
        }
        BoardCommand::Count => {
            let mut csv = String::from("k,n,histories,echelon,classes,bound,within_bound\n");
            let mut pass = true;
            let mut sizes: Vec<(usize, usize)> = (1..=b.k_max).flat_map(|k| (2..=b.n_max).map(move |n| (k, n))).collect();
            if !sizes.contains(&(b.k, b.n)) {
                sizes.insert(0, (b.k, b.n));
            }
            for (k, n) in sizes {
                let c = count_echelon(k, n)?;
                let classes = if c.histories <= b.cap {
                    Some(partition_classes(k, n, ctx.exec)?.len() as u128)
                } else {
                    None
                };
                pass &= c.within_bound && classes.is_none_or(|cl| cl == c.echelon);
                let cl = classes.map(|c| c.to_string()).unwrap_or_default();
                let _ = writeln!(csv, "{k},{n},{},{},{cl},{},{}", c.histories, c.echelon, c.bound, c.within_bound);
                if (k, n) == (b.k, b.n) {
                    println!("k={k} n={n}: {} echelon forms, bound {}", c.echelon, c.bound);
                }
            }
            ctx.write_text("echelon_counts.csv", &csv)?;
            Ok(Outcome::from_pass(pass))
        }
        BoardCommand::Invariance => {
            let coll = b.collision(ctx.exec)?;
            let state = b.state(ctx.cfg.seed, Some(default_move_values(b.k, b.n)))?;
            let g = labeled_gaussian_product(b.k + 2 * b.n)?;
            let probes = random_probes(b.k, b.probes, b.probe_x_max, b.probe_v_max, ctx.cfg.seed);
            let inv = verify_move_invariance(&state, &g, b.horizon, b.per_dim, &probes, &coll)?;
            let f = labeled_gaussian_product(b.swap_level)?;
            let swap_probes = random_probes(b.swap_level - 2, b.swap_probes, b.probe_x_max, b.probe_v_max, ctx.cfg.seed);
            let j = b.swap_j;
            let mut swaps = Vec::new();
            for term in Term::ALL {
                // One μ(ℓ) per position case: outside, paired, shifted.
                for mu_l in [1, j, j - 1] {
                    swaps.push(verify_identity_swap(term, b.swap_level, j, mu_l, &f, &swap_probes, &coll)?);
                }
            }
            let swap_gap = swaps.iter().map(|r| r.max_gap).fold(0.0, f64::max);
            let pass = inv.max_gap <= b.tolerance && swap_gap <= b.swap_tolerance;
            let body = json!({
                "invariance": inv,
                "tolerance": b.tolerance,
                "swap": swaps,
                "swap_max_gap": swap_gap,
                "swap_tolerance": b.swap_tolerance,
                "pass": pass,
            });
            ctx.write_json("invariance_report.json", &ctx.report("boardgame invariance", body))?;
            println!(
                "invariance: {} (move gap {:.3e}, swap gap {:.3e})",
                if pass { "pass" } else { "FAIL" },
                inv.max_gap,
                swap_gap
            );
            Ok(Outcome::from_pass(pass))
        }
    }
}

/// A state with a move at the first level: `μ(k+2) = 2`, `μ(k+4) = 1`,
/// remaining levels `1`.
pub fn default_move_values(k: usize, n: usize) -> Vec<usize> {
    let mut v = vec![1; n];
    if k >= 2 {
        v[0] = 2;
    }
    v
}

fn load_mixture(h: &HierarchySection) -> Result<MixtureData> {
    match &h.mixture {
        Some(p) => MixtureData::load(p),
        None => Ok(default_mixture()),
    }
}

fn cmd_hierarchy(ctx: &Ctx, sub: HierarchyCommand) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let h = &cfg.hierarchy;
    match sub {
        HierarchyCommand::Residual => {
            let w = cfg.weights.params()?;
            let scfg = cfg.solver_config(w, ctx.exec)?;
            let f0 = cfg.scaled_data(h.data, cfg.solver.data_fraction, &scfg)?;
            let (state, solve) = picard_solve(&f0, &scfg)?;
            let path = MarginalPath::new(vec![1.0], vec![state])?;
            let mut reports = Vec::new();
            for k in 1..=h.k_max {
                let probes = node_probes(&scfg, k, h.probes, cfg.seed);
                reports.push(duhamel_residual(k, &path, &Marginal::tensor(f0.clone(), k)?, &probes, &scfg)?);
            }
            let worst = reports.iter().map(|r| r.max).fold(0.0, f64::max);
            let pass = worst <= h.residual_tolerance;
            let body = json!({"solve": solve, "residuals": reports, "tolerance": h.residual_tolerance, "pass": pass});
            ctx.write_json("hierarchy_residual.json", &ctx.report("hierarchy residual", body))?;
            println!("hierarchy residual: {} (max {:.3e})", if pass { "pass" } else { "FAIL" }, worst);
            Ok(Outcome::from_pass(pass))
        }
        HierarchyCommand::Admissibility => {
            let mix = load_mixture(h)?;
            mix.validate()?;
            let seq = mix.sequence(h.k_max.max(2))?;
            let r = admissibility_check(&seq, &h.admissibility, ctx.exec)?;
            ctx.write_json("admissibility.json", &ctx.report("hierarchy admissibility", serde_json::to_value(&r)?))?;
            println!(
                "admissibility: {}{}",
                if r.pass { "pass" } else { "FAIL" },
                if r.flagged.is_empty() { String::new() } else { format!(" (flagged: {})", r.flagged.join(", ")) }
            );
            Ok(Outcome::from_pass(r.pass))
        }
        HierarchyCommand::Mixture => {
            let mix = load_mixture(h)?;
            let w = cfg.weights.hierarchy_params()?;
            let scfg = cfg.solver_config(w, ctx.exec)?;
            let sol = mixture_solution(&mix, h.k_max, &scfg, h.probes, cfg.seed)?;
            let converged = sol.reports.iter().all(|r| r.converged);
            let pass = converged && sol.bound_holds;
            let body = json!({
                "weights": w,
                "mixture": mix,
                "component_norms": sol.component_norms,
                "component_bound": sol.component_bound,
                "hierarchy_norm": sol.hierarchy_norm,
                "bound_holds": sol.bound_holds,
                "solves": sol.reports,
                "pass": pass,
            });
            ctx.write_json("hierarchy_mixture.json", &ctx.report("hierarchy mixture", body))?;
            println!(
                "hierarchy mixture: {} (sup e^(mu k) norm {:.3e})",
                if pass { "pass" } else { "FAIL" },
                sol.hierarchy_norm
            );
            Ok(Outcome::from_pass(pass))
        }
    }
}
