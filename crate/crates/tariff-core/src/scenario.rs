//! Scenario configuration, solving with diagnostics, sweeps and file output.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{best_response_closed_form, IndirectUtility};
use crate::const_h::{build_tariff_const_h, solve_x0_star, ConstHSolution, Route};
use crate::error::{Result, TariffError};
use crate::evaluation::{perturbation_audit, principal_utility, surplus_total, Boundary, PerturbationAudit, ResponseMode};
use crate::model::{ModelParams, ModelSpec};
use crate::numerics::linspace;
use crate::oracle::{oracle_agent_sweep, oracle_relaxed_maximize_const_h, oracle_slope_grid};
use crate::tariff::{Tariff, TariffSegment};
use crate::typed_h::{
    build_bridge, build_tariff_typed_h, solve_a0_b0_star, stationarity_residual, BridgeKind, BridgeReport,
    TypedHSolution,
};
use crate::uconvex::{check_u_convexity, tariff_round_trip, SampledFunctionOfType, TariffRoundTrip, UConvexityReport};

/// Version stamped on every emitted file.
pub const SCHEMA_VERSION: u32 = 1;
/// Smallest accepted size of any configured grid.
pub const MIN_GRID: usize = 16;
/// Headroom of sampled consumption ranges above the largest chosen consumption.
pub const CONSUMPTION_HEADROOM: f64 = 1.25;
/// Agent audit: achieved value must match `p*` to this absolute tolerance.
pub const AGENT_VALUE_TOLERANCE: f64 = 1e-6;
/// Excluded types may exceed their outside option by at most this much.
pub const EXCLUSION_TOLERANCE: f64 = 1e-6;
/// Nodes of the stationarity check on each served component.
pub const STATIONARITY_NODES: usize = 200;

/// A scenario file: model plus solver and numerical settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub numerics: Numerics,
    /// Omit the top tariff segment that no type selects.
    #[serde(default = "default_true")]
    pub simplified_tariff: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default)]
    pub route: Route,
    #[serde(default)]
    pub bridge: BridgeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Type nodes of the emitted tables and of the u-convexity checks.
    pub type_samples: usize,
    /// Consumption nodes per time node in `tariff.csv`.
    pub tariff_samples: usize,
    /// Consumption nodes of the round trip and of the agent audit.
    pub consumption_grid: usize,
    /// Types of the agent audit.
    pub audit_types: usize,
    pub audit_directions: usize,
    pub audit_epsilon: f64,
    /// Type cells of the relaxed-problem oracle.
    pub oracle_types: usize,
    /// Slope candidates per cell of the relaxed-problem oracle.
    pub oracle_slopes: usize,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            type_samples: 201,
            tariff_samples: 257,
            consumption_grid: 4001,
            audit_types: 1000,
            audit_directions: 20,
            audit_epsilon: 1e-4,
            oracle_types: 200,
            oracle_slopes: 4001,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    /// Parses a JSON scenario; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            TariffError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| TariffError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        let grids = [
            ("type_samples", n.type_samples),
            ("tariff_samples", n.tariff_samples),
            ("consumption_grid", n.consumption_grid),
            ("audit_types", n.audit_types),
            ("oracle_types", n.oracle_types),
            ("oracle_slopes", n.oracle_slopes),
        ];
        for (name, size) in grids {
            if size < MIN_GRID {
                return Err(TariffError::Config(format!(
                    "numerics.{name}: must be at least {MIN_GRID}, got {size}"
                )));
            }
        }
        if n.audit_directions == 0 {
            return Err(TariffError::Config("numerics.audit_directions: must be positive".into()));
        }
        if !(n.audit_epsilon > 0.0 && n.audit_epsilon.is_finite()) {
            return Err(TariffError::Config(format!(
                "numerics.audit_epsilon: must be positive, got {}",
                n.audit_epsilon
            )));
        }
        self.params().map(|_| ())
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.model.clone()).map_err(|e| match e {
            TariffError::Config(msg) => TariffError::Config(format!("model.{msg}")),
            other => other,
        })
    }
}

/// Solver output for either kind of outside option.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solved {
    ConstantReservation(ConstHSolution),
    TypedReservation {
        solution: TypedHSolution,
        bridge: crate::typed_h::Bridge,
        bridge_reports: Vec<BridgeReport>,
    },
}

/// A solved scenario: model, solution, tariff and indirect utility.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Arc<ModelParams>,
    pub solved: Solved,
    pub tariff: Tariff,
    pub utility: IndirectUtility,
}

impl Scenario {
    /// Dispatches on the outside option: constant or type-dependent.
    pub fn solve(config: ScenarioConfig) -> Result<Self> {
        let model = Arc::new(config.params()?);
        let full = !config.simplified_tariff;
        let (solved, tariff, utility) = if model.reservation().is_constant() {
            let sol = solve_x0_star(&model, config.solver.route)?;
            let (tariff, utility) = build_tariff_const_h(model.clone(), &sol, full)?;
            (Solved::ConstantReservation(sol), tariff, utility)
        } else {
            let sol = solve_a0_b0_star(&model)?;
            let (bridge, reports) = build_bridge(&model, &sol, config.solver.bridge);
            let (tariff, utility) = build_tariff_typed_h(model.clone(), &sol, &bridge, full)?;
            let solved = Solved::TypedReservation {
                solution: sol,
                bridge,
                bridge_reports: reports,
            };
            (solved, tariff, utility)
        };
        Ok(Scenario {
            config,
            model,
            solved,
            tariff,
            utility,
        })
    }

    pub fn boundary(&self) -> Boundary {
        match &self.solved {
            Solved::ConstantReservation(sol) => Boundary::Threshold { x0: sol.x0 },
            Solved::TypedReservation { solution, .. } => Boundary::TwoSided {
                a0: solution.a0,
                b0: solution.b0,
            },
        }
    }

    /// Optimal value of the relaxed problem.
    pub fn relaxed_value(&self) -> f64 {
        match &self.solved {
            Solved::ConstantReservation(sol) => sol.principal_utility,
            Solved::TypedReservation { solution, .. } => solution.principal_utility,
        }
    }

    /// Served components `(lo, hi)` of the relaxed solution.
    pub fn components(&self) -> Vec<(f64, f64)> {
        self.boundary().components().into_iter().map(|(lo, hi, _)| (lo, hi)).collect()
    }

    /// Segment chosen at the first time node by the type at the midpoint of
    /// the longest served component.
    pub fn primary_segment(&self) -> Result<Option<TariffSegment>> {
        let longest = self
            .components()
            .into_iter()
            .max_by(|a, b| (a.1 - a.0).partial_cmp(&(b.1 - b.0)).unwrap());
        let Some((lo, hi)) = longest else {
            return Ok(None);
        };
        let (c, _) = self.tariff.best_response(&self.model, 0, 0.5 * (lo + hi))?;
        Ok(Some(*self.tariff.segment_at(0, c)))
    }

    /// Type nodes spread over the served components.
    fn served_nodes(&self, n: usize) -> Vec<f64> {
        let comps = self.components();
        let total: f64 = comps.iter().map(|(lo, hi)| hi - lo).sum();
        let mut xs = Vec::new();
        for (lo, hi) in comps {
            let m = ((n as f64 * (hi - lo) / total).round() as usize).max(2);
            xs.extend(linspace(lo, hi, m));
        }
        xs
    }

    /// Largest consumption chosen at time node `ti` by a served type.
    fn top_consumption(&self, ti: usize) -> Result<f64> {
        let mut top: f64 = 0.0;
        for x in self.served_nodes(self.config.numerics.type_samples) {
            top = top.max(self.tariff.best_response(&self.model, ti, x)?.0);
        }
        Ok(if top > 0.0 { top } else { 1.0 })
    }

    /// Consumption nodes on `[0, headroom * top]`, starting above zero when
    /// `gamma < 0`.
    fn consumption_nodes(&self, top: f64, n: usize) -> Vec<f64> {
        let hi = CONSUMPTION_HEADROOM * top;
        let lo = if self.model.gamma() > 0.0 { 0.0 } else { hi / n as f64 };
        linspace(lo, hi, n)
    }

    /// Full diagnostics; `with_oracle` adds the brute-force audits.
    pub fn report(&self, with_oracle: bool) -> Result<Report> {
        let params = &*self.model;
        let num = &self.config.numerics;
        let evaluation = principal_utility(params, &self.tariff)?;
        let relaxed = self.relaxed_value();
        let boundary = self.boundary();
        let mut warnings = Vec::new();

        let (first_order_residual, unique) = match &self.solved {
            Solved::ConstantReservation(sol) => (sol.foc_residual, Some(sol.unique)),
            Solved::TypedReservation { solution, .. } => (
                stationarity_residual(params, solution, &self.utility, STATIONARITY_NODES),
                None,
            ),
        };
        if unique == Some(false) {
            warnings.push("uniqueness of the boundary is not guaranteed".to_string());
        }

        let served = self.served_nodes(num.type_samples);
        let (u_convexity, round_trip) = if served.is_empty() {
            (None, None)
        } else {
            let top = (0..params.n_times())
                .map(|ti| self.top_consumption(ti))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            let c_grid = self.consumption_nodes(top, num.consumption_grid);
            let sampled = SampledFunctionOfType {
                time_grid: params.time_grid().to_vec(),
                x_grid: served.clone(),
                values: self.utility.sample(&served),
            };
            let rt = tariff_round_trip(params, &self.tariff, &sampled, &c_grid)?;
            let conv_grid = self.convexity_nodes(num.type_samples);
            let conv_sample = SampledFunctionOfType {
                time_grid: params.time_grid().to_vec(),
                x_grid: conv_grid.clone(),
                values: self.utility.sample(&conv_grid),
            };
            let uc = check_u_convexity(params, &conv_sample, Some(&c_grid))?;
            if !rt.within_bound {
                warnings.push("tariff round trip exceeds twice its resolution bound".to_string());
            }
            (Some(uc), Some(rt))
        };
        if let Some(uc) = &u_convexity {
            if !uc.is_u_convex {
                warnings.push("indirect utility is not u-convex; the relaxed value may not be attained".to_string());
            }
        }

        let mut bridge_invariance = None;
        if let Solved::TypedReservation {
            solution,
            bridge_reports,
            ..
        } = &self.solved
        {
            if !solution.separated {
                warnings.push("served components are closer than one half; glued indirect utility is not convex".into());
            }
            if !bridge_reports.iter().any(BridgeReport::valid) && solution.b0 < solution.a0 {
                warnings.push("no bridge candidate passes every check".into());
            }
            bridge_invariance = self.bridge_invariance(solution, bridge_reports, evaluation.principal_utility)?;
        }

        let perturbation = perturbation_audit(
            params,
            &self.utility,
            &boundary,
            num.audit_directions,
            num.audit_epsilon,
            num.seed,
        );
        let oracle = if with_oracle { Some(self.oracle_audit()?) } else { None };
        Ok(Report {
            schema: format!("report/{SCHEMA_VERSION}"),
            solver: match self.solved {
                Solved::ConstantReservation(_) => "constant_reservation",
                Solved::TypedReservation { .. } => "typed_reservation",
            }
            .to_string(),
            boundary,
            relaxed_value: relaxed,
            principal_utility: evaluation.principal_utility,
            participation: evaluation.participation.intervals.clone(),
            revenue: evaluation.revenue.clone(),
            aggregate: evaluation.aggregate.clone(),
            diagnostics: Diagnostics {
                first_order_residual,
                unique,
                tariff_value_gap: (evaluation.principal_utility - relaxed).abs() / relaxed.abs().max(1.0),
                max_jump: (0..self.tariff.n_times()).map(|ti| self.tariff.max_jump(ti)).fold(0.0, f64::max),
                u_convexity,
                round_trip,
                perturbation,
                bridge_invariance,
            },
            oracle,
            warnings,
            solution: self.solved.clone(),
            tariff: self.tariff.clone(),
            config: self.config.clone(),
        })
    }

    /// Nodes for the convexity test: the served set for a threshold, all
    /// types (bridge included) for two-sided boundaries.
    fn convexity_nodes(&self, n: usize) -> Vec<f64> {
        match self.boundary() {
            Boundary::Threshold { x0 } => linspace(x0, 1.0, n),
            Boundary::TwoSided { .. } => linspace(0.0, 1.0, n),
        }
    }

    /// Largest difference in principal utility between the chosen bridge and
    /// another valid, distinct one.
    fn bridge_invariance(&self, sol: &TypedHSolution, reports: &[BridgeReport], base: f64) -> Result<Option<f64>> {
        if sol.b0 >= sol.a0 || !reports.iter().all(BridgeReport::valid) {
            return Ok(None);
        }
        let other = match self.config.solver.bridge {
            BridgeKind::Chord => BridgeKind::Tangent,
            BridgeKind::Tangent => BridgeKind::Chord,
        };
        let (bridge, _) = build_bridge(&self.model, sol, other);
        if bridge.kind != other {
            return Ok(None);
        }
        let (tariff, _) = build_tariff_typed_h(self.model.clone(), sol, &bridge, !self.config.simplified_tariff)?;
        let value = principal_utility(&self.model, &tariff)?.principal_utility;
        Ok(Some((value - base).abs()))
    }

    fn oracle_audit(&self) -> Result<OracleAudit> {
        let params = &*self.model;
        let num = &self.config.numerics;
        let relaxed = match &self.solved {
            Solved::ConstantReservation(sol) => {
                let grid = oracle_slope_grid(params, sol, num.oracle_types, num.oracle_slopes);
                let res = oracle_relaxed_maximize_const_h(params, num.oracle_types, &grid)?;
                let scale = sol.principal_utility.abs().max(f64::MIN_POSITIVE);
                Some(RelaxedOracle {
                    value: res.value,
                    x0: res.x0,
                    relative_gap: (res.value - sol.principal_utility).abs() / scale,
                    rounds: res.rounds,
                    at_jump: res.at_jump,
                })
            }
            Solved::TypedReservation { .. } => None,
        };
        Ok(OracleAudit {
            relaxed,
            agents: self.agent_audit()?,
        })
    }

    /// Grid best responses against the closed form at `audit_types` types.
    pub fn agent_audit(&self) -> Result<AgentAudit> {
        let params = &*self.model;
        let num = &self.config.numerics;
        let xs = linspace(0.0, 1.0, num.audit_types);
        let top = (0..params.n_times())
            .map(|ti| self.top_consumption(ti))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let c_grid = self.consumption_nodes(top, num.consumption_grid);
        let step = c_grid[1] - c_grid[0];
        let coarse = oracle_agent_sweep(&self.tariff, params, &xs, &c_grid, false)?;
        let fine = oracle_agent_sweep(&self.tariff, params, &xs, &c_grid, true)?;
        let comps = self.components();
        let served = |x: f64| comps.iter().any(|&(lo, hi)| x >= lo && x <= hi);
        let n_t = params.n_times();
        let mut audit = AgentAudit {
            types: xs.len(),
            consumption_nodes: c_grid.len(),
            max_grid_steps: 0.0,
            max_value_error: 0.0,
            max_excluded_surplus: f64::NEG_INFINITY,
            zero_below_half: None,
            passed: true,
        };
        let mut zero_below_half = true;
        for (i, &x) in xs.iter().enumerate() {
            let rows: Vec<_> = (0..n_t).map(|ti| (&coarse[ti * xs.len() + i], &fine[ti * xs.len() + i])).collect();
            if served(x) {
                // A type without taste for consumption has no interior best response.
                let tasteless = params.taste(x) <= 0.0;
                for (ti, (c, f)) in rows.iter().enumerate().filter(|_| !tasteless) {
                    let exact = best_response_closed_form(&self.utility, ti, x)?;
                    audit.max_grid_steps = audit.max_grid_steps.max((c.c_opt - exact).abs() / step);
                    audit.max_value_error = audit.max_value_error.max((f.value - self.utility.value(ti, x)).abs());
                }
            } else {
                let values: Vec<f64> = rows.iter().map(|(_, f)| f.value).collect();
                let gap = params.time_integral(&values) - params.reservation().value(x);
                audit.max_excluded_surplus = audit.max_excluded_surplus.max(gap);
            }
            if x <= 0.5 && rows.iter().any(|(c, _)| c.c_opt != 0.0) {
                zero_below_half = false;
            }
        }
        if params.gamma() > 0.0 && params.is_canonical_uniform() && params.reservation().is_constant() {
            audit.zero_below_half = Some(zero_below_half);
        }
        audit.passed = audit.max_grid_steps <= 1.0
            && audit.max_value_error <= AGENT_VALUE_TOLERANCE
            && audit.max_excluded_surplus < EXCLUSION_TOLERANCE
            && audit.zero_below_half != Some(false);
        Ok(audit)
    }

    /// Writes `report.json`, `tariff.csv`, `indirect_utility.csv` and
    /// `consumption.csv` into `dir`.
    pub fn write_outputs(&self, report: &Report, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        fs::write(dir.join("report.json"), json)?;
        let params = &*self.model;
        let num = &self.config.numerics;

        let mut rows = Vec::new();
        for ti in 0..params.n_times() {
            let top = self.top_consumption(ti)?;
            for c in self.consumption_nodes(top, num.tariff_samples) {
                rows.push(TariffRow {
                    time_index: ti,
                    t: params.time_grid()[ti],
                    c,
                    price: self.tariff.price(ti, c),
                    segment: self.tariff.segment_at(ti, c).kind,
                });
            }
        }
        write_csv(&dir.join("tariff.csv"), "tariff", &rows)?;

        let xs = linspace(0.0, 1.0, num.type_samples);
        let comps = self.components();
        let mut totals = Vec::with_capacity(xs.len());
        for &x in &xs {
            totals.push(IndirectRow {
                x,
                surplus: surplus_total(params, &self.tariff, &ResponseMode::Analytic, x)?,
                reservation: params.reservation().value(x),
                participating: comps.iter().any(|&(lo, hi)| x >= lo && x <= hi),
            });
        }
        write_csv(&dir.join("indirect_utility.csv"), "indirect_utility", &totals)?;

        let mut consumption = Vec::new();
        for ti in 0..params.n_times() {
            for &x in &xs {
                let (c, surplus) = self.tariff.best_response(params, ti, x)?;
                consumption.push(ConsumptionRow {
                    time_index: ti,
                    t: params.time_grid()[ti],
                    x,
                    consumption: c,
                    surplus,
                });
            }
        }
        write_csv(&dir.join("consumption.csv"), "consumption", &consumption)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: String,
    pub solver: String,
    pub boundary: Boundary,
    /// Optimal value of the relaxed problem.
    pub relaxed_value: f64,
    /// Principal's utility of the emitted tariff, by quadrature over agents.
    pub principal_utility: f64,
    pub participation: Vec<(f64, f64)>,
    pub revenue: Vec<f64>,
    pub aggregate: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub oracle: Option<OracleAudit>,
    pub warnings: Vec<String>,
    pub solution: Solved,
    pub tariff: Tariff,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub first_order_residual: f64,
    pub unique: Option<bool>,
    /// `|U_P(tariff) - relaxed| / max(1, |relaxed|)`.
    pub tariff_value_gap: f64,
    pub max_jump: f64,
    pub u_convexity: Option<UConvexityReport>,
    pub round_trip: Option<TariffRoundTrip>,
    pub perturbation: PerturbationAudit,
    pub bridge_invariance: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleAudit {
    pub relaxed: Option<RelaxedOracle>,
    pub agents: AgentAudit,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxedOracle {
    pub value: f64,
    pub x0: f64,
    pub relative_gap: f64,
    pub rounds: usize,
    pub at_jump: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentAudit {
    pub types: usize,
    pub consumption_nodes: usize,
    /// Largest `|c_grid - c*| / step` over served types.
    pub max_grid_steps: f64,
    /// Largest `|refined value - p*|` over served types.
    pub max_value_error: f64,
    /// Largest `P*(x) - H(x)` over excluded types.
    pub max_excluded_surplus: f64,
    /// Zero consumption for `x <= 1/2`; checked only where it is expected.
    pub zero_below_half: Option<bool>,
    pub passed: bool,
}

#[derive(Serialize)]
struct TariffRow {
    time_index: usize,
    t: f64,
    c: f64,
    price: f64,
    segment: crate::tariff::SegmentKind,
}

#[derive(Serialize)]
struct IndirectRow {
    x: f64,
    surplus: f64,
    reservation: f64,
    participating: bool,
}

#[derive(Serialize)]
struct ConsumptionRow {
    time_index: usize,
    t: f64,
    x: f64,
    consumption: f64,
    surplus: f64,
}

/// CSV with a leading `#schema=<name>/<version>` line.
fn write_csv<T: Serialize>(path: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "#schema={name}/{SCHEMA_VERSION}")?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Solves the scenario in `config_path` and writes every output into `out`.
pub fn run_scenario(config_path: &Path, out: &Path, with_oracle: bool, full_tariff: bool) -> Result<Report> {
    let mut config = ScenarioConfig::load(config_path)?;
    if full_tariff {
        config.simplified_tariff = false;
    }
    let scenario = Scenario::solve(config)?;
    let report = scenario.report(with_oracle)?;
    scenario.write_outputs(&report, out)?;
    Ok(report)
}

/// Parameter scaled by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// Multiplies the outside option.
    #[serde(rename = "H_scale")]
    HScale,
    /// Multiplies the cost profile `k(t)`.
    #[serde(rename = "k_scale")]
    KScale,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::HScale => "H_scale",
            SweepParameter::KScale => "k_scale",
        }
    }

    pub fn apply(self, spec: &ModelSpec, value: f64) -> ModelSpec {
        let mut spec = spec.clone();
        match self {
            SweepParameter::HScale => spec.reservation = spec.reservation.scaled(value),
            SweepParameter::KScale => spec.k = spec.k.scaled(value),
        }
        spec
    }
}

impl FromStr for SweepParameter {
    type Err = TariffError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H_scale" => Ok(SweepParameter::HScale),
            "k_scale" => Ok(SweepParameter::KScale),
            other => Err(TariffError::Config(format!(
                "param: expected H_scale or k_scale, got {other}"
            ))),
        }
    }
}

/// One solved point of a sweep. Tariff coefficients are those of the
/// primary segment at the first time node.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub x0: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p3: Option<f64>,
    pub principal_utility: f64,
}

/// Solves the scenario once per value, in increasing order of value.
pub fn sweep(config: &ScenarioConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(TariffError::Config(format!(
            "values: a sweep needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TariffError::Config("values: must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted
        .into_iter()
        .map(|value| {
            let mut point = config.clone();
            point.model = parameter.apply(&config.model, value);
            point.validate()?;
            let scenario = Scenario::solve(point)?;
            let (x0, a0, b0) = match scenario.boundary() {
                Boundary::Threshold { x0 } => (Some(x0), None, None),
                Boundary::TwoSided { a0, b0 } => (None, Some(a0), Some(b0)),
            };
            let seg = scenario.primary_segment()?;
            Ok(SweepRow {
                parameter: parameter.name().to_string(),
                value,
                x0,
                a0,
                b0,
                p1: seg.map(|s| s.p1),
                p2: seg.map(|s| s.p2),
                p3: seg.map(|s| s.p3),
                principal_utility: scenario.relaxed_value(),
            })
        })
        .collect()
}

/// Runs a sweep over the scenario in `config_path` and writes `sweep.csv`.
pub fn run_sweep(config_path: &Path, parameter: SweepParameter, values: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    let config = ScenarioConfig::load(config_path)?;
    let rows = sweep(&config, parameter, values)?;
    fs::create_dir_all(out)?;
    write_csv(&out.join("sweep.csv"), "sweep", &rows)?;
    Ok(rows)
}
