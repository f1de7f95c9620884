//! Strictly concave type-dependent reservation utility.
//!
//! The optimum serves `[0, b0] ∪ [a0, 1]`. Each served component carries the
//! kernel indirect utility of its bracket, anchored at the reservation value of
//! its boundary type, and the gap `(b0, a0)` is filled by a bridge that stays
//! strictly below the reservation utility so that nobody in it signs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{IndirectUtility, KernelPiece, LinearPiece, Piece, MIN_COMPONENT_WIDTH};
use crate::const_h::{capacity_a, demand_scale, surplus_term};
use crate::error::{Result, TariffError};
use crate::model::{Branch, KernelMode, ModelParams};
use crate::numerics::{golden_max, linspace};
use crate::tariff::{exclusion_tariff, envelope_segments, SegmentKind, Tariff, TariffSegment};

/// Type nodes used to check the structural assumptions.
pub const VALIDATION_NODES: usize = 1001;
/// Points per axis of the boundary search grid.
pub const SEARCH_GRID: usize = 256;
/// Coordinate tolerance of the boundary refinement.
pub const REFINE_TOLERANCE: f64 = 1e-9;
/// Slack allowed on the certificate inequalities at the reported optimum.
pub const CERTIFICATE_SLACK: f64 = 1e-8;
/// Interior nodes used to validate a bridge.
pub const BRIDGE_CHECK_NODES: usize = 199;
/// Nodes per component when a tariff is built from a sampled indirect utility.
pub const SAMPLED_TARIFF_NODES: usize = 513;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionFailure {
    pub condition: String,
    pub lo: f64,
    pub hi: f64,
}

/// Outcome of each structural condition; `true` means it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AssumptionFlags {
    /// `g / g' <= H / H'` on the type grid.
    pub elasticity: bool,
    /// Both slope shapes divided by `gamma` are nondecreasing where finite.
    pub slope_monotone: bool,
    pub strictly_concave: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub flags: AssumptionFlags,
    pub failures: Vec<AssumptionFailure>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn require(&self) -> Result<()> {
        match self.failures.first() {
            None => Ok(()),
            Some(f) => Err(TariffError::AssumptionViolation {
                condition: f.condition.clone(),
                lo: f.lo,
                hi: f.hi,
            }),
        }
    }
}

fn failure_range(condition: &str, xs: &[f64]) -> Option<AssumptionFailure> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (!xs.is_empty()).then(|| AssumptionFailure {
        condition: condition.to_string(),
        lo,
        hi,
    })
}

/// Nodes where `g / g' <= H / H'` fails. Nodes with a non-finite input are
/// skipped; `H' = 0` reads as `H / H' = ±inf` by the sign of `H`.
pub fn check_elasticity<G, DG, H, DH>(g: G, dg: DG, h: H, dh: DH, nodes: &[f64]) -> Vec<f64>
where
    G: Fn(f64) -> f64,
    DG: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
    DH: Fn(f64) -> f64,
{
    nodes
        .iter()
        .copied()
        .filter(|&x| {
            let (gv, dgv, hv, dhv) = (g(x), dg(x), h(x), dh(x));
            if ![gv, dgv, hv, dhv].iter().all(|v| v.is_finite()) || dgv == 0.0 {
                return false;
            }
            let lhs = gv / dgv;
            let rhs = if dhv == 0.0 {
                if hv >= 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                hv / dhv
            };
            lhs > rhs + 1e-10 * (1.0 + lhs.abs())
        })
        .collect()
}

pub fn validate_assumptions(params: &ModelParams) -> AssumptionReport {
    let nodes = linspace(0.0, 1.0, VALIDATION_NODES);
    let r = params.reservation();
    let gamma = params.gamma();
    let mut failures = Vec::new();

    let bad = check_elasticity(
        |x| params.taste(x),
        |x| params.taste_derivative(x),
        |x| r.value(x),
        |x| r.derivative(x),
        &nodes,
    );
    let elasticity = bad.is_empty();
    failures.extend(failure_range("elasticity", &bad));

    let mut bad = Vec::new();
    for branch in [Branch::Lower, Branch::Upper] {
        let mut prev: Option<f64> = None;
        for &x in &nodes {
            if gamma < 0.0 && params.bracket(branch, x) <= 0.0 {
                prev = None;
                continue;
            }
            let v = params.slope_shape(branch, x) / gamma;
            if let Some(p) = prev {
                if v < p - 1e-12 * p.abs().max(1.0) {
                    bad.push(x);
                }
            }
            prev = Some(v);
        }
    }
    let slope_monotone = bad.is_empty();
    failures.extend(failure_range("slope_monotonicity", &bad));

    let dh: Vec<f64> = nodes.iter().map(|&x| r.derivative(x)).collect();
    let bad: Vec<f64> = dh
        .windows(2)
        .zip(&nodes[1..])
        .filter(|(w, _)| w[0].is_finite() && w[1].is_finite() && w[1] >= w[0])
        .map(|(_, &x)| x)
        .collect();
    let strictly_concave = bad.is_empty();
    failures.extend(failure_range("strict_concavity", &bad));

    AssumptionReport {
        flags: AssumptionFlags {
            elasticity,
            slope_monotone,
            strictly_concave,
        },
        failures,
    }
}

/// Normalized aggregate demand of `[0, b0] ∪ [a0, 1]` for canonical taste and
/// uniform density: `ell = (1-gamma) / (2 (2-gamma)) * R`.
pub fn r_gamma(gamma: f64, a0: f64, b0: f64) -> f64 {
    let q = (2.0 - gamma) / (1.0 - gamma);
    if gamma > 0.0 {
        1.0 + (2.0 * b0).powf(q) - (2.0 * a0 - 1.0).max(0.0).powf(q)
    } else {
        1.0 - (1.0 - 2.0 * b0).max(0.0).powf(q) + (2.0 - 2.0 * a0).powf(q)
    }
}

pub fn kernel_mode(params: &ModelParams) -> KernelMode {
    if params.is_canonical_uniform() {
        KernelMode::ClosedForm
    } else {
        KernelMode::Quadrature
    }
}

pub fn ell_ab(params: &ModelParams, a0: f64, b0: f64) -> f64 {
    let mode = kernel_mode(params);
    params.demand_integral_with(mode, Branch::Lower, 0.0, b0)
        + params.demand_integral_with(mode, Branch::Upper, a0, 1.0)
}

/// `-F(b0) H(b0) + (F(a0) - 1) H(a0)`.
pub fn theta(params: &ModelParams, a0: f64, b0: f64) -> f64 {
    let r = params.reservation();
    -params.cdf(b0) * r.value(b0) + (params.cdf(a0) - 1.0) * r.value(a0)
}

/// Slope shape with its literal value on a nonpositive bracket: zero for
/// `gamma > 0`, infinite with the sign of `g'` for `gamma < 0`.
fn literal_slope_shape(params: &ModelParams, branch: Branch, x: f64) -> f64 {
    if params.gamma() < 0.0 && params.bracket(branch, x) <= 0.0 {
        params.taste_derivative(x).signum() * f64::INFINITY
    } else {
        params.slope_shape(branch, x)
    }
}

/// Boundary slope bounds for a pair of boundary types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    /// Time-integrated slope of the upper component at `a0`.
    pub xi: f64,
    /// Time-integrated slope of the lower component at `b0`.
    pub psi: f64,
    pub reservation_slope_a0: f64,
    pub reservation_slope_b0: f64,
    /// The upper bound is vacuous at `a0 = 1`.
    pub xi_vacuous: bool,
    /// The lower bound is vacuous at `b0 = 0`.
    pub psi_vacuous: bool,
    pub feasible: bool,
}

impl ConstraintCheck {
    fn assemble(params: &ModelParams, a0: f64, b0: f64, scale_integral: f64) -> Self {
        let gamma = params.gamma();
        let times = |v: f64| if v == 0.0 { 0.0 } else { v * scale_integral / gamma };
        let xi = times(literal_slope_shape(params, Branch::Upper, a0));
        let psi = times(literal_slope_shape(params, Branch::Lower, b0));
        let r = params.reservation();
        let (ha, hb) = (r.derivative(a0), r.derivative(b0));
        let xi_vacuous = a0 >= 1.0;
        let psi_vacuous = b0 <= 0.0;
        let feasible = b0 <= a0 && (xi_vacuous || xi >= ha) && (psi_vacuous || psi <= hb);
        ConstraintCheck {
            xi,
            psi,
            reservation_slope_a0: ha,
            reservation_slope_b0: hb,
            xi_vacuous,
            psi_vacuous,
            feasible,
        }
    }

    /// Largest violation of the two bounds, zero when both hold.
    pub fn violation(&self) -> f64 {
        let a = if self.xi_vacuous {
            0.0
        } else {
            (self.reservation_slope_a0 - self.xi).max(0.0)
        };
        let b = if self.psi_vacuous {
            0.0
        } else {
            (self.psi - self.reservation_slope_b0).max(0.0)
        };
        a.max(b)
    }
}

fn scale_integral(params: &ModelParams, capacities: &[f64]) -> f64 {
    let scales: Vec<f64> = capacities
        .iter()
        .enumerate()
        .map(|(ti, &a)| demand_scale(params, ti, a))
        .collect();
    params.time_integral(&scales)
}

fn capacities(params: &ModelParams, ell: f64) -> Result<Vec<f64>> {
    (0..params.n_times()).map(|ti| capacity_a(params, ti, ell)).collect()
}

pub fn constraint_check(params: &ModelParams, a0: f64, b0: f64) -> Result<ConstraintCheck> {
    let caps = capacities(params, ell_ab(params, a0, b0))?;
    Ok(ConstraintCheck::assemble(params, a0, b0, scale_integral(params, &caps)))
}

/// Reduced objective `int (A K'(A)/gamma - K(A)) dt + theta(a0, b0)`.
pub fn reduced_objective(params: &ModelParams, a0: f64, b0: f64) -> Result<f64> {
    Ok(surplus_term(params, ell_ab(params, a0, b0))?.0 + theta(params, a0, b0))
}

#[derive(Debug, Clone, Serialize)]
pub struct TypedHSolution {
    pub a0: f64,
    pub b0: f64,
    /// Optimal relaxed value of the principal.
    pub principal_utility: f64,
    pub ell: f64,
    pub theta: f64,
    /// Aggregate consumption per time node.
    pub capacity: Vec<f64>,
    /// `phi^(1/(1-gamma)) / K'(A)^(gamma/(1-gamma))` per time node.
    pub demand_scale: Vec<f64>,
    /// `demand_scale / gamma`: multiplies the slope shape in `dp*/dx`.
    pub slope_scale: Vec<f64>,
    /// `2^(gamma/(1-gamma)) (1-gamma) demand_scale / gamma`.
    pub n_coefficient: Vec<f64>,
    /// `(gamma N / ((1-gamma) phi))^(1/gamma)`.
    pub l_coefficient: Vec<f64>,
    pub certificates: ConstraintCheck,
    pub assumptions: AssumptionFlags,
    /// `b0 <= a0 - 1/2`; required for the glued indirect utility to be convex.
    pub separated: bool,
    pub mode: KernelMode,
    pub grid_optimum: (f64, f64),
}

impl TypedHSolution {
    fn at(params: &ModelParams, a0: f64, b0: f64, flags: AssumptionFlags, grid: (f64, f64)) -> Result<Self> {
        let gamma = params.gamma();
        let ell = ell_ab(params, a0, b0);
        let (surplus, capacity) = surplus_term(params, ell)?;
        let th = theta(params, a0, b0);
        let scales: Vec<f64> = capacity
            .iter()
            .enumerate()
            .map(|(ti, &a)| demand_scale(params, ti, a))
            .collect();
        let certificates = ConstraintCheck::assemble(params, a0, b0, params.time_integral(&scales));
        let n_coefficient: Vec<f64> = scales
            .iter()
            .map(|c| 2f64.powf(gamma / (1.0 - gamma)) * (1.0 - gamma) * c / gamma)
            .collect();
        let l_coefficient = n_coefficient
            .iter()
            .zip(params.phi())
            .map(|(n, phi)| (gamma * n / ((1.0 - gamma) * phi)).powf(1.0 / gamma))
            .collect();
        Ok(TypedHSolution {
            a0,
            b0,
            principal_utility: surplus + th,
            ell,
            theta: th,
            capacity,
            slope_scale: scales.iter().map(|c| c / gamma).collect(),
            demand_scale: scales,
            n_coefficient,
            l_coefficient,
            certificates,
            assumptions: flags,
            separated: b0 <= a0 - 0.5 + 1e-12,
            mode: kernel_mode(params),
            grid_optimum: grid,
        })
    }

    /// Served components, empty ones omitted.
    pub fn components(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if self.b0 > 0.0 {
            out.push((0.0, self.b0));
        }
        if self.a0 < 1.0 {
            out.push((self.a0, 1.0));
        }
        out
    }
}

/// Grid search over `b0 <= a0` followed by coordinate golden-section
/// refinement. Ties go to the smaller `a0`, then the larger `b0`.
pub fn solve_a0_b0_star(params: &ModelParams) -> Result<TypedHSolution> {
    let report = validate_assumptions(params);
    report.require()?;

    let m = SEARCH_GRID;
    let grid = linspace(0.0, 1.0, m);
    let mode = kernel_mode(params);
    // Cumulative demand factors of the two components on the grid.
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for i in 1..m {
        lower[i] = lower[i - 1] + params.demand_integral_with(mode, Branch::Lower, grid[i - 1], grid[i]);
        let j = m - 1 - i;
        upper[j] = upper[j + 1] + params.demand_integral_with(mode, Branch::Upper, grid[j], grid[j + 1]);
    }

    let mut best: Option<(f64, usize, usize)> = None;
    let mut corners: Vec<(f64, (f64, f64))> = Vec::new();
    for i in 0..m {
        for j in (0..=i).rev() {
            let (a0, b0) = (grid[i], grid[j]);
            let ell = lower[j] + upper[i];
            let (surplus, caps) = surplus_term(params, ell)?;
            let value = surplus + theta(params, a0, b0);
            if i == m - 1 || j == 0 {
                corners.push((value, (a0, b0)));
            }
            if !ConstraintCheck::assemble(params, a0, b0, scale_integral(params, &caps)).feasible {
                continue;
            }
            let better = match best {
                None => true,
                Some((v, _, _)) => value > v + 1e-12 * v.abs().max(1.0),
            };
            if better {
                best = Some((value, i, j));
            }
        }
    }
    let Some((mut value, i, j)) = best else {
        corners.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        return Err(TariffError::InfeasibleSet {
            candidates: corners.into_iter().take(8).map(|c| c.1).collect(),
        });
    };

    let objective = |a0: f64, b0: f64| -> f64 {
        if b0 > a0 {
            return f64::NEG_INFINITY;
        }
        match constraint_check(params, a0, b0) {
            Ok(c) if c.feasible => reduced_objective(params, a0, b0).unwrap_or(f64::NEG_INFINITY),
            _ => f64::NEG_INFINITY,
        }
    };
    let (mut a0, mut b0) = (grid[i], grid[j]);
    let step = 1.0 / (m - 1) as f64;
    for _ in 0..100 {
        let (pa, pb) = (a0, b0);
        let (x, v) = golden_max(|a| objective(a, b0), b0.max(a0 - step), (a0 + step).min(1.0), 1e-11);
        if v > value {
            a0 = x;
            value = v;
        }
        let (x, v) = golden_max(|b| objective(a0, b), (b0 - step).max(0.0), a0.min(b0 + step), 1e-11);
        if v > value {
            b0 = x;
            value = v;
        }
        if (a0 - pa).abs() < REFINE_TOLERANCE && (b0 - pb).abs() < REFINE_TOLERANCE {
            break;
        }
    }
    // Components too narrow to resolve serve nobody.
    if b0 > 0.0 && b0 <= MIN_COMPONENT_WIDTH && objective(a0, 0.0).is_finite() {
        b0 = 0.0;
    }
    if a0 < 1.0 && 1.0 - a0 <= MIN_COMPONENT_WIDTH && objective(1.0, b0).is_finite() {
        a0 = 1.0;
    }
    TypedHSolution::at(params, a0, b0, report.flags, (grid[i], grid[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    /// Time-uniform chord of `H / T` between the boundary types.
    #[default]
    Chord,
    /// Per-time pair of lines leaving each boundary with the slope of the
    /// adjacent component. With one side empty, the served side's line runs
    /// to the midpoint of the bridge.
    Tangent,
}

/// Piecewise-linear indirect utility on `[b0, a0]`; `nodes[t]` and
/// `values[t]` are empty when `b0 = a0`.
#[derive(Debug, Clone, Serialize)]
pub struct Bridge {
    pub kind: BridgeKind,
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl Bridge {
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeReport {
    pub kind: BridgeKind,
    pub endpoints_match: bool,
    pub below_reservation: bool,
    pub monotone: bool,
    pub glued_convex: bool,
    /// Smallest `H(x) - int p(t, x) dt` over the interior check nodes.
    pub min_interior_gap: f64,
}

impl BridgeReport {
    pub fn valid(&self) -> bool {
        self.endpoints_match && self.below_reservation && self.monotone && self.glued_convex
    }

    fn failures(&self) -> usize {
        [self.endpoints_match, self.below_reservation, self.monotone, self.glued_convex]
            .iter()
            .filter(|ok| !**ok)
            .count()
    }
}

/// Slopes of the served components at `b0` and `a0`, per time node.
fn boundary_slopes(params: &ModelParams, sol: &TypedHSolution, ti: usize) -> (f64, f64) {
    let s = sol.slope_scale[ti];
    let lower = s * literal_slope_shape(params, Branch::Lower, sol.b0);
    let upper = s * literal_slope_shape(params, Branch::Upper, sol.a0);
    (lower, upper)
}

pub fn bridge_candidate(params: &ModelParams, sol: &TypedHSolution, kind: BridgeKind) -> (Bridge, BridgeReport) {
    let (lo, hi) = (sol.b0, sol.a0);
    let t_len = params.horizon();
    let r = params.reservation();
    let (vl, vh) = (r.value(lo) / t_len, r.value(hi) / t_len);
    let n_t = params.n_times();
    if hi <= lo {
        let bridge = Bridge {
            kind,
            lo,
            hi,
            nodes: vec![Vec::new(); n_t],
            values: vec![Vec::new(); n_t],
        };
        let report = BridgeReport {
            kind,
            endpoints_match: true,
            below_reservation: true,
            monotone: true,
            glued_convex: true,
            min_interior_gap: 0.0,
        };
        return (bridge, report);
    }
    let mut nodes = Vec::with_capacity(n_t);
    let mut values = Vec::with_capacity(n_t);
    for ti in 0..n_t {
        let (sb, sa) = boundary_slopes(params, sol, ti);
        let kink = match kind {
            BridgeKind::Chord => None,
            BridgeKind::Tangent => {
                // Intersection of the two boundary lines.
                let xk = if sa.is_finite() && sb.is_finite() && sa != sb {
                    (vh - vl - sa * hi + sb * lo) / (sb - sa)
                } else {
                    f64::NAN
                };
                let mid = 0.5 * (lo + hi);
                if xk > lo && xk < hi {
                    Some((xk, vl + sb * (xk - lo)))
                } else if hi == 1.0 && sb.is_finite() {
                    // An empty side imposes no slope: follow the served side's line to the midpoint.
                    Some((mid, vl + sb * (mid - lo)))
                } else if lo == 0.0 && sa.is_finite() {
                    Some((mid, vh - sa * (hi - mid)))
                } else {
                    None
                }
            }
        };
        match kink {
            Some((xk, vk)) => {
                nodes.push(vec![lo, xk, hi]);
                values.push(vec![vl, vk, vh]);
            }
            None => {
                nodes.push(vec![lo, hi]);
                values.push(vec![vl, vh]);
            }
        }
    }
    let bridge = Bridge {
        kind,
        lo,
        hi,
        nodes,
        values,
    };
    let report = validate_bridge(params, sol, &bridge);
    (bridge, report)
}

fn validate_bridge(params: &ModelParams, sol: &TypedHSolution, bridge: &Bridge) -> BridgeReport {
    let r = params.reservation();
    let total = |x: f64| -> f64 {
        let vals: Vec<f64> = (0..params.n_times())
            .map(|ti| crate::numerics::interp_linear(&bridge.nodes[ti], &bridge.values[ti], x))
            .collect();
        params.time_integral(&vals)
    };
    let tol = |v: f64| 1e-10 * (1.0 + v.abs());
    let endpoints_match = [bridge.lo, bridge.hi]
        .iter()
        .all(|&x| (total(x) - r.value(x)).abs() <= tol(r.value(x)));
    let interior = linspace(bridge.lo, bridge.hi, BRIDGE_CHECK_NODES + 2);
    let min_interior_gap = interior[1..interior.len() - 1]
        .iter()
        .map(|&x| r.value(x) - total(x))
        .fold(f64::INFINITY, f64::min);
    let below_reservation = min_interior_gap > 0.0;

    let mut monotone = true;
    let mut glued_convex = true;
    for ti in 0..params.n_times() {
        let (xs, ys) = (&bridge.nodes[ti], &bridge.values[ti]);
        let slopes: Vec<f64> = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        let close = |a: f64, b: f64| a <= b + 1e-12 * a.abs().max(b.abs()).max(1.0);
        monotone &= slopes.iter().all(|s| *s >= 0.0);
        glued_convex &= slopes.windows(2).all(|w| close(w[0], w[1]));
        let (sb, sa) = boundary_slopes(params, sol, ti);
        if sol.b0 > 0.0 {
            glued_convex &= close(sb, slopes[0]);
        }
        if sol.a0 < 1.0 {
            glued_convex &= close(slopes[slopes.len() - 1], sa);
        }
    }
    BridgeReport {
        kind: bridge.kind,
        endpoints_match,
        below_reservation,
        monotone,
        glued_convex,
        min_interior_gap,
    }
}

/// The preferred bridge if it passes every check, otherwise the other
/// candidate if that one passes, otherwise the candidate with fewer failed
/// checks. Reports for all candidates are returned.
pub fn build_bridge(params: &ModelParams, sol: &TypedHSolution, preferred: BridgeKind) -> (Bridge, Vec<BridgeReport>) {
    let other = match preferred {
        BridgeKind::Chord => BridgeKind::Tangent,
        BridgeKind::Tangent => BridgeKind::Chord,
    };
    let first = bridge_candidate(params, sol, preferred);
    let second = bridge_candidate(params, sol, other);
    let reports = vec![first.1.clone(), second.1.clone()];
    let chosen = if first.1.valid() || (!second.1.valid() && first.1.failures() <= second.1.failures()) {
        first.0
    } else {
        second.0
    };
    (chosen, reports)
}

pub fn indirect_utility_typed_h(model: Arc<ModelParams>, sol: &TypedHSolution, bridge: &Bridge) -> IndirectUtility {
    let t_len = model.horizon();
    let n_t = model.n_times();
    let r = model.reservation().clone();
    let mut pieces = Vec::new();
    if sol.b0 > 0.0 {
        pieces.push(Piece::Kernel(KernelPiece {
            lo: 0.0,
            hi: sol.b0,
            branch: Branch::Lower,
            anchor: sol.b0,
            anchor_value: vec![r.value(sol.b0) / t_len; n_t],
            scale: sol.slope_scale.clone(),
            mode: sol.mode,
        }));
    }
    if !bridge.is_empty() {
        pieces.push(Piece::Linear(LinearPiece {
            lo: bridge.lo,
            hi: bridge.hi,
            nodes: bridge.nodes.clone(),
            values: bridge.values.clone(),
        }));
    }
    if sol.a0 < 1.0 {
        pieces.push(Piece::Kernel(KernelPiece {
            lo: sol.a0,
            hi: 1.0,
            branch: Branch::Upper,
            anchor: sol.a0,
            anchor_value: vec![r.value(sol.a0) / t_len; n_t],
            scale: sol.slope_scale.clone(),
            mode: sol.mode,
        }));
    }
    IndirectUtility::new(model, pieces)
}

/// Envelope curves `(g(x), p*(t, x))` of the bridge nodes at time `ti`.
fn bridge_curves(params: &ModelParams, bridge: &Bridge, ti: usize) -> Vec<(f64, f64)> {
    bridge.nodes[ti]
        .iter()
        .zip(&bridge.values[ti])
        .map(|(&x, &v)| (params.taste(x), v))
        .collect()
}

/// Tariff and indirect utility of a typed-reservation solution.
///
/// Canonical taste with uniform density and separated components gives the
/// three-range closed form (linear, bridge envelope, mixed); `full` adds the
/// top range that no type selects. Otherwise the tariff is the envelope of a
/// sampled indirect utility.
pub fn build_tariff_typed_h(
    model: Arc<ModelParams>,
    sol: &TypedHSolution,
    bridge: &Bridge,
    full: bool,
) -> Result<(Tariff, IndirectUtility)> {
    let utility = indirect_utility_typed_h(model.clone(), sol, bridge);
    let params = &*model;
    let gamma = params.gamma();
    let e = 1.0 / (1.0 - gamma);
    let t_len = params.horizon();
    let r = params.reservation();
    let (ha, hb) = (r.value(sol.a0) / t_len, r.value(sol.b0) / t_len);
    if sol.components().is_empty() {
        return Ok((exclusion_tariff(params)?, utility));
    }
    let closed = params.is_canonical_uniform() && sol.separated && !bridge.is_empty();

    let mut segments = Vec::with_capacity(params.n_times());
    for ti in 0..params.n_times() {
        let phi = params.phi()[ti];
        let n = sol.n_coefficient[ti];
        let l = sol.l_coefficient[ti];
        if !closed {
            let mut nodes = linspace(0.0, sol.b0, SAMPLED_TARIFF_NODES);
            nodes.extend(linspace(sol.a0, 1.0, SAMPLED_TARIFF_NODES));
            let mut curves: Vec<(f64, f64)> = nodes
                .iter()
                .map(|&x| (params.taste(x), utility.value(ti, x)))
                .collect();
            if !bridge.is_empty() {
                curves.extend(bridge_curves(params, bridge, ti));
            }
            segments.push(envelope_segments(gamma, phi, &curves, 0.0, f64::INFINITY, SegmentKind::Envelope));
            continue;
        }
        let slope = phi * l.powf(gamma - 1.0);
        let c_top = l * 2f64.powf(-e);
        // Consumption thresholds of the boundary types and the linear and
        // mixed ranges, ordered by consumption.
        let (c_lin, c_mix, lin_p3, mix_p3, top_p3) = if gamma > 0.0 {
            let da = (sol.a0 - 0.5).powf(e);
            (
                l * sol.b0.powf(e),
                l * da,
                n * sol.b0.powf(e) - hb,
                n * da - ha,
                -n * (2f64.powf(-e) - da) - ha,
            )
        } else {
            let db = (0.5 - sol.b0).powf(e);
            (
                l * (1.0 - sol.a0).powf(e),
                l * db,
                n * (1.0 - sol.a0).powf(e) - ha,
                n * db - hb,
                n * (db - 2f64.powf(-e)) - hb,
            )
        };
        let mut segs = Vec::new();
        if c_lin > 0.0 {
            segs.push(TariffSegment {
                kind: SegmentKind::Linear,
                c_lo: 0.0,
                c_hi: c_lin,
                p1: 0.0,
                p2: slope,
                p3: lin_p3,
            });
        }
        segs.extend(envelope_segments(
            gamma,
            phi,
            &bridge_curves(params, bridge, ti),
            c_lin,
            c_mix,
            SegmentKind::Bridge,
        ));
        let mixed = TariffSegment {
            kind: SegmentKind::Mixed,
            c_lo: c_mix,
            c_hi: f64::INFINITY,
            p1: phi / (2.0 * gamma),
            p2: slope,
            p3: mix_p3,
        };
        if full && c_top > c_mix {
            segs.push(TariffSegment { c_hi: c_top, ..mixed });
            segs.push(TariffSegment {
                kind: SegmentKind::Upper,
                c_lo: c_top,
                c_hi: f64::INFINITY,
                p1: phi / gamma,
                p2: 0.0,
                p3: top_p3,
            });
        } else {
            segs.push(mixed);
        }
        segments.push(segs);
    }
    Ok((
        Tariff::new(gamma, params.time_grid().to_vec(), segments, closed && !full),
        utility,
    ))
}

/// Relative roundoff above which the residual uses the analytic slope.
const FD_ROUNDOFF_LIMIT: f64 = 1e-9;

/// Largest relative mismatch, over interior nodes of the served components,
/// between a finite-difference slope of `p*` and the stationarity condition
/// with zero multiplier.
pub fn stationarity_residual(params: &ModelParams, sol: &TypedHSolution, utility: &IndirectUtility, nodes: usize) -> f64 {
    let gamma = params.gamma();
    let mut worst: f64 = 0.0;
    for (lo, hi) in sol.components() {
        let branch = if lo == 0.0 { Branch::Lower } else { Branch::Upper };
        let margin = 2e-3 * (hi - lo);
        for &x in &linspace(lo + margin, hi - margin, nodes) {
            let b = params.bracket(branch, x);
            if b <= 0.0 {
                continue;
            }
            for ti in 0..params.n_times() {
                let phi = params.phi()[ti];
                let mc = params.marginal_cost_at(ti, sol.capacity[ti]);
                let expected = (phi.powf(1.0 / gamma) * b / (params.density(x) * mc)).powf(gamma / (1.0 - gamma))
                    * params.taste_derivative(x)
                    / gamma;
                // Curvature can blow up just outside a component, so the step follows the nearer edge.
                let h = 1e-3 * (x - lo).min(hi - x);
                let d = |h: f64| (utility.value(ti, x + h) - utility.value(ti, x - h)) / (2.0 * h);
                // On very narrow components the difference quotient is dominated by roundoff.
                let roundoff = f64::EPSILON * utility.value(ti, x).abs() / (h * expected.abs().max(1e-300));
                let numeric = if roundoff > FD_ROUNDOFF_LIMIT {
                    utility.slope(ti, x)
                } else {
                    (4.0 * d(0.5 * h) - d(h)) / 3.0
                };
                worst = worst.max((numeric - expected).abs() / expected.abs().max(1e-300));
            }
        }
    }
    worst
}
