//! Principal's utility of a tariff, and the relaxed objective of an indirect
//! utility with given participation boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{best_response_grid, participation_set, refine_best_response, IndirectUtility, ParticipationSet};
use crate::error::Result;
use crate::model::{Branch, ModelParams};
use crate::numerics::{gauss_legendre_composite, integrate_split, linspace};
use crate::tariff::Tariff;
use crate::uconvex::SampledFunctionOfConsumption;

/// Gauss-Legendre panels per participation component.
pub const COMPONENT_PANELS: usize = 100;
/// Scan nodes used to locate participation boundaries.
pub const PARTICIPATION_SCAN: usize = 1025;

/// How each type's best response to a tariff is computed.
#[derive(Debug, Clone)]
pub enum ResponseMode {
    /// Exact maximization over the tariff's segments.
    Analytic,
    /// Search over consumption nodes, optionally polished by golden section.
    Grid { c_grid: Vec<f64>, refine: bool },
}

#[derive(Debug, Clone, Serialize)]
pub struct TariffEvaluation {
    pub principal_utility: f64,
    pub participation: ParticipationSet,
    /// `int p(t, c*) f dx` per time node.
    pub revenue: Vec<f64>,
    /// `int c* f dx` per time node.
    pub aggregate: Vec<f64>,
}

fn respond(params: &ModelParams, tariff: &Tariff, mode: &ResponseMode, ti: usize, x: f64) -> Result<(f64, f64)> {
    match mode {
        ResponseMode::Analytic => tariff.best_response(params, ti, x),
        ResponseMode::Grid { c_grid, refine } => grid_response(params, |c| tariff.price(ti, c), ti, x, c_grid, *refine),
    }
}

fn grid_response<P: Fn(f64) -> f64>(
    params: &ModelParams,
    price: P,
    ti: usize,
    x: f64,
    c_grid: &[f64],
    refine: bool,
) -> Result<(f64, f64)> {
    let (c, v, i) = best_response_grid(params, &price, ti, x, c_grid)?;
    if refine {
        let (cr, vr) = refine_best_response(params, &price, ti, x, c_grid, i);
        if vr > v {
            return Ok((cr, vr));
        }
    }
    Ok((c, v))
}

/// `P*(x)` induced by a tariff: time integral of each type's best surplus.
pub fn surplus_total(params: &ModelParams, tariff: &Tariff, mode: &ResponseMode, x: f64) -> Result<f64> {
    total_of(params, |ti, x| respond(params, tariff, mode, ti, x), x)
}

fn total_of<R: Fn(usize, f64) -> Result<(f64, f64)>>(params: &ModelParams, respond: R, x: f64) -> Result<f64> {
    let vals = (0..params.n_times())
        .map(|ti| respond(ti, x).map(|r| r.1))
        .collect::<Result<Vec<f64>>>()?;
    Ok(params.time_integral(&vals))
}

fn participation_of_responses<R: Fn(usize, f64) -> Result<(f64, f64)>>(params: &ModelParams, respond: &R) -> Result<ParticipationSet> {
    // Surface errors on a coarse pass; the scan itself cannot propagate them.
    for &x in &linspace(0.0, 1.0, 17) {
        total_of(params, respond, x)?;
    }
    let r = params.reservation();
    Ok(participation_set(
        |x| total_of(params, respond, x).unwrap_or(f64::NEG_INFINITY),
        |x| r.value(x),
        PARTICIPATION_SCAN,
    ))
}

pub fn participation_from_tariff(params: &ModelParams, tariff: &Tariff, mode: &ResponseMode) -> Result<ParticipationSet> {
    participation_of_responses(params, &|ti, x| respond(params, tariff, mode, ti, x))
}

/// Revenue minus the cost of aggregate demand, integrated over time.
pub fn principal_utility(params: &ModelParams, tariff: &Tariff) -> Result<TariffEvaluation> {
    principal_utility_with(params, tariff, &ResponseMode::Analytic)
}

pub fn principal_utility_with(params: &ModelParams, tariff: &Tariff, mode: &ResponseMode) -> Result<TariffEvaluation> {
    evaluate(params, |ti, x| respond(params, tariff, mode, ti, x), |ti, c| tariff.price(ti, c))
}

/// Principal's utility of prices known only on their consumption grid;
/// agents choose among the grid nodes.
pub fn principal_utility_sampled(params: &ModelParams, price: &SampledFunctionOfConsumption) -> Result<TariffEvaluation> {
    let grid = &price.c_grid;
    let at = |ti: usize, c: f64| price.values[ti][grid.partition_point(|&g| g < c).min(grid.len() - 1)];
    evaluate(params, |ti, x| grid_response(params, |c| at(ti, c), ti, x, grid, false), at)
}

fn evaluate<R, P>(params: &ModelParams, respond: R, price: P) -> Result<TariffEvaluation>
where
    R: Fn(usize, f64) -> Result<(f64, f64)>,
    P: Fn(usize, f64) -> f64,
{
    let participation = participation_of_responses(params, &respond)?;
    let n_t = params.n_times();
    let mut revenue = vec![0.0; n_t];
    let mut aggregate = vec![0.0; n_t];
    for &(lo, hi) in &participation.intervals {
        for (x, w) in gauss_legendre_composite(lo, hi, COMPONENT_PANELS) {
            let f = params.density(x);
            for ti in 0..n_t {
                let (c, _) = respond(ti, x)?;
                revenue[ti] += w * price(ti, c) * f;
                aggregate[ti] += w * c * f;
            }
        }
    }
    let net: Vec<f64> = (0..n_t).map(|ti| revenue[ti] - params.cost_at(ti, aggregate[ti])).collect();
    Ok(TariffEvaluation {
        principal_utility: params.time_integral(&net),
        participation,
        revenue,
        aggregate,
    })
}

/// Participation boundaries of a relaxed problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    /// Served types `[x0, 1]`.
    Threshold { x0: f64 },
    /// Served types `[0, b0] ∪ [a0, 1]`.
    TwoSided { a0: f64, b0: f64 },
}

impl Boundary {
    /// Served components with the bracket branch of each.
    pub fn components(&self) -> Vec<(f64, f64, Branch)> {
        let (a0, b0) = match *self {
            Boundary::Threshold { x0 } => (x0, 0.0),
            Boundary::TwoSided { a0, b0 } => (a0, b0),
        };
        let mut out = Vec::new();
        if b0 > 0.0 {
            out.push((0.0, b0, Branch::Lower));
        }
        if a0 < 1.0 {
            out.push((a0, 1.0, Branch::Upper));
        }
        out
    }

    /// Reservation terms left by integration by parts:
    /// `-F(b0) H(b0) + (F(a0) - 1) H(a0)`.
    pub fn boundary_term(&self, params: &ModelParams) -> f64 {
        let r = params.reservation();
        match *self {
            Boundary::Threshold { x0 } => (params.cdf(x0) - 1.0) * r.value(x0),
            Boundary::TwoSided { a0, b0 } => {
                -params.cdf(b0) * r.value(b0) + (params.cdf(a0) - 1.0) * r.value(a0)
            }
        }
    }
}

/// Relaxed objective of the indirect utility `p_star`.
pub fn relaxed_objective(params: &ModelParams, p_star: &IndirectUtility, boundary: &Boundary) -> f64 {
    relaxed_objective_with(params, boundary, |ti, x| p_star.slope(ti, x), &[])
}

/// Relaxed objective for the type slopes `slope(ti, x)` of an indirect
/// utility; `breaks` lists kinks of the slopes to split quadrature at.
///
/// `int [ sum_components int (bracket / g') s dx - K(t, int c(s) f dx) ] dt`
/// plus the boundary term, with `c(s) = (gamma s / (phi g'))^(1/gamma)`.
pub fn relaxed_objective_with<S: Fn(usize, f64) -> f64>(
    params: &ModelParams,
    boundary: &Boundary,
    slope: S,
    breaks: &[f64],
) -> f64 {
    let gamma = params.gamma();
    let mut splits: Vec<f64> = params.type_breaks().to_vec();
    splits.extend_from_slice(breaks);
    splits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut net = Vec::with_capacity(params.n_times());
    for ti in 0..params.n_times() {
        let phi = params.phi()[ti];
        let consumption = |x: f64| -> f64 {
            // Nonpositive bases: zero consumption for gamma > 0, unserved for gamma < 0.
            let base = gamma * slope(ti, x) / (phi * params.taste_derivative(x));
            if base > 0.0 {
                base.powf(1.0 / gamma)
            } else {
                0.0
            }
        };
        let mut surplus = 0.0;
        let mut aggregate = 0.0;
        for (lo, hi, branch) in boundary.components() {
            surplus += integrate_split(
                |x| params.bracket(branch, x) / params.taste_derivative(x) * slope(ti, x),
                lo,
                hi,
                &splits,
            );
            aggregate += integrate_split(|x| consumption(x) * params.density(x), lo, hi, &splits);
        }
        net.push(surplus - params.cost_at(ti, aggregate));
    }
    params.time_integral(&net) + boundary.boundary_term(params)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationAudit {
    pub base: f64,
    pub epsilon: f64,
    /// `objective(p* + eps q) - objective(p*)` per direction.
    pub changes: Vec<f64>,
    pub max_improvement: f64,
}

/// Knots of the random directions.
const DIRECTION_KNOTS: usize = 8;

/// Evaluates the relaxed objective along random nondecreasing
/// piecewise-linear directions `q(t, x)`, drawn independently per time node.
pub fn perturbation_audit(
    params: &ModelParams,
    p_star: &IndirectUtility,
    boundary: &Boundary,
    directions: usize,
    epsilon: f64,
    seed: u64,
) -> PerturbationAudit {
    let base = relaxed_objective(params, p_star, boundary);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changes = Vec::with_capacity(directions);
    for _ in 0..directions {
        // Per time node: knots in (0, 1) and nonnegative slopes between them.
        let mut knots: Vec<f64> = (0..DIRECTION_KNOTS).map(|_| rng.gen::<f64>()).collect();
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let slopes: Vec<Vec<f64>> = (0..params.n_times())
            .map(|_| (0..=DIRECTION_KNOTS).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let dq = |ti: usize, x: f64| slopes[ti][knots.partition_point(|k| *k <= x)];
        let value = relaxed_objective_with(
            params,
            boundary,
            |ti, x| p_star.slope(ti, x) + epsilon * dq(ti, x),
            &knots,
        );
        changes.push(value - base);
    }
    let max_improvement = changes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PerturbationAudit {
        base,
        epsilon,
        changes,
        max_improvement,
    }
}
