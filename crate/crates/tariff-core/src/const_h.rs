//! Optimal tariff when every type has the same outside option `H`.
//!
//! Served types form an upper interval `[x0, 1]`. The general route
//! maximizes the reduced objective in `x0` numerically; the power route
//! (power cost, canonical taste, uniform density) uses closed forms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{IndirectUtility, KernelPiece, Piece};
use crate::error::{Result, TariffError};
use crate::model::{Branch, KernelMode, ModelParams};
use crate::numerics::{bisect, golden_max, linspace, positive_part};
use crate::tariff::{envelope_segments, SegmentKind, Tariff, TariffSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Power route when it applies, general route otherwise.
    #[default]
    Auto,
    General,
    Power,
}

/// Grid size of the first pass of the general route.
pub const X0_SCAN_NODES: usize = 1024;
/// Tolerance of the golden-section refinement of `x0`.
pub const X0_TOLERANCE: f64 = 1e-10;
/// Local maxima within this (relative) distance of the best are reported.
pub const NEAR_OPTIMAL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ConstHSolution {
    pub route: Route,
    /// Lowest served type.
    pub x0: f64,
    /// Aggregate-demand factor `int_x0^1 (b^+ / f^gamma)^(1/(1-gamma))`.
    pub demand_factor: f64,
    /// Aggregate consumption at each time node.
    pub capacity: Vec<f64>,
    /// Multiplier of the slope shape in `dp*/dx` at each time node.
    pub slope_scale: Vec<f64>,
    pub principal_utility: f64,
    pub foc_residual: f64,
    /// Uniqueness of the maximizer is guaranteed by a monotone bracket.
    pub unique: bool,
    pub local_maxima: Vec<f64>,
    /// The boundary sits at a corner rather than at an interior root.
    pub corner: bool,
    /// Transformed boundary `(2 x0 - 1)^(1/(1-gamma))` of the power route.
    pub y0: Option<f64>,
}

fn constant_reservation(params: &ModelParams) -> Result<f64> {
    match params.reservation() {
        crate::model::Reservation::Constant { h } => Ok(*h),
        _ => Err(TariffError::InvalidReservation(
            "the constant-reservation solver needs a constant outside option".into(),
        )),
    }
}

/// Aggregate-demand factor by quadrature.
pub fn ell_const(params: &ModelParams, x0: f64) -> f64 {
    params.demand_integral(Branch::Upper, x0, 1.0)
}

/// Aggregate-demand factor for canonical taste and uniform density.
pub fn ell_const_closed(gamma: f64, x0: f64) -> f64 {
    let e = (2.0 - gamma) / (1.0 - gamma);
    let r = 1.0 - gamma;
    if gamma > 0.0 {
        r / (2.0 * (2.0 - gamma)) * (1.0 - positive_part(2.0 * x0 - 1.0).powf(e))
    } else {
        2f64.powf(1.0 / r) * (r / (2.0 - gamma)) * (1.0 - x0).powf(e)
    }
}

/// Aggregate consumption `g_K^{-1}(phi^(1/(1-gamma)) ell)` at time node `ti`.
pub fn capacity_a(params: &ModelParams, ti: usize, ell: f64) -> Result<f64> {
    let gamma = params.gamma();
    params.g_k_inverse_at(ti, params.phi()[ti].powf(1.0 / (1.0 - gamma)) * ell)
}

/// `phi^(1/(1-gamma)) / K'(A)^(gamma/(1-gamma))`.
pub fn demand_scale(params: &ModelParams, ti: usize, capacity: f64) -> f64 {
    let gamma = params.gamma();
    let m = params.marginal_cost_at(ti, capacity);
    params.phi()[ti].powf(1.0 / (1.0 - gamma)) / m.powf(gamma / (1.0 - gamma))
}

/// `int (A K'(A)/gamma - K(A)) dt` with capacities solved from `ell`.
/// Returns the integral and the capacities.
pub fn surplus_term(params: &ModelParams, ell: f64) -> Result<(f64, Vec<f64>)> {
    let gamma = params.gamma();
    let mut caps = Vec::with_capacity(params.n_times());
    let mut vals = Vec::with_capacity(params.n_times());
    for ti in 0..params.n_times() {
        let a = capacity_a(params, ti, ell)?;
        vals.push(a * params.marginal_cost_at(ti, a) / gamma - params.cost_at(ti, a));
        caps.push(a);
    }
    Ok((params.time_integral(&vals), caps))
}

/// Reduced objective of the general route.
pub fn objective_general(params: &ModelParams, x0: f64) -> Result<f64> {
    let h = constant_reservation(params)?;
    let (s, _) = surplus_term(params, ell_const(params, x0))?;
    Ok(s + (params.cdf(x0) - 1.0) * h)
}

/// Derivative of the general objective in `x0`.
fn objective_general_derivative(params: &ModelParams, x0: f64, caps: &[f64]) -> f64 {
    let gamma = params.gamma();
    let h = params.reservation().value(x0);
    let scales: Vec<f64> = (0..params.n_times())
        .map(|ti| demand_scale(params, ti, caps[ti]))
        .collect();
    -(1.0 - gamma) / gamma * params.time_integral(&scales) * params.demand_density(Branch::Upper, x0)
        + params.density(x0) * h
}

/// `(1/gamma - 1/n) int (phi^n / k^gamma)^(1/(n-gamma)) dt` for power cost.
pub fn b_gamma(params: &ModelParams) -> Option<f64> {
    let n = params.power_exponent()?;
    let gamma = params.gamma();
    let vals: Vec<f64> = params
        .phi()
        .iter()
        .zip(params.k())
        .map(|(p, k)| (p.powf(n) / k.powf(gamma)).powf(1.0 / (n - gamma)))
        .collect();
    Some((1.0 / gamma - 1.0 / n) * params.time_integral(&vals))
}

/// Reduced objective of the power route.
pub fn objective_power(params: &ModelParams, x0: f64) -> Result<f64> {
    let h = constant_reservation(params)?;
    let n = power_n(params)?;
    let gamma = params.gamma();
    let b = b_gamma(params).unwrap();
    let ell = ell_const_closed(gamma, x0);
    Ok(b * ell.powf(n * (1.0 - gamma) / (n - gamma)) + (x0 - 1.0) * h)
}

fn power_n(params: &ModelParams) -> Result<f64> {
    params
        .power_exponent()
        .ok_or_else(|| TariffError::Config("the power route needs a power cost".into()))
}

/// First-order function in `y0 = (2 x0 - 1)^(1/(1-gamma))`, for `gamma > 0`.
pub fn chi(params: &ModelParams, y0: f64) -> Result<f64> {
    let h = constant_reservation(params)?;
    let n = power_n(params)?;
    let gamma = params.gamma();
    let a = b_gamma(params).unwrap()
        * ((1.0 - gamma) / (2.0 * (2.0 - gamma))).powf(n * (1.0 - gamma) / (n - gamma));
    let tail = (1.0 - y0.powf(2.0 - gamma)).powf(-gamma * (n - 1.0) / (n - gamma));
    Ok(h - 2.0 * n * a * (2.0 - gamma) / (n - gamma) * y0 * tail)
}

/// Closed-form boundary for `gamma < 0`, clamped at zero.
pub fn x0_hat(params: &ModelParams) -> Result<f64> {
    let h = constant_reservation(params)?;
    let n = power_n(params)?;
    let gamma = params.gamma();
    let b = b_gamma(params).unwrap();
    let d = n * (1.0 - gamma) + gamma;
    let core = (h * (n - gamma) / (n * (1.0 - gamma) * b)).powf((n - gamma) / d)
        * ((2.0 - gamma) / (1.0 - gamma)).powf(-gamma * (n - 1.0) / d)
        * 2f64.powf(-n / d);
    Ok(positive_part(1.0 - core))
}

fn resolve_route(params: &ModelParams, route: Route) -> Result<Route> {
    let power_ok = params.is_power_canonical();
    match route {
        Route::Auto => Ok(if power_ok { Route::Power } else { Route::General }),
        Route::Power if !power_ok => Err(TariffError::Config(
            "the power route needs power cost, canonical taste and uniform density".into(),
        )),
        r => Ok(r),
    }
}

/// Optimal lowest served type and the associated reduced-objective value.
pub fn solve_x0_star(params: &ModelParams, route: Route) -> Result<ConstHSolution> {
    let h = constant_reservation(params)?;
    match resolve_route(params, route)? {
        Route::Power if params.gamma() > 0.0 => solve_power_positive(params),
        Route::Power => solve_power_negative(params, h),
        _ => solve_general(params),
    }
}

fn power_capacity(params: &ModelParams, ell: f64) -> Vec<f64> {
    let n = params.power_exponent().unwrap();
    let gamma = params.gamma();
    params
        .phi()
        .iter()
        .zip(params.k())
        .map(|(p, k)| (p / k).powf(1.0 / (n - gamma)) * ell.powf((1.0 - gamma) / (n - gamma)))
        .collect()
}

/// Tariff coefficient of the served component for `gamma > 0`.
fn m_coefficient(params: &ModelParams, ti: usize, y0: f64) -> f64 {
    let n = params.power_exponent().unwrap();
    let gamma = params.gamma();
    let (phi, k) = (params.phi()[ti], params.k()[ti]);
    let q = gamma * (n - 1.0) / (n - gamma);
    (1.0 - gamma) / (2.0 * gamma)
        * (2.0 * (2.0 - gamma) / (1.0 - gamma)).powf(q)
        * (phi.powf(n) / k.powf(gamma)).powf(1.0 / (n - gamma))
        * (1.0 - y0.powf(2.0 - gamma)).powf(-q)
}

/// Tariff coefficient of the served component for `gamma < 0`.
fn m_hat_coefficient(params: &ModelParams, ti: usize, x0: f64) -> f64 {
    let n = params.power_exponent().unwrap();
    let gamma = params.gamma();
    let (phi, k) = (params.phi()[ti], params.k()[ti]);
    -(1.0 - gamma) / gamma
        * ((2.0 - gamma) / (1.0 - gamma)).powf(gamma * (n - 1.0) / (n - gamma))
        * (2f64.powf(gamma) * phi.powf(n) / k.powf(gamma)).powf(1.0 / (n - gamma))
        * (1.0 - x0).powf(-gamma * (2.0 - gamma) * (n - 1.0) / ((n - gamma) * (1.0 - gamma)))
}

fn solve_power_positive(params: &ModelParams) -> Result<ConstHSolution> {
    let gamma = params.gamma();
    let (lo, hi) = (1e-12, 1.0 - 1e-12);
    let (y0, corner) = if chi(params, lo)? <= 0.0 {
        (0.0, true)
    } else {
        (bisect(|y| chi(params, y).unwrap(), lo, hi, 1e-16)?, false)
    };
    let x0 = 0.5 * (y0.powf(1.0 - gamma) + 1.0);
    let ell = ell_const_closed(gamma, x0);
    let slope_scale = (0..params.n_times())
        .map(|ti| 2.0 * m_coefficient(params, ti, y0) / (1.0 - gamma))
        .collect();
    Ok(ConstHSolution {
        route: Route::Power,
        x0,
        demand_factor: ell,
        capacity: power_capacity(params, ell),
        slope_scale,
        principal_utility: objective_power(params, x0)?,
        foc_residual: if corner { 0.0 } else { chi(params, y0)?.abs() },
        unique: true,
        local_maxima: vec![x0],
        corner,
        y0: Some(y0),
    })
}

fn solve_power_negative(params: &ModelParams, h: f64) -> Result<ConstHSolution> {
    let gamma = params.gamma();
    let n = power_n(params)?;
    let x0 = x0_hat(params)?;
    let ell = ell_const_closed(gamma, x0);
    let b = b_gamma(params).unwrap();
    let p = n * (1.0 - gamma) / (n - gamma);
    let derivative =
        -b * p * ell.powf(p - 1.0) * params.demand_density(Branch::Upper, x0) + h;
    let corner = x0 == 0.0;
    let foc_residual = if corner {
        positive_part(-derivative)
    } else {
        derivative.abs()
    };
    let e = 1.0 / (1.0 - gamma);
    let slope_scale = (0..params.n_times())
        .map(|ti| -m_hat_coefficient(params, ti, x0) / ((1.0 - gamma) * 2f64.powf(e - 1.0)))
        .collect();
    Ok(ConstHSolution {
        route: Route::Power,
        x0,
        demand_factor: ell,
        capacity: power_capacity(params, ell),
        slope_scale,
        principal_utility: objective_power(params, x0)?,
        foc_residual,
        unique: true,
        local_maxima: vec![x0],
        corner,
        y0: None,
    })
}

/// Does the upper bracket over `f^gamma` move monotonically where positive
/// (increasing for `gamma > 0` with nonincreasing density, decreasing for
/// `gamma < 0` with nondecreasing density)?
fn uniqueness_certified(params: &ModelParams) -> bool {
    let gamma = params.gamma();
    let grid = linspace(0.0, 1.0, 2049);
    let dens: Vec<f64> = grid.iter().map(|&x| params.density(x)).collect();
    let density_ok = if gamma > 0.0 {
        dens.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    } else {
        dens.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    };
    if !density_ok {
        return false;
    }
    let beta: Vec<f64> = grid
        .iter()
        .zip(&dens)
        .map(|(&x, &f)| params.bracket(Branch::Upper, x) / f.powf(gamma))
        .filter(|b| *b > 0.0 && b.is_finite())
        .collect();
    if gamma > 0.0 {
        beta.windows(2).all(|w| w[1] > w[0])
    } else {
        beta.windows(2).all(|w| w[1] < w[0])
    }
}

fn solve_general(params: &ModelParams) -> Result<ConstHSolution> {
    let gamma = params.gamma();
    let grid = linspace(0.0, 1.0, X0_SCAN_NODES);
    let values: Vec<f64> = grid
        .iter()
        .map(|&x| objective_general(params, x))
        .collect::<Result<_>>()?;
    let objective = |x: f64| objective_general(params, x).unwrap_or(f64::NEG_INFINITY);
    let refine = |i: usize| {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(grid.len() - 1)];
        golden_max(objective, lo, hi, X0_TOLERANCE)
    };
    let best_i = (0..grid.len())
        .max_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .unwrap();
    let (x0, best) = refine(best_i);

    let n = grid.len();
    let mut local_maxima: Vec<f64> = (0..n)
        .filter(|&i| {
            (i == 0 || values[i] >= values[i - 1]) && (i == n - 1 || values[i] >= values[i + 1])
        })
        .map(refine)
        .filter(|(_, v)| *v >= best - NEAR_OPTIMAL * best.abs().max(1.0))
        .map(|(x, _)| x)
        .collect();
    local_maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    local_maxima.dedup_by(|a, b| (*a - *b).abs() < 1e-6);

    let ell = ell_const(params, x0);
    let (_, capacity) = surplus_term(params, ell)?;
    let derivative = objective_general_derivative(params, x0, &capacity);
    let corner = x0 <= X0_TOLERANCE || x0 >= 1.0 - X0_TOLERANCE;
    let foc_residual = if x0 <= X0_TOLERANCE {
        positive_part(derivative)
    } else if x0 >= 1.0 - X0_TOLERANCE {
        positive_part(-derivative)
    } else {
        derivative.abs()
    };
    let slope_scale = capacity
        .iter()
        .enumerate()
        .map(|(ti, &a)| demand_scale(params, ti, a) / gamma)
        .collect();
    Ok(ConstHSolution {
        route: Route::General,
        x0,
        demand_factor: ell,
        capacity,
        slope_scale,
        principal_utility: best,
        foc_residual,
        unique: uniqueness_certified(params) || local_maxima.len() == 1,
        local_maxima,
        corner,
        y0: None,
    })
}

/// The indirect utility of the solution, anchored at `p*(t, x0) = H / T`.
pub fn indirect_utility_const_h(model: Arc<ModelParams>, sol: &ConstHSolution) -> Result<IndirectUtility> {
    let h = constant_reservation(&model)?;
    let anchor_value = vec![h / model.horizon(); model.n_times()];
    let mode = match sol.route {
        Route::Power => KernelMode::ClosedForm,
        _ => KernelMode::Quadrature,
    };
    let piece = KernelPiece {
        lo: 0.0,
        hi: 1.0,
        branch: Branch::Upper,
        anchor: sol.x0,
        anchor_value,
        scale: sol.slope_scale.clone(),
        mode,
    };
    Ok(IndirectUtility::new(model, vec![Piece::Kernel(piece)]))
}

/// Type nodes used to sample general-route indirect utilities for tariffs.
pub const TARIFF_SAMPLE_NODES: usize = 1025;

/// Tariff and indirect utility of a constant-reservation solution.
/// `full` adds the top segment that the simplified tariff omits.
pub fn build_tariff_const_h(
    model: Arc<ModelParams>,
    sol: &ConstHSolution,
    full: bool,
) -> Result<(Tariff, IndirectUtility)> {
    let utility = indirect_utility_const_h(model.clone(), sol)?;
    let params = &*model;
    let gamma = params.gamma();
    let h = constant_reservation(params)?;
    let ht = h / params.horizon();
    let e = 1.0 / (1.0 - gamma);
    let mut segments = Vec::with_capacity(params.n_times());
    for ti in 0..params.n_times() {
        let phi = params.phi()[ti];
        let segs = match sol.route {
            Route::Power if gamma > 0.0 => {
                let y0 = sol.y0.unwrap_or(0.0);
                let m = sol.slope_scale[ti] * (1.0 - gamma) / 2.0;
                let main = TariffSegment {
                    kind: SegmentKind::Mixed,
                    c_lo: 0.0,
                    c_hi: f64::INFINITY,
                    p1: phi / (2.0 * gamma),
                    p2: ((phi / 2.0).powf(e) * (1.0 - gamma) / (gamma * m)).powf((1.0 - gamma) / gamma),
                    p3: -ht + m * y0,
                };
                let c_top = (2.0 * gamma * m / ((1.0 - gamma) * phi)).powf(1.0 / gamma);
                split_top(main, full, c_top, phi / gamma, m * (y0 - 1.0) - ht)
            }
            Route::Power => {
                let x0 = sol.x0;
                let m_hat = -sol.slope_scale[ti] * (1.0 - gamma) * 2f64.powf(e - 1.0);
                let main = TariffSegment {
                    kind: SegmentKind::Linear,
                    c_lo: 0.0,
                    c_hi: f64::INFINITY,
                    p1: 0.0,
                    p2: -gamma * (-phi / gamma).powf(1.0 / gamma) * ((1.0 - gamma) / m_hat).powf((1.0 - gamma) / gamma),
                    p3: -ht - m_hat * (1.0 - x0).powf(e),
                };
                let c_top = (-gamma * m_hat / (phi * (1.0 - gamma))).powf(1.0 / gamma);
                split_top(main, full, c_top, phi / gamma, main.p3 + m_hat)
            }
            _ => {
                let mut nodes = linspace(0.0, 1.0, TARIFF_SAMPLE_NODES);
                nodes.push(sol.x0);
                let curves: Vec<(f64, f64)> = nodes
                    .iter()
                    .map(|&x| (params.taste(x), utility.value(ti, x)))
                    .collect();
                envelope_segments(gamma, phi, &curves, 0.0, f64::INFINITY, SegmentKind::Envelope)
            }
        };
        segments.push(segs);
    }
    let simplified = !full && sol.route == Route::Power;
    Ok((
        Tariff::new(gamma, params.time_grid().to_vec(), segments, simplified),
        utility,
    ))
}

fn split_top(main: TariffSegment, full: bool, c_top: f64, p1: f64, p3: f64) -> Vec<TariffSegment> {
    if !full || !c_top.is_finite() {
        return vec![main];
    }
    vec![
        TariffSegment { c_hi: c_top, ..main },
        TariffSegment {
            kind: SegmentKind::Upper,
            c_lo: c_top,
            c_hi: f64::INFINITY,
            p1,
            p2: 0.0,
            p3,
        },
    ]
}
