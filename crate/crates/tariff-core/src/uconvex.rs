//! Discrete u-transforms between prices `p(t, c)` and indirect utilities
//! `p*(t, x)`, biconjugation and u-convexity checks.

use serde::Serialize;

use crate::error::{Result, TariffError};
use crate::model::{ModelParams, TasteForm};
use crate::numerics::geomspace;
use crate::tariff::Tariff;

/// Values `[t][i]` of a function of the type on a common grid.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SampledFunctionOfType {
    pub time_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Values `[t][j]` of a function of consumption on a common grid.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SampledFunctionOfConsumption {
    pub time_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// All maximizing indices `[t][node]`; more than one marks a kink.
pub type ArgmaxSets = Vec<Vec<Vec<usize>>>;

/// Relative tolerance for treating two candidate values as tied.
pub const ARGMAX_TIE: f64 = 1e-12;

/// Geometric consumption grid on `[1e-4, 1e3]`; with a leading zero when
/// `gamma > 0`.
pub fn default_c_grid(params: &ModelParams, n: usize) -> Vec<f64> {
    if params.gamma() > 0.0 {
        let mut g = vec![0.0];
        g.extend(geomspace(1e-4, 1e3, n - 1));
        g
    } else {
        geomspace(1e-4, 1e3, n)
    }
}

fn check_c_grid(params: &ModelParams, c_grid: &[f64]) -> Result<()> {
    if c_grid.iter().any(|&c| c < 0.0 || (params.gamma() < 0.0 && c <= 0.0)) {
        return Err(TariffError::Domain(
            "consumption grid must be positive (nonnegative when gamma > 0)".into(),
        ));
    }
    Ok(())
}

/// Precomputed `phi c^gamma / gamma` for one time node.
fn consumption_terms(params: &ModelParams, ti: usize, c_grid: &[f64]) -> Vec<f64> {
    let (phi, gamma) = (params.phi()[ti], params.gamma());
    c_grid
        .iter()
        .map(|&c| phi * c.powf(gamma) / gamma)
        .collect()
}

fn max_with_ties<I: Iterator<Item = (usize, f64)>>(iter: I) -> (f64, Vec<usize>) {
    let values: Vec<(usize, f64)> = iter.collect();
    let best = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = ARGMAX_TIE * (1.0 + best.abs());
    let args = values
        .iter()
        .filter(|v| v.1 >= best - tol)
        .map(|v| v.0)
        .collect();
    (best, args)
}

/// `p*(t, x) = max_c u(t, x, c) - p(t, c)` over the consumption grid.
pub fn u_transform_price_to_indirect(
    params: &ModelParams,
    price: &SampledFunctionOfConsumption,
    x_grid: &[f64],
) -> Result<(SampledFunctionOfType, ArgmaxSets)> {
    check_c_grid(params, &price.c_grid)?;
    let mut values = Vec::new();
    let mut argmax = Vec::new();
    for ti in 0..price.values.len() {
        let z = consumption_terms(params, ti, &price.c_grid);
        let p = &price.values[ti];
        let (mut row, mut args) = (Vec::new(), Vec::new());
        for &x in x_grid {
            let g = params.taste(x);
            let (best, a) = max_with_ties((0..z.len()).map(|j| (j, g * z[j] - p[j])));
            row.push(best);
            args.push(a);
        }
        values.push(row);
        argmax.push(args);
    }
    Ok((
        SampledFunctionOfType {
            time_grid: price.time_grid.clone(),
            x_grid: x_grid.to_vec(),
            values,
        },
        argmax,
    ))
}

/// `p(t, c) = max_x u(t, x, c) - p*(t, x)` over the type grid.
pub fn u_transform_indirect_to_price(
    params: &ModelParams,
    indirect: &SampledFunctionOfType,
    c_grid: &[f64],
) -> Result<(SampledFunctionOfConsumption, ArgmaxSets)> {
    check_c_grid(params, c_grid)?;
    let g: Vec<f64> = indirect.x_grid.iter().map(|&x| params.taste(x)).collect();
    let mut values = Vec::new();
    let mut argmax = Vec::new();
    for ti in 0..indirect.values.len() {
        let z = consumption_terms(params, ti, c_grid);
        let q = &indirect.values[ti];
        let (mut row, mut args) = (Vec::new(), Vec::new());
        for &zj in &z {
            let (best, a) = max_with_ties((0..g.len()).map(|i| (i, g[i] * zj - q[i])));
            row.push(best);
            args.push(a);
        }
        values.push(row);
        argmax.push(args);
    }
    Ok((
        SampledFunctionOfConsumption {
            time_grid: indirect.time_grid.clone(),
            c_grid: c_grid.to_vec(),
            values,
        },
        argmax,
    ))
}

/// Transform to prices on `c_grid` and back to the type grid.
pub fn biconjugate(
    params: &ModelParams,
    indirect: &SampledFunctionOfType,
    c_grid: &[f64],
) -> Result<SampledFunctionOfType> {
    let (price, _) = u_transform_indirect_to_price(params, indirect, c_grid)?;
    let (back, _) = u_transform_price_to_indirect(params, &price, &indirect.x_grid)?;
    Ok(back)
}

/// Largest `|a - b|` over all samples.
pub fn max_abs_difference(a: &SampledFunctionOfType, b: &SampledFunctionOfType) -> f64 {
    a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn segment_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect()
}

/// A priori bound on the biconjugation gap of a convex, canonical-taste
/// indirect utility sampled on `x_grid` when prices live on `c_grid`.
///
/// Each consumption node supports the sampled function with a line of slope
/// `w = g' phi c^gamma / gamma`. A node whose subdifferential contains no `w`
/// is recovered by the nearest `w` on either side, and telescoping the slope
/// gaps bounds its error by `|w - s| * (span of nodes up to the touching one)`.
pub fn round_trip_bound(
    params: &ModelParams,
    indirect: &SampledFunctionOfType,
    c_grid: &[f64],
) -> f64 {
    let xs = &indirect.x_grid;
    let n = xs.len();
    let dg = params.taste_derivative(0.5);
    let mut bound: f64 = 0.0;
    for (ti, ys) in indirect.values.iter().enumerate() {
        let s = segment_slopes(xs, ys);
        let mut w: Vec<f64> = consumption_terms(params, ti, c_grid)
            .into_iter()
            .map(|z| dg * z)
            .filter(|v| v.is_finite())
            .collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..n {
            let s_left = if i == 0 { f64::NEG_INFINITY } else { s[i - 1] };
            let s_right = if i == n - 1 { f64::INFINITY } else { s[i] };
            if w.iter().any(|&v| v >= s_left && v <= s_right) {
                continue;
            }
            let mut best = f64::INFINITY;
            if let Some(&wb) = w.iter().find(|&&v| v > s_right) {
                let m = (i..n - 1).find(|&k| s[k] >= wb).unwrap_or(n - 1);
                best = best.min((wb - s_right) * (xs[m] - xs[i]));
            }
            if let Some(&wa) = w.iter().rev().find(|&&v| v < s_left) {
                let m = (0..i).rev().find(|&k| s[k] <= wa).map_or(0, |k| k + 1);
                best = best.min((s_left - wa) * (xs[i] - xs[m]));
            }
            bound = bound.max(best);
        }
    }
    bound
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct UConvexityReport {
    pub is_u_convex: bool,
    pub max_biconjugation_gap: f64,
    /// `(time index, type)` of nodes failing the check.
    pub convexity_violations: Vec<(usize, f64)>,
}

/// Relative tolerance of the discrete convexity test.
pub const CONVEXITY_TOLERANCE: f64 = 1e-9;

/// Consumption nodes whose supporting lines have exactly the segment slopes
/// of the sample at time `ti` (canonical taste only).
fn slope_matched_c_grid(params: &ModelParams, ti: usize, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let (gamma, phi) = (params.gamma(), params.phi()[ti]);
    let dg = params.taste_derivative(0.5);
    let mut grid: Vec<f64> = segment_slopes(xs, ys)
        .into_iter()
        .filter_map(|s| {
            let z = s / dg;
            let base = gamma * z / phi;
            if gamma > 0.0 && base >= 0.0 {
                Some(base.powf(1.0 / gamma))
            } else if gamma < 0.0 && base > 0.0 {
                Some(base.powf(1.0 / gamma))
            } else {
                None
            }
        })
        .filter(|c| c.is_finite())
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

/// Is `p*` a u-transform? For canonical taste this is convexity plus
/// monotonicity, tested by discrete differences; the biconjugation gap is
/// reported alongside. For other tastes the gap on `c_grid` decides.
pub fn check_u_convexity(
    params: &ModelParams,
    indirect: &SampledFunctionOfType,
    c_grid: Option<&[f64]>,
) -> Result<UConvexityReport> {
    let xs = &indirect.x_grid;
    let canonical = matches!(params.spec().taste, TasteForm::Canonical);
    let mut violations = Vec::new();
    let mut gap: f64 = 0.0;
    for (ti, ys) in indirect.values.iter().enumerate() {
        let s = segment_slopes(xs, ys);
        if canonical {
            for (k, w) in s.windows(2).enumerate() {
                let scale = w[0].abs().max(w[1].abs()).max(1e-300);
                if w[1] - w[0] < -CONVEXITY_TOLERANCE * scale {
                    violations.push((ti, xs[k + 1]));
                }
            }
            for (k, &v) in s.iter().enumerate() {
                let scale = (ys[k].abs().max(ys[k + 1].abs()) / (xs[k + 1] - xs[k])).max(1e-300);
                if v < -CONVEXITY_TOLERANCE * scale {
                    violations.push((ti, xs[k]));
                }
            }
        }
        let grid = match (canonical, c_grid) {
            (true, _) => slope_matched_c_grid(params, ti, xs, ys),
            (false, Some(g)) => g.to_vec(),
            (false, None) => default_c_grid(params, 2048),
        };
        if grid.is_empty() {
            continue;
        }
        let single = SampledFunctionOfType {
            time_grid: vec![indirect.time_grid[ti]],
            x_grid: xs.clone(),
            values: vec![ys.clone()],
        };
        let back = biconjugate_at(params, ti, &single, &grid)?;
        gap = gap.max(max_abs_difference(&single, &back));
    }
    violations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    violations.dedup();
    let scale = indirect
        .values
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let is_u_convex = if canonical {
        violations.is_empty()
    } else {
        gap <= 1e-6 * scale
    };
    Ok(UConvexityReport {
        is_u_convex,
        max_biconjugation_gap: gap,
        convexity_violations: violations,
    })
}

/// Biconjugate of a single-time sample taken at time node `ti`.
fn biconjugate_at(
    params: &ModelParams,
    ti: usize,
    single: &SampledFunctionOfType,
    c_grid: &[f64],
) -> Result<SampledFunctionOfType> {
    let g: Vec<f64> = single.x_grid.iter().map(|&x| params.taste(x)).collect();
    let z = consumption_terms(params, ti, c_grid);
    let q = &single.values[0];
    let price: Vec<f64> = z
        .iter()
        .map(|&zj| {
            g.iter()
                .zip(q)
                .map(|(gi, qi)| gi * zj - qi)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let back: Vec<f64> = g
        .iter()
        .map(|gi| {
            z.iter()
                .zip(&price)
                .map(|(zj, pj)| gi * zj - pj)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(SampledFunctionOfType {
        time_grid: single.time_grid.clone(),
        x_grid: single.x_grid.clone(),
        values: vec![back],
    })
}


/// Emitted tariff sampled on a consumption grid and transformed back to types.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TariffRoundTrip {
    pub max_error: f64,
    pub max_bound: f64,
    /// Every node satisfies `error <= 2 bound + slack`.
    pub within_bound: bool,
}

/// Absolute slack of the round-trip check, relative to `1 + |p*|`; covers the
/// tolerance to which the tariff reproduces `p*` exactly.
pub const ROUND_TRIP_SLACK: f64 = 1e-9;

/// Compares `u_transform(tariff on c_grid)` with `p_star` node by node.
///
/// The bound at a type is the resolution loss of the nearest grid node: with
/// `w(c) = u(t, x, c) - p(t, c)` concave on the selected segment,
/// `w(c*) - w(c_j) <= |w'(c_j)| |c* - c_j|`, minimized over the two nodes
/// bracketing the exact best response `c*`.
pub fn tariff_round_trip(
    params: &ModelParams,
    tariff: &Tariff,
    p_star: &SampledFunctionOfType,
    c_grid: &[f64],
) -> Result<TariffRoundTrip> {
    let price = SampledFunctionOfConsumption {
        time_grid: p_star.time_grid.clone(),
        c_grid: c_grid.to_vec(),
        values: (0..tariff.n_times())
            .map(|ti| c_grid.iter().map(|&c| tariff.price(ti, c)).collect())
            .collect(),
    };
    let (back, _) = u_transform_price_to_indirect(params, &price, &p_star.x_grid)?;
    let gamma = params.gamma();
    let mut out = TariffRoundTrip {
        max_error: 0.0,
        max_bound: 0.0,
        within_bound: true,
    };
    for ti in 0..tariff.n_times() {
        let phi = params.phi()[ti];
        for (i, &x) in p_star.x_grid.iter().enumerate() {
            let (c_star, _) = tariff.best_response(params, ti, x)?;
            let loss = |c: f64| -> f64 {
                let delta = (c - c_star).abs();
                if delta == 0.0 {
                    return 0.0;
                }
                let w_prime = params.taste(x) * phi * c.powf(gamma - 1.0) - tariff.marginal_price(ti, c);
                let b = w_prime.abs() * delta;
                if b.is_finite() {
                    b
                } else {
                    f64::INFINITY
                }
            };
            let j = c_grid.partition_point(|&c| c < c_star);
            let bound = [j.checked_sub(1), (j < c_grid.len()).then_some(j)]
                .into_iter()
                .flatten()
                .map(|k| loss(c_grid[k]))
                .fold(f64::INFINITY, f64::min);
            let target = p_star.values[ti][i];
            let error = (back.values[ti][i] - target).abs();
            out.max_error = out.max_error.max(error);
            if bound.is_finite() {
                out.max_bound = out.max_bound.max(bound);
            }
            if error > 2.0 * bound + ROUND_TRIP_SLACK * (1.0 + target.abs()) {
                out.within_bound = false;
            }
        }
    }
    Ok(out)
}
