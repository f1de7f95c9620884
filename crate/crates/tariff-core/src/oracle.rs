//! Brute-force references that use no closed form: a discretized relaxed
//! problem for constant reservations and a grid sweep of agent responses.

use serde::Serialize;

use crate::agent::{best_response_grid, refine_best_response};
use crate::const_h::ConstHSolution;
use crate::error::{Result, TariffError};
use crate::model::{Branch, ModelParams, Reservation};
use crate::numerics::{discrete_unimodal_max, geomspace, golden_max};
use crate::tariff::Tariff;

/// Round cap of the fixed point.
pub const MAX_ROUNDS: usize = 100;
/// Width at which the golden-section polish of the boundary stops.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
/// Relative change of aggregate demand accepted as converged.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-12;
/// Smallest slope node relative to the largest on the geometric grid.
pub const SLOPE_GRID_SPAN: f64 = 1e-9;
/// Headroom of the slope grid over the largest closed-form slope.
pub const SLOPE_HEADROOM: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub value: f64,
    /// Lowest served type; `1` means nobody is served.
    pub x0: f64,
    /// Cell edges on `[x0, 1]`.
    pub edges: Vec<f64>,
    /// Chosen slope per time node and cell.
    pub slopes: Vec<Vec<f64>>,
    /// Discretized `p*(t, edge)`, anchored at `H / T` on `x0`.
    pub values: Vec<Vec<f64>>,
    /// Aggregate demand per time node.
    pub aggregate: Vec<f64>,
    /// Largest number of fixed-point rounds used.
    pub rounds: usize,
    /// Some fixed point fell on a jump of aggregate demand.
    pub at_jump: bool,
}

/// Slope nodes per time node spanning `[0, s_max]`, where `s_max` is
/// `SLOPE_HEADROOM` times the largest slope of the solution on the midpoints
/// of `type_grid_size` cells of its served interval. Negative `gamma` drops
/// the zero node and keeps slopes positive.
pub fn oracle_slope_grid(params: &ModelParams, sol: &ConstHSolution, type_grid_size: usize, n: usize) -> Vec<Vec<f64>> {
    let width = (1.0 - sol.x0) / type_grid_size as f64;
    let mids: Vec<f64> = (0..type_grid_size).map(|i| sol.x0 + (i as f64 + 0.5) * width).collect();
    (0..params.n_times())
        .map(|ti| {
            let top = mids
                .iter()
                .map(|&x| (sol.slope_scale[ti] * params.slope_shape(Branch::Upper, x)).abs())
                .fold(0.0, f64::max);
            let s_max = SLOPE_HEADROOM * top.max(f64::MIN_POSITIVE);
            if params.gamma() > 0.0 {
                let mut grid = vec![0.0];
                grid.extend(geomspace(s_max * SLOPE_GRID_SPAN, s_max, n - 1));
                grid
            } else {
                geomspace(s_max * SLOPE_GRID_SPAN, s_max, n)
            }
        })
        .collect()
}

/// Per-cell data of one time node.
struct Cell {
    /// Weight of the slope in the surplus: `width * bracket / g'`.
    gain: f64,
    /// Weight of `s^(1/gamma)` in aggregate demand.
    load: f64,
}

struct TimeProblem<'a> {
    cells: Vec<Cell>,
    grid: &'a [f64],
    /// `s^(1/gamma)` on the grid.
    powers: &'a [f64],
}

impl TimeProblem<'_> {
    /// Best slope index of cell `i` at marginal cost `mc`.
    fn select(&self, i: usize, mc: f64) -> usize {
        let c = &self.cells[i];
        discrete_unimodal_max(|k| c.gain * self.grid[k] - mc * c.load * self.powers[k], self.grid.len()).0
    }

    fn aggregate(&self, sel: &[usize]) -> f64 {
        self.cells.iter().zip(sel).map(|(c, &k)| c.load * self.powers[k]).sum()
    }

    fn surplus(&self, sel: &[usize]) -> f64 {
        self.cells.iter().zip(sel).map(|(c, &k)| c.gain * self.grid[k]).sum()
    }
}

struct FixedPoint {
    selection: Vec<usize>,
    aggregate: f64,
    net: f64,
    rounds: usize,
    at_jump: bool,
}

fn solve_time(params: &ModelParams, ti: usize, prob: &TimeProblem, start: f64) -> Result<FixedPoint> {
    let select = |cap: f64| -> Vec<usize> {
        let mc = params.marginal_cost_at(ti, cap);
        (0..prob.cells.len()).map(|i| prob.select(i, mc)).collect()
    };
    let evaluate = |sel: &[usize]| {
        let agg = prob.aggregate(sel);
        (agg, prob.surplus(sel) - params.cost_at(ti, agg))
    };
    // Aggregate demand falls as the cap rises, so the fixed point lies
    // between any cap and the aggregate it induces.
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut cap = start;
    let mut previous: Option<Vec<usize>> = None;
    for round in 1..=MAX_ROUNDS {
        let sel = select(cap);
        let (agg, net) = evaluate(&sel);
        if (agg - cap).abs() <= FIXED_POINT_TOLERANCE * (1.0 + agg.abs()) {
            return Ok(FixedPoint { selection: sel, aggregate: agg, net, rounds: round, at_jump: false });
        }
        if agg > cap {
            lo = f64::max(lo, cap);
            hi = hi.min(agg);
        } else {
            lo = lo.max(agg);
            hi = hi.min(cap);
        }
        // The aggregate jumps inside a collapsed bracket: no exact fixed point.
        if hi - lo <= FIXED_POINT_TOLERANCE * (1.0 + hi) {
            return Ok(best_of(&evaluate, select(lo), vec![select(hi)], round));
        }
        // A repeated selection fixes the aggregate exactly: test it directly.
        let repeated = previous.as_ref() == Some(&sel);
        cap = if repeated && agg >= lo && agg <= hi && agg != cap {
            agg
        } else if lo > 0.0 && hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        previous = Some(sel);
    }
    Err(TariffError::NonConvergence(format!(
        "aggregate-demand fixed point at time node {ti} did not settle in {MAX_ROUNDS} rounds"
    )))
}

/// Highest-net selection among `first` and `others`, flagged as a jump.
fn best_of<E: Fn(&[usize]) -> (f64, f64)>(evaluate: &E, first: Vec<usize>, others: Vec<Vec<usize>>, rounds: usize) -> FixedPoint {
    let (aggregate, net) = evaluate(&first);
    let mut best = FixedPoint { selection: first, aggregate, net, rounds, at_jump: true };
    for other in others {
        let (aggregate, net) = evaluate(&other);
        if net > best.net {
            best = FixedPoint { selection: other, aggregate, net, rounds, at_jump: true };
        }
    }
    best
}

fn constant_reservation(params: &ModelParams) -> Result<f64> {
    match params.reservation() {
        Reservation::Constant { h } => Ok(*h),
        _ => Err(TariffError::InvalidReservation("the oracle needs a constant outside option".into())),
    }
}

/// Slope grids with their `s^(1/gamma)` tables.
struct SlopeTables<'a> {
    grids: &'a [Vec<f64>],
    powers: Vec<Vec<f64>>,
}

impl<'a> SlopeTables<'a> {
    fn new(params: &ModelParams, grids: &'a [Vec<f64>]) -> Result<Self> {
        if grids.len() != params.n_times() || grids.iter().any(|g| g.is_empty()) {
            return Err(TariffError::Config("oracle needs one non-empty slope grid per time node".into()));
        }
        let gamma = params.gamma();
        if grids.iter().flatten().any(|&s| !(s >= 0.0 && s.is_finite()) || (gamma < 0.0 && s == 0.0)) {
            return Err(TariffError::Config("oracle slopes must be finite, nonnegative, and positive when gamma < 0".into()));
        }
        let powers = grids.iter().map(|g| g.iter().map(|&s| s.powf(1.0 / gamma)).collect()).collect();
        Ok(SlopeTables { grids, powers })
    }
}

struct BoundaryFit {
    value: f64,
    edges: Vec<f64>,
    fixed_points: Vec<FixedPoint>,
}

/// Discretized relaxed problem with lowest served type `x0`: `cells` equal
/// cells on `[x0, 1]` evaluated at their midpoints.
fn fit_boundary(params: &ModelParams, h: f64, x0: f64, cells: usize, tables: &SlopeTables, warm: &[f64]) -> Result<BoundaryFit> {
    let gamma = params.gamma();
    let width = (1.0 - x0) / cells as f64;
    let edges: Vec<f64> = (0..=cells).map(|k| x0 + k as f64 * width).collect();
    let mut fixed_points = Vec::with_capacity(params.n_times());
    for ti in 0..params.n_times() {
        let phi = params.phi()[ti];
        let cells = edges
            .windows(2)
            .map(|e| {
                let x = 0.5 * (e[0] + e[1]);
                let dg = params.taste_derivative(x);
                Cell {
                    gain: width * params.bracket(Branch::Upper, x) / dg,
                    load: width * params.density(x) * (gamma / (phi * dg)).powf(1.0 / gamma),
                }
            })
            .collect();
        let prob = TimeProblem { cells, grid: &tables.grids[ti], powers: &tables.powers[ti] };
        fixed_points.push(solve_time(params, ti, &prob, warm[ti])?);
    }
    let net: Vec<f64> = fixed_points.iter().map(|fp| fp.net).collect();
    let value = params.time_integral(&net) + (params.cdf(x0) - 1.0) * h;
    Ok(BoundaryFit { value, edges, fixed_points })
}

fn into_result(params: &ModelParams, h: f64, fit: BoundaryFit, tables: &SlopeTables, rounds: usize) -> OracleResult {
    let anchor = h / params.horizon();
    let mut slopes = Vec::with_capacity(params.n_times());
    let mut values = Vec::with_capacity(params.n_times());
    for (ti, fp) in fit.fixed_points.iter().enumerate() {
        let s: Vec<f64> = fp.selection.iter().map(|&k| tables.grids[ti][k]).collect();
        let mut v = vec![anchor];
        for (e, sk) in fit.edges.windows(2).zip(&s) {
            v.push(v[v.len() - 1] + (e[1] - e[0]) * sk);
        }
        slopes.push(s);
        values.push(v);
    }
    OracleResult {
        value: fit.value,
        x0: fit.edges[0],
        aggregate: fit.fixed_points.iter().map(|fp| fp.aggregate).collect(),
        at_jump: fit.fixed_points.iter().any(|fp| fp.at_jump),
        edges: fit.edges,
        slopes,
        values,
        rounds,
    }
}

/// Discretized relaxed problem at a fixed lowest served type.
pub fn oracle_fixed_boundary(
    params: &ModelParams,
    x0: f64,
    type_grid_size: usize,
    slope_grid: &[Vec<f64>],
) -> Result<OracleResult> {
    let h = constant_reservation(params)?;
    if type_grid_size == 0 || !(0.0..1.0).contains(&x0) {
        return Err(TariffError::Config("oracle needs cells and a boundary in [0, 1)".into()));
    }
    let tables = SlopeTables::new(params, slope_grid)?;
    let fit = fit_boundary(params, h, x0, type_grid_size, &tables, &vec![0.0; params.n_times()])?;
    let rounds = fit.fixed_points.iter().map(|fp| fp.rounds).max().unwrap_or(0);
    Ok(into_result(params, h, fit, &tables, rounds))
}

/// Maximizes the discretized relaxed problem: `type_grid_size` cells on the
/// served interval, slopes on `slope_grid` (one grid per time node). The
/// boundary is scanned on `type_grid_size + 1` candidates and polished by
/// golden section between the neighbours of the best one.
pub fn oracle_relaxed_maximize_const_h(
    params: &ModelParams,
    type_grid_size: usize,
    slope_grid: &[Vec<f64>],
) -> Result<OracleResult> {
    let h = constant_reservation(params)?;
    if type_grid_size == 0 {
        return Err(TariffError::Config("oracle needs at least one type cell".into()));
    }
    let tables = SlopeTables::new(params, slope_grid)?;
    let n = type_grid_size;
    let n_t = params.n_times();
    let mut warm = vec![0.0; n_t];
    let mut rounds = 0;
    let mut scan: Vec<f64> = Vec::with_capacity(n);
    for j in (0..n).rev() {
        let fit = fit_boundary(params, h, j as f64 / n as f64, n, &tables, &warm)?;
        for (w, fp) in warm.iter_mut().zip(&fit.fixed_points) {
            *w = fp.aggregate;
            rounds = rounds.max(fp.rounds);
        }
        scan.push(fit.value);
    }
    scan.reverse();
    // Nobody served: no surplus, no boundary term, cost of zero output.
    let empty = params.time_integral(&(0..n_t).map(|ti| -params.cost_at(ti, 0.0)).collect::<Vec<_>>());
    let (j_best, v_best) = scan
        .iter()
        .copied()
        .enumerate()
        .fold((n, empty), |b, (j, v)| if v > b.1 { (j, v) } else { b });
    if j_best == n {
        return Ok(OracleResult {
            value: empty,
            x0: 1.0,
            edges: vec![1.0],
            slopes: vec![Vec::new(); n_t],
            values: vec![vec![h / params.horizon()]; n_t],
            aggregate: vec![0.0; n_t],
            rounds,
            at_jump: false,
        });
    }
    let lo = j_best.saturating_sub(1) as f64 / n as f64;
    let hi = ((j_best + 1) as f64 / n as f64).min(1.0 - 1.0 / (4 * n) as f64);
    let mut failure = None;
    let (x0, _) = golden_max(
        |x| match fit_boundary(params, h, x, n, &tables, &warm) {
            Ok(fit) => fit.value,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        lo,
        hi,
        BOUNDARY_TOLERANCE,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let fit = fit_boundary(params, h, x0, n, &tables, &warm)?;
    let fit = if fit.value >= v_best { fit } else { fit_boundary(params, h, j_best as f64 / n as f64, n, &tables, &warm)? };
    let rounds = rounds.max(fit.fixed_points.iter().map(|fp| fp.rounds).max().unwrap_or(0));
    Ok(into_result(params, h, fit, &tables, rounds))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub time_index: usize,
    pub x: f64,
    pub c_opt: f64,
    pub value: f64,
}

/// Grid-search best responses to a tariff for every time node and type,
/// optionally polished by golden section around the best node.
pub fn oracle_agent_sweep(
    tariff: &Tariff,
    params: &ModelParams,
    x_nodes: &[f64],
    c_nodes: &[f64],
    refine: bool,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(x_nodes.len() * params.n_times());
    for ti in 0..params.n_times() {
        let price = |c: f64| tariff.price(ti, c);
        for &x in x_nodes {
            let (mut c_opt, mut value, idx) = best_response_grid(params, price, ti, x, c_nodes)?;
            if refine {
                let (c, v) = refine_best_response(params, price, ti, x, c_nodes, idx);
                if v > value {
                    (c_opt, value) = (c, v);
                }
            }
            rows.push(SweepRow { time_index: ti, x, c_opt, value });
        }
    }
    Ok(rows)
}
