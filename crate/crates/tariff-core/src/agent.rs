//! Agent side: indirect utilities, best responses and participation sets.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Result, TariffError};
use crate::model::{Branch, KernelMode, ModelParams};
use crate::numerics::{golden_max, interp_linear, linspace, segment_index};

/// Relative slope jump above which a node of a sampled indirect utility is
/// treated as a kink.
pub const KINK_TOLERANCE: f64 = 1e-3;

/// `anchor_value[t] + scale[t] * int_anchor^x slope_shape(branch)`.
#[derive(Debug, Clone)]
pub struct KernelPiece {
    pub lo: f64,
    pub hi: f64,
    pub branch: Branch,
    pub anchor: f64,
    pub anchor_value: Vec<f64>,
    pub scale: Vec<f64>,
    pub mode: KernelMode,
}

/// Piecewise-linear in the type, with its own nodes at each time.
#[derive(Debug, Clone)]
pub struct LinearPiece {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Piece {
    Kernel(KernelPiece),
    Linear(LinearPiece),
}

impl Piece {
    fn range(&self) -> (f64, f64) {
        match self {
            Piece::Kernel(k) => (k.lo, k.hi),
            Piece::Linear(l) => (l.lo, l.hi),
        }
    }
}

/// Indirect utility `p*(t, x)`: the surplus type `x` obtains at time `t`.
#[derive(Debug, Clone)]
pub struct IndirectUtility {
    model: Arc<ModelParams>,
    pieces: Vec<Piece>,
}

impl IndirectUtility {
    /// Pieces must tile `[0, 1]` in increasing order.
    pub fn new(model: Arc<ModelParams>, pieces: Vec<Piece>) -> Self {
        IndirectUtility { model, pieces }
    }

    /// Linear interpolation of samples `values[t][i]` on a common type grid.
    pub fn from_samples(model: Arc<ModelParams>, x_grid: &[f64], values: Vec<Vec<f64>>) -> Self {
        let n_t = values.len();
        let piece = LinearPiece {
            lo: x_grid[0],
            hi: x_grid[x_grid.len() - 1],
            nodes: vec![x_grid.to_vec(); n_t],
            values,
        };
        IndirectUtility {
            model,
            pieces: vec![Piece::Linear(piece)],
        }
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn piece_at(&self, x: f64) -> &Piece {
        self.pieces
            .iter()
            .find(|p| {
                let (lo, hi) = p.range();
                x >= lo && x < hi
            })
            .unwrap_or_else(|| {
                if x < self.pieces[0].range().0 {
                    &self.pieces[0]
                } else {
                    &self.pieces[self.pieces.len() - 1]
                }
            })
    }

    pub fn value(&self, ti: usize, x: f64) -> f64 {
        match self.piece_at(x) {
            Piece::Kernel(k) => {
                k.anchor_value[ti]
                    + k.scale[ti]
                        * self
                            .model
                            .slope_shape_integral_with(k.mode, k.branch, k.anchor, x)
            }
            Piece::Linear(l) => interp_linear(&l.nodes[ti], &l.values[ti], x),
        }
    }

    /// Derivative in the type. Kernel pieces are exact; linear pieces use the
    /// segment slope, the central difference at smooth nodes, and the right
    /// slope at kinks.
    pub fn slope(&self, ti: usize, x: f64) -> f64 {
        match self.piece_at(x) {
            Piece::Kernel(k) => k.scale[ti] * self.model.slope_shape(k.branch, x),
            Piece::Linear(l) => {
                let (left, right) = linear_one_sided(&l.nodes[ti], &l.values[ti], x);
                if is_kink(left, right) {
                    right
                } else {
                    0.5 * (left + right)
                }
            }
        }
    }

    /// Left and right derivatives at `x`, with a kink flag.
    pub fn one_sided_slopes(&self, ti: usize, x: f64) -> (f64, f64, bool) {
        let h = 1e-7;
        let (left, right) = match self.piece_at(x) {
            Piece::Linear(l) => linear_one_sided(&l.nodes[ti], &l.values[ti], x),
            Piece::Kernel(_) => {
                let left = if x - h >= 0.0 {
                    self.slope(ti, (x - h).max(0.0))
                } else {
                    self.slope(ti, x)
                };
                (left, self.slope(ti, x))
            }
        };
        (left, right, is_kink(left, right))
    }

    /// `P*(x) = int p*(t, x) dt`.
    pub fn total(&self, x: f64) -> f64 {
        let vals: Vec<f64> = (0..self.model.n_times()).map(|ti| self.value(ti, x)).collect();
        self.model.time_integral(&vals)
    }

    /// `int dp*/dx dt` at `x`.
    pub fn total_slope(&self, x: f64) -> f64 {
        let vals: Vec<f64> = (0..self.model.n_times()).map(|ti| self.slope(ti, x)).collect();
        self.model.time_integral(&vals)
    }

    /// Values on `x_grid` at every time node, indexed `[t][i]`.
    pub fn sample(&self, x_grid: &[f64]) -> Vec<Vec<f64>> {
        (0..self.model.n_times())
            .map(|ti| x_grid.iter().map(|&x| self.value(ti, x)).collect())
            .collect()
    }
}

fn is_kink(left: f64, right: f64) -> bool {
    let scale = left.abs().max(right.abs());
    scale > 0.0 && (right - left).abs() > KINK_TOLERANCE * scale
}

fn linear_one_sided(xs: &[f64], ys: &[f64], x: f64) -> (f64, f64) {
    let slope = |i: usize| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
    let i = segment_index(xs, x);
    let at_node = (x - xs[i]).abs() <= 1e-14 * (1.0 + xs[i].abs());
    if at_node && i > 0 {
        (slope(i - 1), slope(i))
    } else {
        (slope(i), slope(i))
    }
}

/// Consumption from the first-order condition
/// `dp*/dx = g'(x) phi(t) c^gamma / gamma`.
pub fn best_response_closed_form(u: &IndirectUtility, ti: usize, x: f64) -> Result<f64> {
    let params = u.model();
    let slope = u.slope(ti, x);
    consumption_from_slope(params, ti, x, slope)
}

pub fn consumption_from_slope(params: &ModelParams, ti: usize, x: f64, slope: f64) -> Result<f64> {
    let gamma = params.gamma();
    if gamma > 0.0 {
        if slope <= 0.0 {
            return Ok(0.0);
        }
    } else {
        if slope == 0.0 {
            return Err(TariffError::NonParticipating { x });
        }
        if slope.is_infinite() {
            return Ok(0.0);
        }
    }
    let base = gamma * slope / (params.phi()[ti] * params.taste_derivative(x));
    Ok(base.powf(1.0 / gamma))
}

/// Maximize `u(t, x, c) - price(c)` over the nodes of `c_grid`.
/// Returns `(c, value, index)`; ties go to the smallest consumption.
pub fn best_response_grid<P: Fn(f64) -> f64>(
    params: &ModelParams,
    price: P,
    ti: usize,
    x: f64,
    c_grid: &[f64],
) -> Result<(f64, f64, usize)> {
    let mut best: Option<(f64, f64, usize)> = None;
    for (j, &c) in c_grid.iter().enumerate() {
        let Ok(u) = params.utility_at(ti, x, c) else {
            continue;
        };
        let v = u - price(c);
        if best.map_or(true, |b| v > b.1) {
            best = Some((c, v, j));
        }
    }
    best.ok_or_else(|| TariffError::Domain("consumption grid has no admissible node".into()))
}

/// Golden-section polish of a grid best response inside its neighbouring cells.
pub fn refine_best_response<P: Fn(f64) -> f64>(
    params: &ModelParams,
    price: P,
    ti: usize,
    x: f64,
    c_grid: &[f64],
    index: usize,
) -> (f64, f64) {
    let lo = c_grid[index.saturating_sub(1)];
    let hi = c_grid[(index + 1).min(c_grid.len() - 1)];
    let objective = |c: f64| match params.utility_at(ti, x, c) {
        Ok(u) => u - price(c),
        Err(_) => f64::NEG_INFINITY,
    };
    golden_max(objective, lo, hi, 1e-14 * hi.max(1.0))
}

/// Disjoint, sorted, closed intervals of participating types.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ParticipationSet {
    pub intervals: Vec<(f64, f64)>,
}

impl ParticipationSet {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }

    /// Lebesgue measure of the set.
    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// Components shorter than this are dropped as isolated touching points.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;
/// Participation intervals narrower than this are treated as empty.
pub const MIN_COMPONENT_WIDTH: f64 = 10.0 * BOUNDARY_TOLERANCE;

/// Types with `total(x) >= reservation(x)`, ties included. Sign changes
/// are bracketed on a uniform scan and bisected to full precision, keeping
/// the participating endpoint; isolated
/// touching points are dropped.
pub fn participation_set<P, H>(total: P, reservation: H, scan_nodes: usize) -> ParticipationSet
where
    P: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let surplus = |x: f64| {
        let h = reservation(x);
        let d = total(x) - h;
        if d >= -1e-13 * (1.0 + h.abs()) {
            d.abs().max(1e-300)
        } else {
            d
        }
    };
    let grid = linspace(0.0, 1.0, scan_nodes.max(3));
    let inside: Vec<bool> = grid.iter().map(|&x| surplus(x) > 0.0).collect();
    let mut intervals = Vec::new();
    let mut start: Option<f64> = if inside[0] { Some(0.0) } else { None };
    for i in 0..grid.len() - 1 {
        if inside[i] == inside[i + 1] {
            continue;
        }
        let edge = if inside[i + 1] {
            inner_edge(&surplus, grid[i], grid[i + 1])
        } else {
            inner_edge(&surplus, grid[i + 1], grid[i])
        };
        if inside[i + 1] {
            start = Some(edge);
        } else if let Some(s) = start.take() {
            intervals.push((s, edge));
        }
    }
    if let Some(s) = start {
        intervals.push((s, 1.0));
    }
    intervals.retain(|(a, b)| b - a > MIN_COMPONENT_WIDTH);
    ParticipationSet { intervals }
}

/// Last participating point between `outside` and `inside`.
fn inner_edge<S: Fn(f64) -> f64>(surplus: S, mut outside: f64, mut inside: f64) -> f64 {
    loop {
        let m = 0.5 * (outside + inside);
        if m == outside || m == inside {
            return inside;
        }
        if surplus(m) > 0.0 {
            inside = m;
        } else {
            outside = m;
        }
    }
}

/// Participation implied by an indirect utility and the model's reservation.
pub fn participation_of(u: &IndirectUtility, scan_nodes: usize) -> ParticipationSet {
    let h = u.model().reservation().clone();
    participation_set(|x| u.total(x), |x| h.value(x), scan_nodes)
}
