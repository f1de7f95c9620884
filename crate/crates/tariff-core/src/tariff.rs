//! Piecewise tariffs `p(t, c) = p1 c^gamma + p2 c + p3` on consumption ranges.

use serde::Serialize;

use crate::error::{Result, TariffError};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Linear in consumption.
    Linear,
    /// Power term plus linear term.
    Mixed,
    /// Part of the bridge between the two served components.
    Bridge,
    /// Top segment present only in the full tariff.
    Upper,
    /// One supporting curve of a sampled indirect utility.
    Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TariffSegment {
    pub kind: SegmentKind,
    pub c_lo: f64,
    pub c_hi: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl TariffSegment {
    pub fn price(&self, gamma: f64, c: f64) -> f64 {
        let power = if self.p1 == 0.0 { 0.0 } else { self.p1 * c.powf(gamma) };
        power + self.p2 * c + self.p3
    }

    /// Maximize `a c^gamma - p2 c - p3` over the segment range, where
    /// `a = g(x) phi / gamma - p1`.
    fn best_response(&self, gamma: f64, a: f64, x: f64) -> Result<(f64, f64)> {
        let w = |c: f64| -> f64 {
            let power = if a == 0.0 {
                0.0
            } else if c == 0.0 {
                if gamma > 0.0 {
                    0.0
                } else {
                    a * f64::INFINITY
                }
            } else {
                a * c.powf(gamma)
            };
            power - self.p2 * c - self.p3
        };
        if self.c_hi.is_infinite() {
            let unbounded = if gamma > 0.0 {
                self.p2 < 0.0 || (self.p2 == 0.0 && a > 0.0)
            } else {
                self.p2 < 0.0 || (self.p2 == 0.0 && a < 0.0)
            };
            if unbounded {
                return Err(TariffError::Unbounded { x });
            }
        }
        let mut candidates = vec![self.c_lo];
        if self.c_hi.is_finite() {
            candidates.push(self.c_hi);
        }
        if self.p2 != 0.0 {
            let ratio = a * gamma / self.p2;
            if ratio > 0.0 {
                let cs = ratio.powf(1.0 / (1.0 - gamma));
                if cs > self.c_lo && cs < self.c_hi {
                    candidates.push(cs);
                }
            }
        }
        let mut best = (self.c_lo, f64::NEG_INFINITY);
        for c in candidates {
            let v = w(c);
            if v > best.1 {
                best = (c, v);
            }
        }
        Ok(best)
    }
}

/// A tariff on every node of the time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Tariff {
    pub gamma: f64,
    pub time_grid: Vec<f64>,
    pub segments: Vec<Vec<TariffSegment>>,
    /// True when the optional top segment is omitted.
    pub simplified: bool,
}

/// Relative gap below which two segment optima count as tied.
pub const RESPONSE_TIE: f64 = 1e-12;

impl Tariff {
    pub fn new(
        gamma: f64,
        time_grid: Vec<f64>,
        segments: Vec<Vec<TariffSegment>>,
        simplified: bool,
    ) -> Self {
        Tariff {
            gamma,
            time_grid,
            segments,
            simplified,
        }
    }

    pub fn n_times(&self) -> usize {
        self.segments.len()
    }

    /// Interior breakpoints at time node `ti`.
    pub fn breakpoints(&self, ti: usize) -> Vec<f64> {
        self.segments[ti].iter().skip(1).map(|s| s.c_lo).collect()
    }

    /// Segment whose range contains `c`; the end segments extend outward.
    pub fn segment_at(&self, ti: usize, c: f64) -> &TariffSegment {
        let segs = &self.segments[ti];
        segs.iter().find(|s| c >= s.c_lo && c <= s.c_hi).unwrap_or_else(|| {
            if c < segs[0].c_lo {
                &segs[0]
            } else {
                &segs[segs.len() - 1]
            }
        })
    }

    pub fn price(&self, ti: usize, c: f64) -> f64 {
        self.segment_at(ti, c).price(self.gamma, c)
    }

    /// `dp/dc` of the segment containing `c`.
    pub fn marginal_price(&self, ti: usize, c: f64) -> f64 {
        let seg = self.segment_at(ti, c);
        let power = if seg.p1 == 0.0 { 0.0 } else { seg.p1 * self.gamma * c.powf(self.gamma - 1.0) };
        power + seg.p2
    }

    /// Largest jump between neighbouring segments at their common breakpoint.
    pub fn max_jump(&self, ti: usize) -> f64 {
        self.segments[ti]
            .windows(2)
            .map(|w| {
                let c = w[1].c_lo;
                (w[0].price(self.gamma, c) - w[1].price(self.gamma, c)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Exact best response of type `x` at time node `ti`: `(c*, u - p)`.
    /// Near-ties across segments go to the larger consumption, which pays more.
    pub fn best_response(&self, params: &ModelParams, ti: usize, x: f64) -> Result<(f64, f64)> {
        let gamma = self.gamma;
        let base = params.taste(x) * params.phi()[ti] / gamma;
        let mut best = (0.0, f64::NEG_INFINITY);
        for seg in &self.segments[ti] {
            let (c, v) = seg.best_response(gamma, base - seg.p1, x)?;
            let tie = RESPONSE_TIE * (1.0 + v.abs());
            if !best.1.is_finite() || v > best.1 + tie || (v >= best.1 - tie && c > best.0) {
                best = (c, v);
            }
        }
        if !best.1.is_finite() {
            return Err(TariffError::Unbounded { x });
        }
        Ok(best)
    }
}

/// Upper envelope of the curves `c -> w_j phi c^gamma / gamma - q_j` over
/// `[c_lo, c_hi]`, returned as tariff segments.
///
/// With `w_j = g(x_j)` and `q_j = p*(t, x_j)` this is the price obtained from
/// an indirect utility sampled at the nodes `x_j`.
pub fn envelope_segments(
    gamma: f64,
    phi: f64,
    curves: &[(f64, f64)],
    c_lo: f64,
    c_hi: f64,
    kind: SegmentKind,
) -> Vec<TariffSegment> {
    // In z = phi c^gamma / gamma each curve is the line w z - q, and z grows with c.
    let to_z = |c: f64| -> f64 {
        if c == 0.0 {
            if gamma > 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else if c.is_infinite() {
            if gamma > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            phi * c.powf(gamma) / gamma
        }
    };
    let to_c = |z: f64| -> f64 {
        if gamma > 0.0 {
            if z <= 0.0 {
                0.0
            } else {
                (gamma * z / phi).powf(1.0 / gamma)
            }
        } else if z >= 0.0 {
            f64::INFINITY
        } else {
            (gamma * z / phi).powf(1.0 / gamma)
        }
    };
    let (zl, zu) = (to_z(c_lo), to_z(c_hi));

    let mut lines: Vec<(f64, f64)> = curves.to_vec();
    lines.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    lines.dedup_by(|later, earlier| later.0 == earlier.0);

    let cross = |a: (f64, f64), b: (f64, f64)| (a.1 - b.1) / (a.0 - b.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    for line in lines {
        while hull.len() >= 2 {
            let n = hull.len();
            if cross(hull[n - 2], line) <= cross(hull[n - 2], hull[n - 1]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }

    let mut out = Vec::new();
    for (i, &(w, q)) in hull.iter().enumerate() {
        let start = if i == 0 {
            f64::NEG_INFINITY
        } else {
            cross(hull[i - 1], hull[i])
        };
        let end = if i + 1 == hull.len() {
            f64::INFINITY
        } else {
            cross(hull[i], hull[i + 1])
        };
        let (s, e) = (start.max(zl), end.min(zu));
        if e <= s && !(hull.len() == 1) {
            continue;
        }
        out.push(TariffSegment {
            kind,
            c_lo: if s == zl { c_lo } else { to_c(s) },
            c_hi: if e == zu { c_hi } else { to_c(e) },
            p1: w * phi / gamma,
            p2: 0.0,
            p3: -q,
        });
    }
    out
}


/// Margin, relative to `1 + max |H|`, by which an exclusion tariff keeps
/// every type below its outside option.
pub const EXCLUSION_MARGIN: f64 = 1e-3;
/// Type nodes used to size the fixed charge of an exclusion tariff.
pub const EXCLUSION_NODES: usize = 1001;

/// Linear tariff `phi(t) c + p3(t)` whose fixed charge leaves every type
/// strictly below its outside option, for solutions that serve nobody.
pub fn exclusion_tariff(params: &ModelParams) -> Result<Tariff> {
    let r = params.reservation();
    let t_len = params.horizon();
    let xs: Vec<f64> = (0..EXCLUSION_NODES)
        .map(|i| i as f64 / (EXCLUSION_NODES - 1) as f64)
        .collect();
    let h_max = xs.iter().fold(0.0f64, |m, &x| m.max(r.value(x).abs()));
    let margin = EXCLUSION_MARGIN * (1.0 + h_max);
    let linear: Vec<Vec<TariffSegment>> = params
        .phi()
        .iter()
        .map(|&phi| {
            vec![TariffSegment {
                kind: SegmentKind::Linear,
                c_lo: 0.0,
                c_hi: f64::INFINITY,
                p1: 0.0,
                p2: phi,
                p3: 0.0,
            }]
        })
        .collect();
    let mut tariff = Tariff::new(params.gamma(), params.time_grid().to_vec(), linear, true);
    for ti in 0..params.n_times() {
        let mut charge = f64::NEG_INFINITY;
        for &x in &xs {
            let (_, v) = tariff.best_response(params, ti, x)?;
            charge = charge.max(v - r.value(x) / t_len);
        }
        tariff.segments[ti][0].p3 = charge + margin;
    }
    Ok(tariff)
}
