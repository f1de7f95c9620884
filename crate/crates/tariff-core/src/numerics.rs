//! Small numerical kernels shared by the solvers: grids, interpolation,
//! quadrature, bracketing root search and golden-section maximization.

use crate::error::{Result, TariffError};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two nodes");
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    linspace(a, b, n).into_iter().map(f64::exp).collect()
}

/// Composite trapezoid weights for an arbitrary increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    for i in 0..n - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Nodes and weights of the composite four-point Gauss-Legendre rule with
/// `panels` equal panels on `[lo, hi]`. No node sits on a panel edge.
pub fn gauss_legendre_composite(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    const ABSCISSAE: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const WEIGHTS: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let half = 0.5 * (hi - lo) / panels as f64;
    (0..panels)
        .flat_map(|k| {
            let mid = lo + (2 * k + 1) as f64 * half;
            ABSCISSAE.iter().zip(WEIGHTS).map(move |(&a, w)| (mid + half * a, half * w))
        })
        .collect()
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    trapezoid_weights(grid)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Index `i` with `xs[i] <= x < xs[i+1]`, clamped to a valid segment.
pub fn segment_index(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    if x <= xs[0] {
        return 0;
    }
    if x >= xs[n - 1] {
        return n - 2;
    }
    match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p => (p - 1).min(n - 2),
    }
}

/// Piecewise-linear interpolation with linear extrapolation at both ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let i = segment_index(xs, x);
    let (x0, x1) = (xs[i], xs[i + 1]);
    let t = (x - x0) / (x1 - x0);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Adaptive double-exponential quadrature of `f` over `[a, b]`.
///
/// Copes with integrable endpoint singularities; interior kinks must be
/// passed through [`integrate_split`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if b <= a {
        return if b == a { 0.0 } else { -integrate(f, b, a) };
    }
    quadrature::double_exponential::integrate(f, a, b, 1e-13).integral
}

/// Integrate across `[a, b]` splitting at every break point inside it.
pub fn integrate_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
    if b < a {
        return -integrate_split(f, b, a, breaks);
    }
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    pts.push(b);
    pts.windows(2).map(|w| integrate(&f, w[0], w[1])).sum()
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(TariffError::NoRoot { lo, hi });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a) <= xtol || m == a || m == b {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmax, max)`; the endpoints are considered as candidates too.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iter = 0;
    while (b - a) > xtol && iter < 300 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iter += 1;
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Ternary search over the indices of a grid on which `f` is unimodal.
pub fn discrete_unimodal_max<F: FnMut(usize) -> f64>(mut f: F, len: usize) -> (usize, f64) {
    let (mut lo, mut hi) = (0usize, len - 1);
    while hi - lo > 2 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if f(m1) < f(m2) {
            lo = m1 + 1;
        } else {
            hi = m2;
        }
    }
    let mut best = (lo, f(lo));
    for i in lo + 1..=hi {
        let v = f(i);
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn positive_part(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let g = [0.0, 0.1, 0.5, 1.0];
        let v: Vec<f64> = g.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&g, &v) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_is_exact_for_septics() {
        // Four points integrate degree 7 exactly; x^7 on [0, 2] is 32.
        let v: f64 = gauss_legendre_composite(0.0, 2.0, 1).iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((v - 32.0).abs() < 1e-12);
        let nodes = gauss_legendre_composite(1.0, 3.0, 5);
        assert_eq!(nodes.len(), 20);
        assert!(nodes.iter().all(|&(x, _)| x > 1.0 && x < 3.0));
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6 && v.abs() < 1e-12);
    }

    #[test]
    fn split_quadrature_handles_kink() {
        let v = integrate_split(|x| (x - 0.5).abs(), 0.0, 1.0, &[0.5]);
        assert!((v - 0.25).abs() < 1e-13);
    }

    #[test]
    fn discrete_search_matches_scan() {
        let g: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let f = |i: usize| -(g[i] - 0.7231f64).powi(2);
        let (i, _) = discrete_unimodal_max(f, g.len());
        let scan = (0..g.len())
            .max_by(|&a, &b| f(a).partial_cmp(&f(b)).unwrap())
            .unwrap();
        assert_eq!(i, scan);
    }
}
