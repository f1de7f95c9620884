use std::sync::Arc;

use tariff_core::agent::participation_of;
use tariff_core::error::TariffError;
use tariff_core::evaluation::principal_utility;
use tariff_core::model::{Branch, ModelParams, ModelSpec, Reservation};
use tariff_core::numerics::{geomspace, linspace};
use tariff_core::tariff::SegmentKind;
use tariff_core::typed_h::{
    bridge_candidate, build_bridge, build_tariff_typed_h, check_elasticity, constraint_check, ell_ab, r_gamma,
    solve_a0_b0_star, stationarity_residual, validate_assumptions, BridgeKind, TypedHSolution,
};
use tariff_core::uconvex::{check_u_convexity, u_transform_price_to_indirect, SampledFunctionOfConsumption, SampledFunctionOfType};

fn model(gamma: f64, reservation: Reservation) -> ModelParams {
    ModelParams::new(ModelSpec::power(gamma, 2.0, reservation)).unwrap()
}

fn sqrt_h(level: f64, scale: f64) -> Reservation {
    Reservation::Sqrt { level, scale }
}

/// Concave, negative, zero at the top type; steep near the bottom.
fn log_h(scale: f64, offset: f64) -> Reservation {
    Reservation::Log { level: -scale * (1.0f64 + offset).ln(), scale, offset }
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

#[test]
fn normalized_demand_examples() {
    assert_eq!(r_gamma(0.5, 1.0, 0.0), 0.0);
    assert_eq!(r_gamma(-1.0, 1.0, 0.5), 1.0);
    assert!((r_gamma(0.5, 0.75, 0.25) - 1.0).abs() < 1e-15);
    let p = model(0.5, sqrt_h(0.2, 1.0));
    assert!((ell_ab(&p, 0.75, 0.25) - 1.0 / 6.0).abs() < 1e-14);
    // Quadrature of the two defining integrals: (2x)^2 below, (2x - 1)^2 above.
    let q = simpson(|x| (2.0 * x).powi(2), 0.0, 0.25, 1000) + simpson(|x| (2.0 * x - 1.0).powi(2), 0.75, 1.0, 1000);
    assert!((q - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn boundary_slope_bounds_match_quadrature() {
    let p = model(0.5, sqrt_h(0.2, 1.0));
    let (a0, b0) = (0.8, 0.1);
    // gamma = 1/2, n = 2: demand density is the squared bracket, A^3 = ell,
    // demand scale 1 / A, slope shapes 2 b0 and 2 a0 - 1.
    let ell = simpson(|x| (2.0 * x).powi(2), 0.0, b0, 100_000)
        + simpson(|x| (2.0 * x - 1.0).powi(2), a0, 1.0, 100_000);
    let cap = ell.cbrt();
    let xi = (2.0 * a0 - 1.0) / cap / 0.5;
    let psi = 2.0 * b0 / cap / 0.5;
    let check = constraint_check(&p, a0, b0).unwrap();
    assert!((check.xi - xi).abs() < 1e-8, "{} vs {xi}", check.xi);
    assert!((check.psi - psi).abs() < 1e-8, "{} vs {psi}", check.psi);
    assert!((check.reservation_slope_a0 - 0.5 / a0.sqrt()).abs() < 1e-12);
    assert!(check.feasible);
}

#[test]
fn boundary_constraint_corners() {
    let p = model(0.5, sqrt_h(0.2, 1.0));
    let low = constraint_check(&p, 0.4, 0.0).unwrap();
    assert_eq!(low.xi, 0.0);
    assert!(!low.feasible);
    let side = constraint_check(&p, 0.9, 0.0).unwrap();
    assert_eq!(side.psi, 0.0);
    assert!(side.psi <= side.reservation_slope_b0);
    assert!(constraint_check(&p, 1.0, 0.0).unwrap().feasible);
}

#[test]
fn assumption_examples() {
    let p = model(0.5, sqrt_h(0.1, 1.0));
    let report = validate_assumptions(&p);
    assert!(report.passed(), "{:?}", report.failures);
    assert!(report.flags.elasticity && report.flags.slope_monotone && report.flags.strictly_concave);

    // Falling taste against a convex power reservation, any exponent above one.
    let nodes = linspace(0.0, 1.0, 1001);
    for alpha in [1.5, 2.0, 3.0] {
        let bad = check_elasticity(|x| 1.0 - x, |_| -1.0, |x: f64| x.powf(alpha), |x: f64| alpha * x.powf(alpha - 1.0), &nodes);
        assert!(bad.is_empty(), "alpha {alpha}: {bad:?}");
    }
    // A reservation with a negative intercept fails for rising taste.
    let bad = check_elasticity(|x| x, |_| 1.0, |x: f64| x.sqrt() - 0.1, |x: f64| 0.5 / x.sqrt(), &nodes);
    assert!(!bad.is_empty());

    let convex = model(0.5, Reservation::Power { level: 0.0, scale: 0.1, exponent: 2.0 });
    let report = validate_assumptions(&convex);
    assert!(!report.flags.strictly_concave);
    assert!(report.failures.iter().any(|f| f.condition == "strict_concavity"));
    assert!(matches!(solve_a0_b0_star(&convex), Err(TariffError::AssumptionViolation { .. })));
}

/// Independent scan of the reduced problem for gamma = 1/2, n = 2, unit
/// profiles, uniform types and `H = 0.02 + 0.3 sqrt(x)`.
fn brute_force_pair(m: usize) -> (f64, f64) {
    let h = |x: f64| 0.02 + 0.3 * x.sqrt();
    let dh = |x: f64| 0.15 / x.sqrt();
    let grid: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &a0 in &grid {
        for &b0 in grid.iter().take_while(|&&b| b <= a0) {
            let ell = (1.0 + (2.0 * b0).powi(3) - (2.0 * a0 - 1.0).max(0.0).powi(3)) / 6.0;
            let cap = ell.cbrt();
            let upper_ok = a0 >= 1.0 || 2.0 * (2.0 * a0 - 1.0).max(0.0) / cap >= dh(a0);
            let lower_ok = b0 <= 0.0 || 4.0 * b0 / cap <= dh(b0);
            if !(upper_ok && lower_ok) {
                continue;
            }
            let value = 1.5 * cap * cap - b0 * h(b0) + (a0 - 1.0) * h(a0);
            if value > best.0 {
                best = (value, a0, b0);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn boundary_pair_matches_dense_scan() {
    let p = model(0.5, sqrt_h(0.02, 0.3));
    let sol = solve_a0_b0_star(&p).unwrap();
    let (a0, b0) = brute_force_pair(2048);
    assert!((sol.a0 - a0).abs() < 1e-3, "{} vs {a0}", sol.a0);
    assert!((sol.b0 - b0).abs() < 1e-3, "{} vs {b0}", sol.b0);
    let c = sol.certificates;
    assert!(c.xi_vacuous || c.xi >= c.reservation_slope_a0 - 1e-8);
    assert!(c.psi_vacuous || c.psi <= c.reservation_slope_b0 + 1e-8);
}

#[test]
fn qualitative_participation_patterns() {
    let top_only = solve_a0_b0_star(&model(0.5, sqrt_h(0.0, 1.0))).unwrap();
    assert_eq!(top_only.b0, 0.0);
    assert!(top_only.a0 > 0.5 && top_only.a0 < 1.0);
    let bottom_only = solve_a0_b0_star(&model(-1.0, log_h(1.0, 0.01))).unwrap();
    assert_eq!(bottom_only.a0, 1.0);
    assert!(bottom_only.b0 > 0.0 && bottom_only.b0 < 0.5);
}

#[test]
fn power_coefficients_match_closed_forms() {
    for (gamma, r) in [(0.5, sqrt_h(0.02, 0.3)), (-1.0, log_h(1.0, 0.01))] {
        let p = model(gamma, r);
        let sol = solve_a0_b0_star(&p).unwrap();
        let n = 2.0;
        let ell = (1.0 - gamma) / (2.0 * (2.0 - gamma)) * r_gamma(gamma, sol.a0, sol.b0);
        let cap = ell.powf((1.0 - gamma) / (n - gamma));
        let scale = 1.0 / cap.powf((n - 1.0) * gamma / (1.0 - gamma));
        let big_n = 2f64.powf(gamma / (1.0 - gamma)) * (1.0 - gamma) * scale / gamma;
        let big_l = (gamma * big_n / (1.0 - gamma)).powf(1.0 / gamma);
        for ti in 0..p.n_times() {
            assert!((sol.capacity[ti] - cap).abs() < 1e-10 * cap);
            assert!((sol.n_coefficient[ti] - big_n).abs() < 1e-9 * big_n.abs());
            assert!((sol.l_coefficient[ti] - big_l).abs() < 1e-9 * big_l);
        }
    }
}

struct Built {
    params: Arc<ModelParams>,
    sol: TypedHSolution,
}

fn solved(gamma: f64, r: Reservation) -> Built {
    let params = Arc::new(model(gamma, r));
    let sol = solve_a0_b0_star(&params).unwrap();
    Built { params, sol }
}

fn scenarios() -> Vec<Built> {
    vec![
        solved(0.5, sqrt_h(0.02, 0.3)),
        solved(0.5, sqrt_h(0.0, 1.0)),
        solved(-1.0, log_h(1.0, 0.01)),
        solved(-1.0, log_h(0.3, 0.1)),
    ]
}

#[test]
fn closed_tariff_breakpoints_follow_the_boundary_types() {
    for b in scenarios() {
        let (p, sol) = (&b.params, &b.sol);
        let (bridge, _) = build_bridge(p, sol, BridgeKind::Chord);
        let (tariff, _) = build_tariff_typed_h(p.clone(), sol, &bridge, false).unwrap();
        assert!(tariff.simplified);
        let gamma = p.gamma();
        let e = 1.0 / (1.0 - gamma);
        for ti in 0..p.n_times() {
            let l = sol.l_coefficient[ti];
            let (lin_hi, mix_lo) = if gamma > 0.0 {
                (l * sol.b0.powf(e), l * (sol.a0 - 0.5).powf(e))
            } else {
                (l * (1.0 - sol.a0).powf(e), l * (0.5 - sol.b0).powf(e))
            };
            let segs = &tariff.segments[ti];
            match segs.iter().find(|s| s.kind == SegmentKind::Linear) {
                Some(lin) => assert!((lin.c_hi - lin_hi).abs() < 1e-12 * lin_hi.max(1.0)),
                None => assert_eq!(lin_hi, 0.0),
            }
            let mixed = segs.iter().find(|s| s.kind == SegmentKind::Mixed).unwrap();
            assert!((mixed.c_lo - mix_lo).abs() < 1e-12 * mix_lo.max(1.0));
            // Types just inside the boundary consume at the start of the mixed
            // range; the boundary type itself is indifferent along a kink.
            let edge = if gamma > 0.0 { sol.a0 + 1e-9 } else { sol.b0 - 1e-9 };
            let (c, _) = tariff.best_response(p, ti, edge).unwrap();
            assert!((c - mix_lo).abs() < 1e-6 * mix_lo.max(1.0), "{c} vs {mix_lo}");
            assert!(tariff.max_jump(ti) < 1e-10);
        }
    }
}

#[test]
fn tariff_reproduces_indirect_utility_and_participation() {
    for b in scenarios() {
        let (p, sol) = (&b.params, &b.sol);
        let (bridge, _) = build_bridge(p, sol, BridgeKind::Chord);
        for full in [false, true] {
            let (tariff, utility) = build_tariff_typed_h(p.clone(), sol, &bridge, full).unwrap();
            for (lo, hi) in sol.components() {
                for &x in &linspace(lo, hi, 101) {
                    for ti in 0..p.n_times() {
                        let (_, v) = tariff.best_response(p, ti, x).unwrap();
                        let w = utility.value(ti, x);
                        assert!((v - w).abs() < 1e-9 * w.abs().max(1.0), "x {x}: {v} vs {w}");
                    }
                }
            }
        }
        let (_, utility) = build_tariff_typed_h(p.clone(), sol, &bridge, false).unwrap();
        let set = participation_of(&utility, 1025);
        let comps = sol.components();
        assert_eq!(set.intervals.len(), comps.len(), "{:?} vs {comps:?}", set.intervals);
        for ((a, b2), (c, d)) in set.intervals.iter().zip(&comps) {
            assert!((a - c).abs() < 1e-6 && (b2 - d).abs() < 1e-6);
        }
    }
}

#[test]
fn indirect_utility_is_convex_stationary_and_u_convex() {
    for b in scenarios() {
        let (p, sol) = (&b.params, &b.sol);
        let (bridge, reports) = build_bridge(p, sol, BridgeKind::Chord);
        assert!(reports.iter().any(|r| r.valid()), "{reports:?}");
        let (_, utility) = build_tariff_typed_h(p.clone(), sol, &bridge, false).unwrap();
        for (lo, hi) in sol.components() {
            let xs = linspace(lo, hi, 401);
            for ti in 0..p.n_times() {
                let v: Vec<f64> = xs.iter().map(|&x| utility.value(ti, x)).collect();
                for w in v.windows(3) {
                    assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
                }
            }
        }
        let residual = stationarity_residual(p, sol, &utility, 200);
        assert!(residual <= 1e-6, "residual {residual}");
        let xs = linspace(0.0, 1.0, 1025);
        let sampled = SampledFunctionOfType {
            time_grid: p.time_grid().to_vec(),
            x_grid: xs.clone(),
            values: utility.sample(&xs),
        };
        let report = check_u_convexity(p, &sampled, None).unwrap();
        assert!(report.is_u_convex, "{:?}", report.convexity_violations);
    }
}

#[test]
fn price_transform_round_trip_on_participants() {
    for b in scenarios() {
        let (p, sol) = (&b.params, &b.sol);
        let (bridge, _) = build_bridge(p, sol, BridgeKind::Chord);
        let (tariff, utility) = build_tariff_typed_h(p.clone(), sol, &bridge, false).unwrap();
        let c_grid = geomspace(1e-6, 20.0, 20_000);
        let price = SampledFunctionOfConsumption {
            time_grid: p.time_grid().to_vec(),
            c_grid: c_grid.clone(),
            values: (0..p.n_times()).map(|ti| c_grid.iter().map(|&c| tariff.price(ti, c)).collect()).collect(),
        };
        let xs: Vec<f64> = sol.components().iter().flat_map(|&(lo, hi)| linspace(lo, hi, 201)).collect();
        let (back, _) = u_transform_price_to_indirect(p, &price, &xs).unwrap();
        for ti in 0..p.n_times() {
            for (&x, &v) in xs.iter().zip(&back.values[ti]) {
                let w = utility.value(ti, x);
                assert!((v - w).abs() < 1e-6, "x {x}: {v} vs {w}");
            }
        }
    }
}

#[test]
fn equilibrium_is_invariant_to_the_bridge() {
    let b = solved(0.5, sqrt_h(0.02, 0.3));
    let (p, sol) = (&b.params, &b.sol);
    let (chord, rc) = bridge_candidate(p, sol, BridgeKind::Chord);
    let (tangent, rt) = bridge_candidate(p, sol, BridgeKind::Tangent);
    assert!(rc.valid() && rt.valid());
    assert!((rc.min_interior_gap - rt.min_interior_gap).abs() > 1e-6, "bridges should differ");
    let (t1, u1) = build_tariff_typed_h(p.clone(), sol, &chord, false).unwrap();
    let (t2, u2) = build_tariff_typed_h(p.clone(), sol, &tangent, false).unwrap();
    let e1 = principal_utility(p, &t1).unwrap();
    let e2 = principal_utility(p, &t2).unwrap();
    assert!(
        (e1.principal_utility - e2.principal_utility).abs() < 1e-8,
        "{:?} vs {:?}",
        e1,
        e2
    );
    for (a, b2) in e1.participation.intervals.iter().zip(&e2.participation.intervals) {
        assert!((a.0 - b2.0).abs() < 1e-8 && (a.1 - b2.1).abs() < 1e-8);
    }
    for &x in &linspace(sol.a0, 1.0, 201) {
        for ti in 0..p.n_times() {
            let (c1, v1) = t1.best_response(p, ti, x).unwrap();
            let (c2, v2) = t2.best_response(p, ti, x).unwrap();
            assert!((c1 - c2).abs() < 1e-8 && (v1 - v2).abs() < 1e-8);
            assert!((u1.value(ti, x) - u2.value(ti, x)).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_bridge_when_boundaries_meet() {
    let b = solved(0.5, sqrt_h(0.02, 0.3));
    let mut sol = b.sol.clone();
    sol.b0 = sol.a0;
    let (bridge, report) = bridge_candidate(&b.params, &sol, BridgeKind::Chord);
    assert!(bridge.is_empty());
    assert!(report.endpoints_match);
}

#[test]
fn lower_component_uses_lower_bracket() {
    let p = model(-1.0, log_h(1.0, 0.01));
    let sol = solve_a0_b0_star(&p).unwrap();
    // Every served type on the lower component has a positive bracket.
    for &x in &linspace(0.0, sol.b0, 51) {
        assert!(p.bracket(Branch::Lower, x) > 0.0);
    }
}
