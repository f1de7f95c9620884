// Shared by the `properties` test target and the acceptance runner through `include!`.

use std::sync::Arc;

use proptest::prelude::*;
use tariff_core::agent::{best_response_grid, participation_of, refine_best_response};
use tariff_core::const_h::{build_tariff_const_h, objective_power, solve_x0_star, Route};
use tariff_core::evaluation::{perturbation_audit, principal_utility, Boundary};
use tariff_core::model::{ModelParams, ModelSpec, Profile, Reservation};
use tariff_core::numerics::{geomspace, linspace};
use tariff_core::oracle::{oracle_relaxed_maximize_const_h, oracle_slope_grid};
use tariff_core::tariff::{SegmentKind, Tariff, TariffSegment};
use tariff_core::typed_h::{
    build_bridge, build_tariff_typed_h, solve_a0_b0_star, stationarity_residual, validate_assumptions, BridgeKind,
};
use tariff_core::uconvex::{
    biconjugate, check_u_convexity, max_abs_difference, round_trip_bound, u_transform_price_to_indirect,
    SampledFunctionOfConsumption, SampledFunctionOfType,
};

pub const CASES: u32 = 100;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn gamma() -> impl Strategy<Value = f64> {
    prop_oneof![-3.0..-0.1f64, 0.1..0.9f64]
}

fn exponent() -> impl Strategy<Value = f64> {
    1.1..4.0f64
}

fn power(gamma: f64, n: f64, reservation: Reservation) -> ModelParams {
    ModelParams::new(ModelSpec::power(gamma, n, reservation)).unwrap()
}

/// Constant outside option with the sign of `gamma`.
fn constant_model() -> impl Strategy<Value = ModelParams> {
    (gamma(), exponent(), 0.005..0.3f64)
        .prop_map(|(g, n, h)| power(g, n, Reservation::Constant { h: h * g.signum() }))
}

/// Strictly concave outside option: square root for `gamma > 0`, a
/// logarithm vanishing at the top type for `gamma < 0`.
fn typed_model() -> impl Strategy<Value = ModelParams> {
    (gamma(), exponent(), 0.0..0.05f64, 0.05..1.0f64, 0.01..0.2f64).prop_map(|(g, n, level, scale, offset)| {
        let r = if g > 0.0 {
            Reservation::Sqrt { level, scale }
        } else {
            Reservation::Log {
                level: -scale * (1.0 + offset).ln(),
                scale,
                offset,
            }
        };
        power(g, n, r)
    })
}

fn sample(params: &ModelParams, xs: &[f64], values: Vec<Vec<f64>>) -> SampledFunctionOfType {
    SampledFunctionOfType {
        time_grid: params.time_grid().to_vec(),
        x_grid: xs.to_vec(),
        values,
    }
}

fn c_grid(gamma: f64, n: usize) -> Vec<f64> {
    let mut g = if gamma > 0.0 { vec![0.0] } else { Vec::new() };
    g.extend(geomspace(1e-4, 1e3, n));
    g
}

fn second_differences_ok(ys: &[f64], tol: f64) -> bool {
    ys.windows(3).all(|w| {
        let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        w[2] - 2.0 * w[1] + w[0] >= -tol * scale
    })
}

/// Largest consumption chosen by the nodes `xs` at time node `ti`.
fn top_consumption(params: &ModelParams, tariff: &Tariff, ti: usize, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| tariff.best_response(params, ti, x).unwrap().0)
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(config())]

    fn marginal_cost_strictly_increases(g in gamma(), n in exponent(), k in 0.1..5.0f64, c1 in 0.0..50.0f64, dc in 1e-6..50.0f64) {
        let p = ModelParams::new(ModelSpec { k: Profile::Constant(k), ..ModelSpec::power(g, n, Reservation::Constant { h: g.signum() * 0.1 }) }).unwrap();
        prop_assert!(p.eval_marginal_cost(0.0, c1 + dc).unwrap() > p.eval_marginal_cost(0.0, c1).unwrap());
    }

    fn g_k_inverse_inverts_g_k(g in gamma(), n in exponent(), k in 0.1..5.0f64) {
        let p = ModelParams::new(ModelSpec { k: Profile::Constant(k), ..ModelSpec::power(g, n, Reservation::Constant { h: g.signum() * 0.1 }) }).unwrap();
        for c in geomspace(1e-3, 1e3, 25) {
            let back = p.g_k_inverse(0.0, p.g_k(0.0, c).unwrap()).unwrap();
            prop_assert!((back - c).abs() <= 1e-8 * c, "c {} back {}", c, back);
        }
    }

    fn utility_is_increasing_concave_and_rising_in_type(g in gamma(), x in 0.01..0.99f64) {
        let p = power(g, 2.0, Reservation::Constant { h: g.signum() * 0.1 });
        let cs = geomspace(1e-2, 1e2, 200);
        let u: Vec<f64> = cs.iter().map(|&c| p.eval_utility(0.0, x, c).unwrap()).collect();
        prop_assert!(u.windows(2).all(|w| w[1] > w[0]));
        // Second differences on a geometric grid, normalized to equal spacing.
        for (w, c) in u.windows(3).zip(cs.windows(3)) {
            let left = (w[1] - w[0]) / (c[1] - c[0]);
            let right = (w[2] - w[1]) / (c[2] - c[1]);
            prop_assert!(right - left < 1e-10 * left.abs().max(1.0));
        }
        let h = 1e-6;
        for &c in &[0.1, 1.0, 10.0] {
            let du = (p.eval_utility(0.0, x + h, c).unwrap() - p.eval_utility(0.0, x - h, c).unwrap()) / (2.0 * h);
            prop_assert!(du > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(config())]

    fn biconjugation_is_idempotent(g in gamma(), values in prop::collection::vec(-1.0..1.0f64, 33)) {
        let p = power(g, 2.0, Reservation::Constant { h: g.signum() * 0.1 });
        let xs = linspace(0.0, 1.0, 33);
        let f = sample(&p, &xs, vec![values; p.n_times()]);
        let grid = c_grid(g, 300);
        let once = biconjugate(&p, &f, &grid).unwrap();
        let twice = biconjugate(&p, &once, &grid).unwrap();
        prop_assert!(max_abs_difference(&once, &twice) <= 1e-11);
    }

    fn transforms_reverse_order(g in gamma(), base in prop::collection::vec(-1.0..1.0f64, 64), bump in prop::collection::vec(0.0..1.0f64, 64)) {
        let p = power(g, 2.0, Reservation::Constant { h: g.signum() * 0.1 });
        let grid: Vec<f64> = geomspace(1e-2, 1e2, 64);
        let lower = SampledFunctionOfConsumption { time_grid: p.time_grid().to_vec(), c_grid: grid.clone(), values: vec![base.clone(); p.n_times()] };
        let upper_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let upper = SampledFunctionOfConsumption { values: vec![upper_vals; p.n_times()], ..lower.clone() };
        let xs = linspace(0.0, 1.0, 41);
        let (lo, _) = u_transform_price_to_indirect(&p, &lower, &xs).unwrap();
        let (hi, _) = u_transform_price_to_indirect(&p, &upper, &xs).unwrap();
        for (a, b) in lo.values.iter().flatten().zip(hi.values.iter().flatten()) {
            prop_assert!(a >= b);
        }
    }

    fn convex_nondecreasing_samples_are_u_convex(g in 0.1..0.9f64, start in -1.0..1.0f64, slopes in prop::collection::vec(0.0..2.0f64, 32)) {
        let p = power(g, 2.0, Reservation::Constant { h: 0.1 });
        let xs = linspace(0.0, 1.0, 33);
        let mut sorted = slopes;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ys = vec![start];
        for (s, w) in sorted.iter().zip(xs.windows(2)) {
            ys.push(ys.last().unwrap() + s * (w[1] - w[0]));
        }
        let f = sample(&p, &xs, vec![ys; p.n_times()]);
        let grid = c_grid(g, 400);
        let report = check_u_convexity(&p, &f, Some(&grid)).unwrap();
        prop_assert!(report.is_u_convex);
        prop_assert!(report.max_biconjugation_gap <= round_trip_bound(&p, &f, &grid) + 1e-10);
    }

    fn transformed_prices_rise_with_type(g in 0.1..0.9f64, prices in prop::collection::vec(-1.0..3.0f64, 50)) {
        let p = power(g, 2.0, Reservation::Constant { h: 0.1 });
        let grid = linspace(0.0, 5.0, 50);
        let price = SampledFunctionOfConsumption { time_grid: p.time_grid().to_vec(), c_grid: grid, values: vec![prices; p.n_times()] };
        let (indirect, _) = u_transform_price_to_indirect(&p, &price, &linspace(0.0, 1.0, 101)).unwrap();
        for row in &indirect.values {
            prop_assert!(row.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

proptest! {
    #![proptest_config(config())]

    fn constant_outside_option_agent_invariants(p in constant_model()) {
        let model = Arc::new(p);
        let sol = solve_x0_star(&model, Route::Power).unwrap();
        let (tariff, utility) = build_tariff_const_h(model.clone(), &sol, false).unwrap();
        let g = model.gamma();

        // Upward-closed participation.
        let part = participation_of(&utility, 1025);
        if sol.x0 < 1.0 {
            prop_assert_eq!(part.intervals.len(), 1);
            prop_assert_eq!(part.intervals[0].1, 1.0);
        }

        let served: Vec<f64> = linspace(sol.x0, 1.0, 60);
        for ti in 0..model.n_times() {
            let top = top_consumption(&model, &tariff, ti, &served).max(1e-3);
            let lo = if g > 0.0 { 0.0 } else { 1e-3 * top };
            let grid = linspace(lo, 1.25 * top, 4001);
            let mut last_c = 0.0;
            for &x in &served {
                let (c, _) = tariff.best_response(&model, ti, x).unwrap();
                let p_star = utility.value(ti, x);
                // Envelope identity.
                if c > 0.0 {
                    let u = model.utility_at(ti, x, c).unwrap();
                    prop_assert!((tariff.price(ti, c) - (u - p_star)).abs() <= 1e-8 * (1.0 + u.abs()));
                }
                // Grid responses never beat p*; refinement recovers it.
                if model.taste(x) > 0.0 {
                    let price = |c: f64| tariff.price(ti, c);
                    let (_, v, i) = best_response_grid(&model, price, ti, x, &grid).unwrap();
                    prop_assert!(v <= p_star + 1e-9 * (1.0 + p_star.abs()));
                    let (_, vr) = refine_best_response(&model, price, ti, x, &grid, i);
                    prop_assert!((vr.max(v) - p_star).abs() <= 1e-6);
                }
                if g > 0.0 {
                    prop_assert!(c >= last_c - 1e-12);
                    last_c = c;
                } else if x < 1.0 {
                    prop_assert!(c > 0.0, "zero consumption at participating type {}", x);
                }
            }
            if g > 0.0 {
                for x in linspace(0.0, 0.5, 26) {
                    prop_assert_eq!(tariff.best_response(&model, ti, x).unwrap().0, 0.0);
                }
            }
        }
    }

    fn constant_outside_option_solver_invariants(p in constant_model()) {
        let model = Arc::new(p);
        let sol = solve_x0_star(&model, Route::Power).unwrap();
        let g = model.gamma();
        if g > 0.0 {
            prop_assert!(sol.foc_residual <= 1e-10);
            prop_assert!(sol.x0 > 0.5 && sol.x0 < 1.0, "x0 = {}", sol.x0);
        } else if sol.x0 > 1e-6 && sol.x0 < 1.0 - 1e-6 {
            // Richardson-extrapolated central difference, step scaled to the distance from the ends.
            let h = 1e-2 * sol.x0.min(1.0 - sol.x0);
            let central = |h: f64| {
                (objective_power(&model, sol.x0 + h).unwrap() - objective_power(&model, sol.x0 - h).unwrap()) / (2.0 * h)
            };
            let d = (4.0 * central(0.5 * h) - central(h)) / 3.0;
            prop_assert!(d.abs() <= 1e-8, "derivative {}", d);
        }
        // Global-maximum audit.
        let best = objective_power(&model, sol.x0).unwrap();
        for x in linspace(0.0, 1.0, 10_000) {
            let v = objective_power(&model, x).unwrap();
            prop_assert!(v <= best + 1e-12 * best.abs().max(1.0), "x {} value {} > {}", x, v, best);
        }
        let (_, utility) = build_tariff_const_h(model.clone(), &sol, false).unwrap();
        if sol.x0 < 1.0 {
            let xs = linspace(sol.x0, 1.0, 201);
            let report = check_u_convexity(&model, &sample(&model, &xs, utility.sample(&xs)), None).unwrap();
            prop_assert!(report.is_u_convex);
            // Informational rent rises with type.
            let h = model.reservation().value(0.0);
            let rent: Vec<f64> = xs.iter().map(|&x| utility.total(x) - h).collect();
            prop_assert!(rent.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
    }

    fn principal_loses_from_competition_and_cost(g in gamma(), n in exponent(), h in 0.01..0.1f64) {
        let h = h * g.signum();
        let values = [0.5, 0.75, 1.0, 1.5, 2.0];
        let solve = |spec: ModelSpec| solve_x0_star(&ModelParams::new(spec).unwrap(), Route::Power).unwrap();
        let base = ModelSpec::power(g, n, Reservation::Constant { h });
        // Outside option levels in increasing order.
        let mut by_h: Vec<(f64, f64, f64)> = values
            .iter()
            .map(|s| {
                let sol = solve(ModelSpec { reservation: Reservation::Constant { h: h * s }, ..base.clone() });
                (h * s, sol.principal_utility, sol.x0)
            })
            .collect();
        by_h.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in by_h.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-10);
            prop_assert!(w[1].2 >= w[0].2 - 1e-10);
        }
        let by_k: Vec<f64> = values
            .iter()
            .map(|s| solve(ModelSpec { k: Profile::Constant(*s), ..base.clone() }).principal_utility)
            .collect();
        for w in by_k.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(config())]

    fn typed_outside_option_invariants(p in typed_model()) {
        prop_assume!(validate_assumptions(&p).passed());
        let model = Arc::new(p);
        let sol = solve_a0_b0_star(&model).unwrap();
        let cert = &sol.certificates;
        if !cert.xi_vacuous {
            prop_assert!(cert.xi >= cert.reservation_slope_a0 - 1e-8);
        }
        if !cert.psi_vacuous {
            prop_assert!(cert.psi <= cert.reservation_slope_b0 + 1e-8);
        }
        let (bridge, reports) = build_bridge(&model, &sol, BridgeKind::Chord);
        let (tariff, utility) = build_tariff_typed_h(model.clone(), &sol, &bridge, false).unwrap();
        for (lo, hi) in sol.components() {
            let xs = linspace(lo, hi, 201);
            let total: Vec<f64> = xs.iter().map(|&x| utility.total(x)).collect();
            prop_assert!(second_differences_ok(&total, 1e-9));
        }
        prop_assert!(stationarity_residual(&model, &sol, &utility, 200) <= 1e-6);

        let eval = principal_utility(&model, &tariff).unwrap();
        let comps = sol.components();
        prop_assert_eq!(eval.participation.intervals.len(), comps.len());
        for (a, b) in eval.participation.intervals.iter().zip(&comps) {
            prop_assert!((a.0 - b.0).abs() <= 1e-6 && (a.1 - b.1).abs() <= 1e-6, "{:?} vs {:?}", a, b);
        }

        if sol.separated {
            let xs = linspace(0.0, 1.0, 201);
            let report = check_u_convexity(&model, &sample(&model, &xs, utility.sample(&xs)), None).unwrap();
            prop_assert!(report.is_u_convex || !reports.iter().any(|r| r.valid()));
        }

        // Equilibrium does not depend on which valid bridge is used.
        if sol.b0 < sol.a0 && reports.iter().all(|r| r.valid()) {
            let (other, _) = build_bridge(&model, &sol, BridgeKind::Tangent);
            let (alt, _) = build_tariff_typed_h(model.clone(), &sol, &other, false).unwrap();
            let alt_eval = principal_utility(&model, &alt).unwrap();
            prop_assert!((alt_eval.principal_utility - eval.principal_utility).abs() <= 1e-8);
            prop_assert_eq!(alt_eval.participation.intervals.len(), eval.participation.intervals.len());
            for x in linspace(0.0, 1.0, 101) {
                if !eval.participation.contains(x) {
                    continue;
                }
                for ti in 0..model.n_times() {
                    let (c1, v1) = tariff.best_response(&model, ti, x).unwrap();
                    let (c2, v2) = alt.best_response(&model, ti, x).unwrap();
                    prop_assert!((c1 - c2).abs() <= 1e-8 * (1.0 + c1) && (v1 - v2).abs() <= 1e-8);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(config())]

    fn random_directions_never_improve_the_optimum(p in constant_model(), seed in any::<u64>()) {
        let model = Arc::new(p);
        let sol = solve_x0_star(&model, Route::Power).unwrap();
        let (_, utility) = build_tariff_const_h(model.clone(), &sol, false).unwrap();
        let audit = perturbation_audit(&model, &utility, &Boundary::Threshold { x0: sol.x0 }, 20, 1e-4, seed);
        prop_assert!(audit.max_improvement <= 1e-8, "{}", audit.max_improvement);
    }

    fn typed_optimum_survives_random_directions(p in typed_model(), seed in any::<u64>()) {
        prop_assume!(validate_assumptions(&p).passed());
        let model = Arc::new(p);
        let sol = solve_a0_b0_star(&model).unwrap();
        let (bridge, _) = build_bridge(&model, &sol, BridgeKind::Chord);
        let (_, utility) = build_tariff_typed_h(model.clone(), &sol, &bridge, false).unwrap();
        let boundary = Boundary::TwoSided { a0: sol.a0, b0: sol.b0 };
        let audit = perturbation_audit(&model, &utility, &boundary, 20, 1e-4, seed);
        prop_assert!(audit.max_improvement <= 1e-8, "{}", audit.max_improvement);
    }

    fn prices_outside_the_selected_range_do_not_matter(p in constant_model(), surcharge in 0.0..10.0f64) {
        let model = Arc::new(p);
        let sol = solve_x0_star(&model, Route::Power).unwrap();
        prop_assume!(sol.x0 < 1.0);
        let (simple, _) = build_tariff_const_h(model.clone(), &sol, false).unwrap();
        let (full, _) = build_tariff_const_h(model.clone(), &sol, true).unwrap();
        let base = principal_utility(&model, &simple).unwrap().principal_utility;
        prop_assert!((principal_utility(&model, &full).unwrap().principal_utility - base).abs() <= 1e-10 * base.abs().max(1.0));

        // A steeper top segment above every chosen consumption.
        let mut raised = simple.clone();
        for ti in 0..model.n_times() {
            let top = top_consumption(&model, &simple, ti, &linspace(sol.x0, 1.0, 200));
            let cut = 1.5 * top.max(1e-3);
            let at_cut = raised.price(ti, cut);
            let slope = raised.marginal_price(ti, cut) + surcharge + 1.0;
            raised.segments[ti].last_mut().unwrap().c_hi = cut;
            raised.segments[ti].push(TariffSegment { kind: SegmentKind::Linear, c_lo: cut, c_hi: f64::INFINITY, p1: 0.0, p2: slope, p3: at_cut - slope * cut });
        }
        let changed = principal_utility(&model, &raised).unwrap().principal_utility;
        prop_assert!((changed - base).abs() <= 1e-10 * base.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(config())]

    fn oracle_bounds_and_converges_to_the_optimum(p in constant_model()) {
        let sol = solve_x0_star(&p, Route::Power).unwrap();
        prop_assume!(sol.x0 < 1.0);
        let scale = sol.principal_utility.abs();
        let mut gaps = Vec::new();
        // Type cells and slope nodes refine together.
        for (cells, slopes) in [(25, 1001), (50, 2001), (100, 4001)] {
            let grid = oracle_slope_grid(&p, &sol, cells, slopes);
            let res = oracle_relaxed_maximize_const_h(&p, cells, &grid).unwrap();
            prop_assert!(res.value <= sol.principal_utility + 1e-3 * scale, "cells {}: {} > {}", cells, res.value, sol.principal_utility);
            gaps.push((res.value - sol.principal_utility).abs());
        }
        for w in gaps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "{:?}", gaps);
        }
    }
}

/// Every suite by name, for runners that report per suite.
pub const SUITES: &[(&str, fn())] = &[
    ("marginal_cost_strictly_increases", marginal_cost_strictly_increases),
    ("g_k_inverse_inverts_g_k", g_k_inverse_inverts_g_k),
    ("utility_is_increasing_concave_and_rising_in_type", utility_is_increasing_concave_and_rising_in_type),
    ("biconjugation_is_idempotent", biconjugation_is_idempotent),
    ("transforms_reverse_order", transforms_reverse_order),
    ("convex_nondecreasing_samples_are_u_convex", convex_nondecreasing_samples_are_u_convex),
    ("transformed_prices_rise_with_type", transformed_prices_rise_with_type),
    ("constant_outside_option_agent_invariants", constant_outside_option_agent_invariants),
    ("constant_outside_option_solver_invariants", constant_outside_option_solver_invariants),
    ("principal_loses_from_competition_and_cost", principal_loses_from_competition_and_cost),
    ("typed_outside_option_invariants", typed_outside_option_invariants),
    ("random_directions_never_improve_the_optimum", random_directions_never_improve_the_optimum),
    ("typed_optimum_survives_random_directions", typed_optimum_survives_random_directions),
    ("prices_outside_the_selected_range_do_not_matter", prices_outside_the_selected_range_do_not_matter),
    ("oracle_bounds_and_converges_to_the_optimum", oracle_bounds_and_converges_to_the_optimum),
];
