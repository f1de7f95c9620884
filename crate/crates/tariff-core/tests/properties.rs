//! Randomized invariant suites: 100 parameter draws per property.

include!("suite/properties.rs");

macro_rules! tests {
    ($($name:ident),* $(,)?) => {
        mod suite {
            $(
                #[test]
                fn $name() {
                    super::$name()
                }
            )*
        }
    };
}

tests!(
    marginal_cost_strictly_increases,
    g_k_inverse_inverts_g_k,
    utility_is_increasing_concave_and_rising_in_type,
    biconjugation_is_idempotent,
    transforms_reverse_order,
    convex_nondecreasing_samples_are_u_convex,
    transformed_prices_rise_with_type,
    constant_outside_option_agent_invariants,
    constant_outside_option_solver_invariants,
    principal_loses_from_competition_and_cost,
    typed_outside_option_invariants,
    random_directions_never_improve_the_optimum,
    typed_optimum_survives_random_directions,
    prices_outside_the_selected_range_do_not_matter,
    oracle_bounds_and_converges_to_the_optimum,
);
