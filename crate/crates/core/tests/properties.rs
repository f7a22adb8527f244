mod common;

use proptest::prelude::*;
use routeage::eval::{renewal_rates, route_transition_matrix};
use routeage::mdp::{ActionValues, Multipliers};
use routeage::model::{availability_states, NetworkSpec, RouteConfig};
use routeage::policy::{argmin_route, pairwise_table, RouteSelector, ThresholdPolicy};
use routeage::reavi::{reavi_fixed_point, ReavTable, Routing};
use routeage::sim::{simulate, SimOptions};
use routeage::solver::{solve, SolverTolerances};

use common::{delay, network, route};

fn route_strategy() -> impl Strategy<Value = RouteConfig> {
    (0u8..3, 0.3f64..5.0, 0.05f64..4.0, 0.2f64..1.0, 0.0f64..2.0)
        .prop_map(|(f, mean, std, p, g)| route(delay(f, mean, std), p, g))
}

/// One to four routes, the one at `anchor` always available.
fn spec_strategy(budget: bool) -> impl Strategy<Value = NetworkSpec> {
    (
        prop::collection::vec(route_strategy(), 1..=4),
        any::<prop::sample::Index>(),
        0.0f64..1.0,
        0.5f64..5.0,
    )
        .prop_map(move |(mut routes, anchor, cs, e)| {
            let k = anchor.index(routes.len());
            routes[k].availability = 1.0;
            network(routes, cs, if budget { e } else { f64::INFINITY })
        })
}

fn table(m: Multipliers, relative: Vec<f64>) -> ReavTable {
    ReavTable {
        relative,
        h: 0.0,
        multipliers: m,
        iterations: 0,
        residual: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thresholds_reproduce_the_pointwise_argmin(
        spec in spec_strategy(true),
        lambda in 0.0f64..15.0,
        c in 0.0f64..2.0,
        offsets in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let m = Multipliers::new(lambda, c);
        let relative = offsets[..spec.len()].to_vec();
        let values = ActionValues::new(&spec, m, &relative);
        let policy = ThresholdPolicy::from_table(&spec, &table(m, relative));
        for (state, _) in availability_states(&spec) {
            for i in 0..400 {
                let y = i as f64 * 0.05;
                let (best, _) = argmin_route(y, state, &values);
                let (r, wait) = policy.decide(y, state);
                prop_assert!(state.is_available(r));
                let scale = 1.0 + best.abs();
                prop_assert!(values.value(y, r) <= best + 1e-9 * scale, "y {y}: route {r} is not a minimiser");
                prop_assert!((wait - (values.kink(r) - y).max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn routing_is_monotone_in_the_observed_delay(
        spec in spec_strategy(false),
        lambda in 0.0f64..15.0,
        offsets in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let m = Multipliers::unconstrained(lambda);
        let policy = ThresholdPolicy::from_table(&spec, &table(m, offsets[..spec.len()].to_vec()));
        for rule in policy.rules() {
            prop_assert!(rule.thresholds.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(rule.routes.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(rule.levels.windows(2).all(|w| w[0] < w[1]) || spec.len() == 1);
            prop_assert!(rule.thresholds.len() < rule.state.available(spec.len()).count());
        }
        prop_assert!(policy.unique_pairwise_thresholds() <= spec.len() * (spec.len() - 1) / 2);
    }

    #[test]
    fn pairwise_threshold_is_the_first_crossing(
        spec in spec_strategy(false),
        lambda in 0.0f64..15.0,
        offsets in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let m = Multipliers::unconstrained(lambda);
        let values = ActionValues::new(&spec, m, &offsets[..spec.len()]);
        for e in pairwise_table(&values) {
            let diff = |y: f64| values.value(y, e.a) - values.value(y, e.b);
            match e.tau {
                Some(t) => {
                    prop_assert!(t >= 0.0);
                    prop_assert!(diff(t) >= -1e-9 * (1.0 + t * t));
                    if t > 1e-9 {
                        prop_assert!(diff(t * (1.0 - 1e-6) - 1e-9) < 1e-9 * (1.0 + t * t));
                    }
                }
                None => {
                    let negative_at_zero = diff(0.0) < 0.0;
                    prop_assert!(!negative_at_zero || diff(1e6) < 0.0);
                }
            }
        }
    }

    #[test]
    fn transition_rows_are_distributions(spec in spec_strategy(false), selector in 0u8..3) {
        let tol = SolverTolerances::default();
        let policy = match selector {
            0 => ThresholdPolicy::zero_wait(&spec, RouteSelector::MinMean),
            1 => ThresholdPolicy::zero_wait(&spec, RouteSelector::MinVariance),
            _ => solve(&spec, &tol).unwrap().policy.plus,
        };
        for row in route_transition_matrix(&policy, &spec).unwrap() {
            prop_assert!(row.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let rates = renewal_rates(&policy, &spec).unwrap();
        prop_assert!((rates.route_frequency.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn optimal_age_does_not_increase_with_budget(spec in spec_strategy(true), extra in 0.1f64..3.0) {
        let tol = SolverTolerances::default();
        let Ok(tight) = solve(&spec, &tol) else { return Ok(()) };
        let loose = solve(&spec.with_energy_budget(spec.energy_budget() + extra).unwrap(), &tol).unwrap();
        let slack = 2.0 * tol.lambda_for(tight.lambda_upper) + 1e-6 * tight.lambda;
        prop_assert!(loose.lambda <= tight.lambda + slack, "{} > {}", loose.lambda, tight.lambda);
        prop_assert!(tight.energy <= spec.energy_budget() * (1.0 + 1e-3) + 1e-9);
    }

    #[test]
    fn optimum_lies_between_zero_and_the_upper_bound(spec in spec_strategy(false)) {
        let sol = solve(&spec, &SolverTolerances::default()).unwrap();
        prop_assert!(sol.lambda >= 0.0 && sol.lambda <= sol.lambda_upper * (1.0 + 1e-9));
        let exact = renewal_rates(&sol.policy.plus, &spec).unwrap().aoi;
        prop_assert!((exact - sol.lambda).abs() <= 1e-3 * sol.lambda, "eval {exact} vs solver {}", sol.lambda);
    }

    #[test]
    fn simulation_agrees_with_exact_evaluation(spec in spec_strategy(false), seed in any::<u64>()) {
        let sol = solve(&spec, &SolverTolerances::default()).unwrap();
        let exact = renewal_rates(&sol.policy.plus, &spec).unwrap().aoi;
        let t = simulate(&sol.policy.plus, &spec, &SimOptions::new(200_000, seed));
        prop_assert!((t.aoi - exact).abs() <= 5.0 * t.aoi_se + 1e-3 * exact, "sim {} ± {} vs {exact}", t.aoi, t.aoi_se);
    }

    #[test]
    fn fixed_point_matches_its_own_equation(spec in spec_strategy(false), lambda in 0.5f64..10.0) {
        let m = Multipliers::unconstrained(lambda);
        let t = reavi_fixed_point(&spec, m, Routing::Optimal, 1e-10, 100_000).unwrap();
        let next = routeage::reavi::relative_gain(m, &spec, &t.relative, Routing::Optimal);
        prop_assert!((next - t.h).abs() < 1e-6 * (1.0 + t.h.abs()));
    }
}
