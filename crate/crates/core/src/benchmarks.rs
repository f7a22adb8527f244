//! Reference policies that fix the route choice by a simple rule.
//!
//! * `mad-*`: minimum average delay among the available routes.
//! * `mdv-*`: minimum delay variance among the available routes.
//! * `*-opt`: water-filling wait tuned for that route rule.
//! * `*-zw`: transmit immediately after every delivery.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{AvailabilityState, NetworkSpec};
use crate::policy::{MixedPolicy, ThresholdPolicy};
use crate::reavi::Routing;
use crate::solver::{solve, solve_with_routing, Solution, SolveError, SolverTolerances};

pub use crate::policy::RouteSelector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Optimal,
    MadOpt,
    MadZw,
    MdvOpt,
    MdvZw,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Optimal,
        PolicyKind::MadOpt,
        PolicyKind::MadZw,
        PolicyKind::MdvOpt,
        PolicyKind::MdvZw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Optimal => "optimal",
            PolicyKind::MadOpt => "mad-opt",
            PolicyKind::MadZw => "mad-zw",
            PolicyKind::MdvOpt => "mdv-opt",
            PolicyKind::MdvZw => "mdv-zw",
        }
    }

    fn selector(self) -> Option<RouteSelector> {
        match self {
            PolicyKind::Optimal => None,
            PolicyKind::MadOpt | PolicyKind::MadZw => Some(RouteSelector::MinMean),
            PolicyKind::MdvOpt | PolicyKind::MdvZw => Some(RouteSelector::MinVariance),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown policy `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Zero-wait minimum-mean decision: `(route, 0)`.
pub fn mad_zw_decide(_y: f64, state: AvailabilityState, spec: &NetworkSpec) -> (usize, f64) {
    (RouteSelector::MinMean.select(state, spec), 0.0)
}

/// Closed-form average age of the zero-wait minimum-mean policy.
///
/// The route choice ignores the observed delay, so epochs draw i.i.d. delays
/// from the mixture that uses route `i` with probability
/// `p_i · Π_{k>i} (1 − p_k)`.
pub fn mad_zw_age(spec: &NetworkSpec) -> f64 {
    let mut weight_after = 1.0;
    let (mut m1, mut m2) = (0.0, 0.0);
    for route in spec.routes().iter().rev() {
        let pi = route.availability * weight_after;
        m1 += pi * route.mean();
        m2 += pi * route.delay.second_moment();
        weight_after *= 1.0 - route.availability;
    }
    m1 + m2 / (2.0 * m1)
}

/// Optimal waiting for a fixed route rule, with the same energy handling as
/// the full solver.
pub fn fixed_route_optimal_wait(
    selector: RouteSelector,
    spec: &NetworkSpec,
    tol: &SolverTolerances,
) -> Result<Solution, SolveError> {
    solve_with_routing(spec, Routing::Forced(selector), tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub kind: PolicyKind,
    pub policy: MixedPolicy,
    /// Solver value `λ*`; zero-wait policies are not optimised and have none.
    pub lambda: Option<f64>,
    /// Full solver output for the optimised variants.
    pub solution: Option<Solution>,
}

/// Builds the named policy for `spec`.
pub fn benchmark(kind: PolicyKind, spec: &NetworkSpec, tol: &SolverTolerances) -> Result<Benchmark, SolveError> {
    let solution = match kind {
        PolicyKind::Optimal => Some(solve(spec, tol)?),
        PolicyKind::MadOpt | PolicyKind::MdvOpt => {
            Some(fixed_route_optimal_wait(kind.selector().expect("route rule"), spec, tol)?)
        }
        PolicyKind::MadZw | PolicyKind::MdvZw => None,
    };
    Ok(match solution {
        Some(s) => Benchmark {
            kind,
            policy: s.policy.clone(),
            lambda: Some(s.lambda),
            solution: Some(s),
        },
        None => Benchmark {
            kind,
            policy: MixedPolicy::pure(ThresholdPolicy::zero_wait(spec, kind.selector().expect("route rule"))),
            lambda: None,
            solution: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::renewal_rates;
    use crate::model::{validate, DelayMarginal, NetworkConfig, RouteConfig};

    fn spec(routes: &[(DelayMarginal, f64)]) -> NetworkSpec {
        validate(&NetworkConfig {
            routes: routes
                .iter()
                .map(|&(delay, p)| RouteConfig {
                    id: None,
                    delay,
                    availability: p,
                    energy_rate: 0.0,
                })
                .collect(),
            sampling_cost: 0.0,
            energy_budget: f64::INFINITY,
            correlation: None,
        })
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("fastest".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn closed_form_matches_exact_evaluation() {
        let s = spec(&[
            (DelayMarginal::gamma_from_moments(6.0, 2.0), 1.0),
            (DelayMarginal::log_normal_from_moments(5.0, 4.0), 0.5),
            (DelayMarginal::gamma_from_moments(3.0, 7.0), 0.5),
        ]);
        let p = ThresholdPolicy::zero_wait(&s, RouteSelector::MinMean);
        let exact = renewal_rates(&p, &s).unwrap().aoi;
        assert!((mad_zw_age(&s) - exact).abs() < 1e-9 * exact);
        let probs = RouteSelector::MinMean.probabilities(&s);
        assert!((probs[2] - 0.5).abs() < 1e-12 && (probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_wait_has_no_lambda() {
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0)]);
        let b = benchmark(PolicyKind::MdvZw, &s, &SolverTolerances::default()).unwrap();
        assert!(b.lambda.is_none());
        assert_eq!(mad_zw_decide(3.0, AvailabilityState::ALL_AVAILABLE, &s), (0, 0.0));
    }
}
