//! Relative value iteration over the previous-route state.
//!
//! The table `G(q; λ, c)` is indexed by the route used in the previous epoch.
//! Each sweep computes, for every `q`,
//!
//! ```text
//! G'(q) = −h + Σ_l P(l) · E_{Y∼Q_q}[ min_{r ∈ R(l)} A(Y, r) ]
//! ```
//!
//! with `h = Σ_l P(l) · min_{r ∈ R(l)} A(0, r)` evaluated at the previous
//! table. At the fixed point the sign of `h` tells whether `λ` sits above or
//! below the optimal average age.
//!
//! The inner minimum is a lower envelope of piecewise quadratics whose
//! breakpoints are the waiting kinks and the pairwise crossings. Between two
//! consecutive breakpoints a single route and a single polynomial apply, so
//! the expectation reduces to partial moments of the delay law.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ActionValues, Multipliers, Quadratic};
use crate::model::{availability_states, AvailabilityState, NetworkSpec};
use crate::policy::{argmin_route, pairwise_threshold, RouteSelector};

/// How the route is picked inside the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    /// Minimise over all available routes.
    Optimal,
    /// Always use the route picked by the selector; only the wait is optimised.
    Forced(RouteSelector),
}

/// A converged relative-value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReavTable {
    /// `G(q)` for each canonical route `q`.
    pub relative: Vec<f64>,
    /// `h(λ, c)`.
    pub h: f64,
    pub multipliers: Multipliers,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReaviError {
    #[error(
        "relative value iteration did not converge at λ = {lambda}, c = {c}: residual {last} after {} sweeps",
        residuals.len()
    )]
    NonConvergence {
        lambda: f64,
        c: f64,
        last: f64,
        /// Residual after every sweep.
        residuals: Vec<f64>,
    },
}

/// `(min_{r ∈ R(l)} A(y, r), argmin)`, ties to the larger index.
pub fn inner_min(y: f64, state: AvailabilityState, values: &ActionValues) -> (f64, usize) {
    argmin_route(y, state, values)
}

/// Piecewise-polynomial form of `y ↦ min_r A(y, r)` for every state.
struct Envelope {
    /// `0 = e_0 < e_1 < … < e_K < e_{K+1} = ∞`.
    edges: Vec<f64>,
    /// `(P(l), polynomial per panel)`.
    states: Vec<(f64, Vec<Quadratic>)>,
    /// `Σ_l P(l) · min_r A(0, r)`.
    h: f64,
}

impl Envelope {
    fn new(
        spec: &NetworkSpec,
        states: &[(AvailabilityState, f64)],
        values: &ActionValues,
        routing: Routing,
    ) -> Self {
        let n = values.len();
        let mut edges = vec![0.0];
        edges.extend((0..n).map(|r| values.kink(r)).filter(|&b| b > 0.0));
        if routing == Routing::Optimal {
            for a in 0..n {
                for b in a + 1..n {
                    if let Some(t) = pairwise_threshold(a, b, values) {
                        if t > 0.0 && t.is_finite() {
                            edges.push(t);
                        }
                    }
                }
            }
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        edges.push(f64::INFINITY);

        let mut h = 0.0;
        let states = states
            .iter()
            .map(|&(state, prob)| {
                let pick = |y: f64| match routing {
                    Routing::Optimal => inner_min(y, state, values).1,
                    Routing::Forced(sel) => sel.select(state, spec),
                };
                h += prob * values.value(0.0, pick(0.0));
                let polys = edges
                    .windows(2)
                    .map(|w| {
                        // Any interior point will do; stay near `lo` so huge
                        // panels are not classified where `A` has lost precision.
                        let y = w[0] + 0.5 * (w[1] - w[0]).min(1.0 + w[0]);
                        let r = pick(y);
                        values.polynomial(r, y < values.kink(r))
                    })
                    .collect();
                (prob, polys)
            })
            .collect();
        Self { edges, states, h }
    }

    /// `Σ_l P(l) · E_{Y∼Q_q}[min_r A(Y, r)]` for each `q`.
    fn expectations(&self, spec: &NetworkSpec) -> Vec<f64> {
        spec.routes()
            .iter()
            .map(|route| {
                let moments: Vec<[f64; 3]> = self
                    .edges
                    .windows(2)
                    .map(|w| {
                        let d = &route.delay;
                        [
                            d.partial_moment(0, w[0], w[1]),
                            d.partial_moment(1, w[0], w[1]),
                            d.partial_moment(2, w[0], w[1]),
                        ]
                    })
                    .collect();
                self.states
                    .iter()
                    .map(|(prob, polys)| {
                        prob * polys
                            .iter()
                            .zip(&moments)
                            .map(|(p, m)| {
                                // Skip zero-mass panels so unbounded polynomials cannot leak in.
                                if m[0] == 0.0 {
                                    0.0
                                } else {
                                    p.c0 * m[0] + p.c1 * m[1] + p.c2 * m[2]
                                }
                            })
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }
}

/// `E_{Y∼Q_q}[min_{r ∈ R(l)} A(Y, r)]` averaged over `l`, for a given table.
pub fn expected_min(q: usize, m: Multipliers, spec: &NetworkSpec, relative: &[f64], routing: Routing) -> f64 {
    let values = ActionValues::new(spec, m, relative);
    let states = availability_states(spec);
    Envelope::new(spec, &states, &values, routing).expectations(spec)[q]
}

/// `h(λ, c)` for a given table.
pub fn relative_gain(m: Multipliers, spec: &NetworkSpec, relative: &[f64], routing: Routing) -> f64 {
    let values = ActionValues::new(spec, m, relative);
    let states = availability_states(spec);
    Envelope::new(spec, &states, &values, routing).h
}

/// Iterates the relative-value map from `G ≡ 0` until both `h` and every
/// `G(q)` move by less than `tolerance` in one sweep.
pub fn reavi_fixed_point(
    spec: &NetworkSpec,
    m: Multipliers,
    routing: Routing,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ReavTable, ReaviError> {
    let states = availability_states(spec);
    let mut relative = vec![0.0; spec.len()];
    let mut envelope = Envelope::new(spec, &states, &ActionValues::new(spec, m, &relative), routing);
    let mut h = envelope.h;
    let mut residuals = Vec::new();
    for it in 1..=max_iterations {
        let next: Vec<f64> = envelope
            .expectations(spec)
            .into_iter()
            .map(|e| e - h)
            .collect();
        envelope = Envelope::new(spec, &states, &ActionValues::new(spec, m, &next), routing);
        let step = next
            .iter()
            .zip(&relative)
            .map(|(a, b)| (a - b).abs())
            .fold((envelope.h - h).abs(), f64::max);
        relative = next;
        h = envelope.h;
        residuals.push(step);
        if step < tolerance {
            return Ok(ReavTable {
                relative,
                h,
                multipliers: m,
                iterations: it,
                residual: step,
            });
        }
        if !step.is_finite() {
            break;
        }
    }
    Err(ReaviError::NonConvergence {
        lambda: m.lambda,
        c: m.c,
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{marginal_quadrature, validate, DelayMarginal, NetworkConfig, RouteConfig};
    use crate::quadrature::QuadTolerance;

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

    fn mixed() -> NetworkSpec {
        spec(&[
            (DelayMarginal::log_normal_from_moments(2.4, 0.7), 1.0),
            (DelayMarginal::gamma_from_moments(1.2, 3.0), 0.6),
            (DelayMarginal::gamma_from_moments(0.7, 3.4), 0.5),
        ])
    }

    #[test]
    fn envelope_expectation_matches_quadrature() {
        let s = mixed();
        let m = Multipliers::unconstrained(3.0);
        let g = [0.4, -0.3, 0.9];
        let values = ActionValues::new(&s, m, &g);
        let states = availability_states(&s);
        let tol = QuadTolerance {
            relative: 1e-11,
            absolute: 1e-13,
            max_subdivisions: 4000,
        };
        let mut kinks: Vec<f64> = (0..3).map(|r| values.kink(r)).filter(|&b| b > 0.0).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                kinks.extend(pairwise_threshold(a, b, &values));
            }
        }
        kinks.sort_by(f64::total_cmp);
        for q in 0..3 {
            let exact = expected_min(q, m, &s, &g, Routing::Optimal);
            let mut oracle = 0.0;
            for &(state, p) in &states {
                let f = |y: f64| inner_min(y, state, &values).0;
                oracle += p * marginal_quadrature(&s.route(q).delay, f, &kinks, &tol, 1e-14).unwrap();
            }
            assert!((exact - oracle).abs() < 1e-7 * oracle.abs().max(1.0), "q={q}: {exact} vs {oracle}");
        }
    }

    #[test]
    fn fixed_point_equation_holds() {
        let s = mixed();
        let m = Multipliers::unconstrained(2.5);
        let t = reavi_fixed_point(&s, m, Routing::Optimal, 1e-11, 10_000).unwrap();
        for q in 0..3 {
            let rhs = expected_min(q, m, &s, &t.relative, Routing::Optimal) - t.h;
            assert!((rhs - t.relative[q]).abs() < 1e-9);
        }
        assert!((relative_gain(m, &s, &t.relative, Routing::Optimal) - t.h).abs() < 1e-9);
    }

    #[test]
    fn deterministic_single_route_gain() {
        // Y ≡ 1 has optimal average age 1.5.
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0)]);
        let h = |lambda| {
            reavi_fixed_point(&s, Multipliers::unconstrained(lambda), Routing::Optimal, 1e-12, 100)
                .unwrap()
                .h
        };
        assert!(h(1.4) > 0.0);
        assert!(h(1.6) < 0.0);
        assert!(h(1.5).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_reports_trajectory() {
        let s = mixed();
        let err = reavi_fixed_point(&s, Multipliers::unconstrained(3.0), Routing::Optimal, 1e-300, 5).unwrap_err();
        let ReaviError::NonConvergence { residuals, .. } = err;
        assert_eq!(residuals.len(), 5);
    }

    #[test]
    fn equal_means_converge() {
        let s = spec(&[
            (DelayMarginal::log_normal_from_moments(3.4, 1.0), 1.0),
            (DelayMarginal::gamma_from_moments(3.4, 5.0), 1.0),
        ]);
        let t = reavi_fixed_point(&s, Multipliers::unconstrained(3.9353), Routing::Optimal, 1e-9, 1000).unwrap();
        assert!(t.iterations < 50);
    }
}
