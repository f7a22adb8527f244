//! Nested bisection: `λ` inside, the energy multiplier `c` outside.
//!
//! For fixed `c`, `h(λ, c)` from the relative-value fixed point is
//! decreasing in `λ` and vanishes at the optimal Lagrangian value `λ_c`. The
//! outer loop searches for the smallest `c` whose policy meets the energy
//! budget, then randomises between the two boundary policies so the budget
//! holds with equality.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, RenewalRates};
use crate::mdp::Multipliers;
use crate::model::NetworkSpec;
use crate::policy::{MixedPolicy, ThresholdPolicy};
use crate::reavi::{reavi_fixed_point, ReavTable, ReaviError, Routing};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    NonConvergence(#[from] ReaviError),
    #[error("λ bracket [{lower}, {upper}] does not straddle the root at c = {c}: h = {h_lower} and {h_upper}")]
    BracketViolation {
        c: f64,
        lower: f64,
        upper: f64,
        h_lower: f64,
        h_upper: f64,
    },
    #[error("energy multiplier diverged: c = {c} still gives energy {energy} above the budget {budget}")]
    CDivergence { c: f64, energy: f64, budget: f64 },
    #[error("policy evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Stopping rules. `None` fields scale with the age upper bound `λᵘ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Width of the final `λ` bracket; default `1e-4·λᵘ`.
    pub lambda: Option<f64>,
    /// Width of the final `c` bracket.
    pub c: f64,
    /// Fixed-point residual; default `1e-8·λᵘ`.
    pub fixed_point: Option<f64>,
    pub max_fixed_point_iterations: usize,
    pub max_bisection_steps: usize,
    pub max_c_doublings: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            lambda: None,
            c: 1e-4,
            fixed_point: None,
            max_fixed_point_iterations: 10_000,
            max_bisection_steps: 200,
            max_c_doublings: 60,
        }
    }
}

impl SolverTolerances {
    pub fn lambda_for(&self, upper: f64) -> f64 {
        self.lambda.unwrap_or(1e-4 * upper)
    }

    pub fn fixed_point_for(&self, upper: f64) -> f64 {
        self.fixed_point.unwrap_or(1e-8 * upper)
    }
}

/// One evaluated energy multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub c: f64,
    /// Root `λ_c` of `h(·, c)`.
    pub lambda: f64,
    /// Exact average age of the policy built at `(λ_c, c)`.
    pub aoi: f64,
    /// Exact average energy of that policy.
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fixed_point_solves: usize,
    pub fixed_point_sweeps: usize,
    pub lambda_steps: usize,
    pub c_steps: usize,
    pub wall_time_secs: f64,
    /// Set when some evaluated route chain has several closed classes.
    pub reducible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Optimal average age `λ*`.
    pub lambda: f64,
    /// Energy multiplier `c*`, zero when the budget is slack.
    pub c: f64,
    /// Probability of running `policy.plus`.
    pub q: f64,
    pub policy: MixedPolicy,
    /// Exact average age and energy of the returned policy.
    pub aoi: f64,
    pub energy: f64,
    pub lambda_upper: f64,
    pub binding: bool,
    pub trace: Vec<TracePoint>,
    pub diagnostics: Diagnostics,
}

/// Age of a constant-wait policy drawing delays i.i.d. with the given mean
/// and variance, waiting just long enough to meet the budget.
fn constant_wait_age(mean: f64, var: f64, per_epoch: f64, e_max: f64) -> f64 {
    let wait = if per_epoch == 0.0 || e_max.is_infinite() {
        0.0
    } else if e_max == 0.0 {
        return f64::INFINITY;
    } else {
        (per_epoch / e_max - mean).max(0.0)
    };
    0.5 * (3.0 * mean + wait) + var / (2.0 * (mean + wait))
}

/// Age of the best constant-wait single-route policy meeting the budget.
///
/// Returns `+∞` when no persistent route can meet it.
pub fn lambda_upper(spec: &NetworkSpec) -> f64 {
    lambda_upper_for(spec, Routing::Optimal)
}

/// Upper bound on `λ*` within the policies allowed by `routing`.
///
/// A forced route rule ignores the observed delay, so its constant-wait
/// policy sees i.i.d. delays from the rule's route mixture.
pub fn lambda_upper_for(spec: &NetworkSpec, routing: Routing) -> f64 {
    let e_max = spec.energy_budget();
    match routing {
        Routing::Optimal => spec
            .routes()
            .iter()
            .filter(|r| r.is_persistent())
            .map(|r| {
                let per_epoch = spec.sampling_cost() + r.energy_rate * r.mean();
                constant_wait_age(r.mean(), r.variance(), per_epoch, e_max)
            })
            .fold(f64::INFINITY, f64::min),
        Routing::Forced(sel) => {
            let (mut m1, mut m2, mut per_epoch) = (0.0, 0.0, spec.sampling_cost());
            for (r, p) in sel.probabilities(spec).into_iter().enumerate() {
                let route = spec.route(r);
                m1 += p * route.mean();
                m2 += p * route.delay.second_moment();
                per_epoch += p * route.energy_rate * route.mean();
            }
            constant_wait_age(m1, m2 - m1 * m1, per_epoch, e_max)
        }
    }
}

struct Run<'a> {
    spec: &'a NetworkSpec,
    routing: Routing,
    tol: SolverTolerances,
    upper: f64,
    diag: Diagnostics,
    trace: Vec<TracePoint>,
}

/// Everything known about one multiplier `c`.
#[derive(Clone)]
struct Point {
    c: f64,
    lambda: f64,
    policy: ThresholdPolicy,
    rates: RenewalRates,
}

impl Run<'_> {
    fn fixed_point(&mut self, m: Multipliers) -> Result<ReavTable, SolveError> {
        let t = reavi_fixed_point(
            self.spec,
            m,
            self.routing,
            self.tol.fixed_point_for(self.upper),
            self.tol.max_fixed_point_iterations,
        )?;
        self.diag.fixed_point_solves += 1;
        self.diag.fixed_point_sweeps += t.iterations;
        Ok(t)
    }

    fn bisect_lambda(&mut self, c: f64) -> Result<ReavTable, SolveError> {
        let slack = 10.0 * self.tol.fixed_point_for(self.upper);
        let mut lo = 0.0;
        let mut h_lo = self.fixed_point(Multipliers::new(lo, c))?.h;
        if h_lo <= 0.0 && c > 0.0 {
            lo = -c * self.spec.energy_budget();
            h_lo = self.fixed_point(Multipliers::new(lo, c))?.h;
        }
        let hi_table = self.fixed_point(Multipliers::new(self.upper, c))?;
        if h_lo <= 0.0 || hi_table.h > slack {
            return Err(SolveError::BracketViolation {
                c,
                lower: lo,
                upper: self.upper,
                h_lower: h_lo,
                h_upper: hi_table.h,
            });
        }
        let mut hi = self.upper;
        let eps = self.tol.lambda_for(self.upper);
        let mut steps = 0;
        while hi - lo > eps && steps < self.tol.max_bisection_steps {
            let mid = 0.5 * (lo + hi);
            if self.fixed_point(Multipliers::new(mid, c))?.h > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            steps += 1;
        }
        self.diag.lambda_steps += steps;
        self.fixed_point(Multipliers::new(0.5 * (lo + hi), c))
    }

    fn at(&mut self, c: f64) -> Result<Point, SolveError> {
        let table = self.bisect_lambda(c)?;
        let policy = match self.routing {
            Routing::Optimal => ThresholdPolicy::from_table(self.spec, &table),
            Routing::Forced(sel) => ThresholdPolicy::forced(self.spec, table.multipliers, sel),
        };
        let rates = eval::renewal_rates(&policy, self.spec)?;
        self.diag.reducible |= rates.reducible();
        self.trace.push(TracePoint {
            c,
            lambda: table.multipliers.lambda,
            aoi: rates.aoi,
            energy: rates.energy,
        });
        Ok(Point {
            c,
            lambda: table.multipliers.lambda,
            policy,
            rates,
        })
    }
}

fn feasibility(spec: &NetworkSpec) -> Result<(), SolveError> {
    if spec.energy_budget() > 0.0 {
        return Ok(());
    }
    let free = spec
        .routes()
        .iter()
        .any(|r| r.is_persistent() && spec.sampling_cost() + r.energy_rate * r.mean() == 0.0);
    if free {
        Ok(())
    } else {
        Err(SolveError::Infeasible(
            "zero energy budget but every persistent route spends energy on each update".into(),
        ))
    }
}

/// Solves for the optimal policy with full route choice.
pub fn solve(spec: &NetworkSpec, tol: &SolverTolerances) -> Result<Solution, SolveError> {
    solve_with_routing(spec, Routing::Optimal, tol)
}

/// As [`solve`], but with the route choice restricted by `routing`.
pub fn solve_with_routing(spec: &NetworkSpec, routing: Routing, tol: &SolverTolerances) -> Result<Solution, SolveError> {
    let start = Instant::now();
    if routing == Routing::Optimal {
        feasibility(spec)?;
    }
    let upper = lambda_upper_for(spec, routing);
    if !upper.is_finite() {
        return Err(SolveError::Infeasible("no admissible route choice can meet the energy budget".into()));
    }
    let mut run = Run {
        spec,
        routing,
        tol: *tol,
        upper,
        diag: Diagnostics::default(),
        trace: Vec::new(),
    };
    let e_max = spec.energy_budget();
    let slack = run.at(0.0)?;
    let (minus, plus) = if slack.rates.energy <= e_max {
        (slack.clone(), slack)
    } else {
        let mut minus = slack;
        let mut c = 1.0;
        let mut doublings = 0;
        let mut plus = loop {
            let p = run.at(c)?;
            if p.rates.energy <= e_max {
                break p;
            }
            doublings += 1;
            if doublings > tol.max_c_doublings {
                return Err(SolveError::CDivergence {
                    c,
                    energy: p.rates.energy,
                    budget: e_max,
                });
            }
            minus = p;
            c *= 2.0;
        };
        let mut steps = 0;
        while plus.c - minus.c > tol.c && steps < tol.max_bisection_steps {
            let p = run.at(0.5 * (minus.c + plus.c))?;
            if p.rates.energy <= e_max {
                plus = p;
            } else {
                minus = p;
            }
            steps += 1;
        }
        run.diag.c_steps = steps;
        (minus, plus)
    };
    let gap = minus.rates.energy - plus.rates.energy;
    let q = if gap > 0.0 {
        ((minus.rates.energy - e_max) / gap).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let binding = plus.c > 0.0;
    let lambda = q * plus.lambda + (1.0 - q) * minus.lambda;
    let aoi = q * plus.rates.aoi + (1.0 - q) * minus.rates.aoi;
    let energy = q * plus.rates.energy + (1.0 - q) * minus.rates.energy;
    let mut diagnostics = run.diag;
    diagnostics.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(Solution {
        lambda,
        c: plus.c,
        q,
        policy: MixedPolicy::new(minus.policy, plus.policy, q),
        aoi,
        energy,
        lambda_upper: upper,
        binding,
        trace: run.trace,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, DelayMarginal, NetworkConfig, RouteConfig};

    fn spec(routes: &[(DelayMarginal, f64, f64)], c_s: f64, e_max: f64) -> NetworkSpec {
        validate(&NetworkConfig {
            routes: routes
                .iter()
                .map(|&(delay, p, g)| RouteConfig {
                    id: None,
                    delay,
                    availability: p,
                    energy_rate: g,
                })
                .collect(),
            sampling_cost: c_s,
            energy_budget: e_max,
            correlation: None,
        })
        .unwrap()
    }

    #[test]
    fn upper_bound_examples() {
        let d = DelayMarginal::Deterministic { value: 1.0 };
        assert!((lambda_upper(&spec(&[(d, 1.0, 0.0)], 0.0, f64::INFINITY)) - 1.5).abs() < 1e-12);
        // C_s = 1, E_max = 0.5: wait 1, age (3 + 1)/2 = 2.
        assert!((lambda_upper(&spec(&[(d, 1.0, 0.0)], 1.0, 0.5)) - 2.0).abs() < 1e-12);
        // Only intermittent routes are excluded.
        let s = spec(&[(d, 0.5, 0.0), (DelayMarginal::Deterministic { value: 2.0 }, 1.0, 0.0)], 0.0, f64::INFINITY);
        assert!((lambda_upper(&s) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_route_optimum() {
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0, 0.0)], 0.0, f64::INFINITY);
        let sol = solve(&s, &SolverTolerances::default()).unwrap();
        assert!((sol.lambda - 1.5).abs() < 1e-3, "{}", sol.lambda);
        assert!(!sol.binding);
        assert_eq!(sol.q, 1.0);
    }

    #[test]
    fn binding_budget_meets_energy_with_equality() {
        // Y ≡ 1, C_s = 1, E_max = 0.5: sample every 2 time units, age 2.
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0, 0.0)], 1.0, 0.5);
        let sol = solve(&s, &SolverTolerances::default()).unwrap();
        assert!(sol.binding);
        assert!((sol.energy - 0.5).abs() < 1e-6, "{}", sol.energy);
        assert!((sol.aoi - 2.0).abs() < 1e-3, "{}", sol.aoi);
        assert!((sol.lambda - 2.0).abs() < 1e-3, "{}", sol.lambda);
        for t in &sol.trace {
            let identity = t.aoi + t.c * (t.energy - 0.5);
            assert!((t.lambda - identity).abs() < 1e-3, "{t:?}");
        }
    }

    #[test]
    fn zero_budget_infeasible() {
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0, 0.0)], 1.0, 0.0);
        assert!(matches!(solve(&s, &SolverTolerances::default()), Err(SolveError::Infeasible(_))));
    }
}
