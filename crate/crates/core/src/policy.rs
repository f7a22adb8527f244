//! Threshold extraction and the executable policy.
//!
//! For a fixed table of relative values, `A(y, a) − A(y, b)` with `a < b`
//! (so `μ_a ≥ μ_b`) is non-decreasing in `y`, piecewise quadratic with kinks
//! at `β_a ≤ β_b`. Its sign change `τ_{a,b}` is found in closed form. The
//! per-state routing step function then follows from the pairwise table by
//! walking up the route indices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{ActionValues, Multipliers};
use crate::model::{availability_states, AvailabilityState, NetworkSpec};
use crate::reavi::ReavTable;

/// Crossing point of `A(·, a)` and `A(·, b)` for canonical `a < b`.
///
/// Returns the smallest `y ≥ 0` with `A(y, a) ≥ A(y, b)`, provided route `a`
/// is strictly preferred at `y = 0`; `None` when `b` is at least as good from
/// the start or `a` stays ahead forever.
///
/// # Panics
///
/// If `a >= b`.
pub fn pairwise_threshold(a: usize, b: usize, values: &ActionValues) -> Option<f64> {
    assert!(a < b, "pairwise threshold needs a < b in canonical order (got {a}, {b})");
    let diff = |y: f64| values.value(y, a) - values.value(y, b);
    if diff(0.0) >= 0.0 {
        return None;
    }
    let dmu = values.mean(a) - values.mean(b);
    let (ka, kb) = (values.kink(a), values.kink(b));
    // Quadratic piece on [max(0, β_a), β_b): diff = d_a + (y − β_a)²/2.
    if kb > 0.0 && diff(kb) >= 0.0 {
        let d_a = diff(ka.max(0.0)) - 0.5 * (ka.max(0.0) - ka).powi(2);
        let root = ka + (-2.0 * d_a).max(0.0).sqrt();
        return Some(root.clamp(ka.max(0.0), kb));
    }
    // Linear piece beyond both kinks: diff = diff(start) + dmu·(y − start).
    if dmu <= 0.0 {
        return None;
    }
    let start = kb.max(0.0);
    Some(start - diff(start) / dmu)
}

/// One `τ_{a,b}` entry (canonical 0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairThreshold {
    pub a: usize,
    pub b: usize,
    pub tau: Option<f64>,
}

/// All `τ_{a,b}` for `a < b`.
pub fn pairwise_table(values: &ActionValues) -> Vec<PairThreshold> {
    let n = values.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            out.push(PairThreshold {
                a,
                b,
                tau: pairwise_threshold(a, b, values),
            });
        }
    }
    out
}

fn lookup(table: &[PairThreshold], n: usize, a: usize, b: usize) -> Option<f64> {
    // Row-major upper triangle.
    let idx = a * n - a * (a + 1) / 2 + (b - a - 1);
    let e = &table[idx];
    debug_assert!(e.a == a && e.b == b);
    e.tau
}

/// Route minimising `A(y, ·)` over the available routes; ties go to the
/// larger index.
pub fn argmin_route(y: f64, state: AvailabilityState, values: &ActionValues) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for r in state.available(values.len()) {
        let v = values.value(y, r);
        if v <= best.0 {
            best = (v, r);
        }
    }
    best
}

/// Routing step function and waiting levels for one availability state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRule {
    pub state: AvailabilityState,
    /// `τ_1 < … < τ_K`.
    pub thresholds: Vec<f64>,
    /// `a_1 < … < a_{K+1}`, canonical 0-based.
    pub routes: Vec<usize>,
    /// `β_k`: after choosing `a_k`, wait until the age reaches this level.
    pub levels: Vec<f64>,
}

impl StateRule {
    /// Segment index for observed delay `y`.
    fn segment(&self, y: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= y)
    }

    pub fn decide(&self, y: f64) -> (usize, f64) {
        let k = self.segment(y);
        (self.routes[k], (self.levels[k] - y).max(0.0))
    }
}

/// Route-threshold construction for one state, walking the pairwise table.
///
/// Returns `(thresholds, routes)`. Missing `τ` entries count as `+∞`; ties
/// between candidates go to the larger index.
pub fn build_thresholds(
    state: AvailabilityState,
    values: &ActionValues,
    pairwise: &[PairThreshold],
) -> (Vec<f64>, Vec<usize>) {
    let n = values.len();
    let (_, first) = argmin_route(0.0, state, values);
    let last = state.available(n).last().expect("non-empty availability set");
    let mut routes = vec![first];
    let mut thresholds = Vec::new();
    let mut current = first;
    while current != last {
        let mut next: Option<(f64, usize)> = None;
        for r in state.available(n).filter(|&r| r > current) {
            if let Some(t) = lookup(pairwise, n, current, r) {
                if next.is_none_or(|(best, _)| t <= best) {
                    next = Some((t, r));
                }
            }
        }
        let Some((tau, r)) = next else { break };
        match thresholds.last() {
            // A crossing at or below the previous one replaces that segment.
            Some(&prev) if tau <= prev => {
                routes.pop();
                thresholds.pop();
                if let Some(&p) = thresholds.last() {
                    debug_assert!(tau >= p);
                }
            }
            _ => {}
        }
        thresholds.push(tau);
        routes.push(r);
        current = r;
    }
    (thresholds, routes)
}

/// Route selection rules used by the fixed-route benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteSelector {
    /// Largest available canonical index, i.e. minimum mean delay.
    MinMean,
    /// Minimum delay variance; ties to the smaller mean, then the smaller id.
    MinVariance,
}

impl RouteSelector {
    pub fn select(self, state: AvailabilityState, spec: &NetworkSpec) -> usize {
        let n = spec.len();
        match self {
            RouteSelector::MinMean => state.available(n).last().expect("non-empty availability set"),
            RouteSelector::MinVariance => state
                .available(n)
                .min_by(|&a, &b| {
                    let (ra, rb) = (spec.route(a), spec.route(b));
                    ra.variance()
                        .total_cmp(&rb.variance())
                        .then(ra.mean().total_cmp(&rb.mean()))
                        .then(ra.id.cmp(&rb.id))
                })
                .expect("non-empty availability set"),
        }
    }

    /// Probability that each canonical route is picked.
    pub fn probabilities(self, spec: &NetworkSpec) -> Vec<f64> {
        let mut out = vec![0.0; spec.len()];
        for (state, p) in availability_states(spec) {
            out[self.select(state, spec)] += p;
        }
        out
    }
}

/// A stationary deterministic policy: per availability state, a routing step
/// function of the observed delay and a water-filling waiting rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyRepr", try_from = "PolicyRepr")]
pub struct ThresholdPolicy {
    multipliers: Multipliers,
    route_ids: Vec<usize>,
    pairwise: Vec<PairThreshold>,
    rules: Vec<StateRule>,
    index: Vec<Option<u32>>,
}

impl ThresholdPolicy {
    fn assemble(
        spec: &NetworkSpec,
        multipliers: Multipliers,
        pairwise: Vec<PairThreshold>,
        rules: Vec<StateRule>,
    ) -> Self {
        let n = spec.len();
        let mut index = vec![None; 1 << n];
        for (i, rule) in rules.iter().enumerate() {
            index[rule.state.0 as usize] = Some(i as u32);
        }
        Self {
            multipliers,
            route_ids: spec.permutation(),
            pairwise,
            rules,
            index,
        }
    }

    /// The optimal threshold policy induced by a converged relative-value table.
    pub fn from_table(spec: &NetworkSpec, table: &ReavTable) -> Self {
        let m = table.multipliers;
        let values = ActionValues::new(spec, m, &table.relative);
        let pairwise = pairwise_table(&values);
        let rules = availability_states(spec)
            .into_iter()
            .map(|(state, _)| {
                let (thresholds, routes) = build_thresholds(state, &values, &pairwise);
                let levels = routes.iter().map(|&r| values.kink(r)).collect();
                StateRule {
                    state,
                    thresholds,
                    routes,
                    levels,
                }
            })
            .collect();
        Self::assemble(spec, m, pairwise, rules)
    }

    /// Fixed route choice per state with the water-filling wait for `m`.
    pub fn forced(spec: &NetworkSpec, m: Multipliers, selector: RouteSelector) -> Self {
        let level = m.level(spec.energy_budget());
        Self::single_route(spec, m, selector, |r| level - spec.route(r).mean())
    }

    /// Fixed route choice per state, never waiting.
    pub fn zero_wait(spec: &NetworkSpec, selector: RouteSelector) -> Self {
        Self::single_route(spec, Multipliers::unconstrained(0.0), selector, |_| 0.0)
    }

    fn single_route(
        spec: &NetworkSpec,
        m: Multipliers,
        selector: RouteSelector,
        level: impl Fn(usize) -> f64,
    ) -> Self {
        let rules = availability_states(spec)
            .into_iter()
            .map(|(state, _)| {
                let r = selector.select(state, spec);
                StateRule {
                    state,
                    thresholds: Vec::new(),
                    routes: vec![r],
                    levels: vec![level(r)],
                }
            })
            .collect();
        Self::assemble(spec, m, Vec::new(), rules)
    }

    pub fn multipliers(&self) -> Multipliers {
        self.multipliers
    }

    pub fn num_routes(&self) -> usize {
        self.route_ids.len()
    }

    pub fn rules(&self) -> &[StateRule] {
        &self.rules
    }

    pub fn rule(&self, state: AvailabilityState) -> Option<&StateRule> {
        self.index
            .get(state.0 as usize)
            .copied()
            .flatten()
            .map(|i| &self.rules[i as usize])
    }

    pub fn pairwise(&self) -> &[PairThreshold] {
        &self.pairwise
    }

    /// Distinct finite `τ_{a,b}` values in the pairwise table.
    pub fn unique_pairwise_thresholds(&self) -> usize {
        let mut taus: Vec<f64> = self.pairwise.iter().filter_map(|p| p.tau).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        taus.len()
    }

    /// `(route, wait)` after observing delay `y` in availability state `state`.
    ///
    /// # Panics
    ///
    /// If `state` has zero probability under the instance the policy was built for.
    pub fn decide(&self, y: f64, state: AvailabilityState) -> (usize, f64) {
        self.rule(state)
            .unwrap_or_else(|| panic!("availability state {:b} is not covered by the policy", state.0))
            .decide(y)
    }
}

/// Randomisation between the two boundary policies of the energy bisection:
/// each trajectory runs `plus` with probability `q`, otherwise `minus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPolicy {
    pub minus: ThresholdPolicy,
    pub plus: ThresholdPolicy,
    pub q: f64,
}

impl MixedPolicy {
    pub fn new(minus: ThresholdPolicy, plus: ThresholdPolicy, q: f64) -> Self {
        assert!((0.0..=1.0).contains(&q), "mixing probability {q} outside [0, 1]");
        Self { minus, plus, q }
    }

    /// A degenerate mixture that always runs `policy`.
    pub fn pure(policy: ThresholdPolicy) -> Self {
        Self {
            minus: policy.clone(),
            plus: policy,
            q: 1.0,
        }
    }

    /// One Bernoulli draw: the policy a new trajectory follows.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> &ThresholdPolicy {
        if self.q >= 1.0 || (self.q > 0.0 && rng.random::<f64>() < self.q) {
            &self.plus
        } else {
            &self.minus
        }
    }
}

/// Deployment export; routes are reported 1-based in canonical order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyRepr {
    lambda: f64,
    c: f64,
    /// Configuration id of each canonical route.
    route_ids: Vec<usize>,
    pairwise: Vec<PairRepr>,
    states: Vec<StateRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairRepr {
    a: usize,
    b: usize,
    tau: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRepr {
    /// `1` marks an unavailable route, in canonical order.
    unavailable: String,
    thresholds: Vec<f64>,
    routes: Vec<usize>,
    levels: Vec<f64>,
}

impl From<ThresholdPolicy> for PolicyRepr {
    fn from(p: ThresholdPolicy) -> Self {
        let n = p.route_ids.len();
        PolicyRepr {
            lambda: p.multipliers.lambda,
            c: p.multipliers.c,
            pairwise: p
                .pairwise
                .iter()
                .map(|e| PairRepr {
                    a: e.a + 1,
                    b: e.b + 1,
                    tau: e.tau,
                })
                .collect(),
            states: p
                .rules
                .iter()
                .map(|r| StateRepr {
                    unavailable: r.state.to_bits(n),
                    thresholds: r.thresholds.clone(),
                    routes: r.routes.iter().map(|&k| k + 1).collect(),
                    levels: r.levels.clone(),
                })
                .collect(),
            route_ids: p.route_ids,
        }
    }
}

impl TryFrom<PolicyRepr> for ThresholdPolicy {
    type Error = String;

    fn try_from(r: PolicyRepr) -> Result<Self, String> {
        let n = r.route_ids.len();
        if n == 0 || n > crate::model::MAX_ROUTES {
            return Err(format!("unsupported route count {n}"));
        }
        let mut rules = Vec::with_capacity(r.states.len());
        for s in r.states {
            if s.unavailable.len() != n || !s.unavailable.chars().all(|c| c == '0' || c == '1') {
                return Err(format!("bad availability pattern `{}`", s.unavailable));
            }
            let flags: Vec<bool> = s.unavailable.chars().map(|c| c == '0').collect();
            if s.routes.len() != s.thresholds.len() + 1 || s.levels.len() != s.routes.len() {
                return Err("each state needs one more route than thresholds and one level per route".into());
            }
            if s.routes.iter().any(|&k| k == 0 || k > n || !flags[k - 1]) {
                return Err(format!("state `{}` routes to an unavailable or unknown route", s.unavailable));
            }
            rules.push(StateRule {
                state: AvailabilityState::from_available(&flags),
                thresholds: s.thresholds,
                routes: s.routes.iter().map(|k| k - 1).collect(),
                levels: s.levels,
            });
        }
        let mut index = vec![None; 1 << n];
        for (i, rule) in rules.iter().enumerate() {
            index[rule.state.0 as usize] = Some(i as u32);
        }
        Ok(ThresholdPolicy {
            multipliers: Multipliers::new(r.lambda, r.c),
            route_ids: r.route_ids,
            pairwise: r
                .pairwise
                .into_iter()
                .map(|e| PairThreshold {
                    a: e.a - 1,
                    b: e.b - 1,
                    tau: e.tau,
                })
                .collect(),
            rules,
            index,
        })
    }
}
