//! Exact long-run rates of a threshold policy.
//!
//! Under a stationary threshold policy the route used in each epoch forms a
//! Markov chain: the next route depends only on the delay just observed,
//! whose law is fixed by the previous route. Per-epoch area, duration and
//! energy are polynomials in that delay on each panel of the policy, so every
//! expectation is a sum of partial moments. The long-run age and energy then
//! follow from the renewal-reward ratio under the stationary distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Quadratic;
use crate::model::{availability_states, NetworkSpec};
use crate::policy::{MixedPolicy, ThresholdPolicy};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("policy covers {policy} routes but the network has {network}")]
    RouteCount { policy: usize, network: usize },
    #[error("policy has no rule for availability state {0}")]
    MissingState(String),
    #[error("singular linear system while computing the stationary distribution")]
    Singular,
}

/// Long-run behaviour of one deterministic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalRates {
    /// Time-average age of information.
    pub aoi: f64,
    /// Time-average energy per unit time.
    pub energy: f64,
    /// Mean epoch duration `E[Z + Y']`.
    pub epoch_length: f64,
    /// Long-run fraction of epochs on each canonical route.
    pub route_frequency: Vec<f64>,
    /// `P(next route = b | previous route = a)`.
    pub transition: Vec<Vec<f64>>,
    /// Number of closed communicating classes; more than one means the rates
    /// depend on the starting state.
    pub closed_classes: usize,
}

impl RenewalRates {
    pub fn reducible(&self) -> bool {
        self.closed_classes > 1
    }
}

/// Per previous route: transition row and expected area, duration, energy.
struct EpochMoments {
    transition: Vec<f64>,
    area: f64,
    duration: f64,
    energy: f64,
}

fn epoch_moments(policy: &ThresholdPolicy, spec: &NetworkSpec) -> Result<Vec<EpochMoments>, EvalError> {
    let n = spec.len();
    if policy.num_routes() != n {
        return Err(EvalError::RouteCount {
            policy: policy.num_routes(),
            network: n,
        });
    }
    let states = availability_states(spec);
    let mut out: Vec<EpochMoments> = (0..n)
        .map(|_| EpochMoments {
            transition: vec![0.0; n],
            area: 0.0,
            duration: 0.0,
            energy: 0.0,
        })
        .collect();
    for &(state, prob) in &states {
        let rule = policy
            .rule(state)
            .ok_or_else(|| EvalError::MissingState(state.to_bits(n)))?;
        for (k, &a) in rule.routes.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { rule.thresholds[k - 1] };
            let hi = rule.thresholds.get(k).copied().unwrap_or(f64::INFINITY);
            if hi <= lo {
                continue;
            }
            let route = spec.route(a);
            let (mu, s2) = (route.mean(), route.delay.second_moment());
            let energy = spec.sampling_cost() + route.energy_rate * mu;
            let level = rule.levels[k];
            let y = Quadratic::linear(0.0, 1.0);
            let mut pieces = Vec::with_capacity(2);
            if level > lo {
                pieces.push((lo, level.min(hi), Quadratic::linear(level, -1.0)));
            }
            if level < hi {
                pieces.push((level.max(lo), hi, Quadratic::default()));
            }
            for (plo, phi, z) in pieces {
                let span = z.add(Quadratic::linear(mu, 0.0));
                let area = y
                    .mul_linear(span)
                    .add(z.mul_linear(z).add(z.scale(2.0 * mu)).add(Quadratic::linear(s2, 0.0)).scale(0.5));
                for (q, acc) in out.iter_mut().enumerate() {
                    let d = &spec.route(q).delay;
                    let mass = d.partial_moment(0, plo, phi);
                    if mass == 0.0 {
                        continue;
                    }
                    acc.transition[a] += prob * mass;
                    acc.area += prob * area.expect(d, plo, phi);
                    acc.duration += prob * span.expect(d, plo, phi);
                    acc.energy += prob * energy * mass;
                }
            }
        }
    }
    Ok(out)
}

/// `P(a → b)`: probability that route `b` follows route `a`.
pub fn route_transition_matrix(policy: &ThresholdPolicy, spec: &NetworkSpec) -> Result<Vec<Vec<f64>>, EvalError> {
    Ok(epoch_moments(policy, spec)?
        .into_iter()
        .map(|m| m.transition)
        .collect())
}

/// Distribution of the first route, chosen after a zero initial delay.
fn initial_routes(policy: &ThresholdPolicy, spec: &NetworkSpec) -> Vec<f64> {
    let mut init = vec![0.0; spec.len()];
    for (state, prob) in availability_states(spec) {
        let (r, _) = policy.decide(0.0, state);
        init[r] += prob;
    }
    init
}

/// Strongly connected components that no edge leaves.
fn closed_classes(p: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = p.len();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if p[i][j] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &class {
            seen[j] = true;
        }
        let closed = class
            .iter()
            .all(|&a| (0..n).all(|b| !reach[a][b] || class.contains(&b)));
        if closed {
            classes.push(class);
        }
    }
    classes
}

fn class_stationary(p: &[Vec<f64>], class: &[usize]) -> Result<Vec<f64>, EvalError> {
    let m = class.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| p[class[j]][class[i]] - if i == j { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    b[m - 1] = 1.0;
    a.lu().solve(&b).map(|v| v.iter().copied().collect()).ok_or(EvalError::Singular)
}

/// Long-run route frequencies started from `init`, plus the closed class count.
fn limiting_distribution(p: &[Vec<f64>], init: &[f64]) -> Result<(Vec<f64>, usize), EvalError> {
    let n = p.len();
    let classes = closed_classes(p);
    let recurrent: Vec<bool> = (0..n).map(|i| classes.iter().any(|c| c.contains(&i))).collect();
    let transient: Vec<usize> = (0..n).filter(|&i| !recurrent[i]).collect();
    let t = transient.len();
    // (I − P_TT) is shared by every absorption system.
    let lu = (t > 0).then(|| {
        DMatrix::from_fn(t, t, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - p[transient[i]][transient[j]]
        })
        .lu()
    });
    let mut pi = vec![0.0; n];
    for class in &classes {
        let mut weight: f64 = class.iter().map(|&i| init[i]).sum();
        if let Some(lu) = &lu {
            let rhs = DVector::from_fn(t, |i, _| class.iter().map(|&j| p[transient[i]][j]).sum());
            let absorb = lu.solve(&rhs).ok_or(EvalError::Singular)?;
            weight += transient.iter().zip(absorb.iter()).map(|(&i, &x)| init[i] * x).sum::<f64>();
        }
        for (&i, s) in class.iter().zip(class_stationary(p, class)?) {
            pi[i] += weight * s;
        }
    }
    Ok((pi, classes.len()))
}

/// Exact time-average age and energy of a deterministic threshold policy.
pub fn renewal_rates(policy: &ThresholdPolicy, spec: &NetworkSpec) -> Result<RenewalRates, EvalError> {
    let moments = epoch_moments(policy, spec)?;
    let transition: Vec<Vec<f64>> = moments.iter().map(|m| m.transition.clone()).collect();
    let (pi, closed) = limiting_distribution(&transition, &initial_routes(policy, spec))?;
    let (mut area, mut duration, mut energy) = (0.0, 0.0, 0.0);
    for (w, m) in pi.iter().zip(&moments) {
        area += w * m.area;
        duration += w * m.duration;
        energy += w * m.energy;
    }
    Ok(RenewalRates {
        aoi: area / duration,
        energy: energy / duration,
        epoch_length: duration,
        route_frequency: pi,
        transition,
        closed_classes: closed,
    })
}

/// Rates of a per-trajectory randomisation between two policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedRates {
    pub aoi: f64,
    pub energy: f64,
    pub q: f64,
    pub minus: RenewalRates,
    pub plus: RenewalRates,
}

/// Each trajectory commits to one policy, so the long-run rates average with
/// weight `q`.
pub fn mixed_rates(policy: &MixedPolicy, spec: &NetworkSpec) -> Result<MixedRates, EvalError> {
    let minus = renewal_rates(&policy.minus, spec)?;
    let plus = renewal_rates(&policy.plus, spec)?;
    let q = policy.q;
    Ok(MixedRates {
        aoi: q * plus.aoi + (1.0 - q) * minus.aoi,
        energy: q * plus.energy + (1.0 - q) * minus.energy,
        q,
        minus,
        plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Multipliers;
    use crate::model::{validate, DelayMarginal, NetworkConfig, RouteConfig};
    use crate::policy::RouteSelector;

    fn spec(routes: &[(DelayMarginal, f64, f64)], c_s: f64) -> NetworkSpec {
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
            energy_budget: f64::INFINITY,
            correlation: None,
        })
        .unwrap()
    }

    #[test]
    fn zero_wait_single_route_closed_form() {
        // E[(2Y + Y')Y'/2] / E[Y'] = (μ² + E[Y²]/2)/μ.
        let d = DelayMarginal::gamma_from_moments(1.2, 3.0);
        let s = spec(&[(d, 1.0, 2.0)], 1.5);
        let p = ThresholdPolicy::zero_wait(&s, RouteSelector::MinMean);
        let r = renewal_rates(&p, &s).unwrap();
        let mu = 1.2;
        let expected = (mu * mu + 0.5 * d.second_moment()) / mu;
        assert!((r.aoi - expected).abs() < 1e-10);
        assert!((r.energy - (1.5 + 2.0 * mu) / mu).abs() < 1e-10);
        assert!(!r.reducible());
    }

    #[test]
    fn deterministic_with_wait() {
        // Y ≡ 1 at λ = 1.5: the wait vanishes and each unit cycle has area 3/2.
        let s = spec(&[(DelayMarginal::Deterministic { value: 1.0 }, 1.0, 0.0)], 0.0);
        let p = ThresholdPolicy::forced(&s, Multipliers::unconstrained(1.5), RouteSelector::MinMean);
        let r = renewal_rates(&p, &s).unwrap();
        assert!((r.aoi - 1.5).abs() < 1e-12);
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let s = spec(
            &[
                (DelayMarginal::log_normal_from_moments(2.4, 0.7), 1.0, 0.0),
                (DelayMarginal::gamma_from_moments(1.2, 3.0), 0.5, 0.0),
                (DelayMarginal::gamma_from_moments(0.7, 3.4), 0.3, 0.0),
            ],
            0.0,
        );
        let p = ThresholdPolicy::zero_wait(&s, RouteSelector::MinVariance);
        let m = route_transition_matrix(&p, &s).unwrap();
        for row in &m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let r = renewal_rates(&p, &s).unwrap();
        assert!((r.route_frequency.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reducible_chain_uses_absorption() {
        // Two absorbing states reached from a transient start with weights 0.3 / 0.7.
        let p = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.3, 0.7, 0.0]];
        let (pi, closed) = limiting_distribution(&p, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(closed, 2);
        assert!((pi[0] - 0.3).abs() < 1e-12 && (pi[1] - 0.7).abs() < 1e-12 && pi[2] == 0.0);
    }
}
