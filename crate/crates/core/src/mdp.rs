//! Per-epoch primitives of the semi-Markov decision problem for fixed
//! multipliers `(λ, c)`.
//!
//! With the waiting time eliminated by the water-filling rule, the value of
//! sending the next sample on route `r` after observing delay `y` is
//!
//! ```text
//! A(y, r) = K_r + μ_r·y − ((β_r − y)⁺)² / 2,    β_r = λ + c·E_max − μ_r,
//! K_r     = (c·G_r − λ − c·E_max)·μ_r + (μ_r² + σ_r²)/2 + c·C_s + G(r),
//! ```
//!
//! where `G(r)` is the relative expected action value of the route. Every
//! routine downstream works with this closed form.

use serde::{Deserialize, Serialize};

use crate::model::{DelayMarginal, NetworkSpec, RouteSpec};

/// Dinkelbach parameter `λ` and energy multiplier `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub c: f64,
}

impl Multipliers {
    pub fn new(lambda: f64, c: f64) -> Self {
        Self { lambda, c }
    }

    pub fn unconstrained(lambda: f64) -> Self {
        Self { lambda, c: 0.0 }
    }

    /// Water-filling level `λ + c·E_max`; the product is zero when `c = 0`,
    /// including for an unbounded budget.
    pub fn level(&self, energy_budget: f64) -> f64 {
        if self.c == 0.0 {
            self.lambda
        } else {
            self.lambda + self.c * energy_budget
        }
    }
}

/// `z*(y; r) = (λ + c·E_max − μ_r − y)⁺`.
pub fn optimal_wait(y: f64, route: &RouteSpec, m: Multipliers, energy_budget: f64) -> f64 {
    (m.level(energy_budget) - route.mean() - y).max(0.0)
}

/// Expected one-epoch Lagrangian cost of waiting `z` and then sending on
/// `route`, given the previous delay `y`.
pub fn stage_cost(y: f64, route: &RouteSpec, z: f64, m: Multipliers, energy_budget: f64, sampling_cost: f64) -> f64 {
    let mu = route.mean();
    let level = m.level(energy_budget);
    let energy = if m.c == 0.0 {
        0.0
    } else {
        m.c * route.energy_rate * mu + m.c * sampling_cost
    };
    0.5 * z * z + (y + mu - level) * z + (y - level) * mu + 0.5 * route.delay.second_moment() + energy
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RouteTerms {
    mean: f64,
    kink: f64,
    offset: f64,
}

/// The functions `y ↦ A(y, r)` for every route, for one `(λ, c)` and one
/// table of relative values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues {
    terms: Vec<RouteTerms>,
}

impl ActionValues {
    /// `relative[r]` is `G(r; λ, c)`.
    pub fn new(spec: &NetworkSpec, m: Multipliers, relative: &[f64]) -> Self {
        assert_eq!(relative.len(), spec.len(), "relative value table must cover every route");
        let e_max = spec.energy_budget();
        let level = m.level(e_max);
        let terms = spec
            .routes()
            .iter()
            .zip(relative)
            .map(|(route, &g)| {
                let mu = route.mean();
                let energy = if m.c == 0.0 {
                    0.0
                } else {
                    m.c * route.energy_rate * mu + m.c * spec.sampling_cost()
                };
                RouteTerms {
                    mean: mu,
                    kink: level - mu,
                    offset: energy - level * mu + 0.5 * route.delay.second_moment() + g,
                }
            })
            .collect();
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `A(y, r)`.
    pub fn value(&self, y: f64, r: usize) -> f64 {
        let t = &self.terms[r];
        let w = (t.kink - y).max(0.0);
        t.offset + t.mean * y - 0.5 * w * w
    }

    /// `β_r`: below it the optimal wait on `r` is positive.
    pub fn kink(&self, r: usize) -> f64 {
        self.terms[r].kink
    }

    pub fn mean(&self, r: usize) -> f64 {
        self.terms[r].mean
    }

    /// `A(·, r)` as a polynomial, valid on a panel lying entirely on one side
    /// of the kink. `below_kink` selects the side.
    pub(crate) fn polynomial(&self, r: usize, below_kink: bool) -> Quadratic {
        let t = &self.terms[r];
        if below_kink {
            // offset + μy − (β − y)²/2
            Quadratic::new(t.offset - 0.5 * t.kink * t.kink, t.mean + t.kink, -0.5)
        } else {
            Quadratic::new(t.offset, t.mean, 0.0)
        }
    }
}

/// `A(y, r)` for a single evaluation; prefer [`ActionValues`] in loops.
pub fn action_value(y: f64, r: usize, m: Multipliers, spec: &NetworkSpec, relative: &[f64]) -> f64 {
    ActionValues::new(spec, m, relative).value(y, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub value: f64,
    /// Set when `y` sits exactly on `λ + c·E_max − μ_r`; the value is then
    /// the right-hand derivative.
    pub at_breakpoint: bool,
}

/// `∂A(y, r)/∂y`: `λ + c·E_max − y` while waiting is optimal, `μ_r` after.
pub fn action_value_derivative(y: f64, route: &RouteSpec, m: Multipliers, energy_budget: f64) -> Derivative {
    let level = m.level(energy_budget);
    let mu = route.mean();
    let kink = level - mu;
    Derivative {
        value: if y < kink { level - y } else { mu },
        at_breakpoint: y == kink,
    }
}

/// `c0 + c1·y + c2·y²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Quadratic {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Quadratic {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Self { c0, c1, c2: 0.0 }
    }

    #[cfg(test)]
    pub fn eval(&self, y: f64) -> f64 {
        self.c0 + y * (self.c1 + y * self.c2)
    }

    pub fn add(self, o: Quadratic) -> Quadratic {
        Quadratic::new(self.c0 + o.c0, self.c1 + o.c1, self.c2 + o.c2)
    }

    pub fn scale(self, s: f64) -> Quadratic {
        Quadratic::new(self.c0 * s, self.c1 * s, self.c2 * s)
    }

    /// Product of two polynomials of degree at most one.
    pub fn mul_linear(self, o: Quadratic) -> Quadratic {
        debug_assert!(self.c2 == 0.0 && o.c2 == 0.0);
        Quadratic::new(self.c0 * o.c0, self.c0 * o.c1 + self.c1 * o.c0, self.c1 * o.c1)
    }

    /// `E[p(Y) · 1{lo ≤ Y < hi}]`.
    pub fn expect(&self, delay: &DelayMarginal, lo: f64, hi: f64) -> f64 {
        let mut total = self.c0 * delay.partial_moment(0, lo, hi);
        if self.c1 != 0.0 {
            total += self.c1 * delay.partial_moment(1, lo, hi);
        }
        if self.c2 != 0.0 {
            total += self.c2 * delay.partial_moment(2, lo, hi);
        }
        total
    }
}
