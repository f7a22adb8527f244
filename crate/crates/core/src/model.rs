//! Problem instances: delay marginals, routes, availability and the delay copula.
//!
//! A [`NetworkConfig`] is what users write in JSON. [`validate`] turns it into a
//! [`NetworkSpec`] whose routes are in canonical order: mean delay
//! non-increasing, ties broken by ascending variance and then by id. Every
//! other module indexes routes by their position in that order (0-based).

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use thiserror::Error;

use crate::quadrature::{self, QuadTolerance, QuadratureError};

/// Largest supported route count; availability states are enumerated.
pub const MAX_ROUTES: usize = 16;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("route list is empty")]
    EmptyRoutes,
    #[error("no persistent route: at least one route needs availability 1")]
    NoPersistentRoute,
    #[error("too many routes ({0}); at most {MAX_ROUTES} are supported")]
    TooManyRoutes(usize),
    #[error("route {id}: {reason}")]
    InvalidRoute { id: usize, reason: String },
    #[error("route {id}: delay moments are not finite")]
    NonFiniteMoments { id: usize },
    #[error("duplicate route id {0}")]
    DuplicateId(usize),
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("invalid {field}: {value}")]
    InvalidScalar { field: &'static str, value: f64 },
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Marginal law of a route's transmission delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
#[serde(try_from = "DelayConfig")]
pub enum DelayMarginal {
    /// `ln Y ~ N(log_mean, log_std²)`.
    LogNormal { log_mean: f64, log_std: f64 },
    /// Shape/scale parameterisation, density `y^(shape-1) e^(-y/scale)`.
    Gamma { shape: f64, scale: f64 },
    /// Point mass at `value`.
    Deterministic { value: f64 },
}

/// Accepted JSON forms of a delay law: native parameters or `mean`/`std`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayConfig {
    family: String,
    mean: Option<f64>,
    std: Option<f64>,
    log_mean: Option<f64>,
    log_std: Option<f64>,
    shape: Option<f64>,
    scale: Option<f64>,
    value: Option<f64>,
}

impl TryFrom<DelayConfig> for DelayMarginal {
    type Error = String;

    fn try_from(c: DelayConfig) -> Result<Self, String> {
        let by_moments = match (c.mean, c.std) {
            (Some(m), Some(s)) => Some((m, s)),
            (None, None) => None,
            _ => return Err("`mean` and `std` must be given together".into()),
        };
        let d = match (c.family.as_str(), by_moments) {
            ("log-normal" | "lognormal", Some((m, s))) => DelayMarginal::log_normal_from_moments(m, s),
            ("log-normal" | "lognormal", None) => DelayMarginal::LogNormal {
                log_mean: c.log_mean.ok_or("missing `log_mean`")?,
                log_std: c.log_std.ok_or("missing `log_std`")?,
            },
            ("gamma", Some((m, s))) => DelayMarginal::gamma_from_moments(m, s),
            ("gamma", None) => DelayMarginal::Gamma {
                shape: c.shape.ok_or("missing `shape`")?,
                scale: c.scale.ok_or("missing `scale`")?,
            },
            ("deterministic", Some((m, s))) if s == 0.0 => DelayMarginal::Deterministic { value: m },
            ("deterministic", Some(_)) => return Err("deterministic delay needs std = 0".into()),
            ("deterministic", None) => DelayMarginal::Deterministic {
                value: c.value.or(c.mean).ok_or("missing `value`")?,
            },
            (other, _) => return Err(format!("unknown delay family `{other}`")),
        };
        Ok(d)
    }
}

impl DelayMarginal {
    /// Log-normal with the given mean and standard deviation. A zero standard
    /// deviation degenerates to a point mass.
    pub fn log_normal_from_moments(mean: f64, std: f64) -> Self {
        if std == 0.0 {
            return DelayMarginal::Deterministic { value: mean };
        }
        let log_var = (1.0 + (std / mean).powi(2)).ln();
        DelayMarginal::LogNormal {
            log_mean: mean.ln() - 0.5 * log_var,
            log_std: log_var.sqrt(),
        }
    }

    /// Gamma with the given mean and standard deviation. A zero standard
    /// deviation degenerates to a point mass.
    pub fn gamma_from_moments(mean: f64, std: f64) -> Self {
        if std == 0.0 {
            return DelayMarginal::Deterministic { value: mean };
        }
        DelayMarginal::Gamma {
            shape: (mean / std).powi(2),
            scale: std * std / mean,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => (log_mean + 0.5 * log_std * log_std).exp(),
            DelayMarginal::Gamma { shape, scale } => shape * scale,
            DelayMarginal::Deterministic { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => {
                let s2 = log_std * log_std;
                s2.exp_m1() * (2.0 * log_mean + s2).exp()
            }
            DelayMarginal::Gamma { shape, scale } => shape * scale * scale,
            DelayMarginal::Deterministic { .. } => 0.0,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `E[Y²] = μ² + σ²`.
    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        m * m + self.variance()
    }

    fn check(&self) -> Result<(), String> {
        let ok = match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => log_mean.is_finite() && log_std.is_finite() && log_std > 0.0,
            DelayMarginal::Gamma { shape, scale } => shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0,
            DelayMarginal::Deterministic { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid delay parameters {self:?}"))
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.partial_moment(0, 0.0, y)
    }

    pub fn survival(&self, y: f64) -> f64 {
        self.partial_moment(0, y, f64::INFINITY)
    }

    /// Density at `y` (zero for the point mass).
    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => {
                let u = (y.ln() - log_mean) / log_std;
                (-0.5 * u * u).exp() / (y * log_std * (2.0 * std::f64::consts::PI).sqrt())
            }
            DelayMarginal::Gamma { shape, scale } => {
                let x = y / scale;
                ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp() / scale
            }
            DelayMarginal::Deterministic { .. } => 0.0,
        }
    }

    /// `E[Y^k · 1{lo ≤ Y < hi}]` for `k ∈ {0, 1, 2}`, in closed form.
    ///
    /// `hi` may be `f64::INFINITY`. Each family chooses between the lower and
    /// upper tail representation to avoid cancellation.
    pub fn partial_moment(&self, k: u8, lo: f64, hi: f64) -> f64 {
        debug_assert!(k <= 2);
        let lo = lo.max(0.0);
        if !(hi > lo) {
            return 0.0;
        }
        match *self {
            DelayMarginal::Deterministic { value } => {
                if lo <= value && value < hi {
                    value.powi(k as i32)
                } else {
                    0.0
                }
            }
            DelayMarginal::Gamma { shape, scale } => {
                let kf = k as f64;
                let factor = match k {
                    0 => 1.0,
                    1 => shape * scale,
                    _ => shape * (shape + 1.0) * scale * scale,
                };
                let a = shape + kf;
                let x_lo = lo / scale;
                let x_hi = hi / scale;
                let p_hi = if !hi.is_finite() {
                    1.0
                } else if x_hi > 0.0 {
                    gamma_lr(a, x_hi)
                } else {
                    0.0
                };
                let mass = if p_hi <= 0.5 {
                    let p_lo = if x_lo > 0.0 { gamma_lr(a, x_lo) } else { 0.0 };
                    p_hi - p_lo
                } else {
                    let q_lo = if x_lo > 0.0 { gamma_ur(a, x_lo) } else { 1.0 };
                    let q_hi = if !hi.is_finite() {
                        0.0
                    } else if x_hi > 0.0 {
                        gamma_ur(a, x_hi)
                    } else {
                        1.0
                    };
                    q_lo - q_hi
                };
                factor * mass.max(0.0)
            }
            DelayMarginal::LogNormal { log_mean, log_std } => {
                let kf = k as f64;
                let factor = (kf * log_mean + 0.5 * kf * kf * log_std * log_std).exp();
                let shift = log_mean + kf * log_std * log_std;
                let z = |y: f64| {
                    if y <= 0.0 {
                        f64::NEG_INFINITY
                    } else if y.is_infinite() {
                        f64::INFINITY
                    } else {
                        (y.ln() - shift) / log_std
                    }
                };
                let (z_lo, z_hi) = (z(lo), z(hi));
                let mass = if z_hi <= 0.0 {
                    normal_cdf(z_hi) - normal_cdf(z_lo)
                } else {
                    normal_cdf(-z_lo) - normal_cdf(-z_hi)
                };
                factor * mass.max(0.0)
            }
        }
    }

    /// Quantile at the standard-normal score `z`, i.e. `F⁻¹(Φ(z))`.
    ///
    /// Used by the Gaussian copula; working from the score keeps both tails
    /// accurate.
    pub fn quantile_from_normal(&self, z: f64) -> f64 {
        match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => (log_mean + log_std * z).exp(),
            DelayMarginal::Deterministic { value } => value,
            DelayMarginal::Gamma { shape, scale } => scale * standard_gamma_quantile(shape, z),
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            DelayMarginal::LogNormal { log_mean, log_std } => {
                Sampler::LogNormal(rand_distr::LogNormal::new(log_mean, log_std).expect("validated"))
            }
            DelayMarginal::Gamma { shape, scale } => Sampler::Gamma(rand_distr::Gamma::new(shape, scale).expect("validated")),
            DelayMarginal::Deterministic { value } => Sampler::Point(value),
        }
    }
}

/// Solves `P(shape, x) = Φ(z)` for the unit-scale gamma law.
fn standard_gamma_quantile(shape: f64, z: f64) -> f64 {
    // Work on the smaller tail, in t = ln x, with a bracketed Newton iteration.
    let lower_tail = z <= 0.0;
    let target = if lower_tail { normal_cdf(z) } else { normal_cdf(-z) };
    if target <= 0.0 {
        return if lower_tail { 0.0 } else { f64::INFINITY };
    }
    let ln_target = target.ln();
    let lg = ln_gamma(shape);
    // g(t) is increasing in t for both tails after the sign flip.
    let g = |t: f64| {
        let x = t.exp();
        if lower_tail {
            gamma_lr(shape, x).ln() - ln_target
        } else {
            ln_target - gamma_ur(shape, x).ln()
        }
    };
    let dg = |t: f64| {
        let x = t.exp();
        let xpdf = (shape * t - x - lg).exp();
        if lower_tail {
            xpdf / gamma_lr(shape, x)
        } else {
            xpdf / gamma_ur(shape, x)
        }
    };
    let mut t = shape.ln();
    let (mut lo, mut hi) = (t, t);
    let mut step = 1.0;
    while g(lo) > 0.0 {
        lo -= step;
        step *= 2.0;
    }
    step = 1.0;
    while g(hi) < 0.0 {
        hi += step;
        step *= 2.0;
    }
    t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gt = g(t);
        if gt == 0.0 {
            break;
        }
        if gt < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let d = dg(t);
        let mut next = t - gt / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-14 * t.abs().max(1.0) || hi - lo <= 1e-14 * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    t.exp()
}

#[derive(Debug, Clone)]
enum Sampler {
    LogNormal(rand_distr::LogNormal<f64>),
    Gamma(rand_distr::Gamma<f64>),
    Point(f64),
}

impl Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Point(v) => *v,
        }
    }
}

/// One route of a validated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    /// 1-based id as given in the configuration.
    pub id: usize,
    pub delay: DelayMarginal,
    /// Probability the route is usable at a decision epoch.
    pub availability: f64,
    /// Energy per unit time while the route carries a packet.
    pub energy_rate: f64,
}

impl RouteSpec {
    pub fn mean(&self) -> f64 {
        self.delay.mean()
    }

    pub fn variance(&self) -> f64 {
        self.delay.variance()
    }

    pub fn is_persistent(&self) -> bool {
        self.availability == 1.0
    }
}

/// Route as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    /// Defaults to the 1-based position in the list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<usize>,
    pub delay: DelayMarginal,
    #[serde(default = "one")]
    pub availability: f64,
    #[serde(default)]
    pub energy_rate: f64,
}

fn one() -> f64 {
    1.0
}

/// Problem instance as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub routes: Vec<RouteConfig>,
    #[serde(default)]
    pub sampling_cost: f64,
    /// Long-run average energy budget; absent, `null` or `"inf"` means unconstrained.
    #[serde(default = "unbounded", with = "budget_serde")]
    pub energy_budget: f64,
    /// Correlation of the Gaussian copula over route delays, in the order of `routes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
}

fn unbounded() -> f64 {
    f64::INFINITY
}

mod budget_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
        Null(()),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None | Some(Raw::Null(())) => Ok(f64::INFINITY),
            Some(Raw::Num(v)) => Ok(v),
            Some(Raw::Text(t)) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "unbounded" => Ok(f64::INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid energy budget `{other}`"))),
            },
        }
    }
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Validated copula correlation with a square-root factor `L`, `L·Lᵀ = C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Correlation {
    fn new(matrix: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = matrix.nrows();
        for i in 0..n {
            if (matrix[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(ModelError::InvalidCorrelation(format!("diagonal entry {} is not 1", i + 1)));
            }
            for j in 0..n {
                let v = matrix[(i, j)];
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(ModelError::InvalidCorrelation(format!("entry ({}, {}) = {v} outside [-1, 1]", i + 1, j + 1)));
                }
                if (v - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(ModelError::InvalidCorrelation("matrix is not symmetric".into()));
                }
            }
        }
        let eig = matrix.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(ModelError::InvalidCorrelation(format!("not positive semidefinite (eigenvalue {min:.3e})")));
        }
        let mut factor = eig.eigenvectors.clone();
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        Ok(Self { matrix, factor })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// A validated problem instance in canonical route order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    routes: Vec<RouteSpec>,
    sampling_cost: f64,
    energy_budget: f64,
    correlation: Option<Correlation>,
}

impl NetworkSpec {
    pub fn routes(&self) -> &[RouteSpec] {
        &self.routes
    }

    pub fn route(&self, r: usize) -> &RouteSpec {
        &self.routes[r]
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    /// Sampling cost `C_s`.
    pub fn sampling_cost(&self) -> f64 {
        self.sampling_cost
    }

    /// Energy budget `E_max`; `f64::INFINITY` when unconstrained.
    pub fn energy_budget(&self) -> f64 {
        self.energy_budget
    }

    pub fn is_energy_constrained(&self) -> bool {
        self.energy_budget.is_finite()
    }

    pub fn correlation(&self) -> Option<&Correlation> {
        self.correlation.as_ref()
    }

    /// Original ids in canonical order: `permutation()[r]` is the id of canonical route `r`.
    pub fn permutation(&self) -> Vec<usize> {
        self.routes.iter().map(|r| r.id).collect()
    }

    /// Copy of this instance with a different energy budget.
    pub fn with_energy_budget(&self, budget: f64) -> Result<Self, ModelError> {
        check_budget(budget)?;
        Ok(Self {
            energy_budget: budget,
            ..self.clone()
        })
    }

    /// Converts back to a configuration (canonical order, canonical parameters).
    pub fn to_config(&self) -> NetworkConfig {
        NetworkConfig {
            routes: self
                .routes
                .iter()
                .map(|r| RouteConfig {
                    id: Some(r.id),
                    delay: r.delay,
                    availability: r.availability,
                    energy_rate: r.energy_rate,
                })
                .collect(),
            sampling_cost: self.sampling_cost,
            energy_budget: self.energy_budget,
            correlation: self.correlation.as_ref().map(|c| {
                (0..c.dim()).map(|i| (0..c.dim()).map(|j| c.get(i, j)).collect()).collect()
            }),
        }
    }
}

fn check_budget(budget: f64) -> Result<(), ModelError> {
    // A zero budget is admitted here so the solver can report it as infeasible.
    if budget.is_nan() || budget < 0.0 {
        return Err(ModelError::InvalidScalar {
            field: "energy_budget",
            value: budget,
        });
    }
    Ok(())
}

/// Validates a configuration and puts its routes in canonical order.
pub fn validate(config: &NetworkConfig) -> Result<NetworkSpec, ModelError> {
    let n = config.routes.len();
    if n == 0 {
        return Err(ModelError::EmptyRoutes);
    }
    if n > MAX_ROUTES {
        return Err(ModelError::TooManyRoutes(n));
    }
    if !(config.sampling_cost.is_finite() && config.sampling_cost >= 0.0) {
        return Err(ModelError::InvalidScalar {
            field: "sampling_cost",
            value: config.sampling_cost,
        });
    }
    check_budget(config.energy_budget)?;

    let mut routes = Vec::with_capacity(n);
    for (pos, rc) in config.routes.iter().enumerate() {
        let id = rc.id.unwrap_or(pos + 1);
        if routes.iter().any(|r: &RouteSpec| r.id == id) {
            return Err(ModelError::DuplicateId(id));
        }
        rc.delay
            .check()
            .map_err(|reason| ModelError::InvalidRoute { id, reason })?;
        if !(0.0..=1.0).contains(&rc.availability) {
            return Err(ModelError::InvalidRoute {
                id,
                reason: format!("availability {} outside [0, 1]", rc.availability),
            });
        }
        if !(rc.energy_rate.is_finite() && rc.energy_rate >= 0.0) {
            return Err(ModelError::InvalidRoute {
                id,
                reason: format!("energy rate {} must be finite and non-negative", rc.energy_rate),
            });
        }
        let route = RouteSpec {
            id,
            delay: rc.delay,
            availability: rc.availability,
            energy_rate: rc.energy_rate,
        };
        if !(route.mean().is_finite() && route.variance().is_finite()) {
            return Err(ModelError::NonFiniteMoments { id });
        }
        routes.push(route);
    }
    if !routes.iter().any(RouteSpec::is_persistent) {
        return Err(ModelError::NoPersistentRoute);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&routes[a], &routes[b]);
        rb.mean()
            .total_cmp(&ra.mean())
            .then(ra.variance().total_cmp(&rb.variance()))
            .then(ra.id.cmp(&rb.id))
    });

    let correlation = match &config.correlation {
        None => None,
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(ModelError::InvalidCorrelation(format!("expected a {n}x{n} matrix")));
            }
            let m = DMatrix::from_fn(n, n, |i, j| rows[order[i]][order[j]]);
            Some(Correlation::new(m)?)
        }
    };
    let routes = order.iter().map(|&i| routes[i].clone()).collect();
    Ok(NetworkSpec {
        routes,
        sampling_cost: config.sampling_cost,
        energy_budget: config.energy_budget,
        correlation,
    })
}

/// Availability vector `l`: bit `k` set means canonical route `k` is unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AvailabilityState(pub u32);

impl AvailabilityState {
    pub const ALL_AVAILABLE: AvailabilityState = AvailabilityState(0);

    /// From per-route flags, `true` meaning available.
    pub fn from_available(flags: &[bool]) -> Self {
        let mut bits = 0;
        for (k, &on) in flags.iter().enumerate() {
            if !on {
                bits |= 1 << k;
            }
        }
        AvailabilityState(bits)
    }

    pub fn is_available(self, route: usize) -> bool {
        self.0 & (1 << route) == 0
    }

    /// Available routes in increasing canonical index.
    pub fn available(self, n: usize) -> impl Iterator<Item = usize> {
        (0..n).filter(move |&k| self.is_available(k))
    }

    /// `l` as a 0/1 string in route order, e.g. `"010"`.
    pub fn to_bits(self, n: usize) -> String {
        (0..n).map(|k| if self.is_available(k) { '0' } else { '1' }).collect()
    }
}

/// All availability states with positive probability, with their probabilities.
///
/// States are listed in increasing bit-pattern order.
pub fn availability_states(spec: &NetworkSpec) -> Vec<(AvailabilityState, f64)> {
    let n = spec.len();
    let mut out = Vec::new();
    'states: for bits in 0u32..(1u32 << n) {
        let mut prob = 1.0;
        for (k, route) in spec.routes().iter().enumerate() {
            let off = bits & (1 << k) != 0;
            let p = route.availability;
            let factor = if off { 1.0 - p } else { p };
            if factor == 0.0 {
                continue 'states;
            }
            prob *= factor;
        }
        out.push((AvailabilityState(bits), prob));
    }
    out
}

/// `∫₀^∞ f(y) Q(dy)` by adaptive quadrature split at `breakpoints`.
///
/// Continuous families are integrated over `t = ln y`, which tames both the
/// log-normal tail and the gamma singularity at zero for shape < 1. The range
/// is truncated where either tail mass drops below `tail`.
pub fn marginal_quadrature<F: Fn(f64) -> f64>(
    delay: &DelayMarginal,
    f: F,
    breakpoints: &[f64],
    tol: &QuadTolerance,
    tail: f64,
) -> Result<f64, QuadratureError> {
    let weight: Box<dyn Fn(f64) -> f64> = match *delay {
        DelayMarginal::Deterministic { value } => return Ok(f(value)),
        DelayMarginal::LogNormal { log_mean, log_std } => Box::new(move |t: f64| {
            let u = (t - log_mean) / log_std;
            (-0.5 * u * u).exp() / (log_std * (2.0 * std::f64::consts::PI).sqrt())
        }),
        DelayMarginal::Gamma { shape, scale } => {
            let c = ln_gamma(shape) + shape * scale.ln();
            Box::new(move |t: f64| (shape * t - t.exp() / scale - c).exp())
        }
    };
    let t_lo = tail_point(|t| delay.cdf(t.exp()) - tail, delay.mean().ln(), -1.0);
    let t_hi = tail_point(|t| delay.survival(t.exp()) - tail, delay.mean().ln(), 1.0);
    let mut points = vec![t_lo, t_hi];
    points.extend(
        breakpoints
            .iter()
            .filter(|&&b| b > 0.0 && b.is_finite())
            .map(|b| b.ln())
            .filter(|&t| t > t_lo && t < t_hi),
    );
    points.sort_by(f64::total_cmp);
    points.dedup();
    let est = quadrature::integrate_pieces(|t| f(t.exp()) * weight(t), &points, tol)?;
    Ok(est.value)
}

/// Walks from `start` in direction `dir` until `g` changes sign, then bisects.
/// `g` must be negative far out in `dir` and positive at `start` or nearby.
fn tail_point<G: Fn(f64) -> f64>(g: G, start: f64, dir: f64) -> f64 {
    let mut inner = start;
    let mut step = 1.0;
    let mut outer = start + dir * step;
    while g(outer) > 0.0 {
        inner = outer;
        step *= 2.0;
        outer = start + dir * step;
        if step > 4096.0 {
            break;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (inner + outer);
        if g(mid) > 0.0 {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    outer
}

/// Draws joint delay vectors: independent marginals, or a Gaussian copula
/// when the instance carries a correlation matrix.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    samplers: Vec<Sampler>,
    marginals: Vec<DelayMarginal>,
    factor: Option<DMatrix<f64>>,
    scratch_len: usize,
}

impl DelaySampler {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            samplers: spec.routes().iter().map(|r| r.delay.sampler()).collect(),
            marginals: spec.routes().iter().map(|r| r.delay).collect(),
            factor: spec.correlation().map(|c| c.factor.clone()),
            scratch_len: spec.len(),
        }
    }

    /// Fills `out` with one joint draw `(Y_1, …, Y_N)`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.scratch_len);
        match &self.factor {
            None => {
                for (slot, s) in out.iter_mut().zip(&self.samplers) {
                    *slot = s.sample(rng);
                }
            }
            Some(l) => {
                let n = self.scratch_len;
                let mut eps = [0.0f64; MAX_ROUTES];
                for e in eps.iter_mut().take(n) {
                    *e = rng.sample(StandardNormal);
                }
                for (i, slot) in out.iter_mut().enumerate() {
                    let z: f64 = (0..n).map(|j| l[(i, j)] * eps[j]).sum();
                    *slot = self.marginals[i].quantile_from_normal(z);
                }
            }
        }
    }
}

/// One joint delay draw for `spec`.
pub fn sample_delays<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; spec.len()];
    DelaySampler::new(spec).sample_into(rng, &mut out);
    out
}
