use std::str::FromStr;

use routeage::benchmarks::{benchmark, PolicyKind};
use routeage::eval::mixed_rates;
use routeage::model::{validate, DelayMarginal, NetworkConfig};
use routeage::sim::{simulate_stratified, SimOptions};
use routeage::solver::SolverTolerances;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RouteField {
    Mean,
    Std,
    Availability,
    EnergyRate,
}

/// One scalar of the configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepVar {
    EnergyBudget,
    SamplingCost,
    /// Route position in the config file, 0-based.
    Route(usize, RouteField),
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "e_max" => return Ok(SweepVar::EnergyBudget),
            "c_s" => return Ok(SweepVar::SamplingCost),
            _ => {}
        }
        let (field, route) = s
            .split_once(':')
            .ok_or_else(|| format!("unknown sweep variable `{s}`"))?;
        let field = match field {
            "mu" => RouteField::Mean,
            "sigma" => RouteField::Std,
            "p" => RouteField::Availability,
            "g" => RouteField::EnergyRate,
            _ => return Err(format!("unknown route field `{field}` (expected mu, sigma, p or g)")),
        };
        let k: usize = route
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| format!("route position `{route}` must be a positive integer"))?;
        Ok(SweepVar::Route(k - 1, field))
    }
}

impl SweepVar {
    pub fn name(&self) -> String {
        match *self {
            SweepVar::EnergyBudget => "e_max".into(),
            SweepVar::SamplingCost => "c_s".into(),
            SweepVar::Route(k, f) => {
                let f = match f {
                    RouteField::Mean => "mu",
                    RouteField::Std => "sigma",
                    RouteField::Availability => "p",
                    RouteField::EnergyRate => "g",
                };
                format!("{f}:{}", k + 1)
            }
        }
    }

    /// `base` with this variable set to `x`. Delay edits keep the family.
    pub fn apply(&self, base: &NetworkConfig, x: f64) -> Result<NetworkConfig, String> {
        let mut cfg = base.clone();
        match *self {
            SweepVar::EnergyBudget => cfg.energy_budget = x,
            SweepVar::SamplingCost => cfg.sampling_cost = x,
            SweepVar::Route(k, field) => {
                let n = cfg.routes.len();
                let route = cfg
                    .routes
                    .get_mut(k)
                    .ok_or_else(|| format!("route position {} out of range (config has {n})", k + 1))?;
                let (mean, std) = (route.delay.mean(), route.delay.std_dev());
                match field {
                    RouteField::Mean => route.delay = with_moments(&route.delay, x, std)?,
                    RouteField::Std => route.delay = with_moments(&route.delay, mean, x)?,
                    RouteField::Availability => route.availability = x,
                    RouteField::EnergyRate => route.energy_rate = x,
                }
            }
        }
        Ok(cfg)
    }
}

fn with_moments(delay: &DelayMarginal, mean: f64, std: f64) -> Result<DelayMarginal, String> {
    match delay {
        DelayMarginal::LogNormal { .. } => Ok(DelayMarginal::log_normal_from_moments(mean, std)),
        DelayMarginal::Gamma { .. } => Ok(DelayMarginal::gamma_from_moments(mean, std)),
        DelayMarginal::Deterministic { .. } if std == 0.0 => Ok(DelayMarginal::Deterministic { value: mean }),
        DelayMarginal::Deterministic { .. } => {
            Err("a deterministic delay has no spread to vary; give the route a log-normal or gamma law".into())
        }
    }
}

pub fn header(var: &SweepVar, policies: &[PolicyKind], simulated: bool) -> Vec<String> {
    let mut h = vec![var.name()];
    for p in policies {
        h.push(p.to_string());
        if simulated {
            h.push(format!("{p}_sim"));
            h.push(format!("{p}_ci95"));
        }
    }
    h.push("warning".into());
    h
}

/// One CSV row. Failures leave empty cells and a note in the last column.
pub fn point(
    base: &NetworkConfig,
    var: &SweepVar,
    x: f64,
    policies: &[PolicyKind],
    tol: &SolverTolerances,
    epochs: Option<u64>,
    seed: u64,
) -> Vec<String> {
    let mut row = vec![x.to_string()];
    let mut warnings = Vec::new();
    let spec = var
        .apply(base, x)
        .and_then(|c| validate(&c).map_err(|e| e.to_string()));
    let width = if epochs.is_some() { 3 } else { 1 };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), width * policies.len()));
            row.push(e);
            return row;
        }
    };
    for &kind in policies {
        let cells = benchmark(kind, &spec, tol)
            .map_err(|e| e.to_string())
            .and_then(|b| {
                let (exact, energy) = match &b.solution {
                    Some(s) => (s.lambda, s.energy),
                    None => {
                        let r = mixed_rates(&b.policy, &spec).map_err(|e| e.to_string())?;
                        (r.aoi, r.energy)
                    }
                };
                if energy > spec.energy_budget() * (1.0 + 1e-6) {
                    warnings.push(format!("{kind}: energy {energy:.4} exceeds the budget"));
                }
                let mut cells = vec![exact.to_string()];
                if let Some(n) = epochs {
                    let s = simulate_stratified(&b.policy, &spec, &SimOptions::new(n, seed));
                    cells.push(s.aoi.to_string());
                    cells.push((1.96 * s.aoi_se).to_string());
                }
                Ok(cells)
            });
        match cells {
            Ok(c) => row.extend(c),
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), width));
                warnings.push(format!("{kind}: {e}"));
            }
        }
    }
    row.push(warnings.join("; "));
    row
}
