#![allow(dead_code)]

use routeage::model::{validate, DelayMarginal, NetworkConfig, NetworkSpec, RouteConfig};

pub fn route(delay: DelayMarginal, availability: f64, energy_rate: f64) -> RouteConfig {
    RouteConfig {
        id: None,
        delay,
        availability,
        energy_rate,
    }
}

pub fn network(routes: Vec<RouteConfig>, sampling_cost: f64, energy_budget: f64) -> NetworkSpec {
    validate(&NetworkConfig {
        routes,
        sampling_cost,
        energy_budget,
        correlation: None,
    })
    .expect("valid test instance")
}

/// `(family, mean, std)` with family 0 log-normal, 1 gamma, 2 deterministic.
pub fn delay(family: u8, mean: f64, std: f64) -> DelayMarginal {
    match family % 3 {
        0 => DelayMarginal::log_normal_from_moments(mean, std),
        1 => DelayMarginal::gamma_from_moments(mean, std),
        _ => DelayMarginal::Deterministic { value: mean },
    }
}

pub fn load(name: &str) -> NetworkSpec {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    validate(&NetworkConfig::from_json(&text).expect("instance parses")).expect("instance validates")
}
