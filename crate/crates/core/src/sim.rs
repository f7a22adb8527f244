//! Monte Carlo simulation of the sampling and routing loop.
//!
//! Availability, delays and the mixing draw come from separate ChaCha
//! streams of the same seed. Two policies simulated with one seed therefore
//! see identical availability patterns and delay vectors (common random
//! numbers), and only the realised component of each delay vector is used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{AvailabilityState, DelaySampler, NetworkSpec};
use crate::policy::{MixedPolicy, ThresholdPolicy};

const AVAILABILITY_STREAM: u64 = 1;
const DELAY_STREAM: u64 = 2;
const MIXING_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub epochs: u64,
    pub seed: u64,
    /// Number of batches for the batch-means standard errors.
    pub batches: u64,
    /// Keep a per-epoch record.
    pub record: bool,
}

impl SimOptions {
    pub fn new(epochs: u64, seed: u64) -> Self {
        Self {
            epochs,
            seed,
            batches: 50,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub availability: AvailabilityState,
    /// Delay of the previous update, observed at the start of the epoch.
    pub observed: f64,
    pub route: usize,
    pub wait: f64,
    pub delay: f64,
}

/// Result of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Time-average age.
    pub aoi: f64,
    /// Batch-means standard error of `aoi`.
    pub aoi_se: f64,
    /// Energy per unit time.
    pub energy: f64,
    pub energy_se: f64,
    pub epochs: u64,
    pub elapsed: f64,
    pub area: f64,
    pub energy_spent: f64,
    /// Epochs routed over each canonical route.
    pub route_counts: Vec<u64>,
    pub records: Option<Vec<EpochRecord>>,
}

impl Trace {
    /// Confidence half-width `z·SE` of the age estimate.
    pub fn aoi_half_width(&self, z: f64) -> f64 {
        z * self.aoi_se
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn batch_se(values: &[f64]) -> f64 {
    let b = values.len();
    if b < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Runs `policy` for `opts.epochs` epochs from age zero.
///
/// # Panics
///
/// If the policy was built for a different number of routes.
pub fn simulate(policy: &ThresholdPolicy, spec: &NetworkSpec, opts: &SimOptions) -> Trace {
    let n = spec.len();
    assert_eq!(policy.num_routes(), n, "policy and network disagree on the route count");
    let mut avail_rng = stream(opts.seed, AVAILABILITY_STREAM);
    let mut delay_rng = stream(opts.seed, DELAY_STREAM);
    let sampler = DelaySampler::new(spec);
    let probs: Vec<f64> = spec.routes().iter().map(|r| r.availability).collect();
    let mut delays = vec![0.0; n];
    let batches = opts.batches.clamp(1, opts.epochs.max(1));
    let per_batch = opts.epochs / batches;

    let mut y = 0.0;
    let (mut area, mut elapsed, mut spent) = (0.0, 0.0, 0.0);
    let (mut b_area, mut b_time, mut b_energy) = (0.0, 0.0, 0.0);
    let mut aoi_batches = Vec::with_capacity(batches as usize);
    let mut energy_batches = Vec::with_capacity(batches as usize);
    let mut counts = vec![0u64; n];
    let mut records = opts.record.then(|| Vec::with_capacity(opts.epochs.min(1 << 24) as usize));

    for epoch in 0..opts.epochs {
        let mut bits = 0u32;
        for (k, &p) in probs.iter().enumerate() {
            if avail_rng.random::<f64>() >= p {
                bits |= 1 << k;
            }
        }
        let state = AvailabilityState(bits);
        let (route, wait) = policy.decide(y, state);
        sampler.sample_into(&mut delay_rng, &mut delays);
        let d = delays[route];
        let span = wait + d;
        let a = (2.0 * y + span) * span * 0.5;
        let e = spec.sampling_cost() + spec.route(route).energy_rate * d;
        area += a;
        elapsed += span;
        spent += e;
        b_area += a;
        b_time += span;
        b_energy += e;
        counts[route] += 1;
        if let Some(r) = records.as_mut() {
            r.push(EpochRecord {
                epoch,
                availability: state,
                observed: y,
                route,
                wait,
                delay: d,
            });
        }
        y = d;
        if per_batch > 0 && (epoch + 1) % per_batch == 0 && (aoi_batches.len() as u64) < batches {
            aoi_batches.push(b_area / b_time);
            energy_batches.push(b_energy / b_time);
            b_area = 0.0;
            b_time = 0.0;
            b_energy = 0.0;
        }
    }
    Trace {
        aoi: area / elapsed,
        aoi_se: batch_se(&aoi_batches),
        energy: spent / elapsed,
        energy_se: batch_se(&energy_batches),
        epochs: opts.epochs,
        elapsed,
        area,
        energy_spent: spent,
        route_counts: counts,
        records,
    }
}

/// One trajectory of a randomised policy: the mixing draw picks the branch
/// once, then the chosen policy runs for the whole horizon.
pub fn simulate_mixed(policy: &MixedPolicy, spec: &NetworkSpec, opts: &SimOptions) -> (bool, Trace) {
    let mut mix_rng = stream(opts.seed, MIXING_STREAM);
    let chosen = policy.select(&mut mix_rng);
    let plus = std::ptr::eq(chosen, &policy.plus);
    (plus, simulate(chosen, spec, opts))
}

/// Long-run estimate for a randomised policy from both branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratified {
    pub aoi: f64,
    pub aoi_se: f64,
    pub energy: f64,
    pub energy_se: f64,
    pub q: f64,
    pub minus: Trace,
    pub plus: Trace,
}

/// Simulates both branches with common random numbers and weights them by
/// `q`. The standard errors treat the branches as independent, which is
/// conservative under positive correlation.
pub fn simulate_stratified(policy: &MixedPolicy, spec: &NetworkSpec, opts: &SimOptions) -> Stratified {
    let q = policy.q;
    let plus = simulate(&policy.plus, spec, opts);
    let minus = if q < 1.0 {
        simulate(&policy.minus, spec, opts)
    } else {
        plus.clone()
    };
    let mix = |a: f64, b: f64| q * a + (1.0 - q) * b;
    let mix_se = |a: f64, b: f64| ((q * a).powi(2) + ((1.0 - q) * b).powi(2)).sqrt();
    Stratified {
        aoi: mix(plus.aoi, minus.aoi),
        aoi_se: mix_se(plus.aoi_se, minus.aoi_se),
        energy: mix(plus.energy, minus.energy),
        energy_se: mix_se(plus.energy_se, minus.energy_se),
        q,
        minus,
        plus,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub aoi: f64,
    pub aoi_se: f64,
    pub energy: f64,
    pub energy_se: f64,
}

/// Simulates several policies on the same random numbers.
pub fn compare(spec: &NetworkSpec, policies: &[(String, MixedPolicy)], opts: &SimOptions) -> Vec<ComparisonRow> {
    policies
        .iter()
        .map(|(name, p)| {
            let s = simulate_stratified(p, spec, opts);
            ComparisonRow {
                name: name.clone(),
                aoi: s.aoi,
                aoi_se: s.aoi_se,
                energy: s.energy,
                energy_se: s.energy_se,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Multipliers;
    use crate::model::{validate, DelayMarginal, NetworkConfig, RouteConfig};
    use crate::policy::RouteSelector;

    fn single(delay: DelayMarginal) -> NetworkSpec {
        validate(&NetworkConfig {
            routes: vec![RouteConfig {
                id: None,
                delay,
                availability: 1.0,
                energy_rate: 1.0,
            }],
            sampling_cost: 0.5,
            energy_budget: f64::INFINITY,
            correlation: None,
        })
        .unwrap()
    }

    #[test]
    fn deterministic_route_is_exact() {
        let s = single(DelayMarginal::Deterministic { value: 1.0 });
        let p = ThresholdPolicy::zero_wait(&s, RouteSelector::MinMean);
        let t = simulate(&p, &s, &SimOptions::new(1000, 1));
        // First epoch starts from age zero, afterwards each unit cycle adds 3/2.
        assert!((t.area - (0.5 + 999.0 * 1.5)).abs() < 1e-9);
        assert!((t.energy - 1.5).abs() < 1e-12);
    }

    #[test]
    fn seeds_reproduce() {
        let s = single(DelayMarginal::gamma_from_moments(1.0, 2.0));
        let p = ThresholdPolicy::forced(&s, Multipliers::unconstrained(3.0), RouteSelector::MinMean);
        let a = simulate(&p, &s, &SimOptions::new(5000, 9));
        let b = simulate(&p, &s, &SimOptions::new(5000, 9));
        assert_eq!(a, b);
        let c = simulate(&p, &s, &SimOptions::new(5000, 10));
        assert_ne!(a.aoi, c.aoi);
    }

    #[test]
    fn records_follow_the_policy() {
        let s = single(DelayMarginal::gamma_from_moments(1.0, 2.0));
        let p = ThresholdPolicy::forced(&s, Multipliers::unconstrained(3.0), RouteSelector::MinMean);
        let opts = SimOptions {
            record: true,
            ..SimOptions::new(200, 4)
        };
        let t = simulate(&p, &s, &opts);
        let recs = t.records.unwrap();
        assert_eq!(recs.len(), 200);
        for w in recs.windows(2) {
            assert_eq!(w[1].observed, w[0].delay);
            assert!((w[1].wait - (2.0 - w[1].observed).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn common_random_numbers_share_delays() {
        let s = single(DelayMarginal::gamma_from_moments(1.0, 2.0));
        let opts = SimOptions {
            record: true,
            ..SimOptions::new(50, 3)
        };
        let zw = simulate(&ThresholdPolicy::zero_wait(&s, RouteSelector::MinMean), &s, &opts);
        let w = simulate(
            &ThresholdPolicy::forced(&s, Multipliers::unconstrained(3.0), RouteSelector::MinMean),
            &s,
            &opts,
        );
        let (a, b) = (zw.records.unwrap(), w.records.unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.delay == y.delay));
    }
}
