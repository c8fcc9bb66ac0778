//! Seeded Monte Carlo estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{with_horizon, CheckResult, EngineConfig, EngineError, EngineKind, Form};
use crate::chain::MarkovChain;
use crate::logic::{decompose, label_shape, Formula, Query};

/// Samples per RNG stream. Fixed so results do not depend on thread count.
const CHUNK: u64 = 4096;
const Z95: f64 = 1.959_963_984_540_054;

pub fn simulate(chain: &MarkovChain, f: &Formula, init: usize, cfg: &EngineConfig) -> Result<CheckResult, EngineError> {
    let query = label_shape(chain, &decompose(f)?)?;
    simulate_query(chain, &query, init, cfg)
}

/// Every state can reach an absorbing state.
fn absorbing_chain(chain: &MarkovChain) -> bool {
    let absorbing: Vec<bool> = (0..chain.len()).map(|i| chain.is_absorbing(i)).collect();
    let pred = chain.predecessors();
    let mut seen = absorbing.clone();
    let mut stack: Vec<usize> = (0..chain.len()).filter(|&i| absorbing[i]).collect();
    while let Some(s) = stack.pop() {
        for &p in &pred[s] {
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    seen.into_iter().all(|b| b)
}

fn step(chain: &MarkovChain, s: usize, rng: &mut ChaCha8Rng) -> (usize, bool) {
    let row = chain.row(s);
    if let [(t, _)] = row {
        return (*t, true);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in row {
        acc += p;
        if u < acc {
            return (t, false);
        }
    }
    (row[row.len() - 1].0, false)
}

/// One run; returns the verdict and whether every step was forced.
fn run(chain: &MarkovChain, form: &Form, init: usize, rng: &mut ChaCha8Rng) -> (bool, bool) {
    let mut forced = true;
    match form {
        Form::Next { target } => {
            let (t, f) = step(chain, init, rng);
            (target[t], f)
        }
        Form::Until { hold, goal, negate, bound } => {
            let mut s = init;
            let mut left = *bound;
            let verdict = loop {
                if goal[s] {
                    break true;
                }
                if !hold[s] || left == Some(0) || chain.is_absorbing(s) {
                    break false;
                }
                let (t, f) = step(chain, s, rng);
                forced &= f;
                s = t;
                left = left.map(|n| n - 1);
            };
            (verdict != *negate, forced)
        }
    }
}

/// Half-width of a 95% interval: Wald inside (0, 1), Clopper–Pearson at
/// the boundary.
fn half_width(hits: u64, n: u64) -> f64 {
    let p = hits as f64 / n as f64;
    if hits == 0 || hits == n {
        1.0 - 0.025f64.powf(1.0 / n as f64)
    } else {
        Z95 * (p * (1.0 - p) / n as f64).sqrt()
    }
}

pub fn simulate_query(
    chain: &MarkovChain,
    query: &Query,
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    cfg.validate()?;
    if init >= chain.len() {
        return Err(EngineError::BadInit(format!("index {init}")));
    }
    let unbounded = !query.is_bounded() && !matches!(query, Query::Next { .. });
    let query = match cfg.horizon {
        Some(h) => with_horizon(query.clone(), h),
        None if unbounded && !absorbing_chain(chain) => return Err(EngineError::HorizonRequired),
        None => query.clone(),
    };
    let form = Form::of(&query);
    let chunks = cfg.samples.div_ceil(CHUNK);
    let (hits, forced) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let n = CHUNK.min(cfg.samples - c * CHUNK);
            let mut hits = 0u64;
            let mut forced = true;
            for _ in 0..n {
                let (v, f) = run(chain, &form, init, &mut rng);
                hits += v as u64;
                forced &= f;
            }
            (hits, forced)
        })
        .reduce(|| (0, true), |a, b| (a.0 + b.0, a.1 && b.1));
    Ok(CheckResult {
        probability: hits as f64 / cfg.samples as f64,
        engine: EngineKind::Simulate,
        residual: if forced { 0.0 } else { half_width(hits, cfg.samples) },
        iterations: cfg.samples,
        bounded: query.is_bounded(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::testing::{set, toy_chain};
    use super::*;
    use crate::chain::build_markov_chain;
    use crate::confusion::{cm1, ConfusionMatrix, SCENARIO_LABELS};
    use crate::logic::{phi1, phi2};
    use crate::scenario::{make_controller, AgentState, EnvClass, ScenarioParams, StopSemantics};

    fn cfg(samples: u64, seed: u64) -> EngineConfig {
        EngineConfig {
            engine: EngineKind::Simulate,
            samples,
            seed,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn identity_is_certain_with_zero_width() {
        let p = ScenarioParams::new(20, 15, 3, StopSemantics::Absorb).unwrap();
        let k = make_controller(&p);
        let id = ConfusionMatrix::identity(&SCENARIO_LABELS);
        let c = build_markov_chain(&p, &k, &id, EnvClass::Ped, AgentState::new(1, 3)).unwrap();
        let r = simulate(&c, &phi2(&p), 0, &cfg(1000, 1)).unwrap();
        assert_eq!((r.probability, r.residual), (1.0, 0.0));
    }

    #[test]
    fn thirteen_fifteenths_within_three_se() {
        let p = ScenarioParams::new(65, 57, 1, StopSemantics::Absorb).unwrap();
        let k = make_controller(&p);
        let c = build_markov_chain(&p, &k, &cm1(), EnvClass::Obj, AgentState::new(1, 1)).unwrap();
        let r = simulate(&c, &phi1(&p), 0, &cfg(100_000, 7)).unwrap();
        let q: f64 = 13.0 / 15.0;
        let se = (q * (1.0 - q) / 1e5).sqrt();
        assert!((r.probability - q).abs() <= 3.0 * se, "{r:?}");
        assert!(r.residual > 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = toy_chain(vec![vec![(1, 0.3), (2, 0.7)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let q = Query::Reach { target: set(3, &[1]) };
        let a = simulate_query(&c, &q, 0, &cfg(10_000, 42)).unwrap();
        let b = simulate_query(&c, &q, 0, &cfg(10_000, 42)).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c1 = pool.install(|| simulate_query(&c, &q, 0, &cfg(10_000, 42)).unwrap());
        assert_eq!(a, c1);
    }

    #[test]
    fn horizon_policy() {
        let c = toy_chain(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let q = Query::Invariant { safe: set(2, &[0, 1]) };
        assert_eq!(simulate_query(&c, &q, 0, &cfg(10, 0)), Err(EngineError::HorizonRequired));
        let r = simulate_query(&c, &q, 0, &EngineConfig { horizon: Some(5), ..cfg(10, 0) }).unwrap();
        assert!(r.bounded);
        assert_eq!(r.probability, 1.0);
    }

    #[test]
    fn boundary_intervals() {
        assert!((half_width(100, 100) - (1.0 - 0.025f64.powf(0.01))).abs() < 1e-15);
        assert_eq!(half_width(0, 100), half_width(100, 100));
        assert!((half_width(50, 100) - Z95 * 0.05).abs() < 1e-12);
    }
}
