//! Satisfaction probabilities on a [`MarkovChain`].
//!
//! Two exact engines (sparse elimination and fixed-point iteration) share a
//! qualitative graph pre-pass. Path enumeration sums cylinder-set
//! probabilities directly and serves as an independent oracle; simulation
//! gives a seeded statistical estimate.

mod enumerate;
pub mod linear;
mod simulate;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::chain::MarkovChain;
use crate::logic::{decompose, label_shape, Formula, LogicError, Query};
use crate::scenario::{AgentState, EnvClass};

pub use enumerate::{enumerate_paths, enumerate_query};
pub use simulate::{simulate, simulate_query};

/// Probabilities this far outside `[0, 1]` are clamped; further is an error.
pub const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: u64, residual: f64 },
    #[error("singular system at state {state}")]
    SingularSystem { state: usize },
    #[error("formula outside the supported fragment: {0}")]
    UnsupportedFragment(String),
    #[error(transparent)]
    Logic(LogicError),
    #[error("environment distribution sums to {0}, expected 1")]
    DistributionNotNormalized(f64),
    #[error("no chain supplied for environment {0}")]
    MissingChain(EnvClass),
    #[error("path enumeration exceeded its budget of {budget} paths")]
    BudgetExceeded { budget: u64 },
    #[error("path enumeration needs a horizon: the chain has a cycle through state {state}")]
    Cyclic { state: usize },
    #[error("simulation of an unbounded formula on a non-absorbing chain needs a horizon")]
    HorizonRequired,
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state {0} is not in the chain")]
    BadInit(String),
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
}

impl From<LogicError> for EngineError {
    fn from(e: LogicError) -> Self {
        match e {
            LogicError::Unsupported { location } => EngineError::UnsupportedFragment(location),
            other => EngineError::Logic(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EngineKind {
    #[default]
    Linear,
    Iterate,
    Enumerate,
    Simulate,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Linear => "linear",
            EngineKind::Iterate => "iterate",
            EngineKind::Enumerate => "enumerate",
            EngineKind::Simulate => "simulate",
        })
    }
}

impl FromStr for EngineKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(EngineKind::Linear),
            "iterate" => Ok(EngineKind::Iterate),
            "enumerate" => Ok(EngineKind::Enumerate),
            "simulate" => Ok(EngineKind::Simulate),
            other => Err(EngineError::InvalidConfig(format!("unknown engine `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub engine: EngineKind,
    pub tolerance: f64,
    pub max_iterations: u64,
    pub samples: u64,
    pub seed: u64,
    /// Step cap; turns unbounded formulas into their bounded forms when set.
    pub horizon: Option<u32>,
    /// Maximum number of expanded path prefixes for enumeration.
    pub path_budget: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            engine: EngineKind::Linear,
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            samples: 100_000,
            seed: 0,
            horizon: None,
            path_budget: 10_000_000,
        }
    }
}

impl EngineConfig {
    pub fn with_engine(engine: EngineKind) -> Self {
        Self {
            engine,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tolerance > 0.0) {
            return Err(EngineError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.samples == 0 {
            return Err(EngineError::InvalidConfig("samples must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(EngineError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub probability: f64,
    pub engine: EngineKind,
    /// Solver residual for exact engines, 95% half-width for simulation.
    pub residual: f64,
    /// Iterations, enumerated paths or samples.
    pub iterations: u64,
    /// The value is for a horizon-bounded reading of the formula.
    pub bounded: bool,
}

fn clamp_probability(p: f64) -> Result<f64, EngineError> {
    if p.is_nan() || p < -CLAMP_TOL || p > 1.0 + CLAMP_TOL {
        return Err(EngineError::OutOfRange(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

fn check_init(chain: &MarkovChain, init: usize) -> Result<(), EngineError> {
    if init >= chain.len() {
        return Err(EngineError::BadInit(format!("index {init}")));
    }
    Ok(())
}

/// Qualitative partition for `hold U goal`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub prob0: Vec<bool>,
    pub prob1: Vec<bool>,
}

impl Partition {
    pub fn unknown(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.prob0.len()).filter(|&i| !self.prob0[i] && !self.prob1[i])
    }
}

/// Backward closure of `seed` through predecessors satisfying `through`.
fn backward_closure(pred: &[Vec<usize>], seed: &[bool], through: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut mark = seed.to_vec();
    let mut queue: VecDeque<usize> = (0..seed.len()).filter(|&i| seed[i]).collect();
    while let Some(s) = queue.pop_front() {
        for &p in &pred[s] {
            if !mark[p] && through(p) {
                mark[p] = true;
                queue.push_back(p);
            }
        }
    }
    mark
}

/// States that reach `goal` with probability 0 or 1 along `hold`-paths.
pub fn graph_prepass(chain: &MarkovChain, hold: &[bool], goal: &[bool]) -> Partition {
    let pred = chain.predecessors();
    let can_reach = backward_closure(&pred, goal, |p| hold[p] && !goal[p]);
    let prob0: Vec<bool> = can_reach.iter().map(|&r| !r).collect();
    let can_fail = backward_closure(&pred, &prob0, |p| hold[p] && !goal[p]);
    let prob1: Vec<bool> = can_fail.iter().map(|&f| !f).collect();
    Partition { prob0, prob1 }
}

/// Full solution vector of `hold U goal` with its residual and iteration count.
pub fn until_vector(
    chain: &MarkovChain,
    hold: &[bool],
    goal: &[bool],
    cfg: &EngineConfig,
) -> Result<(Vec<f64>, f64, u64), EngineError> {
    let part = graph_prepass(chain, hold, goal);
    let n = chain.len();
    let mut x: Vec<f64> = (0..n).map(|i| if part.prob1[i] { 1.0 } else { 0.0 }).collect();
    let unknown: Vec<usize> = part.unknown().collect();
    if unknown.is_empty() {
        return Ok((x, 0.0, 0));
    }

    match cfg.engine {
        EngineKind::Iterate => {
            let mut iterations = 0;
            loop {
                iterations += 1;
                let mut delta: f64 = 0.0;
                let next: Vec<(usize, f64)> = unknown
                    .iter()
                    .map(|&s| (s, chain.row(s).iter().map(|&(t, p)| p * x[t]).sum::<f64>()))
                    .collect();
                for (s, v) in next {
                    delta = delta.max((v - x[s]).abs());
                    x[s] = v;
                }
                if delta < cfg.tolerance {
                    return Ok((x, delta, iterations));
                }
                if iterations >= cfg.max_iterations {
                    return Err(EngineError::NonConvergence {
                        iterations,
                        residual: delta,
                    });
                }
            }
        }
        _ => {
            let local: BTreeMap<usize, usize> = unknown.iter().enumerate().map(|(l, &s)| (s, l)).collect();
            let mut sys = linear::SparseSystem::new(unknown.len());
            for (l, &s) in unknown.iter().enumerate() {
                for &(t, p) in chain.row(s) {
                    if let Some(&lt) = local.get(&t) {
                        sys.add_coef(l, lt, p);
                    } else if part.prob1[t] {
                        sys.add_rhs(l, p);
                    }
                }
            }
            let sol = sys.solve().map_err(|e| EngineError::SingularSystem {
                state: unknown[e.variable],
            })?;
            for (l, &s) in unknown.iter().enumerate() {
                x[s] = sol[l];
            }
            let residual = unknown
                .iter()
                .map(|&s| (x[s] - chain.row(s).iter().map(|&(t, p)| p * x[t]).sum::<f64>()).abs())
                .fold(0.0, f64::max);
            Ok((x, residual, 1))
        }
    }
}

fn exact_kind(cfg: &EngineConfig) -> EngineKind {
    match cfg.engine {
        EngineKind::Iterate => EngineKind::Iterate,
        _ => EngineKind::Linear,
    }
}

pub fn prob_until(
    chain: &MarkovChain,
    hold: &[bool],
    goal: &[bool],
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    check_init(chain, init)?;
    let (x, residual, iterations) = until_vector(chain, hold, goal, cfg)?;
    Ok(CheckResult {
        probability: clamp_probability(x[init])?,
        engine: exact_kind(cfg),
        residual,
        iterations,
        bounded: false,
    })
}

pub fn prob_reach(
    chain: &MarkovChain,
    target: &[bool],
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    let all = vec![true; chain.len()];
    prob_until(chain, &all, target, init, cfg)
}

/// `P(G safe) = 1 - P(F !safe)`.
pub fn prob_invariant(
    chain: &MarkovChain,
    safe: &[bool],
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    check_init(chain, init)?;
    if !safe[init] {
        return Ok(CheckResult {
            probability: 0.0,
            engine: exact_kind(cfg),
            residual: 0.0,
            iterations: 0,
            bounded: false,
        });
    }
    let bad: Vec<bool> = safe.iter().map(|&s| !s).collect();
    let r = prob_reach(chain, &bad, init, cfg)?;
    Ok(CheckResult {
        probability: clamp_probability(1.0 - r.probability)?,
        ..r
    })
}

pub fn prob_next(chain: &MarkovChain, target: &[bool], init: usize) -> Result<CheckResult, EngineError> {
    check_init(chain, init)?;
    let p: f64 = chain.row(init).iter().filter(|&&(t, _)| target[t]).map(|&(_, p)| p).sum();
    Ok(CheckResult {
        probability: clamp_probability(p)?,
        engine: EngineKind::Linear,
        residual: 0.0,
        iterations: 1,
        bounded: false,
    })
}

/// `hold U<=bound goal` as the vector over all states.
pub fn bounded_until_vector(chain: &MarkovChain, hold: &[bool], goal: &[bool], bound: u32) -> Vec<f64> {
    let n = chain.len();
    let mut x: Vec<f64> = (0..n).map(|i| goal[i] as u8 as f64).collect();
    for _ in 0..bound {
        x = (0..n)
            .map(|s| {
                if goal[s] {
                    1.0
                } else if !hold[s] {
                    0.0
                } else {
                    chain.row(s).iter().map(|&(t, p)| p * x[t]).sum()
                }
            })
            .collect();
    }
    x
}

/// Bounded invariant, reach and until via the `bound`-step recurrence.
pub fn prob_bounded(chain: &MarkovChain, query: &Query, init: usize) -> Result<CheckResult, EngineError> {
    check_init(chain, init)?;
    let all = vec![true; chain.len()];
    let (p, bound) = match query {
        Query::BoundedReach { target, bound } => (bounded_until_vector(chain, &all, target, *bound)[init], *bound),
        Query::BoundedUntil { hold, goal, bound } => (bounded_until_vector(chain, hold, goal, *bound)[init], *bound),
        Query::BoundedInvariant { safe, bound } => {
            let bad: Vec<bool> = safe.iter().map(|&s| !s).collect();
            (1.0 - bounded_until_vector(chain, &all, &bad, *bound)[init], *bound)
        }
        other => {
            return Err(EngineError::InvalidConfig(format!(
                "prob_bounded called with an unbounded query {other:?}"
            )))
        }
    };
    Ok(CheckResult {
        probability: clamp_probability(p)?,
        engine: EngineKind::Linear,
        residual: 0.0,
        iterations: bound as u64,
        bounded: true,
    })
}

/// Rewrites unbounded shapes into bounded ones with the given horizon.
pub fn with_horizon(query: Query, horizon: u32) -> Query {
    match query {
        Query::Invariant { safe } => Query::BoundedInvariant { safe, bound: horizon },
        Query::Reach { target } => Query::BoundedReach { target, bound: horizon },
        Query::Until { hold, goal } => Query::BoundedUntil { hold, goal, bound: horizon },
        other => other,
    }
}

/// Runs the configured engine on a labeled query.
pub fn check_query(
    chain: &MarkovChain,
    query: &Query,
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    cfg.validate()?;
    check_init(chain, init)?;
    match cfg.engine {
        EngineKind::Enumerate => {
            let probability = enumerate_query(chain, query, init, cfg.horizon, cfg.path_budget)?;
            return Ok(CheckResult {
                probability: clamp_probability(probability.probability)?,
                engine: EngineKind::Enumerate,
                residual: 0.0,
                iterations: probability.paths,
                bounded: cfg.horizon.is_some() || query.is_bounded(),
            });
        }
        EngineKind::Simulate => return simulate_query(chain, query, init, cfg),
        EngineKind::Linear | EngineKind::Iterate => {}
    }
    let mut result = match query {
        Query::Invariant { safe } => prob_invariant(chain, safe, init, cfg)?,
        Query::Reach { target } => prob_reach(chain, target, init, cfg)?,
        Query::Until { hold, goal } => prob_until(chain, hold, goal, init, cfg)?,
        Query::Next { target } => prob_next(chain, target, init)?,
        bounded => prob_bounded(chain, bounded, init)?,
    };
    result.engine = exact_kind(cfg);
    Ok(result)
}

/// Probability that the chain started at `init` satisfies `f`.
pub fn check(
    chain: &MarkovChain,
    f: &Formula,
    init: usize,
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    let shape = decompose(f)?;
    let query = label_shape(chain, &shape)?;
    check_query(chain, &query, init, cfg)
}

/// `Σ_e dist(e) · P_e(init ⊨ f)` over per-environment chains.
pub fn weighted_check(
    chains: &BTreeMap<EnvClass, MarkovChain>,
    f: &Formula,
    init: AgentState,
    env_dist: &[(EnvClass, f64)],
    cfg: &EngineConfig,
) -> Result<CheckResult, EngineError> {
    let total: f64 = env_dist.iter().map(|&(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 || env_dist.iter().any(|&(_, w)| w < 0.0) {
        return Err(EngineError::DistributionNotNormalized(total));
    }
    let mut acc = CheckResult {
        probability: 0.0,
        engine: cfg.engine,
        residual: 0.0,
        iterations: 0,
        bounded: false,
    };
    for &(env, w) in env_dist {
        if w == 0.0 {
            continue;
        }
        let chain = chains.get(&env).ok_or(EngineError::MissingChain(env))?;
        let i = chain
            .index_of_agent(init)
            .ok_or_else(|| EngineError::BadInit(format!("{init} in the {env} chain")))?;
        let r = check(chain, f, i, cfg)?;
        acc.probability += w * r.probability;
        acc.residual = acc.residual.max(r.residual);
        acc.iterations += r.iterations;
        acc.bounded |= r.bounded;
        acc.engine = r.engine;
    }
    acc.probability = clamp_probability(acc.probability)?;
    Ok(acc)
}

/// Every query as `hold U goal`, optionally negated and step-bounded; `Next`
/// stays separate.
pub(crate) enum Form<'a> {
    Until {
        hold: std::borrow::Cow<'a, [bool]>,
        goal: std::borrow::Cow<'a, [bool]>,
        negate: bool,
        bound: Option<u32>,
    },
    Next { target: &'a [bool] },
}

impl<'a> Form<'a> {
    pub(crate) fn of(query: &'a Query) -> Self {
        use std::borrow::Cow;
        let all = |n: usize| Cow::Owned(vec![true; n]);
        let not = |v: &[bool]| Cow::Owned(v.iter().map(|&b| !b).collect());
        let (hold, goal, negate, bound) = match query {
            Query::Next { target } => return Form::Next { target },
            Query::Invariant { safe } => (all(safe.len()), not(safe), true, None),
            Query::BoundedInvariant { safe, bound } => (all(safe.len()), not(safe), true, Some(*bound)),
            Query::Reach { target } => (all(target.len()), Cow::Borrowed(target.as_slice()), false, None),
            Query::BoundedReach { target, bound } => {
                (all(target.len()), Cow::Borrowed(target.as_slice()), false, Some(*bound))
            }
            Query::Until { hold, goal } => (Cow::Borrowed(hold.as_slice()), Cow::Borrowed(goal.as_slice()), false, None),
            Query::BoundedUntil { hold, goal, bound } => {
                (Cow::Borrowed(hold.as_slice()), Cow::Borrowed(goal.as_slice()), false, Some(*bound))
            }
        };
        Form::Until { hold, goal, negate, bound }
    }
}


#[cfg(test)]
mod tests {
    use super::testing::{set, toy_chain};
    use super::*;
    use crate::chain::build_markov_chain;
    use crate::confusion::{cm1, ConfusionMatrix, SCENARIO_LABELS};
    use crate::logic::{parse, phi1, phi2};
    use crate::scenario::{make_controller, ScenarioParams, StopSemantics};

    fn engines() -> [EngineConfig; 2] {
        [EngineConfig::with_engine(EngineKind::Linear), EngineConfig::with_engine(EngineKind::Iterate)]
    }

    #[test]
    fn split_to_target_and_sink() {
        let c = toy_chain(vec![vec![(1, 0.5), (2, 0.5)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        for cfg in engines() {
            let r = prob_reach(&c, &set(3, &[1]), 0, &cfg).unwrap();
            assert!((r.probability - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_reach_is_almost_sure() {
        let c = toy_chain(vec![vec![(0, 0.9), (1, 0.1)], vec![(1, 1.0)]]);
        for cfg in engines() {
            let r = prob_reach(&c, &set(2, &[1]), 0, &cfg).unwrap();
            assert!((r.probability - 1.0).abs() < 1e-10, "{cfg:?} {r:?}");
        }
        // The pre-pass alone settles it.
        let part = graph_prepass(&c, &[true, true], &set(2, &[1]));
        assert!(part.prob1[0]);
    }

    #[test]
    fn until_closed_form() {
        // p-state: 0.3 -> q, 0.3 -> non-p sink, 0.4 -> self; 0.3 / 0.6 = 0.5.
        let c = toy_chain(vec![vec![(1, 0.3), (2, 0.3), (0, 0.4)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let hold = set(3, &[0]);
        let goal = set(3, &[1]);
        for cfg in engines() {
            let r = prob_until(&c, &hold, &goal, 0, &cfg).unwrap();
            assert!((r.probability - 0.5).abs() < 1e-11, "{r:?}");
        }
        let r = prob_until(&c, &hold, &set(3, &[0]), 0, &EngineConfig::default()).unwrap();
        assert_eq!(r.probability, 1.0);
        // true U q = F q
        let all = vec![true; 3];
        let a = prob_until(&c, &all, &goal, 0, &EngineConfig::default()).unwrap();
        let b = prob_reach(&c, &goal, 0, &EngineConfig::default()).unwrap();
        assert_eq!(a.probability, b.probability);
    }

    #[test]
    fn invariant_edge_cases() {
        let c = toy_chain(vec![vec![(1, 0.25), (2, 0.75)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let cfg = EngineConfig::default();
        assert_eq!(prob_invariant(&c, &[true; 3], 0, &cfg).unwrap().probability, 1.0);
        assert_eq!(prob_invariant(&c, &set(3, &[1, 2]), 0, &cfg).unwrap().probability, 0.0);
        let r = prob_invariant(&c, &set(3, &[0, 1]), 0, &cfg).unwrap();
        assert!((r.probability - 0.25).abs() < 1e-15);
    }

    #[test]
    fn next_examples() {
        let c = toy_chain(vec![vec![(1, 1.0 / 3.0), (2, 2.0 / 3.0)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        assert!((prob_next(&c, &set(3, &[1, 2]), 0).unwrap().probability - 1.0).abs() < 1e-15);
        assert_eq!(prob_next(&c, &set(3, &[]), 0).unwrap().probability, 0.0);
        assert!((prob_next(&c, &set(3, &[1]), 0).unwrap().probability - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bounded_examples() {
        let c = toy_chain(vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
        let q = |bound| Query::BoundedReach { target: set(2, &[1]), bound };
        assert_eq!(prob_bounded(&c, &q(1), 0).unwrap().probability, 1.0);
        assert_eq!(prob_bounded(&c, &q(0), 0).unwrap().probability, 0.0);
        let q0 = Query::BoundedReach { target: set(2, &[0]), bound: 0 };
        assert_eq!(prob_bounded(&c, &q0, 0).unwrap().probability, 1.0);
        let inv = Query::BoundedInvariant { safe: set(2, &[0]), bound: 0 };
        assert_eq!(prob_bounded(&c, &inv, 0).unwrap().probability, 1.0);
        let inv = Query::BoundedInvariant { safe: set(2, &[0]), bound: 1 };
        assert_eq!(prob_bounded(&c, &inv, 0).unwrap().probability, 0.0);
    }

    #[test]
    fn bounded_reach_is_monotone_and_converges() {
        let p = ScenarioParams::new(12, 10, 3, StopSemantics::Absorb).unwrap();
        let k = make_controller(&p);
        let c = build_markov_chain(&p, &k, &cm1(), EnvClass::Ped, AgentState::new(1, 2)).unwrap();
        let target: Vec<bool> = c.states().iter().map(|s| s.agent == p.stop_state()).collect();
        let exact = prob_reach(&c, &target, 0, &EngineConfig::default()).unwrap().probability;
        let mut last = 0.0;
        for n in 0..=(4 * c.len() as u32) {
            let v = prob_bounded(&c, &Query::BoundedReach { target: target.clone(), bound: n }, 0)
                .unwrap()
                .probability;
            assert!(v + 1e-15 >= last, "n={n}");
            last = v;
        }
        assert!((last - exact).abs() < 1e-12);
    }

    #[test]
    fn paper_13_15() {
        for sem in [StopSemantics::Absorb, StopSemantics::Restart] {
            let p = ScenarioParams::new(65, 57, 1, sem).unwrap();
            let k = make_controller(&p);
            let c = build_markov_chain(&p, &k, &cm1(), EnvClass::Obj, AgentState::new(1, 1)).unwrap();
            for cfg in engines() {
                let r = check(&c, &phi1(&p), 0, &cfg).unwrap();
                assert!((r.probability - 13.0 / 15.0).abs() < 1e-9, "{sem} {r:?}");
                let stop: Vec<bool> = c.states().iter().map(|s| s.agent == p.stop_state()).collect();
                let reach = prob_reach(&c, &stop, 0, &cfg).unwrap();
                assert!((reach.probability - 2.0 / 15.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_perception_gives_certainty() {
        let p = ScenarioParams::new(65, 57, 4, StopSemantics::Absorb).unwrap();
        let k = make_controller(&p);
        let id = ConfusionMatrix::identity(&SCENARIO_LABELS);
        for v0 in 0..=4 {
            let c = build_markov_chain(&p, &k, &id, EnvClass::Ped, AgentState::new(1, v0)).unwrap();
            assert_eq!(check(&c, &phi2(&p), 0, &EngineConfig::default()).unwrap().probability, 1.0);
            let c = build_markov_chain(&p, &k, &id, EnvClass::Obj, AgentState::new(1, v0)).unwrap();
            assert_eq!(check(&c, &phi1(&p), 0, &EngineConfig::default()).unwrap().probability, 1.0);
        }
    }

    #[test]
    fn unsupported_and_bad_config() {
        let c = toy_chain(vec![vec![(0, 1.0)]]);
        assert!(matches!(
            check(&c, &parse("G F(cell=1)").unwrap(), 0, &EngineConfig::default()),
            Err(EngineError::UnsupportedFragment(_))
        ));
        let cfg = EngineConfig { tolerance: 0.0, ..EngineConfig::default() };
        assert!(matches!(
            check(&c, &parse("G(cell=1)").unwrap(), 0, &cfg),
            Err(EngineError::InvalidConfig(_))
        ));
        assert!(matches!(
            check(&c, &parse("G(cell=1)").unwrap(), 3, &EngineConfig::default()),
            Err(EngineError::BadInit(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let c = toy_chain(vec![vec![(0, 0.999), (1, 0.001)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        // State 0 also needs a failing branch so the pre-pass leaves it unknown.
        let c2 = toy_chain(vec![vec![(0, 0.999), (1, 0.0005), (2, 0.0005)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let cfg = EngineConfig { engine: EngineKind::Iterate, max_iterations: 10, ..EngineConfig::default() };
        assert!(prob_reach(&c, &set(3, &[1]), 0, &cfg).is_ok());
        assert!(matches!(
            prob_reach(&c2, &set(3, &[1]), 0, &cfg),
            Err(EngineError::NonConvergence { iterations: 10, .. })
        ));
    }

    #[test]
    fn weighted_examples() {
        let p = ScenarioParams::new(8, 6, 2, StopSemantics::Absorb).unwrap();
        let k = make_controller(&p);
        let init = AgentState::new(1, 1);
        let chains: BTreeMap<EnvClass, MarkovChain> = EnvClass::ALL
            .iter()
            .map(|&e| (e, build_markov_chain(&p, &k, &cm1(), e, init).unwrap()))
            .collect();
        let f = parse("G(!(stopped))").unwrap();
        let cfg = EngineConfig::default();
        let per: BTreeMap<EnvClass, f64> =
            chains.iter().map(|(&e, c)| (e, check(c, &f, 0, &cfg).unwrap().probability)).collect();
        let point = weighted_check(&chains, &f, init, &[(EnvClass::Ped, 1.0)], &cfg).unwrap();
        assert_eq!(point.probability, per[&EnvClass::Ped]);
        let half = weighted_check(&chains, &f, init, &[(EnvClass::Obj, 0.5), (EnvClass::Empty, 0.5)], &cfg).unwrap();
        assert!((half.probability - (per[&EnvClass::Obj] + per[&EnvClass::Empty]) / 2.0).abs() < 1e-15);
        // Weighted enumeration oracle.
        let dist = [(EnvClass::Ped, 0.2), (EnvClass::Obj, 0.3), (EnvClass::Empty, 0.5)];
        let w = weighted_check(&chains, &f, init, &dist, &cfg).unwrap();
        let oracle: f64 = dist
            .iter()
            .map(|&(e, wt)| wt * enumerate_paths(&chains[&e], &f, 0, None, 1_000_000).unwrap())
            .sum();
        assert!((w.probability - oracle).abs() < 1e-12);
        assert!(matches!(
            weighted_check(&chains, &f, init, &[(EnvClass::Ped, 0.5)], &cfg),
            Err(EngineError::DistributionNotNormalized(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random chains where every state has 1-3 edges and about a quarter
        /// are absorbing.
        fn arb_chain() -> impl Strategy<Value = MarkovChain> {
            (2usize..12).prop_flat_map(|n| {
                proptest::collection::vec(
                    (
                        proptest::bool::weighted(0.25),
                        proptest::collection::vec((0..n, 1u32..10), 1..4),
                    ),
                    n,
                )
                .prop_map(move |spec| {
                    let rows = spec
                        .into_iter()
                        .enumerate()
                        .map(|(i, (absorb, edges))| {
                            if absorb {
                                return vec![(i, 1.0)];
                            }
                            let total: u32 = edges.iter().map(|e| e.1).sum();
                            let mut row: Vec<(usize, f64)> = Vec::new();
                            for (t, w) in edges {
                                match row.iter_mut().find(|e| e.0 == t) {
                                    Some(e) => e.1 += w as f64 / total as f64,
                                    None => row.push((t, w as f64 / total as f64)),
                                }
                            }
                            row
                        })
                        .collect();
                    toy_chain(rows)
                })
            })
        }

        proptest! {
            #[test]
            fn duality_and_engine_agreement(c in arb_chain(), mask in proptest::collection::vec(any::<bool>(), 12)) {
                let n = c.len();
                let safe: Vec<bool> = (0..n).map(|i| mask[i] || i == 0).collect();
                let bad: Vec<bool> = safe.iter().map(|&s| !s).collect();
                let lin = EngineConfig::default();
                let it = EngineConfig::with_engine(EngineKind::Iterate);
                let inv = prob_invariant(&c, &safe, 0, &lin).unwrap().probability;
                let reach = prob_reach(&c, &bad, 0, &lin).unwrap().probability;
                prop_assert!((inv + reach - 1.0).abs() <= 1e-12);
                let reach_it = prob_reach(&c, &bad, 0, &it).unwrap().probability;
                prop_assert!((reach - reach_it).abs() <= 1e-8);
                prop_assert!((0.0..=1.0).contains(&reach));
            }
        }
    }
}
