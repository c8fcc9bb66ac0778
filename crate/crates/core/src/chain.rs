//! Composition of controller, confusion matrix and true environment into a
//! discrete-time Markov chain.
//!
//! For every reachable state `s` and every observation `y`, the mass
//! `C(y, x_e)` is routed to the controller's successor `K(s, y)`. Only the
//! component reachable from the initial state is built, in breadth-first
//! discovery order.

use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::confusion::{ConfusionMatrix, SCENARIO_LABELS, STOCHASTIC_TOL};
use crate::scenario::{
    AgentState, Controller, EnvClass, PointMass, ScenarioError, ScenarioParams, StochasticController,
    StopSemantics, SystemState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("confusion matrix labels {0:?} do not match the scenario classes (ped, obj, empty)")]
    LabelMismatch(Vec<String>),
    #[error("states belong to different environments ({0} vs {1})")]
    EnvMismatch(EnvClass, EnvClass),
    #[error("row {row} sums to {sum}, expected 1")]
    StochasticityViolation { row: usize, sum: f64 },
    #[error("malformed chain: {0}")]
    Malformed(String),
}

/// Sparse, row-stochastic transition structure over [`SystemState`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    states: Vec<SystemState>,
    index: HashMap<SystemState, usize>,
    rows: Vec<Vec<(usize, f64)>>,
    labels: BTreeMap<String, Vec<usize>>,
    env: EnvClass,
}

impl MarkovChain {
    /// Assembles a chain from explicit parts. Checks indices and duplicate
    /// states but not row sums; see [`validate_stochastic`].
    pub fn from_parts(
        states: Vec<SystemState>,
        rows: Vec<Vec<(usize, f64)>>,
        labels: BTreeMap<String, Vec<usize>>,
        env: EnvClass,
    ) -> Result<Self, ChainError> {
        if states.is_empty() {
            return Err(ChainError::Malformed("chain has no states".into()));
        }
        if rows.len() != states.len() {
            return Err(ChainError::Malformed(format!(
                "{} rows for {} states",
                rows.len(),
                states.len()
            )));
        }
        let n = states.len();
        let mut index = HashMap::with_capacity(n);
        for (i, s) in states.iter().enumerate() {
            if s.env != env {
                return Err(ChainError::EnvMismatch(s.env, env));
            }
            if index.insert(*s, i).is_some() {
                return Err(ChainError::Malformed(format!("duplicate state {s}")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for &(j, p) in row {
                if j >= n {
                    return Err(ChainError::Malformed(format!("row {i} targets missing state {j}")));
                }
                if !(0.0..=1.0 + STOCHASTIC_TOL).contains(&p) {
                    return Err(ChainError::Malformed(format!("row {i} has probability {p}")));
                }
            }
        }
        let mut labels = labels;
        for set in labels.values_mut() {
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&i| i >= n) {
                return Err(ChainError::Malformed("label refers to a missing state".into()));
            }
        }
        Ok(Self {
            states,
            index,
            rows,
            labels,
            env,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn env(&self) -> EnvClass {
        self.env
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> SystemState {
        self.states[i]
    }

    pub fn index_of(&self, s: &SystemState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn index_of_agent(&self, a: AgentState) -> Option<usize> {
        self.index_of(&SystemState::new(a, self.env))
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn transition_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `P(i, j)`, zero when there is no edge.
    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .filter(|&&(t, _)| t == j)
            .map(|&(_, p)| p)
            .sum()
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<&[usize]> {
        self.labels.get(name).map(Vec::as_slice)
    }

    /// A state whose only transition is a probability-one self-loop.
    pub fn is_absorbing(&self, i: usize) -> bool {
        matches!(self.rows[i].as_slice(), [(j, p)] if *j == i && *p == 1.0)
    }

    /// Predecessor lists, the transpose of the edge relation.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut pred = vec![Vec::new(); self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                if p > 0.0 {
                    pred[j].push(i);
                }
            }
        }
        pred
    }
}

/// Per-row sums and the largest deviation from one.
#[derive(Debug, Clone)]
pub struct StochasticReport {
    pub row_sums: Vec<f64>,
    pub max_deviation: f64,
    pub worst_row: Option<usize>,
    pub passed: bool,
}

pub fn validate_stochastic(chain: &MarkovChain) -> StochasticReport {
    let row_sums: Vec<f64> = chain
        .rows()
        .iter()
        .map(|row| row.iter().map(|&(_, p)| p).sum())
        .collect();
    let (worst_row, max_deviation) = row_sums
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (s - 1.0).abs()))
        .fold((None, 0.0), |(wi, wd), (i, d)| {
            if d > wd {
                (Some(i), d)
            } else {
                (wi, wd)
            }
        });
    StochasticReport {
        passed: max_deviation <= STOCHASTIC_TOL,
        row_sums,
        max_deviation,
        worst_row,
    }
}

fn check_labels(cm: &ConfusionMatrix) -> Result<(), ChainError> {
    if cm.label_names() != SCENARIO_LABELS {
        return Err(ChainError::LabelMismatch(
            cm.label_names().iter().map(|s| s.to_string()).collect(),
        ));
    }
    Ok(())
}

/// Observations `y` with `K(s1, y) = s2`.
pub fn observation_set<K: Controller>(
    k: &K,
    s1: AgentState,
    s2: AgentState,
) -> Result<Vec<EnvClass>, ChainError> {
    let mut out = Vec::new();
    for y in EnvClass::ALL {
        if k.step(s1, y)? == s2 {
            out.push(y);
        }
    }
    Ok(out)
}

/// One-step probability `Σ_{y ∈ O(s1, s2)} C(y, x_e)`.
pub fn transition_probability<K: Controller>(
    k: &K,
    cm: &ConfusionMatrix,
    x_e: EnvClass,
    s1: SystemState,
    s2: SystemState,
) -> Result<f64, ChainError> {
    check_labels(cm)?;
    for s in [s1, s2] {
        if s.env != x_e {
            return Err(ChainError::EnvMismatch(s.env, x_e));
        }
    }
    Ok(observation_set(k, s1.agent, s2.agent)?
        .into_iter()
        .map(|y| cm.get(y.index(), x_e.index()))
        .sum())
}

/// States that the chain forces to be absorbing: the road end, and the stop
/// in front of the sidewalk under [`StopSemantics::Absorb`].
pub fn is_terminal(params: &ScenarioParams, s: AgentState) -> bool {
    s.cell == params.road_length()
        || (params.semantics() == StopSemantics::Absorb && s == params.stop_state())
}

pub fn build_markov_chain<K: Controller>(
    params: &ScenarioParams,
    k: &K,
    cm: &ConfusionMatrix,
    x_e: EnvClass,
    init: AgentState,
) -> Result<MarkovChain, ChainError> {
    build_markov_chain_prob(params, &PointMass(k), cm, x_e, init)
}

/// Builds the chain for a randomized controller: the edge `s -> t` carries
/// `Σ_y C(y, x_e) · K(s, y)(t)`.
pub fn build_markov_chain_prob<K: StochasticController>(
    params: &ScenarioParams,
    k: &K,
    cm: &ConfusionMatrix,
    x_e: EnvClass,
    init: AgentState,
) -> Result<MarkovChain, ChainError> {
    check_labels(cm)?;
    if !params.contains(init) {
        return Err(ScenarioError::OutOfBounds(init).into());
    }
    let mut states = vec![SystemState::new(init, x_e)];
    let mut index = HashMap::from([(states[0], 0usize)]);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut queue = VecDeque::from([0usize]);

    while let Some(i) = queue.pop_front() {
        let s = states[i];
        let mut row: Vec<(usize, f64)> = Vec::new();
        if is_terminal(params, s.agent) {
            row.push((i, 1.0));
        } else {
            for y in EnvClass::ALL {
                let mass = cm.get(y.index(), x_e.index());
                if mass == 0.0 {
                    continue;
                }
                let dist = k.step_dist(s.agent, y)?;
                let total: f64 = dist.iter().map(|&(_, q)| q).sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL || dist.iter().any(|&(_, q)| q < 0.0) {
                    return Err(ScenarioError::BadDistribution {
                        state: s.agent,
                        observed: y,
                        sum: total,
                    }
                    .into());
                }
                for (t, q) in dist {
                    if q == 0.0 {
                        continue;
                    }
                    if !params.contains(t) {
                        return Err(ScenarioError::OutOfBounds(t).into());
                    }
                    let ts = SystemState::new(t, x_e);
                    let j = *index.entry(ts).or_insert_with(|| {
                        states.push(ts);
                        queue.push_back(states.len() - 1);
                        states.len() - 1
                    });
                    match row.iter_mut().find(|(dst, _)| *dst == j) {
                        Some(edge) => edge.1 += mass * q,
                        None => row.push((j, mass * q)),
                    }
                }
            }
        }
        debug_assert_eq!(rows.len(), i);
        rows.push(row);
    }

    let labels = scenario_labels(params, &states);
    let chain = MarkovChain::from_parts(states, rows, labels, x_e)?;
    let report = validate_stochastic(&chain);
    if !report.passed {
        let row = report.worst_row.unwrap_or(0);
        return Err(ChainError::StochasticityViolation {
            row,
            sum: report.row_sums[row],
        });
    }
    Ok(chain)
}

/// Atomic labels attached to scenario chains: `init`, `stopped`, `road_end`,
/// `at_cell_<i>`, `speed_<v>` and `env_<class>`.
pub fn scenario_labels(
    params: &ScenarioParams,
    states: &[SystemState],
) -> BTreeMap<String, Vec<usize>> {
    let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let stop = params.stop_state();
    for (i, s) in states.iter().enumerate() {
        if i == 0 {
            labels.entry("init".into()).or_default().push(i);
        }
        if s.agent == stop {
            labels.entry("stopped".into()).or_default().push(i);
        }
        if s.agent.cell == params.road_length() {
            labels.entry("road_end".into()).or_default().push(i);
        }
        labels.entry(format!("at_cell_{}", s.agent.cell)).or_default().push(i);
        labels.entry(format!("speed_{}", s.agent.speed)).or_default().push(i);
        labels.entry(format!("env_{}", s.env)).or_default().push(i);
    }
    labels
}

/// Replaces the outgoing edges of every state matching `pred` with a
/// probability-one self-loop.
pub fn make_absorbing<F>(chain: &MarkovChain, pred: F) -> MarkovChain
where
    F: Fn(&SystemState) -> bool,
{
    let mut out = chain.clone();
    for (i, s) in chain.states.iter().enumerate() {
        if pred(s) {
            out.rows[i] = vec![(i, 1.0)];
        }
    }
    out
}
