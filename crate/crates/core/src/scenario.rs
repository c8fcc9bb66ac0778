//! The discrete car/sidewalk world: a car drives along road cells `C_1..C_N`
//! past a sidewalk adjacent to `C_k`, choosing its next (cell, speed) from the
//! class its perception reports for the sidewalk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("no initial speed in 1..={v_max} can reach a stop at C_{stop_cell}; first failing speed {v0}")]
    Infeasible { v_max: u32, stop_cell: u32, v0: u32 },
    #[error("state {0} is outside the scenario bounds")]
    OutOfBounds(AgentState),
    #[error("no safe successor from {0}")]
    NoSafeSuccessor(AgentState),
    #[error("unknown environment class `{0}`")]
    UnknownEnv(String),
    #[error("unknown stop semantics `{0}`")]
    UnknownSemantics(String),
    #[error("controller distribution at {state} under {observed} sums to {sum}")]
    BadDistribution {
        state: AgentState,
        observed: EnvClass,
        sum: f64,
    },
}

/// True (static) class of the sidewalk, in confusion-matrix label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvClass {
    Ped,
    Obj,
    Empty,
}

impl EnvClass {
    pub const ALL: [EnvClass; 3] = [EnvClass::Ped, EnvClass::Obj, EnvClass::Empty];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvClass::Ped => "ped",
            EnvClass::Obj => "obj",
            EnvClass::Empty => "empty",
        }
    }
}

impl fmt::Display for EnvClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvClass {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ped" => Ok(EnvClass::Ped),
            "obj" => Ok(EnvClass::Obj),
            "empty" => Ok(EnvClass::Empty),
            other => Err(ScenarioError::UnknownEnv(other.to_string())),
        }
    }
}

/// What happens once the car has stopped in front of the sidewalk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopSemantics {
    /// The stopped state is terminal.
    #[default]
    Absorb,
    /// A stopped car keeps reacting to observations; `obj`/`empty` restart it.
    Restart,
}

impl FromStr for StopSemantics {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absorb" => Ok(StopSemantics::Absorb),
            "restart" => Ok(StopSemantics::Restart),
            other => Err(ScenarioError::UnknownSemantics(other.to_string())),
        }
    }
}

impl fmt::Display for StopSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopSemantics::Absorb => "absorb",
            StopSemantics::Restart => "restart",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentState {
    pub cell: u32,
    pub speed: u32,
}

impl AgentState {
    pub const fn new(cell: u32, speed: u32) -> Self {
        Self { cell, speed }
    }
}

impl fmt::Display for AgentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(C_{},{})", self.cell, self.speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub agent: AgentState,
    pub env: EnvClass,
}

impl SystemState {
    pub const fn new(agent: AgentState, env: EnvClass) -> Self {
        Self { agent, env }
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.agent, self.env)
    }
}

/// Road geometry and speed limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioParams {
    road_length: u32,
    sidewalk: u32,
    v_max: u32,
    semantics: StopSemantics,
    stoppable: Vec<bool>,
}

impl ScenarioParams {
    /// `road_length` is the last cell index `N`, `sidewalk` the cell `k`
    /// adjacent to the sidewalk. Fails unless every initial speed in
    /// `1..=v_max` from `C_1` admits a trajectory that stops at `C_{k-1}`.
    pub fn new(
        road_length: u32,
        sidewalk: u32,
        v_max: u32,
        semantics: StopSemantics,
    ) -> Result<Self, ScenarioError> {
        if v_max < 1 {
            return Err(ScenarioError::InvalidParams("v_max must be at least 1".into()));
        }
        if sidewalk < 2 || sidewalk > road_length {
            return Err(ScenarioError::InvalidParams(format!(
                "sidewalk cell k={sidewalk} must satisfy 2 <= k <= N={road_length}"
            )));
        }
        let mut params = Self {
            road_length,
            sidewalk,
            v_max,
            semantics,
            stoppable: Vec::new(),
        };
        params.stoppable = params.compute_stoppable();
        if let Some(v0) = (1..=v_max).find(|&v| !params.stoppable(AgentState::new(1, v))) {
            return Err(ScenarioError::Infeasible {
                v_max,
                stop_cell: sidewalk - 1,
                v0,
            });
        }
        Ok(params)
    }

    pub fn road_length(&self) -> u32 {
        self.road_length
    }

    pub fn sidewalk(&self) -> u32 {
        self.sidewalk
    }

    pub fn v_max(&self) -> u32 {
        self.v_max
    }

    pub fn semantics(&self) -> StopSemantics {
        self.semantics
    }

    pub fn with_semantics(&self, semantics: StopSemantics) -> Self {
        Self {
            semantics,
            ..self.clone()
        }
    }

    /// `(C_{k-1}, 0)`.
    pub fn stop_state(&self) -> AgentState {
        AgentState::new(self.sidewalk - 1, 0)
    }

    pub fn contains(&self, s: AgentState) -> bool {
        (1..=self.road_length).contains(&s.cell) && s.speed <= self.v_max
    }

    pub fn states(&self) -> impl Iterator<Item = AgentState> + '_ {
        (1..=self.road_length)
            .flat_map(move |c| (0..=self.v_max).map(move |v| AgentState::new(c, v)))
    }

    fn slot(&self, s: AgentState) -> usize {
        (s.cell as usize - 1) * (self.v_max as usize + 1) + s.speed as usize
    }

    /// Next cell when moving from `cell` at `speed`; saturates at `C_N`.
    pub fn clamp_pos(&self, cell: u32, speed: u32) -> u32 {
        self.road_length.min(cell + speed)
    }

    /// All dynamics-respecting successors, in increasing speed order.
    pub fn successors_dyn(&self, s: AgentState) -> Vec<AgentState> {
        let v = s.speed;
        if v == 0 {
            return vec![AgentState::new(s.cell, 0), AgentState::new(s.cell, 1)];
        }
        let next = self.clamp_pos(s.cell, v);
        let speeds: Vec<u32> = if v >= self.v_max {
            vec![self.v_max - 1, self.v_max]
        } else {
            vec![v - 1, v, v + 1]
        };
        speeds.into_iter().map(|w| AgentState::new(next, w)).collect()
    }

    /// Whether some dynamics-respecting trajectory from `s` reaches
    /// `(C_{k-1}, 0)` without stopping earlier and without entering `C_k`
    /// or beyond.
    pub fn stoppable(&self, s: AgentState) -> bool {
        self.contains(s) && self.stoppable[self.slot(s)]
    }

    fn compute_stoppable(&self) -> Vec<bool> {
        let target = self.stop_state();
        let allowed = |s: AgentState| s == target || (s.cell < target.cell && s.speed > 0);
        let mut safe = vec![false; self.slot(AgentState::new(self.road_length, self.v_max)) + 1];
        safe[self.slot(target)] = true;
        // Backward fixed point over the finite (cell, speed) graph.
        loop {
            let mut changed = false;
            for s in self.states() {
                if safe[self.slot(s)] || !allowed(s) {
                    continue;
                }
                if self
                    .successors_dyn(s)
                    .into_iter()
                    .any(|t| safe[self.slot(t)])
                {
                    safe[self.slot(s)] = true;
                    changed = true;
                }
            }
            if !changed {
                return safe;
            }
        }
    }

    /// Keep the current speed (the past-sidewalk convention).
    pub fn coast(&self, s: AgentState) -> AgentState {
        AgentState::new(self.clamp_pos(s.cell, s.speed), s.speed)
    }

    /// Slow down by one unit until speed 1; a stopped car pulls away at 1.
    pub fn controller_obj(&self, s: AgentState) -> AgentState {
        if s.speed == 0 {
            return AgentState::new(s.cell, 1);
        }
        AgentState::new(self.clamp_pos(s.cell, s.speed), (s.speed - 1).max(1))
    }

    /// Speed up by one unit until `v_max`.
    pub fn controller_empty(&self, s: AgentState) -> AgentState {
        if s.speed == 0 {
            return AgentState::new(s.cell, 1);
        }
        AgentState::new(self.clamp_pos(s.cell, s.speed), (s.speed + 1).min(self.v_max))
    }

    /// Fastest successor that can still stop at `C_{k-1}`. Holds the stop once
    /// reached. From states that can no longer stop it brakes like
    /// [`Self::controller_obj`]; past the sidewalk it coasts.
    pub fn controller_ped(&self, s: AgentState) -> Result<AgentState, ScenarioError> {
        if !self.contains(s) {
            return Err(ScenarioError::OutOfBounds(s));
        }
        if s.cell >= self.sidewalk {
            return Ok(self.coast(s));
        }
        if s == self.stop_state() {
            return Ok(s);
        }
        let best = self
            .successors_dyn(s)
            .into_iter()
            .filter(|&t| self.stoppable(t))
            .max_by_key(|t| t.speed);
        match best {
            Some(t) => Ok(t),
            None if !self.stoppable(s) => Ok(self.controller_obj(s)),
            None => Err(ScenarioError::NoSafeSuccessor(s)),
        }
    }
}

/// Deterministic control law `K(s_a, y)`.
pub trait Controller {
    fn step(&self, s: AgentState, observed: EnvClass) -> Result<AgentState, ScenarioError>;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn step(&self, s: AgentState, observed: EnvClass) -> Result<AgentState, ScenarioError> {
        (**self).step(s, observed)
    }
}

/// Randomized control law: a distribution over successors per observation.
pub trait StochasticController {
    fn step_dist(
        &self,
        s: AgentState,
        observed: EnvClass,
    ) -> Result<Vec<(AgentState, f64)>, ScenarioError>;
}

/// Lifts a deterministic controller to point-mass distributions.
#[derive(Debug, Clone)]
pub struct PointMass<C>(pub C);

impl<C: Controller> StochasticController for PointMass<C> {
    fn step_dist(
        &self,
        s: AgentState,
        observed: EnvClass,
    ) -> Result<Vec<(AgentState, f64)>, ScenarioError> {
        Ok(vec![(self.0.step(s, observed)?, 1.0)])
    }
}

/// Observation-dispatched car controller: `ped` runs the stopping policy,
/// `obj` slows to 1, `empty` speeds up to `v_max`.
#[derive(Debug, Clone)]
pub struct CarController {
    params: ScenarioParams,
}

pub fn make_controller(params: &ScenarioParams) -> CarController {
    CarController {
        params: params.clone(),
    }
}

impl CarController {
    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }
}

impl Controller for CarController {
    fn step(&self, s: AgentState, observed: EnvClass) -> Result<AgentState, ScenarioError> {
        let p = &self.params;
        if !p.contains(s) {
            return Err(ScenarioError::OutOfBounds(s));
        }
        if s.cell >= p.sidewalk {
            return Ok(p.coast(s));
        }
        if s == p.stop_state() && p.semantics == StopSemantics::Absorb {
            return Ok(s);
        }
        match observed {
            EnvClass::Ped => p.controller_ped(s),
            EnvClass::Obj => Ok(p.controller_obj(s)),
            EnvClass::Empty => Ok(p.controller_empty(s)),
        }
    }
}

/// One violated property found by [`verify_controller`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub env: EnvClass,
    pub v0: u32,
    pub property: &'static str,
    pub at: AgentState,
}

#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub runs: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "all {} perfect-perception runs satisfy phi1, phi2, phi3", self.runs);
        }
        writeln!(f, "{} violation(s) over {} runs:", self.violations.len(), self.runs)?;
        for v in &self.violations {
            writeln!(f, "  env={} v0={} {} at {}", v.env, v.v0, v.property, v.at)?;
        }
        Ok(())
    }
}

/// Runs the closed loop with perfect perception (observation = true class)
/// from every `(C_1, v0)`, `1 <= v0 <= v_max`, for every environment class and
/// checks the three stop/no-stop requirements plus the per-class run shape.
pub fn verify_controller(params: &ScenarioParams) -> VerificationReport {
    let k = params.sidewalk();
    let n = params.road_length();
    let stop = params.stop_state();
    let ctrl = make_controller(params);
    let mut report = VerificationReport::default();

    for env in EnvClass::ALL {
        for v0 in 1..=params.v_max() {
            report.runs += 1;
            let mut flag = |property, at| {
                report.violations.push(Violation {
                    env,
                    v0,
                    property,
                    at,
                })
            };
            let mut s = AgentState::new(1, v0);
            let mut reached_vmax = false;
            let mut last = None;
            loop {
                let stopped_at_k1 = s.cell == stop.cell && s.speed == 0;
                if env != EnvClass::Ped && stopped_at_k1 {
                    flag("phi1", s);
                }
                if env == EnvClass::Ped && s.cell >= stop.cell && !stopped_at_k1 {
                    flag("phi2", s);
                }
                if s.cell + 2 <= k && s.speed == 0 {
                    flag("phi3", s);
                }
                if env == EnvClass::Obj && s.speed == 0 && s.cell < n {
                    flag("obj-run-stopped", s);
                }
                if env == EnvClass::Empty {
                    if s.speed == params.v_max() {
                        reached_vmax = true;
                    } else if reached_vmax && s.cell < n {
                        flag("empty-run-left-vmax", s);
                    }
                }
                if let Some(prev) = last {
                    let prev: AgentState = prev;
                    if s.cell < prev.cell {
                        flag("position-decreased", s);
                    }
                }

                let absorbed = s.cell == n
                    || (s == stop && params.semantics() == StopSemantics::Absorb);
                if absorbed {
                    break;
                }
                let next = match ctrl.step(s, env) {
                    Ok(t) => t,
                    Err(_) => {
                        flag("controller-error", s);
                        break;
                    }
                };
                if !params.successors_dyn(s).contains(&next) {
                    flag("dynamics", next);
                }
                if next == s {
                    // Held in place under a deterministic loop.
                    break;
                }
                last = Some(s);
                s = next;
            }
            if env == EnvClass::Ped && s != stop {
                flag("ped-run-not-stopped", s);
            }
            if env == EnvClass::Empty && !reached_vmax {
                flag("empty-run-never-vmax", s);
            }
        }
    }
    report
}
