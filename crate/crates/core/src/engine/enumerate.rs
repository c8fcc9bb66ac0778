//! Exhaustive path enumeration: sums `Π P(s_i, s_{i+1})` over the finite
//! prefixes whose cylinder sets decide the formula.

use std::collections::VecDeque;

use super::{with_horizon, EngineError, Form};
use crate::chain::MarkovChain;
use crate::logic::{decompose, label_shape, Formula, Query};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enumeration {
    pub probability: f64,
    /// Number of decided path prefixes.
    pub paths: u64,
}

/// Probability of `f` from `init`, summed over path cylinders. `budget`
/// caps the number of expanded prefixes.
pub fn enumerate_paths(
    chain: &MarkovChain,
    f: &Formula,
    init: usize,
    horizon: Option<u32>,
    budget: u64,
) -> Result<f64, EngineError> {
    let query = label_shape(chain, &decompose(f)?)?;
    Ok(enumerate_query(chain, &query, init, horizon, budget)?.probability)
}

/// States that cannot reach `goal` along `hold`-states.
fn hopeless(chain: &MarkovChain, hold: &[bool], goal: &[bool]) -> Vec<bool> {
    let pred = chain.predecessors();
    let mut reach = goal.to_vec();
    let mut queue: VecDeque<usize> = (0..goal.len()).filter(|&i| goal[i]).collect();
    while let Some(s) = queue.pop_front() {
        for &p in &pred[s] {
            if !reach[p] && hold[p] {
                reach[p] = true;
                queue.push_back(p);
            }
        }
    }
    reach.into_iter().map(|r| !r).collect()
}

/// Errors if an undecided state lies on a cycle longer than a self-loop.
fn ensure_acyclic(chain: &MarkovChain, init: usize, undecided: &dyn Fn(usize) -> bool) -> Result<(), EngineError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; chain.len()];
    let mut stack: Vec<(usize, usize)> = vec![(init, 0)];
    mark[init] = Mark::Open;
    while let Some(&mut (s, ref mut next)) = stack.last_mut() {
        let row = chain.row(s);
        if !undecided(s) || *next >= row.len() {
            mark[s] = Mark::Done;
            stack.pop();
            continue;
        }
        let (t, _) = row[*next];
        *next += 1;
        if t == s {
            continue;
        }
        match mark[t] {
            Mark::Open => return Err(EngineError::Cyclic { state: t }),
            Mark::New => {
                mark[t] = Mark::Open;
                stack.push((t, 0));
            }
            Mark::Done => {}
        }
    }
    Ok(())
}

pub fn enumerate_query(
    chain: &MarkovChain,
    query: &Query,
    init: usize,
    horizon: Option<u32>,
    budget: u64,
) -> Result<Enumeration, EngineError> {
    let query = match horizon {
        Some(h) => with_horizon(query.clone(), h),
        None => query.clone(),
    };
    let mut paths = 0u64;
    let mut expanded = 0u64;
    let charge = |expanded: &mut u64| {
        *expanded += 1;
        if *expanded > budget {
            Err(EngineError::BudgetExceeded { budget })
        } else {
            Ok(())
        }
    };

    let (hold, goal, negate, bound) = match Form::of(&query) {
        Form::Next { target } => {
            let mut probability = 0.0;
            for &(t, p) in chain.row(init) {
                charge(&mut expanded)?;
                paths += 1;
                if target[t] {
                    probability += p;
                }
            }
            return Ok(Enumeration { probability, paths });
        }
        Form::Until { hold, goal, negate, bound } => (hold, goal, negate, bound),
    };

    let dead = hopeless(chain, &hold, &goal);
    let decide = |s: usize, left: Option<u32>| -> Option<bool> {
        if goal[s] {
            Some(true)
        } else if !hold[s] || dead[s] || left == Some(0) {
            Some(false)
        } else {
            None
        }
    };
    if bound.is_none() {
        ensure_acyclic(chain, init, &|s| decide(s, None).is_none())?;
    }

    let mut probability = 0.0;
    let mut stack: Vec<(usize, f64, Option<u32>)> = vec![(init, 1.0, bound)];
    while let Some((s, mass, left)) = stack.pop() {
        charge(&mut expanded)?;
        if let Some(d) = decide(s, left) {
            paths += 1;
            if d != negate {
                probability += mass;
            }
            continue;
        }
        match left {
            Some(n) => {
                for &(t, p) in chain.row(s) {
                    stack.push((t, mass * p, Some(n - 1)));
                }
            }
            None => {
                // Stuttering in `s` does not change an unbounded verdict, so
                // the geometric sojourn collapses into the exit distribution.
                let stay: f64 = chain.row(s).iter().filter(|e| e.0 == s).map(|e| e.1).sum();
                let scale = 1.0 / (1.0 - stay);
                for &(t, p) in chain.row(s) {
                    if t != s {
                        stack.push((t, mass * p * scale, None));
                    }
                }
            }
        }
    }
    Ok(Enumeration { probability, paths })
}
