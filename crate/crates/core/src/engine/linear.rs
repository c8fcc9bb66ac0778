//! Sparse Gaussian elimination for systems `x = A x + b` arising from
//! reachability, where `A` is substochastic.
//!
//! Variables are eliminated one at a time: the pivot row is normalized by its
//! self-loop coefficient and substituted into every row that still refers to
//! it. Back substitution then runs in reverse elimination order. On acyclic
//! systems eliminated sink-first there is no fill-in.

use std::collections::{BTreeMap, BTreeSet};

/// Smallest admissible pivot `1 - a_ss`.
const PIVOT_EPS: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct SparseSystem {
    rows: Vec<BTreeMap<usize, f64>>,
    rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub variable: usize,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        Self {
            rows: vec![BTreeMap::new(); n],
            rhs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Adds `coef * x_col` to the right-hand side of equation `row`.
    pub fn add_coef(&mut self, row: usize, col: usize, coef: f64) {
        *self.rows[row].entry(col).or_insert(0.0) += coef;
    }

    pub fn add_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] += value;
    }

    /// Solves in place, eliminating variables in `order` (every variable
    /// exactly once).
    pub fn solve_with_order(mut self, order: &[usize]) -> Result<Vec<f64>, Singular> {
        let n = self.len();
        debug_assert_eq!(order.len(), n);
        let mut users: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (r, row) in self.rows.iter().enumerate() {
            for &c in row.keys() {
                if c != r {
                    users[c].insert(r);
                }
            }
        }

        for &v in order {
            let self_coef = self.rows[v].remove(&v).unwrap_or(0.0);
            let pivot = 1.0 - self_coef;
            if pivot.abs() < PIVOT_EPS || !pivot.is_finite() {
                return Err(Singular { variable: v });
            }
            if self_coef != 0.0 {
                for a in self.rows[v].values_mut() {
                    *a /= pivot;
                }
                self.rhs[v] /= pivot;
            }
            let pivot_row: Vec<(usize, f64)> = self.rows[v].iter().map(|(&c, &a)| (c, a)).collect();
            let pivot_rhs = self.rhs[v];
            for &(c, _) in &pivot_row {
                users[c].remove(&v);
            }
            let dependants = std::mem::take(&mut users[v]);
            for r in dependants {
                let Some(c) = self.rows[r].remove(&v) else { continue };
                for &(t, a) in &pivot_row {
                    *self.rows[r].entry(t).or_insert(0.0) += c * a;
                    if t != r {
                        users[t].insert(r);
                    }
                }
                self.rhs[r] += c * pivot_rhs;
            }
        }

        let mut x = vec![0.0; n];
        for &v in order.iter().rev() {
            x[v] = self.rhs[v] + self.rows[v].iter().map(|(&c, &a)| a * x[c]).sum::<f64>();
        }
        Ok(x)
    }

    /// Eliminates the highest-numbered variable first.
    pub fn solve(self) -> Result<Vec<f64>, Singular> {
        let order: Vec<usize> = (0..self.len()).rev().collect();
        self.solve_with_order(&order)
    }
}
