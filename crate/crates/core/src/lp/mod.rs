//! Dense linear programming: `maximize c·x` subject to equality rows,
//! `≤` rows and `x ≥ 0`.
//!
//! The solver is a two-phase tableau simplex with Bland's rule, so a given
//! input always walks the same pivot sequence and returns the same vertex.
//! The final basis is re-solved with an LU factorization before the answer is
//! checked against the original constraints.

mod lexicographic;
mod simplex;

pub use lexicographic::{solve_lexicographic, LexOutcome, LexRealization, LexStage};
pub use simplex::{solve, solve_restricted, solve_with};

use std::fmt::Write as _;

/// Feasibility tolerance on every constraint of an optimal answer.
pub const FEAS_TOL: f64 = 1e-9;
/// Half-width of a pinned-objective slab.
pub const PIN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    eq: Vec<Constraint>,
    le: Vec<Constraint>,
}

impl LinearProgram {
    /// An LP over `num_vars` nonnegative variables with a zero objective.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; num_vars],
            eq: Vec::new(),
            le: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn eq_constraints(&self) -> &[Constraint] {
        &self.eq
    }

    pub fn le_constraints(&self) -> &[Constraint] {
        &self.le
    }

    pub fn set_objective(&mut self, objective: Vec<f64>) {
        assert_eq!(objective.len(), self.num_vars(), "objective length");
        self.objective = objective;
    }

    pub fn with_objective(mut self, objective: Vec<f64>) -> Self {
        self.set_objective(objective);
        self
    }

    /// Adds `coeffs·x = rhs`.
    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "constraint length");
        self.eq.push(Constraint { coeffs, rhs });
    }

    /// Adds `coeffs·x ≤ rhs`.
    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "constraint length");
        self.le.push(Constraint { coeffs, rhs });
    }

    /// Restricts the feasible set to `value - tol ≤ direction·x ≤ value + tol`.
    pub fn with_pinned_objective(&self, direction: &[f64], value: f64, tol: f64) -> LinearProgram {
        assert_eq!(direction.len(), self.num_vars(), "direction length");
        let mut lp = self.clone();
        lp.add_le(direction.to_vec(), value + tol);
        lp.add_le(direction.iter().map(|d| -d).collect(), -(value - tol));
        lp
    }

    pub fn is_finite(&self) -> bool {
        let row_ok = |c: &Constraint| c.rhs.is_finite() && c.coeffs.iter().all(|v| v.is_finite());
        self.objective.iter().all(|v| v.is_finite())
            && self.eq.iter().all(row_ok)
            && self.le.iter().all(row_ok)
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq.iter().map(|c| (dot(&c.coeffs, x) - c.rhs).abs());
        let le = self.le.iter().map(|c| (dot(&c.coeffs, x) - c.rhs).max(0.0));
        let lb = x.iter().map(|&v| (-v).max(0.0));
        eq.chain(le).chain(lb).fold(0.0, f64::max)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Writes the program in CPLEX LP text format, for cross-checking with
    /// external solvers.
    pub fn to_lp_format(&self) -> String {
        fn row(out: &mut String, coeffs: &[f64]) {
            let mut first = true;
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let sign = if c < 0.0 {
                    " -"
                } else if first {
                    ""
                } else {
                    " +"
                };
                let _ = write!(out, "{sign} {:e} x{j}", c.abs());
                first = false;
            }
            if first {
                out.push_str(" 0 x0");
            }
        }
        let mut out = String::from("Maximize\n obj:");
        row(&mut out, &self.objective);
        out.push_str("\nSubject To\n");
        for (i, c) in self.eq.iter().enumerate() {
            let _ = write!(out, " e{i}:");
            row(&mut out, &c.coeffs);
            let _ = writeln!(out, " = {:e}", c.rhs);
        }
        for (i, c) in self.le.iter().enumerate() {
            let _ = write!(out, " l{i}:");
            row(&mut out, &c.coeffs);
            let _ = writeln!(out, " <= {:e}", c.rhs);
        }
        out.push_str("End\n");
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Ill-conditioned basis, non-finite input, or an answer that failed the
    /// post-solve feasibility check.
    Numerical,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Option<Vec<f64>>,
    pub value: Option<f64>,
    /// `c_j - yᵀA_j` for the structural columns followed by one entry per `≤`
    /// row (the slack column). Nonpositive at an optimum.
    pub reduced_costs: Option<Vec<f64>>,
    pub pivots: usize,
}

impl LpSolution {
    pub(crate) fn failed(status: LpStatus, pivots: usize) -> Self {
        LpSolution {
            status,
            x: None,
            value: None,
            reduced_costs: None,
            pivots,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    /// Entering threshold on reduced costs.
    pub opt_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    pub max_pivots: usize,
    /// Largest accepted 2-norm condition number of the final basis.
    pub max_condition: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: FEAS_TOL,
            opt_tol: 1e-10,
            pivot_tol: 1e-10,
            max_pivots: 200_000,
            max_condition: 1e12,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pin_adds_two_rows() {
        let lp = LinearProgram::new(2);
        let pinned = lp.with_pinned_objective(&[1.0, 2.0], 3.0, 0.0);
        assert_eq!(pinned.le_constraints().len(), 2);
        assert_eq!(pinned.max_violation(&[1.0, 1.0]), 0.0);
        assert!(pinned.max_violation(&[1.0, 1.5]) > 0.9);
    }

    #[test]
    fn lp_text_dump() {
        let mut lp = LinearProgram::new(2).with_objective(vec![1.0, -2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_le(vec![0.0, 1.0], 0.5);
        let text = lp.to_lp_format();
        assert!(text.starts_with("Maximize\n obj: 1e0 x0 - 2e0 x1"));
        assert!(text.contains(" e0: 1e0 x0 + 1e0 x1 = 1e0"));
        assert!(text.contains(" l0: 1e0 x1 <= 5e-1"));
    }
}
