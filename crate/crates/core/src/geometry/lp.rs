//! Thin LP layer over `minilp` used by the polytope routines.
//!
//! All variables are free; constraints come straight from a polytope's
//! halfspace representation.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::DVector;

use super::{LinearConstraint, Relation};

pub(crate) enum LpOutcome {
    Optimal { value: f64, point: DVector<f64> },
    Infeasible,
    Unbounded,
}

/// Maximize `objective . x` subject to `constraints`.
pub(crate) fn maximize(objective: &DVector<f64>, constraints: &[LinearConstraint]) -> LpOutcome {
    let dim = objective.len();
    let used = used_mask(constraints, dim);
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<Variable> = (0..dim)
        .map(|i| problem.add_var(objective[i], bounds(used[i] || objective[i] != 0.0)))
        .collect();
    for c in constraints {
        add_row(&mut problem, &vars, c, 0.0, None);
    }
    solve(problem, &vars, None)
}

/// Maximize a slack `s` with `a.x + s <= b` for every inequality, keeping
/// equalities hard. The polytope is nonempty (within `tol`) iff the optimal
/// slack is `>= -tol`. The slack is capped at 1.0, which leaves the verdict
/// unchanged and keeps the LP bounded even for unbounded polytopes, so a
/// witness point is always available.
pub(crate) fn max_slack(constraints: &[LinearConstraint], dim: usize) -> LpOutcome {
    let used = used_mask(constraints, dim);
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<Variable> = (0..dim)
        .map(|i| problem.add_var(0.0, bounds(used[i])))
        .collect();
    let slack = problem.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for c in constraints {
        let slack_coeff = match c.relation() {
            Relation::Le => 1.0,
            Relation::Eq => 0.0,
        };
        add_row(&mut problem, &vars, c, slack_coeff, Some(slack));
    }
    solve(problem, &vars, Some(slack))
}

/// minilp mishandles free variables that appear in no constraint row; pin
/// those to zero, which changes neither feasibility nor the optimum.
fn used_mask(constraints: &[LinearConstraint], dim: usize) -> Vec<bool> {
    let mut used = vec![false; dim];
    for c in constraints {
        for (i, coeff) in c.normal().iter().enumerate() {
            if *coeff != 0.0 {
                used[i] = true;
            }
        }
    }
    used
}

fn bounds(free: bool) -> (f64, f64) {
    if free {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        (0.0, 0.0)
    }
}

fn add_row(
    problem: &mut Problem,
    vars: &[Variable],
    c: &LinearConstraint,
    slack_coeff: f64,
    slack: Option<Variable>,
) {
    let mut row: Vec<(Variable, f64)> = vars
        .iter()
        .copied()
        .zip(c.normal().iter().copied())
        .filter(|(_, coeff)| *coeff != 0.0)
        .collect();
    if slack_coeff != 0.0 {
        if let Some(s) = slack {
            row.push((s, slack_coeff));
        }
    }
    let op = match c.relation() {
        Relation::Le => ComparisonOp::Le,
        Relation::Eq => ComparisonOp::Eq,
    };
    problem.add_constraint(&row[..], op, c.offset());
}

fn solve(problem: Problem, vars: &[Variable], slack: Option<Variable>) -> LpOutcome {
    match problem.solve() {
        Ok(solution) => {
            let value = match slack {
                Some(s) => solution[s],
                None => solution.objective(),
            };
            if !value.is_finite() {
                return LpOutcome::Unbounded;
            }
            let point = DVector::from_iterator(vars.len(), vars.iter().map(|v| solution[*v]));
            LpOutcome::Optimal { value, point }
        }
        Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
        Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
    }
}
