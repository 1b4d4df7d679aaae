use super::{simplex::solve_restricted, LinearProgram, LpStatus, SolverOptions, PIN_TOL};

/// How the argmax set of one stage is carried into the next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LexRealization {
    /// Two-sided pin `value ± tol` on each earlier objective.
    Pinned { tol: f64 },
    /// Exact optimal face: every column whose reduced cost is below `-tol` is
    /// held at zero in later stages (complementary slackness).
    FaceRestriction { tol: f64 },
}

impl LexRealization {
    pub fn pinned() -> Self {
        LexRealization::Pinned { tol: PIN_TOL }
    }

    pub fn face() -> Self {
        LexRealization::FaceRestriction { tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexStage {
    pub value: f64,
    /// Pin rows or frozen columns in force while this stage was solved.
    pub restrictions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexOutcome {
    pub x: Vec<f64>,
    pub stages: Vec<LexStage>,
}

/// Maximizes `objectives[0]`, then `objectives[1]` over the argmax set of the
/// first, and so on. On failure returns the zero-based stage and its status.
pub fn solve_lexicographic(
    lp: &LinearProgram,
    objectives: &[Vec<f64>],
    realization: LexRealization,
    opts: &SolverOptions,
) -> Result<LexOutcome, (usize, LpStatus)> {
    let mut stages = Vec::with_capacity(objectives.len());
    let mut x = Vec::new();
    match realization {
        LexRealization::Pinned { tol } => {
            let mut current = lp.clone();
            for (k, obj) in objectives.iter().enumerate() {
                current.set_objective(obj.clone());
                let cols = current.num_vars() + current.le_constraints().len();
                let sol = solve_restricted(&current, &vec![false; cols], opts);
                let (Some(sx), Some(value)) = (sol.x, sol.value) else {
                    return Err((k, sol.status));
                };
                stages.push(LexStage {
                    value,
                    restrictions: 2 * k,
                });
                current = current.with_pinned_objective(obj, value, tol);
                x = sx;
            }
        }
        LexRealization::FaceRestriction { tol } => {
            let mut current = lp.clone();
            let mut frozen = vec![false; lp.num_vars() + lp.le_constraints().len()];
            for (k, obj) in objectives.iter().enumerate() {
                current.set_objective(obj.clone());
                let sol = solve_restricted(&current, &frozen, opts);
                let (Some(sx), Some(value), Some(reduced)) = (sol.x, sol.value, sol.reduced_costs)
                else {
                    return Err((k, sol.status));
                };
                stages.push(LexStage {
                    value,
                    restrictions: frozen.iter().filter(|f| **f).count(),
                });
                for (f, d) in frozen.iter_mut().zip(&reduced) {
                    if d < &-tol {
                        *f = true;
                    }
                }
                x = sx;
            }
        }
    }
    Ok(LexOutcome { x, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Triangle 0 ≤ x, y; x + y ≤ 1. Stage one maximizes x + y (the whole
    /// hypotenuse ties), stage two maximizes y on that edge: answer (0, 1).
    fn triangle() -> LinearProgram {
        let mut lp = LinearProgram::new(2);
        lp.add_le(vec![1.0, 1.0], 1.0);
        lp
    }

    #[test]
    fn two_stage_triangle_by_hand() {
        let objectives = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        for realization in [LexRealization::pinned(), LexRealization::face()] {
            let out = solve_lexicographic(
                &triangle(),
                &objectives,
                realization,
                &SolverOptions::default(),
            )
            .unwrap();
            assert!((out.x[0]).abs() < 1e-9, "{realization:?}");
            assert!((out.x[1] - 1.0).abs() < 1e-9);
            assert!((out.stages[0].value - 1.0).abs() < 1e-12);
            assert!((out.stages[1].value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn second_stage_cannot_undo_first() {
        // maximizing -x after x + 2y keeps the first value: exactly on the
        // optimal face, within the slab width when pinned
        let objectives = vec![vec![1.0, 2.0], vec![-1.0, 0.0]];
        for (realization, tol) in [
            (LexRealization::pinned(), 1.0001e-9),
            (LexRealization::face(), 1e-15),
        ] {
            let out = solve_lexicographic(
                &triangle(),
                &objectives,
                realization,
                &SolverOptions::default(),
            )
            .unwrap();
            assert!(
                (out.x[0] + 2.0 * out.x[1] - 2.0).abs() <= tol,
                "{realization:?} {out:?}"
            );
        }
    }

    #[test]
    fn equality_pin_keeps_previous_optimum_feasible() {
        let lp = triangle().with_objective(vec![1.0, 0.0]);
        let pinned = lp.with_pinned_objective(&[0.0, 1.0], 0.0, 0.0);
        let s = super::super::solve(&pinned);
        assert_eq!(s.x.unwrap(), vec![1.0, 0.0]);
    }
}
