use nalgebra::{DMatrix, DVector};

use super::{dot, LinearProgram, LpSolution, LpStatus, SolverOptions};

/// Solves with default options.
pub fn solve(lp: &LinearProgram) -> LpSolution {
    solve_with(lp, &SolverOptions::default())
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> LpSolution {
    let frozen = vec![false; lp.num_vars() + lp.le_constraints().len()];
    solve_restricted(lp, &frozen, opts)
}

/// Solves `lp` with the columns flagged in `frozen` held at zero.
///
/// `frozen` covers the structural columns followed by one slack column per
/// `≤` row; freezing a slack turns its row into an equality.
pub fn solve_restricted(lp: &LinearProgram, frozen: &[bool], opts: &SolverOptions) -> LpSolution {
    assert_eq!(frozen.len(), lp.num_vars() + lp.le_constraints().len());
    if !lp.is_finite() {
        return LpSolution::failed(LpStatus::Numerical, 0);
    }
    let std = StandardForm::new(lp);
    let mut t = Tableau::phase_one(&std, frozen);

    if let Err(status) = t.run(opts) {
        return LpSolution::failed(status, t.pivots);
    }
    let b_scale = std.b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if t.rhs(t.m) > opts.feas_tol * b_scale {
        return LpSolution::failed(LpStatus::Infeasible, t.pivots);
    }
    t.drop_artificials();
    t.set_objective(&std.c);
    if let Err(status) = t.run(opts) {
        return LpSolution::failed(status, t.pivots);
    }
    refine(lp, &std, &t, frozen, opts)
}

/// `Ax = b` over structural and slack columns, rows flipped so `b ≥ 0`.
struct StandardForm {
    m: usize,
    n: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Row index of each `≤` row's slack, with its sign after flipping.
    slack_sign: Vec<f64>,
}

impl StandardForm {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let n_eq = lp.eq_constraints().len();
        let n_le = lp.le_constraints().len();
        let m = n_eq + n_le;
        let cols = n + n_le;
        let mut a = vec![0.0; m * cols];
        let mut b = vec![0.0; m];
        let mut slack_sign = vec![1.0; n_le];
        for (r, con) in lp.eq_constraints().iter().enumerate() {
            let sign = if con.rhs < 0.0 { -1.0 } else { 1.0 };
            for (j, &v) in con.coeffs.iter().enumerate() {
                a[r * cols + j] = sign * v;
            }
            b[r] = sign * con.rhs;
        }
        for (i, con) in lp.le_constraints().iter().enumerate() {
            let r = n_eq + i;
            let sign = if con.rhs < 0.0 { -1.0 } else { 1.0 };
            for (j, &v) in con.coeffs.iter().enumerate() {
                a[r * cols + j] = sign * v;
            }
            a[r * cols + n + i] = sign;
            b[r] = sign * con.rhs;
            slack_sign[i] = sign;
        }
        let mut c = lp.objective().to_vec();
        c.resize(cols, 0.0);
        StandardForm {
            m,
            n,
            cols,
            a,
            b,
            c,
            slack_sign,
        }
    }

    fn at(&self, r: usize, j: usize) -> f64 {
        self.a[r * self.cols + j]
    }
}

/// Dense tableau. Columns `0..cols` are structural and slack, then one
/// artificial per row that needed one, then the right-hand side. The last row
/// holds reduced profits `c_j - c_B B⁻¹A_j` and `-objective` in the rhs slot.
struct Tableau {
    m: usize,
    cols: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Original standard-form row of each tableau row.
    origin: Vec<usize>,
    allowed: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn phase_one(std: &StandardForm, frozen: &[bool]) -> Self {
        let m = std.m;
        let cols = std.cols;
        let n_le = cols - std.n;
        let n_eq = m - n_le;
        // rows whose own slack can start basic
        let slack_start: Vec<Option<usize>> = (0..m)
            .map(|r| {
                if r < n_eq {
                    return None;
                }
                let i = r - n_eq;
                (std.slack_sign[i] > 0.0 && !frozen[std.n + i]).then_some(std.n + i)
            })
            .collect();
        let n_art = slack_start.iter().filter(|s| s.is_none()).count();
        let width = cols + n_art + 1;
        let mut data = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let mut next_art = cols;
        for r in 0..m {
            data[r * width..r * width + cols].copy_from_slice(&std.a[r * cols..(r + 1) * cols]);
            data[r * width + width - 1] = std.b[r];
            match slack_start[r] {
                Some(j) => basis[r] = j,
                None => {
                    data[r * width + next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
            }
        }
        let obj = m * width;
        for r in 0..m {
            if basis[r] >= cols {
                for j in 0..cols {
                    data[obj + j] += data[r * width + j];
                }
                data[obj + width - 1] += data[r * width + width - 1];
            }
        }
        let mut allowed = vec![false; width - 1];
        for j in 0..cols {
            allowed[j] = !frozen[j];
        }
        Tableau {
            m,
            cols,
            width,
            data,
            basis,
            origin: (0..m).collect(),
            allowed,
            pivots: 0,
        }
    }

    fn get(&self, r: usize, j: usize) -> f64 {
        self.data[r * self.width + j]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.get(pr, pc);
        for j in 0..w {
            self.data[pr * w + j] *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[r * w..(r + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Bland's rule: lowest-index improving column enters; among tied
    /// minimum ratios the row whose basic variable has the lowest index leaves.
    fn run(&mut self, opts: &SolverOptions) -> Result<(), LpStatus> {
        loop {
            let entering = (0..self.width - 1)
                .find(|&j| self.allowed[j] && self.get(self.m, j) > opts.opt_tol);
            let Some(j) = entering else {
                return Ok(());
            };
            if self.pivots >= opts.max_pivots {
                return Err(LpStatus::IterationLimit);
            }
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let col = self.get(r, j);
                if col <= opts.pivot_tol {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / col;
                best = match best {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        if ratio < bratio && !tie || tie && self.basis[r] < self.basis[br] {
                            Some((r, ratio.min(bratio)))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            match best {
                Some((r, _)) => self.pivot(r, j),
                None => return Err(LpStatus::Unbounded),
            }
        }
    }

    /// Pivots zero-level artificials out of the basis; rows where that is
    /// impossible are linearly dependent and get removed.
    fn drop_artificials(&mut self) {
        let mut r = 0;
        while r < self.m {
            if self.basis[r] < self.cols {
                r += 1;
                continue;
            }
            let candidate =
                (0..self.cols).find(|&j| self.allowed[j] && self.get(r, j).abs() > 1e-9);
            match candidate {
                Some(j) => {
                    self.pivot(r, j);
                    r += 1;
                }
                None => self.remove_row(r),
            }
        }
        for j in self.cols..self.width - 1 {
            self.allowed[j] = false;
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.origin.remove(r);
        self.m -= 1;
    }

    fn set_objective(&mut self, c: &[f64]) {
        let w = self.width;
        let obj = self.m * w;
        for j in 0..w {
            self.data[obj + j] = 0.0;
        }
        self.data[obj..obj + self.cols].copy_from_slice(&c[..self.cols]);
        for r in 0..self.m {
            let cb = c.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                self.data[obj + j] -= cb * self.data[r * w + j];
            }
        }
    }
}

/// Recomputes the basic solution and duals from the original data.
fn refine(
    lp: &LinearProgram,
    std: &StandardForm,
    t: &Tableau,
    frozen: &[bool],
    opts: &SolverOptions,
) -> LpSolution {
    let m = t.m;
    let fail = |status| LpSolution::failed(status, t.pivots);
    let mut x_full = vec![0.0; std.cols];
    let mut reduced = std.c.clone();
    if m > 0 {
        let basis = DMatrix::from_fn(m, m, |r, k| std.at(t.origin[r], t.basis[k]));
        let sv = basis.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smin.is_nan() || smin <= 0.0 || smax / smin > opts.max_condition {
            return fail(LpStatus::Numerical);
        }
        let rhs = DVector::from_fn(m, |r, _| std.b[t.origin[r]]);
        let lu = basis.clone().lu();
        let Some(xb) = lu.solve(&rhs) else {
            return fail(LpStatus::Numerical);
        };
        let cb = DVector::from_fn(m, |k, _| std.c[t.basis[k]]);
        let Some(y) = basis.transpose().lu().solve(&cb) else {
            return fail(LpStatus::Numerical);
        };
        for (k, &j) in t.basis.iter().enumerate() {
            let v = xb[k];
            if v < -opts.feas_tol {
                return fail(LpStatus::Numerical);
            }
            x_full[j] = v.max(0.0);
        }
        for (j, d) in reduced.iter_mut().enumerate() {
            *d -= (0..m).map(|r| y[r] * std.at(t.origin[r], j)).sum::<f64>();
        }
        for &j in &t.basis {
            reduced[j] = 0.0;
        }
    }
    // optimality must survive the clean re-solve
    let scale = std.c.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    if reduced
        .iter()
        .enumerate()
        .any(|(j, &d)| !frozen[j] && d > 1e-7 * scale)
    {
        return fail(LpStatus::Numerical);
    }
    let x: Vec<f64> = x_full[..std.n].to_vec();
    if lp.max_violation(&x) > opts.feas_tol {
        return fail(LpStatus::Numerical);
    }
    let value = dot(lp.objective(), &x);
    LpSolution {
        status: LpStatus::Optimal,
        x: Some(x),
        value: Some(value),
        reduced_costs: Some(reduced),
        pivots: t.pivots,
    }
}
