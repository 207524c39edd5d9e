//! Dense convex QP solver (Goldfarb-Idnani dual active-set method).
//!
//! Solves `min 0.5 x'Gx + g0'x` subject to `Ae x = be`, `Ai x <= bi`, and
//! optional variable bounds, with `G` positive definite. The dual active-set
//! method needs no feasible starting point: it begins at the unconstrained
//! minimizer and adds violated constraints one at a time, which suits SQP
//! subproblems whose linearizations start infeasible.
//!
//! Variable bounds are kept out of the dense row matrices; their normals are
//! unit vectors, so slack and `J' n` computations for them are O(n) instead
//! of O(n^2).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("quadratic term is not positive definite")]
    NotPositiveDefinite,
    #[error("QP constraints are infeasible")]
    Infeasible,
    #[error("QP iteration limit reached")]
    IterationLimit,
    #[error("inconsistent equality constraints")]
    InconsistentEqualities,
}

#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    pub g: &'a DMatrix<f64>,
    pub g0: &'a DVector<f64>,
    /// Equality rows `ae x = be`.
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
    /// Inequality rows `ai x <= bi`.
    pub a_in: &'a DMatrix<f64>,
    pub b_in: &'a DVector<f64>,
    /// Optional bounds `lower <= x <= upper`; non-finite entries are ignored.
    pub lower: Option<&'a DVector<f64>>,
    pub upper: Option<&'a DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for equality rows: `Gx + g0 + Ae' me + Ai' mi (+ bounds) = 0`.
    pub mult_eq: DVector<f64>,
    /// Multipliers for inequality rows, nonnegative.
    pub mult_ineq: DVector<f64>,
    /// Multipliers for lower bounds (rows `-x_i <= -lo_i`), nonnegative.
    pub mult_lower: DVector<f64>,
    /// Multipliers for upper bounds (rows `x_i <= hi_i`), nonnegative.
    pub mult_upper: DVector<f64>,
    pub iterations: usize,
}

/// Identity of one constraint in the dual active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

struct Workspace<'a> {
    p: QpProblem<'a>,
    n: usize,
    /// `J = L^{-T} Q`, updated by Givens rotations as constraints enter/leave.
    j: DMatrix<f64>,
    /// Upper-triangular factor of the active normals in the `J` basis.
    r: DMatrix<f64>,
    active: Vec<Row>,
    mult: Vec<f64>,
    n_eq_active: usize,
    r_norm: f64,
}

impl<'a> Workspace<'a> {
    /// Normal of `row` in the >=-form used by the dual method
    /// (equalities keep their sign, <=-rows are negated).
    fn normal(&self, row: Row) -> DVector<f64> {
        let n = self.n;
        match row {
            Row::Eq(i) => self.p.a_eq.row(i).transpose(),
            Row::Ineq(i) => -self.p.a_in.row(i).transpose(),
            Row::Lower(i) => {
                let mut v = DVector::zeros(n);
                v[i] = 1.0;
                v
            }
            Row::Upper(i) => {
                let mut v = DVector::zeros(n);
                v[i] = -1.0;
                v
            }
        }
    }

    /// Slack `n'x - b` of `row` in >=-form; negative means violated.
    fn slack(&self, row: Row, x: &DVector<f64>) -> f64 {
        match row {
            Row::Eq(i) => self.p.a_eq.row(i).transpose().dot(x) - self.p.b_eq[i],
            Row::Ineq(i) => self.p.b_in[i] - self.p.a_in.row(i).transpose().dot(x),
            Row::Lower(i) => x[i] - self.p.lower.unwrap()[i],
            Row::Upper(i) => self.p.upper.unwrap()[i] - x[i],
        }
    }

    /// `d = J' n_row`, exploiting unit normals for bound rows.
    fn j_t_normal(&self, row: Row) -> DVector<f64> {
        match row {
            Row::Lower(i) => self.j.row(i).transpose(),
            Row::Upper(i) => -self.j.row(i).transpose(),
            _ => self.j.transpose() * self.normal(row),
        }
    }

    fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Append the constraint whose rotated `d` is given; returns false if the
    /// normal is linearly dependent on the active set.
    fn add_constraint(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n;
        let q = self.n_active();
        for jj in ((q + 1)..n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = c * t1 + s * t2;
                self.j[(k, jj)] = -s * t1 + c * t2;
            }
        }
        if d[q].abs() <= 1e2 * f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[q].abs());
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        true
    }

    /// Remove the active constraint at position `pos` and re-triangularize.
    fn delete_constraint(&mut self, pos: usize) {
        let q = self.n_active();
        debug_assert!(pos >= self.n_eq_active, "equalities are never dropped");
        self.active.remove(pos);
        self.mult.remove(pos);
        for col in pos..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        let q = q - 1;
        for jj in pos..q {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            for col in jj..q {
                let t1 = self.r[(jj, col)];
                let t2 = self.r[(jj + 1, col)];
                self.r[(jj, col)] = c * t1 + s * t2;
                self.r[(jj + 1, col)] = -s * t1 + c * t2;
            }
            for k in 0..self.n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = c * t1 + s * t2;
                self.j[(k, jj + 1)] = -s * t1 + c * t2;
            }
        }
    }

    /// Back-substitution `r = R^{-1} d[0..q]`.
    fn solve_r(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.n_active();
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in (i + 1)..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    /// Step direction `z = J2 d2`.
    fn step_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.n_active();
        let mut z = DVector::zeros(self.n);
        for col in q..self.n {
            if d[col] != 0.0 {
                for k in 0..self.n {
                    z[k] += self.j[(k, col)] * d[col];
                }
            }
        }
        z
    }
}

pub fn solve_qp(p: QpProblem<'_>) -> Result<QpSolution, QpError> {
    let n = p.g.nrows();
    let me = p.a_eq.nrows();
    let mi = p.a_in.nrows();
    debug_assert_eq!(p.g.ncols(), n);
    debug_assert_eq!(p.g0.len(), n);
    debug_assert_eq!(p.a_eq.ncols().max(n), n);
    debug_assert_eq!(p.b_eq.len(), me);
    debug_assert_eq!(p.b_in.len(), mi);

    let chol = p.g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let x0 = -chol.solve(p.g0);
    let j0 = chol
        .l()
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;

    let mut bound_rows: Vec<Row> = Vec::new();
    if let Some(lo) = p.lower {
        for i in 0..n {
            if lo[i].is_finite() {
                bound_rows.push(Row::Lower(i));
            }
        }
    }
    if let Some(hi) = p.upper {
        for i in 0..n {
            if hi[i].is_finite() {
                bound_rows.push(Row::Upper(i));
            }
        }
    }

    let mut ws = Workspace {
        p,
        n,
        j: j0,
        r: DMatrix::zeros(n, n),
        active: Vec::new(),
        mult: Vec::new(),
        n_eq_active: 0,
        r_norm: 1.0,
    };
    let mut x = x0;

    // Equality constraints enter first and stay active.
    for i in 0..me {
        let row = Row::Eq(i);
        let mut d = ws.j_t_normal(row);
        let z = ws.step_direction(&d);
        let s = ws.slack(row, &x);
        let np = ws.normal(row);
        let ztn = z.dot(&np);
        if ztn.abs() <= 1e3 * f64::EPSILON * (1.0 + np.norm_squared()) {
            // Dependent on the current active set: consistent rows are kept
            // with a zero multiplier, inconsistent ones are an input error.
            if s.abs() > 1e-8 * (1.0 + ws.p.b_eq[i].abs()) {
                return Err(QpError::InconsistentEqualities);
            }
            continue;
        }
        let t = -s / ztn;
        x.axpy(t, &z, 1.0);
        let r = ws.solve_r(&d);
        for (k, rk) in r.iter().enumerate() {
            ws.mult[k] -= t * rk;
        }
        if !ws.add_constraint(&mut d) {
            return Err(QpError::InconsistentEqualities);
        }
        ws.active.push(row);
        ws.mult.push(t);
        ws.n_eq_active = ws.active.len();
    }

    let max_iter = 50 * (n + me + mi + bound_rows.len()) + 100;
    let mut iterations = 0;

    'outer: loop {
        // Most violated inactive inequality.
        let mut worst = 0.0_f64;
        let mut chosen: Option<Row> = None;
        let mut consider = |row: Row, ws: &Workspace, x: &DVector<f64>| {
            if ws.active.contains(&row) {
                return None;
            }
            Some(ws.slack(row, x))
        };
        for i in 0..mi {
            let row = Row::Ineq(i);
            if let Some(s) = consider(row, &ws, &x) {
                let tol = 1e-11 * (1.0 + ws.p.b_in[i].abs());
                if s < -tol && s < worst {
                    worst = s;
                    chosen = Some(row);
                }
            }
        }
        for &row in &bound_rows {
            if let Some(s) = consider(row, &ws, &x) {
                let bval = match row {
                    Row::Lower(i) => ws.p.lower.unwrap()[i],
                    Row::Upper(i) => ws.p.upper.unwrap()[i],
                    _ => unreachable!(),
                };
                let tol = 1e-11 * (1.0 + bval.abs());
                if s < -tol && s < worst {
                    worst = s;
                    chosen = Some(row);
                }
            }
        }
        let Some(row) = chosen else {
            break;
        };

        let np = ws.normal(row);
        let mut s = ws.slack(row, &x);
        let mut u_plus = 0.0_f64;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let d = ws.j_t_normal(row);
            let z = ws.step_direction(&d);
            let r = ws.solve_r(&d);

            // Partial step bound from active inequality multipliers.
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for k in ws.n_eq_active..ws.n_active() {
                if r[k] > 1e2 * f64::EPSILON {
                    let ratio = ws.mult[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(k);
                    }
                }
            }
            let ztn = z.dot(&np);
            let t2 = if ztn > 1e3 * f64::EPSILON * (1.0 + np.norm_squared()) {
                -s / ztn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            if t2.is_infinite() {
                // Dual-only step.
                for (k, rk) in r.iter().enumerate() {
                    ws.mult[k] -= t * rk;
                }
                u_plus += t;
                ws.delete_constraint(drop_pos.unwrap());
                continue;
            }

            x.axpy(t, &z, 1.0);
            for (k, rk) in r.iter().enumerate() {
                ws.mult[k] -= t * rk;
            }
            u_plus += t;

            if (t - t2).abs() <= f64::EPSILON * t.abs().max(1.0) {
                let mut dd = d;
                if !ws.add_constraint(&mut dd) {
                    return Err(QpError::Infeasible);
                }
                ws.active.push(row);
                ws.mult.push(u_plus);
                continue 'outer;
            }
            ws.delete_constraint(drop_pos.unwrap());
            s = ws.slack(row, &x);
        }
    }

    let mut mult_eq = DVector::zeros(me);
    let mut mult_ineq = DVector::zeros(mi);
    let mut mult_lower = DVector::zeros(n);
    let mut mult_upper = DVector::zeros(n);
    for (pos, row) in ws.active.iter().enumerate() {
        let u = ws.mult[pos];
        match *row {
            // In >=-form stationarity reads Gx + g0 = sum u_k n_k; mapping back
            // to the `grad + sum m a = 0` convention flips equality signs.
            Row::Eq(i) => mult_eq[i] = -u,
            Row::Ineq(i) => mult_ineq[i] = u.max(0.0),
            Row::Lower(i) => mult_lower[i] = u.max(0.0),
            Row::Upper(i) => mult_upper[i] = u.max(0.0),
        }
    }

    Ok(QpSolution {
        x,
        mult_eq,
        mult_ineq,
        mult_lower,
        mult_upper,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(
        g: DMatrix<f64>,
        g0: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<QpSolution, QpError> {
        solve_qp(QpProblem {
            g: &g,
            g0: &g0,
            a_eq: &a_eq,
            b_eq: &b_eq,
            a_in: &a_in,
            b_in: &b_in,
            lower: None,
            upper: None,
        })
    }

    #[test]
    fn unconstrained_minimum() {
        let sol = solve(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_inequality_multiplier() {
        // min x^2 s.t. x >= 1, i.e. -x <= -1: x = 1, multiplier 2.
        let sol = solve(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.mult_ineq[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_inequality() {
        // min 0.5(x^2 + y^2) s.t. x + y = 1, x <= 0.2 -> x = 0.2, y = 0.8.
        let sol = solve(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 0.2),
        )
        .unwrap();
        assert!((sol.x[0] - 0.2).abs() < 1e-10);
        assert!((sol.x[1] - 0.8).abs() < 1e-10);
        // Stationarity: x + me*(1,1) + mi*(1,0) = 0.
        let r0 = sol.x[0] + sol.mult_eq[0] + sol.mult_ineq[0];
        let r1 = sol.x[1] + sol.mult_eq[0];
        assert!(r0.abs() < 1e-10 && r1.abs() < 1e-10, "r = ({r0}, {r1})");
    }

    #[test]
    fn infeasible_detected() {
        // x <= 0 and -x <= -1 cannot hold together.
        let err = solve(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::Infeasible));
    }

    #[test]
    fn bounds_active() {
        let g = DMatrix::identity(3, 3);
        let g0 = DVector::from_vec(vec![-10.0, -10.0, -10.0]);
        let lower = DVector::from_element(3, 0.0);
        let upper = DVector::from_vec(vec![1.0, 2.0, 20.0]);
        let sol = solve_qp(QpProblem {
            g: &g,
            g0: &g0,
            a_eq: &DMatrix::zeros(0, 3),
            b_eq: &DVector::zeros(0),
            a_in: &DMatrix::zeros(0, 3),
            b_in: &DVector::zeros(0),
            lower: Some(&lower),
            upper: Some(&upper),
        })
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.x[1] - 2.0).abs() < 1e-12);
        assert!((sol.x[2] - 10.0).abs() < 1e-12);
        assert!((sol.mult_upper[0] - 9.0).abs() < 1e-10);
        assert!((sol.mult_upper[1] - 8.0).abs() < 1e-10);
        assert!(sol.mult_upper[2].abs() < 1e-12);
    }
}
