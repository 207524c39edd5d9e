//! Dense two-phase primal simplex for small standard-form LPs
//! `min c'x  s.t.  A x = b, x >= 0`, with Bland's rule for anti-cycling.
//!
//! Row counts here are tiny (the uncertainty dimension), so the basis is
//! re-factorized at every pivot instead of updated.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("standard-form LP is infeasible (phase-1 optimum {0:.3e})")]
    Infeasible(f64),
    #[error("standard-form LP is unbounded")]
    Unbounded,
    #[error("simplex basis became singular")]
    SingularBasis,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct StandardFormSolution {
    pub x: DVector<f64>,
    /// Duals of the equality rows: `A_B' y = c_B`.
    pub y: DVector<f64>,
    pub basis: Vec<usize>,
    pub value: f64,
}

const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.a.nrows();
        let mut bm = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            bm.set_column(k, &self.a.column(j));
        }
        bm
    }

    /// Runs Bland-rule primal simplex on the given cost vector, restricted to
    /// columns `0..ncols_usable`. The basis must be feasible on entry.
    fn optimize(&mut self, cost: &DVector<f64>, ncols_usable: usize) -> Result<(), SimplexError> {
        let m = self.a.nrows();
        let max_iter = 200 * (ncols_usable + m) + 1000;
        for _ in 0..max_iter {
            let lu = self.basis_matrix().lu();
            let xb = lu.solve(&self.b).ok_or(SimplexError::SingularBasis)?;
            let cb = DVector::from_iterator(m, self.basis.iter().map(|&j| cost[j]));
            let y = self
                .basis_matrix()
                .transpose()
                .lu()
                .solve(&cb)
                .ok_or(SimplexError::SingularBasis)?;

            // Bland: entering column = smallest index with negative reduced cost.
            let mut entering = None;
            for j in 0..ncols_usable {
                if self.basis.contains(&j) {
                    continue;
                }
                let reduced = cost[j] - y.dot(&self.a.column(j).into_owned());
                if reduced < -PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(jin) = entering else {
                return Ok(());
            };

            let w = lu
                .solve(&self.a.column(jin).into_owned())
                .ok_or(SimplexError::SingularBasis)?;
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if w[i] > PIVOT_TOL {
                    let ratio = xb[i].max(0.0) / w[i];
                    let better = match best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br - 1e-13
                                || (ratio <= br + 1e-13 && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            let Some((iout, _)) = best else {
                return Err(SimplexError::Unbounded);
            };
            self.basis[iout] = jin;
        }
        Err(SimplexError::IterationLimit)
    }
}

/// Solves `min c'x  s.t.  A x = b, x >= 0` with a two-phase method.
pub fn solve_standard_form(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<StandardFormSolution, SimplexError> {
    let m = a.nrows();
    let n = a.ncols();
    debug_assert_eq!(b.len(), m);
    debug_assert_eq!(c.len(), n);

    // Phase 1: flip rows so rhs >= 0, append artificials.
    let mut a1 = DMatrix::zeros(m, n + m);
    let mut b1 = b.clone();
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a1[(i, j)] = sign * a[(i, j)];
        }
        a1[(i, n + i)] = 1.0;
        b1[i] = sign * b[i];
    }
    let mut cost1 = DVector::zeros(n + m);
    for i in 0..m {
        cost1[n + i] = 1.0;
    }
    let mut tab = Tableau {
        a: a1,
        b: b1,
        basis: (n..n + m).collect(),
    };
    tab.optimize(&cost1, n + m)?;
    let xb = tab
        .basis_matrix()
        .lu()
        .solve(&tab.b)
        .ok_or(SimplexError::SingularBasis)?;
    let phase1_value: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| xb[i].max(0.0))
        .sum();
    if phase1_value > 1e-9 {
        return Err(SimplexError::Infeasible(phase1_value));
    }

    // Drive leftover zero-level artificials out of the basis.
    for i in 0..m {
        if tab.basis[i] < n {
            continue;
        }
        let lu = tab.basis_matrix().lu();
        let mut replaced = false;
        for j in 0..n {
            if tab.basis.contains(&j) {
                continue;
            }
            let w = lu
                .solve(&tab.a.column(j).into_owned())
                .ok_or(SimplexError::SingularBasis)?;
            if w[i].abs() > 1e-9 {
                tab.basis[i] = j;
                replaced = true;
                break;
            }
        }
        if !replaced {
            return Err(SimplexError::SingularBasis);
        }
    }

    // Phase 2 on the original columns.
    let mut cost2 = DVector::zeros(n + m);
    for j in 0..n {
        cost2[j] = c[j];
    }
    tab.optimize(&cost2, n)?;

    let lu = tab.basis_matrix().lu();
    let xb = lu.solve(&tab.b).ok_or(SimplexError::SingularBasis)?;
    let cb = DVector::from_iterator(m, tab.basis.iter().map(|&j| cost2[j]));
    let y_flipped = tab
        .basis_matrix()
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or(SimplexError::SingularBasis)?;
    // Undo the phase-1 row sign flips in the duals.
    let mut y = DVector::zeros(m);
    for i in 0..m {
        y[i] = if b[i] < 0.0 { -y_flipped[i] } else { y_flipped[i] };
    }

    let mut x = DVector::zeros(n);
    for (i, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x[j] = xb[i].max(0.0);
        }
    }
    Ok(StandardFormSolution {
        value: c.dot(&x),
        x,
        y,
        basis: tab.basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_lp() {
        // min -x - y s.t. x + y + s = 1, x,y,s >= 0 -> value -1.
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let b = DVector::from_element(1, 1.0);
        let c = DVector::from_vec(vec![-1.0, -1.0, 0.0]);
        let sol = solve_standard_form(&a, &b, &c).unwrap();
        assert!((sol.value + 1.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_lp() {
        // x1 + x2 = -1 with x >= 0.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_element(1, -1.0);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_standard_form(&a, &b, &c),
            Err(SimplexError::Infeasible(_))
        ));
    }

    #[test]
    fn unbounded_lp() {
        // min -x1 s.t. x1 - x2 = 0: x1 = x2 -> -x1 unbounded below.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let b = DVector::zeros(1);
        let c = DVector::from_vec(vec![-1.0, 0.0]);
        assert!(matches!(
            solve_standard_form(&a, &b, &c),
            Err(SimplexError::Unbounded)
        ));
    }

    #[test]
    fn duals_satisfy_complementarity() {
        // min x1 + 2 x2 s.t. x1 + x2 = 2, x1 - x2 = 0 -> x = (1,1), value 3.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, 0.0]);
        let c = DVector::from_vec(vec![1.0, 2.0]);
        let sol = solve_standard_form(&a, &b, &c).unwrap();
        assert!((sol.value - 3.0).abs() < 1e-10);
        // A' y = c on basic columns.
        for (i, &j) in sol.basis.iter().enumerate() {
            let _ = i;
            let col = a.column(j).into_owned();
            assert!((col.dot(&sol.y) - c[j]).abs() < 1e-9);
        }
    }
}
