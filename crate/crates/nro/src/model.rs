//! Problem definition: smooth functions with analytic Jacobians, robust
//! constraints `u' h(x) <= b(x)` over convex uncertainty sets, and validation
//! of the checkable structural assumptions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::convexset::ConvexSet;

pub type EvalClosure = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacClosure = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("non-finite value from {context} at x = {x:?}")]
    NonFinite { context: String, x: Vec<f64> },
    #[error("arity mismatch in {context}: expected {expected}, got {got}")]
    Arity {
        context: String,
        expected: usize,
        got: usize,
    },
}

/// A smooth vector-valued function with an analytic Jacobian.
///
/// Both callables must be reentrant; evaluations returning non-finite values
/// surface as [`EvalError::NonFinite`].
#[derive(Clone)]
pub struct SmoothFn {
    arity_in: usize,
    arity_out: usize,
    eval: EvalClosure,
    jac: JacClosure,
    label: String,
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SmoothFn({}: R^{} -> R^{})",
            self.label, self.arity_in, self.arity_out
        )
    }
}

impl SmoothFn {
    pub fn new(
        label: impl Into<String>,
        arity_in: usize,
        arity_out: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        assert!(arity_in > 0 && arity_out > 0, "arities must be positive");
        Self {
            arity_in,
            arity_out,
            eval: Arc::new(eval),
            jac: Arc::new(jac),
            label: label.into(),
        }
    }

    /// Scalar-valued function from a value closure and a gradient closure.
    pub fn scalar(
        label: impl Into<String>,
        arity_in: usize,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            label,
            arity_in,
            1,
            move |x| DVector::from_element(1, f(x)),
            move |x| {
                let g = grad(x);
                DMatrix::from_row_slice(1, g.len(), g.as_slice())
            },
        )
    }

    /// Affine scalar function `a' x + b`.
    pub fn linear(label: impl Into<String>, a: DVector<f64>, b: f64) -> Self {
        let a2 = a.clone();
        Self::scalar(label, a.len(), move |x| a.dot(x) + b, move |_| a2.clone())
    }

    /// Constant vector function on `R^n`.
    pub fn constant(label: impl Into<String>, arity_in: usize, value: DVector<f64>) -> Self {
        let m = value.len();
        Self::new(
            label,
            arity_in,
            m,
            move |_| value.clone(),
            move |_| DMatrix::zeros(m, arity_in),
        )
    }

    pub fn arity_in(&self) -> usize {
        self.arity_in
    }

    pub fn arity_out(&self) -> usize {
        self.arity_out
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        if x.len() != self.arity_in {
            return Err(EvalError::Arity {
                context: self.label.clone(),
                expected: self.arity_in,
                got: x.len(),
            });
        }
        let v = (self.eval)(x);
        if v.len() != self.arity_out {
            return Err(EvalError::Arity {
                context: format!("{} (output)", self.label),
                expected: self.arity_out,
                got: v.len(),
            });
        }
        if v.iter().any(|t| !t.is_finite()) {
            return Err(EvalError::NonFinite {
                context: self.label.clone(),
                x: x.as_slice().to_vec(),
            });
        }
        Ok(v)
    }

    pub fn eval_scalar(&self, x: &DVector<f64>) -> Result<f64, EvalError> {
        debug_assert_eq!(self.arity_out, 1);
        Ok(self.eval(x)?[0])
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, EvalError> {
        if x.len() != self.arity_in {
            return Err(EvalError::Arity {
                context: self.label.clone(),
                expected: self.arity_in,
                got: x.len(),
            });
        }
        let j = (self.jac)(x);
        if j.nrows() != self.arity_out || j.ncols() != self.arity_in {
            return Err(EvalError::Arity {
                context: format!("{} (jacobian shape)", self.label),
                expected: self.arity_out * self.arity_in,
                got: j.nrows() * j.ncols(),
            });
        }
        if j.iter().any(|t| !t.is_finite()) {
            return Err(EvalError::NonFinite {
                context: format!("{} (jacobian)", self.label),
                x: x.as_slice().to_vec(),
            });
        }
        Ok(j)
    }

    /// Gradient of a scalar function as a column vector.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        debug_assert_eq!(self.arity_out, 1);
        let j = self.jacobian(x)?;
        Ok(j.row(0).transpose())
    }
}

/// Central finite-difference Jacobian, used by tests to cross-check the
/// analytic Jacobians supplied with each [`SmoothFn`].
pub fn finite_difference_jacobian(
    f: &SmoothFn,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>, EvalError> {
    let n = f.arity_in();
    let m = f.arity_out();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..n {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        let fp = f.eval(&xp)?;
        let fm = f.eval(&xm)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
        xp[j] = x[j];
        xm[j] = x[j];
    }
    Ok(jac)
}

/// One robust constraint `u' h(x) <= b(x)` for all `u` in `uset`.
#[derive(Debug, Clone)]
pub struct RobustConstraint {
    /// `h: R^n -> R^p`, the coefficient map multiplying the uncertainty.
    pub h: SmoothFn,
    /// `b: R^n -> R`, the right-hand side.
    pub b: SmoothFn,
    /// Uncertainty set of dimension `p`.
    pub uset: ConvexSet,
}

/// A nonlinear robust optimization problem in minimization form.
#[derive(Debug, Clone)]
pub struct RobustProblem {
    pub n: usize,
    pub f: SmoothFn,
    pub robust: Vec<RobustConstraint>,
    /// Deterministic equality constraints, value = 0.
    pub det_eq: Vec<SmoothFn>,
    /// Deterministic inequality constraints, value <= 0.
    pub det_ineq: Vec<SmoothFn>,
    /// Finite per-variable lower bounds.
    pub lower: DVector<f64>,
    /// Finite per-variable upper bounds.
    pub upper: DVector<f64>,
    /// Starting point, inside the bound box.
    pub x_nominal: DVector<f64>,
}

/// Value of `u' h_i(x) - b_i(x)`; nonpositive means constraint `i` holds at
/// the realization `u`.
pub fn robust_residual(
    problem: &RobustProblem,
    i: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64, EvalError> {
    let rc = &problem.robust[i];
    let hx = rc.h.eval(x).map_err(|e| wrap_residual_err(e, i, x, u))?;
    let bx = rc
        .b
        .eval_scalar(x)
        .map_err(|e| wrap_residual_err(e, i, x, u))?;
    if u.len() != hx.len() {
        return Err(EvalError::Arity {
            context: format!("robust_residual(constraint {i})"),
            expected: hx.len(),
            got: u.len(),
        });
    }
    let r = u.dot(&hx) - bx;
    if !r.is_finite() {
        return Err(wrap_residual_err(
            EvalError::NonFinite {
                context: format!("constraint {i} residual"),
                x: x.as_slice().to_vec(),
            },
            i,
            x,
            u,
        ));
    }
    Ok(r)
}

fn wrap_residual_err(e: EvalError, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> EvalError {
    EvalError::NonFinite {
        context: format!(
            "robust constraint {i} at x = {:?}, u = {:?}: {e}",
            x.as_slice(),
            u.as_slice()
        ),
        x: x.as_slice().to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    DimensionMismatch,
    NonFiniteBounds,
    EmptyBoundsBox,
    NominalOutOfBounds,
    /// Nonfatal: the constraint is vacuous and solvers drop it with a warning.
    EmptyUncertaintySet,
    EvaluationFailure,
}

#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub constraint: Option<usize>,
    pub kind: IssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    /// Issues that make the problem unsolvable. An empty uncertainty set is
    /// excluded: the corresponding constraint is vacuous and gets dropped.
    pub fn fatal(&self) -> Vec<&ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.kind != IssueKind::EmptyUncertaintySet)
            .collect()
    }

    /// Indices of robust constraints whose uncertainty set is empty.
    pub fn empty_set_constraints(&self) -> Vec<usize> {
        self.issues
            .iter()
            .filter(|i| i.kind == IssueKind::EmptyUncertaintySet)
            .filter_map(|i| i.constraint)
            .collect()
    }
}

/// Mechanical validation: dimension consistency, finite nonempty bounds,
/// nominal point inside the box, and per-constraint uncertainty-set
/// nonemptiness (via a feasibility solve for general sets).
pub fn validate(problem: &RobustProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = problem.n;
    let mut push = |constraint, kind, detail: String| {
        report.issues.push(ValidationIssue {
            constraint,
            kind,
            detail,
        });
    };

    if problem.f.arity_in() != n || problem.f.arity_out() != 1 {
        push(
            None,
            IssueKind::DimensionMismatch,
            format!("objective arity {}x{}", problem.f.arity_in(), problem.f.arity_out()),
        );
    }
    if problem.lower.len() != n || problem.upper.len() != n || problem.x_nominal.len() != n {
        push(
            None,
            IssueKind::DimensionMismatch,
            "bounds or nominal point length differs from n".to_string(),
        );
        return report;
    }
    for i in 0..n {
        if !problem.lower[i].is_finite() || !problem.upper[i].is_finite() {
            push(
                None,
                IssueKind::NonFiniteBounds,
                format!("variable {i} has non-finite bounds"),
            );
        } else if problem.lower[i] > problem.upper[i] {
            push(
                None,
                IssueKind::EmptyBoundsBox,
                format!("variable {i}: lower {} > upper {}", problem.lower[i], problem.upper[i]),
            );
        } else if problem.x_nominal[i] < problem.lower[i] - 1e-12
            || problem.x_nominal[i] > problem.upper[i] + 1e-12
        {
            push(
                None,
                IssueKind::NominalOutOfBounds,
                format!("x_nominal[{i}] = {} outside bounds", problem.x_nominal[i]),
            );
        }
    }

    for (i, rc) in problem.robust.iter().enumerate() {
        if rc.h.arity_in() != n {
            push(
                Some(i),
                IssueKind::DimensionMismatch,
                format!("h arity-in {} != n = {n}", rc.h.arity_in()),
            );
        }
        if rc.b.arity_in() != n || rc.b.arity_out() != 1 {
            push(
                Some(i),
                IssueKind::DimensionMismatch,
                format!("b arity {}x{}", rc.b.arity_in(), rc.b.arity_out()),
            );
        }
        if rc.h.arity_out() != rc.uset.dim() {
            push(
                Some(i),
                IssueKind::DimensionMismatch,
                format!(
                    "h arity-out {} != uncertainty dimension {}",
                    rc.h.arity_out(),
                    rc.uset.dim()
                ),
            );
            continue;
        }
        match rc.uset.is_empty() {
            Ok(true) => push(
                Some(i),
                IssueKind::EmptyUncertaintySet,
                "uncertainty set is empty; constraint is vacuous".to_string(),
            ),
            Ok(false) => {}
            Err(e) => push(
                Some(i),
                IssueKind::EvaluationFailure,
                format!("emptiness check failed: {e}"),
            ),
        }
    }

    for (what, fns) in [("det_eq", &problem.det_eq), ("det_ineq", &problem.det_ineq)] {
        for (j, c) in fns.iter().enumerate() {
            if c.arity_in() != n {
                push(
                    None,
                    IssueKind::DimensionMismatch,
                    format!("{what}[{j}] arity-in {} != n = {n}", c.arity_in()),
                );
            }
        }
    }

    report
}
