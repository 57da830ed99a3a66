//! The per-agent program
//!
//! ```text
//!     phi_i(y) = min f_i(x_i)  s.t.  a_i^m' x_i + sigma_i^m(y) <= 0,  m in S_i
//! ```
//!
//! where `sigma_i^m(y) = b_i^m + sum_{j in nbrs} (y_i^m - y_j^m)` and `S_i` is the
//! agent's constraint set. Its multipliers are the subgradient information
//! exchanged by the flows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{AgentSpec, CoupledProblem, Structure};
use crate::qp::{QpOptions, QuadraticProgram};

/// Tolerance on the KKT residual of accepted local solutions.
pub const KKT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem<'a> {
    pub agent: &'a AgentSpec,
    /// Global indices of the constraints in the local program.
    pub constraints: Vec<usize>,
    /// One `sigma_i^m` per entry of `constraints`.
    pub shift: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub primal: DVector<f64>,
    /// Indexed by global constraint; zero for constraints not held locally.
    pub multipliers: DVector<f64>,
    pub value: f64,
    pub kkt_residual: f64,
}

impl LocalProblem<'_> {
    /// Rows `a_i^m'` for the held constraints.
    pub fn rows(&self) -> DMatrix<f64> {
        self.agent
            .coupling()
            .select_columns(&self.constraints)
            .transpose()
    }

    pub fn qp(&self) -> QuadraticProgram {
        QuadraticProgram {
            hessian: self.agent.cost().hessian().clone(),
            linear: self.agent.cost().linear().clone(),
            rows: self.rows(),
            offsets: self.shift.clone(),
        }
    }

    fn localize(&self, global: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|&m| global[m]),
        )
    }

    fn globalize(&self, local: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.agent.constraint_count());
        for (&m, &v) in self.constraints.iter().zip(local.iter()) {
            out[m] = v;
        }
        out
    }
}

/// The held constraint indices and their shifts `sigma_i^m(y)`.
pub fn constraint_shift(
    problem: &CoupledProblem,
    agent: usize,
    y: &DVector<f64>,
    structure: Structure,
) -> (Vec<usize>, DVector<f64>) {
    let constraints = problem.agent_constraints(agent, structure);
    let offsets = problem.agent(agent).offsets();
    let shift = DVector::from_iterator(
        constraints.len(),
        constraints
            .iter()
            .map(|&m| problem.allocation(y, agent, m, structure) + offsets[m]),
    );
    (constraints, shift)
}

pub fn local_problem<'a>(
    problem: &'a CoupledProblem,
    agent: usize,
    y: &DVector<f64>,
    structure: Structure,
) -> LocalProblem<'a> {
    let (constraints, shift) = constraint_shift(problem, agent, y, structure);
    LocalProblem {
        agent: problem.agent(agent),
        constraints,
        shift,
    }
}

/// Primal-dual optimizer of the local program.
///
/// When the optimal multiplier is not unique the one closest to
/// `warm_start`'s multipliers is returned (minimum norm without a warm
/// start). The warm start's primal is also used as the initial point.
pub fn solve_local(
    problem: &LocalProblem<'_>,
    warm_start: Option<&LocalSolution>,
) -> Result<LocalSolution> {
    let qp = problem.qp();
    let options = QpOptions::default();
    let start = warm_start
        .map(|w| &w.primal)
        .filter(|x| x.len() == qp.dim());
    let sol = qp.solve(start, &options)?;
    let target = warm_start
        .map(|w| problem.localize(&w.multipliers))
        .unwrap_or_else(|| DVector::zeros(problem.constraints.len()));
    let multipliers = select_multiplier(&qp, &sol.x, &sol.multipliers, &target)?;
    let kkt_residual = qp.kkt_residual(&sol.x, &multipliers);
    if kkt_residual > KKT_TOLERANCE {
        return Err(Error::KktTolerance {
            residual: kkt_residual,
        });
    }
    Ok(LocalSolution {
        value: problem.agent.cost().evaluate(&sol.x),
        multipliers: problem.globalize(&multipliers),
        primal: sol.x,
        kkt_residual,
    })
}

/// Among the multipliers that certify optimality of `x`, returns the one
/// closest to `target`.
///
/// The optimal dual face is `{c >= 0 : A_act' c = -grad, c = 0 off the
/// active set}`. Writing `c = c0 + N z` with `N` an orthonormal null-space
/// basis of `A_act'` turns the selection into a strictly convex QP in `z`.
fn select_multiplier(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    c0: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<DVector<f64>> {
    let residuals = qp.residuals(x);
    let scale = 1.0 + qp.offsets.amax() + qp.rows.amax() * x.amax();
    let active: Vec<usize> = (0..residuals.len())
        .filter(|&k| residuals[k] >= -1e-10 * scale)
        .collect();
    if active.is_empty() {
        return Ok(DVector::zeros(residuals.len()));
    }
    let a_act = qp.rows.select_rows(&active);
    let gram = &a_act * a_act.transpose();
    let (eigenvalues, eigenvectors) = crate::linalg::symmetric_eigen(&gram);
    let tol = 1e-10 * eigenvalues.amax().max(1.0);
    let null: Vec<usize> = (0..active.len())
        .filter(|&k| eigenvalues[k] <= tol)
        .collect();

    let mut c = c0.clone();
    if null.is_empty() {
        return Ok(c);
    }
    let basis = eigenvectors.select_columns(&null);
    let c_act = DVector::from_iterator(active.len(), active.iter().map(|&k| c0[k]));
    let t_act = DVector::from_iterator(active.len(), active.iter().map(|&k| target[k]));
    let r = basis.ncols();
    let face = QuadraticProgram {
        hessian: DMatrix::identity(r, r),
        linear: basis.transpose() * (&c_act - &t_act),
        rows: -basis.clone(),
        offsets: -c_act.clone(),
    };
    let z = face
        .solve(Some(&DVector::zeros(r)), &QpOptions::default())?
        .x;
    let chosen = c_act + basis * z;
    for (pos, &k) in active.iter().enumerate() {
        c[k] = chosen[pos].max(0.0);
    }
    Ok(c)
}

fn check_fixed_point_inputs(
    coupling: &DMatrix<f64>,
    x_nom: &DVector<f64>,
    shift: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    if coupling.nrows() != x_nom.len() {
        return Err(Error::Dimension {
            what: "nominal input",
            expected: coupling.nrows(),
            actual: x_nom.len(),
        });
    }
    for (what, v) in [("shift", shift), ("multiplier", c)] {
        if v.len() != coupling.ncols() {
            return Err(Error::Dimension {
                what,
                expected: coupling.ncols(),
                actual: v.len(),
            });
        }
    }
    let diag = DVector::from_iterator(
        coupling.ncols(),
        coupling.column_iter().map(|col| col.norm_squared()),
    );
    if let Some(m) = diag.iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroConstraintNorm { constraint: m });
    }
    Ok(diag)
}

/// `Lambda c - max(A' x_nom + shift + (Lambda - A'A) c, 0)` with
/// `Lambda = diag(A'A)`. Zero exactly at the optimal multipliers of
/// `min 1/2 |x - x_nom|^2  s.t.  A' x + shift <= 0`.
///
/// `coupling` holds the held columns `a_i^m` (d x k).
pub fn fixed_point_residual(
    coupling: &DMatrix<f64>,
    x_nom: &DVector<f64>,
    shift: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    let diag = check_fixed_point_inputs(coupling, x_nom, shift, c)?;
    let gram = coupling.transpose() * coupling;
    let inner =
        coupling.transpose() * x_nom + shift + DMatrix::from_diagonal(&diag) * c - &gram * c;
    Ok(diag.component_mul(c) - inner.map(|v| v.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 10_000,
        }
    }
}

/// One in-place sweep of `c_m <- max(r_m - sum_{k != m} G_mk c_k, 0) / G_mm`
/// over `m`, where `G = A'A` and `r = A' x_nom + shift`. Returns the largest
/// change.
pub fn fixed_point_sweep(gram: &DMatrix<f64>, rhs: &DVector<f64>, c: &mut DVector<f64>) -> f64 {
    let mut change = 0.0_f64;
    for m in 0..c.len() {
        let off: f64 = (0..c.len())
            .filter(|&k| k != m)
            .map(|k| gram[(m, k)] * c[k])
            .sum();
        let next = (rhs[m] - off).max(0.0) / gram[(m, m)];
        change = change.max((next - c[m]).abs());
        c[m] = next;
    }
    change
}

/// Solves the identity-Hessian local program through the multiplier
/// fixed-point equation. Multipliers are indexed like the columns of
/// `coupling`; the primal is `x = x_nom - A c` and the value `1/2 |A c|^2`.
pub fn solve_fixed_point(
    coupling: &DMatrix<f64>,
    x_nom: &DVector<f64>,
    shift: &DVector<f64>,
    c0: &DVector<f64>,
    options: &FixedPointOptions,
) -> Result<LocalSolution> {
    check_fixed_point_inputs(coupling, x_nom, shift, c0)?;
    let gram = coupling.transpose() * coupling;
    let rhs = coupling.transpose() * x_nom + shift;
    let mut c = c0.map(|v| v.max(0.0));
    let mut last_change = f64::INFINITY;
    for _ in 0..options.max_sweeps {
        last_change = fixed_point_sweep(&gram, &rhs, &mut c);
        if last_change <= options.tol {
            let correction = coupling * &c;
            let primal = x_nom - &correction;
            let qp = QuadraticProgram {
                hessian: DMatrix::identity(x_nom.len(), x_nom.len()),
                linear: -x_nom,
                rows: coupling.transpose(),
                offsets: shift.clone(),
            };
            let kkt_residual = qp.kkt_residual(&primal, &c);
            return Ok(LocalSolution {
                primal,
                value: 0.5 * correction.norm_squared(),
                multipliers: c,
                kkt_residual,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: options.max_sweeps,
        last_change,
    })
}
