//! Dense convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x + b <= 0
//! ```
//!
//! with `H` symmetric positive semidefinite. The solver is a primal
//! active-set method. Equality-constrained subproblems are solved in the
//! null space of the working set with a pseudo-inverse of the reduced
//! Hessian, so singular `H` is handled without regularization: directions
//! of zero curvature along which the objective decreases are followed as
//! rays until a constraint blocks them. A feasible start comes from a small
//! phase-one program (`min t  s.t.  A x + b <= t, t >= -1`) whose optimal
//! multipliers double as an infeasibility certificate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{null_space, symmetric_eigen};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Relative tolerance for feasibility, stationarity and sign tests.
    pub tol: f64,
    /// Iteration cap for each phase. `None` picks a size-based default.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One nonnegative multiplier per constraint row.
    pub multipliers: DVector<f64>,
    /// Constraints in the final working set (linearly independent rows).
    pub working_set: Vec<usize>,
    pub iterations: usize,
}

impl QuadraticProgram {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        rows: DMatrix<f64>,
        offsets: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::Dimension {
                what: "QP hessian",
                expected: n,
                actual: hessian.nrows(),
            });
        }
        if rows.ncols() != n {
            return Err(Error::Dimension {
                what: "QP constraint columns",
                expected: n,
                actual: rows.ncols(),
            });
        }
        if rows.nrows() != offsets.len() {
            return Err(Error::Dimension {
                what: "QP constraint offsets",
                expected: rows.nrows(),
                actual: offsets.len(),
            });
        }
        Ok(Self {
            hessian,
            linear,
            rows,
            offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// `A x + b`; feasible iff every entry is `<= 0`.
    pub fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.rows * x + &self.offsets
    }

    /// Largest violation of the four KKT conditions at `(x, multipliers)`.
    pub fn kkt_residual(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
        let stationarity = &self.hessian * x + &self.linear + self.rows.transpose() * multipliers;
        let residuals = self.residuals(x);
        let mut worst = stationarity.amax();
        for (r, c) in residuals.iter().zip(multipliers.iter()) {
            worst = worst.max(r.max(0.0)).max((-c).max(0.0)).max((c * r).abs());
        }
        worst
    }

    fn data_scale(&self) -> f64 {
        [
            1.0,
            self.hessian.amax(),
            self.linear.amax(),
            self.rows.amax(),
            self.offsets.amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Solves the program. `start` is used as the initial point when it is
    /// feasible; otherwise a phase-one program supplies one.
    pub fn solve(&self, start: Option<&DVector<f64>>, options: &QpOptions) -> Result<QpSolution> {
        let n = self.dim();
        let p = self.constraint_count();
        let scale = self.data_scale();
        let max_iter = options.max_iter.unwrap_or(200 + 20 * (n + p));

        let x0 = match start {
            Some(x) if x.len() == n => x.clone(),
            Some(x) => {
                return Err(Error::Dimension {
                    what: "QP start point",
                    expected: n,
                    actual: x.len(),
                })
            }
            None => DVector::zeros(n),
        };
        // A slightly infeasible start would keep its violation on the
        // working set, so only exactly feasible starts are taken.
        let (x_feas, phase_one_iters) = if self.residuals(&x0).iter().all(|&r| r <= 0.0) {
            (x0, 0)
        } else {
            self.phase_one(x0, options, max_iter)?
        };

        let work = ActiveSet {
            hessian: &self.hessian,
            linear: &self.linear,
            rows: &self.rows,
            offsets: &self.offsets,
            tol: options.tol,
            scale,
            max_iter,
        };
        let (x, working_set, lambda, iters) = work.run(x_feas, Vec::new())?;
        let mut multipliers = DVector::zeros(p);
        for (&j, &l) in working_set.iter().zip(lambda.iter()) {
            multipliers[j] = l.max(0.0);
        }
        Ok(QpSolution {
            x,
            multipliers,
            working_set,
            iterations: phase_one_iters + iters,
        })
    }

    fn phase_one(
        &self,
        x0: DVector<f64>,
        options: &QpOptions,
        max_iter: usize,
    ) -> Result<(DVector<f64>, usize)> {
        let n = self.dim();
        let p = self.constraint_count();
        let mut rows = DMatrix::zeros(p + 1, n + 1);
        rows.view_mut((0, 0), (p, n)).copy_from(&self.rows);
        for k in 0..p {
            rows[(k, n)] = -1.0;
        }
        rows[(p, n)] = -1.0;
        let mut offsets = DVector::zeros(p + 1);
        offsets.rows_mut(0, p).copy_from(&self.offsets);
        offsets[p] = -1.0;
        let mut linear = DVector::zeros(n + 1);
        linear[n] = 1.0;
        let hessian = DMatrix::zeros(n + 1, n + 1);

        let t0 = self.residuals(&x0).iter().copied().fold(-1.0, f64::max);
        let mut z0 = DVector::zeros(n + 1);
        z0.rows_mut(0, n).copy_from(&x0);
        z0[n] = t0;

        let work = ActiveSet {
            hessian: &hessian,
            linear: &linear,
            rows: &rows,
            offsets: &offsets,
            tol: options.tol,
            scale: self.data_scale(),
            max_iter,
        };
        let (z, working_set, lambda, iters) = work.run(z0, Vec::new())?;
        let x = z.rows(0, n).into_owned();
        let t = z[n];
        let feas_tol = options.tol * self.data_scale() * (1.0 + x.amax());
        if t > feas_tol {
            let mut certificate = vec![0.0; p];
            for (&j, &l) in working_set.iter().zip(lambda.iter()) {
                if j < p {
                    certificate[j] = l.max(0.0);
                }
            }
            return Err(Error::Infeasible {
                agent: None,
                certificate,
            });
        }
        Ok((x, iters))
    }
}

struct ActiveSet<'a> {
    hessian: &'a DMatrix<f64>,
    linear: &'a DVector<f64>,
    rows: &'a DMatrix<f64>,
    offsets: &'a DVector<f64>,
    tol: f64,
    scale: f64,
    max_iter: usize,
}

enum Direction {
    /// Minimizer of the subproblem on the current working set.
    Newton(DVector<f64>),
    /// Descent direction of zero curvature.
    Ray(DVector<f64>),
}

impl ActiveSet<'_> {
    fn run(
        &self,
        mut x: DVector<f64>,
        mut work: Vec<usize>,
    ) -> Result<(DVector<f64>, Vec<usize>, DVector<f64>, usize)> {
        let n = x.len();
        let p = self.offsets.len();
        for iter in 0..self.max_iter {
            let grad = self.hessian * &x + self.linear;
            let step_tol = self.tol * (1.0 + x.amax());
            let direction = self.direction(&work, &grad, n);

            let (d, is_ray) = match direction {
                Direction::Newton(d) if d.amax() <= step_tol => {
                    let lambda = self.working_multipliers(&work, &grad);
                    let dual_tol = self.tol * self.scale * (1.0 + grad.amax());
                    match lambda
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l < -dual_tol)
                        .min_by(|a, b| a.1.total_cmp(b.1))
                    {
                        Some((pos, _)) => {
                            work.remove(pos);
                            continue;
                        }
                        None => return Ok((x, work, lambda, iter + 1)),
                    }
                }
                Direction::Newton(d) => (d, false),
                Direction::Ray(d) => (d, true),
            };

            let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            let d_norm = d.amax();
            for j in (0..p).filter(|j| !work.contains(j)) {
                let row = self.rows.row(j);
                let slope = row.dot(&d.transpose());
                if slope <= self.tol * row.amax() * d_norm {
                    continue;
                }
                let slack = -(row.dot(&x.transpose()) + self.offsets[j]);
                let ratio = slack.max(0.0) / slope;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(j);
                }
            }
            if alpha.is_infinite() {
                return Err(Error::Unbounded { agent: None });
            }
            x += alpha * &d;
            if let Some(j) = blocking {
                work.push(j);
            }
        }
        Err(Error::IterationLimit {
            iterations: self.max_iter,
        })
    }

    fn direction(&self, work: &[usize], grad: &DVector<f64>, n: usize) -> Direction {
        let z = null_space(&self.rows.select_rows(work));
        if z.ncols() == 0 {
            return Direction::Newton(DVector::zeros(n));
        }
        let reduced_h = z.transpose() * self.hessian * &z;
        let reduced_g = z.transpose() * grad;
        let (eigenvalues, eigenvectors) = symmetric_eigen(&reduced_h);
        let curv_tol = self.tol * self.scale.max(eigenvalues.amax());
        let grad_tol = self.tol * self.scale * (1.0 + grad.amax()) * 10.0;

        let mut newton = DVector::zeros(z.ncols());
        let mut flat = DVector::zeros(z.ncols());
        for (k, &mu) in eigenvalues.iter().enumerate() {
            let v = eigenvectors.column(k);
            let proj = v.dot(&reduced_g);
            if mu > curv_tol {
                newton -= (proj / mu) * v;
            } else {
                flat -= proj * v;
            }
        }
        if flat.amax() > grad_tol {
            Direction::Ray(&z * flat)
        } else {
            Direction::Newton(&z * newton)
        }
    }

    fn working_multipliers(&self, work: &[usize], grad: &DVector<f64>) -> DVector<f64> {
        if work.is_empty() {
            return DVector::zeros(0);
        }
        let a_w = self.rows.select_rows(work);
        let gram = &a_w * a_w.transpose();
        let rhs = -(&a_w * grad);
        match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .pseudo_inverse(1e-14)
                .map(|pinv| pinv * rhs)
                .unwrap_or_else(|_| DVector::zeros(work.len())),
        }
    }
}
