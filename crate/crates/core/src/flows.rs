//! Auxiliary-variable flows, discretized by forward Euler.
//!
//! Every round all agents read the same snapshot of `y`, solve their local
//! programs, exchange multipliers with their neighbors and move `y` against
//! the assembled subgradient:
//!
//! ```text
//!     dense:   y_i^m <- y_i^m - dt k0 sum_{j in N_i}   (c_i^m - c_j^m)
//!     sparse:  y_i^m <- y_i^m - dt k0 sum_{j in N_i^m} (c_i^m - c_j^m),  m in M_i
//!     sign:    y_i^m <- y_i^m - dt k0 sat(sum_{j in N_i} (c_i^m - c_j^m))
//! ```
//!
//! Because each local program is feasible, the summed local constraints give
//! back the coupled ones at every round.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::localqp::{local_problem, solve_local, LocalSolution};
use crate::network::{Graph, Permutation};
use crate::problem::{CoupledProblem, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Dense,
    Sparse,
    Sign,
}

impl Variant {
    pub fn structure(self) -> Structure {
        match self {
            Variant::Sparse => Structure::Sparse,
            Variant::Dense | Variant::Sign => Structure::Dense,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::Sparse => "sparse",
            Variant::Sign => "sign",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Variant::Dense),
            "sparse" => Ok(Variant::Sparse),
            "sign" => Ok(Variant::Sign),
            other => Err(Error::InvalidParameter(format!(
                "unknown flow variant `{other}`"
            ))),
        }
    }
}

/// Piecewise-linear stand-in for `sign`: `±1` outside `[-band, band]`,
/// `slope * v` inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub band: f64,
    pub slope: f64,
}

impl Default for Saturation {
    fn default() -> Self {
        Self {
            band: 0.1,
            slope: 10.0,
        }
    }
}

impl Saturation {
    pub fn apply(&self, v: f64) -> f64 {
        if v > self.band {
            1.0
        } else if v < -self.band {
            -1.0
        } else {
            v * self.slope
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub gain: f64,
    pub dt: f64,
    pub horizon: f64,
    pub variant: Variant,
    pub saturation: Saturation,
    /// Stop once the consensus error stays below this for `consensus_window`
    /// consecutive records.
    pub consensus_tol: Option<f64>,
    pub consensus_window: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            dt: 0.01,
            horizon: 20.0,
            variant: Variant::Dense,
            saturation: Saturation::default(),
            consensus_tol: None,
            consensus_window: 100,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if self.variant == Variant::Sign
            && !(self.saturation.band >= 0.0 && self.saturation.slope >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "saturation band and slope must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Number of Euler steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// All agents' local solutions at one `y` snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub solutions: Vec<LocalSolution>,
    /// Constraint-major stack `c_C`.
    pub multipliers: DVector<f64>,
    pub primal: DVector<f64>,
    /// `phi(y) = sum_i phi_i(y)`.
    pub phi: f64,
    /// Constraint-major subgradient `zeta`.
    pub subgradient: DVector<f64>,
}

impl Round {
    /// `max_m |zeta^m|_inf`; vanishes at multiplier consensus.
    pub fn consensus_error(&self) -> f64 {
        self.subgradient.amax()
    }
}

/// `zeta_i^m = sum_{j in nbrs(i, m)} (c_i^m - c_j^m)` from a constraint-major
/// multiplier stack.
pub fn assemble_subgradient(
    problem: &CoupledProblem,
    structure: Structure,
    multipliers: &DVector<f64>,
) -> DVector<f64> {
    let mut zeta = DVector::zeros(multipliers.len());
    for m in 0..problem.constraint_count() {
        for i in 0..problem.agent_count() {
            let ci = multipliers[problem.y_index(i, m)];
            zeta[problem.y_index(i, m)] = problem
                .exchange_neighbors(i, m, structure)
                .into_iter()
                .map(|j| ci - multipliers[problem.y_index(j, m)])
                .sum();
        }
    }
    zeta
}

/// Solves every local program at `y`. Agents are independent given the
/// snapshot; `warm` carries each agent's previous solution.
pub fn solve_round(
    problem: &CoupledProblem,
    structure: Structure,
    y: &DVector<f64>,
    warm: Option<&[LocalSolution]>,
) -> Result<Round> {
    let n = problem.agent_count();
    let expected = n * problem.constraint_count();
    if y.len() != expected {
        return Err(Error::Dimension {
            what: "auxiliary vector",
            expected,
            actual: y.len(),
        });
    }
    let solutions = (0..n)
        .map(|i| {
            let lp = local_problem(problem, i, y, structure);
            solve_local(&lp, warm.and_then(|w| w.get(i))).map_err(|e| e.for_agent(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut multipliers = DVector::zeros(expected);
    for (i, sol) in solutions.iter().enumerate() {
        for m in 0..problem.constraint_count() {
            multipliers[problem.y_index(i, m)] = sol.multipliers[m];
        }
    }
    let primal = problem.stack(
        &solutions
            .iter()
            .map(|s| s.primal.clone())
            .collect::<Vec<_>>(),
    );
    let phi = solutions.iter().map(|s| s.value).sum();
    let subgradient = assemble_subgradient(problem, structure, &multipliers);
    Ok(Round {
        solutions,
        multipliers,
        primal,
        phi,
        subgradient,
    })
}

pub fn phi_total(problem: &CoupledProblem, structure: Structure, y: &DVector<f64>) -> Result<f64> {
    Ok(solve_round(problem, structure, y, None)?.phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub time: f64,
    pub y: DVector<f64>,
    pub round: Round,
}

impl FlowState {
    pub fn x(&self) -> &DVector<f64> {
        &self.round.primal
    }

    /// Constraint-major multipliers `c_C`.
    pub fn c(&self) -> &DVector<f64> {
        &self.round.multipliers
    }

    /// Agent-major multipliers `c_A`.
    pub fn c_agent_major(&self, problem: &CoupledProblem) -> DVector<f64> {
        Permutation::agents_to_constraints(problem.agent_count(), problem.constraint_count())
            .inverse()
            .apply(&self.round.multipliers)
    }

    pub fn phi(&self) -> f64 {
        self.round.phi
    }
}

/// Checks the structural preconditions of a variant and builds the state at
/// `y0` (zero when `None`).
pub fn initial_state(
    problem: &CoupledProblem,
    variant: Variant,
    y0: Option<&DVector<f64>>,
) -> Result<FlowState> {
    let structure = variant.structure();
    let shared: Vec<usize> = (0..problem.constraint_count())
        .filter(|&m| !problem.pattern().is_local(m))
        .collect();
    match structure {
        Structure::Dense => {
            if !shared.is_empty() && !problem.graph().is_connected() {
                return Err(Error::Disconnected);
            }
        }
        Structure::Sparse => {
            for &m in &shared {
                let agents: Vec<usize> = problem.pattern().agents_of(m).iter().copied().collect();
                if !problem.graph().induces_connected(&agents) {
                    return Err(Error::InconsistentPattern {
                        constraint: m,
                        agents,
                    });
                }
            }
        }
    }
    let n = problem.agent_count() * problem.constraint_count();
    let mut y = match y0 {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(Error::Dimension {
                what: "initial auxiliary vector",
                expected: n,
                actual: v.len(),
            })
        }
        None => DVector::zeros(n),
    };
    for (k, live) in problem.auxiliary_mask(structure).into_iter().enumerate() {
        if !live {
            y[k] = 0.0;
        }
    }
    let round = solve_round(problem, structure, &y, None)?;
    Ok(FlowState {
        time: 0.0,
        y,
        round,
    })
}

fn advance(
    problem: &CoupledProblem,
    params: &FlowParams,
    state: &FlowState,
    variant: Variant,
) -> Result<FlowState> {
    let scale = params.dt * params.gain;
    let zeta = &state.round.subgradient;
    let y = match variant {
        Variant::Dense | Variant::Sparse => &state.y - zeta * scale,
        Variant::Sign => &state.y - zeta.map(|v| params.saturation.apply(v)) * scale,
    };
    let time = state.time + params.dt;
    let round = solve_round(
        problem,
        variant.structure(),
        &y,
        Some(&state.round.solutions),
    )
    .map_err(|e| Error::StepFailed {
        time,
        source: Box::new(e),
    })?;
    Ok(FlowState { time, y, round })
}

pub fn dense_step(
    problem: &CoupledProblem,
    params: &FlowParams,
    state: &FlowState,
) -> Result<FlowState> {
    advance(problem, params, state, Variant::Dense)
}

pub fn sparse_step(
    problem: &CoupledProblem,
    params: &FlowParams,
    state: &FlowState,
) -> Result<FlowState> {
    advance(problem, params, state, Variant::Sparse)
}

pub fn sign_step(
    problem: &CoupledProblem,
    params: &FlowParams,
    state: &FlowState,
) -> Result<FlowState> {
    advance(problem, params, state, Variant::Sign)
}

pub fn step(problem: &CoupledProblem, params: &FlowParams, state: &FlowState) -> Result<FlowState> {
    advance(problem, params, state, params.variant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub step: usize,
    pub time: f64,
    pub phi: f64,
    pub residuals: DVector<f64>,
    pub consensus: f64,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub variant: Variant,
    /// Auxiliary scalars allocated by the run's structure.
    pub auxiliary_scalars: usize,
    pub records: Vec<FlowRecord>,
    pub stopped_early: bool,
}

impl FlowTrace {
    pub fn last(&self) -> &FlowRecord {
        self.records.last().expect("trace holds the initial record")
    }

    /// Largest coupling residual over all records.
    pub fn max_violation(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.residuals.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First record whose consensus error is at most `tol`.
    pub fn convergence_step(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.consensus <= tol)
            .map(|r| r.step)
    }
}

fn record(problem: &CoupledProblem, step: usize, state: &FlowState) -> Result<FlowRecord> {
    Ok(FlowRecord {
        step,
        time: state.time,
        phi: state.round.phi,
        residuals: problem.coupling_residuals(&state.round.primal)?,
        consensus: state.round.consensus_error(),
        y: state.y.clone(),
        x: state.round.primal.clone(),
    })
}

/// Runs `params.steps()` rounds from `y0` (zero by default). The trace holds
/// the initial record plus one record per step.
pub fn run_flow(
    problem: &CoupledProblem,
    params: &FlowParams,
    y0: Option<&DVector<f64>>,
) -> Result<FlowTrace> {
    params.validate()?;
    let mut state = initial_state(problem, params.variant, y0)?;
    let mut records = vec![record(problem, 0, &state)?];
    let mut calm = 0usize;
    let mut stopped_early = false;
    for k in 1..=params.steps() {
        if let Some(tol) = params.consensus_tol {
            calm = if state.round.consensus_error() <= tol {
                calm + 1
            } else {
                0
            };
            if calm >= params.consensus_window {
                stopped_early = true;
                break;
            }
        }
        state = step(problem, params, &state)?;
        records.push(record(problem, k, &state)?);
    }
    Ok(FlowTrace {
        variant: params.variant,
        auxiliary_scalars: problem.auxiliary_scalar_count(params.variant.structure()),
        records,
        stopped_early,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBound {
    pub gain: f64,
    /// Smallest eigenvalue of `(A_I' A_I)^-1` over agents and subsets.
    pub lambda_min: f64,
    /// Largest eigenvalue of `(A_I' A_I)^-1` over agents and subsets.
    pub lambda_max: f64,
    pub laplacian_norm: f64,
}

/// Largest constraint set for which subsets are enumerated.
pub const GAIN_BOUND_MAX_CONSTRAINTS: usize = 12;

/// Smallest `k0` with `k0 lambda_min - N D sqrt(M) lambda_max |L| - margin >= 0`.
///
/// `couplings[i]` is agent `i`'s `A_i` (d_i x M) and `constraint_sets[i]` the
/// constraints it holds; every nonempty subset must have linearly
/// independent columns.
pub fn gain_bound(
    couplings: &[DMatrix<f64>],
    constraint_sets: &[Vec<usize>],
    graph: &Graph,
    constraint_count: usize,
    disturbance: f64,
    margin: f64,
) -> Result<GainBound> {
    if couplings.len() != constraint_sets.len() {
        return Err(Error::Dimension {
            what: "constraint sets",
            expected: couplings.len(),
            actual: constraint_sets.len(),
        });
    }
    if !(disturbance >= 0.0) || !(margin > 0.0) {
        return Err(Error::InvalidParameter(
            "disturbance bound must be nonnegative and margin positive".into(),
        ));
    }
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = 0.0_f64;
    for (agent, (a, held)) in couplings.iter().zip(constraint_sets).enumerate() {
        if held.len() > GAIN_BOUND_MAX_CONSTRAINTS {
            return Err(Error::InvalidParameter(format!(
                "agent {} holds {} constraints; subset enumeration is capped at {}",
                agent + 1,
                held.len(),
                GAIN_BOUND_MAX_CONSTRAINTS
            )));
        }
        for mask in 1u32..(1u32 << held.len()) {
            let subset: Vec<usize> = (0..held.len())
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| held[b])
                .collect();
            let cols = a.select_columns(&subset);
            let eig = crate::linalg::symmetric_eigenvalues(&(cols.transpose() * &cols));
            let (lo, hi) = (eig.min(), eig.max());
            if lo <= 1e-12 * hi.max(1e-300) || lo <= 0.0 {
                return Err(Error::LicqViolation { agent, subset });
            }
            lambda_min = lambda_min.min(1.0 / hi);
            lambda_max = lambda_max.max(1.0 / lo);
        }
    }
    if lambda_min.is_infinite() {
        return Err(Error::InvalidParameter(
            "no agent holds a constraint".into(),
        ));
    }
    let laplacian_norm = graph.laplacian_norm();
    let n = couplings.len() as f64;
    let gain = (n * disturbance * (constraint_count as f64).sqrt() * lambda_max * laplacian_norm
        + margin)
        / lambda_min;
    Ok(GainBound {
        gain,
        lambda_min,
        lambda_max,
        laplacian_norm,
    })
}

/// [`gain_bound`] over the constraint sets a problem assigns to its agents.
pub fn problem_gain_bound(
    problem: &CoupledProblem,
    structure: Structure,
    disturbance: f64,
    margin: f64,
) -> Result<GainBound> {
    let couplings: Vec<DMatrix<f64>> = problem
        .agents()
        .iter()
        .map(|a| a.coupling().clone())
        .collect();
    let sets: Vec<Vec<usize>> = (0..problem.agent_count())
        .map(|i| problem.agent_constraints(i, structure))
        .collect();
    gain_bound(
        &couplings,
        &sets,
        problem.graph(),
        problem.constraint_count(),
        disturbance,
        margin,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AgentSpec, QuadraticCost};

    fn symmetric_pair() -> CoupledProblem {
        // min 1/2 (x1^2 + x2^2)  s.t.  -x1 - x2 + 2 <= 0
        let agents = (0..2)
            .map(|_| {
                AgentSpec::new(
                    QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap(),
                    DMatrix::from_element(1, 1, -1.0),
                    DVector::from_element(1, 1.0),
                )
                .unwrap()
            })
            .collect();
        CoupledProblem::new(agents, Graph::path(2).unwrap()).unwrap()
    }

    #[test]
    fn saturation_values() {
        let sat = Saturation::default();
        assert_eq!(sat.apply(0.2), 1.0);
        assert!((sat.apply(-0.05) + 0.5).abs() < 1e-15);
        assert_eq!(sat.apply(0.0), 0.0);
        assert_eq!(sat.apply(-0.3), -1.0);
    }

    #[test]
    fn subgradient_on_two_node_path() {
        let p = symmetric_pair();
        let zeta =
            assemble_subgradient(&p, Structure::Dense, &DVector::from_row_slice(&[2.0, 0.0]));
        assert_eq!(zeta, DVector::from_row_slice(&[2.0, -2.0]));
        let zeta =
            assemble_subgradient(&p, Structure::Dense, &DVector::from_row_slice(&[3.0, 3.0]));
        assert_eq!(zeta, DVector::zeros(2));
    }

    #[test]
    fn symmetric_problem_is_optimal_immediately() {
        let p = symmetric_pair();
        let params = FlowParams::default();
        let s0 = initial_state(&p, Variant::Dense, None).unwrap();
        assert!((s0.round.multipliers[0] - s0.round.multipliers[1]).abs() < 1e-14);
        let s1 = dense_step(&p, &params, &s0).unwrap();
        assert_eq!(s1.y, DVector::zeros(2));
        assert!((s1.x()[0] - 1.0).abs() < 1e-12 && (s1.x()[1] - 1.0).abs() < 1e-12);
        assert!((s1.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_keeps_initial_record() {
        let p = symmetric_pair();
        let params = FlowParams {
            horizon: 0.0,
            ..FlowParams::default()
        };
        let trace = run_flow(&p, &params, None).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].step, 0);
    }

    #[test]
    fn early_exit_after_calm_window() {
        let p = symmetric_pair();
        let params = FlowParams {
            consensus_tol: Some(1e-9),
            consensus_window: 5,
            ..FlowParams::default()
        };
        let trace = run_flow(&p, &params, None).unwrap();
        assert!(trace.stopped_early);
        assert_eq!(trace.records.len(), 5);
    }

    #[test]
    fn rejects_bad_params() {
        let p = symmetric_pair();
        for params in [
            FlowParams {
                gain: 0.0,
                ..FlowParams::default()
            },
            FlowParams {
                dt: -1.0,
                ..FlowParams::default()
            },
            FlowParams {
                horizon: f64::NAN,
                ..FlowParams::default()
            },
        ] {
            assert!(run_flow(&p, &params, None).is_err());
        }
    }

    #[test]
    fn gain_bound_hand_examples() {
        let graph = Graph::path(2).unwrap();
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let pair = [a.clone(), a];
        let gb = gain_bound(&pair, &[vec![0], vec![0]], &graph, 1, 0.0, 0.1).unwrap();
        assert!((gb.lambda_min - 0.5).abs() < 1e-15 && (gb.lambda_max - 0.5).abs() < 1e-15);
        assert!((gb.gain - 0.2).abs() < 1e-15);
        assert!((gb.laplacian_norm - 2.0).abs() < 1e-12);

        let with_d = gain_bound(&pair, &[vec![0], vec![0]], &graph, 1, 0.5, 0.1).unwrap();
        // (2 * 0.5 * 1 * 0.5 * 2 + 0.1) / 0.5
        assert!((with_d.gain - 2.2).abs() < 1e-12);
    }

    #[test]
    fn gain_bound_licq_violation() {
        let graph = Graph::new(1, &[]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            gain_bound(&[a], &[vec![0, 1]], &graph, 2, 0.0, 0.1),
            Err(Error::LicqViolation { agent: 0, subset }) if subset == vec![0, 1]
        ));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("sparse".parse::<Variant>().unwrap(), Variant::Sparse);
        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!(Variant::Sign.structure(), Structure::Dense);
    }
}
