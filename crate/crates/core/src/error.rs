use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A quadratic program has an empty feasible set. The certificate is a
    /// nonnegative combination of the constraint rows that cancels the
    /// variables while leaving a positive constant.
    #[error("infeasible quadratic program{}", agent_suffix(*.agent))]
    Infeasible {
        agent: Option<usize>,
        certificate: Vec<f64>,
    },

    #[error("unbounded quadratic program{}", agent_suffix(*.agent))]
    Unbounded { agent: Option<usize> },

    #[error("QP solver hit the iteration limit ({iterations})")]
    IterationLimit { iterations: usize },

    #[error("KKT residual {residual:e} of the computed solution exceeds the tolerance")]
    KktTolerance { residual: f64 },

    #[error("point violates coupling constraint {constraint} by {residual:e}")]
    PointInfeasible { constraint: usize, residual: f64 },

    #[error("communication graph is disconnected")]
    Disconnected,

    #[error("constraint {constraint} is inconsistent with the graph: agents {agents:?} do not induce a connected subgraph")]
    InconsistentPattern {
        constraint: usize,
        agents: Vec<usize>,
    },

    #[error("fixed-point iteration did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence { sweeps: usize, last_change: f64 },

    #[error("constraint column {constraint} has a zero coefficient vector")]
    ZeroConstraintNorm { constraint: usize },

    #[error("LICQ violated for agent {agent} on constraint subset {subset:?}")]
    LicqViolation { agent: usize, subset: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step failed at t = {time}: {source}")]
    StepFailed {
        time: f64,
        #[source]
        source: Box<Error>,
    },
}

fn agent_suffix(agent: Option<usize>) -> String {
    match agent {
        Some(i) => format!(" (agent {})", i + 1),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn for_agent(self, agent: usize) -> Self {
        match self {
            Error::Infeasible { certificate, .. } => Error::Infeasible {
                agent: Some(agent),
                certificate,
            },
            Error::Unbounded { .. } => Error::Unbounded { agent: Some(agent) },
            other => other,
        }
    }

    /// Strips `StepFailed` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
