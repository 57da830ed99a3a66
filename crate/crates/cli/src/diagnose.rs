//! Structural checks on a scenario before running it.

use std::fmt;

use ccflow::flows::problem_gain_bound;
use ccflow::network::check_consistency;
use ccflow::CoupledProblem;
use serde::Serialize;

use crate::error::CliError;
use crate::scenario::{Payload, ScenarioFile};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GainReport {
    pub gain: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub laplacian_norm: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Diagnostics {
    pub scenario: String,
    pub structure: &'static str,
    pub agents: usize,
    pub constraints: usize,
    pub connected: bool,
    /// Per agent: the held constraint columns are linearly independent.
    pub rank_flags: Vec<bool>,
    /// Per constraint: the involved agents induce a connected subgraph.
    pub consistency: Vec<bool>,
    pub disturbance: f64,
    pub margin: f64,
    pub gain_bound: Option<GainReport>,
    pub gain_bound_error: Option<String>,
}

impl Diagnostics {
    pub fn all_ok(&self) -> bool {
        self.connected
            && self.rank_flags.iter().all(|&f| f)
            && self.consistency.iter().all(|&f| f)
            && self.gain_bound.is_some()
    }
}

fn frozen(file: &ScenarioFile) -> Result<CoupledProblem, CliError> {
    Ok(match &file.payload {
        Payload::Static(s) => s.problem.clone(),
        Payload::Cbf(c) => c.frozen_problem(0.0, &c.initial)?.0,
    })
}

/// Checks the problem, or for closed-loop scenarios the frozen program at
/// the initial state, and evaluates the gain bound for `(disturbance, margin)`.
pub fn diagnose(
    file: &ScenarioFile,
    disturbance: f64,
    margin: f64,
) -> Result<Diagnostics, CliError> {
    let problem = frozen(file)?;
    let structure = file.flow().variant.structure();
    let (gain_bound, gain_bound_error) =
        match problem_gain_bound(&problem, structure, disturbance, margin) {
            Ok(g) => (
                Some(GainReport {
                    gain: g.gain,
                    lambda_min: g.lambda_min,
                    lambda_max: g.lambda_max,
                    laplacian_norm: g.laplacian_norm,
                }),
                None,
            ),
            Err(e) => (None, Some(e.to_string())),
        };
    Ok(Diagnostics {
        scenario: file.name.clone(),
        structure: match structure {
            ccflow::Structure::Dense => "dense",
            ccflow::Structure::Sparse => "sparse",
        },
        agents: problem.agent_count(),
        constraints: problem.constraint_count(),
        connected: problem.graph().is_connected(),
        rank_flags: problem.slater_rank_flags(structure),
        consistency: check_consistency(problem.graph(), problem.pattern()),
        disturbance,
        margin,
        gain_bound,
        gain_bound_error,
    })
}

fn flags(v: &[bool]) -> String {
    let bad: Vec<String> = v
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(k, _)| (k + 1).to_string())
        .collect();
    if bad.is_empty() {
        format!("ok ({} checked)", v.len())
    } else {
        format!("FAILED for {}", bad.join(", "))
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} agents, {} constraints, {} structure",
            self.scenario, self.agents, self.constraints, self.structure
        )?;
        writeln!(
            f,
            "graph connectivity: {}",
            if self.connected {
                "ok"
            } else {
                "FAILED (disconnected)"
            }
        )?;
        writeln!(f, "rank per agent: {}", flags(&self.rank_flags))?;
        writeln!(f, "constraint consistency: {}", flags(&self.consistency))?;
        match (&self.gain_bound, &self.gain_bound_error) {
            (Some(g), _) => writeln!(
                f,
                "gain bound (D = {}, eps = {}): k0 >= {:.6} (lambda in [{:.6}, {:.6}], |L| = {:.6})",
                self.disturbance, self.margin, g.gain, g.lambda_min, g.lambda_max, g.laplacian_norm
            ),
            (None, Some(e)) => writeln!(f, "gain bound: FAILED ({e})"),
            (None, None) => writeln!(f, "gain bound: unavailable"),
        }
    }
}
