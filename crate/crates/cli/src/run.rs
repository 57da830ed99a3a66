//! Running a scenario: reports, trace CSVs and exit codes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ccflow::cbf::{simulate, ClosedLoopTrace, ControllerMode};
use ccflow::flows::{run_flow, FlowTrace, Variant};
use serde::Serialize;

use crate::error::{CliError, Issue, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_VIOLATION};
use crate::scenario::{Payload, ScenarioFile};

/// Coupling residuals and barrier values beyond this count as violations.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;
/// Consensus tolerance for the reported convergence step when the scenario
/// does not set one.
pub const DEFAULT_CONSENSUS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<ControllerMode>,
    pub k0: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub variant: Option<Variant>,
    pub sat_band: Option<f64>,
    pub sat_slope: Option<f64>,
    pub tol_consensus: Option<f64>,
}

pub fn apply_overrides(file: &mut ScenarioFile, o: &Overrides) -> Result<(), CliError> {
    if let Some(mode) = o.mode {
        match &mut file.payload {
            Payload::Cbf(c) => c.mode = mode,
            Payload::Static(_) => {
                return Err(CliError::Validation(vec![Issue {
                    line: None,
                    message: "--mode applies to cbf_sim scenarios only".into(),
                }]))
            }
        }
    }
    let flow = file.flow_mut();
    if let Some(v) = o.k0 {
        flow.gain = v;
    }
    if let Some(v) = o.dt {
        flow.dt = v;
    }
    if let Some(v) = o.horizon {
        flow.horizon = v;
    }
    if let Some(v) = o.variant {
        flow.variant = v;
    }
    if let Some(v) = o.sat_band {
        flow.saturation.band = v;
    }
    if let Some(v) = o.sat_slope {
        flow.saturation.slope = v;
    }
    if o.tol_consensus.is_some() {
        flow.consensus_tol = o.tol_consensus;
    }
    flow.validate().map_err(|e| {
        CliError::Validation(vec![Issue {
            line: None,
            message: e.to_string(),
        }])
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub kind: &'static str,
    pub seed: u64,
    pub variant: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<&'static str>,
    pub k0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auxiliary_scalars: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_phi: Option<f64>,
    /// `phi(y(T)) - cost*`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_phi_gap: Option<f64>,
    /// `final_phi_gap / max(1, |cost*|)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_relative_gap: Option<f64>,
    /// Signed maximum of the coupling residuals (static) or of the applied
    /// barrier conditions (closed loop) over the run; negative means
    /// strictly feasible throughout.
    pub max_violation: f64,
    pub consensus_tolerance: f64,
    /// First recorded step with `max_m |L c^m|_inf <= consensus_tolerance`.
    pub convergence_step: Option<usize>,
    pub final_consensus: f64,
    pub stopped_early: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety_minima: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrated_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrated_naive_cost: Option<f64>,
    pub violation_detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Static { trace: FlowTrace, oracle_cost: f64 },
    Cbf(ClosedLoopTrace),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Trace,
    pub exit_code: i32,
}

pub fn execute(file: &ScenarioFile, require_convergence: bool) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let flow = file.flow().clone();
    let tol = flow.consensus_tol.unwrap_or(DEFAULT_CONSENSUS_TOLERANCE);
    let mut report = RunReport {
        scenario: file.name.clone(),
        kind: "static_opt",
        seed: file.seed,
        variant: flow.variant.name(),
        mode: None,
        k0: flow.gain,
        dt: flow.dt,
        horizon: flow.horizon,
        steps: 0,
        wall_time_s: 0.0,
        auxiliary_scalars: None,
        oracle_cost: None,
        final_phi: None,
        final_phi_gap: None,
        final_relative_gap: None,
        max_violation: f64::NEG_INFINITY,
        consensus_tolerance: tol,
        convergence_step: None,
        final_consensus: 0.0,
        stopped_early: false,
        safety_minima: None,
        integrated_cost: None,
        integrated_naive_cost: None,
        violation_detected: false,
    };
    let mut needs_convergence = require_convergence;
    let trace = match &file.payload {
        Payload::Static(s) => {
            check_rank(&s.problem, flow.variant)?;
            let oracle = s.problem.centralized_solve()?;
            let trace = run_flow(&s.problem, &s.flow, None)?;
            let last = trace.last();
            let gap = last.phi - oracle.cost;
            report.steps = last.step;
            report.auxiliary_scalars = Some(trace.auxiliary_scalars);
            report.oracle_cost = Some(oracle.cost);
            report.final_phi = Some(last.phi);
            report.final_phi_gap = Some(gap);
            report.final_relative_gap = Some(gap / oracle.cost.abs().max(1.0));
            report.max_violation = trace.max_violation();
            report.convergence_step = trace.convergence_step(tol);
            report.final_consensus = last.consensus;
            report.stopped_early = trace.stopped_early;
            report.violation_detected = report.max_violation > VIOLATION_TOLERANCE;
            Trace::Static {
                trace,
                oracle_cost: oracle.cost,
            }
        }
        Payload::Cbf(c) => {
            let trace = simulate(c)?;
            let last = trace
                .records
                .last()
                .expect("simulation records the initial state");
            report.kind = "cbf_sim";
            report.mode = Some(c.mode.name());
            report.steps = last.step;
            report.max_violation = trace
                .records
                .iter()
                .flat_map(|r| r.condition_residuals.iter().copied())
                .fold(f64::NEG_INFINITY, f64::max);
            let minima = trace.safety_minima();
            report.violation_detected = minima.iter().any(|&h| h < -VIOLATION_TOLERANCE);
            report.safety_minima = Some(minima);
            report.integrated_cost = Some(trace.integrated_cost(c.flow.dt));
            report.integrated_naive_cost = Some(trace.integrated_naive_cost(c.flow.dt));
            report.final_consensus = last.consensus;
            if c.mode == ControllerMode::Distributed {
                report.convergence_step = trace
                    .records
                    .iter()
                    .find(|r| r.consensus <= tol)
                    .map(|r| r.step);
            } else {
                needs_convergence = false;
            }
            Trace::Cbf(trace)
        }
    };
    report.wall_time_s = started.elapsed().as_secs_f64();
    let exit_code = if report.violation_detected {
        EXIT_VIOLATION
    } else if needs_convergence && report.convergence_step.is_none() {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    };
    Ok(RunOutput {
        report,
        trace,
        exit_code,
    })
}

/// Local programs with rank-deficient held columns can turn infeasible
/// once `y` moves, so such runs are refused up front.
fn check_rank(problem: &ccflow::CoupledProblem, variant: Variant) -> Result<(), CliError> {
    let deficient: Vec<String> = problem
        .slater_rank_flags(variant.structure())
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if deficient.is_empty() {
        return Ok(());
    }
    let hint = if variant == Variant::Sparse {
        ""
    } else {
        "; try --variant sparse"
    };
    Err(CliError::Validation(vec![Issue {
        line: None,
        message: format!(
            "agents {} do not have full-rank coupling for the {} variant{hint}",
            deficient.join(", "),
            variant.name()
        ),
    }]))
}

/// Seventeen significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &Trace) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(writer);
    match trace {
        Trace::Static { trace, oracle_cost } => {
            let m = trace.records.first().map_or(0, |r| r.residuals.len());
            let mut header = vec![
                "step".to_string(),
                "time".into(),
                "phi".into(),
                "phi_gap".into(),
            ];
            header.extend((1..=m).map(|k| format!("residual_{k}")));
            header.push("consensus_inf_norm".into());
            csv.write_record(&header)?;
            for r in &trace.records {
                let mut row = vec![
                    r.step.to_string(),
                    num(r.time),
                    num(r.phi),
                    num(r.phi - oracle_cost),
                ];
                row.extend(r.residuals.iter().map(|&v| num(v)));
                row.push(num(r.consensus));
                csv.write_record(&row)?;
            }
        }
        Trace::Cbf(trace) => {
            let first = trace.records.first();
            let m = first.map_or(0, |r| r.barrier_values.len());
            let n = first.map_or(0, |r| r.positions.len());
            let mut header = vec![
                "step".to_string(),
                "time".into(),
                "phi".into(),
                "phi_gap".into(),
            ];
            header.extend((1..=m).map(|k| format!("residual_{k}")));
            header.push("consensus_inf_norm".into());
            header.extend((1..=m).map(|k| format!("h_{k}")));
            header.extend([
                "pointwise_cost".into(),
                "frozen_optimal_cost".into(),
                "frozen_naive_cost".into(),
            ]);
            for i in 1..=n {
                header.push(format!("p{i}_x"));
                header.push(format!("p{i}_y"));
            }
            csv.write_record(&header)?;
            for r in &trace.records {
                let mut row = vec![
                    r.step.to_string(),
                    num(r.time),
                    num(r.pointwise_cost),
                    num(r.pointwise_cost - r.frozen_optimal_cost),
                ];
                row.extend(r.condition_residuals.iter().map(|&v| num(v)));
                row.push(num(r.consensus));
                row.extend(r.barrier_values.iter().map(|&v| num(v)));
                row.extend([r.pointwise_cost, r.frozen_optimal_cost, r.frozen_naive_cost].map(num));
                for p in &r.positions {
                    row.push(num(p.x));
                    row.push(num(p.y));
                }
                csv.write_record(&row)?;
            }
        }
    }
    csv.flush().map_err(|e| CliError::Io {
        path: "trace".into(),
        source: e,
    })
}

/// Writes `trace.csv` and `report.json` under `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |e| CliError::Io { path, source: e }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let trace_path = dir.join("trace.csv");
    let file = std::fs::File::create(&trace_path).map_err(io(&trace_path))?;
    write_trace_csv(std::io::BufWriter::new(file), &output.trace)?;
    let report_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&output.report)?;
    std::fs::write(&report_path, json + "\n").map_err(io(&report_path))?;
    Ok(())
}
