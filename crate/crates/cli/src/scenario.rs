//! Scenario files.
//!
//! A scenario is a TOML document. `kind` selects a static optimization run
//! or a closed-loop barrier simulation; a `builtin` key starts from one of
//! the compiled-in scenarios and lets the rest of the file override it. See
//! `docs/scenario-format.md` for the full grammar.

use std::collections::BTreeSet;
use std::ops::Range;

use ccflow::cbf::{AffineBarrier, BudgetSplit, CbfScenario, ControllerMode, FormationSpec, Point};
use ccflow::flows::{FlowParams, Saturation, Variant};
use ccflow::{scenarios, AgentSpec, CoupledProblem, Graph, QuadraticCost, SparsityPattern};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{CliError, Issue};
use crate::random::{self, RandomSpec};

pub const BUILTINS: [&str; 2] = ["static9", "formation9"];

#[derive(Debug, Clone, PartialEq)]
pub struct StaticRun {
    pub problem: CoupledProblem,
    pub flow: FlowParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Static(StaticRun),
    Cbf(CbfScenario),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub name: String,
    pub seed: u64,
    pub payload: Payload,
}

impl ScenarioFile {
    pub fn kind(&self) -> Kind {
        match self.payload {
            Payload::Static(_) => Kind::StaticOpt,
            Payload::Cbf(_) => Kind::CbfSim,
        }
    }

    pub fn flow(&self) -> &FlowParams {
        match &self.payload {
            Payload::Static(s) => &s.flow,
            Payload::Cbf(c) => &c.flow,
        }
    }

    pub fn flow_mut(&mut self) -> &mut FlowParams {
        match &mut self.payload {
            Payload::Static(s) => &mut s.flow,
            Payload::Cbf(c) => &mut c.flow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    StaticOpt,
    CbfSim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub kind: Spanned<Kind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Spanned<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Spanned<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Spanned<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<Spanned<RawGraph>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<Spanned<RawFlow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<Spanned<RawRandom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<Spanned<RawSparsity>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<Spanned<RawAgent>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation: Option<Spanned<RawFormation>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub barriers: Vec<Spanned<RawBarrier>>,
}

impl RawScenario {
    fn empty(kind: Kind) -> Self {
        Self {
            kind: Spanned::new(0..0, kind),
            name: None,
            builtin: None,
            seed: None,
            mode: None,
            split: None,
            graph: None,
            flow: None,
            random: None,
            sparsity: None,
            agents: Vec::new(),
            formation: None,
            barriers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGraph {
    pub nodes: usize,
    /// `ring_chords` (nine nodes only), `ring`, `path` or `complete`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// 1-based endpoint pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Spanned<[i64; 2]>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFlow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_consensus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_window: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRandom {
    pub agents: usize,
    pub constraints: usize,
    #[serde(default = "one")]
    pub extra_dims: usize,
    #[serde(default)]
    pub sparse: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSparsity {
    /// One list of 1-based agents per constraint.
    pub sets: Vec<Spanned<Vec<i64>>>,
}

/// Cost `1/2 x'Hx + g'x + constant` and rows `a^m' x + b^m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAgent {
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFormation {
    pub initial: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    /// 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<i64>,
}

/// `h(t, p) = offset + time_slope t + sum_i weights_i' p_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBarrier {
    pub offset: f64,
    #[serde(default)]
    pub time_slope: f64,
    #[serde(default = "unit")]
    pub class_k_gain: f64,
    pub weights: Vec<[f64; 2]>,
}

fn unit() -> f64 {
    1.0
}

/// Resolves a built-in name or reads a file.
pub fn load_scenario(source: &str) -> Result<ScenarioFile, CliError> {
    load_scenario_seeded(source, None)
}

/// As [`load_scenario`], with `seed` replacing the file's seed.
pub fn load_scenario_seeded(source: &str, seed: Option<u64>) -> Result<ScenarioFile, CliError> {
    if BUILTINS.contains(&source) {
        let mut file = builtin(source, None).expect("listed built-in");
        if let Some(s) = seed {
            file.seed = s;
        }
        return Ok(file);
    }
    let text = std::fs::read_to_string(source).map_err(|e| CliError::Io {
        path: source.to_string(),
        source: e,
    })?;
    parse_scenario_seeded(&text, seed)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, CliError> {
    parse_scenario_seeded(text, None)
}

pub fn parse_scenario_seeded(text: &str, seed: Option<u64>) -> Result<ScenarioFile, CliError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        CliError::Parse(Issue {
            line: e.span().map(|s| line_of(text, &s)),
            message: e.message().trim().to_string(),
        })
    })?;
    Validator::new(text).build(raw, seed)
}

/// Compiled-in scenario, optionally on another graph.
pub fn builtin(name: &str, graph: Option<Graph>) -> Option<ScenarioFile> {
    let graph = graph.unwrap_or_else(scenarios::default_graph);
    let payload = match name {
        "static9" => Payload::Static(StaticRun {
            problem: scenarios::resource_allocation(graph).ok()?,
            flow: FlowParams::default(),
        }),
        "formation9" => Payload::Cbf(scenarios::formation(graph, ControllerMode::Distributed)),
        _ => return None,
    };
    Some(ScenarioFile {
        name: name.to_string(),
        seed: 0,
        payload,
    })
}

fn line_of(text: &str, span: &Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

struct Validator<'a> {
    text: &'a str,
    issues: Vec<Issue>,
}

impl<'a> Validator<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            issues: Vec::new(),
        }
    }

    fn at<T>(&mut self, spanned: &Spanned<T>, message: impl Into<String>) {
        let line = Some(line_of(self.text, &spanned.span()));
        self.issues.push(Issue {
            line,
            message: message.into(),
        });
    }

    fn build(mut self, raw: RawScenario, seed: Option<u64>) -> Result<ScenarioFile, CliError> {
        let seed = seed.or(raw.seed).unwrap_or(0);
        let kind = *raw.kind.get_ref();
        let graph = raw.graph.as_ref().and_then(|g| self.graph(g));

        let base = match &raw.builtin {
            Some(name) => match builtin(name.get_ref(), graph.clone()) {
                Some(file) if file.kind() == kind => Some(file.payload),
                Some(_) => {
                    self.at(
                        name,
                        format!("built-in `{}` does not match kind", name.get_ref()),
                    );
                    None
                }
                None => {
                    self.at(
                        name,
                        format!(
                            "unknown built-in `{}` (expected one of {})",
                            name.get_ref(),
                            BUILTINS.join(", ")
                        ),
                    );
                    None
                }
            },
            None => None,
        };

        let payload = match kind {
            Kind::StaticOpt => self.static_payload(&raw, base, graph, seed),
            Kind::CbfSim => self.cbf_payload(&raw, base, graph),
        };

        if !self.issues.is_empty() {
            self.issues.sort_by_key(|i| i.line);
            return Err(CliError::Validation(self.issues));
        }
        let name = raw
            .name
            .or_else(|| raw.builtin.map(|b| b.into_inner()))
            .unwrap_or_else(|| "scenario".to_string());
        Ok(ScenarioFile {
            name,
            seed,
            payload: payload.expect("no issues implies a payload"),
        })
    }

    fn graph(&mut self, raw: &Spanned<RawGraph>) -> Option<Graph> {
        let g = raw.get_ref();
        if g.nodes == 0 {
            self.at(raw, "graph needs at least one node");
            return None;
        }
        let n = g.nodes;
        let mut edges: BTreeSet<(usize, usize)> = match g.preset.as_deref() {
            None => BTreeSet::new(),
            Some("ring_chords") if n == 9 => {
                scenarios::default_graph().edges().into_iter().collect()
            }
            Some("ring_chords") => {
                self.at(raw, "preset `ring_chords` is defined for 9 nodes");
                return None;
            }
            Some("path") => (1..n).map(|k| (k - 1, k)).collect(),
            Some("ring") => (0..n)
                .map(|k| (k, (k + 1) % n))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect(),
            Some("complete") => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
            Some(other) => {
                self.at(raw, format!("unknown graph preset `{other}`"));
                return None;
            }
        };
        let mut ok = true;
        for edge in &g.edges {
            let [a, b] = *edge.get_ref();
            let range = 1..=n as i64;
            if !range.contains(&a) || !range.contains(&b) {
                self.at(
                    edge,
                    format!("edge ({a}, {b}) has an endpoint outside 1..={n}"),
                );
                ok = false;
            } else if a == b {
                self.at(edge, format!("edge ({a}, {b}) is a self-loop"));
                ok = false;
            } else {
                let (i, j) = ((a - 1) as usize, (b - 1) as usize);
                if !edges.insert((i.min(j), i.max(j))) {
                    self.at(edge, format!("edge ({a}, {b}) is listed twice"));
                    ok = false;
                }
            }
        }
        if !ok {
            return None;
        }
        match Graph::new(n, &edges.into_iter().collect::<Vec<_>>()) {
            Ok(graph) => Some(graph),
            Err(e) => {
                self.at(raw, e.to_string());
                None
            }
        }
    }

    fn flow(&mut self, raw: Option<&Spanned<RawFlow>>, mut params: FlowParams) -> FlowParams {
        let Some(spanned) = raw else { return params };
        let f = spanned.get_ref();
        if let Some(v) = f.k0 {
            params.gain = v;
        }
        if let Some(v) = f.dt {
            params.dt = v;
        }
        if let Some(v) = f.horizon {
            params.horizon = v;
        }
        if let Some(v) = &f.variant {
            match v.parse::<Variant>() {
                Ok(variant) => params.variant = variant,
                Err(e) => self.at(spanned, e.to_string()),
            }
        }
        if let Some(v) = f.sat_band {
            params.saturation.band = v;
        }
        if let Some(v) = f.sat_slope {
            params.saturation.slope = v;
        }
        if f.tol_consensus.is_some() {
            params.consensus_tol = f.tol_consensus;
        }
        if let Some(v) = f.consensus_window {
            params.consensus_window = v;
        }
        if let Err(e) = params.validate() {
            self.at(spanned, e.to_string());
        }
        params
    }

    fn static_payload(
        &mut self,
        raw: &RawScenario,
        base: Option<Payload>,
        graph: Option<Graph>,
        seed: u64,
    ) -> Option<Payload> {
        for (present, key) in [
            (raw.mode.is_some(), "mode"),
            (raw.split.is_some(), "split"),
            (raw.formation.is_some(), "formation"),
            (!raw.barriers.is_empty(), "barriers"),
        ] {
            if present {
                self.issues.push(Issue {
                    line: None,
                    message: format!("`{key}` only applies to kind = \"cbf_sim\""),
                });
            }
        }
        let base = base.map(|p| match p {
            Payload::Static(s) => s,
            Payload::Cbf(_) => unreachable!("kind checked"),
        });
        let sources = [base.is_some(), raw.random.is_some(), !raw.agents.is_empty()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            self.issues.push(Issue {
                line: None,
                message: "use only one of `builtin`, `[random]` and `[[agents]]`".into(),
            });
            return None;
        }
        let default_flow = base.as_ref().map(|b| b.flow.clone()).unwrap_or_default();
        let flow = self.flow(raw.flow.as_ref(), default_flow);

        let problem = if let Some(b) = base {
            Some(b.problem)
        } else if let Some(r) = &raw.random {
            self.random_problem(r, graph, seed)
        } else if !raw.agents.is_empty() {
            let graph = match (graph, &raw.graph) {
                (Some(g), _) => Some(g),
                (None, None) => {
                    self.issues.push(Issue {
                        line: None,
                        message: "explicit agents need a [graph] table".into(),
                    });
                    None
                }
                (None, Some(_)) => None,
            };
            self.explicit_problem(raw, graph?)
        } else {
            self.issues.push(Issue {
                line: None,
                message: "static_opt needs `builtin`, `[random]` or `[[agents]]`".into(),
            });
            None
        }?;
        Some(Payload::Static(StaticRun { problem, flow }))
    }

    fn random_problem(
        &mut self,
        raw: &Spanned<RawRandom>,
        graph: Option<Graph>,
        seed: u64,
    ) -> Option<CoupledProblem> {
        let r = raw.get_ref();
        if r.agents == 0 || r.constraints == 0 {
            self.at(
                raw,
                "random problems need at least one agent and one constraint",
            );
            return None;
        }
        if graph.is_some() {
            self.at(
                raw,
                "random problems generate their own graph; drop the [graph] table",
            );
            return None;
        }
        let spec = RandomSpec {
            agents: r.agents,
            constraints: r.constraints,
            extra_dims: r.extra_dims,
            sparse: r.sparse,
        };
        Some(random::coupled_problem(&mut random::seeded(seed), &spec).0)
    }

    fn explicit_problem(&mut self, raw: &RawScenario, graph: Graph) -> Option<CoupledProblem> {
        let n = raw.agents.len();
        if graph.node_count() != n {
            let g = raw.graph.as_ref().expect("graph present");
            self.at(
                g,
                format!(
                    "graph has {} nodes but {n} agents are listed",
                    graph.node_count()
                ),
            );
            return None;
        }
        let m = raw.agents[0].get_ref().offsets.len();
        let mut agents = Vec::with_capacity(n);
        for (i, spanned) in raw.agents.iter().enumerate() {
            let a = spanned.get_ref();
            let d = a.linear.len();
            let mut bad = Vec::new();
            if a.hessian.len() != d || a.hessian.iter().any(|r| r.len() != d) {
                bad.push(format!("hessian must be {d} x {d}"));
            }
            if a.offsets.len() != m {
                bad.push(format!("expected {m} offsets, got {}", a.offsets.len()));
            }
            if a.rows.len() != a.offsets.len() {
                bad.push(format!(
                    "{} rows for {} offsets",
                    a.rows.len(),
                    a.offsets.len()
                ));
            }
            if a.rows.iter().any(|r| r.len() != d) {
                bad.push(format!("every constraint row needs {d} entries"));
            }
            if !bad.is_empty() {
                for msg in bad {
                    self.at(spanned, format!("agent {}: {msg}", i + 1));
                }
                continue;
            }
            let hessian = DMatrix::from_fn(d, d, |r, c| a.hessian[r][c]);
            let rows = DMatrix::from_fn(m, d, |r, c| a.rows[r][c]);
            let result =
                QuadraticCost::new(hessian, DVector::from_vec(a.linear.clone()), a.constant)
                    .and_then(|cost| {
                        AgentSpec::from_rows(cost, rows, DVector::from_vec(a.offsets.clone()))
                    });
            match result {
                Ok(agent) => agents.push(agent),
                Err(e) => self.at(spanned, format!("agent {}: {e}", i + 1)),
            }
        }
        if agents.len() != n {
            return None;
        }
        let result = match &raw.sparsity {
            None => CoupledProblem::new(agents, graph),
            Some(sp) => {
                let pattern = self.pattern(sp, n, m)?;
                CoupledProblem::with_pattern(agents, graph, pattern)
            }
        };
        match result {
            Ok(p) => Some(p),
            Err(e) => {
                self.issues.push(Issue {
                    line: raw.sparsity.as_ref().map(|s| line_of(self.text, &s.span())),
                    message: e.to_string(),
                });
                None
            }
        }
    }

    fn pattern(
        &mut self,
        raw: &Spanned<RawSparsity>,
        n: usize,
        m: usize,
    ) -> Option<SparsityPattern> {
        let sets = &raw.get_ref().sets;
        if sets.len() != m {
            self.at(raw, format!("expected {m} agent sets, got {}", sets.len()));
            return None;
        }
        let mut out = Vec::with_capacity(m);
        let mut ok = true;
        for (k, set) in sets.iter().enumerate() {
            let mut s = BTreeSet::new();
            for &a in set.get_ref() {
                if a < 1 || a > n as i64 {
                    self.at(
                        set,
                        format!("constraint {}: agent {a} outside 1..={n}", k + 1),
                    );
                    ok = false;
                } else {
                    s.insert((a - 1) as usize);
                }
            }
            out.push(s);
        }
        if !ok {
            return None;
        }
        match SparsityPattern::from_constraint_sets(n, out) {
            Ok(p) => Some(p),
            Err(e) => {
                self.at(raw, e.to_string());
                None
            }
        }
    }

    fn cbf_payload(
        &mut self,
        raw: &RawScenario,
        base: Option<Payload>,
        graph: Option<Graph>,
    ) -> Option<Payload> {
        for (present, key) in [
            (raw.random.is_some(), "random"),
            (raw.sparsity.is_some(), "sparsity"),
            (!raw.agents.is_empty(), "agents"),
        ] {
            if present {
                self.issues.push(Issue {
                    line: None,
                    message: format!("`{key}` only applies to kind = \"static_opt\""),
                });
            }
        }
        let base = base.map(|p| match p {
            Payload::Cbf(c) => c,
            Payload::Static(_) => unreachable!("kind checked"),
        });
        let mode = match &raw.mode {
            Some(m) => match m.get_ref().parse::<ControllerMode>() {
                Ok(mode) => Some(mode),
                Err(e) => {
                    self.at(m, e.to_string());
                    None
                }
            },
            None => None,
        };
        let split = match &raw.split {
            Some(s) => match s.get_ref().as_str() {
                "local" => Some(BudgetSplit::Local),
                "even" => Some(BudgetSplit::Even),
                other => {
                    self.at(
                        s,
                        format!("unknown budget split `{other}` (expected local or even)"),
                    );
                    None
                }
            },
            None => None,
        };
        let default_flow = base.as_ref().map(|b| b.flow.clone()).unwrap_or(FlowParams {
            variant: Variant::Sign,
            saturation: Saturation::default(),
            ..FlowParams::default()
        });
        let flow = self.flow(raw.flow.as_ref(), default_flow);

        let mut scenario = match base {
            Some(b) => {
                if raw.formation.is_some() || !raw.barriers.is_empty() {
                    self.issues.push(Issue {
                        line: None,
                        message: "built-in scenarios fix `formation` and `barriers`".into(),
                    });
                    return None;
                }
                b
            }
            None => {
                let Some(graph) = graph else {
                    if raw.graph.is_none() {
                        self.issues.push(Issue {
                            line: None,
                            message: "cbf_sim needs a [graph] table or a built-in".into(),
                        });
                    }
                    return None;
                };
                self.explicit_cbf(raw, graph)?
            }
        };
        scenario.flow = flow;
        if let Some(mode) = mode {
            scenario.mode = mode;
        }
        if let Some(split) = split {
            scenario.split = split;
        }
        if let Err(e) = scenario.validate() {
            self.issues.push(Issue {
                line: None,
                message: e.to_string(),
            });
            return None;
        }
        Some(Payload::Cbf(scenario))
    }

    fn explicit_cbf(&mut self, raw: &RawScenario, graph: Graph) -> Option<CbfScenario> {
        let n = graph.node_count();
        let Some(formation) = &raw.formation else {
            self.issues.push(Issue {
                line: None,
                message: "cbf_sim needs a [formation] table".into(),
            });
            return None;
        };
        if raw.barriers.is_empty() {
            self.issues.push(Issue {
                line: None,
                message: "cbf_sim needs at least one [[barriers]] entry".into(),
            });
            return None;
        }
        let f = formation.get_ref();
        let mut ok = true;
        for (what, len) in [("initial", f.initial.len()), ("targets", f.targets.len())] {
            if len != n {
                self.at(
                    formation,
                    format!("`{what}` lists {len} positions for {n} agents"),
                );
                ok = false;
            }
        }
        let leader = match f.leader {
            Some(l) if l < 1 || l > n as i64 => {
                self.at(formation, format!("leader {l} outside 1..={n}"));
                ok = false;
                None
            }
            Some(l) => Some((l - 1) as usize),
            None => None,
        };
        let mut barriers = Vec::new();
        for (k, spanned) in raw.barriers.iter().enumerate() {
            let b = spanned.get_ref();
            if b.weights.len() != n {
                self.at(
                    spanned,
                    format!(
                        "barrier {}: {} weights for {n} agents",
                        k + 1,
                        b.weights.len()
                    ),
                );
                ok = false;
                continue;
            }
            let weights = b.weights.iter().map(|w| Point::new(w[0], w[1])).collect();
            match AffineBarrier::new(b.offset, b.time_slope, weights, b.class_k_gain) {
                Ok(barrier) => barriers.push(barrier),
                Err(e) => {
                    self.at(spanned, format!("barrier {}: {e}", k + 1));
                    ok = false;
                }
            }
        }
        if !ok {
            return None;
        }
        let points = |v: &[[f64; 2]]| v.iter().map(|p| Point::new(p[0], p[1])).collect::<Vec<_>>();
        Some(CbfScenario {
            graph,
            formation: FormationSpec {
                targets: points(&f.targets),
                leader,
            },
            barriers,
            initial: points(&f.initial),
            mode: ControllerMode::Distributed,
            flow: FlowParams::default(),
            split: BudgetSplit::Local,
        })
    }
}

fn raw_graph(graph: &Graph) -> Spanned<RawGraph> {
    Spanned::new(
        0..0,
        RawGraph {
            nodes: graph.node_count(),
            preset: None,
            edges: graph
                .edges()
                .into_iter()
                .map(|(i, j)| Spanned::new(0..0, [i as i64 + 1, j as i64 + 1]))
                .collect(),
        },
    )
}

fn raw_flow(flow: &FlowParams) -> Spanned<RawFlow> {
    Spanned::new(
        0..0,
        RawFlow {
            k0: Some(flow.gain),
            dt: Some(flow.dt),
            horizon: Some(flow.horizon),
            variant: Some(flow.variant.name().to_string()),
            sat_band: Some(flow.saturation.band),
            sat_slope: Some(flow.saturation.slope),
            tol_consensus: flow.consensus_tol,
            consensus_window: Some(flow.consensus_window),
        },
    )
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

/// Fully explicit TOML for a scenario; parsing it gives the same scenario.
pub fn to_toml(file: &ScenarioFile) -> String {
    let mut raw = RawScenario::empty(file.kind());
    raw.name = Some(file.name.clone());
    raw.seed = Some(file.seed);
    match &file.payload {
        Payload::Static(s) => {
            raw.graph = Some(raw_graph(s.problem.graph()));
            raw.flow = Some(raw_flow(&s.flow));
            let p = s.problem.pattern();
            raw.sparsity = Some(Spanned::new(
                0..0,
                RawSparsity {
                    sets: (0..p.constraint_count())
                        .map(|m| {
                            Spanned::new(
                                0..0,
                                p.agents_of(m).iter().map(|&i| i as i64 + 1).collect(),
                            )
                        })
                        .collect(),
                },
            ));
            raw.agents = s
                .problem
                .agents()
                .iter()
                .map(|a| {
                    Spanned::new(
                        0..0,
                        RawAgent {
                            hessian: rows_of(a.cost().hessian()),
                            linear: a.cost().linear().iter().copied().collect(),
                            constant: a.cost().constant(),
                            rows: rows_of(&a.coupling().transpose()),
                            offsets: a.offsets().iter().copied().collect(),
                        },
                    )
                })
                .collect();
        }
        Payload::Cbf(c) => {
            raw.mode = Some(Spanned::new(0..0, c.mode.name().to_string()));
            raw.split = Some(Spanned::new(
                0..0,
                match c.split {
                    BudgetSplit::Local => "local",
                    BudgetSplit::Even => "even",
                }
                .to_string(),
            ));
            raw.graph = Some(raw_graph(&c.graph));
            raw.flow = Some(raw_flow(&c.flow));
            let pair = |p: &Point| [p.x, p.y];
            raw.formation = Some(Spanned::new(
                0..0,
                RawFormation {
                    initial: c.initial.iter().map(pair).collect(),
                    targets: c.formation.targets.iter().map(pair).collect(),
                    leader: c.formation.leader.map(|l| l as i64 + 1),
                },
            ));
            raw.barriers = c
                .barriers
                .iter()
                .map(|b| {
                    Spanned::new(
                        0..0,
                        RawBarrier {
                            offset: b.offset,
                            time_slope: b.time_slope,
                            class_k_gain: b.class_k_gain,
                            weights: b.state_weights.iter().map(pair).collect(),
                        },
                    )
                })
                .collect();
        }
    }
    toml::to_string(&raw).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let s = load_scenario("static9").unwrap();
        assert_eq!(s.kind(), Kind::StaticOpt);
        let f = load_scenario("formation9").unwrap();
        assert_eq!(f.kind(), Kind::CbfSim);
        assert_eq!(f.flow().variant, Variant::Sign);
    }

    #[test]
    fn zero_based_edge_is_rejected_with_line() {
        let text = "kind = \"static_opt\"\n\n[random]\nagents = 2\nconstraints = 1\n";
        assert!(parse_scenario(text).is_ok());
        let text = "kind = \"cbf_sim\"\nbuiltin = \"formation9\"\n\n[graph]\nnodes = 9\nedges = [\n  [1, 2],\n  [0, 3],\n]\n";
        match parse_scenario(text) {
            Err(CliError::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, Some(8));
                assert!(issues[0].message.contains("(0, 3)"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        match parse_scenario("kind = \"static_opt\"\nseed = \"x\"\n") {
            Err(CliError::Parse(issue)) => assert_eq!(issue.line, Some(2)),
            other => panic!("{other:?}"),
        }
    }
}
