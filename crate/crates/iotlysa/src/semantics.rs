//! Executable reduction semantics with an instrumented store.
//!
//! A [`Configuration`] holds the runtime state of a system: one store, the
//! remaining control processes, sensor and actuator states per node, plus the
//! pending multi-outputs that have been evaluated but not yet delivered to
//! every receiver. Every stored or transmitted value is an
//! [`InstrumentedValue`]: the concrete value paired with the abstraction a
//! static analysis would assign to it, so traces can be replayed against an
//! estimate.
//!
//! Scheduling is a uniform random choice among the enabled reduction steps,
//! driven by a seeded generator; a run is reproducible from its seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ast::{
    cut, subst_actuator_iter_var, subst_iter_var, subst_sensor_iter_var, AbstractValue,
    ActionName, ActuatorId, ActuatorProc, Component, KeyId, Label, Literal, Process, SensorId,
    SensorProc, System, Term,
};
use crate::config::{AnalysisConfig, Builtin, FunctionKind, ResultSort};
use crate::security::Classification;

/// Chains of immediately nested iterations are unrolled at most this far when
/// forcing a process head; a residual `mu` head is inert, not an error.
const MU_FUEL: usize = 64;

/// Plain runtime value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConcreteValue {
    Lit {
        value: Literal,
    },
    Enc {
        args: Vec<ConcreteValue>,
        key: KeyId,
    },
    /// Application of an uninterpreted function, or of a built-in whose
    /// arguments were not of the sort it computes on.
    App {
        func: String,
        args: Vec<ConcreteValue>,
    },
}

impl ConcreteValue {
    pub fn int(n: i64) -> Self {
        ConcreteValue::Lit {
            value: Literal::Int(n),
        }
    }

    pub fn bool(b: bool) -> Self {
        ConcreteValue::Lit {
            value: Literal::Bool(b),
        }
    }
}

impl fmt::Display for ConcreteValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConcreteValue::Lit { value } => write!(f, "{value}"),
            ConcreteValue::Enc { args, key } => {
                write!(f, "{{")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, "}} key {key}")
            }
            ConcreteValue::App { func, args } => {
                write!(f, "{func}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A concrete value carrying the abstraction assigned to it at creation time.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstrumentedValue {
    pub concrete: ConcreteValue,
    #[serde(rename = "abstract")]
    pub abstract_value: AbstractValue,
}

/// Address in a node's store: a reserved sensor location or a variable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StoreKey {
    Sensor(SensorId),
    Var(String),
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreKey::Sensor(i) => write!(f, "@{i}"),
            StoreKey::Var(x) => write!(f, "{x}"),
        }
    }
}

impl StoreKey {
    pub fn parse(s: &str) -> StoreKey {
        match s.strip_prefix('@').and_then(|rest| rest.parse::<u32>().ok()) {
            Some(i) => StoreKey::Sensor(SensorId(i)),
            None => StoreKey::Var(s.to_string()),
        }
    }
}

impl Serialize for StoreKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StoreKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(StoreKey::parse(&String::deserialize(deserializer)?))
    }
}

/// Observable part of a reduction step. Internal steps, output evaluation and
/// actuator handshakes produce no event; the actuator firing does.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Comm {
        sender: Label,
        receiver: Label,
        values: Vec<InstrumentedValue>,
    },
    SensorStore {
        node: Label,
        sensor: SensorId,
        value: InstrumentedValue,
    },
    Assign {
        node: Label,
        var: String,
        value: InstrumentedValue,
    },
    DecryptOk {
        node: Label,
        key: KeyId,
    },
    CondTaken {
        node: Label,
        branch: bool,
    },
    ActFire {
        node: Label,
        actuator: ActuatorId,
        action: ActionName,
    },
}

/// Why a term failed to evaluate. A failing premise leaves its reduction step
/// disabled; at quiescence the first diagnosable failure terminates the trace
/// as a diagnostic rather than a crash.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{node}: {name} is not in the store")]
    UndefinedVariable { node: Label, name: String },
    #[error("{node}: {func} applied to {got} arguments, declared with {expected}")]
    ArityMismatch {
        node: Label,
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("{node}: guard evaluated to non-boolean value {value}")]
    NonBooleanGuard { node: Label, value: String },
}

/// A finished (or truncated) run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub seed: u64,
    pub depth: usize,
    pub max_steps: usize,
    /// Reduction steps taken; larger than `events.len()` because some steps
    /// are silent.
    pub steps: usize,
    pub events: Vec<Event>,
    /// Set when the run stopped on a blocked redex with an evaluation error.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("trace line {0}: {1}")]
    Line(usize, serde_json::Error),
    #[error("trace has no trailer line")]
    MissingTrailer,
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    seed: u64,
    depth: usize,
    max_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct TraceTrailer {
    steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
}

impl Trace {
    /// One JSON object per line: a header, then the events, then a trailer.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let header = TraceHeader {
            seed: self.seed,
            depth: self.depth,
            max_steps: self.max_steps,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        let trailer = TraceTrailer {
            steps: self.steps,
            diagnostic: self.diagnostic.clone(),
        };
        out.push_str(&serde_json::to_string(&trailer).expect("trailer serializes"));
        out.push('\n');
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Trace, TraceError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (&first, rest) = lines.split_first().ok_or(TraceError::Empty)?;
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| TraceError::Line(1, e))?;
        let (&last, middle) = rest.split_last().ok_or(TraceError::MissingTrailer)?;
        let trailer: TraceTrailer =
            serde_json::from_str(last).map_err(|e| TraceError::Line(lines.len(), e))?;
        let mut events = Vec::with_capacity(middle.len());
        for (i, line) in middle.iter().enumerate() {
            events.push(serde_json::from_str(line).map_err(|e| TraceError::Line(i + 2, e))?);
        }
        Ok(Trace {
            seed: header.seed,
            depth: header.depth,
            max_steps: header.max_steps,
            steps: trailer.steps,
            events,
            diagnostic: trailer.diagnostic,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SensorState {
    pub id: SensorId,
    pub proc: SensorProc,
    /// Position in the configured reading stream; wraps around.
    pub cursor: usize,
}

#[derive(Clone, Debug)]
pub struct ActuatorState {
    pub id: ActuatorId,
    pub proc: ActuatorProc,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub label: Label,
    pub store: BTreeMap<StoreKey, InstrumentedValue>,
    pub procs: Vec<Process>,
    pub sensors: Vec<SensorState>,
    pub actuators: Vec<ActuatorState>,
}

/// An evaluated multi-output waiting to be delivered to the rest of its
/// receiver set.
#[derive(Clone, Debug)]
pub struct PendingOutput {
    pub origin: Label,
    pub values: Vec<InstrumentedValue>,
    pub remaining: BTreeSet<Label>,
}

/// One applicable instance of a reduction rule, addressed by index so a
/// scheduler can pick among them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnabledStep {
    /// A sensor writes the next stream value to its reserved location.
    SensorStore { node: usize, sensor: usize },
    SensorTau { node: usize, sensor: usize },
    ActuatorTau { node: usize, actuator: usize },
    /// A triggered actuator performs its action.
    ActuatorFire { node: usize, actuator: usize },
    /// A process hands an accepted command to a waiting actuator.
    ActCom { node: usize, proc: usize, actuator: usize },
    Assign { node: usize, proc: usize },
    /// A multi-output evaluates its terms and becomes pending.
    EvOut { node: usize, proc: usize },
    Cond { node: usize, proc: usize },
    Decrypt { node: usize, proc: usize },
    /// A pending output is delivered to one matching input.
    MultiCom {
        pending: usize,
        node: usize,
        proc: usize,
    },
}

/// Runtime state of a whole system plus the scheduling generator.
#[derive(Clone, Debug)]
pub struct Configuration {
    pub nodes: Vec<NodeState>,
    pub pending: Vec<PendingOutput>,
    pub steps: usize,
    cfg: AnalysisConfig,
    cls: Classification,
    rng: ChaCha8Rng,
}

/// Builds the configuration and runs it to quiescence or the step bound.
pub fn run_system(system: &System, cfg: &AnalysisConfig) -> Trace {
    Configuration::new(system, cfg).run()
}

impl Configuration {
    /// Expects a validated system and a resolved configuration.
    pub fn new(system: &System, cfg: &AnalysisConfig) -> Configuration {
        let nodes = system
            .nodes
            .iter()
            .map(|n| NodeState {
                label: n.label.clone(),
                store: BTreeMap::new(),
                procs: n.processes().cloned().collect(),
                sensors: n
                    .components
                    .iter()
                    .filter_map(|c| match c {
                        Component::Sensor { id, body } => Some(SensorState {
                            id: *id,
                            proc: body.clone(),
                            cursor: 0,
                        }),
                        _ => None,
                    })
                    .collect(),
                actuators: n
                    .components
                    .iter()
                    .filter_map(|c| match c {
                        Component::Actuator { id, body } => Some(ActuatorState {
                            id: *id,
                            proc: body.clone(),
                        }),
                        _ => None,
                    })
                    .collect(),
            })
            .collect();
        let mut configuration = Configuration {
            nodes,
            pending: Vec::new(),
            steps: 0,
            cfg: cfg.clone(),
            cls: Classification::from_config(cfg),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        configuration.force_heads();
        configuration
    }

    /// Evaluates a term against the store of node `ni`, producing the concrete
    /// value and its abstraction in lock step.
    pub fn eval_term(&self, ni: usize, term: &Term) -> Result<InstrumentedValue, EvalError> {
        let node = &self.nodes[ni];
        let d = self.cfg.depth;
        match term {
            Term::Const(lit) => Ok(InstrumentedValue {
                concrete: ConcreteValue::Lit { value: lit.clone() },
                abstract_value: cut(
                    &AbstractValue::Const {
                        value: lit.clone(),
                        label: node.label.clone(),
                    },
                    d,
                    &self.cls,
                ),
            }),
            Term::SensorLoc(i) => {
                node.store
                    .get(&StoreKey::Sensor(*i))
                    .cloned()
                    .ok_or_else(|| EvalError::UndefinedVariable {
                        node: node.label.clone(),
                        name: format!("@{i}"),
                    })
            }
            Term::Var(x) => {
                node.store
                    .get(&StoreKey::Var(x.clone()))
                    .cloned()
                    .ok_or_else(|| EvalError::UndefinedVariable {
                        node: node.label.clone(),
                        name: x.clone(),
                    })
            }
            Term::Enc { args, key } => {
                let vs = args
                    .iter()
                    .map(|t| self.eval_term(ni, t))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(InstrumentedValue {
                    concrete: ConcreteValue::Enc {
                        args: vs.iter().map(|v| v.concrete.clone()).collect(),
                        key: key.clone(),
                    },
                    abstract_value: cut(
                        &AbstractValue::Enc {
                            args: vs.into_iter().map(|v| v.abstract_value).collect(),
                            key: key.clone(),
                            label: node.label.clone(),
                        },
                        d,
                        &self.cls,
                    ),
                })
            }
            Term::App { func, args } => {
                let vs = args
                    .iter()
                    .map(|t| self.eval_term(ni, t))
                    .collect::<Result<Vec<_>, _>>()?;
                if let Some(sig) = self.cfg.signature(func) {
                    if sig.arity != vs.len() {
                        return Err(EvalError::ArityMismatch {
                            node: node.label.clone(),
                            func: func.clone(),
                            expected: sig.arity,
                            got: vs.len(),
                        });
                    }
                }
                let concrete_args: Vec<ConcreteValue> =
                    vs.iter().map(|v| v.concrete.clone()).collect();
                let concrete = match self.cfg.signature(func).map(|sig| sig.kind) {
                    Some(FunctionKind::Builtin(b)) => apply_builtin(b, func, &concrete_args),
                    _ => ConcreteValue::App {
                        func: func.clone(),
                        args: concrete_args,
                    },
                };
                Ok(InstrumentedValue {
                    concrete,
                    abstract_value: cut(
                        &AbstractValue::App {
                            func: func.clone(),
                            args: vs.into_iter().map(|v| v.abstract_value).collect(),
                            label: node.label.clone(),
                        },
                        d,
                        &self.cls,
                    ),
                })
            }
        }
    }

    /// How a guard value steers a conditional: a truth value directly, an
    /// application of boolean result sort by a scheduler coin, anything else
    /// not at all.
    fn guard_outcome(&self, v: &ConcreteValue) -> Option<GuardOutcome> {
        match v {
            ConcreteValue::Lit {
                value: Literal::Bool(b),
            } => Some(GuardOutcome::Truth(*b)),
            ConcreteValue::App { func, .. } => match self.cfg.signature(func).map(|s| s.result) {
                Some(ResultSort::Boolean) => Some(GuardOutcome::Coin),
                _ => None,
            },
            _ => None,
        }
    }

    /// True when the message tuple fits the input prefix: exact length and the
    /// evaluated match terms agree with the leading values.
    fn input_accepts(
        &self,
        ni: usize,
        matches: &[Term],
        binders: usize,
        values: &[InstrumentedValue],
    ) -> Result<bool, EvalError> {
        if values.len() != matches.len() + binders {
            return Ok(false);
        }
        for (t, v) in matches.iter().zip(values) {
            if self.eval_term(ni, t)?.concrete != v.concrete {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Enumerates every applicable rule instance in a canonical order.
    pub fn enabled_steps(&self) -> Vec<EnabledStep> {
        let mut out = Vec::new();
        for (ni, node) in self.nodes.iter().enumerate() {
            for (si, sensor) in node.sensors.iter().enumerate() {
                match &sensor.proc {
                    SensorProc::StoreValue { .. } => {
                        out.push(EnabledStep::SensorStore { node: ni, sensor: si })
                    }
                    SensorProc::Tau(_) => {
                        out.push(EnabledStep::SensorTau { node: ni, sensor: si })
                    }
                    _ => {}
                }
            }
            for (ai, actuator) in node.actuators.iter().enumerate() {
                match &actuator.proc {
                    ActuatorProc::Tau(_) => {
                        out.push(EnabledStep::ActuatorTau { node: ni, actuator: ai })
                    }
                    ActuatorProc::Triggered { .. } => {
                        out.push(EnabledStep::ActuatorFire { node: ni, actuator: ai })
                    }
                    _ => {}
                }
            }
            for (pi, proc) in node.procs.iter().enumerate() {
                match proc {
                    Process::Assign { term, .. } => {
                        if self.eval_term(ni, term).is_ok() {
                            out.push(EnabledStep::Assign { node: ni, proc: pi });
                        }
                    }
                    Process::MultiOut { terms, .. } => {
                        if terms.iter().all(|t| self.eval_term(ni, t).is_ok()) {
                            out.push(EnabledStep::EvOut { node: ni, proc: pi });
                        }
                    }
                    Process::Cond { guard, .. } => {
                        if let Ok(v) = self.eval_term(ni, guard) {
                            if self.guard_outcome(&v.concrete).is_some() {
                                out.push(EnabledStep::Cond { node: ni, proc: pi });
                            }
                        }
                    }
                    Process::Decrypt {
                        subject,
                        matches,
                        binders,
                        key,
                        ..
                    } => {
                        if let Ok(Some(_)) =
                            self.try_decrypt(ni, subject, matches, binders, key)
                        {
                            out.push(EnabledStep::Decrypt { node: ni, proc: pi });
                        }
                    }
                    Process::ActOut {
                        actuator, action, ..
                    } => {
                        for (ai, a) in node.actuators.iter().enumerate() {
                            if a.id != *actuator {
                                continue;
                            }
                            if let ActuatorProc::Command { accepted, .. } = &a.proc {
                                if accepted.contains(action) {
                                    out.push(EnabledStep::ActCom {
                                        node: ni,
                                        proc: pi,
                                        actuator: ai,
                                    });
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        for (qi, pending) in self.pending.iter().enumerate() {
            for (ni, node) in self.nodes.iter().enumerate() {
                if pending.origin == node.label
                    || !pending.remaining.contains(&node.label)
                    || !self.cfg.comp.compatible(&pending.origin, &node.label)
                {
                    continue;
                }
                for (pi, proc) in node.procs.iter().enumerate() {
                    let Process::Input {
                        matches, binders, ..
                    } = proc
                    else {
                        continue;
                    };
                    if let Ok(true) =
                        self.input_accepts(ni, matches, binders.len(), &pending.values)
                    {
                        out.push(EnabledStep::MultiCom {
                            pending: qi,
                            node: ni,
                            proc: pi,
                        });
                    }
                }
            }
        }
        out
    }

    /// The decryption premise: subject evaluates to an encryption under `key`
    /// whose arity fits and whose prefix matches. Returns the instrumented
    /// values for the binder positions.
    fn try_decrypt(
        &self,
        ni: usize,
        subject: &Term,
        matches: &[Term],
        binders: &[String],
        key: &KeyId,
    ) -> Result<Option<Vec<InstrumentedValue>>, EvalError> {
        let v = self.eval_term(ni, subject)?;
        let ConcreteValue::Enc { args, key: used } = &v.concrete else {
            return Ok(None);
        };
        if used != key || args.len() != matches.len() + binders.len() {
            return Ok(None);
        }
        for (t, inner) in matches.iter().zip(args.iter()) {
            if &self.eval_term(ni, t)?.concrete != inner {
                return Ok(None);
            }
        }
        // Recover per-component abstractions from the subject's abstraction;
        // once the cut has collapsed it to a top marker the components
        // inherit that marker.
        let avs: Vec<AbstractValue> = match &v.abstract_value {
            AbstractValue::Enc { args: avs, .. } => avs.clone(),
            other => vec![other.clone(); args.len()],
        };
        let bound = args
            .iter()
            .zip(avs)
            .skip(matches.len())
            .map(|(c, a)| InstrumentedValue {
                concrete: c.clone(),
                abstract_value: a,
            })
            .collect();
        Ok(Some(bound))
    }

    /// Applies one enabled step. The step must come from [`enabled_steps`] on
    /// the current state.
    ///
    /// [`enabled_steps`]: Configuration::enabled_steps
    pub fn apply(&mut self, step: &EnabledStep) -> Option<Event> {
        let event = self.apply_inner(step);
        self.cleanup();
        event
    }

    fn apply_inner(&mut self, step: &EnabledStep) -> Option<Event> {
        match step {
            EnabledStep::SensorStore { node, sensor } => {
                let label = self.nodes[*node].label.clone();
                let (id, cursor) = {
                    let s = &self.nodes[*node].sensors[*sensor];
                    (s.id, s.cursor)
                };
                let stream = self.cfg.stream(&label, id);
                let value = stream[cursor % stream.len()].clone();
                let iv = InstrumentedValue {
                    concrete: ConcreteValue::Lit { value },
                    abstract_value: cut(
                        &AbstractValue::Sensor {
                            id,
                            label: label.clone(),
                        },
                        self.cfg.depth,
                        &self.cls,
                    ),
                };
                let node_state = &mut self.nodes[*node];
                node_state.store.insert(StoreKey::Sensor(id), iv.clone());
                let s = &mut node_state.sensors[*sensor];
                s.cursor += 1;
                let SensorProc::StoreValue { cont, .. } = &s.proc else {
                    unreachable!("step is enabled");
                };
                s.proc = (**cont).clone();
                Some(Event::SensorStore {
                    node: label,
                    sensor: id,
                    value: iv,
                })
            }
            EnabledStep::SensorTau { node, sensor } => {
                let s = &mut self.nodes[*node].sensors[*sensor];
                let SensorProc::Tau(cont) = &s.proc else {
                    unreachable!("step is enabled");
                };
                s.proc = (**cont).clone();
                None
            }
            EnabledStep::ActuatorTau { node, actuator } => {
                let a = &mut self.nodes[*node].actuators[*actuator];
                let ActuatorProc::Tau(cont) = &a.proc else {
                    unreachable!("step is enabled");
                };
                a.proc = (**cont).clone();
                None
            }
            EnabledStep::ActuatorFire { node, actuator } => {
                let label = self.nodes[*node].label.clone();
                let a = &mut self.nodes[*node].actuators[*actuator];
                let ActuatorProc::Triggered { action, cont } = &a.proc else {
                    unreachable!("step is enabled");
                };
                let action = action.clone();
                let id = a.id;
                a.proc = (**cont).clone();
                Some(Event::ActFire {
                    node: label,
                    actuator: id,
                    action,
                })
            }
            EnabledStep::ActCom {
                node,
                proc,
                actuator,
            } => {
                let Process::ActOut { action, cont, .. } = &self.nodes[*node].procs[*proc] else {
                    unreachable!("step is enabled");
                };
                let action = action.clone();
                let cont = (**cont).clone();
                self.nodes[*node].procs[*proc] = cont;
                let a = &mut self.nodes[*node].actuators[*actuator];
                let ActuatorProc::Command { cont: acont, .. } = &a.proc else {
                    unreachable!("step is enabled");
                };
                a.proc = ActuatorProc::Triggered {
                    action,
                    cont: acont.clone(),
                };
                None
            }
            EnabledStep::Assign { node, proc } => {
                let Process::Assign { var, term, cont } = &self.nodes[*node].procs[*proc] else {
                    unreachable!("step is enabled");
                };
                let (var, term, cont) = (var.clone(), term.clone(), (**cont).clone());
                let value = self
                    .eval_term(*node, &term)
                    .expect("premise checked at enabledness");
                let label = self.nodes[*node].label.clone();
                self.nodes[*node]
                    .store
                    .insert(StoreKey::Var(var.clone()), value.clone());
                self.nodes[*node].procs[*proc] = cont;
                Some(Event::Assign {
                    node: label,
                    var,
                    value,
                })
            }
            EnabledStep::EvOut { node, proc } => {
                let Process::MultiOut {
                    terms,
                    receivers,
                    cont,
                } = &self.nodes[*node].procs[*proc]
                else {
                    unreachable!("step is enabled");
                };
                let (terms, receivers, cont) =
                    (terms.clone(), receivers.clone(), (**cont).clone());
                let values = terms
                    .iter()
                    .map(|t| self.eval_term(*node, t))
                    .collect::<Result<Vec<_>, _>>()
                    .expect("premise checked at enabledness");
                let origin = self.nodes[*node].label.clone();
                self.pending.push(PendingOutput {
                    origin,
                    values,
                    remaining: receivers,
                });
                self.nodes[*node].procs[*proc] = cont;
                None
            }
            EnabledStep::Cond { node, proc } => {
                let Process::Cond {
                    guard,
                    then_branch,
                    else_branch,
                } = &self.nodes[*node].procs[*proc]
                else {
                    unreachable!("step is enabled");
                };
                let (guard, then_branch, else_branch) =
                    (guard.clone(), (**then_branch).clone(), (**else_branch).clone());
                let v = self
                    .eval_term(*node, &guard)
                    .expect("premise checked at enabledness");
                let branch = match self
                    .guard_outcome(&v.concrete)
                    .expect("premise checked at enabledness")
                {
                    GuardOutcome::Truth(b) => b,
                    GuardOutcome::Coin => self.rng.gen_bool(0.5),
                };
                let label = self.nodes[*node].label.clone();
                self.nodes[*node].procs[*proc] =
                    if branch { then_branch } else { else_branch };
                Some(Event::CondTaken {
                    node: label,
                    branch,
                })
            }
            EnabledStep::Decrypt { node, proc } => {
                let Process::Decrypt {
                    subject,
                    matches,
                    binders,
                    key,
                    cont,
                } = &self.nodes[*node].procs[*proc]
                else {
                    unreachable!("step is enabled");
                };
                let (subject, matches, binders, key, cont) = (
                    subject.clone(),
                    matches.clone(),
                    binders.clone(),
                    key.clone(),
                    (**cont).clone(),
                );
                let bound = self
                    .try_decrypt(*node, &subject, &matches, &binders, &key)
                    .expect("premise checked at enabledness")
                    .expect("premise checked at enabledness");
                let label = self.nodes[*node].label.clone();
                for (x, v) in binders.iter().zip(bound) {
                    self.nodes[*node].store.insert(StoreKey::Var(x.clone()), v);
                }
                self.nodes[*node].procs[*proc] = cont;
                Some(Event::DecryptOk { node: label, key })
            }
            EnabledStep::MultiCom {
                pending,
                node,
                proc,
            } => {
                let Process::Input {
                    matches,
                    binders,
                    cont,
                } = &self.nodes[*node].procs[*proc]
                else {
                    unreachable!("step is enabled");
                };
                let (matches, binders, cont) =
                    (matches.clone(), binders.clone(), (**cont).clone());
                let values = self.pending[*pending].values.clone();
                let receiver = self.nodes[*node].label.clone();
                let sender = self.pending[*pending].origin.clone();
                for (x, v) in binders.iter().zip(values.iter().skip(matches.len())) {
                    self.nodes[*node]
                        .store
                        .insert(StoreKey::Var(x.clone()), v.clone());
                }
                self.pending[*pending].remaining.remove(&receiver);
                self.nodes[*node].procs[*proc] = cont;
                Some(Event::Comm {
                    sender,
                    receiver,
                    values,
                })
            }
        }
    }

    /// Structural congruence housekeeping: finished processes and fully
    /// delivered outputs disappear, iteration heads are unrolled.
    fn cleanup(&mut self) {
        for node in &mut self.nodes {
            node.procs.retain(|p| p != &Process::Nil);
        }
        self.pending.retain(|p| !p.remaining.is_empty());
        self.force_heads();
    }

    fn force_heads(&mut self) {
        for node in &mut self.nodes {
            for p in &mut node.procs {
                for _ in 0..MU_FUEL {
                    let Process::Mu { var, body } = p else { break };
                    let unrolled = subst_iter_var(
                        body,
                        var,
                        &Process::Mu {
                            var: var.clone(),
                            body: body.clone(),
                        },
                    );
                    *p = unrolled;
                }
            }
            for s in &mut node.sensors {
                for _ in 0..MU_FUEL {
                    let SensorProc::Mu { var, body } = &s.proc else { break };
                    let unrolled = subst_sensor_iter_var(
                        body,
                        var,
                        &SensorProc::Mu {
                            var: var.clone(),
                            body: body.clone(),
                        },
                    );
                    s.proc = unrolled;
                }
            }
            for a in &mut node.actuators {
                for _ in 0..MU_FUEL {
                    let ActuatorProc::Mu { var, body } = &a.proc else { break };
                    let unrolled = subst_actuator_iter_var(
                        body,
                        var,
                        &ActuatorProc::Mu {
                            var: var.clone(),
                            body: body.clone(),
                        },
                    );
                    a.proc = unrolled;
                }
            }
        }
    }

    /// At quiescence, the first blocked redex whose premise fails with an
    /// evaluation error (in canonical order), rendered for the trace.
    fn diagnose(&self) -> Option<String> {
        for (ni, node) in self.nodes.iter().enumerate() {
            for proc in &node.procs {
                match proc {
                    Process::Assign { term, .. } => {
                        if let Err(e) = self.eval_term(ni, term) {
                            return Some(e.to_string());
                        }
                    }
                    Process::MultiOut { terms, .. } => {
                        for t in terms {
                            if let Err(e) = self.eval_term(ni, t) {
                                return Some(e.to_string());
                            }
                        }
                    }
                    Process::Cond { guard, .. } => match self.eval_term(ni, guard) {
                        Err(e) => return Some(e.to_string()),
                        Ok(v) => {
                            if self.guard_outcome(&v.concrete).is_none() {
                                return Some(
                                    EvalError::NonBooleanGuard {
                                        node: node.label.clone(),
                                        value: v.concrete.to_string(),
                                    }
                                    .to_string(),
                                );
                            }
                        }
                    },
                    Process::Decrypt {
                        subject, matches, ..
                    } => {
                        if let Err(e) = self.eval_term(ni, subject) {
                            return Some(e.to_string());
                        }
                        for t in matches {
                            if let Err(e) = self.eval_term(ni, t) {
                                return Some(e.to_string());
                            }
                        }
                    }
                    Process::Input {
                        matches, binders, ..
                    } => {
                        // Only an error if a message is actually on offer.
                        for pending in &self.pending {
                            if pending.origin == node.label
                                || !pending.remaining.contains(&node.label)
                                || !self.cfg.comp.compatible(&pending.origin, &node.label)
                                || pending.values.len() != matches.len() + binders.len()
                            {
                                continue;
                            }
                            for t in matches {
                                if let Err(e) = self.eval_term(ni, t) {
                                    return Some(e.to_string());
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    }

    /// Runs to quiescence or the step bound, collecting events.
    pub fn run(mut self) -> Trace {
        let (seed, depth, max_steps) = (self.cfg.seed, self.cfg.depth, self.cfg.max_steps);
        let mut events = Vec::new();
        let mut diagnostic = None;
        while self.steps < max_steps {
            let enabled = self.enabled_steps();
            if enabled.is_empty() {
                diagnostic = self.diagnose();
                break;
            }
            let pick = self.rng.gen_range(0..enabled.len());
            let step = enabled[pick].clone();
            if let Some(event) = self.apply(&step) {
                events.push(event);
            }
            self.steps += 1;
        }
        Trace {
            seed,
            depth,
            max_steps,
            steps: self.steps,
            events,
            diagnostic,
        }
    }
}

enum GuardOutcome {
    Truth(bool),
    Coin,
}

/// Built-ins compute when their arguments carry the right sort and otherwise
/// leave the application uninterpreted; equality is structural on any values.
fn apply_builtin(b: Builtin, func: &str, args: &[ConcreteValue]) -> ConcreteValue {
    use ConcreteValue::Lit;
    let ints = || match (&args[0], &args[1]) {
        (
            Lit {
                value: Literal::Int(a),
            },
            Lit {
                value: Literal::Int(b),
            },
        ) => Some((*a, *b)),
        _ => None,
    };
    let bools = || {
        let of = |v: &ConcreteValue| match v {
            Lit {
                value: Literal::Bool(b),
            } => Some(*b),
            _ => None,
        };
        Some((of(&args[0])?, of(args.get(1).unwrap_or(&args[0]))?))
    };
    let free = || ConcreteValue::App {
        func: func.to_string(),
        args: args.to_vec(),
    };
    match b {
        Builtin::Add => ints().map_or_else(free, |(a, b)| ConcreteValue::int(a.wrapping_add(b))),
        Builtin::Sub => ints().map_or_else(free, |(a, b)| ConcreteValue::int(a.wrapping_sub(b))),
        Builtin::Mul => ints().map_or_else(free, |(a, b)| ConcreteValue::int(a.wrapping_mul(b))),
        Builtin::Le => ints().map_or_else(free, |(a, b)| ConcreteValue::bool(a <= b)),
        Builtin::Lt => ints().map_or_else(free, |(a, b)| ConcreteValue::bool(a < b)),
        Builtin::Eq => ConcreteValue::bool(args[0] == args[1]),
        Builtin::And => bools().map_or_else(free, |(a, b)| ConcreteValue::bool(a && b)),
        Builtin::Or => bools().map_or_else(free, |(a, b)| ConcreteValue::bool(a || b)),
        Builtin::Not => bools().map_or_else(free, |(a, _)| ConcreteValue::bool(!a)),
    }
}

/// The abstraction a node would assign to a value it built entirely from its
/// own literals: every part is annotated with `label`. Not meaningful for
/// values with parts received from elsewhere.
pub fn re_abstract(v: &ConcreteValue, label: &Label) -> AbstractValue {
    match v {
        ConcreteValue::Lit { value } => AbstractValue::Const {
            value: value.clone(),
            label: label.clone(),
        },
        ConcreteValue::Enc { args, key } => AbstractValue::Enc {
            args: args.iter().map(|a| re_abstract(a, label)).collect(),
            key: key.clone(),
            label: label.clone(),
        },
        ConcreteValue::App { func, args } => AbstractValue::App {
            func: func.clone(),
            args: args.iter().map(|a| re_abstract(a, label)).collect(),
            label: label.clone(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FunctionSig;
    use crate::parser::parse_system;

    fn config() -> AnalysisConfig {
        let mut cfg = AnalysisConfig::default();
        cfg.keys.insert(KeyId::new("k0"));
        cfg
    }

    fn prepared(src: &str, cfg: &AnalysisConfig) -> Configuration {
        let system = parse_system(src).unwrap();
        system.validate().unwrap();
        let mut cfg = cfg.clone();
        cfg.resolve_for(&system).unwrap();
        Configuration::new(&system, &cfg)
    }

    fn step_kind(c: &mut Configuration, want: impl Fn(&EnabledStep) -> bool) -> Option<Event> {
        let enabled = c.enabled_steps();
        let step = enabled.iter().find(|s| want(s)).expect("step enabled");
        let step = step.clone();
        c.apply(&step)
    }

    #[test]
    fn decryption_binds_the_tail_positions() {
        let mut c = prepared(
            "l1 : [ store || y0 := {3, 9} key k0 . decrypt y0 as {3; y} key k0 in 0 ]",
            &config(),
        );
        step_kind(&mut c, |s| matches!(s, EnabledStep::Assign { .. }));
        let ev = step_kind(&mut c, |s| matches!(s, EnabledStep::Decrypt { .. }));
        assert_eq!(
            ev,
            Some(Event::DecryptOk {
                node: Label::new("l1"),
                key: KeyId::new("k0"),
            })
        );
        let y = &c.nodes[0].store[&StoreKey::Var("y".into())];
        assert_eq!(y.concrete, ConcreteValue::int(9));
        assert_eq!(
            y.abstract_value,
            AbstractValue::Const {
                value: Literal::Int(9),
                label: Label::new("l1"),
            }
        );
    }

    #[test]
    fn wrong_key_blocks_decryption_without_diagnostic() {
        let mut cfg = config();
        cfg.keys.insert(KeyId::new("k1"));
        let system = parse_system(
            "l1 : [ store || y0 := {3} key k0 . decrypt y0 as {; y} key k1 in 0 ]",
        )
        .unwrap();
        cfg.resolve_for(&system).unwrap();
        let trace = run_system(&system, &cfg);
        assert!(trace.events.iter().all(|e| !matches!(e, Event::DecryptOk { .. })));
        assert_eq!(trace.diagnostic, None);
    }

    #[test]
    fn shallow_cut_makes_encryption_opaque() {
        let mut cfg = config();
        cfg.depth = 1;
        let mut c = prepared("l1 : [ store || x := 3 . y := {x} key k0 . 0 ]", &cfg);
        step_kind(&mut c, |s| matches!(s, EnabledStep::Assign { .. }));
        step_kind(&mut c, |s| matches!(s, EnabledStep::Assign { .. }));
        let y = &c.nodes[0].store[&StoreKey::Var("y".into())];
        assert_eq!(
            y.concrete,
            ConcreteValue::Enc {
                args: vec![ConcreteValue::int(3)],
                key: KeyId::new("k0"),
            }
        );
        assert_eq!(
            y.abstract_value,
            AbstractValue::TopP {
                label: Label::new("l1"),
            }
        );
    }

    #[test]
    fn actuator_handshake_then_fire() {
        let trace = run_system(
            &parse_system("l1 : [ store || <5, go> . 0 || actuator 5 { (|5, {go}|) . 0 } ]")
                .unwrap(),
            &AnalysisConfig::default(),
        );
        assert_eq!(
            trace.events,
            vec![Event::ActFire {
                node: Label::new("l1"),
                actuator: ActuatorId(5),
                action: ActionName::new("go"),
            }]
        );
        assert_eq!(trace.diagnostic, None);
    }

    #[test]
    fn rejected_command_never_fires() {
        let trace = run_system(
            &parse_system("l1 : [ store || <5, go> . 0 || actuator 5 { (|5, {stop}|) . 0 } ]")
                .unwrap(),
            &AnalysisConfig::default(),
        );
        assert_eq!(trace.events, vec![]);
        assert_eq!(trace.diagnostic, None);
    }

    #[test]
    fn delivery_binds_past_the_matched_prefix() {
        let mut c = prepared(
            "l1 : [ store || <<3, 4>> : {l2} . 0 ] | l2 : [ store || (3; y) . 0 ]",
            &AnalysisConfig::default(),
        );
        step_kind(&mut c, |s| matches!(s, EnabledStep::EvOut { .. }));
        let ev = step_kind(&mut c, |s| matches!(s, EnabledStep::MultiCom { .. }));
        let Some(Event::Comm {
            sender,
            receiver,
            values,
        }) = ev
        else {
            panic!("expected a communication");
        };
        assert_eq!(sender, Label::new("l1"));
        assert_eq!(receiver, Label::new("l2"));
        assert_eq!(values.len(), 2);
        assert_eq!(
            c.nodes[1].store[&StoreKey::Var("y".into())].concrete,
            ConcreteValue::int(4)
        );
        assert!(c.pending.is_empty());
    }

    #[test]
    fn mismatched_prefix_is_not_delivered() {
        let system =
            parse_system("l1 : [ store || <<3, 4>> : {l2} . 0 ] | l2 : [ store || (5; y) . 0 ]")
                .unwrap();
        let trace = run_system(&system, &AnalysisConfig::default());
        assert!(trace.events.iter().all(|e| !matches!(e, Event::Comm { .. })));
        assert_eq!(trace.diagnostic, None);
    }

    #[test]
    fn no_delivery_to_self() {
        let system =
            parse_system("l1 : [ store || <<1>> : {l1} . 0 || (; z) . 0 ]").unwrap();
        let trace = run_system(&system, &AnalysisConfig::default());
        assert!(trace.events.iter().all(|e| !matches!(e, Event::Comm { .. })));
        assert_eq!(trace.diagnostic, None);
    }

    #[test]
    fn sensor_reads_follow_the_stream() {
        let mut cfg = AnalysisConfig::default();
        cfg.sensor_streams.insert(
            Label::new("l1"),
            BTreeMap::from([(SensorId(1), vec![Literal::Int(7), Literal::Int(8)])]),
        );
        let mut c = prepared(
            "l1 : [ store || sensor 1 { @1 := read . @1 := read . 0 } ]",
            &cfg,
        );
        let ev = step_kind(&mut c, |s| matches!(s, EnabledStep::SensorStore { .. }));
        let Some(Event::SensorStore { value, .. }) = ev else {
            panic!("expected a sensor store");
        };
        assert_eq!(value.concrete, ConcreteValue::int(7));
        assert_eq!(
            value.abstract_value,
            AbstractValue::Sensor {
                id: SensorId(1),
                label: Label::new("l1"),
            }
        );
        step_kind(&mut c, |s| matches!(s, EnabledStep::SensorStore { .. }));
        assert_eq!(
            c.nodes[0].store[&StoreKey::Sensor(SensorId(1))].concrete,
            ConcreteValue::int(8)
        );
    }

    #[test]
    fn boolean_sorted_guard_flips_a_seeded_coin() {
        let mut cfg = AnalysisConfig::default();
        cfg.functions.insert(
            "is_a_car".into(),
            FunctionSig {
                arity: 1,
                kind: FunctionKind::Uninterpreted,
                result: ResultSort::Boolean,
            },
        );
        let system =
            parse_system("l1 : [ store || x := 'v' . is_a_car(x) ? 0 : 0 ]").unwrap();
        let trace = run_system(&system, &cfg);
        assert_eq!(trace.diagnostic, None);
        assert!(trace
            .events
            .iter()
            .any(|e| matches!(e, Event::CondTaken { .. })));
    }

    #[test]
    fn opaque_guard_is_a_diagnostic() {
        let system = parse_system("l1 : [ store || x := 'v' . x ? 0 : 0 ]").unwrap();
        let trace = run_system(&system, &AnalysisConfig::default());
        assert!(trace
            .diagnostic
            .as_deref()
            .is_some_and(|d| d.contains("non-boolean")));
    }

    #[test]
    fn undefined_variable_is_a_diagnostic() {
        let system = parse_system("l1 : [ store || y := x . 0 ]").unwrap();
        let trace = run_system(&system, &AnalysisConfig::default());
        assert_eq!(trace.events, vec![]);
        assert!(trace
            .diagnostic
            .as_deref()
            .is_some_and(|d| d.contains("x is not in the store")));
    }

    #[test]
    fn same_seed_same_trace() {
        let src = "l1 : [ store || sensor 1 { mu h . @1 := read . h } \
                   || mu h . x := @1 . <<x>> : {l2} . h ] \
                   | l2 : [ store || mu h . (; y) . h ]";
        let system = parse_system(src).unwrap();
        let mut cfg = AnalysisConfig {
            max_steps: 100,
            ..AnalysisConfig::default()
        };
        let a = run_system(&system, &cfg);
        let b = run_system(&system, &cfg);
        assert_eq!(a, b);
        cfg.seed = 1;
        let c = run_system(&system, &cfg);
        assert_eq!(c.seed, 1);
        assert_eq!(a.steps, 100);
        assert_eq!(c.steps, 100);
    }

    #[test]
    fn ndjson_round_trip() {
        let system =
            parse_system("l1 : [ store || x := 1 . <<x>> : {l2} . 0 ] | l2 : [ store || (; y) . 0 ]")
                .unwrap();
        let cfg = AnalysisConfig {
            seed: 42,
            ..AnalysisConfig::default()
        };
        let trace = run_system(&system, &cfg);
        assert!(!trace.events.is_empty());
        let text = trace.to_ndjson();
        let back = Trace::from_ndjson(&text).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn diagnostic_survives_the_round_trip() {
        let system = parse_system("l1 : [ store || y := x . 0 ]").unwrap();
        let trace = run_system(&system, &AnalysisConfig::default());
        let back = Trace::from_ndjson(&trace.to_ndjson()).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn builtin_arithmetic_and_degradation() {
        assert_eq!(
            apply_builtin(Builtin::Add, "add", &[ConcreteValue::int(2), ConcreteValue::int(3)]),
            ConcreteValue::int(5)
        );
        assert_eq!(
            apply_builtin(Builtin::Le, "le", &[ConcreteValue::int(4), ConcreteValue::int(3)]),
            ConcreteValue::bool(false)
        );
        let atom = ConcreteValue::Lit {
            value: Literal::Atom("img".into()),
        };
        assert_eq!(
            apply_builtin(Builtin::Le, "le", &[atom.clone(), ConcreteValue::int(3)]),
            ConcreteValue::App {
                func: "le".into(),
                args: vec![atom.clone(), ConcreteValue::int(3)],
            }
        );
        assert_eq!(
            apply_builtin(Builtin::Eq, "eq", &[atom.clone(), atom]),
            ConcreteValue::bool(true)
        );
    }

    #[test]
    fn store_keys_order_sensors_first_and_round_trip() {
        assert!(StoreKey::Sensor(SensorId(9)) < StoreKey::Var("a".into()));
        for k in [StoreKey::Sensor(SensorId(3)), StoreKey::Var("x'".into())] {
            assert_eq!(StoreKey::parse(&k.to_string()), k);
        }
        let json = serde_json::to_string(&StoreKey::Sensor(SensorId(1))).unwrap();
        assert_eq!(json, "\"@1\"");
    }
}
