//! Abstract syntax of IoT-LySa systems and the abstract value domain shared by
//! the simulator and the flow analysis.
//!
//! A system is a parallel composition of labelled nodes. Every node owns a
//! single shared store plus any number of control processes, sensors and
//! actuators. Sensors and actuators are restricted process shapes: a sensor
//! may only probe its reserved store location, an actuator may only wait for
//! commands aimed at its own identifier.
//!
//! Abstract values track the provenance of data (which sensor of which node,
//! which function applications happened on the way) up to a configurable
//! depth; deeper structure collapses to a secrecy-tagged top marker.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::security::{Classification, SecrecyClass};

/// Node label, unique within a system.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Reserved store location written by one sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub u32);

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier an actuator listens on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActuatorId(pub u32);

impl fmt::Display for ActuatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Symmetric encryption key name; equality of keys is what makes decryption
/// succeed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub String);

impl KeyId {
    pub fn new(name: impl Into<String>) -> Self {
        KeyId(name.into())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Action an actuator can execute, e.g. `turnon`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionName(pub String);

impl ActionName {
    pub fn new(name: impl Into<String>) -> Self {
        ActionName(name.into())
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ground data: integers, booleans and named atoms (written `'name'`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Int(i64),
    Bool(bool),
    Atom(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Atom(a) => write!(f, "'{a}'"),
        }
    }
}

// Literals serialize to the matching JSON scalar so traces and estimates stay
// readable; atoms are plain strings.
impl Serialize for Literal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Literal::Int(n) => s.serialize_i64(*n),
            Literal::Bool(b) => s.serialize_bool(*b),
            Literal::Atom(a) => s.serialize_str(a),
        }
    }
}

impl<'de> Deserialize<'de> for Literal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::Bool(b) => Ok(Literal::Bool(b)),
            serde_json::Value::Number(n) => n
                .as_i64()
                .map(Literal::Int)
                .ok_or_else(|| D::Error::custom("literal integers must fit in 64 bits")),
            serde_json::Value::String(a) => Ok(Literal::Atom(a)),
            other => Err(D::Error::custom(format!(
                "expected number, boolean or string literal, got {other}"
            ))),
        }
    }
}

/// Expression occurring in processes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Const(Literal),
    /// Read of the reserved store location of sensor `i`, written `@i`.
    SensorLoc(SensorId),
    Var(String),
    /// `{t1, .., tk} key k0`, k >= 0.
    Enc { args: Vec<Term>, key: KeyId },
    /// `f(t1, .., tk)`, k >= 0; semantics of `f` comes from the config.
    App { func: String, args: Vec<Term> },
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(v) => write!(f, "{v}"),
            Term::SensorLoc(i) => write!(f, "@{i}"),
            Term::Var(x) => f.write_str(x),
            Term::Enc { args, key } => {
                f.write_str("{")?;
                write_comma_list(f, args)?;
                write!(f, "}} key {key}")
            }
            Term::App { func, args } => {
                write!(f, "{func}(")?;
                write_comma_list(f, args)?;
                f.write_str(")")
            }
        }
    }
}

/// Control process of a node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Process {
    Nil,
    /// Asynchronous multi-output `<<t1, .., tk>> : {l1, .., ln} . P`.
    MultiOut {
        terms: Vec<Term>,
        receivers: BTreeSet<Label>,
        cont: Box<Process>,
    },
    /// Input `(t1, .., tj; x_{j+1}, .., x_k) . P`: the first j positions must
    /// match the message, the rest are bound.
    Input {
        matches: Vec<Term>,
        binders: Vec<String>,
        cont: Box<Process>,
    },
    /// `decrypt t as {t1, .., tj; x_{j+1}, .., x_k} key k0 in P`.
    Decrypt {
        subject: Term,
        matches: Vec<Term>,
        binders: Vec<String>,
        key: KeyId,
        cont: Box<Process>,
    },
    /// `t ? P : Q`.
    Cond {
        guard: Term,
        then_branch: Box<Process>,
        else_branch: Box<Process>,
    },
    /// Iteration variable bound by an enclosing `Mu`.
    IterVar(String),
    /// `mu h . P`.
    Mu { var: String, body: Box<Process> },
    /// `x := t . P`.
    Assign {
        var: String,
        term: Term,
        cont: Box<Process>,
    },
    /// Actuator trigger `<j, action> . P`.
    ActOut {
        actuator: ActuatorId,
        action: ActionName,
        cont: Box<Process>,
    },
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Nil => f.write_str("0"),
            Process::MultiOut {
                terms,
                receivers,
                cont,
            } => {
                f.write_str("<<")?;
                write_comma_list(f, terms)?;
                f.write_str(">> : {")?;
                write_comma_list(f, receivers)?;
                write!(f, "}} . {cont}")
            }
            Process::Input {
                matches,
                binders,
                cont,
            } => {
                f.write_str("(")?;
                write_comma_list(f, matches)?;
                f.write_str(";")?;
                if !binders.is_empty() {
                    f.write_str(" ")?;
                    write_str_list(f, binders)?;
                }
                write!(f, ") . {cont}")
            }
            Process::Decrypt {
                subject,
                matches,
                binders,
                key,
                cont,
            } => {
                write!(f, "decrypt {subject} as {{")?;
                write_comma_list(f, matches)?;
                f.write_str(";")?;
                if !binders.is_empty() {
                    f.write_str(" ")?;
                    write_str_list(f, binders)?;
                }
                write!(f, "}} key {key} in {cont}")
            }
            Process::Cond {
                guard,
                then_branch,
                else_branch,
            } => write!(f, "{guard} ? {then_branch} : {else_branch}"),
            Process::IterVar(h) => f.write_str(h),
            Process::Mu { var, body } => write!(f, "mu {var} . {body}"),
            Process::Assign { var, term, cont } => write!(f, "{var} := {term} . {cont}"),
            Process::ActOut {
                actuator,
                action,
                cont,
            } => write!(f, "<{actuator}, {action}> . {cont}"),
        }
    }
}

/// Sensor body: may only store environment probes into its own location.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SensorProc {
    Nil,
    Tau(Box<SensorProc>),
    /// `@i := read . S`: deposit the next environment value at location `i`.
    StoreValue { loc: SensorId, cont: Box<SensorProc> },
    IterVar(String),
    Mu { var: String, body: Box<SensorProc> },
}

impl fmt::Display for SensorProc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorProc::Nil => f.write_str("0"),
            SensorProc::Tau(cont) => write!(f, "tau . {cont}"),
            SensorProc::StoreValue { loc, cont } => write!(f, "@{loc} := read . {cont}"),
            SensorProc::IterVar(h) => f.write_str(h),
            SensorProc::Mu { var, body } => write!(f, "mu {var} . {body}"),
        }
    }
}

/// Actuator body: waits for commands on its own identifier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActuatorProc {
    Nil,
    Tau(Box<ActuatorProc>),
    /// `(|j, {a1, .., an}|) . A`: accept any listed action for actuator `j`.
    Command {
        actuator: ActuatorId,
        accepted: BTreeSet<ActionName>,
        cont: Box<ActuatorProc>,
    },
    /// An accepted action about to execute. Created by the semantics when a
    /// trigger meets a command; not writable in source.
    Triggered {
        action: ActionName,
        cont: Box<ActuatorProc>,
    },
    IterVar(String),
    Mu { var: String, body: Box<ActuatorProc> },
}

impl fmt::Display for ActuatorProc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActuatorProc::Nil => f.write_str("0"),
            ActuatorProc::Tau(cont) => write!(f, "tau . {cont}"),
            ActuatorProc::Command {
                actuator,
                accepted,
                cont,
            } => {
                write!(f, "(|{actuator}, {{")?;
                write_comma_list(f, accepted)?;
                write!(f, "}}|) . {cont}")
            }
            ActuatorProc::Triggered { action, cont } => write!(f, "{action} . {cont}"),
            ActuatorProc::IterVar(h) => f.write_str(h),
            ActuatorProc::Mu { var, body } => write!(f, "mu {var} . {body}"),
        }
    }
}

/// One parallel component of a node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Store,
    Sensor { id: SensorId, body: SensorProc },
    Actuator { id: ActuatorId, body: ActuatorProc },
    Process(Process),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Store => f.write_str("store"),
            Component::Sensor { id, body } => write!(f, "sensor {id} {{ {body} }}"),
            Component::Actuator { id, body } => write!(f, "actuator {id} {{ {body} }}"),
            Component::Process(p) => write!(f, "{p}"),
        }
    }
}

/// A labelled node: one store, then sensors, actuators and processes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    pub label: Label,
    pub components: Vec<Component>,
}

impl Node {
    /// Identifiers of the sensors declared by this node (I_l).
    pub fn sensor_ids(&self) -> BTreeSet<SensorId> {
        self.components
            .iter()
            .filter_map(|c| match c {
                Component::Sensor { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    /// Identifiers of the actuators declared by this node (J_l).
    pub fn actuator_ids(&self) -> BTreeSet<ActuatorId> {
        self.components
            .iter()
            .filter_map(|c| match c {
                Component::Actuator { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn processes(&self) -> impl Iterator<Item = &Process> {
        self.components.iter().filter_map(|c| match c {
            Component::Process(p) => Some(p),
            _ => None,
        })
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} : [ ", self.label)?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(" || ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(" ]")
    }
}

/// A whole IoT-LySa system.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct System {
    pub nodes: Vec<Node>,
}

impl System {
    pub fn node(&self, label: &Label) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.label == label)
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.nodes.iter().map(|n| n.label.clone()).collect()
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("\n|\n")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// Provenance-tracking abstraction of a runtime value.
///
/// Every value is annotated with the label of the node that created it; the
/// top markers record the secrecy class of structure lost to the depth cut.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbstractValue {
    /// Cut residue that was classified secret.
    TopS { label: Label },
    /// Cut residue that was classified public.
    TopP { label: Label },
    /// `i^l`: a value read by sensor `i` of node `l`.
    Sensor { id: SensorId, label: Label },
    /// `v^l`: the literal `v` occurring in node `l`.
    Const { value: Literal, label: Label },
    /// `{vs}^l_k`: encryption formed at node `l` with key `k`.
    Enc {
        args: Vec<AbstractValue>,
        key: KeyId,
        label: Label,
    },
    /// `f^l(vs)`: application of `f` performed at node `l`.
    App {
        func: String,
        args: Vec<AbstractValue>,
        label: Label,
    },
}

impl AbstractValue {
    /// Label of the node this value is annotated with.
    pub fn label(&self) -> &Label {
        match self {
            AbstractValue::TopS { label }
            | AbstractValue::TopP { label }
            | AbstractValue::Sensor { label, .. }
            | AbstractValue::Const { label, .. }
            | AbstractValue::Enc { label, .. }
            | AbstractValue::App { label, .. } => label,
        }
    }

    /// Nesting depth: leaves count 1, constructors add one level.
    pub fn depth(&self) -> usize {
        match self {
            AbstractValue::TopS { .. }
            | AbstractValue::TopP { .. }
            | AbstractValue::Sensor { .. }
            | AbstractValue::Const { .. } => 1,
            AbstractValue::Enc { args, .. } | AbstractValue::App { args, .. } => {
                1 + args.iter().map(AbstractValue::depth).max().unwrap_or(0)
            }
        }
    }
}

impl fmt::Display for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractValue::TopS { label } => write!(f, "Ts^{label}"),
            AbstractValue::TopP { label } => write!(f, "Tp^{label}"),
            AbstractValue::Sensor { id, label } => write!(f, "{id}^{label}"),
            AbstractValue::Const { value, label } => write!(f, "{value}^{label}"),
            AbstractValue::Enc { args, key, label } => {
                f.write_str("{")?;
                write_comma_list(f, args)?;
                write!(f, "}}^{label}_{key}")
            }
            AbstractValue::App { func, args, label } => {
                write!(f, "{func}^{label}(")?;
                write_comma_list(f, args)?;
                f.write_str(")")
            }
        }
    }
}

/// Well-formedness violations of a programmatically built [`System`].
///
/// The parser reports the same conditions as positioned [`crate::parser::ParseError`]s.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SystemError {
    #[error("duplicate node label {0}")]
    DuplicateLabel(Label),
    #[error("node {0} has no store component")]
    MissingStore(Label),
    #[error("node {0} has more than one store component")]
    DuplicateStore(Label),
    #[error("node {0} declares sensor {1} twice")]
    DuplicateSensor(Label, SensorId),
    #[error("node {0} declares actuator {1} twice")]
    DuplicateActuator(Label, ActuatorId),
    #[error("node {0} uses {1} as both a sensor and an actuator identifier")]
    SensorActuatorClash(Label, u32),
    #[error("node {0}: iteration variable {1} is not bound by an enclosing mu")]
    UnboundIterVar(Label, String),
    #[error("node {0}: binder list contains {1} twice")]
    DuplicateBinder(Label, String),
    #[error("node {0}: sensor {1} stores to location {2}")]
    SensorLocMismatch(Label, SensorId, SensorId),
    #[error("node {0}: actuator {1} waits for commands aimed at {2}")]
    ActuatorIdMismatch(Label, ActuatorId, ActuatorId),
    #[error("node {0}: triggered actuator action in source")]
    TriggeredInSource(Label),
}

impl System {
    /// Checks the structural invariants: unique labels, exactly one store per
    /// node, unique and disjoint sensor/actuator identifiers, bound iteration
    /// variables, duplicate-free binder lists, sensors/actuators touching only
    /// their own identifier, and no `Triggered` form.
    pub fn validate(&self) -> Result<(), SystemError> {
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.label.clone()) {
                return Err(SystemError::DuplicateLabel(node.label.clone()));
            }
            validate_node(node)?;
        }
        Ok(())
    }
}

fn validate_node(node: &Node) -> Result<(), SystemError> {
    let l = &node.label;
    let mut stores = 0usize;
    let mut sensors = BTreeSet::new();
    let mut actuators = BTreeSet::new();
    for c in &node.components {
        match c {
            Component::Store => stores += 1,
            Component::Sensor { id, body } => {
                if !sensors.insert(*id) {
                    return Err(SystemError::DuplicateSensor(l.clone(), *id));
                }
                validate_sensor(l, *id, body, &mut Vec::new())?;
            }
            Component::Actuator { id, body } => {
                if !actuators.insert(*id) {
                    return Err(SystemError::DuplicateActuator(l.clone(), *id));
                }
                validate_actuator(l, *id, body, &mut Vec::new())?;
            }
            Component::Process(p) => validate_process(l, p, &mut Vec::new())?,
        }
    }
    if stores == 0 {
        return Err(SystemError::MissingStore(l.clone()));
    }
    if stores > 1 {
        return Err(SystemError::DuplicateStore(l.clone()));
    }
    if let Some(id) = sensors.iter().map(|s| s.0).find(|i| actuators.contains(&ActuatorId(*i))) {
        return Err(SystemError::SensorActuatorClash(l.clone(), id));
    }
    Ok(())
}

fn validate_process(l: &Label, p: &Process, bound: &mut Vec<String>) -> Result<(), SystemError> {
    match p {
        Process::Nil => Ok(()),
        Process::MultiOut { cont, .. } => validate_process(l, cont, bound),
        Process::Input { binders, cont, .. } | Process::Decrypt { binders, cont, .. } => {
            let mut uniq = BTreeSet::new();
            for b in binders {
                if !uniq.insert(b) {
                    return Err(SystemError::DuplicateBinder(l.clone(), b.clone()));
                }
            }
            validate_process(l, cont, bound)
        }
        Process::Cond {
            then_branch,
            else_branch,
            ..
        } => {
            validate_process(l, then_branch, bound)?;
            validate_process(l, else_branch, bound)
        }
        Process::IterVar(h) => {
            if bound.iter().any(|b| b == h) {
                Ok(())
            } else {
                Err(SystemError::UnboundIterVar(l.clone(), h.clone()))
            }
        }
        Process::Mu { var, body } => {
            bound.push(var.clone());
            let r = validate_process(l, body, bound);
            bound.pop();
            r
        }
        Process::Assign { cont, .. } | Process::ActOut { cont, .. } => {
            validate_process(l, cont, bound)
        }
    }
}

fn validate_sensor(
    l: &Label,
    id: SensorId,
    s: &SensorProc,
    bound: &mut Vec<String>,
) -> Result<(), SystemError> {
    match s {
        SensorProc::Nil => Ok(()),
        SensorProc::Tau(cont) => validate_sensor(l, id, cont, bound),
        SensorProc::StoreValue { loc, cont } => {
            if *loc != id {
                return Err(SystemError::SensorLocMismatch(l.clone(), id, *loc));
            }
            validate_sensor(l, id, cont, bound)
        }
        SensorProc::IterVar(h) => {
            if bound.iter().any(|b| b == h) {
                Ok(())
            } else {
                Err(SystemError::UnboundIterVar(l.clone(), h.clone()))
            }
        }
        SensorProc::Mu { var, body } => {
            bound.push(var.clone());
            let r = validate_sensor(l, id, body, bound);
            bound.pop();
            r
        }
    }
}

fn validate_actuator(
    l: &Label,
    id: ActuatorId,
    a: &ActuatorProc,
    bound: &mut Vec<String>,
) -> Result<(), SystemError> {
    match a {
        ActuatorProc::Nil => Ok(()),
        ActuatorProc::Tau(cont) => validate_actuator(l, id, cont, bound),
        ActuatorProc::Command {
            actuator, cont, ..
        } => {
            if *actuator != id {
                return Err(SystemError::ActuatorIdMismatch(l.clone(), id, *actuator));
            }
            validate_actuator(l, id, cont, bound)
        }
        ActuatorProc::Triggered { .. } => Err(SystemError::TriggeredInSource(l.clone())),
        ActuatorProc::IterVar(h) => {
            if bound.iter().any(|b| b == h) {
                Ok(())
            } else {
                Err(SystemError::UnboundIterVar(l.clone(), h.clone()))
            }
        }
        ActuatorProc::Mu { var, body } => {
            bound.push(var.clone());
            let r = validate_actuator(l, id, body, bound);
            bound.pop();
            r
        }
    }
}

/// Bounds `av` to depth `d`: the shallowest subterm that would exceed the
/// budget is replaced by a top marker carrying the secrecy class of what it
/// replaced, annotated with the replaced subterm's own label.
///
/// Idempotent, and `cut(av, d, cls).depth() <= d` for every input.
pub fn cut(av: &AbstractValue, d: usize, cls: &Classification) -> AbstractValue {
    assert!(d >= 1, "cut depth must be at least 1");
    if av.depth() <= d {
        return av.clone();
    }
    if d == 1 {
        return top_marker(av, cls);
    }
    match av {
        AbstractValue::Enc { args, key, label } => AbstractValue::Enc {
            args: args.iter().map(|a| cut(a, d - 1, cls)).collect(),
            key: key.clone(),
            label: label.clone(),
        },
        AbstractValue::App { func, args, label } => AbstractValue::App {
            func: func.clone(),
            args: args.iter().map(|a| cut(a, d - 1, cls)).collect(),
            label: label.clone(),
        },
        // Leaves have depth 1 and never exceed the budget here.
        _ => unreachable!("leaf deeper than budget"),
    }
}

fn top_marker(av: &AbstractValue, cls: &Classification) -> AbstractValue {
    let label = av.label().clone();
    match cls.s_cls(av) {
        SecrecyClass::Secret => AbstractValue::TopS { label },
        SecrecyClass::Public => AbstractValue::TopP { label },
    }
}

/// Unfolds the iteration `mu h . P` exactly `d` times, closing the residual
/// iteration variable with `Nil`. Used by the analysis; the semantics instead
/// unrolls one step at a time.
///
/// Defined by `U(0) = Nil`, `U(k) = P{U(k-1) / h}`.
pub fn unfold(p: &Process, d: usize) -> Process {
    let Process::Mu { var, body } = p else {
        panic!("unfold expects a mu process");
    };
    let mut acc = Process::Nil;
    for _ in 0..d {
        acc = subst_iter_var(body, var, &acc);
    }
    acc
}

/// Capture-avoiding substitution of `replacement` for the free occurrences of
/// iteration variable `h` in `p`. Inner `mu h` rebinds and stops the walk.
pub fn subst_iter_var(p: &Process, h: &str, replacement: &Process) -> Process {
    match p {
        Process::Nil => Process::Nil,
        Process::MultiOut {
            terms,
            receivers,
            cont,
        } => Process::MultiOut {
            terms: terms.clone(),
            receivers: receivers.clone(),
            cont: Box::new(subst_iter_var(cont, h, replacement)),
        },
        Process::Input {
            matches,
            binders,
            cont,
        } => Process::Input {
            matches: matches.clone(),
            binders: binders.clone(),
            cont: Box::new(subst_iter_var(cont, h, replacement)),
        },
        Process::Decrypt {
            subject,
            matches,
            binders,
            key,
            cont,
        } => Process::Decrypt {
            subject: subject.clone(),
            matches: matches.clone(),
            binders: binders.clone(),
            key: key.clone(),
            cont: Box::new(subst_iter_var(cont, h, replacement)),
        },
        Process::Cond {
            guard,
            then_branch,
            else_branch,
        } => Process::Cond {
            guard: guard.clone(),
            then_branch: Box::new(subst_iter_var(then_branch, h, replacement)),
            else_branch: Box::new(subst_iter_var(else_branch, h, replacement)),
        },
        Process::IterVar(x) => {
            if x == h {
                replacement.clone()
            } else {
                Process::IterVar(x.clone())
            }
        }
        Process::Mu { var, body } => {
            if var == h {
                p.clone()
            } else {
                Process::Mu {
                    var: var.clone(),
                    body: Box::new(subst_iter_var(body, h, replacement)),
                }
            }
        }
        Process::Assign { var, term, cont } => Process::Assign {
            var: var.clone(),
            term: term.clone(),
            cont: Box::new(subst_iter_var(cont, h, replacement)),
        },
        Process::ActOut {
            actuator,
            action,
            cont,
        } => Process::ActOut {
            actuator: *actuator,
            action: action.clone(),
            cont: Box::new(subst_iter_var(cont, h, replacement)),
        },
    }
}

/// [`subst_iter_var`] for sensor bodies.
pub fn subst_sensor_iter_var(p: &SensorProc, h: &str, replacement: &SensorProc) -> SensorProc {
    match p {
        SensorProc::Nil => SensorProc::Nil,
        SensorProc::Tau(cont) => {
            SensorProc::Tau(Box::new(subst_sensor_iter_var(cont, h, replacement)))
        }
        SensorProc::StoreValue { loc, cont } => SensorProc::StoreValue {
            loc: *loc,
            cont: Box::new(subst_sensor_iter_var(cont, h, replacement)),
        },
        SensorProc::IterVar(x) => {
            if x == h {
                replacement.clone()
            } else {
                SensorProc::IterVar(x.clone())
            }
        }
        SensorProc::Mu { var, body } => {
            if var == h {
                p.clone()
            } else {
                SensorProc::Mu {
                    var: var.clone(),
                    body: Box::new(subst_sensor_iter_var(body, h, replacement)),
                }
            }
        }
    }
}

/// [`subst_iter_var`] for actuator bodies.
pub fn subst_actuator_iter_var(
    p: &ActuatorProc,
    h: &str,
    replacement: &ActuatorProc,
) -> ActuatorProc {
    match p {
        ActuatorProc::Nil => ActuatorProc::Nil,
        ActuatorProc::Tau(cont) => {
            ActuatorProc::Tau(Box::new(subst_actuator_iter_var(cont, h, replacement)))
        }
        ActuatorProc::Command {
            actuator,
            accepted,
            cont,
        } => ActuatorProc::Command {
            actuator: *actuator,
            accepted: accepted.clone(),
            cont: Box::new(subst_actuator_iter_var(cont, h, replacement)),
        },
        ActuatorProc::Triggered { action, cont } => ActuatorProc::Triggered {
            action: action.clone(),
            cont: Box::new(subst_actuator_iter_var(cont, h, replacement)),
        },
        ActuatorProc::IterVar(x) => {
            if x == h {
                replacement.clone()
            } else {
                ActuatorProc::IterVar(x.clone())
            }
        }
        ActuatorProc::Mu { var, body } => {
            if var == h {
                p.clone()
            } else {
                ActuatorProc::Mu {
                    var: var.clone(),
                    body: Box::new(subst_actuator_iter_var(body, h, replacement)),
                }
            }
        }
    }
}

/// Quotients a system by the structural congruence laws that matter for
/// comparison: dead multi-outputs collapse to `Nil`, `Nil` processes and empty
/// nodes disappear, and component and node order is made canonical.
///
/// Iteration is untouched; the semantics unrolls `mu` lazily.
pub fn congruence_normalize(system: &System) -> System {
    let mut nodes: Vec<Node> = system
        .nodes
        .iter()
        .filter_map(|node| {
            let mut components: Vec<Component> = node
                .components
                .iter()
                .filter_map(|c| match c {
                    Component::Process(p) => {
                        let p = normalize_process(p);
                        if p == Process::Nil {
                            None
                        } else {
                            Some(Component::Process(p))
                        }
                    }
                    other => Some(other.clone()),
                })
                .collect();
            if components.is_empty() {
                return None;
            }
            components.sort();
            Some(Node {
                label: node.label.clone(),
                components,
            })
        })
        .collect();
    nodes.sort_by(|a, b| a.label.cmp(&b.label));
    System { nodes }
}

fn normalize_process(p: &Process) -> Process {
    match p {
        Process::MultiOut {
            terms,
            receivers,
            cont,
        } => {
            let cont = normalize_process(cont);
            // <<ts>> : {} . 0 is congruent to 0; with a live continuation the
            // dead output prefix still has to run, so it stays.
            if receivers.is_empty() && cont == Process::Nil {
                Process::Nil
            } else {
                Process::MultiOut {
                    terms: terms.clone(),
                    receivers: receivers.clone(),
                    cont: Box::new(cont),
                }
            }
        }
        Process::Input {
            matches,
            binders,
            cont,
        } => Process::Input {
            matches: matches.clone(),
            binders: binders.clone(),
            cont: Box::new(normalize_process(cont)),
        },
        Process::Decrypt {
            subject,
            matches,
            binders,
            key,
            cont,
        } => Process::Decrypt {
            subject: subject.clone(),
            matches: matches.clone(),
            binders: binders.clone(),
            key: key.clone(),
            cont: Box::new(normalize_process(cont)),
        },
        Process::Cond {
            guard,
            then_branch,
            else_branch,
        } => Process::Cond {
            guard: guard.clone(),
            then_branch: Box::new(normalize_process(then_branch)),
            else_branch: Box::new(normalize_process(else_branch)),
        },
        Process::Mu { var, body } => Process::Mu {
            var: var.clone(),
            body: Box::new(normalize_process(body)),
        },
        Process::Assign { var, term, cont } => Process::Assign {
            var: var.clone(),
            term: term.clone(),
            cont: Box::new(normalize_process(cont)),
        },
        Process::ActOut {
            actuator,
            action,
            cont,
        } => Process::ActOut {
            actuator: *actuator,
            action: action.clone(),
            cont: Box::new(normalize_process(cont)),
        },
        Process::Nil | Process::IterVar(_) => p.clone(),
    }
}

fn write_comma_list<T: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    items: impl IntoIterator<Item = T>,
) -> fmt::Result {
    for (i, item) in items.into_iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

fn write_str_list(f: &mut fmt::Formatter<'_>, items: &[String]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        f.write_str(item)?;
    }
    Ok(())
}
