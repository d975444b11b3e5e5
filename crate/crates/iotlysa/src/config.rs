//! Analysis configuration: which nodes may talk to each other, what functions
//! and keys mean, what sensors read, secrecy and clearance declarations, and
//! the knobs of the simulator and the analysis.
//!
//! Configs are JSON documents. Everything is optional; the defaults give a
//! depth of 4, full compatibility, no secrets, no policy, seed 0 and a
//! 10000-step budget.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::ast::{
    ActuatorProc, Component, KeyId, Label, Literal, Process, SensorId, System, Term,
};
use crate::parser::ParseError;

/// Compatibility relation over node labels; pairs are unordered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompRelation {
    All,
    Pairs(BTreeSet<(Label, Label)>),
}

impl CompRelation {
    pub fn pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        CompRelation::Pairs(pairs.into_iter().map(|(a, b)| normalize_pair(a, b)).collect())
    }

    pub fn compatible(&self, a: &Label, b: &Label) -> bool {
        match self {
            CompRelation::All => true,
            CompRelation::Pairs(pairs) => {
                pairs.contains(&normalize_pair(a.clone(), b.clone()))
            }
        }
    }
}

fn normalize_pair(a: Label, b: Label) -> (Label, Label) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Flow policy checked by `check --property policy`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Policy {
    #[default]
    None,
    /// Allow a flow iff the sender's clearance is at most the receiver's.
    Levels,
    /// Explicit allow-list of ordered (sender, receiver) pairs.
    Pairs(BTreeSet<(Label, Label)>),
}

/// Interpretation of a function symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionKind {
    Uninterpreted,
    Builtin(Builtin),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Add,
    Sub,
    Mul,
    Le,
    Lt,
    Eq,
    And,
    Or,
    Not,
}

impl Builtin {
    fn from_kind(kind: &str) -> Option<Builtin> {
        Some(match kind {
            "+" | "add" => Builtin::Add,
            "-" | "sub" => Builtin::Sub,
            "*" | "mul" => Builtin::Mul,
            "<=" | "le" => Builtin::Le,
            "<" | "lt" => Builtin::Lt,
            "=" | "eq" => Builtin::Eq,
            "and" => Builtin::And,
            "or" => Builtin::Or,
            "not" => Builtin::Not,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Builtin::Not => 1,
            _ => 2,
        }
    }

    fn result(self) -> ResultSort {
        match self {
            Builtin::Add | Builtin::Sub | Builtin::Mul => ResultSort::Opaque,
            _ => ResultSort::Boolean,
        }
    }
}

/// Whether a function's result may steer a conditional.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResultSort {
    #[default]
    Opaque,
    Boolean,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionSig {
    pub arity: usize,
    pub kind: FunctionKind,
    pub result: ResultSort,
}

impl FunctionSig {
    pub fn uninterpreted(arity: usize) -> Self {
        FunctionSig {
            arity,
            kind: FunctionKind::Uninterpreted,
            result: ResultSort::Opaque,
        }
    }
}

/// One entry of a node's secret set: a sensor of the node or a literal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SecretAtom {
    Sensor(SensorId),
    Lit(Literal),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub depth: usize,
    pub comp: CompRelation,
    pub keys: BTreeSet<KeyId>,
    pub functions: BTreeMap<String, FunctionSig>,
    pub sensor_streams: BTreeMap<Label, BTreeMap<SensorId, Vec<Literal>>>,
    pub secret: BTreeMap<Label, BTreeSet<SecretAtom>>,
    pub levels: BTreeMap<Label, u32>,
    pub policy: Policy,
    pub seed: u64,
    pub max_steps: usize,
    /// When set, the analysis binds input variables only from messages whose
    /// length equals the input's arity.
    pub precise_match: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            depth: 4,
            comp: CompRelation::All,
            keys: BTreeSet::new(),
            functions: BTreeMap::new(),
            sensor_streams: BTreeMap::new(),
            secret: BTreeMap::new(),
            levels: BTreeMap::new(),
            policy: Policy::None,
            seed: 0,
            max_steps: 10_000,
            precise_match: false,
        }
    }
}

const DEFAULT_STREAM: &[Literal] = &[Literal::Int(0)];

impl AnalysisConfig {
    /// Cyclic environment stream of sensor `i` at node `l`; constant 0 when
    /// not declared.
    pub fn stream(&self, l: &Label, i: SensorId) -> &[Literal] {
        self.sensor_streams
            .get(l)
            .and_then(|m| m.get(&i))
            .map(Vec::as_slice)
            .unwrap_or(DEFAULT_STREAM)
    }

    pub fn signature(&self, func: &str) -> Option<&FunctionSig> {
        self.functions.get(func)
    }

    /// Checks every label/sensor/key reference against `system`, verifies
    /// declared arities against the uses in the source, and infers
    /// uninterpreted signatures for functions the config does not mention.
    pub fn resolve_for(&mut self, system: &System) -> Result<(), ConfigError> {
        if self.depth == 0 {
            return Err(ConfigError::ZeroDepth);
        }
        let labels = system.labels();
        let check_label = |l: &Label| -> Result<(), ConfigError> {
            if labels.contains(l) {
                Ok(())
            } else {
                Err(ConfigError::UnknownLabel(l.clone()))
            }
        };
        if let CompRelation::Pairs(pairs) = &self.comp {
            for (a, b) in pairs {
                check_label(a)?;
                check_label(b)?;
            }
        }
        if let Policy::Pairs(pairs) = &self.policy {
            for (a, b) in pairs {
                check_label(a)?;
                check_label(b)?;
            }
        }
        for l in self.levels.keys() {
            check_label(l)?;
        }
        for (l, streams) in &self.sensor_streams {
            check_label(l)?;
            let declared = system.node(l).expect("label checked").sensor_ids();
            for (i, stream) in streams {
                if !declared.contains(i) {
                    return Err(ConfigError::UnknownSensor(l.clone(), *i));
                }
                if stream.is_empty() {
                    return Err(ConfigError::EmptyStream(l.clone(), *i));
                }
            }
        }
        for (l, atoms) in &self.secret {
            check_label(l)?;
            let declared = system.node(l).expect("label checked").sensor_ids();
            for atom in atoms {
                if let SecretAtom::Sensor(i) = atom {
                    if !declared.contains(i) {
                        return Err(ConfigError::UnknownSensor(l.clone(), *i));
                    }
                }
            }
        }
        for (name, sig) in &self.functions {
            if let FunctionKind::Builtin(b) = sig.kind {
                if sig.arity != b.arity() {
                    return Err(ConfigError::BuiltinArity(name.clone(), b.arity(), sig.arity));
                }
            }
        }
        let mut uses = FunctionUses::default();
        for node in &system.nodes {
            for c in &node.components {
                match c {
                    Component::Process(p) => uses.visit_process(p, &self.keys)?,
                    Component::Actuator { body, .. } => uses.visit_actuator(body),
                    _ => {}
                }
            }
        }
        for (name, arity) in uses.seen {
            match self.functions.get(&name) {
                Some(sig) if sig.arity != arity => {
                    return Err(ConfigError::ArityConflict(name, arity, sig.arity));
                }
                Some(_) => {}
                None => {
                    self.functions
                        .insert(name, FunctionSig::uninterpreted(arity));
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct FunctionUses {
    seen: BTreeMap<String, usize>,
}

impl FunctionUses {
    fn visit_process(&mut self, p: &Process, keys: &BTreeSet<KeyId>) -> Result<(), ConfigError> {
        match p {
            Process::Nil | Process::IterVar(_) => Ok(()),
            Process::MultiOut { terms, cont, .. } => {
                for t in terms {
                    self.visit_term(t, keys)?;
                }
                self.visit_process(cont, keys)
            }
            Process::Input { matches, cont, .. } => {
                for t in matches {
                    self.visit_term(t, keys)?;
                }
                self.visit_process(cont, keys)
            }
            Process::Decrypt {
                subject,
                matches,
                key,
                cont,
                ..
            } => {
                self.visit_term(subject, keys)?;
                for t in matches {
                    self.visit_term(t, keys)?;
                }
                if !keys.contains(key) {
                    return Err(ConfigError::UnknownKey(key.clone()));
                }
                self.visit_process(cont, keys)
            }
            Process::Cond {
                guard,
                then_branch,
                else_branch,
            } => {
                self.visit_term(guard, keys)?;
                self.visit_process(then_branch, keys)?;
                self.visit_process(else_branch, keys)
            }
            Process::Mu { body, .. } => self.visit_process(body, keys),
            Process::Assign { term, cont, .. } => {
                self.visit_term(term, keys)?;
                self.visit_process(cont, keys)
            }
            Process::ActOut { cont, .. } => self.visit_process(cont, keys),
        }
    }

    fn visit_actuator(&mut self, _a: &ActuatorProc) {
        // Actuator bodies contain no terms.
    }

    fn visit_term(&mut self, t: &Term, keys: &BTreeSet<KeyId>) -> Result<(), ConfigError> {
        match t {
            Term::Const(_) | Term::SensorLoc(_) | Term::Var(_) => Ok(()),
            Term::Enc { args, key } => {
                if !keys.contains(key) {
                    return Err(ConfigError::UnknownKey(key.clone()));
                }
                for a in args {
                    self.visit_term(a, keys)?;
                }
                Ok(())
            }
            Term::App { func, args } => {
                match self.seen.get(func) {
                    Some(&n) if n != args.len() => {
                        return Err(ConfigError::InconsistentUse(func.clone(), n, args.len()));
                    }
                    Some(_) => {}
                    None => {
                        self.seen.insert(func.clone(), args.len());
                    }
                }
                for a in args {
                    self.visit_term(a, keys)?;
                }
                Ok(())
            }
        }
    }
}

/// Problems with a config document, either syntactic or semantic.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(ParseError),
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("config references unknown node {0}")]
    UnknownLabel(Label),
    #[error("config references sensor {1} which node {0} does not declare")]
    UnknownSensor(Label, SensorId),
    #[error("sensor {1} of node {0} has an empty stream")]
    EmptyStream(Label, SensorId),
    #[error("sensor identifier key {0:?} is not a natural number")]
    BadSensorKey(String),
    #[error("secret entry {0:?} looks like a sensor reference but is malformed")]
    BadSensorRef(String),
    #[error("unknown function kind {0:?}")]
    UnknownKind(String),
    #[error("unknown result sort {0:?}")]
    UnknownResultSort(String),
    #[error("unknown marker {0:?} (expected \"all\" or a list of pairs)")]
    UnknownCompMarker(String),
    #[error("unknown policy {0:?} (expected \"none\", \"levels\" or a list of pairs)")]
    UnknownPolicyMarker(String),
    #[error("builtin function {0} takes {1} arguments, config declares {2}")]
    BuiltinArity(String, usize, usize),
    #[error("function {0} is used with {1} arguments but declared with arity {2}")]
    ArityConflict(String, usize, usize),
    #[error("function {0} is used with both {1} and {2} arguments")]
    InconsistentUse(String, usize, usize),
    #[error("key {0} is used but not declared in the key set")]
    UnknownKey(KeyId),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    depth: Option<usize>,
    comp: Option<RawRelation>,
    keys: Option<Vec<String>>,
    functions: Option<BTreeMap<String, RawFunction>>,
    sensors: Option<BTreeMap<String, BTreeMap<String, RawStream>>>,
    secret: Option<BTreeMap<String, Vec<Literal>>>,
    levels: Option<BTreeMap<String, u32>>,
    policy: Option<RawRelation>,
    seed: Option<u64>,
    max_steps: Option<usize>,
    precise_match: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawRelation {
    Marker(String),
    Pairs(Vec<(String, String)>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    arity: usize,
    kind: Option<String>,
    result_sort: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawStream {
    One(Literal),
    Many(Vec<Literal>),
}

/// Parses a JSON config document. Call [`AnalysisConfig::resolve_for`]
/// afterwards to check it against the system it will drive.
pub fn parse_config(source: &str) -> Result<AnalysisConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(source).map_err(|e| {
        ConfigError::Syntax(ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
            expected: Vec::new(),
        })
    })?;
    let mut cfg = AnalysisConfig::default();
    if let Some(d) = raw.depth {
        cfg.depth = d;
    }
    if let Some(comp) = raw.comp {
        cfg.comp = match comp {
            RawRelation::Marker(m) if m == "all" => CompRelation::All,
            RawRelation::Marker(m) => return Err(ConfigError::UnknownCompMarker(m)),
            RawRelation::Pairs(pairs) => CompRelation::pairs(
                pairs
                    .into_iter()
                    .map(|(a, b)| (Label::new(a), Label::new(b))),
            ),
        };
    }
    if let Some(keys) = raw.keys {
        cfg.keys = keys.into_iter().map(KeyId::new).collect();
    }
    if let Some(functions) = raw.functions {
        for (name, f) in functions {
            let kind = match f.kind.as_deref() {
                None | Some("uninterpreted") => FunctionKind::Uninterpreted,
                Some(k) => FunctionKind::Builtin(
                    Builtin::from_kind(k).ok_or_else(|| ConfigError::UnknownKind(k.to_string()))?,
                ),
            };
            let result = match f.result_sort.as_deref() {
                Some("boolean") => ResultSort::Boolean,
                Some("opaque") => ResultSort::Opaque,
                Some(other) => return Err(ConfigError::UnknownResultSort(other.to_string())),
                None => match kind {
                    FunctionKind::Builtin(b) => b.result(),
                    FunctionKind::Uninterpreted => ResultSort::Opaque,
                },
            };
            cfg.functions.insert(
                name,
                FunctionSig {
                    arity: f.arity,
                    kind,
                    result,
                },
            );
        }
    }
    if let Some(sensors) = raw.sensors {
        for (label, streams) in sensors {
            let mut per_node = BTreeMap::new();
            for (key, stream) in streams {
                let id = key
                    .parse::<u32>()
                    .map_err(|_| ConfigError::BadSensorKey(key.clone()))?;
                let values = match stream {
                    RawStream::One(v) => vec![v],
                    RawStream::Many(vs) => vs,
                };
                per_node.insert(SensorId(id), values);
            }
            cfg.sensor_streams.insert(Label::new(label), per_node);
        }
    }
    if let Some(secret) = raw.secret {
        for (label, atoms) in secret {
            let mut set = BTreeSet::new();
            for atom in atoms {
                set.insert(parse_secret_atom(atom)?);
            }
            cfg.secret.insert(Label::new(label), set);
        }
    }
    if let Some(levels) = raw.levels {
        cfg.levels = levels
            .into_iter()
            .map(|(l, n)| (Label::new(l), n))
            .collect();
    }
    if let Some(policy) = raw.policy {
        cfg.policy = match policy {
            RawRelation::Marker(m) if m == "none" => Policy::None,
            RawRelation::Marker(m) if m == "levels" => Policy::Levels,
            RawRelation::Marker(m) => return Err(ConfigError::UnknownPolicyMarker(m)),
            RawRelation::Pairs(pairs) => Policy::Pairs(
                pairs
                    .into_iter()
                    .map(|(a, b)| (Label::new(a), Label::new(b)))
                    .collect(),
            ),
        };
    }
    if let Some(seed) = raw.seed {
        cfg.seed = seed;
    }
    if let Some(max_steps) = raw.max_steps {
        cfg.max_steps = max_steps;
    }
    if let Some(pm) = raw.precise_match {
        cfg.precise_match = pm;
    }
    Ok(cfg)
}

// Sensor references are written "@i"; any other string is an atom literal.
fn parse_secret_atom(lit: Literal) -> Result<SecretAtom, ConfigError> {
    match lit {
        Literal::Atom(s) if s.starts_with('@') => s[1..]
            .parse::<u32>()
            .map(|i| SecretAtom::Sensor(SensorId(i)))
            .map_err(|_| ConfigError::BadSensorRef(s)),
        other => Ok(SecretAtom::Lit(other)),
    }
}
