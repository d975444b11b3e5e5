//! Secrecy classification and the security checks run on top of a solved
//! estimate: confinement, clearance levels, explicit flow policies and
//! actuator usage, together with their dynamic counterparts over traces.
//!
//! Classification is two-valued. A value is secret when it contains a drop of
//! secret data: atoms are classified by the node that produced them, an
//! application is secret as soon as one argument is, and an encryption is
//! always public since only key holders can look inside.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{AbstractValue, ActionName, ActuatorId, ActuatorProc, Label, Literal, SensorId, System};
use crate::cfa::Estimate;
use crate::config::{AnalysisConfig, SecretAtom};
use crate::semantics::{ConcreteValue, Event, Trace};

/// Secrecy class of a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecrecyClass {
    Secret,
    Public,
}

/// Per-node split of atoms into secret and public; everything not listed is
/// public.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Classification {
    secret_sensors: BTreeMap<Label, BTreeSet<SensorId>>,
    secret_literals: BTreeMap<Label, BTreeSet<Literal>>,
    /// Values produced by the streams of secret sensors. A concrete reading
    /// keeps its provenance when it travels to other nodes, mirroring the
    /// label annotation on the abstract side.
    secret_stream_values: BTreeSet<Literal>,
}

impl Classification {
    pub fn all_public() -> Self {
        Classification::default()
    }

    pub fn with_secret_sensor(label: Label, id: SensorId) -> Self {
        let mut cls = Classification::default();
        cls.secret_sensors.entry(label).or_default().insert(id);
        cls
    }

    /// Builds the classification declared by `cfg`, folding the streams of
    /// secret sensors into the secret value set.
    pub fn from_config(cfg: &AnalysisConfig) -> Self {
        let mut cls = Classification::default();
        for (label, atoms) in &cfg.secret {
            for atom in atoms {
                match atom {
                    SecretAtom::Sensor(id) => {
                        cls.secret_sensors
                            .entry(label.clone())
                            .or_default()
                            .insert(*id);
                        for v in cfg.stream(label, *id) {
                            cls.secret_stream_values.insert(v.clone());
                        }
                    }
                    SecretAtom::Lit(v) => {
                        cls.secret_literals
                            .entry(label.clone())
                            .or_default()
                            .insert(v.clone());
                    }
                }
            }
        }
        cls
    }

    pub fn is_empty(&self) -> bool {
        self.secret_sensors.is_empty() && self.secret_literals.is_empty()
    }

    fn sensor_is_secret(&self, label: &Label, id: SensorId) -> bool {
        self.secret_sensors
            .get(label)
            .is_some_and(|s| s.contains(&id))
    }

    fn literal_is_secret_at(&self, label: &Label, v: &Literal) -> bool {
        self.secret_literals
            .get(label)
            .is_some_and(|s| s.contains(v))
    }

    /// Static classification of an abstract value.
    pub fn s_cls(&self, av: &AbstractValue) -> SecrecyClass {
        match av {
            AbstractValue::TopS { .. } => SecrecyClass::Secret,
            AbstractValue::TopP { .. } => SecrecyClass::Public,
            AbstractValue::Sensor { id, label } => {
                if self.sensor_is_secret(label, *id) {
                    SecrecyClass::Secret
                } else {
                    SecrecyClass::Public
                }
            }
            AbstractValue::Const { value, label } => {
                if self.literal_is_secret_at(label, value) {
                    SecrecyClass::Secret
                } else {
                    SecrecyClass::Public
                }
            }
            AbstractValue::Enc { .. } => SecrecyClass::Public,
            AbstractValue::App { args, .. } => {
                if args.iter().any(|a| self.s_cls(a) == SecrecyClass::Secret) {
                    SecrecyClass::Secret
                } else {
                    SecrecyClass::Public
                }
            }
        }
    }

    /// Dynamic classification of a concrete value held at node `label`.
    ///
    /// Concrete values carry no origin annotation, so literals are secret when
    /// the holding node classifies them so, or when some secret sensor's
    /// stream can produce them.
    pub fn d_cls(&self, v: &ConcreteValue, label: &Label) -> SecrecyClass {
        match v {
            ConcreteValue::Lit { value } => {
                if self.literal_is_secret_at(label, value)
                    || self.secret_stream_values.contains(value)
                {
                    SecrecyClass::Secret
                } else {
                    SecrecyClass::Public
                }
            }
            ConcreteValue::Enc { .. } => SecrecyClass::Public,
            ConcreteValue::App { args, .. } => {
                if args
                    .iter()
                    .any(|a| self.d_cls(a, label) == SecrecyClass::Secret)
                {
                    SecrecyClass::Secret
                } else {
                    SecrecyClass::Public
                }
            }
        }
    }
}

/// Outcome of one security check; `holds` iff `witnesses` is empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub holds: bool,
    pub witnesses: Vec<Witness>,
}

impl Verdict {
    pub fn new(property: impl Into<String>, witnesses: Vec<Witness>) -> Self {
        Verdict {
            property: property.into(),
            holds: witnesses.is_empty(),
            witnesses,
        }
    }
}

/// Evidence attached to a failing verdict.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A message tuple in kappa whose `index`-th value is classified secret.
    KappaValue {
        receiver: Label,
        sender: Label,
        values: Vec<AbstractValue>,
        index: usize,
    },
    /// A sender/receiver pair evidenced by kappa that a policy forbids.
    Flow { sender: Label, receiver: Label },
    /// A trace event violating a dynamic property.
    Event { index: usize, description: String },
    /// A declared action the analysis proves can never fire, or an actuator
    /// that is never addressed at all.
    Actuator {
        node: Label,
        actuator: ActuatorId,
        never_triggered: Vec<ActionName>,
        never_used: bool,
    },
}

impl Witness {
    /// Tags a trace-event witness with the seed of the run that produced it,
    /// so witnesses from different runs stay distinguishable once merged.
    pub fn with_seed(self, seed: u64) -> Witness {
        match self {
            Witness::Event { index, description } => Witness::Event {
                index,
                description: format!("seed {seed}: {description}"),
            },
            other => other,
        }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::KappaValue {
                receiver,
                sender,
                values,
                index,
            } => {
                write!(
                    f,
                    "kappa({receiver}): tuple from {sender} carries a secret at position {index}: <"
                )?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ">")
            }
            Witness::Flow { sender, receiver } => write!(f, "flow {sender} -> {receiver}"),
            Witness::Event { index, description } => write!(f, "event {index}: {description}"),
            Witness::Actuator {
                node,
                actuator,
                never_triggered,
                never_used,
            } => {
                if *never_used {
                    write!(f, "actuator {actuator} of {node} is never used")
                } else {
                    write!(f, "actuator {actuator} of {node} never performs:")?;
                    for a in never_triggered {
                        write!(f, " {a}")?;
                    }
                    Ok(())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SecurityError {
    #[error("no clearance level declared for node {0}")]
    MissingLevel(Label),
}

/// A node is confined when nothing it may send is classified secret: every
/// tuple in any kappa image whose sender is `node` must carry only public
/// values.
pub fn check_confined(e: &Estimate, cls: &Classification, node: &Label) -> Verdict {
    let mut witnesses = Vec::new();
    for (receiver, msgs) in &e.kappa {
        for msg in msgs {
            if &msg.from != node {
                continue;
            }
            for (index, v) in msg.values.iter().enumerate() {
                if cls.s_cls(v) == SecrecyClass::Secret {
                    witnesses.push(Witness::KappaValue {
                        receiver: receiver.clone(),
                        sender: msg.from.clone(),
                        values: msg.values.clone(),
                        index,
                    });
                }
            }
        }
    }
    witnesses.sort();
    witnesses.dedup();
    Verdict::new(format!("confinement({node})"), witnesses)
}

/// Dynamic counterpart of confinement: no communication sent by `node` in the
/// trace carries a value classified secret.
pub fn check_no_leaks(trace: &Trace, cls: &Classification, node: &Label) -> Verdict {
    let mut witnesses = Vec::new();
    for (index, event) in trace.events.iter().enumerate() {
        let Event::Comm {
            sender,
            receiver,
            values,
        } = event
        else {
            continue;
        };
        if sender != node {
            continue;
        }
        for (i, v) in values.iter().enumerate() {
            if cls.d_cls(&v.concrete, sender) == SecrecyClass::Secret {
                witnesses.push(Witness::Event {
                    index,
                    description: format!(
                        "secret value {} sent to {receiver} (position {i})",
                        v.concrete
                    ),
                });
            }
        }
    }
    Verdict::new(format!("no-leaks({node})"), witnesses)
}

/// No write-down: every flow evidenced by kappa must go from a sender to a
/// receiver of greater or equal clearance.
pub fn check_levels(
    e: &Estimate,
    levels: &BTreeMap<Label, u32>,
) -> Result<Verdict, SecurityError> {
    let mut witnesses = BTreeSet::new();
    for (receiver, msgs) in &e.kappa {
        for msg in msgs {
            let from = levels
                .get(&msg.from)
                .ok_or_else(|| SecurityError::MissingLevel(msg.from.clone()))?;
            let to = levels
                .get(receiver)
                .ok_or_else(|| SecurityError::MissingLevel(receiver.clone()))?;
            if from > to {
                witnesses.insert(Witness::Flow {
                    sender: msg.from.clone(),
                    receiver: receiver.clone(),
                });
            }
        }
    }
    Ok(Verdict::new("levels", witnesses.into_iter().collect()))
}

/// Every kappa-evidenced sender/receiver pair must be allowed by `phi`.
pub fn check_policy(e: &Estimate, phi: &BTreeSet<(Label, Label)>) -> Verdict {
    let witnesses = kappa_flows(e)
        .into_iter()
        .filter(|flow| !phi.contains(flow))
        .map(|(sender, receiver)| Witness::Flow { sender, receiver })
        .collect();
    Verdict::new("policy", witnesses)
}

/// All sender/receiver pairs with at least one message in kappa.
pub fn kappa_flows(e: &Estimate) -> BTreeSet<(Label, Label)> {
    let mut flows = BTreeSet::new();
    for (receiver, msgs) in &e.kappa {
        for msg in msgs {
            flows.insert((msg.from.clone(), receiver.clone()));
        }
    }
    flows
}

/// Usage summary for one declared actuator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorUsage {
    pub node: Label,
    pub actuator: ActuatorId,
    /// Actions the actuator body is willing to accept.
    pub declared: BTreeSet<ActionName>,
    /// Actions the analysis says may be triggered.
    pub triggered: BTreeSet<ActionName>,
    pub never_triggered: BTreeSet<ActionName>,
    pub never_used: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorReport {
    pub entries: Vec<ActuatorUsage>,
}

impl ActuatorReport {
    /// Collapses the report into a verdict: it holds when every declared
    /// action can fire and every actuator is addressed at least once.
    pub fn verdict(&self) -> Verdict {
        let witnesses = self
            .entries
            .iter()
            .filter(|u| u.never_used || !u.never_triggered.is_empty())
            .map(|u| Witness::Actuator {
                node: u.node.clone(),
                actuator: u.actuator,
                never_triggered: u.never_triggered.iter().cloned().collect(),
                never_used: u.never_used,
            })
            .collect();
        Verdict::new("actuators", witnesses)
    }
}

/// Compares each actuator's declared action set with the alpha component of
/// the estimate.
pub fn check_actuators(e: &Estimate, system: &System) -> ActuatorReport {
    let mut entries = Vec::new();
    for node in &system.nodes {
        for c in &node.components {
            let crate::ast::Component::Actuator { id, body } = c else {
                continue;
            };
            let mut declared = BTreeSet::new();
            collect_accepted(body, &mut declared);
            let triggered = e
                .alpha
                .get(&node.label)
                .and_then(|m| m.get(id))
                .cloned()
                .unwrap_or_default();
            let never_triggered = declared.difference(&triggered).cloned().collect();
            entries.push(ActuatorUsage {
                node: node.label.clone(),
                actuator: *id,
                declared,
                never_used: triggered.is_empty(),
                triggered,
                never_triggered,
            });
        }
    }
    ActuatorReport { entries }
}

fn collect_accepted(a: &ActuatorProc, out: &mut BTreeSet<ActionName>) {
    match a {
        ActuatorProc::Nil | ActuatorProc::IterVar(_) => {}
        ActuatorProc::Tau(cont) => collect_accepted(cont, out),
        ActuatorProc::Command { accepted, cont, .. } => {
            out.extend(accepted.iter().cloned());
            collect_accepted(cont, out);
        }
        ActuatorProc::Triggered { cont, .. } => collect_accepted(cont, out),
        ActuatorProc::Mu { body, .. } => collect_accepted(body, out),
    }
}
