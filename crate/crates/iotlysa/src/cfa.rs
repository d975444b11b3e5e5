//! Control-flow analysis: the least estimate of what a system can store,
//! send, compute and trigger.
//!
//! An [`Estimate`] has four components. `sigma_hat` approximates each node's
//! store per location, `kappa` the messages each node may receive (with their
//! sender), `theta` the values each node may compute, and `alpha` the actions
//! each actuator may be asked to perform. Abstract values are cut at the
//! configured depth, so the universe is finite and the least solution exists.
//!
//! [`generate`] compiles a system into monotone clauses, [`solve`] runs a
//! worklist to the least fixed point, [`validate`] re-derives every judgement
//! directly from the syntax tree as an independent oracle, and [`cross_check`]
//! replays a recorded trace against an estimate.
//!
//! Continuations of inputs and decryptions contribute only when a message
//! (respectively a matching encryption) can actually reach them; the other
//! continuations contribute unconditionally.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ast::{
    cut, unfold, AbstractValue, ActionName, ActuatorId, KeyId, Label, Process, SensorId, System,
    Term,
};
use crate::config::{AnalysisConfig, CompRelation};
use crate::security::Classification;
use crate::semantics::{Event, StoreKey, Trace};

/// One message a node may receive: the sender and the value tuple.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KappaMsg {
    pub from: Label,
    pub values: Vec<AbstractValue>,
}

impl fmt::Display for KappaMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, <", self.from)?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ">)")
    }
}

/// Analysis result. Every map is complete over the system's nodes, declared
/// sensors and actuators, and every store location the analysis touched, so
/// empty components are visible and serialization is stable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    pub sigma_hat: BTreeMap<Label, BTreeMap<StoreKey, BTreeSet<AbstractValue>>>,
    pub kappa: BTreeMap<Label, BTreeSet<KappaMsg>>,
    pub theta: BTreeMap<Label, BTreeSet<AbstractValue>>,
    pub alpha: BTreeMap<Label, BTreeMap<ActuatorId, BTreeSet<ActionName>>>,
}

impl Estimate {
    pub fn sigma(&self, l: &Label, key: &StoreKey) -> Option<&BTreeSet<AbstractValue>> {
        self.sigma_hat.get(l)?.get(key)
    }

    /// Largest nesting depth over all abstract values in the estimate.
    pub fn max_depth(&self) -> usize {
        let sigma = self
            .sigma_hat
            .values()
            .flat_map(|m| m.values())
            .flatten()
            .map(AbstractValue::depth);
        let kappa = self
            .kappa
            .values()
            .flatten()
            .flat_map(|m| m.values.iter())
            .map(AbstractValue::depth);
        let theta = self.theta.values().flatten().map(AbstractValue::depth);
        sigma.chain(kappa).chain(theta).max().unwrap_or(0)
    }

    /// Element counts (store values, messages, computed values, actions).
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.sigma_hat
                .values()
                .flat_map(|m| m.values())
                .map(BTreeSet::len)
                .sum(),
            self.kappa.values().map(BTreeSet::len).sum(),
            self.theta.values().map(BTreeSet::len).sum(),
            self.alpha
                .values()
                .flat_map(|m| m.values())
                .map(BTreeSet::len)
                .sum(),
        )
    }
}

/// Handle for the result set of one analyzed term occurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TermVar(usize);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum CellKey {
    Sigma(Label, StoreKey),
    Kappa(Label),
    Theta(Label),
    Alpha(Label, ActuatorId),
    Vartheta(usize),
    Gate(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Fact {
    Value(AbstractValue),
    Message(KappaMsg),
    Action(ActionName),
    Reached,
}

#[derive(Clone, Debug)]
enum Shape {
    Enc(KeyId, Label),
    App(String, Label),
}

#[derive(Clone, Debug)]
enum Clause {
    Fact {
        guard: Option<usize>,
        cell: usize,
        fact: Fact,
    },
    Subset {
        guard: Option<usize>,
        from: usize,
        to: usize,
    },
    /// Cross product of the argument sets, built into a value, cut, and
    /// inserted into the term's set and the node's theta.
    Construct {
        guard: Option<usize>,
        args: Vec<usize>,
        shape: Shape,
        out: usize,
        theta: usize,
    },
    /// Cross product of the argument sets sent as tuples to every receiver.
    Output {
        guard: Option<usize>,
        args: Vec<usize>,
        sender: Label,
        receivers: Vec<usize>,
    },
    /// For every compatible message, bind the components after the match
    /// prefix and mark the continuation reachable.
    InputBind {
        guard: Option<usize>,
        kappa: usize,
        receiver: Label,
        prefix: usize,
        binders: Vec<usize>,
        opens: usize,
    },
    /// For every encryption under the right key with the right arity, bind
    /// the components after the match prefix and mark the continuation
    /// reachable.
    DecryptBind {
        guard: Option<usize>,
        subject: usize,
        key: KeyId,
        prefix: usize,
        binders: Vec<usize>,
        opens: usize,
    },
}

impl Clause {
    fn reads(&self) -> Vec<usize> {
        let mut cells = Vec::new();
        let guard = match self {
            Clause::Fact { guard, .. } => guard,
            Clause::Subset { guard, from, .. } => {
                cells.push(*from);
                guard
            }
            Clause::Construct { guard, args, .. } | Clause::Output { guard, args, .. } => {
                cells.extend(args.iter().copied());
                guard
            }
            Clause::InputBind { guard, kappa, .. } => {
                cells.push(*kappa);
                guard
            }
            Clause::DecryptBind { guard, subject, .. } => {
                cells.push(*subject);
                guard
            }
        };
        cells.extend(guard.iter().copied());
        cells
    }
}

/// Monotone clauses compiled from one system under one configuration.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    clauses: Vec<Clause>,
    cells: BTreeMap<CellKey, usize>,
    cell_count: usize,
    fresh: usize,
    depth: usize,
    comp: CompRelation,
    precise_match: bool,
    cls: Classification,
    labels: Vec<Label>,
    sensors: Vec<(Label, SensorId)>,
    actuators: Vec<(Label, ActuatorId)>,
}

/// Compiles the clauses for `system`.
pub fn generate(system: &System, cfg: &AnalysisConfig) -> ConstraintSet {
    let mut cs = ConstraintSet {
        clauses: Vec::new(),
        cells: BTreeMap::new(),
        cell_count: 0,
        fresh: 0,
        depth: cfg.depth,
        comp: cfg.comp.clone(),
        precise_match: cfg.precise_match,
        cls: Classification::from_config(cfg),
        labels: Vec::new(),
        sensors: Vec::new(),
        actuators: Vec::new(),
    };
    for node in &system.nodes {
        cs.labels.push(node.label.clone());
        for i in node.sensor_ids() {
            cs.sensors.push((node.label.clone(), i));
            let cell = cs.cell(CellKey::Sigma(node.label.clone(), StoreKey::Sensor(i)));
            cs.clauses.push(Clause::Fact {
                guard: None,
                cell,
                fact: Fact::Value(AbstractValue::Sensor {
                    id: i,
                    label: node.label.clone(),
                }),
            });
        }
        for j in node.actuator_ids() {
            cs.actuators.push((node.label.clone(), j));
            cs.cell(CellKey::Alpha(node.label.clone(), j));
        }
        for p in node.processes() {
            cs.gen_proc(&node.label, p, None);
        }
    }
    cs
}

/// The least estimate satisfying the whole system's judgements.
pub fn solve(cs: &ConstraintSet) -> Estimate {
    cs.solve_terms().0
}

/// Convenience for `solve(&generate(system, cfg))`.
pub fn analyze(system: &System, cfg: &AnalysisConfig) -> Estimate {
    solve(&generate(system, cfg))
}

impl ConstraintSet {
    fn cell(&mut self, key: CellKey) -> usize {
        if let Some(&id) = self.cells.get(&key) {
            return id;
        }
        let id = self.cell_count;
        self.cell_count += 1;
        self.cells.insert(key, id);
        id
    }

    fn fresh_cell(&mut self, gate: bool) -> usize {
        let n = self.fresh;
        self.fresh += 1;
        let key = if gate {
            CellKey::Gate(n)
        } else {
            CellKey::Vartheta(n)
        };
        self.cell(key)
    }

    /// Emits the clauses for one term occurrence at node `l` and returns the
    /// handle of its result set. Every value the term may denote is also
    /// forced into the node's theta.
    pub fn analyze_term(&mut self, l: &Label, term: &Term) -> TermVar {
        TermVar(self.gen_term(l, term, None))
    }

    fn gen_term(&mut self, l: &Label, term: &Term, guard: Option<usize>) -> usize {
        let out = self.fresh_cell(false);
        let theta = self.cell(CellKey::Theta(l.clone()));
        match term {
            Term::Const(v) => {
                let av = AbstractValue::Const {
                    value: v.clone(),
                    label: l.clone(),
                };
                for cell in [out, theta] {
                    self.clauses.push(Clause::Fact {
                        guard,
                        cell,
                        fact: Fact::Value(av.clone()),
                    });
                }
            }
            Term::SensorLoc(i) => {
                let av = AbstractValue::Sensor {
                    id: *i,
                    label: l.clone(),
                };
                for cell in [out, theta] {
                    self.clauses.push(Clause::Fact {
                        guard,
                        cell,
                        fact: Fact::Value(av.clone()),
                    });
                }
            }
            Term::Var(x) => {
                let sigma = self.cell(CellKey::Sigma(l.clone(), StoreKey::Var(x.clone())));
                self.clauses.push(Clause::Subset {
                    guard,
                    from: sigma,
                    to: out,
                });
                self.clauses.push(Clause::Subset {
                    guard,
                    from: out,
                    to: theta,
                });
            }
            Term::Enc { args, key } => {
                let arg_cells: Vec<usize> =
                    args.iter().map(|a| self.gen_term(l, a, guard)).collect();
                self.clauses.push(Clause::Construct {
                    guard,
                    args: arg_cells,
                    shape: Shape::Enc(key.clone(), l.clone()),
                    out,
                    theta,
                });
            }
            Term::App { func, args } => {
                let arg_cells: Vec<usize> =
                    args.iter().map(|a| self.gen_term(l, a, guard)).collect();
                self.clauses.push(Clause::Construct {
                    guard,
                    args: arg_cells,
                    shape: Shape::App(func.clone(), l.clone()),
                    out,
                    theta,
                });
            }
        }
        out
    }

    fn gen_proc(&mut self, l: &Label, p: &Process, guard: Option<usize>) {
        match p {
            Process::Nil | Process::IterVar(_) => {}
            Process::Mu { .. } => {
                let unrolled = unfold(p, self.depth);
                self.gen_proc(l, &unrolled, guard);
            }
            Process::MultiOut {
                terms,
                receivers,
                cont,
            } => {
                let args: Vec<usize> = terms.iter().map(|t| self.gen_term(l, t, guard)).collect();
                let receiver_cells: Vec<usize> = receivers
                    .iter()
                    .map(|r| self.cell(CellKey::Kappa(r.clone())))
                    .collect();
                self.clauses.push(Clause::Output {
                    guard,
                    args,
                    sender: l.clone(),
                    receivers: receiver_cells,
                });
                self.gen_proc(l, cont, guard);
            }
            Process::Input {
                matches,
                binders,
                cont,
            } => {
                for t in matches {
                    self.gen_term(l, t, guard);
                }
                let kappa = self.cell(CellKey::Kappa(l.clone()));
                let binder_cells: Vec<usize> = binders
                    .iter()
                    .map(|x| self.cell(CellKey::Sigma(l.clone(), StoreKey::Var(x.clone()))))
                    .collect();
                let opens = self.fresh_cell(true);
                self.clauses.push(Clause::InputBind {
                    guard,
                    kappa,
                    receiver: l.clone(),
                    prefix: matches.len(),
                    binders: binder_cells,
                    opens,
                });
                self.gen_proc(l, cont, Some(opens));
            }
            Process::Decrypt {
                subject,
                matches,
                binders,
                key,
                cont,
            } => {
                let subject_cell = self.gen_term(l, subject, guard);
                for t in matches {
                    self.gen_term(l, t, guard);
                }
                let binder_cells: Vec<usize> = binders
                    .iter()
                    .map(|x| self.cell(CellKey::Sigma(l.clone(), StoreKey::Var(x.clone()))))
                    .collect();
                let opens = self.fresh_cell(true);
                self.clauses.push(Clause::DecryptBind {
                    guard,
                    subject: subject_cell,
                    key: key.clone(),
                    prefix: matches.len(),
                    binders: binder_cells,
                    opens,
                });
                self.gen_proc(l, cont, Some(opens));
            }
            Process::Cond {
                guard: g,
                then_branch,
                else_branch,
            } => {
                self.gen_term(l, g, guard);
                self.gen_proc(l, then_branch, guard);
                self.gen_proc(l, else_branch, guard);
            }
            Process::Assign { var, term, cont } => {
                let theta = self.gen_term(l, term, guard);
                let sigma = self.cell(CellKey::Sigma(l.clone(), StoreKey::Var(var.clone())));
                self.clauses.push(Clause::Subset {
                    guard,
                    from: theta,
                    to: sigma,
                });
                self.gen_proc(l, cont, guard);
            }
            Process::ActOut {
                actuator,
                action,
                cont,
            } => {
                let alpha = self.cell(CellKey::Alpha(l.clone(), *actuator));
                self.clauses.push(Clause::Fact {
                    guard,
                    cell: alpha,
                    fact: Fact::Action(action.clone()),
                });
                self.gen_proc(l, cont, guard);
            }
        }
    }

    /// Worklist to the least fixed point; also returns the solved set of each
    /// term occurrence, indexed by [`TermVar`].
    pub fn solve_terms(&self) -> (Estimate, Vec<BTreeSet<AbstractValue>>) {
        let mut sets: Vec<BTreeSet<Fact>> = vec![BTreeSet::new(); self.cell_count];
        let mut readers: Vec<Vec<usize>> = vec![Vec::new(); self.cell_count];
        for (ci, clause) in self.clauses.iter().enumerate() {
            for cell in clause.reads() {
                readers[cell].push(ci);
            }
        }
        let mut queued = vec![true; self.clauses.len()];
        let mut queue: VecDeque<usize> = (0..self.clauses.len()).collect();
        while let Some(ci) = queue.pop_front() {
            queued[ci] = false;
            for (cell, fact) in self.fire(&self.clauses[ci], &sets) {
                if sets[cell].insert(fact) {
                    for &r in &readers[cell] {
                        if !queued[r] {
                            queued[r] = true;
                            queue.push_back(r);
                        }
                    }
                }
            }
        }
        let estimate = self.extract(&sets);
        let mut varthetas = vec![BTreeSet::new(); self.fresh];
        for (key, &id) in &self.cells {
            if let CellKey::Vartheta(n) = key {
                varthetas[*n] = sets[id]
                    .iter()
                    .filter_map(|f| match f {
                        Fact::Value(v) => Some(v.clone()),
                        _ => None,
                    })
                    .collect();
            }
        }
        (estimate, varthetas)
    }

    fn fire(&self, clause: &Clause, sets: &[BTreeSet<Fact>]) -> Vec<(usize, Fact)> {
        let open = |guard: &Option<usize>| guard.is_none_or(|g| !sets[g].is_empty());
        let values = |cell: usize| -> Vec<&AbstractValue> {
            sets[cell]
                .iter()
                .filter_map(|f| match f {
                    Fact::Value(v) => Some(v),
                    _ => None,
                })
                .collect()
        };
        let mut out = Vec::new();
        match clause {
            Clause::Fact { guard, cell, fact } => {
                if open(guard) {
                    out.push((*cell, fact.clone()));
                }
            }
            Clause::Subset { guard, from, to } => {
                if open(guard) {
                    out.extend(sets[*from].iter().map(|f| (*to, f.clone())));
                }
            }
            Clause::Construct {
                guard,
                args,
                shape,
                out: target,
                theta,
            } => {
                if open(guard) {
                    let arg_values: Vec<Vec<&AbstractValue>> =
                        args.iter().map(|&c| values(c)).collect();
                    cross(&arg_values, &mut |tuple| {
                        let built = match shape {
                            Shape::Enc(key, label) => AbstractValue::Enc {
                                args: tuple.iter().map(|v| (*v).clone()).collect(),
                                key: key.clone(),
                                label: label.clone(),
                            },
                            Shape::App(func, label) => AbstractValue::App {
                                func: func.clone(),
                                args: tuple.iter().map(|v| (*v).clone()).collect(),
                                label: label.clone(),
                            },
                        };
                        let built = cut(&built, self.depth, &self.cls);
                        out.push((*target, Fact::Value(built.clone())));
                        out.push((*theta, Fact::Value(built)));
                    });
                }
            }
            Clause::Output {
                guard,
                args,
                sender,
                receivers,
            } => {
                if open(guard) {
                    let arg_values: Vec<Vec<&AbstractValue>> =
                        args.iter().map(|&c| values(c)).collect();
                    cross(&arg_values, &mut |tuple| {
                        let msg = KappaMsg {
                            from: sender.clone(),
                            values: tuple.iter().map(|v| (*v).clone()).collect(),
                        };
                        for &r in receivers {
                            out.push((r, Fact::Message(msg.clone())));
                        }
                    });
                }
            }
            Clause::InputBind {
                guard,
                kappa,
                receiver,
                prefix,
                binders,
                opens,
            } => {
                if open(guard) {
                    for fact in &sets[*kappa] {
                        let Fact::Message(msg) = fact else { continue };
                        if !self.comp.compatible(&msg.from, receiver) {
                            continue;
                        }
                        if self.precise_match && msg.values.len() != prefix + binders.len() {
                            continue;
                        }
                        for (i, &cell) in binders.iter().enumerate() {
                            if let Some(v) = msg.values.get(prefix + i) {
                                out.push((cell, Fact::Value(v.clone())));
                            }
                        }
                        out.push((*opens, Fact::Reached));
                    }
                }
            }
            Clause::DecryptBind {
                guard,
                subject,
                key,
                prefix,
                binders,
                opens,
            } => {
                if open(guard) {
                    for v in values(*subject) {
                        let AbstractValue::Enc { args, key: k2, .. } = v else {
                            continue;
                        };
                        if k2 != key || args.len() != prefix + binders.len() {
                            continue;
                        }
                        for (i, &cell) in binders.iter().enumerate() {
                            out.push((cell, Fact::Value(args[prefix + i].clone())));
                        }
                        out.push((*opens, Fact::Reached));
                    }
                }
            }
        }
        out
    }

    fn extract(&self, sets: &[BTreeSet<Fact>]) -> Estimate {
        let mut e = Estimate::default();
        for l in &self.labels {
            e.sigma_hat.entry(l.clone()).or_default();
            e.kappa.entry(l.clone()).or_default();
            e.theta.entry(l.clone()).or_default();
        }
        for (l, j) in &self.actuators {
            e.alpha
                .entry(l.clone())
                .or_default()
                .entry(*j)
                .or_default();
        }
        for (key, &id) in &self.cells {
            match key {
                CellKey::Sigma(l, k) => {
                    let entry = e
                        .sigma_hat
                        .entry(l.clone())
                        .or_default()
                        .entry(k.clone())
                        .or_default();
                    entry.extend(sets[id].iter().filter_map(|f| match f {
                        Fact::Value(v) => Some(v.clone()),
                        _ => None,
                    }));
                }
                CellKey::Kappa(l) => {
                    let entry = e.kappa.entry(l.clone()).or_default();
                    entry.extend(sets[id].iter().filter_map(|f| match f {
                        Fact::Message(m) => Some(m.clone()),
                        _ => None,
                    }));
                }
                CellKey::Theta(l) => {
                    let entry = e.theta.entry(l.clone()).or_default();
                    entry.extend(sets[id].iter().filter_map(|f| match f {
                        Fact::Value(v) => Some(v.clone()),
                        _ => None,
                    }));
                }
                CellKey::Alpha(l, j) => {
                    let entry = e
                        .alpha
                        .entry(l.clone())
                        .or_default()
                        .entry(*j)
                        .or_default();
                    entry.extend(sets[id].iter().filter_map(|f| match f {
                        Fact::Action(a) => Some(a.clone()),
                        _ => None,
                    }));
                }
                CellKey::Vartheta(_) | CellKey::Gate(_) => {}
            }
        }
        e
    }
}

/// Calls `f` for every tuple in the cross product of `sets`, in order.
fn cross<'a, T>(sets: &[Vec<&'a T>], f: &mut impl FnMut(&[&'a T])) {
    fn rec<'a, T>(sets: &[Vec<&'a T>], acc: &mut Vec<&'a T>, f: &mut impl FnMut(&[&'a T])) {
        if acc.len() == sets.len() {
            f(acc);
            return;
        }
        for v in &sets[acc.len()] {
            acc.push(v);
            rec(sets, acc, f);
            acc.pop();
        }
    }
    rec(sets, &mut Vec::new(), f);
}

/// One unsatisfied judgement instance found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// A declared sensor location lacks its own reading.
    SensorInit { label: Label, sensor: SensorId },
    /// A value a term may denote is missing from the node's theta.
    Computed { label: Label, value: AbstractValue },
    /// A value bound by assignment, input or decryption is missing from the
    /// store estimate.
    Binding {
        label: Label,
        key: StoreKey,
        value: AbstractValue,
    },
    /// A sendable tuple is missing from a receiver's kappa.
    Message { receiver: Label, msg: KappaMsg },
    /// A triggerable action is missing from alpha.
    Action {
        label: Label,
        actuator: ActuatorId,
        action: ActionName,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SensorInit { label, sensor } => {
                write!(f, "{label}: sensor location @{sensor} lacks its reading")
            }
            Violation::Computed { label, value } => {
                write!(f, "{label}: computable value {value} not recorded")
            }
            Violation::Binding { label, key, value } => {
                write!(f, "{label}: {key} may be bound to {value}, not recorded")
            }
            Violation::Message { receiver, msg } => {
                write!(f, "{receiver}: receivable message {msg} not recorded")
            }
            Violation::Action {
                label,
                actuator,
                action,
            } => {
                write!(
                    f,
                    "{label}: actuator {actuator} may be asked to {action}, not recorded"
                )
            }
        }
    }
}

/// Checks an estimate against the system's judgements, re-deriving them
/// directly from the syntax tree. Empty result means the estimate is valid;
/// the solved least estimate always is, and removing any element from it
/// makes some judgement fail.
pub fn validate(system: &System, cfg: &AnalysisConfig, e: &Estimate) -> Vec<Violation> {
    let checker = Validator {
        e,
        depth: cfg.depth,
        comp: cfg.comp.clone(),
        precise_match: cfg.precise_match,
        cls: Classification::from_config(cfg),
    };
    let mut out = BTreeSet::new();
    for node in &system.nodes {
        for i in node.sensor_ids() {
            let seeded = e
                .sigma(&node.label, &StoreKey::Sensor(i))
                .is_some_and(|set| {
                    set.contains(&AbstractValue::Sensor {
                        id: i,
                        label: node.label.clone(),
                    })
                });
            if !seeded {
                out.insert(Violation::SensorInit {
                    label: node.label.clone(),
                    sensor: i,
                });
            }
        }
        for p in node.processes() {
            checker.check_proc(&node.label, p, &mut out);
        }
    }
    out.into_iter().collect()
}

struct Validator<'a> {
    e: &'a Estimate,
    depth: usize,
    comp: CompRelation,
    precise_match: bool,
    cls: Classification,
}

impl Validator<'_> {
    /// Least result set of a term given the store estimate, checking on the
    /// way that every value is recorded in theta.
    fn check_term(
        &self,
        l: &Label,
        term: &Term,
        out: &mut BTreeSet<Violation>,
    ) -> BTreeSet<AbstractValue> {
        let result: BTreeSet<AbstractValue> = match term {
            Term::Const(v) => [AbstractValue::Const {
                value: v.clone(),
                label: l.clone(),
            }]
            .into(),
            Term::SensorLoc(i) => [AbstractValue::Sensor {
                id: *i,
                label: l.clone(),
            }]
            .into(),
            Term::Var(x) => self
                .e
                .sigma(l, &StoreKey::Var(x.clone()))
                .cloned()
                .unwrap_or_default(),
            Term::Enc { args, key } => {
                let arg_sets: Vec<BTreeSet<AbstractValue>> =
                    args.iter().map(|a| self.check_term(l, a, out)).collect();
                let arg_refs: Vec<Vec<&AbstractValue>> =
                    arg_sets.iter().map(|s| s.iter().collect()).collect();
                let mut built = BTreeSet::new();
                cross(&arg_refs, &mut |tuple| {
                    built.insert(cut(
                        &AbstractValue::Enc {
                            args: tuple.iter().map(|v| (*v).clone()).collect(),
                            key: key.clone(),
                            label: l.clone(),
                        },
                        self.depth,
                        &self.cls,
                    ));
                });
                built
            }
            Term::App { func, args } => {
                let arg_sets: Vec<BTreeSet<AbstractValue>> =
                    args.iter().map(|a| self.check_term(l, a, out)).collect();
                let arg_refs: Vec<Vec<&AbstractValue>> =
                    arg_sets.iter().map(|s| s.iter().collect()).collect();
                let mut built = BTreeSet::new();
                cross(&arg_refs, &mut |tuple| {
                    built.insert(cut(
                        &AbstractValue::App {
                            func: func.clone(),
                            args: tuple.iter().map(|v| (*v).clone()).collect(),
                            label: l.clone(),
                        },
                        self.depth,
                        &self.cls,
                    ));
                });
                built
            }
        };
        let theta = self.e.theta.get(l);
        for v in &result {
            if !theta.is_some_and(|t| t.contains(v)) {
                out.insert(Violation::Computed {
                    label: l.clone(),
                    value: v.clone(),
                });
            }
        }
        result
    }

    fn check_binding(
        &self,
        l: &Label,
        key: StoreKey,
        value: &AbstractValue,
        out: &mut BTreeSet<Violation>,
    ) {
        let present = self.e.sigma(l, &key).is_some_and(|s| s.contains(value));
        if !present {
            out.insert(Violation::Binding {
                label: l.clone(),
                key,
                value: value.clone(),
            });
        }
    }

    fn check_proc(&self, l: &Label, p: &Process, out: &mut BTreeSet<Violation>) {
        match p {
            Process::Nil | Process::IterVar(_) => {}
            Process::Mu { .. } => self.check_proc(l, &unfold(p, self.depth), out),
            Process::MultiOut {
                terms,
                receivers,
                cont,
            } => {
                let sets: Vec<BTreeSet<AbstractValue>> =
                    terms.iter().map(|t| self.check_term(l, t, out)).collect();
                let refs: Vec<Vec<&AbstractValue>> =
                    sets.iter().map(|s| s.iter().collect()).collect();
                cross(&refs, &mut |tuple| {
                    let msg = KappaMsg {
                        from: l.clone(),
                        values: tuple.iter().map(|v| (*v).clone()).collect(),
                    };
                    for r in receivers {
                        if !self.e.kappa.get(r).is_some_and(|k| k.contains(&msg)) {
                            out.insert(Violation::Message {
                                receiver: r.clone(),
                                msg: msg.clone(),
                            });
                        }
                    }
                });
                self.check_proc(l, cont, out);
            }
            Process::Input {
                matches,
                binders,
                cont,
            } => {
                for t in matches {
                    self.check_term(l, t, out);
                }
                let mut reachable = false;
                if let Some(msgs) = self.e.kappa.get(l) {
                    for msg in msgs {
                        if !self.comp.compatible(&msg.from, l) {
                            continue;
                        }
                        if self.precise_match
                            && msg.values.len() != matches.len() + binders.len()
                        {
                            continue;
                        }
                        reachable = true;
                        for (i, x) in binders.iter().enumerate() {
                            if let Some(v) = msg.values.get(matches.len() + i) {
                                self.check_binding(l, StoreKey::Var(x.clone()), v, out);
                            }
                        }
                    }
                }
                if reachable {
                    self.check_proc(l, cont, out);
                }
            }
            Process::Decrypt {
                subject,
                matches,
                binders,
                key,
                cont,
            } => {
                let subject_set = self.check_term(l, subject, out);
                for t in matches {
                    self.check_term(l, t, out);
                }
                let mut reachable = false;
                for v in &subject_set {
                    let AbstractValue::Enc { args, key: k2, .. } = v else {
                        continue;
                    };
                    if k2 != key || args.len() != matches.len() + binders.len() {
                        continue;
                    }
                    reachable = true;
                    for (i, x) in binders.iter().enumerate() {
                        self.check_binding(
                            l,
                            StoreKey::Var(x.clone()),
                            &args[matches.len() + i],
                            out,
                        );
                    }
                }
                if reachable {
                    self.check_proc(l, cont, out);
                }
            }
            Process::Cond {
                guard,
                then_branch,
                else_branch,
            } => {
                self.check_term(l, guard, out);
                self.check_proc(l, then_branch, out);
                self.check_proc(l, else_branch, out);
            }
            Process::Assign { var, term, cont } => {
                let set = self.check_term(l, term, out);
                for v in &set {
                    self.check_binding(l, StoreKey::Var(var.clone()), v, out);
                }
                self.check_proc(l, cont, out);
            }
            Process::ActOut {
                actuator,
                action,
                cont,
            } => {
                let present = self
                    .e
                    .alpha
                    .get(l)
                    .and_then(|m| m.get(actuator))
                    .is_some_and(|s| s.contains(action));
                if !present {
                    out.insert(Violation::Action {
                        label: l.clone(),
                        actuator: *actuator,
                        action: action.clone(),
                    });
                }
                self.check_proc(l, cont, out);
            }
        }
    }
}

/// One trace event not covered by the estimate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrossCheckViolation {
    /// The event names a node or actuator the estimate does not know,
    /// so trace and estimate come from different systems.
    MismatchedOrigin { index: usize, label: Label },
    UncoveredMessage {
        index: usize,
        receiver: Label,
        msg: KappaMsg,
    },
    UncoveredBinding {
        index: usize,
        label: Label,
        key: StoreKey,
        value: AbstractValue,
    },
    UncoveredAction {
        index: usize,
        label: Label,
        actuator: ActuatorId,
        action: ActionName,
    },
}

impl fmt::Display for CrossCheckViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrossCheckViolation::MismatchedOrigin { index, label } => {
                write!(f, "event {index}: {label} is not part of the analyzed system")
            }
            CrossCheckViolation::UncoveredMessage {
                index,
                receiver,
                msg,
            } => write!(f, "event {index}: {receiver} received {msg} not in kappa"),
            CrossCheckViolation::UncoveredBinding {
                index,
                label,
                key,
                value,
            } => write!(
                f,
                "event {index}: {label} stored {value} at {key} not in sigma_hat"
            ),
            CrossCheckViolation::UncoveredAction {
                index,
                label,
                actuator,
                action,
            } => write!(
                f,
                "event {index}: actuator {actuator} of {label} fired {action} not in alpha"
            ),
        }
    }
}

/// Replays a trace against an estimate: every communication must be in kappa,
/// every store write in sigma_hat, every actuator firing in alpha. An empty
/// result is the dynamic confirmation of the estimate's adequacy.
pub fn cross_check(trace: &Trace, e: &Estimate) -> Vec<CrossCheckViolation> {
    let mut out = Vec::new();
    let known = |l: &Label| e.sigma_hat.contains_key(l);
    for (index, event) in trace.events.iter().enumerate() {
        match event {
            Event::Comm {
                sender,
                receiver,
                values,
            } => {
                let mut ok = true;
                for l in [sender, receiver] {
                    if !known(l) {
                        out.push(CrossCheckViolation::MismatchedOrigin {
                            index,
                            label: l.clone(),
                        });
                        ok = false;
                    }
                }
                if !ok {
                    continue;
                }
                let msg = KappaMsg {
                    from: sender.clone(),
                    values: values.iter().map(|v| v.abstract_value.clone()).collect(),
                };
                if !e
                    .kappa
                    .get(receiver)
                    .is_some_and(|msgs| msgs.contains(&msg))
                {
                    out.push(CrossCheckViolation::UncoveredMessage {
                        index,
                        receiver: receiver.clone(),
                        msg,
                    });
                }
            }
            Event::SensorStore {
                node,
                sensor,
                value,
            } => {
                if !known(node) {
                    out.push(CrossCheckViolation::MismatchedOrigin {
                        index,
                        label: node.clone(),
                    });
                    continue;
                }
                let key = StoreKey::Sensor(*sensor);
                if !e
                    .sigma(node, &key)
                    .is_some_and(|s| s.contains(&value.abstract_value))
                {
                    out.push(CrossCheckViolation::UncoveredBinding {
                        index,
                        label: node.clone(),
                        key,
                        value: value.abstract_value.clone(),
                    });
                }
            }
            Event::Assign { node, var, value } => {
                if !known(node) {
                    out.push(CrossCheckViolation::MismatchedOrigin {
                        index,
                        label: node.clone(),
                    });
                    continue;
                }
                let key = StoreKey::Var(var.clone());
                if !e
                    .sigma(node, &key)
                    .is_some_and(|s| s.contains(&value.abstract_value))
                {
                    out.push(CrossCheckViolation::UncoveredBinding {
                        index,
                        label: node.clone(),
                        key,
                        value: value.abstract_value.clone(),
                    });
                }
            }
            Event::ActFire {
                node,
                actuator,
                action,
            } => {
                let declared = e.alpha.get(node).and_then(|m| m.get(actuator));
                let Some(actions) = declared else {
                    out.push(CrossCheckViolation::MismatchedOrigin {
                        index,
                        label: node.clone(),
                    });
                    continue;
                };
                if !actions.contains(action) {
                    out.push(CrossCheckViolation::UncoveredAction {
                        index,
                        label: node.clone(),
                        actuator: *actuator,
                        action: action.clone(),
                    });
                }
            }
            Event::DecryptOk { .. } | Event::CondTaken { .. } => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Literal;
    use crate::parser::parse_system;
    use crate::semantics::run_system;

    fn cfg() -> AnalysisConfig {
        let mut cfg = AnalysisConfig::default();
        cfg.keys.insert(KeyId::new("k0"));
        cfg.keys.insert(KeyId::new("k1"));
        cfg
    }

    fn lab(s: &str) -> Label {
        Label::new(s)
    }

    fn sensor_av(i: u32, l: &str) -> AbstractValue {
        AbstractValue::Sensor {
            id: SensorId(i),
            label: lab(l),
        }
    }

    fn const_av(n: i64, l: &str) -> AbstractValue {
        AbstractValue::Const {
            value: Literal::Int(n),
            label: lab(l),
        }
    }

    #[test]
    fn sensor_term_lands_in_theta() {
        let system = parse_system("lcp : [ store ]").unwrap();
        let mut cs = generate(&system, &cfg());
        let v = cs.analyze_term(&lab("lcp"), &Term::SensorLoc(SensorId(1)));
        let (estimate, varthetas) = cs.solve_terms();
        assert_eq!(
            varthetas[v.0],
            BTreeSet::from([sensor_av(1, "lcp")])
        );
        assert!(estimate.theta[&lab("lcp")].contains(&sensor_av(1, "lcp")));
    }

    #[test]
    fn application_enumerates_argument_values() {
        let system =
            parse_system("l : [ store || x := 1 . x := 2 . y := f(x) . 0 ]").unwrap();
        let e = analyze(&system, &cfg());
        let y = e.sigma(&lab("l"), &StoreKey::Var("y".into())).unwrap();
        let app = |n: i64| AbstractValue::App {
            func: "f".into(),
            args: vec![const_av(n, "l")],
            label: lab("l"),
        };
        assert_eq!(y, &BTreeSet::from([app(1), app(2)]));
    }

    #[test]
    fn sensor_locations_are_seeded_and_actuators_visible() {
        let system =
            parse_system("l : [ store || sensor 2 { 0 } || actuator 7 { 0 } ]").unwrap();
        let e = analyze(&system, &cfg());
        assert_eq!(
            e.sigma(&lab("l"), &StoreKey::Sensor(SensorId(2))).unwrap(),
            &BTreeSet::from([sensor_av(2, "l")])
        );
        assert_eq!(e.alpha[&lab("l")][&ActuatorId(7)], BTreeSet::new());
    }

    #[test]
    fn trigger_reaches_alpha() {
        let system =
            parse_system("l : [ store || <5, go> . 0 || actuator 5 { (|5, {go}|) . 0 } ]")
                .unwrap();
        let e = analyze(&system, &cfg());
        assert_eq!(
            e.alpha[&lab("l")][&ActuatorId(5)],
            BTreeSet::from([ActionName::new("go")])
        );
    }

    #[test]
    fn input_binds_and_gates_the_continuation() {
        let src = "l1 : [ store || <<'a'>> : {l2} . 0 ] | l2 : [ store || (; x) . z := 5 . 0 ]";
        let system = parse_system(src).unwrap();
        let e = analyze(&system, &cfg());
        let a = AbstractValue::Const {
            value: Literal::Atom("a".into()),
            label: lab("l1"),
        };
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("x".into())).unwrap(),
            &BTreeSet::from([a])
        );
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("z".into())).unwrap(),
            &BTreeSet::from([const_av(5, "l2")])
        );

        // An incompatible pair leaves the binding empty and the continuation
        // unanalyzed.
        let mut blocked = cfg();
        blocked.comp = CompRelation::pairs([(lab("l1"), lab("l1"))]);
        let e = analyze(&system, &blocked);
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("x".into())).unwrap(),
            &BTreeSet::new()
        );
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("z".into())).unwrap(),
            &BTreeSet::new()
        );
    }

    #[test]
    fn empty_message_still_opens_the_gate() {
        let src = "l1 : [ store || <<>> : {l2} . 0 ] | l2 : [ store || (;) . z := 1 . 0 ]";
        let e = analyze(&parse_system(src).unwrap(), &cfg());
        assert!(e.kappa[&lab("l2")].contains(&KappaMsg {
            from: lab("l1"),
            values: vec![],
        }));
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("z".into())).unwrap(),
            &BTreeSet::from([const_av(1, "l2")])
        );
    }

    #[test]
    fn arity_mismatch_binds_only_without_precise_match() {
        let src = "l1 : [ store || <<'a', 'b'>> : {l2} . 0 ] | l2 : [ store || (; x) . 0 ]";
        let system = parse_system(src).unwrap();
        let loose = analyze(&system, &cfg());
        let a = AbstractValue::Const {
            value: Literal::Atom("a".into()),
            label: lab("l1"),
        };
        assert_eq!(
            loose.sigma(&lab("l2"), &StoreKey::Var("x".into())).unwrap(),
            &BTreeSet::from([a])
        );
        let mut precise = cfg();
        precise.precise_match = true;
        let tight = analyze(&system, &precise);
        assert_eq!(
            tight.sigma(&lab("l2"), &StoreKey::Var("x".into())).unwrap(),
            &BTreeSet::new()
        );
    }

    #[test]
    fn decryption_needs_the_same_key() {
        let src = "l1 : [ store || <<{3} key k0>> : {l2} . 0 ] \
                   | l2 : [ store || (; x) . decrypt x as {; y} key k0 in z := y . 0 ]";
        let system = parse_system(src).unwrap();
        let e = analyze(&system, &cfg());
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("y".into())).unwrap(),
            &BTreeSet::from([const_av(3, "l1")])
        );
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("z".into())).unwrap(),
            &BTreeSet::from([const_av(3, "l1")])
        );

        // With the wrong key the gate stays closed: the binder cell and the
        // continuation's assignment target stay visibly empty.
        let wrong = src.replace("key k0 in", "key k1 in");
        let e = analyze(&parse_system(&wrong).unwrap(), &cfg());
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("y".into())).unwrap(),
            &BTreeSet::new()
        );
        assert_eq!(
            e.sigma(&lab("l2"), &StoreKey::Var("z".into())).unwrap(),
            &BTreeSet::new()
        );
    }

    #[test]
    fn depth_cut_closes_recursive_growth() {
        let src = "l : [ store || x := 0 . mu h . x := f(x) . h ]";
        let system = parse_system(src).unwrap();
        let mut shallow = cfg();
        shallow.depth = 2;
        let e = analyze(&system, &shallow);
        assert!(e.max_depth() <= 2);
        let x = e.sigma(&lab("l"), &StoreKey::Var("x".into())).unwrap();
        assert!(x.contains(&AbstractValue::App {
            func: "f".into(),
            args: vec![AbstractValue::TopP { label: lab("l") }],
            label: lab("l"),
        }));
    }

    #[test]
    fn solved_estimate_validates_and_is_minimal_here() {
        let src = "l1 : [ store || sensor 1 { mu h . @1 := read . h } \
                   || mu h . x := @1 . <<f(x)>> : {l2} . h ] \
                   | l2 : [ store || mu h . (; y) . <6, on> . h || actuator 6 { mu h . (|6, {on}|) . h } ]";
        let system = parse_system(src).unwrap();
        let e = analyze(&system, &cfg());
        assert_eq!(validate(&system, &cfg(), &e), vec![]);

        // Dropping any single element breaks some judgement.
        let mut dropped = 0;
        for (l, store) in &e.sigma_hat {
            for (k, vs) in store {
                for v in vs {
                    let mut smaller = e.clone();
                    smaller
                        .sigma_hat
                        .get_mut(l)
                        .unwrap()
                        .get_mut(k)
                        .unwrap()
                        .remove(v);
                    assert_ne!(validate(&system, &cfg(), &smaller), vec![], "{l}/{k}/{v}");
                    dropped += 1;
                }
            }
        }
        for (l, msgs) in &e.kappa {
            for m in msgs {
                let mut smaller = e.clone();
                smaller.kappa.get_mut(l).unwrap().remove(m);
                assert_ne!(validate(&system, &cfg(), &smaller), vec![]);
                dropped += 1;
            }
        }
        for (l, vs) in &e.theta {
            for v in vs {
                let mut smaller = e.clone();
                smaller.theta.get_mut(l).unwrap().remove(v);
                assert_ne!(validate(&system, &cfg(), &smaller), vec![]);
                dropped += 1;
            }
        }
        for (l, acts) in &e.alpha {
            for (j, actions) in acts {
                for a in actions {
                    let mut smaller = e.clone();
                    smaller
                        .alpha
                        .get_mut(l)
                        .unwrap()
                        .get_mut(j)
                        .unwrap()
                        .remove(a);
                    assert_ne!(validate(&system, &cfg(), &smaller), vec![]);
                    dropped += 1;
                }
            }
        }
        assert!(dropped > 5, "estimate unexpectedly small: {dropped}");
    }

    #[test]
    fn empty_store_only_node_validates_with_empty_estimate() {
        let system = parse_system("l1 : [ store ]").unwrap();
        let e = analyze(&system, &cfg());
        assert_eq!(validate(&system, &cfg(), &e), vec![]);
        assert_eq!(e.counts(), (0, 0, 0, 0));
    }

    #[test]
    fn traces_are_covered_by_the_estimate() {
        let src = "l1 : [ store || sensor 1 { mu h . @1 := read . h } \
                   || mu h . x := @1 . <<f(x)>> : {l2} . h ] \
                   | l2 : [ store || mu h . (; y) . <6, on> . h || actuator 6 { mu h . (|6, {on}|) . h } ]";
        let system = parse_system(src).unwrap();
        let mut c = cfg();
        c.resolve_for(&system).unwrap();
        c.max_steps = 300;
        let e = analyze(&system, &c);
        let trace = run_system(&system, &c);
        assert!(trace.events.iter().any(|e| matches!(e, Event::Comm { .. })));
        assert_eq!(cross_check(&trace, &e), vec![]);
    }

    #[test]
    fn foreign_events_are_flagged() {
        let system = parse_system("l1 : [ store ]").unwrap();
        let e = analyze(&system, &cfg());
        let trace = Trace {
            seed: 0,
            depth: 4,
            max_steps: 10,
            steps: 1,
            events: vec![Event::Comm {
                sender: lab("ghost"),
                receiver: lab("l1"),
                values: vec![],
            }],
            diagnostic: None,
        };
        assert_eq!(
            cross_check(&trace, &e),
            vec![CrossCheckViolation::MismatchedOrigin {
                index: 0,
                label: lab("ghost"),
            }]
        );
    }

    #[test]
    fn uncovered_message_is_flagged() {
        let system = parse_system("l1 : [ store ] | l2 : [ store ]").unwrap();
        let e = analyze(&system, &cfg());
        let trace = Trace {
            seed: 0,
            depth: 4,
            max_steps: 10,
            steps: 1,
            events: vec![Event::Comm {
                sender: lab("l1"),
                receiver: lab("l2"),
                values: vec![],
            }],
            diagnostic: None,
        };
        let violations = cross_check(&trace, &e);
        assert_eq!(violations.len(), 1);
        assert!(matches!(
            violations[0],
            CrossCheckViolation::UncoveredMessage { .. }
        ));
    }

    #[test]
    fn estimate_serialization_is_stable_and_round_trips() {
        let src = "l1 : [ store || x := 1 . <<x>> : {l2} . 0 ] | l2 : [ store || (; y) . 0 ]";
        let system = parse_system(src).unwrap();
        let e = analyze(&system, &cfg());
        let json = serde_json::to_string_pretty(&e).unwrap();
        assert_eq!(json, serde_json::to_string_pretty(&e).unwrap());
        let back: Estimate = serde_json::from_str(&json).unwrap();
        assert_eq!(e, back);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["alpha", "kappa", "sigma_hat", "theta"]);
    }
}
