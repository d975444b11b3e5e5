//! Random generation of small systems and configurations, shared by the
//! property and acceptance suites.
//!
//! Systems stay small on purpose: at most three nodes, two sensors and one
//! actuator per node, terms a few constructors deep. That keeps whole-pipeline
//! checks (solve, validate, simulate, cross-check) fast enough to run by the
//! hundreds while still covering every process constructor.

#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::sample::{select, subsequence};
use proptest::strategy::Union;

use iotlysa::ast::{
    AbstractValue, ActionName, ActuatorId, ActuatorProc, Component, KeyId, Label, Literal, Node,
    Process, SensorId, SensorProc, System, Term,
};
use iotlysa::cfa::{Estimate, KappaMsg};
use iotlysa::config::{
    AnalysisConfig, Builtin, CompRelation, FunctionKind, FunctionSig, ResultSort, SecretAtom,
};
use iotlysa::semantics::{ConcreteValue, Event, InstrumentedValue, StoreKey};

/// Store variables every generated process draws from.
pub const VARS: &[&str] = &["x", "y", "z"];

/// Actions generated actuators accept and processes trigger.
pub const ACTIONS: &[&str] = &["go", "stop"];

fn key0() -> KeyId {
    KeyId::new("k0")
}

fn app(func: &str, args: Vec<Term>) -> Term {
    Term::App {
        func: func.to_string(),
        args,
    }
}

/// Ground data pool. Atoms stay distinct from the `s0`/`s1` atoms that
/// [`with_secret_sensor`] feeds to a secret stream, so a literal's secrecy is
/// never ambiguous.
pub fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        (-5i64..=5).prop_map(Literal::Int),
        any::<bool>().prop_map(Literal::Bool),
        select(vec!["a", "b", "c"]).prop_map(|s| Literal::Atom(s.to_string())),
    ]
}

/// Variable-free terms; their abstract value sets are fixed, so they can sit
/// on both sides of a binary constructor without feeding growth.
fn closed_term(sensors: Vec<SensorId>, levels: u32) -> BoxedStrategy<Term> {
    let mut leaves: Vec<BoxedStrategy<Term>> = vec![literal().prop_map(Term::Const).boxed()];
    if !sensors.is_empty() {
        leaves.push(select(sensors).prop_map(Term::SensorLoc).boxed());
    }
    Union::new(leaves)
        .prop_recursive(levels, 8, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| app("f", vec![a])),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| app("g", vec![a, b])),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| app("add", vec![a, b])),
                inner.prop_map(|a| Term::Enc {
                    args: vec![a],
                    key: key0(),
                }),
            ]
            .boxed()
        })
        .boxed()
}

/// Terms over the node's sensors, the shared variable pool and a handful of
/// function symbols.
///
/// Two deliberate restrictions. Binary constructors take at most one
/// variable-dependent argument: with two growing sides under an iteration the
/// reachable value set squares every round, and the depth-cut universe blows
/// up combinatorially. And the equality builtin is absent: equality collapses
/// secret operands into a fresh public boolean while the static side keeps
/// the application secret, so exact class commutation would not hold.
pub fn term(sensors: Vec<SensorId>, levels: u32) -> BoxedStrategy<Term> {
    let closed = closed_term(sensors.clone(), 1);
    let mut leaves: Vec<BoxedStrategy<Term>> = vec![
        literal().prop_map(Term::Const).boxed(),
        select(VARS.to_vec())
            .prop_map(|x| Term::Var(x.to_string()))
            .boxed(),
    ];
    if !sensors.is_empty() {
        leaves.push(select(sensors).prop_map(Term::SensorLoc).boxed());
    }
    Union::new(leaves)
        .prop_recursive(levels, 12, 2, move |inner| {
            let pair = (inner.clone(), closed.clone(), any::<bool>()).prop_map(
                |(open, closed, flip)| {
                    if flip {
                        (open, closed)
                    } else {
                        (closed, open)
                    }
                },
            );
            prop_oneof![
                inner.clone().prop_map(|a| app("f", vec![a])),
                pair.clone().prop_map(|(a, b)| app("g", vec![a, b])),
                pair.clone().prop_map(|(a, b)| app("add", vec![a, b])),
                pair.prop_map(|(a, b)| app("le", vec![a, b])),
                inner.prop_map(|a| Term::Enc {
                    args: vec![a],
                    key: key0(),
                }),
            ]
            .boxed()
        })
        .boxed()
}

/// Guards biased toward boolean-sorted values so conditionals actually branch
/// instead of blocking on a non-boolean diagnostic.
pub fn guard(sensors: Vec<SensorId>) -> BoxedStrategy<Term> {
    let operand = term(sensors, 1);
    prop_oneof![
        any::<bool>().prop_map(|b| Term::Const(Literal::Bool(b))),
        (operand.clone(), operand).prop_map(|(a, b)| app("le", vec![a, b])),
        select(VARS.to_vec()).prop_map(|x| Term::Var(x.to_string())),
    ]
    .boxed()
}

/// What a node's processes may refer to.
#[derive(Clone, Debug)]
pub struct NodeCtx {
    pub labels: Vec<Label>,
    pub sensors: Vec<SensorId>,
    pub actuators: Vec<ActuatorId>,
}

/// Control processes drawing on every constructor. Decrypts are biased toward
/// the one-binder, no-prefix shape that matches the generated encryptions, so
/// their continuations are reachable often enough to matter.
pub fn process(ctx: NodeCtx, levels: u32) -> BoxedStrategy<Process> {
    Just(Process::Nil)
        .prop_recursive(levels, 16, 2, move |inner| {
            let t = term(ctx.sensors.clone(), 2);
            let mut arms: Vec<BoxedStrategy<Process>> = vec![
                (select(VARS.to_vec()), t.clone(), inner.clone())
                    .prop_map(|(x, term, cont)| Process::Assign {
                        var: x.to_string(),
                        term,
                        cont: Box::new(cont),
                    })
                    .boxed(),
                (
                    vec(t.clone(), 1..=2),
                    subsequence(ctx.labels.clone(), 1..=ctx.labels.len()),
                    inner.clone(),
                )
                    .prop_map(|(terms, receivers, cont)| Process::MultiOut {
                        terms,
                        receivers: receivers.into_iter().collect(),
                        cont: Box::new(cont),
                    })
                    .boxed(),
                (
                    vec(term(ctx.sensors.clone(), 1), 0..=1),
                    subsequence(VARS.to_vec(), 0..=2),
                    inner.clone(),
                )
                    .prop_map(|(matches, binders, cont)| Process::Input {
                        matches,
                        binders: binders.into_iter().map(String::from).collect(),
                        cont: Box::new(cont),
                    })
                    .boxed(),
                (
                    t,
                    prop_oneof![3 => Just(true), 1 => Just(false)],
                    select(VARS.to_vec()),
                    inner.clone(),
                )
                    .prop_map(|(subject, live, x, cont)| {
                        let (matches, binders) = if live {
                            (Vec::new(), vec![x.to_string()])
                        } else {
                            (vec![Term::Const(Literal::Atom("a".into()))], vec![x.to_string()])
                        };
                        Process::Decrypt {
                            subject,
                            matches,
                            binders,
                            key: key0(),
                            cont: Box::new(cont),
                        }
                    })
                    .boxed(),
                (guard(ctx.sensors.clone()), inner.clone(), inner.clone())
                    .prop_map(|(guard, a, b)| Process::Cond {
                        guard,
                        then_branch: Box::new(a),
                        else_branch: Box::new(b),
                    })
                    .boxed(),
            ];
            if !ctx.actuators.is_empty() {
                arms.push(
                    (
                        select(ctx.actuators.clone()),
                        select(ACTIONS.to_vec()),
                        inner.clone(),
                    )
                        .prop_map(|(j, a, cont)| Process::ActOut {
                            actuator: j,
                            action: ActionName::new(a),
                            cont: Box::new(cont),
                        })
                        .boxed(),
                );
            }
            Union::new(arms).boxed()
        })
        .boxed()
}

/// Replaces the terminal `Nil`s of `p` with `h` and binds them in `mu h`.
pub fn tie_loop(p: Process) -> Process {
    fn close(p: Process) -> Process {
        match p {
            Process::Nil => Process::IterVar("h".into()),
            Process::MultiOut {
                terms,
                receivers,
                cont,
            } => Process::MultiOut {
                terms,
                receivers,
                cont: Box::new(close(*cont)),
            },
            Process::Input {
                matches,
                binders,
                cont,
            } => Process::Input {
                matches,
                binders,
                cont: Box::new(close(*cont)),
            },
            Process::Decrypt {
                subject,
                matches,
                binders,
                key,
                cont,
            } => Process::Decrypt {
                subject,
                matches,
                binders,
                key,
                cont: Box::new(close(*cont)),
            },
            Process::Cond {
                guard,
                then_branch,
                else_branch,
            } => Process::Cond {
                guard,
                then_branch: Box::new(close(*then_branch)),
                else_branch: Box::new(close(*else_branch)),
            },
            Process::Assign { var, term, cont } => Process::Assign {
                var,
                term,
                cont: Box::new(close(*cont)),
            },
            Process::ActOut {
                actuator,
                action,
                cont,
            } => Process::ActOut {
                actuator,
                action,
                cont: Box::new(close(*cont)),
            },
            // No nested iterations are generated, so nothing rebinds `h`.
            other @ (Process::IterVar(_) | Process::Mu { .. }) => other,
        }
    }
    Process::Mu {
        var: "h".into(),
        body: Box::new(close(p)),
    }
}

fn looped_process(ctx: NodeCtx) -> BoxedStrategy<Process> {
    (process(ctx, 3), any::<bool>())
        .prop_map(|(p, looped)| {
            if looped && p != Process::Nil {
                tie_loop(p)
            } else {
                p
            }
        })
        .boxed()
}

fn sensor_component(id: SensorId) -> BoxedStrategy<Component> {
    let probe = SensorProc::StoreValue {
        loc: id,
        cont: Box::new(SensorProc::IterVar("h".into())),
    };
    let looping = SensorProc::Mu {
        var: "h".into(),
        body: Box::new(SensorProc::Tau(Box::new(probe))),
    };
    let once = SensorProc::StoreValue {
        loc: id,
        cont: Box::new(SensorProc::Nil),
    };
    prop_oneof![
        4 => Just(Component::Sensor { id, body: looping }),
        1 => Just(Component::Sensor { id, body: once }),
    ]
    .boxed()
}

fn actuator_component(id: ActuatorId) -> BoxedStrategy<Component> {
    subsequence(ACTIONS.to_vec(), 1..=ACTIONS.len())
        .prop_map(move |names| {
            let accepted: BTreeSet<ActionName> =
                names.into_iter().map(ActionName::new).collect();
            let body = ActuatorProc::Mu {
                var: "h".into(),
                body: Box::new(ActuatorProc::Command {
                    actuator: id,
                    accepted,
                    cont: Box::new(ActuatorProc::IterVar("h".into())),
                }),
            };
            Component::Actuator { id, body }
        })
        .boxed()
}

fn node(label: Label, labels: Vec<Label>) -> BoxedStrategy<Node> {
    (
        subsequence(vec![SensorId(1), SensorId(2)], 0..=2),
        proptest::option::of(Just(ActuatorId(7))),
    )
        .prop_flat_map(move |(sensors, actuator)| {
            let ctx = NodeCtx {
                labels: labels.clone(),
                sensors: sensors.clone(),
                actuators: actuator.into_iter().collect(),
            };
            let sensor_parts: Vec<BoxedStrategy<Component>> =
                ctx.sensors.iter().map(|i| sensor_component(*i)).collect();
            let actuator_parts: Vec<BoxedStrategy<Component>> = ctx
                .actuators
                .iter()
                .map(|j| actuator_component(*j))
                .collect();
            let procs = vec(looped_process(ctx), 1..=2);
            let label = label.clone();
            (sensor_parts, actuator_parts, procs).prop_map(move |(ss, aa, ps)| {
                let mut components = vec![Component::Store];
                components.extend(ss);
                components.extend(aa);
                components.extend(ps.into_iter().map(Component::Process));
                Node {
                    label: label.clone(),
                    components,
                }
            })
        })
        .boxed()
}

/// Everything about a generated configuration that is not derived from the
/// system itself.
#[derive(Clone, Debug)]
struct Knobs {
    depth: usize,
    comp_full: bool,
    comp_mask: u64,
    seed: u64,
    max_steps: usize,
    pool: Vec<Literal>,
}

fn knobs() -> impl Strategy<Value = Knobs> {
    (
        1usize..=4,
        prop_oneof![2 => Just(true), 1 => Just(false)],
        any::<u64>(),
        any::<u64>(),
        120usize..=240,
        vec(literal(), 4..=8),
    )
        .prop_map(|(depth, comp_full, comp_mask, seed, max_steps, pool)| Knobs {
            depth,
            comp_full,
            comp_mask,
            seed,
            max_steps,
            pool,
        })
}

fn assemble(nodes: Vec<Node>, k: Knobs) -> (System, AnalysisConfig) {
    let system = System { nodes };
    system.validate().expect("generated system is well formed");
    let comp = if k.comp_full {
        CompRelation::All
    } else {
        let labels: Vec<Label> = system.labels().into_iter().collect();
        let mut pairs = Vec::new();
        let mut bit = 0;
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i + 1..] {
                if k.comp_mask >> bit & 1 == 1 {
                    pairs.push((a.clone(), b.clone()));
                }
                bit += 1;
            }
        }
        CompRelation::pairs(pairs)
    };
    let mut cfg = AnalysisConfig {
        depth: k.depth,
        comp,
        seed: k.seed,
        max_steps: k.max_steps,
        ..AnalysisConfig::default()
    };
    cfg.keys.insert(key0());
    cfg.functions.insert(
        "add".into(),
        FunctionSig {
            arity: 2,
            kind: FunctionKind::Builtin(Builtin::Add),
            result: ResultSort::Opaque,
        },
    );
    cfg.functions.insert(
        "le".into(),
        FunctionSig {
            arity: 2,
            kind: FunctionKind::Builtin(Builtin::Le),
            result: ResultSort::Boolean,
        },
    );
    for (ni, node) in system.nodes.iter().enumerate() {
        for (si, i) in node.sensor_ids().into_iter().enumerate() {
            let start = (ni + si) % k.pool.len();
            let stream: Vec<Literal> = k
                .pool
                .iter()
                .cycle()
                .skip(start)
                .take(2)
                .cloned()
                .collect();
            cfg.sensor_streams
                .entry(node.label.clone())
                .or_default()
                .insert(i, stream);
        }
    }
    cfg.resolve_for(&system).expect("generated config resolves");
    (system, cfg)
}

/// A whole system together with a configuration that resolves against it.
pub fn system_and_config() -> impl Strategy<Value = (System, AnalysisConfig)> {
    (1usize..=3)
        .prop_flat_map(|n| {
            let labels: Vec<Label> = (0..n).map(|i| Label::new(format!("n{i}"))).collect();
            let node_parts: Vec<BoxedStrategy<Node>> = labels
                .iter()
                .map(|l| node(l.clone(), labels.clone()))
                .collect();
            (node_parts, knobs())
        })
        .prop_map(|(nodes, k)| assemble(nodes, k))
}

/// Deterministic sample of generated systems for the acceptance suite: the
/// fixed seed makes the batch identical on every run.
pub fn sample_systems(count: usize) -> Vec<(System, AnalysisConfig)> {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

    let mut runner = TestRunner::new_with_rng(
        Config::default(),
        TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]),
    );
    let strat = system_and_config();
    (0..count)
        .map(|_| {
            strat
                .new_tree(&mut runner)
                .expect("strategy yields a value")
                .current()
        })
        .collect()
}

/// One atomic member of an estimate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Sigma(Label, StoreKey, AbstractValue),
    Kappa(Label, KappaMsg),
    Theta(Label, AbstractValue),
    Alpha(Label, ActuatorId, ActionName),
}

pub fn elements(e: &Estimate) -> Vec<Element> {
    let mut out = Vec::new();
    for (l, store) in &e.sigma_hat {
        for (k, set) in store {
            for v in set {
                out.push(Element::Sigma(l.clone(), k.clone(), v.clone()));
            }
        }
    }
    for (l, set) in &e.kappa {
        for m in set {
            out.push(Element::Kappa(l.clone(), m.clone()));
        }
    }
    for (l, set) in &e.theta {
        for v in set {
            out.push(Element::Theta(l.clone(), v.clone()));
        }
    }
    for (l, acts) in &e.alpha {
        for (j, set) in acts {
            for a in set {
                out.push(Element::Alpha(l.clone(), *j, a.clone()));
            }
        }
    }
    out
}

/// The same estimate with one element removed; emptied cells stay visible.
pub fn without(e: &Estimate, el: &Element) -> Estimate {
    let mut out = e.clone();
    match el {
        Element::Sigma(l, k, v) => {
            out.sigma_hat
                .get_mut(l)
                .and_then(|s| s.get_mut(k))
                .expect("element came from this estimate")
                .remove(v);
        }
        Element::Kappa(l, m) => {
            out.kappa
                .get_mut(l)
                .expect("element came from this estimate")
                .remove(m);
        }
        Element::Theta(l, v) => {
            out.theta
                .get_mut(l)
                .expect("element came from this estimate")
                .remove(v);
        }
        Element::Alpha(l, j, a) => {
            out.alpha
                .get_mut(l)
                .and_then(|s| s.get_mut(j))
                .expect("element came from this estimate")
                .remove(a);
        }
    }
    out
}

/// Pointwise inclusion of estimates; cells empty on the left are ignored.
pub fn le_estimate(a: &Estimate, b: &Estimate) -> bool {
    a.sigma_hat.iter().all(|(l, store)| {
        store.iter().all(|(k, set)| {
            set.is_empty() || b.sigma(l, k).is_some_and(|bs| set.is_subset(bs))
        })
    }) && a.kappa.iter().all(|(l, set)| {
        set.is_empty() || b.kappa.get(l).is_some_and(|bs| set.is_subset(bs))
    }) && a.theta.iter().all(|(l, set)| {
        set.is_empty() || b.theta.get(l).is_some_and(|bs| set.is_subset(bs))
    }) && a.alpha.iter().all(|(l, acts)| {
        acts.iter().all(|(j, set)| {
            set.is_empty()
                || b.alpha
                    .get(l)
                    .and_then(|s| s.get(j))
                    .is_some_and(|bs| set.is_subset(bs))
        })
    })
}

/// Wraps every sent term in an encryption under the shared key.
pub fn encrypt_outputs(p: &Process) -> Process {
    match p {
        Process::Nil => Process::Nil,
        Process::MultiOut {
            terms,
            receivers,
            cont,
        } => Process::MultiOut {
            terms: terms
                .iter()
                .map(|t| Term::Enc {
                    args: vec![t.clone()],
                    key: key0(),
                })
                .collect(),
            receivers: receivers.clone(),
            cont: Box::new(encrypt_outputs(cont)),
        },
        Process::Input {
            matches,
            binders,
            cont,
        } => Process::Input {
            matches: matches.clone(),
            binders: binders.clone(),
            cont: Box::new(encrypt_outputs(cont)),
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
            cont: Box::new(encrypt_outputs(cont)),
        },
        Process::Cond {
            guard,
            then_branch,
            else_branch,
        } => Process::Cond {
            guard: guard.clone(),
            then_branch: Box::new(encrypt_outputs(then_branch)),
            else_branch: Box::new(encrypt_outputs(else_branch)),
        },
        Process::IterVar(h) => Process::IterVar(h.clone()),
        Process::Mu { var, body } => Process::Mu {
            var: var.clone(),
            body: Box::new(encrypt_outputs(body)),
        },
        Process::Assign { var, term, cont } => Process::Assign {
            var: var.clone(),
            term: term.clone(),
            cont: Box::new(encrypt_outputs(cont)),
        },
        Process::ActOut {
            actuator,
            action,
            cont,
        } => Process::ActOut {
            actuator: *actuator,
            action: action.clone(),
            cont: Box::new(encrypt_outputs(cont)),
        },
    }
}

fn map_processes(sys: &System, f: &impl Fn(&Process) -> Process) -> System {
    System {
        nodes: sys
            .nodes
            .iter()
            .map(|n| Node {
                label: n.label.clone(),
                components: n
                    .components
                    .iter()
                    .map(|c| match c {
                        Component::Process(p) => Component::Process(f(p)),
                        other => other.clone(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn encrypt_system_outputs(sys: &System) -> System {
    map_processes(sys, &encrypt_outputs)
}

/// Widens every output's receiver set to all node labels.
pub fn broadcast_outputs(sys: &System) -> System {
    let labels = sys.labels();
    fn widen(p: &Process, labels: &BTreeSet<Label>) -> Process {
        match p {
            Process::MultiOut {
                terms,
                receivers: _,
                cont,
            } => Process::MultiOut {
                terms: terms.clone(),
                receivers: labels.clone(),
                cont: Box::new(widen(cont, labels)),
            },
            Process::Nil => Process::Nil,
            Process::Input {
                matches,
                binders,
                cont,
            } => Process::Input {
                matches: matches.clone(),
                binders: binders.clone(),
                cont: Box::new(widen(cont, labels)),
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
                cont: Box::new(widen(cont, labels)),
            },
            Process::Cond {
                guard,
                then_branch,
                else_branch,
            } => Process::Cond {
                guard: guard.clone(),
                then_branch: Box::new(widen(then_branch, labels)),
                else_branch: Box::new(widen(else_branch, labels)),
            },
            Process::IterVar(h) => Process::IterVar(h.clone()),
            Process::Mu { var, body } => Process::Mu {
                var: var.clone(),
                body: Box::new(widen(body, labels)),
            },
            Process::Assign { var, term, cont } => Process::Assign {
                var: var.clone(),
                term: term.clone(),
                cont: Box::new(widen(cont, labels)),
            },
            Process::ActOut {
                actuator,
                action,
                cont,
            } => Process::ActOut {
                actuator: *actuator,
                action: action.clone(),
                cont: Box::new(widen(cont, labels)),
            },
        }
    }
    map_processes(sys, &|p| widen(p, &labels))
}

/// The same configuration with the first declared sensor marked secret and
/// fed a stream of fresh atoms, so secret values collide with nothing the
/// rest of the system produces. `None` when no node declares a sensor.
pub fn with_secret_sensor(sys: &System, cfg: &AnalysisConfig) -> Option<AnalysisConfig> {
    let (label, id) = sys.nodes.iter().find_map(|n| {
        n.sensor_ids()
            .into_iter()
            .next()
            .map(|i| (n.label.clone(), i))
    })?;
    let mut out = cfg.clone();
    out.sensor_streams.entry(label.clone()).or_default().insert(
        id,
        vec![Literal::Atom("s0".into()), Literal::Atom("s1".into())],
    );
    out.secret
        .entry(label)
        .or_default()
        .insert(SecretAtom::Sensor(id));
    out.resolve_for(sys).expect("secret variant resolves");
    Some(out)
}

/// Marks every declared sensor of every node secret, keeping streams as-is.
pub fn with_all_sensors_secret(sys: &System, cfg: &AnalysisConfig) -> AnalysisConfig {
    let mut out = cfg.clone();
    for n in &sys.nodes {
        for i in n.sensor_ids() {
            out.secret
                .entry(n.label.clone())
                .or_default()
                .insert(SecretAtom::Sensor(i));
        }
    }
    out.resolve_for(sys).expect("secret variant resolves");
    out
}

/// Structural agreement between a concrete value and the abstraction stamped
/// on it: same constructor up to the depth cut, with two sanctioned gaps. A
/// top marker stands for anything, and a computed builtin result stands for
/// the application that produced it.
pub fn coherent(cfg: &AnalysisConfig, v: &ConcreteValue, av: &AbstractValue) -> bool {
    match av {
        AbstractValue::TopS { .. } | AbstractValue::TopP { .. } => true,
        AbstractValue::Sensor { id, label } => {
            matches!(v, ConcreteValue::Lit { value } if cfg.stream(label, *id).contains(value))
        }
        AbstractValue::Const { value, .. } => {
            matches!(v, ConcreteValue::Lit { value: got } if got == value)
        }
        AbstractValue::Enc { args, key, .. } => match v {
            ConcreteValue::Enc {
                args: got,
                key: got_key,
            } => {
                got_key == key
                    && got.len() == args.len()
                    && got.iter().zip(args).all(|(c, a)| coherent(cfg, c, a))
            }
            _ => false,
        },
        AbstractValue::App { func, args, .. } => match v {
            ConcreteValue::App {
                func: got_func,
                args: got,
            } => {
                got_func == func
                    && got.len() == args.len()
                    && got.iter().zip(args).all(|(c, a)| coherent(cfg, c, a))
            }
            ConcreteValue::Lit { .. } => cfg
                .signature(func)
                .is_some_and(|s| matches!(s.kind, FunctionKind::Builtin(_))),
            ConcreteValue::Enc { .. } => false,
        },
    }
}

/// The instrumented values an event carries, with the node holding them.
pub fn event_values(e: &Event) -> Vec<(&Label, &InstrumentedValue)> {
    match e {
        Event::Comm {
            receiver, values, ..
        } => values.iter().map(|v| (receiver, v)).collect(),
        Event::SensorStore { node, value, .. } | Event::Assign { node, value, .. } => {
            vec![(node, value)]
        }
        Event::DecryptOk { .. } | Event::CondTaken { .. } | Event::ActFire { .. } => Vec::new(),
    }
}
