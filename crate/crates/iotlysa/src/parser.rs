//! Surface syntax for IoT-LySa systems.
//!
//! The grammar is whitespace-insensitive and line breaks are free. Sensor
//! locations in terms are written `@i` so numeric literals and sensor
//! identifiers cannot be confused. Atoms are quoted: `'car'`.
//!
//! ```text
//! system   ::= node ("|" node)*
//! node     ::= LABEL ":" "[" comp ("||" comp)* "]"
//! comp     ::= "store" | "sensor" NAT "{" sproc "}"
//!            | "actuator" NAT "{" aproc "}" | proc
//! proc     ::= "0" | "<<" termlist ">>" ":" "{" labellist "}" "." proc
//!            | "(" termlist ";" varlist ")" "." proc
//!            | "decrypt" term "as" "{" termlist ";" varlist "}" "key" KEY "in" proc
//!            | term "?" proc ":" proc | "mu" IDENT "." proc | IDENT
//!            | IDENT ":=" term "." proc | "<" NAT "," IDENT ">" "." proc
//! sproc    ::= "0" | "tau" "." sproc | "@" NAT ":=" "read" "." sproc
//!            | "mu" IDENT "." sproc | IDENT
//! aproc    ::= "0" | "tau" "." aproc | "(|" NAT "," "{" identlist "}" "|)" "." aproc
//!            | "mu" IDENT "." aproc | IDENT
//! term     ::= LITERAL | "@" NAT | IDENT | "{" termlist "}" "key" KEY
//!            | IDENT "(" termlist? ")"
//! ```
//!
//! Conditionals nest greedily: `a ? b ? p : q : r` parses as
//! `a ? (b ? p : q) : r`, which is also how the printer lays them out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{
    ActionName, ActuatorId, ActuatorProc, Component, KeyId, Label, Literal, Node, Process,
    SensorId, SensorProc, System, Term,
};

/// Syntax error with a position in the source text.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Atom(String),
    Store,
    Sensor,
    Actuator,
    Mu,
    Tau,
    Read,
    Decrypt,
    As,
    Key,
    In,
    True,
    False,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    LParen,
    RParen,
    CmdOpen,
    CmdClose,
    OutOpen,
    OutClose,
    LAngle,
    RAngle,
    BarBar,
    Bar,
    Colon,
    Semi,
    Comma,
    Dot,
    Assign,
    Question,
    At,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(x) => format!("identifier {x:?}"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Atom(a) => format!("atom '{a}'"),
            Tok::Store => "\"store\"".into(),
            Tok::Sensor => "\"sensor\"".into(),
            Tok::Actuator => "\"actuator\"".into(),
            Tok::Mu => "\"mu\"".into(),
            Tok::Tau => "\"tau\"".into(),
            Tok::Read => "\"read\"".into(),
            Tok::Decrypt => "\"decrypt\"".into(),
            Tok::As => "\"as\"".into(),
            Tok::Key => "\"key\"".into(),
            Tok::In => "\"in\"".into(),
            Tok::True => "\"true\"".into(),
            Tok::False => "\"false\"".into(),
            Tok::LBracket => "\"[\"".into(),
            Tok::RBracket => "\"]\"".into(),
            Tok::LBrace => "\"{\"".into(),
            Tok::RBrace => "\"}\"".into(),
            Tok::LParen => "\"(\"".into(),
            Tok::RParen => "\")\"".into(),
            Tok::CmdOpen => "\"(|\"".into(),
            Tok::CmdClose => "\"|)\"".into(),
            Tok::OutOpen => "\"<<\"".into(),
            Tok::OutClose => "\">>\"".into(),
            Tok::LAngle => "\"<\"".into(),
            Tok::RAngle => "\">\"".into(),
            Tok::BarBar => "\"||\"".into(),
            Tok::Bar => "\"|\"".into(),
            Tok::Colon => "\":\"".into(),
            Tok::Semi => "\";\"".into(),
            Tok::Comma => "\",\"".into(),
            Tok::Dot => "\".\"".into(),
            Tok::Assign => "\":=\"".into(),
            Tok::Question => "\"?\"".into(),
            Tok::At => "\"@\"".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(source: &'a str) -> Self {
        Lexer {
            chars: source.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line,
            column,
            message: message.into(),
            expected: Vec::new(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            let (line, column) = (self.line, self.column);
            let Some(&c) = self.chars.peek() else {
                out.push(Token {
                    tok: Tok::Eof,
                    line,
                    column,
                });
                return Ok(out);
            };
            let tok = match c {
                'a'..='z' | 'A'..='Z' | '_' => {
                    let word = self.take_word(true);
                    match word.as_str() {
                        "store" => Tok::Store,
                        "sensor" => Tok::Sensor,
                        "actuator" => Tok::Actuator,
                        "mu" => Tok::Mu,
                        "tau" => Tok::Tau,
                        "read" => Tok::Read,
                        "decrypt" => Tok::Decrypt,
                        "as" => Tok::As,
                        "key" => Tok::Key,
                        "in" => Tok::In,
                        "true" => Tok::True,
                        "false" => Tok::False,
                        _ => Tok::Ident(word),
                    }
                }
                '0'..='9' => self.take_int(false, line, column)?,
                '-' => {
                    self.bump();
                    if matches!(self.chars.peek(), Some(c) if c.is_ascii_digit()) {
                        self.take_int(true, line, column)?
                    } else {
                        return Err(self.error(line, column, "stray \"-\""));
                    }
                }
                '\'' => {
                    self.bump();
                    let name = self.take_word(false);
                    if name.is_empty() {
                        return Err(self.error(line, column, "empty atom"));
                    }
                    if self.chars.peek() == Some(&'\'') {
                        self.bump();
                        Tok::Atom(name)
                    } else {
                        return Err(self.error(line, column, "unterminated atom"));
                    }
                }
                '[' => self.single(Tok::LBracket),
                ']' => self.single(Tok::RBracket),
                '{' => self.single(Tok::LBrace),
                '}' => self.single(Tok::RBrace),
                '(' => self.pair('|', Tok::CmdOpen, Tok::LParen),
                ')' => self.single(Tok::RParen),
                '|' => {
                    self.bump();
                    match self.chars.peek() {
                        Some(')') => {
                            self.bump();
                            Tok::CmdClose
                        }
                        Some('|') => {
                            self.bump();
                            Tok::BarBar
                        }
                        _ => Tok::Bar,
                    }
                }
                '<' => self.pair('<', Tok::OutOpen, Tok::LAngle),
                '>' => self.pair('>', Tok::OutClose, Tok::RAngle),
                ':' => self.pair('=', Tok::Assign, Tok::Colon),
                ';' => self.single(Tok::Semi),
                ',' => self.single(Tok::Comma),
                '.' => self.single(Tok::Dot),
                '?' => self.single(Tok::Question),
                '@' => self.single(Tok::At),
                other => {
                    return Err(self.error(line, column, format!("unexpected character {other:?}")));
                }
            };
            out.push(Token { tok, line, column });
        }
    }

    fn single(&mut self, tok: Tok) -> Tok {
        self.bump();
        tok
    }

    fn pair(&mut self, second: char, two: Tok, one: Tok) -> Tok {
        self.bump();
        if self.chars.peek() == Some(&second) {
            self.bump();
            two
        } else {
            one
        }
    }

    /// Maximal run of word characters. Identifiers may carry primes, as in
    /// z'; atom bodies may not, since a quote closes the atom.
    fn take_word(&mut self, allow_prime: bool) -> String {
        let mut word = String::new();
        while let Some(&c) = self.chars.peek() {
            let ok = c.is_ascii_alphanumeric()
                || c == '_'
                || (allow_prime && c == '\'' && !word.is_empty());
            if !ok {
                break;
            }
            word.push(c);
            self.bump();
        }
        word
    }

    fn take_int(&mut self, negative: bool, line: usize, column: usize) -> Result<Tok, ParseError> {
        let mut digits = String::new();
        if negative {
            digits.push('-');
        }
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.bump();
            } else {
                break;
            }
        }
        digits
            .parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| self.error(line, column, format!("integer {digits} does not fit in 64 bits")))
    }
}

/// Parses an IoT-LySa system. The result satisfies every [`System`]
/// structural invariant.
pub fn parse_system(source: &str) -> Result<System, ParseError> {
    let tokens = Lexer::new(source).tokenize()?;
    let mut parser = Parser { tokens, pos: 0 };
    let system = parser.system()?;
    debug_assert!(system.validate().is_ok());
    Ok(system)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.column)
    }

    fn advance(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error_here(&self, message: impl Into<String>, expected: &[&str]) -> ParseError {
        let (line, column) = self.here();
        ParseError {
            line,
            column,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        self.error_here(format!("unexpected {}", self.peek().describe()), expected)
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == &tok {
            self.advance();
            Ok(())
        } else {
            Err(self.unexpected(&[&tok.describe()]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(x) => {
                let x = x.clone();
                self.advance();
                Ok(x)
            }
            _ => Err(self.unexpected(&[what])),
        }
    }

    fn nat(&mut self, what: &str) -> Result<u32, ParseError> {
        match self.peek() {
            Tok::Int(n) if *n >= 0 && *n <= u32::MAX as i64 => {
                let n = *n as u32;
                self.advance();
                Ok(n)
            }
            _ => Err(self.unexpected(&[what])),
        }
    }

    fn system(&mut self) -> Result<System, ParseError> {
        let mut nodes = Vec::new();
        let mut labels: BTreeMap<String, ()> = BTreeMap::new();
        loop {
            let (line, column) = self.here();
            let node = self.node()?;
            if labels.insert(node.label.0.clone(), ()).is_some() {
                return Err(ParseError {
                    line,
                    column,
                    message: format!("duplicate node label {}", node.label),
                    expected: Vec::new(),
                });
            }
            nodes.push(node);
            match self.peek() {
                Tok::Bar => {
                    self.advance();
                }
                Tok::Eof => break,
                _ => return Err(self.unexpected(&["\"|\"", "end of input"])),
            }
        }
        Ok(System { nodes })
    }

    fn node(&mut self) -> Result<Node, ParseError> {
        let label = Label::new(self.ident("node label")?);
        self.expect(Tok::Colon)?;
        self.expect(Tok::LBracket)?;
        let mut components = Vec::new();
        let mut store_seen = false;
        let mut sensors: BTreeSet<u32> = BTreeSet::new();
        let mut actuators: BTreeSet<u32> = BTreeSet::new();
        loop {
            let (line, column) = self.here();
            let positioned = |message: String| ParseError {
                line,
                column,
                message,
                expected: Vec::new(),
            };
            match self.peek() {
                Tok::Store => {
                    self.advance();
                    if store_seen {
                        return Err(positioned(format!("duplicate store in node {label}")));
                    }
                    store_seen = true;
                    components.push(Component::Store);
                }
                Tok::Sensor => {
                    self.advance();
                    let id = self.nat("sensor identifier")?;
                    if !sensors.insert(id) {
                        return Err(positioned(format!("duplicate sensor {id} in node {label}")));
                    }
                    if actuators.contains(&id) {
                        return Err(positioned(format!(
                            "identifier {id} is already an actuator of node {label}"
                        )));
                    }
                    self.expect(Tok::LBrace)?;
                    let body = self.sproc(SensorId(id), &mut Vec::new())?;
                    self.expect(Tok::RBrace)?;
                    components.push(Component::Sensor {
                        id: SensorId(id),
                        body,
                    });
                }
                Tok::Actuator => {
                    self.advance();
                    let id = self.nat("actuator identifier")?;
                    if !actuators.insert(id) {
                        return Err(positioned(format!(
                            "duplicate actuator {id} in node {label}"
                        )));
                    }
                    if sensors.contains(&id) {
                        return Err(positioned(format!(
                            "identifier {id} is already a sensor of node {label}"
                        )));
                    }
                    self.expect(Tok::LBrace)?;
                    let body = self.aproc(ActuatorId(id), &mut Vec::new())?;
                    self.expect(Tok::RBrace)?;
                    components.push(Component::Actuator {
                        id: ActuatorId(id),
                        body,
                    });
                }
                _ => {
                    let p = self.proc(&mut Vec::new())?;
                    components.push(Component::Process(p));
                }
            }
            match self.peek() {
                Tok::BarBar => {
                    self.advance();
                }
                Tok::RBracket => {
                    self.advance();
                    break;
                }
                _ => return Err(self.unexpected(&["\"||\"", "\"]\""])),
            }
        }
        if !store_seen {
            return Err(self.error_here(format!("node {label} has no store component"), &[]));
        }
        Ok(Node { label, components })
    }

    fn proc(&mut self, bound: &mut Vec<String>) -> Result<Process, ParseError> {
        match self.peek().clone() {
            Tok::Int(0) if self.peek2() != &Tok::Question => {
                self.advance();
                Ok(Process::Nil)
            }
            Tok::OutOpen => {
                self.advance();
                let terms = self.term_list(&Tok::OutClose)?;
                self.expect(Tok::OutClose)?;
                self.expect(Tok::Colon)?;
                self.expect(Tok::LBrace)?;
                let receivers = self.label_set()?;
                self.expect(Tok::RBrace)?;
                self.expect(Tok::Dot)?;
                let cont = self.proc(bound)?;
                Ok(Process::MultiOut {
                    terms,
                    receivers,
                    cont: Box::new(cont),
                })
            }
            Tok::LParen => {
                self.advance();
                let matches = self.term_list(&Tok::Semi)?;
                self.expect(Tok::Semi)?;
                let binders = self.binder_list(&Tok::RParen)?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Dot)?;
                let cont = self.proc(bound)?;
                Ok(Process::Input {
                    matches,
                    binders,
                    cont: Box::new(cont),
                })
            }
            Tok::Decrypt => {
                self.advance();
                let subject = self.term()?;
                self.expect(Tok::As)?;
                self.expect(Tok::LBrace)?;
                let matches = self.term_list(&Tok::Semi)?;
                self.expect(Tok::Semi)?;
                let binders = self.binder_list(&Tok::RBrace)?;
                self.expect(Tok::RBrace)?;
                self.expect(Tok::Key)?;
                let key = KeyId::new(self.ident("key name")?);
                self.expect(Tok::In)?;
                let cont = self.proc(bound)?;
                Ok(Process::Decrypt {
                    subject,
                    matches,
                    binders,
                    key,
                    cont: Box::new(cont),
                })
            }
            Tok::Mu => {
                self.advance();
                let var = self.ident("iteration variable")?;
                self.expect(Tok::Dot)?;
                bound.push(var.clone());
                let body = self.proc(bound)?;
                bound.pop();
                Ok(Process::Mu {
                    var,
                    body: Box::new(body),
                })
            }
            Tok::LAngle => {
                self.advance();
                let actuator = ActuatorId(self.nat("actuator identifier")?);
                self.expect(Tok::Comma)?;
                let action = ActionName::new(self.ident("action name")?);
                self.expect(Tok::RAngle)?;
                self.expect(Tok::Dot)?;
                let cont = self.proc(bound)?;
                Ok(Process::ActOut {
                    actuator,
                    action,
                    cont: Box::new(cont),
                })
            }
            Tok::Ident(x) => match self.peek2() {
                Tok::Assign => {
                    self.advance();
                    self.advance();
                    let term = self.term()?;
                    self.expect(Tok::Dot)?;
                    let cont = self.proc(bound)?;
                    Ok(Process::Assign {
                        var: x,
                        term,
                        cont: Box::new(cont),
                    })
                }
                Tok::LParen | Tok::Question => self.cond(bound),
                _ => {
                    if bound.iter().any(|b| b == &x) {
                        self.advance();
                        Ok(Process::IterVar(x))
                    } else {
                        Err(self.error_here(
                            format!("iteration variable {x} is not bound by an enclosing mu"),
                            &[],
                        ))
                    }
                }
            },
            Tok::Int(_) | Tok::True | Tok::False | Tok::Atom(_) | Tok::At | Tok::LBrace => {
                self.cond(bound)
            }
            _ => Err(self.unexpected(&["process"])),
        }
    }

    fn cond(&mut self, bound: &mut Vec<String>) -> Result<Process, ParseError> {
        let guard = self.term()?;
        self.expect(Tok::Question)?;
        let then_branch = self.proc(bound)?;
        self.expect(Tok::Colon)?;
        let else_branch = self.proc(bound)?;
        Ok(Process::Cond {
            guard,
            then_branch: Box::new(then_branch),
            else_branch: Box::new(else_branch),
        })
    }

    fn sproc(&mut self, id: SensorId, bound: &mut Vec<String>) -> Result<SensorProc, ParseError> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.advance();
                Ok(SensorProc::Nil)
            }
            Tok::Tau => {
                self.advance();
                self.expect(Tok::Dot)?;
                Ok(SensorProc::Tau(Box::new(self.sproc(id, bound)?)))
            }
            Tok::At => {
                let (line, column) = self.here();
                self.advance();
                let loc = self.nat("sensor location")?;
                if SensorId(loc) != id {
                    return Err(ParseError {
                        line,
                        column,
                        message: format!("sensor {id} stores to location {loc}"),
                        expected: Vec::new(),
                    });
                }
                self.expect(Tok::Assign)?;
                self.expect(Tok::Read)?;
                self.expect(Tok::Dot)?;
                Ok(SensorProc::StoreValue {
                    loc: SensorId(loc),
                    cont: Box::new(self.sproc(id, bound)?),
                })
            }
            Tok::Mu => {
                self.advance();
                let var = self.ident("iteration variable")?;
                self.expect(Tok::Dot)?;
                bound.push(var.clone());
                let body = self.sproc(id, bound)?;
                bound.pop();
                Ok(SensorProc::Mu {
                    var,
                    body: Box::new(body),
                })
            }
            Tok::Ident(x) => {
                if bound.iter().any(|b| b == &x) {
                    self.advance();
                    Ok(SensorProc::IterVar(x))
                } else {
                    Err(self.error_here(
                        format!("iteration variable {x} is not bound by an enclosing mu"),
                        &[],
                    ))
                }
            }
            _ => Err(self.unexpected(&["sensor body"])),
        }
    }

    fn aproc(
        &mut self,
        id: ActuatorId,
        bound: &mut Vec<String>,
    ) -> Result<ActuatorProc, ParseError> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.advance();
                Ok(ActuatorProc::Nil)
            }
            Tok::Tau => {
                self.advance();
                self.expect(Tok::Dot)?;
                Ok(ActuatorProc::Tau(Box::new(self.aproc(id, bound)?)))
            }
            Tok::CmdOpen => {
                let (line, column) = self.here();
                self.advance();
                let cmd_id = self.nat("actuator identifier")?;
                if ActuatorId(cmd_id) != id {
                    return Err(ParseError {
                        line,
                        column,
                        message: format!("actuator {id} waits for commands aimed at {cmd_id}"),
                        expected: Vec::new(),
                    });
                }
                self.expect(Tok::Comma)?;
                self.expect(Tok::LBrace)?;
                let mut accepted = BTreeSet::new();
                if self.peek() != &Tok::RBrace {
                    loop {
                        accepted.insert(ActionName::new(self.ident("action name")?));
                        if self.peek() == &Tok::Comma {
                            self.advance();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                self.expect(Tok::CmdClose)?;
                self.expect(Tok::Dot)?;
                Ok(ActuatorProc::Command {
                    actuator: ActuatorId(cmd_id),
                    accepted,
                    cont: Box::new(self.aproc(id, bound)?),
                })
            }
            Tok::Mu => {
                self.advance();
                let var = self.ident("iteration variable")?;
                self.expect(Tok::Dot)?;
                bound.push(var.clone());
                let body = self.aproc(id, bound)?;
                bound.pop();
                Ok(ActuatorProc::Mu {
                    var,
                    body: Box::new(body),
                })
            }
            Tok::Ident(x) => {
                if bound.iter().any(|b| b == &x) {
                    self.advance();
                    Ok(ActuatorProc::IterVar(x))
                } else {
                    Err(self.error_here(
                        format!("iteration variable {x} is not bound by an enclosing mu"),
                        &[],
                    ))
                }
            }
            _ => Err(self.unexpected(&["actuator body"])),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.advance();
                Ok(Term::Const(Literal::Int(n)))
            }
            Tok::True => {
                self.advance();
                Ok(Term::Const(Literal::Bool(true)))
            }
            Tok::False => {
                self.advance();
                Ok(Term::Const(Literal::Bool(false)))
            }
            Tok::Atom(a) => {
                self.advance();
                Ok(Term::Const(Literal::Atom(a)))
            }
            Tok::At => {
                self.advance();
                Ok(Term::SensorLoc(SensorId(self.nat("sensor location")?)))
            }
            Tok::LBrace => {
                self.advance();
                let args = self.term_list(&Tok::RBrace)?;
                self.expect(Tok::RBrace)?;
                self.expect(Tok::Key)?;
                let key = KeyId::new(self.ident("key name")?);
                Ok(Term::Enc { args, key })
            }
            Tok::Ident(x) => {
                self.advance();
                if self.peek() == &Tok::LParen {
                    self.advance();
                    let args = self.term_list(&Tok::RParen)?;
                    self.expect(Tok::RParen)?;
                    Ok(Term::App { func: x, args })
                } else {
                    Ok(Term::Var(x))
                }
            }
            _ => Err(self.unexpected(&["term"])),
        }
    }

    /// Comma-separated terms up to (excluding) `stop`; possibly empty.
    fn term_list(&mut self, stop: &Tok) -> Result<Vec<Term>, ParseError> {
        let mut terms = Vec::new();
        if self.peek() == stop {
            return Ok(terms);
        }
        loop {
            terms.push(self.term()?);
            if self.peek() == &Tok::Comma {
                self.advance();
            } else {
                break;
            }
        }
        Ok(terms)
    }

    fn binder_list(&mut self, stop: &Tok) -> Result<Vec<String>, ParseError> {
        let mut binders = Vec::new();
        if self.peek() == stop {
            return Ok(binders);
        }
        loop {
            let (line, column) = self.here();
            let x = self.ident("variable")?;
            if binders.contains(&x) {
                return Err(ParseError {
                    line,
                    column,
                    message: format!("binder list contains {x} twice"),
                    expected: Vec::new(),
                });
            }
            binders.push(x);
            if self.peek() == &Tok::Comma {
                self.advance();
            } else {
                break;
            }
        }
        Ok(binders)
    }

    fn label_set(&mut self) -> Result<BTreeSet<Label>, ParseError> {
        let mut labels = BTreeSet::new();
        if self.peek() == &Tok::RBrace {
            return Ok(labels);
        }
        loop {
            labels.insert(Label::new(self.ident("node label")?));
            if self.peek() == &Tok::Comma {
                self.advance();
            } else {
                break;
            }
        }
        Ok(labels)
    }
}
