//! Driving an external SMT solver over SMT-LIB v2 text.
//!
//! Every check spawns a fresh solver process, writes the script to its
//! stdin, reads the verdict and, on `sat`, asks for the values of a list of
//! query terms with `get-value`. The process is killed once the deadline
//! (timeout plus grace period) passes.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use crate::encoder::{Script, Term};
use crate::word::U256;

/// A literal returned by `get-value`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    BitVec(U256, u32),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_word(&self) -> Option<U256> {
        match self {
            Value::BitVec(v, _) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::BitVec(v, _) => write!(f, "{v:#x}"),
        }
    }
}

/// Values of the query terms, in query order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Model {
    entries: Vec<(Term, Value)>,
}

impl Model {
    pub fn get(&self, t: &Term) -> Option<&Value> {
        self.entries.iter().find(|(q, _)| q == t).map(|(_, v)| v)
    }

    pub fn entries(&self) -> &[(Term, Value)] {
        &self.entries
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Sat,
    Unsat,
    /// The solver answered `unknown` before the deadline.
    Unknown,
    /// The deadline passed.
    Timeout,
    SolverError(String),
}

#[derive(Clone, Debug)]
pub struct SolverVerdict {
    pub status: Status,
    /// Present exactly when the status is `Sat`.
    pub model: Option<Model>,
    pub wall_time: Duration,
}

impl SolverVerdict {
    fn without_model(status: Status, started: Instant) -> SolverVerdict {
        SolverVerdict {
            status,
            model: None,
            wall_time: started.elapsed(),
        }
    }

    pub fn is_sat(&self) -> bool {
        self.status == Status::Sat
    }

    pub fn is_unsat(&self) -> bool {
        self.status == Status::Unsat
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Program followed by its arguments; the script arrives on stdin.
    pub command: Vec<String>,
    /// Extra argument carrying the soft per-query timeout; `{ms}` is
    /// replaced by the timeout in milliseconds.
    pub timeout_arg: Option<String>,
    /// Time granted past the timeout before the process is killed.
    pub grace: Duration,
    /// When set, every script sent is also written here.
    pub export_dir: Option<PathBuf>,
    /// Extra arguments for alternating attempts. With two or more entries
    /// a check runs each in turn for a slice of the timeout, doubling the
    /// slice every round until one answers or the timeout is spent.
    pub variants: Vec<Vec<String>>,
    /// Length of the first slice.
    pub first_slice: Duration,
}

fn z3_variants() -> Vec<Vec<String>> {
    vec![vec![], vec!["smt.auto_config=false".into()]]
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            command: vec!["z3".into(), "-in".into(), "-smt2".into()],
            timeout_arg: Some("-t:{ms}".into()),
            grace: Duration::from_secs(2),
            export_dir: None,
            variants: z3_variants(),
            first_slice: Duration::from_secs(15),
        }
    }
}

impl SolverConfig {
    /// Parses a whitespace-separated command line such as `"z3 -in"`.
    /// A command other than z3 gets no timeout argument and a single
    /// attempt per check.
    pub fn from_command_line(cmd: &str) -> SolverConfig {
        let command: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        let is_z3 = command
            .first()
            .map(|p| Path::new(p).file_name().is_some_and(|f| f == "z3"))
            .unwrap_or(false);
        SolverConfig {
            timeout_arg: if is_z3 { Some("-t:{ms}".into()) } else { None },
            variants: if is_z3 { z3_variants() } else { Vec::new() },
            command,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Default)]
pub struct Solver {
    config: SolverConfig,
    exported: AtomicUsize,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Solver {
        Solver {
            config,
            exported: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Number of scripts handed to the solver so far.
    pub fn calls(&self) -> usize {
        self.exported.load(Ordering::Relaxed)
    }

    /// Checks `script`; on `sat` the values of `queries` form the model.
    pub fn check(&self, script: &Script, queries: &[Term], timeout: Duration) -> SolverVerdict {
        let started = Instant::now();
        let text = script.to_smtlib();
        let idx = self.exported.fetch_add(1, Ordering::Relaxed);
        if let Some(dir) = &self.config.export_dir {
            let path = dir.join(format!("query_{idx:05}.smt2"));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &text))
            {
                return SolverVerdict::without_model(
                    Status::SolverError(format!("cannot export {}: {e}", path.display())),
                    started,
                );
            }
        }
        if self.config.variants.len() < 2 {
            let extra = self.config.variants.first().cloned().unwrap_or_default();
            return self.attempt(&text, queries, &extra, timeout, started);
        }
        let mut slice = self.config.first_slice.max(Duration::from_millis(1));
        let mut unknown = false;
        loop {
            for extra in &self.config.variants {
                let left = timeout.saturating_sub(started.elapsed());
                if left.is_zero() {
                    let status = if unknown {
                        Status::Unknown
                    } else {
                        Status::Timeout
                    };
                    return SolverVerdict::without_model(status, started);
                }
                let v = self.attempt(&text, queries, extra, slice.min(left), Instant::now());
                match v.status {
                    Status::Timeout => {}
                    Status::Unknown => unknown = true,
                    _ => {
                        return SolverVerdict {
                            wall_time: started.elapsed(),
                            ..v
                        }
                    }
                }
            }
            slice *= 2;
        }
    }

    fn attempt(
        &self,
        text: &str,
        queries: &[Term],
        extra: &[String],
        timeout: Duration,
        started: Instant,
    ) -> SolverVerdict {
        let deadline = started + timeout + self.config.grace;
        let mut session = match Session::spawn(&self.config, extra, timeout) {
            Ok(s) => s,
            Err(e) => return SolverVerdict::without_model(Status::SolverError(e), started),
        };
        let verdict = session.run(text, queries, timeout, deadline, started);
        session.finish(deadline);
        verdict
    }
}

/// Writes `script` as a standalone SMT-LIB file.
pub fn export_smtlib(script: &Script, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, script.to_smtlib())
}

struct Session {
    child: Child,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
    transcript: Vec<String>,
}

impl Session {
    fn spawn(cfg: &SolverConfig, extra: &[String], timeout: Duration) -> Result<Session, String> {
        let (program, args) = cfg.command.split_first().ok_or("empty solver command")?;
        let mut cmd = Command::new(program);
        cmd.args(args).args(extra);
        if let Some(arg) = &cfg.timeout_arg {
            cmd.arg(arg.replace("{ms}", &timeout.as_millis().max(1).to_string()));
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start solver `{program}`: {e}"))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = String::new();
            let _ = err_pipe.read_to_string(&mut buf);
            if let Ok(mut s) = sink.lock() {
                s.push_str(&buf);
            }
        });
        Ok(Session {
            child,
            lines: rx,
            stderr,
            transcript: Vec::new(),
        })
    }

    fn send(&mut self, text: &str) -> Result<(), String> {
        let stdin = self.child.stdin.as_mut().ok_or("solver stdin closed")?;
        stdin
            .write_all(text.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| format!("writing to solver: {e}"))
    }

    /// Next non-empty output line, `None` on deadline, error on EOF.
    fn line(&mut self, deadline: Instant) -> Result<Option<String>, String> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(l) => {
                    self.transcript.push(l.clone());
                    if !l.trim().is_empty() {
                        return Ok(Some(l));
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(format!("solver exited unexpectedly\n{}", self.raw()))
                }
            }
        }
    }

    fn raw(&mut self) -> String {
        let err = self.stderr.lock().map(|s| s.clone()).unwrap_or_default();
        let mut out = self.transcript.join("\n");
        if !err.is_empty() {
            out.push_str("\n[stderr]\n");
            out.push_str(&err);
        }
        out
    }

    fn run(
        &mut self,
        script: &str,
        queries: &[Term],
        timeout: Duration,
        deadline: Instant,
        started: Instant,
    ) -> SolverVerdict {
        let fail = |msg: String| SolverVerdict::without_model(Status::SolverError(msg), started);
        if let Err(e) = self.send(script) {
            return fail(e);
        }
        let status = loop {
            match self.line(deadline) {
                Ok(None) => return SolverVerdict::without_model(Status::Timeout, started),
                Err(e) => return fail(e),
                Ok(Some(l)) => match l.trim() {
                    "sat" => break Status::Sat,
                    "unsat" => break Status::Unsat,
                    "unknown" if started.elapsed() >= timeout => break Status::Timeout,
                    "unknown" => break Status::Unknown,
                    "success" => continue,
                    other => {
                        let msg = format!("unexpected solver output `{other}`\n{}", self.raw());
                        return fail(msg);
                    }
                },
            }
        };
        if status != Status::Sat {
            return SolverVerdict::without_model(status, started);
        }
        if queries.is_empty() {
            return SolverVerdict {
                status,
                model: Some(Model::default()),
                wall_time: started.elapsed(),
            };
        }
        let request = format!(
            "(get-value ({}))\n",
            queries
                .iter()
                .map(|q| q.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        if let Err(e) = self.send(&request) {
            return fail(e);
        }
        let mut text = String::new();
        loop {
            match self.line(deadline) {
                Ok(None) => return SolverVerdict::without_model(Status::Timeout, started),
                Err(e) => return fail(e),
                Ok(Some(l)) => {
                    text.push_str(&l);
                    text.push('\n');
                    if balanced(&text) {
                        break;
                    }
                }
            }
        }
        match parse_values(&text, queries) {
            Ok(model) => SolverVerdict {
                status,
                model: Some(model),
                wall_time: started.elapsed(),
            },
            Err(e) => {
                let msg = format!("{e}\n{}", self.raw());
                fail(msg)
            }
        }
    }

    fn finish(mut self, deadline: Instant) {
        let _ = self.send("(exit)\n");
        drop(self.child.stdin.take());
        let left = deadline.saturating_duration_since(Instant::now());
        match self.child.wait_timeout(left) {
            Ok(Some(_)) => {}
            _ => {
                let _ = self.child.kill();
                let _ = self.child.wait();
            }
        }
    }
}

fn balanced(text: &str) -> bool {
    let mut depth = 0i64;
    let mut seen = false;
    let mut in_str = false;
    for ch in text.chars() {
        match ch {
            '"' => in_str = !in_str,
            '(' if !in_str => {
                depth += 1;
                seen = true;
            }
            ')' if !in_str => depth -= 1,
            _ => {}
        }
    }
    seen && depth <= 0
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
            '|' => {
                // quoted symbol
                cur.push(c);
                for d in chars.by_ref() {
                    cur.push(d);
                    if d == '|' {
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_sexp(tokens: &[String], pos: &mut usize) -> Result<Sexp, String> {
    let tok = tokens.get(*pos).ok_or("unexpected end of solver output")?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(parse_sexp(tokens, pos)?),
                    None => return Err("unbalanced solver output".into()),
                }
            }
        }
        ")" => Err("unexpected `)` in solver output".into()),
        atom => Ok(Sexp::Atom(atom.to_string())),
    }
}

fn parse_literal(s: &Sexp) -> Result<Value, String> {
    match s {
        Sexp::Atom(a) if a == "true" => Ok(Value::Bool(true)),
        Sexp::Atom(a) if a == "false" => Ok(Value::Bool(false)),
        Sexp::Atom(a) if a.starts_with("#b") => {
            let digits = &a[2..];
            U256::from_str_radix(digits, 2)
                .map(|v| Value::BitVec(v, digits.len() as u32))
                .map_err(|e| format!("bad binary literal {a}: {e}"))
        }
        Sexp::Atom(a) if a.starts_with("#x") => {
            let digits = &a[2..];
            U256::from_str_radix(digits, 16)
                .map(|v| Value::BitVec(v, 4 * digits.len() as u32))
                .map_err(|e| format!("bad hex literal {a}: {e}"))
        }
        Sexp::Atom(a) => a
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| format!("unsupported literal `{a}`")),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(minus), inner] if minus == "-" => match parse_literal(inner)? {
                Value::Int(v) => Ok(Value::Int(-v)),
                other => Err(format!("cannot negate {other}")),
            },
            [Sexp::Atom(us), Sexp::Atom(bv), Sexp::Atom(w)]
                if us == "_" && bv.starts_with("bv") =>
            {
                let v = U256::from_str_radix(&bv[2..], 10)
                    .map_err(|e| format!("bad literal {bv}: {e}"))?;
                let w = w.parse().map_err(|_| format!("bad width {w}"))?;
                Ok(Value::BitVec(v, w))
            }
            _ => Err(format!("unsupported literal {s:?}")),
        },
    }
}

/// Parses a `get-value` answer, pairing values with `queries` by position.
fn parse_values(text: &str, queries: &[Term]) -> Result<Model, String> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let sexp = parse_sexp(&tokens, &mut pos)?;
    let Sexp::List(pairs) = sexp else {
        return Err(format!("unexpected get-value answer: {text}"));
    };
    if pairs.first() == Some(&Sexp::Atom("error".into())) {
        return Err(format!("solver error: {text}"));
    }
    if pairs.len() != queries.len() {
        return Err(format!(
            "expected {} values, got {}",
            queries.len(),
            pairs.len()
        ));
    }
    let entries = pairs
        .iter()
        .zip(queries)
        .map(|(pair, q)| match pair {
            Sexp::List(kv) if kv.len() == 2 => Ok((q.clone(), parse_literal(&kv[1])?)),
            _ => Err(format!("malformed get-value pair {pair:?}")),
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Model { entries })
}
