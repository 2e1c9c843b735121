//! Sorted SMT terms and SMT-LIB v2 scripts.

use std::fmt::{self, Write as _};

use crate::word::U256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Int,
    BitVec(u32),
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Bool => f.write_str("Bool"),
            Sort::Int => f.write_str("Int"),
            Sort::BitVec(w) => write!(f, "(_ BitVec {w})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Not,
    And,
    Or,
    Implies,
    Eq,
    Distinct,
    // integers
    Add,
    Sub,
    Lt,
    Le,
    Gt,
    Ge,
    // bit-vectors
    BvAdd,
    BvSub,
    BvMul,
    BvUdiv,
    BvSdiv,
    BvUrem,
    BvSrem,
    BvUlt,
    BvUgt,
    BvSlt,
    BvSgt,
    BvAnd,
    BvOr,
    BvXor,
    BvNot,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Not => "not",
            Op::And => "and",
            Op::Or => "or",
            Op::Implies => "=>",
            Op::Eq => "=",
            Op::Distinct => "distinct",
            Op::Add => "+",
            Op::Sub => "-",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::BvAdd => "bvadd",
            Op::BvSub => "bvsub",
            Op::BvMul => "bvmul",
            Op::BvUdiv => "bvudiv",
            Op::BvSdiv => "bvsdiv",
            Op::BvUrem => "bvurem",
            Op::BvSrem => "bvsrem",
            Op::BvUlt => "bvult",
            Op::BvUgt => "bvugt",
            Op::BvSlt => "bvslt",
            Op::BvSgt => "bvsgt",
            Op::BvAnd => "bvand",
            Op::BvOr => "bvor",
            Op::BvXor => "bvxor",
            Op::BvNot => "bvnot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Forall,
    Exists,
}

/// Expression tree. Variables cover both declared constants and
/// quantifier-bound names; the script decides which is which.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Bool(bool),
    Int(i64),
    BitVec(U256, u32),
    Var(String, Sort),
    App(String, Vec<Term>, Sort),
    Op(Op, Vec<Term>),
    Ite(Box<Term>, Box<Term>, Box<Term>),
    Quant(Quantifier, Vec<(String, Sort)>, Box<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortError(pub String);

#[allow(clippy::should_implement_trait)]
impl Term {
    pub fn var(name: impl Into<String>, sort: Sort) -> Term {
        Term::Var(name.into(), sort)
    }

    pub fn int(v: i64) -> Term {
        Term::Int(v)
    }

    pub fn bv(v: U256, width: u32) -> Term {
        Term::BitVec(
            crate::word::Width::new(width)
                .expect("width in 1..=256")
                .truncate(v),
            width,
        )
    }

    pub fn bv_u64(v: u64, width: u32) -> Term {
        Term::bv(U256::from(v), width)
    }

    pub fn app(f: impl Into<String>, args: Vec<Term>, ret: Sort) -> Term {
        Term::App(f.into(), args, ret)
    }

    pub fn op(op: Op, args: Vec<Term>) -> Term {
        let t = Term::Op(op, args);
        debug_assert!(t.check().is_ok(), "ill-sorted term: {t}");
        t
    }

    pub fn not(self) -> Term {
        match self {
            Term::Bool(b) => Term::Bool(!b),
            t => Term::op(Op::Not, vec![t]),
        }
    }

    pub fn and(terms: Vec<Term>) -> Term {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Term::Bool(true) => {}
                Term::Bool(false) => return Term::Bool(false),
                Term::Op(Op::And, inner) => flat.extend(inner),
                t => flat.push(t),
            }
        }
        match flat.len() {
            0 => Term::Bool(true),
            1 => flat.pop().unwrap(),
            _ => Term::op(Op::And, flat),
        }
    }

    pub fn or(terms: Vec<Term>) -> Term {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Term::Bool(false) => {}
                Term::Bool(true) => return Term::Bool(true),
                t => flat.push(t),
            }
        }
        match flat.len() {
            0 => Term::Bool(false),
            1 => flat.pop().unwrap(),
            _ => Term::op(Op::Or, flat),
        }
    }

    pub fn implies(self, rhs: Term) -> Term {
        Term::op(Op::Implies, vec![self, rhs])
    }

    pub fn eq(self, rhs: Term) -> Term {
        Term::op(Op::Eq, vec![self, rhs])
    }

    pub fn distinct(terms: Vec<Term>) -> Term {
        if terms.len() < 2 {
            Term::Bool(true)
        } else {
            Term::op(Op::Distinct, terms)
        }
    }

    pub fn ite(c: Term, t: Term, e: Term) -> Term {
        let r = Term::Ite(Box::new(c), Box::new(t), Box::new(e));
        debug_assert!(r.check().is_ok(), "ill-sorted ite: {r}");
        r
    }

    pub fn add(self, rhs: Term) -> Term {
        match (&self, &rhs) {
            (_, Term::Int(0)) => self,
            (Term::Int(a), Term::Int(b)) => Term::Int(a + b),
            _ => Term::op(Op::Add, vec![self, rhs]),
        }
    }

    pub fn sub(self, rhs: Term) -> Term {
        match (&self, &rhs) {
            (_, Term::Int(0)) => self,
            (Term::Int(a), Term::Int(b)) => Term::Int(a - b),
            _ => Term::op(Op::Sub, vec![self, rhs]),
        }
    }

    pub fn add_i(self, k: i64) -> Term {
        if k < 0 {
            self.sub(Term::Int(-k))
        } else {
            self.add(Term::Int(k))
        }
    }

    pub fn lt(self, rhs: Term) -> Term {
        Term::op(Op::Lt, vec![self, rhs])
    }

    pub fn le(self, rhs: Term) -> Term {
        Term::op(Op::Le, vec![self, rhs])
    }

    pub fn gt(self, rhs: Term) -> Term {
        Term::op(Op::Gt, vec![self, rhs])
    }

    pub fn ge(self, rhs: Term) -> Term {
        Term::op(Op::Ge, vec![self, rhs])
    }

    /// The top-level conjuncts of the term.
    pub fn conjuncts(self) -> Vec<Term> {
        match self {
            Term::Op(Op::And, parts) => parts,
            t => vec![t],
        }
    }

    /// Whether a variable or constant named in `names` occurs in the term.
    pub fn mentions(&self, names: &[&str]) -> bool {
        match self {
            Term::Bool(_) | Term::Int(_) | Term::BitVec(..) => false,
            Term::Var(n, _) => names.contains(&n.as_str()),
            Term::App(_, args, _) | Term::Op(_, args) => args.iter().any(|a| a.mentions(names)),
            Term::Ite(c, t, e) => c.mentions(names) || t.mentions(names) || e.mentions(names),
            Term::Quant(_, _, body) => body.mentions(names),
        }
    }

    pub fn forall(vars: Vec<(String, Sort)>, body: Term) -> Term {
        Term::quant(Quantifier::Forall, vars, body)
    }

    pub fn exists(vars: Vec<(String, Sort)>, body: Term) -> Term {
        Term::quant(Quantifier::Exists, vars, body)
    }

    fn quant(q: Quantifier, vars: Vec<(String, Sort)>, body: Term) -> Term {
        if vars.is_empty() || matches!(body, Term::Bool(_)) {
            body
        } else {
            Term::Quant(q, vars, Box::new(body))
        }
    }

    /// Sort of the term, assuming it is well sorted.
    pub fn sort(&self) -> Sort {
        match self {
            Term::Bool(_) => Sort::Bool,
            Term::Int(_) => Sort::Int,
            Term::BitVec(_, w) => Sort::BitVec(*w),
            Term::Var(_, s) | Term::App(_, _, s) => *s,
            Term::Ite(_, t, _) => t.sort(),
            Term::Quant(..) => Sort::Bool,
            Term::Op(op, args) => match op {
                Op::Add | Op::Sub => Sort::Int,
                Op::BvAdd
                | Op::BvSub
                | Op::BvMul
                | Op::BvUdiv
                | Op::BvSdiv
                | Op::BvUrem
                | Op::BvSrem
                | Op::BvAnd
                | Op::BvOr
                | Op::BvXor
                | Op::BvNot => args[0].sort(),
                _ => Sort::Bool,
            },
        }
    }

    /// Recursively checks operator argument sorts.
    pub fn check(&self) -> Result<Sort, SortError> {
        let err = |msg: String| Err(SortError(msg));
        match self {
            Term::App(_, args, s) => {
                for a in args {
                    a.check()?;
                }
                Ok(*s)
            }
            Term::Ite(c, t, e) => {
                if c.check()? != Sort::Bool {
                    return err(format!("ite condition not Bool: {c}"));
                }
                let (ts, es) = (t.check()?, e.check()?);
                if ts != es {
                    return err(format!("ite branches differ: {ts} vs {es}"));
                }
                Ok(ts)
            }
            Term::Quant(_, _, body) => {
                if body.check()? != Sort::Bool {
                    return err("quantifier body not Bool".into());
                }
                Ok(Sort::Bool)
            }
            Term::Op(op, args) => {
                let sorts = args
                    .iter()
                    .map(|a| a.check())
                    .collect::<Result<Vec<_>, _>>()?;
                let all = |s: Sort| sorts.iter().all(|&x| x == s);
                let same = sorts.windows(2).all(|w| w[0] == w[1]);
                let ok = match op {
                    Op::Not => sorts.len() == 1 && all(Sort::Bool),
                    Op::And | Op::Or => all(Sort::Bool),
                    Op::Implies => sorts.len() == 2 && all(Sort::Bool),
                    Op::Eq | Op::Distinct => sorts.len() >= 2 && same,
                    Op::Add | Op::Sub => sorts.len() >= 2 && all(Sort::Int),
                    Op::Lt | Op::Le | Op::Gt | Op::Ge => sorts.len() == 2 && all(Sort::Int),
                    Op::BvNot => sorts.len() == 1 && matches!(sorts[0], Sort::BitVec(_)),
                    _ => sorts.len() == 2 && same && matches!(sorts[0], Sort::BitVec(_)),
                };
                if ok {
                    Ok(self.sort())
                } else {
                    err(format!("bad argument sorts for {}: {sorts:?}", op.name()))
                }
            }
            _ => Ok(self.sort()),
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Term::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Term::Int(v) if *v < 0 => {
                let _ = write!(out, "(- {})", v.unsigned_abs());
            }
            Term::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Term::BitVec(v, w) => {
                let _ = write!(out, "(_ bv{v} {w})");
            }
            Term::Var(name, _) => out.push_str(name),
            Term::App(f, args, _) => {
                if args.is_empty() {
                    out.push_str(f);
                } else {
                    out.push('(');
                    out.push_str(f);
                    for a in args {
                        out.push(' ');
                        a.write(out);
                    }
                    out.push(')');
                }
            }
            Term::Op(op, args) => {
                out.push('(');
                out.push_str(op.name());
                for a in args {
                    out.push(' ');
                    a.write(out);
                }
                out.push(')');
            }
            Term::Ite(c, t, e) => {
                out.push_str("(ite ");
                c.write(out);
                out.push(' ');
                t.write(out);
                out.push(' ');
                e.write(out);
                out.push(')');
            }
            Term::Quant(q, vars, body) => {
                out.push_str(match q {
                    Quantifier::Forall => "(forall (",
                    Quantifier::Exists => "(exists (",
                });
                for (i, (name, sort)) in vars.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "({name} {sort})");
                }
                out.push_str(") ");
                body.write(out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write(&mut s);
        f.write_str(&s)
    }
}

/// Uninterpreted function (or constant, with no arguments) declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunDecl {
    pub name: String,
    pub args: Vec<Sort>,
    pub ret: Sort,
}

impl FunDecl {
    pub fn new(name: impl Into<String>, args: Vec<Sort>, ret: Sort) -> FunDecl {
        FunDecl {
            name: name.into(),
            args,
            ret,
        }
    }

    pub fn apply(&self, args: Vec<Term>) -> Term {
        debug_assert_eq!(
            args.iter().map(Term::sort).collect::<Vec<_>>(),
            self.args,
            "arguments of {}",
            self.name
        );
        Term::app(self.name.clone(), args, self.ret)
    }
}

pub const DEFAULT_LOGIC: &str = "UFBVLIA";

/// A self-contained query: logic, declarations in insertion order,
/// assertions, and `check-sat`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub logic: String,
    decls: Vec<FunDecl>,
    assertions: Vec<Term>,
}

impl Default for Script {
    fn default() -> Self {
        Script::new(DEFAULT_LOGIC)
    }
}

impl Script {
    pub fn new(logic: &str) -> Script {
        Script {
            logic: logic.to_string(),
            decls: Vec::new(),
            assertions: Vec::new(),
        }
    }

    /// Declares `decl` unless a symbol of that name already exists.
    pub fn declare(&mut self, decl: FunDecl) {
        if let Some(prev) = self.decls.iter().find(|d| d.name == decl.name) {
            debug_assert_eq!(prev, &decl, "conflicting declarations");
            return;
        }
        self.decls.push(decl);
    }

    pub fn assert(&mut self, t: Term) {
        debug_assert_eq!(t.sort(), Sort::Bool);
        self.assertions.push(t);
    }

    /// Asserts `∀vars. body` as one assertion per conjunct of `body`,
    /// each quantified over the variables it mentions.
    pub fn assert_forall(&mut self, vars: &[(String, Sort)], body: Term) {
        for t in body.conjuncts() {
            let used = vars
                .iter()
                .filter(|(n, _)| t.mentions(&[n.as_str()]))
                .cloned()
                .collect();
            self.assert(Term::forall(used, t));
        }
    }

    pub fn decls(&self) -> &[FunDecl] {
        &self.decls
    }

    pub fn assertions(&self) -> &[Term] {
        &self.assertions
    }

    /// Script text up to and including `(check-sat)`.
    pub fn to_smtlib(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(set-logic {})", self.logic);
        for d in &self.decls {
            let _ = write!(out, "(declare-fun {} (", d.name);
            for (i, s) in d.args.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{s}");
            }
            let _ = writeln!(out, ") {})", d.ret);
        }
        if self.assertions.is_empty() {
            out.push_str("(assert true)\n");
        }
        for a in &self.assertions {
            out.push_str("(assert ");
            a.write(&mut out);
            out.push_str(")\n");
        }
        out.push_str("(check-sat)\n");
        out
    }
}
