//! SMT encoding of block semantics.
//!
//! A program state is a tuple of uninterpreted functions indexed by the
//! number of executed instructions `j`:
//!
//! * `st(V, j, n)`: word at stack position `n` (0 is the bottom),
//! * `c(j)`: number of words on the stack,
//! * `hlt(j)`: exceptional halt has happened,
//! * `g(V, j)`: gas consumed so far,
//! * `str(V, j, key)`: storage.
//!
//! `V` is the tuple of universally quantified input words (initial stack,
//! initial storage contents, results of uninterpreted instructions and
//! abstracted PUSH arguments). Functions that depend on the inputs take
//! them as leading arguments, which lets one quantifier over `V` range over
//! all executions at once.
//!
//! Stack positions, step indices and gas are integers; words are
//! bit-vectors of the encoding width.

pub mod term;

use std::cell::Cell;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::bytecode::{Block, Op};
use crate::isa::{self, opcodes::*, EffectClass, Gas, GasRule, Instruction, STACK_LIMIT};
use crate::word::{Width, U256};
pub use term::{FunDecl, Script, Sort, Term};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("instruction {0} is not encodable")]
    Unencodable(String),
    #[error("uninterpreted instruction {0} does not occur in the source block")]
    UninterpretedNotInSource(String),
    #[error("abstracted constant c{0} is not part of the encoding")]
    UnknownConstant(usize),
    #[error("word width {0} out of range")]
    Width(u32),
}

/// Argument of a PUSH inside an encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PushArg {
    /// A literal, truncated to the encoding width.
    Word(U256),
    /// The `i`-th abstracted constant, a variable of `V`.
    Const(usize),
    /// A hole filled by the solver through the template function `a(j)`.
    Template,
}

/// Instruction as seen by the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymOp {
    Push(PushArg),
    Plain(u8),
}

impl SymOp {
    pub fn instruction(&self) -> &'static Instruction {
        match self {
            SymOp::Push(_) => isa::push_instr(),
            SymOp::Plain(op) => isa::instr(*op),
        }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            SymOp::Push(_) => isa::PUSH1,
            SymOp::Plain(op) => *op,
        }
    }

    pub fn gas_rule(&self) -> GasRule {
        self.instruction().gas_rule.expect("encodable instruction")
    }

    pub fn min_gas(&self) -> Gas {
        self.gas_rule().min()
    }

    pub fn net_stack(&self) -> i64 {
        let ins = self.instruction();
        i64::from(ins.alpha) - i64::from(ins.delta)
    }

    pub fn mnemonic(&self) -> String {
        match self {
            SymOp::Push(PushArg::Word(v)) => format!("PUSH {v}"),
            SymOp::Push(PushArg::Const(i)) => format!("PUSH c{i}"),
            SymOp::Push(PushArg::Template) => "PUSH ?".into(),
            SymOp::Plain(op) => isa::instr(*op).mnemonic.clone(),
        }
    }
}

/// A block whose large PUSH arguments may have been replaced by variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractBlock {
    pub ops: Vec<SymOp>,
    /// Original value of each abstracted constant `c_i`.
    pub constants: Vec<U256>,
}

impl AbstractBlock {
    /// Plain view of a block, no abstraction.
    pub fn concrete(p: &Block) -> AbstractBlock {
        AbstractBlock {
            ops: p.ops().iter().map(sym_op).collect(),
            constants: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        let mut produced: i64 = 0;
        let mut depth: i64 = 0;
        for op in &self.ops {
            let ins = op.instruction();
            depth = depth.max(i64::from(ins.delta) - produced);
            produced += op.net_stack();
        }
        depth.max(0) as usize
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Replaces constants by their original values. Templates are not allowed.
    pub fn concretize(&self, ops: &[SymOp]) -> Result<Block, EncodeError> {
        let ops = ops
            .iter()
            .map(|op| match *op {
                SymOp::Push(PushArg::Word(v)) => Ok(Op::push(v)),
                SymOp::Push(PushArg::Const(i)) => self
                    .constants
                    .get(i)
                    .map(|&v| Op::push(v))
                    .ok_or(EncodeError::UnknownConstant(i)),
                SymOp::Push(PushArg::Template) => Err(EncodeError::Unencodable("PUSH ?".into())),
                SymOp::Plain(code) => Ok(Op::Plain(code)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Block::new(ops).map_err(|e| EncodeError::Unencodable(e.to_string()))
    }
}

fn sym_op(op: &Op) -> SymOp {
    match *op {
        Op::Push { value, .. } => SymOp::Push(PushArg::Word(value)),
        Op::Plain(code) => SymOp::Plain(code),
    }
}

/// Replaces every PUSH argument `>= 2^bits` by a variable. Equal arguments
/// share one variable; the returned block maps each variable back.
pub fn abstract_push_args(p: &Block, bits: u32) -> AbstractBlock {
    let limit = Width::new(bits).map(|w| w.mask()).unwrap_or(U256::MAX);
    let mut constants: Vec<U256> = Vec::new();
    let ops = p
        .ops()
        .iter()
        .map(|op| match *op {
            Op::Push { value, .. } if value > limit => {
                let i = constants
                    .iter()
                    .position(|&c| c == value)
                    .unwrap_or_else(|| {
                        constants.push(value);
                        constants.len() - 1
                    });
                SymOp::Push(PushArg::Const(i))
            }
            _ => sym_op(op),
        })
        .collect();
    AbstractBlock { ops, constants }
}

/// A position at which a program touches storage or calls a non-constant
/// uninterpreted instruction, with the variable holding the initial
/// content or the result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Touch {
    /// Index of the state (program) the position belongs to.
    pub state: usize,
    pub position: usize,
    pub var: String,
}

/// The universally quantified input variables `V` of one encoding.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VarUniverse {
    pub stack: Vec<String>,
    pub storage: Vec<Touch>,
    /// One variable per constant uninterpreted instruction.
    pub consts: Vec<(u8, String)>,
    /// Result variables per non-constant uninterpreted instruction.
    pub nonconst: Vec<(u8, Vec<Touch>)>,
    pub push_consts: Vec<String>,
}

impl VarUniverse {
    /// Builds `V` from the programs whose positions seed the storage and
    /// uninterpreted-function initialization. `depth` words of input stack.
    pub fn new(depth: usize, programs: &[&[SymOp]], num_consts: usize) -> VarUniverse {
        let mut u = VarUniverse {
            stack: (0..depth).map(|i| format!("x_{i}")).collect(),
            push_consts: (0..num_consts).map(|i| format!("c_{i}")).collect(),
            ..Default::default()
        };
        let mut consts = BTreeSet::new();
        for (state, ops) in programs.iter().enumerate() {
            for (position, op) in ops.iter().enumerate() {
                let SymOp::Plain(code) = *op else { continue };
                let ins = isa::instr(code);
                if code == SLOAD || code == SSTORE {
                    let var = format!("sto_{}", u.storage.len());
                    u.storage.push(Touch {
                        state,
                        position,
                        var,
                    });
                } else if ins.effect_class == EffectClass::ConstUninterpreted {
                    consts.insert(code);
                } else if ins.effect_class == EffectClass::NonConstUninterpreted {
                    let idx = match u.nonconst.iter().position(|(c, _)| *c == code) {
                        Some(i) => i,
                        None => {
                            u.nonconst.push((code, Vec::new()));
                            u.nonconst.len() - 1
                        }
                    };
                    let (_, touches) = &mut u.nonconst[idx];
                    let var = format!("u_{}_{}", ins.mnemonic, touches.len());
                    touches.push(Touch {
                        state,
                        position,
                        var,
                    });
                }
            }
        }
        u.nonconst.sort_by_key(|(c, _)| *c);
        u.consts = consts
            .into_iter()
            .map(|c| (c, format!("u_{}", isa::instr(c).mnemonic)))
            .collect();
        u
    }

    /// Adds a variable for a constant uninterpreted instruction.
    pub fn add_const(&mut self, code: u8) {
        if !self.consts.iter().any(|(c, _)| *c == code) {
            self.consts
                .push((code, format!("u_{}", isa::instr(code).mnemonic)));
            self.consts.sort_by_key(|(c, _)| *c);
        }
    }

    /// All variable names in a fixed order.
    pub fn names(&self) -> Vec<String> {
        let mut out = self.stack.clone();
        out.extend(self.storage.iter().map(|t| t.var.clone()));
        out.extend(self.consts.iter().map(|(_, v)| v.clone()));
        for (_, touches) in &self.nonconst {
            out.extend(touches.iter().map(|t| t.var.clone()));
        }
        out.extend(self.push_consts.iter().cloned());
        out
    }

    pub fn len(&self) -> usize {
        self.names().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Function symbols of one program state.
#[derive(Clone, Debug)]
pub struct SymbolicState {
    pub prefix: String,
    st: FunDecl,
    c: FunDecl,
    hlt: FunDecl,
    g: FunDecl,
    str: FunDecl,
    vterms: Vec<Term>,
}

impl SymbolicState {
    pub fn st(&self, j: Term, n: Term) -> Term {
        let mut args = self.vterms.clone();
        args.push(j);
        args.push(n);
        self.st.apply(args)
    }

    pub fn c(&self, j: Term) -> Term {
        self.c.apply(vec![j])
    }

    pub fn hlt(&self, j: Term) -> Term {
        self.hlt.apply(vec![j])
    }

    pub fn g(&self, j: Term) -> Term {
        let mut args = self.vterms.clone();
        args.push(j);
        self.g.apply(args)
    }

    pub fn str(&self, j: Term, key: Term) -> Term {
        let mut args = self.vterms.clone();
        args.push(j);
        args.push(key);
        self.str.apply(args)
    }

    /// Top of the stack after `j` steps, offset `k` words down.
    fn top(&self, j: &Term, k: i64) -> Term {
        self.st(j.clone(), self.c(j.clone()).add_i(-(k + 1)))
    }

    pub fn decls(&self) -> [&FunDecl; 5] {
        [&self.st, &self.c, &self.hlt, &self.g, &self.str]
    }
}

/// One encoding instance: word width, input universe and symbol supply.
#[derive(Debug)]
pub struct Encoder {
    width: u32,
    universe: VarUniverse,
    depth: usize,
    fresh: Cell<usize>,
    template: FunDecl,
    nonconst_fns: Vec<(u8, FunDecl)>,
    storage: bool,
}

fn i(j: usize) -> Term {
    Term::int(j as i64)
}

impl Encoder {
    pub fn new(width: u32, depth: usize, universe: VarUniverse) -> Result<Encoder, EncodeError> {
        Width::new(width).ok_or(EncodeError::Width(width))?;
        let word = Sort::BitVec(width);
        let mut fargs = vec![word; universe.len()];
        fargs.push(word);
        let nonconst_fns = universe
            .nonconst
            .iter()
            .map(|(code, _)| {
                let name = format!("f_{}", isa::instr(*code).mnemonic);
                (*code, FunDecl::new(name, fargs.clone(), word))
            })
            .collect();
        Ok(Encoder {
            width,
            depth,
            fresh: Cell::new(0),
            template: FunDecl::new("a", vec![Sort::Int], word),
            nonconst_fns,
            storage: true,
            universe,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Leaves out every storage conjunct. Only sound when no encoded
    /// program reads or writes storage: then a constant storage function
    /// satisfies all of them and nothing else mentions it.
    pub fn without_storage(mut self) -> Encoder {
        self.storage = false;
        self
    }

    pub fn has_storage(&self) -> bool {
        self.storage
    }

    pub fn word(&self) -> Sort {
        Sort::BitVec(self.width)
    }

    pub fn universe(&self) -> &VarUniverse {
        &self.universe
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn fresh(&self, base: &str) -> String {
        let k = self.fresh.get();
        self.fresh.set(k + 1);
        format!("q{base}_{k}")
    }

    fn word_lit(&self, v: U256) -> Term {
        Term::bv(v, self.width)
    }

    fn zero(&self) -> Term {
        self.word_lit(U256::ZERO)
    }

    fn one(&self) -> Term {
        self.word_lit(U256::from(1u8))
    }

    /// `V` as sorted variables.
    pub fn vars(&self) -> Vec<(String, Sort)> {
        self.universe
            .names()
            .into_iter()
            .map(|n| (n, self.word()))
            .collect()
    }

    pub fn vterms(&self) -> Vec<Term> {
        self.vars()
            .into_iter()
            .map(|(n, s)| Term::Var(n, s))
            .collect()
    }

    fn var(&self, name: &str) -> Term {
        Term::var(name, self.word())
    }

    /// The template function `a(j)` for PUSH holes.
    pub fn template(&self) -> &FunDecl {
        &self.template
    }

    pub fn state(&self, prefix: &str) -> SymbolicState {
        let w = self.word();
        let nv = self.universe.len();
        let with = |extra: &[Sort]| {
            let mut v = vec![w; nv];
            v.extend_from_slice(extra);
            v
        };
        SymbolicState {
            prefix: prefix.to_string(),
            st: FunDecl::new(format!("{prefix}_st"), with(&[Sort::Int, Sort::Int]), w),
            c: FunDecl::new(format!("{prefix}_c"), vec![Sort::Int], Sort::Int),
            hlt: FunDecl::new(format!("{prefix}_hlt"), vec![Sort::Int], Sort::Bool),
            g: FunDecl::new(format!("{prefix}_g"), with(&[Sort::Int]), Sort::Int),
            str: FunDecl::new(format!("{prefix}_str"), with(&[Sort::Int, w]), w),
            vterms: self.vterms(),
        }
    }

    /// Declares every function symbol the encoding may mention.
    pub fn declare(&self, script: &mut Script, states: &[&SymbolicState]) {
        for s in states {
            for d in s.decls() {
                if self.storage || d.name != s.str.name {
                    script.declare(d.clone());
                }
            }
        }
        for (_, f) in &self.nonconst_fns {
            script.declare(f.clone());
        }
    }

    /// `g(V,0) = 0 ∧ hlt(0) = ⊥ ∧ c(0) = d ∧ ⋀ st(V,0,ℓ) = x_ℓ`.
    pub fn init_state(&self, s: &SymbolicState) -> Term {
        let mut parts = vec![
            s.g(i(0)).eq(Term::int(0)),
            s.hlt(i(0)).eq(Term::Bool(false)),
            s.c(i(0)).eq(i(self.depth)),
        ];
        for (l, x) in self.universe.stack.iter().enumerate() {
            parts.push(s.st(i(0), i(l)).eq(self.var(x)));
        }
        Term::and(parts)
    }

    /// Argument of the instruction at `t.position` of `states[t.state]`.
    fn touch_key(&self, states: &[&SymbolicState], t: &Touch) -> Term {
        states[t.state].top(&i(t.position), 0)
    }

    fn ite_chain(&self, w: &Term, states: &[&SymbolicState], touches: &[Touch]) -> Term {
        touches.iter().rev().fold(self.zero(), |acc, t| {
            Term::ite(
                w.clone().eq(self.touch_key(states, t)),
                self.var(&t.var),
                acc,
            )
        })
    }

    /// `∀w. str(V,0,w) = ite(w = a_j1, s_1, … w_⊥)` over the storage
    /// touches. `keys` resolves the touch positions to program states.
    pub fn init_storage(&self, s: &SymbolicState, keys: &[&SymbolicState]) -> Term {
        let wn = self.fresh("w");
        let w = self.var(&wn);
        let body = s
            .str(i(0), w.clone())
            .eq(self.ite_chain(&w, keys, &self.universe.storage));
        Term::forall(vec![(wn, self.word())], body)
    }

    /// Defines `f_ι` for every non-constant uninterpreted instruction as an
    /// ite chain over its call sites.
    pub fn init_uninterpreted(&self, keys: &[&SymbolicState]) -> Term {
        let parts = self
            .universe
            .nonconst
            .iter()
            .zip(&self.nonconst_fns)
            .map(|((_, touches), (_, f))| {
                let wn = self.fresh("w");
                let w = self.var(&wn);
                let mut args = self.vterms();
                args.push(w.clone());
                let body = f.apply(args).eq(self.ite_chain(&w, keys, touches));
                Term::forall(vec![(wn, self.word())], body)
            })
            .collect();
        Term::and(parts)
    }

    /// `C(σ, j, ι)`.
    fn gas_cost(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Term {
        match op.gas_rule() {
            GasRule::Fixed(g) => Term::int(g as i64),
            GasRule::Sstore { set, reset } => {
                let key = s.top(j, 0);
                let value = s.top(j, 1);
                let fresh_slot = Term::and(vec![
                    s.str(j.clone(), key).eq(self.zero()),
                    value.eq(self.zero()).not(),
                ]);
                Term::ite(fresh_slot, Term::int(set as i64), Term::int(reset as i64))
            }
        }
    }

    pub fn tau_g(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Term {
        s.g(j.clone().add_i(1))
            .eq(s.g(j.clone()).add(self.gas_cost(op, s, j)))
    }

    pub fn tau_c(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Term {
        s.c(j.clone().add_i(1))
            .eq(s.c(j.clone()).add_i(op.net_stack()))
    }

    pub fn tau_hlt(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Term {
        let ins = op.instruction();
        let after_pop = s.c(j.clone()).add_i(-i64::from(ins.delta));
        s.hlt(j.clone().add_i(1)).eq(Term::or(vec![
            s.hlt(j.clone()),
            after_pop.clone().lt(Term::int(0)),
            after_pop
                .add_i(i64::from(ins.alpha))
                .gt(Term::int(STACK_LIMIT as i64)),
        ]))
    }

    pub fn tau_pres(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Term {
        let ins = op.instruction();
        let nn = self.fresh("n");
        let n = Term::var(&nn, Sort::Int);
        let stack = Term::forall(
            vec![(nn, Sort::Int)],
            n.clone()
                .lt(s.c(j.clone()).add_i(-i64::from(ins.delta)))
                .implies(s.st(j.clone().add_i(1), n.clone()).eq(s.st(j.clone(), n))),
        );
        if op.opcode() == SSTORE || !self.storage {
            return stack;
        }
        let wn = self.fresh("w");
        let w = self.var(&wn);
        let storage = Term::forall(
            vec![(wn, self.word())],
            s.str(j.clone().add_i(1), w.clone()).eq(s.str(j.clone(), w)),
        );
        Term::and(vec![stack, storage])
    }

    /// Instruction-specific effect on the stack (and storage for SSTORE).
    pub fn tau_st(&self, op: &SymOp, s: &SymbolicState, j: &Term) -> Result<Term, EncodeError> {
        let next = j.clone().add_i(1);
        // new top after the step
        let new_top = || s.st(next.clone(), s.c(next.clone()).add_i(-1));
        let a = || s.top(j, 0);
        let b = || s.top(j, 1);
        let code = match op {
            SymOp::Push(arg) => {
                let value = match arg {
                    PushArg::Word(v) => self.word_lit(*v),
                    PushArg::Const(i) => {
                        let name = self
                            .universe
                            .push_consts
                            .get(*i)
                            .ok_or(EncodeError::UnknownConstant(*i))?;
                        self.var(name)
                    }
                    PushArg::Template => self.template.apply(vec![j.clone()]),
                };
                return Ok(s.st(next, s.c(j.clone())).eq(value));
            }
            SymOp::Plain(code) => *code,
        };
        let ins = isa::instr(code);
        use term::Op as T;
        let bin = |op: T| Term::op(op, vec![a(), b()]);
        let flag = |cond: Term| Term::ite(cond, self.one(), self.zero());
        let guarded = |op: T| Term::ite(b().eq(self.zero()), self.zero(), bin(op));
        let result = match code {
            ADD => bin(T::BvAdd),
            SUB => bin(T::BvSub),
            MUL => bin(T::BvMul),
            DIV => guarded(T::BvUdiv),
            SDIV => guarded(T::BvSdiv),
            MOD => guarded(T::BvUrem),
            SMOD => guarded(T::BvSrem),
            LT => flag(bin(T::BvUlt)),
            GT => flag(bin(T::BvUgt)),
            SLT => flag(bin(T::BvSlt)),
            SGT => flag(bin(T::BvSgt)),
            EQ => flag(a().eq(b())),
            ISZERO => flag(a().eq(self.zero())),
            AND => bin(T::BvAnd),
            OR => bin(T::BvOr),
            XOR => bin(T::BvXor),
            NOT => Term::op(T::BvNot, vec![a()]),
            POP => return Ok(Term::Bool(true)),
            SLOAD | SSTORE if !self.storage => {
                return Err(EncodeError::Unencodable(ins.mnemonic.clone()))
            }
            SLOAD => s.str(j.clone(), a()),
            SSTORE => {
                let wn = self.fresh("w");
                let w = self.var(&wn);
                let body = s.str(next, w.clone()).eq(Term::ite(
                    w.clone().eq(a()),
                    b(),
                    s.str(j.clone(), w),
                ));
                return Ok(Term::forall(vec![(wn, self.word())], body));
            }
            _ if ins.dup_index().is_some() => {
                let k = i64::from(ins.dup_index().unwrap());
                // the k consumed words come back unchanged, then the copy
                let mut parts: Vec<Term> = (0..k)
                    .map(|l| {
                        let pos = s.c(j.clone()).add_i(l - k);
                        s.st(next.clone(), pos.clone()).eq(s.st(j.clone(), pos))
                    })
                    .collect();
                parts.push(s.st(next.clone(), s.c(j.clone())).eq(s.top(j, k - 1)));
                return Ok(Term::and(parts));
            }
            _ if ins.swap_index().is_some() => {
                let k = i64::from(ins.swap_index().unwrap());
                let mut parts = vec![
                    s.st(next.clone(), s.c(j.clone()).add_i(-1)).eq(s.top(j, k)),
                    s.st(next.clone(), s.c(j.clone()).add_i(-1 - k))
                        .eq(s.top(j, 0)),
                ];
                for l in 1..k {
                    let pos = s.c(j.clone()).add_i(-1 - l);
                    parts.push(s.st(next.clone(), pos.clone()).eq(s.st(j.clone(), pos)));
                }
                return Ok(Term::and(parts));
            }
            _ => match ins.effect_class {
                EffectClass::ConstUninterpreted => {
                    let (_, name) = self
                        .universe
                        .consts
                        .iter()
                        .find(|(c, _)| *c == code)
                        .ok_or_else(|| {
                            EncodeError::UninterpretedNotInSource(ins.mnemonic.clone())
                        })?;
                    self.var(name)
                }
                EffectClass::NonConstUninterpreted => {
                    let (_, f) = self
                        .nonconst_fns
                        .iter()
                        .find(|(c, _)| *c == code)
                        .ok_or_else(|| {
                            EncodeError::UninterpretedNotInSource(ins.mnemonic.clone())
                        })?;
                    let mut args = self.vterms();
                    args.push(a());
                    f.apply(args)
                }
                _ => return Err(EncodeError::Unencodable(ins.mnemonic.clone())),
            },
        };
        Ok(new_top().eq(result))
    }

    /// `τ(ι, σ, j) = τ_st ∧ τ_c ∧ τ_g ∧ τ_hlt ∧ τ_pres`.
    pub fn encode_instruction(
        &self,
        op: &SymOp,
        s: &SymbolicState,
        j: &Term,
    ) -> Result<Term, EncodeError> {
        if !op.instruction().is_encodable() {
            return Err(EncodeError::Unencodable(op.instruction().mnemonic.clone()));
        }
        Ok(Term::and(vec![
            self.tau_st(op, s, j)?,
            self.tau_c(op, s, j),
            self.tau_g(op, s, j),
            self.tau_hlt(op, s, j),
            self.tau_pres(op, s, j),
        ]))
    }

    /// `τ(p, σ)`: the instructions of `p` at literal positions.
    pub fn encode_program(&self, ops: &[SymOp], s: &SymbolicState) -> Result<Term, EncodeError> {
        let parts = ops
            .iter()
            .enumerate()
            .map(|(j, op)| self.encode_instruction(op, s, &i(j)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Term::and(parts))
    }

    /// `ε(σ1, σ2, j1, j2)`: equal counters, halting flags, stacks and
    /// storage. Gas is deliberately left out.
    pub fn encode_equivalence(
        &self,
        s1: &SymbolicState,
        s2: &SymbolicState,
        j1: &Term,
        j2: &Term,
    ) -> Term {
        let nn = self.fresh("n");
        let n = Term::var(&nn, Sort::Int);
        let mut parts = vec![
            s1.c(j1.clone()).eq(s2.c(j2.clone())),
            s1.hlt(j1.clone()).eq(s2.hlt(j2.clone())),
            Term::forall(
                vec![(nn, Sort::Int)],
                Term::and(vec![
                    n.clone().ge(Term::int(0)),
                    n.clone().lt(s1.c(j1.clone())),
                ])
                .implies(s1.st(j1.clone(), n.clone()).eq(s2.st(j2.clone(), n))),
            ),
        ];
        if self.storage {
            let wn = self.fresh("w");
            let w = self.var(&wn);
            parts.push(Term::forall(
                vec![(wn, self.word())],
                s1.str(j1.clone(), w.clone()).eq(s2.str(j2.clone(), w)),
            ));
        }
        Term::and(parts)
    }

    /// Shared setup for a source state and a target state: both states
    /// start from the same inputs, storage and uninterpreted functions are
    /// seeded from the touches in `V`.
    pub fn init_pair(&self, src: &SymbolicState, tgt: &SymbolicState) -> Term {
        let keys = [src, tgt];
        let mut parts = vec![self.init_state(src), self.init_state(tgt)];
        if self.storage {
            parts.push(self.init_storage(src, &keys));
            parts.push(self.init_storage(tgt, &keys));
        }
        parts.push(self.init_uninterpreted(&keys));
        Term::and(parts)
    }
}

/// Candidate set and positions of an EncodeBso query.
#[derive(Clone, Debug)]
pub struct BsoFormula {
    pub script: Script,
    pub candidates: Vec<SymOp>,
    /// Position variable `j_ℓ` of each candidate.
    pub positions: Vec<Term>,
    /// `a(j_ℓ)` for each candidate (meaningful for templated PUSH only).
    pub push_args: Vec<Term>,
}

/// Builds the basic-superoptimization query for a fixed candidate multiset:
/// the candidates, placed at pairwise distinct positions `0..n`, must form a
/// program equivalent to the source for every input.
pub fn encode_bso(
    source: &AbstractBlock,
    candidates: &[SymOp],
    width: u32,
) -> Result<BsoFormula, EncodeError> {
    let universe = VarUniverse::new(source.depth(), &[&source.ops], source.constants.len());
    let mut enc = Encoder::new(width, source.depth(), universe)?;
    if !touches_storage(&source.ops) && !touches_storage(candidates) {
        enc = enc.without_storage();
    }
    let src = enc.state("s");
    let tgt = enc.state("t");
    let mut script = Script::default();
    enc.declare(&mut script, &[&src, &tgt]);
    script.declare(enc.template().clone());

    let n = candidates.len();
    let positions: Vec<Term> = (0..n)
        .map(|l| Term::var(format!("j_{l}"), Sort::Int))
        .collect();
    for l in 0..n {
        script.declare(FunDecl::new(format!("j_{l}"), vec![], Sort::Int));
    }

    let mut body = vec![
        enc.init_pair(&src, &tgt),
        enc.encode_program(&source.ops, &src)?,
        enc.encode_equivalence(&src, &tgt, &i(0), &i(0)),
    ];
    for (op, j) in candidates.iter().zip(&positions) {
        body.push(enc.encode_instruction(op, &tgt, j)?);
    }
    body.push(enc.encode_equivalence(&src, &tgt, &i(source.len()), &i(n)));
    script.assert_forall(&enc.vars(), Term::and(body));

    let mut order = vec![Term::distinct(positions.clone())];
    for j in &positions {
        order.push(j.clone().ge(Term::int(0)));
        order.push(j.clone().lt(i(n)));
    }
    script.assert(Term::and(order));

    let push_args = positions
        .iter()
        .map(|j| enc.template().apply(vec![j.clone()]))
        .collect();
    Ok(BsoFormula {
        script,
        candidates: candidates.to_vec(),
        positions,
        push_args,
    })
}

/// An EncodeUso query; grows by [`tighten_bound`].
#[derive(Debug)]
pub struct UsoFormula {
    /// The query with the length `n` left to the solver.
    pub script: Script,
    /// Candidate instructions; `instr(j) = k` selects `ci[k]`.
    pub ci: Vec<SymOp>,
    enc: Encoder,
    src: SymbolicState,
    tgt: SymbolicState,
    source_len: usize,
    /// Conjuncts under `∀V` that do not mention the target length.
    fixed: Vec<Term>,
    bounds: Vec<Gas>,
    instr: FunDecl,
}

fn touches_storage(ops: &[SymOp]) -> bool {
    ops.iter().any(|op| matches!(op.opcode(), SLOAD | SSTORE))
}

impl UsoFormula {
    pub fn length(&self) -> Term {
        Term::var("n", Sort::Int)
    }

    pub fn instr_at(&self, j: usize) -> Term {
        self.instr.apply(vec![i(j)])
    }

    pub fn push_arg_at(&self, j: usize) -> Term {
        self.enc.template().apply(vec![i(j)])
    }

    pub fn bounds(&self) -> &[Gas] {
        &self.bounds
    }

    /// `ρ` restricted to step `j`: the chosen candidate's effect.
    fn step(&self, j: &Term) -> Result<Term, EncodeError> {
        let mut choices = Vec::with_capacity(self.ci.len());
        let mut effects = Vec::with_capacity(self.ci.len() + 1);
        for (k, op) in self.ci.iter().enumerate() {
            let chosen = self.instr.apply(vec![j.clone()]).eq(i(k));
            for part in self.enc.encode_instruction(op, &self.tgt, j)?.conjuncts() {
                effects.push(chosen.clone().implies(part));
            }
            choices.push(chosen);
        }
        effects.push(Term::or(choices));
        Ok(Term::and(effects))
    }

    /// The conjuncts that mention the length, for a length term `n` and
    /// the matching `ρ`.
    fn length_part(&self, n: &Term, rho: Term) -> Term {
        let plen = i(self.source_len);
        Term::and(vec![
            rho,
            self.enc.encode_equivalence(&self.src, &self.tgt, &plen, n),
            self.src.g(plen.clone()).gt(self.tgt.g(n.clone())),
        ])
    }

    fn assemble(&self, n: &Term, rho: Term, extra: Vec<Term>) -> Script {
        let mut script = Script::default();
        for d in self.script.decls() {
            script.declare(d.clone());
        }
        let mut body = self.fixed.clone();
        body.push(self.length_part(n, rho));
        script.assert_forall(&self.enc.vars(), Term::and(body));
        for &b in &self.bounds {
            script.assert_forall(
                &self.enc.vars(),
                self.tgt.g(n.clone()).lt(Term::int(b as i64)),
            );
        }
        for t in extra {
            script.assert(t);
        }
        script
    }

    /// The query restricted to targets of exactly `len` instructions. With
    /// the length fixed, `ρ` ranges over the literal steps `0..len` instead
    /// of a quantified step.
    pub fn with_length(&self, len: usize) -> Script {
        let rho = (0..len)
            .map(|j| self.step(&i(j)))
            .collect::<Result<Vec<_>, _>>()
            .expect("candidates were encodable when the formula was built");
        let n = self.length();
        self.assemble(&i(len), Term::and(rho), vec![n.eq(i(len))])
    }

    /// Terms whose values decode a target of length `len`.
    pub fn decode_queries(&self, len: usize) -> Vec<Term> {
        let mut q = vec![self.length()];
        for j in 0..len {
            q.push(self.instr_at(j));
            q.push(self.push_arg_at(j));
        }
        q
    }
}

/// Builds the unbounded-superoptimization query: some program of length `n`
/// over `ci` is equivalent to the source and strictly cheaper for every input.
/// `n` is bounded by the source's static maximal gas.
pub fn encode_uso(
    source: &AbstractBlock,
    ci: &[SymOp],
    width: u32,
) -> Result<UsoFormula, EncodeError> {
    let mut universe = VarUniverse::new(source.depth(), &[&source.ops], source.constants.len());
    for op in ci {
        let ins = op.instruction();
        match ins.effect_class {
            EffectClass::NonConstUninterpreted
                if !universe.nonconst.iter().any(|(c, _)| *c == ins.opcode) =>
            {
                return Err(EncodeError::UninterpretedNotInSource(ins.mnemonic.clone()))
            }
            EffectClass::ConstUninterpreted => universe.add_const(op.opcode()),
            _ => {}
        }
    }
    let mut enc = Encoder::new(width, source.depth(), universe)?;
    if !touches_storage(&source.ops) && !touches_storage(ci) {
        enc = enc.without_storage();
    }
    let src = enc.state("s");
    let tgt = enc.state("t");
    let mut decls = Script::default();
    enc.declare(&mut decls, &[&src, &tgt]);
    decls.declare(enc.template().clone());
    let instr = FunDecl::new("instr", vec![Sort::Int], Sort::Int);
    decls.declare(instr.clone());
    decls.declare(FunDecl::new("n", vec![], Sort::Int));

    let fixed = vec![
        enc.init_pair(&src, &tgt),
        enc.encode_program(&source.ops, &src)?,
        enc.encode_equivalence(&src, &tgt, &i(0), &i(0)),
    ];
    let mut f = UsoFormula {
        script: decls,
        ci: ci.to_vec(),
        enc,
        src,
        tgt,
        source_len: source.len(),
        fixed,
        bounds: Vec::new(),
        instr,
    };

    // ρ(σ', n) over a quantified step
    let n = f.length();
    let jn = f.enc.fresh("j");
    let j = Term::var(&jn, Sort::Int);
    let rho = Term::forall(
        vec![(jn, Sort::Int)],
        Term::and(vec![j.clone().ge(Term::int(0)), j.clone().lt(n.clone())]).implies(f.step(&j)?),
    );
    let max_gas: Gas = source.ops.iter().map(|op| op.gas_rule().max()).sum();
    let range = Term::and(vec![
        n.clone().ge(Term::int(0)),
        n.clone().le(Term::int(max_gas as i64)),
    ]);
    f.script = f.assemble(&n, rho, vec![range]);
    Ok(f)
}

/// Requires the next target to cost strictly less than `target_gas` for
/// every input.
pub fn tighten_bound(f: &mut UsoFormula, target_gas: Gas) {
    let bound = f.tgt.g(f.length()).lt(Term::int(target_gas as i64));
    f.script.assert_forall(&f.enc.vars(), bound);
    f.bounds.push(target_gas);
}

/// Translation-validation query at `width`: some input makes the two blocks
/// start equal and end different. Unsatisfiable means equivalent.
///
/// Storage and uninterpreted call sites of both programs seed the
/// initialization, so neither program can read an unconstrained default.
#[derive(Clone, Debug)]
pub struct ValidationFormula {
    pub script: Script,
    /// The declared input constants (the witness on Sat).
    pub inputs: Vec<Term>,
}

pub fn encode_validation(
    p: &Block,
    q: &Block,
    width: u32,
) -> Result<ValidationFormula, EncodeError> {
    let pa = AbstractBlock::concrete(p);
    let qa = AbstractBlock::concrete(q);
    let mut universe = VarUniverse::new(pa.depth(), &[&pa.ops, &qa.ops], 0);
    for op in &qa.ops {
        if op.instruction().effect_class == EffectClass::ConstUninterpreted {
            universe.add_const(op.opcode());
        }
    }
    let mut enc = Encoder::new(width, pa.depth(), universe)?;
    if !touches_storage(&pa.ops) && !touches_storage(&qa.ops) {
        enc = enc.without_storage();
    }
    let src = enc.state("s");
    let tgt = enc.state("t");
    let mut script = Script::default();
    for (name, sort) in enc.vars() {
        script.declare(FunDecl::new(name, vec![], sort));
    }
    enc.declare(&mut script, &[&src, &tgt]);
    script.assert(Term::and(vec![
        enc.init_pair(&src, &tgt),
        enc.encode_program(&pa.ops, &src)?,
        enc.encode_program(&qa.ops, &tgt)?,
        enc.encode_equivalence(&src, &tgt, &i(0), &i(0)),
        enc.encode_equivalence(&src, &tgt, &i(pa.len()), &i(qa.len()))
            .not(),
    ]));
    Ok(ValidationFormula {
        script,
        inputs: enc.vterms(),
    })
}
