//! Concrete interpreter for the encodable instruction subset.

use std::collections::BTreeMap;

use crate::bytecode::{Block, Op};
use crate::isa::{self, opcodes::*, EffectClass, Gas, GasRule, STACK_LIMIT};
use crate::word::{self, Width, U256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Halt {
    Running,
    ExceptionalHalt,
}

/// The fixed environment seen by uninterpreted instructions. Missing
/// entries read as zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Oracle {
    /// Result of each constant uninterpreted instruction.
    pub consts: BTreeMap<u8, U256>,
    /// Argument-to-result table of each non-constant uninterpreted instruction.
    pub tables: BTreeMap<u8, BTreeMap<U256, U256>>,
}

impl Oracle {
    pub fn constant(&self, opcode: u8) -> U256 {
        self.consts.get(&opcode).copied().unwrap_or(U256::ZERO)
    }

    pub fn call(&self, opcode: u8, arg: U256) -> U256 {
        self.tables
            .get(&opcode)
            .and_then(|t| t.get(&arg))
            .copied()
            .unwrap_or(U256::ZERO)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteState {
    /// Top of the stack is the last element.
    pub stack: Vec<U256>,
    /// Absent keys hold zero.
    pub storage: BTreeMap<U256, U256>,
    pub gas_used: Gas,
    pub halted: Halt,
    pub oracle: Oracle,
}

impl ConcreteState {
    pub fn new(stack: Vec<U256>) -> ConcreteState {
        ConcreteState {
            stack,
            storage: BTreeMap::new(),
            gas_used: 0,
            halted: Halt::Running,
            oracle: Oracle::default(),
        }
    }

    pub fn load(&self, key: U256) -> U256 {
        self.storage.get(&key).copied().unwrap_or(U256::ZERO)
    }

    /// Storage with zero-valued entries dropped, for comparisons.
    pub fn normalized_storage(&self) -> BTreeMap<U256, U256> {
        self.storage
            .iter()
            .filter(|(_, v)| **v != U256::ZERO)
            .map(|(k, v)| (*k, *v))
            .collect()
    }

    /// Observable equality: stack, storage and halting, never gas. Two
    /// halted states are equal.
    pub fn same_outcome(&self, other: &ConcreteState) -> bool {
        match (self.halted, other.halted) {
            (Halt::ExceptionalHalt, Halt::ExceptionalHalt) => true,
            (Halt::Running, Halt::Running) => {
                self.stack == other.stack && self.normalized_storage() == other.normalized_storage()
            }
            _ => false,
        }
    }
}

/// Keys an execution looked up, per kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Touched {
    pub storage: Vec<U256>,
    pub calls: Vec<(u8, U256)>,
    pub consts: Vec<u8>,
}

/// Runs `p` at full width.
pub fn interpret(p: &Block, init: &ConcreteState) -> ConcreteState {
    interpret_at(p, init, Width::FULL)
}

/// Runs `p` with words truncated to `w` bits.
pub fn interpret_at(p: &Block, init: &ConcreteState, w: Width) -> ConcreteState {
    run(p, init, w).0
}

pub(crate) fn run(p: &Block, init: &ConcreteState, w: Width) -> (ConcreteState, Touched) {
    let mut s = init.clone();
    let mut touched = Touched::default();
    for op in p.ops() {
        if s.halted == Halt::ExceptionalHalt {
            break;
        }
        step(&mut s, op, w, &mut touched);
    }
    (s, touched)
}

fn step(s: &mut ConcreteState, op: &Op, w: Width, touched: &mut Touched) {
    let ins = op.instruction();
    let delta = ins.delta as usize;
    let alpha = ins.alpha as usize;
    if s.stack.len() < delta || (s.stack.len() - delta + alpha) as u64 > STACK_LIMIT {
        s.halted = Halt::ExceptionalHalt;
        return;
    }
    let top = |k: usize| s.stack[s.stack.len() - 1 - k];
    let cost = match ins.gas_rule.expect("encodable instruction") {
        GasRule::Fixed(g) => g,
        GasRule::Sstore { set, reset } => {
            let (key, value) = (top(0), top(1));
            if s.load(key) == U256::ZERO && value != U256::ZERO {
                set
            } else {
                reset
            }
        }
    };
    s.gas_used += cost;
    let n = s.stack.len();
    match *op {
        Op::Push { value, .. } => s.stack.push(w.truncate(value)),
        Op::Plain(code) => {
            if let Some(k) = ins.dup_index() {
                s.stack.push(s.stack[n - k as usize]);
            } else if let Some(k) = ins.swap_index() {
                s.stack.swap(n - 1, n - 1 - k as usize);
            } else if code == POP {
                s.stack.pop();
            } else if code == SLOAD {
                let key = s.stack.pop().unwrap();
                touched.storage.push(key);
                s.stack.push(s.load(key));
            } else if code == SSTORE {
                let key = s.stack.pop().unwrap();
                let value = s.stack.pop().unwrap();
                touched.storage.push(key);
                s.storage.insert(key, value);
            } else if ins.effect_class == EffectClass::ConstUninterpreted {
                touched.consts.push(code);
                s.stack.push(w.truncate(s.oracle.constant(code)));
            } else if ins.effect_class == EffectClass::NonConstUninterpreted {
                let arg = s.stack.pop().unwrap();
                touched.calls.push((code, arg));
                s.stack.push(w.truncate(s.oracle.call(code, arg)));
            } else {
                let a = s.stack.pop().unwrap();
                let b = if delta == 2 {
                    s.stack.pop().unwrap()
                } else {
                    U256::ZERO
                };
                let r = word::apply(code, a, b, w).unwrap_or_else(|| {
                    panic!("no concrete semantics for {}", isa::instr(code).mnemonic)
                });
                s.stack.push(r);
            }
        }
    }
}
