//! Property checks over random blocks, shared by the invariant and
//! acceptance targets. The solver-backed checks send one query per case.

#![allow(dead_code)]

use std::time::Duration;

use evmsopt_core::bytecode::{assemble, disassemble, program_depth, Segment};
use evmsopt_core::encoder::{
    AbstractBlock, Encoder, FunDecl, Script, SymbolicState, Term, VarUniverse,
};
use evmsopt_core::isa::{self, opcodes::*, static_gas};
use evmsopt_core::solverio::{Solver, SolverConfig, SolverVerdict, Status};
use evmsopt_core::validate::{interpret, interpret_at, ConcreteState, Halt};
use evmsopt_core::{Block, Op, Width, U256};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const CASES: u32 = 1000;

const T: Duration = Duration::from_secs(60);

fn encodable() -> Vec<u8> {
    isa::table()
        .iter()
        .filter(|i| i.is_encodable() && i.push_width.is_none())
        .map(|i| i.opcode)
        .collect()
}

fn op_strategy(max_push: u64) -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (0..=max_push).prop_map(Op::push_u64),
        3 => proptest::sample::select(encodable()).prop_map(Op::Plain),
    ]
}

fn block_strategy(max_len: usize, max_push: u64) -> impl Strategy<Value = Block> {
    prop::collection::vec(op_strategy(max_push), 0..=max_len)
        .prop_map(|ops| Block::new(ops).unwrap())
}

fn word() -> impl Strategy<Value = U256> {
    prop_oneof![
        Just(U256::ZERO),
        Just(U256::MAX),
        any::<[u64; 4]>().prop_map(U256::from_limbs),
    ]
}

fn touches_storage(p: &AbstractBlock) -> bool {
    p.ops.iter().any(|op| matches!(op.opcode(), SLOAD | SSTORE))
}

/// Encoder for `p` with `V` declared as free constants, so unsat means
/// valid for every `V`.
fn setup(
    p: &AbstractBlock,
    width: u32,
    prefixes: &[&str],
) -> (Encoder, Vec<SymbolicState>, Script) {
    let mut enc =
        Encoder::new(width, p.depth(), VarUniverse::new(p.depth(), &[&p.ops], 0)).unwrap();
    if !touches_storage(p) {
        enc = enc.without_storage();
    }
    let states: Vec<SymbolicState> = prefixes.iter().map(|x| enc.state(x)).collect();
    let mut script = Script::default();
    for (name, sort) in enc.vars() {
        script.declare(FunDecl::new(name, vec![], sort));
    }
    enc.declare(&mut script, &states.iter().collect::<Vec<_>>());
    (enc, states, script)
}

fn solve(script: &Script, queries: &[Term]) -> SolverVerdict {
    Solver::new(SolverConfig::default()).check(script, queries, T)
}

fn steps(p: &Block) -> impl Iterator<Item = (Term, Term)> {
    (0..p.len()).map(|j| (Term::int(j as i64), Term::int(j as i64 + 1)))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub fn halting_is_monotone_in_the_encoding(cases: u32) -> Result<(), String> {
    run(cases, block_strategy(5, 15), |p| {
        let a = AbstractBlock::concrete(&p);
        let (enc, s, mut script) = setup(&a, 4, &["s"]);
        script.assert(enc.encode_program(&a.ops, &s[0]).unwrap());
        let broken = steps(&p)
            .map(|(j, k)| Term::and(vec![s[0].hlt(j), s[0].hlt(k).not()]))
            .collect();
        script.assert(Term::or(broken));
        prop_assert_eq!(solve(&script, &[]).status, Status::Unsat);
        Ok(())
    })
}

pub fn halting_is_monotone_in_the_interpreter(cases: u32) -> Result<(), String> {
    run(
        cases,
        (block_strategy(8, 3), block_strategy(4, 3), 0usize..4),
        |(p, q, d)| {
            let init = ConcreteState::new(vec![U256::from(1u8); d]);
            let first = interpret(&p, &init);
            if first.halted == Halt::ExceptionalHalt {
                let both = interpret(&p.concat(&q), &init);
                prop_assert_eq!(both.halted, Halt::ExceptionalHalt);
                prop_assert_eq!(both.gas_used, first.gas_used);
            }
            Ok(())
        },
    )
}

pub fn gas_grows_with_every_instruction(cases: u32) -> Result<(), String> {
    run(cases, block_strategy(5, 15), |p| {
        let a = AbstractBlock::concrete(&p);
        let (enc, s, mut script) = setup(&a, 4, &["s"]);
        script.assert(enc.encode_program(&a.ops, &s[0]).unwrap());
        let broken = steps(&p).map(|(j, k)| s[0].g(k).le(s[0].g(j))).collect();
        script.assert(Term::or(broken));
        prop_assert_eq!(solve(&script, &[]).status, Status::Unsat);
        Ok(())
    })
}

pub fn interpreter_gas_is_positive(cases: u32) -> Result<(), String> {
    run(
        cases,
        (block_strategy(8, 3), prop::collection::vec(word(), 16)),
        |(p, stack)| {
            let mut before = ConcreteState::new(stack);
            for op in p.ops() {
                let after = interpret(&Block::new(vec![op.clone()]).unwrap(), &before);
                if after.halted == Halt::ExceptionalHalt {
                    break;
                }
                prop_assert!(after.gas_used > before.gas_used);
                before = after;
            }
            Ok(())
        },
    )
}

pub fn equivalence_is_reflexive(cases: u32) -> Result<(), String> {
    run(cases, (block_strategy(5, 15), 0usize..=5), |(p, j)| {
        let a = AbstractBlock::concrete(&p);
        let j = Term::int(j.min(p.len()) as i64);
        let (enc, s, mut script) = setup(&a, 4, &["s", "t"]);
        script.assert(Term::and(vec![
            enc.init_pair(&s[0], &s[1]),
            enc.encode_program(&a.ops, &s[0]).unwrap(),
            enc.encode_program(&a.ops, &s[1]).unwrap(),
        ]));
        script.assert(
            Term::and(vec![
                enc.encode_equivalence(&s[0], &s[0], &j, &j),
                enc.encode_equivalence(&s[0], &s[1], &j, &j),
            ])
            .not(),
        );
        prop_assert_eq!(solve(&script, &[]).status, Status::Unsat);
        Ok(())
    })
}

pub fn disassembly_round_trips(cases: u32) -> Result<(), String> {
    run(cases, prop::collection::vec(any::<u8>(), 0..64), |bytes| {
        let prog = disassemble(&bytes);
        let out = assemble(&prog);
        prop_assert!(out.starts_with(&bytes));
        prop_assert!(out[bytes.len()..].iter().all(|&b| b == 0));
        let again = disassemble(&out);
        let blocks =
            |p: &evmsopt_core::Program| p.blocks().map(|(i, b)| (i, b.clone())).collect::<Vec<_>>();
        prop_assert_eq!(blocks(&again), blocks(&prog));
        for seg in prog.segments() {
            if let Segment::Block { block, .. } = seg {
                let normalized = Block::new(
                    block
                        .ops()
                        .iter()
                        .map(|op| match op {
                            Op::Push { value, .. } => Op::push(*value),
                            other => other.clone(),
                        })
                        .collect(),
                )
                .unwrap();
                let bytes = normalized.to_bytes();
                let back = disassemble(&bytes);
                prop_assert_eq!(back.segments().len(), usize::from(!bytes.is_empty()));
                if let Some(b) = back.segments().first().and_then(|s| s.as_block()) {
                    prop_assert_eq!(b, block);
                }
            }
        }
        Ok(())
    })
}

pub fn depth_is_tight(cases: u32) -> Result<(), String> {
    run(cases, block_strategy(8, 3), |p| {
        let d = program_depth(&p);
        let enough = interpret(&p, &ConcreteState::new(vec![U256::from(7u8); d]));
        prop_assert_eq!(enough.halted, Halt::Running);
        if d > 0 {
            let short = interpret(&p, &ConcreteState::new(vec![U256::from(7u8); d - 1]));
            prop_assert_eq!(short.halted, Halt::ExceptionalHalt);
        }
        Ok(())
    })
}

pub fn static_gas_adds_up(cases: u32) -> Result<(), String> {
    run(
        cases,
        (block_strategy(6, 3), block_strategy(6, 3)),
        |(p, q)| {
            let (a, b) = (static_gas(&p).unwrap(), static_gas(&q).unwrap());
            prop_assert_eq!(static_gas(&p.concat(&q)).unwrap(), (a.0 + b.0, a.1 + b.1));
            Ok(())
        },
    )
}

/// With every input fixed, the encoding admits exactly the interpreter's
/// final state.
pub fn encoding_agrees_with_interpreter(cases: u32) -> Result<(), String> {
    let inputs = (
        block_strategy(5, 15),
        prop::collection::vec(0u64..16, 96),
        prop::collection::vec(0u64..16, 8),
    );
    run(cases, inputs, |(p, stack, consts)| {
        let k = Width::new(4).unwrap();
        let a = AbstractBlock::concrete(&p);
        let depth = a.depth();
        let (enc, s, mut script) = setup(&a, 4, &["s"]);
        let s = &s[0];

        let mut init = ConcreteState::new(stack[..depth].iter().map(|&v| U256::from(v)).collect());
        let mut pins = Vec::new();
        for (name, sort) in enc.vars() {
            let v = if let Some(l) = name.strip_prefix("x_") {
                stack[l.parse::<usize>().unwrap()]
            } else if let Some(m) = name.strip_prefix("u_").filter(|m| !m.contains('_')) {
                let code = isa::table().by_mnemonic(m).unwrap().opcode;
                let v = consts[code as usize % consts.len()];
                init.oracle.consts.insert(code, U256::from(v));
                v
            } else {
                0
            };
            pins.push(Term::var(name, sort).eq(Term::bv_u64(v, 4)));
        }
        let mut parts = vec![
            enc.init_state(s),
            enc.init_uninterpreted(&[s]),
            enc.encode_program(&a.ops, s).unwrap(),
        ];
        if enc.has_storage() {
            parts.push(enc.init_storage(s, &[s]));
        }
        parts.extend(pins);
        script.assert(Term::and(parts));

        let want = interpret_at(&p, &init, k);
        let end = Term::int(p.len() as i64);
        let mut queries = vec![s.hlt(end.clone()), s.c(end.clone()), s.g(end.clone())];
        queries.extend((0..want.stack.len()).map(|n| s.st(end.clone(), Term::int(n as i64))));
        let keys: Vec<U256> = want.storage.keys().copied().collect();
        if enc.has_storage() {
            queries.extend(keys.iter().map(|key| s.str(end.clone(), Term::bv(*key, 4))));
        }
        let v = solve(&script, &queries);
        prop_assert_eq!(v.status, Status::Sat);
        let m = v.model.unwrap();
        let get = |t: &Term| m.get(t).unwrap().clone();

        let halted = want.halted == Halt::ExceptionalHalt;
        prop_assert_eq!(get(&queries[0]).as_bool(), Some(halted));
        if !halted {
            prop_assert_eq!(get(&queries[1]).as_int(), Some(want.stack.len() as i64));
            prop_assert_eq!(get(&queries[2]).as_int(), Some(want.gas_used as i64));
            for (n, w) in want.stack.iter().enumerate() {
                prop_assert_eq!(get(&queries[3 + n]).as_word(), Some(*w));
            }
            if enc.has_storage() {
                for (i, key) in keys.iter().enumerate() {
                    prop_assert_eq!(
                        get(&queries[3 + want.stack.len() + i]).as_word(),
                        Some(want.storage[key])
                    );
                }
            }
        }
        Ok(())
    })
}
