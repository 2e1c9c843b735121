//! Exhaustive search for optimal programs over a tiny instruction set.

use thiserror::Error;

use crate::bytecode::{program_depth, Block, Op};
use crate::isa::{self, Gas};
use crate::word::{Width, U256};

use super::interp::{interpret_at, ConcreteState};

/// Non-PUSH members of the micro instruction set used by the optimality tests.
pub const MICRO_ISA_MNEMONICS: [&str; 5] = ["POP", "ADD", "SUB", "DUP1", "SWAP1"];

/// Largest number of candidate programs or input vectors examined.
const MAX_PROGRAMS: usize = 500_000;
const MAX_INPUTS: usize = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BruteForceError {
    #[error("more than {MAX_PROGRAMS} candidate programs; shrink the instance")]
    TooManyPrograms,
    #[error("{0} input vectors exceed the search budget; shrink the instance")]
    TooManyInputs(u128),
    #[error("no program over the given instructions within the gas cap is equivalent")]
    NotFound,
}

/// `PUSH 0..=3` followed by the micro set.
pub fn micro_isa() -> Vec<Op> {
    let mut ops: Vec<Op> = (0..4).map(Op::push_u64).collect();
    ops.extend(MICRO_ISA_MNEMONICS.iter().map(|m| {
        Op::Plain(
            isa::table()
                .by_mnemonic(m)
                .expect("micro instruction")
                .opcode,
        )
    }));
    ops
}

/// Cheapest program over `ops` equivalent to `p` on every input stack of
/// `δ̂(p)` words of `w` bits. Ties go to the shorter program, then to the
/// lexicographically smaller one (by position in `ops`).
pub fn brute_force_optimum(
    p: &Block,
    ops: &[Op],
    w: Width,
    gas_cap: Gas,
) -> Result<Block, BruteForceError> {
    let costs: Vec<Gas> = ops
        .iter()
        .map(|op| isa::op_gas(op).map(|g| g.max()).unwrap_or(Gas::MAX))
        .collect();

    let mut programs: Vec<(Gas, Vec<usize>)> = vec![(0, Vec::new())];
    let mut frontier = vec![(0, Vec::new())];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (gas, prog) in &frontier {
            for (i, &c) in costs.iter().enumerate() {
                let g = gas + c;
                if c == Gas::MAX || g > gas_cap {
                    continue;
                }
                let mut q: Vec<usize> = prog.clone();
                q.push(i);
                next.push((g, q));
            }
        }
        programs.extend(next.iter().cloned());
        if programs.len() > MAX_PROGRAMS {
            return Err(BruteForceError::TooManyPrograms);
        }
        frontier = next;
    }
    programs.sort_by(|(ga, a), (gb, b)| ga.cmp(gb).then(a.len().cmp(&b.len())).then(a.cmp(b)));

    let depth = program_depth(p);
    let inputs = input_stacks(depth, w)?;
    let expected: Vec<ConcreteState> = inputs.iter().map(|s| interpret_at(p, s, w)).collect();
    for (_, prog) in programs {
        let block =
            Block::new(prog.iter().map(|&i| ops[i].clone()).collect()).expect("encodable ops");
        let equal = inputs
            .iter()
            .zip(&expected)
            .all(|(init, want)| interpret_at(&block, init, w).same_outcome(want));
        if equal {
            return Ok(block);
        }
    }
    Err(BruteForceError::NotFound)
}

fn input_stacks(depth: usize, w: Width) -> Result<Vec<ConcreteState>, BruteForceError> {
    let total = 1u128
        .checked_shl(w.bits() * depth as u32)
        .unwrap_or(u128::MAX);
    if total > MAX_INPUTS as u128 {
        return Err(BruteForceError::TooManyInputs(total));
    }
    let base = 1u64 << w.bits();
    Ok((0..total as u64)
        .map(|mut code| {
            let stack = (0..depth)
                .map(|_| {
                    let v = code % base;
                    code /= base;
                    U256::from(v)
                })
                .collect();
            ConcreteState::new(stack)
        })
        .collect())
}
