//! Certification of candidate optimizations.
//!
//! [`translation_validate`] proves equivalence of two blocks at full word
//! width with the solver. [`random_validate`] runs both blocks through the
//! concrete interpreter on pseudo-random inputs, and [`brute_force_optimum`]
//! finds optimal programs over tiny instruction sets by exhaustive search.

mod brute;
mod interp;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bytecode::{program_depth, Block, Op};
use crate::encoder::{encode_validation, EncodeError};
use crate::isa::{self, EffectClass};
use crate::solverio::{Solver, Status};
use crate::word::{Width, U256};

pub use brute::{brute_force_optimum, micro_isa, BruteForceError, MICRO_ISA_MNEMONICS};
pub use interp::{interpret, interpret_at, ConcreteState, Halt, Oracle, Touched};

/// Outcome of a translation validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Equivalent,
    /// Input values under which the blocks differ.
    Counterexample(Vec<(String, U256)>),
    /// The solver gave no answer; not a proof either way.
    Indeterminate(String),
}

impl Validation {
    pub fn is_equivalent(&self) -> bool {
        *self == Validation::Equivalent
    }
}

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Validation::Equivalent => write!(f, "equivalent"),
            Validation::Counterexample(vals) => {
                write!(f, "counterexample:")?;
                for (n, v) in vals {
                    write!(f, " {n}={v:#x}")?;
                }
                Ok(())
            }
            Validation::Indeterminate(why) => write!(f, "indeterminate ({why})"),
        }
    }
}

/// Checks `p ≡ q` at full width.
pub fn translation_validate(
    p: &Block,
    q: &Block,
    solver: &Solver,
    timeout: Duration,
) -> Validation {
    translation_validate_at(p, q, 256, solver, timeout)
}

/// Checks `p ≡ q` with words of `width` bits. Only full width is a proof
/// of equivalence on the EVM.
pub fn translation_validate_at(
    p: &Block,
    q: &Block,
    width: u32,
    solver: &Solver,
    timeout: Duration,
) -> Validation {
    let f = match encode_validation(p, q, width) {
        Ok(f) => f,
        Err(EncodeError::UninterpretedNotInSource(m)) | Err(EncodeError::Unencodable(m)) => {
            return Validation::Indeterminate(format!("cannot encode {m}"))
        }
        Err(e) => return Validation::Indeterminate(e.to_string()),
    };
    let verdict = solver.check(&f.script, &f.inputs, timeout);
    match verdict.status {
        Status::Unsat => Validation::Equivalent,
        Status::Sat => {
            let model = verdict.model.unwrap_or_default();
            let witness = model
                .entries()
                .iter()
                .map(|(t, v)| {
                    let name = match t {
                        crate::encoder::Term::Var(n, _) => n.clone(),
                        other => other.to_string(),
                    };
                    (name, v.as_word().unwrap_or(U256::ZERO))
                })
                .collect();
            Validation::Counterexample(witness)
        }
        Status::Unknown => Validation::Indeterminate("solver returned unknown".into()),
        Status::Timeout => Validation::Indeterminate("solver timed out".into()),
        Status::SolverError(e) => Validation::Indeterminate(e),
    }
}

/// A failing random trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub stack: Vec<String>,
    pub storage: Vec<(String, String)>,
}

/// Compares `p` and `q` on `trials` seeded pseudo-random inputs.
pub fn random_validate(p: &Block, q: &Block, trials: usize, seed: u64) -> Result<(), TrialFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = program_depth(p).max(program_depth(q));
    for trial in 0..trials {
        let init = random_input(p, q, depth, &mut rng);
        let a = interpret(p, &init);
        let b = interpret(q, &init);
        if !a.same_outcome(&b) {
            return Err(TrialFailure {
                trial,
                stack: init.stack.iter().map(|v| format!("{v:#x}")).collect(),
                storage: init
                    .storage
                    .iter()
                    .map(|(k, v)| (format!("{k:#x}"), format!("{v:#x}")))
                    .collect(),
            });
        }
    }
    Ok(())
}

/// One word, 25% of the time from a fixed set of boundary values.
pub fn random_word<R: Rng>(rng: &mut R) -> U256 {
    if rng.gen_range(0..4) == 0 {
        let edges = [
            U256::ZERO,
            U256::from(1u8),
            U256::from(1u8) << 255,
            U256::MAX,
        ];
        edges[rng.gen_range(0..edges.len())]
    } else {
        U256::from_limbs(rng.gen())
    }
}

/// Random stack, plus storage and oracle entries for every key the two
/// blocks look up. Keys can depend on loaded values, so the lookup is
/// repeated until no new key shows up.
fn random_input<R: Rng>(p: &Block, q: &Block, depth: usize, rng: &mut R) -> ConcreteState {
    let mut init = ConcreteState::new((0..depth).map(|_| random_word(rng)).collect());
    for block in [p, q] {
        for op in block.ops() {
            if let Op::Plain(code) = op {
                if isa::instr(*code).effect_class == EffectClass::ConstUninterpreted {
                    init.oracle
                        .consts
                        .entry(*code)
                        .or_insert_with(|| random_word(rng));
                }
            }
        }
    }
    let mut storage_keys: BTreeMap<U256, ()> = BTreeMap::new();
    for _ in 0..8 {
        let mut fresh = false;
        for block in [p, q] {
            let (_, touched) = interp::run(block, &init, Width::FULL);
            for key in touched.storage {
                if storage_keys.insert(key, ()).is_none() {
                    init.storage.insert(key, random_word(rng));
                    fresh = true;
                }
            }
            for (code, arg) in touched.calls {
                let table = init.oracle.tables.entry(code).or_default();
                if let std::collections::btree_map::Entry::Vacant(e) = table.entry(arg) {
                    e.insert(random_word(rng));
                    fresh = true;
                }
            }
        }
        if !fresh {
            break;
        }
    }
    init
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse_asm;

    fn asm(s: &str) -> Block {
        parse_asm(s).unwrap()
    }

    #[test]
    fn random_examples() {
        assert!(random_validate(&asm("PUSH 3 SUB"), &asm("PUSH 0 SUB PUSH 3 ADD"), 64, 1).is_ok());
        let fail = random_validate(&asm("PUSH 1"), &asm("PUSH 2"), 1, 1).unwrap_err();
        assert_eq!(fail.trial, 0);
        assert!(fail.stack.is_empty());
        assert!(random_validate(&asm("ADDRESS DUP1"), &asm("ADDRESS ADDRESS"), 64, 7).is_ok());
    }

    #[test]
    fn random_catches_width_artifacts() {
        // equivalent at two bits only
        assert!(random_validate(&asm("PUSH 0 SUB PUSH 3 ADD"), &asm("NOT"), 64, 3).is_err());
    }

    #[test]
    fn random_covers_storage_dependent_keys() {
        let p = asm("PUSH 1 SLOAD SLOAD");
        let q = asm("PUSH 1 SLOAD PUSH 0 ADD SLOAD");
        assert!(random_validate(&p, &q, 32, 9).is_ok());
        let r = asm("PUSH 1 SLOAD");
        assert!(random_validate(&p, &r, 32, 9).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = random_validate(&asm("PUSH 1 ADD"), &asm("PUSH 2 ADD"), 8, 42);
        let b = random_validate(&asm("PUSH 1 ADD"), &asm("PUSH 2 ADD"), 8, 42);
        assert_eq!(a, b);
    }
}
