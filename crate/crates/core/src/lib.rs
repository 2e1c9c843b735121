//! Superoptimization of straight-line EVM bytecode blocks.
//!
//! A block is encoded into SMT constraints over uninterpreted state
//! functions, an external solver searches for a cheaper equivalent program,
//! and every result is re-checked at full word width before it is reported.

pub mod bytecode;
pub mod encoder;
pub mod isa;
pub mod solverio;
pub mod superopt;
pub mod validate;
pub mod word;

pub use bytecode::{Block, Op, Program};
pub use isa::{Gas, Instruction, InstructionSet};
pub use word::{Width, U256};
