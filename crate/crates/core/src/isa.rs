//! The encodable EVM instruction subset: opcodes, stack arity, gas rules and
//! the effect class that decides how an instruction is encoded.
//!
//! The table is data. A default (Constantinople fee schedule) is compiled in
//! and a replacement can be installed once per process with [`install_table`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;
use thiserror::Error;

use crate::bytecode::{Block, Op};

/// Gas units.
pub type Gas = u64;

/// Stack limit of the EVM.
pub const STACK_LIMIT: u64 = 1024;

/// Opcode of `PUSH1`; `PUSHn` is `PUSH1 + n - 1`.
pub const PUSH1: u8 = 0x60;
pub const DUP1: u8 = 0x80;
pub const SWAP1: u8 = 0x90;

pub mod opcodes {
    pub const ADD: u8 = 0x01;
    pub const MUL: u8 = 0x02;
    pub const SUB: u8 = 0x03;
    pub const DIV: u8 = 0x04;
    pub const SDIV: u8 = 0x05;
    pub const MOD: u8 = 0x06;
    pub const SMOD: u8 = 0x07;
    pub const LT: u8 = 0x10;
    pub const GT: u8 = 0x11;
    pub const SLT: u8 = 0x12;
    pub const SGT: u8 = 0x13;
    pub const EQ: u8 = 0x14;
    pub const ISZERO: u8 = 0x15;
    pub const AND: u8 = 0x16;
    pub const OR: u8 = 0x17;
    pub const XOR: u8 = 0x18;
    pub const NOT: u8 = 0x19;
    pub const ADDRESS: u8 = 0x30;
    pub const BALANCE: u8 = 0x31;
    pub const CALLVALUE: u8 = 0x34;
    pub const CALLDATALOAD: u8 = 0x35;
    pub const BLOCKHASH: u8 = 0x40;
    pub const POP: u8 = 0x50;
    pub const SLOAD: u8 = 0x54;
    pub const SSTORE: u8 = 0x55;
    pub const JUMP: u8 = 0x56;
    pub const JUMPI: u8 = 0x57;
    pub const JUMPDEST: u8 = 0x5b;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectClass {
    /// Full bit-vector semantics.
    Interpreted,
    /// Pushes an arbitrary but fixed word, consumes nothing.
    ConstUninterpreted,
    /// Result is an unknown function of the consumed words.
    #[serde(rename = "nonconst_uninterpreted")]
    NonConstUninterpreted,
    Unencodable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasRule {
    Fixed(Gas),
    /// `set` is charged when a zero slot becomes non-zero, `reset` otherwise.
    Sstore {
        set: Gas,
        reset: Gas,
    },
}

impl GasRule {
    pub fn min(&self) -> Gas {
        match *self {
            GasRule::Fixed(g) => g,
            GasRule::Sstore { set, reset } => set.min(reset),
        }
    }

    pub fn max(&self) -> Gas {
        match *self {
            GasRule::Fixed(g) => g,
            GasRule::Sstore { set, reset } => set.max(reset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct Instruction {
    pub opcode: u8,
    pub mnemonic: String,
    /// Words consumed.
    pub delta: u32,
    /// Words produced.
    pub alpha: u32,
    #[serde(rename = "class")]
    pub effect_class: EffectClass,
    #[serde(rename = "gas")]
    pub gas_rule: Option<GasRule>,
    #[serde(default)]
    pub push_width: Option<u8>,
}

impl Instruction {
    pub fn is_encodable(&self) -> bool {
        self.effect_class != EffectClass::Unencodable && self.gas_rule.is_some()
    }

    pub fn is_uninterpreted(&self) -> bool {
        matches!(
            self.effect_class,
            EffectClass::ConstUninterpreted | EffectClass::NonConstUninterpreted
        )
    }

    /// `Some(i)` for `DUPi`.
    pub fn dup_index(&self) -> Option<u32> {
        (DUP1..DUP1 + 16)
            .contains(&self.opcode)
            .then(|| u32::from(self.opcode - DUP1) + 1)
    }

    /// `Some(i)` for `SWAPi`.
    pub fn swap_index(&self) -> Option<u32> {
        (SWAP1..SWAP1 + 16)
            .contains(&self.opcode)
            .then(|| u32::from(self.opcode - SWAP1) + 1)
    }

    pub fn min_gas(&self) -> Option<Gas> {
        self.gas_rule.map(|g| g.min())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic)
    }
}

#[derive(Debug, Error)]
pub enum IsaError {
    #[error("instruction table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("instruction table: unsupported version {0}")]
    Version(u32),
    #[error("instruction table: {0}")]
    Invalid(String),
    #[error("cannot read instruction table: {0}")]
    Io(#[from] std::io::Error),
    #[error("instruction {0} is not encodable")]
    Unencodable(String),
    #[error("instruction table already installed")]
    AlreadyInstalled,
}

#[derive(Deserialize)]
struct TableFile {
    version: u32,
    fork: String,
    instruction: Vec<Instruction>,
}

/// Lookup structure over one fee schedule.
#[derive(Debug)]
pub struct InstructionSet {
    fork: String,
    by_opcode: Vec<Option<Instruction>>,
    by_mnemonic: HashMap<String, u8>,
}

const DEFAULT_TABLE: &str = include_str!("../data/constantinople.toml");

impl InstructionSet {
    pub fn from_toml(text: &str) -> Result<Self, IsaError> {
        let file: TableFile = toml::from_str(text)?;
        if file.version != 1 {
            return Err(IsaError::Version(file.version));
        }
        let mut by_opcode = vec![None; 256];
        let mut by_mnemonic = HashMap::new();
        for ins in file.instruction {
            validate_entry(&ins)?;
            if by_opcode[ins.opcode as usize].is_some() {
                return Err(IsaError::Invalid(format!(
                    "duplicate opcode {:#04x}",
                    ins.opcode
                )));
            }
            if by_mnemonic
                .insert(ins.mnemonic.clone(), ins.opcode)
                .is_some()
            {
                return Err(IsaError::Invalid(format!(
                    "duplicate mnemonic {}",
                    ins.mnemonic
                )));
            }
            let op = ins.opcode as usize;
            by_opcode[op] = Some(ins);
        }
        let set = InstructionSet {
            fork: file.fork,
            by_opcode,
            by_mnemonic,
        };
        if set.cheapest_cost().unwrap_or(0) < 1 {
            return Err(IsaError::Invalid(
                "cheapest instruction must cost at least 1".into(),
            ));
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, IsaError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn fork(&self) -> &str {
        &self.fork
    }

    pub fn lookup(&self, opcode: u8) -> Option<&Instruction> {
        self.by_opcode[opcode as usize].as_ref()
    }

    pub fn by_mnemonic(&self, mnemonic: &str) -> Option<&Instruction> {
        self.by_mnemonic
            .get(mnemonic)
            .and_then(|&op| self.lookup(op))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instruction> {
        self.by_opcode.iter().flatten()
    }

    /// Cheapest minimal gas over all encodable instructions.
    pub fn cheapest_cost(&self) -> Option<Gas> {
        self.iter().filter_map(|i| i.min_gas()).min()
    }
}

fn validate_entry(ins: &Instruction) -> Result<(), IsaError> {
    let bad = |msg: &str| Err(IsaError::Invalid(format!("{}: {}", ins.mnemonic, msg)));
    if let Some(rule) = ins.gas_rule {
        if rule.min() == 0 {
            return bad("gas amounts must be positive");
        }
    } else if ins.effect_class != EffectClass::Unencodable {
        return bad("encodable instruction without gas rule");
    }
    if ins.effect_class == EffectClass::ConstUninterpreted && ins.delta != 0 {
        return bad("constant uninterpreted instruction must not consume words");
    }
    if let Some(i) = ins.dup_index() {
        if ins.delta != i || ins.alpha != i + 1 {
            return bad("DUPi must have delta = i, alpha = i + 1");
        }
    } else if let Some(i) = ins.swap_index() {
        if ins.delta != i + 1 || ins.alpha != i + 1 {
            return bad("SWAPi must have delta = alpha = i + 1");
        }
    } else if ins.alpha > 1 {
        return bad("only DUP and SWAP may produce more than one word");
    }
    let is_push_opcode = (PUSH1..PUSH1 + 32).contains(&ins.opcode);
    match ins.push_width {
        Some(w) if !is_push_opcode || w != ins.opcode - PUSH1 + 1 => bad("push width mismatch"),
        None if is_push_opcode => bad("PUSH without width"),
        _ => Ok(()),
    }
}

static TABLE: OnceLock<InstructionSet> = OnceLock::new();

/// Installs a process-wide instruction table. Must run before the first
/// lookup; fails if a table is already in use.
pub fn install_table(set: InstructionSet) -> Result<(), IsaError> {
    TABLE.set(set).map_err(|_| IsaError::AlreadyInstalled)
}

/// The process-wide instruction table.
pub fn table() -> &'static InstructionSet {
    TABLE.get_or_init(|| {
        InstructionSet::from_toml(DEFAULT_TABLE).expect("built-in instruction table is valid")
    })
}

/// Unknown opcodes return `None`; callers treat them as opaque bytes.
pub fn lookup_opcode(b: u8) -> Option<&'static Instruction> {
    table().lookup(b)
}

/// Encodable instruction by opcode. Panics on an opcode without a table entry.
pub fn instr(opcode: u8) -> &'static Instruction {
    lookup_opcode(opcode).unwrap_or_else(|| panic!("no instruction with opcode {opcode:#04x}"))
}

pub fn push_instr() -> &'static Instruction {
    instr(PUSH1)
}

/// Gas range of one operation. `Op::Push` is priced like every `PUSHn`.
pub fn op_gas(op: &Op) -> Result<GasRule, IsaError> {
    let ins = op.instruction();
    ins.gas_rule
        .filter(|_| ins.is_encodable())
        .ok_or_else(|| IsaError::Unencodable(ins.mnemonic.clone()))
}

/// Statically known `(min, max)` gas of a block. `SSTORE` contributes its
/// reset cost to the minimum and its set cost to the maximum.
pub fn static_gas(p: &Block) -> Result<(Gas, Gas), IsaError> {
    p.ops().iter().try_fold((0, 0), |(lo, hi), op| {
        let rule = op_gas(op)?;
        Ok((lo + rule.min(), hi + rule.max()))
    })
}
