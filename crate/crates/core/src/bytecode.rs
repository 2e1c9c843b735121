//! Bytecode and assembly front end: disassembly into blocks of encodable
//! instructions, reassembly, and splicing optimized blocks back in.

use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::isa::{self, Instruction, PUSH1};
use crate::word::U256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BytecodeError {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("malformed literal `{0}`")]
    MalformedLiteral(String),
    #[error("immediate `{0}` given to non-PUSH instruction")]
    ImmediateOnNonPush(String),
    #[error("PUSH without immediate")]
    MissingImmediate,
    #[error("immediate {value} does not fit in {width} bytes")]
    ImmediateTooWide { value: U256, width: u8 },
    #[error("instruction {0} cannot appear in a block")]
    Unencodable(String),
    #[error("invalid hex: {0}")]
    BadHex(String),
    #[error("segment index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("segment {0} is not a block")]
    NotABlock(usize),
}

/// One instruction of a block. All `PUSHn` are unified into `Push`; the
/// width seen on disassembly is remembered so reassembly is byte exact.
#[derive(Clone, Debug)]
pub enum Op {
    Push { value: U256, width: Option<u8> },
    Plain(u8),
}

impl Op {
    pub fn push(value: U256) -> Op {
        Op::Push { value, width: None }
    }

    pub fn push_u64(value: u64) -> Op {
        Op::push(U256::from(value))
    }

    pub fn is_push(&self) -> bool {
        matches!(self, Op::Push { .. })
    }

    /// Opcode used on emission.
    pub fn opcode(&self) -> u8 {
        match *self {
            Op::Push { value, width } => PUSH1 + push_width(value, width) - 1,
            Op::Plain(op) => op,
        }
    }

    pub fn instruction(&self) -> &'static Instruction {
        isa::instr(self.opcode())
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        out.push(self.opcode());
        if let Op::Push { value, width } = *self {
            let n = push_width(value, width) as usize;
            let be = value.to_be_bytes::<32>();
            out.extend_from_slice(&be[32 - n..]);
        }
    }
}

fn minimal_width(value: U256) -> u8 {
    (value.bit_len().div_ceil(8)).max(1) as u8
}

fn push_width(value: U256, declared: Option<u8>) -> u8 {
    let min = minimal_width(value);
    match declared {
        Some(w) if w >= min && w <= 32 => w,
        _ => min,
    }
}

impl PartialEq for Op {
    fn eq(&self, other: &Op) -> bool {
        match (self, other) {
            (Op::Push { value: a, .. }, Op::Push { value: b, .. }) => a == b,
            (Op::Plain(a), Op::Plain(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Op {}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Op::Push { value, .. } => {
                0u8.hash(state);
                value.hash(state);
            }
            Op::Plain(op) => {
                1u8.hash(state);
                op.hash(state);
            }
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Push { value, .. } => write!(f, "PUSH {value}"),
            Op::Plain(op) => write!(f, "{}", isa::instr(*op).mnemonic),
        }
    }
}

/// A straight-line run of encodable instructions. Equality looks at the
/// instructions only, not at where the block sits in a program.
#[derive(Clone, Debug, Default)]
pub struct Block {
    ops: Vec<Op>,
    byte_offset: usize,
}

impl PartialEq for Block {
    fn eq(&self, other: &Block) -> bool {
        self.ops == other.ops
    }
}

impl Eq for Block {}

impl std::hash::Hash for Block {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ops.hash(state);
    }
}

impl Block {
    pub fn new(ops: Vec<Op>) -> Result<Block, BytecodeError> {
        for op in &ops {
            if let Op::Plain(code) = op {
                match isa::lookup_opcode(*code) {
                    Some(ins) if ins.is_encodable() && ins.push_width.is_none() => {}
                    Some(ins) => return Err(BytecodeError::Unencodable(ins.mnemonic.clone())),
                    None => return Err(BytecodeError::Unencodable(format!("{code:#04x}"))),
                }
            }
        }
        Ok(Block {
            ops,
            byte_offset: 0,
        })
    }

    pub fn empty() -> Block {
        Block::default()
    }

    pub fn with_offset(mut self, byte_offset: usize) -> Block {
        self.byte_offset = byte_offset;
        self
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn byte_offset(&self) -> usize {
        self.byte_offset
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for op in &self.ops {
            op.write_bytes(&mut out);
        }
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn depth(&self) -> usize {
        program_depth(self)
    }

    pub fn concat(&self, other: &Block) -> Block {
        let mut ops = self.ops.clone();
        ops.extend(other.ops.iter().cloned());
        Block {
            ops,
            byte_offset: self.byte_offset,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    /// `raw` holds the exact input bytes, which differ from the block's
    /// assembly only for a truncated trailing PUSH.
    Block {
        block: Block,
        raw: Vec<u8>,
    },
    Opaque {
        offset: usize,
        bytes: Vec<u8>,
    },
}

impl Segment {
    pub fn offset(&self) -> usize {
        match self {
            Segment::Block { block, .. } => block.byte_offset(),
            Segment::Opaque { offset, .. } => *offset,
        }
    }

    pub fn raw(&self) -> &[u8] {
        match self {
            Segment::Block { raw, .. } => raw,
            Segment::Opaque { bytes, .. } => bytes,
        }
    }

    pub fn as_block(&self) -> Option<&Block> {
        match self {
            Segment::Block { block, .. } => Some(block),
            Segment::Opaque { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    segments: Vec<Segment>,
}

impl Program {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `(segment index, block)` for every block segment.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, &Block)> {
        self.segments
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_block().map(|b| (i, b)))
    }

    /// The original bytes, segment by segment.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.segments
            .iter()
            .flat_map(|s| s.raw().iter().copied())
            .collect()
    }

    pub fn contains_jumps(&self) -> bool {
        self.segments.iter().any(|s| match s {
            Segment::Opaque { bytes, .. } => bytes
                .iter()
                .any(|&b| b == isa::opcodes::JUMP || b == isa::opcodes::JUMPI),
            Segment::Block { .. } => false,
        })
    }
}

/// Accepts `0x`-prefixed or bare hex; whitespace is ignored.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, BytecodeError> {
    let cleaned: String = text.split_whitespace().collect();
    let digits = cleaned
        .strip_prefix("0x")
        .or_else(|| cleaned.strip_prefix("0X"))
        .unwrap_or(&cleaned);
    hex::decode(digits).map_err(|e| BytecodeError::BadHex(e.to_string()))
}

/// Greedy linear sweep. `PUSHn` consumes `n` immediate bytes, zero padded on
/// the right when the input ends early. Unencodable, control-flow and
/// unknown opcodes (including `JUMPDEST`) close the current block and are
/// collected into opaque runs.
pub fn disassemble(bytes: &[u8]) -> Program {
    let mut segments = Vec::new();
    let mut block: Option<(usize, Vec<Op>)> = None;
    let mut opaque: Option<usize> = None;
    let mut i = 0;

    let close_block =
        |block: &mut Option<(usize, Vec<Op>)>, end: usize, segs: &mut Vec<Segment>| {
            if let Some((start, ops)) = block.take() {
                segs.push(Segment::Block {
                    block: Block {
                        ops,
                        byte_offset: start,
                    },
                    raw: bytes[start..end].to_vec(),
                });
            }
        };
    let close_opaque = |opaque: &mut Option<usize>, end: usize, segs: &mut Vec<Segment>| {
        if let Some(start) = opaque.take() {
            segs.push(Segment::Opaque {
                offset: start,
                bytes: bytes[start..end].to_vec(),
            });
        }
    };

    while i < bytes.len() {
        let b = bytes[i];
        match isa::lookup_opcode(b).filter(|ins| ins.is_encodable()) {
            Some(ins) => {
                close_opaque(&mut opaque, i, &mut segments);
                let start = i;
                let ops = &mut block.get_or_insert_with(|| (start, Vec::new())).1;
                if let Some(n) = ins.push_width {
                    let n = n as usize;
                    let mut imm = [0u8; 32];
                    let avail = bytes.len().saturating_sub(i + 1).min(n);
                    imm[32 - n..32 - n + avail].copy_from_slice(&bytes[i + 1..i + 1 + avail]);
                    ops.push(Op::Push {
                        value: U256::from_be_bytes(imm),
                        width: Some(n as u8),
                    });
                    i += 1 + avail;
                } else {
                    ops.push(Op::Plain(b));
                    i += 1;
                }
            }
            None => {
                close_block(&mut block, i, &mut segments);
                opaque.get_or_insert(i);
                i += 1;
            }
        }
    }
    close_block(&mut block, bytes.len(), &mut segments);
    close_opaque(&mut opaque, bytes.len(), &mut segments);
    Program { segments }
}

/// Reassembles a program. Blocks are emitted from their instructions, so a
/// PUSH without a recorded width gets the minimal `PUSHn`.
pub fn assemble(p: &Program) -> Vec<u8> {
    let mut out = Vec::new();
    for s in &p.segments {
        match s {
            Segment::Block { block, .. } => {
                for op in &block.ops {
                    op.write_bytes(&mut out);
                }
            }
            Segment::Opaque { bytes, .. } => out.extend_from_slice(bytes),
        }
    }
    out
}

fn parse_literal(tok: &str) -> Result<U256, BytecodeError> {
    let malformed = || BytecodeError::MalformedLiteral(tok.to_string());
    let (digits, radix) = if let Some(h) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X"))
    {
        (h, 16)
    } else if let Some(b) = tok.strip_prefix("0b").or_else(|| tok.strip_prefix("0B")) {
        (b, 2)
    } else {
        (tok, 10)
    };
    let digits: String = digits.chars().filter(|&c| c != '_').collect();
    if digits.is_empty() || !digits.chars().all(|c| c.is_digit(radix)) {
        return Err(malformed());
    }
    U256::from_str_radix(&digits, radix as u64).map_err(|_| malformed())
}

fn looks_like_literal(tok: &str) -> bool {
    tok.chars().next().is_some_and(|c| c.is_ascii_digit())
}

/// Parses whitespace-separated mnemonics. `PUSH` (or `PUSHn`) takes one
/// decimal, `0x` hex or `0b` binary literal. `;` starts a comment.
pub fn parse_asm(text: &str) -> Result<Block, BytecodeError> {
    let mut tokens = text
        .lines()
        .flat_map(|line| line.split(';').next().unwrap_or("").split_whitespace());
    let mut ops = Vec::new();
    while let Some(tok) = tokens.next() {
        if looks_like_literal(tok) {
            let prev = ops.last().map(|o: &Op| o.to_string()).unwrap_or_default();
            return Err(BytecodeError::ImmediateOnNonPush(format!("{prev} {tok}")));
        }
        let upper = tok.to_ascii_uppercase();
        if upper.starts_with("PUSH") {
            let width = if upper == "PUSH" {
                None
            } else {
                match isa::table().by_mnemonic(&upper).and_then(|i| i.push_width) {
                    Some(w) => Some(w),
                    None => return Err(BytecodeError::UnknownMnemonic(tok.to_string())),
                }
            };
            let lit = tokens.next().ok_or(BytecodeError::MissingImmediate)?;
            let value = parse_literal(lit)?;
            if let Some(w) = width {
                if minimal_width(value) > w {
                    return Err(BytecodeError::ImmediateTooWide { value, width: w });
                }
            }
            ops.push(Op::Push { value, width });
            continue;
        }
        let ins = isa::table()
            .by_mnemonic(&upper)
            .ok_or_else(|| BytecodeError::UnknownMnemonic(tok.to_string()))?;
        if !ins.is_encodable() {
            return Err(BytecodeError::Unencodable(ins.mnemonic.clone()));
        }
        ops.push(Op::Plain(ins.opcode));
    }
    Ok(Block {
        ops,
        byte_offset: 0,
    })
}

/// Number of words that must be on the stack before the block runs so that
/// no instruction underflows.
pub fn program_depth(p: &Block) -> usize {
    let mut produced: i64 = 0;
    let mut depth: i64 = 0;
    for op in &p.ops {
        let ins = op.instruction();
        depth = depth.max(i64::from(ins.delta) - produced);
        produced += i64::from(ins.alpha) - i64::from(ins.delta);
    }
    depth.max(0) as usize
}

/// Replaces block segment `at`. An empty replacement removes the segment.
/// Offsets after the splice point are recomputed; bytes of all other
/// segments are untouched.
pub fn splice(p: &Program, at: usize, replacement: &Block) -> Result<Program, BytecodeError> {
    let seg = p
        .segments
        .get(at)
        .ok_or(BytecodeError::IndexOutOfRange(at))?;
    let old = seg.as_block().ok_or(BytecodeError::NotABlock(at))?;
    let mut segments: Vec<Segment> = p.segments[..at].to_vec();
    if !replacement.is_empty() {
        let block = Block {
            ops: replacement.ops.clone(),
            byte_offset: old.byte_offset,
        };
        let raw = block.to_bytes();
        segments.push(Segment::Block { block, raw });
    }
    segments.extend(p.segments[at + 1..].iter().cloned());

    let mut offset = 0;
    for s in &mut segments {
        match s {
            Segment::Block { block, raw } => {
                block.byte_offset = offset;
                offset += raw.len();
            }
            Segment::Opaque { offset: o, bytes } => {
                *o = offset;
                offset += bytes.len();
            }
        }
    }
    Ok(Program { segments })
}

/// One element of a deduplication key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyOp {
    Small(U256),
    /// Index of the distinct large immediate, in order of first use.
    Slot(usize),
    Plain(u8),
}

/// Key under which blocks that differ only in large PUSH arguments collide.
/// Immediates below `2^bits` are kept, larger ones are numbered by first
/// occurrence.
pub fn dedup_key(p: &Block, bits: u32) -> Vec<KeyOp> {
    let limit = crate::word::Width::new(bits)
        .map(|w| w.mask())
        .unwrap_or(U256::MAX);
    let mut slots: Vec<U256> = Vec::new();
    p.ops
        .iter()
        .map(|op| match *op {
            Op::Push { value, .. } if value <= limit => KeyOp::Small(value),
            Op::Push { value, .. } => {
                let idx = slots.iter().position(|&v| v == value).unwrap_or_else(|| {
                    slots.push(value);
                    slots.len() - 1
                });
                KeyOp::Slot(idx)
            }
            Op::Plain(code) => KeyOp::Plain(code),
        })
        .collect()
}
