//! Basic and unbounded superoptimization of a single block.
//!
//! Basic search enumerates candidate multisets by increasing gas and asks
//! the solver for an equivalent ordering of each. Unbounded search asks for
//! any cheaper equivalent program and tightens the gas bound after every
//! model until the solver reports unsatisfiable.
//!
//! Both searches run at a reduced word width. Every target is checked at
//! full width (and on random inputs) before it is reported; a target that
//! fails the check sends the search to a wider word size.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::bytecode::{Block, Op};
use crate::encoder::{
    abstract_push_args, encode_bso, encode_uso, tighten_bound, AbstractBlock, BsoFormula,
    EncodeError, PushArg, SymOp, UsoFormula,
};
use crate::isa::{self, static_gas, EffectClass, Gas};
use crate::solverio::{Model, Solver, Status};
use crate::validate::{random_validate, translation_validate, Validation};
use crate::word::{Width, U256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Basic,
    Unbounded,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Basic => "basic",
            Mode::Unbounded => "unbounded",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    /// A validated cheaper target; optimality not proved.
    Optimized,
    /// A validated cheaper target that no cheaper program beats.
    OptimizedOptimal,
    /// No cheaper program exists; the target is the source.
    AlreadyOptimal,
    Timeout,
    /// Cheaper candidates were found but none survived validation.
    TranslationValidationFailed,
    Unsupported(String),
    /// The solver crashed or answered outside the protocol.
    SolverError(String),
}

impl OptStatus {
    pub fn is_optimized(&self) -> bool {
        matches!(self, OptStatus::Optimized | OptStatus::OptimizedOptimal)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptStatus::Optimized => "optimized",
            OptStatus::OptimizedOptimal => "optimized_optimal",
            OptStatus::AlreadyOptimal => "already_optimal",
            OptStatus::Timeout => "timeout",
            OptStatus::TranslationValidationFailed => "translation_validation_failed",
            OptStatus::Unsupported(_) => "unsupported",
            OptStatus::SolverError(_) => "solver_error",
        }
    }
}

impl fmt::Display for OptStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptStatus::Unsupported(why) => write!(f, "unsupported ({why})"),
            OptStatus::SolverError(why) => write!(f, "solver error ({why})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Word width of the first search round.
    pub width: u32,
    pub timeout: Duration,
    /// Replace PUSH arguments that do not fit the width by variables.
    /// Without it they are truncated.
    pub abstraction: bool,
    pub translation_validation: bool,
    /// Validate every intermediate target of the unbounded loop.
    pub validate_intermediate: bool,
    pub random_trials: usize,
    pub seed: u64,
    /// Time granted to a full-width validation even after the search
    /// deadline has passed.
    pub validation_timeout: Duration,
    /// Non-PUSH opcodes the target may use; `None` for the default set.
    pub candidates: Option<Vec<u8>>,
    /// Largest candidate budget tried by basic search.
    pub budget_cap: Option<Gas>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            width: 4,
            timeout: Duration::from_secs(900),
            abstraction: true,
            translation_validation: true,
            validate_intermediate: false,
            random_trials: 64,
            seed: 0,
            validation_timeout: Duration::from_secs(60),
            candidates: None,
            budget_cap: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizationReport {
    pub source: Block,
    pub target: Block,
    pub status: OptStatus,
    pub gas_saved_min: i64,
    pub gas_saved_max: i64,
    pub solver_calls: usize,
    pub total_time: Duration,
    /// Width of the search round that produced the result.
    pub search_width: u32,
    pub mode: Mode,
    /// Last full-width counterexample seen for a rejected candidate.
    pub counterexample: Option<Vec<(String, U256)>>,
}

impl OptimizationReport {
    fn new(source: &Block, mode: Mode, width: u32) -> OptimizationReport {
        OptimizationReport {
            source: source.clone(),
            target: source.clone(),
            status: OptStatus::Timeout,
            gas_saved_min: 0,
            gas_saved_max: 0,
            solver_calls: 0,
            total_time: Duration::ZERO,
            search_width: width,
            mode,
            counterexample: None,
        }
    }

    fn set_target(&mut self, target: Block) {
        let (smin, smax) = static_gas(&self.source).expect("encodable source");
        let (tmin, tmax) = static_gas(&target).expect("encodable target");
        self.gas_saved_min = smin as i64 - tmin as i64;
        self.gas_saved_max = smax as i64 - tmax as i64;
        self.target = target;
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("model lacks a value for {0}")]
    Missing(String),
    #[error("instruction index {0} outside the candidate set")]
    OutOfRange(i64),
    #[error("candidate positions are not a permutation")]
    BadPositions,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// PUSH template, one PUSH per abstracted constant, every interpreted
/// instruction (DUP/SWAP up to `max(depth + len, 4)`) and the
/// uninterpreted instructions of the source. Instructions that alone cost
/// at least as much as the whole source are left out: no strictly cheaper
/// target can contain them.
pub fn default_ci(source: &AbstractBlock) -> Vec<SymOp> {
    let reach = (source.depth() + source.len()).clamp(4, 16) as u32;
    let mut ci = vec![SymOp::Push(PushArg::Template)];
    ci.extend((0..source.constants.len()).map(|i| SymOp::Push(PushArg::Const(i))));
    for ins in isa::table().iter() {
        if ins.push_width.is_some() || !ins.is_encodable() {
            continue;
        }
        if ins
            .dup_index()
            .or(ins.swap_index())
            .is_some_and(|k| k > reach)
        {
            continue;
        }
        let wanted = match ins.effect_class {
            EffectClass::Interpreted => true,
            _ => source.ops.contains(&SymOp::Plain(ins.opcode)),
        };
        if wanted {
            ci.push(SymOp::Plain(ins.opcode));
        }
    }
    affordable(source, ci)
}

fn affordable(source: &AbstractBlock, mut ci: Vec<SymOp>) -> Vec<SymOp> {
    let smax: Gas = source.ops.iter().map(|op| op.gas_rule().max()).sum();
    ci.retain(|op| op.min_gas() < smax);
    ci
}

fn ci_from_opcodes(source: &AbstractBlock, opcodes: &[u8]) -> Vec<SymOp> {
    let mut ci = vec![SymOp::Push(PushArg::Template)];
    ci.extend((0..source.constants.len()).map(|i| SymOp::Push(PushArg::Const(i))));
    ci.extend(opcodes.iter().map(|&c| SymOp::Plain(c)));
    affordable(source, ci)
}

/// Multisets over a candidate set with a fixed summed minimal gas,
/// ordered by cardinality, then lexicographically by opcode.
#[derive(Clone, Debug)]
pub struct CandidateStream {
    ops: Vec<SymOp>,
    costs: Vec<Gas>,
    suffix_min: Vec<Gas>,
    suffix_max: Vec<Gas>,
    budget: Gas,
    card: usize,
    max_card: usize,
    chosen: Vec<usize>,
    cursor: Vec<usize>,
    sum: Gas,
    started: bool,
}

pub fn enumerate_candidates(budget: Gas, ci: &[SymOp]) -> CandidateStream {
    let mut ops = ci.to_vec();
    ops.sort_by_key(|op| (op.opcode(), *op));
    ops.dedup();
    let costs: Vec<Gas> = ops.iter().map(SymOp::min_gas).collect();
    let n = costs.len();
    let mut suffix_min = vec![Gas::MAX; n + 1];
    let mut suffix_max = vec![0; n + 1];
    for i in (0..n).rev() {
        suffix_min[i] = suffix_min[i + 1].min(costs[i]);
        suffix_max[i] = suffix_max[i + 1].max(costs[i]);
    }
    let cheapest = suffix_min[0].max(1);
    CandidateStream {
        max_card: if n == 0 {
            0
        } else {
            (budget / cheapest) as usize
        },
        ops,
        costs,
        suffix_min,
        suffix_max,
        budget,
        card: 0,
        chosen: Vec::new(),
        cursor: vec![0],
        sum: 0,
        started: false,
    }
}

impl CandidateStream {
    /// Can `slots` more items, each taken from `from..`, add up to the budget?
    fn feasible(&self, sum: Gas, from: usize, slots: usize) -> bool {
        if slots == 0 {
            return sum == self.budget;
        }
        if from >= self.ops.len() {
            return false;
        }
        let slots = slots as Gas;
        sum + self.suffix_min[from] * slots <= self.budget
            && self.budget <= sum + self.suffix_max[from] * slots
    }

    fn emit(&self) -> Vec<SymOp> {
        self.chosen.iter().map(|&i| self.ops[i]).collect()
    }
}

impl Iterator for CandidateStream {
    type Item = Vec<SymOp>;

    fn next(&mut self) -> Option<Vec<SymOp>> {
        if !self.started {
            self.started = true;
            if self.budget == 0 {
                self.card = usize::MAX;
                return Some(Vec::new());
            }
            self.card = 1;
            self.cursor = vec![0; 2];
        }
        while self.card <= self.max_card {
            loop {
                let depth = self.chosen.len();
                if depth == self.card {
                    let out = self.emit();
                    let last = self.chosen.pop().unwrap();
                    self.sum -= self.costs[last];
                    return Some(out);
                }
                let slots = self.card - depth - 1;
                let start = self.cursor[depth];
                let pick = (start..self.ops.len())
                    .find(|&c| self.feasible(self.sum + self.costs[c], c, slots));
                match pick {
                    Some(c) => {
                        self.chosen.push(c);
                        self.sum += self.costs[c];
                        self.cursor[depth] = c + 1;
                        self.cursor[depth + 1] = c;
                    }
                    None if depth == 0 => break,
                    None => {
                        let last = self.chosen.pop().unwrap();
                        self.sum -= self.costs[last];
                    }
                }
            }
            self.card += 1;
            self.chosen.clear();
            self.sum = 0;
            self.cursor = vec![0; self.card + 1];
        }
        None
    }
}

fn word_value(model: &Model, t: &crate::encoder::Term) -> Result<U256, DecodeError> {
    model
        .get(t)
        .and_then(|v| v.as_word())
        .ok_or_else(|| DecodeError::Missing(t.to_string()))
}

fn int_value(model: &Model, t: &crate::encoder::Term) -> Result<i64, DecodeError> {
    model
        .get(t)
        .and_then(|v| v.as_int())
        .ok_or_else(|| DecodeError::Missing(t.to_string()))
}

fn fill_template(
    op: SymOp,
    arg: impl FnOnce() -> Result<U256, DecodeError>,
) -> Result<SymOp, DecodeError> {
    Ok(match op {
        SymOp::Push(PushArg::Template) => SymOp::Push(PushArg::Word(arg()?)),
        other => other,
    })
}

/// Orders the candidates by their position values and fills PUSH templates.
pub fn decode_bso(
    model: &Model,
    f: &BsoFormula,
    source: &AbstractBlock,
) -> Result<Block, DecodeError> {
    let mut placed = Vec::with_capacity(f.candidates.len());
    for ((op, j), a) in f.candidates.iter().zip(&f.positions).zip(&f.push_args) {
        let pos = int_value(model, j)?;
        placed.push((pos, fill_template(*op, || word_value(model, a))?));
    }
    placed.sort_by_key(|(pos, _)| *pos);
    let expected: Vec<i64> = (0..placed.len() as i64).collect();
    if placed.iter().map(|(p, _)| *p).collect::<Vec<_>>() != expected {
        return Err(DecodeError::BadPositions);
    }
    let ops: Vec<SymOp> = placed.into_iter().map(|(_, op)| op).collect();
    Ok(source.concretize(&ops)?)
}

/// Reads `n`, `instr(0..n)` and `a(0..n)` off the model.
pub fn decode_uso(
    model: &Model,
    f: &UsoFormula,
    source: &AbstractBlock,
) -> Result<Block, DecodeError> {
    let n = int_value(model, &f.length())?;
    let mut ops = Vec::new();
    for j in 0..n.max(0) as usize {
        let k = int_value(model, &f.instr_at(j))?;
        let op = *usize::try_from(k)
            .ok()
            .and_then(|k| f.ci.get(k))
            .ok_or(DecodeError::OutOfRange(k))?;
        ops.push(fill_template(op, || word_value(model, &f.push_arg_at(j)))?);
    }
    Ok(source.concretize(&ops)?)
}

fn abstracted(p: &Block, width: u32, cfg: &SearchConfig) -> AbstractBlock {
    if cfg.abstraction {
        abstract_push_args(p, width)
    } else {
        AbstractBlock::concrete(p)
    }
}

fn next_width(w: u32) -> Option<u32> {
    (w < 256).then(|| (w * 2).min(256))
}

fn improves(source: &Block, target: &Block) -> bool {
    let (smin, smax) = static_gas(source).expect("encodable source");
    let (tmin, tmax) = static_gas(target).expect("encodable target");
    tmax < smax && tmin <= smin
}

/// `p` with every PUSH argument that is negative as a `width`-bit word
/// sign-extended to 256 bits; `None` when there is none.
fn sign_extended(p: &Block, width: u32) -> Option<Block> {
    if width >= 256 {
        return None;
    }
    let mut changed = false;
    let ops = p
        .ops()
        .iter()
        .map(|op| match op {
            Op::Push { value, .. }
                if *value < (U256::from(1u8) << width) && value.bit(width as usize - 1) =>
            {
                changed = true;
                Op::push(*value | (U256::MAX << width))
            }
            other => other.clone(),
        })
        .collect();
    changed.then(|| Block::new(ops).expect("PUSH arguments fit 256 bits"))
}

struct Run<'a> {
    cfg: &'a SearchConfig,
    solver: &'a Solver,
    started: Instant,
    deadline: Instant,
    report: OptimizationReport,
}

impl<'a> Run<'a> {
    fn new(p: &Block, mode: Mode, cfg: &'a SearchConfig, solver: &'a Solver) -> Run<'a> {
        let started = Instant::now();
        Run {
            cfg,
            solver,
            started,
            deadline: started + cfg.timeout,
            report: OptimizationReport::new(p, mode, cfg.width),
        }
    }

    fn remaining(&self) -> Option<Duration> {
        let left = self.deadline.saturating_duration_since(Instant::now());
        (!left.is_zero()).then_some(left)
    }

    fn check(
        &mut self,
        script: &crate::encoder::Script,
        queries: &[crate::encoder::Term],
    ) -> Option<crate::solverio::SolverVerdict> {
        let left = self.remaining()?;
        self.report.solver_calls += 1;
        Some(self.solver.check(script, queries, left))
    }

    /// Full-width and random-input validation.
    fn validate(&mut self, target: &Block) -> bool {
        let source = self.report.source.clone();
        if self.cfg.translation_validation {
            let budget = self
                .remaining()
                .unwrap_or(Duration::ZERO)
                .max(self.cfg.validation_timeout);
            self.report.solver_calls += 1;
            match translation_validate(&source, target, self.solver, budget) {
                Validation::Equivalent => {}
                Validation::Counterexample(cex) => {
                    log::debug!("rejected {target}: full-width counterexample");
                    self.report.counterexample = Some(cex);
                    return false;
                }
                Validation::Indeterminate(why) => {
                    log::debug!("rejected {target}: {why}");
                    return false;
                }
            }
        }
        random_validate(&source, target, self.cfg.random_trials, self.cfg.seed).is_ok()
    }

    /// Validates `target`, then its variant with negative PUSH arguments
    /// sign-extended from `width` bits. Models with a non-constant stack
    /// are rarely found above small widths, so `PUSH 15 ADD` found at 4
    /// bits may only hold as `PUSH (2^256 - 1) ADD`.
    fn accept(&mut self, target: &Block, width: u32) -> Option<Block> {
        if self.validate(target) {
            return Some(target.clone());
        }
        let lifted = sign_extended(target, width)?;
        let cex = self.report.counterexample.take();
        if self.validate(&lifted) {
            return Some(lifted);
        }
        self.report.counterexample = cex;
        None
    }

    fn finish(mut self, status: OptStatus) -> OptimizationReport {
        self.report.status = status;
        self.report.total_time = self.started.elapsed();
        self.report
    }
}

/// Basic search: budgets `0, 1, …` up to the source's maximal gas minus one.
pub fn basic_superoptimize(p: &Block, cfg: &SearchConfig, solver: &Solver) -> OptimizationReport {
    let mut run = Run::new(p, Mode::Basic, cfg, solver);
    let (_, smax) = static_gas(p).expect("encodable block");
    if smax == 0 {
        return run.finish(OptStatus::AlreadyOptimal);
    }
    let cap = cfg.budget_cap.unwrap_or(smax - 1).min(smax - 1);
    let base = abstracted(p, cfg.width, cfg);
    let ci = match &cfg.candidates {
        Some(ops) => ci_from_opcodes(&base, ops),
        None => default_ci(&base),
    };
    let net: i64 = base.ops.iter().map(SymOp::net_stack).sum();
    let mut rejected = false;
    for budget in 0..=cap {
        for cand in enumerate_candidates(budget, &ci) {
            // no ordering of a multiset changes its net stack effect
            if cand.iter().map(SymOp::net_stack).sum::<i64>() != net {
                continue;
            }
            let mut width = cfg.width;
            loop {
                let src = abstracted(p, width, cfg);
                let f = match encode_bso(&src, &cand, width) {
                    Ok(f) => f,
                    Err(e) => return run.finish(OptStatus::Unsupported(e.to_string())),
                };
                let mut queries = f.positions.clone();
                queries.extend(f.push_args.iter().cloned());
                let Some(verdict) = run.check(&f.script, &queries) else {
                    return run.finish(if rejected {
                        OptStatus::TranslationValidationFailed
                    } else {
                        OptStatus::Timeout
                    });
                };
                match verdict.status {
                    Status::Unsat => break,
                    Status::Sat => {
                        let model = verdict.model.unwrap_or_default();
                        let target = match decode_bso(&model, &f, &src) {
                            Ok(t) => t,
                            Err(e) => {
                                return run
                                    .finish(OptStatus::SolverError(format!("decoding model: {e}")))
                            }
                        };
                        if !improves(p, &target) {
                            break;
                        }
                        run.report.search_width = width;
                        if let Some(t) = run.accept(&target, width) {
                            run.report.set_target(t);
                            return run.finish(OptStatus::OptimizedOptimal);
                        }
                        rejected = true;
                        match next_width(width) {
                            Some(w) => width = w,
                            None => break,
                        }
                    }
                    Status::Timeout | Status::Unknown => {
                        return run.finish(if rejected {
                            OptStatus::TranslationValidationFailed
                        } else {
                            OptStatus::Timeout
                        })
                    }
                    Status::SolverError(e) => return run.finish(OptStatus::SolverError(e)),
                }
            }
        }
    }
    run.finish(OptStatus::AlreadyOptimal)
}

/// Unbounded search. Lengths are tried in increasing order; a length that
/// is unsatisfiable stays so when the bound tightens, so the search never
/// revisits it.
pub fn unbounded_superoptimize(
    p: &Block,
    cfg: &SearchConfig,
    solver: &Solver,
) -> OptimizationReport {
    let mut run = Run::new(p, Mode::Unbounded, cfg, solver);
    let (_, smax) = static_gas(p).expect("encodable block");
    if p.is_empty() {
        return run.finish(OptStatus::AlreadyOptimal);
    }
    let mut width = cfg.width;
    let mut best: Option<Block> = None;
    let mut rejected = false;
    'widths: loop {
        run.report.search_width = width;
        let src = abstracted(p, width, cfg);
        let ci = match &cfg.candidates {
            Some(ops) => ci_from_opcodes(&src, ops),
            None => default_ci(&src),
        };
        let cheapest = ci.iter().map(SymOp::min_gas).min().unwrap_or(1).max(1);
        let mut f = match encode_uso(&src, &ci, width) {
            Ok(f) => f,
            Err(e) => return run.finish(OptStatus::Unsupported(e.to_string())),
        };
        let mut found: Vec<Block> = Vec::new();
        let mut bound = smax;
        let mut len = 0usize;
        let mut complete = true;
        while (len as Gas) * cheapest < bound {
            let Some(verdict) = run.check(&f.with_length(len), &f.decode_queries(len)) else {
                complete = false;
                break;
            };
            match verdict.status {
                Status::Unsat => len += 1,
                Status::Sat => {
                    let model = verdict.model.unwrap_or_default();
                    let target = match decode_uso(&model, &f, &src) {
                        Ok(t) => t,
                        Err(e) => {
                            return run
                                .finish(OptStatus::SolverError(format!("decoding model: {e}")))
                        }
                    };
                    let (_, tmax) = static_gas(&target).expect("encodable target");
                    if tmax >= bound {
                        // cannot happen for a sound model; avoid looping
                        return run.finish(OptStatus::Unsupported(format!(
                            "model {target} does not lower the gas bound {bound}"
                        )));
                    }
                    bound = tmax;
                    tighten_bound(&mut f, bound);
                    if !improves(p, &target) {
                        continue;
                    }
                    if cfg.validate_intermediate {
                        if let Some(t) = run.accept(&target, width) {
                            best = Some(t);
                        } else {
                            rejected = true;
                            match next_width(width) {
                                Some(w) => {
                                    width = w;
                                    continue 'widths;
                                }
                                None => break 'widths,
                            }
                        }
                    }
                    found.push(target);
                }
                Status::Timeout | Status::Unknown => {
                    complete = false;
                    break;
                }
                Status::SolverError(e) => return run.finish(OptStatus::SolverError(e)),
            }
        }

        if cfg.validate_intermediate {
            match (found.last(), complete) {
                (None, true) if !rejected => return run.finish(OptStatus::AlreadyOptimal),
                (Some(_), true) => {
                    run.report.set_target(best.clone().expect("validated"));
                    return run.finish(OptStatus::OptimizedOptimal);
                }
                _ => break 'widths,
            }
        }

        // validate the cheapest first, fall back to earlier targets
        for (i, target) in found.iter().enumerate().rev() {
            if let Some(target) = run.accept(target, width) {
                let cheaper_failed = i + 1 < found.len();
                if complete && !cheaper_failed {
                    run.report.set_target(target);
                    return run.finish(OptStatus::OptimizedOptimal);
                }
                if best
                    .as_ref()
                    .is_none_or(|b| static_gas(b).unwrap().1 > static_gas(&target).unwrap().1)
                {
                    best = Some(target);
                }
                break;
            }
            rejected = true;
        }
        if found.is_empty() && complete {
            return match best {
                Some(b) => {
                    run.report.set_target(b);
                    run.finish(OptStatus::Optimized)
                }
                None if rejected => run.finish(OptStatus::TranslationValidationFailed),
                None => run.finish(OptStatus::AlreadyOptimal),
            };
        }
        if !complete || run.remaining().is_none() {
            break;
        }
        match next_width(width) {
            Some(w) => width = w,
            None => break,
        }
    }
    match best {
        Some(b) => {
            run.report.set_target(b);
            run.finish(OptStatus::Optimized)
        }
        None if rejected => run.finish(OptStatus::TranslationValidationFailed),
        None => run.finish(OptStatus::Timeout),
    }
}

pub fn superoptimize(
    p: &Block,
    mode: Mode,
    cfg: &SearchConfig,
    solver: &Solver,
) -> OptimizationReport {
    match mode {
        Mode::Basic => basic_superoptimize(p, cfg, solver),
        Mode::Unbounded => unbounded_superoptimize(p, cfg, solver),
    }
}

/// The width-validated search widths, for configuration checks.
pub const SEARCH_WIDTHS: [u32; 5] = [2, 4, 8, 16, 256];

pub fn valid_search_width(w: u32) -> bool {
    SEARCH_WIDTHS.contains(&w) && Width::new(w).is_some()
}
