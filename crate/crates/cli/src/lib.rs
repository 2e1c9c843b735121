//! Batch driver behind the `evmsopt` binary: reads inputs, splits them
//! into blocks, optimizes every distinct block and renders reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Serialize;

use evmsopt_core::bytecode::{dedup_key, disassemble, parse_asm, parse_hex, splice, KeyOp};
use evmsopt_core::isa;
use evmsopt_core::solverio::{Solver, SolverConfig};
use evmsopt_core::superopt::{
    superoptimize, valid_search_width, Mode, OptStatus, OptimizationReport, SearchConfig,
};
use evmsopt_core::{Block, Program};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Width at which large PUSH arguments are abstracted for deduplication.
const DEDUP_BITS: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Auto,
    Hex,
    Asm,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub search_width: u32,
    pub timeout_per_block: Duration,
    pub solver_command: String,
    pub translation_validation: bool,
    pub random_trials: usize,
    pub seed: u64,
    pub abstraction: bool,
    pub validate_intermediate: bool,
    pub dedup: bool,
    pub output: OutputFormat,
    pub format: InputFormat,
    pub export_smt_dir: Option<PathBuf>,
    pub emit_patched: bool,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Unbounded,
            search_width: 4,
            timeout_per_block: Duration::from_secs(900),
            solver_command: SolverConfig::default().command.join(" "),
            translation_validation: true,
            random_trials: 64,
            seed: 0,
            abstraction: true,
            validate_intermediate: false,
            dedup: true,
            output: OutputFormat::Text,
            format: InputFormat::Auto,
            export_smt_dir: None,
            emit_patched: false,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> anyhow::Result<()> {
        if !valid_search_width(self.search_width) {
            bail!(
                "search width must be one of 2, 4, 8, 16, 256 (got {})",
                self.search_width
            );
        }
        if self.timeout_per_block.is_zero() {
            bail!("timeout must be positive");
        }
        if self.solver_command.split_whitespace().next().is_none() {
            bail!("empty solver command");
        }
        Ok(())
    }

    fn search(&self) -> SearchConfig {
        SearchConfig {
            width: self.search_width,
            timeout: self.timeout_per_block,
            abstraction: self.abstraction,
            translation_validation: self.translation_validation,
            validate_intermediate: self.validate_intermediate,
            random_trials: self.random_trials,
            seed: self.seed,
            ..SearchConfig::default()
        }
    }

    fn solver(&self) -> Solver {
        let mut cfg = SolverConfig::from_command_line(&self.solver_command);
        cfg.export_dir = self.export_smt_dir.clone();
        Solver::new(cfg)
    }
}

/// A named program read from a file, stdin or the command line.
#[derive(Clone, Debug)]
pub struct Input {
    pub name: String,
    pub program: Program,
}

/// Bytecode if it starts with `0x` or is an even number of hex digits.
/// Text split by whitespace also needs every piece to be something other
/// than a mnemonic, so `ADD 5` stays assembly.
pub fn looks_like_hex(text: &str) -> bool {
    let t = text.trim_start();
    if t.starts_with("0x") || t.starts_with("0X") {
        return true;
    }
    let tokens: Vec<&str> = t.split_whitespace().collect();
    let digits: usize = tokens.iter().map(|tok| tok.len()).sum();
    digits.is_multiple_of(2)
        && tokens
            .iter()
            .all(|tok| tok.chars().all(|c| c.is_ascii_hexdigit()))
        && (tokens.len() < 2
            || tokens.iter().all(|tok| {
                isa::table()
                    .by_mnemonic(&tok.to_ascii_uppercase())
                    .is_none()
            }))
}

pub fn parse_input(name: &str, text: &str, format: InputFormat) -> anyhow::Result<Input> {
    let hex = match format {
        InputFormat::Hex => true,
        InputFormat::Asm => false,
        InputFormat::Auto => looks_like_hex(text),
    };
    let program = if hex {
        disassemble(&parse_hex(text).with_context(|| format!("{name}: bad bytecode"))?)
    } else {
        let block = parse_asm(text).with_context(|| format!("{name}: bad assembly"))?;
        disassemble(&block.to_bytes())
    };
    Ok(Input {
        name: name.to_string(),
        program,
    })
}

/// Reads each argument as a file if one exists by that name, `-` as stdin,
/// and anything else as literal program text. No arguments means stdin.
pub fn read_inputs(args: &[String], format: InputFormat) -> anyhow::Result<Vec<Input>> {
    let read_stdin = || -> anyhow::Result<String> {
        std::io::read_to_string(std::io::stdin()).context("reading stdin")
    };
    if args.is_empty() {
        return Ok(vec![parse_input("<stdin>", &read_stdin()?, format)?]);
    }
    args.iter()
        .map(|arg| {
            let text = if arg == "-" {
                read_stdin()?
            } else if Path::new(arg).is_file() {
                std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
            } else {
                arg.clone()
            };
            parse_input(arg, &text, format)
        })
        .collect()
}

/// A block as it occurs in an input.
#[derive(Clone, Debug)]
pub struct Occurrence {
    pub input: usize,
    pub segment: usize,
    pub offset: usize,
}

/// A block to optimize together with everywhere it occurs.
#[derive(Clone, Debug)]
pub struct Job {
    pub block: Block,
    pub occurrences: Vec<Occurrence>,
}

/// Blocks in input order. With `dedup`, blocks that are equal up to PUSH
/// arguments wider than the dedup width share one job.
pub fn collect_jobs(inputs: &[Input], dedup: bool) -> Vec<Job> {
    let mut jobs: Vec<Job> = Vec::new();
    let mut seen: HashMap<Vec<KeyOp>, usize> = HashMap::new();
    for (i, input) in inputs.iter().enumerate() {
        for (segment, block) in input.program.blocks() {
            let occ = Occurrence {
                input: i,
                segment,
                offset: block.byte_offset(),
            };
            if dedup {
                if let Some(&j) = seen.get(&dedup_key(block, DEDUP_BITS)) {
                    jobs[j].occurrences.push(occ);
                    continue;
                }
                seen.insert(dedup_key(block, DEDUP_BITS), jobs.len());
            }
            jobs.push(Job {
                block: block.clone(),
                occurrences: vec![occ],
            });
        }
    }
    jobs
}

/// Optimizes every job on `cfg.jobs` worker threads. Results keep the job
/// order.
pub fn optimize_jobs(jobs: &[Job], cfg: &RunConfig) -> Vec<OptimizationReport> {
    let solver = cfg.solver();
    let search = cfg.search();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<OptimizationReport>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(k) else { break };
                let report = superoptimize(&job.block, cfg.mode, &search, &solver);
                results.lock().expect("no worker panicked")[k] = Some(report);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub blocks: usize,
    pub optimized: usize,
    pub optimized_optimal: usize,
    pub already_optimal: usize,
    pub timeout: usize,
    pub translation_validation_failed: usize,
    pub unsupported: usize,
    pub solver_error: usize,
    pub gas_saved_min: i64,
    pub gas_saved_max: i64,
}

impl Summary {
    pub fn of(reports: &[OptimizationReport]) -> Summary {
        let mut s = Summary {
            blocks: reports.len(),
            ..Summary::default()
        };
        for r in reports {
            match r.status {
                OptStatus::Optimized => s.optimized += 1,
                OptStatus::OptimizedOptimal => s.optimized_optimal += 1,
                OptStatus::AlreadyOptimal => s.already_optimal += 1,
                OptStatus::Timeout => s.timeout += 1,
                OptStatus::TranslationValidationFailed => s.translation_validation_failed += 1,
                OptStatus::Unsupported(_) => s.unsupported += 1,
                OptStatus::SolverError(_) => s.solver_error += 1,
            }
            if r.status.is_optimized() {
                s.gas_saved_min += r.gas_saved_min;
                s.gas_saved_max += r.gas_saved_max;
            }
        }
        s
    }

    /// Blocks that are known to be optimal after the run.
    pub fn proved_optimal(&self) -> usize {
        self.optimized_optimal + self.already_optimal
    }

    pub fn has_errors(&self) -> bool {
        self.unsupported + self.solver_error > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockReport {
    pub input: String,
    pub offset: usize,
    pub occurrences: usize,
    pub source_hex: String,
    pub source_asm: String,
    pub target_hex: String,
    pub target_asm: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub gas_saved_min: i64,
    pub gas_saved_max: i64,
    pub search_width: u32,
    pub solver_calls: usize,
    pub time_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<BTreeMap<String, String>>,
}

impl BlockReport {
    pub fn new(input: &str, job: &Job, r: &OptimizationReport) -> BlockReport {
        let detail = match &r.status {
            OptStatus::Unsupported(why) | OptStatus::SolverError(why) => Some(why.clone()),
            _ => None,
        };
        BlockReport {
            input: input.to_string(),
            offset: job.occurrences[0].offset,
            occurrences: job.occurrences.len(),
            source_hex: hex0x(&r.source),
            source_asm: r.source.to_string(),
            target_hex: hex0x(&r.target),
            target_asm: r.target.to_string(),
            status: r.status.name().to_string(),
            detail,
            gas_saved_min: r.gas_saved_min,
            gas_saved_max: r.gas_saved_max,
            search_width: r.search_width,
            solver_calls: r.solver_calls,
            time_ms: r.total_time.as_millis(),
            counterexample: r.counterexample.as_ref().map(|cex| {
                cex.iter()
                    .map(|(n, v)| (n.clone(), format!("{v:#x}")))
                    .collect()
            }),
        }
    }
}

fn hex0x(b: &Block) -> String {
    format!("0x{}", b.to_hex())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Patched {
    pub input: String,
    pub hex: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Splices every validated target back into its input. A program with
/// jumps keeps its original bytes if any replacement changes length,
/// since jump destinations would move.
pub fn patch(inputs: &[Input], jobs: &[Job], reports: &[OptimizationReport]) -> Vec<Patched> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let mut edits: Vec<(usize, &Block)> = Vec::new();
            for (job, r) in jobs.iter().zip(reports) {
                if !r.status.is_optimized() {
                    continue;
                }
                for occ in job.occurrences.iter().filter(|o| o.input == i) {
                    let original = input.program.segments()[occ.segment]
                        .as_block()
                        .expect("block segment");
                    // abstracted duplicates differ in their constants
                    if *original == r.source {
                        edits.push((occ.segment, &r.target));
                    }
                }
            }
            let resized = edits
                .iter()
                .any(|(s, t)| input.program.segments()[*s].raw().len() != t.to_bytes().len());
            let original = hex_bytes(&input.program.to_bytes());
            if resized && input.program.contains_jumps() {
                return Patched {
                    input: input.name.clone(),
                    hex: original,
                    warning: Some(
                        "not patched: a block changed length in a program with jumps".into(),
                    ),
                };
            }
            edits.sort_by_key(|(s, _)| std::cmp::Reverse(*s));
            let mut program = input.program.clone();
            for (s, target) in edits {
                program = splice(&program, s, target).expect("segment is a block");
            }
            Patched {
                input: input.name.clone(),
                hex: hex_bytes(&program.to_bytes()),
                warning: None,
            }
        })
        .collect()
}

fn hex_bytes(b: &[u8]) -> String {
    let mut s = String::from("0x");
    for byte in b {
        let _ = write!(s, "{byte:02x}");
    }
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct Document {
    pub version: u32,
    pub mode: Mode,
    pub reports: Vec<BlockReport>,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patched: Option<Vec<Patched>>,
}

/// Result of a whole run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub document: Document,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.document.summary.has_errors())
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => report_json(&self.document),
            OutputFormat::Text => report_text(&self.document),
        }
    }
}

pub fn run(inputs: &[Input], cfg: &RunConfig) -> Outcome {
    let jobs = collect_jobs(inputs, cfg.dedup);
    let reports = optimize_jobs(&jobs, cfg);
    let blocks = jobs
        .iter()
        .zip(&reports)
        .map(|(job, r)| BlockReport::new(&inputs[job.occurrences[0].input].name, job, r))
        .collect();
    Outcome {
        document: Document {
            version: SCHEMA_VERSION,
            mode: cfg.mode,
            reports: blocks,
            summary: Summary::of(&reports),
            patched: cfg.emit_patched.then(|| patch(inputs, &jobs, &reports)),
        },
    }
}

pub fn report_json(doc: &Document) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_text(doc: &Document) -> String {
    let mut out = String::new();
    for r in &doc.reports {
        let _ = write!(
            out,
            "{}@{}: {} -> {} [{}",
            r.input, r.offset, r.source_asm, r.target_asm, r.status
        );
        if let Some(d) = &r.detail {
            let _ = write!(out, ": {d}");
        }
        let _ = writeln!(
            out,
            "] saved {}..{} g, width {}, {} solver calls, {} ms",
            r.gas_saved_min, r.gas_saved_max, r.search_width, r.solver_calls, r.time_ms
        );
        if r.occurrences > 1 {
            let _ = writeln!(out, "  ({} occurrences)", r.occurrences);
        }
    }
    let s = &doc.summary;
    let _ = writeln!(
        out,
        "{} blocks: {} optimized ({} proved optimal), {} already optimal, {} timeout, {} failed validation, {} unsupported, {} solver errors",
        s.blocks,
        s.optimized + s.optimized_optimal,
        s.optimized_optimal,
        s.already_optimal,
        s.timeout,
        s.translation_validation_failed,
        s.unsupported,
        s.solver_error
    );
    let _ = writeln!(out, "gas saved: {}..{}", s.gas_saved_min, s.gas_saved_max);
    if let Some(patched) = &doc.patched {
        for p in patched {
            let _ = writeln!(out, "patched {}: {}", p.input, p.hex);
            if let Some(w) = &p.warning {
                let _ = writeln!(out, "  warning: {w}");
            }
        }
    }
    out
}
