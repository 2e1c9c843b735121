use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};

use evmsopt_cli::{read_inputs, run, InputFormat, OutputFormat, RunConfig};
use evmsopt_core::superopt::Mode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Basic,
    Unbounded,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputArg {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Auto,
    Hex,
    Asm,
}

/// Superoptimize straight-line EVM bytecode blocks with an SMT solver.
///
/// Each input is a file, `-` for stdin, or literal bytecode/assembly text.
/// Without inputs, stdin is read.
#[derive(Debug, Parser)]
#[command(name = "evmsopt", version)]
struct Args {
    inputs: Vec<String>,

    #[arg(long, value_enum, default_value = "unbounded")]
    mode: ModeArg,

    /// Word width of the search, in bits.
    #[arg(long, default_value_t = 4, value_parser = parse_width)]
    width: u32,

    /// Per-block timeout in seconds.
    #[arg(long, default_value_t = 900, value_parser = clap::value_parser!(u64).range(1..))]
    timeout: u64,

    /// Solver command line; the script is piped to its stdin.
    #[arg(long)]
    solver: Option<String>,

    /// Skip full-width translation validation of targets.
    #[arg(long)]
    no_tv: bool,

    #[arg(long, default_value_t = 64)]
    random_trials: usize,

    /// Seed for random-input validation.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Truncate wide PUSH arguments instead of abstracting them.
    #[arg(long)]
    no_abstraction: bool,

    /// Validate every intermediate target of the unbounded loop.
    #[arg(long)]
    validate_intermediate: bool,

    /// Optimize repeated blocks once.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    dedup: bool,

    #[arg(long, value_enum, default_value = "text")]
    output: OutputArg,

    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,

    /// Write every solver script sent to this directory.
    #[arg(long, alias = "export_smt_dir")]
    export_smt_dir: Option<PathBuf>,

    /// Print each input with its optimized blocks spliced in.
    #[arg(long)]
    emit_patched: bool,

    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, short = 'j', default_value_t = 1)]
    jobs: usize,
}

fn parse_width(s: &str) -> Result<u32, String> {
    let w: u32 = s.parse().map_err(|e| format!("{e}"))?;
    if evmsopt_core::superopt::valid_search_width(w) {
        Ok(w)
    } else {
        Err("must be one of 2, 4, 8, 16, 256".into())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let mut cfg = RunConfig {
        mode: match args.mode {
            ModeArg::Basic => Mode::Basic,
            ModeArg::Unbounded => Mode::Unbounded,
        },
        search_width: args.width,
        timeout_per_block: Duration::from_secs(args.timeout),
        translation_validation: !args.no_tv,
        random_trials: args.random_trials,
        seed: args.seed,
        abstraction: !args.no_abstraction,
        validate_intermediate: args.validate_intermediate,
        dedup: args.dedup,
        output: match args.output {
            OutputArg::Text => OutputFormat::Text,
            OutputArg::Json => OutputFormat::Json,
        },
        format: match args.format {
            FormatArg::Auto => InputFormat::Auto,
            FormatArg::Hex => InputFormat::Hex,
            FormatArg::Asm => InputFormat::Asm,
        },
        export_smt_dir: args.export_smt_dir,
        emit_patched: args.emit_patched,
        jobs: args.jobs,
        ..RunConfig::default()
    };
    if let Some(s) = args.solver {
        cfg.solver_command = s;
    }
    if let Err(e) = cfg.check() {
        eprintln!("evmsopt: {e}");
        return ExitCode::from(2);
    }
    if let Some(dir) = &cfg.export_smt_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("evmsopt: cannot create {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }

    let inputs = match read_inputs(&args.inputs, cfg.format) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("evmsopt: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = run(&inputs, &cfg);
    let text = outcome.render(cfg.output);
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("evmsopt: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::from(outcome.exit_code() as u8)
}
