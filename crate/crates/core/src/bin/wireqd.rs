use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use wireqd::cli::{parse_config, run_with_threads, Command};

#[derive(Parser, Debug)]
#[command(version, about = "Nanowire plasmon dispersion, dot emission rates and decay dynamics")]
struct Args {
    /// dispersion, rates, dynamics, entangle or all
    command: Command,

    /// JSON config; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides out_dir in the config)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads (overrides threads in the config)
    #[arg(long, env = "WIREQD_THREADS")]
    threads: Option<usize>,
}

fn execute(args: Args) -> u8 {
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return 1;
            }
        },
        None => String::new(),
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code() as u8;
        }
    };
    let Some(out) = args.out.clone().or_else(|| cfg.out_dir.clone()) else {
        eprintln!("error: no output directory (pass --out or set out_dir)");
        return 1;
    };
    let threads = args
        .threads
        .or(cfg.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return 1;
    }
    match run_with_threads(&cfg, args.command, &out, threads) {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} files to {} in {:.1} s", m.files.len(), out.display(), m.wall_time_s);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(Args::parse()))
}
