//! Command-line driver: solve, study, adapt, and verify subcommands over a
//! line-oriented configuration file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 verification failure.

use plate::config::{parse_config, RunConfig, StudyKind};
use plate::study::{run_solve, run_study, StudyError};
use std::path::PathBuf;
use std::process::ExitCode;

struct Cli {
    command: String,
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    svg: bool,
}

fn usage() -> ! {
    eprintln!("usage: plate <solve|study|adapt|verify> --config <file> [--out <dir>] [--svg]");
    std::process::exit(2);
}

fn parse_cli() -> Cli {
    let mut args = std::env::args().skip(1);
    let command = match args.next() {
        Some(c) => c,
        None => usage(),
    };
    let mut config_path = None;
    let mut out_dir = None;
    let mut svg = false;
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--config" => config_path = args.next().map(PathBuf::from),
            "--out" => out_dir = args.next().map(PathBuf::from),
            "--svg" => svg = true,
            other => {
                eprintln!("unknown argument `{other}`");
                usage();
            }
        }
    }
    let Some(config_path) = config_path else {
        eprintln!("missing --config");
        usage();
    };
    Cli { command, config_path, out_dir, svg }
}

fn setup_threads() {
    if let Ok(value) = std::env::var("PLATE_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                if n == 1 {
                    faer::set_global_parallelism(faer::Par::Seq);
                } else {
                    faer::set_global_parallelism(faer::Par::rayon(n));
                }
            }
        }
    }
}

fn print_record(record: &plate::adapt::StudyRecord) {
    println!("{}", plate::study::STUDY_CSV_HEADER);
    print!("{}", plate::study::study_csv(record).lines().skip(1).collect::<Vec<_>>().join("\n"));
    println!();
}

fn run(cli: &Cli, config: &mut RunConfig) -> Result<(), StudyError> {
    if cli.out_dir.is_some() {
        config.out_dir = cli.out_dir.clone();
    }
    if cli.svg {
        config.svg = true;
    }
    let out_dir = config.out_dir.clone();
    match cli.command.as_str() {
        "solve" => {
            let artifacts = run_solve(config, out_dir.as_deref())?;
            print_record(&artifacts.record);
        }
        "study" => {
            config.study = StudyKind::Uniform;
            let artifacts = run_study(config, out_dir.as_deref())?;
            print_record(&artifacts.record);
        }
        "adapt" => {
            config.study = StudyKind::Adaptive;
            let artifacts = run_study(config, out_dir.as_deref())?;
            print_record(&artifacts.record);
        }
        other => {
            return Err(StudyError::Config(format!("unknown subcommand `{other}`")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    setup_threads();
    let cli = parse_cli();
    let text = match std::fs::read_to_string(&cli.config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.config_path.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    if cli.command == "verify" || config.study == StudyKind::Verify {
        let stdout = std::io::stdout();
        match plate::verify::run_verification(stdout.lock()) {
            Ok(true) => return ExitCode::SUCCESS,
            Ok(false) => return ExitCode::from(4),
            Err(e) => {
                eprintln!("verification io failure: {e}");
                return ExitCode::from(4);
            }
        }
    }

    match run(&cli, &mut config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StudyError::Config(m)) => {
            eprintln!("configuration: {m}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
