//! `fr-minmax`: configuration-driven experiment runner.
//!
//! ```text
//! fr-minmax run --config <path> [--out-dir <path>] [--threads N] [--log-level L]
//! fr-minmax sweep --config <path> [--out-dir <path>] [--threads N]
//! fr-minmax validate [--seed N] [--out-dir <path>]
//! ```
//!
//! Exit codes: 0 success, 2 check failure, 1 configuration error. The env
//! var `FR_MINMAX_LOG` (error|warn|info|debug) sets the log level;
//! `--log-level` overrides it.

use std::path::PathBuf;
use std::process::ExitCode;

use fr_minmax::config::{ExperimentConfig, MethodConfig, SCHEMA};
use fr_minmax::{runner, Error};

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Error = 0,
    Warn = 1,
    Info = 2,
    Debug = 3,
}

impl LogLevel {
    fn parse(s: &str) -> Option<LogLevel> {
        match s {
            "error" => Some(LogLevel::Error),
            "warn" => Some(LogLevel::Warn),
            "info" => Some(LogLevel::Info),
            "debug" => Some(LogLevel::Debug),
            _ => None,
        }
    }
}

struct Logger {
    level: LogLevel,
}

impl Logger {
    fn log(&self, level: LogLevel, msg: &str) {
        if level <= self.level {
            let tag = match level {
                LogLevel::Error => "error",
                LogLevel::Warn => "warn",
                LogLevel::Info => "info",
                LogLevel::Debug => "debug",
            };
            eprintln!("fr-minmax [{tag}] {msg}");
        }
    }
}

const USAGE: &str = "usage:
  fr-minmax run --config <path> [--out-dir <path>] [--threads N] [--log-level error|warn|info|debug]
  fr-minmax sweep --config <path> [--out-dir <path>] [--threads N] [--log-level ...]
  fr-minmax validate [--seed N] [--out-dir <path>] [--log-level ...]
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    threads: usize,
    seed: u64,
    log_level: Option<LogLevel>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut it = argv.iter();
    let command = it.next().cloned().ok_or_else(|| USAGE.to_string())?;
    let mut args = Args {
        command,
        config: None,
        out_dir: None,
        threads: 1,
        seed: 0,
        log_level: None,
    };
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {flag} needs a value\n{USAGE}"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--out-dir" => args.out_dir = Some(PathBuf::from(value()?)),
            "--threads" => {
                args.threads = value()?
                    .parse()
                    .map_err(|_| format!("--threads expects a positive integer\n{USAGE}"))?
            }
            "--seed" => {
                args.seed = value()?
                    .parse()
                    .map_err(|_| format!("--seed expects an unsigned integer\n{USAGE}"))?
            }
            "--log-level" => {
                let v = value()?;
                args.log_level =
                    Some(LogLevel::parse(&v).ok_or_else(|| format!("unknown log level `{v}`\n{USAGE}"))?)
            }
            other => return Err(format!("unknown flag `{other}`\n{USAGE}")),
        }
    }
    Ok(args)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // Everything that prevents a well-defined run is a configuration
        // error; completed-but-failed checks are reported via the summary.
        Error::Config(_) | Error::Io { .. } | Error::InvalidParameter { .. } | Error::RatioCondition { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(1);
        }
    };
    let env_level = std::env::var("FR_MINMAX_LOG").ok().and_then(|v| LogLevel::parse(&v));
    let logger = Logger { level: args.log_level.or(env_level).unwrap_or(LogLevel::Info) };

    let report = match args.command.as_str() {
        "run" | "sweep" => {
            let Some(config_path) = &args.config else {
                eprintln!("{} requires --config\n{USAGE}", args.command);
                return ExitCode::from(1);
            };
            let cfg = match ExperimentConfig::from_file(config_path) {
                Ok(c) => c,
                Err(e) => {
                    logger.log(LogLevel::Error, &e.to_string());
                    return ExitCode::from(1);
                }
            };
            logger.log(
                LogLevel::Info,
                &format!("loaded {} ({}), seed {}", config_path.display(), cfg.schema, cfg.seed),
            );
            if args.command == "run" {
                runner::run(&cfg, args.out_dir.as_deref())
            } else {
                runner::sweep(&cfg, args.out_dir.as_deref(), args.threads)
            }
        }
        "validate" => {
            // Standalone validation needs no config file; synthesize one.
            let cfg = ExperimentConfig {
                schema: SCHEMA.to_string(),
                seed: args.seed,
                game: fr_minmax::config::GameConfig {
                    generator: Some("smooth_sin".into()),
                    kernel_file: None,
                    grid: Default::default(),
                },
                sigma: 1.0,
                references: Default::default(),
                init: Default::default(),
                method: MethodConfig::Validate,
                outputs: Default::default(),
                sweep: None,
            };
            runner::run(&cfg, args.out_dir.as_deref())
        }
        other => {
            eprintln!("unknown command `{other}`\n{USAGE}");
            return ExitCode::from(1);
        }
    };

    match report {
        Ok(r) => {
            if r.all_passed {
                logger.log(LogLevel::Info, &format!("completed; artifacts in {}", r.out_dir.display()));
                ExitCode::SUCCESS
            } else {
                logger.log(LogLevel::Error, &format!("checks failed; see {}/summary.json", r.out_dir.display()));
                ExitCode::from(2)
            }
        }
        Err(e) => {
            logger.log(LogLevel::Error, &e.to_string());
            ExitCode::from(exit_code_for(&e))
        }
    }
}
