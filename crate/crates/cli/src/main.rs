//! `cspaces`: run the daemon, import corpora, drive scripted scenarios on a
//! virtual clock, and inspect or tidy a data directory.
//!
//! Exit codes: 0 success, 1 failed assertion or validation, 2 usage, 3 I/O.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cspaces_core::clock::{format_ts, parse_ts, wall_clock, Timestamp};
use cspaces_core::config::Config;
use cspaces_core::desk::keys;
use cspaces_core::graph::journal::LOG_FILE;
use cspaces_core::ingest::{self, Source};
use cspaces_core::scenario::run_scenario;
use cspaces_core::{Desk, Error, NodeId};

#[derive(Parser)]
#[command(name = "cspaces", version, about = "Context spaces desk: semantic desktop with managed forgetting")]
struct Cli {
    /// JSON config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's data directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP (WebDAV + API) and IMAP listeners until interrupted.
    Serve,
    /// Import files, mail, calendars, contacts or bookmarks into a context.
    Ingest(IngestArgs),
    /// Run a scenario script against a fresh in-memory desk.
    Scenario {
        file: PathBuf,
        /// Print the final event log as JSON lines.
        #[arg(long)]
        print_log: bool,
    },
    /// Run a tidy-up pass and print its report.
    Tidyup {
        #[arg(long)]
        now: Option<String>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Print deterministic listings.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Write a snapshot and truncate the log.
    Snapshot,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SourceArgs {
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    mbox: Option<PathBuf>,
    #[arg(long)]
    ics: Option<PathBuf>,
    #[arg(long)]
    vcf: Option<PathBuf>,
    #[arg(long)]
    bookmarks: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Context to file into; created when missing.
    #[arg(long)]
    context: String,
    #[arg(long)]
    now: Option<String>,
}

#[derive(Subcommand)]
enum Inspect {
    Contexts,
    Ctx { id: String },
    Unfiled,
    Log,
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Io(_) | Error::CorruptRecord { .. } | Error::GapInLog { .. } => Failure::Io(e.to_string()),
            e => Failure::Validation(format!("{}: {e}", e.code())),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Io(e.to_string())
    }
}

type Out = Result<(), Failure>;

fn now_arg(now: Option<&str>) -> Result<Timestamp, Failure> {
    match now {
        Some(t) => parse_ts(t).map_err(Failure::from),
        None => Ok(wall_clock()),
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    Ok(config)
}

fn open(config: &Config) -> Result<Desk, Failure> {
    Ok(Desk::open(&config.data_dir, config.desk_config())?)
}

fn cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn inspect(desk: &Desk, what: &Inspect, data_dir: &Path, out: &mut impl Write) -> Out {
    match what {
        Inspect::Contexts => {
            writeln!(out, "ID\tNAME\tSTATE\tPARENT\tMEMBERS\tCURRENT")?;
            let mut rows: Vec<_> = desk.contexts();
            rows.sort_by(|a, b| (&a.name, &a.id).cmp(&(&b.name, &b.id)));
            for c in rows {
                let parent = c.parent.as_ref().map_or("-".to_string(), NodeId::to_string);
                let current = desk.current_id() == Some(&c.id);
                writeln!(out, "{}\t{}\t{}\t{parent}\t{}\t{current}", c.id, cell(&c.name), c.state.as_str(), desk.member_count(&c.id))?;
            }
        }
        Inspect::Ctx { id } => {
            let id = NodeId::new(id);
            let c = desk.context(&id)?;
            writeln!(out, "{}\t{}\t{}", c.id, cell(&c.name), c.state.as_str())?;
            writeln!(out, "ITEM\tKIND\tNAME\tSTRENGTH\tORIGIN\tMEASURE\tPINNED\tLAST_ACCESS")?;
            for m in desk.members(&id) {
                let node = desk.node(&m.item)?;
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    m.item,
                    node.kind.as_str(),
                    cell(node.attrs.str(keys::NAME).unwrap_or("")),
                    m.strength,
                    m.origin.as_str(),
                    m.measure.as_str(),
                    m.pinned,
                    format_ts(m.last_access_at)
                )?;
            }
        }
        Inspect::Unfiled => {
            writeln!(out, "ID\tKIND\tNAME")?;
            for id in desk.unfiled() {
                let node = desk.node(&id)?;
                writeln!(out, "{id}\t{}\t{}", node.kind.as_str(), cell(node.attrs.str(keys::NAME).unwrap_or("")))?;
            }
        }
        Inspect::Log => {
            let path = data_dir.join(LOG_FILE);
            if path.exists() {
                out.write_all(&std::fs::read(path)?)?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Out {
    let config = load_config(&cli)?;
    let mut stdout = std::io::stdout().lock();
    match &cli.cmd {
        Cmd::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cspaces_server::serve(config))?;
        }
        Cmd::Ingest(a) => {
            let now = now_arg(a.now.as_deref())?;
            let s = &a.source;
            let (source, path) = [
                (Source::Dir, &s.dir),
                (Source::Mbox, &s.mbox),
                (Source::Ics, &s.ics),
                (Source::Vcf, &s.vcf),
                (Source::Bookmarks, &s.bookmarks),
            ]
            .into_iter()
            .find_map(|(k, p)| p.as_ref().map(|p| (k, p)))
            .ok_or_else(|| Failure::Validation("no source given".into()))?;
            if !path.exists() {
                return Err(Failure::Io(format!("{}: not found", path.display())));
            }
            let mut desk = open(&config)?;
            let ctx = ingest::context_by_name(&mut desk, &a.context, now)?;
            let counts = ingest::ingest(&mut desk, source, path, Some(&ctx), now)?;
            desk.close()?;
            writeln!(stdout, "{counts}")?;
        }
        Cmd::Scenario { file, print_log } => {
            let text = std::fs::read_to_string(file).map_err(|e| Failure::Io(format!("{}: {e}", file.display())))?;
            let mut desk = Desk::in_memory(config.desk_config())?;
            let base = file.parent().unwrap_or(Path::new("."));
            let outcome = run_scenario(&mut desk, &text, base).map_err(|e| Failure::Validation(e.to_string()))?;
            if *print_log {
                for r in desk.log_records().unwrap_or_default() {
                    writeln!(stdout, "{}", r.to_line())?;
                }
            }
            writeln!(
                stdout,
                "ok: {} steps, {} assertions, {} tidy-ups, {} events",
                outcome.steps,
                outcome.asserts,
                outcome.reports.len(),
                desk.seq()
            )?;
        }
        Cmd::Tidyup { now, dry_run } => {
            let now = now_arg(now.as_deref())?;
            let mut desk = open(&config)?;
            let report = if *dry_run { desk.preview_tidy_up(now)? } else { desk.tidy_up(now)? };
            if !*dry_run {
                desk.close()?;
            }
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report).unwrap_or_default())?;
        }
        Cmd::Inspect { what } => {
            let desk = open(&config)?;
            inspect(&desk, what, &config.data_dir, &mut stdout)?;
        }
        Cmd::Snapshot => {
            let mut desk = open(&config)?;
            desk.snapshot()?;
            writeln!(stdout, "snapshot at seq {}", desk.seq())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { tracing::Level::DEBUG } else { tracing::Level::INFO };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("io error: {m}");
            ExitCode::from(3)
        }
    }
}
