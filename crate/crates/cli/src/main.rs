use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pga_core::index::{collect_stats, emit_csv, IndexError, LanguageRules};
use pga_core::pipeline::{filter_repository_list, read_repository_list, run_pipeline, write_repository_list, FsRemoteSource};
use pga_core::siva::{Archive, ArchiveWriter};
use pga_core::store::{load_dir_lenient, write_atomic, RootedStore};
use pga_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "pga", version, about = "Build and inspect a git repository archive")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a repository list by stargazers and language.
    Filter(FilterArgs),
    /// Fetch listed repositories into the rooted store.
    Fetch(FetchArgs),
    /// Write the CSV index for the fetched repositories.
    Index(IndexArgs),
    /// Inspect or build archive files.
    #[command(subcommand)]
    Archive(ArchiveCommand),
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    list: PathBuf,
    #[arg(long, default_value_t = 50)]
    min_stars: u64,
    /// Keep only this main language; repeatable. Default keeps all.
    #[arg(long = "lang")]
    languages: Vec<String>,
    /// Filtered list; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    list: PathBuf,
    /// Directory of remotes to fetch from.
    #[arg(long)]
    source: PathBuf,
    #[arg(long, env = "PGA_STORE")]
    store: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, env = "PGA_STORE")]
    store: PathBuf,
    #[arg(long)]
    list: PathBuf,
    /// CSV output; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Language rule file replacing the built-in table.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ArchiveCommand {
    /// Print resolved entries: name, size, block offset.
    List { archive: PathBuf },
    /// Extract resolved entries into a directory.
    Unpack { archive: PathBuf, dir: PathBuf },
    /// Create an archive from the files under a directory.
    Pack { dir: PathBuf, archive: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Filter(args) => cmd_filter(&args),
        Command::Fetch(args) => cmd_fetch(&args),
        Command::Index(args) => cmd_index(&args),
        Command::Archive(cmd) => cmd_archive(&cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_list(path: &Path) -> Result<Vec<pga_core::RepoListRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_repository_list(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn cmd_filter(args: &FilterArgs) -> Result<()> {
    let rows = read_list(&args.list)?;
    let languages: BTreeSet<String> = args.languages.iter().cloned().collect();
    let outcome = filter_repository_list(&rows, args.min_stars, &languages);
    let mut buf = Vec::new();
    write_repository_list(&mut buf, &outcome.kept)?;
    write_output(args.out.as_deref(), &buf)?;
    let dropped = outcome.dropped + outcome.duplicates;
    if args.out.is_some() {
        println!("kept {} dropped {dropped}", outcome.kept.len());
    } else {
        eprintln!("kept {} dropped {dropped}", outcome.kept.len());
    }
    Ok(())
}

fn cmd_fetch(args: &FetchArgs) -> Result<()> {
    let rows = read_list(&args.list)?;
    let store = RootedStore::open(&args.store).with_context(|| format!("opening store {}", args.store.display()))?;
    probe_writable(&args.store)?;
    let source = FsRemoteSource::new(&args.source);
    let config = PipelineConfig {
        workers: args.workers as usize,
        max_retries: args.max_retries,
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&rows, &source, &store, &config);
    for r in &report.results {
        info!("{} {} {} {:?}", r.job_id, r.url, r.status.as_str(), r.duration);
    }
    println!("{}", report.summary());
    for (kind, n) in report.failures_by_kind() {
        println!("{}: {n}", kind.as_str());
    }
    if report.retries > 0 {
        println!("{} retries", report.retries);
    }
    println!("{} objects added", report.objects_added());
    Ok(())
}

fn probe_writable(dir: &Path) -> Result<()> {
    tempfile::Builder::new()
        .prefix(".probe")
        .tempfile_in(dir)
        .map(drop)
        .with_context(|| format!("store {} is not writable", dir.display()))
}

fn cmd_index(args: &IndexArgs) -> Result<()> {
    if !args.store.is_dir() {
        bail!("store {} does not exist", args.store.display());
    }
    let rules = match &args.rules {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            LanguageRules::parse(&text)?
        }
        None => LanguageRules::builtin(),
    };
    let rows = read_list(&args.list)?;
    let (set, failures) = load_dir_lenient(&args.store)?;
    for f in &failures {
        warn!("skipping unreadable archive: {f}");
    }
    let mut index_rows = Vec::new();
    for row in &rows {
        match collect_stats(&set, &row.url, &rules) {
            Ok(r) => index_rows.push(r),
            Err(IndexError::NotFound(url)) => warn!("skipping {url}: not in store"),
            Err(e) => warn!("skipping {}: {e}", row.url),
        }
    }
    let mut buf = Vec::new();
    emit_csv(&index_rows, &mut buf)?;
    write_output(args.out.as_deref(), &buf)?;
    info!("indexed {} of {} repositories", index_rows.len(), rows.len());
    Ok(())
}

fn open_archive(path: &Path) -> Result<Archive<BufReader<File>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Archive::open(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_archive(cmd: &ArchiveCommand) -> Result<()> {
    match cmd {
        ArchiveCommand::List { archive } => {
            let archive = open_archive(archive)?;
            let mut out = io::stdout().lock();
            for (name, record) in archive.resolved() {
                writeln!(out, "{name}\t{}\t{}", record.entry.size, record.block_start)?;
            }
        }
        ArchiveCommand::Unpack { archive: path, dir } => {
            let mut archive = open_archive(path)?;
            let records: Vec<_> = archive.resolved().values().cloned().collect();
            for record in records {
                let payload = archive.read(&record).with_context(|| format!("reading {}", path.display()))?;
                let target = dir.join(&record.name);
                if let Some(parent) = target.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                write_atomic(&target, &payload).with_context(|| format!("writing {}", target.display()))?;
            }
        }
        ArchiveCommand::Pack { dir, archive } => {
            let mut files = Vec::new();
            for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
                let entry = entry?;
                if entry.file_type().is_file() {
                    let rel = entry.path().strip_prefix(dir)?;
                    let name = rel
                        .components()
                        .map(|c| c.as_os_str().to_str().context("non-UTF-8 file name"))
                        .collect::<Result<Vec<_>>>()?
                        .join("/");
                    files.push((name, entry.into_path()));
                }
            }
            files.sort();
            let mut writer = ArchiveWriter::new(Vec::new());
            for (name, path) in &files {
                let payload = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                writer.write_entry(name, &payload)?;
            }
            let bytes = writer.finish()?;
            write_atomic(archive, &bytes).with_context(|| format!("writing {}", archive.display()))?;
            info!("packed {} files into {}", files.len(), archive.display());
        }
    }
    Ok(())
}
