use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lmsoc::corpus::Mode;
use lmsoc::experiment::{self, Artifacts, ExperimentConfig, StageOutput, OUT_ENV};
use lmsoc::Error;

/// Socially grounded masked language modeling experiments.
///
/// Each subcommand runs one stage of an experiment described by a TOML config.
/// Artifacts go to `paths.out_dir`, or to `$LMSOC_OUT/<name>` (default root
/// `runs`) when unset.
#[derive(Parser, Debug)]
#[command(name = "lmsoc", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML). Built-in defaults apply when omitted.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.total_steps=500`.
    /// Values are parsed as TOML and fall back to plain strings.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides `paths.out_dir`).
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    None,
    Ctrl,
    Soc,
    /// Every mode listed in `experiment.modes`.
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the context graph (year chain or city kNN graph).
    BuildGraph(Common),
    /// Embed graph nodes with random walks and skip-gram.
    Embed(Common),
    /// Generate the grounded training corpus, answer key and cloze queries.
    GenCorpus(Common),
    /// Pretrain masked-LM models.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Which model to train.
        #[arg(short, long, value_enum, default_value = "all")]
        mode: ModeArg,
    },
    /// Evaluate every trained mode and write report.json, CSV tables and charts.
    Evaluate(Common),
    /// Re-render tables and charts from an existing report.json and print a summary.
    Report(Common),
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} must look like section.key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut table = root;
    for s in sections {
        table = table
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {s} is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, Artifacts), Error> {
    let mut table = match &common.config {
        Some(path) => {
            let text = lmsoc::fsutil::read_to_string(path)?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in &common.overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    let env_root = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let root = match &common.out {
        Some(dir) => dir.clone(),
        None => cfg.out_dir(env_root.as_deref()),
    };
    Ok((cfg, Artifacts::new(root)))
}

fn print(out: &StageOutput) {
    println!("{}", out.message.trim_end());
    for p in &out.written {
        println!("wrote {}", p.display());
    }
}

fn modes(cfg: &ExperimentConfig, arg: ModeArg) -> Result<Vec<Mode>, Error> {
    let one = |m: Mode| {
        if cfg.experiment.modes.contains(&m) {
            Ok(vec![m])
        } else {
            Err(Error::Config(format!("mode {} is not listed in experiment.modes", m.name())))
        }
    };
    match arg {
        ModeArg::None => one(Mode::None),
        ModeArg::Ctrl => one(Mode::Ctrl),
        ModeArg::Soc => one(Mode::Soc),
        ModeArg::All => Ok(cfg.experiment.modes.clone()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildGraph(c) => {
            let (cfg, art) = load_config(&c)?;
            print(&experiment::stage_build_graph(&cfg, &art)?);
        }
        Command::Embed(c) => {
            let (cfg, art) = load_config(&c)?;
            print(&experiment::stage_embed(&cfg, &art)?);
        }
        Command::GenCorpus(c) => {
            let (cfg, art) = load_config(&c)?;
            print(&experiment::stage_gen_corpus(&cfg, &art)?);
        }
        Command::Pretrain { common, mode } => {
            let (cfg, art) = load_config(&common)?;
            for m in modes(&cfg, mode)? {
                print(&experiment::stage_pretrain(&cfg, &art, m)?);
            }
        }
        Command::Evaluate(c) => {
            let (cfg, art) = load_config(&c)?;
            print(&experiment::stage_evaluate(&cfg, &art)?);
        }
        Command::Report(c) => {
            let (_, art) = load_config(&c)?;
            print(&experiment::stage_report(&art)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 1,
        Error::Io { path, .. } if !Path::new(path).exists() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
