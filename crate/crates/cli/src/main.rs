use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use reident::config::RunConfig;
use reident::corpus::KnowledgeLevel;
use reident::pipeline::{cmd_attack, cmd_eval, cmd_export_pairs, cmd_index, replay_from_manifest, BackendSet};
use reident::synthetic::{generate, FixtureSpec};

#[derive(Parser)]
#[command(name = "reident", version, about = "Re-identification attacks against de-identified text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured knowledge level (L1..L4).
    #[arg(long)]
    level: Option<KnowledgeLevel>,
    /// Override the span-order seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the built-in deterministic backends instead of HTTP endpoints.
    #[arg(long)]
    mock: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(l) = self.level {
            cfg.level = l;
        }
        if let Some(s) = self.seed {
            cfg.infill.seed = s;
        }
        cfg.mock |= self.mock;
        let errs = cfg.problems();
        if !errs.is_empty() {
            return Err(reident::config::ConfigError { errors: errs }.into());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and store the corpus, and write the level's postings dump.
    Index(Common),
    /// Run the attack; resumes an interrupted run in the same directory.
    Attack(Common),
    /// Recompute the evaluation report from a run directory.
    Eval(Common),
    /// Export retriever training pairs as JSONL.
    ExportPairs {
        #[command(flatten)]
        common: Common,
        /// Output file (default: <output_dir>/pairs-<level>.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a finished attack offline from its logs and compare outputs.
    Replay(Common),
    /// Write a seeded synthetic corpus (JSONL) for trying the pipeline out.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        targets: usize,
        #[arg(long, default_value_t = 50)]
        background: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(c) => {
            let cfg = c.load()?;
            let s = cmd_index(&cfg)?;
            println!(
                "stored {} documents, {} masked documents ({} spans), corpus {}",
                s.store.documents, s.store.masked_documents, s.store.spans, s.store.content_hash
            );
            if let (Some(m), Some(p)) = (s.index, s.dump) {
                println!("{} index: {} docs, {} terms -> {}", cfg.level, m.n_docs, m.terms, p.display());
            }
        }
        Command::Attack(c) => {
            let cfg = c.load()?;
            let backends = BackendSet::from_config(&cfg)?;
            let s = cmd_attack(&cfg, &backends)?;
            println!(
                "{}: {} targets ({} attacked, {} resumed), manifest {}",
                s.run_dir.display(),
                s.targets,
                s.processed,
                s.resumed,
                &s.manifest_hash[..16]
            );
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let report = cmd_eval(&cfg.run_dir())?;
            print!("{}", report.render_table());
        }
        Command::ExportPairs { common, out } => {
            let cfg = common.load()?;
            let (path, stats) = cmd_export_pairs(&cfg, out)?;
            println!(
                "{}: {} spans, {} positive / {} negative pairs ({} spans skipped)",
                path.display(),
                stats.spans_exported,
                stats.positives,
                stats.negatives,
                stats.spans_skipped
            );
        }
        Command::Replay(c) => {
            let cfg = c.load()?;
            let r = replay_from_manifest(&cfg.run_dir())?;
            println!("{} documents replayed, {} identical", r.documents, r.identical);
            if !r.mismatches.is_empty() {
                anyhow::bail!("replay diverged for: {}", r.mismatches.join(", "));
            }
        }
        Command::Synth {
            out,
            targets,
            background,
            seed,
        } => {
            let fixture = generate(&FixtureSpec {
                targets,
                background,
                seed,
                ..FixtureSpec::default()
            });
            std::fs::write(&out, fixture.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}: {} documents, {} masked documents",
                out.display(),
                fixture.documents.len(),
                fixture.masked.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
