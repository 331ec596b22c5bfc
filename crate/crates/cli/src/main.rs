use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lakejoin_core::config::RunConfig;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "lakejoin", version, about = "Joinable table discovery over data lakes")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a lake and print its summary.
    Ingest(Common),
    /// Generate column-name variants and record them as a replay file.
    Augment {
        #[command(flatten)]
        common: Common,
        /// rule, file, llm or none.
        #[arg(long)]
        backend: Option<String>,
        /// Replay file for the file backend.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Build the hypergraph and positional encoding snapshot.
    Build(Common),
    /// Train the model and write a checkpoint and loss history.
    Train(Common),
    /// Write the column embedding store from a trained checkpoint.
    Embed(Common),
    /// Rank joinable columns for one query column.
    Query(QueryArgs),
    /// Evaluate retrieval on the lake's queries.
    Eval {
        #[command(flatten)]
        common: Common,
        /// full, no_cr, no_hin or no_hg; repeatable. All when omitted.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Run the property and numerical verification campaigns.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic lake.
    Synth {
        /// TOML file of synthetic-lake parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Lake root with manifest.json and tables/.
    root: PathBuf,
    /// Run configuration; defaults to <root>/lakejoin.toml when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory [default: <root>/lakejoin-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Embedding dimension of both the featurizer and the HIN.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    table: String,
    #[arg(long)]
    column: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    b: Option<usize>,
    /// Top-K by relevance, no coherence reranking.
    #[arg(long)]
    no_cr: bool,
    /// Result CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.root.join("lakejoin-out"))
    }

    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone().or_else(|| {
            let p = self.root.join("lakejoin.toml");
            p.exists().then_some(p)
        })
    }

    /// Config file (or defaults) with flag overrides applied, unvalidated.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match self.config_path() {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(d) = self.dim {
            cfg.featurizer.dim = d;
            cfg.hin.dim = d;
        }
        Ok(cfg)
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, configuration or i/o.
    Invalid(anyhow::Error),
    /// A verification gate did not pass.
    Gate,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            // Library errors already quote their sources.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Gate) => ExitCode::from(2),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(c) => commands::ingest(&c.root, &c.out_dir()),
        Command::Augment { common, backend, replay } => {
            let mut cfg = common.resolve()?;
            if let Some(b) = backend {
                cfg.augment.backend = commands::parse_backend(&b)?;
            }
            if replay.is_some() {
                cfg.augment.replay = replay;
            }
            commands::augment(&common.root, &common.out_dir(), cfg)
        }
        Command::Build(c) => commands::build(&c.root, &c.out_dir(), c.resolve()?),
        Command::Train(c) => commands::train(&c.root, &c.out_dir(), c.resolve()?),
        Command::Embed(c) => commands::embed(&c.root, &c.out_dir(), c.resolve()?),
        Command::Query(q) => {
            let mut cfg = q.common.resolve()?;
            if let Some(k) = q.k {
                cfg.search.k = k;
            }
            if let Some(l) = q.lambda {
                cfg.search.lambda = l;
            }
            if let Some(b) = q.b {
                cfg.search.b = b;
            }
            if q.no_cr {
                cfg.search.rerank = false;
            }
            let out = q.common.out_dir();
            commands::query(&q.common.root, &out, cfg, &q.table, &q.column, q.output.as_deref())
        }
        Command::Eval { common, variants } => {
            commands::eval(&common.root, &common.out_dir(), common.resolve()?, &variants)
        }
        Command::Verify { seed } => commands::verify(seed),
        Command::Synth { spec, out, seed } => commands::synth(spec.as_deref(), &out, seed),
    }
}
