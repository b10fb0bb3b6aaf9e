use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use relfeat_core::agents::RemoteConfig;
use relfeat_core::dsl::{validate_spec, FeatureSpec, ValidationLimits};
use relfeat_core::exec::{Executor, RowFilter};
use relfeat_core::orchestrator::{
    finalize, run_pipeline, BackendConfig, OrchestratorError, RunConfig, RunStatus,
};
use relfeat_core::rdb::{
    load_database, save_database, schema_descriptor, LoadedDatabase, SchemaSubset, SchemaView,
};
use relfeat_core::synth::{avito_mini, planted_signal};

/// Agent-driven relational feature generation.
#[derive(Debug, Parser)]
#[command(name = "relfeat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the schema description the agents see.
    Describe {
        #[command(flatten)]
        data: DataArgs,
        /// JSON schema subset, `{"table": ["column", ...]}`.
        #[arg(long)]
        subset: Option<PathBuf>,
    },
    /// Train on the target table alone and print validation and test AUROC.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train with a list of features and print validation and test AUROC.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// JSON array of feature specs, e.g. a run's accepted_features.json.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute one feature over every target row and summarize it.
    ExecFeature {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run the feature generation loop.
    Run(RunArgs),
    /// Write a synthetic dataset (manifest plus CSVs).
    Synth {
        #[arg(long, value_enum, default_value = "planted")]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Database manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    Planted,
    Avito,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Heuristic,
    Scripted,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    SkipSchema,
    RandomFilter,
    NoFeedback,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Base RunConfig (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Scripted-backend fixture.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// transcripts/ directory of an earlier run, for the replay backend.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Fraction of the train split used by validation-time models.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Config(_) => CliError::Usage(e.to_string()),
            OrchestratorError::Rdb(_) | OrchestratorError::Eval(_) => CliError::Data(e.to_string()),
            OrchestratorError::Backend(_) | OrchestratorError::Io(_) => CliError::Run(e.to_string()),
        }
    }
}

fn data_err(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data_err(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data_err(format!("{what} {}: {e}", path.display())))
}

fn load(data: &DataArgs) -> Result<LoadedDatabase, CliError> {
    let loaded = load_database(&data.manifest).map_err(data_err)?;
    if loaded.report.dangling_total() > 0 {
        log::warn!("{} dangling foreign-key value(s)", loaded.report.dangling_total());
    }
    Ok(loaded)
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("null".to_string(), |v| format!("{v:.6}"))
}

fn scores(loaded: &LoadedDatabase, features: &[FeatureSpec], config: &RunConfig) -> Result<(), CliError> {
    let fin = finalize(&loaded.db, &loaded.task, features, &config.train).map_err(data_err)?;
    println!("features: {}", features.len());
    println!("val_auroc: {:.6}", fin.val.auroc);
    println!("test_auroc: {:.6}", fin.test.auroc);
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.instances {
        cfg.instances = k;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iterations = n;
    }
    if let Some(f) = args.subsample {
        cfg.sample_fraction = f;
    }
    for a in &args.ablate {
        match a {
            Ablation::SkipSchema => cfg.ablations.skip_schema_selection = true,
            Ablation::RandomFilter => cfg.ablations.random_reasoning_filter = true,
            Ablation::NoFeedback => cfg.ablations.disable_feedback = true,
        }
    }
    let remote_flags = args.base_url.is_some() || args.model.is_some() || args.api_key_env.is_some();
    match args.backend {
        None => {}
        Some(BackendKind::Heuristic) => cfg.backend = BackendConfig::Heuristic,
        Some(BackendKind::Scripted) => {
            let fixture = args
                .fixture
                .clone()
                .ok_or_else(|| CliError::Usage("--backend scripted needs --fixture".into()))?;
            cfg.backend = BackendConfig::Scripted { fixture };
        }
        Some(BackendKind::Replay) => {
            let transcripts = args
                .transcripts
                .clone()
                .ok_or_else(|| CliError::Usage("--backend replay needs --transcripts".into()))?;
            cfg.backend = BackendConfig::Replay { transcripts };
        }
        Some(BackendKind::Remote) if !matches!(cfg.backend, BackendConfig::Remote(_)) => {
            cfg.backend = BackendConfig::Remote(RemoteConfig::default());
        }
        Some(BackendKind::Remote) => {}
    }
    if remote_flags {
        let BackendConfig::Remote(rc) = &mut cfg.backend else {
            return Err(CliError::Usage("--base-url, --model and --api-key-env need --backend remote".into()));
        };
        if let Some(u) = &args.base_url {
            rc.base_url = u.clone();
        }
        if let Some(m) = &args.model {
            rc.model = m.clone();
        }
        if let Some(k) = &args.api_key_env {
            rc.api_key_env = k.clone();
        }
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Describe { data, subset } => {
            let loaded = load(&data)?;
            let subset: Option<SchemaSubset> = subset.map(|p| read_json(&p, "subset")).transpose()?;
            let text = schema_descriptor(&loaded.db, &loaded.task, subset.as_ref()).map_err(data_err)?;
            print!("{text}");
            Ok(())
        }
        Command::Baseline { data, config } => {
            let cfg = base_config(config.as_deref())?;
            scores(&load(&data)?, &[], &cfg)
        }
        Command::Evaluate { data, features, config } => {
            let cfg = base_config(config.as_deref())?;
            let features: Vec<FeatureSpec> = match features {
                Some(p) => read_json(&p, "features")?,
                None => Vec::new(),
            };
            scores(&load(&data)?, &features, &cfg)
        }
        Command::ExecFeature { data, spec } => {
            let loaded = load(&data)?;
            let text = fs::read_to_string(&spec).map_err(|e| data_err(format!("spec {}: {e}", spec.display())))?;
            let spec = FeatureSpec::parse(&text).map_err(|e| data_err(format!("invalid spec: {e}")))?;
            let view = SchemaView::full(&loaded.db);
            if let Err(errors) = validate_spec(&spec, &view, &loaded.task, ValidationLimits::default()) {
                let lines: Vec<String> = errors.iter().map(|e| format!("  - {e}")).collect();
                return Err(data_err(format!("invalid spec {}:\n{}", spec.name, lines.join("\n"))));
            }
            let col = Executor::new(&view, &loaded.task)
                .execute(&spec, &RowFilter::All)
                .map_err(data_err)?;
            let s = col.summary();
            println!("feature: {}", spec.name);
            println!("rows: {}", s.rows);
            println!("non_null: {}", s.non_null);
            println!("mean: {}", fmt_opt(s.mean));
            println!("min: {}", fmt_opt(s.min));
            println!("max: {}", fmt_opt(s.max));
            Ok(())
        }
        Command::Run(args) => {
            let cfg = run_config(&args)?;
            let loaded = load(&args.data)?;
            let report = run_pipeline(&loaded.db, &loaded.task, &cfg, Some(&args.out_dir))?;
            println!("{}", report.summary());
            println!("run directory: {}", args.out_dir.display());
            if report.status == RunStatus::Aborted {
                return Err(CliError::Run(format!(
                    "run aborted: {}",
                    report.error.as_deref().unwrap_or("backend failure")
                )));
            }
            Ok(())
        }
        Command::Synth { kind, users, seed, out_dir } => {
            let ds = match kind {
                SynthKind::Planted => planted_signal(users, seed),
                SynthKind::Avito => avito_mini(users, seed),
            };
            let manifest = save_database(&ds.db, &ds.task, &out_dir).map_err(|e| CliError::Run(e.to_string()))?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
