use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctcprobe::experiment::{run, run_stage, CorpusSpec, ExperimentConfig, Stage, OUTPUT_ROOT_ENV};
use ctcprobe::phoneset::Scheme;
use ctcprobe::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "ctcprobe", version, about = "Layer-wise phonetic probing of CTC speech models")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the ASR and probe corpora.
    Synth(Overrides),
    /// Train the acoustic model with the CTC loss.
    TrainAsr(Overrides),
    /// Write per-layer frame datasets from the trained model.
    Extract(Overrides),
    /// Train and evaluate one probe per layer and setting.
    Probe(Overrides),
    /// k-means, coverage pruning and 2-D centroid projection.
    Cluster(Overrides),
    /// Collect tables and plots from the probe and cluster results.
    Report(Overrides),
    /// All stages in order.
    Run(Overrides),
    /// Print the effective configuration as JSON and exit.
    Config(Overrides),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Experiment config (JSON). Without it, `<output-dir>/config.json` is
    /// used when present, else the defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Artifact directory. Relative paths resolve against $CTCPROBE_OUTPUT_ROOT.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Model preset: ds2, ds2-light, ds2-mini, ds2-light-mini.
    #[arg(long)]
    preset: Option<String>,

    #[arg(long)]
    hidden_size: Option<usize>,

    #[arg(long)]
    asr_utterances: Option<usize>,

    #[arg(long)]
    probe_utterances: Option<usize>,

    /// Synthetic noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,

    #[arg(long)]
    asr_epochs: Option<usize>,

    #[arg(long)]
    probe_epochs: Option<usize>,

    /// Comma-separated tap indices to probe (0 is the input).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,

    /// Comma-separated `on`/`off`.
    #[arg(long, value_delimiter = ',', value_parser = parse_switch)]
    strides: Option<Vec<bool>>,

    /// Comma-separated context window half-widths.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,

    /// Comma-separated label schemes: full, reduced48, sound_class.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,

    /// Comma-separated tap indices to cluster.
    #[arg(long, value_delimiter = ',')]
    cluster_layers: Option<Vec<usize>>,

    /// Clusters per layer.
    #[arg(long)]
    k: Option<usize>,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {s}")),
    }
}

fn default_output_dir() -> PathBuf {
    ExperimentConfig::default().output_dir
}

fn resolve(dir: &Path) -> PathBuf {
    ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
    .resolved_output_dir()
}

impl Overrides {
    fn config(&self) -> ctcprobe::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => {
                let dir = self.output_dir.clone().unwrap_or_else(default_output_dir);
                let saved = resolve(&dir).join("config.json");
                let mut c = if saved.is_file() {
                    ExperimentConfig::load(&saved)?
                } else {
                    ExperimentConfig::default()
                };
                c.output_dir = dir;
                c
            }
        };
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.preset {
            cfg.model.preset = p.clone();
        }
        if let Some(h) = self.hidden_size {
            cfg.model.hidden_size = Some(h);
        }
        if let CorpusSpec::Synthetic {
            asr_utterances,
            probe_utterances,
            noise_stddev,
            ..
        } = &mut cfg.corpus
        {
            if let Some(n) = self.asr_utterances {
                *asr_utterances = n;
            }
            if let Some(n) = self.probe_utterances {
                *probe_utterances = n;
            }
            if let Some(x) = self.noise {
                *noise_stddev = x;
            }
        } else if self.asr_utterances.is_some() || self.probe_utterances.is_some() || self.noise.is_some() {
            return Err(Error::Config("corpus size and noise flags apply to synthetic corpora only".into()));
        }
        if let Some(e) = self.asr_epochs {
            cfg.asr_training.epochs = e;
        }
        if let Some(e) = self.probe_epochs {
            cfg.probe.train.epochs = e;
        }
        if let Some(l) = &self.layers {
            cfg.probe_layers = Some(l.clone());
        }
        if let Some(s) = &self.strides {
            cfg.strides = s.clone();
        }
        if let Some(w) = &self.windows {
            cfg.windows = w.clone();
        }
        if let Some(s) = &self.schemes {
            cfg.schemes = s.clone();
        }
        if let Some(l) = &self.cluster_layers {
            cfg.clustering.layers = l.clone();
        }
        if let Some(k) = self.k {
            cfg.clustering.k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_STAGE,
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
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        ctcprobe::set_threads(n);
    }
    let (overrides, stage) = match &cli.command {
        Command::Synth(o) => (o, Some(Stage::Synth)),
        Command::TrainAsr(o) => (o, Some(Stage::TrainAsr)),
        Command::Extract(o) => (o, Some(Stage::Extract)),
        Command::Probe(o) => (o, Some(Stage::Probe)),
        Command::Cluster(o) => (o, Some(Stage::Cluster)),
        Command::Report(o) => (o, Some(Stage::Report)),
        Command::Run(o) | Command::Config(o) => (o, None),
    };
    let cfg = match overrides.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let res = match (&cli.command, stage) {
        (Command::Config(_), _) => {
            print!("{}", cfg.to_json());
            Ok(())
        }
        (_, Some(s)) => run_stage(&cfg, s),
        (_, None) => run(&cfg).map(|dir| println!("{}", dir.display())),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if std::env::var_os(OUTPUT_ROOT_ENV).is_some() {
                eprintln!("note: output root taken from ${OUTPUT_ROOT_ENV}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
