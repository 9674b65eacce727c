use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use grace::feature_context::MaskMode;
use grace::gcn::Ablation;
use grace::harness::{self, parse_list, ExperimentConfig, HyperAxis};
use grace::Result;

/// Seeded benchmark harness for the GRACE head.
#[derive(Parser, Debug)]
#[command(name = "grace", version)]
struct Cli {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment and shuffle seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated evaluation masking ratios.
    #[arg(long = "m-r", global = true)]
    m_r: Option<String>,
    /// Restricts evaluation to one mask mode.
    #[arg(long = "mask-mode", global = true)]
    mask_mode: Option<String>,
    /// Comma-separated variants: gcn, glspr (gcn+glspr), sc (gcn+sc), full (gcn+glspr+sc), or all.
    #[arg(long, global = true)]
    ablate: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the dataset manifest.
    GenData,
    /// Train the configured variants and the baseline.
    Train {
        /// Continue from existing checkpoints up to the configured epoch count.
        #[arg(long)]
        resume: bool,
        /// Overrides the epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate trained checkpoints across masking ratios and modes.
    Sweep,
    /// Train and evaluate one model per value of a hyperparameter.
    HyperSweep {
        /// N, g_n, alpha, g_dim or n_out.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Spectral certificate and convergence audit.
    Audit {
        /// GRACE checkpoint; a freshly initialized model is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Multiplies every graph-convolution weight before auditing.
        #[arg(long)]
        weight_scale: Option<f64>,
    },
}

fn parse_ablations(text: &str) -> Result<Vec<Ablation>> {
    if text.trim() == "all" {
        return Ok(Ablation::ALL.to_vec());
    }
    parse_list(text)
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(list) = &cli.m_r {
        cfg.eval_m_r_list = parse_list(list)?;
    }
    if let Some(mode) = &cli.mask_mode {
        cfg.eval_modes = vec![mode.parse::<MaskMode>()?];
    }
    if let Some(list) = &cli.ablate {
        cfg.ablations = parse_ablations(list)?;
    }
    Ok(cfg)
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = resolve_config(&cli)?;
    let layout = harness::Layout::new(&cfg.output_dir);
    match cli.command {
        Command::GenData => {
            let path = harness::gen_data(&cfg)?;
            Ok(json!({ "command": "gen-data", "outputs": display(&[path]) }))
        }
        Command::Train { resume, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let paths = harness::train_models(&cfg, resume)?;
            Ok(json!({ "command": "train", "outputs": display(&paths) }))
        }
        Command::Sweep => {
            let report = harness::sweep(&cfg)?;
            Ok(json!({
                "command": "sweep",
                "rows": report.rows.len(),
                "outputs": display(&[layout.sweep_json(), layout.sweep_csv()]),
            }))
        }
        Command::HyperSweep { axis, values } => {
            let axis: HyperAxis = axis.parse()?;
            let values: Vec<f64> = parse_list(&values)?;
            let report = harness::hyper_sweep(&cfg, axis, &values)?;
            Ok(json!({
                "command": "hyper-sweep",
                "rows": report.rows.len(),
                "outputs": display(&[layout.hyper(axis, "json"), layout.hyper(axis, "csv")]),
            }))
        }
        Command::Audit {
            checkpoint,
            weight_scale,
        } => {
            if let Some(k) = weight_scale {
                cfg.audit_weight_scale = k;
            }
            let out = harness::audit(&cfg, checkpoint.as_deref())?;
            let dir = layout.audit_dir();
            Ok(json!({
                "command": "audit",
                "interval_check": out.spectral.certificate.interval_check,
                "l_f": out.convergence.assumptions.l_f,
                "outputs": display(&[dir.join("spectral.json"), dir.join("convergence.json"), dir.join("ratios.csv")]),
            }))
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.to_string().trim_end().to_string(), 2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
