use clap::{Parser, Subcommand};
use spikedisc::discrimination::{cosine_distance_matrix, export_heatmap_data, intra_inter_stats, FeatureBank};
use spikedisc::train::{evaluate, generate_avtoy, run_fusion, train, AvToySpec, ExperimentConfig};
use spikedisc::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spikedisc", version, about = "Spiking networks with L2-normalised heads: training and feature analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired audio-visual dataset.
    GenData {
        /// TOML dataset spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a visual or audio network.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on both splits of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write accumulated feature banks as `<stem>-train.sdt` / `<stem>-test.sdt`.
        #[arg(long)]
        export_features: Option<PathBuf>,
        /// Directory for confusion CSVs; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the fusion network on two frozen unimodal checkpoints.
    Fuse {
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Cosine-distance analysis of one or two feature banks.
    Analyze {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        bank2: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the layer listing of the network a config builds.
    Describe {
        #[arg(long)]
        config: PathBuf,
    },
}

fn analyze_bank(path: &Path, out: &Path, tag: &str) -> Result<serde_json::Value> {
    let bank = FeatureBank::load(path)?;
    let (bank, dropped) = bank.without_degenerate();
    if !dropped.is_empty() {
        log::warn!("{}: skipping {} zero feature vectors {:?}", path.display(), dropped.len(), dropped);
    }
    let m = cosine_distance_matrix(&bank)?;
    let stats = intra_inter_stats(&m)?;
    export_heatmap_data(&m, out.join(format!("{tag}-distances.csv")))?;
    Ok(serde_json::json!({
        "bank": path,
        "samples": bank.len(),
        "skipped_zero_vectors": dropped,
        "head": bank.meta.head,
        "mean_intra": stats.mean_intra,
        "mean_inter": stats.mean_inter,
        // JSON has no infinity; serialized as a string.
        "separability_ratio": if stats.separability_ratio.is_finite() {
            serde_json::json!(stats.separability_ratio)
        } else {
            serde_json::json!(stats.separability_ratio.to_string())
        },
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, seed, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => AvToySpec::default(),
            };
            let m = generate_avtoy(&spec, seed, &out)?;
            println!("wrote {} train / {} test pairs to {}", m.train_count, m.test_count, out.display());
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = train(&cfg)?;
            if let Some(last) = summary.metrics.last() {
                println!("epoch {}: train acc {:.4}, test acc {:.4}", last.epoch, last.train_acc, last.test_acc);
            }
            println!("metrics: {}\nbest: {}\nlast: {}", summary.metrics_path.display(), summary.best.display(), summary.last.display());
        }
        Command::Eval { ckpt, data, export_features, out } => {
            let out = out.unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
            let reports = evaluate(&ckpt, &data, &out, export_features.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&reports)?);
        }
        Command::Fuse { visual, audio, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_fusion(&visual, &audio, &cfg)?;
            if let Some(last) = summary.metrics.last() {
                println!("epoch {}: train acc {:.4}, test acc {:.4}", last.epoch, last.train_acc, last.test_acc);
            }
            println!("metrics: {}", summary.metrics_path.display());
        }
        Command::Analyze { bank, bank2, out } => {
            std::fs::create_dir_all(&out)?;
            let mut report = vec![analyze_bank(&bank, &out, "bank")?];
            if let Some(b2) = bank2 {
                report.push(analyze_bank(&b2, &out, "bank2")?);
            }
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::write(out.join("summary.json"), &text)?;
            println!("{text}");
        }
        Command::Describe { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}", cfg.build_model()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("SPIKEDISC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
