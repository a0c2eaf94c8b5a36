use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use survclust::experiment::{
    cmd_gen_data, cmd_run, run_experiment, write_experiment, ExperimentSettings, RunOverrides,
    TABLE_METHODS,
};
use survclust::losses::Scenario;
use survclust::{Error, Result};

/// Default output root when `--out` is omitted.
const OUT_ENV: &str = "SURVCLUST_OUT";
const DESK_SCALE: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "survclust",
    version,
    about = "Outcome-aware clustering of patient trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as features.csv and labels.csv.
    GenData {
        /// Synthetic generator config (JSON); defaults to the full-size benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of the configured cohort size, in (0, 1].
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Pre-train, fine-tune and evaluate one model from a manifest.
    Run {
        /// Experiment manifest (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Number of clusters.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        skip_pretrain: bool,
    },
    /// Run every method at every k and write the agreement matrix.
    ReproduceTable2 {
        /// Experiment settings (JSON); defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of the cohort size, in (0, 1]; the desk preset defaults to 0.1.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn out_dir(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root =
            std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("survclust-out"), PathBuf::from);
        root.join(command)
    })
}

fn load_settings(path: Option<&Path>, scale: Option<f64>) -> Result<ExperimentSettings> {
    let Some(path) = path else {
        return ExperimentSettings::desk(scale.unwrap_or(DESK_SCALE));
    };
    let mut settings: ExperimentSettings =
        serde_json::from_str(&survclust::error::read_text(path)?)?;
    let Some(scale) = scale else {
        return Ok(settings);
    };
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::config("scale", "must lie in (0, 1]"));
    }
    settings.data.n_patients = (settings.data.n_patients as f64 * scale).round().max(1.0) as usize;
    Ok(settings)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            scale,
        } => {
            let out = out_dir(out, "data");
            let ds = cmd_gen_data(config.as_deref(), &out, seed, scale)?;
            println!("wrote {} patients to {}", ds.n_patients(), out.display());
        }
        Command::Run {
            config,
            out,
            seed,
            scenario,
            k,
            skip_pretrain,
        } => {
            let overrides = RunOverrides {
                seed,
                scenario,
                k,
                skip_pretrain,
                out,
            };
            let summary = cmd_run(&config, &overrides)?;
            for c in &summary.report.comparisons {
                println!("ARI vs {:<12} {:.4}", c.reference, c.ari);
            }
            println!("outputs in {}", summary.output_dir.display());
        }
        Command::ReproduceTable2 {
            config,
            out,
            scale,
            seed,
        } => {
            let out = out_dir(out, "table2");
            let mut settings =
                load_settings(config.as_deref(), scale).map_err(|e| Error::Stage {
                    stage: "config",
                    source: Box::new(e),
                })?;
            if let Some(seed) = seed {
                settings.seed = seed;
            }
            let result = run_experiment(&settings)?;
            write_experiment(&result, &settings, &out)?;
            print!("{}", result.table_csv(&settings.table_ks));
            println!(
                "{} methods, outputs in {}",
                TABLE_METHODS.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
