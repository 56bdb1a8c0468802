use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agelab::harness::config::{Experiment, ExperimentConfig};
use agelab::harness::experiments::{self, OUTPUT_ROOT_VAR};
use agelab::harness::manifest::verify_manifest;
use agelab::harness::plot::{emit_plot, SeriesSpec};
use agelab::verify::run_checks;

#[derive(Parser)]
#[command(name = "agelab", version, about = "DQN training under observation attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    #[command(after_help = format!("Artifacts go to [experiment] output_dir, else ${OUTPUT_ROOT_VAR}/<id> (default runs/<id>)."))]
    Run { config: PathBuf },
    /// Render columns of a CSV log as an SVG line chart.
    Plot {
        csv: PathBuf,
        /// For example `x=episode;y=reward;window=100;title=Training`.
        spec: String,
        /// Defaults to the CSV path with an `.svg` extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Tabular threshold sweep; the config must use `id = "tabular-sweep"`.
    Sweep { config: PathBuf },
    /// Resilience benchmark; the config must use a `resilience:<strategy>` id.
    Bench { config: PathBuf },
    /// Run the built-in oracle checks, or check a run directory's manifest.
    Verify {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &PathBuf, accept: impl Fn(&Experiment) -> bool, expected: &str) -> anyhow::Result<ExperimentConfig> {
    let config = ExperimentConfig::load(path)?;
    if !accept(&config.experiment) {
        anyhow::bail!("{} runs `{}`, expected {expected}", path.display(), config.experiment);
    }
    Ok(config)
}

fn run(config: ExperimentConfig) -> anyhow::Result<()> {
    let artifact = experiments::run(&config)?;
    println!("{}: {} files in {}", config.experiment, artifact.files.len(), artifact.dir.display());
    for f in &artifact.files {
        println!("  {f}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => ExperimentConfig::load(&config).map_err(Into::into).and_then(run),
        Command::Sweep { config } => {
            load(&config, |e| *e == Experiment::TabularSweep, "tabular-sweep").and_then(run)
        }
        Command::Bench { config } => load(
            &config,
            |e| matches!(e, Experiment::Resilience(_)),
            "resilience:<strategy>",
        )
        .and_then(run),
        Command::Plot { csv, spec, output } => (|| {
            let spec: SeriesSpec = spec.parse()?;
            let output = output.unwrap_or_else(|| csv.with_extension("svg"));
            emit_plot(&csv, &spec, &output)?;
            println!("wrote {}", output.display());
            Ok(())
        })(),
        Command::Verify { manifest: Some(dir), .. } => (|| {
            let problems = verify_manifest(&dir)?;
            for p in &problems {
                println!("FAIL  {p}");
            }
            if problems.is_empty() {
                println!("PASS  manifest of {}", dir.display());
                Ok(())
            } else {
                anyhow::bail!("{} manifest problems", problems.len())
            }
        })(),
        Command::Verify { manifest: None, seed } => (|| {
            let checks = run_checks(seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                anyhow::bail!("{failed} checks failed");
            }
            Ok(())
        })(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
