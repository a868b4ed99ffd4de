//! `msdgr`: feature-graph extraction, matching, evaluation, occlusion
//! synthesis, graph-layer training, and gradient verification.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msdgr::commands::{self, ScoreColumns};
use msdgr::config::{ExperimentConfig, Manifest};
use msdgr::matcher::AdjSign;

#[derive(Parser)]
#[command(
    name = "msdgr",
    about = "Multiscale dynamic graph representation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest CSV (`path,label`).
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Extract multiscale representations from a labeled image set.
    Extract {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for per-sample containers and index.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score all pairs between two extracted sets.
    Match {
        /// index.csv of the probe set.
        #[arg(long)]
        a: PathBuf,
        /// index.csv of the gallery set.
        #[arg(long)]
        b: PathBuf,
        /// static, dynamic, or both (two score columns).
        #[arg(long, default_value = "dynamic")]
        mode: String,
        /// +1 adds the structural distance, -1 subtracts it.
        #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
        adj_sign: i32,
        /// Score CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-node retained/removed dump CSV (dynamic modes).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Verification (and identification) metrics from a score CSV.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// FAR budgets for FRR reporting, comma separated.
        #[arg(long, default_value = "0.01,0.001")]
        far_targets: String,
        /// DET curve CSV to write (per score column).
        #[arg(long)]
        det: Option<PathBuf>,
        /// Text report destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train graph blocks with the triplet loss and persist them.
    TrainGraph {
        #[command(flatten)]
        common: ConfigArgs,
        /// Weight container to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch loss log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per layer.
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Apply the configured occlusion to a labeled image set.
    Occlude {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for occluded images, masks and index.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_far_targets(spec: &str) -> Result<Vec<f64>, msdgr::Error> {
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| msdgr::Error::Parameter(format!("bad far target `{t}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), msdgr::Error> {
    match cli.command {
        Command::Extract { common, out } => {
            let config = ExperimentConfig::load(&common.config)?;
            let manifest = Manifest::load(&common.manifest)?;
            let result = commands::cmd_extract(&config, &manifest, &out)?;
            println!(
                "extracted {} representations -> {}",
                result.files.len(),
                result.index.display()
            );
        }
        Command::Match {
            a,
            b,
            mode,
            adj_sign,
            out,
            dump,
        } => {
            let columns = ScoreColumns::parse(&mode)?;
            let sign = AdjSign::from_i32(adj_sign)?;
            let summary = commands::cmd_match(&a, &b, columns, sign, &out, dump.as_deref())?;
            println!("scored {} pairs -> {}", summary.pairs, summary.score_csv.display());
        }
        Command::Evaluate {
            scores,
            far_targets,
            det,
            report,
        } => {
            let targets = parse_far_targets(&far_targets)?;
            let result = commands::cmd_evaluate(&scores, &targets, det.as_deref())?;
            let text = result.to_text();
            match report {
                Some(path) => std::fs::write(path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::TrainGraph { common, out, log } => {
            let config = ExperimentConfig::load(&common.config)?;
            let manifest = Manifest::load(&common.manifest)?;
            let report = commands::cmd_train_graph(&config, &manifest, &out, log.as_deref())?;
            println!(
                "trained {} epochs: eval loss {:.6} -> {:.6}, weights -> {}",
                report.epochs.len(),
                report.initial_loss,
                report.final_loss,
                out.display()
            );
        }
        Command::Gradcheck { seed, instances } => {
            let report = commands::cmd_gradcheck(seed, instances);
            print!("{}", report.to_text());
            if !report.all_pass() {
                return Err(msdgr::Error::Verification(
                    "a gradient check exceeded the tolerance".into(),
                ));
            }
        }
        Command::Occlude { common, out } => {
            let config = ExperimentConfig::load(&common.config)?;
            let manifest = Manifest::load(&common.manifest)?;
            let result = commands::cmd_occlude(&config, &manifest, &out)?;
            println!(
                "occluded {} images -> {}",
                result.images.len(),
                result.index.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
