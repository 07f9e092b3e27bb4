//! activeduel: collect, export and analyze synthetic preference datasets.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activeduel::analysis::{analyze, prefix_eval, write_prefix_csv};
use activeduel::export::{
    ManifestFiles, RunManifest, load_checkpoint, load_json, load_jsonl, save_checkpoint, save_json,
    save_jsonl, save_metrics_csv,
};
use activeduel::oracle::{EnvDump, Environment};
use activeduel::pipeline::{OracleKind, Pipeline, RunConfig};
use activeduel::{Error, Method};
use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "activeduel", version, about = "Active preference-pair selection on a simulated judge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the collection loop and write the dataset, metrics, checkpoint and manifest
    Run {
        /// JSON run config; omitted fields take their defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<Method>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<OracleKind>,
        /// Stop after this many iterations (resume later from the checkpoint)
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Continue a run from its checkpoint
    Resume {
        checkpoint: PathBuf,
        /// Output directory (defaults to the checkpoint's directory)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Summarize a triplet JSONL file
    Analyze {
        dataset: PathBuf,
        /// Oracle-side environment dump; adds regret columns
        #[arg(long)]
        env_dump: Option<PathBuf>,
    },
    /// Score statistics over dataset prefixes, as CSV
    PrefixEval {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        prefix_sizes: Vec<usize>,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the generator profiles of a config's environment (oracle-side data)
    DumpEnv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn write_outputs(p: &Pipeline, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = ManifestFiles::default();
    let dataset = p.dataset();
    save_jsonl(&out.join(&files.dataset), &dataset)?;
    save_metrics_csv(&out.join(&files.metrics), p.metrics())?;
    save_checkpoint(&out.join(&files.checkpoint), &p.checkpoint())?;
    let manifest = RunManifest::new(p.config(), &dataset, p.metrics().len())?;
    save_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn drive(p: &mut Pipeline, out: &Path, max_iterations: Option<usize>) -> anyhow::Result<()> {
    let total = p.config().num_iterations();
    let mut ran = 0;
    while max_iterations.is_none_or(|m| ran < m) {
        let Some(m) = p.step()? else { break };
        info!(
            "iteration {}/{}: chosen {:.3} rejected {:.3} delta {:.3} regret {:.3} std {:.4}",
            m.iteration + 1,
            total,
            m.mean_chosen_score,
            m.mean_rejected_score,
            m.mean_delta,
            m.cumulative_dueling_regret,
            m.mean_ensemble_std
        );
        ran += 1;
    }
    write_outputs(p, out)?;
    if p.is_done() {
        info!("run complete: {} triplets in {}", p.dataset().len(), out.display());
    } else {
        info!("stopped after iteration {}; resume from {}", p.next_iteration(), out.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, seed, method, out, oracle, max_iterations } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(o) = oracle {
                cfg.oracle = o;
            }
            let out = out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("run"));
            let mut p = Pipeline::new(cfg)?;
            drive(&mut p, &out, max_iterations)
        }
        Command::Resume { checkpoint, out, max_iterations } => {
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
            });
            let mut p = Pipeline::from_checkpoint(ckpt)?;
            drive(&mut p, &out, max_iterations)
        }
        Command::Analyze { dataset, env_dump } => {
            let data = load_jsonl(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let env = match env_dump {
                Some(path) => {
                    let dump: EnvDump = load_json(&path)
                        .with_context(|| format!("reading environment dump {}", path.display()))?;
                    Some(Environment::from_dump(&dump)?)
                }
                None => None,
            };
            let report = analyze(&data, env.as_ref())?;
            print!("{}", report.render());
            Ok(())
        }
        Command::PrefixEval { dataset, prefix_sizes, out } => {
            let data = load_jsonl(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let rows = prefix_eval(&data, &prefix_sizes)?;
            match out {
                Some(path) => write_prefix_csv(fs::File::create(&path)?, &rows)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    write_prefix_csv(&mut stdout, &rows)?;
                    stdout.flush()?;
                }
            }
            Ok(())
        }
        Command::DumpEnv { config, out } => {
            let cfg = load_config(config.as_deref())?;
            cfg.env.validate()?;
            let dump = Environment::new(cfg.env)?.dump();
            match out {
                Some(path) => save_json(&path, &dump)?,
                None => println!("{}", serde_json::to_string_pretty(&dump)?),
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ACTIVEDUEL_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
