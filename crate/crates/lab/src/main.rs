use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ponlab::config::{LoadedConfig, ModelId};
use ponlab::experiment;
use ponlab::io;
use ponlab::sweep::{self, point_stem};
use ponlab::LabError;

#[derive(Parser)]
#[command(name = "ponlab", version, about = "PAM4 upstream PON equalization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (model, ROP) point of a config and write the result CSVs.
    Sweep {
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Train one network at one ROP; writes its checkpoint, history and test split.
    Train {
        config: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long, allow_hyphen_values = true)]
        rop: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a PEQ1 dataset dump.
    Eval { checkpoint: PathBuf, dataset: PathBuf },
    /// Print the multiplications per symbol of every model in a config.
    Rmps { config: PathBuf },
}

fn sweep_cmd(config: &Path, out: Option<PathBuf>, quiet: bool) -> Result<i32, LabError> {
    let loaded = LoadedConfig::load(config)?;
    let dir = out.unwrap_or_else(|| loaded.config.output_dir.clone());
    let workers = sweep::worker_count()?;
    let outcome = sweep::run_sweep(&loaded, &dir, workers, quiet)?;
    for f in &outcome.failures {
        eprintln!("failed: {} @ {} dBm: {}", f.model, f.rop_dbm, f.message);
    }
    println!(
        "{} points ok, {} failed; results in {}",
        outcome.reports.len(),
        outcome.failures.len(),
        dir.display()
    );
    Ok(outcome.exit_code())
}

fn train_cmd(config: &Path, model: &str, rop: f64, out: Option<PathBuf>) -> Result<i32, LabError> {
    let loaded = LoadedConfig::load(config)?;
    let id: ModelId = model.parse()?;
    let arch = sweep::architecture(&loaded, id)?;
    let dir = out.unwrap_or_else(|| loaded.config.output_dir.clone());
    let point = experiment::run_point(&loaded.config, &loaded.hash, id, rop)?;
    let net = point.net.expect("networks return their parameters");
    let stem = dir.join(point_stem(id, rop));
    let meta = io::checkpoint_meta(id, &loaded.hash, rop, point.report.seed, arch, net.model.as_ref(), net.norm);
    io::save_checkpoint(&stem, net.model.as_ref(), &meta)?;
    io::write_csv(&stem.with_extension("history.csv"), &loaded.hash, &io::HISTORY_HEADER, &io::history_rows(&net.history))?;
    io::write_dataset(&stem.with_extension("test.peq"), &net.test_set.denormalized())?;
    let r = &point.report;
    println!(
        "{} @ {} dBm: BER {:e} ({} / {} bits), {} epochs, best val MSE {:e}",
        r.model,
        r.rop_dbm,
        r.ber,
        r.bit_errors,
        r.bits_counted,
        net.history.epochs.len(),
        net.history.best_val_mse
    );
    println!("checkpoint {}", io::checkpoint_paths(&stem).0.display());
    Ok(0)
}

fn eval_cmd(checkpoint: &Path, dataset: &Path) -> Result<i32, LabError> {
    let (meta, model) = io::load_checkpoint(checkpoint)?;
    let d = io::read_dataset(dataset)?;
    let s = io::evaluate(model.as_ref(), &meta.normalization, &d)?;
    println!("model,windows,mse,ber,bit_errors,bits");
    println!("{},{},{},{},{},{}", meta.model, s.windows, s.mse, s.count.ber, s.count.bit_errors, s.count.bits);
    Ok(0)
}

fn rmps_cmd(config: &Path) -> Result<i32, LabError> {
    let loaded = LoadedConfig::load(config)?;
    println!("model,rmps");
    for id in loaded.config.model_ids() {
        println!("{id},{}", experiment::rmps(&loaded.config, id)?);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep { config, out, quiet } => sweep_cmd(&config, out, quiet),
        Command::Train { config, model, rop, out } => train_cmd(&config, &model, rop, out),
        Command::Eval { checkpoint, dataset } => eval_cmd(&checkpoint, &dataset),
        Command::Rmps { config } => rmps_cmd(&config),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
