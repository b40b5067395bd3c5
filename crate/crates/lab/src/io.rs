//! Result CSVs, parameter checkpoints and dataset dumps.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ponlab_core::baselines::{Cnn, CnnConfig, Dnn, DnnConfig};
use ponlab_core::dataset::{Normalization, TargetMode, WindowedDataset};
use ponlab_core::fconvnet::{FConvNet, FConvNetConfig};
use ponlab_core::metrics::{ber_count, decide, BerCount, EqualizerReport};
use ponlab_core::training::{predict, History, Model};
use serde::{Deserialize, Serialize};

use crate::config::ModelId;
use crate::LabError;

fn create(path: &Path) -> Result<BufWriter<File>, LabError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| LabError::io(path, e))?))
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    LabError::Format(format!("{}: {e}", path.display()))
}

/// Writes `# config_sha256=<hash>` followed by a CSV body.
pub fn write_csv<R: AsRef<[u8]>>(path: &Path, hash: &str, header: &[&str], rows: &[Vec<R>]) -> Result<(), LabError> {
    let mut out = create(path)?;
    writeln!(out, "# config_sha256={hash}").map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// A CSV file written by [`write_csv`].
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    /// Leading `#` lines, verbatim.
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<CsvTable, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let comments = text.lines().take_while(|l| l.starts_with('#')).map(String::from).collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(String::from).collect());
    }
    Ok(CsvTable { comments, header, rows })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const BER_HEADER: [&str; 5] = ["model", "rop_dbm", "ber", "errors", "bits"];
pub const COMPLEXITY_HEADER: [&str; 4] = ["model", "rmps", "mber", "ber_c"];
pub const HISTORY_HEADER: [&str; 3] = ["epoch", "train_mse", "val_mse"];
pub const REPORT_HEADER: [&str; 13] = [
    "model",
    "config_hash",
    "rop_dbm",
    "ber",
    "bit_errors",
    "bits_counted",
    "symbol_errors",
    "ber_mean",
    "rmps",
    "seed",
    "low_confidence",
    "epochs",
    "best_val_mse",
];

pub fn ber_row(r: &EqualizerReport) -> Vec<String> {
    vec![r.model.clone(), r.rop_dbm.to_string(), r.ber.to_string(), r.bit_errors.to_string(), r.bits_counted.to_string()]
}

pub fn report_row(r: &EqualizerReport) -> Vec<String> {
    vec![
        r.model.clone(),
        r.config_hash.clone(),
        r.rop_dbm.to_string(),
        r.ber.to_string(),
        r.bit_errors.to_string(),
        r.bits_counted.to_string(),
        r.symbol_errors.to_string(),
        opt(r.ber_mean),
        r.rmps.to_string(),
        r.seed.to_string(),
        r.low_confidence.to_string(),
        opt(r.epochs),
        opt(r.best_val_mse),
    ]
}

pub fn history_rows(h: &History) -> Vec<Vec<String>> {
    h.epochs.iter().map(|e| vec![e.epoch.to_string(), e.train_mse.to_string(), e.val_mse.to_string()]).collect()
}

/// Model-specific architecture stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Fconvnet(FConvNetConfig),
    Dnn(DnnConfig),
    Cnn(CnnConfig),
}

impl Architecture {
    pub fn build(&self) -> Result<Box<dyn Model + Send>, LabError> {
        Ok(match self {
            Self::Fconvnet(c) => Box::new(FConvNet::new(c.clone(), 0)?),
            Self::Dnn(c) => Box::new(Dnn::new(c.clone(), 0)?),
            Self::Cnn(c) => Box::new(Cnn::new(c.clone(), 0)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON sidecar of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub config_hash: String,
    pub rop_dbm: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub normalization: Normalization,
    pub tensors: Vec<TensorShape>,
}

/// Weights file and sidecar paths for a checkpoint given either of them or
/// their common stem.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bin" | "json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn write_f64s(out: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(input: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            input.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

/// Writes `<stem>.bin` (little-endian f64, parameters in order) and
/// `<stem>.json`.
pub fn save_checkpoint(stem: &Path, model: &dyn Model, meta: &CheckpointMeta) -> Result<(), LabError> {
    let (bin, json) = checkpoint_paths(stem);
    let mut out = create(&bin)?;
    write_f64s(&mut out, &model.params().flatten()).map_err(|e| LabError::io(&bin, e))?;
    out.flush().map_err(|e| LabError::io(&bin, e))?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| LabError::Format(e.to_string()))?;
    fs::write(&json, text + "\n").map_err(|e| LabError::io(&json, e))
}

pub fn checkpoint_meta(
    id: ModelId,
    hash: &str,
    rop_dbm: f64,
    seed: u64,
    architecture: Architecture,
    model: &dyn Model,
    normalization: Normalization,
) -> CheckpointMeta {
    CheckpointMeta {
        model: id.to_string(),
        config_hash: hash.to_string(),
        rop_dbm,
        seed,
        architecture,
        normalization,
        tensors: model.params().iter().map(|(n, t)| TensorShape { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    }
}

/// Rebuilds the network and loads its weights; shapes must match the sidecar.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Box<dyn Model + Send>), LabError> {
    let (bin, json) = checkpoint_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| LabError::io(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| LabError::Format(format!("{}: {e}", json.display())))?;
    let mut model = meta.architecture.build()?;
    let expected: Vec<TensorShape> =
        model.params().iter().map(|(n, t)| TensorShape { name: n.to_string(), shape: t.shape().to_vec() }).collect();
    if expected != meta.tensors {
        return Err(LabError::Format(format!("{}: tensor shapes do not match the architecture", json.display())));
    }
    let bytes = fs::read(&bin).map_err(|e| LabError::io(&bin, e))?;
    let n = model.params().scalar_count();
    if bytes.len() != 8 * n {
        return Err(LabError::Format(format!("{}: {} bytes, expected {} parameters", bin.display(), bytes.len(), n)));
    }
    let values = read_f64s(&mut bytes.as_slice(), n).map_err(|e| LabError::io(&bin, e))?;
    model.params_mut().load_flat(&values)?;
    Ok((meta, model))
}

const DUMP_MAGIC: &[u8; 4] = b"PEQ1";

/// Dataset dump: `PEQ1`, then window count, ws and target-mode code as
/// little-endian u64, then all inputs and all targets as little-endian f64.
pub fn write_dataset(path: &Path, d: &WindowedDataset) -> Result<(), LabError> {
    let mut out = create(path)?;
    let io = |e| LabError::io(path, e);
    out.write_all(DUMP_MAGIC).map_err(io)?;
    for v in [d.len() as u64, d.ws() as u64, d.mode().code()] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    write_f64s(&mut out, d.inputs()).map_err(io)?;
    write_f64s(&mut out, d.targets()).map_err(io)?;
    out.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<WindowedDataset, LabError> {
    let mut input = BufReader::new(File::open(path).map_err(|e| LabError::io(path, e))?);
    let io = |e| LabError::io(path, e);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != DUMP_MAGIC {
        return Err(LabError::Format(format!("{}: not a PEQ1 dataset dump", path.display())));
    }
    let mut word = [0u8; 8];
    let mut header = [0u64; 3];
    for h in &mut header {
        input.read_exact(&mut word).map_err(io)?;
        *h = u64::from_le_bytes(word);
    }
    let [n, ws, mode] = header.map(|v| v as usize);
    let mode = TargetMode::from_code(mode as u64)?;
    let width = if mode == TargetMode::Sequence { ws } else { 1 };
    let inputs = read_f64s(&mut input, n * ws).map_err(io)?;
    let targets = read_f64s(&mut input, n * width).map_err(io)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(LabError::Format(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok(WindowedDataset::from_parts(ws, mode, inputs, targets, Normalization::identity())?)
}

/// Offline evaluation of a checkpoint on a dump in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub windows: usize,
    /// MSE on the PAM4 level scale.
    pub mse: f64,
    pub count: BerCount,
}

pub fn evaluate(model: &dyn Model, norm: &Normalization, d: &WindowedDataset) -> Result<EvalSummary, LabError> {
    if d.ws() != model.ws() || d.mode() != model.target_mode() {
        return Err(LabError::Format(format!(
            "dataset has ws {} / {:?}, model {} expects ws {} / {:?}",
            d.ws(),
            d.mode(),
            model.name(),
            model.ws(),
            model.target_mode()
        )));
    }
    let x: Vec<f64> = d.inputs().iter().map(|&v| norm.input(v)).collect();
    let y: Vec<f64> = predict(model, &x, d.len())?.into_iter().map(|v| norm.denormalize_target(v)).collect();
    let mse = y.iter().zip(d.targets()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len().max(1) as f64;
    let count = ber_count(&decide(&y, 0), &decide(d.targets(), 0), 0)?;
    Ok(EvalSummary { windows: d.len(), mse, count })
}
