//! Parallel execution of a (model x ROP) sweep and result emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::OnceLock;
use std::time::Instant;

use ponlab_core::metrics::{ber_c, median, BerCurve, EqualizerReport};

use crate::config::{LoadedConfig, ModelId};
use crate::experiment::{self, Recordings};
use crate::io::{self, Architecture};
use crate::LabError;

/// Environment variable holding the worker count of the sweep pool.
pub const WORKERS_ENV: &str = "PONLAB_WORKERS";

/// Workers from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> Result<usize, LabError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| LabError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// File stem of a per-point artifact, e.g. `fconvnet-64_rop-8`.
pub fn point_stem(id: ModelId, rop_dbm: f64) -> String {
    format!("{id}_rop{rop_dbm}")
}

pub struct PointFailure {
    pub model: ModelId,
    pub rop_dbm: f64,
    pub message: String,
}

pub struct SweepOutcome {
    /// Successful points in config order (model-major, ROP-minor).
    pub reports: Vec<EqualizerReport>,
    pub failures: Vec<PointFailure>,
    pub output_dir: PathBuf,
    /// Wall-clock seconds of the point loop.
    pub elapsed_s: f64,
    pub workers: usize,
}

impl SweepOutcome {
    /// 0 when every point succeeded, 2 when some did, 1 when none did.
    pub fn exit_code(&self) -> i32 {
        match (self.failures.is_empty(), self.reports.is_empty()) {
            (true, _) => 0,
            (false, false) => 2,
            (false, true) => 1,
        }
    }
}

struct Job {
    model: ModelId,
    rop_index: usize,
}

/// Runs every point on a bounded pool; the calling thread collects results
/// and writes the per-point files, then the summary files.
pub fn run_sweep(loaded: &LoadedConfig, output_dir: &Path, workers: usize, quiet: bool) -> Result<SweepOutcome, LabError> {
    let cfg = &loaded.config;
    fs::create_dir_all(output_dir).map_err(|e| LabError::io(output_dir, e))?;
    let copy = output_dir.join("config.toml");
    fs::write(&copy, &loaded.text).map_err(|e| LabError::io(&copy, e))?;
    let resolved = output_dir.join("resolved_config.toml");
    fs::write(&resolved, cfg.resolved_toml()).map_err(|e| LabError::io(&resolved, e))?;

    let models = cfg.model_ids();
    let jobs: Vec<Job> = models
        .iter()
        .flat_map(|&model| (0..cfg.rops_dbm.len()).map(move |rop_index| Job { model, rop_index }))
        .collect();
    // recordings are shared by every model at one ROP
    let cache: Vec<OnceLock<Result<Recordings, String>>> = cfg.rops_dbm.iter().map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let mut slots: Vec<Option<Result<EqualizerReport, String>>> = jobs.iter().map(|_| None).collect();
    let started = Instant::now();

    let workers = workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| -> Result<(), LabError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, cache, next) = (&jobs, &cache, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let rop = cfg.rops_dbm[job.rop_index];
                let rec = cache[job.rop_index].get_or_init(|| experiment::recordings(cfg, rop).map_err(|e| e.to_string()));
                let result = match rec {
                    Ok(rec) => experiment::run_point_on(cfg, &loaded.hash, job.model, rop, rec).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("link simulation: {e}")),
                };
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (done, (i, result)) in rx.iter().enumerate() {
            let job = &jobs[i];
            let rop = cfg.rops_dbm[job.rop_index];
            let stem = point_stem(job.model, rop);
            let line = match &result {
                Ok(p) => format!("BER {:.3e} ({} errors)", p.report.ber, p.report.bit_errors),
                Err(e) => format!("failed: {e}"),
            };
            if !quiet {
                eprintln!(
                    "[{:>3}/{}] {:>7.1} s  {} @ {} dBm: {line}",
                    done + 1,
                    jobs.len(),
                    started.elapsed().as_secs_f64(),
                    job.model,
                    rop
                );
            }
            slots[i] = Some(match result {
                Ok(p) => {
                    if let Some(net) = &p.net {
                        let h = output_dir.join("history").join(format!("{stem}.csv"));
                        io::write_csv(&h, &loaded.hash, &io::HISTORY_HEADER, &io::history_rows(&net.history))?;
                        let arch = architecture(loaded, job.model)?;
                        let meta = io::checkpoint_meta(
                            job.model,
                            &loaded.hash,
                            rop,
                            p.report.seed,
                            arch,
                            net.model.as_ref(),
                            net.norm,
                        );
                        io::save_checkpoint(&output_dir.join("checkpoints").join(&stem), net.model.as_ref(), &meta)?;
                    }
                    Ok(p.report)
                }
                Err(e) => Err(e),
            });
        }
        Ok(())
    })?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (job, slot) in jobs.iter().zip(slots) {
        match slot.expect("every job reports back") {
            Ok(r) => reports.push(r),
            Err(message) => failures.push(PointFailure { model: job.model, rop_dbm: cfg.rops_dbm[job.rop_index], message }),
        }
    }
    let outcome = SweepOutcome {
        reports,
        failures,
        output_dir: output_dir.to_path_buf(),
        elapsed_s: started.elapsed().as_secs_f64(),
        workers,
    };
    emit(loaded, &outcome, &models)?;
    Ok(outcome)
}

pub fn architecture(loaded: &LoadedConfig, id: ModelId) -> Result<Architecture, LabError> {
    let cfg = &loaded.config;
    Ok(match id {
        ModelId::FConvNet(ws) => Architecture::Fconvnet(experiment::fconvnet_config(cfg, ws)),
        ModelId::Dnn => Architecture::Dnn(cfg.dnn.clone()),
        ModelId::Cnn => Architecture::Cnn(cfg.cnn.clone()),
        ModelId::Sato(_) => return Err(LabError::Config(format!("{id} has no checkpoint"))),
    })
}

fn curve(reports: &[EqualizerReport], id: ModelId) -> BerCurve {
    let name = id.to_string();
    let points = reports.iter().filter(|r| r.model == name).map(|r| (r.rop_dbm, r.ber)).collect();
    BerCurve { name, points }
}

/// Summary files: ber_vs_rop.csv, reports.csv, complexity.csv, curves.csv,
/// gains.csv, runtime.csv and errors.log.
fn emit(loaded: &LoadedConfig, outcome: &SweepOutcome, models: &[ModelId]) -> Result<(), LabError> {
    let dir = &outcome.output_dir;
    let hash = &loaded.hash;
    let target = loaded.config.target_ber;
    let reports = &outcome.reports;

    let log = dir.join("errors.log");
    let text: String = outcome.failures.iter().map(|f| format!("{} rop_dbm={}: {}\n", f.model, f.rop_dbm, f.message)).collect();
    fs::write(&log, text).map_err(|e| LabError::io(&log, e))?;

    let rows: Vec<Vec<String>> = reports.iter().map(io::ber_row).collect();
    io::write_csv(&dir.join("ber_vs_rop.csv"), hash, &io::BER_HEADER, &rows)?;
    let rows: Vec<Vec<String>> = reports.iter().map(io::report_row).collect();
    io::write_csv(&dir.join("reports.csv"), hash, &io::REPORT_HEADER, &rows)?;

    let mut complexity = Vec::new();
    let mut curves = Vec::new();
    for &id in models {
        let c = curve(reports, id);
        if c.points.is_empty() {
            continue;
        }
        let bers: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        let mber = median(&bers)?;
        let rmps = experiment::rmps(&loaded.config, id)?;
        let bc = ber_c(mber, rmps as f64)?;
        complexity.push(vec![c.name.clone(), rmps.to_string(), mber.to_string(), bc.value.to_string()]);
        let monotone = bers.windows(2).all(|w| w[1] <= w[0]);
        let crossing = c.crossing(target).map(|r| r.to_string()).unwrap_or_default();
        curves.push(vec![c.name.clone(), c.points.len().to_string(), monotone.to_string(), crossing]);
    }
    io::write_csv(&dir.join("complexity.csv"), hash, &io::COMPLEXITY_HEADER, &complexity)?;
    io::write_csv(&dir.join("curves.csv"), hash, &["model", "points", "monotone", "rop_at_target_dbm"], &curves)?;

    let mut gains = Vec::new();
    for (i, &a) in models.iter().enumerate() {
        for &b in &models[i + 1..] {
            let (ca, cb) = (curve(reports, a), curve(reports, b));
            let (gain, note) = match ponlab_core::metrics::sensitivity_gain(&ca, &cb, target) {
                Ok(g) => (g.to_string(), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            gains.push(vec![a.to_string(), b.to_string(), target.to_string(), gain, note]);
        }
    }
    io::write_csv(&dir.join("gains.csv"), hash, &["model_a", "model_b", "target_ber", "gain_db", "note"], &gains)?;
    let runtime = vec![vec![outcome.elapsed_s.to_string(), outcome.workers.to_string(), reports.len().to_string()]];
    io::write_csv(&dir.join("runtime.csv"), hash, &["elapsed_s", "workers", "points"], &runtime)
}
