//! The batch commands behind the `deepisp` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::color::{bilinear_demosaic, histogram_stretch, BayerPattern, RawImage};
use crate::config::{Task, TrainConfig};
use crate::data::{synth_dataset, write_flat, Dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::imageio;
use crate::losses::LossConfig;
use crate::metrics::{fingerprint, EvalReport, EvalRow};
use crate::model::{Ablation, ModelParams};
use crate::train::{load_data, network_input, predict, validate, LogRow, Trainer, ValMetrics, LOG_HEADER};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const ABORT_FILE: &str = "abort.txt";

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    split: Split,
    spec: &'a SynthSpec,
    pairs: &'a [String],
}

/// Writes `spec.count` synthetic pairs in flat layout plus `manifest.toml`.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, split: Split, out: &Path) -> Result<Dataset> {
    let ds = synth_dataset(spec, seed, split)?;
    write_flat(&ds, out)?;
    let manifest = Manifest {
        seed,
        split,
        spec,
        pairs: &ds.names,
    };
    let path = out.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Rows produced by this invocation.
    pub rows: Vec<LogRow>,
    pub epoch: u64,
    pub checkpoint: PathBuf,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    pub fn final_val(&self) -> Option<ValMetrics> {
        self.rows.iter().rev().find_map(|r| r.val)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains per `cfg`, writing `config.toml`, `train_log.csv` and
/// `checkpoint.ckpt` into `out`.
///
/// With `resume` and an existing checkpoint, training continues from it and
/// log rows past the checkpoint's epoch are discarded first. On a
/// non-finite loss or gradient the run stops, the last checkpoint is left
/// in place and `abort.txt` records the cause.
pub fn cmd_train(cfg: &TrainConfig, out: &Path, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);
    let data = load_data(cfg)?;
    log::info!(
        "{}: {} train / {} val pairs, {} epochs",
        cfg.task,
        data.train.len(),
        data.val.len(),
        cfg.epochs
    );

    let (mut trainer, mut log_text) = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let kept = ck.epoch;
        let trainer = Trainer::resume(cfg.clone(), &data, ck)?;
        let old = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut text = String::new();
        for line in old.lines() {
            let epoch = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
            if epoch.is_none_or(|e| e <= kept) {
                text.push_str(line);
                text.push('\n');
            }
        }
        log::info!("resuming at epoch {kept}");
        (trainer, text)
    } else {
        (Trainer::new(cfg.clone(), &data)?, format!("{LOG_HEADER}\n"))
    };
    let _ = fs::remove_file(out.join(ABORT_FILE));
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    write_text(&log_path, &log_text)?;
    if trainer.epoch == 0 {
        trainer.checkpoint().save(&ck_path)?;
    }

    let mut rows = Vec::new();
    while trainer.epoch < cfg.epochs {
        let row = match trainer.run_epoch() {
            Ok(row) => row,
            Err(e) => {
                let msg = format!(
                    "training aborted during epoch {}: {e}\nlast good checkpoint: {} (epoch {})\n",
                    trainer.epoch + 1,
                    ck_path.display(),
                    Checkpoint::load(&ck_path).map(|c| c.epoch).unwrap_or(0)
                );
                log::error!("{}", msg.trim_end());
                write_text(&out.join(ABORT_FILE), &msg)?;
                return Err(e);
            }
        };
        log_text.push_str(&row.to_csv());
        log_text.push('\n');
        write_text(&log_path, &log_text)?;
        match row.val {
            Some(v) => log::info!(
                "epoch {}/{}: train loss {:.6}, val loss {:.6}, PSNR {:.2} dB",
                row.epoch,
                cfg.epochs,
                row.train_loss,
                v.loss,
                v.psnr
            ),
            None => log::info!("epoch {}/{}: train loss {:.6}", row.epoch, cfg.epochs, row.train_loss),
        }
        rows.push(row);
        let e = trainer.epoch;
        if e == cfg.epochs || (cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0) {
            trainer.checkpoint().save(&ck_path)?;
        }
    }
    Ok(TrainOutcome {
        params: trainer.params,
        rows,
        epoch: trainer.epoch,
        checkpoint: ck_path,
    })
}

/// What a checkpoint needs at inference time.
pub struct LoadedModel {
    pub params: ModelParams,
    pub task: Task,
    pub ablation: Ablation,
    pub fingerprint: String,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path)?;
    let task: Task = ck.task.parse()?;
    let ablation = if ck.config.is_empty() {
        Ablation::default()
    } else {
        TrainConfig::from_toml(&ck.config)?.ablation
    };
    Ok(LoadedModel {
        params: ck.params,
        task,
        ablation,
        fingerprint: fingerprint(&ck.config),
    })
}

fn image_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "pgm" | "ppm")))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InferOptions {
    pub stretch: bool,
    pub pattern: BayerPattern,
}

/// Runs a checkpoint on one raw mosaic or every image in a directory,
/// writing `<stem>.png` (16-bit) per input into `out`.
pub fn cmd_infer(checkpoint: &Path, input: &Path, out: &Path, opts: InferOptions) -> Result<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for file in image_files(input)? {
        let raw = RawImage::new(imageio::read_mosaic(&file)?, opts.pattern)?;
        let rgb = bilinear_demosaic(&raw);
        let mut result = predict(&model.params, model.task, model.ablation, &rgb)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", file.display())))?;
        if opts.stretch {
            let s = histogram_stretch(&result)?;
            if s.degenerate {
                log::warn!("{}: flat luminance, stretch skipped", file.display());
            }
            result = s.image;
        }
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        let dest = out.join(format!("{stem}.png"));
        imageio::write_rgb16(&dest, &result)?;
        written.push(dest);
    }
    Ok(written)
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Also score plain bilinear demosaicing, tagged `baseline`.
    pub baseline: bool,
    pub loss: LossConfig,
}

/// Scores a checkpoint (if given) and optionally the bilinear baseline on
/// every pair of `data`.
pub fn cmd_eval(checkpoint: Option<&Path>, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let model = checkpoint.map(load_model).transpose()?;
    let mut report = EvalReport {
        rows: Vec::new(),
        fingerprint: model.as_ref().map(|m| m.fingerprint.clone()).unwrap_or_default(),
    };
    for (pair, name) in data.pairs.iter().zip(&data.names) {
        let input = network_input(pair);
        if let Some(m) = &model {
            let start = Instant::now();
            let pred = predict(&m.params, m.task, m.ablation, &input)?;
            let elapsed = start.elapsed().as_secs_f64();
            report.rows.push(EvalRow::measure(name, "model", &pred, &pair.target, elapsed, &opts.loss)?);
        }
        if opts.baseline {
            report.rows.push(EvalRow::measure(name, "baseline", &input, &pair.target, 0.0, &opts.loss)?);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Depth,
    Width,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Self::Depth),
            "width" => Ok(Self::Width),
            other => Err(Error::InvalidInput(format!("unknown sweep axis `{other}` (depth, width)"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Depth => "depth",
            Self::Width => "width",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub val_psnr: f64,
    pub val_msssim: f64,
    pub final_train_loss: f64,
}

/// Trains one model per value of `axis` with everything else fixed and
/// writes `sweep_<axis>.csv` into `out`.
pub fn cmd_sweep(base: &TrainConfig, axis: SweepAxis, values: &[usize], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::Depth => cfg.model.n_ll = v,
            SweepAxis::Width => cfg.model.width = v,
        }
        let run_dir = out.join(format!("{axis}_{v}"));
        let outcome = cmd_train(&cfg, &run_dir, false)?;
        let data = load_data(&cfg)?;
        let val = validate(&outcome.params, &cfg, &data.val)?
            .ok_or_else(|| Error::Config("sweep needs a validation set (data.val_count > 0)".into()))?;
        rows.push(SweepRow {
            value: v,
            val_psnr: val.psnr,
            val_msssim: val.msssim,
            final_train_loss: outcome.final_train_loss().unwrap_or(f64::NAN),
        });
    }
    let path = out.join(format!("sweep_{axis}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([axis.to_string().as_str(), "val_psnr", "val_msssim", "final_train_loss"])?;
    for r in &rows {
        w.write_record([
            r.value.to_string(),
            r.val_psnr.to_string(),
            r.val_msssim.to_string(),
            r.final_train_loss.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    NoSkip,
    NoShared,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_skip" => Ok(Self::NoSkip),
            "no_shared" => Ok(Self::NoShared),
            other => Err(Error::InvalidInput(format!("unknown ablation `{other}` (no_skip, no_shared)"))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NoSkip => "no_skip",
            Self::NoShared => "no_shared",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub final_train_loss: f64,
    pub val: Option<ValMetrics>,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub mode: AblationMode,
    pub seed: u64,
    pub baseline: ArmResult,
    pub ablated: ArmResult,
}

impl AblationSummary {
    /// Ablated over baseline final training loss.
    pub fn loss_ratio(&self) -> f64 {
        self.ablated.final_train_loss / self.baseline.final_train_loss
    }

    pub fn to_text(&self) -> String {
        let val = |a: &ArmResult| match a.val {
            Some(v) => format!("val loss {:.6}  PSNR {:.2} dB  MS-SSIM {:.4}", v.loss, v.psnr, v.msssim),
            None => "no validation".into(),
        };
        format!(
            "ablation {} seed {}\n  baseline: train loss {:.6}  {}  params {}\n  ablated:  train loss {:.6}  {}  params {}\n  final-loss ratio (ablated / baseline): {:.4}\n",
            self.mode,
            self.seed,
            self.baseline.final_train_loss,
            val(&self.baseline),
            self.baseline.param_count,
            self.ablated.final_train_loss,
            val(&self.ablated),
            self.ablated.param_count,
            self.loss_ratio()
        )
    }
}

/// Trains `base` with and without the ablation under the same seed and
/// budget, writing both runs and `summary.txt` into `out`.
pub fn cmd_ablate(base: &TrainConfig, mode: AblationMode, out: &Path) -> Result<AblationSummary> {
    let mut plain = base.clone();
    plain.ablation = Ablation::default();
    let mut ablated = plain.clone();
    match mode {
        AblationMode::NoSkip => ablated.ablation.no_skip = true,
        AblationMode::NoShared => ablated.ablation.no_shared = true,
    }
    let arm = |cfg: &TrainConfig, name: &str| -> Result<ArmResult> {
        let outcome = cmd_train(cfg, &out.join(name), false)?;
        Ok(ArmResult {
            final_train_loss: outcome.final_train_loss().unwrap_or(f64::NAN),
            val: outcome.final_val(),
            param_count: outcome.params.param_count(),
        })
    };
    let summary = AblationSummary {
        mode,
        seed: base.seed,
        baseline: arm(&plain, "baseline")?,
        ablated: arm(&ablated, &mode.to_string())?,
    };
    let path = out.join("summary.txt");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(summary.to_text().as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
