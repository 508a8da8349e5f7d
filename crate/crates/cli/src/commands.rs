//! The five batch commands. Each one receives a resolved config, writes
//! its artifacts under the output directory, and returns a short summary
//! for stdout. Partial outputs are removed when a command fails, but
//! files that already existed before the run are left alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use semcom::data::{
    default_split_counts, load_dataset, make_gt_density, split, synth_generate, write_corpus,
};
use semcom::eval::{
    compare_report, evaluate_model, overhead, p_sweep, MetricsReport, OverheadCodec,
    PUBLISHED_BASELINES,
};
use semcom::training::{checkpoint_load, Trainer, BEST_CHECKPOINT, FINAL_CHECKPOINT, LOSS_CSV};
use semcom::{AnnotatedFrame, Real, SemComModel};

use crate::config::FileConfig;

pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const OVERHEAD_CSV: &str = "overhead.csv";

/// Run `body`; on failure delete whichever declared outputs appeared
/// during the run (pre-existing files and directories are kept).
fn guarded<T>(outputs: &[PathBuf], body: impl FnOnce() -> Result<T>) -> Result<T> {
    let pre_existing: Vec<bool> = outputs.iter().map(|p| p.exists()).collect();
    let result = body();
    if result.is_err() {
        for (path, existed) in outputs.iter().zip(&pre_existing) {
            if !existed && path.exists() {
                let removed = if path.is_dir() {
                    fs::remove_dir_all(path)
                } else {
                    fs::remove_file(path)
                };
                if let Err(e) = removed {
                    eprintln!("warning: could not remove partial output {}: {}", path.display(), e);
                }
            }
        }
    }
    result
}

pub fn synth(cfg: &FileConfig, out: &Path) -> Result<String> {
    let synth_cfg = cfg.synth.to_core();
    let outputs = [out.join("images"), out.join("annotations")];
    guarded(&outputs, || {
        let frames = synth_generate::<Real>(&synth_cfg).context("generating corpus")?;
        write_corpus(&frames, out).context("writing corpus")?;
        let dots: usize = frames.iter().map(|f| f.count()).sum();
        Ok(format!(
            "wrote {} frames ({}x{}, {} dots) to {}",
            frames.len(),
            synth_cfg.image_size.0,
            synth_cfg.image_size.1,
            dots,
            out.display()
        ))
    })
}

/// Load a corpus and cut it into the standard contiguous splits.
fn load_splits(
    dataset: &Path,
    rgb: bool,
) -> Result<(Vec<AnnotatedFrame>, Vec<AnnotatedFrame>, Vec<AnnotatedFrame>)> {
    let frames = load_dataset::<Real>(dataset, rgb)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let counts = default_split_counts(frames.len());
    split(frames, counts).context("splitting dataset").map_err(Into::into)
}

fn check_frame_geometry(frames: &[AnnotatedFrame], cfg: &FileConfig) -> Result<()> {
    let enc = &cfg.encoder;
    for frame in frames.iter().take(1) {
        let shape = frame.image.shape();
        if shape != [enc.input_channels, enc.input_height, enc.input_width] {
            bail!(
                "dataset frames are {}x{}x{} but the encoder expects {}x{}x{} \
                 (channels x height x width); adjust the [encoder] config",
                shape[0],
                shape[1],
                shape[2],
                enc.input_channels,
                enc.input_height,
                enc.input_width
            );
        }
    }
    Ok(())
}

pub fn train(cfg: &FileConfig, dataset: &Path, out: &Path) -> Result<String> {
    let enc_cfg = cfg.encoder.to_core();
    let chan_cfg = cfg.channel.to_core(enc_cfg.map_len());
    let dec_cfg = cfg.decoder.to_core();
    let train_cfg = cfg.train.to_core();

    let rgb = cfg.encoder.input_channels == 3;
    let (train_frames, val_frames, _test) = load_splits(dataset, rgb)?;
    check_frame_geometry(&train_frames, cfg)?;

    let outputs = [out.join(BEST_CHECKPOINT), out.join(FINAL_CHECKPOINT), out.join(LOSS_CSV)];
    guarded(&outputs, || {
        let model = SemComModel::new(enc_cfg.clone(), chan_cfg.clone(), dec_cfg.clone(), train_cfg.seed)
            .context("building model")?;
        let mut trainer = Trainer::new(model);
        let outcome = trainer
            .fit(&train_frames, &val_frames, &train_cfg, Some(out))
            .context("training")?;
        let last = outcome
            .history
            .iter()
            .rev()
            .find(|r| r.split == semcom::training::Split::Train);
        let final_total = last.map(|r| r.total).unwrap_or(f64::NAN);
        Ok(format!(
            "trained {} epochs on {} frames (val {}); final train loss {:.6}, \
             best val loss {:.6} at epoch {}; wrote {}, {}, {} to {}",
            outcome.epochs_run,
            train_frames.len(),
            val_frames.len(),
            final_total,
            outcome.best_val_total,
            outcome.best_epoch,
            BEST_CHECKPOINT,
            FINAL_CHECKPOINT,
            LOSS_CSV,
            out.display()
        ))
    })
}

fn load_checkpoint(path: &Path) -> Result<Trainer<Real>> {
    if !path.exists() {
        bail!(
            "checkpoint not found: {} (train first, or point --checkpoint at an existing .ckpt)",
            path.display()
        );
    }
    checkpoint_load::<Real>(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Test frames plus the SNR the evaluation should run at: the override
/// from config/flag when present, otherwise the checkpoint's channel.
fn eval_inputs(
    model: &SemComModel,
    cfg: &FileConfig,
    dataset: &Path,
) -> Result<(Vec<AnnotatedFrame>, f64)> {
    let rgb = model.encoder.config().input_channels == 3;
    let (_train, _val, test_frames) = load_splits(dataset, rgb)?;
    if test_frames.is_empty() {
        bail!("dataset {} has no test split (too few frames)", dataset.display());
    }
    let snr_db = cfg.eval.snr_db.unwrap_or(model.channel.snr_db);
    Ok((test_frames, snr_db))
}

fn plain_table(report: &MetricsReport) -> String {
    let mut lines = vec![format!("{:<22} {:>8} {:>8}", "model", "MAE", "MSE")];
    for (name, mae, mse) in PUBLISHED_BASELINES {
        lines.push(format!("{:<22} {:>8.2} {:>8.2}", format!("{} (published)", name), mae, mse));
    }
    lines.push(format!("{:<22} {:>8.3} {:>8.3}", "semcom", report.mae, report.mse));
    lines.push(format!(
        "({} test frames, snr {} dB, p {})",
        report.i_count, report.snr_db, report.p
    ));
    lines.join("\n")
}

pub fn eval(cfg: &FileConfig, dataset: &Path, checkpoint: &Path, out: &Path) -> Result<String> {
    let trainer = load_checkpoint(checkpoint)?;
    let (test_frames, snr_db) = eval_inputs(&trainer.model, cfg, dataset)?;

    let outputs = [out.join(METRICS_CSV)];
    guarded(&outputs, || {
        let report = evaluate_model(&trainer.model, &test_frames, snr_db, cfg.eval.seed)
            .context("evaluating")?;
        let csv = compare_report(&["semcom".to_string()], &[report.clone()], true)
            .context("formatting report")?;
        fs::write(&outputs[0], csv)
            .with_context(|| format!("writing {}", outputs[0].display()))?;
        Ok(format!("{}\nwrote {}", plain_table(&report), outputs[0].display()))
    })
}

pub fn sweep(
    cfg: &FileConfig,
    dataset: &Path,
    checkpoint: &Path,
    out: &Path,
    p_grid: Option<&[f64]>,
) -> Result<String> {
    let trainer = load_checkpoint(checkpoint)?;
    let (test_frames, snr_db) = eval_inputs(&trainer.model, cfg, dataset)?;
    let grid: Vec<f64> = p_grid.unwrap_or(&cfg.eval.p_grid).to_vec();

    let outputs = [out.join(SWEEP_CSV)];
    guarded(&outputs, || {
        let curve = p_sweep(&trainer.model, &test_frames, &grid, snr_db, cfg.eval.seed)
            .context("sweeping p")?;
        let mut csv = String::from("p,mae,mse,frames,snr_db\n");
        for point in &curve.points {
            let r = &point.report;
            csv.push_str(&format!("{},{},{},{},{}\n", point.p, r.mae, r.mse, r.i_count, r.snr_db));
        }
        fs::write(&outputs[0], csv)
            .with_context(|| format!("writing {}", outputs[0].display()))?;
        let best = curve.best();
        Ok(format!(
            "swept {} residual weights at {} dB; best p = {} (MAE {:.4}); wrote {}",
            curve.points.len(),
            snr_db,
            best.p,
            best.report.mae,
            outputs[0].display()
        ))
    })
}

pub fn overhead_cmd(cfg: &FileConfig, dataset: &Path, out: &Path) -> Result<String> {
    let images_dir = dataset.join("images");
    let mut image_paths: Vec<PathBuf> = fs::read_dir(&images_dir)
        .with_context(|| format!("cannot list {}", images_dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("cannot list {}", images_dir.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    image_paths.sort();

    // Same sort order as the loader, so paths and frames line up.
    let frames = load_dataset::<Real>(dataset, cfg.encoder.input_channels == 3)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let maps = frames
        .iter()
        .map(|f| make_gt_density::<Real>(&f.dots, f.height(), f.width(), cfg.train.gt_sigma))
        .collect::<semcom::Result<Vec<_>>>()
        .context("building density maps")?;

    let codec = OverheadCodec { quant_bits: cfg.eval.quant_bits };
    let outputs = [out.join(OVERHEAD_CSV)];
    guarded(&outputs, || {
        let report = overhead(&image_paths, &maps, &codec).context("measuring overhead")?;
        let csv = format!(
            "raw_bytes,encoded_bytes,reduction_pct\n{},{},{}\n",
            report.raw_bytes, report.encoded_bytes, report.reduction_pct
        );
        fs::write(&outputs[0], csv)
            .with_context(|| format!("writing {}", outputs[0].display()))?;
        Ok(format!(
            "{} frames: raw {} bytes, encoded {} bytes, overhead reduced {:.2}%; wrote {}",
            frames.len(),
            report.raw_bytes,
            report.encoded_bytes,
            report.reduction_pct,
            outputs[0].display()
        ))
    })
}
