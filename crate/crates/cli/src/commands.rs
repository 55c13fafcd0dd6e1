// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use fcnet_core::config::RunConfig;
use fcnet_core::data::{read_sicg, synth_generate, write_sicg};
use fcnet_core::forecast::predict_recursive;
use fcnet_core::metrics::{active_region, evaluate as score, ICE_THRESHOLD};
use fcnet_core::model::load_checkpoint;
use fcnet_core::trainer::{self, TrainOptions};
use fcnet_core::{DatasetSplit, Error, Result, SicSequence, Subset};

use crate::pgm;
use crate::Component;

/// Days per archive shard.
pub const SHARD_DAYS: usize = 365;

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let bad = || Error::config(format!("size must look like 64x64, got {size:?}"));
    let (h, w) = size.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn config_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".config.json")
}

pub fn log_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".log.csv")
}

pub fn synth(days: usize, size: &str, seed: u64, out: &Path) -> Result<()> {
    let (h, w) = parse_size(size)?;
    let archive = synth_generate(days, h, w, seed)?;
    create_dir(out)?;
    for (i, from) in (0..days).step_by(SHARD_DAYS).enumerate() {
        let shard = archive.slice_days(from, SHARD_DAYS.min(days - from))?;
        write_sicg(&shard, out.join(format!("shard-{i:04}.sicg")))?;
    }
    let mask = archive.mask();
    let pixels: Vec<u8> = mask.cells().iter().map(|&o| if o { 255 } else { 0 }).collect();
    pgm::write(&out.join("mask.pgm"), h, w, &pixels)?;
    println!("wrote {days} days of {h}x{w} to {}", out.display());
    Ok(())
}

/// Every `*.sicg` file of a directory, in name order, joined day by day.
pub fn load_archive(dir: &Path) -> Result<SicSequence> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io_at(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "sicg") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::usage(format!("{}: no .sicg shards", dir.display())));
    }
    let parts = files.iter().map(read_sicg).collect::<Result<Vec<_>>>()?;
    SicSequence::concat(&parts).map_err(|e| e.at(&dir.display().to_string()))
}

pub fn train(data: &Path, config: &Path, out: &Path, disable: &[Component]) -> Result<()> {
    let mut run = RunConfig::load(config)?;
    for c in disable {
        match c {
            Component::Affb => run.ablation.use_affb = false,
            Component::Hfeb => run.ablation.use_hfeb = false,
            Component::Freqloss => run.ablation.use_freq_loss = false,
        }
    }
    let cfg = run.model();
    cfg.validate()?;
    let archive = load_archive(data)?;
    if (archive.height(), archive.width()) != (cfg.h, cfg.w) {
        return Err(Error::config(format!(
            "archive grid {}x{} does not match the configured {}x{}",
            archive.height(),
            archive.width(),
            cfg.h,
            cfg.w
        )));
    }
    let split = DatasetSplit::chronological(archive.days(), cfg.t_prime)?;
    let train_split = DatasetSplit {
        stride: run.train.window_stride.max(1),
        ..split.clone()
    };
    let train_pairs = train_split.windows(&archive, Subset::Train, cfg.t, cfg.t_prime)?;
    let val_pairs = split.windows(&archive, Subset::Val, cfg.t, cfg.t_prime)?;
    let cfg_file = config_path(out);
    std::fs::write(&cfg_file, run.to_json()).map_err(|e| Error::io_at(&cfg_file, e))?;
    let opts = TrainOptions {
        checkpoint: Some(out.to_path_buf()),
        log: Some(log_path(out)),
    };
    let outcome = trainer::train(&cfg, &run.train(), &train_pairs, &val_pairs, &opts)?;
    println!(
        "{}: {} steps, best validation MAE {:.6} ({})",
        cfg.ablation.label(),
        run.train.steps,
        outcome.best_val_mae,
        outcome.best_step.map_or("initial parameters".to_string(), |s| format!("step {s}"))
    );
    Ok(())
}

pub fn predict(ckpt: &Path, input: &Path, steps: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    let run = RunConfig::load(&config.map_or_else(|| config_path(ckpt), Path::to_path_buf))?;
    let cfg = run.model();
    let params = load_checkpoint(ckpt, Some(cfg.fingerprint()))?;
    let seq = read_sicg(input)?;
    if seq.days() < cfg.t {
        return Err(Error::usage(format!("input has {} days, the model needs {}", seq.days(), cfg.t)));
    }
    let x = seq.slice_days(seq.days() - cfg.t, cfg.t)?;
    let y = predict_recursive(&params, &cfg, &x, steps)?;
    write_sicg(&y, out)?;
    println!("wrote {} days starting at day {} to {}", y.days(), y.start_day(), out.display());
    Ok(())
}

pub fn evaluate(pred: &Path, truth: &Path, active_from: &Path, out: &Path, maps: Option<&Path>) -> Result<()> {
    let pred = read_sicg(pred)?;
    let truth_all = read_sicg(truth)?;
    if pred.mask() != truth_all.mask() {
        return Err(Error::dim("prediction and truth grids or masks differ"));
    }
    let offset = pred
        .start_day()
        .checked_sub(truth_all.start_day())
        .map(|o| o as usize)
        .filter(|o| o + pred.days() <= truth_all.days())
        .ok_or_else(|| {
            Error::dim(format!(
                "truth covers days {}..{}, prediction needs {}..{}",
                truth_all.start_day(),
                truth_all.start_day() as usize + truth_all.days(),
                pred.start_day(),
                pred.start_day() as usize + pred.days()
            ))
        })?;
    let truth = truth_all.slice_days(offset, pred.days())?;

    let record = load_archive(active_from)?;
    if record.mask() != pred.mask() {
        return Err(Error::dim("active-region archive has a different grid or mask"));
    }
    let split = DatasetSplit::chronological(record.days(), 1)?;
    let train_range = split.range(Subset::Train);
    let active = active_region(&record.slice_days(train_range.start, train_range.len())?, ICE_THRESHOLD)?;

    let report = score(pred.data(), truth.data(), pred.mask(), &active)?;
    report.write_csv(out)?;

    if let Some(dir) = maps {
        create_dir(dir)?;
        let (h, w) = (pred.height(), pred.width());
        for t in 0..pred.days() {
            let day = pred.start_day() as usize + t;
            let (p, g) = (pred.day(t), truth.day(t));
            let px: Vec<u8> = p.iter().map(|&v| pgm::level(v)).collect();
            let gx: Vec<u8> = g.iter().map(|&v| pgm::level(v)).collect();
            let dx: Vec<u8> = p.iter().zip(g).map(|(&a, &b)| pgm::diff_level(a - b)).collect();
            pgm::write(&dir.join(format!("pred-{day:05}.pgm")), h, w, &px)?;
            pgm::write(&dir.join(format!("truth-{day:05}.pgm")), h, w, &gx)?;
            pgm::write(&dir.join(format!("diff-{day:05}.pgm")), h, w, &dx)?;
        }
    }
    println!(
        "{} days: MAE {:.6} RMSE {:.6} NSE {:.6} BACC {:.3}",
        pred.days(),
        report.mae,
        report.rmse,
        report.nse,
        report.bacc
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert!(matches!(parse_size("64"), Err(Error::Config(_))));
        assert!(matches!(parse_size("ax4"), Err(Error::Config(_))));
    }

    #[test]
    fn sidecar_paths() {
        assert_eq!(config_path(Path::new("a/m.fcnc")), PathBuf::from("a/m.fcnc.config.json"));
        assert_eq!(log_path(Path::new("m")), PathBuf::from("m.log.csv"));
    }
}
