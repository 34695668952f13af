use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use log::info;

use sdmtl::checkpoint;
use sdmtl::data::{
    load_csv, load_dir, preprocess, save_csv, split_indices, synth_generate, synth_sequence_seed,
    write_atomic, SkeletonSequence, SynthRanges,
};
use sdmtl::evaluate::{build_windows, dataset_loss, horizon_errors};
use sdmtl::gradcheck::DEFAULT_COORDS;
use sdmtl::gradsuite;
use sdmtl::loss::{horizon_frame, temporal_weights, WeightScheme, FRAME_MS, REPORT_HORIZONS_MS};
use sdmtl::{Ablation, Error, Model32, Tensor32};

use crate::cli::{EvalArgs, GradcheckArgs, PredictArgs, Split, SynthArgs, TrainArgs};
use crate::config::{RunConfig, UsageError};

pub fn synth(a: &SynthArgs) -> Result<()> {
    let ranges = SynthRanges::default();
    let seqs = synth_generate(a.sequences, a.frames, a.joints, a.seed, &ranges)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut manifest = String::new();
    writeln!(
        manifest,
        "# synthetic skeleton sequences, x(t) = a*sin(w*t + phi) + v*t + c"
    )?;
    writeln!(manifest, "seed={}", a.seed)?;
    writeln!(manifest, "sequences={}", a.sequences)?;
    writeln!(manifest, "frames={}", a.frames)?;
    writeln!(manifest, "joints={}", a.joints)?;
    writeln!(
        manifest,
        "amplitude_mm={}..{}",
        ranges.amplitude_mm.0, ranges.amplitude_mm.1
    )?;
    writeln!(
        manifest,
        "period_frames={}..{}",
        ranges.period_frames.0, ranges.period_frames.1
    )?;
    writeln!(manifest, "max_drift_mm_per_frame={}", ranges.max_drift_mm)?;
    writeln!(manifest, "max_offset_mm={}", ranges.max_offset_mm)?;
    for (i, s) in seqs.iter().enumerate() {
        save_csv(&a.out.join(format!("{}.csv", s.name)), s)?;
        writeln!(
            manifest,
            "{}.csv seed={}",
            s.name,
            synth_sequence_seed(a.seed, i)
        )?;
    }
    write_atomic(&a.out.join("manifest.txt"), manifest.as_bytes())?;
    println!("wrote {} sequences to {}", seqs.len(), a.out.display());
    Ok(())
}

fn load_sequences(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    let seqs = load_dir(dir)?;
    if seqs.is_empty() {
        return Err(Error::Degenerate(format!("no .csv sequences in {}", dir.display())).into());
    }
    Ok(seqs)
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    for pair in &a.set {
        cfg.apply_pair(pair)?;
    }
    let t = &mut cfg.train;
    if let Some(seed) = a.seed {
        t.seed = seed;
    }
    if let Some(loss) = a.loss {
        t.loss = loss.into();
    }
    if let Some(steps) = a.steps {
        t.steps = steps;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if !a.ablate.is_empty() {
        let mut abl = Ablation::default();
        for tag in &a.ablate {
            abl.enable(tag.as_str())?;
        }
        t.hyper.ablation = abl;
    }
    if t.batch_size == 0 {
        return Err(UsageError("batch_size must be positive".into()).into());
    }
    Ok(cfg)
}

fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

pub fn default_history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".loss.csv");
    ckpt.with_file_name(name)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(a)?;
    let seqs = load_sequences(&a.data)?;
    let [tr, va, _] = split_indices(seqs.len());
    let h = cfg.train.hyper;
    let windows =
        |r: Range<usize>| build_windows(&seqs, r, cfg.root, h.frames, h.horizon, cfg.stride);
    let train_w = windows(tr.clone())?;
    let val_w = windows(va.clone())?;
    let Some(first) = train_w.first() else {
        return Err(Error::Degenerate(format!(
            "training split ({} sequences) yields no {}+{}-frame windows",
            tr.len(),
            h.frames,
            h.horizon
        ))
        .into());
    };
    cfg.train.hyper.joints = first.joints;
    cfg.train.hyper.validate()?;
    info!(
        "{} training windows from {} sequences, {} validation windows; {}",
        train_w.len(),
        tr.len(),
        val_w.len(),
        cfg.train.hyper
    );
    let out = a.out.clone();
    let outcome = sdmtl::train::train::<f32>(&cfg.train, &train_w, |step, m| {
        info!("step {step}: checkpoint -> {}", out.display());
        checkpoint::save(&out, m)
    })?;
    checkpoint::save(&a.out, &outcome.model)?;
    let hist_path = a
        .history
        .clone()
        .unwrap_or_else(|| default_history_path(&a.out));
    write_atomic(&hist_path, history_csv(&outcome.history).as_bytes())?;

    let metric = temporal_weights(h.horizon, cfg.train.alpha, WeightScheme::Exp)?;
    let train_loss = dataset_loss(&outcome.model, &train_w, &metric)?;
    let val = if val_w.is_empty() {
        "n/a (empty validation split)".to_string()
    } else {
        format!("{:.4}", dataset_loss(&outcome.model, &val_w, &metric)?)
    };
    println!("final train TW-MPJPE {train_loss:.4}");
    println!("final val TW-MPJPE {val}");
    println!("checkpoint {}", a.out.display());
    println!("loss history {}", hist_path.display());
    Ok(())
}

/// Horizons in ms that fit a model predicting `horizon` frames.
fn valid_horizons(horizon: usize) -> Vec<usize> {
    REPORT_HORIZONS_MS
        .iter()
        .copied()
        .filter(|&ms| ms <= horizon * FRAME_MS)
        .collect()
}

fn resolve_horizons(requested: &[usize], horizon: usize) -> Result<Vec<(usize, usize)>> {
    let valid = valid_horizons(horizon);
    if requested.is_empty() {
        return Ok(valid.iter().map(|&ms| (ms, ms / FRAME_MS)).collect());
    }
    requested
        .iter()
        .map(|&ms| match horizon_frame(ms) {
            Some(f) if f <= horizon => Ok((ms, f)),
            _ => {
                Err(UsageError(format!(
                "horizon {ms} ms is not available for a {horizon}-frame model; valid horizons: {} \
                 (or any multiple of {FRAME_MS} ms up to {} ms)",
                valid.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
                horizon * FRAME_MS
            ))
                .into())
            }
        })
        .collect()
}

fn split_range(split: Split, n: usize) -> Range<usize> {
    let [tr, va, te] = split_indices(n);
    match split {
        Split::All => 0..n,
        Split::Train => tr,
        Split::Val => va,
        Split::Test => te,
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model: Model32 = checkpoint::load(&a.ckpt, None)?;
    let h = model.hyper;
    let horizons = resolve_horizons(&a.horizons_ms, h.horizon)?;
    let seqs = load_sequences(&a.data)?;
    let range = split_range(a.split, seqs.len());
    let windows = build_windows(&seqs, range, a.root, h.frames, h.horizon, a.stride)?;
    let Some(first) = windows.first() else {
        return Err(
            Error::Degenerate(format!("{:?} split yields no evaluation windows", a.split)).into(),
        );
    };
    if first.joints != h.joints {
        return Err(Error::Hyper(format!(
            "data keeps {} joints after preprocessing, checkpoint expects {}",
            first.joints, h.joints
        ))
        .into());
    }
    let steps: Vec<usize> = horizons.iter().map(|&(_, f)| f).collect();
    let rows = horizon_errors(&model, &windows, &steps)?;
    let mut csv = String::from("ms,frame,model,zero_velocity,constant_velocity\n");
    println!("{} windows", windows.len());
    println!(
        "{:>6} {:>6} {:>12} {:>14} {:>18}",
        "ms", "frame", "model", "zero_velocity", "constant_velocity"
    );
    for ((ms, _), r) in horizons.iter().zip(&rows) {
        writeln!(
            csv,
            "{ms},{},{},{},{}",
            r.frame, r.model, r.zero_velocity, r.constant_velocity
        )?;
        println!(
            "{ms:>6} {:>6} {:>12.3} {:>14.3} {:>18.3}",
            r.frame, r.model, r.zero_velocity, r.constant_velocity
        );
    }
    write_atomic(&a.out, csv.as_bytes())?;
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model: Model32 = checkpoint::load(&a.ckpt, None)?;
    let h = model.hyper;
    let seq = load_csv(&a.input)?;
    if seq.len() < h.frames {
        return Err(Error::Degenerate(format!(
            "{}: {} frames, the model observes {}",
            a.input.display(),
            seq.len(),
            h.frames
        ))
        .into());
    }
    let (p, info) = preprocess(&seq, a.root)?;
    if p.joints != h.joints {
        bail!(Error::Hyper(format!(
            "{} keeps {} joints after preprocessing, checkpoint expects {}",
            a.input.display(),
            p.joints,
            h.joints
        )));
    }
    let observed = p.frames(p.len() - h.frames, h.frames).to_vec();
    let x = Tensor32::from_vec(model.input_dims(1), observed)?;
    let pred = model.predict(&x)?;
    let full = info.reinsert(pred.data())?;
    let out = SkeletonSequence::new(format!("{}_pred", seq.name), info.original_joints, full)?;
    save_csv(&a.out, &out)?;
    println!(
        "wrote {} predicted frames to {}",
        out.len(),
        a.out.display()
    );
    Ok(())
}

/// Returns whether every component passed.
pub fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let coords = if a.full { usize::MAX } else { DEFAULT_COORDS };
    let mut all = true;
    println!(
        "{:<14} {:>12} {:>8} {:>8}  worst parameter",
        "component", "max_rel_err", "checked", "kinks"
    );
    for c in gradsuite::run_all(a.seed, coords)? {
        let r = &c.report;
        println!(
            "{:<14} {:>12.3e} {:>8} {:>8}  {} {}",
            c.component,
            r.max_rel_error,
            r.checked,
            r.skipped_kinks,
            r.worst_param,
            if c.passed() { "ok" } else { "FAIL" }
        );
        all &= c.passed();
    }
    println!(
        "tolerance {:e}: {}",
        gradsuite::GRAD_TOL,
        if all { "all passed" } else { "FAILED" }
    );
    Ok(all)
}
