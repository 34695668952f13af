//! Skeleton sequences: CSV I/O, preprocessing, windowing and a synthetic
//! motion generator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::init::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

/// Frames are sampled every 40 ms.
pub const FRAME_INTERVAL_MS: u32 = 40;

/// Joints whose coordinates vary less than this over a sequence are dropped.
pub const CONSTANT_JOINT_TOL: f32 = 1e-6;

/// Ordered poses, `joints × 3` millimeter coordinates per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub name: String,
    pub joints: usize,
    /// Flat (frame, joint, coordinate) values.
    pub values: Vec<f32>,
}

impl SkeletonSequence {
    pub fn new(name: impl Into<String>, joints: usize, values: Vec<f32>) -> Result<Self> {
        if joints == 0 || !values.len().is_multiple_of(joints * 3) {
            return Err(Error::Contract(format!(
                "{} values do not form whole frames of {joints} joints",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite coordinate at frame {}",
                i / (joints * 3)
            )));
        }
        Ok(SkeletonSequence {
            name: name.into(),
            joints,
            values,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.joints * 3
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[f * n..(f + 1) * n]
    }

    pub fn coord(&self, f: usize, joint: usize, c: usize) -> f32 {
        self.values[(f * self.joints + joint) * 3 + c]
    }

    /// Frames `start..start + count` as one flat slice.
    pub fn frames(&self, start: usize, count: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[start * n..(start + count) * n]
    }
}

pub fn csv_header(joints: usize) -> Vec<String> {
    (0..joints)
        .flat_map(|j| ["x", "y", "z"].map(|a| format!("j{j}_{a}")))
        .collect()
}

pub fn load_csv(path: &Path) -> Result<SkeletonSequence> {
    let perr = |row: usize, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => perr(1, 1, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| perr(1, 1, e.to_string()))?
        .clone();
    if header.is_empty() || header.len() % 3 != 0 {
        return Err(perr(
            1,
            header.len().max(1),
            format!(
                "header has {} columns, expected a multiple of 3",
                header.len()
            ),
        ));
    }
    let joints = header.len() / 3;
    for (i, (got, want)) in header.iter().zip(csv_header(joints)).enumerate() {
        if got != want {
            return Err(perr(
                1,
                i + 1,
                format!("header column {got:?}, expected {want:?}"),
            ));
        }
    }

    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| perr(row, 1, e.to_string()))?;
        if record.len() != header.len() {
            return Err(perr(
                row,
                record.len().min(header.len()) + 1,
                format!(
                    "row has {} cells, header has {}",
                    record.len(),
                    header.len()
                ),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f32 = cell
                .parse()
                .map_err(|_| perr(row, c + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(perr(row, c + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SkeletonSequence::new(name, joints, values)
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// CSV text for a sequence. Values use the shortest representation that
/// parses back to the same `f32`.
pub fn to_csv_string(seq: &SkeletonSequence) -> String {
    let mut out = csv_header(seq.joints).join(",");
    out.push('\n');
    for f in 0..seq.len() {
        let row: Vec<String> = seq.frame(f).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn save_csv(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    write_atomic(path, to_csv_string(seq).as_bytes())
}

/// `*.csv` files of a directory in lexicographic order.
pub fn list_csv(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dir(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    list_csv(dir)?.iter().map(|p| load_csv(p)).collect()
}

/// What preprocessing removed, so predictions can be mapped back.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessInfo {
    /// Joint count of the raw sequence.
    pub original_joints: usize,
    /// Raw joint index used as the root.
    pub root: usize,
    /// Raw indices of the retained joints, ascending.
    pub kept: Vec<usize>,
    /// Raw index and root-relative constant position of each dropped joint.
    pub dropped: Vec<(usize, [f32; 3])>,
}

impl PreprocessInfo {
    /// Position of the root among the retained joints.
    pub fn root_in_kept(&self) -> usize {
        self.kept.iter().position(|&j| j == self.root).unwrap()
    }

    /// Expands frames over the kept joints back to the raw joint layout.
    pub fn reinsert(&self, kept_values: &[f32]) -> Result<Vec<f32>> {
        let k = self.kept.len() * 3;
        if !kept_values.len().is_multiple_of(k) {
            return Err(Error::Contract(format!(
                "{} values are not whole frames of {} joints",
                kept_values.len(),
                self.kept.len()
            )));
        }
        let n = self.original_joints * 3;
        let mut out = Vec::with_capacity(kept_values.len() / k * n);
        for frame in kept_values.chunks(k) {
            let mut full = vec![0f32; n];
            for (slot, &j) in self.kept.iter().enumerate() {
                full[j * 3..j * 3 + 3].copy_from_slice(&frame[slot * 3..slot * 3 + 3]);
            }
            for &(j, pos) in &self.dropped {
                full[j * 3..j * 3 + 3].copy_from_slice(&pos);
            }
            out.extend(full);
        }
        Ok(out)
    }
}

/// Root-centers every frame and drops joints that stay constant. The root
/// itself is kept (at the origin).
pub fn preprocess(
    seq: &SkeletonSequence,
    root: usize,
) -> Result<(SkeletonSequence, PreprocessInfo)> {
    let frames = seq.len();
    if frames < 2 {
        return Err(Error::Degenerate(format!(
            "{}: {frames} frame(s), need at least 2",
            seq.name
        )));
    }
    if seq.joints < 2 || root >= seq.joints {
        return Err(Error::Config(format!(
            "{}: root joint {root} invalid for {} joints",
            seq.name, seq.joints
        )));
    }
    let mut centered = seq.values.clone();
    for f in 0..frames {
        let base = f * seq.frame_len();
        let r = [0, 1, 2].map(|c| seq.values[base + root * 3 + c]);
        for j in 0..seq.joints {
            for c in 0..3 {
                centered[base + j * 3 + c] -= r[c];
            }
        }
    }
    let at = |f: usize, j: usize, c: usize| centered[(f * seq.joints + j) * 3 + c];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..seq.joints {
        let first = [0, 1, 2].map(|c| at(0, j, c));
        let constant = (1..frames)
            .all(|f| (0..3).all(|c| (at(f, j, c) - first[c]).abs() <= CONSTANT_JOINT_TOL));
        if j == root || !constant {
            kept.push(j);
        } else {
            dropped.push((j, first));
        }
    }
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{}: every joint is constant relative to the root",
            seq.name
        )));
    }
    if !dropped.is_empty() {
        debug!(
            "{}: dropped constant joints {:?}",
            seq.name,
            dropped.iter().map(|d| d.0).collect::<Vec<_>>()
        );
    }
    let mut values = Vec::with_capacity(frames * kept.len() * 3);
    for f in 0..frames {
        for &j in &kept {
            values.extend((0..3).map(|c| at(f, j, c)));
        }
    }
    let info = PreprocessInfo {
        original_joints: seq.joints,
        root,
        kept: kept.clone(),
        dropped,
    };
    Ok((
        SkeletonSequence::new(seq.name.clone(), kept.len(), values)?,
        info,
    ))
}

/// Observed and future frames cut from one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub joints: usize,
    /// `T` poses, flat.
    pub input: Vec<f32>,
    /// `T'` poses, flat.
    pub target: Vec<f32>,
    pub sequence: usize,
    /// First input frame in the source sequence; the target starts at
    /// `start + T`.
    pub start: usize,
}

impl SampleWindow {
    pub fn frames(&self) -> usize {
        self.input.len() / (self.joints * 3)
    }

    pub fn horizon(&self) -> usize {
        self.target.len() / (self.joints * 3)
    }
}

/// Sliding windows; `⌊(len − T − T')/stride⌋ + 1` of them, or none if the
/// sequence is too short.
pub fn window(
    seq: &SkeletonSequence,
    sequence: usize,
    frames: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SampleWindow>> {
    if stride == 0 || frames == 0 || horizon == 0 {
        return Err(Error::Config(
            "window sizes and stride must be positive".into(),
        ));
    }
    let span = frames + horizon;
    if seq.len() < span {
        warn!(
            "{}: {} frames, too short for {span}-frame windows",
            seq.name,
            seq.len()
        );
        return Ok(Vec::new());
    }
    Ok((0..=(seq.len() - span) / stride)
        .map(|i| {
            let start = i * stride;
            SampleWindow {
                joints: seq.joints,
                input: seq.frames(start, frames).to_vec(),
                target: seq.frames(start + frames, horizon).to_vec(),
                sequence,
                start,
            }
        })
        .collect())
}

/// Stacks windows into (batch, T, J, 3) inputs and (batch, T', J, 3) targets.
pub fn batch_tensors<T: Scalar>(windows: &[&SampleWindow]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (j, t, h) = (first.joints, first.frames(), first.horizon());
    let mut xs = Vec::with_capacity(windows.len() * first.input.len());
    let mut ys = Vec::with_capacity(windows.len() * first.target.len());
    for w in windows {
        if w.joints != j || w.frames() != t || w.horizon() != h {
            return Err(Error::Contract("batch mixes window shapes".into()));
        }
        xs.extend(w.input.iter().map(|&v| T::from_single(v)));
        ys.extend(w.target.iter().map(|&v| T::from_single(v)));
    }
    let b = windows.len();
    Ok((
        Tensor::from_vec(Dims::new(b, t, j, 3), xs)?,
        Tensor::from_vec(Dims::new(b, h, j, 3), ys)?,
    ))
}

/// Index ranges of an 80/10/10 train/validation/test split by sequence.
pub fn split_indices(n: usize) -> [std::ops::Range<usize>; 3] {
    let train = (n * 8 + 5) / 10;
    let val = ((n + 5) / 10).min(n - train);
    [0..train, train..train + val, train + val..n]
}

/// Ranges for the synthetic sinusoid-plus-drift motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthRanges {
    pub amplitude_mm: (f64, f64),
    pub period_frames: (f64, f64),
    pub max_drift_mm: f64,
    /// Offsets `c` are drawn from ±this.
    pub max_offset_mm: f64,
}

impl Default for SynthRanges {
    fn default() -> Self {
        SynthRanges {
            amplitude_mm: (20.0, 120.0),
            period_frames: (20.0, 80.0),
            max_drift_mm: 3.0,
            max_offset_mm: 400.0,
        }
    }
}

/// Per-coordinate motion `a·sin(ωt + φ) + v·t + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordMotion {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub drift: f64,
    pub offset: f64,
}

impl CoordMotion {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin() + self.drift * t + self.offset
    }
}

/// Draws motion parameters for `joints × 3` coordinates.
pub fn synth_motions(rng: &mut SplitMix64, joints: usize, r: &SynthRanges) -> Vec<CoordMotion> {
    (0..joints * 3)
        .map(|_| {
            let period = rng.uniform(r.period_frames.0, r.period_frames.1);
            CoordMotion {
                amplitude: rng.uniform(r.amplitude_mm.0, r.amplitude_mm.1),
                omega: std::f64::consts::TAU / period,
                phase: rng.uniform(0.0, std::f64::consts::TAU),
                drift: rng.uniform(-r.max_drift_mm, r.max_drift_mm),
                offset: rng.uniform(-r.max_offset_mm, r.max_offset_mm),
            }
        })
        .collect()
}

pub fn synth_sequence(
    name: impl Into<String>,
    motions: &[CoordMotion],
    frames: usize,
) -> Result<SkeletonSequence> {
    let joints = motions.len() / 3;
    let values = (0..frames)
        .flat_map(|t| motions.iter().map(move |m| m.at(t as f64) as f32))
        .collect();
    SkeletonSequence::new(name, joints, values)
}

/// Seed of the `i`-th synthetic sequence of a dataset.
pub fn synth_sequence_seed(seed: u64, i: usize) -> u64 {
    SplitMix64::keyed(seed, &format!("seq_{i:04}")).next_u64()
}

/// Deterministic synthetic dataset of `count` sequences named `seq_0000`, ….
pub fn synth_generate(
    count: usize,
    frames: usize,
    joints: usize,
    seed: u64,
    ranges: &SynthRanges,
) -> Result<Vec<SkeletonSequence>> {
    (0..count)
        .map(|i| {
            let mut rng = SplitMix64::new(synth_sequence_seed(seed, i));
            let motions = synth_motions(&mut rng, joints, ranges);
            synth_sequence(format!("seq_{i:04}"), &motions, frames)
        })
        .collect()
}
