//! Dataset conditioning: low-speed gating, outlier flagging, zero-phase
//! filtering, manoeuvre-level splitting and LSTM window extraction.

pub mod fir;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{self, FileFormat, MeasurementFrame, WheelForces, SAMPLE_RATE_HZ};
use crate::plant_sim::ManoeuvreKind;

pub use fir::zero_phase_lowpass;

pub const PIPELINE_VERSION: &str = "1";

/// Frames at or below this longitudinal speed are dropped, m/s.
pub const MIN_SPEED: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ManoeuvreRecord {
    pub id: String,
    pub kind: ManoeuvreKind,
    pub frames: Vec<MeasurementFrame>,
    /// Per-frame outlier flags; same length as `frames`.
    pub outliers: Vec<bool>,
}

impl ManoeuvreRecord {
    pub fn new(id: impl Into<String>, kind: ManoeuvreKind, frames: Vec<MeasurementFrame>) -> Self {
        let outliers = vec![false; frames.len()];
        Self { id: id.into(), kind, frames, outliers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_seed: u64,
    pub pipeline_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manoeuvres: Vec<ManoeuvreRecord>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    version: u32,
    provenance: Provenance,
    manoeuvres: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    kind: ManoeuvreKind,
    file: String,
    outlier_frames: Vec<usize>,
}

pub const DATASET_INDEX: &str = "dataset.json";

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&ManoeuvreRecord> {
        self.manoeuvres.iter().find(|m| m.id == id)
    }

    /// Writes `dataset.json` plus one file per manoeuvre into `dir`.
    pub fn save(&self, dir: &Path, format: FileFormat) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for m in &self.manoeuvres {
            let file = format!("{}.{}", m.id, format.extension());
            frame::write_frames(&dir.join(&file), &m.frames, format)?;
            let outlier_frames =
                m.outliers.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
            entries.push(IndexEntry { id: m.id.clone(), kind: m.kind, file, outlier_frames });
        }
        let index = DatasetIndex { version: 1, provenance: self.provenance.clone(), manoeuvres: entries };
        write_json(&dir.join(DATASET_INDEX), &index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = read_json(&dir.join(DATASET_INDEX))?;
        let mut manoeuvres = Vec::with_capacity(index.manoeuvres.len());
        for e in index.manoeuvres {
            let frames = frame::read_frames(&dir.join(&e.file))?;
            let mut outliers = vec![false; frames.len()];
            for i in e.outlier_frames {
                if let Some(o) = outliers.get_mut(i) {
                    *o = true;
                }
            }
            manoeuvres.push(ManoeuvreRecord { id: e.id, kind: e.kind, frames, outliers });
        }
        Ok(Self { manoeuvres, provenance: index.provenance })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Outlier rule applied to the ground-truth sideslip channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierRule {
    /// Rolling-median window, samples (odd).
    pub window: usize,
    /// Flag when the residual exceeds this many robust MADs.
    pub mad_multiple: f64,
    /// Lower bound on the robust MAD, rad; stops smooth signals with a
    /// near-zero MAD from flagging ordinary curvature.
    pub min_scale: f64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        Self { window: 21, mad_multiple: 6.0, min_scale: 0.1f64.to_radians() }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Centered rolling median, window truncated at the edges.
pub fn rolling_median(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            median(&mut x[lo..hi].to_vec())
        })
        .collect()
}

/// Indices whose value departs from the rolling median by more than the rule allows.
pub fn flag_outliers(x: &[f64], rule: &OutlierRule) -> Vec<bool> {
    if x.is_empty() {
        return Vec::new();
    }
    let med = rolling_median(x, rule.window);
    let residual: Vec<f64> = x.iter().zip(&med).map(|(v, m)| v - m).collect();
    let mad = 1.4826 * median(&mut residual.iter().map(|r| r.abs()).collect::<Vec<_>>());
    let limit = rule.mad_multiple * mad.max(rule.min_scale);
    residual.iter().map(|r| r.abs() > limit).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanReport {
    pub dropped_frames: usize,
    pub flagged_frames: usize,
    pub warnings: Vec<String>,
}

/// Drops frames at or below [`MIN_SPEED`] and flags (never removes) sideslip
/// outliers.
pub fn gate_and_clean(dataset: &Dataset, rule: &OutlierRule) -> (Dataset, CleanReport) {
    let mut report = CleanReport::default();
    let manoeuvres = dataset
        .manoeuvres
        .iter()
        .map(|m| {
            let frames: Vec<MeasurementFrame> =
                m.frames.iter().filter(|f| f.vx > MIN_SPEED).copied().collect();
            report.dropped_frames += m.frames.len() - frames.len();
            if frames.is_empty() {
                let msg = format!("{}: no frames above {MIN_SPEED} m/s", m.id);
                warn!("{msg}");
                report.warnings.push(msg);
            }
            let beta: Vec<f64> = frames.iter().map(|f| f.beta_true).collect();
            let outliers = flag_outliers(&beta, rule);
            report.flagged_frames += outliers.iter().filter(|&&o| o).count();
            ManoeuvreRecord { id: m.id.clone(), kind: m.kind, frames, outliers }
        })
        .collect();
    (Dataset { manoeuvres, provenance: dataset.provenance.clone() }, report)
}

/// Zero-phase 5 Hz low-pass of every measured channel and of the sideslip
/// target. `t` and `ay_true` are left as recorded.
pub fn lowpass_manoeuvre(m: &ManoeuvreRecord) -> Result<ManoeuvreRecord> {
    let taps = fir::lowpass_taps(fir::DEFAULT_ORDER, fir::DEFAULT_CUTOFF_HZ / SAMPLE_RATE_HZ);
    let channel = |get: &dyn Fn(&MeasurementFrame) -> f64| -> Result<Vec<f64>> {
        let x: Vec<f64> = m.frames.iter().map(get).collect();
        fir::filter_zero_phase(&x, &taps)
    };
    let vx = channel(&|f| f.vx)?;
    let ax = channel(&|f| f.ax)?;
    let ay = channel(&|f| f.ay)?;
    let yaw = channel(&|f| f.yaw_rate)?;
    let delta = channel(&|f| f.delta)?;
    let beta = channel(&|f| f.beta_true)?;
    let forces = match m.frames.first().and_then(|f| f.wheels) {
        Some(_) => {
            let mut cols = Vec::with_capacity(12);
            for c in 0..12 {
                cols.push(channel(&|f| f.wheels.map_or(f64::NAN, |w| w.channels()[c]))?);
            }
            Some(cols)
        }
        None => None,
    };
    let frames = m
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| MeasurementFrame {
            t: f.t,
            vx: vx[i],
            ax: ax[i],
            ay: ay[i],
            yaw_rate: yaw[i],
            delta: delta[i],
            wheels: forces.as_ref().map(|cols| {
                let c: Vec<f64> = cols.iter().map(|col| col[i]).collect();
                WheelForces::from_channels(&c)
            }),
            beta_true: beta[i],
            ay_true: f.ay_true,
        })
        .collect();
    Ok(ManoeuvreRecord { id: m.id.clone(), kind: m.kind, frames, outliers: m.outliers.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub stratify_by_kind: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.75, val: 0.15, test: 0.10, seed: 7, stratify_by_kind: true }
    }
}

/// Manoeuvre ids per subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    version: u32,
    spec: SplitSpec,
    #[serde(flatten)]
    split: Split,
}

impl Split {
    pub fn save(&self, path: &Path, spec: &SplitSpec) -> Result<()> {
        write_json(path, &SplitManifest { version: 1, spec: *spec, split: self.clone() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(read_json::<SplitManifest>(path)?.split)
    }
}

/// Rounds half down, tolerating representation error in `fraction · n`.
fn subset_size(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    (x - 0.5 - 1e-9).ceil().max(0.0) as usize
}

/// Splits at manoeuvre granularity. Validation and test sizes are the rounded
/// fractions (halves round down) and the remainder goes to training. With
/// stratification, each kind is shuffled and the kinds are interleaved in
/// proportion before the subsets are cut, so every subset sees the kind mix.
pub fn split_by_manoeuvre(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let sum = spec.train + spec.val + spec.test;
    if (sum - 1.0).abs() > 1e-9 || [spec.train, spec.val, spec.test].iter().any(|f| *f < 0.0) {
        return Err(Error::SplitFractions(sum));
    }
    let n = dataset.manoeuvres.len();
    if n < 10 {
        return Err(Error::TooFewManoeuvres { needed: 10, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let order: Vec<&ManoeuvreRecord> = if spec.stratify_by_kind {
        let mut groups: BTreeMap<ManoeuvreKind, Vec<&ManoeuvreRecord>> = BTreeMap::new();
        for m in &dataset.manoeuvres {
            groups.entry(m.kind).or_default().push(m);
        }
        for g in groups.values_mut() {
            g.shuffle(&mut rng);
        }
        // merge by the fractional position of each kind's next member
        let mut cursors: Vec<(usize, Vec<&ManoeuvreRecord>)> =
            groups.into_values().map(|g| (0, g)).collect();
        let mut merged = Vec::with_capacity(n);
        while merged.len() < n {
            let (_, pick) = cursors
                .iter()
                .enumerate()
                .filter(|(_, (i, g))| *i < g.len())
                .map(|(k, (i, g))| ((*i as f64 + 0.5) / g.len() as f64, k))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            let (i, g) = &mut cursors[pick];
            merged.push(g[*i]);
            *i += 1;
        }
        merged
    } else {
        let mut all: Vec<&ManoeuvreRecord> = dataset.manoeuvres.iter().collect();
        all.shuffle(&mut rng);
        all
    };
    let n_test = subset_size(spec.test, n);
    let n_val = subset_size(spec.val, n);
    let ids = |ms: &[&ManoeuvreRecord]| ms.iter().map(|m| m.id.clone()).collect::<Vec<_>>();
    Ok(Split {
        test: ids(&order[..n_test]),
        val: ids(&order[n_test..n_test + n_val]),
        train: ids(&order[n_test + n_val..]),
    })
}

/// Stride-1 windows of `window` rows over one manoeuvre's feature matrix; the
/// target of each window is the value at its last row.
pub fn window_sequences(
    features: ArrayView2<f64>,
    targets: &[f64],
    window: usize,
) -> Vec<(Array2<f64>, f64)> {
    let n = features.nrows();
    if n < window || window == 0 {
        warn!("manoeuvre of {n} samples is shorter than the {window}-sample window");
        return Vec::new();
    }
    (0..=n - window)
        .map(|start| (features.slice(s![start..start + window, ..]).to_owned(), targets[start + window - 1]))
        .collect()
}
