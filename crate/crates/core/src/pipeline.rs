//! Run configuration and the generate → prepare → tune → train → run →
//! evaluate → report stages. Every stage reads and writes under `out`:
//!
//! ```text
//! out/dataset/raw/        generated recordings + dataset.json
//! out/dataset/prepared/   gated, low-passed recordings
//! out/dataset/split.json  manoeuvre ids per subset
//! out/tuning/             <estimator>_history.json, <estimator>_best.json
//! out/models/             <estimator>.json checkpoints
//! out/runs/<estimator>/   one CSV per test manoeuvre
//! out/reports/            KPI CSVs, comparison tables, histograms
//! ```

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datapipe::{
    gate_and_clean, lowpass_manoeuvre, split_by_manoeuvre, Dataset, ManoeuvreRecord, OutlierRule, Provenance, Split,
    SplitSpec, PIPELINE_VERSION,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_table, error_histogram, histogram_svg, reference_tables, ComparisonTable, KpiReport, Trace,
    HISTOGRAM_BIN_WIDTH,
};
use crate::frame::FileFormat;
use crate::kalman::{run_filter, AdaptiveNoiseConfig, FilterConfig, FilterKind, NoiseParams, UkfScaling};
use crate::neural::{
    train_with_early_stopping, Checkpoint, InputSet, NetworkKind, NetworkSpec, Scaler, SequenceSet, TrainConfig,
    CHECKPOINT_VERSION,
};
use crate::plant_sim::{build_catalogue, derive_seed, run_manoeuvre, CatalogueConfig, PlantParams, SensorNoiseSpec};
use crate::tuning::{Assignment, FilterWorkload, Tuner, TuningHistory};
use crate::vehicle_model::{MeasurementSet, SingleTrack, TyreParams, VehicleParams};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Estimator {
    Filter(FilterKind, MeasurementSet),
    Network(NetworkKind, InputSet),
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Filter(FilterKind::Ekf, MeasurementSet::Y1),
        Estimator::Filter(FilterKind::Ekf, MeasurementSet::Y2),
        Estimator::Filter(FilterKind::Ukf, MeasurementSet::Y1),
        Estimator::Filter(FilterKind::Ukf, MeasurementSet::Y2),
        Estimator::Network(NetworkKind::Ffnn, InputSet::I1),
        Estimator::Network(NetworkKind::Ffnn, InputSet::I2),
        Estimator::Network(NetworkKind::Rnn, InputSet::I1),
        Estimator::Network(NetworkKind::Rnn, InputSet::I2),
    ];

    /// File-name identifier, e.g. `ukf-tyre`, `rnn-i1`.
    pub fn id(self) -> String {
        match self {
            Estimator::Filter(k, s) => format!("{}-{}", k.name(), if s == MeasurementSet::Y1 { "imu" } else { "tyre" }),
            Estimator::Network(k, i) => format!("{}-{}", k.name(), i.name()),
        }
    }

    /// Table column heading, e.g. `UKF Tyre`.
    pub fn label(self) -> String {
        let (base, tyre) = match self {
            Estimator::Filter(k, s) => (k.name().to_uppercase(), s == MeasurementSet::Y2),
            Estimator::Network(k, i) => (k.name().to_uppercase(), i == InputSet::I2),
        };
        if tyre {
            format!("{base} Tyre")
        } else {
            base
        }
    }

    pub fn uses_tyre_forces(self) -> bool {
        matches!(self, Estimator::Filter(_, MeasurementSet::Y2) | Estimator::Network(_, InputSet::I2))
    }

    pub fn is_model_based(self) -> bool {
        matches!(self, Estimator::Filter(..))
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.id() == s.trim().to_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}; expected one of ekf|ukf-imu|tyre, ffnn|rnn-i1|i2")))
    }
}

impl TryFrom<String> for Estimator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Estimator> for String {
    fn from(e: Estimator) -> String {
        e.id()
    }
}

pub fn parse_estimators(list: &str) -> Result<Vec<Estimator>> {
    let v: Vec<Estimator> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::Config("estimator selection is empty".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratify_by_kind: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self { train: s.train, val: s.val, test: s.test, stratify_by_kind: s.stratify_by_kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub noise: NoiseParams,
    pub initial_cov: [f64; 2],
    pub ukf: UkfScaling,
    /// Force-noise adaptation for the tyre-force filters.
    pub adaptive: bool,
    pub adaptive_law: AdaptiveNoiseConfig,
}

impl Default for FilterSection {
    fn default() -> Self {
        let c = FilterConfig::default();
        Self {
            noise: NoiseParams::default(),
            initial_cov: c.initial_cov,
            ukf: c.ukf,
            adaptive: true,
            adaptive_law: AdaptiveNoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub enabled: bool,
    pub budget: usize,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self { enabled: true, budget: 60 }
    }
}

/// Optional overrides of a network's training preset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub stride: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub ffnn: TrainOverrides,
    pub rnn: TrainOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub run_id: String,
    pub seed: u64,
    pub out: PathBuf,
    /// `default` (60 manoeuvres), `reference` (23, the published test-set mix) or a
    /// manoeuvre count in the same kind ratios.
    pub catalogue: String,
    pub format: FileFormat,
    pub estimators: Vec<Estimator>,
    pub plant: PlantParams,
    pub sensor_noise: SensorNoiseSpec,
    pub vehicle: VehicleParams,
    /// Nominal filter tyres; derived from `vehicle` when absent.
    pub tyre: Option<TyreParams>,
    pub outliers: OutlierRule,
    pub split: SplitSection,
    pub filter: FilterSection,
    pub tuning: TuningSection,
    pub training: TrainingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            run_id: "run".into(),
            seed: 7,
            out: PathBuf::from("out"),
            catalogue: "default".into(),
            format: FileFormat::Csv,
            estimators: Estimator::ALL.to_vec(),
            plant: PlantParams::default(),
            sensor_noise: SensorNoiseSpec::default(),
            vehicle: VehicleParams::default(),
            tyre: None,
            outliers: OutlierRule::default(),
            split: SplitSection::default(),
            filter: FilterSection::default(),
            tuning: TuningSection::default(),
            training: TrainingSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator selection is empty".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("run id {:?} must be a plain file-name prefix", self.run_id)));
        }
        self.catalogue_config()?;
        self.vehicle.validate()?;
        self.filter.noise.validate()?;
        Ok(())
    }

    pub fn catalogue_config(&self) -> Result<CatalogueConfig> {
        match self.catalogue.as_str() {
            "default" => Ok(CatalogueConfig::scaled_mix(60, self.seed)),
            "reference" => Ok(CatalogueConfig::reference_mix(self.seed)),
            n => match n.parse::<usize>() {
                Ok(n) if n > 0 => Ok(CatalogueConfig::scaled_mix(n, self.seed)),
                _ => Err(Error::Config(format!("catalogue {n:?}: expected default, reference or a positive count"))),
            },
        }
    }

    pub fn nominal_model(&self) -> SingleTrack {
        SingleTrack { vehicle: self.vehicle, tyre: self.tyre.unwrap_or_else(|| TyreParams::default_for(&self.vehicle)) }
    }

    pub fn filter_config(&self, set: MeasurementSet) -> FilterConfig {
        FilterConfig {
            model: self.nominal_model(),
            initial_cov: self.filter.initial_cov,
            ukf: self.filter.ukf,
            adaptive: (self.filter.adaptive && set == MeasurementSet::Y2).then_some(self.filter.adaptive_law),
            ..FilterConfig::default()
        }
    }

    pub fn train_config(&self, kind: NetworkKind, input: InputSet) -> (NetworkSpec, TrainConfig) {
        let mut spec = NetworkSpec::preset(kind, input);
        let mut train = TrainConfig::preset(kind);
        let o = match kind {
            NetworkKind::Ffnn => self.training.ffnn,
            NetworkKind::Rnn => self.training.rnn,
        };
        train.learning_rate = o.learning_rate.unwrap_or(train.learning_rate);
        train.batch_size = o.batch_size.unwrap_or(train.batch_size);
        train.patience = o.patience.unwrap_or(train.patience);
        train.max_epochs = o.max_epochs.unwrap_or(train.max_epochs);
        train.stride = o.stride.unwrap_or(train.stride);
        spec.dropout = o.dropout.unwrap_or(spec.dropout);
        let stream = 10 + Estimator::ALL.iter().position(|e| *e == Estimator::Network(kind, input)).unwrap_or(0);
        train.seed = derive_seed(self.seed, stream as u64);
        (spec, train)
    }

    pub fn selected(&self) -> impl Iterator<Item = Estimator> + '_ {
        self.estimators.iter().copied()
    }
}

/// Output locations under the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn raw(&self) -> PathBuf {
        self.root.join("dataset/raw")
    }
    pub fn prepared(&self) -> PathBuf {
        self.root.join("dataset/prepared")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("dataset/split.json")
    }
    pub fn tuning(&self) -> PathBuf {
        self.root.join("tuning")
    }
    pub fn tuned(&self, e: Estimator) -> PathBuf {
        self.tuning().join(format!("{e}_best.json"))
    }
    pub fn history(&self, e: Estimator) -> PathBuf {
        self.tuning().join(format!("{e}_history.json"))
    }
    pub fn model(&self, e: Estimator) -> PathBuf {
        self.root.join("models").join(format!("{e}.json"))
    }
    pub fn runs(&self, e: Estimator) -> PathBuf {
        self.root.join("runs").join(e.id())
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Simulates the catalogue and writes the raw dataset.
pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let scripts = build_catalogue(&cfg.catalogue_config()?, &cfg.plant);
    let mut manoeuvres = Vec::with_capacity(scripts.len());
    for s in &scripts {
        let frames = run_manoeuvre(s, &cfg.plant, &cfg.sensor_noise)?;
        manoeuvres.push(ManoeuvreRecord::new(s.id.clone(), s.kind, frames));
    }
    let dataset = Dataset {
        manoeuvres,
        provenance: Provenance { generator_seed: cfg.seed, pipeline_version: PIPELINE_VERSION.into() },
    };
    let dir = Layout::new(&cfg.out).raw();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    dataset.save(&dir, cfg.format)?;
    log::info!("generated {} manoeuvres into {}", dataset.manoeuvres.len(), dir.display());
    Ok(dataset)
}

/// Gates, cleans and low-passes the raw dataset, then splits it by manoeuvre.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, Split)> {
    let layout = Layout::new(&cfg.out);
    let raw = Dataset::load(&layout.raw())?;
    let (clean, report) = gate_and_clean(&raw, &cfg.outliers);
    log::info!("dropped {} slow frames, flagged {} outliers", report.dropped_frames, report.flagged_frames);
    let manoeuvres = clean
        .manoeuvres
        .iter()
        .filter(|m| !m.frames.is_empty())
        .map(lowpass_manoeuvre)
        .collect::<Result<Vec<_>>>()?;
    let prepared = Dataset { manoeuvres, provenance: clean.provenance };
    let spec = SplitSpec {
        train: cfg.split.train,
        val: cfg.split.val,
        test: cfg.split.test,
        seed: derive_seed(prepared.provenance.generator_seed, 1),
        stratify_by_kind: cfg.split.stratify_by_kind,
    };
    let split = split_by_manoeuvre(&prepared, &spec)?;
    let dir = layout.prepared();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    prepared.save(&dir, cfg.format)?;
    split.save(&layout.split(), &spec)?;
    Ok((prepared, split))
}

fn subset(dataset: &Dataset, ids: &[String]) -> Result<Vec<ManoeuvreRecord>> {
    ids.iter()
        .map(|id| dataset.get(id).cloned().ok_or_else(|| Error::Config(format!("split names unknown manoeuvre {id}"))))
        .collect()
}

fn load_prepared(layout: &Layout) -> Result<(Dataset, Split)> {
    Ok((Dataset::load(&layout.prepared())?, Split::load(&layout.split())?))
}

/// Filter noise and model constants chosen by the tuner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedFilter {
    pub estimator: Estimator,
    /// Labels the search method in downstream reports.
    pub method: String,
    pub budget: usize,
    pub assignment: Assignment,
    pub validation_rmse_deg: f64,
    pub noise: NoiseParams,
    pub config: FilterConfig,
}

pub const TUNING_METHOD: &str = "single-stage GP-EI";

/// Tunes every selected filter on the validation manoeuvres. An existing
/// history for the same space and seed is resumed rather than repeated.
pub fn tune(cfg: &RunConfig) -> Result<Vec<TunedFilter>> {
    let layout = Layout::new(&cfg.out);
    let (dataset, split) = load_prepared(&layout)?;
    let val = subset(&dataset, &split.val)?;
    mkdir(&layout.tuning())?;
    let mut tuned = Vec::new();
    for e in cfg.selected() {
        let Estimator::Filter(kind, set) = e else { continue };
        let workload =
            FilterWorkload { kind, set, manoeuvres: &val, noise: cfg.filter.noise, config: cfg.filter_config(set) };
        let space = workload.default_space();
        let seed = derive_seed(cfg.seed, 2 + Estimator::ALL.iter().position(|x| *x == e).unwrap_or(0) as u64);
        let history_path = layout.history(e);
        let mut tuner = match TuningHistory::load(&history_path) {
            Ok(h) if h.seed == seed && h.space == space && h.trials.len() <= cfg.tuning.budget => Tuner::resume(h)?,
            _ => Tuner::new(space, seed),
        };
        let best = tuner.run(cfg.tuning.budget, |a| workload.evaluate(a), Some(&history_path))?;
        let (noise, config) = workload.apply(&best.assignment)?;
        let result = TunedFilter {
            estimator: e,
            method: TUNING_METHOD.into(),
            budget: cfg.tuning.budget,
            assignment: best.assignment.clone(),
            validation_rmse_deg: best.objective.expect("best trial completed"),
            noise,
            config,
        };
        log::info!("{e}: validation RMSE {:.4} deg", result.validation_rmse_deg);
        crate::datapipe::write_json(&layout.tuned(e), &result)?;
        tuned.push(result);
    }
    Ok(tuned)
}

fn sequence_set(
    records: &[ManoeuvreRecord],
    input: InputSet,
    scaler: &Scaler,
    window: usize,
    stride: usize,
) -> Result<SequenceSet> {
    let mut parts = Vec::with_capacity(records.len());
    for m in records {
        let x = scaler.apply(input.feature_matrix(&m.frames)?.view())?;
        let y: Vec<f64> = m.frames.iter().map(|f| f.beta_true.to_degrees()).collect();
        parts.push((x, y, m.outliers.clone()));
    }
    SequenceSet::new(parts, window, stride)
}

/// Trains every selected network on the training manoeuvres with early
/// stopping on the validation manoeuvres.
pub fn train(cfg: &RunConfig) -> Result<Vec<Checkpoint>> {
    let layout = Layout::new(&cfg.out);
    let (dataset, split) = load_prepared(&layout)?;
    let (train_set, val_set) = (subset(&dataset, &split.train)?, subset(&dataset, &split.val)?);
    let mut out = Vec::new();
    for e in cfg.selected() {
        let Estimator::Network(kind, input) = e else { continue };
        let (spec, tc) = cfg.train_config(kind, input);
        let raw: Vec<_> = train_set.iter().map(|m| input.feature_matrix(&m.frames)).collect::<Result<_>>()?;
        let scaler = Scaler::fit_many(raw.iter().map(|x| x.view()))?;
        let tr = sequence_set(&train_set, input, &scaler, spec.window, tc.stride)?;
        let va = sequence_set(&val_set, input, &scaler, spec.window, tc.stride)?;
        log::info!("{e}: {} training / {} validation windows", tr.len(), va.len());
        let outcome = train_with_early_stopping(&spec, &tr, &va, &tc)?;
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            input_set: input,
            spec,
            scaler,
            params: outcome.params,
            optimizer: outcome.optimizer,
            history: outcome.history,
        };
        let path = layout.model(e);
        mkdir(path.parent().expect("model path has a parent"))?;
        ckpt.save(&path)?;
        out.push(ckpt);
    }
    Ok(out)
}

fn filter_setup(cfg: &RunConfig, layout: &Layout, e: Estimator, set: MeasurementSet) -> Result<(NoiseParams, FilterConfig)> {
    let path = layout.tuned(e);
    if path.exists() {
        let t: TunedFilter = crate::datapipe::read_json(&path)?;
        return Ok((t.noise, t.config));
    }
    log::warn!("{e}: no tuning result, using configured noise");
    Ok((cfg.filter.noise, cfg.filter_config(set)))
}

/// Runs every selected estimator on the test manoeuvres; writes one CSV per
/// manoeuvre with at least `t,beta_hat,beta_true` (rad).
pub fn run(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let (dataset, split) = load_prepared(&layout)?;
    let test = subset(&dataset, &split.test)?;
    for e in cfg.selected() {
        let dir = layout.runs(e);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
        }
        mkdir(&dir)?;
        match e {
            Estimator::Filter(kind, set) => {
                let (noise, config) = filter_setup(cfg, &layout, e, set)?;
                for m in &test {
                    run_filter(kind, &m.frames, &noise, &config, set)?.write_csv(&dir.join(format!("{}.csv", m.id)))?;
                }
            }
            Estimator::Network(..) => {
                let ckpt = Checkpoint::load(&layout.model(e))?;
                for m in &test {
                    let beta = ckpt.predict(&m.frames)?;
                    write_network_csv(&dir.join(format!("{}.csv", m.id)), m, &beta)?;
                }
            }
        }
        log::info!("{e}: ran {} test manoeuvres", test.len());
    }
    Ok(())
}

fn write_network_csv(path: &Path, m: &ManoeuvreRecord, beta_deg: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "t,beta_hat,beta_true").map_err(io)?;
    for (f, b) in m.frames.iter().zip(beta_deg) {
        writeln!(w, "{},{},{}", f.t, b.to_radians(), f.beta_true).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_beta_hat(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let col = reader
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .position(|h| h.trim() == "beta_hat")
        .ok_or_else(|| Error::format(path, "missing beta_hat column"))?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::format(path, e))?;
            r.get(col).unwrap_or("").trim().parse::<f64>().map_err(|e| Error::format(path, e))
        })
        .collect()
}

/// Test-set traces (deg) for one estimator, excluding outlier-flagged frames.
pub fn collect_traces(layout: &Layout, e: Estimator, test: &[ManoeuvreRecord]) -> Result<Vec<Trace>> {
    test.iter()
        .map(|m| {
            let path = layout.runs(e).join(format!("{}.csv", m.id));
            let hat = read_beta_hat(&path)?;
            if hat.len() != m.frames.len() {
                return Err(Error::format(&path, format!("{} rows for {} frames", hat.len(), m.frames.len())));
            }
            let keep = |i: &usize| !m.outliers[*i];
            let idx: Vec<usize> = (0..hat.len()).filter(keep).collect();
            Ok(Trace {
                manoeuvre: m.id.clone(),
                beta_hat: idx.iter().map(|&i| hat[i].to_degrees()).collect(),
                beta_true: idx.iter().map(|&i| m.frames[i].beta_true.to_degrees()).collect(),
                ay_true: idx.iter().map(|&i| m.frames[i].ay_true).collect(),
            })
        })
        .collect()
}

fn evaluate_traces(cfg: &RunConfig) -> Result<Vec<(Estimator, KpiReport, Vec<Trace>)>> {
    let layout = Layout::new(&cfg.out);
    let (dataset, split) = load_prepared(&layout)?;
    let test = subset(&dataset, &split.test)?;
    cfg.selected()
        .map(|e| {
            let traces = collect_traces(&layout, e, &test)?;
            Ok((e, KpiReport::from_traces(&e.id(), &traces)?, traces))
        })
        .collect()
}

/// Scores every selected estimator and writes `<runid>_<estimator>_kpi.csv`.
pub fn evaluate(cfg: &RunConfig) -> Result<Vec<KpiReport>> {
    let dir = Layout::new(&cfg.out).reports();
    mkdir(&dir)?;
    let mut reports = Vec::new();
    for (_, report, _) in evaluate_traces(cfg)? {
        report.write_csv(&dir, &cfg.run_id)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Paths written by [`report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub tables: Vec<PathBuf>,
    pub histograms: Vec<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Model-based and data-driven comparison tables (CSV and text) and error
/// histograms; with `reference`, the published tables alongside.
pub fn report(cfg: &RunConfig, reference: bool) -> Result<ReportFiles> {
    let layout = Layout::new(&cfg.out);
    let dir = layout.reports();
    mkdir(&dir)?;
    let scored = evaluate_traces(cfg)?;
    let mut files = ReportFiles::default();
    for (model_based, name) in [(true, "model_based"), (false, "data_driven")] {
        let group: Vec<_> = scored.iter().filter(|(e, ..)| e.is_model_based() == model_based).collect();
        if group.is_empty() {
            continue;
        }
        for (_, r, _) in &group {
            r.write_csv(&dir, &cfg.run_id)?;
        }
        let reports: Vec<KpiReport> = group.iter().map(|(_, r, _)| r.clone()).collect();
        let mut table = comparison_table(&reports)?;
        table.columns = group.iter().map(|(e, ..)| e.label()).collect();
        let csv = dir.join(format!("{}_{name}.csv", cfg.run_id));
        let txt = dir.join(format!("{}_{name}.txt", cfg.run_id));
        write(&csv, &table.to_csv())?;
        let mut text = table.to_text();
        if model_based {
            text.push_str(&tuning_note(cfg, &layout, &group.iter().map(|(e, ..)| *e).collect::<Vec<_>>()));
        }
        write(&txt, &text)?;
        files.tables.extend([csv, txt]);

        let series = group
            .iter()
            .map(|(e, _, traces)| {
                let errs: Vec<f64> = traces.iter().flat_map(Trace::errors).collect();
                Ok((e.label(), error_histogram(&errs, HISTOGRAM_BIN_WIDTH)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let title = if model_based { "Model-based estimators" } else { "Data-driven estimators" };
        let svg = dir.join(format!("{}_{name}_errors.svg", cfg.run_id));
        write(&svg, &histogram_svg(title, &series))?;
        files.histograms.push(svg);
    }
    if reference {
        for (table, name) in reference_tables().iter().zip(["model_based", "data_driven"]) {
            let path = dir.join(format!("reference_{name}.txt"));
            write(&path, &table.to_text())?;
            files.tables.push(path);
        }
    }
    Ok(files)
}

fn tuning_note(cfg: &RunConfig, layout: &Layout, filters: &[Estimator]) -> String {
    let tuned = filters.iter().filter(|e| layout.tuned(**e).exists()).count();
    if tuned == 0 {
        return "filters run with configured noise (untuned)\n".into();
    }
    format!("filter noise tuned by {TUNING_METHOD}, budget {} per estimator\n", cfg.tuning.budget)
}

/// The full chain, in order.
pub fn run_all(cfg: &RunConfig, reference: bool) -> Result<ReportFiles> {
    generate(cfg)?;
    prepare(cfg)?;
    if cfg.tuning.enabled {
        tune(cfg)?;
    }
    train(cfg)?;
    run(cfg)?;
    evaluate(cfg)?;
    report(cfg, reference)
}

/// Reads one of the comparison-table CSVs back.
pub fn read_table(path: &Path) -> Result<ComparisonTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let columns: Vec<String> =
        reader.headers().map_err(|e| Error::format(path, e))?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for r in reader.records() {
        let r = r.map_err(|e| Error::format(path, e))?;
        let cells = r.iter().skip(1).map(|c| c.parse::<f64>().ok()).collect();
        rows.push((r.get(0).unwrap_or("").to_string(), cells));
    }
    Ok(ComparisonTable { columns, rows })
}
