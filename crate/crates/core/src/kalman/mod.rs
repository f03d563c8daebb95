//! EKF and UKF observers.
//!
//! The step functions are generic over [`StateSpaceModel`]; the
//! vehicle-specific wrappers ([`ekf_step`], [`ukf_step`], [`run_filter`])
//! bind them to the single-track model and add the adaptive force-noise law.

mod adaptive;
mod jacobian;
mod unscented;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use adaptive::{adapt_tyre_noise, AdaptiveNoiseConfig, HysteresisState};
pub use jacobian::numeric_jacobian;
pub use unscented::{matrix_sqrt, propagate, sigma_points, unscented_transform, SigmaPointSet, UkfScaling};

use crate::error::{Error, Result};
use crate::frame::{MeasurementFrame, SAMPLE_PERIOD};
use crate::vehicle_model::{self, ControlInput, MeasurementSet, SingleTrack, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetrizes in place and checks the smallest eigenvalue.
    pub fn enforce_psd(&mut self) -> Result<()> {
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        let scale = self.cov.abs().max().max(1.0);
        let min = self.cov.clone().symmetric_eigenvalues().min();
        if !(min >= -1e-12 * scale) {
            return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min });
        }
        Ok(())
    }

    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.mean[0], self.mean[1])
    }
}

/// Discrete-time model: `x⁺ = predict(x)`, `y = observe(x)`.
pub trait StateSpaceModel {
    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ukf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
        }
    }
}

/// Per-step standard deviations of the discretized process and of the
/// measurement channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// (σ_vy m/s, σ_ψ̇ rad/s)
    pub process: [f64; 2],
    /// (σ_ay m/s², σ_ψ̇ rad/s, σ_FyF N, σ_FyR N)
    pub observation: [f64; 4],
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { process: [0.01, 0.002], observation: [0.3, 0.005, 300.0, 300.0] }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.process.iter().chain(&self.observation).all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("noise parameters must be positive: {self:?}")))
        }
    }

    pub fn process_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(2, self.process.iter().map(|s| s * s)))
    }

    /// Measurement covariance, with the force stds optionally replaced.
    pub fn observation_cov(&self, set: MeasurementSet, forces: Option<(f64, f64)>) -> DMatrix<f64> {
        let mut stds = self.observation;
        if let Some((f, r)) = forces {
            stds[2] = f;
            stds[3] = r;
        }
        let n = set.dim();
        DMatrix::from_diagonal(&DVector::from_iterator(n, stds[..n].iter().map(|s| s * s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub model: SingleTrack,
    pub dt: f64,
    pub initial_cov: [f64; 2],
    pub ukf: UkfScaling,
    pub jacobian_eps: f64,
    /// Covariance trace above which a run is declared divergent.
    pub divergence_trace: f64,
    /// `None` disables force-noise adaptation.
    pub adaptive: Option<AdaptiveNoiseConfig>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            model: SingleTrack::default(),
            dt: SAMPLE_PERIOD,
            initial_cov: [0.5, 0.05],
            ukf: UkfScaling::default(),
            jacobian_eps: 1e-6,
            divergence_trace: 1e3,
            adaptive: Some(AdaptiveNoiseConfig::default()),
        }
    }
}

impl FilterConfig {
    pub fn initial_belief(&self) -> GaussianBelief {
        GaussianBelief::new(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.initial_cov)),
        )
    }
}

/// Innovation bookkeeping from one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

fn check_dim(z: &DVector<f64>, expected: usize) -> Result<()> {
    if z.len() != expected {
        return Err(Error::MeasurementDimension { expected, got: z.len() });
    }
    Ok(())
}

fn solve_gain(cross: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // K = C·S⁻¹, solved as S·Kᵀ = Cᵀ with S symmetric
    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

pub fn ekf_predict<M: StateSpaceModel>(
    belief: &GaussianBelief,
    model: &M,
    q: &DMatrix<f64>,
    eps: f64,
) -> Result<GaussianBelief> {
    let f = numeric_jacobian(|x| model.predict(x), &belief.mean, eps)?;
    let mean = model.predict(&belief.mean)?;
    let cov = &f * &belief.cov * f.transpose() + q;
    Ok(GaussianBelief::new(mean, cov))
}

/// Measurement update in Joseph form.
pub fn ekf_update<M: StateSpaceModel>(
    predicted: &GaussianBelief,
    model: &M,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    eps: f64,
) -> Result<(GaussianBelief, Update)> {
    check_dim(z, r.nrows())?;
    let h = numeric_jacobian(|x| model.observe(x), &predicted.mean, eps)?;
    let innovation = z - model.observe(&predicted.mean)?;
    let ph = &predicted.cov * h.transpose();
    let s = &h * &ph + r;
    let gain = solve_gain(&ph, &s)?;
    let mean = &predicted.mean + &gain * &innovation;
    let i_kh = DMatrix::identity(predicted.dim(), predicted.dim()) - &gain * &h;
    let cov = &i_kh * &predicted.cov * i_kh.transpose() + &gain * r * gain.transpose();
    let mut post = GaussianBelief::new(mean, cov);
    post.enforce_psd()?;
    Ok((post, Update { innovation, innovation_cov: s, gain }))
}

pub fn ukf_predict<M: StateSpaceModel>(
    belief: &GaussianBelief,
    model: &M,
    q: &DMatrix<f64>,
    scaling: &UkfScaling,
) -> Result<GaussianBelief> {
    let set = sigma_points(&belief.mean, &belief.cov, scaling)?;
    let (mean, cov) = unscented_transform(&set, |x| model.predict(x))?;
    Ok(GaussianBelief::new(mean, cov + q))
}

/// Measurement update with sigma points redrawn from the predicted belief.
pub fn ukf_update<M: StateSpaceModel>(
    predicted: &GaussianBelief,
    model: &M,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    scaling: &UkfScaling,
) -> Result<(GaussianBelief, Update)> {
    check_dim(z, r.nrows())?;
    let set = sigma_points(&predicted.mean, &predicted.cov, scaling)?;
    let (images, y_mean, y_cov) = propagate(&set, |x| model.observe(x))?;
    let s = y_cov + r;
    let mut cross = DMatrix::zeros(predicted.dim(), z.len());
    for ((x, y), w) in set.points.iter().zip(&images).zip(&set.cov_weights) {
        cross.ger(*w, &(x - &predicted.mean), &(y - &y_mean), 1.0);
    }
    let gain = solve_gain(&cross, &s)?;
    let innovation = z - y_mean;
    let mean = &predicted.mean + &gain * &innovation;
    let cov = &predicted.cov - &gain * &s * gain.transpose();
    let mut post = GaussianBelief::new(mean, cov);
    post.enforce_psd()?;
    Ok((post, Update { innovation, innovation_cov: s, gain }))
}

/// The single-track model over one sample with the input held.
#[derive(Debug, Clone, Copy)]
pub struct VehicleStepModel<'a> {
    pub model: &'a SingleTrack,
    pub input: ControlInput,
    pub dt: f64,
    pub set: MeasurementSet,
}

impl StateSpaceModel for VehicleStepModel<'_> {
    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let next = vehicle_model::integrate_step(
            VehicleState::new(x[0], x[1]),
            self.input,
            &self.model.vehicle,
            &self.model.tyre,
            self.dt,
        )?;
        Ok(DVector::from_vec(vec![next.vy, next.yaw_rate]))
    }

    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let y = vehicle_model::observe(
            VehicleState::new(x[0], x[1]),
            self.input,
            &self.model.vehicle,
            &self.model.tyre,
            self.set,
        )?;
        Ok(DVector::from_vec(y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub update: Update,
    pub hysteresis: HysteresisState,
    pub adapted: bool,
    /// max(|ΔF_yF|, |ΔF_yR|) against the predicted mean, N (Y2 only).
    pub force_mismatch: Option<f64>,
}

/// One predict/update cycle of either filter on the single-track model.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    kind: FilterKind,
    belief: &GaussianBelief,
    hysteresis: HysteresisState,
    input: ControlInput,
    measurement: &[f64],
    noise: &NoiseParams,
    config: &FilterConfig,
    set: MeasurementSet,
) -> Result<(GaussianBelief, StepRecord)> {
    let z = DVector::from_column_slice(measurement);
    check_dim(&z, set.dim())?;
    let model = VehicleStepModel { model: &config.model, input, dt: config.dt, set };
    let q = noise.process_cov();
    let predicted = match kind {
        FilterKind::Ekf => ekf_predict(belief, &model, &q, config.jacobian_eps)?,
        FilterKind::Ukf => ukf_predict(belief, &model, &q, &config.ukf)?,
    };
    let (mut forces, mut next_hyst, mut adapted, mut force_mismatch) = (None, hysteresis, false, None);
    if set == MeasurementSet::Y2 {
        let y = model.observe(&predicted.mean)?;
        let mismatch = (z[2] - y[2]).abs().max((z[3] - y[3]).abs());
        force_mismatch = Some(mismatch);
        if let Some(cfg) = &config.adaptive {
            let nominal = (noise.observation[2], noise.observation[3]);
            let (stds, h, flag) = adapt_tyre_noise(nominal, mismatch, hysteresis, cfg);
            forces = Some(stds);
            next_hyst = h;
            adapted = flag;
        }
    }
    let r = noise.observation_cov(set, forces);
    let (post, update) = match kind {
        FilterKind::Ekf => ekf_update(&predicted, &model, &z, &r, config.jacobian_eps)?,
        FilterKind::Ukf => ukf_update(&predicted, &model, &z, &r, &config.ukf)?,
    };
    Ok((post, StepRecord { update, hysteresis: next_hyst, adapted, force_mismatch }))
}

pub fn ekf_step(
    belief: &GaussianBelief,
    hysteresis: HysteresisState,
    input: ControlInput,
    measurement: &[f64],
    noise: &NoiseParams,
    config: &FilterConfig,
    set: MeasurementSet,
) -> Result<(GaussianBelief, StepRecord)> {
    filter_step(FilterKind::Ekf, belief, hysteresis, input, measurement, noise, config, set)
}

pub fn ukf_step(
    belief: &GaussianBelief,
    hysteresis: HysteresisState,
    input: ControlInput,
    measurement: &[f64],
    noise: &NoiseParams,
    config: &FilterConfig,
    set: MeasurementSet,
) -> Result<(GaussianBelief, StepRecord)> {
    filter_step(FilterKind::Ukf, belief, hysteresis, input, measurement, noise, config, set)
}

/// Measurement vector for `set`, axle forces summed over left and right wheels.
pub fn measurement_vector(frame: &MeasurementFrame, set: MeasurementSet) -> Result<Vec<f64>> {
    Ok(match set {
        MeasurementSet::Y1 => vec![frame.ay, frame.yaw_rate],
        MeasurementSet::Y2 => {
            let w = frame.wheels()?;
            vec![frame.ay, frame.yaw_rate, w.front_lateral(), w.rear_lateral()]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSample {
    pub t: f64,
    pub vx: f64,
    pub state: VehicleState,
    /// Covariance entries (p11, p12, p22).
    pub cov: [f64; 3],
    /// rad
    pub beta_hat: f64,
    pub beta_true: f64,
    pub ay_true: f64,
    pub adapted: bool,
    /// Pre-update axle-force mismatch, N (Y2 only).
    pub force_mismatch: Option<f64>,
    pub innovation: Vec<f64>,
    /// Innovation covariance, row-major.
    pub innovation_cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub kind: FilterKind,
    pub set: MeasurementSet,
    pub samples: Vec<FilterSample>,
}

impl FilterOutput {
    pub fn beta_hat(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.beta_hat).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "t,beta_hat,beta_true,vy_hat,yawrate_hat,p11,p22,adapt_flag").map_err(io)?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.t,
                s.beta_hat,
                s.beta_true,
                s.state.vy,
                s.state.yaw_rate,
                s.cov[0],
                s.cov[2],
                u8::from(s.adapted)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Filters a manoeuvre from the configured initial belief, one predict/update
/// per frame.
pub fn run_filter(
    kind: FilterKind,
    frames: &[MeasurementFrame],
    noise: &NoiseParams,
    config: &FilterConfig,
    set: MeasurementSet,
) -> Result<FilterOutput> {
    noise.validate()?;
    if let Some(a) = &config.adaptive {
        a.validate((noise.observation[2], noise.observation[3]))?;
    }
    let mut belief = config.initial_belief();
    let mut hysteresis = HysteresisState::default();
    let mut samples = Vec::with_capacity(frames.len());
    for (step, frame) in frames.iter().enumerate() {
        let z = measurement_vector(frame, set)?;
        let input = ControlInput::new(frame.delta, frame.vx);
        let (post, record) = filter_step(kind, &belief, hysteresis, input, &z, noise, config, set)?;
        let trace = post.cov.trace();
        if !(trace <= config.divergence_trace) {
            return Err(Error::FilterDivergence { step, trace });
        }
        belief = post;
        hysteresis = record.hysteresis;
        let state = belief.state();
        samples.push(FilterSample {
            t: frame.t,
            vx: frame.vx,
            state,
            cov: [belief.cov[(0, 0)], belief.cov[(0, 1)], belief.cov[(1, 1)]],
            beta_hat: state.sideslip(frame.vx),
            beta_true: frame.beta_true,
            ay_true: frame.ay_true,
            adapted: record.adapted,
            force_mismatch: record.force_mismatch,
            innovation: record.update.innovation.iter().copied().collect(),
            innovation_cov: record.update.innovation_cov.transpose().iter().copied().collect(),
        });
    }
    Ok(FilterOutput { kind, set, samples })
}
