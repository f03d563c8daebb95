//! Gaussian-process / expected-improvement search over filter noise and
//! model constants, scored by pooled validation RMSE.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::datapipe::ManoeuvreRecord;
use crate::error::{Error, Result};
use crate::evaluation::rmse;
use crate::kalman::{run_filter, FilterConfig, FilterKind, NoiseParams};
use crate::plant_sim::derive_seed;
use crate::vehicle_model::MeasurementSet;

pub const HISTORY_VERSION: u32 = 1;
pub const MIN_BUDGET: usize = 5;
/// Failed trials score this multiple of the worst completed objective.
pub const FAILURE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl ParamSpec {
    pub fn new(name: &str, lower: f64, upper: f64, scale: Scale) -> Self {
        Self { name: name.to_string(), lower, upper, scale }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v / self.lower).ln() / (self.upper / self.lower).ln(),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => self.lower * (self.upper / self.lower).powf(u),
        };
        v.clamp(self.lower, self.upper)
    }
}

pub type Assignment = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Empty("search space"));
        }
        for (i, p) in params.iter().enumerate() {
            if !(p.lower < p.upper) || !p.lower.is_finite() || !p.upper.is_finite() {
                return Err(Error::Config(format!("{}: lower bound must be below upper bound", p.name)));
            }
            if p.scale == Scale::Log && p.lower <= 0.0 {
                return Err(Error::Config(format!("{}: log scale needs positive bounds", p.name)));
            }
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate parameter {}", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn assignment(&self, values: &[f64]) -> Assignment {
        self.params.iter().zip(values).map(|(p, v)| (p.name.clone(), *v)).collect()
    }

    /// Values in parameter order; rejects missing names and out-of-bounds values.
    pub fn values(&self, a: &Assignment) -> Result<Vec<f64>> {
        if a.len() != self.dim() {
            return Err(Error::Tuning(format!("assignment has {} parameters, space {}", a.len(), self.dim())));
        }
        self.params
            .iter()
            .map(|p| {
                let v = *a.get(&p.name).ok_or_else(|| Error::Tuning(format!("assignment lacks {}", p.name)))?;
                if !(v >= p.lower && v <= p.upper) {
                    return Err(Error::OutOfBounds { name: p.name.clone(), value: v, lower: p.lower, upper: p.upper });
                }
                Ok(v)
            })
            .collect()
    }

    pub fn to_unit(&self, values: &[f64]) -> Vec<f64> {
        self.params.iter().zip(values).map(|(p, v)| p.to_unit(*v)).collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.params.iter().zip(unit).map(|(p, u)| p.from_unit(*u)).collect()
    }

    pub fn initial_design_size(&self) -> usize {
        MIN_BUDGET.max(self.dim() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    SpaceFilling,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub assignment: Assignment,
    /// Objective for completed trials; the penalty for failed ones (absent
    /// if nothing had completed yet).
    pub objective: Option<f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningHistory {
    pub version: u32,
    pub seed: u64,
    pub space: SearchSpace,
    pub trials: Vec<Trial>,
}

impl TuningHistory {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::datapipe::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let h: Self = crate::datapipe::read_json(path)?;
        if h.version != HISTORY_VERSION {
            return Err(Error::format(path, format!("history version {} (expected {HISTORY_VERSION})", h.version)));
        }
        Ok(h)
    }

    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .min_by(|a, b| a.objective.partial_cmp(&b.objective).expect("completed objectives are finite"))
    }

    /// Best completed objective after each trial (`None` until one completes).
    pub fn best_so_far(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.trials
            .iter()
            .map(|t| {
                if t.status == TrialStatus::Completed {
                    let v = t.objective.expect("completed trial has an objective");
                    best = Some(best.map_or(v, |b| b.min(v)));
                }
                best
            })
            .collect()
    }
}

/// Numerical breakdowns of an estimator run, scored as failed trials rather
/// than aborting the search.
pub fn is_numerical_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::FilterDivergence { .. }
            | Error::NotPositiveSemiDefinite { .. }
            | Error::SingularInnovation
            | Error::NonFiniteJacobian { .. }
            | Error::Divergence(_)
            | Error::NonFiniteLoss { .. }
    )
}

/// Sequential optimizer state; the proposal for trial `k` depends only on the
/// seed and trials `0..k`, so an interrupted run resumes to the same sequence.
#[derive(Debug, Clone)]
pub struct Tuner {
    space: SearchSpace,
    seed: u64,
    design: Vec<Vec<f64>>,
    trials: Vec<Trial>,
}

impl Tuner {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        let design = latin_hypercube(space.initial_design_size(), space.dim(), derive_seed(seed, 0));
        Self { space, seed, design, trials: Vec::new() }
    }

    pub fn resume(history: TuningHistory) -> Result<Self> {
        let mut tuner = Self::new(history.space, history.seed);
        for (k, t) in history.trials.iter().enumerate() {
            if t.index != k {
                return Err(Error::Tuning(format!("history trial {k} carries index {}", t.index)));
            }
            tuner.space.values(&t.assignment)?;
        }
        tuner.trials = history.trials;
        Ok(tuner)
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn history(&self) -> TuningHistory {
        TuningHistory { version: HISTORY_VERSION, seed: self.seed, space: self.space.clone(), trials: self.trials.clone() }
    }

    /// Next point to evaluate, in parameter units.
    pub fn propose(&self) -> (Phase, Vec<f64>) {
        let k = self.trials.len();
        if k < self.design.len() {
            return (Phase::SpaceFilling, self.space.from_unit(&self.design[k]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1000 + k as u64));
        let (xs, ys) = self.training_data();
        let unit = if xs.is_empty() {
            (0..self.space.dim()).map(|_| rng.random::<f64>()).collect()
        } else {
            let gp = GaussianProcess::fit(&xs, &ys);
            maximize_ei(&gp, &xs, &ys, &mut rng)
        };
        (Phase::Surrogate, self.space.from_unit(&unit))
    }

    fn training_data(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let penalty = self.penalty();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in &self.trials {
            let y = match t.status {
                TrialStatus::Completed => t.objective,
                TrialStatus::Failed => penalty,
            };
            if let Some(y) = y {
                xs.push(self.space.to_unit(&self.space.values(&t.assignment).expect("recorded trials are in bounds")));
                ys.push(y);
            }
        }
        (xs, ys)
    }

    fn penalty(&self) -> Option<f64> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .filter_map(|t| t.objective)
            .fold(None, |w: Option<f64>, v| Some(w.map_or(v, |w| w.max(v))))
            .map(|w| FAILURE_PENALTY * w)
    }

    /// Evaluates one proposal. Numerical failures are recorded; other errors
    /// abort.
    pub fn step<F: FnMut(&Assignment) -> Result<f64>>(&mut self, objective: &mut F) -> Result<&Trial> {
        let (phase, values) = self.propose();
        let assignment = self.space.assignment(&values);
        let start = Instant::now();
        let outcome = match objective(&assignment) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(format!("non-finite objective {v}")),
            Err(e) if is_numerical_failure(&e) => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        let wall_time_s = start.elapsed().as_secs_f64();
        let index = self.trials.len();
        let trial = match outcome {
            Ok(v) => Trial {
                index,
                phase,
                assignment,
                objective: Some(v),
                status: TrialStatus::Completed,
                failure: None,
                wall_time_s,
            },
            Err(msg) => {
                log::warn!("trial {index} failed: {msg}");
                Trial {
                    index,
                    phase,
                    assignment,
                    objective: self.penalty(),
                    status: TrialStatus::Failed,
                    failure: Some(msg),
                    wall_time_s,
                }
            }
        };
        log::info!("trial {index} ({phase:?}): {:?}", trial.objective);
        self.trials.push(trial);
        Ok(self.trials.last().expect("just pushed"))
    }

    /// Runs until `budget` trials exist, saving the history after every trial
    /// when `checkpoint` is given.
    pub fn run<F: FnMut(&Assignment) -> Result<f64>>(
        &mut self,
        budget: usize,
        mut objective: F,
        checkpoint: Option<&Path>,
    ) -> Result<Trial> {
        if budget < MIN_BUDGET {
            return Err(Error::Tuning(format!("budget {budget} below the minimum of {MIN_BUDGET}")));
        }
        while self.trials.len() < budget {
            self.step(&mut objective)?;
            if let Some(path) = checkpoint {
                self.history().save(path)?;
            }
        }
        self.history().best().cloned().ok_or_else(|| Error::Tuning("all trials failed".into()))
    }
}

/// GP-EI minimization from scratch; returns the best trial and the history.
pub fn optimize<F: FnMut(&Assignment) -> Result<f64>>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    objective: F,
) -> Result<(Trial, TuningHistory)> {
    let mut tuner = Tuner::new(space.clone(), seed);
    let best = tuner.run(budget, objective, None)?;
    Ok((best, tuner.history()))
}

/// One point per stratum in every dimension, strata shuffled independently.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

const LENGTH_GRID: [f64; 8] = [0.03, 0.06, 0.12, 0.25, 0.5, 1.0, 2.0, 4.0];
const NUGGET_GRID: [f64; 3] = [1e-6, 1e-4, 1e-2];

/// Zero-mean GP on standardized targets with a squared-exponential kernel;
/// signal variance profiled out of the likelihood.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    pub length_scales: Vec<f64>,
    pub nugget: f64,
    xs: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    signal_var: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

fn se_kernel(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    (-0.5 * r2).exp()
}

struct Fit {
    log_lik: f64,
    signal_var: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

fn fit_once(xs: &[Vec<f64>], y: &DVector<f64>, ls: &[f64], nugget: f64) -> Option<Fit> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| se_kernel(&xs[i], &xs[j], ls) + if i == j { nugget } else { 0.0 });
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let signal_var = (y.dot(&alpha) / n as f64).max(1e-12);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_lik = -0.5 * n as f64 * signal_var.ln() - 0.5 * log_det;
    log_lik.is_finite().then_some(Fit { log_lik, signal_var, chol, alpha })
}

impl GaussianProcess {
    /// Coordinate-wise grid search of length scales and nugget on the
    /// marginal likelihood, two sweeps.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Self {
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let y_std = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_std = if y_std > 0.0 { y_std } else { 1.0 };
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| (v - y_mean) / y_std));
        let dim = xs[0].len();
        let mut ls = vec![0.25; dim];
        let mut nugget = 1e-4;
        let mut best = fit_once(xs, &y, &ls, nugget);
        let score = |f: &Option<Fit>| f.as_ref().map_or(f64::NEG_INFINITY, |f| f.log_lik);
        for _ in 0..2 {
            for d in 0..dim {
                for &l in &LENGTH_GRID {
                    let mut trial = ls.clone();
                    trial[d] = l;
                    let f = fit_once(xs, &y, &trial, nugget);
                    if score(&f) > score(&best) {
                        best = f;
                        ls = trial;
                    }
                }
            }
            for &g in &NUGGET_GRID {
                let f = fit_once(xs, &y, &ls, g);
                if score(&f) > score(&best) {
                    best = f;
                    nugget = g;
                }
            }
        }
        let fit = best.unwrap_or_else(|| {
            nugget = 1e-1;
            fit_once(xs, &y, &ls, nugget).expect("kernel with a large nugget is positive definite")
        });
        Self {
            length_scales: ls,
            nugget,
            xs: xs.to_vec(),
            y_mean,
            y_std,
            signal_var: fit.signal_var,
            chol: fit.chol,
            alpha: fit.alpha,
        }
    }

    /// Posterior mean and standard deviation in objective units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| se_kernel(xi, x, &self.length_scales)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (self.signal_var * (1.0 + self.nugget - k.dot(&v))).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let imp = best - mean;
    if std <= 1e-12 {
        return imp.max(0.0);
    }
    let z = imp / std;
    let n = StdNormal::standard();
    imp * n.cdf(z) + std * n.pdf(z)
}

const UNIFORM_CANDIDATES: usize = 2000;
const LOCAL_CANDIDATES: usize = 500;

fn maximize_ei(gp: &GaussianProcess, xs: &[Vec<f64>], ys: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = xs[0].len();
    let best_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.sort_by(|a, b| ys[*a].total_cmp(&ys[*b]));
    let mut candidates: Vec<Vec<f64>> =
        (0..UNIFORM_CANDIDATES).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    for k in 0..LOCAL_CANDIDATES {
        let centre = &xs[order[k % order.len().min(3)]];
        let spread = [0.01, 0.05, 0.15][k % 3];
        let noise = Normal::new(0.0, spread).expect("positive spread");
        candidates.push(centre.iter().map(|c| (c + noise.sample(rng)).clamp(0.0, 1.0)).collect());
    }
    let ei = |x: &[f64]| {
        let (m, s) = gp.predict(x);
        expected_improvement(m, s, best_y)
    };
    let mut best = (f64::NEG_INFINITY, candidates[0].clone());
    for c in candidates {
        let v = ei(&c);
        if v > best.0 {
            best = (v, c);
        }
    }
    // shrinking coordinate pattern search from the best candidate
    let (mut val, mut x) = best;
    let mut step = 0.02;
    while step > 1e-4 {
        let mut improved = false;
        for d in 0..dim {
            for sign in [-1.0, 1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + sign * step).clamp(0.0, 1.0);
                let v = ei(&y);
                if v > val {
                    val = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    x
}

/// A filter estimator scored on validation manoeuvres.
#[derive(Debug, Clone)]
pub struct FilterWorkload<'a> {
    pub kind: FilterKind,
    pub set: MeasurementSet,
    pub manoeuvres: &'a [ManoeuvreRecord],
    pub noise: NoiseParams,
    pub config: FilterConfig,
}

impl FilterWorkload<'_> {
    /// Noise stds over two decades around the defaults plus the nominal tyre
    /// constants, which the filter cannot observe otherwise.
    pub fn default_space(&self) -> SearchSpace {
        let decade = |name: &str, v: f64| ParamSpec::new(name, v / 10.0, v * 10.0, Scale::Log);
        let n = &NoiseParams::default();
        let mut params = vec![
            decade("sigma_vy", n.process[0]),
            decade("sigma_yaw_rate_process", n.process[1]),
            decade("sigma_ay", n.observation[0]),
            decade("sigma_yaw_rate", n.observation[1]),
        ];
        if self.set == MeasurementSet::Y2 {
            params.push(ParamSpec::new("sigma_fy_front", 30.0, 3000.0, Scale::Log));
            params.push(ParamSpec::new("sigma_fy_rear", 30.0, 3000.0, Scale::Log));
        }
        params.push(ParamSpec::new("stiffness_scale_front", 0.7, 1.6, Scale::Linear));
        params.push(ParamSpec::new("stiffness_scale_rear", 0.7, 1.6, Scale::Linear));
        params.push(ParamSpec::new("friction_mu", 0.8, 1.4, Scale::Linear));
        SearchSpace::new(params).expect("static bounds are valid")
    }

    /// Noise and filter config with the named entries of `a` substituted.
    pub fn apply(&self, a: &Assignment) -> Result<(NoiseParams, FilterConfig)> {
        let mut noise = self.noise;
        let mut config = self.config;
        let base = self.config.model.tyre;
        for (name, &v) in a {
            match name.as_str() {
                "sigma_vy" => noise.process[0] = v,
                "sigma_yaw_rate_process" => noise.process[1] = v,
                "sigma_ay" => noise.observation[0] = v,
                "sigma_yaw_rate" => noise.observation[1] = v,
                "sigma_fy_front" => noise.observation[2] = v,
                "sigma_fy_rear" => noise.observation[3] = v,
                "stiffness_scale_front" => config.model.tyre.cornering_stiffness_front = base.cornering_stiffness_front * v,
                "stiffness_scale_rear" => config.model.tyre.cornering_stiffness_rear = base.cornering_stiffness_rear * v,
                "friction_mu" => config.model.tyre.friction_mu = v,
                other => return Err(Error::Tuning(format!("unknown filter parameter {other}"))),
            }
        }
        Ok((noise, config))
    }

    /// Pooled sideslip RMSE (deg) over the workload's manoeuvres.
    pub fn evaluate(&self, a: &Assignment) -> Result<f64> {
        let (noise, config) = self.apply(a)?;
        let mut est = Vec::new();
        let mut truth = Vec::new();
        for m in self.manoeuvres {
            let out = run_filter(self.kind, &m.frames, &noise, &config, self.set)?;
            est.extend(out.samples.iter().map(|s| s.beta_hat.to_degrees()));
            truth.extend(out.samples.iter().map(|s| s.beta_true.to_degrees()));
        }
        rmse(&est, &truth)
    }
}

/// Bounds-checked objective evaluation.
pub fn objective_eval(space: &SearchSpace, a: &Assignment, workload: &FilterWorkload) -> Result<f64> {
    space.values(a)?;
    workload.evaluate(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_space() -> SearchSpace {
        SearchSpace::new(vec![ParamSpec::new("x", 0.0, 1.0, Scale::Linear)]).unwrap()
    }

    #[test]
    fn space_rejects_bad_bounds() {
        assert!(SearchSpace::new(vec![ParamSpec::new("x", 1.0, 1.0, Scale::Linear)]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::new("x", 0.0, 1.0, Scale::Log)]).is_err());
        let dup = vec![ParamSpec::new("x", 0.0, 1.0, Scale::Linear), ParamSpec::new("x", 0.0, 2.0, Scale::Linear)];
        assert!(SearchSpace::new(dup).is_err());
    }

    #[test]
    fn log_scale_round_trips() {
        let s = SearchSpace::new(vec![ParamSpec::new("s", 0.01, 1.0, Scale::Log)]).unwrap();
        assert!((s.from_unit(&[0.5])[0] - 0.1).abs() < 1e-12);
        assert!((s.to_unit(&[0.1])[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_assignment_is_rejected() {
        let a: Assignment = [("x".to_string(), 1.5)].into();
        assert!(matches!(quad_space().values(&a), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let pts = latin_hypercube(7, 3, 11);
        for d in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[d] * 7.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn quadratic_minimum_found_within_one_percent() {
        let x_star = 0.37;
        let (best, history) = optimize(&quad_space(), 20, 3, |a| Ok((a["x"] - x_star).powi(2))).unwrap();
        assert_eq!(history.trials.len(), 20);
        assert!((best.assignment["x"] - x_star).abs() <= 0.01 * x_star, "{:?}", best.assignment);
    }

    #[test]
    fn small_budget_is_all_space_filling() {
        let params = (0..4).map(|i| ParamSpec::new(&format!("p{i}"), -1.0, 1.0, Scale::Linear)).collect();
        let space = SearchSpace::new(params).unwrap();
        let (_, h) = optimize(&space, 5, 1, |a| Ok(a.values().map(|v| v * v).sum())).unwrap();
        assert_eq!(h.trials.len(), 5);
        assert!(h.trials.iter().all(|t| t.phase == Phase::SpaceFilling));
        assert!(optimize(&space, 4, 1, |_| Ok(0.0)).is_err());
    }

    fn rosen(a: &Assignment) -> Result<f64> {
        let (x, y) = (a["x"], a["y"]);
        Ok((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
    }

    fn rosen_space() -> SearchSpace {
        SearchSpace::new(vec![ParamSpec::new("x", -2.0, 2.0, Scale::Linear), ParamSpec::new("y", -1.0, 3.0, Scale::Linear)])
            .unwrap()
    }

    #[test]
    fn history_is_monotone_bounded_and_deterministic() {
        let (_, h1) = optimize(&rosen_space(), 15, 9, rosen).unwrap();
        let (_, h2) = optimize(&rosen_space(), 15, 9, rosen).unwrap();
        let strip = |h: &TuningHistory| h.trials.iter().map(|t| (t.assignment.clone(), t.objective)).collect::<Vec<_>>();
        assert_eq!(strip(&h1), strip(&h2));
        let best: Vec<f64> = h1.best_so_far().into_iter().map(Option::unwrap).collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        for t in &h1.trials {
            assert!(rosen_space().values(&t.assignment).is_ok());
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.json");
        let mut first = Tuner::new(rosen_space(), 4);
        first.run(8, rosen, Some(&path)).unwrap();
        let mut resumed = Tuner::resume(TuningHistory::load(&path).unwrap()).unwrap();
        resumed.run(12, rosen, None).unwrap();
        let (_, straight) = optimize(&rosen_space(), 12, 4, rosen).unwrap();
        let a: Vec<_> = resumed.trials().iter().map(|t| t.assignment.clone()).collect();
        let b: Vec<_> = straight.trials.iter().map(|t| t.assignment.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_get_the_penalty_and_all_failed_is_an_error() {
        let mut calls = 0;
        let (_, h) = optimize(&quad_space(), 8, 2, |a| {
            calls += 1;
            if calls == 3 {
                Err(Error::FilterDivergence { step: 0, trace: 1e4 })
            } else {
                Ok(a["x"] + 1.0)
            }
        })
        .unwrap();
        let failed = &h.trials[2];
        assert_eq!(failed.status, TrialStatus::Failed);
        let worst = h.trials[..2].iter().filter_map(|t| t.objective).fold(0.0, f64::max);
        assert_eq!(failed.objective, Some(10.0 * worst));
        let all = optimize(&quad_space(), 5, 2, |_| Err(Error::SingularInnovation));
        assert!(matches!(all, Err(Error::Tuning(_))));
        let fatal = optimize(&quad_space(), 5, 2, |_| Err(Error::Config("bad".into())));
        assert!(matches!(fatal, Err(Error::Config(_))));
    }

    #[test]
    fn gp_interpolates_its_data() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let gp = GaussianProcess::fit(&xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            let (m, s) = gp.predict(x);
            assert!((m - y).abs() < 0.05, "{m} vs {y}");
            assert!(s < 0.1);
        }
    }

    #[test]
    fn expected_improvement_limits() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0), 1.0);
        assert_eq!(expected_improvement(3.0, 0.0, 2.0), 0.0);
        // mean at the incumbent: EI = σ φ(0)
        assert!((expected_improvement(2.0, 1.0, 2.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
