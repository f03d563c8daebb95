//! Ground-truth generator.
//!
//! The plant is a two-track model with lagged lateral load transfer, static
//! longitudinal load transfer, a load-sensitive brush tyre per wheel and a
//! friction ellipse against the wheel's longitudinal force. It is intentionally
//! richer than the single-track/Dugoff estimator model so the observers face a
//! genuine model mismatch. The longitudinal velocity follows the script's
//! profile exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datapipe::fir;
use crate::error::{Error, Result};
use crate::frame::{MeasurementFrame, WheelForces, SAMPLE_PERIOD, SAMPLE_RATE_HZ};
use crate::vehicle_model::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManoeuvreKind {
    BrakeInTurn,
    Skidpad,
    JTurn,
    Slalom,
    DoubleLaneChange,
    RandomSteer,
    TrackLap,
    Spiral,
}

impl ManoeuvreKind {
    pub const ALL: [ManoeuvreKind; 8] = [
        ManoeuvreKind::BrakeInTurn,
        ManoeuvreKind::Skidpad,
        ManoeuvreKind::JTurn,
        ManoeuvreKind::Slalom,
        ManoeuvreKind::DoubleLaneChange,
        ManoeuvreKind::RandomSteer,
        ManoeuvreKind::TrackLap,
        ManoeuvreKind::Spiral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManoeuvreKind::BrakeInTurn => "brake_in_turn",
            ManoeuvreKind::Skidpad => "skidpad",
            ManoeuvreKind::JTurn => "j_turn",
            ManoeuvreKind::Slalom => "slalom",
            ManoeuvreKind::DoubleLaneChange => "double_lane_change",
            ManoeuvreKind::RandomSteer => "random_steer",
            ManoeuvreKind::TrackLap => "track_lap",
            ManoeuvreKind::Spiral => "spiral",
        }
    }
}

/// Road-wheel steering programme, rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SteerProfile {
    /// Ramp at `rate` from `start` up to `amplitude`, then hold.
    Step { start: f64, rate: f64, amplitude: f64 },
    /// Sinusoid from `start` with a one-period linear fade-in.
    Sine { start: f64, frequency: f64, amplitude: f64 },
    /// One full sine period, a straight `gap`, then the mirrored period.
    LaneChange { start: f64, frequency: f64, amplitude: f64, gap: f64 },
    /// Linear growth from `start`.
    Ramp { start: f64, rate: f64 },
    /// Band-limited Gaussian steering, white noise low-passed at `cutoff_hz`
    /// and scaled to `rms`, drawn from the script seed.
    Random { start: f64, cutoff_hz: f64, rms: f64 },
    /// Sum of raised-cosine pulses.
    Pulses { pulses: Vec<SteerPulse> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerPulse {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManoeuvreScript {
    pub id: String,
    pub kind: ManoeuvreKind,
    /// s
    pub duration: f64,
    /// Piecewise-linear `(t, vx)` knots, m/s, ascending in t.
    pub vx_profile: Vec<(f64, f64)>,
    pub steer: SteerProfile,
    pub seed: u64,
}

impl ManoeuvreScript {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!("{}: duration must be positive", self.id)));
        }
        if self.vx_profile.is_empty() {
            return Err(Error::Config(format!("{}: empty vx profile", self.id)));
        }
        if self.vx_profile.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(format!("{}: vx knots must be strictly ascending", self.id)));
        }
        if self.vx_profile.iter().any(|&(_, v)| !(v > 0.0)) {
            return Err(Error::Config(format!("{}: vx must stay positive", self.id)));
        }
        Ok(())
    }
}

/// Two-track plant description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub vehicle: VehicleParams,
    /// m
    pub track_front: f64,
    /// m
    pub track_rear: f64,
    /// m
    pub cg_height: f64,
    /// Share of lateral load transfer taken by the front axle.
    pub roll_share_front: f64,
    /// First-order lag of lateral load transfer, s.
    pub roll_lag: f64,
    /// N/rad per axle at static load.
    pub cornering_stiffness_front: f64,
    pub cornering_stiffness_rear: f64,
    pub friction_mu: f64,
    /// Degressive cornering-stiffness sensitivity to vertical load.
    pub load_sensitivity: f64,
    /// Braking force share on the front axle.
    pub brake_share_front: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            track_front: 1.55,
            track_rear: 1.57,
            cg_height: 0.55,
            roll_share_front: 0.6,
            roll_lag: 0.1,
            // stiffer and grippier than the estimator's nominal tyre
            cornering_stiffness_front: 140_000.0,
            cornering_stiffness_rear: 160_000.0,
            friction_mu: 1.15,
            load_sensitivity: 0.1,
            brake_share_front: 0.65,
        }
    }
}

impl PlantParams {
    fn static_wheel_loads(&self) -> (f64, f64) {
        let v = &self.vehicle;
        let w = v.mass * v.gravity;
        (0.5 * w * v.lr / v.wheelbase(), 0.5 * w * v.lf / v.wheelbase())
    }

    /// Road-wheel angle giving roughly `ay` in steady state at `vx` (linear
    /// understeer estimate).
    pub fn steer_for_lateral_accel(&self, ay: f64, vx: f64) -> f64 {
        let v = &self.vehicle;
        let k = v.mass / v.wheelbase()
            * (v.lr / self.cornering_stiffness_front - v.lf / self.cornering_stiffness_rear);
        (v.wheelbase() / (vx * vx) + k) * ay
    }
}

/// Dynamic plant state. Wheel quantities are the values at the current instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub vy: f64,
    pub yaw_rate: f64,
    /// Lagged lateral acceleration driving the lateral load transfer.
    pub ay_transfer: f64,
    pub wheels: WheelForces,
}

/// Per-channel sensor corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNoise {
    pub vx: f64,
    pub ax: f64,
    pub ay: f64,
    pub yaw_rate: f64,
    pub delta: f64,
    pub wheel_force: f64,
}

impl ChannelNoise {
    pub const ZERO: ChannelNoise =
        ChannelNoise { vx: 0.0, ax: 0.0, ay: 0.0, yaw_rate: 0.0, delta: 0.0, wheel_force: 0.0 };

    fn values(&self) -> [f64; 6] {
        [self.vx, self.ax, self.ay, self.yaw_rate, self.delta, self.wheel_force]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoiseSpec {
    /// Gaussian standard deviations.
    pub std: ChannelNoise,
    /// Per-run biases are drawn uniformly from `[-bias, bias]`.
    pub bias: ChannelNoise,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            std: ChannelNoise {
                vx: 0.05,
                ax: 0.05,
                ay: 0.05,
                yaw_rate: 0.002,
                delta: 0.001,
                wheel_force: 50.0,
            },
            bias: ChannelNoise {
                vx: 0.02,
                ax: 0.02,
                ay: 0.02,
                yaw_rate: 0.0005,
                delta: 0.0002,
                wheel_force: 10.0,
            },
        }
    }
}

impl SensorNoiseSpec {
    pub const NONE: SensorNoiseSpec =
        SensorNoiseSpec { std: ChannelNoise::ZERO, bias: ChannelNoise::ZERO };

    pub fn validate(&self) -> Result<()> {
        let all = self.std.values().into_iter().chain(self.bias.values());
        if all.into_iter().any(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("sensor noise stds and bias bounds must be >= 0".into()));
        }
        Ok(())
    }
}

/// Random stream and the fixed per-run biases for one recording.
#[derive(Debug, Clone)]
pub struct NoiseState {
    rng: ChaCha8Rng,
    bias: [f64; 5],
    force_bias: [f64; 12],
}

impl NoiseState {
    pub fn new(spec: &SensorNoiseSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
        let b = &spec.bias;
        let bias = [draw(b.vx), draw(b.ax), draw(b.ay), draw(b.yaw_rate), draw(b.delta)];
        let mut force_bias = [0.0; 12];
        force_bias.iter_mut().for_each(|v| *v = draw(b.wheel_force));
        Self { rng, bias, force_bias }
    }

    fn gauss(&mut self, std: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        std * z
    }
}

/// Adds Gaussian noise and the run's biases to every sensor channel. The
/// ground-truth channels are copied through untouched.
pub fn inject_noise(
    clean: &MeasurementFrame,
    spec: &SensorNoiseSpec,
    state: &mut NoiseState,
) -> MeasurementFrame {
    let s = &spec.std;
    let mut out = *clean;
    // draws happen in a fixed channel order so streams are reproducible
    out.vx += state.bias[0] + state.gauss(s.vx);
    out.ax += state.bias[1] + state.gauss(s.ax);
    out.ay += state.bias[2] + state.gauss(s.ay);
    out.yaw_rate += state.bias[3] + state.gauss(s.yaw_rate);
    out.delta += state.bias[4] + state.gauss(s.delta);
    if let Some(w) = clean.wheels {
        let mut c = w.channels();
        for (i, v) in c.iter_mut().enumerate() {
            *v += state.force_bias[i] + state.gauss(s.wheel_force);
        }
        out.wheels = Some(WheelForces::from_channels(&c));
    }
    out
}

/// Lateral force of a brush tyre with parabolic pressure distribution.
pub fn brush_lateral_force(alpha: f64, stiffness: f64, max_force: f64) -> f64 {
    let t = alpha.tan();
    let slide = 3.0 * max_force / stiffness;
    if t.abs() >= slide {
        return max_force * t.signum();
    }
    stiffness * t - stiffness * stiffness / (3.0 * max_force) * t * t.abs()
        + stiffness.powi(3) / (27.0 * max_force * max_force) * t.powi(3)
}

/// Script inputs as functions of time.
struct Inputs<'a> {
    script: &'a ManoeuvreScript,
    random: Vec<f64>,
}

impl<'a> Inputs<'a> {
    fn new(script: &'a ManoeuvreScript) -> Self {
        let random = match script.steer {
            SteerProfile::Random { cutoff_hz, rms, .. } => {
                random_steer_samples(script.duration, cutoff_hz, rms, script.seed)
            }
            _ => Vec::new(),
        };
        Self { script, random }
    }

    /// `(vx, dvx/dt)`
    fn vx(&self, t: f64) -> (f64, f64) {
        let k = &self.script.vx_profile;
        if k.len() == 1 || t <= k[0].0 {
            return (k[0].1, 0.0);
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t < t1 {
                let slope = (v1 - v0) / (t1 - t0);
                return (v0 + slope * (t - t0), slope);
            }
        }
        (k[k.len() - 1].1, 0.0)
    }

    fn steer(&self, t: f64) -> f64 {
        match &self.script.steer {
            SteerProfile::Step { start, rate, amplitude } => {
                let s = (t - start).max(0.0) * rate;
                s.min(amplitude.abs()) * amplitude.signum()
            }
            SteerProfile::Sine { start, frequency, amplitude } => {
                let tau = t - start;
                if tau <= 0.0 {
                    return 0.0;
                }
                let fade = (tau * frequency).min(1.0);
                fade * amplitude * (2.0 * PI * frequency * tau).sin()
            }
            SteerProfile::LaneChange { start, frequency, amplitude, gap } => {
                let period = 1.0 / frequency;
                let tau = t - start;
                let second = period + gap;
                if (0.0..period).contains(&tau) {
                    amplitude * (2.0 * PI * frequency * tau).sin()
                } else if (second..second + period).contains(&tau) {
                    -amplitude * (2.0 * PI * frequency * (tau - second)).sin()
                } else {
                    0.0
                }
            }
            SteerProfile::Ramp { start, rate } => (t - start).max(0.0) * rate,
            SteerProfile::Random { start, .. } => {
                if t <= *start || self.random.is_empty() {
                    return 0.0;
                }
                let x = (t - start) * SAMPLE_RATE_HZ;
                let i = (x.floor() as usize).min(self.random.len() - 1);
                let j = (i + 1).min(self.random.len() - 1);
                let frac = x - i as f64;
                let fade = ((t - start) / 1.0).min(1.0);
                fade * (self.random[i] * (1.0 - frac) + self.random[j] * frac)
            }
            SteerProfile::Pulses { pulses } => pulses
                .iter()
                .map(|p| {
                    let u = (t - p.center) / p.width;
                    if u.abs() < 0.5 {
                        p.amplitude * 0.5 * (1.0 + (2.0 * PI * u).cos())
                    } else {
                        0.0
                    }
                })
                .sum(),
        }
    }
}

fn random_steer_samples(duration: f64, cutoff_hz: f64, rms: f64, seed: u64) -> Vec<f64> {
    let n = (duration * SAMPLE_RATE_HZ).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57ee_u64);
    // long design so the 1 Hz band edge is sharp at 100 Hz sampling
    let taps = fir::lowpass_taps(200, cutoff_hz / SAMPLE_RATE_HZ);
    let white: Vec<f64> = (0..n + taps.len()).map(|_| rng.sample(StandardNormal)).collect();
    let filtered: Vec<f64> = (0..n)
        .map(|i| taps.iter().zip(&white[i..]).map(|(h, x)| h * x).sum())
        .collect();
    let actual = (filtered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    filtered.into_iter().map(|v| v * rms / actual.max(1e-12)).collect()
}

/// Everything the plant produces at one instant.
#[derive(Debug, Clone, Copy)]
struct PlantEval {
    dvy: f64,
    dyaw_rate: f64,
    day_transfer: f64,
    ay: f64,
    ax_body: f64,
    wheels: WheelForces,
}

fn evaluate(p: &PlantParams, t: f64, s: &PlantState, inputs: &Inputs) -> PlantEval {
    let v = &p.vehicle;
    let (vx, dvx) = inputs.vx(t);
    let delta = inputs.steer(t);
    let (base_f, base_r) = p.static_wheel_loads();
    let min_load = 0.05 * base_f.min(base_r);

    // load transfer, capped so no wheel unloads fully; both are symmetric so
    // the total vertical load is always m·g
    let long = (v.mass * dvx * p.cg_height / v.wheelbase() / 2.0)
        .clamp(-(base_r - min_load), base_f - min_load);
    let (axle_f, axle_r) = (base_f - long, base_r + long);
    let lat_f = (p.roll_share_front * v.mass * s.ay_transfer * p.cg_height / p.track_front)
        .clamp(-(axle_f - min_load), axle_f - min_load);
    let lat_r = ((1.0 - p.roll_share_front) * v.mass * s.ay_transfer * p.cg_height / p.track_rear)
        .clamp(-(axle_r - min_load), axle_r - min_load);
    // positive ay loads the right-hand wheels
    let fz = [axle_f - lat_f, axle_f + lat_f, axle_r - lat_r, axle_r + lat_r];

    let fx_total = v.mass * (dvx - s.vy * s.yaw_rate);
    let fx = if fx_total < 0.0 {
        let front = 0.5 * p.brake_share_front * fx_total;
        let rear = 0.5 * (1.0 - p.brake_share_front) * fx_total;
        [front, front, rear, rear]
    } else {
        [0.0, 0.0, 0.5 * fx_total, 0.5 * fx_total]
    };

    let half_f = 0.5 * p.track_front;
    let half_r = 0.5 * p.track_rear;
    let positions = [(v.lf, half_f), (v.lf, -half_f), (-v.lr, half_r), (-v.lr, -half_r)];
    let mut fy = [0.0; 4];
    for i in 0..4 {
        let (x, y) = positions[i];
        let steer = if i < 2 { delta } else { 0.0 };
        let alpha = steer - (s.vy + x * s.yaw_rate).atan2(vx - y * s.yaw_rate);
        let (axle_c, static_load) = if i < 2 {
            (p.cornering_stiffness_front, base_f)
        } else {
            (p.cornering_stiffness_rear, base_r)
        };
        let ratio = fz[i] / static_load;
        let stiffness = 0.5 * axle_c * ratio * (1.0 - p.load_sensitivity * (ratio - 1.0));
        let cap = p.friction_mu * fz[i];
        let max_force = (cap * cap - fx[i] * fx[i]).max((0.05 * cap).powi(2)).sqrt();
        fy[i] = brush_lateral_force(alpha, stiffness, max_force);
    }

    let (sd, cd) = delta.sin_cos();
    let mut fy_body = fy;
    let mut fx_body = fx;
    for i in 0..2 {
        fy_body[i] = fx[i] * sd + fy[i] * cd;
        fx_body[i] = fx[i] * cd - fy[i] * sd;
    }
    let sum_fy: f64 = fy_body.iter().sum();
    let yaw_moment = v.lf * (fy_body[0] + fy_body[1]) - v.lr * (fy_body[2] + fy_body[3])
        + half_f * (fx_body[1] - fx_body[0])
        + half_r * (fx_body[3] - fx_body[2]);
    let ay = sum_fy / v.mass;
    PlantEval {
        dvy: ay - vx * s.yaw_rate,
        dyaw_rate: yaw_moment / v.yaw_inertia,
        day_transfer: (ay - s.ay_transfer) / p.roll_lag,
        ay,
        ax_body: dvx - s.vy * s.yaw_rate,
        wheels: WheelForces { fx, fy, fz },
    }
}

fn rk4(p: &PlantParams, t: f64, s: &PlantState, inputs: &Inputs, dt: f64) -> PlantState {
    let shift = |e: &PlantEval, h: f64| PlantState {
        vy: s.vy + h * e.dvy,
        yaw_rate: s.yaw_rate + h * e.dyaw_rate,
        ay_transfer: s.ay_transfer + h * e.day_transfer,
        wheels: s.wheels,
    };
    let k1 = evaluate(p, t, s, inputs);
    let k2 = evaluate(p, t + dt / 2.0, &shift(&k1, dt / 2.0), inputs);
    let k3 = evaluate(p, t + dt / 2.0, &shift(&k2, dt / 2.0), inputs);
    let k4 = evaluate(p, t + dt, &shift(&k3, dt), inputs);
    let w = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    PlantState {
        vy: s.vy + w(k1.dvy, k2.dvy, k3.dvy, k4.dvy),
        yaw_rate: s.yaw_rate + w(k1.dyaw_rate, k2.dyaw_rate, k3.dyaw_rate, k4.dyaw_rate),
        ay_transfer: s.ay_transfer
            + w(k1.day_transfer, k2.day_transfer, k3.day_transfer, k4.day_transfer),
        wheels: s.wheels,
    }
}

/// Noise-free plant trajectory: one `(PlantState, frame)` pair per 100 Hz sample.
pub fn simulate_clean(
    script: &ManoeuvreScript,
    plant: &PlantParams,
) -> Result<Vec<(PlantState, MeasurementFrame)>> {
    script.validate()?;
    let inputs = Inputs::new(script);
    let steps = (script.duration * SAMPLE_RATE_HZ).round() as usize;
    let mut state = PlantState::default();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * SAMPLE_PERIOD;
        let e = evaluate(plant, t, &state, &inputs);
        let (vx, _) = inputs.vx(t);
        state.wheels = e.wheels;
        let finite = state.vy.is_finite() && state.yaw_rate.is_finite() && e.ay.is_finite();
        if !finite || state.vy.abs() > vx {
            return Err(Error::PlantDivergence { time: t });
        }
        let frame = MeasurementFrame {
            t,
            vx,
            ax: e.ax_body,
            ay: e.ay,
            yaw_rate: state.yaw_rate,
            delta: inputs.steer(t),
            wheels: Some(e.wheels),
            beta_true: (state.vy / vx).atan(),
            ay_true: e.ay,
        };
        out.push((state, frame));
        if k < steps {
            state = rk4(plant, t, &state, &inputs, SAMPLE_PERIOD);
        }
    }
    Ok(out)
}

/// Runs one scripted manoeuvre and returns the noisy 100 Hz recording.
pub fn run_manoeuvre(
    script: &ManoeuvreScript,
    plant: &PlantParams,
    noise: &SensorNoiseSpec,
) -> Result<Vec<MeasurementFrame>> {
    noise.validate()?;
    let clean = simulate_clean(script, plant)?;
    let mut state = NoiseState::new(noise, derive_seed(script.seed, 0x0153));
    Ok(clean.iter().map(|(_, f)| inject_noise(f, noise, &mut state)).collect())
}

/// Mixes a base seed with a stream index (splitmix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Number of manoeuvres of each kind to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogueConfig {
    pub brake_in_turn: usize,
    pub skidpad: usize,
    pub j_turn: usize,
    pub slalom: usize,
    pub double_lane_change: usize,
    pub random_steer: usize,
    pub track_lap: usize,
    pub spiral: usize,
    pub seed: u64,
}

impl CatalogueConfig {
    /// Exact kind mix of the published 23-manoeuvre test set.
    pub fn reference_mix(seed: u64) -> Self {
        Self {
            brake_in_turn: 2,
            skidpad: 2,
            j_turn: 5,
            slalom: 4,
            double_lane_change: 4,
            random_steer: 2,
            track_lap: 1,
            spiral: 3,
            seed,
        }
    }

    /// `total` manoeuvres in the test-set kind ratios (largest-remainder rounding).
    pub fn scaled_mix(total: usize, seed: u64) -> Self {
        let base = Self::reference_mix(seed);
        let weights = base.counts();
        let sum: usize = weights.iter().map(|(_, n)| n).sum();
        let exact: Vec<f64> =
            weights.iter().map(|(_, n)| *n as f64 * total as f64 / sum as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        // stable: ties go to the kind listed first
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let missing = total - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        let mut cfg = Self::from_counts(&counts, seed);
        cfg.seed = seed;
        cfg
    }

    fn from_counts(c: &[usize], seed: u64) -> Self {
        Self {
            brake_in_turn: c[0],
            skidpad: c[1],
            j_turn: c[2],
            slalom: c[3],
            double_lane_change: c[4],
            random_steer: c[5],
            track_lap: c[6],
            spiral: c[7],
            seed,
        }
    }

    pub fn counts(&self) -> [(ManoeuvreKind, usize); 8] {
        [
            (ManoeuvreKind::BrakeInTurn, self.brake_in_turn),
            (ManoeuvreKind::Skidpad, self.skidpad),
            (ManoeuvreKind::JTurn, self.j_turn),
            (ManoeuvreKind::Slalom, self.slalom),
            (ManoeuvreKind::DoubleLaneChange, self.double_lane_change),
            (ManoeuvreKind::RandomSteer, self.random_steer),
            (ManoeuvreKind::TrackLap, self.track_lap),
            (ManoeuvreKind::Spiral, self.spiral),
        ]
    }

    pub fn total(&self) -> usize {
        self.counts().iter().map(|(_, n)| n).sum()
    }
}

impl Default for CatalogueConfig {
    /// Desk-scale catalogue of 60 manoeuvres.
    fn default() -> Self {
        Self::scaled_mix(60, 7)
    }
}

/// Expands a catalogue configuration into concrete scripts. Parameters of each
/// script are drawn from a stream derived from the catalogue seed and the
/// script index, so scripts are independent of one another.
pub fn build_catalogue(config: &CatalogueConfig, plant: &PlantParams) -> Vec<ManoeuvreScript> {
    let mut scripts = Vec::with_capacity(config.total());
    for (kind, count) in config.counts() {
        for _ in 0..count {
            let index = scripts.len();
            let seed = derive_seed(config.seed, index as u64);
            let id = format!("m{index:03}_{}", kind.name());
            scripts.push(script_for(kind, id, seed, plant));
        }
    }
    scripts
}

fn script_for(kind: ManoeuvreKind, id: String, seed: u64, plant: &PlantParams) -> ManoeuvreScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sgn = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let steer_for = |ay: f64, vx: f64| plant.steer_for_lateral_accel(ay, vx);
    let (duration, vx_profile, steer) = match kind {
        ManoeuvreKind::JTurn => {
            let vx = rng.random_range(14.0..24.0f64);
            let ay = rng.random_range(3.0..10.0f64);
            let steer = SteerProfile::Step { start: 1.0, rate: 0.35, amplitude: sgn * steer_for(ay, vx) };
            (8.0, vec![(0.0, vx)], steer)
        }
        ManoeuvreKind::Slalom => {
            let vx = rng.random_range(12.0..20.0f64);
            let ay = rng.random_range(2.0..7.0f64);
            let frequency = rng.random_range(0.4..0.8f64);
            let amplitude = sgn * steer_for(ay, vx);
            (12.0, vec![(0.0, vx)], SteerProfile::Sine { start: 1.0, frequency, amplitude })
        }
        ManoeuvreKind::DoubleLaneChange => {
            let vx = rng.random_range(14.0..22.0f64);
            let ay = rng.random_range(3.0..8.0f64);
            let frequency = rng.random_range(0.4..0.6f64);
            let gap = rng.random_range(0.5..1.5f64);
            let amplitude = sgn * steer_for(ay, vx);
            (10.0, vec![(0.0, vx)], SteerProfile::LaneChange { start: 1.0, frequency, amplitude, gap })
        }
        ManoeuvreKind::RandomSteer => {
            let duration = 20.0;
            let knots: Vec<(f64, f64)> =
                (0..=4).map(|i| (i as f64 * 5.0, rng.random_range(10.0..20.0f64))).collect();
            let ay_rms = rng.random_range(1.5..4.0f64);
            let rms = steer_for(ay_rms, 15.0);
            (duration, knots, SteerProfile::Random { start: 0.5, cutoff_hz: 1.0, rms })
        }
        ManoeuvreKind::Spiral => {
            let vx = rng.random_range(12.0..18.0f64);
            let duration = 15.0;
            let rate = sgn * steer_for(10.0, vx) / (duration - 1.0);
            (duration, vec![(0.0, vx)], SteerProfile::Ramp { start: 1.0, rate })
        }
        ManoeuvreKind::Skidpad => {
            let radius = rng.random_range(30.0..60.0f64);
            let ay_max = rng.random_range(3.0..9.0f64);
            let (v0, accel) = (5.0, 0.5);
            let v_end = (ay_max * radius).sqrt().max(v0 + 1.0);
            let t_end = 2.0 + (v_end - v0) / accel;
            let amplitude = sgn * plant.vehicle.wheelbase() / radius;
            let profile = vec![(0.0, v0), (2.0, v0), (t_end, v_end)];
            (t_end + 3.0, profile, SteerProfile::Step { start: 0.5, rate: 0.1, amplitude })
        }
        ManoeuvreKind::BrakeInTurn => {
            let vx = rng.random_range(16.0..22.0f64);
            let ay = rng.random_range(4.0..7.0f64);
            // keep the combined demand inside the friction circle
            let decel = rng.random_range(2.5..(64.0 - ay * ay).sqrt().min(5.5));
            let brake_end = 5.0 + ((vx - 6.0) / decel).min(2.5);
            let v_end = vx - decel * (brake_end - 5.0);
            let amplitude = sgn * steer_for(ay, vx);
            let profile = vec![(0.0, vx), (5.0, vx), (brake_end, v_end)];
            (9.0, profile, SteerProfile::Step { start: 1.0, rate: 0.2, amplitude })
        }
        ManoeuvreKind::TrackLap => {
            let mut t = 0.0;
            let mut vx = rng.random_range(15.0..20.0f64);
            let mut knots = vec![(0.0, vx)];
            let mut pulses = Vec::new();
            for _ in 0..6 {
                let straight = rng.random_range(1.0..2.5f64);
                let v_top = (vx + 1.5 * straight).min(25.0);
                t += straight;
                knots.push((t, v_top));
                let v_corner = (v_top - 3.0).max(8.0);
                t += 1.0;
                knots.push((t, v_corner));
                let width = rng.random_range(2.0..4.0f64);
                let ay = rng.random_range(3.0..9.0f64);
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                pulses.push(SteerPulse {
                    center: t + width / 2.0,
                    width,
                    amplitude: side * steer_for(ay, v_corner),
                });
                t += width;
                knots.push((t, v_corner));
                vx = v_corner;
            }
            knots.push((t + 2.0, (vx + 3.0).min(25.0)));
            (t + 2.0, knots, SteerProfile::Pulses { pulses })
        }
    };
    ManoeuvreScript { id, kind, duration, vx_profile, steer, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle_model::{dugoff_axle_force, slip_angles, Axle, ControlInput, TyreParams, VehicleState};

    fn constant_script(kind: ManoeuvreKind, vx: f64, steer: SteerProfile, duration: f64) -> ManoeuvreScript {
        ManoeuvreScript { id: "t".into(), kind, duration, vx_profile: vec![(0.0, vx)], steer, seed: 11 }
    }

    #[test]
    fn straight_line_has_no_sideslip() {
        let s = constant_script(ManoeuvreKind::JTurn, 20.0, SteerProfile::Ramp { start: 0.0, rate: 0.0 }, 5.0);
        let clean = simulate_clean(&s, &PlantParams::default()).unwrap();
        assert!(clean.iter().all(|(_, f)| f.beta_true == 0.0 && f.ay == 0.0));
    }

    #[test]
    fn frames_are_at_100_hz() {
        let s = constant_script(ManoeuvreKind::Slalom, 15.0, SteerProfile::Sine { start: 1.0, frequency: 0.5, amplitude: 0.02 }, 3.0);
        let frames = run_manoeuvre(&s, &PlantParams::default(), &SensorNoiseSpec::default()).unwrap();
        assert_eq!(frames.len(), 301);
        for (k, f) in frames.iter().enumerate() {
            assert_eq!(f.t, k as f64 * 0.01);
        }
    }

    #[test]
    fn low_lateral_accel_skidpad_stays_linear() {
        let plant = PlantParams::default();
        let radius = 40.0;
        let s = ManoeuvreScript {
            id: "skid".into(),
            kind: ManoeuvreKind::Skidpad,
            duration: 20.0,
            vx_profile: vec![(0.0, 5.0), (2.0, 5.0), (17.0, (2.0f64 * radius).sqrt())],
            steer: SteerProfile::Step { start: 0.5, rate: 0.1, amplitude: plant.vehicle.wheelbase() / radius },
            seed: 3,
        };
        let clean = simulate_clean(&s, &plant).unwrap();
        let max_beta = clean.iter().map(|(_, f)| f.beta_true.abs()).fold(0.0, f64::max);
        assert!(max_beta.to_degrees() < 2.0, "{}", max_beta.to_degrees());
        assert!(max_beta > 0.0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let plant = PlantParams::default();
        let cat = build_catalogue(&CatalogueConfig::default(), &plant);
        let s = &cat[5];
        let a = run_manoeuvre(s, &plant, &SensorNoiseSpec::default()).unwrap();
        let b = run_manoeuvre(s, &plant, &SensorNoiseSpec::default()).unwrap();
        let bits = |f: &[MeasurementFrame]| -> Vec<u64> {
            f.iter().flat_map(|x| [x.ay.to_bits(), x.yaw_rate.to_bits(), x.wheels.unwrap().fy[0].to_bits()]).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn wheel_loads_always_sum_to_weight() {
        let plant = PlantParams::default();
        let weight = plant.vehicle.mass * plant.vehicle.gravity;
        for s in build_catalogue(&CatalogueConfig::default(), &plant).iter().step_by(3) {
            for (state, _) in simulate_clean(s, &plant).unwrap() {
                let sum: f64 = state.wheels.fz.iter().sum();
                assert!((sum - weight).abs() < 1e-9 * weight);
                assert!(state.wheels.fz.iter().all(|&z| z > 0.0));
                for i in 0..4 {
                    let w = &state.wheels;
                    let r = (w.fx[i].powi(2) + w.fy[i].powi(2)).sqrt();
                    assert!(r <= plant.friction_mu * w.fz[i] * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn catalogue_counts() {
        let plant = PlantParams::default();
        let cfg = CatalogueConfig::default();
        assert_eq!(cfg.total(), 60);
        let cat = build_catalogue(&cfg, &plant);
        assert_eq!(cat.len(), 60);
        for kind in ManoeuvreKind::ALL {
            let n = cat.iter().filter(|s| s.kind == kind).count();
            let expected = cfg.counts().iter().find(|(k, _)| *k == kind).unwrap().1;
            assert_eq!(n, expected);
            assert!(n > 0, "{kind:?} missing");
        }
        let zero = CatalogueConfig::from_counts(&[0; 8], 1);
        assert!(build_catalogue(&zero, &plant).is_empty());
    }

    #[test]
    fn reference_mix_has_23_scripts() {
        let cfg = CatalogueConfig::reference_mix(1);
        let cat = build_catalogue(&cfg, &PlantParams::default());
        assert_eq!(cat.len(), 23);
        let count = |k| cat.iter().filter(|s| s.kind == k).count();
        assert_eq!(count(ManoeuvreKind::BrakeInTurn), 2);
        assert_eq!(count(ManoeuvreKind::Skidpad), 2);
        assert_eq!(count(ManoeuvreKind::JTurn), 5);
        assert_eq!(count(ManoeuvreKind::Slalom), 4);
        assert_eq!(count(ManoeuvreKind::DoubleLaneChange), 4);
        assert_eq!(count(ManoeuvreKind::RandomSteer), 2);
        assert_eq!(count(ManoeuvreKind::TrackLap), 1);
        assert_eq!(count(ManoeuvreKind::Spiral), 3);
    }

    #[test]
    fn whole_default_catalogue_simulates() {
        let plant = PlantParams::default();
        for s in build_catalogue(&CatalogueConfig::default(), &plant) {
            let clean = simulate_clean(&s, &plant).unwrap_or_else(|e| panic!("{}: {e}", s.id));
            assert!(clean.iter().all(|(_, f)| f.vx > 2.5));
        }
    }

    #[test]
    fn zero_noise_is_identity_and_truth_is_untouched() {
        let plant = PlantParams::default();
        let s = &build_catalogue(&CatalogueConfig::default(), &plant)[2];
        let clean: Vec<_> = simulate_clean(s, &plant).unwrap().into_iter().map(|(_, f)| f).collect();
        let mut st = NoiseState::new(&SensorNoiseSpec::NONE, 1);
        for f in &clean {
            assert_eq!(inject_noise(f, &SensorNoiseSpec::NONE, &mut st), *f);
        }
        let mut st = NoiseState::new(&SensorNoiseSpec::default(), 1);
        for f in &clean {
            let n = inject_noise(f, &SensorNoiseSpec::default(), &mut st);
            assert_eq!(n.beta_true.to_bits(), f.beta_true.to_bits());
            assert_eq!(n.ay_true.to_bits(), f.ay_true.to_bits());
        }
    }

    #[test]
    fn lateral_accel_noise_has_requested_std() {
        let mut spec = SensorNoiseSpec::default();
        spec.std.ay = 0.1;
        let mut st = NoiseState::new(&spec, 99);
        let clean = MeasurementFrame { vx: 10.0, ..Default::default() };
        let d: Vec<f64> = (0..100_000).map(|_| inject_noise(&clean, &spec, &mut st).ay).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((std - 0.1).abs() < 0.002, "std {std}");
    }

    #[test]
    fn plant_force_exceeds_dugoff_and_the_gap_grows() {
        let plant = PlantParams::default();
        let vehicle = plant.vehicle;
        let tyre = TyreParams::default_for(&vehicle);
        let s = constant_script(
            ManoeuvreKind::JTurn,
            20.0,
            SteerProfile::Step { start: 1.0, rate: 0.35, amplitude: plant.steer_for_lateral_accel(9.5, 20.0) },
            8.0,
        );
        let (mut high, mut moderate, mut limit) = (Vec::new(), Vec::new(), Vec::new());
        for (st, f) in simulate_clean(&s, &plant).unwrap() {
            let state = VehicleState::new(st.vy, st.yaw_rate);
            let (af, ar) = slip_angles(state, ControlInput::new(f.delta, f.vx), &vehicle).unwrap();
            let w = f.wheels.unwrap();
            let sign = f.ay_true.signum();
            let gap = [
                sign * (w.front_lateral() - dugoff_axle_force(af, &tyre, Axle::Front)),
                sign * (w.rear_lateral() - dugoff_axle_force(ar, &tyre, Axle::Rear)),
            ];
            let ay = f.ay_true.abs();
            if ay > 5.0 {
                high.extend(gap);
            }
            if ay > 7.5 {
                limit.extend(gap);
            } else if (1.0..4.0).contains(&ay) {
                moderate.extend(gap);
            }
        }
        assert!(high.len() > 200 && !moderate.is_empty() && !limit.is_empty());
        assert!(high.iter().all(|&g| g > 0.0), "min gap {}", high.iter().cloned().fold(f64::INFINITY, f64::min));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&limit) > 1.5 * mean(&moderate), "limit {} moderate {}", mean(&limit), mean(&moderate));
    }
}
