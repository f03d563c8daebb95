//! Single-track (bicycle) vehicle model with Dugoff axle tyre forces.
//!
//! The state is the lateral velocity `vy` and yaw rate; the exogenous inputs are
//! the road wheel angle `delta` and the longitudinal velocity `vx`, which is
//! treated as known. Both Kalman filters share these process and observation
//! models.
//!
//! Lateral axle forces follow the pure-lateral Dugoff law
//!
//! ```text
//! Fy = C·tan(α)·f(λ),   λ = μ·Fz / (2·C·|tan α|),   f(λ) = λ(2 − λ) if λ < 1 else 1
//! ```
//!
//! which is linear for small slip and saturates at `μ·Fz`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|tan α|` the Dugoff λ is not evaluated and the linear branch is used.
const TAN_ALPHA_EPS: f64 = 1e-9;

/// Chassis parameters. Defaults are the test vehicle's published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub yaw_inertia: f64,
    /// CG to front axle, m
    pub lf: f64,
    /// CG to rear axle, m
    pub lr: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { mass: 1970.0, yaw_inertia: 3498.0, lf: 1.47, lr: 1.41, gravity: 9.81 }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("gravity", self.gravity),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("vehicle.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Axle-level Dugoff parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TyreParams {
    /// N/rad, both front wheels together
    pub cornering_stiffness_front: f64,
    /// N/rad, both rear wheels together
    pub cornering_stiffness_rear: f64,
    pub friction_mu: f64,
    /// Static front axle load, N
    pub fz_front: f64,
    /// Static rear axle load, N
    pub fz_rear: f64,
}

impl TyreParams {
    /// Axle loads from the static weight split, no load transfer.
    pub fn with_static_loads(
        vehicle: &VehicleParams,
        cornering_stiffness_front: f64,
        cornering_stiffness_rear: f64,
        friction_mu: f64,
    ) -> Self {
        let weight = vehicle.mass * vehicle.gravity;
        let l = vehicle.wheelbase();
        Self {
            cornering_stiffness_front,
            cornering_stiffness_rear,
            friction_mu,
            fz_front: weight * vehicle.lr / l,
            fz_rear: weight * vehicle.lf / l,
        }
    }

    /// Placeholder stiffnesses (105 / 120 kN/rad) and μ = 1 on the given chassis.
    pub fn default_for(vehicle: &VehicleParams) -> Self {
        Self::with_static_loads(vehicle, 105_000.0, 120_000.0, 1.0)
    }

    pub fn stiffness(&self, axle: Axle) -> f64 {
        match axle {
            Axle::Front => self.cornering_stiffness_front,
            Axle::Rear => self.cornering_stiffness_rear,
        }
    }

    pub fn load(&self, axle: Axle) -> f64 {
        match axle {
            Axle::Front => self.fz_front,
            Axle::Rear => self.fz_rear,
        }
    }

    pub fn validate(&self, vehicle: &VehicleParams) -> Result<()> {
        if !(self.cornering_stiffness_front > 0.0 && self.cornering_stiffness_rear > 0.0) {
            return Err(Error::Config("tyre cornering stiffnesses must be positive".into()));
        }
        if !(self.friction_mu > 0.0 && self.friction_mu <= 1.5) {
            return Err(Error::Config(format!(
                "tyre.friction_mu must lie in (0, 1.5], got {}",
                self.friction_mu
            )));
        }
        if !(self.fz_front > 0.0 && self.fz_rear > 0.0) {
            return Err(Error::Config("axle loads must be positive".into()));
        }
        let weight = vehicle.mass * vehicle.gravity;
        if ((self.fz_front + self.fz_rear) - weight).abs() > 1e-6 * weight {
            return Err(Error::Config(format!(
                "axle loads sum to {} N but vehicle weight is {weight} N",
                self.fz_front + self.fz_rear
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axle {
    Front,
    Rear,
}

/// Filter state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// m/s
    pub vy: f64,
    /// rad/s
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn new(vy: f64, yaw_rate: f64) -> Self {
        Self { vy, yaw_rate }
    }

    pub fn is_finite(&self) -> bool {
        self.vy.is_finite() && self.yaw_rate.is_finite()
    }

    /// Sideslip angle `atan(vy / vx)`, rad.
    pub fn sideslip(&self, vx: f64) -> f64 {
        (self.vy / vx).atan()
    }
}

/// Exogenous inputs held constant over one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Road wheel angle, rad
    pub delta: f64,
    /// Longitudinal velocity, m/s
    pub vx: f64,
}

impl ControlInput {
    pub fn new(delta: f64, vx: f64) -> Self {
        Self { delta, vx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxleForces {
    pub fy_front: f64,
    pub fy_rear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub dvy: f64,
    pub dyaw_rate: f64,
}

/// Which measurements the observation model produces: `Y1 = [a_y, ψ̇]`,
/// `Y2 = [a_y, ψ̇, F_yF, F_yR]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementSet {
    Y1,
    Y2,
}

impl MeasurementSet {
    pub fn dim(self) -> usize {
        match self {
            MeasurementSet::Y1 => 2,
            MeasurementSet::Y2 => 4,
        }
    }
}

/// Axle slip angles `(α_F, α_R)` in rad.
pub fn slip_angles(
    state: VehicleState,
    input: ControlInput,
    params: &VehicleParams,
) -> Result<(f64, f64)> {
    if !(input.vx > 0.0) {
        return Err(Error::InvalidState(format!("vx must be positive, got {}", input.vx)));
    }
    let alpha_front = input.delta - ((state.vy + params.lf * state.yaw_rate) / input.vx).atan();
    let alpha_rear = -((state.vy - params.lr * state.yaw_rate) / input.vx).atan();
    if !(alpha_front.is_finite() && alpha_rear.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite slip angles for state {state:?}, input {input:?}"
        )));
    }
    Ok((alpha_front, alpha_rear))
}

/// Pure-lateral Dugoff axle force, N.
pub fn dugoff_axle_force(alpha: f64, tyre: &TyreParams, axle: Axle) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let stiffness = tyre.stiffness(axle);
    let tan_alpha = alpha.tan();
    let linear = stiffness * tan_alpha;
    if tan_alpha.abs() < TAN_ALPHA_EPS {
        return linear;
    }
    let lambda = tyre.friction_mu * tyre.load(axle) / (2.0 * stiffness * tan_alpha.abs());
    if lambda < 1.0 {
        linear * lambda * (2.0 - lambda)
    } else {
        linear
    }
}

pub fn axle_forces(
    state: VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    tyre: &TyreParams,
) -> Result<AxleForces> {
    let (alpha_front, alpha_rear) = slip_angles(state, input, params)?;
    Ok(AxleForces {
        fy_front: dugoff_axle_force(alpha_front, tyre, Axle::Front),
        fy_rear: dugoff_axle_force(alpha_rear, tyre, Axle::Rear),
    })
}

/// Lateral acceleration produced by the given axle forces, m/s².
pub fn lateral_acceleration(forces: AxleForces, delta: f64, params: &VehicleParams) -> f64 {
    (forces.fy_front * delta.cos() + forces.fy_rear) / params.mass
}

/// Single-track equations of motion for known axle forces.
pub fn derivative_from_forces(
    state: VehicleState,
    input: ControlInput,
    forces: AxleForces,
    params: &VehicleParams,
) -> StateDerivative {
    let front = forces.fy_front * input.delta.cos();
    StateDerivative {
        dvy: (front + forces.fy_rear) / params.mass - input.vx * state.yaw_rate,
        dyaw_rate: (params.lf * front - params.lr * forces.fy_rear) / params.yaw_inertia,
    }
}

pub fn process_derivative(
    state: VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    tyre: &TyreParams,
) -> Result<StateDerivative> {
    let forces = axle_forces(state, input, params, tyre)?;
    Ok(derivative_from_forces(state, input, forces, params))
}

/// Predicted measurement vector for the chosen set.
pub fn observe(
    state: VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    tyre: &TyreParams,
    set: MeasurementSet,
) -> Result<Vec<f64>> {
    let forces = axle_forces(state, input, params, tyre)?;
    let ay = lateral_acceleration(forces, input.delta, params);
    Ok(match set {
        MeasurementSet::Y1 => vec![ay, state.yaw_rate],
        MeasurementSet::Y2 => vec![ay, state.yaw_rate, forces.fy_front, forces.fy_rear],
    })
}

/// One classical Runge–Kutta step with the input held over `dt`.
pub fn integrate_step(
    state: VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    tyre: &TyreParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidState(format!("dt must be positive, got {dt}")));
    }
    let f = |s: VehicleState| process_derivative(s, input, params, tyre);
    let shift = |s: VehicleState, d: StateDerivative, h: f64| VehicleState {
        vy: s.vy + h * d.dvy,
        yaw_rate: s.yaw_rate + h * d.dyaw_rate,
    };
    let k1 = f(state)?;
    let k2 = f(shift(state, k1, dt / 2.0))?;
    let k3 = f(shift(state, k2, dt / 2.0))?;
    let k4 = f(shift(state, k3, dt))?;
    let next = VehicleState {
        vy: state.vy + dt / 6.0 * (k1.dvy + 2.0 * k2.dvy + 2.0 * k3.dvy + k4.dvy),
        yaw_rate: state.yaw_rate
            + dt / 6.0 * (k1.dyaw_rate + 2.0 * k2.dyaw_rate + 2.0 * k3.dyaw_rate + k4.dyaw_rate),
    };
    if !next.is_finite() {
        return Err(Error::Divergence(format!("non-finite state after step from {state:?}")));
    }
    Ok(next)
}

/// Parameter bundle handed to the filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleTrack {
    pub vehicle: VehicleParams,
    pub tyre: TyreParams,
}

impl Default for SingleTrack {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        Self { vehicle, tyre: TyreParams::default_for(&vehicle) }
    }
}
