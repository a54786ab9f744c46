//! Planar kinematic wheel-loader model.
//!
//! The loader drives along its heading at a fixed cruise speed unless the
//! brake is engaged. Heading is measured clockwise from the +y (north) axis,
//! so a unit step along heading `h` moves `(sin h, cos h)`. Lift is the boom
//! position as a fraction of its maximum.
//!
//! Integration is explicit Euler: the position advances with the speed held
//! at the start of the step, then speed and lift are updated.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaperParams {
    /// Pedal fraction applied on the first braking step.
    pub initial_pedal: f64,
    /// Exponential decay constant of the pedal while the brake stays engaged, in seconds.
    pub taper_time_constant: f64,
}

impl Default for TaperParams {
    fn default() -> Self {
        Self {
            initial_pedal: 0.6,
            taper_time_constant: 2.5,
        }
    }
}

impl TaperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_pedal > 0.0 && self.initial_pedal <= 1.0) {
            return Err(Error::invalid("taper initial_pedal must be in (0, 1]"));
        }
        if !(self.taper_time_constant > 0.0 && self.taper_time_constant.is_finite()) {
            return Err(Error::invalid("taper_time_constant must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// m/s
    pub cruise_speed: f64,
    /// m/s², full-pedal deceleration
    pub ideal_decel: f64,
    /// fraction of the lift range per second
    pub lift_rate: f64,
    pub lift_min: f64,
    pub lift_max: f64,
    /// radians; stored and validated, the straight-line task never steers
    pub steering_limit: f64,
    pub taper: TaperParams,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            cruise_speed: 2.0,
            ideal_decel: 2.0,
            lift_rate: 0.15,
            lift_min: 0.0,
            lift_max: 1.0,
            steering_limit: 37.5_f64.to_radians(),
            taper: TaperParams::default(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cruise_speed", self.cruise_speed),
            ("ideal_decel", self.ideal_decel),
            ("lift_rate", self.lift_rate),
            ("steering_limit", self.steering_limit),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("vehicle {name} must be positive, got {value}")));
            }
        }
        if !(self.lift_min < self.lift_max) || !self.lift_min.is_finite() || !self.lift_max.is_finite() {
            return Err(Error::invalid("vehicle lift_min must be below lift_max"));
        }
        self.taper.validate()
    }

    /// Continuous-time stopping distance from `speed` under full braking.
    pub fn stopping_distance(&self, speed: f64) -> f64 {
        speed * speed / (2.0 * self.ideal_decel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lift: f64,
    pub elapsed: f64,
    /// Current brake pedal fraction; zero while the brake is released.
    pub pedal: f64,
}

impl VehicleState {
    pub fn at_rest(x: f64, y: f64, heading: f64, lift: f64) -> Self {
        Self {
            x,
            y,
            heading,
            speed: 0.0,
            lift,
            elapsed: 0.0,
            pedal: 0.0,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let fields = [
            ("x", self.x),
            ("y", self.y),
            ("heading", self.heading),
            ("speed", self.speed),
            ("lift", self.lift),
            ("elapsed", self.elapsed),
            ("pedal", self.pedal),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::invalid(format!("vehicle state {name} is not finite ({v})"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Controls {
    pub brake: bool,
    pub lift_up: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BrakeModel {
    /// Constant full-pedal deceleration.
    Ideal,
    /// Pedal starts at a fraction and decays while held.
    Tapered,
}

impl BrakeModel {
    pub fn name(self) -> &'static str {
        match self {
            BrakeModel::Ideal => "ideal",
            BrakeModel::Tapered => "tapered",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ideal" => Ok(BrakeModel::Ideal),
            "tapered" => Ok(BrakeModel::Tapered),
            other => Err(Error::invalid(format!(
                "unknown brake model `{other}` (expected ideal or tapered)"
            ))),
        }
    }

    /// Deceleration and next pedal fraction for one step with the brake held.
    pub fn braking(self, pedal: f64, dt: f64, params: &VehicleParams) -> (f64, f64) {
        match self {
            BrakeModel::Ideal => (params.ideal_decel, 1.0),
            BrakeModel::Tapered => tapered_brake_decel(pedal, dt, &params.taper, params.ideal_decel),
        }
    }
}

/// One step of the tapered brake. `pedal_state` is the pedal fraction before
/// the step; zero means the brake was released on the previous step.
///
/// Returns the deceleration applied during the step and the new pedal fraction.
pub fn tapered_brake_decel(pedal_state: f64, dt: f64, taper: &TaperParams, ideal_decel: f64) -> (f64, f64) {
    let pedal = if pedal_state <= 0.0 {
        taper.initial_pedal
    } else {
        pedal_state.min(1.0) * (-dt / taper.taper_time_constant).exp()
    };
    (pedal * ideal_decel, pedal)
}

/// Advances pose, lift and clock given the speed and pedal chosen for the
/// step. Shared by the simulator and the deployment emulator so both
/// integrate identically.
pub fn integrate(
    state: &VehicleState,
    next_speed: f64,
    next_pedal: f64,
    lift_up: bool,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    let travel = state.speed * dt;
    let lift = if lift_up {
        (state.lift + params.lift_rate * dt).min(params.lift_max)
    } else {
        state.lift
    };
    VehicleState {
        x: state.x + travel * state.heading.sin(),
        y: state.y + travel * state.heading.cos(),
        heading: state.heading,
        speed: next_speed.clamp(0.0, params.cruise_speed),
        lift: lift.clamp(params.lift_min, params.lift_max),
        elapsed: state.elapsed + dt,
        pedal: next_pedal,
    }
}

pub fn check_step_args(state: &VehicleState, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive and finite, got {dt}")));
    }
    state.check_finite()
}

/// Advances the simulated loader by `dt`. Without the brake the speed snaps
/// back to cruise speed; there is no drivetrain model.
pub fn step_vehicle(
    state: &VehicleState,
    controls: Controls,
    dt: f64,
    params: &VehicleParams,
    brake_model: BrakeModel,
) -> Result<VehicleState> {
    check_step_args(state, dt)?;
    let (speed, pedal) = if controls.brake {
        let (decel, pedal) = brake_model.braking(state.pedal, dt, params);
        ((state.speed - decel * dt).max(0.0), pedal)
    } else {
        (params.cruise_speed, 0.0)
    };
    Ok(integrate(state, speed, pedal, controls.lift_up, dt, params))
}
