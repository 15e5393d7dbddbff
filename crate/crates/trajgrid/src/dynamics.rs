//! Projectile dynamics: quadratic drag, gravity, first-order integration,
//! and the 3D <-> 2D plane mapping.
//!
//! All quantities are SI (meters, seconds, kilograms, radians) in 64-bit
//! floating point. Every operation here is a pure function over immutable
//! inputs and is safe to call concurrently.

use std::f64::consts::PI;

use crate::grid::{TerminationCause, Trajectory};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Physical characteristics of the projectile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectileParams {
    /// Mass in kg, strictly positive.
    pub mass: f64,
    /// Dimensionless drag coefficient, non-negative.
    pub drag_coeff: f64,
    /// Reference (cross-sectional) area in m^2, non-negative.
    pub ref_area: f64,
    /// Launch speed in m/s, strictly positive.
    pub muzzle_speed: f64,
}

impl ProjectileParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidConfig(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(self.muzzle_speed.is_finite() && self.muzzle_speed > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "muzzle_speed must be > 0, got {}",
                self.muzzle_speed
            )));
        }
        if !(self.drag_coeff.is_finite() && self.drag_coeff >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "drag_coeff must be >= 0, got {}",
                self.drag_coeff
            )));
        }
        if !(self.ref_area.is_finite() && self.ref_area >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ref_area must be >= 0, got {}",
                self.ref_area
            )));
        }
        Ok(())
    }
}

/// Ambient environment constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    /// Gravitational acceleration in m/s^2, strictly positive.
    pub gravity: f64,
    /// Air density in kg/m^3, non-negative.
    pub air_density: f64,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gravity must be > 0, got {}",
                self.gravity
            )));
        }
        if !(self.air_density.is_finite() && self.air_density >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "air_density must be >= 0, got {}",
                self.air_density
            )));
        }
        Ok(())
    }
}

/// A named (projectile, environment) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub projectile: ProjectileParams,
    pub environment: Environment,
}

impl Profile {
    /// The constants as published for the rifle-bullet arrangement:
    /// mass 0.042 kg, drag coefficient 0.295, reference area 0.02641 m^2,
    /// muzzle velocity 853 m/s, g = 9.81 m/s^2, rho = 1.225 kg/m^3.
    ///
    /// Note the reference area is far too large for a bullet (it yields a
    /// drag deceleration of ~8e4 m/s^2 at muzzle speed, so nothing flies
    /// far); it is kept verbatim for fidelity. Use `plausible_rifle` for
    /// ranges that actually reach kilometer scale.
    pub fn paper_verbatim() -> Profile {
        Profile {
            name: "paper-verbatim".to_string(),
            projectile: ProjectileParams {
                mass: 0.042,
                drag_coeff: 0.295,
                ref_area: 0.02641,
                muzzle_speed: 853.0,
            },
            environment: Environment { gravity: 9.81, air_density: 1.225 },
        }
    }

    /// Same constants with a 7.62 mm bullet cross-section (4.8e-5 m^2).
    pub fn plausible_rifle() -> Profile {
        Profile {
            name: "plausible-rifle".to_string(),
            projectile: ProjectileParams { ref_area: 4.8e-5, ..Self::paper_verbatim().projectile },
            environment: Environment { gravity: 9.81, air_density: 1.225 },
        }
    }

    /// Drag disabled entirely; gravity only.
    pub fn vacuum() -> Profile {
        Profile {
            name: "vacuum".to_string(),
            projectile: ProjectileParams { drag_coeff: 0.0, ..Self::paper_verbatim().projectile },
            environment: Environment { gravity: 9.81, air_density: 1.225 },
        }
    }

    /// Look up a built-in profile by name.
    pub fn builtin(name: &str) -> Option<Profile> {
        match name {
            "paper-verbatim" => Some(Self::paper_verbatim()),
            "plausible-rifle" => Some(Self::plausible_rifle()),
            "vacuum" => Some(Self::vacuum()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.projectile.validate()?;
        self.environment.validate()
    }
}

/// Integration scheme for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Position advances with the old velocity (the default).
    #[default]
    ExplicitEuler,
    /// Velocity updates first, position advances with the new velocity.
    SemiImplicitEuler,
}

/// Per-step simulation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State2 {
    pub position: Vec2,
    pub velocity: Vec2,
    /// Seconds since launch; strictly increasing along a simulation.
    pub time: f64,
}

impl State2 {
    pub fn new(position: Vec2, velocity: Vec2, time: f64) -> Self {
        State2 { position, velocity, time }
    }
}

/// Simulation parameters shared by every trajectory of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of uniformly sampled launch angles, at least 2.
    pub angular_density: u32,
    /// Radius at which a trajectory terminates, in meters.
    pub max_radius: f64,
    /// Integration step in seconds.
    pub dt: f64,
    /// Safety cap on the number of steps per trajectory.
    pub max_steps: u64,
    /// Which built-in or file-defined profile the grid was baked with.
    pub profile_name: String,
    /// Integration scheme; explicit Euler unless overridden.
    pub integrator: Integrator,
}

impl SimConfig {
    pub const DEFAULT_DT: f64 = 1e-4;
    pub const DEFAULT_MAX_RADIUS: f64 = 2000.0;
    pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

    pub fn new(angular_density: u32, max_radius: f64, profile_name: &str) -> Self {
        SimConfig {
            angular_density,
            max_radius,
            dt: Self::DEFAULT_DT,
            max_steps: Self::DEFAULT_MAX_STEPS,
            profile_name: profile_name.to_string(),
            integrator: Integrator::ExplicitEuler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angular_density < 2 {
            return Err(Error::InvalidConfig(format!(
                "angular_density must be >= 2, got {}",
                self.angular_density
            )));
        }
        if !(self.max_radius.is_finite() && self.max_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "max_radius must be > 0, got {}",
                self.max_radius
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".to_string()));
        }
        Ok(())
    }
}

/// Quadratic drag acceleration: `-(rho * Cd * A / (2 m)) * |v| * v`.
///
/// Anti-parallel to the velocity; the zero vector at rest or with drag
/// disabled.
pub fn drag_acceleration(velocity: Vec2, env: &Environment, proj: &ProjectileParams) -> Vec2 {
    let speed = velocity.norm();
    if speed == 0.0 {
        return Vec2::ZERO;
    }
    let k = env.air_density * proj.drag_coeff * proj.ref_area / (2.0 * proj.mass);
    -velocity * (k * speed)
}

/// One explicit Euler step: position advances with the old velocity, then
/// the velocity picks up drag and gravity.
pub fn step(state: State2, dt: f64, env: &Environment, proj: &ProjectileParams) -> State2 {
    let accel = drag_acceleration(state.velocity, env, proj) + Vec2::new(0.0, -env.gravity);
    State2 {
        position: state.position + state.velocity * dt,
        velocity: state.velocity + accel * dt,
        time: state.time + dt,
    }
}

/// One semi-implicit Euler step: velocity updates first, position advances
/// with the new velocity.
pub fn step_semi_implicit(state: State2, dt: f64, env: &Environment, proj: &ProjectileParams) -> State2 {
    let accel = drag_acceleration(state.velocity, env, proj) + Vec2::new(0.0, -env.gravity);
    let velocity = state.velocity + accel * dt;
    State2 { position: state.position + velocity * dt, velocity, time: state.time + dt }
}

/// Simulate one trajectory launched from the origin at `elevation_angle`.
///
/// Records every integration step's position starting with the origin.
/// Terminates at the first step whose position reaches `max_radius` (that
/// point is recorded), at ground return (the projectile descends below
/// y = 0 after having risen above it; the below-ground point is not
/// recorded, so every recorded point of a ground-terminated trajectory has
/// y >= 0), or at the `max_steps` cap. A launch that never rises -- the
/// horizontal endpoint angles -- cannot "return" to ground and keeps
/// flying until the radius or step cap stops it.
pub fn simulate(
    elevation_angle: f64,
    cfg: &SimConfig,
    env: &Environment,
    proj: &ProjectileParams,
) -> Result<Trajectory> {
    if !elevation_angle.is_finite() || !(0.0..=PI).contains(&elevation_angle) {
        return Err(Error::InvalidInput(format!(
            "elevation angle must lie in [0, pi], got {elevation_angle}"
        )));
    }
    cfg.validate()?;
    env.validate()?;
    proj.validate()?;

    let advance = match cfg.integrator {
        Integrator::ExplicitEuler => step,
        Integrator::SemiImplicitEuler => step_semi_implicit,
    };

    let mut state = State2::new(
        Vec2::ZERO,
        Vec2::new(
            proj.muzzle_speed * elevation_angle.cos(),
            proj.muzzle_speed * elevation_angle.sin(),
        ),
        0.0,
    );
    // A launch counts as having risen once it clears this altitude; the
    // tolerance absorbs the ~1e-16 vertical velocity that sin(pi) leaves
    // on the horizontal endpoint angles.
    const RISE_TOLERANCE: f64 = 1e-9;
    let mut points = vec![state.position];
    let mut rose = false;
    let cause;
    loop {
        if points.len() as u64 > cfg.max_steps {
            cause = TerminationCause::StepCap;
            break;
        }
        state = advance(state, cfg.dt, env, proj);
        if state.position.y < 0.0 && rose {
            cause = TerminationCause::Ground;
            break;
        }
        points.push(state.position);
        rose |= state.position.y > RISE_TOLERANCE;
        if state.position.norm() >= cfg.max_radius {
            cause = TerminationCause::Radius;
            break;
        }
    }
    Ok(Trajectory { initial_angle: elevation_angle, angle_index: 0, points, termination_cause: cause })
}

/// Collapse a 3D target onto the vertical firing plane.
///
/// Returns the in-plane point `(sqrt(X^2 + Y^2), Z)` together with the
/// azimuth `atan2(Y, X)` of that plane. The all-zero point maps to azimuth
/// 0 by convention.
pub fn map_3d_to_2d(point: [f64; 3]) -> Result<(Vec2, f64)> {
    let [x, y, z] = point;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::InvalidInput("3D point must be finite".to_string()));
    }
    let range = x.hypot(y);
    let azimuth = if range == 0.0 { 0.0 } else { y.atan2(x) };
    Ok((Vec2::new(range, z), azimuth))
}

/// Rotate an in-plane point back into 3D about the vertical axis.
pub fn map_2d_to_3d(point2: Vec2, azimuth: f64) -> Result<[f64; 3]> {
    if point2.x < 0.0 {
        return Err(Error::InvalidInput(format!(
            "in-plane range component must be >= 0, got {}",
            point2.x
        )));
    }
    Ok([point2.x * azimuth.cos(), point2.x * azimuth.sin(), point2.y])
}
