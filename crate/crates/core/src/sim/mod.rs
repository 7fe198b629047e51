//! Closed-loop scenario engine.
//!
//! Signal flow per sample: reference -> controller -> soft saturation ->
//! allocator -> actuator limits -> plant, with the achieved virtual input
//! `B Lambda u` fed back into the allocator. Controller, soft saturation
//! and limiter update at sample boundaries and are held over the step;
//! plant, allocator and controller integrator are integrated with RK4.

mod control;
mod integrate;
mod metrics;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

pub use control::{
    controller, feedback_matrix, soft_saturate, ControllerGains, FeedbackMode, Pulse,
    ReferenceSignal, SoftSaturation,
};
pub use integrate::rk4_step;
pub use metrics::{metrics, total_variation, Metrics, SegmentError};
pub use trajectory::{Sample, Trajectory};

use crate::allocator::{Allocator, AllocatorConfig, AllocatorState};
use crate::error::{Error, Result};
use crate::plant::{
    apply_actuator_limits, ActuatorBank, ActuatorLimits, EffectivenessSchedule, PlantModel,
};
use crate::projection::ProjectionKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    /// Conventional projection, no actuator rate limit.
    I,
    /// Conventional projection with rate limit.
    II,
    /// Modified projection with rate limit.
    III,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::I, Case::II, Case::III];

    pub fn projection(self) -> ProjectionKind {
        match self {
            Case::I | Case::II => ProjectionKind::Conventional,
            Case::III => ProjectionKind::Modified,
        }
    }

    pub fn rate_limited(self) -> bool {
        !matches!(self, Case::I)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        })
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            other => Err(Error::Config(format!(
                "unknown case '{other}' (expected I, II or III)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub case: Case,
    pub enable_rate_limit: bool,
    pub reference: ReferenceSignal,
    pub schedule: EffectivenessSchedule,
    pub dt: f64,
    pub duration: f64,
    pub allocator: AllocatorConfig,
    pub soft_saturation: SoftSaturation,
    pub gains: ControllerGains,
    pub plant: PlantModel,
    pub limits: ActuatorLimits,
}

impl Scenario {
    /// Number of integration steps; the trajectory has one more sample.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.duration > 0.0)
            || !self.dt.is_finite()
            || !self.duration.is_finite()
        {
            return Err(Error::invalid(
                "dt and duration must be positive and finite",
            ));
        }
        let n = (self.duration / self.dt).round();
        if n < 1.0 || ((n * self.dt - self.duration).abs() > 1e-9 * self.duration) {
            return Err(Error::invalid(format!(
                "duration {} is not an integer multiple of dt {}",
                self.duration, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.allocator.kind != self.case.projection()
            || self.enable_rate_limit != self.case.rate_limited()
        {
            return Err(Error::invalid(format!(
                "case {} requires {:?} projection with rate limiting {}",
                self.case,
                self.case.projection(),
                if self.case.rate_limited() {
                    "on"
                } else {
                    "off"
                }
            )));
        }
        let (n, r, m) = (self.plant.n(), self.plant.r(), self.plant.m());
        if self.allocator.b != *self.plant.b() {
            return Err(Error::invalid(
                "allocator and plant control matrices differ",
            ));
        }
        if self.limits.m() != m || self.schedule.m() != m {
            return Err(Error::invalid(
                "actuator limits or schedule do not match the actuator count",
            ));
        }
        if self.reference.channels() != r {
            return Err(Error::invalid("reference channel count must equal r"));
        }
        self.gains.validate(n, r)?;
        self.soft_saturation.validate(r)?;
        self.allocator.validate()
    }

    /// Time at which the oscillation window opens: the first effectiveness
    /// change, or zero for a constant schedule.
    pub fn fault_time(&self) -> f64 {
        self.schedule.first_change().unwrap_or(0.0)
    }
}

/// Packs `(x, xi, xi_m, theta, z)` into one integration vector.
struct Layout {
    n: usize,
    r: usize,
    m: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.n + 3 * self.r + self.r * self.m
    }

    fn pack(&self, x: &DVector<f64>, a: &AllocatorState, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        let all = x
            .iter()
            .chain(&a.xi)
            .chain(&a.xi_m)
            .chain(a.theta.iter())
            .chain(z);
        for (k, v) in all.enumerate() {
            out[k] = *v;
        }
        out
    }

    fn unpack(&self, s: &DVector<f64>) -> (DVector<f64>, AllocatorState, DVector<f64>) {
        let (n, r, m) = (self.n, self.r, self.m);
        let sl = s.as_slice();
        let x = DVector::from_column_slice(&sl[..n]);
        let xi = DVector::from_column_slice(&sl[n..n + r]);
        let xi_m = DVector::from_column_slice(&sl[n + r..n + 2 * r]);
        let off = n + 2 * r;
        let theta = DMatrix::from_column_slice(r, m, &sl[off..off + r * m]);
        let z = DVector::from_column_slice(&sl[off + r * m..]);
        (x, AllocatorState { xi, xi_m, theta }, z)
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let steps = scenario.steps()?;
    let dt = scenario.dt;
    let plant = &scenario.plant;
    let alloc = Allocator::new(scenario.allocator.clone())?;
    let bounds = &scenario.allocator.bounds;
    let layout = Layout {
        n: plant.n(),
        r: plant.r(),
        m: plant.m(),
    };
    let output_map = plant.b_v().transpose();
    let sat = &scenario.soft_saturation;

    let mut bundle = layout.pack(
        &DVector::zeros(layout.n),
        &alloc.initial_state(),
        &DVector::zeros(layout.r),
    );
    let mut bank = ActuatorBank::at_rest(layout.m);
    let mut v_s = DVector::zeros(layout.r);
    let mut samples = Vec::with_capacity(steps + 1);

    for k in 0..=steps {
        let t = k as f64 * dt;
        let (x, state, z) = layout.unpack(&bundle);
        let y = &output_map * &x;
        let reference = scenario.reference.value(t);
        let v = controller(&x, &y, &reference, &z, &scenario.gains);
        v_s = soft_saturate(&v, &v_s, dt, &sat.limit, &sat.rate);
        let u_cmd = state.theta.tr_mul(&v_s);
        let (next_bank, u_applied) = apply_actuator_limits(
            &bank,
            &u_cmd,
            dt,
            &scenario.limits,
            scenario.enable_rate_limit,
        )?;
        bank = next_bank;
        let lambda = scenario.schedule.lambda_at(t)?;
        let regressor = alloc.regressor_for(&v_s, &state.error());

        samples.push(Sample {
            t,
            f_max: bounds.max_theta_barrier(&state.theta),
            h_max: bounds.max_regressor_barrier(&regressor),
            x,
            xi: state.xi,
            xi_m: state.xi_m,
            theta: state.theta,
            v: v.clone(),
            v_s: v_s.clone(),
            u_cmd,
            u_applied: u_applied.clone(),
        });
        if k == steps {
            break;
        }

        let achieved = plant.virtual_unchecked(&u_applied, lambda);
        let deriv = |_: f64, s: &DVector<f64>| {
            let (x, state, _) = layout.unpack(s);
            let y = &output_map * &x;
            let dx = plant.derivative_from_virtual(&x, &achieved);
            let da = alloc.derivatives_unchecked(&state, &v_s, &achieved);
            let dz = control::integral_rate(&y, &reference, &v, &v_s, &scenario.gains);
            layout.pack(&dx, &da, &dz)
        };
        bundle = rk4_step(deriv, &bundle, t, dt)?;
    }
    Ok(Trajectory { samples })
}
