//! TOML run configuration. Every section is optional and falls back to the
//! ADMIRE defaults; unknown keys are rejected.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocator::{ideal_theta, size_bounds, AllocatorConfig, BoundSizing, SizingMode};
use crate::error::{Error, Result};
use crate::plant::{admire_model, ActuatorLimits, EffectivenessSchedule, PlantModel};
use crate::projection::ProjectionBounds;
use crate::sim::{
    feedback_matrix, Case, ControllerGains, FeedbackMode, Pulse, ReferenceSignal, Scenario,
    SoftSaturation,
};
use crate::verify::VerifySettings;

const DEG: f64 = std::f64::consts::PI / 180.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub duration: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 15.0,
        }
    }
}

/// Omitted matrices and limits take the ADMIRE values. Angles in rad,
/// rates in rad/s.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub a: Option<Vec<Vec<f64>>>,
    pub b_v: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub rate_min: Option<Vec<f64>>,
    pub rate_max: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    pub time: f64,
    /// Remaining effectiveness per actuator from `time` on.
    pub effectiveness: Vec<f64>,
}

impl Default for FaultSection {
    fn default() -> Self {
        Self {
            time: 6.0,
            effectiveness: vec![0.7; 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorSection {
    /// Reference model `A_m = pole * I` unless `a_m` is given.
    pub pole: f64,
    pub a_m: Option<Vec<Vec<f64>>>,
    /// `Q = q_scale * I` unless `q` is given.
    pub q_scale: f64,
    pub q: Option<Vec<Vec<f64>>>,
    /// Diagonal of the adaptation gain.
    pub gamma: Vec<f64>,
    pub sizing: SizingMode,
    pub safety: f64,
    pub tolerance_fraction: f64,
    pub floor: f64,
    pub headroom: f64,
}

impl Default for AllocatorSection {
    fn default() -> Self {
        Self {
            pole: -5.0,
            a_m: None,
            q_scale: 1.0,
            q: None,
            gamma: vec![1000.0; 3],
            sizing: SizingMode::Weighted,
            safety: 0.95,
            tolerance_fraction: 0.05,
            floor: 0.02,
            headroom: 1.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftSaturationSection {
    /// Magnitude bound per virtual channel.
    pub limit: Vec<f64>,
    /// Slew bound per virtual channel.
    pub rate: Vec<f64>,
}

impl Default for SoftSaturationSection {
    fn default() -> Self {
        Self {
            limit: vec![1.0, 1.0, 0.1],
            rate: vec![1.0, 1.5, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub feedback: FeedbackMode,
    /// Explicit r x n feedback; overrides `feedback`.
    pub feedback_matrix: Option<Vec<Vec<f64>>>,
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub anti_windup: Vec<f64>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            feedback: FeedbackMode::Coupling,
            feedback_matrix: None,
            kp: vec![8.0, 10.0, 8.0],
            ki: vec![2.0, 1.0, 2.0],
            anti_windup: vec![0.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    pub pulses: Vec<Pulse>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        let pulse = |channel, deg: f64, start| Pulse {
            channel,
            amplitude: deg * DEG,
            start,
            duration: 2.0,
        };
        Self {
            pulses: vec![
                pulse(0, 10.0, 1.0),
                pulse(0, -10.0, 3.0),
                pulse(1, 5.0, 8.0),
                pulse(1, -5.0, 10.0),
            ],
        }
    }
}

/// Parameter grid; an empty axis keeps the base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub cases: Vec<String>,
    /// Uniform adaptation gain values.
    pub gamma: Vec<f64>,
    /// Uniform effectiveness loss fractions, e.g. 0.3 for a 30 % loss.
    pub fault_loss: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            cases: vec!["III".into()],
            gamma: Vec::new(),
            fault_loss: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sim: SimSection,
    pub plant: PlantSection,
    pub fault: FaultSection,
    pub allocator: AllocatorSection,
    pub soft_saturation: SoftSaturationSection,
    pub controller: ControllerSection,
    pub reference: ReferenceSection,
    pub verify: VerifySettings,
    pub sweep: SweepSection,
}

fn matrix(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "{what}: expected a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(what: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Config(format!(
            "{what}: expected {len} entries, found {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn plant(&self) -> Result<(PlantModel, ActuatorLimits)> {
        let (base, base_limits) = admire_model();
        let p = &self.plant;
        let a =
            p.a.as_deref()
                .map(|m| matrix("plant.a", m))
                .transpose()?
                .unwrap_or_else(|| base.a().clone());
        let b_v = p
            .b_v
            .as_deref()
            .map(|m| matrix("plant.b_v", m))
            .transpose()?
            .unwrap_or_else(|| base.b_v().clone());
        let b =
            p.b.as_deref()
                .map(|m| matrix("plant.b", m))
                .transpose()?
                .unwrap_or_else(|| base.b().clone());
        let model = PlantModel::new(a, b_v, b).map_err(|e| Error::Config(e.to_string()))?;
        let m = model.m();
        let pick =
            |what: &str, v: &Option<Vec<f64>>, base: &DVector<f64>| -> Result<DVector<f64>> {
                match v {
                    Some(v) => vector(what, v, m),
                    None if base.len() == m => Ok(base.clone()),
                    None => Err(Error::Config(format!(
                        "{what} must be given for a {m}-actuator plant"
                    ))),
                }
            };
        let limits = ActuatorLimits::new(
            pick("plant.u_min", &p.u_min, &base_limits.u_min)?,
            pick("plant.u_max", &p.u_max, &base_limits.u_max)?,
            pick("plant.rate_min", &p.rate_min, &base_limits.rate_min)?,
            pick("plant.rate_max", &p.rate_max, &base_limits.rate_max)?,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok((model, limits))
    }

    pub fn virtual_limits(&self, r: usize) -> Result<SoftSaturation> {
        let sat = SoftSaturation {
            limit: vector("soft_saturation.limit", &self.soft_saturation.limit, r)?,
            rate: vector("soft_saturation.rate", &self.soft_saturation.rate, r)?,
        };
        sat.validate(r).map_err(|e| Error::Config(e.to_string()))?;
        Ok(sat)
    }

    /// Projection bounds from the sizing rule for the configured plant.
    pub fn bounds(&self) -> Result<ProjectionBounds> {
        let (model, limits) = self.plant()?;
        let r = model.r();
        let sat = self.virtual_limits(r)?;
        let al = &self.allocator;
        let sizing = BoundSizing {
            mode: al.sizing,
            virtual_limit: sat.limit,
            virtual_rate: sat.rate,
            gamma: vector("allocator.gamma", &al.gamma, r)?,
            safety: al.safety,
            tolerance_fraction: al.tolerance_fraction,
            floor: al.floor,
            headroom: al.headroom,
        };
        size_bounds(model.b(), &limits, &sizing).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenario(&self, case: Case) -> Result<Scenario> {
        let (plant, limits) = self.plant()?;
        let (r, m) = (plant.r(), plant.m());
        let al = &self.allocator;
        let a_m = match &al.a_m {
            Some(rows) => matrix("allocator.a_m", rows)?,
            None => DMatrix::identity(r, r) * al.pole,
        };
        let q = match &al.q {
            Some(rows) => matrix("allocator.q", rows)?,
            None => DMatrix::identity(r, r) * al.q_scale,
        };
        let bounds = self.bounds()?;
        let nominal = ideal_theta(plant.b(), &DVector::from_element(m, 1.0))?;
        let allocator = AllocatorConfig {
            a_m,
            q,
            gamma: vector("allocator.gamma", &al.gamma, r)?,
            theta_init: bounds.clip_to_inner(&nominal),
            bounds,
            kind: case.projection(),
            b: plant.b().clone(),
        };

        let schedule = EffectivenessSchedule::step_fault(
            m,
            self.fault.time,
            &vector("fault.effectiveness", &self.fault.effectiveness, m)?,
        )
        .map_err(|e| Error::Config(e.to_string()))?;

        let c = &self.controller;
        let feedback = match &c.feedback_matrix {
            Some(rows) => matrix("controller.feedback_matrix", rows)?,
            None => feedback_matrix(c.feedback, plant.a(), plant.b_v()),
        };
        let gains = ControllerGains {
            feedback,
            kp: vector("controller.kp", &c.kp, r)?,
            ki: vector("controller.ki", &c.ki, r)?,
            anti_windup: vector("controller.anti_windup", &c.anti_windup, r)?,
        };
        let reference = ReferenceSignal::new(r, self.reference.pulses.clone())
            .map_err(|e| Error::Config(e.to_string()))?;

        let scenario = Scenario {
            case,
            enable_rate_limit: case.rate_limited(),
            reference,
            schedule,
            dt: self.sim.dt,
            duration: self.sim.duration,
            allocator,
            soft_saturation: self.virtual_limits(r)?,
            gains,
            plant,
            limits,
        };
        scenario
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(scenario)
    }
}
