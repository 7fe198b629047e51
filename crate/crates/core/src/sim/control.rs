//! Reference signals, the substitute outer-loop controller and the soft
//! saturation that shapes its output into the admissible virtual set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::rate_admissible;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub channel: usize,
    /// rad/s
    pub amplitude: f64,
    pub start: f64,
    pub duration: f64,
}

impl Pulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Sum of rectangular pulses per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSignal {
    channels: usize,
    pulses: Vec<Pulse>,
}

impl ReferenceSignal {
    pub fn new(channels: usize, mut pulses: Vec<Pulse>) -> Result<Self> {
        for p in &pulses {
            if p.channel >= channels {
                return Err(Error::invalid(format!(
                    "pulse channel {} out of range",
                    p.channel
                )));
            }
            if !(p.start >= 0.0 && p.duration > 0.0 && p.amplitude.is_finite()) {
                return Err(Error::invalid(
                    "pulses need start >= 0, duration > 0, finite amplitude",
                ));
            }
        }
        pulses.sort_by(|a, b| {
            (a.channel, a.start)
                .partial_cmp(&(b.channel, b.start))
                .unwrap()
        });
        for w in pulses.windows(2) {
            if w[0].channel == w[1].channel && w[1].start < w[0].end() {
                return Err(Error::invalid(format!(
                    "overlapping pulses on channel {}",
                    w[0].channel
                )));
            }
        }
        Ok(Self { channels, pulses })
    }

    pub fn zero(channels: usize) -> Self {
        Self {
            channels,
            pulses: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.channels);
        for p in self.pulses.iter().filter(|p| p.active(t)) {
            out[p.channel] += p.amplitude;
        }
        out
    }
}

/// `v = F x + kp (ref - y) + ki z`, with `z' = ref - y + k_aw (v_s - v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerGains {
    /// r x n state feedback.
    pub feedback: DMatrix<f64>,
    pub kp: DVector<f64>,
    pub ki: DVector<f64>,
    /// Back-calculation gain; zero disables anti-windup.
    pub anti_windup: DVector<f64>,
}

impl ControllerGains {
    pub fn validate(&self, n: usize, r: usize) -> Result<()> {
        crate::error::check_dims("state feedback", (r, n), self.feedback.shape())?;
        for (what, g) in [
            ("kp", &self.kp),
            ("ki", &self.ki),
            ("anti_windup", &self.anti_windup),
        ] {
            if g.len() != r {
                return Err(Error::invalid(format!("{what} needs {r} entries")));
            }
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!(
                    "{what} entries must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    None,
    /// Cancels the influence of the non-output states on the outputs.
    #[default]
    Coupling,
    /// Cancels the complete output-row dynamics.
    Full,
}

/// State feedback built from the plant's output rows `B_v^T A`.
pub fn feedback_matrix(mode: FeedbackMode, a: &DMatrix<f64>, b_v: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = b_v.transpose() * a;
    match mode {
        FeedbackMode::None => DMatrix::zeros(rows.nrows(), rows.ncols()),
        FeedbackMode::Full => -rows,
        FeedbackMode::Coupling => {
            let n = a.nrows();
            let outputs = b_v * b_v.transpose();
            -(rows * (DMatrix::identity(n, n) - outputs))
        }
    }
}

pub fn controller(
    x: &DVector<f64>,
    y: &DVector<f64>,
    reference: &DVector<f64>,
    integral: &DVector<f64>,
    gains: &ControllerGains,
) -> DVector<f64> {
    &gains.feedback * x
        + gains.kp.component_mul(&(reference - y))
        + gains.ki.component_mul(integral)
}

pub(crate) fn integral_rate(
    y: &DVector<f64>,
    reference: &DVector<f64>,
    v: &DVector<f64>,
    v_s: &DVector<f64>,
    gains: &ControllerGains,
) -> DVector<f64> {
    reference - y + gains.anti_windup.component_mul(&(v_s - v))
}

/// Bounds of the admissible virtual set: `|v_s_i| <= limit_i`,
/// `|v_s_i'| <= rate_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSaturation {
    pub limit: DVector<f64>,
    pub rate: DVector<f64>,
}

impl SoftSaturation {
    pub fn validate(&self, r: usize) -> Result<()> {
        if self.limit.len() != r || self.rate.len() != r {
            return Err(Error::invalid(format!(
                "soft saturation needs {r} limits and rates"
            )));
        }
        if self
            .limit
            .iter()
            .chain(self.rate.iter())
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(
                "soft saturation limits and rates must be positive",
            ));
        }
        Ok(())
    }
}

/// `M tanh(v / M)` followed by a one-step slew clamp around `prev`.
pub fn soft_saturate(
    v: &DVector<f64>,
    prev: &DVector<f64>,
    dt: f64,
    limit: &DVector<f64>,
    rate: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        let m = limit[i];
        let shaped = m * (v[i] / m).tanh();
        let step = rate[i] * dt;
        let out = shaped.clamp(prev[i] - step, prev[i] + step);
        // keep the difference quotient inside the slew bound in floating point
        let out = rate_admissible(prev[i], out, |u| (u - prev[i]).abs() / dt <= rate[i]);
        out.clamp(-m, m)
    })
}
