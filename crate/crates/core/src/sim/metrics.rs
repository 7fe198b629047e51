use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};

use super::{Scenario, Trajectory};
use crate::allocator::ideal_theta;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentError {
    pub channel: usize,
    pub start: f64,
    pub end: f64,
    pub amplitude: f64,
    pub rms: f64,
    /// `rms / |amplitude|`
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub case: String,
    pub samples: usize,
    pub segments: Vec<SegmentError>,
    /// max |u_applied(k+1) - u_applied(k)| / dt per actuator.
    pub max_applied_rate: Vec<f64>,
    pub max_command_rate: Vec<f64>,
    pub rate_limit: Vec<f64>,
    pub oscillation_window_start: f64,
    /// Total variation of u_applied from the fault onset on, per actuator.
    pub oscillation_index: Vec<f64>,
    pub oscillation_total: f64,
    pub applied_within_limits: bool,
    pub command_within_limits: bool,
    pub f_max: f64,
    pub h_max: f64,
    /// max over the final second of |e|^2 - 2 |theta~|_F^2 |Y_MAX|_F / lambda_min(Q).
    pub e2_residual: f64,
    /// Same with the bound built from the worst-case parameter error matrix.
    pub e2_residual_bound_form: f64,
}

impl Metrics {
    pub fn worst_relative_error(&self) -> f64 {
        self.segments.iter().map(|s| s.relative).fold(0.0, f64::max)
    }

    /// Worst relative tracking error over segments starting at or after the
    /// oscillation window.
    pub fn post_fault_worst_relative(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.start >= self.oscillation_window_start)
            .map(|s| s.relative)
            .fold(0.0, f64::max)
    }

    pub fn to_report(&self) -> String {
        self.to_string()
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "case = {}", self.case);
        let _ = writeln!(s, "samples = {}", self.samples);
        for seg in &self.segments {
            let _ = writeln!(
                s,
                "tracking[ch{} {:?}-{:?}] = rms {:?} relative {:?}",
                seg.channel + 1,
                seg.start,
                seg.end,
                seg.rms,
                seg.relative
            );
        }
        let _ = writeln!(
            s,
            "tracking_worst_relative = {:?}",
            self.worst_relative_error()
        );
        let _ = writeln!(
            s,
            "post_fault_worst_relative = {:?}",
            self.post_fault_worst_relative()
        );
        let _ = writeln!(s, "max_applied_rate = {}", join(&self.max_applied_rate));
        let _ = writeln!(s, "max_command_rate = {}", join(&self.max_command_rate));
        let _ = writeln!(s, "rate_limit = {}", join(&self.rate_limit));
        let _ = writeln!(
            s,
            "oscillation_window_start = {:?}",
            self.oscillation_window_start
        );
        let _ = writeln!(s, "oscillation_index = {}", join(&self.oscillation_index));
        let _ = writeln!(s, "oscillation_total = {:?}", self.oscillation_total);
        let _ = writeln!(s, "applied_within_limits = {}", self.applied_within_limits);
        let _ = writeln!(s, "command_within_limits = {}", self.command_within_limits);
        let _ = writeln!(s, "f_max = {:?}", self.f_max);
        let _ = writeln!(s, "h_max = {:?}", self.h_max);
        let _ = writeln!(s, "e2_residual = {:?}", self.e2_residual);
        let _ = write!(
            s,
            "e2_residual_bound_form = {:?}",
            self.e2_residual_bound_form
        );
        writeln!(f, "{s}")
    }
}

/// Sum of absolute increments.
pub fn total_variation(series: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = series.into_iter();
    let Some(mut prev) = it.next() else {
        return 0.0;
    };
    let mut tv = 0.0;
    for v in it {
        tv += (v - prev).abs();
        prev = v;
    }
    tv
}

pub fn metrics(traj: &Trajectory, scenario: &Scenario) -> Result<Metrics> {
    if traj.is_empty() {
        return Err(Error::invalid("metrics of an empty trajectory"));
    }
    let dt = scenario.dt;
    let m = scenario.plant.m();
    let output_map = scenario.plant.b_v().transpose();
    let s = &traj.samples;
    let t_end = s.last().unwrap().t;

    let mut segments = Vec::new();
    for p in scenario.reference.pulses() {
        let lo = p.start + 0.5 * p.duration;
        let hi = p.end().min(t_end + 0.5 * dt);
        let mut sum = 0.0;
        let mut count = 0usize;
        for smp in s.iter().filter(|smp| smp.t >= lo && smp.t < hi) {
            let y = &output_map * &smp.x;
            let err = y[p.channel] - scenario.reference.value(smp.t)[p.channel];
            sum += err * err;
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let rms = (sum / count as f64).sqrt();
        segments.push(SegmentError {
            channel: p.channel,
            start: p.start,
            end: p.end(),
            amplitude: p.amplitude,
            rms,
            relative: rms / p.amplitude.abs(),
        });
    }

    let max_rate = |pick: fn(&super::Sample) -> &DVector<f64>| -> Vec<f64> {
        (0..m)
            .map(|j| {
                s.windows(2)
                    .map(|w| (pick(&w[1])[j] - pick(&w[0])[j]).abs() / dt)
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let max_applied_rate = max_rate(|p| &p.u_applied);
    let max_command_rate = max_rate(|p| &p.u_cmd);

    let window = scenario.fault_time();
    let oscillation_index: Vec<f64> = (0..m)
        .map(|j| total_variation(s.iter().filter(|p| p.t >= window).map(|p| p.u_applied[j])))
        .collect();

    let limits = &scenario.limits;
    let applied_within_limits = s.iter().all(|p| limits.contains(&p.u_applied));
    let command_within_limits = s.iter().all(|p| limits.contains(&p.u_cmd));

    let cfg = &scenario.allocator;
    let q_min = cfg.q.clone().symmetric_eigen().eigenvalues.min();
    let y_max_f = cfg.bounds.regressor_abs_max().norm();
    let theta_err_max_f = cfg.bounds.theta_error_max().norm();
    let mut e2 = f64::NEG_INFINITY;
    let mut e2_bound = f64::NEG_INFINITY;
    let mut cached: Option<(DVector<f64>, DMatrix<f64>)> = None;
    for p in s.iter().filter(|p| p.t >= t_end - 1.0 - 1e-12) {
        let lambda = scenario.schedule.lambda_at(p.t)?;
        let star = match &cached {
            Some((l, st)) if l == lambda => st.clone(),
            _ => {
                let st = ideal_theta(&cfg.b, lambda)?;
                cached = Some((lambda.clone(), st.clone()));
                st
            }
        };
        let e = &p.xi - &p.xi_m;
        let tilde = (&p.theta - star).norm();
        e2 = e2.max(e.norm_squared() - 2.0 * tilde * tilde * y_max_f / q_min);
        e2_bound = e2_bound.max(e.norm_squared() - 2.0 * theta_err_max_f * y_max_f / q_min);
    }

    Ok(Metrics {
        case: scenario.case.to_string(),
        samples: s.len(),
        segments,
        max_applied_rate,
        max_command_rate,
        rate_limit: (0..m).map(|j| limits.rate_headroom(j)).collect(),
        oscillation_window_start: window,
        oscillation_total: oscillation_index.iter().sum(),
        oscillation_index,
        applied_within_limits,
        command_within_limits,
        f_max: s.iter().map(|p| p.f_max).fold(f64::NEG_INFINITY, f64::max),
        h_max: s.iter().map(|p| p.h_max).fold(f64::NEG_INFINITY, f64::max),
        e2_residual: e2,
        e2_residual_bound_form: e2_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_variation_constant_and_sine() {
        assert_eq!(total_variation(std::iter::repeat_n(0.3, 100)), 0.0);
        assert_eq!(total_variation(std::iter::empty()), 0.0);
        let (a, k, n) = (0.7, 3.0, 30_000);
        let sine =
            (0..=n).map(|i| a * (2.0 * std::f64::consts::PI * k * i as f64 / n as f64).sin());
        let tv = total_variation(sine);
        assert!((tv - 4.0 * a * k).abs() < 1e-6, "{tv}");
    }
}
