//! Linear over-actuated plant `x' = A x + B_v B diag(lambda) u`, the actuator
//! bank with magnitude and rate saturation, and the ADMIRE benchmark.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, Error, Result};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Singular values below this fraction of the largest count as zero.
pub(crate) const RANK_TOL: f64 = 1e-10;

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * largest).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b_v: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl PlantModel {
    /// `a` is n x n, `b_v` is n x r and `b` is r x m; both input factors must
    /// have rank r.
    pub fn new(a: DMatrix<f64>, b_v: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let r = b.nrows();
        let m = b.ncols();
        if n == 0 || r == 0 || m == 0 {
            return Err(Error::invalid("plant dimensions must be non-zero"));
        }
        check_dims("state matrix", (n, n), a.shape())?;
        check_dims("virtual input matrix", (n, r), b_v.shape())?;
        if r > m || r > n {
            return Err(Error::invalid("plant must satisfy r <= m and r <= n"));
        }
        if a.iter()
            .chain(b_v.iter())
            .chain(b.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("plant matrices must be finite"));
        }
        for (name, mat) in [("B", &b), ("B_v", &b_v)] {
            let rank = numerical_rank(mat);
            if rank < r {
                return Err(Error::invalid(format!(
                    "{name} must have rank {r}, found {rank}"
                )));
            }
        }
        Ok(Self { a, b_v, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_v(&self) -> &DMatrix<f64> {
        &self.b_v
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Combined input matrix `B_u = B_v B`.
    pub fn b_u(&self) -> DMatrix<f64> {
        &self.b_v * &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn r(&self) -> usize {
        self.b.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `B diag(lambda) u` without dimension checks.
    pub(crate) fn virtual_unchecked(
        &self,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> DVector<f64> {
        &self.b * u.component_mul(lambda)
    }

    pub(crate) fn derivative_from_virtual(
        &self,
        x: &DVector<f64>,
        achieved: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * x + &self.b_v * achieved
    }
}

/// Piecewise-constant actuator effectiveness.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectivenessSchedule {
    segments: Vec<(f64, DVector<f64>)>,
}

impl EffectivenessSchedule {
    /// Segments are `(start time, diagonal)`; the first must start at 0 and
    /// start times must increase strictly.
    pub fn new(segments: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let Some((first, diag0)) = segments.first() else {
            return Err(Error::invalid("effectiveness schedule is empty"));
        };
        if *first != 0.0 {
            return Err(Error::invalid(
                "first effectiveness segment must start at t = 0",
            ));
        }
        let m = diag0.len();
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) || !w[1].0.is_finite() {
                return Err(Error::invalid("segment start times must increase strictly"));
            }
        }
        for (_, d) in &segments {
            check_dims("effectiveness diagonal", (m, 1), (d.len(), 1))?;
            if d.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                return Err(Error::invalid("effectiveness entries must be positive"));
            }
        }
        Ok(Self { segments })
    }

    pub fn nominal(m: usize) -> Self {
        Self {
            segments: vec![(0.0, DVector::from_element(m, 1.0))],
        }
    }

    /// Full effectiveness before `t_fault`, `level` on every actuator from
    /// `t_fault` on (inclusive).
    pub fn step_fault(m: usize, t_fault: f64, level: &DVector<f64>) -> Result<Self> {
        Self::new(vec![
            (0.0, DVector::from_element(m, 1.0)),
            (t_fault, level.clone()),
        ])
    }

    pub fn segments(&self) -> &[(f64, DVector<f64>)] {
        &self.segments
    }

    pub fn m(&self) -> usize {
        self.segments[0].1.len()
    }

    /// Start of the first non-initial segment, if any.
    pub fn first_change(&self) -> Option<f64> {
        self.segments.get(1).map(|s| s.0)
    }

    pub fn lambda_at(&self, t: f64) -> Result<&DVector<f64>> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("effectiveness queried at t = {t}")));
        }
        let idx = self.segments.partition_point(|(start, _)| *start <= t);
        Ok(&self.segments[idx - 1].1)
    }
}

pub fn lambda_at(t: f64, schedule: &EffectivenessSchedule) -> Result<DVector<f64>> {
    schedule.lambda_at(t).cloned()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorLimits {
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub rate_min: DVector<f64>,
    pub rate_max: DVector<f64>,
}

impl ActuatorLimits {
    pub fn new(
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        rate_min: DVector<f64>,
        rate_max: DVector<f64>,
    ) -> Result<Self> {
        let m = u_min.len();
        for (what, v) in [
            ("u_max", &u_max),
            ("rate_min", &rate_min),
            ("rate_max", &rate_max),
        ] {
            if v.len() != m {
                return Err(Error::invalid(format!(
                    "{what} has {} entries, expected {m}",
                    v.len()
                )));
            }
        }
        for j in 0..m {
            if !(u_min[j] < 0.0 && u_max[j] > 0.0) {
                return Err(Error::invalid(format!(
                    "actuator {j}: need u_min < 0 < u_max"
                )));
            }
            if !(rate_min[j] < 0.0 && rate_max[j] > 0.0) {
                return Err(Error::invalid(format!(
                    "actuator {j}: need rate_min < 0 < rate_max"
                )));
            }
        }
        Ok(Self {
            u_min,
            u_max,
            rate_min,
            rate_max,
        })
    }

    pub fn m(&self) -> usize {
        self.u_min.len()
    }

    /// `min(|u_min_j|, u_max_j)`.
    pub fn magnitude_headroom(&self, j: usize) -> f64 {
        (-self.u_min[j]).min(self.u_max[j])
    }

    pub fn rate_headroom(&self, j: usize) -> f64 {
        (-self.rate_min[j]).min(self.rate_max[j])
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .enumerate()
            .all(|(j, v)| *v >= self.u_min[j] && *v <= self.u_max[j])
    }
}

/// Current applied deflections; the memory of the discrete rate limiter.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorBank {
    pub deflections: DVector<f64>,
}

impl ActuatorBank {
    pub fn at_rest(m: usize) -> Self {
        Self {
            deflections: DVector::zeros(m),
        }
    }
}

/// Largest value `v` in `[prev, candidate]` whose difference quotient
/// `(v - prev) / dt` does not exceed `rate`.
/// Largest admissible value between `prev` (always admissible) and
/// `candidate`. Bisects instead of walking ulps: cancellation in
/// `prev + rate * dt` can leave the candidate near zero, where ulps are tiny.
pub(crate) fn rate_admissible(prev: f64, candidate: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if ok(candidate) {
        return candidate;
    }
    let (mut good, mut bad) = (prev, candidate);
    loop {
        let mid = 0.5 * (good + bad);
        if mid == good || mid == bad {
            return good;
        }
        if ok(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
}

fn exact_rate_up(prev: f64, candidate: f64, dt: f64, rate: f64) -> f64 {
    rate_admissible(prev, candidate, |v| (v - prev) / dt <= rate)
}

fn exact_rate_down(prev: f64, candidate: f64, dt: f64, rate: f64) -> f64 {
    rate_admissible(prev, candidate, |v| (v - prev) / dt >= rate)
}

/// Magnitude clamp, then (optionally) one-step rate clamp. With rate
/// limiting on, `(new - prev) / dt` lies within the rate limits exactly in
/// floating point, as evaluated by that expression.
pub fn apply_actuator_limits(
    bank: &ActuatorBank,
    u_cmd: &DVector<f64>,
    dt: f64,
    limits: &ActuatorLimits,
    enable_rate: bool,
) -> Result<(ActuatorBank, DVector<f64>)> {
    let m = limits.m();
    check_dims("actuator command", (m, 1), (u_cmd.len(), 1))?;
    check_dims("actuator bank", (m, 1), (bank.deflections.len(), 1))?;
    if !(dt > 0.0) {
        return Err(Error::invalid("actuator time step must be positive"));
    }
    let applied = DVector::from_fn(m, |j, _| {
        let mag = u_cmd[j].clamp(limits.u_min[j], limits.u_max[j]);
        if !enable_rate {
            return mag;
        }
        let prev = bank.deflections[j];
        let lo = prev + limits.rate_min[j] * dt;
        let hi = prev + limits.rate_max[j] * dt;
        if mag > hi {
            exact_rate_up(prev, hi, dt, limits.rate_max[j])
        } else if mag < lo {
            exact_rate_down(prev, lo, dt, limits.rate_min[j])
        } else {
            // inside the reachable interval; still guard the quotient
            let v = exact_rate_up(prev, mag, dt, limits.rate_max[j]);
            exact_rate_down(prev, v, dt, limits.rate_min[j])
        }
    });
    Ok((
        ActuatorBank {
            deflections: applied.clone(),
        },
        applied,
    ))
}

pub fn plant_derivatives(
    x: &DVector<f64>,
    u_applied: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &PlantModel,
) -> Result<DVector<f64>> {
    check_dims("plant state", (model.n(), 1), (x.len(), 1))?;
    let achieved = achieved_virtual(u_applied, lambda, model)?;
    Ok(model.derivative_from_virtual(x, &achieved))
}

pub fn achieved_virtual(
    u_applied: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &PlantModel,
) -> Result<DVector<f64>> {
    check_dims("applied input", (model.m(), 1), (u_applied.len(), 1))?;
    check_dims("effectiveness", (model.m(), 1), (lambda.len(), 1))?;
    Ok(model.virtual_unchecked(u_applied, lambda))
}

/// State `[alpha, beta, p, q, r]`, virtual inputs are the three angular
/// accelerations, actuators are `[canard, right elevon, left elevon, rudder]`.
pub const ADMIRE_A: [[f64; 5]; 5] = [
    [-0.5432, 0.0137, 0.0, 0.9778, 0.0],
    [0.0, -0.1179, 0.2215, 0.0, -0.9661],
    [0.0, -10.5123, -0.9967, 0.0, 0.6176],
    [2.6221, -0.0030, 0.0, -0.5057, 0.0],
    [0.0, 0.7075, -0.0939, 0.0, -0.2127],
];

pub const ADMIRE_B: [[f64; 4]; 3] = [
    [0.0, -4.2423, 4.2423, 1.4871],
    [1.6532, -1.2735, -1.2735, 0.0024],
    [0.0, -0.2805, 0.2805, -0.8823],
];

pub fn admire_model() -> (PlantModel, ActuatorLimits) {
    let a = DMatrix::from_fn(5, 5, |i, j| ADMIRE_A[i][j]);
    let b = DMatrix::from_fn(3, 4, |i, j| ADMIRE_B[i][j]);
    let b_v = DMatrix::from_fn(5, 3, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
    let model = PlantModel::new(a, b_v, b).expect("ADMIRE constants are valid");
    let limits = ActuatorLimits::new(
        DVector::from_vec(vec![-55.0 * DEG, -30.0 * DEG, -30.0 * DEG, -30.0 * DEG]),
        DVector::from_vec(vec![25.0 * DEG, 30.0 * DEG, 30.0 * DEG, 30.0 * DEG]),
        DVector::from_element(4, -40.0 * DEG),
        DVector::from_element(4, 40.0 * DEG),
    )
    .expect("ADMIRE limits are valid");
    (model, limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_clamp_survives_cancellation_near_zero() {
        // prev + rate * dt rounds to 3.5e-18 rather than 0 here
        let (_, limits) = admire_model();
        let dt = 0.02480962995641287;
        let prev = -0.01732038915763287;
        let bank = ActuatorBank {
            deflections: DVector::from_element(4, prev),
        };
        let (_, u) =
            apply_actuator_limits(&bank, &DVector::from_element(4, 2.9), dt, &limits, true)
                .unwrap();
        for j in 0..4 {
            assert!((u[j] - prev) / dt <= limits.rate_max[j]);
            assert!(u[j].abs() < 1e-15);
        }
    }

    #[test]
    fn admire_entries() {
        let (model, limits) = admire_model();
        assert_eq!(model.b()[(1, 0)], 1.6532);
        assert_eq!(model.a()[(2, 1)], -10.5123);
        assert_eq!(numerical_rank(model.b()), 3);
        assert_eq!(limits.u_min[0], -55.0 * DEG);
        let x = DVector::from_fn(5, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let dx = plant_derivatives(
            &x,
            &DVector::zeros(4),
            &DVector::from_element(4, 1.0),
            &model,
        )
        .unwrap();
        assert_eq!(dx.as_slice(), &[-0.5432, 0.0, 0.0, 2.6221, 0.0]);
    }

    #[test]
    fn achieved_virtual_column() {
        let (model, _) = admire_model();
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let v = achieved_virtual(&u, &DVector::from_element(4, 1.0), &model).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 1.6532, 0.0]);
        let half = achieved_virtual(&u, &DVector::from_element(4, 0.5), &model).unwrap();
        assert_eq!(half * 2.0, v);
    }

    #[test]
    fn factorization_identity() {
        let (model, _) = admire_model();
        let u = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3]);
        let x = DVector::from_vec(vec![0.01, 0.02, -0.1, 0.2, 0.0]);
        let ones = DVector::from_element(4, 1.0);
        let dx = plant_derivatives(&x, &u, &ones, &model).unwrap();
        let direct = model.a() * &x + model.b_u() * &u;
        assert!((dx - direct).norm() < 1e-15);
    }

    #[test]
    fn rejects_rank_deficient_b() {
        let a = DMatrix::identity(3, 3);
        let b_v = DMatrix::identity(3, 2);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(PlantModel::new(a, b_v, b).is_err());
    }

    #[test]
    fn schedule_semantics() {
        let s = EffectivenessSchedule::step_fault(4, 6.0, &DVector::from_element(4, 0.7)).unwrap();
        assert_eq!(lambda_at(0.0, &s).unwrap(), DVector::from_element(4, 1.0));
        assert_eq!(lambda_at(5.999, &s).unwrap(), DVector::from_element(4, 1.0));
        assert_eq!(lambda_at(6.0, &s).unwrap(), DVector::from_element(4, 0.7));
        assert!(lambda_at(-0.1, &s).is_err());
        assert!(EffectivenessSchedule::new(vec![(1.0, DVector::from_element(2, 1.0))]).is_err());
        assert!(EffectivenessSchedule::step_fault(2, 3.0, &DVector::from_element(2, 0.0)).is_err());
    }

    #[test]
    fn one_step_rate_clamp() {
        let (_, limits) = admire_model();
        let bank = ActuatorBank::at_rest(4);
        let cmd = DVector::from_element(4, 1.0);
        let (_, u) = apply_actuator_limits(&bank, &cmd, 0.001, &limits, true).unwrap();
        let step = 40.0 * DEG * 0.001;
        assert!((u[0] - step).abs() <= 1e-18);
        assert!(u[0] / 0.001 <= 40.0 * DEG);

        // canard reachable by rate: magnitude limit wins
        let bank = ActuatorBank {
            deflections: DVector::from_vec(vec![-55.0 * DEG + 1e-5, 0.0, 0.0, 0.0]),
        };
        let cmd = DVector::from_vec(vec![-2.0, 0.0, 0.0, 0.0]);
        let (_, u) = apply_actuator_limits(&bank, &cmd, 0.001, &limits, true).unwrap();
        assert_eq!(u[0], -55.0 * DEG);

        let (_, u) =
            apply_actuator_limits(&ActuatorBank::at_rest(4), &cmd, 0.001, &limits, false).unwrap();
        assert_eq!(u[0], -55.0 * DEG);
    }

    #[test]
    fn reachable_command_passes_through() {
        let (_, limits) = admire_model();
        let bank = ActuatorBank::at_rest(4);
        let cmd = DVector::from_vec(vec![1e-4, -1e-4, 2e-4, 0.0]);
        let (next, u) = apply_actuator_limits(&bank, &cmd, 0.01, &limits, true).unwrap();
        assert_eq!(u, cmd);
        assert_eq!(next.deflections, cmd);
    }

    proptest! {
        #[test]
        fn rate_and_magnitude_soundness(
            cmds in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..60),
            dt in 1e-4f64..0.05,
        ) {
            let (_, limits) = admire_model();
            let mut bank = ActuatorBank::at_rest(4);
            for c in cmds {
                let prev = bank.deflections.clone();
                let (next, u) = apply_actuator_limits(&bank, &DVector::from_vec(c), dt, &limits, true).unwrap();
                prop_assert!(limits.contains(&u));
                for j in 0..4 {
                    let q = (u[j] - prev[j]) / dt;
                    prop_assert!(q <= limits.rate_max[j] && q >= limits.rate_min[j]);
                }
                bank = next;
            }
        }

        #[test]
        fn magnitude_clamp_idempotent(c in prop::collection::vec(-3.0f64..3.0, 4)) {
            let (_, limits) = admire_model();
            let bank = ActuatorBank::at_rest(4);
            let cmd = DVector::from_vec(c);
            let (_, once) = apply_actuator_limits(&bank, &cmd, 1.0, &limits, false).unwrap();
            let (_, twice) = apply_actuator_limits(&bank, &once, 1.0, &limits, false).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
