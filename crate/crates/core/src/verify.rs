//! Sampled, seeded checks of the projection operators' properties.
//!
//! Each check reduces a large randomized sample to its worst case and
//! reports that witness. Sampling is split into fixed-size chunks, each with
//! its own ChaCha stream `(seed, chunk)`, so results do not depend on the
//! execution strategy.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::{map_indices, Execution};
use crate::projection::{
    proj_conventional, proj_modified, BoundSpec, ProjectionBounds, ProjectionKind,
};

const CHUNK: usize = 4096;

pub const CHECK_NAMES: [&str; 5] = ["lemma2", "lemma6", "invariance", "continuity", "lipschitz"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// `[lower + tol, upper - tol]`
    Inner,
    /// `[lower, upper]`
    #[default]
    FullFeasible,
    /// Only the two tolerance bands.
    BoundaryBand,
}

impl Region {
    fn sample(self, rng: &mut ChaCha8Rng, b: &BoundSpec) -> f64 {
        match self {
            Region::Inner => rng.gen_range(b.inner_lower()..=b.inner_upper()),
            Region::FullFeasible => rng.gen_range(b.lower()..=b.upper()),
            Region::BoundaryBand => {
                if rng.gen_bool(0.5) {
                    rng.gen_range(b.inner_upper()..=b.upper())
                } else {
                    rng.gen_range(b.lower()..=b.inner_lower())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub bounds: ProjectionBounds,
    pub sample_count: usize,
    pub seed: u64,
    /// Region the adaptive parameter is drawn from.
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub seed: u64,
    pub lemma_samples: usize,
    pub region: Region,
    pub invariance_signals: usize,
    pub invariance_duration: f64,
    pub invariance_dt: f64,
    /// Hold time of the piecewise-constant regressor signals.
    pub invariance_hold: f64,
    pub continuity_points: usize,
    pub approach_distance: f64,
    pub lipschitz_pairs: usize,
    pub lipschitz_scales: [f64; 2],
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            lemma_samples: 100_000,
            region: Region::FullFeasible,
            invariance_signals: 100,
            invariance_duration: 10.0,
            invariance_dt: 1e-3,
            invariance_hold: 0.1,
            continuity_points: 100,
            approach_distance: 1e-8,
            lipschitz_pairs: 1_000_000,
            lipschitz_scales: [1e-3, 1e-6],
        }
    }
}

/// Outcome of one check: the worst sampled value against its threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub threshold: f64,
    pub samples: usize,
    pub witness: String,
}

impl CheckReport {
    /// Positive when the check passes with room to spare.
    pub fn margin(&self) -> f64 {
        self.threshold - self.worst
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {} worst={:e} threshold={:e} margin={:e} samples={} witness={}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst,
            self.threshold,
            self.margin(),
            self.samples,
            self.witness
        )
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Largest `f(rng, i)` over `0..n`; ties keep the lowest index.
fn worst_case<W, F>(exec: Execution, n: usize, seed: u64, f: F) -> Option<(f64, usize, W)>
where
    W: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> (f64, W) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let per_chunk = map_indices(exec, chunks, |c| {
        let mut rng = rng_for(seed, c as u64);
        let mut best: Option<(f64, usize, W)> = None;
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let (v, w) = f(&mut rng, i);
            if best
                .as_ref()
                .is_none_or(|b| v > b.0 || (v.is_nan() && !b.0.is_nan()))
            {
                best = Some((v, i, w));
            }
        }
        best
    });
    let mut best: Option<(f64, usize, W)> = None;
    for cand in per_chunk.into_iter().flatten() {
        if best
            .as_ref()
            .is_none_or(|b| cand.0 > b.0 || (cand.0.is_nan() && !b.0.is_nan()))
        {
            best = Some(cand);
        }
    }
    best
}

fn cells(bounds: &ProjectionBounds) -> usize {
    bounds.rows() * bounds.cols()
}

fn cell(bounds: &ProjectionBounds, k: usize) -> (usize, usize, &BoundSpec, &BoundSpec) {
    let (i, j) = (k / bounds.cols(), k % bounds.cols());
    (i, j, bounds.theta(i, j), bounds.regressor(i, j))
}

/// Samples `(theta*, theta, Y)` on the whole grid and returns the trace
/// `tr((theta - theta*)^T (-Y + Proj(theta, Y)))`.
fn trace_sample(rng: &mut ChaCha8Rng, spec: &SampleSpec, kind: ProjectionKind) -> (f64, String) {
    let b = &spec.bounds;
    let mut trace = 0.0;
    let mut worst_term = (f64::NEG_INFINITY, 0, 0.0, 0.0, 0.0);
    for k in 0..cells(b) {
        let (_, _, ts, ys) = cell(b, k);
        let star = Region::Inner.sample(rng, ts);
        let theta = spec.region.sample(rng, ts);
        let y = match kind {
            // the conventional operator places no restriction on Y
            ProjectionKind::Conventional => {
                let a = 2.0 * ys.abs_max();
                rng.gen_range(-a..=a)
            }
            ProjectionKind::Modified => rng.gen_range(ys.lower()..=ys.upper()),
        };
        let p = match kind {
            ProjectionKind::Conventional => proj_conventional(theta, y, ts),
            ProjectionKind::Modified => proj_modified(theta, y, ts, ys),
        };
        let term = (theta - star) * (p - y);
        trace += term;
        if term > worst_term.0 {
            worst_term = (term, k, theta, star, y);
        }
    }
    let (_, k, theta, star, y) = worst_term;
    (
        trace,
        format!("cell={} theta={theta:e} theta*={star:e} y={y:e}", k),
    )
}

fn lemma_report(
    name: &str,
    spec: &SampleSpec,
    exec: Execution,
    kind: ProjectionKind,
    threshold: f64,
) -> CheckReport {
    let found = worst_case(exec, spec.sample_count, spec.seed, |rng, _| {
        trace_sample(rng, spec, kind)
    });
    let (worst, idx, witness) = found.unwrap_or((f64::NEG_INFINITY, 0, String::new()));
    CheckReport {
        name: name.into(),
        passed: worst <= threshold,
        worst,
        threshold,
        samples: spec.sample_count,
        witness: format!("sample={idx} {witness}"),
    }
}

/// Trace inequality for the conventional operator: the trace is nonpositive
/// up to 1e-12.
pub fn check_lemma2(spec: &SampleSpec, exec: Execution) -> CheckReport {
    lemma_report("lemma2", spec, exec, ProjectionKind::Conventional, 1e-12)
}

/// Trace inequality for the modified operator: the trace is bounded by
/// `|theta~_max|_F |Y_MAX|_F` up to 1e-12.
pub fn check_lemma6(spec: &SampleSpec, exec: Execution) -> CheckReport {
    let bound = spec.bounds.theta_error_max().norm() * spec.bounds.regressor_abs_max().norm();
    lemma_report(
        "lemma6",
        spec,
        exec,
        ProjectionKind::Modified,
        bound + 1e-12,
    )
}

/// Bounds whose regressor range lets a full-scale regressor sweep the whole
/// parameter interval in one second, so that invariance runs reach the
/// barriers.
pub fn stress_bounds(bounds: &ProjectionBounds) -> ProjectionBounds {
    let theta = bounds.theta_grid().to_vec();
    let regressor = theta
        .iter()
        .map(|t| {
            let span = t.upper() - t.lower();
            BoundSpec::new(-span, span, 0.1 * span).expect("scaled bounds are valid")
        })
        .collect();
    ProjectionBounds::new(bounds.rows(), bounds.cols(), theta, regressor).expect("same shape")
}

struct InvarianceWorst {
    f: f64,
    rate_excess: f64,
    where_: String,
}

fn integrate_scalar(
    kind: ProjectionKind,
    theta0: f64,
    ys: &[f64],
    steps_per_hold: usize,
    dt: f64,
    ts: &BoundSpec,
    yspec: &BoundSpec,
) -> (f64, f64, usize) {
    let rhs = |th: f64, y: f64| match kind {
        ProjectionKind::Conventional => proj_conventional(th, y, ts),
        ProjectionKind::Modified => proj_modified(th, y, ts, yspec),
    };
    let y_cap = yspec.abs_max();
    let mut th = theta0;
    let mut worst_f = ts.barrier(th);
    let mut worst_rate = f64::NEG_INFINITY;
    let mut at = 0;
    let mut step = 0;
    for &y in ys {
        for _ in 0..steps_per_hold {
            let k1 = rhs(th, y);
            let k2 = rhs(th + 0.5 * dt * k1, y);
            let k3 = rhs(th + 0.5 * dt * k2, y);
            let k4 = rhs(th + dt * k3, y);
            for k in [k1, k2, k3, k4] {
                worst_rate = worst_rate.max(k.abs() - y_cap);
            }
            th += dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
            step += 1;
            let f = ts.barrier(th);
            if f > worst_f {
                worst_f = f;
                at = step;
            }
        }
    }
    (worst_f, worst_rate, at)
}

/// Integrates `theta' = Proj(theta, Y(t))` for random piecewise-constant
/// `Y` with samples in the regressor bounds, for both operators.
pub fn check_invariance(
    spec: &SampleSpec,
    dt: f64,
    duration: f64,
    hold: f64,
    exec: Execution,
) -> CheckReport {
    let b = &spec.bounds;
    let steps_per_hold = ((hold / dt).round() as usize).max(1);
    let holds = ((duration / (steps_per_hold as f64 * dt)).round() as usize).max(1);
    let results = map_indices(exec, spec.sample_count, |s| {
        let mut rng = rng_for(spec.seed, s as u64);
        let mut worst = InvarianceWorst {
            f: f64::NEG_INFINITY,
            rate_excess: f64::NEG_INFINITY,
            where_: String::new(),
        };
        for k in 0..cells(b) {
            let (_, _, ts, ys) = cell(b, k);
            let theta0 = spec.region.sample(&mut rng, ts);
            let drift = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let signal: Vec<f64> = (0..holds)
                .map(|_| {
                    // biased toward one side so the barriers are reached
                    if drift > 0.0 {
                        rng.gen_range(0.3 * ys.lower()..=ys.upper())
                    } else {
                        rng.gen_range(ys.lower()..=0.3 * ys.upper())
                    }
                })
                .collect();
            for kind in [ProjectionKind::Conventional, ProjectionKind::Modified] {
                let (f, rate, at) =
                    integrate_scalar(kind, theta0, &signal, steps_per_hold, dt, ts, ys);
                if f > worst.f {
                    worst.f = f;
                    worst.where_ = format!("signal={s} cell={k} {kind:?} t={:e}", at as f64 * dt);
                }
                if kind == ProjectionKind::Modified {
                    worst.rate_excess = worst.rate_excess.max(rate);
                }
            }
        }
        worst
    });
    let mut worst_f = f64::NEG_INFINITY;
    let mut worst_rate = f64::NEG_INFINITY;
    let mut witness = String::new();
    for w in results {
        if w.f > worst_f {
            worst_f = w.f;
            witness = w.where_;
        }
        worst_rate = worst_rate.max(w.rate_excess);
    }
    let threshold = 1.0 + 1e-3;
    CheckReport {
        name: "invariance".into(),
        passed: worst_f <= threshold && worst_rate <= 0.0,
        worst: worst_f,
        threshold,
        samples: spec.sample_count,
        witness: format!("{witness} rate_excess={worst_rate:e}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPair {
    S0S1,
    S0S2,
    S1S3,
    S2S3,
}

impl BoundaryPair {
    pub const ALL: [BoundaryPair; 4] = [Self::S0S1, Self::S0S2, Self::S1S3, Self::S2S3];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Theta,
    Regressor,
}

/// A point on a boundary between two subsets of the feasible set plus the
/// axis along which the two subsets are approached. `upper` selects the
/// upper or the mirrored lower barrier; `frac` in (0, 1) runs along the
/// boundary.
fn boundary_point(
    pair: BoundaryPair,
    upper: bool,
    frac: f64,
    ts: &BoundSpec,
    ys: &BoundSpec,
) -> (f64, f64, Axis) {
    let (theta_edge, theta_band, y_edge, y_in, y_out) = if upper {
        (
            ts.inner_upper(),
            ts.inner_upper() + frac * ts.tolerance(),
            ys.inner_upper(),
            frac * ys.inner_upper(),
            ys.inner_upper() + frac * ys.tolerance(),
        )
    } else {
        (
            ts.inner_lower(),
            ts.inner_lower() - frac * ts.tolerance(),
            ys.inner_lower(),
            frac * ys.inner_lower(),
            ys.inner_lower() - frac * ys.tolerance(),
        )
    };
    let theta_inner = ts.inner_lower() + frac * (ts.inner_upper() - ts.inner_lower());
    match pair {
        // parameter barrier switches on while Y pushes outward
        BoundaryPair::S0S1 if frac < 0.5 => (theta_edge, y_in * 2.0 * (1.0 - 1e-3), Axis::Theta),
        // Y changes sign inside the parameter band
        BoundaryPair::S0S1 => (
            if upper {
                ts.inner_upper() + (2.0 * frac - 1.0) * ts.tolerance()
            } else {
                ts.inner_lower() - (2.0 * frac - 1.0) * ts.tolerance()
            },
            0.0,
            Axis::Regressor,
        ),
        BoundaryPair::S0S2 => (theta_inner, y_edge, Axis::Regressor),
        BoundaryPair::S1S3 => (theta_band, y_edge, Axis::Regressor),
        BoundaryPair::S2S3 => (theta_edge, y_out, Axis::Theta),
    }
}

/// Two-sided values of the modified operator at distance `d` from a
/// boundary point.
pub fn two_sided(
    pair: BoundaryPair,
    upper: bool,
    frac: f64,
    d: f64,
    ts: &BoundSpec,
    ys: &BoundSpec,
) -> (f64, f64) {
    let (theta, y, axis) = boundary_point(pair, upper, frac, ts, ys);
    match axis {
        Axis::Theta => (
            proj_modified(theta - d, y, ts, ys),
            proj_modified(theta + d, y, ts, ys),
        ),
        Axis::Regressor => (
            proj_modified(theta, y - d, ts, ys),
            proj_modified(theta, y + d, ts, ys),
        ),
    }
}

/// Compares the modified operator on both sides of every boundary between
/// adjacent subsets of the feasible set.
pub fn probe_continuity(
    bounds: &ProjectionBounds,
    points: usize,
    approach_distance: f64,
) -> CheckReport {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = String::new();
    let mut total = 0;
    for pair in BoundaryPair::ALL {
        for k in 0..points {
            let upper = k % 2 == 0;
            let frac = (k as f64 + 0.5) / points as f64;
            let (_, _, ts, ys) = cell(bounds, k % cells(bounds));
            let (a, b) = two_sided(pair, upper, frac, approach_distance, ts, ys);
            let diff = (a - b).abs();
            total += 1;
            if diff > worst {
                worst = diff;
                witness = format!("pair={pair:?} point={k} values={a:e}/{b:e}");
            }
        }
    }
    let threshold = 1e-6;
    CheckReport {
        name: "continuity".into(),
        passed: worst <= threshold,
        worst,
        threshold,
        samples: total,
        witness,
    }
}

/// Largest difference quotient of the modified operator over random pairs
/// at the given scale, with displacements measured relative to each axis'
/// span.
pub fn lipschitz_ratio(spec: &SampleSpec, pair_scale: f64, exec: Execution) -> (f64, String) {
    let b = &spec.bounds;
    let n_cells = cells(b);
    let found = worst_case(exec, spec.sample_count, spec.seed, |rng, _| {
        let k = rng.gen_range(0..n_cells);
        let (_, _, ts, ys) = cell(b, k);
        let t_span = ts.upper() - ts.lower();
        let y_span = ys.upper() - ys.lower();
        let (dt_, dy) = {
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (
                pair_scale * t_span * phi.cos(),
                pair_scale * y_span * phi.sin(),
            )
        };
        let t0 = rng.gen_range(ts.lower() + dt_.abs()..=ts.upper() - dt_.abs());
        let y0 = rng.gen_range(ys.lower() + dy.abs()..=ys.upper() - dy.abs());
        let (t1, y1) = (t0 + dt_, y0 + dy);
        let dist = (t1 - t0).hypot(y1 - y0);
        if dist == 0.0 {
            return (0.0, String::new());
        }
        let ratio = (proj_modified(t1, y1, ts, ys) - proj_modified(t0, y0, ts, ys)).abs() / dist;
        (ratio, format!("cell={k} theta={t0:e} y={y0:e}"))
    });
    found.map_or((f64::NAN, String::new()), |(r, i, w)| {
        (r, format!("pair={i} {w}"))
    })
}

pub fn estimate_lipschitz(spec: &SampleSpec, scales: [f64; 2], exec: Execution) -> CheckReport {
    let (coarse, wc) = lipschitz_ratio(spec, scales[0], exec);
    let (fine, wf) = lipschitz_ratio(spec, scales[1], exec);
    let spread = coarse.max(fine) / coarse.min(fine);
    let threshold = 2.0;
    CheckReport {
        name: "lipschitz".into(),
        passed: coarse.is_finite() && fine.is_finite() && spread <= threshold,
        worst: spread,
        threshold,
        samples: 2 * spec.sample_count,
        witness: format!(
            "max_ratio@{:e}={coarse:e} ({wc}) max_ratio@{:e}={fine:e} ({wf})",
            scales[0], scales[1]
        ),
    }
}

/// Runs the named checks (all when `only` is empty) in canonical order.
pub fn run_checks(
    bounds: &ProjectionBounds,
    settings: &VerifySettings,
    only: &[String],
    exec: Execution,
) -> Vec<CheckReport> {
    let wanted = |name: &str| only.is_empty() || only.iter().any(|o| o == name);
    let spec = |count: usize, salt: u64| SampleSpec {
        bounds: bounds.clone(),
        sample_count: count,
        seed: settings.seed.wrapping_add(salt),
        region: settings.region,
    };
    let mut out = Vec::new();
    if wanted("lemma2") {
        out.push(check_lemma2(&spec(settings.lemma_samples, 1), exec));
    }
    if wanted("lemma6") {
        out.push(check_lemma6(&spec(settings.lemma_samples, 2), exec));
    }
    if wanted("invariance") {
        let mut s = spec(settings.invariance_signals, 3);
        s.bounds = stress_bounds(bounds);
        out.push(check_invariance(
            &s,
            settings.invariance_dt,
            settings.invariance_duration,
            settings.invariance_hold,
            exec,
        ));
    }
    if wanted("continuity") {
        out.push(probe_continuity(
            bounds,
            settings.continuity_points,
            settings.approach_distance,
        ));
    }
    if wanted("lipschitz") {
        out.push(estimate_lipschitz(
            &spec(settings.lipschitz_pairs, 5),
            settings.lipschitz_scales,
            exec,
        ));
    }
    out
}

pub fn render(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bounds() -> ProjectionBounds {
        ProjectionBounds::uniform(
            2,
            3,
            BoundSpec::new(-1.0, 1.5, 0.2).unwrap(),
            BoundSpec::new(-0.5, 0.4, 0.05).unwrap(),
        )
    }

    fn spec(n: usize) -> SampleSpec {
        SampleSpec {
            bounds: bounds(),
            sample_count: n,
            seed: 9,
            region: Region::FullFeasible,
        }
    }

    #[test]
    fn lemma_checks_pass_on_small_grid() {
        assert!(check_lemma2(&spec(5000), Execution::Sequential).passed);
        assert!(check_lemma6(&spec(5000), Execution::Sequential).passed);
        let mut band = spec(5000);
        band.region = Region::BoundaryBand;
        assert!(check_lemma2(&band, Execution::Sequential).passed);
        assert!(check_lemma6(&band, Execution::Sequential).passed);
    }

    #[test]
    fn trace_zero_at_ideal_and_zero_regressor() {
        let ts = BoundSpec::new(-1.0, 1.0, 0.1).unwrap();
        let ys = BoundSpec::new(-1.0, 1.0, 0.1).unwrap();
        for theta in [-0.95, 0.0, 0.5] {
            assert_eq!(
                (theta - theta) * (proj_modified(theta, 0.3, &ts, &ys) - 0.3),
                0.0
            );
            assert_eq!(proj_conventional(theta, 0.0, &ts) - 0.0, 0.0);
        }
    }

    #[test]
    fn barrier_outward_trace_within_bound() {
        // all theta at the upper barrier, Y pushing outward
        let b = bounds();
        let bound = b.theta_error_max().norm() * b.regressor_abs_max().norm();
        let mut lhs = 0.0;
        for k in 0..6 {
            let (_, _, ts, ys) = cell(&b, k);
            let star = ts.inner_lower();
            let y = ys.upper();
            lhs += (ts.upper() - star) * (proj_modified(ts.upper(), y, ts, ys) - y);
        }
        assert!(lhs <= bound);
    }

    #[test]
    fn parallel_equals_sequential() {
        let s = spec(3 * CHUNK + 17);
        assert_eq!(
            check_lemma6(&s, Execution::Sequential),
            check_lemma6(&s, Execution::Parallel)
        );
        let a = lipschitz_ratio(&s, 1e-3, Execution::Sequential);
        let b = lipschitz_ratio(&s, 1e-3, Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn continuity_boundary_values() {
        let ts = BoundSpec::new(-1.0, 1.0, 0.25).unwrap();
        let ys = BoundSpec::new(-2.0, 2.0, 0.5).unwrap();
        let (a, b) = two_sided(BoundaryPair::S0S2, true, 0.3, 1e-8, &ts, &ys);
        assert_abs_diff_eq!(a, ys.inner_upper(), epsilon = 1e-6);
        assert_abs_diff_eq!(b, ys.inner_upper(), epsilon = 1e-6);

        let (theta, _, _) = boundary_point(BoundaryPair::S1S3, true, 0.4, &ts, &ys);
        let want = ys.inner_upper() * (1.0 - ts.barrier(theta).min(1.0));
        let (a, b) = two_sided(BoundaryPair::S1S3, true, 0.4, 1e-8, &ts, &ys);
        assert_abs_diff_eq!(a, want, epsilon = 1e-6);
        assert_abs_diff_eq!(b, want, epsilon = 1e-6);

        assert!(probe_continuity(&bounds(), 100, 1e-8).passed);
    }

    #[test]
    fn continuity_probe_hits_both_subsets() {
        use crate::projection::{modified_branch, ModifiedBranch as B};
        let ts = BoundSpec::new(-1.0, 1.0, 0.25).unwrap();
        let ys = BoundSpec::new(-2.0, 2.0, 0.5).unwrap();
        let d = 1e-8;
        let sides = |pair, upper, frac| {
            let (t, y, axis) = boundary_point(pair, upper, frac, &ts, &ys);
            let (lo, hi) = match axis {
                Axis::Theta => ((t - d, y), (t + d, y)),
                Axis::Regressor => ((t, y - d), (t, y + d)),
            };
            let mut v = [
                modified_branch(lo.0, lo.1, &ts, &ys),
                modified_branch(hi.0, hi.1, &ts, &ys),
            ];
            v.sort_by_key(|b| *b as u8);
            v
        };
        assert_eq!(
            sides(BoundaryPair::S0S1, true, 0.2),
            [B::Parameter, B::Identity]
        );
        assert_eq!(
            sides(BoundaryPair::S0S1, false, 0.7),
            [B::Parameter, B::Identity]
        );
        assert_eq!(
            sides(BoundaryPair::S0S2, true, 0.5),
            [B::Regressor, B::Identity]
        );
        assert_eq!(
            sides(BoundaryPair::S1S3, false, 0.5),
            [B::Joint, B::Parameter]
        );
        assert_eq!(
            sides(BoundaryPair::S2S3, true, 0.5),
            [B::Joint, B::Regressor]
        );
    }

    #[test]
    fn identity_region_lipschitz_is_one() {
        // tiny pairs deep inside the inner region only see the identity branch
        let ts = BoundSpec::new(-1.0, 1.0, 0.25).unwrap();
        let ys = BoundSpec::new(-2.0, 2.0, 0.5).unwrap();
        let (t0, y0) = (0.1, 0.2);
        let dy = 1e-6;
        let r = (proj_modified(t0, y0 + dy, &ts, &ys) - proj_modified(t0, y0, &ts, &ys)).abs() / dy;
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
        assert_eq!(
            proj_modified(t0 + 1e-6, y0, &ts, &ys),
            proj_modified(t0, y0, &ts, &ys)
        );
    }

    #[test]
    fn invariance_short_run() {
        let mut s = spec(4);
        s.bounds = stress_bounds(&bounds());
        let r = check_invariance(&s, 1e-3, 3.0, 0.1, Execution::Sequential);
        assert!(r.passed, "{r}");
        assert!(r.worst > 0.9, "signals should reach the barrier: {r}");
    }

    #[test]
    fn reports_are_deterministic() {
        let settings = VerifySettings {
            lemma_samples: 2000,
            invariance_signals: 2,
            invariance_duration: 1.0,
            lipschitz_pairs: 5000,
            ..VerifySettings::default()
        };
        let a = render(&run_checks(&bounds(), &settings, &[], Execution::Parallel));
        let b = render(&run_checks(
            &bounds(),
            &settings,
            &[],
            Execution::Sequential,
        ));
        assert_eq!(a, b);
        let only = run_checks(
            &bounds(),
            &settings,
            &["lemma2".to_string()],
            Execution::Sequential,
        );
        assert_eq!(only.len(), 1);
    }
}
