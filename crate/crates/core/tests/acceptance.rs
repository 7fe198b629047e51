//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratebound::allocator::{ideal_theta, lyapunov_residual, solve_lyapunov};
use ratebound::config::Config;
use ratebound::par::Execution;
use ratebound::plant::admire_model;
use ratebound::sim::{metrics, run_scenario, Case, Metrics, Scenario, Trajectory};
use ratebound::verify::{
    check_invariance, check_lemma2, check_lemma6, estimate_lipschitz, probe_continuity, render,
    run_checks, stress_bounds, SampleSpec, VerifySettings,
};

type Criterion = fn(&mut Fixture) -> Outcome;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

struct Fixture {
    config: Config,
    settings: VerifySettings,
    case2: Option<(Scenario, Trajectory, Metrics)>,
    case3: Option<(Scenario, Trajectory, Metrics, Duration)>,
}

impl Fixture {
    fn spec(&self, count: usize, salt: u64) -> SampleSpec {
        SampleSpec {
            bounds: self.config.bounds().expect("default bounds"),
            sample_count: count,
            seed: self.settings.seed.wrapping_add(salt),
            region: self.settings.region,
        }
    }

    fn case3(&mut self) -> &(Scenario, Trajectory, Metrics, Duration) {
        if self.case3.is_none() {
            let s = self.config.scenario(Case::III).expect("case III scenario");
            let (traj, elapsed) = timed(|| run_scenario(&s).expect("case III run"));
            let m = metrics(&traj, &s).expect("metrics");
            self.case3 = Some((s, traj, m, elapsed));
        }
        self.case3.as_ref().unwrap()
    }

    fn case2(&mut self) -> &(Scenario, Trajectory, Metrics) {
        if self.case2.is_none() {
            let s = self.config.scenario(Case::II).expect("case II scenario");
            let traj = run_scenario(&s).expect("case II run");
            let m = metrics(&traj, &s).expect("metrics");
            self.case2 = Some((s, traj, m));
        }
        self.case2.as_ref().unwrap()
    }
}

fn lemma2(fx: &mut Fixture) -> Outcome {
    let spec = fx.spec(100_000, 1);
    let (r, t) = timed(|| check_lemma2(&spec, Execution::default()));
    outcome(
        r.passed && t.as_secs_f64() < 10.0,
        format!("{r} runtime={:.2}s", t.as_secs_f64()),
    )
}

fn lemma6(fx: &mut Fixture) -> Outcome {
    let spec = fx.spec(100_000, 2);
    let (r, t) = timed(|| check_lemma6(&spec, Execution::default()));
    outcome(
        r.passed && t.as_secs_f64() < 10.0,
        format!("{r} runtime={:.2}s", t.as_secs_f64()),
    )
}

fn invariance(fx: &mut Fixture) -> Outcome {
    let mut spec = fx.spec(100, 3);
    spec.bounds = stress_bounds(&spec.bounds);
    let (r, t) = timed(|| check_invariance(&spec, 1e-3, 10.0, 0.1, Execution::default()));
    outcome(
        r.passed && t.as_secs_f64() < 60.0,
        format!("{r} runtime={:.2}s", t.as_secs_f64()),
    )
}

fn continuity(fx: &mut Fixture) -> Outcome {
    let r = probe_continuity(&fx.config.bounds().unwrap(), 100, 1e-8);
    outcome(r.passed && r.samples == 400, r.to_string())
}

fn lipschitz(fx: &mut Fixture) -> Outcome {
    let spec = fx.spec(1_000_000, 5);
    let r = estimate_lipschitz(&spec, [1e-3, 1e-6], Execution::default());
    outcome(r.passed, r.to_string())
}

fn lyapunov(_: &mut Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut all_spd = true;
    for _ in 0..100 {
        let k = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
        // shift past the spectral norm so every eigenvalue has negative real part
        let shift = k.clone().svd(false, false).singular_values.max() + rng.gen_range(0.05..2.0);
        let a = k - DMatrix::identity(3, 3) * shift;
        let l = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
        match solve_lyapunov(&a, &q) {
            Ok(p) => {
                worst = worst.max(lyapunov_residual(&a, &p, &q));
                let symmetric = p == p.transpose();
                let pd = p.clone().symmetric_eigen().eigenvalues.min() > 0.0;
                all_spd &= symmetric && pd;
            }
            Err(_) => all_spd = false,
        }
    }
    outcome(
        worst < 1e-10 && all_spd,
        format!("max residual={worst:e} symmetric_pd={all_spd}"),
    )
}

fn ideal(_: &mut Fixture) -> Outcome {
    let (model, _) = admire_model();
    let mut worst = 0.0f64;
    for level in [1.0, 0.7] {
        let lambda = DVector::from_element(4, level);
        let t = ideal_theta(model.b(), &lambda).unwrap();
        let bl = DMatrix::from_fn(3, 4, |i, j| model.b()[(i, j)] * level);
        worst = worst.max((bl * t.transpose() - DMatrix::<f64>::identity(3, 3)).norm());
    }
    outcome(worst < 1e-10, format!("max residual={worst:e}"))
}

fn admire(_: &mut Fixture) -> Outcome {
    #[rustfmt::skip]
    let a_printed = [
        -0.5432, 0.0137, 0.0, 0.9778, 0.0,
        0.0, -0.1179, 0.2215, 0.0, -0.9661,
        0.0, -10.5123, -0.9967, 0.0, 0.6176,
        2.6221, -0.0030, 0.0, -0.5057, 0.0,
        0.0, 0.7075, -0.0939, 0.0, -0.2127,
    ];
    #[rustfmt::skip]
    let b_printed = [
        0.0, -4.2423, 4.2423, 1.4871,
        1.6532, -1.2735, -1.2735, 0.0024,
        0.0, -0.2805, 0.2805, -0.8823,
    ];
    let (model, _) = admire_model();
    let a_ok = (0..25).all(|k| model.a()[(k / 5, k % 5)].to_bits() == f64::to_bits(a_printed[k]));
    let b_ok = (0..12).all(|k| model.b()[(k / 4, k % 4)].to_bits() == f64::to_bits(b_printed[k]));
    let sv = model.b().clone().svd(false, false).singular_values;
    let rank = sv.iter().filter(|s| **s > 1e-10 * sv.max()).count();
    let b_v = DMatrix::from_fn(5, 3, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
    let factor = (model.b_u() - &b_v * model.b()).amax();
    outcome(
        a_ok && b_ok && rank == 3 && *model.b_v() == b_v && factor == 0.0,
        format!("A exact={a_ok} B exact={b_ok} rank(B)={rank} |B_u - B_v B|max={factor:e}"),
    )
}

fn case3_run(fx: &mut Fixture) -> Outcome {
    let (s, traj, m, elapsed) = fx.case3();
    let rate_ok = traj.samples.windows(2).all(|w| {
        (0..4).all(|j| {
            let q = (w[1].u_applied[j] - w[0].u_applied[j]) / s.dt;
            q <= s.limits.rate_max[j] && q >= s.limits.rate_min[j]
        })
    });
    let tracking_ok = m.segments.len() == s.reference.pulses().len()
        && m.segments.iter().all(|seg| seg.relative < 0.10);
    let f_ok = m.f_max <= 1.0 + 1e-3;
    let fast = elapsed.as_secs_f64() < 60.0;
    let errs: Vec<String> = m
        .segments
        .iter()
        .map(|s| format!("{:.4}", s.relative))
        .collect();
    outcome(
        rate_ok && m.applied_within_limits && f_ok && tracking_ok && fast,
        format!(
            "rates_exact={rate_ok} magnitudes={} f_max={:.6} relative_rms=[{}] runtime={:.2}s",
            m.applied_within_limits,
            m.f_max,
            errs.join(","),
            elapsed.as_secs_f64()
        ),
    )
}

fn case2_vs_3(fx: &mut Fixture) -> Outcome {
    fx.case3();
    fx.case2();
    let (s2, _, m2) = fx.case2.as_ref().unwrap();
    let (s3, _, m3, _) = fx.case3.as_ref().unwrap();
    let osc3 = m3.oscillation_total;
    // identical configuration apart from the projection operator
    let same = s2.allocator.bounds == s3.allocator.bounds
        && s2.gains == s3.gains
        && s2.enable_rate_limit == s3.enable_rate_limit
        && s2.allocator.gamma == s3.allocator.gamma;
    outcome(
        same && m2.oscillation_total > osc3,
        format!(
            "oscillation II={:.6} III={:.6} same_config={same}",
            m2.oscillation_total, osc3
        ),
    )
}

fn e2_membership(fx: &mut Fixture) -> Outcome {
    let m = &fx.case3().2;
    outcome(
        m.e2_residual <= 0.0,
        format!(
            "max residual over final second={:e} (bound form {:e})",
            m.e2_residual, m.e2_residual_bound_form
        ),
    )
}

fn determinism(fx: &mut Fixture) -> Outcome {
    let csv = |traj: &Trajectory| {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        buf
    };
    let (s, first, m, _) = fx.case3();
    let second = run_scenario(s).unwrap();
    let m2 = metrics(&second, s).unwrap();
    let run_same = csv(first) == csv(&second) && m.to_report() == m2.to_report();

    let settings = VerifySettings {
        lemma_samples: 20_000,
        invariance_signals: 8,
        lipschitz_pairs: 100_000,
        ..fx.settings.clone()
    };
    let bounds = fx.config.bounds().unwrap();
    let a = render(&run_checks(&bounds, &settings, &[], Execution::Parallel));
    let b = render(&run_checks(&bounds, &settings, &[], Execution::Parallel));
    let c = render(&run_checks(&bounds, &settings, &[], Execution::Sequential));
    let verify_same = a == b && a == c;
    outcome(
        run_same && verify_same,
        format!("run identical={run_same} verify identical={verify_same}"),
    )
}

fn main() {
    // accept and ignore libtest flags passed by `cargo test`
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, Criterion); 12] = [
        ("01 lemma2 trace inequality", lemma2),
        ("02 lemma6 trace bound", lemma6),
        ("03 invariance", invariance),
        ("04 continuity probe", continuity),
        ("05 lipschitz probe", lipschitz),
        ("06 lyapunov solver", lyapunov),
        ("07 ideal parameter", ideal),
        ("08 admire constants", admire),
        ("09 case III limits and tracking", case3_run),
        ("10 case II vs III oscillation", case2_vs_3),
        ("11 E2 set membership", e2_membership),
        ("12 determinism", determinism),
    ];
    let mut fx = Fixture {
        config: Config::default(),
        settings: VerifySettings::default(),
        case2: None,
        case3: None,
    };
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let o = check(&mut fx);
        println!(
            "[{}] {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
