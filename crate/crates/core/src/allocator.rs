//! Adaptive control allocation: virtual dynamics, reference model and the
//! projected adaptive law for the allocation matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, Error, Result};
use crate::plant::{numerical_rank, ActuatorLimits};
use crate::projection::{
    proj_conventional, proj_modified, BoundSpec, ProjectionBounds, ProjectionKind,
};

/// Solves `A^T P + P A = -Q` by vectorizing into an `r^2 x r^2` system.
///
/// Fails unless the result is symmetric positive definite, which for a
/// positive definite `Q` happens exactly when `A` is Hurwitz.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = a.nrows();
    check_dims("lyapunov A", (r, r), a.shape())?;
    check_dims("lyapunov Q", (r, r), q.shape())?;
    if r == 0 {
        return Err(Error::Solver("empty system".into()));
    }
    let eye = DMatrix::<f64>::identity(r, r);
    let at = a.transpose();
    // column-major vec: vec(A^T P) = (I (x) A^T) vec(P), vec(P A) = (A^T (x) I) vec(P)
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("vectorized system is singular (A not Hurwitz)".into()))?;
    let p = DMatrix::from_column_slice(r, r, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite solution".into()));
    }
    if p.clone().cholesky().is_none() {
        return Err(Error::Solver(
            "solution is not positive definite (A not Hurwitz)".into(),
        ));
    }
    Ok(p)
}

pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}

/// `Y = -v_s (e^T P B)`, an r x m matrix of rank at most one.
pub fn regressor(
    v_s: &DVector<f64>,
    e: &DVector<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r = b.nrows();
    check_dims("regressor v_s", (r, 1), (v_s.len(), 1))?;
    check_dims("regressor e", (r, 1), (e.len(), 1))?;
    check_dims("regressor P", (r, r), p.shape())?;
    let row = e.transpose() * p * b;
    Ok(-(v_s * row))
}

/// `u = theta^T v_s`.
pub fn allocation_command(theta: &DMatrix<f64>, v_s: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims("allocation v_s", (theta.nrows(), 1), (v_s.len(), 1))?;
    Ok(theta.tr_mul(v_s))
}

/// Right inverse `theta*` with `B diag(lambda) theta*^T = I`.
pub fn ideal_theta(b: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (r, m) = b.shape();
    check_dims("effectiveness", (m, 1), (lambda.len(), 1))?;
    let bl = DMatrix::from_fn(r, m, |i, j| b[(i, j)] * lambda[j]);
    let rank = numerical_rank(&bl);
    if rank < r {
        return Err(Error::RankDeficient { rank, required: r });
    }
    let gram = &bl * bl.transpose();
    let chol = gram
        .cholesky()
        .ok_or(Error::RankDeficient { rank, required: r })?;
    Ok(chol.solve(&bl))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocatorState {
    pub xi: DVector<f64>,
    pub xi_m: DVector<f64>,
    pub theta: DMatrix<f64>,
}

impl AllocatorState {
    pub fn new(theta: DMatrix<f64>) -> Self {
        let r = theta.nrows();
        Self {
            xi: DVector::zeros(r),
            xi_m: DVector::zeros(r),
            theta,
        }
    }

    pub fn error(&self) -> DVector<f64> {
        &self.xi - &self.xi_m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocatorConfig {
    pub a_m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Diagonal of the adaptation gain.
    pub gamma: DVector<f64>,
    pub bounds: ProjectionBounds,
    pub theta_init: DMatrix<f64>,
    pub kind: ProjectionKind,
    /// Nominal control matrix used by the regressor.
    pub b: DMatrix<f64>,
}

impl AllocatorConfig {
    pub fn r(&self) -> usize {
        self.b.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, m) = self.b.shape();
        check_dims("reference model", (r, r), self.a_m.shape())?;
        check_dims("weighting Q", (r, r), self.q.shape())?;
        check_dims("adaptation gain", (r, 1), (self.gamma.len(), 1))?;
        check_dims("projection bounds", (r, m), self.bounds.shape())?;
        check_dims("initial theta", (r, m), self.theta_init.shape())?;
        if self.gamma.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid("adaptation gains must be positive"));
        }
        if (&self.q - self.q.transpose()).amax() > 1e-12 * self.q.amax().max(1.0) {
            return Err(Error::invalid("Q must be symmetric"));
        }
        if self.q.clone().cholesky().is_none() {
            return Err(Error::invalid("Q must be positive definite"));
        }
        let f0 = self.bounds.max_theta_barrier(&self.theta_init);
        if !(f0 <= 1.0) {
            return Err(Error::invalid(format!(
                "initial theta lies outside the projection bounds (max barrier {f0})"
            )));
        }
        Ok(())
    }
}

/// Validated configuration plus the quantities derived from it once.
#[derive(Clone, Debug)]
pub struct Allocator {
    config: AllocatorConfig,
    p: DMatrix<f64>,
    pb: DMatrix<f64>,
    q_min_eig: f64,
}

impl Allocator {
    pub fn new(config: AllocatorConfig) -> Result<Self> {
        config.validate()?;
        let p = solve_lyapunov(&config.a_m, &config.q)?;
        let pb = &p * &config.b;
        let q_min_eig = config.q.clone().symmetric_eigen().eigenvalues.min();
        Ok(Self {
            config,
            p,
            pb,
            q_min_eig,
        })
    }

    pub fn config(&self) -> &AllocatorConfig {
        &self.config
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q_min_eigenvalue(&self) -> f64 {
        self.q_min_eig
    }

    pub fn initial_state(&self) -> AllocatorState {
        AllocatorState::new(self.config.theta_init.clone())
    }

    /// Adaptive-law increment `Gamma Proj(theta, Y)` for a given regressor.
    pub fn theta_rate(&self, theta: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let bounds = &self.config.bounds;
        let kind = self.config.kind;
        DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
            let (t, yy) = (theta[(i, j)], y[(i, j)]);
            let p = match kind {
                ProjectionKind::Conventional => proj_conventional(t, yy, bounds.theta(i, j)),
                ProjectionKind::Modified => {
                    proj_modified(t, yy, bounds.theta(i, j), bounds.regressor(i, j))
                }
            };
            self.config.gamma[i] * p
        })
    }

    pub fn regressor_for(&self, v_s: &DVector<f64>, e: &DVector<f64>) -> DMatrix<f64> {
        -(v_s * (e.transpose() * &self.pb))
    }

    /// Time derivative of the allocator state; dimensions are trusted.
    pub(crate) fn derivatives_unchecked(
        &self,
        state: &AllocatorState,
        v_s: &DVector<f64>,
        achieved: &DVector<f64>,
    ) -> AllocatorState {
        let a_m = &self.config.a_m;
        let e = state.error();
        let y = self.regressor_for(v_s, &e);
        AllocatorState {
            xi: a_m * &state.xi + achieved - v_s,
            xi_m: a_m * &state.xi_m,
            theta: self.theta_rate(&state.theta, &y),
        }
    }
}

/// Time derivative of the allocator state for externally supplied `P`.
pub fn allocator_derivatives(
    state: &AllocatorState,
    v_s: &DVector<f64>,
    achieved_virtual: &DVector<f64>,
    p: &DMatrix<f64>,
    config: &AllocatorConfig,
) -> Result<AllocatorState> {
    let (r, m) = config.b.shape();
    check_dims("xi", (r, 1), (state.xi.len(), 1))?;
    check_dims("xi_m", (r, 1), (state.xi_m.len(), 1))?;
    check_dims("theta", (r, m), state.theta.shape())?;
    check_dims("achieved virtual", (r, 1), (achieved_virtual.len(), 1))?;
    let y = regressor(v_s, &state.error(), p, &config.b)?;
    let alloc = Allocator {
        config: config.clone(),
        p: p.clone(),
        pb: p * &config.b,
        q_min_eig: 0.0,
    };
    Ok(AllocatorState {
        xi: &config.a_m * &state.xi + achieved_virtual - v_s,
        xi_m: &config.a_m * &state.xi_m,
        theta: alloc.theta_rate(&state.theta, &y),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizingMode {
    /// Same magnitude bound for every row of a column.
    Uniform,
    /// Bounds proportional to the nominal pseudo-inverse entries.
    #[default]
    Weighted,
}

/// Inputs of the bound-sizing rule. With `|v_s_i| <= M_i`, `|v_s_i'| <= L_i`
/// the rule keeps `|u_j| <= safety * ulim_j` and
/// `|u_j'| <= safety * rate_j` for `u = theta^T v_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSizing {
    pub mode: SizingMode,
    pub virtual_limit: DVector<f64>,
    pub virtual_rate: DVector<f64>,
    pub gamma: DVector<f64>,
    pub safety: f64,
    pub tolerance_fraction: f64,
    /// Added to every weight so that structurally zero entries can adapt.
    pub floor: f64,
    /// Cap on the per-column scale in weighted mode.
    pub headroom: f64,
}

/// Derives theta and regressor bounds from actuator limits.
pub fn size_bounds(
    b: &DMatrix<f64>,
    limits: &ActuatorLimits,
    sizing: &BoundSizing,
) -> Result<ProjectionBounds> {
    let (r, m) = b.shape();
    check_dims("actuator limits", (m, 1), (limits.m(), 1))?;
    check_dims("virtual limit", (r, 1), (sizing.virtual_limit.len(), 1))?;
    check_dims("virtual rate", (r, 1), (sizing.virtual_rate.len(), 1))?;
    check_dims("sizing gain", (r, 1), (sizing.gamma.len(), 1))?;
    let positive = |v: &DVector<f64>| v.iter().all(|x| *x > 0.0 && x.is_finite());
    if !positive(&sizing.virtual_limit)
        || !positive(&sizing.virtual_rate)
        || !positive(&sizing.gamma)
    {
        return Err(Error::invalid(
            "virtual limits, rates and gains must be positive",
        ));
    }
    if !(sizing.safety > 0.0 && sizing.safety <= 1.0) {
        return Err(Error::invalid("safety factor must lie in (0, 1]"));
    }
    if !(sizing.tolerance_fraction > 0.0 && sizing.tolerance_fraction < 0.5) {
        return Err(Error::invalid("tolerance fraction must lie in (0, 0.5)"));
    }
    let vm = &sizing.virtual_limit;
    let theta_max = match sizing.mode {
        SizingMode::Uniform => {
            let total: f64 = vm.sum();
            DMatrix::from_fn(r, m, |_, j| {
                sizing.safety * limits.magnitude_headroom(j) / total
            })
        }
        SizingMode::Weighted => {
            if !(sizing.floor > 0.0) || !(sizing.headroom > 0.0) {
                return Err(Error::invalid(
                    "weighted sizing needs positive floor and headroom",
                ));
            }
            let nominal = ideal_theta(b, &DVector::from_element(m, 1.0))?;
            let w = nominal.map(|t| t.abs() + sizing.floor);
            let mut out = DMatrix::zeros(r, m);
            for j in 0..m {
                let load: f64 = (0..r).map(|i| w[(i, j)] * vm[i]).sum();
                let scale =
                    (sizing.safety * limits.magnitude_headroom(j) / load).min(sizing.headroom);
                for i in 0..r {
                    out[(i, j)] = scale * w[(i, j)];
                }
            }
            out
        }
    };
    let gamma_load: f64 = (0..r).map(|i| sizing.gamma[i] * vm[i]).sum();
    let mut theta = Vec::with_capacity(r * m);
    let mut regressor = Vec::with_capacity(r * m);
    let mut y_max = vec![0.0; m];
    for (j, y) in y_max.iter_mut().enumerate() {
        let spent: f64 = (0..r)
            .map(|i| theta_max[(i, j)] * sizing.virtual_rate[i])
            .sum();
        let budget = sizing.safety * limits.rate_headroom(j) - spent;
        if !(budget > 0.0) {
            return Err(Error::invalid(format!(
                "actuator {j}: virtual slew rates exhaust the rate limit (budget {budget:.4})"
            )));
        }
        *y = budget / gamma_load;
    }
    for i in 0..r {
        for j in 0..m {
            theta.push(BoundSpec::symmetric(
                theta_max[(i, j)],
                sizing.tolerance_fraction,
            )?);
            regressor.push(BoundSpec::symmetric(y_max[j], sizing.tolerance_fraction)?);
        }
    }
    ProjectionBounds::new(r, m, theta, regressor)
}
