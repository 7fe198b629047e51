//! Barrier functions and the element-wise projection operators.
//!
//! The conventional operator bounds only the magnitude of an adaptive
//! parameter. The modified operator additionally projects the regressor
//! through its own barrier, which bounds the parameter's rate of change.
//! Both operators are pure, element-wise and allocation-free at the scalar
//! level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Barrier bounds for one scalar quantity: a hard interval `[lower, upper]`
/// and a tolerance band of width `tolerance` inside each end.
///
/// Construction validates the invariants, so every `BoundSpec` in
/// circulation is usable by the barrier functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoundSpec", into = "RawBoundSpec")]
pub struct BoundSpec {
    lower: f64,
    upper: f64,
    tolerance: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundSpec {
    lower: f64,
    upper: f64,
    tolerance: f64,
}

impl TryFrom<RawBoundSpec> for BoundSpec {
    type Error = Error;
    fn try_from(raw: RawBoundSpec) -> Result<Self> {
        BoundSpec::new(raw.lower, raw.upper, raw.tolerance)
    }
}

impl From<BoundSpec> for RawBoundSpec {
    fn from(b: BoundSpec) -> Self {
        RawBoundSpec {
            lower: b.lower,
            upper: b.upper,
            tolerance: b.tolerance,
        }
    }
}

impl BoundSpec {
    pub fn new(lower: f64, upper: f64, tolerance: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && tolerance.is_finite()) {
            return Err(Error::invalid("bound spec values must be finite"));
        }
        if !(upper > 0.0 && lower < 0.0) {
            return Err(Error::invalid(format!(
                "bounds must satisfy lower < 0 < upper (got [{lower}, {upper}])"
            )));
        }
        if !(tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(tolerance < 0.5 * (upper - lower)) {
            return Err(Error::invalid(
                "tolerance must be below half the bound interval",
            ));
        }
        if !(upper - tolerance > 0.0 && lower + tolerance < 0.0) {
            return Err(Error::invalid(
                "tolerance band must leave zero strictly inside the inner region",
            ));
        }
        Ok(BoundSpec {
            lower,
            upper,
            tolerance,
        })
    }

    /// Symmetric bounds `[-limit, limit]` with tolerance `fraction * 2 * limit`.
    pub fn symmetric(limit: f64, tolerance_fraction: f64) -> Result<Self> {
        Self::new(-limit, limit, tolerance_fraction * 2.0 * limit)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Lower end of the inner region, where the barrier crosses zero.
    pub fn inner_lower(&self) -> f64 {
        self.lower + self.tolerance
    }

    pub fn inner_upper(&self) -> f64 {
        self.upper - self.tolerance
    }

    /// Largest absolute value admitted by the hard bounds.
    pub fn abs_max(&self) -> f64 {
        self.upper.max(-self.lower)
    }

    fn denominator(&self) -> f64 {
        (self.upper - self.lower - self.tolerance) * self.tolerance
    }

    /// Convex quadratic barrier: negative on the open inner region, zero on
    /// its ends and exactly one at `lower` and `upper`.
    #[inline]
    pub fn barrier(&self, x: f64) -> f64 {
        (x - self.lower - self.tolerance) * (x - self.upper + self.tolerance) / self.denominator()
    }

    #[inline]
    pub fn barrier_slope(&self, x: f64) -> f64 {
        (2.0 * x - self.lower - self.upper) / self.denominator()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Conventional,
    #[default]
    Modified,
}

/// Per-element bounds for an `rows x cols` adaptive matrix and its regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBounds {
    rows: usize,
    cols: usize,
    theta: Vec<BoundSpec>,
    regressor: Vec<BoundSpec>,
}

impl ProjectionBounds {
    /// Grids are given row-major.
    pub fn new(
        rows: usize,
        cols: usize,
        theta: Vec<BoundSpec>,
        regressor: Vec<BoundSpec>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("projection bounds must be non-empty"));
        }
        check_dims("theta bound grid", (rows * cols, 1), (theta.len(), 1))?;
        check_dims(
            "regressor bound grid",
            (rows * cols, 1),
            (regressor.len(), 1),
        )?;
        Ok(Self {
            rows,
            cols,
            theta,
            regressor,
        })
    }

    pub fn uniform(rows: usize, cols: usize, theta: BoundSpec, regressor: BoundSpec) -> Self {
        Self {
            rows,
            cols,
            theta: vec![theta; rows * cols],
            regressor: vec![regressor; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn theta(&self, i: usize, j: usize) -> &BoundSpec {
        &self.theta[i * self.cols + j]
    }

    pub fn regressor(&self, i: usize, j: usize) -> &BoundSpec {
        &self.regressor[i * self.cols + j]
    }

    pub fn theta_grid(&self) -> &[BoundSpec] {
        &self.theta
    }

    pub fn regressor_grid(&self) -> &[BoundSpec] {
        &self.regressor
    }

    /// Element-wise upper bound on `|Y|` (the `Y_MAX` matrix).
    pub fn regressor_abs_max(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.regressor(i, j).abs_max())
    }

    /// Element-wise upper bound on `|theta - theta*|` for `theta` in the
    /// feasible set and `theta*` in the inner region.
    pub fn theta_error_max(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let b = self.theta(i, j);
            b.upper() - b.lower() - b.tolerance()
        })
    }

    /// Largest barrier value over the elements of `theta`.
    pub fn max_theta_barrier(&self, theta: &DMatrix<f64>) -> f64 {
        max_barrier(theta, &self.theta, self.cols)
    }

    pub fn max_regressor_barrier(&self, y: &DMatrix<f64>) -> f64 {
        max_barrier(y, &self.regressor, self.cols)
    }

    /// Clips every element into its inner region `[lower + tol, upper - tol]`.
    pub fn clip_to_inner(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let b = self.theta(i, j);
            theta[(i, j)].clamp(b.inner_lower(), b.inner_upper())
        })
    }
}

fn max_barrier(m: &DMatrix<f64>, grid: &[BoundSpec], cols: usize) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max(grid[i * cols + j].barrier(m[(i, j)]));
        }
    }
    worst
}

pub fn f_convex(theta: f64, spec: &BoundSpec) -> f64 {
    spec.barrier(theta)
}

pub fn df_dtheta(theta: f64, spec: &BoundSpec) -> f64 {
    spec.barrier_slope(theta)
}

pub fn h_convex(y: f64, spec: &BoundSpec) -> f64 {
    spec.barrier(y)
}

/// Conventional projection: scales `y` by `1 - f` while the parameter is in
/// the tolerance band and `y` pushes it outward.
pub fn proj_conventional(theta: f64, y: f64, spec: &BoundSpec) -> f64 {
    let f = spec.barrier(theta);
    if f > 0.0 && y * spec.barrier_slope(theta) > 0.0 {
        y - y * f
    } else {
        y
    }
}

/// Which branch of the modified operator produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModifiedBranch {
    /// Both barriers active: `y (1 - f^)(1 - h^)`.
    Joint,
    /// Parameter barrier only: `y (1 - f^)`.
    Parameter,
    /// Regressor barrier only: `y (1 - h^)`.
    Regressor,
    Identity,
}

/// Branch selection in the printed order; the first matching condition wins.
pub fn modified_branch(
    theta: f64,
    y: f64,
    theta_spec: &BoundSpec,
    y_spec: &BoundSpec,
) -> ModifiedBranch {
    let f = theta_spec.barrier(theta);
    let push = y * theta_spec.barrier_slope(theta);
    let h = y_spec.barrier(y);
    if f >= 0.0 && push >= 0.0 && h >= 0.0 {
        ModifiedBranch::Joint
    } else if f > 0.0 && push > 0.0 {
        ModifiedBranch::Parameter
    } else if h > 0.0 {
        ModifiedBranch::Regressor
    } else {
        ModifiedBranch::Identity
    }
}

/// Modified projection bounding both the parameter and, through the
/// regressor barrier, its rate.
#[inline]
pub fn proj_modified(theta: f64, y: f64, theta_spec: &BoundSpec, y_spec: &BoundSpec) -> f64 {
    let f = theta_spec.barrier(theta);
    let push = y * theta_spec.barrier_slope(theta);
    let h = y_spec.barrier(y);
    // f and h are clamped from above only; below zero they are never used.
    let f_hat = f.min(1.0);
    let h_hat = h.min(1.0);
    if f >= 0.0 && push >= 0.0 && h >= 0.0 {
        y * (1.0 - f_hat) * (1.0 - h_hat)
    } else if f > 0.0 && push > 0.0 {
        y * (1.0 - f_hat)
    } else if h > 0.0 {
        y * (1.0 - h_hat)
    } else {
        y
    }
}

fn check_shapes(theta: &DMatrix<f64>, y: &DMatrix<f64>, bounds: &ProjectionBounds) -> Result<()> {
    check_dims("projection theta", bounds.shape(), theta.shape())?;
    check_dims("projection regressor", bounds.shape(), y.shape())
}

pub fn proj_modified_matrix(
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    bounds: &ProjectionBounds,
) -> Result<DMatrix<f64>> {
    check_shapes(theta, y, bounds)?;
    Ok(DMatrix::from_fn(bounds.rows, bounds.cols, |i, j| {
        proj_modified(
            theta[(i, j)],
            y[(i, j)],
            bounds.theta(i, j),
            bounds.regressor(i, j),
        )
    }))
}

pub fn proj_conventional_matrix(
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    bounds: &ProjectionBounds,
) -> Result<DMatrix<f64>> {
    check_shapes(theta, y, bounds)?;
    Ok(DMatrix::from_fn(bounds.rows, bounds.cols, |i, j| {
        proj_conventional(theta[(i, j)], y[(i, j)], bounds.theta(i, j))
    }))
}

pub fn project(
    kind: ProjectionKind,
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    bounds: &ProjectionBounds,
) -> Result<DMatrix<f64>> {
    match kind {
        ProjectionKind::Conventional => proj_conventional_matrix(theta, y, bounds),
        ProjectionKind::Modified => proj_modified_matrix(theta, y, bounds),
    }
}
