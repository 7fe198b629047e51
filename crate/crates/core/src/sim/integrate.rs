use nalgebra::DVector;

use crate::error::{Error, Result};

/// Classical fourth-order Runge-Kutta step of `y' = f(t, y)`.
///
/// Any non-finite stage derivative aborts with an integration fault carrying
/// the stage time.
pub fn rk4_step<F>(mut f: F, y: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let check = |k: DVector<f64>, ts: f64, stage: usize| -> Result<DVector<f64>> {
        if let Some(i) = k.iter().position(|v| !v.is_finite()) {
            return Err(Error::IntegrationFault {
                t: ts,
                detail: format!("non-finite derivative in component {i} at stage {stage}"),
            });
        }
        Ok(k)
    };
    let h2 = 0.5 * dt;
    let k1 = check(f(t, y), t, 1)?;
    let k2 = check(f(t + h2, &(y + &k1 * h2)), t + h2, 2)?;
    let k3 = check(f(t + h2, &(y + &k2 * h2)), t + h2, 3)?;
    let k4 = check(f(t + dt, &(y + &k3 * dt)), t + dt, 4)?;
    Ok(y + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::admire_model;
    use nalgebra::DMatrix;

    #[test]
    fn constant_state_is_fixed() {
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let next = rk4_step(|_, s| DVector::zeros(s.len()), &y, 0.0, 0.1).unwrap();
        assert_eq!(next, y);
    }

    #[test]
    fn exponential_decay() {
        let mut y = DVector::from_element(1, 1.0);
        for k in 0..1000 {
            y = rk4_step(|_, s| -s, &y, k as f64 * 1e-3, 1e-3).unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn matches_matrix_exponential() {
        let (model, _) = admire_model();
        let a = model.a().clone();
        let x0 = DVector::from_vec(vec![0.1, -0.05, 0.2, 0.03, -0.1]);
        // truncated Taylor series of exp(A dt) as the oracle
        let expm = |dt: f64| {
            let mut term = DMatrix::<f64>::identity(5, 5);
            let mut sum = term.clone();
            for k in 1..30 {
                term = &term * &a * (dt / k as f64);
                sum += &term;
            }
            sum
        };
        let mut errs = Vec::new();
        for dt in [0.02, 0.01] {
            let step = rk4_step(|_, s| &a * s, &x0, 0.0, dt).unwrap();
            errs.push((step - expm(dt) * &x0).norm());
        }
        assert!(errs[0] < 1e-7);
        // local error is O(dt^5)
        let ratio = errs[0] / errs[1];
        assert!(ratio > 20.0 && ratio < 45.0, "ratio {ratio}");
    }

    #[test]
    fn non_finite_derivative_faults() {
        let y = DVector::from_element(1, 1.0);
        let err = rk4_step(|_, _| DVector::from_element(1, f64::NAN), &y, 2.5, 0.1).unwrap_err();
        assert!(matches!(err, Error::IntegrationFault { t, .. } if t == 2.5));
    }
}
