use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference Jacobian of `f` at `x`. The step for coordinate `j` is
/// `eps · max(|x_j|, 1)`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut probe = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..x.len() {
        let h = eps * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteJacobian { coordinate: j });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), x.len()));
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle_model::{process_derivative, ControlInput, SingleTrack, VehicleState};

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max() / b.abs().max()
    }

    #[test]
    fn identity_map() {
        let x = DVector::from_vec(vec![0.3, -2.0, 7.5]);
        let j = numeric_jacobian(|v| Ok(v.clone()), &x, 1e-6).unwrap();
        assert!((j - DMatrix::identity(3, 3)).abs().max() < 1e-9);
    }

    #[test]
    fn affine_map_is_recovered() {
        let a = DMatrix::from_row_slice(2, 3, &[1.5, -0.2, 3.0, 0.0, 4.0, -7.0]);
        let b = DVector::from_vec(vec![10.0, -3.0]);
        let x = DVector::from_vec(vec![0.1, 2.0, -0.4]);
        let j = numeric_jacobian(|v| Ok(&a * v + &b), &x, 1e-6).unwrap();
        assert!(rel_err(&j, &a) < 1e-9);
    }

    #[test]
    fn non_finite_output_names_coordinate() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let err = numeric_jacobian(|v| Ok(DVector::from_vec(vec![v[1], (v[0] - 1.0).ln()])), &x, 1e-6);
        assert!(matches!(err, Err(Error::NonFiniteJacobian { coordinate: 0 })));
    }

    // Hand-derived Jacobian of the single-track derivative on the unsaturated
    // tyre branch, F = C·tan(α).
    #[test]
    fn matches_symbolic_derivative_on_linear_branch() {
        let st = SingleTrack::default();
        let (p, t) = (st.vehicle, st.tyre);
        let input = ControlInput::new(0.03, 18.0);
        let (vy, r) = (0.12, 0.09);
        let u = (vy + p.lf * r) / input.vx;
        let alpha_f = input.delta - u.atan();
        let d_ff = -t.cornering_stiffness_front / alpha_f.cos().powi(2) / (input.vx * (1.0 + u * u));
        let d_fr = -t.cornering_stiffness_rear / input.vx;
        let (dff_dvy, dff_dr) = (d_ff, p.lf * d_ff);
        let (dfr_dvy, dfr_dr) = (d_fr, -p.lr * d_fr);
        let c = input.delta.cos();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                (dff_dvy * c + dfr_dvy) / p.mass,
                (dff_dr * c + dfr_dr) / p.mass - input.vx,
                (p.lf * dff_dvy * c - p.lr * dfr_dvy) / p.yaw_inertia,
                (p.lf * dff_dr * c - p.lr * dfr_dr) / p.yaw_inertia,
            ],
        );
        let f = |x: &DVector<f64>| {
            let d = process_derivative(VehicleState::new(x[0], x[1]), input, &p, &t)?;
            Ok(DVector::from_vec(vec![d.dvy, d.dyaw_rate]))
        };
        let j = numeric_jacobian(f, &DVector::from_vec(vec![vy, r]), 1e-6).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let rel = (j[(i, k)] - expected[(i, k)]).abs() / expected[(i, k)].abs();
                assert!(rel < 1e-6, "({i},{k}) {} vs {}", j[(i, k)], expected[(i, k)]);
            }
        }
    }
}
