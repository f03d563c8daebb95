use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scaled unscented-transform parameters. `kappa = None` means `3 − n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfScaling {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: Option<f64>,
}

impl Default for UkfScaling {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, kappa: None }
    }
}

impl UkfScaling {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        let kappa = self.kappa.unwrap_or(3.0 - n);
        self.alpha * self.alpha * (n + kappa) - n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Lower-triangular `L` with `L·Lᵀ = m`. Falls back to an eigen-decomposition
/// when Cholesky fails, which handles singular (e.g. zero) covariances.
pub fn matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

pub fn sigma_points(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    scaling: &UkfScaling,
) -> Result<SigmaPointSet> {
    let n = mean.len();
    let lambda = scaling.lambda(n);
    let root = matrix_sqrt(&(cov * (n as f64 + lambda)))?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for j in 0..n {
        points.push(mean + root.column(j));
    }
    for j in 0..n {
        points.push(mean - root.column(j));
    }
    let w0 = lambda / (n as f64 + lambda);
    let wi = 0.5 / (n as f64 + lambda);
    let mut mean_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0;
    let mut cov_weights = mean_weights.clone();
    cov_weights[0] = w0 + 1.0 - scaling.alpha * scaling.alpha + scaling.beta;
    Ok(SigmaPointSet { points, mean_weights, cov_weights })
}

/// Images of the points under `f` with their weighted mean and covariance.
pub fn propagate<F>(set: &SigmaPointSet, f: F) -> Result<(Vec<DVector<f64>>, DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let images = set.points.iter().map(&f).collect::<Result<Vec<_>>>()?;
    let (mean, cov) = weighted_moments(&images, set);
    Ok((images, mean, cov))
}

pub fn unscented_transform<F>(set: &SigmaPointSet, f: F) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    propagate(set, f).map(|(_, mean, cov)| (mean, cov))
}

pub(crate) fn weighted_moments(images: &[DVector<f64>], set: &SigmaPointSet) -> (DVector<f64>, DMatrix<f64>) {
    let dim = images[0].len();
    let mut mean = DVector::zeros(dim);
    for (y, w) in images.iter().zip(&set.mean_weights) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (y, w) in images.iter().zip(&set.cov_weights) {
        let d = y - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief() -> (DVector<f64>, DMatrix<f64>) {
        (
            DVector::from_vec(vec![0.4, -1.2]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
    }

    #[test]
    fn weights_sum_to_one_and_point_zero_is_mean() {
        let (m, p) = belief();
        let s = sigma_points(&m, &p, &UkfScaling::default()).unwrap();
        assert_eq!(s.points.len(), 5);
        assert!((s.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(s.points[0], m);
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let s = sigma_points(&m, &DMatrix::zeros(2, 2), &UkfScaling::default()).unwrap();
        assert!(s.points.iter().all(|p| (p - &m).norm() == 0.0));
    }

    #[test]
    fn unit_covariance_spread_is_sqrt_three() {
        let m = DVector::zeros(2);
        let scaling = UkfScaling { alpha: 1.0, beta: 2.0, kappa: Some(1.0) };
        let s = sigma_points(&m, &DMatrix::identity(2, 2), &scaling).unwrap();
        for p in &s.points[1..] {
            assert!((p.norm() - 3f64.sqrt()).abs() < 1e-15);
            assert_eq!(p.iter().filter(|v| v.abs() > 0.0).count(), 1);
        }
    }

    #[test]
    fn identity_reconstructs_belief() {
        let (m, p) = belief();
        let s = sigma_points(&m, &p, &UkfScaling::default()).unwrap();
        let (mu, cov) = unscented_transform(&s, |x| Ok(x.clone())).unwrap();
        assert!((mu - m).abs().max() < 1e-12);
        assert!((cov - p).abs().max() < 1e-12);
    }

    #[test]
    fn affine_map_is_exact() {
        let (m, p) = belief();
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 4.0, 0.0]);
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let s = sigma_points(&m, &p, &UkfScaling { alpha: 0.5, beta: 2.0, kappa: Some(0.0) }).unwrap();
        let (mu, cov) = unscented_transform(&s, |x| Ok(&a * x + &b)).unwrap();
        assert!((mu - (&a * &m + &b)).abs().max() < 1e-12);
        assert!((cov - &a * &p * a.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn square_of_standard_normal_has_unit_mean() {
        let s = sigma_points(&DVector::zeros(1), &DMatrix::identity(1, 1), &UkfScaling::default()).unwrap();
        let (mu, _) = unscented_transform(&s, |x| Ok(x.map(|v| v * v))).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            sigma_points(&DVector::zeros(2), &p, &UkfScaling::default()),
            Err(Error::NotPositiveSemiDefinite { .. })
        ));
    }
}
