//! Quick oracle checks runnable from an installed binary: filters against a
//! closed-form Kalman filter, network gradients against finite differences,
//! and the unscented transform against Monte-Carlo sampling.

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::kalman::{
    ekf_predict, ekf_update, sigma_points, ukf_predict, ukf_update, unscented_transform, GaussianBelief,
    StateSpaceModel, UkfScaling,
};
use crate::neural::{forward, loss_and_gradient, loss_mse, xavier_init, Activation, NetworkKind, NetworkSpec, Parameters};
use crate::vehicle_model::{dugoff_axle_force, Axle, TyreParams, VehicleParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct Linear {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl StateSpaceModel for Linear {
    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x)
    }
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.c * x)
    }
}

/// Largest state deviation of EKF and UKF from an information-form Kalman
/// filter on random stable linear-Gaussian systems.
pub fn linear_filter_deviation(seeds: u64, steps: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let scaling = UkfScaling::default();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (2, 2);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let radius = raw.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        let m = Linear { a: raw / (radius + 0.1), c: DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0)) };
        let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.01..0.1)));
        let r = DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| rng.random_range(0.05..0.5)));
        let mut truth = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prior = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n));
        let (mut e, mut u) = (prior.clone(), prior.clone());
        let (mut x, mut p_inv) = (prior.mean.clone(), prior.cov.clone());
        let r_inv = r.clone().try_inverse().expect("diagonal noise");
        for _ in 0..steps {
            truth = &m.a * &truth + q.map(f64::sqrt) * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &m.c * &truth + r.map(f64::sqrt) * DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            // information form: P⁻¹ ← (A P Aᵀ + Q)⁻¹ + Cᵀ R⁻¹ C
            let p_pred = &m.a * p_inv.clone().try_inverse().expect("positive definite") * m.a.transpose() + &q;
            let x_pred = &m.a * &x;
            p_inv = p_pred.try_inverse().expect("positive definite") + m.c.transpose() * &r_inv * &m.c;
            let p = p_inv.clone().try_inverse().expect("positive definite");
            x = &x_pred + &p * m.c.transpose() * &r_inv * (&z - &m.c * &x_pred);
            e = ekf_update(&ekf_predict(&e, &m, &q, 1e-6)?, &m, &z, &r, 1e-6)?.0;
            u = ukf_update(&ukf_predict(&u, &m, &q, &scaling)?, &m, &z, &r, &scaling)?.0;
            worst = worst.max((&e.mean - &x).amax()).max((&u.mean - &x).amax());
        }
    }
    Ok(worst)
}

fn small_spec(kind: NetworkKind) -> NetworkSpec {
    let (hidden, activations, window) = match kind {
        NetworkKind::Ffnn => (vec![6, 5], vec![Activation::Relu; 2], 1),
        NetworkKind::Rnn => (vec![5, 4], vec![Activation::Tanh, Activation::Sigmoid], 5),
    };
    NetworkSpec { kind, input_width: 3, hidden, activations, dropout: 0.0, window }
}

/// Worst relative error of back-propagated gradients against central
/// differences over `seeds` × `probes` random scalars.
pub fn gradient_error(kind: NetworkKind, seeds: u64, probes: usize) -> Result<f64> {
    let spec = small_spec(kind);
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = xavier_init(&spec, seed);
        for t in params.0.iter_mut().filter(|t| t.shape.len() == 1) {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let x = Array3::from_shape_simple_fn((6, spec.window, spec.input_width), || rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, mut grads) = loss_and_gradient(&params, &spec, x.view(), &y, None)?;
        let loss = |p: &Parameters| -> Result<f64> { loss_mse(&forward(p, &spec, x.view(), None)?, &y) };
        for _ in 0..probes {
            let k = rng.random_range(0..params.count());
            let v = *params.value_mut(k);
            let h = 1e-5 * v.abs().max(1.0);
            *params.value_mut(k) = v + h;
            let up = loss(&params)?;
            *params.value_mut(k) = v - h;
            let down = loss(&params)?;
            *params.value_mut(k) = v;
            let numeric = (up - down) / (2.0 * h);
            let analytic = *grads.value_mut(k);
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// Unscented and sampled moments of the front Dugoff force for a Gaussian
/// slip angle.
#[derive(Debug, Clone, Copy)]
pub struct MomentComparison {
    pub slip: f64,
    pub ut_mean: f64,
    pub ut_var: f64,
    pub mc_mean: f64,
    pub mc_var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

impl MomentComparison {
    /// Largest discrepancy in units of the sampling standard error.
    pub fn z_score(&self) -> f64 {
        ((self.ut_mean - self.mc_mean).abs() / self.mean_se).max((self.ut_var - self.mc_var).abs() / self.var_se)
    }
}

pub fn dugoff_moments(slip: f64, std: f64, samples: usize, seed: u64) -> Result<MomentComparison> {
    let tyre = TyreParams::default_for(&VehicleParams::default());
    let force = |a: f64| dugoff_axle_force(a, &tyre, Axle::Front);
    let set = sigma_points(&DVector::from_element(1, slip), &DMatrix::from_element(1, 1, std * std), &UkfScaling::default())?;
    let (m, p) = unscented_transform(&set, |x| Ok(DVector::from_element(1, force(x[0]))))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples).map(|_| force(slip + std * rng.sample::<f64, _>(StandardNormal))).collect();
    let n = samples as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n;
    Ok(MomentComparison {
        slip,
        ut_mean: m[0],
        ut_var: p[(0, 0)],
        mc_mean: mean,
        mc_var: var,
        mean_se: (var / n).sqrt(),
        var_se: ((m4 - var * var) / n).sqrt(),
    })
}

/// Slip angles from the linear region to deep saturation, rad.
pub const UT_OPERATING_POINTS: [f64; 5] = [0.01, 0.04, 0.06, 0.1, 0.2];
pub const UT_SLIP_STD: f64 = 0.002;

pub fn run_all() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name, result: Result<(bool, String)>| {
        let (passed, detail) = result.unwrap_or_else(|e| (false, e.to_string()));
        checks.push(Check { name, passed, detail });
    };
    push(
        "linear Kalman equivalence",
        linear_filter_deviation(10, 1000).map(|d| (d < 1e-9, format!("max deviation {d:.2e}"))),
    );
    for (name, kind) in [("FFNN gradients", NetworkKind::Ffnn), ("LSTM gradients", NetworkKind::Rnn)] {
        push(name, gradient_error(kind, 10, 5).map(|e| (e < 1e-4, format!("max relative error {e:.2e}"))));
    }
    push(
        "unscented transform vs Monte-Carlo",
        UT_OPERATING_POINTS
            .iter()
            .enumerate()
            .map(|(i, &a)| dugoff_moments(a, UT_SLIP_STD, 200_000, i as u64).map(|c| c.z_score()))
            .collect::<Result<Vec<f64>>>()
            .map(|z| {
                let worst = z.iter().copied().fold(0.0, f64::max);
                (worst < 3.0, format!("worst discrepancy {worst:.2} standard errors"))
            }),
    );
    checks
}
