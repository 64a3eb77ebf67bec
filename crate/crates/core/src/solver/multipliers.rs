use nalgebra::{DMatrix, DVector};

use super::nnls::nnls;
use super::region::{FeasibleRegion, RegionMode};

/// Lagrange multipliers of a candidate optimum.
#[derive(Debug, Clone, Default)]
pub(crate) struct Multipliers {
    /// Causality multipliers `eta_t`, `t = 0..n-1`.
    pub eta: Vec<f64>,
    pub nu: f64,
    pub mu: Vec<f64>,
    /// `kappa_t = sum_{T >= t} eta_T + nu`.
    pub kappa: Vec<f64>,
    /// Largest stationarity or complementary-slackness residual.
    pub residual: f64,
}

/// Fits `g_t + sigma_t^2 kappa_t - mu_t = 0` by nonnegative least squares,
/// with `eta` restricted to tight causality constraints and `mu` to slots
/// carrying no energy.
pub(crate) fn recover(a: &[f64], grad: &[f64], region: &FeasibleRegion) -> Multipliers {
    let n = a.len();
    let sigma = region.sigma_sq();
    let e_tot = region.energy().total();
    let tol = 1e-9 * e_tot.max(f64::MIN_POSITIVE);
    let mut used = 0.0;
    let mut tight = Vec::new();
    if region.mode() == RegionMode::Causal {
        for t in 0..n.saturating_sub(1) {
            used += a[t] * sigma[t];
            if region.energy().cumulative()[t] - used <= tol {
                tight.push(t);
            }
        }
    }
    let idle: Vec<usize> = (0..n).filter(|&t| a[t] * sigma[t] <= tol).collect();
    let cols = tight.len() + 2 + idle.len();
    let mut mat = DMatrix::zeros(n, cols);
    for t in 0..n {
        for (c, &tt) in tight.iter().enumerate() {
            if tt >= t {
                mat[(t, c)] = sigma[t];
            }
        }
        mat[(t, tight.len())] = sigma[t];
        mat[(t, tight.len() + 1)] = -sigma[t];
    }
    for (c, &t) in idle.iter().enumerate() {
        mat[(t, tight.len() + 2 + c)] = -1.0;
    }
    let rhs = DVector::from_iterator(n, grad.iter().map(|g| -g));
    let theta = nnls(&mat, &rhs);

    let mut eta = vec![0.0; n.saturating_sub(1)];
    for (c, &t) in tight.iter().enumerate() {
        eta[t] = theta[c];
    }
    let nu = theta[tight.len()] - theta[tight.len() + 1];
    let mut mu = vec![0.0; n];
    for (c, &t) in idle.iter().enumerate() {
        mu[t] = theta[tight.len() + 2 + c];
    }
    let mut kappa = vec![nu; n];
    let mut acc = nu;
    for t in (0..n).rev() {
        if t < eta.len() {
            acc += eta[t];
        }
        kappa[t] = acc;
    }

    let scale = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
    let mut residual = 0.0_f64;
    for t in 0..n {
        residual = residual.max((grad[t] + sigma[t] * kappa[t] - mu[t]).abs() / scale);
        residual = residual.max((mu[t] * a[t] * sigma[t]).abs() / (scale * e_tot.max(f64::MIN_POSITIVE)));
    }
    let mut used = 0.0;
    for (t, &e) in eta.iter().enumerate() {
        used += a[t] * sigma[t];
        let slack = region.energy().cumulative()[t] - used;
        residual = residual.max((e * slack).abs() / (scale * e_tot.max(f64::MIN_POSITIVE)));
    }
    Multipliers {
        eta,
        nu,
        mu,
        kappa,
        residual,
    }
}
