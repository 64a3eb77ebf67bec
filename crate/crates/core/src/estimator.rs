//! MMSE of the fusion-center estimate for a given amplification profile.
//!
//! The observation model is `y_t = h_t sqrt(a_t) x_t + w_t` with
//! `w ~ CN(0, sigma_w^2 I)`. Two exact evaluations are provided (the direct
//! posterior-covariance trace and the reduced Woodbury form) together with the
//! closed forms and bounds used by the policies.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::{CMatrix, CovarianceModel, SpectrumDecomposition, C64};

/// Tolerance used to decide whether a spectrum is flat.
pub const FLAT_TOL: f64 = 1e-9;

/// Complex fading gains `h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    h: Vec<C64>,
    gain_sq: Vec<f64>,
}

impl ChannelTrace {
    pub fn new(h: Vec<C64>) -> Result<Self> {
        if h.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidParameter("channel gains must be finite".into()));
        }
        let gain_sq = h.iter().map(|c| c.norm_sqr()).collect();
        Ok(ChannelTrace { h, gain_sq })
    }

    /// Static channel, `h_t = 1`.
    pub fn unit(n: usize) -> Self {
        ChannelTrace {
            h: vec![C64::new(1.0, 0.0); n],
            gain_sq: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &[C64] {
        &self.h
    }

    pub fn gain_sq(&self) -> &[f64] {
        &self.gain_sq
    }

    /// True when all `|h_t|^2` coincide.
    pub fn is_static(&self) -> bool {
        self.gain_sq.windows(2).all(|w| w[0] == w[1])
    }
}

/// Additive white noise with variance `sigma_w^2`; `gamma = 1 / sigma_w^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma_w_sq: f64,
    gamma: f64,
}

impl NoiseModel {
    pub fn new(sigma_w_sq: f64) -> Result<Self> {
        if !(sigma_w_sq > 0.0 && sigma_w_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {sigma_w_sq}"
            )));
        }
        Ok(NoiseModel {
            sigma_w_sq,
            gamma: 1.0 / sigma_w_sq,
        })
    }

    pub fn sigma_w_sq(&self) -> f64 {
        self.sigma_w_sq
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Amplifier energy scales `a_t >= 0` and the consumed energy
/// `J_t = a_t sigma_t^2` (unit transmit duration).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerAllocation {
    a: Vec<f64>,
    energy: Vec<f64>,
}

impl PowerAllocation {
    /// Values in `[-1e-12, 0)` are rounding noise and are clamped to zero.
    pub fn new(a: Vec<f64>, sigma_sq: &[f64]) -> Result<Self> {
        if a.len() != sigma_sq.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: sigma_sq.len(),
            });
        }
        if let Some(bad) = a.iter().find(|&&x| !x.is_finite() || x < -1e-12) {
            return Err(Error::InvalidParameter(format!(
                "allocation entries must be nonnegative, got {bad}"
            )));
        }
        let a: Vec<f64> = a.into_iter().map(|x| x.max(0.0)).collect();
        let energy = a.iter().zip(sigma_sq).map(|(x, s)| x * s).collect();
        Ok(PowerAllocation { a, energy })
    }

    /// Builds `a_t = J_t / sigma_t^2`; zero-variance slots get `a_t = 0`.
    pub fn from_energy(energy: &[f64], sigma_sq: &[f64]) -> Result<Self> {
        if energy.len() != sigma_sq.len() {
            return Err(Error::LengthMismatch {
                left: energy.len(),
                right: sigma_sq.len(),
            });
        }
        let a = energy
            .iter()
            .zip(sigma_sq)
            .map(|(&j, &s)| if s > 0.0 { j.max(0.0) / s } else { 0.0 })
            .collect();
        Self::new(a, sigma_sq)
    }

    pub fn zeros(n: usize) -> Self {
        PowerAllocation {
            a: vec![0.0; n],
            energy: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `tr[K_x - K_xy K_y^{-1} K_xy^H]`, solving against `K_y` by Cholesky.
pub fn mmse_direct(
    model: &CovarianceModel,
    channel: &ChannelTrace,
    alloc: &PowerAllocation,
    noise: &NoiseModel,
) -> Result<f64> {
    let n = model.n();
    check_len(n, channel.n())?;
    check_len(n, alloc.n())?;
    let k = model.matrix();
    // D = H A
    let d: Vec<C64> = channel.h().iter().zip(alloc.a()).map(|(h, a)| h * a.sqrt()).collect();
    let mut ky = CMatrix::from_fn(n, n, |t, l| d[t] * k[(t, l)] * d[l].conj());
    for t in 0..n {
        ky[(t, t)] += C64::new(noise.sigma_w_sq(), 0.0);
    }
    let dk = CMatrix::from_fn(n, n, |t, l| d[t] * k[(t, l)]);
    let chol = ky
        .cholesky()
        .ok_or_else(|| Error::Numerical("K_y is not positive definite".into()))?;
    let x = chol.solve(&dk);
    let mut explained = 0.0;
    for t in 0..n {
        for l in 0..n {
            explained += (k[(t, l)] * d[l].conj() * x[(l, t)]).re;
        }
    }
    Ok((model.p_x() - explained).max(0.0))
}

/// Shared factorization for the reduced (Woodbury) form.
///
/// Holds `M^{-1}` with `M = Lambda^{-1} + gamma U^H diag(|h|^2 a) U`, and
/// `V = U M^{-1}`. `M^{-1}` is formed as `L^{1/2} N^{-1} L^{1/2}` with
/// `N = I + gamma L^{1/2} U^H diag(|h|^2 a) U L^{1/2}`, which stays well
/// conditioned even for tiny retained eigenvalues.
pub(crate) struct WoodburyState<'a> {
    spectrum: &'a SpectrumDecomposition,
    gamma: f64,
    minv: CMatrix,
    v: CMatrix,
}

impl<'a> WoodburyState<'a> {
    pub(crate) fn new(spectrum: &'a SpectrumDecomposition, gain_sq: &[f64], a: &[f64], gamma: f64) -> Result<Self> {
        let n = spectrum.n();
        let s = spectrum.rank();
        check_len(n, gain_sq.len())?;
        check_len(n, a.len())?;
        let root: Vec<f64> = spectrum.lambda.iter().map(|l| l.sqrt()).collect();
        let weight: Vec<f64> = gain_sq.iter().zip(a).map(|(g, x)| (g * x.max(0.0)).sqrt()).collect();
        let z = CMatrix::from_fn(n, s, |t, k| spectrum.u[(t, k)] * (weight[t] * root[k]));
        let mut nmat = z.adjoint() * &z * C64::new(gamma, 0.0);
        for k in 0..s {
            nmat[(k, k)] += C64::new(1.0, 0.0);
        }
        let ninv = nmat
            .cholesky()
            .ok_or_else(|| Error::Numerical("Woodbury matrix is not positive definite".into()))?
            .inverse();
        let minv = CMatrix::from_fn(s, s, |i, j| ninv[(i, j)] * (root[i] * root[j]));
        let v = &spectrum.u * &minv;
        Ok(WoodburyState {
            spectrum,
            gamma,
            minv,
            v,
        })
    }

    pub(crate) fn value(&self) -> f64 {
        self.minv.diagonal().iter().map(|c| c.re).sum()
    }

    /// `d err / d a_t = -gamma |h_t|^2 [U M^{-2} U^H]_tt`.
    pub(crate) fn gradient(&self, gain_sq: &[f64]) -> Vec<f64> {
        (0..self.v.nrows())
            .map(|t| {
                let c_tt: f64 = self.v.row(t).iter().map(|c| c.norm_sqr()).sum();
                -self.gamma * gain_sq[t] * c_tt
            })
            .collect()
    }

    /// Hessian restricted to `slots`:
    /// `2 gamma^2 |h_t|^2 |h_k|^2 Re(B_tk C_kt)` with `B = U M^{-1} U^H`,
    /// `C = U M^{-2} U^H`.
    pub(crate) fn hessian(&self, gain_sq: &[f64], slots: &[usize]) -> DMatrix<f64> {
        let m = slots.len();
        let s = self.v.ncols();
        let vs = CMatrix::from_fn(m, s, |i, k| self.v[(slots[i], k)]);
        let us = CMatrix::from_fn(m, s, |i, k| self.spectrum.u[(slots[i], k)]);
        let b = &vs * us.adjoint();
        let c = &vs * vs.adjoint();
        let g2 = 2.0 * self.gamma * self.gamma;
        DMatrix::from_fn(m, m, |i, j| {
            g2 * gain_sq[slots[i]] * gain_sq[slots[j]] * (b[(i, j)] * c[(j, i)]).re
        })
    }
}

/// `tr[(Lambda^{-1} + gamma U^H diag(|h_t|^2 a_t) U)^{-1}]`.
pub fn mmse_woodbury(
    spectrum: &SpectrumDecomposition,
    channel: &ChannelTrace,
    alloc: &PowerAllocation,
    noise: &NoiseModel,
) -> Result<f64> {
    check_len(spectrum.n(), alloc.n())?;
    WoodburyState::new(spectrum, channel.gain_sq(), alloc.a(), noise.gamma()).map(|w| w.value())
}

/// Analytic gradient of [`mmse_woodbury`] with respect to `a`.
pub fn mmse_gradient(
    spectrum: &SpectrumDecomposition,
    channel: &ChannelTrace,
    alloc: &PowerAllocation,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_len(spectrum.n(), alloc.n())?;
    WoodburyState::new(spectrum, channel.gain_sq(), alloc.a(), noise.gamma()).map(|w| w.gradient(channel.gain_sq()))
}

/// Closed-form MMSE of a low-pass c.w.s.s. signal observed only on the
/// equidistant slots `Delta r + t_d` (0-based), `Delta = n / s`.
///
/// `alloc_bar[r]` is the amplification used at sample `r`.
pub fn mmse_sampled_lowpass(
    n: usize,
    s: usize,
    t_d: usize,
    alloc_bar: &[f64],
    channel: &ChannelTrace,
    noise: &NoiseModel,
    p_x: f64,
) -> Result<f64> {
    if s == 0 || s > n || n % s != 0 {
        return Err(Error::RankError(format!("s = {s} must divide n = {n}")));
    }
    let delta = n / s;
    if t_d >= delta {
        return Err(Error::DelayOutOfRange { t_d, max: delta - 1 });
    }
    check_len(s, alloc_bar.len())?;
    check_len(n, channel.n())?;
    let sigma_x_sq = p_x / n as f64;
    Ok(alloc_bar
        .iter()
        .enumerate()
        .map(|(r, &a)| {
            let g = channel.gain_sq()[delta * r + t_d];
            (p_x / s as f64) / (1.0 + noise.gamma() * a * sigma_x_sq * g)
        })
        .sum())
}

/// Error of the estimator that ignores all correlation:
/// `sum_t sigma_t^2 / (1 + gamma |h_t|^2 sigma_t^2 a_t)`; never below the MMSE.
pub fn upper_bound_uncorrelated(
    model: &CovarianceModel,
    channel: &ChannelTrace,
    alloc: &PowerAllocation,
    noise: &NoiseModel,
) -> Result<f64> {
    let n = model.n();
    check_len(n, channel.n())?;
    check_len(n, alloc.n())?;
    Ok(diagonal_error(
        model.sigma_sq(),
        channel.gain_sq(),
        alloc.a(),
        noise.gamma(),
    ))
}

fn diagonal_error(sigma_sq: &[f64], gain_sq: &[f64], a: &[f64], gamma: f64) -> f64 {
    sigma_sq
        .iter()
        .zip(gain_sq)
        .zip(a)
        .map(|((&s, &g), &x)| s / (1.0 + gamma * g * s * x))
        .sum()
}

/// Lower bound `(P_x/s) (sum_t 1/(1 + gamma |h_t|^2 a_t sigma_t^2) + s - n)`,
/// valid when the nonzero eigenvalues are all equal to `P_x / s`.
pub fn lower_bound_flat(
    spectrum: &SpectrumDecomposition,
    sigma_sq: &[f64],
    channel: &ChannelTrace,
    alloc: &PowerAllocation,
    noise: &NoiseModel,
) -> Result<f64> {
    let n = spectrum.n();
    check_len(n, sigma_sq.len())?;
    check_len(n, channel.n())?;
    check_len(n, alloc.n())?;
    if !spectrum.is_flat(FLAT_TOL) {
        return Err(Error::FlatSpectrumRequired(format!(
            "eigenvalues range over [{:e}, {:e}]",
            spectrum.lambda.iter().cloned().fold(f64::INFINITY, f64::min),
            spectrum.lambda.iter().cloned().fold(0.0, f64::max)
        )));
    }
    let s = spectrum.rank() as f64;
    let p_x = spectrum.total_power();
    let sum: f64 = sigma_sq
        .iter()
        .zip(channel.gain_sq())
        .zip(alloc.a())
        .map(|((&v, &g), &a)| 1.0 / (1.0 + noise.gamma() * g * a * v))
        .sum();
    Ok(p_x / s * (sum + s - n as f64))
}

/// `err_B = sum_t 1 / (1 + gamma |h_t|^2 a_t P_x / n)`, the common core of
/// both bounds when every slot has variance `P_x / n`.
pub fn sandwich_core(p_x: f64, channel: &ChannelTrace, alloc: &PowerAllocation, noise: &NoiseModel) -> f64 {
    let n = alloc.n() as f64;
    channel
        .gain_sq()
        .iter()
        .zip(alloc.a())
        .map(|(&g, &a)| 1.0 / (1.0 + noise.gamma() * g * a * p_x / n))
        .sum()
}

/// MMSE normalized by the total signal power.
pub fn normalized(mse: f64, p_x: f64) -> f64 {
    mse / p_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{build_lowpass_cwss, build_rank_one, random_haar_covariance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channel(n: usize, rng: &mut ChaCha8Rng) -> ChannelTrace {
        ChannelTrace::new(
            (0..n)
                .map(|_| C64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_allocation_gives_prior_power() {
        let model = random_haar_covariance(4, &[2.0, 1.0, 0.5], 9).unwrap();
        let spec = model.reduced_evd();
        let noise = NoiseModel::new(0.01).unwrap();
        let ch = ChannelTrace::unit(4);
        let zero = PowerAllocation::zeros(4);
        assert!((mmse_direct(&model, &ch, &zero, &noise).unwrap() - 3.5).abs() < 1e-12);
        assert!((mmse_woodbury(&spec, &ch, &zero, &noise).unwrap() - 3.5).abs() < 1e-12);
        assert!((upper_bound_uncorrelated(&model, &ch, &zero, &noise).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn white_source_matches_sum_form() {
        let sigma = 2.0;
        let model = CovarianceModel::new(CMatrix::identity(4, 4) * C64::new(sigma, 0.0)).unwrap();
        let noise = NoiseModel::new(0.1).unwrap();
        let a = vec![0.0, 0.5, 1.0, 3.0];
        let alloc = PowerAllocation::new(a.clone(), model.sigma_sq()).unwrap();
        let expected: f64 = a.iter().map(|x| sigma / (1.0 + 10.0 * sigma * x)).sum();
        let got = mmse_direct(&model, &ChannelTrace::unit(4), &alloc, &noise).unwrap();
        assert!((got - expected).abs() < 1e-12);
        let bound = upper_bound_uncorrelated(&model, &ChannelTrace::unit(4), &alloc, &noise).unwrap();
        assert!((bound - got).abs() < 1e-12);
    }

    #[test]
    fn direct_and_woodbury_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, lambda) in [(4usize, vec![3.0, 1.0, 0.2, 0.1]), (3, vec![2.0, 0.7]), (4, vec![1.0])] {
            let model = random_haar_covariance(n, &lambda, rng.random()).unwrap();
            let spec = model.reduced_evd();
            let ch = random_channel(n, &mut rng);
            let noise = NoiseModel::new(0.001).unwrap();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let alloc = PowerAllocation::new(a, model.sigma_sq()).unwrap();
            let d = mmse_direct(&model, &ch, &alloc, &noise).unwrap();
            let w = mmse_woodbury(&spec, &ch, &alloc, &noise).unwrap();
            assert!((d - w).abs() <= 1e-10 * d.max(1e-3), "{d} vs {w}");
        }
    }

    #[test]
    fn rank_one_closed_form_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5;
        let raw: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let u: Vec<C64> = raw.iter().map(|c| c / norm).collect();
        let p_x = 3.0;
        let model = build_rank_one(&u, p_x).unwrap();
        let spec = model.reduced_evd();
        let ch = random_channel(n, &mut rng);
        let noise = NoiseModel::new(0.01).unwrap();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let alloc = PowerAllocation::new(a.clone(), model.sigma_sq()).unwrap();
        let gamma = noise.gamma();
        let q: f64 = (0..n).map(|t| ch.gain_sq()[t] * model.sigma_sq()[t] * a[t]).sum();
        let closed = p_x / (1.0 + gamma * q);
        assert!((mmse_woodbury(&spec, &ch, &alloc, &noise).unwrap() - closed).abs() < 1e-12);
        let grad = mmse_gradient(&spec, &ch, &alloc, &noise).unwrap();
        for t in 0..n {
            let by_hand = -gamma * ch.gain_sq()[t] * model.sigma_sq()[t] * p_x / (1.0 + gamma * q).powi(2);
            assert!((grad[t] - by_hand).abs() <= 1e-10 * by_hand.abs().max(1e-12));
        }
    }

    #[test]
    fn saturated_slot_has_vanishing_gradient() {
        let model = CovarianceModel::new(CMatrix::identity(3, 3)).unwrap();
        let spec = model.reduced_evd();
        let alloc = PowerAllocation::new(vec![1.0, 1e12, 1.0], model.sigma_sq()).unwrap();
        let grad = mmse_gradient(&spec, &ChannelTrace::unit(3), &alloc, &NoiseModel::new(1.0).unwrap()).unwrap();
        assert!(grad[1].abs() < 1e-20);
        assert!(grad[0] < -0.1);
    }

    #[test]
    fn sampled_lowpass_reference_value() {
        let (n, s, p_x) = (16, 4, 16.0);
        let noise = NoiseModel::new(0.001).unwrap();
        let ch = ChannelTrace::unit(n);
        let mse = mmse_sampled_lowpass(n, s, 3, &[1.0; 4], &ch, &noise, p_x).unwrap();
        assert!((mse - 16.0 / 1001.0).abs() < 1e-14);
        assert!((normalized(mse, p_x) - 9.99e-4).abs() < 1e-6);
        let zero = mmse_sampled_lowpass(n, s, 3, &[0.0; 4], &ch, &noise, p_x).unwrap();
        assert!((zero - p_x).abs() < 1e-12);
    }

    #[test]
    fn sampled_lowpass_matches_embedded_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, s, p_x) = (12, 3, 12.0);
        let model = build_lowpass_cwss(n, s, p_x).unwrap();
        let spec = model.reduced_evd();
        let noise = NoiseModel::new(0.01).unwrap();
        for t_d in 0..4 {
            let ch = random_channel(n, &mut rng);
            let bar: Vec<f64> = (0..s).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut a = vec![0.0; n];
            for r in 0..s {
                a[4 * r + t_d] = bar[r];
            }
            let alloc = PowerAllocation::new(a, model.sigma_sq()).unwrap();
            let closed = mmse_sampled_lowpass(n, s, t_d, &bar, &ch, &noise, p_x).unwrap();
            let direct = mmse_direct(&model, &ch, &alloc, &noise).unwrap();
            let wood = mmse_woodbury(&spec, &ch, &alloc, &noise).unwrap();
            assert!((closed - direct).abs() < 1e-9, "{closed} vs {direct}");
            assert!((closed - wood).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_lowpass_errors() {
        let ch = ChannelTrace::unit(16);
        let noise = NoiseModel::new(0.001).unwrap();
        assert!(matches!(
            mmse_sampled_lowpass(16, 4, 4, &[1.0; 4], &ch, &noise, 16.0),
            Err(Error::DelayOutOfRange { .. })
        ));
        assert!(matches!(
            mmse_sampled_lowpass(16, 5, 0, &[1.0; 5], &ch, &noise, 16.0),
            Err(Error::RankError(_))
        ));
    }

    #[test]
    fn lower_bound_requires_flat_spectrum() {
        let model = random_haar_covariance(4, &[2.0, 1.0], 1).unwrap();
        let spec = model.reduced_evd();
        let alloc = PowerAllocation::zeros(4);
        let r = lower_bound_flat(
            &spec,
            model.sigma_sq(),
            &ChannelTrace::unit(4),
            &alloc,
            &NoiseModel::new(1.0).unwrap(),
        );
        assert!(matches!(r, Err(Error::FlatSpectrumRequired(_))));
    }

    #[test]
    fn lower_bound_zero_allocation_is_total_power() {
        let model = random_haar_covariance(6, &[1.5, 1.5, 1.5], 2).unwrap();
        let spec = model.reduced_evd();
        let lb = lower_bound_flat(
            &spec,
            model.sigma_sq(),
            &ChannelTrace::unit(6),
            &PowerAllocation::zeros(6),
            &NoiseModel::new(0.1).unwrap(),
        )
        .unwrap();
        assert!((lb - 4.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = CovarianceModel::new(CMatrix::identity(3, 3)).unwrap();
        let r = mmse_direct(
            &model,
            &ChannelTrace::unit(4),
            &PowerAllocation::zeros(3),
            &NoiseModel::new(1.0).unwrap(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
