//! Covariance models for the unknown signal and their reduced spectral
//! decompositions.
//!
//! Every builder returns a validated [`CovarianceModel`]: Hermitian, PSD and
//! with `trace(K) = P_x`. Builders that know their eigenvectors in closed form
//! (circulant models use the DFT basis, rank-one and Haar models carry their
//! own basis) attach that decomposition so [`CovarianceModel::reduced_evd`]
//! does not have to recover it numerically.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// An eigenvalue is treated as nonzero iff it exceeds this fraction of the
/// largest eigenvalue.
pub const RANK_THRESHOLD: f64 = 1e-10;
/// Relative Frobenius tolerance on `K - K^H`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue, relative to `P_x`.
pub const PSD_TOL: f64 = 1e-10;
/// Tolerance on the norm of the rank-one direction.
pub const UNIT_TOL: f64 = 1e-12;

/// Reduced eigenvalue decomposition `K = U diag(lambda) U^H`.
///
/// `lambda` is sorted in descending order. `omega[i]` is the column index the
/// `i`-th retained eigenpair had in the full basis; for circulant models this
/// is the DFT column, so `omega = [0, .., s-1]` describes a low-pass signal.
#[derive(Debug, Clone)]
pub struct SpectrumDecomposition {
    pub u: CMatrix,
    pub lambda: Vec<f64>,
    pub omega: Vec<usize>,
}

impl SpectrumDecomposition {
    /// Keeps the eigenpairs above the rank threshold, sorted descending
    /// (stable, so equal eigenvalues keep their basis order).
    fn from_full(basis: &CMatrix, eigenvalues: &[f64]) -> Self {
        let max = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let mut keep: Vec<usize> = (0..eigenvalues.len())
            .filter(|&k| eigenvalues[k] > RANK_THRESHOLD * max)
            .collect();
        keep.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
        let n = basis.nrows();
        let mut u = CMatrix::zeros(n, keep.len());
        for (col, &k) in keep.iter().enumerate() {
            u.set_column(col, &basis.column(k));
        }
        SpectrumDecomposition {
            u,
            lambda: keep.iter().map(|&k| eigenvalues[k]).collect(),
            omega: keep,
        }
    }

    /// Reduced decomposition of a circulant matrix with DFT-indexed
    /// eigenvalues `z` (column `k` of the DFT matrix carries `z[k]`).
    pub fn from_dft(z: &[f64]) -> Self {
        Self::from_full(&dft_matrix(z.len()), z)
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn total_power(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// True when all retained eigenvalues agree within `rel_tol` of the largest.
    pub fn is_flat(&self, rel_tol: f64) -> bool {
        let max = self.lambda.iter().cloned().fold(0.0_f64, f64::max);
        let min = self.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min <= rel_tol * max
    }

    pub fn reconstruct(&self) -> CMatrix {
        let mut scaled = self.u.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(&self.lambda) {
            col *= C64::new(l, 0.0);
        }
        &scaled * self.u.adjoint()
    }
}

/// Covariance matrix `K_x` of the zero-mean proper complex Gaussian signal.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    k: CMatrix,
    sigma_sq: Vec<f64>,
    p_x: f64,
    known_spectrum: Option<SpectrumDecomposition>,
}

impl CovarianceModel {
    /// Validates an arbitrary matrix as a covariance model.
    pub fn new(k: CMatrix) -> Result<Self> {
        let k = hermitian_part(k)?;
        let eig = SymmetricEigen::new(k.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let model = Self::assemble(k, None)?;
        if min < -PSD_TOL * model.p_x {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(model)
    }

    fn assemble(k: CMatrix, known_spectrum: Option<SpectrumDecomposition>) -> Result<Self> {
        let sigma_sq: Vec<f64> = k.diagonal().iter().map(|c| c.re.max(0.0)).collect();
        let p_x: f64 = sigma_sq.iter().sum();
        if !(p_x > 0.0 && p_x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "total signal power must be positive and finite, got {p_x}"
            )));
        }
        Ok(CovarianceModel {
            k,
            sigma_sq,
            p_x,
            known_spectrum,
        })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.k
    }

    /// Total power `P_x = trace(K)`.
    pub fn p_x(&self) -> f64 {
        self.p_x
    }

    /// Per-slot variances, the diagonal of `K`.
    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    /// True when every off-diagonal entry is zero within `rel_tol * P_x`.
    pub fn is_diagonal(&self, rel_tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| i == j || self.k[(i, j)].norm() <= rel_tol * self.p_x))
    }

    pub fn reduced_evd(&self) -> SpectrumDecomposition {
        if let Some(spec) = &self.known_spectrum {
            return spec.clone();
        }
        let eig = SymmetricEigen::new(self.k.clone());
        let values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        SpectrumDecomposition::from_full(&eig.eigenvectors, &values)
    }

    pub fn to_document(&self) -> CovarianceDocument {
        let n = self.n();
        CovarianceDocument {
            n,
            re: (0..n).map(|i| (0..n).map(|j| self.k[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| self.k[(i, j)].im).collect()).collect(),
        }
    }

    pub fn from_document(doc: &CovarianceDocument) -> Result<Self> {
        let n = doc.n;
        if doc.re.len() != n || doc.im.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: doc.re.len().min(doc.im.len()),
            });
        }
        let mut k = CMatrix::zeros(n, n);
        for i in 0..n {
            if doc.re[i].len() != n || doc.im[i].len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: doc.re[i].len().min(doc.im[i].len()),
                });
            }
            for j in 0..n {
                k[(i, j)] = C64::new(doc.re[i][j], doc.im[i][j]);
            }
        }
        Self::new(k)
    }
}

/// JSON form of a covariance matrix: `{"n": .., "re": [[..]], "im": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDocument {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

fn hermitian_part(k: CMatrix) -> Result<CMatrix> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    if k.nrows() == 0 {
        return Err(Error::InvalidParameter("empty covariance matrix".into()));
    }
    if k.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidParameter("covariance has non-finite entries".into()));
    }
    let adj = k.adjoint();
    let asym = (&k - &adj).norm();
    let scale = k.norm();
    if asym > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(format!(
            "||K - K^H||_F = {asym:e} exceeds {HERMITIAN_TOL:e} * ||K||_F"
        )));
    }
    Ok((k + adj) * C64::new(0.5, 0.0))
}

/// Unitary DFT matrix, `F[t][k] = exp(-j 2 pi t k / n) / sqrt(n)` (0-based).
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |t, k| {
        // reduce the exponent first so large n keeps full angle precision
        let e = (t * k) % n;
        C64::from_polar(scale, -2.0 * PI * e as f64 / n as f64)
    })
}

fn circulant_from_row(v: &[C64]) -> CMatrix {
    let n = v.len();
    CMatrix::from_fn(n, n, |t, k| v[(k + n - t) % n])
}

/// Eigenvalues `z = sqrt(n) F v` of the circulant matrix with first row `v`.
pub fn circulant_eigenvalues(v: &[C64]) -> Vec<C64> {
    let n = v.len();
    (0..n)
        .map(|k| {
            v.iter()
                .enumerate()
                .map(|(m, &vm)| vm * C64::from_polar(1.0, -2.0 * PI * ((m * k) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Circulant (c.w.s.s.) covariance from its first row.
///
/// Returns the model together with the DFT-indexed eigenvalues.
pub fn build_circulant(first_row: &[C64]) -> Result<(CovarianceModel, Vec<f64>)> {
    let n = first_row.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty first row".into()));
    }
    let scale = first_row.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    for m in 0..n {
        let mirror = first_row[(n - m) % n].conj();
        if (first_row[m] - mirror).norm() > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotHermitian(format!(
                "first row entry {m} is not the conjugate of entry {}",
                (n - m) % n
            )));
        }
    }
    let z: Vec<f64> = circulant_eigenvalues(first_row).iter().map(|c| c.re).collect();
    let p_x = n as f64 * first_row[0].re;
    let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * p_x.abs() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let clamped: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
    let k = hermitian_part(circulant_from_row(first_row))?;
    let model = CovarianceModel::assemble(k, Some(SpectrumDecomposition::from_dft(&clamped)))?;
    Ok((model, z))
}

/// Circulant covariance `F diag(z) F^H` from DFT-indexed eigenvalues.
pub fn build_cwss_from_spectrum(z: &[f64]) -> Result<CovarianceModel> {
    let n = z.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    if z.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: z.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    // v = F^H z / sqrt(n)
    let row: Vec<C64> = (0..n)
        .map(|l| {
            z.iter()
                .enumerate()
                .map(|(k, &zk)| C64::from_polar(zk / n as f64, 2.0 * PI * ((l * k) % n) as f64 / n as f64))
                .sum()
        })
        .collect();
    let k = hermitian_part(circulant_from_row(&row))?;
    CovarianceModel::assemble(k, Some(SpectrumDecomposition::from_dft(z)))
}

/// Equicorrelated covariance `K(rho)`: `P_x/n` on the diagonal and
/// `rho * P_x / n` everywhere else.
pub fn build_static_correlation(n: usize, rho: f64, p_x: f64) -> Result<CovarianceModel> {
    check_dims(n, p_x)?;
    if !rho.is_finite() || rho > 1.0 || (n > 1 && rho * (n as f64 - 1.0) + 1.0 < -1e-15) {
        return Err(Error::RhoOutOfRange { rho, n });
    }
    let base = p_x / n as f64;
    let row: Vec<C64> = (0..n)
        .map(|m| C64::new(if m == 0 { base } else { rho * base }, 0.0))
        .collect();
    build_circulant(&row).map(|(model, _)| model)
}

/// Low-pass c.w.s.s. covariance: the first `s` DFT columns carry `P_x / s`
/// each, the rest zero.
pub fn build_lowpass_cwss(n: usize, s: usize, p_x: f64) -> Result<CovarianceModel> {
    check_dims(n, p_x)?;
    if s == 0 || s > n || n % s != 0 {
        return Err(Error::RankError(format!(
            "low-pass rank s = {s} must satisfy 1 <= s <= n and s | n (n = {n})"
        )));
    }
    let z: Vec<f64> = (0..n).map(|k| if k < s { p_x / s as f64 } else { 0.0 }).collect();
    build_cwss_from_spectrum(&z)
}

/// Rank-one (parameter estimation) covariance `P_x u u^H`.
pub fn build_rank_one(u: &[C64], p_x: f64) -> Result<CovarianceModel> {
    let n = u.len();
    check_dims(n, p_x)?;
    let norm = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit { norm });
    }
    let col = CMatrix::from_column_slice(n, 1, u);
    let k = (&col * col.adjoint()) * C64::new(p_x, 0.0);
    let spectrum = SpectrumDecomposition {
        u: col,
        lambda: vec![p_x],
        omega: vec![0],
    };
    CovarianceModel::assemble(hermitian_part(k)?, Some(spectrum))
}

/// Covariance `U diag(lambda) U^H` for a basis with orthonormal columns.
pub fn build_from_basis(u: &CMatrix, lambda: &[f64]) -> Result<CovarianceModel> {
    let (n, s) = u.shape();
    if s != lambda.len() {
        return Err(Error::DimensionMismatch {
            expected: s,
            found: lambda.len(),
        });
    }
    if s == 0 || s > n {
        return Err(Error::RankError(format!("rank {s} outside [1, {n}]")));
    }
    if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(
            "eigenvalues must be positive and finite".into(),
        ));
    }
    let gram = u.adjoint() * u;
    let defect = (gram - CMatrix::identity(s, s)).norm();
    if defect > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "basis columns are not orthonormal (defect {defect:e})"
        )));
    }
    let spectrum = SpectrumDecomposition::from_full(u, lambda);
    let k = hermitian_part(spectrum.reconstruct())?;
    CovarianceModel::assemble(k, Some(spectrum))
}

/// Haar-distributed `n x n` unitary: QR of an i.i.d. `CN(0, 1)` matrix with
/// each column of `Q` rotated by the phase of the matching `R` diagonal.
pub fn haar_unitary<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * scale, im * scale)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Covariance with a Haar-random eigenbasis and prescribed nonzero
/// eigenvalues; deterministic in `seed`.
pub fn random_haar_covariance(n: usize, lambda: &[f64], seed: u64) -> Result<CovarianceModel> {
    let s = lambda.len();
    if n == 0 || s == 0 || s > n {
        return Err(Error::RankError(format!("need 1 <= s <= n, got s = {s}, n = {n}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let u = haar_unitary(n, &mut rng);
    build_from_basis(&u.columns(0, s).into_owned(), lambda)
}

fn check_dims(n: usize, p_x: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("signal length must be positive".into()));
    }
    if !(p_x > 0.0 && p_x.is_finite()) {
        return Err(Error::InvalidParameter(format!("P_x must be positive, got {p_x}")));
    }
    Ok(())
}
