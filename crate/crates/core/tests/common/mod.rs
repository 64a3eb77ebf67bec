#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use eh_allocate::signal::{CMatrix, C64};

/// Trace of the posterior covariance `(I + gamma K G)^{-1} K`, `G = diag(|h_t|^2 a_t)`,
/// by a dense LU solve; independent of the library's reduced form and free of
/// the cancellation in `tr K - tr(K D^H K_y^{-1} D K)`.
pub fn oracle_mse(k: &CMatrix, h: &[C64], a: &[f64], sigma_w_sq: f64) -> f64 {
    let n = k.nrows();
    let g: Vec<f64> = h.iter().zip(a).map(|(h, a)| h.norm_sqr() * a).collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let v = k[(i, j)] * (g[j] / sigma_w_sq);
        if i == j {
            v + C64::new(1.0, 0.0)
        } else {
            v
        }
    });
    let post = m.lu().solve(k).expect("I + gamma K G is invertible for PSD K");
    (0..n).map(|t| post[(t, t)].re).sum()
}

pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn fading(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| complex_gaussian(rng)).collect()
}

/// `B B^H` for a Gaussian `B`, scaled to trace `n`.
pub fn random_correlated(rng: &mut impl Rng, n: usize) -> CMatrix {
    let b = CMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    let k = &b * b.adjoint();
    let tr: f64 = (0..n).map(|t| k[(t, t)].re).sum();
    k.map(|x| x * (n as f64 / tr))
}

/// Packets of random size at random slots; never all zero.
pub fn arrivals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let p = rng.random_range(0.2..0.9);
    let mut e: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            }
        })
        .collect();
    if e.iter().all(|&x| x == 0.0) {
        let t = rng.random_range(0..n);
        e[t] = 1.0;
    }
    e
}

/// A random consumed-energy profile satisfying every prefix bound and
/// spending the total exactly.
pub fn feasible_profile(rng: &mut impl Rng, e: &[f64]) -> Vec<f64> {
    let n = e.len();
    let total: f64 = e.iter().sum();
    let shape = [0.2, 1.0, 3.0][rng.random_range(0..3)];
    let mut j = vec![0.0; n];
    let mut cum = 0.0;
    let mut used = 0.0;
    for t in 0..n {
        cum += e[t];
        j[t] = if t + 1 == n {
            total - used
        } else {
            (cum - used).max(0.0) * rng.random::<f64>().powf(shape)
        };
        used += j[t];
    }
    j
}

/// Sorted-descending prefix sums of `a` never exceed those of `b`; totals agree.
pub fn majorized_by(a: &[f64], b: &[f64], tol: f64) -> bool {
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| y.partial_cmp(x).unwrap());
        s
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let (mut pa, mut pb) = (0.0, 0.0);
    for k in 0..sa.len() {
        pa += sa[k];
        pb += sb[k];
        if pa > pb + tol {
            return false;
        }
    }
    (pa - pb).abs() <= tol
}

pub fn causal_ok(j: &[f64], e: &[f64], tol: f64) -> bool {
    let (mut cj, mut ce) = (0.0, 0.0);
    for t in 0..j.len() {
        cj += j[t];
        ce += e[t];
        if j[t] < -tol || cj > ce + tol {
            return false;
        }
    }
    (cj - ce).abs() <= tol
}

pub fn rel_err(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)
}
