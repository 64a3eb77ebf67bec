//! Primal-dual interior-point method over a [`ReducedProblem`].
//!
//! Works in the scaled variables `x_j = J_{slot_j} / E_tot`. The inequality
//! block is `-x <= 0` and `prefix_p(x) <= bound_p`; the single equality is
//! `sum x = 1`. Prefix-sum constraints give `G^T diag(d) G` the closed form
//! `D[max(j, k)]` with `D` the suffix sums of `d`, so each Newton step costs
//! one dense Cholesky of the objective Hessian plus that term, or a
//! tridiagonal solve when the Hessian is diagonal.
//!
//! Once the duality gap is small the active set read off the iterate is
//! handed to an equality-constrained Newton refinement; a refined point with
//! correctly signed multipliers is an exact KKT point and ends the run.

use nalgebra::{DMatrix, DVector};

use super::objective::{Hessian, SlotObjective};
use super::region::{prefix_sums, ReducedProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmOptions {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            max_iter: 200,
            gap_tol: 1e-14,
            feas_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub x: Vec<f64>,
    pub lam_nonneg: Vec<f64>,
    pub lam_caps: Vec<f64>,
    pub iterations: usize,
    /// Active-set refinement of the final iterate, when it certifies.
    pub polished: Option<Vec<f64>>,
}

/// Objective seen through the scaling `a_t = x_j E_tot / sigma_t^2`.
pub(crate) struct Scaled<'a> {
    obj: &'a dyn SlotObjective,
    prob: &'a ReducedProblem,
    factor: Vec<f64>,
}

impl<'a> Scaled<'a> {
    pub fn new(obj: &'a dyn SlotObjective, prob: &'a ReducedProblem) -> Self {
        let factor = prob.weights.iter().map(|w| prob.total / w).collect();
        Scaled { obj, prob, factor }
    }

    pub fn eval(&self, x: &[f64], hess: bool) -> Result<(f64, Vec<f64>, Option<Hessian>)> {
        let a = self.prob.expand(x);
        let slots = &self.prob.slots;
        let ev = self.obj.evaluate(&a, hess.then_some(slots.as_slice()))?;
        if !ev.value.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        let g = slots.iter().zip(&self.factor).map(|(&t, &c)| ev.grad[t] * c).collect();
        let f = &self.factor;
        let h = ev.hess.map(|h| match h {
            Hessian::Dense(h) => Hessian::Dense(DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * f[i] * f[j])),
            Hessian::Diagonal(d) => Hessian::Diagonal(d.iter().zip(f).map(|(v, c)| v * c * c).collect()),
        });
        Ok((ev.value, g, h))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `sum_{i : caps[i].index >= j} v_i` for every `j`.
fn cap_suffix(prob: &ReducedProblem, v: &[f64]) -> Vec<f64> {
    let m = prob.m();
    let mut acc = vec![0.0; m + 1];
    for (cap, &vi) in prob.caps.iter().zip(v) {
        acc[cap.index] += vi;
    }
    for j in (0..m).rev() {
        acc[j] += acc[j + 1];
    }
    acc.truncate(m);
    acc
}

struct Point {
    x: Vec<f64>,
    lam_nn: Vec<f64>,
    lam_c: Vec<f64>,
    nu: f64,
}

struct Residual {
    dual: Vec<f64>,
    pri: f64,
    gap: f64,
    norm: f64,
}

fn residual(prob: &ReducedProblem, p: &Point, g: &[f64], t: f64) -> Residual {
    let (sx, sc) = prob.slacks(&p.x);
    let up = cap_suffix(prob, &p.lam_c);
    let dual: Vec<f64> = (0..prob.m()).map(|j| g[j] - p.lam_nn[j] + up[j] + p.nu).collect();
    let pri = p.x.iter().sum::<f64>() - 1.0;
    let mut gap = 0.0;
    let mut norm = dual.iter().map(|d| d * d).sum::<f64>() + pri * pri;
    for (l, s) in p.lam_nn.iter().zip(&sx).chain(p.lam_c.iter().zip(&sc)) {
        gap += l * s;
        let rc = l * s - 1.0 / t;
        norm += rc * rc;
    }
    Residual {
        dual,
        pri,
        gap,
        norm: norm.sqrt(),
    }
}

fn strictly_interior(prob: &ReducedProblem, x: &[f64]) -> bool {
    let (sx, sc) = prob.slacks(x);
    sx.iter().chain(&sc).all(|&s| s > 0.0)
}

pub(crate) fn solve(scaled: &Scaled, prob: &ReducedProblem, opts: IpmOptions) -> Result<IpmOutcome> {
    let m = prob.m();
    let nc = prob.caps.len();
    if m == 1 {
        return Ok(IpmOutcome {
            x: vec![1.0],
            lam_nonneg: vec![0.0],
            lam_caps: vec![],
            iterations: 0,
            polished: Some(vec![1.0]),
        });
    }
    let ncon = (m + nc) as f64;
    let x = prob.interior_point();
    let (f0, g0, _) = scaled.eval(&x, false)?;
    let ref0 = f0.abs() + inf_norm(&g0);
    let mu0 = inf_norm(&g0).max(f64::MIN_POSITIVE) / ncon;
    let (sx, sc) = prob.slacks(&x);
    let lam_nn: Vec<f64> = sx.iter().map(|s| mu0 / s).collect();
    let lam_c: Vec<f64> = sc.iter().map(|s| mu0 / s).collect();
    let up = cap_suffix(prob, &lam_c);
    let nu = -(0..m).map(|j| g0[j] - lam_nn[j] + up[j]).sum::<f64>() / m as f64;
    let mut p = Point { x, lam_nn, lam_c, nu };

    let mut iterations = 0;
    let mut polished = None;
    // relative gap at which the next active-set refinement is attempted
    let mut next_polish = 1e-8;
    let snapshot = |p: &Point, iterations| IpmOutcome {
        x: p.x.clone(),
        lam_nonneg: p.lam_nn.clone(),
        lam_caps: p.lam_c.clone(),
        iterations,
        polished: None,
    };
    while iterations < opts.max_iter {
        let (f, g, h) = scaled.eval(&p.x, true)?;
        let h = h.expect("hessian requested");
        let gnorm = inf_norm(&g);
        let reference = (f.abs() + gnorm).max(1e-8 * ref0).max(f64::MIN_POSITIVE);
        let r = residual(prob, &p, &g, 1.0);
        if r.gap <= opts.gap_tol * reference && inf_norm(&r.dual) <= opts.feas_tol * reference && r.pri.abs() <= 1e-14 {
            break;
        }
        if r.gap <= next_polish * reference {
            next_polish = 1e-2 * r.gap / reference;
            polished = polish(scaled, prob, &snapshot(&p, iterations))?;
            if polished.is_some() {
                break;
            }
        }
        iterations += 1;
        let t = 10.0 * ncon / r.gap.max(f64::MIN_POSITIVE);
        let (sx, sc) = prob.slacks(&p.x);

        let d_c: Vec<f64> = p.lam_c.iter().zip(&sc).map(|(l, s)| l / s).collect();
        let inv_c: Vec<f64> = sc.iter().map(|s| 1.0 / (t * s)).collect();
        let bsuf = cap_suffix(prob, &inv_c);
        let rhs: Vec<f64> = (0..m).map(|j| -g[j] - p.nu + 1.0 / (t * sx[j]) - bsuf[j]).collect();

        let structured = if let Hessian::Diagonal(hd) = &h {
            let delta: Vec<f64> = (0..m).map(|j| hd[j] + p.lam_nn[j] / sx[j]).collect();
            let mut d_full = vec![0.0; m];
            for (cap, dc) in prob.caps.iter().zip(&d_c) {
                d_full[cap.index] += dc;
            }
            solve_prefix(&delta, &d_full, &rhs).zip(solve_prefix(&delta, &d_full, &vec![1.0; m]))
        } else {
            None
        };
        let (y1, y2) = match structured {
            Some(pair) => pair,
            None => {
                let dsuf = cap_suffix(prob, &d_c);
                let mut hpd = h.into_dense();
                for j in 0..m {
                    for k in 0..m {
                        hpd[(j, k)] += dsuf[j.max(k)];
                    }
                    hpd[(j, j)] += p.lam_nn[j] / sx[j];
                }
                let chol = factor(hpd)?;
                let y1 = chol.solve(&DVector::from_vec(rhs));
                let y2 = chol.solve(&DVector::from_element(m, 1.0));
                (y1.as_slice().to_vec(), y2.as_slice().to_vec())
            }
        };
        let dnu = (y1.iter().sum::<f64>() + r.pri) / y2.iter().sum::<f64>();
        let dx: Vec<f64> = (0..m).map(|j| y1[j] - dnu * y2[j]).collect();
        let pdx = prefix_sums(&dx);
        let dlam_nn: Vec<f64> = (0..m)
            .map(|j| -p.lam_nn[j] + (1.0 / t - p.lam_nn[j] * dx[j]) / sx[j])
            .collect();
        let dlam_c: Vec<f64> = prob
            .caps
            .iter()
            .enumerate()
            .map(|(i, cap)| -p.lam_c[i] + (1.0 / t + p.lam_c[i] * pdx[cap.index]) / sc[i])
            .collect();

        let mut step: f64 = 1.0;
        for (l, d) in p.lam_nn.iter().zip(&dlam_nn).chain(p.lam_c.iter().zip(&dlam_c)) {
            if *d < 0.0 {
                step = step.min(-l / d);
            }
        }
        step *= 0.99;
        let trial = |s: f64| Point {
            x: p.x.iter().zip(&dx).map(|(x, d)| x + s * d).collect(),
            lam_nn: p.lam_nn.iter().zip(&dlam_nn).map(|(l, d)| l + s * d).collect(),
            lam_c: p.lam_c.iter().zip(&dlam_c).map(|(l, d)| l + s * d).collect(),
            nu: p.nu + s * dnu,
        };
        while step > 1e-20 && !strictly_interior(prob, &trial(step).x) {
            step *= 0.5;
        }
        let base = residual(prob, &p, &g, t).norm;
        let mut accepted = None;
        while step > 1e-20 {
            let q = trial(step);
            if let Ok((_, gq, _)) = scaled.eval(&q.x, false) {
                if residual(prob, &q, &gq, t).norm <= (1.0 - 0.01 * step) * base {
                    accepted = Some(q);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(q) => p = q,
            None => break,
        }
    }
    if polished.is_none() {
        polished = polish(scaled, prob, &snapshot(&p, iterations))?;
    }
    Ok(IpmOutcome {
        x: p.x,
        lam_nonneg: p.lam_nn,
        lam_caps: p.lam_c,
        iterations,
        polished,
    })
}

/// Solves `(diag(delta) + L^T diag(d) L) y = r` with `L` the prefix-sum
/// operator. In the prefix variables `z = L y` the system is tridiagonal.
fn solve_prefix(delta: &[f64], d: &[f64], r: &[f64]) -> Option<Vec<f64>> {
    let m = delta.len();
    let next = |v: &[f64], j: usize| if j + 1 < m { v[j + 1] } else { 0.0 };
    let diag: Vec<f64> = (0..m).map(|j| delta[j] + next(delta, j) + d[j]).collect();
    let rhs: Vec<f64> = (0..m).map(|j| r[j] - next(r, j)).collect();
    // LDL^T sweep; off-diagonal entries are -delta[j + 1]
    let mut piv = vec![0.0; m];
    let mut z = vec![0.0; m];
    for j in 0..m {
        let (carry, zc) = if j == 0 {
            (0.0, 0.0)
        } else {
            (delta[j] * delta[j] / piv[j - 1], delta[j] * z[j - 1] / piv[j - 1])
        };
        piv[j] = diag[j] - carry;
        if !(piv[j] > 1e-300) {
            return None;
        }
        z[j] = rhs[j] + zc;
    }
    for j in (0..m).rev() {
        let up = if j + 1 < m { delta[j + 1] * z[j + 1] } else { 0.0 };
        z[j] = (z[j] + up) / piv[j];
    }
    let y: Vec<f64> = (0..m).map(|j| z[j] - if j > 0 { z[j - 1] } else { 0.0 }).collect();
    y.iter().all(|v| v.is_finite()).then_some(y)
}

fn factor(mut a: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = a
        .diagonal()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(c) = a.clone().cholesky() {
            return Ok(c);
        }
        let next = if shift == 0.0 { 1e-14 * scale } else { shift * 10.0 };
        for j in 0..a.nrows() {
            a[(j, j)] += next - shift;
        }
        shift = next;
    }
    Err(Error::Numerical("Newton system is not positive definite".into()))
}

/// Newton refinement on the active set suggested by the interior-point
/// iterate. Returns a point with active bounds exactly at zero when the
/// refined point is feasible, has correctly signed multipliers and does not
/// increase the objective.
fn polish(scaled: &Scaled, prob: &ReducedProblem, out: &IpmOutcome) -> Result<Option<Vec<f64>>> {
    let m = prob.m();
    if m == 1 {
        return Ok(Some(vec![1.0]));
    }
    let (f_ipm, g, _) = scaled.eval(&out.x, false)?;
    let gref = inf_norm(&g).max(f64::MIN_POSITIVE);
    let (sx, sc) = prob.slacks(&out.x);
    let zero: Vec<usize> = (0..m).filter(|&j| out.lam_nonneg[j] / gref > sx[j]).collect();
    let tight: Vec<usize> = (0..prob.caps.len())
        .filter(|&i| out.lam_caps[i] / gref > sc[i])
        .collect();
    if zero.len() >= m {
        return Ok(None);
    }
    let mut x = DVector::from_vec(out.x.clone());
    for &j in &zero {
        x[j] = 0.0;
    }
    let (w_zero, w_caps) = match newton_blocks(scaled, prob, &zero, &tight, &mut x)? {
        Some(w) => w,
        None => {
            x = DVector::from_vec(out.x.clone());
            for &j in &zero {
                x[j] = 0.0;
            }
            match newton_dense(scaled, prob, &zero, &tight, &mut x)? {
                Some(w) => w,
                None => return Ok(None),
            }
        }
    };
    for &j in &zero {
        x[j] = 0.0;
    }
    let tol = 1e-8 * gref;
    if w_zero.iter().any(|&w| w > tol) || w_caps.iter().any(|&w| w < -tol) {
        return Ok(None);
    }
    if x.iter().any(|&v| v < -1e-13) {
        return Ok(None);
    }
    let x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let pre = prefix_sums(&x);
    if prob.caps.iter().any(|c| pre[c.index] > c.bound + 1e-13) {
        return Ok(None);
    }
    let (f_pol, _, _) = scaled.eval(&x, false)?;
    if f_pol > f_ipm + 1e-12 * (f_ipm.abs() + gref) {
        return Ok(None);
    }
    Ok(Some(x))
}

type Weights = (Vec<f64>, Vec<f64>);

/// Equality-constrained Newton iterations on the active set with a dense
/// KKT system. Returns the multipliers of the fixed zeros and tight caps.
fn newton_dense(
    scaled: &Scaled,
    prob: &ReducedProblem,
    zero: &[usize],
    tight: &[usize],
    x: &mut DVector<f64>,
) -> Result<Option<Weights>> {
    let m = prob.m();
    let r = zero.len() + tight.len() + 1;
    let mut a = DMatrix::zeros(r, m);
    let mut b = DVector::zeros(r);
    for (row, &j) in zero.iter().enumerate() {
        a[(row, j)] = 1.0;
    }
    for (row, &i) in tight.iter().enumerate() {
        let cap = prob.caps[i];
        for j in 0..=cap.index {
            a[(zero.len() + row, j)] = 1.0;
        }
        b[zero.len() + row] = cap.bound;
    }
    for j in 0..m {
        a[(r - 1, j)] = 1.0;
    }
    b[r - 1] = 1.0;

    let mut w = DVector::zeros(r);
    for _ in 0..30 {
        let (_, gx, h) = scaled.eval(x.as_slice(), true)?;
        let h = h.expect("hessian requested").into_dense();
        let delta = 1e-13 * (1.0 + h.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let mut kkt = DMatrix::zeros(m + r, m + r);
        kkt.view_mut((0, 0), (m, m)).copy_from(&h);
        for j in 0..m {
            kkt[(j, j)] += delta;
        }
        kkt.view_mut((m, 0), (r, m)).copy_from(&a);
        kkt.view_mut((0, m), (m, r)).copy_from(&a.transpose());
        let resid = &b - &a * &*x;
        let rhs = DVector::from_fn(m + r, |i, _| if i < m { -gx[i] } else { resid[i - m] });
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return Ok(None);
        };
        let dx = sol.rows(0, m).into_owned();
        w = sol.rows(m, r).into_owned();
        if !dx.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        *x += &dx;
        if dx.amax() <= 1e-15 {
            break;
        }
    }
    let w_zero = w.rows(0, zero.len()).iter().copied().collect();
    let w_caps = w.rows(zero.len(), tight.len()).iter().copied().collect();
    Ok(Some((w_zero, w_caps)))
}

/// The same iterations when the Hessian is diagonal: tight caps cut the
/// slots into blocks with fixed sums, each solved in closed form. Returns
/// `None`, leaving `x` untouched, when the Hessian is dense or some block has
/// no free slot.
fn newton_blocks(
    scaled: &Scaled,
    prob: &ReducedProblem,
    zero: &[usize],
    tight: &[usize],
    x: &mut DVector<f64>,
) -> Result<Option<Weights>> {
    let m = prob.m();
    let mut fixed = vec![false; m];
    for &j in zero {
        fixed[j] = true;
    }
    let mut ends: Vec<(usize, f64)> = tight
        .iter()
        .map(|&i| (prob.caps[i].index, prob.caps[i].bound))
        .collect();
    ends.sort_by_key(|e| e.0);
    ends.dedup_by_key(|e| e.0);
    ends.push((m - 1, 1.0));
    let mut ranges = Vec::with_capacity(ends.len());
    let mut lo = 0;
    let mut prev = 0.0;
    for &(hi, bound) in &ends {
        if hi < lo || !(lo..=hi).any(|j| !fixed[j]) {
            return Ok(None);
        }
        ranges.push((lo, hi, bound - prev));
        lo = hi + 1;
        prev = bound;
    }
    let mut level = vec![0.0; ranges.len()];
    for _ in 0..30 {
        let (_, g, h) = scaled.eval(x.as_slice(), true)?;
        let Some(Hessian::Diagonal(h)) = h else {
            return Ok(None);
        };
        let delta = 1e-13 * (1.0 + h.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let mut step = vec![0.0; m];
        for (b, &(lo, hi, target)) in ranges.iter().enumerate() {
            let free = || (lo..=hi).filter(|&j| !fixed[j]);
            let resid = target - (lo..=hi).map(|j| x[j]).sum::<f64>();
            let inv: f64 = free().map(|j| 1.0 / (h[j] + delta)).sum();
            let tilt: f64 = free().map(|j| g[j] / (h[j] + delta)).sum();
            level[b] = -(resid + tilt) / inv;
            for j in free() {
                step[j] = -(g[j] + level[b]) / (h[j] + delta);
            }
        }
        if !step.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        let size = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for j in 0..m {
            x[j] += step[j];
        }
        if size <= 1e-15 {
            break;
        }
    }
    let (_, g, _) = scaled.eval(x.as_slice(), false)?;
    let block_of = |j: usize| ranges.iter().position(|r| j <= r.1).expect("blocks cover all slots");
    let w_zero = zero.iter().map(|&j| -g[j] - level[block_of(j)]).collect();
    let w_caps = tight
        .iter()
        .map(|&i| {
            let b = ranges
                .iter()
                .position(|r| r.1 == prob.caps[i].index)
                .expect("cap ends a block");
            level[b] - level[b + 1]
        })
        .collect();
    Ok(Some((w_zero, w_caps)))
}
