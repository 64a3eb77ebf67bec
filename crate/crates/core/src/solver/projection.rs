//! Euclidean projection onto a feasible region.
//!
//! Slots with zero signal variance are pinned to zero in both methods, the
//! same convention the solvers use.

use super::ipm::{self, IpmOptions, Scaled};
use super::objective::DistanceObjective;
use super::region::{FeasibleRegion, ReducedProblem, RegionMode};
use crate::error::Result;

/// Projection computed as a small quadratic program.
pub fn project_exact(y: &[f64], region: &FeasibleRegion) -> Result<Vec<f64>> {
    let prob = ReducedProblem::build(region)?;
    let obj = DistanceObjective { target: y };
    let scaled = Scaled::new(&obj, &prob);
    let out = ipm::solve(&scaled, &prob, IpmOptions::default())?;
    let x = out.polished.unwrap_or(out.x);
    Ok(prob.expand(&x))
}

#[derive(Debug, Clone)]
pub struct DykstraOutcome {
    pub a: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

struct HalfSpace {
    end: usize,
    bound: f64,
    equality: bool,
}

/// Dykstra's alternating projections over the causality half-spaces, the
/// total-energy hyperplane and the nonnegative orthant.
pub fn project_dykstra(y: &[f64], region: &FeasibleRegion, tol: f64, max_sweeps: usize) -> DykstraOutcome {
    let n = region.n();
    let w = region.sigma_sq();
    let mut sets: Vec<HalfSpace> = Vec::new();
    if region.mode() == RegionMode::Causal {
        for k in 0..n.saturating_sub(1) {
            sets.push(HalfSpace {
                end: k + 1,
                bound: region.energy().cumulative()[k],
                equality: false,
            });
        }
    }
    sets.push(HalfSpace {
        end: n,
        bound: region.energy().total(),
        equality: true,
    });
    let norms: Vec<f64> = sets
        .iter()
        .map(|s| w[..s.end].iter().map(|v| v * v).sum::<f64>())
        .collect();

    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; n]; sets.len() + 1];
    let scale = 1.0 + y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let before = x.clone();
        for (i, set) in sets.iter().enumerate() {
            let z: Vec<f64> = x.iter().zip(&incr[i]).map(|(a, p)| a + p).collect();
            let mut proj = z.clone();
            if norms[i] > 0.0 {
                let lhs: f64 = z[..set.end].iter().zip(w).map(|(a, s)| a * s).sum();
                let excess = lhs - set.bound;
                if set.equality || excess > 0.0 {
                    let step = excess / norms[i];
                    for t in 0..set.end {
                        proj[t] -= step * w[t];
                    }
                }
            }
            for t in 0..n {
                incr[i][t] = z[t] - proj[t];
            }
            x = proj;
        }
        let last = sets.len();
        let z: Vec<f64> = x.iter().zip(&incr[last]).map(|(a, p)| a + p).collect();
        let proj: Vec<f64> = z
            .iter()
            .zip(w)
            .map(|(&v, &s)| if s > 0.0 { v.max(0.0) } else { 0.0 })
            .collect();
        for t in 0..n {
            incr[last][t] = z[t] - proj[t];
        }
        x = proj;
        let change = x.iter().zip(&before).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if change <= tol * scale {
            converged = true;
            break;
        }
    }
    DykstraOutcome {
        a: x,
        sweeps,
        converged,
    }
}
