//! Projected gradient descent with Armijo backtracking; Dykstra projections.

use super::objective::SlotObjective;
use super::projection::project_dykstra;
use super::region::{FeasibleRegion, ReducedProblem};
use super::SolverOptions;
use crate::error::Result;

pub(crate) struct PgdOutcome {
    pub a: Vec<f64>,
    pub iterations: usize,
}

/// Spend each packet on arrival, carrying it past zero-variance slots.
pub(crate) fn greedy_start(region: &FeasibleRegion) -> Vec<f64> {
    let sigma = region.sigma_sq();
    let mut a = vec![0.0; region.n()];
    let mut carry = 0.0;
    for (t, &e) in region.energy().packets().iter().enumerate() {
        carry += e;
        if sigma[t] > 0.0 {
            a[t] = carry / sigma[t];
            carry = 0.0;
        }
    }
    a
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn solve(obj: &dyn SlotObjective, region: &FeasibleRegion, opts: &SolverOptions) -> Result<PgdOutcome> {
    ReducedProblem::build(region)?;
    let project = |y: &[f64]| project_dykstra(y, region, opts.dykstra_tol, opts.dykstra_max_sweeps).a;
    let mut a = project(&greedy_start(region));
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.pgd_max_iter {
        let ev = obj.evaluate(&a, None)?;
        let g = ev.grad;
        let probe: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - d).collect();
        let p = project(&probe);
        let stat = p.iter().zip(&a).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
        if stat <= opts.kkt_tol * (1.0 + inf_norm(&g)) {
            break;
        }
        iterations += 1;
        step *= 2.0;
        let mut moved = false;
        for _ in 0..80 {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - step * d).collect();
            let next = project(&trial);
            let decrease: f64 = g.iter().zip(next.iter().zip(&a)).map(|(d, (u, v))| d * (u - v)).sum();
            let f_next = obj.evaluate(&next, None)?.value;
            if f_next <= ev.value + 1e-4 * decrease {
                moved = next != a;
                a = next;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(PgdOutcome { a, iterations })
}
