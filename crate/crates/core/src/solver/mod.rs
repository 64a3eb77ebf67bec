//! Convex allocation solver over the causal (or relaxed) feasible region.

mod ipm;
mod multipliers;
mod nnls;
mod objective;
mod pgd;
mod projection;
mod region;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub(crate) use objective::{SeparableObjective, SlotObjective};
pub use projection::{project_dykstra, project_exact, DykstraOutcome};
pub use region::{check_feasible, EnergyTrace, FeasibilityReport, FeasibleRegion, RegionMode, FEASIBILITY_TOL};

use crate::error::{Error, Result};
use crate::estimator::{ChannelTrace, NoiseModel, PowerAllocation};
use crate::signal::SpectrumDecomposition;
use ipm::{IpmOptions, Scaled};
use objective::MmseObjective;
use region::ReducedProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    #[default]
    InteriorPoint,
    ProjectedGradient,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Stationarity tolerance, relative to `1 + ||grad||_inf`.
    pub kkt_tol: f64,
    pub ipm_max_iter: usize,
    pub pgd_max_iter: usize,
    pub dykstra_tol: f64,
    pub dykstra_max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: SolverMethod::InteriorPoint,
            kkt_tol: 1e-8,
            ipm_max_iter: 200,
            pgd_max_iter: 50_000,
            dykstra_tol: 1e-12,
            dykstra_max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    pub method: SolverMethod,
    pub converged: bool,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    /// Largest stationarity / complementary-slackness residual of the
    /// recovered multipliers, relative to `||grad||_inf`.
    pub kkt_residual: f64,
    /// `||P(a - grad) - a||_inf`.
    pub stationarity: f64,
    /// Whether the active-set refinement replaced the interior-point iterate.
    pub polished: bool,
    pub eta: Vec<f64>,
    pub nu: f64,
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub alloc: PowerAllocation,
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Minimizes the estimation error over the causal region.
pub fn solve_optimal(
    spectrum: &SpectrumDecomposition,
    channel: &ChannelTrace,
    region: &FeasibleRegion,
    noise: &NoiseModel,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_mmse(spectrum, channel, &region.with_mode(RegionMode::Causal), noise, opts)
}

/// Minimizes the estimation error under the total-energy constraint only.
pub fn solve_relaxed(
    spectrum: &SpectrumDecomposition,
    channel: &ChannelTrace,
    region: &FeasibleRegion,
    noise: &NoiseModel,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_mmse(spectrum, channel, &region.with_mode(RegionMode::TotalOnly), noise, opts)
}

fn solve_mmse(
    spectrum: &SpectrumDecomposition,
    channel: &ChannelTrace,
    region: &FeasibleRegion,
    noise: &NoiseModel,
    opts: &SolverOptions,
) -> Result<Solution> {
    let n = region.n();
    for len in [spectrum.n(), channel.n()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let obj = MmseObjective {
        spectrum,
        gain_sq: channel.gain_sq(),
        gamma: noise.gamma(),
    };
    minimize(&obj, region, opts)
}

/// Minimizes `sum_t coeff_t / (1 + rate_t a_t)` over `region`.
pub(crate) fn solve_separable(
    coeff: Vec<f64>,
    rate: Vec<f64>,
    region: &FeasibleRegion,
    opts: &SolverOptions,
) -> Result<Solution> {
    minimize(&SeparableObjective { coeff, rate }, region, opts)
}

/// `||P(a - grad) - a||_inf` with the exact projection onto `region`.
pub fn stationarity_residual(a: &[f64], grad: &[f64], region: &FeasibleRegion) -> Result<f64> {
    let probe: Vec<f64> = a.iter().zip(grad).map(|(x, g)| x - g).collect();
    let p = project_exact(&probe, region)?;
    Ok(p.iter().zip(a).fold(0.0, |m, (u, v)| m.max((u - v).abs())))
}

pub(crate) fn minimize(obj: &dyn SlotObjective, region: &FeasibleRegion, opts: &SolverOptions) -> Result<Solution> {
    let start = Instant::now();
    let (a, iterations, polished) = match opts.method {
        SolverMethod::InteriorPoint => {
            let prob = ReducedProblem::build(region)?;
            let scaled = Scaled::new(obj, &prob);
            let ipm_opts = IpmOptions {
                max_iter: opts.ipm_max_iter,
                ..IpmOptions::default()
            };
            let out = ipm::solve(&scaled, &prob, ipm_opts)?;
            match out.polished {
                Some(x) => (prob.expand(&x), out.iterations, true),
                None => (prob.expand(&out.x), out.iterations, false),
            }
        }
        SolverMethod::ProjectedGradient => {
            let out = pgd::solve(obj, region, opts)?;
            (out.a, out.iterations, false)
        }
    };
    let ev = obj.evaluate(&a, None)?;
    let mult = multipliers::recover(&a, &ev.grad, region);
    let stationarity = stationarity_residual(&a, &ev.grad, region)?;
    let alloc = PowerAllocation::new(a, region.sigma_sq())?;
    let feasible = check_feasible(&alloc, region)?.feasible;
    let gnorm = ev.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let converged = feasible && stationarity <= opts.kkt_tol * (1.0 + gnorm);
    let solution = Solution {
        alloc,
        objective: ev.value,
        diagnostics: SolverDiagnostics {
            method: opts.method,
            converged,
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            kkt_residual: mult.residual,
            stationarity,
            polished,
            eta: mult.eta,
            nu: mult.nu,
            mu: mult.mu,
            kappa: mult.kappa,
        },
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::MaxIterations(Box::new(solution)))
    }
}
