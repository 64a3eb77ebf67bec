//! Randomized property suites, runnable from the command line.
//!
//! Every case is generated from its own seed, and failing seeds are reported
//! so a counterexample can be replayed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::estimator::{mmse_direct, mmse_gradient, ChannelTrace, NoiseModel, PowerAllocation};
use crate::harness::{run_experiment, ArrivalSpec, ExperimentConfig};
use crate::policies::{is_majorized, most_majorized, run_policy, Instance, PolicyId, PolicyOptions, Window};
use crate::signal::{
    build_circulant, build_from_basis, build_static_correlation, haar_unitary, CovarianceModel, SpectrumDecomposition,
    C64,
};
use crate::solver::{check_feasible, EnergyTrace, FeasibleRegion};

pub const SUITES: &[&str] = &[
    "signal",
    "estimator",
    "gradient",
    "solver",
    "majorization",
    "policies",
    "harness",
];

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    /// `(seed, message)` of every failing case.
    pub failures: Vec<(u64, String)>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub type GradientFn = dyn Fn(&SpectrumDecomposition, &ChannelTrace, &PowerAllocation, &NoiseModel) -> Result<Vec<f64>>;

fn run_cases(
    name: &str,
    cases: usize,
    base: u64,
    case: impl Fn(u64) -> std::result::Result<(), String>,
) -> SuiteReport {
    let mut failures = Vec::new();
    for i in 0..cases {
        let seed = base.wrapping_add(i as u64);
        if let Err(msg) = case(seed) {
            failures.push((seed, msg));
        }
    }
    SuiteReport {
        name: name.to_string(),
        cases,
        failures,
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: crate::error::Error) -> String {
    e.to_string()
}

/// Random correlated model: Haar basis, eigenvalues in `[0.05, 2]`, with
/// `rank` nonzero eigenvalues.
pub fn random_model(rng: &mut impl Rng, n: usize, rank: usize) -> CovarianceModel {
    let u = haar_unitary(n, rng).columns(0, rank).into_owned();
    let lambda: Vec<f64> = (0..rank).map(|_| rng.random_range(0.05..2.0)).collect();
    build_from_basis(&u, &lambda).expect("valid basis")
}

pub fn random_channel(rng: &mut impl Rng, n: usize) -> ChannelTrace {
    ChannelTrace::new(
        (0..n)
            .map(|_| C64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect(),
    )
    .expect("finite gains")
}

/// Arrivals with at least one packet in the first slot.
pub fn random_arrivals(rng: &mut impl Rng, n: usize, p: f64) -> EnergyTrace {
    let mut e: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(p) {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            }
        })
        .collect();
    e[0] += 0.5;
    EnergyTrace::new(e).expect("nonnegative packets")
}

/// A random point of the causal region in consumed-energy coordinates.
pub fn random_feasible_energy(rng: &mut impl Rng, region: &FeasibleRegion) -> Vec<f64> {
    let sigma = region.sigma_sq();
    let n = region.n();
    let last = (0..n).rev().find(|&t| sigma[t] > 0.0).unwrap_or(n - 1);
    let mut j = vec![0.0; n];
    let mut used = 0.0;
    for t in 0..n {
        if sigma[t] <= 0.0 {
            continue;
        }
        let available = (region.energy().cumulative()[t] - used).max(0.0);
        j[t] = if t == last {
            region.energy().total() - used
        } else {
            available * rng.random::<f64>().powi(2)
        };
        used += j[t];
    }
    j
}

pub fn signal_suite(cases: usize) -> SuiteReport {
    run_cases("signal", cases, 1000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..10);
        let u = haar_unitary(n, &mut rng);
        let dev = (u.adjoint() * &u - crate::signal::CMatrix::identity(n, n)).camax();
        check(dev < 1e-12, || format!("U^H U deviates from I by {dev:e}"))?;
        let rho = rng.random_range(-1.0 / (n as f64 - 1.0)..1.0);
        let model = build_static_correlation(n, rho, n as f64).map_err(err)?;
        let back = model.reduced_evd().reconstruct();
        let gap = (back - model.matrix()).camax();
        check(gap < 1e-10, || {
            format!("static correlation EVD reconstruction error {gap:e}")
        })?;
        let mut v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(0.0..0.1), 0.0)).collect();
        v[0] = C64::new(1.0, 0.0);
        for k in 1..n {
            v[n - k] = v[k].conj();
        }
        if let Ok((model, z)) = build_circulant(&v) {
            let spec = SpectrumDecomposition::from_dft(&z);
            let gap = (spec.reconstruct() - model.matrix()).camax();
            check(gap < 1e-10, || format!("circulant DFT reconstruction error {gap:e}"))?;
        }
        Ok(())
    })
}

pub fn estimator_suite(cases: usize) -> SuiteReport {
    run_cases("estimator", cases, 2000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..10);
        let rank = rng.random_range(1..=n);
        let model = random_model(&mut rng, n, rank);
        let channel = random_channel(&mut rng, n);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let alloc = PowerAllocation::new(a, model.sigma_sq()).map_err(err)?;
        let noise = NoiseModel::new(rng.random_range(0.01..1.0)).map_err(err)?;
        let spec = model.reduced_evd();
        let direct = mmse_direct(&model, &channel, &alloc, &noise).map_err(err)?;
        let wood = crate::estimator::mmse_woodbury(&spec, &channel, &alloc, &noise).map_err(err)?;
        check((direct - wood).abs() <= 1e-9 * model.p_x(), || {
            format!("direct {direct} and reduced {wood} forms disagree")
        })?;
        check(wood <= model.p_x() * (1.0 + 1e-12) && wood >= 0.0, || {
            format!("mse {wood} outside [0, P_x]")
        })
    })
}

pub fn gradient_suite(cases: usize) -> SuiteReport {
    gradient_suite_with(cases, &mmse_gradient)
}

/// Central differences with step `1e-6 max(1, a_t)` against `grad`.
pub fn gradient_suite_with(cases: usize, grad: &GradientFn) -> SuiteReport {
    run_cases("gradient", cases, 3000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..9);
        let rank = rng.random_range(1..=n);
        let model = random_model(&mut rng, n, rank);
        let channel = random_channel(&mut rng, n);
        let noise = NoiseModel::new(rng.random_range(0.05..1.0)).map_err(err)?;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let spec = model.reduced_evd();
        let eval = |a: &[f64]| {
            let alloc = PowerAllocation::new(a.to_vec(), model.sigma_sq()).expect("positive");
            crate::estimator::mmse_woodbury(&spec, &channel, &alloc, &noise).expect("valid")
        };
        let alloc = PowerAllocation::new(a.clone(), model.sigma_sq()).map_err(err)?;
        let g = grad(&spec, &channel, &alloc, &noise).map_err(err)?;
        let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for t in 0..n {
            let h = 1e-6 * a[t].max(1.0);
            let mut up = a.clone();
            let mut down = a.clone();
            up[t] += h;
            down[t] -= h;
            let fd = (eval(&up) - eval(&down)) / (2.0 * h);
            check((fd - g[t]).abs() <= 1e-5 * scale.max(1e-12), || {
                format!("slot {t}: analytic {} vs finite difference {fd}", g[t])
            })?;
        }
        Ok(())
    })
}

pub fn solver_suite(cases: usize) -> SuiteReport {
    run_cases("solver", cases, 4000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..9);
        let rank = rng.random_range(1..=n);
        let model = random_model(&mut rng, n, rank);
        let channel = random_channel(&mut rng, n);
        let energy = random_arrivals(&mut rng, n, 0.5);
        let noise = NoiseModel::new(rng.random_range(0.01..0.5)).map_err(err)?;
        let inst = Instance::new(&model, channel, noise, energy).map_err(err)?;
        let opts = PolicyOptions::default();
        let opt = run_policy(PolicyId::Optimal, &inst, &opts).map_err(err)?;
        let relaxed = run_policy(PolicyId::Relaxed, &inst, &opts).map_err(err)?;
        check(opt.converged && relaxed.converged, || "solver did not converge".into())?;
        check(relaxed.mse <= opt.mse + 1e-8, || {
            format!("relaxed {} above optimal {}", relaxed.mse, opt.mse)
        })?;
        for id in [
            PolicyId::Greedy,
            PolicyId::MostMajorized,
            PolicyId::Upper(Window::Fraction(1)),
        ] {
            let r = run_policy(id, &inst, &opts).map_err(err)?;
            check(opt.mse <= r.mse + 1e-8, || {
                format!("optimal {} above {id} {}", opt.mse, r.mse)
            })?;
        }
        let region = inst.region();
        check(check_feasible(&opt.alloc, &region).map_err(err)?.feasible, || {
            "optimum infeasible".into()
        })?;
        // midpoint convexity between two feasible points
        let p =
            PowerAllocation::from_energy(&random_feasible_energy(&mut rng, &region), &inst.sigma_sq).map_err(err)?;
        let q =
            PowerAllocation::from_energy(&random_feasible_energy(&mut rng, &region), &inst.sigma_sq).map_err(err)?;
        let mid: Vec<f64> = p.a().iter().zip(q.a()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = PowerAllocation::new(mid, &inst.sigma_sq).map_err(err)?;
        let (fp, fq, fm) = (
            inst.mse(&p).map_err(err)?,
            inst.mse(&q).map_err(err)?,
            inst.mse(&mid).map_err(err)?,
        );
        check(fm <= 0.5 * (fp + fq) + 1e-10, || {
            format!("midpoint {fm} above chord {}", 0.5 * (fp + fq))
        })?;
        check(fm >= opt.mse - 1e-8, || {
            format!("feasible point {fm} beats the optimum {}", opt.mse)
        })?;
        let again = run_policy(PolicyId::Optimal, &inst, &opts).map_err(err)?;
        check(again.alloc == opt.alloc, || "solver is not deterministic".into())
    })
}

pub fn majorization_suite(cases: usize, samples: usize) -> SuiteReport {
    run_cases("majorization", cases, 5000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 16;
        let p = rng.random_range(0.1..0.9);
        let energy = random_arrivals(&mut rng, n, p);
        let sigma: Vec<f64> = vec![1.0; n];
        let region = FeasibleRegion::causal(&sigma, &energy).map_err(err)?;
        let stair = most_majorized(&region).map_err(err)?;
        check(check_feasible(&stair, &region).map_err(err)?.feasible, || {
            "staircase infeasible".into()
        })?;
        for i in 0..samples {
            let j = random_feasible_energy(&mut rng, &region);
            check(is_majorized(stair.energy(), &j).map_err(err)?, || {
                format!("sample {i} is not majorized by the staircase: {j:?}")
            })?;
        }
        Ok(())
    })
}

pub fn policies_suite(cases: usize) -> SuiteReport {
    run_cases("policies", cases, 6000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = [4, 6, 8, 12][rng.random_range(0..4)];
        let rho = rng.random_range(0.0..0.9);
        let model = build_static_correlation(n, rho, n as f64).map_err(err)?;
        let energy = random_arrivals(&mut rng, n, 0.5);
        let noise = NoiseModel::new(rng.random_range(0.01..0.5)).map_err(err)?;
        let inst = Instance::new(&model, ChannelTrace::unit(n), noise, energy).map_err(err)?;
        let opts = PolicyOptions::default();
        let opt = run_policy(PolicyId::Optimal, &inst, &opts).map_err(err)?;
        let mm = run_policy(PolicyId::MostMajorized, &inst, &opts).map_err(err)?;
        check((mm.mse - opt.mse).abs() <= 1e-7 * opt.mse, || {
            format!("static correlation: staircase {} vs optimum {}", mm.mse, opt.mse)
        })?;
        let fading = Instance::new(&model, random_channel(&mut rng, n), noise, inst.energy.clone()).map_err(err)?;
        for lw in [1, 2, n] {
            let r = run_policy(PolicyId::Upper(Window::Slots(lw)), &fading, &opts).map_err(err)?;
            check(
                check_feasible(&r.alloc, &fading.region()).map_err(err)?.feasible,
                || format!("upper-{lw} allocation infeasible"),
            )?;
        }
        Ok(())
    })
}

pub fn harness_suite() -> SuiteReport {
    run_cases("harness", 1, 7000, |seed| {
        let cfg = ExperimentConfig {
            n: 8,
            s: 3,
            trials: 4,
            master_seed: seed,
            arrival: ArrivalSpec {
                p_grid: vec![0.0, 0.4, 1.0],
                e0: 1.0,
            },
            ..ExperimentConfig::standard(3)
        };
        let a = run_experiment(&cfg, 1).map_err(err)?;
        let b = run_experiment(&cfg, 3).map_err(err)?;
        check(a.stats == b.stats, || "results depend on the thread count".into())?;
        check(a.violations.is_empty(), || {
            format!("ordering violations: {:?}", a.violations)
        })?;
        let p0 = a.stats.curves.iter().filter(|c| c.p == 0.0);
        for c in p0 {
            check(c.mean_nmse == 1.0, || {
                format!("{} at p = 0 gives {}", c.policy, c.mean_nmse)
            })?;
        }
        Ok(())
    })
}

/// Runs the named suite (or all of them) at default sizes.
pub fn run_suites(only: Option<&str>) -> Result<Vec<SuiteReport>> {
    let selected: Vec<&str> = match only {
        Some(name) if SUITES.contains(&name) => vec![name],
        Some(name) => {
            return Err(crate::error::Error::InvalidConfig(format!(
                "unknown suite '{name}', expected one of {}",
                SUITES.join(", ")
            )))
        }
        None => SUITES.to_vec(),
    };
    Ok(selected
        .into_iter()
        .map(|name| match name {
            "signal" => signal_suite(30),
            "estimator" => estimator_suite(50),
            "gradient" => gradient_suite(50),
            "solver" => solver_suite(30),
            "majorization" => majorization_suite(20, 1000),
            "policies" => policies_suite(20),
            _ => harness_suite(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_error_in_gradient_is_caught() {
        let flipped = |s: &SpectrumDecomposition, c: &ChannelTrace, a: &PowerAllocation, n: &NoiseModel| {
            mmse_gradient(s, c, a, n).map(|g| g.into_iter().map(|v| -v).collect())
        };
        assert!(!gradient_suite_with(5, &flipped).passed());
        assert!(gradient_suite(5).passed());
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suites(Some("nope")).is_err());
    }
}
