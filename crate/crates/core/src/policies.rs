//! Named allocation policies and the majorization predicate.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ChannelTrace, NoiseModel, PowerAllocation, WoodburyState, FLAT_TOL};
use crate::signal::{CovarianceModel, SpectrumDecomposition};
use crate::solver::{
    self, solve_separable, EnergyTrace, FeasibleRegion, RegionMode, Solution, SolverDiagnostics, SolverOptions,
};

/// Window length of a sliding-window policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Slots(usize),
    /// `n / d` slots.
    Fraction(usize),
}

impl Window {
    pub fn resolve(self, n: usize) -> Result<usize> {
        let lw = match self {
            Window::Slots(lw) => lw,
            Window::Fraction(d) if d > 0 && n % d == 0 => n / d,
            Window::Fraction(d) => return Err(Error::WindowError { n, window: d }),
        };
        if lw == 0 || n % lw != 0 {
            return Err(Error::WindowError { n, window: lw });
        }
        Ok(lw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyId {
    Optimal,
    Relaxed,
    Greedy,
    MostMajorized,
    ParamGreedy,
    Equidistant,
    Upper(Window),
    Lower(Window),
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let window = |w: &Window| match w {
            Window::Slots(l) => l.to_string(),
            Window::Fraction(1) => "n".to_string(),
            Window::Fraction(d) => format!("n/{d}"),
        };
        match self {
            PolicyId::Optimal => f.write_str("optimal"),
            PolicyId::Relaxed => f.write_str("relaxed"),
            PolicyId::Greedy => f.write_str("greedy"),
            PolicyId::MostMajorized => f.write_str("most-majorized"),
            PolicyId::ParamGreedy => f.write_str("param-greedy"),
            PolicyId::Equidistant => f.write_str("equidistant"),
            PolicyId::Upper(w) => write!(f, "upper-{}", window(w)),
            PolicyId::Lower(w) => write!(f, "lower-{}", window(w)),
        }
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_window = |w: &str| -> Result<Window> {
            let bad = || Error::InvalidConfig(format!("bad window length in policy '{s}'"));
            match w {
                "n" => Ok(Window::Fraction(1)),
                _ => match w.strip_prefix("n/") {
                    Some(d) => d.parse().map(Window::Fraction).map_err(|_| bad()),
                    None => w.parse().map(Window::Slots).map_err(|_| bad()),
                },
            }
        };
        Ok(match s {
            "optimal" => PolicyId::Optimal,
            "relaxed" => PolicyId::Relaxed,
            "greedy" => PolicyId::Greedy,
            "most-majorized" => PolicyId::MostMajorized,
            "param-greedy" => PolicyId::ParamGreedy,
            "equidistant" => PolicyId::Equidistant,
            _ => {
                if let Some(w) = s.strip_prefix("upper-") {
                    PolicyId::Upper(parse_window(w)?)
                } else if let Some(w) = s.strip_prefix("lower-") {
                    PolicyId::Lower(parse_window(w)?)
                } else {
                    return Err(Error::InvalidConfig(format!("unknown policy '{s}'")));
                }
            }
        })
    }
}

impl TryFrom<String> for PolicyId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyId> for String {
    fn from(p: PolicyId) -> String {
        p.to_string()
    }
}

/// Everything a policy needs: signal statistics, channel, noise, arrivals.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spectrum: SpectrumDecomposition,
    pub sigma_sq: Vec<f64>,
    pub p_x: f64,
    pub channel: ChannelTrace,
    pub noise: NoiseModel,
    pub energy: EnergyTrace,
}

impl Instance {
    pub fn new(model: &CovarianceModel, channel: ChannelTrace, noise: NoiseModel, energy: EnergyTrace) -> Result<Self> {
        Self::assemble(model.reduced_evd(), model.sigma_sq().to_vec(), channel, noise, energy)
    }

    /// Uses `sigma_t^2 = sum_k lambda_k |U_tk|^2`; values below `1e-13` of
    /// the largest are treated as exact zeros.
    pub fn from_spectrum(
        spectrum: SpectrumDecomposition,
        channel: ChannelTrace,
        noise: NoiseModel,
        energy: EnergyTrace,
    ) -> Result<Self> {
        let n = spectrum.n();
        let mut sigma_sq: Vec<f64> = (0..n)
            .map(|t| {
                spectrum
                    .lambda
                    .iter()
                    .enumerate()
                    .map(|(k, l)| l * spectrum.u[(t, k)].norm_sqr())
                    .sum()
            })
            .collect();
        let max = sigma_sq.iter().cloned().fold(0.0, f64::max);
        for v in &mut sigma_sq {
            if *v <= 1e-13 * max {
                *v = 0.0;
            }
        }
        Self::assemble(spectrum, sigma_sq, channel, noise, energy)
    }

    fn assemble(
        spectrum: SpectrumDecomposition,
        sigma_sq: Vec<f64>,
        channel: ChannelTrace,
        noise: NoiseModel,
        energy: EnergyTrace,
    ) -> Result<Self> {
        let n = spectrum.n();
        for len in [sigma_sq.len(), channel.n(), energy.n()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(Instance {
            p_x: spectrum.total_power(),
            spectrum,
            sigma_sq,
            channel,
            noise,
            energy,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn region(&self) -> FeasibleRegion {
        FeasibleRegion::new(self.sigma_sq.clone(), self.energy.clone(), RegionMode::Causal)
            .expect("instance lengths are validated")
    }

    pub fn mse(&self, alloc: &PowerAllocation) -> Result<f64> {
        Ok(WoodburyState::new(&self.spectrum, self.channel.gain_sq(), alloc.a(), self.noise.gamma())?.value())
    }

    fn require_flat(&self) -> Result<()> {
        if !self.spectrum.is_flat(FLAT_TOL) {
            return Err(Error::FlatSpectrumRequired("retained eigenvalues differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyOptions {
    pub solver: SolverOptions,
    /// Reject energy arriving at zero-variance slots instead of carrying it.
    pub strict: bool,
    /// Initial delay of the equidistant plan; `None` means `Delta - 1`.
    pub t_d: Option<usize>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        PolicyOptions {
            solver: SolverOptions::default(),
            strict: false,
            t_d: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyResult {
    pub policy_id: String,
    pub alloc: PowerAllocation,
    pub mse: f64,
    pub normalized_mse: f64,
    /// Seconds spent computing the allocation; evaluating `mse` is not counted.
    pub wall_time: f64,
    pub converged: bool,
    pub diagnostics: Option<SolverDiagnostics>,
}

fn require_energy(region: &FeasibleRegion) -> Result<()> {
    if region.energy().total() <= 0.0 {
        return Err(Error::InfeasibleRegion(
            "no energy is harvested over the horizon".into(),
        ));
    }
    Ok(())
}

/// Consumed energies of the staircase through the caps `cap[i]` (cumulative
/// energy available by position `i`); `cap` must end at the total.
fn staircase(cap: &[f64]) -> Vec<f64> {
    let m = cap.len();
    let mut out = vec![0.0; m];
    let mut prev = 0usize;
    let mut prev_cap = 0.0;
    while prev < m {
        let mut best = f64::INFINITY;
        let mut end = prev + 1;
        for r in prev + 1..=m {
            let slope = (cap[r - 1] - prev_cap) / (r - prev) as f64;
            let tol = 1e-14 * slope.abs();
            if best.is_infinite() || slope < best - tol {
                best = slope;
                end = r;
            } else if slope <= best + tol {
                // ties go to the later breakpoint
                end = r;
            }
        }
        for v in &mut out[prev..end] {
            *v = best;
        }
        prev_cap = cap[end - 1];
        prev = end;
    }
    out
}

/// The feasible allocation whose consumed-energy profile `J_t = a_t sigma_t^2`
/// is majorized by that of every other feasible allocation.
pub fn most_majorized(region: &FeasibleRegion) -> Result<PowerAllocation> {
    require_energy(region)?;
    let sigma = region.sigma_sq();
    let slots: Vec<usize> = (0..region.n()).filter(|&t| sigma[t] > 0.0).collect();
    let cumulative = region.energy().cumulative();
    let total = region.energy().total();
    let mut cap: Vec<f64> = slots.iter().map(|&t| cumulative[t]).collect();
    match cap.last_mut() {
        Some(last) if *last >= total * (1.0 - 1e-12) => *last = total,
        _ => {
            return Err(Error::InfeasibleRegion(
                "energy arrives after the last slot with positive variance".into(),
            ))
        }
    }
    if region.mode() == RegionMode::TotalOnly {
        cap.iter_mut().for_each(|c| *c = total);
    }
    let j = staircase(&cap);
    let mut energy = vec![0.0; region.n()];
    for (&t, v) in slots.iter().zip(j) {
        energy[t] = v;
    }
    PowerAllocation::from_energy(&energy, sigma)
}

/// `a` is majorized by `b`: sorted-descending prefix sums of `a` never
/// exceed those of `b` and the totals agree.
pub fn is_majorized(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let tol = 1e-9 * b.iter().map(|x| x.abs()).sum::<f64>();
    let (mut pa, mut pb) = (0.0, 0.0);
    for k in 0..a.len() {
        pa += sa[k];
        pb += sb[k];
        if k + 1 < a.len() && pa > pb + tol {
            return Ok(false);
        }
    }
    Ok((pa - pb).abs() <= tol)
}

/// Sends all energy gathered since the previous transmission in the slot
/// with the strongest channel among the remaining ones (earliest on ties),
/// then repeats on the slots after it.
pub fn parameter_greedy(region: &FeasibleRegion, channel: &ChannelTrace) -> Result<PowerAllocation> {
    require_energy(region)?;
    let n = region.n();
    if channel.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: channel.n(),
        });
    }
    let sigma = region.sigma_sq();
    let g = channel.gain_sq();
    let mut a = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let best = (start..n)
            .filter(|&t| sigma[t] > 0.0)
            .fold(None, |acc: Option<usize>, t| match acc {
                Some(b) if g[b] >= g[t] => Some(b),
                _ => Some(t),
            });
        let gathered: f64 = match best {
            Some(b) => region.energy().packets()[start..=b].iter().sum(),
            None => region.energy().packets()[start..].iter().sum(),
        };
        let Some(best) = best else {
            if gathered > 0.0 {
                return Err(Error::InfeasibleRegion(
                    "energy arrives after the last slot with positive variance".into(),
                ));
            }
            break;
        };
        a[best] = gathered / sigma[best];
        start = best + 1;
    }
    PowerAllocation::new(a, sigma)
}

/// Spends each packet in its arrival slot. Packets landing on zero-variance
/// slots are carried to the next positive-variance slot unless `strict`.
pub fn greedy_policy(region: &FeasibleRegion, strict: bool) -> Result<PowerAllocation> {
    require_energy(region)?;
    let sigma = region.sigma_sq();
    let mut a = vec![0.0; region.n()];
    let mut carry = 0.0;
    for (t, &e) in region.energy().packets().iter().enumerate() {
        if sigma[t] > 0.0 {
            a[t] = (carry + e) / sigma[t];
            carry = 0.0;
        } else if e > 0.0 {
            if strict {
                return Err(Error::ZeroVarianceWithEnergy { slot: t + 1, energy: e });
            }
            carry += e;
        }
    }
    if carry > 0.0 {
        return Err(Error::InfeasibleRegion(
            "energy arrives after the last slot with positive variance".into(),
        ));
    }
    PowerAllocation::new(a, sigma)
}

/// Equidistant sampling: one slot out of every `delta`, starting at `t_d`.
/// Slot indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SamplingPlan {
    pub delta: usize,
    pub t_d: usize,
    pub m: usize,
    pub sample_slots: Vec<usize>,
}

impl SamplingPlan {
    pub fn new(n: usize, s: usize, t_d: Option<usize>) -> Result<Self> {
        if s == 0 || s > n || n % s != 0 {
            return Err(Error::PlanInvalid(format!("s = {s} must divide n = {n}")));
        }
        let delta = n / s;
        let t_d = t_d.unwrap_or(delta - 1);
        if t_d >= delta {
            return Err(Error::DelayOutOfRange { t_d, max: delta - 1 });
        }
        Ok(SamplingPlan {
            delta,
            t_d,
            m: s,
            sample_slots: (0..s).map(|r| delta * r + t_d).collect(),
        })
    }
}

fn constant_variance(sigma: &[f64]) -> bool {
    let max = sigma.iter().cloned().fold(0.0, f64::max);
    let min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && max - min <= FLAT_TOL * max
}

/// Amplifications `a_bar` for the sampled slots, embedded into a full-length
/// allocation. Energy arriving after the last sample cannot be used.
pub fn equidistant_policy(inst: &Instance, plan: &SamplingPlan, opts: &SolverOptions) -> Result<PowerAllocation> {
    let n = inst.n();
    inst.require_flat()?;
    if inst.spectrum.rank() != plan.m || plan.delta * plan.m != n {
        return Err(Error::PlanInvalid(format!(
            "plan takes {} samples but the signal has rank {}",
            plan.m,
            inst.spectrum.rank()
        )));
    }
    if !constant_variance(&inst.sigma_sq) {
        return Err(Error::FlatSpectrumRequired("slot variances differ".into()));
    }
    require_energy(&inst.region())?;
    let cumulative = inst.energy.cumulative();
    let last = *plan.sample_slots.last().expect("plan has samples");
    if cumulative[last] < inst.energy.total() * (1.0 - 1e-12) {
        return Err(Error::InfeasibleRegion(format!(
            "energy arriving after the last sample (slot {}) cannot be spent",
            last + 1
        )));
    }
    let mut windowed = Vec::with_capacity(plan.m);
    let mut prev = 0.0;
    for &t in &plan.sample_slots {
        windowed.push(cumulative[t] - prev);
        prev = cumulative[t];
    }
    let sigma_x = inst.sigma_sq[0];
    let sub = FeasibleRegion::new(vec![sigma_x; plan.m], EnergyTrace::new(windowed)?, RegionMode::Causal)?;
    let gains: Vec<f64> = plan.sample_slots.iter().map(|&t| inst.channel.gain_sq()[t]).collect();
    let a_bar = if inst.channel.is_static() {
        most_majorized(&sub)?.a().to_vec()
    } else {
        let coeff = vec![inst.p_x / plan.m as f64; plan.m];
        let rate = gains.iter().map(|g| inst.noise.gamma() * g * sigma_x).collect();
        accept_unconverged(solve_separable(coeff, rate, &sub, opts))?
            .0
            .alloc
            .a()
            .to_vec()
    };
    let mut a = vec![0.0; n];
    for (&t, v) in plan.sample_slots.iter().zip(a_bar) {
        a[t] = v;
    }
    PowerAllocation::new(a, &inst.sigma_sq)
}

fn accept_unconverged(r: Result<Solution>) -> Result<(Solution, bool)> {
    match r {
        Ok(s) => Ok((s, true)),
        Err(Error::MaxIterations(s)) => Ok((*s, false)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Upper,
    Lower,
}

fn sliding_window(inst: &Instance, lw: usize, bound: Bound, opts: &SolverOptions) -> Result<(PowerAllocation, bool)> {
    let n = inst.n();
    if lw == 0 || n % lw != 0 {
        return Err(Error::WindowError { n, window: lw });
    }
    let region = inst.region();
    require_energy(&region)?;
    let gamma = inst.noise.gamma();
    let mut a = vec![0.0; n];
    let mut converged = true;
    for start in (0..n).step_by(lw) {
        let end = start + lw;
        let window = region.window(start, end);
        if window.energy().total() <= 0.0 {
            continue;
        }
        let sigma = window.sigma_sq();
        let rate: Vec<f64> = (start..end)
            .map(|t| gamma * inst.channel.gain_sq()[t] * inst.sigma_sq[t])
            .collect();
        let coeff = match bound {
            Bound::Upper => sigma.to_vec(),
            Bound::Lower => vec![1.0; lw],
        };
        let (sol, ok) = accept_unconverged(solve_separable(coeff, rate, &window, opts))?;
        converged &= ok;
        a[start..end].copy_from_slice(sol.alloc.a());
    }
    Ok((PowerAllocation::new(a, &inst.sigma_sq)?, converged))
}

/// Minimizes the correlation-free error bound independently on consecutive
/// windows of `lw` slots, each spending exactly its own arrivals.
pub fn sliding_window_upper(inst: &Instance, lw: usize, opts: &SolverOptions) -> Result<(PowerAllocation, bool)> {
    sliding_window(inst, lw, Bound::Upper, opts)
}

/// Windowed minimization of the flat-spectrum lower bound.
pub fn sliding_window_lower(inst: &Instance, lw: usize, opts: &SolverOptions) -> Result<(PowerAllocation, bool)> {
    inst.require_flat()?;
    sliding_window(inst, lw, Bound::Lower, opts)
}

pub fn run_policy(id: PolicyId, inst: &Instance, opts: &PolicyOptions) -> Result<PolicyResult> {
    let start = Instant::now();
    let region = inst.region();
    let mut diagnostics = None;
    let mut converged = true;
    let alloc = match id {
        PolicyId::Optimal | PolicyId::Relaxed => {
            let solve = if id == PolicyId::Optimal {
                solver::solve_optimal
            } else {
                solver::solve_relaxed
            };
            let (sol, ok) =
                accept_unconverged(solve(&inst.spectrum, &inst.channel, &region, &inst.noise, &opts.solver))?;
            converged = ok;
            diagnostics = Some(sol.diagnostics);
            sol.alloc
        }
        PolicyId::Greedy => greedy_policy(&region, opts.strict)?,
        PolicyId::MostMajorized => most_majorized(&region)?,
        PolicyId::ParamGreedy => parameter_greedy(&region, &inst.channel)?,
        PolicyId::Equidistant => {
            let plan = SamplingPlan::new(inst.n(), inst.spectrum.rank(), opts.t_d)?;
            equidistant_policy(inst, &plan, &opts.solver)?
        }
        PolicyId::Upper(w) => {
            let (alloc, ok) = sliding_window_upper(inst, w.resolve(inst.n())?, &opts.solver)?;
            converged = ok;
            alloc
        }
        PolicyId::Lower(w) => {
            let (alloc, ok) = sliding_window_lower(inst, w.resolve(inst.n())?, &opts.solver)?;
            converged = ok;
            alloc
        }
    };
    let wall_time = start.elapsed().as_secs_f64();
    let mse = inst.mse(&alloc)?;
    Ok(PolicyResult {
        policy_id: id.to_string(),
        normalized_mse: mse / inst.p_x,
        mse,
        alloc,
        wall_time,
        converged,
        diagnostics,
    })
}
