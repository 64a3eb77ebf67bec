//! Monte Carlo sweeps over the energy arrival rate and timing benchmarks.
//!
//! Every trial draws its randomness from a seed derived from the master seed
//! and its `(grid point, trial)` coordinates with [`derive_seed`], so results
//! do not depend on thread count or completion order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ChannelTrace, NoiseModel};
use crate::policies::{run_policy, Instance, PolicyId, PolicyOptions, Window};
use crate::signal::{haar_unitary, CMatrix, SpectrumDecomposition, C64};
use crate::solver::EnergyTrace;

/// splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `k` at grid point `j`.
pub fn derive_seed(master: u64, j: usize, k: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ j as u64) ^ k as u64)
}

/// Independent sub-streams of one trial seed.
const ARRIVAL_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;
const UNITARY_STREAM: u64 = 3;

fn stream(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// `E_t = E0` with probability `p`, else 0.
pub fn sample_bernoulli_arrivals(p: f64, n: usize, e0: f64, seed: u64) -> Result<EnergyTrace> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "arrival probability {p} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    EnergyTrace::new((0..n).map(|_| if rng.random_bool(p) { e0 } else { 0.0 }).collect())
}

/// i.i.d. `CN(0, 1)` gains.
pub fn sample_rayleigh_channel(n: usize, seed: u64) -> ChannelTrace {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let h = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * scale, im * scale)
        })
        .collect();
    ChannelTrace::new(h).expect("gaussian samples are finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EigenProfile {
    /// `alpha_k = ratio^k`, `k = 0..s-1`, scaled to total power `P_x`.
    Geometric {
        #[serde(default = "default_ratio")]
        ratio: f64,
    },
    Flat,
}

fn default_ratio() -> f64 {
    0.7
}

impl EigenProfile {
    pub fn eigenvalues(&self, s: usize, p_x: f64) -> Vec<f64> {
        let alpha: Vec<f64> = match self {
            EigenProfile::Geometric { ratio } => (0..s).map(|k| ratio.powi(k as i32)).collect(),
            EigenProfile::Flat => vec![1.0; s],
        };
        let sum: f64 = alpha.iter().sum();
        alpha.iter().map(|a| p_x * a / sum).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UnitarySpec {
    Haar { seed: u64 },
    Dft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UnitaryMode {
    /// One basis for the whole experiment.
    #[default]
    Fixed,
    /// A fresh Haar basis per trial (ignored for the DFT basis).
    PerTrial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSpec {
    Rayleigh,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub p_grid: Vec<f64>,
    #[serde(default = "default_e0")]
    pub e0: f64,
}

fn default_e0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub s: usize,
    /// Defaults to `n`.
    #[serde(default)]
    pub p_x: Option<f64>,
    #[serde(default = "default_noise")]
    pub sigma_w_sq: f64,
    #[serde(default = "default_profile")]
    pub eigen_profile: EigenProfile,
    pub unitary: UnitarySpec,
    #[serde(default)]
    pub unitary_mode: UnitaryMode,
    pub arrival: ArrivalSpec,
    pub channel: ChannelSpec,
    pub policies: Vec<PolicyId>,
    /// Heuristic compared against `optimal` in the gap statistics.
    #[serde(default = "default_gap_policy")]
    pub gap_policy: Option<PolicyId>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub options: PolicyOptions,
}

fn default_noise() -> f64 {
    0.001
}

fn default_profile() -> EigenProfile {
    EigenProfile::Geometric { ratio: 0.7 }
}

fn default_gap_policy() -> Option<PolicyId> {
    Some(PolicyId::Upper(Window::Fraction(1)))
}

impl ExperimentConfig {
    /// Reference sweep: `n = 16`, Haar basis, Rayleigh fading, for a given `s`.
    pub fn standard(s: usize) -> Self {
        ExperimentConfig {
            n: 16,
            s,
            p_x: None,
            sigma_w_sq: 0.001,
            eigen_profile: default_profile(),
            unitary: UnitarySpec::Haar { seed: 2017 },
            unitary_mode: UnitaryMode::Fixed,
            arrival: ArrivalSpec {
                p_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
                e0: 1.0,
            },
            channel: ChannelSpec::Rayleigh,
            policies: vec![
                PolicyId::Optimal,
                PolicyId::Relaxed,
                PolicyId::Greedy,
                PolicyId::Upper(Window::Slots(2)),
                PolicyId::Upper(Window::Slots(4)),
                PolicyId::Upper(Window::Fraction(1)),
            ],
            gap_policy: default_gap_policy(),
            trials: 500,
            master_seed: 1,
            options: PolicyOptions::default(),
        }
    }

    pub fn p_x(&self) -> f64 {
        self.p_x.unwrap_or(self.n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.s == 0 || self.s > self.n {
            return bad(format!("need 1 <= s <= n, got n = {}, s = {}", self.n, self.s));
        }
        if !(self.p_x() > 0.0) || !(self.sigma_w_sq > 0.0) {
            return bad("P_x and sigma_w_sq must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.arrival.p_grid.is_empty() || self.arrival.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("p grid must be a nonempty subset of [0, 1]".into());
        }
        if !(self.arrival.e0 >= 0.0) {
            return bad("E0 must be nonnegative".into());
        }
        if self.policies.is_empty() {
            return bad("no policies selected".into());
        }
        if let EigenProfile::Geometric { ratio } = self.eigen_profile {
            if !(ratio > 0.0) {
                return bad("geometric ratio must be positive".into());
            }
        }
        Ok(())
    }

    /// Listed policies, plus `optimal` and the gap policy when gaps are requested.
    pub fn executed_policies(&self) -> Vec<PolicyId> {
        let mut out: Vec<PolicyId> = Vec::new();
        let extra = self.gap_policy.map(|g| [PolicyId::Optimal, g]);
        for p in self.policies.iter().copied().chain(extra.into_iter().flatten()) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    fn spectrum(&self, unitary_seed: u64) -> SpectrumDecomposition {
        let lambda = self.eigen_profile.eigenvalues(self.s, self.p_x());
        match self.unitary {
            UnitarySpec::Dft => {
                let mut z = lambda;
                z.resize(self.n, 0.0);
                SpectrumDecomposition::from_dft(&z)
            }
            UnitarySpec::Haar { .. } => {
                let mut rng = ChaCha20Rng::seed_from_u64(unitary_seed);
                let full = haar_unitary(self.n, &mut rng);
                let u = CMatrix::from_fn(self.n, self.s, |t, k| full[(t, k)]);
                SpectrumDecomposition {
                    u,
                    lambda,
                    omega: (0..self.s).collect(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrialRecord {
    pub p: f64,
    pub trial: usize,
    pub seed: u64,
    pub policy: String,
    pub nmse: Option<f64>,
    pub wall_time: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurvePoint {
    pub policy: String,
    pub p: f64,
    pub mean_nmse: f64,
    pub std_nmse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GapPoint {
    pub p: f64,
    pub mean_gap: f64,
    pub std_gap: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OrderingViolation {
    pub p: f64,
    pub trial: usize,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AggregateStats {
    pub curves: Vec<CurvePoint>,
    pub gaps: Vec<GapPoint>,
    /// Trials per (policy, p) that returned an error.
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub stats: AggregateStats,
    pub records: Vec<TrialRecord>,
    pub violations: Vec<OrderingViolation>,
}

/// Slack allowed in the per-trial error orderings (normalized units).
pub const ORDERING_TOL: f64 = 1e-8;

fn run_trial(
    cfg: &ExperimentConfig,
    policies: &[PolicyId],
    fixed: Option<&SpectrumDecomposition>,
    j: usize,
    k: usize,
) -> Vec<TrialRecord> {
    let p = cfg.arrival.p_grid[j];
    let seed = derive_seed(cfg.master_seed, j, k);
    let record = |policy: &PolicyId, nmse, wall_time, converged, error| TrialRecord {
        p,
        trial: k,
        seed,
        policy: policy.to_string(),
        nmse,
        wall_time,
        converged,
        error,
    };
    let arrivals = sample_bernoulli_arrivals(p, cfg.n, cfg.arrival.e0, stream(seed, ARRIVAL_STREAM))
        .expect("validated probability");
    if arrivals.total() <= 0.0 {
        return policies
            .iter()
            .map(|id| record(id, Some(1.0), 0.0, true, None))
            .collect();
    }
    let channel = match cfg.channel {
        ChannelSpec::Rayleigh => sample_rayleigh_channel(cfg.n, stream(seed, CHANNEL_STREAM)),
        ChannelSpec::Static => ChannelTrace::unit(cfg.n),
    };
    let owned;
    let spectrum = match fixed {
        Some(s) => s,
        None => {
            owned = cfg.spectrum(stream(seed, UNITARY_STREAM));
            &owned
        }
    };
    let noise = NoiseModel::new(cfg.sigma_w_sq).expect("validated noise");
    let inst = match Instance::from_spectrum(spectrum.clone(), channel, noise, arrivals) {
        Ok(i) => i,
        Err(e) => {
            return policies
                .iter()
                .map(|id| record(id, None, 0.0, false, Some(e.to_string())))
                .collect()
        }
    };
    policies
        .iter()
        .map(|id| match run_policy(*id, &inst, &cfg.options) {
            Ok(r) => record(id, Some(r.normalized_mse), r.wall_time, r.converged, None),
            Err(e) => record(id, None, 0.0, false, Some(e.to_string())),
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_ordering(trial: &[TrialRecord]) -> Vec<String> {
    let get = |name: &str| trial.iter().find(|r| r.policy == name).and_then(|r| r.nmse);
    let mut out = Vec::new();
    let optimal = get("optimal");
    if let (Some(b), Some(o)) = (get("relaxed"), optimal) {
        if b > o + ORDERING_TOL {
            out.push(format!("relaxed {b:e} exceeds optimal {o:e}"));
        }
    }
    if let Some(o) = optimal {
        for r in trial {
            if r.policy == "optimal" || r.policy == "relaxed" {
                continue;
            }
            if let Some(v) = r.nmse {
                if o > v + ORDERING_TOL {
                    out.push(format!("optimal {o:e} exceeds {} {v:e}", r.policy));
                }
            }
        }
    }
    out
}

/// Runs the sweep on `jobs` worker threads.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let policies = cfg.executed_policies();
    let fixed = match (cfg.unitary, cfg.unitary_mode) {
        (UnitarySpec::Haar { .. }, UnitaryMode::PerTrial) => None,
        (UnitarySpec::Haar { seed }, UnitaryMode::Fixed) => Some(cfg.spectrum(seed)),
        (UnitarySpec::Dft, _) => Some(cfg.spectrum(0)),
    };
    let grid: Vec<(usize, usize)> = (0..cfg.arrival.p_grid.len())
        .flat_map(|j| (0..cfg.trials).map(move |k| (j, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let trials: Vec<Vec<TrialRecord>> = pool.install(|| {
        grid.par_iter()
            .map(|&(j, k)| run_trial(cfg, &policies, fixed.as_ref(), j, k))
            .collect()
    });

    let mut violations = Vec::new();
    for t in &trials {
        for detail in check_ordering(t) {
            violations.push(OrderingViolation {
                p: t[0].p,
                trial: t[0].trial,
                seed: t[0].seed,
                detail,
            });
        }
    }

    let mut curves = Vec::new();
    let mut gaps = Vec::new();
    let mut failures = BTreeMap::new();
    let per_p = cfg.trials;
    for (j, &p) in cfg.arrival.p_grid.iter().enumerate() {
        let block = &trials[j * per_p..(j + 1) * per_p];
        for (i, id) in policies.iter().enumerate() {
            let values: Vec<f64> = block.iter().filter_map(|t| t[i].nmse).collect();
            let failed = block.len() - values.len();
            if failed > 0 {
                *failures.entry(format!("{id}@p={p}")).or_insert(0) += failed;
            }
            let (mean_nmse, std_nmse) = mean_std(&values);
            curves.push(CurvePoint {
                policy: id.to_string(),
                p,
                mean_nmse,
                std_nmse,
                trials: values.len(),
            });
        }
        if let Some(g) = cfg.gap_policy {
            let gi = policies.iter().position(|x| *x == g).expect("gap policy executed");
            let oi = policies
                .iter()
                .position(|x| *x == PolicyId::Optimal)
                .expect("optimal executed");
            let diffs: Vec<f64> = block.iter().filter_map(|t| Some(t[gi].nmse? - t[oi].nmse?)).collect();
            let (mean_gap, std_gap) = mean_std(&diffs);
            gaps.push(GapPoint { p, mean_gap, std_gap });
        }
    }
    Ok(ExperimentOutput {
        stats: AggregateStats { curves, gaps, failures },
        records: trials.into_iter().flatten().collect(),
        violations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "default_timing_p")]
    pub p: f64,
    pub trials: usize,
    pub policies: Vec<PolicyId>,
    #[serde(default = "default_profile")]
    pub eigen_profile: EigenProfile,
    #[serde(default = "default_noise")]
    pub sigma_w_sq: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub options: PolicyOptions,
}

fn default_timing_p() -> f64 {
    0.3
}

impl TimingConfig {
    pub fn standard(trials: usize) -> Self {
        TimingConfig {
            sizes: vec![16, 32, 64],
            p: 0.3,
            trials,
            policies: vec![
                PolicyId::Optimal,
                PolicyId::Upper(Window::Slots(2)),
                PolicyId::Upper(Window::Fraction(2)),
                PolicyId::Upper(Window::Fraction(1)),
            ],
            eigen_profile: default_profile(),
            sigma_w_sq: 0.001,
            master_seed: 1,
            options: PolicyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TimingRow {
    pub n: usize,
    pub policy: String,
    /// Mean seconds per solve.
    pub mean_time: f64,
    /// Relative to `optimal` at the smallest size (or the first row).
    pub normalized_time: f64,
}

/// Mean wall time per policy with `s = n`, Haar basis and Rayleigh fading.
/// Runs sequentially so timings do not compete for cores.
pub fn timing_benchmark(cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    if cfg.sizes.is_empty() || cfg.trials == 0 || cfg.policies.is_empty() {
        return Err(Error::InvalidConfig("timing needs sizes, trials and policies".into()));
    }
    let mut rows = Vec::new();
    for (j, &n) in cfg.sizes.iter().enumerate() {
        let exp = ExperimentConfig {
            n,
            s: n,
            p_x: None,
            sigma_w_sq: cfg.sigma_w_sq,
            eigen_profile: cfg.eigen_profile.clone(),
            unitary: UnitarySpec::Haar { seed: cfg.master_seed },
            unitary_mode: UnitaryMode::Fixed,
            arrival: ArrivalSpec {
                p_grid: vec![cfg.p],
                e0: 1.0,
            },
            channel: ChannelSpec::Rayleigh,
            policies: cfg.policies.clone(),
            gap_policy: None,
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            options: cfg.options.clone(),
        };
        exp.validate()?;
        let spectrum = exp.spectrum(cfg.master_seed);
        let noise = NoiseModel::new(cfg.sigma_w_sq)?;
        let mut totals = vec![0.0; cfg.policies.len()];
        let mut counts = vec![0usize; cfg.policies.len()];
        let mut k = 0;
        let mut attempts = 0;
        while k < cfg.trials && attempts < 100 * cfg.trials {
            let seed = derive_seed(cfg.master_seed, j, attempts);
            attempts += 1;
            let arrivals = sample_bernoulli_arrivals(cfg.p, n, 1.0, stream(seed, ARRIVAL_STREAM))?;
            if arrivals.total() <= 0.0 {
                continue;
            }
            let channel = sample_rayleigh_channel(n, stream(seed, CHANNEL_STREAM));
            let inst = Instance::from_spectrum(spectrum.clone(), channel, noise, arrivals)?;
            for (i, id) in cfg.policies.iter().enumerate() {
                if let Ok(r) = run_policy(*id, &inst, &cfg.options) {
                    totals[i] += r.wall_time;
                    counts[i] += 1;
                }
            }
            k += 1;
        }
        for (i, id) in cfg.policies.iter().enumerate() {
            rows.push(TimingRow {
                n,
                policy: id.to_string(),
                mean_time: totals[i] / counts[i].max(1) as f64,
                normalized_time: 0.0,
            });
        }
    }
    let reference = rows
        .iter()
        .find(|r| r.policy == "optimal" && r.n == cfg.sizes[0])
        .unwrap_or(&rows[0])
        .mean_time;
    for r in &mut rows {
        r.normalized_time = r.mean_time / reference;
    }
    Ok(rows)
}

pub fn write_curves_csv(path: &Path, stats: &AggregateStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in &stats.curves {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gaps_csv(path: &Path, stats: &AggregateStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if stats.gaps.is_empty() {
        w.write_record(["p", "mean_gap", "std_gap"])?;
    }
    for g in &stats.gaps {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TimingCsvRow<'a> {
    n: usize,
    policy: &'a str,
    normalized_time: f64,
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["n", "policy", "normalized_time"])?;
    }
    for r in rows {
        w.serialize(TimingCsvRow {
            n: r.n,
            policy: &r.policy,
            normalized_time: r.normalized_time,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_jsonl(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
