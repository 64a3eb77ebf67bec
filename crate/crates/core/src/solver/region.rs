use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::PowerAllocation;

/// Relative slack (times `E_tot`) accepted by the feasibility test.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Harvested energy packets `E_t` and their running sums.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    e: Vec<f64>,
    cumulative: Vec<f64>,
}

impl EnergyTrace {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if let Some(bad) = e.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "energy packets must be finite and nonnegative, got {bad}"
            )));
        }
        let cumulative = e
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        Ok(EnergyTrace { e, cumulative })
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn packets(&self) -> &[f64] {
        &self.e
    }

    /// `cumulative[t] = E_0 + .. + E_t` (0-based).
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Packets restricted to `start..end`.
    pub fn window(&self, start: usize, end: usize) -> EnergyTrace {
        EnergyTrace::new(self.e[start..end].to_vec()).expect("sub-trace of a valid trace")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    /// Energy causality at every slot plus total-energy equality.
    Causal,
    /// Only the total-energy equality (the relaxation).
    TotalOnly,
}

/// Feasible set of amplification profiles for a given energy trace.
#[derive(Debug, Clone)]
pub struct FeasibleRegion {
    sigma_sq: Vec<f64>,
    energy: EnergyTrace,
    mode: RegionMode,
}

impl FeasibleRegion {
    pub fn new(sigma_sq: Vec<f64>, energy: EnergyTrace, mode: RegionMode) -> Result<Self> {
        if sigma_sq.len() != energy.n() {
            return Err(Error::LengthMismatch {
                left: sigma_sq.len(),
                right: energy.n(),
            });
        }
        if sigma_sq.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(
                "variances must be finite and nonnegative".into(),
            ));
        }
        Ok(FeasibleRegion { sigma_sq, energy, mode })
    }

    pub fn causal(sigma_sq: &[f64], energy: &EnergyTrace) -> Result<Self> {
        Self::new(sigma_sq.to_vec(), energy.clone(), RegionMode::Causal)
    }

    pub fn total_only(sigma_sq: &[f64], energy: &EnergyTrace) -> Result<Self> {
        Self::new(sigma_sq.to_vec(), energy.clone(), RegionMode::TotalOnly)
    }

    pub fn n(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn energy(&self) -> &EnergyTrace {
        &self.energy
    }

    pub fn mode(&self) -> RegionMode {
        self.mode
    }

    pub fn with_mode(&self, mode: RegionMode) -> Self {
        FeasibleRegion { mode, ..self.clone() }
    }

    /// Restriction to slots `start..end` with its own causality and
    /// total-energy equality.
    pub fn window(&self, start: usize, end: usize) -> FeasibleRegion {
        FeasibleRegion {
            sigma_sq: self.sigma_sq[start..end].to_vec(),
            energy: self.energy.window(start, end),
            mode: self.mode,
        }
    }
}

/// Outcome of [`check_feasible`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Largest violation in energy units (0 when every constraint holds exactly).
    pub worst_violation: f64,
    /// Human-readable name of the worst constraint.
    pub worst_constraint: String,
    /// Unused stored energy `sum_{l<=t} (E_l - J_l)` after each slot.
    pub stored: Vec<f64>,
}

pub fn check_feasible(alloc: &PowerAllocation, region: &FeasibleRegion) -> Result<FeasibilityReport> {
    let n = region.n();
    if alloc.n() != n {
        return Err(Error::LengthMismatch {
            left: alloc.n(),
            right: n,
        });
    }
    let e_tot = region.energy().total();
    let tol = FEASIBILITY_TOL * e_tot;
    let mut worst = 0.0_f64;
    let mut worst_name = String::from("none");
    let mut feasible = true;
    let mut note = |violation: f64, allowed: f64, name: String| {
        if violation > allowed {
            feasible = false;
        }
        if violation > worst {
            worst = violation;
            worst_name = name;
        }
    };
    for (t, &a) in alloc.a().iter().enumerate() {
        note(-a, 1e-12, format!("a[{}] >= 0", t + 1));
    }
    let mut used = 0.0;
    let mut stored = Vec::with_capacity(n);
    for t in 0..n {
        used += alloc.a()[t] * region.sigma_sq()[t];
        let available = region.energy().cumulative()[t];
        stored.push(available - used);
        if t + 1 < n && region.mode() == RegionMode::Causal {
            note(used - available, tol, format!("causality at slot {}", t + 1));
        }
    }
    note((used - e_tot).abs(), tol, "total energy equality".into());
    Ok(FeasibilityReport {
        feasible,
        worst_violation: worst,
        worst_constraint: worst_name,
        stored,
    })
}

/// Scaled description of a region over its free slots.
///
/// Variables are `x_j = J_{slots[j]} / total`; `x >= 0`, `sum x = 1` and
/// `x_0 + .. + x_p <= bound` for every cap. Zero-variance slots and slots
/// before the first arrival (causal mode) are fixed at zero and dropped.
#[derive(Debug, Clone)]
pub(crate) struct ReducedProblem {
    pub n: usize,
    pub slots: Vec<usize>,
    pub weights: Vec<f64>,
    pub caps: Vec<Cap>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Cap {
    pub index: usize,
    pub bound: f64,
}

impl ReducedProblem {
    pub fn build(region: &FeasibleRegion) -> Result<Self> {
        let n = region.n();
        let total = region.energy().total();
        if total <= 0.0 {
            return Err(Error::InfeasibleRegion(
                "no energy is harvested over the horizon".into(),
            ));
        }
        let cumulative = region.energy().cumulative();
        let causal = region.mode() == RegionMode::Causal;
        let slots: Vec<usize> = (0..n)
            .filter(|&t| region.sigma_sq()[t] > 0.0 && (!causal || cumulative[t] > 0.0))
            .collect();
        let Some(&last) = slots.last() else {
            return Err(Error::InfeasibleRegion(
                "no slot with positive signal variance can carry the harvested energy".into(),
            ));
        };
        if causal && cumulative[last] < total * (1.0 - 1e-12) {
            return Err(Error::InfeasibleRegion(format!(
                "energy arriving after slot {} cannot be spent on a slot with positive variance",
                last + 1
            )));
        }
        let m = slots.len();
        let mut caps = Vec::new();
        if causal {
            for p in 0..m.saturating_sub(1) {
                let bound = (cumulative[slots[p]] / total).min(1.0);
                let next = (cumulative[slots[p + 1]] / total).min(1.0);
                // a cap equal to the next one is implied by it
                if bound < next {
                    caps.push(Cap { index: p, bound });
                }
            }
        }
        Ok(ReducedProblem {
            n,
            weights: slots.iter().map(|&t| region.sigma_sq()[t]).collect(),
            slots,
            caps,
            total,
        })
    }

    pub fn m(&self) -> usize {
        self.slots.len()
    }

    /// A point with every inequality strictly slack and `sum x = 1`.
    pub fn interior_point(&self) -> Vec<f64> {
        let m = self.m();
        if m == 1 {
            return vec![1.0];
        }
        let mut eps = 1.0 / m as f64;
        for cap in &self.caps {
            eps = eps.min(cap.bound / (cap.index + 1) as f64);
        }
        eps *= 0.5;
        let mut x = vec![eps; m];
        x[m - 1] = 1.0 - eps * (m - 1) as f64;
        x
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.n];
        for (j, &t) in self.slots.iter().enumerate() {
            a[t] = x[j].max(0.0) * self.total / self.weights[j];
        }
        a
    }

    /// Positive slacks: `x_j` for nonnegativity and `bound - prefix` per cap.
    pub fn slacks(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let prefix = prefix_sums(x);
        let caps = self.caps.iter().map(|c| c.bound - prefix[c.index]).collect();
        (x.to_vec(), caps)
    }
}

pub(crate) fn prefix_sums(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}
