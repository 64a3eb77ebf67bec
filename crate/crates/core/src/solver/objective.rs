use nalgebra::DMatrix;

use crate::error::Result;
use crate::estimator::WoodburyState;
use crate::signal::SpectrumDecomposition;

/// Value, gradient over all `n` slots and (optionally) the Hessian
/// restricted to a slot subset, all with respect to `a`.
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Option<Hessian>,
}

pub(crate) enum Hessian {
    Dense(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

impl Hessian {
    pub fn into_dense(self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(h) => h,
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)),
        }
    }
}

pub(crate) trait SlotObjective: Sync {
    fn evaluate(&self, a: &[f64], hess_slots: Option<&[usize]>) -> Result<Evaluation>;
}

/// Estimation error of the reduced form.
pub(crate) struct MmseObjective<'a> {
    pub spectrum: &'a SpectrumDecomposition,
    pub gain_sq: &'a [f64],
    pub gamma: f64,
}

impl SlotObjective for MmseObjective<'_> {
    fn evaluate(&self, a: &[f64], hess_slots: Option<&[usize]>) -> Result<Evaluation> {
        let w = WoodburyState::new(self.spectrum, self.gain_sq, a, self.gamma)?;
        Ok(Evaluation {
            value: w.value(),
            grad: w.gradient(self.gain_sq),
            hess: hess_slots.map(|s| Hessian::Dense(w.hessian(self.gain_sq, s))),
        })
    }
}

/// `sum_t c_t / (1 + d_t a_t)`.
pub(crate) struct SeparableObjective {
    pub coeff: Vec<f64>,
    pub rate: Vec<f64>,
}

impl SlotObjective for SeparableObjective {
    fn evaluate(&self, a: &[f64], hess_slots: Option<&[usize]>) -> Result<Evaluation> {
        let mut value = 0.0;
        let mut grad = Vec::with_capacity(a.len());
        for ((&c, &d), &x) in self.coeff.iter().zip(&self.rate).zip(a) {
            let q = 1.0 + d * x.max(0.0);
            value += c / q;
            grad.push(-c * d / (q * q));
        }
        let hess = hess_slots.map(|slots| {
            Hessian::Diagonal(
                slots
                    .iter()
                    .map(|&t| {
                        let q = 1.0 + self.rate[t] * a[t].max(0.0);
                        2.0 * self.coeff[t] * self.rate[t] * self.rate[t] / (q * q * q)
                    })
                    .collect(),
            )
        });
        Ok(Evaluation { value, grad, hess })
    }
}

/// `0.5 ||a - y||^2`, the projection objective.
pub(crate) struct DistanceObjective<'a> {
    pub target: &'a [f64],
}

impl SlotObjective for DistanceObjective<'_> {
    fn evaluate(&self, a: &[f64], hess_slots: Option<&[usize]>) -> Result<Evaluation> {
        let grad: Vec<f64> = a.iter().zip(self.target).map(|(x, y)| x - y).collect();
        let value = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
        let hess = hess_slots.map(|s| Hessian::Diagonal(vec![1.0; s.len()]));
        Ok(Evaluation { value, grad, hess })
    }
}
