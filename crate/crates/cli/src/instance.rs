use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use eh_allocate::harness::{sample_bernoulli_arrivals, sample_rayleigh_channel};
use eh_allocate::signal::{
    build_circulant, build_cwss_from_spectrum, build_lowpass_cwss, build_rank_one, build_static_correlation,
    random_haar_covariance, CovarianceDocument, C64,
};
use eh_allocate::{ChannelTrace, CovarianceModel, EnergyTrace, Instance, NoiseModel, PolicyId, SolverOptions};

/// Covariance builder selected by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Lowpass {
        n: usize,
        s: usize,
        p_x: f64,
    },
    StaticCorrelation {
        n: usize,
        rho: f64,
        p_x: f64,
    },
    /// First row of a circulant covariance.
    Circulant {
        re: Vec<f64>,
        #[serde(default)]
        im: Option<Vec<f64>>,
    },
    /// DFT-indexed eigenvalues of a circulant covariance.
    CwssSpectrum {
        z: Vec<f64>,
    },
    RankOne {
        re: Vec<f64>,
        #[serde(default)]
        im: Option<Vec<f64>>,
        p_x: f64,
    },
    /// Haar basis with the given eigenvalues on its first columns.
    Haar {
        n: usize,
        lambda: Vec<f64>,
        seed: u64,
    },
    Matrix(CovarianceDocument),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Static,
    Rayleigh {
        seed: u64,
    },
    Explicit {
        re: Vec<f64>,
        #[serde(default)]
        im: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrivalSpec {
    Packets(Vec<f64>),
    Bernoulli(BernoulliSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BernoulliSpec {
    pub p: f64,
    #[serde(default = "one")]
    pub e0: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub model: ModelSpec,
    pub channel: ChannelSpec,
    pub arrivals: ArrivalSpec,
    pub sigma_w_sq: f64,
    pub policy: PolicyId,
    #[serde(default)]
    pub t_d: Option<usize>,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn complex(re: &[f64], im: Option<&Vec<f64>>) -> Result<Vec<C64>> {
    match im {
        Some(im) if im.len() != re.len() => bail!("real and imaginary parts differ in length"),
        Some(im) => Ok(re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect()),
        None => Ok(re.iter().map(|&a| C64::new(a, 0.0)).collect()),
    }
}

impl InstanceSpec {
    /// Replaces every seed in the description.
    pub fn override_seed(&mut self, seed: u64) {
        if let ModelSpec::Haar { seed: s, .. } = &mut self.model {
            *s = seed;
        }
        if let ChannelSpec::Rayleigh { seed: s } = &mut self.channel {
            *s = seed;
        }
        if let ArrivalSpec::Bernoulli(b) = &mut self.arrivals {
            b.seed = seed;
        }
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        Ok(match &self.model {
            ModelSpec::Lowpass { n, s, p_x } => build_lowpass_cwss(*n, *s, *p_x)?,
            ModelSpec::StaticCorrelation { n, rho, p_x } => build_static_correlation(*n, *rho, *p_x)?,
            ModelSpec::Circulant { re, im } => build_circulant(&complex(re, im.as_ref())?)?.0,
            ModelSpec::CwssSpectrum { z } => build_cwss_from_spectrum(z)?,
            ModelSpec::RankOne { re, im, p_x } => build_rank_one(&complex(re, im.as_ref())?, *p_x)?,
            ModelSpec::Haar { n, lambda, seed } => random_haar_covariance(*n, lambda, *seed)?,
            ModelSpec::Matrix(doc) => CovarianceModel::from_document(doc)?,
        })
    }

    pub fn instance(&self) -> Result<Instance> {
        let model = self.model().context("building the covariance model")?;
        let n = model.n();
        let channel = match &self.channel {
            ChannelSpec::Static => ChannelTrace::unit(n),
            ChannelSpec::Rayleigh { seed } => sample_rayleigh_channel(n, *seed),
            ChannelSpec::Explicit { re, im } => ChannelTrace::new(complex(re, im.as_ref())?)?,
        };
        let energy = match &self.arrivals {
            ArrivalSpec::Packets(e) => EnergyTrace::new(e.clone())?,
            ArrivalSpec::Bernoulli(b) => sample_bernoulli_arrivals(b.p, n, b.e0, b.seed)?,
        };
        let noise = NoiseModel::new(self.sigma_w_sq)?;
        Ok(Instance::new(&model, channel, noise, energy)?)
    }
}
