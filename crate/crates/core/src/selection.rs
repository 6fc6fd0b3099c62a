//! Selection models for publication bias: the sample-size based probit
//! selection on GLMMs, and the Copas-N and Copas-Shi comparators.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{std_normal_cdf, std_normal_log_cdf, std_normal_quantile};
use crate::effects::EffectEstimate;
use crate::error::{Error, Result};
use crate::models::{numeric, CoreParams, GlmmLikelihood, ModelKind, QuadSpec, SelectionTerm};

pub const RHO_MAX: f64 = 0.99;

/// Publication probabilities of the smallest and largest study and the
/// probit coefficients they imply on √n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub p_min: f64,
    pub p_max: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

fn check_probs(p_min: f64, p_max: f64) -> Result<(f64, f64)> {
    if !(p_min > 0.0 && p_max < 1.0 && p_min <= p_max) {
        return Err(Error::domain(format!(
            "publication probabilities need 0 < p_min <= p_max < 1, got ({p_min}, {p_max})"
        )));
    }
    Ok((std_normal_quantile(p_min)?, std_normal_quantile(p_max)?))
}

pub fn alphas_from_probs(
    p_min: f64,
    p_max: f64,
    n_min: f64,
    n_max: f64,
) -> Result<SensitivitySpec> {
    let (q_lo, q_hi) = check_probs(p_min, p_max)?;
    if !(n_min > 0.0 && n_min < n_max) {
        return Err(Error::domain(format!(
            "study-size anchors need 0 < n_min < n_max, got ({n_min}, {n_max})"
        )));
    }
    let alpha1 = (q_hi - q_lo) / (n_max.sqrt() - n_min.sqrt());
    Ok(SensitivitySpec {
        p_min,
        p_max,
        n_min,
        n_max,
        alpha0: q_hi - alpha1 * n_max.sqrt(),
        alpha1,
    })
}

impl SensitivitySpec {
    /// Anchor at the smallest and largest total sample size in `ns`.
    pub fn anchored(p_min: f64, p_max: f64, ns: &[u64]) -> Result<Self> {
        let lo = ns.iter().copied().min().unwrap_or(0) as f64;
        let hi = ns.iter().copied().max().unwrap_or(0) as f64;
        alphas_from_probs(p_min, p_max, lo, hi)
    }

    /// α₀ + α₁√n.
    pub fn linear(&self, n: f64) -> f64 {
        self.alpha0 + self.alpha1 * n.sqrt()
    }
}

pub fn publish_prob(spec: &SensitivitySpec, n: f64) -> f64 {
    std_normal_cdf(spec.linear(n))
}

/// Σ (1 - P_i)/P_i.
pub fn expected_unpublished(spec: &SensitivitySpec, ns: &[u64]) -> f64 {
    ns.iter()
        .map(|&n| {
            let p = publish_prob(spec, n as f64);
            (1.0 - p) / p
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub core: CoreParams,
    pub rho: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(format!(
            "selection correlation must satisfy |rho| < 1, got {rho}"
        )));
    }
    Ok(())
}

/// Conditional likelihood of the published studies under the GLMM with
/// probit selection on √n.
#[derive(Debug, Clone)]
pub struct ProposedLikelihood {
    glmm: GlmmLikelihood,
    linear: Vec<f64>,
    log_published: f64,
}

impl ProposedLikelihood {
    pub fn new(
        kind: ModelKind,
        spec: &SensitivitySpec,
        data: &Dataset,
        quad: QuadSpec,
    ) -> Result<Self> {
        let glmm = GlmmLikelihood::new(kind, data, quad)?;
        let linear: Vec<f64> = data
            .n_totals()
            .iter()
            .map(|&n| spec.linear(n as f64))
            .collect();
        let log_published = linear.iter().map(|&a| std_normal_log_cdf(a)).sum();
        Ok(Self {
            glmm,
            linear,
            log_published,
        })
    }

    pub fn glmm(&self) -> &GlmmLikelihood {
        &self.glmm
    }

    pub fn loglik(&self, params: SelectionParams) -> Result<f64> {
        check_rho(params.rho)?;
        let mut total = 0.0;
        for (i, &a) in self.linear.iter().enumerate() {
            let v =
                self.glmm
                    .log_integral(i, params.core, Some(SelectionTerm { a, rho: params.rho }));
            if !v.is_finite() {
                return Err(numeric(i, params.core));
            }
            total += v;
        }
        Ok(total - self.log_published)
    }
}

pub fn proposed_conditional_loglik(
    kind: ModelKind,
    params: SelectionParams,
    spec: &SensitivitySpec,
    data: &Dataset,
    quad: QuadSpec,
) -> Result<f64> {
    ProposedLikelihood::new(kind, spec, data, quad)?.loglik(params)
}

/// Probit selection coefficients on a study-level covariate (1/s for
/// Copas-Shi, √n for Copas-N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopasShiParams {
    pub gamma0: f64,
    pub gamma1: f64,
}

impl CopasShiParams {
    /// Anchored on standard errors: the largest s gets `p_min` and the
    /// smallest s gets `p_max`.
    pub fn from_probs(p_min: f64, p_max: f64, se: &[f64]) -> Result<Self> {
        let (q_lo, q_hi) = check_probs(p_min, p_max)?;
        let s_min = se.iter().copied().fold(f64::INFINITY, f64::min);
        let s_max = se.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(s_min > 0.0 && s_min < s_max) {
            return Err(Error::domain(format!(
                "standard-error anchors need 0 < min s < max s, got ({s_min}, {s_max})"
            )));
        }
        let gamma1 = (q_hi - q_lo) / (1.0 / s_min - 1.0 / s_max);
        Ok(Self {
            gamma0: q_hi - gamma1 / s_min,
            gamma1,
        })
    }

    /// Same coefficients as the GLMM selection function on √n.
    pub fn from_spec(spec: &SensitivitySpec) -> Self {
        Self {
            gamma0: spec.alpha0,
            gamma1: spec.alpha1,
        }
    }

    /// Σ (1 - P_i)/P_i with P_i = Φ(γ₀ + γ₁/s_i).
    pub fn expected_unpublished(&self, se: &[f64]) -> f64 {
        se.iter()
            .map(|s| {
                let p = std_normal_cdf(self.gamma0 + self.gamma1 / s);
                (1.0 - p) / p
            })
            .sum()
    }
}

/// Copas-Shi log-likelihood of the published estimates, without the
/// -½log(2π) constant per study.
pub fn copas_shi_loglik(
    core: CoreParams,
    rho: f64,
    gamma: CopasShiParams,
    effects: &[EffectEstimate],
) -> Result<f64> {
    check_rho(rho)?;
    let t2 = core.tau * core.tau;
    Ok(effects
        .iter()
        .map(|e| {
            let v = t2 + e.se * e.se;
            let sd = v.sqrt();
            let r = e.theta_hat - core.theta;
            let u = gamma.gamma0 + gamma.gamma1 / e.se;
            let rt = rho * e.se / sd;
            let w = (u + rt * r / sd) / (1.0 - rt * rt).sqrt();
            -0.5 * v.ln() - 0.5 * r * r / v - std_normal_log_cdf(u) + std_normal_log_cdf(w)
        })
        .sum())
}

/// Copas-N log-likelihood: within-study variance 1/n and selection on √n.
pub fn copas_n_loglik(
    core: CoreParams,
    rho: f64,
    gamma: CopasShiParams,
    effects: &[EffectEstimate],
) -> Result<f64> {
    check_rho(rho)?;
    let t2 = core.tau * core.tau;
    let root = (1.0 - rho * rho).sqrt();
    Ok(effects
        .iter()
        .map(|e| {
            let n = e.n_total as f64;
            let v = t2 + 1.0 / n;
            let r = e.theta_hat - core.theta;
            let u = gamma.gamma0 + gamma.gamma1 * n.sqrt();
            let w = (u + rho * r / v.sqrt()) / root;
            -0.5 * v.ln() - 0.5 * r * r / v - std_normal_log_cdf(u) + std_normal_log_cdf(w)
        })
        .sum())
}
