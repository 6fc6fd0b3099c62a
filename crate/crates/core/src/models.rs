//! Marginal likelihoods of the NN, HN, CBN and one-sample BN random-effects
//! models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Studies};
use crate::distributions::{
    expit, inverse_mills, ln_choose, softplus, std_normal_log_cdf, FnchTable,
};
use crate::effects::{EffectEstimate, OneArmStudy, TwoArmStudy};
use crate::error::{Error, Result};
use crate::quadrature::{log_integrate_adaptive, GaussHermite};

pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

/// Error target of the adaptive rule used for selection integrands.
const SELECTION_REL_TOL: f64 = 1e-11;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Nn,
    Hn,
    Cbn,
    Sbn1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nn => "nn",
            ModelKind::Hn => "hn",
            ModelKind::Cbn => "cbn",
            ModelKind::Sbn1 => "1sbn",
        }
    }

    pub fn needs_two_arms(self) -> Option<bool> {
        match self {
            ModelKind::Nn => None,
            ModelKind::Hn | ModelKind::Cbn => Some(true),
            ModelKind::Sbn1 => Some(false),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(ModelKind::Nn),
            "hn" => Ok(ModelKind::Hn),
            "cbn" => Ok(ModelKind::Cbn),
            "1sbn" | "sbn1" | "sbn" => Ok(ModelKind::Sbn1),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected nn, hn, cbn or 1sbn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreParams {
    pub theta: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub node_count: usize,
    pub rel_tol: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            node_count: 41,
            rel_tol: 1e-6,
        }
    }
}

pub fn hn_within_loglik(theta_i: f64, study: &TwoArmStudy) -> Result<f64> {
    let table = FnchTable::new(study.n1, study.n0, study.y_total())?;
    Ok(table.log_weight(study.y1) + theta_i * study.y1 as f64 - table.log_normalizer(theta_i))
}

pub fn cbn_within_loglik(theta_i: f64, study: &TwoArmStudy) -> f64 {
    let offset = (study.n1 as f64 / study.n0 as f64).ln();
    binomial_eval(study.y1, study.y_total(), offset + theta_i).0
}

pub fn sbn_within_loglik(theta_i: f64, study: &OneArmStudy) -> f64 {
    binomial_eval(study.y, study.n, theta_i).0
}

/// Binomial log-pmf on the logit scale and its first two η-derivatives.
fn binomial_eval(k: u64, n: u64, eta: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let kf = k as f64;
    let nf = n as f64;
    let mut v = ln_choose(n, k);
    if k > 0 {
        v -= kf * softplus(-eta);
    }
    if k < n {
        v -= (nf - kf) * softplus(eta);
    }
    let p = expit(eta);
    (v, kf - nf * p, -nf * p * (1.0 - p))
}

/// Closed-form NN marginal log-likelihood.
pub fn nn_loglik(params: CoreParams, effects: &[EffectEstimate]) -> f64 {
    let t2 = params.tau * params.tau;
    effects
        .iter()
        .map(|e| {
            let v = e.se * e.se + t2;
            let r = e.theta_hat - params.theta;
            -0.5 * (LN_2PI + v.ln()) - 0.5 * r * r / v
        })
        .sum()
}

#[derive(Debug, Clone)]
enum Within {
    Hn { table: FnchTable, y1: u64 },
    Binomial { k: u64, n: u64, offset: f64 },
}

impl Within {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        match self {
            Within::Hn { table, y1 } => {
                let m = table.moments(t);
                let k = *y1 as f64;
                (
                    table.log_weight(*y1) + t * k - m.log_norm,
                    k - m.mean,
                    -m.var,
                )
            }
            Within::Binomial { k, n, offset } => binomial_eval(*k, *n, offset + t),
        }
    }
}

/// Probit selection factor inside the integral: Φ((a + ρ(t-θ)/τ)/√(1-ρ²)).
#[derive(Debug, Clone, Copy)]
pub(crate) struct SelectionTerm {
    pub a: f64,
    pub rho: f64,
}

/// Per-study within likelihoods prepared once, evaluated many times.
#[derive(Debug, Clone)]
pub struct GlmmLikelihood {
    kind: ModelKind,
    within: Vec<Within>,
    rule: GaussHermite,
    rel_tol: f64,
}

impl GlmmLikelihood {
    pub fn new(kind: ModelKind, data: &Dataset, quad: QuadSpec) -> Result<Self> {
        if quad.node_count < 15 {
            return Err(Error::Config(format!(
                "quadrature needs at least 15 nodes, got {}",
                quad.node_count
            )));
        }
        if data.is_empty() {
            return Err(Error::Config("dataset has no studies".into()));
        }
        let within = match (kind, &data.studies) {
            (ModelKind::Hn, Studies::TwoArm(v)) => v
                .iter()
                .map(|s| {
                    Ok(Within::Hn {
                        table: FnchTable::new(s.n1, s.n0, s.y_total())?,
                        y1: s.y1,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            (ModelKind::Cbn, Studies::TwoArm(v)) => v
                .iter()
                .map(|s| Within::Binomial {
                    k: s.y1,
                    n: s.y_total(),
                    offset: (s.n1 as f64 / s.n0 as f64).ln(),
                })
                .collect(),
            (ModelKind::Sbn1, Studies::OneArm(v)) => v
                .iter()
                .map(|s| Within::Binomial {
                    k: s.y,
                    n: s.n,
                    offset: 0.0,
                })
                .collect(),
            (ModelKind::Nn, _) => {
                return Err(Error::Config(
                    "the NN model has a closed form and needs no quadrature".into(),
                ))
            }
            (k, _) => {
                return Err(Error::Config(format!(
                    "model {k} does not match the dataset's arm structure"
                )))
            }
        };
        Ok(Self {
            kind,
            within,
            rule: GaussHermite::new(quad.node_count),
            rel_tol: SELECTION_REL_TOL,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.within.len()
    }

    pub fn is_empty(&self) -> bool {
        self.within.is_empty()
    }

    /// Within-study log-likelihood of study `i` at study effect `t`.
    pub fn within_loglik(&self, i: usize, t: f64) -> f64 {
        self.within[i].eval(t).0
    }

    /// log ∫ L_i(t) [selection factor] φ((t-θ)/τ)/τ dt.
    pub(crate) fn log_integral(
        &self,
        i: usize,
        params: CoreParams,
        sel: Option<SelectionTerm>,
    ) -> f64 {
        let CoreParams { theta, tau } = params;
        let w = &self.within[i];
        let inv_t2 = 1.0 / (tau * tau);
        let log_norm = -0.5 * LN_2PI - tau.ln();
        match sel {
            None => self.rule.log_integrate(theta, |t| {
                let (v, d1, d2) = w.eval(t);
                let r = t - theta;
                (
                    v + log_norm - 0.5 * r * r * inv_t2,
                    d1 - r * inv_t2,
                    d2 - inv_t2,
                )
            }),
            Some(SelectionTerm { a, rho }) if rho == 0.0 => {
                // constant selection factor: identical nodes, exact cancellation
                let log_sel = std_normal_log_cdf(a);
                self.rule.log_integrate(theta, |t| {
                    let (v, d1, d2) = w.eval(t);
                    let r = t - theta;
                    (
                        v + log_norm - 0.5 * r * r * inv_t2 + log_sel,
                        d1 - r * inv_t2,
                        d2 - inv_t2,
                    )
                })
            }
            Some(SelectionTerm { a, rho }) => {
                let root = (1.0 - rho * rho).sqrt();
                let c = rho / (tau * root);
                log_integrate_adaptive(theta, self.rel_tol, |t| {
                    let (v, d1, d2) = w.eval(t);
                    let r = t - theta;
                    let u = a / root + c * r;
                    let lam = inverse_mills(u);
                    (
                        v + log_norm - 0.5 * r * r * inv_t2 + std_normal_log_cdf(u),
                        d1 - r * inv_t2 + c * lam,
                        d2 - inv_t2 - c * c * lam * (u + lam),
                    )
                })
            }
        }
    }

    /// Marginal log-likelihood without selection.
    pub fn loglik(&self, params: CoreParams) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.within.len() {
            let v = self.log_integral(i, params, None);
            if !v.is_finite() {
                return Err(numeric(i, params));
            }
            total += v;
        }
        Ok(total)
    }
}

pub(crate) fn numeric(i: usize, params: CoreParams) -> Error {
    Error::Numeric {
        study: i + 1,
        detail: format!("theta={}, tau={}", params.theta, params.tau),
    }
}

pub fn glmm_marginal_loglik(
    kind: ModelKind,
    params: CoreParams,
    data: &Dataset,
    quad: QuadSpec,
) -> Result<f64> {
    GlmmLikelihood::new(kind, data, quad)?.loglik(params)
}
