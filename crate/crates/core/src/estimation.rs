//! Maximum-likelihood fitting, observed-information standard errors and
//! sensitivity sweeps.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::{CorrectionPolicy, EffectEstimate};
use crate::error::{Error, Result};
use crate::models::{nn_loglik, CoreParams, GlmmLikelihood, ModelKind, QuadSpec, TAU_MAX, TAU_MIN};
use crate::optimize::{minimize_box, nelder_mead, OptSettings};
use crate::selection::{
    copas_n_loglik, copas_shi_loglik, expected_unpublished, CopasShiParams, ProposedLikelihood,
    SelectionParams, SensitivitySpec, RHO_MAX,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

const THETA_BOUND: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Jittered starts on top of the deterministic ones.
    pub restarts: usize,
    /// Also start selection fits from ρ ∈ {0, −0.5, 0.5}. Off gives a single
    /// local search from `init` when `restarts` is 0.
    pub rho_starts: bool,
    /// Natural-scale start (θ, τ[, ρ]).
    pub init: Option<Vec<f64>>,
    pub seed: u64,
    pub quad: QuadSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
            restarts: 5,
            rho_starts: true,
            init: None,
            seed: 20_241_015,
            quad: QuadSpec::default(),
        }
    }
}

impl FitOptions {
    fn settings(&self) -> OptSettings {
        OptSettings {
            max_iter: self.max_iter,
            f_tol: self.f_tol,
            x_tol: self.x_tol,
            g_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
}

impl Estimate {
    pub fn ci(&self) -> Option<(f64, f64)> {
        self.se
            .map(|s| (self.value - Z_95 * s, self.value + Z_95 * s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Estimate,
    pub tau: Estimate,
    pub rho: Option<Estimate>,
    pub loglik: f64,
    pub converged: bool,
    /// Names of parameters sitting on a bound ("tau", "rho").
    pub on_boundary: Vec<String>,
    pub m_unpublished: Option<f64>,
}

impl FitResult {
    pub fn core(&self) -> CoreParams {
        CoreParams {
            theta: self.theta.value,
            tau: self.tau.value,
        }
    }

    pub fn natural(&self) -> Vec<f64> {
        let mut v = vec![self.theta.value, self.tau.value];
        if let Some(r) = self.rho {
            v.push(r.value);
        }
        v
    }

    /// Whether θ's Wald interval contains `truth`.
    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.theta.ci().map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

fn to_internal(natural: &[f64]) -> Vec<f64> {
    let mut x = natural.to_vec();
    x[0] = x[0].clamp(-THETA_BOUND, THETA_BOUND);
    x[1] = x[1].clamp(TAU_MIN, TAU_MAX).ln();
    if x.len() == 3 {
        x[2] = x[2].clamp(-RHO_MAX, RHO_MAX);
    }
    x
}

fn to_natural(internal: &[f64]) -> Vec<f64> {
    let mut x = internal.to_vec();
    x[1] = x[1].exp().clamp(TAU_MIN, TAU_MAX);
    x
}

fn bounds(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![-THETA_BOUND, TAU_MIN.ln()];
    let mut hi = vec![THETA_BOUND, TAU_MAX.ln()];
    if dim == 3 {
        lo.push(-RHO_MAX);
        hi.push(RHO_MAX);
    }
    (lo, hi)
}

/// Result of the observed-information computation.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationSe {
    pub se: Vec<Option<f64>>,
    pub positive_definite: bool,
}

/// Standard errors from the inverse of the negative finite-difference
/// Hessian of the natural-scale log-likelihood. Coordinates flagged in
/// `fixed` are left out and get no standard error.
pub fn observed_information_se<F>(loglik: &F, mle: &[f64], fixed: &[bool]) -> InformationSe
where
    F: Fn(&[f64]) -> f64,
{
    let free: Vec<usize> = (0..mle.len()).filter(|&i| !fixed[i]).collect();
    let m = free.len();
    let mut se = vec![None; mle.len()];
    if m == 0 {
        return InformationSe {
            se,
            positive_definite: true,
        };
    }
    let steps: Vec<f64> = free
        .iter()
        .map(|&i| {
            let h = 1e-4 * mle[i].abs().max(1.0);
            match i {
                1 => h.min(0.25 * mle[1]),
                2 => h.min(0.5 * (1.0 - mle[2].abs())),
                _ => h,
            }
        })
        .collect();
    let at = |shifts: &[(usize, f64)]| {
        let mut x = mle.to_vec();
        for &(k, d) in shifts {
            x[free[k]] += d;
        }
        loglik(&x)
    };
    let f0 = loglik(mle);
    let mut neg_h = vec![vec![0.0; m]; m];
    for a in 0..m {
        let ha = steps[a];
        let fp = at(&[(a, ha)]);
        let fm = at(&[(a, -ha)]);
        neg_h[a][a] = -(fp - 2.0 * f0 + fm) / (ha * ha);
        for b in 0..a {
            let hb = steps[b];
            let v = (at(&[(a, ha), (b, hb)]) - at(&[(a, ha), (b, -hb)]) - at(&[(a, -ha), (b, hb)])
                + at(&[(a, -ha), (b, -hb)]))
                / (4.0 * ha * hb);
            neg_h[a][b] = -v;
            neg_h[b][a] = -v;
        }
    }
    match invert_spd(&neg_h) {
        Some(inv) => {
            for (k, &i) in free.iter().enumerate() {
                se[i] = Some(inv[k][k].sqrt());
            }
            InformationSe {
                se,
                positive_definite: true,
            }
        }
        None => InformationSe {
            se,
            positive_definite: false,
        },
    }
}

/// Cholesky-based inverse; None unless the matrix is finite and positive definite.
fn invert_spd(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k][i] * inv[k][col];
            }
            inv[i][col] = s / l[i][i];
        }
    }
    Some(inv)
}

/// Maximise a natural-scale log-likelihood over (θ, τ) or (θ, τ, ρ).
///
/// `init` is the deterministic start. Selection fits also start from
/// ρ ∈ {0, ±0.5} unless `opts.rho_starts` is off, then `opts.restarts` jittered starts follow; the best optimum
/// is kept.
pub fn fit_ml<F>(loglik: F, init: &[f64], opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let dim = init.len();
    if !(dim == 2 || dim == 3) {
        return Err(Error::Config(format!(
            "expected 2 or 3 parameters, got {dim}"
        )));
    }
    let (lo, hi) = bounds(dim);
    let objective = |x: &[f64]| match loglik(&to_natural(x)) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };

    let base = to_internal(init);
    let mut starts = vec![base.clone()];
    if dim == 3 && opts.rho_starts {
        for r in [0.0, -0.5, 0.5] {
            if (base[2] - r).abs() > 1e-9 {
                let mut s = base.clone();
                s[2] = r;
                starts.push(s);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let mut s = base.clone();
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        s[0] += 0.5 * z0;
        s[1] += 0.5 * z1;
        if dim == 3 {
            s[2] = rng.random_range(-0.9..0.9);
        }
        for i in 0..dim {
            s[i] = s[i].clamp(lo[i], hi[i]);
        }
        starts.push(s);
    }

    let settings = opts.settings();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in &starts {
        if !objective(s).is_finite() {
            continue;
        }
        let r = minimize_box(&objective, s, &lo, &hi, settings);
        if r.fx.is_finite() && best.as_ref().is_none_or(|b| r.fx < b.1 - 1e-12) {
            best = Some((r.x, r.fx, r.converged));
        }
    }
    let (mut x, mut fx, mut ok) = best.ok_or(Error::Initialization)?;
    if !ok {
        let nm = nelder_mead(&objective, &x, &lo, &hi, settings);
        let polished = minimize_box(&objective, &nm.x, &lo, &hi, settings);
        if polished.fx <= fx + 1e-9 {
            x = polished.x;
            fx = polished.fx;
            ok = polished.converged;
        }
    }

    let natural = to_natural(&x);
    let mut fixed = vec![false; dim];
    let mut on_boundary = Vec::new();
    if x[1] <= lo[1] + 1e-6 || x[1] >= hi[1] - 1e-6 {
        fixed[1] = true;
        on_boundary.push("tau".to_string());
    }
    if dim == 3 && x[2].abs() >= RHO_MAX - 1e-6 {
        fixed[2] = true;
        on_boundary.push("rho".to_string());
    }
    if x[0].abs() >= THETA_BOUND - 1e-6 {
        fixed[0] = true;
        on_boundary.push("theta".to_string());
    }
    let nat_ll = |p: &[f64]| loglik(p).unwrap_or(f64::NAN);
    let info = observed_information_se(&nat_ll, &natural, &fixed);
    let converged = ok && natural.iter().all(|v| v.is_finite()) && info.positive_definite;
    Ok(FitResult {
        theta: Estimate {
            value: natural[0],
            se: info.se[0],
        },
        tau: Estimate {
            value: natural[1],
            se: info.se[1],
        },
        rho: (dim == 3).then(|| Estimate {
            value: natural[2],
            se: info.se[2],
        }),
        loglik: -fx,
        converged,
        on_boundary,
        m_unpublished: None,
    })
}

/// Inverse-variance weighted mean and a moment τ for starting values.
fn moment_start(effects: &[EffectEstimate]) -> (f64, f64) {
    let w: Vec<f64> = effects.iter().map(|e| 1.0 / (e.se * e.se)).collect();
    let sw: f64 = w.iter().sum();
    let mean = effects
        .iter()
        .zip(&w)
        .map(|(e, w)| w * e.theta_hat)
        .sum::<f64>()
        / sw;
    let q: f64 = effects
        .iter()
        .zip(&w)
        .map(|(e, w)| w * (e.theta_hat - mean).powi(2))
        .sum();
    let k = effects.len() as f64;
    let c = sw - w.iter().map(|w| w * w).sum::<f64>() / sw;
    let tau2 = if c > 0.0 {
        ((q - (k - 1.0)) / c).max(0.0)
    } else {
        0.0
    };
    (mean, tau2.sqrt().max(0.1))
}

fn default_init(data: &Dataset, policy: CorrectionPolicy) -> Result<(f64, f64)> {
    let effects = data
        .effects(policy)
        .or_else(|_| data.effects(CorrectionPolicy::All))?;
    Ok(moment_start(&effects))
}

/// NN fit on per-study estimates.
pub fn fit_nn(effects: &[EffectEstimate], opts: &FitOptions) -> Result<FitResult> {
    if effects.is_empty() {
        return Err(Error::Config("no studies to fit".into()));
    }
    let init = opts.init.clone().unwrap_or_else(|| {
        let (m, t) = moment_start(effects);
        vec![m, t]
    });
    fit_ml(
        |p| {
            Ok(nn_loglik(
                CoreParams {
                    theta: p[0],
                    tau: p[1],
                },
                effects,
            ))
        },
        &init[..2],
        opts,
    )
}

/// No-selection fit of any model. The policy only affects NN.
pub fn fit_model(
    kind: ModelKind,
    data: &Dataset,
    policy: CorrectionPolicy,
    opts: &FitOptions,
) -> Result<FitResult> {
    if kind == ModelKind::Nn {
        return fit_nn(&data.effects(policy)?, opts);
    }
    let lik = GlmmLikelihood::new(kind, data, opts.quad)?;
    let init = match &opts.init {
        Some(v) => v[..2].to_vec(),
        None => {
            let (m, t) = default_init(data, CorrectionPolicy::OnlyZero)?;
            vec![m, t]
        }
    };
    fit_ml(
        |p| {
            lik.loglik(CoreParams {
                theta: p[0],
                tau: p[1],
            })
        },
        &init,
        opts,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ProposedHn,
    ProposedCbn,
    ProposedSbn1,
    CopasN,
    CopasShi,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ProposedHn,
        Method::ProposedCbn,
        Method::ProposedSbn1,
        Method::CopasN,
        Method::CopasShi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ProposedHn => "proposed-hn",
            Method::ProposedCbn => "proposed-cbn",
            Method::ProposedSbn1 => "proposed-1sbn",
            Method::CopasN => "copas-n",
            Method::CopasShi => "copas-shi",
        }
    }

    /// GLMM under the selection model, if any.
    pub fn glmm(self) -> Option<ModelKind> {
        match self {
            Method::ProposedHn => Some(ModelKind::Hn),
            Method::ProposedCbn => Some(ModelKind::Cbn),
            Method::ProposedSbn1 => Some(ModelKind::Sbn1),
            Method::CopasN | Method::CopasShi => None,
        }
    }

    pub fn uses_policy(self) -> bool {
        self.glmm().is_none()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected one of {})",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

/// A selection-model objective with its anchoring resolved.
pub struct SelectionObjective {
    inner: Inner,
    m_unpublished: f64,
}

enum Inner {
    Proposed(ProposedLikelihood),
    CopasN(CopasShiParams, Vec<EffectEstimate>),
    CopasShi(CopasShiParams, Vec<EffectEstimate>),
}

impl SelectionObjective {
    pub fn new(
        method: Method,
        data: &Dataset,
        p_min: f64,
        p_max: f64,
        policy: CorrectionPolicy,
        quad: QuadSpec,
    ) -> Result<Self> {
        let ns = data.n_totals();
        match method {
            Method::CopasShi => {
                let effects = data.effects(policy)?;
                let se: Vec<f64> = effects.iter().map(|e| e.se).collect();
                let g = CopasShiParams::from_probs(p_min, p_max, &se)?;
                Ok(Self {
                    m_unpublished: g.expected_unpublished(&se),
                    inner: Inner::CopasShi(g, effects),
                })
            }
            Method::CopasN => {
                let spec = SensitivitySpec::anchored(p_min, p_max, &ns)?;
                Ok(Self {
                    m_unpublished: expected_unpublished(&spec, &ns),
                    inner: Inner::CopasN(CopasShiParams::from_spec(&spec), data.effects(policy)?),
                })
            }
            _ => {
                let kind = method.glmm().expect("proposed method has a GLMM");
                let spec = SensitivitySpec::anchored(p_min, p_max, &ns)?;
                Ok(Self {
                    m_unpublished: expected_unpublished(&spec, &ns),
                    inner: Inner::Proposed(ProposedLikelihood::new(kind, &spec, data, quad)?),
                })
            }
        }
    }

    /// Build with explicit anchors (used by the simulation).
    pub fn with_spec(
        method: Method,
        data: &Dataset,
        spec: &SensitivitySpec,
        copas_shi: Option<CopasShiParams>,
        policy: CorrectionPolicy,
        quad: QuadSpec,
    ) -> Result<Self> {
        let ns = data.n_totals();
        match method {
            Method::CopasShi => {
                let effects = data.effects(policy)?;
                let se: Vec<f64> = effects.iter().map(|e| e.se).collect();
                let g = match copas_shi {
                    Some(g) => g,
                    None => CopasShiParams::from_probs(spec.p_min, spec.p_max, &se)?,
                };
                Ok(Self {
                    m_unpublished: g.expected_unpublished(&se),
                    inner: Inner::CopasShi(g, effects),
                })
            }
            Method::CopasN => Ok(Self {
                m_unpublished: expected_unpublished(spec, &ns),
                inner: Inner::CopasN(CopasShiParams::from_spec(spec), data.effects(policy)?),
            }),
            _ => {
                let kind = method.glmm().expect("proposed method has a GLMM");
                Ok(Self {
                    m_unpublished: expected_unpublished(spec, &ns),
                    inner: Inner::Proposed(ProposedLikelihood::new(kind, spec, data, quad)?),
                })
            }
        }
    }

    pub fn loglik(&self, p: &[f64]) -> Result<f64> {
        let core = CoreParams {
            theta: p[0],
            tau: p[1],
        };
        match &self.inner {
            Inner::Proposed(l) => l.loglik(SelectionParams { core, rho: p[2] }),
            Inner::CopasN(g, e) => copas_n_loglik(core, p[2], *g, e),
            Inner::CopasShi(g, e) => copas_shi_loglik(core, p[2], *g, e),
        }
    }

    pub fn m_unpublished(&self) -> f64 {
        self.m_unpublished
    }

    pub fn fit(&self, init: &[f64], opts: &FitOptions) -> Result<FitResult> {
        let mut r = fit_ml(|p| self.loglik(p), init, opts)?;
        r.m_unpublished = Some(self.m_unpublished);
        Ok(r)
    }
}

/// Starting point for a selection fit: the matching no-selection estimate.
pub fn selection_init(
    method: Method,
    data: &Dataset,
    policy: CorrectionPolicy,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    if let Some(v) = &opts.init {
        let mut v = v.clone();
        v.resize(3, 0.0);
        return Ok(v);
    }
    let base = FitOptions {
        restarts: 0,
        init: None,
        ..opts.clone()
    };
    let fit = match method.glmm() {
        Some(kind) => fit_model(kind, data, policy, &base)?,
        None => fit_nn(&data.effects(policy)?, &base)?,
    };
    Ok(vec![fit.theta.value, fit.tau.value.max(0.05), 0.0])
}

pub fn fit_selection(
    method: Method,
    data: &Dataset,
    p_min: f64,
    p_max: f64,
    policy: CorrectionPolicy,
    opts: &FitOptions,
) -> Result<FitResult> {
    let init = selection_init(method, data, policy, opts)?;
    SelectionObjective::new(method, data, p_min, p_max, policy, opts.quad)?.fit(&init, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GridMode {
    /// Each row starts from the previous row's estimate.
    #[default]
    Warm,
    /// Every row starts from the no-selection fit; rows run in parallel.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub p_min: f64,
    pub p_max: f64,
    /// None when the row could not be fitted at all.
    pub fit: Option<FitResult>,
    pub m_unpublished: f64,
    pub error: Option<String>,
}

/// Pmin from 0.99 then 0.9 down to 0.1, with Pmax = 0.999.
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut g = vec![(0.99, 0.999)];
    for k in (1..=9).rev() {
        g.push((k as f64 / 10.0, 0.999));
    }
    g
}

pub fn sensitivity_grid(
    method: Method,
    data: &Dataset,
    grid: &[(f64, f64)],
    policy: CorrectionPolicy,
    opts: &FitOptions,
    mode: GridMode,
) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sensitivity grid is empty".into()));
    }
    let mut points = grid.to_vec();
    points.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let start = selection_init(method, data, policy, opts)?;

    let run = |&(p_min, p_max): &(f64, f64), init: &[f64]| -> GridRow {
        let outcome = SelectionObjective::new(method, data, p_min, p_max, policy, opts.quad)
            .and_then(|obj| obj.fit(init, opts).map(|f| (obj.m_unpublished(), f)));
        match outcome {
            Ok((m, fit)) => GridRow {
                p_min,
                p_max,
                fit: Some(fit),
                m_unpublished: m,
                error: None,
            },
            Err(e) => GridRow {
                p_min,
                p_max,
                fit: None,
                m_unpublished: f64::NAN,
                error: Some(e.to_string()),
            },
        }
    };

    Ok(match mode {
        GridMode::Cold => points.par_iter().map(|p| run(p, &start)).collect(),
        GridMode::Warm => {
            let mut rows = Vec::with_capacity(points.len());
            let mut init = start;
            for p in &points {
                let row = run(p, &init);
                if let Some(f) = &row.fit {
                    init = f.natural();
                }
                rows.push(row);
            }
            rows
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::example;

    #[test]
    fn gaussian_mean_se() {
        // n observations with known variance v: se(mean) = √(v/n)
        let obs = [1.2, 0.4, 2.2, 1.9, 0.7, 1.1, 1.6, 0.3];
        let v = 0.8;
        let ll = |p: &[f64]| {
            obs.iter()
                .map(|x| -0.5 * (x - p[0]).powi(2) / v)
                .sum::<f64>()
        };
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let info = observed_information_se(&ll, &[mean], &[false]);
        let want = (v / obs.len() as f64).sqrt();
        assert!((info.se[0].unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn non_pd_hessian_reports_no_se() {
        let ll = |p: &[f64]| p[0] * p[0];
        let info = observed_information_se(&ll, &[0.0], &[false]);
        assert!(!info.positive_definite);
        assert!(info.se[0].is_none());
    }

    #[test]
    fn nn_example_one() {
        let d = example("example1").unwrap();
        let f = fit_model(
            ModelKind::Nn,
            &d,
            CorrectionPolicy::OnlyZero,
            &FitOptions::default(),
        )
        .unwrap();
        assert!((f.theta.value + 0.955).abs() < 0.005);
        assert!(f.on_boundary.contains(&"tau".to_string()));
    }

    #[test]
    fn initialization_error_when_objective_never_finite() {
        let r = fit_ml(|_| Ok(f64::NAN), &[0.0, 1.0], &FitOptions::default());
        assert!(matches!(r, Err(Error::Initialization)));
    }

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("trimfill".parse::<Method>().is_err());
    }

    #[test]
    fn grid_order_and_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], (0.99, 0.999));
        assert_eq!(g[9].0, 0.1);
        let d = example("example1").unwrap();
        let r = sensitivity_grid(
            Method::CopasN,
            &d,
            &[],
            CorrectionPolicy::OnlyZero,
            &FitOptions::default(),
            GridMode::Warm,
        );
        assert!(r.is_err());
    }
}
