//! Monte-Carlo harness: population generation under three data-generating
//! processes, latent-variable selection, and bias/coverage summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{expit, logit, FnchTable};
use crate::effects::{CorrectionPolicy, OneArmStudy, TwoArmStudy};
use crate::error::{Error, Result};
use crate::estimation::{fit_model, fit_nn, FitOptions, FitResult, Method, SelectionObjective};
use crate::models::ModelKind;
use crate::selection::{alphas_from_probs, CopasShiParams, SensitivitySpec};

const RESAMPLE_CAP: usize = 10_000;

/// Event-count cutoffs (inclusive) used for the rare-study shares. These
/// reproduce the published prevalence tables for the HN and one-arm designs.
pub const RARE_MAX_EVENTS_TWO_ARM: u64 = 3;
pub const RARE_MAX_EVENTS_ONE_ARM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dgp {
    Hn,
    TwoSbn,
    OneSbn,
}

impl Dgp {
    pub fn name(self) -> &'static str {
        match self {
            Dgp::Hn => "hn",
            Dgp::TwoSbn => "2sbn",
            Dgp::OneSbn => "1sbn",
        }
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hn" => Ok(Dgp::Hn),
            "2sbn" => Ok(Dgp::TwoSbn),
            "1sbn" => Ok(Dgp::OneSbn),
            other => Err(Error::Config(format!(
                "unknown dgp `{other}` (expected hn, 2sbn or 1sbn)"
            ))),
        }
    }
}

/// Treatment:control allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Allocation {
    Equal,
    TwoToOne,
}

impl Allocation {
    /// (n1, n0); the treatment arm gets the larger share for 2:1.
    pub fn split(self, n: u64) -> (u64, u64) {
        let n1 = match self {
            Allocation::Equal => (n as f64 / 2.0).round() as u64,
            Allocation::TwoToOne => (2.0 * n as f64 / 3.0).round() as u64,
        };
        (n1, n - n1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Allocation::Equal => "1:1",
            Allocation::TwoToOne => "2:1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dgp: Dgp,
    pub studies: usize,
    pub theta: f64,
    pub tau2: f64,
    pub rho: f64,
    pub n_range: (u64, u64),
    /// Two-arm designs only.
    pub alloc: Option<Allocation>,
    /// HN design only.
    pub y_total_range: Option<(u64, u64)>,
    /// 2SBN design only.
    pub p0: Option<f64>,
    pub p_min: f64,
    pub p_max: f64,
}

const KEYS: [&str; 14] = [
    "name", "dgp", "studies", "theta", "tau2", "rho", "n_min", "n_max", "alloc", "y_min", "y_max",
    "p0", "p_min", "p_max",
];

impl Scenario {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut unknown = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                unknown.push(key);
                continue;
            }
            if kv
                .insert(key.clone(), (idx + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown scenario keys: {} (allowed: {})",
                unknown.join(", "),
                KEYS.join(", ")
            )));
        }
        fn num<T: FromStr>(kv: &BTreeMap<String, (usize, String)>, key: &str) -> Result<Option<T>> {
            match kv.get(key) {
                None => Ok(None),
                Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                    line: *line,
                    message: format!("invalid value `{v}` for `{key}`"),
                }),
            }
        }
        let need = |key: &str| Error::Config(format!("scenario is missing required key `{key}`"));
        let dgp: Dgp = kv.get("dgp").ok_or_else(|| need("dgp"))?.1.parse()?;
        let studies: usize = num(&kv, "studies")?.ok_or_else(|| need("studies"))?;
        let tau2: f64 = num(&kv, "tau2")?.ok_or_else(|| need("tau2"))?;
        let n_min: u64 = num(&kv, "n_min")?.ok_or_else(|| need("n_min"))?;
        let n_max: u64 = num(&kv, "n_max")?.ok_or_else(|| need("n_max"))?;
        let alloc = match kv.get("alloc").map(|(_, v)| v.as_str()) {
            None => None,
            Some("1:1") => Some(Allocation::Equal),
            Some("2:1") => Some(Allocation::TwoToOne),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown allocation `{other}` (expected 1:1 or 2:1)"
                )))
            }
        };
        let y_min: Option<u64> = num(&kv, "y_min")?;
        let y_max: Option<u64> = num(&kv, "y_max")?;
        let p0: Option<f64> = num(&kv, "p0")?;

        let reject = |key: &str, present: bool| {
            if present {
                Err(Error::Config(format!(
                    "key `{key}` does not apply to dgp {}",
                    dgp.name()
                )))
            } else {
                Ok(())
            }
        };
        let (alloc, y_total_range, p0) = match dgp {
            Dgp::Hn => {
                reject("p0", p0.is_some())?;
                let yr = match (y_min, y_max) {
                    (None, None) => (5, 15),
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::Config(
                            "y_min and y_max must be given together".into(),
                        ))
                    }
                };
                (Some(alloc.unwrap_or(Allocation::Equal)), Some(yr), None)
            }
            Dgp::TwoSbn => {
                reject("y_min", y_min.is_some())?;
                reject("y_max", y_max.is_some())?;
                (
                    Some(alloc.unwrap_or(Allocation::Equal)),
                    None,
                    Some(p0.ok_or_else(|| need("p0"))?),
                )
            }
            Dgp::OneSbn => {
                reject("alloc", alloc.is_some())?;
                reject("y_min", y_min.is_some())?;
                reject("y_max", y_max.is_some())?;
                reject("p0", p0.is_some())?;
                (None, None, None)
            }
        };
        let sc = Scenario {
            name: kv.get("name").map(|(_, v)| v.clone()).unwrap_or_default(),
            dgp,
            studies,
            theta: num(&kv, "theta")?.unwrap_or(-2.0),
            tau2,
            rho: num(&kv, "rho")?.unwrap_or(0.8),
            n_range: (n_min, n_max),
            alloc,
            y_total_range,
            p0,
            p_min: num(&kv, "p_min")?.unwrap_or(0.2),
            p_max: num(&kv, "p_max")?.unwrap_or(0.99),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.studies == 0 {
            return bad("studies must be positive".into());
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return bad(format!("tau2 must be positive, got {}", self.tau2));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        let (lo, hi) = self.n_range;
        if lo < 2 || lo >= hi {
            return bad(format!("need 2 <= n_min < n_max, got [{lo}, {hi}]"));
        }
        if let Some((a, b)) = self.y_total_range {
            if a > b || b > lo {
                return bad(format!(
                    "total events [{a}, {b}] must be ordered and not exceed n_min"
                ));
            }
        }
        if let Some(p) = self.p0 {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("p0 must lie in (0, 1), got {p}"));
            }
        }
        self.selection_spec().map(|_| ())
    }

    /// Selection anchored at the endpoints of the scenario's n range.
    pub fn selection_spec(&self) -> Result<SensitivitySpec> {
        alphas_from_probs(
            self.p_min,
            self.p_max,
            self.n_range.0 as f64,
            self.n_range.1 as f64,
        )
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    /// Canonical `key = value` text; parses back to the same scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.name.is_empty() {
            let _ = writeln!(s, "name = {}", self.name);
        }
        let _ = writeln!(s, "dgp = {}", self.dgp.name());
        let _ = writeln!(s, "studies = {}", self.studies);
        let _ = writeln!(s, "theta = {}", self.theta);
        let _ = writeln!(s, "tau2 = {}", self.tau2);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "n_min = {}", self.n_range.0);
        let _ = writeln!(s, "n_max = {}", self.n_range.1);
        if let Some(a) = self.alloc {
            let _ = writeln!(s, "alloc = {}", a.name());
        }
        if let Some((a, b)) = self.y_total_range {
            let _ = writeln!(s, "y_min = {a}");
            let _ = writeln!(s, "y_max = {b}");
        }
        if let Some(p) = self.p0 {
            let _ = writeln!(s, "p0 = {p}");
        }
        let _ = writeln!(s, "p_min = {}", self.p_min);
        let _ = writeln!(s, "p_max = {}", self.p_max);
        s
    }

    /// FNV-1a of the canonical text, used to separate seed streams.
    pub fn stream_id(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

/// Every design of the simulation tables: two-arm designs for both
/// data-generating processes, then the one-arm designs.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    let two_arm = [((30u64, 60u64), 0.2), ((50, 200), 0.1), ((500, 700), 0.002)];
    for dgp in [Dgp::Hn, Dgp::TwoSbn] {
        for s in [15usize, 50] {
            for &(range, p0) in &two_arm {
                for alloc in [Allocation::Equal, Allocation::TwoToOne] {
                    for tau2 in [0.1, 0.3, 0.7] {
                        out.push(Scenario {
                            name: format!(
                                "{}_s{}_n{}-{}_{}_tau2-{}",
                                dgp.name(),
                                s,
                                range.0,
                                range.1,
                                if alloc == Allocation::Equal {
                                    "1to1"
                                } else {
                                    "2to1"
                                },
                                tau2
                            ),
                            dgp,
                            studies: s,
                            theta: -2.0,
                            tau2,
                            rho: 0.8,
                            n_range: range,
                            alloc: Some(alloc),
                            y_total_range: (dgp == Dgp::Hn).then_some((5, 15)),
                            p0: (dgp == Dgp::TwoSbn).then_some(p0),
                            p_min: 0.2,
                            p_max: 0.99,
                        });
                    }
                }
            }
        }
    }
    for s in [15usize, 50] {
        for range in [(15u64, 30u64), (25, 100)] {
            for tau2 in [0.1, 0.3, 0.7] {
                out.push(Scenario {
                    name: format!("1sbn_s{}_n{}-{}_tau2-{}", s, range.0, range.1, tau2),
                    dgp: Dgp::OneSbn,
                    studies: s,
                    theta: -2.0,
                    tau2,
                    rho: 0.8,
                    n_range: range,
                    alloc: None,
                    y_total_range: None,
                    p0: None,
                    p_min: 0.2,
                    p_max: 0.99,
                });
            }
        }
    }
    out
}

/// Bivariate normal (θ_i, δ_i) with Var δ = 1 and Cov = τρ.
pub fn draw_effects_and_residuals<R: Rng>(
    theta: f64,
    tau: f64,
    rho: f64,
    s: usize,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let root = (1.0 - rho * rho).sqrt();
    (0..s)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (theta + tau * z1, rho * z1 + root * z2)
        })
        .collect()
}

fn alloc_of(sc: &Scenario) -> Result<Allocation> {
    sc.alloc
        .ok_or_else(|| Error::Config(format!("dgp {} needs an allocation", sc.dgp.name())))
}

fn draw_fnch<R: Rng>(n1: u64, n0: u64, y: u64, log_or: f64, rng: &mut R) -> Result<u64> {
    let table = FnchTable::new(n1, n0, y)?;
    let u: f64 = rng.random();
    Ok(table.quantile(u, log_or))
}

fn draw_binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    Binomial::new(n, p)
        .map(|b| b.sample(rng))
        .map_err(|e| Error::domain(format!("binomial({n}, {p}): {e}")))
}

pub fn gen_hn_population<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<Vec<(TwoArmStudy, f64)>> {
    let alloc = alloc_of(sc)?;
    let (y_lo, y_hi) = sc
        .y_total_range
        .ok_or_else(|| Error::Config("HN dgp needs a total-event range".into()))?;
    let effects = draw_effects_and_residuals(sc.theta, sc.tau(), sc.rho, sc.studies, rng);
    effects
        .into_iter()
        .map(|(theta_i, delta)| {
            let n = rng.random_range(sc.n_range.0..=sc.n_range.1);
            let (n1, n0) = alloc.split(n);
            let y = rng.random_range(y_lo..=y_hi);
            let y1 = draw_fnch(n1, n0, y, theta_i, rng)?;
            Ok((
                TwoArmStudy {
                    y1,
                    n1,
                    y0: y - y1,
                    n0,
                },
                delta,
            ))
        })
        .collect()
}

pub fn gen_2sbn_population<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<Vec<(TwoArmStudy, f64)>> {
    let alloc = alloc_of(sc)?;
    let p0 = sc
        .p0
        .ok_or_else(|| Error::Config("2SBN dgp needs a baseline probability p0".into()))?;
    let sd = 0.5 * sc.tau();
    let effects = draw_effects_and_residuals(sc.theta, sc.tau(), sc.rho, sc.studies, rng);
    effects
        .into_iter()
        .map(|(theta_i, delta)| {
            let n = rng.random_range(sc.n_range.0..=sc.n_range.1);
            let (n1, n0) = alloc.split(n);
            let mut p_c = None;
            for _ in 0..RESAMPLE_CAP {
                let z: f64 = rng.sample(StandardNormal);
                let p = p0 + sd * z;
                if p > 0.0 && p < 1.0 {
                    p_c = Some(p);
                    break;
                }
            }
            let p_c = p_c.ok_or_else(|| {
                Error::Config(format!(
                    "baseline probability N({p0}, {sd}²) fell outside (0, 1) in {RESAMPLE_CAP} draws"
                ))
            })?;
            let p_t = expit(logit(p_c) + theta_i);
            let y1 = draw_binomial(n1, p_t, rng)?;
            let y0 = draw_binomial(n0, p_c, rng)?;
            Ok((TwoArmStudy { y1, n1, y0, n0 }, delta))
        })
        .collect()
}

pub fn gen_1sbn_population<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<Vec<(OneArmStudy, f64)>> {
    let effects = draw_effects_and_residuals(sc.theta, sc.tau(), sc.rho, sc.studies, rng);
    effects
        .into_iter()
        .map(|(theta_i, delta)| {
            let n = rng.random_range(sc.n_range.0..=sc.n_range.1);
            let y = draw_binomial(n, expit(theta_i), rng)?;
            Ok((OneArmStudy { y, n }, delta))
        })
        .collect()
}

/// Keep study i iff α₀ + α₁√n_i + δ_i > 0.
pub fn apply_selection<T: Clone>(
    population: &[(T, f64)],
    n_of: impl Fn(&T) -> u64,
    spec: &SensitivitySpec,
) -> Vec<T> {
    population
        .iter()
        .filter(|(s, delta)| spec.linear(n_of(s) as f64) + delta > 0.0)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Estimators fitted in every replicate, in output order.
pub fn estimators(dgp: Dgp) -> Vec<&'static str> {
    match dgp {
        Dgp::Hn | Dgp::TwoSbn => vec![
            "NN_P", "HN_P", "CBN_P", "NN_O", "HN_O", "CBN_O", "CN", "CS", "HN_prop", "CBN_prop",
        ],
        Dgp::OneSbn => vec!["NN_P", "1SBN_P", "NN_O", "1SBN_O", "CN", "CS", "1SBN_prop"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub theta: f64,
    pub tau: f64,
    pub rho: Option<f64>,
    pub covers: bool,
    pub converged: bool,
    pub on_boundary: Vec<String>,
}

impl FitSummary {
    fn from_fit(r: Result<FitResult>, truth: f64) -> Self {
        match r {
            Ok(f) => FitSummary {
                theta: f.theta.value,
                tau: f.tau.value,
                rho: f.rho.map(|r| r.value),
                covers: f.covers(truth).unwrap_or(false),
                converged: f.converged,
                on_boundary: f.on_boundary,
            },
            Err(_) => FitSummary {
                theta: f64::NAN,
                tau: f64::NAN,
                rho: None,
                covers: false,
                converged: false,
                on_boundary: Vec::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub population: usize,
    pub published: usize,
    pub rare_population: usize,
    pub rare_published: usize,
    /// Empty when nothing was published.
    pub fits: Vec<FitSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    /// Starting values always come from the truth plus U(−0.1, 0.1); the
    /// default is one local search from there, as in the reference study.
    pub fit: FitOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            reps: 1000,
            seed: 1,
            jobs: 0,
            fit: FitOptions {
                restarts: 0,
                rho_starts: false,
                ..FitOptions::default()
            },
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `rep`: depends only on (seed, scenario, rep).
pub fn replicate_seed(seed: u64, sc: &Scenario, rep: usize) -> u64 {
    splitmix(splitmix(seed ^ sc.stream_id()) ^ rep as u64)
}

/// Population and published datasets of replicate `seed`, as used by [`run_replicate`].
pub fn replicate_datasets(sc: &Scenario, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate(sc, &sc.selection_spec()?, &mut rng)
}

fn generate<R: Rng>(
    sc: &Scenario,
    spec: &SensitivitySpec,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    Ok(match sc.dgp {
        Dgp::Hn | Dgp::TwoSbn => {
            let p = if sc.dgp == Dgp::Hn {
                gen_hn_population(sc, rng)?
            } else {
                gen_2sbn_population(sc, rng)?
            };
            let kept = apply_selection(&p, TwoArmStudy::n_total, spec);
            (
                Dataset::two_arm(p.into_iter().map(|(s, _)| s).collect()),
                Dataset::two_arm(kept),
            )
        }
        Dgp::OneSbn => {
            let p = gen_1sbn_population(sc, rng)?;
            let kept = apply_selection(&p, |s: &OneArmStudy| s.n, spec);
            (
                Dataset::one_arm(p.into_iter().map(|(s, _)| s).collect()),
                Dataset::one_arm(kept),
            )
        }
    })
}

fn rare_count(d: &Dataset) -> usize {
    match &d.studies {
        crate::data::Studies::TwoArm(v) => v
            .iter()
            .filter(|s| s.y1.min(s.y0) <= RARE_MAX_EVENTS_TWO_ARM)
            .count(),
        crate::data::Studies::OneArm(v) => {
            v.iter().filter(|s| s.y <= RARE_MAX_EVENTS_ONE_ARM).count()
        }
    }
}

/// Rare-study percentages (population, published) without fitting anything.
/// Uses the same replicate streams as [`run_replicates`].
pub fn rare_shares(sc: &Scenario, reps: usize, seed: u64) -> Result<(f64, f64)> {
    let spec = sc.selection_spec()?;
    let (mut rp, mut np, mut ro, mut no) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, sc, i));
        let (pop, publ) = generate(sc, &spec, &mut rng)?;
        rp += rare_count(&pop);
        np += pop.len();
        ro += rare_count(&publ);
        no += publ.len();
    }
    let pct = |a: usize, b: usize| {
        if b == 0 {
            f64::NAN
        } else {
            100.0 * a as f64 / b as f64
        }
    };
    Ok((pct(rp, np), pct(ro, no)))
}

/// Generate, select and fit one replicate.
pub fn run_replicate(sc: &Scenario, seed: u64, fit: &FitOptions) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = sc.selection_spec()?;
    let (pop, publ) = generate(sc, &spec, &mut rng)?;
    let mut rep = Replicate {
        population: pop.len(),
        published: publ.len(),
        rare_population: rare_count(&pop),
        rare_published: rare_count(&publ),
        fits: Vec::new(),
    };
    if publ.is_empty() {
        return Ok(rep);
    }

    // starting values: truth plus U(-0.1, 0.1), from the replicate's stream
    let mut jitter = || rng.random_range(-0.1..0.1);
    let init2 = vec![sc.theta + jitter(), sc.tau() + jitter()];
    let init3 = vec![init2[0], init2[1], sc.rho + jitter()];
    let opts2 = FitOptions {
        init: Some(init2.clone()),
        ..fit.clone()
    };
    let policy = CorrectionPolicy::OnlyZero;
    let truth = sc.theta;
    let nn = |d: &Dataset| d.effects(policy).and_then(|e| fit_nn(&e, &opts2));
    let glmm = |k: ModelKind, d: &Dataset| fit_model(k, d, policy, &opts2);
    let selection = |m: Method| -> Result<FitResult> {
        let cs = if m == Method::CopasShi {
            let se: Vec<f64> = publ.effects(policy)?.iter().map(|e| e.se).collect();
            Some(CopasShiParams::from_probs(sc.p_min, sc.p_max, &se)?)
        } else {
            None
        };
        SelectionObjective::with_spec(m, &publ, &spec, cs, policy, fit.quad)?.fit(&init3, fit)
    };

    let results: Vec<Result<FitResult>> = match sc.dgp {
        Dgp::Hn | Dgp::TwoSbn => vec![
            nn(&pop),
            glmm(ModelKind::Hn, &pop),
            glmm(ModelKind::Cbn, &pop),
            nn(&publ),
            glmm(ModelKind::Hn, &publ),
            glmm(ModelKind::Cbn, &publ),
            selection(Method::CopasN),
            selection(Method::CopasShi),
            selection(Method::ProposedHn),
            selection(Method::ProposedCbn),
        ],
        Dgp::OneSbn => vec![
            nn(&pop),
            glmm(ModelKind::Sbn1, &pop),
            nn(&publ),
            glmm(ModelKind::Sbn1, &publ),
            selection(Method::CopasN),
            selection(Method::CopasShi),
            selection(Method::ProposedSbn1),
        ],
    };
    rep.fits = results
        .into_iter()
        .map(|r| FitSummary::from_fit(r, truth))
        .collect();
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    pub bias_x100: f64,
    pub coverage: f64,
    pub convergence_rate: f64,
    pub mean_tau2_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub reps: usize,
    /// Replicates with no published study, excluded from the metrics.
    pub degenerate: usize,
    pub mean_published: f64,
    pub rare_population_pct: f64,
    pub rare_published_pct: f64,
    pub estimators: Vec<EstimatorMetrics>,
}

/// Fixed-order aggregation of replicate outcomes.
pub fn summarize(sc: &Scenario, reps: &[Replicate]) -> MetricsRow {
    let names = estimators(sc.dgp);
    let used: Vec<&Replicate> = reps.iter().filter(|r| !r.fits.is_empty()).collect();
    let pct = |a: usize, b: usize| {
        if b == 0 {
            f64::NAN
        } else {
            100.0 * a as f64 / b as f64
        }
    };
    let total_pop: usize = reps.iter().map(|r| r.population).sum();
    let total_pub: usize = reps.iter().map(|r| r.published).sum();
    let estimators = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let ok: Vec<&FitSummary> = used
                .iter()
                .map(|r| &r.fits[k])
                .filter(|f| f.converged)
                .collect();
            let m = ok.len() as f64;
            let mean = |f: &dyn Fn(&FitSummary) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|s| f(s)).sum::<f64>() / m
                }
            };
            EstimatorMetrics {
                estimator: name.to_string(),
                bias_x100: 100.0 * mean(&|s| s.theta - sc.theta),
                coverage: pct(ok.iter().filter(|s| s.covers).count(), ok.len()),
                convergence_rate: pct(ok.len(), used.len()),
                mean_tau2_hat: mean(&|s| s.tau * s.tau),
            }
        })
        .collect();
    MetricsRow {
        scenario: sc.name.clone(),
        reps: reps.len(),
        degenerate: reps.len() - used.len(),
        mean_published: total_pub as f64 / reps.len().max(1) as f64,
        rare_population_pct: pct(reps.iter().map(|r| r.rare_population).sum(), total_pop),
        rare_published_pct: pct(reps.iter().map(|r| r.rare_published).sum(), total_pub),
        estimators,
    }
}

pub fn run_replicates(sc: &Scenario, opts: &SimOptions) -> Result<Vec<Replicate>> {
    if opts.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    sc.validate()?;
    let work = || {
        (0..opts.reps)
            .into_par_iter()
            .map(|i| run_replicate(sc, replicate_seed(opts.seed, sc, i), &opts.fit))
            .collect::<Result<Vec<_>>>()
    };
    if opts.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.jobs)))?
            .install(work)
    }
}

pub fn run_scenario(sc: &Scenario, opts: &SimOptions) -> Result<MetricsRow> {
    Ok(summarize(sc, &run_replicates(sc, opts)?))
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        String::new()
    }
}

pub const METRICS_HEADER: &str = "scenario,reps,degenerate,mean_published,rare_population_pct,rare_published_pct,estimator,bias_x100,coverage_pct,convergence_pct,mean_tau2_hat";

/// One CSV line per estimator, with the scenario-level columns repeated.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        for e in &r.estimators {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.reps,
                r.degenerate,
                fmt_num(r.mean_published),
                fmt_num(r.rare_population_pct),
                fmt_num(r.rare_published_pct),
                e.estimator,
                fmt_num(e.bias_x100),
                fmt_num(e.coverage),
                fmt_num(e.convergence_rate),
                fmt_num(e.mean_tau2_hat),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row1() -> Scenario {
        Scenario::parse("dgp = hn\nstudies = 15\ntau2 = 0.1\nn_min = 30\nn_max = 60\n").unwrap()
    }

    #[test]
    fn parse_defaults_and_roundtrip() {
        let sc = row1();
        assert_eq!(sc.theta, -2.0);
        assert_eq!(sc.rho, 0.8);
        assert_eq!(sc.y_total_range, Some((5, 15)));
        assert_eq!(sc.alloc, Some(Allocation::Equal));
        assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
    }

    #[test]
    fn parse_errors() {
        let e = Scenario::parse(
            "dgp = hn\nstudies = 15\ntau2 = 0.1\nn_min = 30\nn_max = 60\nfoo = 1\nbar=2\n",
        )
        .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("foo") && msg.contains("bar"), "{msg}");
        assert!(
            Scenario::parse("dgp = 2sbn\nstudies = 15\ntau2 = 0.1\nn_min = 30\nn_max = 60\n")
                .is_err()
        );
        assert!(Scenario::parse(
            "dgp = hn\nstudies = 15\ntau2 = 0.1\nn_min = 30\nn_max = 60\np0=0.1\n"
        )
        .is_err());
        assert!(Scenario::parse("dgp = hn\nstudies = x\n").is_err());
    }

    #[test]
    fn allocation_split() {
        assert_eq!(Allocation::TwoToOne.split(45), (30, 15));
        assert_eq!(Allocation::TwoToOne.split(31), (21, 10));
        assert_eq!(
            Allocation::Equal.split(31).0 + Allocation::Equal.split(31).1,
            31
        );
    }

    #[test]
    fn bivariate_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = draw_effects_and_residuals(-2.0, 0.5, 0.8, 100_000, &mut rng);
        let n = d.len() as f64;
        let mt = d.iter().map(|p| p.0).sum::<f64>() / n;
        let md = d.iter().map(|p| p.1).sum::<f64>() / n;
        let cov = d.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum::<f64>() / n;
        assert!((cov - 0.4).abs() < 0.02);
        assert!((mt + 2.0).abs() < 3.0 * 0.5 / n.sqrt());
    }

    #[test]
    fn hn_support_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(draw_fnch(20, 25, 12, -500.0, &mut rng).unwrap(), 0);
            assert_eq!(draw_fnch(5, 25, 12, -500.0, &mut rng).unwrap(), 0);
            assert_eq!(draw_fnch(5, 8, 12, -500.0, &mut rng).unwrap(), 4);
        }
    }

    #[test]
    fn selection_keeps_large_residuals() {
        let spec = alphas_from_probs(0.2, 0.99, 30.0, 60.0).unwrap();
        let pop = vec![(30u64, f64::INFINITY), (30, f64::NEG_INFINITY), (60, 0.0)];
        let kept = apply_selection(&pop, |n| *n, &spec);
        assert_eq!(kept, vec![30, 60]);
    }

    #[test]
    fn replicate_seeds_differ() {
        let sc = row1();
        assert_ne!(replicate_seed(1, &sc, 0), replicate_seed(1, &sc, 1));
        assert_ne!(replicate_seed(1, &sc, 0), replicate_seed(2, &sc, 0));
    }

    #[test]
    fn builtin_design_count() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 36 + 36 + 12);
        for sc in &all {
            sc.validate().unwrap();
            assert_eq!(&Scenario::parse(&sc.to_text()).unwrap(), sc);
        }
    }
}
