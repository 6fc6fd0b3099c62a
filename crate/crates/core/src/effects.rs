//! Per-study effect estimates with continuity correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CORRECTION: f64 = 0.5;

/// One 2x2 table. Arm 1 is treatment, arm 0 is control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoArmStudy {
    pub y1: u64,
    pub n1: u64,
    pub y0: u64,
    pub n0: u64,
}

impl TwoArmStudy {
    pub fn new(y1: u64, n1: u64, y0: u64, n0: u64) -> Result<Self> {
        if n1 == 0 || n0 == 0 {
            return Err(Error::domain("arm sizes must be at least 1"));
        }
        if y1 > n1 || y0 > n0 {
            return Err(Error::domain(format!(
                "event counts exceed arm sizes ({y1}/{n1}, {y0}/{n0})"
            )));
        }
        Ok(Self { y1, n1, y0, n0 })
    }

    pub fn y_total(&self) -> u64 {
        self.y1 + self.y0
    }

    pub fn n_total(&self) -> u64 {
        self.n1 + self.n0
    }

    pub fn has_zero_cell(&self) -> bool {
        self.y1 == 0 || self.y0 == 0 || self.y1 == self.n1 || self.y0 == self.n0
    }

    /// Fewer than three events in at least one arm.
    pub fn is_rare(&self) -> bool {
        self.y1.min(self.y0) < 3
    }

    pub fn swapped(&self) -> Self {
        Self {
            y1: self.y0,
            n1: self.n0,
            y0: self.y1,
            n0: self.n1,
        }
    }
}

/// Events in a single group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneArmStudy {
    pub y: u64,
    pub n: u64,
}

impl OneArmStudy {
    pub fn new(y: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("group size must be at least 1"));
        }
        if y > n {
            return Err(Error::domain(format!(
                "event count {y} exceeds group size {n}"
            )));
        }
        Ok(Self { y, n })
    }

    pub fn has_zero_cell(&self) -> bool {
        self.y == 0 || self.y == self.n
    }

    pub fn is_rare(&self) -> bool {
        self.y < 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionPolicy {
    None,
    /// Add 0.5 to every cell of tables that contain a zero cell.
    #[default]
    OnlyZero,
    /// Add 0.5 to every cell of every table.
    All,
}

impl CorrectionPolicy {
    pub fn name(self) -> &'static str {
        match self {
            CorrectionPolicy::None => "none",
            CorrectionPolicy::OnlyZero => "only_zero",
            CorrectionPolicy::All => "all",
        }
    }

    fn offset(self, has_zero: bool) -> f64 {
        match self {
            CorrectionPolicy::None => 0.0,
            CorrectionPolicy::OnlyZero if has_zero => CORRECTION,
            CorrectionPolicy::OnlyZero => 0.0,
            CorrectionPolicy::All => CORRECTION,
        }
    }
}

impl std::str::FromStr for CorrectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(CorrectionPolicy::None),
            "only_zero" | "zero" => Ok(CorrectionPolicy::OnlyZero),
            "all" => Ok(CorrectionPolicy::All),
            other => Err(Error::Config(format!(
                "unknown correction policy `{other}` (expected none, only_zero or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub theta_hat: f64,
    pub se: f64,
    pub n_total: u64,
}

fn undefined(policy: CorrectionPolicy) -> Error {
    Error::UndefinedEstimate {
        study: "?".into(),
        policy: policy.name(),
    }
}

pub fn lnor_estimate(study: &TwoArmStudy, policy: CorrectionPolicy) -> Result<EffectEstimate> {
    let c = policy.offset(study.has_zero_cell());
    let a = study.y1 as f64 + c;
    let b = (study.n1 - study.y1) as f64 + c;
    let d = study.y0 as f64 + c;
    let e = (study.n0 - study.y0) as f64 + c;
    if a <= 0.0 || b <= 0.0 || d <= 0.0 || e <= 0.0 {
        return Err(undefined(policy));
    }
    Ok(EffectEstimate {
        theta_hat: (a / b).ln() - (d / e).ln(),
        se: (1.0 / a + 1.0 / b + 1.0 / d + 1.0 / e).sqrt(),
        n_total: study.n_total(),
    })
}

pub fn logodds_estimate(study: &OneArmStudy, policy: CorrectionPolicy) -> Result<EffectEstimate> {
    let c = policy.offset(study.has_zero_cell());
    let a = study.y as f64 + c;
    let b = (study.n - study.y) as f64 + c;
    if a <= 0.0 || b <= 0.0 {
        return Err(undefined(policy));
    }
    Ok(EffectEstimate {
        theta_hat: (a / b).ln(),
        se: (1.0 / a + 1.0 / b).sqrt(),
        n_total: study.n,
    })
}

fn name_study(err: Error, label: &str) -> Error {
    match err {
        Error::UndefinedEstimate { policy, .. } => Error::UndefinedEstimate {
            study: label.to_string(),
            policy,
        },
        other => other,
    }
}

/// Estimates for every table; errors carry the offending label.
pub fn lnor_estimates(
    studies: &[TwoArmStudy],
    labels: &[String],
    policy: CorrectionPolicy,
) -> Result<Vec<EffectEstimate>> {
    studies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            lnor_estimate(s, policy).map_err(|e| name_study(e, label_at(labels, i).as_str()))
        })
        .collect()
}

pub fn logodds_estimates(
    studies: &[OneArmStudy],
    labels: &[String],
    policy: CorrectionPolicy,
) -> Result<Vec<EffectEstimate>> {
    studies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            logodds_estimate(s, policy).map_err(|e| name_study(e, label_at(labels, i).as_str()))
        })
        .collect()
}

fn label_at(labels: &[String], i: usize) -> String {
    labels
        .get(i)
        .cloned()
        .unwrap_or_else(|| (i + 1).to_string())
}
