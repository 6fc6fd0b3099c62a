//! Datasets and the four bundled application examples.

use serde::{Deserialize, Serialize};

use crate::effects::{
    lnor_estimates, logodds_estimates, CorrectionPolicy, EffectEstimate, OneArmStudy, TwoArmStudy,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Studies {
    TwoArm(Vec<TwoArmStudy>),
    OneArm(Vec<OneArmStudy>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub studies: Studies,
}

impl Dataset {
    pub fn two_arm(studies: Vec<TwoArmStudy>) -> Self {
        let labels = (1..=studies.len()).map(|i| i.to_string()).collect();
        Self {
            labels,
            studies: Studies::TwoArm(studies),
        }
    }

    pub fn one_arm(studies: Vec<OneArmStudy>) -> Self {
        let labels = (1..=studies.len()).map(|i| i.to_string()).collect();
        Self {
            labels,
            studies: Studies::OneArm(studies),
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Config(format!(
                "{} labels for {} studies",
                labels.len(),
                self.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        match &self.studies {
            Studies::TwoArm(v) => v.len(),
            Studies::OneArm(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_two_arm(&self) -> bool {
        matches!(self.studies, Studies::TwoArm(_))
    }

    /// Total subjects per study.
    pub fn n_totals(&self) -> Vec<u64> {
        match &self.studies {
            Studies::TwoArm(v) => v.iter().map(TwoArmStudy::n_total).collect(),
            Studies::OneArm(v) => v.iter().map(|s| s.n).collect(),
        }
    }

    pub fn effects(&self, policy: CorrectionPolicy) -> Result<Vec<EffectEstimate>> {
        match &self.studies {
            Studies::TwoArm(v) => lnor_estimates(v, &self.labels, policy),
            Studies::OneArm(v) => logodds_estimates(v, &self.labels, policy),
        }
    }

    /// Same studies in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let labels = order.iter().map(|&i| self.labels[i].clone()).collect();
        let studies = match &self.studies {
            Studies::TwoArm(v) => Studies::TwoArm(order.iter().map(|&i| v[i]).collect()),
            Studies::OneArm(v) => Studies::OneArm(order.iter().map(|&i| v[i]).collect()),
        };
        Self { labels, studies }
    }
}

/// Names accepted by [`example`].
pub const EXAMPLE_NAMES: [&str; 4] = ["example1", "example2", "example3", "example4"];

// (y1, n1, y0, n0): antibiotic-impregnated catheter vs standard catheter,
// catheter-related bloodstream infection.
const CATHETER: [(u64, u64, u64, u64); 18] = [
    (0, 116, 3, 117),
    (1, 44, 3, 35),
    (2, 208, 9, 195),
    (0, 130, 7, 136),
    (5, 151, 6, 157),
    (1, 98, 4, 139),
    (1, 174, 3, 177),
    (1, 74, 2, 39),
    (1, 97, 19, 103),
    (1, 113, 2, 122),
    (0, 66, 7, 64),
    (0, 70, 1, 58),
    (3, 188, 5, 175),
    (6, 187, 11, 180),
    (0, 118, 0, 105),
    (0, 252, 1, 262),
    (1, 345, 3, 362),
    (4, 64, 1, 69),
];

// (y1, n1, y0, n0): intravenous magnesium vs control, mortality after
// myocardial infarction.
const MAGNESIUM: [(u64, u64, u64, u64); 16] = [
    (1, 40, 2, 36),
    (9, 135, 23, 135),
    (2, 200, 7, 200),
    (1, 48, 1, 46),
    (10, 150, 8, 148),
    (1, 59, 9, 56),
    (1, 25, 3, 23),
    (0, 22, 1, 21),
    (6, 76, 11, 75),
    (1, 27, 7, 27),
    (2, 89, 12, 80),
    (5, 23, 13, 33),
    (4, 130, 8, 122),
    (90, 1159, 118, 1157),
    (4, 107, 17, 108),
    (2216, 29011, 2103, 29039),
];

// (not improved, patients)
const NOT_IMPROVED: [(u64, u64); 14] = [
    (1, 17),
    (2, 12),
    (4, 8),
    (15, 58),
    (0, 10),
    (17, 42),
    (1, 14),
    (0, 12),
    (19, 41),
    (1, 5),
    (1, 6),
    (5, 23),
    (10, 68),
    (4, 10),
];

/// One of the bundled datasets by name.
pub fn example(name: &str) -> Result<Dataset> {
    let two = |rows: &[(u64, u64, u64, u64)]| {
        Dataset::two_arm(
            rows.iter()
                .map(|&(y1, n1, y0, n0)| TwoArmStudy { y1, n1, y0, n0 })
                .collect(),
        )
    };
    match name {
        "example1" => Ok(two(&CATHETER)),
        "example2" => Ok(two(&MAGNESIUM)),
        "example3" => Ok(Dataset::one_arm(
            CATHETER
                .iter()
                .map(|&(y1, n1, _, _)| OneArmStudy { y: y1, n: n1 })
                .collect(),
        )),
        "example4" => Ok(Dataset::one_arm(
            NOT_IMPROVED
                .iter()
                .map(|&(y, n)| OneArmStudy { y, n })
                .collect(),
        )),
        other => Err(Error::Config(format!(
            "unknown example `{other}` (expected one of {})",
            EXAMPLE_NAMES.join(", ")
        ))),
    }
}
