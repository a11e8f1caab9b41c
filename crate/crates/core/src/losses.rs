//! Training objectives: squared criteria error, per-aspect Bradley-Terry
//! ranking, overall Bradley-Terry ranking, and their stage-weighted sums.

use serde::{Deserialize, Serialize};

use crate::data::AnnotatedPair;
use crate::error::{Error, Result};
use crate::head::{HeadOutput, RewardHeadParams};
use crate::taxonomy::Taxonomy;

/// Annotator quality grades and their numeric targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Good,
    Average,
    Bad,
}

impl Grade {
    pub fn target(self) -> f64 {
        match self {
            Grade::Good => 1.0,
            Grade::Average => 0.5,
            Grade::Bad => 0.0,
        }
    }

    pub fn from_target(v: f64) -> Option<Grade> {
        if v == 1.0 {
            Some(Grade::Good)
        } else if v == 0.5 {
            Some(Grade::Average)
        } else if v == 0.0 {
            Some(Grade::Bad)
        } else {
            None
        }
    }
}

/// Per-criterion targets in `{0, 0.5, 1}`; `None` marks a missing label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<f64>>", into = "Vec<Option<f64>>")]
pub struct CriteriaLabels(Vec<Option<f64>>);

impl CriteriaLabels {
    pub fn new(values: Vec<Option<f64>>) -> Result<Self> {
        for (k, v) in values.iter().enumerate() {
            if let Some(x) = v {
                if Grade::from_target(*x).is_none() {
                    return Err(Error::Validation(format!(
                        "criterion label {k} is {x}, expected 0, 0.5 or 1"
                    )));
                }
            }
        }
        Ok(CriteriaLabels(values))
    }

    pub fn missing(n: usize) -> Self {
        CriteriaLabels(vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.0[k]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.0
    }

    pub fn any_present(&self) -> bool {
        self.0.iter().any(Option::is_some)
    }
}

impl TryFrom<Vec<Option<f64>>> for CriteriaLabels {
    type Error = Error;
    fn try_from(v: Vec<Option<f64>>) -> Result<Self> {
        CriteriaLabels::new(v)
    }
}

impl From<CriteriaLabels> for Vec<Option<f64>> {
    fn from(l: CriteriaLabels) -> Self {
        l.0
    }
}

/// Annotated verdict for one aspect of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AspectVerdict {
    A,
    B,
    #[serde(rename = "same")]
    Same,
}

/// Annotated overall verdict of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverallVerdict {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

/// One verdict per aspect, relative to the pair's (a, b) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectPreference(pub Vec<Option<AspectVerdict>>);

impl AspectPreference {
    pub fn missing(n: usize) -> Self {
        AspectPreference(vec![None; n])
    }

    pub fn any_present(&self) -> bool {
        self.0.iter().any(Option::is_some)
    }

    /// `+1` when candidate a wins aspect `i`, `-1` when b wins, `None` when
    /// the aspect is undecided or unlabeled.
    pub fn sign(&self, i: usize) -> Option<f64> {
        match self.0[i] {
            Some(AspectVerdict::A) => Some(1.0),
            Some(AspectVerdict::B) => Some(-1.0),
            _ => None,
        }
    }

    pub fn swapped(&self) -> Self {
        AspectPreference(
            self.0
                .iter()
                .map(|v| match v {
                    Some(AspectVerdict::A) => Some(AspectVerdict::B),
                    Some(AspectVerdict::B) => Some(AspectVerdict::A),
                    other => *other,
                })
                .collect(),
        )
    }
}

/// Per-term multipliers for criteria, aspect-ranking and overall-ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub lambda_l3: f64,
}

impl StageWeights {
    pub fn new(lambda_l1: f64, lambda_l2: f64, lambda_l3: f64) -> Result<Self> {
        let w = StageWeights {
            lambda_l1,
            lambda_l2,
            lambda_l3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_l1, self.lambda_l2, self.lambda_l3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!(
                "stage weights must be finite and nonnegative, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Validation("stage weights are all zero".into()));
        }
        Ok(())
    }

    /// Default weights: stage 1 uses only the criteria loss; stage 2 weighs
    /// criteria and aspect ranking 0.3 : 1; stage 3 weighs all three 0.3 : 0.3 : 1.
    pub fn default_for(stage: Stage) -> Self {
        match stage {
            Stage::One => StageWeights {
                lambda_l1: 1.0,
                lambda_l2: 0.0,
                lambda_l3: 0.0,
            },
            Stage::Two => StageWeights {
                lambda_l1: 0.3,
                lambda_l2: 1.0,
                lambda_l3: 0.0,
            },
            Stage::Three => StageWeights {
                lambda_l1: 0.3,
                lambda_l2: 0.3,
                lambda_l3: 1.0,
            },
        }
    }

    /// Zeroes the terms a stage does not train.
    pub fn masked(self, stage: Stage) -> Self {
        StageWeights {
            lambda_l1: self.lambda_l1,
            lambda_l2: if stage >= Stage::Two {
                self.lambda_l2
            } else {
                0.0
            },
            lambda_l3: if stage == Stage::Three {
                self.lambda_l3
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::One, Stage::Two, Stage::Three];

    pub fn from_number(n: u32) -> Result<Stage> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            _ => Err(Error::Range(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn number(self) -> u32 {
        self as u32
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// `-ln(sigmoid(x))`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum of squared residuals over labeled criteria.
pub fn criteria_loss(out: &HeadOutput, labels: &CriteriaLabels) -> f64 {
    out.c
        .iter()
        .zip(labels.values())
        .fold(0.0, |acc, (c, s)| match s {
            Some(s) => acc + (c - s) * (c - s),
            None => acc,
        })
}

/// Sum over decided aspects of `-ln sigmoid(I_i * (S1[i] - S2[i]))`, where
/// `I_i = +1` when the first candidate wins aspect `i`.
pub fn aspect_ranking_loss(out_1: &HeadOutput, out_2: &HeadOutput, pref: &AspectPreference) -> f64 {
    (0..out_1.aspect_sums.len()).fold(0.0, |acc, i| match pref.sign(i) {
        Some(sign) => acc + neg_log_sigmoid(sign * (out_1.aspect_sums[i] - out_2.aspect_sums[i])),
        None => acc,
    })
}

/// `-ln sigmoid(OS_w - OS_l)`.
pub fn overall_ranking_loss(out_w: &HeadOutput, out_l: &HeadOutput) -> f64 {
    neg_log_sigmoid(out_w.os - out_l.os)
}

/// The mean of each loss term over its contributing items and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    /// Candidates (not pairs) carrying at least one criterion label.
    pub n_l1: usize,
    /// Pairs with at least one decided aspect.
    pub n_l2: usize,
    /// Pairs with a strict overall verdict.
    pub n_l3: usize,
}

/// Checks that every item carries the labels required by the terms with a
/// positive weight in this stage.
pub fn validate_batch(stage: Stage, batch: &[AnnotatedPair], weights: &StageWeights) -> Result<()> {
    weights.validate()?;
    let w = weights.masked(stage);
    if w.lambda_l1 == 0.0 && w.lambda_l2 == 0.0 && w.lambda_l3 == 0.0 {
        return Err(Error::Validation(format!(
            "stage {stage} has no positively weighted loss term"
        )));
    }
    let mut problems: Vec<String> = Vec::new();
    let mut push = |field: &str, ids: Vec<&str>| {
        if !ids.is_empty() {
            problems.push(format!("{field} missing for items [{}]", ids.join(", ")));
        }
    };
    if w.lambda_l1 > 0.0 {
        push(
            "criteria_a/criteria_b",
            batch
                .iter()
                .filter(|p| !p.criteria_a.any_present() && !p.criteria_b.any_present())
                .map(|p| p.id.as_str())
                .collect(),
        );
    }
    if w.lambda_l2 > 0.0 {
        push(
            "aspect_prefs",
            batch
                .iter()
                .filter(|p| !p.aspect_prefs.any_present())
                .map(|p| p.id.as_str())
                .collect(),
        );
    }
    if w.lambda_l3 > 0.0 {
        push(
            "overall_pref",
            batch
                .iter()
                .filter(|p| p.overall_pref.is_none())
                .map(|p| p.id.as_str())
                .collect(),
        );
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "stage {stage}: {}",
            problems.join("; ")
        )))
    }
}

/// Reduces per-item head outputs to the weighted stage loss. Items are
/// visited in order; within an item candidate a precedes b.
pub(crate) fn combine(
    batch: &[AnnotatedPair],
    outputs: &[(HeadOutput, HeadOutput)],
    w: &StageWeights,
) -> LossTerms {
    let mut t = LossTerms::default();
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for (item, (oa, ob)) in batch.iter().zip(outputs) {
        if w.lambda_l1 > 0.0 {
            for (o, labels) in [(oa, &item.criteria_a), (ob, &item.criteria_b)] {
                if labels.any_present() {
                    s1 += criteria_loss(o, labels);
                    t.n_l1 += 1;
                }
            }
        }
        if w.lambda_l2 > 0.0
            && (0..oa.aspect_sums.len()).any(|i| item.aspect_prefs.sign(i).is_some())
        {
            s2 += aspect_ranking_loss(oa, ob, &item.aspect_prefs);
            t.n_l2 += 1;
        }
        if w.lambda_l3 > 0.0 {
            match item.overall_pref {
                Some(OverallVerdict::A) => {
                    s3 += overall_ranking_loss(oa, ob);
                    t.n_l3 += 1;
                }
                Some(OverallVerdict::B) => {
                    s3 += overall_ranking_loss(ob, oa);
                    t.n_l3 += 1;
                }
                _ => {}
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    t.l1 = mean(s1, t.n_l1);
    t.l2 = mean(s2, t.n_l2);
    t.l3 = mean(s3, t.n_l3);
    t.total = w.lambda_l1 * t.l1 + w.lambda_l2 * t.l2 + w.lambda_l3 * t.l3;
    t
}

pub(crate) fn batch_outputs(
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
) -> Result<Vec<(HeadOutput, HeadOutput)>> {
    batch
        .iter()
        .map(|p| {
            Ok((
                params.forward(&p.feature_a, t)?,
                params.forward(&p.feature_b, t)?,
            ))
        })
        .collect()
}

/// Weighted loss of one stage on a batch, with per-term breakdown.
pub fn stage_loss_terms(
    stage: Stage,
    batch: &[AnnotatedPair],
    params: &RewardHeadParams,
    t: &Taxonomy,
    weights: &StageWeights,
) -> Result<LossTerms> {
    validate_batch(stage, batch, weights)?;
    let outputs = batch_outputs(params, batch, t)?;
    Ok(combine(batch, &outputs, &weights.masked(stage)))
}

/// Weighted loss of one stage on a batch. Terms outside the stage (aspect
/// ranking in stage 1, overall ranking in stages 1-2) are excluded.
pub fn stage_loss(
    stage: Stage,
    batch: &[AnnotatedPair],
    params: &RewardHeadParams,
    t: &Taxonomy,
    weights: &StageWeights,
) -> Result<f64> {
    stage_loss_terms(stage, batch, params, t, weights).map(|l| l.total)
}
