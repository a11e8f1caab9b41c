//! Preference accuracy (strict and tie-aware), per-criterion quality Acc/F1,
//! and ingestion of external judge score files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::data::AnnotatedPair;
use crate::error::{Error, Result};
use crate::head::{Preference, RewardHeadParams};
use crate::losses::{AspectVerdict, OverallVerdict};
use crate::parallel::ordered_map;
use crate::taxonomy::Taxonomy;

/// The 10-level verbal rating scale, worst first.
pub const VERBAL_SCALE: [&str; 10] = [
    "Extremely Poor",
    "Very Poor",
    "Poor",
    "Below Average",
    "Average",
    "Above Average",
    "Good",
    "Very Good",
    "Excellent",
    "Outstanding",
];

/// Lowest rank counted as good.
pub const GOOD_RANK: u8 = 6;

/// Model-side threshold on gated criterion scores.
pub const QUALITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Bad,
}

impl Quality {
    pub fn from_rank(rank: u8) -> Quality {
        if rank >= GOOD_RANK {
            Quality::Good
        } else {
            Quality::Bad
        }
    }

    pub fn flipped(self) -> Quality {
        match self {
            Quality::Good => Quality::Bad,
            Quality::Bad => Quality::Good,
        }
    }
}

/// Rank (1..=10) and binary quality of a verbal rating. Matching ignores case
/// and surrounding whitespace.
pub fn map_verbal_rating(r: &str) -> Result<(u8, Quality)> {
    let needle = r.trim();
    VERBAL_SCALE
        .iter()
        .position(|w| w.eq_ignore_ascii_case(needle))
        .map(|i| {
            let rank = i as u8 + 1;
            (rank, Quality::from_rank(rank))
        })
        .ok_or_else(|| Error::Parse {
            line: 0,
            message: format!(
                "unknown rating '{r}'; valid ratings are: {}",
                VERBAL_SCALE.join(", ")
            ),
        })
}

fn check_decided(labels: &[Preference]) -> Result<()> {
    if labels.contains(&Preference::Tie) {
        return Err(Error::Validation(
            "ground-truth ties must be excluded before computing accuracy".into(),
        ));
    }
    Ok(())
}

fn check_lengths(preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(Error::Validation(format!(
            "{preds} predictions but {labels} labels"
        )));
    }
    if preds == 0 {
        return Err(Error::Validation("no items to score".into()));
    }
    Ok(())
}

/// Fraction of items where the prediction equals the label; predicted ties
/// count as wrong.
pub fn strict_accuracy(preds: &[Preference], labels: &[Preference]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_decided(labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Like [`strict_accuracy`] but a predicted tie earns half credit.
pub fn tie_aware_accuracy(preds: &[Preference], labels: &[Preference]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_decided(labels)?;
    let score: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| match (p, l) {
            (Preference::Tie, _) => 0.5,
            (p, l) if p == l => 1.0,
            _ => 0.0,
        })
        .sum();
    Ok(score / preds.len() as f64)
}

/// Pairs up predictions and labels by id.
pub fn align_by_id(
    preds: &[(String, Preference)],
    labels: &[(String, Preference)],
) -> Result<(Vec<Preference>, Vec<Preference>)> {
    let index: HashMap<&str, Preference> = preds.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    if index.len() != preds.len() {
        return Err(Error::Validation("duplicate prediction ids".into()));
    }
    let mut p = Vec::with_capacity(labels.len());
    let mut l = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        let pred = index
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("no prediction for id {id}")))?;
        p.push(*pred);
        l.push(*label);
    }
    if p.len() != preds.len() {
        return Err(Error::Validation(
            "predictions reference ids without labels".into(),
        ));
    }
    Ok((p, l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: Quality, truth: Quality) {
        match (pred, truth) {
            (Quality::Good, Quality::Good) => self.tp += 1,
            (Quality::Good, Quality::Bad) => self.fp += 1,
            (Quality::Bad, Quality::Good) => self.fn_ += 1,
            (Quality::Bad, Quality::Bad) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn metrics(&self) -> Option<QualityMetrics> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let acc = (self.tp + self.tn) as f64 / n as f64;
        let f1 = if self.tp + self.fp == 0 || self.tp + self.fn_ == 0 {
            f64::NAN
        } else {
            let p = self.tp as f64 / (self.tp + self.fp) as f64;
            let r = self.tp as f64 / (self.tp + self.fn_) as f64;
            if p + r == 0.0 {
                f64::NAN
            } else {
                2.0 * p * r / (p + r)
            }
        };
        Some(QualityMetrics {
            acc,
            f1,
            confusion: *self,
        })
    }
}

fn nan_as_slash<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_nan() {
        s.serialize_str("/")
    } else {
        s.serialize_f64(*v)
    }
}

fn opt_nan_as_slash<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => nan_as_slash(x, s),
        None => s.serialize_none(),
    }
}

/// Binary Acc / F1 with `good` as the positive class. `f1` is NaN when
/// undefined and serializes as `"/"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityMetrics {
    pub acc: f64,
    #[serde(serialize_with = "nan_as_slash")]
    pub f1: f64,
    pub confusion: Confusion,
}

pub fn quality_metrics(pred: &[Quality], truth: &[Quality]) -> Result<QualityMetrics> {
    check_lengths(pred.len(), truth.len())?;
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        c.add(p, t);
    }
    Ok(c.metrics().expect("nonempty"))
}

/// Renders a metric for tables: NaN becomes `/`.
pub fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "/".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// How three-level ground-truth labels become good / bad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageLabel {
    /// `average` items are skipped.
    #[default]
    Exclude,
    AsGood,
    AsBad,
}

impl AverageLabel {
    pub fn binarize(self, target: f64) -> Option<Quality> {
        if target == 1.0 {
            Some(Quality::Good)
        } else if target == 0.0 {
            Some(Quality::Bad)
        } else {
            match self {
                AverageLabel::Exclude => None,
                AverageLabel::AsGood => Some(Quality::Good),
                AverageLabel::AsBad => Some(Quality::Bad),
            }
        }
    }
}

/// Per-item predicted verdicts; `None` where the predictor gave no score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferencePrediction {
    pub id: String,
    pub overall: Option<Preference>,
    pub per_aspect: Vec<Option<Preference>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PreferenceMetrics {
    pub strict: Option<f64>,
    pub tie_aware: Option<f64>,
    /// Items with a decided label and a prediction.
    pub n_scored: usize,
    pub n_predicted_ties: usize,
    /// Items whose label is tie / same, excluded from both accuracies.
    pub n_label_ties: usize,
    pub n_unlabeled: usize,
    pub n_unpredicted: usize,
}

#[derive(Debug, Default)]
struct PrefTally {
    preds: Vec<Preference>,
    labels: Vec<Preference>,
    label_ties: usize,
    unlabeled: usize,
    unpredicted: usize,
}

impl PrefTally {
    /// `label`: `None` = unlabeled, `Some(None)` = tie, `Some(Some(p))` = decided.
    fn push(&mut self, pred: Option<Preference>, label: Option<Option<Preference>>) {
        match label {
            None => self.unlabeled += 1,
            Some(None) => self.label_ties += 1,
            Some(Some(l)) => match pred {
                None => self.unpredicted += 1,
                Some(p) => {
                    self.preds.push(p);
                    self.labels.push(l);
                }
            },
        }
    }

    fn finish(self) -> PreferenceMetrics {
        let scored = !self.preds.is_empty();
        PreferenceMetrics {
            strict: scored.then(|| strict_accuracy(&self.preds, &self.labels).expect("aligned")),
            tie_aware: scored
                .then(|| tie_aware_accuracy(&self.preds, &self.labels).expect("aligned")),
            n_scored: self.preds.len(),
            n_predicted_ties: self.preds.iter().filter(|&&p| p == Preference::Tie).count(),
            n_label_ties: self.label_ties,
            n_unlabeled: self.unlabeled,
            n_unpredicted: self.unpredicted,
        }
    }
}

fn overall_label(v: Option<OverallVerdict>) -> Option<Option<Preference>> {
    v.map(|v| match v {
        OverallVerdict::A => Some(Preference::A),
        OverallVerdict::B => Some(Preference::B),
        OverallVerdict::Tie => None,
    })
}

fn aspect_label(v: Option<AspectVerdict>) -> Option<Option<Preference>> {
    v.map(|v| match v {
        AspectVerdict::A => Some(Preference::A),
        AspectVerdict::B => Some(Preference::B),
        AspectVerdict::Same => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub index: usize,
    pub name: String,
    pub aspect: usize,
    pub quality: Option<QualityMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectReport {
    pub id: usize,
    pub name: String,
    pub preference: PreferenceMetrics,
    /// Acc / F1 over all criterion observations of the aspect pooled together.
    pub pooled_quality: Option<QualityMetrics>,
    /// Unweighted mean of the per-criterion Acc values that are defined.
    pub mean_criterion_acc: Option<f64>,
    /// Unweighted mean of the per-criterion F1 values that are defined.
    #[serde(serialize_with = "opt_nan_as_slash")]
    pub mean_criterion_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_items: usize,
    pub overall: PreferenceMetrics,
    pub aspects: Vec<AspectReport>,
    pub criteria: Vec<CriterionReport>,
}

/// Assembles a report from per-item verdicts and per-criterion quality
/// observations `(predicted, ground truth)`.
pub fn build_report(
    t: &Taxonomy,
    items: &[AnnotatedPair],
    preds: &[PreferencePrediction],
    quality: &[Vec<(Quality, Quality)>],
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if preds.len() != items.len() || quality.len() != t.n_criteria() {
        return Err(Error::Validation("prediction/label shape mismatch".into()));
    }
    let mut overall = PrefTally::default();
    let mut aspects: Vec<PrefTally> = (0..t.n_aspects()).map(|_| PrefTally::default()).collect();
    for (item, pred) in items.iter().zip(preds) {
        if item.id != pred.id {
            return Err(Error::Validation(format!(
                "prediction id {} does not match item id {}",
                pred.id, item.id
            )));
        }
        overall.push(pred.overall, overall_label(item.overall_pref));
        for (i, tally) in aspects.iter_mut().enumerate() {
            tally.push(
                pred.per_aspect.get(i).copied().flatten(),
                aspect_label(item.aspect_prefs.0.get(i).copied().flatten()),
            );
        }
    }

    let confusions: Vec<Confusion> = quality
        .iter()
        .map(|obs| {
            let mut c = Confusion::default();
            for &(p, g) in obs {
                c.add(p, g);
            }
            c
        })
        .collect();
    let criteria: Vec<CriterionReport> = t
        .criteria()
        .iter()
        .map(|c| CriterionReport {
            index: c.index,
            name: c.name.clone(),
            aspect: c.aspect,
            quality: confusions[c.index].metrics(),
        })
        .collect();

    let mean =
        |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let aspects = aspects
        .into_iter()
        .enumerate()
        .map(|(i, tally)| {
            let u = t.range(i);
            let mut pooled = Confusion::default();
            for k in u.clone() {
                pooled.merge(&confusions[k]);
            }
            let per: Vec<QualityMetrics> = u.filter_map(|k| criteria[k].quality).collect();
            AspectReport {
                id: i,
                name: t.aspects()[i].name.clone(),
                preference: tally.finish(),
                pooled_quality: pooled.metrics(),
                mean_criterion_acc: mean(per.iter().map(|m| m.acc).collect()),
                mean_criterion_f1: mean(per.iter().map(|m| m.f1).filter(|f| !f.is_nan()).collect())
                    .or_else(|| (!per.is_empty()).then_some(f64::NAN)),
            }
        })
        .collect();

    Ok(EvalReport {
        n_items: items.len(),
        overall: overall.finish(),
        aspects,
        criteria,
    })
}

/// Predicted preferences of a reward head on each item.
pub fn predict(
    params: &RewardHeadParams,
    items: &[AnnotatedPair],
    t: &Taxonomy,
    tie_eps: f64,
    threads: usize,
) -> Result<Vec<(PreferencePrediction, [Vec<f64>; 2])>> {
    ordered_map(items, threads, |item| {
        let a = params.forward(&item.feature_a, t)?;
        let b = params.forward(&item.feature_b, t)?;
        let pred = PreferencePrediction {
            id: item.id.clone(),
            overall: Some(Preference::from_margin(a.os, b.os, tie_eps)),
            per_aspect: a
                .aspect_sums
                .iter()
                .zip(&b.aspect_sums)
                .map(|(&x, &y)| Some(Preference::from_margin(x, y, tie_eps)))
                .collect(),
        };
        Ok((pred, [a.c, b.c]))
    })
    .into_iter()
    .collect()
}

/// Scores a reward head on a labeled set.
pub fn evaluate_model(
    params: &RewardHeadParams,
    items: &[AnnotatedPair],
    t: &Taxonomy,
    tie_eps: f64,
    average: AverageLabel,
) -> Result<EvalReport> {
    evaluate_model_threaded(params, items, t, tie_eps, average, 1)
}

pub fn evaluate_model_threaded(
    params: &RewardHeadParams,
    items: &[AnnotatedPair],
    t: &Taxonomy,
    tie_eps: f64,
    average: AverageLabel,
    threads: usize,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    params.check_taxonomy(t)?;
    let scored = predict(params, items, t, tie_eps, threads)?;
    let mut quality: Vec<Vec<(Quality, Quality)>> = vec![Vec::new(); t.n_criteria()];
    for (item, (_, cs)) in items.iter().zip(&scored) {
        for (labels, c) in [(&item.criteria_a, &cs[0]), (&item.criteria_b, &cs[1])] {
            for (k, obs) in quality.iter_mut().enumerate() {
                if let Some(truth) = labels.get(k).and_then(|s| average.binarize(s)) {
                    let pred = if c[k] >= QUALITY_THRESHOLD {
                        Quality::Good
                    } else {
                        Quality::Bad
                    };
                    obs.push((pred, truth));
                }
            }
        }
    }
    let preds: Vec<PreferencePrediction> = scored.into_iter().map(|(p, _)| p).collect();
    build_report(t, items, &preds, &quality)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeTarget {
    VideoA,
    VideoB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeScope {
    Overall,
    Aspect(usize),
    Criterion(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rating {
    Rank(i64),
    Verbal(String),
}

impl Rating {
    pub fn resolve(&self) -> Result<(u8, Quality)> {
        match self {
            Rating::Rank(r) if (1..=10).contains(r) => {
                let r = *r as u8;
                Ok((r, Quality::from_rank(r)))
            }
            Rating::Rank(r) => Err(Error::Parse {
                line: 0,
                message: format!("integer rating {r} outside 1..10"),
            }),
            Rating::Verbal(s) => map_verbal_rating(s),
        }
    }
}

/// One rating emitted by an external judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScoreRecord {
    pub id: String,
    pub target: JudgeTarget,
    pub scope: JudgeScope,
    pub rating: Rating,
}

/// Reads judge records, resolving every rating. Errors carry 1-based line numbers.
pub fn load_judge_file(path: impl AsRef<Path>) -> Result<Vec<(JudgeScoreRecord, u8, Quality)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let rec: JudgeScoreRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let (rank, q) = rec.rating.resolve().map_err(|e| match e {
            Error::Parse { message, .. } => at(message),
            other => other,
        })?;
        out.push((rec, rank, q));
    }
    Ok(out)
}

/// Scores judge ratings against a labeled dataset: preferences compare
/// integer ranks (equal ranks tie), criterion quality comes from the rating.
pub fn evaluate_judge_records(
    records: &[(JudgeScoreRecord, u8, Quality)],
    items: &[AnnotatedPair],
    t: &Taxonomy,
    average: AverageLabel,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let index: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let mut ratings: BTreeMap<(usize, JudgeScope, JudgeTarget), (u8, Quality)> = BTreeMap::new();
    for (rec, rank, q) in records {
        let &item = index.get(rec.id.as_str()).ok_or_else(|| {
            Error::Validation(format!("judge record references unknown id {}", rec.id))
        })?;
        match rec.scope {
            JudgeScope::Aspect(k) if k >= t.n_aspects() => {
                return Err(Error::Validation(format!(
                    "aspect {k} out of range for {}",
                    rec.id
                )))
            }
            JudgeScope::Criterion(k) if k >= t.n_criteria() => {
                return Err(Error::Validation(format!(
                    "criterion {k} out of range for {}",
                    rec.id
                )))
            }
            _ => {}
        }
        if ratings
            .insert((item, rec.scope, rec.target), (*rank, *q))
            .is_some()
        {
            return Err(Error::Validation(format!(
                "duplicate rating for {} {:?} {:?}",
                rec.id, rec.target, rec.scope
            )));
        }
    }

    let compare = |item: usize, scope: JudgeScope| {
        let a = ratings.get(&(item, scope, JudgeTarget::VideoA))?;
        let b = ratings.get(&(item, scope, JudgeTarget::VideoB))?;
        Some(Preference::from_margin(a.0 as f64, b.0 as f64, 0.0))
    };
    let preds: Vec<PreferencePrediction> = items
        .iter()
        .enumerate()
        .map(|(i, item)| PreferencePrediction {
            id: item.id.clone(),
            overall: compare(i, JudgeScope::Overall),
            per_aspect: (0..t.n_aspects())
                .map(|k| compare(i, JudgeScope::Aspect(k)))
                .collect(),
        })
        .collect();

    let mut quality: Vec<Vec<(Quality, Quality)>> = vec![Vec::new(); t.n_criteria()];
    for (&(item, scope, target), &(_, q)) in &ratings {
        if let JudgeScope::Criterion(k) = scope {
            let labels = match target {
                JudgeTarget::VideoA => &items[item].criteria_a,
                JudgeTarget::VideoB => &items[item].criteria_b,
            };
            if let Some(truth) = labels
                .values()
                .get(k)
                .copied()
                .flatten()
                .and_then(|s| average.binarize(s))
            {
                quality[k].push((q, truth));
            }
        }
    }
    build_report(t, items, &preds, &quality)
}

pub fn evaluate_judge_file(
    path: impl AsRef<Path>,
    items: &[AnnotatedPair],
    t: &Taxonomy,
    average: AverageLabel,
) -> Result<EvalReport> {
    let records = load_judge_file(path)?;
    evaluate_judge_records(&records, items, t, average)
}

impl EvalReport {
    /// One row per scope: overall, each aspect, each criterion. NaN F1 and
    /// undefined values render as `/`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("/".to_string(), fmt_metric);
        let mut s = String::from("scope,name,strict,tie_aware,acc,f1,n_pref,n_quality\n");
        let o = &self.overall;
        let _ = writeln!(
            s,
            "overall,overall,{},{},/,/,{},0",
            opt(o.strict),
            opt(o.tie_aware),
            o.n_scored
        );
        for a in &self.aspects {
            let q = a.pooled_quality;
            let _ = writeln!(
                s,
                "aspect,{},{},{},{},{},{},{}",
                csv_field(&a.name),
                opt(a.preference.strict),
                opt(a.preference.tie_aware),
                opt(q.map(|m| m.acc)),
                opt(q.map(|m| m.f1)),
                a.preference.n_scored,
                q.map_or(0, |m| m.confusion.total())
            );
        }
        for c in &self.criteria {
            let q = c.quality;
            let _ = writeln!(
                s,
                "criterion,{},/,/,{},{},0,{}",
                csv_field(&c.name),
                opt(q.map(|m| m.acc)),
                opt(q.map(|m| m.f1)),
                q.map_or(0, |m| m.confusion.total())
            );
        }
        s
    }

    /// Aspect-level table: Acc, F1 and strict accuracy per aspect, then overall.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("/".to_string(), fmt_metric);
        let mut s = format!(
            "{:<26} {:>8} {:>8} {:>8} {:>10}\n",
            "aspect", "acc", "f1", "strict", "tie-aware"
        );
        for a in &self.aspects {
            let _ = writeln!(
                s,
                "{:<26} {:>8} {:>8} {:>8} {:>10}",
                a.name,
                opt(a.pooled_quality.map(|m| m.acc)),
                opt(a.pooled_quality.map(|m| m.f1)),
                opt(a.preference.strict),
                opt(a.preference.tie_aware)
            );
        }
        let _ = writeln!(
            s,
            "{:<26} {:>8} {:>8} {:>8} {:>10}",
            "overall",
            "/",
            "/",
            opt(self.overall.strict),
            opt(self.overall.tie_aware)
        );
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
