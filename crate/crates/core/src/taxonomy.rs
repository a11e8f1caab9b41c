//! Aspect / criterion registry.
//!
//! A taxonomy partitions the criterion index space `0..n_criteria` into
//! contiguous, disjoint ranges, one per aspect. Every score vector in the
//! crate is indexed by this ordering.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aspect {
    pub id: usize,
    pub name: String,
    /// First criterion index (inclusive).
    pub start: usize,
    /// One past the last criterion index.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub index: usize,
    pub name: String,
    pub aspect: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy")]
pub struct Taxonomy {
    aspects: Vec<Aspect>,
    criteria: Vec<Criterion>,
}

#[derive(Deserialize)]
struct RawTaxonomy {
    aspects: Vec<Aspect>,
    criteria: Vec<Criterion>,
}

impl TryFrom<RawTaxonomy> for Taxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        let t = Taxonomy {
            aspects: raw.aspects,
            criteria: raw.criteria,
        };
        t.validate()?;
        Ok(t)
    }
}

const DEFAULT_GROUPS: [(&str, &[&str]); 5] = [
    (
        "Alignment",
        &["object", "attribute", "actions", "count", "location"],
    ),
    (
        "Safety",
        &[
            "crime",
            "shocking",
            "disgust",
            "nsfw_evasive",
            "nsfw_subtle",
            "political_sensitivity",
        ],
    ),
    (
        "Fineness",
        &[
            "human_face_distortion",
            "human_limb_distortion",
            "object_distortion",
            "defocused_blurred",
            "motion_blurred",
        ],
    ),
    (
        "Coherence & Consistency",
        &[
            "spatial_consistency",
            "action_continuity",
            "object_disappearance",
            "abrupt_background_changes",
            "inconsistent_lighting_shadows",
            "frame_flickering",
            "object_drift",
        ],
    ),
    (
        "Bias & Fairness",
        &["gender", "age", "job", "race", "education"],
    ),
];

/// The canonical 5-aspect / 28-criterion video taxonomy.
pub fn default_taxonomy() -> Taxonomy {
    Taxonomy::from_groups(&DEFAULT_GROUPS).expect("default taxonomy is well formed")
}

impl Taxonomy {
    /// Builds a taxonomy from `(aspect name, criterion names)` groups. Criterion
    /// indices are assigned in the order given.
    pub fn from_groups<A, C>(groups: &[(A, C)]) -> Result<Self>
    where
        A: AsRef<str>,
        C: AsRef<[&'static str]>,
    {
        let owned: Vec<(String, Vec<String>)> = groups
            .iter()
            .map(|(a, cs)| {
                (
                    a.as_ref().to_string(),
                    cs.as_ref().iter().map(|s| s.to_string()).collect(),
                )
            })
            .collect();
        Self::from_named(&owned)
    }

    pub fn from_named(groups: &[(String, Vec<String>)]) -> Result<Self> {
        let mut aspects = Vec::with_capacity(groups.len());
        let mut criteria = Vec::new();
        for (id, (name, crits)) in groups.iter().enumerate() {
            let start = criteria.len();
            for c in crits {
                criteria.push(Criterion {
                    index: criteria.len(),
                    name: c.clone(),
                    aspect: id,
                });
            }
            aspects.push(Aspect {
                id,
                name: name.clone(),
                start,
                end: criteria.len(),
            });
        }
        let t = Taxonomy { aspects, criteria };
        t.validate()?;
        Ok(t)
    }

    /// A small taxonomy with `n_aspects` aspects of `per_aspect` criteria each,
    /// named `a{i}` / `a{i}c{j}`.
    pub fn uniform(n_aspects: usize, per_aspect: usize) -> Result<Self> {
        let groups: Vec<(String, Vec<String>)> = (0..n_aspects)
            .map(|i| {
                (
                    format!("a{i}"),
                    (0..per_aspect).map(|j| format!("a{i}c{j}")).collect(),
                )
            })
            .collect();
        Self::from_named(&groups)
    }

    fn validate(&self) -> Result<()> {
        if self.aspects.is_empty() {
            return Err(Error::Validation("taxonomy has no aspects".into()));
        }
        let mut next = 0;
        for (i, a) in self.aspects.iter().enumerate() {
            if a.id != i {
                return Err(Error::Validation(format!(
                    "aspect {} has id {}, expected {i}",
                    a.name, a.id
                )));
            }
            if a.start != next || a.end <= a.start {
                return Err(Error::Validation(format!(
                    "aspect {} covers {}..{}, expected a nonempty range starting at {next}",
                    a.name, a.start, a.end
                )));
            }
            next = a.end;
        }
        if next != self.criteria.len() {
            return Err(Error::Validation(format!(
                "aspects cover {next} criteria but {} are listed",
                self.criteria.len()
            )));
        }
        for (k, c) in self.criteria.iter().enumerate() {
            let parent = self.aspects.get(c.aspect).ok_or_else(|| {
                Error::Validation(format!(
                    "criterion {} has unknown aspect {}",
                    c.name, c.aspect
                ))
            })?;
            if c.index != k || !(parent.start..parent.end).contains(&k) {
                return Err(Error::Validation(format!(
                    "criterion {} (index {}) is not inside its aspect's range",
                    c.name, c.index
                )));
            }
        }
        Ok(())
    }

    pub fn n_aspects(&self) -> usize {
        self.aspects.len()
    }

    pub fn n_criteria(&self) -> usize {
        self.criteria.len()
    }

    pub fn aspects(&self) -> &[Aspect] {
        &self.aspects
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    /// The criterion indices belonging to aspect `aspect_id`.
    pub fn aspect_indices(&self, aspect_id: usize) -> Result<Range<usize>> {
        self.aspects
            .get(aspect_id)
            .map(|a| a.start..a.end)
            .ok_or_else(|| {
                Error::Range(format!(
                    "aspect id {aspect_id} outside 0..{}",
                    self.aspects.len()
                ))
            })
    }

    /// Unchecked variant for internal loops over `0..n_aspects`.
    pub(crate) fn range(&self, aspect_id: usize) -> Range<usize> {
        let a = &self.aspects[aspect_id];
        a.start..a.end
    }

    pub fn aspect_of(&self, criterion: usize) -> usize {
        self.criteria[criterion].aspect
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("taxonomy serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
