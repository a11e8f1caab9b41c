//! Annotated pair schema, JSONL I/O, train/test splitting and the
//! planted-teacher synthetic generator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{FeatureVector, RewardHeadParams, TensorId, DEFAULT_GATE_WIDTH};
use crate::losses::{AspectPreference, AspectVerdict, CriteriaLabels, OverallVerdict};
use crate::taxonomy::Taxonomy;

/// One prompt with two candidate videos and their annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub id: String,
    #[serde(default)]
    pub prompt: Option<String>,
    pub feature_a: FeatureVector,
    pub feature_b: FeatureVector,
    pub criteria_a: CriteriaLabels,
    pub criteria_b: CriteriaLabels,
    pub aspect_prefs: AspectPreference,
    pub overall_pref: Option<OverallVerdict>,
    /// Aspect-level grades; accepted for completeness, unused by training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_scores_a: Option<CriteriaLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_scores_b: Option<CriteriaLabels>,
}

impl AnnotatedPair {
    /// Checks internal consistency and conformance to `t` (and `d` if given).
    pub fn validate(&self, t: &Taxonomy, d: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("item {}: {msg}", self.id)));
        if self.feature_a.dim() != self.feature_b.dim() {
            return bad(format!(
                "feature_a has dimension {}, feature_b has {}",
                self.feature_a.dim(),
                self.feature_b.dim()
            ));
        }
        if let Some(d) = d {
            if self.feature_a.dim() != d {
                return bad(format!("feature dimension {} != {d}", self.feature_a.dim()));
            }
        }
        for (name, l) in [
            ("criteria_a", &self.criteria_a),
            ("criteria_b", &self.criteria_b),
        ] {
            if l.len() != t.n_criteria() {
                return bad(format!(
                    "{name} has {} entries, expected {}",
                    l.len(),
                    t.n_criteria()
                ));
            }
        }
        if self.aspect_prefs.0.len() != t.n_aspects() {
            return bad(format!(
                "aspect_prefs has {} entries, expected {}",
                self.aspect_prefs.0.len(),
                t.n_aspects()
            ));
        }
        for (name, s) in [
            ("aspect_scores_a", &self.aspect_scores_a),
            ("aspect_scores_b", &self.aspect_scores_b),
        ] {
            if let Some(s) = s {
                if s.len() != t.n_aspects() {
                    return bad(format!("{name} has {} entries", s.len()));
                }
            }
        }
        Ok(())
    }

    /// The same annotations with candidates a and b exchanged.
    pub fn swapped(&self) -> Self {
        AnnotatedPair {
            id: self.id.clone(),
            prompt: self.prompt.clone(),
            feature_a: self.feature_b.clone(),
            feature_b: self.feature_a.clone(),
            criteria_a: self.criteria_b.clone(),
            criteria_b: self.criteria_a.clone(),
            aspect_prefs: self.aspect_prefs.swapped(),
            overall_pref: self.overall_pref.map(|v| match v {
                OverallVerdict::A => OverallVerdict::B,
                OverallVerdict::B => OverallVerdict::A,
                OverallVerdict::Tie => OverallVerdict::Tie,
            }),
            aspect_scores_a: self.aspect_scores_b.clone(),
            aspect_scores_b: self.aspect_scores_a.clone(),
        }
    }
}

/// Sidecar metadata written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d: usize,
    pub n_pairs: usize,
    pub taxonomy_hash: String,
    pub taxonomy: Taxonomy,
}

impl DatasetHeader {
    pub fn new(d: usize, n_pairs: usize, t: &Taxonomy) -> Self {
        DatasetHeader {
            d,
            n_pairs,
            taxonomy_hash: t.hash(),
            taxonomy: t.clone(),
        }
    }
}

/// `data.jsonl` -> `data.header.json`
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

/// Reads and validates a JSONL dataset. Dimensions must agree across the
/// file; label vector lengths must agree with each other.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AnnotatedPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items: Vec<AnnotatedPair> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: AnnotatedPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(first) = items.first() {
            let dims = (
                first.feature_a.dim(),
                first.criteria_a.len(),
                first.aspect_prefs.0.len(),
            );
            let here = (
                item.feature_a.dim(),
                item.criteria_a.len(),
                item.aspect_prefs.0.len(),
            );
            if dims != here {
                return Err(Error::Validation(format!(
                    "item {} (line {}): (dimension, criteria, aspects) = {here:?}, file started with {dims:?}",
                    item.id,
                    i + 1
                )));
            }
        }
        if item.feature_a.dim() != item.feature_b.dim()
            || item.criteria_a.len() != item.criteria_b.len()
        {
            return Err(Error::Validation(format!(
                "item {} (line {}): candidates a and b disagree in shape",
                item.id,
                i + 1
            )));
        }
        items.push(item);
    }
    Ok(items)
}

/// Loads a dataset and checks it against `t` and, when present, its sidecar header.
pub fn load_dataset_for(path: impl AsRef<Path>, t: &Taxonomy) -> Result<Vec<AnnotatedPair>> {
    let path = path.as_ref();
    let items = load_dataset(path)?;
    let hp = header_path(path);
    let d = if hp.exists() {
        let json = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: DatasetHeader = serde_json::from_str(&json)?;
        if header.taxonomy_hash != t.hash() {
            return Err(Error::Validation(format!(
                "{} was written for a different taxonomy",
                hp.display()
            )));
        }
        Some(header.d)
    } else {
        None
    };
    for item in &items {
        item.validate(t, d)?;
    }
    Ok(items)
}

pub fn save_dataset(path: impl AsRef<Path>, items: &[AnnotatedPair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the dataset and its sidecar header.
pub fn save_dataset_with_header(
    path: impl AsRef<Path>,
    items: &[AnnotatedPair],
    t: &Taxonomy,
) -> Result<()> {
    let path = path.as_ref();
    save_dataset(path, items)?;
    let d = items.first().map_or(0, |p| p.feature_a.dim());
    let header = DatasetHeader::new(d, items.len(), t);
    let hp = header_path(path);
    std::fs::write(&hp, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&hp, e))
}

/// Seeded split: the first `floor(N * ratio_train / (ratio_train + ratio_test))`
/// items of a random permutation go to train, the rest to test.
pub fn split(
    items: &[AnnotatedPair],
    ratio_train: u32,
    ratio_test: u32,
    seed: u64,
) -> Result<(Vec<AnnotatedPair>, Vec<AnnotatedPair>)> {
    let (train_idx, test_idx) = split_indices(items.len(), ratio_train, ratio_test, seed)?;
    Ok((
        train_idx.into_iter().map(|i| items[i].clone()).collect(),
        test_idx.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

pub fn split_indices(
    n: usize,
    ratio_train: u32,
    ratio_test: u32,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    if ratio_train + ratio_test == 0 {
        return Err(Error::Range("split ratios are both zero".into()));
    }
    let n_train = n * ratio_train as usize / (ratio_train + ratio_test) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Parameters of a planted-teacher dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub taxonomy: Taxonomy,
    pub n_pairs: usize,
    pub teacher_seed: u64,
    pub data_seed: u64,
    pub label_noise_sd: f64,
    /// Margins with magnitude at most this are labeled same / tie.
    pub tie_band: f64,
    pub aspect_width: usize,
    pub criteria_width: usize,
}

impl SyntheticSpec {
    pub fn new(d: usize, taxonomy: Taxonomy, n_pairs: usize) -> Self {
        SyntheticSpec {
            d,
            taxonomy,
            n_pairs,
            teacher_seed: 1,
            data_seed: 2,
            label_noise_sd: 0.05,
            tie_band: 0.05,
            aspect_width: DEFAULT_GATE_WIDTH,
            criteria_width: DEFAULT_GATE_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Validation("n_pairs must be at least 1".into()));
        }
        if !(self.label_noise_sd >= 0.0 && self.label_noise_sd.is_finite()) {
            return Err(Error::Validation(
                "label_noise_sd must be finite and >= 0".into(),
            ));
        }
        if self.tie_band.is_nan() || self.tie_band < 0.0 {
            return Err(Error::Validation("tie_band must be >= 0".into()));
        }
        Ok(())
    }
}

/// Maps a score in `[0, 1]` onto the bad / average / good lattice.
pub fn quantize_label(v: f64) -> f64 {
    if v < 0.25 {
        0.0
    } else if v < 0.75 {
        0.5
    } else {
        1.0
    }
}

/// Samples a teacher head with non-trivial routing (gate output layers drawn
/// from N(0, 0.5^2)).
pub fn sample_teacher(spec: &SyntheticSpec) -> Result<RewardHeadParams> {
    let mut teacher = RewardHeadParams::init(
        spec.d,
        spec.aspect_width,
        spec.criteria_width,
        spec.teacher_seed,
        &spec.taxonomy,
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.teacher_seed);
    rng.set_stream(1);
    let gate = Normal::new(0.0, 0.5).expect("positive sd");
    for id in [TensorId::AspectOutWeight, TensorId::CriteriaOutWeight] {
        for v in teacher.tensor_mut(id).data.iter_mut() {
            *v = gate.sample(&mut rng);
        }
    }
    Ok(teacher)
}

/// Labels one pair of features with a teacher: noisy quantized criteria
/// labels, banded aspect and overall preferences.
#[allow(clippy::too_many_arguments)]
pub fn annotate<R: rand::Rng>(
    teacher: &RewardHeadParams,
    t: &Taxonomy,
    id: String,
    feature_a: FeatureVector,
    feature_b: FeatureVector,
    label_noise_sd: f64,
    tie_band: f64,
    rng: &mut R,
) -> Result<AnnotatedPair> {
    let oa = teacher.forward(&feature_a, t)?;
    let ob = teacher.forward(&feature_b, t)?;
    let mut labels = |c: &[f64]| -> CriteriaLabels {
        let v = c
            .iter()
            .map(|&x| {
                let noise = if label_noise_sd > 0.0 {
                    label_noise_sd * Distribution::<f64>::sample(&StandardNormal, &mut *rng)
                } else {
                    0.0
                };
                Some(quantize_label((x + noise).clamp(0.0, 1.0)))
            })
            .collect();
        CriteriaLabels::new(v).expect("quantized labels are valid")
    };
    let criteria_a = labels(&oa.c);
    let criteria_b = labels(&ob.c);
    let aspect_prefs = AspectPreference(
        oa.aspect_sums
            .iter()
            .zip(&ob.aspect_sums)
            .map(|(x, y)| {
                let delta = x - y;
                Some(if delta.abs() <= tie_band {
                    AspectVerdict::Same
                } else if delta > 0.0 {
                    AspectVerdict::A
                } else {
                    AspectVerdict::B
                })
            })
            .collect(),
    );
    let delta = oa.os - ob.os;
    let overall_pref = Some(if delta.abs() <= tie_band {
        OverallVerdict::Tie
    } else if delta > 0.0 {
        OverallVerdict::A
    } else {
        OverallVerdict::B
    });
    Ok(AnnotatedPair {
        id,
        prompt: None,
        feature_a,
        feature_b,
        criteria_a,
        criteria_b,
        aspect_prefs,
        overall_pref,
        aspect_scores_a: None,
        aspect_scores_b: None,
    })
}

/// Generates a planted-teacher dataset. Item `i` draws from its own RNG
/// stream derived from `(data_seed, i)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<AnnotatedPair>, RewardHeadParams)> {
    spec.validate()?;
    let teacher = sample_teacher(spec)?;
    let items = (0..spec.n_pairs)
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.data_seed);
            rng.set_stream(i as u64);
            let feature = |rng: &mut ChaCha20Rng| {
                FeatureVector::new((0..spec.d).map(|_| StandardNormal.sample(rng)).collect())
            };
            let fa = feature(&mut rng)?;
            let fb = feature(&mut rng)?;
            annotate(
                &teacher,
                &spec.taxonomy,
                format!("syn-{i:06}"),
                fa,
                fb,
                spec.label_noise_sd,
                spec.tie_band,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((items, teacher))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::Preference;
    use crate::taxonomy::default_taxonomy;

    fn small_spec() -> SyntheticSpec {
        let mut s = SyntheticSpec::new(6, Taxonomy::uniform(2, 3).unwrap(), 40);
        s.aspect_width = 4;
        s.criteria_width = 4;
        s
    }

    #[test]
    fn quantizer_thresholds() {
        assert_eq!(quantize_label(0.0), 0.0);
        assert_eq!(quantize_label(0.2499), 0.0);
        assert_eq!(quantize_label(0.25), 0.5);
        assert_eq!(quantize_label(0.7499), 0.5);
        assert_eq!(quantize_label(0.75), 1.0);
        assert_eq!(quantize_label(1.0), 1.0);
    }

    #[test]
    fn split_sizes() {
        for (n, train) in [(5421, 4336), (5, 4), (1, 0), (10, 8)] {
            let (a, b) = split_indices(n, 4, 1, 7).unwrap();
            assert_eq!(a.len(), train);
            assert_eq!(a.len() + b.len(), n);
        }
        assert!(split_indices(0, 4, 1, 7).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let (a, b) = split_indices(100, 4, 1, 3).unwrap();
        let (a2, b2) = split_indices(100, 4, 1, 3).unwrap();
        assert_eq!((&a, &b), (&a2, &b2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (a3, _) = split_indices(100, 4, 1, 4).unwrap();
        assert_ne!(a, a3);
    }

    #[test]
    fn infinite_band_makes_everything_a_tie() {
        let mut spec = small_spec();
        spec.tie_band = f64::INFINITY;
        let (items, _) = generate_synthetic(&spec).unwrap();
        for p in &items {
            assert_eq!(p.overall_pref, Some(OverallVerdict::Tie));
            assert!(p
                .aspect_prefs
                .0
                .iter()
                .all(|v| *v == Some(AspectVerdict::Same)));
        }
    }

    #[test]
    fn noiseless_quantization_of_lattice_teacher() {
        let t = Taxonomy::uniform(2, 2).unwrap();
        let mut teacher = RewardHeadParams::init(3, 2, 2, 5, &t).unwrap();
        teacher.tensor_mut(TensorId::ScoreWeight).data.fill(0.0);
        // uniform gates inside each 2-criterion aspect: c = bias / 2
        teacher.tensor_mut(TensorId::ScoreBias).data = vec![0.0, 1.0, 2.0, 1.0];
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let fa = FeatureVector::new(vec![0.3, -1.0, 2.0]).unwrap();
        let fb = FeatureVector::new(vec![1.0, 0.0, -0.5]).unwrap();
        let p = annotate(&teacher, &t, "x".into(), fa, fb, 0.0, 0.05, &mut rng).unwrap();
        let want = vec![Some(0.0), Some(0.5), Some(1.0), Some(0.5)];
        assert_eq!(p.criteria_a.values(), want.as_slice());
        assert_eq!(p.criteria_b.values(), want.as_slice());
        assert_eq!(p.overall_pref, Some(OverallVerdict::Tie));
    }

    #[test]
    fn generator_is_deterministic_and_self_consistent() {
        let mut spec = small_spec();
        spec.label_noise_sd = 0.0;
        let (items, teacher) = generate_synthetic(&spec).unwrap();
        let (again, teacher2) = generate_synthetic(&spec).unwrap();
        assert_eq!(items, again);
        assert_eq!(teacher, teacher2);
        for p in &items {
            p.validate(&spec.taxonomy, Some(spec.d)).unwrap();
            let s = teacher
                .score_pair(&p.feature_a, &p.feature_b, &spec.taxonomy, 0.0)
                .unwrap();
            match p.overall_pref.unwrap() {
                OverallVerdict::A => assert_eq!(s.overall_pref, Preference::A),
                OverallVerdict::B => assert_eq!(s.overall_pref, Preference::B),
                OverallVerdict::Tie => {}
            }
        }
    }

    #[test]
    fn validate_catches_shape_errors() {
        let t = default_taxonomy();
        let (items, _) = generate_synthetic(&small_spec()).unwrap();
        assert!(items[0].validate(&t, None).is_err());
        assert!(items[0].validate(&small_spec().taxonomy, Some(7)).is_err());
    }
}
