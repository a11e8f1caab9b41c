//! Forward pass of the two stacked mixture-of-experts layers.
//!
//! Three independent heads read the same feature `h`:
//!
//! * `f`: affine scoring layer, one raw score per criterion;
//! * `g`: aspect gate, a tanh perceptron whose softmax gives the routing
//!   weights over aspects;
//! * `g'`: criteria gate, a tanh perceptron whose logits are softmax-normalized
//!   separately inside each aspect's criterion range.
//!
//! Gated criterion scores are `c[U_i] = softmax(g'(h)[U_i]) * f(h)[U_i]`, and
//! the overall score is `sum_i ar[i] * sum(c[U_i])`.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_GATE_WIDTH: usize = 64;
pub const DEFAULT_TIE_EPS: f64 = 1e-6;

/// A precomputed backbone embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "feature entry {k} is not finite ({})",
                values[k]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Identifies one parameter tensor of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorId {
    ScoreWeight,
    ScoreBias,
    AspectHiddenWeight,
    AspectHiddenBias,
    AspectOutWeight,
    AspectOutBias,
    CriteriaHiddenWeight,
    CriteriaHiddenBias,
    CriteriaOutWeight,
    CriteriaOutBias,
}

impl TensorId {
    pub const ALL: [TensorId; 10] = [
        TensorId::ScoreWeight,
        TensorId::ScoreBias,
        TensorId::AspectHiddenWeight,
        TensorId::AspectHiddenBias,
        TensorId::AspectOutWeight,
        TensorId::AspectOutBias,
        TensorId::CriteriaHiddenWeight,
        TensorId::CriteriaHiddenBias,
        TensorId::CriteriaOutWeight,
        TensorId::CriteriaOutBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorId::ScoreWeight => "f.weight",
            TensorId::ScoreBias => "f.bias",
            TensorId::AspectHiddenWeight => "g.hidden.weight",
            TensorId::AspectHiddenBias => "g.hidden.bias",
            TensorId::AspectOutWeight => "g.out.weight",
            TensorId::AspectOutBias => "g.out.bias",
            TensorId::CriteriaHiddenWeight => "g_prime.hidden.weight",
            TensorId::CriteriaHiddenBias => "g_prime.hidden.bias",
            TensorId::CriteriaOutWeight => "g_prime.out.weight",
            TensorId::CriteriaOutBias => "g_prime.out.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<TensorId> {
        TensorId::ALL.into_iter().find(|t| t.name() == name)
    }

    /// The sub-network a tensor belongs to: `f`, `g` or `g_prime`.
    pub fn module(self) -> Module {
        match self.index() {
            0..=1 => Module::Score,
            2..=5 => Module::AspectGate,
            _ => Module::CriteriaGate,
        }
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Module {
    #[serde(rename = "f")]
    Score,
    #[serde(rename = "g")]
    AspectGate,
    #[serde(rename = "g_prime")]
    CriteriaGate,
}

impl Module {
    pub fn tensors(self) -> impl Iterator<Item = TensorId> {
        TensorId::ALL
            .into_iter()
            .filter(move |t| t.module() == self)
    }

    pub fn parse(name: &str) -> Option<Module> {
        match name {
            "f" => Some(Module::Score),
            "g" => Some(Module::AspectGate),
            "g_prime" | "g'" => Some(Module::CriteriaGate),
            _ => None,
        }
    }
}

/// Row-major dense tensor. Vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `W x + b` for a weight of shape `(out, in)` and a bias of shape `(out, 1)`.
    fn affine(&self, bias: &Tensor, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter()
                    .zip(x)
                    .fold(bias.data[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

/// Parameters of the scoring layer and both gates.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHeadParams {
    d: usize,
    aspect_width: usize,
    criteria_width: usize,
    n_aspects: usize,
    n_criteria: usize,
    taxonomy_hash: String,
    tensors: Vec<Tensor>,
    frozen: [bool; 10],
}

/// Everything `forward` produces for one feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    /// Aspect routing weights, a point on the simplex.
    pub ar: Vec<f64>,
    /// Within-aspect criteria gate weights; each aspect's slice sums to one.
    pub criteria_weights: Vec<f64>,
    /// Gated criterion scores.
    pub c: Vec<f64>,
    pub aspect_sums: Vec<f64>,
    pub os: f64,
}

/// Intermediate activations needed for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub raw_scores: Vec<f64>,
    pub aspect_hidden: Vec<f64>,
    pub criteria_hidden: Vec<f64>,
    pub out: HeadOutput,
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// `sum_i aspect_sums[i] * ar[i]`, accumulated in aspect order.
pub fn overall_score(aspect_sums: &[f64], ar: &[f64]) -> f64 {
    aspect_sums
        .iter()
        .zip(ar)
        .fold(0.0, |acc, (s, a)| acc + s * a)
}

impl RewardHeadParams {
    /// All-zero parameters with the given shapes.
    pub fn zeros(d: usize, aspect_width: usize, criteria_width: usize, t: &Taxonomy) -> Self {
        let (na, nc) = (t.n_aspects(), t.n_criteria());
        let tensors = TensorId::ALL
            .iter()
            .map(|&id| {
                let (r, c) = shape_of(id, d, aspect_width, criteria_width, na, nc);
                Tensor::zeros(r, c)
            })
            .collect();
        RewardHeadParams {
            d,
            aspect_width,
            criteria_width,
            n_aspects: na,
            n_criteria: nc,
            taxonomy_hash: t.hash(),
            tensors,
            frozen: [false; 10],
        }
    }

    /// Random initialization: hidden-layer and scoring weights are Gaussian
    /// with standard deviation `1/sqrt(fan_in)`; gate output layers and all
    /// biases start at zero, so the initial routing is uniform.
    pub fn init(
        d: usize,
        aspect_width: usize,
        criteria_width: usize,
        seed: u64,
        t: &Taxonomy,
    ) -> Result<Self> {
        if d == 0 || aspect_width == 0 || criteria_width == 0 {
            return Err(Error::Range(format!(
                "dimensions must be positive (d={d}, w_g={aspect_width}, w_c={criteria_width})"
            )));
        }
        let mut p = Self::zeros(d, aspect_width, criteria_width, t);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive sd");
        for id in [
            TensorId::ScoreWeight,
            TensorId::AspectHiddenWeight,
            TensorId::CriteriaHiddenWeight,
        ] {
            for v in p.tensor_mut(id).data.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn aspect_width(&self) -> usize {
        self.aspect_width
    }

    pub fn criteria_width(&self) -> usize {
        self.criteria_width
    }

    pub fn n_aspects(&self) -> usize {
        self.n_aspects
    }

    pub fn n_criteria(&self) -> usize {
        self.n_criteria
    }

    pub fn taxonomy_hash(&self) -> &str {
        &self.taxonomy_hash
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn is_frozen(&self, id: TensorId) -> bool {
        self.frozen[id.index()]
    }

    pub fn set_frozen(&mut self, id: TensorId, frozen: bool) {
        self.frozen[id.index()] = frozen;
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.frozen = [frozen; 10];
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn num_trainable(&self) -> usize {
        TensorId::ALL
            .iter()
            .filter(|&&id| !self.is_frozen(id))
            .map(|&id| self.tensor(id).len())
            .sum()
    }

    /// Checks that these parameters were built for `t`.
    pub fn check_taxonomy(&self, t: &Taxonomy) -> Result<()> {
        if self.n_aspects != t.n_aspects() || self.n_criteria != t.n_criteria() {
            return Err(Error::Shape(format!(
                "parameters have {} aspects / {} criteria, taxonomy has {} / {}",
                self.n_aspects,
                self.n_criteria,
                t.n_aspects(),
                t.n_criteria()
            )));
        }
        if self.taxonomy_hash != t.hash() {
            return Err(Error::Validation(
                "parameter taxonomy hash does not match the taxonomy in use".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.d {
            return Err(Error::Shape(format!(
                "feature has dimension {}, parameters expect {}",
                h.len(),
                self.d
            )));
        }
        if let Some(k) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "feature entry {k} is not finite ({})",
                h[k]
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, h: &[f64], t: &Taxonomy) -> Trace {
        use TensorId::*;
        let raw_scores = self.tensor(ScoreWeight).affine(self.tensor(ScoreBias), h);

        let aspect_hidden: Vec<f64> = self
            .tensor(AspectHiddenWeight)
            .affine(self.tensor(AspectHiddenBias), h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let aspect_logits = self
            .tensor(AspectOutWeight)
            .affine(self.tensor(AspectOutBias), &aspect_hidden);
        let ar = softmax(&aspect_logits);

        let criteria_hidden: Vec<f64> = self
            .tensor(CriteriaHiddenWeight)
            .affine(self.tensor(CriteriaHiddenBias), h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let criteria_logits = self
            .tensor(CriteriaOutWeight)
            .affine(self.tensor(CriteriaOutBias), &criteria_hidden);

        let mut criteria_weights = vec![0.0; self.n_criteria];
        let mut c = vec![0.0; self.n_criteria];
        let mut aspect_sums = vec![0.0; self.n_aspects];
        for (i, sum) in aspect_sums.iter_mut().enumerate() {
            let u = t.range(i);
            softmax_into(
                &criteria_logits[u.clone()],
                &mut criteria_weights[u.clone()],
            );
            for k in u {
                c[k] = criteria_weights[k] * raw_scores[k];
                *sum += c[k];
            }
        }
        let os = overall_score(&aspect_sums, &ar);
        Trace {
            raw_scores,
            aspect_hidden,
            criteria_hidden,
            out: HeadOutput {
                ar,
                criteria_weights,
                c,
                aspect_sums,
                os,
            },
        }
    }

    /// Scores one feature vector.
    pub fn forward(&self, h: &[f64], t: &Taxonomy) -> Result<HeadOutput> {
        self.check_input(h)?;
        self.check_shape_vs(t)?;
        Ok(self.trace(h, t).out)
    }

    pub(crate) fn check_shape_vs(&self, t: &Taxonomy) -> Result<()> {
        if self.n_aspects != t.n_aspects() || self.n_criteria != t.n_criteria() {
            return Err(Error::Shape(format!(
                "parameters have {} aspects / {} criteria, taxonomy has {} / {}",
                self.n_aspects,
                self.n_criteria,
                t.n_aspects(),
                t.n_criteria()
            )));
        }
        Ok(())
    }

    /// Scores both candidates of a pair and derives overall and per-aspect
    /// preferences, treating margins within `tie_eps` as ties.
    pub fn score_pair(
        &self,
        h_a: &[f64],
        h_b: &[f64],
        t: &Taxonomy,
        tie_eps: f64,
    ) -> Result<PairScores> {
        let a = self.forward(h_a, t)?;
        let b = self.forward(h_b, t)?;
        let aspect_prefs = a
            .aspect_sums
            .iter()
            .zip(&b.aspect_sums)
            .map(|(&x, &y)| Preference::from_margin(x, y, tie_eps))
            .collect();
        Ok(PairScores {
            overall_pref: Preference::from_margin(a.os, b.os, tie_eps),
            os_a: a.os,
            os_b: b.os,
            aspect_sums_a: a.aspect_sums,
            aspect_sums_b: b.aspect_sums,
            aspect_prefs,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ParamsFile::from(self)).expect("parameters serialize")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(json)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Loads parameters and checks them against `t`.
    pub fn load(path: impl AsRef<Path>, t: &Taxonomy) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p = Self::from_json(&json)?;
        p.check_taxonomy(t)?;
        Ok(p)
    }
}

fn shape_of(id: TensorId, d: usize, wg: usize, wc: usize, na: usize, nc: usize) -> (usize, usize) {
    use TensorId::*;
    match id {
        ScoreWeight => (nc, d),
        ScoreBias => (nc, 1),
        AspectHiddenWeight => (wg, d),
        AspectHiddenBias => (wg, 1),
        AspectOutWeight => (na, wg),
        AspectOutBias => (na, 1),
        CriteriaHiddenWeight => (wc, d),
        CriteriaHiddenBias => (wc, 1),
        CriteriaOutWeight => (nc, wc),
        CriteriaOutBias => (nc, 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl Preference {
    pub fn from_margin(a: f64, b: f64, tie_eps: f64) -> Self {
        if a - b > tie_eps {
            Preference::A
        } else if b - a > tie_eps {
            Preference::B
        } else {
            Preference::Tie
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Preference::A => Preference::B,
            Preference::B => Preference::A,
            Preference::Tie => Preference::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub os_a: f64,
    pub os_b: f64,
    pub aspect_sums_a: Vec<f64>,
    pub aspect_sums_b: Vec<f64>,
    pub overall_pref: Preference,
    pub aspect_prefs: Vec<Preference>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    d: usize,
    aspect_gate_width: usize,
    criteria_gate_width: usize,
    n_aspects: usize,
    n_criteria: usize,
    taxonomy_hash: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    frozen: bool,
    data: Vec<f64>,
}

impl From<&RewardHeadParams> for ParamsFile {
    fn from(p: &RewardHeadParams) -> Self {
        ParamsFile {
            d: p.d,
            aspect_gate_width: p.aspect_width,
            criteria_gate_width: p.criteria_width,
            n_aspects: p.n_aspects,
            n_criteria: p.n_criteria,
            taxonomy_hash: p.taxonomy_hash.clone(),
            tensors: TensorId::ALL
                .iter()
                .map(|&id| {
                    let t = p.tensor(id);
                    TensorEntry {
                        name: id.name().to_string(),
                        shape: [t.rows, t.cols],
                        frozen: p.is_frozen(id),
                        data: t.data.clone(),
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<ParamsFile> for RewardHeadParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.d == 0 || f.aspect_gate_width == 0 || f.criteria_gate_width == 0 {
            return Err(Error::Shape("parameter file has a zero dimension".into()));
        }
        if f.tensors.len() != TensorId::ALL.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                TensorId::ALL.len(),
                f.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(f.tensors.len());
        let mut frozen = [false; 10];
        for (id, entry) in TensorId::ALL.iter().zip(f.tensors) {
            if entry.name != id.name() {
                return Err(Error::Shape(format!(
                    "expected tensor {}, found {}",
                    id.name(),
                    entry.name
                )));
            }
            let (r, c) = shape_of(
                *id,
                f.d,
                f.aspect_gate_width,
                f.criteria_gate_width,
                f.n_aspects,
                f.n_criteria,
            );
            if entry.shape != [r, c] || entry.data.len() != r * c {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?} with {} values, expected [{r}, {c}]",
                    id.name(),
                    entry.shape,
                    entry.data.len()
                )));
            }
            if entry.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "tensor {} has non-finite entries",
                    id.name()
                )));
            }
            frozen[id.index()] = entry.frozen;
            tensors.push(Tensor {
                rows: r,
                cols: c,
                data: entry.data,
            });
        }
        Ok(RewardHeadParams {
            d: f.d,
            aspect_width: f.aspect_gate_width,
            criteria_width: f.criteria_gate_width,
            n_aspects: f.n_aspects,
            n_criteria: f.n_criteria,
            taxonomy_hash: f.taxonomy_hash,
            tensors,
            frozen,
        })
    }
}
