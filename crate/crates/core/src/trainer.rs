//! Three-stage training: criteria scoring, aspect ranking, joint ranking.
//!
//! Each stage runs its own optimizer state and warmup/cosine schedule over
//! seeded shuffled mini-batches. Default freeze plan: stage 1 trains only the
//! scoring layer `f`; stage 2 adds the criteria gate `g'`; stage 3 trains
//! everything.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::AnnotatedPair;
use crate::error::{Error, Result};
use crate::gradients::loss_gradient_terms_with_threads;
use crate::head::{Module, RewardHeadParams, TensorId, DEFAULT_GATE_WIDTH, DEFAULT_TIE_EPS};
use crate::losses::{validate_batch, Stage, StageWeights};
use crate::optim::{optimizer_step, AdamState, AdamWConfig};
use crate::schedule::cosine_warmup_lr;
use crate::taxonomy::Taxonomy;

/// A value per training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStage<T> {
    pub stage1: T,
    pub stage2: T,
    pub stage3: T,
}

impl<T> PerStage<T> {
    pub fn get(&self, stage: Stage) -> &T {
        match stage {
            Stage::One => &self.stage1,
            Stage::Two => &self.stage2,
            Stage::Three => &self.stage3,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut T {
        match stage {
            Stage::One => &mut self.stage1,
            Stage::Two => &mut self.stage2,
            Stage::Three => &mut self.stage3,
        }
    }
}

/// Names of frozen modules (`f`, `g`, `g_prime`) or individual tensors
/// (e.g. `g.out.bias`) per stage.
pub type FreezePlan = PerStage<Vec<String>>;

pub fn default_freeze_plan() -> FreezePlan {
    PerStage {
        stage1: vec!["g".into(), "g_prime".into()],
        stage2: vec!["g".into()],
        stage3: vec![],
    }
}

/// Resolves module and tensor names to the set of frozen tensors.
pub fn resolve_freeze(names: &[String]) -> Result<BTreeSet<TensorId>> {
    let mut out = BTreeSet::new();
    for n in names {
        if let Some(m) = Module::parse(n) {
            out.extend(m.tensors());
        } else if let Some(id) = TensorId::from_name(n) {
            out.insert(id);
        } else {
            return Err(Error::Validation(format!(
                "unknown module or tensor '{n}' in freeze plan"
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub epochs_per_stage: usize,
    pub stage_weights: PerStage<StageWeights>,
    pub freeze_plan: FreezePlan,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub tie_eps: f64,
    pub aspect_width: usize,
    pub criteria_width: usize,
    /// Worker threads for the forward passes; results are identical for any value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            base_lr: 3e-5,
            warmup_steps: 25,
            epochs_per_stage: 3,
            stage_weights: PerStage {
                stage1: StageWeights::default_for(Stage::One),
                stage2: StageWeights::default_for(Stage::Two),
                stage3: StageWeights::default_for(Stage::Three),
            },
            freeze_plan: default_freeze_plan(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            tie_eps: DEFAULT_TIE_EPS,
            aspect_width: DEFAULT_GATE_WIDTH,
            criteria_width: DEFAULT_GATE_WIDTH,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        // lr = 0 is accepted: it is the documented way to run a stage without
        // moving any parameter.
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Validation(format!(
                "base_lr must be >= 0, got {}",
                self.base_lr
            )));
        }
        let o = &self.optimizer;
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Validation(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        o.validate()?;
        if self.tie_eps.is_nan() || self.tie_eps < 0.0 {
            return Err(Error::Validation("tie_eps must be >= 0".into()));
        }
        if self.aspect_width == 0 || self.criteria_width == 0 {
            return Err(Error::Validation("gate widths must be >= 1".into()));
        }
        for s in Stage::ALL {
            self.stage_weights.get(s).validate()?;
            resolve_freeze(self.freeze_plan.get(s))?;
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&json)?;
        Ok(cfg)
    }
}

/// Derives a sub-seed for one consumer of randomness from the master seed.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SEED_INIT: u64 = 1;
pub const SEED_SPLIT: u64 = 2;
pub const SEED_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub stage: u32,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub lambda_l3: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    /// `(stage, seconds)` per completed stage.
    pub stage_seconds: Vec<(u32, f64)>,
}

impl TrainHistory {
    pub fn extend(&mut self, other: TrainHistory) {
        self.steps.extend(other.steps);
        self.stage_seconds.extend(other.stage_seconds);
    }

    pub fn stage_steps(&self, stage: Stage) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |r| r.stage == stage.number())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,step,lr,loss,l1,l2,l3,lambda_l1,lambda_l2,lambda_l3\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.step,
                r.lr,
                r.loss,
                r.l1,
                r.l2,
                r.l3,
                r.lambda_l1,
                r.lambda_l2,
                r.lambda_l3
            );
        }
        s
    }

    /// Per-stage first/last loss and timing.
    pub fn summary(&self) -> serde_json::Value {
        let stages: Vec<serde_json::Value> = Stage::ALL
            .iter()
            .filter_map(|&st| {
                let steps: Vec<&StepRecord> = self.stage_steps(st).collect();
                let seconds = self
                    .stage_seconds
                    .iter()
                    .find(|(s, _)| *s == st.number())
                    .map(|(_, t)| *t)?;
                Some(serde_json::json!({
                    "stage": st.number(),
                    "steps": steps.len(),
                    "first_loss": steps.first().map(|r| r.loss),
                    "last_loss": steps.last().map(|r| r.loss),
                    "seconds": seconds,
                }))
            })
            .collect();
        serde_json::json!({ "total_steps": self.steps.len(), "stages": stages })
    }
}

/// Steps per stage: one per (possibly partial) batch per epoch.
pub fn steps_per_stage(n_items: usize, batch_size: usize, epochs: usize) -> usize {
    n_items.div_ceil(batch_size) * epochs
}

/// Runs one stage in place on `params`.
pub fn train_stage(
    stage: Stage,
    dataset: &[AnnotatedPair],
    params: &mut RewardHeadParams,
    t: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    params.check_taxonomy(t)?;
    let weights = *cfg.stage_weights.get(stage);
    validate_batch(stage, dataset, &weights)?;

    let frozen = resolve_freeze(cfg.freeze_plan.get(stage))?;
    for id in TensorId::ALL {
        params.set_frozen(id, frozen.contains(&id));
    }

    let started = Instant::now();
    let total = steps_per_stage(dataset.len(), cfg.batch_size, cfg.epochs_per_stage);
    let warmup = cfg.warmup_steps.min(total);
    let mut state = AdamState::new(params);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SEED_SHUFFLE));
    rng.set_stream(stage.number() as u64);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory::default();
    let mut step = 0;
    let mut batch: Vec<AnnotatedPair> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs_per_stage {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let lr = cosine_warmup_lr(step, total, warmup, cfg.base_lr)?;
            let (terms, grads) =
                loss_gradient_terms_with_threads(stage, params, &batch, t, &weights, cfg.threads)?;
            optimizer_step(params, &grads, &mut state, lr, &cfg.optimizer)?;
            let w = weights.masked(stage);
            history.steps.push(StepRecord {
                stage: stage.number(),
                step,
                lr,
                loss: terms.total,
                l1: terms.l1,
                l2: terms.l2,
                l3: terms.l3,
                lambda_l1: w.lambda_l1,
                lambda_l2: w.lambda_l2,
                lambda_l3: w.lambda_l3,
            });
            step += 1;
        }
    }
    history
        .stage_seconds
        .push((stage.number(), started.elapsed().as_secs_f64()));
    Ok(history)
}

/// Initial parameters for a dataset of feature dimension `d`.
pub fn init_for(d: usize, t: &Taxonomy, cfg: &TrainConfig) -> Result<RewardHeadParams> {
    RewardHeadParams::init(
        d,
        cfg.aspect_width,
        cfg.criteria_width,
        derive_seed(cfg.seed, SEED_INIT),
        t,
    )
}

/// Runs stages 1, 2, 3 in order starting from `params`, calling `on_stage`
/// after each stage with the checkpoint.
pub fn train_from(
    dataset: &[AnnotatedPair],
    params: &mut RewardHeadParams,
    t: &Taxonomy,
    cfg: &TrainConfig,
    mut on_stage: impl FnMut(Stage, &RewardHeadParams) -> Result<()>,
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    for stage in Stage::ALL {
        history.extend(train_stage(stage, dataset, params, t, cfg)?);
        on_stage(stage, params)?;
    }
    Ok(history)
}

/// Initializes a head for the dataset and runs all three stages.
pub fn train_all(
    dataset: &[AnnotatedPair],
    t: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<(RewardHeadParams, TrainHistory)> {
    let d = dataset
        .first()
        .ok_or_else(|| Error::Validation("training dataset is empty".into()))?
        .feature_a
        .dim();
    let mut params = init_for(d, t, cfg)?;
    let history = train_from(dataset, &mut params, t, cfg, |_, _| Ok(()))?;
    Ok((params, history))
}

/// Parses `STAGE:L1,L2,L3`, e.g. `3:0.5,0.5,1`.
pub fn parse_stage_weights(s: &str) -> Result<(Stage, StageWeights)> {
    let bad = || Error::Validation(format!("expected STAGE:L1,L2,L3, got '{s}'"));
    let (stage, rest) = s.split_once(':').ok_or_else(bad)?;
    let stage = Stage::from_number(stage.trim().parse().map_err(|_| bad())?)?;
    let vals: Vec<f64> = rest
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if vals.len() != 3 {
        return Err(bad());
    }
    Ok((stage, StageWeights::new(vals[0], vals[1], vals[2])?))
}
