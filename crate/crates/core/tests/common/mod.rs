#![allow(dead_code)]

use moe_reward::data::{generate_synthetic, AnnotatedPair, SyntheticSpec};
use moe_reward::head::{RewardHeadParams, TensorId};
use moe_reward::losses::{AspectPreference, AspectVerdict, CriteriaLabels, OverallVerdict};
use moe_reward::{FeatureVector, Taxonomy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Params with every tensor (gate output layers included) drawn from N(0, sd^2).
pub fn random_params(
    d: usize,
    wg: usize,
    wc: usize,
    t: &Taxonomy,
    seed: u64,
    sd: f64,
) -> RewardHeadParams {
    let mut p = RewardHeadParams::zeros(d, wg, wc, t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in TensorId::ALL {
        for v in p.tensor_mut(id).data.iter_mut() {
            *v = sd * gauss(&mut rng);
        }
    }
    p
}

pub fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random pairs with a mix of present / missing labels and every verdict kind.
pub fn random_batch(n: usize, d: usize, t: &Taxonomy, seed: u64) -> Vec<AnnotatedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut feat =
                || FeatureVector::new((0..d).map(|_| gauss(&mut rng)).collect()).unwrap();
            let fa = feat();
            let fb = feat();
            let labels = |rng: &mut ChaCha8Rng| {
                let mut v: Vec<Option<f64>> = (0..t.n_criteria())
                    .map(|_| Some([0.0, 0.5, 1.0][rng.random_range(0..3)]))
                    .collect();
                // keep at least one label present
                let k = rng.random_range(0..t.n_criteria());
                for (j, x) in v.iter_mut().enumerate() {
                    if j != k && rng.random_bool(0.25) {
                        *x = None;
                    }
                }
                CriteriaLabels::new(v).unwrap()
            };
            let ca = labels(&mut rng);
            let cb = labels(&mut rng);
            let mut prefs: Vec<Option<AspectVerdict>> = (0..t.n_aspects())
                .map(|_| match rng.random_range(0..4) {
                    0 => Some(AspectVerdict::A),
                    1 => Some(AspectVerdict::B),
                    2 => Some(AspectVerdict::Same),
                    _ => None,
                })
                .collect();
            prefs[0] = Some(if i % 2 == 0 {
                AspectVerdict::A
            } else {
                AspectVerdict::B
            });
            let overall = Some(if i % 2 == 0 {
                OverallVerdict::B
            } else {
                OverallVerdict::A
            });
            AnnotatedPair {
                id: format!("r{i}"),
                prompt: None,
                feature_a: fa,
                feature_b: fb,
                criteria_a: ca,
                criteria_b: cb,
                aspect_prefs: AspectPreference(prefs),
                overall_pref: overall,
                aspect_scores_a: None,
                aspect_scores_b: None,
            }
        })
        .collect()
}

pub fn small_synthetic(
    n: usize,
    noise: f64,
) -> (Vec<AnnotatedPair>, RewardHeadParams, SyntheticSpec) {
    let mut spec = SyntheticSpec::new(8, Taxonomy::uniform(3, 3).unwrap(), n);
    spec.aspect_width = 6;
    spec.criteria_width = 6;
    spec.label_noise_sd = noise;
    let (items, teacher) = generate_synthetic(&spec).unwrap();
    (items, teacher, spec)
}

/// The end-to-end teacher-recovery setting: d = 32, default taxonomy.
pub fn recovery_spec(n: usize) -> SyntheticSpec {
    let mut spec = SyntheticSpec::new(32, moe_reward::default_taxonomy(), n);
    spec.label_noise_sd = 0.05;
    spec.tie_band = 0.05;
    spec
}

/// Default training config with the learning rate raised for the synthetic
/// recovery task; 3e-5 barely moves a fresh head in 75 steps per stage.
pub fn recovery_config() -> moe_reward::TrainConfig {
    moe_reward::TrainConfig {
        base_lr: 3e-2,
        ..Default::default()
    }
}
