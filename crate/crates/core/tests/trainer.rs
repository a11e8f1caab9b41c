mod common;

use common::{recovery_config, recovery_spec, small_synthetic};
use moe_reward::data::generate_synthetic;
use moe_reward::head::TensorId;
use moe_reward::losses::{stage_loss, AspectPreference, Stage, StageWeights};
use moe_reward::schedule::cosine_warmup_lr;
use moe_reward::trainer::{
    default_freeze_plan, init_for, resolve_freeze, steps_per_stage, train_all, train_from,
    train_stage, TrainConfig,
};
use proptest::prelude::*;

fn quick_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        base_lr: 1e-2,
        warmup_steps: 3,
        epochs_per_stage: 2,
        aspect_width: 5,
        criteria_width: 5,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn schedule_examples() {
    assert_eq!(cosine_warmup_lr(0, 200, 25, 3e-5).unwrap(), 0.0);
    assert_eq!(cosine_warmup_lr(25, 200, 25, 3e-5).unwrap(), 3e-5);
    assert!(cosine_warmup_lr(200, 200, 25, 3e-5).unwrap().abs() <= 1e-12);
    assert!(cosine_warmup_lr(201, 200, 25, 3e-5).is_err());
    assert!(cosine_warmup_lr(0, 20, 25, 3e-5).is_err());
}

proptest! {
    #[test]
    fn schedule_is_continuous_and_non_increasing(total in 1usize..500, w in 0usize..500, lr in 1e-6f64..1.0) {
        let warmup = w.min(total);
        if warmup < total {
            prop_assert_eq!(cosine_warmup_lr(warmup, total, warmup, lr).unwrap(), lr);
        }
        let mut prev = f64::INFINITY;
        for s in warmup..=total {
            let v = cosine_warmup_lr(s, total, warmup, lr).unwrap();
            prop_assert!(v <= prev && v >= 0.0);
            prev = v;
        }
        for s in 1..warmup {
            prop_assert!(cosine_warmup_lr(s, total, warmup, lr).unwrap() > cosine_warmup_lr(s - 1, total, warmup, lr).unwrap());
        }
    }
}

#[test]
fn zero_learning_rate_leaves_params_bit_identical() {
    let (items, _, spec) = small_synthetic(40, 0.05);
    let cfg = TrainConfig {
        base_lr: 0.0,
        ..quick_config()
    };
    let init = init_for(spec.d, &spec.taxonomy, &cfg).unwrap();
    for stage in Stage::ALL {
        let mut p = init.clone();
        train_stage(stage, &items, &mut p, &spec.taxonomy, &cfg).unwrap();
        for id in TensorId::ALL {
            assert_eq!(p.tensor(id), init.tensor(id), "stage {stage} {}", id.name());
        }
    }
}

#[test]
fn same_seed_same_result() {
    let (items, _, spec) = small_synthetic(60, 0.05);
    let cfg = quick_config();
    let (pa, ha) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    let (pb, hb) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    assert_eq!(pa.to_json(), pb.to_json());
    assert_eq!(ha.to_csv(), hb.to_csv());
    let other = TrainConfig { seed: 12, ..cfg };
    let (pc, _) = train_all(&items, &spec.taxonomy, &other).unwrap();
    assert_ne!(pa.to_json(), pc.to_json());
}

#[test]
fn thread_count_does_not_change_training() {
    let (items, _, spec) = small_synthetic(50, 0.05);
    let cfg = quick_config();
    let (pa, ha) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    let (pb, hb) = train_all(&items, &spec.taxonomy, &TrainConfig { threads: 4, ..cfg }).unwrap();
    assert_eq!(pa.to_json(), pb.to_json());
    assert_eq!(ha.to_csv(), hb.to_csv());
}

#[test]
fn frozen_tensors_are_untouched_in_every_stage() {
    let (items, _, spec) = small_synthetic(40, 0.05);
    let cfg = quick_config();
    let plan = default_freeze_plan();
    let mut p = init_for(spec.d, &spec.taxonomy, &cfg).unwrap();
    // Make the gate output layers nonzero so a stray update would show.
    for id in [TensorId::AspectOutWeight, TensorId::CriteriaOutWeight] {
        for (k, v) in p.tensor_mut(id).data.iter_mut().enumerate() {
            *v = 0.1 * ((k % 7) as f64 - 3.0);
        }
    }
    for stage in Stage::ALL {
        let before = p.clone();
        train_stage(stage, &items, &mut p, &spec.taxonomy, &cfg).unwrap();
        let frozen = resolve_freeze(plan.get(stage)).unwrap();
        for id in TensorId::ALL {
            if frozen.contains(&id) {
                assert_eq!(
                    p.tensor(id),
                    before.tensor(id),
                    "stage {stage} {}",
                    id.name()
                );
                assert!(p.is_frozen(id));
            } else if id != TensorId::AspectHiddenBias || stage == Stage::Three {
                assert_ne!(
                    p.tensor(id),
                    before.tensor(id),
                    "stage {stage} {} did not move",
                    id.name()
                );
            }
        }
    }
}

#[test]
fn default_freeze_plan_matches_stages() {
    let plan = default_freeze_plan();
    let g: Vec<TensorId> = TensorId::ALL
        .iter()
        .copied()
        .filter(|id| id.name().starts_with("g."))
        .collect();
    let gp: Vec<TensorId> = TensorId::ALL
        .iter()
        .copied()
        .filter(|id| id.name().starts_with("g_prime."))
        .collect();
    let s1 = resolve_freeze(plan.get(Stage::One)).unwrap();
    let s2 = resolve_freeze(plan.get(Stage::Two)).unwrap();
    let s3 = resolve_freeze(plan.get(Stage::Three)).unwrap();
    assert!(g.iter().chain(&gp).all(|id| s1.contains(id)));
    assert_eq!(s1.len(), 8);
    assert!(g.iter().all(|id| s2.contains(id)) && s2.len() == 4);
    assert!(s3.is_empty());
}

#[test]
fn zero_epochs_is_vacuous() {
    let (items, _, spec) = small_synthetic(30, 0.05);
    let cfg = TrainConfig {
        epochs_per_stage: 0,
        ..quick_config()
    };
    let (p, h) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    assert_eq!(p, {
        let mut init = init_for(spec.d, &spec.taxonomy, &cfg).unwrap();
        for id in TensorId::ALL {
            init.set_frozen(id, p.is_frozen(id));
        }
        init
    });
    assert!(h.steps.is_empty());
}

#[test]
fn history_is_complete_and_ordered() {
    let (items, _, spec) = small_synthetic(50, 0.05);
    let cfg = quick_config();
    let (_, h) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    let per = steps_per_stage(50, 16, 2);
    assert_eq!(per, 8);
    assert_eq!(h.steps.len(), 3 * per);
    for stage in Stage::ALL {
        let steps: Vec<usize> = h.stage_steps(stage).map(|r| r.step).collect();
        assert_eq!(steps, (0..per).collect::<Vec<_>>());
    }
    let csv = h.to_csv();
    assert!(csv.starts_with("stage,step,lr,loss,l1,l2,l3,"));
    assert_eq!(csv.lines().count(), 3 * per + 1);
    assert_eq!(h.stage_seconds.len(), 3);
}

#[test]
fn stage_two_requires_aspect_preferences() {
    let (mut items, _, spec) = small_synthetic(20, 0.05);
    for p in &mut items {
        p.aspect_prefs = AspectPreference::missing(spec.taxonomy.n_aspects());
    }
    let mut seen = Vec::new();
    let err = train_from(
        &items,
        &mut init_for(spec.d, &spec.taxonomy, &quick_config()).unwrap(),
        &spec.taxonomy,
        &quick_config(),
        |s, _| {
            seen.push(s);
            Ok(())
        },
    )
    .unwrap_err()
    .to_string();
    assert_eq!(seen, vec![Stage::One]);
    assert!(
        err.contains("stage 2") && err.contains("aspect_prefs"),
        "{err}"
    );
}

#[test]
fn empty_dataset_is_rejected() {
    let t = moe_reward::default_taxonomy();
    assert!(train_all(&[], &t, &quick_config()).is_err());
}

#[test]
fn stage_weight_override_reaches_history() {
    let (items, _, spec) = small_synthetic(30, 0.05);
    let mut cfg = quick_config();
    cfg.stage_weights.stage3 = StageWeights::new(0.5, 0.5, 1.0).unwrap();
    let (_, h) = train_all(&items, &spec.taxonomy, &cfg).unwrap();
    let r = h.stage_steps(Stage::Three).next().unwrap();
    assert_eq!((r.lambda_l1, r.lambda_l2, r.lambda_l3), (0.5, 0.5, 1.0));
    let r = h.stage_steps(Stage::One).next().unwrap();
    assert_eq!((r.lambda_l2, r.lambda_l3), (0.0, 0.0));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let cfg = quick_config();
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(TrainConfig::from_json_file(&path).unwrap(), cfg);
}

/// Stage 1 on the recovery data: the criteria loss at the end of the stage
/// against its value at initialization, both over the whole training set.
fn stage_one_losses() -> (f64, f64, f64, f64) {
    let spec = recovery_spec(2000);
    let (items, _) = generate_synthetic(&spec).unwrap();
    let cfg = recovery_config();
    let t = &spec.taxonomy;
    let w = StageWeights::default_for(Stage::One);
    let mut p = init_for(spec.d, t, &cfg).unwrap();
    let initial = stage_loss(Stage::One, &items, &p, t, &w).unwrap();
    let h = train_stage(Stage::One, &items, &mut p, t, &cfg).unwrap();
    let last = stage_loss(Stage::One, &items, &p, t, &w).unwrap();
    (initial, last, h.steps[0].loss, h.steps.last().unwrap().loss)
}

#[test]
fn stage_one_makes_progress() {
    let (initial, last, first_step, last_step) = stage_one_losses();
    assert!(last < initial, "{last} vs {initial}");
    assert!(last_step < first_step, "{last_step} vs {first_step}");
}

#[test]
fn stage_one_reaches_a_quarter_of_the_initial_loss() {
    let (initial, last, _, _) = stage_one_losses();
    println!(
        "stage 1 criteria loss: initial {initial:.4}, final {last:.4}, ratio {:.3}",
        last / initial
    );
    assert!(
        last < 0.25 * initial,
        "final {last:.4} is not below 0.25 x initial {initial:.4}"
    );
}
