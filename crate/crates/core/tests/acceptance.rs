//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::f64::consts::LN_2;
use std::process::Command;

use common::{random_batch, random_params, recovery_config, recovery_spec};
use moe_reward::data::{generate_synthetic, split, split_indices};
use moe_reward::eval::{
    evaluate_model, map_verbal_rating, quality_metrics, strict_accuracy, tie_aware_accuracy,
    AverageLabel, Quality, VERBAL_SCALE,
};
use moe_reward::head::{overall_score, HeadOutput, Preference, RewardHeadParams};
use moe_reward::losses::{
    aspect_ranking_loss, criteria_loss, overall_ranking_loss, stage_loss, AspectPreference,
    AspectVerdict, CriteriaLabels, OverallVerdict, Stage, StageWeights,
};
use moe_reward::trainer::{
    derive_seed, init_for, resolve_freeze, train_all, train_from, SEED_SPLIT,
};
use moe_reward::{default_taxonomy, Taxonomy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Snapshots of the parameters before stage 1 and after each stage.
struct RecoveryRun {
    snapshots: Vec<RewardHeadParams>,
    history_csv: String,
}

fn recovery_run() -> RecoveryRun {
    let spec = recovery_spec(2000);
    let (items, _) = generate_synthetic(&spec).unwrap();
    let cfg = recovery_config();
    let (train, _) = split(&items, 4, 1, derive_seed(cfg.seed, SEED_SPLIT)).unwrap();
    let mut params = init_for(spec.d, &spec.taxonomy, &cfg).unwrap();
    let mut snapshots = vec![params.clone()];
    let history = train_from(&train, &mut params, &spec.taxonomy, &cfg, |_, p| {
        snapshots.push(p.clone());
        Ok(())
    })
    .unwrap();
    RecoveryRun {
        snapshots,
        history_csv: history.to_csv(),
    }
}

fn s1_teacher_recovery(run: &RecoveryRun) -> Outcome {
    let spec = recovery_spec(2000);
    let (items, _) = generate_synthetic(&spec).unwrap();
    let cfg = recovery_config();
    let (_, test) = split(&items, 4, 1, derive_seed(cfg.seed, SEED_SPLIT)).unwrap();
    let model = run.snapshots.last().unwrap();
    let r = evaluate_model(
        model,
        &test,
        &spec.taxonomy,
        cfg.tie_eps,
        AverageLabel::Exclude,
    )
    .unwrap();
    let overall = r.overall.strict.unwrap_or(0.0);
    let aspects: Vec<f64> = r
        .aspects
        .iter()
        .map(|a| a.preference.strict.unwrap_or(0.0))
        .collect();
    let pass = overall >= 0.95 && aspects.iter().all(|&a| a >= 0.90);
    let shown: Vec<String> = aspects.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        pass,
        format!(
            "held-out overall strict {overall:.4} (need >= 0.95) on {} non-tie pairs; aspects [{}] (need >= 0.90)",
            r.overall.n_scored,
            shown.join(", ")
        ),
    )
}

fn s2_gradient_exactness() -> Outcome {
    let mut worst = String::new();
    let mut failures = 0;
    for seed in 0..10u64 {
        let out = Command::new(env!("CARGO_BIN_EXE_moe-reward"))
            .args([
                "gradcheck",
                "--d",
                "3",
                "--batch",
                "2",
                "--aspects",
                "2",
                "--per-aspect",
                "2",
            ])
            .args(["--seed", &seed.to_string()])
            .output()
            .unwrap();
        if out.status.code() != Some(0) {
            failures += 1;
        }
        if seed == 0 {
            worst = String::from_utf8_lossy(&out.stdout)
                .lines()
                .map(str::trim)
                .collect::<Vec<_>>()
                .join("; ");
        }
    }
    outcome(
        failures == 0,
        format!("10 seeds x stages 1-3, tolerance 1e-4, {failures} failing; seed 0: {worst}"),
    )
}

fn s3_simplex_and_decomposition() -> Outcome {
    let t = default_taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_sum_err: f64 = 0.0;
    let mut max_gate_err: f64 = 0.0;
    let mut negatives = 0;
    let mut mismatches = 0;
    for draw in 0..1000u64 {
        let d = rng.random_range(1..9);
        let sd = rng.random_range(0.05..4.0);
        let p = random_params(
            d,
            rng.random_range(1..6),
            rng.random_range(1..6),
            &t,
            draw,
            sd,
        );
        let h: Vec<f64> = (0..d).map(|_| 3.0 * common::gauss(&mut rng)).collect();
        let o = p.forward(&h, &t).unwrap();
        negatives += o.ar.iter().filter(|&&a| a < 0.0).count();
        max_sum_err = max_sum_err.max((o.ar.iter().sum::<f64>() - 1.0).abs());
        for i in 0..t.n_aspects() {
            let s: f64 = t
                .aspect_indices(i)
                .unwrap()
                .map(|k| o.criteria_weights[k])
                .sum();
            max_gate_err = max_gate_err.max((s - 1.0).abs());
        }
        let reference = overall_score(&o.aspect_sums, &o.ar);
        if reference.to_bits() != o.os.to_bits() {
            mismatches += 1;
        }
    }
    outcome(
        negatives == 0 && max_sum_err <= 1e-9 && max_gate_err <= 1e-9 && mismatches == 0,
        format!(
            "1000 draws: max |sum AR - 1| {max_sum_err:.1e}, max gate-sum error {max_gate_err:.1e}, {negatives} negative AR, {mismatches} OS mismatches"
        ),
    )
}

fn head_output(c: Vec<f64>, sums: Vec<f64>, os: f64) -> HeadOutput {
    HeadOutput {
        ar: vec![0.2; sums.len()],
        criteria_weights: vec![0.0; c.len()],
        c,
        aspect_sums: sums,
        os,
    }
}

fn s4_loss_closed_forms() -> Outcome {
    let x = head_output(vec![], vec![0.4; 5], 1.3);
    let prefs = AspectPreference(vec![Some(AspectVerdict::A), None, None, None, None]);
    let e_aspect = (aspect_ranking_loss(&x, &x, &prefs) - LN_2).abs();
    let e_overall = (overall_ranking_loss(&x, &x) - LN_2).abs();

    let s: Vec<Option<f64>> = (0..28).map(|k| Some([0.0, 0.5, 1.0][k % 3])).collect();
    let c: Vec<f64> = s.iter().map(|v| v.unwrap() + 0.1).collect();
    let e_criteria = (criteria_loss(
        &head_output(c, vec![0.0; 5], 0.0),
        &CriteriaLabels::new(s).unwrap(),
    ) - 0.28)
        .abs();

    let t = default_taxonomy();
    let p = random_params(5, 4, 4, &t, 21, 0.7);
    let mut batch = random_batch(12, 5, &t, 22);
    batch[4].overall_pref = Some(OverallVerdict::Tie);
    let mut sum = 0.0;
    let mut n = 0;
    for item in &batch {
        let a = p.forward(&item.feature_a, &t).unwrap();
        let b = p.forward(&item.feature_b, &t).unwrap();
        let m = match item.overall_pref {
            Some(OverallVerdict::A) => a.os - b.os,
            Some(OverallVerdict::B) => b.os - a.os,
            _ => continue,
        };
        sum += (1.0 + (-m).exp()).ln();
        n += 1;
    }
    let w = StageWeights::new(0.0, 0.0, 1.0).unwrap();
    let e_stage = (stage_loss(Stage::Three, &batch, &p, &t, &w).unwrap() - sum / n as f64).abs();
    let worst = e_aspect.max(e_overall).max(e_criteria).max(e_stage);
    outcome(
        worst <= 1e-12,
        format!(
            "zero-margin L2 err {e_aspect:.1e}, L3 err {e_overall:.1e}; uniform-residual L1 err {e_criteria:.1e}; stage 3 (0,0,1) vs mean L3 err {e_stage:.1e}"
        ),
    )
}

fn s5_metric_identities() -> Outcome {
    use Preference::{Tie, A, B};
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..40);
        let preds: Vec<Preference> = (0..n)
            .map(|_| [A, B, Tie][rng.random_range(0..3)])
            .collect();
        let labels: Vec<Preference> = (0..n).map(|_| [A, B][rng.random_range(0..2)]).collect();
        if tie_aware_accuracy(&preds, &labels).unwrap() < strict_accuracy(&preds, &labels).unwrap()
        {
            violations += 1;
        }
    }
    let fixtures_acc = strict_accuracy(&[A, B, Tie, A], &[A; 4]).unwrap() == 0.5
        && tie_aware_accuracy(&[A, B, Tie, A], &[A; 4]).unwrap() == 0.625;

    use Quality::{Bad, Good};
    let mut pred = vec![Good; 4];
    pred.extend([Bad; 6]);
    let truth = [Good, Good, Good, Bad, Good, Good, Bad, Bad, Bad, Bad];
    let m = quality_metrics(&pred, &truth).unwrap();
    let fixture_f1 = m.acc == 0.7 && (m.f1 - 2.0 / 3.0).abs() < 1e-15;
    let nan = quality_metrics(&[Bad; 5], &[Good; 5]).unwrap();
    let nan_ok = nan.f1.is_nan() && serde_json::to_value(nan).unwrap()["f1"] == "/";
    let (tr, te) = split_indices(5421, 4, 1, 0).unwrap();
    let split_ok = (tr.len(), te.len()) == (4336, 1085);
    outcome(
        violations == 0 && fixtures_acc && fixture_f1 && nan_ok && split_ok,
        format!(
            "tie-aware < strict in {violations}/10000 sets; 0.5/0.625 fixture {fixtures_acc}; F1 2/3 fixture {fixture_f1}; NaN as \"/\" {nan_ok}; 5421 -> {}/{}",
            tr.len(),
            te.len()
        ),
    )
}

fn s6_freeze_and_determinism(run: &RecoveryRun) -> Outcome {
    let cfg = recovery_config();
    let mut touched = Vec::new();
    for (k, stage) in Stage::ALL.iter().enumerate() {
        let (before, after) = (&run.snapshots[k], &run.snapshots[k + 1]);
        for id in resolve_freeze(cfg.freeze_plan.get(*stage)).unwrap() {
            if before.tensor(id) != after.tensor(id) {
                touched.push(format!("stage {stage} {}", id.name()));
            }
        }
    }
    let frozen_checked: usize = Stage::ALL
        .iter()
        .map(|s| resolve_freeze(cfg.freeze_plan.get(*s)).unwrap().len())
        .sum();

    let again = recovery_run();
    let same_params =
        again.snapshots.last().unwrap().to_json() == run.snapshots.last().unwrap().to_json();
    let same_history = again.history_csv == run.history_csv;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    run.snapshots.last().unwrap().save(&a).unwrap();
    again.snapshots.last().unwrap().save(&b).unwrap();
    let same_files = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

    let small = &recovery_spec(60);
    let (items, _) = generate_synthetic(small).unwrap();
    let (p1, h1) = train_all(&items, &small.taxonomy, &recovery_config()).unwrap();
    let (p2, h2) = train_all(&items, &small.taxonomy, &recovery_config()).unwrap();
    let small_same = p1.to_json() == p2.to_json() && h1.to_csv() == h2.to_csv();

    outcome(
        touched.is_empty() && same_params && same_history && same_files && small_same,
        format!(
            "{frozen_checked} frozen tensor-stages checked, {} modified; identical params file {same_files}, history CSV {same_history}",
            touched.len()
        ),
    )
}

fn s7_verbal_scale() -> Outcome {
    let mut ok = true;
    for (i, word) in VERBAL_SCALE.iter().enumerate() {
        match map_verbal_rating(word) {
            Ok((rank, q)) => ok &= rank as usize == i + 1 && (q == Quality::Good) == (rank >= 6),
            Err(_) => ok = false,
        }
    }
    let rejected = ["Superb", "Fair", "", "Very Very Good"]
        .iter()
        .all(|w| map_verbal_rating(w).is_err());
    outcome(
        ok && rejected,
        format!("10 words -> ranks 1..10 with good iff rank >= 6: {ok}; unknown words rejected: {rejected}"),
    )
}

fn s8_generator_self_consistency() -> Outcome {
    let mut spec = recovery_spec(2000);
    spec.label_noise_sd = 0.0;
    let (items, teacher) = generate_synthetic(&spec).unwrap();
    let t: &Taxonomy = &spec.taxonomy;
    let (mut agree, mut total) = (0usize, 0usize);
    for item in &items {
        let s = teacher
            .score_pair(&item.feature_a, &item.feature_b, t, 0.0)
            .unwrap();
        let labels = std::iter::once(match item.overall_pref.unwrap() {
            OverallVerdict::A => Some(Preference::A),
            OverallVerdict::B => Some(Preference::B),
            OverallVerdict::Tie => None,
        })
        .zip(std::iter::once(s.overall_pref))
        .chain(
            item.aspect_prefs
                .0
                .iter()
                .zip(&s.aspect_prefs)
                .map(|(v, p)| {
                    let l = match v.unwrap() {
                        AspectVerdict::A => Some(Preference::A),
                        AspectVerdict::B => Some(Preference::B),
                        AspectVerdict::Same => None,
                    };
                    (l, *p)
                }),
        );
        for (label, pred) in labels {
            if let Some(l) = label {
                total += 1;
                agree += usize::from(l == pred);
            }
        }
    }
    outcome(
        agree == total && total > 0,
        format!("{agree}/{total} non-tie overall and aspect labels reproduced"),
    )
}

fn main() {
    let started = std::time::Instant::now();
    let run = recovery_run();
    let results = [
        ("S-1", "teacher recovery", s1_teacher_recovery(&run)),
        ("S-2", "gradient exactness", s2_gradient_exactness()),
        (
            "S-3",
            "simplex and decomposition",
            s3_simplex_and_decomposition(),
        ),
        ("S-4", "loss closed forms", s4_loss_closed_forms()),
        ("S-5", "metric identities", s5_metric_identities()),
        (
            "S-6",
            "freeze and determinism",
            s6_freeze_and_determinism(&run),
        ),
        ("S-7", "verbal scale mapping", s7_verbal_scale()),
        (
            "S-8",
            "generator self-consistency",
            s8_generator_self_consistency(),
        ),
    ];
    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "{id} {name:<28} {}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
