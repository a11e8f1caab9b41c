//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or validation error.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, header_path, load_dataset_for, sample_teacher, save_dataset_with_header,
    split, DatasetHeader, SyntheticSpec,
};
use crate::eval::{evaluate_judge_file, evaluate_model_threaded, AverageLabel, EvalReport};
use crate::gradients::{finite_diff_compare, loss_gradient, DEFAULT_FD_STEP, DEFAULT_PARAM_CAP};
use crate::head::{FeatureVector, RewardHeadParams, TensorId};
use crate::losses::Stage;
use crate::taxonomy::{default_taxonomy, Taxonomy};
use crate::trainer::{
    derive_seed, init_for, parse_stage_weights, train_from, TrainConfig, SEED_SPLIT,
};

const SEED_TEACHER: u64 = 4;
const SEED_DATA: u64 = 5;
const SEED_GRADCHECK: u64 = 6;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "moe-reward",
    version,
    about = "Mixture-of-experts reward head toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON training config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    tie_eps: Option<f64>,
    /// Taxonomy JSON. Defaults to the dataset header's taxonomy, else the built-in one.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Three-stage training with a held-out 4:1 evaluation.
    Train(TrainArgs),
    /// Evaluate saved parameters on a labeled dataset.
    Eval(EvalArgs),
    /// Score feature vectors, one JSON object per line.
    Score(ScoreArgs),
    /// Generate a planted-teacher dataset.
    GenSynth(GenArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradArgs),
    /// Evaluate external judge ratings against a labeled dataset.
    JudgeEval(JudgeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    aspect_width: Option<usize>,
    #[arg(long)]
    criteria_width: Option<usize>,
    /// STAGE:L1,L2,L3, repeatable.
    #[arg(long)]
    stage_weights: Vec<String>,
    #[arg(long, value_enum, default_value_t = AverageArg::Exclude)]
    average: AverageArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AverageArg::Exclude)]
    average: AverageArg,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    params: PathBuf,
    /// JSONL of `{"id": ..., "feature": [...]}`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 0.05)]
    label_noise_sd: f64,
    #[arg(long, default_value_t = 0.05)]
    tie_band: f64,
    #[arg(long)]
    teacher_seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, default_value_t = crate::head::DEFAULT_GATE_WIDTH)]
    aspect_width: usize,
    #[arg(long, default_value_t = crate::head::DEFAULT_GATE_WIDTH)]
    criteria_width: usize,
    /// Where to write the teacher parameters.
    #[arg(long)]
    teacher_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Debug, Args)]
struct GradArgs {
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    stage: StageArg,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    aspects: usize,
    #[arg(long, default_value_t = 2)]
    per_aspect: usize,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    step: f64,
    #[arg(long, default_value_t = DEFAULT_PARAM_CAP)]
    max_params: usize,
    /// Corrupt one analytic gradient entry before comparing.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct JudgeArgs {
    #[arg(long)]
    judge: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AverageArg::Exclude)]
    average: AverageArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AverageArg {
    Exclude,
    Good,
    Bad,
}

impl From<AverageArg> for AverageLabel {
    fn from(a: AverageArg) -> Self {
        match a {
            AverageArg::Exclude => AverageLabel::Exclude,
            AverageArg::Good => AverageLabel::AsGood,
            AverageArg::Bad => AverageLabel::AsBad,
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let c = &cli.common;
    match &cli.command {
        Command::Train(a) => cmd_train(c, a),
        Command::Eval(a) => cmd_eval(c, a),
        Command::Score(a) => cmd_score(c, a),
        Command::GenSynth(a) => cmd_gen_synth(c, a),
        Command::Gradcheck(a) => cmd_gradcheck(c, a),
        Command::JudgeEval(a) => cmd_judge_eval(c, a),
    }
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}

fn load_taxonomy_file(path: &Path) -> anyhow::Result<Taxonomy> {
    require_file(path)?;
    let json =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&json).with_context(|| format!("parsing taxonomy {}", path.display()))
}

/// Taxonomy from the flag, else the dataset header, else the default.
fn resolve_taxonomy(c: &Common, data: Option<&Path>) -> anyhow::Result<Taxonomy> {
    if let Some(p) = &c.taxonomy {
        return load_taxonomy_file(p);
    }
    if let Some(hp) = data.map(header_path).filter(|p| p.is_file()) {
        let json =
            std::fs::read_to_string(&hp).with_context(|| format!("reading {}", hp.display()))?;
        let header: DatasetHeader =
            serde_json::from_str(&json).with_context(|| format!("parsing {}", hp.display()))?;
        return Ok(header.taxonomy);
    }
    Ok(default_taxonomy())
}

fn load_data(path: &Path, t: &Taxonomy) -> anyhow::Result<Vec<crate::data::AnnotatedPair>> {
    require_file(path)?;
    load_dataset_for(path, t).with_context(|| format!("loading {}", path.display()))
}

fn load_params(path: &Path, t: &Taxonomy) -> anyhow::Result<RewardHeadParams> {
    require_file(path)?;
    RewardHeadParams::load(path, t).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn pretty<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn effective_config(c: &Common, a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::from_json_file(p).with_context(|| format!("loading {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.threads {
        cfg.threads = v.max(1);
    }
    if let Some(v) = c.tie_eps {
        cfg.tie_eps = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs_per_stage = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.optimizer.weight_decay = v;
    }
    if let Some(v) = a.aspect_width {
        cfg.aspect_width = v;
    }
    if let Some(v) = a.criteria_width {
        cfg.criteria_width = v;
    }
    for s in &a.stage_weights {
        let (stage, w) = parse_stage_weights(s)?;
        *cfg.stage_weights.get_mut(stage) = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    data: String,
    taxonomy_hash: String,
    n_items: usize,
    n_train: usize,
    n_test: usize,
    split_seed: u64,
    config: &'a TrainConfig,
}

fn cmd_train(c: &Common, a: &TrainArgs) -> anyhow::Result<i32> {
    let cfg = effective_config(c, a)?;
    let t = resolve_taxonomy(c, Some(&a.data))?;
    let items = load_data(&a.data, &t)?;
    if items.is_empty() {
        bail!("dataset {} is empty", a.data.display());
    }
    let split_seed = derive_seed(cfg.seed, SEED_SPLIT);
    let (train, test) = split(&items, 4, 1, split_seed)?;
    if train.is_empty() {
        bail!("training split of {} is empty", a.data.display());
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let manifest = RunManifest {
        data: a.data.display().to_string(),
        taxonomy_hash: t.hash(),
        n_items: items.len(),
        n_train: train.len(),
        n_test: test.len(),
        split_seed,
        config: &cfg,
    };
    write_file(&a.out.join("manifest.json"), pretty(&manifest)?)?;

    let mut params = init_for(train[0].feature_a.dim(), &t, &cfg)?;
    let out = a.out.clone();
    let history = train_from(&train, &mut params, &t, &cfg, |stage, p| {
        p.save(out.join(format!("params_stage{}.json", stage.number())))
    })?;
    write_file(&a.out.join("history.csv"), history.to_csv())?;
    write_file(&a.out.join("summary.json"), pretty(&history.summary())?)?;

    if test.is_empty() {
        eprintln!("held-out split is empty; no evaluation report written");
    } else {
        let report = evaluate_model_threaded(
            &params,
            &test,
            &t,
            cfg.tie_eps,
            a.average.into(),
            cfg.threads,
        )?;
        write_file(&a.out.join("eval.json"), pretty(&report)?)?;
        write_file(&a.out.join("eval.csv"), report.to_csv())?;
        print!("{}", report.to_table());
    }
    Ok(0)
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", report.to_table());
    if let Some(p) = out {
        write_file(p, pretty(report)?)?;
    }
    Ok(())
}

fn cmd_eval(c: &Common, a: &EvalArgs) -> anyhow::Result<i32> {
    let t = resolve_taxonomy(c, Some(&a.data))?;
    let params = load_params(&a.params, &t)?;
    let items = load_data(&a.data, &t)?;
    let tie_eps = c.tie_eps.unwrap_or(crate::head::DEFAULT_TIE_EPS);
    let report = evaluate_model_threaded(
        &params,
        &items,
        &t,
        tie_eps,
        a.average.into(),
        c.threads.unwrap_or(1).max(1),
    )?;
    emit_report(&report, a.out.as_deref())?;
    Ok(0)
}

#[derive(Deserialize)]
struct FeatureRecord {
    id: String,
    feature: FeatureVector,
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    id: &'a str,
    ar: &'a [f64],
    c: &'a [f64],
    aspect_sums: &'a [f64],
    os: f64,
}

fn cmd_score(c: &Common, a: &ScoreArgs) -> anyhow::Result<i32> {
    let t = resolve_taxonomy(c, None)?;
    let params = load_params(&a.params, &t)?;
    require_file(&a.features)?;
    let file =
        File::open(&a.features).with_context(|| format!("opening {}", a.features.display()))?;
    let out = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(out);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(&line)
            .map_err(|e| anyhow!("{} line {}: {e}", a.features.display(), i + 1))?;
        let o = params
            .forward(&rec.feature, &t)
            .with_context(|| format!("{} line {}", a.features.display(), i + 1))?;
        serde_json::to_writer(
            &mut w,
            &ScoreRecord {
                id: &rec.id,
                ar: &o.ar,
                c: &o.c,
                aspect_sums: &o.aspect_sums,
                os: o.os,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(0)
}

fn cmd_gen_synth(c: &Common, a: &GenArgs) -> anyhow::Result<i32> {
    let t = resolve_taxonomy(c, None)?;
    let seed = c.seed.unwrap_or(0);
    let mut spec = SyntheticSpec::new(a.d, t.clone(), a.n);
    spec.teacher_seed = a
        .teacher_seed
        .unwrap_or_else(|| derive_seed(seed, SEED_TEACHER));
    spec.data_seed = a.data_seed.unwrap_or_else(|| derive_seed(seed, SEED_DATA));
    spec.label_noise_sd = a.label_noise_sd;
    spec.tie_band = a.tie_band;
    spec.aspect_width = a.aspect_width;
    spec.criteria_width = a.criteria_width;
    let (items, teacher) = generate_synthetic(&spec)?;
    save_dataset_with_header(&a.out, &items, &t)?;
    if let Some(p) = &a.teacher_out {
        teacher.save(p)?;
    }
    Ok(0)
}

fn cmd_gradcheck(c: &Common, a: &GradArgs) -> anyhow::Result<i32> {
    let t = match &c.taxonomy {
        Some(p) => load_taxonomy_file(p)?,
        None => Taxonomy::uniform(a.aspects, a.per_aspect)?,
    };
    let seed = derive_seed(c.seed.unwrap_or(0), SEED_GRADCHECK);
    // Random instance: a sampled teacher (nonzero gate outputs) as the point,
    // and a small dataset labeled by an unrelated teacher.
    let mut spec = SyntheticSpec::new(a.d, t.clone(), a.batch);
    spec.aspect_width = a.width;
    spec.criteria_width = a.width;
    spec.teacher_seed = seed;
    spec.data_seed = seed.wrapping_add(1);
    let params = sample_teacher(&spec)?;
    if params.num_parameters() > a.max_params {
        bail!(
            "refusing finite-difference check: {} parameters exceed the cap of {}",
            params.num_parameters(),
            a.max_params
        );
    }
    spec.teacher_seed = seed.wrapping_add(2);
    let (batch, _) = generate_synthetic(&spec)?;

    let stages: Vec<Stage> = match a.stage {
        StageArg::One => vec![Stage::One],
        StageArg::Two => vec![Stage::Two],
        StageArg::Three => vec![Stage::Three],
        StageArg::All => Stage::ALL.to_vec(),
    };
    let mut ok = true;
    for stage in stages {
        let w = crate::losses::StageWeights::default_for(stage);
        let (_, mut g) = loss_gradient(stage, &params, &batch, &t, &w)?;
        if a.inject_fault {
            g.tensor_mut(TensorId::ScoreBias).data[0] += 1.0;
        }
        let r = finite_diff_compare(stage, &params, &batch, &t, &w, &g, a.step, a.max_params)?;
        let pass = r.max_rel_err <= GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "stage {}: max_rel_err {:.3e} max_abs_err {:.3e} checked {} worst {} {}",
            r.stage,
            r.max_rel_err,
            r.max_abs_err,
            r.checked,
            r.worst_tensor.as_deref().unwrap_or("-"),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { 0 } else { 1 })
}

fn cmd_judge_eval(c: &Common, a: &JudgeArgs) -> anyhow::Result<i32> {
    let t = resolve_taxonomy(c, Some(&a.data))?;
    let items = load_data(&a.data, &t)?;
    require_file(&a.judge)?;
    let report = evaluate_judge_file(&a.judge, &items, &t, a.average.into())
        .with_context(|| format!("evaluating {}", a.judge.display()))?;
    emit_report(&report, a.out.as_deref())?;
    Ok(0)
}
