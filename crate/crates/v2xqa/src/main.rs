//! Pipeline driver: fixtures -> split -> render -> eval/train -> score ->
//! diagnose -> calibrate -> report. Every command reads and writes fixed
//! file names under one run directory and records a manifest with the
//! sha-256 of each input artifact, so reruns are byte-comparable and
//! tampering is detectable.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use v2xqa::clients::{mock_oracle, query_remote_batch, ModelEndpoint, RandomResponder, TransportStatus};
use v2xqa::corpus::{
    build_samples, evidence_tokens, gen_fixtures, make_split, read_jsonl, sample_row, scene_map,
    write_jsonl, DatasetSplit, FixtureConfig, McqaSample, SampleRow, SceneRecord,
};
use v2xqa::metrics::{
    answer_distribution, reliability_export, score, CalibrationReport, DistributionStats,
    ResultRow, ScoreTable, DEFAULT_BINS,
};
use v2xqa::micromoe::net::predict_sample;
use v2xqa::micromoe::train::{train, TrainConfig};
use v2xqa::micromoe::{MicroMoeModel, ModelConfig};
use v2xqa::protocol::{parse_answer, render_prompt, ParseOutcome, ParsedAnswer, PromptBundle};
use v2xqa::taskbank::{load_task_bank, TaskBank, TaskId, ViewpointGroup};

const SCENES_FILE: &str = "scenes.jsonl";
const SAMPLES_FILE: &str = "samples.jsonl";
const SPLIT_FILE: &str = "split.json";
const PROMPTS_FILE: &str = "prompts.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const TRAIN_LOG_FILE: &str = "train_log.json";
const RESULTS_FILE: &str = "results.jsonl";
const SCORES_FILE: &str = "scores.json";
const SCORES_CSV: &str = "scores.csv";
const DIAGNOSTICS_FILE: &str = "diagnostics.json";
const CALIBRATION_FILE: &str = "calibration.json";
const CALIBRATION_CSV: &str = "calibration.csv";
const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Scale {
    /// 600 scenes / 530 paired.
    Desk,
    /// Full scale: 6,000 scenes / 5,304 paired.
    Full,
}

impl Scale {
    fn counts(self) -> (usize, usize) {
        match self {
            Scale::Desk => (600, 530),
            Scale::Full => (6_000, 5_304),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrainProfile {
    /// Stage schedule tuned for the desk-scale model.
    Desk,
    /// Reference schedule sized for a large backbone.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalModel {
    Mock,
    Random,
    Micro,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Train,
    Test,
}

/// File-backed run configuration; every field has a default and every field
/// is overridable by a command-line flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    out_dir: PathBuf,
    seed: u64,
    scale: Scale,
    /// Explicit scene counts override the scale preset.
    n_scenes: Option<usize>,
    n_paired: Option<usize>,
    test_frac: f64,
    bins: usize,
    views: Option<Vec<String>>,
    tasks: Option<Vec<String>>,
    train_profile: TrainProfile,
    endpoint: Option<ModelEndpoint>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            out_dir: PathBuf::from("run"),
            seed: 42,
            scale: Scale::Desk,
            n_scenes: None,
            n_paired: None,
            test_frac: 0.10,
            bins: DEFAULT_BINS,
            views: None,
            tasks: None,
            train_profile: TrainProfile::Desk,
            endpoint: None,
        }
    }
}

impl RunConfig {
    fn counts(&self) -> (usize, usize) {
        let (s, p) = self.scale.counts();
        (self.n_scenes.unwrap_or(s), self.n_paired.unwrap_or(p))
    }

    fn view_filter(&self) -> anyhow::Result<Option<Vec<ViewpointGroup>>> {
        match &self.views {
            None => Ok(None),
            Some(vs) if vs.iter().any(|v| v.eq_ignore_ascii_case("all")) => Ok(None),
            Some(vs) => vs
                .iter()
                .map(|v| v.parse().map_err(|_| anyhow::anyhow!("unknown view: {v}")))
                .collect::<anyhow::Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn task_filter(&self) -> anyhow::Result<Option<Vec<TaskId>>> {
        match &self.tasks {
            None => Ok(None),
            Some(ts) => ts
                .iter()
                .map(|t| t.parse().map_err(|_| anyhow::anyhow!("unknown task: {t}")))
                .collect::<anyhow::Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn train_config(&self) -> TrainConfig {
        let mut cfg = match self.train_profile {
            TrainProfile::Desk => TrainConfig::desk(),
            TrainProfile::Reference => TrainConfig::default(),
        };
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Parser)]
#[command(name = "v2xqa", version, about = "View-decoupled MCQA benchmark pipeline")]
struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Chat-completion endpoint base URL (remote evaluation).
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Comma-separated view groups (VS,IS,CO) or "all".
    #[arg(long, global = true, value_delimiter = ',')]
    views: Option<Vec<String>>,
    /// Comma-separated task ids (for example VS1,CO3).
    #[arg(long, global = true, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// Confidence bin count for calibration.
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Run directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes and the MCQA sample set.
    Fixtures,
    /// Build the pair-consistent train/test split.
    Split,
    /// Render benchmark prompts for the (filtered) samples.
    Render,
    /// Evaluate a model over the samples and write result rows.
    Eval {
        #[arg(long, value_enum, default_value = "mock")]
        model: EvalModel,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
    },
    /// Train the micro mixture-of-experts model on the train split.
    Train {
        #[arg(long, value_enum)]
        profile: Option<TrainProfile>,
    },
    /// Score result rows into per-task/per-view accuracy tables.
    Score,
    /// Gold-position distribution diagnostics over the sample set.
    Diagnose,
    /// Calibration analysis (reliability bins, ECE, Brier) of result rows.
    Calibrate,
    /// Aggregate scores, diagnostics, and calibration into report.md.
    Report,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    tool_version: String,
    seed: u64,
    /// sha-256 of every input artifact consumed by the command.
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    params: serde_json::Value,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    inputs: &[&str],
    outputs: &[&str],
    params: serde_json::Value,
) -> anyhow::Result<()> {
    let mut input_hashes = BTreeMap::new();
    for name in inputs {
        input_hashes.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        inputs: input_hashes,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        params,
    };
    let manifest_dir = dir.join("manifest");
    std::fs::create_dir_all(&manifest_dir)?;
    std::fs::write(
        manifest_dir.join(format!("{command}.json")),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

fn load_scenes(dir: &Path) -> anyhow::Result<Vec<SceneRecord>> {
    read_jsonl(&dir.join(SCENES_FILE)).with_context(|| format!("run `fixtures` first ({SCENES_FILE} missing?)"))
}

fn load_samples(dir: &Path) -> anyhow::Result<Vec<McqaSample>> {
    let rows: Vec<SampleRow> =
        read_jsonl(&dir.join(SAMPLES_FILE)).with_context(|| format!("run `fixtures` first ({SAMPLES_FILE} missing?)"))?;
    Ok(rows
        .into_iter()
        .map(|r| McqaSample {
            sample_id: r.sample_id,
            scene_id: r.scene_id,
            view: r.view,
            task_id: r.task_id,
            qid: r.qid,
            option_order: r.option_order,
            gold_letter: r.gold_letter,
        })
        .collect())
}

fn load_split(dir: &Path) -> anyhow::Result<DatasetSplit> {
    let bytes = std::fs::read(dir.join(SPLIT_FILE)).with_context(|| format!("run `split` first ({SPLIT_FILE} missing?)"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_results(dir: &Path) -> anyhow::Result<Vec<ResultRow>> {
    read_jsonl(&dir.join(RESULTS_FILE)).with_context(|| format!("run `eval` first ({RESULTS_FILE} missing?)"))
}

fn filtered<'a>(
    samples: &'a [McqaSample],
    cfg: &RunConfig,
) -> anyhow::Result<Vec<&'a McqaSample>> {
    let views = cfg.view_filter()?;
    let tasks = cfg.task_filter()?;
    Ok(samples
        .iter()
        .filter(|s| views.as_ref().is_none_or(|v| v.contains(&s.view)))
        .filter(|s| tasks.as_ref().is_none_or(|t| t.contains(&s.task_id)))
        .collect())
}

fn cmd_fixtures(cfg: &RunConfig, bank: &TaskBank) -> anyhow::Result<()> {
    let (n_scenes, n_paired) = cfg.counts();
    let scenes = gen_fixtures(n_scenes, n_paired, cfg.seed, &FixtureConfig::default())?;
    let samples = build_samples(&scenes, bank, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_jsonl(&cfg.out_dir.join(SCENES_FILE), &scenes)?;
    let by_id = scene_map(&scenes);
    let rows: Vec<SampleRow> = samples
        .iter()
        .map(|s| sample_row(s, bank, by_id[&s.scene_id]))
        .collect::<v2xqa::Result<_>>()?;
    write_jsonl(&cfg.out_dir.join(SAMPLES_FILE), &rows)?;
    write_manifest(
        &cfg.out_dir,
        "fixtures",
        cfg.seed,
        &[],
        &[SCENES_FILE, SAMPLES_FILE],
        serde_json::json!({
            "n_scenes": n_scenes,
            "n_paired": n_paired,
            "n_samples": samples.len(),
        }),
    )?;
    println!("wrote {} scenes and {} samples", scenes.len(), samples.len());
    Ok(())
}

fn cmd_split(cfg: &RunConfig) -> anyhow::Result<()> {
    let scenes = load_scenes(&cfg.out_dir)?;
    let samples = load_samples(&cfg.out_dir)?;
    let split = make_split(&samples, &scenes, cfg.test_frac, cfg.seed)?;
    std::fs::write(cfg.out_dir.join(SPLIT_FILE), serde_json::to_vec_pretty(&split)?)?;
    let mut per_view_test = BTreeMap::new();
    for view in ViewpointGroup::ALL {
        let n = samples
            .iter()
            .filter(|s| s.view == view && split.is_test(s.scene_id))
            .count();
        per_view_test.insert(view.to_string(), n);
    }
    write_manifest(
        &cfg.out_dir,
        "split",
        cfg.seed,
        &[SCENES_FILE, SAMPLES_FILE],
        &[SPLIT_FILE],
        serde_json::json!({
            "test_frac": cfg.test_frac,
            "test_scenes": split.test_scene_ids.len(),
            "test_samples_per_view": per_view_test,
        }),
    )?;
    println!("split: {} test scenes, per-view test samples {per_view_test:?}", split.test_scene_ids.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptRow {
    sample_id: u64,
    #[serde(flatten)]
    bundle: PromptBundle,
}

fn cmd_render(cfg: &RunConfig, bank: &TaskBank) -> anyhow::Result<()> {
    let samples = load_samples(&cfg.out_dir)?;
    let selected = filtered(&samples, cfg)?;
    let rows: Vec<PromptRow> = selected
        .iter()
        .map(|s| {
            render_prompt(s, bank).map(|bundle| PromptRow {
                sample_id: s.sample_id,
                bundle,
            })
        })
        .collect::<v2xqa::Result<_>>()?;
    write_jsonl(&cfg.out_dir.join(PROMPTS_FILE), &rows)?;
    write_manifest(
        &cfg.out_dir,
        "render",
        cfg.seed,
        &[SAMPLES_FILE],
        &[PROMPTS_FILE],
        serde_json::json!({ "n_prompts": rows.len() }),
    )?;
    println!("rendered {} prompts", rows.len());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, bank: &TaskBank, profile: Option<TrainProfile>) -> anyhow::Result<()> {
    let scenes = load_scenes(&cfg.out_dir)?;
    let samples = load_samples(&cfg.out_dir)?;
    let split = load_split(&cfg.out_dir)?;
    let by_id = scene_map(&scenes);
    let train_samples: Vec<McqaSample> = samples
        .iter()
        .filter(|s| !split.is_test(s.scene_id))
        .cloned()
        .collect();
    let mut run_cfg = cfg.clone();
    if let Some(p) = profile {
        run_cfg.train_profile = p;
    }
    let train_cfg = run_cfg.train_config();
    let tokenizer = v2xqa::micromoe::tokenizer::Tokenizer::from_bank(bank);
    let mut model = MicroMoeModel::new(ModelConfig::desk(tokenizer.vocab_size()), bank, cfg.seed)?;
    let log = train(&mut model, &train_samples, &by_id, bank, &train_cfg)?;
    model.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    std::fs::write(cfg.out_dir.join(TRAIN_LOG_FILE), serde_json::to_vec_pretty(&log)?)?;
    write_manifest(
        &cfg.out_dir,
        "train",
        cfg.seed,
        &[SCENES_FILE, SAMPLES_FILE, SPLIT_FILE],
        &[CHECKPOINT_FILE, TRAIN_LOG_FILE],
        serde_json::json!({
            "optimizer": "adamw (decoupled weight decay, linear warmup then constant)",
            "profile": run_cfg.train_profile,
            "train_config": train_cfg,
            "n_train_samples": train_samples.len(),
        }),
    )?;
    for s in &log.stages {
        println!("stage {}: {} steps, epoch losses {:?}", s.name, s.steps, s.epoch_mean_loss);
    }
    Ok(())
}

fn one_hot(letter: v2xqa::taskbank::OptionLetter) -> [f64; 4] {
    let mut p = [0.0; 4];
    p[letter.index()] = 1.0;
    p
}

fn cmd_eval(cfg: &RunConfig, bank: &TaskBank, model: EvalModel, subset: Subset) -> anyhow::Result<()> {
    let scenes = load_scenes(&cfg.out_dir)?;
    let samples = load_samples(&cfg.out_dir)?;
    let by_id = scene_map(&scenes);
    let split = match subset {
        Subset::All => None,
        _ => Some(load_split(&cfg.out_dir)?),
    };
    let selected: Vec<&McqaSample> = filtered(&samples, cfg)?
        .into_iter()
        .filter(|s| match (subset, &split) {
            (Subset::All, _) => true,
            (Subset::Train, Some(sp)) => !sp.is_test(s.scene_id),
            (Subset::Test, Some(sp)) => sp.is_test(s.scene_id),
            _ => unreachable!(),
        })
        .collect();
    if selected.is_empty() {
        bail!("no samples selected for evaluation");
    }

    let mut rows: Vec<ResultRow> = Vec::with_capacity(selected.len());
    let mut inputs: Vec<&str> = vec![SCENES_FILE, SAMPLES_FILE];
    if split.is_some() {
        inputs.push(SPLIT_FILE);
    }
    match model {
        EvalModel::Mock => {
            for s in &selected {
                let letter = mock_oracle(s, &by_id)?;
                rows.push(ResultRow::new(
                    s.sample_id,
                    s.view,
                    s.task_id,
                    s.qid.clone(),
                    s.gold_letter,
                    parse_answer(letter.as_str()),
                    Some(one_hot(letter)),
                ));
            }
        }
        EvalModel::Random => {
            let mut responder = RandomResponder::new(cfg.seed);
            for s in &selected {
                let letter = responder.next_letter();
                rows.push(ResultRow::new(
                    s.sample_id,
                    s.view,
                    s.task_id,
                    s.qid.clone(),
                    s.gold_letter,
                    parse_answer(letter.as_str()),
                    Some([0.25; 4]),
                ));
            }
        }
        EvalModel::Micro => {
            inputs.push(CHECKPOINT_FILE);
            let model = MicroMoeModel::load(&cfg.out_dir.join(CHECKPOINT_FILE), bank)
                .context("run `train` first")?;
            for s in &selected {
                let ev = evidence_tokens(by_id[&s.scene_id], s.view, None)?;
                let (text, probs) = predict_sample(&model, s, bank, &ev)?;
                rows.push(ResultRow::new(
                    s.sample_id,
                    s.view,
                    s.task_id,
                    s.qid.clone(),
                    s.gold_letter,
                    parse_answer(&text),
                    Some(probs),
                ));
            }
        }
        EvalModel::Remote => {
            let endpoint = cfg
                .endpoint
                .clone()
                .context("remote evaluation needs an endpoint (config [endpoint] or --endpoint)")?;
            let items: Vec<(u64, PromptBundle, Vec<String>)> = selected
                .iter()
                .map(|s| {
                    let bundle = render_prompt(s, bank)?;
                    let ev = evidence_tokens(by_id[&s.scene_id], s.view, None)?;
                    Ok((s.sample_id, bundle, ev))
                })
                .collect::<v2xqa::Result<_>>()?;
            let replies = query_remote_batch(&endpoint, &items)?;
            let mut transport_failures = 0usize;
            for s in &selected {
                let reply = &replies[&s.sample_id];
                if reply.transport_status != TransportStatus::Ok {
                    transport_failures += 1;
                }
                let predicted = match &reply.raw_text {
                    Some(text) => parse_answer(text),
                    None => ParsedAnswer {
                        outcome: ParseOutcome::Invalid,
                        raw_text: format!("<transport:{:?}>", reply.transport_status),
                    },
                };
                rows.push(ResultRow::new(
                    s.sample_id,
                    s.view,
                    s.task_id,
                    s.qid.clone(),
                    s.gold_letter,
                    predicted,
                    None,
                ));
            }
            if transport_failures > 0 {
                eprintln!("warning: {transport_failures} transport failures recorded as Invalid");
            }
        }
    }

    write_jsonl(&cfg.out_dir.join(RESULTS_FILE), &rows)?;
    write_manifest(
        &cfg.out_dir,
        "eval",
        cfg.seed,
        &inputs,
        &[RESULTS_FILE],
        serde_json::json!({
            "model": format!("{model:?}").to_lowercase(),
            "subset": format!("{subset:?}").to_lowercase(),
            "n_rows": rows.len(),
            "endpoint": cfg.endpoint.as_ref().map(|e| e.base_url.clone()),
            "evidence_inlined": matches!(model, EvalModel::Remote),
        }),
    )?;
    println!("evaluated {} samples", rows.len());
    Ok(())
}

fn cmd_score(cfg: &RunConfig) -> anyhow::Result<()> {
    let rows = load_results(&cfg.out_dir)?;
    let table = score(&rows)?;
    std::fs::write(cfg.out_dir.join(SCORES_FILE), serde_json::to_vec_pretty(&table)?)?;
    let mut csv = String::from("kind,name,value\n");
    for (task, acc) in &table.per_task {
        csv.push_str(&format!("task,{task},{acc}\n"));
    }
    for (view, acc) in &table.per_view {
        csv.push_str(&format!("view,{view},{acc}\n"));
    }
    csv.push_str(&format!("overall,,{}\n", table.overall));
    csv.push_str(&format!("invalid_rate,,{}\n", table.invalid_rate));
    std::fs::write(cfg.out_dir.join(SCORES_CSV), csv)?;
    write_manifest(
        &cfg.out_dir,
        "score",
        cfg.seed,
        &[RESULTS_FILE],
        &[SCORES_FILE, SCORES_CSV],
        serde_json::json!({ "n_rows": table.n }),
    )?;
    println!("overall accuracy {:.4} over {} rows", table.overall, table.n);
    Ok(())
}

fn cmd_diagnose(cfg: &RunConfig) -> anyhow::Result<()> {
    let samples = load_samples(&cfg.out_dir)?;
    let selected = filtered(&samples, cfg)?;
    let stats = answer_distribution(selected.iter().map(|s| (s.task_id, s.gold_letter)));
    std::fs::write(cfg.out_dir.join(DIAGNOSTICS_FILE), serde_json::to_vec_pretty(&stats)?)?;
    write_manifest(
        &cfg.out_dir,
        "diagnose",
        cfg.seed,
        &[SAMPLES_FILE],
        &[DIAGNOSTICS_FILE],
        serde_json::json!({ "n_samples": selected.len() }),
    )?;
    println!("diagnosed {} samples across {} tasks", selected.len(), stats.per_task.len());
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let rows = load_results(&cfg.out_dir)?;
    let report = reliability_export(&rows, cfg.bins)?;
    std::fs::write(cfg.out_dir.join(CALIBRATION_FILE), serde_json::to_vec_pretty(&report)?)?;
    let mut csv = String::from("bin_center,count,mean_confidence,accuracy\n");
    for b in &report.bins {
        csv.push_str(&format!("{},{},{},{}\n", b.center, b.count, b.mean_confidence, b.accuracy));
    }
    std::fs::write(cfg.out_dir.join(CALIBRATION_CSV), csv)?;
    write_manifest(
        &cfg.out_dir,
        "calibrate",
        cfg.seed,
        &[RESULTS_FILE],
        &[CALIBRATION_FILE, CALIBRATION_CSV],
        serde_json::json!({ "bins": cfg.bins, "ece": report.ece, "brier": report.brier }),
    )?;
    println!("ECE {:.4} Brier {:.4} over {} rows", report.ece, report.brier, report.n);
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = &cfg.out_dir;
    let scores: ScoreTable =
        serde_json::from_slice(&std::fs::read(dir.join(SCORES_FILE)).context("run `score` first")?)?;
    let diagnostics: Option<DistributionStats> = std::fs::read(dir.join(DIAGNOSTICS_FILE))
        .ok()
        .map(|b| serde_json::from_slice(&b))
        .transpose()?;
    let calibration: Option<CalibrationReport> = std::fs::read(dir.join(CALIBRATION_FILE))
        .ok()
        .map(|b| serde_json::from_slice(&b))
        .transpose()?;

    let mut md = String::new();
    md.push_str("# Benchmark report\n\n");
    md.push_str(&format!("Seed: {}. Rows scored: {}.\n\n", cfg.seed, scores.n));

    md.push_str("## Accuracy\n\n");
    md.push_str("| Task | Accuracy |\n|---|---|\n");
    for (task, acc) in &scores.per_task {
        md.push_str(&format!("| {task} | {acc:.4} |\n"));
    }
    md.push('\n');
    md.push_str("| View | Average |\n|---|---|\n");
    for (view, acc) in &scores.per_view {
        md.push_str(&format!("| {view} | {acc:.4} |\n"));
    }
    md.push_str(&format!(
        "\nOverall accuracy: {:.4}. Invalid rate: {:.4}.\n\n",
        scores.overall, scores.invalid_rate
    ));

    if let Some(d) = &diagnostics {
        md.push_str("## Answer distribution\n\n");
        md.push_str("| Task | A | B | C | D | Majority ratio | Entropy (bits) |\n|---|---|---|---|---|---|---|\n");
        for (task, t) in &d.per_task {
            md.push_str(&format!(
                "| {task} | {} | {} | {} | {} | {:.3} | {:.3} |\n",
                t.counts[0], t.counts[1], t.counts[2], t.counts[3], t.majority_ratio, t.entropy_bits
            ));
        }
        md.push('\n');
    }

    if let Some(c) = &calibration {
        md.push_str("## Calibration\n\n");
        md.push_str(&format!(
            "ECE: {:.4}. Brier: {:.4}. Rows: {} ({} invalid excluded). Entropy log base 2.\n\n",
            c.ece, c.brier, c.n, c.n_excluded_invalid
        ));
        md.push_str("| Bin center | Count | Mean confidence | Accuracy |\n|---|---|---|---|\n");
        for b in c.bins.iter().filter(|b| b.count > 0) {
            md.push_str(&format!(
                "| {:.3} | {} | {:.4} | {:.4} |\n",
                b.center, b.count, b.mean_confidence, b.accuracy
            ));
        }
        md.push('\n');
    }

    let mut file = std::fs::File::create(dir.join(REPORT_FILE))?;
    file.write_all(md.as_bytes())?;
    let mut inputs = vec![SCORES_FILE];
    if diagnostics.is_some() {
        inputs.push(DIAGNOSTICS_FILE);
    }
    if calibration.is_some() {
        inputs.push(CALIBRATION_FILE);
    }
    write_manifest(
        dir,
        "report",
        cfg.seed,
        &inputs,
        &[REPORT_FILE],
        serde_json::json!({}),
    )?;
    println!("wrote {}", dir.join(REPORT_FILE).display());
    Ok(())
}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = cli.scale {
        cfg.scale = scale;
        cfg.n_scenes = None;
        cfg.n_paired = None;
    }
    if let Some(url) = &cli.endpoint {
        let mut endpoint = cfg.endpoint.take().unwrap_or(ModelEndpoint {
            base_url: String::new(),
            path: "/v1/chat/completions".into(),
            model_name: "default".into(),
            auth_token_env: None,
            request_timeout_secs: 30.0,
            max_retries: 2,
            backoff_base_secs: 0.5,
            max_concurrency: 4,
            response_text_pointer: "/choices/0/message/content".into(),
        });
        endpoint.base_url = url.clone();
        cfg.endpoint = Some(endpoint);
    }
    if let Some(views) = &cli.views {
        cfg.views = Some(views.clone());
    }
    if let Some(tasks) = &cli.tasks {
        cfg.tasks = Some(tasks.clone());
    }
    if let Some(bins) = cli.bins {
        cfg.bins = bins;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.view_filter()?;
    cfg.task_filter()?;
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let result = (|| -> anyhow::Result<()> {
        let cfg = effective_config(&cli)?;
        let bank = load_task_bank()?;
        match cli.command {
            Command::Fixtures => cmd_fixtures(&cfg, &bank),
            Command::Split => cmd_split(&cfg),
            Command::Render => cmd_render(&cfg, &bank),
            Command::Eval { model, subset } => cmd_eval(&cfg, &bank, model, subset),
            Command::Train { profile } => cmd_train(&cfg, &bank, profile),
            Command::Score => cmd_score(&cfg),
            Command::Diagnose => cmd_diagnose(&cfg),
            Command::Calibrate => cmd_calibrate(&cfg),
            Command::Report => cmd_report(&cfg),
        }
    })();
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
