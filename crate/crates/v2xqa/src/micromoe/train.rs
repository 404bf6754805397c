//! Staged adapter training: a full task-balanced pass over all views, then a
//! cooperative refinement pass, then an infrastructure refinement pass with
//! upweighted reasoning tasks. The backbone is never updated.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{mcqa_loss_and_grad, ExpertGrads};
use super::{route, MicroMoeModel, N_EXPERTS};
use crate::corpus::{evidence_tokens, shuffle_options, McqaSample, SceneRecord};
use crate::taskbank::{TaskBank, TaskId, ViewpointGroup};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_accum: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage_full: StageConfig,
    pub stage_co: StageConfig,
    pub stage_is: StageConfig,
    /// Extra sampling weight for the infrastructure reasoning tasks in the
    /// last stage.
    pub is_focus_upweight: f64,
    pub task_balanced: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            stage_full: StageConfig {
                epochs: 4,
                lr: 1e-4,
                warmup_ratio: 0.03,
                weight_decay: 0.01,
                grad_accum: 8,
            },
            stage_co: StageConfig {
                epochs: 2,
                lr: 5e-5,
                warmup_ratio: 0.05,
                weight_decay: 0.01,
                grad_accum: 8,
            },
            stage_is: StageConfig {
                epochs: 2,
                lr: 5e-5,
                warmup_ratio: 0.05,
                weight_decay: 0.01,
                grad_accum: 8,
            },
            is_focus_upweight: 1.5,
            task_balanced: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Profile for the desk-scale model. The defaults above are sized for a
    /// large backbone; the tiny model trains from scratch through its frozen
    /// circuits and needs a larger step and more passes to converge within
    /// the same wall-clock budget.
    pub fn desk() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.stage_full.epochs = 12;
        cfg.stage_full.lr = 1e-3;
        cfg.stage_co.epochs = 10;
        cfg.stage_co.lr = 1e-3;
        cfg.stage_is.epochs = 2;
        cfg.stage_is.lr = 5e-4;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.stage_full, &self.stage_co, &self.stage_is] {
            if !(s.lr > 0.0) {
                return Err(Error::Model(format!("learning rate {} must be positive", s.lr)));
            }
            if s.grad_accum == 0 {
                return Err(Error::Model("grad_accum must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&s.warmup_ratio) {
                return Err(Error::Model(format!("warmup ratio {} outside [0,1]", s.warmup_ratio)));
            }
        }
        if self.is_focus_upweight < 1.0 {
            return Err(Error::Model("is_focus_upweight must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub steps: usize,
    pub epoch_mean_loss: Vec<f64>,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub stages: Vec<StageLog>,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
}

struct AdamPair {
    ma: Array2<f64>,
    va: Array2<f64>,
    mb: Array2<f64>,
    vb: Array2<f64>,
}

struct AdamState {
    layers: Vec<[AdamPair; 4]>,
    step: u64,
}

impl AdamState {
    fn new(model: &MicroMoeModel) -> AdamState {
        let cfg = &model.config;
        let pair = || AdamPair {
            ma: Array2::zeros((cfg.d_model, cfg.rank)),
            va: Array2::zeros((cfg.d_model, cfg.rank)),
            mb: Array2::zeros((cfg.rank, cfg.d_model)),
            vb: Array2::zeros((cfg.rank, cfg.d_model)),
        };
        AdamState {
            layers: (0..cfg.n_layers).map(|_| [pair(), pair(), pair(), pair()]).collect(),
            step: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adamw_update(
    model: &mut MicroMoeModel,
    expert: usize,
    state: &mut AdamState,
    grads: &ExpertGrads,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    for (l, layer) in model.experts[expert].layers.iter_mut().enumerate() {
        let gl = &grads.layers[l];
        for (p, (pair, g)) in layer.pairs_mut().into_iter().zip(gl.pairs()).enumerate() {
            let st = &mut state.layers[l][p];
            for (w, grad, m, v) in [
                (&mut pair.a, &g.a, &mut st.ma, &mut st.va),
                (&mut pair.b, &g.b, &mut st.mb, &mut st.vb),
            ] {
                azip_update(w, grad, m, v, lr, weight_decay, bc1, bc2);
            }
        }
    }
}

fn azip_update(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *w -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * *w);
    });
}

enum StageKind {
    Full,
    CoOnly,
    IsOnly,
}

/// Train all three stages in place. `scenes` must cover every sample.
pub fn train(
    model: &mut MicroMoeModel,
    samples: &[McqaSample],
    scenes: &BTreeMap<u64, &SceneRecord>,
    bank: &TaskBank,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let checksum_before = model.backbone_checksum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut stages = Vec::new();
    stages.push(run_stage(model, samples, scenes, bank, &cfg.stage_full, StageKind::Full, cfg, &mut rng, "full")?);
    stages.push(run_stage(model, samples, scenes, bank, &cfg.stage_co, StageKind::CoOnly, cfg, &mut rng, "co_refine")?);
    stages.push(run_stage(model, samples, scenes, bank, &cfg.stage_is, StageKind::IsOnly, cfg, &mut rng, "is_refine")?);
    let checksum_after = model.backbone_checksum();
    Ok(TrainLog {
        stages,
        backbone_checksum_before: checksum_before,
        backbone_checksum_after: checksum_after,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &mut MicroMoeModel,
    samples: &[McqaSample],
    scenes: &BTreeMap<u64, &SceneRecord>,
    bank: &TaskBank,
    stage: &StageConfig,
    kind: StageKind,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<StageLog> {
    let pool: Vec<&McqaSample> = match kind {
        StageKind::Full => samples.iter().collect(),
        StageKind::CoOnly => samples.iter().filter(|s| s.view == ViewpointGroup::CO).collect(),
        StageKind::IsOnly => samples.iter().filter(|s| s.view == ViewpointGroup::IS).collect(),
    };
    if pool.is_empty() || stage.epochs == 0 {
        if pool.is_empty() {
            eprintln!("warning: stage {name} has no samples; skipped");
        }
        return Ok(StageLog {
            name: name.to_string(),
            steps: 0,
            epoch_mean_loss: Vec::new(),
            skipped: true,
        });
    }

    // Evidence is scene/view determined; compute it once.
    let mut evidence: BTreeMap<(u64, ViewpointGroup), Vec<String>> = BTreeMap::new();
    for s in &pool {
        if !evidence.contains_key(&(s.scene_id, s.view)) {
            let scene = scenes.get(&s.scene_id).ok_or(Error::UnknownScene(s.scene_id))?;
            evidence.insert((s.scene_id, s.view), evidence_tokens(scene, s.view, None)?);
        }
    }

    let steps_per_epoch = estimate_steps(&pool, stage, &kind, cfg);
    let total_steps = steps_per_epoch * stage.epochs;
    let warmup_steps = ((total_steps as f64) * stage.warmup_ratio).ceil() as u64;

    let mut states: Vec<AdamState> = (0..N_EXPERTS).map(|_| AdamState::new(model)).collect();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6472_6f70);
    let mut global_step = 0u64;
    let mut epoch_losses = Vec::new();
    let mut steps = 0usize;
    for epoch in 0..stage.epochs {
        let chunks = build_order(&pool, stage.grad_accum, &kind, cfg, rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for chunk in chunks {
            let view = chunk[0].view;
            let expert = route(view);
            let mut acc: Option<ExpertGrads> = None;
            let mut chunk_loss = 0.0;
            for s in &chunk {
                let shuffled = shuffle_options(s, cfg.seed ^ 0xe19c ^ ((epoch as u64) << 17));
                let ev = &evidence[&(s.scene_id, s.view)];
                let prompt = model.tokenizer.tokenize_sample(&shuffled, bank, ev)?;
                let letter = model.tokenizer.letter_id(shuffled.gold_letter);
                let (loss, g) =
                    mcqa_loss_and_grad(model, &[(prompt, letter)], view, Some(&mut dropout_rng))?;
                chunk_loss += loss;
                match &mut acc {
                    Some(a) => a.add(&g),
                    None => acc = Some(g),
                }
            }
            let n = chunk.len() as f64;
            let mut grads = acc.unwrap();
            grads.scale(1.0 / n);
            loss_sum += chunk_loss;
            loss_n += chunk.len();

            global_step += 1;
            let lr = if global_step <= warmup_steps && warmup_steps > 0 {
                stage.lr * global_step as f64 / warmup_steps as f64
            } else {
                stage.lr
            };
            adamw_update(model, expert, &mut states[expert], &grads, lr, stage.weight_decay);
            steps += 1;
        }
        epoch_losses.push(loss_sum / loss_n as f64);
    }
    Ok(StageLog {
        name: name.to_string(),
        steps,
        epoch_mean_loss: epoch_losses,
        skipped: false,
    })
}

fn estimate_steps(pool: &[&McqaSample], stage: &StageConfig, kind: &StageKind, cfg: &TrainConfig) -> usize {
    let n = match kind {
        // Expected epoch size with the probabilistic resampling below.
        StageKind::IsOnly => {
            let focus = pool
                .iter()
                .filter(|s| matches!(s.task_id, TaskId::IS3 | TaskId::IS4))
                .count();
            pool.len() + ((cfg.is_focus_upweight - 1.0) * focus as f64).round() as usize
        }
        _ => pool.len(),
    };
    n.div_ceil(stage.grad_accum)
}

/// One epoch's optimizer-step chunks. Every chunk holds samples of a single
/// view, so each accumulated gradient belongs to exactly one expert.
fn build_order<'a>(
    pool: &[&'a McqaSample],
    accum: usize,
    kind: &StageKind,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<&'a McqaSample>> {
    let mut chunks: Vec<Vec<&McqaSample>> = Vec::new();
    match kind {
        StageKind::Full => {
            for view in ViewpointGroup::ALL {
                let seq = view_sequence(pool, view, cfg.task_balanced, rng);
                for c in seq.chunks(accum) {
                    chunks.push(c.to_vec());
                }
            }
        }
        StageKind::CoOnly | StageKind::IsOnly => {
            let mut seq: Vec<&McqaSample> = pool.to_vec();
            if let StageKind::IsOnly = kind {
                let extra_p = cfg.is_focus_upweight - 1.0;
                let mut extras: Vec<&McqaSample> = Vec::new();
                for s in pool {
                    if matches!(s.task_id, TaskId::IS3 | TaskId::IS4) && rng.gen::<f64>() < extra_p {
                        extras.push(s);
                    }
                }
                seq.extend(extras);
            }
            seq.shuffle(rng);
            for c in seq.chunks(accum) {
                chunks.push(c.to_vec());
            }
        }
    }
    chunks.shuffle(rng);
    chunks
}

/// Per-view ordering: shuffle each task's samples, then merge the four task
/// queues round-robin so consecutive samples balance tasks.
fn view_sequence<'a>(
    pool: &[&'a McqaSample],
    view: ViewpointGroup,
    task_balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a McqaSample> {
    let mut of_view: Vec<&McqaSample> = pool.iter().copied().filter(|s| s.view == view).collect();
    if !task_balanced {
        of_view.shuffle(rng);
        return of_view;
    }
    let mut queues: Vec<Vec<&McqaSample>> = vec![Vec::new(); 4];
    for s in of_view {
        queues[s.task_id.index_in_group()].push(s);
    }
    for q in &mut queues {
        q.shuffle(rng);
    }
    let mut merged = Vec::new();
    let longest = queues.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for q in &queues {
            if let Some(s) = q.get(i) {
                merged.push(*s);
            }
        }
    }
    merged
}
