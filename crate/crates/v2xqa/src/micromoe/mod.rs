//! Desk-scale mixture of viewpoint experts: a frozen tiny transformer
//! backbone with three hard-routed low-rank adapters injected into the
//! attention projections.
//!
//! Weights use the row convention throughout: activations are T×d row
//! matrices and a projection is `x.dot(&w)`. An adapter pair (a: d×r,
//! b: r×d) contributes `scale * x.dot(&a).dot(&b)`, a rank-r update.

pub mod net;
pub mod tokenizer;
pub mod train;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taskbank::{TaskBank, ViewpointGroup};
use crate::{Error, Result};
use tokenizer::{TokenKind, Tokenizer};

pub const N_EXPERTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub vocab: usize,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl ModelConfig {
    /// Reference desk-scale configuration.
    pub fn desk(vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_seq: 96,
            vocab,
            rank: 16,
            alpha: 32.0,
            dropout: 0.05,
        }
    }

    /// Gradient-check configuration: small enough for finite differences.
    pub fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq: 96,
            vocab,
            rank: 2,
            alpha: 4.0,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Model(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.rank == 0 || self.n_layers == 0 || self.d_ff == 0 || self.vocab < 8 {
            return Err(Error::Model("degenerate model configuration".into()));
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::Model(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BackboneBlock {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Frozen backbone. The embedding table doubles as the tied output head.
#[derive(Debug, Clone)]
pub struct BackboneParams {
    pub embed: Array2<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<BackboneBlock>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LoraPair {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LoraLayer {
    pub q: LoraPair,
    pub k: LoraPair,
    pub v: LoraPair,
    pub o: LoraPair,
}

impl LoraLayer {
    pub fn pairs(&self) -> [&LoraPair; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn pairs_mut(&mut self) -> [&mut LoraPair; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

#[derive(Debug, Clone)]
pub struct LoraExpert {
    pub layers: Vec<LoraLayer>,
}

/// Initial scale of the adapter down-projections.
const LORA_A_STD: f64 = 0.5;

impl LoraExpert {
    /// A drawn from a small Gaussian, B zero: the adapter starts as the
    /// identity update and the model starts at the bare backbone function.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> LoraExpert {
        let normal = Normal::new(0.0, LORA_A_STD).unwrap();
        let pair = |rng: &mut ChaCha8Rng| LoraPair {
            a: Array2::from_shape_fn((cfg.d_model, cfg.rank), |_| normal.sample(rng)),
            b: Array2::zeros((cfg.rank, cfg.d_model)),
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LoraLayer {
                q: pair(rng),
                k: pair(rng),
                v: pair(rng),
                o: pair(rng),
            })
            .collect();
        LoraExpert { layers }
    }
}

/// Deterministic hard router: each viewpoint owns exactly one expert.
pub fn route(view: ViewpointGroup) -> usize {
    match view {
        ViewpointGroup::VS => 0,
        ViewpointGroup::IS => 1,
        ViewpointGroup::CO => 2,
    }
}

#[derive(Debug, Clone)]
pub struct MicroMoeModel {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub backbone: BackboneParams,
    pub experts: [LoraExpert; N_EXPERTS],
}

impl MicroMoeModel {
    /// Fresh model with a randomly initialized, thereafter frozen backbone.
    pub fn new(config: ModelConfig, bank: &TaskBank, seed: u64) -> Result<MicroMoeModel> {
        config.validate()?;
        let tokenizer = Tokenizer::from_bank(bank);
        if tokenizer.vocab_size() != config.vocab {
            return Err(Error::Model(format!(
                "config vocab {} does not match tokenizer vocab {}",
                config.vocab,
                tokenizer.vocab_size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = init_backbone(&config, tokenizer.kinds(), &mut rng);
        let experts = [
            LoraExpert::init(&config, &mut rng),
            LoraExpert::init(&config, &mut rng),
            LoraExpert::init(&config, &mut rng),
        ];
        Ok(MicroMoeModel {
            config,
            tokenizer,
            backbone,
            experts,
        })
    }

    pub fn expert(&self, view: ViewpointGroup) -> &LoraExpert {
        &self.experts[route(view)]
    }

    /// SHA-256 over every backbone tensor in declaration order; any applied
    /// backbone gradient would change it.
    pub fn backbone_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in backbone_tensors(&self.backbone) {
            hasher.update(name.as_bytes());
            for v in tensor {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        for (name, t) in self.named_tensors() {
            tensors.push(TensorRecord {
                name,
                shape: t.shape.clone(),
                data: t.data.clone(),
            });
        }
        let ckpt = Checkpoint {
            version: 1,
            config: self.config.clone(),
            tensors,
        };
        let bytes = serde_json::to_vec(&ckpt)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path, bank: &TaskBank) -> Result<MicroMoeModel> {
        let bytes = std::fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.version != 1 {
            return Err(Error::Model(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let mut model = MicroMoeModel::new(ckpt.config, bank, 0)?;
        let mut loaded = std::collections::BTreeMap::new();
        for t in ckpt.tensors {
            loaded.insert(t.name.clone(), t);
        }
        for (name, slot) in model.named_tensors_mut() {
            let t = loaded
                .remove(&name)
                .ok_or_else(|| Error::Model(format!("checkpoint missing tensor {name}")))?;
            if t.shape != slot.shape || t.data.len() != slot.data.len() {
                return Err(Error::Model(format!(
                    "tensor {name} shape {:?} does not match expected {:?}",
                    t.shape, slot.shape
                )));
            }
            slot.data.copy_from_slice(&t.data);
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::Model(format!("checkpoint has unknown tensor {extra}")));
        }
        Ok(model)
    }

    fn named_tensors(&self) -> Vec<(String, TensorView)> {
        let mut out: Vec<(String, TensorView)> = backbone_tensor_views(&self.backbone);
        for (e, expert) in self.experts.iter().enumerate() {
            let view = ViewpointGroup::ALL[e];
            for (l, layer) in expert.layers.iter().enumerate() {
                for (pname, pair) in [("q", &layer.q), ("k", &layer.k), ("v", &layer.v), ("o", &layer.o)] {
                    out.push((format!("expert.{view}.l{l}.{pname}.a"), view2(&pair.a)));
                    out.push((format!("expert.{view}.l{l}.{pname}.b"), view2(&pair.b)));
                }
            }
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, TensorSlot<'_>)> {
        let mut out: Vec<(String, TensorSlot<'_>)> = Vec::new();
        {
            let b = &mut self.backbone;
            out.push(("backbone.embed".into(), slot2(&mut b.embed)));
            out.push(("backbone.pos".into(), slot2(&mut b.pos)));
            for (l, blk) in b.blocks.iter_mut().enumerate() {
                out.push((format!("backbone.l{l}.wq"), slot2(&mut blk.wq)));
                out.push((format!("backbone.l{l}.wk"), slot2(&mut blk.wk)));
                out.push((format!("backbone.l{l}.wv"), slot2(&mut blk.wv)));
                out.push((format!("backbone.l{l}.wo"), slot2(&mut blk.wo)));
                out.push((format!("backbone.l{l}.ln1_g"), slot1(&mut blk.ln1_g)));
                out.push((format!("backbone.l{l}.ln1_b"), slot1(&mut blk.ln1_b)));
                out.push((format!("backbone.l{l}.ln2_g"), slot1(&mut blk.ln2_g)));
                out.push((format!("backbone.l{l}.ln2_b"), slot1(&mut blk.ln2_b)));
                out.push((format!("backbone.l{l}.w1"), slot2(&mut blk.w1)));
                out.push((format!("backbone.l{l}.b1"), slot1(&mut blk.b1)));
                out.push((format!("backbone.l{l}.w2"), slot2(&mut blk.w2)));
                out.push((format!("backbone.l{l}.b2"), slot1(&mut blk.b2)));
            }
            out.push(("backbone.lnf_g".into(), slot1(&mut b.lnf_g)));
            out.push(("backbone.lnf_b".into(), slot1(&mut b.lnf_b)));
        }
        for (e, expert) in self.experts.iter_mut().enumerate() {
            let view = ViewpointGroup::ALL[e];
            for (l, layer) in expert.layers.iter_mut().enumerate() {
                for (pname, pair) in [
                    ("q", &mut layer.q),
                    ("k", &mut layer.k),
                    ("v", &mut layer.v),
                    ("o", &mut layer.o),
                ] {
                    out.push((format!("expert.{view}.l{l}.{pname}.a"), slot2(&mut pair.a)));
                    out.push((format!("expert.{view}.l{l}.{pname}.b"), slot2(&mut pair.b)));
                }
            }
        }
        out
    }
}

struct TensorView {
    shape: Vec<usize>,
    data: Vec<f64>,
}

struct TensorSlot<'a> {
    shape: Vec<usize>,
    data: &'a mut [f64],
}

fn view2(a: &Array2<f64>) -> TensorView {
    TensorView {
        shape: a.shape().to_vec(),
        data: a.iter().copied().collect(),
    }
}

fn view1(a: &Array1<f64>) -> TensorView {
    TensorView {
        shape: a.shape().to_vec(),
        data: a.to_vec(),
    }
}

fn slot2(a: &mut Array2<f64>) -> TensorSlot<'_> {
    TensorSlot {
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    }
}

fn slot1(a: &mut Array1<f64>) -> TensorSlot<'_> {
    TensorSlot {
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    }
}

fn backbone_tensor_views(b: &BackboneParams) -> Vec<(String, TensorView)> {
    let mut out = vec![
        ("backbone.embed".to_string(), view2(&b.embed)),
        ("backbone.pos".to_string(), view2(&b.pos)),
    ];
    for (l, blk) in b.blocks.iter().enumerate() {
        out.push((format!("backbone.l{l}.wq"), view2(&blk.wq)));
        out.push((format!("backbone.l{l}.wk"), view2(&blk.wk)));
        out.push((format!("backbone.l{l}.wv"), view2(&blk.wv)));
        out.push((format!("backbone.l{l}.wo"), view2(&blk.wo)));
        out.push((format!("backbone.l{l}.ln1_g"), view1(&blk.ln1_g)));
        out.push((format!("backbone.l{l}.ln1_b"), view1(&blk.ln1_b)));
        out.push((format!("backbone.l{l}.ln2_g"), view1(&blk.ln2_g)));
        out.push((format!("backbone.l{l}.ln2_b"), view1(&blk.ln2_b)));
        out.push((format!("backbone.l{l}.w1"), view2(&blk.w1)));
        out.push((format!("backbone.l{l}.b1"), view1(&blk.b1)));
        out.push((format!("backbone.l{l}.w2"), view2(&blk.w2)));
        out.push((format!("backbone.l{l}.b2"), view1(&blk.b2)));
    }
    out.push(("backbone.lnf_g".to_string(), view1(&b.lnf_g)));
    out.push(("backbone.lnf_b".to_string(), view1(&b.lnf_b)));
    out
}

fn backbone_tensors(b: &BackboneParams) -> Vec<(String, Vec<f64>)> {
    backbone_tensor_views(b)
        .into_iter()
        .map(|(n, t)| (n, t.data))
        .collect()
}

/// Compositional embedding blocks, valid when `d_model >= 64` with four
/// 16-dim head slices. Bindable features of a token live in fixed coordinate
/// blocks so that every alignment a rank-r adapter must learn stays low
/// rank: option-index codes share the encoding of evidence-value codes, and
/// evidence attributes share the code of the task that owns them.
///
/// Slice layout: head 0 holds content (LETTER, BITS), head 1 is the
/// selection head (QID plus the MATCH scratch), head 2 is the evidence head
/// (TASK plus the FETCH scratch), head 3 holds per-token noise.
mod blocks {
    use std::ops::Range;

    pub const LETTER: Range<usize> = 0..8;
    pub const BITS: Range<usize> = 8..16;
    pub const QID: Range<usize> = 16..24;
    pub const MATCH: Range<usize> = 24..32;
    pub const TASK: Range<usize> = 32..40;
    pub const FETCH: Range<usize> = 40..48;
    pub const COMB: Range<usize> = 48..56;
    pub const MISC_START: usize = 56;
    pub const MIN_D: usize = 64;
}

fn structured_embed(cfg: &ModelConfig, kinds: &[TokenKind], rng: &mut ChaCha8Rng) -> Array2<f64> {
    use rand::Rng;
    use std::ops::Range;
    let d = cfg.d_model;
    let code = |len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| if rng.gen_bool(0.5) { 0.5 } else { -0.5 }).collect()
    };
    let codes = |n: usize, len: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| code(len, rng)).collect()
    };
    // Hadamard codes for the small closed families: orthogonal codes keep
    // similarity attention free of cross-task leakage, and each CO task uses
    // the anti-code of the VS task in the same slot so hint tokens repel
    // same-slot VS queries and vice versa.
    let hadamard = |i: usize| -> Vec<f64> {
        (0..8)
            .map(|j: usize| if (i & j).count_ones() % 2 == 0 { 0.5 } else { -0.5 })
            .collect()
    };
    let letter_codes: Vec<Vec<f64>> = (1..=4).map(hadamard).collect();
    let qid_codes = codes(36, blocks::QID.len(), rng);
    let task_codes: Vec<Vec<f64>> = (0..12)
        .map(|t| match t {
            0..=3 => hadamard(t + 1),
            4..=6 => hadamard(t + 1),
            7 => hadamard(0),
            _ => hadamard(t - 7).iter().map(|v| -v).collect(),
        })
        .collect();
    // Value v in 0..4 as two sign bits, each replicated over half the block.
    let bits = |v: u8| -> Vec<f64> {
        let half = blocks::BITS.len() / 2;
        let b = |bit: u8| if v >> bit & 1 == 1 { 0.5 } else { -0.5 };
        let mut out = vec![b(0); half];
        out.extend(vec![b(1); half]);
        out
    };
    let misc = Normal::new(0.0, 0.25).unwrap();
    let mut embed = Array2::zeros((cfg.vocab, d));
    for (i, kind) in kinds.iter().enumerate() {
        let mut row = embed.row_mut(i);
        let mut put = |r: Range<usize>, c: &[f64]| {
            for (j, v) in r.zip(c) {
                row[j] = *v;
            }
        };
        match *kind {
            // Double amplitude so the tied head ranks the bare letter above
            // option tokens carrying the same letter code.
            TokenKind::Letter(l) => {
                let strong: Vec<f64> = letter_codes[l as usize].iter().map(|v| 2.0 * v).collect();
                put(blocks::LETTER, &strong);
            }
            TokenKind::Eos => {
                for j in blocks::MISC_START..d {
                    row[j] = 0.5;
                }
            }
            TokenKind::Qid { qid, task } => {
                put(blocks::QID, &qid_codes[qid]);
                put(blocks::TASK, &task_codes[task]);
            }
            // No TASK code on options: only the question token may pull
            // evidence through the task-similarity head.
            TokenKind::OptionTok { qid, orig, letter, .. } => {
                put(blocks::LETTER, &letter_codes[letter as usize]);
                put(blocks::BITS, &bits(orig));
                put(blocks::QID, &qid_codes[qid]);
            }
            TokenKind::EvidenceTok { task, value } => {
                put(blocks::TASK, &task_codes[task]);
                if let Some(v) = value {
                    put(blocks::BITS, &bits(v));
                }
            }
            TokenKind::Unk
            | TokenKind::Keyword
            | TokenKind::TaskTag(_)
            | TokenKind::ViewTag
            | TokenKind::NoteTag => {
                // Structural filler; identity noise lives outside the code
                // and scratch blocks so these never compete at the head.
                for j in blocks::MISC_START..d {
                    row[j] = misc.sample(rng);
                }
            }
        }
    }
    embed
}

fn init_backbone(cfg: &ModelConfig, kinds: &[TokenKind], rng: &mut ChaCha8Rng) -> BackboneParams {
    use std::ops::Range;
    let d = cfg.d_model;
    let structured = d == blocks::MIN_D && cfg.n_heads == 4 && kinds.len() == cfg.vocab;
    let pos_std = if structured { 0.1 } else { 0.3 };
    let proj = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
    let ff_in = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
    // Quieter random feed-forward in the structured backbone: it still
    // supplies the nonlinear features adapters read, but its additive noise
    // stays below the code amplitudes in the scratch blocks.
    let ff_out_std = if structured { 0.5 } else { 1.0 } / (cfg.d_ff as f64).sqrt();
    let ff_out = Normal::new(0.0, ff_out_std).unwrap();
    let mat = |r: usize, c: usize, n: Normal<f64>, rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((r, c), |_| n.sample(rng))
    };
    // Scaled identity plus noise. With wq = wk = beta*I each head scores by
    // embedding similarity on its slice, and with wv = wo = I it copies the
    // attended slice. On top of that, fixed cross-block wiring gives the
    // frozen backbone generic retrieval machinery, the desk analogue of a
    // pretrained model's copy heads: option keys expose their index bits in
    // the MATCH slice, option values expose their slot letter there, and
    // evidence values expose their bits in the FETCH slice. What the wiring
    // deliberately omits is the query side: nothing maps a fetched value
    // into a MATCH query, so the untrained model attends uniformly over the
    // options and answers at chance. Learning that query map (and the
    // nonlinear share combination for CO) is exactly the adapters' job.
    let eye = |scale: f64, noise: f64, rng: &mut ChaCha8Rng| {
        let n = Normal::new(0.0, noise).unwrap();
        let mut m = mat(d, d, n, rng);
        for i in 0..d {
            m[[i, i]] += scale;
        }
        m
    };
    // Cross-block bridge: adds `scale * x[src]` into projection dims `dst`.
    let bridge = |m: &mut Array2<f64>, src: Range<usize>, dst: Range<usize>, scale: f64| {
        for (i, j) in src.zip(dst) {
            m[[i, j]] += scale;
        }
    };
    let embed = if structured {
        structured_embed(cfg, kinds, rng)
    } else {
        mat(cfg.vocab, d, Normal::new(0.0, 0.5).unwrap(), rng)
    };
    // Structured positions stay inside the MISC dims; no circuit here is
    // positional and the scratch blocks must stay clean.
    let pos = if structured {
        let n = Normal::new(0.0, pos_std).unwrap();
        let mut p = Array2::zeros((cfg.max_seq, d));
        for i in 0..cfg.max_seq {
            for j in blocks::MISC_START..d {
                p[[i, j]] = n.sample(rng);
            }
        }
        p
    } else {
        mat(cfg.max_seq, d, Normal::new(0.0, pos_std).unwrap(), rng)
    };
    let blocks = (0..cfg.n_layers)
        .map(|layer| {
            if structured {
                let beta = 0.8;
                // Layer 0 is the fetch layer (evidence bits into FETCH);
                // layer 1 is the selection layer (bit keys on options,
                // letter copy through MATCH). Keeping the bridges out of the
                // other layer stops the selection pass from re-fetching and
                // disturbing the already-merged evidence.
                let wq = eye(beta, 0.01, rng);
                let mut wk = eye(beta, 0.01, rng);
                let mut wv = eye(1.0, 0.01, rng);
                let mut wo = eye(1.0, 0.01, rng);
                if layer == 0 {
                    bridge(&mut wv, blocks::BITS, blocks::FETCH, 1.0);
                } else {
                    bridge(&mut wk, blocks::BITS, blocks::MATCH, beta);
                    bridge(&mut wv, blocks::LETTER, blocks::MATCH, 1.0);
                    bridge(&mut wo, blocks::MATCH, blocks::LETTER, 1.0);
                }
                let mut w1 = mat(d, cfg.d_ff, ff_in, rng);
                let mut w2 = mat(cfg.d_ff, d, ff_out, rng);
                // Random feed-forward features land only in the MISC dims;
                // the structured blocks stay free of additive FF noise.
                for n in 0..cfg.d_ff {
                    for j in 0..blocks::MISC_START {
                        w2[[n, j]] = 0.0;
                    }
                }
                if layer == 0 {
                    // Dedicated share-combination features: after the first
                    // attention merges evidence into the FETCH slice, neuron
                    // pairs relu(x) + relu(-x) = |x| per FETCH dim write
                    // -|x| into the COMB slice. |sum of two share bits| is
                    // large when the bits agree and near zero when they
                    // differ, so COMB exposes their parity linearly; which
                    // query to build from it is still the adapters' to
                    // learn.
                    for i in 0..blocks::FETCH.len() {
                        for (n, sign) in [(2 * i, 1.0), (2 * i + 1, -1.0)] {
                            for j in 0..d {
                                w1[[j, n]] = 0.0;
                            }
                            w1[[blocks::FETCH.start + i, n]] = sign;
                            for j in 0..d {
                                w2[[n, j]] = 0.0;
                            }
                            w2[[n, blocks::COMB.start + i]] = -2.0;
                        }
                    }
                }
                BackboneBlock {
                    wq,
                    wk,
                    wv,
                    wo,
                    ln1_g: Array1::ones(d),
                    ln1_b: Array1::zeros(d),
                    ln2_g: Array1::ones(d),
                    ln2_b: Array1::zeros(d),
                    w1,
                    b1: Array1::zeros(cfg.d_ff),
                    w2,
                    b2: Array1::zeros(d),
                }
            } else {
                BackboneBlock {
                    wq: mat(d, d, proj, rng),
                    wk: mat(d, d, proj, rng),
                    wv: mat(d, d, proj, rng),
                    wo: mat(d, d, proj, rng),
                    ln1_g: Array1::ones(d),
                    ln1_b: Array1::zeros(d),
                    ln2_g: Array1::ones(d),
                    ln2_b: Array1::zeros(d),
                    w1: mat(d, cfg.d_ff, ff_in, rng),
                    b1: Array1::zeros(cfg.d_ff),
                    w2: mat(cfg.d_ff, d, ff_out, rng),
                    b2: Array1::zeros(d),
                }
            }
        })
        .collect();
    // In the structured backbone the head reads only the blocks that carry
    // answer content (LETTER, MATCH, MISC); zero final-LN gain elsewhere
    // keeps a token's own question and task codes out of the logits.
    let lnf_g = if structured {
        let mut g = Array1::zeros(d);
        for j in blocks::LETTER.chain(blocks::MATCH).chain(blocks::MISC_START..d) {
            g[j] = 1.0;
        }
        g
    } else {
        Array1::ones(d)
    };
    BackboneParams {
        embed,
        pos,
        blocks,
        lnf_g,
        lnf_b: Array1::zeros(d),
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskbank::load_task_bank;

    fn tiny_model(seed: u64) -> MicroMoeModel {
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        MicroMoeModel::new(ModelConfig::tiny(tok.vocab_size()), &bank, seed).unwrap()
    }

    #[test]
    fn router_is_total_and_injective() {
        let ids: Vec<usize> = ViewpointGroup::ALL.iter().map(|&v| route(v)).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(route(ViewpointGroup::VS), route(ViewpointGroup::VS));
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = ModelConfig::tiny(64);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny(64);
        cfg.rank = 0;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::desk(256).validate().is_ok());
    }

    #[test]
    fn init_is_seeded_and_b_starts_zero() {
        let m1 = tiny_model(5);
        let m2 = tiny_model(5);
        let m3 = tiny_model(6);
        assert_eq!(m1.backbone_checksum(), m2.backbone_checksum());
        assert_ne!(m1.backbone_checksum(), m3.backbone_checksum());
        for e in &m1.experts {
            for layer in &e.layers {
                for pair in layer.pairs() {
                    assert!(pair.b.iter().all(|&v| v == 0.0));
                    assert!(pair.a.iter().any(|&v| v != 0.0));
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let bank = load_task_bank().unwrap();
        let model = tiny_model(11);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        model.save(&p1).unwrap();
        let loaded = MicroMoeModel::load(&p1, &bank).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(model.backbone_checksum(), loaded.backbone_checksum());
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let bank = load_task_bank().unwrap();
        let model = tiny_model(3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        model.save(&p).unwrap();
        let mut ckpt: Checkpoint = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        ckpt.tensors[0].shape[0] += 1;
        std::fs::write(&p, serde_json::to_vec(&ckpt).unwrap()).unwrap();
        assert!(MicroMoeModel::load(&p, &bank).is_err());
    }
}
