//! Forward pass, analytic backward pass, MCQA loss, greedy decoding, and
//! finite-difference gradient checking.
//!
//! Only adapter parameters ever receive gradients; backprop traverses the
//! backbone to reach adapters in earlier layers but accumulates nothing for
//! backbone tensors.

use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::tokenizer::EOS;
use super::{route, LoraPair, MicroMoeModel, ModelConfig};
use crate::corpus::McqaSample;
use crate::taskbank::{TaskBank, ViewpointGroup};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut inv_std = Array1::zeros(t);
    for i in 0..t {
        let row = x.row(i);
        let mu = row.mean().unwrap();
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            xhat[[i, j]] = (row[j] - mu) * is;
        }
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Array2<f64>, g: &Array1<f64>, cache: &LnCache) -> Array2<f64> {
    let mut dx = dy * g;
    let m1 = dx.mean_axis(Axis(1)).unwrap();
    let m2 = (&dx * &cache.xhat).mean_axis(Axis(1)).unwrap();
    for i in 0..dx.nrows() {
        for j in 0..dx.ncols() {
            dx[[i, j]] = (dx[[i, j]] - m1[i] - cache.xhat[[i, j]] * m2[i]) * cache.inv_std[i];
        }
    }
    dx
}

pub(crate) struct AdapterCache {
    xd: Array2<f64>,
    h: Array2<f64>,
    mask: Option<Array2<f64>>,
}

fn dropout_mask(shape: (usize, usize), p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    match rng {
        Some(r) if p > 0.0 => {
            let keep = 1.0 - p;
            Some(Array2::from_shape_fn(shape, |_| {
                if rand::Rng::gen::<f64>(r) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            }))
        }
        _ => None,
    }
}

/// Adapted projection: x·W + s·(drop(x)·A)·B.
fn project(
    x: &Array2<f64>,
    w: &Array2<f64>,
    pair: &LoraPair,
    scale: f64,
    mask: Option<Array2<f64>>,
) -> (Array2<f64>, AdapterCache) {
    let xd = match &mask {
        Some(m) => x * m,
        None => x.clone(),
    };
    let h = xd.dot(&pair.a);
    let out = x.dot(w) + h.dot(&pair.b) * scale;
    (out, AdapterCache { xd, h, mask })
}

/// Input gradient of the adapter path; accumulates dA, dB into `grad`.
fn adapter_backward(
    dout: &Array2<f64>,
    pair: &LoraPair,
    cache: &AdapterCache,
    scale: f64,
    grad: &mut PairGrad,
) -> Array2<f64> {
    let dh = dout.dot(&pair.b.t()) * scale;
    grad.b += &(cache.h.t().dot(dout) * scale);
    grad.a += &cache.xd.t().dot(&dh);
    let dxd = dh.dot(&pair.a.t());
    match &cache.mask {
        Some(m) => dxd * m,
        None => dxd,
    }
}

fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    n_heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let sc = 1.0 / (dh as f64).sqrt();
    let mut z = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let scores = qh.dot(&kh.t()) * sc;
        let mut p = Array2::zeros((t, t));
        for i in 0..t {
            let mut m = f64::NEG_INFINITY;
            for j in 0..=i {
                m = m.max(scores[[i, j]]);
            }
            let mut denom = 0.0;
            for j in 0..=i {
                let e = (scores[[i, j]] - m).exp();
                p[[i, j]] = e;
                denom += e;
            }
            for j in 0..=i {
                p[[i, j]] /= denom;
            }
        }
        z.slice_mut(s![.., cols]).assign(&p.dot(&vh));
        probs.push(p);
    }
    (z, probs)
}

fn attention_backward(
    dz: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    probs: &[Array2<f64>],
    n_heads: usize,
    v: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t, d) = dz.dim();
    let dh = d / n_heads;
    let sc = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let dzh = dz.slice(s![.., cols.clone()]);
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let p = &probs[h];
        let dp = dzh.dot(&vh.t());
        dv.slice_mut(s![.., cols.clone()]).assign(&p.t().dot(&dzh));
        // softmax rows; masked entries have p = 0, so ds = 0 there.
        let mut ds = Array2::zeros((t, t));
        for i in 0..t {
            let dot: f64 = (0..=i).map(|j| dp[[i, j]] * p[[i, j]]).sum();
            for j in 0..=i {
                ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
            }
        }
        dq.slice_mut(s![.., cols.clone()]).assign(&(ds.dot(&kh) * sc));
        dk.slice_mut(s![.., cols]).assign(&(ds.t().dot(&qh) * sc));
    }
    (dq, dk, dv)
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    aq: AdapterCache,
    ak: AdapterCache,
    av: AdapterCache,
    ao: AdapterCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ln2: LnCache,
    u_mask: Array2<f64>,
}

pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
    lnf: LnCache,
}

pub(crate) fn forward_full(
    model: &MicroMoeModel,
    tokens: &[u32],
    view: ViewpointGroup,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let cfg = &model.config;
    let t = tokens.len();
    if t == 0 || t > cfg.max_seq {
        return Err(Error::Model(format!("sequence length {t} outside 1..={}", cfg.max_seq)));
    }
    for &id in tokens {
        if id as usize >= cfg.vocab {
            return Err(Error::Model(format!("token id {id} out of vocabulary {}", cfg.vocab)));
        }
    }
    let d = cfg.d_model;
    let mut x = Array2::zeros((t, d));
    for (i, &id) in tokens.iter().enumerate() {
        let row = &model.backbone.embed.row(id as usize) + &model.backbone.pos.row(i);
        x.row_mut(i).assign(&row);
    }
    let expert = model.expert(view);
    let scale = cfg.scale();
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for (blk, lora) in model.backbone.blocks.iter().zip(&expert.layers) {
        let (n1, ln1) = layer_norm(&x, &blk.ln1_g, &blk.ln1_b);
        let (q, aq) = project(&n1, &blk.wq, &lora.q, scale, dropout_mask((t, d), cfg.dropout, dropout_rng.as_deref_mut()));
        let (k, ak) = project(&n1, &blk.wk, &lora.k, scale, dropout_mask((t, d), cfg.dropout, dropout_rng.as_deref_mut()));
        let (v, av) = project(&n1, &blk.wv, &lora.v, scale, dropout_mask((t, d), cfg.dropout, dropout_rng.as_deref_mut()));
        let (z, probs) = attention(&q, &k, &v, cfg.n_heads);
        let (attn_out, ao) = project(&z, &blk.wo, &lora.o, scale, dropout_mask((t, d), cfg.dropout, dropout_rng.as_deref_mut()));
        let x_mid = &x + &attn_out;
        let (n2, ln2) = layer_norm(&x_mid, &blk.ln2_g, &blk.ln2_b);
        let u = n2.dot(&blk.w1) + &blk.b1;
        let u_mask = u.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
        let f = (&u * &u_mask).dot(&blk.w2) + &blk.b2;
        x = x_mid + f;
        blocks.push(BlockCache {
            ln1,
            aq,
            ak,
            av,
            ao,
            q,
            k,
            v,
            probs,
            ln2,
            u_mask,
        });
    }
    let (xf, lnf) = layer_norm(&x, &model.backbone.lnf_g, &model.backbone.lnf_b);
    let logits = xf.dot(&model.backbone.embed.t());
    Ok((logits, ForwardCache { blocks, lnf }))
}

#[derive(Debug, Clone)]
pub struct PairGrad {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub q: PairGrad,
    pub k: PairGrad,
    pub v: PairGrad,
    pub o: PairGrad,
}

impl LayerGrads {
    pub fn pairs(&self) -> [&PairGrad; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }
}

#[derive(Debug, Clone)]
pub struct ExpertGrads {
    pub layers: Vec<LayerGrads>,
}

impl ExpertGrads {
    pub fn zeros(cfg: &ModelConfig) -> ExpertGrads {
        let pg = || PairGrad {
            a: Array2::zeros((cfg.d_model, cfg.rank)),
            b: Array2::zeros((cfg.rank, cfg.d_model)),
        };
        ExpertGrads {
            layers: (0..cfg.n_layers)
                .map(|_| LayerGrads {
                    q: pg(),
                    k: pg(),
                    v: pg(),
                    o: pg(),
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &ExpertGrads) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (p, po) in [
                (&mut l.q, &o.q),
                (&mut l.k, &o.k),
                (&mut l.v, &o.v),
                (&mut l.o, &o.o),
            ] {
                p.a += &po.a;
                p.b += &po.b;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            for p in [&mut l.q, &mut l.k, &mut l.v, &mut l.o] {
                p.a *= f;
                p.b *= f;
            }
        }
    }
}

pub(crate) fn backward(
    model: &MicroMoeModel,
    view: ViewpointGroup,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
) -> ExpertGrads {
    let expert = model.expert(view);
    let scale = model.config.scale();
    let n_heads = model.config.n_heads;
    let mut grads = ExpertGrads::zeros(&model.config);
    let dxf = dlogits.dot(&model.backbone.embed);
    let mut dx = layer_norm_backward(&dxf, &model.backbone.lnf_g, &cache.lnf);
    for l in (0..model.backbone.blocks.len()).rev() {
        let blk = &model.backbone.blocks[l];
        let lora = &expert.layers[l];
        let bc = &cache.blocks[l];
        let g = &mut grads.layers[l];
        let du = &dx.dot(&blk.w2.t()) * &bc.u_mask;
        let dn2 = du.dot(&blk.w1.t());
        let dx_mid = &dx + &layer_norm_backward(&dn2, &blk.ln2_g, &bc.ln2);
        let dz = dx_mid.dot(&blk.wo.t()) + adapter_backward(&dx_mid, &lora.o, &bc.ao, scale, &mut g.o);
        let (dq, dk, dv) = attention_backward(&dz, &bc.q, &bc.k, &bc.probs, n_heads, &bc.v);
        let mut dn1 = dq.dot(&blk.wq.t()) + adapter_backward(&dq, &lora.q, &bc.aq, scale, &mut g.q);
        dn1 += &(dk.dot(&blk.wk.t()) + adapter_backward(&dk, &lora.k, &bc.ak, scale, &mut g.k));
        dn1 += &(dv.dot(&blk.wv.t()) + adapter_backward(&dv, &lora.v, &bc.av, scale, &mut g.v));
        dx = dx_mid + layer_norm_backward(&dn1, &blk.ln1_g, &bc.ln1);
    }
    grads
}

/// Summed NLL over the scored rows, plus the logit gradient.
pub(crate) fn nll_rows(logits: &Array2<f64>, targets: &[(usize, u32)]) -> (f64, Array2<f64>) {
    let mut dl = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &(row, tgt) in targets {
        let r = logits.row(row);
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let denom: f64 = r.iter().map(|&v| (v - m).exp()).sum();
        loss -= r[tgt as usize] - m - denom.ln();
        for j in 0..r.len() {
            dl[[row, j]] += (r[j] - m).exp() / denom;
        }
        dl[[row, tgt as usize]] -= 1.0;
    }
    (loss, dl)
}

fn target_rows(prompt_len: usize, letter: u32) -> (Vec<u32>, Vec<(usize, u32)>) {
    // The scored continuation is "letter, EOS": the last prompt position
    // predicts the letter and the letter position predicts EOS.
    (vec![letter], vec![(prompt_len - 1, letter), (prompt_len, EOS)])
}

fn check_letter(model: &MicroMoeModel, letter: u32) -> Result<()> {
    if letter as usize >= model.config.vocab || letter == super::tokenizer::UNK {
        return Err(Error::Config(format!("gold letter token {letter} not in vocabulary")));
    }
    Ok(())
}

/// Mean per-sample NLL of the "gold letter, EOS" continuation.
pub fn mcqa_loss(model: &MicroMoeModel, batch: &[(Vec<u32>, u32)], view: ViewpointGroup) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    let mut total = 0.0;
    for (prompt, letter) in batch {
        check_letter(model, *letter)?;
        let (suffix, targets) = target_rows(prompt.len(), *letter);
        let mut seq = prompt.clone();
        seq.extend(suffix);
        let (logits, _) = forward_full(model, &seq, view, None)?;
        total += nll_rows(&logits, &targets).0;
    }
    Ok(total / batch.len() as f64)
}

/// Loss plus analytic adapter gradients, both averaged over the batch.
pub fn mcqa_loss_and_grad(
    model: &MicroMoeModel,
    batch: &[(Vec<u32>, u32)],
    view: ViewpointGroup,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ExpertGrads)> {
    if batch.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    let mut total = 0.0;
    let mut grads = ExpertGrads::zeros(&model.config);
    for (prompt, letter) in batch {
        check_letter(model, *letter)?;
        let (suffix, targets) = target_rows(prompt.len(), *letter);
        let mut seq = prompt.clone();
        seq.extend(suffix);
        let (logits, cache) = forward_full(model, &seq, view, dropout_rng.as_deref_mut())?;
        let (loss, dlogits) = nll_rows(&logits, &targets);
        total += loss;
        grads.add(&backward(model, view, &cache, &dlogits));
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Greedy decode from the prompt until EOS or the step cap; returns the
/// detokenized continuation.
pub fn generate_answer(
    model: &MicroMoeModel,
    prompt: &[u32],
    view: ViewpointGroup,
    max_new: usize,
) -> Result<String> {
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let (logits, _) = forward_full(model, &seq, view, None)?;
        let last = logits.row(seq.len() - 1);
        let next = last
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i as u32)
            .unwrap();
        if next == EOS {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(model.tokenizer.detokenize(&out))
}

pub fn softmax4(z: [f64; 4]) -> [f64; 4] {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// First-decode-step probabilities restricted to the four option letters.
pub fn option_probs(model: &MicroMoeModel, prompt: &[u32], view: ViewpointGroup) -> Result<[f64; 4]> {
    let (logits, _) = forward_full(model, prompt, view, None)?;
    let last = logits.row(prompt.len() - 1);
    let ids = model.tokenizer.letter_ids();
    Ok(softmax4(ids.map(|id| last[id as usize])))
}

/// Raw generated text plus option probabilities for one sample.
pub fn predict_sample(
    model: &MicroMoeModel,
    sample: &McqaSample,
    bank: &TaskBank,
    evidence: &[String],
) -> Result<(String, [f64; 4])> {
    let prompt = model.tokenizer.tokenize_sample(sample, bank, evidence)?;
    let text = generate_answer(model, &prompt, sample.view, 4)?;
    let probs = option_probs(model, &prompt, sample.view)?;
    Ok((text, probs))
}

/// Max relative error between analytic adapter gradients and central finite
/// differences, over every entry of the active expert.
pub fn grad_check(
    model: &mut MicroMoeModel,
    batch: &[(Vec<u32>, u32)],
    view: ViewpointGroup,
    h: f64,
) -> Result<f64> {
    if model.config.dropout != 0.0 {
        return Err(Error::Model("gradient check requires dropout 0".into()));
    }
    let (_, grads) = mcqa_loss_and_grad(model, batch, view, None)?;
    let e = route(view);
    let n_layers = model.config.n_layers;
    let mut max_rel = 0.0_f64;
    for l in 0..n_layers {
        for p in 0..4 {
            for which in 0..2 {
                let shape = {
                    let pair = model.experts[e].layers[l].pairs()[p];
                    if which == 0 { pair.a.dim() } else { pair.b.dim() }
                };
                for i in 0..shape.0 {
                    for j in 0..shape.1 {
                        let bump = |m: &mut MicroMoeModel, delta: f64| {
                            let mut pairs = m.experts[e].layers[l].pairs_mut();
                            let pair = &mut pairs[p];
                            let t = if which == 0 { &mut pair.a } else { &mut pair.b };
                            t[[i, j]] += delta;
                        };
                        bump(model, h);
                        let lp = mcqa_loss(model, batch, view)?;
                        bump(model, -2.0 * h);
                        let lm = mcqa_loss(model, batch, view)?;
                        bump(model, h);
                        let num = (lp - lm) / (2.0 * h);
                        let gp = grads.layers[l].pairs()[p];
                        let ana = if which == 0 { gp.a[[i, j]] } else { gp.b[[i, j]] };
                        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
                        max_rel = max_rel.max(rel);
                    }
                }
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_samples, evidence_tokens, gen_fixtures, FixtureConfig};
    use crate::micromoe::tokenizer::Tokenizer;
    use crate::taskbank::load_task_bank;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn fixture_batch(
        model: &MicroMoeModel,
        view: ViewpointGroup,
        n: usize,
    ) -> Vec<(Vec<u32>, u32)> {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(6, 6, 31, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 31).unwrap();
        samples
            .iter()
            .filter(|s| s.view == view)
            .take(n)
            .map(|s| {
                let ev = evidence_tokens(&scenes[s.scene_id as usize], s.view, None).unwrap();
                let prompt = model.tokenizer.tokenize_sample(s, &bank, &ev).unwrap();
                (prompt, model.tokenizer.letter_id(s.gold_letter))
            })
            .collect()
    }

    fn randomize_expert(model: &mut MicroMoeModel, e: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rand_distr::Normal::new(0.0, 0.15).unwrap();
        for layer in &mut model.experts[e].layers {
            for pair in layer.pairs_mut() {
                pair.a.mapv_inplace(|_| n.sample(&mut rng));
                pair.b.mapv_inplace(|_| n.sample(&mut rng));
            }
        }
    }

    fn tiny_model(seed: u64) -> MicroMoeModel {
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        MicroMoeModel::new(ModelConfig::tiny(tok.vocab_size()), &bank, seed).unwrap()
    }

    #[test]
    fn zero_init_forward_equals_bare_backbone_for_all_views() {
        let model = tiny_model(1);
        let batch = fixture_batch(&model, ViewpointGroup::VS, 1);
        let tokens = &batch[0].0;
        let (l_vs, _) = forward_full(&model, tokens, ViewpointGroup::VS, None).unwrap();
        let (l_is, _) = forward_full(&model, tokens, ViewpointGroup::IS, None).unwrap();
        let (l_co, _) = forward_full(&model, tokens, ViewpointGroup::CO, None).unwrap();
        assert_eq!(l_vs, l_is);
        assert_eq!(l_vs, l_co);
        // A is free when B = 0: zeroing A too must not change anything.
        let mut stripped = model.clone();
        for e in &mut stripped.experts {
            for layer in &mut e.layers {
                for pair in layer.pairs_mut() {
                    pair.a.fill(0.0);
                }
            }
        }
        let (l_bare, _) = forward_full(&stripped, tokens, ViewpointGroup::VS, None).unwrap();
        assert_eq!(l_vs, l_bare);
    }

    #[test]
    fn perturbing_non_routed_experts_leaves_output_bit_identical() {
        let mut model = tiny_model(2);
        randomize_expert(&mut model, route(ViewpointGroup::VS), 7);
        let batch = fixture_batch(&model, ViewpointGroup::VS, 1);
        let tokens = &batch[0].0;
        let (before, _) = forward_full(&model, tokens, ViewpointGroup::VS, None).unwrap();
        randomize_expert(&mut model, route(ViewpointGroup::IS), 8);
        randomize_expert(&mut model, route(ViewpointGroup::CO), 9);
        let (after, _) = forward_full(&model, tokens, ViewpointGroup::VS, None).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn forward_matches_dense_materialization() {
        // Independent oracle: materialize W + s·A·B per projection and run a
        // plain dense forward written from scratch.
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 1,
            n_layers: 1,
            d_ff: 8,
            max_seq: 96,
            vocab: tok.vocab_size(),
            rank: 2,
            alpha: 4.0,
            dropout: 0.0,
        };
        let mut model = MicroMoeModel::new(cfg, &bank, 13).unwrap();
        randomize_expert(&mut model, route(ViewpointGroup::IS), 40);
        let batch = fixture_batch(&model, ViewpointGroup::IS, 1);
        let tokens = &batch[0].0;
        let (logits, _) = forward_full(&model, tokens, ViewpointGroup::IS, None).unwrap();

        let s = model.config.scale();
        let blk = &model.backbone.blocks[0];
        let lora = &model.expert(ViewpointGroup::IS).layers[0];
        let dense = |w: &Array2<f64>, p: &LoraPair| w + &(p.a.dot(&p.b) * s);
        let (wq, wk, wv, wo) = (
            dense(&blk.wq, &lora.q),
            dense(&blk.wk, &lora.k),
            dense(&blk.wv, &lora.v),
            dense(&blk.wo, &lora.o),
        );
        let t = tokens.len();
        let d = model.config.d_model;
        let ln = |x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>| {
            let mut y = Array2::zeros((t, d));
            for i in 0..t {
                let mu = x.row(i).mean().unwrap();
                let var = x.row(i).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                for j in 0..d {
                    y[[i, j]] = (x[[i, j]] - mu) / (var + 1e-5).sqrt() * g[j] + b[j];
                }
            }
            y
        };
        let mut x = Array2::zeros((t, d));
        for (i, &id) in tokens.iter().enumerate() {
            for j in 0..d {
                x[[i, j]] = model.backbone.embed[[id as usize, j]] + model.backbone.pos[[i, j]];
            }
        }
        let n1 = ln(&x, &blk.ln1_g, &blk.ln1_b);
        let (q, k, v) = (n1.dot(&wq), n1.dot(&wk), n1.dot(&wv));
        let mut z = Array2::zeros((t, d));
        for i in 0..t {
            let mut w = vec![0.0; i + 1];
            for j in 0..=i {
                w[j] = q.row(i).dot(&k.row(j)) / (d as f64).sqrt();
            }
            let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = w.iter().map(|&a| (a - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for j in 0..=i {
                for c in 0..d {
                    z[[i, c]] += exps[j] / denom * v[[j, c]];
                }
            }
        }
        let x_mid = &x + &z.dot(&wo);
        let n2 = ln(&x_mid, &blk.ln2_g, &blk.ln2_b);
        let u = (n2.dot(&blk.w1) + &blk.b1).mapv(|a| a.max(0.0));
        let x2 = &x_mid + &(u.dot(&blk.w2) + &blk.b2);
        let xf = ln(&x2, &model.backbone.lnf_g, &model.backbone.lnf_b);
        let expect = xf.dot(&model.backbone.embed.t());
        let diff = (&logits - &expect).iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        assert!(diff <= 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn softmax_examples() {
        let p = softmax4([1.0, 0.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 3.0)).abs() < 1e-12);
        let q = softmax4([0.3, 0.3, 0.3, 0.3]);
        for v in q {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn option_probs_are_normalized() {
        let mut model = tiny_model(4);
        randomize_expert(&mut model, route(ViewpointGroup::CO), 11);
        let batch = fixture_batch(&model, ViewpointGroup::CO, 3);
        for (prompt, _) in &batch {
            let p = option_probs(&model, prompt, ViewpointGroup::CO).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn nll_analytic_anchors() {
        let vocab = 50;
        let mut logits = Array2::zeros((2, vocab));
        logits[[0, 7]] = 1e3;
        let (forced, _) = nll_rows(&logits, &[(0, 7)]);
        assert!(forced < 1e-9, "forced loss {forced}");
        let uniform = Array2::zeros((3, vocab));
        let (loss, dl) = nll_rows(&uniform, &[(1, 4), (2, 0)]);
        assert!((loss - 2.0 * (vocab as f64).ln()).abs() < 1e-12);
        // gradient rows are softmax minus one-hot: they sum to zero.
        for row in [1, 2] {
            let s: f64 = dl.row(row).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_decode_is_deterministic_and_matches_argmax() {
        let mut model = tiny_model(6);
        randomize_expert(&mut model, route(ViewpointGroup::VS), 21);
        let batch = fixture_batch(&model, ViewpointGroup::VS, 2);
        for (prompt, _) in &batch {
            let a = generate_answer(&model, prompt, ViewpointGroup::VS, 4).unwrap();
            let b = generate_answer(&model, prompt, ViewpointGroup::VS, 4).unwrap();
            assert_eq!(a, b);
            let (logits, _) = forward_full(&model, prompt, ViewpointGroup::VS, None).unwrap();
            let last = logits.row(prompt.len() - 1);
            let argmax = last
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0 as u32;
            if argmax == EOS {
                assert_eq!(a, "");
            } else {
                // Vocabulary words may contain spaces (option texts), so
                // compare by prefix rather than the first whitespace token.
                assert!(a.starts_with(model.tokenizer.word(argmax)), "got {a:?}");
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut model = tiny_model(9);
        for e in 0..3 {
            randomize_expert(&mut model, e, 60 + e as u64);
        }
        let batch = fixture_batch(&model, ViewpointGroup::CO, 2);
        let err = grad_check(&mut model, &batch, ViewpointGroup::CO, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn inactive_expert_gradients_are_exactly_zero() {
        let mut model = tiny_model(10);
        for e in 0..3 {
            randomize_expert(&mut model, e, 70 + e as u64);
        }
        let batch = fixture_batch(&model, ViewpointGroup::VS, 2);
        // Gradients are only ever produced for the routed expert; the API
        // returns a single-expert gradient, so inactivity is structural.
        // Verify the loss is also exactly invariant to the inactive experts.
        let before = mcqa_loss(&model, &batch, ViewpointGroup::VS).unwrap();
        randomize_expert(&mut model, route(ViewpointGroup::IS), 99);
        randomize_expert(&mut model, route(ViewpointGroup::CO), 98);
        let after = mcqa_loss(&model, &batch, ViewpointGroup::VS).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }
}
