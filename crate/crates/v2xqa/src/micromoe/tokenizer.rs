//! Fixture tokenizer: one token per template keyword or placeholder value.
//!
//! Placeholder combinations are merged into single tokens so one attention
//! hop reads them: an evidence pair (attribute, value) is one token, and a
//! presented option (slot letter, original option) is one token. Each token
//! carries a structural `TokenKind` the backbone initializer uses to lay out
//! compositional embedding blocks.

use std::collections::HashMap;

use crate::corpus::{McqaSample, MASK_TOKEN};
use crate::taskbank::{OptionLetter, TaskBank, TaskId, ViewpointGroup};
use crate::{Error, Result};

pub const EOS: u32 = 0;
pub const UNK: u32 = 1;

/// Structural role of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Eos,
    Unk,
    /// Bare option letter, the generation target.
    Letter(u8),
    Keyword,
    TaskTag(usize),
    ViewTag,
    NoteTag,
    /// Question id token; `qid` is the global question index (task·3 + q).
    Qid { qid: usize, task: usize },
    /// One presented option: slot letter bound to an original option.
    OptionTok { qid: usize, task: usize, orig: u8, letter: u8 },
    /// One evidence pair; `task` owns the attribute, `value` is None when
    /// masked.
    EvidenceTok { task: usize, value: Option<u8> },
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    words: Vec<String>,
    kinds: Vec<TokenKind>,
    ids: HashMap<String, u32>,
}

fn option_word(qid: &str, orig: usize, letter: OptionLetter, text: &str) -> String {
    format!("{qid}.{orig}.{}|{text}", letter.as_str())
}

fn evidence_attr_task(attr: &str) -> Option<usize> {
    let index = |s: &str| s.parse::<usize>().ok().filter(|k| (1..=4).contains(k));
    if let Some(body) = attr.strip_prefix("h_co") {
        let (num, side) = body.split_once('_')?;
        let k = index(num)?;
        return if side == "v" || side == "i" { Some(8 + k - 1) } else { None };
    }
    if let Some(num) = attr.strip_prefix("a_vs") {
        return Some(index(num)? - 1);
    }
    if let Some(num) = attr.strip_prefix("a_is") {
        return Some(4 + index(num)? - 1);
    }
    None
}

impl Tokenizer {
    /// Build the fixed vocabulary from the bank content.
    pub fn from_bank(bank: &TaskBank) -> Tokenizer {
        let mut words: Vec<String> = Vec::new();
        let mut kinds: Vec<TokenKind> = Vec::new();
        let push = |w: String, k: TokenKind, words: &mut Vec<String>, kinds: &mut Vec<TokenKind>| {
            if !words.contains(&w) {
                words.push(w);
                kinds.push(k);
            }
        };
        push("<eos>".into(), TokenKind::Eos, &mut words, &mut kinds);
        push("<unk>".into(), TokenKind::Unk, &mut words, &mut kinds);
        for (i, l) in OptionLetter::ALL.iter().enumerate() {
            push(l.as_str().to_string(), TokenKind::Letter(i as u8), &mut words, &mut kinds);
        }
        for kw in ["task:", "viewpoint:", "image:", "question:", "options:", "evidence:"] {
            push(kw.to_string(), TokenKind::Keyword, &mut words, &mut kinds);
        }
        for t in TaskId::ALL {
            push(t.as_str().to_string(), TokenKind::TaskTag(t.ordinal()), &mut words, &mut kinds);
        }
        for v in ViewpointGroup::ALL {
            push(format!("view_{v}"), TokenKind::ViewTag, &mut words, &mut kinds);
            push(format!("note_{v}"), TokenKind::NoteTag, &mut words, &mut kinds);
        }
        for task in bank.tasks() {
            for (qi, q) in task.questions.iter().enumerate() {
                let qid = task.task_id.ordinal() * 3 + qi;
                push(
                    q.qid.clone(),
                    TokenKind::Qid { qid, task: task.task_id.ordinal() },
                    &mut words,
                    &mut kinds,
                );
                for (orig, text) in q.options.iter().enumerate() {
                    for (li, l) in OptionLetter::ALL.iter().enumerate() {
                        push(
                            option_word(&q.qid, orig, *l, text),
                            TokenKind::OptionTok {
                                qid,
                                task: task.task_id.ordinal(),
                                orig: orig as u8,
                                letter: li as u8,
                            },
                            &mut words,
                            &mut kinds,
                        );
                    }
                }
            }
        }
        let mut attrs: Vec<String> = Vec::new();
        for k in 1..=4 {
            attrs.push(format!("a_vs{k}"));
            attrs.push(format!("a_is{k}"));
            attrs.push(format!("h_co{k}_v"));
            attrs.push(format!("h_co{k}_i"));
        }
        for a in &attrs {
            let task = evidence_attr_task(a).expect("known attribute");
            for v in 0..4u8 {
                push(
                    format!("{a}=v{v}"),
                    TokenKind::EvidenceTok { task, value: Some(v) },
                    &mut words,
                    &mut kinds,
                );
            }
            push(
                format!("{a}={MASK_TOKEN}"),
                TokenKind::EvidenceTok { task, value: None },
                &mut words,
                &mut kinds,
            );
        }

        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Tokenizer { words, kinds, ids }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn kinds(&self) -> &[TokenKind] {
        &self.kinds
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn letter_ids(&self) -> [u32; 4] {
        OptionLetter::ALL.map(|l| self.id(l.as_str()))
    }

    pub fn letter_id(&self, letter: OptionLetter) -> u32 {
        self.id(letter.as_str())
    }

    /// Prompt token sequence: structural keywords, slot-bound option tokens,
    /// merged evidence-pair tokens, then the question id last; the decoder
    /// continues from that position.
    pub fn tokenize_sample(&self, sample: &McqaSample, bank: &TaskBank, evidence: &[String]) -> Result<Vec<u32>> {
        let question = bank.question(&sample.qid)?;
        if evidence.len() % 2 != 0 {
            return Err(Error::Model("evidence must be (attribute, value) token pairs".into()));
        }
        let mut t = Vec::with_capacity(15 + evidence.len() / 2);
        t.push(self.id("task:"));
        t.push(self.id(sample.task_id.as_str()));
        t.push(self.id("viewpoint:"));
        t.push(self.id(&format!("view_{}", sample.view)));
        t.push(self.id("image:"));
        t.push(self.id(&format!("note_{}", sample.view)));
        t.push(self.id("options:"));
        for (slot, orig) in sample.option_order.iter().enumerate() {
            let letter = OptionLetter::from_index(slot).unwrap();
            let text = &question.options[*orig as usize];
            let id = self.id(&option_word(&sample.qid, *orig as usize, letter, text));
            if id == UNK {
                return Err(Error::Model(format!("option not in vocabulary: {text}")));
            }
            t.push(id);
        }
        t.push(self.id("evidence:"));
        for pair in evidence.chunks(2) {
            let merged = format!("{}={}", pair[0], pair[1]);
            let id = self.id(&merged);
            if id == UNK {
                return Err(Error::Model(format!("evidence token not in vocabulary: {merged}")));
            }
            t.push(id);
        }
        t.push(self.id("question:"));
        t.push(self.id(&sample.qid));
        Ok(t)
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_samples, evidence_tokens, gen_fixtures, FixtureConfig};
    use crate::protocol::EvidenceRef;
    use crate::taskbank::load_task_bank;

    #[test]
    fn vocabulary_is_stable_and_covers_samples() {
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        let tok2 = Tokenizer::from_bank(&bank);
        assert_eq!(tok.words, tok2.words);
        assert!(tok.vocab_size() < 800, "vocab {}", tok.vocab_size());
        assert_eq!(tok.words.len(), tok.kinds.len());

        let scenes = gen_fixtures(8, 8, 17, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 17).unwrap();
        for s in &samples {
            let scene = &scenes[s.scene_id as usize];
            let ev = evidence_tokens(scene, s.view, None).unwrap();
            let ids = tok.tokenize_sample(s, &bank, &ev).unwrap();
            assert!(!ids.contains(&UNK), "sample {} has unknown token", s.sample_id);
            assert_eq!(*ids.last().unwrap(), tok.id(&s.qid));
        }
    }

    #[test]
    fn masked_evidence_tokenizes_to_masked_kinds() {
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        let scenes = gen_fixtures(2, 2, 5, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 5).unwrap();
        let co = samples.iter().find(|s| s.view == ViewpointGroup::CO).unwrap();
        let ev = evidence_tokens(&scenes[co.scene_id as usize], co.view, Some(EvidenceRef::InfrastructureSide)).unwrap();
        let ids = tok.tokenize_sample(co, &bank, &ev).unwrap();
        let masked = ids
            .iter()
            .filter(|&&i| matches!(tok.kinds[i as usize], TokenKind::EvidenceTok { value: None, .. }))
            .count();
        assert_eq!(masked, 8, "all infrastructure-side values masked");
    }

    #[test]
    fn letters_round_trip() {
        let bank = load_task_bank().unwrap();
        let tok = Tokenizer::from_bank(&bank);
        for l in OptionLetter::ALL {
            let id = tok.letter_id(l);
            assert_eq!(tok.word(id), l.as_str());
        }
        assert_eq!(tok.detokenize(&[tok.id("A"), EOS, tok.id("B")]), "A");
    }

    #[test]
    fn attribute_task_ownership() {
        assert_eq!(evidence_attr_task("a_vs1"), Some(0));
        assert_eq!(evidence_attr_task("a_is4"), Some(7));
        assert_eq!(evidence_attr_task("h_co2_v"), Some(9));
        assert_eq!(evidence_attr_task("h_co2_i"), Some(9));
        assert_eq!(evidence_attr_task("bogus"), None);
    }
}
