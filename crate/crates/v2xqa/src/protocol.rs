//! Unified benchmark prompt rendering and strict parsing of model answers
//! into option labels. Rendering is byte-stable: the same sample always
//! produces the same prompt, and goldens in the test corpus pin the exact
//! template text.

use serde::{Deserialize, Serialize};

use crate::corpus::McqaSample;
use crate::taskbank::{OptionLetter, TaskBank, ViewpointGroup};
use crate::{Error, Result};

pub const SYSTEM_PROMPT: &str = "You are answering a multiple-choice autonomous driving question.\n\
Use only the provided image evidence and the question/options.\n\
Return exactly one uppercase letter only: A or B or C or D. Do not output any other words, punctuation, or explanation.";

pub const IMAGE_NOTE_VS: &str = "One image is provided: vehicle-side (ego) view.";
pub const IMAGE_NOTE_IS: &str = "One image is provided: infrastructure-side (RSU) view.";
pub const IMAGE_NOTE_CO: &str =
    "Two images are provided in order: (1) vehicle-side (ego) view, (2) infrastructure-side (RSU) view.";

pub fn image_note(view: ViewpointGroup) -> &'static str {
    match view {
        ViewpointGroup::VS => IMAGE_NOTE_VS,
        ViewpointGroup::IS => IMAGE_NOTE_IS,
        ViewpointGroup::CO => IMAGE_NOTE_CO,
    }
}

/// Which evidence stream a prompt reference points at. For CO the order is
/// fixed: vehicle-side first, infrastructure-side second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceRef {
    VehicleSide,
    InfrastructureSide,
}

/// A fully rendered prompt for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub image_note: String,
    pub evidence_refs: Vec<EvidenceRef>,
}

/// Render the unified benchmark prompt for a sample, with options presented
/// in the sample's shuffled order.
pub fn render_prompt(sample: &McqaSample, bank: &TaskBank) -> Result<PromptBundle> {
    let question = bank
        .question(&sample.qid)
        .map_err(|e| Error::Render(e.to_string()))?;
    let note = image_note(sample.view);

    let presented: Vec<&str> = sample
        .option_order
        .iter()
        .map(|&orig| question.options[orig as usize].as_str())
        .collect();

    let user_text = format!(
        "Task: {task_id}\n\
         Viewpoint: {viewpoint}\n\
         \n\
         Image evidence:\n\
         {image_note}\n\
         \n\
         Question:\n\
         {question}\n\
         \n\
         Options:\n\
         A. {opt_a}\n\
         B. {opt_b}\n\
         C. {opt_c}\n\
         D. {opt_d}\n\
         \n\
         Return exactly one uppercase letter only: A, B, C, or D.",
        task_id = sample.task_id,
        viewpoint = sample.view,
        image_note = note,
        question = question.text,
        opt_a = presented[0],
        opt_b = presented[1],
        opt_c = presented[2],
        opt_d = presented[3],
    );

    let evidence_refs = match sample.view {
        ViewpointGroup::VS => vec![EvidenceRef::VehicleSide],
        ViewpointGroup::IS => vec![EvidenceRef::InfrastructureSide],
        ViewpointGroup::CO => vec![EvidenceRef::VehicleSide, EvidenceRef::InfrastructureSide],
    };

    Ok(PromptBundle {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text,
        image_note: note.to_string(),
        evidence_refs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseOutcome {
    Letter(OptionLetter),
    Invalid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub outcome: ParseOutcome,
    pub raw_text: String,
}

impl ParsedAnswer {
    pub fn letter(&self) -> Option<OptionLetter> {
        match self.outcome {
            ParseOutcome::Letter(l) => Some(l),
            ParseOutcome::Invalid => None,
        }
    }
}

/// Lenient-first-token parse: the first whitespace token that, after stripping
/// trailing punctuation, is a single character in {A,B,C,D} (case-normalized)
/// wins; anything else is Invalid. Invalid is a value, not an error; scoring
/// counts it as incorrect.
pub fn parse_answer(raw: &str) -> ParsedAnswer {
    for token in raw.split_whitespace() {
        let stripped = token.trim_end_matches(|c: char| c.is_ascii_punctuation());
        let mut chars = stripped.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            let letter = match c.to_ascii_uppercase() {
                'A' => Some(OptionLetter::A),
                'B' => Some(OptionLetter::B),
                'C' => Some(OptionLetter::C),
                'D' => Some(OptionLetter::D),
                _ => None,
            };
            if let Some(l) = letter {
                return ParsedAnswer {
                    outcome: ParseOutcome::Letter(l),
                    raw_text: raw.to_string(),
                };
            }
        }
    }
    ParsedAnswer {
        outcome: ParseOutcome::Invalid,
        raw_text: raw.to_string(),
    }
}
