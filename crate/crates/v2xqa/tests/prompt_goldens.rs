//! Byte-exact golden files for the rendered prompt of each view group.
//! Regenerate with UPDATE_GOLDENS=1 after a deliberate template change.

use std::path::PathBuf;

use v2xqa::corpus::McqaSample;
use v2xqa::protocol::render_prompt;
use v2xqa::taskbank::{load_task_bank, OptionLetter, TaskId, ViewpointGroup};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/goldens")
        .join(name)
}

fn sample(view: ViewpointGroup, task_id: TaskId, qid: &str) -> McqaSample {
    McqaSample {
        sample_id: 0,
        scene_id: 0,
        view,
        task_id,
        qid: qid.to_string(),
        option_order: [0, 1, 2, 3],
        gold_letter: OptionLetter::A,
    }
}

fn check(name: &str, view: ViewpointGroup, task_id: TaskId, qid: &str) {
    let bank = load_task_bank().unwrap();
    let bundle = render_prompt(&sample(view, task_id, qid), &bank).unwrap();
    let rendered = format!("{}\n\n{}", bundle.system_text, bundle.user_text);
    let path = golden_path(name);
    if std::env::var("UPDATE_GOLDENS").is_ok() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden {name}; run with UPDATE_GOLDENS=1"));
    assert_eq!(rendered, golden, "prompt for {view} drifted from {name}");
}

#[test]
fn vs_prompt_matches_golden() {
    check("prompt_vs.txt", ViewpointGroup::VS, TaskId::VS1, "VS1_Q1");
}

#[test]
fn is_prompt_matches_golden() {
    check("prompt_is.txt", ViewpointGroup::IS, TaskId::IS3, "IS3_Q2");
}

#[test]
fn co_prompt_matches_golden() {
    check("prompt_co.txt", ViewpointGroup::CO, TaskId::CO2, "CO2_Q1");
}

#[test]
fn goldens_carry_the_literal_instruction() {
    for name in ["prompt_vs.txt", "prompt_is.txt", "prompt_co.txt"] {
        let text = std::fs::read_to_string(golden_path(name)).unwrap();
        assert!(
            text.contains("Return exactly one uppercase letter only"),
            "{name} lacks the answer-format instruction"
        );
    }
}
