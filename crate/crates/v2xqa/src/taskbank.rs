//! The MCQA task bank: twelve viewpoint-aligned tasks, each with three
//! predefined questions, four candidate options, and four canonical answers.
//! The bank is compiled in as static data and validated against a pinned
//! checksum at load time so downstream prompt goldens cannot drift.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Viewpoint condition of a sample: vehicle-side, infrastructure-side, or
/// cooperative (both views).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewpointGroup {
    VS,
    IS,
    CO,
}

impl ViewpointGroup {
    pub const ALL: [ViewpointGroup; 3] = [ViewpointGroup::VS, ViewpointGroup::IS, ViewpointGroup::CO];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewpointGroup::VS => "VS",
            ViewpointGroup::IS => "IS",
            ViewpointGroup::CO => "CO",
        }
    }
}

impl std::fmt::Display for ViewpointGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViewpointGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "VS" => Ok(ViewpointGroup::VS),
            "IS" => Ok(ViewpointGroup::IS),
            "CO" => Ok(ViewpointGroup::CO),
            other => Err(Error::InvalidArgument(format!("unknown view group {other:?}"))),
        }
    }
}

/// Functional category of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFunction {
    Perception,
    Prediction,
    ReasoningPlanning,
}

/// One of the twelve task labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    VS1,
    VS2,
    VS3,
    VS4,
    IS1,
    IS2,
    IS3,
    IS4,
    CO1,
    CO2,
    CO3,
    CO4,
}

impl TaskId {
    pub const ALL: [TaskId; 12] = [
        TaskId::VS1,
        TaskId::VS2,
        TaskId::VS3,
        TaskId::VS4,
        TaskId::IS1,
        TaskId::IS2,
        TaskId::IS3,
        TaskId::IS4,
        TaskId::CO1,
        TaskId::CO2,
        TaskId::CO3,
        TaskId::CO4,
    ];

    pub fn group(self) -> ViewpointGroup {
        match self {
            TaskId::VS1 | TaskId::VS2 | TaskId::VS3 | TaskId::VS4 => ViewpointGroup::VS,
            TaskId::IS1 | TaskId::IS2 | TaskId::IS3 | TaskId::IS4 => ViewpointGroup::IS,
            TaskId::CO1 | TaskId::CO2 | TaskId::CO3 | TaskId::CO4 => ViewpointGroup::CO,
        }
    }

    /// Index of this task within its viewpoint group, 0..4.
    pub fn index_in_group(self) -> usize {
        match self {
            TaskId::VS1 | TaskId::IS1 | TaskId::CO1 => 0,
            TaskId::VS2 | TaskId::IS2 | TaskId::CO2 => 1,
            TaskId::VS3 | TaskId::IS3 | TaskId::CO3 => 2,
            TaskId::VS4 | TaskId::IS4 | TaskId::CO4 => 3,
        }
    }

    /// Index into [`TaskId::ALL`].
    pub fn ordinal(self) -> usize {
        TaskId::ALL.iter().position(|t| *t == self).unwrap()
    }

    pub fn function(self) -> TaskFunction {
        match self {
            TaskId::VS1 | TaskId::VS2 | TaskId::IS1 | TaskId::IS2 | TaskId::CO1 | TaskId::CO2 => {
                TaskFunction::Perception
            }
            TaskId::VS4 | TaskId::CO3 => TaskFunction::Prediction,
            TaskId::VS3 | TaskId::IS3 | TaskId::IS4 | TaskId::CO4 => TaskFunction::ReasoningPlanning,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::VS1 => "VS1",
            TaskId::VS2 => "VS2",
            TaskId::VS3 => "VS3",
            TaskId::VS4 => "VS4",
            TaskId::IS1 => "IS1",
            TaskId::IS2 => "IS2",
            TaskId::IS3 => "IS3",
            TaskId::IS4 => "IS4",
            TaskId::CO1 => "CO1",
            TaskId::CO2 => "CO2",
            TaskId::CO3 => "CO3",
            TaskId::CO4 => "CO4",
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task id {s:?}")))
    }
}

/// One of the four presented option slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
    C,
    D,
}

impl OptionLetter {
    pub const ALL: [OptionLetter; 4] = [OptionLetter::A, OptionLetter::B, OptionLetter::C, OptionLetter::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OptionLetter> {
        OptionLetter::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionLetter::A => "A",
            OptionLetter::B => "B",
            OptionLetter::C => "C",
            OptionLetter::D => "D",
        }
    }
}

impl std::fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single bank question with its option texts and canonical answers, both
/// keyed A..D in original order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    pub text: String,
    pub options: [String; 4],
    pub canonical_answers: [String; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub group: ViewpointGroup,
    pub function: TaskFunction,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone)]
pub struct TaskBank {
    tasks: Vec<Task>,
}

/// SHA-256 over the canonical serialization of the compiled-in bank content.
const BANK_SHA256: &str = "269bea4a336d3b164c87a16705740ac255766afe424daee2e8224c421ebb66a0";

impl TaskBank {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.ordinal()]
    }

    pub fn question(&self, qid: &str) -> Result<&Question> {
        self.tasks
            .iter()
            .flat_map(|t| t.questions.iter())
            .find(|q| q.qid == qid)
            .ok_or_else(|| Error::UnknownQid(qid.to_string()))
    }

    /// Task owning a question id.
    pub fn task_of_qid(&self, qid: &str) -> Result<&Task> {
        self.tasks
            .iter()
            .find(|t| t.questions.iter().any(|q| q.qid == qid))
            .ok_or_else(|| Error::UnknownQid(qid.to_string()))
    }

    /// All 36 question ids in bank order.
    pub fn all_qids(&self) -> Vec<String> {
        self.tasks
            .iter()
            .flat_map(|t| t.questions.iter().map(|q| q.qid.clone()))
            .collect()
    }

    fn canonical_serialization(&self) -> String {
        let mut s = String::new();
        for t in &self.tasks {
            s.push_str(t.task_id.as_str());
            s.push('\x1e');
            for q in &t.questions {
                s.push_str(&q.qid);
                s.push('\x1f');
                s.push_str(&q.text);
                s.push('\x1f');
                for o in &q.options {
                    s.push_str(o);
                    s.push('\x1f');
                }
                for a in &q.canonical_answers {
                    s.push_str(a);
                    s.push('\x1f');
                }
            }
        }
        s
    }

    fn validate(&self) -> Result<()> {
        if self.tasks.len() != 12 {
            return Err(Error::BankValidation(format!("expected 12 tasks, got {}", self.tasks.len())));
        }
        let mut qids = std::collections::HashSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if task.task_id != TaskId::ALL[i] {
                return Err(Error::BankValidation(format!("task order mismatch at {i}")));
            }
            if task.group != task.task_id.group() || task.function != task.task_id.function() {
                return Err(Error::BankValidation(format!("{} label mismatch", task.task_id)));
            }
            if task.questions.len() != 3 {
                return Err(Error::BankValidation(format!(
                    "{} has {} questions, expected 3",
                    task.task_id,
                    task.questions.len()
                )));
            }
            for (j, q) in task.questions.iter().enumerate() {
                let expected_qid = format!("{}_Q{}", task.task_id, j + 1);
                if q.qid != expected_qid {
                    return Err(Error::BankValidation(format!("qid {} != {}", q.qid, expected_qid)));
                }
                if !qids.insert(q.qid.clone()) {
                    return Err(Error::BankValidation(format!("duplicate qid {}", q.qid)));
                }
                if q.options.iter().any(|o| o.is_empty()) || q.canonical_answers.iter().any(|a| a.is_empty()) {
                    return Err(Error::BankValidation(format!("{} has empty content", q.qid)));
                }
            }
        }
        let digest = hex_digest(self.canonical_serialization().as_bytes());
        if digest != BANK_SHA256 {
            return Err(Error::BankValidation(format!(
                "bank checksum mismatch: {digest} != {BANK_SHA256}"
            )));
        }
        Ok(())
    }

    /// Export the bank as a JSON document, one object per task.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.tasks)?)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Load and validate the compiled-in task bank.
pub fn load_task_bank() -> Result<TaskBank> {
    let bank = TaskBank { tasks: build_tasks() };
    bank.validate()?;
    Ok(bank)
}

/// Full-sentence canonical answer for an option of a question.
pub fn canonical_answer<'a>(bank: &'a TaskBank, qid: &str, letter: OptionLetter) -> Result<&'a str> {
    Ok(bank.question(qid)?.canonical_answers[letter.index()].as_str())
}

/// Assign question ids of a task to `n_samples` samples in balanced
/// proportions: floor(n/3) each, remainder to the lexicographically first
/// qids, then a seeded shuffle of the positions.
pub fn assign_questions(n_samples: usize, task: &Task, seed: u64) -> Vec<String> {
    let base = n_samples / 3;
    let rem = n_samples % 3;
    let mut out = Vec::with_capacity(n_samples);
    for (j, q) in task.questions.iter().enumerate() {
        let count = base + usize::from(j < rem);
        out.extend(std::iter::repeat_n(q.qid.clone(), count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task.task_id.ordinal() as u64);
    out.shuffle(&mut rng);
    out
}

fn q(qid: &str, text: &str, options: [&str; 4], answers: [&str; 4]) -> Question {
    Question {
        qid: qid.to_string(),
        text: text.to_string(),
        options: options.map(str::to_string),
        canonical_answers: answers.map(str::to_string),
    }
}

fn task(task_id: TaskId, questions: Vec<Question>) -> Task {
    Task {
        task_id,
        group: task_id.group(),
        function: task_id.function(),
        questions,
    }
}

#[rustfmt::skip]
fn build_tasks() -> Vec<Task> {
    vec![
        task(TaskId::VS1, vec![
            q("VS1_Q1", "What is the main road scene ahead?",
              ["An intersection area.",
               "A straight road segment.",
               "A work-zone or barrier area.",
               "A merge or ramp area."],
              ["The main road scene ahead is an intersection area.",
               "The main road scene ahead is a straight road segment.",
               "The main road scene ahead is a work-zone or barrier area.",
               "The main road scene ahead is a merge or ramp area."]),
            q("VS1_Q2", "Which road feature is most important ahead?",
              ["Junction structure.",
               "Lane-following road.",
               "Barrier or cone guidance.",
               "Ramp-like road split."],
              ["The most important road feature ahead is a junction structure.",
               "The most important road feature ahead is a lane-following road.",
               "The most important road feature ahead is barrier or cone guidance.",
               "The most important road feature ahead is a ramp-like road split."]),
            q("VS1_Q3", "How should the scene ahead be grouped?",
              ["Intersection-type scene.",
               "Regular road scene.",
               "Restricted or guided scene.",
               "Branching road scene."],
              ["The scene ahead should be grouped as an intersection-type scene.",
               "The scene ahead should be grouped as a regular road scene.",
               "The scene ahead should be grouped as a restricted or guided scene.",
               "The scene ahead should be grouped as a branching road scene."]),
        ]),
        task(TaskId::VS2, vec![
            q("VS2_Q1", "What is the main road user ahead?",
              ["No clear road user ahead.",
               "A car-like vehicle.",
               "A large vehicle.",
               "A person, bike, or motorcycle."],
              ["There is no clear road user ahead.",
               "The main road user ahead is a car-like vehicle.",
               "The main road user ahead is a large vehicle.",
               "The main road user ahead is a person, bike, or motorcycle."]),
            q("VS2_Q2", "Which category best fits the key target ahead?",
              ["None is clearly key.",
               "Passenger vehicle.",
               "Bus or truck.",
               "Small or vulnerable user."],
              ["No target is clearly key ahead.",
               "The key target ahead is a passenger vehicle.",
               "The key target ahead is a bus or truck.",
               "The key target ahead is a small or vulnerable road user."]),
            q("VS2_Q3", "Who matters most for the ego path ahead?",
              ["No one clearly matters most.",
               "A car or SUV.",
               "A truck or bus.",
               "A rider, cyclist, or pedestrian."],
              ["No road user clearly matters most for the ego path ahead.",
               "A car or SUV matters most for the ego path ahead.",
               "A truck or bus matters most for the ego path ahead.",
               "A rider, cyclist, or pedestrian matters most for the ego path ahead."]),
        ]),
        task(TaskId::VS3, vec![
            q("VS3_Q1", "What is the main risk ahead?",
              ["Cross traffic.",
               "A leading vehicle.",
               "A vulnerable road user.",
               "No clear risk."],
              ["The main risk ahead is cross traffic.",
               "The main risk ahead is a leading vehicle.",
               "The main risk ahead is a vulnerable road user.",
               "There is no clear risk ahead."]),
            q("VS3_Q2", "Which hazard is most important now?",
              ["Blurred visibility or wet road surface.",
               "Vehicle conflict.",
               "Pedestrian or rider conflict.",
               "No obvious hazard."],
              ["The most important hazard now is blurred visibility or a wet road surface.",
               "The most important hazard now is a front or side vehicle conflict.",
               "The most important hazard now is a pedestrian or rider conflict.",
               "There is no obvious hazard now."]),
            q("VS3_Q3", "What should the ego pay most attention to?",
              ["Traffic from the side.",
               "Traffic directly ahead.",
               "People or two-wheelers nearby.",
               "Nothing stands out strongly."],
              ["The ego should pay most attention to traffic from the side.",
               "The ego should pay most attention to traffic directly ahead.",
               "The ego should pay most attention to people or two-wheelers nearby.",
               "Nothing stands out strongly for the ego to attend to."]),
        ]),
        task(TaskId::VS4, vec![
            q("VS4_Q1", "What will the ego vehicle likely do next?",
              ["Go straight.",
               "Slow down.",
               "Turn or change lanes.",
               "It is unclear."],
              ["The ego vehicle will likely go straight next.",
               "The ego vehicle will likely slow down next.",
               "The ego vehicle will likely turn or change lanes next.",
               "The next action of the ego vehicle is unclear."]),
            q("VS4_Q2", "How is the ego vehicle likely to move?",
              ["Keep moving forward.",
               "Make a left turn.",
               "Make a right turn.",
               "Change lanes."],
              ["The ego vehicle is likely to keep moving forward.",
               "The ego vehicle is likely to make a left turn.",
               "The ego vehicle is likely to make a right turn.",
               "The ego vehicle is likely to change lanes."]),
            q("VS4_Q3", "What is the most likely next action of the ego vehicle?",
              ["Go straight.",
               "Turn left.",
               "Turn right.",
               "Change lanes."],
              ["The most likely action is to go straight.",
               "The most likely action is to turn left.",
               "The most likely action is to turn right.",
               "The most likely action is to change lanes."]),
        ]),
        task(TaskId::IS1, vec![
            q("IS1_Q1", "What is the most prominent layout feature in this RSU view?",
              ["A regular intersection.",
               "A curved road approach.",
               "Strong turn guidance.",
               "A complex layout."],
              ["The most prominent layout feature in this RSU view is a regular intersection.",
               "The most prominent layout feature in this RSU view is a curved road approach.",
               "The most prominent layout feature in this RSU view is strong turn guidance.",
               "The most prominent layout feature in this RSU view is a complex layout."]),
            q("IS1_Q2", "Which intersection feature stands out most in this RSU view?",
              ["A regular intersection shape.",
               "A curved approach road.",
               "Clear turn guidance.",
               "A complex road layout."],
              ["The most prominent feature in this RSU view is a regular intersection shape.",
               "The most prominent feature in this RSU view is a curved approach road.",
               "The most prominent feature in this RSU view is clear turn guidance.",
               "The most prominent feature in this RSU view is a complex road layout."]),
            q("IS1_Q3", "How should this RSU-view intersection be described?",
              ["A standard intersection.",
               "An intersection with a curved approach.",
               "An intersection with strong turn guidance.",
               "An intersection with a complex layout."],
              ["This RSU-view intersection is best described as a standard intersection.",
               "This RSU-view intersection is best described as an intersection with a curved approach.",
               "This RSU-view intersection is best described as an intersection with strong turn guidance.",
               "This RSU-view intersection is best described as an intersection with a complex layout."]),
        ]),
        task(TaskId::IS2, vec![
            q("IS2_Q1", "What best describes the traffic in the RSU view?",
              ["Light traffic.",
               "Many cars close together.",
               "Mixed traffic with vulnerable users.",
               "A large vehicle stands out."],
              ["The RSU view shows light traffic.",
               "The RSU view shows many cars close together.",
               "The RSU view shows mixed traffic with vulnerable users.",
               "The RSU view is dominated by a large vehicle."]),
            q("IS2_Q2", "Which traffic pattern is most clear?",
              ["Sparse movement.",
               "Dense vehicle group.",
               "Mixed road users.",
               "One large vehicle."],
              ["The clearest traffic pattern is sparse movement.",
               "The clearest traffic pattern is a dense vehicle group.",
               "The clearest traffic pattern is mixed road users.",
               "The clearest traffic pattern is one large vehicle."]),
            q("IS2_Q3", "What is the key traffic feature here?",
              ["Few active agents.",
               "Clustered vehicles.",
               "Different user types.",
               "A standout truck or bus."],
              ["The key traffic feature is few active agents.",
               "The key traffic feature is clustered vehicles.",
               "The key traffic feature is different user types.",
               "The key traffic feature is a standout truck or bus."]),
        ]),
        task(TaskId::IS3, vec![
            q("IS3_Q1", "What is the main global risk?",
              ["A wet road surface.",
               "Dense vehicle interaction.",
               "Vulnerable road users.",
               "No clear global risk."],
              ["The main global risk is a wet road surface.",
               "The main global risk is dense vehicle interaction.",
               "The main global risk is vulnerable road users.",
               "There is no clear global risk."]),
            q("IS3_Q2", "Which risk matters most in the RSU view?",
              ["A wet slippery surface.",
               "Crowded traffic flow.",
               "Pedestrian or rider exposure.",
               "Nothing stands out strongly."],
              ["The most important RSU-view risk is a wet slippery surface.",
               "The most important RSU-view risk is crowded traffic flow.",
               "The most important RSU-view risk is pedestrian or rider exposure.",
               "No risk stands out strongly in the RSU view."]),
            q("IS3_Q3", "What deserves the most caution here?",
              ["A wet road surface.",
               "Heavy interaction among vehicles.",
               "Nearby vulnerable users.",
               "No major caution point."],
              ["The main caution point is a wet road surface.",
               "The main caution point is heavy interaction among vehicles.",
               "The main caution point is nearby vulnerable users.",
               "There is no major caution point."]),
        ]),
        task(TaskId::IS4, vec![
            q("IS4_Q1", "What is the clearest long-range cue?",
              ["A far large vehicle.",
               "A far vehicle group.",
               "A work zone ahead.",
               "No strong long-range cue."],
              ["The clearest long-range cue is a far large vehicle.",
               "The clearest long-range cue is a far vehicle group.",
               "The clearest long-range cue is a work zone ahead.",
               "There is no strong long-range cue."]),
            q("IS4_Q2", "Which distant feature stands out most?",
              ["A distant truck or bus.",
               "A distant traffic cluster.",
               "A distant work zone.",
               "Nothing distant stands out."],
              ["The most salient distant feature is a truck or bus.",
               "The most salient distant feature is a traffic cluster.",
               "The most salient distant feature is a work zone.",
               "No distant feature stands out."]),
            q("IS4_Q3", "What useful far-field cue is visible?",
              ["A large far-field agent.",
               "A far buildup of traffic.",
               "A far work zone.",
               "No obvious far-field cue."],
              ["The useful far-field cue is a large far-field agent.",
               "The useful far-field cue is a far buildup of traffic.",
               "The useful far-field cue is a far work zone.",
               "There is no obvious far-field cue."]),
        ]),
        task(TaskId::CO1, vec![
            q("CO1_Q1", "With both views, what best describes the ego path?",
              ["The path looks clear.",
               "Cross traffic affects the path.",
               "The path is constrained.",
               "The path is still unclear."],
              ["With both views, the ego path looks clear.",
               "With both views, cross traffic affects the ego path.",
               "With both views, the ego path is constrained.",
               "With both views, the ego path is still unclear."]),
            q("CO1_Q2", "What is the main joint scene result?",
              ["Open path ahead.",
               "Crossing activity matters.",
               "The lane area is limited.",
               "Joint evidence remains weak."],
              ["The main joint scene result is an open path ahead.",
               "The main joint scene result is that crossing activity matters.",
               "The main joint scene result is that the lane area is limited.",
               "The main joint scene result is that the joint evidence remains weak."]),
            q("CO1_Q3", "How should the cooperative scene be summarized?",
              ["Mostly clear forward scene.",
               "Cross-view conflict scene.",
               "Restricted-path scene.",
               "Uncertain combined scene."],
              ["The cooperative scene is best summarized as a mostly clear forward scene.",
               "The cooperative scene is best summarized as a cross-view conflict scene.",
               "The cooperative scene is best summarized as a restricted-path scene.",
               "The cooperative scene is best summarized as an uncertain combined scene."]),
        ]),
        task(TaskId::CO2, vec![
            q("CO2_Q1", "What does cooperation add most?",
              ["An occluded road user becomes clear.",
               "A blurred ego-view scene becomes clear.",
               "A long-range cue becomes clear.",
               "It adds little new information."],
              ["Cooperation mainly makes an occluded road user clear.",
               "Cooperation mainly makes a blurred ego-view scene clear.",
               "Cooperation mainly makes a long-range cue clear.",
               "Cooperation adds little new information."]),
            q("CO2_Q2", "Which missing cue is best recovered by cooperation?",
              ["An occluded road-user cue.",
               "A cue missing from the blurred ego view.",
               "A long-range cue.",
               "No important cue is recovered."],
              ["The best recovered missing cue is an occluded road-user cue.",
               "The best recovered missing cue is a cue missing from the blurred ego view.",
               "The best recovered missing cue is a long-range cue.",
               "No important cue is recovered."]),
            q("CO2_Q3", "What is the main value of the second view?",
              ["It reveals an occluded road user.",
               "It clarifies a blurred ego view.",
               "It provides a long-range cue.",
               "Its added value is limited."],
              ["The main value of the second view is that it reveals an occluded road user.",
               "The main value of the second view is that it clarifies a blurred ego view.",
               "The main value of the second view is that it provides a long-range cue.",
               "The added value of the second view is limited."]),
        ]),
        task(TaskId::CO3, vec![
            q("CO3_Q1", "With both views, what will the ego vehicle do next?",
              ["Go straight.",
               "Make a left turn.",
               "Make a right turn.",
               "Change lanes."],
              ["With both views, the ego vehicle will likely go straight next.",
               "With both views, the ego vehicle will likely make a left turn next.",
               "With both views, the ego vehicle will likely make a right turn next.",
               "With both views, the ego vehicle will likely change lanes."]),
            q("CO3_Q2", "What motion is most likely for the ego vehicle after combining views?",
              ["Go straight.",
               "Make a left turn.",
               "Make a right turn.",
               "Change lanes."],
              ["After combining views, the ego vehicle is most likely to go straight.",
               "After combining views, the ego vehicle is most likely to make a left turn.",
               "After combining views, the ego vehicle is most likely to make a right turn.",
               "After combining views, the ego vehicle is most likely to change lanes."]),
            q("CO3_Q3", "What is the best cooperative prediction for the ego vehicle?",
              ["Go straight.",
               "Make a left turn.",
               "Make a right turn.",
               "Change lanes."],
              ["The best short-term cooperative prediction for the ego vehicle is to go straight.",
               "The best short-term cooperative prediction for the ego vehicle is to make a left turn.",
               "The best short-term cooperative prediction for the ego vehicle is to make a right turn.",
               "The best short-term cooperative prediction for the ego vehicle is to change lanes."]),
        ]),
        task(TaskId::CO4, vec![
            q("CO4_Q1", "With both views, what should the ego vehicle do immediately?",
              ["Accelerate.",
               "Reduce speed.",
               "Keep the current speed.",
               "Yield or prepare to stop."],
              ["With both views, the ego vehicle should accelerate.",
               "With both views, the ego vehicle should reduce speed.",
               "With both views, the ego vehicle should keep the current speed.",
               "With both views, the ego vehicle should yield or prepare to stop."]),
            q("CO4_Q2", "With both views, what is the best immediate ego action?",
              ["Accelerate.",
               "Reduce speed.",
               "Keep the current speed.",
               "Yield or prepare to stop."],
              ["With both views, the best immediate ego action is to accelerate.",
               "With both views, the best immediate ego action is to reduce speed.",
               "With both views, the best immediate ego action is to keep the current speed.",
               "With both views, the best immediate ego action is to yield or prepare to stop."]),
            q("CO4_Q3", "With both views, what is the best immediate planning choice?",
              ["Pick up speed.",
               "Slow down.",
               "Maintain the current speed.",
               "Yield or get ready to stop."],
              ["With both views, the best immediate planning choice is to pick up speed.",
               "With both views, the best immediate planning choice is to slow down.",
               "With both views, the best immediate planning choice is to maintain the current speed.",
               "With both views, the best immediate planning choice is to yield or get ready to stop."]),
        ]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_twelve_tasks_and_thirty_six_questions() {
        let bank = load_task_bank().unwrap();
        assert_eq!(bank.tasks().len(), 12);
        let qids = bank.all_qids();
        assert_eq!(qids.len(), 36);
        let unique: std::collections::HashSet<_> = qids.iter().collect();
        assert_eq!(unique.len(), 36);
        for t in bank.tasks() {
            for q in &t.questions {
                assert_eq!(q.options.len(), 4);
                assert_eq!(q.canonical_answers.len(), 4);
            }
        }
    }

    #[test]
    fn vs4_q3_options_match_reference_text() {
        let bank = load_task_bank().unwrap();
        let q = bank.question("VS4_Q3").unwrap();
        assert_eq!(
            q.options,
            ["Go straight.", "Turn left.", "Turn right.", "Change lanes."].map(str::to_string)
        );
    }

    #[test]
    fn canonical_answer_lookups() {
        let bank = load_task_bank().unwrap();
        assert_eq!(
            canonical_answer(&bank, "VS3_Q1", OptionLetter::D).unwrap(),
            "There is no clear risk ahead."
        );
        assert_eq!(
            canonical_answer(&bank, "CO4_Q1", OptionLetter::B).unwrap(),
            "With both views, the ego vehicle should reduce speed."
        );
        assert!(matches!(
            canonical_answer(&bank, "XX9_Q1", OptionLetter::A),
            Err(Error::UnknownQid(_))
        ));
    }

    #[test]
    fn load_is_pure() {
        let a = load_task_bank().unwrap();
        let b = load_task_bank().unwrap();
        assert_eq!(a.canonical_serialization(), b.canonical_serialization());
    }

    #[test]
    fn assignment_counts_are_balanced() {
        let bank = load_task_bank().unwrap();
        let vs1 = bank.task(TaskId::VS1);
        let assigned = assign_questions(3000, vs1, 7);
        for j in 1..=3 {
            let qid = format!("VS1_Q{j}");
            assert_eq!(assigned.iter().filter(|q| **q == qid).count(), 1000);
        }

        let is1 = bank.task(TaskId::IS1);
        let assigned = assign_questions(2652, is1, 7);
        for j in 1..=3 {
            let qid = format!("IS1_Q{j}");
            assert_eq!(assigned.iter().filter(|q| **q == qid).count(), 884);
        }

        let co1 = bank.task(TaskId::CO1);
        let one = assign_questions(1, co1, 7);
        assert_eq!(one.len(), 1);
        assert!(one[0].starts_with("CO1_Q"));
    }

    #[test]
    fn assignment_is_deterministic_and_near_balanced() {
        let bank = load_task_bank().unwrap();
        for n in [0usize, 1, 2, 5, 100, 1001] {
            let t = bank.task(TaskId::VS2);
            let a = assign_questions(n, t, 42);
            let b = assign_questions(n, t, 42);
            assert_eq!(a, b);
            let counts: Vec<usize> = (1..=3)
                .map(|j| a.iter().filter(|q| **q == format!("VS2_Q{j}")).count())
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "n={n} counts={counts:?}");
        }
    }
}
