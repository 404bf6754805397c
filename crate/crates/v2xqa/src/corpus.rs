//! Synthetic paired-scene fixtures, MCQA sample construction, option
//! shuffling with gold remapping, and the question-aware pair-consistent
//! train/test split.
//!
//! Scenes stand in for image evidence: each scene carries one categorical
//! truth attribute per task, serialized as a fixed-vocabulary token sequence
//! with view-specific masking. Cooperative attributes are never readable from
//! a single view; each view carries one XOR share of the value, so the
//! attribute is recoverable only when both views are present.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::EvidenceRef;
use crate::taskbank::{assign_questions, OptionLetter, TaskBank, TaskId, ViewpointGroup};
use crate::{Error, Result};

pub const MASK_TOKEN: &str = "vmask";

/// Latent categorical truth of a scene: one 4-valued attribute per task
/// (indexed by task ordinal), plus the vehicle-side XOR shares of the four
/// cooperative attributes. The infrastructure-side share is derived so that
/// vs_share XOR is_share recovers the attribute value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub attrs: [u8; 12],
    pub co_shares_vs: [u8; 4],
}

impl SceneTruth {
    pub fn co_share_is(&self, co_index: usize) -> u8 {
        self.attrs[8 + co_index] ^ self.co_shares_vs[co_index]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub vs_evidence: Vec<String>,
    pub is_evidence: Option<Vec<String>>,
    pub truth: SceneTruth,
    pub is_paired: bool,
}

/// One view-conditioned MCQA instance. `option_order[p]` is the original
/// option index shown in presented slot `p`; `gold_letter` is the presented
/// slot of the correct option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaSample {
    pub sample_id: u64,
    pub scene_id: u64,
    pub view: ViewpointGroup,
    pub task_id: TaskId,
    pub qid: String,
    pub option_order: [u8; 4],
    pub gold_letter: OptionLetter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_scene_ids: BTreeSet<u64>,
    pub test_scene_ids: BTreeSet<u64>,
    pub per_question_test_counts: BTreeMap<String, usize>,
}

/// Categorical skew of the fixture truth attributes. The majority value of
/// each task gets `majority_prob`; the remaining mass is split evenly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub majority_prob: f64,
    pub majority_value: [u8; 12],
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let mut majority_value = [0u8; 12];
        for (i, v) in majority_value.iter_mut().enumerate() {
            *v = (i % 4) as u8;
        }
        FixtureConfig {
            majority_prob: 0.5,
            majority_value,
        }
    }
}

fn draw_attr(rng: &mut impl Rng, majority: u8, p_major: f64) -> u8 {
    let u: f64 = rng.gen();
    if u < p_major {
        majority
    } else {
        let others: Vec<u8> = (0..4).filter(|v| *v != majority).collect();
        let rest = (u - p_major) / (1.0 - p_major);
        others[((rest * 3.0) as usize).min(2)]
    }
}

/// Generate `n_scenes` synthetic scenes, the first `n_paired` of which carry
/// an infrastructure-side view.
pub fn gen_fixtures(n_scenes: usize, n_paired: usize, seed: u64, cfg: &FixtureConfig) -> Result<Vec<SceneRecord>> {
    if n_paired > n_scenes {
        return Err(Error::InvalidArgument(format!(
            "n_paired ({n_paired}) exceeds n_scenes ({n_scenes})"
        )));
    }
    if !(0.0..1.0).contains(&cfg.majority_prob) {
        return Err(Error::InvalidArgument("majority_prob must be in [0,1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(n_scenes);
    for scene_id in 0..n_scenes as u64 {
        let mut attrs = [0u8; 12];
        for (i, a) in attrs.iter_mut().enumerate() {
            *a = draw_attr(&mut rng, cfg.majority_value[i], cfg.majority_prob);
        }
        let co_shares_vs = [
            rng.gen_range(0..4u8),
            rng.gen_range(0..4u8),
            rng.gen_range(0..4u8),
            rng.gen_range(0..4u8),
        ];
        let truth = SceneTruth { attrs, co_shares_vs };
        let is_paired = scene_id < n_paired as u64;
        let vs_evidence = serialize_view(&truth, EvidenceRef::VehicleSide);
        let is_evidence = is_paired.then(|| serialize_view(&truth, EvidenceRef::InfrastructureSide));
        scenes.push(SceneRecord {
            scene_id,
            vs_evidence,
            is_evidence,
            truth,
            is_paired,
        });
    }
    Ok(scenes)
}

/// Token serialization of one view: (attribute-name token, value token) pairs
/// for the view's own attributes, followed by the view's cooperative shares.
fn serialize_view(truth: &SceneTruth, view: EvidenceRef) -> Vec<String> {
    let mut tokens = Vec::new();
    match view {
        EvidenceRef::VehicleSide => {
            for k in 0..4 {
                tokens.push(format!("a_vs{}", k + 1));
                tokens.push(format!("v{}", truth.attrs[k]));
            }
            for k in 0..4 {
                tokens.push(format!("h_co{}_v", k + 1));
                tokens.push(format!("v{}", truth.co_shares_vs[k]));
            }
        }
        EvidenceRef::InfrastructureSide => {
            for k in 0..4 {
                tokens.push(format!("a_is{}", k + 1));
                tokens.push(format!("v{}", truth.attrs[4 + k]));
            }
            for k in 0..4 {
                tokens.push(format!("h_co{}_i", k + 1));
                tokens.push(format!("v{}", truth.co_share_is(k)));
            }
        }
    }
    tokens
}

fn mask_values(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            if t.starts_with('v') && t.len() == 2 {
                MASK_TOKEN.to_string()
            } else {
                t.clone()
            }
        })
        .collect()
}

/// Evidence token sequence a model sees for a sample of the given view.
/// `masked` optionally blanks the value tokens of one constituent view (used
/// for cooperative ablations).
pub fn evidence_tokens(scene: &SceneRecord, view: ViewpointGroup, masked: Option<EvidenceRef>) -> Result<Vec<String>> {
    let is_ev = || {
        scene
            .is_evidence
            .as_ref()
            .ok_or_else(|| Error::Corpus(format!("scene {} has no infrastructure-side evidence", scene.scene_id)))
    };
    let apply = |tokens: &[String], this: EvidenceRef| {
        if masked == Some(this) {
            mask_values(tokens)
        } else {
            tokens.to_vec()
        }
    };
    match view {
        ViewpointGroup::VS => Ok(apply(&scene.vs_evidence, EvidenceRef::VehicleSide)),
        ViewpointGroup::IS => Ok(apply(is_ev()?, EvidenceRef::InfrastructureSide)),
        ViewpointGroup::CO => {
            let mut t = apply(&scene.vs_evidence, EvidenceRef::VehicleSide);
            t.extend(apply(is_ev()?, EvidenceRef::InfrastructureSide));
            Ok(t)
        }
    }
}

/// Presented-option letter implied by a truth value for a given question of a
/// task. Identity for most questions; a few questions pool several truth
/// values onto one option.
pub fn gold_letter_for(task_id: TaskId, question_index: usize, value: u8) -> OptionLetter {
    let idx = match (task_id, question_index) {
        // "slow down" / "unclear" slots are never implied by the motion attribute
        (TaskId::VS4, 0) => [0, 2, 2, 2][value as usize],
        // wet-surface hazard slot is pooled onto the vehicle-conflict option
        (TaskId::VS3, 1) => [1, 1, 2, 3][value as usize],
        _ => value as usize,
    };
    OptionLetter::from_index(idx).unwrap()
}

fn question_index(qid: &str) -> usize {
    qid.as_bytes()[qid.len() - 1] as usize - b'1' as usize
}

/// Build the full sample set: every scene contributes two tasks per
/// applicable view group, assigned round-robin by scene id, with question ids
/// balanced per task.
pub fn build_samples(scenes: &[SceneRecord], bank: &TaskBank, seed: u64) -> Result<Vec<McqaSample>> {
    if scenes.is_empty() {
        return Err(Error::Corpus("no scenes".into()));
    }
    let mut samples = Vec::new();
    let mut sample_id = 0u64;
    for view in ViewpointGroup::ALL {
        let applicable: Vec<&SceneRecord> = match view {
            ViewpointGroup::VS => scenes.iter().collect(),
            ViewpointGroup::IS | ViewpointGroup::CO => scenes.iter().filter(|s| s.is_paired).collect(),
        };
        for s in &applicable {
            if s.is_paired && s.is_evidence.is_none() {
                return Err(Error::Corpus(format!("scene {} marked paired without evidence", s.scene_id)));
            }
        }
        // scene i covers group tasks (2i mod 4) and (2i+1 mod 4)
        for task_index in 0..4usize {
            let task_id = group_task(view, task_index);
            let task = bank.task(task_id);
            let contributing: Vec<&SceneRecord> = applicable
                .iter()
                .copied()
                .filter(|s| {
                    let i = s.scene_id as usize;
                    (2 * i) % 4 == task_index || (2 * i + 1) % 4 == task_index
                })
                .collect();
            let qids = assign_questions(contributing.len(), task, seed);
            for (scene, qid) in contributing.iter().zip(qids) {
                let value = scene.truth.attrs[task_id.ordinal()];
                let gold_letter = gold_letter_for(task_id, question_index(&qid), value);
                samples.push(McqaSample {
                    sample_id,
                    scene_id: scene.scene_id,
                    view,
                    task_id,
                    qid,
                    option_order: [0, 1, 2, 3],
                    gold_letter,
                });
                sample_id += 1;
            }
        }
    }
    Ok(samples)
}

fn group_task(view: ViewpointGroup, index: usize) -> TaskId {
    let base = match view {
        ViewpointGroup::VS => 0,
        ViewpointGroup::IS => 4,
        ViewpointGroup::CO => 8,
    };
    TaskId::ALL[base + index]
}

/// Uniformly permute the presented options and remap the gold letter so the
/// underlying correct option is unchanged.
pub fn shuffle_options_with(sample: &McqaSample, rng: &mut impl Rng) -> McqaSample {
    let mut perm = [0u8, 1, 2, 3];
    perm.shuffle(rng);
    let original_gold = sample.option_order[sample.gold_letter.index()];
    let new_slot = perm.iter().position(|&o| o == original_gold).unwrap();
    McqaSample {
        option_order: perm,
        gold_letter: OptionLetter::from_index(new_slot).unwrap(),
        ..sample.clone()
    }
}

pub fn shuffle_options(sample: &McqaSample, seed: u64) -> McqaSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sample.sample_id.wrapping_mul(0x9e3779b97f4a7c15));
    shuffle_options_with(sample, &mut rng)
}

/// Question-aware pair-consistent split. Test scenes are drawn from the
/// cooperative subset per question group so that each CO task contributes
/// exactly round(test_frac × its sample count) test samples; the selected
/// scene ids then define the test partition for every view.
pub fn make_split(samples: &[McqaSample], scenes: &[SceneRecord], test_frac: f64, seed: u64) -> Result<DatasetSplit> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("test_frac {test_frac} outside (0,1)")));
    }
    let co_samples: Vec<&McqaSample> = samples.iter().filter(|s| s.view == ViewpointGroup::CO).collect();
    if co_samples.is_empty() {
        return Err(Error::Split("no cooperative samples".into()));
    }
    for task_id in [TaskId::CO1, TaskId::CO2, TaskId::CO3, TaskId::CO4] {
        for j in 1..=3 {
            let qid = format!("{task_id}_Q{j}");
            if !co_samples.iter().any(|s| s.qid == qid) {
                return Err(Error::Split(format!("question group {qid} has no samples")));
            }
        }
    }

    // Each paired scene holds two CO samples; its anchor is the lower-indexed
    // CO task (CO1 for even scene ids, CO3 for odd). Scenes are grouped by the
    // anchor sample's qid and drawn per group.
    let mut test_scene_ids = BTreeSet::new();
    for (anchor_task, parity) in [(TaskId::CO1, 0u64), (TaskId::CO3, 1u64)] {
        let task_samples: Vec<&&McqaSample> = co_samples.iter().filter(|s| s.task_id == anchor_task).collect();
        let target = (test_frac * task_samples.len() as f64).round() as usize;

        let mut groups: Vec<Vec<u64>> = Vec::new();
        for j in 1..=3 {
            let qid = format!("{anchor_task}_Q{j}");
            let mut scene_ids: Vec<u64> = task_samples
                .iter()
                .filter(|s| s.qid == qid)
                .map(|s| s.scene_id)
                .collect();
            debug_assert!(scene_ids.iter().all(|id| id % 2 == parity));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (anchor_task.ordinal() as u64) << 8 ^ j as u64);
            scene_ids.shuffle(&mut rng);
            groups.push(scene_ids);
        }

        let mut taken: Vec<usize> = groups
            .iter()
            .map(|g| (test_frac * g.len() as f64).floor() as usize)
            .collect();
        let mut total: usize = taken.iter().sum();
        let mut j = 0;
        while total < target {
            if taken[j] < groups[j].len() {
                taken[j] += 1;
                total += 1;
            }
            j = (j + 1) % 3;
        }
        for (g, k) in groups.iter().zip(&taken) {
            test_scene_ids.extend(g.iter().take(*k));
        }
    }

    let train_scene_ids: BTreeSet<u64> = scenes
        .iter()
        .map(|s| s.scene_id)
        .filter(|id| !test_scene_ids.contains(id))
        .collect();

    let mut per_question_test_counts = BTreeMap::new();
    for s in samples {
        if test_scene_ids.contains(&s.scene_id) {
            *per_question_test_counts.entry(s.qid.clone()).or_insert(0) += 1;
        }
    }

    Ok(DatasetSplit {
        train_scene_ids,
        test_scene_ids,
        per_question_test_counts,
    })
}

impl DatasetSplit {
    pub fn is_test(&self, scene_id: u64) -> bool {
        self.test_scene_ids.contains(&scene_id)
    }
}

/// JSONL row for one sample: self-contained (presented option texts plus the
/// evidence token sequence the sample's view exposes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: u64,
    pub scene_id: u64,
    pub view: ViewpointGroup,
    pub task_id: TaskId,
    pub qid: String,
    pub option_order: [u8; 4],
    pub options: [String; 4],
    pub gold_letter: OptionLetter,
    pub evidence: Vec<String>,
}

pub fn sample_row(sample: &McqaSample, bank: &TaskBank, scene: &SceneRecord) -> Result<SampleRow> {
    let question = bank.question(&sample.qid)?;
    let options = sample
        .option_order
        .map(|orig| question.options[orig as usize].clone());
    Ok(SampleRow {
        sample_id: sample.sample_id,
        scene_id: sample.scene_id,
        view: sample.view,
        task_id: sample.task_id,
        qid: sample.qid.clone(),
        option_order: sample.option_order,
        options,
        gold_letter: sample.gold_letter,
        evidence: evidence_tokens(scene, sample.view, None)?,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn scene_map(scenes: &[SceneRecord]) -> BTreeMap<u64, &SceneRecord> {
    scenes.iter().map(|s| (s.scene_id, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskbank::load_task_bank;

    #[test]
    fn fixture_counts_and_pairing() {
        let cfg = FixtureConfig::default();
        let scenes = gen_fixtures(20, 12, 3, &cfg).unwrap();
        assert_eq!(scenes.len(), 20);
        assert_eq!(scenes.iter().filter(|s| s.is_paired).count(), 12);
        assert!(scenes.iter().all(|s| s.is_paired == s.is_evidence.is_some()));

        let none = gen_fixtures(10, 0, 3, &cfg).unwrap();
        assert!(none.iter().all(|s| !s.is_paired));
        let one = gen_fixtures(1, 1, 3, &cfg).unwrap();
        assert!(one[0].is_paired);
        assert!(gen_fixtures(3, 4, 3, &cfg).is_err());
    }

    #[test]
    fn fixtures_are_deterministic() {
        let cfg = FixtureConfig::default();
        let a = gen_fixtures(50, 30, 9, &cfg).unwrap();
        let b = gen_fixtures(50, 30, 9, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn co_attribute_absent_from_single_views() {
        let cfg = FixtureConfig::default();
        let scenes = gen_fixtures(8, 8, 11, &cfg).unwrap();
        for s in &scenes {
            // single-view tokens never contain the CO attribute value directly,
            // only shares; their XOR reconstructs it
            for k in 0..4 {
                let vs_share = s.truth.co_shares_vs[k];
                let is_share = s.truth.co_share_is(k);
                assert_eq!(vs_share ^ is_share, s.truth.attrs[8 + k]);
            }
        }
    }

    #[test]
    fn three_paired_scenes_give_six_samples_per_view() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(3, 3, 5, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 5).unwrap();
        for view in ViewpointGroup::ALL {
            assert_eq!(samples.iter().filter(|s| s.view == view).count(), 6, "{view}");
        }
    }

    #[test]
    fn build_samples_rejects_empty() {
        let bank = load_task_bank().unwrap();
        assert!(build_samples(&[], &bank, 1).is_err());
    }

    #[test]
    fn shuffle_preserves_underlying_gold() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(4, 4, 2, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 2).unwrap();
        for s in &samples {
            let shuffled = shuffle_options(s, 77);
            let orig_gold = s.option_order[s.gold_letter.index()];
            let new_gold = shuffled.option_order[shuffled.gold_letter.index()];
            assert_eq!(orig_gold, new_gold);
        }
    }

    #[test]
    fn forced_permutation_moves_gold() {
        // permutation showing original option 0 in slot C means gold A -> C
        let s = McqaSample {
            sample_id: 1,
            scene_id: 0,
            view: ViewpointGroup::VS,
            task_id: TaskId::VS1,
            qid: "VS1_Q1".into(),
            option_order: [0, 1, 2, 3],
            gold_letter: OptionLetter::A,
        };
        let moved = McqaSample {
            option_order: [1, 2, 0, 3],
            gold_letter: OptionLetter::C,
            ..s.clone()
        };
        let orig = s.option_order[s.gold_letter.index()];
        assert_eq!(moved.option_order[moved.gold_letter.index()], orig);
    }

    #[test]
    fn shuffle_slot_frequency_is_uniform() {
        let s = McqaSample {
            sample_id: 0,
            scene_id: 0,
            view: ViewpointGroup::VS,
            task_id: TaskId::VS1,
            qid: "VS1_Q1".into(),
            option_order: [0, 1, 2, 3],
            gold_letter: OptionLetter::B,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let shuffled = shuffle_options_with(&s, &mut rng);
            counts[shuffled.gold_letter.index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn small_split_takes_one_scene_per_group() {
        // 10 paired scenes per anchor question group: 60 even + 60 odd scenes
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(120, 120, 4, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 4).unwrap();
        let split = make_split(&samples, &scenes, 0.10, 4).unwrap();
        // each anchor task has 60 samples -> target 6 test scenes per parity
        assert_eq!(split.test_scene_ids.len(), 12);
        for task_id in [TaskId::CO1, TaskId::CO2, TaskId::CO3, TaskId::CO4] {
            let n = samples
                .iter()
                .filter(|s| s.task_id == task_id && split.is_test(s.scene_id))
                .count();
            assert_eq!(n, 6, "{task_id}");
        }
    }

    #[test]
    fn split_has_no_leakage() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(200, 160, 8, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 8).unwrap();
        let split = make_split(&samples, &scenes, 0.10, 8).unwrap();
        assert!(split.train_scene_ids.is_disjoint(&split.test_scene_ids));
        for view in ViewpointGroup::ALL {
            let train: BTreeSet<u64> = samples
                .iter()
                .filter(|s| s.view == view && !split.is_test(s.scene_id))
                .map(|s| s.scene_id)
                .collect();
            let test: BTreeSet<u64> = samples
                .iter()
                .filter(|s| s.view == view && split.is_test(s.scene_id))
                .map(|s| s.scene_id)
                .collect();
            assert!(train.is_disjoint(&test), "{view}");
        }
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(40, 40, 1, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 1).unwrap();
        assert!(make_split(&samples, &scenes, 0.0, 1).is_err());
        assert!(make_split(&samples, &scenes, 1.0, 1).is_err());
        let vs_only: Vec<McqaSample> = samples
            .iter()
            .filter(|s| s.view == ViewpointGroup::VS)
            .cloned()
            .collect();
        assert!(make_split(&vs_only, &scenes, 0.1, 1).is_err());
    }

    #[test]
    fn gold_consistency_through_bank() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(24, 24, 6, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 6).unwrap();
        let by_id = scene_map(&scenes);
        for s in &samples {
            let shuffled = shuffle_options(s, 99);
            let scene = by_id[&shuffled.scene_id];
            let value = scene.truth.attrs[shuffled.task_id.ordinal()];
            let expected = gold_letter_for(shuffled.task_id, question_index(&shuffled.qid), value);
            // presented gold slot must show the expected original option
            assert_eq!(
                shuffled.option_order[shuffled.gold_letter.index()] as usize,
                expected.index()
            );
        }
    }

    #[test]
    fn evidence_masking_blanks_values() {
        let scenes = gen_fixtures(2, 2, 13, &FixtureConfig::default()).unwrap();
        let co = evidence_tokens(&scenes[0], ViewpointGroup::CO, Some(EvidenceRef::InfrastructureSide)).unwrap();
        let n_masked = co.iter().filter(|t| *t == MASK_TOKEN).count();
        assert_eq!(n_masked, 8);
        let unmasked = evidence_tokens(&scenes[0], ViewpointGroup::CO, None).unwrap();
        assert_eq!(unmasked.len(), 32);
        assert!(!unmasked.iter().any(|t| t == MASK_TOKEN));
    }
}
