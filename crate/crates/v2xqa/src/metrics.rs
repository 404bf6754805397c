//! Accuracy scoring, answer-distribution diagnostics, and calibration
//! analysis (ECE, Brier, reliability-diagram export).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::{ParseOutcome, ParsedAnswer};
use crate::taskbank::{OptionLetter, TaskId, ViewpointGroup};
use crate::{Error, Result};

/// Default number of confidence bins.
pub const DEFAULT_BINS: usize = 12;

/// One evaluated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub sample_id: u64,
    pub view: ViewpointGroup,
    pub task_id: TaskId,
    pub qid: String,
    pub gold_letter: OptionLetter,
    pub predicted: ParsedAnswer,
    pub correct: bool,
    pub probs: Option<[f64; 4]>,
    pub confidence: Option<f64>,
}

impl ResultRow {
    pub fn new(
        sample_id: u64,
        view: ViewpointGroup,
        task_id: TaskId,
        qid: String,
        gold_letter: OptionLetter,
        predicted: ParsedAnswer,
        probs: Option<[f64; 4]>,
    ) -> ResultRow {
        let correct = predicted.letter() == Some(gold_letter);
        let confidence = probs.map(|p| p.iter().cloned().fold(f64::MIN, f64::max));
        ResultRow {
            sample_id,
            view,
            task_id,
            qid,
            gold_letter,
            predicted,
            correct,
            probs,
            confidence,
        }
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self.predicted.outcome, ParseOutcome::Invalid)
    }
}

/// Per-task accuracies, per-view averages (mean of the view's four task
/// accuracies), overall accuracy, and the invalid-prediction rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTable {
    pub per_task: BTreeMap<TaskId, f64>,
    pub per_view: BTreeMap<ViewpointGroup, f64>,
    pub overall: f64,
    pub invalid_rate: f64,
    pub n: usize,
}

pub fn score(rows: &[ResultRow]) -> Result<ScoreTable> {
    if rows.is_empty() {
        return Err(Error::Metric("no rows to score".into()));
    }
    let mut per_task = BTreeMap::new();
    for task_id in TaskId::ALL {
        let task_rows: Vec<&ResultRow> = rows.iter().filter(|r| r.task_id == task_id).collect();
        if task_rows.is_empty() {
            continue;
        }
        let acc = task_rows.iter().filter(|r| r.correct).count() as f64 / task_rows.len() as f64;
        per_task.insert(task_id, acc);
    }
    let mut per_view = BTreeMap::new();
    for view in ViewpointGroup::ALL {
        let accs: Vec<f64> = per_task
            .iter()
            .filter(|(t, _)| t.group() == view)
            .map(|(_, a)| *a)
            .collect();
        if !accs.is_empty() {
            per_view.insert(view, accs.iter().sum::<f64>() / accs.len() as f64);
        }
    }
    let overall = rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64;
    let invalid_rate = rows.iter().filter(|r| r.is_invalid()).count() as f64 / rows.len() as f64;
    Ok(ScoreTable {
        per_task,
        per_view,
        overall,
        invalid_rate,
        n: rows.len(),
    })
}

/// Gold-position concentration diagnostics for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub counts: [usize; 4],
    pub majority_ratio: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionStats {
    pub per_task: BTreeMap<TaskId, TaskDistribution>,
    pub entropy_log_base: u32,
}

pub fn distribution_from_counts(counts: [usize; 4]) -> TaskDistribution {
    let total: usize = counts.iter().sum();
    let majority_ratio = if total == 0 {
        0.0
    } else {
        counts.iter().max().copied().unwrap() as f64 / total as f64
    };
    let mut entropy = 0.0;
    if total > 0 {
        for c in counts {
            if c > 0 {
                let q = c as f64 / total as f64;
                entropy -= q * q.log2();
            }
        }
    }
    TaskDistribution {
        counts,
        majority_ratio,
        entropy_bits: entropy,
    }
}

/// Distribution of correct option positions per task, computed over gold
/// letters.
pub fn answer_distribution<'a, I>(items: I) -> DistributionStats
where
    I: IntoIterator<Item = (TaskId, OptionLetter)>,
{
    let mut counts: BTreeMap<TaskId, [usize; 4]> = BTreeMap::new();
    for (task_id, gold) in items {
        counts.entry(task_id).or_insert([0; 4])[gold.index()] += 1;
    }
    let per_task = counts
        .into_iter()
        .map(|(t, c)| (t, distribution_from_counts(c)))
        .collect();
    DistributionStats {
        per_task,
        entropy_log_base: 2,
    }
}

/// One equal-width confidence bin. Edges are lower-exclusive/upper-inclusive
/// except the first bin, which includes 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub center: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub brier: f64,
    pub n: usize,
    pub n_excluded_invalid: usize,
}

fn bin_index(confidence: f64, m: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    let idx = (confidence * m as f64).ceil() as usize;
    idx.saturating_sub(1).min(m - 1)
}

fn calibratable(rows: &[ResultRow]) -> Result<Vec<&ResultRow>> {
    let usable: Vec<&ResultRow> = rows.iter().filter(|r| !r.is_invalid()).collect();
    if usable.iter().any(|r| r.confidence.is_none()) {
        return Err(Error::Metric("rows missing confidence".into()));
    }
    for r in &usable {
        let c = r.confidence.unwrap();
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Metric(format!("confidence {c} outside [0,1]")));
        }
    }
    Ok(usable)
}

/// Expected calibration error over `m` equal-width bins. Invalid predictions
/// carry no confidence and are excluded.
pub fn ece(rows: &[ResultRow], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Metric("bin count must be >= 1".into()));
    }
    let usable = calibratable(rows)?;
    if usable.is_empty() {
        return Err(Error::Metric("no calibratable rows".into()));
    }
    let n = usable.len() as f64;
    let mut bin_conf = vec![0.0f64; m];
    let mut bin_correct = vec![0usize; m];
    let mut bin_count = vec![0usize; m];
    for r in &usable {
        let b = bin_index(r.confidence.unwrap(), m);
        bin_conf[b] += r.confidence.unwrap();
        bin_correct[b] += usize::from(r.correct);
        bin_count[b] += 1;
    }
    let mut total = 0.0;
    for b in 0..m {
        if bin_count[b] == 0 {
            continue;
        }
        let acc = bin_correct[b] as f64 / bin_count[b] as f64;
        let conf = bin_conf[b] / bin_count[b] as f64;
        total += bin_count[b] as f64 / n * (acc - conf).abs();
    }
    Ok(total)
}

/// Mean squared distance between the 4-way probability vector and the one-hot
/// gold vector.
pub fn brier(rows: &[ResultRow]) -> Result<f64> {
    let usable: Vec<&ResultRow> = rows.iter().filter(|r| !r.is_invalid()).collect();
    if usable.is_empty() {
        return Err(Error::Metric("no rows with probabilities".into()));
    }
    let mut total = 0.0;
    for r in &usable {
        let probs = r
            .probs
            .ok_or_else(|| Error::Metric(format!("row {} missing probabilities", r.sample_id)))?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Metric(format!("row {} probabilities sum to {sum}", r.sample_id)));
        }
        let mut sq = 0.0;
        for (k, p) in probs.iter().enumerate() {
            let y = f64::from(k == r.gold_letter.index());
            sq += (p - y) * (p - y);
        }
        total += sq;
    }
    Ok(total / usable.len() as f64)
}

/// Per-bin reliability data plus ECE/Brier for a row set.
pub fn reliability_export(rows: &[ResultRow], m: usize) -> Result<CalibrationReport> {
    if m == 0 {
        return Err(Error::Metric("bin count must be >= 1".into()));
    }
    let usable = calibratable(rows)?;
    if usable.is_empty() {
        return Err(Error::Metric("no calibratable rows".into()));
    }
    let mut bin_conf = vec![0.0f64; m];
    let mut bin_correct = vec![0usize; m];
    let mut bin_count = vec![0usize; m];
    for r in &usable {
        let b = bin_index(r.confidence.unwrap(), m);
        bin_conf[b] += r.confidence.unwrap();
        bin_correct[b] += usize::from(r.correct);
        bin_count[b] += 1;
    }
    let bins = (0..m)
        .map(|b| CalibrationBin {
            center: (b as f64 + 0.5) / m as f64,
            count: bin_count[b],
            mean_confidence: if bin_count[b] == 0 { 0.0 } else { bin_conf[b] / bin_count[b] as f64 },
            accuracy: if bin_count[b] == 0 {
                0.0
            } else {
                bin_correct[b] as f64 / bin_count[b] as f64
            },
        })
        .collect();
    Ok(CalibrationReport {
        bins,
        ece: ece(rows, m)?,
        brier: brier(rows)?,
        n: usable.len(),
        n_excluded_invalid: rows.len() - usable.len(),
    })
}
