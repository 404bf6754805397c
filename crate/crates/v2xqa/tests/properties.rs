//! Property tests for the corpus, protocol, and metrics invariants, plus an
//! independent brute-force oracle for ECE and Brier.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v2xqa::corpus::{build_samples, gen_fixtures, make_split, shuffle_options, FixtureConfig};
use v2xqa::metrics::{brier, distribution_from_counts, ece, reliability_export, ResultRow};
use v2xqa::protocol::{parse_answer, render_prompt, ParseOutcome};
use v2xqa::taskbank::{load_task_bank, OptionLetter, TaskId, ViewpointGroup};

// Naive reimplementation of the binning: scan all rows per bin. Bin m covers
// (m/M, (m+1)/M], and bin 0 additionally includes confidence 0.
fn ece_oracle(rows: &[(f64, bool)], m: usize) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for b in 0..m {
        let lo = b as f64 / m as f64;
        let hi = (b + 1) as f64 / m as f64;
        let members: Vec<&(f64, bool)> = rows
            .iter()
            .filter(|(c, _)| (*c > lo && *c <= hi) || (b == 0 && *c <= 0.0))
            .collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len() as f64;
        let conf: f64 = members.iter().map(|(c, _)| c).sum::<f64>() / count;
        let acc = members.iter().filter(|(_, ok)| *ok).count() as f64 / count;
        total += count / n * (acc - conf).abs();
    }
    total
}

fn brier_oracle(rows: &[([f64; 4], usize)]) -> f64 {
    let mut total = 0.0;
    for (probs, gold) in rows {
        for k in 0..4 {
            let y = if k == *gold { 1.0 } else { 0.0 };
            total += (probs[k] - y) * (probs[k] - y);
        }
    }
    total / rows.len() as f64
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<ResultRow> {
    (0..n)
        .map(|i| {
            let raw: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
            let sum: f64 = raw.iter().sum();
            let probs = raw.map(|v| v / sum);
            let gold = OptionLetter::ALL[rng.gen_range(0..4)];
            let answered = OptionLetter::ALL[rng.gen_range(0..4)];
            ResultRow::new(
                i as u64,
                ViewpointGroup::VS,
                TaskId::VS1,
                "VS1_Q1".into(),
                gold,
                parse_answer(answered.as_str()),
                Some(probs),
            )
        })
        .collect()
}

#[test]
fn ece_and_brier_match_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ece);
    for set in 0..1000 {
        let n = rng.gen_range(1..60);
        let m = rng.gen_range(1..20);
        let rows = random_rows(&mut rng, n);
        let conf_rows: Vec<(f64, bool)> = rows.iter().map(|r| (r.confidence.unwrap(), r.correct)).collect();
        let prob_rows: Vec<([f64; 4], usize)> =
            rows.iter().map(|r| (r.probs.unwrap(), r.gold_letter.index())).collect();
        let e = ece(&rows, m).unwrap();
        let b = brier(&rows).unwrap();
        assert!((e - ece_oracle(&conf_rows, m)).abs() < 1e-12, "set {set}: ece {e}");
        assert!((b - brier_oracle(&prob_rows)).abs() < 1e-12, "set {set}: brier {b}");
        let report = reliability_export(&rows, m).unwrap();
        assert_eq!(report.bins.iter().map(|bin| bin.count).sum::<usize>(), n);
    }
}

proptest! {
    #[test]
    fn shuffle_is_a_permutation_preserving_gold(seed in any::<u64>(), scene_seed in 0u64..1000) {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(4, 4, scene_seed, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, scene_seed).unwrap();
        for s in &samples {
            let shuffled = shuffle_options(s, seed);
            let mut sorted = shuffled.option_order;
            sorted.sort_unstable();
            prop_assert_eq!(sorted, [0, 1, 2, 3]);
            prop_assert_eq!(
                shuffled.option_order[shuffled.gold_letter.index()],
                s.option_order[s.gold_letter.index()]
            );
        }
    }

    #[test]
    fn split_never_leaks_scenes(n_groups in 2usize..8, seed in any::<u64>(), frac in 0.05f64..0.5) {
        // scenes per anchor question group; 6 groups of even/odd parity
        let n = n_groups * 6;
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(n, n, seed, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, seed).unwrap();
        let split = make_split(&samples, &scenes, frac, seed).unwrap();
        prop_assert!(split.train_scene_ids.is_disjoint(&split.test_scene_ids));
        prop_assert_eq!(split.train_scene_ids.len() + split.test_scene_ids.len(), n);
        for task in [TaskId::CO1, TaskId::CO2, TaskId::CO3, TaskId::CO4] {
            let total = samples.iter().filter(|s| s.task_id == task).count();
            let test = samples
                .iter()
                .filter(|s| s.task_id == task && split.is_test(s.scene_id))
                .count();
            let target = (frac * total as f64).round() as usize;
            prop_assert_eq!(test, target, "task {} total {}", task, total);
        }
    }

    #[test]
    fn parser_accepts_decorated_letters(
        idx in 0usize..4,
        pre in "[ \t]{0,3}",
        post in "[.,!)]{0,2}",
    ) {
        let letter = OptionLetter::ALL[idx];
        let raw = format!("{pre}{letter}{post}");
        prop_assert_eq!(parse_answer(&raw).outcome, ParseOutcome::Letter(letter));
    }

    #[test]
    fn parser_never_panics(raw in ".*") {
        let _ = parse_answer(&raw);
    }

    #[test]
    fn rendering_is_deterministic_for_any_permutation(perm_seed in any::<u64>()) {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(2, 2, 1, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 1).unwrap();
        let s = shuffle_options(&samples[0], perm_seed);
        let a = render_prompt(&s, &bank).unwrap();
        let b = render_prompt(&s, &bank).unwrap();
        prop_assert_eq!(a.user_text, b.user_text);
    }

    #[test]
    fn brier_is_invariant_under_joint_option_permutation(
        raw in prop::array::uniform4(0.01f64..1.0),
        gold_idx in 0usize..4,
        perm_seed in any::<u64>(),
    ) {
        let sum: f64 = raw.iter().sum();
        let probs = raw.map(|v| v / sum);
        let mut perm = [0usize, 1, 2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..4).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let make = |probs: [f64; 4], gold: usize| {
            vec![ResultRow::new(
                0,
                ViewpointGroup::VS,
                TaskId::VS1,
                "VS1_Q1".into(),
                OptionLetter::ALL[gold],
                parse_answer("A"),
                Some(probs),
            )]
        };
        let mut permuted = [0.0; 4];
        for (to, &from) in perm.iter().enumerate() {
            permuted[to] = probs[from];
        }
        let new_gold = perm.iter().position(|&p| p == gold_idx).unwrap();
        let a = brier(&make(probs, gold_idx)).unwrap();
        let b = brier(&make(permuted, new_gold)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounds_and_extremes(counts in prop::array::uniform4(0usize..200)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let d = distribution_from_counts(counts);
        prop_assert!(d.entropy_bits >= -1e-12 && d.entropy_bits <= 2.0 + 1e-12);
        let total: usize = counts.iter().sum();
        if counts.iter().all(|&c| c * 4 == total) {
            prop_assert!((d.entropy_bits - 2.0).abs() < 1e-12);
        }
        if counts.iter().filter(|&&c| c > 0).count() == 1 {
            prop_assert_eq!(d.majority_ratio, 1.0);
            prop_assert_eq!(d.entropy_bits, 0.0);
        }
    }
}
