use adaptrim::advantage::group_advantages;
use adaptrim::compression::{eviction_count, eviction_percentage, plan, uniformity_score, UNIFORMITY_CUTOFF};
use adaptrim::difficulty::{estimate_difficulty, BinThresholds, CompressionRates};
use adaptrim::metrics::{accuracy, auc_oaa, oaa, otb_f1, EvalSample};
use adaptrim::rewards::{length_bonus, length_reward, total_reward, RewardParams, WindowSnapshot, WindowStats};
use adaptrim::scoring::{aggregate_attention, confidence_score, step_importance, AttentionRow};
use adaptrim::trajectory::{parse_output, segment_steps, Trajectory};
use adaptrim::{compress, DifficultyLabel, ExactRatio, StepScoresF64};
use proptest::prelude::*;

/// Text built from pieces that exercise markers at and away from sentence
/// starts, newlines and multi-byte characters.
fn reasoning_text() -> impl Strategy<Value = String> {
    let piece = prop::sample::select(vec![
        "Wait", "Wait,", "So", "Nowhere", "Now", "Alternatively", "Let me", "Hmm", "But wait",
        "x", "7", "é", "日本", "=", ".", "!", "?", " ", " ", "\n", "\n\n", "a", "step",
    ]);
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![3 => 0.0f64..1.0, 1 => Just(0.0), 1 => Just(0.25), 1 => -0.5f64..0.0],
        1..max_len,
    )
}

/// Rewards on a dyadic grid: shifts by integers are exact in binary.
fn lattice_rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..=7 * 64).prop_map(|k| k as f64 / 64.0), 8)
}

fn window() -> impl Strategy<Value = WindowSnapshot> {
    prop::collection::vec(1u64..5000, 1..40).prop_map(|v| WindowSnapshot::from_lengths(&v).unwrap())
}

fn samples() -> impl Strategy<Value = Vec<EvalSample>> {
    prop::collection::vec((any::<bool>(), 0u64..400), 1..30)
        .prop_map(|v| v.into_iter().map(|(c, t)| EvalSample::new(c, t)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn segmentation_reconstructs_input(text in reasoning_text()) {
        let steps = segment_steps(&text);
        let joined: String = steps.iter().map(|s| s.text.as_str()).collect();
        prop_assert_eq!(&joined, &text);
        let mut at = 0;
        for (i, s) in steps.iter().enumerate() {
            prop_assert_eq!(s.index, i);
            prop_assert_eq!(s.char_span.0, at);
            prop_assert_eq!(s.char_span.1 - s.char_span.0, s.text.chars().count());
            prop_assert!(!s.text.is_empty());
            at = s.char_span.1;
        }
        prop_assert_eq!(at, text.chars().count());
    }

    #[test]
    fn mid_word_markers_never_split(prefix in "[a-z]{1,6}") {
        let text = format!("First {prefix}Wait more {prefix}Now end");
        prop_assert_eq!(segment_steps(&text).len(), 1);
    }

    #[test]
    fn parse_inverts_render(reasoning in "[a-zA-Z .,\n]{0,40}", answer in "[a-zA-Z0-9 ]{0,20}") {
        let t = Trajectory::from_parts(reasoning, answer);
        prop_assert_eq!(parse_output(&t.render()), t);
    }

    #[test]
    fn aggregation_is_linear_and_order_free(
        raw in (1usize..4, 1usize..4).prop_flat_map(|(l, h)| {
            prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), h), l)
        }),
        c in 0.0f64..10.0,
    ) {
        let base = aggregate_attention(&raw).unwrap();
        let scaled: Vec<Vec<Vec<f64>>> = raw
            .iter()
            .map(|l| l.iter().map(|h| h.iter().map(|v| v * c).collect()).collect())
            .collect();
        let out = aggregate_attention(&scaled).unwrap();
        for (a, b) in base.values.iter().zip(&out.values) {
            prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let mut permuted = raw.clone();
        permuted.reverse();
        for layer in &mut permuted {
            layer.reverse();
        }
        let p = aggregate_attention(&permuted).unwrap();
        for (a, b) in base.values.iter().zip(&p.values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn importance_ignores_token_boundaries_within_a_step(
        values in prop::collection::vec(0.0f64..1.0, 4),
        cut in 1usize..5,
    ) {
        // "So ab. Wait cd." : steps [0,7) and [7,15); two tokens per step
        let text = "So ab. Wait cd.";
        let steps = segment_steps(text);
        let row = AttentionRow::from_aggregated(values).unwrap();
        let a = step_importance(&row, &steps, &[(0, 2), (3, 6), (7, 11), (12, 15)]).unwrap();
        let b = step_importance(&row, &steps, &[(0, cut), (cut, 7), (7, 7 + cut), (7 + cut, 15)]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confidence_is_bounded_and_shift_free(
        lp in prop::collection::vec(-20.0f64..0.0, 1..8),
        shift in -50.0f64..50.0,
    ) {
        let c = confidence_score(&lp).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let shifted: Vec<f64> = lp.iter().map(|v| v + shift).collect();
        prop_assert!((confidence_score(&shifted).unwrap() - c).abs() < 1e-9);
    }

    #[test]
    fn uniformity_and_eviction_stay_in_range(s in scores(64), tau in 0.0f64..=1.0) {
        let u = uniformity_score(&s);
        prop_assert!((0.0..=1.0).contains(&u));
        let e = eviction_percentage(u, tau);
        prop_assert!((0.0..=0.8).contains(&e));
        if u > UNIFORMITY_CUTOFF {
            prop_assert_eq!(e, 0.0);
        }
    }

    #[test]
    fn eviction_grows_with_tau(s in scores(64), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = plan(&s, lo).unwrap();
        let b = plan(&s, hi).unwrap();
        prop_assert!(a.evicted_indices.len() <= b.evicted_indices.len());
    }

    #[test]
    fn kept_steps_outscore_evicted_ones(s in scores(64), tau in 0.0f64..=1.0) {
        let p = plan(&s, tau).unwrap();
        let mut all: Vec<usize> = p.kept_indices.iter().chain(&p.evicted_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..s.len()).collect::<Vec<_>>());
        prop_assert_eq!(p.evicted_indices.len(), eviction_count(p.eviction_percentage, s.len()));
        for &k in &p.kept_indices {
            for &x in &p.evicted_indices {
                prop_assert!(s[k] >= s[x]);
                // equal scores: the later step goes first
                if s[k] == s[x] {
                    prop_assert!(k < x);
                }
            }
        }
    }

    #[test]
    fn scaling_scores_changes_nothing(s in scores(64), c in 0.01f64..100.0, tau in 0.0f64..=1.0) {
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        prop_assert!((uniformity_score(&s) - uniformity_score(&scaled)).abs() < 1e-9);
        // the evicted set is stable unless u sits on a floor boundary
        let a = plan(&s, tau).unwrap();
        let b = plan(&scaled, tau).unwrap();
        let en = a.eviction_percentage * s.len() as f64;
        if (en - en.round()).abs() > 1e-6 && (a.uniformity - UNIFORMITY_CUTOFF).abs() > 1e-9 {
            prop_assert_eq!(a.evicted_indices, b.evicted_indices);
        }
    }

    #[test]
    fn compressed_text_is_a_step_subsequence(text in reasoning_text(), seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let steps = segment_steps(&text);
        let t = Trajectory::from_parts(text.clone(), "a");
        let s: StepScoresF64 = adaptrim::scoring::random_scores(steps.len(), seed);
        let (out, p) = compress(&t, &steps, &s, tau).unwrap();
        let expected: String = p.kept_indices.iter().map(|&k| steps[k].text.as_str()).collect();
        prop_assert_eq!(out, expected);
        prop_assert!(p.kept_indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn difficulty_ignores_order(mut flags in prop::collection::vec(any::<bool>(), 1..16), seed in any::<u64>()) {
        let t = BinThresholds::default();
        let r = CompressionRates::default();
        let a = estimate_difficulty(&flags, &t, &r).unwrap();
        let k = seed as usize % flags.len();
        flags.rotate_left(k);
        flags.reverse();
        prop_assert_eq!(a, estimate_difficulty(&flags, &t, &r).unwrap());
    }

    #[test]
    fn length_reward_never_rises_with_length(w in window(), a in 0u64..6000, b in 0u64..6000) {
        let p = RewardParams::<f64>::default();
        let (short, long) = if a <= b { (a, b) } else { (b, a) };
        let rs = length_reward(short, Some(&w), true, &p);
        let rl = length_reward(long, Some(&w), true, &p);
        prop_assert!(rs >= rl);
        prop_assert!((0.0..=2.0).contains(&rs));
        prop_assert_eq!(length_reward(short, Some(&w), false, &p), 0.0);
    }

    #[test]
    fn bonus_is_one_half_at_the_median(lengths in prop::collection::vec(1u64..5000, 1..20)) {
        // odd counts keep the median on an integer length
        let odd = &lengths[..lengths.len() - (1 - lengths.len() % 2)];
        let w = WindowSnapshot::from_lengths(odd).unwrap();
        prop_assert_eq!(length_bonus::<f64>(w.median as u64, w.median), 0.5);
        prop_assert_eq!(length_bonus::<f32>(w.median as u64, w.median), 0.5);
    }

    #[test]
    fn total_reward_stays_in_bounds(
        raw in "(<think>)?[a-z ]{0,10}(</think>)?[a-z ]{0,5}(</think>)?",
        correct in any::<bool>(),
        w in proptest::option::of(window()),
        len in 0usize..6000,
    ) {
        let t = parse_output(&raw).with_token_count(len);
        let r = total_reward(&t, correct, w.as_ref(), &RewardParams::<f64>::default());
        prop_assert!((0.0..=7.0).contains(&r.total));
        prop_assert!([0.0, 0.5, 1.0].contains(&r.format));
        prop_assert_eq!(r.total, r.correctness + r.format + r.length);
    }

    #[test]
    fn window_statistics_depend_only_on_contents(
        steps in prop::collection::vec(prop::collection::vec(1u64..1000, 1..5), 1..15),
    ) {
        let mut a = WindowStats::new(10).unwrap();
        for s in &steps {
            a.update(DifficultyLabel::Easy, s).unwrap();
        }
        let kept: Vec<u64> = steps[steps.len().saturating_sub(10)..].iter().flatten().copied().collect();
        let mut shuffled = kept.clone();
        shuffled.reverse();
        prop_assert_eq!(a.snapshot(DifficultyLabel::Easy), WindowSnapshot::from_lengths(&shuffled));
        prop_assert_eq!(a.depth(DifficultyLabel::Easy), steps.len().min(10));
        prop_assert!(a.snapshot(DifficultyLabel::Hard).is_none());
    }

    #[test]
    fn advantages_center_and_ignore_shifts(r in lattice_rewards(), shift in -8i32..8) {
        let a = group_advantages(&r).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        let shifted: Vec<f64> = r.iter().map(|v| v + shift as f64).collect();
        prop_assert_eq!(group_advantages(&shifted).unwrap(), a);
    }

    #[test]
    fn advantages_ignore_scale(r in lattice_rewards(), c in 0.1f64..10.0) {
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64;
        prop_assume!(var.sqrt() >= 0.5);
        let a = group_advantages(&r).unwrap();
        let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
        for (x, y) in a.iter().zip(group_advantages(&scaled).unwrap()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn advantages_follow_permutations(r in lattice_rewards(), k in 0usize..8) {
        let a = group_advantages(&r).unwrap();
        let mut rotated = r.clone();
        rotated.rotate_left(k);
        let mut expected = a.clone();
        expected.rotate_left(k);
        prop_assert_eq!(group_advantages(&rotated).unwrap(), expected);
    }

    #[test]
    fn oaa_rises_with_threshold(s in samples(), t1 in 0u64..500, t2 in 0u64..500) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(oaa::<ExactRatio>(&s, lo).unwrap() <= oaa::<ExactRatio>(&s, hi).unwrap());
    }

    #[test]
    fn auc_is_bounded_by_accuracy(s in samples(), t_max in 1u64..500) {
        let auc = auc_oaa::<ExactRatio>(&s, t_max).unwrap();
        prop_assert!(auc <= accuracy::<ExactRatio>(&s).unwrap());
        let f = auc_oaa::<f64>(&s, t_max).unwrap();
        prop_assert!((f - *auc.numer() as f64 / *auc.denom() as f64).abs() < 1e-12);
    }

    #[test]
    fn f1_is_a_symmetric_mean(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let f = otb_f1(a, b);
        prop_assert_eq!(f, otb_f1(b, a));
        prop_assert!(f <= 1.0);
        prop_assert!(f >= a.min(b) - 1e-15 && f <= a.max(b) + 1e-15);
    }
}
