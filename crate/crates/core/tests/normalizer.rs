mod support;

use opinion_core::normalize::{collapse_runs, is_idempotent_check, normalize, EmojiInventory, SpanKind};
use opinion_core::neural::stream_rng;
use proptest::prelude::*;
use support::{fuzz_text, golden_normalizer_cases};

#[test]
fn golden_fixture_has_enough_lines() {
    assert!(golden_normalizer_cases().len() >= 40);
}

#[test]
fn golden_fixture_matches_byte_for_byte() {
    let inv = EmojiInventory::builtin();
    for (input, expected) in golden_normalizer_cases() {
        assert_eq!(normalize(&input, inv).tokens, expected, "input {input:?}");
        assert!(is_idempotent_check(&input, inv), "input {input:?}");
    }
}

#[test]
fn sample_comment_counts_emoji() {
    let r = normalize("خیلی بزرگی دمت گرم 🌹 🌹 🌹", EmojiInventory::builtin());
    assert_eq!(r.tokens.len(), 7);
    assert_eq!(r.emoji_count, 3);
}

#[test]
fn noise_spans_are_reported() {
    let r = normalize("سلام http://t.co/x @user 123", EmojiInventory::builtin());
    assert_eq!(r.count(SpanKind::Url), 1);
    assert_eq!(r.count(SpanKind::Mention), 1);
    assert_eq!(r.count(SpanKind::Number), 1);
}

#[test]
fn ten_thousand_fuzz_inputs_are_idempotent() {
    let inv = EmojiInventory::builtin();
    let mut rng = stream_rng(0, "normalizer-fuzz");
    for _ in 0..10_000 {
        let text = fuzz_text(&mut rng);
        assert!(is_idempotent_check(&text, inv), "input {text:?}");
    }
}

/// Every character written twice, after merging existing neighbours, so the result
/// has runs of exactly two.
fn double_each(text: &str) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    chars.dedup();
    chars.into_iter().flat_map(|c| [c, c]).collect()
}

proptest! {
    #[test]
    fn arbitrary_strings_are_idempotent_and_clean(text in "\\PC{0,60}") {
        let inv = EmojiInventory::builtin();
        let r = normalize(&text, inv);
        prop_assert!(is_idempotent_check(&text, inv));
        for t in &r.tokens {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().any(|c| c.is_whitespace() || c == '@' || c == '#' || c.is_ascii_digit()));
            prop_assert!(!t.contains("://"));
        }
        let names = r.tokens.iter().filter(|t| inv.is_name(t)).count();
        prop_assert_eq!(r.emoji_count, names);
        prop_assert_eq!(r, normalize(&text, inv));
    }

    #[test]
    fn runs_of_two_survive_collapse(text in "[abپ ]{0,40}") {
        let doubled = double_each(&text);
        prop_assert_eq!(collapse_runs(&doubled, 3), doubled.clone());
    }

    #[test]
    fn doubled_persian_letters_survive_the_pipeline(word in "[بپتسشلمنکگی]{1,6}") {
        let doubled = double_each(&word);
        let r = normalize(&doubled, EmojiInventory::builtin());
        prop_assert_eq!(r.tokens, vec![doubled]);
    }
}
