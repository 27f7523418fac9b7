mod common;

use cop_core::annotation::{check_annotation, AnnotatedCode};
use cop_core::evaluation::{normalize_entity, Percent};
use cop_core::fixtures::{self, sample_corpus};
use cop_core::kb::tokenize;
use proptest::prelude::*;

fn tenths_oracle(num: u64, den: u64) -> u32 {
    let scaled = u128::from(num) * 1000;
    let (q, r) = (scaled / u128::from(den), scaled % u128::from(den));
    (q + u128::from(2 * r >= u128::from(den))) as u32
}

proptest! {
    #[test]
    fn percent_rounds_half_up(den in 1u64..5000, frac in 0.0f64..=1.0) {
        let num = (den as f64 * frac).floor() as u64;
        prop_assert_eq!(Percent::ratio(num, den).tenths(), tenths_oracle(num, den));
    }

    #[test]
    fn tokenizer_matches_reference(text in "[a-zA-Z0-9 _.()-]{0,40}") {
        prop_assert_eq!(tokenize(&text), common::oracle::tokens(&text));
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,30}") {
        let once = normalize_entity(&s);
        prop_assert_eq!(normalize_entity(&once), once.clone());
        prop_assert_eq!(normalize_entity(&format!("  {}  ", s.to_uppercase())), normalize_entity(&s.to_uppercase()));
    }

    #[test]
    fn comment_edits_never_count_as_drift(task_ix in 0usize..8, at in 0usize..40, text in "[a-z ]{1,20}") {
        let task = &sample_corpus()[task_ix];
        let req = &task.gold;
        let design = fixtures::synthetic_design(req);
        let original = fixtures::synthetic_code(req, &design);
        let token = cop_core::annotation::comment_token(&req.programming_language).unwrap();
        let good = fixtures::synthetic_annotation(req, &design);
        let mut lines: Vec<String> = good.lines().map(str::to_owned).collect();
        let at = 4 + at % (lines.len() - 4);
        lines.insert(at, format!("{token} {text}"));
        let edited = lines.join("\n");
        let v = check_annotation(&AnnotatedCode::parse(&edited, token), &original, &design, &req.programming_language).unwrap();
        prop_assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn code_edits_always_count_as_drift(task_ix in 0usize..8, pick in 0usize..40, text in "[a-z]{1,10}") {
        let task = &sample_corpus()[task_ix];
        let req = &task.gold;
        let design = fixtures::synthetic_design(req);
        let original = fixtures::synthetic_code(req, &design);
        let token = cop_core::annotation::comment_token(&req.programming_language).unwrap();
        let good = fixtures::synthetic_annotation(req, &design);
        let mut lines: Vec<String> = good.lines().map(str::to_owned).collect();
        let code_ix: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].trim().is_empty() && !lines[i].trim_start().starts_with(token)).collect();
        let i = code_ix[pick % code_ix.len()];
        lines[i].push_str(&format!(" {text}"));
        let edited = lines.join("\n");
        let v = check_annotation(&AnnotatedCode::parse(&edited, token), &original, &design, &req.programming_language).unwrap();
        prop_assert!(v.iter().any(|m| m.starts_with("body drift")), "{:?}", v);
    }
}
