//! Independent reference implementations used to check the engine.

use std::collections::BTreeMap;

/// Lowercase word pieces: split on anything not alphanumeric, then at
/// lower->Upper and at the last capital of an acronym followed by lowercase.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Vec<char> = Vec::new();
    let flush = |cur: &mut Vec<char>, out: &mut Vec<String>| {
        if !cur.is_empty() {
            out.push(cur.iter().collect::<String>().to_lowercase());
            cur.clear();
        }
    };
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            flush(&mut cur, &mut out);
            continue;
        }
        if let Some(&p) = cur.last() {
            let next = chars.get(i + 1).copied();
            let lower_to_upper = p.is_lowercase() && c.is_uppercase();
            let acronym_end = p.is_uppercase()
                && c.is_uppercase()
                && next.is_some_and(|n| n.is_alphanumeric() && n.is_lowercase());
            if lower_to_upper || acronym_end {
                flush(&mut cur, &mut out);
            }
        }
        cur.push(c);
    }
    flush(&mut cur, &mut out);
    out
}

/// Brute-force BM25 (k1 = 1.2, b = 0.75, idf = ln(1 + (N - df + 0.5)/(df + 0.5)))
/// over documents given as (id, text, admitted). Returns (id, score) for the
/// top k admitted documents with a positive score, score descending then id.
pub fn bm25_top_k(docs: &[(String, String, bool)], query: &str, k: usize) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokens(&d.1)).collect();
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = tokens(query);
    terms.sort();
    terms.dedup();
    let mut scored = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if !d.2 {
            continue;
        }
        let mut score = 0.0;
        let mut any = false;
        for t in &terms {
            let tf = toks[i].iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            any = true;
            let df = toks.iter().filter(|ts| ts.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let dl = toks[i].len() as f64;
            score += idf * (tf * 2.2) / (tf + 1.2 * (1.0 - 0.75 + 0.75 * dl / avgdl));
        }
        if any {
            scored.push((d.0.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Reference debug transition: (state after, iteration after, exhausted).
pub fn expected_transition(iteration: u32, max: u32, executable: bool, correct: bool) -> (&'static str, u32, bool) {
    if executable && correct {
        ("annotating", iteration, false)
    } else if iteration < max {
        ("repairing", iteration + 1, false)
    } else {
        ("annotating", iteration, true)
    }
}

/// Counts lines by role for annotation checks.
pub fn line_multiset(text: &str, token: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for l in text.lines() {
        let t = l.trim();
        if t.is_empty() || t.starts_with(token) || t.starts_with("//") || t.starts_with('#') {
            continue;
        }
        *m.entry(t.split_whitespace().collect::<Vec<_>>().join(" ")).or_insert(0) += 1;
    }
    m
}
