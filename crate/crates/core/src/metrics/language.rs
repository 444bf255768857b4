//! Caption metrics over token lists: BLEU-n, ROUGE-L and CIDEr.

use std::collections::{BTreeMap, BTreeSet};

pub type Tokens = [String];

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;

/// n-gram counts of `tokens`.
pub fn ngram_counts(tokens: &Tokens, n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(String::as_str).collect()).or_insert(0) += 1;
    }
    out
}

/// Clipped matches and candidate n-gram total.
fn clipped(candidate: &Tokens, references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.values().sum())
}

/// Reference length closest to `c`, shorter on ties.
pub fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references.iter().map(Vec::len).min_by_key(|&r| ((r as i64 - c as i64).abs(), r)).unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).min(0.0).exp()
    }
}

fn geometric(matches: &[usize], totals: &[usize]) -> f64 {
    let mut log_sum = 0.0;
    for (&m, &t) in matches.iter().zip(totals) {
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    (log_sum / matches.len() as f64).exp()
}

/// Sentence BLEU-n. An empty candidate scores 0.
pub fn bleu(candidate: &Tokens, references: &[Vec<String>], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
    if candidate.is_empty() || references.is_empty() {
        eprintln!("warning: BLEU of an empty candidate or reference set is 0");
        return 0.0;
    }
    let (m, t): (Vec<usize>, Vec<usize>) = (1..=n).map(|k| clipped(candidate, references, k)).unzip();
    geometric(&m, &t) * brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references))
}

/// Corpus BLEU-n: clipped counts and lengths summed over segments before combining.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let mut m = vec![0; n];
    let mut t = vec![0; n];
    let (mut c_len, mut r_len) = (0, 0);
    for (cand, refs) in candidates.iter().zip(references) {
        for k in 1..=n {
            let (a, b) = clipped(cand, refs, k);
            m[k - 1] += a;
            t[k - 1] += b;
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
    }
    geometric(&m, &t) * brevity_penalty(c_len, r_len)
}

pub fn lcs_len(a: &Tokens, b: &Tokens) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with β = 1.2, best over references.
pub fn rouge_l(candidate: &Tokens, references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        eprintln!("warning: ROUGE-L of an empty candidate is 0");
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let l = lcs_len(candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (rec, prec) = (l / r.len() as f64, l / candidate.len() as f64);
            (1.0 + b2) * rec * prec / (rec + b2 * prec)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    pub per_clip: Vec<f64>,
    pub mean: f64,
    /// Set when the corpus has a single clip, so every IDF is zero.
    pub degenerate: bool,
}

type Vector<'a> = BTreeMap<Vec<&'a str>, f64>;

fn tfidf<'a>(tokens: &'a Tokens, n: usize, df: &BTreeMap<Vec<&'a str>, usize>, n_docs: f64) -> Vector<'a> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(&g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (n_docs / d).ln())
        })
        .collect()
}

fn norm(v: &Vector<'_>) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// CIDEr over a corpus: TF-IDF n-gram vectors (IDF over clips' reference sets),
/// clipped cosine against each reference, averaged over references and n = 1..4, ×10.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> CiderScores {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let n_docs = candidates.len() as f64;
    let mut per_clip = vec![0.0; candidates.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
        for refs in references {
            let grams: BTreeSet<Vec<&str>> = refs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (k, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let vc = tfidf(cand, n, &df, n_docs);
            let nc = norm(&vc);
            let mut score = 0.0;
            for r in refs {
                let vr = tfidf(r, n, &df, n_docs);
                let nr = norm(&vr);
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let dot: f64 = vc.iter().filter_map(|(g, &a)| vr.get(g).map(|&b| a.min(b) * b)).sum();
                score += dot / (nc * nr);
            }
            per_clip[k] += score / refs.len() as f64;
        }
    }
    for s in &mut per_clip {
        *s *= 10.0 / CIDER_MAX_N as f64;
    }
    let mean = if per_clip.is_empty() { 0.0 } else { per_clip.iter().sum::<f64>() / per_clip.len() as f64 };
    CiderScores { per_clip, mean, degenerate: candidates.len() < 2 }
}
