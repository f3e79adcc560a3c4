//! Corpus-composition diagnostics.
//!
//! * [`overlap_curve`]: for each `n`, the share of utterances (among those
//!   with at least `n` tokens) that overlap some *other* utterance, either by
//!   a shared contiguous `n`-gram or by `n` shared token types.
//! * [`ConfidenceHistogram`]: where the probability assigned to the true label
//!   falls, split by whether the prediction was right.
//! * [`exclusivity_report`]: tokens whose occurrences concentrate in a single
//!   label.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::emomodel::{Embeddings, TrainedModel};
use crate::error::{Error, Result};
use crate::evalharness::{accuracy, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    /// Share at least one contiguous n-token subsequence.
    Contiguous,
    /// Share at least n distinct token types, in any order.
    Bag,
}

impl std::str::FromStr for OverlapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(OverlapMode::Contiguous),
            "bag" => Ok(OverlapMode::Bag),
            other => Err(Error::Config(format!("unknown overlap mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub n: usize,
    pub considered: usize,
    pub overlapping: usize,
    /// `None` when no utterance has `n` tokens.
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCurve {
    pub mode: OverlapMode,
    pub points: Vec<OverlapPoint>,
}

impl OverlapCurve {
    pub fn point(&self, n: usize) -> Option<&OverlapPoint> {
        self.points.iter().find(|p| p.n == n)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,considered,overlapping,proportion\n");
        for p in &self.points {
            let prop = p.proportion.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{prop}", p.n, p.considered, p.overlapping);
        }
        out
    }

    /// Whitespace columns for gnuplot; undefined proportions are `NaN`.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# n proportion considered overlapping\n");
        for p in &self.points {
            let prop = p.proportion.map_or("NaN".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{} {prop} {} {}", p.n, p.considered, p.overlapping);
        }
        out
    }
}

/// Token streams mapped to dense ids.
fn intern(corpus: &Corpus) -> Vec<Vec<u32>> {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    corpus
        .utterances()
        .iter()
        .map(|u| {
            u.tokens
                .iter()
                .map(|t| {
                    let next = ids.len() as u32;
                    *ids.entry(t.as_str()).or_insert(next)
                })
                .collect()
        })
        .collect()
}

/// Which utterances share a contiguous `n`-gram with a different utterance.
fn contiguous_overlaps(seqs: &[Vec<u32>], n: usize) -> Vec<bool> {
    // n-gram -> (first owner, seen in a second utterance)
    let mut index: HashMap<&[u32], (usize, bool)> = HashMap::new();
    for (u, seq) in seqs.iter().enumerate() {
        if seq.len() < n {
            continue;
        }
        for gram in seq.windows(n) {
            index
                .entry(gram)
                .and_modify(|(owner, shared)| *shared |= *owner != u)
                .or_insert((u, false));
        }
    }
    seqs.iter()
        .map(|seq| seq.len() >= n && seq.windows(n).any(|g| index[g].1))
        .collect()
}

/// For every utterance, the largest number of distinct token types it shares
/// with any other utterance.
fn max_shared_types(seqs: &[Vec<u32>]) -> Vec<usize> {
    let types: Vec<Vec<u32>> = seqs
        .iter()
        .map(|s| {
            let mut t = s.clone();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let mut postings: HashMap<u32, Vec<usize>> = HashMap::new();
    for (u, ts) in types.iter().enumerate() {
        for &t in ts {
            postings.entry(t).or_default().push(u);
        }
    }
    (0..types.len())
        .into_par_iter()
        .map(|u| {
            let mut shared: HashMap<usize, usize> = HashMap::new();
            for t in &types[u] {
                for &v in &postings[t] {
                    if v != u {
                        *shared.entry(v).or_insert(0) += 1;
                    }
                }
            }
            shared.values().copied().max().unwrap_or(0)
        })
        .collect()
}

/// Overlap proportions for every `n` in `n_min..=n_max`. Results depend only
/// on the multiset of token streams, not on corpus order.
pub fn overlap_curve(
    corpus: &Corpus,
    n_min: usize,
    n_max: usize,
    mode: OverlapMode,
) -> Result<OverlapCurve> {
    if n_min < 1 {
        return Err(Error::Config("n_min must be at least 1".into()));
    }
    if n_max < n_min {
        return Err(Error::Config(format!("n_max {n_max} < n_min {n_min}")));
    }
    let seqs = intern(corpus);
    let max_shared = match mode {
        OverlapMode::Bag => Some(max_shared_types(&seqs)),
        OverlapMode::Contiguous => None,
    };
    let points = (n_min..=n_max)
        .into_par_iter()
        .map(|n| {
            let overlapping_flags = match &max_shared {
                Some(shared) => shared
                    .iter()
                    .zip(&seqs)
                    .map(|(&s, seq)| seq.len() >= n && s >= n)
                    .collect(),
                None => contiguous_overlaps(&seqs, n),
            };
            let considered = seqs.iter().filter(|s| s.len() >= n).count();
            let overlapping = overlapping_flags.iter().filter(|&&b| b).count();
            OverlapPoint {
                n,
                considered,
                overlapping,
                proportion: (considered > 0).then(|| overlapping as f64 / considered as f64),
            }
        })
        .collect();
    Ok(OverlapCurve { mode, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub correct: usize,
    pub incorrect: usize,
}

impl Bracket {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect
    }
}

/// Histogram of true-label probabilities over equal-width brackets tiling
/// `[0, 1]`. Brackets are half-open except the last, which includes 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub bracket_width: f64,
    pub brackets: Vec<Bracket>,
}

impl ConfidenceHistogram {
    /// Fails unless `1 / bracket_width` is an integer.
    pub fn new(bracket_width: f64) -> Result<Self> {
        if !(bracket_width > 0.0 && bracket_width <= 1.0) {
            return Err(Error::Config(format!(
                "bracket width {bracket_width} outside (0, 1]"
            )));
        }
        let count = (1.0 / bracket_width).round();
        if (count * bracket_width - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "bracket width {bracket_width} does not tile [0, 1]"
            )));
        }
        let count = count as usize;
        let brackets = (0..count)
            .map(|i| Bracket {
                lo: i as f64 / count as f64,
                hi: (i + 1) as f64 / count as f64,
                correct: 0,
                incorrect: 0,
            })
            .collect();
        Ok(Self {
            bracket_width,
            brackets,
        })
    }

    pub fn bracket_index(&self, prob: f64) -> usize {
        let count = self.brackets.len();
        ((prob * count as f64).floor().max(0.0) as usize).min(count - 1)
    }

    pub fn add(&mut self, target_prob: f64, correct: bool) {
        let i = self.bracket_index(target_prob);
        if correct {
            self.brackets[i].correct += 1;
        } else {
            self.brackets[i].incorrect += 1;
        }
    }

    pub fn from_predictions<'a, I>(predictions: I, bracket_width: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Prediction>,
    {
        let mut h = Self::new(bracket_width)?;
        for p in predictions {
            h.add(p.target_prob(), p.is_correct());
        }
        Ok(h)
    }

    pub fn total(&self) -> usize {
        self.brackets.iter().map(Bracket::total).sum()
    }

    /// Share of all scored utterances whose bracket starts at or above `lo`.
    pub fn fraction_from(&self, lo: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let above: usize = self
            .brackets
            .iter()
            .filter(|b| b.lo >= lo - 1e-12)
            .map(Bracket::total)
            .sum();
        above as f64 / total as f64
    }

    /// Share of scored utterances in the top bracket.
    pub fn top_bracket_fraction(&self) -> f64 {
        let last = self.brackets.last().expect("at least one bracket");
        self.fraction_from(last.lo)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,correct,incorrect,total\n");
        for b in &self.brackets {
            let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.correct, b.incorrect, b.total());
        }
        out
    }

    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# lo hi correct incorrect\n");
        for b in &self.brackets {
            let _ = writeln!(out, "{} {} {} {}", b.lo, b.hi, b.correct, b.incorrect);
        }
        out
    }
}

/// Scores every utterance of `corpus` with `model` and bins the true-label
/// probability.
pub fn confidence_histogram(
    model: &TrainedModel,
    corpus: &Corpus,
    emb: &Embeddings,
    bracket_width: f64,
) -> Result<ConfidenceHistogram> {
    let mut h = ConfidenceHistogram::new(bracket_width)?;
    if corpus.is_empty() {
        return Ok(h);
    }
    for p in &accuracy(model, corpus, emb)?.predictions {
        h.add(p.target_prob(), p.is_correct());
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenExclusivity {
    pub token: String,
    pub label_counts: BTreeMap<String, usize>,
    /// Share of the token's occurrences under its most frequent label.
    pub exclusivity: f64,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusivityReport {
    pub min_occurrences: usize,
    pub tokens: Vec<TokenExclusivity>,
}

impl ExclusivityReport {
    pub fn median_exclusivity(&self) -> Option<f64> {
        if self.tokens.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.tokens.iter().map(|t| t.exclusivity).collect();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        Some(if v.len().is_multiple_of(2) {
            (v[mid - 1] + v[mid]) / 2.0
        } else {
            v[mid]
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,total,exclusivity,top_label,label_counts\n");
        for t in &self.tokens {
            let top = t
                .label_counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| l.as_str())
                .unwrap_or("");
            let counts: Vec<String> = t.label_counts.iter().map(|(l, c)| format!("{l}:{c}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{top},{}",
                csv_field(&t.token),
                t.total,
                t.exclusivity,
                counts.join("|")
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Per-token label concentration for tokens occurring at least
/// `min_occurrences` times, most exclusive first, then most frequent, then
/// alphabetical.
pub fn exclusivity_report(corpus: &Corpus, min_occurrences: usize) -> Result<ExclusivityReport> {
    if min_occurrences < 1 {
        return Err(Error::Config("min_occurrences must be at least 1".into()));
    }
    let mut counts: HashMap<&str, BTreeMap<String, usize>> = HashMap::new();
    for u in corpus.utterances() {
        for t in &u.tokens {
            *counts
                .entry(t.as_str())
                .or_default()
                .entry(u.label.clone())
                .or_insert(0) += 1;
        }
    }
    let mut tokens: Vec<TokenExclusivity> = counts
        .into_iter()
        .filter_map(|(token, label_counts)| {
            let total: usize = label_counts.values().sum();
            if total < min_occurrences {
                return None;
            }
            let top = *label_counts.values().max().expect("nonempty");
            Some(TokenExclusivity {
                token: token.to_owned(),
                exclusivity: top as f64 / total as f64,
                label_counts,
                total,
            })
        })
        .collect();
    tokens.sort_by(|a, b| {
        b.exclusivity
            .total_cmp(&a.exclusivity)
            .then(b.total.cmp(&a.total))
            .then_with(|| a.token.cmp(&b.token))
    });
    Ok(ExclusivityReport {
        min_occurrences,
        tokens,
    })
}
