//! Labeled utterance corpora: ingestion, validation, relabeling and filtering.
//!
//! A [`Corpus`] is immutable once built. Every transformation returns a new
//! corpus whose label vocabulary is rebuilt from the utterances it keeps, so
//! the vocabulary is always exactly the set of labels present, in sorted order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Characters removed before whitespace splitting.
const STRIPPED: &[char] = &['.', ',', '!', '?', ';', ':', '"', '(', ')', '[', ']'];

/// Lowercase, drop punctuation, split on whitespace. Apostrophes survive inside
/// words ("don't") but are trimmed from token edges.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !STRIPPED.contains(c))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned
        .split_whitespace()
        .map(|tok| tok.trim_matches('\''))
        .filter(|tok| !tok.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Frame-ID stream. Empty when the source supplied none.
    pub frames: Vec<String>,
    pub label: String,
    pub tags: BTreeSet<String>,
}

impl Utterance {
    /// Tokenizes `text`; fails if nothing survives tokenization.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        let label = label.into();
        if id.is_empty() {
            return Err(Error::Ingest {
                line: 0,
                message: "empty id".into(),
            });
        }
        if label.is_empty() {
            return Err(Error::Ingest {
                line: 0,
                message: format!("utterance {id:?} has an empty label"),
            });
        }
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::Ingest {
                line: 0,
                message: format!("utterance {id:?} has no tokens"),
            });
        }
        Ok(Self {
            id,
            text,
            tokens,
            frames: Vec::new(),
            label,
            tags: BTreeSet::new(),
        })
    }

    pub fn with_frames<I, S>(mut self, frames: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.frames = frames.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corpus {
    name: String,
    utterances: Vec<Utterance>,
    labels: Vec<String>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and non-empty token streams.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if u.id.is_empty() {
                return Err(Error::Ingest {
                    line: i + 1,
                    message: "empty id".into(),
                });
            }
            if u.tokens.is_empty() {
                return Err(Error::Ingest {
                    line: i + 1,
                    message: format!("utterance {:?} has no tokens", u.id),
                });
            }
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: u.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self::from_valid(name.into(), utterances))
    }

    /// Caller guarantees the invariants already hold (sub-selections of a
    /// valid corpus).
    fn from_valid(name: String, utterances: Vec<Utterance>) -> Self {
        let labels = utterances
            .iter()
            .map(|u| u.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self {
            name,
            utterances,
            labels,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    /// Sorted label vocabulary.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sub-corpus made of the utterances at `indices`, in the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Corpus {
        let utterances = indices.iter().map(|&i| self.utterances[i].clone()).collect();
        Self::from_valid(name.into(), utterances)
    }

    /// Every utterance carrying `tag`, in corpus order. May be empty.
    pub fn filter_by_tag(&self, tag: &str) -> Corpus {
        self.filter(format!("{}[{tag}]", self.name), |u| u.has_tag(tag))
    }

    /// Complement of [`Corpus::filter_by_tag`].
    pub fn filter_without_tag(&self, tag: &str) -> Corpus {
        self.filter(format!("{}[!{tag}]", self.name), |u| !u.has_tag(tag))
    }

    fn filter(&self, name: String, keep: impl Fn(&Utterance) -> bool) -> Corpus {
        let utterances = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        Self::from_valid(name, utterances)
    }

    pub fn class_histogram(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for u in &self.utterances {
            *counts.entry(u.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn tag_histogram(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for tag in self.utterances.iter().flat_map(|u| &u.tags) {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Index of `label` in the vocabulary.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Writes the corpus in the JSONL ingest format.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.write_jsonl_to(&mut out)?;
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_jsonl_to<W: Write>(&self, mut w: W) -> Result<()> {
        for u in &self.utterances {
            let record = Record {
                id: Some(u.id.clone()),
                text: Some(u.text.clone()),
                label: Some(u.label.clone()),
                frames: (!u.frames.is_empty()).then(|| u.frames.clone()),
                tags: (!u.tags.is_empty()).then(|| u.tags.iter().cloned().collect()),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

fn required(field: Option<String>, name: &str, line: usize) -> Result<String> {
    match field {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(Error::Ingest {
            line,
            message: format!("field {name:?} is empty"),
        }),
        None => Err(Error::Ingest {
            line,
            message: format!("missing field {name:?}"),
        }),
    }
}

fn record_to_utterance(record: Record, line: usize) -> Result<Utterance> {
    let id = required(record.id, "id", line)?;
    let text = required(record.text, "text", line)?;
    let label = required(record.label, "label", line)?;
    let utterance = Utterance::new(id, text, label).map_err(|e| match e {
        Error::Ingest { message, .. } => Error::Ingest { line, message },
        other => other,
    })?;
    Ok(utterance
        .with_frames(record.frames.unwrap_or_default())
        .with_tags(record.tags.unwrap_or_default()))
}

fn finish(name: String, rows: Vec<(usize, Utterance)>) -> Result<Corpus> {
    if rows.is_empty() {
        return Err(Error::Ingest {
            line: 1,
            message: "file contains no records".into(),
        });
    }
    let mut seen = HashSet::with_capacity(rows.len());
    for (line, u) in &rows {
        if !seen.insert(u.id.as_str()) {
            return Err(Error::DuplicateId {
                id: u.id.clone(),
                line: *line,
            });
        }
    }
    Ok(Corpus::from_valid(
        name,
        rows.into_iter().map(|(_, u)| u).collect(),
    ))
}

/// Reads a JSONL or CSV corpus file. The corpus is named after the file stem.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Ingest {
        line: 1,
        message: format!("file is not valid UTF-8: {e}"),
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_owned();
    match format {
        CorpusFormat::Jsonl => parse_jsonl(name, &text),
        CorpusFormat::Csv => parse_csv(name, &text),
    }
}

pub fn parse_jsonl(name: impl Into<String>, text: &str) -> Result<Corpus> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(raw).map_err(|e| Error::Ingest {
            line,
            message: format!("invalid JSON record: {e}"),
        })?;
        rows.push((line, record_to_utterance(record, line)?));
    }
    finish(name.into(), rows)
}

fn split_list(field: Option<&str>) -> Option<Vec<String>> {
    let field = field?.trim();
    if field.is_empty() {
        return None;
    }
    Some(field.split('|').map(|s| s.trim().to_owned()).collect())
}

pub fn parse_csv(name: impl Into<String>, text: &str) -> Result<Corpus> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, text_col, label_col) = match (column("id"), column("text"), column("label")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Ingest {
                line: 1,
                message: "CSV header must contain id, text and label".into(),
            })
        }
    };
    let frames_col = column("frames");
    let tags_col = column("tags");

    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| Error::Ingest {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |col: usize| record.get(col).map(str::to_owned);
        let rec = Record {
            id: get(id_col),
            text: get(text_col),
            label: get(label_col),
            frames: split_list(frames_col.and_then(|c| record.get(c))),
            tags: split_list(tags_col.and_then(|c| record.get(c))),
        };
        rows.push((line, record_to_utterance(rec, line)?));
    }
    finish(name.into(), rows)
}

/// Relabeling rules: every source label is either rewritten or dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    rules: BTreeMap<String, String>,
    drop: BTreeSet<String>,
}

impl LabelMapping {
    pub fn new(rules: BTreeMap<String, String>, drop: BTreeSet<String>) -> Result<Self> {
        if let Some(label) = rules.keys().find(|l| drop.contains(*l)) {
            return Err(Error::InvalidMapping(format!(
                "label {label:?} is both rewritten and dropped"
            )));
        }
        if let Some((src, _)) = rules.iter().find(|(_, dst)| dst.is_empty()) {
            return Err(Error::InvalidMapping(format!(
                "label {src:?} maps to an empty target"
            )));
        }
        Ok(Self { rules, drop })
    }

    /// Maps every label to itself.
    pub fn identity<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rules = labels
            .into_iter()
            .map(|l| {
                let l = l.into();
                (l.clone(), l)
            })
            .collect();
        Self {
            rules,
            drop: BTreeSet::new(),
        }
    }

    pub fn rule(mut self, from: impl Into<String>, to: impl Into<String>) -> Result<Self> {
        self.rules.insert(from.into(), to.into());
        Self::new(self.rules, self.drop)
    }

    pub fn dropping(mut self, label: impl Into<String>) -> Result<Self> {
        self.drop.insert(label.into());
        Self::new(self.rules, self.drop)
    }

    pub fn rules(&self) -> &BTreeMap<String, String> {
        &self.rules
    }

    pub fn dropped(&self) -> &BTreeSet<String> {
        &self.drop
    }
}

/// Drops and rewrites labels. Fails listing every label the mapping does not
/// cover.
pub fn apply_label_mapping(corpus: &Corpus, mapping: &LabelMapping) -> Result<Corpus> {
    let unmapped: Vec<String> = corpus
        .labels()
        .iter()
        .filter(|l| !mapping.rules.contains_key(*l) && !mapping.drop.contains(*l))
        .cloned()
        .collect();
    if !unmapped.is_empty() {
        return Err(Error::UnmappedLabels { labels: unmapped });
    }
    let utterances = corpus
        .utterances()
        .iter()
        .filter(|u| !mapping.drop.contains(&u.label))
        .map(|u| Utterance {
            label: mapping.rules[&u.label].clone(),
            ..u.clone()
        })
        .collect();
    Ok(Corpus::from_valid(corpus.name.clone(), utterances))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, text: &str, label: &str) -> Utterance {
        Utterance::new(id, text, label).unwrap()
    }

    fn counts_corpus(counts: &[(&str, usize)]) -> Corpus {
        let mut utterances = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                utterances.push(utt(&format!("{label}-{i}"), "some words here", label));
            }
        }
        Corpus::new("counts", utterances).unwrap()
    }

    #[test]
    fn tokenizer_lowercases_and_strips() {
        assert_eq!(tokenize("I am SO happy."), ["i", "am", "so", "happy"]);
        assert_eq!(
            tokenize("\"Don't\" (go) [there]; now: ok?!"),
            ["don't", "go", "there", "now", "ok"]
        );
        assert_eq!(tokenize("'quoted' word"), ["quoted", "word"]);
        assert!(tokenize(" ... !? ").is_empty());
    }

    #[test]
    fn jsonl_ingest() {
        let text = concat!(
            r#"{"id":"u1","text":"I am SO happy.","label":"happy","tags":["scripted"]}"#,
            "\n\n",
            r#"{"id":"u2","text":"Leave me alone!","label":"angry","frames":["Departing"]}"#,
            "\n"
        );
        let c = parse_jsonl("t", text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.utterances()[0].tokens, ["i", "am", "so", "happy"]);
        assert!(c.utterances()[0].has_tag("scripted"));
        assert_eq!(c.utterances()[1].frames, ["Departing"]);
        assert_eq!(c.labels(), ["angry", "happy"]);
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let empty_text = "{\"id\":\"a\",\"text\":\"ok\",\"label\":\"x\"}\n{\"id\":\"b\",\"text\":\"\",\"label\":\"x\"}";
        match parse_jsonl("t", empty_text) {
            Err(Error::Ingest { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let missing = "{\"id\":\"a\",\"label\":\"x\"}";
        match parse_jsonl("t", missing) {
            Err(Error::Ingest { line: 1, message }) => assert!(message.contains("text")),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "{\"id\":\"u1\",\"text\":\"a\",\"label\":\"x\"}\n{\"id\":\"u1\",\"text\":\"b\",\"label\":\"x\"}";
        match parse_jsonl("t", dup) {
            Err(Error::DuplicateId { id, line: 2 }) => assert_eq!(id, "u1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_jsonl("t", ""), Err(Error::Ingest { .. })));
        // punctuation-only text tokenizes to nothing
        assert!(parse_jsonl("t", "{\"id\":\"a\",\"text\":\"?!\",\"label\":\"x\"}").is_err());
    }

    #[test]
    fn csv_ingest_with_lists() {
        let text = "id,text,label,frames,tags\n\
                    u1,\"Hello, there.\",neutral,Greeting|Locale,scripted|session1\n\
                    u2,Go away,angry,,\n";
        let c = parse_csv("t", text).unwrap();
        assert_eq!(c.utterances()[0].tokens, ["hello", "there"]);
        assert_eq!(c.utterances()[0].frames, ["Greeting", "Locale"]);
        assert_eq!(c.tag_histogram()["session1"], 1);
        assert!(c.utterances()[1].frames.is_empty());

        let bad = "id,text,label\nu1,,neutral\n";
        match parse_csv("t", bad) {
            Err(Error::Ingest { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_csv("t", "id,label\nu1,x\n").is_err());
    }

    #[test]
    fn happy_excited_merge() {
        let c = counts_corpus(&[("happy", 1000), ("excited", 644)]);
        let m = LabelMapping::identity(["happy"]).rule("excited", "happy").unwrap();
        let merged = apply_label_mapping(&c, &m).unwrap();
        assert_eq!(merged.class_histogram(), BTreeMap::from([("happy".into(), 1644)]));
        assert_eq!(merged.labels(), ["happy"]);
    }

    #[test]
    fn omg_style_drop() {
        let c = counts_corpus(&[
            ("sad", 639),
            ("anger", 665),
            ("neutral", 1794),
            ("happy", 1558),
            ("surprise", 31),
            ("fear", 17),
            ("disgust", 12),
        ]);
        let mut m = LabelMapping::identity(["sad", "anger", "neutral", "happy"]);
        for d in ["surprise", "fear", "disgust"] {
            m = m.dropping(d).unwrap();
        }
        let kept = apply_label_mapping(&c, &m).unwrap();
        assert_eq!(kept.len(), 4656);
        assert_eq!(kept.labels().len(), 4);
    }

    #[test]
    fn identity_mapping_is_a_no_op() {
        let c = counts_corpus(&[("a", 3), ("b", 2)]);
        let m = LabelMapping::identity(c.labels().iter().cloned());
        let once = apply_label_mapping(&c, &m).unwrap();
        assert_eq!(once, c);
        assert_eq!(apply_label_mapping(&once, &m).unwrap(), once);
    }

    #[test]
    fn unmapped_labels_are_listed() {
        let c = counts_corpus(&[("a", 1), ("b", 1), ("c", 1)]);
        let m = LabelMapping::identity(["a"]);
        match apply_label_mapping(&c, &m) {
            Err(Error::UnmappedLabels { labels }) => assert_eq!(labels, ["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mapping_rejects_overlap_and_empty_targets() {
        assert!(LabelMapping::identity(["a"]).dropping("a").is_err());
        assert!(LabelMapping::default().rule("a", "").is_err());
    }

    #[test]
    fn tag_filters() {
        let mut utterances = Vec::new();
        for i in 0..2645 {
            utterances.push(utt(&format!("s{i}"), "line", "x").with_tags(["scripted"]));
        }
        for i in 0..2971 {
            utterances.push(utt(&format!("i{i}"), "line", "y").with_tags(["improvised"]));
        }
        let c = Corpus::new("mixed", utterances).unwrap();
        assert_eq!(c.filter_by_tag("scripted").len(), 2645);
        assert!(c.filter_by_tag("nope").is_empty());
        assert_eq!(c.filter_without_tag("nope").utterances(), c.utterances());
    }

    #[test]
    fn class_histogram_cases() {
        let c = counts_corpus(&[("angry", 1117), ("happy", 1644), ("neutral", 1753), ("sad", 1102)]);
        let h = c.class_histogram();
        assert_eq!(h["angry"], 1117);
        assert_eq!(h.values().sum::<usize>(), 5616);
        assert!(Corpus::new("e", vec![]).unwrap().class_histogram().is_empty());
        let one = Corpus::new("o", vec![utt("a", "so sad", "sad")]).unwrap();
        assert_eq!(one.class_histogram(), BTreeMap::from([("sad".into(), 1)]));
    }

    #[test]
    fn jsonl_writer_round_trips() {
        let c = Corpus::new(
            "w",
            vec![
                utt("a", "Hello there.", "x").with_tags(["t1"]).with_frames(["F"]),
                utt("b", "bye", "y"),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_jsonl_to(&mut buf).unwrap();
        let back = parse_jsonl("w", std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
