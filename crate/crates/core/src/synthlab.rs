//! Synthetic corpora with controllable near-duplication.
//!
//! A corpus mixes *scripted* utterances, which are noisy copies drawn from a
//! small pool of templates, with *improvised* ones that are sampled fresh.
//! Labels are made learnable by injecting label cue tokens (`angry_cue1`,
//! ...) with probability `label_signal_strength`. Plain vocabulary tokens are
//! `w0`, `w1`, ... and carry no label information.
//!
//! Every utterance also gets a frame stream: `w{i}` maps to `f{i % 64}` and a
//! cue token maps to `{label}_frame`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const SCRIPTED: &str = "scripted";
pub const IMPROVISED: &str = "improvised";

const CUES_PER_LABEL: usize = 3;
const FRAME_BUCKETS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub n_utterances: usize,
    pub n_labels: usize,
    pub vocab_size: usize,
    /// Inclusive token-count range.
    pub sentence_len: (usize, usize),
    pub template_count: usize,
    pub duplication_rate: f64,
    pub label_signal_strength: f64,
    pub paraphrase_noise: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_utterances: 1000,
            n_labels: 4,
            vocab_size: 2000,
            sentence_len: (8, 14),
            template_count: 80,
            duplication_rate: 0.5,
            label_signal_strength: 0.5,
            paraphrase_noise: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Number of scripted utterances, `ceil(duplication_rate * n)`.
    pub fn scripted_count(&self) -> usize {
        let exact = self.duplication_rate * self.n_utterances as f64;
        // Guard against 0.6 * 2000 = 1200.0000000000002.
        ((exact - 1e-9).ceil().max(0.0) as usize).min(self.n_utterances)
    }

    pub fn labels(&self) -> Vec<String> {
        synth_labels(self.n_labels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (lo, hi) = self.sentence_len;
        if self.n_utterances == 0 {
            return bad("n_utterances must be positive".into());
        }
        if self.n_labels < 2 {
            return bad("n_labels must be at least 2".into());
        }
        if lo == 0 || lo > hi {
            return bad(format!("invalid sentence length range ({lo}, {hi})"));
        }
        if self.vocab_size < hi {
            return bad(format!(
                "vocab_size {} is smaller than the longest sentence ({hi} tokens)",
                self.vocab_size
            ));
        }
        for (name, v) in [
            ("duplication_rate", self.duplication_rate),
            ("label_signal_strength", self.label_signal_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.paraphrase_noise > lo {
            return bad(format!(
                "paraphrase_noise {} exceeds the shortest sentence ({lo} tokens)",
                self.paraphrase_noise
            ));
        }
        if self.scripted_count() > 0 && self.template_count < self.n_labels {
            return bad(format!(
                "template_count {} cannot cover {} labels",
                self.template_count, self.n_labels
            ));
        }
        Ok(())
    }
}

fn synth_labels(n: usize) -> Vec<String> {
    if n == 4 {
        ["angry", "happy", "neutral", "sad"].map(String::from).to_vec()
    } else {
        (0..n).map(|i| format!("class{i:02}")).collect()
    }
}

fn frame_of(token: &str) -> String {
    match token.strip_prefix('w').and_then(|n| n.parse::<usize>().ok()) {
        Some(i) => format!("f{}", i % FRAME_BUCKETS),
        None => {
            let label = token.rsplit_once("_cue").map_or(token, |(l, _)| l);
            format!("{label}_frame")
        }
    }
}

fn sentence(cfg: &SynthConfig, label: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.gen_range(cfg.sentence_len.0..=cfg.sentence_len.1);
    let mut tokens: Vec<String> = rand::seq::index::sample(rng, cfg.vocab_size, len)
        .into_iter()
        .map(|i| format!("w{i}"))
        .collect();
    if rng.gen_bool(cfg.label_signal_strength) {
        let at = rng.gen_range(0..len);
        tokens[at] = format!("{label}_cue{}", rng.gen_range(0..CUES_PER_LABEL));
    }
    tokens
}

fn paraphrase(cfg: &SynthConfig, template: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut tokens = template.to_vec();
    for at in rand::seq::index::sample(rng, tokens.len(), cfg.paraphrase_noise) {
        tokens[at] = format!("w{}", rng.gen_range(0..cfg.vocab_size));
    }
    tokens
}

fn generate_with(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Corpus> {
    cfg.validate()?;
    let labels = cfg.labels();
    let n = cfg.n_utterances;
    let scripted = cfg.scripted_count();

    let templates: Vec<(usize, Vec<String>)> = if scripted > 0 {
        (0..cfg.template_count)
            .map(|t| {
                let l = t % labels.len();
                (l, sentence(cfg, &labels[l], rng))
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut label_ids: Vec<usize> = (0..n).map(|i| i % labels.len()).collect();
    label_ids.shuffle(rng);
    let mut is_scripted: Vec<bool> = (0..n).map(|i| i < scripted).collect();
    is_scripted.shuffle(rng);

    let utterances = (0..n)
        .map(|i| {
            let l = label_ids[i];
            let (tokens, tag) = if is_scripted[i] {
                let pool: Vec<&Vec<String>> = templates
                    .iter()
                    .filter(|(tl, _)| *tl == l)
                    .map(|(_, t)| t)
                    .collect();
                let template = pool[rng.gen_range(0..pool.len())];
                (paraphrase(cfg, template, rng), SCRIPTED)
            } else {
                (sentence(cfg, &labels[l], rng), IMPROVISED)
            };
            let frames: Vec<String> = tokens.iter().map(|t| frame_of(t)).collect();
            let id = format!("{}-{:016x}-{i:06}", cfg.name, cfg.seed);
            Ok(Utterance::new(id, tokens.join(" "), labels[l].clone())?
                .with_frames(frames)
                .with_tags([tag]))
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(cfg.name.clone(), utterances)
}

/// Generates one corpus; a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    generate_with(cfg, &mut rng_for(cfg.seed, "synth"))
}

/// Source and target corpora sharing a label vocabulary and cue convention.
/// The two are drawn from separate random streams even when the configs are
/// identical, and get distinct names (and so distinct ids).
pub fn generate_pair(source: &SynthConfig, target: &SynthConfig) -> Result<(Corpus, Corpus)> {
    if source.n_labels != target.n_labels {
        return Err(Error::Config(format!(
            "label count mismatch: source has {}, target has {}",
            source.n_labels, target.n_labels
        )));
    }
    let mut source = source.clone();
    let mut target = target.clone();
    if source.name == target.name {
        source.name = format!("{}-source", source.name);
        target.name = format!("{}-target", target.name);
    }
    let a = generate_with(&source, &mut rng_for(source.seed, "synth-source"))?;
    let b = generate_with(&target, &mut rng_for(target.seed, "synth-target"))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{exclusivity_report, overlap_curve, OverlapMode};

    fn small() -> SynthConfig {
        SynthConfig {
            n_utterances: 100,
            vocab_size: 1000,
            template_count: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn scripted_count_follows_rate() {
        let c = generate(&small()).unwrap();
        let tags = c.tag_histogram();
        assert_eq!(tags[SCRIPTED], 50);
        assert_eq!(tags[IMPROVISED], 50);
        assert_eq!(
            SynthConfig { n_utterances: 2000, duplication_rate: 0.6, ..small() }.scripted_count(),
            1200
        );
        assert_eq!(SynthConfig { duplication_rate: 0.555, ..small() }.scripted_count(), 56);
    }

    #[test]
    fn labels_are_balanced() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.labels(), ["angry", "happy", "neutral", "sad"]);
        assert!(c.class_histogram().values().all(|&v| v == 25));
        let six = generate(&SynthConfig { n_labels: 6, n_utterances: 60, ..small() }).unwrap();
        assert_eq!(six.labels().len(), 6);
        assert!(six.class_histogram().values().all(|&v| v == 10));
    }

    #[test]
    fn reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.utterances()[0].tokens, c.utterances()[0].tokens);
    }

    #[test]
    fn full_duplication_overlaps_everywhere() {
        let cfg = SynthConfig {
            duplication_rate: 1.0,
            paraphrase_noise: 0,
            template_count: 10,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let curve = overlap_curve(&c, cfg.sentence_len.0, cfg.sentence_len.0, OverlapMode::Contiguous)
            .unwrap();
        assert_eq!(curve.points[0].proportion, Some(1.0));
    }

    #[test]
    fn fresh_sentences_rarely_overlap() {
        let cfg = SynthConfig {
            duplication_rate: 0.0,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let curve = overlap_curve(&c, 4, 8, OverlapMode::Contiguous).unwrap();
        for p in &curve.points {
            assert!(p.proportion.unwrap() < 0.02, "{p:?}");
        }
    }

    #[test]
    fn frames_follow_tokens() {
        let c = generate(&small()).unwrap();
        for u in c.utterances() {
            assert_eq!(u.frames.len(), u.tokens.len());
        }
        assert_eq!(frame_of("w130"), "f2");
        assert_eq!(frame_of("sad_cue2"), "sad_frame");
    }

    #[test]
    fn config_errors() {
        let too_long = SynthConfig { vocab_size: 5, ..small() };
        assert!(matches!(generate(&too_long), Err(Error::Config(_))));
        assert!(generate(&SynthConfig { duplication_rate: 1.5, ..small() }).is_err());
        assert!(generate(&SynthConfig { template_count: 2, ..small() }).is_err());
        assert!(generate(&SynthConfig { paraphrase_noise: 9, ..small() }).is_err());
        assert!(generate(&SynthConfig { sentence_len: (5, 3), ..small() }).is_err());
    }

    #[test]
    fn pairs() {
        let (a, b) = generate_pair(&small(), &small()).unwrap();
        assert_eq!(a.labels(), b.labels());
        let ids: std::collections::HashSet<&str> =
            a.utterances().iter().map(|u| u.id.as_str()).collect();
        assert!(b.utterances().iter().all(|u| !ids.contains(u.id.as_str())));
        assert_ne!(a.utterances()[0].tokens, b.utterances()[0].tokens);
        let other = SynthConfig { n_labels: 3, ..small() };
        assert!(generate_pair(&small(), &other).is_err());
    }

    #[test]
    fn duplicated_templates_raise_exclusivity() {
        let base = SynthConfig { n_utterances: 400, label_signal_strength: 0.0, ..small() };
        let random = generate(&SynthConfig { duplication_rate: 0.0, ..base.clone() }).unwrap();
        let dup = generate(&SynthConfig { duplication_rate: 0.9, ..base }).unwrap();
        let m_random = exclusivity_report(&random, 2).unwrap().median_exclusivity().unwrap();
        let m_dup = exclusivity_report(&dup, 2).unwrap().median_exclusivity().unwrap();
        assert!(m_random < m_dup, "{m_random} vs {m_dup}");
    }
}
