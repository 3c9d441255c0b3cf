//! Deterministic text normalization, sentence segmentation, greedy passage
//! chunking to a word budget, and per-user passage capping.
//!
//! "Word" throughout means a post-normalization token: lowercased,
//! punctuation-stripped, with URLs and lexicon names replaced by sentinel
//! tokens and stopwords removed.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{RiskLevel, UserRecord};
use crate::error::{Error, Result};
use crate::seed::{mix_seed, rng_from, stream_salt};

/// Replacement token for detected person names.
pub const PERSON_TOKEN: &str = "_PERSON_";
/// Replacement token for detected URLs.
pub const URL_TOKEN: &str = "_URL_";
/// Reserved mask token, shared with the masked-language-model objective.
pub const MASK_TOKEN: &str = "_MASK_";

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_FIRST_NAMES: &str = include_str!("../data/first_names.txt");

/// The versioned stopword list shipped with the crate.
pub fn default_stopwords() -> HashSet<String> {
    DEFAULT_STOPWORDS.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
}

/// The first-name lexicon shipped with the crate.
pub fn default_name_lexicon() -> HashSet<String> {
    DEFAULT_FIRST_NAMES.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
}

/// One segmented sentence as a non-empty token list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sentence {
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Sentence { tokens }
    }

    pub fn word_count(&self) -> usize {
        self.tokens.len()
    }
}

/// A chunk of whole sentences within the word budget (a single over-long
/// sentence may exceed it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub origin_post_id: String,
    pub sentences: Vec<Sentence>,
}

impl Passage {
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Sentence::word_count).sum()
    }

    /// All tokens in sentence order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }
}

/// A user after preprocessing: an ordered, capped list of passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedUser {
    pub user_id: String,
    pub passages: Vec<Passage>,
}

/// Preprocessing parameters. The seed drives passage capping only.
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub max_passage_len: usize,
    pub passage_cap: usize,
    pub seed: u64,
    pub stopwords: HashSet<String>,
    pub name_lexicon: HashSet<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_passage_len: 128,
            passage_cap: 100,
            seed: 0,
            stopwords: default_stopwords(),
            name_lexicon: default_name_lexicon(),
        }
    }
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Normalizes raw text to a token list: lowercase, URLs to `_URL_`, lexicon
/// names to `_PERSON_`, punctuation-only tokens and stopwords dropped.
/// Sentinel tokens already present in the input pass through unchanged.
pub fn normalize_text(
    raw: &str,
    stopwords: &HashSet<String>,
    name_lexicon: &HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::new();
    for span in raw.split_whitespace() {
        if span == PERSON_TOKEN || span == URL_TOKEN || span == MASK_TOKEN {
            out.push(span.to_string());
            continue;
        }
        let lower = span.to_lowercase();
        let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
        if is_url(trimmed) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let stripped: String = lower.chars().filter(|c| c.is_alphanumeric()).collect();
        if stripped.is_empty() {
            continue;
        }
        if name_lexicon.contains(&stripped) {
            out.push(PERSON_TOKEN.to_string());
            continue;
        }
        if stopwords.contains(&stripped) {
            continue;
        }
        out.push(stripped);
    }
    out
}

/// Abbreviations whose trailing period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.",
    "st.", "no.", "approx.", "dept.", "est.", "fig.", "inc.", "ltd.", "a.m.", "p.m.", "u.s.",
    "u.k.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.",
    "nov.", "dec.",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Rule-based segmentation on terminal punctuation followed by whitespace,
/// with an abbreviation guard for periods. Joining the outputs reproduces
/// the input's non-whitespace content.
pub fn split_sentences(raw: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        // Consume the whole run of terminal punctuation.
        let mut j = i;
        let mut saw_period = false;
        while j < chars.len() && is_terminal(chars[j].1) {
            saw_period |= chars[j].1 == '.';
            j += 1;
        }
        let boundary = j >= chars.len() || chars[j].1.is_whitespace();
        if boundary {
            let end_byte = if j < chars.len() { chars[j].0 } else { raw.len() };
            let guarded = saw_period && {
                let token_start = raw[..end_byte]
                    .rfind(char::is_whitespace)
                    .map(|p| p + raw[p..].chars().next().unwrap().len_utf8())
                    .unwrap_or(0);
                let token = raw[token_start..end_byte]
                    .trim_start_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase();
                ABBREVIATIONS.contains(&token.as_str())
            };
            if !guarded {
                let sentence = raw[start..end_byte].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = end_byte;
            }
        }
        i = j;
    }
    let tail = raw[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Greedy stack chunking: flush the stack as one passage whenever adding
/// the next sentence would exceed `max_len`. A single sentence longer than
/// the budget is emitted alone.
pub fn chunk_passages(sentences: &[Sentence], max_len: usize, origin_post_id: &str) -> Vec<Passage> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut passages = Vec::new();
    let mut stack: Vec<Sentence> = Vec::new();
    let mut stack_words = 0usize;
    for sentence in sentences {
        let w = sentence.word_count();
        if !stack.is_empty() && stack_words + w > max_len {
            passages.push(Passage {
                origin_post_id: origin_post_id.to_string(),
                sentences: std::mem::take(&mut stack),
            });
            stack_words = 0;
        }
        stack.push(sentence.clone());
        stack_words += w;
    }
    if !stack.is_empty() {
        passages.push(Passage {
            origin_post_id: origin_post_id.to_string(),
            sentences: stack,
        });
    }
    passages
}

/// Uniform sample without replacement of at most `cap` passages, keeping
/// the original relative order.
pub fn cap_passages(passages: &[Passage], cap: usize, seed: u64) -> Vec<Passage> {
    assert!(cap >= 1, "cap must be >= 1");
    if passages.len() <= cap {
        return passages.to_vec();
    }
    let mut rng = rng_from(seed);
    let mut picks: Vec<usize> =
        rand::seq::index::sample(&mut rng, passages.len(), cap).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| passages[i].clone()).collect()
}

/// Runs the full per-user pipeline: per post, title is prepended to the
/// body, sentences are segmented, normalized, and chunked; all posts'
/// passages are then concatenated in post order and capped.
pub fn preprocess_user(user: &UserRecord, config: &PreprocessConfig) -> Result<ProcessedUser> {
    if user.posts.is_empty() {
        return Err(Error::Validation(format!("user '{}' has no posts", user.user_id)));
    }
    let mut passages = Vec::new();
    for post in &user.posts {
        let combined = format!("{} {}", post.title, post.body);
        let sentences: Vec<Sentence> = split_sentences(&combined)
            .iter()
            .filter_map(|raw| {
                let tokens = normalize_text(raw, &config.stopwords, &config.name_lexicon);
                (!tokens.is_empty()).then_some(Sentence::new(tokens))
            })
            .collect();
        passages.extend(chunk_passages(&sentences, config.max_passage_len, &post.post_id));
    }
    if passages.is_empty() {
        return Err(Error::EmptyAfterPreprocessing {
            user_id: user.user_id.clone(),
        });
    }
    let cap_seed = mix_seed(config.seed, stream_salt(&user.user_id));
    let passages = cap_passages(&passages, config.passage_cap, cap_seed);
    Ok(ProcessedUser {
        user_id: user.user_id.clone(),
        passages,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ProcessedLine {
    user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<RiskLevel>,
    passages: Vec<Passage>,
}

/// Writes preprocessed users (with optional labels) as JSONL.
pub fn save_processed(
    users: &[(ProcessedUser, Option<RiskLevel>)],
    path: &Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (user, label) in users {
        let line = ProcessedLine {
            user_id: user.user_id.clone(),
            label: *label,
            passages: user.passages.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| Error::Validation(format!("serialize processed line: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a preprocessed JSONL corpus.
pub fn load_processed(path: &Path) -> Result<Vec<(ProcessedUser, Option<RiskLevel>)>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ProcessedLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((
            ProcessedUser {
                user_id: parsed.user_id,
                passages: parsed.passages,
            },
            parsed.label,
        ));
    }
    Ok(out)
}
