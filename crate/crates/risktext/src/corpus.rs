//! Data model, JSONL ingestion, splitting, pseudo-label construction and
//! mixing, and synthetic corpus generation.
//!
//! A corpus is a set of users, each carrying an ordered list of raw posts
//! and optionally one of four ordered risk labels. All sampling operations
//! are seeded and bit-reproducible.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// The four-way ordered risk label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    #[serde(rename = "a")]
    NoRisk,
    #[serde(rename = "b")]
    LowRisk,
    #[serde(rename = "c")]
    MediumRisk,
    #[serde(rename = "d")]
    HighRisk,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 4] = [
        RiskLevel::NoRisk,
        RiskLevel::LowRisk,
        RiskLevel::MediumRisk,
        RiskLevel::HighRisk,
    ];

    /// Class index in label order: a=0, b=1, c=2, d=3.
    pub fn index(self) -> usize {
        match self {
            RiskLevel::NoRisk => 0,
            RiskLevel::LowRisk => 1,
            RiskLevel::MediumRisk => 2,
            RiskLevel::HighRisk => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<RiskLevel> {
        RiskLevel::ALL.get(i).copied()
    }

    /// Single-letter code used in the corpus format.
    pub fn letter(self) -> char {
        match self {
            RiskLevel::NoRisk => 'a',
            RiskLevel::LowRisk => 'b',
            RiskLevel::MediumRisk => 'c',
            RiskLevel::HighRisk => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<RiskLevel> {
        match c {
            'a' => Some(RiskLevel::NoRisk),
            'b' => Some(RiskLevel::LowRisk),
            'c' => Some(RiskLevel::MediumRisk),
            'd' => Some(RiskLevel::HighRisk),
            _ => None,
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One raw post as ingested from the corpus format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub subreddit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    pub title: String,
    pub body: String,
}

/// A user and their ordered posts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub posts: Vec<PostRecord>,
}

/// Where an entry's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    PseudoAnxiety,
    PseudoDepression,
    PseudoTaskC,
    Synthetic,
}

/// One dataset entry: a user, an optional label, and its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub user: UserRecord,
    pub label: Option<RiskLevel>,
    pub provenance: Provenance,
}

/// A set of users with optional labels. User ids are unique across entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    entries: Vec<DatasetEntry>,
}

impl LabeledDataset {
    /// Builds a dataset, validating that user ids are unique.
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.user.user_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate user_id '{}'",
                    e.user.user_id
                )));
            }
        }
        Ok(LabeledDataset { entries })
    }

    pub fn empty() -> Self {
        LabeledDataset { entries: Vec::new() }
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DatasetEntry> {
        self.entries.iter()
    }

    /// True when every entry carries a label.
    pub fn fully_labeled(&self) -> bool {
        self.entries.iter().all(|e| e.label.is_some())
    }

    /// Entry count per class, in label order.
    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for e in &self.entries {
            if let Some(l) = e.label {
                counts[l.index()] += 1;
            }
        }
        counts
    }
}

/// One line of the JSONL corpus format.
#[derive(Debug, Serialize, Deserialize)]
struct CorpusLine {
    user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<RiskLevel>,
    posts: Vec<PostRecord>,
}

/// Supported corpus file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

/// Loads a corpus from a JSONL file: one user per line, UTF-8.
///
/// Unlabeled lines are accepted; they are usable only for pre-training and
/// pseudo-labeling. Malformed lines and duplicate user ids are rejected
/// with the offending line number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledDataset> {
    match format {
        CorpusFormat::Jsonl => load_corpus_jsonl(path),
    }
}

fn load_corpus_jsonl(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(prev) = seen.insert(parsed.user_id.clone(), lineno) {
            return Err(Error::Validation(format!(
                "duplicate user_id '{}' at line {} (first seen at line {})",
                parsed.user_id, lineno, prev
            )));
        }
        if parsed.posts.is_empty() {
            return Err(Error::Validation(format!(
                "user '{}' at line {} has no posts",
                parsed.user_id, lineno
            )));
        }
        let mut post_ids = HashSet::new();
        for p in &parsed.posts {
            if !post_ids.insert(p.post_id.as_str()) {
                return Err(Error::Validation(format!(
                    "user '{}' at line {} has duplicate post_id '{}'",
                    parsed.user_id, lineno, p.post_id
                )));
            }
        }
        entries.push(DatasetEntry {
            user: UserRecord {
                user_id: parsed.user_id,
                posts: parsed.posts,
            },
            label: parsed.label,
            provenance: Provenance::Gold,
        });
    }
    LabeledDataset::new(entries)
}

/// Writes a dataset in the JSONL corpus format (provenance is not part of
/// the wire format).
pub fn save_corpus(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in dataset.iter() {
        let line = CorpusLine {
            user_id: e.user.user_id.clone(),
            label: e.label,
            posts: e.user.posts.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|err| Error::Validation(format!("serialize corpus line: {err}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Rounds half away from zero; used for every "fraction of a count" rule.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Largest-remainder apportionment of `total` among weighted items.
///
/// Equal remainders are broken by ascending tie id. Realized counts always
/// sum to `total`.
pub fn apportion(items: &[(String, f64)], total: usize) -> Result<Vec<usize>> {
    if items.is_empty() {
        return Err(Error::Validation("apportion: no items".into()));
    }
    let weight_sum: f64 = items.iter().map(|(_, w)| w).sum();
    if weight_sum.is_nan() || weight_sum <= 0.0 || items.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::Validation(
            "apportion: weights must be nonnegative with positive sum".into(),
        ));
    }
    let quotas: Vec<f64> = items
        .iter()
        .map(|(_, w)| total as f64 * w / weight_sum)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| items[a].0.cmp(&items[b].0))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Splits a fully labeled dataset into disjoint train/validation parts.
///
/// The validation part has `round(valid_fraction * n)` entries, stratified
/// per class with largest-remainder rounding, and is deterministic under
/// the seed. Both parts preserve the input's entry order.
pub fn split_train_valid(
    dataset: &LabeledDataset,
    valid_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "valid_fraction must be in (0, 1), got {valid_fraction}"
        )));
    }
    if !dataset.fully_labeled() {
        return Err(Error::Validation(
            "split_train_valid requires a fully labeled dataset".into(),
        ));
    }

    let total_valid = round_half_up(valid_fraction * dataset.len() as f64);
    let mut by_class: [Vec<usize>; 4] = Default::default();
    for (i, e) in dataset.iter().enumerate() {
        by_class[e.label.unwrap().index()].push(i);
    }
    let items: Vec<(String, f64)> = RiskLevel::ALL
        .iter()
        .map(|l| (l.letter().to_string(), by_class[l.index()].len() as f64))
        .collect();
    let per_class = apportion(&items, total_valid)?;

    let mut rng = rng_from(seed);
    let mut in_valid = vec![false; dataset.len()];
    for (class_idx, members) in by_class.iter().enumerate() {
        let take = per_class[class_idx];
        if take == 0 {
            continue;
        }
        let picks = rand::seq::index::sample(&mut rng, members.len(), take);
        for p in picks.iter() {
            in_valid[members[p]] = true;
        }
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (i, e) in dataset.iter().enumerate() {
        if in_valid[i] {
            valid.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((LabeledDataset::new(train)?, LabeledDataset::new(valid)?))
}

/// Samples `count` users without replacement and assigns the same label to
/// every sampled user, tagging them with `provenance`.
pub fn build_pseudo_labeled(
    aux: &LabeledDataset,
    assigned: RiskLevel,
    count: usize,
    seed: u64,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    if count > aux.len() {
        return Err(Error::Validation(format!(
            "requested {count} pseudo-labeled users but source has only {}",
            aux.len()
        )));
    }
    let mut rng = rng_from(seed);
    let picks = rand::seq::index::sample(&mut rng, aux.len(), count);
    let entries = picks
        .iter()
        .map(|i| DatasetEntry {
            user: aux.entries()[i].user.clone(),
            label: Some(assigned),
            provenance,
        })
        .collect();
    LabeledDataset::new(entries)
}

/// Samples `count` users without replacement, keeping each user's own
/// label (for auxiliary corpora that ship crowd labels).
pub fn sample_labeled(
    aux: &LabeledDataset,
    count: usize,
    seed: u64,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    if count > aux.len() {
        return Err(Error::Validation(format!(
            "requested {count} users but source has only {}",
            aux.len()
        )));
    }
    if !aux.fully_labeled() {
        return Err(Error::Validation(
            "sample_labeled requires a labeled source".into(),
        ));
    }
    let mut rng = rng_from(seed);
    let picks = rand::seq::index::sample(&mut rng, aux.len(), count);
    let entries = picks
        .iter()
        .map(|i| {
            let e = &aux.entries()[i];
            DatasetEntry {
                user: e.user.clone(),
                label: e.label,
                provenance,
            }
        })
        .collect();
    LabeledDataset::new(entries)
}

/// One source in a pseudo-label mix.
#[derive(Debug, Clone)]
pub struct MixComponent {
    pub source_id: String,
    pub assigned: RiskLevel,
    pub weight: f64,
    pub provenance: Provenance,
}

/// A recipe for combining pseudo-label sources at fixed relative weights
/// into a dataset of exactly `total_count` users.
#[derive(Debug, Clone)]
pub struct MixSpec {
    pub components: Vec<MixComponent>,
    pub total_count: usize,
}

/// Concatenates per-source samples with counts apportioned by weight so
/// they sum exactly to `spec.total_count`.
pub fn mix_pseudo_sources(
    spec: &MixSpec,
    sources: &HashMap<String, LabeledDataset>,
    seed: u64,
) -> Result<LabeledDataset> {
    let items: Vec<(String, f64)> = spec
        .components
        .iter()
        .map(|c| (c.source_id.clone(), c.weight))
        .collect();
    let counts = apportion(&items, spec.total_count)?;

    let mut rng = rng_from(seed);
    let mut entries = Vec::with_capacity(spec.total_count);
    for (component, &count) in spec.components.iter().zip(&counts) {
        let source = sources.get(&component.source_id).ok_or_else(|| {
            Error::Validation(format!("unknown mix source '{}'", component.source_id))
        })?;
        if count > source.len() {
            return Err(Error::Validation(format!(
                "mix source '{}' has {} users but {} were requested",
                component.source_id,
                source.len(),
                count
            )));
        }
        let picks = rand::seq::index::sample(&mut rng, source.len(), count);
        for i in picks.iter() {
            entries.push(DatasetEntry {
                user: source.entries()[i].user.clone(),
                label: Some(component.assigned),
                provenance: component.provenance,
            });
        }
    }
    LabeledDataset::new(entries)
}

/// Appends the first `round(ratio * |train|)` pseudo entries to the
/// training set; gold entries are unchanged.
pub fn augment_training(
    train: &LabeledDataset,
    pseudo: &LabeledDataset,
    ratio: f64,
) -> Result<LabeledDataset> {
    if ratio < 0.0 {
        return Err(Error::Validation(format!("ratio must be >= 0, got {ratio}")));
    }
    let take = round_half_up(ratio * train.len() as f64);
    if pseudo.len() < take {
        return Err(Error::Validation(format!(
            "augmentation needs {take} pseudo users but only {} are available",
            pseudo.len()
        )));
    }
    let mut entries = train.entries().to_vec();
    entries.extend(pseudo.entries()[..take].iter().cloned());
    LabeledDataset::new(entries)
}

/// Class-conditional vocabulary profile for synthetic corpora.
///
/// Each class draws tokens from its own distribution over a shared
/// vocabulary; post, sentence, and word counts are drawn uniformly from
/// the configured inclusive ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocabulary: Vec<String>,
    pub class_weights: [Vec<f64>; 4],
    pub posts_per_user: (usize, usize),
    pub sentences_per_post: (usize, usize),
    pub words_per_sentence: (usize, usize),
}

impl SyntheticSpec {
    /// A profile with four disjoint class vocabularies of `tokens_per_class`
    /// tokens each; useful for separability checks.
    pub fn separable(tokens_per_class: usize) -> Self {
        let letters = ['a', 'b', 'c', 'd'];
        let mut vocabulary = Vec::new();
        for letter in letters {
            for j in 0..tokens_per_class {
                vocabulary.push(format!("w{letter}{j:02}"));
            }
        }
        let mut class_weights: [Vec<f64>; 4] = Default::default();
        for (class, weights) in class_weights.iter_mut().enumerate() {
            let mut w = vec![0.0; vocabulary.len()];
            for j in 0..tokens_per_class {
                w[class * tokens_per_class + j] = 1.0;
            }
            *weights = w;
        }
        SyntheticSpec {
            vocabulary,
            class_weights,
            posts_per_user: (1, 3),
            sentences_per_post: (2, 4),
            words_per_sentence: (4, 8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::Validation("synthetic spec has empty vocabulary".into()));
        }
        for (i, w) in self.class_weights.iter().enumerate() {
            if w.len() != self.vocabulary.len() {
                return Err(Error::Validation(format!(
                    "class {i} weights length {} does not match vocabulary size {}",
                    w.len(),
                    self.vocabulary.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if sum.is_nan() || sum <= 0.0 || w.iter().any(|x| *x < 0.0) {
                return Err(Error::Validation(format!(
                    "class {i} weights must be nonnegative with positive sum"
                )));
            }
        }
        for (lo, hi) in [
            self.posts_per_user,
            self.sentences_per_post,
            self.words_per_sentence,
        ] {
            if lo == 0 || hi < lo {
                return Err(Error::Validation(
                    "length ranges must satisfy 1 <= lo <= hi".into(),
                ));
            }
        }
        Ok(())
    }
}

fn sample_token<'a>(
    vocab: &'a [String],
    cumulative: &[f64],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> &'a str {
    let total = *cumulative.last().unwrap();
    let x = rng.gen_range(0.0..total);
    let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&x).unwrap()) {
        Ok(i) => i + 1,
        Err(i) => i,
    };
    &vocab[idx.min(vocab.len() - 1)]
}

fn gen_user(
    spec: &SyntheticSpec,
    cumulative: &[f64],
    user_id: String,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> UserRecord {
    let n_posts = rng.gen_range(spec.posts_per_user.0..=spec.posts_per_user.1);
    let mut posts = Vec::with_capacity(n_posts);
    for p in 0..n_posts {
        let n_sents = rng.gen_range(spec.sentences_per_post.0..=spec.sentences_per_post.1);
        let mut sentences = Vec::with_capacity(n_sents);
        for _ in 0..n_sents {
            let n_words = rng.gen_range(spec.words_per_sentence.0..=spec.words_per_sentence.1);
            let words: Vec<&str> = (0..n_words)
                .map(|_| sample_token(&spec.vocabulary, cumulative, rng))
                .collect();
            sentences.push(format!("{}.", words.join(" ")));
        }
        let title_words: Vec<&str> = (0..2)
            .map(|_| sample_token(&spec.vocabulary, cumulative, rng))
            .collect();
        posts.push(PostRecord {
            post_id: format!("p{p}"),
            subreddit: "synthetic".into(),
            timestamp: Some(p as i64),
            title: title_words.join(" "),
            body: sentences.join(" "),
        });
    }
    UserRecord { user_id, posts }
}

fn class_cumulative(spec: &SyntheticSpec, class: usize) -> Vec<f64> {
    let mut acc = 0.0;
    spec.class_weights[class]
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Generates a balanced labeled corpus: user `i` belongs to class `i mod 4`
/// and draws every token from that class's distribution.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    n_users: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    generate_with_prefix(spec, n_users, seed, "synth", true)
}

/// As [`generate_synthetic_corpus`] but with a caller-chosen user id prefix
/// and optional label suppression (for auxiliary/unlabeled corpora).
pub fn generate_with_prefix(
    spec: &SyntheticSpec,
    n_users: usize,
    seed: u64,
    prefix: &str,
    labeled: bool,
) -> Result<LabeledDataset> {
    spec.validate()?;
    let cumulative: Vec<Vec<f64>> = (0..4).map(|c| class_cumulative(spec, c)).collect();
    let mut rng = rng_from(seed);
    let mut entries = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let label = RiskLevel::from_index(i % 4).unwrap();
        let user_id = format!("{prefix}-{}-{i:04}", label.letter());
        let user = gen_user(spec, &cumulative[label.index()], user_id, &mut rng);
        entries.push(DatasetEntry {
            user,
            label: if labeled { Some(label) } else { None },
            provenance: Provenance::Synthetic,
        });
    }
    LabeledDataset::new(entries)
}

/// Generates a corpus in which every user draws from a single class
/// profile; used to stand in for topic-specific auxiliary subreddits.
pub fn generate_profile_corpus(
    spec: &SyntheticSpec,
    class: RiskLevel,
    n_users: usize,
    seed: u64,
    prefix: &str,
    labeled: bool,
) -> Result<LabeledDataset> {
    spec.validate()?;
    let cumulative = class_cumulative(spec, class.index());
    let mut rng = rng_from(seed);
    let mut entries = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let user_id = format!("{prefix}-{i:04}");
        let user = gen_user(spec, &cumulative, user_id, &mut rng);
        entries.push(DatasetEntry {
            user,
            label: if labeled { Some(class) } else { None },
            provenance: Provenance::Synthetic,
        });
    }
    LabeledDataset::new(entries)
}
