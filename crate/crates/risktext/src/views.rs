//! Perturbed user views for consistency training.
//!
//! Four strategies produce a degraded copy of a preprocessed user: masking
//! a fraction of tokens per sentence, masking whole sentences per passage,
//! keeping only the first and last sentence of each passage, or keeping a
//! k-means summary of each passage. Masking substitutes the reserved
//! `_MASK_` token and never deletes; the extractive strategies emit
//! order-preserving subsequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{Passage, ProcessedUser, Sentence, MASK_TOKEN};
use crate::seed::{mix_seed, rng_from};

/// One of the four perturbation recipes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewStrategy {
    /// Mask `floor(rate * n)` tokens in each n-token sentence.
    WordMask { mask_rate: f64 },
    /// Mask all tokens of `floor(rate * m)` sentences in each m-sentence passage.
    SentMask { mask_rate: f64 },
    /// Keep only the first and last sentence of each passage.
    BegEd,
    /// Keep the k sentences nearest the k-means centroids of each passage.
    KSum { k: usize },
}

impl ViewStrategy {
    pub const DEFAULT_MASK_RATE: f64 = 0.10;
    pub const DEFAULT_K: usize = 5;

    pub fn validate(&self) -> Result<()> {
        match self {
            ViewStrategy::WordMask { mask_rate } | ViewStrategy::SentMask { mask_rate } => {
                if !(*mask_rate > 0.0 && *mask_rate < 1.0) {
                    return Err(Error::Validation(format!(
                        "mask_rate must be in (0, 1), got {mask_rate}"
                    )));
                }
            }
            ViewStrategy::KSum { k } => {
                if *k < 1 {
                    return Err(Error::Validation("k must be >= 1".into()));
                }
            }
            ViewStrategy::BegEd => {}
        }
        Ok(())
    }
}

/// A perturbed copy of a user, tagged with the strategy and seed that
/// produced it. The passage count always matches the source.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedUser {
    pub user_id: String,
    pub passages: Vec<Passage>,
    pub strategy: ViewStrategy,
    pub seed: u64,
}

/// Masks exactly `floor(rate * n)` token positions per sentence, sampled
/// uniformly without replacement.
pub fn word_mask(passage: &Passage, rate: f64, seed: u64) -> Passage {
    let mut rng = rng_from(seed);
    let sentences = passage
        .sentences
        .iter()
        .map(|sentence| {
            let n = sentence.tokens.len();
            let count = (rate * n as f64).floor() as usize;
            let mut tokens = sentence.tokens.clone();
            if count > 0 {
                for idx in rand::seq::index::sample(&mut rng, n, count) {
                    tokens[idx] = MASK_TOKEN.to_string();
                }
            }
            Sentence::new(tokens)
        })
        .collect();
    Passage {
        origin_post_id: passage.origin_post_id.clone(),
        sentences,
    }
}

/// Masks exactly `floor(rate * m)` whole sentences in each passage of the
/// user; sentence counts and order are preserved.
pub fn sent_mask(user: &ProcessedUser, rate: f64, seed: u64) -> PerturbedUser {
    let mut rng = rng_from(seed);
    let passages = user
        .passages
        .iter()
        .map(|passage| {
            let m = passage.sentences.len();
            let count = (rate * m as f64).floor() as usize;
            let mut sentences = passage.sentences.clone();
            if count > 0 {
                for idx in rand::seq::index::sample(&mut rng, m, count) {
                    let len = sentences[idx].tokens.len();
                    sentences[idx] = Sentence::new(vec![MASK_TOKEN.to_string(); len]);
                }
            }
            Passage {
                origin_post_id: passage.origin_post_id.clone(),
                sentences,
            }
        })
        .collect();
    PerturbedUser {
        user_id: user.user_id.clone(),
        passages,
        strategy: ViewStrategy::SentMask { mask_rate: rate },
        seed,
    }
}

/// Keeps the first and last sentence of the passage.
pub fn beg_ed(passage: &Passage) -> Passage {
    let sentences = if passage.sentences.len() >= 2 {
        vec![
            passage.sentences.first().unwrap().clone(),
            passage.sentences.last().unwrap().clone(),
        ]
    } else {
        passage.sentences.clone()
    };
    Passage {
        origin_post_id: passage.origin_post_id.clone(),
        sentences,
    }
}

/// Result of a k-means run, including the inertia after every assignment
/// step so monotonicity can be checked.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to the squared distance to the nearest chosen
/// centroid. Degenerate all-zero distances fall back to index order.
fn kmeans_pp_init(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).1)
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let x = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                acc += d;
                if x < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            centroids.len() % points.len()
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// With `|points| <= k` each point becomes its own centroid. Terminates on
/// an assignment fixpoint or after `max_iters` iterations; the inertia
/// measured after every assignment step is non-increasing.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Validation("kmeans requires at least one point".into()));
    }
    if k < 1 {
        return Err(Error::Validation("kmeans requires k >= 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch(
            "kmeans points must share one dimension".into(),
        ));
    }

    if points.len() <= k {
        return Ok(KMeansResult {
            centroids: points.to_vec(),
            assignments: (0..points.len()).collect(),
            inertia_trace: vec![0.0],
        });
    }

    let mut rng = rng_from(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut inertia_trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut inertia = 0.0;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest_centroid(p, &centroids);
            inertia += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let first_pass = inertia_trace.is_empty();
        inertia_trace.push(inertia);
        if !changed && !first_pass {
            break;
        }
        // Update step: empty clusters keep their previous centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, x) in sums[assignments[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, (sum, count)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if *count > 0 {
                for (dst, s) in c.iter_mut().zip(sum) {
                    *dst = s / *count as f64;
                }
            }
        }
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        inertia_trace,
    })
}

/// Extractive passage summary: clusters sentence vectors into k groups and
/// keeps, per centroid, the nearest still-unselected sentence (ties and
/// collisions fall back to the next-nearest), emitted in original order.
pub fn k_sum<F>(passage: &Passage, k: usize, sentence_encoder: F, seed: u64) -> Result<Passage>
where
    F: Fn(&Sentence) -> Vec<f64>,
{
    let m = passage.sentences.len();
    if m <= k {
        return Ok(passage.clone());
    }
    let points: Vec<Vec<f64>> = passage.sentences.iter().map(&sentence_encoder).collect();
    let result = kmeans(&points, k, 100, seed)?;

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    for centroid in &result.centroids {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            sq_dist(&points[a], centroid)
                .partial_cmp(&sq_dist(&points[b], centroid))
                .unwrap()
                .then(a.cmp(&b))
        });
        if let Some(&pick) = order.iter().find(|i| !selected.contains(i)) {
            selected.push(pick);
        }
    }
    selected.sort_unstable();
    Ok(Passage {
        origin_post_id: passage.origin_post_id.clone(),
        sentences: selected.iter().map(|&i| passage.sentences[i].clone()).collect(),
    })
}

/// Applies a strategy to a whole user, deriving per-passage seeds from the
/// given seed so the result is reproducible.
pub fn perturb_user<F>(
    user: &ProcessedUser,
    strategy: &ViewStrategy,
    sentence_encoder: F,
    seed: u64,
) -> Result<PerturbedUser>
where
    F: Fn(&Sentence) -> Vec<f64>,
{
    strategy.validate()?;
    let perturbed = match strategy {
        ViewStrategy::WordMask { mask_rate } => {
            let passages = user
                .passages
                .iter()
                .enumerate()
                .map(|(i, p)| word_mask(p, *mask_rate, mix_seed(seed, i as u64)))
                .collect();
            PerturbedUser {
                user_id: user.user_id.clone(),
                passages,
                strategy: *strategy,
                seed,
            }
        }
        ViewStrategy::SentMask { mask_rate } => {
            let mut p = sent_mask(user, *mask_rate, seed);
            p.strategy = *strategy;
            p
        }
        ViewStrategy::BegEd => PerturbedUser {
            user_id: user.user_id.clone(),
            passages: user.passages.iter().map(beg_ed).collect(),
            strategy: *strategy,
            seed,
        },
        ViewStrategy::KSum { k } => {
            let passages = user
                .passages
                .iter()
                .enumerate()
                .map(|(i, p)| k_sum(p, *k, &sentence_encoder, mix_seed(seed, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            PerturbedUser {
                user_id: user.user_id.clone(),
                passages,
                strategy: *strategy,
                seed,
            }
        }
    };
    debug_assert_eq!(perturbed.passages.len(), user.passages.len());
    Ok(perturbed)
}
