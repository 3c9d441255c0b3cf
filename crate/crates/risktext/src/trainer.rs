//! Classification head, losses, and the training regimes.
//!
//! Training couples the encoder with a 4-way softmax head. The per-instance
//! loss is cross-entropy, plus an optional KL consistency term between the
//! prediction on the complete user and the prediction on a perturbed view
//! (gradient flows only through the perturbed branch; the complete-view
//! distribution is the fixed target). Task-adaptive pre-training optimizes
//! the masked-language-model objective on unlabeled passages before
//! fine-tuning. Model selection is by validation macro-F1 with early
//! stopping; all randomness is seed-derived, so identical configs produce
//! bit-identical results.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RiskLevel;
use crate::encoder::{
    backward_passage, forward_passage, log_softmax, mlm_loss_backward, mlm_loss_only, pool_mean,
    token_ids, EncoderDims, EncoderParams, PassageCache, Vocabulary, MASK_ID,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, macro_prf, MacroMetrics};
use crate::preprocess::{Passage, ProcessedUser, Sentence};
use crate::seed::{mix_seed, rng_from, stream_salt};
use crate::views::{perturb_user, ViewStrategy};

/// Softmax head: logits = weight . u + bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierParams {
    pub fn init(dim: usize, seed: u64) -> ClassifierParams {
        let mut rng = rng_from(seed);
        let weight = Array2::from_shape_fn((4, dim), |_| {
            // Box-Muller, std 0.02, matching the encoder's weight init.
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            0.02 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        ClassifierParams {
            weight,
            bias: Array1::zeros(4),
        }
    }

    pub fn zeros_like(&self) -> ClassifierParams {
        ClassifierParams {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(4),
        }
    }

    pub fn slots(&self) -> Vec<&f64> {
        let mut v: Vec<&f64> = Vec::with_capacity(self.num_params());
        v.extend(self.weight.iter());
        v.extend(self.bias.iter());
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut f64> {
        let mut v: Vec<&mut f64> = Vec::with_capacity(self.weight.len() + 4);
        v.extend(self.weight.iter_mut());
        v.extend(self.bias.iter_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// A 4-way class distribution kept in both probability and log space so
/// losses never take `ln` of a stored zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbDist {
    probs: [f64; 4],
    log_probs: [f64; 4],
}

impl ProbDist {
    pub fn from_logits(logits: &[f64; 4]) -> ProbDist {
        let lp = log_softmax(logits);
        let mut probs = [0.0; 4];
        let mut log_probs = [0.0; 4];
        for i in 0..4 {
            log_probs[i] = lp[i];
            probs[i] = lp[i].exp();
        }
        ProbDist { probs, log_probs }
    }

    /// Builds a distribution from explicit probabilities (zero entries get
    /// log-probability negative infinity).
    pub fn from_probs(probs: [f64; 4]) -> Result<ProbDist> {
        if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "probabilities must be nonnegative and sum to 1, got {probs:?}"
            )));
        }
        let log_probs = probs.map(|p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY });
        Ok(ProbDist { probs, log_probs })
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64; 4] {
        &self.log_probs
    }
}

/// Highest-probability class; exact ties break toward the higher risk
/// level (the conservative direction for a screening task).
pub fn argmax_risk(probs: &[f64; 4]) -> RiskLevel {
    let mut best = 0usize;
    for i in 1..4 {
        if probs[i] >= probs[best] {
            best = i;
        }
    }
    RiskLevel::from_index(best).unwrap()
}

/// Cross-entropy against the gold label: -ln p[label].
pub fn clf_loss(p: &ProbDist, label: RiskLevel) -> f64 {
    -p.log_probs[label.index()]
}

/// KL(complete || perturbed), treating the complete-view distribution as a
/// fixed target. Computed from log-probabilities, so identical inputs give
/// exactly zero; terms with zero target mass contribute nothing.
pub fn kl_consistency_loss(p_complete: &ProbDist, p_perturbed: &ProbDist) -> f64 {
    let mut sum = 0.0;
    for y in 0..4 {
        if p_complete.probs[y] > 0.0 {
            sum += p_complete.probs[y] * (p_complete.log_probs[y] - p_perturbed.log_probs[y]);
        }
    }
    sum
}

/// Forward pass over all passages of a user: per-passage caches, the mean
/// user embedding, and the class distribution.
pub fn user_forward(
    encoder: &EncoderParams,
    clf: &ClassifierParams,
    passages: &[Passage],
    vocab: &Vocabulary,
) -> Result<(Vec<PassageCache>, Array1<f64>, ProbDist)> {
    if passages.is_empty() {
        return Err(Error::Validation("user has no passages".into()));
    }
    let mut caches = Vec::with_capacity(passages.len());
    let mut sum = Array1::<f64>::zeros(encoder.dims.dim);
    for passage in passages {
        let ids = token_ids(passage, vocab, encoder.dims.max_len);
        let cache = forward_passage(encoder, &ids)?;
        sum += &pool_mean(&cache);
        caches.push(cache);
    }
    let u = sum / passages.len() as f64;
    let mut logits = [0.0; 4];
    for (c, logit) in logits.iter_mut().enumerate() {
        *logit = clf.bias[c] + clf.weight.row(c).dot(&u);
    }
    Ok((caches, u, ProbDist::from_logits(&logits)))
}

/// Backpropagates a gradient on the four logits through the classifier and
/// every passage of the user into the provided accumulators.
pub fn user_backward(
    encoder: &EncoderParams,
    clf: &ClassifierParams,
    caches: &[PassageCache],
    u: &Array1<f64>,
    d_logits: &[f64; 4],
    enc_grads: &mut EncoderParams,
    clf_grads: &mut ClassifierParams,
) {
    let dim = encoder.dims.dim;
    let mut d_u = Array1::<f64>::zeros(dim);
    for (c, &dz) in d_logits.iter().enumerate() {
        clf_grads.bias[c] += dz;
        for j in 0..dim {
            clf_grads.weight[[c, j]] += dz * u[j];
            d_u[j] += clf.weight[[c, j]] * dz;
        }
    }
    let per_passage = &d_u / caches.len() as f64;
    for cache in caches {
        let n = cache.hidden.nrows() as f64;
        let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
        for mut row in d_hidden.rows_mut() {
            for j in 0..dim {
                row[j] = per_passage[j] / n;
            }
        }
        backward_passage(encoder, cache, &d_hidden, enc_grads);
    }
}

/// Predicted class distribution for a preprocessed user.
pub fn classify_user(
    encoder: &EncoderParams,
    clf: &ClassifierParams,
    user: &ProcessedUser,
    vocab: &Vocabulary,
) -> Result<ProbDist> {
    let (_, _, dist) = user_forward(encoder, clf, &user.passages, vocab)?;
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Flat-slot optimizer over the concatenated encoder and classifier
/// parameters; update order is the canonical slot order.
enum Optimizer {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
        lr: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, n: usize, lr: f64) -> Optimizer {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                lr,
            },
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    fn step(&mut self, mut params: Vec<&mut f64>, grads: &[&f64]) {
        match self {
            Optimizer::Adam { m, v, t, lr } => {
                *t += 1;
                let bc1 = 1.0 - Self::BETA1.powi(*t as i32);
                let bc2 = 1.0 - Self::BETA2.powi(*t as i32);
                for i in 0..params.len() {
                    let g = *grads[i];
                    m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                    v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    *params[i] -= *lr * m_hat / (v_hat.sqrt() + Self::EPS);
                }
            }
            Optimizer::Sgd { lr } => {
                for i in 0..params.len() {
                    *params[i] -= *lr * *grads[i];
                }
            }
        }
    }
}

/// Training hyperparameters. The early-stopping metric is validation
/// macro-F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub view: Option<ViewStrategy>,
    pub kl_weight: f64,
    pub seed: u64,
    pub tap_epochs: usize,
    pub tap_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            patience: 5,
            view: None,
            kl_weight: 1.0,
            seed: 42,
            tap_epochs: 3,
            tap_patience: 1,
        }
    }
}

/// One labeled, preprocessed training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub user: ProcessedUser,
    pub label: RiskLevel,
}

/// Per-epoch record for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub clf_loss: f64,
    pub kl_loss: f64,
    pub valid_precision: f64,
    pub valid_recall: f64,
    pub valid_f1: f64,
}

/// Result of a training run: the best checkpoint by validation macro-F1
/// plus the full epoch history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_f1: f64,
    pub stopped_early: bool,
}

impl TrainState {
    /// Class distribution under the best checkpoint.
    pub fn classify(&self, user: &ProcessedUser, vocab: &Vocabulary) -> Result<ProbDist> {
        classify_user(&self.encoder, &self.classifier, user, vocab)
    }

    /// Final prediction under the best checkpoint.
    pub fn predict(&self, user: &ProcessedUser, vocab: &Vocabulary) -> Result<RiskLevel> {
        predict(&self.encoder, &self.classifier, user, vocab)
    }
}

/// Macro P/R/F1 of argmax predictions over a labeled set.
pub fn evaluate_macro(
    encoder: &EncoderParams,
    clf: &ClassifierParams,
    examples: &[TrainExample],
    vocab: &Vocabulary,
) -> Result<MacroMetrics> {
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for ex in examples {
        let dist = classify_user(encoder, clf, &ex.user, vocab)?;
        preds.push(argmax_risk(dist.probs()));
        golds.push(ex.label);
    }
    Ok(macro_prf(&confusion_matrix(&preds, &golds)?))
}

fn onehot_grad(dist: &ProbDist, label: RiskLevel) -> [f64; 4] {
    let mut d = *dist.probs();
    d[label.index()] -= 1.0;
    d
}

/// Trains the encoder and classifier, returning the checkpoint with the
/// best validation macro-F1.
///
/// Per instance the loss is `L_clf + kl_weight * L_KL` when a view
/// strategy is configured (the perturbation is regenerated every epoch
/// from `seed xor epoch`), else `L_clf` alone. Runs at most
/// `config.epochs` epochs, stopping after `config.patience` epochs
/// without improvement.
pub fn train(
    train: &[TrainExample],
    valid: &[TrainExample],
    vocab: &Vocabulary,
    dims: EncoderDims,
    config: &TrainConfig,
    initial: Option<EncoderParams>,
) -> Result<TrainState> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    if let Some(view) = &config.view {
        view.validate()?;
    }
    if dims.vocab_size != vocab.size() {
        return Err(Error::DimensionMismatch(format!(
            "encoder vocab size {} vs vocabulary {}",
            dims.vocab_size,
            vocab.size()
        )));
    }
    let mut encoder = match initial {
        Some(p) => {
            if p.dims != dims {
                return Err(Error::DimensionMismatch(
                    "initial encoder dims do not match the configured dims".into(),
                ));
            }
            p
        }
        None => EncoderParams::init(dims, mix_seed(config.seed, stream_salt("encoder-init"))),
    };
    let mut clf =
        ClassifierParams::init(dims.dim, mix_seed(config.seed, stream_salt("classifier-init")));

    let n_slots = encoder.num_params() + clf.num_params();
    let mut optimizer = Optimizer::new(config.optimizer, n_slots, config.learning_rate);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, EncoderParams, ClassifierParams)> = None;
    let mut stale_epochs = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let shuffle_seed = mix_seed(config.seed, mix_seed(stream_salt("shuffle"), epoch as u64));
        order.shuffle(&mut rng_from(shuffle_seed));
        // Per-epoch view regeneration: fresh perturbations each epoch,
        // deterministic across runs.
        let view_seed = config.seed ^ epoch as u64;

        let mut clf_loss_sum = 0.0;
        let mut kl_loss_sum = 0.0;

        for batch in order.chunks(config.batch_size) {
            let mut enc_grads = encoder.zeros_like();
            let mut clf_grads = clf.zeros_like();
            for &idx in batch {
                let ex = &train[idx];
                let (caches, u, p_complete) =
                    user_forward(&encoder, &clf, &ex.user.passages, vocab)?;
                clf_loss_sum += clf_loss(&p_complete, ex.label);
                let d_logits = onehot_grad(&p_complete, ex.label);
                user_backward(&encoder, &clf, &caches, &u, &d_logits, &mut enc_grads, &mut clf_grads);

                if let Some(view) = &config.view {
                    let sent_encoder = |s: &Sentence| embed_sentence(&encoder, s, vocab);
                    let perturbed =
                        perturb_user(&ex.user, view, sent_encoder, mix_seed(view_seed, idx as u64))?;
                    let (p_caches, p_u, p_perturbed) =
                        user_forward(&encoder, &clf, &perturbed.passages, vocab)?;
                    kl_loss_sum += kl_consistency_loss(&p_complete, &p_perturbed);
                    if config.kl_weight != 0.0 {
                        // Gradient only through the perturbed branch; the
                        // complete-view distribution is the fixed target.
                        let mut d_kl = [0.0; 4];
                        for (y, d) in d_kl.iter_mut().enumerate() {
                            *d = config.kl_weight
                                * (p_perturbed.probs()[y] - p_complete.probs()[y]);
                        }
                        user_backward(
                            &encoder, &clf, &p_caches, &p_u, &d_kl, &mut enc_grads, &mut clf_grads,
                        );
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in enc_grads.slots_mut() {
                *g *= inv;
            }
            for g in clf_grads.slots_mut() {
                *g *= inv;
            }
            let mut params: Vec<&mut f64> = encoder.slots_mut();
            params.extend(clf.slots_mut());
            let mut grads: Vec<&f64> = enc_grads.slots();
            grads.extend(clf_grads.slots());
            optimizer.step(params, &grads);
        }

        let metrics = evaluate_macro(&encoder, &clf, valid, vocab)?;
        let n = train.len() as f64;
        let mean_clf = clf_loss_sum / n;
        let mean_kl = if config.view.is_some() { kl_loss_sum / n } else { 0.0 };
        history.push(EpochRecord {
            epoch,
            train_loss: mean_clf + config.kl_weight * mean_kl,
            clf_loss: mean_clf,
            kl_loss: mean_kl,
            valid_precision: metrics.macro_precision,
            valid_recall: metrics.macro_recall,
            valid_f1: metrics.macro_f1,
        });

        let improved = best.as_ref().is_none_or(|(f1, ..)| metrics.macro_f1 > *f1);
        if improved {
            best = Some((metrics.macro_f1, epoch, encoder.clone(), clf.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_valid_f1, best_epoch, encoder, classifier) = best.unwrap();
    Ok(TrainState {
        encoder,
        classifier,
        history,
        best_epoch,
        best_valid_f1,
        stopped_early,
    })
}

/// Cheap sentence embedding for the k-means summarizer: the mean of the
/// encoder's token-embedding rows.
pub fn embed_sentence(encoder: &EncoderParams, sentence: &Sentence, vocab: &Vocabulary) -> Vec<f64> {
    let dim = encoder.dims.dim;
    let mut sum = vec![0.0; dim];
    for token in &sentence.tokens {
        let id = vocab.lookup(token);
        for (s, x) in sum.iter_mut().zip(encoder.token_embed.row(id)) {
            *s += x;
        }
    }
    let n = sentence.tokens.len().max(1) as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

/// MLM masking fraction (applied per passage with floor rounding).
pub const MLM_MASK_RATE: f64 = 0.15;

/// Applies the 15% / 80-10-10 masking recipe to a token id sequence:
/// `floor(0.15 n)` positions are chosen; each becomes `_MASK_` with
/// probability 0.8, a random vocabulary token with 0.1, or stays unchanged.
/// Returns the masked ids, the chosen positions, and the original targets.
pub fn mlm_mask_ids(
    ids: &[usize],
    vocab_size: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let count = (MLM_MASK_RATE * ids.len() as f64).floor() as usize;
    let mut masked = ids.to_vec();
    if count == 0 {
        return (masked, Vec::new(), Vec::new());
    }
    let mut positions: Vec<usize> = rand::seq::index::sample(rng, ids.len(), count).into_vec();
    positions.sort_unstable();
    let targets: Vec<usize> = positions.iter().map(|&p| ids[p]).collect();
    for &p in &positions {
        let r: f64 = rng.gen();
        if r < 0.8 {
            masked[p] = MASK_ID;
        } else if r < 0.9 {
            masked[p] = rng.gen_range(0..vocab_size);
        }
    }
    (masked, positions, targets)
}

/// Pre-training result: the selected encoder plus the held-out MLM loss
/// curve (one entry per epoch) and the stop reason.
#[derive(Debug, Clone)]
pub struct TapResult {
    pub encoder: EncoderParams,
    pub heldout_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Task-adaptive pre-training: optimizes the MLM objective over all
/// passages of an unlabeled corpus, early-stopping on held-out MLM loss.
pub fn tap_pretrain(
    unlabeled: &[ProcessedUser],
    vocab: &Vocabulary,
    dims: EncoderDims,
    config: &TrainConfig,
) -> Result<TapResult> {
    let all_passages: Vec<&Passage> = unlabeled.iter().flat_map(|u| u.passages.iter()).collect();
    if all_passages.is_empty() {
        return Err(Error::Validation("pre-training corpus has no passages".into()));
    }
    if dims.vocab_size != vocab.size() {
        return Err(Error::DimensionMismatch(format!(
            "encoder vocab size {} vs vocabulary {}",
            dims.vocab_size,
            vocab.size()
        )));
    }

    let ids_of = |p: &Passage| token_ids(p, vocab, dims.max_len);

    // Held-out split for early stopping: ~10%, at least one passage.
    let holdout_count = (all_passages.len() / 10).max(1);
    let mut holdout_rng = rng_from(mix_seed(config.seed, stream_salt("tap-holdout")));
    let mut holdout_flags = vec![false; all_passages.len()];
    for i in rand::seq::index::sample(&mut holdout_rng, all_passages.len(), holdout_count) {
        holdout_flags[i] = true;
    }
    let train_idx: Vec<usize> = (0..all_passages.len()).filter(|i| !holdout_flags[*i]).collect();
    let heldout_idx: Vec<usize> = (0..all_passages.len()).filter(|i| holdout_flags[*i]).collect();

    // Fixed masks for the held-out passages so the loss is comparable
    // across epochs.
    let heldout_masks: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = heldout_idx
        .iter()
        .map(|&i| {
            let mut rng =
                rng_from(mix_seed(config.seed, mix_seed(stream_salt("tap-eval"), i as u64)));
            mlm_mask_ids(&ids_of(all_passages[i]), vocab.size(), &mut rng)
        })
        .collect();

    let mut encoder = EncoderParams::init(dims, mix_seed(config.seed, stream_salt("encoder-init")));
    let mut optimizer = Optimizer::new(config.optimizer, encoder.num_params(), config.learning_rate);

    let heldout_loss = |encoder: &EncoderParams| -> Result<f64> {
        let mut total = 0.0;
        let mut counted = 0usize;
        for (masked, positions, targets) in &heldout_masks {
            if positions.is_empty() {
                continue;
            }
            let cache = forward_passage(encoder, masked)?;
            total += mlm_loss_only(encoder, &cache, positions, targets)?;
            counted += 1;
        }
        if counted == 0 {
            return Err(Error::Validation("held-out passages are all too short to mask".into()));
        }
        Ok(total / counted as f64)
    };

    let mut losses = Vec::new();
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.tap_epochs {
        let mut order = train_idx.clone();
        let shuffle_seed =
            mix_seed(config.seed, mix_seed(stream_salt("tap-shuffle"), epoch as u64));
        order.shuffle(&mut rng_from(shuffle_seed));
        let epoch_seed = config.seed ^ epoch as u64;

        for batch in order.chunks(config.batch_size) {
            let mut grads = encoder.zeros_like();
            let mut masked_in_batch = 0usize;
            for &idx in batch {
                let ids = ids_of(all_passages[idx]);
                let mut rng = rng_from(mix_seed(epoch_seed, idx as u64));
                let (masked, positions, targets) = mlm_mask_ids(&ids, vocab.size(), &mut rng);
                if positions.is_empty() {
                    continue;
                }
                let cache = forward_passage(&encoder, &masked)?;
                mlm_loss_backward(&encoder, &cache, &positions, &targets, &mut grads)?;
                masked_in_batch += 1;
            }
            if masked_in_batch == 0 {
                continue;
            }
            let inv = 1.0 / masked_in_batch as f64;
            for g in grads.slots_mut() {
                *g *= inv;
            }
            optimizer.step(encoder.slots_mut(), &grads.slots());
        }

        let loss = heldout_loss(&encoder)?;
        losses.push(loss);
        let improved = best.as_ref().is_none_or(|(b, _)| loss < *b);
        if improved {
            best = Some((loss, encoder.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.tap_patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TapResult {
        encoder: best.unwrap().1,
        heldout_losses: losses,
        stopped_early,
    })
}

/// Final prediction: the label with the largest probability, ties broken
/// toward the higher risk level.
pub fn predict(
    encoder: &EncoderParams,
    clf: &ClassifierParams,
    user: &ProcessedUser,
    vocab: &Vocabulary,
) -> Result<RiskLevel> {
    let dist = classify_user(encoder, clf, user, vocab)?;
    Ok(argmax_risk(dist.probs()))
}
