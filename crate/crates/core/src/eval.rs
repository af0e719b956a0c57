//! Held-out evaluation: train/test splitting, time-stamp prediction,
//! link prediction scored by AUC, and perplexity.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LinkSet, Post};
use crate::error::{Error, Result};
use crate::model::ModelEstimates;

/// How many absent pairs to hold out as negative links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// A fraction of all absent ordered pairs.
    Fraction(f64),
    /// As many negatives as held-out positive links.
    MatchPositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub post_holdout_frac: f64,
    pub link_holdout_frac: f64,
    pub negatives: NegativeSampling,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            post_holdout_frac: 0.20,
            link_holdout_frac: 0.20,
            negatives: NegativeSampling::Fraction(0.01),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Corpus,
    pub test_posts: Vec<Post>,
    pub test_links: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
}

fn check_frac(name: &str, f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {f}")));
    }
    Ok(())
}

/// Indices `0..n`, a uniformly random `round(frac * n)` of them marked held out.
fn holdout_mask(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let m = ((frac * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut mask = vec![false; n];
    for &i in &idx[..m] {
        mask[i] = true;
    }
    mask
}

fn sample_negatives(links: &LinkSet, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let u = links.num_users();
    let n_neg = u * u.saturating_sub(1) - links.len();
    let mut out = if count * 2 <= n_neg {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let src = rng.gen_range(0..u);
            let dst = rng.gen_range(0..u);
            if src != dst && !links.contains(src, dst) && seen.insert((src, dst)) {
                out.push((src, dst));
            }
        }
        out
    } else {
        let mut all: Vec<(usize, usize)> = (0..u)
            .flat_map(|s| (0..u).map(move |d| (s, d)))
            .filter(|&(s, d)| s != d && !links.contains(s, d))
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        all
    };
    out.sort_unstable();
    out
}

/// Holds out posts, positive links and sampled negative pairs. The training
/// corpus keeps every user, the vocabulary and the time axis.
pub fn split_corpus(corpus: &Corpus, config: &SplitConfig) -> Result<Split> {
    check_frac("post holdout fraction", config.post_holdout_frac)?;
    check_frac("link holdout fraction", config.link_holdout_frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let post_mask = holdout_mask(corpus.num_posts(), config.post_holdout_frac, &mut rng);
    let mut train_posts = Vec::new();
    let mut test_posts = Vec::new();
    for (post, held) in corpus.posts().iter().zip(&post_mask) {
        if *held {
            test_posts.push(post.clone());
        } else {
            train_posts.push(post.clone());
        }
    }

    let link_mask = holdout_mask(corpus.num_links(), config.link_holdout_frac, &mut rng);
    let mut train_pairs = Vec::new();
    let mut test_links = Vec::new();
    for (&edge, held) in corpus.edges().iter().zip(&link_mask) {
        if *held {
            test_links.push(edge);
        } else {
            train_pairs.push(edge);
        }
    }

    let n_neg = corpus.num_negative_links() as usize;
    let n_test_neg = match config.negatives {
        NegativeSampling::Fraction(f) => {
            check_frac("negative link fraction", f)?;
            (f * n_neg as f64).round() as usize
        }
        NegativeSampling::MatchPositives => test_links.len(),
    };
    if n_test_neg > n_neg {
        return Err(Error::InvalidArgument(format!(
            "requested {n_test_neg} negative links but only {n_neg} absent pairs exist"
        )));
    }
    let test_negatives = sample_negatives(corpus.links(), n_test_neg, &mut rng);

    let (train_links, _) = LinkSet::from_pairs(corpus.num_users(), train_pairs)?;
    let train = Corpus::new(
        train_posts,
        train_links,
        corpus.vocabulary().clone(),
        corpus.num_users(),
        Some(corpus.num_slices()),
    )?;
    Ok(Split {
        train,
        test_posts,
        test_links,
        test_negatives,
    })
}

/// Per-topic log-likelihood of the in-vocabulary tokens under the
/// foreground/background mixture. Returns the number of tokens used.
fn topic_token_loglik(tokens: &[u32], est: &ModelEstimates, out: &mut Vec<f64>) -> usize {
    let v = est.vocab_size();
    out.clear();
    out.resize(est.topics(), 0.0);
    let mut used = 0;
    for &w in tokens {
        let w = w as usize;
        if w >= v {
            continue;
        }
        used += 1;
        let bg = (1.0 - est.chi) * est.phi_bg[w];
        for (k, acc) in out.iter_mut().enumerate() {
            *acc += (est.chi * est.phi[k][w] + bg).ln();
        }
    }
    used
}

/// Shifts log-weights by their maximum and exponentiates in place; returns the shift.
fn exp_shifted(logw: &mut [f64]) -> f64 {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for x in logw.iter_mut() {
        *x = (*x - max).exp();
    }
    max
}

fn check_author(post: &Post, est: &ModelEstimates) -> Result<()> {
    if post.author >= est.users() {
        return Err(Error::Dimension(format!(
            "author {} unknown to a model of {} users",
            post.author,
            est.users()
        )));
    }
    Ok(())
}

/// Maximum-likelihood time slice for a post; ties go to the smallest slice.
pub fn predict_timestamp(post: &Post, est: &ModelEstimates) -> Result<usize> {
    check_author(post, est)?;
    let mut topic_weight = Vec::new();
    topic_token_loglik(&post.tokens, est, &mut topic_weight);
    exp_shifted(&mut topic_weight);
    let pi = &est.pi[post.author];
    let mut scores = vec![0.0; est.slices()];
    for (k, &a) in topic_weight.iter().enumerate() {
        for (c, &pi_c) in pi.iter().enumerate() {
            let weight = a * pi_c * est.theta[c][k];
            for (s, &p) in scores.iter_mut().zip(&est.psi[k][c]) {
                *s += weight * p;
            }
        }
    }
    let mut best = 0;
    for (t, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = t;
        }
    }
    Ok(best)
}

/// Predicted and true slices for a test set. Posts whose author is unknown
/// to the model are skipped and counted.
#[derive(Debug, Clone, Default)]
pub struct TimePredictions {
    pub predicted: Vec<usize>,
    pub actual: Vec<usize>,
    pub excluded_unknown_authors: usize,
}

impl TimePredictions {
    pub fn accuracy(&self, tolerance: usize) -> Result<f64> {
        if self.actual.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        let hits = self
            .predicted
            .iter()
            .zip(&self.actual)
            .filter(|(p, a)| p.abs_diff(**a) <= tolerance)
            .count();
        Ok(hits as f64 / self.actual.len() as f64)
    }

    /// Accuracy at every tolerance in `0..=max_tolerance`.
    pub fn curve(&self, max_tolerance: usize) -> Result<Vec<(usize, f64)>> {
        (0..=max_tolerance)
            .map(|tol| Ok((tol, self.accuracy(tol)?)))
            .collect()
    }
}

pub fn predict_timestamps(posts: &[Post], est: &ModelEstimates) -> TimePredictions {
    let mut out = TimePredictions::default();
    for post in posts {
        match predict_timestamp(post, est) {
            Ok(t) => {
                out.predicted.push(t);
                out.actual.push(post.time_slice);
            }
            Err(_) => out.excluded_unknown_authors += 1,
        }
    }
    out
}

pub fn time_prediction_accuracy(posts: &[Post], est: &ModelEstimates, tolerance: usize) -> Result<f64> {
    predict_timestamps(posts, est).accuracy(tolerance)
}

/// `sum_s sum_s' pi[i][s] * pi[j][s'] * eta[s][s']`.
pub fn link_probability(src: usize, dst: usize, est: &ModelEstimates) -> f64 {
    let (a, b) = (&est.pi[src], &est.pi[dst]);
    a.iter()
        .zip(&est.eta)
        .map(|(&pa, row)| pa * b.iter().zip(row).map(|(&pb, &e)| pb * e).sum::<f64>())
        .sum()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::InvalidArgument("AUC needs at least one positive and one negative score".into()));
    }
    if pos_scores.iter().chain(neg_scores).any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores must not be NaN".into()));
    }
    let mut neg = neg_scores.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    let mut wins = 0.0;
    for &p in pos_scores {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos_scores.len() as f64 * neg.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullDistribution {
    pub mean: f64,
    pub std_dev: f64,
}

/// AUC under random relabelling of the pooled scores.
pub fn auc_permutation_null(
    pos_scores: &[f64],
    neg_scores: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<NullDistribution> {
    if permutations < 2 {
        return Err(Error::InvalidArgument("need at least two permutations".into()));
    }
    let mut pooled: Vec<f64> = pos_scores.iter().chain(neg_scores).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let (p, n) = pooled.split_at(pos_scores.len());
        samples.push(auc(p, n)?);
    }
    let mean = samples.iter().sum::<f64>() / permutations as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (permutations - 1) as f64;
    Ok(NullDistribution {
        mean,
        std_dev: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    pub perplexity: f64,
    /// In-vocabulary tokens scored.
    pub tokens: usize,
    pub oov_dropped: usize,
    pub excluded_unknown_authors: usize,
}

/// `exp(-sum_d ln p(w_d) / sum_d N_d)` over in-vocabulary tokens.
pub fn perplexity(posts: &[Post], est: &ModelEstimates) -> Result<PerplexityReport> {
    let mut total_loglik = 0.0;
    let mut tokens = 0;
    let mut oov_dropped = 0;
    let mut excluded = 0;
    let mut logw = Vec::new();
    for post in posts {
        if check_author(post, est).is_err() {
            excluded += 1;
            continue;
        }
        let used = topic_token_loglik(&post.tokens, est, &mut logw);
        oov_dropped += post.tokens.len() - used;
        if used == 0 {
            continue;
        }
        tokens += used;
        let shift = exp_shifted(&mut logw);
        let pi = &est.pi[post.author];
        let mix: f64 = logw
            .iter()
            .enumerate()
            .map(|(k, &a)| a * pi.iter().zip(&est.theta).map(|(&p, th)| p * th[k]).sum::<f64>())
            .sum();
        total_loglik += shift + mix.ln();
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument("no in-vocabulary test tokens".into()));
    }
    Ok(PerplexityReport {
        perplexity: (-total_loglik / tokens as f64).exp(),
        tokens,
        oov_dropped,
        excluded_unknown_authors: excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub config: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, config: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            config: config.into(),
            value,
        }
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "metric,config,value")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.metric, r.config, r.value)?;
    }
    Ok(())
}

pub fn write_accuracy_curve_csv<W: Write>(curve: &[(usize, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "tolerance,accuracy")?;
    for (tol, acc) in curve {
        writeln!(out, "{tol},{acc}")?;
    }
    Ok(())
}
