//! Planted-structure corpus generator and recovery scoring.
//!
//! Every planted distribution is a Gaussian bump discretized onto integer
//! bins and renormalized over the bins that exist (truncated, not wrapped).

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LinkSet, Post, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::link_probability;
use crate::model::ModelEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub communities: usize,
    pub topics: usize,
    pub vocab_size: usize,
    pub slices: usize,
    pub users: usize,
    pub posts_per_user: usize,
    pub words_per_post: usize,
    /// Within-community link probability.
    pub p0: f64,
    /// Decrease in link probability per unit of community index distance.
    pub p_slope: f64,
    pub p_min: f64,
    /// Variance shared by every discretized Gaussian.
    pub gauss_var: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            communities: 5,
            topics: 30,
            vocab_size: 100,
            slices: 30,
            users: 250,
            posts_per_user: 50,
            words_per_post: 20,
            p0: 0.7,
            p_slope: 0.3,
            p_min: 0.1,
            gauss_var: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("communities", self.communities),
            ("topics", self.topics),
            ("vocab_size", self.vocab_size),
            ("slices", self.slices),
            ("users", self.users),
            ("posts_per_user", self.posts_per_user),
            ("words_per_post", self.words_per_post),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(0.0 <= self.p_min && self.p_min <= self.p0 && self.p0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= p_min <= p0 <= 1, got p_min={} p0={}",
                self.p_min, self.p0
            )));
        }
        if !(self.p_slope >= 0.0 && self.p_slope.is_finite()) {
            return Err(Error::InvalidArgument("p_slope must be non-negative".into()));
        }
        if !(self.gauss_var > 0.0 && self.gauss_var.is_finite()) {
            return Err(Error::InvalidArgument("gauss_var must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[K][V]`
    pub topic_word: Vec<Vec<f64>>,
    /// `[C][K]`
    pub comm_topic: Vec<Vec<f64>>,
    /// `[K][C][T]`
    pub temporal: Vec<Vec<Vec<f64>>>,
    /// Major community of each user.
    pub user_label: Vec<usize>,
    /// `[C][C]`
    pub link_prob: Vec<Vec<f64>>,
}

/// `p[b] ∝ exp(-(b - mean)^2 / (2 var))` over bins `0..n_bins`.
pub fn discretized_gaussian(mean: f64, var: f64, n_bins: usize) -> Vec<f64> {
    // Subtracting the nearest bin's exponent keeps the largest term at 1 so
    // far-away means do not underflow the whole row.
    let nearest = mean.round().clamp(0.0, n_bins.saturating_sub(1) as f64);
    let shift = (nearest - mean).powi(2) / (2.0 * var);
    let raw: Vec<f64> = (0..n_bins)
        .map(|b| (shift - (b as f64 - mean).powi(2) / (2.0 * var)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// `max(p0 - p_slope * |i - j|, p_min)`.
pub fn community_link_prob(i: usize, j: usize, config: &SyntheticConfig) -> f64 {
    (config.p0 - config.p_slope * i.abs_diff(j) as f64).max(config.p_min)
}

pub fn generate_ground_truth(config: &SyntheticConfig, seed: u64) -> Result<GroundTruth> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_n, k_n, v_n, t_n) = (config.communities, config.topics, config.vocab_size, config.slices);
    let var = config.gauss_var;

    let topic_word = (0..k_n)
        .map(|_| discretized_gaussian(rng.gen_range(0.0..v_n as f64), var, v_n))
        .collect();
    let comm_topic = (0..c_n)
        .map(|_| discretized_gaussian(rng.gen_range(0.0..k_n as f64), var, k_n))
        .collect();
    let temporal = (0..k_n)
        .map(|_| {
            (0..c_n)
                .map(|_| discretized_gaussian(rng.gen_range(0.0..t_n as f64), var, t_n))
                .collect()
        })
        .collect();
    let user_label = (0..config.users).map(|_| rng.gen_range(0..c_n)).collect();
    let link_prob = (0..c_n)
        .map(|i| (0..c_n).map(|j| community_link_prob(i, j, config)).collect())
        .collect();
    Ok(GroundTruth {
        topic_word,
        comm_topic,
        temporal,
        user_label,
        link_prob,
    })
}

/// A generated corpus with the planted indicator of every post.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub post_community: Vec<usize>,
    pub post_topic: Vec<usize>,
}

fn weighted_rows(rows: &[Vec<f64>]) -> Result<Vec<WeightedIndex<f64>>> {
    rows.iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::InvalidArgument(format!("bad distribution row: {e}"))))
        .collect()
}

pub fn generate_corpus(truth: &GroundTruth, config: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    config.validate()?;
    let (c_n, k_n) = (config.communities, config.topics);
    if truth.comm_topic.len() != c_n || truth.topic_word.len() != k_n || truth.user_label.len() != config.users {
        return Err(Error::Dimension("ground truth does not match the configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let membership: Vec<WeightedIndex<f64>> = (0..c_n)
        .map(|label| WeightedIndex::new(discretized_gaussian(label as f64, config.gauss_var, c_n)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let topic_of = weighted_rows(&truth.comm_topic)?;
    let word_of = weighted_rows(&truth.topic_word)?;
    let time_of: Vec<Vec<WeightedIndex<f64>>> = truth
        .temporal
        .iter()
        .map(|per_comm| weighted_rows(per_comm))
        .collect::<Result<_>>()?;

    let n_posts = config.users * config.posts_per_user;
    let mut posts = Vec::with_capacity(n_posts);
    let mut post_community = Vec::with_capacity(n_posts);
    let mut post_topic = Vec::with_capacity(n_posts);
    for (user, &label) in truth.user_label.iter().enumerate() {
        for _ in 0..config.posts_per_user {
            let c = membership[label].sample(&mut rng);
            let k = topic_of[c].sample(&mut rng);
            let tokens = (0..config.words_per_post)
                .map(|_| word_of[k].sample(&mut rng) as u32)
                .collect();
            let time_slice = time_of[k][c].sample(&mut rng);
            posts.push(Post {
                author: user,
                tokens,
                time_slice,
            });
            post_community.push(c);
            post_topic.push(k);
        }
    }

    let mut pairs = Vec::new();
    for (i, &li) in truth.user_label.iter().enumerate() {
        for (j, &lj) in truth.user_label.iter().enumerate() {
            if i != j && rng.gen_bool(truth.link_prob[li][lj]) {
                pairs.push((i, j));
            }
        }
    }
    let (links, _) = LinkSet::from_pairs(config.users, pairs)?;
    let vocabulary = Vocabulary::from_words((0..config.vocab_size).map(|v| format!("w{v}")))?;
    let corpus = Corpus::new(posts, links, vocabulary, config.users, Some(config.slices))?;
    Ok(SyntheticData {
        corpus,
        post_community,
        post_topic,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy one-to-one matching by descending cosine similarity. Returns, for
/// every truth row, the index of the matched estimated row. Ties go to the
/// lower truth index, then the lower estimate index.
pub fn greedy_alignment(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| estimate.iter().enumerate().map(move |(j, e)| (cosine(t, e), i, j)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned = vec![usize::MAX; truth.len()];
    let mut used = vec![false; estimate.len()];
    let mut remaining = truth.len().min(estimate.len());
    for (_, i, j) in pairs {
        if remaining == 0 {
            break;
        }
        if assigned[i] == usize::MAX && !used[j] {
            assigned[i] = j;
            used[j] = true;
            remaining -= 1;
        }
    }
    assigned
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn mean_tv_to_uniform<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for r in rows {
        let u = vec![1.0 / r.len() as f64; r.len()];
        total += total_variation(r, &u);
        n += 1;
    }
    total / n as f64
}

/// Mean total-variation distance of uniform rows from the planted rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineTv {
    pub topic_word: f64,
    pub community_topic: f64,
    pub temporal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// How a post's community is drawn around its author's label.
    pub community_boundary: String,
    /// Estimated topic matched to each planted topic.
    pub topic_alignment: Vec<usize>,
    /// Estimated community matched to each planted community.
    pub community_alignment: Vec<usize>,
    pub topic_word_tv: f64,
    pub community_topic_tv: f64,
    pub temporal_tv: f64,
    pub baseline_tv: BaselineTv,
    /// Mean absolute error between planted and estimated link probabilities
    /// over ordered user pairs.
    pub link_mae: f64,
}

pub fn evaluate_recovery(truth: &GroundTruth, est: &ModelEstimates) -> Result<RecoveryReport> {
    let (c_n, k_n) = (truth.comm_topic.len(), truth.topic_word.len());
    let v_n = truth.topic_word.first().map_or(0, Vec::len);
    let t_n = truth.temporal.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if est.communities() != c_n
        || est.topics() != k_n
        || est.vocab_size() != v_n
        || est.slices() != t_n
        || est.users() != truth.user_label.len()
    {
        return Err(Error::Dimension(format!(
            "truth is C={c_n} K={k_n} V={v_n} T={t_n} U={}, estimates are C={} K={} V={} T={} U={}",
            truth.user_label.len(),
            est.communities(),
            est.topics(),
            est.vocab_size(),
            est.slices(),
            est.users()
        )));
    }

    let topic_alignment = greedy_alignment(&truth.topic_word, &est.phi);
    // Estimated community rows re-expressed in planted topic order.
    let theta_aligned: Vec<Vec<f64>> = est
        .theta
        .iter()
        .map(|row| topic_alignment.iter().map(|&k| row[k]).collect())
        .collect();
    let community_alignment = greedy_alignment(&truth.comm_topic, &theta_aligned);

    let topic_word_tv = (0..k_n)
        .map(|k| total_variation(&truth.topic_word[k], &est.phi[topic_alignment[k]]))
        .sum::<f64>()
        / k_n as f64;
    let community_topic_tv = (0..c_n)
        .map(|c| total_variation(&truth.comm_topic[c], &theta_aligned[community_alignment[c]]))
        .sum::<f64>()
        / c_n as f64;
    let temporal_tv = (0..k_n)
        .flat_map(|k| (0..c_n).map(move |c| (k, c)))
        .map(|(k, c)| {
            total_variation(
                &truth.temporal[k][c],
                &est.psi[topic_alignment[k]][community_alignment[c]],
            )
        })
        .sum::<f64>()
        / (k_n * c_n) as f64;

    let baseline_tv = BaselineTv {
        topic_word: mean_tv_to_uniform(truth.topic_word.iter()),
        community_topic: mean_tv_to_uniform(truth.comm_topic.iter()),
        temporal: mean_tv_to_uniform(truth.temporal.iter().flatten()),
    };

    let u_n = truth.user_label.len();
    let mut abs_err = 0.0;
    for i in 0..u_n {
        for j in 0..u_n {
            if i != j {
                let planted = truth.link_prob[truth.user_label[i]][truth.user_label[j]];
                abs_err += (planted - link_probability(i, j, est)).abs();
            }
        }
    }
    let n_pairs = u_n * u_n.saturating_sub(1);
    let link_mae = if n_pairs == 0 { 0.0 } else { abs_err / n_pairs as f64 };

    Ok(RecoveryReport {
        community_boundary: "truncated".into(),
        topic_alignment,
        community_alignment,
        topic_word_tv,
        community_topic_tv,
        temporal_tv,
        baseline_tv,
        link_mae,
    })
}
