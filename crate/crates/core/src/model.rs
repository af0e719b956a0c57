//! Hyperparameters, latent assignments, sufficient-statistic counters and
//! the smoothed point estimates derived from them.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::SplitConfig;

/// Shared value of rho, alpha, beta, epsilon and delta0 in the reference setup.
pub const DEFAULT_CONCENTRATION: f64 = 0.01;
pub const DEFAULT_DELTA1: f64 = 1.0;
pub const DEFAULT_LAMBDA1: f64 = 0.1;
/// Floor applied to lambda0 when `ln(n_neg / C^2)` is not positive.
pub const DEFAULT_LAMBDA0_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Dirichlet concentration on user memberships.
    pub rho: f64,
    /// Dirichlet concentration on community topic mixtures.
    pub alpha: f64,
    /// Dirichlet concentration on topic and background word distributions.
    pub beta: f64,
    /// Dirichlet concentration on (topic, community) time distributions.
    pub epsilon: f64,
    /// Beta pseudo-count of background words.
    pub delta0: f64,
    /// Beta pseudo-count of foreground words.
    pub delta1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub communities: usize,
    pub topics: usize,
    pub slices: usize,
    pub vocab_size: usize,
}

impl Hyperparameters {
    /// Reference concentrations with lambda0 derived from the corpus' negative
    /// link count (clamped at [`DEFAULT_LAMBDA0_FLOOR`]).
    pub fn for_corpus(corpus: &Corpus, communities: usize, topics: usize) -> Result<Self> {
        let raw = compute_lambda0(corpus.num_negative_links(), communities)?;
        let hyper = Self {
            rho: DEFAULT_CONCENTRATION,
            alpha: DEFAULT_CONCENTRATION,
            beta: DEFAULT_CONCENTRATION,
            epsilon: DEFAULT_CONCENTRATION,
            delta0: DEFAULT_CONCENTRATION,
            delta1: DEFAULT_DELTA1,
            lambda0: clamp_lambda0(raw, DEFAULT_LAMBDA0_FLOOR),
            lambda1: DEFAULT_LAMBDA1,
            communities,
            topics,
            slices: corpus.num_slices().max(1),
            vocab_size: corpus.vocabulary().len().max(1),
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        let conc = [
            ("rho", self.rho),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("delta0", self.delta0),
            ("delta1", self.delta1),
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
        ];
        for (name, v) in conc {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let dims = [
            ("communities", self.communities),
            ("topics", self.topics),
            ("slices", self.slices),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        self.validate()?;
        if corpus.vocabulary().len() > self.vocab_size {
            return Err(Error::Dimension(format!(
                "corpus vocabulary {} exceeds V={}",
                corpus.vocabulary().len(),
                self.vocab_size
            )));
        }
        if corpus.num_slices() > self.slices {
            return Err(Error::Dimension(format!(
                "corpus has {} time slices, T={}",
                corpus.num_slices(),
                self.slices
            )));
        }
        Ok(())
    }
}

/// `ln(n_neg / C^2)`. Callers clamp non-positive results with [`clamp_lambda0`].
pub fn compute_lambda0(n_neg: u64, communities: usize) -> Result<f64> {
    if n_neg == 0 {
        return Err(Error::Degenerate(
            "no negative links: every ordered user pair is linked".into(),
        ));
    }
    if communities == 0 {
        return Err(Error::InvalidArgument("communities must be at least 1".into()));
    }
    let c = communities as f64;
    Ok((n_neg as f64 / (c * c)).ln())
}

pub fn clamp_lambda0(raw: f64, floor: f64) -> f64 {
    if raw <= 0.0 {
        floor
    } else {
        raw
    }
}

/// Latent indicators for one chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentState {
    /// Community of each post, indexed like `Corpus::posts`.
    pub post_community: Vec<usize>,
    pub post_topic: Vec<usize>,
    /// Foreground flag of each token in flattened post order.
    pub foreground: Vec<bool>,
    /// Source-side community of each link, indexed like `Corpus::edges`.
    pub link_source_community: Vec<usize>,
    pub link_target_community: Vec<usize>,
    pub rng_seed: u64,
}

impl LatentState {
    pub fn check_shape(&self, corpus: &Corpus, hyper: &Hyperparameters) -> Result<()> {
        let shapes = [
            ("post communities", self.post_community.len(), corpus.num_posts()),
            ("post topics", self.post_topic.len(), corpus.num_posts()),
            ("foreground flags", self.foreground.len(), corpus.num_words()),
            ("link source communities", self.link_source_community.len(), corpus.num_links()),
            ("link target communities", self.link_target_community.len(), corpus.num_links()),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{name}: {got} entries, corpus needs {want}")));
            }
        }
        let c_ok = self
            .post_community
            .iter()
            .chain(&self.link_source_community)
            .chain(&self.link_target_community)
            .all(|&c| c < hyper.communities);
        if !c_ok || self.post_topic.iter().any(|&k| k >= hyper.topics) {
            return Err(Error::Dimension("assignment outside [0, C) or [0, K)".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics of a [`LatentState`]. All tables are dense and
/// row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTables {
    pub(crate) communities: usize,
    pub(crate) topics: usize,
    pub(crate) slices: usize,
    pub(crate) vocab_size: usize,
    pub(crate) users: usize,
    /// Posts plus link endpoints of user i drawn from community c. `[U][C]`
    pub(crate) user_comm: Vec<u64>,
    pub(crate) user_total: Vec<u64>,
    /// `[C][K]`
    pub(crate) comm_topic: Vec<u64>,
    pub(crate) comm_total: Vec<u64>,
    /// `[C][K][T]`
    pub(crate) comm_topic_time: Vec<u64>,
    /// `[C][K]`
    pub(crate) comm_topic_time_total: Vec<u64>,
    /// Foreground tokens only. `[K][V]`
    pub(crate) topic_word: Vec<u64>,
    pub(crate) topic_total: Vec<u64>,
    pub(crate) bg_word: Vec<u64>,
    pub(crate) bg_total: u64,
    pub(crate) n_fg: u64,
    pub(crate) n_bg: u64,
    /// `[C][C]`
    pub(crate) link_comm: Vec<u64>,
}

impl CountTables {
    pub fn zeros(users: usize, hyper: &Hyperparameters) -> Self {
        let (c, k, t, v) = (hyper.communities, hyper.topics, hyper.slices, hyper.vocab_size);
        Self {
            communities: c,
            topics: k,
            slices: t,
            vocab_size: v,
            users,
            user_comm: vec![0; users * c],
            user_total: vec![0; users],
            comm_topic: vec![0; c * k],
            comm_total: vec![0; c],
            comm_topic_time: vec![0; c * k * t],
            comm_topic_time_total: vec![0; c * k],
            topic_word: vec![0; k * v],
            topic_total: vec![0; k],
            bg_word: vec![0; v],
            bg_total: 0,
            n_fg: 0,
            n_bg: 0,
            link_comm: vec![0; c * c],
        }
    }

    /// Recounts every table from scratch.
    pub fn from_state(corpus: &Corpus, state: &LatentState, hyper: &Hyperparameters) -> Result<Self> {
        state.check_shape(corpus, hyper)?;
        let mut tables = Self::zeros(corpus.num_users(), hyper);
        for (p, post) in corpus.posts().iter().enumerate() {
            let (c, k) = (state.post_community[p], state.post_topic[p]);
            tables.add_post_membership(post.author, c);
            tables.add_post_topic(c, k, post.time_slice);
            let off = corpus.word_offset(p);
            for (l, &w) in post.tokens.iter().enumerate() {
                tables.add_word(state.foreground[off + l], k, w as usize);
            }
        }
        for (e, &(src, dst)) in corpus.edges().iter().enumerate() {
            tables.add_link(
                src,
                dst,
                state.link_source_community[e],
                state.link_target_community[e],
            );
        }
        Ok(tables)
    }

    #[inline]
    pub(crate) fn add_post_membership(&mut self, user: usize, c: usize) {
        self.user_comm[user * self.communities + c] += 1;
        self.user_total[user] += 1;
    }

    #[inline]
    pub(crate) fn remove_post_membership(&mut self, user: usize, c: usize) {
        self.user_comm[user * self.communities + c] -= 1;
        self.user_total[user] -= 1;
    }

    #[inline]
    pub(crate) fn add_post_topic(&mut self, c: usize, k: usize, t: usize) {
        let ck = c * self.topics + k;
        self.comm_topic[ck] += 1;
        self.comm_total[c] += 1;
        self.comm_topic_time[ck * self.slices + t] += 1;
        self.comm_topic_time_total[ck] += 1;
    }

    #[inline]
    pub(crate) fn remove_post_topic(&mut self, c: usize, k: usize, t: usize) {
        let ck = c * self.topics + k;
        self.comm_topic[ck] -= 1;
        self.comm_total[c] -= 1;
        self.comm_topic_time[ck * self.slices + t] -= 1;
        self.comm_topic_time_total[ck] -= 1;
    }

    #[inline]
    pub(crate) fn add_word(&mut self, foreground: bool, k: usize, v: usize) {
        if foreground {
            self.topic_word[k * self.vocab_size + v] += 1;
            self.topic_total[k] += 1;
            self.n_fg += 1;
        } else {
            self.bg_word[v] += 1;
            self.bg_total += 1;
            self.n_bg += 1;
        }
    }

    #[inline]
    pub(crate) fn remove_word(&mut self, foreground: bool, k: usize, v: usize) {
        if foreground {
            self.topic_word[k * self.vocab_size + v] -= 1;
            self.topic_total[k] -= 1;
            self.n_fg -= 1;
        } else {
            self.bg_word[v] -= 1;
            self.bg_total -= 1;
            self.n_bg -= 1;
        }
    }

    #[inline]
    pub(crate) fn add_link(&mut self, src: usize, dst: usize, s: usize, s2: usize) {
        self.add_post_membership(src, s);
        self.add_post_membership(dst, s2);
        self.link_comm[s * self.communities + s2] += 1;
    }

    #[inline]
    pub(crate) fn remove_link(&mut self, src: usize, dst: usize, s: usize, s2: usize) {
        self.remove_post_membership(src, s);
        self.remove_post_membership(dst, s2);
        self.link_comm[s * self.communities + s2] -= 1;
    }

    pub fn user_comm(&self, user: usize, c: usize) -> u64 {
        self.user_comm[user * self.communities + c]
    }

    pub fn user_total(&self, user: usize) -> u64 {
        self.user_total[user]
    }

    pub fn comm_topic(&self, c: usize, k: usize) -> u64 {
        self.comm_topic[c * self.topics + k]
    }

    pub fn comm_total(&self, c: usize) -> u64 {
        self.comm_total[c]
    }

    pub fn comm_topic_time(&self, c: usize, k: usize, t: usize) -> u64 {
        self.comm_topic_time[(c * self.topics + k) * self.slices + t]
    }

    pub fn comm_topic_time_total(&self, c: usize, k: usize) -> u64 {
        self.comm_topic_time_total[c * self.topics + k]
    }

    pub fn topic_word(&self, k: usize, v: usize) -> u64 {
        self.topic_word[k * self.vocab_size + v]
    }

    pub fn topic_total(&self, k: usize) -> u64 {
        self.topic_total[k]
    }

    pub fn bg_word(&self, v: usize) -> u64 {
        self.bg_word[v]
    }

    pub fn bg_total(&self) -> u64 {
        self.bg_total
    }

    /// Number of tokens flagged foreground.
    pub fn n_foreground(&self) -> u64 {
        self.n_fg
    }

    /// Number of tokens flagged background.
    pub fn n_background(&self) -> u64 {
        self.n_bg
    }

    pub fn link_comm(&self, c: usize, c2: usize) -> u64 {
        self.link_comm[c * self.communities + c2]
    }

    /// Checks that every total equals the sum of its row.
    pub fn marginals_consistent(&self) -> bool {
        let rows_ok = |cells: &[u64], totals: &[u64], width: usize| {
            width == 0
                || cells
                    .chunks(width)
                    .zip(totals)
                    .all(|(row, &tot)| row.iter().sum::<u64>() == tot)
        };
        rows_ok(&self.user_comm, &self.user_total, self.communities)
            && rows_ok(&self.comm_topic, &self.comm_total, self.topics)
            && rows_ok(&self.comm_topic_time, &self.comm_topic_time_total, self.slices)
            && rows_ok(&self.topic_word, &self.topic_total, self.vocab_size)
            && self.bg_word.iter().sum::<u64>() == self.bg_total
            && self.topic_total.iter().sum::<u64>() == self.n_fg
            && self.bg_total == self.n_bg
    }
}

/// Smoothed point estimates of the continuous parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimates {
    /// User community memberships, `[U][C]`.
    pub pi: Vec<Vec<f64>>,
    /// Community topic mixtures, `[C][K]`.
    pub theta: Vec<Vec<f64>>,
    /// Community-pair link strengths, `[C][C]`.
    pub eta: Vec<Vec<f64>>,
    /// Topic word distributions, `[K][V]`.
    pub phi: Vec<Vec<f64>>,
    pub phi_bg: Vec<f64>,
    /// Per (topic, community) distributions over time slices, `[K][C][T]`.
    pub psi: Vec<Vec<Vec<f64>>>,
    /// Probability that a token is drawn from its post's topic.
    pub chi: f64,
}

impl ModelEstimates {
    pub fn communities(&self) -> usize {
        self.theta.len()
    }

    pub fn topics(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi_bg.len()
    }

    pub fn slices(&self) -> usize {
        self.psi.first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    pub fn users(&self) -> usize {
        self.pi.len()
    }
}

fn smoothed_row(counts: &[u64], total: u64, prior: f64) -> Vec<f64> {
    let denom = total as f64 + counts.len() as f64 * prior;
    counts.iter().map(|&n| (n as f64 + prior) / denom).collect()
}

/// Posterior-mean style estimates from the counters.
pub fn estimate_parameters(tables: &CountTables, hyper: &Hyperparameters) -> ModelEstimates {
    let (c_n, k_n, t_n, v_n) = (tables.communities, tables.topics, tables.slices, tables.vocab_size);
    let pi = (0..tables.users)
        .map(|i| {
            smoothed_row(
                &tables.user_comm[i * c_n..(i + 1) * c_n],
                tables.user_total[i],
                hyper.rho,
            )
        })
        .collect();
    let theta = (0..c_n)
        .map(|c| smoothed_row(&tables.comm_topic[c * k_n..(c + 1) * k_n], tables.comm_total[c], hyper.alpha))
        .collect();
    let psi = (0..k_n)
        .map(|k| {
            (0..c_n)
                .map(|c| {
                    let ck = c * k_n + k;
                    smoothed_row(
                        &tables.comm_topic_time[ck * t_n..(ck + 1) * t_n],
                        tables.comm_topic_time_total[ck],
                        hyper.epsilon,
                    )
                })
                .collect()
        })
        .collect();
    let phi = (0..k_n)
        .map(|k| smoothed_row(&tables.topic_word[k * v_n..(k + 1) * v_n], tables.topic_total[k], hyper.beta))
        .collect();
    let phi_bg = smoothed_row(&tables.bg_word, tables.bg_total, hyper.beta);
    let n_words = (tables.n_fg + tables.n_bg) as f64;
    let chi = (tables.n_fg as f64 + hyper.delta1) / (n_words + hyper.delta0 + hyper.delta1);
    let eta = (0..c_n)
        .map(|c| {
            (0..c_n)
                .map(|c2| {
                    let n = tables.link_comm[c * c_n + c2] as f64;
                    (n + hyper.lambda1) / (n + hyper.lambda0 + hyper.lambda1)
                })
                .collect()
        })
        .collect();
    ModelEstimates {
        pi,
        theta,
        eta,
        phi,
        phi_bg,
        psi,
        chi,
    }
}

/// Draws every indicator uniformly (flags from the prior mean of chi) and
/// builds the matching counters.
pub fn init_state(
    corpus: &Corpus,
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<(LatentState, CountTables)> {
    hyper.check_corpus(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_fg = hyper.delta1 / (hyper.delta0 + hyper.delta1);
    let mut state = LatentState {
        post_community: Vec::with_capacity(corpus.num_posts()),
        post_topic: Vec::with_capacity(corpus.num_posts()),
        foreground: Vec::with_capacity(corpus.num_words()),
        link_source_community: Vec::with_capacity(corpus.num_links()),
        link_target_community: Vec::with_capacity(corpus.num_links()),
        rng_seed: seed,
    };
    for post in corpus.posts() {
        state.post_community.push(rng.gen_range(0..hyper.communities));
        state.post_topic.push(rng.gen_range(0..hyper.topics));
        for _ in &post.tokens {
            state.foreground.push(rng.gen_bool(p_fg));
        }
    }
    for _ in corpus.edges() {
        state.link_source_community.push(rng.gen_range(0..hyper.communities));
        state.link_target_community.push(rng.gen_range(0..hyper.communities));
    }
    let tables = CountTables::from_state(corpus, &state, hyper)?;
    Ok((state, tables))
}

/// Joint log-probability of the data and the current indicators, with the
/// continuous parameters replaced by their point estimates. Includes the
/// Bernoulli(chi) probability of each foreground flag.
pub fn complete_log_likelihood(
    corpus: &Corpus,
    state: &LatentState,
    tables: &CountTables,
    hyper: &Hyperparameters,
) -> f64 {
    let est = estimate_parameters(tables, hyper);
    let ln_chi = est.chi.ln();
    let ln_not_chi = (1.0 - est.chi).ln();
    let ln_phi: Vec<Vec<f64>> = est
        .phi
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let ln_phi_bg: Vec<f64> = est.phi_bg.iter().map(|p| p.ln()).collect();

    let mut text = 0.0;
    for (p, post) in corpus.posts().iter().enumerate() {
        let (c, k) = (state.post_community[p], state.post_topic[p]);
        text += est.pi[post.author][c].ln() + est.theta[c][k].ln() + est.psi[k][c][post.time_slice].ln();
        let off = corpus.word_offset(p);
        for (l, &w) in post.tokens.iter().enumerate() {
            text += if state.foreground[off + l] {
                ln_chi + ln_phi[k][w as usize]
            } else {
                ln_not_chi + ln_phi_bg[w as usize]
            };
        }
    }
    let mut links = 0.0;
    for (e, &(src, dst)) in corpus.edges().iter().enumerate() {
        let (s, s2) = (state.link_source_community[e], state.link_target_community[e]);
        links += est.pi[src][s].ln() + est.pi[dst][s2].ln() + est.eta[s][s2].ln();
    }
    text + links
}

pub const CHECKPOINT_FORMAT: &str = "costot-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hyperparameters plus assignments; estimates are re-derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: Hyperparameters,
    pub seed: u64,
    pub iterations: usize,
    /// Holdout applied to the input corpus before training, if any.
    pub split: Option<SplitConfig>,
    pub state: LatentState,
}

impl Checkpoint {
    pub fn new(
        hyper: Hyperparameters,
        seed: u64,
        iterations: usize,
        split: Option<SplitConfig>,
        state: LatentState,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyper,
            seed,
            iterations,
            split,
            state,
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)?;
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt = Self::read(std::io::BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("unsupported format {} v{}", ckpt.format, ckpt.version),
            });
        }
        Ok(ckpt)
    }

    /// Rebuilds the counters, validating the assignments against `corpus`.
    pub fn tables(&self, corpus: &Corpus) -> Result<CountTables> {
        self.hyper.check_corpus(corpus)?;
        CountTables::from_state(corpus, &self.state, &self.hyper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LinkSet, Post, Vocabulary};

    fn hyper(c: usize, k: usize, t: usize, v: usize) -> Hyperparameters {
        Hyperparameters {
            rho: 0.01,
            alpha: 0.01,
            beta: 0.01,
            epsilon: 0.01,
            delta0: 0.01,
            delta1: 1.0,
            lambda0: 1.0,
            lambda1: 0.1,
            communities: c,
            topics: k,
            slices: t,
            vocab_size: v,
        }
    }

    fn toy_corpus() -> Corpus {
        let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
        let posts = vec![
            Post { author: 0, tokens: vec![0, 1, 0], time_slice: 0 },
            Post { author: 1, tokens: vec![2], time_slice: 2 },
            Post { author: 2, tokens: vec![], time_slice: 1 },
            Post { author: 0, tokens: vec![1, 2], time_slice: 1 },
        ];
        let (links, _) = LinkSet::from_pairs(3, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        Corpus::new(posts, links, vocab, 3, None).unwrap()
    }

    #[test]
    fn lambda0_examples() {
        let l = compute_lambda0(25, 5).unwrap();
        assert!(l.abs() < 1e-15);
        assert_eq!(clamp_lambda0(l, DEFAULT_LAMBDA0_FLOOR), 0.1);
        assert!((compute_lambda0(10_000, 10).unwrap() - 4.605_170_185_988_091).abs() < 1e-12);
        let n_neg = 250 * 249 - 2000;
        assert!((compute_lambda0(n_neg, 5).unwrap() - 2410f64.ln()).abs() < 1e-12);
        assert!((2410f64.ln() - 7.78738).abs() < 1e-5);
        assert!(matches!(compute_lambda0(0, 3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn hyper_rejects_bad_values() {
        let mut h = hyper(2, 2, 2, 2);
        assert!(h.validate().is_ok());
        h.beta = 0.0;
        assert!(h.validate().is_err());
        let mut h = hyper(2, 2, 2, 2);
        h.topics = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn defaults_for_corpus() {
        let corpus = toy_corpus();
        let h = Hyperparameters::for_corpus(&corpus, 2, 3).unwrap();
        assert_eq!((h.rho, h.alpha, h.beta, h.epsilon, h.delta0, h.delta1), (0.01, 0.01, 0.01, 0.01, 0.01, 1.0));
        assert_eq!(h.lambda1, 0.1);
        // 3*2 - 4 = 2 negatives over C^2 = 4 gives ln(0.5) < 0, so the floor applies.
        assert_eq!(h.lambda0, 0.1);
        assert_eq!((h.slices, h.vocab_size), (3, 3));
    }

    #[test]
    fn init_empty_corpus() {
        let corpus = Corpus::new(vec![], LinkSet::empty(0), Vocabulary::new(), 0, None).unwrap();
        let h = hyper(2, 2, 1, 1);
        let (state, tables) = init_state(&corpus, &h, 1).unwrap();
        assert!(state.post_community.is_empty() && state.foreground.is_empty());
        assert!(tables.comm_total.iter().all(|&n| n == 0));
        assert_eq!(tables.n_fg + tables.n_bg, 0);
    }

    #[test]
    fn init_is_deterministic_and_consistent() {
        let corpus = toy_corpus();
        let h = hyper(2, 3, 3, 3);
        let (s1, t1) = init_state(&corpus, &h, 42).unwrap();
        let (s2, t2) = init_state(&corpus, &h, 42).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert_eq!(CountTables::from_state(&corpus, &s1, &h).unwrap(), t1);
        assert!(t1.marginals_consistent());
        assert_eq!(t1.n_foreground() + t1.n_background(), corpus.num_words() as u64);
        let in_deg = corpus.links().in_degrees();
        for i in 0..corpus.num_users() {
            let expected = corpus.posts_of(i).len() + corpus.links().out_links(i).len() + in_deg[i];
            assert_eq!(t1.user_total(i), expected as u64);
        }
        let (s3, _) = init_state(&corpus, &h, 43).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn init_rejects_small_dimensions() {
        let corpus = toy_corpus();
        assert!(init_state(&corpus, &hyper(2, 2, 2, 3), 0).is_err());
        assert!(init_state(&corpus, &hyper(2, 2, 3, 2), 0).is_err());
    }

    #[test]
    fn estimates_from_zero_tables_are_prior_means() {
        let h = hyper(3, 4, 5, 6);
        let est = estimate_parameters(&CountTables::zeros(2, &h), &h);
        assert!(est.pi.iter().flatten().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(est.theta.iter().flatten().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!(est.psi.iter().flatten().flatten().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!(est.phi.iter().flatten().chain(&est.phi_bg).all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!((est.chi - 1.0 / 1.01).abs() < 1e-15);
        assert!(est.eta.iter().flatten().all(|&p| (p - 0.1 / 1.1).abs() < 1e-15));
    }

    #[test]
    fn membership_estimate_example() {
        let h = hyper(2, 1, 1, 1);
        let mut tables = CountTables::zeros(1, &h);
        for _ in 0..3 {
            tables.add_post_membership(0, 0);
        }
        tables.add_post_membership(0, 1);
        let est = estimate_parameters(&tables, &h);
        assert!((est.pi[0][0] - 3.01 / 4.02).abs() < 1e-15);
        assert!((est.pi[0][0] - 0.74876).abs() < 1e-5);
        assert!((est.pi[0][1] - 0.25124).abs() < 1e-5);
    }

    #[test]
    fn estimate_rows_normalized() {
        let corpus = toy_corpus();
        let h = hyper(2, 3, 3, 3);
        let (_, tables) = init_state(&corpus, &h, 5).unwrap();
        let est = estimate_parameters(&tables, &h);
        let sums_to_one = |r: &Vec<f64>| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        assert!(est.pi.iter().all(sums_to_one));
        assert!(est.theta.iter().all(sums_to_one));
        assert!(est.phi.iter().all(sums_to_one));
        assert!(sums_to_one(&est.phi_bg));
        assert!(est.psi.iter().flatten().all(sums_to_one));
        assert!(est.eta.iter().flatten().all(|&e| e > 0.0 && e < 1.0));
    }

    #[test]
    fn loglik_empty_corpus_is_zero() {
        let corpus = Corpus::new(vec![], LinkSet::empty(0), Vocabulary::new(), 0, None).unwrap();
        let h = hyper(2, 2, 1, 1);
        let (state, tables) = init_state(&corpus, &h, 0).unwrap();
        assert_eq!(complete_log_likelihood(&corpus, &state, &tables, &h), 0.0);
    }

    #[test]
    fn loglik_single_word_instance() {
        let vocab = Vocabulary::from_words(["w"]).unwrap();
        let posts = vec![Post { author: 0, tokens: vec![0], time_slice: 0 }];
        let corpus = Corpus::new(posts, LinkSet::empty(1), vocab, 1, None).unwrap();
        let h = hyper(1, 1, 1, 1);
        for fg in [true, false] {
            let state = LatentState {
                post_community: vec![0],
                post_topic: vec![0],
                foreground: vec![fg],
                link_source_community: vec![],
                link_target_community: vec![],
                rng_seed: 0,
            };
            let tables = CountTables::from_state(&corpus, &state, &h).unwrap();
            // chi = (n1 + delta1) / (1 + delta0 + delta1); all categorical factors are 1.
            let expected = if fg { (2.0f64 / 2.01).ln() } else { (1.01f64 / 2.01).ln() };
            let got = complete_log_likelihood(&corpus, &state, &tables, &h);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn loglik_recount_is_bit_identical() {
        let corpus = toy_corpus();
        let h = hyper(2, 3, 3, 3);
        let (state, tables) = init_state(&corpus, &h, 9).unwrap();
        let a = complete_log_likelihood(&corpus, &state, &tables, &h);
        let rebuilt = CountTables::from_state(&corpus, &state, &h).unwrap();
        let b = complete_log_likelihood(&corpus, &state, &rebuilt, &h);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let corpus = toy_corpus();
        let h = hyper(2, 3, 3, 3);
        let (state, tables) = init_state(&corpus, &h, 3).unwrap();
        let ckpt = Checkpoint::new(h, 3, 0, None, state);
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.tables(&corpus).unwrap(), tables);
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let corpus = toy_corpus();
        let h = hyper(2, 3, 3, 3);
        let (mut state, _) = init_state(&corpus, &h, 3).unwrap();
        state.foreground.pop();
        assert!(matches!(CountTables::from_state(&corpus, &state, &h), Err(Error::Dimension(_))));
    }
}
