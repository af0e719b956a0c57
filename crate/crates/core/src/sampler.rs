//! Collapsed Gibbs sampler.
//!
//! One sweep resamples every post community, then every link's community
//! pair, then every post topic, then every token's foreground flag. Each
//! conditional is evaluated from the count tables with the variable being
//! resampled removed, so one sweep costs
//! `C*posts + C^2*links + K*posts + 2*words` weight evaluations (plus the
//! per-token work inside the topic weights).

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{
    complete_log_likelihood, estimate_parameters, init_state, CountTables, Hyperparameters,
    LatentState, ModelEstimates,
};

/// RNG stream used by the sampler; stream 0 of the same seed initializes.
const SAMPLER_STREAM: u64 = 1;

/// Word ratios folded into one log term in the topic conditional.
const LOG_BLOCK: usize = 8;

pub struct Sampler<'a> {
    corpus: &'a Corpus,
    hyper: Hyperparameters,
    state: LatentState,
    tables: CountTables,
    rng: ChaCha8Rng,
    weight_evaluations: u64,
    weights: Vec<f64>,
    // (word, number of earlier foreground occurrences of that word in the post)
    fg_words: Vec<(usize, u32)>,
    occurrences: Vec<u32>,
}

fn draw(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0 && total.is_finite());
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last cumulative weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

impl<'a> Sampler<'a> {
    /// Draws a random initial state from `seed` and prepares a sampler.
    pub fn init(corpus: &'a Corpus, hyper: Hyperparameters, seed: u64) -> Result<Self> {
        let (state, tables) = init_state(corpus, &hyper, seed)?;
        Ok(Self::from_parts(corpus, hyper, state, tables, seed))
    }

    /// Resumes from an explicit state. The tables are recounted.
    pub fn from_state(
        corpus: &'a Corpus,
        hyper: Hyperparameters,
        state: LatentState,
        seed: u64,
    ) -> Result<Self> {
        hyper.check_corpus(corpus)?;
        let tables = CountTables::from_state(corpus, &state, &hyper)?;
        Ok(Self::from_parts(corpus, hyper, state, tables, seed))
    }

    fn from_parts(
        corpus: &'a Corpus,
        hyper: Hyperparameters,
        state: LatentState,
        tables: CountTables,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLER_STREAM);
        let width = hyper.communities.pow(2).max(hyper.topics).max(2);
        Self {
            corpus,
            hyper,
            state,
            tables,
            rng,
            weight_evaluations: 0,
            weights: Vec::with_capacity(width),
            fg_words: Vec::new(),
            occurrences: vec![0; hyper.vocab_size],
        }
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn tables(&self) -> &CountTables {
        &self.tables
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn into_parts(self) -> (LatentState, CountTables) {
        (self.state, self.tables)
    }

    /// Categorical weights evaluated since construction.
    pub fn weight_evaluations(&self) -> u64 {
        self.weight_evaluations
    }

    pub fn estimates(&self) -> ModelEstimates {
        estimate_parameters(&self.tables, &self.hyper)
    }

    pub fn log_likelihood(&self) -> f64 {
        complete_log_likelihood(self.corpus, &self.state, &self.tables, &self.hyper)
    }

    // ---- post community -------------------------------------------------

    fn exclude_post_community(&mut self, p: usize) {
        let post = &self.corpus.posts()[p];
        let (c, k) = (self.state.post_community[p], self.state.post_topic[p]);
        self.tables.remove_post_membership(post.author, c);
        self.tables.remove_post_topic(c, k, post.time_slice);
    }

    fn include_post_community(&mut self, p: usize, c: usize) {
        let post = &self.corpus.posts()[p];
        let k = self.state.post_topic[p];
        self.state.post_community[p] = c;
        self.tables.add_post_membership(post.author, c);
        self.tables.add_post_topic(c, k, post.time_slice);
    }

    fn fill_post_community_weights(&mut self, p: usize) {
        let h = &self.hyper;
        let t = &self.tables;
        let post = &self.corpus.posts()[p];
        let (i, k, slice) = (post.author, self.state.post_topic[p], post.time_slice);
        let (cn, kn, tn) = (h.communities as f64, h.topics as f64, h.slices as f64);
        let user_den = t.user_total(i) as f64 + cn * h.rho;
        self.weights.clear();
        for c in 0..h.communities {
            let w = (t.user_comm(i, c) as f64 + h.rho) / user_den
                * (t.comm_topic(c, k) as f64 + h.alpha)
                / (t.comm_total(c) as f64 + kn * h.alpha)
                * (t.comm_topic_time(c, k, slice) as f64 + h.epsilon)
                / (t.comm_topic_time_total(c, k) as f64 + tn * h.epsilon);
            self.weights.push(w);
        }
        self.weight_evaluations += h.communities as u64;
    }

    pub fn sample_post_community(&mut self, p: usize) -> usize {
        self.exclude_post_community(p);
        self.fill_post_community_weights(p);
        let c = draw(&self.weights, &mut self.rng);
        self.include_post_community(p, c);
        c
    }

    /// Normalized conditional over communities for post `p`; state unchanged.
    pub fn post_community_conditional(&mut self, p: usize) -> Vec<f64> {
        let old = self.state.post_community[p];
        self.exclude_post_community(p);
        self.fill_post_community_weights(p);
        let probs = normalized(&self.weights);
        self.include_post_community(p, old);
        probs
    }

    // ---- link communities -----------------------------------------------

    fn exclude_link(&mut self, e: usize) {
        let (src, dst) = self.corpus.edges()[e];
        let (s, s2) = (self.state.link_source_community[e], self.state.link_target_community[e]);
        self.tables.remove_link(src, dst, s, s2);
    }

    fn include_link(&mut self, e: usize, s: usize, s2: usize) {
        let (src, dst) = self.corpus.edges()[e];
        self.state.link_source_community[e] = s;
        self.state.link_target_community[e] = s2;
        self.tables.add_link(src, dst, s, s2);
    }

    /// Weights laid out row-major over (source community, target community).
    fn fill_link_weights(&mut self, e: usize) {
        let h = &self.hyper;
        let t = &self.tables;
        let (src, dst) = self.corpus.edges()[e];
        let cn = h.communities as f64;
        let src_den = t.user_total(src) as f64 + cn * h.rho;
        let dst_den = t.user_total(dst) as f64 + cn * h.rho;
        self.weights.clear();
        for c in 0..h.communities {
            let a = (t.user_comm(src, c) as f64 + h.rho) / src_den;
            for c2 in 0..h.communities {
                let b = (t.user_comm(dst, c2) as f64 + h.rho) / dst_den;
                let n = t.link_comm(c, c2) as f64;
                self.weights
                    .push(a * b * (n + h.lambda1) / (n + h.lambda0 + h.lambda1));
            }
        }
        self.weight_evaluations += (h.communities * h.communities) as u64;
    }

    pub fn sample_link_communities(&mut self, e: usize) -> (usize, usize) {
        self.exclude_link(e);
        self.fill_link_weights(e);
        let idx = draw(&self.weights, &mut self.rng);
        let (s, s2) = (idx / self.hyper.communities, idx % self.hyper.communities);
        self.include_link(e, s, s2);
        (s, s2)
    }

    /// Normalized joint conditional over `(s, s')` for link `e`, row-major.
    pub fn link_conditional(&mut self, e: usize) -> Vec<f64> {
        let (s, s2) = (self.state.link_source_community[e], self.state.link_target_community[e]);
        self.exclude_link(e);
        self.fill_link_weights(e);
        let probs = normalized(&self.weights);
        self.include_link(e, s, s2);
        probs
    }

    // ---- post topic -----------------------------------------------------

    fn exclude_post_topic(&mut self, p: usize) {
        let post = &self.corpus.posts()[p];
        let (c, k) = (self.state.post_community[p], self.state.post_topic[p]);
        self.tables.remove_post_topic(c, k, post.time_slice);
        let off = self.corpus.word_offset(p);
        for (l, &w) in post.tokens.iter().enumerate() {
            if self.state.foreground[off + l] {
                self.tables.remove_word(true, k, w as usize);
            }
        }
    }

    fn include_post_topic(&mut self, p: usize, k: usize) {
        let post = &self.corpus.posts()[p];
        let c = self.state.post_community[p];
        self.state.post_topic[p] = k;
        self.tables.add_post_topic(c, k, post.time_slice);
        let off = self.corpus.word_offset(p);
        for (l, &w) in post.tokens.iter().enumerate() {
            if self.state.foreground[off + l] {
                self.tables.add_word(true, k, w as usize);
            }
        }
    }

    fn collect_foreground_words(&mut self, p: usize) {
        let post = &self.corpus.posts()[p];
        let off = self.corpus.word_offset(p);
        self.fg_words.clear();
        for (l, &w) in post.tokens.iter().enumerate() {
            if self.state.foreground[off + l] {
                let w = w as usize;
                self.fg_words.push((w, self.occurrences[w]));
                self.occurrences[w] += 1;
            }
        }
        for &(w, _) in &self.fg_words {
            self.occurrences[w] = 0;
        }
    }

    /// Log-space weights; the ascending-factorial word terms become sums of
    /// logs. Leaves normalized-to-max linear weights in `self.weights`.
    fn fill_post_topic_weights(&mut self, p: usize) {
        self.collect_foreground_words(p);
        let h = &self.hyper;
        let t = &self.tables;
        let post = &self.corpus.posts()[p];
        let (c, slice) = (self.state.post_community[p], post.time_slice);
        let (kn, tn, vn) = (h.topics as f64, h.slices as f64, h.vocab_size as f64);
        let comm_den = (t.comm_total(c) as f64 + kn * h.alpha).ln();
        self.weights.clear();
        let mut max = f64::NEG_INFINITY;
        for k in 0..h.topics {
            let mut lw = (t.comm_topic(c, k) as f64 + h.alpha).ln() - comm_den
                + (t.comm_topic_time(c, k, slice) as f64 + h.epsilon).ln()
                - (t.comm_topic_time_total(c, k) as f64 + tn * h.epsilon).ln();
            // Ratios are multiplied in blocks before taking the log; a block of
            // LOG_BLOCK ratios cannot leave the normal f64 range.
            let topic_total = t.topic_total(k) as f64 + vn * h.beta;
            for (block, chunk) in self.fg_words.chunks(LOG_BLOCK).enumerate() {
                let mut prod = 1.0;
                for (i, &(w, rep)) in chunk.iter().enumerate() {
                    let q = (block * LOG_BLOCK + i) as f64;
                    prod *= (t.topic_word(k, w) as f64 + rep as f64 + h.beta) / (topic_total + q);
                }
                lw += prod.ln();
            }
            max = max.max(lw);
            self.weights.push(lw);
        }
        for w in &mut self.weights {
            *w = (*w - max).exp();
        }
        self.weight_evaluations += h.topics as u64;
    }

    pub fn sample_post_topic(&mut self, p: usize) -> usize {
        self.exclude_post_topic(p);
        self.fill_post_topic_weights(p);
        let k = draw(&self.weights, &mut self.rng);
        self.include_post_topic(p, k);
        k
    }

    pub fn post_topic_conditional(&mut self, p: usize) -> Vec<f64> {
        let old = self.state.post_topic[p];
        self.exclude_post_topic(p);
        self.fill_post_topic_weights(p);
        let probs = normalized(&self.weights);
        self.include_post_topic(p, old);
        probs
    }

    /// Unnormalized topic weights from a direct product of the count ratios,
    /// without the log-space rewrite. Used to cross-check the sampler path on
    /// short posts.
    pub fn post_topic_weights_direct(&mut self, p: usize) -> Vec<f64> {
        let old = self.state.post_topic[p];
        self.exclude_post_topic(p);
        self.collect_foreground_words(p);
        let h = &self.hyper;
        let t = &self.tables;
        let post = &self.corpus.posts()[p];
        let (c, slice) = (self.state.post_community[p], post.time_slice);
        let (kn, tn, vn) = (h.topics as f64, h.slices as f64, h.vocab_size as f64);
        let weights = (0..h.topics)
            .map(|k| {
                let mut w = (t.comm_topic(c, k) as f64 + h.alpha) / (t.comm_total(c) as f64 + kn * h.alpha)
                    * (t.comm_topic_time(c, k, slice) as f64 + h.epsilon)
                    / (t.comm_topic_time_total(c, k) as f64 + tn * h.epsilon);
                for (q, &(word, rep)) in self.fg_words.iter().enumerate() {
                    w *= (t.topic_word(k, word) as f64 + rep as f64 + h.beta)
                        / (t.topic_total(k) as f64 + q as f64 + vn * h.beta);
                }
                w
            })
            .collect();
        self.include_post_topic(p, old);
        weights
    }

    // ---- foreground flags -----------------------------------------------

    fn word_at(&self, p: usize, l: usize) -> (usize, usize) {
        let idx = self.corpus.word_offset(p) + l;
        (idx, self.corpus.posts()[p].tokens[l] as usize)
    }

    /// Weights `[background, foreground]` for token `l` of post `p`, with the
    /// token already excluded.
    fn fill_flag_weights(&mut self, p: usize, w: usize) {
        let h = &self.hyper;
        let t = &self.tables;
        let k = self.state.post_topic[p];
        let vn = h.vocab_size as f64;
        let n_all = (t.n_foreground() + t.n_background()) as f64 + h.delta0 + h.delta1;
        let fg = (t.n_foreground() as f64 + h.delta1) / n_all * (t.topic_word(k, w) as f64 + h.beta)
            / (t.topic_total(k) as f64 + vn * h.beta);
        let bg = (t.n_background() as f64 + h.delta0) / n_all * (t.bg_word(w) as f64 + h.beta)
            / (t.bg_total() as f64 + vn * h.beta);
        self.weights.clear();
        self.weights.push(bg);
        self.weights.push(fg);
        self.weight_evaluations += 2;
    }

    pub fn sample_word_foreground(&mut self, p: usize, l: usize) -> bool {
        let (idx, w) = self.word_at(p, l);
        let k = self.state.post_topic[p];
        self.tables.remove_word(self.state.foreground[idx], k, w);
        self.fill_flag_weights(p, w);
        let fg = draw(&self.weights, &mut self.rng) == 1;
        self.state.foreground[idx] = fg;
        self.tables.add_word(fg, k, w);
        fg
    }

    /// Normalized `[P(background), P(foreground)]` for token `l` of post `p`.
    pub fn word_foreground_conditional(&mut self, p: usize, l: usize) -> [f64; 2] {
        let (idx, w) = self.word_at(p, l);
        let k = self.state.post_topic[p];
        let fg = self.state.foreground[idx];
        self.tables.remove_word(fg, k, w);
        self.fill_flag_weights(p, w);
        let probs = normalized(&self.weights);
        self.tables.add_word(fg, k, w);
        [probs[0], probs[1]]
    }

    /// One full sweep in the fixed visitation order.
    pub fn sweep(&mut self) {
        let n_posts = self.corpus.num_posts();
        for p in 0..n_posts {
            self.sample_post_community(p);
        }
        for e in 0..self.corpus.num_links() {
            self.sample_link_communities(e);
        }
        for p in 0..n_posts {
            self.sample_post_topic(p);
        }
        for p in 0..n_posts {
            for l in 0..self.corpus.posts()[p].tokens.len() {
                self.sample_word_foreground(p, l);
            }
        }
    }
}

/// Weight evaluations one sweep performs: `C*posts + C^2*links + K*posts + 2*words`.
pub fn expected_weight_evaluations(corpus: &Corpus, hyper: &Hyperparameters) -> u64 {
    let (c, k) = (hyper.communities as u64, hyper.topics as u64);
    c * corpus.num_posts() as u64
        + c * c * corpus.num_links() as u64
        + k * corpus.num_posts() as u64
        + 2 * corpus.num_words() as u64
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Record the log-likelihood every this many sweeps (and after the last).
    pub log_every: usize,
    /// Print `iter=<n> loglik=<value> seconds=<t>` lines to stderr.
    pub progress: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            seed: 0,
            log_every: 1,
            progress: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: LatentState,
    pub tables: CountTables,
    pub estimates: ModelEstimates,
    pub trace: Vec<TracePoint>,
}

pub fn train(corpus: &Corpus, hyper: &Hyperparameters, opts: &TrainOptions) -> Result<TrainOutput> {
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    if opts.log_every == 0 {
        return Err(Error::InvalidArgument("log_every must be at least 1".into()));
    }
    let started = Instant::now();
    let mut sampler = Sampler::init(corpus, *hyper, opts.seed)?;
    let mut trace = Vec::new();
    for iter in 1..=opts.iterations {
        sampler.sweep();
        if iter % opts.log_every == 0 || iter == opts.iterations {
            let loglik = sampler.log_likelihood();
            if opts.progress {
                eprintln!(
                    "iter={iter} loglik={loglik} seconds={:.3}",
                    started.elapsed().as_secs_f64()
                );
            }
            trace.push(TracePoint {
                iteration: iter,
                loglik,
            });
        }
    }
    let estimates = sampler.estimates();
    let (state, tables) = sampler.into_parts();
    Ok(TrainOutput {
        state,
        tables,
        estimates,
        trace,
    })
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,loglik")?;
    for p in trace {
        writeln!(out, "{},{}", p.iteration, p.loglik)?;
    }
    Ok(())
}
