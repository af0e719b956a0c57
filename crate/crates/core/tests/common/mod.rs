#![allow(dead_code)]

//! Brute-force collapsed joint used as an independent check on the sampler's
//! conditionals. Counts are rebuilt here from the raw assignments; nothing
//! from the library's count tables is reused.

use costot::corpus::{Corpus, LinkSet, Post, Vocabulary};
use costot::model::{Hyperparameters, LatentState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `ln(a (a+1) ... (a+n-1))`, the Polya-urn normaliser.
fn ln_rising(a: f64, n: usize) -> f64 {
    (0..n).map(|q| (a + q as f64).ln()).sum()
}

fn dirichlet_multinomial(counts: &[usize], prior: f64) -> f64 {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&n| ln_rising(prior, n)).sum::<f64>() - ln_rising(prior * counts.len() as f64, total)
}

/// Log collapsed joint of all indicators and observations, up to a constant.
pub fn collapsed_log_joint(corpus: &Corpus, state: &LatentState, h: &Hyperparameters) -> f64 {
    let (cn, kn, tn, vn) = (h.communities, h.topics, h.slices, h.vocab_size);
    let u = corpus.num_users();
    let mut membership = vec![vec![0usize; cn]; u];
    let mut comm_topic = vec![vec![0usize; kn]; cn];
    let mut comm_topic_time = vec![vec![vec![0usize; tn]; kn]; cn];
    let mut topic_word = vec![vec![0usize; vn]; kn];
    let mut bg_word = vec![0usize; vn];
    let (mut n_fg, mut n_bg) = (0usize, 0usize);
    let mut links = vec![vec![0usize; cn]; cn];

    let mut flat = 0;
    for (p, post) in corpus.posts().iter().enumerate() {
        let (c, k) = (state.post_community[p], state.post_topic[p]);
        membership[post.author][c] += 1;
        comm_topic[c][k] += 1;
        comm_topic_time[c][k][post.time_slice] += 1;
        for &w in &post.tokens {
            if state.foreground[flat] {
                topic_word[k][w as usize] += 1;
                n_fg += 1;
            } else {
                bg_word[w as usize] += 1;
                n_bg += 1;
            }
            flat += 1;
        }
    }
    for (e, &(src, dst)) in corpus.edges().iter().enumerate() {
        let (s, s2) = (state.link_source_community[e], state.link_target_community[e]);
        membership[src][s] += 1;
        membership[dst][s2] += 1;
        links[s][s2] += 1;
    }

    let mut total = 0.0;
    total += membership.iter().map(|r| dirichlet_multinomial(r, h.rho)).sum::<f64>();
    total += comm_topic.iter().map(|r| dirichlet_multinomial(r, h.alpha)).sum::<f64>();
    total += comm_topic_time
        .iter()
        .flatten()
        .map(|r| dirichlet_multinomial(r, h.epsilon))
        .sum::<f64>();
    total += topic_word.iter().map(|r| dirichlet_multinomial(r, h.beta)).sum::<f64>();
    total += dirichlet_multinomial(&bg_word, h.beta);
    total += ln_rising(h.delta1, n_fg) + ln_rising(h.delta0, n_bg) - ln_rising(h.delta0 + h.delta1, n_fg + n_bg);
    // Beta prior on each block, positive links only: the predictive for one
    // more link given n in the block is (n + l1) / (n + l0 + l1).
    for &n in links.iter().flatten() {
        total += ln_rising(h.lambda1, n) - ln_rising(h.lambda0 + h.lambda1, n);
    }
    total
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Conditional over one variable by evaluating the joint at every value.
pub fn oracle_conditional<F>(
    corpus: &Corpus,
    state: &LatentState,
    h: &Hyperparameters,
    n_values: usize,
    mut set: F,
) -> Vec<f64>
where
    F: FnMut(&mut LatentState, usize),
{
    let logs: Vec<f64> = (0..n_values)
        .map(|v| {
            let mut s = state.clone();
            set(&mut s, v);
            collapsed_log_joint(corpus, &s, h)
        })
        .collect();
    softmax(&logs)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) / y.abs().max(f64::MIN_POSITIVE)).abs())
        .fold(0.0, f64::max)
}

/// A random instance with at most 4 users, 4 posts, 2 words per post and
/// C = K = T = 2, plus a random assignment state.
pub fn tiny_instance(seed: u64) -> (Corpus, Hyperparameters, LatentState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.gen_range(2..=4);
    let vocab_size = rng.gen_range(1..=3);
    let n_posts = rng.gen_range(1..=4);
    let posts: Vec<Post> = (0..n_posts)
        .map(|_| Post {
            author: rng.gen_range(0..users),
            tokens: (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(0..vocab_size) as u32).collect(),
            time_slice: rng.gen_range(0..2),
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..users)
        .flat_map(|i| (0..users).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .filter(|_| rng.gen_bool(0.4))
        .collect();
    let (links, _) = LinkSet::from_pairs(users, pairs).unwrap();
    let vocab = Vocabulary::from_words((0..vocab_size).map(|v| format!("v{v}"))).unwrap();
    let corpus = Corpus::new(posts, links, vocab, users, Some(2)).unwrap();
    let mut conc = || rng.gen_range(0.05..2.0);
    let h = Hyperparameters {
        rho: conc(),
        alpha: conc(),
        beta: conc(),
        epsilon: conc(),
        delta0: conc(),
        delta1: conc(),
        lambda0: conc(),
        lambda1: conc(),
        communities: 2,
        topics: 2,
        slices: 2,
        vocab_size,
    };
    let state = LatentState {
        post_community: (0..corpus.num_posts()).map(|_| rng.gen_range(0..2)).collect(),
        post_topic: (0..corpus.num_posts()).map(|_| rng.gen_range(0..2)).collect(),
        foreground: (0..corpus.num_words()).map(|_| rng.gen_bool(0.5)).collect(),
        link_source_community: (0..corpus.num_links()).map(|_| rng.gen_range(0..2)).collect(),
        link_target_community: (0..corpus.num_links()).map(|_| rng.gen_range(0..2)).collect(),
        rng_seed: seed,
    };
    (corpus, h, state)
}

/// Largest relative error between every sampler conditional and the oracle
/// on one tiny instance, and the number of conditionals compared.
pub fn oracle_check(seed: u64) -> (f64, usize) {
    use costot::sampler::Sampler;
    let (corpus, h, state) = tiny_instance(seed);
    let mut sampler = Sampler::from_state(&corpus, h, state.clone(), 0).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for p in 0..corpus.num_posts() {
        let got = sampler.post_community_conditional(p);
        let want = oracle_conditional(&corpus, &state, &h, 2, |s, v| s.post_community[p] = v);
        worst = worst.max(max_relative_error(&got, &want));
        let got = sampler.post_topic_conditional(p);
        let want = oracle_conditional(&corpus, &state, &h, 2, |s, v| s.post_topic[p] = v);
        worst = worst.max(max_relative_error(&got, &want));
        checked += 2;
        let off = corpus.word_offset(p);
        for l in 0..corpus.posts()[p].tokens.len() {
            let got = sampler.word_foreground_conditional(p, l);
            let want = oracle_conditional(&corpus, &state, &h, 2, |s, v| s.foreground[off + l] = v == 1);
            worst = worst.max(max_relative_error(&got, &want));
            checked += 1;
        }
    }
    for e in 0..corpus.num_links() {
        let got = sampler.link_conditional(e);
        let want = oracle_conditional(&corpus, &state, &h, 4, |s, v| {
            s.link_source_community[e] = v / 2;
            s.link_target_community[e] = v % 2;
        });
        worst = worst.max(max_relative_error(&got, &want));
        checked += 1;
    }
    (worst, checked)
}
