//! Read-only analyses of fitted estimates: topic timelines, per-community
//! attention over time, user contribution scores and peak flagging.

use std::io::Write;

use crate::corpus::Corpus;
use crate::model::ModelEstimates;

/// `P(t|k) ∝ sum_c psi[k][c][t] * theta[c][k] * mean_i pi[i][c]`.
pub fn global_topic_dynamics(k: usize, est: &ModelEstimates) -> Vec<f64> {
    let mass = community_mass(est);
    let mut out = vec![0.0; est.slices()];
    for (c, &m) in mass.iter().enumerate() {
        let w = est.theta[c][k] * m;
        for (o, &p) in out.iter_mut().zip(&est.psi[k][c]) {
            *o += w * p;
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|o| *o /= total);
    }
    out
}

/// Mean membership of each community over users, every user weighted equally.
pub fn community_mass(est: &ModelEstimates) -> Vec<f64> {
    let mut mass = vec![0.0; est.communities()];
    if est.users() == 0 {
        return vec![1.0 / est.communities() as f64; est.communities()];
    }
    for row in &est.pi {
        for (m, &p) in mass.iter_mut().zip(row) {
            *m += p;
        }
    }
    mass.iter_mut().for_each(|m| *m /= est.users() as f64);
    mass
}

/// `P(k|t,c)` as a `[T][K]` matrix, each row normalized over topics.
pub fn community_topic_over_time(c: usize, est: &ModelEstimates) -> Vec<Vec<f64>> {
    (0..est.slices())
        .map(|t| {
            let row: Vec<f64> = (0..est.topics())
                .map(|k| est.psi[k][c][t] * est.theta[c][k])
                .collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|x| x / total).collect()
        })
        .collect()
}

/// `pi[i][c] * ln |posts of i|`; zero for users without posts.
pub fn user_contribution(user: usize, c: usize, est: &ModelEstimates, corpus: &Corpus) -> f64 {
    let n = corpus.posts_of(user).len();
    if n == 0 {
        return 0.0;
    }
    est.pi[user][c] * (n as f64).ln()
}

/// Users sorted by descending contribution to community `c`, ties by id.
pub fn contribution_ranking(c: usize, est: &ModelEstimates, corpus: &Corpus) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = (0..corpus.num_users())
        .map(|i| (i, user_contribution(i, c, est, corpus)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Strict local maxima whose z-score reaches `z_threshold`. A constant
/// series has no peaks.
pub fn detect_peaks(series: &[f64], z_threshold: f64) -> Vec<usize> {
    let n = series.len();
    if n < 3 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Vec::new();
    }
    (0..n)
        .filter(|&t| {
            let left = t == 0 || series[t] > series[t - 1];
            let right = t + 1 == n || series[t] > series[t + 1];
            left && right && (series[t] - mean) / sd >= z_threshold
        })
        .collect()
}

/// The `n` most probable words of topic `k`, ties broken by word id.
pub fn top_words(k: usize, n: usize, est: &ModelEstimates) -> Vec<(usize, f64)> {
    let mut words: Vec<(usize, f64)> = est.phi[k].iter().copied().enumerate().collect();
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    words.truncate(n);
    words
}

pub fn write_timeline_csv<W: Write>(series: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,prob")?;
    for (t, p) in series.iter().enumerate() {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

/// Long-format `topic,community,t,prob` for every (topic, community) timeline.
pub fn write_community_timelines_csv<W: Write>(est: &ModelEstimates, mut out: W) -> std::io::Result<()> {
    writeln!(out, "topic,community,t,prob")?;
    for (k, per_comm) in est.psi.iter().enumerate() {
        for (c, series) in per_comm.iter().enumerate() {
            for (t, p) in series.iter().enumerate() {
                writeln!(out, "{k},{c},{t},{p}")?;
            }
        }
    }
    Ok(())
}

/// `t,topic_0,...,topic_{K-1}` rows of `P(k|t,c)`, ready for a stacked area plot.
pub fn write_attention_csv<W: Write>(matrix: &[Vec<f64>], mut out: W) -> std::io::Result<()> {
    let k_n = matrix.first().map_or(0, Vec::len);
    write!(out, "t")?;
    for k in 0..k_n {
        write!(out, ",topic_{k}")?;
    }
    writeln!(out)?;
    for (t, row) in matrix.iter().enumerate() {
        write!(out, "{t}")?;
        for p in row {
            write!(out, ",{p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_contributions_csv<W: Write>(ranking: &[(usize, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "user,contribution")?;
    for (u, score) in ranking {
        writeln!(out, "{u},{score}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LinkSet, Post, Vocabulary};

    fn estimates(c: usize, k: usize, t: usize) -> ModelEstimates {
        ModelEstimates {
            pi: vec![vec![1.0 / c as f64; c]; 2],
            theta: vec![vec![1.0 / k as f64; k]; c],
            eta: vec![vec![0.5; c]; c],
            phi: vec![vec![0.25; 4]; k],
            phi_bg: vec![0.25; 4],
            psi: vec![vec![vec![1.0 / t as f64; t]; c]; k],
            chi: 0.5,
        }
    }

    #[test]
    fn single_community_dynamics_equal_psi() {
        let mut est = estimates(1, 2, 4);
        est.psi[1][0] = vec![0.1, 0.2, 0.3, 0.4];
        let d = global_topic_dynamics(1, &est);
        for (a, b) in d.iter().zip(&est.psi[1][0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_community_dynamics_example() {
        let mut est = estimates(2, 2, 2);
        est.theta = vec![vec![0.3, 0.7], vec![0.1, 0.9]];
        est.psi[0][0] = vec![1.0, 0.0];
        est.psi[0][1] = vec![0.0, 1.0];
        let d = global_topic_dynamics(0, &est);
        assert!((d[0] - 0.75).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12, "{d:?}");
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_normalized() {
        let mut est = estimates(1, 2, 2);
        est.psi[0][0] = vec![0.9, 0.1];
        est.psi[1][0] = vec![0.1, 0.9];
        let m = community_topic_over_time(0, &est);
        assert!((m[0][0] - 0.9).abs() < 1e-12 && (m[0][1] - 0.1).abs() < 1e-12);
        assert!(m.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));

        let single = community_topic_over_time(0, &estimates(2, 1, 3));
        assert!(single.iter().all(|r| r == &vec![1.0]));
    }

    fn corpus_with_posts(counts: &[usize]) -> Corpus {
        let posts = counts
            .iter()
            .enumerate()
            .flat_map(|(u, &n)| (0..n).map(move |_| Post { author: u, tokens: vec![], time_slice: 0 }))
            .collect();
        Corpus::new(posts, LinkSet::empty(counts.len()), Vocabulary::new(), counts.len(), None).unwrap()
    }

    #[test]
    fn contribution_examples() {
        let corpus = corpus_with_posts(&[1, 100]);
        let mut est = estimates(2, 1, 1);
        assert_eq!(user_contribution(0, 0, &est, &corpus), 0.0);
        est.pi[1] = vec![0.5, 0.5];
        assert!((user_contribution(1, 0, &est, &corpus) - 0.5 * 100f64.ln()).abs() < 1e-12);
        assert!((user_contribution(1, 0, &est, &corpus) - 2.30259).abs() < 1e-5);
        est.pi[1] = vec![0.0, 1.0];
        assert_eq!(user_contribution(1, 0, &est, &corpus), 0.0);

        let idle = corpus_with_posts(&[0, 3]);
        assert_eq!(user_contribution(0, 0, &estimates(2, 1, 1), &idle), 0.0);
        let ranking = contribution_ranking(1, &estimates(2, 1, 1), &idle);
        assert_eq!(ranking[0].0, 1);
    }

    #[test]
    fn peaks() {
        assert!(detect_peaks(&[0.2; 5], 0.0).is_empty());
        assert_eq!(detect_peaks(&[0.0, 0.0, 1.0, 0.0, 0.0], 1.0), [2]);
        assert_eq!(detect_peaks(&[0.0, 1.0, 0.0, 1.0, 0.0], 0.5), [1, 3]);
        assert!(detect_peaks(&[0.0, 0.0, 1.0, 0.0, 0.0], 2.5).is_empty());
    }

    #[test]
    fn top_words_order() {
        let mut est = estimates(1, 1, 1);
        est.phi[0] = vec![0.5, 0.3, 0.2];
        let top: Vec<usize> = top_words(0, 2, &est).into_iter().map(|w| w.0).collect();
        assert_eq!(top, [0, 1]);
        est.phi[0] = vec![0.2, 0.2, 0.6];
        let all: Vec<usize> = top_words(0, 3, &est).into_iter().map(|w| w.0).collect();
        assert_eq!(all, [2, 0, 1]);
    }

    #[test]
    fn attention_csv_header() {
        let mut buf = Vec::new();
        write_attention_csv(&[vec![0.25, 0.75]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,topic_0,topic_1\n0,0.25,0.75\n");
    }
}
