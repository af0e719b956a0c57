//! Users, time-stamped tokenized posts, directed follow links and the
//! vocabulary, plus the line-oriented text formats they are read from.
//!
//! Posts file: `user<TAB>time<TAB>tok tok ...`, one post per line.
//! Links file: `src<TAB>dst`, one directed edge per line.
//! Vocabulary file: one token per line, the line number is the id.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type WordId = u32;

#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    word_to_id: HashMap<String, WordId>,
    id_to_word: Vec<String>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.id_to_word == other.id_to_word
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary whose ids follow iteration order. Duplicate words
    /// are rejected.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for (line, w) in words.into_iter().enumerate() {
            let w = w.into();
            if vocab.id(&w).is_some() {
                return Err(Error::parse(line + 1, format!("duplicate vocabulary entry {w:?}")));
            }
            vocab.insert(w);
        }
        Ok(vocab)
    }

    /// Returns the id of `word`, adding it if absent.
    pub fn insert(&mut self, word: impl Into<String>) -> WordId {
        let word = word.into();
        if let Some(&id) = self.word_to_id.get(&word) {
            return id;
        }
        let id = self.id_to_word.len() as WordId;
        self.word_to_id.insert(word.clone(), id);
        self.id_to_word.push(word);
        id
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut words = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("vocabulary line {}", n + 1), e))?;
            let w = line.trim_end_matches('\r');
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::parse(n + 1, "vocabulary entries must be single non-empty tokens"));
            }
            words.push(w.to_string());
        }
        Self::from_words(words)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for w in &self.id_to_word {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub author: usize,
    pub tokens: Vec<WordId>,
    pub time_slice: usize,
}

/// Directed positive links, stored as sorted, de-duplicated adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkSet {
    out_links: Vec<Vec<usize>>,
}

impl LinkSet {
    pub fn empty(num_users: usize) -> Self {
        Self {
            out_links: vec![Vec::new(); num_users],
        }
    }

    /// Collapses duplicate pairs and drops self-links. Returns the link set
    /// and the number of self-links skipped.
    pub fn from_pairs<I>(num_users: usize, pairs: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut out_links = vec![Vec::new(); num_users];
        let mut self_links = 0;
        for (src, dst) in pairs {
            if src >= num_users || dst >= num_users {
                return Err(Error::Dimension(format!(
                    "link ({src}, {dst}) has an endpoint outside [0, {num_users})"
                )));
            }
            if src == dst {
                self_links += 1;
                continue;
            }
            out_links[src].push(dst);
        }
        for targets in &mut out_links {
            targets.sort_unstable();
            targets.dedup();
        }
        Ok((Self { out_links }, self_links))
    }

    pub fn num_users(&self) -> usize {
        self.out_links.len()
    }

    pub fn out_links(&self, user: usize) -> &[usize] {
        &self.out_links[user]
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.out_links
            .get(src)
            .is_some_and(|t| t.binary_search(&dst).is_ok())
    }

    pub fn len(&self) -> usize {
        self.out_links.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.out_links.iter().all(Vec::is_empty)
    }

    /// All edges, sources ascending then targets ascending.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_links
            .iter()
            .enumerate()
            .flat_map(|(src, t)| t.iter().map(move |&dst| (src, dst)))
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.out_links.len()];
        for (_, dst) in self.iter() {
            deg[dst] += 1;
        }
        deg
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (src, dst) in self.iter() {
            writeln!(out, "{src}\t{dst}")?;
        }
        Ok(())
    }
}

/// An immutable corpus. Posts are grouped by author (stable within an
/// author) so every user's posts form a contiguous range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    posts: Vec<Post>,
    links: LinkSet,
    vocabulary: Vocabulary,
    num_users: usize,
    num_slices: usize,
    user_offsets: Vec<usize>,
    word_offsets: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl Corpus {
    /// `num_slices` defaults to one past the largest time slice (at least 1);
    /// an explicit value must cover every post.
    pub fn new(
        mut posts: Vec<Post>,
        links: LinkSet,
        vocabulary: Vocabulary,
        num_users: usize,
        num_slices: Option<usize>,
    ) -> Result<Self> {
        if links.num_users() != num_users {
            return Err(Error::Dimension(format!(
                "link set covers {} users, corpus has {num_users}",
                links.num_users()
            )));
        }
        let v = vocabulary.len();
        let mut max_slice = None;
        for p in &posts {
            if p.author >= num_users {
                return Err(Error::Dimension(format!(
                    "post author {} outside [0, {num_users})",
                    p.author
                )));
            }
            if let Some(&w) = p.tokens.iter().find(|&&w| w as usize >= v) {
                return Err(Error::Dimension(format!("token id {w} outside vocabulary of size {v}")));
            }
            max_slice = max_slice.max(Some(p.time_slice));
        }
        let needed = max_slice.map_or(1, |m| m + 1);
        let num_slices = match num_slices {
            Some(t) if t < needed => {
                return Err(Error::Dimension(format!(
                    "{t} time slices configured but posts reach slice {}",
                    needed - 1
                )))
            }
            Some(t) => t,
            None => needed,
        };

        posts.sort_by_key(|p| p.author);
        let mut user_offsets = vec![0; num_users + 1];
        for p in &posts {
            user_offsets[p.author + 1] += 1;
        }
        for i in 0..num_users {
            user_offsets[i + 1] += user_offsets[i];
        }
        let mut word_offsets = Vec::with_capacity(posts.len() + 1);
        word_offsets.push(0);
        for p in &posts {
            word_offsets.push(word_offsets.last().unwrap() + p.tokens.len());
        }
        let edges = links.iter().collect();

        Ok(Self {
            posts,
            links,
            vocabulary,
            num_users,
            num_slices,
            user_offsets,
            word_offsets,
            edges,
        })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn posts_of(&self, user: usize) -> &[Post] {
        &self.posts[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// Range of global post indices belonging to `user`.
    pub fn post_range(&self, user: usize) -> std::ops::Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }

    pub fn links(&self) -> &LinkSet {
        &self.links
    }

    /// Edges in the canonical visitation order (sources then targets ascending).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_slices(&self) -> usize {
        self.num_slices
    }

    pub fn num_posts(&self) -> usize {
        self.posts.len()
    }

    pub fn num_words(&self) -> usize {
        *self.word_offsets.last().unwrap()
    }

    pub fn num_links(&self) -> usize {
        self.edges.len()
    }

    /// Index of the first token of post `p` in the flattened token order.
    pub fn word_offset(&self, post: usize) -> usize {
        self.word_offsets[post]
    }

    /// Number of ordered non-self user pairs without a link.
    pub fn num_negative_links(&self) -> u64 {
        let u = self.num_users as u64;
        (u * u.saturating_sub(1)).saturating_sub(self.num_links() as u64)
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            users: self.num_users,
            slices: self.num_slices,
            vocabulary: self.vocabulary.len(),
            posts: self.num_posts(),
            words: self.num_words(),
            links: self.num_links(),
        }
    }

    /// Drops users with fewer than `min_posts` posts and renumbers the rest
    /// densely. Returns the new corpus and the old-to-new id map.
    pub fn retain_active_users(&self, min_posts: usize) -> Result<(Corpus, Vec<Option<usize>>)> {
        let mut remap = vec![None; self.num_users];
        let mut next = 0;
        for (user, slot) in remap.iter_mut().enumerate() {
            if self.posts_of(user).len() >= min_posts {
                *slot = Some(next);
                next += 1;
            }
        }
        let posts = self
            .posts
            .iter()
            .filter_map(|p| {
                remap[p.author].map(|author| Post {
                    author,
                    tokens: p.tokens.clone(),
                    time_slice: p.time_slice,
                })
            })
            .collect();
        let pairs = self
            .edges
            .iter()
            .filter_map(|&(s, d)| Some((remap[s]?, remap[d]?)));
        let (links, _) = LinkSet::from_pairs(next, pairs)?;
        let corpus = Corpus::new(posts, links, self.vocabulary.clone(), next, Some(self.num_slices))?;
        Ok((corpus, remap))
    }

    pub fn write_posts<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.posts {
            write!(out, "{}\t{}\t", p.author, p.time_slice)?;
            for (n, &w) in p.tokens.iter().enumerate() {
                if n > 0 {
                    out.write_all(b" ")?;
                }
                out.write_all(self.vocabulary.id_to_word[w as usize].as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub users: usize,
    pub slices: usize,
    pub vocabulary: usize,
    pub posts: usize,
    pub words: usize,
    pub links: usize,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "U={}", self.users)?;
        writeln!(f, "T={}", self.slices)?;
        writeln!(f, "V={}", self.vocabulary)?;
        writeln!(f, "posts={}", self.posts)?;
        writeln!(f, "words={}", self.words)?;
        write!(f, "links={}", self.links)
    }
}

pub enum VocabPolicy {
    /// Build the vocabulary from the stream, ids in order of first appearance.
    Build,
    /// Keep a given vocabulary; unknown tokens are dropped.
    Fixed(Vocabulary),
}

/// Posts as parsed; `time_slice` still holds the raw time value.
#[derive(Debug, Clone)]
pub struct IngestedPosts {
    pub posts: Vec<Post>,
    pub vocabulary: Vocabulary,
    /// Token occurrences removed, either below `min_word_count` or unknown
    /// to a fixed vocabulary.
    pub dropped_tokens: usize,
}

struct RawPost<'a> {
    author: usize,
    time: usize,
    tokens: Vec<&'a str>,
}

fn parse_post_line(line: &str, n: usize) -> Result<RawPost<'_>> {
    let mut fields = line.splitn(3, '\t');
    let author = fields
        .next()
        .unwrap_or_default()
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::parse(n, format!("bad user id: {e}")))?;
    let time = fields
        .next()
        .ok_or_else(|| Error::parse(n, "missing time field"))?
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::parse(n, format!("bad time stamp: {e}")))?;
    let tokens = fields.next().unwrap_or("").split_whitespace().collect();
    Ok(RawPost { author, time, tokens })
}

pub fn ingest_posts<R: BufRead>(
    reader: R,
    policy: VocabPolicy,
    min_word_count: usize,
) -> Result<IngestedPosts> {
    let mut lines = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("posts line {}", n + 1), e))?;
        lines.push(line);
    }
    let mut raw = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        raw.push(parse_post_line(line, n + 1)?);
    }

    let vocabulary = match policy {
        VocabPolicy::Fixed(v) => v,
        VocabPolicy::Build => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for p in &raw {
                for t in &p.tokens {
                    *counts.entry(t).or_default() += 1;
                }
            }
            let mut vocab = Vocabulary::new();
            for p in &raw {
                for t in &p.tokens {
                    if counts[t] >= min_word_count {
                        vocab.insert(*t);
                    }
                }
            }
            vocab
        }
    };

    let mut dropped_tokens = 0;
    let posts = raw
        .into_iter()
        .map(|p| {
            let tokens: Vec<WordId> = p.tokens.iter().filter_map(|t| vocabulary.id(t)).collect();
            dropped_tokens += p.tokens.len() - tokens.len();
            Post {
                author: p.author,
                tokens,
                time_slice: p.time,
            }
        })
        .collect();
    Ok(IngestedPosts {
        posts,
        vocabulary,
        dropped_tokens,
    })
}

/// Parses `src<TAB>dst` lines without range checks.
pub fn parse_link_pairs<R: BufRead>(reader: R) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("links line {}", n + 1), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let mut endpoint = |what: &str| -> Result<usize> {
            fields
                .next()
                .ok_or_else(|| Error::parse(n + 1, format!("missing {what} user")))?
                .trim()
                .parse()
                .map_err(|e| Error::parse(n + 1, format!("bad {what} user: {e}")))
        };
        let src = endpoint("source")?;
        let dst = endpoint("target")?;
        pairs.push((src, dst));
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct IngestedLinks {
    pub links: LinkSet,
    pub self_links_skipped: usize,
}

pub fn ingest_links<R: BufRead>(reader: R, num_users: usize) -> Result<IngestedLinks> {
    let pairs = parse_link_pairs(reader)?;
    let (links, self_links_skipped) = LinkSet::from_pairs(num_users, pairs)?;
    Ok(IngestedLinks {
        links,
        self_links_skipped,
    })
}

/// `floor((raw - min(raw)) / slice_width)` for every raw time.
pub fn discretize_time(raw_times: &[u64], slice_width: u64) -> Result<Vec<usize>> {
    if slice_width == 0 {
        return Err(Error::InvalidArgument("slice width must be at least 1".into()));
    }
    let Some(&min) = raw_times.iter().min() else {
        return Ok(Vec::new());
    };
    Ok(raw_times
        .iter()
        .map(|&t| ((t - min) / slice_width) as usize)
        .collect())
}
