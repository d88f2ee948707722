//! Vocabulary construction and the negative-sampling noise distribution.
//!
//! All token kinds count: hashtags, mentions and emoticons are vocabulary
//! entries like any word. Tokens seen fewer than `min_count` times are
//! dropped. Entries are ordered by descending count, ties broken by the
//! surface string, and a token's index is its position in that order.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::tokenize::Token;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    total_tokens: u64,
}

impl Vocabulary {
    fn from_sorted(words: Vec<String>, counts: Vec<u64>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let total_tokens = counts.iter().sum();
        Vocabulary { words, counts, index, total_tokens }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    /// Sum of the retained entries' counts.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Map a token stream to vocabulary indices, dropping out-of-vocabulary
    /// tokens.
    pub fn to_indices(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index_of(&t.surface)).collect()
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        let mut w = artifact::create_writer(path)?;
        let io_err = |e| Error::io(path, e);
        writeln!(w, "{}", header.line()).map_err(io_err)?;
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{count}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load_from<R: BufRead>(mut reader: R, source: &Path) -> Result<(Option<ArtifactHeader>, Self)> {
        let mut line_no = 0usize;
        let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
        let mut words: Vec<String> = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut handle = |line: String, line_no: usize| -> Result<()> {
            if line.is_empty() {
                return Ok(());
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, line_no, "expected word<TAB>count"))?;
            if word.is_empty() {
                return Err(Error::parse(source, line_no, "empty word"));
            }
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad count `{count}`")))?;
            if count == 0 {
                return Err(Error::parse(source, line_no, "zero count"));
            }
            if let Some(prev) = counts.last() {
                let ordered = *prev > count
                    || (*prev == count && words.last().map(String::as_str) < Some(word));
                if !ordered {
                    return Err(Error::parse(
                        source,
                        line_no,
                        "vocabulary not in descending-count order",
                    ));
                }
            }
            words.push(word.to_string());
            counts.push(count);
            Ok(())
        };
        if let Some(first) = leftover {
            handle(first, line_no)?;
        }
        for line in reader.lines() {
            line_no += 1;
            handle(line.map_err(|e| Error::io(source, e))?, line_no)?;
        }
        Ok((header, Vocabulary::from_sorted(words, counts)))
    }

    pub fn load(path: &Path) -> Result<(Option<ArtifactHeader>, Self)> {
        Self::load_from(artifact::open_reader(path)?, path)
    }
}

pub fn build_vocabulary<'a>(
    token_streams: impl IntoIterator<Item = &'a [Token]>,
    min_count: u64,
) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for stream in token_streams {
        for token in stream {
            *counts.entry(token.surface.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, u64)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let words = entries.iter().map(|(w, _)| w.to_string()).collect();
    let counts = entries.iter().map(|&(_, c)| c).collect();
    Vocabulary::from_sorted(words, counts)
}

/// Unigram noise distribution with counts raised to the 3/4 power, sampled
/// in O(1) through a Vose alias table.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    alias_prob: Vec<f64>,
    alias: Vec<usize>,
}

impl NoiseDistribution {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidInput(
                "cannot build a noise distribution over an empty vocabulary".into(),
            ));
        }
        let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

        let n = probs.len();
        let mut alias_prob = vec![0.0; n];
        let mut alias = vec![0usize; n];
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        for i in 0..n {
            if scaled[i] < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            large.pop();
            alias_prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for &l in &large {
            alias_prob[l] = 1.0;
        }
        for &s in &small {
            // only reachable through rounding; treat as full
            alias_prob[s] = 1.0;
        }
        Ok(NoiseDistribution { probs, alias_prob, alias })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.probs.len());
        if rng.random::<f64>() < self.alias_prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Draw a noise index distinct from `exclude`; draws that hit the
    /// target are rejected and redrawn. Needs at least two entries.
    pub fn sample_negative<R: Rng>(&self, exclude: usize, rng: &mut R) -> usize {
        assert!(self.probs.len() >= 2, "negative sampling needs a vocabulary of at least 2");
        loop {
            let i = self.sample(rng);
            if i != exclude {
                return i;
            }
        }
    }
}
